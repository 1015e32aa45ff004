//! Desk-scale surrogate speech-translation model.
//!
//! Pipeline: non-overlapping frames → log band energies on a fixed grid →
//! one tanh layer per frame → mean-pooled context → decoder with token,
//! language and position embeddings, one tanh hidden layer and a vocabulary
//! projection. All gradients are written out by hand.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use realfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use super::corpus::{CorpusConfig, CorpusSentence};
use super::{
    argmax, greedy_decode, log_softmax, softmax, Capabilities, EncoderFeatures, SpeechTranslator,
    TokenId, TokenSequence, Vocabulary,
};
use crate::audio::spectral;
use crate::error::{Error, Result};
use crate::optim::Optimizer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateArch {
    pub frame_samples: usize,
    pub band_width_hz: f64,
    pub log_floor: f64,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub max_positions: usize,
}

impl Default for SurrogateArch {
    fn default() -> Self {
        Self {
            frame_samples: 256,
            band_width_hz: 250.0,
            log_floor: 1e-6,
            encoder_hidden: 32,
            decoder_hidden: 64,
            max_positions: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default = "tc_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "tc_lr")]
    pub learning_rate: f64,
    /// Noisy, gain-scaled copies added per clean sentence.
    #[serde(default = "tc_aug")]
    pub augmentations: usize,
    #[serde(default = "tc_noise")]
    pub noise_std_max: f64,
    #[serde(default = "tc_gain")]
    pub gain_range: [f64; 2],
    /// Required greedy exact-match rate on the clean corpus.
    #[serde(default = "tc_match")]
    pub target_exact_match: f64,
    /// Training also continues until the mean per-token loss drops below this.
    #[serde(default = "tc_tol")]
    pub loss_tolerance: f64,
    #[serde(default = "tc_check")]
    pub check_every: usize,
}

fn tc_max_epochs() -> usize {
    3000
}
fn tc_lr() -> f64 {
    0.01
}
fn tc_aug() -> usize {
    3
}
fn tc_noise() -> f64 {
    0.01
}
fn tc_gain() -> [f64; 2] {
    [0.6, 1.2]
}
fn tc_match() -> f64 {
    0.9
}
fn tc_tol() -> f64 {
    0.02
}
fn tc_check() -> usize {
    25
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            max_epochs: tc_max_epochs(),
            learning_rate: tc_lr(),
            augmentations: tc_aug(),
            noise_std_max: tc_noise(),
            gain_range: tc_gain(),
            target_exact_match: tc_match(),
            loss_tolerance: tc_tol(),
            check_every: tc_check(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub seed: u64,
    pub epochs: usize,
    pub final_loss: f64,
    pub exact_match_rate: f64,
    pub corpus_sentences: usize,
}

/// Offsets of each tensor inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    bands: usize,
    enc_hidden: usize,
    dec_hidden: usize,
    vocab: usize,
    langs: usize,
    positions: usize,
    enc_w: usize,
    enc_b: usize,
    ctx_w: usize,
    tok: usize,
    lang: usize,
    pos: usize,
    dec_b: usize,
    out_w: usize,
    out_b: usize,
    total: usize,
}

impl Layout {
    fn new(bands: usize, arch: &SurrogateArch, vocab: usize, langs: usize) -> Self {
        let he = arch.encoder_hidden;
        let hd = arch.decoder_hidden;
        let d = bands + he;
        let mut off = 0;
        let mut take = |n: usize| {
            let o = off;
            off += n;
            o
        };
        let enc_w = take(he * bands);
        let enc_b = take(he);
        let ctx_w = take(hd * d);
        let tok = take(vocab * hd);
        let lang = take(langs * hd);
        let pos = take(arch.max_positions * hd);
        let dec_b = take(hd);
        let out_w = take(vocab * hd);
        let out_b = take(vocab);
        Self {
            bands,
            enc_hidden: he,
            dec_hidden: hd,
            vocab,
            langs,
            positions: arch.max_positions,
            enc_w,
            enc_b,
            ctx_w,
            tok,
            lang,
            pos,
            dec_b,
            out_w,
            out_b,
            total: off,
        }
    }

    fn feature_dim(&self) -> usize {
        self.bands + self.enc_hidden
    }
}

/// Per-frame featurizer output kept for the backward pass.
struct FrameFeatures {
    spectrum: Vec<Complex<f64>>,
    energies: Vec<f64>,
    features: Vec<f64>,
}

pub struct SurrogateModel {
    arch: SurrogateArch,
    corpus: CorpusConfig,
    vocab: Vocabulary,
    lang_index: BTreeMap<TokenId, usize>,
    layout: Layout,
    params: Vec<f64>,
    bin_band: Vec<usize>,
    bin_weight: Vec<f64>,
    training: Option<TrainingSummary>,
}

impl std::fmt::Debug for SurrogateModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SurrogateModel")
            .field("arch", &self.arch)
            .field("vocab", &self.vocab.len())
            .field("params", &self.params.len())
            .finish()
    }
}

/// Train the surrogate on the synthetic corpus with default settings.
pub fn train_surrogate(corpus: &CorpusConfig, seed: u64) -> Result<SurrogateModel> {
    SurrogateModel::train(corpus, &SurrogateArch::default(), &TrainingConfig::default(), seed)
}

impl SurrogateModel {
    /// Untrained model with seeded random initialization.
    pub fn initialize(corpus: &CorpusConfig, arch: &SurrogateArch, seed: u64) -> Result<Self> {
        corpus.validate()?;
        if arch.frame_samples < 4 || !arch.frame_samples.is_multiple_of(2) {
            return Err(Error::config("frame_samples must be even and at least 4"));
        }
        if !(arch.band_width_hz > 0.0) || !(arch.log_floor > 0.0 && arch.log_floor < 1.0) {
            return Err(Error::config("band width must be positive and log floor in (0, 1)"));
        }
        if arch.encoder_hidden == 0 || arch.decoder_hidden == 0 || arch.max_positions == 0 {
            return Err(Error::config("layer sizes must be positive"));
        }
        let vocab = Vocabulary::new(&corpus.language_ids(), corpus.all_words())?;
        let lang_index: BTreeMap<TokenId, usize> = vocab
            .languages()
            .enumerate()
            .map(|(i, l)| (vocab.language_token(l).unwrap(), i))
            .collect();
        let nyquist = corpus.sample_rate_hz as f64 / 2.0;
        let bands = (nyquist / arch.band_width_hz).floor() as usize + 1;
        let layout = Layout::new(bands, arch, vocab.len(), lang_index.len());

        let n = arch.frame_samples;
        let bin_band: Vec<usize> = (0..=n / 2)
            .map(|k| {
                let f = spectral::bin_frequency(k, n, corpus.sample_rate_hz);
                ((f / arch.band_width_hz).round() as usize).min(bands - 1)
            })
            .collect();
        let bin_weight: Vec<f64> = (0..=n / 2)
            .map(|k| {
                let c = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
                c / (n * n) as f64
            })
            .collect();

        let mut model = Self {
            arch: arch.clone(),
            corpus: corpus.clone(),
            vocab,
            lang_index,
            layout,
            params: vec![0.0; layout.total],
            bin_band,
            bin_weight,
            training: None,
        };
        model.init_params(seed);
        Ok(model)
    }

    fn init_params(&mut self, seed: u64) {
        let l = self.layout;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |p: &mut [f64], scale: f64| {
            for v in p.iter_mut() {
                *v = rng.random_range(-scale..scale);
            }
        };
        let xavier = |fi: usize, fo: usize| (6.0 / (fi + fo) as f64).sqrt();
        let p = &mut self.params;
        fill(&mut p[l.enc_w..l.enc_b], xavier(l.bands, l.enc_hidden));
        fill(&mut p[l.ctx_w..l.tok], xavier(l.feature_dim(), l.dec_hidden));
        fill(&mut p[l.tok..l.lang], 0.1);
        fill(&mut p[l.lang..l.pos], 0.1);
        fill(&mut p[l.pos..l.dec_b], 0.1);
        fill(&mut p[l.out_w..l.out_b], xavier(l.dec_hidden, l.vocab));
    }

    pub fn arch(&self) -> &SurrogateArch {
        &self.arch
    }

    pub fn corpus(&self) -> &CorpusConfig {
        &self.corpus
    }

    pub fn training_summary(&self) -> Option<&TrainingSummary> {
        self.training.as_ref()
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    pub fn band_count(&self) -> usize {
        self.layout.bands
    }

    /// Band index whose center is nearest to `freq_hz`.
    pub fn band_of(&self, freq_hz: f64) -> usize {
        ((freq_hz / self.arch.band_width_hz).round() as usize).min(self.layout.bands - 1)
    }

    pub(crate) fn from_parts(
        corpus: CorpusConfig,
        arch: SurrogateArch,
        params: Vec<f64>,
        training: Option<TrainingSummary>,
    ) -> Result<Self> {
        let mut m = Self::initialize(&corpus, &arch, 0)?;
        if params.len() != m.params.len() {
            return Err(Error::invalid(format!(
                "checkpoint has {} parameters, architecture needs {}",
                params.len(),
                m.params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("checkpoint contains non-finite parameters"));
        }
        m.params = params;
        m.training = training;
        Ok(m)
    }

    fn frame_count(&self, len: usize) -> usize {
        len.div_ceil(self.arch.frame_samples)
    }

    fn frame(&self, samples: &[f64], f: usize) -> Vec<f64> {
        let n = self.arch.frame_samples;
        let start = f * n;
        let end = (start + n).min(samples.len());
        let mut frame = samples[start..end].to_vec();
        frame.resize(n, 0.0);
        frame
    }

    fn featurize_frame(&self, frame: &[f64]) -> FrameFeatures {
        let spectrum = spectral::rfft(frame);
        let mut energies = vec![0.0; self.layout.bands];
        for (k, x) in spectrum.iter().enumerate() {
            energies[self.bin_band[k]] += self.bin_weight[k] * x.norm_sqr();
        }
        let scale = -self.arch.log_floor.ln();
        let features = energies
            .iter()
            .map(|e| (e + self.arch.log_floor).ln() / scale + 1.0)
            .collect();
        FrameFeatures {
            spectrum,
            energies,
            features,
        }
    }

    /// Log band energies per frame, before the learned encoder layer.
    pub fn band_features(&self, samples: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_len(samples)?;
        Ok((0..self.frame_count(samples.len()))
            .map(|f| self.featurize_frame(&self.frame(samples, f)).features)
            .collect())
    }

    fn check_len(&self, samples: &[f64]) -> Result<()> {
        if samples.len() < self.arch.frame_samples {
            return Err(Error::invalid(format!(
                "input has {} samples, at least one frame of {} is required",
                samples.len(),
                self.arch.frame_samples
            )));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(())
    }

    fn encode_frame(&self, band: &[f64], out: &mut Vec<f64>) {
        let l = self.layout;
        let p = &self.params;
        out.clear();
        out.extend_from_slice(band);
        for j in 0..l.enc_hidden {
            let row = &p[l.enc_w + j * l.bands..l.enc_w + (j + 1) * l.bands];
            let z: f64 = p[l.enc_b + j] + row.iter().zip(band).map(|(w, x)| w * x).sum::<f64>();
            out.push(z.tanh());
        }
    }

    fn context(&self, h: &EncoderFeatures) -> Vec<f64> {
        let d = self.layout.feature_dim();
        let mut c = vec![0.0; d];
        for v in &h.vectors {
            for (ci, vi) in c.iter_mut().zip(v) {
                *ci += vi;
            }
        }
        let inv = 1.0 / h.vectors.len() as f64;
        c.iter_mut().for_each(|v| *v *= inv);
        c
    }

    fn context_projection(&self, c: &[f64]) -> Vec<f64> {
        let l = self.layout;
        let d = l.feature_dim();
        (0..l.dec_hidden)
            .map(|j| {
                let row = &self.params[l.ctx_w + j * d..l.ctx_w + (j + 1) * d];
                row.iter().zip(c).map(|(w, x)| w * x).sum()
            })
            .collect()
    }

    fn step_indices(&self, prefix: &[TokenId]) -> Result<(usize, usize, usize)> {
        if prefix.len() < 2 {
            return Err(Error::invalid("prefix must contain BOS and a language token"));
        }
        let lang = *self
            .lang_index
            .get(&prefix[1])
            .ok_or_else(|| Error::invalid("second prefix token is not a language token"))?;
        let prev = *prefix.last().unwrap() as usize;
        if prev >= self.layout.vocab {
            return Err(Error::invalid(format!("token id {prev} outside the vocabulary")));
        }
        let pos = (prefix.len() - 2).min(self.layout.positions - 1);
        Ok((prev, lang, pos))
    }

    /// Hidden activations and logits for one decoder step.
    fn decoder_step(&self, ctx_proj: &[f64], prefix: &[TokenId]) -> Result<(Vec<f64>, Vec<f64>)> {
        let l = self.layout;
        let hd = l.dec_hidden;
        let p = &self.params;
        let (prev, lang, pos) = self.step_indices(prefix)?;
        let hidden: Vec<f64> = (0..hd)
            .map(|j| {
                (ctx_proj[j]
                    + p[l.tok + prev * hd + j]
                    + p[l.lang + lang * hd + j]
                    + p[l.pos + pos * hd + j]
                    + p[l.dec_b + j])
                    .tanh()
            })
            .collect();
        let logits = (0..l.vocab)
            .map(|k| {
                let row = &p[l.out_w + k * hd..l.out_w + (k + 1) * hd];
                p[l.out_b + k] + row.iter().zip(&hidden).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect();
        Ok((hidden, logits))
    }

    /// Backprop from logits to the pre-activation of the hidden layer.
    fn hidden_grad(&self, hidden: &[f64], grad_logits: &[f64]) -> Vec<f64> {
        let l = self.layout;
        let hd = l.dec_hidden;
        let mut g = vec![0.0; hd];
        for (k, gl) in grad_logits.iter().enumerate() {
            if *gl == 0.0 {
                continue;
            }
            let row = &self.params[l.out_w + k * hd..l.out_w + (k + 1) * hd];
            for (gj, w) in g.iter_mut().zip(row) {
                *gj += gl * w;
            }
        }
        for (gj, h) in g.iter_mut().zip(hidden) {
            *gj *= 1.0 - h * h;
        }
        g
    }

    /// Text-to-text translation through the corpus lexicon.
    pub fn translate_lexicon(&self, text: &str, source: &str, target: &str) -> Result<String> {
        let meaning = self.corpus.parse(text, source)?;
        self.corpus.translate(&meaning, target)
    }

    /// Train from scratch on `corpus.build(seed)`.
    pub fn train(
        corpus: &CorpusConfig,
        arch: &SurrogateArch,
        cfg: &TrainingConfig,
        seed: u64,
    ) -> Result<Self> {
        if cfg.max_epochs == 0 || cfg.check_every == 0 || !(cfg.learning_rate > 0.0) {
            return Err(Error::config("training needs positive epochs, check interval and learning rate"));
        }
        let mut model = Self::initialize(corpus, arch, seed)?;
        let sentences = corpus.build(seed)?;
        let examples = model.training_examples(&sentences, cfg, seed)?;
        let mut opt = Optimizer::adam(cfg.learning_rate, model.params.len());
        let mut grad = vec![0.0; model.params.len()];
        let mut last_loss = f64::INFINITY;
        let mut last_rate = 0.0;
        for epoch in 1..=cfg.max_epochs {
            grad.iter_mut().for_each(|g| *g = 0.0);
            last_loss = model.accumulate_batch(&examples, &mut grad);
            if !last_loss.is_finite() {
                return Err(Error::TrainingFailure(format!(
                    "loss became non-finite at epoch {epoch}"
                )));
            }
            opt.step(&mut model.params, &grad);
            if epoch % cfg.check_every == 0 || epoch == cfg.max_epochs {
                last_rate = model.exact_match_rate(&sentences)?;
                if last_rate >= cfg.target_exact_match && last_loss <= cfg.loss_tolerance {
                    model.training = Some(TrainingSummary {
                        seed,
                        epochs: epoch,
                        final_loss: last_loss,
                        exact_match_rate: last_rate,
                        corpus_sentences: sentences.len(),
                    });
                    return Ok(model);
                }
            }
        }
        if last_rate >= cfg.target_exact_match {
            model.training = Some(TrainingSummary {
                seed,
                epochs: cfg.max_epochs,
                final_loss: last_loss,
                exact_match_rate: last_rate,
                corpus_sentences: sentences.len(),
            });
            return Ok(model);
        }
        Err(Error::TrainingFailure(format!(
            "after {} epochs: exact-match rate {last_rate:.3} (< {}), mean token loss {last_loss:.4}",
            cfg.max_epochs, cfg.target_exact_match
        )))
    }

    /// Greedy exact-match rate over every (sentence, language) pair.
    pub fn exact_match_rate(&self, sentences: &[CorpusSentence]) -> Result<f64> {
        let mut hits = 0usize;
        let mut total = 0usize;
        for s in sentences {
            let h = self.encode_samples(s.audio.samples())?;
            for (lang, text) in &s.translations {
                let target = self.vocab.encode_target(lang, text)?;
                let d = greedy_decode(self, &h, lang, target.len() + 2)?;
                hits += usize::from(d.ids == target.ids);
                total += 1;
            }
        }
        Ok(hits as f64 / total.max(1) as f64)
    }

    fn training_examples(
        &self,
        sentences: &[CorpusSentence],
        cfg: &TrainingConfig,
        seed: u64,
    ) -> Result<Vec<TrainingExample>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a11c_e000_0001);
        let mut out = Vec::new();
        for s in sentences {
            let targets: Vec<Vec<TokenId>> = s
                .translations
                .iter()
                .map(|(lang, text)| Ok(self.vocab.encode_target(lang, text)?.ids))
                .collect::<Result<_>>()?;
            let clean = s.audio.samples().to_vec();
            let mut variants = vec![clean.clone()];
            for _ in 0..cfg.augmentations {
                let gain = rng.random_range(cfg.gain_range[0]..=cfg.gain_range[1]);
                let std = rng.random_range(0.0..=cfg.noise_std_max);
                variants.push(
                    clean
                        .iter()
                        .map(|x| {
                            let n: f64 = StandardNormal.sample(&mut rng);
                            gain * x + std * n
                        })
                        .collect(),
                );
            }
            for v in variants {
                out.push(TrainingExample {
                    bands: self.band_features(&v)?,
                    targets: targets.clone(),
                });
            }
        }
        Ok(out)
    }

    /// Full-batch teacher-forced cross-entropy; returns the mean token loss
    /// and adds its gradient into `grad`.
    fn accumulate_batch(&self, examples: &[TrainingExample], grad: &mut [f64]) -> f64 {
        let l = self.layout;
        let hd = l.dec_hidden;
        let d = l.feature_dim();
        let tokens: usize = examples
            .iter()
            .map(|e| e.targets.iter().map(|t| t.len() - 2).sum::<usize>())
            .sum();
        let norm = 1.0 / tokens as f64;
        let mut total = 0.0;
        let mut frame_vec = Vec::with_capacity(d);
        for ex in examples {
            let frames: Vec<Vec<f64>> = ex
                .bands
                .iter()
                .map(|b| {
                    self.encode_frame(b, &mut frame_vec);
                    frame_vec.clone()
                })
                .collect();
            let h = EncoderFeatures {
                vectors: frames,
                gradient_capable: true,
            };
            let c = self.context(&h);
            let proj = self.context_projection(&c);
            let mut g_proj = vec![0.0; hd];
            for target in &ex.targets {
                for m in 2..target.len() {
                    let prefix = &target[..m];
                    let (hidden, logits) = self.decoder_step(&proj, prefix).expect("well-formed");
                    let tgt = target[m] as usize;
                    let lsm = log_softmax(&logits);
                    total -= lsm[tgt];
                    let mut gl: Vec<f64> = lsm.iter().map(|v| v.exp() * norm).collect();
                    gl[tgt] -= norm;
                    for (k, g) in gl.iter().enumerate() {
                        grad[l.out_b + k] += g;
                        let row = &mut grad[l.out_w + k * hd..l.out_w + (k + 1) * hd];
                        for (r, hv) in row.iter_mut().zip(&hidden) {
                            *r += g * hv;
                        }
                    }
                    let ga = self.hidden_grad(&hidden, &gl);
                    let (prev, lang, pos) = self.step_indices(prefix).expect("well-formed");
                    for j in 0..hd {
                        grad[l.tok + prev * hd + j] += ga[j];
                        grad[l.lang + lang * hd + j] += ga[j];
                        grad[l.pos + pos * hd + j] += ga[j];
                        grad[l.dec_b + j] += ga[j];
                        g_proj[j] += ga[j];
                    }
                }
            }
            // context projection and encoder layer
            let mut g_c = vec![0.0; d];
            for j in 0..hd {
                let row_off = l.ctx_w + j * d;
                for i in 0..d {
                    grad[row_off + i] += g_proj[j] * c[i];
                    g_c[i] += g_proj[j] * self.params[row_off + i];
                }
            }
            let inv_f = 1.0 / h.vectors.len() as f64;
            for (band, v) in ex.bands.iter().zip(&h.vectors) {
                for j in 0..l.enc_hidden {
                    let e = v[l.bands + j];
                    let ge = g_c[l.bands + j] * inv_f * (1.0 - e * e);
                    grad[l.enc_b + j] += ge;
                    let row = &mut grad[l.enc_w + j * l.bands..l.enc_w + (j + 1) * l.bands];
                    for (r, x) in row.iter_mut().zip(band) {
                        *r += ge * x;
                    }
                }
            }
        }
        total * norm
    }

    /// Probability of each vocabulary entry at the next step.
    pub fn next_token_distribution(&self, h: &EncoderFeatures, prefix: &[TokenId]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(h, prefix)?))
    }

    /// Greedy prediction of the next token.
    pub fn predict_next(&self, h: &EncoderFeatures, prefix: &TokenSequence) -> Result<TokenId> {
        Ok(argmax(&self.logits(h, &prefix.ids)?) as TokenId)
    }
}

struct TrainingExample {
    bands: Vec<Vec<f64>>,
    targets: Vec<Vec<TokenId>>,
}

impl SpeechTranslator for SurrogateModel {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn sample_rate_hz(&self) -> u32 {
        self.corpus.sample_rate_hz
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            gradient_available: true,
            text_to_text_available: true,
        }
    }

    fn encode_samples(&self, samples: &[f64]) -> Result<EncoderFeatures> {
        self.check_len(samples)?;
        let mut buf = Vec::with_capacity(self.layout.feature_dim());
        let vectors = (0..self.frame_count(samples.len()))
            .map(|f| {
                let ff = self.featurize_frame(&self.frame(samples, f));
                self.encode_frame(&ff.features, &mut buf);
                buf.clone()
            })
            .collect();
        Ok(EncoderFeatures {
            vectors,
            gradient_capable: true,
        })
    }

    fn logits(&self, features: &EncoderFeatures, prefix: &[TokenId]) -> Result<Vec<f64>> {
        if features.vectors.is_empty() || features.dim() != self.layout.feature_dim() {
            return Err(Error::invalid("encoder features do not match the model"));
        }
        let c = self.context(features);
        let proj = self.context_projection(&c);
        Ok(self.decoder_step(&proj, prefix)?.1)
    }

    fn logits_vjp(
        &self,
        features: &EncoderFeatures,
        prefix: &[TokenId],
        grad_logits: &[f64],
        grad_features: &mut [Vec<f64>],
    ) -> Result<()> {
        let l = self.layout;
        let d = l.feature_dim();
        let c = self.context(features);
        let proj = self.context_projection(&c);
        let (hidden, _) = self.decoder_step(&proj, prefix)?;
        let ga = self.hidden_grad(&hidden, grad_logits);
        let mut g_c = vec![0.0; d];
        for (j, gaj) in ga.iter().enumerate() {
            let row = &self.params[l.ctx_w + j * d..l.ctx_w + (j + 1) * d];
            for (gc, w) in g_c.iter_mut().zip(row) {
                *gc += gaj * w;
            }
        }
        let inv_f = 1.0 / features.vectors.len() as f64;
        for gf in grad_features.iter_mut() {
            for (g, gc) in gf.iter_mut().zip(&g_c) {
                *g += gc * inv_f;
            }
        }
        Ok(())
    }

    fn encode_vjp(&self, samples: &[f64], grad_features: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.check_len(samples)?;
        let l = self.layout;
        let n = self.arch.frame_samples;
        let frames = self.frame_count(samples.len());
        if grad_features.len() != frames {
            return Err(Error::invalid("gradient frame count does not match the input"));
        }
        let scale = -self.arch.log_floor.ln();
        let mut out = vec![0.0; samples.len()];
        let mut buf = Vec::new();
        for (f, gv) in grad_features.iter().enumerate() {
            let ff = self.featurize_frame(&self.frame(samples, f));
            self.encode_frame(&ff.features, &mut buf);
            // through the tanh layer back to the band features
            let mut g_band = gv[..l.bands].to_vec();
            for j in 0..l.enc_hidden {
                let e = buf[l.bands + j];
                let ge = gv[l.bands + j] * (1.0 - e * e);
                if ge == 0.0 {
                    continue;
                }
                let row = &self.params[l.enc_w + j * l.bands..l.enc_w + (j + 1) * l.bands];
                for (gb, w) in g_band.iter_mut().zip(row) {
                    *gb += ge * w;
                }
            }
            // log compression
            let g_energy: Vec<f64> = g_band
                .iter()
                .zip(&ff.energies)
                .map(|(g, e)| g / (scale * (e + self.arch.log_floor)))
                .collect();
            // band energy = Σ w_k |X_k|²; d/dx_n = 2 Re Σ_k w_k X_k e^{+iθ}
            let half = n / 2;
            let spec: Vec<Complex<f64>> = ff
                .spectrum
                .iter()
                .enumerate()
                .map(|(k, x)| {
                    let w = self.bin_weight[k] * g_energy[self.bin_band[k]];
                    let edge = if k == 0 || k == half { 2.0 } else { 1.0 };
                    x * (w * edge)
                })
                .collect();
            let g_frame = spectral::irfft(&spec, n);
            let start = f * n;
            for (i, g) in g_frame.iter().enumerate() {
                if start + i < out.len() {
                    out[start + i] += g;
                }
            }
        }
        Ok(out)
    }

    fn translate_text(&self, text: &str, source: &str, target: &str) -> Result<String> {
        self.translate_lexicon(text, source, target)
    }
}
