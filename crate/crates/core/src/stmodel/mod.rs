//! Victim-model abstraction: a speech encoder followed by an autoregressive
//! text decoder, with greedy decoding and differentiable sequence scoring.
//!
//! Full-scale models attach through [`SpeechTranslator`]. The bundled
//! [`surrogate::SurrogateModel`] is a small deterministic stand-in trained on
//! a synthetic tone-word corpus.

pub mod checkpoint;
pub mod corpus;
pub mod surrogate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};

pub type TokenId = u32;

pub const DEFAULT_MAX_DECODE_LEN: usize = 64;

pub const PAD_TOKEN: &str = "<pad>";
pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";

/// Dense token vocabulary with special and per-language tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, TokenId>,
    pad: TokenId,
    bos: TokenId,
    eos: TokenId,
    languages: BTreeMap<String, TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    tokens: Vec<String>,
    languages: Vec<String>,
}

impl TryFrom<VocabularyRepr> for Vocabulary {
    type Error = Error;
    fn try_from(r: VocabularyRepr) -> Result<Self> {
        let specials = 3 + r.languages.len();
        if r.tokens.len() < specials {
            return Err(Error::invalid("vocabulary listing is truncated"));
        }
        let words = r.tokens[specials..].to_vec();
        let v = Vocabulary::new(&r.languages, words)?;
        if v.tokens != r.tokens {
            return Err(Error::invalid("vocabulary listing is not in canonical order"));
        }
        Ok(v)
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            tokens: v.tokens.clone(),
            languages: v.languages.keys().cloned().collect(),
        }
    }
}

/// Language token surface form, e.g. `<en>`.
pub fn language_token(language: &str) -> String {
    format!("<{language}>")
}

impl Vocabulary {
    /// Specials first (`<pad>`, `<s>`, `</s>`), then one token per language in
    /// sorted order, then the deduplicated words in first-seen order.
    pub fn new<S: AsRef<str>>(languages: &[S], words: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut langs: Vec<String> = languages.iter().map(|l| l.as_ref().to_string()).collect();
        langs.sort();
        langs.dedup();
        if langs.is_empty() {
            return Err(Error::config("vocabulary needs at least one language"));
        }
        let mut tokens = vec![PAD_TOKEN.to_string(), BOS_TOKEN.to_string(), EOS_TOKEN.to_string()];
        tokens.extend(langs.iter().map(|l| language_token(l)));
        let mut index: BTreeMap<String, TokenId> = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::config(format!("duplicate language `{t}`")));
            }
        }
        for w in words {
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::config(format!("invalid word token `{w}`")));
            }
            if w.starts_with('<') && w.ends_with('>') {
                return Err(Error::config(format!("word `{w}` collides with a special token")));
            }
            if !index.contains_key(&w) {
                index.insert(w.clone(), tokens.len() as TokenId);
                tokens.push(w);
            }
        }
        let languages = langs
            .iter()
            .map(|l| (l.clone(), index[&language_token(l)]))
            .collect();
        Ok(Self {
            tokens,
            index,
            pad: 0,
            bos: 1,
            eos: 2,
            languages,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn pad(&self) -> TokenId {
        self.pad
    }

    pub fn bos(&self) -> TokenId {
        self.bos
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.languages.keys().map(String::as_str)
    }

    pub fn language_token(&self, language: &str) -> Result<TokenId> {
        self.languages
            .get(language)
            .copied()
            .ok_or_else(|| Error::config(format!("language `{language}` is not supported")))
    }

    pub fn language_of(&self, id: TokenId) -> Option<&str> {
        self.languages
            .iter()
            .find(|(_, t)| **t == id)
            .map(|(l, _)| l.as_str())
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    fn is_special(&self, id: TokenId) -> bool {
        id == self.pad || id == self.bos || id == self.eos || self.language_of(id).is_some()
    }

    /// `[BOS, <lang>, words..., EOS]` for a whitespace-separated text.
    pub fn encode_target(&self, language: &str, text: &str) -> Result<TokenSequence> {
        let mut ids = vec![self.bos, self.language_token(language)?];
        for w in text.split_whitespace() {
            let id = self
                .id(w)
                .filter(|id| !self.is_special(*id))
                .ok_or_else(|| Error::invalid(format!("word `{w}` is not in the vocabulary")))?;
            ids.push(id);
        }
        ids.push(self.eos);
        TokenSequence::new(ids, true)
    }

    /// Words of a sequence joined by spaces, specials dropped.
    pub fn decode_text(&self, seq: &TokenSequence) -> String {
        seq.ids
            .iter()
            .filter(|id| !self.is_special(**id))
            .filter_map(|id| self.token(*id))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Decoder token ids, optionally terminated by EOS.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<TokenId>,
    pub terminated: bool,
}

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>, terminated: bool) -> Result<Self> {
        Ok(Self { ids, terminated })
    }

    /// `[BOS, <lang>]`.
    pub fn prefix(vocab: &Vocabulary, language: &str) -> Result<Self> {
        Ok(Self {
            ids: vec![vocab.bos(), vocab.language_token(language)?],
            terminated: false,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Tokens after the `[BOS, <lang>]` prefix, EOS included when present.
    pub fn scored(&self) -> &[TokenId] {
        &self.ids[2.min(self.ids.len())..]
    }

    /// Check the `[BOS, <lang>, ...]` shape and that nothing follows EOS.
    pub fn validate_prefix(&self, vocab: &Vocabulary) -> Result<()> {
        if self.ids.len() < 2 || self.ids[0] != vocab.bos() || vocab.language_of(self.ids[1]).is_none() {
            return Err(Error::invalid(
                "decoder prefix must start with BOS followed by a language token",
            ));
        }
        if let Some(pos) = self.ids.iter().position(|t| *t == vocab.eos()) {
            if pos + 1 != self.ids.len() {
                return Err(Error::invalid("tokens follow EOS"));
            }
        }
        if let Some(bad) = self.ids.iter().find(|t| **t as usize >= vocab.len()) {
            return Err(Error::invalid(format!("token id {bad} outside the vocabulary")));
        }
        Ok(())
    }
}

/// Per-frame feature vectors produced by a speech encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderFeatures {
    pub vectors: Vec<Vec<f64>>,
    pub gradient_capable: bool,
}

impl EncoderFeatures {
    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub fn frames(&self) -> usize {
        self.vectors.len()
    }

    pub fn zeros_like(&self) -> Vec<Vec<f64>> {
        self.vectors.iter().map(|v| vec![0.0; v.len()]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub gradient_available: bool,
    pub text_to_text_available: bool,
}

/// A speech-translation model: speech encoder plus autoregressive decoder.
///
/// The `*_vjp` methods are vector-Jacobian products; adapters that cannot
/// provide gradients leave the defaults, which return
/// [`Error::Unsupported`].
pub trait SpeechTranslator: Send + Sync {
    fn vocabulary(&self) -> &Vocabulary;

    fn sample_rate_hz(&self) -> u32;

    fn capabilities(&self) -> Capabilities;

    fn encode_samples(&self, samples: &[f64]) -> Result<EncoderFeatures>;

    /// Logits over the vocabulary for the token following `prefix`.
    fn logits(&self, features: &EncoderFeatures, prefix: &[TokenId]) -> Result<Vec<f64>>;

    /// Gradient of `⟨grad_features, encode(samples)⟩` with respect to the samples.
    fn encode_vjp(&self, _samples: &[f64], _grad_features: &[Vec<f64>]) -> Result<Vec<f64>> {
        Err(Error::Unsupported("encoder gradients are not available".into()))
    }

    /// Accumulate the gradient of `⟨grad_logits, logits(features, prefix)⟩`
    /// with respect to the features into `grad_features`.
    fn logits_vjp(
        &self,
        _features: &EncoderFeatures,
        _prefix: &[TokenId],
        _grad_logits: &[f64],
        _grad_features: &mut [Vec<f64>],
    ) -> Result<()> {
        Err(Error::Unsupported("decoder gradients are not available".into()))
    }

    /// Text-to-text translation path, when the model has one.
    fn translate_text(&self, _text: &str, _source: &str, _target: &str) -> Result<String> {
        Err(Error::Unsupported("text-to-text translation is not available".into()))
    }
}

/// Run the speech encoder on a waveform at the model's sample rate.
pub fn encode(model: &dyn SpeechTranslator, w: &Waveform) -> Result<EncoderFeatures> {
    if w.sample_rate_hz() != model.sample_rate_hz() {
        return Err(Error::invalid(format!(
            "waveform is at {} Hz, model expects {} Hz",
            w.sample_rate_hz(),
            model.sample_rate_hz()
        )));
    }
    model.encode_samples(w.samples())
}

pub fn next_token_logits(
    model: &dyn SpeechTranslator,
    h: &EncoderFeatures,
    prefix: &TokenSequence,
) -> Result<Vec<f64>> {
    prefix.validate_prefix(model.vocabulary())?;
    if prefix.terminated || prefix.ids.last() == Some(&model.vocabulary().eos()) {
        return Err(Error::invalid("cannot extend a terminated sequence"));
    }
    let logits = model.logits(h, &prefix.ids)?;
    if logits.len() != model.vocabulary().len() {
        return Err(Error::invalid(format!(
            "adapter returned {} logits for a vocabulary of {}",
            logits.len(),
            model.vocabulary().len()
        )));
    }
    Ok(logits)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Greedy decoding from `[BOS, <lang>]`, appending at most `max_len` tokens.
pub fn greedy_decode(
    model: &dyn SpeechTranslator,
    h: &EncoderFeatures,
    language: &str,
    max_len: usize,
) -> Result<TokenSequence> {
    if max_len == 0 {
        return Err(Error::invalid("max_len must be at least 1"));
    }
    let vocab = model.vocabulary();
    let mut seq = TokenSequence::prefix(vocab, language)?;
    for _ in 0..max_len {
        let logits = model.logits(h, &seq.ids)?;
        let next = argmax(&logits) as TokenId;
        seq.ids.push(next);
        if next == vocab.eos() {
            seq.terminated = true;
            break;
        }
    }
    Ok(seq)
}

/// Which prefix the decoder sees while a target is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefixMode {
    /// The target's own tokens.
    #[default]
    TeacherForced,
    /// The model's greedy output so far.
    SelfPrefix,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossKind {
    #[default]
    CrossEntropy,
    Sharpness { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    #[serde(default)]
    pub mode: PrefixMode,
    #[serde(default)]
    pub kind: LossKind,
    #[serde(default = "default_max_len")]
    pub max_decode_len: usize,
}

fn default_max_len() -> usize {
    DEFAULT_MAX_DECODE_LEN
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            mode: PrefixMode::TeacherForced,
            kind: LossKind::CrossEntropy,
            max_decode_len: DEFAULT_MAX_DECODE_LEN,
        }
    }
}

impl LossConfig {
    pub fn new(mode: PrefixMode, kind: LossKind) -> Self {
        Self {
            mode,
            kind,
            ..Self::default()
        }
    }
}

/// Value of a scored sequence plus the greedy decode when one was produced.
#[derive(Debug, Clone)]
pub struct SequenceScore {
    pub loss: f64,
    pub decoded: Option<TokenSequence>,
}

/// Sequence loss for one target.
///
/// The loss is the cross-entropy summed over scored positions, minus
/// `α · mean(target logits)` for the sharpness variant. When `grad` is
/// given, the gradient with respect to the encoder features is accumulated
/// into it.
pub fn score_sequence(
    model: &dyn SpeechTranslator,
    h: &EncoderFeatures,
    target: &TokenSequence,
    cfg: &LossConfig,
    mut grad: Option<&mut [Vec<f64>]>,
) -> Result<SequenceScore> {
    let vocab = model.vocabulary();
    target.validate_prefix(vocab)?;
    let body = target.scored();
    let body_words = body.iter().filter(|t| **t != vocab.eos()).count();
    if body_words == 0 {
        return Err(Error::invalid("target has no tokens between the language token and EOS"));
    }
    let alpha = match cfg.kind {
        LossKind::CrossEntropy => 0.0,
        LossKind::Sharpness { alpha } => {
            if !(alpha >= 0.0) {
                return Err(Error::invalid(format!("sharpness alpha must be >= 0, got {alpha}")));
            }
            alpha
        }
    };
    let language = vocab
        .language_of(target.ids[1])
        .expect("validated above")
        .to_string();

    let (prefix_source, decoded, positions) = match cfg.mode {
        PrefixMode::TeacherForced => (target.ids.clone(), None, body.len()),
        PrefixMode::SelfPrefix => {
            let d = greedy_decode(model, h, &language, cfg.max_decode_len)?;
            let n = (d.ids.len() - 2).min(body.len());
            (d.ids.clone(), Some(d), n)
        }
    };

    let mut ce = 0.0;
    let mut target_logit_sum = 0.0;
    for m in 0..positions {
        let prefix = &prefix_source[..2 + m];
        let logits = model.logits(h, prefix)?;
        let tgt = body[m] as usize;
        let lsm = log_softmax(&logits);
        ce -= lsm[tgt];
        target_logit_sum += logits[tgt];
        if let Some(g) = grad.as_deref_mut() {
            let mut gl: Vec<f64> = lsm.iter().map(|v| v.exp()).collect();
            gl[tgt] -= 1.0;
            if alpha != 0.0 {
                gl[tgt] -= alpha / positions as f64;
            }
            model.logits_vjp(h, prefix, &gl, g)?;
        }
    }
    let penalty = if positions > 0 {
        target_logit_sum / positions as f64
    } else {
        0.0
    };
    Ok(SequenceScore {
        loss: ce - alpha * penalty,
        decoded,
    })
}

/// Scalar sequence loss (no gradient).
pub fn sequence_loss(
    model: &dyn SpeechTranslator,
    h: &EncoderFeatures,
    target: &TokenSequence,
    cfg: &LossConfig,
) -> Result<f64> {
    Ok(score_sequence(model, h, target, cfg, None)?.loss)
}

#[cfg(test)]
pub(crate) mod testing {
    //! Hand-built adapters with fixed logit tables.
    use super::*;

    /// Logits depend only on the prefix: `table(prefix) -> logits`. Features
    /// scale every logit by `features[0][0]`, which makes the gradient path
    /// observable.
    pub struct TableAdapter {
        pub vocab: Vocabulary,
        pub table: Box<dyn Fn(&[TokenId]) -> Vec<f64> + Send + Sync>,
    }

    impl TableAdapter {
        pub fn new(
            words: &[&str],
            table: impl Fn(&[TokenId]) -> Vec<f64> + Send + Sync + 'static,
        ) -> Self {
            let vocab = Vocabulary::new(&["en", "zh"], words.iter().map(|w| w.to_string())).unwrap();
            Self {
                vocab,
                table: Box::new(table),
            }
        }

        pub fn features(scale: f64) -> EncoderFeatures {
            EncoderFeatures {
                vectors: vec![vec![scale]],
                gradient_capable: true,
            }
        }
    }

    impl SpeechTranslator for TableAdapter {
        fn vocabulary(&self) -> &Vocabulary {
            &self.vocab
        }
        fn sample_rate_hz(&self) -> u32 {
            16000
        }
        fn capabilities(&self) -> Capabilities {
            Capabilities {
                gradient_available: true,
                text_to_text_available: false,
            }
        }
        fn encode_samples(&self, samples: &[f64]) -> Result<EncoderFeatures> {
            Ok(Self::features(samples.first().copied().unwrap_or(1.0)))
        }
        fn logits(&self, features: &EncoderFeatures, prefix: &[TokenId]) -> Result<Vec<f64>> {
            let s = features.vectors[0][0];
            Ok((self.table)(prefix).into_iter().map(|l| l * s).collect())
        }
        fn encode_vjp(&self, samples: &[f64], grad_features: &[Vec<f64>]) -> Result<Vec<f64>> {
            let mut g = vec![0.0; samples.len()];
            if !g.is_empty() {
                g[0] = grad_features[0][0];
            }
            Ok(g)
        }
        fn logits_vjp(
            &self,
            _features: &EncoderFeatures,
            prefix: &[TokenId],
            grad_logits: &[f64],
            grad_features: &mut [Vec<f64>],
        ) -> Result<()> {
            let base = (self.table)(prefix);
            grad_features[0][0] += base.iter().zip(grad_logits).map(|(a, b)| a * b).sum::<f64>();
            Ok(())
        }
    }

    /// Vocabulary `<pad> <s> </s> <en> <zh> a b c` (|V| = 8) with a confident
    /// chain `a → b → c → EOS`.
    pub fn chain_adapter(confidence: f64) -> TableAdapter {
        TableAdapter::new(&["a", "b", "c"], move |prefix| {
            let mut l = vec![0.0; 8];
            let next = match prefix.last().copied().unwrap() {
                3 | 4 => 5,
                5 => 6,
                6 => 7,
                _ => 2,
            };
            l[next] = confidence;
            l
        })
    }
}

#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;

    #[test]
    fn vocabulary_layout_and_roundtrip() {
        let v = Vocabulary::new(&["zh", "en"], ["a".to_string(), "b".into(), "a".into()]).unwrap();
        assert_eq!(v.tokens(), &["<pad>", "<s>", "</s>", "<en>", "<zh>", "a", "b"]);
        assert_eq!(v.language_token("zh").unwrap(), 4);
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        let seq = v.encode_target("en", "b a").unwrap();
        assert_eq!(seq.ids, vec![1, 3, 6, 5, 2]);
        assert_eq!(v.decode_text(&seq), "b a");
        assert!(v.encode_target("en", "zz").is_err());
        assert!(v.encode_target("fr", "a").is_err());
    }

    #[test]
    fn logits_shape_and_normalization() {
        let m = chain_adapter(3.0);
        let h = TableAdapter::features(1.0);
        let prefix = TokenSequence::prefix(&m.vocab, "en").unwrap();
        let l = next_token_logits(&m, &h, &prefix).unwrap();
        assert_eq!(l.len(), m.vocab.len());
        assert!((softmax(&l).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let bad = TokenSequence::new(vec![5, 3], false).unwrap();
        assert!(matches!(next_token_logits(&m, &h, &bad), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn greedy_decode_cases() {
        // always EOS
        let eos = TableAdapter::new(&["a"], |_| vec![0.0, 0.0, 5.0, 0.0, 0.0, 1.0]);
        let h = TableAdapter::features(1.0);
        let d = greedy_decode(&eos, &h, "en", 10).unwrap();
        assert_eq!(d.ids, vec![1, 3, 2]);
        assert!(d.terminated);

        // hand-built chain
        let chain = chain_adapter(4.0);
        let d = greedy_decode(&chain, &h, "zh", 10).unwrap();
        assert_eq!(d.ids, vec![1, 4, 5, 6, 7, 2]);

        // never terminates
        let looping = TableAdapter::new(&["a"], |_| vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let d = greedy_decode(&looping, &h, "en", 2).unwrap();
        assert_eq!(d.ids, vec![1, 3, 5, 5]);
        assert!(!d.terminated);
    }

    #[test]
    fn ties_go_to_lowest_id() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        let flat = TableAdapter::new(&["a", "b"], |_| vec![0.0; 7]);
        let d = greedy_decode(&flat, &TableAdapter::features(1.0), "en", 3).unwrap();
        assert_eq!(d.ids[2..], [0, 0, 0]);
    }

    #[test]
    fn confident_model_has_near_zero_loss() {
        let m = chain_adapter(20.0);
        let h = TableAdapter::features(1.0);
        let target = m.vocab.encode_target("en", "a b c").unwrap();
        for mode in [PrefixMode::TeacherForced, PrefixMode::SelfPrefix] {
            let loss = sequence_loss(&m, &h, &target, &LossConfig::new(mode, LossKind::CrossEntropy)).unwrap();
            assert!(loss <= 1e-3, "{mode:?}: {loss}");
        }
    }

    #[test]
    fn uniform_logits_give_closed_form_ce() {
        let m = TableAdapter::new(&["a", "b", "c"], |_| vec![0.25; 8]);
        let h = TableAdapter::features(1.0);
        // two words plus EOS = three scored positions
        let target = m.vocab.encode_target("en", "a b").unwrap();
        let loss = sequence_loss(&m, &h, &target, &LossConfig::default()).unwrap();
        assert!((loss - 6.238_324_625_0).abs() < 1e-9);
        assert!((loss - 3.0 * 8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn teacher_forced_matches_stepwise_oracle() {
        let m = TableAdapter::new(&["a", "b", "c"], |p| {
            (0..8).map(|k| ((k as f64 + 1.0) * (p.len() as f64 + 0.5)).sin()).collect()
        });
        let h = TableAdapter::features(0.7);
        let target = m.vocab.encode_target("zh", "c a b").unwrap();
        let loss = sequence_loss(&m, &h, &target, &LossConfig::default()).unwrap();
        let mut oracle = 0.0;
        for m_pos in 2..target.ids.len() {
            let logits: Vec<f64> = (m.table)(&target.ids[..m_pos]).iter().map(|l| l * 0.7).collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            oracle -= (logits[target.ids[m_pos] as usize].exp() / z).ln();
        }
        assert!((loss - oracle).abs() < 1e-9);
    }

    #[test]
    fn self_prefix_scores_min_length() {
        // decodes [a, EOS] but target is a b c EOS: only 2 positions scored
        let m = TableAdapter::new(&["a", "b", "c"], |p| {
            let mut l = vec![0.0; 8];
            if p.len() == 2 {
                l[5] = 1.0;
            } else {
                l[2] = 1.0;
            }
            l
        });
        let h = TableAdapter::features(1.0);
        let target = m.vocab.encode_target("en", "a b c").unwrap();
        let s = score_sequence(&m, &h, &target, &LossConfig::new(PrefixMode::SelfPrefix, LossKind::CrossEntropy), None).unwrap();
        assert_eq!(s.decoded.unwrap().ids, vec![1, 3, 5, 2]);
        let step0 = -log_softmax(&[0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0])[5];
        let step1 = -log_softmax(&[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0])[6];
        assert!((s.loss - (step0 + step1)).abs() < 1e-12);
    }

    #[test]
    fn empty_body_is_rejected() {
        let m = chain_adapter(1.0);
        let h = TableAdapter::features(1.0);
        let target = m.vocab.encode_target("en", "").unwrap();
        assert!(matches!(
            sequence_loss(&m, &h, &target, &LossConfig::default()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn feature_gradient_matches_finite_difference() {
        let m = TableAdapter::new(&["a", "b", "c"], |p| {
            (0..8).map(|k| ((k * 3 + p.len()) as f64).cos()).collect()
        });
        let target = m.vocab.encode_target("en", "b c").unwrap();
        for kind in [LossKind::CrossEntropy, LossKind::Sharpness { alpha: 0.3 }] {
            let cfg = LossConfig::new(PrefixMode::TeacherForced, kind);
            let h = TableAdapter::features(0.9);
            let mut g = h.zeros_like();
            score_sequence(&m, &h, &target, &cfg, Some(&mut g)).unwrap();
            let eps = 1e-5;
            let up = sequence_loss(&m, &TableAdapter::features(0.9 + eps), &target, &cfg).unwrap();
            let dn = sequence_loss(&m, &TableAdapter::features(0.9 - eps), &target, &cfg).unwrap();
            let fd = (up - dn) / (2.0 * eps);
            assert!((fd - g[0][0]).abs() <= 1e-6 * fd.abs().max(1.0));
        }
    }
}
