//! Targeted perturbation attack: optimize a bounded, band-limited additive
//! perturbation so the carrier translates to attacker-chosen text.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{bandpass, project_perturbation, project_perturbation_vjp, PerturbationBudget, Waveform};
use crate::error::{Error, Result};
use crate::optim::{Optimizer, OptimizerKind};
use crate::ota_channel::{EotSampler, Realization};
use crate::stmodel::{greedy_decode, score_sequence, LossConfig, SpeechTranslator, TokenId, TokenSequence, Vocabulary};

/// Target text and tokens for one language.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageTarget {
    pub text: String,
    pub tokens: TokenSequence,
}

/// The attacker's goal: a semantic phrasing plus one target per language.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub semantic_text: String,
    pub per_language: BTreeMap<String, LanguageTarget>,
}

impl TargetSpec {
    /// Tokenize `texts` (language → target text) with `vocab`.
    pub fn new<L: Into<String>, T: Into<String>>(
        vocab: &Vocabulary,
        semantic_text: impl Into<String>,
        texts: impl IntoIterator<Item = (L, T)>,
    ) -> Result<Self> {
        let mut per_language = BTreeMap::new();
        for (lang, text) in texts {
            let lang = lang.into();
            let text = text.into();
            let tokens = vocab.encode_target(&lang, &text)?;
            per_language.insert(lang, LanguageTarget { text, tokens });
        }
        Ok(Self {
            semantic_text: semantic_text.into(),
            per_language,
        })
    }

    pub fn get(&self, language: &str) -> Result<&LanguageTarget> {
        self.per_language
            .get(language)
            .ok_or_else(|| Error::config(format!("target spec has no entry for language {language}")))
    }

    /// Check that every language in `languages` has a well-formed target.
    pub fn validate(&self, vocab: &Vocabulary, languages: &[String]) -> Result<()> {
        for lang in languages {
            let t = self.get(lang)?;
            t.tokens.validate_prefix(vocab)?;
            if vocab.language_of(t.tokens.ids[1]) != Some(lang.as_str()) {
                return Err(Error::config(format!("target for {lang} carries the wrong language token")));
            }
            if !t.tokens.terminated || t.tokens.ids.last() != Some(&vocab.eos()) {
                return Err(Error::config(format!("target for {lang} does not end with EOS")));
            }
        }
        Ok(())
    }
}

fn default_max_iteration() -> usize {
    500
}

fn default_learning_rate() -> f64 {
    1e-2
}

fn default_languages() -> Vec<String> {
    vec!["en".into()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbAttackConfig {
    #[serde(default)]
    pub budget: PerturbationBudget,
    #[serde(default = "default_max_iteration")]
    pub max_iteration: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub loss: LossConfig,
    /// Attack (Seen) languages.
    #[serde(default = "default_languages")]
    pub languages: Vec<String>,
    /// Languages decoded for reporting only (Unseen).
    #[serde(default)]
    pub unseen_languages: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ota_enabled: bool,
}

impl Default for PerturbAttackConfig {
    fn default() -> Self {
        Self {
            budget: PerturbationBudget::default(),
            max_iteration: default_max_iteration(),
            optimizer: OptimizerKind::default(),
            learning_rate: default_learning_rate(),
            loss: LossConfig::default(),
            languages: default_languages(),
            unseen_languages: Vec::new(),
            seed: 0,
            ota_enabled: false,
        }
    }
}

impl PerturbAttackConfig {
    pub fn validate(&self, sample_rate_hz: u32) -> Result<()> {
        self.budget.validate(sample_rate_hz)?;
        if self.max_iteration == 0 {
            return Err(Error::config("max_iteration must be at least 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        validate_languages(&self.languages, &self.unseen_languages)
    }
}

pub(crate) fn validate_languages(seen: &[String], unseen: &[String]) -> Result<()> {
    if seen.is_empty() {
        return Err(Error::config("at least one attack language is required"));
    }
    let mut all: Vec<&String> = seen.iter().chain(unseen).collect();
    all.sort();
    if all.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::config("attack and unseen languages must be distinct"));
    }
    Ok(())
}

/// Outcome for one language of a finished attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageRecord {
    pub seen: bool,
    pub target_text: String,
    pub translation: String,
    pub tokens: Vec<TokenId>,
    pub terminated: bool,
    pub exact_match: bool,
    #[serde(default)]
    pub esim: Option<f64>,
    #[serde(default)]
    pub nscore: Option<f64>,
    #[serde(default)]
    pub success: Option<bool>,
}

/// Extra report fields for music attacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MusicReport {
    pub prompt: String,
    pub steps: usize,
    pub alpha: f64,
    pub kl_weight: f64,
    pub ota_enabled: bool,
    pub peak_amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    #[serde(skip)]
    pub adversarial_waveform: Option<Waveform>,
    /// Attack languages.
    pub per_language: BTreeMap<String, LanguageRecord>,
    /// Languages decoded but not optimized for.
    #[serde(default)]
    pub unseen: BTreeMap<String, LanguageRecord>,
    /// Optimizer steps taken; equals `loss_trace.len()`.
    pub iterations_used: usize,
    pub loss_trace: Vec<f64>,
    pub final_loss: f64,
    /// Every attack language decoded to its exact target.
    pub exact_match: bool,
    pub seed: u64,
    pub config_hash: String,
    /// Largest `|x_adv - carrier|`; absent for generated audio.
    #[serde(default)]
    pub max_abs_perturbation: Option<f64>,
    /// Channel draws used during optimization, one per evaluation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub realizations: Vec<Realization>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub music: Option<MusicReport>,
}

impl AttackResult {
    pub fn waveform(&self) -> Option<&Waveform> {
        self.adversarial_waveform.as_ref()
    }

    /// Seen records followed by unseen ones.
    pub fn records(&self) -> impl Iterator<Item = (&String, &LanguageRecord)> {
        self.per_language.iter().chain(self.unseen.iter())
    }

    pub fn records_mut(&mut self) -> impl Iterator<Item = (&String, &mut LanguageRecord)> {
        self.per_language.iter_mut().chain(self.unseen.iter_mut())
    }
}

/// Unweighted sum of sequence losses over `languages`.
pub fn multi_language_loss(
    model: &dyn SpeechTranslator,
    x_adv: &Waveform,
    targets: &TargetSpec,
    languages: &[String],
    cfg: &LossConfig,
) -> Result<f64> {
    let h = crate::stmodel::encode(model, x_adv)?;
    let mut total = 0.0;
    for lang in languages {
        total += score_sequence(model, &h, &targets.get(lang)?.tokens, cfg, None)?.loss;
    }
    Ok(total)
}

/// [`multi_language_loss`] and its gradient with respect to the samples.
pub fn multi_language_loss_grad(
    model: &dyn SpeechTranslator,
    samples: &[f64],
    targets: &TargetSpec,
    languages: &[String],
    cfg: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    let h = model.encode_samples(samples)?;
    let mut gh = h.zeros_like();
    let mut total = 0.0;
    for lang in languages {
        total += score_sequence(model, &h, &targets.get(lang)?.tokens, cfg, Some(&mut gh))?.loss;
    }
    let g = model.encode_vjp(samples, &gh)?;
    Ok((total, g))
}

/// One evaluation of an attack objective.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    /// The attack goal is met at this point.
    pub solved: bool,
    /// Gradient with respect to the evaluated signal; may be omitted when solved.
    pub gradient: Option<Vec<f64>>,
}

/// Something the perturbation loop can minimize over the adversarial signal.
pub trait PerturbationObjective {
    fn evaluate(&mut self, x_adv: &[f64]) -> Result<Evaluation>;
}

/// State exposed to observers after each evaluation.
#[derive(Debug)]
pub struct Iterate<'a> {
    pub iteration: usize,
    pub delta: &'a [f64],
    pub x_adv: &'a [f64],
    pub loss: f64,
}

/// Result of [`optimize_perturbation`].
#[derive(Debug, Clone)]
pub struct PerturbationOutcome {
    pub delta: Vec<f64>,
    pub x_adv: Vec<f64>,
    pub iterations_used: usize,
    pub loss_trace: Vec<f64>,
    pub final_loss: f64,
    pub solved: bool,
}

/// Map the raw variable to the applied perturbation.
///
/// `ε·tanh` bounds each sample, the band mask removes out-of-band energy,
/// and because the mask can raise the peak a final uniform rescale keeps
/// `max|δ|` strictly below `ε`.
#[derive(Debug, Clone)]
pub struct PerturbationMap {
    budget: PerturbationBudget,
    sample_rate_hz: u32,
}

struct Forward {
    banded: Vec<f64>,
    delta: Vec<f64>,
    peak: Option<(usize, f64)>,
}

pub(crate) const PEAK_MARGIN: f64 = 1e-6;

impl PerturbationMap {
    pub fn new(budget: PerturbationBudget, sample_rate_hz: u32) -> Result<Self> {
        budget.validate(sample_rate_hz)?;
        Ok(Self { budget, sample_rate_hz })
    }

    fn limit(&self) -> f64 {
        self.budget.epsilon * (1.0 - PEAK_MARGIN)
    }

    fn forward(&self, raw: &[f64]) -> Result<Forward> {
        let projected = project_perturbation(raw, &self.budget)?;
        let banded = bandpass(&projected, &self.budget, self.sample_rate_hz)?;
        let (j, m) = banded
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |(bj, bm), (i, v)| if v.abs() > bm { (i, v.abs()) } else { (bj, bm) });
        let limit = self.limit();
        let (delta, peak) = if m >= limit {
            let s = limit / m;
            (banded.iter().map(|v| v * s).collect(), Some((j, m)))
        } else {
            (banded.clone(), None)
        };
        Ok(Forward {
            banded,
            delta,
            peak,
        })
    }

    pub fn apply(&self, raw: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(raw)?.delta)
    }

    /// Gradient with respect to `raw` of `⟨grad_delta, apply(raw)⟩`.
    pub fn vjp(&self, raw: &[f64], grad_delta: &[f64]) -> Result<Vec<f64>> {
        let f = self.forward(raw)?;
        self.vjp_from(raw, &f, grad_delta)
    }

    fn vjp_from(&self, raw: &[f64], f: &Forward, grad_delta: &[f64]) -> Result<Vec<f64>> {
        let g_banded = match f.peak {
            None => grad_delta.to_vec(),
            Some((j, m)) => {
                let limit = self.limit();
                let s = limit / m;
                let dot: f64 = grad_delta.iter().zip(&f.banded).map(|(g, b)| g * b).sum();
                let mut g: Vec<f64> = grad_delta.iter().map(|v| v * s).collect();
                g[j] -= limit / (m * m) * f.banded[j].signum() * dot;
                g
            }
        };
        let g_projected = bandpass(&g_banded, &self.budget, self.sample_rate_hz)?;
        Ok(project_perturbation_vjp(raw, &self.budget, &g_projected))
    }
}

/// Run the perturbation loop against an arbitrary objective.
///
/// Evaluation `i` sees the perturbation after `i` optimizer steps. The loop
/// stops as soon as an evaluation reports `solved`, or after
/// `cfg.max_iteration` steps.
pub fn optimize_perturbation(
    objective: &mut dyn PerturbationObjective,
    carrier: &Waveform,
    cfg: &PerturbAttackConfig,
    mut observer: Option<&mut dyn FnMut(&Iterate<'_>)>,
) -> Result<PerturbationOutcome> {
    if cfg.max_iteration == 0 {
        return Err(Error::config("max_iteration must be at least 1"));
    }
    if !(cfg.learning_rate > 0.0) {
        return Err(Error::config("learning_rate must be positive"));
    }
    let map = PerturbationMap::new(cfg.budget, carrier.sample_rate_hz())?;
    let n = carrier.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut raw: Vec<f64> = (0..n).map(|_| rng.random_range(-1e-3..=1e-3)).collect();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, n);
    let mut trace = Vec::new();
    let mut iteration = 0;
    loop {
        let fwd = map.forward(&raw)?;
        let x_adv: Vec<f64> = carrier.samples().iter().zip(&fwd.delta).map(|(c, d)| c + d).collect();
        let eval = objective.evaluate(&x_adv)?;
        if !eval.loss.is_finite() {
            return Err(Error::OptimizationFailure {
                iteration,
                reason: format!("loss is {}", eval.loss),
            });
        }
        if let Some(obs) = observer.as_deref_mut() {
            obs(&Iterate {
                iteration,
                delta: &fwd.delta,
                x_adv: &x_adv,
                loss: eval.loss,
            });
        }
        if eval.solved || iteration == cfg.max_iteration {
            return Ok(PerturbationOutcome {
                delta: fwd.delta,
                x_adv,
                iterations_used: iteration,
                loss_trace: trace,
                final_loss: eval.loss,
                solved: eval.solved,
            });
        }
        let g_x = eval.gradient.ok_or_else(|| Error::OptimizationFailure {
            iteration,
            reason: "objective returned no gradient".into(),
        })?;
        if g_x.len() != n || g_x.iter().any(|v| !v.is_finite()) {
            return Err(Error::OptimizationFailure {
                iteration,
                reason: "gradient is malformed or non-finite".into(),
            });
        }
        let g_raw = map.vjp_from(&raw, &fwd, &g_x)?;
        opt.step(&mut raw, &g_raw);
        trace.push(eval.loss);
        iteration += 1;
    }
}

/// Multi-language translation objective on a speech model, optionally
/// through a sampled over-the-air channel.
pub struct TranslationObjective<'a> {
    model: &'a dyn SpeechTranslator,
    targets: &'a TargetSpec,
    languages: &'a [String],
    loss: LossConfig,
    channel: Option<&'a mut EotSampler>,
    realizations: Vec<Realization>,
}

impl<'a> TranslationObjective<'a> {
    pub fn new(
        model: &'a dyn SpeechTranslator,
        targets: &'a TargetSpec,
        languages: &'a [String],
        loss: LossConfig,
        channel: Option<&'a mut EotSampler>,
    ) -> Result<Self> {
        if !model.capabilities().gradient_available {
            return Err(Error::Unsupported("the model adapter does not provide gradients".into()));
        }
        targets.validate(model.vocabulary(), languages)?;
        Ok(Self {
            model,
            targets,
            languages,
            loss,
            channel,
            realizations: Vec::new(),
        })
    }

    pub fn into_realizations(self) -> Vec<Realization> {
        self.realizations
    }

    /// Evaluate on a signal after any channel transform has been applied,
    /// returning the gradient with respect to that signal.
    pub fn evaluate_received(&self, received: &[f64]) -> Result<Evaluation> {
        let h = self.model.encode_samples(received)?;
        let mut solved = true;
        for lang in self.languages {
            let target = &self.targets.get(lang)?.tokens;
            let d = greedy_decode(self.model, &h, lang, self.loss.max_decode_len)?;
            if d.ids != target.ids {
                solved = false;
                break;
            }
        }
        let mut gh = h.zeros_like();
        let mut loss = 0.0;
        for lang in self.languages {
            let target = &self.targets.get(lang)?.tokens;
            let g = if solved { None } else { Some(gh.as_mut_slice()) };
            loss += score_sequence(self.model, &h, target, &self.loss, g)?.loss;
        }
        let gradient = if solved {
            None
        } else {
            Some(self.model.encode_vjp(received, &gh)?)
        };
        Ok(Evaluation { loss, solved, gradient })
    }
}

impl PerturbationObjective for TranslationObjective<'_> {
    fn evaluate(&mut self, x_adv: &[f64]) -> Result<Evaluation> {
        let Some(sampler) = self.channel.take() else {
            return self.evaluate_received(x_adv);
        };
        let result = sampler.sample(x_adv).and_then(|(received, real)| {
            let mut eval = self.evaluate_received(&received)?;
            if let Some(g) = eval.gradient.take() {
                eval.gradient = Some(sampler.vjp(&real, &g)?);
            }
            Ok((eval, real))
        });
        self.channel = Some(sampler);
        let (eval, real) = result?;
        self.realizations.push(real);
        Ok(eval)
    }
}

/// Greedy-decode every language of `targets` on `samples`.
pub(crate) fn decode_records(
    model: &dyn SpeechTranslator,
    samples: &[f64],
    targets: &TargetSpec,
    seen: &[String],
    unseen: &[String],
    max_len: usize,
) -> Result<(BTreeMap<String, LanguageRecord>, BTreeMap<String, LanguageRecord>)> {
    let h = model.encode_samples(samples)?;
    let record = |lang: &String, is_seen: bool| -> Result<LanguageRecord> {
        let target = targets.get(lang)?;
        let d = greedy_decode(model, &h, lang, max_len)?;
        Ok(LanguageRecord {
            seen: is_seen,
            target_text: target.text.clone(),
            translation: model.vocabulary().decode_text(&d),
            exact_match: d.ids == target.tokens.ids,
            terminated: d.terminated,
            tokens: d.ids,
            esim: None,
            nscore: None,
            success: None,
        })
    };
    let seen_map = seen
        .iter()
        .map(|l| Ok((l.clone(), record(l, true)?)))
        .collect::<Result<_>>()?;
    let unseen_map = unseen
        .iter()
        .map(|l| Ok((l.clone(), record(l, false)?)))
        .collect::<Result<_>>()?;
    Ok((seen_map, unseen_map))
}

/// Optimize a perturbation of `carrier` toward `targets`.
pub fn run_perturbation_attack(
    model: &dyn SpeechTranslator,
    carrier: &Waveform,
    targets: &TargetSpec,
    cfg: &PerturbAttackConfig,
) -> Result<AttackResult> {
    run_perturbation_attack_with(model, carrier, targets, cfg, None, None)
}

/// [`run_perturbation_attack`] with an optional channel sampler (required
/// when `cfg.ota_enabled`) and an observer called after every evaluation.
pub fn run_perturbation_attack_with(
    model: &dyn SpeechTranslator,
    carrier: &Waveform,
    targets: &TargetSpec,
    cfg: &PerturbAttackConfig,
    channel: Option<&mut EotSampler>,
    observer: Option<&mut dyn FnMut(&Iterate<'_>)>,
) -> Result<AttackResult> {
    cfg.validate(carrier.sample_rate_hz())?;
    if carrier.sample_rate_hz() != model.sample_rate_hz() {
        return Err(Error::invalid(format!(
            "carrier is at {} Hz, model expects {} Hz",
            carrier.sample_rate_hz(),
            model.sample_rate_hz()
        )));
    }
    let channel = match (cfg.ota_enabled, channel) {
        (true, None) => return Err(Error::config("ota_enabled requires a channel sampler")),
        (true, Some(c)) => Some(c),
        (false, _) => None,
    };
    targets.validate(model.vocabulary(), &cfg.unseen_languages)?;
    let mut objective = TranslationObjective::new(model, targets, &cfg.languages, cfg.loss, channel)?;
    let outcome = optimize_perturbation(&mut objective, carrier, cfg, observer)?;
    let realizations = objective.into_realizations();
    let (per_language, unseen) = decode_records(
        model,
        &outcome.x_adv,
        targets,
        &cfg.languages,
        &cfg.unseen_languages,
        cfg.loss.max_decode_len,
    )?;
    let max_abs = outcome
        .x_adv
        .iter()
        .zip(carrier.samples())
        .fold(0.0f64, |m, (a, c)| m.max((a - c).abs()));
    Ok(AttackResult {
        exact_match: per_language.values().all(|r| r.exact_match),
        adversarial_waveform: Some(Waveform::new(outcome.x_adv, carrier.sample_rate_hz())?),
        per_language,
        unseen,
        iterations_used: outcome.iterations_used,
        loss_trace: outcome.loss_trace,
        final_loss: outcome.final_loss,
        seed: cfg.seed,
        config_hash: crate::hashing::json_sha256(&(cfg, targets))?,
        max_abs_perturbation: Some(max_abs),
        realizations,
        music: None,
    })
}
