//! Adversarial music: optimize a generator's initial latent and
//! conditioning-encoder parameters so the generated audio translates to
//! attacker-chosen text.

pub mod diffusion;
pub mod generator;
pub mod sharpness;

use serde::{Deserialize, Serialize};

use crate::attack_perturb::{decode_records, validate_languages, AttackResult, MusicReport, TargetSpec};
use crate::audio::spectral::{resample_to_len, resample_to_len_vjp};
use crate::error::{Error, Result};
use crate::optim::{Optimizer, OptimizerKind};
use crate::ota_channel::{EotSampler, Realization};
use crate::stmodel::{greedy_decode, score_sequence, LossConfig, LossKind, PrefixMode, SpeechTranslator};

pub use diffusion::{forward_diffuse, latent_prior_kl, latent_prior_kl_grad, NoiseSchedule, DEFAULT_KL_CAP};
pub use generator::{
    reverse_generate, Conditioning, GeneratorState, MusicGenerator, StateGradient, SurrogateGenerator,
    SurrogateGeneratorConfig, PROMPT_PRESETS,
};
pub use sharpness::{sharpness_loss, sharpness_loss_grad};

fn d_max_iteration() -> usize {
    1000
}
fn d_lr() -> f64 {
    0.05
}
fn d_alpha() -> f64 {
    0.1
}
fn d_kl_weight() -> f64 {
    1.0
}
fn d_steps() -> usize {
    8
}
fn d_prompt() -> String {
    "techno".into()
}
fn d_languages() -> Vec<String> {
    vec!["en".into()]
}
fn d_prefix() -> PrefixMode {
    PrefixMode::SelfPrefix
}
fn d_max_len() -> usize {
    crate::stmodel::DEFAULT_MAX_DECODE_LEN
}
fn d_cap() -> f64 {
    DEFAULT_KL_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MusicAttackConfig {
    #[serde(default = "d_max_iteration")]
    pub max_iteration: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    /// Sharpness coefficient α.
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_kl_weight")]
    pub kl_weight: f64,
    #[serde(default = "d_cap")]
    pub kl_cap: f64,
    /// Reverse-diffusion steps per generation.
    #[serde(default = "d_steps")]
    pub steps: usize,
    #[serde(default = "d_prompt")]
    pub prompt: String,
    #[serde(default = "d_languages")]
    pub languages: Vec<String>,
    #[serde(default)]
    pub unseen_languages: Vec<String>,
    #[serde(default = "d_prefix")]
    pub prefix_mode: PrefixMode,
    #[serde(default = "d_max_len")]
    pub max_decode_len: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ota_enabled: bool,
}

impl Default for MusicAttackConfig {
    fn default() -> Self {
        Self {
            max_iteration: d_max_iteration(),
            optimizer: OptimizerKind::default(),
            learning_rate: d_lr(),
            alpha: d_alpha(),
            kl_weight: d_kl_weight(),
            kl_cap: d_cap(),
            steps: d_steps(),
            prompt: d_prompt(),
            languages: d_languages(),
            unseen_languages: Vec::new(),
            prefix_mode: d_prefix(),
            max_decode_len: d_max_len(),
            seed: 0,
            ota_enabled: false,
        }
    }
}

impl MusicAttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iteration == 0 {
            return Err(Error::config("max_iteration must be at least 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning_rate must be positive"));
        }
        if !(self.alpha >= 0.0) || !(self.kl_weight >= 0.0) || !(self.kl_cap > 0.0) {
            return Err(Error::config("alpha and kl_weight must be >= 0 and kl_cap positive"));
        }
        if self.steps == 0 {
            return Err(Error::config("steps must be at least 1"));
        }
        if self.max_decode_len == 0 {
            return Err(Error::config("max_decode_len must be at least 1"));
        }
        validate_languages(&self.languages, &self.unseen_languages)
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            mode: self.prefix_mode,
            kind: LossKind::Sharpness { alpha: self.alpha },
            max_decode_len: self.max_decode_len,
        }
    }
}

/// Bring generator output to the model's sample rate.
fn to_model_rate(gen: &dyn MusicGenerator, model: &dyn SpeechTranslator, audio: Vec<f64>) -> Vec<f64> {
    let (from, to) = (gen.sample_rate_hz(), model.sample_rate_hz());
    if from == to {
        return audio;
    }
    let m = ((audio.len() as f64) * to as f64 / from as f64).round().max(1.0) as usize;
    resample_to_len(&audio, m)
}

/// Value of one music-attack evaluation.
#[derive(Debug, Clone)]
pub struct MusicEvaluation {
    pub loss: f64,
    pub translation_loss: f64,
    pub prior_loss: f64,
    pub solved: bool,
    pub realization: Option<Realization>,
}

/// Loss of the music attack at `state` (no channel, no gradient): sharpness
/// loss summed over the attack languages plus the weighted latent prior.
pub fn music_loss(
    gen: &dyn MusicGenerator,
    model: &dyn SpeechTranslator,
    state: &GeneratorState,
    targets: &TargetSpec,
    cfg: &MusicAttackConfig,
) -> Result<f64> {
    let audio = to_model_rate(gen, model, gen.generate(state)?);
    let h = model.encode_samples(&audio)?;
    let loss_cfg = cfg.loss_config();
    let mut total = 0.0;
    for lang in &cfg.languages {
        total += score_sequence(model, &h, &targets.get(lang)?.tokens, &loss_cfg, None)?.loss;
    }
    if cfg.kl_weight > 0.0 {
        total += cfg.kl_weight * latent_prior_kl(&state.omega_t, cfg.kl_cap)?;
    }
    Ok(total)
}

struct Evaluated {
    eval: MusicEvaluation,
    gradient: Option<StateGradient>,
}

fn evaluate(
    gen: &dyn MusicGenerator,
    model: &dyn SpeechTranslator,
    state: &GeneratorState,
    targets: &TargetSpec,
    cfg: &MusicAttackConfig,
    channel: Option<&mut EotSampler>,
) -> Result<Evaluated> {
    let generated = gen.generate(state)?;
    let native_len = generated.len();
    let audio = to_model_rate(gen, model, generated);
    let (received, realization) = match channel.as_deref() {
        None => (audio, None),
        Some(_) => {
            let sampler = channel.expect("checked");
            let (r, real) = sampler.sample(&audio)?;
            (r, Some((real, sampler as &EotSampler)))
        }
    };
    let h = model.encode_samples(&received)?;
    let mut solved = true;
    for lang in &cfg.languages {
        let d = greedy_decode(model, &h, lang, cfg.max_decode_len)?;
        if d.ids != targets.get(lang)?.tokens.ids {
            solved = false;
            break;
        }
    }
    let loss_cfg = cfg.loss_config();
    let mut gh = h.zeros_like();
    let mut translation_loss = 0.0;
    for lang in &cfg.languages {
        let g = if solved { None } else { Some(gh.as_mut_slice()) };
        translation_loss += score_sequence(model, &h, &targets.get(lang)?.tokens, &loss_cfg, g)?.loss;
    }
    let (prior, prior_grad) = if cfg.kl_weight > 0.0 {
        let (k, g) = latent_prior_kl_grad(&state.omega_t, cfg.kl_cap)?;
        (cfg.kl_weight * k, Some(g))
    } else {
        (0.0, None)
    };
    let gradient = if solved {
        None
    } else {
        let mut g = model.encode_vjp(&received, &gh)?;
        if let Some((real, sampler)) = &realization {
            g = sampler.vjp(real, &g)?;
        }
        if g.len() != native_len {
            g = resample_to_len_vjp(&g, native_len);
        }
        let mut sg = gen.generate_vjp(state, &g)?;
        if let Some(pg) = prior_grad {
            for (a, b) in sg.omega_t.iter_mut().zip(pg) {
                *a += cfg.kl_weight * b;
            }
        }
        Some(sg)
    };
    Ok(Evaluated {
        eval: MusicEvaluation {
            loss: translation_loss + prior,
            translation_loss,
            prior_loss: prior,
            solved,
            realization: realization.map(|(r, _)| r),
        },
        gradient,
    })
}

fn flatten(state: &GeneratorState) -> Vec<f64> {
    let mut v = state.omega_t.clone();
    v.extend_from_slice(&state.theta_c);
    v.extend_from_slice(&state.theta_b);
    v
}

fn unflatten(state: &mut GeneratorState, v: &[f64]) {
    let a = state.omega_t.len();
    let b = a + state.theta_c.len();
    state.omega_t.copy_from_slice(&v[..a]);
    state.theta_c.copy_from_slice(&v[a..b]);
    state.theta_b.copy_from_slice(&v[b..]);
}

/// Final state of a music attack alongside its report.
#[derive(Debug, Clone)]
pub struct MusicAttackOutcome {
    pub result: AttackResult,
    pub state: GeneratorState,
}

/// Optimize `(ω_T, θ_c, θ_b)` from a seeded initial state.
pub fn run_music_attack(
    gen: &dyn MusicGenerator,
    model: &dyn SpeechTranslator,
    targets: &TargetSpec,
    cfg: &MusicAttackConfig,
) -> Result<MusicAttackOutcome> {
    run_music_attack_with(gen, model, targets, cfg, None)
}

/// [`run_music_attack`] with the channel sampler used when `cfg.ota_enabled`.
pub fn run_music_attack_with(
    gen: &dyn MusicGenerator,
    model: &dyn SpeechTranslator,
    targets: &TargetSpec,
    cfg: &MusicAttackConfig,
    mut channel: Option<&mut EotSampler>,
) -> Result<MusicAttackOutcome> {
    cfg.validate()?;
    if !gen.gradient_available() || !model.capabilities().gradient_available {
        return Err(Error::Unsupported("music attacks need gradient-capable adapters".into()));
    }
    if cfg.ota_enabled && channel.is_none() {
        return Err(Error::config("ota_enabled requires a channel sampler"));
    }
    if !cfg.ota_enabled {
        channel = None;
    }
    let vocab = model.vocabulary();
    targets.validate(vocab, &cfg.languages)?;
    targets.validate(vocab, &cfg.unseen_languages)?;
    let conditioning = gen.conditioning(&cfg.prompt)?;
    let mut state = gen.initial_state(conditioning, cfg.steps, cfg.seed)?;
    let mut params = flatten(&state);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, params.len());
    let mut trace = Vec::new();
    let mut realizations = Vec::new();
    let mut iteration = 0;
    let final_eval = loop {
        let ev = evaluate(gen, model, &state, targets, cfg, channel.as_deref_mut())?;
        if !ev.eval.loss.is_finite() {
            return Err(Error::OptimizationFailure {
                iteration,
                reason: format!("loss is {}", ev.eval.loss),
            });
        }
        if let Some(r) = ev.eval.realization.clone() {
            realizations.push(r);
        }
        if ev.eval.solved || iteration == cfg.max_iteration {
            break ev.eval;
        }
        let g = ev.gradient.expect("unsolved evaluations carry a gradient");
        let mut flat = g.omega_t;
        flat.extend(g.theta_c);
        flat.extend(g.theta_b);
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::OptimizationFailure {
                iteration,
                reason: "gradient is non-finite".into(),
            });
        }
        opt.step(&mut params, &flat);
        unflatten(&mut state, &params);
        trace.push(ev.eval.loss);
        iteration += 1;
    };

    let audio = to_model_rate(gen, model, gen.generate(&state)?);
    let (per_language, unseen) = decode_records(
        model,
        &audio,
        targets,
        &cfg.languages,
        &cfg.unseen_languages,
        cfg.max_decode_len,
    )?;
    let peak = audio.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let result = AttackResult {
        exact_match: per_language.values().all(|r| r.exact_match),
        adversarial_waveform: Some(crate::audio::Waveform::new(audio, model.sample_rate_hz())?),
        per_language,
        unseen,
        iterations_used: iteration,
        loss_trace: trace,
        final_loss: final_eval.loss,
        seed: cfg.seed,
        config_hash: crate::hashing::json_sha256(&(cfg, targets))?,
        max_abs_perturbation: None,
        realizations,
        music: Some(MusicReport {
            prompt: cfg.prompt.clone(),
            steps: cfg.steps,
            alpha: cfg.alpha,
            kl_weight: cfg.kl_weight,
            ota_enabled: cfg.ota_enabled,
            peak_amplitude: peak,
        }),
    };
    Ok(MusicAttackOutcome { result, state })
}
