//! Latent music generators and the bundled surrogate.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};

pub const PROMPT_PRESETS: [&str; 3] = ["techno", "classical", "orchestral"];

/// Fixed conditioning: text prompt, one chord symbol and one beat strength
/// per latent frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Conditioning {
    pub prompt: String,
    pub chords: Vec<usize>,
    pub beats: Vec<f64>,
}

/// Everything the reverse chain consumes. `omega_t`, `theta_c` and
/// `theta_b` are the optimized quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorState {
    pub omega_t: Vec<f64>,
    pub theta_c: Vec<f64>,
    pub theta_b: Vec<f64>,
    pub conditioning: Conditioning,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateGradient {
    pub omega_t: Vec<f64>,
    pub theta_c: Vec<f64>,
    pub theta_b: Vec<f64>,
}

/// A generator whose output is differentiable in the initial latent and the
/// conditioning-encoder parameters.
pub trait MusicGenerator: Send + Sync {
    /// `(frames, dim)` of the latent.
    fn latent_shape(&self) -> (usize, usize);

    fn sample_rate_hz(&self) -> u32;

    fn gradient_available(&self) -> bool;

    /// Default conditioning for `prompt` with every frame filled.
    fn conditioning(&self, prompt: &str) -> Result<Conditioning>;

    /// Seeded initial latent and encoder parameters.
    fn initial_state(&self, conditioning: Conditioning, steps: usize, seed: u64) -> Result<GeneratorState>;

    fn generate(&self, state: &GeneratorState) -> Result<Vec<f64>>;

    /// Gradient of `⟨grad_out, generate(state)⟩`.
    fn generate_vjp(&self, _state: &GeneratorState, _grad_out: &[f64]) -> Result<StateGradient> {
        Err(Error::Unsupported("generator gradients are not available".into()))
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Run the reverse chain and wrap the result as a waveform.
pub fn reverse_generate(gen: &dyn MusicGenerator, state: &GeneratorState) -> Result<Waveform> {
    Waveform::new(gen.generate(state)?, gen.sample_rate_hz())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateGeneratorConfig {
    #[serde(default = "d_frames")]
    pub frames: usize,
    #[serde(default = "d_dim")]
    pub dim: usize,
    #[serde(default = "d_chords")]
    pub chord_count: usize,
    #[serde(default = "d_hop")]
    pub hop: usize,
    #[serde(default = "d_spacing")]
    pub partial_spacing_hz: f64,
    #[serde(default = "d_gain")]
    pub gain: f64,
    #[serde(default = "d_rate")]
    pub sample_rate_hz: u32,
    #[serde(default)]
    pub seed: u64,
}

fn d_frames() -> usize {
    8
}
fn d_dim() -> usize {
    16
}
fn d_chords() -> usize {
    4
}
fn d_hop() -> usize {
    512
}
fn d_spacing() -> f64 {
    250.0
}
fn d_gain() -> f64 {
    0.15
}
fn d_rate() -> u32 {
    16_000
}

impl Default for SurrogateGeneratorConfig {
    fn default() -> Self {
        Self {
            frames: d_frames(),
            dim: d_dim(),
            chord_count: d_chords(),
            hop: d_hop(),
            partial_spacing_hz: d_spacing(),
            gain: d_gain(),
            sample_rate_hz: d_rate(),
            seed: 0,
        }
    }
}

/// Desk-scale generator.
///
/// One reverse step maps latent frames `ω` (frames × dim) to
/// `tanh(A·ω_f + θ_c[chord_f] + θ_b[0] + beat_f·θ_b[1] + te(prompt))`.
/// The final latent is rendered by overlap-adding Hann-windowed grains in
/// which latent entry `d` sets the amplitude of a partial at
/// `(d + 1) · partial_spacing_hz`.
#[derive(Debug, Clone)]
pub struct SurrogateGenerator {
    cfg: SurrogateGeneratorConfig,
    mixing: Vec<f64>,
    prompts: Vec<Vec<f64>>,
    window: Vec<f64>,
    partials: Vec<Vec<f64>>,
}

impl SurrogateGenerator {
    pub fn new(cfg: SurrogateGeneratorConfig) -> Result<Self> {
        if cfg.frames == 0 || cfg.dim == 0 || cfg.chord_count == 0 || cfg.hop == 0 {
            return Err(Error::config("generator frames, dim, chord_count and hop must be positive"));
        }
        if !(cfg.partial_spacing_hz > 0.0) || !(cfg.gain > 0.0) || cfg.sample_rate_hz == 0 {
            return Err(Error::config("partial spacing, gain and sample rate must be positive"));
        }
        let dim = cfg.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let scale = 0.8 / (dim as f64).sqrt();
        let mixing = (0..dim * dim)
            .map(|_| scale * normal(&mut rng))
            .collect::<Vec<f64>>();
        let prompts = PROMPT_PRESETS
            .iter()
            .map(|_| (0..dim).map(|_| 0.3 * normal(&mut rng)).collect())
            .collect();
        let win_len = 2 * cfg.hop;
        let window = (0..win_len)
            .map(|i| (PI * i as f64 / win_len as f64).sin().powi(2))
            .collect();
        let len = (cfg.frames + 1) * cfg.hop;
        let nyquist = cfg.sample_rate_hz as f64 / 2.0;
        let partials = (0..dim)
            .map(|d| {
                let f = (d + 1) as f64 * cfg.partial_spacing_hz;
                if f >= nyquist {
                    vec![0.0; len]
                } else {
                    (0..len)
                        .map(|n| (2.0 * PI * f * n as f64 / cfg.sample_rate_hz as f64).sin())
                        .collect()
                }
            })
            .collect();
        Ok(Self {
            cfg,
            mixing,
            prompts,
            window,
            partials,
        })
    }

    pub fn config(&self) -> &SurrogateGeneratorConfig {
        &self.cfg
    }

    pub fn output_len(&self) -> usize {
        (self.cfg.frames + 1) * self.cfg.hop
    }

    fn prompt_embedding(&self, prompt: &str) -> Result<&[f64]> {
        PROMPT_PRESETS
            .iter()
            .position(|p| *p == prompt)
            .map(|i| self.prompts[i].as_slice())
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown prompt preset `{prompt}` (expected one of {})",
                    PROMPT_PRESETS.join(", ")
                ))
            })
    }

    fn validate(&self, state: &GeneratorState) -> Result<()> {
        let (frames, dim) = self.latent_shape();
        if state.steps == 0 {
            return Err(Error::config("diffusion steps must be at least 1"));
        }
        if state.omega_t.len() != frames * dim {
            return Err(Error::invalid(format!(
                "latent has {} entries, expected {}",
                state.omega_t.len(),
                frames * dim
            )));
        }
        if state.theta_c.len() != self.cfg.chord_count * dim || state.theta_b.len() != 2 * dim {
            return Err(Error::invalid("encoder parameter shapes do not match the generator"));
        }
        if state.omega_t.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("initial latent is not finite"));
        }
        let c = &state.conditioning;
        if c.chords.len() != frames || c.beats.len() != frames {
            return Err(Error::config(format!("conditioning must cover {frames} frames")));
        }
        if c.chords.iter().any(|&k| k >= self.cfg.chord_count) {
            return Err(Error::config("chord symbol out of range"));
        }
        self.prompt_embedding(&c.prompt)?;
        Ok(())
    }

    /// Latents `ω_{ds}, …, ω_0` (the first entry is `ω_T`).
    fn chain(&self, state: &GeneratorState) -> Result<Vec<Vec<f64>>> {
        self.validate(state)?;
        let (frames, dim) = self.latent_shape();
        let te = self.prompt_embedding(&state.conditioning.prompt)?;
        let c = &state.conditioning;
        let mut latents = vec![state.omega_t.clone()];
        for t in (0..state.steps).rev() {
            let prev = latents.last().expect("non-empty");
            let mut next = vec![0.0; frames * dim];
            for f in 0..frames {
                let chord = &state.theta_c[c.chords[f] * dim..(c.chords[f] + 1) * dim];
                for d in 0..dim {
                    let row = &self.mixing[d * dim..(d + 1) * dim];
                    let mut pre = chord[d] + state.theta_b[d] + c.beats[f] * state.theta_b[dim + d] + te[d];
                    for (a, w) in row.iter().zip(&prev[f * dim..(f + 1) * dim]) {
                        pre += a * w;
                    }
                    next[f * dim + d] = pre.tanh();
                }
            }
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::GenerationFailure {
                    step: t,
                    reason: "latent became non-finite".into(),
                });
            }
            latents.push(next);
        }
        Ok(latents)
    }

    fn render(&self, omega0: &[f64]) -> Vec<f64> {
        let (frames, dim) = self.latent_shape();
        let hop = self.cfg.hop;
        let mut out = vec![0.0; self.output_len()];
        for f in 0..frames {
            let start = f * hop;
            for (i, w) in self.window.iter().enumerate() {
                let n = start + i;
                let mut s = 0.0;
                for d in 0..dim {
                    s += omega0[f * dim + d] * self.partials[d][n];
                }
                out[n] += self.cfg.gain * w * s;
            }
        }
        out
    }

    fn render_vjp(&self, grad_out: &[f64]) -> Vec<f64> {
        let (frames, dim) = self.latent_shape();
        let hop = self.cfg.hop;
        let mut g = vec![0.0; frames * dim];
        for f in 0..frames {
            let start = f * hop;
            for d in 0..dim {
                let p = &self.partials[d];
                let mut acc = 0.0;
                for (i, w) in self.window.iter().enumerate() {
                    acc += grad_out[start + i] * w * p[start + i];
                }
                g[f * dim + d] = self.cfg.gain * acc;
            }
        }
        g
    }
}

impl MusicGenerator for SurrogateGenerator {
    fn latent_shape(&self) -> (usize, usize) {
        (self.cfg.frames, self.cfg.dim)
    }

    fn sample_rate_hz(&self) -> u32 {
        self.cfg.sample_rate_hz
    }

    fn gradient_available(&self) -> bool {
        true
    }

    fn conditioning(&self, prompt: &str) -> Result<Conditioning> {
        self.prompt_embedding(prompt)?;
        let frames = self.cfg.frames;
        Ok(Conditioning {
            prompt: prompt.to_string(),
            chords: (0..frames).map(|f| f % self.cfg.chord_count).collect(),
            beats: (0..frames).map(|f| if f % 2 == 0 { 1.0 } else { 0.0 }).collect(),
        })
    }

    fn initial_state(&self, conditioning: Conditioning, steps: usize, seed: u64) -> Result<GeneratorState> {
        let (frames, dim) = self.latent_shape();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = |n: usize, s: f64| -> Vec<f64> {
            (0..n).map(|_| s * normal(&mut rng)).collect()
        };
        let state = GeneratorState {
            omega_t: normal(frames * dim, 1.0),
            theta_c: normal(self.cfg.chord_count * dim, 0.1),
            theta_b: normal(2 * dim, 0.1),
            conditioning,
            steps,
        };
        self.validate(&state)?;
        Ok(state)
    }

    fn generate(&self, state: &GeneratorState) -> Result<Vec<f64>> {
        let latents = self.chain(state)?;
        Ok(self.render(latents.last().expect("non-empty")))
    }

    fn generate_vjp(&self, state: &GeneratorState, grad_out: &[f64]) -> Result<StateGradient> {
        if grad_out.len() != self.output_len() {
            return Err(Error::invalid("gradient length does not match the generated audio"));
        }
        let latents = self.chain(state)?;
        let (frames, dim) = self.latent_shape();
        let c = &state.conditioning;
        let mut g_theta_c = vec![0.0; state.theta_c.len()];
        let mut g_theta_b = vec![0.0; state.theta_b.len()];
        let mut g = self.render_vjp(grad_out);
        for k in (1..latents.len()).rev() {
            let out = &latents[k];
            let mut g_prev = vec![0.0; frames * dim];
            for f in 0..frames {
                for d in 0..dim {
                    let y = out[f * dim + d];
                    let gp = g[f * dim + d] * (1.0 - y * y);
                    g_theta_c[c.chords[f] * dim + d] += gp;
                    g_theta_b[d] += gp;
                    g_theta_b[dim + d] += c.beats[f] * gp;
                    let row = &self.mixing[d * dim..(d + 1) * dim];
                    for (e, a) in row.iter().enumerate() {
                        g_prev[f * dim + e] += a * gp;
                    }
                }
            }
            g = g_prev;
        }
        Ok(StateGradient {
            omega_t: g,
            theta_c: g_theta_c,
            theta_b: g_theta_b,
        })
    }
}
