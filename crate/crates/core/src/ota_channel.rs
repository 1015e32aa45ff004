//! Simulated over-the-air playback: interfering speech, room reverberation
//! and microphone noise.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audio::wav::read_wav;
use crate::audio::{convolve_truncated, convolve_vjp, snr_gain, Waveform};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    /// Directory of interfering speech WAVs; `None` disables the overlay.
    #[serde(default)]
    pub speech_corpus_dir: Option<PathBuf>,
    /// Directory of impulse-response WAVs; `None` disables reverberation.
    #[serde(default)]
    pub rir_dir: Option<PathBuf>,
    #[serde(default = "default_rir_probability")]
    pub rir_probability: f64,
    #[serde(default = "default_speech_snr")]
    pub speech_snr_db: [f64; 2],
    /// White-noise SNR range; `None` disables the noise stage.
    #[serde(default = "default_noise_snr")]
    pub white_noise_snr_db: Option<[f64; 2]>,
    #[serde(default)]
    pub seed: u64,
}

fn default_rir_probability() -> f64 {
    0.5
}

fn default_speech_snr() -> [f64; 2] {
    [5.0, 20.0]
}

fn default_noise_snr() -> Option<[f64; 2]> {
    Some([40.0, 60.0])
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            speech_corpus_dir: None,
            rir_dir: None,
            rir_probability: default_rir_probability(),
            speech_snr_db: default_speech_snr(),
            white_noise_snr_db: default_noise_snr(),
            seed: 0,
        }
    }
}

impl ChannelConfig {
    /// A configuration with every stage switched off.
    pub fn disabled() -> Self {
        Self {
            white_noise_snr_db: None,
            rir_probability: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rir_probability) {
            return Err(Error::config(format!(
                "rir_probability must be in [0, 1], got {}",
                self.rir_probability
            )));
        }
        check_range("speech_snr_db", self.speech_snr_db)?;
        if let Some(r) = self.white_noise_snr_db {
            check_range("white_noise_snr_db", r)?;
        }
        Ok(())
    }
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    let ok = |v: f64| v.is_finite() || v == f64::INFINITY;
    if !(ok(r[0]) && ok(r[1]) && r[0] <= r[1]) {
        return Err(Error::config(format!("{name} must be an ordered range, got {r:?}")));
    }
    Ok(())
}

/// Interfering speech clips and impulse responses, keyed by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChannelAssets {
    speech: BTreeMap<String, Vec<f64>>,
    rirs: BTreeMap<String, Vec<f64>>,
}

impl ChannelAssets {
    /// Build from in-memory clips. Impulse responses are peak-normalized.
    pub fn from_clips(
        speech: impl IntoIterator<Item = (String, Vec<f64>)>,
        rirs: impl IntoIterator<Item = (String, Vec<f64>)>,
    ) -> Result<Self> {
        let mut out = Self::default();
        for (name, clip) in speech {
            if clip.is_empty() || !(crate::audio::mean_power(&clip) > 0.0) {
                return Err(Error::config(format!("speech clip {name} is silent")));
            }
            out.speech.insert(name, clip);
        }
        for (name, rir) in rirs {
            out.rirs.insert(name.clone(), peak_normalize(&name, rir)?);
        }
        Ok(out)
    }

    /// Load the directories named by `cfg`, resampling to `sample_rate_hz`.
    pub fn load(cfg: &ChannelConfig, sample_rate_hz: u32) -> Result<Self> {
        let speech = match &cfg.speech_corpus_dir {
            Some(dir) => load_dir(dir, sample_rate_hz)?,
            None => Vec::new(),
        };
        let rirs = match &cfg.rir_dir {
            Some(dir) if cfg.rir_probability > 0.0 => load_dir(dir, sample_rate_hz)?,
            _ => Vec::new(),
        };
        Self::from_clips(speech, rirs)
    }

    pub fn speech_names(&self) -> impl Iterator<Item = &str> {
        self.speech.keys().map(String::as_str)
    }

    pub fn rir_names(&self) -> impl Iterator<Item = &str> {
        self.rirs.keys().map(String::as_str)
    }

    fn speech(&self, name: &str) -> Result<&[f64]> {
        self.speech
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::config(format!("unknown speech clip {name}")))
    }

    fn rir(&self, name: &str) -> Result<&[f64]> {
        self.rirs
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::config(format!("unknown impulse response {name}")))
    }
}

fn peak_normalize(name: &str, rir: Vec<f64>) -> Result<Vec<f64>> {
    let peak = rir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(peak > 0.0) || !peak.is_finite() {
        return Err(Error::config(format!("impulse response {name} is empty or silent")));
    }
    Ok(rir.into_iter().map(|v| v / peak).collect())
}

fn load_dir(dir: &Path, sample_rate_hz: u32) -> Result<Vec<(String, Vec<f64>)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_wav = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
        if is_wav {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::config(format!("{} contains no WAV files", dir.display())));
    }
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
            Ok((name, read_wav(&p, Some(sample_rate_hz))?.into_samples()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeechOverlay {
    pub clip: String,
    pub offset: usize,
    pub snr_db: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseStage {
    pub seed: u64,
    pub snr_db: f64,
    pub gain: f64,
}

/// Everything needed to replay one channel draw.
///
/// With the realization fixed the transform is affine in the input:
/// `apply(w) = h * (w + s) + n`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    pub speech: Option<SpeechOverlay>,
    pub rir: Option<String>,
    pub noise: Option<NoiseStage>,
}

impl Realization {
    pub fn is_identity(&self) -> bool {
        self.speech.is_none() && self.rir.is_none() && self.noise.is_none()
    }

    pub fn apply(&self, samples: &[f64], assets: &ChannelAssets) -> Result<Vec<f64>> {
        let mut x = samples.to_vec();
        if let Some(s) = &self.speech {
            let clip = assets.speech(&s.clip)?;
            for (i, v) in x.iter_mut().enumerate() {
                *v += s.gain * clip[(s.offset + i) % clip.len()];
            }
        }
        if let Some(name) = &self.rir {
            x = convolve_truncated(&x, assets.rir(name)?);
        }
        if let Some(n) = &self.noise {
            for (v, z) in x.iter_mut().zip(white_noise(n.seed, samples.len())) {
                *v += n.gain * z;
            }
        }
        Ok(x)
    }

    /// Gradient of `⟨grad_out, apply(w)⟩` with respect to `w`.
    pub fn vjp(&self, grad_out: &[f64], assets: &ChannelAssets) -> Result<Vec<f64>> {
        match &self.rir {
            Some(name) => Ok(convolve_vjp(grad_out, assets.rir(name)?)),
            None => Ok(grad_out.to_vec()),
        }
    }

    pub fn apply_waveform(&self, w: &Waveform, assets: &ChannelAssets) -> Result<Waveform> {
        Waveform::new(self.apply(w.samples(), assets)?, w.sample_rate_hz())
    }
}

fn white_noise(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn draw_snr<R: Rng>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..range[1])
    }
}

/// Draw a realization for input `samples` and return it with the distorted
/// signal. Gains are computed from the signal at each stage.
pub fn sample_realization<R: Rng>(
    samples: &[f64],
    cfg: &ChannelConfig,
    assets: &ChannelAssets,
    rng: &mut R,
) -> Result<(Vec<f64>, Realization)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("cannot transmit an empty waveform"));
    }
    let mut real = Realization::default();
    let mut x = samples.to_vec();

    if cfg.speech_corpus_dir.is_some() || !assets.speech.is_empty() {
        if assets.speech.is_empty() {
            return Err(Error::config("speech overlay is enabled but no speech clips are loaded"));
        }
        let names: Vec<&String> = assets.speech.keys().collect();
        let name = names[rng.random_range(0..names.len())].clone();
        let clip = &assets.speech[&name];
        let offset = rng.random_range(0..clip.len());
        let snr_db = draw_snr(rng, cfg.speech_snr_db);
        let segment: Vec<f64> = (0..x.len()).map(|i| clip[(offset + i) % clip.len()]).collect();
        let gain = snr_gain(&x, &segment, snr_db)?;
        real.speech = Some(SpeechOverlay {
            clip: name,
            offset,
            snr_db,
            gain,
        });
    }
    x = real.apply(samples, assets)?;

    if cfg.rir_probability > 0.0 && (cfg.rir_dir.is_some() || !assets.rirs.is_empty()) {
        if assets.rirs.is_empty() {
            return Err(Error::config("reverberation is enabled but no impulse responses are loaded"));
        }
        if rng.random_bool(cfg.rir_probability) {
            let names: Vec<&String> = assets.rirs.keys().collect();
            let name = names[rng.random_range(0..names.len())].clone();
            x = convolve_truncated(&x, &assets.rirs[&name]);
            real.rir = Some(name);
        }
    }

    if let Some(range) = cfg.white_noise_snr_db {
        let snr_db = draw_snr(rng, range);
        let seed: u64 = rng.random();
        let noise = white_noise(seed, x.len());
        let gain = snr_gain(&x, &noise, snr_db)?;
        for (v, z) in x.iter_mut().zip(&noise) {
            *v += gain * z;
        }
        real.noise = Some(NoiseStage { seed, snr_db, gain });
    }
    Ok((x, real))
}

/// One random channel pass over a waveform.
pub fn apply_channel<R: Rng>(
    w: &Waveform,
    cfg: &ChannelConfig,
    assets: &ChannelAssets,
    rng: &mut R,
) -> Result<(Waveform, Realization)> {
    let (samples, real) = sample_realization(w.samples(), cfg, assets, rng)?;
    Ok((Waveform::new(samples, w.sample_rate_hz())?, real))
}

/// Seeded stream of channel realizations, one per optimization step.
#[derive(Debug, Clone)]
pub struct EotSampler {
    cfg: ChannelConfig,
    assets: ChannelAssets,
    rng: ChaCha8Rng,
}

/// Build a sampler whose stream is fixed by `cfg.seed`.
pub fn make_eot_sampler(cfg: &ChannelConfig, assets: ChannelAssets) -> Result<EotSampler> {
    cfg.validate()?;
    Ok(EotSampler {
        cfg: cfg.clone(),
        assets,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    })
}

impl EotSampler {
    pub fn config(&self) -> &ChannelConfig {
        &self.cfg
    }

    pub fn assets(&self) -> &ChannelAssets {
        &self.assets
    }

    /// Draw the next realization for `samples`, returning the transformed signal.
    pub fn sample(&mut self, samples: &[f64]) -> Result<(Vec<f64>, Realization)> {
        sample_realization(samples, &self.cfg, &self.assets, &mut self.rng)
    }

    pub fn vjp(&self, real: &Realization, grad_out: &[f64]) -> Result<Vec<f64>> {
        real.vjp(grad_out, &self.assets)
    }
}
