//! Signal-processing defenses applied to (possibly adversarial) audio.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use realfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use super::{mix_at_snr, spectral, Waveform};
use crate::error::{Error, Result};

/// One defense transform and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DefenseSpec {
    Lowpass {
        #[serde(default = "default_cutoff")]
        cutoff_hz: f64,
    },
    Codec {
        #[serde(default = "default_bitrate")]
        bitrate_kbps: f64,
    },
    Noise {
        #[serde(default = "default_noise_snr")]
        snr_db: f64,
        #[serde(default)]
        seed: u64,
    },
    Quantize {
        #[serde(default = "default_bits")]
        bits: u32,
    },
    Resample {
        #[serde(default = "default_target_rate")]
        target_rate_hz: u32,
    },
}

fn default_cutoff() -> f64 {
    6000.0
}
fn default_bitrate() -> f64 {
    64.0
}
fn default_noise_snr() -> f64 {
    64.0
}
fn default_bits() -> u32 {
    8
}
fn default_target_rate() -> u32 {
    12_000
}

impl DefenseSpec {
    /// The five reference settings: 6 kHz LPF, 64 kbps codec, 64 dB noise,
    /// 8-bit quantization and 12 kHz resampling.
    pub fn reference_set() -> Vec<DefenseSpec> {
        vec![
            DefenseSpec::Lowpass {
                cutoff_hz: default_cutoff(),
            },
            DefenseSpec::Codec {
                bitrate_kbps: default_bitrate(),
            },
            DefenseSpec::Noise {
                snr_db: default_noise_snr(),
                seed: 0,
            },
            DefenseSpec::Quantize {
                bits: default_bits(),
            },
            DefenseSpec::Resample {
                target_rate_hz: default_target_rate(),
            },
        ]
    }

    /// Build from a kind name with default parameters.
    pub fn from_kind(kind: &str) -> Result<DefenseSpec> {
        Ok(match kind {
            "lowpass" => DefenseSpec::Lowpass {
                cutoff_hz: default_cutoff(),
            },
            "codec" => DefenseSpec::Codec {
                bitrate_kbps: default_bitrate(),
            },
            "noise" => DefenseSpec::Noise {
                snr_db: default_noise_snr(),
                seed: 0,
            },
            "quantize" => DefenseSpec::Quantize {
                bits: default_bits(),
            },
            "resample" => DefenseSpec::Resample {
                target_rate_hz: default_target_rate(),
            },
            other => return Err(Error::config(format!("unknown defense kind `{other}`"))),
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            DefenseSpec::Lowpass { .. } => "lowpass",
            DefenseSpec::Codec { .. } => "codec",
            DefenseSpec::Noise { .. } => "noise",
            DefenseSpec::Quantize { .. } => "quantize",
            DefenseSpec::Resample { .. } => "resample",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            DefenseSpec::Lowpass { cutoff_hz } => *cutoff_hz > 0.0 && cutoff_hz.is_finite(),
            DefenseSpec::Codec { bitrate_kbps } => *bitrate_kbps > 0.0 && bitrate_kbps.is_finite(),
            DefenseSpec::Noise { snr_db, .. } => *snr_db > 0.0 && !snr_db.is_nan(),
            DefenseSpec::Quantize { bits } => (2..=32).contains(bits),
            DefenseSpec::Resample { target_rate_hz } => *target_rate_hz > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid parameters for defense {self:?}")))
        }
    }
}

/// External encoder/decoder round trip (e.g. a real MP3 codec).
pub trait CodecHook: Send + Sync {
    fn name(&self) -> &str;
    fn encode_decode(&self, w: &Waveform, bitrate_kbps: f64) -> Result<Waveform>;
}

#[derive(Clone)]
pub struct DefenseContext {
    pub codec_hook: Option<Arc<dyn CodecHook>>,
    pub allow_codec_fallback: bool,
}

impl Default for DefenseContext {
    fn default() -> Self {
        Self {
            codec_hook: None,
            allow_codec_fallback: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseOutput {
    #[serde(skip)]
    pub waveform: Option<Waveform>,
    pub kind: String,
    /// Set when the codec defense ran on the built-in spectral simulation
    /// instead of a real encoder.
    pub simulated_codec: bool,
    pub note: Option<String>,
}

impl DefenseOutput {
    pub fn waveform(&self) -> &Waveform {
        self.waveform.as_ref().expect("defense output carries its waveform")
    }
}

pub fn apply_defense(w: &Waveform, spec: &DefenseSpec, ctx: &DefenseContext) -> Result<DefenseOutput> {
    spec.validate()?;
    let sr = w.sample_rate_hz();
    let mut simulated = false;
    let mut note = None;
    let out = match spec {
        DefenseSpec::Lowpass { cutoff_hz } => {
            Waveform::new(spectral::mask_band(w.samples(), sr, 0.0, *cutoff_hz), sr)?
        }
        DefenseSpec::Quantize { bits } => Waveform::new(quantize(w.samples(), *bits), sr)?,
        DefenseSpec::Resample { target_rate_hz } => {
            let down = spectral::resample(w.samples(), sr, *target_rate_hz);
            Waveform::new(spectral::resample_to_len(&down, w.len()), sr)?
        }
        DefenseSpec::Noise { snr_db, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let noise: Vec<f64> = (0..w.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
            mix_at_snr(w, &Waveform::new(noise, sr)?, *snr_db)?
        }
        DefenseSpec::Codec { bitrate_kbps } => match (&ctx.codec_hook, ctx.allow_codec_fallback) {
            (Some(hook), _) => {
                note = Some(format!("external codec `{}`", hook.name()));
                hook.encode_decode(w, *bitrate_kbps)?
            }
            (None, true) => {
                simulated = true;
                note = Some(format!(
                    "simulated codec: per-band spectral magnitude quantization at {bitrate_kbps} kbps"
                ));
                Waveform::new(simulate_codec(w.samples(), sr, *bitrate_kbps), sr)?
            }
            (None, false) => {
                return Err(Error::Unsupported(
                    "codec defense needs an external codec hook (fallback disabled)".into(),
                ))
            }
        },
    };
    Ok(DefenseOutput {
        waveform: Some(out),
        kind: spec.kind().to_string(),
        simulated_codec: simulated,
        note,
    })
}

/// Uniform mid-tread quantization to `bits` signed bits after clipping.
pub fn quantize(samples: &[f64], bits: u32) -> Vec<f64> {
    let q = ((1u64 << (bits - 1)) - 1) as f64;
    samples
        .iter()
        .map(|s| (s.clamp(-1.0, 1.0) * q).round() / q)
        .collect()
}

const CODEC_FRAME: usize = 512;
const CODEC_HOP: usize = CODEC_FRAME / 2;
const CODEC_BANDS: usize = 16;

/// Rough stand-in for a lossy perceptual codec: weighted overlap-add STFT,
/// with each band's magnitudes quantized to a level count derived from the
/// bit budget per frame. Phases are kept.
fn simulate_codec(samples: &[f64], sample_rate_hz: u32, bitrate_kbps: f64) -> Vec<f64> {
    let n = samples.len();
    let bins = CODEC_FRAME / 2 + 1;
    let bits_per_hop = bitrate_kbps * 1000.0 * CODEC_HOP as f64 / sample_rate_hz as f64;
    let bits_per_bin = (bits_per_hop / bins as f64).floor().clamp(1.0, 16.0);
    let levels = 2f64.powf(bits_per_bin) - 1.0;

    // sqrt of a periodic Hann window: analysis·synthesis sums to one at 50% overlap
    let window: Vec<f64> = (0..CODEC_FRAME)
        .map(|i| {
            let h = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / CODEC_FRAME as f64).cos();
            h.sqrt()
        })
        .collect();

    let mut padded = vec![0.0; CODEC_FRAME];
    padded.extend_from_slice(samples);
    padded.resize(n + 2 * CODEC_FRAME + CODEC_HOP - n % CODEC_HOP, 0.0);
    let mut out = vec![0.0; padded.len()];

    let band_of = |k: usize| (k * CODEC_BANDS / bins).min(CODEC_BANDS - 1);
    let mut start = 0;
    while start + CODEC_FRAME <= padded.len() {
        let frame: Vec<f64> = padded[start..start + CODEC_FRAME]
            .iter()
            .zip(&window)
            .map(|(s, w)| s * w)
            .collect();
        let mut spec = spectral::rfft(&frame);
        let mut band_max = [0.0f64; CODEC_BANDS];
        for (k, c) in spec.iter().enumerate() {
            let b = band_of(k);
            band_max[b] = band_max[b].max(c.norm());
        }
        for (k, c) in spec.iter_mut().enumerate() {
            let peak = band_max[band_of(k)];
            if peak <= 0.0 {
                continue;
            }
            let mag = c.norm();
            let qmag = (mag / peak * levels).round() / levels * peak;
            *c = if mag > 0.0 {
                *c * (qmag / mag)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        let rec = spectral::irfft(&spec, CODEC_FRAME);
        for (i, v) in rec.iter().enumerate() {
            out[start + i] += v / CODEC_FRAME as f64 * window[i];
        }
        start += CODEC_HOP;
    }
    out[CODEC_FRAME..CODEC_FRAME + n].to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(freq: f64, n: usize, sr: u32) -> Waveform {
        Waveform::new(
            (0..n)
                .map(|i| 0.5 * (2.0 * PI * freq * i as f64 / sr as f64).sin())
                .collect(),
            sr,
        )
        .unwrap()
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(&[0.0], 8), vec![0.0]);
        let v = quantize(&[0.3], 8)[0];
        assert!((v - 38.0 / 127.0).abs() < 1e-12);
        assert!((v - 0.299_212_598_4).abs() < 1e-10);
    }

    #[test]
    fn quantize_error_bound_and_idempotence() {
        let x: Vec<f64> = (0..2000).map(|i| ((i as f64) * 0.013).sin() * 1.2).collect();
        let q = quantize(&x, 8);
        for (a, b) in x.iter().zip(&q) {
            assert!((a.clamp(-1.0, 1.0) - b).abs() <= 1.0 / 127.0 + 1e-12);
        }
        assert_eq!(quantize(&q, 8), q);
    }

    #[test]
    fn lowpass_attenuates_tone_above_cutoff() {
        let w = tone(7000.0, 16000, 16000);
        let out = apply_defense(&w, &DefenseSpec::from_kind("lowpass").unwrap(), &Default::default())
            .unwrap();
        let att = 10.0 * (w.power() / out.waveform().power().max(1e-300)).log10();
        assert!(att >= 40.0, "attenuation {att} dB");
    }

    #[test]
    fn resample_keeps_in_band_tone() {
        let w = tone(2000.0, 4000, 16000);
        let out = apply_defense(&w, &DefenseSpec::from_kind("resample").unwrap(), &Default::default())
            .unwrap();
        let err: f64 = out
            .waveform()
            .samples()
            .iter()
            .zip(w.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-9);
    }

    #[test]
    fn codec_fallback_is_flagged_and_hook_required_without_it() {
        let w = tone(1000.0, 3000, 16000);
        let spec = DefenseSpec::from_kind("codec").unwrap();
        let out = apply_defense(&w, &spec, &DefenseContext::default()).unwrap();
        assert!(out.simulated_codec);
        assert_eq!(out.waveform().len(), w.len());
        let err: Vec<f64> = out
            .waveform()
            .samples()
            .iter()
            .zip(w.samples())
            .map(|(a, b)| a - b)
            .collect();
        // a pure tone survives the simulated codec mostly intact
        assert!(crate::audio::mean_power(&err) < 0.05 * w.power());

        let strict = DefenseContext {
            codec_hook: None,
            allow_codec_fallback: false,
        };
        assert!(matches!(apply_defense(&w, &spec, &strict), Err(Error::Unsupported(_))));
    }

    #[test]
    fn noise_defense_is_seeded() {
        let w = tone(1000.0, 1000, 16000);
        let spec = DefenseSpec::from_kind("noise").unwrap();
        let a = apply_defense(&w, &spec, &Default::default()).unwrap();
        let b = apply_defense(&w, &spec, &Default::default()).unwrap();
        assert_eq!(a.waveform(), b.waveform());
        let added: Vec<f64> = a
            .waveform()
            .samples()
            .iter()
            .zip(w.samples())
            .map(|(x, y)| x - y)
            .collect();
        assert!((crate::audio::snr_db(w.samples(), &added) - 64.0).abs() < 0.1);
    }

    #[test]
    fn unknown_kind_and_bad_params_are_config_errors() {
        assert!(matches!(DefenseSpec::from_kind("reverb"), Err(Error::Config(_))));
        let parsed: std::result::Result<DefenseSpec, _> =
            serde_json::from_str(r#"{"kind":"reverb"}"#);
        assert!(parsed.is_err());
        let w = tone(1000.0, 100, 16000);
        let bad = DefenseSpec::Lowpass { cutoff_hz: -1.0 };
        assert!(matches!(apply_defense(&w, &bad, &Default::default()), Err(Error::Config(_))));
    }
}
