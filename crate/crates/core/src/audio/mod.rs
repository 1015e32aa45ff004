//! Differentiable audio primitives used by the attacks, plus the defense
//! transforms and WAV I/O.
//!
//! Every operation here is a pure function of its inputs. The ones that sit
//! inside an optimization loop come with an explicit vector-Jacobian product
//! (`*_vjp`) so gradients can be chained by hand.

pub mod defense;
pub mod spectral;
pub mod wav;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use defense::{apply_defense, CodecHook, DefenseContext, DefenseOutput, DefenseSpec};

pub const DEFAULT_SAMPLE_RATE_HZ: u32 = 16_000;

/// Mono audio with samples nominally in `[-1, 1]`.
///
/// Samples may leave that range during optimization; clipping only happens
/// when writing to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("waveform must contain at least one sample"));
        }
        if sample_rate_hz == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Mean square of the samples.
    pub fn power(&self) -> f64 {
        mean_power(&self.samples)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, s| m.max(s.abs()))
    }

    /// Samples clipped to `[-1, 1]`, as written to disk.
    pub fn clipped(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.clamp(-1.0, 1.0)).collect()
    }

    pub fn resampled(&self, target_hz: u32) -> Result<Waveform> {
        Waveform::new(
            spectral::resample(&self.samples, self.sample_rate_hz, target_hz),
            target_hz,
        )
    }
}

pub fn mean_power(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64
}

/// ℓ∞ budget and frequency band for additive perturbations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationBudget {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_band_low")]
    pub band_low_hz: f64,
    #[serde(default = "default_band_high")]
    pub band_high_hz: f64,
}

fn default_epsilon() -> f64 {
    0.1
}
fn default_band_low() -> f64 {
    1000.0
}
fn default_band_high() -> f64 {
    4000.0
}

impl Default for PerturbationBudget {
    fn default() -> Self {
        Self {
            epsilon: default_epsilon(),
            band_low_hz: default_band_low(),
            band_high_hz: default_band_high(),
        }
    }
}

impl PerturbationBudget {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }

    pub fn validate(&self, sample_rate_hz: u32) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config(format!(
                "epsilon must be positive and finite, got {}",
                self.epsilon
            )));
        }
        let nyquist = sample_rate_hz as f64 / 2.0;
        if !(self.band_low_hz >= 0.0
            && self.band_low_hz < self.band_high_hz
            && self.band_high_hz < nyquist)
        {
            return Err(Error::config(format!(
                "band [{}, {}] Hz must satisfy 0 <= low < high < {nyquist} Hz",
                self.band_low_hz, self.band_high_hz
            )));
        }
        Ok(())
    }
}

/// `ε·tanh(δ_raw)`, element-wise.
///
/// `tanh` rounds to exactly ±1 for |x| ≳ 19 in double precision; those
/// values are pulled back to the largest float below ε so the bound stays
/// strict.
pub fn project_perturbation(delta_raw: &[f64], budget: &PerturbationBudget) -> Result<Vec<f64>> {
    if let Some(i) = delta_raw.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!(
            "non-finite perturbation value at index {i}"
        )));
    }
    let eps = budget.epsilon;
    let cap = eps.next_down();
    Ok(delta_raw
        .iter()
        .map(|v| (eps * v.tanh()).clamp(-cap, cap))
        .collect())
}

/// Gradient of [`project_perturbation`]: `g · ε·(1 − tanh²)`.
pub fn project_perturbation_vjp(
    delta_raw: &[f64],
    budget: &PerturbationBudget,
    grad_out: &[f64],
) -> Vec<f64> {
    delta_raw
        .iter()
        .zip(grad_out)
        .map(|(v, g)| {
            let t = v.tanh();
            g * budget.epsilon * (1.0 - t * t)
        })
        .collect()
}

/// Frequency-bin masking to `[band_low_hz, band_high_hz]`.
///
/// The operator is a real symmetric projection, so it is its own adjoint:
/// the backward pass is `bandpass(grad)`.
pub fn bandpass(w: &[f64], budget: &PerturbationBudget, sample_rate_hz: u32) -> Result<Vec<f64>> {
    if w.len() < 2 {
        return Err(Error::invalid("bandpass needs at least two samples"));
    }
    budget.validate(sample_rate_hz)?;
    Ok(spectral::mask_band(
        w,
        sample_rate_hz,
        budget.band_low_hz,
        budget.band_high_hz,
    ))
}

/// Full linear convolution truncated to the input length.
pub fn convolve(w: &Waveform, impulse_response: &[f64]) -> Result<Waveform> {
    if impulse_response.is_empty() {
        return Err(Error::invalid("impulse response is empty"));
    }
    Waveform::new(
        convolve_truncated(w.samples(), impulse_response),
        w.sample_rate_hz(),
    )
}

const DIRECT_CONV_LIMIT: usize = 1 << 16;

pub(crate) fn convolve_truncated(x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = x.len();
    let taps = h.len().min(n);
    if n == 0 {
        return Vec::new();
    }
    if n * taps <= DIRECT_CONV_LIMIT {
        let mut out = vec![0.0; n];
        for (i, o) in out.iter_mut().enumerate() {
            let kmax = taps.min(i + 1);
            let mut acc = 0.0;
            for (k, hk) in h.iter().enumerate().take(kmax) {
                acc += hk * x[i - k];
            }
            *o = acc;
        }
        return out;
    }
    let len = (n + taps - 1).next_power_of_two();
    let mut xa = x.to_vec();
    xa.resize(len, 0.0);
    let mut ha = h[..taps].to_vec();
    ha.resize(len, 0.0);
    let xs = spectral::rfft(&xa);
    let hs = spectral::rfft(&ha);
    let prod: Vec<_> = xs.iter().zip(&hs).map(|(a, b)| a * b).collect();
    let scale = 1.0 / len as f64;
    let mut out = spectral::irfft(&prod, len);
    out.truncate(n);
    out.iter_mut().for_each(|v| *v *= scale);
    out
}

/// Adjoint of [`convolve_truncated`] with respect to `x`:
/// `g_in[n] = Σ_k h[k]·g_out[n+k]`.
pub fn convolve_vjp(grad_out: &[f64], impulse_response: &[f64]) -> Vec<f64> {
    let reversed: Vec<f64> = grad_out.iter().rev().copied().collect();
    let mut g = convolve_truncated(&reversed, impulse_response);
    g.reverse();
    g
}

/// Tile or truncate `noise` to exactly `len` samples.
pub fn fit_length(noise: &[f64], len: usize) -> Vec<f64> {
    noise.iter().copied().cycle().take(len).collect()
}

/// Gain that brings `noise` to `snr_db` below `signal`. Infinite SNR yields 0.
pub fn snr_gain(signal: &[f64], noise: &[f64], snr_db: f64) -> Result<f64> {
    if snr_db == f64::INFINITY {
        return Ok(0.0);
    }
    if !snr_db.is_finite() {
        return Err(Error::invalid(format!("invalid SNR {snr_db} dB")));
    }
    let p_noise = mean_power(noise);
    if !(p_noise > 0.0) {
        return Err(Error::invalid("noise has zero power"));
    }
    let p_signal = mean_power(signal);
    Ok((p_signal / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt())
}

/// `signal + g·noise` with `g` chosen so the mixture has the requested SNR.
///
/// `snr_db = +∞` disables the noise entirely.
pub fn mix_at_snr(signal: &Waveform, noise: &Waveform, snr_db: f64) -> Result<Waveform> {
    Ok(mix_at_snr_with_gain(signal, noise, snr_db)?.0)
}

/// Same as [`mix_at_snr`], also returning the applied gain.
pub fn mix_at_snr_with_gain(
    signal: &Waveform,
    noise: &Waveform,
    snr_db: f64,
) -> Result<(Waveform, f64)> {
    if snr_db == f64::INFINITY {
        return Ok((signal.clone(), 0.0));
    }
    if signal.sample_rate_hz() != noise.sample_rate_hz() {
        return Err(Error::config(format!(
            "sample rate mismatch: signal {} Hz, noise {} Hz",
            signal.sample_rate_hz(),
            noise.sample_rate_hz()
        )));
    }
    let fitted = fit_length(noise.samples(), signal.len());
    let gain = snr_gain(signal.samples(), &fitted, snr_db)?;
    let mixed = signal
        .samples()
        .iter()
        .zip(&fitted)
        .map(|(s, n)| s + gain * n)
        .collect();
    Ok((Waveform::new(mixed, signal.sample_rate_hz())?, gain))
}

/// Achieved SNR in dB between a clean signal and the additive component.
pub fn snr_db(signal: &[f64], noise: &[f64]) -> f64 {
    10.0 * (mean_power(signal) / mean_power(noise)).log10()
}
