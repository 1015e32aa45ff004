//! Thin helpers over `realfft` with a per-thread planner cache.

use std::cell::RefCell;

use realfft::num_complex::Complex;
use realfft::RealFftPlanner;

thread_local! {
    static PLANNER: RefCell<RealFftPlanner<f64>> = RefCell::new(RealFftPlanner::new());
}

/// Unnormalized forward real DFT. Returns `n / 2 + 1` bins.
pub fn rfft(signal: &[f64]) -> Vec<Complex<f64>> {
    let n = signal.len();
    PLANNER.with(|p| {
        let plan = p.borrow_mut().plan_fft_forward(n);
        let mut input = signal.to_vec();
        let mut output = plan.make_output_vec();
        plan.process(&mut input, &mut output)
            .expect("buffer sizes come from the plan");
        output
    })
}

/// Unnormalized inverse real DFT of length `n`. The imaginary parts of the
/// DC bin (and the Nyquist bin for even `n`) are ignored.
pub fn irfft(spectrum: &[Complex<f64>], n: usize) -> Vec<f64> {
    assert_eq!(spectrum.len(), n / 2 + 1, "spectrum length must be n/2+1");
    PLANNER.with(|p| {
        let plan = p.borrow_mut().plan_fft_inverse(n);
        let mut input = spectrum.to_vec();
        input[0].im = 0.0;
        if n.is_multiple_of(2) {
            input[n / 2].im = 0.0;
        }
        let mut output = plan.make_output_vec();
        plan.process(&mut input, &mut output)
            .expect("buffer sizes come from the plan");
        output
    })
}

/// Center frequency of bin `k` for a length-`n` transform.
#[inline]
pub fn bin_frequency(k: usize, n: usize, sample_rate_hz: u32) -> f64 {
    k as f64 * sample_rate_hz as f64 / n as f64
}

/// Zero every bin whose center frequency falls outside `[low_hz, high_hz]`.
pub fn mask_band(signal: &[f64], sample_rate_hz: u32, low_hz: f64, high_hz: f64) -> Vec<f64> {
    let n = signal.len();
    let mut spec = rfft(signal);
    for (k, bin) in spec.iter_mut().enumerate() {
        let f = bin_frequency(k, n, sample_rate_hz);
        if f < low_hz || f > high_hz {
            *bin = Complex::new(0.0, 0.0);
        }
    }
    let scale = 1.0 / n as f64;
    irfft(&spec, n).into_iter().map(|v| v * scale).collect()
}

/// Band-limited resampling by spectral truncation / zero-padding.
pub fn resample(signal: &[f64], from_hz: u32, to_hz: u32) -> Vec<f64> {
    if from_hz == to_hz || signal.is_empty() {
        return signal.to_vec();
    }
    let n = signal.len();
    let m = ((n as f64) * to_hz as f64 / from_hz as f64).round().max(1.0) as usize;
    resample_to_len(signal, m)
}

pub fn resample_to_len(signal: &[f64], m: usize) -> Vec<f64> {
    let n = signal.len();
    if m == n {
        return signal.to_vec();
    }
    let spec = rfft(signal);
    let bins = m / 2 + 1;
    let mut out = vec![Complex::new(0.0, 0.0); bins];
    let keep = bins.min(spec.len());
    out[..keep].copy_from_slice(&spec[..keep]);
    // The Nyquist bin of the shorter length folds the positive and negative
    // frequency halves together (same convention as scipy.signal.resample).
    if m < n && m.is_multiple_of(2) {
        out[m / 2] = Complex::new(2.0 * out[m / 2].re, 0.0);
    }
    if m > n && n.is_multiple_of(2) {
        out[n / 2] *= 0.5;
    }
    let scale = 1.0 / n as f64;
    irfft(&out, m).into_iter().map(|v| v * scale).collect()
}

/// Adjoint of [`resample_to_len`] from length `n`: maps a gradient on the
/// resampled signal back to the original `n` samples.
pub fn resample_to_len_vjp(grad_out: &[f64], n: usize) -> Vec<f64> {
    let m = grad_out.len();
    if m == n {
        return grad_out.to_vec();
    }
    let g = rfft(grad_out);
    let keep = (m / 2 + 1).min(n / 2 + 1);
    let weight = |k: usize, len: usize| if k == 0 || (len.is_multiple_of(2) && k == len / 2) { 1.0 } else { 2.0 };
    let mut z = vec![Complex::new(0.0, 0.0); n / 2 + 1];
    for k in 0..keep {
        let mut s = 1.0;
        if m < n && m.is_multiple_of(2) && k == m / 2 {
            s = 2.0;
        }
        if m > n && n.is_multiple_of(2) && k == n / 2 {
            s = 0.5;
        }
        z[k] = g[k] * (weight(k, m) * s / weight(k, n));
    }
    let scale = 1.0 / n as f64;
    irfft(&z, n).into_iter().map(|v| v * scale).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, n: usize, sr: u32) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin())
            .collect()
    }

    #[test]
    fn rfft_roundtrip() {
        let x: Vec<f64> = (0..37).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let back: Vec<f64> = irfft(&rfft(&x), x.len())
            .into_iter()
            .map(|v| v / x.len() as f64)
            .collect();
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn resample_preserves_low_tone() {
        let x = tone(1000.0, 1600, 16000);
        let down = resample(&x, 16000, 8000);
        assert_eq!(down.len(), 800);
        let expect = tone(1000.0, 800, 8000);
        for (a, b) in down.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-9);
        }
        let up = resample(&down, 8000, 16000);
        for (a, b) in up.iter().zip(&x) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn resample_adjoint_passes_dot_product_test() {
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        for (n, m) in [(64, 48), (64, 96), (63, 48), (64, 47), (50, 75), (75, 50), (17, 17)] {
            let x: Vec<f64> = (0..n).map(|i| ((i * 37 % 23) as f64 - 11.0) / 7.0).collect();
            let y: Vec<f64> = (0..m).map(|i| ((i * 13 % 19) as f64 - 9.0) / 5.0).collect();
            let lhs = dot(&resample_to_len(&x, m), &y);
            let rhs = dot(&x, &resample_to_len_vjp(&y, n));
            assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0), "{n}->{m}: {lhs} vs {rhs}");
        }
    }
}
