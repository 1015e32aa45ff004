//! Forward diffusion utilities and the latent prior penalty.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly increasing variance schedule `β_1 < … < β_T` in `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct NoiseSchedule {
    betas: Vec<f64>,
}

impl TryFrom<Vec<f64>> for NoiseSchedule {
    type Error = Error;

    fn try_from(betas: Vec<f64>) -> Result<Self> {
        Self::new(betas)
    }
}

impl From<NoiseSchedule> for Vec<f64> {
    fn from(s: NoiseSchedule) -> Self {
        s.betas
    }
}

impl NoiseSchedule {
    pub fn new(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::config("noise schedule needs at least one step"));
        }
        if betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::config("every beta must lie in (0, 1)"));
        }
        if betas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("betas must be strictly increasing"));
        }
        Ok(Self { betas })
    }

    /// `steps` betas evenly spaced from `beta_1` to `beta_t`.
    pub fn linear(steps: usize, beta_1: f64, beta_t: f64) -> Result<Self> {
        if steps == 1 {
            return Self::new(vec![beta_1]);
        }
        let d = (beta_t - beta_1) / (steps - 1) as f64;
        Self::new((0..steps).map(|i| beta_1 + d * i as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.betas.iter().map(|b| 1.0 - b).collect()
    }

    /// Cumulative products `ᾱ_t = Π_{s≤t} (1 − β_s)`.
    pub fn alpha_bars(&self) -> Vec<f64> {
        self.alphas()
            .into_iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect()
    }
}

/// One Markov step `ω_t ~ N(√(1−β_t)·ω_{t−1}, β_t·I)` for `1 ≤ t ≤ T`.
pub fn forward_diffuse<R: Rng>(
    omega_prev: &[f64],
    schedule: &NoiseSchedule,
    t: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if t == 0 || t > schedule.len() {
        return Err(Error::invalid(format!(
            "diffusion step {t} outside 1..={}",
            schedule.len()
        )));
    }
    let beta = schedule.betas[t - 1];
    let keep = (1.0 - beta).sqrt();
    let sd = beta.sqrt();
    Ok(omega_prev
        .iter()
        .map(|w| {
            let z: f64 = StandardNormal.sample(rng);
            keep * w + sd * z
        })
        .collect())
}

pub const DEFAULT_KL_CAP: f64 = 1e6;

/// KL divergence of a Gaussian fitted to the latent (population mean and
/// variance) from the standard normal: `½(σ² + μ² − 1 − ln σ²)`.
///
/// A zero-variance latent returns `cap`.
pub fn latent_prior_kl(omega: &[f64], cap: f64) -> Result<f64> {
    Ok(latent_prior_kl_grad(omega, cap)?.0)
}

/// [`latent_prior_kl`] with its gradient. At the cap the gradient is zero.
pub fn latent_prior_kl_grad(omega: &[f64], cap: f64) -> Result<(f64, Vec<f64>)> {
    if omega.is_empty() {
        return Err(Error::invalid("latent is empty"));
    }
    let n = omega.len() as f64;
    let mu = omega.iter().sum::<f64>() / n;
    let var = omega.iter().map(|w| (w - mu) * (w - mu)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Ok((cap, vec![0.0; omega.len()]));
    }
    let kl = 0.5 * (var + mu * mu - 1.0 - var.ln());
    if !(kl < cap) {
        return Ok((cap, vec![0.0; omega.len()]));
    }
    let d_var = 0.5 * (1.0 - 1.0 / var);
    let grad = omega
        .iter()
        .map(|w| mu / n + d_var * 2.0 * (w - mu) / n)
        .collect();
    Ok((kl, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// A latent with exactly the requested population mean and variance.
    fn latent(mu: f64, var: f64) -> Vec<f64> {
        let s = var.sqrt();
        vec![mu - s, mu + s, mu - s, mu + s]
    }

    #[test]
    fn closed_form_values() {
        assert!(latent_prior_kl(&latent(0.0, 1.0), DEFAULT_KL_CAP).unwrap().abs() <= 1e-9);
        assert!((latent_prior_kl(&latent(1.0, 1.0), DEFAULT_KL_CAP).unwrap() - 0.5).abs() <= 1e-9);
        let k = latent_prior_kl(&latent(0.0, 4.0), DEFAULT_KL_CAP).unwrap();
        assert!((k - 0.8068528194).abs() <= 1e-9, "{k}");
    }

    #[test]
    fn zero_variance_hits_cap() {
        assert_eq!(latent_prior_kl(&[0.3; 5], 123.0).unwrap(), 123.0);
        assert!(latent_prior_kl(&[], 1.0).is_err());
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let w = vec![0.3, -1.2, 2.0, 0.7, -0.1, 0.9];
        let (_, g) = latent_prior_kl_grad(&w, DEFAULT_KL_CAP).unwrap();
        let h = 1e-5;
        for i in 0..w.len() {
            let mut p = w.clone();
            p[i] += h;
            let mut m = w.clone();
            m[i] -= h;
            let fd = (latent_prior_kl(&p, DEFAULT_KL_CAP).unwrap() - latent_prior_kl(&m, DEFAULT_KL_CAP).unwrap())
                / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * fd.abs().max(1e-3));
        }
    }

    #[test]
    fn schedule_validation() {
        assert!(NoiseSchedule::new(vec![0.1, 0.1]).is_err());
        assert!(NoiseSchedule::new(vec![0.0, 0.1]).is_err());
        assert!(NoiseSchedule::new(vec![]).is_err());
        let s = NoiseSchedule::linear(4, 1e-4, 0.02).unwrap();
        let ab = s.alpha_bars();
        assert!((ab[1] - (1.0 - 1e-4) * (1.0 - s.betas()[1])).abs() < 1e-15);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<NoiseSchedule>(&json).unwrap(), s);
        assert!(serde_json::from_str::<NoiseSchedule>("[0.5, 0.2]").is_err());
    }

    #[test]
    fn tiny_beta_is_near_identity() {
        let s = NoiseSchedule::new(vec![1e-12]).unwrap();
        let x: Vec<f64> = (0..100).map(|i| (i as f64 * 0.1).sin()).collect();
        let y = forward_diffuse(&x, &s, 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let rms = (x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 100.0).sqrt();
        assert!(rms <= 1e-4);
        assert!(forward_diffuse(&x, &s, 2, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        assert!(forward_diffuse(&x, &s, 0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn seeded_steps_reproduce() {
        let s = NoiseSchedule::linear(3, 0.1, 0.3).unwrap();
        let x = vec![0.5; 16];
        let a = forward_diffuse(&x, &s, 2, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = forward_diffuse(&x, &s, 2, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn variance_is_preserved() {
        let s = NoiseSchedule::new(vec![0.3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 16;
        let trials = 10_000;
        let stats: Vec<f64> = (0..trials)
            .map(|_| {
                let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
                let y = forward_diffuse(&x, &s, 1, &mut rng).unwrap();
                y.iter().map(|v| v * v).sum::<f64>() / n as f64
            })
            .collect();
        let mean = stats.iter().sum::<f64>() / trials as f64;
        let var = stats.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
        let se = (var / trials as f64).sqrt();
        assert!((mean - 1.0).abs() <= 3.0 * se, "{mean} ± {se}");
    }

    proptest! {
        #[test]
        fn kl_is_non_negative(w in prop::collection::vec(-4.0f64..4.0, 2..50)) {
            prop_assert!(latent_prior_kl(&w, DEFAULT_KL_CAP).unwrap() >= 0.0);
        }
    }
}
