//! Least-squares fits used to estimate decay constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Fit(format!("need at least two paired samples, got {}/{}", x.len(), y.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Fit("abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    // a perfectly flat series is fit exactly
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(LinearFit { slope, intercept, r2 })
}

/// Exponential fit `norm ≈ amplitude · e^{−rate·t}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate: f64,
    pub amplitude: f64,
    pub r2: f64,
    pub samples: usize,
}

/// Log-linear least squares on the samples with `t` inside `window`
/// (inclusive); `None` uses every sample.
pub fn decay_fit(series: &[(f64, f64)], window: Option<(f64, f64)>) -> Result<DecayFit> {
    let picked: Vec<(f64, f64)> = series
        .iter()
        .cloned()
        .filter(|(t, _)| window.map_or(true, |(a, b)| *t >= a && *t <= b))
        .collect();
    if picked.len() < 8 {
        return Err(Error::Fit(format!("decay fit needs at least 8 samples, got {}", picked.len())));
    }
    if let Some((t, v)) = picked.iter().find(|(_, v)| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::Fit(format!("non-positive sample {v} at t = {t}")));
    }
    let x: Vec<f64> = picked.iter().map(|p| p.0).collect();
    let y: Vec<f64> = picked.iter().map(|p| p.1.ln()).collect();
    let f = linear_fit(&x, &y)?;
    Ok(DecayFit { rate: -f.slope, amplitude: f.intercept.exp(), r2: f.r2, samples: picked.len() })
}

/// Smallest amplitude `A` with `values ≤ A e^{−rate t}` at every sample.
pub fn envelope_amplitude(series: &[(f64, f64)], rate: f64) -> f64 {
    series.iter().map(|(t, v)| v * (rate * t).exp()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_exponential_is_recovered() {
        let s: Vec<(f64, f64)> = (0..20).map(|k| (0.3 * k as f64, 3.0 * (-0.5 * 0.3 * k as f64).exp())).collect();
        let f = decay_fit(&s, None).unwrap();
        assert!((f.rate - 0.5).abs() < 1e-12);
        assert!((f.amplitude - 3.0).abs() < 1e-11);
        assert!((f.r2 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn constant_series_has_zero_rate() {
        let s: Vec<(f64, f64)> = (0..10).map(|k| (k as f64, 2.5)).collect();
        let f = decay_fit(&s, None).unwrap();
        assert!(f.rate.abs() < 1e-14);
    }

    #[test]
    fn noisy_series_rate_within_two_percent() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let kappa = 0.8;
        let s: Vec<(f64, f64)> = (0..200)
            .map(|k| {
                let t = 0.05 * k as f64;
                (t, (-kappa * t).exp() * (1.0 + 0.01 * rng.gen_range(-1.0..1.0)))
            })
            .collect();
        let f = decay_fit(&s, None).unwrap();
        assert!((f.rate - kappa).abs() < 0.02 * kappa);
    }

    #[test]
    fn rejects_bad_input() {
        let s: Vec<(f64, f64)> = (0..10).map(|k| (k as f64, if k == 3 { 0.0 } else { 1.0 })).collect();
        assert!(decay_fit(&s, None).is_err());
        let s: Vec<(f64, f64)> = (0..5).map(|k| (k as f64, 1.0)).collect();
        assert!(decay_fit(&s, None).is_err());
    }

    #[test]
    fn window_selects_tail() {
        let s: Vec<(f64, f64)> = (0..40)
            .map(|k| {
                let t = k as f64 * 0.25;
                (t, (-0.3 * t).exp() + 5.0 * (-4.0 * t).exp())
            })
            .collect();
        let f = decay_fit(&s, Some((5.0, 10.0))).unwrap();
        assert!((f.rate - 0.3).abs() < 1e-3);
    }
}
