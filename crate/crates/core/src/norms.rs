//! `L²`, weighted sup and bracket norms on distribution fields.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::{DistributionField, SpatialGrid};
use crate::velocity::VelocityGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    #[serde(rename = "L2")]
    pub l2: f64,
    #[serde(rename = "Linf_beta")]
    pub linf_beta: f64,
    pub bracket: f64,
    pub beta: f64,
}

/// Precomputed weights for repeated norm evaluation on one pair of grids.
#[derive(Debug, Clone)]
pub struct NormWeights {
    pub beta: f64,
    xw: Vec<f64>,
    vw: f64,
    bracket_beta: Vec<f64>,
    /// `e^{i k·x′}` per tangential sample and mode
    phases: Vec<Vec<Complex64>>,
}

impl NormWeights {
    pub fn new(beta: f64, vgrid: &VelocityGrid, xgrid: &SpatialGrid) -> Result<Self> {
        if !(beta > 1.5) {
            return Err(Error::InvalidParameter(format!("β must exceed 3/2, got {beta}")));
        }
        let phases = xgrid
            .tangential_samples()
            .iter()
            .map(|p| {
                (0..xgrid.n_modes())
                    .map(|m| {
                        let k = xgrid.wave_vector(m);
                        Complex64::from_polar(1.0, k[0] * p[0] + k[1] * p[1])
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            beta,
            xw: xgrid.quad_weights(),
            vw: vgrid.weight(),
            bracket_beta: vgrid.brackets().iter().map(|b| b.powf(beta)).collect(),
            phases,
        })
    }

    /// `‖f‖²` over `(x₁, ξ)` per unit tangential area (Parseval over modes).
    pub fn l2(&self, f: &DistributionField) -> f64 {
        let stride = f.n_modes * f.n_v;
        let mut s = 0.0;
        for (ix, chunk) in f.data.chunks(stride).enumerate() {
            let local: f64 = chunk.iter().map(|v| v.norm_sqr()).sum();
            s += self.xw[ix] * local;
        }
        (self.vw * s).sqrt()
    }

    /// `sup_{x, ξ} ⟨ξ⟩^β |f|`, with `x′` sampled on the tangential cell.
    pub fn linf_beta(&self, f: &DistributionField) -> f64 {
        let mut best = 0.0f64;
        if f.n_modes == 1 {
            for chunk in f.data.chunks(f.n_v) {
                for (v, w) in chunk.iter().zip(&self.bracket_beta) {
                    best = best.max(v.norm() * w);
                }
            }
            return best;
        }
        for ix in 0..f.n_x {
            for iv in 0..f.n_v {
                for ph in &self.phases {
                    let mut s = Complex64::new(0.0, 0.0);
                    for (m, p) in ph.iter().enumerate() {
                        s += f.data[f.offset(ix, m) + iv] * p;
                    }
                    best = best.max(s.norm() * self.bracket_beta[iv]);
                }
            }
        }
        best
    }

    pub fn report(&self, f: &DistributionField) -> NormReport {
        let l2 = self.l2(f);
        let linf_beta = self.linf_beta(f);
        NormReport { l2, linf_beta, bracket: l2 + linf_beta, beta: self.beta }
    }

    pub fn bracket(&self, f: &DistributionField) -> f64 {
        self.l2(f) + self.linf_beta(f)
    }

    /// `sup_x (∫ |f|² dξ)^{1/2}` (zero mode only in the slab case).
    pub fn linf_x_l2_xi(&self, f: &DistributionField) -> f64 {
        let stride = f.n_modes * f.n_v;
        f.data
            .chunks(stride)
            .map(|c| (self.vw * c.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt())
            .fold(0.0, f64::max)
    }

    /// `C(β) = (Σ w ⟨ξ⟩^{−2β})^{1/2}`, the constant of `L∞_β ⊂ L∞ₓL²_ξ`.
    pub fn embedding_constant(&self) -> f64 {
        (self.vw * self.bracket_beta.iter().map(|b| 1.0 / (b * b)).sum::<f64>()).sqrt()
    }
}

pub fn norms(f: &DistributionField, w: &NormWeights) -> NormReport {
    w.report(f)
}

/// `|||f|||_{t₀,κ,β} = sup_{τ ≥ t₀} e^{κτ} [[f(τ)]]_β` over sampled times.
pub fn trajectory_norm(samples: &[(f64, f64)], t0: f64, kappa: f64) -> f64 {
    samples
        .iter()
        .filter(|(t, _)| *t >= t0)
        .map(|(t, b)| (kappa * t).exp() * b)
        .fold(0.0, f64::max)
}

/// Velocity-only weighted sup `sup_ξ ⟨ξ⟩^β |f(ξ)|`.
pub fn linf_beta_velocity(f: &[f64], vgrid: &VelocityGrid, beta: f64) -> f64 {
    f.iter()
        .zip(vgrid.nodes())
        .map(|(v, x)| v.abs() * crate::velocity::bracket(x).powf(beta))
        .fold(0.0, f64::max)
}
