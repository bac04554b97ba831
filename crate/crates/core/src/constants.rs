//! Numerical estimates of the structural constants of `L`, `Γ` and `A`, and
//! the consolidated constants report.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::collision::{a_matrix, kernel_bound_check, p_xi1_bound, KernelBoundReport};
use crate::error::Result;
use crate::model::Operators;
use crate::norms::linf_beta_velocity;
use crate::velocity::{bracket, VelocityGrid};

/// Largest `ν₀` with `ν₀⟨ξ⟩ ≤ ν(ξ) ≤ ν₀⁻¹⟨ξ⟩` on the grid.
pub fn nu0(nu: &[f64], grid: &VelocityGrid) -> f64 {
    let (mut lo, mut hi) = (f64::MAX, 0.0f64);
    for (n, x) in nu.iter().zip(grid.nodes()) {
        let r = n / bracket(x);
        lo = lo.min(r);
        hi = hi.max(r);
    }
    lo.min(1.0 / hi)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GammaBoundFit {
    pub beta: f64,
    pub trials: usize,
    /// `max ‖ν⁻¹Γ(f,g)‖_{∞,β} / (‖f‖_{∞,β}‖g‖_{∞,β})` over the trials
    pub k3: f64,
    /// median of the same ratio
    pub median: f64,
}

/// Fits `k₃` of `‖ν⁻¹Γ(f,g)‖_{∞,β} ≤ k₃‖f‖_{∞,β}‖g‖_{∞,β}` on seeded random
/// pairs `f = ⟨ξ⟩^{−β}·U(−1,1)`.
pub fn gamma_bound_fit(ops: &Operators, beta: f64, trials: usize, seed: u64) -> GammaBoundFit {
    let grid = &ops.vgrid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let br: Vec<f64> = grid.brackets().iter().map(|b| b.powf(-beta)).collect();
    let samples: Vec<(Vec<f64>, Vec<f64>)> = (0..trials)
        .map(|_| {
            let f: Vec<f64> = br.iter().map(|b| b * rng.gen_range(-1.0..1.0)).collect();
            let g: Vec<f64> = br.iter().map(|b| b * rng.gen_range(-1.0..1.0)).collect();
            (f, g)
        })
        .collect();
    let pairs: Vec<(&[f64], &[f64])> = samples.iter().map(|(f, g)| (f.as_slice(), g.as_slice())).collect();
    let mut ratios: Vec<f64> = ops
        .gamma_pairs(&pairs)
        .iter()
        .zip(&samples)
        .map(|(gam, (f, g))| {
            let q: Vec<f64> = gam.iter().zip(&ops.op.nu).map(|(v, n)| v / n).collect();
            linf_beta_velocity(&q, grid, beta)
                / (linf_beta_velocity(f, grid, beta) * linf_beta_velocity(g, grid, beta))
        })
        .collect();
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k3 = ratios.last().copied().unwrap_or(0.0);
    let median = if ratios.is_empty() { 0.0 } else { ratios[ratios.len() / 2] };
    GammaBoundFit { beta, trials, k3, median }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatorConstants {
    pub nu0: f64,
    pub nu_min: f64,
    pub nu_max: f64,
    /// coercivity on the complement of the null space
    pub nu1: f64,
    /// `−max eig(A)`, `A = Pξ₁P` on the null space
    pub nu2: f64,
    pub a_eigenvalues: [f64; 5],
    pub k5: f64,
    pub kernel: KernelBoundReport,
    pub gamma: GammaBoundFit,
    pub null_count: usize,
    pub gap: f64,
    pub asymmetry: f64,
}

pub fn operator_constants(ops: &Operators, beta: f64, trials: usize, seed: u64) -> Result<OperatorConstants> {
    let grid = &ops.vgrid;
    let spectral = ops.op.spectral_report(grid)?;
    let (_, a_eigenvalues) = a_matrix(grid, &ops.op.basis);
    Ok(OperatorConstants {
        nu0: nu0(&ops.op.nu, grid),
        nu_min: ops.op.min_nu(),
        nu_max: ops.op.max_nu(),
        nu1: spectral.nu1,
        nu2: -a_eigenvalues[4],
        a_eigenvalues,
        k5: p_xi1_bound(grid, &ops.op.basis),
        kernel: kernel_bound_check(&ops.op, grid)?,
        gamma: gamma_bound_fit(ops, beta, trials, seed),
        null_count: spectral.null_count,
        gap: spectral.gap,
        asymmetry: spectral.asymmetry,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Constant {
    pub value: f64,
    /// experiment the value came from
    pub provenance: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub constants: BTreeMap<String, Constant>,
    /// grids and parameters of the experiments, keyed by experiment
    pub grids: BTreeMap<String, serde_json::Value>,
    pub all_positive: bool,
    /// `κ̂ ≤ ν̂₀/2 · (1 + tol)` on the grid of the decay experiment
    pub kappa_consistent: Option<bool>,
    pub kappa_tolerance: f64,
}

impl ConstantsReport {
    pub fn new(kappa_tolerance: f64) -> Self {
        Self { kappa_tolerance, ..Default::default() }
    }

    pub fn insert(&mut self, name: &str, value: f64, provenance: &str) {
        self.constants.insert(name.to_string(), Constant { value, provenance: provenance.to_string() });
    }

    pub fn add_grid(&mut self, experiment: &str, desc: serde_json::Value) {
        self.grids.insert(experiment.to_string(), desc);
    }

    pub fn add_operator(&mut self, c: &OperatorConstants, provenance: &str) {
        self.insert("nu0", c.nu0, provenance);
        self.insert("nu1", c.nu1, provenance);
        self.insert("nu2", c.nu2, provenance);
        self.insert("k0", c.kernel.k0, provenance);
        self.insert("k1", c.kernel.k1, provenance);
        self.insert("k3", c.gamma.k3, provenance);
        self.insert("k5", c.k5, provenance);
    }

    /// Fills the summary flags. `nu0_decay` is `ν̂₀` on the grid the decay
    /// rate was measured on.
    pub fn finish(&mut self, kappa: Option<f64>, nu0_decay: Option<f64>) {
        self.all_positive = !self.constants.is_empty() && self.constants.values().all(|c| c.value > 0.0);
        self.kappa_consistent = match (kappa, nu0_decay) {
            (Some(k), Some(n)) => Some(k <= 0.5 * n * (1.0 + self.kappa_tolerance)),
            _ => None,
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nu0_of_exact_linear_frequency() {
        let g = VelocityGrid::new(4, 2.0).unwrap();
        let nu: Vec<f64> = g.nodes().iter().map(|x| 0.5 * bracket(x)).collect();
        assert!((nu0(&nu, &g) - 0.5).abs() < 1e-15);
        let nu: Vec<f64> = g.nodes().iter().map(|x| 3.0 * bracket(x)).collect();
        assert!((nu0(&nu, &g) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn report_flags() {
        let mut r = ConstantsReport::new(0.1);
        r.insert("nu0", 0.4, "operator");
        r.insert("kappa", 0.21, "decay");
        r.finish(Some(0.21), Some(0.4));
        assert!(r.all_positive);
        assert_eq!(r.kappa_consistent, Some(true));
        r.insert("k1", -1.0, "operator");
        r.finish(Some(0.3), Some(0.4));
        assert!(!r.all_positive);
        assert_eq!(r.kappa_consistent, Some(false));
    }
}
