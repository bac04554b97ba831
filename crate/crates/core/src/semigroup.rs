//! Linear semigroup `S(t)` of the weighted linearized problem
//! `∂ₜh + ξ·∇ₓh − σξ₁h − Lh = 0` with zero inflow, Duhamel convolutions and
//! the truncated series cross-check.

use nalgebra::SymmetricEigen;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{decay_fit, DecayFit};
use crate::model::Operators;
use crate::norms::{NormReport, NormWeights};
use crate::spatial::{apply_s0, DistributionField, S0Step, SpatialGrid};
use crate::velocity::VelocityGrid;

/// `0.1 · min ν / max(1, R_v)`.
pub fn default_sigma(nu: &[f64], vgrid: &VelocityGrid) -> f64 {
    let min_nu = nu.iter().cloned().fold(f64::MAX, f64::min);
    0.1 * min_nu / vgrid.cutoff().max(1.0)
}

/// Requires `σ > 0` and `ν − σξ₁ > 0` on every node.
pub fn check_sigma(sigma: f64, nu: &[f64], vgrid: &VelocityGrid) -> Result<()> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("σ must be positive, got {sigma}")));
    }
    for (n, x) in nu.iter().zip(vgrid.nodes()) {
        if !(n - sigma * x[0] > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "σ = {sigma} makes ν − σξ₁ non-positive at ξ = {x:?}"
            )));
        }
    }
    Ok(())
}

pub struct LinearEvolver<'a> {
    ops: &'a Operators,
    xgrid: &'a SpatialGrid,
    sigma: f64,
    dt: f64,
    half: S0Step,
    /// `e^{Δt K}`, symmetric
    expk: Vec<f64>,
    with_k: bool,
}

impl<'a> LinearEvolver<'a> {
    pub fn new(ops: &'a Operators, xgrid: &'a SpatialGrid, sigma: f64, dt: f64) -> Result<Self> {
        let nu = &ops.op.nu;
        check_sigma(sigma, nu, &ops.vgrid)?;
        let max_nu = ops.op.max_nu();
        if !(dt > 0.0) || dt * max_nu > 2.0 {
            return Err(Error::InvalidParameter(format!(
                "time step {dt} violates 0 < Δt·max ν ≤ 2 (max ν = {max_nu})"
            )));
        }
        let half = S0Step::new(0.5 * dt, sigma, nu, &ops.vgrid, xgrid);
        let eig = SymmetricEigen::new(ops.op.k_matrix.clone());
        let n = ops.n_v();
        let q = &eig.eigenvectors;
        let ex: Vec<f64> = eig.eigenvalues.iter().map(|l| (dt * l).exp()).collect();
        let mut expk = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for (k, e) in ex.iter().enumerate() {
                    s += q[(i, k)] * e * q[(j, k)];
                }
                expk[i * n + j] = s;
            }
        }
        Ok(Self { ops, xgrid, sigma, dt, half, expk, with_k: true })
    }

    /// Same evolver with `K` switched off, leaving pure damped transport.
    pub fn without_k(mut self) -> Self {
        self.with_k = false;
        self
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn xgrid(&self) -> &SpatialGrid {
        self.xgrid
    }

    pub fn ops(&self) -> &Operators {
        self.ops
    }

    fn k_step(&self, h: &mut DistributionField) {
        if !self.with_k {
            return;
        }
        let n = h.n_v;
        let e = &self.expk;
        h.data.par_chunks_mut(n).for_each(|chunk| {
            let src: Vec<Complex64> = chunk.to_vec();
            for i in 0..n {
                let row = &e[i * n..(i + 1) * n];
                let mut s = Complex64::new(0.0, 0.0);
                for j in 0..n {
                    s += src[j] * row[j];
                }
                chunk[i] = s;
            }
        });
    }

    /// One Strang step `S₀(Δt/2) e^{ΔtK} S₀(Δt/2)`.
    pub fn step(&self, h: &mut DistributionField, scratch: &mut DistributionField) {
        self.half.apply_in_place(h, scratch);
        self.k_step(h);
        self.half.apply_in_place(h, scratch);
        h.time += self.dt;
    }

    /// Trajectory `h(t_n)`, `n = 0..=n_steps`.
    pub fn evolve_linear(&self, h0: &DistributionField, n_steps: usize) -> Result<Vec<DistributionField>> {
        let mut out = Vec::with_capacity(n_steps + 1);
        let mut h = h0.clone();
        let mut scratch = DistributionField::zeros_like(h0);
        out.push(h.clone());
        for n in 0..n_steps {
            self.step(&mut h, &mut scratch);
            if !h.is_finite() {
                return Err(Error::NonFinite(format!("linear evolution at step {}", n + 1)));
            }
            out.push(h.clone());
        }
        Ok(out)
    }

    /// Evolves with a source: `y(t) = S(t)g₀ + ∫₀ᵗ S(t−s) src(s) ds`, the
    /// integral by the trapezoid rule on the step grid. `source(n, buf)`
    /// fills `src(t₀ + nΔt)`; `visit(n, y)` sees every state.
    pub fn propagate<S, V>(&self, g0: &DistributionField, n_steps: usize, mut source: S, mut visit: V) -> Result<()>
    where
        S: FnMut(usize, &DistributionField, &mut DistributionField),
        V: FnMut(usize, &DistributionField) -> Result<()>,
    {
        let mut y = g0.clone();
        let mut scratch = DistributionField::zeros_like(g0);
        let mut src = DistributionField::zeros_like(g0);
        let h = 0.5 * self.dt;
        visit(0, &y)?;
        source(0, &y, &mut src);
        for n in 0..n_steps {
            y.axpy(h, &src);
            self.step(&mut y, &mut scratch);
            // source at the new time sees the partially updated state; callers
            // supply sources that do not depend on it (Picard iterates use the
            // previous trajectory)
            source(n + 1, &y, &mut src);
            y.axpy(h, &src);
            if !y.is_finite() {
                return Err(Error::NonFinite(format!("evolution with source at step {}", n + 1)));
            }
            visit(n + 1, &y)?;
        }
        Ok(())
    }

    /// `∫_{t₀}^{t_n} S(t_n − s) h(s) ds` for every sample `t_n` of `source`.
    pub fn duhamel_convolve(&self, source: &[DistributionField]) -> Result<Vec<DistributionField>> {
        if source.is_empty() {
            return Ok(Vec::new());
        }
        let t0 = source[0].time;
        for (n, s) in source.iter().enumerate() {
            if (s.time - t0 - n as f64 * self.dt).abs() > 1e-9 * (1.0 + s.time.abs()) {
                return Err(Error::InvalidParameter(format!(
                    "source sample {n} at t = {} does not match the step Δt = {}",
                    s.time, self.dt
                )));
            }
        }
        let mut zero = DistributionField::zeros_like(&source[0]);
        zero.time = t0;
        let mut out = Vec::with_capacity(source.len());
        self.propagate(
            &zero,
            source.len() - 1,
            |n, _, buf| buf.data.copy_from_slice(&source[n].data),
            |_, y| {
                out.push(y.clone());
                Ok(())
            },
        )?;
        Ok(out)
    }

    /// Partial sums of `S(t)h₀ = Σ_j I_j(t) + J_m(t)`, `I₀ = S₀h₀`,
    /// `I_j = ∫₀ᵗ S₀(t−s) K I_{j−1}(s) ds`, on `n_steps` steps.
    pub fn duhamel_series(&self, h0: &DistributionField, n_steps: usize, m: usize) -> Result<SeriesResult> {
        if m == 0 || m > 8 {
            return Err(Error::InvalidParameter(format!("series order must be in 1..=8, got {m}")));
        }
        let ops = self.ops;
        let nu = &ops.op.nu;
        let full = S0Step::new(self.dt, self.sigma, nu, &ops.vgrid, self.xgrid);
        let mut term: Vec<DistributionField> = (0..=n_steps)
            .map(|n| {
                let mut f = apply_s0(h0, n as f64 * self.dt, self.sigma, nu, &ops.vgrid, self.xgrid);
                f.time = h0.time + n as f64 * self.dt;
                f
            })
            .collect();
        let mut terms_final = vec![term[n_steps].clone()];
        let mut term_series = vec![term.iter().map(|f| f.time).zip(term.iter().map(|f| f.max_abs())).collect()];
        let mut sum = term[n_steps].clone();
        for _j in 1..m {
            let kterm: Vec<DistributionField> = term.iter().map(|f| self.apply_k_field(f)).collect();
            let mut next = Vec::with_capacity(n_steps + 1);
            let mut y = DistributionField::zeros_like(h0);
            y.time = h0.time;
            let mut scratch = DistributionField::zeros_like(h0);
            next.push(y.clone());
            for n in 0..n_steps {
                y.axpy(0.5 * self.dt, &kterm[n]);
                full.apply_in_place(&mut y, &mut scratch);
                y.axpy(0.5 * self.dt, &kterm[n + 1]);
                y.time = kterm[n + 1].time;
                next.push(y.clone());
            }
            term = next;
            sum.axpy(1.0, &term[n_steps]);
            terms_final.push(term[n_steps].clone());
            term_series.push(term.iter().map(|f| (f.time, f.max_abs())).collect());
        }
        Ok(SeriesResult { sum, terms: terms_final, term_series })
    }

    fn apply_k_field(&self, f: &DistributionField) -> DistributionField {
        let mut out = self.ops.l_field(f);
        let nu = &self.ops.op.nu;
        let n = f.n_v;
        for (o, s) in out.data.chunks_mut(n).zip(f.data.chunks(n)) {
            for i in 0..n {
                o[i] += s[i] * nu[i];
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SeriesResult {
    /// `Σ_{j<m} I_j(t)`
    pub sum: DistributionField,
    /// `I_j(t)` for `j < m`
    pub terms: Vec<DistributionField>,
    /// `(t, max |I_j(t)|)` samples per term
    pub term_series: Vec<Vec<(f64, f64)>>,
}

/// Norm time series of a trajectory.
pub fn norm_series(traj: &[DistributionField], w: &NormWeights) -> Vec<(f64, NormReport)> {
    traj.iter().map(|f| (f.time, w.report(f))).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightedDecayReport {
    pub beta: f64,
    pub l2_fit: Option<DecayFit>,
    pub weighted_fit: Option<DecayFit>,
    pub trivial: bool,
    pub passed: bool,
}

/// Fits the decay of `‖S(t)h₀‖` and `‖S(t)h₀‖_β` over `window`.
pub fn weighted_decay_check(
    evolver: &LinearEvolver,
    h0: &DistributionField,
    n_steps: usize,
    beta: f64,
    window: Option<(f64, f64)>,
) -> Result<WeightedDecayReport> {
    if h0.max_abs() == 0.0 {
        return Ok(WeightedDecayReport { beta, l2_fit: None, weighted_fit: None, trivial: true, passed: true });
    }
    let w = NormWeights::new(beta, &evolver.ops.vgrid, evolver.xgrid)?;
    let traj = evolver.evolve_linear(h0, n_steps)?;
    let l2: Vec<(f64, f64)> = traj.iter().map(|f| (f.time, w.l2(f))).collect();
    let wb: Vec<(f64, f64)> = traj.iter().map(|f| (f.time, w.linf_beta(f))).collect();
    let l2_fit = decay_fit(&l2, window)?;
    let weighted_fit = decay_fit(&wb, window)?;
    let passed = weighted_fit.rate > 0.0;
    Ok(WeightedDecayReport { beta, l2_fit: Some(l2_fit), weighted_fit: Some(weighted_fit), trivial: false, passed })
}
