//! Boundary-layer profile, the Picard map `Φ`, time-global mild solutions,
//! periodic extraction from translated solutions, stationarity and stability
//! experiments.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{decay_fit, envelope_amplitude, DecayFit};
use crate::model::Operators;
use crate::norms::NormWeights;
use crate::problem::ProblemData;
use crate::semigroup::LinearEvolver;
use crate::spatial::{BoundarySpec, DistributionField, Representation, SpatialGrid};
use crate::velocity::{bracket, VelocityGrid};

// ---------------------------------------------------------------------------
// slab profile

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlabOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub theta: f64,
    /// `x₁` window of the decay fit; `None` uses `[0, X_max/2]`
    pub fit_window: Option<(f64, f64)>,
}

impl Default for SlabOptions {
    fn default() -> Self {
        Self { tol: 1e-12, max_iter: 60, theta: 1.0, fit_window: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlabSolution {
    pub x: Vec<f64>,
    #[serde(skip)]
    pub profile: Vec<Vec<f64>>,
    pub delta_tilde: f64,
    pub beta: f64,
    pub iterations: usize,
    /// relative update size per Picard iteration
    pub history: Vec<f64>,
    /// `(x₁, sup_ξ ⟨ξ⟩^β |f̃|)`
    pub sup_series: Vec<(f64, f64)>,
    pub fit: Option<DecayFit>,
    /// `M̂₀` with `|f̃| ≤ δ̃ M̂₀ e^{−γ̂₀x₁} ⟨ξ⟩^{−β}` on every node
    pub m0: Option<f64>,
    pub bound_violations: usize,
    /// upwind residual of the converged profile, sup over nodes
    pub residual: f64,
}

impl SlabSolution {
    pub fn gamma0(&self) -> Option<f64> {
        self.fit.map(|f| f.rate)
    }

    pub fn bracket_norm(&self, vgrid: &VelocityGrid, xgrid: &SpatialGrid) -> Result<f64> {
        let slab = SpatialGrid::slab(xgrid.len(), xgrid.x_max(), xgrid.stretch())?;
        let w = NormWeights::new(self.beta, vgrid, &slab)?;
        let f = DistributionField::from_slab_profile(&self.profile, 1, Representation::Plain);
        Ok(w.bracket(&f))
    }
}

/// Upwind discretization of `ξ₁ ∂ₓ₁ f − L f = r` with `f(0, ξ) = a₀(ξ)` on
/// `ξ₁ > 0` and `f(X_max, ξ) = 0` on `ξ₁ ≤ 0`, solved by block elimination.
/// The factorizations are reused across right-hand sides.
pub struct SlabSystem {
    lus: Vec<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    lower: Vec<Vec<f64>>,
    upper: Vec<Vec<f64>>,
    inflow: Vec<bool>,
    n_v: usize,
}

impl SlabSystem {
    pub fn new(ops: &Operators, xgrid: &SpatialGrid) -> Result<Self> {
        let n = xgrid.len();
        let n_v = ops.n_v();
        let x = xgrid.nodes();
        let l = ops.op.l_matrix();
        let inflow: Vec<bool> = ops.vgrid.nodes().iter().map(|xi| xi[0] > 0.0).collect();
        let mut lower = vec![vec![0.0; n_v]; n];
        let mut upper = vec![vec![0.0; n_v]; n];
        let mut lus = Vec::with_capacity(n);
        let mut prev: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> = None;
        for m in 0..n {
            let mut b = -l.clone();
            for i in 0..n_v {
                let xi1 = ops.vgrid.node(i)[0];
                let boundary = (m == 0 && inflow[i]) || (m == n - 1 && !inflow[i]);
                if boundary {
                    for j in 0..n_v {
                        b[(i, j)] = 0.0;
                    }
                    b[(i, i)] = 1.0;
                    continue;
                }
                if inflow[i] {
                    let d = xi1 / (x[m] - x[m - 1]);
                    b[(i, i)] += d;
                    lower[m][i] = -d;
                } else {
                    let d = xi1 / (x[m + 1] - x[m]);
                    b[(i, i)] -= d;
                    upper[m][i] = d;
                }
            }
            if let Some(lu) = &prev {
                // B̃_m = B_m − diag(lower_m) B̃_{m−1}^{-1} diag(upper_{m−1})
                for j in 0..n_v {
                    let c = upper[m - 1][j];
                    if c == 0.0 {
                        continue;
                    }
                    let mut e = DVector::zeros(n_v);
                    e[j] = c;
                    let col = lu.solve(&e).ok_or_else(|| singular(m - 1))?;
                    for i in 0..n_v {
                        if lower[m][i] != 0.0 {
                            b[(i, j)] -= lower[m][i] * col[i];
                        }
                    }
                }
            }
            let lu = b.lu();
            if !lu.is_invertible() {
                return Err(singular(m));
            }
            if let Some(p) = prev.take() {
                lus.push(p);
            }
            prev = Some(lu);
        }
        lus.push(prev.expect("at least three nodes"));
        Ok(Self { lus, lower, upper, inflow, n_v })
    }

    /// Solves for the profile with source `rhs[ix]` (ignored on boundary rows).
    pub fn solve(&self, a0: &[f64], rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let n = self.lus.len();
        let n_v = self.n_v;
        let mut rt: Vec<DVector<f64>> = Vec::with_capacity(n);
        for m in 0..n {
            let mut r = DVector::from_column_slice(&rhs[m]);
            for i in 0..n_v {
                if m == 0 && self.inflow[i] {
                    r[i] = a0[i];
                } else if m == n - 1 && !self.inflow[i] {
                    r[i] = 0.0;
                }
            }
            if m > 0 {
                let y = self.lus[m - 1].solve(&rt[m - 1]).ok_or_else(|| singular(m - 1))?;
                for i in 0..n_v {
                    r[i] -= self.lower[m][i] * y[i];
                }
            }
            rt.push(r);
        }
        let mut out = vec![vec![0.0; n_v]; n];
        let mut next: Option<DVector<f64>> = None;
        for m in (0..n).rev() {
            let mut r = rt[m].clone();
            if let Some(f) = &next {
                for i in 0..n_v {
                    r[i] -= self.upper[m][i] * f[i];
                }
            }
            let f = self.lus[m].solve(&r).ok_or_else(|| singular(m))?;
            out[m].copy_from_slice(f.as_slice());
            next = Some(f);
        }
        Ok(out)
    }
}

fn singular(m: usize) -> Error {
    Error::InconsistentOperator(format!("singular block in the slab system at node {m}"))
}

/// Upwind residual `sup |ξ₁∂ₓ₁f̃ − Lf̃ − Γ(f̃, f̃)|` over interior rows.
pub fn slab_residual(profile: &[Vec<f64>], ops: &Operators, xgrid: &SpatialGrid) -> f64 {
    let x = xgrid.nodes();
    let n = profile.len();
    let mut worst = 0.0f64;
    for m in 0..n {
        let lf = ops.op.apply(&profile[m]);
        let g = ops.gamma(&profile[m], &profile[m]);
        for (i, xi) in ops.vgrid.nodes().iter().enumerate() {
            let d = if xi[0] > 0.0 {
                if m == 0 {
                    continue;
                }
                xi[0] * (profile[m][i] - profile[m - 1][i]) / (x[m] - x[m - 1])
            } else {
                if m == n - 1 {
                    continue;
                }
                xi[0] * (profile[m + 1][i] - profile[m][i]) / (x[m + 1] - x[m])
            };
            worst = worst.max((d - lf[i] - g[i]).abs());
        }
    }
    worst
}

/// Damped Picard iteration `f ← (1−θ)f + θ S[Γ(f, f)]` for the half-line
/// problem `ξ₁∂ₓ₁f̃ = Lf̃ + Γ(f̃, f̃)`, `f̃(0) = a₀` on `ξ₁ > 0`.
pub fn solve_slab_stationary(
    spec: &BoundarySpec,
    ops: &Operators,
    xgrid: &SpatialGrid,
    opts: &SlabOptions,
) -> Result<SlabSolution> {
    ops.state.require_supersonic_inflow()?;
    spec.validate(&ops.state, &ops.vgrid)?;
    let a0 = spec.a0(&ops.state, &ops.vgrid);
    let n = xgrid.len();
    let n_v = ops.n_v();
    let x = xgrid.nodes().to_vec();
    let zero = vec![vec![0.0; n_v]; n];
    if a0.iter().all(|v| *v == 0.0) {
        return Ok(SlabSolution {
            x: x.clone(),
            profile: zero,
            delta_tilde: spec.delta_tilde,
            beta: spec.beta,
            iterations: 0,
            history: Vec::new(),
            sup_series: x.iter().map(|x| (*x, 0.0)).collect(),
            fit: None,
            m0: None,
            bound_violations: 0,
            residual: 0.0,
        });
    }
    let system = SlabSystem::new(ops, xgrid)?;
    let mut f = system.solve(&a0, &zero)?;
    let mut history = Vec::new();
    let mut theta = opts.theta;
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..opts.max_iter {
        iterations += 1;
        let rhs: Vec<Vec<f64>> = f.iter().map(|p| ops.gamma(p, p)).collect();
        let next = system.solve(&a0, &rhs)?;
        let mut diff = 0.0f64;
        let mut scale = 0.0f64;
        for (a, b) in f.iter_mut().zip(&next) {
            for (u, v) in a.iter_mut().zip(b) {
                let new = (1.0 - theta) * *u + theta * v;
                diff = diff.max((new - *u).abs());
                scale = scale.max(new.abs());
                *u = new;
            }
        }
        if !diff.is_finite() {
            return Err(Error::NonFinite("slab Picard iterate".into()));
        }
        let rel = diff / scale.max(f64::MIN_POSITIVE);
        if let Some(&last) = history.last() {
            if rel > last && rel > 10.0 * opts.tol {
                theta *= 0.5;
            }
        }
        history.push(rel);
        if rel <= opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence(format!(
            "slab Picard iteration did not converge in {} iterations; update history {history:?}",
            opts.max_iter
        )));
    }
    let brackets: Vec<f64> = ops.vgrid.brackets().iter().map(|b| b.powf(spec.beta)).collect();
    let sup_series: Vec<(f64, f64)> = f
        .iter()
        .zip(&x)
        .map(|(p, x)| (*x, p.iter().zip(&brackets).map(|(v, b)| v.abs() * b).fold(0.0, f64::max)))
        .collect();
    let window = opts.fit_window.unwrap_or((0.0, 0.5 * xgrid.x_max()));
    let fit = decay_fit(&sup_series, Some(window))?;
    let m0 = envelope_amplitude(&sup_series, fit.rate) / spec.delta_tilde;
    let mut violations = 0;
    for (p, xm) in f.iter().zip(&x) {
        for (v, xi) in p.iter().zip(ops.vgrid.nodes()) {
            let bound = spec.delta_tilde * m0 * (-fit.rate * xm).exp() * bracket(xi).powf(-spec.beta);
            if v.abs() > bound * (1.0 + 1e-12) {
                violations += 1;
            }
        }
    }
    let residual = slab_residual(&f, ops, xgrid);
    Ok(SlabSolution {
        x,
        profile: f,
        delta_tilde: spec.delta_tilde,
        beta: spec.beta,
        iterations,
        history,
        sup_series,
        fit: Some(fit),
        m0: Some(m0),
        bound_violations: violations,
        residual,
    })
}

// ---------------------------------------------------------------------------
// Picard map and time-global solutions

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PicardOptions {
    /// relative fixed-point tolerance in `|||·|||₀,₀,β`
    pub tol: f64,
    pub max_iter: usize,
    pub theta: f64,
    /// abort when `|||g|||` exceeds this
    pub ceiling: f64,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 30, theta: 1.0, ceiling: 1e3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PicardState {
    pub iterations: usize,
    /// `|||g_{k+1} − g_k|||` per iteration
    pub diff_history: Vec<f64>,
    /// successive ratios of `diff_history`
    pub ratios: Vec<f64>,
    /// largest ratio above the round-off floor
    pub contraction: f64,
    /// `|||g|||₀,₀,β` of the returned iterate
    pub norm: f64,
    /// `|||Φ[g] − g||| / |||g|||` of the returned iterate
    pub residual: f64,
    pub converged: bool,
    /// `(t, [[g(t)]]_β)` of the returned iterate
    pub norm_history: Vec<(f64, f64)>,
    pub theta: f64,
}

pub struct Problem<'a> {
    pub evolver: &'a LinearEvolver<'a>,
    pub data: &'a ProblemData,
    pub weights: NormWeights,
}

impl<'a> Problem<'a> {
    pub fn new(evolver: &'a LinearEvolver<'a>, data: &'a ProblemData) -> Result<Self> {
        if (evolver.sigma() - data.sigma).abs() > 1e-15 {
            return Err(Error::InvalidParameter("evolver and problem data use different σ".into()));
        }
        let weights = NormWeights::new(data.spec.beta, &evolver.ops().vgrid, evolver.xgrid())?;
        Ok(Self { evolver, data, weights })
    }

    pub fn dt(&self) -> f64 {
        self.evolver.dt()
    }

    fn ops(&self) -> &Operators {
        self.evolver.ops()
    }

    pub fn bracket(&self, f: &DistributionField) -> f64 {
        self.weights.bracket(f)
    }

    /// `sup_t [[f(t)]]_β`
    pub fn trajectory_norm(&self, traj: &[DistributionField]) -> f64 {
        traj.iter().map(|f| self.bracket(f)).fold(0.0, f64::max)
    }

    /// `sup_t [[a(t) − b(t)]]_β`
    pub fn trajectory_distance(&self, a: &[DistributionField], b: &[DistributionField]) -> f64 {
        a.iter().zip(b).map(|(x, y)| self.bracket(&x.difference(y))).fold(0.0, f64::max)
    }

    /// `Φ[ḡ] = S(t−t₀)g₀ + ∫_{t₀}^t S(t−s){Γ(ḡ, e^{−σx₁}ḡ + 2V) + e^{σx₁}H}(s) ds`
    /// on the step grid of `ḡ`.
    pub fn picard_map(&self, g0: &DistributionField, gbar: &[DistributionField]) -> Result<Vec<DistributionField>> {
        if gbar.is_empty() || !gbar[0].same_shape(g0) {
            return Err(Error::InvalidParameter("Picard iterate does not match the initial datum".into()));
        }
        let ops = self.ops();
        let xgrid = self.evolver.xgrid();
        let mut out = Vec::with_capacity(gbar.len());
        let mut start = g0.clone();
        start.time = gbar[0].time;
        self.evolver.propagate(
            &start,
            gbar.len() - 1,
            |n, _, buf| self.data.source_into(&gbar[n], gbar[n].time, ops, xgrid, buf),
            |_, y| {
                out.push(y.clone());
                Ok(())
            },
        )?;
        Ok(out)
    }

    fn zero_trajectory(&self, g0: &DistributionField, t0: f64, n_steps: usize) -> Vec<DistributionField> {
        (0..=n_steps)
            .map(|n| {
                let mut f = DistributionField::zeros_like(g0);
                f.time = t0 + n as f64 * self.dt();
                f
            })
            .collect()
    }

    /// Fixed point of `Φ` on `[t₀, t₀ + n_steps Δt]`, starting from `guess`
    /// (zero when absent).
    pub fn solve(
        &self,
        g0: &DistributionField,
        t0: f64,
        n_steps: usize,
        guess: Option<Vec<DistributionField>>,
        opts: &PicardOptions,
    ) -> Result<(Vec<DistributionField>, PicardState)> {
        if !g0.is_finite() {
            return Err(Error::NonFinite("initial datum".into()));
        }
        let mut g = match guess {
            Some(mut gs) if gs.len() == n_steps + 1 => {
                for (n, f) in gs.iter_mut().enumerate() {
                    f.time = t0 + n as f64 * self.dt();
                }
                gs
            }
            Some(_) => return Err(Error::InvalidParameter("initial guess has the wrong length".into())),
            None => self.zero_trajectory(g0, t0, n_steps),
        };
        let mut diffs: Vec<f64> = Vec::new();
        let mut ratios: Vec<f64> = Vec::new();
        let mut contraction = 0.0f64;
        let mut theta = opts.theta;
        for it in 0..opts.max_iter {
            let next = self.picard_map(g0, &g)?;
            let norm_next = self.trajectory_norm(&next);
            if !norm_next.is_finite() || norm_next > opts.ceiling {
                return Err(Error::NonConvergence(format!(
                    "Picard iterate norm {norm_next:e} exceeds the ceiling {:e}; reduce the data size δ",
                    opts.ceiling
                )));
            }
            let d = self.trajectory_distance(&next, &g);
            let norm_g = self.trajectory_norm(&g);
            let scale = norm_g.max(norm_next);
            let floor = 1e-13 * scale;
            if let Some(&last) = diffs.last() {
                if last > floor && d > floor {
                    let r = d / last;
                    ratios.push(r);
                    contraction = contraction.max(r);
                    if r >= 1.0 {
                        if theta > 0.125 {
                            theta *= 0.5;
                        } else {
                            return Err(Error::NonConvergence(format!(
                                "Picard contraction estimate {r:.3} ≥ 1; reduce the data size δ"
                            )));
                        }
                    }
                }
            }
            diffs.push(d);
            // g is a fixed point to tolerance: return it with its measured residual
            if d <= opts.tol * scale || scale == 0.0 {
                let norm_history = g.iter().map(|f| (f.time, self.bracket(f))).collect();
                let residual = if scale > 0.0 { d / scale } else { 0.0 };
                return Ok((
                    g,
                    PicardState {
                        iterations: it + 1,
                        diff_history: diffs,
                        ratios,
                        contraction,
                        norm: norm_g,
                        residual,
                        converged: true,
                        norm_history,
                        theta,
                    },
                ));
            }
            if theta == 1.0 {
                g = next;
            } else {
                for (a, b) in g.iter_mut().zip(&next) {
                    a.scale(1.0 - theta);
                    a.axpy(theta, b);
                }
            }
        }
        Err(Error::NonConvergence(format!(
            "Picard iteration did not reach tolerance {:e} in {} iterations; differences {diffs:?}",
            opts.tol, opts.max_iter
        )))
    }
}

impl Problem<'_> {
    /// Largest ratio `|||g_{k+1} − g_k||| / |||g_k − g_{k−1}|||` over
    /// `iterations` Picard steps from zero; `None` if the iterates blow up.
    pub fn contraction_estimate(
        &self,
        g0: &DistributionField,
        n_steps: usize,
        iterations: usize,
        ceiling: f64,
    ) -> Result<Option<f64>> {
        let mut g = self.zero_trajectory(g0, 0.0, n_steps);
        let mut last: Option<f64> = None;
        let mut worst = 0.0f64;
        for _ in 0..iterations.max(2) {
            let next = match self.picard_map(g0, &g) {
                Ok(n) => n,
                Err(Error::NonFinite(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            let norm = self.trajectory_norm(&next);
            if !norm.is_finite() || norm > ceiling {
                return Ok(None);
            }
            let d = self.trajectory_distance(&next, &g);
            if let Some(l) = last {
                if l > 1e-13 * norm && d > 1e-13 * norm {
                    worst = worst.max(d / l);
                }
            }
            last = Some(d);
            g = next;
        }
        Ok(Some(worst))
    }
}

/// Time-global solve on `[0, n_steps Δt]`.
pub fn solve_time_global(
    problem: &Problem,
    g0: &DistributionField,
    n_steps: usize,
    opts: &PicardOptions,
) -> Result<(Vec<DistributionField>, PicardState)> {
    problem.solve(g0, 0.0, n_steps, None, opts)
}

/// Bound report `|||g||| ≤ C([[g₀]]_β + δ)` of one global solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlobalReport {
    pub delta: f64,
    pub g0_bracket: f64,
    pub norm: f64,
    pub constant: f64,
    pub state: PicardState,
}

// ---------------------------------------------------------------------------
// translated solutions and periodic orbits

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    pub period: f64,
    pub steps_per_period: usize,
    /// one period of samples, both endpoints included
    #[serde(skip)]
    pub samples: Vec<DistributionField>,
    /// `(k, sup_{t∈[0,T*]} [[g_{k+1}(t) − g_k(t)]]_β)`
    pub cauchy: Vec<(usize, f64)>,
    /// fit of the Cauchy history against `k T*`; `kappa_hat = 2·rate`
    pub fit: Option<DecayFit>,
    pub kappa_hat: Option<f64>,
    /// `[[g*(T*) − g*(0)]]_β`
    pub endpoint_mismatch: f64,
    /// `sup_t [[g*(t)]]_β`
    pub scale: f64,
    pub converged: bool,
    pub picard_iterations: usize,
    /// worst Picard residual over the windows
    pub picard_residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractOptions {
    pub k_max: usize,
    /// relative Cauchy tolerance for stopping
    pub cauchy_tol: f64,
    pub picard: PicardOptions,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self { k_max: 40, cauchy_tol: 1e-8, picard: PicardOptions::default() }
    }
}

/// Solves window by window over periods of length `steps_per_period Δt`
/// and returns the limit of the translated sequence `g_k(t) = g(t + kT*)`.
pub fn extract_periodic(
    problem: &Problem,
    g0: &DistributionField,
    steps_per_period: usize,
    opts: &ExtractOptions,
) -> Result<PeriodicOrbit> {
    if steps_per_period == 0 {
        return Err(Error::InvalidParameter("a period needs at least one step".into()));
    }
    let period = steps_per_period as f64 * problem.dt();
    let mut prev: Option<Vec<DistributionField>> = None;
    let mut start = g0.clone();
    let mut cauchy = Vec::new();
    let mut iterations = 0;
    let mut worst_residual = 0.0f64;
    let mut converged = false;
    let mut scale = 0.0;
    for k in 0..=opts.k_max {
        let t0 = k as f64 * period;
        let (traj, state) = problem.solve(&start, t0, steps_per_period, prev.clone(), &opts.picard)?;
        iterations += state.iterations;
        worst_residual = worst_residual.max(state.residual);
        scale = state.norm;
        start = traj[steps_per_period].clone();
        if let Some(p) = &prev {
            let d = problem.trajectory_distance(&traj, p);
            cauchy.push((k - 1, d));
            if d <= opts.cauchy_tol * scale.max(f64::MIN_POSITIVE) || scale == 0.0 {
                prev = Some(traj);
                converged = true;
                break;
            }
        }
        prev = Some(traj);
    }
    let samples = prev.expect("at least one window");
    if !converged && cauchy.len() >= 2 && cauchy.last().unwrap().1 >= cauchy[0].1 {
        return Err(Error::NonConvergence(format!("Cauchy history is not decreasing: {cauchy:?}")));
    }
    let floor = 100.0 * opts.picard.tol * scale;
    let series: Vec<(f64, f64)> =
        cauchy.iter().filter(|(_, d)| *d > floor).map(|(k, d)| (*k as f64 * period, *d)).collect();
    let fit = if series.len() >= 8 { Some(decay_fit(&series, None)?) } else { None };
    let endpoint_mismatch = problem.bracket(&samples[steps_per_period].difference(&samples[0]));
    Ok(PeriodicOrbit {
        period,
        steps_per_period,
        samples,
        kappa_hat: fit.map(|f| 2.0 * f.rate),
        fit,
        cauchy,
        endpoint_mismatch,
        scale,
        converged,
        picard_iterations: iterations,
        picard_residual: worst_residual,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationarityReport {
    pub periods: Vec<f64>,
    /// relative distance of each orbit to the first
    pub distances: Vec<f64>,
    /// relative `sup_t [[g*(t) − g*(0)]]_β` per orbit
    pub time_variation: Vec<f64>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares orbits extracted at periods `T*/2^l`; with time-independent
/// data they should all be the same stationary state.
pub fn verify_stationarity(
    problem: &Problem,
    g0: &DistributionField,
    steps_per_period: usize,
    levels: usize,
    opts: &ExtractOptions,
    tolerance: f64,
) -> Result<(StationarityReport, Vec<PeriodicOrbit>)> {
    if problem.data.is_time_dependent() {
        return Err(Error::InvalidParameter("stationarity needs time-independent boundary data".into()));
    }
    let mut orbits = Vec::new();
    for l in 0..levels {
        let s = steps_per_period >> l;
        if s == 0 || s << l != steps_per_period {
            return Err(Error::InvalidParameter(format!(
                "{steps_per_period} steps per period cannot be halved {l} times"
            )));
        }
        orbits.push(extract_periodic(problem, g0, s, opts)?);
    }
    let scale = orbits[0].scale.max(f64::MIN_POSITIVE);
    let zero = orbits[0].scale == 0.0;
    let distances: Vec<f64> = orbits
        .iter()
        .map(|o| {
            let n = o.samples.len().min(orbits[0].samples.len());
            if zero {
                return problem.trajectory_norm(&o.samples[..n]);
            }
            problem.trajectory_distance(&o.samples[..n], &orbits[0].samples[..n]) / scale
        })
        .collect();
    let time_variation: Vec<f64> = orbits
        .iter()
        .map(|o| {
            let v = o.samples.iter().map(|f| problem.bracket(&f.difference(&o.samples[0]))).fold(0.0, f64::max);
            if zero {
                v
            } else {
                v / scale
            }
        })
        .collect();
    let passed = distances.iter().all(|d| *d <= tolerance) && time_variation.iter().all(|v| *v <= opts.cauchy_tol);
    let report = StationarityReport {
        periods: orbits.iter().map(|o| o.period).collect(),
        distances,
        time_variation,
        tolerance,
        passed,
    };
    Ok((report, orbits))
}

// ---------------------------------------------------------------------------
// stability

/// Smooth, compactly supported perturbations away from the wall with
/// seeded centres, widths and velocity shapes.
pub fn perturbation_family(
    seed: u64,
    count: usize,
    amplitude: f64,
    beta: f64,
    vgrid: &VelocityGrid,
    xgrid: &SpatialGrid,
) -> Vec<DistributionField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reach = (0.25 * xgrid.x_max()).max(2.0);
    (0..count)
        .map(|_| {
            let width = rng.gen_range(0.5..1.5);
            let centre = rng.gen_range(width + 0.5..reach.max(width + 1.0));
            let c: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let shape: Vec<f64> = vgrid
                .nodes()
                .iter()
                .map(|xi| {
                    let d = (xi[0] - c[0]).powi(2) + (xi[1] - c[1]).powi(2) + (xi[2] - c[2]).powi(2);
                    sign * bracket(xi).powf(-beta) * (-0.5 * d).exp()
                })
                .collect();
            bump_field(xgrid, vgrid, centre, width, &shape, amplitude)
        })
        .collect()
}

/// `amplitude · b((x₁ − centre)/width) · shape(ξ)` in the zero mode with the
/// C² bump `b(s) = (1 − s²)³` on `|s| < 1`.
pub fn bump_field(
    xgrid: &SpatialGrid,
    vgrid: &VelocityGrid,
    centre: f64,
    width: f64,
    shape: &[f64],
    amplitude: f64,
) -> DistributionField {
    let mut f = DistributionField::for_grids(xgrid, vgrid, Representation::Weighted);
    for (ix, x) in xgrid.nodes().iter().enumerate() {
        let s = (x - centre) / width;
        if s.abs() >= 1.0 {
            continue;
        }
        let b = amplitude * (1.0 - s * s).powi(3);
        for (d, v) in f.slice_mut(ix, 0).iter_mut().zip(shape) {
            *d = Complex64::new(b * v, 0.0);
        }
    }
    f
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityMember {
    pub fit: Option<DecayFit>,
    /// `(t, L2, Linf_beta, bracket)` of `g(t) − g*(t)`
    pub series: Vec<(f64, f64, f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityReport {
    pub members: Vec<StabilityMember>,
    /// fits of `[[g_i(t) − g_j(t)]]_β` for `i < j`
    pub pairwise: Vec<((usize, usize), Option<DecayFit>)>,
    /// samples below this are excluded from fits
    pub floor: f64,
    pub passed: bool,
}

/// Evolves `g*(0) + p` for each perturbation over `n_periods` periods and
/// fits the decay of the distance to the periodic extension of the orbit.
pub fn stability_experiment(
    problem: &Problem,
    orbit: &PeriodicOrbit,
    perturbations: &[DistributionField],
    n_periods: usize,
    opts: &ExtractOptions,
    min_r2: f64,
) -> Result<StabilityReport> {
    let steps = orbit.steps_per_period;
    let floor = (1e3 * opts.cauchy_tol * orbit.scale).max(1e3 * opts.picard.tol * orbit.scale);
    let mut members = Vec::new();
    let mut runs: Vec<Vec<DistributionField>> = Vec::new();
    for p in perturbations {
        let mut start = orbit.samples[0].clone();
        start.axpy(1.0, p);
        start.time = 0.0;
        let mut series = Vec::new();
        let mut kept: Vec<DistributionField> = Vec::new();
        for k in 0..n_periods {
            let t0 = k as f64 * orbit.period;
            let guess = orbit.samples.clone();
            let (traj, _) = problem.solve(&start, t0, steps, Some(guess), &opts.picard)?;
            let first = if k == 0 { 0 } else { 1 };
            for (s, f) in traj.iter().enumerate().skip(first) {
                let d = f.difference(&orbit.samples[s]);
                let r = problem.weights.report(&d);
                series.push((f.time, r.l2, r.linf_beta, r.bracket));
                kept.push(f.clone());
            }
            start = traj[steps].clone();
        }
        let fit_series: Vec<(f64, f64)> = series.iter().filter(|s| s.3 > floor).map(|s| (s.0, s.3)).collect();
        let fit = if fit_series.len() >= 8 { Some(decay_fit(&fit_series, None)?) } else { None };
        members.push(StabilityMember { fit, series });
        runs.push(kept);
    }
    let mut pairwise = Vec::new();
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            let s: Vec<(f64, f64)> = runs[i]
                .iter()
                .zip(&runs[j])
                .map(|(a, b)| (a.time, problem.bracket(&a.difference(b))))
                .filter(|(_, d)| *d > floor)
                .collect();
            let fit = if s.len() >= 8 { Some(decay_fit(&s, None)?) } else { None };
            pairwise.push(((i, j), fit));
        }
    }
    let ok = |f: &Option<DecayFit>| f.map_or(false, |f| f.rate > 0.0 && f.r2 >= min_r2);
    let passed = members.iter().all(|m| ok(&m.fit)) && pairwise.iter().all(|(_, f)| ok(f));
    Ok(StabilityReport { members, pairwise, floor, passed })
}

// ---------------------------------------------------------------------------
// smallness calibration

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EtaReport {
    /// largest data size with a measured contraction below one
    pub eta: f64,
    /// `(δ, contraction)`; `None` marks a failed solve
    pub evaluations: Vec<(f64, Option<f64>)>,
}

/// Bisection in `log δ` for the largest data size whose Picard iteration
/// contracts. `contraction(δ)` runs a short solve and returns its estimate.
pub fn calibrate_eta<F>(lo: f64, hi: f64, steps: usize, mut contraction: F) -> Result<EtaReport>
where
    F: FnMut(f64) -> Option<f64>,
{
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::InvalidParameter(format!("need 0 < lo < hi, got {lo}, {hi}")));
    }
    let mut evaluations = Vec::new();
    let good = |c: Option<f64>| c.map_or(false, |c| c < 1.0);
    let c_lo = contraction(lo);
    evaluations.push((lo, c_lo));
    if !good(c_lo) {
        return Err(Error::NonConvergence(format!("no contraction even at δ = {lo:e}")));
    }
    let c_hi = contraction(hi);
    evaluations.push((hi, c_hi));
    if good(c_hi) {
        return Ok(EtaReport { eta: hi, evaluations });
    }
    let (mut a, mut b) = (lo.ln(), hi.ln());
    for _ in 0..steps {
        let m = 0.5 * (a + b);
        let c = contraction(m.exp());
        evaluations.push((m.exp(), c));
        if good(c) {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(EtaReport { eta: a.exp(), evaluations })
}

/// Dense `N × N` helper for tests: the slab system matrix applied to a
/// profile, `ξ₁ D f − L f` with boundary rows replaced by the identity.
pub fn slab_operator_apply(profile: &[Vec<f64>], ops: &Operators, xgrid: &SpatialGrid) -> Vec<Vec<f64>> {
    let x = xgrid.nodes();
    let n = profile.len();
    let l: DMatrix<f64> = ops.op.l_matrix();
    (0..n)
        .map(|m| {
            let lf = &l * DVector::from_column_slice(&profile[m]);
            ops.vgrid
                .nodes()
                .iter()
                .enumerate()
                .map(|(i, xi)| {
                    if (m == 0 && xi[0] > 0.0) || (m == n - 1 && xi[0] <= 0.0) {
                        return profile[m][i];
                    }
                    let d = if xi[0] > 0.0 {
                        xi[0] * (profile[m][i] - profile[m - 1][i]) / (x[m] - x[m - 1])
                    } else {
                        xi[0] * (profile[m + 1][i] - profile[m][i]) / (x[m + 1] - x[m])
                    };
                    d - lf[i]
                })
                .collect()
        })
        .collect()
}
