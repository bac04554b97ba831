//! Verification experiments shared by the `verify-all` pipeline and the
//! acceptance suite. Every report carries the measured values together with
//! the threshold it was judged against.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::collision::{a_matrix, CollisionQuadrature, SpectralReport};
use crate::config::{Config, NonlinearConfig};
use crate::constants::nu0;
use crate::error::{Error, Result};
use crate::fit::{decay_fit, DecayFit};
use crate::kernel::{extended_grid, kernel_estimates, scan_exponents, KernelEstimateReport};
use crate::model::Operators;
use crate::nonlinear::{
    calibrate_eta, extract_periodic, perturbation_family, solve_slab_stationary, solve_time_global, stability_experiment,
    verify_stationarity, EtaReport, ExtractOptions, PeriodicOrbit, Problem, SlabOptions, SlabSolution,
    StabilityReport, StationarityReport,
};
use crate::norms::NormWeights;
use crate::problem::ProblemData;
use crate::semigroup::{default_sigma, LinearEvolver};
use crate::spatial::{BoundarySpec, DistributionField, LiftKind, Representation, SpatialGrid};
use crate::sphere::SphereRule;
use crate::velocity::{build_null_basis, maxwellian, moment_scale, moments, EquilibriumState, VelocityGrid};

pub const CONSERVATION_TOL: f64 = 1e-12;
pub const CONSERVATION_TRIALS: usize = 100;
pub const EQUILIBRIUM_TOL: f64 = 1e-6;
/// relative residuals below this count as round-off and need not decrease
pub const EQUILIBRIUM_FLOOR: f64 = 1e-13;
pub const NULL_TOL: f64 = 1e-8;
pub const A_SIGN_TOL: f64 = 1e-6;

/// Refinement sequence of the equilibrium check.
pub const SPHERE_REFINEMENT: [SphereRule; 4] = [
    SphereRule::Aligned { n_polar: 1, n_azimuth: 4 },
    SphereRule::Aligned { n_polar: 2, n_azimuth: 6 },
    SphereRule::Aligned { n_polar: 3, n_azimuth: 8 },
    SphereRule::Aligned { n_polar: 4, n_azimuth: 12 },
];

// ---------------------------------------------------------------------------
// collision operator

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConservationReport {
    pub trials: usize,
    pub seed: u64,
    /// worst `|∫Q ψ_k| / ∫|Q ψ_k|` per invariant `1, ξ₁, ξ₂, ξ₃, |ξ|²`
    pub max_relative: [f64; 5],
    pub tolerance: f64,
    pub passed: bool,
}

/// Moments of `Q(F, G)` for seeded random pairs `F = W₀·U(−1, 1)`.
pub fn conservation_check(quad: &CollisionQuadrature, trials: usize, seed: u64) -> ConservationReport {
    let grid = quad.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w0 = quad.w0();
    let samples: Vec<(Vec<f64>, Vec<f64>)> = (0..trials)
        .map(|_| {
            let a: Vec<f64> = w0.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = w0.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
            (a, b)
        })
        .collect();
    let pairs: Vec<(&[f64], &[f64])> = samples.iter().map(|(a, b)| (a.as_slice(), b.as_slice())).collect();
    let mut worst = [0.0f64; 5];
    // Q(W₀a, W₀b) = W₀Γ(a, b)
    for gam in quad.gamma_pairs(&pairs) {
        let q: Vec<f64> = gam.iter().zip(w0).map(|(v, w)| v * w).collect();
        let m = moments(&q, grid).as_array();
        let s = moment_scale(&q, grid);
        for k in 0..5 {
            if s[k] > 0.0 {
                worst[k] = worst[k].max(m[k].abs() / s[k]);
            }
        }
    }
    ConservationReport {
        trials,
        seed,
        max_relative: worst,
        tolerance: CONSERVATION_TOL,
        passed: worst.iter().all(|v| *v <= CONSERVATION_TOL),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquilibriumRow {
    pub rule: SphereRule,
    pub directions: usize,
    /// `‖Q(M∞, M∞)‖ / ‖M∞‖²`
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub rows: Vec<EquilibriumRow>,
    pub tolerance: f64,
    pub floor: f64,
    /// every step of the refinement decreases the residual or stays below the floor
    pub decreasing: bool,
    pub passed: bool,
}

pub fn equilibrium_check(state: &EquilibriumState, grid: &VelocityGrid, rules: &[SphereRule]) -> Result<EquilibriumReport> {
    let m = maxwellian(state, grid);
    let norm_m = grid.norm(&m);
    let mut rows = Vec::new();
    for &rule in rules {
        let quad = CollisionQuadrature::new(state, grid, rule)?;
        let q = quad.collision_q(&m, &m);
        rows.push(EquilibriumRow { rule, directions: quad.sphere().len(), residual: grid.norm(&q) / (norm_m * norm_m) });
    }
    let decreasing = rows.windows(2).all(|w| w[1].residual <= w[0].residual.max(EQUILIBRIUM_FLOOR));
    let passed = !rows.is_empty() && decreasing && rows.iter().all(|r| r.residual <= EQUILIBRIUM_TOL);
    Ok(EquilibriumReport { rows, tolerance: EQUILIBRIUM_TOL, floor: EQUILIBRIUM_FLOOR, decreasing, passed })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralCheck {
    pub report: SpectralReport,
    pub null_tolerance: f64,
    pub passed: bool,
}

pub fn spectral_check(ops: &Operators) -> Result<SpectralCheck> {
    let report = ops.op.spectral_report(&ops.vgrid)?;
    let passed = report.null_count == 5 && report.gap > 0.0 && report.nu1 > 0.0 && report.max_eigenvalue <= NULL_TOL;
    Ok(SpectralCheck { report, null_tolerance: NULL_TOL, passed })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ASignCase {
    pub mach: f64,
    pub u_inf: [f64; 3],
    pub eigenvalues: [f64; 5],
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ASignReport {
    pub cases: Vec<ASignCase>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Eigenvalues of `A = Pξ₁P` for the inflow state, its mirror image and the
/// state at rest (same density and temperature).
pub fn a_sign_check(state: &EquilibriumState, grid: &VelocityGrid) -> Result<ASignReport> {
    let u = state.u_inf[0];
    let variants = [(u, 1), (-u, -1), (0.0, 0)];
    let mut cases = Vec::new();
    for (u1, kind) in variants {
        let st = EquilibriumState { u_inf: [u1, 0.0, 0.0], ..*state };
        let basis = build_null_basis(&st, grid)?;
        let (_, ev) = a_matrix(grid, &basis);
        let sign = if u < 0.0 { kind } else { -kind };
        let passed = match sign {
            1 => ev.iter().all(|e| *e < -A_SIGN_TOL),
            -1 => ev.iter().all(|e| *e > A_SIGN_TOL),
            _ => {
                let scale = ev.iter().fold(0.0f64, |m, e| m.max(e.abs()));
                // sorted descending: e_k = −e_{4−k}
                (0..5).all(|k| (ev[k] + ev[4 - k]).abs() <= A_SIGN_TOL.max(1e-10 * scale))
            }
        };
        cases.push(ASignCase { mach: st.mach_number(), u_inf: st.u_inf, eigenvalues: ev, passed });
    }
    let passed = cases.iter().all(|c| c.passed);
    Ok(ASignReport { cases, tolerance: A_SIGN_TOL, passed })
}

// ---------------------------------------------------------------------------
// kernel

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelCheck {
    pub estimates: KernelEstimateReport,
    pub feasible: bool,
    pub passed: bool,
}

/// Exponent scan and `A_{p′,q′}` on `ops` and on the grid extended by
/// `cfg.kernel.refine_factor` (assembled by `extend`).
pub fn kernel_check<F>(cfg: &Config, ops: &Operators, extend: F) -> Result<KernelCheck>
where
    F: FnOnce(&VelocityGrid) -> Result<Operators>,
{
    let pair = scan_exponents(cfg.kernel.scan_step, cfg.kernel.margin)?;
    let big_grid = extended_grid(&ops.vgrid, cfg.kernel.refine_factor)?;
    let big = extend(&big_grid)?;
    let estimates =
        kernel_estimates(pair, &[(&ops.op, &ops.vgrid), (&big.op, &big.vgrid)], cfg.kernel.saturation_tol)?;
    let feasible = crate::kernel::pq_feasible(pair.p, pair.q);
    let passed = feasible && estimates.saturated;
    Ok(KernelCheck { estimates, feasible, passed })
}

// ---------------------------------------------------------------------------
// linear semigroup

/// Gaussian datum `e^{−(x−c)²/(2w²)} e^{−|ξ|²/2}(1 + 0.3ξ₁)` in the zero mode.
pub fn gaussian_datum(xgrid: &SpatialGrid, vgrid: &VelocityGrid, centre: f64, width: f64) -> DistributionField {
    let mut h = DistributionField::for_grids(xgrid, vgrid, Representation::Weighted);
    let shape: Vec<f64> = vgrid
        .nodes()
        .iter()
        .map(|xi| (-0.5 * (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2])).exp() * (1.0 + 0.3 * xi[0]))
        .collect();
    for (ix, x) in xgrid.nodes().iter().enumerate() {
        let a = (-(x - centre).powi(2) / (2.0 * width * width)).exp();
        for (d, s) in h.slice_mut(ix, 0).iter_mut().zip(&shape) {
            *d = Complex64::new(a * s, 0.0);
        }
    }
    h
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearDecayReport {
    pub sigma: f64,
    pub dt: f64,
    pub steps: usize,
    pub window: [f64; 2],
    pub l2_fit: DecayFit,
    pub weighted_fit: DecayFit,
    pub kappa_hat: f64,
    /// `ν̂₀` on the grid of the experiment
    pub nu0: f64,
    pub kappa_bound: f64,
    pub min_r2: f64,
    pub passed: bool,
    /// `(t, L2, Linf_beta, bracket)`
    #[serde(skip)]
    pub series: Vec<[f64; 4]>,
}

pub fn linear_decay(cfg: &Config, ops: &Operators) -> Result<LinearDecayReport> {
    let lc = &cfg.linear;
    let xgrid = SpatialGrid::slab(lc.n_x, lc.x_max, lc.stretch)?;
    let sigma = lc.sigma.unwrap_or_else(|| default_sigma(&ops.op.nu, &ops.vgrid));
    let dt = lc.dt_factor / ops.op.max_nu();
    let steps = (lc.t_final / dt).round() as usize;
    let evolver = LinearEvolver::new(ops, &xgrid, sigma, dt)?;
    let h0 = gaussian_datum(&xgrid, &ops.vgrid, lc.datum_centre, lc.datum_width);
    let traj = evolver.evolve_linear(&h0, steps)?;
    let w = NormWeights::new(cfg.beta, &ops.vgrid, &xgrid)?;
    let series: Vec<[f64; 4]> = traj
        .iter()
        .map(|f| {
            let r = w.report(f);
            [f.time, r.l2, r.linf_beta, r.bracket]
        })
        .collect();
    let window = Some((lc.fit_window[0], lc.fit_window[1]));
    let l2: Vec<(f64, f64)> = series.iter().map(|s| (s[0], s[1])).collect();
    let wb: Vec<(f64, f64)> = series.iter().map(|s| (s[0], s[2])).collect();
    let l2_fit = decay_fit(&l2, window)?;
    let weighted_fit = decay_fit(&wb, window)?;
    let nu0 = nu0(&ops.op.nu, &ops.vgrid);
    let kappa_bound = 0.5 * nu0 * (1.0 + lc.kappa_tolerance);
    let kappa_hat = l2_fit.rate;
    let passed = kappa_hat > 0.0 && l2_fit.r2 >= lc.min_r2 && weighted_fit.rate > 0.0 && kappa_hat <= kappa_bound;
    Ok(LinearDecayReport {
        sigma,
        dt,
        steps,
        window: lc.fit_window,
        l2_fit,
        weighted_fit,
        kappa_hat,
        nu0,
        kappa_bound,
        min_r2: lc.min_r2,
        passed,
        series,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeriesCheck {
    pub grid: String,
    pub order: usize,
    pub t: f64,
    pub steps: usize,
    /// `‖Σ_{m≤order} h_m − S(t)h₀‖ / ‖S(t)h₀‖` in L²
    pub relative_difference: f64,
    /// L² norm of each series term at `t`
    pub term_norms: Vec<f64>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Truncated Duhamel series against the time-stepped semigroup at `t = 1/max ν`.
pub fn series_check(cfg: &Config, ops: &Operators) -> Result<SeriesCheck> {
    let sc = &cfg.linear.series;
    let xgrid = SpatialGrid::slab(sc.n_x, sc.x_max, sc.stretch)?;
    let sigma = default_sigma(&ops.op.nu, &ops.vgrid);
    let t = 1.0 / ops.op.max_nu();
    let dt = t / sc.steps as f64;
    let evolver = LinearEvolver::new(ops, &xgrid, sigma, dt)?;
    let h0 = gaussian_datum(&xgrid, &ops.vgrid, 0.5 * sc.x_max, sc.datum_width);
    let traj = evolver.evolve_linear(&h0, sc.steps)?;
    let exact = traj.last().expect("trajectory includes the datum");
    let series = evolver.duhamel_series(&h0, sc.steps, sc.order)?;
    let w = NormWeights::new(cfg.beta, &ops.vgrid, &xgrid)?;
    let relative_difference = w.l2(&series.sum.difference(exact)) / w.l2(exact);
    let term_norms = series.terms.iter().map(|f| w.l2(f)).collect();
    Ok(SeriesCheck {
        grid: ops.vgrid.descriptor(),
        order: sc.order,
        t,
        steps: sc.steps,
        relative_difference,
        term_norms,
        tolerance: sc.tolerance,
        passed: relative_difference <= sc.tolerance,
    })
}

// ---------------------------------------------------------------------------
// slab boundary layer

fn slab_spec(delta_tilde: f64, beta: f64, profile_width: f64) -> BoundarySpec {
    BoundarySpec {
        delta_tilde,
        beta,
        epsilon: 0.0,
        period: 1.0,
        time_dependent: false,
        profile_width,
        mollifier_radius: None,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlabCheck {
    pub solution: SlabSolution,
    pub gamma0: Option<f64>,
    pub r2: Option<f64>,
    pub min_r2: f64,
    pub passed: bool,
}

pub fn slab_check(cfg: &Config, ops: &Operators) -> Result<SlabCheck> {
    let sc = &cfg.slab;
    let xgrid = SpatialGrid::slab(sc.n_x, sc.x_max, sc.stretch)?;
    let spec = slab_spec(sc.delta_tilde, cfg.beta, cfg.nonlinear.profile_width);
    let opts = SlabOptions {
        tol: sc.tol,
        max_iter: sc.max_iter,
        theta: sc.theta,
        fit_window: sc.fit_window.map(|w| (w[0], w[1])),
    };
    let solution = solve_slab_stationary(&spec, ops, &xgrid, &opts)?;
    let gamma0 = solution.fit.map(|f| f.rate);
    let r2 = solution.fit.map(|f| f.r2);
    let passed = gamma0.map_or(false, |g| g > 0.0) && r2.map_or(false, |r| r >= sc.min_r2) && solution.bound_violations == 0;
    Ok(SlabCheck { solution, gamma0, r2, min_r2: sc.min_r2, passed })
}

// ---------------------------------------------------------------------------
// nonlinear problem

/// Spatial grids, boundary data and time step of the nonlinear runs.
#[derive(Debug, Clone)]
pub struct NonlinearSetup {
    pub xgrid: SpatialGrid,
    pub slab_grid: SpatialGrid,
    pub spec: BoundarySpec,
    pub kind: LiftKind,
    pub dt: f64,
}

impl NonlinearSetup {
    pub fn new(nl: &NonlinearConfig, beta: f64, delta_tilde: f64, epsilon: f64, time_dependent: bool) -> Result<Self> {
        Self::with_modes(nl, &nl.modes, nl.mollifier_radius, beta, delta_tilde, epsilon, time_dependent)
    }

    pub fn with_modes(
        nl: &NonlinearConfig,
        modes: &[[i32; 2]],
        mollifier_radius: Option<f64>,
        beta: f64,
        delta_tilde: f64,
        epsilon: f64,
        time_dependent: bool,
    ) -> Result<Self> {
        let xgrid = SpatialGrid::new(nl.n_x, nl.x_max, nl.stretch, modes.to_vec(), nl.tangential_period)?;
        let slab_grid = SpatialGrid::slab(nl.n_x, nl.x_max, nl.stretch)?;
        let spec = BoundarySpec {
            delta_tilde,
            beta,
            epsilon,
            period: nl.period,
            time_dependent,
            profile_width: nl.profile_width,
            mollifier_radius,
        };
        let kind = if time_dependent { LiftKind::Periodic } else { LiftKind::Stationary };
        Ok(Self { xgrid, slab_grid, spec, kind, dt: nl.period / nl.steps_per_period as f64 })
    }

    /// Periodic setup with the configured `δ̃` and `ε`.
    pub fn periodic(cfg: &Config) -> Result<Self> {
        let nl = &cfg.nonlinear;
        Self::new(nl, cfg.beta, nl.delta_tilde, nl.epsilon, true)
    }

    /// Time-independent data (`ε = 0`) with the stationary lift.
    pub fn stationary(cfg: &Config) -> Result<Self> {
        let nl = &cfg.nonlinear;
        Self::new(nl, cfg.beta, nl.delta_tilde, 0.0, false)
    }

    /// Time-independent data on the modes of the stationarity check.
    pub fn stationarity(cfg: &Config) -> Result<Self> {
        let nl = &cfg.nonlinear;
        let st = &cfg.stationarity;
        Self::with_modes(nl, &st.modes, st.mollifier_radius, cfg.beta, nl.delta_tilde, 0.0, false)
    }

    /// Solves the slab problem for `f̃` and assembles `V` and `H`.
    pub fn data(&self, ops: &Operators, sigma: f64) -> Result<(ProblemData, SlabSolution)> {
        let slab_spec = slab_spec(self.spec.delta_tilde, self.spec.beta, self.spec.profile_width);
        let slab = solve_slab_stationary(&slab_spec, ops, &self.slab_grid, &SlabOptions::default())?;
        let data = ProblemData::assemble(ops, &self.xgrid, &self.spec, self.kind, sigma, Some(&slab.profile))?;
        Ok((data, slab))
    }

    pub fn zero(&self, ops: &Operators) -> DistributionField {
        DistributionField::for_grids(&self.xgrid, &ops.vgrid, Representation::Weighted)
    }
}

fn extract_options(nl: &NonlinearConfig, k_max: usize) -> ExtractOptions {
    ExtractOptions { k_max, cauchy_tol: nl.cauchy_tol, picard: nl.picard.clone() }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlobalRow {
    pub delta: f64,
    pub g0_bracket: f64,
    pub norm: f64,
    /// `|||g||| / ([[g₀]]_β + δ)`
    pub constant: f64,
    pub iterations: usize,
    pub contraction: f64,
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlobalCheck {
    pub steps: usize,
    pub dt: f64,
    pub rows: Vec<GlobalRow>,
    pub eta: EtaReport,
    pub eta_steps: usize,
    pub constant_spread: f64,
    pub constant_factor: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// `(t, L2, Linf_beta, bracket)` of the solution at the smallest `δ`
    #[serde(skip)]
    pub series: Vec<[f64; 4]>,
}

/// Data of size `δ`: `δ̃ = ε = δ/2` and a seeded initial perturbation of size `δ`.
fn global_problem_data(
    cfg: &Config,
    ops: &Operators,
    delta: f64,
) -> Result<(NonlinearSetup, ProblemData, DistributionField)> {
    let setup = NonlinearSetup::new(&cfg.nonlinear, cfg.beta, 0.5 * delta, 0.5 * delta, true)?;
    let (data, _) = setup.data(ops, cfg.nonlinear.sigma)?;
    let g0 = perturbation_family(cfg.seed, 1, delta, cfg.beta, &ops.vgrid, &setup.xgrid).remove(0);
    Ok((setup, data, g0))
}

pub fn global_check(cfg: &Config, ops: &Operators) -> Result<GlobalCheck> {
    let nl = &cfg.nonlinear;
    let gc = &cfg.global;
    let dt = nl.period / nl.steps_per_period as f64;
    let eta_steps = nl.steps_per_period;
    let eta = calibrate_eta(gc.eta.lo, gc.eta.hi, gc.eta.bisections, |d| {
        let (setup, data, g0) = global_problem_data(cfg, ops, d).ok()?;
        let evolver = LinearEvolver::new(ops, &setup.xgrid, nl.sigma, dt).ok()?;
        let pb = Problem::new(&evolver, &data).ok()?;
        pb.contraction_estimate(&g0, eta_steps, gc.eta.iterations, nl.picard.ceiling).ok().flatten()
    })?;
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for &delta in &gc.deltas {
        let (setup, data, g0) = global_problem_data(cfg, ops, delta)?;
        let evolver = LinearEvolver::new(ops, &setup.xgrid, nl.sigma, dt)?;
        let pb = Problem::new(&evolver, &data)?;
        let (traj, state) = solve_time_global(&pb, &g0, gc.steps, &nl.picard)?;
        let g0_bracket = pb.bracket(&g0);
        if series.is_empty() {
            series = traj
                .iter()
                .map(|f| {
                    let r = pb.weights.report(f);
                    [f.time, r.l2, r.linf_beta, r.bracket]
                })
                .collect();
        }
        rows.push(GlobalRow {
            delta,
            g0_bracket,
            norm: state.norm,
            constant: state.norm / (g0_bracket + delta),
            iterations: state.iterations,
            contraction: state.contraction,
            residual: state.residual,
            converged: state.converged,
        });
    }
    let cmax = rows.iter().map(|r| r.constant).fold(0.0, f64::max);
    let cmin = rows.iter().map(|r| r.constant).fold(f64::MAX, f64::min);
    let constant_spread = if cmin > 0.0 { cmax / cmin } else { f64::INFINITY };
    let tolerance = nl.picard.tol;
    let passed = !rows.is_empty()
        && rows.iter().all(|r| r.delta <= eta.eta && r.converged && r.contraction < 1.0 && r.residual <= tolerance)
        && constant_spread <= gc.constant_factor;
    Ok(GlobalCheck {
        steps: gc.steps,
        dt,
        rows,
        eta,
        eta_steps,
        constant_spread,
        constant_factor: gc.constant_factor,
        tolerance,
        passed,
        series,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeriodicCheck {
    pub orbit: PeriodicOrbit,
    /// `[[g*(T*) − g*(0)]]_β / sup_t [[g*(t)]]_β`
    pub relative_mismatch: f64,
    pub tolerance: f64,
    pub min_r2: f64,
    pub passed: bool,
}

/// Extracts the orbit of `setup` from zero initial data with at most `k_max` periods.
pub fn periodic_orbit(cfg: &Config, ops: &Operators, setup: &NonlinearSetup, k_max: usize) -> Result<PeriodicOrbit> {
    let nl = &cfg.nonlinear;
    let (data, _) = setup.data(ops, nl.sigma)?;
    let evolver = LinearEvolver::new(ops, &setup.xgrid, nl.sigma, setup.dt)?;
    let pb = Problem::new(&evolver, &data)?;
    extract_periodic(&pb, &setup.zero(ops), nl.steps_per_period, &extract_options(nl, k_max))
}

pub fn periodic_check(cfg: &Config, ops: &Operators) -> Result<PeriodicCheck> {
    let nl = &cfg.nonlinear;
    let setup = NonlinearSetup::periodic(cfg)?;
    let orbit = periodic_orbit(cfg, ops, &setup, nl.k_max)?;
    let relative_mismatch = orbit.endpoint_mismatch / orbit.scale.max(f64::MIN_POSITIVE);
    let passed = orbit.converged
        && orbit.kappa_hat.map_or(false, |k| k > 0.0)
        && orbit.fit.map_or(false, |f| f.r2 >= nl.min_r2)
        && relative_mismatch <= nl.cauchy_tol;
    Ok(PeriodicCheck { orbit, relative_mismatch, tolerance: nl.cauchy_tol, min_r2: nl.min_r2, passed })
}

/// Stationary orbits at the halved periods; the first is the reference orbit.
pub fn stationarity_check(cfg: &Config, ops: &Operators) -> Result<(StationarityReport, Vec<PeriodicOrbit>)> {
    let nl = &cfg.nonlinear;
    let setup = NonlinearSetup::stationarity(cfg)?;
    let (data, _) = setup.data(ops, nl.sigma)?;
    let evolver = LinearEvolver::new(ops, &setup.xgrid, nl.sigma, setup.dt)?;
    let pb = Problem::new(&evolver, &data)?;
    let opts = extract_options(nl, cfg.stationarity.k_max);
    verify_stationarity(&pb, &setup.zero(ops), nl.steps_per_period, cfg.stationarity.levels, &opts, cfg.stationarity.tolerance)
}

/// Perturbations of the orbit selected by `stability.target`.
pub fn stability_check(cfg: &Config, ops: &Operators, orbit: &PeriodicOrbit, setup: &NonlinearSetup) -> Result<StabilityReport> {
    let nl = &cfg.nonlinear;
    let sc = &cfg.stability;
    if orbit.steps_per_period != nl.steps_per_period {
        return Err(Error::InvalidParameter("the orbit does not match the configured time step".into()));
    }
    let (data, _) = setup.data(ops, nl.sigma)?;
    let evolver = LinearEvolver::new(ops, &setup.xgrid, nl.sigma, setup.dt)?;
    let pb = Problem::new(&evolver, &data)?;
    let perts = perturbation_family(cfg.seed, sc.count, sc.amplitude, cfg.beta, &ops.vgrid, &setup.xgrid);
    stability_experiment(&pb, orbit, &perts, sc.periods, &extract_options(nl, nl.k_max), sc.min_r2)
}
