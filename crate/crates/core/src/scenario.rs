//! Command pipelines. Each runs one experiment family and writes its reports,
//! CSVs, snapshots and a manifest into the artifact directory.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{Config, StabilityTarget};
use crate::constants::{nu0, operator_constants, ConstantsReport};
use crate::error::Result;
use crate::io::{cached_operators, moment_profile, ArtifactDir, MOMENT_COLUMNS};
use crate::model::Operators;
use crate::nonlinear::{PeriodicOrbit, StabilityReport};
use crate::norms::NormWeights;
use crate::semigroup::LinearEvolver;
use crate::spatial::{DistributionField, Representation, SpatialGrid};
use crate::velocity::VelocityGrid;
use crate::verify::{
    a_sign_check, global_check, conservation_check, equilibrium_check, gaussian_datum, kernel_check, linear_decay,
    periodic_check, periodic_orbit, series_check, slab_check, spectral_check, stability_check, stationarity_check,
    GlobalCheck, NonlinearSetup, SlabCheck, CONSERVATION_TRIALS, SPHERE_REFINEMENT,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Slab,
    Global,
    Periodic,
    Stationary,
    Stability,
    VerifyAll,
    Evolve,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Slab => "slab",
            Command::Global => "global",
            Command::Periodic => "periodic",
            Command::Stationary => "stationary",
            Command::Stability => "stability",
            Command::VerifyAll => "verify-all",
            Command::Evolve => "evolve",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// operator cache; `None` uses `<out_dir>/operators`
    pub cache_dir: Option<PathBuf>,
    pub rebuild_operator: bool,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self { out_dir: out_dir.into(), cache_dir: None, rebuild_operator: false }
    }
}

/// Envelope of every JSON report.
#[derive(Debug, Serialize)]
pub struct Report<'a, T: Serialize> {
    pub command: &'a str,
    pub config_hash: &'a str,
    pub config: &'a Config,
    /// content hash of each operator the report used, keyed by grid role
    pub operators: BTreeMap<String, String>,
    pub passed: Option<bool>,
    pub result: &'a T,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub command: String,
    pub config_hash: String,
    pub manifest_hash: String,
    /// pass/fail of each check the command ran
    pub checks: BTreeMap<String, bool>,
}

impl RunSummary {
    pub fn passed(&self) -> bool {
        self.checks.values().all(|v| *v)
    }
}

struct Session<'a> {
    cfg: &'a Config,
    command: Command,
    config_hash: String,
    cache_dir: PathBuf,
    rebuild: bool,
    out: ArtifactDir,
    operators: BTreeMap<String, String>,
    checks: BTreeMap<String, bool>,
}

impl<'a> Session<'a> {
    fn new(cfg: &'a Config, command: Command, opts: &RunOptions) -> Result<Self> {
        let out = ArtifactDir::create(&opts.out_dir)?;
        Ok(Self {
            cfg,
            command,
            config_hash: cfg.hash(),
            cache_dir: opts.cache_dir.clone().unwrap_or_else(|| opts.out_dir.join("operators")),
            rebuild: opts.rebuild_operator,
            out,
            operators: BTreeMap::new(),
            checks: BTreeMap::new(),
        })
    }

    fn operators(&mut self, role: &str, grid: &VelocityGrid) -> Result<Operators> {
        let (ops, hash) =
            cached_operators(&self.cfg.equilibrium, grid, self.cfg.sphere_rule, Some(&self.cache_dir), self.rebuild)?;
        self.operators.insert(role.to_string(), hash);
        Ok(ops)
    }

    fn dynamics(&mut self) -> Result<Operators> {
        let grid = self.cfg.dynamics_grid.build(&self.cfg.equilibrium)?;
        self.operators("dynamics_grid", &grid)
    }

    fn report<T: Serialize>(&mut self, file: &str, roles: &[&str], passed: Option<bool>, result: &T) -> Result<()> {
        let operators = roles
            .iter()
            .filter_map(|r| self.operators.get(*r).map(|h| (r.to_string(), h.clone())))
            .collect();
        let report = Report {
            command: self.command.name(),
            config_hash: &self.config_hash,
            config: self.cfg,
            operators,
            passed,
            result,
        };
        self.out.write_json(file, &report)?;
        Ok(())
    }

    fn check(&mut self, name: &str, passed: bool) -> Option<bool> {
        self.checks.insert(name.to_string(), passed);
        Some(passed)
    }

    fn finish(self) -> Result<RunSummary> {
        let manifest_hash =
            self.out.finish(self.command.name(), &self.config_hash, self.cfg.seed, self.operators.clone())?;
        Ok(RunSummary {
            command: self.command.name().to_string(),
            config_hash: self.config_hash,
            manifest_hash,
            checks: self.checks,
        })
    }
}

/// Runs `command` with `cfg` and writes every artifact under `opts.out_dir`.
pub fn run_scenario(command: Command, cfg: &Config, opts: &RunOptions) -> Result<RunSummary> {
    cfg.validate()?;
    let mut s = Session::new(cfg, command, opts)?;
    match command {
        Command::Slab => run_slab(&mut s)?,
        Command::Global => run_global(&mut s)?,
        Command::Periodic => run_periodic(&mut s)?,
        Command::Stationary => run_stationary(&mut s)?,
        Command::Stability => {
            let ops = s.dynamics()?;
            stability_stage(&mut s, &ops, None)?
        }
        Command::VerifyAll => run_verify_all(&mut s)?,
        Command::Evolve => run_evolve(&mut s)?,
    }
    s.finish()
}

fn series_rows(series: &[[f64; 4]]) -> Vec<Vec<f64>> {
    series.iter().map(|r| r.to_vec()).collect()
}

const NORM_COLUMNS: [&str; 4] = ["t", "L2", "Linf_beta", "bracket_norm"];

fn run_slab(s: &mut Session) -> Result<()> {
    let ops = s.dynamics()?;
    slab_stage(s, &ops).map(|_| ())
}

fn slab_stage(s: &mut Session, ops: &Operators) -> Result<SlabCheck> {
    let check = slab_check(s.cfg, ops)?;
    let passed = s.check("slab", check.passed);
    s.report("slab_report.json", &["dynamics_grid"], passed, &check)?;
    let sc = &s.cfg.slab;
    let xgrid = SpatialGrid::slab(sc.n_x, sc.x_max, sc.stretch)?;
    let field = DistributionField::from_slab_profile(&check.solution.profile, 1, Representation::Plain);
    let mut rows = moment_profile(&field, &xgrid, &ops.vgrid, ops.quad.w0());
    for (row, (_, sup)) in rows.iter_mut().zip(&check.solution.sup_series) {
        row.push(*sup);
    }
    let mut header = MOMENT_COLUMNS.to_vec();
    header.push("sup_weighted");
    s.out.write_csv("slab_profile.csv", &header, &rows)?;
    Ok(check)
}

fn run_global(s: &mut Session) -> Result<()> {
    let ops = s.dynamics()?;
    global_stage(s, &ops).map(|_| ())
}

fn global_stage(s: &mut Session, ops: &Operators) -> Result<GlobalCheck> {
    let check = global_check(s.cfg, ops)?;
    let passed = s.check("global", check.passed);
    s.report("global_report.json", &["dynamics_grid"], passed, &check)?;
    s.out.write_csv("norms.csv", &NORM_COLUMNS, &series_rows(&check.series))?;
    Ok(check)
}

fn write_orbit(s: &mut Session, prefix: &str, orbit: &PeriodicOrbit, setup: &NonlinearSetup, ops: &Operators) -> Result<()> {
    let rows: Vec<Vec<f64>> = orbit.cauchy.iter().map(|(k, d)| vec![*k as f64, *d]).collect();
    s.out.write_csv(&format!("{prefix}cauchy.csv"), &["k", "norm"], &rows)?;
    let n = orbit.steps_per_period;
    for (i, idx) in [0, n / 2].into_iter().enumerate() {
        let f = &orbit.samples[idx];
        s.out.write_snapshot(&format!("{prefix}orbit_{i}"), f, &setup.xgrid, &ops.vgrid)?;
        let rows = moment_profile(f, &setup.xgrid, &ops.vgrid, ops.quad.w0());
        s.out.write_csv(&format!("{prefix}orbit_{i}_moments.csv"), &MOMENT_COLUMNS, &rows)?;
    }
    Ok(())
}

fn run_periodic(s: &mut Session) -> Result<()> {
    let ops = s.dynamics()?;
    periodic_stage(s, &ops).map(|_| ())
}

fn periodic_stage(s: &mut Session, ops: &Operators) -> Result<PeriodicOrbit> {
    let check = periodic_check(s.cfg, ops)?;
    let passed = s.check("periodic", check.passed);
    s.report("periodic_report.json", &["dynamics_grid"], passed, &check)?;
    let setup = NonlinearSetup::periodic(s.cfg)?;
    write_orbit(s, "", &check.orbit, &setup, ops)?;
    Ok(check.orbit)
}

fn run_stationary(s: &mut Session) -> Result<()> {
    let ops = s.dynamics()?;
    stationary_stage(s, &ops)
}

fn stationary_stage(s: &mut Session, ops: &Operators) -> Result<()> {
    let (report, orbits) = stationarity_check(s.cfg, ops)?;
    let passed = s.check("stationary", report.passed);
    let result = json!({ "stationarity": report, "orbits": orbits });
    s.report("stationary_report.json", &["dynamics_grid"], passed, &result)?;
    let setup = NonlinearSetup::stationarity(s.cfg)?;
    write_orbit(s, "stationary_", &orbits[0], &setup, ops)
}

/// Perturbs the target orbit; `orbit` reuses one computed earlier in the run.
fn stability_stage(s: &mut Session, ops: &Operators, orbit: Option<PeriodicOrbit>) -> Result<()> {
    let setup = target_setup(s.cfg)?;
    let orbit = match orbit {
        Some(o) => o,
        None => {
            let k_max = match s.cfg.stability.target {
                StabilityTarget::Stationary => s.cfg.stationarity.k_max,
                StabilityTarget::Periodic => s.cfg.nonlinear.k_max,
            };
            periodic_orbit(s.cfg, ops, &setup, k_max)?
        }
    };
    let report = stability_check(s.cfg, ops, &orbit, &setup)?;
    write_stability(s, &report)
}

fn target_setup(cfg: &Config) -> Result<NonlinearSetup> {
    match cfg.stability.target {
        StabilityTarget::Stationary => NonlinearSetup::stationary(cfg),
        StabilityTarget::Periodic => NonlinearSetup::periodic(cfg),
    }
}

fn write_stability(s: &mut Session, report: &StabilityReport) -> Result<()> {
    let passed = s.check("stability", report.passed);
    s.report("stability_report.json", &["dynamics_grid"], passed, report)?;
    for (i, m) in report.members.iter().enumerate() {
        let rows: Vec<Vec<f64>> = m.series.iter().map(|r| vec![r.0, r.1, r.2, r.3]).collect();
        let name = if i == 0 { "stability.csv".to_string() } else { format!("stability_{i}.csv") };
        s.out.write_csv(&name, &["t", "diff_L2", "diff_Linf_beta", "bracket"], &rows)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvolveResult {
    dt: f64,
    steps: usize,
    sigma: f64,
    l2_fit: Option<crate::fit::DecayFit>,
    weighted_fit: Option<crate::fit::DecayFit>,
    series_order: Option<usize>,
    /// `‖Σ h_m − S(t)h₀‖ / ‖S(t)h₀‖` at the final time
    series_difference: Option<f64>,
    snapshots: Vec<String>,
}

/// Linear evolution of the configured Gaussian datum.
fn run_evolve(s: &mut Session) -> Result<()> {
    let cfg = s.cfg;
    let ops = s.dynamics()?;
    let lc = &cfg.linear;
    let ec = &cfg.evolve;
    let xgrid = SpatialGrid::slab(lc.n_x, lc.x_max, lc.stretch)?;
    let sigma = lc.sigma.unwrap_or_else(|| crate::semigroup::default_sigma(&ops.op.nu, &ops.vgrid));
    // shrink the step so the last one lands on t_final
    let target = ec.dt.unwrap_or(lc.dt_factor / ops.op.max_nu());
    let steps = ((ec.t_final / target - 1e-9).ceil() as usize).max(1);
    let dt = ec.t_final / steps as f64;
    let evolver = LinearEvolver::new(&ops, &xgrid, sigma, dt)?;
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
    s.out.write_csv("norms.csv", &NORM_COLUMNS, &series_rows(&series))?;
    let mut snapshots = Vec::new();
    if ec.snapshot_every > 0 {
        for (k, f) in traj.iter().enumerate().step_by(ec.snapshot_every) {
            let name = format!("snapshot_{k:06}");
            s.out.write_snapshot(&name, f, &xgrid, &ops.vgrid)?;
            let rows = moment_profile(f, &xgrid, &ops.vgrid, ops.quad.w0());
            s.out.write_csv(&format!("{name}_moments.csv"), &MOMENT_COLUMNS, &rows)?;
            snapshots.push(name);
        }
    }
    let window = Some((lc.fit_window[0].min(0.25 * ec.t_final), ec.t_final));
    let fit = |col: usize| {
        let pts: Vec<(f64, f64)> = series.iter().map(|r| (r[0], r[col])).collect();
        crate::fit::decay_fit(&pts, window).ok()
    };
    let series_difference = match ec.series_order {
        Some(m) => {
            let sum = evolver.duhamel_series(&h0, steps, m)?.sum;
            let last = traj.last().expect("trajectory includes the datum");
            Some(w.l2(&sum.difference(last)) / w.l2(last))
        }
        None => None,
    };
    let result = EvolveResult {
        dt,
        steps,
        sigma,
        l2_fit: fit(1),
        weighted_fit: fit(2),
        series_order: ec.series_order,
        series_difference,
        snapshots,
    };
    s.report("evolve_report.json", &["dynamics_grid"], None, &result)
}

#[derive(Debug, Serialize)]
struct VerifySummary {
    checks: BTreeMap<String, bool>,
    passed: bool,
}

fn run_verify_all(s: &mut Session) -> Result<()> {
    let cfg = s.cfg;
    let state = cfg.equilibrium;
    let grid = cfg.velocity_grid.build(&state)?;
    let ops = s.operators("velocity_grid", &grid)?;
    let mut constants = ConstantsReport::new(cfg.linear.kappa_tolerance);

    let cons = conservation_check(&ops.quad, CONSERVATION_TRIALS, cfg.seed);
    let p = s.check("conservation", cons.passed);
    s.report("conservation_report.json", &["velocity_grid"], p, &cons)?;

    let eq = equilibrium_check(&state, &grid, &SPHERE_REFINEMENT)?;
    let p = s.check("equilibrium", eq.passed);
    s.report("equilibrium_report.json", &[], p, &eq)?;

    let spec = spectral_check(&ops)?;
    let p = s.check("spectral", spec.passed);
    s.report("spectral_report.json", &["velocity_grid"], p, &spec)?;

    let a = a_sign_check(&state, &grid)?;
    let p = s.check("a_sign", a.passed);
    s.report("a_sign_report.json", &[], p, &a)?;

    let kernel = {
        let mut extended = None;
        let k = kernel_check(cfg, &ops, |g| {
            let o = s.operators("velocity_grid_extended", g)?;
            extended = Some(g.descriptor());
            Ok(o)
        })?;
        if let Some(d) = extended {
            constants.add_grid("kernel_extended", json!({ "grid": d }));
        }
        k
    };
    let p = s.check("kernel", kernel.passed);
    s.report("kernel_report.json", &["velocity_grid", "velocity_grid_extended"], p, &kernel)?;

    let oc = operator_constants(&ops, cfg.beta, cfg.kernel.gamma_trials, cfg.seed)?;
    constants.add_operator(&oc, "operator");
    constants.add_grid("operator", json!({ "grid": grid.descriptor(), "sphere_rule": cfg.sphere_rule }));
    constants.insert("A_pq", kernel.estimates.a_pq, "kernel");
    s.report("operator_constants.json", &["velocity_grid"], None, &oc)?;

    let dyn_ops = s.dynamics()?;
    let nu0_dyn = nu0(&dyn_ops.op.nu, &dyn_ops.vgrid);
    let lin = linear_decay(cfg, &dyn_ops)?;
    let p = s.check("linear_decay", lin.passed);
    s.report("linear_decay_report.json", &["dynamics_grid"], p, &lin)?;
    s.out.write_csv("linear_norms.csv", &NORM_COLUMNS, &series_rows(&lin.series))?;
    constants.insert("kappa", lin.kappa_hat, "linear_decay");
    constants.insert("nu0_dynamics", nu0_dyn, "linear_decay");
    constants.add_grid(
        "linear_decay",
        json!({ "grid": dyn_ops.vgrid.descriptor(), "n_x": cfg.linear.n_x, "x_max": cfg.linear.x_max, "sigma": lin.sigma, "dt": lin.dt }),
    );

    let series_grid = cfg.linear.series.velocity_grid.build(&state)?;
    let series_ops = s.operators("series_grid", &series_grid)?;
    let ser = series_check(cfg, &series_ops)?;
    let p = s.check("duhamel_series", ser.passed);
    s.report("series_report.json", &["series_grid"], p, &ser)?;

    let slab = slab_stage(s, &dyn_ops)?;
    if let (Some(g), Some(m)) = (slab.gamma0, slab.solution.m0) {
        constants.insert("gamma0", g, "slab");
        constants.insert("M0", m, "slab");
    }
    constants.add_grid("slab", json!({ "grid": dyn_ops.vgrid.descriptor(), "n_x": cfg.slab.n_x, "x_max": cfg.slab.x_max }));

    let global = global_stage(s, &dyn_ops)?;
    constants.insert("eta", global.eta.eta, "global");
    let cmax = global.rows.iter().map(|r| r.constant).fold(0.0, f64::max);
    constants.insert("C_global", cmax, "global");
    constants.add_grid(
        "nonlinear",
        json!({ "grid": dyn_ops.vgrid.descriptor(), "n_x": cfg.nonlinear.n_x, "x_max": cfg.nonlinear.x_max,
                "modes": cfg.nonlinear.modes, "sigma": cfg.nonlinear.sigma, "dt": global.dt }),
    );

    let periodic = periodic_stage(s, &dyn_ops)?;
    if let Some(k) = periodic.kappa_hat {
        constants.insert("kappa_periodic", k, "periodic");
    }

    stationary_stage(s, &dyn_ops)?;
    // the stationary target lives on the modes of the nonlinear runs, which
    // may differ from those of the stationarity check
    let target = match cfg.stability.target {
        StabilityTarget::Stationary => None,
        StabilityTarget::Periodic => Some(periodic),
    };
    stability_stage(s, &dyn_ops, target)?;

    constants.finish(Some(lin.kappa_hat), Some(nu0_dyn));
    let p = s.check("constants", constants.all_positive && constants.kappa_consistent.unwrap_or(false));
    s.report("constants_report.json", &["velocity_grid", "velocity_grid_extended", "dynamics_grid"], p, &constants)?;

    let summary = VerifySummary { checks: s.checks.clone(), passed: s.checks.values().all(|v| *v) };
    let passed = Some(summary.passed);
    let roles: Vec<String> = s.operators.keys().cloned().collect();
    let roles: Vec<&str> = roles.iter().map(|r| r.as_str()).collect();
    s.report("verify_report.json", &roles, passed, &summary)
}
