//! Runs `verify-all` twice on the reference configuration and re-evaluates
//! every acceptance criterion from the written artifacts. Fits are redone
//! here from the CSV series rather than taken from the reports.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use kinlayer::config::Config;
use kinlayer::scenario::{run_scenario, Command, RunOptions};
use serde_json::Value;

struct Outcome {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn outcome(name: &'static str, passed: bool, detail: String) -> Outcome {
    Outcome { name, passed, detail }
}

fn report(dir: &Path, file: &str) -> Value {
    let v: Value = serde_json::from_str(&fs::read_to_string(dir.join(file)).unwrap()).unwrap();
    v["result"].clone()
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap_or(f64::NAN)
}

fn csv(dir: &Path, file: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(dir.join(file)).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_owned).collect();
    let rows = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<f64>], name: &str) -> Vec<f64> {
    let i = header.iter().position(|h| h == name).unwrap();
    rows.iter().map(|r| r[i]).collect()
}

/// Least-squares fit of `log y = log a − r t`; returns `(r, a, r²)`.
fn exp_fit(t: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let pts: Vec<(f64, f64)> = t.iter().zip(y).filter(|(_, y)| **y > 0.0).map(|(t, y)| (*t, y.ln())).collect();
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sty / stt;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - my - slope * (p.0 - mt)).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    (-slope, (my - slope * mt).exp(), r2)
}

fn windowed(t: &[f64], y: &[f64], lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
    t.iter().zip(y).filter(|(t, _)| **t >= lo && **t <= hi).map(|(t, y)| (*t, *y)).unzip()
}

fn c1_conservation(dir: &Path) -> Outcome {
    let r = report(dir, "conservation_report.json");
    let worst = r["max_relative"].as_array().unwrap().iter().map(f).fold(0.0, f64::max);
    let trials = r["trials"].as_u64().unwrap();
    outcome("conservation", trials >= 100 && worst <= 1e-12, format!("{trials} pairs, max relative moment {worst:.2e}"))
}

fn c2_equilibrium(dir: &Path) -> Outcome {
    let r = report(dir, "equilibrium_report.json");
    let res: Vec<f64> = r["rows"].as_array().unwrap().iter().map(|row| f(&row["residual"])).collect();
    let floor = f(&r["floor"]);
    let small = res.iter().all(|v| *v <= 1e-6);
    let decreasing = res.windows(2).all(|w| w[1] <= w[0].max(floor));
    outcome(
        "equilibrium",
        small && decreasing && res.len() >= 2,
        format!("residuals {} under refinement (round-off floor {floor:.0e})", fmt_list(&res)),
    )
}

fn c3_spectral(dir: &Path) -> Outcome {
    let r = &report(dir, "spectral_report.json")["report"];
    let null = r["null_count"].as_u64().unwrap();
    let (gap, nu1, top) = (f(&r["gap"]), f(&r["nu1"]), f(&r["max_eigenvalue"]));
    outcome(
        "spectral",
        null == 5 && top <= 1e-8 && gap > 0.0 && nu1 > 0.0,
        format!("null count {null}, gap {gap:.4}, nu1 {nu1:.4}"),
    )
}

fn c4_a_sign(dir: &Path) -> Outcome {
    let r = report(dir, "a_sign_report.json");
    let mut ok = true;
    let mut detail = Vec::new();
    for case in r["cases"].as_array().unwrap() {
        let u = f(&case["u_inf"][0]);
        let mut ev: Vec<f64> = case["eigenvalues"].as_array().unwrap().iter().map(f).collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let good = if u < 0.0 {
            ev.iter().all(|e| *e < -1e-6)
        } else if u > 0.0 {
            ev.iter().all(|e| *e > 1e-6)
        } else {
            (0..5).all(|k| (ev[k] + ev[4 - k]).abs() <= 1e-6)
        };
        ok &= good;
        detail.push(format!("u1={u}: [{:.3}, {:.3}]", ev[0], ev[4]));
    }
    outcome("a_sign", ok && detail.len() == 3, detail.join("; "))
}

fn c5_kernel(dir: &Path) -> Outcome {
    let r = &report(dir, "kernel_report.json")["estimates"];
    let (p, q) = (f(&r["pair"]["p"]), f(&r["pair"]["q"]));
    let feasible = p > 3.0 && p < 4.0 && q > 1.0 && q < 3.0 && p < 2.0 * q && p * q < 3.0 * p - 2.0 * q;
    let conj = (f(&r["pair"]["p_conj"]) - p / (p - 1.0)).abs() < 1e-12 && (f(&r["pair"]["q_conj"]) - q / (q - 1.0)).abs() < 1e-12;
    let rows: Vec<f64> = r["refinement"].as_array().unwrap().iter().map(|row| f(&row["a_pq"])).collect();
    let n = rows.len();
    let change = (rows[n - 1] - rows[n - 2]).abs() / rows[n - 1].abs();
    outcome(
        "kernel",
        feasible && conj && change <= 0.05,
        format!("(p, q) = ({p}, {q}), A_p'q' {} , change {:.2}%", fmt_list(&rows), 100.0 * change),
    )
}

fn c6_linear(dir: &Path) -> Outcome {
    let r = report(dir, "linear_decay_report.json");
    let (h, rows) = csv(dir, "linear_norms.csv");
    let t = column(&h, &rows, "t");
    let (lo, hi) = (f(&r["window"][0]), f(&r["window"][1]));
    let (tw, l2) = windowed(&t, &column(&h, &rows, "L2"), lo, hi);
    let (_, wb) = windowed(&t, &column(&h, &rows, "Linf_beta"), lo, hi);
    let (kappa, _, r2) = exp_fit(&tw, &l2);
    let (wrate, _, _) = exp_fit(&tw, &wb);
    let nu0 = f(&r["nu0"]);
    let bound = 0.5 * nu0 * 1.1;
    outcome(
        "linear_decay",
        kappa > 0.0 && r2 >= 0.98 && wrate > 0.0 && kappa <= bound,
        format!("kappa {kappa:.4} (r2 {r2:.4}), weighted rate {wrate:.4}, bound nu0/2*1.1 = {bound:.4}"),
    )
}

fn c7_series(dir: &Path) -> Outcome {
    let r = report(dir, "series_report.json");
    let d = f(&r["relative_difference"]);
    let order = r["order"].as_u64().unwrap();
    let six = r["grid"].as_str().unwrap().starts_with("cartesian:6:");
    outcome(
        "duhamel_series",
        order == 6 && six && d <= 1e-3,
        format!("m = {order}, relative difference {d:.2e} at t = {:.4}", f(&r["t"])),
    )
}

fn c8_slab(dir: &Path, cfg: &Config) -> Outcome {
    let r = report(dir, "slab_report.json");
    let s = &r["solution"];
    let delta = f(&s["delta_tilde"]);
    let (h, rows) = csv(dir, "slab_profile.csv");
    let x = column(&h, &rows, "x");
    let sup = column(&h, &rows, "sup_weighted");
    let (lo, hi) = match cfg.slab.fit_window {
        Some([a, b]) => (a, b),
        None => (0.0, 0.5 * cfg.slab.x_max),
    };
    let (xw, sw) = windowed(&x, &sup, lo, hi);
    let (gamma, _, r2) = exp_fit(&xw, &sw);
    let m0 = f(&s["m0"]);
    let gamma_rep = f(&r["gamma0"]);
    let violations = x.iter().zip(&sup).filter(|(x, v)| **v > delta * m0 * (-gamma_rep * **x).exp() * (1.0 + 1e-12)).count();
    let converged = s["history"].as_array().map_or(false, |h| h.last().map_or(true, |v| f(v) <= cfg.slab.tol));
    outcome(
        "slab",
        delta == 1e-3 && converged && gamma > 0.0 && r2 >= 0.98 && (gamma - gamma_rep).abs() <= 1e-8 * gamma && violations == 0,
        format!("gamma0 {gamma:.4} (r2 {r2:.4}), M0 {m0:.3}, {violations} bound violations over {} nodes", x.len()),
    )
}

fn c9_global(dir: &Path) -> Outcome {
    let r = report(dir, "global_report.json");
    let eta = f(&r["eta"]["eta"]);
    let tol = f(&r["tolerance"]);
    let mut ok = true;
    let mut constants = Vec::new();
    let mut worst_contraction = 0.0f64;
    for row in r["rows"].as_array().unwrap() {
        let delta = f(&row["delta"]);
        let c = f(&row["contraction"]);
        worst_contraction = worst_contraction.max(c);
        ok &= delta <= eta && c < 1.0 && row["converged"].as_bool() == Some(true) && f(&row["residual"]) <= tol;
        constants.push(f(&row["norm"]) / (f(&row["g0_bracket"]) + delta));
    }
    // every calibration probe at or below η contracted
    for probe in r["eta"]["evaluations"].as_array().unwrap() {
        if f(&probe[0]) <= eta {
            ok &= probe[1].as_f64().map_or(false, |c| c < 1.0);
        }
    }
    let hi = constants.iter().cloned().fold(f64::MIN, f64::max);
    let lo = constants.iter().cloned().fold(f64::MAX, f64::min);
    outcome(
        "global",
        ok && lo > 0.0 && hi / lo <= 2.0,
        format!("eta {eta:.3e}, max contraction {worst_contraction:.2e}, C in [{lo:.4}, {hi:.4}]"),
    )
}

fn c10_periodic(dir: &Path) -> Outcome {
    let r = report(dir, "periodic_report.json");
    let period = f(&r["orbit"]["period"]);
    let (h, rows) = csv(dir, "cauchy.csv");
    let k = column(&h, &rows, "k");
    let d = column(&h, &rows, "norm");
    let t: Vec<f64> = k.iter().map(|k| k * period).collect();
    let (rate, _, r2) = exp_fit(&t, &d);
    let kappa = 2.0 * rate;
    let mismatch = f(&r["relative_mismatch"]);
    let tol = f(&r["tolerance"]);
    outcome(
        "periodic",
        kappa > 0.0 && r2 >= 0.95 && mismatch <= tol,
        format!("kappa {kappa:.4} (r2 {r2:.4}, {} samples), periodicity mismatch {mismatch:.2e} <= {tol:.0e}", d.len()),
    )
}

fn c11_stationary(dir: &Path, cfg: &Config) -> Outcome {
    let r = &report(dir, "stationary_report.json")["stationarity"];
    let periods: Vec<f64> = r["periods"].as_array().unwrap().iter().map(f).collect();
    let dist: Vec<f64> = r["distances"].as_array().unwrap().iter().map(f).collect();
    let var: Vec<f64> = r["time_variation"].as_array().unwrap().iter().map(f).collect();
    let t = cfg.nonlinear.period;
    let halvings = periods.len() == 3 && periods.iter().zip([t, t / 2.0, t / 4.0]).all(|(a, b)| (a - b).abs() < 1e-12);
    let close = dist.iter().all(|d| *d <= 1e-6);
    let still = var.iter().all(|v| *v <= cfg.nonlinear.cauchy_tol);
    outcome(
        "stationary",
        halvings && close && still,
        format!("periods {periods:?}, distances {}, time variation {}", fmt_list(&dist), fmt_list(&var)),
    )
}

fn c12_stability(dir: &Path) -> Outcome {
    let r = report(dir, "stability_report.json");
    let members = r["members"].as_array().unwrap();
    let mut ok = members.len() >= 3;
    let mut rates = Vec::new();
    for i in 0..members.len() {
        let file = if i == 0 { "stability.csv".to_owned() } else { format!("stability_{i}.csv") };
        let (h, rows) = csv(dir, &file);
        let (rate, _, r2) = exp_fit(&column(&h, &rows, "t"), &column(&h, &rows, "bracket"));
        ok &= rate > 0.0 && r2 >= 0.95;
        rates.push(rate);
    }
    // distinct perturbations
    let starts: Vec<f64> = members.iter().map(|m| f(&m["series"][0][3])).collect();
    for i in 0..starts.len() {
        for j in 0..i {
            ok &= (starts[i] - starts[j]).abs() > 1e-12 * starts[i];
        }
    }
    let pair_rates: Vec<f64> = r["pairwise"].as_array().unwrap().iter().map(|p| f(&p[1]["rate"])).collect();
    ok &= pair_rates.len() == members.len() * (members.len() - 1) / 2 && pair_rates.iter().all(|v| *v > 0.0);
    outcome("stability", ok, format!("rates {}, pairwise rates {}", fmt_list(&rates), fmt_list(&pair_rates)))
}

fn artifacts(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

fn c13_determinism(a: &Path, b: &Path) -> Outcome {
    let (fa, fb) = (artifacts(a), artifacts(b));
    let differing: Vec<&String> = fa.iter().filter(|(k, v)| fb.get(*k) != Some(*v)).map(|(k, _)| k).collect();
    let same_names = fa.keys().eq(fb.keys());
    outcome(
        "determinism",
        same_names && differing.is_empty() && !fa.is_empty(),
        format!("{} artifacts compared, {} differ", fa.len(), differing.len()),
    )
}

fn fmt_list(v: &[f64]) -> String {
    format!("[{}]", v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", "))
}

fn run(dir: &Path, cfg: &Config) -> bool {
    let start = Instant::now();
    let summary = run_scenario(Command::VerifyAll, cfg, &RunOptions::new(dir)).unwrap();
    eprintln!("verify-all into {} took {:.0} s", dir.display(), start.elapsed().as_secs_f64());
    summary.passed()
}

fn main() -> ExitCode {
    // `cargo test -- --list` and filters expect a harness; run only when asked for everything
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    if args.iter().any(|a| !a.starts_with('-') && a != "acceptance") {
        return ExitCode::SUCCESS;
    }
    let tmp = tempfile::tempdir().unwrap();
    let cfg = Config::reference();
    let a: PathBuf = tmp.path().join("run_a");
    let b: PathBuf = tmp.path().join("run_b");
    let flags_a = run(&a, &cfg);
    let flags_b = run(&b, &cfg);
    let outcomes = vec![
        c1_conservation(&a),
        c2_equilibrium(&a),
        c3_spectral(&a),
        c4_a_sign(&a),
        c5_kernel(&a),
        c6_linear(&a),
        c7_series(&a),
        c8_slab(&a, &cfg),
        c9_global(&a),
        c10_periodic(&a),
        c11_stationary(&a, &cfg),
        c12_stability(&a),
        c13_determinism(&a, &b),
    ];
    for (i, o) in outcomes.iter().enumerate() {
        println!("{} {:>2} {:<15} {}", if o.passed { "PASS" } else { "FAIL" }, i + 1, o.name, o.detail);
    }
    let all = outcomes.iter().all(|o| o.passed);
    println!("verify-all self-reported checks: run A {}, run B {}", flags_a, flags_b);
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
