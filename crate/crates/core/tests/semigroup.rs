use kinlayer::model::Operators;
use kinlayer::norms::NormWeights;
use kinlayer::semigroup::{check_sigma, default_sigma, weighted_decay_check, LinearEvolver};
use kinlayer::spatial::{apply_s0, DistributionField, Representation, SpatialGrid};
use kinlayer::sphere::SphereRule;
use kinlayer::velocity::{EquilibriumState, VelocityGrid};
use num_complex::Complex64;

fn operators() -> Operators {
    let state = EquilibriumState::new(1.0, [-2.0, 0.0, 0.0], 0.6, 0.2).unwrap();
    let grid = VelocityGrid::new(4, 4.0).unwrap();
    Operators::build(&state, &grid, SphereRule::default()).unwrap()
}

fn bump(xgrid: &SpatialGrid, vgrid: &VelocityGrid, centre: f64) -> DistributionField {
    let mut f = DistributionField::for_grids(xgrid, vgrid, Representation::Weighted);
    for (ix, &x) in xgrid.nodes().iter().enumerate() {
        let g = (-(x - centre).powi(2) / 2.0).exp();
        for (v, xi) in f.slice_mut(ix, 0).iter_mut().zip(vgrid.nodes()) {
            *v = Complex64::new(g * (-0.5 * (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2])).exp() * (1.0 + 0.3 * xi[0]), 0.0);
        }
    }
    f
}

/// Duhamel integral of a unit source under damped transport, compared at
/// nodes whose characteristics stay inside the slab with `(1 − e^{−λt})/λ`,
/// `λ = ν − σξ₁`. Returns the largest relative gap to the closed form after
/// checking that the result is the trapezoid sum `Δt/2 · coth(λΔt/2) · (1 − e^{−λt})`.
fn duhamel_error(ops: &Operators, xgrid: &SpatialGrid, sigma: f64, dt: f64, t: f64) -> f64 {
    let ev = LinearEvolver::new(ops, xgrid, sigma, dt).unwrap().without_k();
    let n = (t / dt).round() as usize;
    let source: Vec<DistributionField> = (0..=n)
        .map(|k| {
            let mut s = DistributionField::for_grids(xgrid, &ops.vgrid, Representation::Weighted);
            s.data.iter_mut().for_each(|v| *v = Complex64::new(1.0, 0.0));
            s.time = k as f64 * dt;
            s
        })
        .collect();
    let out = ev.duhamel_convolve(&source).unwrap();
    let last = &out[n];
    let mut worst = 0.0f64;
    for (ix, &x) in xgrid.nodes().iter().enumerate() {
        for (iv, xi) in ops.vgrid.nodes().iter().enumerate() {
            // every half step can widen the interpolation stencil by one cell
            let reach = x - xi[0] * t;
            let margin = 2.0 * n as f64 * xgrid.x_max() / (xgrid.len() - 1) as f64;
            if !(reach > margin && reach < xgrid.x_max() - margin) {
                continue;
            }
            let lam = ops.op.nu[iv] - sigma * xi[0];
            let got = last.slice(ix, 0)[iv].re;
            let trapezoid = 0.5 * dt * (1.0 - (-lam * t).exp()) / (0.5 * lam * dt).tanh();
            assert!((got - trapezoid).abs() < 1e-12 * trapezoid, "{got} vs {trapezoid}");
            let want = (1.0 - (-lam * t).exp()) / lam;
            let bound = (lam * dt).powi(2) / 12.0;
            assert!((got - want).abs() / want <= bound * (1.0 + 1e-6), "λΔt = {}", lam * dt);
            worst = worst.max((got - want).abs() / want);
        }
    }
    worst
}

#[test]
fn duhamel_integral_of_constant_source_matches_closed_form() {
    let ops = operators();
    let xgrid = SpatialGrid::slab(401, 200.0, 1.0).unwrap();
    let sigma = default_sigma(&ops.op.nu, &ops.vgrid);
    let coarse = duhamel_error(&ops, &xgrid, sigma, 0.1, 2.0);
    let fine = duhamel_error(&ops, &xgrid, sigma, 0.05, 2.0);
    assert!(coarse / fine > 3.5, "ratio {}", coarse / fine);
}

#[test]
fn evolution_is_linear_and_composes() {
    let ops = operators();
    let xgrid = SpatialGrid::slab(61, 30.0, 1.0).unwrap();
    let sigma = default_sigma(&ops.op.nu, &ops.vgrid);
    let ev = LinearEvolver::new(&ops, &xgrid, sigma, 0.1).unwrap();
    let a = bump(&xgrid, &ops.vgrid, 10.0);
    let b = bump(&xgrid, &ops.vgrid, 15.0);
    let mut c = a.clone();
    c.scale(2.0);
    c.axpy(-0.5, &b);
    let ta = ev.evolve_linear(&a, 10).unwrap();
    let tb = ev.evolve_linear(&b, 10).unwrap();
    let tc = ev.evolve_linear(&c, 10).unwrap();
    let mut combo = ta[10].clone();
    combo.scale(2.0);
    combo.axpy(-0.5, &tb[10]);
    assert!(combo.difference(&tc[10]).max_abs() < 1e-13 * tc[10].max_abs());

    let half = ev.evolve_linear(&a, 5).unwrap();
    let again = ev.evolve_linear(&half[5], 5).unwrap();
    assert_eq!(again[5].data, ta[10].data);
    assert!((ta[10].time - 1.0).abs() < 1e-12);
}

#[test]
fn first_series_term_is_the_free_flow() {
    let ops = operators();
    let xgrid = SpatialGrid::slab(61, 30.0, 1.0).unwrap();
    let sigma = default_sigma(&ops.op.nu, &ops.vgrid);
    let ev = LinearEvolver::new(&ops, &xgrid, sigma, 0.1).unwrap();
    let h0 = bump(&xgrid, &ops.vgrid, 12.0);
    let series = ev.duhamel_series(&h0, 10, 1).unwrap();
    let free = apply_s0(&h0, 1.0, sigma, &ops.op.nu, &ops.vgrid, &xgrid);
    assert!(series.sum.difference(&free).max_abs() < 1e-14);
    assert!(ev.duhamel_series(&h0, 10, 0).is_err());
}

#[test]
fn series_partial_sums_approach_the_full_evolution() {
    let ops = operators();
    let xgrid = SpatialGrid::slab(61, 30.0, 1.0).unwrap();
    let sigma = default_sigma(&ops.op.nu, &ops.vgrid);
    let ev = LinearEvolver::new(&ops, &xgrid, sigma, 0.05).unwrap();
    let h0 = bump(&xgrid, &ops.vgrid, 12.0);
    let full = ev.evolve_linear(&h0, 20).unwrap().pop().unwrap();
    let w = NormWeights::new(2.0, &ops.vgrid, &xgrid).unwrap();
    let gaps: Vec<f64> = [1, 2, 4, 6]
        .iter()
        .map(|&m| w.l2(&ev.duhamel_series(&h0, 20, m).unwrap().sum.difference(&full)) / w.l2(&full))
        .collect();
    for pair in gaps.windows(2) {
        assert!(pair[1] < pair[0], "{gaps:?}");
    }
    assert!(gaps[3] < 0.1 * gaps[0], "{gaps:?}");
}

#[test]
fn evolver_rejects_unstable_parameters() {
    let ops = operators();
    let xgrid = SpatialGrid::slab(11, 30.0, 1.0).unwrap();
    let sigma = default_sigma(&ops.op.nu, &ops.vgrid);
    check_sigma(sigma, &ops.op.nu, &ops.vgrid).unwrap();
    assert!(check_sigma(0.0, &ops.op.nu, &ops.vgrid).is_err());
    assert!(check_sigma(10.0, &ops.op.nu, &ops.vgrid).is_err());
    let too_long = 3.0 / ops.op.max_nu();
    assert!(LinearEvolver::new(&ops, &xgrid, sigma, too_long).is_err());
    assert!(LinearEvolver::new(&ops, &xgrid, sigma, -0.1).is_err());

    let ev = LinearEvolver::new(&ops, &xgrid, sigma, 0.1).unwrap();
    let mut misaligned = vec![DistributionField::for_grids(&xgrid, &ops.vgrid, Representation::Weighted); 2];
    misaligned[1].time = 0.3;
    assert!(ev.duhamel_convolve(&misaligned).is_err());
}

#[test]
fn zero_datum_decay_check_is_trivial() {
    let ops = operators();
    let xgrid = SpatialGrid::slab(11, 30.0, 1.0).unwrap();
    let sigma = default_sigma(&ops.op.nu, &ops.vgrid);
    let ev = LinearEvolver::new(&ops, &xgrid, sigma, 0.1).unwrap();
    let zero = DistributionField::for_grids(&xgrid, &ops.vgrid, Representation::Weighted);
    let r = weighted_decay_check(&ev, &zero, 5, 2.0, None).unwrap();
    assert!(r.trivial && r.passed);
}
