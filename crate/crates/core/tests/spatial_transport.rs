use kinlayer::model::Operators;
use kinlayer::problem::ProblemData;
use kinlayer::spatial::{
    apply_s0, build_lift, chi, mollifier, mollifier_derivative, BoundarySpec, DistributionField, LiftKind,
    Representation, SpatialGrid,
};
use kinlayer::sphere::SphereRule;
use kinlayer::velocity::{bracket, EquilibriumState, VelocityGrid};
use num_complex::Complex64;

fn reference_state() -> EquilibriumState {
    EquilibriumState::new(1.0, [-2.0, 0.0, 0.0], 0.6, 0.2).unwrap()
}

fn spec(delta_tilde: f64, epsilon: f64, radius: Option<f64>) -> BoundarySpec {
    BoundarySpec {
        delta_tilde,
        beta: 2.0,
        epsilon,
        period: 2.0,
        time_dependent: false,
        profile_width: 0.5,
        mollifier_radius: radius,
    }
}

#[test]
fn mollifier_plateau_support_and_smoothness() {
    for s in [0.0, 0.3, 1.0, -0.7] {
        assert_eq!(mollifier(s), 1.0);
    }
    for s in [2.0, 2.5, 10.0] {
        assert_eq!(mollifier(s), 0.0);
    }
    // monotone decrease on (1, 2), derivative matches a central difference
    let mut last = 1.0;
    for k in 1..200 {
        let s = 1.0 + k as f64 / 200.0;
        let v = mollifier(s);
        assert!(v <= last && (0.0..=1.0).contains(&v));
        last = v;
        let h = 1e-6;
        let fd = (mollifier(s + h) - mollifier(s - h)) / (2.0 * h);
        assert!((fd - mollifier_derivative(s)).abs() < 1e-6, "s = {s}");
    }
    // C¹ at the knots: the derivative vanishes from both sides
    for s in [1.0, 2.0] {
        assert!(mollifier_derivative(s + 1e-9).abs() < 1e-6);
        assert!(mollifier_derivative(s - 1e-9).abs() < 1e-6);
    }
    assert!((mollifier(1.5) - 0.5).abs() < 1e-14);
    assert_eq!(chi(0.0), 0.0);
    assert_eq!(chi(1e-300), 1.0);
}

#[test]
fn geometric_grid_and_trapezoid_weights() {
    let g = SpatialGrid::slab(41, 20.0, 1.05).unwrap();
    let x = g.nodes();
    assert_eq!(x[0], 0.0);
    assert!((x[40] - 20.0).abs() < 1e-12);
    for m in 1..40 {
        let r = (x[m + 1] - x[m]) / (x[m] - x[m - 1]);
        assert!((r - 1.05).abs() < 1e-10);
    }
    let w: f64 = g.quad_weights().iter().sum();
    assert!((w - 20.0).abs() < 1e-12);
    // trapezoid integration of a linear function is exact
    let lin: f64 = g.quad_weights().iter().zip(x).map(|(w, x)| w * (3.0 * x + 1.0)).sum();
    assert!((lin - (1.5 * 400.0 + 20.0)).abs() < 1e-9);
    assert_eq!(g.locate(0.0), Some((0, 0.0)));
    assert!(g.locate(-1e-12).is_none());
    assert!(g.locate(20.0 + 1e-9).is_none());
    assert!(SpatialGrid::slab(2, 20.0, 1.0).is_err());
    assert!(SpatialGrid::slab(10, 20.0, 0.9).is_err());
}

#[test]
fn tangential_mode_table_and_validation() {
    let g = SpatialGrid::new(5, 10.0, 1.0, vec![[0, 0], [1, 0], [-1, 0]], 8.0).unwrap();
    let k = g.wave_vector(1);
    assert!((k[0] - 2.0 * std::f64::consts::PI / 8.0).abs() < 1e-15 && k[1] == 0.0);
    let table = g.product_table();
    let modes = g.modes();
    for (t, pairs) in table.iter().enumerate() {
        for &(a, b) in pairs {
            assert_eq!([modes[a][0] + modes[b][0], modes[a][1] + modes[b][1]], modes[t]);
        }
    }
    // [0,0] is reached by (0,0), (1,-1) and (-1,1)
    assert_eq!(table[0].len(), 3);
    assert_eq!(table[1], vec![(0, 1), (1, 0)]);

    assert!(SpatialGrid::new(5, 10.0, 1.0, vec![[1, 0], [0, 0], [-1, 0]], 8.0).is_err());
    assert!(SpatialGrid::new(5, 10.0, 1.0, vec![[0, 0], [1, 0]], 8.0).is_err());
    assert!(SpatialGrid::new(5, 10.0, 1.0, vec![[0, 0], [1, 0], [-1, 0], [1, 0]], 8.0).is_err());
}

/// Damped free transport of a single velocity node checked against the
/// characteristic solution `e^{−(ν−σξ₁)t} h₀(x − ξ₁t)`.
#[test]
fn free_transport_follows_characteristics() {
    let grid = VelocityGrid::new(4, 3.0).unwrap();
    let xgrid = SpatialGrid::slab(801, 40.0, 1.0).unwrap();
    let nu: Vec<f64> = grid.nodes().iter().map(|x| 0.5 + 0.1 * bracket(x)).collect();
    let sigma = 0.05;
    let profile = |x: f64| (-(x - 20.0f64).powi(2) / 4.0).exp();
    let mut h0 = DistributionField::for_grids(&xgrid, &grid, Representation::Weighted);
    for (ix, &x) in xgrid.nodes().iter().enumerate() {
        for v in h0.slice_mut(ix, 0) {
            *v = Complex64::new(profile(x), 0.0);
        }
    }
    let t = 1.7;
    let out = apply_s0(&h0, t, sigma, &nu, &grid, &xgrid);
    let mut worst = 0.0f64;
    for (ix, &x) in xgrid.nodes().iter().enumerate() {
        for (iv, xi) in grid.nodes().iter().enumerate() {
            let src = x - xi[0] * t;
            let want = if src > 0.0 && src <= 40.0 {
                (-(nu[iv] - sigma * xi[0]) * t).exp() * profile(src)
            } else {
                0.0
            };
            worst = worst.max((out.slice(ix, 0)[iv].re - want).abs());
        }
    }
    // linear interpolation error is O(Δx² max|h₀''|)
    assert!(worst < 2e-3, "worst {worst:e}");

    // zero inflow: nothing reaches x₁ = 0 along ξ₁ > 0
    for (iv, xi) in grid.nodes().iter().enumerate() {
        if xi[0] > 0.0 {
            assert_eq!(out.slice(0, 0)[iv], Complex64::new(0.0, 0.0));
        }
    }
}

#[test]
fn free_transport_is_a_semigroup_on_grid_shifts() {
    // on a uniform grid and a single ξ₁ > 0 speed, a step of one cell is an exact shift
    let grid = VelocityGrid::new(4, 2.0).unwrap();
    let xgrid = SpatialGrid::slab(21, 20.0, 1.0).unwrap();
    let nu = vec![0.3; grid.len()];
    let mut h0 = DistributionField::for_grids(&xgrid, &grid, Representation::Weighted);
    for ix in 0..21 {
        for v in h0.slice_mut(ix, 0) {
            *v = Complex64::new((ix as f64 * 0.37).sin(), 0.0);
        }
    }
    let xi1 = grid.node(grid.len() - 1)[0];
    let tau = 1.0 / xi1;
    let once = apply_s0(&apply_s0(&h0, tau, 0.0, &nu, &grid, &xgrid), tau, 0.0, &nu, &grid, &xgrid);
    let twice = apply_s0(&h0, 2.0 * tau, 0.0, &nu, &grid, &xgrid);
    let iv = grid.len() - 1;
    for ix in 0..21 {
        let a = once.slice(ix, 0)[iv];
        let b = twice.slice(ix, 0)[iv];
        assert!((a - b).norm() < 1e-13, "ix {ix}: {a} vs {b}");
    }
}

#[test]
fn tangential_phase_is_exact() {
    let grid = VelocityGrid::new(4, 2.0).unwrap();
    let xgrid = SpatialGrid::new(5, 10.0, 1.0, vec![[0, 0], [1, 0], [-1, 0]], 8.0).unwrap();
    let nu = vec![0.0; grid.len()];
    let mut h0 = DistributionField::for_grids(&xgrid, &grid, Representation::Weighted);
    for ix in 0..5 {
        for m in 0..3 {
            h0.slice_mut(ix, m).iter_mut().for_each(|v| *v = Complex64::new(1.0, 0.0));
        }
    }
    // a constant profile is unchanged by the x₁ shift at interior nodes, leaving only the phase
    let t = 0.01;
    let out = apply_s0(&h0, t, 0.0, &nu, &grid, &xgrid);
    let k = xgrid.wave_vector(1);
    for (iv, xi) in grid.nodes().iter().enumerate() {
        let v = out.slice(2, 1)[iv];
        let phase = Complex64::from_polar(1.0, -k[0] * xi[1] * t);
        assert!((v - phase).norm() < 1e-12);
        assert!((out.slice(2, 0)[iv] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
    }
}

#[test]
fn boundary_datum_respects_weighted_bound() {
    let state = reference_state();
    let grid = VelocityGrid::new(8, state.default_cutoff()).unwrap();
    let s = spec(1e-2, 0.0, None);
    s.validate(&state, &grid).unwrap();
    let a0 = s.a0(&state, &grid);
    for (v, x) in a0.iter().zip(grid.nodes()) {
        assert!(v.abs() <= 1e-2 * bracket(x).powf(-2.0) * (1.0 + 1e-14));
        if x[0] <= 0.0 {
            assert_eq!(*v, 0.0);
        }
    }
    let mut bad = s.clone();
    bad.beta = 1.5;
    assert!(bad.validate(&state, &grid).is_err());

    let mut periodic = s.clone();
    periodic.time_dependent = true;
    for t in [0.0, 0.4, 1.3] {
        assert!((periodic.amplitude(t + 2.0) - periodic.amplitude(t)).abs() < 1e-14);
        let h = 1e-6;
        let fd = (periodic.amplitude(t + h) - periodic.amplitude(t - h)) / (2.0 * h);
        assert!((fd - periodic.amplitude_dt(t)).abs() < 1e-8);
    }
}

#[test]
fn lift_traces_the_boundary_datum_and_vanishes_beyond_two() {
    let state = reference_state();
    let grid = VelocityGrid::new(6, state.default_cutoff()).unwrap();
    let xgrid = SpatialGrid::new(31, 6.0, 1.0, vec![[0, 0], [1, 0], [-1, 0]], 8.0).unwrap();
    let s = spec(0.0, 1e-3, Some(2.0));
    let lift = build_lift(&s, &state, &grid, &xgrid, LiftKind::Stationary, 0.0);
    let psi = s.velocity_profile(&state, &grid);
    let g = s.tangential_profile(&xgrid);
    for (iv, xi) in grid.nodes().iter().enumerate() {
        for m in 0..3 {
            let want = if xi[0] > 0.0 { 1e-3 * g[m] * psi[iv] } else { 0.0 };
            assert!((lift.slice(0, m)[iv] - Complex64::new(want, 0.0)).norm() < 1e-15);
        }
    }
    for (ix, &x) in xgrid.nodes().iter().enumerate() {
        if x >= 2.0 {
            assert!(lift.slice(ix, 0).iter().chain(lift.slice(ix, 1)).all(|v| v.norm() == 0.0));
        }
    }
    // the stationary trace is constant along characteristics: |mode m| is x-independent for x ≤ 1
    for (ix, &x) in xgrid.nodes().iter().enumerate() {
        if x <= 1.0 {
            for iv in 0..grid.len() {
                assert!((lift.slice(ix, 1)[iv].norm() - lift.slice(0, 1)[iv].norm()).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn mollifier_modes_need_a_wide_enough_cell() {
    let xgrid = SpatialGrid::new(5, 6.0, 1.0, vec![[0, 0], [1, 0], [-1, 0]], 6.0).unwrap();
    assert!(spec(0.0, 1e-3, Some(2.0)).mollifier_modes(&xgrid).is_err());
    let slab = SpatialGrid::slab(5, 6.0, 1.0).unwrap();
    assert!(spec(0.0, 1e-3, Some(2.0)).mollifier_modes(&slab).is_err());
    assert_eq!(spec(0.0, 1e-3, None).mollifier_modes(&slab).unwrap(), vec![1.0]);
}

#[test]
fn zero_data_give_zero_sources() {
    let state = reference_state();
    let grid = VelocityGrid::new(4, state.default_cutoff()).unwrap();
    let ops = Operators::build(&state, &grid, SphereRule::default()).unwrap();
    let xgrid = SpatialGrid::new(11, 6.0, 1.0, vec![[0, 0], [1, 0], [-1, 0]], 8.0).unwrap();
    let zero_profile = vec![vec![0.0; grid.len()]; xgrid.len()];
    let data = ProblemData::assemble(
        &ops,
        &xgrid,
        &spec(0.0, 0.0, Some(2.0)),
        LiftKind::Stationary,
        0.2,
        Some(&zero_profile),
    )
    .unwrap();
    for t in [0.0, 0.5] {
        assert_eq!(data.weighted_h(t).max_abs(), 0.0);
    }
    assert_eq!(data.u1.max_abs(), 0.0);
    // assembling without the slab profile is a missing-input error
    let missing = ProblemData::assemble(&ops, &xgrid, &spec(0.0, 0.0, Some(2.0)), LiftKind::Stationary, 0.2, None);
    assert!(matches!(missing, Err(kinlayer::Error::MissingInput(_))));
}

#[test]
fn lift_without_slab_layer_is_linear_in_epsilon() {
    let state = reference_state();
    let grid = VelocityGrid::new(4, state.default_cutoff()).unwrap();
    let ops = Operators::build(&state, &grid, SphereRule::default()).unwrap();
    let xgrid = SpatialGrid::new(11, 6.0, 1.0, vec![[0, 0], [1, 0], [-1, 0]], 8.0).unwrap();
    let zero_profile = vec![vec![0.0; grid.len()]; xgrid.len()];
    let build = |eps: f64| {
        ProblemData::assemble(&ops, &xgrid, &spec(0.0, eps, Some(2.0)), LiftKind::Stationary, 0.2, Some(&zero_profile))
            .unwrap()
    };
    let a = build(1e-3);
    let b = build(2e-3);
    // U₁ scales linearly; the H₂ = Γ(U₁, U₁) part makes the source quadratic only at second order
    let mut du = b.u1.clone();
    du.axpy(-2.0, &a.u1);
    assert!(du.max_abs() < 1e-18);
    let mut dh = b.weighted_h(0.0);
    dh.axpy(-2.0, &a.weighted_h(0.0));
    assert!(dh.max_abs() < 1e-2 * b.weighted_h(0.0).max_abs());
}
