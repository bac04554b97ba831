use kinlayer::collision::{a_matrix, assemble_linearized, CollisionQuadrature, GammaTensor};
use kinlayer::model::Operators;
use kinlayer::sphere::SphereRule;
use kinlayer::velocity::{maxwellian, moments, moment_scale, weight_w0, EquilibriumState, VelocityGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn reference_state() -> EquilibriumState {
    EquilibriumState::new(1.0, [-2.0, 0.0, 0.0], 0.6, 0.2).unwrap()
}

fn quadrature(per_axis: usize) -> CollisionQuadrature {
    let state = reference_state();
    let grid = VelocityGrid::new(per_axis, state.default_cutoff()).unwrap();
    CollisionQuadrature::new(&state, &grid, SphereRule::default()).unwrap()
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// `∫ |ζ − w| m(|w|) dw` for the centred Maxwellian `m` of temperature `t`,
/// reduced to a radial integral and summed by a fine midpoint rule.
fn mean_relative_speed(z: f64, t: f64) -> f64 {
    let n = 40_000;
    let r_max = 14.0 * t.sqrt();
    let h = r_max / n as f64;
    let norm = (2.0 * std::f64::consts::PI * t).powf(-1.5);
    let mut s = 0.0;
    for k in 0..n {
        let r = (k as f64 + 0.5) * h;
        let m = norm * (-r * r / (2.0 * t)).exp();
        let shell = if z == 0.0 {
            2.0 * r
        } else {
            ((z + r).powi(3) - (z - r).abs().powi(3)) / (3.0 * z * r)
        };
        s += r * r * m * shell;
    }
    2.0 * std::f64::consts::PI * s * h
}

/// Largest relative gap between the discrete `ν` and the continuum rate
/// `ρσ₀ 2π ∫|ξ − ξ*| M(ξ*) dξ*` over nodes within thermal reach of `u∞`.
fn loss_frequency_error(per_axis: usize) -> f64 {
    let state = reference_state();
    let grid = VelocityGrid::new(per_axis, state.default_cutoff()).unwrap();
    let quad = CollisionQuadrature::new(&state, &grid, SphereRule::default()).unwrap();
    let nu = quad.nu();
    let mut worst = 0.0f64;
    for (i, xi) in grid.nodes().iter().enumerate() {
        let d = [xi[0] - state.u_inf[0], xi[1], xi[2]];
        let z = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if z > 3.0 {
            continue;
        }
        let want = state.rho_inf * state.sigma0 * 2.0 * std::f64::consts::PI * mean_relative_speed(z, state.t_inf);
        worst = worst.max((nu[i] - want).abs() / want);
    }
    worst
}

#[test]
fn loss_frequency_converges_to_continuum_hard_sphere_rate() {
    let coarse = loss_frequency_error(12);
    let fine = loss_frequency_error(16);
    assert!(fine < 0.015, "16 per axis: {fine:e}");
    assert!(fine < 0.6 * coarse, "no convergence: {coarse:e} -> {fine:e}");
}

#[test]
fn linearization_matches_central_difference_of_gamma() {
    let quad = quadrature(6);
    let n = quad.grid().len();
    let raw = quad.assemble_raw();
    let w0 = quad.w0().to_vec();
    let rho = quad.state().rho_inf;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..3 {
        let h = random_vector(&mut rng, n);
        let eps = 1e-3;
        let plus: Vec<f64> = w0.iter().zip(&h).map(|(w, v)| w + eps * v).collect();
        let minus: Vec<f64> = w0.iter().zip(&h).map(|(w, v)| w - eps * v).collect();
        let gp = quad.gamma(&plus, &plus);
        let gm = quad.gamma(&minus, &minus);
        let fd: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| rho * (a - b) / (2.0 * eps)).collect();
        let lh = &raw * nalgebra::DVector::from_column_slice(&h);
        let scale = fd.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let err = fd.iter().zip(lh.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9 * scale, "linearization mismatch {err:e} (scale {scale:e})");
    }
}

#[test]
fn batched_gamma_is_bitwise_equal_to_single_pairs() {
    let quad = quadrature(5);
    let n = quad.grid().len();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let vecs: Vec<Vec<f64>> = (0..6).map(|_| random_vector(&mut rng, n)).collect();
    let pairs: Vec<(&[f64], &[f64])> = (0..3).map(|k| (vecs[2 * k].as_slice(), vecs[2 * k + 1].as_slice())).collect();
    let batched = quad.gamma_pairs(&pairs);
    for ((a, b), g) in pairs.iter().zip(&batched) {
        assert_eq!(&quad.gamma(a, b), g);
    }
}

#[test]
fn gamma_is_symmetric_and_conservative() {
    let quad = quadrature(6);
    let grid = quad.grid().clone();
    let n = grid.len();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random_vector(&mut rng, n);
    let b = random_vector(&mut rng, n);
    assert_eq!(quad.gamma(&a, &b), quad.gamma(&b, &a));
    let fa: Vec<f64> = a.iter().zip(quad.w0()).map(|(v, w)| v * w).collect();
    let fb: Vec<f64> = b.iter().zip(quad.w0()).map(|(v, w)| v * w).collect();
    let q = quad.collision_q(&fa, &fb);
    let m = moments(&q, &grid).as_array();
    let scale = moment_scale(&q, &grid);
    for k in 0..5 {
        assert!(m[k].abs() <= 1e-12 * scale[k], "moment {k}: {} vs {}", m[k], scale[k]);
    }
}

#[test]
fn maxwellian_is_an_equilibrium() {
    let quad = quadrature(6);
    let m = maxwellian(quad.state(), quad.grid());
    let q = quad.collision_q(&m, &m);
    let size = m.iter().map(|v| v * v).sum::<f64>();
    let res = q.iter().map(|v| v * v).sum::<f64>().sqrt() / size;
    assert!(res < 1e-12, "‖Q(M, M)‖/‖M‖² = {res:e}");
}

#[test]
fn dense_tensor_reproduces_direct_gamma() {
    let quad = quadrature(5);
    let tensor = GammaTensor::build(&quad).unwrap();
    let n = quad.grid().len();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random_vector(&mut rng, n);
    let b = random_vector(&mut rng, n);
    let direct = quad.gamma(&a, &b);
    let dense = tensor.gamma(&a, &b);
    let scale = direct.iter().map(|v| v.abs()).fold(0.0, f64::max);
    for (x, y) in direct.iter().zip(&dense) {
        assert!((x - y).abs() < 1e-12 * scale);
    }
    assert!(GammaTensor::build(&quadrature(7)).is_err());
}

#[test]
fn symmetrized_operator_is_dissipative_with_five_invariants() {
    let quad = quadrature(6);
    let op = assemble_linearized(&quad).unwrap();
    let grid = quad.grid();
    let l = op.l_matrix();
    let asym = (&l - l.transpose()).abs().max();
    assert!(asym < 1e-12 * l.abs().max());
    op.check_nonpositive().unwrap();
    for k in 0..5 {
        let lv = op.apply(quad.basis().vector(k));
        let r = grid.norm(&lv);
        assert!(r < 1e-10 * op.max_nu(), "L φ_{k} = {r:e}");
    }
    let report = op.spectral_report(grid).unwrap();
    assert_eq!(report.null_count, 5);
    assert!(report.gap > 0.0);
    assert!(op.min_nu() > 0.0);
    // ν grows with relative speed, as for hard spheres
    let nu = &op.nu;
    let u = quad.state().u_inf;
    let far = (0..grid.len())
        .max_by(|&a, &b| {
            let da = (grid.node(a)[0] - u[0]).powi(2) + grid.node(a)[1].powi(2) + grid.node(a)[2].powi(2);
            let db = (grid.node(b)[0] - u[0]).powi(2) + grid.node(b)[1].powi(2) + grid.node(b)[2].powi(2);
            da.partial_cmp(&db).unwrap()
        })
        .unwrap();
    assert!(nu[far] > 2.0 * op.min_nu());
}

#[test]
fn operators_gamma_dispatch_agrees_with_quadrature() {
    let state = reference_state();
    let grid = VelocityGrid::new(5, state.default_cutoff()).unwrap();
    let ops = Operators::build(&state, &grid, SphereRule::default()).unwrap();
    let w0 = weight_w0(&state, &grid);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let h = random_vector(&mut rng, grid.len());
    let a = ops.gamma(&w0, &h);
    let b = ops.quad.gamma(&w0, &h);
    let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12 * scale);
    }
}

#[test]
fn a_matrix_sign_follows_inflow_direction() {
    for (u, negative) in [(-2.0, true), (2.0, false)] {
        let state = EquilibriumState::new(1.0, [u, 0.0, 0.0], 0.6, 0.2).unwrap();
        let grid = VelocityGrid::new(8, state.default_cutoff()).unwrap();
        let basis = kinlayer::velocity::NullSpaceBasis::build(&state, &grid).unwrap();
        let (_, ev) = a_matrix(&grid, &basis);
        assert!(ev.iter().all(|e| (*e < 0.0) == negative), "u = {u}: {ev:?}");
    }
}
