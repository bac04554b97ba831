use kinlayer::velocity::{
    bracket, maxwellian, moments, project_p, weight_w0, EquilibriumState, NullSpaceBasis, VelocityGrid,
};
use kinlayer::Error;
use proptest::prelude::*;

fn reference_state() -> EquilibriumState {
    EquilibriumState::new(1.0, [-2.0, 0.0, 0.0], 0.6, 0.2).unwrap()
}

#[test]
fn maxwellian_moments_match_closed_forms() {
    let state = EquilibriumState::new(1.3, [-2.0, 0.0, 0.0], 0.6, 0.2).unwrap();
    let grid = VelocityGrid::new(24, state.default_cutoff()).unwrap();
    let m = moments(&maxwellian(&state, &grid), &grid);
    let rho = 1.3;
    let energy = rho * (4.0 + 3.0 * 0.6);
    assert!((m.mass - rho).abs() < 1e-6 * rho, "mass {}", m.mass);
    assert!((m.momentum[0] + 2.0 * rho).abs() < 1e-6 * rho, "momentum {:?}", m.momentum);
    assert!(m.momentum[1].abs() < 1e-12 && m.momentum[2].abs() < 1e-12);
    assert!((m.energy - energy).abs() < 1e-6 * energy, "energy {}", m.energy);
}

#[test]
fn grid_is_symmetric_and_reflection_flips_xi1() {
    let grid = VelocityGrid::new(7, 4.0).unwrap();
    assert_eq!(grid.len(), 343);
    let h = grid.spacing();
    assert!((grid.weight() - h * h * h).abs() < 1e-15);
    for i in 0..grid.len() {
        let a = grid.node(i);
        let b = grid.node(grid.reflect_x1(i));
        assert!((b[0] + a[0]).abs() < 1e-14 && b[1] == a[1] && b[2] == a[2]);
        assert_eq!(grid.reflect_x1(grid.reflect_x1(i)), i);
    }
    let axis = grid.axis();
    for (a, b) in axis.iter().zip(axis.iter().rev()) {
        assert!((a + b).abs() < 1e-14);
    }
}

#[test]
fn bracket_is_one_plus_speed() {
    assert_eq!(bracket(&[0.0, 0.0, 0.0]), 1.0);
    assert_eq!(bracket(&[1.0, 2.0, 2.0]), 4.0);
}

#[test]
fn mach_number_and_inflow_check() {
    let state = reference_state();
    let c = (5.0 * 0.6 / 3.0f64).sqrt();
    assert!((state.mach_number() + 2.0 / c).abs() < 1e-15);
    state.require_supersonic_inflow().unwrap();

    let subsonic = EquilibriumState::new(1.0, [-0.5, 0.0, 0.0], 0.6, 0.2).unwrap();
    assert!(matches!(subsonic.require_supersonic_inflow(), Err(Error::NotSupersonic { .. })));
    let outflow = EquilibriumState::new(1.0, [2.0, 0.0, 0.0], 0.6, 0.2).unwrap();
    assert!(outflow.require_supersonic_inflow().is_err());
    let sonic = EquilibriumState::new(1.0, [-c, 0.0, 0.0], 0.6, 0.2).unwrap();
    assert!(sonic.require_supersonic_inflow().is_err());
    let tangential = EquilibriumState::new(1.0, [-2.0, 0.1, 0.0], 0.6, 0.2).unwrap();
    assert!(tangential.require_supersonic_inflow().is_err());
}

#[test]
fn invalid_states_are_rejected() {
    assert!(EquilibriumState::new(0.0, [-2.0, 0.0, 0.0], 0.6, 0.2).is_err());
    assert!(EquilibriumState::new(1.0, [-2.0, 0.0, 0.0], -0.6, 0.2).is_err());
    assert!(EquilibriumState::new(1.0, [f64::NAN, 0.0, 0.0], 0.6, 0.2).is_err());
    assert!(EquilibriumState::new(1.0, [-2.0, 0.0, 0.0], 0.6, 0.0).is_err());
}

#[test]
fn null_basis_is_orthonormal_and_spans_invariants() {
    let state = reference_state();
    let grid = VelocityGrid::new(8, state.default_cutoff()).unwrap();
    let basis = NullSpaceBasis::build(&state, &grid).unwrap();
    for a in 0..5 {
        for b in 0..5 {
            let ip = grid.inner(basis.vector(a), basis.vector(b));
            let want = if a == b { 1.0 } else { 0.0 };
            assert!((ip - want).abs() < 1e-12, "({a},{b}) -> {ip}");
        }
    }
    let w0 = weight_w0(&state, &grid);
    for l in 0..5 {
        let g: Vec<f64> = grid
            .nodes()
            .iter()
            .zip(&w0)
            .map(|(x, w)| w * [1.0, x[0], x[1], x[2], x[0] * x[0] + x[1] * x[1] + x[2] * x[2]][l])
            .collect();
        let p = project_p(&g, &basis);
        let err = p.iter().zip(&g).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = g.iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(err < 1e-12 * scale, "invariant {l}: {err}");
    }
    // basis vectors evaluated off the grid agree with the stored vectors on it
    for i in (0..grid.len()).step_by(37) {
        let v = basis.eval_at(&grid.node(i));
        for k in 0..5 {
            assert!((v[k] - basis.vector(k)[i]).abs() < 1e-12);
        }
    }
}

#[test]
fn grid_constructor_rejects_bad_sizes() {
    assert!(VelocityGrid::new(3, 4.0).is_err());
    assert!(VelocityGrid::new(8, 0.0).is_err());
    assert!(VelocityGrid::new(8, f64::INFINITY).is_err());
}

#[test]
fn far_away_maxwellian_makes_the_basis_degenerate() {
    // the equilibrium sits far outside the grid, so W₀ underflows on every node
    let state = EquilibriumState::new(1.0, [-200.0, 0.0, 0.0], 0.6, 0.2).unwrap();
    let grid = VelocityGrid::new(4, 3.0).unwrap();
    assert!(NullSpaceBasis::build(&state, &grid).is_err());
}

fn basis_fixture() -> (VelocityGrid, NullSpaceBasis) {
    let state = reference_state();
    let grid = VelocityGrid::new(6, state.default_cutoff()).unwrap();
    let basis = NullSpaceBasis::build(&state, &grid).unwrap();
    (grid, basis)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn projector_is_idempotent_and_self_adjoint(
        f in prop::collection::vec(-1.0f64..1.0, 216),
        g in prop::collection::vec(-1.0f64..1.0, 216),
    ) {
        let (grid, basis) = basis_fixture();
        let pf = basis.project(&f);
        let ppf = basis.project(&pf);
        for (a, b) in pf.iter().zip(&ppf) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let lhs = grid.inner(&pf, &g);
        let rhs = grid.inner(&f, &basis.project(&g));
        prop_assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn removing_projection_zeroes_weighted_moments(f in prop::collection::vec(-1.0f64..1.0, 216)) {
        let (grid, basis) = basis_fixture();
        let mut r = f.clone();
        basis.remove_projection(&mut r);
        for k in 0..5 {
            prop_assert!(grid.inner(&r, basis.vector(k)).abs() < 1e-12);
        }
        // moments of W₀ r vanish
        let w0: Vec<f64> = grid.nodes().iter().map(|x| basis.state().w0_at(x)).collect();
        let wr: Vec<f64> = r.iter().zip(&w0).map(|(a, b)| a * b).collect();
        let m = moments(&wr, &grid).as_array();
        for v in m {
            prop_assert!(v.abs() < 1e-11);
        }
    }
}
