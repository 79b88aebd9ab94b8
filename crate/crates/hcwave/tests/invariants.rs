//! Structural invariants checked over randomized inputs: norm axioms,
//! serialization round trips, grid validation, linearity of the forward
//! map, duality of the negative-order norm, and optimality properties the
//! solvers promise.

use hcwave::discretization::norms::{dirichlet_laplacian_solve, h10_slice, hminus1_slice, l2_slice};
use hcwave::discretization::operators::assemble_step_operators;
use hcwave::discretization::{BoundaryTrace, Field, Grid, Side};
use hcwave::follower::{follower_cost, ControlSetup, FollowerProblem};
use hcwave::geometry::{control_time_thresholds, BoundaryProfile, PhysicalData};
use hcwave::leader::{solve_leader, DualVariable, LeaderContext, LeaderOptions, LeaderProblem};
use hcwave::wave_solver::{solve_forward, ForwardInputs};
use hcwave::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn small_grid() -> Grid {
    Grid::new(9, 40, 1.0).unwrap()
}

/// Random nodal slice for the 10-node grid above.
fn slice_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 10)
}

proptest! {
    #[test]
    fn norms_are_homogeneous_and_subadditive(
        a in slice_strategy(),
        b in slice_strategy(),
        s in -3.0f64..3.0,
    ) {
        let grid = small_grid();
        for norm in [l2_slice, h10_slice, hminus1_slice] {
            let na = norm(&a, &grid).unwrap();
            let nb = norm(&b, &grid).unwrap();
            let sa: Vec<f64> = a.iter().map(|v| s * v).collect();
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let nsa = norm(&sa, &grid).unwrap();
            let nsum = norm(&sum, &grid).unwrap();
            prop_assert!((nsa - s.abs() * na).abs() <= 1e-12 * (1.0 + na));
            prop_assert!(nsum <= na + nb + 1e-12 * (1.0 + na + nb));
        }
    }

    #[test]
    fn fields_round_trip_through_text(
        (ny, nt, vals) in (4usize..=8, 4usize..=9).prop_flat_map(|(ny, nt)| {
            prop::collection::vec(-1e6f64..1e6, (ny + 1) * (nt + 1))
                .prop_map(move |v| (ny, nt, v))
        })
    ) {
        // T = 0.1 keeps every (ny, nt) in range under the step-size bound.
        let grid = Grid::new(ny, nt, 0.1).unwrap();
        let mut it = vals.iter();
        let field = Field::from_fn(&grid, |_, _| *it.next().unwrap());
        let mut buf = Vec::new();
        field.write_to(&mut buf).unwrap();
        let back = Field::read_from(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(field, back);
    }

    #[test]
    fn traces_round_trip_through_text(
        vals in prop::collection::vec(-1e6f64..1e6, 9),
        moving in any::<bool>(),
    ) {
        let grid = Grid::new(8, 8, 0.1).unwrap();
        let side = if moving { Side::GammaAlpha } else { Side::Gamma0 };
        let trace = BoundaryTrace { side, values: vals };
        let mut buf = Vec::new();
        trace.write_to(&mut buf, &grid).unwrap();
        let back = BoundaryTrace::read_from(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(trace, back);
    }

    #[test]
    fn physical_data_round_trips_through_text(
        (u0, u1) in (3usize..40).prop_flat_map(|n| {
            (
                prop::collection::vec(-1e6f64..1e6, n),
                prop::collection::vec(-1e6f64..1e6, n),
            )
        })
    ) {
        let data = PhysicalData::new(u0, u1).unwrap();
        let mut buf = Vec::new();
        data.write_to(&mut buf).unwrap();
        let back = PhysicalData::read_from(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(data, back);
    }

    #[test]
    fn grid_enforces_the_step_size_bound(
        ny in 4usize..100,
        nt in 4usize..400,
        t_final in 0.05f64..4.0,
    ) {
        let dy = 1.0 / ny as f64;
        let dt = t_final / nt as f64;
        match Grid::new(ny, nt, t_final) {
            Ok(g) => {
                prop_assert!(dt <= 0.4 * dy * (1.0 + 1e-9));
                prop_assert_eq!(g.nodes(), ny + 1);
                prop_assert_eq!(g.levels(), nt + 1);
                prop_assert!((g.t(nt) - t_final).abs() == 0.0);
            }
            Err(Error::Cfl { min_nt, .. }) => {
                prop_assert!(dt > 0.4 * dy * (1.0 - 1e-9));
                // The suggested refinement must actually be accepted.
                prop_assert!(Grid::new(ny, min_nt, t_final).is_ok());
            }
            Err(e) => return Err(TestCaseError::fail(format!("unexpected error {e}"))),
        }
    }

    #[test]
    fn affine_profiles_check_their_window(
        k in 0.0f64..1.2,
        m in 0.0f64..1.2,
        big_m in 0.0f64..1.2,
    ) {
        let valid = 0.0 < m && m < k && k < big_m && big_m < 1.0;
        match BoundaryProfile::affine(k, m, big_m) {
            Ok(p) => {
                prop_assert!(valid);
                // Unit initial length and constant declared speed.
                let p0 = p.eval(0.0).unwrap();
                prop_assert!((p0.alpha - 1.0).abs() == 0.0);
                for t in [0.3, 1.1, 2.7] {
                    let pt = p.eval(t).unwrap();
                    prop_assert!((pt.alpha - (1.0 + k * t)).abs() <= 1e-12 * (1.0 + t));
                    prop_assert!(pt.dalpha == k);
                }
            }
            Err(_) => prop_assert!(!valid),
        }
    }

    #[test]
    fn control_time_thresholds_are_ordered(
        m in 0.1f64..0.45,
        u in 0.05f64..1.0,
    ) {
        let big_m = m + u * (0.5 - m);
        prop_assume!(big_m > m && big_m < 0.5);
        let (t1, t2) = control_time_thresholds(m, big_m).unwrap();
        // The fixed-edge exponent exceeds the moving-edge one by the
        // factor 1 / (1 - M^2) > 1, so t1 > t2 > 0 on every window.
        prop_assert!(t2 > 0.0 && t1 > t2, "t1={t1}, t2={t2}");
        prop_assert!(t1.is_finite() && t2.is_finite());
    }

    #[test]
    fn edge_control_acts_linearly(
        u in prop::collection::vec(-1.0f64..1.0, 17),
        w in prop::collection::vec(-1.0f64..1.0, 17),
        s in -2.0f64..2.0,
    ) {
        let grid = Grid::new(8, 16, 0.8).unwrap();
        let profile = BoundaryProfile::affine(0.3, 0.2, 0.4).unwrap();
        let ops = assemble_step_operators(&profile, &grid).unwrap();
        let z0 = vec![0.0; grid.nodes()];
        let z1 = vec![0.0; grid.nodes()];
        let target = Field::zeros(&grid);
        let setup = ControlSetup {
            ops: &ops,
            side: Side::Gamma0,
            penalty: 100.0,
            z0: &z0,
            z1: &z1,
            target: &target,
        };
        let combo: Vec<f64> = u.iter().zip(&w).map(|(a, b)| s * a + b).collect();
        let fu = setup.forward_control_only(&u).unwrap();
        let fw = setup.forward_control_only(&w).unwrap();
        let fc = setup.forward_control_only(&combo).unwrap();
        let mut worst = 0.0f64;
        let mut scale = 1.0f64;
        for (c, (a, b)) in fc.values().iter().zip(fu.values().iter().zip(fw.values())) {
            let lin = s * a + b;
            worst = worst.max((c - lin).abs());
            scale = scale.max(lin.abs());
        }
        prop_assert!(worst <= 1e-11 * scale, "mismatch {worst:.3e} at scale {scale:.3e}");
    }

    #[test]
    fn negative_norm_pairing_is_attained(
        w in prop::collection::vec(-5.0f64..5.0, 13),
        v_int in prop::collection::vec(-5.0f64..5.0, 11),
    ) {
        let grid = Grid::new(12, 48, 1.0).unwrap();
        let mut v = vec![0.0; grid.nodes()];
        v[1..grid.ny].copy_from_slice(&v_int);
        let wm = hminus1_slice(&w, &grid).unwrap();
        let vn = h10_slice(&v, &grid).unwrap();
        let pair: f64 = (1..grid.ny).map(|j| grid.dy * w[j] * v[j]).sum();
        // Duality: the interior pairing is bounded by the product of the
        // negative and positive norms, with equality at the Laplacian
        // preimage of w.
        prop_assert!(pair.abs() <= wm * vn * (1.0 + 1e-10) + 1e-12);
        if wm > 1e-8 {
            let mut vstar = vec![0.0; grid.nodes()];
            let u = dirichlet_laplacian_solve(&w[1..grid.ny], grid.dy);
            vstar[1..grid.ny].copy_from_slice(&u);
            let vsn = h10_slice(&vstar, &grid).unwrap();
            let pstar: f64 = (1..grid.ny).map(|j| grid.dy * w[j] * vstar[j]).sum();
            prop_assert!(pstar >= wm * vsn * (1.0 - 1e-10));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn follower_cost_is_quadratic_along_lines(
        v in prop::collection::vec(-1.0f64..1.0, 17),
        d in prop::collection::vec(-1.0f64..1.0, 17),
    ) {
        let grid = Grid::new(8, 16, 0.8).unwrap();
        let profile = BoundaryProfile::affine(0.3, 0.2, 0.4).unwrap();
        let ops = assemble_step_operators(&profile, &grid).unwrap();
        let z0 = vec![0.0; grid.nodes()];
        let z1 = vec![0.0; grid.nodes()];
        let target = Field::from_fn(&grid, |y, t| 0.3 * (PI * y).sin() * (2.0 * t).cos());
        let setup = ControlSetup {
            ops: &ops,
            side: Side::Gamma0,
            penalty: 100.0,
            z0: &z0,
            z1: &z1,
            target: &target,
        };
        let leader = vec![0.0; grid.levels()];
        let problem = FollowerProblem { setup, leader: &leader };
        let at = |s: f64| {
            let cand: Vec<f64> = v.iter().zip(&d).map(|(a, b)| a + s * b).collect();
            follower_cost(&problem, &cand).unwrap()
        };
        let (c0, c1, c2, c3) = (at(-1.0), at(0.0), at(1.0), at(2.0));
        // A quadratic has a constant second difference along any line, and
        // a convex one has nonnegative curvature.
        let d1 = c0 - 2.0 * c1 + c2;
        let d2 = c1 - 2.0 * c2 + c3;
        let scale = 1.0 + c0.abs() + c1.abs() + c2.abs() + c3.abs();
        prop_assert!((d1 - d2).abs() <= 1e-8 * scale, "{d1:.6e} vs {d2:.6e}");
        prop_assert!(d1 >= -1e-12 * scale);
    }
}

/// Shared leader instance on a desk-scale controllable horizon.
fn leader_instance() -> (Grid, BoundaryProfile, Vec<f64>, Vec<f64>) {
    let grid = Grid::new(8, 32, 1.6).unwrap();
    let profile = BoundaryProfile::affine(0.3, 0.2, 0.4).unwrap();
    let v0: Vec<f64> = (0..grid.nodes())
        .map(|j| 0.1 * (PI * grid.y(j)).sin())
        .collect();
    let v1 = vec![0.0; grid.nodes()];
    (grid, profile, v0, v1)
}

#[test]
fn dual_optimum_resists_perturbation() {
    let (grid, profile, v0, v1) = leader_instance();
    let ops = assemble_step_operators(&profile, &grid).unwrap();
    let z0 = vec![0.0; grid.nodes()];
    let z1 = vec![0.0; grid.nodes()];
    let target = Field::zeros(&grid);
    let setup = ControlSetup {
        ops: &ops,
        side: Side::Gamma0,
        penalty: 100.0,
        z0: &z0,
        z1: &z1,
        target: &target,
    };
    let problem = LeaderProblem {
        setup,
        profile: &profile,
        v0: &v0,
        v1: &v1,
        eps: 1e-2,
    };
    let ctx = LeaderContext::new(problem, LeaderOptions::default()).unwrap();
    let min = ctx.minimize_theta().unwrap();
    let base = ctx.theta(&min.dual).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(0xd0a1);
    for _ in 0..20 {
        let scale = if rng.gen_bool(0.5) { 1e-3 } else { 1e-1 };
        let mut cand = DualVariable {
            f0: min.dual.f0.clone(),
            f1: min.dual.f1.clone(),
        };
        // Keep the position block in the zero-trace class.
        for j in 1..grid.ny {
            cand.f0[j] += scale * rng.gen_range(-1.0..1.0);
        }
        for j in 0..grid.nodes() {
            cand.f1[j] += scale * rng.gen_range(-1.0..1.0);
        }
        let theta = ctx.theta(&cand).unwrap();
        assert!(
            theta >= base - 1e-10 * (1.0 + base.abs()),
            "perturbation at scale {scale} undercuts the optimum: {theta} < {base}"
        );
    }
}

#[test]
fn larger_radius_never_costs_more() {
    let (grid, profile, v0, v1) = leader_instance();
    let ops = assemble_step_operators(&profile, &grid).unwrap();
    let z0 = vec![0.0; grid.nodes()];
    let z1 = vec![0.0; grid.nodes()];
    let target = Field::zeros(&grid);
    let setup = ControlSetup {
        ops: &ops,
        side: Side::Gamma0,
        penalty: 100.0,
        z0: &z0,
        z1: &z1,
        target: &target,
    };
    let solve = |eps: f64| {
        solve_leader(
            LeaderProblem {
                setup,
                profile: &profile,
                v0: &v0,
                v1: &v1,
                eps,
            },
            LeaderOptions::default(),
        )
        .unwrap()
    };
    let tight = solve(1e-2);
    let loose = solve(2e-2);
    assert!(tight.admissible && loose.admissible);
    assert!(
        loose.leader_cost <= tight.leader_cost * (1.0 + 1e-6) + 1e-15,
        "doubling the radius raised the cost: {} -> {}",
        tight.leader_cost,
        loose.leader_cost
    );
}

#[test]
fn edge_impulse_stays_inside_the_light_cone() {
    let grid = Grid::new(40, 100, 1.0).unwrap();
    let profile = BoundaryProfile::affine(0.3, 0.2, 0.4).unwrap();
    let ops = assemble_step_operators(&profile, &grid).unwrap();
    let z0 = vec![0.0; grid.nodes()];
    let z1 = vec![0.0; grid.nodes()];
    let mut left = vec![0.0; grid.levels()];
    left[1] = 1.0;
    let right = vec![0.0; grid.levels()];
    let z = solve_forward(
        &ops,
        &ForwardInputs {
            z0: &z0,
            z1: &z1,
            left: &left,
            right: &right,
            source: None,
        },
    )
    .unwrap();
    let peak = z.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // Transformed characteristics stay slower than 2 on this profile; the
    // implicit step leaks only exponentially small tails past the front.
    let mut worst = 0.0f64;
    for n in 0..grid.levels() {
        let front = 2.0 * grid.t(n) + 0.2;
        for j in 0..grid.nodes() {
            if grid.y(j) > front {
                worst = worst.max(z.at(n, j).abs());
            }
        }
    }
    assert!(
        worst <= 1e-10 * peak,
        "signal beyond the widened cone: {worst:.3e} of peak {peak:.3e}"
    );
}
