use analog_lp::circuit::{compile, export_netlist, Circuit, Port, PortNetwork};
use analog_lp::lp::{canonicalize, LinearProgram};
use analog_lp::oracle::solve_lp;
use analog_lp::random::{generate_random_lp, RandomLpSpec};
use analog_lp::steady::{
    compute_ucrit_circuit, cost_sensitivity, residuals, solve_nocost_qp, solve_steady_state, verify_equivalence,
    VerifyStatus,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn random_lp(n: usize, seed: u64) -> LinearProgram {
    generate_random_lp(&RandomLpSpec::new(n, n / 3, n + 1 + n / 3, seed)).unwrap()
}

fn random_circuit(n: usize, seed: u64) -> Circuit {
    compile(&canonicalize(&random_lp(n, seed)).unwrap()).unwrap()
}

/// Conductance matrix with a non-empty cost row and at least one entry in
/// every row and column.
fn conductances(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.05..5.0f64], rows * cols).prop_map(move |vals| {
        let mut g = DMatrix::from_vec(rows, cols, vals);
        for i in 0..rows {
            if g.row(i).iter().all(|&x| x == 0.0) {
                g[(i, i % cols)] = 1.0;
            }
        }
        for j in 0..cols {
            if g.column(j).iter().all(|&x| x == 0.0) {
                g[(j % rows, j)] = 1.0;
            }
        }
        g
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn canonical_form_round_trips(n in 3usize..10, seed in 0u64..10_000, scale in -3.0..3.0f64) {
        let lp = random_lp(n, seed);
        let lp = lp.with_cost(lp.c() * scale).unwrap();
        let clp = canonicalize(&lp).unwrap();
        let x = solve_lp(&lp).v_star;
        let lifted = clp.lift(&x);
        prop_assert!((clp.recover(&lifted) - &x).amax() < 1e-12);
        prop_assert!((clp.inner.objective(&lifted) - lp.objective(&x)).abs() < 1e-9);
        prop_assert!(clp.inner.max_violation(&lifted) < 1e-9);
        prop_assert!(clp.inner.is_nonnegative());
    }

    #[test]
    fn negative_resistor_cancels_row(n in 3usize..12, seed in 0u64..10_000) {
        let c = random_circuit(n, seed);
        for i in 1..=c.n_constraints() {
            prop_assert!((c.neg_resistance()[i] * c.g().row(i).sum() + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn port_resistance_is_nonnegative(g in conductances(4, 3), a in 0usize..4, b in 0usize..4) {
        prop_assume!(a != b);
        let c = Circuit::new(g, 1, DVector::from_element(3, 1.0)).unwrap();
        let port = |k: usize| if k == 0 { Port::Cost } else { Port::Row(k) };
        if let Ok(r) = PortNetwork::new(&c).resistance(port(a), port(b)) {
            prop_assert!(r >= -1e-9, "{r}");
        }
    }

    #[test]
    fn cost_is_nondecreasing_in_cost_voltage(n in 3usize..9, seed in 0u64..10_000, du in 0.1..50.0f64) {
        let c = random_circuit(n, seed);
        let u = compute_ucrit_circuit(&c).unwrap();
        for start in [u - du, u, u + du] {
            prop_assert!(cost_sensitivity(&c, start, du).unwrap() >= -1e-9);
        }
    }

    #[test]
    fn circuit_matches_oracle_below_critical_voltage(n in 3usize..12, seed in 0u64..10_000, extra in 0.0..20.0f64) {
        let lp = random_lp(n, seed);
        let u = verify_equivalence(&lp, None).u_crit.unwrap();
        let r = verify_equivalence(&lp, Some(u - extra));
        prop_assert_eq!(r.status, VerifyStatus::Optimal);
        prop_assert!(r.cost_gap.unwrap() <= 1e-6, "{:?}", r);
        prop_assert!(r.kkt_residual.unwrap() <= 1e-7, "{:?}", r);
    }

    #[test]
    fn steady_state_satisfies_circuit_equations(n in 3usize..10, seed in 0u64..10_000, u in -100.0..100.0f64) {
        let c = random_circuit(n, seed);
        let st = solve_steady_state(&c, u).unwrap();
        prop_assert!(residuals(&c, &st).max() <= 1e-8);
    }

    #[test]
    fn nocost_construction_residuals(n in 3usize..10, seed in 0u64..10_000) {
        let c = random_circuit(n, seed);
        let k = solve_nocost_qp(&c).unwrap();
        prop_assert!(k.residuals(&c).max() <= 1e-8);
        prop_assert!(k.lambda_star.iter().all(|&l| l >= 0.0));
    }

    #[test]
    fn generation_and_export_are_deterministic(n in 3usize..10, seed in 0u64..10_000) {
        prop_assert_eq!(random_lp(n, seed), random_lp(n, seed));
        let c = random_circuit(n, seed);
        prop_assert_eq!(export_netlist(&c, -2.0), export_netlist(&c, -2.0));
    }
}
