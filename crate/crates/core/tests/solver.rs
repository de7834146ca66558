use proptest::prelude::*;
use semcast_core::optimizer::{reduced_solve, sqp_solve, Init, Problem, SolveOptions};
use semcast_core::verify::{grid_oracle, random_instance};
use semcast_core::{ChannelRealization, ComputeSpec, IntentMatrix, Scenario};

fn single_user() -> (Scenario, ChannelRealization) {
    let intent = IntentMatrix::from_rows(&[[1u8]]).unwrap();
    let mut sc = Scenario::standard(intent, vec![300.0], 0.1, 0.0285, 0.58705).unwrap();
    sc.radio.noise_density = 10f64.powf(-20.4);
    sc.compute = ComputeSpec::uniform(1, 0.0);
    (
        sc,
        ChannelRealization {
            gains: vec![2.24e-12],
            scattering: None,
        },
    )
}

#[test]
fn single_user_matches_bisection() {
    // 40-digit bisection on T_0(p) = T_1(P_T − p)
    let (sc, ch) = single_user();
    let rep = sqp_solve(&sc, &ch, &SolveOptions::default()).unwrap();
    assert!(rep.converged);
    assert!((rep.allocation.powers[0] - 0.0985765491944775).abs() < 1e-9);
    assert!((rep.objective - 0.0101622862679427).abs() < 1e-12);
    let red = reduced_solve(&sc, &ch).unwrap();
    assert!((red.objective - 0.0101622862679427).abs() < 1e-12);
}

#[test]
fn small_instances_agree_with_oracles() {
    for seed in 0..60 {
        let (sc, ch) = random_instance(seed, 3, 2).unwrap();
        let rep = sqp_solve(&sc, &ch, &SolveOptions::default()).unwrap();
        assert!(rep.converged, "seed {seed}");
        let grid = grid_oracle(&sc, &ch, 200).unwrap();
        let red = reduced_solve(&sc, &ch).unwrap();
        assert!(
            (rep.objective - grid).abs() / grid < 5e-3,
            "seed {seed}: {} vs grid {grid}",
            rep.objective
        );
        assert!(
            (rep.objective - red.objective).abs() / red.objective < 1e-6,
            "seed {seed}"
        );
        assert!(
            rep.kkt_residual < 1e-7,
            "seed {seed}: kkt {}",
            rep.kkt_residual
        );
        let budget = sc.radio.power_budget;
        assert!(
            (rep.allocation.total_power() - budget).abs() < 1e-6 * budget,
            "seed {seed}"
        );
        assert!(rep.rate_snap < 1e-5, "seed {seed}");
    }
}

#[test]
fn complementary_slackness() {
    for seed in 0..30 {
        let (sc, ch) = random_instance(seed, 3, 2).unwrap();
        let rep = sqp_solve(&sc, &ch, &SolveOptions::default()).unwrap();
        let problem = Problem::new(&sc, &ch).unwrap();
        let x = rep.allocation.to_decision_vector(&problem);
        let c = problem.constraint_functions(&x);
        let m = &rep.multipliers;
        let scale = rep.objective;
        assert!(m.power > 0.0);
        assert!(m.power * c.i.abs() < 1e-7 * scale, "seed {seed}");
        for (k, (&zeta, &g)) in m.map.iter().zip(&c.g).enumerate() {
            assert!(zeta >= 0.0);
            assert!(
                zeta * g.abs() < 1e-7 * scale,
                "seed {seed} user {k}: {zeta} × {g}"
            );
        }
        // every user contributes one unit of objective through its binding constraints
        for k in 0..sc.users() {
            let class: f64 = m.class.iter().filter(|e| e.0 == k).map(|e| e.2).sum();
            assert!(
                (m.map[k] + class - 1.0).abs() < 1e-6,
                "seed {seed} user {k}"
            );
        }
    }
}

#[test]
fn results_are_deterministic() {
    let (sc, ch) = random_instance(9, 3, 2).unwrap();
    let a = sqp_solve(&sc, &ch, &SolveOptions::default()).unwrap();
    let b = sqp_solve(&sc, &ch, &SolveOptions::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn random_starts_find_the_warm_start_optimum() {
    let (sc, ch) = random_instance(4, 3, 2).unwrap();
    let warm = sqp_solve(&sc, &ch, &SolveOptions::default()).unwrap();
    for seed in 0..5 {
        let opts = SolveOptions {
            init: Init::Random { seed },
            ..SolveOptions::default()
        };
        let rep = sqp_solve(&sc, &ch, &opts).unwrap();
        assert!((rep.objective - warm.objective).abs() < 1e-7 * warm.objective);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn doubling_the_budget_never_hurts(seed in 0u64..10_000) {
        let (sc, ch) = random_instance(seed, 3, 2).unwrap();
        let mut rich = sc.clone();
        rich.radio.power_budget *= 2.0;
        let a = sqp_solve(&sc, &ch, &SolveOptions::default()).unwrap();
        let b = sqp_solve(&rich, &ch, &SolveOptions::default()).unwrap();
        prop_assert!(b.objective < a.objective);
    }

    #[test]
    fn returned_allocations_are_feasible(seed in 0u64..10_000) {
        let (sc, ch) = random_instance(seed, 3, 2).unwrap();
        let rep = sqp_solve(&sc, &ch, &SolveOptions::default()).unwrap();
        prop_assert!(rep.converged);
        prop_assert!(rep.max_violation < 1e-6);
        prop_assert!(rep.allocation.powers.iter().all(|&p| p >= 0.0));
        for k in 0..sc.users() {
            prop_assert!(rep.allocation.latencies[k] >= sc.generation_latency(k));
        }
    }
}
