use proptest::prelude::*;
use respo_core::env::drone::{DroneTunnel, DroneTunnelSpec};
use respo_core::env::gridworld::{build_gridworld, GridWorldSpec};
use respo_core::harness::{DiscretizedDoubleIntegrator, DoubleIntegratorSetup};
use respo_core::mdp::Environment;
use respo_core::oracle::optimal_ref;
use respo_core::rng::stream;
use rand::Rng;

#[test]
fn double_integrator_feasible_set_is_odd_symmetric() {
    let setup = DoubleIntegratorSetup::build(&DiscretizedDoubleIntegrator::default()).unwrap();
    let n = setup.grid.counts()[0];
    let feasible = &setup.oracle.feasible;
    assert!(feasible.iter().any(|&f| f) && feasible.iter().any(|&f| !f));
    for s in 0..setup.mdp.n_states() {
        let idx = setup.grid.unflatten(s);
        let mirror = setup.grid.flatten(&[n - 1 - idx[0], n - 1 - idx[1]]);
        assert_eq!(feasible[s], feasible[mirror], "cell {idx:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hazard_free_grid_has_zero_ref(
        width in 1usize..7,
        height in 1usize..7,
        slip in 0.0f64..0.3,
        goal in any::<bool>(),
    ) {
        let spec = GridWorldSpec {
            width,
            height,
            goals: if goal { vec![((width - 1, height - 1), 1.0)] } else { Vec::new() },
            slip,
            ..GridWorldSpec::default()
        };
        let opt = optimal_ref(&build_gridworld(&spec).unwrap()).unwrap();
        prop_assert!(opt.phi_exact.iter().chain(&opt.phi_discounted).all(|&p| p == 0.0));
        prop_assert!(opt.feasible.iter().all(|&f| f));
    }

    #[test]
    fn drone_proximity_and_separation_never_both_fire(seed in any::<u64>()) {
        let env = DroneTunnel::new(DroneTunnelSpec::default()).unwrap();
        let mut rng = stream(21, seed, 0);
        let mut state = env.reset(&mut rng);
        for _ in 0..env.horizon() {
            let c = env.channels(&state);
            prop_assert!(!(c[1] > 0.0 && c[2] > 0.0), "state {:?}", state);
            let a = rng.random_range(0..env.n_actions());
            let out = env.step(&state, a, &mut rng).unwrap();
            if out.done {
                break;
            }
            state = out.next_state;
        }
    }

    #[test]
    fn drone_channels_are_exclusive_anywhere(x in proptest::array::uniform4(0.0f64..3.2)) {
        let env = DroneTunnel::new(DroneTunnelSpec::default()).unwrap();
        let state = vec![x[0], x[1] * 0.75, x[2], x[3] * 0.75];
        let c = env.channels(&state);
        prop_assert!(!(c[1] > 0.0 && c[2] > 0.0));
    }
}
