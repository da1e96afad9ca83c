use std::collections::VecDeque;

use proptest::prelude::*;
use rand::Rng;
use respo_core::harness::random::{random_mdp, random_policy, RandomMdpSpec};
use respo_core::mdp::{discounted_cost_return, discounted_reward_return, sample_trajectory};
use respo_core::mdp_format::{from_text, to_text};
use respo_core::oracle::{
    constrained_optimal_reference, optimal_ref, policy_eval, ref_bellman, ref_fixed_point, Signal,
};
use respo_core::rng::stream;
use respo_core::{FiniteMdp, FiniteMdpBuilder, TabularPolicy};

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn mdp_from(seed: u64, spec: RandomMdpSpec) -> FiniteMdp {
    random_mdp(&spec, &mut stream(11, seed, 0)).unwrap()
}

/// States reachable from `s` (including `s`) along actions and transitions
/// with positive probability.
fn reachable(mdp: &FiniteMdp, pi: &TabularPolicy, s: usize) -> Vec<bool> {
    let mut seen = vec![false; mdp.n_states()];
    seen[s] = true;
    let mut queue = VecDeque::from([s]);
    while let Some(u) = queue.pop_front() {
        if mdp.is_absorbing(u) {
            continue;
        }
        for a in (0..mdp.n_actions()).filter(|&a| pi.prob(u, a) > 0.0) {
            for &(v, p) in mdp.successors(u, a) {
                if p > 0.0 && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
    }
    seen
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_discounted_cost_iff_no_violation(seed in any::<u64>(), ep in 0u64..1000) {
        let mdp = mdp_from(seed, RandomMdpSpec { sink_mass: 0.2, ..RandomMdpSpec::default() });
        let pi = random_policy(mdp.n_states(), mdp.n_actions(), false, &mut stream(12, seed, 0)).unwrap();
        let traj = sample_trajectory(&mdp, &pi, 50, &mut stream(13, seed, ep)).unwrap();
        prop_assert_eq!(discounted_cost_return(&traj, mdp.discount()) == 0.0, traj.violation_count() == 0);
    }

    #[test]
    fn identical_seed_identical_trajectory(seed in any::<u64>()) {
        let mdp = mdp_from(seed, RandomMdpSpec::default());
        let pi = TabularPolicy::uniform(mdp.n_states(), mdp.n_actions());
        let a = sample_trajectory(&mdp, &pi, 40, &mut stream(14, seed, 3)).unwrap();
        let b = sample_trajectory(&mdp, &pi, 40, &mut stream(14, seed, 3)).unwrap();
        prop_assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    #[test]
    fn text_format_round_trips(seed in any::<u64>(), det in any::<bool>()) {
        let mdp = mdp_from(seed, RandomMdpSpec { deterministic: det, sink_mass: if det { 0.0 } else { 0.1 }, ..RandomMdpSpec::default() });
        let text = to_text(&mdp);
        let back = from_text(&text).unwrap();
        prop_assert_eq!(to_text(&back), text);
    }

    #[test]
    fn ref_operator_contracts(seed in any::<u64>(), gp in 0.05f64..0.999) {
        let mdp = mdp_from(seed, RandomMdpSpec::default());
        let n = mdp.n_states();
        let mut rng = stream(15, seed, 0);
        let pi = random_policy(n, mdp.n_actions(), false, &mut rng).unwrap();
        for _ in 0..100 {
            let p: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let q: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let lhs = sup(&ref_bellman(&mdp, &pi, gp, &p), &ref_bellman(&mdp, &pi, gp, &q));
            prop_assert!(lhs <= gp * sup(&p, &q) + 1e-12);
        }
    }

    #[test]
    fn zero_cost_value_iff_no_reachable_violation(seed in any::<u64>(), n in 2usize..=12) {
        let mdp = mdp_from(seed, RandomMdpSpec { n_states: n, n_actions: 3, violation_rate: 0.2, sink_mass: 0.1, ..RandomMdpSpec::default() });
        let pi = random_policy(n, 3, true, &mut stream(16, seed, 0)).unwrap();
        let vc = policy_eval(&mdp, &pi, Signal::Cost).unwrap();
        for s in 0..n {
            let clean = reachable(&mdp, &pi, s).iter().enumerate().all(|(u, &r)| !r || mdp.cost(u) == 0.0);
            prop_assert_eq!(vc[s] <= 1e-9, clean, "state {}", s);
        }
    }

    #[test]
    fn undiscounted_ref_iterates_increase(seed in any::<u64>()) {
        let mdp = mdp_from(seed, RandomMdpSpec { sink_mass: 0.05, ..RandomMdpSpec::default() });
        let pi = random_policy(mdp.n_states(), mdp.n_actions(), false, &mut stream(17, seed, 0)).unwrap();
        let mut p = mdp.violation().as_f64();
        for _ in 0..500 {
            let next = ref_bellman(&mdp, &pi, 1.0, &p);
            prop_assert!(next.iter().zip(&p).all(|(a, b)| *a >= *b));
            p = next;
        }
        let fixed = ref_fixed_point(&mdp, &pi, 1.0).unwrap();
        prop_assert!(p.iter().zip(&fixed).all(|(a, b)| *a <= *b + 1e-9));
    }

    #[test]
    fn optimal_ref_is_pointwise_minimal_on_deterministic_mdps(seed in any::<u64>()) {
        let mdp = mdp_from(seed, RandomMdpSpec { deterministic: true, ..RandomMdpSpec::default() });
        let phi = optimal_ref(&mdp).unwrap().phi_exact;
        let mut rng = stream(18, seed, 0);
        for _ in 0..50 {
            let pi = random_policy(mdp.n_states(), mdp.n_actions(), false, &mut rng).unwrap();
            let phi_pi = ref_fixed_point(&mdp, &pi, 1.0).unwrap();
            prop_assert!(phi.iter().zip(&phi_pi).all(|(a, b)| *a <= *b + 1e-9));
        }
    }

    #[test]
    fn constrained_reference_never_pays_cost_from_feasible_states(seed in any::<u64>()) {
        let mdp = mdp_from(seed, RandomMdpSpec { n_actions: 3, sink_mass: 0.1, ..RandomMdpSpec::default() });
        let feasible = optimal_ref(&mdp).unwrap().feasible;
        let reference = constrained_optimal_reference(&mdp).unwrap();
        let vc = policy_eval(&mdp, &reference.policy, Signal::Cost).unwrap();
        for s in (0..mdp.n_states()).filter(|&s| feasible[s]) {
            prop_assert!(vc[s] <= 1e-9, "state {} V_c {}", s, vc[s]);
        }
    }
}

/// With stochastic transitions the cost-minimizing policy need not minimize
/// the reach probability. From s0, action 0 risks a 0.5 chance of an
/// absorbing violation loop, action 1 passes through one violating state for
/// sure and then stops. Action 1 has the lower discounted cost.
#[test]
fn safest_ref_can_exceed_another_policys_ref_when_stochastic() {
    let mut b = FiniteMdpBuilder::new(4, 2);
    b.transition(0, 0, &[(1, 0.5), (3, 0.5)]).deterministic(0, 1, 2);
    b.deterministic(1, 0, 1).deterministic(1, 1, 1).cost(1, 1.0);
    b.deterministic(2, 0, 3).deterministic(2, 1, 3).cost(2, 1.0);
    b.absorbing(3).discount(0.9);
    let mdp = b.build().unwrap();
    let opt = optimal_ref(&mdp).unwrap();
    assert_eq!(opt.safest.policy.row(0), &[0.0, 1.0]);
    let risky = TabularPolicy::deterministic(2, &[0, 0, 0, 0]).unwrap();
    let phi_risky = ref_fixed_point(&mdp, &risky, 1.0).unwrap();
    assert!((opt.phi_exact[0] - 1.0).abs() < 1e-12);
    assert!((phi_risky[0] - 0.5).abs() < 1e-12);
}

#[test]
fn monte_carlo_reward_matches_policy_evaluation() {
    let mdp = mdp_from(5, RandomMdpSpec { n_states: 6, n_actions: 2, sink_mass: 0.1, ..RandomMdpSpec::default() });
    let mdp = mdp.with_initial(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let pi = random_policy(6, 2, false, &mut stream(19, 0, 0)).unwrap();
    let exact = policy_eval(&mdp, &pi, Signal::Reward).unwrap()[0];
    let n = 100_000;
    let returns: Vec<f64> = (0..n)
        .map(|e| {
            let t = sample_trajectory(&mdp, &pi, mdp.horizon(), &mut stream(20, 0, e)).unwrap();
            discounted_reward_return(&t, mdp.discount())
        })
        .collect();
    let mean = returns.iter().sum::<f64>() / n as f64;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    assert!((mean - exact).abs() <= 3.0 * se, "MC {mean} vs exact {exact} (SE {se})");
}
