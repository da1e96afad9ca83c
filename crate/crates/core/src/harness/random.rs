//! Random finite MDPs and policies for property checks.

use rand::Rng;

use crate::error::Result;
use crate::mdp::{FiniteMdp, FiniteMdpBuilder, TabularPolicy};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomMdpSpec {
    pub n_states: usize,
    pub n_actions: usize,
    /// Probability that a state is violating.
    pub violation_rate: f64,
    pub deterministic: bool,
    /// Probability mass every row sends to the last state, which is absorbing.
    /// Zero disables the sink.
    pub sink_mass: f64,
    pub discount: f64,
}

impl Default for RandomMdpSpec {
    fn default() -> Self {
        Self { n_states: 8, n_actions: 2, violation_rate: 0.25, deterministic: false, sink_mass: 0.0, discount: 0.9 }
    }
}

/// Transitions have one to three successors with random weights; costs are
/// zero or drawn from `[0.5, 1.5)`; rewards from `[−1, 1)`.
pub fn random_mdp(spec: &RandomMdpSpec, rng: &mut StreamRng) -> Result<FiniteMdp> {
    let (n, m) = (spec.n_states, spec.n_actions);
    let sink = (spec.sink_mass > 0.0).then_some(n - 1);
    let live = if sink.is_some() { n - 1 } else { n };
    let mut b = FiniteMdpBuilder::new(n, m);
    b.discount(spec.discount).horizon(200);
    for s in 0..live {
        if rng.random::<f64>() < spec.violation_rate {
            b.cost(s, rng.random_range(0.5..1.5));
        }
        for a in 0..m {
            if spec.deterministic {
                b.deterministic(s, a, rng.random_range(0..live));
            } else {
                let k = rng.random_range(1..=3usize);
                let mut row: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
                for _ in 0..k {
                    let t = rng.random_range(0..live);
                    let w = rng.random_range(0.1..1.0);
                    match row.iter_mut().find(|e| e.0 == t) {
                        Some(e) => e.1 += w,
                        None => row.push((t, w)),
                    }
                }
                let total: f64 = row.iter().map(|e| e.1).sum();
                let keep = 1.0 - spec.sink_mass;
                row.iter_mut().for_each(|e| e.1 *= keep / total);
                if let Some(z) = sink {
                    row.push((z, spec.sink_mass));
                }
                b.transition(s, a, &row);
            }
            b.reward(s, a, rng.random_range(-1.0..1.0));
        }
    }
    if let Some(z) = sink {
        b.absorbing(z);
    }
    b.initial(&vec![1.0 / n as f64; n]);
    b.build()
}

/// Random stochastic policy; with `sparse`, each action is dropped with
/// probability one half (at least one survives).
pub fn random_policy(n_states: usize, n_actions: usize, sparse: bool, rng: &mut StreamRng) -> Result<TabularPolicy> {
    let mut probs = Vec::with_capacity(n_states * n_actions);
    for _ in 0..n_states {
        let keep = rng.random_range(0..n_actions);
        let mut row: Vec<f64> = (0..n_actions)
            .map(|a| if sparse && a != keep && rng.random::<bool>() { 0.0 } else { rng.random_range(0.05..1.0) })
            .collect();
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= total);
        probs.extend(row);
    }
    TabularPolicy::new(n_states, n_actions, probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn rows_are_distributions() {
        let mut rng = stream(1, 2, 3);
        let spec = RandomMdpSpec { sink_mass: 0.1, ..RandomMdpSpec::default() };
        let mdp = random_mdp(&spec, &mut rng).unwrap();
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                let t: f64 = mdp.successors(s, a).iter().map(|e| e.1).sum();
                assert!((t - 1.0).abs() < 1e-12);
            }
        }
        assert!(mdp.is_absorbing(spec.n_states - 1));
        let pi = random_policy(5, 3, true, &mut rng).unwrap();
        for s in 0..5 {
            assert!(pi.row(s).iter().any(|&p| p > 0.0));
        }
    }
}
