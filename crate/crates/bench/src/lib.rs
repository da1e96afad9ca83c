//! Shared fixtures for the benchmarks in `benches/`.

use respo_core::env::gridworld::{build_gridworld, grid5, grid6};
use respo_core::harness::acceptance::{tabular_preset, tabular_trainer};
use respo_core::harness::{DiscretizedDoubleIntegrator, DoubleIntegratorSetup};
use respo_core::{FiniteMdp, LearnerKind, TabularPolicy, TrainerConfig};

pub fn gridworlds() -> Vec<(&'static str, FiniteMdp)> {
    vec![
        ("grid5", build_gridworld(&grid5(0.1)).expect("preset builds")),
        ("grid6", build_gridworld(&grid6(0.0)).expect("preset builds")),
    ]
}

/// The 41×41 discretized double integrator.
pub fn double_integrator() -> FiniteMdp {
    DoubleIntegratorSetup::build(&DiscretizedDoubleIntegrator::default()).expect("discretizes").mdp
}

pub fn uniform(mdp: &FiniteMdp) -> TabularPolicy {
    TabularPolicy::uniform(mdp.n_states(), mdp.n_actions())
}

/// Tabular trainer config stopped after `steps` environment steps.
pub fn short_run(kind: LearnerKind, steps: u64) -> TrainerConfig {
    TrainerConfig { max_steps: Some(steps), ..tabular_trainer(kind, tabular_preset()) }
}
