//! Comparison learners. Each is a [`LearnerKind`] run through the shared
//! trainer, so sampling, seeding and metrics are identical across learners.

use crate::error::Result;
use crate::features::Featurizer;
use crate::learner::{train, LearnerKind, OracleView, TrainOutcome, TrainerConfig};
use crate::mdp::Environment;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineKind {
    Unconstrained,
    ScalarLagrangian { chi: f64 },
    FacZeroThreshold,
    Rcrl,
    Cbf { nu: f64 },
    RespoWithVhAblation,
    LagrangianChiZeroAblation,
}

impl BaselineKind {
    pub const NAMES: [&'static str; 7] = [
        "unconstrained",
        "scalar_lagrangian",
        "fac",
        "rcrl",
        "cbf",
        "respo_vh",
        "lagrangian_chi0",
    ];

    pub fn learner(&self) -> LearnerKind {
        match *self {
            BaselineKind::Unconstrained => LearnerKind::Unconstrained,
            BaselineKind::ScalarLagrangian { chi } => LearnerKind::ScalarLagrangian { chi },
            BaselineKind::FacZeroThreshold => LearnerKind::Fac,
            BaselineKind::Rcrl => LearnerKind::Rcrl,
            BaselineKind::Cbf { nu } => LearnerKind::Cbf { nu },
            BaselineKind::RespoWithVhAblation => LearnerKind::RespoWithVh,
            BaselineKind::LagrangianChiZeroAblation => LearnerKind::ScalarLagrangian { chi: 0.0 },
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::Unconstrained => Self::NAMES[0],
            BaselineKind::ScalarLagrangian { .. } => Self::NAMES[1],
            BaselineKind::FacZeroThreshold => Self::NAMES[2],
            BaselineKind::Rcrl => Self::NAMES[3],
            BaselineKind::Cbf { .. } => Self::NAMES[4],
            BaselineKind::RespoWithVhAblation => Self::NAMES[5],
            BaselineKind::LagrangianChiZeroAblation => Self::NAMES[6],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.learner().validate()
    }
}

fn run<E, F>(
    env: &E,
    featurizer: F,
    kind: LearnerKind,
    config: &TrainerConfig,
    experiment: u64,
    seed: u64,
    oracle: Option<&OracleView>,
) -> Result<TrainOutcome<F>>
where
    E: Environment,
    F: Featurizer<E::State>,
{
    let config = TrainerConfig { kind, ..config.clone() };
    train(env, featurizer, &config, experiment, seed, oracle)
}

/// Run any baseline; the learner kind in `config` is overridden.
pub fn train_baseline<E, F>(
    env: &E,
    featurizer: F,
    kind: BaselineKind,
    config: &TrainerConfig,
    experiment: u64,
    seed: u64,
    oracle: Option<&OracleView>,
) -> Result<TrainOutcome<F>>
where
    E: Environment,
    F: Featurizer<E::State>,
{
    run(env, featurizer, kind.learner(), config, experiment, seed, oracle)
}

pub fn train_scalar_lagrangian<E, F>(
    env: &E,
    featurizer: F,
    chi: f64,
    config: &TrainerConfig,
    experiment: u64,
    seed: u64,
) -> Result<TrainOutcome<F>>
where
    E: Environment,
    F: Featurizer<E::State>,
{
    run(env, featurizer, LearnerKind::ScalarLagrangian { chi }, config, experiment, seed, None)
}

pub fn train_rcrl<E, F>(env: &E, featurizer: F, config: &TrainerConfig, experiment: u64, seed: u64) -> Result<TrainOutcome<F>>
where
    E: Environment,
    F: Featurizer<E::State>,
{
    run(env, featurizer, LearnerKind::Rcrl, config, experiment, seed, None)
}

pub fn train_fac<E, F>(env: &E, featurizer: F, config: &TrainerConfig, experiment: u64, seed: u64) -> Result<TrainOutcome<F>>
where
    E: Environment,
    F: Featurizer<E::State>,
{
    run(env, featurizer, LearnerKind::Fac, config, experiment, seed, None)
}

pub fn train_cbf<E, F>(
    env: &E,
    featurizer: F,
    nu: f64,
    config: &TrainerConfig,
    experiment: u64,
    seed: u64,
) -> Result<TrainOutcome<F>>
where
    E: Environment,
    F: Featurizer<E::State>,
{
    run(env, featurizer, LearnerKind::Cbf { nu }, config, experiment, seed, None)
}

pub fn train_respo_with_vh<E, F>(
    env: &E,
    featurizer: F,
    config: &TrainerConfig,
    experiment: u64,
    seed: u64,
) -> Result<TrainOutcome<F>>
where
    E: Environment,
    F: Featurizer<E::State>,
{
    run(env, featurizer, LearnerKind::RespoWithVh, config, experiment, seed, None)
}
