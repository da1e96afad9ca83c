//! Reachability-estimation-guided safe actor-critic learning on finite and
//! discretized environments, with exact dynamic-programming oracles.

pub mod baselines;
pub mod env;
pub mod error;
pub mod features;
pub mod harness;
pub mod learner;
pub mod mdp;
pub mod mdp_format;
pub mod oracle;
pub mod rng;
pub mod schedule;

pub use error::{Error, Result};
pub use features::{Featurizer, LinearHead, OneHot, TileCoder};
pub use learner::{
    lambda_max_bound, train, train_agent, train_multiconstraint, Agent, LearnerKind, LearnerState, MetricRow, MultiConstraintState,
    OracleView, TrainOutcome, TrainerConfig,
};
pub use mdp::{Environment, FiniteMdp, FiniteMdpBuilder, Step, TabularPolicy, Trajectory, ViolationIndicator};
pub use oracle::OracleSolution;
pub use schedule::ScheduleSet;
