//! Environments: gridworlds, the double integrator, the drone tunnel, and a
//! discretizer for continuous state spaces.

pub mod discretize;
pub mod double_integrator;
pub mod drone;
pub mod gridworld;

pub use discretize::{discretize, StateGrid};
pub use double_integrator::{ActionLevels, ContinuousEnv, ContinuousStep, DoubleIntegrator, StartRegion};
pub use drone::{DroneFeatures, DroneTunnel, DroneTunnelSpec, Progress};
pub use gridworld::{build_gridworld, GridWorldSpec};
