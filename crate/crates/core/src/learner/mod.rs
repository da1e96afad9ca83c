//! Four-timescale actor-critic learners.
//!
//! One agent type covers the reachability-estimation learner and the
//! baselines; they differ only in the constraint critic's target, whether a
//! REF gates the objective, and the shape of the multiplier.

mod multi;
mod train;

pub use multi::{
    train_multiconstraint, MultiConstraintState, MultiCostEnvironment, MultiEpisode, MultiKind, MultiOutcome,
    MultiTrainerConfig, MultiWeights,
};
pub use train::{evaluate, train, train_agent, EvalSummary, MetricRow, OracleView, TrainOutcome};

use crate::error::{Error, Result};
use crate::features::{Featurizer, LinearHead};
use crate::mdp::TabularPolicy;
use crate::schedule::ScheduleSet;

/// Logits are projected into `[-THETA_BOX, THETA_BOX]`.
pub const THETA_BOX: f64 = 20.0;
/// Lower end of the multiplier parameter box.
pub const OMEGA_MIN: f64 = -20.0;
/// Any parameter beyond this magnitude aborts training.
pub const DIVERGENCE_LIMIT: f64 = 1e8;

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Inverse of softplus on `(0, ∞)`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Which learner to run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearnerKind {
    /// Reachability-estimation-gated Lagrangian on the discounted cost.
    Respo,
    /// Reward only.
    Unconstrained,
    /// CMDP Lagrangian with budget `chi` on the discounted cost.
    ScalarLagrangian { chi: f64 },
    /// Per-state multiplier, zero budget.
    Fac,
    /// Per-state multiplier on the max-Bellman reachability critic.
    Rcrl,
    /// Scalar multiplier on the barrier-condition violation `max(0, Δh/dt + ν h)`.
    Cbf { nu: f64 },
    /// REF-gated objective with the reachability critic in place of the cost critic.
    RespoWithVh,
}

/// Target used by the constraint critic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstraintSignal {
    DiscountedCost,
    Reachability,
    Cbf { nu: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MultiplierShape {
    None,
    Scalar,
    PerState,
}

impl LearnerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LearnerKind::Respo => "respo",
            LearnerKind::Unconstrained => "unconstrained",
            LearnerKind::ScalarLagrangian { .. } => "scalar_lagrangian",
            LearnerKind::Fac => "fac",
            LearnerKind::Rcrl => "rcrl",
            LearnerKind::Cbf { .. } => "cbf",
            LearnerKind::RespoWithVh => "respo_vh",
        }
    }

    pub fn uses_ref(&self) -> bool {
        matches!(self, LearnerKind::Respo | LearnerKind::RespoWithVh)
    }

    pub fn signal(&self) -> ConstraintSignal {
        match *self {
            LearnerKind::Rcrl | LearnerKind::RespoWithVh => ConstraintSignal::Reachability,
            LearnerKind::Cbf { nu } => ConstraintSignal::Cbf { nu },
            _ => ConstraintSignal::DiscountedCost,
        }
    }

    pub fn multiplier(&self) -> MultiplierShape {
        match self {
            LearnerKind::Unconstrained => MultiplierShape::None,
            LearnerKind::Fac | LearnerKind::Rcrl => MultiplierShape::PerState,
            _ => MultiplierShape::Scalar,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LearnerKind::ScalarLagrangian { chi } if !(chi >= 0.0) => Err(Error::Config {
                key: "learner.chi".into(),
                message: format!("budget must be non-negative, got {chi}"),
            }),
            LearnerKind::Cbf { nu } if !(nu > 0.0 && nu.is_finite()) => Err(Error::Config {
                key: "learner.nu".into(),
                message: format!("barrier rate must be positive, got {nu}"),
            }),
            _ => Ok(()),
        }
    }
}

/// Inputs of the multiplier-cap bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    pub r_max: f64,
    pub gamma: f64,
    pub horizon: usize,
    pub h_delta: f64,
    pub p_min: f64,
}

/// `R_max / ((1−γ) γ^T H_Δ P_min)`, evaluated in log space so `γ^T` cannot underflow.
pub fn lambda_max_bound(r_max: f64, gamma: f64, horizon: usize, h_delta: f64, p_min: f64) -> Result<f64> {
    if !(r_max > 0.0 && h_delta > 0.0 && p_min > 0.0) || !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidModel(
            "bound needs positive R_max, H_Δ, P_min and γ in (0,1)".into(),
        ));
    }
    let log = r_max.ln() - (1.0 - gamma).ln() - horizon as f64 * gamma.ln() - h_delta.ln() - p_min.ln();
    Ok(log.exp())
}

/// Warning text when the configured cap is below the bound.
pub fn lambda_max_warning(lambda_max: f64, inputs: &BoundInputs) -> Option<String> {
    let bound = lambda_max_bound(inputs.r_max, inputs.gamma, inputs.horizon, inputs.h_delta, inputs.p_min).ok()?;
    (lambda_max < bound).then(|| {
        format!("lambda_max {lambda_max} is below the cost-priority bound {bound:.6}; reward may outweigh cost reduction")
    })
}

/// Hyperparameters shared by all single-cost learners.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub kind: LearnerKind,
    pub schedule: ScheduleSet,
    /// Outer iterations `k`.
    pub iterations: u64,
    /// Trajectories sampled per iteration.
    pub episodes_per_iteration: usize,
    pub lambda_max: f64,
    /// Initial multiplier parameter; `λ = softplus(ω)`.
    pub omega_init: f64,
    pub p_init: f64,
    /// REF discount; `None` uses the environment discount.
    pub ref_discount: Option<f64>,
    /// Reachability-critic discount; `None` uses the environment discount.
    pub reach_discount: Option<f64>,
    /// Time step for the barrier-condition derivative.
    pub cbf_dt: f64,
    /// Stop after the iteration in which this many environment steps have been taken.
    pub max_steps: Option<u64>,
    pub eval_every: u64,
    pub eval_episodes: usize,
    /// Inputs for the λ_max sanity warning, when known.
    pub bound: Option<BoundInputs>,
    /// Fill the wall-clock column (breaks byte-identical reruns).
    pub record_wall_clock: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            kind: LearnerKind::Respo,
            schedule: ScheduleSet::default(),
            iterations: 1000,
            episodes_per_iteration: 1,
            lambda_max: 1000.0,
            omega_init: 0.0,
            p_init: 0.5,
            ref_discount: None,
            reach_discount: None,
            cbf_dt: 1.0,
            max_steps: None,
            eval_every: 100,
            eval_episodes: 20,
            bound: None,
            record_wall_clock: false,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        self.kind.validate()?;
        self.schedule.validate()?;
        let bad = |key: &str, message: String| Err(Error::Config { key: key.into(), message });
        if self.iterations == 0 {
            return bad("run.iterations", "iteration budget must be at least 1".into());
        }
        if self.episodes_per_iteration == 0 {
            return bad("run.episodes_per_iteration", "must be at least 1".into());
        }
        if !(self.lambda_max > 0.0 && self.lambda_max.is_finite()) {
            return bad("learner.lambda_max", format!("must be positive, got {}", self.lambda_max));
        }
        if !(0.0..=1.0).contains(&self.p_init) {
            return bad("learner.p_init", format!("must lie in [0,1], got {}", self.p_init));
        }
        for (key, v) in [("learner.ref_discount", self.ref_discount), ("learner.reach_discount", self.reach_discount)] {
            if let Some(g) = v {
                if !(g > 0.0 && g <= 1.0) {
                    return bad(key, format!("must lie in (0,1], got {g}"));
                }
            }
        }
        if !(self.cbf_dt > 0.0) {
            return bad("learner.cbf_dt", "must be positive".into());
        }
        Ok(())
    }

    pub fn omega_max(&self) -> f64 {
        softplus_inv(self.lambda_max)
    }
}

/// All trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    /// Policy logits (θ), one output per action.
    pub theta: LinearHead,
    /// Reward critic (η).
    pub eta: LinearHead,
    /// Constraint critic (κ): discounted cost, reachability, or barrier signal.
    pub kappa: LinearHead,
    /// REF (ξ), outputs clipped to `[0, 1]`.
    pub xi: LinearHead,
    /// Scalar multiplier parameter (ω).
    pub omega: f64,
    /// Per-state multiplier parameters.
    pub omega_state: LinearHead,
    pub k: u64,
}

impl LearnerState {
    pub fn new(n_features: usize, n_actions: usize, config: &TrainerConfig) -> Self {
        let per_state = config.kind.multiplier() == MultiplierShape::PerState;
        Self {
            theta: LinearHead::new(n_features, n_actions, 0.0),
            eta: LinearHead::new(n_features, n_actions, 0.0),
            kappa: LinearHead::new(n_features, n_actions, 0.0),
            xi: LinearHead::new(if config.kind.uses_ref() { n_features } else { 0 }, 1, config.p_init),
            omega: config.omega_init.clamp(OMEGA_MIN, config.omega_max()),
            omega_state: LinearHead::new(if per_state { n_features } else { 0 }, 1, config.omega_init),
            k: 0,
        }
    }

    pub fn max_abs(&self) -> f64 {
        [&self.theta, &self.eta, &self.kappa, &self.xi, &self.omega_state]
            .iter()
            .map(|h| h.max_abs())
            .fold(self.omega.abs(), f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.omega.is_finite()
            && [&self.theta, &self.eta, &self.kappa, &self.xi, &self.omega_state]
                .iter()
                .all(|h| h.is_finite())
    }
}

/// Softmax in place.
pub fn softmax(logits: &mut [f64]) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in logits.iter_mut() {
        *x = (*x - m).exp();
        z += *x;
    }
    logits.iter_mut().for_each(|x| *x /= z);
}

/// Tabular read-outs for learners on finite state spaces.
impl<F: Featurizer<usize>> Agent<F> {
    pub fn greedy_policy(&self, n_states: usize) -> Result<TabularPolicy> {
        let mut active = Vec::new();
        let actions: Vec<usize> = (0..n_states)
            .map(|s| {
                self.featurizer.active(&s, &mut active);
                self.greedy(&active)
            })
            .collect();
        TabularPolicy::deterministic(self.n_actions, &actions)
    }

    pub fn ref_table(&self, n_states: usize) -> Vec<f64> {
        let mut active = Vec::new();
        (0..n_states)
            .map(|s| {
                self.featurizer.active(&s, &mut active);
                self.p(&active)
            })
            .collect()
    }
}

/// A learner bound to a feature map; all update rules live here.
#[derive(Debug, Clone)]
pub struct Agent<F> {
    pub featurizer: F,
    pub config: TrainerConfig,
    pub state: LearnerState,
    pub n_actions: usize,
    pub discount: f64,
}

impl<F> Agent<F> {
    pub fn new<S: ?Sized>(featurizer: F, n_actions: usize, discount: f64, config: TrainerConfig) -> Self
    where
        F: Featurizer<S>,
    {
        let state = LearnerState::new(featurizer.n_features(), n_actions, &config);
        Self { featurizer, config, state, n_actions, discount }
    }

    pub fn ref_discount(&self) -> f64 {
        self.config.ref_discount.unwrap_or(self.discount)
    }

    pub fn reach_discount(&self) -> f64 {
        self.config.reach_discount.unwrap_or(self.discount)
    }

    pub fn features<S: ?Sized>(&self, s: &S, out: &mut Vec<usize>)
    where
        F: Featurizer<S>,
    {
        self.featurizer.active(s, out);
    }

    pub fn policy(&self, active: &[usize], out: &mut Vec<f64>) {
        self.state.theta.values(active, out);
        softmax(out);
    }

    pub fn greedy(&self, active: &[usize]) -> usize {
        let mut logits = Vec::with_capacity(self.n_actions);
        self.state.theta.values(active, &mut logits);
        let mut best = 0;
        for a in 1..logits.len() {
            if logits[a] > logits[best] {
                best = a;
            }
        }
        best
    }

    pub fn q(&self, active: &[usize], a: usize) -> f64 {
        self.state.eta.value(active, a)
    }

    pub fn q_c(&self, active: &[usize], a: usize) -> f64 {
        self.state.kappa.value(active, a)
    }

    /// REF estimate; 0 for learners without one.
    pub fn p(&self, active: &[usize]) -> f64 {
        if self.config.kind.uses_ref() {
            self.state.xi.value(active, 0).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }

    pub fn lambda(&self) -> f64 {
        softplus(self.state.omega).min(self.config.lambda_max)
    }

    pub fn lambda_at(&self, active: &[usize]) -> f64 {
        match self.config.kind.multiplier() {
            MultiplierShape::None => 0.0,
            MultiplierShape::Scalar => self.lambda(),
            MultiplierShape::PerState => {
                let w = self.state.omega_state.value(active, 0).clamp(OMEGA_MIN, self.config.omega_max());
                softplus(w).min(self.config.lambda_max)
            }
        }
    }

    /// Coefficient `W` of the per-step policy step `θ ← θ − ζ2 γ^t W ∇log π(a|s)`.
    pub fn policy_weight(&self, active: &[usize], a: usize) -> f64 {
        let q = self.q(active, a);
        let k = self.q_c(active, a);
        match self.config.kind {
            LearnerKind::Respo | LearnerKind::RespoWithVh => {
                let p = self.p(active);
                let lambda = self.lambda();
                -q * (1.0 - p) + k * (lambda * (1.0 - p) + p)
            }
            LearnerKind::Unconstrained => -q,
            LearnerKind::ScalarLagrangian { .. } | LearnerKind::Cbf { .. } => -q + self.lambda() * k,
            LearnerKind::Fac | LearnerKind::Rcrl => -q + self.lambda_at(active) * k,
        }
    }

    /// One TD step for both critics. `next` is `None` when the episode ended in
    /// an absorbing state; otherwise it carries the successor's features and action.
    pub fn critic_update(
        &mut self,
        active: &[usize],
        a: usize,
        reward: f64,
        cost: f64,
        next_cost: f64,
        next: Option<(&[usize], usize)>,
        zeta1: f64,
    ) -> Result<()> {
        let gamma = self.discount;
        let (q_next, k_next) = match next {
            Some((na, nb)) => (self.q(na, nb), self.q_c(na, nb)),
            None => (0.0, 0.0),
        };
        let target = reward + gamma * q_next;
        let c_target = match self.config.kind.signal() {
            ConstraintSignal::DiscountedCost => cost + gamma * k_next,
            ConstraintSignal::Reachability => cost.max(self.reach_discount() * k_next),
            ConstraintSignal::Cbf { nu } => {
                let violation = ((next_cost - cost) / self.config.cbf_dt + nu * cost).max(0.0);
                violation + gamma * k_next
            }
        };
        if !target.is_finite() || !c_target.is_finite() {
            return Err(Error::NonFinite(format!("critic target (reward {target}, constraint {c_target})")));
        }
        let err = target - self.q(active, a);
        self.state.eta.shift(active, a, zeta1 * err);
        let c_err = c_target - self.q_c(active, a);
        self.state.kappa.shift(active, a, zeta1 * c_err);
        Ok(())
    }

    /// `θ ← Γ_Θ(θ − ζ2 γ^t W ∇_θ log π(a|s))`.
    pub fn policy_update(&mut self, active: &[usize], a: usize, discount_t: f64, zeta2: f64) {
        let w = self.policy_weight(active, a);
        let mut pi = Vec::with_capacity(self.n_actions);
        self.policy(active, &mut pi);
        let scale = zeta2 * discount_t * w / active.len() as f64;
        for &f in active {
            for (b, &pb) in pi.iter().enumerate() {
                let grad = if b == a { 1.0 - pb } else { -pb };
                let th = &mut self.state.theta.weights[f * self.n_actions + b];
                *th = (*th - scale * grad).clamp(-THETA_BOX, THETA_BOX);
            }
        }
    }

    /// Gradient of `log π(a|s)` with respect to each logit parameter touched by `s`,
    /// as `(parameter index, value)` pairs.
    pub fn grad_log_pi(&self, active: &[usize], a: usize) -> Vec<(usize, f64)> {
        let mut pi = Vec::with_capacity(self.n_actions);
        self.policy(active, &mut pi);
        let n = active.len() as f64;
        let mut out = Vec::with_capacity(active.len() * self.n_actions);
        for &f in active {
            for (b, &pb) in pi.iter().enumerate() {
                let g = if b == a { 1.0 - pb } else { -pb };
                out.push((f * self.n_actions + b, g / n));
            }
        }
        out
    }

    /// `p(s) ← p(s) − ζ3 (p(s) − max{1_{h(s)>0}, γp p(s')})`; `next` is `None` on
    /// absorbing termination.
    pub fn ref_update(&mut self, active: &[usize], cost: f64, next: Option<&[usize]>, zeta3: f64) {
        if !self.config.kind.uses_ref() {
            return;
        }
        let indicator: f64 = if cost > 0.0 { 1.0 } else { 0.0 };
        let boot = next.map_or(0.0, |n| self.ref_discount() * self.p(n));
        let target = indicator.max(boot);
        let err = target - self.p(active);
        self.state.xi.shift(active, 0, zeta3 * err);
        self.state.xi.clamp(active, 0, 0.0, 1.0);
    }

    /// Multiplier ascent step for the sampled pair.
    pub fn lagrange_update(&mut self, active: &[usize], a: usize, zeta4: f64) {
        let k = self.q_c(active, a);
        let omega_max = self.config.omega_max();
        match self.config.kind {
            LearnerKind::Unconstrained => {}
            LearnerKind::Respo | LearnerKind::RespoWithVh => {
                let drive = k * (1.0 - self.p(active));
                let w = self.state.omega;
                self.state.omega = (w + zeta4 * drive * sigmoid(w)).clamp(OMEGA_MIN, omega_max);
            }
            LearnerKind::ScalarLagrangian { chi } => {
                let drive = k - chi;
                let w = self.state.omega;
                self.state.omega = (w + zeta4 * drive * sigmoid(w)).clamp(OMEGA_MIN, omega_max);
            }
            LearnerKind::Cbf { .. } => {
                let w = self.state.omega;
                self.state.omega = (w + zeta4 * k * sigmoid(w)).clamp(OMEGA_MIN, omega_max);
            }
            LearnerKind::Fac | LearnerKind::Rcrl => {
                let w = self.state.omega_state.value(active, 0);
                self.state.omega_state.shift(active, 0, zeta4 * k * sigmoid(w));
                self.state.omega_state.clamp(active, 0, OMEGA_MIN, omega_max);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::OneHot;

    fn agent(kind: LearnerKind) -> Agent<OneHot> {
        let config = TrainerConfig { kind, ..TrainerConfig::default() };
        Agent::new::<usize>(OneHot { n_states: 3 }, 2, 0.9, config)
    }

    #[test]
    fn tabular_critic_step() {
        let mut ag = agent(LearnerKind::Respo);
        ag.critic_update(&[0], 1, 1.0, 0.0, 0.0, Some((&[1], 0)), 0.5).unwrap();
        assert_eq!(ag.q(&[0], 1), 0.5);
        // Already at the target: no change.
        ag.state.eta.weights = vec![0.0; 6];
        ag.state.eta.shift(&[0], 0, 1.0);
        ag.critic_update(&[0], 0, 1.0, 0.0, 0.0, Some((&[2], 0)), 0.5).unwrap();
        assert_eq!(ag.q(&[0], 0), 1.0);
    }

    #[test]
    fn respo_weight_limits() {
        let mut ag = agent(LearnerKind::Respo);
        ag.state.eta.shift(&[0], 0, 3.0);
        ag.state.kappa.shift(&[0], 0, 2.0);
        ag.state.xi.weights[0] = 1.0;
        assert_eq!(ag.policy_weight(&[0], 0), 2.0);
        ag.state.xi.weights[0] = 0.0;
        ag.state.omega = OMEGA_MIN;
        assert!((ag.policy_weight(&[0], 0) + 3.0).abs() < 1e-7);
    }

    #[test]
    fn multiplier_inactive_without_drive() {
        let mut ag = agent(LearnerKind::Respo);
        let w0 = ag.state.omega;
        ag.lagrange_update(&[0], 0, 1.0);
        assert_eq!(ag.state.omega, w0);
        ag.state.kappa.shift(&[0], 0, 5.0);
        ag.state.xi.weights[0] = 1.0;
        ag.lagrange_update(&[0], 0, 1.0);
        assert_eq!(ag.state.omega, w0);
        ag.state.xi.weights[0] = 0.0;
        for _ in 0..100_000 {
            ag.lagrange_update(&[0], 0, 1.0);
        }
        assert!((ag.lambda() - ag.config.lambda_max).abs() < 1e-9);
    }

    #[test]
    fn ref_targets() {
        let mut ag = agent(LearnerKind::Respo);
        ag.ref_update(&[0], 2.0, Some(&[1]), 1.0);
        assert_eq!(ag.p(&[0]), 1.0);
        ag.ref_update(&[1], 0.0, None, 1.0);
        assert_eq!(ag.p(&[1]), 0.0);
    }

    #[test]
    fn bound_values() {
        let b = lambda_max_bound(1.0, 0.99, 100, 1.0, 1.0).unwrap();
        let direct = 1.0 / (0.01 * 0.99f64.powi(100));
        assert!((b - direct).abs() / direct < 1e-12);
        let b2 = lambda_max_bound(2.0, 0.99, 100, 1.0, 1.0).unwrap();
        assert!((b2 - 2.0 * b).abs() < 1e-9);
        assert!(lambda_max_bound(1.0, 0.99, 100, 1e300, 1.0).unwrap() < 1e-290);
        assert!(lambda_max_bound(1.0, 0.5, 5000, 1.0, 1.0).unwrap().is_infinite());
    }
}
