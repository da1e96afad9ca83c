//! Finite MDPs, policies, trajectories and returns.

use crate::error::{Error, Result};
use crate::rng::{sample_categorical, StreamRng};

const ROW_TOL: f64 = 1e-9;

/// Tabular MDP with a per-state safety loss `h`.
///
/// Transitions are stored sparsely: one list of `(next_state, probability)`
/// per state-action pair, with zero entries dropped. Absorbing states end an
/// episode when entered; they must self-loop with zero reward and zero cost so
/// that the infinite-horizon values used by the oracles agree with truncated
/// sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    n_states: usize,
    n_actions: usize,
    transitions: Vec<Vec<(usize, f64)>>,
    reward: Vec<f64>,
    cost: Vec<f64>,
    discount: f64,
    initial: Vec<f64>,
    horizon: usize,
    absorbing: Vec<bool>,
}

/// Incremental constructor for [`FiniteMdp`]; validation happens in `build`.
#[derive(Debug, Clone)]
pub struct FiniteMdpBuilder {
    n_states: usize,
    n_actions: usize,
    transitions: Vec<Vec<(usize, f64)>>,
    reward: Vec<f64>,
    cost: Vec<f64>,
    discount: f64,
    initial: Vec<f64>,
    horizon: usize,
    absorbing: Vec<bool>,
}

impl FiniteMdpBuilder {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        let mut initial = vec![0.0; n_states];
        if n_states > 0 {
            initial[0] = 1.0;
        }
        Self {
            n_states,
            n_actions,
            transitions: vec![Vec::new(); n_states * n_actions],
            reward: vec![0.0; n_states * n_actions],
            cost: vec![0.0; n_states],
            discount: 0.99,
            initial,
            horizon: 100,
            absorbing: vec![false; n_states],
        }
    }

    /// Replace the successor distribution of `(s, a)`. Duplicate successors are merged.
    pub fn transition(&mut self, s: usize, a: usize, row: &[(usize, f64)]) -> &mut Self {
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
        for &(next, p) in row {
            if let Some(e) = merged.iter_mut().find(|e| e.0 == next) {
                e.1 += p;
            } else {
                merged.push((next, p));
            }
        }
        merged.sort_by_key(|e| e.0);
        self.transitions[s * self.n_actions + a] = merged;
        self
    }

    pub fn deterministic(&mut self, s: usize, a: usize, next: usize) -> &mut Self {
        self.transition(s, a, &[(next, 1.0)])
    }

    pub fn reward(&mut self, s: usize, a: usize, r: f64) -> &mut Self {
        self.reward[s * self.n_actions + a] = r;
        self
    }

    /// Same reward for every action in `s`.
    pub fn state_reward(&mut self, s: usize, r: f64) -> &mut Self {
        for a in 0..self.n_actions {
            self.reward[s * self.n_actions + a] = r;
        }
        self
    }

    pub fn cost(&mut self, s: usize, h: f64) -> &mut Self {
        self.cost[s] = h;
        self
    }

    pub fn discount(&mut self, gamma: f64) -> &mut Self {
        self.discount = gamma;
        self
    }

    pub fn horizon(&mut self, t: usize) -> &mut Self {
        self.horizon = t;
        self
    }

    pub fn initial(&mut self, d0: &[f64]) -> &mut Self {
        self.initial = d0.to_vec();
        self
    }

    /// Mark `s` absorbing and install its zero-reward self-loops.
    pub fn absorbing(&mut self, s: usize) -> &mut Self {
        self.absorbing[s] = true;
        for a in 0..self.n_actions {
            self.transitions[s * self.n_actions + a] = vec![(s, 1.0)];
            self.reward[s * self.n_actions + a] = 0.0;
        }
        self
    }

    pub fn build(&self) -> Result<FiniteMdp> {
        FiniteMdp::from_parts(
            self.n_states,
            self.n_actions,
            self.transitions.clone(),
            self.reward.clone(),
            self.cost.clone(),
            self.discount,
            self.initial.clone(),
            self.horizon,
            self.absorbing.clone(),
        )
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidModel(msg.into())
}

impl FiniteMdp {
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<Vec<(usize, f64)>>,
        reward: Vec<f64>,
        cost: Vec<f64>,
        discount: f64,
        initial: Vec<f64>,
        horizon: usize,
        absorbing: Vec<bool>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(invalid("need at least one state and one action"));
        }
        let sa = n_states * n_actions;
        if transitions.len() != sa || reward.len() != sa {
            return Err(invalid("transition/reward tables have the wrong size"));
        }
        if cost.len() != n_states || initial.len() != n_states || absorbing.len() != n_states {
            return Err(invalid("cost/initial/absorbing tables have the wrong size"));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(invalid(format!("discount {discount} outside (0,1)")));
        }
        if horizon == 0 {
            return Err(invalid("horizon must be at least 1"));
        }
        let mut transitions = transitions;
        for (idx, row) in transitions.iter_mut().enumerate() {
            let (s, a) = (idx / n_actions, idx % n_actions);
            let mut total = 0.0;
            for &(next, p) in row.iter() {
                if next >= n_states {
                    return Err(invalid(format!("P({s},{a}) has successor {next} out of range")));
                }
                if !(p.is_finite() && p >= 0.0) {
                    return Err(invalid(format!("P({s},{a},{next}) = {p} is not a probability")));
                }
                total += p;
            }
            if (total - 1.0).abs() > ROW_TOL {
                return Err(invalid(format!("P({s},{a},·) sums to {total}")));
            }
            row.retain(|e| e.1 > 0.0);
        }
        if let Some(i) = reward.iter().position(|r| !r.is_finite()) {
            return Err(invalid(format!("reward entry {i} is not finite")));
        }
        if let Some(s) = cost.iter().position(|h| !(h.is_finite() && *h >= 0.0)) {
            return Err(invalid(format!("cost of state {s} must be finite and non-negative")));
        }
        if initial.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(invalid("initial distribution has a negative or non-finite entry"));
        }
        let d0: f64 = initial.iter().sum();
        if (d0 - 1.0).abs() > ROW_TOL {
            return Err(invalid(format!("initial distribution sums to {d0}")));
        }
        for s in (0..n_states).filter(|&s| absorbing[s]) {
            if cost[s] != 0.0 {
                return Err(invalid(format!("absorbing state {s} must have zero cost")));
            }
            for a in 0..n_actions {
                let row = &transitions[s * n_actions + a];
                if row.len() != 1 || row[0].0 != s || reward[s * n_actions + a] != 0.0 {
                    return Err(invalid(format!(
                        "absorbing state {s} must self-loop with zero reward"
                    )));
                }
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            transitions,
            reward,
            cost,
            discount,
            initial,
            horizon,
            absorbing,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn successors(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.transitions[s * self.n_actions + a]
    }

    /// Dense probability `P(next | s, a)`.
    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.successors(s, a)
            .iter()
            .find(|e| e.0 == next)
            .map_or(0.0, |e| e.1)
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn cost(&self, s: usize) -> f64 {
        self.cost[s]
    }

    pub fn costs(&self) -> &[f64] {
        &self.cost
    }

    pub fn initial_distribution(&self) -> &[f64] {
        &self.initial
    }

    /// Support of the initial distribution.
    pub fn initial_states(&self) -> Vec<usize> {
        (0..self.n_states).filter(|&s| self.initial[s] > 0.0).collect()
    }

    pub fn is_absorbing(&self, s: usize) -> bool {
        self.absorbing[s]
    }

    pub fn is_deterministic(&self) -> bool {
        self.transitions.iter().all(|row| row.len() == 1)
    }

    pub fn violation(&self) -> ViolationIndicator {
        ViolationIndicator::from_costs(&self.cost)
    }

    pub fn h_max(&self) -> f64 {
        self.cost.iter().copied().fold(0.0, f64::max)
    }

    /// Smallest nonzero cost, or `None` when every state is safe.
    pub fn h_min(&self) -> Option<f64> {
        self.cost
            .iter()
            .copied()
            .filter(|&h| h > 0.0)
            .fold(None, |m, h| Some(m.map_or(h, |m: f64| m.min(h))))
    }

    /// Smallest nonzero difference between two distinct cost values (zero included).
    pub fn h_delta(&self) -> Option<f64> {
        let mut values = self.cost.clone();
        values.sort_by(f64::total_cmp);
        values.dedup();
        values.windows(2).map(|w| w[1] - w[0]).fold(None, |m, d| {
            Some(m.map_or(d, |m: f64| m.min(d)))
        })
    }

    pub fn r_max(&self) -> f64 {
        self.reward.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Copy with a different initial distribution.
    pub fn with_initial(&self, d0: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        if d0.len() != self.n_states {
            return Err(invalid("initial distribution has the wrong size"));
        }
        out.initial = d0.to_vec();
        let total: f64 = d0.iter().sum();
        if (total - 1.0).abs() > ROW_TOL || d0.iter().any(|p| *p < 0.0) {
            return Err(invalid(format!("initial distribution sums to {total}")));
        }
        Ok(out)
    }

    pub fn with_discount(&self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(invalid(format!("discount {gamma} outside (0,1)")));
        }
        let mut out = self.clone();
        out.discount = gamma;
        Ok(out)
    }

    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(invalid("horizon must be at least 1"));
        }
        let mut out = self.clone();
        out.horizon = horizon;
        Ok(out)
    }

    pub fn sample_initial(&self, rng: &mut StreamRng) -> usize {
        sample_categorical(&self.initial, rng)
    }

    pub fn sample_next(&self, s: usize, a: usize, rng: &mut StreamRng) -> usize {
        let row = self.successors(s, a);
        if row.len() == 1 {
            return row[0].0;
        }
        let u: f64 = rand::Rng::random(rng);
        let mut acc = 0.0;
        for &(next, p) in row {
            acc += p;
            if u < acc {
                return next;
            }
        }
        row[row.len() - 1].0
    }
}

/// `1_{s ∈ S_v}`: which states carry positive safety loss.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViolationIndicator(Vec<bool>);

impl ViolationIndicator {
    pub fn from_costs(cost: &[f64]) -> Self {
        Self(cost.iter().map(|&h| h > 0.0).collect())
    }

    pub fn is_violating(&self, s: usize) -> bool {
        self.0[s]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect()
    }
}

/// Stochastic tabular policy, rows indexed by state.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    n_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions || n_actions == 0 {
            return Err(Error::InvalidPolicy("table has the wrong size".into()));
        }
        for (s, row) in probs.chunks(n_actions).enumerate() {
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(Error::InvalidPolicy(format!("row {s} has an invalid entry")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > ROW_TOL {
                return Err(Error::InvalidPolicy(format!("row {s} sums to {total}")));
            }
        }
        Ok(Self { n_actions, probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::InvalidAction { state: s, action: a, n_actions });
            }
            probs[s * n_actions + a] = 1.0;
        }
        Ok(Self { n_actions, probs })
    }

    pub fn n_states(&self) -> usize {
        self.probs.len() / self.n_actions
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    /// Check that the policy covers the MDP's state and action spaces.
    pub fn check_against(&self, mdp: &FiniteMdp) -> Result<()> {
        if self.n_actions != mdp.n_actions() || self.n_states() != mdp.n_states() {
            return Err(Error::InvalidPolicy(format!(
                "policy is {}x{}, MDP is {}x{}",
                self.n_states(),
                self.n_actions,
                mdp.n_states(),
                mdp.n_actions()
            )));
        }
        Ok(())
    }

    /// Is the policy deterministic (one action with all the mass per state)?
    pub fn is_deterministic(&self) -> bool {
        self.probs
            .chunks(self.n_actions)
            .all(|row| row.iter().filter(|&&p| p > 0.0).count() == 1)
    }
}

/// Anything that picks actions for states of type `S`.
pub trait Policy<S: ?Sized> {
    fn act(&self, state: &S, rng: &mut StreamRng) -> usize;
}

impl Policy<usize> for TabularPolicy {
    fn act(&self, state: &usize, rng: &mut StreamRng) -> usize {
        sample_categorical(self.row(*state), rng)
    }
}

impl<S: ?Sized, F: Fn(&S, &mut StreamRng) -> usize> Policy<S> for F {
    fn act(&self, state: &S, rng: &mut StreamRng) -> usize {
        self(state, rng)
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome<S> {
    pub next_state: S,
    pub reward: f64,
    /// Episode ends in `next_state` (absorbing or environment-declared done).
    pub done: bool,
}

/// Episodic environment with a discrete action set and a safety loss on states.
pub trait Environment {
    type State: Clone + std::fmt::Debug;

    fn n_actions(&self) -> usize;
    fn discount(&self) -> f64;
    fn horizon(&self) -> usize;
    fn reset(&self, rng: &mut StreamRng) -> Self::State;
    /// Safety loss `h(s) ≥ 0`.
    fn cost(&self, state: &Self::State) -> f64;
    fn step(&self, state: &Self::State, action: usize, rng: &mut StreamRng) -> Result<Outcome<Self::State>>;
    /// Index into a finite state space, when there is one.
    fn state_index(&self, _state: &Self::State) -> Option<usize> {
        None
    }
    fn state_from_index(&self, _index: usize) -> Option<Self::State> {
        None
    }
}

impl Environment for FiniteMdp {
    type State = usize;

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn discount(&self) -> f64 {
        self.discount
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset(&self, rng: &mut StreamRng) -> usize {
        self.sample_initial(rng)
    }

    fn cost(&self, state: &usize) -> f64 {
        self.cost[*state]
    }

    fn state_index(&self, state: &usize) -> Option<usize> {
        Some(*state)
    }

    fn state_from_index(&self, index: usize) -> Option<usize> {
        (index < self.n_states).then_some(index)
    }

    fn step(&self, state: &usize, action: usize, rng: &mut StreamRng) -> Result<Outcome<usize>> {
        if action >= self.n_actions {
            return Err(Error::InvalidAction { state: *state, action, n_actions: self.n_actions });
        }
        let next = self.sample_next(*state, action, rng);
        Ok(Outcome {
            next_state: next,
            reward: self.reward(*state, action),
            done: self.absorbing[next],
        })
    }
}

/// One sampled transition; `cost` is `h(state)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Step<S> {
    pub state: S,
    pub action: usize,
    pub next_state: S,
    pub reward: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    pub steps: Vec<Step<S>>,
    /// True when the episode ended in an absorbing/done state rather than at the horizon.
    pub terminated: bool,
}

impl<S> Trajectory<S> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Undiscounted reward sum.
    pub fn episode_return(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    /// Undiscounted cost sum.
    pub fn episode_cost_return(&self) -> f64 {
        self.steps.iter().map(|s| s.cost).sum()
    }

    pub fn violation_count(&self) -> usize {
        self.steps.iter().filter(|s| s.cost > 0.0).count()
    }

    pub fn final_state(&self) -> Option<&S> {
        self.steps.last().map(|s| &s.next_state)
    }
}

/// Roll out `policy` for at most `horizon` steps.
pub fn sample_trajectory<E, P>(
    env: &E,
    policy: &P,
    horizon: usize,
    rng: &mut StreamRng,
) -> Result<Trajectory<E::State>>
where
    E: Environment,
    P: Policy<E::State> + ?Sized,
{
    if horizon == 0 {
        return Err(invalid("horizon must be at least 1"));
    }
    let start = env.reset(rng);
    sample_from(env, policy, start, horizon, rng)
}

/// Roll out from a given start state.
pub fn sample_from<E, P>(
    env: &E,
    policy: &P,
    start: E::State,
    horizon: usize,
    rng: &mut StreamRng,
) -> Result<Trajectory<E::State>>
where
    E: Environment,
    P: Policy<E::State> + ?Sized,
{
    let mut steps = Vec::with_capacity(horizon.min(4096));
    let mut state = start;
    let mut terminated = false;
    for t in 0..horizon {
        let action = policy.act(&state, rng);
        if action >= env.n_actions() {
            return Err(Error::InvalidAction {
                state: t,
                action,
                n_actions: env.n_actions(),
            });
        }
        let out = env.step(&state, action, rng)?;
        let cost = env.cost(&state);
        steps.push(Step {
            state: state.clone(),
            action,
            next_state: out.next_state.clone(),
            reward: out.reward,
            cost,
        });
        state = out.next_state;
        if out.done {
            terminated = true;
            break;
        }
    }
    Ok(Trajectory { steps, terminated })
}

pub fn discounted_reward_return<S>(trajectory: &Trajectory<S>, gamma: f64) -> f64 {
    discounted_sum(trajectory.steps.iter().map(|s| s.reward), gamma)
}

pub fn discounted_cost_return<S>(trajectory: &Trajectory<S>, gamma: f64) -> f64 {
    discounted_sum(trajectory.steps.iter().map(|s| s.cost), gamma)
}

fn discounted_sum(values: impl Iterator<Item = f64>, gamma: f64) -> f64 {
    let mut total = 0.0;
    let mut weight = 1.0;
    for v in values {
        total += weight * v;
        weight *= gamma;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn chain() -> FiniteMdp {
        let mut b = FiniteMdpBuilder::new(2, 1);
        b.deterministic(0, 0, 1).deterministic(1, 0, 0).state_reward(0, 1.0).horizon(3);
        b.build().unwrap()
    }

    fn traj(rewards: &[f64], costs: &[f64]) -> Trajectory<usize> {
        Trajectory {
            steps: rewards
                .iter()
                .zip(costs)
                .map(|(&r, &c)| Step { state: 0, action: 0, next_state: 0, reward: r, cost: c })
                .collect(),
            terminated: false,
        }
    }

    #[test]
    fn deterministic_chain_has_one_trajectory() {
        let mdp = chain();
        let pi = TabularPolicy::uniform(2, 1);
        let t = sample_trajectory(&mdp, &pi, 3, &mut stream(0, 0, 0)).unwrap();
        let states: Vec<_> = t.steps.iter().map(|s| (s.state, s.next_state)).collect();
        assert_eq!(states, vec![(0, 1), (1, 0), (0, 1)]);
        assert!(!t.terminated);
    }

    #[test]
    fn absorbing_state_ends_episode() {
        let mut b = FiniteMdpBuilder::new(2, 1);
        b.deterministic(0, 0, 1).absorbing(1);
        let mdp = b.build().unwrap();
        let t = sample_trajectory(&mdp, &TabularPolicy::uniform(2, 1), 50, &mut stream(0, 0, 0))
            .unwrap();
        assert_eq!(t.len(), 1);
        assert!(t.terminated);
    }

    #[test]
    fn invalid_action_is_rejected() {
        let mdp = chain();
        let bad = |_: &usize, _: &mut StreamRng| 3usize;
        let err = sample_trajectory(&mdp, &bad, 3, &mut stream(0, 0, 0)).unwrap_err();
        assert!(matches!(err, Error::InvalidAction { action: 3, .. }));
    }

    #[test]
    fn returns() {
        assert_eq!(discounted_reward_return(&traj(&[1.0; 3], &[0.0; 3]), 0.5), 1.75);
        assert_eq!(discounted_reward_return(&traj(&[0.0; 3], &[0.0; 3]), 0.5), 0.0);
        assert_eq!(discounted_cost_return(&traj(&[0.0; 3], &[0.0; 3]), 0.9), 0.0);
        let c = discounted_cost_return(&traj(&[0.0; 3], &[1.0, 0.0, 1.0]), 0.9);
        assert!((c - 1.81).abs() < 1e-15);
        assert_eq!(discounted_reward_return(&traj(&[], &[]), 0.9), 0.0);
    }

    #[test]
    fn validation_rejects_bad_rows() {
        let mut b = FiniteMdpBuilder::new(2, 1);
        b.transition(0, 0, &[(0, 0.5), (1, 0.4)]).deterministic(1, 0, 1);
        assert!(matches!(b.build(), Err(Error::InvalidModel(_))));
        let mut b = FiniteMdpBuilder::new(1, 1);
        b.deterministic(0, 0, 0).cost(0, -1.0);
        assert!(b.build().is_err());
        let mut b = FiniteMdpBuilder::new(1, 1);
        b.deterministic(0, 0, 0).discount(1.0);
        assert!(b.build().is_err());
    }

    #[test]
    fn derived_cost_constants() {
        let mut b = FiniteMdpBuilder::new(4, 1);
        for s in 0..4 {
            b.deterministic(s, 0, s);
        }
        b.cost(1, 0.5).cost(2, 1.0).cost(3, 1.0).reward(0, 0, -2.0);
        let mdp = b.build().unwrap();
        assert_eq!(mdp.h_max(), 1.0);
        assert_eq!(mdp.h_min(), Some(0.5));
        assert_eq!(mdp.h_delta(), Some(0.5));
        assert_eq!(mdp.r_max(), 2.0);
        assert_eq!(mdp.violation().as_slice(), &[false, true, true, true]);
    }
}
