//! Continuous environments and the double integrator.

use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::{Environment, Outcome};
use crate::rng::{standard_normal, StreamRng};

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousStep {
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// Safety loss at `next_state`.
    pub cost: f64,
    pub done: bool,
}

/// Environment with a real-valued state and action.
pub trait ContinuousEnv {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn action_bounds(&self) -> Vec<(f64, f64)>;
    fn discount(&self) -> f64;
    fn horizon(&self) -> usize;
    fn reset(&self, rng: &mut StreamRng) -> Vec<f64>;
    fn cost(&self, state: &[f64]) -> f64;
    /// Actions outside the bounds are clipped.
    fn step(&self, state: &[f64], action: &[f64], rng: &mut StreamRng) -> Result<ContinuousStep>;
}

/// Where episodes start.
#[derive(Debug, Clone, PartialEq)]
pub enum StartRegion {
    Point(Vec<f64>),
    /// Uniform over an axis-aligned box `(low, high)` per dimension.
    Box(Vec<(f64, f64)>),
}

impl StartRegion {
    pub fn sample(&self, rng: &mut StreamRng) -> Vec<f64> {
        match self {
            StartRegion::Point(p) => p.clone(),
            StartRegion::Box(b) => b.iter().map(|&(l, h)| if h > l { rng.random_range(l..h) } else { l }).collect(),
        }
    }
}

/// `ẋ1 = x2`, `ẋ2 = a`, with `|a| ≤ a_max` and the constraint `‖s‖∞ ≤ bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct DoubleIntegrator {
    pub dt: f64,
    pub a_max: f64,
    pub bound: f64,
    /// Reward is `−reward_scale · (x1² + x2²)`.
    pub reward_scale: f64,
    /// Standard deviation of Gaussian noise added to the velocity update.
    pub noise: f64,
    pub discount: f64,
    pub horizon: usize,
    pub start: StartRegion,
}

impl Default for DoubleIntegrator {
    fn default() -> Self {
        Self {
            dt: 0.1,
            a_max: 0.5,
            bound: 5.0,
            reward_scale: 0.01,
            noise: 0.0,
            discount: 0.99,
            horizon: 200,
            start: StartRegion::Point(vec![3.5, 1.75]),
        }
    }
}

impl DoubleIntegrator {
    /// One semi-implicit Euler step: `x2' = x2 + a dt`, `x1' = x1 + x2' dt`.
    pub fn integrate(&self, state: &[f64], a: f64, dv_noise: f64) -> Result<[f64; 2]> {
        if state.len() != 2 || state.iter().any(|x| !x.is_finite()) || !a.is_finite() {
            return Err(Error::NonFinite(format!("double integrator state {state:?}, action {a}")));
        }
        let a = a.clamp(-self.a_max, self.a_max);
        let x2 = state[1] + a * self.dt + dv_noise;
        let x1 = state[0] + x2 * self.dt;
        Ok([x1, x2])
    }

    pub fn reward(&self, state: &[f64]) -> f64 {
        -self.reward_scale * (state[0] * state[0] + state[1] * state[1])
    }
}

impl ContinuousEnv for DoubleIntegrator {
    fn state_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn action_bounds(&self) -> Vec<(f64, f64)> {
        vec![(-self.a_max, self.a_max)]
    }

    fn discount(&self) -> f64 {
        self.discount
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset(&self, rng: &mut StreamRng) -> Vec<f64> {
        self.start.sample(rng)
    }

    fn cost(&self, state: &[f64]) -> f64 {
        if state.iter().any(|x| x.abs() > self.bound) {
            1.0
        } else {
            0.0
        }
    }

    fn step(&self, state: &[f64], action: &[f64], rng: &mut StreamRng) -> Result<ContinuousStep> {
        let a = *action.first().ok_or_else(|| Error::InvalidModel("missing action".into()))?;
        let dv = if self.noise > 0.0 { self.noise * self.dt.sqrt() * standard_normal(rng) } else { 0.0 };
        let next = self.integrate(state, a, dv)?;
        Ok(ContinuousStep {
            reward: self.reward(state),
            cost: self.cost(&next),
            next_state: next.to_vec(),
            done: false,
        })
    }
}

/// Restricts a continuous environment to a finite set of action vectors.
#[derive(Debug, Clone)]
pub struct ActionLevels<E> {
    pub env: E,
    pub levels: Vec<Vec<f64>>,
}

impl<E: ContinuousEnv> ActionLevels<E> {
    pub fn new(env: E, levels: Vec<Vec<f64>>) -> Result<Self> {
        if levels.is_empty() || levels.iter().any(|l| l.len() != env.action_dim()) {
            return Err(Error::InvalidModel("action levels must match the action dimension".into()));
        }
        Ok(Self { env, levels })
    }

    /// Evenly spaced levels for a one-dimensional action.
    pub fn uniform_1d(env: E, n: usize) -> Result<Self> {
        let (lo, hi) = env.action_bounds()[0];
        let levels = (0..n)
            .map(|i| if n == 1 { vec![0.5 * (lo + hi)] } else { vec![lo + (hi - lo) * i as f64 / (n - 1) as f64] })
            .collect();
        Self::new(env, levels)
    }
}

impl<E: ContinuousEnv> Environment for ActionLevels<E> {
    type State = Vec<f64>;

    fn n_actions(&self) -> usize {
        self.levels.len()
    }

    fn discount(&self) -> f64 {
        self.env.discount()
    }

    fn horizon(&self) -> usize {
        self.env.horizon()
    }

    fn reset(&self, rng: &mut StreamRng) -> Vec<f64> {
        self.env.reset(rng)
    }

    fn cost(&self, state: &Vec<f64>) -> f64 {
        self.env.cost(state)
    }

    fn step(&self, state: &Vec<f64>, action: usize, rng: &mut StreamRng) -> Result<Outcome<Vec<f64>>> {
        let level = self.levels.get(action).ok_or(Error::InvalidAction {
            state: 0,
            action,
            n_actions: self.levels.len(),
        })?;
        let out = self.env.step(state, level, rng)?;
        Ok(Outcome { next_state: out.next_state, reward: out.reward, done: out.done })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn origin_is_fixed() {
        let di = DoubleIntegrator::default();
        let mut rng = stream(0, 0, 0);
        let out = di.step(&[0.0, 0.0], &[0.0], &mut rng).unwrap();
        assert_eq!(out.next_state, vec![0.0, 0.0]);
        assert_eq!(out.cost, 0.0);
    }

    #[test]
    fn semi_implicit_euler() {
        let di = DoubleIntegrator::default();
        let s = di.integrate(&[0.0, 1.0], 0.5, 0.0).unwrap();
        assert!((s[1] - 1.05).abs() < 1e-12);
        assert!((s[0] - 0.105).abs() < 1e-12);
        let clipped = di.integrate(&[0.0, 1.0], 3.0, 0.0).unwrap();
        assert_eq!(clipped, s);
    }

    #[test]
    fn outside_box_costs() {
        let di = DoubleIntegrator::default();
        assert_eq!(di.cost(&[5.1, 0.0]), 1.0);
        assert_eq!(di.cost(&[5.0, -5.0]), 0.0);
        let mut rng = stream(0, 0, 0);
        assert_eq!(di.step(&[5.1, 0.0], &[0.01], &mut rng).unwrap().cost, 1.0);
        assert!(di.integrate(&[f64::NAN, 0.0], 0.0, 0.0).is_err());
    }

    #[test]
    fn levels_span_bounds() {
        let env = ActionLevels::uniform_1d(DoubleIntegrator::default(), 5).unwrap();
        let flat: Vec<f64> = env.levels.iter().map(|l| l[0]).collect();
        assert_eq!(flat, vec![-0.5, -0.25, 0.0, 0.25, 0.5]);
    }
}
