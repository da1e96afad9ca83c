//! Two hard constraints and one soft constraint.
//!
//! Each hard constraint gets its own REF. The wall constraint's gate is
//! outermost so it takes priority over everything else:
//!
//! ```text
//! L = [ [−V + λsc(Vsc − χ) + λ2 V2](1 − p2) + V2 p2 + λ1 V1 ](1 − p1) + V1 p1
//! ```
//!
//! The baseline drops the gates: `L = −V + λsc(Vsc − χ) + λ2 V2 + λ1 V1`.
//!
//! The policy may factor the joint action into independent parts (one per
//! agent), each with its own softmax; critics stay on the joint action.

use std::time::Instant;

use super::train::{mean_std, EVAL_STREAM_BASE};
use super::{sigmoid, softmax, softplus, MetricRow, TrainerConfig, DIVERGENCE_LIMIT, OMEGA_MIN, THETA_BOX};
use crate::error::{Error, Result};
use crate::features::{Featurizer, LinearHead};
use crate::mdp::{sample_from, Environment};
use crate::rng::{sample_categorical, stream, StreamRng};

/// Channel order used throughout: wall (H1), proximity (H2), separation (soft).
pub const HC1: usize = 0;
pub const HC2: usize = 1;
pub const SC: usize = 2;

pub trait MultiCostEnvironment: Environment {
    /// Costs `(h_hc1, h_hc2, h_sc)` at a state.
    fn channel_costs(&self, state: &Self::State) -> [f64; 3];

    /// Sizes of the independent action parts, most significant first. Their
    /// product must equal `n_actions`.
    fn action_factors(&self) -> Vec<usize> {
        vec![self.n_actions()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MultiKind {
    Respo,
    ScalarLagrangian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiTrainerConfig {
    pub kind: MultiKind,
    /// Budget on the soft constraint's discounted cost.
    pub chi: f64,
    pub base: TrainerConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiConstraintState {
    /// Policy logits, one block per action factor.
    pub theta: LinearHead,
    pub factors: Vec<usize>,
    pub eta: LinearHead,
    /// Cost critics per channel.
    pub critics: [LinearHead; 3],
    /// REFs for the two hard constraints.
    pub refs: [LinearHead; 2],
    /// Multiplier parameters per channel.
    pub omegas: [f64; 3],
    pub chi: f64,
    pub k: u64,
}

impl MultiConstraintState {
    /// Joint action taking the highest-logit choice in every factor.
    pub fn greedy(&self, active: &[usize]) -> usize {
        let mut logits = Vec::new();
        self.theta.values(active, &mut logits);
        let mut joint = 0;
        let mut off = 0;
        for &n in &self.factors {
            let part = &logits[off..off + n];
            joint = joint * n + (1..n).fold(0, |b, a| if part[a] > part[b] { a } else { b });
            off += n;
        }
        joint
    }

    /// Per-factor action probabilities, concatenated.
    pub fn factor_probs(&self, active: &[usize], out: &mut Vec<f64>) {
        self.theta.values(active, out);
        let mut off = 0;
        for &n in &self.factors {
            softmax(&mut out[off..off + n]);
            off += n;
        }
    }

    /// Split a joint action into its factor choices.
    pub fn split(&self, mut joint: usize, out: &mut Vec<usize>) {
        out.clear();
        for &n in self.factors.iter().rev() {
            out.push(joint % n);
            joint /= n;
        }
        out.reverse();
    }

    fn sample(&self, active: &[usize], rng: &mut StreamRng) -> usize {
        let mut probs = Vec::new();
        self.factor_probs(active, &mut probs);
        let mut joint = 0;
        let mut off = 0;
        for &n in &self.factors {
            joint = joint * n + sample_categorical(&probs[off..off + n], rng);
            off += n;
        }
        joint
    }
}

/// Inputs to the policy weight at one state-action pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiWeights {
    pub q: f64,
    pub q_c: [f64; 3],
    pub p: [f64; 2],
    pub lambda: [f64; 3],
}

impl MultiWeights {
    /// Coefficient of `∇log π` in the per-step policy descent step.
    pub fn weight(&self, kind: MultiKind) -> f64 {
        let [q1, q2, qs] = self.q_c;
        let [l1, l2, ls] = self.lambda;
        match kind {
            MultiKind::Respo => {
                let [p1, p2] = self.p;
                let inner = (-self.q + ls * qs + l2 * q2) * (1.0 - p2) + q2 * p2 + l1 * q1;
                inner * (1.0 - p1) + q1 * p1
            }
            MultiKind::ScalarLagrangian => -self.q + ls * qs + l2 * q2 + l1 * q1,
        }
    }

    /// Ascent drives `∂L/∂λ` per channel.
    pub fn drives(&self, kind: MultiKind, chi: f64) -> [f64; 3] {
        let [q1, q2, qs] = self.q_c;
        match kind {
            MultiKind::Respo => {
                let [p1, p2] = self.p;
                let g = (1.0 - p1) * (1.0 - p2);
                [q1 * (1.0 - p1), q2 * g, (qs - chi) * g]
            }
            MultiKind::ScalarLagrangian => [q1, q2, qs - chi],
        }
    }
}

struct MultiAgent<'a, F> {
    featurizer: F,
    config: &'a MultiTrainerConfig,
    st: MultiConstraintState,
    gamma: f64,
    ref_gamma: f64,
    omega_max: f64,
}

impl<F> MultiAgent<'_, F> {
    fn lambda(&self, c: usize) -> f64 {
        softplus(self.st.omegas[c]).min(self.config.base.lambda_max)
    }

    fn p(&self, active: &[usize], j: usize) -> f64 {
        match self.config.kind {
            MultiKind::Respo => self.st.refs[j].value(active, 0).clamp(0.0, 1.0),
            MultiKind::ScalarLagrangian => 0.0,
        }
    }

    fn weights(&self, active: &[usize], a: usize) -> MultiWeights {
        MultiWeights {
            q: self.st.eta.value(active, a),
            q_c: std::array::from_fn(|c| self.st.critics[c].value(active, a)),
            p: [self.p(active, 0), self.p(active, 1)],
            lambda: std::array::from_fn(|c| self.lambda(c)),
        }
    }

    fn greedy(&self, active: &[usize]) -> usize {
        self.st.greedy(active)
    }

    #[allow(clippy::too_many_arguments)]
    fn step(
        &mut self,
        active: &[usize],
        a: usize,
        reward: f64,
        costs: [f64; 3],
        next: Option<(&[usize], usize)>,
        discount_t: f64,
        z: [f64; 4],
    ) -> Result<()> {
        // Critics.
        let gamma = self.gamma;
        let q_next = next.map_or(0.0, |(n, b)| self.st.eta.value(n, b));
        let target = reward + gamma * q_next;
        if !target.is_finite() {
            return Err(Error::NonFinite(format!("reward critic target {target}")));
        }
        let err = target - self.st.eta.value(active, a);
        self.st.eta.shift(active, a, z[0] * err);
        for c in 0..3 {
            let k_next = next.map_or(0.0, |(n, b)| self.st.critics[c].value(n, b));
            let err = costs[c] + gamma * k_next - self.st.critics[c].value(active, a);
            self.st.critics[c].shift(active, a, z[0] * err);
        }
        // Policy.
        let w = self.weights(active, a).weight(self.config.kind);
        let mut pi = Vec::new();
        self.st.factor_probs(active, &mut pi);
        let mut parts = Vec::new();
        self.st.split(a, &mut parts);
        let width = pi.len();
        let scale = z[1] * discount_t * w / active.len() as f64;
        for &f in active {
            let mut off = 0;
            for (&n, &chosen) in self.st.factors.iter().zip(&parts) {
                for b in 0..n {
                    let pb = pi[off + b];
                    let g = if b == chosen { 1.0 - pb } else { -pb };
                    let th = &mut self.st.theta.weights[f * width + off + b];
                    *th = (*th - scale * g).clamp(-THETA_BOX, THETA_BOX);
                }
                off += n;
            }
        }
        // REFs.
        if self.config.kind == MultiKind::Respo {
            for j in 0..2 {
                let ind: f64 = if costs[j] > 0.0 { 1.0 } else { 0.0 };
                let boot = next.map_or(0.0, |(n, _)| self.ref_gamma * self.p(n, j));
                let err = ind.max(boot) - self.p(active, j);
                self.st.refs[j].shift(active, 0, z[2] * err);
                self.st.refs[j].clamp(active, 0, 0.0, 1.0);
            }
        }
        // Multipliers.
        let drives = self.weights(active, a).drives(self.config.kind, self.st.chi);
        for c in 0..3 {
            let om = self.st.omegas[c];
            self.st.omegas[c] = (om + z[3] * drives[c] * sigmoid(om)).clamp(OMEGA_MIN, self.omega_max);
        }
        Ok(())
    }

    fn max_abs(&self) -> f64 {
        let heads = [&self.st.theta, &self.st.eta, &self.st.critics[0], &self.st.critics[1], &self.st.critics[2]];
        let m = heads.iter().map(|h| h.max_abs()).fold(0.0, f64::max);
        self.st.omegas.iter().fold(m, |m, w| m.max(w.abs()))
    }
}

/// Per-episode channel violation counts under the greedy policy.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiEpisode {
    pub reward: f64,
    pub violations: [usize; 3],
    /// Soft-constraint cost at the first and the last recorded state.
    pub soft_at_ends: (bool, bool),
    pub reached_goal: bool,
}

#[derive(Debug, Clone)]
pub struct MultiOutcome {
    pub rows: Vec<MetricRow>,
    pub state: MultiConstraintState,
    pub diverged: Option<String>,
    /// Greedy evaluation episodes after training.
    pub evaluation: Vec<MultiEpisode>,
}

fn rollout_greedy<E, F>(env: &E, agent: &MultiAgent<'_, F>, rng: &mut StreamRng) -> Result<MultiEpisode>
where
    E: MultiCostEnvironment,
    F: Featurizer<E::State>,
{
    let greedy = |s: &E::State, _: &mut StreamRng| {
        let mut active = Vec::new();
        agent.featurizer.active(s, &mut active);
        agent.greedy(&active)
    };
    let start = env.reset(rng);
    let traj = sample_from(env, &greedy, start, env.horizon(), rng)?;
    let mut violations = [0usize; 3];
    for step in &traj.steps {
        let c = env.channel_costs(&step.state);
        for j in 0..3 {
            violations[j] += usize::from(c[j] > 0.0);
        }
    }
    let first = traj.steps.first().map_or(false, |s| env.channel_costs(&s.state)[SC] > 0.0);
    let last = traj.final_state().map_or(false, |s| env.channel_costs(s)[SC] > 0.0);
    Ok(MultiEpisode {
        reward: traj.episode_return(),
        violations,
        soft_at_ends: (first, last),
        reached_goal: traj.terminated,
    })
}

/// Train on an environment with three cost channels.
pub fn train_multiconstraint<E, F>(
    env: &E,
    featurizer: F,
    config: &MultiTrainerConfig,
    experiment: u64,
    seed: u64,
    final_eval_episodes: usize,
) -> Result<MultiOutcome>
where
    E: MultiCostEnvironment,
    F: Featurizer<E::State>,
{
    let base = &config.base;
    base.validate()?;
    if !(config.chi >= 0.0) {
        return Err(Error::Config { key: "learner.chi".into(), message: "budget must be non-negative".into() });
    }
    let nf = featurizer.n_features();
    let na = env.n_actions();
    let factors = env.action_factors();
    if factors.is_empty() || factors.iter().product::<usize>() != na {
        return Err(Error::InvalidModel(format!("action factors {factors:?} do not multiply to {na}")));
    }
    let head = |w| LinearHead::new(nf, w, 0.0);
    let st = MultiConstraintState {
        theta: head(factors.iter().sum()),
        factors,
        eta: head(na),
        critics: [head(na), head(na), head(na)],
        refs: [LinearHead::new(nf, 1, base.p_init), LinearHead::new(nf, 1, base.p_init)],
        omegas: [base.omega_init.clamp(OMEGA_MIN, base.omega_max()); 3],
        chi: config.chi,
        k: 0,
    };
    let mut agent = MultiAgent {
        featurizer,
        config,
        st,
        gamma: env.discount(),
        ref_gamma: base.ref_discount.unwrap_or(env.discount()),
        omega_max: base.omega_max(),
    };
    let epi = base.episodes_per_iteration as u64;
    let started = Instant::now();
    let mut rows = Vec::new();
    let mut total_steps = 0u64;
    for k in 0..base.iterations {
        agent.st.k = k;
        let z: [f64; 4] = std::array::from_fn(|i| base.schedule.zeta(i + 1, k));
        let (mut rets, mut viols, mut dcost) = (Vec::new(), Vec::new(), Vec::new());
        let mut chan = [0.0; 3];
        for i in 0..epi {
            let mut rng = stream(experiment, seed, k * epi + i);
            let traj = {
                let ag = &agent;
                let sampler = |s: &E::State, rng: &mut StreamRng| {
                    let mut active = Vec::new();
                    ag.featurizer.active(s, &mut active);
                    ag.st.sample(&active, rng)
                };
                let start = env.reset(&mut rng);
                sample_from(env, &sampler, start, env.horizon(), &mut rng)?
            };
            let n = traj.len();
            total_steps += n as u64;
            let feats: Vec<Vec<usize>> = traj
                .steps
                .iter()
                .map(|s| &s.state)
                .chain(traj.final_state())
                .map(|s| {
                    let mut v = Vec::new();
                    agent.featurizer.active(s, &mut v);
                    v
                })
                .collect();
            let tail = if traj.terminated { None } else { Some(agent.st.sample(&feats[n], &mut rng)) };
            let mut discount_t = 1.0;
            let mut disc = 0.0;
            for t in 0..n {
                let step = &traj.steps[t];
                let costs = env.channel_costs(&step.state);
                for c in 0..3 {
                    chan[c] += f64::from(u8::from(costs[c] > 0.0)) / epi as f64;
                }
                disc += discount_t * costs.iter().sum::<f64>();
                let next = if t + 1 < n {
                    Some((feats[t + 1].as_slice(), traj.steps[t + 1].action))
                } else {
                    tail.map(|a| (feats[n].as_slice(), a))
                };
                agent.step(&feats[t], step.action, step.reward, costs, next, discount_t, z)?;
                discount_t *= agent.gamma;
            }
            rets.push(traj.episode_return());
            viols.push(traj.violation_count() as f64);
            dcost.push(disc);
        }
        let (reward_mean, reward_std) = mean_std(&rets);
        let (violations_mean, violations_std) = mean_std(&viols);
        let mut row = MetricRow {
            iteration: k,
            reward_mean,
            reward_std,
            violations_mean,
            violations_std,
            discounted_cost_mean: mean_std(&dcost).0,
            lambda: agent.lambda(HC1),
            channel_violations: Some(chan),
            ..MetricRow::default()
        };
        let m = agent.max_abs();
        if !m.is_finite() || m > DIVERGENCE_LIMIT {
            rows.push(row);
            let detail = format!("parameter magnitude {m:e} exceeds {DIVERGENCE_LIMIT:e}");
            return Ok(MultiOutcome {
                rows,
                state: agent.st,
                diverged: Some(Error::Divergence { iteration: k as usize, detail }.to_string()),
                evaluation: Vec::new(),
            });
        }
        let last = k + 1 == base.iterations || base.max_steps.is_some_and(|m| total_steps >= m);
        if base.eval_every > 0 && ((k + 1) % base.eval_every == 0 || last) {
            let mut total = 0.0;
            let mut free = 0usize;
            for e in 0..base.eval_episodes {
                let mut rng = stream(experiment, seed, EVAL_STREAM_BASE + k * base.eval_episodes as u64 + e as u64);
                let ep = rollout_greedy(env, &agent, &mut rng)?;
                total += ep.reward;
                free += usize::from(ep.violations[HC1] + ep.violations[HC2] == 0);
            }
            let n = base.eval_episodes.max(1) as f64;
            row.eval_reward = Some(total / n);
            row.eval_violation_free_rate = Some(free as f64 / n);
        }
        if base.record_wall_clock {
            row.wall_ms = Some(started.elapsed().as_secs_f64() * 1e3);
        }
        rows.push(row);
        if last {
            break;
        }
    }
    let mut evaluation = Vec::with_capacity(final_eval_episodes);
    for e in 0..final_eval_episodes {
        let mut rng = stream(experiment, seed, EVAL_STREAM_BASE - 1 - e as u64);
        evaluation.push(rollout_greedy(env, &agent, &mut rng)?);
    }
    Ok(MultiOutcome { rows, state: agent.st, diverged: None, evaluation })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wall_gate_dominates() {
        let w = MultiWeights { q: 7.0, q_c: [2.0, 3.0, 4.0], p: [1.0, 0.3], lambda: [5.0, 6.0, 8.0] };
        assert_eq!(w.weight(MultiKind::Respo), 2.0);
    }

    #[test]
    fn zero_costs_reduce_to_reward_ascent() {
        let w = MultiWeights { q: 7.0, q_c: [0.0; 3], p: [0.0, 0.0], lambda: [0.0; 3] };
        assert_eq!(w.weight(MultiKind::Respo), -7.0);
        assert_eq!(w.weight(MultiKind::ScalarLagrangian), -7.0);
        assert_eq!(w.drives(MultiKind::Respo, 0.0), [0.0; 3]);
    }

    #[test]
    fn nested_form() {
        let w = MultiWeights { q: 1.0, q_c: [0.5, 2.0, 3.0], p: [0.25, 0.5], lambda: [4.0, 3.0, 2.0] };
        let inner = (-1.0 + 2.0 * 3.0 + 3.0 * 2.0) * 0.5 + 2.0 * 0.5 + 4.0 * 0.5;
        let expected = inner * 0.75 + 0.5 * 0.25;
        assert!((w.weight(MultiKind::Respo) - expected).abs() < 1e-12);
        let d = w.drives(MultiKind::Respo, 1.0);
        assert_eq!(d, [0.5 * 0.75, 2.0 * 0.375, 2.0 * 0.375]);
    }
}
