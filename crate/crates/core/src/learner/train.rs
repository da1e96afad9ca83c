//! The outer training loop, evaluation, and per-iteration metrics.

use std::time::Instant;

use super::{lambda_max_warning, Agent, MultiplierShape, TrainerConfig, DIVERGENCE_LIMIT};
use crate::error::{Error, Result};
use crate::features::Featurizer;
use crate::mdp::{discounted_cost_return, discounted_reward_return, sample_from, Environment, Trajectory};
use crate::rng::{sample_categorical, stream, StreamRng};

/// Stream ids at and above this are reserved for evaluation episodes.
pub(crate) const EVAL_STREAM_BASE: u64 = 1 << 48;

/// Oracle quantities the trainer can report against (finite state spaces only).
#[derive(Debug, Clone, PartialEq)]
pub struct OracleView {
    /// Target for the learned REF, usually `φ*` at the REF discount.
    pub phi_target: Vec<f64>,
    /// States included in the REF sup-error.
    pub ref_mask: Vec<bool>,
    /// Optimal feasible set.
    pub feasible: Vec<bool>,
}

impl OracleView {
    /// `max_{s ∈ mask} |p(s) − φ(s)|` for any REF estimate.
    pub fn ref_error(&self, mut p: impl FnMut(usize) -> f64) -> f64 {
        (0..self.phi_target.len())
            .filter(|&s| self.ref_mask[s])
            .map(|s| (p(s) - self.phi_target[s]).abs())
            .fold(0.0, f64::max)
    }
}

/// One row of the metric stream. Evaluation columns are filled at the
/// evaluation cadence and empty otherwise.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricRow {
    pub iteration: u64,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub violations_mean: f64,
    pub violations_std: f64,
    pub discounted_cost_mean: f64,
    /// Scalar multiplier, or the mean per-state multiplier over visited states.
    pub lambda: f64,
    pub ref_error: Option<f64>,
    pub eval_reward: Option<f64>,
    pub eval_violation_free_rate: Option<f64>,
    pub feasible_zero_violation_rate: Option<f64>,
    /// Violation steps per channel (wall, proximity, separation) for multi-cost runs.
    pub channel_violations: Option<[f64; 3]>,
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub episodes: usize,
    pub reward_mean: f64,
    pub discounted_reward_mean: f64,
    pub violation_steps_mean: f64,
    pub discounted_cost_mean: f64,
    pub violation_free_rate: f64,
    /// Among episodes starting in the oracle feasible set.
    pub feasible_zero_violation_rate: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F> {
    pub rows: Vec<MetricRow>,
    pub agent: Agent<F>,
    /// Set when a divergence guard stopped the run; rows are partial.
    pub diverged: Option<String>,
    pub warnings: Vec<String>,
}

pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Greedy rollouts of the frozen policy.
pub fn evaluate<E, F>(
    env: &E,
    agent: &Agent<F>,
    episodes: usize,
    experiment: u64,
    seed: u64,
    stream_base: u64,
    oracle: Option<&OracleView>,
) -> Result<EvalSummary>
where
    E: Environment,
    F: Featurizer<E::State>,
{
    let greedy = |s: &E::State, _: &mut StreamRng| {
        let mut active = Vec::new();
        agent.featurizer.active(s, &mut active);
        agent.greedy(&active)
    };
    let gamma = env.discount();
    let (mut rewards, mut disc, mut viols, mut costs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut free, mut feas_total, mut feas_free) = (0usize, 0usize, 0usize);
    for e in 0..episodes {
        let mut rng = stream(experiment, seed, stream_base + e as u64);
        let start = env.reset(&mut rng);
        let traj = sample_from(env, &greedy, start.clone(), env.horizon(), &mut rng)?;
        rewards.push(traj.episode_return());
        disc.push(discounted_reward_return(&traj, gamma));
        viols.push(traj.violation_count() as f64);
        costs.push(discounted_cost_return(&traj, gamma));
        let clean = traj.violation_count() == 0;
        free += usize::from(clean);
        if let (Some(o), Some(i)) = (oracle, env.state_index(&start)) {
            if o.feasible[i] {
                feas_total += 1;
                feas_free += usize::from(clean);
            }
        }
    }
    let n = episodes.max(1) as f64;
    Ok(EvalSummary {
        episodes,
        reward_mean: mean_std(&rewards).0,
        discounted_reward_mean: mean_std(&disc).0,
        violation_steps_mean: mean_std(&viols).0,
        discounted_cost_mean: mean_std(&costs).0,
        violation_free_rate: free as f64 / n,
        feasible_zero_violation_rate: (oracle.is_some() && feas_total > 0)
            .then(|| feas_free as f64 / feas_total as f64),
    })
}

/// Run the nested loop: per iteration sample trajectories with the current
/// policy, then for every step update critics, policy, REF and multiplier in
/// that order.
pub fn train<E, F>(
    env: &E,
    featurizer: F,
    config: &TrainerConfig,
    experiment: u64,
    seed: u64,
    oracle: Option<&OracleView>,
) -> Result<TrainOutcome<F>>
where
    E: Environment,
    F: Featurizer<E::State>,
{
    let agent = Agent::new::<E::State>(featurizer, env.n_actions(), env.discount(), config.clone());
    train_agent(env, agent, experiment, seed, oracle)
}

/// Continue training an existing agent under its own config. Iteration and
/// stream indices restart at zero.
pub fn train_agent<E, F>(
    env: &E,
    mut agent: Agent<F>,
    experiment: u64,
    seed: u64,
    oracle: Option<&OracleView>,
) -> Result<TrainOutcome<F>>
where
    E: Environment,
    F: Featurizer<E::State>,
{
    let config = &agent.config.clone();
    config.validate()?;
    let mut warnings = Vec::new();
    if let Some(w) = config.bound.as_ref().and_then(|b| lambda_max_warning(config.lambda_max, b)) {
        log::warn!("{w}");
        warnings.push(w);
    }
    let mut rows = Vec::with_capacity(config.iterations.min(1 << 16) as usize);
    let epi = config.episodes_per_iteration as u64;
    let gamma = env.discount();
    let started = Instant::now();
    let mut feats: Vec<Vec<usize>> = Vec::new();
    let mut pi = Vec::new();
    let mut total_steps = 0u64;

    for k in 0..config.iterations {
        agent.state.k = k;
        let z: [f64; 4] = std::array::from_fn(|i| config.schedule.zeta(i + 1, k));
        let (mut rets, mut viols, mut dcosts) = (Vec::new(), Vec::new(), Vec::new());
        let mut lambda_sum = 0.0;
        let mut lambda_n = 0usize;
        for i in 0..epi {
            let mut rng = stream(experiment, seed, k * epi + i);
            let traj: Trajectory<E::State> = {
                let ag = &agent;
                let sampler = |s: &E::State, rng: &mut StreamRng| {
                    let mut active = Vec::new();
                    ag.featurizer.active(s, &mut active);
                    let mut probs = Vec::new();
                    ag.policy(&active, &mut probs);
                    sample_categorical(&probs, rng)
                };
                let start = env.reset(&mut rng);
                sample_from(env, &sampler, start, env.horizon(), &mut rng)?
            };
            let n = traj.len();
            total_steps += n as u64;
            feats.resize_with(n + 1, Vec::new);
            for (t, step) in traj.steps.iter().enumerate() {
                agent.featurizer.active(&step.state, &mut feats[t]);
            }
            let last = &traj.steps[n - 1];
            agent.featurizer.active(&last.next_state, &mut feats[n]);
            // Bootstrap action at truncation, drawn after the trajectory.
            let tail_action = if traj.terminated {
                None
            } else {
                agent.policy(&feats[n], &mut pi);
                Some(sample_categorical(&pi, &mut rng))
            };
            let mut discount_t = 1.0;
            for t in 0..n {
                let step = &traj.steps[t];
                let (cur, rest) = feats.split_at(t + 1);
                let active = &cur[t];
                let next_active = &rest[0];
                let next = if t + 1 < n {
                    Some((next_active.as_slice(), traj.steps[t + 1].action))
                } else {
                    tail_action.map(|a| (next_active.as_slice(), a))
                };
                let next_cost = env.cost(&step.next_state);
                agent.critic_update(active, step.action, step.reward, step.cost, next_cost, next, z[0])?;
                agent.policy_update(active, step.action, discount_t, z[1]);
                agent.ref_update(active, step.cost, next.map(|x| x.0), z[2]);
                agent.lagrange_update(active, step.action, z[3]);
                if agent.config.kind.multiplier() == MultiplierShape::PerState {
                    lambda_sum += agent.lambda_at(active);
                    lambda_n += 1;
                }
                discount_t *= gamma;
            }
            rets.push(traj.episode_return());
            viols.push(traj.violation_count() as f64);
            dcosts.push(discounted_cost_return(&traj, gamma));
        }

        let (reward_mean, reward_std) = mean_std(&rets);
        let (violations_mean, violations_std) = mean_std(&viols);
        let lambda = match agent.config.kind.multiplier() {
            MultiplierShape::PerState if lambda_n > 0 => lambda_sum / lambda_n as f64,
            MultiplierShape::PerState => 0.0,
            _ => agent.lambda_at(&[]),
        };
        let mut row = MetricRow {
            iteration: k,
            reward_mean,
            reward_std,
            violations_mean,
            violations_std,
            discounted_cost_mean: mean_std(&dcosts).0,
            lambda,
            ..MetricRow::default()
        };

        if !agent.state.is_finite() || agent.state.max_abs() > DIVERGENCE_LIMIT {
            let detail = format!("parameter magnitude {:e} exceeds {DIVERGENCE_LIMIT:e}", agent.state.max_abs());
            log::error!("iteration {k}: {detail}");
            rows.push(row);
            return Ok(TrainOutcome {
                rows,
                agent,
                diverged: Some(Error::Divergence { iteration: k as usize, detail }.to_string()),
                warnings,
            });
        }

        if let Some(o) = oracle {
            if agent.config.kind.uses_ref() {
                let mut active = Vec::new();
                row.ref_error = Some(o.ref_error(|s| match env.state_from_index(s) {
                    Some(st) => {
                        agent.featurizer.active(&st, &mut active);
                        agent.p(&active)
                    }
                    None => f64::NAN,
                }));
            }
        }
        let last = k + 1 == config.iterations || config.max_steps.is_some_and(|m| total_steps >= m);
        if config.eval_every > 0 && ((k + 1) % config.eval_every == 0 || last) {
            let base = EVAL_STREAM_BASE + k * config.eval_episodes as u64;
            let ev = evaluate(env, &agent, config.eval_episodes, experiment, seed, base, oracle)?;
            row.eval_reward = Some(ev.reward_mean);
            row.eval_violation_free_rate = Some(ev.violation_free_rate);
            row.feasible_zero_violation_rate = ev.feasible_zero_violation_rate;
        }
        if config.record_wall_clock {
            row.wall_ms = Some(started.elapsed().as_secs_f64() * 1e3);
        }
        rows.push(row);
        if last {
            break;
        }
    }
    Ok(TrainOutcome { rows, agent, diverged: None, warnings })
}
