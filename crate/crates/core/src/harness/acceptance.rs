//! Acceptance checks, one function per criterion.
//!
//! The fast tier runs the property checks; the full tier adds every training
//! study. Each check returns a [`CriterionResult`] rather than panicking, so
//! one failure does not hide the others.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use super::config::{
    DiStart, DiscretizedDoubleIntegrator, ExperimentConfig, DOUBLE_INTEGRATOR_C, DRONE_C, ORDERED_RHO, TABULAR_C,
};
use super::random::{random_mdp, random_policy, RandomMdpSpec};
use super::run::{par_map, run_experiment, DoubleIntegratorSetup, GridSetup};
use crate::env::gridworld::{graded, grid5, grid6, GridWorldSpec};
use crate::env::{DroneFeatures, DroneTunnel, DroneTunnelSpec};
use crate::error::{Error, Result};
use crate::features::OneHot;
use crate::learner::{
    lambda_max_bound, lambda_max_warning, softplus_inv, train, train_multiconstraint, Agent, BoundInputs, LearnerKind,
    MultiKind, MultiTrainerConfig, TrainerConfig,
};
use crate::mdp::{FiniteMdp, FiniteMdpBuilder, TabularPolicy};
use crate::oracle::{constrained_reference_from, policy_eval, q_from_v, ref_bellman, ref_fixed_point, reentry_certificates, Signal};
use crate::rng::{experiment_key, sample_categorical, stream};
use crate::schedule::ScheduleSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tier {
    Fast,
    Full,
}

impl std::str::FromStr for Tier {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast" => Ok(Tier::Fast),
            "full" => Ok(Tier::Full),
            other => Err(Error::Config { key: "tier".into(), message: format!("unknown tier `{other}` (fast, full)") }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
    /// Runtime budget in seconds.
    pub budget: f64,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        let status = if self.passed { "PASS" } else { "FAIL" };
        format!("{status} [{}] {} ({:.1}s): {}", self.id, self.name, self.seconds, self.detail)
    }
}

#[derive(Debug, Clone, Default)]
pub struct AcceptanceReport {
    pub results: Vec<CriterionResult>,
}

impl AcceptanceReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> Vec<&CriterionResult> {
        self.results.iter().filter(|r| !r.passed).collect()
    }

    /// `criterion,name,status,seconds,budget_seconds,detail`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["criterion", "name", "status", "seconds", "budget_seconds", "detail"])?;
        for r in &self.results {
            w.write_record([
                r.id,
                r.name,
                if r.passed { "pass" } else { "fail" },
                &format!("{:.3}", r.seconds),
                &r.budget.to_string(),
                &r.detail,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

type Check = (bool, String);

fn timed(id: &'static str, name: &'static str, budget: f64, f: impl FnOnce() -> Result<Check>) -> CriterionResult {
    let t = Instant::now();
    let (ok, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    let seconds = t.elapsed().as_secs_f64();
    let within = seconds <= budget;
    let detail = if within { detail } else { format!("{detail}; over the {budget}s budget") };
    CriterionResult { id, name, passed: ok && within, detail, seconds, budget }
}

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn fmt(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

// ---------------------------------------------------------------- criterion 1

pub fn ref_contraction() -> Result<Check> {
    let gamma = 0.99;
    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0;
    for i in 0..10u64 {
        let mut rng = stream(experiment_key("accept.contraction"), i, 0);
        let n = 2 + (i as usize * 7) % 19;
        let spec = RandomMdpSpec { n_states: n, n_actions: 3, ..RandomMdpSpec::default() };
        let mdp = random_mdp(&spec, &mut rng)?;
        let pi = random_policy(n, 3, i % 2 == 0, &mut rng)?;
        for _ in 0..100 {
            let p: Vec<f64> = (0..n).map(|_| rand::Rng::random(&mut rng)).collect();
            let q: Vec<f64> = (0..n).map(|_| rand::Rng::random(&mut rng)).collect();
            let bp = ref_bellman(&mdp, &pi, gamma, &p);
            let bq = ref_bellman(&mdp, &pi, gamma, &q);
            let lhs = bp.iter().zip(&bq).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            let rhs = gamma * p.iter().zip(&q).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            worst = worst.max(lhs - rhs);
            if lhs > rhs + 1e-12 {
                violations += 1;
            }
        }
    }
    Ok((violations == 0, format!("1000 pairs, {violations} violations, max(lhs − rhs) = {worst:.3e}")))
}

// ---------------------------------------------------------------- criterion 2

/// Fraction of sampled trajectories from `s` that ever visit a violating state.
fn mc_reach(mdp: &FiniteMdp, pi: &TabularPolicy, s0: usize, n: usize, horizon: usize, key: u64) -> f64 {
    let mut hits = 0usize;
    for e in 0..n {
        let mut rng = stream(key, s0 as u64, e as u64);
        let mut s = s0;
        for t in 0..=horizon {
            if mdp.cost(s) > 0.0 {
                hits += 1;
                break;
            }
            if t == horizon || mdp.is_absorbing(s) {
                break;
            }
            let a = sample_categorical(pi.row(s), &mut rng);
            s = mdp.sample_next(s, a, &mut rng);
        }
    }
    hits as f64 / n as f64
}

pub fn ref_monte_carlo(trajectories: usize) -> Result<Check> {
    let key = experiment_key("accept.monte_carlo");
    let mut worst_z = 0.0f64;
    let mut failures = 0;
    let mut states = 0;
    for i in 0..5u64 {
        let mut rng = stream(key, i, 0);
        let n = 6 + i as usize;
        let spec = RandomMdpSpec { n_states: n, n_actions: 2, sink_mass: 0.1, ..RandomMdpSpec::default() };
        let mdp = random_mdp(&spec, &mut rng)?;
        let pi = random_policy(n, 2, false, &mut rng)?;
        let phi = ref_fixed_point(&mdp, &pi, 1.0)?;
        for s in 0..n {
            let est = mc_reach(&mdp, &pi, s, trajectories, 200, key ^ (i + 1));
            let se = (phi[s] * (1.0 - phi[s]) / trajectories as f64).sqrt();
            let tol = (3.0 * se).max(3.0 / trajectories as f64);
            worst_z = worst_z.max((est - phi[s]).abs() / tol * 3.0);
            failures += usize::from((est - phi[s]).abs() > tol);
            states += 1;
        }
    }
    Ok((failures == 0, format!("{states} states, {failures} outside 3 SE, worst |z| = {worst_z:.2}")))
}

// ---------------------------------------------------------------- criterion 3

/// Forward search over positive-probability edges.
fn reaches_violation(mdp: &FiniteMdp, pi: &TabularPolicy, s0: usize) -> bool {
    let mut seen = vec![false; mdp.n_states()];
    let mut queue = VecDeque::from([s0]);
    seen[s0] = true;
    while let Some(s) = queue.pop_front() {
        if mdp.cost(s) > 0.0 {
            return true;
        }
        for a in (0..mdp.n_actions()).filter(|&a| pi.prob(s, a) > 0.0) {
            for &(t, p) in mdp.successors(s, a) {
                if p > 0.0 && !seen[t] {
                    seen[t] = true;
                    queue.push_back(t);
                }
            }
        }
    }
    false
}

pub fn persistent_safety() -> Result<Check> {
    let key = experiment_key("accept.persistent_safety");
    let (mut checked, mut counter, mut safe) = (0, 0, 0);
    for i in 0..20u64 {
        let mut rng = stream(key, i, 0);
        let n = 3 + (i as usize) % 10;
        let spec = RandomMdpSpec {
            n_states: n,
            n_actions: 3,
            violation_rate: 0.15,
            deterministic: i % 3 == 0,
            ..RandomMdpSpec::default()
        };
        let mdp = random_mdp(&spec, &mut rng)?;
        for _ in 0..20 {
            let pi = random_policy(n, 3, true, &mut rng)?;
            let vc = policy_eval(&mdp, &pi, Signal::Cost)?;
            for s in 0..n {
                let zero = vc[s] <= 1e-9;
                let clean = !reaches_violation(&mdp, &pi, s);
                counter += usize::from(zero != clean);
                safe += usize::from(clean);
                checked += 1;
            }
        }
    }
    Ok((counter == 0, format!("{checked} state/policy pairs ({safe} persistently safe), {counter} counterexamples")))
}

// ---------------------------------------------------------------- criterion 4

/// Outcome of a greedy rollout from the canonical start.
#[derive(Debug, Clone, PartialEq)]
pub struct Reentry {
    pub entered_at: Option<usize>,
    pub violations_after_entry: usize,
    pub ends_feasible: bool,
}

impl Reentry {
    pub fn re_enters(&self) -> bool {
        self.entered_at.is_some() && self.violations_after_entry == 0 && self.ends_feasible
    }
}

pub fn reentry_of(setup: &DoubleIntegratorSetup, path: &[usize]) -> Reentry {
    let feasible = &setup.oracle.feasible;
    let entered_at = path.iter().position(|&s| feasible[s]);
    let violations_after_entry = entered_at.map_or(0, |t| path[t..].iter().filter(|&&s| setup.mdp.cost(s) > 0.0).count());
    Reentry { entered_at, violations_after_entry, ends_feasible: path.last().is_some_and(|&s| feasible[s]) }
}

fn write_trajectory(setup: &DoubleIntegratorSetup, path: &[usize], out: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(out)?));
    w.write_record(["t", "cell", "x", "v", "cost", "feasible"])?;
    for (t, &s) in path.iter().enumerate() {
        let c = setup.grid.center(s);
        w.write_record([
            t.to_string(),
            s.to_string(),
            c[0].to_string(),
            c[1].to_string(),
            setup.mdp.cost(s).to_string(),
            u8::from(setup.oracle.feasible[s]).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn double_integrator_trainer() -> TrainerConfig {
    TrainerConfig {
        schedule: ScheduleSet::polynomial(DOUBLE_INTEGRATOR_C, ORDERED_RHO),
        iterations: u64::MAX,
        episodes_per_iteration: 10,
        max_steps: Some(10_000_000),
        eval_every: 0,
        ..TrainerConfig::default()
    }
}

pub fn double_integrator_reentry(artifacts: Option<&Path>) -> Result<Check> {
    let setup = DoubleIntegratorSetup::build(&DiscretizedDoubleIntegrator::default())?;
    let certs = reentry_certificates(&setup.mdp, &setup.infeasible_safe, setup.mdp.discount())?;
    let certified: Vec<usize> =
        setup.infeasible_safe.iter().zip(&certs).filter(|(_, c)| c.satisfied).map(|(&s, _)| s).collect();
    let entered = certified
        .iter()
        .filter(|&&s| setup.rollout(&setup.oracle.safest.policy, s).iter().any(|&t| setup.oracle.feasible[t]))
        .count();
    let rate = entered as f64 / certified.len().max(1) as f64;
    let oracle_ok = !certified.is_empty() && rate >= 0.95;

    let mdp = setup.training_mdp(DiStart::InfeasibleSafe)?;
    let n = mdp.n_states();
    let key = experiment_key("accept.double_integrator");
    let mut counts = Vec::new();
    for kind in [LearnerKind::Respo, LearnerKind::Rcrl] {
        let config = TrainerConfig { kind, ..double_integrator_trainer() };
        let outcomes = par_map(&SEEDS, |seed| -> Result<(Vec<usize>, Reentry)> {
            let out = train(&mdp, OneHot { n_states: n }, &config, key, seed, None)?;
            let path = setup.rollout(&out.agent.greedy_policy(n)?, setup.canonical);
            let r = reentry_of(&setup, &path);
            Ok((path, r))
        });
        let mut yes = 0;
        for (seed, o) in SEEDS.iter().zip(outcomes) {
            let (path, r) = o?;
            yes += usize::from(r.re_enters());
            if let Some(dir) = artifacts {
                write_trajectory(&setup, &path, &dir.join(format!("double_integrator_{}_seed{seed}.csv", kind.name())))?;
            }
        }
        counts.push(yes);
    }
    let majority = SEEDS.len() / 2 + 1;
    let ok = oracle_ok && counts[0] >= majority && counts[1] < majority;
    Ok((
        ok,
        format!(
            "oracle: {entered}/{} certified starts enter ({:.1}%); from the canonical start RESPO re-enters in {}/5 seeds, RCRL in {}/5",
            certified.len(),
            100.0 * rate,
            counts[0],
            counts[1]
        ),
    ))
}

// ---------------------------------------------------------------- gridworld studies

/// Result of one tabular training run, read out exactly.
#[derive(Debug, Clone)]
pub struct TabularRun {
    pub greedy: TabularPolicy,
    pub p: Vec<f64>,
    /// Exact greedy-policy value under the start distribution.
    pub value: f64,
    /// Violation steps summed over training.
    pub training_violations: f64,
}

pub fn tabular_trainer(kind: LearnerKind, schedule: ScheduleSet) -> TrainerConfig {
    TrainerConfig {
        kind,
        schedule,
        iterations: u64::MAX,
        max_steps: Some(1_000_000),
        eval_every: 0,
        ..TrainerConfig::default()
    }
}

pub fn tabular_preset() -> ScheduleSet {
    ScheduleSet::polynomial(TABULAR_C, ORDERED_RHO)
}

pub fn run_tabular(setup: &GridSetup, config: &TrainerConfig, study: &str) -> Result<Vec<TabularRun>> {
    let n = setup.mdp.n_states();
    let d0 = setup.mdp.initial_distribution().to_vec();
    let key = experiment_key(study);
    par_map(&SEEDS, |seed| {
        let out = train(&setup.mdp, OneHot { n_states: n }, config, key, seed, None)?;
        let greedy = out.agent.greedy_policy(n)?;
        let v = policy_eval(&setup.mdp, &greedy, Signal::Reward)?;
        let epi = config.episodes_per_iteration as f64;
        Ok(TabularRun {
            p: out.agent.ref_table(n),
            value: d0.iter().zip(&v).map(|(w, x)| w * x).sum(),
            training_violations: out.rows.iter().map(|r| r.violations_mean * epi).sum(),
            greedy,
        })
    })
    .into_iter()
    .collect()
}

pub fn learned_ref_accuracy() -> Result<Check> {
    let setup = GridSetup::build(&grid5(0.1))?;
    let runs = run_tabular(&setup, &tabular_trainer(LearnerKind::Respo, tabular_preset()), "accept.ref_accuracy")?;
    let view = setup.view();
    let errs: Vec<f64> = runs.iter().map(|r| view.ref_error(|s| r.p[s])).collect();
    let ok = errs.iter().all(|&e| e <= 0.1);
    Ok((ok, format!("sup |p − φ*| per seed {} (≤ 0.1)", fmt(&errs))))
}

/// Greedy value over feasible starts relative to the constrained optimum, and
/// the zero-violation rate of greedy episodes from feasible starts.
fn feasible_region_scores(setup: &GridSetup, run: &TabularRun, seed: u64) -> Result<(f64, f64)> {
    let mdp = &setup.mdp;
    let reference = constrained_reference_from(mdp, &setup.oracle.safest)?;
    let d0: Vec<f64> = mdp
        .initial_distribution()
        .iter()
        .enumerate()
        .map(|(s, &w)| if setup.oracle.feasible[s] { w } else { 0.0 })
        .collect();
    let target = reference.mean_over(&d0).ok_or_else(|| Error::InvalidModel("no feasible start".into()))?;
    let v = policy_eval(mdp, &run.greedy, Signal::Reward)?;
    let mass: f64 = d0.iter().sum();
    let achieved = d0.iter().zip(&v).map(|(w, x)| w * x).sum::<f64>() / mass;
    let starts: Vec<usize> = (0..mdp.n_states()).filter(|&s| d0[s] > 0.0).collect();
    let key = experiment_key("accept.feasible_episodes");
    let episodes = 200;
    let mut clean = 0;
    for e in 0..episodes {
        let mut rng = stream(key, seed, e as u64);
        let mut s = starts[e % starts.len()];
        let mut ok = mdp.cost(s) == 0.0;
        for _ in 0..mdp.horizon() {
            if mdp.is_absorbing(s) {
                break;
            }
            let a = sample_categorical(run.greedy.row(s), &mut rng);
            s = mdp.sample_next(s, a, &mut rng);
            ok &= mdp.cost(s) == 0.0;
        }
        clean += usize::from(ok);
    }
    Ok((achieved / target, clean as f64 / episodes as f64))
}

pub fn feasible_region_optimality() -> Result<Check> {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, spec) in [("grid5", grid5(0.1)), ("grid6", grid6(0.0))] {
        let setup = GridSetup::build(&spec)?;
        let runs = run_tabular(&setup, &tabular_trainer(LearnerKind::Respo, tabular_preset()), "accept.feasible")?;
        let mut ratios = Vec::new();
        let mut rates = Vec::new();
        for (seed, r) in SEEDS.iter().zip(&runs) {
            let (ratio, rate) = feasible_region_scores(&setup, r, *seed)?;
            ratios.push(ratio);
            rates.push(rate);
        }
        let (ratio, rate) = (mean(&ratios), mean(&rates));
        ok &= ratio >= 0.9 && rate >= 0.95;
        parts.push(format!("{name}: value ratio {ratio:.3} (≥ 0.9), zero-violation rate {rate:.3} (≥ 0.95)"));
    }
    Ok((ok, parts.join("; ")))
}

/// grid6 with slip and trapping hazards, used by the schedule and χ = 0 ablations.
pub fn trap_grid6() -> GridWorldSpec {
    GridWorldSpec { hazard_trap: true, ..grid6(0.05) }
}

pub fn schedule_ablation() -> Result<Check> {
    let setup = GridSetup::build(&trap_grid6())?;
    let value = |schedule: ScheduleSet| -> Result<f64> {
        let runs = run_tabular(&setup, &tabular_trainer(LearnerKind::Respo, schedule), "accept.ablation")?;
        Ok(mean(&runs.iter().map(|r| r.value).collect::<Vec<_>>()))
    };
    let base = value(tabular_preset())?;
    let fast = value(tabular_preset().with_scaled(3, 100.0))?;
    let slow = value(tabular_preset().with_scaled(3, 0.01))?;
    let loss = |v: f64| 1.0 - v / base;
    let ok = loss(fast) >= 0.25 && loss(slow) >= 0.25;
    Ok((
        ok,
        format!(
            "compliant {base:.4}; REF ×100 {fast:.4} (loss {:.1}%); REF ×0.01 {slow:.4} (loss {:.1}%); need ≥ 25% both",
            100.0 * loss(fast),
            100.0 * loss(slow)
        ),
    ))
}

pub fn vh_ablation() -> Result<Check> {
    let setup = GridSetup::build(&graded(0.0))?;
    let viol = |kind| -> Result<f64> {
        let runs = run_tabular(&setup, &tabular_trainer(kind, tabular_preset()), "accept.vh")?;
        Ok(mean(&runs.iter().map(|r| r.training_violations).collect::<Vec<_>>()))
    };
    let respo = viol(LearnerKind::Respo)?;
    let vh = viol(LearnerKind::RespoWithVh)?;
    Ok((vh >= 2.0 * respo, format!("training violation steps: RESPO {respo:.0}, with V_h {vh:.0} (ratio {:.2}, need ≥ 2)", vh / respo)))
}

pub fn lagrangian_chi0_ablation() -> Result<Check> {
    let setup = GridSetup::build(&trap_grid6())?;
    let value = |kind| -> Result<f64> {
        let runs = run_tabular(&setup, &tabular_trainer(kind, tabular_preset()), "accept.chi0")?;
        Ok(mean(&runs.iter().map(|r| r.value).collect::<Vec<_>>()))
    };
    let respo = value(LearnerKind::Respo)?;
    let lag = value(LearnerKind::ScalarLagrangian { chi: 0.0 })?;
    Ok((lag <= 0.5 * respo, format!("final value: RESPO {respo:.4}, Lagrangian χ=0 {lag:.4} (ratio {:.2}, need ≤ 0.5)", lag / respo)))
}

// ---------------------------------------------------------------- criterion 7

fn gradient_mdp(class_structured: bool) -> Result<FiniteMdp> {
    let mut b = FiniteMdpBuilder::new(3, 2);
    b.discount(0.9);
    if class_structured {
        // {0, 1} and {2} are closed classes.
        b.transition(0, 0, &[(0, 0.3), (1, 0.7)]).transition(0, 1, &[(0, 0.8), (1, 0.2)]);
        b.transition(1, 0, &[(0, 0.5), (1, 0.5)]).transition(1, 1, &[(0, 0.9), (1, 0.1)]);
        b.deterministic(2, 0, 2).deterministic(2, 1, 2);
        b.cost(1, 1.0).cost(2, 0.5);
    } else {
        b.transition(0, 0, &[(0, 0.2), (1, 0.5), (2, 0.3)]).transition(0, 1, &[(1, 0.6), (2, 0.4)]);
        b.transition(1, 0, &[(0, 0.7), (2, 0.3)]).transition(1, 1, &[(1, 0.4), (2, 0.6)]);
        b.transition(2, 0, &[(0, 1.0)]).transition(2, 1, &[(1, 0.5), (2, 0.5)]);
        b.cost(2, 1.0);
    }
    let rewards = [[0.3, -0.2], [1.0, 0.1], [-0.5, 0.4]];
    for (s, r) in rewards.iter().enumerate() {
        b.reward(s, 0, r[0]).reward(s, 1, r[1]);
    }
    b.initial(&[0.5, 0.3, 0.2]);
    b.build()
}

/// Lagrangian `Σ d0(s) [−(1−p(s)) V(s) + (λ(1−p(s)) + p(s)) V_c(s)]` at logits `theta`.
fn lagrangian(mdp: &FiniteMdp, theta: &[f64], p: &[f64], lambda: f64) -> Result<f64> {
    let m = mdp.n_actions();
    let mut probs = theta.to_vec();
    for row in probs.chunks_mut(m) {
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|x| *x = (*x - mx).exp());
        let z: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= z);
    }
    let pi = TabularPolicy::new(mdp.n_states(), m, probs)?;
    let v = policy_eval(mdp, &pi, Signal::Reward)?;
    let vc = policy_eval(mdp, &pi, Signal::Cost)?;
    Ok(mdp
        .initial_distribution()
        .iter()
        .enumerate()
        .map(|(s, &d)| d * (-(1.0 - p[s]) * v[s] + (lambda * (1.0 - p[s]) + p[s]) * vc[s]))
        .sum())
}

/// Relative error between the exact expected update and `−∇L` by central differences.
pub fn gradient_error(mdp: &FiniteMdp, theta: &[f64], p: &[f64], lambda: f64) -> Result<f64> {
    let (n, m) = (mdp.n_states(), mdp.n_actions());
    let config = TrainerConfig { lambda_max: 1000.0, ..TrainerConfig::default() };
    let mut agent = Agent::new::<usize>(OneHot { n_states: n }, m, mdp.discount(), config);
    agent.state.theta.weights.copy_from_slice(theta);
    agent.state.omega = softplus_inv(lambda);
    let mut probs = Vec::with_capacity(n * m);
    let mut row = Vec::new();
    for s in 0..n {
        agent.policy(&[s], &mut row);
        probs.extend_from_slice(&row);
    }
    let policy = TabularPolicy::new(n, m, probs)?;
    let q = q_from_v(mdp, &policy_eval(mdp, &policy, Signal::Reward)?, Signal::Reward);
    let qc = q_from_v(mdp, &policy_eval(mdp, &policy, Signal::Cost)?, Signal::Cost);
    agent.state.eta.weights.copy_from_slice(&q);
    agent.state.kappa.weights.copy_from_slice(&qc);
    agent.state.xi.weights.copy_from_slice(p);

    // Discounted occupancy d0ᵀ (I − γ P_π)⁻¹ by fixed-point iteration.
    let d0 = mdp.initial_distribution();
    let mut occ = d0.to_vec();
    for _ in 0..10_000 {
        let mut next = d0.to_vec();
        for s in 0..n {
            for a in 0..m {
                for &(t, pr) in mdp.successors(s, a) {
                    next[t] += mdp.discount() * occ[s] * policy.prob(s, a) * pr;
                }
            }
        }
        let d = next.iter().zip(&occ).fold(0.0f64, |x, (a, b)| x.max((a - b).abs()));
        occ = next;
        if d < 1e-15 {
            break;
        }
    }

    // Expected step of the trainer's own update, per unit step size.
    let zeta = 1e-6;
    let mut expected = vec![0.0; n * m];
    for s in 0..n {
        for a in 0..m {
            let mut probe = agent.clone();
            probe.policy_update(&[s], a, 1.0, zeta);
            for (e, (new, old)) in expected.iter_mut().zip(probe.state.theta.weights.iter().zip(theta)) {
                *e += occ[s] * policy.prob(s, a) * (new - old) / zeta;
            }
        }
    }

    let h = 1e-5;
    let mut grad = vec![0.0; n * m];
    for i in 0..n * m {
        let mut up = theta.to_vec();
        let mut down = theta.to_vec();
        up[i] += h;
        down[i] -= h;
        grad[i] = -(lagrangian(mdp, &up, p, lambda)? - lagrangian(mdp, &down, p, lambda)?) / (2.0 * h);
    }
    let diff = expected.iter().zip(&grad).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let norm = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(diff / norm)
}

pub fn gradient_fidelity() -> Result<Check> {
    let theta = [0.4, -0.3, 0.1, 0.7, -0.6, 0.2];
    let constant = gradient_error(&gradient_mdp(false)?, &theta, &[0.35, 0.35, 0.35], 2.0)?;
    let classes = gradient_error(&gradient_mdp(true)?, &theta, &[0.2, 0.2, 0.7], 1.5)?;
    let ok = constant <= 1e-4 && classes <= 1e-4;
    Ok((ok, format!("relative error: constant p {constant:.2e}, class-constant p {classes:.2e} (≤ 1e-4)")))
}

// ---------------------------------------------------------------- criterion 9

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TunnelScore {
    pub hc1: usize,
    pub hc2: usize,
    /// Episodes whose soft constraint is violated at the first or last state.
    pub soft_at_ends: usize,
    pub goals: usize,
}

pub fn drone_trainer(kind: MultiKind) -> MultiTrainerConfig {
    MultiTrainerConfig {
        kind,
        chi: 1.0,
        base: TrainerConfig {
            schedule: ScheduleSet::polynomial(DRONE_C, ORDERED_RHO),
            iterations: u64::MAX,
            episodes_per_iteration: 50,
            max_steps: Some(6_000_000),
            eval_every: 0,
            ..TrainerConfig::default()
        },
    }
}

pub fn tunnel_scores(kind: MultiKind) -> Result<Vec<TunnelScore>> {
    let env = DroneTunnel::new(DroneTunnelSpec::default())?;
    let config = drone_trainer(kind);
    let key = experiment_key("accept.tunnel");
    par_map(&SEEDS, |seed| {
        let out = train_multiconstraint(&env, DroneFeatures::lattice(&env, 0), &config, key, seed, 100)?;
        if let Some(d) = out.diverged {
            return Err(Error::Divergence { iteration: out.rows.len(), detail: d });
        }
        let ev = &out.evaluation;
        Ok(TunnelScore {
            hc1: ev.iter().map(|e| e.violations[0]).sum(),
            hc2: ev.iter().map(|e| e.violations[1]).sum(),
            soft_at_ends: ev.iter().filter(|e| e.soft_at_ends.0 || e.soft_at_ends.1).count(),
            goals: ev.iter().filter(|e| e.reached_goal).count(),
        })
    })
    .into_iter()
    .collect()
}

pub fn multi_constraint_tunnel() -> Result<Check> {
    let respo = tunnel_scores(MultiKind::Respo)?;
    let lag = match tunnel_scores(MultiKind::ScalarLagrangian) {
        Ok(s) => s,
        Err(Error::Divergence { .. }) => Vec::new(),
        Err(e) => return Err(e),
    };
    let hc1: usize = respo.iter().map(|s| s.hc1).sum();
    let ends: usize = respo.iter().map(|s| s.soft_at_ends).sum();
    let r_hc2: Vec<f64> = respo.iter().map(|s| s.hc2 as f64).collect();
    let l_hc2: Vec<f64> = lag.iter().map(|s| s.hc2 as f64).collect();
    let fewer = lag.is_empty() || mean(&r_hc2) < mean(&l_hc2);
    let ok = hc1 == 0 && ends == 0 && fewer;
    Ok((
        ok,
        format!(
            "RESPO wall violations {hc1} over 5×100 episodes, proximity steps {} vs Lagrangian {}{}, soft violations at episode ends {ends}, goals reached {}/500",
            fmt(&r_hc2),
            fmt(&l_hc2),
            if lag.is_empty() { " (diverged)" } else { "" },
            respo.iter().map(|s| s.goals).sum::<usize>()
        ),
    ))
}

// ---------------------------------------------------------------- criterion 10

/// `R_max / ((1−γ) γ^T H_Δ P_min)` as a sum of logarithms with `ln(1+x)` terms.
fn bound_log_space(r_max: f64, gamma: f64, horizon: usize, h_delta: f64, p_min: f64) -> f64 {
    let log = r_max.ln() - (-gamma).ln_1p() - horizon as f64 * (gamma - 1.0).ln_1p() - h_delta.ln() - p_min.ln();
    log.exp()
}

pub fn lambda_bound() -> Result<Check> {
    let mut rng = stream(experiment_key("accept.lambda_bound"), 0, 0);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        use rand::Rng;
        let r = rng.random_range(0.01..10.0);
        let g = rng.random_range(0.5..0.999);
        let t = rng.random_range(1..2000usize);
        let h = rng.random_range(0.01..5.0);
        let p = rng.random_range(1e-3..1.0);
        let ours = lambda_max_bound(r, g, t, h, p)?;
        let other = bound_log_space(r, g, t, h, p);
        worst = worst.max((ours - other).abs() / other);
    }
    let inputs = BoundInputs { r_max: 1.0, gamma: 0.99, horizon: 100, h_delta: 1.0, p_min: 1.0 };
    let b = lambda_max_bound(1.0, 0.99, 100, 1.0, 1.0)?;
    let warns_below = lambda_max_warning(b * 0.5, &inputs).is_some();
    let quiet_above = lambda_max_warning(b * 2.0, &inputs).is_none();
    let mut mdp = FiniteMdpBuilder::new(1, 1);
    mdp.deterministic(0, 0, 0).reward(0, 0, 1.0);
    let mdp = mdp.build()?;
    let config = TrainerConfig { iterations: 1, lambda_max: 10.0, bound: Some(inputs), eval_every: 0, ..TrainerConfig::default() };
    let trainer_warns = !train(&mdp, OneHot { n_states: 1 }, &config, 0, 0, None)?.warnings.is_empty();
    let ok = worst <= 1e-12 && warns_below && quiet_above && trainer_warns;
    Ok((
        ok,
        format!(
            "max relative difference {worst:.1e} over 1000 inputs; bound(1, 0.99, 100, 1, 1) = {b:.4}; warning below cap {warns_below}, above cap {}, trainer {trainer_warns}",
            !quiet_above
        ),
    ))
}

// ---------------------------------------------------------------- criterion 11

pub fn reproducibility(workdir: &Path) -> Result<Check> {
    let configs = [
        "experiment.name = repro_grid\nenv.kind = grid5\nrun.seeds = 0..3\nrun.iterations = 300\neval.every = 50\n",
        "experiment.name = repro_chi0\nenv.kind = grid6\nlearner.kind = lagrangian_chi0\nrun.seeds = 0..2\nrun.iterations = 200\neval.every = 40\n",
        "experiment.name = repro_drone\nenv.kind = drone\nrun.seeds = 0..2\nrun.iterations = 4\nrun.episodes_per_iteration = 5\neval.every = 2\neval.final_episodes = 5\n",
    ];
    let mut compared = 0;
    let mut differing = Vec::new();
    for text in configs {
        let config = ExperimentConfig::parse(text)?;
        let a = run_experiment(&config, Some(&workdir.join("first")))?;
        let b = run_experiment(&config, Some(&workdir.join("second")))?;
        for (x, y) in a.seed_files.iter().chain([&a.aggregate]).zip(b.seed_files.iter().chain([&b.aggregate])) {
            compared += 1;
            if std::fs::read(x)? != std::fs::read(y)? {
                differing.push(x.display().to_string());
            }
        }
    }
    Ok((differing.is_empty(), format!("{compared} CSV pairs compared, {} differ {:?}", differing.len(), differing)))
}

// ---------------------------------------------------------------- suite

/// Criteria and the tier that runs them.
pub const CRITERIA: [(&str, &str, Tier); 13] = [
    ("1", "REF contraction", Tier::Fast),
    ("2", "REF equals reach probability (Monte Carlo)", Tier::Fast),
    ("3", "zero cost value iff no reachable violation", Tier::Fast),
    ("4", "double integrator re-entry", Tier::Full),
    ("5", "learned REF accuracy", Tier::Full),
    ("6", "feasible-region optimality", Tier::Full),
    ("7", "gradient fidelity", Tier::Fast),
    ("8a", "REF step-size ablation", Tier::Full),
    ("8b", "V_h ablation", Tier::Full),
    ("8c", "Lagrangian χ=0 ablation", Tier::Full),
    ("9", "multi-constraint tunnel", Tier::Full),
    ("10", "λ_max bound", Tier::Fast),
    ("11", "byte-identical reruns", Tier::Fast),
];

/// Run one criterion by id. `workdir` receives scratch files and artifacts.
pub fn run_criterion(id: &str, workdir: &Path) -> Option<CriterionResult> {
    let (id, name, _) = *CRITERIA.iter().find(|c| c.0 == id)?;
    Some(match id {
        "1" => timed(id, name, 10.0, ref_contraction),
        "2" => timed(id, name, 120.0, || ref_monte_carlo(100_000)),
        "3" => timed(id, name, 30.0, persistent_safety),
        "4" => timed(id, name, 1200.0, || double_integrator_reentry(Some(workdir))),
        "5" => timed(id, name, 600.0, learned_ref_accuracy),
        "6" => timed(id, name, 900.0, feasible_region_optimality),
        "7" => timed(id, name, 5.0, gradient_fidelity),
        "8a" => timed(id, name, 600.0, schedule_ablation),
        "8b" => timed(id, name, 600.0, vh_ablation),
        "8c" => timed(id, name, 600.0, lagrangian_chi0_ablation),
        "9" => timed(id, name, 1800.0, multi_constraint_tunnel),
        "10" => timed(id, name, 1.0, lambda_bound),
        _ => timed(id, name, 600.0, || reproducibility(&workdir.join("reproducibility"))),
    })
}

/// Run a tier, calling `progress` after each criterion.
pub fn run_acceptance_suite(tier: Tier, workdir: &Path, mut progress: impl FnMut(&CriterionResult)) -> Result<AcceptanceReport> {
    std::fs::create_dir_all(workdir)?;
    let mut report = AcceptanceReport::default();
    for (id, _, t) in CRITERIA {
        if tier == Tier::Fast && t == Tier::Full {
            continue;
        }
        let r = run_criterion(id, workdir).expect("listed criterion");
        progress(&r);
        report.results.push(r);
    }
    report.write_csv(BufWriter::new(File::create(workdir.join("acceptance.csv"))?))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tier_names() {
        assert_eq!("fast".parse::<Tier>().unwrap(), Tier::Fast);
        assert_eq!("full".parse::<Tier>().unwrap(), Tier::Full);
        assert!("fsat".parse::<Tier>().is_err());
    }

    #[test]
    fn log_space_bound_agrees_on_a_hand_value() {
        let b = bound_log_space(1.0, 0.99, 100, 1.0, 1.0);
        assert!((b - 100.0 / 0.99f64.powi(100)).abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_with_constant_p() {
        let theta = [0.0, 0.5, -0.5, 0.0, 1.0, -1.0];
        let err = gradient_error(&gradient_mdp(false).unwrap(), &theta, &[0.6; 3], 3.0).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn state_varying_p_breaks_the_identity() {
        let theta = [0.0, 0.5, -0.5, 0.0, 1.0, -1.0];
        let err = gradient_error(&gradient_mdp(false).unwrap(), &theta, &[0.1, 0.5, 0.9], 3.0).unwrap();
        assert!(err > 1e-3, "{err}");
    }
}
