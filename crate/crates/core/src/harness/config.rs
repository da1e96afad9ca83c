//! Flat `key = value` experiment files.
//!
//! ```text
//! # comments start with '#'
//! experiment.name = grid5_respo
//! env.kind = grid5
//! env.slip = 0.1
//! learner.kind = respo
//! learner.schedule.c3 = 0.5
//! run.seeds = 0..5
//! run.max_steps = 1000000
//! ```
//!
//! Every key must be recognised; typos are reported with their line.

use std::cell::Cell;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::env::gridworld::{graded, grid5, grid6, GridWorldSpec};
use crate::env::{DoubleIntegrator, DroneTunnelSpec, Progress, StartRegion};
use crate::error::{Error, Result};
use crate::learner::{LearnerKind, MultiKind, TrainerConfig};
use crate::schedule::ScheduleSet;

/// Step-size constants and exponents used for tabular runs.
pub const TABULAR_C: [f64; 4] = [1.0, 0.5, 0.5, 0.1];
pub const ORDERED_RHO: [f64; 4] = [0.51, 0.52, 0.53, 0.7];
pub const DOUBLE_INTEGRATOR_C: [f64; 4] = [1.0, 0.1, 0.1, 0.02];
pub const DRONE_C: [f64; 4] = [1.0, 2.0, 0.5, 1e-5];

#[derive(Debug)]
struct Entry {
    value: String,
    line: usize,
    used: Cell<bool>,
}

/// Parsed key/value pairs with line numbers.
#[derive(Debug, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, Entry>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::Parse { line, message: format!("expected `key = value`, got `{content}`") });
            };
            let key = key.trim();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
                return Err(Error::Parse { line, message: format!("invalid key `{key}`") });
            }
            let entry = Entry { value: value.trim().to_string(), line, used: Cell::new(false) };
            if let Some(prev) = entries.insert(key.to_string(), entry) {
                return Err(Error::Parse { line, message: format!("duplicate key `{key}` (first set on line {})", prev.line) });
            }
        }
        Ok(Self { entries })
    }

    fn raw(&self, key: &str) -> Option<&Entry> {
        let e = self.entries.get(key)?;
        e.used.set(true);
        Some(e)
    }

    pub fn has(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        let Some(e) = self.raw(key) else { return Ok(None) };
        e.value.parse().map(Some).map_err(|_| Error::Config {
            key: key.into(),
            message: format!("line {}: cannot parse `{}`", e.line, e.value),
        })
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn string(&self, key: &str) -> Option<String> {
        self.raw(key).map(|e| e.value.clone())
    }

    fn invalid(&self, key: &str, message: impl std::fmt::Display) -> Error {
        let line = self.entries.get(key).map_or(String::new(), |e| format!("line {}: ", e.line));
        Error::Config { key: key.into(), message: format!("{line}{message}") }
    }

    /// Fails on the first key nobody asked for.
    pub fn check_all_used(&self) -> Result<()> {
        match self.entries.iter().find(|(_, e)| !e.used.get()) {
            Some((k, e)) => Err(Error::Config { key: k.clone(), message: format!("line {}: unknown key", e.line) }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiStart {
    /// The environment's own start point.
    Canonical,
    /// Uniform over safe cells outside the optimal feasible set.
    InfeasibleSafe,
    /// Uniform over all safe cells.
    Safe,
}

/// A double integrator discretized onto a square grid of cell centers.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedDoubleIntegrator {
    pub system: DoubleIntegrator,
    /// Cells per axis.
    pub cells: usize,
    /// Outermost cell centers: `x ∈ [−x_max, x_max]`, `v ∈ [−v_max, v_max]`.
    pub x_max: f64,
    pub v_max: f64,
    /// Evenly spaced acceleration levels over `[−a_max, a_max]`.
    pub levels: usize,
    pub start: DiStart,
}

impl Default for DiscretizedDoubleIntegrator {
    fn default() -> Self {
        Self {
            system: DoubleIntegrator { dt: 0.7, horizon: 100, ..DoubleIntegrator::default() },
            cells: 41,
            x_max: 7.0,
            v_max: 3.5,
            levels: 5,
            start: DiStart::InfeasibleSafe,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvConfig {
    Grid { preset: String, spec: GridWorldSpec },
    DoubleIntegrator(DiscretizedDoubleIntegrator),
    Drone { spec: DroneTunnelSpec, joint_bins: usize },
}

impl EnvConfig {
    pub fn kind(&self) -> &str {
        match self {
            EnvConfig::Grid { preset, .. } => preset,
            EnvConfig::DoubleIntegrator(_) => "double_integrator",
            EnvConfig::Drone { .. } => "drone",
        }
    }

    /// Step-size constants, exponents, episodes per iteration and step budget.
    pub fn preset(&self) -> (ScheduleSet, usize, u64) {
        match self {
            EnvConfig::Grid { .. } => (ScheduleSet::polynomial(TABULAR_C, ORDERED_RHO), 1, 1_000_000),
            EnvConfig::DoubleIntegrator(_) => (ScheduleSet::polynomial(DOUBLE_INTEGRATOR_C, ORDERED_RHO), 10, 10_000_000),
            EnvConfig::Drone { .. } => (ScheduleSet::polynomial(DRONE_C, ORDERED_RHO), 50, 6_000_000),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Learner {
    Single(LearnerKind),
    Multi { kind: MultiKind, chi: f64 },
}

impl Learner {
    pub fn name(&self) -> &'static str {
        match self {
            Learner::Single(k) => k.name(),
            Learner::Multi { kind: MultiKind::Respo, .. } => "respo",
            Learner::Multi { kind: MultiKind::ScalarLagrangian, .. } => "scalar_lagrangian",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub env: EnvConfig,
    pub learner: Learner,
    /// Learner kind inside is ignored for multi-constraint runs.
    pub trainer: TrainerConfig,
    pub seeds: Vec<u64>,
    /// Greedy episodes after training (multi-constraint runs).
    pub final_eval_episodes: usize,
    pub oracle: bool,
    pub output_dir: PathBuf,
}

fn parse_seeds(kv: &KeyValues) -> Result<Vec<u64>> {
    let key = "run.seeds";
    let Some(text) = kv.string(key) else { return Ok(vec![0]) };
    let bad = |m: String| kv.invalid(key, m);
    let seeds: Vec<u64> = if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad(format!("bad range `{text}`")))?;
        let b: u64 = b.trim().parse().map_err(|_| bad(format!("bad range `{text}`")))?;
        (a..b).collect()
    } else {
        text.split(',')
            .map(|s| s.trim().parse().map_err(|_| bad(format!("bad seed `{}`", s.trim()))))
            .collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(bad("at least one seed is required".into()));
    }
    let mut sorted = seeds.clone();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(bad("seeds must be distinct".into()));
    }
    Ok(seeds)
}

fn parse_env(kv: &KeyValues) -> Result<EnvConfig> {
    let kind = kv.string("env.kind").ok_or_else(|| Error::Config { key: "env.kind".into(), message: "missing".into() })?;
    let horizon: Option<usize> = kv.get("env.horizon")?;
    let discount: Option<f64> = kv.get("env.discount")?;
    match kind.as_str() {
        "grid5" | "grid6" | "graded" => {
            let mut spec = match kind.as_str() {
                "grid5" => grid5(0.1),
                "grid6" => grid6(0.0),
                _ => graded(0.0),
            };
            spec.slip = kv.get_or("env.slip", spec.slip)?;
            spec.hazard_trap = kv.get_or("env.trap", false)?;
            spec.horizon = horizon.unwrap_or(spec.horizon);
            spec.discount = discount.unwrap_or(spec.discount);
            spec.validate().map_err(|e| kv.invalid("env.kind", e))?;
            Ok(EnvConfig::Grid { preset: kind, spec })
        }
        "double_integrator" => {
            let mut di = DiscretizedDoubleIntegrator::default();
            let s = &mut di.system;
            s.dt = kv.get_or("env.dt", s.dt)?;
            s.a_max = kv.get_or("env.a_max", s.a_max)?;
            s.bound = kv.get_or("env.bound", s.bound)?;
            s.reward_scale = kv.get_or("env.reward_scale", s.reward_scale)?;
            s.horizon = horizon.unwrap_or(s.horizon);
            s.discount = discount.unwrap_or(s.discount);
            if let Some(x) = kv.get::<f64>("env.start_x")? {
                let v = kv.get_or("env.start_v", 0.0)?;
                s.start = StartRegion::Point(vec![x, v]);
            }
            di.cells = kv.get_or("env.cells", di.cells)?;
            di.x_max = kv.get_or("env.x_max", di.x_max)?;
            di.v_max = kv.get_or("env.v_max", di.v_max)?;
            di.levels = kv.get_or("env.levels", di.levels)?;
            di.start = match kv.string("env.start").as_deref() {
                None | Some("infeasible_safe") => DiStart::InfeasibleSafe,
                Some("canonical") => DiStart::Canonical,
                Some("safe") => DiStart::Safe,
                Some(other) => return Err(kv.invalid("env.start", format!("unknown start `{other}`"))),
            };
            if !(di.system.dt > 0.0) || di.cells < 2 || di.levels < 2 || !(di.x_max > 0.0 && di.v_max > 0.0) {
                return Err(kv.invalid("env.kind", "double integrator needs dt > 0, cells ≥ 2, levels ≥ 2"));
            }
            Ok(EnvConfig::DoubleIntegrator(di))
        }
        "drone" => {
            let mut spec = DroneTunnelSpec::default();
            spec.horizon = horizon.unwrap_or(spec.horizon);
            spec.discount = discount.unwrap_or(spec.discount);
            spec.slip = kv.get_or("env.slip", spec.slip)?;
            spec.progress_coef = kv.get_or("env.progress_coef", spec.progress_coef)?;
            spec.time_penalty = kv.get_or("env.time_penalty", spec.time_penalty)?;
            spec.factored_policy = kv.get_or("env.factored_policy", spec.factored_policy)?;
            spec.progress = match kv.string("env.progress").as_deref() {
                None | Some("route") => Progress::Route,
                Some("euclidean") => Progress::Euclidean,
                Some(other) => return Err(kv.invalid("env.progress", format!("unknown progress `{other}`"))),
            };
            let joint_bins = kv.get_or("env.joint_bins", 0)?;
            spec.validate().map_err(|e| kv.invalid("env.kind", e))?;
            Ok(EnvConfig::Drone { spec, joint_bins })
        }
        other => Err(kv.invalid(
            "env.kind",
            format!("unknown environment `{other}` (grid5, grid6, graded, double_integrator, drone)"),
        )),
    }
}

fn parse_learner(kv: &KeyValues, env: &EnvConfig) -> Result<Learner> {
    let key = "learner.kind";
    let name = kv.string(key).unwrap_or_else(|| "respo".into());
    let multi = matches!(env, EnvConfig::Drone { .. });
    let chi = kv.get_or("learner.chi", if multi { 1.0 } else { 0.0 })?;
    let nu = kv.get_or("learner.nu", 0.5)?;
    if multi {
        let kind = match name.as_str() {
            "respo" => MultiKind::Respo,
            "scalar_lagrangian" => MultiKind::ScalarLagrangian,
            other => {
                return Err(kv.invalid(key, format!("`{other}` is not available on the drone tunnel (respo, scalar_lagrangian)")))
            }
        };
        return Ok(Learner::Multi { kind, chi });
    }
    let kind = match name.as_str() {
        "respo" => LearnerKind::Respo,
        "unconstrained" => LearnerKind::Unconstrained,
        "scalar_lagrangian" => LearnerKind::ScalarLagrangian { chi },
        "lagrangian_chi0" => LearnerKind::ScalarLagrangian { chi: 0.0 },
        "fac" => LearnerKind::Fac,
        "rcrl" => LearnerKind::Rcrl,
        "cbf" => LearnerKind::Cbf { nu },
        "respo_vh" => LearnerKind::RespoWithVh,
        other => return Err(kv.invalid(key, format!("unknown learner `{other}`"))),
    };
    kind.validate()?;
    Ok(Learner::Single(kind))
}

fn parse_schedule(kv: &KeyValues, preset: ScheduleSet, iterations: u64) -> Result<ScheduleSet> {
    let mut c = [0.0; 4];
    let mut rho = ORDERED_RHO;
    for i in 0..4 {
        c[i] = preset.laws[i].constant();
        if let crate::schedule::Law::Polynomial { rho: r, .. } = preset.laws[i] {
            rho[i] = r;
        }
        c[i] = kv.get_or(&format!("learner.schedule.c{}", i + 1), c[i])?;
        rho[i] = kv.get_or(&format!("learner.schedule.rho{}", i + 1), rho[i])?;
    }
    let key = "learner.schedule.law";
    let schedule = match kv.string(key).as_deref() {
        None | Some("polynomial") => ScheduleSet::polynomial(c, rho),
        Some("linear") => ScheduleSet::linear(c, iterations),
        Some("practical") => ScheduleSet::practical(iterations),
        Some(other) => return Err(kv.invalid(key, format!("unknown law `{other}` (polynomial, linear, practical)"))),
    };
    schedule.validate()?;
    Ok(schedule)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        let name = kv.string("experiment.name").unwrap_or_else(|| "experiment".into());
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(kv.invalid("experiment.name", "use letters, digits, '_' or '-'"));
        }
        let env = parse_env(&kv)?;
        let learner = parse_learner(&kv, &env)?;
        let (schedule, epi, steps) = env.preset();
        let has_budget = kv.has("run.iterations") || kv.has("run.max_steps");
        let iterations = kv.get_or("run.iterations", if has_budget { u64::MAX } else { 1000 })?;
        let max_steps = match kv.get::<u64>("run.max_steps")? {
            Some(0) => None,
            Some(m) => Some(m),
            None if !has_budget => Some(steps),
            None => None,
        };
        if iterations == u64::MAX && max_steps.is_none() {
            return Err(kv.invalid("run.iterations", "set run.iterations or run.max_steps"));
        }
        let schedule_horizon = match max_steps {
            Some(m) if iterations == u64::MAX => (m / epi.max(1) as u64).max(1),
            _ => iterations,
        };
        let defaults = TrainerConfig::default();
        let trainer = TrainerConfig {
            kind: match learner {
                Learner::Single(k) => k,
                Learner::Multi { .. } => LearnerKind::Respo,
            },
            schedule: parse_schedule(&kv, schedule, schedule_horizon)?,
            iterations,
            episodes_per_iteration: kv.get_or("run.episodes_per_iteration", epi)?,
            lambda_max: kv.get_or("learner.lambda_max", defaults.lambda_max)?,
            omega_init: kv.get_or("learner.omega_init", defaults.omega_init)?,
            p_init: kv.get_or("learner.p_init", defaults.p_init)?,
            ref_discount: kv.get("learner.ref_discount")?,
            reach_discount: kv.get("learner.reach_discount")?,
            cbf_dt: kv.get_or("learner.cbf_dt", defaults.cbf_dt)?,
            max_steps,
            eval_every: kv.get_or("eval.every", defaults.eval_every)?,
            eval_episodes: kv.get_or("eval.episodes", defaults.eval_episodes)?,
            bound: None,
            record_wall_clock: kv.get_or("run.record_wall_clock", false)?,
        };
        trainer.validate()?;
        let seeds = parse_seeds(&kv)?;
        let final_eval_episodes = kv.get_or("eval.final_episodes", 100)?;
        let oracle = kv.get_or("oracle.attach", !matches!(env, EnvConfig::Drone { .. }))?;
        if oracle && matches!(env, EnvConfig::Drone { .. }) {
            return Err(kv.invalid("oracle.attach", "the drone tunnel has no finite oracle"));
        }
        let output_dir = PathBuf::from(kv.string("output.dir").unwrap_or_else(|| "results".into()));
        kv.check_all_used()?;
        Ok(Self { name, env, learner, trainer, seeds, final_eval_episodes, oracle, output_dir })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Output directory, resolved against `root` when relative.
    pub fn resolved_output(&self, root: Option<&Path>) -> PathBuf {
        match root {
            Some(r) if self.output_dir.is_relative() => r.join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config() {
        let c = ExperimentConfig::parse("env.kind = grid5\nrun.iterations = 10\n").unwrap();
        assert_eq!(c.seeds, vec![0]);
        assert_eq!(c.trainer.iterations, 10);
        assert_eq!(c.trainer.max_steps, None);
        assert!(c.oracle);
        assert_eq!(c.learner, Learner::Single(LearnerKind::Respo));
    }

    #[test]
    fn seed_forms() {
        let c = ExperimentConfig::parse("env.kind = grid6\nrun.seeds = 3..6\n").unwrap();
        assert_eq!(c.seeds, vec![3, 4, 5]);
        assert_eq!(c.trainer.max_steps, Some(1_000_000));
        let c = ExperimentConfig::parse("env.kind = grid6\nrun.seeds = 7, 1\n").unwrap();
        assert_eq!(c.seeds, vec![7, 1]);
    }

    fn config_error(text: &str) -> (String, String) {
        match ExperimentConfig::parse(text) {
            Err(Error::Config { key, message }) => (key, message),
            Err(Error::Parse { line, message }) => (format!("line {line}"), message),
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn diagnostics_name_key_and_line() {
        let (key, msg) = config_error("env.kind = grid5\n\nlearner.kidn = respo\n");
        assert_eq!(key, "learner.kidn");
        assert!(msg.contains("line 3"), "{msg}");
        let (key, msg) = config_error("env.kind = grid5\nenv.slip = lots\n");
        assert_eq!(key, "env.slip");
        assert!(msg.contains("line 2"));
        let (key, _) = config_error("env.kind = grid5\nrun.seeds = 1,1\n");
        assert_eq!(key, "run.seeds");
        let (key, _) = config_error("env.kind = grid5\nrun.iterations = 0\n");
        assert_eq!(key, "run.iterations");
        let (key, _) = config_error("env.kind = maze\n");
        assert_eq!(key, "env.kind");
        let (key, _) = config_error("env.kind = grid5\nno equals sign\n");
        assert_eq!(key, "line 2");
        let (key, _) = config_error("env.kind = grid5\nenv.kind = grid6\n");
        assert_eq!(key, "line 2");
        let (key, _) = config_error("env.kind = drone\nlearner.kind = rcrl\n");
        assert_eq!(key, "learner.kind");
    }

    #[test]
    fn schedule_keys_override_preset() {
        let c = ExperimentConfig::parse("env.kind = grid5\nlearner.schedule.c3 = 50\n").unwrap();
        assert_eq!(c.trainer.schedule.zeta(3, 0), 50.0);
        assert_eq!(c.trainer.schedule.zeta(1, 0), TABULAR_C[0]);
        let (key, _) = config_error("env.kind = grid5\nlearner.schedule.rho2 = 0.9\n");
        assert!(key.starts_with("schedule"), "{key}");
    }

    #[test]
    fn drone_defaults() {
        let c = ExperimentConfig::parse("env.kind = drone\n").unwrap();
        assert_eq!(c.learner, Learner::Multi { kind: MultiKind::Respo, chi: 1.0 });
        assert!(!c.oracle);
        assert_eq!(c.trainer.episodes_per_iteration, 50);
    }
}
