//! Building environments from configs, running seeds, writing result files.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use super::config::{DiStart, DiscretizedDoubleIntegrator, EnvConfig, ExperimentConfig, Learner};
use super::metrics::{write_aggregate_csv, write_seed_csv};
use crate::env::discretize::MAX_CELLS;
use crate::env::gridworld::{build_gridworld, graded, grid5, grid6, GridWorldSpec};
use crate::env::{discretize, ContinuousEnv, DroneFeatures, DroneTunnel, StateGrid};
use crate::error::{Error, Result};
use crate::features::OneHot;
use crate::learner::{
    train, train_multiconstraint, BoundInputs, MetricRow, MultiEpisode, MultiTrainerConfig, OracleView, TrainerConfig,
};
use crate::mdp::FiniteMdp;
use crate::oracle::{optimal_ref, OptimalRef, OracleSolution};
use crate::rng::{experiment_key, stream};
use crate::TabularPolicy;

/// Environment variable naming the root for relative output directories.
pub const OUTPUT_ROOT_VAR: &str = "RESPO_OUT";

/// A gridworld with its oracle.
#[derive(Debug, Clone)]
pub struct GridSetup {
    pub spec: GridWorldSpec,
    pub mdp: FiniteMdp,
    pub oracle: OptimalRef,
}

impl GridSetup {
    pub fn build(spec: &GridWorldSpec) -> Result<Self> {
        let mdp = build_gridworld(spec)?;
        let oracle = optimal_ref(&mdp)?;
        Ok(Self { spec: spec.clone(), mdp, oracle })
    }

    /// States that are updated as non-terminal: not absorbing and not walls.
    pub fn ref_mask(&self) -> Vec<bool> {
        (0..self.mdp.n_states())
            .map(|s| !self.mdp.is_absorbing(s) && !self.spec.is_wall(self.spec.cell(s)))
            .collect()
    }

    pub fn view(&self) -> OracleView {
        OracleView {
            phi_target: self.oracle.phi_discounted.clone(),
            ref_mask: self.ref_mask(),
            feasible: self.oracle.feasible.clone(),
        }
    }
}

/// Discretized double integrator with its oracle.
#[derive(Debug, Clone)]
pub struct DoubleIntegratorSetup {
    pub config: DiscretizedDoubleIntegrator,
    pub grid: StateGrid,
    pub mdp: FiniteMdp,
    pub oracle: OptimalRef,
    /// Safe cells outside the optimal feasible set.
    pub infeasible_safe: Vec<usize>,
    /// Cell of the environment's start point.
    pub canonical: usize,
}

impl DoubleIntegratorSetup {
    pub fn grid_for(config: &DiscretizedDoubleIntegrator) -> Result<StateGrid> {
        let n = config.cells;
        StateGrid::centered(&[-config.x_max, -config.v_max], &[config.x_max, config.v_max], &[n, n])
    }

    pub fn build(config: &DiscretizedDoubleIntegrator) -> Result<Self> {
        let grid = Self::grid_for(config)?;
        let a = config.system.a_max;
        let m = config.levels;
        let levels: Vec<Vec<f64>> = (0..m).map(|i| vec![-a + 2.0 * a * i as f64 / (m - 1) as f64]).collect();
        let mut rng = stream(experiment_key("discretize"), 0, 0);
        let samples = if config.system.noise > 0.0 { 16 } else { 1 };
        let mdp = discretize(&config.system, &grid, &levels, samples, &mut rng)?;
        let oracle = optimal_ref(&mdp)?;
        let infeasible_safe = (0..mdp.n_states()).filter(|&s| mdp.cost(s) == 0.0 && !oracle.feasible[s]).collect();
        let canonical = grid.cell_of(&config.system.reset(&mut rng));
        Ok(Self { config: config.clone(), grid, mdp, oracle, infeasible_safe, canonical })
    }

    /// The MDP with the configured start distribution.
    pub fn training_mdp(&self, start: DiStart) -> Result<FiniteMdp> {
        let n = self.mdp.n_states();
        let cells: Vec<usize> = match start {
            DiStart::Canonical => vec![self.canonical],
            DiStart::InfeasibleSafe => self.infeasible_safe.clone(),
            DiStart::Safe => (0..n).filter(|&s| self.mdp.cost(s) == 0.0).collect(),
        };
        if cells.is_empty() {
            return Err(Error::InvalidModel("start distribution is empty".into()));
        }
        let mut d0 = vec![0.0; n];
        for &s in &cells {
            d0[s] = 1.0 / cells.len() as f64;
        }
        self.mdp.with_initial(&d0)
    }

    pub fn view(&self) -> OracleView {
        OracleView {
            phi_target: self.oracle.phi_discounted.clone(),
            ref_mask: vec![true; self.mdp.n_states()],
            feasible: self.oracle.feasible.clone(),
        }
    }

    /// Greedy rollout of a tabular policy from `start` over the horizon.
    pub fn rollout(&self, policy: &TabularPolicy, start: usize) -> Vec<usize> {
        let mut path = vec![start];
        let mut s = start;
        for _ in 0..self.mdp.horizon() {
            let a = (0..self.mdp.n_actions()).max_by(|&a, &b| policy.prob(s, a).total_cmp(&policy.prob(s, b))).unwrap_or(0);
            s = self.mdp.successors(s, a)[0].0;
            path.push(s);
        }
        path
    }
}

/// Smallest positive transition probability.
pub fn min_transition_prob(mdp: &FiniteMdp) -> f64 {
    let mut p = 1.0f64;
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            for &(_, q) in mdp.successors(s, a) {
                if q > 0.0 {
                    p = p.min(q);
                }
            }
        }
    }
    p
}

fn bound_inputs(mdp: &FiniteMdp) -> Option<BoundInputs> {
    let r_max = mdp.r_max();
    let h_delta = mdp.h_delta()?;
    (r_max > 0.0 && mdp.discount() < 1.0).then(|| BoundInputs {
        r_max,
        gamma: mdp.discount(),
        horizon: mdp.horizon(),
        h_delta,
        p_min: min_transition_prob(mdp),
    })
}

#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub rows: Vec<MetricRow>,
    pub diverged: Option<String>,
    pub warnings: Vec<String>,
    /// Final greedy episodes of multi-constraint runs.
    pub evaluation: Vec<MultiEpisode>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub dir: PathBuf,
    pub seed_files: Vec<PathBuf>,
    pub aggregate: PathBuf,
    pub results: Vec<SeedResult>,
}

impl RunReport {
    pub fn diverged(&self) -> impl Iterator<Item = &SeedResult> {
        self.results.iter().filter(|r| r.diverged.is_some())
    }
}

fn run_tabular(mdp: &FiniteMdp, view: Option<&OracleView>, trainer: &TrainerConfig, experiment: u64, seed: u64) -> Result<SeedResult> {
    let config = TrainerConfig { bound: trainer.bound.or_else(|| bound_inputs(mdp)), ..trainer.clone() };
    let out = train(mdp, OneHot { n_states: mdp.n_states() }, &config, experiment, seed, view)?;
    Ok(SeedResult { seed, rows: out.rows, diverged: out.diverged, warnings: out.warnings, evaluation: Vec::new() })
}

/// Map over seeds with at most `available_parallelism` threads, keeping order.
pub fn par_map<T, F>(seeds: &[u64], job: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync,
{
    let width = std::thread::available_parallelism().map_or(1, |n| n.get()).max(1);
    if width == 1 {
        return seeds.iter().map(|&s| job(s)).collect();
    }
    let mut out = Vec::with_capacity(seeds.len());
    for chunk in seeds.chunks(width) {
        let job = &job;
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunk.iter().map(|&s| scope.spawn(move || job(s))).collect();
            out.extend(handles.into_iter().map(|h| h.join().expect("seed thread panicked")));
        });
    }
    out
}

fn run_seeds<F>(seeds: &[u64], job: F) -> Result<Vec<SeedResult>>
where
    F: Fn(u64) -> Result<SeedResult> + Sync,
{
    par_map(seeds, job).into_iter().collect()
}

/// Train every seed of an experiment without writing files.
pub fn run_seeds_for(config: &ExperimentConfig) -> Result<Vec<SeedResult>> {
    let experiment = experiment_key(&config.name);
    match (&config.env, config.learner) {
        (EnvConfig::Grid { spec, .. }, Learner::Single(_)) => {
            let setup = GridSetup::build(spec)?;
            let view = config.oracle.then(|| setup.view());
            run_seeds(&config.seeds, |s| run_tabular(&setup.mdp, view.as_ref(), &config.trainer, experiment, s))
        }
        (EnvConfig::DoubleIntegrator(di), Learner::Single(_)) => {
            let setup = DoubleIntegratorSetup::build(di)?;
            let mdp = setup.training_mdp(di.start)?;
            let view = config.oracle.then(|| setup.view());
            run_seeds(&config.seeds, |s| run_tabular(&mdp, view.as_ref(), &config.trainer, experiment, s))
        }
        (EnvConfig::Drone { spec, joint_bins }, Learner::Multi { kind, chi }) => {
            let env = DroneTunnel::new(spec.clone())?;
            let multi = MultiTrainerConfig { kind, chi, base: config.trainer.clone() };
            run_seeds(&config.seeds, |s| {
                let feats = DroneFeatures::lattice(&env, *joint_bins);
                let out = train_multiconstraint(&env, feats, &multi, experiment, s, config.final_eval_episodes)?;
                Ok(SeedResult { seed: s, rows: out.rows, diverged: out.diverged, warnings: Vec::new(), evaluation: out.evaluation })
            })
        }
        (env, learner) => Err(Error::Config {
            key: "learner.kind".into(),
            message: format!("`{}` cannot run on `{}`", learner.name(), env.kind()),
        }),
    }
}

fn write_evaluation(path: &Path, episodes: &[MultiEpisode]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["episode", "reward", "hc1_violations", "hc2_violations", "soft_violations", "soft_at_start", "soft_at_end", "reached_goal"])?;
    for (i, e) in episodes.iter().enumerate() {
        w.write_record([
            i.to_string(),
            e.reward.to_string(),
            e.violations[0].to_string(),
            e.violations[1].to_string(),
            e.violations[2].to_string(),
            u8::from(e.soft_at_ends.0).to_string(),
            u8::from(e.soft_at_ends.1).to_string(),
            u8::from(e.reached_goal).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Run an experiment and write `seed_<s>.csv` per seed plus `aggregate.csv`
/// into `<output>/<name>/`. Diverged seeds still get their partial files.
pub fn run_experiment(config: &ExperimentConfig, root: Option<&Path>) -> Result<RunReport> {
    let dir = config.resolved_output(root).join(&config.name);
    std::fs::create_dir_all(&dir)?;
    let results = run_seeds_for(config)?;
    let mut seed_files = Vec::new();
    for r in &results {
        if let Some(d) = &r.diverged {
            log::error!("seed {}: {d}", r.seed);
        }
        let path = dir.join(format!("seed_{}.csv", r.seed));
        write_seed_csv(BufWriter::new(File::create(&path)?), &r.rows, r.diverged.is_some())?;
        seed_files.push(path);
        if !r.evaluation.is_empty() {
            write_evaluation(&dir.join(format!("seed_{}_evaluation.csv", r.seed)), &r.evaluation)?;
        }
    }
    let aggregate = dir.join("aggregate.csv");
    let runs: Vec<(&[MetricRow], bool)> = results.iter().map(|r| (r.rows.as_slice(), r.diverged.is_some())).collect();
    write_aggregate_csv(BufWriter::new(File::create(&aggregate)?), &runs)?;
    Ok(RunReport { dir, seed_files, aggregate, results })
}

/// Load a config file and run it, resolving relative output against `$RESPO_OUT`.
pub fn run_experiment_file(path: &Path) -> Result<RunReport> {
    let config = ExperimentConfig::load(path)?;
    let root = std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from);
    run_experiment(&config, root.as_deref())
}

/// Rough bytes needed to build and solve a discretized model.
pub fn memory_estimate(cells: usize, actions: usize) -> usize {
    cells * actions * 48 + cells * 64
}

/// Names accepted by [`export_feasible_set`].
pub const EXPORT_ENVS: [&str; 5] = ["grid5", "grid6", "graded", "open", "double_integrator"];

/// Write per-cell `φ*` and the feasible flag. The resolution sets the cells
/// per axis for `double_integrator` and the side of the hazard-free `open`
/// grid; gridworld presets use their own cells and ignore it.
pub fn export_feasible_set(env: &str, resolution: usize, out: &Path) -> Result<usize> {
    let too_big = |cells: usize, actions: usize| {
        Error::Unsupported(format!(
            "resolution {resolution} gives {cells} cells (limit {MAX_CELLS}); about {:.1} MiB would be needed",
            memory_estimate(cells, actions) as f64 / (1 << 20) as f64
        ))
    };
    let (mdp, coords, names): (FiniteMdp, Vec<Vec<f64>>, [&str; 2]) = match env {
        "grid5" | "grid6" | "graded" | "open" => {
            let spec = match env {
                "grid5" => grid5(0.1),
                "grid6" => grid6(0.0),
                "graded" => graded(0.0),
                _ => {
                    let cells = resolution.saturating_mul(resolution);
                    if resolution == 0 || cells > MAX_CELLS {
                        return Err(too_big(cells, 4));
                    }
                    GridWorldSpec { width: resolution, height: resolution, ..GridWorldSpec::default() }
                }
            };
            let mdp = build_gridworld(&spec)?;
            let coords = (0..spec.n_states()).map(|s| {
                let (x, y) = spec.cell(s);
                vec![x as f64, y as f64]
            });
            (mdp, coords.collect(), ["x", "y"])
        }
        "double_integrator" => {
            let cells = resolution.saturating_mul(resolution);
            let di = DiscretizedDoubleIntegrator { cells: resolution, ..DiscretizedDoubleIntegrator::default() };
            if cells > MAX_CELLS {
                return Err(too_big(cells, di.levels));
            }
            let setup = DoubleIntegratorSetup::build(&di)?;
            let coords = (0..setup.mdp.n_states()).map(|s| setup.grid.center(s)).collect();
            (setup.mdp, coords, ["x", "v"])
        }
        other => {
            return Err(Error::Config {
                key: "env".into(),
                message: format!("unknown environment `{other}` ({})", EXPORT_ENVS.join(", ")),
            })
        }
    };
    let opt = optimal_ref(&mdp)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(out)?));
    w.write_record(["cell", names[0], names[1], "cost", "phi_star", "phi_star_discounted", "feasible"])?;
    for s in 0..mdp.n_states() {
        w.write_record([
            s.to_string(),
            coords[s][0].to_string(),
            coords[s][1].to_string(),
            mdp.cost(s).to_string(),
            opt.phi_exact[s].to_string(),
            opt.phi_discounted[s].to_string(),
            u8::from(opt.feasible[s]).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(mdp.n_states())
}

/// Solve an MDP file under the uniform policy and write the oracle table.
pub fn oracle_report(mdp_path: &Path, out: &Path) -> Result<()> {
    let mdp = crate::mdp_format::read(mdp_path)?;
    let policy = TabularPolicy::uniform(mdp.n_states(), mdp.n_actions());
    let sol = OracleSolution::compute(&mdp, &policy)?;
    sol.write_csv(BufWriter::new(File::create(out)?))
}
