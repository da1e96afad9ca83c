use std::path::Path;
use std::process::{Command, Output};

use respo_core::env::gridworld::{build_gridworld, grid5};

fn respo(args: &[&str], out_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_respo"))
        .args(args)
        .env("RESPO_OUT", out_root)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

#[test]
fn run_writes_one_row_per_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "a.cfg", "experiment.name = tiny\nenv.kind = grid5\nrun.iterations = 10\neval.every = 5\n");
    let out = respo(&["run", &cfg], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let seed = rows(&dir.path().join("results/tiny/seed_0.csv"));
    assert_eq!(seed.len(), 10);
    assert_eq!(&seed[4][8].is_empty(), &false, "evaluation at iteration 5");
    assert_eq!(rows(&dir.path().join("results/tiny/aggregate.csv")).len(), 10);
}

#[test]
fn aggregate_matches_seed_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "a.cfg", "experiment.name = five\nenv.kind = grid6\nrun.seeds = 0..5\nrun.iterations = 40\n");
    assert!(respo(&["run", &cfg], dir.path()).status.success());
    let base = dir.path().join("results/five");
    let seeds: Vec<Vec<csv::StringRecord>> = (0..5).map(|s| rows(&base.join(format!("seed_{s}.csv")))).collect();
    let agg = rows(&base.join("aggregate.csv"));
    assert_eq!(agg.len(), seeds[0].len());
    for (i, row) in agg.iter().enumerate() {
        // reward_mean is column 1 per seed; its mean and σ are columns 2 and 3.
        let xs: Vec<f64> = seeds.iter().map(|s| s[i][1].parse().unwrap()).collect();
        let m = xs.iter().sum::<f64>() / 5.0;
        let sd = (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 5.0).sqrt();
        assert!((row[2].parse::<f64>().unwrap() - m).abs() <= 1e-12);
        assert!((row[3].parse::<f64>().unwrap() - sd).abs() <= 1e-12);
        assert_eq!(sd == 0.0, xs.iter().all(|&x| x == xs[0]));
    }
}

#[test]
fn config_errors_exit_two_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.cfg", "env.kind = grid5\nlearner.kidn = respo\n");
    let out = respo(&["run", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("learner.kidn") && err.contains("line 2"), "{err}");
}

#[test]
fn tier_typo_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = respo(&["accept", "fsat"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn export_feasible_set() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("open.csv");
    let out = respo(&["export-feasible", "open", "4", path.to_str().unwrap()], dir.path());
    assert!(out.status.success());
    let cells = rows(&path);
    assert_eq!(cells.len(), 16);
    assert!(cells.iter().all(|r| &r[6] == "1"));

    let path = dir.path().join("grid5.csv");
    assert!(respo(&["export-feasible", "grid5", "0", path.to_str().unwrap()], dir.path()).status.success());
    let hazard = rows(&path).into_iter().find(|r| r[3].parse::<f64>().unwrap() > 0.0).unwrap();
    assert_eq!(&hazard[4], "1");

    let out = respo(&["export-feasible", "double_integrator", "1000", path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("MiB"));
}

#[test]
fn oracle_solves_a_model_file() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("grid5.mdp");
    respo_core::mdp_format::write(&build_gridworld(&grid5(0.1)).unwrap(), &model).unwrap();
    let table = dir.path().join("oracle.csv");
    let out = respo(&["oracle", model.to_str().unwrap(), table.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(rows(&table).len(), 25);
}
