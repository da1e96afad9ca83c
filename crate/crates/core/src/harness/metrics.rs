//! Metric CSV files: one per seed and an aggregate across seeds.
//!
//! Column order is fixed. Missing values are empty fields; floats use the
//! shortest representation that round-trips.

use std::io::Write;

use crate::error::Result;
use crate::learner::MetricRow;

/// Per-seed columns, in order.
pub const METRIC_COLUMNS: [&str; 16] = [
    "iteration",
    "reward_mean",
    "reward_std",
    "violations_mean",
    "violations_std",
    "discounted_cost_mean",
    "lambda",
    "ref_error",
    "eval_reward",
    "eval_violation_free_rate",
    "feasible_zero_violation_rate",
    "hc1_violations",
    "hc2_violations",
    "soft_violations",
    "wall_ms",
    "status",
];

/// Numeric columns that get aggregated (everything but `iteration` and `status`).
pub const AGGREGATED: std::ops::Range<usize> = 1..15;

pub const STATUS_OK: &str = "ok";
/// Rows of a run stopped by the divergence guard.
pub const STATUS_PARTIAL: &str = "partial";

fn values(row: &MetricRow) -> [Option<f64>; 14] {
    let ch = row.channel_violations;
    [
        Some(row.reward_mean),
        Some(row.reward_std),
        Some(row.violations_mean),
        Some(row.violations_std),
        Some(row.discounted_cost_mean),
        Some(row.lambda),
        row.ref_error,
        row.eval_reward,
        row.eval_violation_free_rate,
        row.feasible_zero_violation_rate,
        ch.map(|c| c[0]),
        ch.map(|c| c[1]),
        ch.map(|c| c[2]),
        row.wall_ms,
    ]
}

fn field(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub fn write_seed_csv<W: Write>(out: W, rows: &[MetricRow], partial: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRIC_COLUMNS)?;
    let status = if partial { STATUS_PARTIAL } else { STATUS_OK };
    for row in rows {
        let mut rec = vec![row.iteration.to_string()];
        rec.extend(values(row).into_iter().map(field));
        rec.push(status.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn aggregate_columns() -> Vec<String> {
    let mut cols = vec!["iteration".to_string(), "seeds".to_string()];
    for c in &METRIC_COLUMNS[AGGREGATED] {
        cols.push(format!("{c}_mean"));
        cols.push(format!("{c}_std"));
    }
    cols.push("status".into());
    cols
}

/// Population mean and standard deviation, so σ is zero exactly when all
/// values agree.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Row `i` of the aggregate summarises row `i` of every seed that has one.
/// A statistic is left empty when no seed reports that column.
pub fn write_aggregate_csv<W: Write>(out: W, runs: &[(&[MetricRow], bool)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(aggregate_columns())?;
    let len = runs.iter().map(|r| r.0.len()).max().unwrap_or(0);
    for i in 0..len {
        let present: Vec<&MetricRow> = runs.iter().filter_map(|r| r.0.get(i)).collect();
        let partial = runs.iter().any(|r| r.1 && r.0.len() <= i + 1);
        let mut rec = vec![present[0].iteration.to_string(), present.len().to_string()];
        let cols: Vec<[Option<f64>; 14]> = present.iter().map(|r| values(r)).collect();
        for j in 0..14 {
            let xs: Vec<f64> = cols.iter().filter_map(|c| c[j]).collect();
            if xs.is_empty() {
                rec.extend([String::new(), String::new()]);
            } else {
                let (m, s) = mean_std(&xs);
                rec.extend([m.to_string(), s.to_string()]);
            }
        }
        rec.push(if partial { STATUS_PARTIAL } else { STATUS_OK }.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(k: u64, r: f64) -> MetricRow {
        MetricRow { iteration: k, reward_mean: r, lambda: 0.5, ref_error: (k == 0).then_some(0.25), ..MetricRow::default() }
    }

    #[test]
    fn header_and_empty_fields() {
        let mut buf = Vec::new();
        write_seed_csv(&mut buf, &[row(0, 1.5), row(1, -2.0)], false).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], METRIC_COLUMNS.join(","));
        assert_eq!(lines[1], "0,1.5,0,0,0,0,0.5,0.25,,,,,,,,ok");
        assert_eq!(lines[2], "1,-2,0,0,0,0,0.5,,,,,,,,,ok");
    }

    #[test]
    fn identical_seeds_have_zero_spread() {
        let a = [row(0, 1.0), row(1, 2.0)];
        let b = [row(0, 3.0), row(1, 2.0)];
        let mut buf = Vec::new();
        write_aggregate_csv(&mut buf, &[(&a, false), (&b, false)]).unwrap();
        let mut r = csv::Reader::from_reader(buf.as_slice());
        let recs: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
        assert_eq!(recs.len(), 2);
        assert_eq!(&recs[0][2], "2");
        assert_eq!(&recs[0][3], "1");
        assert_eq!(&recs[1][2], "2");
        assert_eq!(&recs[1][3], "0");
    }
}
