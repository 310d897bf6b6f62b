//! Runs a grid of conditions x seeds and summarises them as median and
//! interquartile-range curves.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use statrs::statistics::{Data, OrderStatistics};

use super::config::{Condition, ExperimentConfig};
use super::runner::{run_experiment, RunOptions, RunRecord, CSV_VERSION};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub episode: u64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub runs: usize,
}

/// Median, lower and upper quartile.
pub fn median_iqr(values: &[f64]) -> (f64, f64, f64) {
    let mut d = Data::new(values.to_vec());
    (d.median(), d.lower_quartile(), d.upper_quartile())
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub metric: String,
    pub runs: Vec<(Condition, u64, RunRecord)>,
    pub curves: BTreeMap<&'static str, Vec<CurvePoint>>,
}

impl Comparison {
    fn records(&self, condition: Condition) -> impl Iterator<Item = &RunRecord> {
        self.runs
            .iter()
            .filter(move |(c, _, _)| *c == condition)
            .map(|(_, _, r)| r)
    }

    /// Per-run mean of the metric over its last `window` episodes.
    pub fn tail_means(&self, condition: Condition, window: usize) -> Vec<f64> {
        self.records(condition)
            .filter_map(|r| r.tail_mean(&self.metric, window))
            .collect()
    }

    /// Median across seeds of [`Comparison::tail_means`].
    pub fn tail_median(&self, condition: Condition, window: usize) -> Option<f64> {
        let v = self.tail_means(condition, window);
        (!v.is_empty()).then(|| median_iqr(&v).0)
    }
}

/// Curve of the metric across runs, one point per episode reached by every
/// run.
pub fn aggregate(records: &[&RunRecord]) -> Vec<CurvePoint> {
    let Some(first) = records.first() else {
        return Vec::new();
    };
    let len = records.iter().map(|r| r.rows.len()).min().unwrap_or(0);
    let series: Vec<Vec<f64>> = records.iter().map(|r| r.metric_series()).collect();
    (0..len)
        .map(|i| {
            let vals: Vec<f64> = series.iter().map(|s| s[i]).collect();
            let (median, q1, q3) = median_iqr(&vals);
            CurvePoint {
                episode: first.rows[i].episode,
                median,
                q1,
                q3,
                runs: vals.len(),
            }
        })
        .collect()
}

/// Trains every (condition, seed) pair under `base.experiment.out_dir`
/// (`<condition>/seed-<seed>`) and writes `compare.csv` plus one
/// `curve-<condition>.csv` per condition.
pub fn compare_conditions(base: &ExperimentConfig, conditions: &[Condition], seeds: &[u64]) -> Result<Comparison> {
    if conditions.is_empty() || seeds.is_empty() {
        return Err(Error::Config(
            "compare needs at least one condition and one seed".into(),
        ));
    }
    let root = base.experiment.out_dir.clone();
    std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let mut runs = Vec::new();
    let mut metric = String::new();
    for &condition in conditions {
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.experiment.condition = condition;
            cfg.experiment.seed = seed;
            if !condition.is_plastic() {
                cfg.experiment.rule = None;
            }
            if condition.is_plastic() {
                cfg.experiment.hidden_size = None;
            }
            cfg.experiment.out_dir = root.join(condition.name()).join(format!("seed-{seed}"));
            log::info!("compare: {} seed {seed}", condition.name());
            let record = run_experiment(&cfg, RunOptions::default())?;
            metric = record.metric.clone();
            runs.push((condition, seed, record));
        }
    }
    let mut curves = BTreeMap::new();
    let mut all = format!("# diffplast compare v{CSV_VERSION} metric={metric}\ncondition,episode,median,q1,q3,runs\n");
    for &condition in conditions {
        let recs: Vec<&RunRecord> = runs
            .iter()
            .filter(|(c, _, _)| *c == condition)
            .map(|(_, _, r)| r)
            .collect();
        let curve = aggregate(&recs);
        let mut one = format!("# diffplast curve v{CSV_VERSION} metric={metric}\nepisode,median,q1,q3,runs\n");
        for p in &curve {
            let _ = writeln!(one, "{},{},{},{},{}", p.episode, p.median, p.q1, p.q3, p.runs);
            let _ = writeln!(
                all,
                "{},{},{},{},{},{}",
                condition.name(),
                p.episode,
                p.median,
                p.q1,
                p.q3,
                p.runs
            );
        }
        let path = root.join(format!("curve-{}.csv", condition.name()));
        std::fs::write(&path, one).map_err(|e| Error::io(&path, e))?;
        curves.insert(condition.name(), curve);
    }
    let path = root.join("compare.csv");
    std::fs::write(&path, all).map_err(|e| Error::io(&path, e))?;
    Ok(Comparison { metric, runs, curves })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::TaskKind;

    #[test]
    fn quartiles_of_a_small_sample() {
        let (m, q1, q3) = median_iqr(&[5.0, 1.0, 3.0, 2.0, 4.0]);
        assert_eq!(m, 3.0);
        assert!(q1 <= 2.0 + 1e-12 && q1 >= 1.0);
        assert!(q3 >= 4.0 - 1e-12 && q3 <= 5.0);
    }

    #[test]
    fn single_run_degenerates_to_its_record() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::new(TaskKind::Binary, Condition::Plastic, 5, dir.path());
        cfg.task.n_elements = Some(6);
        cfg.task.n_patterns = Some(2);
        cfg.task.show_steps = Some(2);
        let c = compare_conditions(&cfg, &[Condition::Plastic], &[1]).unwrap();
        let curve = &c.curves["plastic"];
        let series = c.runs[0].2.metric_series();
        assert_eq!(curve.len(), 5);
        for (p, v) in curve.iter().zip(series) {
            assert_eq!((p.median, p.q1, p.q3, p.runs), (v, v, v, 1));
        }
        assert!(dir.path().join("curve-plastic.csv").exists());
        assert!(dir.path().join("compare.csv").exists());
    }
}
