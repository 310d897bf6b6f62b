//! Training loop, metrics files and run records.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};

use super::checkpoint::Checkpoint;
use super::config::ExperimentConfig;
use super::model::{run_one_episode, EpisodeMode, EpisodeResult, Model, TaskContext};
use crate::error::{Error, Result};
use crate::optim::{lr_schedule, AdamState};
use crate::params::{GradMap, Parameterized};

pub const CSV_VERSION: u32 = 1;
pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub episode: u64,
    pub values: Vec<f64>,
}

/// Per-episode metrics of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub columns: Vec<String>,
    pub rows: Vec<RunRow>,
    /// Seconds since the (re)start of the run, per row. Not part of the
    /// metrics file.
    pub elapsed: Vec<f64>,
    /// Column summarising task performance.
    pub metric: String,
}

impl RunRecord {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r.values[k]).collect())
    }

    pub fn metric_series(&self) -> Vec<f64> {
        self.column(&self.metric).expect("metric column exists")
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Mean of `column` over the last `window` rows.
    pub fn tail_mean(&self, column: &str, window: usize) -> Option<f64> {
        let v = self.column(column)?;
        if v.is_empty() {
            return None;
        }
        let tail = &v[v.len().saturating_sub(window)..];
        Some(tail.iter().sum::<f64>() / tail.len() as f64)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Continue from `checkpoint.json` in the output directory if present.
    pub resume: bool,
}

fn format_row(episode: u64, values: &[f64]) -> String {
    let mut s = episode.to_string();
    for v in values {
        s.push(',');
        s.push_str(&v.to_string());
    }
    s
}

fn header(cfg: &ExperimentConfig, columns: &[&str]) -> String {
    format!(
        "# diffplast metrics v{CSV_VERSION} task={} condition={} seed={}\nepisode,{}\n",
        serde_plain(&cfg.experiment.task),
        cfg.experiment.condition.name(),
        cfg.experiment.seed,
        columns.join(",")
    )
}

fn serde_plain<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|j| j.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// Reads a metrics file back into rows.
pub fn read_metrics(path: &Path) -> Result<(Vec<String>, Vec<RunRow>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut columns = Vec::new();
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if columns.is_empty() {
            columns = fields[1..].iter().map(|s| s.to_string()).collect();
            continue;
        }
        let bad = |msg: String| Error::Data {
            path: path.to_path_buf(),
            msg: format!("line {}: {msg}", i + 1),
        };
        if fields.len() != columns.len() + 1 {
            return Err(bad(format!("expected {} fields", columns.len() + 1)));
        }
        let episode = fields[0]
            .parse()
            .map_err(|_| bad(format!("bad episode `{}`", fields[0])))?;
        let values = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| bad(format!("bad number `{f}`"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(RunRow { episode, values });
    }
    Ok((columns, rows))
}

/// Keeps only comment/header lines and rows with episode below `keep_below`.
fn truncate_rows(path: &Path, keep_below: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        let keep = match line.split(',').next().and_then(|f| f.parse::<u64>().ok()) {
            Some(ep) => ep < keep_below,
            None => true,
        };
        if keep {
            out.push_str(line);
            out.push('\n');
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn append_handle(path: &Path) -> Result<File> {
    OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))
}

/// Runs the episodes of one optimizer step, `workers` in parallel. Results
/// are returned in worker order.
fn run_batch(model: &Model, ctx: &TaskContext, seed: u64, first: u64, count: usize) -> Vec<Result<EpisodeResult>> {
    if count == 1 {
        return vec![run_one_episode(model, ctx, seed, first, EpisodeMode::TRAIN)];
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..count)
            .map(|w| s.spawn(move || run_one_episode(model, ctx, seed, first + w as u64, EpisodeMode::TRAIN)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("episode worker panicked"))
            .collect()
    })
}

fn out_path(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    cfg.experiment.out_dir.join(name)
}

/// Trains `cfg` for `cfg.experiment.episodes` episodes, writing
/// `metrics.csv`, `timing.csv`, `config.toml` and checkpoints into the output
/// directory.
///
/// Each optimizer step runs `workers` consecutive episodes and sums their
/// gradients in episode order. Episode `k` always draws from stream `k` of
/// the run seed, so a given worker count reproduces exactly and a resumed
/// run continues as if uninterrupted. A non-finite loss or gradient stops
/// the run with [`Error::NumericAbort`]; rows already written and the last
/// checkpoint are kept.
pub fn run_experiment(cfg: &ExperimentConfig, opts: RunOptions) -> Result<RunRecord> {
    cfg.validate()?;
    let dir = &cfg.experiment.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ctx = TaskContext::new(cfg)?;
    let columns = ctx.columns();
    let metrics_path = out_path(cfg, METRICS_FILE);
    let timing_path = out_path(cfg, TIMING_FILE);
    let ck_path = out_path(cfg, CHECKPOINT_FILE);
    let config_path = out_path(cfg, CONFIG_FILE);
    std::fs::write(&config_path, cfg.to_toml_string()?).map_err(|e| Error::io(&config_path, e))?;

    let mut model;
    let mut adam;
    let mut done: u64 = 0;
    if opts.resume && ck_path.exists() {
        let ck = Checkpoint::load(&ck_path)?;
        let mut stored = ck.config.clone();
        stored.experiment.episodes = cfg.experiment.episodes;
        stored.experiment.checkpoint_every = cfg.experiment.checkpoint_every;
        stored.experiment.out_dir = cfg.experiment.out_dir.clone();
        if &stored != cfg {
            return Err(Error::Config(
                "resume: config differs from the checkpoint beyond episodes/checkpoint_every".into(),
            ));
        }
        model = ck.restore_model()?;
        adam = ck.optimizer_state;
        done = ck.episodes_done;
        truncate_rows(&metrics_path, done)?;
        truncate_rows(&timing_path, done)?;
        info!("resuming {} at episode {done}", dir.display());
    } else {
        model = Model::init(cfg)?;
        adam = AdamState::new(cfg.adam_config());
        std::fs::write(&metrics_path, header(cfg, columns)).map_err(|e| Error::io(&metrics_path, e))?;
        std::fs::write(&timing_path, "episode,elapsed_seconds\n").map_err(|e| Error::io(&timing_path, e))?;
    }
    if !metrics_path.exists() {
        std::fs::write(&metrics_path, header(cfg, columns)).map_err(|e| Error::io(&metrics_path, e))?;
        std::fs::write(&timing_path, "episode,elapsed_seconds\n").map_err(|e| Error::io(&timing_path, e))?;
    }

    let mut metrics = append_handle(&metrics_path)?;
    let mut timing = append_handle(&timing_path)?;
    let total = cfg.experiment.episodes;
    let workers = cfg.experiment.workers as u64;
    let base_lr = cfg.adam_config().lr;
    let every = cfg.experiment.checkpoint_every;
    let started = Instant::now();
    let mut elapsed = Vec::new();

    while done < total {
        let count = workers.min(total - done);
        let results = run_batch(&model, &ctx, cfg.experiment.seed, done, count as usize);
        let mut grads = GradMap::new();
        for (w, res) in results.into_iter().enumerate() {
            let episode = done + w as u64;
            let res = res.map_err(|e| match e {
                Error::Divergence { .. } | Error::NonFinite { .. } => Error::NumericAbort {
                    episode,
                    msg: e.to_string(),
                },
                other => other,
            })?;
            let g = res.grads.expect("training episodes compute gradients");
            if !res.loss.is_finite() || !g.all_finite() {
                return Err(Error::NumericAbort {
                    episode,
                    msg: format!("non-finite loss or gradient (loss = {})", res.loss),
                });
            }
            let line = format_row(episode, &res.values);
            writeln!(metrics, "{line}").map_err(|e| Error::io(&metrics_path, e))?;
            let secs = started.elapsed().as_secs_f64();
            writeln!(timing, "{episode},{secs:.3}").map_err(|e| Error::io(&timing_path, e))?;
            elapsed.push(secs);
            grads.accumulate(&g)?;
        }
        metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;

        if let Some(clip) = cfg.clip_norm() {
            grads.clip_global_norm(clip);
        }
        adam.cfg.lr = match cfg.optimizer.decay_every {
            Some(every) => lr_schedule(base_lr, done, every, cfg.optimizer.decay_factor),
            None => base_lr,
        };
        adam.step(&mut model, &grads)?;
        let before = done;
        done += count;
        if !model.all_finite() {
            return Err(Error::NumericAbort {
                episode: done - 1,
                msg: "parameters became non-finite".into(),
            });
        }
        if let Model::Plastic(p) = &model {
            if p.rule == crate::plastic::PlasticityRule::DecayHebb && !(p.params.eta > 0.0 && p.params.eta < 1.0) {
                warn!("episode {}: eta = {} left (0, 1)", done - 1, p.params.eta);
            }
        }
        if every > 0 && done / every != before / every {
            Checkpoint::capture(cfg, &model, &adam, done).save(&ck_path)?;
        }
    }
    if total > 0 {
        Checkpoint::capture(cfg, &model, &adam, done).save(&ck_path)?;
    }
    drop(metrics);

    let (cols, rows) = read_metrics(&metrics_path)?;
    let mut full_elapsed = vec![f64::NAN; rows.len().saturating_sub(elapsed.len())];
    full_elapsed.extend(elapsed);
    Ok(RunRecord {
        columns: cols,
        rows,
        elapsed: full_elapsed,
        metric: ctx.metric_column().to_string(),
    })
}

/// Final parameters of a finished run.
pub fn load_model(out_dir: &Path) -> Result<Model> {
    Checkpoint::load(&out_dir.join(CHECKPOINT_FILE))?.restore_model()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{Condition, TaskKind};

    fn small(dir: &Path, episodes: u64) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(TaskKind::Binary, Condition::Plastic, episodes, dir);
        cfg.task.n_elements = Some(8);
        cfg.task.n_patterns = Some(2);
        cfg.task.show_steps = Some(2);
        cfg.task.gap_steps = Some(1);
        cfg
    }

    #[test]
    fn zero_episodes_is_an_empty_record() {
        let dir = tempfile::tempdir().unwrap();
        let r = run_experiment(&small(dir.path(), 0), RunOptions::default()).unwrap();
        assert!(r.is_empty());
        assert!(dir.path().join(CONFIG_FILE).exists());
    }

    #[test]
    fn rows_are_indexed_and_file_matches_record() {
        let dir = tempfile::tempdir().unwrap();
        let r = run_experiment(&small(dir.path(), 7), RunOptions::default()).unwrap();
        let eps: Vec<u64> = r.rows.iter().map(|r| r.episode).collect();
        assert_eq!(eps, (0..7).collect::<Vec<_>>());
        assert_eq!(r.columns, vec!["loss", "sign_error"]);
        let text = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        assert!(text.starts_with("# diffplast metrics v1 task=binary condition=plastic seed=0\n"));
        assert!(dir.path().join(CHECKPOINT_FILE).exists());
    }

    #[test]
    fn truncation_keeps_header_and_earlier_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "# c\nepisode,loss\n0,1\n1,2\n2,3\n").unwrap();
        truncate_rows(&p, 2).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "# c\nepisode,loss\n0,1\n1,2\n");
    }

    #[test]
    fn resume_rejects_a_different_config() {
        let dir = tempfile::tempdir().unwrap();
        run_experiment(&small(dir.path(), 2), RunOptions::default()).unwrap();
        let mut other = small(dir.path(), 4);
        other.optimizer.lr = Some(0.5);
        assert!(run_experiment(&other, RunOptions { resume: true }).is_err());
    }
}
