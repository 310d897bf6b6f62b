use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use diffplast::harness::{
    self, compare_conditions, dump_matrices, gradcheck, run_experiment, Condition, ExperimentConfig, GradcheckConfig,
    RunOptions, TaskKind, CHECKPOINT_FILE,
};
use diffplast::plastic::PlasticityRule;
use diffplast::{Error, Result};

#[derive(Parser)]
#[command(
    name = "diffplast",
    version,
    about = "Train recurrent networks with differentiable Hebbian plasticity"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one condition with one seed.
    Train(RunArgs),
    /// Train several conditions over several seeds and write median/IQR curves.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated conditions (default: plastic,homogeneous,non-plastic-rnn).
        #[arg(long, value_delimiter = ',')]
        conditions: Vec<Condition>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4])]
        seeds: Vec<u64>,
    },
    /// Compare analytic gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 200)]
        cases: usize,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write w and alpha of a checkpoint as CSV grids.
    Dump {
        /// Checkpoint file, or a run directory containing one.
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run fresh episodes on a trained checkpoint without updating it.
    Eval {
        /// Checkpoint file, or a run directory containing one.
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: u64,
        /// Maze: pick the most likely action instead of sampling.
        #[arg(long)]
        greedy: bool,
        /// Maze: print the grid after every step.
        #[arg(long)]
        render: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Task to run when no config is given.
    #[arg(long)]
    task: Option<TaskKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    episodes: Option<u64>,
    #[arg(long)]
    condition: Option<Condition>,
    #[arg(long)]
    rule: Option<PlasticityRule>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
}

impl RunArgs {
    fn build(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, self.task) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(task)) => {
                ExperimentConfig::new(task, Condition::Plastic, 2000, format!("runs/{}", task_name(task)))
            }
            (None, None) => return Err(Error::Config("give --config or --task".into())),
        };
        if let Some(task) = self.task {
            cfg.experiment.task = task;
        }
        let e = &mut cfg.experiment;
        if let Some(v) = self.seed {
            e.seed = v;
        }
        if let Some(v) = self.episodes {
            e.episodes = v;
        }
        if let Some(v) = self.condition {
            e.condition = v;
            if !v.is_plastic() {
                e.rule = None;
            }
        }
        if let Some(v) = self.rule {
            e.rule = Some(v);
        }
        if let Some(v) = &self.out {
            e.out_dir = v.clone();
        }
        if let Some(v) = self.checkpoint_every {
            e.checkpoint_every = v;
        }
        if let Some(v) = self.workers {
            e.workers = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn task_name(t: TaskKind) -> &'static str {
    match t {
        TaskKind::Binary => "binary",
        TaskKind::Image => "image",
        TaskKind::Maze => "maze",
    }
}

fn checkpoint_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(CHECKPOINT_FILE)
    } else {
        p.to_path_buf()
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.build()?;
            let record = run_experiment(&cfg, RunOptions { resume: args.resume })?;
            let window = (record.rows.len() / 10).max(1);
            match record.tail_mean(&record.metric, window) {
                Some(m) => println!(
                    "{} episodes, mean {} over the last {window}: {m:.6}",
                    record.rows.len(),
                    record.metric
                ),
                None => println!("0 episodes run"),
            }
            println!("output in {}", cfg.experiment.out_dir.display());
        }
        Command::Compare { run, conditions, seeds } => {
            let cfg = run.build()?;
            let conditions = if conditions.is_empty() {
                vec![Condition::Plastic, Condition::Homogeneous, Condition::NonPlasticRnn]
            } else {
                conditions
            };
            let cmp = compare_conditions(&cfg, &conditions, &seeds)?;
            let window = (cfg.experiment.episodes as usize / 10).max(1);
            for c in &conditions {
                if let Some(m) = cmp.tail_median(*c, window) {
                    println!("{:<16} median {} over the last {window}: {m:.6}", c.name(), cmp.metric);
                }
            }
        }
        Command::Gradcheck { cases, tol, seed } => {
            let report = gradcheck(&GradcheckConfig {
                n_cases: cases,
                tol,
                seed,
                ..GradcheckConfig::default()
            })?;
            for c in report.failures() {
                println!("FAIL {} (max rel err {:e})", c.name, c.max_rel_err);
            }
            println!(
                "{} cases, max rel err {:e}: {}",
                report.cases.len(),
                report.max_rel_err,
                if report.passed { "pass" } else { "FAIL" }
            );
            if !report.passed {
                return Err(Error::NumericAbort {
                    episode: 0,
                    msg: "gradient check failed".into(),
                });
            }
        }
        Command::Dump { checkpoint, out } => {
            for f in dump_matrices(&checkpoint_path(&checkpoint), &out)? {
                println!("{}", f.display());
            }
        }
        Command::Eval {
            checkpoint,
            episodes,
            greedy,
            render,
        } => {
            let report = harness::evaluate(&checkpoint_path(&checkpoint), episodes, greedy, render)?;
            for frame in &report.renders {
                println!("{frame}");
            }
            for (c, m) in report.columns.iter().zip(&report.means) {
                println!("{c}: {m:.6}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
