//! `smmh`: sample synthetic cohorts, fit models, score episodes and
//! evaluate risk traces.
//!
//! Exit codes: 0 ok, 1 usage or I/O error, 2 invalid model, 3 degenerate
//! dataset, 4 shape mismatch, 5 numerical failure. `SMMH_THREADS` sets the
//! worker thread count.

mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use smmh::evaluation::Aggregation;

use config::{parse_aggregation, Config};

#[derive(Parser)]
#[command(name = "smmh", version, about = "Semi-Markov-modulated marked Hawkes risk pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// TOML configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate episodes (and their latent paths) from a model.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Number of episodes.
        #[arg(long)]
        n: Option<usize>,
        /// Skip the paths.jsonl ground-truth sidecar.
        #[arg(long)]
        no_truth: bool,
    },
    /// Learn a model from labelled episodes.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        episodes: PathBuf,
        #[arg(long)]
        n_states: Option<usize>,
        /// Comma-separated state counts compared by BIC, e.g. 3,4,5.
        #[arg(long, value_delimiter = ',')]
        state_grid: Option<Vec<usize>>,
        #[arg(long)]
        em_iters: Option<usize>,
    },
    /// Write causal risk traces for every episode.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        episodes: PathBuf,
        #[arg(long)]
        max_lookback: Option<usize>,
        /// Also condition on the observation times.
        #[arg(long)]
        use_observation_process: bool,
    },
    /// Discrimination metrics, lead times and sampling-rate curves.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        traces: PathBuf,
        /// Episode file supplying labels, censoring times and event times.
        #[arg(long)]
        episodes: PathBuf,
        /// max, final or at:<hours>.
        #[arg(long, value_parser = parse_aggregation)]
        aggregation: Option<Aggregation>,
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        bin: Option<f64>,
        #[arg(long)]
        test_window: Option<f64>,
    },
}

#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn usage(message: String) -> Self {
        Self { code: 1, message }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::usage(format!("{}: {e}", path.display()))
    }
}

impl From<smmh::Error> for CliError {
    fn from(e: smmh::Error) -> Self {
        use smmh::Error::*;
        let code = match &e {
            InvalidModel(_) | Stationarity { .. } => 2,
            EmptyClass(_) | UndefinedMetric(_) | InsufficientData(_) | EmptyEpisode(_) | DegenerateDispersion { .. } => 3,
            ShapeMismatch(_) => 4,
            Numerical(_) | LikelihoodDecrease { .. } | RunawayPath { .. } | Explosion { .. } => 5,
            Parameter(_) | Precondition(_) => 1,
        };
        Self { code, message: e.to_string() }
    }
}

fn set_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("SMMH_THREADS") else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::usage(format!("SMMH_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::usage(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    set_threads()?;
    let load = |c: &Common| -> Result<(Config, u64), CliError> {
        let cfg = Config::load(c.config.as_deref())?;
        let seed = c.seed.or(cfg.seed).unwrap_or(0);
        Ok((cfg, seed))
    };
    match cli.command {
        Command::Sample { common, model, n, no_truth } => {
            let (mut cfg, seed) = load(&common)?;
            if let Some(n) = n {
                cfg.sample.n_episodes = n;
            }
            if no_truth {
                cfg.sample.truth = false;
            }
            commands::sample(&model, &common.out, seed, cfg)
        }
        Command::Fit { common, episodes, n_states, state_grid, em_iters } => {
            let (mut cfg, seed) = load(&common)?;
            if let Some(n) = n_states {
                cfg.fit.train.n_states = n;
            }
            if let Some(g) = state_grid {
                cfg.fit.state_grid = g;
            }
            if let Some(k) = em_iters {
                cfg.fit.train.em_iters = k;
            }
            commands::fit(&episodes, &common.out, seed, cfg)
        }
        Command::Score { common, model, episodes, max_lookback, use_observation_process } => {
            let (mut cfg, seed) = load(&common)?;
            if let Some(k) = max_lookback {
                cfg.score.max_lookback = k;
            }
            if use_observation_process {
                cfg.score.use_observation_process = true;
            }
            commands::score(&model, &episodes, &common.out, seed, cfg)
        }
        Command::Eval { common, traces, episodes, aggregation, thresholds, horizon, bin, test_window } => {
            let (mut cfg, seed) = load(&common)?;
            let e = &mut cfg.eval;
            if let Some(a) = aggregation {
                e.aggregation = a;
            }
            if let Some(t) = thresholds {
                e.thresholds = t;
            }
            if let Some(h) = horizon {
                e.horizon = h;
            }
            if let Some(b) = bin {
                e.bin = b;
            }
            if let Some(w) = test_window {
                e.test_window = w;
            }
            commands::eval(&traces, &episodes, &common.out, seed, cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
