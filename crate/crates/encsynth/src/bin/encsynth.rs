//! Command-line driver for the encrypted policy-synthesis experiments.
//!
//! Configuration layering, lowest to highest precedence: built-in defaults,
//! `--config <file.json>`, `ENCSYNTH_*` environment variables, command-line
//! flags. Exit codes: 2 configuration, 3 convergence, 4 session, 5 i/o.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use encsynth::experiment::{
    cmd_baselines, cmd_compare, cmd_encrypted, cmd_vi, cmd_zlearn, BackendChoice,
    ExperimentConfig, ExperimentError, ProfileChoice,
};

#[derive(Parser)]
#[command(name = "encsynth", version, about = "Encrypted policy synthesis experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the desirability linear system exactly and emit ground truth.
    Vi(CommonArgs),
    /// Plaintext stochastic-approximation run with a per-episode error trace.
    Zlearn(RunArgs),
    /// Full encrypted client/server synthesis session.
    Encrypted(RunArgs),
    /// Generic discounted baselines (value iteration, Q-learning, Monte-Carlo).
    Baselines(CommonArgs),
    /// Join the error series of finished runs into one comparison table.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directories of previously finished runs.
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
    },
}

/// Flags shared by every verb. Unset flags fall back to the config file,
/// environment, then defaults.
#[derive(Args)]
struct CommonArgs {
    /// JSON config file; keys match these flag names.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Maze file (defaults to the shipped 9x9 layout).
    #[arg(long)]
    maze: Option<PathBuf>,
    #[arg(long)]
    step_cost: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// HE backend: exact | emulator | rlwe.
    #[arg(long)]
    backend: Option<BackendChoice>,
    /// HE parameter profile: standard | test-small.
    #[arg(long)]
    profile: Option<ProfileChoice>,
    #[arg(long)]
    exp_degree: Option<usize>,
    /// Use a Chebyshev fit instead of the Taylor expansion.
    #[arg(long)]
    exp_chebyshev: bool,
    /// Snapshot episodes, comma-separated.
    #[arg(long, value_delimiter = ',')]
    checkpoints: Option<Vec<usize>>,
    /// Discount for the generic baselines.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    q_steps: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Run once per listed seed, each into `<out_dir>/seed<k>/`.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

impl CommonArgs {
    /// Defaults, then config file, then environment, then flags.
    fn resolve(&self) -> Result<ExperimentConfig, ExperimentError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                ExperimentConfig::from_json(&text)?
            }
            None => ExperimentConfig::default(),
        };
        cfg.apply_env(std::env::vars())?;
        if let Some(v) = &self.maze {
            cfg.maze = Some(v.clone());
        }
        if let Some(v) = self.step_cost {
            cfg.step_cost = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.kappa {
            cfg.kappa = v;
        }
        if let Some(v) = self.episodes {
            cfg.episodes = v;
        }
        if let Some(v) = self.max_steps {
            cfg.max_steps = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.backend {
            cfg.backend = v;
        }
        if let Some(v) = self.profile {
            cfg.profile = v;
        }
        if let Some(v) = self.exp_degree {
            cfg.exp_degree = v;
        }
        if self.exp_chebyshev {
            cfg.exp_chebyshev = true;
        }
        if let Some(v) = &self.checkpoints {
            cfg.checkpoints = v.clone();
        }
        if let Some(v) = self.gamma {
            cfg.gamma = v;
        }
        if let Some(v) = self.epsilon {
            cfg.epsilon = v;
        }
        if let Some(v) = self.q_steps {
            cfg.q_steps = v;
        }
        if let Some(v) = self.tol {
            cfg.tol = v;
        }
        if let Some(v) = &self.out_dir {
            cfg.out_dir = v.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Runs `body` once per seed (into per-seed subdirectories), or once with the
/// configured seed when no fan-out is requested.
fn fan_out(
    args: &RunArgs,
    body: fn(&ExperimentConfig) -> Result<(), ExperimentError>,
) -> Result<(), ExperimentError> {
    let base = args.common.resolve()?;
    match &args.seeds {
        None => body(&base),
        Some(seeds) => {
            if seeds.is_empty() {
                return Err(ExperimentError::Config("--seeds needs at least one seed".into()));
            }
            for &seed in seeds {
                let mut cfg = base.clone();
                cfg.seed = seed;
                cfg.out_dir = base.out_dir.join(format!("seed{seed}"));
                eprintln!("seed {seed} -> {}", cfg.out_dir.display());
                body(&cfg)?;
            }
            Ok(())
        }
    }
}

fn run(cli: &Cli) -> Result<(), ExperimentError> {
    match &cli.command {
        Command::Vi(common) => cmd_vi(&common.resolve()?),
        Command::Zlearn(args) => fan_out(args, cmd_zlearn),
        Command::Encrypted(args) => fan_out(args, cmd_encrypted),
        Command::Baselines(common) => cmd_baselines(&common.resolve()?),
        Command::Compare { common, runs } => cmd_compare(&common.resolve()?, runs),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("encsynth: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
