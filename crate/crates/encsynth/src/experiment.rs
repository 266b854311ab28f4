//! Experiment harness behind the command-line binary: configuration with
//! file/environment/flag layering, the runner commands, and deterministic
//! on-disk outputs.
//!
//! Every command writes `run_config.json` (the fully resolved configuration)
//! and `metrics.json` into its output directory, plus command-specific CSV
//! files. Outputs are a pure function of the configuration: running the same
//! configuration twice produces byte-identical files. Wall-clock timing is
//! therefore reported on stderr only, never in an output file.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::generic_rl::{
    greedy_policy_from_value, monte_carlo_es, policy_agreement, q_learning_run, value_iteration,
    RlConfig, StepSizeSchedule, ValueTable,
};
use crate::he::{
    EmulatorBackend, ExactBackend, ExpApproxConfig, ExpMethod, HeBackend, HeDecrypt, HeProfile,
    NoiseModel,
};
use crate::mdp::{build_grid_world, uniform_behavior, GridWorld, GridWorldSpec, MdpError};
use crate::protocol::{
    run_session, serve, InProcessTransport, ProtoError, SessionConfig, SessionMetrics,
    SynthServer, POSITIVITY_FLOOR,
};
use crate::re_rl::{
    build_linear_system, lsvi_solve, solve_direct, z_learning_run_observed, DesirabilityTable,
    ReError, ReProblem,
};
use crate::rlwe::rlwe_pair;

/// The trap layout used throughout the experiments, shipped with the crate.
pub const SHIPPED_MAZE: &str = include_str!("../data/maze9x9.txt");

/// Default snapshot episodes for value-grid CSVs.
pub const DEFAULT_CHECKPOINTS: [usize; 5] = [1, 10, 100, 1000, 5000];

/// Harness error. `exit_code` is the process exit status contract:
/// configuration 2, convergence 3, session 4, i/o 5.
#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("convergence failure: {0}")]
    Convergence(String),
    #[error("session failure: {0}")]
    Session(#[from] ProtoError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

impl ExperimentError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::Convergence(_) => 3,
            ExperimentError::Session(_) => 4,
            ExperimentError::Io(_) => 5,
        }
    }
}

impl From<MdpError> for ExperimentError {
    fn from(e: MdpError) -> Self {
        ExperimentError::Config(e.to_string())
    }
}

impl From<ReError> for ExperimentError {
    fn from(e: ReError) -> Self {
        ExperimentError::Convergence(e.to_string())
    }
}

/// Which homomorphic backend an encrypted run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendChoice {
    Exact,
    Emulator,
    Rlwe,
}

impl FromStr for BackendChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "exact" => Ok(BackendChoice::Exact),
            "emulator" => Ok(BackendChoice::Emulator),
            "rlwe" => Ok(BackendChoice::Rlwe),
            other => Err(format!("unknown backend {other:?} (expected exact|emulator|rlwe)")),
        }
    }
}

impl fmt::Display for BackendChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendChoice::Exact => "exact",
            BackendChoice::Emulator => "emulator",
            BackendChoice::Rlwe => "rlwe",
        })
    }
}

/// Named HE parameter profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileChoice {
    Standard,
    TestSmall,
}

impl ProfileChoice {
    pub fn profile(self) -> HeProfile {
        match self {
            ProfileChoice::Standard => HeProfile::standard(),
            ProfileChoice::TestSmall => HeProfile::test_small(),
        }
    }
}

impl FromStr for ProfileChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "standard" => Ok(ProfileChoice::Standard),
            "test-small" => Ok(ProfileChoice::TestSmall),
            other => Err(format!("unknown profile {other:?} (expected standard|test-small)")),
        }
    }
}

impl fmt::Display for ProfileChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProfileChoice::Standard => "standard",
            ProfileChoice::TestSmall => "test-small",
        })
    }
}

/// Fully resolved experiment configuration. Field names double as config-file
/// keys, command-line flag names (with `-` for `_`), and `ENCSYNTH_`
/// environment-variable suffixes (upper-cased).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Maze file path; `None` uses the shipped 9x9 layout.
    pub maze: Option<PathBuf>,
    pub step_cost: f64,
    pub lambda: f64,
    pub kappa: f64,
    pub episodes: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub backend: BackendChoice,
    pub profile: ProfileChoice,
    pub exp_degree: usize,
    pub exp_chebyshev: bool,
    pub checkpoints: Vec<usize>,
    /// Discount for the generic baselines (value iteration, Q-learning,
    /// Monte-Carlo).
    pub gamma: f64,
    pub epsilon: f64,
    /// Total environment steps for the Q-learning baseline.
    pub q_steps: usize,
    pub tol: f64,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            maze: None,
            step_cost: 0.1,
            lambda: 0.15,
            kappa: 1000.0,
            episodes: 5000,
            max_steps: 200,
            seed: 7,
            backend: BackendChoice::Emulator,
            profile: ProfileChoice::Standard,
            exp_degree: 8,
            exp_chebyshev: false,
            checkpoints: DEFAULT_CHECKPOINTS.to_vec(),
            gamma: 0.9,
            epsilon: 0.3,
            q_steps: 200_000,
            tol: 1e-10,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Parses a JSON config file. Keys are the struct field names; unknown
    /// keys are rejected.
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    /// Applies `ENCSYNTH_*` overrides from an iterator of environment
    /// variables. `ENCSYNTH_LAMBDA=0.2` sets `lambda`, and so on; the
    /// `checkpoints` value is a comma-separated list. Unknown `ENCSYNTH_`
    /// keys are configuration errors.
    pub fn apply_env(
        &mut self,
        vars: impl Iterator<Item = (String, String)>,
    ) -> Result<(), ExperimentError> {
        fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, ExperimentError>
        where
            T::Err: fmt::Display,
        {
            v.parse().map_err(|e| {
                ExperimentError::Config(format!("bad value {v:?} for ENCSYNTH_{key}: {e}"))
            })
        }
        for (key, value) in vars {
            let Some(name) = key.strip_prefix("ENCSYNTH_") else { continue };
            match name {
                "MAZE" => self.maze = Some(PathBuf::from(&value)),
                "STEP_COST" => self.step_cost = parse(name, &value)?,
                "LAMBDA" => self.lambda = parse(name, &value)?,
                "KAPPA" => self.kappa = parse(name, &value)?,
                "EPISODES" => self.episodes = parse(name, &value)?,
                "MAX_STEPS" => self.max_steps = parse(name, &value)?,
                "SEED" => self.seed = parse(name, &value)?,
                "BACKEND" => self.backend = parse(name, &value)?,
                "PROFILE" => self.profile = parse(name, &value)?,
                "EXP_DEGREE" => self.exp_degree = parse(name, &value)?,
                "EXP_CHEBYSHEV" => self.exp_chebyshev = parse(name, &value)?,
                "CHECKPOINTS" => {
                    let mut cps = Vec::new();
                    for part in value.split(',').filter(|p| !p.is_empty()) {
                        cps.push(parse(name, part.trim())?);
                    }
                    self.checkpoints = cps;
                }
                "GAMMA" => self.gamma = parse(name, &value)?,
                "EPSILON" => self.epsilon = parse(name, &value)?,
                "Q_STEPS" => self.q_steps = parse(name, &value)?,
                "TOL" => self.tol = parse(name, &value)?,
                "OUT_DIR" => self.out_dir = PathBuf::from(&value),
                other => {
                    return Err(ExperimentError::Config(format!(
                        "unknown environment override ENCSYNTH_{other}"
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if !(self.lambda > 0.0) {
            return Err(ExperimentError::Config("lambda must be positive".into()));
        }
        if !(self.kappa > 0.0) {
            return Err(ExperimentError::Config("kappa must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(ExperimentError::Config("max_steps must be positive".into()));
        }
        if !(self.step_cost > 0.0) {
            return Err(ExperimentError::Config("step_cost must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(ExperimentError::Config("gamma must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn exp_config(&self, c_max: f64) -> Result<ExpApproxConfig, ExperimentError> {
        let method = if self.exp_chebyshev {
            ExpMethod::ChebyshevOnDomain
        } else {
            ExpMethod::TaylorAtZero
        };
        let mut squarings = 0u32;
        while c_max / (self.lambda * (squarings as f64).exp2()) > 1.0 {
            squarings += 1;
        }
        ExpApproxConfig::build(method, self.exp_degree, c_max, self.lambda, squarings)
            .map_err(|e| ExperimentError::Config(e.to_string()))
    }
}

/// Loads the configured maze (or the shipped one) and builds the
/// soft-regularized shortest-path problem under the uniform behavior policy.
pub fn load_problem(cfg: &ExperimentConfig) -> Result<(GridWorld, ReProblem), ExperimentError> {
    let text = match &cfg.maze {
        Some(path) => fs::read_to_string(path)?,
        None => SHIPPED_MAZE.to_string(),
    };
    let spec = GridWorldSpec::from_maze_str(&text, cfg.step_cost)?;
    let world = build_grid_world(&spec)?;
    let behavior = uniform_behavior(&world.mdp);
    let problem = ReProblem::new(world.mdp.clone(), behavior, cfg.lambda)?;
    Ok((world, problem))
}

/// Ground-truth desirability and value tables: fixed-point iteration on the
/// linear system, cross-checked against the direct dense solve.
pub fn ground_truth(
    problem: &ReProblem,
    tol: f64,
) -> Result<(DesirabilityTable, ValueTable, usize), ExperimentError> {
    let system = build_linear_system(problem);
    let z0 = vec![1.0; system.dim()];
    let (z_iter, iters) = lsvi_solve(problem.mdp.num_states, &system, &z0, tol)?;
    let z_direct = solve_direct(problem.mdp.num_states, &system)?;
    let diff = z_iter.max_abs_diff(&z_direct);
    if diff > 1e-9 {
        return Err(ExperimentError::Convergence(format!(
            "iterative and direct solutions disagree by {diff:e}"
        )));
    }
    let v = crate::re_rl::desirability_to_value(&z_iter, problem.lambda)?;
    Ok((z_iter, v, iters))
}

/// Value table from a (possibly approximately decrypted) desirability table:
/// entries are clamped to the positivity floor before taking logs.
pub fn value_from_table(z: &DesirabilityTable, lambda: f64) -> ValueTable {
    // `+ 0.0` normalizes the negative zero produced at `z = 1`.
    let values = z.z.iter().map(|&zi| -lambda * zi.max(POSITIVITY_FLOOR).ln() + 0.0).collect();
    ValueTable { values }
}

/// Mean absolute value error over non-absorbing states, normalized by the
/// mean ground-truth value over the same states.
pub fn normalized_error(
    v_star: &ValueTable,
    v_hat: &ValueTable,
    problem: &ReProblem,
) -> Result<f64, ExperimentError> {
    let interior = problem.interior_states();
    if interior.is_empty() {
        return Err(ExperimentError::Config("no non-absorbing states".into()));
    }
    let n = interior.len() as f64;
    let mean_star: f64 = interior.iter().map(|&x| v_star.values[x]).sum::<f64>() / n;
    if mean_star == 0.0 {
        return Err(ExperimentError::Config(
            "ground-truth mean value is zero; normalized error undefined".into(),
        ));
    }
    let mean_abs: f64 =
        interior.iter().map(|&x| (v_star.values[x] - v_hat.values[x]).abs()).sum::<f64>() / n;
    Ok(mean_abs / mean_star)
}

/// Per-episode normalized error trace.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ErrorSeries {
    pub episodes: Vec<usize>,
    pub errors: Vec<f64>,
}

impl ErrorSeries {
    pub fn push(&mut self, episode: usize, error: f64) {
        self.episodes.push(episode);
        self.errors.push(error);
    }

    pub fn final_error(&self) -> Option<f64> {
        self.errors.last().copied()
    }

    /// Learning-curve sanity check: the mean over the last 500 recorded
    /// episodes must be below 20% of the mean over the first 100.
    pub fn decayed(&self) -> bool {
        if self.errors.is_empty() {
            return false;
        }
        let head_len = self.errors.len().min(100);
        let tail_len = self.errors.len().min(500);
        let head: f64 =
            self.errors[..head_len].iter().sum::<f64>() / head_len as f64;
        let tail: f64 = self.errors[self.errors.len() - tail_len..].iter().sum::<f64>()
            / tail_len as f64;
        tail < 0.2 * head
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("episode,normalized_error\n");
        for (ep, err) in self.episodes.iter().zip(&self.errors) {
            out.push_str(&format!("{ep},{err}\n"));
        }
        out
    }
}

/// Renders a value table as a `height x width` CSV grid: trap cells are
/// `NaN`, the goal cell is its (zero) value.
pub fn value_grid_csv(world: &GridWorld, v: &ValueTable) -> String {
    let spec = &world.spec;
    let mut out = String::new();
    for r in 0..spec.height {
        let mut row = Vec::with_capacity(spec.width);
        for c in 0..spec.width {
            match world.state_of_cell.get(&(r, c)) {
                Some(&x) => row.push(format!("{}", v.values[x])),
                None => row.push("NaN".to_string()),
            }
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Writes `value_k<episode>.csv` grids for each snapshot.
pub fn emit_value_snapshots(
    dir: &Path,
    world: &GridWorld,
    lambda: f64,
    snapshots: &[(usize, DesirabilityTable)],
) -> Result<(), ExperimentError> {
    for (episode, z) in snapshots {
        let v = value_from_table(z, lambda);
        write_output(&dir.join(format!("value_k{episode}.csv")), &value_grid_csv(world, &v))?;
    }
    Ok(())
}

fn write_output(path: &Path, contents: &str) -> Result<(), ExperimentError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), ExperimentError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| ExperimentError::Config(e.to_string()))?;
    text.push('\n');
    write_output(path, &text)
}

fn write_run_config(cfg: &ExperimentConfig) -> Result<(), ExperimentError> {
    let value =
        serde_json::to_value(cfg).map_err(|e| ExperimentError::Config(e.to_string()))?;
    write_json(&cfg.out_dir.join("run_config.json"), &value)
}

/// `vi`: solve the linear system exactly and emit the ground-truth tables.
pub fn cmd_vi(cfg: &ExperimentConfig) -> Result<(), ExperimentError> {
    cfg.validate()?;
    let (world, problem) = load_problem(cfg)?;
    let (z_star, v_star, iters) = ground_truth(&problem, cfg.tol)?;
    let system = build_linear_system(&problem);
    let (contractive, norm) = crate::re_rl::contraction_check(&system);
    if !contractive {
        return Err(ExperimentError::Convergence(format!(
            "linear system is not a contraction (norm {norm})"
        )));
    }
    write_run_config(cfg)?;
    write_output(&cfg.out_dir.join("z_star.csv"), &z_star.to_csv())?;
    write_output(&cfg.out_dir.join("v_star_grid.csv"), &value_grid_csv(&world, &v_star))?;
    write_json(
        &cfg.out_dir.join("metrics.json"),
        &serde_json::json!({
            "command": "vi",
            "iterations": iters,
            "states": problem.mdp.num_states,
            "interior_states": problem.interior_states().len(),
            "contraction_norm": norm,
        }),
    )?;
    Ok(())
}

/// `zlearn`: plaintext stochastic-approximation run with a per-episode error
/// trace against the exact solution.
pub fn cmd_zlearn(cfg: &ExperimentConfig) -> Result<(), ExperimentError> {
    cfg.validate()?;
    let (world, problem) = load_problem(cfg)?;
    let (_, v_star, _) = ground_truth(&problem, cfg.tol)?;
    let schedule = StepSizeSchedule { kappa: cfg.kappa };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut series = ErrorSeries::default();
    let mut failure = None;
    let result = z_learning_run_observed(
        &problem,
        &schedule,
        cfg.episodes,
        cfg.max_steps,
        &mut rng,
        &cfg.checkpoints,
        |ep, table| {
            let v_hat = value_from_table(table, problem.lambda);
            match normalized_error(&v_star, &v_hat, &problem) {
                Ok(err) => series.push(ep, err),
                Err(e) => failure = Some(e),
            }
        },
    );
    if let Some(e) = failure {
        return Err(e);
    }
    write_run_config(cfg)?;
    write_output(&cfg.out_dir.join("error_series.csv"), &series.to_csv())?;
    emit_value_snapshots(&cfg.out_dir, &world, problem.lambda, &result.snapshots)?;
    if cfg.episodes == 0 {
        // Zero-episode run: the snapshot is the initialization (V = 0).
        emit_value_snapshots(
            &cfg.out_dir,
            &world,
            problem.lambda,
            &[(0, DesirabilityTable::ones(problem.mdp.num_states))],
        )?;
    }
    let final_error = series.final_error().unwrap_or(f64::NAN);
    write_json(
        &cfg.out_dir.join("metrics.json"),
        &serde_json::json!({
            "command": "zlearn",
            "final_error": final_error,
            "transitions": result.transitions,
            "episodes": cfg.episodes,
            "decayed": series.decayed(),
        }),
    )?;
    if cfg.episodes > 0 && !final_error.is_finite() {
        return Err(ExperimentError::Convergence("final error is not finite".into()));
    }
    Ok(())
}

struct EncryptedRun {
    series: ErrorSeries,
    snapshots: Vec<(usize, DesirabilityTable)>,
    final_table: DesirabilityTable,
    metrics: SessionMetrics,
}

fn run_encrypted_session<B, D>(
    problem: &ReProblem,
    exp_cfg: &ExpApproxConfig,
    session_cfg: &SessionConfig,
    checkpoints: &[usize],
    v_star: &ValueTable,
    backend: Arc<B>,
    decryptor: &D,
) -> Result<EncryptedRun, ExperimentError>
where
    B: HeBackend + Send + Sync + 'static,
    D: HeDecrypt,
{
    let (mut client_end, mut server_end) = InProcessTransport::pair();
    let server_backend = backend.clone();
    let server = std::thread::spawn(move || -> Result<SessionMetrics, ProtoError> {
        let mut server = SynthServer::new(server_backend);
        serve(&mut server, &mut server_end)?;
        Ok(server.metrics().cloned().unwrap_or_default())
    });

    let mut series = ErrorSeries::default();
    let mut snapshots = Vec::new();
    let mut observer_failure = None;
    let lambda = problem.lambda;
    let outcome = {
        let mut on_episode = |ep: usize, table: &DesirabilityTable| {
            let v_hat = value_from_table(table, lambda);
            match normalized_error(v_star, &v_hat, problem) {
                Ok(err) => series.push(ep, err),
                Err(e) => observer_failure = Some(e),
            }
            if checkpoints.contains(&ep) {
                snapshots.push((ep, table.clone()));
            }
        };
        run_session(
            problem,
            exp_cfg,
            session_cfg,
            &backend,
            decryptor,
            &mut client_end,
            Some(&mut on_episode),
        )?
    };
    drop(client_end);
    let server_metrics = server
        .join()
        .map_err(|_| ExperimentError::Session(ProtoError::Closed))?
        .map_err(ExperimentError::Session)?;
    if let Some(e) = observer_failure {
        return Err(e);
    }
    Ok(EncryptedRun {
        series,
        snapshots,
        final_table: outcome.table,
        metrics: server_metrics,
    })
}

/// `encrypted`: full client/server synthesis session over an in-process
/// transport, on the configured backend.
pub fn cmd_encrypted(cfg: &ExperimentConfig) -> Result<(), ExperimentError> {
    cfg.validate()?;
    let (world, problem) = load_problem(cfg)?;
    let (_, v_star, _) = ground_truth(&problem, cfg.tol)?;
    let c_max = problem
        .mdp
        .cost
        .iter()
        .flatten()
        .fold(0.0f64, |a, &b| a.max(b))
        .max(cfg.step_cost);
    let exp_cfg = cfg.exp_config(c_max)?;
    let profile = cfg.profile.profile();
    let session_cfg = SessionConfig {
        episodes: cfg.episodes,
        max_steps: cfg.max_steps,
        seed: cfg.seed,
        kappa: cfg.kappa,
        session_id: cfg.seed,
    };
    let started = std::time::Instant::now();
    let run = match cfg.backend {
        BackendChoice::Exact => {
            let backend = Arc::new(
                ExactBackend::new(profile).map_err(|e| ExperimentError::Config(e.to_string()))?,
            );
            run_encrypted_session(
                &problem,
                &exp_cfg,
                &session_cfg,
                &cfg.checkpoints,
                &v_star,
                backend.clone(),
                &*backend,
            )?
        }
        BackendChoice::Emulator => {
            let backend = Arc::new(
                EmulatorBackend::new(profile, NoiseModel::default(), cfg.seed)
                    .map_err(|e| ExperimentError::Config(e.to_string()))?,
            );
            run_encrypted_session(
                &problem,
                &exp_cfg,
                &session_cfg,
                &cfg.checkpoints,
                &v_star,
                backend.clone(),
                &*backend,
            )?
        }
        BackendChoice::Rlwe => {
            let (backend, decryptor) = rlwe_pair(&profile, cfg.seed)
                .map_err(|e| ExperimentError::Config(e.to_string()))?;
            run_encrypted_session(
                &problem,
                &exp_cfg,
                &session_cfg,
                &cfg.checkpoints,
                &v_star,
                Arc::new(backend),
                &decryptor,
            )?
        }
    };
    eprintln!(
        "session complete in {:.2}s ({} updates, {} refreshes)",
        started.elapsed().as_secs_f64(),
        run.metrics.updates,
        run.metrics.refreshes
    );
    write_run_config(cfg)?;
    write_output(&cfg.out_dir.join("error_series.csv"), &run.series.to_csv())?;
    emit_value_snapshots(&cfg.out_dir, &world, problem.lambda, &run.snapshots)?;
    let v_final = value_from_table(&run.final_table, problem.lambda);
    write_output(&cfg.out_dir.join("value_final.csv"), &value_grid_csv(&world, &v_final))?;
    let final_error = run.series.final_error().unwrap_or(f64::NAN);
    write_json(
        &cfg.out_dir.join("metrics.json"),
        &serde_json::json!({
            "command": "encrypted",
            "backend": cfg.backend.to_string(),
            "final_error": final_error,
            "updates": run.metrics.updates,
            "refreshes": run.metrics.refreshes,
            "bytes_in": run.metrics.bytes_in,
            "bytes_out": run.metrics.bytes_out,
            "exp_degree": exp_cfg.degree,
            "exp_squarings": exp_cfg.squarings,
            "exp_eps_approx": exp_cfg.eps_approx,
            "decayed": run.series.decayed(),
        }),
    )?;
    if cfg.episodes > 0 && !final_error.is_finite() {
        return Err(ExperimentError::Convergence("final error is not finite".into()));
    }
    Ok(())
}

/// `baselines`: generic discounted methods on the same maze, for comparison
/// with the regularized solution.
pub fn cmd_baselines(cfg: &ExperimentConfig) -> Result<(), ExperimentError> {
    cfg.validate()?;
    let (world, _) = load_problem(cfg)?;
    let mut mdp = world.mdp.clone();
    mdp.discount = cfg.gamma;
    mdp.undiscounted = cfg.gamma == 1.0;

    let (v_star, vi_iters) = value_iteration(&mdp, cfg.tol)
        .map_err(|e| ExperimentError::Convergence(e.to_string()))?;
    let greedy = greedy_policy_from_value(&mdp, &v_star);

    let rl_cfg = RlConfig {
        epsilon: cfg.epsilon,
        schedule: StepSizeSchedule { kappa: cfg.kappa },
        gamma: cfg.gamma,
        tol: cfg.tol,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let q_run = q_learning_run(&mdp, &rl_cfg, cfg.q_steps, &mut rng);
    let q_policy = crate::generic_rl::greedy_policy_from_q(&q_run.q, &mdp);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let (_, mc_policy) = monte_carlo_es(&mdp, 30, 4, cfg.gamma, false, cfg.max_steps, &mut rng);

    let q_agreement = policy_agreement(&mdp, &v_star, &greedy, &q_policy, 1e-9);
    let mc_agreement = policy_agreement(&mdp, &v_star, &greedy, &mc_policy, 1e-9);

    write_run_config(cfg)?;
    write_output(&cfg.out_dir.join("v_star_grid.csv"), &value_grid_csv(&world, &v_star))?;
    write_output(&cfg.out_dir.join("q_table.csv"), &q_run.q.to_csv(&mdp))?;
    write_json(
        &cfg.out_dir.join("metrics.json"),
        &serde_json::json!({
            "command": "baselines",
            "gamma": cfg.gamma,
            "vi_iterations": vi_iters,
            "q_steps": cfg.q_steps,
            "q_policy_agreement": q_agreement,
            "mc_policy_agreement": mc_agreement,
        }),
    )?;
    Ok(())
}

/// `compare`: joins the `error_series.csv` of several finished runs into one
/// table plus a summary of final errors.
pub fn cmd_compare(cfg: &ExperimentConfig, runs: &[PathBuf]) -> Result<(), ExperimentError> {
    if runs.len() < 2 {
        return Err(ExperimentError::Config("compare needs at least two run directories".into()));
    }
    let mut labels = Vec::new();
    let mut columns: Vec<BTreeMap<usize, f64>> = Vec::new();
    for dir in runs {
        let label = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        let text = fs::read_to_string(dir.join("error_series.csv"))?;
        let mut column = BTreeMap::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            let mut parts = line.split(',');
            let (Some(ep), Some(err)) = (parts.next(), parts.next()) else {
                return Err(ExperimentError::Config(format!(
                    "{}: malformed error series at line {}",
                    dir.display(),
                    i + 1
                )));
            };
            let ep: usize = ep.parse().map_err(|_| {
                ExperimentError::Config(format!("{}: bad episode at line {}", dir.display(), i + 1))
            })?;
            let err: f64 = err.parse().map_err(|_| {
                ExperimentError::Config(format!("{}: bad error at line {}", dir.display(), i + 1))
            })?;
            column.insert(ep, err);
        }
        labels.push(label);
        columns.push(column);
    }
    let mut episodes: Vec<usize> =
        columns.iter().flat_map(|c| c.keys().copied()).collect();
    episodes.sort_unstable();
    episodes.dedup();

    let mut out = String::from("episode");
    for label in &labels {
        out.push(',');
        out.push_str(label);
    }
    out.push('\n');
    for ep in &episodes {
        out.push_str(&format!("{ep}"));
        for column in &columns {
            out.push(',');
            match column.get(ep) {
                Some(err) => out.push_str(&format!("{err}")),
                None => out.push_str("NaN"),
            }
        }
        out.push('\n');
    }
    write_run_config(cfg)?;
    write_output(&cfg.out_dir.join("compare.csv"), &out)?;
    let summary: serde_json::Value = labels
        .iter()
        .zip(&columns)
        .map(|(label, column)| {
            let last = column.values().last().copied().unwrap_or(f64::NAN);
            (label.clone(), serde_json::json!(last))
        })
        .collect::<serde_json::Map<String, serde_json::Value>>()
        .into();
    write_json(
        &cfg.out_dir.join("metrics.json"),
        &serde_json::json!({ "command": "compare", "final_errors": summary }),
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_headline_hyperparameters() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.lambda, 0.15);
        assert_eq!(cfg.kappa, 1000.0);
        assert_eq!(cfg.episodes, 5000);
        assert_eq!(cfg.max_steps, 200);
        assert_eq!(cfg.checkpoints, vec![1, 10, 100, 1000, 5000]);
    }

    #[test]
    fn shipped_maze_parses_as_nine_by_nine() {
        let spec = GridWorldSpec::from_maze_str(SHIPPED_MAZE, 0.1).unwrap();
        assert_eq!((spec.width, spec.height), (9, 9));
        assert!(!spec.traps.is_empty());
        build_grid_world(&spec).unwrap();
    }

    #[test]
    fn env_overrides_parse_and_reject_unknown_keys() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_env(
            vec![
                ("ENCSYNTH_LAMBDA".to_string(), "0.3".to_string()),
                ("ENCSYNTH_BACKEND".to_string(), "rlwe".to_string()),
                ("ENCSYNTH_CHECKPOINTS".to_string(), "1,5,9".to_string()),
                ("PATH".to_string(), "/usr/bin".to_string()),
            ]
            .into_iter(),
        )
        .unwrap();
        assert_eq!(cfg.lambda, 0.3);
        assert_eq!(cfg.backend, BackendChoice::Rlwe);
        assert_eq!(cfg.checkpoints, vec![1, 5, 9]);
        let err = cfg
            .apply_env(vec![("ENCSYNTH_BOGUS".to_string(), "1".to_string())].into_iter())
            .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn config_json_round_trips() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
        assert!(ExperimentConfig::from_json("{\"bogus\": 1}").is_err());
    }

    #[test]
    fn normalized_error_is_zero_for_exact_table() {
        let cfg = ExperimentConfig::default();
        let (_, problem) = load_problem(&cfg).unwrap();
        let (z_star, v_star, _) = ground_truth(&problem, 1e-12).unwrap();
        let v_hat = value_from_table(&z_star, problem.lambda);
        let err = normalized_error(&v_star, &v_hat, &problem).unwrap();
        assert!(err < 1e-12, "err = {err}");
    }

    #[test]
    fn error_series_decay_check() {
        let mut good = ErrorSeries::default();
        let mut bad = ErrorSeries::default();
        for ep in 1..=1000usize {
            good.push(ep, 1.0 / ep as f64);
            bad.push(ep, 1.0);
        }
        assert!(good.decayed());
        assert!(!bad.decayed());
        assert!(!ErrorSeries::default().decayed());
    }

    #[test]
    fn value_grid_marks_traps_and_goal() {
        let cfg = ExperimentConfig::default();
        let (world, problem) = load_problem(&cfg).unwrap();
        let (_, v_star, _) = ground_truth(&problem, 1e-12).unwrap();
        let csv = value_grid_csv(&world, &v_star);
        let rows: Vec<&str> = csv.lines().collect();
        assert_eq!(rows.len(), world.spec.height);
        let (gr, gc) = world.spec.goal;
        let goal_cell = rows[gr].split(',').nth(gc).unwrap();
        assert_eq!(goal_cell.parse::<f64>().unwrap(), 0.0);
        let (tr, tc) = *world.spec.traps.iter().next().unwrap();
        let trap_cell = rows[tr].split(',').nth(tc).unwrap();
        assert_eq!(trap_cell, "NaN");
    }
}
