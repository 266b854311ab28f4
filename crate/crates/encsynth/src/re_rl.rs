//! Relative-entropy-regularized RL: desirability linear system, linearly
//! solvable value iteration, Boltzmann policy extraction, path-integral
//! Monte Carlo, and Z-learning.
//!
//! Everything in this module is comparison-free: no operation takes a min
//! or argmin over actions, which is what makes the suite expressible over
//! homomorphic addition and multiplication.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::generic_rl::{StepSizeSchedule, ValueTable};
use crate::mdp::{
    random_spawn, Episode, EpisodeOutcome, StochasticPolicy, TabularMdp,
};

#[derive(Debug, Error)]
pub enum ReError {
    #[error("RE problems require deterministic transitions")]
    NotDeterministic,
    #[error("RE problems are undiscounted; set the undiscounted flag")]
    NotUndiscounted,
    #[error("RE problems require at least one absorbing state")]
    NoAbsorbingState,
    #[error("lambda must be positive, got {0}")]
    NonPositiveLambda(f64),
    #[error("behavior policy must be strictly positive on valid actions of state {0}")]
    BehaviorNotPositive(usize),
    #[error("w = 0: no one-step mass into the absorbing state anywhere; the zero fixed point violates desirability positivity")]
    ZeroTerminalMass,
    #[error("lsvi did not converge after {iters} iterations (residual {residual}); suspect spectral radius >= 1")]
    NonConvergence { iters: usize, residual: f64 },
    #[error("I - A is singular")]
    Singular,
    #[error("desirability must be strictly positive (state {0} has Z = {1})")]
    NonPositiveZ(usize, f64),
    #[error("Boltzmann row at state {0} underflowed to zero; rescale lambda or costs")]
    UnderflowRow(usize),
    #[error("path integral estimates require absorbed episodes; episode {0} was truncated")]
    TruncatedEpisode(usize),
    #[error("path integral episodes must share a start state")]
    MixedStartStates,
    #[error("no episodes supplied")]
    NoEpisodes,
    #[error("policy puts mass where the behavior policy has none (state {0}, action {1})")]
    SupportViolation(usize, usize),
    #[error("absorption unreachable from state {0} under the policy support graph")]
    AbsorptionUnreachable(usize),
}

/// A relative-entropy-regularized problem: deterministic undiscounted MDP,
/// strictly positive behavior policy, and regularizer `lambda > 0`.
#[derive(Debug, Clone)]
pub struct ReProblem {
    pub mdp: TabularMdp,
    pub behavior: StochasticPolicy,
    pub lambda: f64,
}

impl ReProblem {
    pub fn new(
        mdp: TabularMdp,
        behavior: StochasticPolicy,
        lambda: f64,
    ) -> Result<Self, ReError> {
        if !mdp.is_deterministic() {
            return Err(ReError::NotDeterministic);
        }
        if !mdp.undiscounted {
            return Err(ReError::NotUndiscounted);
        }
        if mdp.absorbing.is_empty() {
            return Err(ReError::NoAbsorbingState);
        }
        if !(lambda > 0.0) {
            return Err(ReError::NonPositiveLambda(lambda));
        }
        for x in 0..mdp.num_states {
            for &u in mdp.valid_actions(x) {
                if behavior.probs[x][u] <= 0.0 {
                    return Err(ReError::BehaviorNotPositive(x));
                }
            }
        }
        Ok(ReProblem { mdp, behavior, lambda })
    }

    /// Non-absorbing state ids in increasing order.
    pub fn interior_states(&self) -> Vec<usize> {
        (0..self.mdp.num_states)
            .filter(|x| !self.mdp.is_absorbing(*x))
            .collect()
    }
}

/// Positive desirability vector over all states; absorbing entries fixed at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct DesirabilityTable {
    pub z: Vec<f64>,
}

impl DesirabilityTable {
    /// Scale-neutral initialization matching Z(abs) = 1.
    pub fn ones(num_states: usize) -> Self {
        DesirabilityTable { z: vec![1.0; num_states] }
    }

    pub fn validate(&self, mdp: &TabularMdp) -> Result<(), ReError> {
        for (x, &z) in self.z.iter().enumerate() {
            if mdp.is_absorbing(x) {
                if z != 1.0 {
                    return Err(ReError::NonPositiveZ(x, z));
                }
            } else if !(z > 0.0) {
                return Err(ReError::NonPositiveZ(x, z));
            }
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &DesirabilityTable) -> f64 {
        self.z
            .iter()
            .zip(&other.z)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// CSV with columns `state,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("state,value\n");
        for (x, z) in self.z.iter().enumerate() {
            let _ = writeln!(out, "{x},{z}");
        }
        out
    }
}

/// The linearized Bellman system `Z = A Z + w` over non-absorbing states.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    /// Row-major dense nonnegative matrix, one row per non-absorbing state.
    pub a: Vec<Vec<f64>>,
    pub w: Vec<f64>,
    /// Index -> state id.
    pub states: Vec<usize>,
    /// State id -> index.
    pub index_of: HashMap<usize, usize>,
}

impl LinearSystem {
    pub fn dim(&self) -> usize {
        self.states.len()
    }

    /// Dense text format: first line `n`, then the `n` rows of `A`
    /// (space-separated), then the `w` row.
    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n", self.dim());
        for row in &self.a {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
            let _ = writeln!(out, "{}", cells.join(" "));
        }
        let cells: Vec<String> = self.w.iter().map(|v| format!("{v:.17e}")).collect();
        let _ = writeln!(out, "{}", cells.join(" "));
        out
    }
}

/// Entries of `A` and `w`:
/// `a_ij = sum_{u: F(i,u)=j} b(u|i) exp(-C(i,u)/lambda)` over non-absorbing
/// successors, and `w_i` the same sum over transitions into absorbing states.
pub fn build_linear_system(problem: &ReProblem) -> LinearSystem {
    let states = problem.interior_states();
    let index_of: HashMap<usize, usize> =
        states.iter().enumerate().map(|(i, &x)| (x, i)).collect();
    let n = states.len();
    let mut a = vec![vec![0.0; n]; n];
    let mut w = vec![0.0; n];
    for (i, &x) in states.iter().enumerate() {
        for &u in problem.mdp.valid_actions(x) {
            let mass = problem.behavior.probs[x][u]
                * (-problem.mdp.cost[x][u] / problem.lambda).exp();
            let xp = problem.mdp.next_state(x, u);
            if problem.mdp.is_absorbing(xp) {
                w[i] += mass;
            } else {
                a[i][index_of[&xp]] += mass;
            }
        }
    }
    LinearSystem { a, w, states, index_of }
}

fn expand_to_full(problem_states: usize, system: &LinearSystem, zbar: &[f64]) -> DesirabilityTable {
    let mut z = vec![1.0; problem_states];
    for (i, &x) in system.states.iter().enumerate() {
        z[x] = zbar[i];
    }
    DesirabilityTable { z }
}

pub const LSVI_ITERATION_CAP: usize = 1_000_000;

/// Linearly solvable value iteration: iterate `Z <- A Z + w` from `z0` until
/// `||dZ||_inf <= tol`. Returns the table and the iteration count.
pub fn lsvi_solve(
    num_states: usize,
    system: &LinearSystem,
    z0: &[f64],
    tol: f64,
) -> Result<(DesirabilityTable, usize), ReError> {
    if system.w.iter().all(|&w| w == 0.0) {
        return Err(ReError::ZeroTerminalMass);
    }
    let n = system.dim();
    assert_eq!(z0.len(), n, "z0 length must match the system dimension");
    let mut z = z0.to_vec();
    for k in 1..=LSVI_ITERATION_CAP {
        let mut next = system.w.clone();
        for i in 0..n {
            let row = &system.a[i];
            let mut acc = 0.0;
            for j in 0..n {
                acc += row[j] * z[j];
            }
            next[i] += acc;
        }
        let residual = z
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        z = next;
        if residual <= tol {
            let table = expand_to_full(num_states, system, &z);
            for (i, &x) in system.states.iter().enumerate() {
                if !(z[i] > 0.0) {
                    return Err(ReError::NonPositiveZ(x, z[i]));
                }
            }
            return Ok((table, k));
        }
    }
    Err(ReError::NonConvergence { iters: LSVI_ITERATION_CAP, residual: f64::NAN })
}

/// Direct solve of `(I - A) Z = w` by dense Gaussian elimination with
/// partial pivoting. The oracle counterpart of `lsvi_solve`.
pub fn solve_direct(num_states: usize, system: &LinearSystem) -> Result<DesirabilityTable, ReError> {
    if system.w.iter().all(|&w| w == 0.0) {
        return Err(ReError::ZeroTerminalMass);
    }
    let n = system.dim();
    let mut m = vec![vec![0.0; n + 1]; n];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = if i == j { 1.0 - system.a[i][j] } else { -system.a[i][j] };
        }
        m[i][n] = system.w[i];
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap())
            .unwrap();
        if m[pivot][col].abs() < 1e-300 {
            return Err(ReError::Singular);
        }
        m.swap(col, pivot);
        for row in (col + 1)..n {
            let f = m[row][col] / m[col][col];
            if f != 0.0 {
                for j in col..=n {
                    m[row][j] -= f * m[col][j];
                }
            }
        }
    }
    let mut z = vec![0.0; n];
    for i in (0..n).rev() {
        let mut acc = m[i][n];
        for j in (i + 1)..n {
            acc -= m[i][j] * z[j];
        }
        z[i] = acc / m[i][i];
    }
    for (i, &x) in system.states.iter().enumerate() {
        if !(z[i] > 0.0) {
            return Err(ReError::NonPositiveZ(x, z[i]));
        }
    }
    Ok(expand_to_full(num_states, system, &z))
}

/// Power-iteration estimate of the spectral radius of the nonnegative
/// matrix `A`, with 1e-6 relative tolerance (200 iterations max).
/// Returns `(contractive, estimate)`.
pub fn contraction_check(system: &LinearSystem) -> (bool, f64) {
    let n = system.dim();
    if n == 0 {
        return (true, 0.0);
    }
    let mut v = vec![1.0; n];
    let mut rho = 0.0;
    for _ in 0..200 {
        let mut next = vec![0.0; n];
        for i in 0..n {
            let row = &system.a[i];
            let mut acc = 0.0;
            for j in 0..n {
                acc += row[j] * v[j];
            }
            next[i] = acc;
        }
        let norm = next.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        if norm == 0.0 {
            return (true, 0.0);
        }
        let prev = rho;
        rho = norm;
        for x in &mut next {
            *x /= norm;
        }
        v = next;
        if prev > 0.0 && ((rho - prev) / rho).abs() < 1e-6 {
            break;
        }
    }
    (rho < 1.0, rho)
}

/// `V = -lambda ln Z`.
pub fn desirability_to_value(z: &DesirabilityTable, lambda: f64) -> Result<ValueTable, ReError> {
    let mut values = Vec::with_capacity(z.z.len());
    for (x, &zx) in z.z.iter().enumerate() {
        if !(zx > 0.0) {
            return Err(ReError::NonPositiveZ(x, zx));
        }
        values.push(-lambda * zx.ln());
    }
    Ok(ValueTable { values })
}

/// `Z = exp(-V/lambda)`, exact inverse of `desirability_to_value`.
pub fn value_to_desirability(v: &ValueTable, lambda: f64) -> DesirabilityTable {
    DesirabilityTable {
        z: v.values.iter().map(|&vx| (-vx / lambda).exp()).collect(),
    }
}

/// `rho(x,u) = C(x,u) + V(F(x,u))`, the per-action free-energy exponent.
#[derive(Debug, Clone)]
pub struct RhoTable {
    pub rho: Vec<Vec<f64>>,
}

impl RhoTable {
    pub fn from_value(mdp: &TabularMdp, v: &ValueTable) -> Self {
        let rho = (0..mdp.num_states)
            .map(|x| {
                (0..mdp.num_actions)
                    .map(|u| {
                        if mdp.valid_actions(x).contains(&u) {
                            mdp.cost[x][u] + v.values[mdp.next_state(x, u)]
                        } else {
                            f64::INFINITY
                        }
                    })
                    .collect()
            })
            .collect();
        RhoTable { rho }
    }
}

/// Optimal policy as the Boltzmann distribution
/// `pi(u|x) ∝ b(u|x) exp(-C(x,u)/lambda) Z(F(x,u))`.
///
/// Works in the Z domain directly, avoiding a log/exp round-trip through
/// `rho`. Absorbing states inherit the behavior row.
pub fn boltzmann_policy(
    problem: &ReProblem,
    z: &DesirabilityTable,
) -> Result<StochasticPolicy, ReError> {
    z.validate(&problem.mdp)?;
    let mdp = &problem.mdp;
    let mut probs = Vec::with_capacity(mdp.num_states);
    for x in 0..mdp.num_states {
        if mdp.is_absorbing(x) {
            probs.push(problem.behavior.probs[x].clone());
            continue;
        }
        let mut row = vec![0.0; mdp.num_actions];
        let mut total = 0.0;
        for &u in mdp.valid_actions(x) {
            let weight = problem.behavior.probs[x][u]
                * (-mdp.cost[x][u] / problem.lambda).exp()
                * z.z[mdp.next_state(x, u)];
            row[u] = weight;
            total += weight;
        }
        if !(total > 0.0) || !total.is_finite() {
            return Err(ReError::UnderflowRow(x));
        }
        for p in &mut row {
            *p /= total;
        }
        probs.push(row);
    }
    Ok(StochasticPolicy { probs })
}

/// Path-integral estimate of `Z*(x0)`: the mean of `exp(-G_i/lambda)` over
/// absorbed episodes sharing the start state, `G_i` the undiscounted cost.
pub fn path_integral_estimate(episodes: &[Episode], lambda: f64) -> Result<f64, ReError> {
    if episodes.is_empty() {
        return Err(ReError::NoEpisodes);
    }
    let start = episodes[0].start;
    let mut total = 0.0;
    for (i, ep) in episodes.iter().enumerate() {
        if ep.outcome != EpisodeOutcome::Absorbed {
            return Err(ReError::TruncatedEpisode(i));
        }
        if ep.start != start {
            return Err(ReError::MixedStartStates);
        }
        total += (-ep.total_cost() / lambda).exp();
    }
    Ok(total / episodes.len() as f64)
}

/// Path-integral value estimate `-lambda ln Zhat`.
pub fn path_integral_value(episodes: &[Episode], lambda: f64) -> Result<f64, ReError> {
    Ok(-lambda * path_integral_estimate(episodes, lambda)?.ln())
}

/// The scalar Z-learning update
/// `(1 - alpha) z_x + alpha exp(-c/lambda) z_next`.
///
/// The encrypted pipeline evaluates this same expression over ciphertext;
/// keep the operation order in sync with `he::encrypted_z_update`.
#[inline]
pub fn z_step_value(z_x: f64, z_next: f64, cost: f64, alpha: f64, lambda: f64) -> f64 {
    // Grouped exactly as the ciphertext kernel computes it: the
    // keep-branch product, plus alpha times the (factor * z_next) product.
    (1.0 - alpha) * z_x + alpha * ((-cost / lambda).exp() * z_next)
}

/// Applies one Z-learning update in place. `x` must be non-absorbing;
/// `z(x')` reads 1 when `x'` is absorbing (the table stores that already).
pub fn z_learning_step(
    table: &mut DesirabilityTable,
    transition: (usize, f64, usize),
    alpha: f64,
    lambda: f64,
) {
    let (x, c, xp) = transition;
    table.z[x] = z_step_value(table.z[x], table.z[xp], c, alpha, lambda);
}

/// Z-learning run output: final table, per-checkpoint snapshots, and visit
/// counts.
#[derive(Debug, Clone)]
pub struct ZLearningResult {
    pub table: DesirabilityTable,
    /// `(episode index, snapshot)` pairs, taken after the indexed episode.
    pub snapshots: Vec<(usize, DesirabilityTable)>,
    pub visits: Vec<u64>,
    pub transitions: usize,
}

/// Runs Z-learning for `episodes` episodes under the behavior policy with
/// uniform random spawns. `alpha = kappa/(kappa + n(x))` from per-state
/// visit counts; updates are applied online, one per transition, including
/// on truncated episodes.
pub fn z_learning_run(
    problem: &ReProblem,
    schedule: &StepSizeSchedule,
    episodes: usize,
    max_steps: usize,
    rng: &mut ChaCha8Rng,
    checkpoints: &[usize],
) -> ZLearningResult {
    z_learning_run_observed(problem, schedule, episodes, max_steps, rng, checkpoints, |_, _| {})
}

/// [`z_learning_run`] with a per-episode observer (called with the episode
/// number, 1-based, and the table after that episode). The observer sees
/// every episode; checkpoints still control which snapshots are stored.
pub fn z_learning_run_observed(
    problem: &ReProblem,
    schedule: &StepSizeSchedule,
    episodes: usize,
    max_steps: usize,
    rng: &mut ChaCha8Rng,
    checkpoints: &[usize],
    mut observer: impl FnMut(usize, &DesirabilityTable),
) -> ZLearningResult {
    let mut table = DesirabilityTable::ones(problem.mdp.num_states);
    let mut visits = vec![0u64; problem.mdp.num_states];
    let mut snapshots = Vec::new();
    let mut transitions = 0usize;
    for ep in 1..=episodes {
        let mut x = random_spawn(&problem.mdp, rng);
        for _ in 0..max_steps {
            let u = problem.behavior.sample(x, rng);
            let xp = problem.mdp.next_state(x, u);
            let alpha = schedule.alpha(visits[x]);
            visits[x] += 1;
            z_learning_step(&mut table, (x, problem.mdp.cost[x][u], xp), alpha, problem.lambda);
            transitions += 1;
            if problem.mdp.is_absorbing(xp) {
                break;
            }
            x = xp;
        }
        if checkpoints.contains(&ep) {
            snapshots.push((ep, table.clone()));
        }
        observer(ep, &table);
    }
    ZLearningResult { table, snapshots, visits, transitions }
}

/// Exact value of a policy under the RE-regularized objective: solves the
/// linear fixed point
/// `V(x) = sum_u pi(u|x) [C(x,u) + lambda ln(pi/b) + V(F(x,u))]` with
/// `V(abs) = 0` by direct elimination.
pub fn kl_policy_value_exact(
    problem: &ReProblem,
    policy: &StochasticPolicy,
) -> Result<ValueTable, ReError> {
    let mdp = &problem.mdp;
    let states = problem.interior_states();
    let index_of: HashMap<usize, usize> =
        states.iter().enumerate().map(|(i, &x)| (x, i)).collect();
    let n = states.len();

    // Support check and absorption reachability over the support graph.
    for &x in &states {
        for (u, &p) in policy.probs[x].iter().enumerate() {
            if p > 0.0 && problem.behavior.probs[x][u] <= 0.0 {
                return Err(ReError::SupportViolation(x, u));
            }
        }
    }
    let mut reaches = vec![false; mdp.num_states];
    for &x in &mdp.absorbing {
        reaches[x] = true;
    }
    loop {
        let mut changed = false;
        for &x in &states {
            if reaches[x] {
                continue;
            }
            let any = policy.probs[x]
                .iter()
                .enumerate()
                .any(|(u, &p)| p > 0.0 && reaches[mdp.next_state(x, u)]);
            if any {
                reaches[x] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    if let Some(&x) = states.iter().find(|&&x| !reaches[x]) {
        return Err(ReError::AbsorptionUnreachable(x));
    }

    // Build (I - P_pi) V = c_pi over interior states.
    let mut m = vec![vec![0.0; n + 1]; n];
    for (i, &x) in states.iter().enumerate() {
        m[i][i] = 1.0;
        let mut c_pi = 0.0;
        for (u, &p) in policy.probs[x].iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            c_pi += p
                * (mdp.cost[x][u]
                    + problem.lambda * (p / problem.behavior.probs[x][u]).ln());
            let xp = mdp.next_state(x, u);
            if let Some(&j) = index_of.get(&xp) {
                m[i][j] -= p;
            }
        }
        m[i][n] = c_pi;
    }
    // Gaussian elimination with partial pivoting.
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap())
            .unwrap();
        if m[pivot][col].abs() < 1e-300 {
            return Err(ReError::Singular);
        }
        m.swap(col, pivot);
        for row in (col + 1)..n {
            let f = m[row][col] / m[col][col];
            if f != 0.0 {
                for j in col..=n {
                    m[row][j] -= f * m[col][j];
                }
            }
        }
    }
    let mut v = vec![0.0; n];
    for i in (0..n).rev() {
        let mut acc = m[i][n];
        for j in (i + 1)..n {
            acc -= m[i][j] * v[j];
        }
        v[i] = acc / m[i][i];
    }
    let mut values = vec![0.0; mdp.num_states];
    for (i, &x) in states.iter().enumerate() {
        values[x] = v[i];
    }
    Ok(ValueTable { values })
}
