//! Plaintext tabular RL baselines: value iteration, Monte-Carlo ES, and
//! Q-learning.
//!
//! Every operation here takes a min or argmin over actions. That is exactly
//! the structure that blocks encrypted execution, so nothing in this module
//! is reachable from the homomorphic evaluation path (see the `he` module
//! and the `comparison_freedom` test).
//!
//! The three learners agree on a small discounted grid world:
//!
//! ```rust
//! use encsynth::generic_rl::{
//!     greedy_policy_from_q, greedy_policy_from_value, policy_agreement,
//!     q_learning_run, value_iteration, RlConfig,
//! };
//! use encsynth::mdp::{build_grid_world, GridWorldSpec};
//! use rand::SeedableRng;
//!
//! let spec = GridWorldSpec::from_maze_str("3 3\n...\n...\n..G\n", 0.1)?;
//! let mut mdp = build_grid_world(&spec)?.mdp;
//! mdp.discount = 0.9;
//! mdp.undiscounted = false;
//!
//! let (v_star, _iters) = value_iteration(&mdp, 1e-10)?;
//! let greedy = greedy_policy_from_value(&mdp, &v_star);
//!
//! let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
//! let run = q_learning_run(&mdp, &RlConfig::default(), 100_000, &mut rng);
//! let learned = greedy_policy_from_q(&run.q, &mdp);
//! assert!(policy_agreement(&mdp, &v_star, &greedy, &learned, 1e-9) >= 0.9);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::mdp::{random_spawn, DeterministicPolicy, TabularMdp};

#[derive(Debug, Error)]
pub enum RlError {
    #[error("value iteration did not converge after {iters} iterations (residual {residual})")]
    NonConvergence { iters: usize, residual: f64 },
}

/// State values; zero on absorbing states.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub values: Vec<f64>,
}

impl ValueTable {
    pub fn zeros(num_states: usize) -> Self {
        ValueTable { values: vec![0.0; num_states] }
    }

    pub fn max_abs_diff(&self, other: &ValueTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// CSV with columns `state,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("state,value\n");
        for (x, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{x},{v}");
        }
        out
    }
}

/// State-action values.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub values: Vec<Vec<f64>>,
}

impl QTable {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        QTable { values: vec![vec![0.0; num_actions]; num_states] }
    }

    pub fn max_abs_diff_valid(&self, other: &QTable, mdp: &TabularMdp) -> f64 {
        let mut worst: f64 = 0.0;
        for x in 0..mdp.num_states {
            for &u in mdp.valid_actions(x) {
                worst = worst.max((self.values[x][u] - other.values[x][u]).abs());
            }
        }
        worst
    }

    /// CSV with columns `state,action,value` over valid actions.
    pub fn to_csv(&self, mdp: &TabularMdp) -> String {
        let mut out = String::from("state,action,value\n");
        for x in 0..mdp.num_states {
            for &u in mdp.valid_actions(x) {
                let _ = writeln!(out, "{x},{u},{}", self.values[x][u]);
            }
        }
        out
    }
}

/// Count-based step size `alpha(n) = kappa / (kappa + n)`.
///
/// Satisfies the Robbins-Monro condition: partial sums diverge while squared
/// sums stay bounded (see `robbins_monro` tests).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSizeSchedule {
    pub kappa: f64,
}

impl StepSizeSchedule {
    pub fn alpha(&self, visits: u64) -> f64 {
        self.kappa / (self.kappa + visits as f64)
    }
}

/// Q-learning configuration.
#[derive(Debug, Clone, Copy)]
pub struct RlConfig {
    pub epsilon: f64,
    pub schedule: StepSizeSchedule,
    pub gamma: f64,
    pub tol: f64,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            epsilon: 0.3,
            schedule: StepSizeSchedule { kappa: 1000.0 },
            gamma: 0.9,
            tol: 1e-10,
        }
    }
}

fn argmin_valid(values: &[f64], valid: &[usize]) -> usize {
    // Tie-break: lowest action id (valid lists are sorted).
    let mut best = valid[0];
    let mut best_v = values[best];
    for &u in &valid[1..] {
        if values[u] < best_v {
            best = u;
            best_v = values[u];
        }
    }
    best
}

fn backup_value(mdp: &TabularMdp, v: &ValueTable, x: usize, u: usize, gamma: f64) -> f64 {
    let future: f64 = mdp
        .successors(x, u)
        .iter()
        .map(|&(xp, p)| p * v.values[xp])
        .sum();
    mdp.cost[x][u] + gamma * future
}

/// One Bellman backup `(TV)(x) = min_u [C(x,u) + gamma * E V(x')]`.
/// Absorbing states stay fixed at 0.
pub fn bellman_backup(mdp: &TabularMdp, v: &ValueTable) -> ValueTable {
    let values = (0..mdp.num_states)
        .map(|x| {
            if mdp.is_absorbing(x) {
                0.0
            } else {
                mdp.valid_actions(x)
                    .iter()
                    .map(|&u| backup_value(mdp, v, x, u, mdp.discount))
                    .fold(f64::INFINITY, f64::min)
            }
        })
        .collect();
    ValueTable { values }
}

pub const VALUE_ITERATION_CAP: usize = 1_000_000;

/// Iterates Bellman backups until `||TV - V||_inf <= tol`.
/// Returns the value table and the iteration count.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<(ValueTable, usize), RlError> {
    let mut v = ValueTable::zeros(mdp.num_states);
    for k in 1..=VALUE_ITERATION_CAP {
        let next = bellman_backup(mdp, &v);
        let residual = next.max_abs_diff(&v);
        v = next;
        if residual <= tol {
            return Ok((v, k));
        }
    }
    let next = bellman_backup(mdp, &v);
    Err(RlError::NonConvergence {
        iters: VALUE_ITERATION_CAP,
        residual: next.max_abs_diff(&v),
    })
}

/// Greedy (argmin) policy extraction from a value table.
pub fn greedy_policy_from_value(mdp: &TabularMdp, v: &ValueTable) -> DeterministicPolicy {
    let actions = (0..mdp.num_states)
        .map(|x| {
            let valid = mdp.valid_actions(x);
            let backups: Vec<f64> = (0..mdp.num_actions)
                .map(|u| {
                    if valid.contains(&u) {
                        backup_value(mdp, v, x, u, mdp.discount)
                    } else {
                        f64::INFINITY
                    }
                })
                .collect();
            argmin_valid(&backups, valid)
        })
        .collect();
    DeterministicPolicy { actions }
}

/// Greedy (argmin) policy read off a Q table, restricted to valid actions.
pub fn greedy_policy_from_q(q: &QTable, mdp: &TabularMdp) -> DeterministicPolicy {
    let actions = (0..mdp.num_states)
        .map(|x| argmin_valid(&q.values[x], mdp.valid_actions(x)))
        .collect();
    DeterministicPolicy { actions }
}

/// Optimal Q from the optimal value: `Q*(x,u) = C(x,u) + gamma * E V*(x')`.
pub fn q_from_value(mdp: &TabularMdp, v: &ValueTable, gamma: f64) -> QTable {
    let mut q = QTable::zeros(mdp.num_states, mdp.num_actions);
    for x in 0..mdp.num_states {
        if mdp.is_absorbing(x) {
            continue;
        }
        for &u in mdp.valid_actions(x) {
            q.values[x][u] = backup_value(mdp, v, x, u, gamma);
        }
    }
    q
}

/// Epsilon-greedy action selection: argmin with probability `1 - epsilon`,
/// uniform over valid actions with probability `epsilon`.
pub fn epsilon_greedy(
    q: &QTable,
    mdp: &TabularMdp,
    x: usize,
    epsilon: f64,
    rng: &mut ChaCha8Rng,
) -> usize {
    let valid = mdp.valid_actions(x);
    if rng.random::<f64>() < epsilon {
        valid[rng.random_range(0..valid.len())]
    } else {
        argmin_valid(&q.values[x], valid)
    }
}

/// One Q-learning update. Only entry `(x, u)` changes.
pub fn q_learning_step(
    mdp: &TabularMdp,
    q: &mut QTable,
    transition: (usize, usize, f64, usize),
    alpha: f64,
    gamma: f64,
) {
    let (x, u, c, xp) = transition;
    let target = if mdp.is_absorbing(xp) {
        0.0
    } else {
        mdp.valid_actions(xp)
            .iter()
            .map(|&up| q.values[xp][up])
            .fold(f64::INFINITY, f64::min)
    };
    q.values[x][u] = (1.0 - alpha) * q.values[x][u] + alpha * (c + gamma * target);
}

/// Result of a Q-learning run.
#[derive(Debug, Clone)]
pub struct QLearningRun {
    pub q: QTable,
    pub visits: Vec<Vec<u64>>,
    pub steps: usize,
}

/// Runs `steps` Q-learning updates with epsilon-greedy exploration.
///
/// The environment respawns uniformly at a non-absorbing state whenever an
/// absorbing state is entered. Step sizes come from per-pair visit counts.
pub fn q_learning_run(
    mdp: &TabularMdp,
    config: &RlConfig,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> QLearningRun {
    q_learning_run_from(mdp, config, steps, QTable::zeros(mdp.num_states, mdp.num_actions), rng)
}

/// As `q_learning_run` but starting from a caller-supplied Q table.
pub fn q_learning_run_from(
    mdp: &TabularMdp,
    config: &RlConfig,
    steps: usize,
    q0: QTable,
    rng: &mut ChaCha8Rng,
) -> QLearningRun {
    let mut q = q0;
    let mut visits = vec![vec![0u64; mdp.num_actions]; mdp.num_states];
    let mut x = random_spawn(mdp, rng);
    for _ in 0..steps {
        let u = epsilon_greedy(&q, mdp, x, config.epsilon, rng);
        let xp = {
            // Deterministic or stochastic step.
            let succ = mdp.successors(x, u);
            if succ.len() == 1 {
                succ[0].0
            } else {
                let r: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = succ[succ.len() - 1].0;
                for &(s, p) in &succ {
                    acc += p;
                    if r < acc {
                        chosen = s;
                        break;
                    }
                }
                chosen
            }
        };
        let alpha = config.schedule.alpha(visits[x][u]);
        visits[x][u] += 1;
        q_learning_step(mdp, &mut q, (x, u, mdp.cost[x][u], xp), alpha, config.gamma);
        x = if mdp.is_absorbing(xp) { random_spawn(mdp, rng) } else { xp };
    }
    QLearningRun { q, visits, steps }
}

/// Monte-Carlo policy iteration with exploring starts.
///
/// With `geometric_stopping` each episode terminates with probability
/// `1 - gamma` per step and line 5 uses the undiscounted sum; otherwise the
/// discounted sum is truncated at `max_steps` (bias on the order of
/// `gamma^max_steps * ||C||_inf / (1 - gamma)`).
pub fn monte_carlo_es(
    mdp: &TabularMdp,
    sweeps: usize,
    episodes_per_pair: usize,
    gamma: f64,
    geometric_stopping: bool,
    max_steps: usize,
    rng: &mut ChaCha8Rng,
) -> (QTable, DeterministicPolicy) {
    // Initial policy: Stay where available (grid convention), else the
    // lowest valid action id.
    let stay = mdp.num_actions.saturating_sub(1);
    let mut policy: Vec<usize> = (0..mdp.num_states)
        .map(|x| {
            let valid = mdp.valid_actions(x);
            if valid.contains(&stay) {
                stay
            } else {
                valid[0]
            }
        })
        .collect();
    let mut q = QTable::zeros(mdp.num_states, mdp.num_actions);

    for _ in 0..sweeps {
        for x0 in 0..mdp.num_states {
            if mdp.is_absorbing(x0) {
                continue;
            }
            for &u0 in mdp.valid_actions(x0) {
                let mut total = 0.0;
                for _ in 0..episodes_per_pair {
                    total += rollout(mdp, &policy, x0, u0, gamma, geometric_stopping, max_steps, rng);
                }
                q.values[x0][u0] = total / episodes_per_pair as f64;
            }
        }
        for (x, p) in policy.iter_mut().enumerate() {
            if !mdp.is_absorbing(x) {
                *p = argmin_valid(&q.values[x], mdp.valid_actions(x));
            }
        }
    }
    (q, DeterministicPolicy { actions: policy })
}

#[allow(clippy::too_many_arguments)]
fn rollout(
    mdp: &TabularMdp,
    policy: &[usize],
    x0: usize,
    u0: usize,
    gamma: f64,
    geometric_stopping: bool,
    max_steps: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut x = x0;
    let mut u = u0;
    let mut g = 0.0;
    let mut discount = 1.0;
    for _ in 0..max_steps {
        g += discount * mdp.cost[x][u];
        if !geometric_stopping {
            discount *= gamma;
        }
        let succ = mdp.successors(x, u);
        x = if succ.len() == 1 {
            succ[0].0
        } else {
            let r: f64 = rng.random();
            let mut acc = 0.0;
            let mut chosen = succ[succ.len() - 1].0;
            for &(s, p) in &succ {
                acc += p;
                if r < acc {
                    chosen = s;
                    break;
                }
            }
            chosen
        };
        if mdp.is_absorbing(x) {
            break;
        }
        if geometric_stopping && rng.random::<f64>() >= gamma {
            break;
        }
        u = policy[x];
    }
    g
}

/// Partial sum of the schedule over visit counts `0..n`.
pub fn alpha_partial_sum(schedule: &StepSizeSchedule, n: u64) -> f64 {
    (0..n).map(|k| schedule.alpha(k)).sum()
}

/// Partial sum of squared step sizes over visit counts `a..b`.
pub fn alpha_sq_partial_sum(schedule: &StepSizeSchedule, a: u64, b: u64) -> f64 {
    (a..b).map(|k| schedule.alpha(k).powi(2)).sum()
}

/// Fraction of non-absorbing states on which two deterministic policies
/// choose actions with equal backed-up value (policy agreement up to ties).
pub fn policy_agreement(
    mdp: &TabularMdp,
    v: &ValueTable,
    a: &DeterministicPolicy,
    b: &DeterministicPolicy,
    tol: f64,
) -> f64 {
    let mut agree = 0usize;
    let mut total = 0usize;
    for x in 0..mdp.num_states {
        if mdp.is_absorbing(x) {
            continue;
        }
        total += 1;
        let va = backup_value(mdp, v, x, a.actions[x], mdp.discount);
        let vb = backup_value(mdp, v, x, b.actions[x], mdp.discount);
        if (va - vb).abs() <= tol {
            agree += 1;
        }
    }
    if total == 0 {
        1.0
    } else {
        agree as f64 / total as f64
    }
}

/// Returns true when the policy moves weakly closer to the goal from every
/// state, judged by a caller-supplied distance table.
pub fn weakly_goalward(mdp: &TabularMdp, policy: &DeterministicPolicy, dist: &[usize]) -> bool {
    (0..mdp.num_states).all(|x| {
        if mdp.is_absorbing(x) {
            return true;
        }
        let xp = mdp.next_state(x, policy.actions[x]);
        dist[xp] < dist[x] || (dist[x] == 0 && dist[xp] == 0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::Transitions;
    use rand::SeedableRng;
    use std::collections::BTreeSet;

    /// Chain x3 -> x2 -> x1 -> abs with one mandatory action of given cost,
    /// plus the absorbing state (id 0).
    fn chain(len: usize, cost: f64, gamma: f64) -> TabularMdp {
        let num_states = len + 1;
        let mut next = vec![vec![0usize]; num_states];
        let mut costs = vec![vec![0.0f64]; num_states];
        for x in 1..num_states {
            next[x][0] = x - 1;
            costs[x][0] = cost;
        }
        TabularMdp {
            num_states,
            num_actions: 1,
            transitions: Transitions::Deterministic(next),
            cost: costs,
            discount: gamma,
            absorbing: BTreeSet::from([0]),
            valid_actions: vec![vec![0]; num_states],
            undiscounted: false,
        }
    }

    /// One non-absorbing state (id 1) with two actions into the absorbing
    /// state (id 0) at the given costs.
    fn two_action(costs: [f64; 2], gamma: f64) -> TabularMdp {
        TabularMdp {
            num_states: 2,
            num_actions: 2,
            transitions: Transitions::Deterministic(vec![vec![0, 0], vec![0, 0]]),
            cost: vec![vec![0.0, 0.0], vec![costs[0], costs[1]]],
            discount: gamma,
            absorbing: BTreeSet::from([0]),
            valid_actions: vec![vec![0, 1], vec![0, 1]],
            undiscounted: false,
        }
    }

    #[test]
    fn backup_free_self_loop() {
        // One state with a free self-loop and a cost-1 exit: TV = 0 at V = 0.
        let mdp = TabularMdp {
            num_states: 2,
            num_actions: 2,
            transitions: Transitions::Deterministic(vec![vec![0, 0], vec![0, 1]]),
            cost: vec![vec![0.0, 0.0], vec![1.0, 0.0]],
            discount: 0.5,
            absorbing: BTreeSet::from([0]),
            valid_actions: vec![vec![0, 1], vec![0, 1]],
            undiscounted: false,
        };
        let tv = bellman_backup(&mdp, &ValueTable::zeros(2));
        assert_eq!(tv.values[1], 0.0);
    }

    #[test]
    fn backup_costly_self_loop() {
        let mdp = TabularMdp {
            num_states: 2,
            num_actions: 2,
            transitions: Transitions::Deterministic(vec![vec![0, 0], vec![0, 1]]),
            cost: vec![vec![0.0, 0.0], vec![1.0, 1.0]],
            discount: 0.5,
            absorbing: BTreeSet::from([0]),
            valid_actions: vec![vec![0, 1], vec![0, 1]],
            undiscounted: false,
        };
        let tv = bellman_backup(&mdp, &ValueTable::zeros(2));
        assert_eq!(tv.values[1], 1.0);
    }

    #[test]
    fn backup_chain() {
        let mdp = chain(3, 1.0, 0.5);
        let tv = bellman_backup(&mdp, &ValueTable::zeros(4));
        assert_eq!(&tv.values[1..], &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn value_iteration_chain_geometric() {
        let mdp = chain(3, 1.0, 0.5);
        let (v, _) = value_iteration(&mdp, 1e-12).unwrap();
        assert!((v.values[1] - 1.0).abs() < 1e-10);
        assert!((v.values[2] - 1.5).abs() < 1e-10);
        assert!((v.values[3] - 1.75).abs() < 1e-10);
    }

    #[test]
    fn value_iteration_zero_costs() {
        let mdp = chain(3, 0.0, 0.5);
        let (v, _) = value_iteration(&mdp, 1e-12).unwrap();
        assert!(v.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn value_iteration_single_state() {
        let mdp = chain(1, 1.0, 0.9);
        let (v, _) = value_iteration(&mdp, 1e-12).unwrap();
        assert!((v.values[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn value_iteration_self_consistency() {
        let mdp = chain(5, 0.3, 0.8);
        let tol = 1e-9;
        let (v, _) = value_iteration(&mdp, tol).unwrap();
        let tv = bellman_backup(&mdp, &v);
        assert!(tv.max_abs_diff(&v) <= tol);
    }

    #[test]
    fn greedy_picks_cheaper_action_and_tiebreaks() {
        let mdp = two_action([1.0, 2.0], 0.9);
        let v = ValueTable::zeros(2);
        let pi = greedy_policy_from_value(&mdp, &v);
        assert_eq!(pi.actions[1], 0);
        let tied = two_action([1.0, 1.0], 0.9);
        let pi = greedy_policy_from_value(&tied, &v);
        assert_eq!(pi.actions[1], 0, "tie-break must pick the lowest action id");
    }

    #[test]
    fn q_learning_step_examples() {
        let mdp = two_action([1.0, 2.0], 0.5);
        let mut q = QTable::zeros(2, 2);
        q_learning_step(&mdp, &mut q, (1, 0, 1.0, 0), 1.0, 0.5);
        assert_eq!(q.values[1][0], 1.0);

        // alpha = 0 leaves the table unchanged.
        let before = q.clone();
        q_learning_step(&mdp, &mut q, (1, 0, 5.0, 0), 0.0, 0.5);
        assert_eq!(q, before);
    }

    #[test]
    fn q_learning_step_hand_value() {
        // Q(x,u)=2, min target 2, c=1, gamma=0.5, alpha=0.5 -> 2.
        let mdp = TabularMdp {
            num_states: 3,
            num_actions: 1,
            transitions: Transitions::Deterministic(vec![vec![0], vec![2], vec![2]]),
            cost: vec![vec![0.0], vec![1.0], vec![1.0]],
            discount: 0.5,
            absorbing: BTreeSet::from([0]),
            valid_actions: vec![vec![0]; 3],
            undiscounted: false,
        };
        let mut q = QTable::zeros(3, 1);
        q.values[1][0] = 2.0;
        q.values[2][0] = 2.0;
        q_learning_step(&mdp, &mut q, (1, 0, 1.0, 2), 0.5, 0.5);
        assert_eq!(q.values[1][0], 2.0);
    }

    #[test]
    fn q_learning_fixed_point() {
        // With epsilon = 0 and Q initialized to Q*, the table stays put.
        let mdp = chain(3, 1.0, 0.5);
        let (v, _) = value_iteration(&mdp, 1e-14).unwrap();
        let q_star = q_from_value(&mdp, &v, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let config = RlConfig { epsilon: 0.0, gamma: 0.5, ..Default::default() };
        let run = q_learning_run_from(&mdp, &config, 5000, q_star.clone(), &mut rng);
        assert!(run.q.max_abs_diff_valid(&q_star, &mdp) < 1e-9);
    }

    #[test]
    fn q_learning_determinism() {
        let mdp = chain(4, 0.5, 0.8);
        let config = RlConfig { gamma: 0.8, ..Default::default() };
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            q_learning_run(&mdp, &config, 2000, &mut rng).q
        };
        assert_eq!(run(11), run(11));
    }

    #[test]
    fn epsilon_greedy_extremes() {
        let mdp = two_action([1.0, 2.0], 0.9);
        let mut q = QTable::zeros(2, 2);
        q.values[1] = vec![3.0, 1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            assert_eq!(epsilon_greedy(&q, &mdp, 1, 0.0, &mut rng), 1);
        }
        // Single valid action: returned regardless of epsilon.
        let one = chain(1, 1.0, 0.9);
        let q1 = QTable::zeros(2, 1);
        for _ in 0..10 {
            assert_eq!(epsilon_greedy(&q1, &one, 1, 1.0, &mut rng), 0);
        }
    }

    #[test]
    fn epsilon_greedy_uniform_frequencies() {
        // epsilon = 1 over 4 valid actions: each frequency in [0.24, 0.26].
        let mdp = TabularMdp {
            num_states: 2,
            num_actions: 4,
            transitions: Transitions::Deterministic(vec![vec![0; 4], vec![0; 4]]),
            cost: vec![vec![0.0; 4], vec![1.0; 4]],
            discount: 0.9,
            absorbing: BTreeSet::from([0]),
            valid_actions: vec![(0..4).collect(), (0..4).collect()],
            undiscounted: false,
        };
        let q = QTable::zeros(2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut counts = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            counts[epsilon_greedy(&q, &mdp, 1, 1.0, &mut rng)] += 1;
        }
        for c in counts {
            let f = c as f64 / n as f64;
            assert!((0.24..=0.26).contains(&f), "frequency {f} out of range");
        }
    }

    #[test]
    fn monte_carlo_two_action_exact() {
        // Deterministic one-step costs: zero-variance estimates.
        let mdp = two_action([1.0, 2.0], 0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (q, pi) = monte_carlo_es(&mdp, 2, 4, 0.9, false, 100, &mut rng);
        assert_eq!(q.values[1][0], 1.0);
        assert_eq!(q.values[1][1], 2.0);
        assert_eq!(pi.actions[1], 0);
    }

    #[test]
    fn robbins_monro_empirical() {
        let schedule = StepSizeSchedule { kappa: 1000.0 };
        // Divergent partial sums.
        assert!(alpha_partial_sum(&schedule, 1_000_000) > 50.0);
        // Convergent squared sums: the tail beyond 1e6 is a vanishing
        // fraction of the head.
        let head = alpha_sq_partial_sum(&schedule, 0, 1_000_000);
        let tail = alpha_sq_partial_sum(&schedule, 1_000_000, 2_000_000);
        assert!(tail < 0.01 * head, "tail {tail} vs head {head}");
    }

    #[test]
    fn contraction_property() {
        // ||TV - TVbar||_inf <= gamma ||V - Vbar||_inf on random MDPs.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let gamma = 0.1 + 0.85 * rng.random::<f64>();
            let mdp = chain(3, rng.random::<f64>(), gamma);
            let v1 = ValueTable {
                values: (0..4).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect(),
            };
            let v2 = ValueTable {
                values: (0..4).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect(),
            };
            let lhs = bellman_backup(&mdp, &v1).max_abs_diff(&bellman_backup(&mdp, &v2));
            let rhs = gamma * v1.max_abs_diff(&v2);
            assert!(lhs <= rhs + 1e-12, "{lhs} > {rhs}");
        }
    }
}
