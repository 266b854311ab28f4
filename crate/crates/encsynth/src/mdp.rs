//! Finite tabular MDPs, grid-world construction, policies, and episode
//! simulation.
//!
//! States are dense integer ids. For grid worlds the mapping is row-major
//! over non-trap cells (the goal cell is a state; trap cells are not).

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MdpError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("goal unreachable from cells {0:?}")]
    UnreachableCells(Vec<(usize, usize)>),
    #[error("state {0} out of range (num_states = {1})")]
    StateOutOfRange(usize, usize),
    #[error("episode start state {0} is absorbing")]
    AbsorbingStart(usize),
    #[error("policy row {0} does not sum to 1 (sum = {1})")]
    RowNotStochastic(usize, f64),
    #[error("maze parse error at line {line}: {detail}")]
    MazeParse { line: usize, detail: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// The nine grid actions: four cardinal, four diagonal, and Stay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GridAction {
    North = 0,
    NorthEast = 1,
    East = 2,
    SouthEast = 3,
    South = 4,
    SouthWest = 5,
    West = 6,
    NorthWest = 7,
    Stay = 8,
}

impl GridAction {
    pub const ALL: [GridAction; 9] = [
        GridAction::North,
        GridAction::NorthEast,
        GridAction::East,
        GridAction::SouthEast,
        GridAction::South,
        GridAction::SouthWest,
        GridAction::West,
        GridAction::NorthWest,
        GridAction::Stay,
    ];

    /// (row, col) displacement. Row 0 is the top of the maze file.
    pub fn delta(self) -> (i64, i64) {
        match self {
            GridAction::North => (-1, 0),
            GridAction::NorthEast => (-1, 1),
            GridAction::East => (0, 1),
            GridAction::SouthEast => (1, 1),
            GridAction::South => (1, 0),
            GridAction::SouthWest => (1, -1),
            GridAction::West => (0, -1),
            GridAction::NorthWest => (-1, -1),
            GridAction::Stay => (0, 0),
        }
    }

    pub fn id(self) -> usize {
        self as usize
    }
}

/// Transition structure: deterministic successor map or stochastic table.
#[derive(Debug, Clone)]
pub enum Transitions {
    /// `next[x][u]` — successor state per (state, action).
    Deterministic(Vec<Vec<usize>>),
    /// `probs[x][u]` — list of `(successor, probability)` per (state, action).
    Stochastic(Vec<Vec<Vec<(usize, f64)>>>),
}

/// A finite MDP with per-state valid action sets.
///
/// Costs and transitions are only meaningful for valid actions; operations
/// in this crate never consult invalid entries.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    pub num_states: usize,
    pub num_actions: usize,
    pub transitions: Transitions,
    /// `cost[x][u]`, finite for valid actions.
    pub cost: Vec<Vec<f64>>,
    /// Discount factor in [0, 1]; 1 only with `undiscounted` set.
    pub discount: f64,
    pub absorbing: BTreeSet<usize>,
    /// Sorted valid action ids per state; always nonempty.
    pub valid_actions: Vec<Vec<usize>>,
    /// Undiscounted first-exit formulation (requires an absorbing state).
    pub undiscounted: bool,
}

impl TabularMdp {
    pub fn is_deterministic(&self) -> bool {
        matches!(self.transitions, Transitions::Deterministic(_))
    }

    pub fn is_absorbing(&self, x: usize) -> bool {
        self.absorbing.contains(&x)
    }

    /// Deterministic successor; panics on stochastic MDPs.
    pub fn next_state(&self, x: usize, u: usize) -> usize {
        match &self.transitions {
            Transitions::Deterministic(next) => next[x][u],
            Transitions::Stochastic(_) => {
                panic!("next_state called on a stochastic MDP")
            }
        }
    }

    /// Successor distribution as `(state, probability)` pairs.
    pub fn successors(&self, x: usize, u: usize) -> Vec<(usize, f64)> {
        match &self.transitions {
            Transitions::Deterministic(next) => vec![(next[x][u], 1.0)],
            Transitions::Stochastic(p) => p[x][u].clone(),
        }
    }

    fn sample_next(&self, x: usize, u: usize, rng: &mut ChaCha8Rng) -> usize {
        match &self.transitions {
            Transitions::Deterministic(next) => next[x][u],
            Transitions::Stochastic(p) => {
                let r: f64 = rng.random();
                let mut acc = 0.0;
                for &(xp, prob) in &p[x][u] {
                    acc += prob;
                    if r < acc {
                        return xp;
                    }
                }
                p[x][u].last().expect("nonempty successor list").0
            }
        }
    }

    /// Valid action ids at `x`.
    pub fn valid_actions(&self, x: usize) -> &[usize] {
        &self.valid_actions[x]
    }

    /// Checks structural invariants: row stochasticity, absorbing self-loops
    /// with zero cost, finite costs, and id ranges.
    pub fn validate(&self) -> Result<(), MdpError> {
        if self.undiscounted && self.absorbing.is_empty() {
            return Err(MdpError::InvalidSpec(
                "undiscounted MDP requires at least one absorbing state".into(),
            ));
        }
        for x in 0..self.num_states {
            if self.valid_actions[x].is_empty() {
                return Err(MdpError::InvalidSpec(format!(
                    "state {x} has no valid actions"
                )));
            }
            for &u in &self.valid_actions[x] {
                if !self.cost[x][u].is_finite() {
                    return Err(MdpError::InvalidSpec(format!(
                        "non-finite cost at ({x}, {u})"
                    )));
                }
                match &self.transitions {
                    Transitions::Deterministic(next) => {
                        let xp = next[x][u];
                        if xp >= self.num_states {
                            return Err(MdpError::StateOutOfRange(xp, self.num_states));
                        }
                    }
                    Transitions::Stochastic(p) => {
                        let sum: f64 = p[x][u].iter().map(|&(_, q)| q).sum();
                        if (sum - 1.0).abs() > 1e-12 {
                            return Err(MdpError::RowNotStochastic(x, sum));
                        }
                        for &(xp, _) in &p[x][u] {
                            if xp >= self.num_states {
                                return Err(MdpError::StateOutOfRange(xp, self.num_states));
                            }
                        }
                    }
                }
                if self.is_absorbing(x) {
                    let self_loop = self
                        .successors(x, u)
                        .iter()
                        .all(|&(xp, q)| xp == x || q == 0.0);
                    if !self_loop || self.cost[x][u] != 0.0 {
                        return Err(MdpError::InvalidSpec(format!(
                            "absorbing state {x} must self-loop with zero cost"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Grid-world description: dimensions, trap cells, goal cell, per-step cost.
#[derive(Debug, Clone, PartialEq)]
pub struct GridWorldSpec {
    pub width: usize,
    pub height: usize,
    pub traps: BTreeSet<(usize, usize)>,
    pub goal: (usize, usize),
    pub step_cost: f64,
}

impl GridWorldSpec {
    pub fn validate(&self) -> Result<(), MdpError> {
        if self.width == 0 || self.height == 0 {
            return Err(MdpError::InvalidSpec("empty grid".into()));
        }
        if self.goal.0 >= self.height || self.goal.1 >= self.width {
            return Err(MdpError::InvalidSpec("goal out of bounds".into()));
        }
        if self.traps.contains(&self.goal) {
            return Err(MdpError::InvalidSpec("goal cell is a trap".into()));
        }
        for &(r, c) in &self.traps {
            if r >= self.height || c >= self.width {
                return Err(MdpError::InvalidSpec(format!("trap ({r}, {c}) out of bounds")));
            }
        }
        if !(self.step_cost > 0.0) {
            return Err(MdpError::InvalidSpec("step_cost must be > 0".into()));
        }
        Ok(())
    }

    /// Parses the maze text format: `width height` on line 1, then `height`
    /// rows of `width` characters from `{'.', 'T', 'G'}`.
    pub fn from_maze_str(text: &str, step_cost: f64) -> Result<Self, MdpError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(MdpError::MazeParse {
            line: 1,
            detail: "missing header".into(),
        })?;
        let mut parts = header.split_whitespace();
        let width: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or(MdpError::MazeParse { line: 1, detail: "bad width".into() })?;
        let height: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or(MdpError::MazeParse { line: 1, detail: "bad height".into() })?;
        let mut traps = BTreeSet::new();
        let mut goal = None;
        for r in 0..height {
            let row = lines.next().ok_or(MdpError::MazeParse {
                line: r + 2,
                detail: "missing row".into(),
            })?;
            let chars: Vec<char> = row.trim_end().chars().collect();
            if chars.len() != width {
                return Err(MdpError::MazeParse {
                    line: r + 2,
                    detail: format!("expected {} cells, found {}", width, chars.len()),
                });
            }
            for (c, ch) in chars.iter().enumerate() {
                match ch {
                    '.' => {}
                    'T' => {
                        traps.insert((r, c));
                    }
                    'G' => {
                        if goal.replace((r, c)).is_some() {
                            return Err(MdpError::MazeParse {
                                line: r + 2,
                                detail: "multiple goal cells".into(),
                            });
                        }
                    }
                    other => {
                        return Err(MdpError::MazeParse {
                            line: r + 2,
                            detail: format!("unexpected character {other:?}"),
                        });
                    }
                }
            }
        }
        let goal = goal.ok_or(MdpError::MazeParse { line: 1, detail: "no goal cell".into() })?;
        let spec = GridWorldSpec { width, height, traps, goal, step_cost };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_maze_str(&self) -> String {
        let mut out = format!("{} {}\n", self.width, self.height);
        for r in 0..self.height {
            for c in 0..self.width {
                let ch = if (r, c) == self.goal {
                    'G'
                } else if self.traps.contains(&(r, c)) {
                    'T'
                } else {
                    '.'
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }
}

/// A grid world: the induced MDP plus the bidirectional cell/state mapping.
#[derive(Debug, Clone)]
pub struct GridWorld {
    pub mdp: TabularMdp,
    pub spec: GridWorldSpec,
    /// State id -> (row, col).
    pub cell_of_state: Vec<(usize, usize)>,
    /// (row, col) -> state id.
    pub state_of_cell: HashMap<(usize, usize), usize>,
}

impl GridWorld {
    pub fn goal_state(&self) -> usize {
        self.state_of_cell[&self.spec.goal]
    }

    /// Breadth-first shortest-path distance (in moves) from every state to
    /// the goal. Used by tests as a monotonicity oracle.
    pub fn goal_distances(&self) -> Vec<usize> {
        let goal = self.goal_state();
        let mut dist = vec![usize::MAX; self.mdp.num_states];
        dist[goal] = 0;
        let mut queue = VecDeque::from([goal]);
        // Reverse BFS: x reaches the frontier in one move.
        while let Some(y) = queue.pop_front() {
            for x in 0..self.mdp.num_states {
                if dist[x] != usize::MAX || self.mdp.is_absorbing(x) {
                    continue;
                }
                let reaches = self
                    .mdp
                    .valid_actions(x)
                    .iter()
                    .any(|&u| self.mdp.next_state(x, u) == y);
                if reaches {
                    dist[x] = dist[y] + 1;
                    queue.push_back(x);
                }
            }
        }
        dist
    }
}

/// Builds the grid-world MDP.
///
/// One state per non-trap cell (row-major ids). The goal is the unique
/// absorbing state. Moves leaving the grid or entering a trap are excluded
/// from the valid action set; Stay is always valid. Every transition costs
/// `step_cost` except at the goal, where all actions self-loop at cost 0.
pub fn build_grid_world(spec: &GridWorldSpec) -> Result<GridWorld, MdpError> {
    spec.validate()?;
    let mut cell_of_state = Vec::new();
    let mut state_of_cell = HashMap::new();
    for r in 0..spec.height {
        for c in 0..spec.width {
            if !spec.traps.contains(&(r, c)) {
                state_of_cell.insert((r, c), cell_of_state.len());
                cell_of_state.push((r, c));
            }
        }
    }
    let num_states = cell_of_state.len();
    let goal_state = state_of_cell[&spec.goal];

    let mut next = vec![vec![0usize; 9]; num_states];
    let mut cost = vec![vec![0.0f64; 9]; num_states];
    let mut valid = vec![Vec::new(); num_states];
    for (x, &(r, c)) in cell_of_state.iter().enumerate() {
        if x == goal_state {
            for a in GridAction::ALL {
                next[x][a.id()] = x;
                cost[x][a.id()] = 0.0;
                valid[x].push(a.id());
            }
            continue;
        }
        for a in GridAction::ALL {
            let (dr, dc) = a.delta();
            let nr = r as i64 + dr;
            let nc = c as i64 + dc;
            if nr < 0 || nc < 0 || nr >= spec.height as i64 || nc >= spec.width as i64 {
                continue;
            }
            let cell = (nr as usize, nc as usize);
            if spec.traps.contains(&cell) {
                continue;
            }
            let u = a.id();
            next[x][u] = state_of_cell[&cell];
            cost[x][u] = spec.step_cost;
            valid[x].push(u);
        }
    }

    let mdp = TabularMdp {
        num_states,
        num_actions: 9,
        transitions: Transitions::Deterministic(next),
        cost,
        discount: 1.0,
        absorbing: BTreeSet::from([goal_state]),
        valid_actions: valid,
        undiscounted: true,
    };
    mdp.validate()?;

    let world = GridWorld {
        mdp,
        spec: spec.clone(),
        cell_of_state,
        state_of_cell,
    };
    // Goal must be reachable from every state or optimal play cannot
    // terminate an episode.
    let dist = world.goal_distances();
    let unreachable: Vec<(usize, usize)> = dist
        .iter()
        .enumerate()
        .filter(|&(_, &d)| d == usize::MAX)
        .map(|(x, _)| world.cell_of_state[x])
        .collect();
    if !unreachable.is_empty() {
        return Err(MdpError::UnreachableCells(unreachable));
    }
    Ok(world)
}

/// Per-state action distribution. Rows are full `num_actions` wide; invalid
/// actions carry probability 0.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticPolicy {
    pub probs: Vec<Vec<f64>>,
}

impl StochasticPolicy {
    pub fn validate(&self, mdp: &TabularMdp) -> Result<(), MdpError> {
        for (x, row) in self.probs.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 || row.iter().any(|&p| p < 0.0) {
                return Err(MdpError::RowNotStochastic(x, sum));
            }
            for (u, &p) in row.iter().enumerate() {
                if p > 0.0 && !mdp.valid_actions(x).contains(&u) {
                    return Err(MdpError::InvalidSpec(format!(
                        "policy puts mass on invalid action ({x}, {u})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn sample(&self, x: usize, rng: &mut ChaCha8Rng) -> usize {
        let r: f64 = rng.random();
        let mut acc = 0.0;
        let row = &self.probs[x];
        for (u, &p) in row.iter().enumerate() {
            acc += p;
            if r < acc {
                return u;
            }
        }
        row.iter().rposition(|&p| p > 0.0).expect("nonempty policy row")
    }
}

/// One action id per state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeterministicPolicy {
    pub actions: Vec<usize>,
}

impl DeterministicPolicy {
    /// Lifts to a stochastic policy with unit mass on each chosen action.
    pub fn to_stochastic(&self, num_actions: usize) -> StochasticPolicy {
        let probs = self
            .actions
            .iter()
            .map(|&u| {
                let mut row = vec![0.0; num_actions];
                row[u] = 1.0;
                row
            })
            .collect();
        StochasticPolicy { probs }
    }
}

/// Uniform behavior policy: `b(u|x) = 1/|valid_actions(x)|` on valid actions.
pub fn uniform_behavior(mdp: &TabularMdp) -> StochasticPolicy {
    let probs = (0..mdp.num_states)
        .map(|x| {
            let valid = mdp.valid_actions(x);
            let p = 1.0 / valid.len() as f64;
            let mut row = vec![0.0; mdp.num_actions];
            for &u in valid {
                row[u] = p;
            }
            row
        })
        .collect();
    StochasticPolicy { probs }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeOutcome {
    /// Final transition entered an absorbing state.
    Absorbed,
    /// Stopped at the step limit.
    Truncated,
}

/// A simulated trajectory: ordered `(state, action, cost)` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub start: usize,
    pub steps: Vec<(usize, usize, f64)>,
    pub outcome: EpisodeOutcome,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_cost(&self) -> f64 {
        self.steps.iter().map(|&(_, _, c)| c).sum()
    }

    /// CSV with columns `t,state,action,cost`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,state,action,cost\n");
        for (t, &(x, u, c)) in self.steps.iter().enumerate() {
            let _ = writeln!(out, "{t},{x},{u},{c}");
        }
        out
    }
}

/// Simulates one episode under `policy` from `x0`, stopping at absorption or
/// `max_steps`. Reproducible for a given rng state.
pub fn simulate_episode(
    mdp: &TabularMdp,
    policy: &StochasticPolicy,
    x0: usize,
    max_steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Episode, MdpError> {
    if x0 >= mdp.num_states {
        return Err(MdpError::StateOutOfRange(x0, mdp.num_states));
    }
    if mdp.is_absorbing(x0) {
        return Err(MdpError::AbsorbingStart(x0));
    }
    let mut steps = Vec::new();
    let mut x = x0;
    let mut outcome = EpisodeOutcome::Truncated;
    for _ in 0..max_steps {
        let u = policy.sample(x, rng);
        let xp = mdp.sample_next(x, u, rng);
        steps.push((x, u, mdp.cost[x][u]));
        x = xp;
        if mdp.is_absorbing(x) {
            outcome = EpisodeOutcome::Absorbed;
            break;
        }
    }
    Ok(Episode { start: x0, steps, outcome })
}

/// Uniform random non-absorbing spawn state.
pub fn random_spawn(mdp: &TabularMdp, rng: &mut ChaCha8Rng) -> usize {
    let candidates: Vec<usize> =
        (0..mdp.num_states).filter(|x| !mdp.is_absorbing(*x)).collect();
    candidates[rng.random_range(0..candidates.len())]
}

/// Discounted return `sum_t gamma^t c_t` of an episode.
pub fn discounted_return(episode: &Episode, gamma: f64) -> f64 {
    let mut total = 0.0;
    let mut g = 1.0;
    for &(_, _, c) in &episode.steps {
        total += g * c;
        g *= gamma;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn spec9x9() -> GridWorldSpec {
        GridWorldSpec {
            width: 9,
            height: 9,
            traps: BTreeSet::new(),
            goal: (8, 8),
            step_cost: 0.1,
        }
    }

    #[test]
    fn grid_9x9_no_traps() {
        let world = build_grid_world(&spec9x9()).unwrap();
        assert_eq!(world.mdp.num_states, 81);
        assert!(world.mdp.is_absorbing(world.goal_state()));
        // Interior cell has 9 actions.
        let interior = world.state_of_cell[&(4, 4)];
        assert_eq!(world.mdp.valid_actions(interior).len(), 9);
    }

    #[test]
    fn grid_1x1_degenerate() {
        let spec = GridWorldSpec {
            width: 1,
            height: 1,
            traps: BTreeSet::new(),
            goal: (0, 0),
            step_cost: 0.1,
        };
        let world = build_grid_world(&spec).unwrap();
        assert_eq!(world.mdp.num_states, 1);
        assert!(world.mdp.is_absorbing(0));
        assert_eq!(world.mdp.cost[0], vec![0.0; 9]);
    }

    #[test]
    fn grid_3x3_trap_blocks_diagonal() {
        // (0,0): E and S stay in-bounds, SE blocked by the center trap.
        let spec = GridWorldSpec {
            width: 3,
            height: 3,
            traps: BTreeSet::from([(1, 1)]),
            goal: (2, 2),
            step_cost: 0.1,
        };
        let world = build_grid_world(&spec).unwrap();
        assert_eq!(world.mdp.num_states, 8);
        let x = world.state_of_cell[&(0, 0)];
        let valid: BTreeSet<usize> = world.mdp.valid_actions(x).iter().copied().collect();
        let expected: BTreeSet<usize> = [
            GridAction::East.id(),
            GridAction::South.id(),
            GridAction::Stay.id(),
        ]
        .into_iter()
        .collect();
        assert_eq!(valid, expected);
    }

    #[test]
    fn corner_cell_actions() {
        let world = build_grid_world(&spec9x9()).unwrap();
        let x = world.state_of_cell[&(0, 0)];
        let valid: BTreeSet<usize> = world.mdp.valid_actions(x).iter().copied().collect();
        let expected: BTreeSet<usize> = [
            GridAction::East.id(),
            GridAction::SouthEast.id(),
            GridAction::South.id(),
            GridAction::Stay.id(),
        ]
        .into_iter()
        .collect();
        assert_eq!(valid, expected);
    }

    #[test]
    fn cell_ringed_by_traps() {
        let spec = GridWorldSpec {
            width: 3,
            height: 3,
            traps: BTreeSet::from([
                (0, 0),
                (0, 1),
                (1, 0),
                (1, 1),
            ]),
            goal: (2, 2),
            step_cost: 0.1,
        };
        // Wall off everything around (0,2)? It still has neighbors (1,2).
        let world = build_grid_world(&spec).unwrap();
        let x = world.state_of_cell[&(0, 2)];
        assert!(world.mdp.valid_actions(x).contains(&GridAction::Stay.id()));
    }

    #[test]
    fn unreachable_goal_rejected() {
        // Goal in a corner fully walled off by traps.
        let spec = GridWorldSpec {
            width: 3,
            height: 3,
            traps: BTreeSet::from([(1, 1), (1, 2), (2, 1)]),
            goal: (2, 2),
            step_cost: 0.1,
        };
        match build_grid_world(&spec) {
            Err(MdpError::UnreachableCells(cells)) => assert!(!cells.is_empty()),
            other => panic!("expected UnreachableCells, got {other:?}"),
        }
    }

    #[test]
    fn uniform_behavior_rows() {
        let world = build_grid_world(&spec9x9()).unwrap();
        let b = uniform_behavior(&world.mdp);
        b.validate(&world.mdp).unwrap();
        let interior = world.state_of_cell[&(4, 4)];
        assert!((b.probs[interior][GridAction::Stay.id()] - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_behavior_trap_corner() {
        let spec = GridWorldSpec {
            width: 3,
            height: 3,
            traps: BTreeSet::from([(1, 1)]),
            goal: (2, 2),
            step_cost: 0.1,
        };
        let world = build_grid_world(&spec).unwrap();
        let b = uniform_behavior(&world.mdp);
        let x = world.state_of_cell[&(0, 0)];
        assert!((b.probs[x][GridAction::East.id()] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn stay_forever_truncates() {
        let world = build_grid_world(&spec9x9()).unwrap();
        let x0 = world.state_of_cell[&(0, 0)];
        let stay = DeterministicPolicy { actions: vec![GridAction::Stay.id(); 81] }
            .to_stochastic(9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ep = simulate_episode(&world.mdp, &stay, x0, 5, &mut rng).unwrap();
        assert_eq!(ep.len(), 5);
        assert_eq!(ep.outcome, EpisodeOutcome::Truncated);
    }

    #[test]
    fn adjacent_goal_absorbs_in_one_step() {
        let world = build_grid_world(&spec9x9()).unwrap();
        let x0 = world.state_of_cell[&(7, 7)];
        let toward = DeterministicPolicy {
            actions: vec![GridAction::SouthEast.id(); 81],
        }
        .to_stochastic(9);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ep = simulate_episode(&world.mdp, &toward, x0, 10, &mut rng).unwrap();
        assert_eq!(ep.len(), 1);
        assert_eq!(ep.outcome, EpisodeOutcome::Absorbed);
    }

    #[test]
    fn seeded_episode_determinism() {
        let world = build_grid_world(&spec9x9()).unwrap();
        let b = uniform_behavior(&world.mdp);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            simulate_episode(&world.mdp, &b, 0, 200, &mut rng).unwrap()
        };
        let a = run();
        let c = run();
        assert_eq!(a, c);
        assert_eq!(a.to_csv(), c.to_csv());
    }

    #[test]
    fn absorbing_start_rejected() {
        let world = build_grid_world(&spec9x9()).unwrap();
        let b = uniform_behavior(&world.mdp);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let goal = world.goal_state();
        assert!(matches!(
            simulate_episode(&world.mdp, &b, goal, 10, &mut rng),
            Err(MdpError::AbsorbingStart(_))
        ));
    }

    #[test]
    fn discounted_return_examples() {
        let ep = Episode {
            start: 0,
            steps: vec![(0, 0, 1.0), (0, 0, 1.0), (0, 0, 1.0)],
            outcome: EpisodeOutcome::Truncated,
        };
        assert!((discounted_return(&ep, 0.9) - 2.71).abs() < 1e-12);
        assert_eq!(discounted_return(&ep, 1.0), 3.0);
        let empty = Episode { start: 0, steps: vec![], outcome: EpisodeOutcome::Truncated };
        assert_eq!(discounted_return(&empty, 0.9), 0.0);
    }

    #[test]
    fn maze_round_trip() {
        let spec = GridWorldSpec {
            width: 3,
            height: 2,
            traps: BTreeSet::from([(0, 1)]),
            goal: (1, 2),
            step_cost: 0.1,
        };
        let text = spec.to_maze_str();
        assert_eq!(text, "3 2\n.T.\n..G\n");
        let parsed = GridWorldSpec::from_maze_str(&text, 0.1).unwrap();
        assert_eq!(parsed, spec);
    }

    #[test]
    fn maze_parse_errors() {
        assert!(GridWorldSpec::from_maze_str("", 0.1).is_err());
        assert!(GridWorldSpec::from_maze_str("2 2\n..\n.X\n", 0.1).is_err());
        assert!(GridWorldSpec::from_maze_str("2 2\n..\n..\n", 0.1).is_err()); // no goal
    }
}
