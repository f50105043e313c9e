//! The rendezvous grid world.
//!
//! `N` agents live on a `width × height` grid (row-major cell numbering from
//! the top-left corner). Each step every agent applies one of five moves; a
//! move off the grid leaves the agent where it is. The team reward is read off
//! the post-move state: `c2` when every agent sits in a goal cell, `c1` when
//! some but not all do, and zero otherwise. An episode ends as soon as any
//! agent reaches a goal cell, or when the horizon is hit.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest joint state space [`GridWorld::enumerate_states`] will materialize.
pub const MAX_ENUMERATED_STATES: u128 = 1 << 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    /// Terminal observation set.
    pub goal_cells: Vec<usize>,
    /// Reward when some, but not all, agents are on a goal cell.
    pub c1: f64,
    /// Reward when all agents are on a goal cell together.
    pub c2: f64,
    pub gamma: f64,
    /// Episode step cap.
    pub horizon: usize,
}

impl GridSpec {
    /// The 8×8 rendezvous task with goal cell 22.
    pub fn rendezvous_8x8() -> Self {
        Self {
            width: 8,
            height: 8,
            goal_cells: vec![22],
            c1: 1.0,
            c2: 10.0,
            gamma: 0.9,
            horizon: 100,
        }
    }

    /// Same rewards and discount as [`GridSpec::rendezvous_8x8`] on a custom grid.
    pub fn square(side: usize, goal: usize) -> Self {
        Self {
            width: side,
            height: side,
            goal_cells: vec![goal],
            ..Self::rendezvous_8x8()
        }
    }

    pub fn num_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidSpec("grid dimensions must be positive".into()));
        }
        if self.goal_cells.is_empty() {
            return Err(Error::InvalidSpec("at least one goal cell is required".into()));
        }
        if let Some(&g) = self.goal_cells.iter().find(|&&g| g >= self.num_cells()) {
            return Err(Error::InvalidSpec(format!(
                "goal cell {g} outside a {}x{} grid",
                self.width, self.height
            )));
        }
        if self.goal_cells.len() >= self.num_cells() {
            return Err(Error::InvalidSpec("no non-goal start cell left".into()));
        }
        if !(self.c1 < self.c2) {
            return Err(Error::InvalidSpec(format!(
                "c1 ({}) must be smaller than c2 ({})",
                self.c1, self.c2
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidSpec(format!("gamma {} not in [0, 1]", self.gamma)));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidSpec("horizon must be positive".into()));
        }
        Ok(())
    }

    pub fn is_goal(&self, cell: usize) -> bool {
        self.goal_cells.contains(&cell)
    }

    pub fn row_col(&self, cell: usize) -> (usize, usize) {
        (cell / self.width, cell % self.width)
    }

    /// Cell reached by applying `mv` at `cell`, clamped at the border.
    pub fn apply_move(&self, cell: usize, mv: Move) -> usize {
        let (row, col) = self.row_col(cell);
        let (row, col) = match mv {
            Move::Left if col > 0 => (row, col - 1),
            Move::Right if col + 1 < self.width => (row, col + 1),
            Move::Up if row > 0 => (row - 1, col),
            Move::Down if row + 1 < self.height => (row + 1, col),
            _ => (row, col),
        };
        row * self.width + col
    }
}

/// One agent's local observation: the index of the cell it occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Observation(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Move {
    Left,
    Right,
    Up,
    Down,
    Pause,
}

impl Move {
    pub const COUNT: usize = 5;
    pub const ALL: [Move; 5] = [Move::Left, Move::Right, Move::Up, Move::Down, Move::Pause];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Move> {
        Move::ALL.get(i).copied()
    }
}

impl fmt::Display for Move {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Move::Left => "left",
            Move::Right => "right",
            Move::Up => "up",
            Move::Down => "down",
            Move::Pause => "pause",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JointState {
    pub cells: Vec<Observation>,
}

impl JointState {
    pub fn new(cells: impl IntoIterator<Item = usize>) -> Self {
        Self {
            cells: cells.into_iter().map(Observation).collect(),
        }
    }

    pub fn n_agents(&self) -> usize {
        self.cells.len()
    }

    pub fn cell(&self, agent: usize) -> usize {
        self.cells[agent].0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JointAction {
    pub moves: Vec<Move>,
}

impl JointAction {
    pub fn new(moves: Vec<Move>) -> Self {
        Self { moves }
    }

    /// Mixed-radix index with agent 1 as the most significant digit.
    pub fn index(&self) -> usize {
        self.moves
            .iter()
            .fold(0, |acc, m| acc * Move::COUNT + m.index())
    }

    pub fn from_index(mut index: usize, n_agents: usize) -> Self {
        let mut moves = vec![Move::Pause; n_agents];
        for slot in moves.iter_mut().rev() {
            *slot = Move::ALL[index % Move::COUNT];
            index /= Move::COUNT;
        }
        Self { moves }
    }
}

/// Agent `agent`'s move inside a joint action index.
pub fn local_move(joint_index: usize, agent: usize, n_agents: usize) -> Move {
    let shift = Move::COUNT.pow((n_agents - 1 - agent) as u32);
    Move::ALL[(joint_index / shift) % Move::COUNT]
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: JointState,
    pub reward: f64,
    pub terminal: bool,
    /// The episode ended only because the horizon was reached.
    pub truncated: bool,
}

/// Grid world specialized to a fixed number of agents.
#[derive(Debug, Clone)]
pub struct GridWorld {
    spec: GridSpec,
    n_agents: usize,
    num_states: usize,
    num_actions: usize,
    start_cells: Vec<usize>,
}

impl GridWorld {
    pub fn new(spec: GridSpec, n_agents: usize) -> Result<Self> {
        spec.validate()?;
        if n_agents == 0 {
            return Err(Error::InvalidSpec("at least one agent is required".into()));
        }
        let num_states = checked_pow(spec.num_cells(), n_agents)
            .ok_or_else(|| Error::InvalidSpec("state space overflows usize".into()))?;
        let num_actions = checked_pow(Move::COUNT, n_agents)
            .ok_or_else(|| Error::InvalidSpec("action space overflows usize".into()))?;
        let start_cells = (0..spec.num_cells()).filter(|&c| !spec.is_goal(c)).collect();
        Ok(Self {
            spec,
            n_agents,
            num_states,
            num_actions,
            start_cells,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn gamma(&self) -> f64 {
        self.spec.gamma
    }

    pub fn horizon(&self) -> usize {
        self.spec.horizon
    }

    pub fn num_cells(&self) -> usize {
        self.spec.num_cells()
    }

    /// `|Ω|^N`.
    pub fn num_states(&self) -> usize {
        self.num_states
    }

    /// `|M|^N`.
    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn validate_state(&self, state: &JointState) -> Result<()> {
        if state.n_agents() != self.n_agents {
            return Err(Error::InvalidState(format!(
                "expected {} agents, got {}",
                self.n_agents,
                state.n_agents()
            )));
        }
        if let Some(o) = state.cells.iter().find(|o| o.0 >= self.num_cells()) {
            return Err(Error::InvalidState(format!(
                "cell {} outside a grid of {} cells",
                o.0,
                self.num_cells()
            )));
        }
        Ok(())
    }

    /// True when at least one agent occupies a goal cell.
    pub fn is_absorbing(&self, state: &JointState) -> bool {
        state.cells.iter().any(|o| self.spec.is_goal(o.0))
    }

    pub fn is_absorbing_index(&self, index: usize) -> bool {
        let n = self.num_cells();
        let mut rest = index;
        for _ in 0..self.n_agents {
            if self.spec.is_goal(rest % n) {
                return true;
            }
            rest /= n;
        }
        false
    }

    /// Team reward for being in `state`.
    pub fn reward(&self, state: &JointState) -> f64 {
        let at_goal = state.cells.iter().filter(|o| self.spec.is_goal(o.0)).count();
        self.reward_for_count(at_goal)
    }

    fn reward_for_count(&self, at_goal: usize) -> f64 {
        if at_goal == self.n_agents {
            self.spec.c2
        } else if at_goal > 0 {
            self.spec.c1
        } else {
            0.0
        }
    }

    pub fn step(&self, state: &JointState, action: &JointAction, t: usize) -> Result<StepOutcome> {
        self.validate_state(state)?;
        if action.moves.len() != self.n_agents {
            return Err(Error::InvalidState(format!(
                "joint action has {} moves for {} agents",
                action.moves.len(),
                self.n_agents
            )));
        }
        if t >= self.spec.horizon {
            return Err(Error::InvalidState(format!(
                "step {t} at or past the horizon {}",
                self.spec.horizon
            )));
        }
        let next_state = JointState::new(
            state
                .cells
                .iter()
                .zip(&action.moves)
                .map(|(o, &m)| self.spec.apply_move(o.0, m)),
        );
        let reward = self.reward(&next_state);
        let absorbed = self.is_absorbing(&next_state);
        let at_horizon = t + 1 == self.spec.horizon;
        Ok(StepOutcome {
            next_state,
            reward,
            terminal: absorbed || at_horizon,
            truncated: at_horizon && !absorbed,
        })
    }

    /// Index-level transition used by the tabular learners: returns the next
    /// state index, the reward, and whether the next state is absorbing.
    /// Ignores the horizon.
    pub fn transition(&self, state: usize, action: usize) -> (usize, f64, bool) {
        let n = self.num_cells();
        let mut next = 0;
        let mut at_goal = 0;
        let mut s_scale = 1;
        let mut a_rest = action;
        let mut s_rest = state;
        // Least significant digit first, i.e. the last agent first.
        for _ in 0..self.n_agents {
            let cell = s_rest % n;
            let mv = Move::ALL[a_rest % Move::COUNT];
            let moved = self.spec.apply_move(cell, mv);
            if self.spec.is_goal(moved) {
                at_goal += 1;
            }
            next += moved * s_scale;
            s_scale *= n;
            s_rest /= n;
            a_rest /= Move::COUNT;
        }
        (next, self.reward_for_count(at_goal), at_goal > 0)
    }

    /// Uniform start: every agent independently on a non-goal cell.
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> JointState {
        JointState::new(
            (0..self.n_agents).map(|_| self.start_cells[rng.random_range(0..self.start_cells.len())]),
        )
    }

    pub fn start_cells(&self) -> &[usize] {
        &self.start_cells
    }

    /// Mixed-radix state index with agent 1 as the most significant digit.
    pub fn state_index(&self, state: &JointState) -> usize {
        let n = self.num_cells();
        state.cells.iter().fold(0, |acc, o| acc * n + o.0)
    }

    pub fn state_at(&self, mut index: usize) -> JointState {
        let n = self.num_cells();
        let mut cells = vec![0; self.n_agents];
        for slot in cells.iter_mut().rev() {
            *slot = index % n;
            index /= n;
        }
        JointState::new(cells)
    }

    /// Agent `agent`'s cell inside a state index.
    pub fn cell_of(&self, state: usize, agent: usize) -> usize {
        let n = self.num_cells();
        (state / n.pow((self.n_agents - 1 - agent) as u32)) % n
    }

    /// All joint states in canonical index order.
    pub fn enumerate_states(&self) -> Result<Vec<JointState>> {
        let needed = (self.num_cells() as u128).saturating_pow(self.n_agents as u32);
        if needed > MAX_ENUMERATED_STATES {
            return Err(Error::Capacity {
                what: "joint state enumeration",
                needed,
                limit: MAX_ENUMERATED_STATES,
            });
        }
        Ok((0..self.num_states).map(|i| self.state_at(i)).collect())
    }

    /// Indices of the states an episode may start from.
    pub fn start_state_indices(&self) -> Vec<usize> {
        (0..self.num_states)
            .filter(|&s| !self.is_absorbing_index(s))
            .collect()
    }
}

fn checked_pow(base: usize, exp: usize) -> Option<usize> {
    base.checked_pow(u32::try_from(exp).ok()?)
}
