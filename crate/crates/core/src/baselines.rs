//! Hand-crafted rendezvous heuristics: a waiting scheme without messages (HNC)
//! and an arrival-flag scheme (HOC).

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::env::{GridSpec, GridWorld, Move};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeuristicConfig {
    /// HNC agents enter the goal from their staging cell once the episode
    /// clock reaches this value.
    pub wait_steps: usize,
    /// Per-agent cell next to the goal where agents wait.
    pub staging_cells: Vec<usize>,
}

impl HeuristicConfig {
    /// Agents stage on distinct neighbors of the goal (see
    /// [`default_staging_cells`]); the wait covers the longest walk to any of them.
    pub fn default_for(world: &GridWorld) -> Result<Self> {
        let spec = world.spec();
        let staging_cells = default_staging_cells(spec, world.n_agents())?;
        let mut farthest = 0;
        for &staging in &staging_cells {
            let dist = staging_distances(spec, staging);
            for c in (0..world.num_cells()).filter(|&c| !spec.is_goal(c)) {
                farthest = farthest.max(dist[c].ok_or_else(|| unreachable_error(c, staging))?);
            }
        }
        Ok(Self {
            wait_steps: farthest.max(spec.width + spec.height - 2),
            staging_cells,
        })
    }

    /// Every agent waits on the same cell, the first neighbor of the goal.
    pub fn shared_for(world: &GridWorld) -> Result<Self> {
        let staging = default_staging_cell(world.spec())?;
        Ok(Self {
            staging_cells: vec![staging; world.n_agents()],
            ..Self::default_for(world)?
        })
    }
}

fn unreachable_error(cell: usize, staging: usize) -> Error {
    Error::Heuristic(format!("staging cell {staging} is unreachable from cell {cell}"))
}

fn unique_goal(spec: &GridSpec) -> Result<usize> {
    match spec.goal_cells.as_slice() {
        [g] => Ok(*g),
        _ => Err(Error::Heuristic(format!(
            "heuristics need exactly one goal cell, found {}",
            spec.goal_cells.len()
        ))),
    }
}

/// The goal's neighbors on the grid, in left, right, up, down order.
fn goal_neighbors(spec: &GridSpec) -> Result<Vec<usize>> {
    let goal = unique_goal(spec)?;
    let cells: Vec<usize> = [Move::Left, Move::Right, Move::Up, Move::Down]
        .into_iter()
        .map(|m| spec.apply_move(goal, m))
        .filter(|&c| c != goal)
        .collect();
    if cells.is_empty() {
        return Err(Error::Heuristic("the goal has no neighboring cell".into()));
    }
    Ok(cells)
}

/// The first of the goal's left, right, upper and lower neighbors on the grid.
pub fn default_staging_cell(spec: &GridSpec) -> Result<usize> {
    Ok(goal_neighbors(spec)?[0])
}

/// Agent `i` takes the goal's `i`-th neighbor, cycling when agents outnumber them.
pub fn default_staging_cells(spec: &GridSpec, n_agents: usize) -> Result<Vec<usize>> {
    let cells = goal_neighbors(spec)?;
    Ok((0..n_agents).map(|i| cells[i % cells.len()]).collect())
}

/// Shortest-path lengths to `staging` that never pass through a goal cell.
fn staging_distances(spec: &GridSpec, staging: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; spec.num_cells()];
    dist[staging] = Some(0);
    let mut queue = VecDeque::from([staging]);
    while let Some(c) = queue.pop_front() {
        let here = dist[c].unwrap();
        for m in [Move::Left, Move::Right, Move::Up, Move::Down] {
            let n = spec.apply_move(c, m);
            if n != c && !spec.is_goal(n) && dist[n].is_none() {
                dist[n] = Some(here + 1);
                queue.push_back(n);
            }
        }
    }
    dist
}

/// Routes one agent to its staging cell and from there onto the goal.
#[derive(Debug, Clone, PartialEq)]
struct Route {
    staging: usize,
    /// Shortest-path move per cell; Pause on the staging cell.
    next: Vec<Move>,
    enter: Move,
}

impl Route {
    fn new(spec: &GridSpec, staging: usize) -> Result<Self> {
        let goal = unique_goal(spec)?;
        let enter = [Move::Left, Move::Right, Move::Up, Move::Down]
            .into_iter()
            .find(|&m| spec.apply_move(staging, m) == goal)
            .ok_or_else(|| {
                Error::Heuristic(format!("staging cell {staging} is not adjacent to goal {goal}"))
            })?;
        let dist = staging_distances(spec, staging);
        let next = (0..spec.num_cells())
            .map(|c| {
                if c == staging || spec.is_goal(c) {
                    return Ok(Move::Pause);
                }
                let d = dist[c].ok_or_else(|| unreachable_error(c, staging))?;
                Ok([Move::Left, Move::Right, Move::Up, Move::Down]
                    .into_iter()
                    .find(|&m| {
                        let n = spec.apply_move(c, m);
                        n != c && dist[n] == Some(d - 1)
                    })
                    .expect("a BFS predecessor exists"))
            })
            .collect::<Result<_>>()?;
        Ok(Self { staging, next, enter })
    }
}

/// Per-agent decision rules of both heuristics.
#[derive(Debug, Clone, PartialEq)]
pub struct Heuristics {
    cfg: HeuristicConfig,
    routes: Vec<Route>,
}

impl Heuristics {
    pub fn new(world: &GridWorld, cfg: HeuristicConfig) -> Result<Self> {
        if cfg.staging_cells.len() != world.n_agents() {
            return Err(Error::Heuristic(format!(
                "{} staging cells for {} agents",
                cfg.staging_cells.len(),
                world.n_agents()
            )));
        }
        let routes = cfg
            .staging_cells
            .iter()
            .map(|&s| {
                if s >= world.num_cells() {
                    return Err(Error::Heuristic(format!("staging cell {s} is off the grid")));
                }
                Route::new(world.spec(), s)
            })
            .collect::<Result<_>>()?;
        Ok(Self { cfg, routes })
    }

    pub fn config(&self) -> &HeuristicConfig {
        &self.cfg
    }

    /// HNC: walk to the staging cell, wait there until `clock >= wait_steps`,
    /// then step onto the goal.
    pub fn hnc_policy(&self, agent: usize, cell: usize, clock: usize) -> Move {
        let route = &self.routes[agent];
        if cell != route.staging {
            route.next[cell]
        } else if clock < self.cfg.wait_steps {
            Move::Pause
        } else {
            route.enter
        }
    }

    /// HOC arrival flag: 1 while the agent is on its staging cell.
    pub fn hoc_flag(&self, agent: usize, cell: usize) -> usize {
        usize::from(cell == self.routes[agent].staging)
    }

    /// HOC: walk to the staging cell, wait there until every flag in
    /// `flags` is raised, then step onto the goal. Returns the move and the
    /// agent's own flag.
    pub fn hoc_policy(&self, agent: usize, cell: usize, flags: &[usize]) -> (Move, usize) {
        let route = &self.routes[agent];
        let flag = self.hoc_flag(agent, cell);
        let mv = if cell != route.staging {
            route.next[cell]
        } else if flags.iter().all(|&f| f == 1) {
            route.enter
        } else {
            Move::Pause
        };
        (mv, flag)
    }
}
