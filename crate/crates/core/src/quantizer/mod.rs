//! Action-based state aggregation: codebooks that group states (ABSA-1) or
//! local observations (ABSA-2) by the optimal action taken there.

mod codebook;
mod kmedian;

pub use codebook::{Codebook, CommPolicy};
pub use kmedian::{kmedian, objective};

use serde::Serialize;

use crate::env::{local_move, Move};
use crate::error::{Error, Result};
use crate::metrics::TrajectoryLog;
use crate::solver::Policy;

/// ABSA-1: clusters every joint state by its optimal joint action index.
pub fn absa1_codebook(pi_star: &Policy, budget: usize) -> Result<(Codebook, CommPolicy)> {
    let codebook = kmedian(pi_star.as_slice(), budget)?;
    let comm = codebook.comm_policy();
    Ok((codebook, comm))
}

/// Codeword to joint action, taking `π*` of each cell's lowest-index state.
///
/// Fails if two members of a cell disagree on `π*`.
pub fn absa1_control_map(pi_star: &Policy, codebook: &Codebook) -> Result<Vec<usize>> {
    codebook
        .cells()
        .iter()
        .enumerate()
        .map(|(k, cell)| {
            let representative = *cell.iter().min().expect("cells are nonempty");
            let action = pi_star.action(representative);
            match cell.iter().find(|&&s| pi_star.action(s) != action) {
                Some(&s) => Err(Error::AmbiguousControl {
                    codeword: k,
                    first: action,
                    second: pi_star.action(s),
                }),
                None => Ok(action),
            }
        })
        .collect()
}

/// Empirical conditional mode of an agent's optimal local move given its
/// observation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MapEstimate {
    /// Move index per observation.
    modes: Vec<usize>,
    counts: Vec<[u64; Move::COUNT]>,
    /// Observations never seen in the log; their mode is Pause.
    unvisited: Vec<usize>,
}

impl MapEstimate {
    pub fn empty(num_observations: usize) -> Self {
        let mut estimate = Self {
            modes: Vec::new(),
            counts: vec![[0; Move::COUNT]; num_observations],
            unvisited: Vec::new(),
        };
        estimate.refresh();
        estimate
    }

    /// Adds the `(o_i, m*_i)` pairs of every record in `log`.
    pub fn accumulate(&mut self, log: &TrajectoryLog, agent: usize) -> Result<()> {
        let n = log.n_agents();
        if agent >= n {
            return Err(Error::MissingData(format!("agent {agent} not in a {n}-agent log")));
        }
        for r in log.records() {
            let optimal = r
                .optimal
                .ok_or_else(|| Error::MissingData("log has no optimal actions".into()))?;
            let obs = r.observations[agent];
            let row = self.counts.get_mut(obs).ok_or_else(|| {
                Error::MissingData(format!("observation {obs} outside the observation space"))
            })?;
            row[local_move(optimal, agent, n).index()] += 1;
        }
        self.refresh();
        Ok(())
    }

    fn refresh(&mut self) {
        self.unvisited.clear();
        self.modes = self
            .counts
            .iter()
            .enumerate()
            .map(|(o, row)| {
                if row.iter().all(|&c| c == 0) {
                    self.unvisited.push(o);
                    return Move::Pause.index();
                }
                let best = *row.iter().max().unwrap();
                row.iter().position(|&c| c == best).unwrap()
            })
            .collect();
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    pub fn mode(&self, observation: usize) -> Move {
        Move::from_index(self.modes[observation]).expect("modes are move indices")
    }

    pub fn counts(&self) -> &[[u64; Move::COUNT]] {
        &self.counts
    }

    pub fn unvisited(&self) -> &[usize] {
        &self.unvisited
    }

    pub fn num_observations(&self) -> usize {
        self.counts.len()
    }
}

/// MAP estimate of agent `agent`'s local optimal move per observation, from a
/// log of rollouts of the optimal centralized policy.
pub fn map_estimator(log: &TrajectoryLog, agent: usize, num_observations: usize) -> Result<MapEstimate> {
    let mut estimate = MapEstimate::empty(num_observations);
    estimate.accumulate(log, agent)?;
    Ok(estimate)
}

/// ABSA-2: clusters one agent's observations by their modal optimal move.
pub fn absa2_codebook(estimate: &MapEstimate, budget: usize) -> Result<(Codebook, CommPolicy)> {
    let codebook = kmedian(estimate.modes(), budget)?;
    let comm = codebook.comm_policy();
    Ok((codebook, comm))
}

const PMF_TOLERANCE: f64 = 1e-9;

fn check_state_pmf(state_dist: &[f64], n: usize) -> Result<()> {
    if state_dist.len() != n {
        return Err(Error::InvalidPmf(format!(
            "{} probabilities for {n} states",
            state_dist.len()
        )));
    }
    if state_dist.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::InvalidPmf("negative or NaN probability".into()));
    }
    let total: f64 = state_dist.iter().sum();
    if (total - 1.0).abs() > PMF_TOLERANCE {
        return Err(Error::InvalidPmf(format!("probabilities sum to {total}")));
    }
    Ok(())
}

/// `Σ_s p(s) |V*(s) − V^m(π^c(s))|` with the controller's value indexed by codeword.
pub fn distortion(
    pi_star_values: &[f64],
    cc_values: &[f64],
    comm: &CommPolicy,
    state_dist: &[f64],
) -> Result<f64> {
    check_state_pmf(state_dist, pi_star_values.len())?;
    if comm.num_elements() != pi_star_values.len() {
        return Err(Error::InvalidPmf(format!(
            "quantizer covers {} states, value table has {}",
            comm.num_elements(),
            pi_star_values.len()
        )));
    }
    state_dist
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(s, &p)| {
            let v = cc_values.get(comm.encode(s)).ok_or_else(|| {
                Error::InvalidPmf(format!("no controller value for codeword {}", comm.encode(s)))
            })?;
            Ok(p * (pi_star_values[s] - v).abs())
        })
        .sum()
}

/// `Σ_s p(s) |V*(s) − V^{π^m∘π^c}(s)|` with the composed policy's return
/// evaluated from each state.
pub fn distortion_realized(
    pi_star_values: &[f64],
    realized_values: &[f64],
    state_dist: &[f64],
) -> Result<f64> {
    check_state_pmf(state_dist, pi_star_values.len())?;
    if realized_values.len() != pi_star_values.len() {
        return Err(Error::InvalidPmf(format!(
            "{} realized values for {} states",
            realized_values.len(),
            pi_star_values.len()
        )));
    }
    Ok(state_dist
        .iter()
        .zip(pi_star_values.iter().zip(realized_values))
        .map(|(p, (v, w))| p * (v - w).abs())
        .sum())
}

/// Uniform pmf over the given state indices.
pub fn uniform_state_dist(num_states: usize, support: &[usize]) -> Vec<f64> {
    let mut p = vec![0.0; num_states];
    let mass = 1.0 / support.len() as f64;
    for &s in support {
        p[s] += mass;
    }
    p
}
