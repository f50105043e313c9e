//! Running a team of agents in the environment and logging what it does.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::Heuristics;
use crate::controller::{Controller, MessageHistory, Uplink};
use crate::env::{GridWorld, JointAction, Move};
use crate::error::{Error, Result};
use crate::metrics::{LogMeta, StepRecord, TrajectoryLog};
use crate::solver::{FiniteMdp, Policy};

/// What a team sends and does at one step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    /// Per-agent codewords.
    pub codewords: Vec<usize>,
    /// Joint action index.
    pub action: usize,
}

/// Agents plus whatever coordinates them, stepped one tick at a time.
pub trait Team {
    /// Clears per-episode state.
    fn reset(&mut self);
    /// Decides at joint state `state` on tick `t` (0-based).
    fn decide(&mut self, world: &GridWorld, state: usize, t: usize) -> Result<Decision>;
}

/// Quantizing agents and a central controller over message windows.
pub struct CcTeam<'a> {
    uplink: &'a Uplink,
    controller: &'a dyn Controller,
    history: MessageHistory,
}

impl<'a> CcTeam<'a> {
    pub fn new(uplink: &'a Uplink, controller: &'a dyn Controller) -> Self {
        Self {
            uplink,
            controller,
            history: MessageHistory::new(controller.codec().clone()),
        }
    }
}

impl Team for CcTeam<'_> {
    fn reset(&mut self) {
        self.history.reset();
    }

    fn decide(&mut self, world: &GridWorld, state: usize, _t: usize) -> Result<Decision> {
        let message = self.uplink.encode(world, state);
        self.history.push(&message)?;
        Ok(Decision {
            codewords: self.uplink.agent_codewords(&message, world.n_agents()),
            action: self.controller.act(&self.history)?,
        })
    }
}

fn joint_index(moves: Vec<Move>) -> usize {
    JointAction::new(moves).index()
}

/// HNC: every agent follows the waiting rule on the shared episode clock and
/// sends the constant codeword 0.
pub struct HncTeam<'a> {
    heuristics: &'a Heuristics,
}

impl<'a> HncTeam<'a> {
    pub fn new(heuristics: &'a Heuristics) -> Self {
        Self { heuristics }
    }
}

impl Team for HncTeam<'_> {
    fn reset(&mut self) {}

    fn decide(&mut self, world: &GridWorld, state: usize, t: usize) -> Result<Decision> {
        let n = world.n_agents();
        let moves = (0..n)
            .map(|i| self.heuristics.hnc_policy(i, world.cell_of(state, i), t))
            .collect();
        Ok(Decision {
            codewords: vec![0; n],
            action: joint_index(moves),
        })
    }
}

/// HOC: each agent broadcasts its arrival flag and acts on everyone's flags
/// from the same tick.
pub struct HocTeam<'a> {
    heuristics: &'a Heuristics,
}

impl<'a> HocTeam<'a> {
    pub fn new(heuristics: &'a Heuristics) -> Self {
        Self { heuristics }
    }
}

impl Team for HocTeam<'_> {
    fn reset(&mut self) {}

    fn decide(&mut self, world: &GridWorld, state: usize, _t: usize) -> Result<Decision> {
        let n = world.n_agents();
        let cells: Vec<usize> = (0..n).map(|i| world.cell_of(state, i)).collect();
        let flags: Vec<usize> = (0..n).map(|i| self.heuristics.hoc_flag(i, cells[i])).collect();
        let moves = (0..n)
            .map(|i| self.heuristics.hoc_policy(i, cells[i], &flags).0)
            .collect();
        Ok(Decision {
            codewords: flags,
            action: joint_index(moves),
        })
    }
}

/// Plays one episode from `start`, appending every step to `log` when given.
/// Returns the discounted return.
pub fn play_episode(
    world: &GridWorld,
    team: &mut dyn Team,
    start: usize,
    oracle: Option<&Policy>,
    episode: usize,
    mut log: Option<&mut TrajectoryLog>,
) -> Result<f64> {
    team.reset();
    let mut s = start;
    let mut ret = 0.0;
    let mut discount = 1.0;
    for t in 0..world.horizon() {
        if world.is_absorbing_index(s) {
            break;
        }
        let decision = team.decide(world, s, t)?;
        if decision.action >= world.num_actions() {
            return Err(Error::InvalidState(format!(
                "joint action {} out of range",
                decision.action
            )));
        }
        let (next, r, absorbed) = world.transition(s, decision.action);
        if let Some(log) = log.as_deref_mut() {
            log.push(StepRecord {
                episode,
                t,
                observations: (0..world.n_agents()).map(|i| world.cell_of(s, i)).collect(),
                codewords: decision.codewords,
                action: decision.action,
                optimal: oracle.map(|p| p.action(s)),
                reward: r,
            })?;
        }
        ret += discount * r;
        discount *= world.gamma();
        if absorbed {
            break;
        }
        s = next;
    }
    Ok(ret)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnStats {
    pub mean: f64,
    /// Standard error of the mean; 0 for a single sample.
    pub stderr: f64,
    pub n: usize,
}

impl ReturnStats {
    pub fn of(samples: &[f64]) -> Result<Self> {
        let n = samples.len();
        if n == 0 {
            return Err(Error::MissingData("no samples to summarize".into()));
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Ok(Self { mean, stderr, n })
    }
}

/// Sampled evaluation: episode returns and the full step log.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub returns: Vec<f64>,
    pub stats: ReturnStats,
    pub log: TrajectoryLog,
}

/// Runs `episodes` episodes from uniform random starts and logs every step.
pub fn evaluate<R: Rng + ?Sized>(
    world: &GridWorld,
    team: &mut dyn Team,
    episodes: usize,
    oracle: Option<&Policy>,
    meta: LogMeta,
    rng: &mut R,
) -> Result<Evaluation> {
    let mut log = TrajectoryLog::new(meta);
    let mut returns = Vec::with_capacity(episodes);
    for episode in 0..episodes {
        let start = world.sample_start(rng);
        returns.push(play_episode(world, team, start, oracle, episode, Some(&mut log))?);
    }
    let stats = ReturnStats::of(&returns)?;
    Ok(Evaluation { returns, stats, log })
}

/// Logs whole episodes from uniform starts until exactly `steps` steps are
/// recorded; the last episode is cut short if needed.
pub fn collect_steps<R: Rng + ?Sized>(
    world: &GridWorld,
    team: &mut dyn Team,
    steps: usize,
    oracle: Option<&Policy>,
    meta: LogMeta,
    rng: &mut R,
) -> Result<TrajectoryLog> {
    let mut log = TrajectoryLog::new(meta.clone());
    let mut episode = 0;
    while log.len() < steps {
        let mut chunk = TrajectoryLog::new(meta.clone());
        let start = world.sample_start(rng);
        play_episode(world, team, start, oracle, episode, Some(&mut chunk))?;
        for record in chunk.records().iter().take(steps - log.len()) {
            log.push(record.clone())?;
        }
        episode += 1;
    }
    Ok(log)
}

/// Deterministic return from every start state, indexed like the state space.
/// Non-start entries are 0.
pub fn returns_by_start(world: &GridWorld, team: &mut dyn Team) -> Result<Vec<f64>> {
    let mut values = vec![0.0; world.num_states()];
    for s in world.start_state_indices() {
        values[s] = play_episode(world, team, s, None, 0, None)?;
    }
    Ok(values)
}

/// Mean of [`returns_by_start`] over the uniform start distribution.
pub fn exact_mean_return(world: &GridWorld, team: &mut dyn Team) -> Result<f64> {
    let values = returns_by_start(world, team)?;
    let starts = world.start_state_indices();
    Ok(starts.iter().map(|&s| values[s]).sum::<f64>() / starts.len() as f64)
}

/// Greedy rollouts of a centralized policy; codewords are the agents' cells.
pub struct CentralTeam<'a> {
    policy: &'a Policy,
}

impl<'a> CentralTeam<'a> {
    pub fn new(policy: &'a Policy) -> Self {
        Self { policy }
    }
}

impl Team for CentralTeam<'_> {
    fn reset(&mut self) {}

    fn decide(&mut self, world: &GridWorld, state: usize, _t: usize) -> Result<Decision> {
        Ok(Decision {
            codewords: (0..world.n_agents()).map(|i| world.cell_of(state, i)).collect(),
            action: self.policy.action(state),
        })
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::baselines::HeuristicConfig;
    use crate::env::GridSpec;
    use crate::metrics::positive_listening;
    use crate::solver::{policy_return, value_iteration};

    fn meta(n: usize) -> LogMeta {
        LogMeta::new("test", 0, vec![1; n], 1, n)
    }

    #[test]
    fn central_team_matches_policy_return() {
        let world = GridWorld::new(GridSpec::square(3, 4), 2).unwrap();
        let (_, pi) = value_iteration(&world, 1e-12).unwrap();
        let values = returns_by_start(&world, &mut CentralTeam::new(&pi)).unwrap();
        for s in world.start_state_indices() {
            assert_eq!(values[s], policy_return(&world, &pi, s));
        }
    }

    #[test]
    fn stats_by_hand() {
        let st = ReturnStats::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(st.mean, 2.5);
        // Sample variance 5/3, divided by n and rooted.
        assert!((st.stderr - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
        assert_eq!(ReturnStats::of(&[7.0]).unwrap().stderr, 0.0);
        assert!(ReturnStats::of(&[]).is_err());
    }

    #[test]
    fn log_matches_returns() {
        let world = GridWorld::new(GridSpec::square(3, 4), 2).unwrap();
        let (_, pi) = value_iteration(&world, 1e-12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ev = evaluate(&world, &mut CentralTeam::new(&pi), 50, Some(&pi), meta(2), &mut rng).unwrap();
        let from_log: Vec<f64> = ev
            .log
            .episodes()
            .map(|ep| crate::metrics::discounted_return(&ep.iter().map(|r| r.reward).collect::<Vec<_>>(), 0.9))
            .collect();
        assert_eq!(from_log.len(), 50);
        for (a, b) in from_log.iter().zip(&ev.returns) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(ev.log.records().iter().all(|r| r.optimal == Some(r.action)));
    }

    #[test]
    fn collect_steps_is_exact() {
        let world = GridWorld::new(GridSpec::rendezvous_8x8(), 2).unwrap();
        let h = Heuristics::new(&world, HeuristicConfig::default_for(&world).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let log = collect_steps(&world, &mut HocTeam::new(&h), 1234, None, meta(2), &mut rng).unwrap();
        assert_eq!(log.len(), 1234);
    }

    #[test]
    fn hnc_sends_nothing_useful() {
        let world = GridWorld::new(GridSpec::rendezvous_8x8(), 2).unwrap();
        let h = Heuristics::new(&world, HeuristicConfig::default_for(&world).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ev = evaluate(&world, &mut HncTeam::new(&h), 200, None, meta(2), &mut rng).unwrap();
        assert_eq!(positive_listening(&ev.log, 0, 1).unwrap(), 0.0);
        let expected = 10.0 * 0.9f64.powi(14);
        assert!(ev.returns.iter().all(|r| (r - expected).abs() < 1e-12));
    }
}
