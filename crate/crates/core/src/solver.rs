//! Centralized control under perfect communication: tabular Q-learning with
//! UCB exploration, plus a value-iteration oracle and exact policy rollouts.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::GridWorld;
use crate::error::{Error, Result};

/// A finite MDP with deterministic transitions, as seen by the tabular solvers.
pub trait FiniteMdp {
    fn num_states(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn gamma(&self) -> f64;
    fn horizon(&self) -> usize;
    /// `(next_state, reward, next_is_absorbing)`.
    fn transition(&self, state: usize, action: usize) -> (usize, f64, bool);
    fn is_absorbing(&self, state: usize) -> bool;
    fn sample_start<R: Rng + ?Sized>(&self, rng: &mut R) -> usize;
    /// An upper bound on the discounted return from any state.
    fn return_bound(&self) -> f64;
}

impl FiniteMdp for GridWorld {
    fn num_states(&self) -> usize {
        GridWorld::num_states(self)
    }

    fn num_actions(&self) -> usize {
        GridWorld::num_actions(self)
    }

    fn gamma(&self) -> f64 {
        GridWorld::gamma(self)
    }

    fn horizon(&self) -> usize {
        GridWorld::horizon(self)
    }

    fn transition(&self, state: usize, action: usize) -> (usize, f64, bool) {
        GridWorld::transition(self, state, action)
    }

    fn is_absorbing(&self, state: usize) -> bool {
        self.is_absorbing_index(state)
    }

    fn sample_start<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let s = self.reset(rng);
        self.state_index(&s)
    }

    /// Any nonzero reward ends the episode, so one reward is collected at most.
    fn return_bound(&self) -> f64 {
        self.spec().c2.max(0.0)
    }
}

/// Dense state-action values with visit counts.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
    counts: Vec<u64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
            counts: vec![0; n_states * n_actions],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.values[state * self.n_actions..(state + 1) * self.n_actions]
    }

    pub fn counts_row(&self, state: usize) -> &[u64] {
        &self.counts[state * self.n_actions..(state + 1) * self.n_actions]
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[state * self.n_actions + action]
    }

    pub fn set(&mut self, state: usize, action: usize, value: f64) {
        self.values[state * self.n_actions + action] = value;
    }

    pub fn visits(&self, state: usize, action: usize) -> u64 {
        self.counts[state * self.n_actions + action]
    }

    pub fn state_visits(&self, state: usize) -> u64 {
        self.counts_row(state).iter().sum()
    }

    /// Moves `Q(s, a)` a fraction `alpha` toward `target` and bumps the visit count.
    pub fn update(&mut self, state: usize, action: usize, target: f64, alpha: f64) {
        let i = state * self.n_actions + action;
        self.values[i] += alpha * (target - self.values[i]);
        self.counts[i] += 1;
    }

    pub fn max_value(&self, state: usize) -> f64 {
        self.row(state).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn greedy_action(&self, state: usize) -> usize {
        argmax(self.row(state))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// CSV with header `state,action,value,visits`, one row per pair in
    /// row-major order.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["state", "action", "value", "visits"])?;
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                w.write_record([
                    s.to_string(),
                    a.to_string(),
                    self.get(s, a).to_string(),
                    self.visits(s, a).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rows = Vec::new();
        let mut n_states = 0;
        let mut n_actions = 0;
        for record in csv::Reader::from_reader(reader).records() {
            let record = record?;
            let field = |i: usize| -> Result<&str> {
                record
                    .get(i)
                    .ok_or_else(|| Error::MissingData(format!("q-table row missing column {i}")))
            };
            let parse_err = |e: &dyn std::fmt::Display| Error::MissingData(format!("q-table: {e}"));
            let s: usize = field(0)?.parse().map_err(|e| parse_err(&e))?;
            let a: usize = field(1)?.parse().map_err(|e| parse_err(&e))?;
            let v: f64 = field(2)?.parse().map_err(|e| parse_err(&e))?;
            let c: u64 = match record.get(3) {
                Some(c) => c.parse().map_err(|e| parse_err(&e))?,
                None => 0,
            };
            n_states = n_states.max(s + 1);
            n_actions = n_actions.max(a + 1);
            rows.push((s, a, v, c));
        }
        if rows.len() != n_states * n_actions {
            return Err(Error::MissingData(format!(
                "q-table has {} rows, expected {n_states}x{n_actions}",
                rows.len()
            )));
        }
        let mut table = QTable::zeros(n_states, n_actions);
        for (s, a, v, c) in rows {
            let i = s * n_actions + a;
            table.values[i] = v;
            table.counts[i] = c;
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        crate::harness::artifacts::write_atomic(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// First index of the largest element.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Initial value of every Q-table entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum QInit {
    Zero,
    /// The MDP's return bound, so untried actions keep looking attractive
    /// until they have been sampled.
    #[default]
    Optimistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnConfig {
    pub alpha: f64,
    pub ucb_c: f64,
    pub episodes: usize,
    #[serde(default)]
    pub init: QInit,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            alpha: 0.07,
            ucb_c: 1.25,
            episodes: 200_000,
            init: QInit::Optimistic,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha {} not in (0, 1]", self.alpha)));
        }
        if !(self.ucb_c >= 0.0) {
            return Err(Error::Config(format!("ucb_c {} must be >= 0", self.ucb_c)));
        }
        if self.episodes == 0 {
            return Err(Error::Config("episodes must be positive".into()));
        }
        Ok(())
    }
}

/// UCB action choice: `argmax q + c·sqrt(ln(t+1)/(n+1))`, lowest index on ties.
pub fn ucb_select(q_row: &[f64], counts_row: &[u64], c: f64, t: u64) -> usize {
    debug_assert_eq!(q_row.len(), counts_row.len());
    let log_t = ((t + 1) as f64).ln();
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (a, (&q, &n)) in q_row.iter().zip(counts_row).enumerate() {
        let score = q + c * (log_t / (n + 1) as f64).sqrt();
        if score > best_score {
            best = a;
            best_score = score;
        }
    }
    best
}

/// One-step Q-learning with UCB exploration.
///
/// Episodes cut by the horizon bootstrap from the last state; only absorbing
/// states end the backup.
pub fn q_learning_train<M, R>(mdp: &M, cfg: &LearnConfig, rng: &mut R) -> Result<QTable>
where
    M: FiniteMdp,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    let gamma = mdp.gamma();
    let mut q = QTable::zeros(mdp.num_states(), mdp.num_actions());
    if cfg.init == QInit::Optimistic {
        let bound = mdp.return_bound();
        for s in (0..mdp.num_states()).filter(|&s| !mdp.is_absorbing(s)) {
            for a in 0..mdp.num_actions() {
                q.set(s, a, bound);
            }
        }
    }
    for _ in 0..cfg.episodes {
        let mut s = mdp.sample_start(rng);
        for _ in 0..mdp.horizon() {
            let t = q.state_visits(s);
            let a = ucb_select(q.row(s), q.counts_row(s), cfg.ucb_c, t);
            let (next, r, absorbed) = mdp.transition(s, a);
            let target = if absorbed { r } else { r + gamma * q.max_value(next) };
            q.update(s, a, target, cfg.alpha);
            if absorbed {
                break;
            }
            s = next;
        }
    }
    Ok(q)
}

/// Deterministic state-feedback policy: state index to joint action index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy(Vec<usize>);

impl Policy {
    pub fn new(actions: Vec<usize>) -> Self {
        Self(actions)
    }

    pub fn action(&self, state: usize) -> usize {
        self.0[state]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

pub fn greedy_policy(q: &QTable) -> Policy {
    Policy((0..q.n_states()).map(|s| q.greedy_action(s)).collect())
}

pub const VALUE_ITERATION_MAX_SWEEPS: usize = 100_000;

/// Optimal values and a greedy policy by synchronous value iteration.
///
/// Absorbing states have value zero; their policy entry is action 0.
pub fn value_iteration<M: FiniteMdp>(mdp: &M, tol: f64) -> Result<(Vec<f64>, Policy)> {
    value_iteration_capped(mdp, tol, VALUE_ITERATION_MAX_SWEEPS)
}

pub fn value_iteration_capped<M: FiniteMdp>(
    mdp: &M,
    tol: f64,
    max_sweeps: usize,
) -> Result<(Vec<f64>, Policy)> {
    let n = mdp.num_states();
    let gamma = mdp.gamma();
    let backup = |values: &[f64], s: usize, a: usize| {
        let (next, r, absorbed) = mdp.transition(s, a);
        if absorbed {
            r
        } else {
            r + gamma * values[next]
        }
    };
    let mut values = vec![0.0; n];
    let mut next_values = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..max_sweeps {
        residual = 0.0;
        for s in 0..n {
            next_values[s] = if mdp.is_absorbing(s) {
                0.0
            } else {
                (0..mdp.num_actions())
                    .map(|a| backup(&values, s, a))
                    .fold(f64::NEG_INFINITY, f64::max)
            };
            residual = f64::max(residual, (next_values[s] - values[s]).abs());
        }
        std::mem::swap(&mut values, &mut next_values);
        if residual <= tol {
            let policy = (0..n)
                .map(|s| {
                    if mdp.is_absorbing(s) {
                        return 0;
                    }
                    let q: Vec<f64> = (0..mdp.num_actions()).map(|a| backup(&values, s, a)).collect();
                    argmax(&q)
                })
                .collect();
            return Ok((values, Policy(policy)));
        }
    }
    Err(Error::NoConvergence {
        iterations: max_sweeps,
        residual,
    })
}

/// Discounted return of the deterministic rollout of `policy` from `start`,
/// truncated at the horizon. The first acted step has weight one.
pub fn policy_return<M: FiniteMdp>(mdp: &M, policy: &Policy, start: usize) -> f64 {
    rollout_return(mdp, start, |s, _| policy.action(s))
}

/// Like [`policy_return`] for an arbitrary (possibly time-varying) decision rule.
pub fn rollout_return<M, F>(mdp: &M, start: usize, mut decide: F) -> f64
where
    M: FiniteMdp,
    F: FnMut(usize, usize) -> usize,
{
    if mdp.is_absorbing(start) {
        return 0.0;
    }
    let gamma = mdp.gamma();
    let mut s = start;
    let mut ret = 0.0;
    let mut discount = 1.0;
    for t in 0..mdp.horizon() {
        let (next, r, absorbed) = mdp.transition(s, decide(s, t));
        ret += discount * r;
        discount *= gamma;
        if absorbed {
            break;
        }
        s = next;
    }
    ret
}


#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::test_mdps::*;
    use super::*;
    use crate::env::{GridSpec, GridWorld};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn ucb_prefers_unvisited() {
        let q = [0.0; 5];
        assert_eq!(ucb_select(&q, &[0, 5, 5, 5, 5], 1.25, 20), 0);
        assert_eq!(ucb_select(&q, &[5, 5, 0, 5, 5], 1.25, 20), 2);
    }

    #[test]
    fn ucb_without_bonus_is_greedy() {
        assert_eq!(ucb_select(&[0.1, 3.0, 2.0], &[0, 100, 0], 0.0, 100), 1);
        // All tied: lowest index.
        assert_eq!(ucb_select(&[1.0, 1.0], &[3, 0], 0.0, 3), 0);
    }

    #[test]
    fn ucb_equal_counts_follow_q() {
        // Bonus 1.25*sqrt(ln 201 / 101) is identical for both arms.
        assert_eq!(ucb_select(&[1.0, 2.0], &[100, 100], 1.25, 200), 1);
    }

    #[test]
    fn greedy_tie_break_and_unique_max() {
        let mut q = QTable::zeros(3, 4);
        assert_eq!(greedy_policy(&q).as_slice(), &[0, 0, 0]);
        q.set(1, 2, 5.0);
        q.set(2, 3, -1.0);
        q.set(2, 1, 0.5);
        assert_eq!(greedy_policy(&q).as_slice(), &[0, 2, 1]);
    }

    #[test]
    fn zero_reward_keeps_q_at_zero() {
        let mdp = zero_reward_ring(4, 0.9);
        let cfg = LearnConfig {
            episodes: 500,
            ..LearnConfig::default()
        };
        let q = q_learning_train(&mdp, &cfg, &mut rng(1)).unwrap();
        assert!((0..4).all(|s| q.row(s).iter().all(|&v| v == 0.0)));
        assert!(q.state_visits(0) > 0);
    }

    #[test]
    fn myopic_learning_recovers_immediate_reward() {
        let world = GridWorld::new(
            GridSpec {
                gamma: 0.0,
                ..GridSpec::square(3, 4)
            },
            2,
        )
        .unwrap();
        let cfg = LearnConfig {
            alpha: 1.0,
            ucb_c: 1.25,
            episodes: 2_000,
            init: QInit::Zero,
        };
        let q = q_learning_train(&world, &cfg, &mut rng(2)).unwrap();
        let mut checked = 0;
        for s in 0..world.num_states() {
            for a in 0..world.num_actions() {
                if q.visits(s, a) > 0 {
                    assert_eq!(q.get(s, a), world.transition(s, a).1);
                    checked += 1;
                }
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn seeded_training_is_bitwise_reproducible() {
        let world = GridWorld::new(GridSpec::square(3, 4), 2).unwrap();
        let cfg = LearnConfig {
            episodes: 2_000,
            ..LearnConfig::default()
        };
        let a = q_learning_train(&world, &cfg, &mut rng(9)).unwrap();
        let b = q_learning_train(&world, &cfg, &mut rng(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn value_iteration_trivial_cases() {
        // One state looping on itself with no reward.
        let single = TableMdp {
            next: vec![vec![0]],
            reward: vec![vec![0.0]],
            absorbing: vec![false],
            gamma: 0.9,
            horizon: 10,
        };
        let (v, p) = value_iteration(&single, 1e-12).unwrap();
        assert_eq!(v, vec![0.0]);
        assert_eq!(p.as_slice(), &[0]);

        let world = GridWorld::new(
            GridSpec {
                gamma: 0.0,
                ..GridSpec::square(3, 4)
            },
            2,
        )
        .unwrap();
        let (v, _) = value_iteration(&world, 1e-12).unwrap();
        for s in world.start_state_indices() {
            let best = (0..25).map(|a| world.transition(s, a).1).fold(0.0, f64::max);
            assert_eq!(v[s], best);
        }
    }

    #[test]
    fn value_iteration_reports_non_convergence() {
        let world = GridWorld::new(GridSpec::square(4, 5), 2).unwrap();
        assert!(matches!(
            value_iteration_capped(&world, 0.0, 2),
            Err(Error::NoConvergence { iterations: 2, .. })
        ));
    }

    #[test]
    fn single_agent_values_on_2x2() {
        // Goal in the bottom-right corner; cells 1 and 2 are one move away,
        // cell 0 two moves away.
        let world = GridWorld::new(GridSpec::square(2, 3), 1).unwrap();
        let (v, p) = value_iteration(&world, 1e-12).unwrap();
        assert_eq!(v, vec![9.0, 10.0, 10.0, 0.0]);
        assert_eq!(p.as_slice()[1], 3); // down
        assert_eq!(p.as_slice()[2], 1); // right
        assert_eq!(policy_return(&world, &p, 0), 9.0);
    }

    #[test]
    fn policy_return_examples() {
        let world = GridWorld::new(GridSpec::square(3, 4), 2).unwrap();
        let pause_all = Policy::new(vec![24; world.num_states()]);
        let s = world.state_index(&crate::env::JointState::new([0, 8]));
        assert_eq!(policy_return(&world, &pause_all, s), 0.0);

        // Both agents one step from the goal: a single step collects C2 with weight 1.
        let s = world.state_index(&crate::env::JointState::new([3, 1]));
        let right_down = Policy::new(vec![5 + 3; world.num_states()]);
        assert_eq!(policy_return(&world, &right_down, s), 10.0);

        // Single agent adjacent to the goal.
        let single = GridWorld::new(GridSpec::square(3, 4), 1).unwrap();
        let p = Policy::new(vec![1; 9]);
        assert_eq!(policy_return(&single, &p, 3), 10.0);
    }

    #[test]
    fn optimal_policy_return_matches_values() {
        let world = GridWorld::new(GridSpec::square(3, 4), 2).unwrap();
        let (v, p) = value_iteration(&world, 1e-12).unwrap();
        for s in world.start_state_indices() {
            assert!((policy_return(&world, &p, s) - v[s]).abs() < 1e-9);
        }
    }

    #[test]
    fn oracle_dominates_random_policies() {
        let world = GridWorld::new(GridSpec::square(3, 4), 2).unwrap();
        let (v, _) = value_iteration(&world, 1e-12).unwrap();
        let mut r = rng(5);
        for _ in 0..100 {
            let p = Policy::new(
                (0..world.num_states())
                    .map(|_| r.random_range(0..world.num_actions()))
                    .collect(),
            );
            for s in world.start_state_indices() {
                assert!(policy_return(&world, &p, s) <= v[s] + 1e-12);
            }
        }
    }

    #[test]
    fn q_learning_matches_oracle_on_3x3() {
        let world = GridWorld::new(GridSpec::square(3, 4), 2).unwrap();
        let cfg = LearnConfig {
            episodes: 50_000,
            ..LearnConfig::default()
        };
        let q = q_learning_train(&world, &cfg, &mut rng(3)).unwrap();
        assert!(q.is_finite());
        let learned = greedy_policy(&q);
        let (v, _) = value_iteration(&world, 1e-12).unwrap();
        for s in world.start_state_indices() {
            let r = policy_return(&world, &learned, s);
            assert!((r - v[s]).abs() < 1e-6, "state {s}: {r} vs {}", v[s]);
        }
    }

    #[test]
    fn learned_policy_moves_agents_toward_goal() {
        // Compared by return, not by action identity: ties between equally
        // short paths are allowed to differ.
        let world = GridWorld::new(GridSpec::square(3, 4), 2).unwrap();
        let cfg = LearnConfig {
            episodes: 50_000,
            ..LearnConfig::default()
        };
        let learned = greedy_policy(&q_learning_train(&world, &cfg, &mut rng(4)).unwrap());
        let (_, oracle) = value_iteration(&world, 1e-12).unwrap();
        let total = |p: &Policy| -> f64 {
            world
                .start_state_indices()
                .into_iter()
                .map(|s| policy_return(&world, p, s))
                .sum()
        };
        assert!((total(&learned) - total(&oracle)).abs() < 1e-6);
    }

    #[test]
    fn qtable_csv_roundtrip() {
        let mut q = QTable::zeros(3, 2);
        q.update(0, 1, 0.1, 1.0);
        q.update(2, 0, -1.0 / 3.0, 1.0);
        let mut buf = Vec::new();
        q.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("state,action,value,visits\n"));
        assert_eq!(QTable::read_csv(buf.as_slice()).unwrap(), q);
    }

    #[test]
    fn learn_config_validation() {
        assert!(LearnConfig { alpha: 0.0, ..LearnConfig::default() }.validate().is_err());
        assert!(LearnConfig { ucb_c: -1.0, ..LearnConfig::default() }.validate().is_err());
        assert!(LearnConfig::default().validate().is_ok());
    }
}
