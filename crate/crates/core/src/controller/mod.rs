//! The central controller: acts on the last `d` quantized message vectors only.

mod dqn;
mod history;
mod mlp;
mod replay;

pub use dqn::{cc_train_dqn, DqnConfig, DqnController};
pub use history::{HistoryCodec, MessageHistory};
pub use mlp::{td_loss_grad, Adam, Mlp, TdLoss, TdSample};
pub use replay::{ReplayBuffer, Transition};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::GridWorld;
use crate::error::{Error, Result};
use crate::quantizer::CommPolicy;
use crate::solver::QTable;

/// How observations reach the controller.
#[derive(Debug, Clone, PartialEq)]
pub enum Uplink {
    /// Agent `i` quantizes its own cell with its own policy.
    Distributed(Vec<CommPolicy>),
    /// A single virtual sender quantizes the joint state index.
    Relay(CommPolicy),
}

impl Uplink {
    pub fn budgets(&self) -> Vec<usize> {
        match self {
            Uplink::Distributed(policies) => policies.iter().map(CommPolicy::budget).collect(),
            Uplink::Relay(p) => vec![p.budget()],
        }
    }

    pub fn codec(&self, d: usize) -> Result<HistoryCodec> {
        HistoryCodec::new(self.budgets(), d)
    }

    pub fn check(&self, world: &GridWorld) -> Result<()> {
        match self {
            Uplink::Distributed(policies) => {
                if policies.len() != world.n_agents() {
                    return Err(Error::Config(format!(
                        "{} communication policies for {} agents",
                        policies.len(),
                        world.n_agents()
                    )));
                }
                if let Some(p) = policies.iter().find(|p| p.num_elements() != world.num_cells()) {
                    return Err(Error::Config(format!(
                        "communication policy over {} cells on a {}-cell grid",
                        p.num_elements(),
                        world.num_cells()
                    )));
                }
            }
            Uplink::Relay(p) => {
                if p.num_elements() != world.num_states() {
                    return Err(Error::Config(format!(
                        "relay policy over {} states, environment has {}",
                        p.num_elements(),
                        world.num_states()
                    )));
                }
            }
        }
        Ok(())
    }

    /// The message vector sent from joint state `state`.
    pub fn encode(&self, world: &GridWorld, state: usize) -> Vec<usize> {
        match self {
            Uplink::Distributed(policies) => policies
                .iter()
                .enumerate()
                .map(|(i, p)| p.encode(world.cell_of(state, i)))
                .collect(),
            Uplink::Relay(p) => vec![p.encode(state)],
        }
    }

    /// Per-agent codewords for logging; a relay codeword is attributed to every agent.
    pub fn agent_codewords(&self, message: &[usize], n_agents: usize) -> Vec<usize> {
        match self {
            Uplink::Distributed(_) => message.to_vec(),
            Uplink::Relay(_) => vec![message[0]; n_agents],
        }
    }
}

/// A control policy over message histories.
pub trait Controller {
    fn codec(&self) -> &HistoryCodec;
    /// Joint action index for the current window.
    fn act(&self, history: &MessageHistory) -> Result<usize>;
}

/// Codeword to joint action lookup with `d = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct InducedController {
    codec: HistoryCodec,
    control: Vec<usize>,
}

impl InducedController {
    pub fn new(control: Vec<usize>, budget: usize) -> Result<Self> {
        if control.len() > budget {
            return Err(Error::Config(format!(
                "{} control entries for {budget} codewords",
                control.len()
            )));
        }
        Ok(Self {
            codec: HistoryCodec::new(vec![budget], 1)?,
            control,
        })
    }

    pub fn control(&self) -> &[usize] {
        &self.control
    }
}

impl Controller for InducedController {
    fn codec(&self) -> &HistoryCodec {
        &self.codec
    }

    fn act(&self, history: &MessageHistory) -> Result<usize> {
        let k = history.latest()[0];
        self.control
            .get(k)
            .copied()
            .ok_or_else(|| Error::MalformedMessage(format!("codeword {k} has no control entry")))
    }
}

/// Q-table over history indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularController {
    codec: HistoryCodec,
    q: QTable,
}

impl TabularController {
    pub fn new(codec: HistoryCodec, q: QTable) -> Result<Self> {
        let histories = codec.num_histories();
        if histories != Some(q.n_states() as u128) {
            return Err(Error::Config(format!(
                "Q-table has {} rows, history space has {histories:?}",
                q.n_states()
            )));
        }
        Ok(Self { codec, q })
    }

    pub fn q(&self) -> &QTable {
        &self.q
    }
}

impl Controller for TabularController {
    fn codec(&self) -> &HistoryCodec {
        &self.codec
    }

    fn act(&self, history: &MessageHistory) -> Result<usize> {
        Ok(self.q.greedy_action(history.index()?))
    }
}

/// Largest Q-table (histories x joint actions) the tabular learner allocates.
pub const MAX_TABULAR_ENTRIES: u128 = 1 << 23;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TabularConfig {
    pub episodes: usize,
    pub alpha: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of the episodes over which ε decays linearly.
    pub decay_fraction: f64,
}

impl Default for TabularConfig {
    fn default() -> Self {
        Self {
            episodes: 20_000,
            alpha: 0.1,
            eps_start: 1.0,
            eps_end: 0.05,
            decay_fraction: 0.8,
        }
    }
}

impl TabularConfig {
    pub fn validate(&self) -> Result<()> {
        validate_schedule(self.episodes, self.eps_start, self.eps_end, self.decay_fraction)?;
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha {} not in (0, 1]", self.alpha)));
        }
        Ok(())
    }
}

pub(crate) fn validate_schedule(episodes: usize, start: f64, end: f64, fraction: f64) -> Result<()> {
    if episodes == 0 {
        return Err(Error::Config("episodes must be positive".into()));
    }
    let unit = 0.0..=1.0;
    if !unit.contains(&start) || !unit.contains(&end) || !unit.contains(&fraction) {
        return Err(Error::Config("ε schedule values must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Linear decay from `start` to `end` over the first `fraction` of the episodes.
pub(crate) fn epsilon_at(episode: usize, episodes: usize, start: f64, end: f64, fraction: f64) -> f64 {
    let span = fraction * episodes as f64;
    if span <= 0.0 {
        return end;
    }
    let progress = (episode as f64 / span).min(1.0);
    start + (end - start) * progress
}

/// Discounted return of every training episode.
pub type TrainingCurve = Vec<f64>;

/// ε-greedy Q-learning of a controller over message histories.
///
/// Horizon cut-offs bootstrap; only absorbing states end the backup.
pub fn cc_train_tabular<R: Rng + ?Sized>(
    world: &GridWorld,
    uplink: &Uplink,
    d: usize,
    cfg: &TabularConfig,
    rng: &mut R,
) -> Result<(TabularController, TrainingCurve)> {
    cfg.validate()?;
    uplink.check(world)?;
    let codec = uplink.codec(d)?;
    let n_actions = world.num_actions();
    let needed = codec
        .num_histories()
        .and_then(|h| h.checked_mul(n_actions as u128))
        .unwrap_or(u128::MAX);
    if needed > MAX_TABULAR_ENTRIES {
        return Err(Error::Capacity {
            what: "tabular controller (use the dqn controller for this size)",
            needed,
            limit: MAX_TABULAR_ENTRIES,
        });
    }
    let mut q = QTable::zeros(codec.num_histories().unwrap() as usize, n_actions);
    let mut history = MessageHistory::new(codec.clone());
    let gamma = world.gamma();
    let mut curve = Vec::with_capacity(cfg.episodes);
    for episode in 0..cfg.episodes {
        let eps = epsilon_at(episode, cfg.episodes, cfg.eps_start, cfg.eps_end, cfg.decay_fraction);
        let mut s = crate::solver::FiniteMdp::sample_start(world, rng);
        history.reset();
        history.push(&uplink.encode(world, s))?;
        let mut h = history.index()?;
        let mut ret = 0.0;
        let mut discount = 1.0;
        for _ in 0..world.horizon() {
            let a = if rng.random::<f64>() < eps {
                rng.random_range(0..n_actions)
            } else {
                q.greedy_action(h)
            };
            let (next, r, absorbed) = world.transition(s, a);
            ret += discount * r;
            discount *= gamma;
            if absorbed {
                q.update(h, a, r, cfg.alpha);
                break;
            }
            history.push(&uplink.encode(world, next))?;
            let h_next = history.index()?;
            q.update(h, a, r + gamma * q.max_value(h_next), cfg.alpha);
            s = next;
            h = h_next;
        }
        curve.push(ret);
    }
    if !q.is_finite() {
        return Err(Error::Diverged("tabular controller produced non-finite values".into()));
    }
    Ok((TabularController::new(codec, q)?, curve))
}

/// Discounted return of the greedy controller from `start`, truncated at the horizon.
pub fn controller_return(
    world: &GridWorld,
    uplink: &Uplink,
    controller: &dyn Controller,
    start: usize,
) -> Result<f64> {
    if world.is_absorbing_index(start) {
        return Ok(0.0);
    }
    let mut history = MessageHistory::new(controller.codec().clone());
    let mut s = start;
    let mut ret = 0.0;
    let mut discount = 1.0;
    for _ in 0..world.horizon() {
        history.push(&uplink.encode(world, s))?;
        let (next, r, absorbed) = world.transition(s, controller.act(&history)?);
        ret += discount * r;
        discount *= world.gamma();
        if absorbed {
            break;
        }
        s = next;
    }
    Ok(ret)
}
