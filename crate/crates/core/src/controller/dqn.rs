use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{td_loss_grad, Adam, Mlp, TdLoss, TdSample};
use super::replay::{ReplayBuffer, Transition};
use super::{epsilon_at, validate_schedule, Controller, HistoryCodec, MessageHistory, TrainingCurve, Uplink};
use crate::env::GridWorld;
use crate::error::{Error, Result};
use crate::solver::{argmax, FiniteMdp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqnConfig {
    pub episodes: usize,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Environment steps between target-network syncs.
    pub target_sync: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    pub decay_fraction: f64,
    pub loss: TdLoss,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            episodes: 2_000,
            hidden: vec![64, 64, 64],
            lr: 7e-4,
            replay_capacity: 10_000,
            batch_size: 62,
            target_sync: 1_000,
            eps_start: 0.05,
            eps_end: 0.005,
            decay_fraction: 1.0,
            loss: TdLoss::Standard,
        }
    }
}

impl DqnConfig {
    /// Ten hidden layers of width 64.
    pub fn deep() -> Self {
        Self {
            hidden: vec![64; 10],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_schedule(self.episodes, self.eps_start, self.eps_end, self.decay_fraction)?;
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.replay_capacity == 0 || self.batch_size == 0 || self.target_sync == 0 {
            return Err(Error::Config(
                "replay capacity, batch size and target sync must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Greedy readout of a Q-network over one-hot message windows.
#[derive(Debug, Clone, PartialEq)]
pub struct DqnController {
    codec: HistoryCodec,
    net: Mlp,
}

impl DqnController {
    pub fn new(codec: HistoryCodec, net: Mlp) -> Result<Self> {
        if net.input_width() != codec.one_hot_width() {
            return Err(Error::Config(format!(
                "network input width {} does not match the history encoding ({})",
                net.input_width(),
                codec.one_hot_width()
            )));
        }
        Ok(Self { codec, net })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn q_values(&self, history: &MessageHistory) -> Vec<f64> {
        let mut x = Vec::new();
        history.one_hot(&mut x);
        self.net.forward(&x)
    }
}

impl Controller for DqnController {
    fn codec(&self) -> &HistoryCodec {
        &self.codec
    }

    fn act(&self, history: &MessageHistory) -> Result<usize> {
        Ok(argmax(&self.q_values(history)))
    }
}

/// Deep Q-learning over message histories with experience replay and a target
/// network, one gradient step per environment step once a minibatch is available.
///
/// `init_rng` draws the initial weights; `rng` drives exploration, starts and
/// minibatch sampling.
pub fn cc_train_dqn<R: Rng + ?Sized, I: Rng + ?Sized>(
    world: &GridWorld,
    uplink: &Uplink,
    d: usize,
    cfg: &DqnConfig,
    init_rng: &mut I,
    rng: &mut R,
) -> Result<(DqnController, TrainingCurve)> {
    cfg.validate()?;
    uplink.check(world)?;
    let codec = uplink.codec(d)?;
    let n_actions = world.num_actions();
    let mut widths = vec![codec.one_hot_width()];
    widths.extend(&cfg.hidden);
    widths.push(n_actions);
    let mut online = Mlp::new(widths, init_rng)?;
    let mut target = online.clone();
    let mut adam = Adam::new(online.params().len(), cfg.lr);
    let mut grad = vec![0.0; online.params().len()];
    let mut replay = ReplayBuffer::new(cfg.replay_capacity);
    let mut history = MessageHistory::new(codec.clone());
    let mut x = Vec::new();
    let gamma = world.gamma();
    let mut steps = 0usize;
    let mut curve = Vec::with_capacity(cfg.episodes);

    for episode in 0..cfg.episodes {
        let eps = epsilon_at(episode, cfg.episodes, cfg.eps_start, cfg.eps_end, cfg.decay_fraction);
        let mut s = world.sample_start(rng);
        history.reset();
        history.push(&uplink.encode(world, s))?;
        let mut ret = 0.0;
        let mut discount = 1.0;
        for _ in 0..world.horizon() {
            let a = if rng.random::<f64>() < eps {
                rng.random_range(0..n_actions)
            } else {
                history.one_hot(&mut x);
                argmax(&online.forward(&x))
            };
            let (next, r, absorbed) = world.transition(s, a);
            ret += discount * r;
            discount *= gamma;
            let before = history.flatten();
            if !absorbed {
                history.push(&uplink.encode(world, next))?;
            }
            replay.push(Transition {
                history: before,
                action: a,
                reward: r,
                next_history: history.flatten(),
                terminal: absorbed,
            });

            if replay.len() >= cfg.batch_size {
                let batch: Vec<TdSample> = replay
                    .sample(cfg.batch_size, rng)
                    .into_iter()
                    .map(|t| {
                        let mut input = Vec::new();
                        let mut next_input = Vec::new();
                        codec.one_hot_flat(&t.history, &mut input);
                        codec.one_hot_flat(&t.next_history, &mut next_input);
                        TdSample {
                            input,
                            action: t.action,
                            reward: t.reward,
                            next_input,
                            terminal: t.terminal,
                        }
                    })
                    .collect();
                let loss = td_loss_grad(&online, &target, &batch, gamma, cfg.loss, &mut grad);
                if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::Diverged(format!(
                        "loss {loss} at episode {episode}, step {steps}"
                    )));
                }
                adam.step(online.params_mut(), &grad);
            }
            steps += 1;
            if steps.is_multiple_of(cfg.target_sync) {
                target.copy_params_from(&online);
            }
            if absorbed {
                break;
            }
            s = next;
        }
        curve.push(ret);
    }
    if !online.is_finite() {
        return Err(Error::Diverged("network parameters are not finite".into()));
    }
    Ok((DqnController::new(codec, online)?, curve))
}
