//! Experiment configuration, loaded from TOML and overridden by CLI flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::HeuristicConfig;
use crate::controller::{DqnConfig, TabularConfig};
use crate::env::GridSpec;
use crate::error::{Error, Result};
use crate::solver::LearnConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Joint-state clustering by optimal joint action, relayed as one codeword.
    Absa1,
    /// Per-agent clustering by the modal local optimal move.
    Absa2,
    /// Waiting heuristic, no messages.
    Hnc,
    /// Arrival-flag heuristic, one bit per agent.
    Hoc,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Absa1, Scheme::Absa2, Scheme::Hnc, Scheme::Hoc];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Absa1 => "absa1",
            Scheme::Absa2 => "absa2",
            Scheme::Hnc => "hnc",
            Scheme::Hoc => "hoc",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, Scheme::Absa1 | Scheme::Absa2)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme `{s}` (absa1, absa2, hnc, hoc)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    /// Codeword lookup read off the codebook (ABSA-1, `d = 1`).
    Induced,
    Tabular,
    Dqn,
}

impl ControllerKind {
    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Induced => "induced",
            ControllerKind::Tabular => "tabular",
            ControllerKind::Dqn => "dqn",
        }
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [ControllerKind::Induced, ControllerKind::Tabular, ControllerKind::Dqn]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown controller `{s}` (induced, tabular, dqn)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub kind: ControllerKind,
    pub tabular: TabularConfig,
    pub dqn: DqnConfig,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            kind: ControllerKind::Tabular,
            tabular: TabularConfig::default(),
            dqn: DqnConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 4×4 grid, two agents, tabular controller; minutes on a laptop.
    Desk,
    /// 8×8 grid, two agents, DQN controller with long runs; hours.
    Paper,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(Error::Config(format!("unknown profile `{s}` (desk, paper)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub grid: GridSpec,
    pub n_agents: usize,
    pub scheme: Scheme,
    /// Codebook size per agent; one entry applies to every agent. ABSA-1
    /// takes a single entry, the size of the joint codebook.
    pub budget: Vec<usize>,
    /// Bits per agent per step; defaults to the fewest bits that fit the budget.
    pub bit_budget: Option<f64>,
    /// Message windows seen by the controller.
    pub d: usize,
    /// Centralized Q-learning.
    pub learn: LearnConfig,
    pub controller: ControllerConfig,
    /// Greedy rollouts of the optimal policy feeding the ABSA-2 estimator.
    pub map_episodes: usize,
    /// Overrides the default HNC/HOC staging cells and wait.
    pub heuristic: Option<HeuristicConfig>,
    pub seeds: Vec<u64>,
    pub eval_episodes: usize,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::profile(Profile::Desk)
    }
}

impl ExperimentConfig {
    pub fn profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self {
                grid: GridSpec::square(4, 5),
                n_agents: 2,
                scheme: Scheme::Absa2,
                budget: vec![3],
                bit_budget: None,
                d: 1,
                learn: LearnConfig {
                    episodes: 50_000,
                    ..LearnConfig::default()
                },
                controller: ControllerConfig::default(),
                map_episodes: 10_000,
                heuristic: None,
                seeds: vec![0],
                eval_episodes: 1_000,
                output_dir: PathBuf::from("runs"),
            },
            Profile::Paper => Self {
                grid: GridSpec::rendezvous_8x8(),
                learn: LearnConfig::default(),
                controller: ControllerConfig {
                    kind: ControllerKind::Dqn,
                    dqn: DqnConfig {
                        episodes: 200_000,
                        ..DqnConfig::default()
                    },
                    ..ControllerConfig::default()
                },
                ..Self::profile(Profile::Desk)
            },
        }
    }

    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?, path)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// Per-agent budgets after broadcasting a single entry. ABSA-1 returns its
    /// one joint budget; HNC sends a constant and HOC a flag.
    pub fn agent_budgets(&self) -> Vec<usize> {
        match self.scheme {
            Scheme::Absa1 => self.budget.clone(),
            Scheme::Absa2 if self.budget.len() == 1 => vec![self.budget[0]; self.n_agents],
            Scheme::Absa2 => self.budget.clone(),
            Scheme::Hnc => vec![1; self.n_agents],
            Scheme::Hoc => vec![2; self.n_agents],
        }
    }

    /// The configured bit budget, or the fewest whole bits covering every codebook.
    pub fn effective_bit_budget(&self) -> f64 {
        self.bit_budget.unwrap_or_else(|| {
            let largest = self.agent_budgets().into_iter().max().unwrap_or(1);
            (largest as f64).log2().ceil()
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.n_agents == 0 {
            return Err(Error::Config("n_agents must be positive".into()));
        }
        if self.d == 0 {
            return Err(Error::Config("d must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be positive".into()));
        }
        match self.scheme {
            Scheme::Absa1 => {
                if self.budget.len() != 1 {
                    return Err(Error::Config(
                        "absa1 takes one budget: the size of the joint codebook".into(),
                    ));
                }
                if self.controller.kind == ControllerKind::Induced && self.d != 1 {
                    return Err(Error::Config("the induced controller needs d = 1".into()));
                }
            }
            Scheme::Absa2 => {
                if self.budget.len() != 1 && self.budget.len() != self.n_agents {
                    return Err(Error::Config(format!(
                        "{} budgets for {} agents",
                        self.budget.len(),
                        self.n_agents
                    )));
                }
                if self.controller.kind == ControllerKind::Induced {
                    return Err(Error::Config(
                        "absa2 has no induced controller; use tabular or dqn".into(),
                    ));
                }
                if self.map_episodes == 0 {
                    return Err(Error::Config("map_episodes must be positive".into()));
                }
            }
            Scheme::Hnc | Scheme::Hoc => {}
        }
        if self.scheme.is_learned() {
            self.learn.validate()?;
            match self.controller.kind {
                ControllerKind::Induced => {}
                ControllerKind::Tabular => self.controller.tabular.validate()?,
                ControllerKind::Dqn => self.controller.dqn.validate()?,
            }
        }
        let budgets = self.agent_budgets();
        if budgets.contains(&0) {
            return Err(Error::Config("budgets must be at least 1".into()));
        }
        let bits = self.effective_bit_budget();
        if !(bits >= 0.0) {
            return Err(Error::Config(format!("bit budget {bits} must be >= 0")));
        }
        if let Some(&b) = budgets.iter().find(|&&b| b as f64 > bits.exp2()) {
            return Err(Error::Config(format!(
                "budget {b} exceeds 2^R = {} for R = {bits}",
                bits.exp2()
            )));
        }
        Ok(())
    }

    /// Budget label used in result rows: entries joined with `/`.
    pub fn budget_label(&self) -> String {
        let budgets = match self.scheme {
            Scheme::Absa2 if self.budget.len() == 1 => self.budget.clone(),
            _ => self.agent_budgets(),
        };
        let dedup = if budgets.windows(2).all(|w| w[0] == w[1]) {
            &budgets[..budgets.len().min(1)]
        } else {
            &budgets[..]
        };
        dedup.iter().map(ToString::to_string).collect::<Vec<_>>().join("/")
    }
}
