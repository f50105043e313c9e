//! The three-phase run: solve, quantize, train the controller, then evaluate.

use serde::{Deserialize, Serialize};

use super::config::{ControllerKind, ExperimentConfig, Scheme};
use super::rng::{phase_rng, Phase};
use super::rollout::{
    evaluate, returns_by_start, CcTeam, CentralTeam, HncTeam, HocTeam, ReturnStats, Team,
};
use crate::baselines::{HeuristicConfig, Heuristics};
use crate::controller::{
    cc_train_dqn, cc_train_tabular, Controller, DqnController, InducedController, TabularController,
    TrainingCurve, Uplink,
};
use crate::env::GridWorld;
use crate::error::{Error, Result};
use crate::metrics::{comm_metrics, CommMetrics, LogMeta, TrajectoryLog};
use crate::quantizer::{
    absa1_codebook, absa1_control_map, absa2_codebook, distortion_realized, uniform_state_dist, Codebook,
    MapEstimate,
};
use crate::solver::{greedy_policy, q_learning_train, value_iteration, Policy, QTable};

/// Convergence tolerance of the value-iteration oracle.
pub const ORACLE_TOLERANCE: f64 = 1e-10;

/// Value-iteration oracle and, for learned schemes, the learned greedy policy.
#[derive(Debug, Clone)]
pub struct Solved {
    pub world: GridWorld,
    pub oracle_values: Vec<f64>,
    pub oracle_policy: Policy,
    pub q_star: Option<QTable>,
    pub pi_star: Option<Policy>,
}

impl Solved {
    /// The policy the quantizer is built from: the learned one when available.
    pub fn reference_policy(&self) -> &Policy {
        self.pi_star.as_ref().unwrap_or(&self.oracle_policy)
    }
}

pub fn solve(cfg: &ExperimentConfig, seed: u64) -> Result<Solved> {
    let world = GridWorld::new(cfg.grid.clone(), cfg.n_agents)?;
    let (oracle_values, oracle_policy) = value_iteration(&world, ORACLE_TOLERANCE)?;
    let (q_star, pi_star) = if cfg.scheme.is_learned() {
        let q = q_learning_train(&world, &cfg.learn, &mut phase_rng(seed, Phase::Solve))?;
        let pi = greedy_policy(&q);
        (Some(q), Some(pi))
    } else {
        (None, None)
    };
    Ok(Solved {
        world,
        oracle_values,
        oracle_policy,
        q_star,
        pi_star,
    })
}

/// Quantizer output.
#[derive(Debug, Clone)]
pub enum Quantized {
    Absa1 {
        codebook: Codebook,
        /// Joint action per codeword.
        control: Vec<usize>,
    },
    Absa2 {
        codebooks: Vec<Codebook>,
        estimates: Vec<MapEstimate>,
    },
    Heuristic(HeuristicConfig),
}

impl Quantized {
    pub fn codebooks(&self) -> &[Codebook] {
        match self {
            Quantized::Absa1 { codebook, .. } => std::slice::from_ref(codebook),
            Quantized::Absa2 { codebooks, .. } => codebooks,
            Quantized::Heuristic(_) => &[],
        }
    }

    pub fn uplink(&self) -> Option<Uplink> {
        uplink_from(self.codebooks(), self.is_relay())
    }

    fn is_relay(&self) -> bool {
        matches!(self, Quantized::Absa1 { .. })
    }
}

pub(crate) fn uplink_from(codebooks: &[Codebook], relay: bool) -> Option<Uplink> {
    match (codebooks, relay) {
        ([], _) => None,
        ([cb], true) => Some(Uplink::Relay(cb.comm_policy())),
        (cbs, _) => Some(Uplink::Distributed(cbs.iter().map(Codebook::comm_policy).collect())),
    }
}

/// Logged greedy rollouts of `policy` from uniform starts.
pub fn optimal_rollouts(
    world: &GridWorld,
    policy: &Policy,
    episodes: usize,
    seed: u64,
) -> Result<TrajectoryLog> {
    let n = world.n_agents();
    let meta = LogMeta::new("pi-star", seed, vec![world.num_cells(); n], 1, n);
    let mut rng = phase_rng(seed, Phase::Map);
    Ok(evaluate(world, &mut CentralTeam::new(policy), episodes, Some(policy), meta, &mut rng)?.log)
}

pub fn quantize(cfg: &ExperimentConfig, solved: &Solved, seed: u64) -> Result<Quantized> {
    let bits = cfg.effective_bit_budget();
    let world = &solved.world;
    match cfg.scheme {
        Scheme::Absa1 => {
            let (codebook, _) = absa1_codebook(solved.reference_policy(), cfg.budget[0])?;
            let codebook = codebook.with_bit_budget(bits)?;
            let control = absa1_control_map(solved.reference_policy(), &codebook)?;
            Ok(Quantized::Absa1 { codebook, control })
        }
        Scheme::Absa2 => {
            let log = optimal_rollouts(world, solved.reference_policy(), cfg.map_episodes, seed)?;
            let mut codebooks = Vec::with_capacity(world.n_agents());
            let mut estimates = Vec::with_capacity(world.n_agents());
            for (agent, budget) in cfg.agent_budgets().into_iter().enumerate() {
                let mut estimate = MapEstimate::empty(world.num_cells());
                estimate.accumulate(&log, agent)?;
                let (codebook, _) = absa2_codebook(&estimate, budget)?;
                codebooks.push(codebook.with_bit_budget(bits)?);
                estimates.push(estimate);
            }
            Ok(Quantized::Absa2 { codebooks, estimates })
        }
        Scheme::Hnc | Scheme::Hoc => Ok(Quantized::Heuristic(match &cfg.heuristic {
            Some(h) => h.clone(),
            None => HeuristicConfig::default_for(world)?,
        })),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedController {
    Induced(InducedController),
    Tabular(TabularController),
    Dqn(DqnController),
}

impl TrainedController {
    pub fn as_controller(&self) -> &dyn Controller {
        match self {
            TrainedController::Induced(c) => c,
            TrainedController::Tabular(c) => c,
            TrainedController::Dqn(c) => c,
        }
    }

    pub fn kind(&self) -> ControllerKind {
        match self {
            TrainedController::Induced(_) => ControllerKind::Induced,
            TrainedController::Tabular(_) => ControllerKind::Tabular,
            TrainedController::Dqn(_) => ControllerKind::Dqn,
        }
    }
}

/// Everything needed to act in the environment.
#[derive(Debug, Clone, PartialEq)]
pub enum Agents {
    Cc { uplink: Uplink, controller: TrainedController },
    Hnc(Heuristics),
    Hoc(Heuristics),
}

impl Agents {
    pub fn team(&self) -> Box<dyn Team + '_> {
        match self {
            Agents::Cc { uplink, controller } => Box::new(CcTeam::new(uplink, controller.as_controller())),
            Agents::Hnc(h) => Box::new(HncTeam::new(h)),
            Agents::Hoc(h) => Box::new(HocTeam::new(h)),
        }
    }
}

pub fn train(
    cfg: &ExperimentConfig,
    world: &GridWorld,
    quantized: &Quantized,
    seed: u64,
) -> Result<(Agents, TrainingCurve)> {
    if let Quantized::Heuristic(h) = quantized {
        let heuristics = Heuristics::new(world, h.clone())?;
        let agents = match cfg.scheme {
            Scheme::Hoc => Agents::Hoc(heuristics),
            _ => Agents::Hnc(heuristics),
        };
        return Ok((agents, Vec::new()));
    }
    let uplink = quantized
        .uplink()
        .ok_or_else(|| Error::Config("learned scheme without codebooks".into()))?;
    let mut rng = phase_rng(seed, Phase::Train);
    let (controller, curve) = match (cfg.controller.kind, quantized) {
        (ControllerKind::Induced, Quantized::Absa1 { codebook, control }) => (
            TrainedController::Induced(InducedController::new(control.clone(), codebook.budget())?),
            Vec::new(),
        ),
        (ControllerKind::Induced, _) => {
            return Err(Error::Config("only absa1 has an induced controller".into()));
        }
        (ControllerKind::Tabular, _) => {
            let (c, curve) = cc_train_tabular(world, &uplink, cfg.d, &cfg.controller.tabular, &mut rng)?;
            (TrainedController::Tabular(c), curve)
        }
        (ControllerKind::Dqn, _) => {
            let mut init = phase_rng(seed, Phase::Init);
            let (c, curve) = cc_train_dqn(world, &uplink, cfg.d, &cfg.controller.dqn, &mut init, &mut rng)?;
            (TrainedController::Dqn(c), curve)
        }
    };
    Ok((Agents::Cc { uplink, controller }, curve))
}

/// Identifies one run inside a sweep.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RunKey {
    pub scheme: Scheme,
    pub budget: String,
    pub d: usize,
    pub seed: u64,
}

impl RunKey {
    pub fn new(cfg: &ExperimentConfig, seed: u64) -> Self {
        Self {
            scheme: cfg.scheme,
            budget: cfg.budget_label(),
            d: cfg.d,
            seed,
        }
    }

    /// Directory name for this run's artifacts.
    pub fn dir_name(&self) -> String {
        format!("{}_b{}_d{}_s{}", self.scheme, self.budget.replace('/', "-"), self.d, self.seed)
    }
}

/// One long-form result row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scheme: Scheme,
    pub budget: String,
    pub d: usize,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

/// Headline numbers of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub key: RunKey,
    /// Sampled evaluation episodes.
    pub eval: ReturnStats,
    /// Expected return under uniform starts, from one deterministic rollout per start.
    pub exact_return: f64,
    pub oracle_return: f64,
    /// Mean `|V*(s) - V(s)|` over uniform starts, `V` the realized return.
    pub distortion: f64,
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub summary: RunSummary,
    pub metrics: CommMetrics,
    pub solved: Solved,
    pub quantized: Quantized,
    pub agents: Agents,
    pub curve: TrainingCurve,
    pub log: TrajectoryLog,
}

impl RunOutput {
    pub fn rows(&self) -> Vec<MetricRow> {
        let key = &self.summary.key;
        let mut rows = Vec::new();
        let mut push = |metric: String, value: f64| {
            rows.push(MetricRow {
                scheme: key.scheme,
                budget: key.budget.clone(),
                d: key.d,
                seed: key.seed,
                metric,
                value,
            })
        };
        let s = &self.summary;
        push("return_mean".into(), s.eval.mean);
        push("return_stderr".into(), s.eval.stderr);
        push("return_exact".into(), s.exact_return);
        push("oracle_return".into(), s.oracle_return);
        push("distortion".into(), s.distortion);
        let m = &self.metrics;
        let mut named = vec![
            ("positive_listening", &m.positive_listening),
            ("positive_listening_vector", &m.positive_listening_vector),
            ("positive_signaling", &m.positive_signaling),
        ];
        if let Some(tri) = &m.tri {
            named.push(("tri", tri));
        }
        for (name, metric) in named {
            push(name.into(), metric.mean);
            for (i, v) in metric.per_agent.iter().enumerate() {
                push(format!("{name}_agent{i}"), *v);
            }
        }
        rows
    }
}

/// Runs all phases for one seed. Errors name the phase that failed.
pub fn run_pipeline(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    cfg.validate()?;
    let solved = solve(cfg, seed).map_err(Error::in_phase("solve"))?;
    let quantized = quantize(cfg, &solved, seed).map_err(Error::in_phase("quantize"))?;
    let (agents, curve) = train(cfg, &solved.world, &quantized, seed).map_err(Error::in_phase("train"))?;
    let (summary, log) = assess(cfg, seed, &solved, &agents).map_err(Error::in_phase("eval"))?;
    let metrics = comm_metrics(&log).map_err(Error::in_phase("metrics"))?;
    Ok(RunOutput {
        config: ExperimentConfig {
            seeds: vec![seed],
            ..cfg.clone()
        },
        summary,
        metrics,
        solved,
        quantized,
        agents,
        curve,
        log,
    })
}

/// Sampled and exact evaluation of trained agents.
pub fn assess(
    cfg: &ExperimentConfig,
    seed: u64,
    solved: &Solved,
    agents: &Agents,
) -> Result<(RunSummary, TrajectoryLog)> {
    let world = &solved.world;
    let mut team = agents.team();
    let meta = LogMeta::new(cfg.scheme.name(), seed, cfg.agent_budgets(), cfg.d, world.n_agents());
    let mut rng = phase_rng(seed, Phase::Eval);
    let ev = evaluate(world, team.as_mut(), cfg.eval_episodes, Some(&solved.oracle_policy), meta, &mut rng)?;
    let realized = returns_by_start(world, team.as_mut())?;
    let starts = world.start_state_indices();
    let pmf = uniform_state_dist(world.num_states(), &starts);
    let mean_over = |v: &[f64]| starts.iter().map(|&s| v[s]).sum::<f64>() / starts.len() as f64;
    let summary = RunSummary {
        key: RunKey::new(cfg, seed),
        eval: ev.stats,
        exact_return: mean_over(&realized),
        oracle_return: mean_over(&solved.oracle_values),
        distortion: distortion_realized(&solved.oracle_values, &realized, &pmf)?,
    };
    Ok((summary, ev.log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::TabularConfig;
    use crate::env::GridSpec;
    use crate::harness::config::ControllerConfig;

    fn small(scheme: Scheme, budget: usize, kind: ControllerKind) -> ExperimentConfig {
        ExperimentConfig {
            grid: GridSpec::square(3, 4),
            scheme,
            budget: vec![budget],
            learn: crate::solver::LearnConfig {
                episodes: 20_000,
                ..Default::default()
            },
            controller: ControllerConfig {
                kind,
                tabular: TabularConfig {
                    episodes: 2_000,
                    ..TabularConfig::default()
                },
                ..ControllerConfig::default()
            },
            map_episodes: 500,
            eval_episodes: 100,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn absa1_lossless_matches_oracle_everywhere() {
        let cfg = small(Scheme::Absa1, 25, ControllerKind::Induced);
        let out = run_pipeline(&cfg, 0).unwrap();
        assert!((out.summary.exact_return - out.summary.oracle_return).abs() < 1e-9);
        assert!(out.summary.distortion < 1e-12);
        assert_eq!(out.summary.eval.n, 100);
    }

    #[test]
    fn heuristic_runs_skip_learning() {
        let cfg = small(Scheme::Hnc, 1, ControllerKind::Tabular);
        let out = run_pipeline(&cfg, 3).unwrap();
        assert!(out.solved.q_star.is_none());
        assert!(out.curve.is_empty());
        assert_eq!(out.metrics.positive_listening.mean, 0.0);
        let pl: Vec<_> = out.rows().into_iter().filter(|r| r.metric == "positive_listening").collect();
        assert_eq!(pl.len(), 1);
        assert_eq!(pl[0].value, 0.0);
    }

    #[test]
    fn failures_name_their_phase() {
        let mut cfg = small(Scheme::Absa1, 2, ControllerKind::Induced);
        // Two codewords cannot keep four distinct optimal actions apart.
        cfg.budget = vec![2];
        match run_pipeline(&cfg, 0) {
            Err(Error::Phase { phase, source }) => {
                assert_eq!(phase, "quantize");
                assert_eq!(source.category(), "quantizer");
            }
            other => panic!("expected a phase error, got {other:?}"),
        }
    }

    #[test]
    fn rows_are_long_form() {
        let out = run_pipeline(&small(Scheme::Absa2, 3, ControllerKind::Tabular), 1).unwrap();
        let rows = out.rows();
        assert!(rows.iter().all(|r| r.scheme == Scheme::Absa2 && r.budget == "3" && r.seed == 1));
        for name in ["return_mean", "tri", "tri_agent1", "positive_signaling_agent0", "distortion"] {
            assert_eq!(rows.iter().filter(|r| r.metric == name).count(), 1, "{name}");
        }
    }
}
