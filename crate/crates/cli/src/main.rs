use std::path::{Path, PathBuf};
use std::process::ExitCode;

use absa_core::harness::artifacts::{load_run, write_json, write_run};
use absa_core::harness::config::{ControllerKind, ExperimentConfig, Profile, Scheme};
use absa_core::harness::pipeline::{self, run_pipeline};
use absa_core::harness::rng::{phase_rng, Phase};
use absa_core::harness::rollout::{evaluate, exact_mean_return};
use absa_core::harness::sweep::{run_sweep, SweepSpec};
use absa_core::metrics::{comm_metrics, moving_average, LogMeta, TrajectoryLog};
use absa_core::solver::greedy_policy;
use absa_core::{Error, GridSpec};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

/// Bit-budgeted multi-agent control via action-based state aggregation.
#[derive(Debug, Parser)]
#[command(name = "absa", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Centralized Q-learning; writes the Q-table and greedy policy.
    Solve {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Solves, then quantizes; writes one codebook per uplink.
    Quantize {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Solves, quantizes and trains the controller; writes a run bundle.
    TrainCc {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Evaluates a saved run bundle from uniform random starts.
    Eval {
        /// Run directory or its manifest.json.
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, default_value_t = 1000)]
        episodes: usize,
        #[arg(long)]
        seed: u64,
        /// Also write the step log as JSON lines.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Write the result JSON here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Communication metrics of a trajectory log.
    Metrics {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Every budget × d × seed; one metrics.csv and summary.json.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated budgets; `a/b` gives per-agent sizes.
        #[arg(long)]
        budget: Option<String>,
        /// Comma-separated message memories.
        #[arg(long)]
        d: Option<String>,
        /// A count `n` (seeds 0..n) or a comma-separated list.
        #[arg(long)]
        seeds: String,
    },
    /// The whole pipeline for one seed: bundle plus summary.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// TOML experiment config; flags override its fields.
    #[arg(long, conflicts_with = "profile")]
    config: Option<PathBuf>,
    #[arg(long)]
    profile: Option<Profile>,
    #[arg(long)]
    scheme: Option<Scheme>,
    #[arg(long)]
    n_agents: Option<usize>,
    /// Square grid side; needs --goal.
    #[arg(long, requires = "goal")]
    side: Option<usize>,
    #[arg(long)]
    goal: Option<usize>,
    /// Bits per agent per step (R).
    #[arg(long)]
    bit_budget: Option<f64>,
    #[arg(long)]
    controller: Option<ControllerKind>,
    /// Centralized Q-learning episodes.
    #[arg(long)]
    learn_episodes: Option<usize>,
    /// Controller training episodes.
    #[arg(long)]
    cc_episodes: Option<usize>,
    #[arg(long)]
    map_episodes: Option<usize>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    seed: u64,
    /// Codebook size; `a/b` gives per-agent sizes.
    #[arg(long)]
    budget: Option<String>,
    #[arg(long)]
    d: Option<usize>,
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn report(&self) -> Value {
        match self {
            Failure::Usage(m) => json!({ "error": { "category": "usage", "message": m } }),
            Failure::Core(e) => {
                let mut err = json!({ "category": e.category(), "message": e.to_string() });
                if let Error::Phase { phase, .. } = e {
                    err["phase"] = json!(phase);
                }
                json!({ "error": err })
            }
        }
    }

    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Core(_) => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn parse_budget(text: &str) -> CliResult<Vec<usize>> {
    text.split('/')
        .map(|b| {
            b.trim()
                .parse()
                .map_err(|_| Failure::Usage(format!("invalid budget `{text}`")))
        })
        .collect()
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> CliResult<Vec<T>> {
    text.split(',')
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| Failure::Usage(format!("invalid {what} `{x}` in `{text}`")))
        })
        .collect()
}

fn parse_seeds(text: &str) -> CliResult<Vec<u64>> {
    if text.contains(',') {
        return parse_list(text, "seed");
    }
    let n: u64 = text
        .trim()
        .parse()
        .map_err(|_| Failure::Usage(format!("invalid seed count `{text}`")))?;
    if n == 0 {
        return Err(Failure::Usage("--seeds needs at least one seed".into()));
    }
    Ok((0..n).collect())
}

impl ConfigArgs {
    fn build(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = match (&self.config, self.profile) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, profile) => ExperimentConfig::profile(profile.unwrap_or(Profile::Desk)),
        };
        if let Some(s) = self.scheme {
            cfg.scheme = s;
        }
        if let Some(n) = self.n_agents {
            cfg.n_agents = n;
        }
        if let Some(side) = self.side {
            cfg.grid = GridSpec::square(side, self.goal.unwrap_or(0));
        } else if let Some(goal) = self.goal {
            cfg.grid.goal_cells = vec![goal];
        }
        if self.bit_budget.is_some() {
            cfg.bit_budget = self.bit_budget;
        }
        if let Some(kind) = self.controller {
            cfg.controller.kind = kind;
        }
        if let Some(n) = self.learn_episodes {
            cfg.learn.episodes = n;
        }
        if let Some(n) = self.cc_episodes {
            cfg.controller.tabular.episodes = n;
            cfg.controller.dqn.episodes = n;
        }
        if let Some(n) = self.map_episodes {
            cfg.map_episodes = n;
        }
        if let Some(n) = self.eval_episodes {
            cfg.eval_episodes = n;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        Ok(cfg)
    }
}

impl RunArgs {
    fn apply(&self, mut cfg: ExperimentConfig) -> CliResult<ExperimentConfig> {
        if let Some(b) = &self.budget {
            cfg.budget = parse_budget(b)?;
        }
        if let Some(d) = self.d {
            cfg.d = d;
        }
        cfg.seeds = vec![self.seed];
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print(value: &Value, out: Option<&Path>) -> CliResult<()> {
    println!("{}", serde_json::to_string_pretty(value).expect("JSON values serialize"));
    if let Some(path) = out {
        write_json(path, value)?;
    }
    Ok(())
}

fn solve(cfg: &ExperimentConfig, seed: u64) -> CliResult<Value> {
    if !cfg.scheme.is_learned() {
        return Err(Failure::Usage(format!("{} has no solve phase", cfg.scheme)));
    }
    let solved = pipeline::solve(cfg, seed).map_err(Error::in_phase("solve"))?;
    let q = solved.q_star.as_ref().expect("learned schemes learn Q*");
    let dir = &cfg.output_dir;
    q.save(&dir.join("q_star.csv"))?;
    let pi = greedy_policy(q);
    write_json(&dir.join("pi_star.json"), &pi.as_slice())?;
    let world = &solved.world;
    let starts = world.start_state_indices();
    let mean = |v: &dyn Fn(usize) -> f64| starts.iter().map(|&s| v(s)).sum::<f64>() / starts.len() as f64;
    Ok(json!({
        "seed": seed,
        "states": world.num_states(),
        "oracle_return": mean(&|s| solved.oracle_values[s]),
        "pi_star_return": mean(&|s| absa_core::solver::policy_return(world, &pi, s)),
        "q_star": dir.join("q_star.csv"),
        "pi_star": dir.join("pi_star.json"),
    }))
}

fn quantize(cfg: &ExperimentConfig, seed: u64) -> CliResult<Value> {
    let solved = pipeline::solve(cfg, seed).map_err(Error::in_phase("solve"))?;
    let quantized = pipeline::quantize(cfg, &solved, seed).map_err(Error::in_phase("quantize"))?;
    let mut books = Vec::new();
    for (i, cb) in quantized.codebooks().iter().enumerate() {
        let path = cfg.output_dir.join(format!("codebook_{i}.txt"));
        cb.save(&path)?;
        books.push(json!({
            "path": path,
            "budget": cb.budget(),
            "bit_budget": cb.bit_budget(),
            "cells": cb.cells(),
            "centroids": cb.centroids(),
        }));
    }
    Ok(json!({ "seed": seed, "scheme": cfg.scheme, "codebooks": books }))
}

fn run_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.output_dir.join(pipeline::RunKey::new(cfg, seed).dir_name())
}

fn train_cc(cfg: &ExperimentConfig, seed: u64) -> CliResult<Value> {
    let run = run_pipeline(cfg, seed)?;
    let dir = run_dir(cfg, seed);
    write_run(&dir, &run)?;
    let window = 1000.min(run.curve.len().max(1));
    let tail = moving_average(&run.curve, window)?.last().copied();
    Ok(json!({
        "manifest": dir.join("manifest.json"),
        "training_episodes": run.curve.len(),
        "final_training_return": tail,
        "exact_return": run.summary.exact_return,
    }))
}

fn run(cfg: &ExperimentConfig, seed: u64) -> CliResult<Value> {
    let out = run_pipeline(cfg, seed)?;
    let dir = run_dir(cfg, seed);
    write_run(&dir, &out)?;
    Ok(json!({
        "manifest": dir.join("manifest.json"),
        "summary": out.summary,
        "metrics": out.metrics,
    }))
}

fn eval(policy: &Path, episodes: usize, seed: u64, log_path: Option<&Path>) -> CliResult<Value> {
    if episodes == 0 {
        return Err(Failure::Usage("--episodes must be positive".into()));
    }
    let loaded = load_run(policy)?;
    let cfg = &loaded.config;
    let world = &loaded.world;
    let oracle = absa_core::solver::value_iteration(world, pipeline::ORACLE_TOLERANCE)?.1;
    let meta = LogMeta::new(cfg.scheme.name(), seed, cfg.agent_budgets(), cfg.d, world.n_agents());
    let mut team = loaded.agents.team();
    let ev = evaluate(world, team.as_mut(), episodes, Some(&oracle), meta, &mut phase_rng(seed, Phase::Eval))?;
    let exact = exact_mean_return(world, team.as_mut())?;
    if let Some(path) = log_path {
        ev.log.save(path)?;
    }
    Ok(json!({
        "scheme": cfg.scheme,
        "seed": seed,
        "episodes": episodes,
        "mean": ev.stats.mean,
        "stderr": ev.stats.stderr,
        "exact_return": exact,
    }))
}

fn metrics(log: &Path) -> CliResult<Value> {
    let log = TrajectoryLog::load(log)?;
    let m = comm_metrics(&log)?;
    let meta = log.meta();
    Ok(json!({
        "scheme": meta.scheme,
        "seed": meta.seed,
        "steps": log.len(),
        "episodes": log.episodes().count(),
        "metrics": m,
    }))
}

fn sweep(cfg: ExperimentConfig, budget: Option<&str>, d: Option<&str>, seeds: &str) -> CliResult<Value> {
    let budgets = match budget {
        Some(text) => text.split(',').map(parse_budget).collect::<CliResult<Vec<_>>>()?,
        None => vec![cfg.budget.clone()],
    };
    let ds = match d {
        Some(text) => parse_list(text, "d")?,
        None => vec![cfg.d],
    };
    let cfg = ExperimentConfig {
        seeds: parse_seeds(seeds)?,
        ..cfg
    };
    let out = run_sweep(&cfg, &SweepSpec { budgets, ds }, Some(&cfg.output_dir))?;
    Ok(json!({
        "runs": out.runs.len(),
        "rows": out.rows.len(),
        "metrics": cfg.output_dir.join("metrics.csv"),
        "summary": cfg.output_dir.join("summary.json"),
    }))
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Solve { cfg, run: r } => {
            let c = r.apply(cfg.build()?)?;
            print(&solve(&c, r.seed)?, None)
        }
        Command::Quantize { cfg, run: r } => {
            let c = r.apply(cfg.build()?)?;
            print(&quantize(&c, r.seed)?, None)
        }
        Command::TrainCc { cfg, run: r } => {
            let c = r.apply(cfg.build()?)?;
            print(&train_cc(&c, r.seed)?, None)
        }
        Command::Run { cfg, run: r } => {
            let c = r.apply(cfg.build()?)?;
            print(&run(&c, r.seed)?, None)
        }
        Command::Eval {
            policy,
            episodes,
            seed,
            log,
            out,
        } => print(&eval(&policy, episodes, seed, log.as_deref())?, out.as_deref()),
        Command::Metrics { log, out } => print(&metrics(&log)?, out.as_deref()),
        Command::Sweep { cfg, budget, d, seeds } => {
            print(&sweep(cfg.build()?, budget.as_deref(), d.as_deref(), &seeds)?, None)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let failure = Failure::Usage(e.to_string().trim().to_string());
            eprintln!("{}", failure.report());
            return ExitCode::from(failure.code());
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("{}", failure.report());
            ExitCode::from(failure.code())
        }
    }
}
