//! Seeded multi-run sweeps over codebook size and message memory.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::artifacts::{write_json, write_rows, write_run};
use super::config::{ExperimentConfig, Scheme};
use super::pipeline::{run_pipeline, MetricRow, RunOutput, RunSummary};
use super::rollout::ReturnStats;
use crate::error::{Error, Result};

/// Grid of runs: every budget × every `d` × every seed of the base config.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub budgets: Vec<Vec<usize>>,
    pub ds: Vec<usize>,
}

impl SweepSpec {
    /// One config per run, in output order.
    pub fn expand(&self, base: &ExperimentConfig) -> Result<Vec<(ExperimentConfig, u64)>> {
        if self.budgets.is_empty() || self.ds.is_empty() {
            return Err(Error::Config("a sweep needs at least one budget and one d".into()));
        }
        let mut runs = Vec::new();
        for budget in &self.budgets {
            for &d in &self.ds {
                let cfg = ExperimentConfig {
                    budget: budget.clone(),
                    d,
                    ..base.clone()
                };
                cfg.validate()?;
                runs.extend(base.seeds.iter().map(|&seed| (cfg.clone(), seed)));
            }
        }
        Ok(runs)
    }
}

/// Mean and standard error across seeds of one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub scheme: Scheme,
    pub budget: String,
    pub d: usize,
    pub metric: String,
    pub mean: f64,
    pub stderr: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub runs: Vec<RunSummary>,
    pub groups: Vec<GroupStat>,
}

pub struct SweepOutput {
    pub runs: Vec<RunOutput>,
    pub rows: Vec<MetricRow>,
    pub summary: SweepSummary,
}

/// Aggregates long-form rows across seeds, ordered by scheme, budget, d, metric.
pub fn group_rows(rows: &[MetricRow]) -> Result<Vec<GroupStat>> {
    let mut groups: BTreeMap<(Scheme, String, usize, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.scheme, r.budget.clone(), r.d, r.metric.clone()))
            .or_default()
            .push(r.value);
    }
    groups
        .into_iter()
        .map(|((scheme, budget, d, metric), values)| {
            let stats = ReturnStats::of(&values)?;
            Ok(GroupStat {
                scheme,
                budget,
                d,
                metric,
                mean: stats.mean,
                stderr: stats.stderr,
                seeds: stats.n,
            })
        })
        .collect()
}

/// Runs the sweep in parallel. With `out`, each run lands in its own
/// subdirectory and the combined `metrics.csv` and `summary.json` at the top.
pub fn run_sweep(base: &ExperimentConfig, spec: &SweepSpec, out: Option<&Path>) -> Result<SweepOutput> {
    let plan = spec.expand(base)?;
    let runs = plan
        .par_iter()
        .map(|(cfg, seed)| {
            let run = run_pipeline(cfg, *seed)?;
            if let Some(out) = out {
                write_run(&out.join(run.summary.key.dir_name()), &run).map_err(Error::in_phase("artifacts"))?;
            }
            Ok(run)
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<MetricRow> = runs.iter().flat_map(RunOutput::rows).collect();
    let summary = SweepSummary {
        runs: runs.iter().map(|r| r.summary.clone()).collect(),
        groups: group_rows(&rows)?,
    };
    if let Some(out) = out {
        write_rows(&out.join("metrics.csv"), &rows).map_err(Error::in_phase("artifacts"))?;
        write_json(&out.join("summary.json"), &summary).map_err(Error::in_phase("artifacts"))?;
    }
    Ok(SweepOutput { runs, rows, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::GridSpec;

    fn row(d: usize, seed: u64, value: f64) -> MetricRow {
        MetricRow {
            scheme: Scheme::Absa2,
            budget: "3".into(),
            d,
            seed,
            metric: "return_exact".into(),
            value,
        }
    }

    #[test]
    fn groups_across_seeds() {
        let rows = vec![row(2, 0, 1.0), row(1, 0, 4.0), row(1, 1, 6.0), row(2, 1, 3.0)];
        let g = group_rows(&rows).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!((g[0].d, g[0].mean, g[0].seeds), (1, 5.0, 2));
        assert!((g[0].stderr - 1.0).abs() < 1e-12);
        assert_eq!((g[1].d, g[1].mean), (2, 2.0));
    }

    #[test]
    fn expansion_order_and_validation() {
        let base = ExperimentConfig {
            seeds: vec![7, 8],
            ..ExperimentConfig::default()
        };
        let spec = SweepSpec {
            budgets: vec![vec![2], vec![3]],
            ds: vec![1, 2],
        };
        let plan = spec.expand(&base).unwrap();
        let keys: Vec<_> = plan.iter().map(|(c, s)| (c.budget[0], c.d, *s)).collect();
        assert_eq!(keys[..3], [(2, 1, 7), (2, 1, 8), (2, 2, 7)]);
        assert_eq!(plan.len(), 8);
        let too_big = SweepSpec {
            budgets: vec![vec![5]],
            ds: vec![1],
        };
        let capped = ExperimentConfig {
            bit_budget: Some(2.0),
            ..base
        };
        assert!(too_big.expand(&capped).is_err());
    }

    #[test]
    fn heuristic_sweep_writes_one_csv() {
        let base = ExperimentConfig {
            grid: GridSpec::square(3, 4),
            scheme: Scheme::Hoc,
            seeds: vec![0, 1, 2],
            eval_episodes: 20,
            ..ExperimentConfig::default()
        };
        let spec = SweepSpec {
            budgets: vec![vec![2]],
            ds: vec![1, 2],
        };
        let dir = tempfile::tempdir().unwrap();
        let out = run_sweep(&base, &spec, Some(dir.path())).unwrap();
        assert_eq!(out.runs.len(), 6);
        let rows = super::super::artifacts::read_rows(&dir.path().join("metrics.csv")).unwrap();
        assert_eq!(rows, out.rows);
        assert!(dir.path().join("hoc_b2_d2_s1").join("manifest.json").exists());
    }
}
