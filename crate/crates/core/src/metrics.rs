//! Trajectory logs and the information-theoretic communication metrics.
//!
//! All estimators are plug-in: empirical co-occurrence frequencies pooled over
//! every logged step of every episode.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::local_move;
use crate::error::{Error, Result};

pub const LOG_FORMAT: &str = "absa-trajectory-log";
pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMeta {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub scheme: String,
    /// Per-agent codebook sizes.
    pub budget: Vec<usize>,
    pub d: usize,
    pub n_agents: usize,
}

impl LogMeta {
    pub fn new(scheme: impl Into<String>, seed: u64, budget: Vec<usize>, d: usize, n_agents: usize) -> Self {
        Self {
            format: LOG_FORMAT.into(),
            version: LOG_VERSION,
            seed,
            scheme: scheme.into(),
            budget,
            d,
            n_agents,
        }
    }
}

/// One environment step as seen by the metrics suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub episode: usize,
    pub t: usize,
    pub observations: Vec<usize>,
    pub codewords: Vec<usize>,
    /// Joint action index executed.
    pub action: usize,
    /// Joint action index of the centralized optimal policy at this state.
    pub optimal: Option<usize>,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    meta: LogMeta,
    records: Vec<StepRecord>,
}

impl TrajectoryLog {
    pub fn new(meta: LogMeta) -> Self {
        Self {
            meta,
            records: Vec::new(),
        }
    }

    pub fn meta(&self) -> &LogMeta {
        &self.meta
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn n_agents(&self) -> usize {
        self.meta.n_agents
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn push(&mut self, record: StepRecord) -> Result<()> {
        let n = self.meta.n_agents;
        if record.observations.len() != n || record.codewords.len() != n {
            return Err(Error::MissingData(format!(
                "record for {} agents in a log for {n}",
                record.observations.len().max(record.codewords.len())
            )));
        }
        if let Some(last) = self.records.last() {
            if last.episode == record.episode && record.t <= last.t {
                return Err(Error::MissingData(format!(
                    "episode {}: step {} does not follow step {}",
                    record.episode, record.t, last.t
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn extend_from(&mut self, other: &TrajectoryLog) -> Result<()> {
        for r in &other.records {
            self.push(r.clone())?;
        }
        Ok(())
    }

    /// Records grouped by episode, in log order.
    pub fn episodes(&self) -> impl Iterator<Item = &[StepRecord]> {
        self.records
            .chunk_by(|a, b| a.episode == b.episode)
    }

    /// Line-delimited JSON: the [`LogMeta`] header, then one [`StepRecord`] per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &self.meta)?;
        w.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or(Error::EmptyLog)??;
        let meta: LogMeta = serde_json::from_str(&header)?;
        if meta.format != LOG_FORMAT || meta.version != LOG_VERSION {
            return Err(Error::MissingData(format!(
                "unsupported log format {} v{}",
                meta.format, meta.version
            )));
        }
        let mut log = TrajectoryLog::new(meta);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            log.push(serde_json::from_str(&line)?)?;
        }
        Ok(log)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        crate::harness::artifacts::write_atomic(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_jsonl(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// A discrete quantity read off each logged step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variable {
    Observation(usize),
    Codeword(usize),
    /// One agent's executed move.
    Action(usize),
    JointAction,
    /// The centralized optimal joint action.
    OptimalAction,
}

impl Variable {
    fn read(self, r: &StepRecord, n_agents: usize) -> Result<usize> {
        Ok(match self {
            Variable::Observation(i) => r.observations[i],
            Variable::Codeword(i) => r.codewords[i],
            Variable::Action(j) => local_move(r.action, j, n_agents).index(),
            Variable::JointAction => r.action,
            Variable::OptimalAction => r
                .optimal
                .ok_or_else(|| Error::MissingData("log has no optimal actions".into()))?,
        })
    }

    fn check_agent(self, n_agents: usize) -> Result<()> {
        match self {
            Variable::Observation(i) | Variable::Codeword(i) | Variable::Action(i) if i >= n_agents => {
                Err(Error::MissingData(format!("agent {i} not in a {n_agents}-agent log")))
            }
            _ => Ok(()),
        }
    }
}

/// Joint pmf of two discrete variables over a sparse support.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPmf {
    support: Vec<((usize, usize), f64)>,
}

impl JointPmf {
    const SUM_TOLERANCE: f64 = 1e-12;

    pub fn new(mut support: Vec<((usize, usize), f64)>) -> Result<Self> {
        if support.iter().any(|(_, p)| !(*p >= 0.0)) {
            return Err(Error::InvalidPmf("negative or NaN probability".into()));
        }
        let total: f64 = support.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::InvalidPmf(format!("probabilities sum to {total}")));
        }
        support.sort_by_key(|(xy, _)| *xy);
        Ok(Self { support })
    }

    pub fn from_counts(counts: &BTreeMap<(usize, usize), u64>) -> Result<Self> {
        let n: u64 = counts.values().sum();
        if n == 0 {
            return Err(Error::EmptyLog);
        }
        Self::new(
            counts
                .iter()
                .map(|(&xy, &c)| (xy, c as f64 / n as f64))
                .collect(),
        )
    }

    pub fn support(&self) -> &[((usize, usize), f64)] {
        &self.support
    }

    pub fn marginal_x(&self) -> BTreeMap<usize, f64> {
        let mut m = BTreeMap::new();
        for &((x, _), p) in &self.support {
            *m.entry(x).or_insert(0.0) += p;
        }
        m
    }

    pub fn marginal_y(&self) -> BTreeMap<usize, f64> {
        let mut m = BTreeMap::new();
        for &((_, y), p) in &self.support {
            *m.entry(y).or_insert(0.0) += p;
        }
        m
    }

    pub fn swapped(&self) -> Self {
        let mut support: Vec<_> = self.support.iter().map(|&((x, y), p)| ((y, x), p)).collect();
        support.sort_by_key(|(xy, _)| *xy);
        Self { support }
    }
}

/// Normalized co-occurrence counts of `x` and `y` over every logged step.
pub fn empirical_pmf(log: &TrajectoryLog, x: Variable, y: Variable) -> Result<JointPmf> {
    if log.is_empty() {
        return Err(Error::EmptyLog);
    }
    let n = log.n_agents();
    x.check_agent(n)?;
    y.check_agent(n)?;
    let mut counts = BTreeMap::new();
    for r in log.records() {
        *counts.entry((x.read(r, n)?, y.read(r, n)?)).or_insert(0u64) += 1;
    }
    JointPmf::from_counts(&counts)
}

/// Shannon entropy in bits of a probability vector.
pub fn entropy<'a>(probs: impl IntoIterator<Item = &'a f64>) -> f64 {
    probs
        .into_iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum()
}

/// Entropy of a single logged variable.
pub fn variable_entropy(log: &TrajectoryLog, x: Variable) -> Result<f64> {
    let pmf = empirical_pmf(log, x, x)?;
    Ok(entropy(pmf.marginal_x().values()))
}

/// `Σ p(x,y) log2(p(x,y) / p(x)p(y))`, in bits.
pub fn mutual_information(p: &JointPmf) -> f64 {
    let px = p.marginal_x();
    let py = p.marginal_y();
    let mi: f64 = p
        .support
        .iter()
        .filter(|(_, pxy)| *pxy > 0.0)
        .map(|&((x, y), pxy)| pxy * (pxy / (px[&x] * py[&y])).log2())
        .sum();
    mi.max(0.0)
}

fn mi_between(log: &TrajectoryLog, x: Variable, y: Variable) -> Result<f64> {
    Ok(mutual_information(&empirical_pmf(log, x, y)?))
}

/// `I(c_i; m_j)`: agent `i`'s codeword against agent `j`'s move.
pub fn positive_listening(log: &TrajectoryLog, i: usize, j: usize) -> Result<f64> {
    if i == j {
        return Err(Error::MissingData(
            "positive listening needs two distinct agents".into(),
        ));
    }
    mi_between(log, Variable::Codeword(i), Variable::Action(j))
}

/// `I(c_i; m)`: agent `i`'s codeword against the whole joint action.
pub fn positive_listening_vector(log: &TrajectoryLog, i: usize) -> Result<f64> {
    mi_between(log, Variable::Codeword(i), Variable::JointAction)
}

/// `I(o_i; c_i)`.
pub fn positive_signaling(log: &TrajectoryLog, i: usize) -> Result<f64> {
    mi_between(log, Variable::Observation(i), Variable::Codeword(i))
}

/// Task-relevant information `I(c_i; m*)`: agent `i`'s codeword against the
/// centralized optimal joint action.
pub fn tri(log: &TrajectoryLog, i: usize) -> Result<f64> {
    mi_between(log, Variable::Codeword(i), Variable::OptimalAction)
}

/// `Σ_t γ^(t-1) r_t` with the first reward undiscounted.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    let mut discount = 1.0;
    let mut total = 0.0;
    for &r in rewards {
        total += discount * r;
        discount *= gamma;
    }
    total
}

/// Trailing mean over the last `min(window, i + 1)` points.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::Config("moving-average window must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for (i, &x) in series.iter().enumerate() {
        sum += x;
        if i >= window {
            sum -= series[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    Ok(out)
}

/// Per-agent values and their mean for one metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentMetric {
    pub per_agent: Vec<f64>,
    pub mean: f64,
}

impl AgentMetric {
    fn from_values(per_agent: Vec<f64>) -> Self {
        let mean = per_agent.iter().sum::<f64>() / per_agent.len().max(1) as f64;
        Self { per_agent, mean }
    }
}

/// Every communication metric of a log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommMetrics {
    /// Agent `i`'s entry averages `I(c_i; m_j)` over partners `j != i`.
    pub positive_listening: AgentMetric,
    pub positive_listening_vector: AgentMetric,
    pub positive_signaling: AgentMetric,
    /// `None` when the log carries no optimal actions.
    pub tri: Option<AgentMetric>,
}

pub fn comm_metrics(log: &TrajectoryLog) -> Result<CommMetrics> {
    let n = log.n_agents();
    let mut pl = Vec::with_capacity(n);
    let mut plv = Vec::with_capacity(n);
    let mut ps = Vec::with_capacity(n);
    for i in 0..n {
        let partners: Vec<f64> = (0..n)
            .filter(|&j| j != i)
            .map(|j| positive_listening(log, i, j))
            .collect::<Result<_>>()?;
        pl.push(if partners.is_empty() {
            0.0
        } else {
            partners.iter().sum::<f64>() / partners.len() as f64
        });
        plv.push(positive_listening_vector(log, i)?);
        ps.push(positive_signaling(log, i)?);
    }
    let has_optimal = log.records().iter().all(|r| r.optimal.is_some());
    let tri_values = if has_optimal {
        Some(AgentMetric::from_values(
            (0..n).map(|i| tri(log, i)).collect::<Result<_>>()?,
        ))
    } else {
        None
    };
    Ok(CommMetrics {
        positive_listening: AgentMetric::from_values(pl),
        positive_listening_vector: AgentMetric::from_values(plv),
        positive_signaling: AgentMetric::from_values(ps),
        tri: tri_values,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn log_from(pairs: &[(usize, usize)]) -> TrajectoryLog {
        // Codeword of agent 0 = first, move of agent 1 = second (joint index with agent 0 pausing).
        let mut log = TrajectoryLog::new(LogMeta::new("test", 0, vec![4, 4], 1, 2));
        for (t, &(c, m)) in pairs.iter().enumerate() {
            log.push(StepRecord {
                episode: 0,
                t,
                observations: vec![c, m],
                codewords: vec![c, 0],
                action: 4 * 5 + m,
                optimal: Some(m),
                reward: 0.0,
            })
            .unwrap();
        }
        log
    }

    fn pmf(entries: &[((usize, usize), f64)]) -> JointPmf {
        JointPmf::new(entries.to_vec()).unwrap()
    }

    fn binary_entropy(p: f64) -> f64 {
        -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
    }

    #[test]
    fn empirical_pmf_cases() {
        let log = log_from(&[(1, 2)]);
        let p = empirical_pmf(&log, Variable::Codeword(0), Variable::Action(1)).unwrap();
        assert_eq!(p.support(), &[((1, 2), 1.0)]);

        let log = log_from(&[(1, 2), (1, 2)]);
        let p = empirical_pmf(&log, Variable::Codeword(0), Variable::Action(1)).unwrap();
        assert_eq!(p.support(), &[((1, 2), 1.0)]);

        let log = log_from(&[(0, 0), (0, 1), (1, 1), (0, 0)]);
        let p = empirical_pmf(&log, Variable::Codeword(0), Variable::Action(1)).unwrap();
        assert_eq!(p.support(), &[((0, 0), 0.5), ((0, 1), 0.25), ((1, 1), 0.25)]);

        let empty = TrajectoryLog::new(LogMeta::new("test", 0, vec![1], 1, 1));
        assert!(matches!(
            empirical_pmf(&empty, Variable::Codeword(0), Variable::Codeword(0)),
            Err(Error::EmptyLog)
        ));
    }

    #[test]
    fn pmf_validation() {
        assert!(JointPmf::new(vec![((0, 0), 0.5)]).is_err());
        assert!(JointPmf::new(vec![((0, 0), 1.5), ((0, 1), -0.5)]).is_err());
    }

    #[test]
    fn mi_closed_forms() {
        let indep = pmf(&[((0, 0), 0.25), ((0, 1), 0.25), ((1, 0), 0.25), ((1, 1), 0.25)]);
        assert!(mutual_information(&indep).abs() < 1e-15);

        let identity = pmf(&[((0, 0), 0.25), ((1, 1), 0.25), ((2, 2), 0.25), ((3, 3), 0.25)]);
        assert!((mutual_information(&identity) - 2.0).abs() < 1e-15);

        let bsc = pmf(&[((0, 0), 0.45), ((0, 1), 0.05), ((1, 0), 0.05), ((1, 1), 0.45)]);
        let expected = 1.0 - binary_entropy(0.1);
        assert!((mutual_information(&bsc) - expected).abs() < 1e-12);
        assert!((expected - 0.531).abs() < 1e-3);
    }

    #[test]
    fn listening_cases() {
        // Constant codeword.
        let log = log_from(&[(0, 0), (0, 1), (0, 2), (0, 3)]);
        assert_eq!(positive_listening(&log, 0, 1).unwrap(), 0.0);
        assert_eq!(positive_listening_vector(&log, 0).unwrap(), 0.0);
        assert_eq!(tri(&log, 0).unwrap(), 0.0);
        assert!(positive_listening(&log, 1, 1).is_err());

        // Agent 1's move copies agent 0's codeword.
        let pairs = [(0, 0), (1, 1), (2, 2), (3, 3), (0, 0), (1, 1)];
        let log = log_from(&pairs);
        let h = variable_entropy(&log, Variable::Codeword(0)).unwrap();
        assert!((positive_listening(&log, 0, 1).unwrap() - h).abs() < 1e-12);
        assert!((positive_listening_vector(&log, 0).unwrap() - h).abs() < 1e-12);
    }

    #[test]
    fn signaling_cases() {
        // Injective codeword of agent 0.
        let log = log_from(&[(0, 0), (1, 1), (2, 1), (2, 3)]);
        let h = variable_entropy(&log, Variable::Observation(0)).unwrap();
        assert!((positive_signaling(&log, 0).unwrap() - h).abs() < 1e-12);
        // Agent 1 always sends 0.
        assert_eq!(positive_signaling(&log, 1).unwrap(), 0.0);
    }

    #[test]
    fn returns_and_smoothing() {
        assert_eq!(discounted_return(&[0.0, 0.0], 0.9), 0.0);
        assert_eq!(discounted_return(&[10.0], 0.9), 10.0);
        assert_eq!(discounted_return(&[1.0, 10.0], 0.9), 10.0);
        let s = [3.0, 1.0, 4.0];
        assert_eq!(moving_average(&s, 1).unwrap(), s.to_vec());
        assert_eq!(moving_average(&[2.0; 5], 3).unwrap(), vec![2.0; 5]);
        assert_eq!(moving_average(&[0.0, 10.0], 2).unwrap(), vec![0.0, 5.0]);
        assert_eq!(moving_average(&[0.0, 10.0, 20.0], 2).unwrap(), vec![0.0, 5.0, 15.0]);
        assert!(moving_average(&s, 0).is_err());
    }

    #[test]
    fn log_rejects_bad_records() {
        let mut log = log_from(&[(0, 0)]);
        let mut r = log.records()[0].clone();
        assert!(log.push(r.clone()).is_err()); // same t twice
        r.t = 1;
        r.codewords = vec![0];
        assert!(log.push(r).is_err());
    }

    #[test]
    fn jsonl_roundtrip() {
        let log = log_from(&[(0, 1), (2, 3)]);
        let mut buf = Vec::new();
        log.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("{\"format\":\"absa-trajectory-log\",\"version\":1"));
        assert_eq!(TrajectoryLog::read_jsonl(buf.as_slice()).unwrap(), log);
    }

    #[test]
    fn estimator_converges_on_sampled_bsc() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pairs: Vec<(usize, usize)> = (0..100_000)
            .map(|_| {
                let x = rng.random_range(0..2usize);
                let flip = rng.random_bool(0.1);
                (x, if flip { 1 - x } else { x })
            })
            .collect();
        let log = log_from(&pairs);
        let mi = positive_listening(&log, 0, 1).unwrap();
        assert!((mi - (1.0 - binary_entropy(0.1))).abs() < 0.02, "{mi}");
    }

    #[test]
    fn estimator_converges_on_sampled_pmf() {
        // A skewed 3x4 joint pmf, analytic MI computed from the table itself.
        let table = [
            [0.20, 0.05, 0.00, 0.05],
            [0.02, 0.18, 0.10, 0.00],
            [0.05, 0.05, 0.05, 0.25],
        ];
        let entries: Vec<((usize, usize), f64)> = table
            .iter()
            .enumerate()
            .flat_map(|(x, row)| row.iter().enumerate().map(move |(y, &p)| ((x, y), p)))
            .filter(|(_, p)| *p > 0.0)
            .collect();
        let analytic = mutual_information(&pmf(&entries));
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let pairs: Vec<(usize, usize)> = (0..100_000)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for &(xy, p) in &entries {
                    acc += p;
                    if u < acc {
                        return xy;
                    }
                }
                entries.last().unwrap().0
            })
            .collect();
        let mi = positive_listening(&log_from(&pairs), 0, 1).unwrap();
        assert!((mi - analytic).abs() < 0.02, "{mi} vs {analytic}");
    }

    #[test]
    fn functional_relation_gives_input_entropy() {
        // Exhaustive log over 8 observations, codeword = obs / 3.
        let pairs: Vec<(usize, usize)> = (0..8).map(|o| (o / 3, o % 5)).collect();
        let mut log = TrajectoryLog::new(LogMeta::new("test", 0, vec![3, 1], 1, 2));
        for (t, &(c, o)) in pairs.iter().enumerate() {
            log.push(StepRecord {
                episode: 0,
                t,
                observations: vec![t, o],
                codewords: vec![c, 0],
                action: 24,
                optimal: None,
                reward: 0.0,
            })
            .unwrap();
        }
        let h_c = variable_entropy(&log, Variable::Codeword(0)).unwrap();
        assert!((positive_signaling(&log, 0).unwrap() - h_c).abs() < 1e-12);
        assert!(tri(&log, 0).is_err());
    }

    fn arb_pmf() -> impl Strategy<Value = JointPmf> {
        prop::collection::vec(((0usize..4, 0usize..5), 1u32..50), 1..15).prop_map(|cells| {
            let mut counts = BTreeMap::new();
            for (xy, c) in cells {
                *counts.entry(xy).or_insert(0u64) += c as u64;
            }
            JointPmf::from_counts(&counts).unwrap()
        })
    }

    proptest! {
        #[test]
        fn mi_bounds_and_symmetry(p in arb_pmf()) {
            let mi = mutual_information(&p);
            let hx = entropy(p.marginal_x().values());
            let hy = entropy(p.marginal_y().values());
            prop_assert!(mi >= 0.0);
            prop_assert!(mi <= hx.min(hy) + 1e-12);
            prop_assert!((mi - mutual_information(&p.swapped())).abs() < 1e-12);
        }

        #[test]
        fn joint_action_listening_dominates_pairwise(
            steps in prop::collection::vec((0usize..3, 0usize..3, 0usize..5, 0usize..5), 1..60)
        ) {
            let mut log = TrajectoryLog::new(LogMeta::new("test", 0, vec![3, 3], 1, 2));
            for (t, &(c0, c1, m0, m1)) in steps.iter().enumerate() {
                log.push(StepRecord {
                    episode: 0,
                    t,
                    observations: vec![0, 0],
                    codewords: vec![c0, c1],
                    action: m0 * 5 + m1,
                    optimal: None,
                    reward: 0.0,
                })
                .unwrap();
            }
            for (i, j) in [(0, 1), (1, 0)] {
                let pair = positive_listening(&log, i, j).unwrap();
                prop_assert!(positive_listening_vector(&log, i).unwrap() >= pair - 1e-12);
            }
        }
    }
}
