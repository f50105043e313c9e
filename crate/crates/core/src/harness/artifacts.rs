//! On-disk artifacts: atomic writes, run bundles and their loaders.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ControllerKind, ExperimentConfig, Scheme};
use super::pipeline::{uplink_from, Agents, MetricRow, RunOutput, TrainedController};
use crate::baselines::{HeuristicConfig, Heuristics};
use crate::controller::{Controller, DqnController, InducedController, Mlp, TabularController, Uplink};
use crate::env::GridWorld;
use crate::error::{Error, Result};
use crate::quantizer::Codebook;
use crate::solver::QTable;

pub const MANIFEST_FORMAT: &str = "absa-run";
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_slice(&fs::read(path)?).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_rows(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

pub fn read_rows(path: &Path) -> Result<Vec<MetricRow>> {
    csv::Reader::from_path(path)?
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Index of a run directory. Paths are relative to the directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub scheme: Scheme,
    pub seed: u64,
    pub d: usize,
    pub config: PathBuf,
    pub q_star: Option<PathBuf>,
    pub codebooks: Vec<PathBuf>,
    /// Whether a single codebook quantizes the joint state.
    pub relay: bool,
    pub controller: Option<ControllerKind>,
    pub controller_file: Option<PathBuf>,
    pub heuristic: Option<PathBuf>,
    pub eval_log: PathBuf,
    pub training_curve: Option<PathBuf>,
    pub metrics: PathBuf,
    pub summary: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ControlTable {
    budget: usize,
    control: Vec<usize>,
}

/// Writes every artifact of `run` under `dir` and returns the manifest.
pub fn write_run(dir: &Path, run: &RunOutput) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let cfg = &run.config;
    let at = |name: &str| dir.join(name);

    write_atomic(&at("config.toml"), cfg.to_toml()?.as_bytes())?;

    let q_star = match &run.solved.q_star {
        Some(q) => {
            q.save(&at("q_star.csv"))?;
            Some(PathBuf::from("q_star.csv"))
        }
        None => None,
    };

    let mut codebooks = Vec::new();
    for (i, cb) in run.quantized.codebooks().iter().enumerate() {
        let name = format!("codebook_{i}.txt");
        cb.save(&at(&name))?;
        codebooks.push(PathBuf::from(name));
    }

    let (relay, controller, controller_file, heuristic) = match &run.agents {
        Agents::Cc { uplink, controller } => {
            let file = match controller {
                TrainedController::Induced(c) => {
                    let table = ControlTable {
                        budget: c.codec().budgets()[0],
                        control: c.control().to_vec(),
                    };
                    write_json(&at("controller.json"), &table)?;
                    "controller.json"
                }
                TrainedController::Tabular(c) => {
                    c.q().save(&at("controller_q.csv"))?;
                    "controller_q.csv"
                }
                TrainedController::Dqn(c) => {
                    write_atomic(&at("controller.mlp"), c.net().to_text().as_bytes())?;
                    "controller.mlp"
                }
            };
            (
                matches!(uplink, Uplink::Relay(_)),
                Some(controller.kind()),
                Some(PathBuf::from(file)),
                None,
            )
        }
        Agents::Hnc(h) | Agents::Hoc(h) => {
            write_json(&at("heuristic.json"), h.config())?;
            (false, None, None, Some(PathBuf::from("heuristic.json")))
        }
    };

    run.log.save(&at("eval_log.jsonl"))?;

    let training_curve = if run.curve.is_empty() {
        None
    } else {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["episode", "return"])?;
        for (i, r) in run.curve.iter().enumerate() {
            w.write_record([i.to_string(), r.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        write_atomic(&at("training_curve.csv"), &bytes)?;
        Some(PathBuf::from("training_curve.csv"))
    };

    write_rows(&at("metrics.csv"), &run.rows())?;
    write_json(&at("summary.json"), &run.summary)?;

    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        scheme: cfg.scheme,
        seed: run.summary.key.seed,
        d: cfg.d,
        config: "config.toml".into(),
        q_star,
        codebooks,
        relay,
        controller,
        controller_file,
        heuristic,
        eval_log: "eval_log.jsonl".into(),
        training_curve,
        metrics: "metrics.csv".into(),
        summary: "summary.json".into(),
    };
    write_json(&at(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// A run rebuilt from disk: enough to act in the environment again.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub manifest: Manifest,
    pub config: ExperimentConfig,
    pub world: GridWorld,
    pub codebooks: Vec<Codebook>,
    pub agents: Agents,
}

/// Loads a run from its directory or from the path of its manifest.
pub fn load_run(path: &Path) -> Result<LoadedRun> {
    let (dir, manifest_path) = if path.is_dir() {
        (path.to_path_buf(), path.join(MANIFEST_FILE))
    } else {
        (
            path.parent().unwrap_or(Path::new(".")).to_path_buf(),
            path.to_path_buf(),
        )
    };
    let manifest: Manifest = read_json(&manifest_path)?;
    if manifest.format != MANIFEST_FORMAT || manifest.version != MANIFEST_VERSION {
        return Err(Error::Parse {
            path: manifest_path,
            message: format!(
                "unsupported manifest {} v{}",
                manifest.format, manifest.version
            ),
        });
    }
    let config = ExperimentConfig::load(&dir.join(&manifest.config))?;
    let world = GridWorld::new(config.grid.clone(), config.n_agents)?;
    let codebooks = manifest
        .codebooks
        .iter()
        .map(|p| Codebook::load(&dir.join(p)))
        .collect::<Result<Vec<_>>>()?;

    let missing = |what: &str| Error::MissingData(format!("manifest lists no {what}"));
    let agents = match manifest.controller {
        None => {
            let file = manifest.heuristic.as_ref().ok_or_else(|| missing("heuristic"))?;
            let cfg: HeuristicConfig = read_json(&dir.join(file))?;
            let h = Heuristics::new(&world, cfg)?;
            match manifest.scheme {
                Scheme::Hoc => Agents::Hoc(h),
                _ => Agents::Hnc(h),
            }
        }
        Some(kind) => {
            let uplink = uplink_from(&codebooks, manifest.relay).ok_or_else(|| missing("codebooks"))?;
            uplink.check(&world)?;
            let file = dir.join(manifest.controller_file.as_ref().ok_or_else(|| missing("controller"))?);
            let codec = uplink.codec(manifest.d)?;
            let controller = match kind {
                ControllerKind::Induced => {
                    let t: ControlTable = read_json(&file)?;
                    TrainedController::Induced(InducedController::new(t.control, t.budget)?)
                }
                ControllerKind::Tabular => {
                    TrainedController::Tabular(TabularController::new(codec, QTable::load(&file)?)?)
                }
                ControllerKind::Dqn => {
                    let net = Mlp::from_text(&fs::read_to_string(&file)?)?;
                    TrainedController::Dqn(DqnController::new(codec, net)?)
                }
            };
            Agents::Cc { uplink, controller }
        }
    };
    Ok(LoadedRun {
        manifest,
        config,
        world,
        codebooks,
        agents,
    })
}
