//! On-disk artifact formats: model documents, run manifests, training
//! curves, and generic JSON helpers.
//!
//! Everything is written as JSON (pretty-printed, trailing newline) except
//! the training curve, which is a four-column CSV. Parameters are stored as
//! f64, which round-trips losslessly through serde_json; a model written
//! and read back reproduces the network bit for bit.

use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::plastic::{FixedKind, FixedLayerParams, HebbianState, Layer, LayerKind, Network,
    PlasticLayerParams};
use crate::tasks::TaskKind;
use crate::trainer::{DivergedRun, RunStats, TrainConfig};

/// Format tag written into every artifact.
pub const FORMAT_VERSION: u32 = 1;

/// Parameters of one layer as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDoc {
    pub kind: LayerKind,
    pub w: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<Vec<f64>>>,
    pub b: Vec<f64>,
}

/// A trained model: enough to rebuild the network (traces start zeroed) and
/// to interpret it (task, trace decay, originating seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    pub format_version: u32,
    pub task: TaskKind,
    pub gamma: f64,
    pub seed: u64,
    pub layers: Vec<LayerDoc>,
}

impl ModelDoc {
    pub fn from_network<F: Scalar>(net: &Network<F>, task: TaskKind, seed: u64) -> Self {
        let to64 = |rows: &[Vec<F>]| -> Vec<Vec<f64>> {
            rows.iter()
                .map(|r| r.iter().map(|v| v.to_f64_lossy()).collect())
                .collect()
        };
        let mut gamma = 1.0;
        let layers = net
            .layers()
            .iter()
            .map(|layer| match layer {
                Layer::Plastic { params, state } => {
                    gamma = state.gamma.to_f64_lossy();
                    LayerDoc {
                        kind: LayerKind::PlasticTanh,
                        w: to64(&params.w),
                        alpha: Some(to64(&params.alpha)),
                        b: params.b.iter().map(|v| v.to_f64_lossy()).collect(),
                    }
                }
                Layer::Fixed { params, kind } => LayerDoc {
                    kind: match kind {
                        FixedKind::Tanh => LayerKind::FixedTanh,
                        FixedKind::Softmax => LayerKind::FixedSoftmax,
                    },
                    w: to64(&params.w),
                    alpha: None,
                    b: params.b.iter().map(|v| v.to_f64_lossy()).collect(),
                },
            })
            .collect();
        ModelDoc {
            format_version: FORMAT_VERSION,
            task,
            gamma,
            seed,
            layers,
        }
    }

    /// Rebuild the network. Validation runs through the usual constructor,
    /// so malformed shapes are rejected here.
    pub fn to_network<F: Scalar>(&self) -> Result<Network<F>> {
        let from64 = |rows: &[Vec<f64>]| -> Vec<Vec<F>> {
            rows.iter()
                .map(|r| r.iter().map(|&v| F::from_f64_lossy(v)).collect())
                .collect()
        };
        let mut layers = Vec::with_capacity(self.layers.len());
        for doc in &self.layers {
            let b: Vec<F> = doc.b.iter().map(|&v| F::from_f64_lossy(v)).collect();
            let layer = match doc.kind {
                LayerKind::PlasticTanh => {
                    let alpha = doc.alpha.as_ref().ok_or_else(|| {
                        Error::InvalidSpec("plastic layer stored without alpha".into())
                    })?;
                    let params = PlasticLayerParams {
                        w: from64(&doc.w),
                        alpha: from64(alpha),
                        b,
                    };
                    let state = HebbianState::new(
                        params.n_out(),
                        params.n_in(),
                        F::from_f64_lossy(self.gamma),
                    )?;
                    Layer::Plastic { params, state }
                }
                LayerKind::FixedTanh | LayerKind::FixedSoftmax => {
                    if doc.alpha.is_some() {
                        return Err(Error::InvalidSpec(
                            "fixed layer stored with alpha".into(),
                        ));
                    }
                    Layer::Fixed {
                        params: FixedLayerParams { w: from64(&doc.w), b },
                        kind: match doc.kind {
                            LayerKind::FixedTanh => FixedKind::Tanh,
                            _ => FixedKind::Softmax,
                        },
                    }
                }
            };
            layers.push(layer);
        }
        Network::new(layers)
    }
}

/// Everything needed to re-run an experiment bit-identically, plus what
/// happened: seeds in run order, divergences, and the headline metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tool_version: String,
    pub config: TrainConfig,
    pub n_runs: usize,
    pub seeds: Vec<u64>,
    pub completed_runs: usize,
    pub diverged: Vec<DivergedRun>,
    /// Median error pooled over every (run × frozen episode) value; absent
    /// when every run diverged.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frozen_error_median: Option<f64>,
}

impl Manifest {
    pub fn new<F: Scalar>(cfg: &TrainConfig, seeds: &[u64], stats: &RunStats<F>) -> Self {
        Manifest {
            format_version: FORMAT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: *cfg,
            n_runs: seeds.len(),
            seeds: seeds.to_vec(),
            completed_runs: stats.runs.len(),
            diverged: stats.diverged.clone(),
            frozen_error_median: stats.pooled_frozen_median(cfg),
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Serialize `value` as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Read and deserialize a JSON artifact; parse failures carry the
/// line/column from the parser.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Write the aggregated training curve: header `episode,median,q25,q75`,
/// one row per episode. Values use the shortest round-trip float notation,
/// so identical stats produce byte-identical files.
pub fn write_curve_csv<F: Scalar>(path: &Path, stats: &RunStats<F>) -> Result<()> {
    let mut out = String::from("episode,median,q25,q75\n");
    for e in 0..stats.median.len() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            e, stats.median[e], stats.q25[e], stats.q75[e]
        ));
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Parse a curve CSV back into (episode, median, q25, q75) rows.
pub fn read_curve_csv(path: &Path) -> Result<Vec<(usize, f64, f64, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != "episode,median,q25,q75" {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: format!("unexpected header {header:?}"),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let mut fields = line.split(',');
        let parse_err = |what: &str| Error::Parse {
            path: path.to_path_buf(),
            message: format!("line {}: bad {what}: {line:?}", i + 2),
        };
        let episode: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| parse_err("episode"))?;
        let mut take_f64 = |what: &str| -> Result<f64> {
            fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| parse_err(what))
        };
        let median = take_f64("median")?;
        let q25 = take_f64("q25")?;
        let q75 = take_f64("q75")?;
        rows.push((episode, median, q25, q75));
    }
    Ok(rows)
}

/// Standard artifact file names inside an output directory.
pub fn model_path(dir: &Path, run_index: usize) -> PathBuf {
    dir.join(format!("model_{run_index:02}.json"))
}

pub fn curve_path(dir: &Path) -> PathBuf {
    dir.join("curve.csv")
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}
