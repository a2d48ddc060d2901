//! On-disk formats for checkpoints, run directories, and learning curves.
//!
//! A `.ckpt` file is one line of compact JSON (the header) followed by the
//! parameters as little-endian `f64`s in layout order.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Checkpoint, CurveRow, RunProvenance, TrainConfig, TrainRun};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::num;
use crate::param::{ParamLayout, ParamVector};

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointMetrics {
    train_loss: f64,
    dev_loss: f64,
    dev_error: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    format_version: u32,
    id: String,
    model: ModelConfig,
    train: TrainConfig,
    layout: ParamLayout,
    epoch_index: usize,
    metrics: CheckpointMetrics,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunManifest {
    format_version: u32,
    label: String,
    provenance: RunProvenance,
    model: ModelConfig,
    train: TrainConfig,
    epochs: usize,
}

fn check_version(v: u32, what: &'static str) -> Result<()> {
    if v == FORMAT_VERSION {
        Ok(())
    } else {
        Err(Error::format(
            what,
            format!("unsupported format version {v}"),
        ))
    }
}

fn header_for(ckpt: &Checkpoint, model: &ModelConfig, train: &TrainConfig) -> CheckpointHeader {
    CheckpointHeader {
        format_version: FORMAT_VERSION,
        id: ckpt.params.id().to_string(),
        model: model.clone(),
        train: train.clone(),
        layout: ckpt.params.layout().as_ref().clone(),
        epoch_index: ckpt.epoch_index,
        metrics: CheckpointMetrics {
            train_loss: ckpt.train_loss,
            dev_loss: ckpt.dev_loss,
            dev_error: ckpt.dev_error,
        },
    }
}

/// Serializes one checkpoint to bytes.
pub fn encode_checkpoint(
    ckpt: &Checkpoint,
    model: &ModelConfig,
    train: &TrainConfig,
) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec(&header_for(ckpt, model, train))?;
    out.push(b'\n');
    out.reserve(ckpt.params.values().len() * 8);
    for v in ckpt.params.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// A checkpoint read back from disk together with the configs it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredCheckpoint {
    pub checkpoint: Checkpoint,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<StoredCheckpoint> {
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format("checkpoint", "missing header line"))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..split])
        .map_err(|e| Error::format("checkpoint", format!("bad header: {e}")))?;
    check_version(header.format_version, "checkpoint")?;
    let layout = ParamLayout::new(header.layout.segments().to_vec(), header.layout.total_len())?;
    let body = &bytes[split + 1..];
    if body.len() != layout.total_len() * 8 {
        return Err(Error::format(
            "checkpoint",
            format!(
                "expected {} parameter bytes, found {}",
                layout.total_len() * 8,
                body.len()
            ),
        ));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let params = ParamVector::new(Arc::new(layout), values)?.with_id(header.id);
    Ok(StoredCheckpoint {
        checkpoint: Checkpoint {
            epoch_index: header.epoch_index,
            params,
            train_loss: header.metrics.train_loss,
            dev_loss: header.metrics.dev_loss,
            dev_error: header.metrics.dev_error,
        },
        model: header.model,
        train: header.train,
    })
}

pub fn read_checkpoint(path: &Path) -> Result<StoredCheckpoint> {
    decode_checkpoint(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:04}.ckpt")
}

impl TrainRun {
    /// Writes `run.json` and one `epoch_NNNN.ckpt` per checkpoint into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for ckpt in &self.checkpoints {
            let path = dir.join(checkpoint_name(ckpt.epoch_index));
            let bytes = encode_checkpoint(ckpt, &self.model, &self.config)?;
            std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
        let manifest = RunManifest {
            format_version: FORMAT_VERSION,
            label: self.label.clone(),
            provenance: self.provenance.clone(),
            model: self.model.clone(),
            train: self.config.clone(),
            epochs: self.checkpoints.len() - 1,
        };
        let path = dir.join("run.json");
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("run.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: RunManifest = serde_json::from_str(&text)
            .map_err(|e| Error::format("run manifest", e.to_string()))?;
        check_version(manifest.format_version, "run manifest")?;
        let checkpoints = (0..=manifest.epochs)
            .map(|epoch| {
                let stored = read_checkpoint(&dir.join(checkpoint_name(epoch)))?;
                if stored.checkpoint.epoch_index != epoch {
                    return Err(Error::format(
                        "run directory",
                        format!(
                            "{} holds epoch {}",
                            checkpoint_name(epoch),
                            stored.checkpoint.epoch_index
                        ),
                    ));
                }
                Ok(stored.checkpoint)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            label: manifest.label,
            model: manifest.model,
            config: manifest.train,
            provenance: manifest.provenance,
            checkpoints,
        })
    }

    pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
        dir.join(checkpoint_name(epoch))
    }
}

const CURVE_HEADER: [&str; 4] = ["run", "epoch", "train_loss", "dev_error"];

pub fn write_curve_csv<W: Write>(rows: &[CurveRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CURVE_HEADER)?;
    for r in rows {
        w.write_record([
            r.run.clone(),
            r.epoch.to_string(),
            num::exact(r.train_loss),
            num::exact(r.dev_error),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn read_curve_csv<R: std::io::Read>(input: R) -> Result<Vec<CurveRow>> {
    let mut r = csv::Reader::from_reader(input);
    if r.headers()?.iter().ne(CURVE_HEADER) {
        return Err(Error::format("learning curve", "unexpected header"));
    }
    r.records()
        .map(|rec| {
            let rec = rec?;
            if rec.len() != 4 {
                return Err(Error::format("learning curve", "expected 4 columns"));
            }
            Ok(CurveRow {
                run: rec[0].to_string(),
                epoch: rec[1].parse().map_err(|_| {
                    Error::format("learning curve", format!("bad epoch `{}`", &rec[1]))
                })?,
                train_loss: num::parse("learning curve", &rec[2])?,
                dev_error: num::parse("learning curve", &rec[3])?,
            })
        })
        .collect()
}
