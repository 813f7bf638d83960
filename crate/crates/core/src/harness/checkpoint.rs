//! Checkpoints: `checkpoint.json` plus one `f64` blob per parameter under
//! `params/`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::data::blob::{self, Precision};
use crate::model::{Ken, ModelDims};
use crate::params::ModelParams;
use crate::rng::StreamState;
use crate::{Error, Result};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
const FORMAT: &str = "ken-checkpoint";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    /// Epoch with the highest validation accuracy.
    Best,
    /// Last epoch of the budget.
    Final,
}

impl CheckpointKind {
    pub fn dir_name(self) -> &'static str {
        match self {
            CheckpointKind::Best => "best",
            CheckpointKind::Final => "final",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub epoch: usize,
    pub val_accuracy: Option<f64>,
    pub config: TrainConfig,
    pub dims: ModelDims,
    pub optimizer_steps: u64,
    /// Positions of the shuffle and dropout streams after `epoch`.
    pub rng: Vec<StreamState>,
    pub params: ModelParams,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    path: String,
    file: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    kind: CheckpointKind,
    epoch: usize,
    val_accuracy: Option<f64>,
    config: TrainConfig,
    dims: ModelDims,
    optimizer_steps: u64,
    rng: Vec<StreamState>,
    params: Vec<ParamEntry>,
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(CHECKPOINT_FILE)
    } else {
        path.to_path_buf()
    }
}

impl Checkpoint {
    pub fn model(&self) -> Result<Ken> {
        Ken::new(self.dims, self.config.ablation)
    }

    /// Writes into `dir`, replacing an existing checkpoint there. Returns
    /// the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let pdir = dir.join("params");
        fs::create_dir_all(&pdir).map_err(|e| Error::io(&pdir, e))?;
        let mut entries = Vec::with_capacity(self.params.len());
        for (path, t) in self.params.iter() {
            let file = format!("params/{path}.kend");
            let full = dir.join(&file);
            blob::write(&full, t, Precision::F64).map_err(|e| Error::io(&full, e))?;
            entries.push(ParamEntry {
                path: path.to_string(),
                file,
                shape: t.shape().to_vec(),
            });
        }
        let m = Manifest {
            format: FORMAT.into(),
            version: 1,
            kind: self.kind,
            epoch: self.epoch,
            val_accuracy: self.val_accuracy,
            config: self.config.clone(),
            dims: self.dims,
            optimizer_steps: self.optimizer_steps,
            rng: self.rng.clone(),
            params: entries,
        };
        let path = dir.join(CHECKPOINT_FILE);
        let text = serde_json::to_string_pretty(&m).expect("checkpoint serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Reads a checkpoint from its directory or its `checkpoint.json`.
    pub fn read(path: &Path) -> Result<Self> {
        let mpath = manifest_path(path);
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&mpath, e))?;
        if m.format != FORMAT {
            return Err(Error::format(&mpath, format!("format is {:?}, expected {FORMAT:?}", m.format)));
        }
        let root = mpath.parent().unwrap_or(Path::new("."));
        let mut params = ModelParams::new();
        for e in m.params {
            let full = root.join(&e.file);
            let bytes = fs::read(&full).map_err(|err| Error::io(&full, err))?;
            let (t, precision) = blob::decode(&bytes).map_err(|err| Error::format(&full, err))?;
            if precision != Precision::F64 {
                return Err(Error::format(&full, "parameter blobs must be f64"));
            }
            if t.shape() != e.shape.as_slice() {
                return Err(Error::format(
                    &full,
                    format!("shape {:?} disagrees with manifest {:?}", t.shape(), e.shape),
                ));
            }
            params.insert(e.path, t);
        }
        let ckpt = Self {
            kind: m.kind,
            epoch: m.epoch,
            val_accuracy: m.val_accuracy,
            config: m.config,
            dims: m.dims,
            optimizer_steps: m.optimizer_steps,
            rng: m.rng,
            params,
        };
        let expected = ckpt.model()?.init_params(0);
        for (path, t) in expected.iter() {
            let got = ckpt.params.get(path).map_err(|_| Error::format(&mpath, format!("missing parameter {path}")))?;
            if got.shape() != t.shape() {
                return Err(Error::format(&mpath, format!("parameter {path} has shape {:?}, model expects {:?}", got.shape(), t.shape())));
            }
        }
        if expected.len() != ckpt.params.len() {
            return Err(Error::format(&mpath, "checkpoint lists parameters the model does not have"));
        }
        Ok(ckpt)
    }
}
