//! Append-only CSV training history: one row per epoch in `epochs.csv` and
//! one per optimizer step in `steps.csv`. Floats use the shortest decimal
//! that round-trips.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::Metrics;
use crate::{Error, Result};

pub const EPOCHS_FILE: &str = "epochs.csv";
pub const STEPS_FILE: &str = "steps.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub batch: usize,
    pub step: u64,
    pub samples: usize,
    pub loss: f64,
    pub l_fnd: f64,
    pub l_emo: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted means over the epoch's batches.
    pub loss: f64,
    pub l_fnd: f64,
    pub l_emo: Option<f64>,
    /// Accuracy of the training forward passes, dropout included.
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val: Option<Metrics>,
}

const STEP_HEADER: &str = "epoch,batch,step,samples,loss,l_fnd,l_emo";

fn epoch_header() -> String {
    let val_cols: Vec<String> = Metrics::CSV_HEADER.split(',').map(|c| format!("val_{c}")).collect();
    format!(
        "epoch,loss,l_fnd,l_emo,train_accuracy,val_loss,{}",
        val_cols.join(",")
    )
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl StepRecord {
    fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            self.batch,
            self.step,
            self.samples,
            self.loss,
            self.l_fnd,
            opt(self.l_emo)
        )
    }
}

impl EpochRecord {
    fn csv(&self) -> String {
        let width = Metrics::CSV_HEADER.split(',').count();
        let val = match &self.val {
            Some(m) => m.csv_fields(),
            None => vec![String::new(); width],
        };
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            self.loss,
            self.l_fnd,
            opt(self.l_emo),
            self.train_accuracy,
            opt(self.val_loss),
            val.join(",")
        )
    }
}

/// Writers for both history files. Creating a history truncates any
/// previous files in the directory; afterwards rows are only appended.
pub struct History {
    epochs: BufWriter<File>,
    steps: BufWriter<File>,
    dir: PathBuf,
}

fn fresh(path: &Path, header: &str) -> Result<BufWriter<File>> {
    fs::write(path, format!("{header}\n")).map_err(|e| Error::io(path, e))?;
    let f = OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    Ok(BufWriter::new(f))
}

impl History {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            epochs: fresh(&dir.join(EPOCHS_FILE), &epoch_header())?,
            steps: fresh(&dir.join(STEPS_FILE), STEP_HEADER)?,
            dir: dir.to_path_buf(),
        })
    }

    pub fn append_step(&mut self, r: &StepRecord) -> Result<()> {
        let path = self.dir.join(STEPS_FILE);
        writeln!(self.steps, "{}", r.csv()).map_err(|e| Error::io(path, e))
    }

    /// Appends an epoch row and flushes both files.
    pub fn append_epoch(&mut self, r: &EpochRecord) -> Result<()> {
        let path = self.dir.join(EPOCHS_FILE);
        writeln!(self.epochs, "{}", r.csv()).map_err(|e| Error::io(&path, e))?;
        self.epochs.flush().map_err(|e| Error::io(&path, e))?;
        let path = self.dir.join(STEPS_FILE);
        self.steps.flush().map_err(|e| Error::io(path, e))
    }
}
