//! Classification-feature export: one CSV row per sample with its id, label
//! and the components of `F`.

use std::fs;
use std::path::Path;

use super::checkpoint::Checkpoint;
use super::train::evaluate;
use crate::data::Dataset;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub id: String,
    pub label: usize,
    pub features: Vec<f64>,
}

/// Writes the features of `split` to `path` and returns the rows written.
pub fn export_features(ckpt: &Checkpoint, dataset: &Dataset, split: &str, path: &Path) -> Result<Vec<FeatureRow>> {
    let model = ckpt.model()?;
    model.check_data(&dataset.dims)?;
    let ev = evaluate(&model, &ckpt.params, dataset, split, &ckpt.config)?;
    let rows: Vec<FeatureRow> = ev
        .ids
        .iter()
        .enumerate()
        .map(|(i, id)| FeatureRow {
            id: id.clone(),
            label: ev.labels[i],
            features: ev.features.row(i).to_vec(),
        })
        .collect();
    let d_f = ev.features.last_dim();
    let mut out = String::from("id,label");
    for j in 0..d_f {
        out.push_str(&format!(",f{j}"));
    }
    out.push('\n');
    for r in &rows {
        out.push_str(&r.id);
        out.push(',');
        out.push_str(&r.label.to_string());
        for v in &r.features {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    Ok(rows)
}

/// Parses a file written by [`export_features`].
pub fn read_features(path: &Path) -> Result<Vec<FeatureRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::format(path, "empty file"))?;
    let width = header.split(',').count();
    lines
        .enumerate()
        .map(|(i, line)| {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != width {
                return Err(Error::format(path, format!("row {} has {} columns, header has {width}", i + 1, cols.len())));
            }
            let bad = |e: &dyn std::fmt::Display| Error::format(path, format!("row {}: {e}", i + 1));
            Ok(FeatureRow {
                id: cols[0].to_string(),
                label: cols[1].parse().map_err(|e| bad(&e))?,
                features: cols[2..]
                    .iter()
                    .map(|c| c.parse::<f64>().map_err(|e| bad(&e)))
                    .collect::<Result<_>>()?,
            })
        })
        .collect()
}
