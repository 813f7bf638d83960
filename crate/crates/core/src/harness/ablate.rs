//! Ablation runs: the full model plus one variant per flag, all from the same
//! seed. Before training, each variant is checked to change only the stages
//! its flag is declared to touch.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use super::config::TrainConfig;
use super::metrics::Metrics;
use super::train::train_with;
use super::train::evaluate;
use crate::data::{Batch, Dataset};
use crate::model::{changed_stages, Ablation, AblationFlag, Ken};
use crate::params::Ctx;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    /// `full` or the flag label, e.g. `w/o-Gate`.
    pub variant: String,
    pub flag: Option<AblationFlag>,
    pub test: Metrics,
    pub val: Option<Metrics>,
}

/// Runs the full model and `flag` on the first training batch with shared
/// parameters, in inference mode, and returns the stages whose values differ.
/// Fails if any of them lies outside the flag's footprint.
pub fn verify_footprint(config: &TrainConfig, dataset: &Dataset, flag: AblationFlag) -> Result<BTreeSet<String>> {
    let dims = config.model.dims(dataset.dims);
    let base_cfg = config.ablation;
    let base = Ken::new(dims, base_cfg)?;
    let variant = Ken::new(dims, base_cfg.with(flag))?;
    let params = base.init_params(config.training.seed);
    let idx = dataset.split_indices("train").expect("train split exists");
    if idx.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    let take = idx.len().min(config.training.batch_size);
    let batch = Batch::from_indices(dataset, &idx[..take])?;
    let opts = config.forward_options();
    let pack = |model: &Ken| -> Result<_> {
        let mut cx = Ctx::eval(&params);
        let out = model.forward(&mut cx, &batch, opts)?;
        Ok(out.features(&cx.graph))
    };
    let changed = changed_stages(&pack(&base)?, &pack(&variant)?);
    if let Some(stage) = changed.iter().find(|s| !flag.allows(s)) {
        return Err(Error::Trace {
            flag: flag.to_string(),
            stage: stage.clone(),
        });
    }
    Ok(changed)
}

/// Trains the configured model and one variant per flag, then evaluates each
/// on the test split. Variants write into `out_dir/<label>` when given.
pub fn ablate(config: &TrainConfig, dataset: &Dataset, flags: &[AblationFlag], out_dir: Option<&Path>) -> Result<Vec<AblationRow>> {
    for &f in flags {
        verify_footprint(config, dataset, f)?;
    }
    let variants: Vec<(Option<AblationFlag>, Ablation)> = std::iter::once((None, config.ablation))
        .chain(flags.iter().map(|&f| (Some(f), config.ablation.with(f))))
        .collect();
    let mut rows = Vec::with_capacity(variants.len());
    for (flag, ablation) in variants {
        let mut cfg = config.clone();
        cfg.ablation = ablation;
        let label = ablation.label();
        let dir = out_dir.map(|d| d.join(label.replace('/', "")));
        let outcome = train_with(&cfg, dataset, dir.as_deref())?;
        let model = outcome.model()?;
        let test = evaluate(&model, &outcome.last.params, dataset, "test", &cfg)?;
        rows.push(AblationRow {
            variant: label,
            flag,
            test: test.metrics,
            val: outcome.history.last().and_then(|r| r.val),
        });
    }
    if let Some(d) = out_dir {
        write_table(&rows, &d.join("ablation.csv"))?;
    }
    Ok(rows)
}

pub fn write_table(rows: &[AblationRow], path: &Path) -> Result<()> {
    let mut out = format!("variant,{}\n", Metrics::CSV_HEADER);
    for r in rows {
        out.push_str(&r.variant);
        out.push(',');
        out.push_str(&r.test.csv_fields().join(","));
        out.push('\n');
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
