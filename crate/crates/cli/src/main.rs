use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use ken_core::data::{generate_synthetic, load_dataset, write_dataset, Dataset, SyntheticSpec};
use ken_core::harness::{ablate, evaluate, export_features, sweep, train, Checkpoint, Metrics, SweepParam, TrainConfig};
use ken_core::model::Ablation;

#[derive(Parser)]
#[command(name = "ken", version, about = "Train and evaluate the multimodal fake news detector on precomputed embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or check embedding datasets.
    #[command(subcommand)]
    Data(DataCommand),
    /// Train a model and write history and checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Dataset to evaluate on instead of the one in the checkpoint's config.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train the configured model and one variant per flag, then compare on test.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated flags, e.g. `KA,Gate,w/o-ER`.
        #[arg(long)]
        flags: String,
        #[arg(long, default_value = "ablation")]
        out: PathBuf,
    },
    /// Train once per value of one parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// One of k, x, gamma, lambda.
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
    },
    /// Write the classification features of a split to CSV.
    Export {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum DataCommand {
    /// Generate a synthetic dataset from a TOML spec.
    Gen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Load and fully validate a dataset.
    Validate { dir: PathBuf },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Data(DataCommand::Gen { spec, out }) => {
            let text = fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
            let spec: SyntheticSpec = toml::from_str(&text).with_context(|| format!("parsing {}", spec.display()))?;
            let ds = generate_synthetic(&spec)?;
            let manifest = write_dataset(&ds, &out)?;
            println!("wrote {} samples to {}", ds.samples.len(), manifest.display());
            print_splits(&ds);
        }
        Command::Data(DataCommand::Validate { dir }) => {
            let ds = load_dataset(&dir)?;
            let d = ds.dims;
            println!(
                "{}: {} samples, d={} d_c={} m={} n={} z={} u={}",
                ds.name,
                ds.samples.len(),
                d.d,
                d.d_c,
                d.m,
                d.n,
                d.z,
                d.u
            );
            print_splits(&ds);
        }
        Command::Train { config, out } => {
            let cfg = TrainConfig::from_file(&config)?;
            let outcome = train(&cfg, &out)?;
            for r in &outcome.history {
                let val = r.val.map_or(String::from("-"), |m| format!("{:.4}", m.accuracy));
                println!("epoch {:>3}  loss {:.5}  train_acc {:.4}  val_acc {val}", r.epoch, r.loss, r.train_accuracy);
            }
            println!("best epoch {}, checkpoints in {}", outcome.best.epoch, out.join("checkpoints").display());
        }
        Command::Eval { ckpt, split, data } => {
            let ckpt = Checkpoint::read(&ckpt)?;
            let ds = dataset_for(&ckpt, data.as_deref())?;
            let ev = evaluate(&ckpt.model()?, &ckpt.params, &ds, &split, &ckpt.config)?;
            println!("split {split}: {} samples, loss {:.5}", ev.labels.len(), ev.loss);
            print_metrics(&ev.metrics);
        }
        Command::Ablate { config, flags, out } => {
            let cfg = TrainConfig::from_file(&config)?;
            let flags = Ablation::parse_list(&flags)?;
            if flags.is_empty() {
                bail!("no ablation flags given");
            }
            let ds = cfg.load_dataset()?;
            let rows = ablate(&cfg, &ds, &flags, Some(&out))?;
            println!("{:<24} {:>8} {:>8} {:>8}", "variant", "acc", "f1_fake", "f1_real");
            for r in rows {
                println!("{:<24} {:>8.4} {:>8.4} {:>8.4}", r.variant, r.test.accuracy, r.test.fake.f1, r.test.real.f1);
            }
            println!("table written to {}", out.join("ablation.csv").display());
        }
        Command::Sweep { config, param, values, out } => {
            let cfg = TrainConfig::from_file(&config)?;
            let ds = cfg.load_dataset()?;
            for r in sweep(&cfg, &ds, param, &values, Some(&out))? {
                println!("{param}={:<8} acc {:.4}", r.value, r.test.accuracy);
            }
            println!("results written to {}", out.display());
        }
        Command::Export { ckpt, out, split, data } => {
            let ckpt = Checkpoint::read(&ckpt)?;
            let ds = dataset_for(&ckpt, data.as_deref())?;
            let rows = export_features(&ckpt, &ds, &split, &out)?;
            println!("wrote {} rows to {}", rows.len(), out.display());
        }
    }
    Ok(())
}

fn dataset_for(ckpt: &Checkpoint, data: Option<&Path>) -> Result<Dataset> {
    Ok(match data {
        Some(p) => load_dataset(p)?,
        None => ckpt.config.load_dataset()?,
    })
}

fn print_splits(ds: &Dataset) {
    let s = &ds.splits;
    println!("splits: train {}, val {}, test {}", s.train.len(), s.val.len(), s.test.len());
}

fn print_metrics(m: &Metrics) {
    println!("accuracy {:.4}", m.accuracy);
    for (name, c) in [("fake", &m.fake), ("real", &m.real)] {
        println!("{name}: precision {:.4} recall {:.4} f1 {:.4}", c.precision, c.recall, c.f1);
    }
    let [[ff, fr], [rf, rr]] = m.confusion.counts;
    println!("confusion (true x predicted): fake->fake {ff}, fake->real {fr}, real->fake {rf}, real->real {rr}");
}
