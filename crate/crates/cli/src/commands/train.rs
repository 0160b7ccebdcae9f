use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use hiertask_core::corpus::load_corpus;
use hiertask_core::training::{save_checkpoint, train, TrainConfig};
use hiertask_core::{Error, Result};

use super::{ensure_dir, write_text};

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Base hyperparameters before config file and overrides.
    #[arg(long, default_value = "paper", value_parser = ["paper", "synthetic"])]
    pub preset: String,
    /// Flat key=value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Individual overrides, e.g. --set iterations=500 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Overrides the seed from preset/config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the loss curve as CSV.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    /// Dump the TF-IDF tables as CSV files into this directory.
    #[arg(long)]
    pub dump_tfidf: Option<PathBuf>,
}

pub fn resolve_config(
    preset: &str,
    config: Option<&PathBuf>,
    overrides: &[String],
    seed: Option<u64>,
) -> Result<TrainConfig> {
    let mut cfg = match preset {
        "synthetic" => TrainConfig::synthetic(),
        _ => TrainConfig::default(),
    };
    if let Some(path) = config {
        cfg.apply_file(path)?;
    }
    for kv in overrides {
        let Some((key, value)) = kv.split_once('=') else {
            return Err(Error::Config(format!("--set expects key=value, got \"{kv}\"")));
        };
        cfg.set(key.trim(), value.trim())?;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(args: TrainArgs) -> Result<i32> {
    let cfg = resolve_config(&args.preset, args.config.as_ref(), &args.overrides, args.seed)?;
    let corpus = load_corpus(&args.manifest)?;
    let started = std::time::Instant::now();
    let (model, curve) = train::<f32>(&corpus, &cfg)?;
    let elapsed = started.elapsed().as_secs_f64();
    save_checkpoint(&model, &args.out)?;

    if let Some(path) = &args.loss_csv {
        let mut csv = String::from("iteration,total,l_sh,l_th,l_f\n");
        for row in &curve {
            writeln!(csv, "{},{},{},{},{}", row.iteration, row.total, row.l_sh, row.l_th, row.l_f)
                .expect("string write");
        }
        write_text(path, &csv)?;
    }
    if let Some(dir) = &args.dump_tfidf {
        dump_tfidf(dir, &model)?;
    }
    let last = curve.last().map(|r| r.total).unwrap_or(f64::NAN);
    println!(
        "trained {} iterations on {} videos in {elapsed:.1}s; final loss {last:.4}; wrote {}",
        cfg.iterations,
        corpus.len(),
        args.out.display()
    );
    Ok(0)
}

fn dump_tfidf(dir: &PathBuf, model: &hiertask_core::ModelF32) -> Result<()> {
    ensure_dir(dir)?;
    let t = &model.tfidf;
    let vocab = &model.vocab;
    let matrix_csv = |m: &ndarray::Array2<f32>| {
        let mut out = String::from("attribute");
        for task in &vocab.tasks {
            out.push(',');
            out.push_str(task);
        }
        out.push('\n');
        for (j, row) in m.rows().into_iter().enumerate() {
            out.push_str(&vocab.attributes[j]);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    };
    write_text(&dir.join("tf.csv"), &matrix_csv(&t.tf))?;
    write_text(&dir.join("w.csv"), &matrix_csv(&t.w))?;
    write_text(&dir.join("mask.csv"), &matrix_csv(&t.mask.mapv(|m| m as f32)))?;
    let mut idf = String::from("attribute,idf\n");
    for (j, v) in t.idf.iter().enumerate() {
        let _ = writeln!(idf, "{},{v}", vocab.attributes[j]);
    }
    write_text(&dir.join("idf.csv"), &idf)
}
