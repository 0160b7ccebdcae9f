pub mod bench;
pub mod classify;
pub mod eval;
pub mod gradcheck;
pub mod segment;
pub mod synth;
pub mod train;

use std::path::Path;

use hiertask_core::corpus::{load_corpus, Corpus};
use hiertask_core::training::{load_checkpoint, ModelParams};
use hiertask_core::{Error, Result};

pub(crate) fn load_model(path: &Path) -> Result<ModelParams<f32>> {
    load_checkpoint(path)
}

/// Load a corpus and check it against a model's vocabulary snapshot.
pub(crate) fn load_corpus_for_model(
    manifest: &Path,
    model: &ModelParams<f32>,
) -> Result<Corpus> {
    let corpus = load_corpus(manifest)?;
    if corpus.vocab != model.vocab {
        return Err(Error::Data(format!(
            "{}: corpus vocabulary does not match the checkpoint",
            manifest.display()
        )));
    }
    Ok(corpus)
}

pub(crate) fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("json serialization failed: {e}")))?;
    write_text(path, &(text + "\n"))
}

/// Run per-video work on a fixed-size rayon pool, preserving input order.
pub(crate) fn map_videos<T: Send>(
    jobs: usize,
    n: usize,
    f: impl Fn(usize) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    if jobs <= 1 {
        return (0..n).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("could not build worker pool: {e}")))?;
    pool.install(|| {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(&f).collect()
    })
}
