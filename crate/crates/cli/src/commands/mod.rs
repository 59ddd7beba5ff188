//! Subcommand implementations. Every command validates its inputs before
//! any stage runs, writes data only to its declared outputs, and logs to
//! standard error.

pub mod align;
pub mod convert;
pub mod eval;
pub mod features;
pub mod gradcheck;
pub mod prepare;
pub mod stretch;
pub mod train;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use elvc_core::io::{FeatureKind, FeatureMatrix, LayeredFeatureSet, LMS_DIM};

/// Sorted utterance stems with the given suffix in a directory.
pub fn list_utterances(dir: &Path, suffix: &str) -> Result<Vec<String>> {
    if !dir.is_dir() {
        bail!("not a directory: {}", dir.display());
    }
    let mut stems = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if let Some(stem) = name.strip_suffix(suffix) {
            stems.push(stem.to_string());
        }
    }
    stems.sort();
    if stems.is_empty() {
        bail!("no *{suffix} files in {}", dir.display());
    }
    Ok(stems)
}

/// Check that every path exists before any stage runs.
pub fn require_files(paths: &[PathBuf]) -> Result<()> {
    for p in paths {
        if !p.exists() {
            bail!("missing input: {}", p.display());
        }
    }
    Ok(())
}

/// Read a single-layer feature file as a FeatureMatrix; 80-dim data is
/// tagged LMS.
pub fn read_matrix(path: &Path) -> Result<FeatureMatrix> {
    let set = elvc_core::io::read_feature_file(path)
        .with_context(|| format!("reading {}", path.display()))?;
    if set.num_layers() != 1 {
        bail!(
            "{} holds {} layers, expected a single-layer feature matrix",
            path.display(),
            set.num_layers()
        );
    }
    let kind = if set.dim() == LMS_DIM {
        FeatureKind::Lms
    } else {
        FeatureKind::Other
    };
    let data = set.layers.into_iter().next().unwrap();
    FeatureMatrix::new(data, 0.01, kind).map_err(|e| anyhow!("{}: {e}", path.display()))
}

/// Write a FeatureMatrix as a single-layer feature file.
pub fn write_matrix(m: &FeatureMatrix, path: &Path) -> Result<()> {
    let set = LayeredFeatureSet::single(m.data.clone(), "matrix")?;
    elvc_core::io::write_feature_file(&set, path)
        .with_context(|| format!("writing {}", path.display()))
}

/// Run per-utterance work on a fixed-size worker pool, preserving input
/// order in the results.
pub fn run_jobs<T, F>(items: Vec<T>, jobs: usize, work: F) -> Result<Vec<()>>
where
    T: Sync,
    F: Fn(&T) -> Result<()> + Sync,
{
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("building worker pool")?;
    pool.install(|| items.par_iter().map(&work).collect())
}
