use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use elvc_core::eval::evaluate_corpus;

use super::{read_matrix, require_files};
use crate::config::PipelineConfig;

/// Mel-cepstral distortion between converted and target features, per
/// utterance and corpus-wide.
#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of converted features (*.pred.elf1 or *.elf1).
    #[arg(long)]
    pub converted_dir: Option<PathBuf>,
    /// Directory of reference features (*.tgt.elf1 or *.elf1).
    #[arg(long)]
    pub target_dir: Option<PathBuf>,
    /// Report CSV output (utt_id,mcd_db).
    #[arg(long)]
    pub report_out: Option<PathBuf>,
    #[arg(long, default_value = "eval")]
    pub label: String,
    /// CSV with a utt_id column whose remaining columns are appended to
    /// the report (externally computed metrics).
    #[arg(long)]
    pub merge_external: Option<PathBuf>,
}

const CONVERTED_SUFFIXES: &[&str] = &[".pred.elf1", ".elf1"];
const TARGET_SUFFIXES: &[&str] = &[".tgt.elf1", ".elf1"];

fn find_with_suffix(dir: &Path, stem: &str, suffixes: &[&str]) -> Option<PathBuf> {
    suffixes
        .iter()
        .map(|s| dir.join(format!("{stem}{s}")))
        .find(|p| p.exists())
}

fn stems_in(dir: &Path, suffixes: &[&str]) -> Result<Vec<String>> {
    if !dir.is_dir() {
        bail!("not a directory: {}", dir.display());
    }
    let mut stems = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name();
        let name = name.to_string_lossy().into_owned();
        for suffix in suffixes {
            if let Some(stem) = name.strip_suffix(suffix) {
                // ".elf1" also matches ".pred.elf1" files; keep the
                // longest-suffix interpretation only.
                if *suffix == ".elf1"
                    && (name.ends_with(".pred.elf1")
                        || name.ends_with(".tgt.elf1")
                        || name.ends_with(".src.elf1")
                        || name.ends_with(".vis.elf1"))
                {
                    continue;
                }
                stems.push(stem.to_string());
                break;
            }
        }
    }
    stems.sort();
    stems.dedup();
    Ok(stems)
}

pub fn run(args: &EvalArgs, cfg: &PipelineConfig) -> Result<()> {
    let converted_dir = cfg.path_or(&args.converted_dir, "converted_dir")?;
    let target_dir = cfg.path_or(&args.target_dir, "target_dir")?;
    let report_out = cfg.path_or(&args.report_out, "report")?;

    let mut stems = stems_in(&converted_dir, &[".pred.elf1"])?;
    if stems.is_empty() {
        stems = stems_in(&converted_dir, &[".elf1"])?;
    }
    if stems.is_empty() {
        bail!("no feature files in {}", converted_dir.display());
    }

    let mut pairs = Vec::with_capacity(stems.len());
    for stem in &stems {
        let conv_path = find_with_suffix(&converted_dir, stem, CONVERTED_SUFFIXES)
            .ok_or_else(|| anyhow::anyhow!("missing converted features for {stem}"))?;
        let tgt_path = find_with_suffix(&target_dir, stem, TARGET_SUFFIXES)
            .ok_or_else(|| anyhow::anyhow!("missing target features for {stem}"))?;
        require_files(&[conv_path.clone(), tgt_path.clone()])?;
        pairs.push((
            stem.clone(),
            read_matrix(&conv_path)?,
            read_matrix(&tgt_path)?,
        ));
    }

    let report = evaluate_corpus(&pairs, &args.label, &cfg.features.mcc)?;
    let csv = match &args.merge_external {
        Some(external) => merge_external(&report.to_csv(), external)?,
        None => report.to_csv(),
    };
    fs::write(&report_out, csv).with_context(|| format!("writing {}", report_out.display()))?;
    println!("{}", report.summary());
    Ok(())
}

/// Join extra metric columns onto the report by utterance id.
fn merge_external(report_csv: &str, external: &Path) -> Result<String> {
    let text =
        fs::read_to_string(external).with_context(|| format!("reading {}", external.display()))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| anyhow::anyhow!("empty external CSV"))?;
    let mut columns = header.split(',');
    if columns.next() != Some("utt_id") {
        bail!("external CSV must start with a utt_id column");
    }
    let extra_header: Vec<&str> = columns.collect();
    let mut rows: BTreeMap<String, String> = BTreeMap::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (id, rest) = line
            .split_once(',')
            .ok_or_else(|| anyhow::anyhow!("bad external CSV row {line:?}"))?;
        rows.insert(id.to_string(), rest.to_string());
    }

    let empty = vec![""; extra_header.len()].join(",");
    let mut out = String::new();
    for (idx, line) in report_csv.lines().enumerate() {
        if idx == 0 {
            out.push_str(line);
            for h in &extra_header {
                out.push(',');
                out.push_str(h);
            }
        } else {
            let id = line.split(',').next().unwrap_or_default();
            out.push_str(line);
            out.push(',');
            out.push_str(rows.get(id).map(String::as_str).unwrap_or(&empty));
        }
        out.push('\n');
    }
    Ok(out)
}
