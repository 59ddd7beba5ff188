use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use elvc_core::align::{
    align_dtw_lip, align_dtw_wsola, cost_matrix_mcc, dtw_banded, AlignmentPath,
};
use elvc_core::io::{read_landmarks, read_wav, write_wav};

use super::require_files;
use crate::config::PipelineConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// DTW over mel-cepstral distortion of the raw pair.
    DtwMcc,
    /// DTW over centered lip-landmark distance, expanded to 100 Hz.
    DtwLip,
    /// WSOLA length matching, then DTW over mel-cepstral distortion.
    DtwWsola,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::DtwMcc => "dtw-mcc",
            Method::DtwLip => "dtw-lip",
            Method::DtwWsola => "dtw-wsola",
        }
    }
}

/// Align an EL/NL utterance pair and write the frame path as CSV.
#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long, value_enum)]
    pub method: Method,
    /// EL recording (source side of the path).
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// NL recording (target side of the path).
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// EL lip landmarks (dtw-lip).
    #[arg(long)]
    pub source_landmarks: Option<PathBuf>,
    /// NL lip landmarks (dtw-lip).
    #[arg(long)]
    pub target_landmarks: Option<PathBuf>,
    /// Path CSV output, rows "i,j".
    #[arg(long)]
    pub path_out: PathBuf,
    /// Where to write the stretched NL signal (dtw-wsola).
    #[arg(long)]
    pub stretched_out: Option<PathBuf>,
    /// Summary text output; defaults to "<path-out>.summary.txt".
    #[arg(long)]
    pub summary_out: Option<PathBuf>,
}

pub fn run(args: &AlignArgs, cfg: &PipelineConfig) -> Result<()> {
    let path = match args.method {
        Method::DtwLip => {
            let (src, tgt) = match (&args.source_landmarks, &args.target_landmarks) {
                (Some(s), Some(t)) => (s, t),
                _ => bail!("dtw-lip needs --source-landmarks and --target-landmarks"),
            };
            require_files(&[src.clone(), tgt.clone()])?;
            align_dtw_lip(&read_landmarks(src)?, &read_landmarks(tgt)?)?
        }
        Method::DtwMcc | Method::DtwWsola => {
            let (src, tgt) = match (&args.source, &args.target) {
                (Some(s), Some(t)) => (s, t),
                _ => bail!("{} needs --source and --target", args.method.as_str()),
            };
            require_files(&[src.clone(), tgt.clone()])?;
            let el = read_wav(src)?;
            let nl = read_wav(tgt)?;
            if args.method == Method::DtwWsola {
                let (stretched, path) = align_dtw_wsola(&el, &nl, &cfg.features, &cfg.wsola)?;
                if let Some(out) = &args.stretched_out {
                    write_wav(&stretched, out)?;
                    eprintln!("wrote {}", out.display());
                }
                path
            } else {
                let src_mcc = cfg.features.mcc_features(&el)?;
                let tgt_mcc = cfg.features.mcc_features(&nl)?;
                dtw_banded(&cost_matrix_mcc(&src_mcc, &tgt_mcc)?, cfg.dtw_band)?
            }
        }
    };

    write_path_csv(&path, &args.path_out)?;
    let summary_path = args
        .summary_out
        .clone()
        .unwrap_or_else(|| args.path_out.with_extension("summary.txt"));
    let summary = format!(
        "method={}\npairs={}\ntotal_cost={:.6}\nmean_cost={:.6}\n",
        args.method.as_str(),
        path.len(),
        path.total_cost,
        path.mean_cost()
    );
    fs::write(&summary_path, &summary)
        .with_context(|| format!("writing {}", summary_path.display()))?;
    println!(
        "{}: {} pairs, total cost {:.6}",
        args.method.as_str(),
        path.len(),
        path.total_cost
    );
    Ok(())
}

pub fn write_path_csv(path: &AlignmentPath, out: &std::path::Path) -> Result<()> {
    let mut csv = String::with_capacity(path.len() * 8);
    for &(i, j) in &path.pairs {
        csv.push_str(&format!("{i},{j}\n"));
    }
    fs::write(out, csv).with_context(|| format!("writing {}", out.display()))
}
