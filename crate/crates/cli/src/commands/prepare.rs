use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use elvc_core::align::{
    align_dtw_mcc, align_dtw_wsola, apply_warp, clamp_path, cost_matrix_landmarks, dtw,
    expand_video_path,
};
use elvc_core::dsp::log_mel_spectrogram;
use elvc_core::io::{read_feature_file, read_landmarks, read_wav, write_feature_file};
use elvc_core::visual::{landmark_features, upsample_layers};

use super::{align::Method, list_utterances, require_files, write_matrix};
use crate::config::PipelineConfig;

/// Build the frame-paired training set: per utterance, the EL log-mel
/// input, the warp-aligned NL log-mel target, and (optionally) visual
/// features upsampled to the EL frame count.
#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Directory of EL recordings (*.wav).
    #[arg(long)]
    pub el_dir: Option<PathBuf>,
    /// Directory of parallel NL recordings (same stems).
    #[arg(long)]
    pub nl_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "dtw-wsola")]
    pub align_method: Method,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// EL lip-landmark CSVs; enables the built-in visual features and
    /// dtw-lip alignment.
    #[arg(long)]
    pub el_landmark_dir: Option<PathBuf>,
    /// NL lip-landmark CSVs (required for dtw-lip).
    #[arg(long)]
    pub nl_landmark_dir: Option<PathBuf>,
    /// Precomputed visual features (*.elf1 at video rate); overrides the
    /// landmark extractor for the model inputs.
    #[arg(long)]
    pub visual_dir: Option<PathBuf>,
}

pub fn run(args: &PrepareArgs, cfg: &PipelineConfig, jobs: usize) -> Result<()> {
    let el_dir = cfg.path_or(&args.el_dir, "el_dir")?;
    let nl_dir = cfg.path_or(&args.nl_dir, "nl_dir")?;
    let stems = list_utterances(&el_dir, ".wav")?;

    // Validate the whole file set before any stage runs.
    let mut needed: Vec<PathBuf> = Vec::new();
    for stem in &stems {
        needed.push(el_dir.join(format!("{stem}.wav")));
        needed.push(nl_dir.join(format!("{stem}.wav")));
        if args.align_method == Method::DtwLip {
            match (&args.el_landmark_dir, &args.nl_landmark_dir) {
                (Some(el_lm), Some(nl_lm)) => {
                    needed.push(el_lm.join(format!("{stem}.csv")));
                    needed.push(nl_lm.join(format!("{stem}.csv")));
                }
                _ => bail!("dtw-lip needs --el-landmark-dir and --nl-landmark-dir"),
            }
        }
        if let Some(vis) = &args.visual_dir {
            needed.push(vis.join(format!("{stem}.elf1")));
        } else if let Some(el_lm) = &args.el_landmark_dir {
            needed.push(el_lm.join(format!("{stem}.csv")));
        }
    }
    require_files(&needed)?;
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;

    run_utterances(args, cfg, jobs, &el_dir, &nl_dir, stems)
}

fn run_utterances(
    args: &PrepareArgs,
    cfg: &PipelineConfig,
    jobs: usize,
    el_dir: &std::path::Path,
    nl_dir: &std::path::Path,
    stems: Vec<String>,
) -> Result<()> {
    let count = stems.len();
    super::run_jobs(stems, jobs, |stem| {
        let el = read_wav(&el_dir.join(format!("{stem}.wav")))?;
        let nl = read_wav(&nl_dir.join(format!("{stem}.wav")))?;
        let mut src_lms = log_mel_spectrogram(&el, &cfg.features.stft, &cfg.features.mel)?;

        let (path, tgt_lms) = match args.align_method {
            Method::DtwWsola => {
                let (stretched, path) = align_dtw_wsola(&el, &nl, &cfg.features, &cfg.wsola)?;
                let tgt = log_mel_spectrogram(&stretched, &cfg.features.stft, &cfg.features.mel)?;
                (path, tgt)
            }
            Method::DtwMcc => {
                let path = align_dtw_mcc(&el, &nl, &cfg.features)?;
                let tgt = log_mel_spectrogram(&nl, &cfg.features.stft, &cfg.features.mel)?;
                (path, tgt)
            }
            Method::DtwLip => {
                let el_lm = read_landmarks(
                    &args
                        .el_landmark_dir
                        .as_ref()
                        .unwrap()
                        .join(format!("{stem}.csv")),
                )?;
                let nl_lm = read_landmarks(
                    &args
                        .nl_landmark_dir
                        .as_ref()
                        .unwrap()
                        .join(format!("{stem}.csv")),
                )?;
                let video_path = dtw(&cost_matrix_landmarks(&el_lm, &nl_lm)?)?;
                let expanded = expand_video_path(&video_path);
                let tgt = log_mel_spectrogram(&nl, &cfg.features.stft, &cfg.features.mel)?;

                // Audio/video length mismatches truncate to the shorter
                // implied length.
                let n_eff = src_lms.num_frames().min(4 * el_lm.len());
                let m_eff = tgt.num_frames().min(4 * nl_lm.len());
                if n_eff == 0 || m_eff == 0 {
                    bail!("{stem}: empty landmark sequence");
                }
                if n_eff < src_lms.num_frames() || m_eff < tgt.num_frames() {
                    eprintln!(
                        "{stem}: truncating features to {n_eff}x{m_eff} to match video length"
                    );
                }
                src_lms = truncate_rows(&src_lms, n_eff)?;
                let tgt = truncate_rows(&tgt, m_eff)?;
                (clamp_path(&expanded, n_eff, m_eff), tgt)
            }
        };

        let warped = apply_warp(&path, &tgt_lms)?;
        write_matrix(&src_lms, &args.out_dir.join(format!("{stem}.src.elf1")))?;
        write_matrix(&warped, &args.out_dir.join(format!("{stem}.tgt.elf1")))?;

        if let Some(vis_dir) = &args.visual_dir {
            let video_feats = read_feature_file(&vis_dir.join(format!("{stem}.elf1")))?;
            let upsampled = upsample_layers(&video_feats, src_lms.num_frames())?;
            write_feature_file(&upsampled, &args.out_dir.join(format!("{stem}.vis.elf1")))?;
        } else if let Some(el_lm_dir) = &args.el_landmark_dir {
            let seq = read_landmarks(&el_lm_dir.join(format!("{stem}.csv")))?;
            let feats = landmark_features(&seq)?;
            let upsampled = upsample_layers(&feats, src_lms.num_frames())?;
            write_feature_file(&upsampled, &args.out_dir.join(format!("{stem}.vis.elf1")))?;
        }
        eprintln!(
            "{stem}: {} frames aligned by {}",
            path.len(),
            args.align_method.as_str()
        );
        Ok(())
    })?;
    eprintln!(
        "prepared {count} utterances into {}",
        args.out_dir.display()
    );
    Ok(())
}

fn truncate_rows(m: &elvc_core::FeatureMatrix, rows: usize) -> Result<elvc_core::FeatureMatrix> {
    let data = m.data.slice(ndarray::s![..rows, ..]).to_owned();
    Ok(elvc_core::FeatureMatrix::new(
        data,
        m.frame_shift_s,
        m.kind,
    )?)
}
