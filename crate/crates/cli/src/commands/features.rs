use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use elvc_core::dsp::{log_mel_spectrogram, mcc_from_logmel};
use elvc_core::io::{read_landmarks, read_wav, write_feature_file, LayeredFeatureSet};
use elvc_core::visual::landmark_features;

use super::{require_files, write_matrix};
use crate::config::PipelineConfig;

/// Extract acoustic or landmark features into ELF1 files.
#[derive(Debug, Args)]
pub struct FeaturesArgs {
    /// Input WAV (16 kHz mono PCM16).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Log-mel spectrogram output.
    #[arg(long)]
    pub lms_out: Option<PathBuf>,
    /// Mel-cepstral coefficient output.
    #[arg(long)]
    pub mcc_out: Option<PathBuf>,
    /// Landmark CSV input (40 columns per row).
    #[arg(long)]
    pub landmarks: Option<PathBuf>,
    /// Landmark feature output (centered, flattened, video rate).
    #[arg(long)]
    pub visual_out: Option<PathBuf>,
}

pub fn run(args: &FeaturesArgs, cfg: &PipelineConfig) -> Result<()> {
    let mut did_work = false;
    if let Some(input) = &args.input {
        if args.lms_out.is_none() && args.mcc_out.is_none() {
            bail!("--input needs --lms-out and/or --mcc-out");
        }
        require_files(std::slice::from_ref(input))?;
        let wav = read_wav(input).with_context(|| format!("reading {}", input.display()))?;
        let lms = log_mel_spectrogram(&wav, &cfg.features.stft, &cfg.features.mel)?;
        if let Some(out) = &args.lms_out {
            write_matrix(&lms, out)?;
            eprintln!(
                "wrote {} ({} x {})",
                out.display(),
                lms.num_frames(),
                lms.dim()
            );
        }
        if let Some(out) = &args.mcc_out {
            let mcc = mcc_from_logmel(&lms, &cfg.features.mcc)?;
            write_matrix(&mcc, out)?;
            eprintln!(
                "wrote {} ({} x {})",
                out.display(),
                mcc.num_frames(),
                mcc.dim()
            );
        }
        did_work = true;
    }
    if let Some(landmarks) = &args.landmarks {
        let out = args
            .visual_out
            .as_ref()
            .ok_or_else(|| anyhow::anyhow!("--landmarks needs --visual-out"))?;
        require_files(std::slice::from_ref(landmarks))?;
        let seq = read_landmarks(landmarks)?;
        let feats: LayeredFeatureSet = landmark_features(&seq)?;
        write_feature_file(&feats, out)?;
        eprintln!(
            "wrote {} ({} frames x {} dims, video rate)",
            out.display(),
            feats.num_frames(),
            feats.dim()
        );
        did_work = true;
    }
    if !did_work {
        bail!("nothing to do: pass --input or --landmarks");
    }
    Ok(())
}
