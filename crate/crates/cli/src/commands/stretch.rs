use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use elvc_core::io::{read_wav, write_wav};
use elvc_core::wsola::{stretch, stretch_to_length};

use super::require_files;
use crate::config::PipelineConfig;

/// Time-stretch a waveform with WSOLA, preserving pitch.
#[derive(Debug, Args)]
pub struct StretchArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Stretch rate (> 1 lengthens). Mutually exclusive with --target-wav.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Match the length of this reference recording.
    #[arg(long)]
    pub target_wav: Option<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
}

pub fn run(args: &StretchArgs, cfg: &PipelineConfig) -> Result<()> {
    require_files(std::slice::from_ref(&args.input))?;
    let input = read_wav(&args.input)?;
    let stretched = match (&args.alpha, &args.target_wav) {
        (Some(alpha), None) => stretch(&input, *alpha, &cfg.wsola)?,
        (None, Some(target)) => {
            require_files(std::slice::from_ref(target))?;
            let reference = read_wav(target)?;
            stretch_to_length(&input, reference.len(), &cfg.wsola)?
        }
        _ => bail!("pass exactly one of --alpha or --target-wav"),
    };
    write_wav(&stretched, &args.output)?;
    eprintln!(
        "stretched {} samples -> {} samples into {}",
        input.len(),
        stretched.len(),
        args.output.display()
    );
    Ok(())
}
