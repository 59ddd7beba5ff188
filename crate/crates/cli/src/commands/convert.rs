use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::Args;
use elvc_core::io::read_feature_file;
use elvc_core::neural::{convert, load_checkpoint, TrainedModel};

use super::{list_utterances, read_matrix, require_files, write_matrix};
use crate::config::PipelineConfig;

/// Run a trained model over log-mel inputs.
#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Single input feature file.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Visual features for the single input (multimodal modes).
    #[arg(long)]
    pub visual: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Directory of prepared inputs (*.src.elf1, with *.vis.elf1 beside
    /// them when the model is multimodal).
    #[arg(long)]
    pub input_dir: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

pub fn run(args: &ConvertArgs, cfg: &PipelineConfig, jobs: usize) -> Result<()> {
    let ckpt_dir = cfg.path_or(&args.checkpoint, "checkpoint_dir")?;
    let model = load_checkpoint(&ckpt_dir)?;

    match (&args.input, &args.input_dir) {
        (Some(input), None) => {
            let output = args
                .output
                .as_ref()
                .ok_or_else(|| anyhow::anyhow!("--input needs --output"))?;
            require_files(std::slice::from_ref(input))?;
            convert_one(&model, input, args.visual.as_deref(), output)
        }
        (None, Some(input_dir)) => {
            let output_dir = args
                .output_dir
                .as_ref()
                .ok_or_else(|| anyhow::anyhow!("--input-dir needs --output-dir"))?;
            let stems = list_utterances(input_dir, ".src.elf1")?;
            let mut needed = Vec::new();
            if model.config.mode.uses_visual() {
                for stem in &stems {
                    needed.push(input_dir.join(format!("{stem}.vis.elf1")));
                }
            }
            require_files(&needed)?;
            std::fs::create_dir_all(output_dir)?;
            super::run_jobs(stems, jobs, |stem| {
                let input = input_dir.join(format!("{stem}.src.elf1"));
                let visual = model
                    .config
                    .mode
                    .uses_visual()
                    .then(|| input_dir.join(format!("{stem}.vis.elf1")));
                convert_one(
                    &model,
                    &input,
                    visual.as_deref(),
                    &output_dir.join(format!("{stem}.pred.elf1")),
                )
            })?;
            eprintln!("converted into {}", output_dir.display());
            Ok(())
        }
        _ => bail!("pass exactly one of --input or --input-dir"),
    }
}

fn convert_one(
    model: &TrainedModel,
    input: &Path,
    visual: Option<&Path>,
    output: &Path,
) -> Result<()> {
    let acoustic = read_matrix(input)?;
    let visual = match visual {
        Some(path) => Some(read_feature_file(path)?),
        None => None,
    };
    let predicted = convert(model, &acoustic, visual.as_ref())?;
    write_matrix(&predicted, output)?;
    eprintln!(
        "{} -> {} ({} x {})",
        input.display(),
        output.display(),
        predicted.num_frames(),
        predicted.dim()
    );
    Ok(())
}
