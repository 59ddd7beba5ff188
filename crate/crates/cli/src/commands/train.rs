use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use elvc_core::io::read_feature_file;
use elvc_core::neural::{save_checkpoint, train, Mode, ModelConfig, TrainSample};

use super::{list_utterances, read_matrix, require_files};
use crate::config::PipelineConfig;

/// Train a conversion model on a prepared dataset.
#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory produced by `prepare` (*.src.elf1 / *.tgt.elf1 /
    /// *.vis.elf1).
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, default_value = "audio_only")]
    pub mode: String,
    /// Checkpoint output directory.
    #[arg(long)]
    pub checkpoint_out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

pub fn run(args: &TrainArgs, cfg: &PipelineConfig, seed: Option<u64>) -> Result<()> {
    let mode = Mode::parse(&args.mode).ok_or_else(|| {
        anyhow::anyhow!(
            "unknown mode {:?} (audio_only, multimodal, multimodal_ft)",
            args.mode
        )
    })?;
    let data_dir = cfg.path_or(&args.data_dir, "prepared_dir")?;
    let ckpt_dir = cfg.path_or(&args.checkpoint_out, "checkpoint_dir")?;
    let stems = list_utterances(&data_dir, ".src.elf1")?;

    let mut needed: Vec<PathBuf> = Vec::new();
    for stem in &stems {
        needed.push(data_dir.join(format!("{stem}.tgt.elf1")));
        if mode.uses_visual() {
            needed.push(data_dir.join(format!("{stem}.vis.elf1")));
        }
    }
    require_files(&needed)?;

    let mut samples = Vec::with_capacity(stems.len());
    for stem in &stems {
        let src = read_matrix(&data_dir.join(format!("{stem}.src.elf1")))?;
        let tgt = read_matrix(&data_dir.join(format!("{stem}.tgt.elf1")))?;
        let visual = if mode.uses_visual() {
            Some(read_feature_file(
                &data_dir.join(format!("{stem}.vis.elf1")),
            )?)
        } else {
            None
        };
        samples.push(TrainSample {
            acoustic: src.data,
            visual,
            target: tgt.data,
        });
    }

    let (visual_dim, visual_layers) = samples
        .first()
        .and_then(|s| s.visual.as_ref())
        .map(|v| (v.dim(), v.num_layers()))
        .unwrap_or((0, 0));
    let input_dim = samples[0].acoustic.ncols();
    let output_dim = samples[0].target.ncols();
    let model_cfg = ModelConfig {
        mode,
        input_dim,
        output_dim,
        conv_channels: cfg.model.conv_channels,
        gru_hidden: cfg.model.gru_hidden,
        kernel: cfg.model.kernel,
        visual_dim,
        visual_layers,
    };
    let mut train_cfg = cfg.train.clone();
    if let Some(e) = args.epochs {
        train_cfg.epochs = e;
    }
    if let Some(b) = args.batch_size {
        train_cfg.batch_size = b;
    }
    if let Some(lr) = args.learning_rate {
        train_cfg.learning_rate = lr;
    }
    if let Some(s) = seed {
        train_cfg.seed = s;
    }
    if train_cfg.epochs == 0 {
        bail!("train.epochs must be positive (set --epochs or train.epochs)");
    }

    eprintln!(
        "training {} on {} utterances ({} epochs, batch {}, lr {}, seed {})",
        mode.as_str(),
        samples.len(),
        train_cfg.epochs,
        train_cfg.batch_size,
        train_cfg.learning_rate,
        train_cfg.seed
    );
    let (model, history) = train(&samples, &model_cfg, &train_cfg)?;
    save_checkpoint(&model, &ckpt_dir)?;

    let mut csv = String::from("epoch,loss\n");
    for (epoch, loss) in history.iter().enumerate() {
        csv.push_str(&format!("{},{loss:.12}\n", epoch + 1));
    }
    let history_path = ckpt_dir.join("history.csv");
    std::fs::write(&history_path, csv)
        .with_context(|| format!("writing {}", history_path.display()))?;

    println!(
        "final training loss {:.6} after {} epochs; checkpoint at {}",
        history.last().unwrap(),
        history.len(),
        ckpt_dir.display()
    );
    Ok(())
}
