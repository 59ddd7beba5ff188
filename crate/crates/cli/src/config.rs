//! Flat key=value configuration shared by all subcommands.
//!
//! Keys use dotted section prefixes (`stft.hop=160`). Unknown keys are
//! rejected with the offending key path so typos cannot silently fall
//! back to defaults. Path keys (`paths.*`) act as defaults for the
//! corresponding command-line flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use elvc_core::align::FeatureConfig;
use elvc_core::neural::TrainConfig;
use elvc_core::wsola::WsolaConfig;

/// Model sizes configurable from the config file.
#[derive(Debug, Clone)]
pub struct ModelSettings {
    pub conv_channels: usize,
    pub gru_hidden: usize,
    pub kernel: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            conv_channels: 64,
            gru_hidden: 64,
            kernel: 5,
        }
    }
}

const PATH_KEYS: &[&str] = &[
    "el_dir",
    "nl_dir",
    "el_landmark_dir",
    "nl_landmark_dir",
    "visual_dir",
    "prepared_dir",
    "checkpoint_dir",
    "converted_dir",
    "target_dir",
    "report",
];

#[derive(Debug, Clone, Default)]
pub struct PipelineConfig {
    pub features: FeatureConfig,
    pub wsola: WsolaConfig,
    pub dtw_band: Option<usize>,
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub paths: BTreeMap<String, PathBuf>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                anyhow!(
                    "config line {}: expected key=value, got {raw:?}",
                    lineno + 1
                )
            })?;
            cfg.set(key.trim(), value.trim())
                .with_context(|| format!("config line {}", lineno + 1))?;
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| anyhow!("key {key}: cannot parse {value:?}"))
        }
        match key {
            "stft.window_len" => self.features.stft.window_len = parse(key, value)?,
            "stft.hop" => self.features.stft.hop = parse(key, value)?,
            "stft.fft_size" => self.features.stft.fft_size = parse(key, value)?,
            "mel.n_mels" => self.features.mel.n_mels = parse(key, value)?,
            "mel.f_min" => self.features.mel.f_min = parse(key, value)?,
            "mel.f_max" => self.features.mel.f_max = parse(key, value)?,
            "mel.log_floor" => self.features.mel.log_floor = parse(key, value)?,
            "mcc.order" => self.features.mcc.order = parse(key, value)?,
            "wsola.frame_len" => self.wsola.frame_len = parse(key, value)?,
            "wsola.synthesis_hop" => self.wsola.synthesis_hop = parse(key, value)?,
            "wsola.tolerance" => self.wsola.tolerance = parse(key, value)?,
            "dtw.band" => self.dtw_band = Some(parse(key, value)?),
            "model.conv_channels" => self.model.conv_channels = parse(key, value)?,
            "model.gru_hidden" => self.model.gru_hidden = parse(key, value)?,
            "model.kernel" => self.model.kernel = parse(key, value)?,
            "train.batch_size" => self.train.batch_size = parse(key, value)?,
            "train.learning_rate" => self.train.learning_rate = parse(key, value)?,
            "train.epochs" => self.train.epochs = parse(key, value)?,
            "train.seed" => self.train.seed = parse(key, value)?,
            _ => {
                if let Some(path_key) = key.strip_prefix("paths.") {
                    if !PATH_KEYS.contains(&path_key) {
                        bail!("unknown config key {key:?}");
                    }
                    self.paths
                        .insert(path_key.to_string(), PathBuf::from(value));
                } else {
                    bail!("unknown config key {key:?}");
                }
            }
        }
        Ok(())
    }

    /// Flag value if present, else the `paths.*` entry from the config.
    pub fn path_or(&self, flag: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
        flag.clone()
            .or_else(|| self.paths.get(key).cloned())
            .ok_or_else(|| {
                anyhow!(
                    "missing --{} (or config paths.{key})",
                    key.replace('_', "-")
                )
            })
    }
}
