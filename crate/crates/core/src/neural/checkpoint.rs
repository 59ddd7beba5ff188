//! Checkpoint layout: a directory holding `manifest.txt` (flat key=value
//! lines describing the architecture) plus one single-layer ELF1 file per
//! tensor, and `norm_stats.elf1` when the model carries visual
//! normalization statistics.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::layers::{Conv1dParams, GruParams, LinearParams};
use super::model::{
    conv_weight_from_matrix, conv_weight_to_matrix, Mode, ModelConfig, ModelParameters,
};
use super::train::TrainedModel;
use super::NeuralError;
use crate::io::{read_feature_file, write_feature_file, LayeredFeatureSet};
use crate::visual::NormStats;

const MANIFEST: &str = "manifest.txt";
const FORMAT_TAG: &str = "elvc-checkpoint-v1";

pub fn save_checkpoint(model: &TrainedModel, dir: &Path) -> Result<(), NeuralError> {
    fs::create_dir_all(dir).map_err(crate::io::IoError::Io)?;
    let cfg = &model.config;
    let mut manifest = String::new();
    manifest.push_str(&format!("format={FORMAT_TAG}\n"));
    manifest.push_str(&format!("mode={}\n", cfg.mode.as_str()));
    manifest.push_str(&format!("input_dim={}\n", cfg.input_dim));
    manifest.push_str(&format!("output_dim={}\n", cfg.output_dim));
    manifest.push_str(&format!("conv_channels={}\n", cfg.conv_channels));
    manifest.push_str(&format!("gru_hidden={}\n", cfg.gru_hidden));
    manifest.push_str(&format!("kernel={}\n", cfg.kernel));
    manifest.push_str(&format!("visual_dim={}\n", cfg.visual_dim));
    manifest.push_str(&format!("visual_layers={}\n", cfg.visual_layers));
    manifest.push_str(&format!(
        "norm_stats={}\n",
        model.norm_stats.is_some() as u8
    ));
    fs::write(dir.join(MANIFEST), manifest).map_err(crate::io::IoError::Io)?;

    for (name, matrix) in tensor_matrices(&model.params) {
        let set = LayeredFeatureSet::single(matrix, name.clone())
            .map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
        write_feature_file(&set, &dir.join(format!("{name}.elf1")))?;
    }
    if let Some(stats) = &model.norm_stats {
        write_feature_file(&stats.to_feature_set(), &dir.join("norm_stats.elf1"))?;
    }
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<TrainedModel, NeuralError> {
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path).map_err(|e| {
        NeuralError::Checkpoint(format!("cannot read {}: {e}", manifest_path.display()))
    })?;
    let mut fields = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            NeuralError::Checkpoint(format!("manifest line {}: missing '='", lineno + 1))
        })?;
        fields.insert(key.trim().to_string(), value.trim().to_string());
    }
    let get = |key: &str| {
        fields
            .get(key)
            .cloned()
            .ok_or_else(|| NeuralError::Checkpoint(format!("manifest missing key {key}")))
    };
    let get_usize = |key: &str| -> Result<usize, NeuralError> {
        get(key)?
            .parse()
            .map_err(|_| NeuralError::Checkpoint(format!("manifest key {key} is not a number")))
    };

    if get("format")? != FORMAT_TAG {
        return Err(NeuralError::Checkpoint(format!(
            "unsupported checkpoint format {:?}",
            get("format")?
        )));
    }
    let mode_str = get("mode")?;
    let mode = Mode::parse(&mode_str)
        .ok_or_else(|| NeuralError::Checkpoint(format!("unknown mode {mode_str:?}")))?;
    let cfg = ModelConfig {
        mode,
        input_dim: get_usize("input_dim")?,
        output_dim: get_usize("output_dim")?,
        conv_channels: get_usize("conv_channels")?,
        gru_hidden: get_usize("gru_hidden")?,
        kernel: get_usize("kernel")?,
        visual_dim: get_usize("visual_dim")?,
        visual_layers: get_usize("visual_layers")?,
    };
    cfg.validate()?;

    let load_matrix = |name: &str| -> Result<Array2<f64>, NeuralError> {
        let set = read_feature_file(&dir.join(format!("{name}.elf1")))?;
        if set.num_layers() != 1 {
            return Err(NeuralError::Checkpoint(format!(
                "tensor {name} has {} layers, expected 1",
                set.num_layers()
            )));
        }
        Ok(set.layers.into_iter().next().unwrap())
    };
    let load_vector = |name: &str| -> Result<Array1<f64>, NeuralError> {
        let m = load_matrix(name)?;
        if m.nrows() != 1 {
            return Err(NeuralError::Checkpoint(format!(
                "tensor {name} has {} rows, expected 1",
                m.nrows()
            )));
        }
        Ok(m.row(0).to_owned())
    };
    let load_gru = |prefix: &str| -> Result<GruParams, NeuralError> {
        Ok(GruParams {
            w_reset: load_matrix(&format!("{prefix}.reset_w"))?,
            u_reset: load_matrix(&format!("{prefix}.reset_u"))?,
            b_reset: load_vector(&format!("{prefix}.reset_b"))?,
            w_update: load_matrix(&format!("{prefix}.update_w"))?,
            u_update: load_matrix(&format!("{prefix}.update_u"))?,
            b_update: load_vector(&format!("{prefix}.update_b"))?,
            w_cand: load_matrix(&format!("{prefix}.cand_w"))?,
            u_cand: load_matrix(&format!("{prefix}.cand_u"))?,
            b_cand: load_vector(&format!("{prefix}.cand_b"))?,
        })
    };

    let conv = Conv1dParams {
        weight: conv_weight_from_matrix(&load_matrix("conv.weight")?, cfg.kernel)?,
        bias: load_vector("conv.bias")?,
    };
    let gru = load_gru("gru")?;
    let output = LinearParams {
        weight: load_matrix("output.weight")?,
        bias: load_vector("output.bias")?,
    };
    let fusion_logits = if mode.uses_visual() {
        Some(load_vector("fusion.logits")?)
    } else {
        None
    };
    let ft_gru = if mode == Mode::MultimodalFt {
        Some(load_gru("ft_gru")?)
    } else {
        None
    };

    let params = ModelParameters {
        conv,
        gru,
        output,
        fusion_logits,
        ft_gru,
    };
    check_shapes(&cfg, &params)?;

    let norm_stats = if get("norm_stats")? == "1" {
        let set = read_feature_file(&dir.join("norm_stats.elf1"))?;
        Some(NormStats::from_feature_set(&set)?)
    } else {
        None
    };

    let seed = get("seed")?
        .parse()
        .map_err(|_| NeuralError::Checkpoint("manifest key seed is not a number".into()))?;

    Ok(TrainedModel {
        config: cfg,
        params,
        norm_stats,
        seed,
    })
}

fn check_shapes(cfg: &ModelConfig, params: &ModelParameters) -> Result<(), NeuralError> {
    let expect = |name: &str, got: (usize, usize), want: (usize, usize)| {
        if got != want {
            Err(NeuralError::Checkpoint(format!(
                "tensor {name} is {got:?}, expected {want:?}"
            )))
        } else {
            Ok(())
        }
    };
    expect(
        "conv.weight",
        (
            params.conv.out_dim(),
            params.conv.kernel() * params.conv.in_dim(),
        ),
        (cfg.conv_channels, cfg.kernel * cfg.trunk_input_dim()),
    )?;
    expect(
        "gru.reset_w",
        params.gru.w_reset.dim(),
        (cfg.gru_hidden, cfg.conv_channels),
    )?;
    expect(
        "output.weight",
        params.output.weight.dim(),
        (cfg.output_dim, cfg.gru_hidden),
    )?;
    if let Some(ft) = &params.ft_gru {
        expect(
            "ft_gru.reset_w",
            ft.w_reset.dim(),
            (cfg.visual_dim, cfg.visual_dim),
        )?;
    }
    if let Some(logits) = &params.fusion_logits {
        if logits.len() != cfg.visual_layers {
            return Err(NeuralError::Checkpoint(format!(
                "fusion.logits has {} entries, expected {}",
                logits.len(),
                cfg.visual_layers
            )));
        }
    }
    Ok(())
}

/// Every tensor as a 2-D matrix under its manifest name.
fn tensor_matrices(params: &ModelParameters) -> Vec<(String, Array2<f64>)> {
    let row =
        |v: &Array1<f64>| Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row vector");
    let gru_mats = |prefix: &str, g: &GruParams| {
        vec![
            (format!("{prefix}.reset_w"), g.w_reset.clone()),
            (format!("{prefix}.reset_u"), g.u_reset.clone()),
            (format!("{prefix}.reset_b"), row(&g.b_reset)),
            (format!("{prefix}.update_w"), g.w_update.clone()),
            (format!("{prefix}.update_u"), g.u_update.clone()),
            (format!("{prefix}.update_b"), row(&g.b_update)),
            (format!("{prefix}.cand_w"), g.w_cand.clone()),
            (format!("{prefix}.cand_u"), g.u_cand.clone()),
            (format!("{prefix}.cand_b"), row(&g.b_cand)),
        ]
    };
    let mut out = vec![
        (
            "conv.weight".to_string(),
            conv_weight_to_matrix(&params.conv),
        ),
        ("conv.bias".to_string(), row(&params.conv.bias)),
    ];
    out.extend(gru_mats("gru", &params.gru));
    out.push(("output.weight".to_string(), params.output.weight.clone()));
    out.push(("output.bias".to_string(), row(&params.output.bias)));
    if let Some(logits) = &params.fusion_logits {
        out.push(("fusion.logits".to_string(), row(logits)));
    }
    if let Some(ft) = &params.ft_gru {
        out.extend(gru_mats("ft_gru", ft));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::LayeredFeatureSet;
    use crate::neural::{build_model, train, TrainConfig, TrainSample};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_preserves_every_tensor() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let samples: Vec<TrainSample> = (0..3)
            .map(|_| {
                let t = rng.random_range(10..16);
                let acoustic = Array2::from_shape_fn((t, 5), |_| rng.random_range(-1.0..1.0));
                let target = Array2::from_shape_fn((t, 4), |_| rng.random_range(-1.0..1.0));
                let layers = (0..2)
                    .map(|_| Array2::from_shape_fn((t, 3), |_| rng.random_range(-1.0..1.0)))
                    .collect();
                TrainSample {
                    acoustic,
                    visual: Some(LayeredFeatureSet::new(layers, "v").unwrap()),
                    target,
                }
            })
            .collect();
        let cfg = crate::neural::ModelConfig {
            input_dim: 5,
            output_dim: 4,
            conv_channels: 4,
            gru_hidden: 3,
            ..crate::neural::ModelConfig::multimodal_ft(3, 2)
        };
        let tcfg = TrainConfig {
            epochs: 2,
            seed: 17,
            ..TrainConfig::default()
        };
        let (model, _) = train(&samples, &cfg, &tcfg).unwrap();

        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&model, dir.path()).unwrap();
        let loaded = load_checkpoint(dir.path()).unwrap();

        assert_eq!(loaded.config, model.config);
        assert_eq!(loaded.seed, model.seed);
        let a = model.params.flat_values();
        let b = loaded.params.flat_values();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(loaded.norm_stats, model.norm_stats);
    }

    #[test]
    fn audio_only_round_trip() {
        let cfg = crate::neural::ModelConfig {
            input_dim: 4,
            output_dim: 4,
            conv_channels: 3,
            gru_hidden: 3,
            ..crate::neural::ModelConfig::audio_only()
        };
        let model = crate::neural::TrainedModel {
            config: cfg.clone(),
            params: build_model(&cfg, 23).unwrap(),
            norm_stats: None,
            seed: 23,
        };
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&model, dir.path()).unwrap();
        let loaded = load_checkpoint(dir.path()).unwrap();
        assert_eq!(loaded.params.flat_values(), model.params.flat_values());
        assert!(loaded.norm_stats.is_none());
    }

    #[test]
    fn missing_manifest_is_a_checkpoint_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_checkpoint(dir.path()),
            Err(NeuralError::Checkpoint(_))
        ));
    }
}
