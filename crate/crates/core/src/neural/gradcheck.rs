//! Central finite-difference verification of every analytic gradient.
//!
//! Random small models (T <= 8, dims <= 6) are built across all three
//! modes so every trainable layer kind is exercised: Conv1D, the trunk
//! GRU (through time), Linear, the softmax fusion logits, and the
//! fine-tuning GRU. Configurations whose conv pre-activations sit within
//! 1e-3 of the ReLU kink are resampled, since finite differences are
//! meaningless across the kink.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{backward, build_model, forward, Mode, ModelConfig, ModelParameters};
use super::train::sse_and_grad;
use crate::io::LayeredFeatureSet;

/// Perturbation used for the central differences.
pub const GRADCHECK_STEP: f64 = 1e-5;

/// Maximum relative error accepted per parameter.
pub const GRADCHECK_TOL: f64 = 1e-4;

/// Aggregated result for one layer kind.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub layer: String,
    pub configs: usize,
    pub params_checked: usize,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params_checked > 0 && self.max_rel_err < GRADCHECK_TOL
    }
}

fn layer_kind(tensor_name: &str) -> &'static str {
    if tensor_name.starts_with("conv.") {
        "Conv1D"
    } else if tensor_name.starts_with("gru.") {
        "GRU"
    } else if tensor_name.starts_with("output.") {
        "Linear"
    } else if tensor_name.starts_with("fusion.") {
        "fusion logits"
    } else {
        "FT-GRU"
    }
}

struct CheckCase {
    cfg: ModelConfig,
    params: ModelParameters,
    acoustic: Array2<f64>,
    visual: Option<LayeredFeatureSet>,
    target: Array2<f64>,
}

fn sample_case(seed: u64, mode: Mode) -> CheckCase {
    // Resample (deterministically) until the conv pre-activations are
    // clear of the ReLU kink.
    let mut attempt = 0u64;
    loop {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt.wrapping_mul(0x5851_F42D)));
        let visual_dim = rng.random_range(2..=5);
        let visual_layers = rng.random_range(2..=4);
        let cfg = ModelConfig {
            mode,
            input_dim: rng.random_range(2..=6),
            output_dim: rng.random_range(2..=6),
            conv_channels: rng.random_range(2..=6),
            gru_hidden: rng.random_range(2..=6),
            kernel: [1, 3, 5][rng.random_range(0..3)],
            visual_dim: if mode.uses_visual() { visual_dim } else { 0 },
            visual_layers: if mode.uses_visual() { visual_layers } else { 0 },
        };
        let t_len = rng.random_range(2..=8);
        let params = build_model(&cfg, rng.random::<u64>()).expect("valid config");
        let acoustic =
            Array2::from_shape_fn((t_len, cfg.input_dim), |_| rng.random_range(-1.5..1.5));
        let target =
            Array2::from_shape_fn((t_len, cfg.output_dim), |_| rng.random_range(-1.5..1.5));
        let visual = mode.uses_visual().then(|| {
            let layers = (0..cfg.visual_layers)
                .map(|_| {
                    Array2::from_shape_fn((t_len, cfg.visual_dim), |_| rng.random_range(-1.5..1.5))
                })
                .collect();
            LayeredFeatureSet::new(layers, "gradcheck").unwrap()
        });

        let (_, cache) = forward(&params, &cfg, &acoustic, visual.as_ref()).expect("forward");
        let min_preact = cache
            .conv_pre
            .iter()
            .map(|v| v.abs())
            .fold(f64::INFINITY, f64::min);
        if min_preact > 1e-3 {
            return CheckCase {
                cfg,
                params,
                acoustic,
                visual,
                target,
            };
        }
        attempt += 1;
    }
}

fn loss_of(case: &CheckCase, params: &ModelParameters) -> f64 {
    let (pred, _) =
        forward(params, &case.cfg, &case.acoustic, case.visual.as_ref()).expect("forward in loss");
    let valid = case.acoustic.nrows();
    let denom = (valid * case.cfg.output_dim) as f64;
    let (sse, _) = sse_and_grad(&pred, &case.target, valid, 1.0 / denom);
    sse / denom
}

/// Check `num_configs` random configurations against central finite
/// differences and aggregate the worst relative error per layer kind.
pub fn finite_difference_check(seed: u64, num_configs: usize) -> Vec<GradCheckReport> {
    let kinds = ["Conv1D", "GRU", "Linear", "fusion logits", "FT-GRU"];
    let mut reports: Vec<GradCheckReport> = kinds
        .iter()
        .map(|k| GradCheckReport {
            layer: k.to_string(),
            configs: 0,
            params_checked: 0,
            max_rel_err: 0.0,
        })
        .collect();

    for c in 0..num_configs {
        let mode = match c % 3 {
            0 => Mode::AudioOnly,
            1 => Mode::Multimodal,
            _ => Mode::MultimodalFt,
        };
        let case = sample_case(seed.wrapping_add(c as u64 * 7919), mode);

        let valid = case.acoustic.nrows();
        let denom = (valid * case.cfg.output_dim) as f64;
        let (pred, cache) = forward(
            &case.params,
            &case.cfg,
            &case.acoustic,
            case.visual.as_ref(),
        )
        .expect("forward");
        let (_, grad) = sse_and_grad(&pred, &case.target, valid, 1.0 / denom);
        let analytic = backward(&case.params, &case.cfg, &cache, &grad);
        let analytic_flat = analytic.flat_values();
        let layout = case.params.layout();

        let mut touched = [false; 5];
        let mut flat_index = 0;
        for (tensor, count) in &layout {
            let kind = layer_kind(tensor);
            let slot = kinds.iter().position(|k| *k == kind).unwrap();
            touched[slot] = true;
            for offset in 0..*count {
                let idx = flat_index + offset;
                let mut perturbed = case.params.clone();
                *perturbed.flat_values_mut()[idx] += GRADCHECK_STEP;
                let plus = loss_of(&case, &perturbed);
                let mut perturbed = case.params.clone();
                *perturbed.flat_values_mut()[idx] -= GRADCHECK_STEP;
                let minus = loss_of(&case, &perturbed);
                let numeric = (plus - minus) / (2.0 * GRADCHECK_STEP);
                let a = analytic_flat[idx];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                let report = &mut reports[slot];
                report.params_checked += 1;
                if rel > report.max_rel_err {
                    report.max_rel_err = rel;
                }
            }
            flat_index += count;
        }
        for (slot, was_touched) in touched.iter().enumerate() {
            if *was_touched {
                reports[slot].configs += 1;
            }
        }
    }
    reports
}
