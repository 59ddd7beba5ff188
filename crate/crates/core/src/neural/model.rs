//! Model assembly: configuration, parameter container, initialization,
//! and the full forward/backward passes including the visual branch.

use ndarray::{Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{Conv1dParams, GruCache, GruParams, LinearParams};
use super::NeuralError;
use crate::io::LayeredFeatureSet;
use crate::visual::{weighted_sum_logit_grad, FusionWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    AudioOnly,
    Multimodal,
    MultimodalFt,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::AudioOnly => "audio_only",
            Mode::Multimodal => "multimodal",
            Mode::MultimodalFt => "multimodal_ft",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "audio_only" => Some(Mode::AudioOnly),
            "multimodal" => Some(Mode::Multimodal),
            "multimodal_ft" => Some(Mode::MultimodalFt),
            _ => None,
        }
    }

    pub fn uses_visual(&self) -> bool {
        !matches!(self, Mode::AudioOnly)
    }
}

/// Layer sizes for the conversion stack. The defaults give
/// Conv1D(80 -> 64, k=5, ReLU) -> GRU(64 -> 64) -> Linear(64 -> 80);
/// all sizes can be overridden.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub mode: Mode,
    pub input_dim: usize,
    pub output_dim: usize,
    pub conv_channels: usize,
    pub gru_hidden: usize,
    pub kernel: usize,
    pub visual_dim: usize,
    pub visual_layers: usize,
}

impl ModelConfig {
    pub fn audio_only() -> Self {
        Self {
            mode: Mode::AudioOnly,
            input_dim: 80,
            output_dim: 80,
            conv_channels: 64,
            gru_hidden: 64,
            kernel: 5,
            visual_dim: 0,
            visual_layers: 0,
        }
    }

    pub fn multimodal(visual_dim: usize, visual_layers: usize) -> Self {
        Self {
            mode: Mode::Multimodal,
            visual_dim,
            visual_layers,
            ..Self::audio_only()
        }
    }

    pub fn multimodal_ft(visual_dim: usize, visual_layers: usize) -> Self {
        Self {
            mode: Mode::MultimodalFt,
            visual_dim,
            visual_layers,
            ..Self::audio_only()
        }
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.input_dim == 0
            || self.output_dim == 0
            || self.conv_channels == 0
            || self.gru_hidden == 0
        {
            return Err(NeuralError::BadDim("layer dims must be positive".into()));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(NeuralError::BadDim(format!(
                "kernel must be odd and positive, got {}",
                self.kernel
            )));
        }
        if self.mode.uses_visual() && (self.visual_dim == 0 || self.visual_layers == 0) {
            return Err(NeuralError::BadDim(format!(
                "{} mode needs visual_dim and visual_layers > 0",
                self.mode.as_str()
            )));
        }
        Ok(())
    }

    /// Width of the frame vectors entering the convolution.
    pub fn trunk_input_dim(&self) -> usize {
        if self.mode.uses_visual() {
            self.input_dim + self.visual_dim
        } else {
            self.input_dim
        }
    }
}

/// All trainable tensors. The same struct doubles as the gradient
/// container (see [`ModelParameters::zeros_like`]).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub conv: Conv1dParams,
    pub gru: GruParams,
    pub output: LinearParams,
    pub fusion_logits: Option<Array1<f64>>,
    pub ft_gru: Option<GruParams>,
}

impl ModelParameters {
    pub fn zeros_like(&self) -> ModelParameters {
        ModelParameters {
            conv: Conv1dParams::zeros(self.conv.out_dim(), self.conv.kernel(), self.conv.in_dim()),
            gru: GruParams::zeros(self.gru.in_dim(), self.gru.hidden_dim()),
            output: LinearParams::zeros(self.output.out_dim(), self.output.in_dim()),
            fusion_logits: self.fusion_logits.as_ref().map(|l| Array1::zeros(l.len())),
            ft_gru: self
                .ft_gru
                .as_ref()
                .map(|g| GruParams::zeros(g.in_dim(), g.hidden_dim())),
        }
    }

    /// Tensor names and sizes, in the fixed flattening order used by
    /// [`Self::flat_values`] / [`Self::flat_values_mut`].
    pub fn layout(&self) -> Vec<(String, usize)> {
        let mut out = vec![
            ("conv.weight".to_string(), self.conv.weight.len()),
            ("conv.bias".to_string(), self.conv.bias.len()),
        ];
        for (name, w, u, b) in gru_tensors(&self.gru) {
            out.push((format!("gru.{name}_w"), w.len()));
            out.push((format!("gru.{name}_u"), u.len()));
            out.push((format!("gru.{name}_b"), b.len()));
        }
        out.push(("output.weight".to_string(), self.output.weight.len()));
        out.push(("output.bias".to_string(), self.output.bias.len()));
        if let Some(logits) = &self.fusion_logits {
            out.push(("fusion.logits".to_string(), logits.len()));
        }
        if let Some(ft) = &self.ft_gru {
            for (name, w, u, b) in gru_tensors(ft) {
                out.push((format!("ft_gru.{name}_w"), w.len()));
                out.push((format!("ft_gru.{name}_u"), u.len()));
                out.push((format!("ft_gru.{name}_b"), b.len()));
            }
        }
        out
    }

    /// Every parameter scalar in layout order.
    pub fn flat_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(self.conv.weight.iter());
        out.extend(self.conv.bias.iter());
        for (_, w, u, b) in gru_tensors(&self.gru) {
            out.extend(w.iter());
            out.extend(u.iter());
            out.extend(b.iter());
        }
        out.extend(self.output.weight.iter());
        out.extend(self.output.bias.iter());
        if let Some(logits) = &self.fusion_logits {
            out.extend(logits.iter());
        }
        if let Some(ft) = &self.ft_gru {
            for (_, w, u, b) in gru_tensors(ft) {
                out.extend(w.iter());
                out.extend(u.iter());
                out.extend(b.iter());
            }
        }
        out
    }

    /// Mutable references to every parameter scalar in layout order.
    pub fn flat_values_mut(&mut self) -> Vec<&mut f64> {
        let mut out: Vec<&mut f64> = Vec::new();
        out.extend(self.conv.weight.iter_mut());
        out.extend(self.conv.bias.iter_mut());
        for (_, w, u, b) in gru_tensors_mut(&mut self.gru) {
            out.extend(w.iter_mut());
            out.extend(u.iter_mut());
            out.extend(b.iter_mut());
        }
        out.extend(self.output.weight.iter_mut());
        out.extend(self.output.bias.iter_mut());
        if let Some(logits) = &mut self.fusion_logits {
            out.extend(logits.iter_mut());
        }
        if let Some(ft) = &mut self.ft_gru {
            for (_, w, u, b) in gru_tensors_mut(ft) {
                out.extend(w.iter_mut());
                out.extend(u.iter_mut());
                out.extend(b.iter_mut());
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.layout().iter().map(|(_, n)| n).sum()
    }
}

type GruTensorRefs<'a> = (
    &'static str,
    &'a Array2<f64>,
    &'a Array2<f64>,
    &'a Array1<f64>,
);
type GruTensorMuts<'a> = (
    &'static str,
    &'a mut Array2<f64>,
    &'a mut Array2<f64>,
    &'a mut Array1<f64>,
);

fn gru_tensors(g: &GruParams) -> [GruTensorRefs<'_>; 3] {
    [
        ("reset", &g.w_reset, &g.u_reset, &g.b_reset),
        ("update", &g.w_update, &g.u_update, &g.b_update),
        ("cand", &g.w_cand, &g.u_cand, &g.b_cand),
    ]
}

fn gru_tensors_mut(g: &mut GruParams) -> [GruTensorMuts<'_>; 3] {
    [
        ("reset", &mut g.w_reset, &mut g.u_reset, &mut g.b_reset),
        ("update", &mut g.w_update, &mut g.u_update, &mut g.b_update),
        ("cand", &mut g.w_cand, &mut g.u_cand, &mut g.b_cand),
    ]
}

/// Build a model with uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weight
/// init, zero biases, and zero fusion logits (uniform layer weights).
/// Deterministic given the seed.
pub fn build_model(cfg: &ModelConfig, seed: u64) -> Result<ModelParameters, NeuralError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trunk_in = cfg.trunk_input_dim();

    let mut conv = Conv1dParams::zeros(cfg.conv_channels, cfg.kernel, trunk_in);
    init_uniform(
        &mut rng,
        conv.weight.as_slice_mut().unwrap(),
        cfg.kernel * trunk_in,
    );

    let gru = init_gru(&mut rng, cfg.conv_channels, cfg.gru_hidden);

    let mut output = LinearParams::zeros(cfg.output_dim, cfg.gru_hidden);
    init_uniform(
        &mut rng,
        output.weight.as_slice_mut().unwrap(),
        cfg.gru_hidden,
    );

    let fusion_logits = cfg
        .mode
        .uses_visual()
        .then(|| Array1::zeros(cfg.visual_layers));
    let ft_gru = (cfg.mode == Mode::MultimodalFt)
        .then(|| init_gru(&mut rng, cfg.visual_dim, cfg.visual_dim));

    Ok(ModelParameters {
        conv,
        gru,
        output,
        fusion_logits,
        ft_gru,
    })
}

fn init_uniform(rng: &mut ChaCha8Rng, values: &mut [f64], fan_in: usize) {
    let scale = 1.0 / (fan_in as f64).sqrt();
    for v in values {
        *v = rng.random_range(-scale..scale);
    }
}

fn init_gru(rng: &mut ChaCha8Rng, in_dim: usize, hidden: usize) -> GruParams {
    let mut gru = GruParams::zeros(in_dim, hidden);
    for (_, w, u, _) in gru_tensors_mut(&mut gru) {
        init_uniform(rng, w.as_slice_mut().unwrap(), in_dim);
        init_uniform(rng, u.as_slice_mut().unwrap(), hidden);
    }
    gru
}

/// Intermediates kept by [`forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub trunk_input: Array2<f64>,
    pub conv_pre: Array2<f64>,
    pub gru: GruCache,
    pub visual: Option<VisualCache>,
    /// Rows at and beyond this index are batch padding.
    pub valid: usize,
}

#[derive(Debug, Clone)]
pub struct VisualCache {
    pub set: LayeredFeatureSet,
    pub fused: Array2<f64>,
    pub ft: Option<GruCache>,
}

/// Run the stack. `visual` must be present exactly in the multimodal
/// modes, already normalized, and already upsampled to the acoustic
/// frame count.
pub fn forward(
    params: &ModelParameters,
    cfg: &ModelConfig,
    acoustic: &Array2<f64>,
    visual: Option<&LayeredFeatureSet>,
) -> Result<(Array2<f64>, ForwardCache), NeuralError> {
    forward_masked(params, cfg, acoustic, visual, acoustic.nrows())
}

/// [`forward`] over a zero-padded batch row block: frame rows at and
/// beyond `valid` are forced to zero before the trunk, so padding cannot
/// leak into valid frames through the convolution window, and gradients
/// for padded frames vanish identically.
pub fn forward_masked(
    params: &ModelParameters,
    cfg: &ModelConfig,
    acoustic: &Array2<f64>,
    visual: Option<&LayeredFeatureSet>,
    valid: usize,
) -> Result<(Array2<f64>, ForwardCache), NeuralError> {
    let t_len = acoustic.nrows();
    if valid == 0 || valid > t_len {
        return Err(NeuralError::Shape(format!(
            "valid length {valid} out of range for {t_len} rows"
        )));
    }
    if t_len == 0 {
        return Err(NeuralError::Shape("empty acoustic input".into()));
    }
    if acoustic.ncols() != cfg.input_dim {
        return Err(NeuralError::Shape(format!(
            "acoustic dim {} != input_dim {}",
            acoustic.ncols(),
            cfg.input_dim
        )));
    }
    let visual_cache = match (cfg.mode.uses_visual(), visual) {
        (false, None) => None,
        (false, Some(_)) => {
            return Err(NeuralError::ModeMismatch(
                "visual features supplied to an audio-only model".into(),
            ));
        }
        (true, None) => {
            return Err(NeuralError::ModeMismatch(format!(
                "{} mode requires visual features",
                cfg.mode.as_str()
            )));
        }
        (true, Some(set)) => {
            if set.dim() != cfg.visual_dim || set.num_layers() != cfg.visual_layers {
                return Err(NeuralError::Shape(format!(
                    "visual set is {} layers x {} dims, model expects {} x {}",
                    set.num_layers(),
                    set.dim(),
                    cfg.visual_layers,
                    cfg.visual_dim
                )));
            }
            if set.num_frames() != t_len {
                return Err(NeuralError::Shape(format!(
                    "visual frames {} != acoustic frames {t_len}",
                    set.num_frames()
                )));
            }
            let logits = params
                .fusion_logits
                .as_ref()
                .expect("fusion logits in multimodal mode");
            let fusion = FusionWeights {
                logits: logits.clone(),
            };
            let fused = crate::visual::weighted_sum(set, &fusion)?.data;
            let ft = params.ft_gru.as_ref().map(|g| g.forward(&fused));
            Some(VisualCache {
                set: set.clone(),
                fused,
                ft,
            })
        }
    };

    let mut trunk_input = match &visual_cache {
        None => acoustic.clone(),
        Some(vc) => {
            let vis_feat = vc.ft.as_ref().map(|c| &c.h).unwrap_or(&vc.fused);
            ndarray::concatenate(Axis(1), &[acoustic.view(), vis_feat.view()])
                .expect("frame counts match")
        }
    };
    if valid < t_len {
        trunk_input.slice_mut(ndarray::s![valid.., ..]).fill(0.0);
    }

    let conv_pre = params.conv.forward(&trunk_input);
    let conv_out = conv_pre.mapv(|v| v.max(0.0));
    let gru_cache = params.gru.forward(&conv_out);
    let prediction = params.output.forward(&gru_cache.h);

    Ok((
        prediction,
        ForwardCache {
            trunk_input,
            conv_pre,
            gru: gru_cache,
            visual: visual_cache,
            valid,
        },
    ))
}

/// Analytic gradients for every trainable tensor given the loss gradient
/// of the prediction.
pub fn backward(
    params: &ModelParameters,
    cfg: &ModelConfig,
    cache: &ForwardCache,
    grad_out: &Array2<f64>,
) -> ModelParameters {
    let mut grads = params.zeros_like();

    let grad_gru_h = params
        .output
        .backward(&cache.gru.h, grad_out, &mut grads.output);
    let grad_conv_out = params.gru.backward(&cache.gru, &grad_gru_h, &mut grads.gru);
    let grad_conv_pre = &grad_conv_out * &cache.conv_pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let grad_trunk = params
        .conv
        .backward(&cache.trunk_input, &grad_conv_pre, &mut grads.conv);

    if let Some(vc) = &cache.visual {
        let mut grad_vis_feat = grad_trunk
            .slice(ndarray::s![.., cfg.input_dim..])
            .to_owned();
        // Padded trunk rows were masked to zero, so nothing flows back
        // into the visual branch through them.
        if cache.valid < grad_vis_feat.nrows() {
            grad_vis_feat
                .slice_mut(ndarray::s![cache.valid.., ..])
                .fill(0.0);
        }
        let grad_fused = match (&vc.ft, params.ft_gru.as_ref()) {
            (Some(ft_cache), Some(ft_params)) => {
                let ft_grads = grads.ft_gru.as_mut().expect("ft grads allocated");
                ft_params.backward(ft_cache, &grad_vis_feat, ft_grads)
            }
            _ => grad_vis_feat,
        };
        let logits = params.fusion_logits.as_ref().expect("fusion logits");
        let fusion = FusionWeights {
            logits: logits.clone(),
        };
        let grad_logits = weighted_sum_logit_grad(&vc.set, &fusion, &grad_fused);
        *grads
            .fusion_logits
            .as_mut()
            .expect("fusion grads allocated") = grad_logits;
    }

    grads
}

/// Reshape helper for checkpoints: conv weight as (out, kernel*in).
pub fn conv_weight_to_matrix(conv: &Conv1dParams) -> Array2<f64> {
    let (o, k, i) = conv.weight.dim();
    conv.weight
        .to_owned()
        .into_shape_with_order((o, k * i))
        .expect("contiguous conv weight")
}

pub fn conv_weight_from_matrix(m: &Array2<f64>, kernel: usize) -> Result<Array3<f64>, NeuralError> {
    let (o, ki) = m.dim();
    if kernel == 0 || ki % kernel != 0 {
        return Err(NeuralError::Checkpoint(format!(
            "conv weight width {ki} not divisible by kernel {kernel}"
        )));
    }
    m.to_owned()
        .into_shape_with_order((o, kernel, ki / kernel))
        .map_err(|e| NeuralError::Checkpoint(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::LayeredFeatureSet;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_set(rng: &mut ChaCha8Rng, l: usize, t: usize, d: usize) -> LayeredFeatureSet {
        let layers = (0..l)
            .map(|_| Array2::from_shape_fn((t, d), |_| rng.random_range(-1.0..1.0)))
            .collect();
        LayeredFeatureSet::new(layers, "v").unwrap()
    }

    #[test]
    fn build_model_dims() {
        let audio = build_model(&ModelConfig::audio_only(), 0).unwrap();
        assert_eq!(audio.conv.in_dim(), 80);
        assert_eq!(audio.output.out_dim(), 80);
        assert!(audio.fusion_logits.is_none());
        assert!(audio.ft_gru.is_none());

        let mm = build_model(&ModelConfig::multimodal(40, 2), 0).unwrap();
        assert_eq!(mm.conv.in_dim(), 120);
        assert_eq!(mm.fusion_logits.as_ref().unwrap().len(), 2);
        assert!(mm.ft_gru.is_none());

        let ft = build_model(&ModelConfig::multimodal_ft(40, 1), 0).unwrap();
        let ft_gru = ft.ft_gru.as_ref().unwrap();
        assert_eq!(ft_gru.in_dim(), 40);
        assert_eq!(ft_gru.hidden_dim(), 40);
    }

    #[test]
    fn build_model_rejects_zero_visual_dim() {
        assert!(matches!(
            build_model(&ModelConfig::multimodal(0, 1), 0),
            Err(NeuralError::BadDim(_))
        ));
        assert!(matches!(
            build_model(
                &ModelConfig {
                    kernel: 4,
                    ..ModelConfig::audio_only()
                },
                0
            ),
            Err(NeuralError::BadDim(_))
        ));
    }

    #[test]
    fn build_model_is_deterministic() {
        let a = build_model(&ModelConfig::multimodal_ft(8, 3), 42).unwrap();
        let b = build_model(&ModelConfig::multimodal_ft(8, 3), 42).unwrap();
        assert_eq!(a.flat_values(), b.flat_values());
        let c = build_model(&ModelConfig::multimodal_ft(8, 3), 43).unwrap();
        assert_ne!(a.flat_values(), c.flat_values());
    }

    #[test]
    fn forward_shapes_and_mode_checks() {
        let cfg = ModelConfig {
            input_dim: 6,
            output_dim: 5,
            conv_channels: 4,
            gru_hidden: 3,
            ..ModelConfig::audio_only()
        };
        let params = build_model(&cfg, 1).unwrap();
        let x = Array2::zeros((7, 6));
        let (pred, _) = forward(&params, &cfg, &x, None).unwrap();
        assert_eq!(pred.dim(), (7, 5));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let vis = small_set(&mut rng, 1, 7, 3);
        assert!(matches!(
            forward(&params, &cfg, &x, Some(&vis)),
            Err(NeuralError::ModeMismatch(_))
        ));

        let mm_cfg = ModelConfig {
            input_dim: 6,
            output_dim: 5,
            conv_channels: 4,
            gru_hidden: 3,
            ..ModelConfig::multimodal(3, 1)
        };
        let mm = build_model(&mm_cfg, 1).unwrap();
        assert!(matches!(
            forward(&mm, &mm_cfg, &x, None),
            Err(NeuralError::ModeMismatch(_))
        ));
        let (pred, _) = forward(&mm, &mm_cfg, &x, Some(&vis)).unwrap();
        assert_eq!(pred.dim(), (7, 5));
    }

    #[test]
    fn zero_model_maps_zero_to_zero() {
        let cfg = ModelConfig {
            input_dim: 4,
            output_dim: 3,
            conv_channels: 3,
            gru_hidden: 2,
            ..ModelConfig::audio_only()
        };
        let params = build_model(&cfg, 5).unwrap().zeros_like();
        let x = Array2::zeros((6, 4));
        let (pred, _) = forward(&params, &cfg, &x, None).unwrap();
        assert!(pred.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn multimodal_with_zeroed_visual_path_matches_audio_only() {
        // Copy the audio model's trunk into the acoustic slice of the
        // multimodal conv weights, zero the visual slice, and the
        // predictions coincide.
        let a_cfg = ModelConfig {
            input_dim: 5,
            output_dim: 4,
            conv_channels: 4,
            gru_hidden: 3,
            ..ModelConfig::audio_only()
        };
        let audio = build_model(&a_cfg, 7).unwrap();

        let m_cfg = ModelConfig {
            input_dim: 5,
            output_dim: 4,
            conv_channels: 4,
            gru_hidden: 3,
            ..ModelConfig::multimodal(2, 1)
        };
        let mut mm = build_model(&m_cfg, 8).unwrap();
        for o in 0..4 {
            for tap in 0..m_cfg.kernel {
                for i in 0..7 {
                    mm.conv.weight[[o, tap, i]] = if i < 5 {
                        audio.conv.weight[[o, tap, i]]
                    } else {
                        0.0
                    };
                }
            }
        }
        mm.conv.bias = audio.conv.bias.clone();
        mm.gru = audio.gru.clone();
        mm.output = audio.output.clone();

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Array2::from_shape_fn((6, 5), |_| rng.random_range(-1.0..1.0));
        let vis = small_set(&mut rng, 1, 6, 2);
        let (pa, _) = forward(&audio, &a_cfg, &x, None).unwrap();
        let (pm, _) = forward(&mm, &m_cfg, &x, Some(&vis)).unwrap();
        for (a, b) in pa.iter().zip(pm.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = ModelConfig {
            input_dim: 4,
            output_dim: 4,
            conv_channels: 3,
            gru_hidden: 3,
            ..ModelConfig::audio_only()
        };
        let params = build_model(&cfg, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array2::from_shape_fn((5, 4), |_| rng.random_range(-1.0..1.0));
        let (a, _) = forward(&params, &cfg, &x, None).unwrap();
        let (b, _) = forward(&params, &cfg, &x, None).unwrap();
        for (x1, x2) in a.iter().zip(b.iter()) {
            assert_eq!(x1.to_bits(), x2.to_bits());
        }
    }
}
