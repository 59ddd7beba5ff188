//! Visual feature preparation: landmark centering, a built-in landmark
//! feature extractor, frame-rate matching against the 100 Hz acoustic
//! frames, per-layer z-score normalization with persisted statistics, and
//! the learnable weighted-sum fusion over multi-layer extractor outputs.
//!
//! External extractor outputs (CNN encoder, ViT, AV-HuBERT, ...) arrive
//! as ELF1 [`LayeredFeatureSet`] files; the landmark extractor here only
//! exists so the pipeline runs end to end without pretrained models.

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::align::FRAMES_PER_VIDEO_FRAME;
use crate::io::{
    FeatureKind, FeatureMatrix, IoError, LandmarkSequence, LayeredFeatureSet, LANDMARKS_PER_FRAME,
};

#[derive(Debug, Error)]
pub enum VisualError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// 20 landmark points relocated so their centroid is the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredLandmarks {
    pub points: [[f64; 2]; LANDMARKS_PER_FRAME],
}

/// Subtract the centroid from every point, making the frame invariant to
/// where the lips sit in the image.
pub fn center_landmarks(frame: &[[f64; 2]; LANDMARKS_PER_FRAME]) -> CenteredLandmarks {
    let mut cx = 0.0;
    let mut cy = 0.0;
    for p in frame {
        cx += p[0];
        cy += p[1];
    }
    cx /= LANDMARKS_PER_FRAME as f64;
    cy /= LANDMARKS_PER_FRAME as f64;
    let mut points = *frame;
    for p in points.iter_mut() {
        p[0] -= cx;
        p[1] -= cy;
    }
    CenteredLandmarks { points }
}

/// Built-in extractor: per frame, the centered landmarks flattened as
/// (x1, y1, ..., x20, y20). One layer, 40 dimensions, at video rate.
pub fn landmark_features(seq: &LandmarkSequence) -> Result<LayeredFeatureSet, VisualError> {
    if seq.is_empty() {
        return Err(VisualError::Shape("empty landmark sequence".into()));
    }
    let mut data = Array2::zeros((seq.len(), 2 * LANDMARKS_PER_FRAME));
    for (t, frame) in seq.frames.iter().enumerate() {
        let centered = center_landmarks(frame);
        for (p, point) in centered.points.iter().enumerate() {
            data[[t, 2 * p]] = point[0];
            data[[t, 2 * p + 1]] = point[1];
        }
    }
    Ok(LayeredFeatureSet::single(data, "landmarks")?)
}

/// Repeat each video-rate row 4x to the acoustic rate and pin the length
/// to `audio_frames`: short sequences repeat their last row, long ones
/// are truncated.
pub fn upsample_to_audio(
    vis: &FeatureMatrix,
    audio_frames: usize,
) -> Result<FeatureMatrix, VisualError> {
    if audio_frames == 0 {
        return Err(VisualError::Shape(
            "audio frame count must be positive".into(),
        ));
    }
    let out = upsample_matrix(&vis.data, audio_frames);
    FeatureMatrix::new(
        out,
        vis.frame_shift_s / FRAMES_PER_VIDEO_FRAME as f64,
        vis.kind,
    )
    .map_err(VisualError::Io)
}

/// [`upsample_to_audio`] applied to every layer of a set.
pub fn upsample_layers(
    set: &LayeredFeatureSet,
    audio_frames: usize,
) -> Result<LayeredFeatureSet, VisualError> {
    if audio_frames == 0 {
        return Err(VisualError::Shape(
            "audio frame count must be positive".into(),
        ));
    }
    let layers = set
        .layers
        .iter()
        .map(|layer| upsample_matrix(layer, audio_frames))
        .collect();
    Ok(LayeredFeatureSet::new(layers, set.extractor_name.clone())?)
}

fn upsample_matrix(data: &Array2<f64>, audio_frames: usize) -> Array2<f64> {
    let t_video = data.nrows();
    let mut out = Array2::zeros((audio_frames, data.ncols()));
    for t in 0..audio_frames {
        let src = (t / FRAMES_PER_VIDEO_FRAME).min(t_video - 1);
        out.row_mut(t).assign(&data.row(src));
    }
    out
}

/// Per-layer, per-dimension mean and standard deviation, fitted once on
/// the training corpus and reused at conversion time.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<Array1<f64>>,
    pub std: Vec<Array1<f64>>,
}

/// Standard deviations below this are treated as degenerate; the
/// normalized value becomes 0 for constant dimensions.
pub const STD_FLOOR: f64 = 1e-6;

impl NormStats {
    /// Fit statistics over a corpus of layered sets. All sets must agree
    /// in layer count and dimension; frames are pooled across sets.
    /// Two-pass mean/variance keeps the result independent of utterance
    /// order.
    pub fn fit(sets: &[&LayeredFeatureSet]) -> Result<Self, VisualError> {
        let first = sets
            .first()
            .ok_or_else(|| VisualError::Shape("empty corpus".into()))?;
        let (l, d) = (first.num_layers(), first.dim());
        for s in sets {
            if s.num_layers() != l || s.dim() != d {
                return Err(VisualError::Shape(format!(
                    "inconsistent corpus: {}x{} vs {l}x{d} (layers x dim)",
                    s.num_layers(),
                    s.dim()
                )));
            }
        }
        let total_frames: usize = sets.iter().map(|s| s.num_frames()).sum();
        let mut mean = vec![Array1::<f64>::zeros(d); l];
        let mut std = vec![Array1::<f64>::zeros(d); l];
        for layer in 0..l {
            for s in sets {
                mean[layer] += &s.layers[layer].sum_axis(ndarray::Axis(0));
            }
            mean[layer] /= total_frames as f64;
            for s in sets {
                for row in s.layers[layer].rows() {
                    for (k, &v) in row.iter().enumerate() {
                        let diff = v - mean[layer][k];
                        std[layer][k] += diff * diff;
                    }
                }
            }
            std[layer].mapv_inplace(|v| (v / total_frames as f64).sqrt());
        }
        Ok(Self { mean, std })
    }

    /// Apply the fitted statistics: (x - mean) / max(std, floor).
    pub fn apply(&self, set: &LayeredFeatureSet) -> Result<LayeredFeatureSet, VisualError> {
        if set.num_layers() != self.mean.len() || set.dim() != self.mean[0].len() {
            return Err(VisualError::Shape(format!(
                "set is {} layers x {} dims, stats are {} x {}",
                set.num_layers(),
                set.dim(),
                self.mean.len(),
                self.mean[0].len()
            )));
        }
        let layers = set
            .layers
            .iter()
            .enumerate()
            .map(|(l, layer)| {
                let mut out = layer.clone();
                for mut row in out.rows_mut() {
                    for (k, v) in row.iter_mut().enumerate() {
                        *v = (*v - self.mean[l][k]) / self.std[l][k].max(STD_FLOOR);
                    }
                }
                out
            })
            .collect();
        Ok(LayeredFeatureSet::new(layers, set.extractor_name.clone())?)
    }

    /// Pack as a layered set (per layer: row 0 = mean, row 1 = std) for
    /// ELF1 persistence.
    pub fn to_feature_set(&self) -> LayeredFeatureSet {
        let layers = self
            .mean
            .iter()
            .zip(&self.std)
            .map(|(m, s)| {
                let mut out = Array2::zeros((2, m.len()));
                out.row_mut(0).assign(m);
                out.row_mut(1).assign(s);
                out
            })
            .collect();
        LayeredFeatureSet::new(layers, "norm_stats").expect("stats layers are well-formed")
    }

    pub fn from_feature_set(set: &LayeredFeatureSet) -> Result<Self, VisualError> {
        if set.num_frames() != 2 {
            return Err(VisualError::Shape(format!(
                "stats file must have 2 rows per layer, found {}",
                set.num_frames()
            )));
        }
        let mean = set.layers.iter().map(|l| l.row(0).to_owned()).collect();
        let std = set.layers.iter().map(|l| l.row(1).to_owned()).collect();
        Ok(Self { mean, std })
    }
}

/// Fit on a single set and apply in one call.
pub fn normalize_layers(
    set: &LayeredFeatureSet,
) -> Result<(LayeredFeatureSet, NormStats), VisualError> {
    let stats = NormStats::fit(&[set])?;
    let normalized = stats.apply(set)?;
    Ok((normalized, stats))
}

/// Trainable fusion weights over extractor layers, parameterized as
/// softmax logits so the weights stay positive and sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    pub logits: Array1<f64>,
}

impl FusionWeights {
    /// Zero logits: uniform weights 1/L.
    pub fn uniform(num_layers: usize) -> Self {
        Self {
            logits: Array1::zeros(num_layers),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.logits.len()
    }

    /// softmax(logits), computed with the max subtracted for stability.
    pub fn weights(&self) -> Array1<f64> {
        let max = self
            .logits
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let mut w = self.logits.mapv(|v| (v - max).exp());
        let sum = w.sum();
        w /= sum;
        w
    }
}

/// Convex combination of the layers: out[t][d] = sum_l w_l layer_l[t][d].
pub fn weighted_sum(
    set: &LayeredFeatureSet,
    fusion: &FusionWeights,
) -> Result<FeatureMatrix, VisualError> {
    if set.num_layers() != fusion.num_layers() {
        return Err(VisualError::Shape(format!(
            "{} layers vs {} fusion weights",
            set.num_layers(),
            fusion.num_layers()
        )));
    }
    let w = fusion.weights();
    let mut out = Array2::zeros((set.num_frames(), set.dim()));
    for (layer, &weight) in set.layers.iter().zip(w.iter()) {
        out.scaled_add(weight, layer);
    }
    FeatureMatrix::new(out, 0.01, FeatureKind::Visual).map_err(VisualError::Io)
}

/// Gradient of a scalar loss with respect to the fusion logits, given the
/// loss gradient of the fused output. With s_l = <grad_out, layer_l> and
/// w = softmax(logits): d logit_i = w_i (s_i - sum_j w_j s_j).
pub fn weighted_sum_logit_grad(
    set: &LayeredFeatureSet,
    fusion: &FusionWeights,
    grad_out: &Array2<f64>,
) -> Array1<f64> {
    let w = fusion.weights();
    let s: Array1<f64> = set
        .layers
        .iter()
        .map(|layer| (layer * grad_out).sum())
        .collect();
    let mixed: f64 = w.iter().zip(s.iter()).map(|(a, b)| a * b).sum();
    Array1::from_shape_fn(w.len(), |i| w[i] * (s[i] - mixed))
}
