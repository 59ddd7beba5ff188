//! Dynamic time warping over pluggable frame costs, the three EL/NL
//! alignment pipelines, and warp application.
//!
//! The pipelines:
//! * `align_dtw_mcc` — DTW over mel-cepstral distortion between the two
//!   waveforms' MCC frames.
//! * `align_dtw_lip` — DTW over centroid-relocated lip-landmark distance
//!   at video rate, expanded 4x to the acoustic frame rate.
//! * `align_dtw_wsola` — first stretch the natural speech to the EL
//!   utterance's length with WSOLA, then run the MCC alignment; length
//!   matching removes most of the warping the MCC cost would otherwise
//!   have to absorb.

use ndarray::Array2;
use thiserror::Error;

use crate::dsp::{
    frame_mcd, log_mel_spectrogram, mcc_from_logmel, DspError, MccConfig, MelConfig, StftConfig,
};
use crate::io::{FeatureMatrix, LandmarkSequence, Waveform, LANDMARKS_PER_FRAME};
use crate::visual::center_landmarks;
use crate::wsola::{stretch_to_length, WsolaConfig, WsolaError};

/// Acoustic frames per video frame: 100 Hz features against 25 FPS video.
pub const FRAMES_PER_VIDEO_FRAME: usize = 4;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("empty input: cost matrix must be at least 1x1")]
    EmptyInput,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("path index ({i}, {j}) out of bounds for {n}x{m}")]
    IndexOutOfBounds {
        i: usize,
        j: usize,
        n: usize,
        m: usize,
    },
    #[error("invalid cost at ({i}, {j}): {value}")]
    BadCost { i: usize, j: usize, value: f64 },
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Wsola(#[from] WsolaError),
}

/// N x M matrix of non-negative, finite frame-pair costs.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    values: Array2<f64>,
}

impl CostMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self, AlignError> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(AlignError::EmptyInput);
        }
        for ((i, j), &v) in values.indexed_iter() {
            if !v.is_finite() || v < 0.0 {
                return Err(AlignError::BadCost { i, j, value: v });
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn source_len(&self) -> usize {
        self.values.nrows()
    }

    pub fn target_len(&self) -> usize {
        self.values.ncols()
    }
}

/// A monotonic alignment between source frames 0..N and target frames
/// 0..M: starts at (0,0), ends at (N-1,M-1), steps are (1,0), (0,1), or
/// (1,1), and `total_cost` is the summed cost along the pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentPath {
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

impl AlignmentPath {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Mean cost per path step.
    pub fn mean_cost(&self) -> f64 {
        if self.pairs.is_empty() {
            0.0
        } else {
            self.total_cost / self.pairs.len() as f64
        }
    }
}

/// Standalone path validator: checks endpoints, step pattern, and (when a
/// cost matrix is supplied) that `total_cost` matches the summed entries
/// within 1e-9.
pub fn validate_path(
    path: &AlignmentPath,
    source_len: usize,
    target_len: usize,
    cost: Option<&CostMatrix>,
) -> Result<(), AlignError> {
    if path.pairs.is_empty() {
        return Err(AlignError::InvalidPath("empty path".into()));
    }
    if path.pairs[0] != (0, 0) {
        return Err(AlignError::InvalidPath(format!(
            "path starts at {:?}, expected (0, 0)",
            path.pairs[0]
        )));
    }
    let last = *path.pairs.last().unwrap();
    if last != (source_len - 1, target_len - 1) {
        return Err(AlignError::InvalidPath(format!(
            "path ends at {:?}, expected ({}, {})",
            last,
            source_len - 1,
            target_len - 1
        )));
    }
    for w in path.pairs.windows(2) {
        let (di, dj) = (w[1].0 as i64 - w[0].0 as i64, w[1].1 as i64 - w[0].1 as i64);
        if !matches!((di, dj), (1, 0) | (0, 1) | (1, 1)) {
            return Err(AlignError::InvalidPath(format!(
                "invalid step {:?} -> {:?}",
                w[0], w[1]
            )));
        }
    }
    if let Some(c) = cost {
        if c.source_len() != source_len || c.target_len() != target_len {
            return Err(AlignError::Shape(format!(
                "cost matrix is {}x{}, expected {}x{}",
                c.source_len(),
                c.target_len(),
                source_len,
                target_len
            )));
        }
        let sum: f64 = path.pairs.iter().map(|&(i, j)| c.values[[i, j]]).sum();
        if (sum - path.total_cost).abs() > 1e-9 {
            return Err(AlignError::InvalidPath(format!(
                "total_cost {} differs from path sum {}",
                path.total_cost, sum
            )));
        }
    }
    Ok(())
}

/// Minimum-cost monotonic path through the cost matrix under the
/// unweighted step set {(1,0), (0,1), (1,1)}. Backtracking ties prefer
/// (1,1), then (1,0), then (0,1).
pub fn dtw(cost: &CostMatrix) -> Result<AlignmentPath, AlignError> {
    dtw_banded(cost, None)
}

/// DTW with an optional Sakoe-Chiba band of half-width `band` around the
/// diagonal. The band is widened to |N - M| when narrower, so a valid
/// path always exists.
pub fn dtw_banded(cost: &CostMatrix, band: Option<usize>) -> Result<AlignmentPath, AlignError> {
    let (n, m) = (cost.source_len(), cost.target_len());
    let width = band.map(|w| w.max(n.abs_diff(m)));
    let in_band = |i: usize, j: usize| match width {
        Some(w) => i.abs_diff(j) <= w,
        None => true,
    };

    let c = &cost.values;
    let mut acc = Array2::from_elem((n, m), f64::INFINITY);
    for i in 0..n {
        for j in 0..m {
            if !in_band(i, j) {
                continue;
            }
            let best_prev = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => acc[[0, j - 1]],
                (_, 0) => acc[[i - 1, 0]],
                _ => acc[[i - 1, j - 1]]
                    .min(acc[[i - 1, j]])
                    .min(acc[[i, j - 1]]),
            };
            acc[[i, j]] = c[[i, j]] + best_prev;
        }
    }

    let total_cost = acc[[n - 1, m - 1]];
    let mut pairs = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n - 1, m - 1);
    pairs.push((i, j));
    while (i, j) != (0, 0) {
        let diag = if i > 0 && j > 0 {
            acc[[i - 1, j - 1]]
        } else {
            f64::INFINITY
        };
        let up = if i > 0 {
            acc[[i - 1, j]]
        } else {
            f64::INFINITY
        };
        let left = if j > 0 {
            acc[[i, j - 1]]
        } else {
            f64::INFINITY
        };
        let best = diag.min(up).min(left);
        if diag == best {
            i -= 1;
            j -= 1;
        } else if up == best {
            i -= 1;
        } else {
            j -= 1;
        }
        pairs.push((i, j));
    }
    pairs.reverse();
    Ok(AlignmentPath { pairs, total_cost })
}

/// Frame-pair MCD cost matrix between two MCC sequences.
pub fn cost_matrix_mcc(src: &FeatureMatrix, tgt: &FeatureMatrix) -> Result<CostMatrix, AlignError> {
    if src.dim() != tgt.dim() {
        return Err(AlignError::Shape(format!(
            "MCC dims differ: {} vs {}",
            src.dim(),
            tgt.dim()
        )));
    }
    let (n, m) = (src.num_frames(), tgt.num_frames());
    let mut values = Array2::zeros((n, m));
    for i in 0..n {
        let a = src.data.row(i);
        for j in 0..m {
            values[[i, j]] = frame_mcd(a, tgt.data.row(j))?;
        }
    }
    CostMatrix::new(values)
}

/// Landmark cost matrix: every frame's 20 points are relocated so their
/// centroid is the origin, then the cost is the Euclidean distance
/// between the two centered 40-dimensional point sets.
pub fn cost_matrix_landmarks(
    src: &LandmarkSequence,
    tgt: &LandmarkSequence,
) -> Result<CostMatrix, AlignError> {
    if src.is_empty() || tgt.is_empty() {
        return Err(AlignError::EmptyInput);
    }
    let center_all = |seq: &LandmarkSequence| -> Vec<[[f64; 2]; LANDMARKS_PER_FRAME]> {
        seq.frames
            .iter()
            .map(|f| center_landmarks(f).points)
            .collect()
    };
    let src_c = center_all(src);
    let tgt_c = center_all(tgt);
    let mut values = Array2::zeros((src_c.len(), tgt_c.len()));
    for (i, a) in src_c.iter().enumerate() {
        for (j, b) in tgt_c.iter().enumerate() {
            let mut sum_sq = 0.0;
            for p in 0..LANDMARKS_PER_FRAME {
                let dx = a[p][0] - b[p][0];
                let dy = a[p][1] - b[p][1];
                sum_sq += dx * dx + dy * dy;
            }
            values[[i, j]] = sum_sq.sqrt();
        }
    }
    CostMatrix::new(values)
}

/// Acoustic feature settings shared by the alignment pipelines.
#[derive(Debug, Clone, Default)]
pub struct FeatureConfig {
    pub stft: StftConfig,
    pub mel: MelConfig,
    pub mcc: MccConfig,
}

impl FeatureConfig {
    /// MCC features for one waveform.
    pub fn mcc_features(&self, w: &Waveform) -> Result<FeatureMatrix, DspError> {
        let lms = log_mel_spectrogram(w, &self.stft, &self.mel)?;
        mcc_from_logmel(&lms, &self.mcc)
    }
}

/// Baseline alignment: DTW over the MCD of the two utterances' MCC
/// frames.
pub fn align_dtw_mcc(
    el: &Waveform,
    nl: &Waveform,
    cfg: &FeatureConfig,
) -> Result<AlignmentPath, AlignError> {
    let src = cfg.mcc_features(el)?;
    let tgt = cfg.mcc_features(nl)?;
    dtw(&cost_matrix_mcc(&src, &tgt)?)
}

/// Lip-landmark alignment: DTW at video rate over centered landmark
/// distance, expanded to the acoustic frame rate.
pub fn align_dtw_lip(
    el_landmarks: &LandmarkSequence,
    nl_landmarks: &LandmarkSequence,
) -> Result<AlignmentPath, AlignError> {
    let video_path = dtw(&cost_matrix_landmarks(el_landmarks, nl_landmarks)?)?;
    Ok(expand_video_path(&video_path))
}

/// Proposed alignment: stretch the natural speech to the EL utterance's
/// length first, then run the MCC alignment against the stretched signal.
/// Returns the stretched waveform along with the path (path target
/// indices refer to the stretched signal's frames).
pub fn align_dtw_wsola(
    el: &Waveform,
    nl: &Waveform,
    cfg: &FeatureConfig,
    wsola_cfg: &WsolaConfig,
) -> Result<(Waveform, AlignmentPath), AlignError> {
    let stretched = stretch_to_length(nl, el.len(), wsola_cfg)?;
    let path = align_dtw_mcc(el, &stretched, cfg)?;
    Ok((stretched, path))
}

/// Append valid steps (diagonal first) advancing from the current last
/// pair to `target`, which must dominate it coordinate-wise.
fn connect_to(pairs: &mut Vec<(usize, usize)>, target: (usize, usize)) {
    let (mut i, mut j) = *pairs.last().expect("connect_to on non-empty path");
    while (i, j) != target {
        if i < target.0 && j < target.1 {
            i += 1;
            j += 1;
        } else if i < target.0 {
            i += 1;
        } else {
            j += 1;
        }
        pairs.push((i, j));
    }
}

/// Expand a video-rate path (25 FPS) to the acoustic rate (100 Hz): each
/// video pair (i, j) contributes the pairs (4i+k, 4j+k) for k = 0..4,
/// merged monotonically so the result is again a valid path. The video
/// path's cost is carried over unchanged.
pub fn expand_video_path(path: &AlignmentPath) -> AlignmentPath {
    let r = FRAMES_PER_VIDEO_FRAME;
    let mut pairs = vec![(0usize, 0usize)];
    for &(i, j) in &path.pairs {
        for k in 0..r {
            let last = *pairs.last().unwrap();
            let target = ((r * i + k).max(last.0), (r * j + k).max(last.1));
            connect_to(&mut pairs, target);
        }
    }
    AlignmentPath {
        pairs,
        total_cost: path.total_cost,
    }
}

/// Clamp a path into an n x m index range, keeping it a valid path that
/// ends at (n-1, m-1). Used when feature lengths are shorter than the
/// range the path was computed over.
pub fn clamp_path(path: &AlignmentPath, n: usize, m: usize) -> AlignmentPath {
    let mut pairs = vec![(0usize, 0usize)];
    for &(i, j) in &path.pairs {
        let last = *pairs.last().unwrap();
        let target = (i.min(n - 1).max(last.0), j.min(m - 1).max(last.1));
        connect_to(&mut pairs, target);
    }
    connect_to(&mut pairs, (n - 1, m - 1));
    AlignmentPath {
        pairs,
        total_cost: path.total_cost,
    }
}

/// Produce the frame-paired training target: one output row per distinct
/// source index, each the mean of every target row paired with it.
pub fn apply_warp(path: &AlignmentPath, tgt: &FeatureMatrix) -> Result<FeatureMatrix, AlignError> {
    if path.pairs.is_empty() {
        return Err(AlignError::EmptyInput);
    }
    let m = tgt.num_frames();
    let source_len = path.pairs.iter().map(|&(i, _)| i + 1).max().unwrap_or(0);
    for &(i, j) in &path.pairs {
        if j >= m {
            return Err(AlignError::IndexOutOfBounds {
                i,
                j,
                n: source_len,
                m,
            });
        }
    }
    let mut rows: Vec<(usize, Vec<usize>)> = Vec::new();
    for &(i, j) in &path.pairs {
        match rows.last_mut() {
            Some((src, targets)) if *src == i => targets.push(j),
            _ => rows.push((i, vec![j])),
        }
    }
    let d = tgt.dim();
    let mut out = Array2::zeros((rows.len(), d));
    for (row_idx, (_, targets)) in rows.iter().enumerate() {
        for &j in targets {
            for c in 0..d {
                out[[row_idx, c]] += tgt.data[[j, c]];
            }
        }
        let scale = 1.0 / targets.len() as f64;
        for c in 0..d {
            out[[row_idx, c]] *= scale;
        }
    }
    FeatureMatrix::new(out, tgt.frame_shift_s, tgt.kind)
        .map_err(|e| AlignError::Shape(e.to_string()))
}
