//! Alignment, feature extraction, and conversion modeling for
//! electrolaryngeal (EL) speech.
//!
//! EL speech is produced with an electrolarynx, is typically longer than
//! the speaker's natural (NL) speech, and differs strongly from it in
//! acoustics. Frame-based conversion models need frame-paired EL/NL
//! training data, so the crate centers on alignment:
//!
//! * [`align`] — dynamic time warping over pluggable frame costs, the
//!   three alignment pipelines (MCC cost, lip-landmark cost, and
//!   WSOLA length matching followed by MCC DTW), and warp application.
//! * [`wsola`] — waveform-similarity overlap-add time stretching, used to
//!   match NL speech length to EL speech while preserving pitch.
//! * [`dsp`] — log-mel spectrograms, mel-cepstral coefficients, and the
//!   mel-cepstral distortion frame metric.
//! * [`visual`] — lip-landmark features, per-layer normalization, and the
//!   learnable weighted-sum fusion of multi-layer visual features.
//! * [`neural`] — a small trainable conversion stack (Conv1D → GRU →
//!   Linear) with hand-derived gradients, optional visual branch, and
//!   Adam training.
//! * [`eval`] — utterance- and corpus-level mel-cepstral distortion.
//! * [`io`] — WAV, landmark CSV, and layered-feature file formats.

pub mod align;
pub mod dsp;
pub mod eval;
pub mod io;
pub mod neural;
pub mod visual;
pub mod wsola;

pub use align::{AlignmentPath, CostMatrix};
pub use io::{FeatureKind, FeatureMatrix, LandmarkSequence, LayeredFeatureSet, Waveform};
