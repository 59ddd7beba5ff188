//! Deterministic acoustic feature extraction: framing, Hann-windowed STFT
//! magnitudes, 80-bin log-mel spectrograms, mel-cepstral coefficients
//! (orthonormal DCT-II of the log-mel frame), and the per-frame
//! mel-cepstral distortion used as the alignment cost and the evaluation
//! metric.

use ndarray::{Array1, Array2, ArrayView1};
use rustfft::{num_complex::Complex, FftPlanner};
use thiserror::Error;

use crate::io::{FeatureKind, FeatureMatrix, Waveform, LMS_DIM};

/// dB scaling constant for mel-cepstral distortion: 10 / ln 10.
pub const MCD_DB_SCALE: f64 = 10.0 / std::f64::consts::LN_10;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid config: {0}")]
    Config(String),
}

/// Short-time analysis settings: 512-point window, 160-sample hop
/// (10 ms at 16 kHz) by default.
#[derive(Debug, Clone)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
    pub fft_size: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_len: 512,
            hop: 160,
            fft_size: 512,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<(), DspError> {
        if self.hop == 0 || self.window_len == 0 || self.fft_size == 0 {
            return Err(DspError::Config(
                "window/hop/fft sizes must be positive".into(),
            ));
        }
        if !(self.hop <= self.window_len && self.window_len <= self.fft_size) {
            return Err(DspError::Config(format!(
                "need hop <= window_len <= fft_size, got {} / {} / {}",
                self.hop, self.window_len, self.fft_size
            )));
        }
        Ok(())
    }

    /// Seconds between consecutive frames.
    pub fn frame_shift_s(&self, sample_rate: u32) -> f64 {
        self.hop as f64 / sample_rate as f64
    }
}

/// Mel filterbank settings: 80 triangular filters over 0..8000 Hz.
#[derive(Debug, Clone)]
pub struct MelConfig {
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            n_mels: LMS_DIM,
            f_min: 0.0,
            f_max: 8000.0,
            log_floor: 1e-10,
        }
    }
}

impl MelConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<(), DspError> {
        let nyquist = sample_rate as f64 / 2.0;
        if !(0.0 <= self.f_min && self.f_min < self.f_max && self.f_max <= nyquist) {
            return Err(DspError::Config(format!(
                "need 0 <= f_min < f_max <= {nyquist}, got {} / {}",
                self.f_min, self.f_max
            )));
        }
        if self.n_mels < 2 {
            return Err(DspError::Config("n_mels must be at least 2".into()));
        }
        if !self.log_floor.is_finite() || self.log_floor <= 0.0 {
            return Err(DspError::Config("log_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Number of cepstral coefficients kept, including c0.
#[derive(Debug, Clone)]
pub struct MccConfig {
    pub order: usize,
}

impl Default for MccConfig {
    fn default() -> Self {
        Self { order: 25 }
    }
}

/// Periodic Hann window, which sums to a constant at 50% overlap.
pub fn hann_window(len: usize) -> Vec<f64> {
    let n = len as f64;
    (0..len)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n).cos()))
        .collect()
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Slice a waveform into analysis frames of `window_len` samples starting
/// every `hop` samples. Inputs shorter than one window yield a single
/// zero-padded frame.
pub fn frame_signal(w: &Waveform, cfg: &StftConfig) -> Array2<f64> {
    let len = w.len();
    let t = if len >= cfg.window_len {
        1 + (len - cfg.window_len) / cfg.hop
    } else {
        1
    };
    let mut frames = Array2::zeros((t, cfg.window_len));
    for (ti, mut row) in frames.rows_mut().into_iter().enumerate() {
        let start = ti * cfg.hop;
        let n = cfg.window_len.min(len.saturating_sub(start));
        for i in 0..n {
            row[i] = w.samples[start + i];
        }
    }
    frames
}

/// Triangular mel filterbank with centers equally spaced on the mel
/// scale, as an n_mels x (fft_size/2 + 1) weight matrix.
fn mel_filterbank(cfg: &MelConfig, fft_size: usize, sample_rate: u32) -> Array2<f64> {
    let n_bins = fft_size / 2 + 1;
    let mel_min = hz_to_mel(cfg.f_min);
    let mel_max = hz_to_mel(cfg.f_max);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mel_min + (mel_max - mel_min) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let mut weights = Array2::zeros((cfg.n_mels, n_bins));
    for m in 0..cfg.n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * sample_rate as f64 / fft_size as f64;
            let rising = if center > left {
                (f - left) / (center - left)
            } else {
                0.0
            };
            let falling = if right > center {
                (right - f) / (right - center)
            } else {
                0.0
            };
            weights[[m, k]] = rising.min(falling).max(0.0);
        }
    }
    weights
}

/// Hz center frequency of each mel filter.
pub fn mel_filter_centers(cfg: &MelConfig) -> Vec<f64> {
    let mel_min = hz_to_mel(cfg.f_min);
    let mel_max = hz_to_mel(cfg.f_max);
    (1..=cfg.n_mels)
        .map(|i| mel_to_hz(mel_min + (mel_max - mel_min) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

/// Log-mel spectrogram: per frame, Hann-windowed FFT magnitude through
/// the triangular filterbank, then natural log with a floor.
pub fn log_mel_spectrogram(
    w: &Waveform,
    scfg: &StftConfig,
    mcfg: &MelConfig,
) -> Result<FeatureMatrix, DspError> {
    scfg.validate()?;
    mcfg.validate(w.sample_rate)?;
    let frames = frame_signal(w, scfg);
    let window = hann_window(scfg.window_len);
    let filters = mel_filterbank(mcfg, scfg.fft_size, w.sample_rate);
    let n_bins = scfg.fft_size / 2 + 1;

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(scfg.fft_size);
    let mut out = Array2::zeros((frames.nrows(), mcfg.n_mels));
    let mut buf = vec![Complex::new(0.0f64, 0.0); scfg.fft_size];
    let mut magnitude = Array1::zeros(n_bins);
    for (ti, frame) in frames.rows().into_iter().enumerate() {
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = if i < scfg.window_len {
                Complex::new(frame[i] * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for k in 0..n_bins {
            magnitude[k] = buf[k].norm();
        }
        let energies = filters.dot(&magnitude);
        for (m, &e) in energies.iter().enumerate() {
            out[[ti, m]] = e.max(mcfg.log_floor).ln();
        }
    }
    let kind = if mcfg.n_mels == LMS_DIM {
        FeatureKind::Lms
    } else {
        FeatureKind::Other
    };
    FeatureMatrix::new(out, scfg.frame_shift_s(w.sample_rate), kind)
        .map_err(|e| DspError::Shape(e.to_string()))
}

/// Mel-cepstral coefficients: orthonormal DCT-II of each 80-value log-mel
/// frame, truncated to `order` coefficients.
pub fn mcc_from_logmel(lms: &FeatureMatrix, cfg: &MccConfig) -> Result<FeatureMatrix, DspError> {
    if lms.kind != FeatureKind::Lms {
        return Err(DspError::Shape(format!(
            "expected LMS input, got {:?}",
            lms.kind
        )));
    }
    let d = lms.dim();
    if d != LMS_DIM {
        return Err(DspError::Shape(format!(
            "expected {LMS_DIM} mel bins, got {d}"
        )));
    }
    if !(2 <= cfg.order && cfg.order <= d) {
        return Err(DspError::Config(format!(
            "order must be in 2..={d}, got {}",
            cfg.order
        )));
    }
    let basis = dct_ii_basis(d, cfg.order);
    let out = lms.data.dot(&basis.t());
    FeatureMatrix::new(out, lms.frame_shift_s, FeatureKind::Mcc)
        .map_err(|e| DspError::Shape(e.to_string()))
}

/// First `rows` rows of the orthonormal DCT-II matrix of size n.
fn dct_ii_basis(n: usize, rows: usize) -> Array2<f64> {
    let mut basis = Array2::zeros((rows, n));
    let norm0 = (1.0 / n as f64).sqrt();
    let norm = (2.0 / n as f64).sqrt();
    for k in 0..rows {
        let s = if k == 0 { norm0 } else { norm };
        for i in 0..n {
            basis[[k, i]] =
                s * (std::f64::consts::PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos();
        }
    }
    basis
}

/// Mel-cepstral distortion between two MCC frames in dB:
/// (10/ln 10) * sqrt(2 * sum_{d>=1} (a_d - b_d)^2). c0 is excluded.
pub fn frame_mcd(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64, DspError> {
    if a.len() != b.len() {
        return Err(DspError::Shape(format!(
            "frame dims differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let sum_sq: f64 = a
        .iter()
        .zip(b.iter())
        .skip(1)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(MCD_DB_SCALE * (2.0 * sum_sq).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::PIPELINE_SAMPLE_RATE;
    use approx::assert_abs_diff_eq;
    use ndarray::Array1;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sine(freq: f64, len: usize) -> Waveform {
        let sr = PIPELINE_SAMPLE_RATE as f64;
        let samples = (0..len)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / sr).sin())
            .collect();
        Waveform::new(samples, PIPELINE_SAMPLE_RATE)
    }

    #[test]
    fn framing_arithmetic() {
        let cfg = StftConfig::default();
        let w = Waveform::new(vec![0.0; 16000], PIPELINE_SAMPLE_RATE);
        assert_eq!(frame_signal(&w, &cfg).nrows(), 97);

        let w1 = Waveform::new(vec![1.0; 512], PIPELINE_SAMPLE_RATE);
        assert_eq!(frame_signal(&w1, &cfg).nrows(), 1);

        let short = Waveform::new(vec![1.0; 100], PIPELINE_SAMPLE_RATE);
        let frames = frame_signal(&short, &cfg);
        assert_eq!(frames.nrows(), 1);
        assert_eq!(frames[[0, 99]], 1.0);
        assert_eq!(frames[[0, 100]], 0.0);
        assert_eq!(frames[[0, 511]], 0.0);
    }

    #[test]
    fn frame_offsets_follow_hop() {
        let cfg = StftConfig::default();
        let samples: Vec<f64> = (0..2000).map(|i| i as f64).collect();
        let w = Waveform::new(samples, PIPELINE_SAMPLE_RATE);
        let frames = frame_signal(&w, &cfg);
        for t in 0..frames.nrows() {
            assert_eq!(frames[[t, 0]], (t * cfg.hop) as f64);
        }
    }

    #[test]
    fn mel_scale_reference_point() {
        // Direct evaluation of the mel formula at 1 kHz.
        assert_abs_diff_eq!(hz_to_mel(1000.0), 999.9855371, epsilon = 1e-3);
        assert_abs_diff_eq!(mel_to_hz(hz_to_mel(440.0)), 440.0, epsilon = 1e-9);
    }

    #[test]
    fn zero_waveform_hits_log_floor() {
        let w = Waveform::new(vec![0.0; 4000], PIPELINE_SAMPLE_RATE);
        let lms = log_mel_spectrogram(&w, &StftConfig::default(), &MelConfig::default()).unwrap();
        let expected = 1e-10f64.ln();
        for &v in lms.data.iter() {
            assert_abs_diff_eq!(v, expected, epsilon = 1e-12);
        }
        assert_eq!(lms.kind, FeatureKind::Lms);
        assert_eq!(lms.dim(), 80);
    }

    #[test]
    fn sine_peaks_in_nearest_mel_bin() {
        // Oracle: recompute the filter center frequencies from the mel
        // formula and find the one nearest 440 Hz.
        let mcfg = MelConfig::default();
        let mel_max = 2595.0 * (1.0 + 8000.0 / 700.0f64).log10();
        let centers: Vec<f64> = (1..=80)
            .map(|i| 700.0 * (10f64.powf(mel_max * i as f64 / 81.0 / 2595.0) - 1.0))
            .collect();
        let nearest = centers
            .iter()
            .enumerate()
            .min_by(|a, b| {
                (a.1 - 440.0)
                    .abs()
                    .partial_cmp(&(b.1 - 440.0).abs())
                    .unwrap()
            })
            .unwrap()
            .0;

        let w = sine(440.0, 8000);
        let lms = log_mel_spectrogram(&w, &StftConfig::default(), &mcfg).unwrap();
        for row in lms.data.rows() {
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, nearest);
        }
    }

    #[test]
    fn determinism_bit_identical() {
        let w = sine(300.0, 6000);
        let a = log_mel_spectrogram(&w, &StftConfig::default(), &MelConfig::default()).unwrap();
        let b = log_mel_spectrogram(&w, &StftConfig::default(), &MelConfig::default()).unwrap();
        for (x, y) in a.data.iter().zip(b.data.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn dct_of_constant_frame() {
        let v = -3.7;
        let data = Array2::from_elem((1, 80), v);
        let lms = FeatureMatrix::new(data, 0.01, FeatureKind::Lms).unwrap();
        let mcc = mcc_from_logmel(&lms, &MccConfig::default()).unwrap();
        assert_abs_diff_eq!(mcc.data[[0, 0]], v * 80f64.sqrt(), epsilon = 1e-9);
        for d in 1..25 {
            assert_abs_diff_eq!(mcc.data[[0, d]], 0.0, epsilon = 1e-9);
        }

        let zeros = FeatureMatrix::new(Array2::zeros((1, 80)), 0.01, FeatureKind::Lms).unwrap();
        let mcc0 = mcc_from_logmel(&zeros, &MccConfig::default()).unwrap();
        assert!(mcc0.data.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn dct_orthonormal_inverse() {
        // Full-order forward then independent inverse (DCT-III with the
        // same normalization) reproduces the frame.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let frame: Vec<f64> = (0..80).map(|_| rng.random_range(-5.0..5.0)).collect();
        let data = Array2::from_shape_vec((1, 80), frame.clone()).unwrap();
        let lms = FeatureMatrix::new(data, 0.01, FeatureKind::Lms).unwrap();
        let mcc = mcc_from_logmel(&lms, &MccConfig { order: 80 }).unwrap();

        let n = 80usize;
        for i in 0..n {
            let mut x = (1.0 / n as f64).sqrt() * mcc.data[[0, 0]];
            for k in 1..n {
                x += (2.0 / n as f64).sqrt()
                    * mcc.data[[0, k]]
                    * (std::f64::consts::PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos();
            }
            assert_abs_diff_eq!(x, frame[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn mcd_unit_values() {
        let a = Array1::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(frame_mcd(a.view(), a.view()).unwrap(), 0.0);

        let mut b = a.clone();
        b[2] += 1.0;
        let expected = MCD_DB_SCALE * 2f64.sqrt();
        assert_abs_diff_eq!(
            frame_mcd(a.view(), b.view()).unwrap(),
            expected,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(expected, 6.1419, epsilon = 1e-3);

        // Differences confined to c0 do not count.
        let mut c = a.clone();
        c[0] += 100.0;
        assert_eq!(frame_mcd(a.view(), c.view()).unwrap(), 0.0);
    }

    #[test]
    fn mcd_is_a_metric_on_non_c0() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let x = Array1::from_shape_fn(10, |_| rng.random_range(-3.0..3.0));
            let y = Array1::from_shape_fn(10, |_| rng.random_range(-3.0..3.0));
            let z = Array1::from_shape_fn(10, |_| rng.random_range(-3.0..3.0));
            let dxy = frame_mcd(x.view(), y.view()).unwrap();
            let dyx = frame_mcd(y.view(), x.view()).unwrap();
            let dxz = frame_mcd(x.view(), z.view()).unwrap();
            let dzy = frame_mcd(z.view(), y.view()).unwrap();
            assert_eq!(dxy, dyx);
            assert!(dxy >= 0.0);
            assert!(dxy <= dxz + dzy + 1e-12);
        }
    }

    #[test]
    fn mcd_rejects_dim_mismatch() {
        let a = Array1::zeros(5);
        let b = Array1::zeros(6);
        assert!(frame_mcd(a.view(), b.view()).is_err());
    }

    #[test]
    fn lms_entries_bounded_below_by_log_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let samples: Vec<f64> = (0..5000).map(|_| rng.random_range(-0.8..0.8)).collect();
        let w = Waveform::new(samples, PIPELINE_SAMPLE_RATE);
        let lms = log_mel_spectrogram(&w, &StftConfig::default(), &MelConfig::default()).unwrap();
        let floor = 1e-10f64.ln();
        assert!(lms
            .data
            .iter()
            .all(|v| v.is_finite() && *v >= floor - 1e-12));
    }

    #[test]
    fn mcc_rejects_non_lms() {
        let m = FeatureMatrix::new(Array2::zeros((3, 40)), 0.01, FeatureKind::Visual).unwrap();
        assert!(matches!(
            mcc_from_logmel(&m, &MccConfig::default()),
            Err(DspError::Shape(_))
        ));
    }
}
