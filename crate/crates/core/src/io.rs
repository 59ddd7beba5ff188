//! File formats shared by every pipeline stage: 16 kHz mono PCM WAV,
//! lip-landmark CSV, and the "ELF1" layered-feature binary container.
//!
//! All loaders reject malformed input with a typed error; none silently
//! truncate. Feature files round-trip bit-exactly, WAV within one
//! quantization step (2^-15) per sample.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

/// The only sample rate the pipeline operates at.
pub const PIPELINE_SAMPLE_RATE: u32 = 16_000;

/// Lip landmarks per video frame.
pub const LANDMARKS_PER_FRAME: usize = 20;

/// Log-mel spectrogram dimensionality used throughout the pipeline.
pub const LMS_DIM: usize = 80;

const FEATURE_MAGIC: &[u8; 4] = b"ELF1";
const WAV_SCALE: f64 = 32_768.0;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("file not found: {0}")]
    NotFound(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("bad sample rate: {0} Hz (pipeline requires {PIPELINE_SAMPLE_RATE} Hz)")]
    BadSampleRate(u32),
    #[error("parse error at line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("bad magic: not an ELF1 feature file")]
    BadMagic,
    #[error("truncated file: need {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },
    #[error("trailing data: {0} unexpected bytes after payload")]
    TrailingData(usize),
    #[error("non-finite sample at index {0}")]
    NonFiniteSample(usize),
    #[error("invalid feature data: {0}")]
    InvalidFeature(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mono sampled audio. Amplitudes live in [-1, 1]; the pipeline operates
/// at 16 kHz only and `read_wav` rejects anything else.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Read a RIFF/WAVE file: PCM, 16-bit, mono, 16 kHz. Samples are scaled
/// by 1/32768 into [-1, 1).
pub fn read_wav(path: &Path) -> Result<Waveform, IoError> {
    let reader = hound::WavReader::open(path).map_err(|e| map_hound_error(e, path))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(IoError::UnsupportedFormat(format!(
            "{} channels, expected mono",
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(IoError::UnsupportedFormat(format!(
            "{:?} {} bits, expected 16-bit PCM",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    if spec.sample_rate != PIPELINE_SAMPLE_RATE {
        return Err(IoError::BadSampleRate(spec.sample_rate));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / WAV_SCALE))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| map_hound_error(e, path))?;
    Ok(Waveform::new(samples, PIPELINE_SAMPLE_RATE))
}

/// Write a waveform as 16-bit mono PCM. Samples are clipped to
/// [-1, 1 - 2^-15] and quantized by rounding, so a read-back differs from
/// the original by at most one quantization step per sample.
pub fn write_wav(w: &Waveform, path: &Path) -> Result<(), IoError> {
    if let Some(idx) = w.samples.iter().position(|s| !s.is_finite()) {
        return Err(IoError::NonFiniteSample(idx));
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound_error(e, path))?;
    let max_amp = 1.0 - (-15f64).exp2();
    for &s in &w.samples {
        let q = (s.clamp(-1.0, max_amp) * WAV_SCALE).round() as i16;
        writer
            .write_sample(q)
            .map_err(|e| map_hound_error(e, path))?;
    }
    writer.finalize().map_err(|e| map_hound_error(e, path))?;
    Ok(())
}

fn map_hound_error(e: hound::Error, path: &Path) -> IoError {
    match e {
        hound::Error::IoError(io) if io.kind() == std::io::ErrorKind::NotFound => {
            IoError::NotFound(path.display().to_string())
        }
        hound::Error::IoError(io) => IoError::Io(io),
        other => IoError::UnsupportedFormat(other.to_string()),
    }
}

/// Per-video-frame sets of 20 lip landmark points, in pixel units as
/// produced by the upstream landmark tool. The video rate is 25 FPS.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSequence {
    pub frames: Vec<[[f64; 2]; LANDMARKS_PER_FRAME]>,
}

impl LandmarkSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Read a landmark CSV: one row per video frame, 40 comma-separated reals
/// as x1,y1,...,x20,y20.
pub fn read_landmarks(path: &Path) -> Result<LandmarkSequence, IoError> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            IoError::NotFound(path.display().to_string())
        } else {
            IoError::Io(e)
        }
    })?;
    let mut frames = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 * LANDMARKS_PER_FRAME {
            return Err(IoError::ParseError {
                line: lineno + 1,
                msg: format!("expected 40 columns, found {}", fields.len()),
            });
        }
        let mut frame = [[0.0f64; 2]; LANDMARKS_PER_FRAME];
        for (i, pair) in fields.chunks_exact(2).enumerate() {
            for (axis, field) in pair.iter().enumerate() {
                frame[i][axis] = field
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| IoError::ParseError {
                        line: lineno + 1,
                        msg: format!("non-numeric value {:?}", field),
                    })?;
            }
        }
        frames.push(frame);
    }
    Ok(LandmarkSequence { frames })
}

/// What a feature matrix holds. `Lms` rows are always 80-dimensional.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Lms,
    Mcc,
    Visual,
    Other,
}

/// A T x D matrix of frame features with frame timing metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: Array2<f64>,
    pub frame_shift_s: f64,
    pub kind: FeatureKind,
}

impl FeatureMatrix {
    pub fn new(data: Array2<f64>, frame_shift_s: f64, kind: FeatureKind) -> Result<Self, IoError> {
        let (t, d) = data.dim();
        if t == 0 || d == 0 {
            return Err(IoError::InvalidFeature(format!("empty matrix {t}x{d}")));
        }
        if kind == FeatureKind::Lms && d != LMS_DIM {
            return Err(IoError::InvalidFeature(format!(
                "LMS features must be {LMS_DIM}-dimensional, got {d}"
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(IoError::InvalidFeature("non-finite entry".into()));
        }
        Ok(Self {
            data,
            frame_shift_s,
            kind,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }
}

/// L feature matrices of identical shape, one per extractor layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredFeatureSet {
    pub layers: Vec<Array2<f64>>,
    pub extractor_name: String,
}

impl LayeredFeatureSet {
    pub fn new(
        layers: Vec<Array2<f64>>,
        extractor_name: impl Into<String>,
    ) -> Result<Self, IoError> {
        if layers.is_empty() {
            return Err(IoError::InvalidFeature("no layers".into()));
        }
        let (t, d) = layers[0].dim();
        if t == 0 || d == 0 {
            return Err(IoError::InvalidFeature(format!("empty layer {t}x{d}")));
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.dim() != (t, d) {
                return Err(IoError::InvalidFeature(format!(
                    "layer {l} is {:?}, expected ({t}, {d})",
                    layer.dim()
                )));
            }
            if layer.iter().any(|v| !v.is_finite()) {
                return Err(IoError::InvalidFeature(format!(
                    "non-finite entry in layer {l}"
                )));
            }
        }
        Ok(Self {
            layers,
            extractor_name: extractor_name.into(),
        })
    }

    /// Wrap a single matrix as a one-layer set.
    pub fn single(matrix: Array2<f64>, extractor_name: impl Into<String>) -> Result<Self, IoError> {
        Self::new(vec![matrix], extractor_name)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_frames(&self) -> usize {
        self.layers[0].nrows()
    }

    pub fn dim(&self) -> usize {
        self.layers[0].ncols()
    }
}

/// Write a layered feature set in the ELF1 container: magic "ELF1",
/// u32 L, u32 T, u32 D (little-endian), then L*T*D float64 values in
/// layer-major, row-major order. Round-trips are bit-exact.
pub fn write_feature_file(set: &LayeredFeatureSet, path: &Path) -> Result<(), IoError> {
    let (l, t, d) = (set.num_layers(), set.num_frames(), set.dim());
    let mut buf = Vec::with_capacity(16 + l * t * d * 8);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&(l as u32).to_le_bytes());
    buf.extend_from_slice(&(t as u32).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    for layer in &set.layers {
        for row in layer.rows() {
            for &v in row {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Read an ELF1 layered feature file. The extractor name is taken from
/// the file stem since the container does not store it.
pub fn read_feature_file(path: &Path) -> Result<LayeredFeatureSet, IoError> {
    let bytes = fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            IoError::NotFound(path.display().to_string())
        } else {
            IoError::Io(e)
        }
    })?;
    if bytes.len() < 16 {
        return Err(IoError::TruncatedFile {
            expected: 16,
            found: bytes.len(),
        });
    }
    if &bytes[0..4] != FEATURE_MAGIC {
        return Err(IoError::BadMagic);
    }
    let l = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let t = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if l == 0 || t == 0 || d == 0 {
        return Err(IoError::InvalidFeature(format!(
            "degenerate shape L={l} T={t} D={d}"
        )));
    }
    let expected = 16 + l * t * d * 8;
    if bytes.len() < expected {
        return Err(IoError::TruncatedFile {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(IoError::TrailingData(bytes.len() - expected));
    }
    let mut layers = Vec::with_capacity(l);
    let mut off = 16;
    for _ in 0..l {
        let mut values = Vec::with_capacity(t * d);
        for _ in 0..t * d {
            values.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
            off += 8;
        }
        layers.push(Array2::from_shape_vec((t, d), values).expect("shape checked above"));
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    LayeredFeatureSet::new(layers, name)
}
