//! Waveform-similarity overlap-and-add time-scale modification.
//!
//! Stretches speech by copying Hann-windowed analysis frames to evenly
//! spaced synthesis positions. Each analysis frame is picked from a
//! tolerance window around its nominal position by maximizing the
//! normalized cross-correlation with the natural continuation of the
//! previously copied frame, which keeps waveform periodicity (and hence
//! pitch) intact while the duration changes.

use thiserror::Error;

use crate::dsp::hann_window;
use crate::io::Waveform;

#[derive(Debug, Error)]
pub enum WsolaError {
    #[error("input too short: {len} samples, need at least {needed}")]
    InputTooShort { len: usize, needed: usize },
    #[error("stretch rate must be positive and finite, got {0}")]
    BadRate(f64),
    #[error("invalid config: {0}")]
    BadConfig(String),
}

/// 32 ms frames at 50% overlap with a half-frame search tolerance.
#[derive(Debug, Clone)]
pub struct WsolaConfig {
    pub frame_len: usize,
    pub synthesis_hop: usize,
    pub tolerance: usize,
}

impl Default for WsolaConfig {
    fn default() -> Self {
        Self {
            frame_len: 512,
            synthesis_hop: 256,
            tolerance: 256,
        }
    }
}

impl WsolaConfig {
    pub fn validate(&self) -> Result<(), WsolaError> {
        if self.synthesis_hop == 0 || self.synthesis_hop > self.frame_len {
            return Err(WsolaError::BadConfig(format!(
                "need 0 < synthesis_hop <= frame_len, got {} / {}",
                self.synthesis_hop, self.frame_len
            )));
        }
        if self.frame_len % 2 != 0 {
            return Err(WsolaError::BadConfig(format!(
                "frame_len must be even, got {}",
                self.frame_len
            )));
        }
        Ok(())
    }
}

/// Time-stretch `w` by rate `alpha` (> 1 lengthens). The output length is
/// within one synthesis hop of round(alpha * len).
pub fn stretch(w: &Waveform, alpha: f64, cfg: &WsolaConfig) -> Result<Waveform, WsolaError> {
    cfg.validate()?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(WsolaError::BadRate(alpha));
    }
    let n = w.len();
    let frame_len = cfg.frame_len;
    let hop = cfg.synthesis_hop;
    if n < frame_len {
        return Err(WsolaError::InputTooShort {
            len: n,
            needed: frame_len,
        });
    }

    let target = (alpha * n as f64).round() as usize;
    let num_frames = if target > frame_len {
        (target - frame_len) / hop + 1
    } else {
        1
    };
    let out_len = (num_frames - 1) * hop + frame_len;
    let window = hann_window(frame_len);
    let max_start = n - frame_len;

    let mut out = vec![0.0f64; out_len];
    let mut window_sum = vec![0.0f64; out_len];
    let mut prev_start = 0usize;
    for k in 0..num_frames {
        let start = if k == 0 {
            0
        } else {
            let nominal = ((k * hop) as f64 / alpha).round() as i64;
            let template_start = (prev_start + hop).min(max_start);
            let template = &w.samples[template_start..template_start + frame_len];
            best_match(
                &w.samples,
                template,
                nominal,
                cfg.tolerance,
                max_start,
                frame_len,
            )
        };
        let synth = k * hop;
        for i in 0..frame_len {
            out[synth + i] += window[i] * w.samples[start + i];
            window_sum[synth + i] += window[i];
        }
        prev_start = start;
    }
    for (sample, &ws) in out.iter_mut().zip(&window_sum) {
        *sample /= ws.max(1e-8);
    }
    Ok(Waveform::new(out, w.sample_rate))
}

/// Candidate offsets are visited as 0, -1, +1, -2, +2, ... and a
/// candidate replaces the incumbent only on strictly greater similarity,
/// so ties resolve to the smallest |delta| and then to the negative one.
fn best_match(
    samples: &[f64],
    template: &[f64],
    nominal: i64,
    tolerance: usize,
    max_start: usize,
    frame_len: usize,
) -> usize {
    let clamp = |pos: i64| pos.clamp(0, max_start as i64) as usize;
    let template_energy: f64 = template.iter().map(|v| v * v).sum();

    let mut best_start = clamp(nominal);
    let mut best_score = f64::NEG_INFINITY;
    let visit = |delta: i64, best_start: &mut usize, best_score: &mut f64| {
        let start = clamp(nominal + delta);
        let candidate = &samples[start..start + frame_len];
        let mut dot = 0.0;
        let mut energy = 0.0;
        for (c, t) in candidate.iter().zip(template) {
            dot += c * t;
            energy += c * c;
        }
        let denom = (energy * template_energy).sqrt();
        let score = if denom > 1e-12 { dot / denom } else { 0.0 };
        if score > *best_score {
            *best_score = score;
            *best_start = start;
        }
    };
    visit(0, &mut best_start, &mut best_score);
    for d in 1..=tolerance as i64 {
        visit(-d, &mut best_start, &mut best_score);
        visit(d, &mut best_start, &mut best_score);
    }
    best_start
}

/// Stretch `w` so the result has exactly `target_samples` samples: a
/// plain stretch at rate target/len, then right-trimmed or zero-padded.
pub fn stretch_to_length(
    w: &Waveform,
    target_samples: usize,
    cfg: &WsolaConfig,
) -> Result<Waveform, WsolaError> {
    if target_samples < cfg.frame_len {
        return Err(WsolaError::InputTooShort {
            len: target_samples,
            needed: cfg.frame_len,
        });
    }
    let alpha = target_samples as f64 / w.len() as f64;
    let mut stretched = stretch(w, alpha, cfg)?;
    stretched.samples.resize(target_samples, 0.0);
    Ok(stretched)
}
