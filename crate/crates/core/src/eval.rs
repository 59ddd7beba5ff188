//! Objective evaluation: utterance-level mel-cepstral distortion with a
//! DTW alignment of its own, plus corpus aggregation.
//!
//! The converted and reference features are not frame-synchronous in
//! general, so each pair is DTW-aligned on MCC (same cost as the
//! alignment pipelines) and the reported value is the mean frame MCD
//! along the optimal path, in dB. Lower is better.

use thiserror::Error;

use crate::align::{cost_matrix_mcc, dtw, AlignError};
use crate::dsp::{mcc_from_logmel, DspError, MccConfig};
use crate::io::{FeatureKind, FeatureMatrix};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Align(#[from] AlignError),
}

/// Mean frame MCD along the optimal DTW path between the two feature
/// sequences. LMS inputs are first mapped to MCC; both inputs must be of
/// the same kind.
pub fn utterance_mcd(
    converted: &FeatureMatrix,
    target: &FeatureMatrix,
    mcc_cfg: &MccConfig,
) -> Result<f64, EvalError> {
    if converted.kind != target.kind {
        return Err(EvalError::Shape(format!(
            "feature kinds differ: {:?} vs {:?}",
            converted.kind, target.kind
        )));
    }
    let (a, b) = match converted.kind {
        FeatureKind::Lms => (
            mcc_from_logmel(converted, mcc_cfg)?,
            mcc_from_logmel(target, mcc_cfg)?,
        ),
        FeatureKind::Mcc => (converted.clone(), target.clone()),
        other => {
            return Err(EvalError::Shape(format!(
                "cannot evaluate {other:?} features, need LMS or MCC"
            )));
        }
    };
    let path = dtw(&cost_matrix_mcc(&a, &b)?)?;
    Ok(path.mean_cost())
}

/// Per-utterance MCD values with corpus statistics.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub label: String,
    pub per_utterance: Vec<(String, f64)>,
    pub mean: f64,
    pub stdev: f64,
}

impl EvalReport {
    pub fn count(&self) -> usize {
        self.per_utterance.len()
    }

    /// CSV with a `utt_id,mcd_db` header, one row per utterance.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("utt_id,mcd_db\n");
        for (id, mcd) in &self.per_utterance {
            out.push_str(&format!("{id},{mcd:.6}\n"));
        }
        out
    }

    /// Human-readable block with mean and standard deviation.
    pub fn summary(&self) -> String {
        format!(
            "{}: {} utterances, MCD {:.4} ± {:.4} dB",
            self.label,
            self.count(),
            self.mean,
            self.stdev
        )
    }
}

/// Evaluate a corpus of (utt_id, converted, target) entries.
pub fn evaluate_corpus(
    pairs: &[(String, FeatureMatrix, FeatureMatrix)],
    label: &str,
    mcc_cfg: &MccConfig,
) -> Result<EvalReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::Shape("no utterance pairs to evaluate".into()));
    }
    let mut per_utterance = Vec::with_capacity(pairs.len());
    for (id, converted, target) in pairs {
        per_utterance.push((id.clone(), utterance_mcd(converted, target, mcc_cfg)?));
    }
    let n = per_utterance.len() as f64;
    let mean = per_utterance.iter().map(|(_, v)| v).sum::<f64>() / n;
    let variance = per_utterance
        .iter()
        .map(|(_, v)| (v - mean) * (v - mean))
        .sum::<f64>()
        / n;
    Ok(EvalReport {
        label: label.to_string(),
        per_utterance,
        mean,
        stdev: variance.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mcc(data: Array2<f64>) -> FeatureMatrix {
        FeatureMatrix::new(data, 0.01, FeatureKind::Mcc).unwrap()
    }

    fn random_mcc(rng: &mut ChaCha8Rng, t: usize, d: usize) -> FeatureMatrix {
        mcc(Array2::from_shape_fn((t, d), |_| {
            rng.random_range(-3.0..3.0)
        }))
    }

    #[test]
    fn identical_features_score_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_mcc(&mut rng, 12, 8);
        assert_eq!(utterance_mcd(&a, &a, &MccConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn uniform_single_coefficient_offset() {
        // Strongly distinct frames keep the optimal path on the diagonal,
        // where every pair costs exactly (10/ln10) * sqrt(2).
        let t = 10;
        let mut data = Array2::zeros((t, 6));
        for ti in 0..t {
            data[[ti, 1]] = 10.0 * ti as f64;
            data[[ti, 2]] = -7.0 * ti as f64;
        }
        let a = mcc(data.clone());
        let mut shifted = data;
        for ti in 0..t {
            shifted[[ti, 3]] += 1.0;
        }
        let b = mcc(shifted);
        let got = utterance_mcd(&a, &b, &MccConfig::default()).unwrap();
        assert_abs_diff_eq!(got, 6.1419, epsilon = 1e-3);
    }

    #[test]
    fn symmetry_on_generic_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let a = random_mcc(&mut rng, 9, 5);
            let b = random_mcc(&mut rng, 13, 5);
            let ab = utterance_mcd(&a, &b, &MccConfig::default()).unwrap();
            let ba = utterance_mcd(&b, &a, &MccConfig::default()).unwrap();
            assert_abs_diff_eq!(ab, ba, epsilon = 1e-9);
        }
    }

    #[test]
    fn noise_increases_mcd_in_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let clean = random_mcc(&mut rng, 20, 8);
        let mut means = Vec::new();
        for &sigma in &[0.05, 0.3, 1.0] {
            let mut total = 0.0;
            for _ in 0..5 {
                let noisy = mcc(Array2::from_shape_fn((20, 8), |(t, d)| {
                    clean.data[[t, d]] + rng.random_range(-sigma..sigma)
                }));
                total += utterance_mcd(&noisy, &clean, &MccConfig::default()).unwrap();
            }
            means.push(total / 5.0);
        }
        assert!(
            means[0] < means[1] && means[1] < means[2],
            "means {means:?}"
        );
    }

    #[test]
    fn corpus_aggregation_matches_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pairs: Vec<(String, FeatureMatrix, FeatureMatrix)> = (0..6)
            .map(|i| {
                let t = rng.random_range(5..12);
                (
                    format!("utt{i:02}"),
                    random_mcc(&mut rng, t, 6),
                    random_mcc(&mut rng, t + 2, 6),
                )
            })
            .collect();
        let report = evaluate_corpus(&pairs, "test", &MccConfig::default()).unwrap();

        let values: Vec<f64> = report.per_utterance.iter().map(|(_, v)| *v).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
        assert_abs_diff_eq!(report.mean, mean, epsilon = 1e-12);
        assert_abs_diff_eq!(report.stdev, var.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn single_pair_mean_is_the_value_with_zero_stdev() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_mcc(&mut rng, 8, 6);
        let b = random_mcc(&mut rng, 8, 6);
        let expected = utterance_mcd(&a, &b, &MccConfig::default()).unwrap();
        let report =
            evaluate_corpus(&[("one".into(), a, b)], "single", &MccConfig::default()).unwrap();
        assert_eq!(report.mean, expected);
        assert_eq!(report.stdev, 0.0);
    }

    #[test]
    fn identical_pairs_mean_zero_and_csv_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_mcc(&mut rng, 8, 6);
        let pairs = vec![
            ("a".to_string(), a.clone(), a.clone()),
            ("b".to_string(), a.clone(), a.clone()),
        ];
        let report = evaluate_corpus(&pairs, "ident", &MccConfig::default()).unwrap();
        assert_eq!(report.mean, 0.0);
        let csv = report.to_csv();
        assert!(csv.starts_with("utt_id,mcd_db\n"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn kind_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_mcc(&mut rng, 5, 6);
        let visual = FeatureMatrix::new(Array2::zeros((5, 6)), 0.01, FeatureKind::Visual).unwrap();
        assert!(matches!(
            utterance_mcd(&a, &visual, &MccConfig::default()),
            Err(EvalError::Shape(_))
        ));
        assert!(matches!(
            utterance_mcd(&visual, &visual, &MccConfig::default()),
            Err(EvalError::Shape(_))
        ));
    }
}
