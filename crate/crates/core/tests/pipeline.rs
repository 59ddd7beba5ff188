//! Cross-module pipeline behavior: the alignment pipelines end to end on
//! synthetic utterances, and prepare -> train -> convert -> evaluate
//! through the library API.

use elvc_core::align::{
    align_dtw_lip, align_dtw_mcc, align_dtw_wsola, apply_warp, validate_path, FeatureConfig,
};
use elvc_core::dsp::{log_mel_spectrogram, MccConfig, MelConfig, StftConfig};
use elvc_core::eval::{evaluate_corpus, utterance_mcd};
use elvc_core::io::{LandmarkSequence, Waveform, LANDMARKS_PER_FRAME, PIPELINE_SAMPLE_RATE};
use elvc_core::neural::{convert, train, ModelConfig, TrainConfig, TrainSample};
use elvc_core::wsola::WsolaConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A speech-shaped test signal: tone-burst "syllables" with silent gaps
/// and a silent tail.
fn utterance(rng: &mut ChaCha8Rng, seconds: f64) -> Waveform {
    let sr = PIPELINE_SAMPLE_RATE as f64;
    let total = (seconds * sr) as usize;
    let mut samples = vec![0.0f64; total];
    let mut pos = (0.05 * sr) as usize;
    while pos + 2000 < total.saturating_sub((0.1 * sr) as usize) {
        let syllable_len = rng.random_range(1600..3200);
        let gap = rng.random_range(500..1200);
        let tones: Vec<(f64, f64)> = (0..rng.random_range(2..4))
            .map(|_| {
                (
                    rng.random_range(120.0..2800.0),
                    rng.random_range(0.05..0.25),
                )
            })
            .collect();
        for i in 0..syllable_len.min(total - pos) {
            let t = i as f64 / sr;
            let envelope = (std::f64::consts::PI * i as f64 / syllable_len as f64).sin();
            let mut v = 0.0;
            for &(freq, amp) in &tones {
                v += amp * (2.0 * std::f64::consts::PI * freq * t).sin();
            }
            samples[pos + i] = envelope * v;
        }
        pos += syllable_len + gap;
    }
    Waveform::new(samples, PIPELINE_SAMPLE_RATE)
}

#[test]
fn identity_alignment_is_the_diagonal_with_zero_cost() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w = utterance(&mut rng, 1.0);
    let cfg = FeatureConfig::default();
    let path = align_dtw_mcc(&w, &w, &cfg).unwrap();
    assert_eq!(path.total_cost, 0.0);
    for (k, &(i, j)) in path.pairs.iter().enumerate() {
        assert_eq!((i, j), (k, k));
    }
}

#[test]
fn identity_wsola_alignment_cost_is_edge_effects_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w = utterance(&mut rng, 1.0);
    let cfg = FeatureConfig::default();
    let (stretched, path) = align_dtw_wsola(&w, &w, &cfg, &WsolaConfig::default()).unwrap();
    assert_eq!(stretched.len(), w.len());
    let frames = 1 + (w.len() - cfg.stft.window_len) / cfg.stft.hop;
    assert!(
        path.total_cost < 0.1 * frames as f64,
        "total cost {} over {frames} frames",
        path.total_cost
    );
}

#[test]
fn lip_alignment_expands_to_acoustic_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let make_seq = |rng: &mut ChaCha8Rng, n: usize| {
        let frames = (0..n)
            .map(|_| {
                let mut f = [[0.0; 2]; LANDMARKS_PER_FRAME];
                for p in f.iter_mut() {
                    p[0] = rng.random_range(100.0..200.0);
                    p[1] = rng.random_range(100.0..200.0);
                }
                f
            })
            .collect();
        LandmarkSequence { frames }
    };
    let el = make_seq(&mut rng, 12);
    let nl = make_seq(&mut rng, 9);
    let path = align_dtw_lip(&el, &nl).unwrap();
    validate_path(&path, 4 * 12, 4 * 9, None).unwrap();
}

#[test]
fn library_pipeline_prepare_train_convert_eval() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let stft = StftConfig::default();
    let mel = MelConfig::default();
    let feature_cfg = FeatureConfig::default();
    let wsola = WsolaConfig::default();
    let mcc_cfg = MccConfig::default();

    // Tiny parallel corpus: "EL" is a stretched, noisier rendition.
    let mut samples = Vec::new();
    let mut eval_inputs = Vec::new();
    for _ in 0..3 {
        let nl = utterance(&mut rng, 0.8);
        let el_len = (nl.len() as f64 * 1.25) as usize;
        let mut el = elvc_core::wsola::stretch_to_length(&nl, el_len, &wsola).unwrap();
        for s in el.samples.iter_mut() {
            *s = (*s + rng.random_range(-0.01..0.01)).clamp(-1.0, 1.0);
        }

        let (stretched, path) = align_dtw_wsola(&el, &nl, &feature_cfg, &wsola).unwrap();
        let el_lms = log_mel_spectrogram(&el, &stft, &mel).unwrap();
        let tgt_lms = log_mel_spectrogram(&stretched, &stft, &mel).unwrap();
        let warped = apply_warp(&path, &tgt_lms).unwrap();
        assert_eq!(warped.num_frames(), el_lms.num_frames());

        eval_inputs.push((el_lms.clone(), warped.clone()));
        samples.push(TrainSample {
            acoustic: el_lms.data,
            visual: None,
            target: warped.data,
        });
    }

    let model_cfg = ModelConfig {
        conv_channels: 12,
        gru_hidden: 12,
        ..ModelConfig::audio_only()
    };
    let train_cfg = TrainConfig {
        epochs: 3,
        seed: 9,
        ..TrainConfig::default()
    };
    let (model, history) = train(&samples, &model_cfg, &train_cfg).unwrap();
    assert_eq!(history.len(), 3);
    assert!(history.iter().all(|v| v.is_finite()));

    let pairs: Vec<_> = eval_inputs
        .iter()
        .enumerate()
        .map(|(i, (el_lms, warped))| {
            let pred = convert(&model, el_lms, None).unwrap();
            (format!("utt{i}"), pred, warped.clone())
        })
        .collect();
    let report = evaluate_corpus(&pairs, "smoke", &mcc_cfg).unwrap();
    assert!(report.mean.is_finite() && report.mean >= 0.0);

    // Converting the target against itself scores exactly zero.
    let (el_lms, warped) = &eval_inputs[0];
    assert_eq!(utterance_mcd(warped, warped, &mcc_cfg).unwrap(), 0.0);
    assert!(utterance_mcd(el_lms, warped, &mcc_cfg).unwrap() > 0.0);
}
