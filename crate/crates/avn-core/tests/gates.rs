//! Baseline uncertainty gates: conformal calibration against a
//! brute-force quantile oracle, entropy pseudo-labels, and the linear
//! gate's feature construction and checkpoints.

use approx::assert_abs_diff_eq;
use avn_core::baselines::{
    cp_calibrate, entropy_label, normalized_entropy, train_base_gate, train_vdn_gate,
    BaselineTrainConfig, CpCalibration, FeatureSet, LinearGate,
};
use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Oracle: smallest calibration score θ such that at least
/// ceil((n+1)(1 − tol)) correct scores satisfy score ≥ θ, found by
/// trying every candidate threshold exhaustively.
fn brute_force_threshold(calib: &[(f64, bool)], tol: f64) -> f64 {
    let scores: Vec<f64> = calib
        .iter()
        .filter(|(_, c)| *c)
        .map(|(p, _)| *p)
        .collect();
    let n = scores.len();
    let k = (((n + 1) as f64) * (1.0 - tol)).ceil() as usize;
    let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    if k == 0 || k >= n {
        return min;
    }
    let mut best = f64::NEG_INFINITY;
    for &cand in &scores {
        let cleared = scores.iter().filter(|&&s| s >= cand).count();
        if cleared >= k && cand > best {
            best = cand;
        }
    }
    best
}

#[test]
fn cp_threshold_matches_brute_force_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for trial in 0..50 {
        let n = rng.gen_range(5..60);
        let calib: Vec<(f64, bool)> = (0..n)
            .map(|_| (rng.gen::<f64>(), rng.gen_bool(0.8)))
            .collect();
        if !calib.iter().any(|(_, c)| *c) {
            continue;
        }
        for &tol in &[0.05, 0.1, 0.25, 0.5, 0.9] {
            let got = cp_calibrate(&calib, tol).unwrap().threshold;
            let want = brute_force_threshold(&calib, tol);
            assert_abs_diff_eq!(got, want, epsilon = 0.0);
            let _ = trial;
        }
    }
}

#[test]
fn cp_acceptance_rate_on_calibration_set_meets_target() {
    // On the correct calibration scores themselves, the fraction with
    // score >= threshold must be at least the implied coverage level.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..30 {
        let n = rng.gen_range(10..100);
        let calib: Vec<(f64, bool)> = (0..n).map(|_| (rng.gen::<f64>(), true)).collect();
        for &tol in &[0.05, 0.1, 0.3] {
            let cp = cp_calibrate(&calib, tol).unwrap();
            let accepted = calib.iter().filter(|(p, _)| *p >= cp.threshold).count();
            let k = (((n + 1) as f64) * (1.0 - tol)).ceil() as usize;
            let target = k.min(n);
            assert!(
                accepted >= target,
                "n={n} tol={tol}: accepted {accepted} < {target}"
            );
        }
    }
}

#[test]
fn cp_edge_cases() {
    // All scores identical: threshold equals that score.
    let calib = vec![(1.0, true); 10];
    assert_eq!(cp_calibrate(&calib, 0.1).unwrap().threshold, 1.0);
    // Tolerance 1 accepts everything: threshold is the minimum score.
    let calib = vec![(0.2, true), (0.9, true), (0.5, true)];
    assert_eq!(cp_calibrate(&calib, 1.0).unwrap().threshold, 0.2);
    // Tolerance 0 demands more coverage than n points can give:
    // threshold falls back to the minimum.
    assert_eq!(cp_calibrate(&calib, 0.0).unwrap().threshold, 0.2);
    // No correct steps: falls back to all scores (with a warning).
    let calib = vec![(0.3, false), (0.8, false)];
    let cp = cp_calibrate(&calib, 0.5).unwrap();
    assert!(cp.threshold == 0.3 || cp.threshold == 0.8);
    // Errors.
    assert!(cp_calibrate(&[], 0.1).is_err());
    assert!(cp_calibrate(&[(0.5, true)], 1.5).is_err());
    assert!(cp_calibrate(&[(f64::NAN, true)], 0.1).is_err());
}

#[test]
fn cp_decide_uses_top_probability() {
    let cp = CpCalibration {
        threshold: 0.6,
        tolerance: 0.1,
        n_calibration: 10,
    };
    use avn_core::navigator::GateDecision;
    assert_eq!(cp.decide(&[0.7, 0.2, 0.1]), GateDecision::Certain);
    assert_eq!(cp.decide(&[0.5, 0.3, 0.2]), GateDecision::Uncertain);
    // Exactly at threshold counts as confident.
    assert_eq!(cp.decide(&[0.6, 0.4]), GateDecision::Certain);
}

#[test]
fn normalized_entropy_unit_cases() {
    // Uniform -> 1, one-hot -> 0, degenerate lengths -> 0.
    assert_abs_diff_eq!(normalized_entropy(&[0.25; 4]), 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(normalized_entropy(&[1.0, 0.0, 0.0]), 0.0, epsilon = 1e-12);
    assert_eq!(normalized_entropy(&[1.0]), 0.0);
    assert_eq!(normalized_entropy(&[]), 0.0);
    assert_eq!(entropy_label(&[0.25; 4], 0.1), 1);
    assert_eq!(entropy_label(&[0.97, 0.01, 0.01, 0.01], 0.1), 0);
}

proptest! {
    #[test]
    fn normalized_entropy_is_permutation_invariant_and_bounded(
        raw in proptest::collection::vec(0.01f64..1.0, 2..8),
        rot in 0usize..8,
    ) {
        let total: f64 = raw.iter().sum();
        let beta: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let h = normalized_entropy(&beta);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&h));
        let mut perm = beta.clone();
        let shift = rot % beta.len();
        perm.rotate_left(shift);
        prop_assert!((normalized_entropy(&perm) - h).abs() < 1e-12);
    }

    #[test]
    fn mixing_toward_uniform_does_not_decrease_entropy(
        raw in proptest::collection::vec(0.01f64..1.0, 2..8),
        lambda in 0.0f64..1.0,
    ) {
        let total: f64 = raw.iter().sum();
        let beta: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let u = 1.0 / beta.len() as f64;
        let mixed: Vec<f64> = beta.iter().map(|&p| (1.0 - lambda) * p + lambda * u).collect();
        prop_assert!(normalized_entropy(&mixed) >= normalized_entropy(&beta) - 1e-12);
    }
}

fn toy_samples(n: usize, seed: u64) -> Vec<avn_core::iv::IvSample> {
    // Separable toy stream: positive samples have high pooled-α
    // entropy and flat β; negatives are peaked.
    use avn_core::iv::{CandidateEncoding, IvSample};
    use avn_core::lang::Style;
    use avn_core::tensor::Tensor2;
    use std::rc::Rc;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let pos = i % 2 == 0;
            let jitter = rng.gen::<f64>() * 0.05;
            let (alpha_feat, beta) = if pos {
                ([0.2 + jitter, 0.3, 0.9], vec![0.35, 0.33, 0.32])
            } else {
                ([0.8 - jitter, 0.9, 0.2], vec![0.9, 0.05, 0.05])
            };
            IvSample {
                i_hat: Rc::new(Tensor2::zeros(2, 4)),
                cand: CandidateEncoding {
                    rows: Tensor2::zeros(1, 4),
                    stop_base: None,
                },
                alpha_feat,
                beta,
                label_gp: u8::from(pos),
                label_ip: u8::from(pos),
                style: if pos { Style::Short } else { Style::Orig },
            }
        })
        .collect()
}

#[test]
fn linear_gate_feature_vec_pads_and_preserves_top_probability() {
    let samples = toy_samples(4, 0);
    let cfg = BaselineTrainConfig {
        iterations: 1,
        ..Default::default()
    };
    let gate = train_base_gate(&samples, &cfg).unwrap();
    assert_eq!(gate.features, FeatureSet::AlphaBeta);
    assert_eq!(gate.beta_pad, 3);
    // Shorter β is zero-padded.
    let v = gate.feature_vec(&[0.1, 0.2, 0.3], &[0.7, 0.3]);
    assert_eq!(v, vec![0.1, 0.2, 0.3, 0.7, 0.3, 0.0]);
    // Longer β is truncated, but its max survives even when it sits
    // past the cut.
    let v = gate.feature_vec(&[0.0; 3], &[0.1, 0.1, 0.1, 0.6, 0.1]);
    assert!(v[3..].contains(&0.6), "{v:?}");
    assert_eq!(v.len(), 6);
    // α-only variant ignores β entirely.
    let vdn = train_vdn_gate(&samples, &cfg).unwrap();
    assert_eq!(vdn.features, FeatureSet::Alpha);
    assert_eq!(vdn.feature_vec(&[0.1, 0.2, 0.3], &[0.9, 0.1]), vec![0.1, 0.2, 0.3]);
}

#[test]
fn linear_gate_learns_separable_toy_stream() {
    let samples = toy_samples(32, 3);
    let cfg = BaselineTrainConfig {
        iterations: 600,
        seed: 1,
        ..Default::default()
    };
    let gate = train_base_gate(&samples, &cfg).unwrap();
    let correct = samples
        .iter()
        .filter(|s| {
            let f = gate.feature_vec(&s.alpha_feat, &s.beta);
            let scores = gate.scores(&f).unwrap();
            let pred = u8::from(scores[1] > scores[0]);
            pred == s.label_gp
        })
        .count();
    assert!(correct >= 30, "only {correct}/32 correct");
}

#[test]
fn train_base_gate_rejects_empty_input() {
    assert!(train_base_gate(&[], &BaselineTrainConfig::default()).is_err());
    assert!(train_vdn_gate(&[], &BaselineTrainConfig::default()).is_err());
}

#[test]
fn linear_gate_scores_reject_wrong_width() {
    let gate = train_base_gate(
        &toy_samples(4, 0),
        &BaselineTrainConfig {
            iterations: 1,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(gate.scores(&[0.0; 2]).is_err());
}

#[test]
fn gate_checkpoints_roundtrip_exactly() {
    let dir = tempdir();
    let samples = toy_samples(8, 5);
    let cfg = BaselineTrainConfig {
        iterations: 50,
        ..Default::default()
    };
    let gate = train_base_gate(&samples, &cfg).unwrap();
    let path = dir.join("gate.json");
    gate.save(&path).unwrap();
    let back = LinearGate::load(&path, "base").unwrap();
    assert_eq!(back.features, gate.features);
    assert_eq!(back.beta_pad, gate.beta_pad);
    for s in &samples {
        let f = gate.feature_vec(&s.alpha_feat, &s.beta);
        assert_eq!(gate.scores(&f).unwrap(), back.scores(&f).unwrap());
    }

    let cp = CpCalibration {
        threshold: 0.612345678901234,
        tolerance: 0.9,
        n_calibration: 37,
    };
    let cpath = dir.join("cp.json");
    cp.save(&cpath).unwrap();
    assert_eq!(CpCalibration::load(&cpath).unwrap(), cp);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn entropy_label_disagreement_counts_mismatches() {
    let mut samples = toy_samples(4, 9);
    // Positives have near-flat β (entropy label 1) and label_gp 1;
    // negatives peaked (label 0) with label_gp 0 -> no disagreement.
    assert_eq!(
        avn_core::baselines::entropy_label_disagreement(&samples, 0.1),
        0.0
    );
    // Flip one ground-truth label -> 1/4 disagreement.
    samples[0].label_gp = 0;
    assert_eq!(
        avn_core::baselines::entropy_label_disagreement(&samples, 0.1),
        0.25
    );
    assert_eq!(avn_core::baselines::entropy_label_disagreement(&[], 0.1), 0.0);
}

fn tempdir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "avn-gates-{}-{}",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap()
            .as_nanos()
    ));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
