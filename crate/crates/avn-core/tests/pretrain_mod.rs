//! Relevance-span pre-training: loss properties, the full-stack
//! gradient check, span metrics, and weight transfer into the
//! vagueness estimator.

use std::rc::Rc;

use approx::assert_abs_diff_eq;
use avn_core::iv::Pooling;
use avn_core::nn::{combined_loss, dice_loss, gradient_check, MHAConfig};
use avn_core::pretrain::{
    predicted_span_center, pretrain_forward, token_f1, train_pretrain, transfer_mha,
    PretrainConfig, PretrainModel, PretrainSample,
};
use avn_core::tape::Tape;
use avn_core::tensor::Tensor2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

mod common;
use common::randn_mat;

fn toy_model(seed: u64) -> PretrainModel {
    PretrainModel::init(MHAConfig::new(2, 4).unwrap(), 3, seed)
}

#[test]
fn combined_loss_nonnegative_and_zero_at_perfect() {
    // Smooth-0 loss vanishes exactly at a perfect hard prediction.
    let y = [1.0, 0.0, 1.0];
    let perfect = [1.0, 0.0, 1.0];
    assert_abs_diff_eq!(
        dice_loss(&perfect, &y, 0.0).unwrap(),
        0.0,
        epsilon = 1e-12
    );
    // BCE at perfect prediction is clamp-limited but tiny.
    let l = combined_loss(&perfect, &y, 1.0, 1.0, 0.0).unwrap();
    assert!(l >= 0.0 && l < 1e-5, "{l}");
    // Any imperfect prediction is strictly positive.
    let l = combined_loss(&[0.9, 0.1, 0.8], &y, 1.0, 1.0, 0.0).unwrap();
    assert!(l > 0.0);
}

#[test]
fn forward_shapes_and_empty_path_error() {
    let model = toy_model(0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let i_hat = randn_mat(5, 4, &mut rng);
    let path = randn_mat(2, 4, &mut rng);
    let probs = pretrain_forward(&i_hat, &path, &model).unwrap();
    assert_eq!(probs.len(), 5);
    for &p in &probs {
        assert!(p > 0.0 && p < 1.0);
    }
    let empty = Tensor2::zeros(0, 4);
    assert!(pretrain_forward(&i_hat, &empty, &model).is_err());
}

#[test]
fn full_stack_gradient_check() {
    // MHA + BiLSTM + head + sigmoid + BCE + Dice, all through the tape.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = toy_model(3);
    let i_hat = randn_mat(3, 4, &mut rng);
    let path = randn_mat(2, 4, &mut rng);
    let labels = [1.0, 1.0, 0.0];
    let cfg = model.cfg;
    let hidden = model.hidden_dim;
    let mut params = model.params.clone();
    let max_rel = gradient_check(
        &mut params,
        |s, accumulate| {
            let m = PretrainModel {
                params: s.clone(),
                cfg,
                hidden_dim: hidden,
            };
            let mut tape = Tape::new();
            let i = tape.constant(i_hat.clone());
            let p = tape.constant(path.clone());
            let probs = avn_core::pretrain::pretrain_forward_tape(&mut tape, i, p, &m)?;
            let bce = tape.bce_mean(probs, &labels)?;
            let dice = tape.dice_loss(probs, &labels, 1.0)?;
            let loss = tape.add_scaled(bce, dice, 1.0, 1.0)?;
            let v = tape.value(loss).as_scalar();
            if accumulate {
                let grads = tape.backward(loss)?;
                for (name, g) in tape.param_grads(&grads) {
                    s.accumulate_grad(name, g)?;
                }
            }
            Ok(v)
        },
        1e-5,
    )
    .unwrap();
    assert!(max_rel < 1e-4, "max_rel = {max_rel}");
}

#[test]
fn token_f1_and_span_center_unit_cases() {
    assert_abs_diff_eq!(
        token_f1(&[0.9, 0.8, 0.1], &[1.0, 1.0, 0.0], 0.5),
        1.0,
        epsilon = 1e-12
    );
    // tp=1, fp=1, fn=1 -> F1 = 2/4.
    assert_abs_diff_eq!(
        token_f1(&[0.9, 0.8, 0.1], &[1.0, 0.0, 1.0], 0.5),
        0.5,
        epsilon = 1e-12
    );
    assert_eq!(token_f1(&[0.1, 0.2], &[1.0, 1.0], 0.5), 0.0);

    assert_abs_diff_eq!(predicted_span_center(&[0.0, 1.0, 0.0]), 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(predicted_span_center(&[1.0, 0.0, 1.0]), 1.0, epsilon = 1e-12);
    assert_eq!(predicted_span_center(&[0.0, 0.0]), 0.0);
}

fn toy_samples() -> Vec<PretrainSample> {
    // Relevant block in the first half for "early" paths, second half
    // for "late" paths: learnable from path length alone.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut samples = Vec::new();
    for i in 0..16 {
        let late = i % 2 == 1;
        let path_rows = if late { 3 } else { 1 };
        let mut labels = vec![0.0; 6];
        let span = if late { 3..6 } else { 0..3 };
        for l in labels[span].iter_mut() {
            *l = 1.0;
        }
        samples.push(PretrainSample {
            i_hat: Rc::new(randn_mat(6, 4, &mut rng)),
            path_enc: randn_mat(path_rows, 4, &mut rng),
            labels,
            gp_index: usize::from(late) * 3,
            episode_seed: i as u64,
        });
    }
    samples
}

#[test]
fn training_reduces_combined_loss() {
    let cfg = PretrainConfig {
        iterations: 400,
        lr: 1e-2,
        seed: 0,
        ..Default::default()
    };
    let (_, report) = train_pretrain(toy_model(1), &toy_samples(), &cfg).unwrap();
    assert!(
        report.final_loss < report.initial_loss * 0.7,
        "loss {} -> {}",
        report.initial_loss,
        report.final_loss
    );
}

#[test]
fn transfer_copies_mha_bit_exact_and_discards_the_rest() {
    let pre = toy_model(7);
    let iv = transfer_mha(&pre, Pooling::Mean, 7).unwrap();
    for h in 0..2 {
        for p in ["wq", "wk", "wv"] {
            assert_eq!(
                pre.params.get(&format!("pre.mha.h{h}.{p}")).unwrap(),
                iv.params.get(&format!("iv.mha.h{h}.{p}")).unwrap()
            );
        }
    }
    assert_eq!(
        pre.params.get("pre.mha.wo").unwrap(),
        iv.params.get("iv.mha.wo").unwrap()
    );
    // Classifier is freshly initialized, recurrent weights dropped.
    assert!(iv.params.get("iv.cls.w").is_some());
    assert!(iv.params.get("pre.rnn.fw.wx").is_none());
    // Same classifier seed without transfer differs in the MHA.
    let plain = avn_core::iv::IVModel::init(pre.cfg, Pooling::Mean, 7);
    assert_ne!(
        plain.params.get("iv.mha.wo").unwrap(),
        iv.params.get("iv.mha.wo").unwrap()
    );
    assert_eq!(
        plain.params.get("iv.cls.w").unwrap(),
        iv.params.get("iv.cls.w").unwrap()
    );
}

#[test]
fn train_pretrain_rejects_empty_corpus() {
    assert!(train_pretrain(toy_model(0), &[], &PretrainConfig::default()).is_err());
}
