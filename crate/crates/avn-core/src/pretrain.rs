//! Relevance-span pre-training: predict which instruction tokens are
//! relevant to the current teacher-forced move, with MHA + BiLSTM and
//! a combined BCE + Dice loss. The trained MHA initializes the IV
//! module.

use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{AvnError, Result};
use crate::iv::{IVModel, Pooling};
use crate::lang::{embed_instruction, AnnotatedWorld, Episode, Style, Vocab};
use crate::navigator::{encode_text_value, navigator_step, NavigatorModel};
use crate::nn::{
    birnn_forward, copy_mha, init_birnn, init_mha, linear_forward, multihead_attention, param,
    AdamWConfig, MHAConfig, ParamStore,
};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor2;
use crate::world::ExploredGraph;

#[derive(Clone, Debug)]
pub struct PretrainModel {
    pub params: ParamStore,
    pub cfg: MHAConfig,
    pub hidden_dim: usize,
}

impl PretrainModel {
    pub fn init(cfg: MHAConfig, hidden_dim: usize, seed: u64) -> Self {
        let d = cfg.model_dim;
        let std = 1.0 / (d as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x93e7_0a11);
        let mut params = ParamStore::new();
        init_mha(&mut params, "pre.mha", &cfg, std, &mut rng);
        init_birnn(&mut params, "pre.rnn", d, hidden_dim, std, &mut rng);
        params.insert_randn("pre.head.w", 1, 2 * hidden_dim, std, &mut rng);
        params.insert("pre.head.b", Tensor2::zeros(1, 1));
        PretrainModel {
            params,
            cfg,
            hidden_dim,
        }
    }
}

/// R̂_t = sigmoid(head(BiLSTM(MHA(query = Î, kv = P_t)))), one
/// probability per instruction token.
pub fn pretrain_forward_tape(
    tape: &mut Tape,
    i_hat: NodeId,
    path_enc: NodeId,
    model: &PretrainModel,
) -> Result<NodeId> {
    if tape.value(path_enc).rows() == 0 {
        return Err(AvnError::Domain("pretrain_forward: empty path".into()));
    }
    let mha = multihead_attention(tape, i_hat, path_enc, &model.params, "pre.mha", &model.cfg)?;
    let rnn = birnn_forward(tape, mha.out, &model.params, "pre.rnn", model.hidden_dim)?;
    let w = param(tape, &model.params, "pre.head.w")?;
    let b = param(tape, &model.params, "pre.head.b")?;
    let logits = linear_forward(tape, rnn, w, b)?;
    Ok(tape.sigmoid(logits))
}

/// Frozen forward as plain values.
pub fn pretrain_forward(
    i_hat: &Tensor2,
    path_enc: &Tensor2,
    model: &PretrainModel,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let i = tape.constant(i_hat.clone());
    let p = tape.constant(path_enc.clone());
    let out = pretrain_forward_tape(&mut tape, i, p, model)?;
    Ok(tape.value(out).data().to_vec())
}

/// One alignment example: Î of the fine-grained instruction, the
/// teacher-forced path encoding P_t, and the binary token-relevance
/// target for the move at t.
#[derive(Clone, Debug)]
pub struct PretrainSample {
    pub i_hat: Rc<Tensor2>,
    pub path_enc: Tensor2,
    pub labels: Vec<f64>,
    /// Ground-truth step index (destination gp index), for span-shift
    /// statistics.
    pub gp_index: usize,
    pub episode_seed: u64,
}

/// Teacher-forced traversal of the ground-truth path collecting one
/// sample per step. Requires alignment (present on all generated
/// episodes) and fine-grained instructions.
pub fn collect_pretrain_dataset(
    navigator: &NavigatorModel,
    worlds: &[AnnotatedWorld],
    vocab: &Vocab,
    corpus: &[Episode],
) -> Result<Vec<PretrainSample>> {
    let mut samples = Vec::new();
    for ep in corpus {
        if ep.style != Style::Orig {
            return Err(AvnError::UnsupportedLabeling(
                "pretraining requires fine-grained instructions".into(),
            ));
        }
        let aw = &worlds[ep.world_idx];
        let instr = embed_instruction(&ep.i_orig, vocab)?;
        let i_hat = Rc::new(encode_text_value(navigator, &instr)?);
        let mut explored = ExploredGraph::at_start(&aw.world, ep.start)?;
        for t in 0..ep.gp.len() {
            let out = navigator_step(navigator, aw, &explored, ep.gp[t], &i_hat)?;
            let mut path_enc = Tensor2::zeros(t + 1, out.g_hat.cols());
            for (r, &n) in ep.gp[..=t].iter().enumerate() {
                let row = out.row_of(n).expect("path nodes explored");
                path_enc.row_mut(r).copy_from_slice(out.g_hat.row(row));
            }
            let dest = (t + 1).min(ep.gp.len() - 1);
            samples.push(PretrainSample {
                i_hat: Rc::clone(&i_hat),
                path_enc,
                labels: ep.relevance_labels(dest)?,
                gp_index: dest,
                episode_seed: ep.seed,
            });
            if t + 1 < ep.gp.len() {
                explored.observe_and_expand(&aw.world, ep.gp[t + 1])?;
            }
        }
    }
    Ok(samples)
}

#[derive(Clone, Debug)]
pub struct PretrainConfig {
    pub iterations: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub lambda_bce: f64,
    pub lambda_dice: f64,
    pub dice_smooth: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            iterations: 7000,
            batch: 8,
            lr: 1e-4,
            weight_decay: 0.01,
            lambda_bce: 1.0,
            lambda_dice: 1.0,
            dice_smooth: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PretrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
}

pub fn train_pretrain(
    mut model: PretrainModel,
    samples: &[PretrainSample],
    cfg: &PretrainConfig,
) -> Result<(PretrainModel, PretrainReport)> {
    if samples.is_empty() {
        return Err(AvnError::Training("empty pretraining set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9147_0000);
    let opt = AdamWConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..Default::default()
    };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut cursor = samples.len();
    let mut losses = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let mut tape = Tape::new();
        let mut batch_losses = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            if cursor >= order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let s = &samples[order[cursor]];
            cursor += 1;
            let i = tape.constant((*s.i_hat).clone());
            let p = tape.constant(s.path_enc.clone());
            let probs = pretrain_forward_tape(&mut tape, i, p, &model)?;
            let bce = tape.bce_mean(probs, &s.labels)?;
            let dice = tape.dice_loss(probs, &s.labels, cfg.dice_smooth)?;
            batch_losses.push(tape.add_scaled(bce, dice, cfg.lambda_bce, cfg.lambda_dice)?);
        }
        let total = tape.sum_scalars(&batch_losses)?;
        let scaled = tape.scale(total, 1.0 / cfg.batch as f64);
        losses.push(tape.value(scaled).as_scalar());
        let grads = tape.backward(scaled)?;
        for (name, g) in tape.param_grads(&grads) {
            model.params.accumulate_grad(name, g)?;
        }
        model.params.adamw_step(&opt)?;
    }
    let tenth = (cfg.iterations / 10).max(1);
    let report = PretrainReport {
        initial_loss: losses[..tenth].iter().sum::<f64>() / tenth as f64,
        final_loss: losses[losses.len() - tenth..].iter().sum::<f64>() / tenth as f64,
    };
    Ok((model, report))
}

/// Token F1 of thresholded predictions against binary labels.
pub fn token_f1(probs: &[f64], labels: &[f64], threshold: f64) -> f64 {
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fnn = 0.0;
    for (&p, &y) in probs.iter().zip(labels) {
        let pred = p >= threshold;
        let pos = y >= 0.5;
        match (pred, pos) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fnn += 1.0,
            _ => {}
        }
    }
    if tp == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fnn)
    }
}

/// Mean token F1 over a validation set.
pub fn validation_f1(
    model: &PretrainModel,
    samples: &[PretrainSample],
    threshold: f64,
) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for s in samples {
        let probs = pretrain_forward(&s.i_hat, &s.path_enc, model)?;
        total += token_f1(&probs, &s.labels, threshold);
    }
    Ok(total / samples.len() as f64)
}

/// Center of mass of the predicted relevance over token positions.
pub fn predicted_span_center(probs: &[f64]) -> f64 {
    let mass: f64 = probs.iter().sum();
    if mass == 0.0 {
        return 0.0;
    }
    probs
        .iter()
        .enumerate()
        .map(|(i, &p)| i as f64 * p)
        .sum::<f64>()
        / mass
}

/// Fresh IV model whose MHA weights are copies of the pretrained
/// ones; classifier and stop marker are freshly initialized and the
/// BiLSTM and token head are discarded.
pub fn transfer_mha(
    pretrained: &PretrainModel,
    pooling: Pooling,
    classifier_seed: u64,
) -> Result<IVModel> {
    let mut iv = IVModel::init(pretrained.cfg, pooling, classifier_seed);
    copy_mha(
        &pretrained.params,
        "pre.mha",
        &mut iv.params,
        "iv.mha",
        &pretrained.cfg,
    )?;
    Ok(iv)
}
