//! Instruction-vagueness estimation: instruction-to-path multi-head
//! attention pooled into a two-class (certain/uncertain) linear
//! classifier, trained against either ground-truth-move or
//! instruction-alignment pseudo-labels.

use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AvnError, Result};
use crate::lang::{embed_instruction, AnnotatedWorld, Episode, Style, Vocab};
use crate::navigator::{
    encode_text_value, navigator_step, GateDecision, MoveChoice, NavigatorModel, StepContext,
    UncertaintyGate,
};
use crate::nn::{
    init_mha, linear_forward, multihead_attention, param, AdamWConfig, MHAConfig, ParamStore,
};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor2;
use crate::world::ExploredGraph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Mean,
    Max,
}

#[derive(Clone, Debug)]
pub struct IVModel {
    pub params: ParamStore,
    pub cfg: MHAConfig,
    pub pooling: Pooling,
}

impl IVModel {
    pub fn init(cfg: MHAConfig, pooling: Pooling, seed: u64) -> Self {
        let d = cfg.model_dim;
        let std = 1.0 / (d as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1f_e571);
        let mut params = ParamStore::new();
        init_mha(&mut params, "iv.mha", &cfg, std, &mut rng);
        params.insert_randn("iv.cls.w", 2, d, std, &mut rng);
        params.insert("iv.cls.b", Tensor2::zeros(1, 2));
        params.insert_randn("iv.stop", 1, d, std, &mut rng);
        IVModel {
            params,
            cfg,
            pooling,
        }
    }
}

/// Encoding of the candidate path P̄_t = P_{t-1} + N̂_t.
#[derive(Clone, Debug)]
pub struct CandidateEncoding {
    /// Ĝ rows of the executed path (plus the proposed node's row for a
    /// node proposal), in path order.
    pub rows: Tensor2,
    /// For a stop proposal: the current node's Ĝ row; the learned stop
    /// marker is added to it inside the forward pass.
    pub stop_base: Option<Vec<f64>>,
}

/// Fetches candidate-path encoding rows out of Ĝ_t.
pub fn candidate_path(
    g_hat: &Tensor2,
    path_rows: &[usize],
    cur_row: usize,
    n_hat_row: Option<usize>,
) -> Result<CandidateEncoding> {
    let mut rows: Vec<usize> = path_rows.to_vec();
    let stop_base = match n_hat_row {
        Some(r) => {
            rows.push(r);
            None
        }
        None => Some(g_hat.row(cur_row).to_vec()),
    };
    let mut enc = Tensor2::zeros(rows.len(), g_hat.cols());
    for (r, &i) in rows.iter().enumerate() {
        if i >= g_hat.rows() {
            return Err(AvnError::dim("candidate_path", g_hat.rows(), i));
        }
        enc.row_mut(r).copy_from_slice(g_hat.row(i));
    }
    Ok(CandidateEncoding {
        rows: enc,
        stop_base,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyDecision {
    /// (certain, uncertain) scores.
    pub scores: [f64; 2],
    pub decision: GateDecision,
}

/// Shared conservative rule: ties resolve to uncertain.
pub fn decide_from_scores(scores: [f64; 2]) -> UncertaintyDecision {
    let decision = if scores[0] > scores[1] {
        GateDecision::Certain
    } else {
        GateDecision::Uncertain
    };
    UncertaintyDecision { scores, decision }
}

/// Builds the IV forward pass on `tape`: MHA(query = Î, kv = candidate
/// path encoding), pooled over token rows, then the 2 x d_k classifier.
/// Returns the score logits node (1 x 2).
pub fn iv_scores_tape(
    tape: &mut Tape,
    i_hat: NodeId,
    cand: &CandidateEncoding,
    model: &IVModel,
) -> Result<NodeId> {
    let enc = {
        let prefix = tape.constant(cand.rows.clone());
        match &cand.stop_base {
            None => prefix,
            Some(base) => {
                let b = tape.constant(Tensor2::row_vector(base));
                let marker = param(tape, &model.params, "iv.stop")?;
                let stop_row = tape.add(b, marker)?;
                if cand.rows.rows() == 0 {
                    stop_row
                } else {
                    tape.concat_rows(&[prefix, stop_row])?
                }
            }
        }
    };
    let mha = multihead_attention(tape, i_hat, enc, &model.params, "iv.mha", &model.cfg)?;
    let pooled = match model.pooling {
        Pooling::Mean => tape.mean_rows(mha.out),
        Pooling::Max => tape.max_rows(mha.out),
    };
    let w = param(tape, &model.params, "iv.cls.w")?;
    let b = param(tape, &model.params, "iv.cls.b")?;
    linear_forward(tape, pooled, w, b)
}

/// Frozen-model vagueness score for one candidate path.
pub fn iv_score(
    i_hat: &Tensor2,
    cand: &CandidateEncoding,
    model: &IVModel,
) -> Result<UncertaintyDecision> {
    let mut tape = Tape::new();
    let i = tape.constant(i_hat.clone());
    let scores = iv_scores_tape(&mut tape, i, cand, model)?;
    let v = tape.value(scores);
    Ok(decide_from_scores([v.get(0, 0), v.get(0, 1)]))
}

/// 0 iff the proposed move equals the ground-truth move.
pub fn label_gp(n_hat: MoveChoice, gt_move: MoveChoice) -> u8 {
    u8::from(n_hat != gt_move)
}

/// 0 iff the sub-instruction aligned with gp[gp_index] is present in
/// the episode's input instruction.
pub fn label_ip(ep: &Episode, gp_index: usize) -> Result<u8> {
    if gp_index >= ep.gp.len() {
        return Err(AvnError::UnsupportedLabeling(format!(
            "gp_index {gp_index} out of range (|GP| = {})",
            ep.gp.len()
        )));
    }
    Ok(u8::from(ep.dropped.contains(&ep.rel_si[gp_index])))
}

/// One supervision example: frozen-navigator features for a
/// teacher-forced step, with both pseudo-labels.
#[derive(Clone, Debug)]
pub struct IvSample {
    pub i_hat: Rc<Tensor2>,
    pub cand: CandidateEncoding,
    /// Pooled alpha features and padded beta for the baseline gates.
    pub alpha_feat: [f64; 3],
    pub beta: Vec<f64>,
    pub label_gp: u8,
    pub label_ip: u8,
    pub style: Style,
}

/// Teacher-forced traversal of every episode's ground-truth path,
/// recording the navigator's proposal and both labels at each step.
/// The ground-truth move is injected after recording so later steps
/// stay on the annotated path.
pub fn collect_iv_dataset(
    navigator: &NavigatorModel,
    worlds: &[AnnotatedWorld],
    vocab: &Vocab,
    corpus: &[Episode],
) -> Result<Vec<IvSample>> {
    let mut samples = Vec::new();
    for ep in corpus {
        let aw = &worlds[ep.world_idx];
        let instr = embed_instruction(ep.input_tokens(), vocab)?;
        let i_hat = Rc::new(encode_text_value(navigator, &instr)?);
        let mut explored = ExploredGraph::at_start(&aw.world, ep.start)?;
        for t in 0..ep.gp.len() {
            let current = ep.gp[t];
            let out = navigator_step(navigator, aw, &explored, current, &i_hat)?;
            let gt_move = if t + 1 < ep.gp.len() {
                MoveChoice::Node(ep.gp[t + 1])
            } else {
                MoveChoice::Stop
            };
            let path_rows: Vec<usize> = ep.gp[..=t]
                .iter()
                .map(|&n| out.row_of(n).expect("path nodes explored"))
                .collect();
            let n_hat_row = match out.n_hat {
                MoveChoice::Node(n) => Some(out.row_of(n).expect("candidate explored")),
                MoveChoice::Stop => None,
            };
            let cand = candidate_path(&out.g_hat, &path_rows, out.cur_row, n_hat_row)?;
            samples.push(IvSample {
                i_hat: Rc::clone(&i_hat),
                cand,
                alpha_feat: crate::navigator::pooled_alpha_features(&out.alpha),
                beta: out.beta.clone(),
                label_gp: label_gp(out.n_hat, gt_move),
                label_ip: label_ip(ep, (t + 1).min(ep.gp.len() - 1))?,
                style: ep.style,
            });
            if t + 1 < ep.gp.len() {
                explored.observe_and_expand(&aw.world, ep.gp[t + 1])?;
            }
        }
    }
    Ok(samples)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelScheme {
    Gp,
    Ip,
}

impl IvSample {
    pub fn label(&self, scheme: LabelScheme) -> u8 {
        match scheme {
            LabelScheme::Gp => self.label_gp,
            LabelScheme::Ip => self.label_ip,
        }
    }
}

#[derive(Clone, Debug)]
pub struct IvTrainConfig {
    pub iterations: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Class imbalance ratio beyond which inverse-frequency weighting
    /// kicks in.
    pub imbalance_threshold: f64,
}

impl Default for IvTrainConfig {
    fn default() -> Self {
        IvTrainConfig {
            iterations: 2000,
            batch: 8,
            lr: 1e-4,
            weight_decay: 0.01,
            seed: 0,
            imbalance_threshold: 2.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct IvTrainReport {
    /// Mean loss over the first and last tenth of iterations.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub class_weighted: bool,
}

/// Per-class weights when one label dominates past the threshold.
pub fn class_weights(labels: impl Iterator<Item = u8>, threshold: f64) -> ([f64; 2], bool) {
    let mut counts = [0usize; 2];
    for l in labels {
        counts[l as usize] += 1;
    }
    let (a, b) = (counts[0] as f64, counts[1] as f64);
    if a == 0.0 || b == 0.0 {
        eprintln!("warning: degenerate one-class label stream; class-weighted loss enabled");
    }
    if a == 0.0 || b == 0.0 || a / b > threshold || b / a > threshold {
        let total = a + b;
        let w = [
            if a > 0.0 { total / (2.0 * a) } else { 0.0 },
            if b > 0.0 { total / (2.0 * b) } else { 0.0 },
        ];
        (w, true)
    } else {
        ([1.0, 1.0], false)
    }
}

/// Trains (or fine-tunes) an IV model with BCE on the two-class
/// softmax against the chosen pseudo-labels. The navigator is not
/// touched; samples carry its frozen outputs.
pub fn train_iv(
    mut model: IVModel,
    samples: &[IvSample],
    scheme: LabelScheme,
    cfg: &IvTrainConfig,
) -> Result<(IVModel, IvTrainReport)> {
    if samples.is_empty() {
        return Err(AvnError::Training("empty IV training set".into()));
    }
    let (weights, class_weighted) =
        class_weights(samples.iter().map(|s| s.label(scheme)), cfg.imbalance_threshold);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x11_7a21);
    let opt = AdamWConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..Default::default()
    };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut cursor = samples.len();
    let mut losses = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let mut batch_losses = Vec::with_capacity(cfg.batch);
        let mut tape = Tape::new();
        for _ in 0..cfg.batch {
            if cursor >= order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let s = &samples[order[cursor]];
            cursor += 1;
            let label = s.label(scheme) as usize;
            let i = tape.constant((*s.i_hat).clone());
            let scores = iv_scores_tape(&mut tape, i, &s.cand, &model)?;
            let ce = tape.softmax_ce(scores, label)?;
            batch_losses.push(tape.scale(ce, weights[label]));
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
    let initial_loss = losses[..tenth].iter().sum::<f64>() / tenth as f64;
    let final_loss = losses[losses.len() - tenth..].iter().sum::<f64>() / tenth as f64;
    Ok((
        model,
        IvTrainReport {
            initial_loss,
            final_loss,
            class_weighted,
        },
    ))
}

/// Rollout gate backed by a trained IV model.
pub struct IvGate {
    pub model: IVModel,
    pub name: &'static str,
}

impl UncertaintyGate for IvGate {
    fn name(&self) -> &'static str {
        self.name
    }

    fn decide(&self, ctx: &StepContext) -> GateDecision {
        let out = ctx.outputs;
        let n_hat_row = match out.n_hat {
            MoveChoice::Node(n) => Some(out.row_of(n).expect("candidate explored")),
            MoveChoice::Stop => None,
        };
        let cand = candidate_path(&out.g_hat, ctx.path_rows, out.cur_row, n_hat_row)
            .expect("rows in range");
        iv_score(&out.i_hat, &cand, &self.model)
            .expect("shapes consistent")
            .decision
    }
}
