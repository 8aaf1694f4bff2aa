//! Forward builders for the fixed layer set: linear, scaled-dot
//! attention, multi-head attention and a bidirectional LSTM.
//!
//! Builders record onto a [`Tape`] and read parameters out of a
//! [`ParamStore`] by dotted name, so the same code path serves
//! training (backward over the tape) and frozen evaluation.

use rand_chacha::ChaCha8Rng;

use crate::error::{AvnError, Result};
use crate::nn::params::ParamStore;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor2;

#[derive(Clone, Copy, Debug)]
pub struct MHAConfig {
    pub num_heads: usize,
    pub model_dim: usize,
}

impl MHAConfig {
    pub fn new(num_heads: usize, model_dim: usize) -> Result<Self> {
        if num_heads == 0 || model_dim % num_heads != 0 {
            return Err(AvnError::Config(format!(
                "model_dim {model_dim} not divisible by num_heads {num_heads}"
            )));
        }
        Ok(MHAConfig {
            num_heads,
            model_dim,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }
}

/// Register a stored parameter as a tape leaf.
pub fn param(tape: &mut Tape, store: &ParamStore, name: &str) -> Result<NodeId> {
    let v = store
        .get(name)
        .ok_or_else(|| AvnError::OptimState(format!("missing parameter {name}")))?;
    Ok(tape.param(name, v.clone()))
}

/// y_row = W . x_row + b, i.e. y = x W^T broadcast-plus b.
/// `weight` maps input cols to output rows (out x in).
pub fn linear_forward(tape: &mut Tape, x: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
    let (xv, wv) = (tape.value(x), tape.value(weight));
    if xv.cols() != wv.cols() {
        return Err(AvnError::dim("linear_forward", xv.shape_str(), wv.shape_str()));
    }
    let xw = tape.matmul_nt(x, weight)?;
    tape.add_row_broadcast(xw, bias)
}

pub struct AttentionOut {
    pub out: NodeId,
    /// Row-stochastic attention probabilities (query rows x key rows).
    pub probs: NodeId,
}

/// softmax(q k^T / sqrt(scale_dim)) v
pub fn scaled_dot_attention(
    tape: &mut Tape,
    query: NodeId,
    key: NodeId,
    value: NodeId,
    scale_dim: usize,
) -> Result<AttentionOut> {
    let (qv, kv, vv) = (tape.value(query), tape.value(key), tape.value(value));
    if qv.cols() != kv.cols() {
        return Err(AvnError::dim("scaled_dot_attention q/k", qv.shape_str(), kv.shape_str()));
    }
    if kv.rows() != vv.rows() {
        return Err(AvnError::dim("scaled_dot_attention k/v", kv.shape_str(), vv.shape_str()));
    }
    let logits = tape.matmul_nt(query, key)?;
    let scaled = tape.scale(logits, 1.0 / (scale_dim as f64).sqrt());
    let probs = tape.softmax_rows(scaled);
    let out = tape.matmul(probs, value)?;
    Ok(AttentionOut { out, probs })
}

/// Seeds MHA parameters under `prefix`: per-head projections
/// `{prefix}.h{i}.wq|wk|wv` (head_dim x d_k) and `{prefix}.wo` (d_k x d_k).
pub fn init_mha(
    store: &mut ParamStore,
    prefix: &str,
    cfg: &MHAConfig,
    std: f64,
    rng: &mut ChaCha8Rng,
) {
    let d = cfg.model_dim;
    let hd = cfg.head_dim();
    for i in 0..cfg.num_heads {
        store.insert_randn(format!("{prefix}.h{i}.wq"), hd, d, std, rng);
        store.insert_randn(format!("{prefix}.h{i}.wk"), hd, d, std, rng);
        store.insert_randn(format!("{prefix}.h{i}.wv"), hd, d, std, rng);
    }
    store.insert_randn(format!("{prefix}.wo"), d, d, std, rng);
}

/// Copy MHA parameters from one prefix/store to another.
pub fn copy_mha(
    src: &ParamStore,
    src_prefix: &str,
    dst: &mut ParamStore,
    dst_prefix: &str,
    cfg: &MHAConfig,
) -> Result<()> {
    let mut names = vec!["wo".to_string()];
    for i in 0..cfg.num_heads {
        for p in ["wq", "wk", "wv"] {
            names.push(format!("h{i}.{p}"));
        }
    }
    for n in names {
        let sname = format!("{src_prefix}.{n}");
        let dname = format!("{dst_prefix}.{n}");
        let v = src
            .get(&sname)
            .ok_or_else(|| AvnError::Checkpoint(format!("missing parameter {sname}")))?;
        match dst.get(&dname) {
            Some(existing) if existing.shape() != v.shape() => {
                return Err(AvnError::dim("copy_mha", existing.shape_str(), v.shape_str()));
            }
            _ => {}
        }
        dst.insert(dname, v.clone());
    }
    Ok(())
}

pub struct MhaOut {
    pub out: NodeId,
    /// Head-averaged attention probabilities (query rows x kv rows),
    /// row-stochastic.
    pub attn: NodeId,
}

/// Concat(head_1..head_h) W^O with per-head projected scaled-dot
/// attention. Logits are scaled by sqrt(model_dim).
pub fn multihead_attention(
    tape: &mut Tape,
    query_seq: NodeId,
    kv_seq: NodeId,
    store: &ParamStore,
    prefix: &str,
    cfg: &MHAConfig,
) -> Result<MhaOut> {
    let d = cfg.model_dim;
    let qv = tape.value(query_seq);
    let kvv = tape.value(kv_seq);
    if qv.cols() != d || kvv.cols() != d {
        return Err(AvnError::dim(
            "multihead_attention",
            format!("{}/{}", qv.shape_str(), kvv.shape_str()),
            format!("d_k={d}"),
        ));
    }
    let mut heads = Vec::with_capacity(cfg.num_heads);
    let mut probs = Vec::with_capacity(cfg.num_heads);
    for i in 0..cfg.num_heads {
        let wq = param(tape, store, &format!("{prefix}.h{i}.wq"))?;
        let wk = param(tape, store, &format!("{prefix}.h{i}.wk"))?;
        let wv = param(tape, store, &format!("{prefix}.h{i}.wv"))?;
        let q = tape.matmul_nt(query_seq, wq)?;
        let k = tape.matmul_nt(kv_seq, wk)?;
        let v = tape.matmul_nt(kv_seq, wv)?;
        let att = scaled_dot_attention(tape, q, k, v, d)?;
        heads.push(att.out);
        probs.push(att.probs);
    }
    let cat = tape.concat_cols(&heads)?;
    let wo = param(tape, store, &format!("{prefix}.wo"))?;
    let out = tape.matmul(cat, wo)?;
    let mut attn = probs[0];
    for &p in &probs[1..] {
        attn = tape.add(attn, p)?;
    }
    let attn = tape.scale(attn, 1.0 / cfg.num_heads as f64);
    Ok(MhaOut { out, attn })
}

/// Seeds BiLSTM parameters under `prefix` for input dim `d` and hidden
/// dim `h`: `{prefix}.fw|bw.wx` (4h x d), `.wh` (4h x h), `.b` (1 x 4h).
pub fn init_birnn(
    store: &mut ParamStore,
    prefix: &str,
    input_dim: usize,
    hidden_dim: usize,
    std: f64,
    rng: &mut ChaCha8Rng,
) {
    for dir in ["fw", "bw"] {
        store.insert_randn(format!("{prefix}.{dir}.wx"), 4 * hidden_dim, input_dim, std, rng);
        store.insert_randn(format!("{prefix}.{dir}.wh"), 4 * hidden_dim, hidden_dim, std, rng);
        store.insert(format!("{prefix}.{dir}.b"), Tensor2::zeros(1, 4 * hidden_dim));
    }
}

/// Bidirectional LSTM over a row sequence. Output row t is the
/// concatenation of the forward hidden state at t and the backward
/// hidden state at t (2 * hidden_dim cols). Gate order: input, forget,
/// cell, output.
pub fn birnn_forward(
    tape: &mut Tape,
    seq: NodeId,
    store: &ParamStore,
    prefix: &str,
    hidden_dim: usize,
) -> Result<NodeId> {
    let len = tape.value(seq).rows();
    if len == 0 {
        return Err(AvnError::Domain("birnn_forward: empty sequence".into()));
    }
    let fw = lstm_direction(tape, seq, store, &format!("{prefix}.fw"), hidden_dim, false)?;
    let bw = lstm_direction(tape, seq, store, &format!("{prefix}.bw"), hidden_dim, true)?;
    let fw_stack = tape.concat_rows(&fw)?;
    let bw_stack = tape.concat_rows(&bw)?;
    tape.concat_cols(&[fw_stack, bw_stack])
}

fn lstm_direction(
    tape: &mut Tape,
    seq: NodeId,
    store: &ParamStore,
    prefix: &str,
    h_dim: usize,
    reverse: bool,
) -> Result<Vec<NodeId>> {
    let len = tape.value(seq).rows();
    let wx = param(tape, store, &format!("{prefix}.wx"))?;
    let wh = param(tape, store, &format!("{prefix}.wh"))?;
    let b = param(tape, store, &format!("{prefix}.b"))?;
    let mut h = tape.constant(Tensor2::zeros(1, h_dim));
    let mut c = tape.constant(Tensor2::zeros(1, h_dim));
    let order: Vec<usize> = if reverse {
        (0..len).rev().collect()
    } else {
        (0..len).collect()
    };
    let mut outputs = vec![None; len];
    for &t in &order {
        let x_t = tape.gather_rows(seq, &[t])?;
        let xw = tape.matmul_nt(x_t, wx)?;
        let hw = tape.matmul_nt(h, wh)?;
        let pre = tape.add(xw, hw)?;
        let pre = tape.add_row_broadcast(pre, b)?;
        let i_g = tape.slice_cols(pre, 0, h_dim)?;
        let f_g = tape.slice_cols(pre, h_dim, h_dim)?;
        let g_g = tape.slice_cols(pre, 2 * h_dim, h_dim)?;
        let o_g = tape.slice_cols(pre, 3 * h_dim, h_dim)?;
        let i_s = tape.sigmoid(i_g);
        let f_s = tape.sigmoid(f_g);
        let g_t = tape.tanh(g_g);
        let o_s = tape.sigmoid(o_g);
        let fc = tape.mul(f_s, c)?;
        let ig = tape.mul(i_s, g_t)?;
        c = tape.add(fc, ig)?;
        let ct = tape.tanh(c);
        h = tape.mul(o_s, ct)?;
        outputs[t] = Some(h);
    }
    Ok(outputs.into_iter().map(|o| o.unwrap()).collect())
}
