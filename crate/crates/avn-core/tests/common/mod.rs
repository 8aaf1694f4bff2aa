//! Shared helpers for the integration suites: plain-loop matrix
//! arithmetic (deliberately independent of the tensor/tape code) and a
//! step-by-step multi-head attention reference evaluation.

#![allow(dead_code)]

use avn_core::nn::{MHAConfig, ParamStore};
use avn_core::tensor::Tensor2;
use rand_chacha::ChaCha8Rng;

pub fn randn_mat(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor2 {
    let mut store = ParamStore::new();
    store.insert_randn("t", rows, cols, 0.7, rng);
    store.get("t").unwrap().clone()
}

pub fn mat(t: &Tensor2) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn mm(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            for l in 0..k {
                out[i][j] += a[i][l] * b[l][j];
            }
        }
    }
    out
}

pub fn transpose(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, m) = (a.len(), a[0].len());
    (0..m).map(|j| (0..n).map(|i| a[i][j]).collect()).collect()
}

pub fn softmax_rows_ref(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .map(|row| {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let ex: Vec<f64> = row.iter().map(|v| (v - mx).exp()).collect();
            let s: f64 = ex.iter().sum();
            ex.iter().map(|v| v / s).collect()
        })
        .collect()
}

/// Step-by-step reference evaluation of multi-head attention from the
/// same stored parameters: per-head q/k/v projection, scaled-dot
/// softmax, value mix, concatenation, output projection, and
/// head-averaged attention.
pub fn mha_reference(
    query: &Tensor2,
    kv: &Tensor2,
    store: &ParamStore,
    prefix: &str,
    cfg: &MHAConfig,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d = cfg.model_dim;
    let mut head_outs: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut attn_sum = vec![vec![0.0; kv.rows()]; query.rows()];
    for h in 0..cfg.num_heads {
        let wq = mat(store.get(&format!("{prefix}.h{h}.wq")).unwrap());
        let wk = mat(store.get(&format!("{prefix}.h{h}.wk")).unwrap());
        let wv = mat(store.get(&format!("{prefix}.h{h}.wv")).unwrap());
        let q = mm(&mat(query), &transpose(&wq));
        let k = mm(&mat(kv), &transpose(&wk));
        let v = mm(&mat(kv), &transpose(&wv));
        let mut logits = mm(&q, &transpose(&k));
        for row in logits.iter_mut() {
            for x in row.iter_mut() {
                *x /= (d as f64).sqrt();
            }
        }
        let probs = softmax_rows_ref(&logits);
        for (r, row) in probs.iter().enumerate() {
            for (c, &p) in row.iter().enumerate() {
                attn_sum[r][c] += p / cfg.num_heads as f64;
            }
        }
        head_outs.push(mm(&probs, &v));
    }
    let cat: Vec<Vec<f64>> = (0..query.rows())
        .map(|r| head_outs.iter().flat_map(|h| h[r].iter().copied()).collect())
        .collect();
    let wo = mat(store.get(&format!("{prefix}.wo")).unwrap());
    (mm(&cat, &wo), attn_sum)
}
