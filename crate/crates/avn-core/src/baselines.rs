//! Baseline uncertainty gates: split conformal prediction over action
//! confidences, a direct linear classifier on attention/action
//! features, and an entropy-pseudo-label variant of the same
//! classifier.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AvnError, Result};
use crate::iv::{decide_from_scores, IvSample, LabelScheme};
use crate::navigator::{GateDecision, StepContext, UncertaintyGate};
use crate::nn::{AdamWConfig, ParamStore};
use crate::tape::Tape;
use crate::tensor::Tensor2;

/// Split-conformal calibration over top action probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CpCalibration {
    pub threshold: f64,
    pub tolerance: f64,
    pub n_calibration: usize,
}

/// `tolerance` is an error tolerance: only the most confident
/// (1 − tolerance) fraction of moves is accepted unassisted, so the
/// gate's acceptance rate on the calibration set is at least
/// 1 − tolerance (finite-sample (n+1) ceiling adjustment). θ is the
/// matching upper quantile of top probabilities on calibration steps
/// where the proposal was correct; proposals whose top probability
/// falls below θ are flagged uncertain. As tolerance → 1 the
/// threshold drops to the minimum calibration score (accept
/// everything). Falls back to the full score set when no calibration
/// step was correct.
pub fn cp_calibrate(calib: &[(f64, bool)], tolerance: f64) -> Result<CpCalibration> {
    if calib.is_empty() {
        return Err(AvnError::Calibration("empty calibration set".into()));
    }
    if !(0.0..=1.0).contains(&tolerance) {
        return Err(AvnError::Calibration(format!(
            "tolerance {tolerance} outside [0, 1]"
        )));
    }
    let mut sorted: Vec<f64> = calib
        .iter()
        .filter(|(_, correct)| *correct)
        .map(|(p, _)| *p)
        .collect();
    if sorted.is_empty() {
        eprintln!("warning: no correct calibration steps; calibrating on all scores");
        sorted = calib.iter().map(|(p, _)| *p).collect();
    }
    if sorted.iter().any(|v| !v.is_finite()) {
        return Err(AvnError::Calibration("non-finite calibration score".into()));
    }
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    // k = how many calibration scores must clear the threshold.
    let k = (((n + 1) as f64) * (1.0 - tolerance)).ceil() as usize;
    let threshold = if k == 0 || k >= n {
        sorted[0]
    } else {
        sorted[n - k]
    };
    Ok(CpCalibration {
        threshold,
        tolerance,
        n_calibration: n,
    })
}

impl CpCalibration {
    pub fn decide(&self, beta: &[f64]) -> GateDecision {
        let top = beta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if top >= self.threshold {
            GateDecision::Certain
        } else {
            GateDecision::Uncertain
        }
    }
}

pub struct CpGate {
    pub calibration: CpCalibration,
}

impl UncertaintyGate for CpGate {
    fn name(&self) -> &'static str {
        "cp"
    }
    fn decide(&self, ctx: &StepContext) -> GateDecision {
        self.calibration.decide(&ctx.outputs.beta)
    }
}

/// Normalized action-distribution entropy H(β) / ln k; 0 when the
/// distribution is degenerate (k ≤ 1).
pub fn normalized_entropy(beta: &[f64]) -> f64 {
    if beta.len() <= 1 {
        return 0.0;
    }
    let h: f64 = -beta
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>();
    h / (beta.len() as f64).ln()
}

/// Entropy pseudo-label: uncertain when the action distribution is
/// within ε of maximal entropy.
pub fn entropy_label(beta: &[f64], epsilon: f64) -> u8 {
    u8::from(normalized_entropy(beta) >= 1.0 - epsilon)
}

/// How the linear gate builds its feature vector from a step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    /// Pooled α features plus the action distribution, zero-padded to
    /// the calibration-time width.
    AlphaBeta,
    /// Pooled α features only.
    Alpha,
}

/// Linear two-class gate over per-step features; covers both the
/// direct supervised baseline and the entropy-label variant, which
/// differ only in features and training labels.
#[derive(Clone, Debug)]
pub struct LinearGate {
    pub params: ParamStore,
    pub features: FeatureSet,
    /// Fixed β padding width (only used by `AlphaBeta`).
    pub beta_pad: usize,
    pub name: &'static str,
}

const ALPHA_DIM: usize = 3;

impl LinearGate {
    pub fn feature_dim(&self) -> usize {
        match self.features {
            FeatureSet::AlphaBeta => ALPHA_DIM + self.beta_pad,
            FeatureSet::Alpha => ALPHA_DIM,
        }
    }

    fn init(features: FeatureSet, beta_pad: usize, name: &'static str, seed: u64) -> Self {
        let mut gate = LinearGate {
            params: ParamStore::new(),
            features,
            beta_pad,
            name,
        };
        let f = gate.feature_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xba5e_11fe);
        gate.params
            .insert_randn("gate.w", 2, f, 1.0 / (f as f64).sqrt(), &mut rng);
        gate.params.insert("gate.b", Tensor2::zeros(1, 2));
        gate
    }

    /// Feature vector for one step. β longer than the padding width is
    /// truncated after moving its max into view, so the top probability
    /// is never masked out.
    pub fn feature_vec(&self, alpha_feat: &[f64; 3], beta: &[f64]) -> Vec<f64> {
        let mut v = alpha_feat.to_vec();
        if self.features == FeatureSet::AlphaBeta {
            let mut b = beta.to_vec();
            if b.len() > self.beta_pad {
                let (top_idx, _) = b
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (i, &p)| {
                        if p > acc.1 {
                            (i, p)
                        } else {
                            acc
                        }
                    });
                if top_idx >= self.beta_pad {
                    b.swap(0, top_idx);
                }
                b.truncate(self.beta_pad);
            }
            b.resize(self.beta_pad, 0.0);
            v.extend_from_slice(&b);
        }
        v
    }

    pub fn scores(&self, features: &[f64]) -> Result<[f64; 2]> {
        let w = self
            .params
            .get("gate.w")
            .ok_or_else(|| AvnError::Checkpoint("missing gate.w".into()))?;
        let b = self
            .params
            .get("gate.b")
            .ok_or_else(|| AvnError::Checkpoint("missing gate.b".into()))?;
        if features.len() != w.cols() {
            return Err(AvnError::dim("linear gate", w.cols(), features.len()));
        }
        let mut out = [b.get(0, 0), b.get(0, 1)];
        for (c, s) in out.iter_mut().enumerate() {
            for (j, &x) in features.iter().enumerate() {
                *s += w.get(c, j) * x;
            }
        }
        Ok(out)
    }
}

impl UncertaintyGate for LinearGate {
    fn name(&self) -> &'static str {
        self.name
    }
    fn decide(&self, ctx: &StepContext) -> GateDecision {
        let alpha_feat = crate::navigator::pooled_alpha_features(&ctx.outputs.alpha);
        let feats = self.feature_vec(&alpha_feat, &ctx.outputs.beta);
        decide_from_scores(self.scores(&feats).expect("feature width fixed")).decision
    }
}

#[derive(Clone, Debug)]
pub struct BaselineTrainConfig {
    pub iterations: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub imbalance_threshold: f64,
    /// ε for the entropy pseudo-labels.
    pub entropy_epsilon: f64,
}

impl Default for BaselineTrainConfig {
    fn default() -> Self {
        BaselineTrainConfig {
            iterations: 2000,
            batch: 16,
            lr: 1e-2,
            weight_decay: 0.01,
            seed: 0,
            imbalance_threshold: 9.0,
            entropy_epsilon: 0.1,
        }
    }
}

fn train_linear_gate(
    mut gate: LinearGate,
    features: &[Vec<f64>],
    labels: &[u8],
    cfg: &BaselineTrainConfig,
) -> Result<LinearGate> {
    if features.is_empty() {
        return Err(AvnError::Training("empty baseline training set".into()));
    }
    let (weights, _) =
        crate::iv::class_weights(labels.iter().copied(), cfg.imbalance_threshold);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xba5e_7a11);
    let opt = AdamWConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..Default::default()
    };
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut cursor = features.len();
    for _ in 0..cfg.iterations {
        let mut tape = Tape::new();
        let mut batch_losses = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            if cursor >= order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let idx = order[cursor];
            cursor += 1;
            let label = labels[idx] as usize;
            let x = tape.constant(Tensor2::row_vector(&features[idx]));
            let w = crate::nn::param(&mut tape, &gate.params, "gate.w")?;
            let b = crate::nn::param(&mut tape, &gate.params, "gate.b")?;
            let logits = crate::nn::linear_forward(&mut tape, x, w, b)?;
            let ce = tape.softmax_ce(logits, label)?;
            batch_losses.push(tape.scale(ce, weights[label]));
        }
        let total = tape.sum_scalars(&batch_losses)?;
        let scaled = tape.scale(total, 1.0 / cfg.batch as f64);
        let grads = tape.backward(scaled)?;
        for (name, g) in tape.param_grads(&grads) {
            gate.params.accumulate_grad(name, g)?;
        }
        gate.params.adamw_step(&opt)?;
    }
    Ok(gate)
}

/// Direct supervised baseline: pooled α features plus padded β,
/// trained against the ground-truth-move labels.
pub fn train_base_gate(samples: &[IvSample], cfg: &BaselineTrainConfig) -> Result<LinearGate> {
    let beta_pad = samples.iter().map(|s| s.beta.len()).max().unwrap_or(1);
    let gate = LinearGate::init(FeatureSet::AlphaBeta, beta_pad, "base", cfg.seed);
    let features: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| gate.feature_vec(&s.alpha_feat, &s.beta))
        .collect();
    let labels: Vec<u8> = samples.iter().map(|s| s.label(LabelScheme::Gp)).collect();
    train_linear_gate(gate, &features, &labels, cfg)
}

/// Entropy-label variant: pooled α features only, trained against
/// normalized-entropy pseudo-labels of the action distribution.
pub fn train_vdn_gate(samples: &[IvSample], cfg: &BaselineTrainConfig) -> Result<LinearGate> {
    let gate = LinearGate::init(FeatureSet::Alpha, 0, "vdn", cfg.seed);
    let features: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| gate.feature_vec(&s.alpha_feat, &s.beta))
        .collect();
    let labels: Vec<u8> = samples
        .iter()
        .map(|s| entropy_label(&s.beta, cfg.entropy_epsilon))
        .collect();
    train_linear_gate(gate, &features, &labels, cfg)
}

#[derive(Serialize, Deserialize)]
struct LinearGateCkpt {
    format_version: u32,
    features: FeatureSet,
    beta_pad: usize,
    params: serde_json::Value,
}

impl LinearGate {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let ckpt = LinearGateCkpt {
            format_version: crate::nn::CHECKPOINT_VERSION,
            features: self.features,
            beta_pad: self.beta_pad,
            params: serde_json::from_str(&self.params.to_json()?)?,
        };
        let json = serde_json::to_string(&ckpt)?;
        std::fs::write(path, json).map_err(|e| AvnError::io(path.display().to_string(), e))
    }

    pub fn load(path: &std::path::Path, name: &'static str) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| AvnError::io(path.display().to_string(), e))?;
        let ckpt: LinearGateCkpt = serde_json::from_str(&raw)?;
        if ckpt.format_version != crate::nn::CHECKPOINT_VERSION {
            return Err(AvnError::Checkpoint(format!(
                "unsupported gate checkpoint version {}",
                ckpt.format_version
            )));
        }
        Ok(LinearGate {
            params: ParamStore::from_json(&serde_json::to_string(&ckpt.params)?)?,
            features: ckpt.features,
            beta_pad: ckpt.beta_pad,
            name,
        })
    }
}

impl CpCalibration {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| AvnError::io(path.display().to_string(), e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| AvnError::io(path.display().to_string(), e))?;
        Ok(serde_json::from_str(&raw)?)
    }
}

/// Fraction of samples where the entropy pseudo-label disagrees with
/// the ground-truth-move label.
pub fn entropy_label_disagreement(samples: &[IvSample], epsilon: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let n = samples
        .iter()
        .filter(|s| entropy_label(&s.beta, epsilon) != s.label(LabelScheme::Gp))
        .count();
    n as f64 / samples.len() as f64
}
