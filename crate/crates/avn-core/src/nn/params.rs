//! Named parameter storage with per-parameter gradient and optimizer
//! moment slots, plus checkpoint (de)serialization.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AvnError, Result};
use crate::tensor::Tensor2;

#[derive(Clone, Debug)]
struct ParamEntry {
    value: Tensor2,
    grad: Tensor2,
    grad_touched: bool,
    m1: Tensor2,
    m2: Tensor2,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
    step: u64,
}

#[derive(Clone, Copy, Debug)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor2) {
        let (r, c) = value.shape();
        self.entries.insert(
            name.into(),
            ParamEntry {
                value,
                grad: Tensor2::zeros(r, c),
                grad_touched: false,
                m1: Tensor2::zeros(r, c),
                m2: Tensor2::zeros(r, c),
            },
        );
    }

    /// Seeded Gaussian init scaled by `std`.
    pub fn insert_randn(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut ChaCha8Rng,
    ) {
        let mut t = Tensor2::zeros(rows, cols);
        for v in t.data_mut() {
            *v = gaussian(rng) * std;
        }
        self.insert(name, t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor2> {
        self.entries.get(name).map(|e| &e.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor2> {
        self.entries.get_mut(name).map(|e| &mut e.value)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn accumulate_grad(&mut self, name: &str, g: &Tensor2) -> Result<()> {
        let e = self
            .entries
            .get_mut(name)
            .ok_or_else(|| AvnError::OptimState(format!("unknown parameter {name}")))?;
        if e.value.shape() != g.shape() {
            return Err(AvnError::dim("accumulate_grad", e.value.shape_str(), g.shape_str()));
        }
        e.grad.add_assign(g);
        e.grad_touched = true;
        Ok(())
    }

    pub fn scale_grads(&mut self, c: f64) {
        for e in self.entries.values_mut() {
            e.grad = e.grad.scale(c);
        }
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.fill(0.0);
            e.grad_touched = false;
        }
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor2> {
        self.entries.get(name).map(|e| &e.grad)
    }

    /// One decoupled-weight-decay adaptive step over every parameter.
    /// Gradients must have been populated this step; they are zeroed on
    /// completion.
    pub fn adamw_step(&mut self, cfg: &AdamWConfig) -> Result<()> {
        if self.entries.is_empty() {
            return Err(AvnError::OptimState("adamw_step on empty store".into()));
        }
        if !self.entries.values().any(|e| e.grad_touched) {
            return Err(AvnError::OptimState(
                "adamw_step called with no gradients populated".into(),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for e in self.entries.values_mut() {
            for i in 0..e.value.data().len() {
                let g = e.grad.data()[i];
                let m1 = cfg.beta1 * e.m1.data()[i] + (1.0 - cfg.beta1) * g;
                let m2 = cfg.beta2 * e.m2.data()[i] + (1.0 - cfg.beta2) * g * g;
                e.m1.data_mut()[i] = m1;
                e.m2.data_mut()[i] = m2;
                let mhat = m1 / bc1;
                let vhat = m2 / bc2;
                let p = &mut e.value.data_mut()[i];
                *p -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
                *p -= cfg.lr * cfg.weight_decay * *p;
            }
            if !e.value.is_finite() {
                return Err(AvnError::Numeric("non-finite parameter after adamw".into()));
            }
        }
        self.zero_grads();
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    loop {
        let u1: f64 = rng.gen::<f64>();
        let u2: f64 = rng.gen::<f64>();
        if u1 > 1e-300 {
            return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointParam {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Flat JSON checkpoint: {format_version, params: {name -> shape + row-major values}}.
#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    params: BTreeMap<String, CheckpointParam>,
}

impl ParamStore {
    pub fn to_json(&self) -> Result<String> {
        let ckpt = Checkpoint {
            format_version: CHECKPOINT_VERSION,
            params: self
                .entries
                .iter()
                .map(|(k, e)| {
                    (
                        k.clone(),
                        CheckpointParam {
                            rows: e.value.rows(),
                            cols: e.value.cols(),
                            data: e.value.data().to_vec(),
                        },
                    )
                })
                .collect(),
        };
        Ok(serde_json::to_string(&ckpt)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(s)?;
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(AvnError::Checkpoint(format!(
                "unsupported format version {}",
                ckpt.format_version
            )));
        }
        let mut store = ParamStore::new();
        for (name, p) in ckpt.params {
            store.insert(name, Tensor2::from_vec(p.rows, p.cols, p.data)?);
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = self.to_json()?;
        let mut f = std::fs::File::create(path)
            .map_err(|e| AvnError::io(path.display().to_string(), e))?;
        f.write_all(json.as_bytes())
            .map_err(|e| AvnError::io(path.display().to_string(), e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| AvnError::io(path.display().to_string(), e))?;
        ParamStore::from_json(&s)
    }
}
