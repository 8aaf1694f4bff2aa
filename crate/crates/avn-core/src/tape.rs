//! Reverse-mode differentiation over a fixed set of matrix primitives.
//!
//! A [`Tape`] records the forward pass as a flat list of nodes, each
//! holding its value, its parent indices and a backward closure that
//! maps the output gradient to parent gradients. [`Tape::backward`]
//! walks the list in reverse and returns per-node gradients; gradients
//! of nodes registered with [`Tape::param`] carry a parameter name so
//! callers can accumulate them into a [`crate::nn::ParamStore`].

use crate::error::{AvnError, Result};
use crate::tensor::Tensor2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

/// grad_out, out_value, parent_values -> parent grads
type BackFn = Box<dyn Fn(&Tensor2, &Tensor2, &[&Tensor2]) -> Vec<Tensor2>>;

struct Node {
    value: Tensor2,
    parents: Vec<NodeId>,
    back: Option<BackFn>,
    param_name: Option<String>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by a backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor2>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor2> {
        self.grads[id.0].as_ref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn value(&self, id: NodeId) -> &Tensor2 {
        &self.nodes[id.0].value
    }

    fn push(
        &mut self,
        value: Tensor2,
        parents: Vec<NodeId>,
        back: Option<BackFn>,
        param_name: Option<String>,
    ) -> NodeId {
        self.nodes.push(Node {
            value,
            parents,
            back,
            param_name,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor2) -> NodeId {
        self.push(value, vec![], None, None)
    }

    /// Named trainable leaf.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor2) -> NodeId {
        self.push(value, vec![], None, Some(name.into()))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(
            v,
            vec![a, b],
            Some(Box::new(|g, _, p| {
                let ga = g.matmul_nt(p[1]).unwrap();
                let gb = p[0].matmul_tn(g).unwrap();
                vec![ga, gb]
            })),
            None,
        ))
    }

    /// a * b^T
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push(
            v,
            vec![a, b],
            Some(Box::new(|g, _, p| {
                let ga = g.matmul(p[1]).unwrap();
                let gb = g.matmul_tn(p[0]).unwrap();
                vec![ga, gb]
            })),
            None,
        ))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(
            v,
            vec![a, b],
            Some(Box::new(|g, _, _| vec![g.clone(), g.clone()])),
            None,
        ))
    }

    /// Broadcast a 1 x c bias over every row of a.
    pub fn add_row_broadcast(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(AvnError::dim(
                "add_row_broadcast",
                av.shape_str(),
                bv.shape_str(),
            ));
        }
        let mut v = av.clone();
        for r in 0..v.rows() {
            for (o, &b) in v.row_mut(r).iter_mut().zip(bv.row(0)) {
                *o += b;
            }
        }
        Ok(self.push(
            v,
            vec![a, bias],
            Some(Box::new(|g, _, _| {
                let mut gb = Tensor2::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, &x) in gb.row_mut(0).iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                vec![g.clone(), gb]
            })),
            None,
        ))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(AvnError::dim("mul", av.shape_str(), bv.shape_str()));
        }
        let mut v = av.clone();
        for (o, &x) in v.data_mut().iter_mut().zip(bv.data()) {
            *o *= x;
        }
        Ok(self.push(
            v,
            vec![a, b],
            Some(Box::new(|g, _, p| {
                let mut ga = g.clone();
                for (o, &x) in ga.data_mut().iter_mut().zip(p[1].data()) {
                    *o *= x;
                }
                let mut gb = g.clone();
                for (o, &x) in gb.data_mut().iter_mut().zip(p[0].data()) {
                    *o *= x;
                }
                vec![ga, gb]
            })),
            None,
        ))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).scale(c);
        self.push(
            v,
            vec![a],
            Some(Box::new(move |g, _, _| vec![g.scale(c)])),
            None,
        )
    }

    /// ca*a + cb*b
    pub fn add_scaled(&mut self, a: NodeId, b: NodeId, ca: f64, cb: f64) -> Result<NodeId> {
        let v = self.value(a).scale(ca).add(&self.value(b).scale(cb))?;
        Ok(self.push(
            v,
            vec![a, b],
            Some(Box::new(move |g, _, _| vec![g.scale(ca), g.scale(cb)])),
            None,
        ))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(
            v,
            vec![a],
            Some(Box::new(|g, out, _| {
                let mut ga = g.clone();
                for (o, &s) in ga.data_mut().iter_mut().zip(out.data()) {
                    *o *= s * (1.0 - s);
                }
                vec![ga]
            })),
            None,
        )
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(
            v,
            vec![a],
            Some(Box::new(|g, out, _| {
                let mut ga = g.clone();
                for (o, &t) in ga.data_mut().iter_mut().zip(out.data()) {
                    *o *= 1.0 - t * t;
                }
                vec![ga]
            })),
            None,
        )
    }

    /// Row-wise softmax with max-shift stabilization.
    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = softmax_rows_value(self.value(a));
        self.push(
            v,
            vec![a],
            Some(Box::new(|g, out, _| {
                // dL/dx_j = p_j * (g_j - sum_k g_k p_k) per row
                let mut ga = Tensor2::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let p = out.row(r);
                    let gr = g.row(r);
                    let dot: f64 = p.iter().zip(gr).map(|(&pi, &gi)| pi * gi).sum();
                    for (o, (&pi, &gi)) in ga.row_mut(r).iter_mut().zip(p.iter().zip(gr)) {
                        *o = pi * (gi - dot);
                    }
                }
                vec![ga]
            })),
            None,
        )
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(AvnError::Domain("concat_cols: empty".into()));
        }
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut v = Tensor2::zeros(rows, total);
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let pv = self.value(p);
            if pv.rows() != rows {
                return Err(AvnError::dim("concat_cols", rows, pv.rows()));
            }
            for r in 0..rows {
                v.row_mut(r)[off..off + w].copy_from_slice(pv.row(r));
            }
            off += w;
        }
        Ok(self.push(
            v,
            parts.to_vec(),
            Some(Box::new(move |g, _, _| {
                let mut grads = Vec::with_capacity(widths.len());
                let mut off = 0;
                for &w in &widths {
                    let mut gp = Tensor2::zeros(g.rows(), w);
                    for r in 0..g.rows() {
                        gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                    }
                    grads.push(gp);
                    off += w;
                }
                grads
            })),
            None,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(AvnError::Domain("concat_rows: empty".into()));
        }
        let cols = self.value(parts[0]).cols();
        let heights: Vec<usize> = parts.iter().map(|&p| self.value(p).rows()).collect();
        let total: usize = heights.iter().sum();
        let mut v = Tensor2::zeros(total, cols);
        let mut off = 0;
        for (&p, &h) in parts.iter().zip(&heights) {
            let pv = self.value(p);
            if pv.cols() != cols {
                return Err(AvnError::dim("concat_rows", cols, pv.cols()));
            }
            for r in 0..h {
                v.row_mut(off + r).copy_from_slice(pv.row(r));
            }
            off += h;
        }
        Ok(self.push(
            v,
            parts.to_vec(),
            Some(Box::new(move |g, _, _| {
                let mut grads = Vec::with_capacity(heights.len());
                let mut off = 0;
                for &h in &heights {
                    let mut gp = Tensor2::zeros(h, g.cols());
                    for r in 0..h {
                        gp.row_mut(r).copy_from_slice(g.row(off + r));
                    }
                    grads.push(gp);
                    off += h;
                }
                grads
            })),
            None,
        ))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let av = self.value(a);
        if start + len > av.cols() {
            return Err(AvnError::dim(
                "slice_cols",
                av.shape_str(),
                format!("{start}+{len}"),
            ));
        }
        let mut v = Tensor2::zeros(av.rows(), len);
        for r in 0..av.rows() {
            v.row_mut(r).copy_from_slice(&av.row(r)[start..start + len]);
        }
        let src_cols = av.cols();
        Ok(self.push(
            v,
            vec![a],
            Some(Box::new(move |g, _, _| {
                let mut ga = Tensor2::zeros(g.rows(), src_cols);
                for r in 0..g.rows() {
                    ga.row_mut(r)[start..start + len].copy_from_slice(g.row(r));
                }
                vec![ga]
            })),
            None,
        ))
    }

    /// Select rows of a by index (duplicates allowed; backward scatter-adds).
    pub fn gather_rows(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId> {
        let av = self.value(a);
        let mut v = Tensor2::zeros(indices.len(), av.cols());
        for (r, &i) in indices.iter().enumerate() {
            if i >= av.rows() {
                return Err(AvnError::dim("gather_rows", av.rows(), i));
            }
            v.row_mut(r).copy_from_slice(av.row(i));
        }
        let idx = indices.to_vec();
        let src_rows = av.rows();
        Ok(self.push(
            v,
            vec![a],
            Some(Box::new(move |g, _, _| {
                let mut ga = Tensor2::zeros(src_rows, g.cols());
                for (r, &i) in idx.iter().enumerate() {
                    for (o, &x) in ga.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                vec![ga]
            })),
            None,
        ))
    }

    /// Mean over rows -> 1 x c.
    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let n = av.rows() as f64;
        let mut v = Tensor2::zeros(1, av.cols());
        for r in 0..av.rows() {
            for (o, &x) in v.row_mut(0).iter_mut().zip(av.row(r)) {
                *o += x / n;
            }
        }
        self.push(
            v,
            vec![a],
            Some(Box::new(move |g, _, p| {
                let rows = p[0].rows();
                let mut ga = Tensor2::zeros(rows, g.cols());
                for r in 0..rows {
                    for (o, &x) in ga.row_mut(r).iter_mut().zip(g.row(0)) {
                        *o = x / n;
                    }
                }
                vec![ga]
            })),
            None,
        )
    }

    /// Column-wise max over rows -> 1 x c; ties route the gradient to the
    /// first maximal row.
    pub fn max_rows(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let mut v = Tensor2::zeros(1, av.cols());
        let mut argmax = vec![0usize; av.cols()];
        for c in 0..av.cols() {
            let mut best = av.get(0, c);
            let mut bi = 0;
            for r in 1..av.rows() {
                let x = av.get(r, c);
                if x > best {
                    best = x;
                    bi = r;
                }
            }
            v.set(0, c, best);
            argmax[c] = bi;
        }
        self.push(
            v,
            vec![a],
            Some(Box::new(move |g, _, p| {
                let mut ga = Tensor2::zeros(p[0].rows(), g.cols());
                for (c, &r) in argmax.iter().enumerate() {
                    ga.set(r, c, g.get(0, c));
                }
                vec![ga]
            })),
            None,
        )
    }

    /// Mean binary cross entropy against constant labels; probs and labels
    /// are flattened element-wise. Probabilities are clamped to
    /// [eps, 1-eps] with eps = 1e-7 before the logs.
    pub fn bce_mean(&mut self, probs: NodeId, labels: &[f64]) -> Result<NodeId> {
        const EPS: f64 = 1e-7;
        let pv = self.value(probs);
        if pv.data().len() != labels.len() {
            return Err(AvnError::dim("bce_mean", pv.data().len(), labels.len()));
        }
        let n = labels.len() as f64;
        let mut loss = 0.0;
        for (&p, &y) in pv.data().iter().zip(labels) {
            let c = p.clamp(EPS, 1.0 - EPS);
            loss -= (y * c.ln() + (1.0 - y) * (1.0 - c).ln()) / n;
        }
        let labels = labels.to_vec();
        Ok(self.push(
            Tensor2::scalar(loss),
            vec![probs],
            Some(Box::new(move |g, _, p| {
                let gs = g.as_scalar();
                let mut ga = Tensor2::zeros(p[0].rows(), p[0].cols());
                for ((o, &pr), &y) in ga.data_mut().iter_mut().zip(p[0].data()).zip(&labels) {
                    // clamp acts as identity inside the interval, zero outside
                    if pr > EPS && pr < 1.0 - EPS {
                        *o = gs * ((1.0 - y) / (1.0 - pr) - y / pr) / n;
                    }
                }
                vec![ga]
            })),
            None,
        ))
    }

    /// Weighted mean BCE: per-element weights (e.g. class weighting).
    pub fn bce_weighted(&mut self, probs: NodeId, labels: &[f64], weights: &[f64]) -> Result<NodeId> {
        const EPS: f64 = 1e-7;
        let pv = self.value(probs);
        if pv.data().len() != labels.len() || labels.len() != weights.len() {
            return Err(AvnError::dim("bce_weighted", pv.data().len(), labels.len()));
        }
        let wsum: f64 = weights.iter().sum();
        let mut loss = 0.0;
        for ((&p, &y), &w) in pv.data().iter().zip(labels).zip(weights) {
            let c = p.clamp(EPS, 1.0 - EPS);
            loss -= w * (y * c.ln() + (1.0 - y) * (1.0 - c).ln()) / wsum;
        }
        let labels = labels.to_vec();
        let weights = weights.to_vec();
        Ok(self.push(
            Tensor2::scalar(loss),
            vec![probs],
            Some(Box::new(move |g, _, p| {
                let gs = g.as_scalar();
                let mut ga = Tensor2::zeros(p[0].rows(), p[0].cols());
                for (((o, &pr), &y), &w) in ga
                    .data_mut()
                    .iter_mut()
                    .zip(p[0].data())
                    .zip(&labels)
                    .zip(&weights)
                {
                    if pr > EPS && pr < 1.0 - EPS {
                        *o = gs * w * ((1.0 - y) / (1.0 - pr) - y / pr) / wsum;
                    }
                }
                vec![ga]
            })),
            None,
        ))
    }

    /// Dice loss 1 - (2*sum(p*y)+s)/(sum(p)+sum(y)+s) against constant labels.
    pub fn dice_loss(&mut self, probs: NodeId, labels: &[f64], smooth: f64) -> Result<NodeId> {
        let pv = self.value(probs);
        if pv.data().len() != labels.len() {
            return Err(AvnError::dim("dice_loss", pv.data().len(), labels.len()));
        }
        let inter: f64 = pv.data().iter().zip(labels).map(|(&p, &y)| p * y).sum();
        let psum: f64 = pv.data().iter().sum();
        let ysum: f64 = labels.iter().sum();
        let denom = psum + ysum + smooth;
        let loss = 1.0 - (2.0 * inter + smooth) / denom;
        let labels = labels.to_vec();
        Ok(self.push(
            Tensor2::scalar(loss),
            vec![probs],
            Some(Box::new(move |g, _, p| {
                let gs = g.as_scalar();
                let inter: f64 = p[0].data().iter().zip(&labels).map(|(&pr, &y)| pr * y).sum();
                let psum: f64 = p[0].data().iter().sum();
                let ysum: f64 = labels.iter().sum();
                let denom = psum + ysum + smooth;
                let num = 2.0 * inter + smooth;
                let mut ga = Tensor2::zeros(p[0].rows(), p[0].cols());
                for (o, &y) in ga.data_mut().iter_mut().zip(&labels) {
                    *o = gs * -(2.0 * y * denom - num) / (denom * denom);
                }
                vec![ga]
            })),
            None,
        ))
    }

    /// Cross entropy of a single-row logit vector against a target index
    /// (log-sum-exp stabilized).
    pub fn softmax_ce(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let lv = self.value(logits);
        if lv.rows() != 1 || target >= lv.cols() {
            return Err(AvnError::dim(
                "softmax_ce",
                lv.shape_str(),
                format!("target {target}"),
            ));
        }
        let row = lv.row(0);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
        let loss = lse - row[target];
        Ok(self.push(
            Tensor2::scalar(loss),
            vec![logits],
            Some(Box::new(move |g, _, p| {
                let gs = g.as_scalar();
                let row = p[0].row(0);
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|&x| (x - m).exp()).sum();
                let mut ga = Tensor2::zeros(1, row.len());
                for (c, (o, &x)) in ga.row_mut(0).iter_mut().zip(row).enumerate() {
                    let p = (x - m).exp() / z;
                    *o = gs * (p - if c == target { 1.0 } else { 0.0 });
                }
                vec![ga]
            })),
            None,
        ))
    }

    /// Sum of scalar nodes.
    pub fn sum_scalars(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(AvnError::Domain("sum_scalars: empty".into()));
        }
        let total: f64 = parts.iter().map(|&p| self.value(p).as_scalar()).sum();
        Ok(self.push(
            Tensor2::scalar(total),
            parts.to_vec(),
            Some(Box::new(|g, _, p| {
                p.iter().map(|_| g.clone()).collect()
            })),
            None,
        ))
    }

    /// Backward pass from a scalar root. Seeds the root gradient with 1.
    pub fn backward(&mut self, root: NodeId) -> Result<Gradients> {
        let root_val = self.value(root);
        if !root_val.is_finite() {
            return Err(AvnError::Numeric("non-finite loss at backward root".into()));
        }
        let mut grads: Vec<Option<Tensor2>> = vec![None; self.nodes.len()];
        let (r, c) = root_val.shape();
        let mut seed = Tensor2::zeros(r, c);
        seed.fill(1.0);
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            if let Some(back) = &self.nodes[i].back {
                let parent_vals: Vec<&Tensor2> =
                    self.nodes[i].parents.iter().map(|p| &self.nodes[p.0].value).collect();
                let pgrads = back(&g, &self.nodes[i].value, &parent_vals);
                debug_assert_eq!(pgrads.len(), self.nodes[i].parents.len());
                let parents = self.nodes[i].parents.clone();
                for (pid, pg) in parents.into_iter().zip(pgrads) {
                    match &mut grads[pid.0] {
                        Some(acc) => acc.add_assign(&pg),
                        slot => *slot = Some(pg),
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Iterate named parameter leaves with their gradients.
    pub fn param_grads<'a>(
        &'a self,
        grads: &'a Gradients,
    ) -> impl Iterator<Item = (&'a str, &'a Tensor2)> + 'a {
        self.nodes.iter().enumerate().filter_map(move |(i, n)| {
            let name = n.param_name.as_deref()?;
            let g = grads.grads[i].as_ref()?;
            Some((name, g))
        })
    }
}

pub fn softmax_rows_value(x: &Tensor2) -> Tensor2 {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
}
