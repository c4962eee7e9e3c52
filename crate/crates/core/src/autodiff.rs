//! Reverse-mode automatic differentiation over dense tensors.
//!
//! Operations are appended to a [`Tape`] in execution order, so every
//! operation's inputs precede it and [`Tape::backward`] can visit the
//! recorded nodes exactly once in reverse.
//!
//! Max-type operations (max-plus layers, group max, ReLU) route the whole
//! incoming gradient to the candidate recorded as the winner during the
//! forward pass. Ties go to the lowest index, with a max-plus bias ordered
//! after every weight and ReLU's zero ordered after its input.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::tropical::{max_plus_kernel, RowSupport, NO_WINNER};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What to do when a max-plus output row has no candidate at all.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OnBottom {
    Reject,
    /// Treat the unit as disconnected: output 0, no gradient.
    Zero,
}

/// Batch statistics of one BatchNorm call, for the running-average update.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased (n−1) variance.
    pub var: Vec<f64>,
}

pub enum BnMode<'a> {
    Train,
    Eval { mean: &'a [f64], var: &'a [f64] },
}

enum Op {
    Leaf,
    Linear {
        weight: NodeId,
        input: NodeId,
        bias: Option<NodeId>,
    },
    MaxPlus {
        weight: NodeId,
        input: NodeId,
        bias: Option<NodeId>,
        cols: usize,
        support: RowSupport,
        bias_active: Option<Vec<bool>>,
        winners: Vec<u32>,
    },
    Relu {
        input: NodeId,
    },
    GroupMax {
        input: NodeId,
        groups: usize,
        winners: Vec<u32>,
    },
    BatchNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Sum {
        input: NodeId,
    },
    SigmoidBce {
        logits: NodeId,
        targets: Vec<f64>,
    },
    SoftmaxCe {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

fn grad_slot<'a>(grads: &'a mut [Option<Tensor>], id: NodeId, shape: &[usize]) -> &'a mut Tensor {
    grads[id.0].get_or_insert_with(|| Tensor::zeros(shape))
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// A constant leaf; no gradient is computed for it.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn linear(&mut self, weight: NodeId, input: NodeId, bias: Option<NodeId>) -> Result<NodeId> {
        let w = self.value(weight);
        let x = self.value(input);
        let (m, k, b) = (w.rows(), w.cols(), x.cols());
        if x.rows() != k || x.shape().len() != 2 {
            return Err(Error::shape(
                "linear",
                format!("weight {m}x{k} against input {:?}", x.shape()),
            ));
        }
        let mut out = crate::tensor::matmul(w, x)?.into_data();
        if let Some(bid) = bias {
            let bv = self.value(bid);
            if bv.len() != m {
                return Err(Error::shape(
                    "linear",
                    format!("bias of length {} for {m} rows", bv.len()),
                ));
            }
            for (i, &bi) in bv.data().iter().enumerate() {
                for o in &mut out[i * b..(i + 1) * b] {
                    *o += bi;
                }
            }
        }
        let needs = self.needs(weight) || self.needs(input) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(
            Tensor::from_parts_unchecked(vec![m, b], out),
            Op::Linear { weight, input, bias },
            needs,
        ))
    }

    /// `W ⊞ y ∨ w0`. `active` is the weight activity mask; the optional bias
    /// carries its own mask.
    pub fn maxplus(
        &mut self,
        weight: NodeId,
        active: &[bool],
        bias: Option<(NodeId, &[bool])>,
        input: NodeId,
        on_bottom: OnBottom,
    ) -> Result<NodeId> {
        let w = self.value(weight);
        let y = self.value(input);
        let (m, k) = (w.rows(), w.cols());
        if y.rows() != k || y.shape().len() != 2 || active.len() != m * k {
            return Err(Error::shape(
                "maxplus",
                format!("weight {m}x{k} (mask {}) against input {:?}", active.len(), y.shape()),
            ));
        }
        if let Some((bid, bmask)) = bias {
            if self.value(bid).len() != m || bmask.len() != m {
                return Err(Error::shape("maxplus", format!("bias must have {m} entries")));
            }
        }
        let support = RowSupport::from_mask(m, k, active);
        let kout = max_plus_kernel(
            k,
            w.data(),
            &support,
            y,
            bias.map(|(bid, bmask)| (self.value(bid).data(), bmask)),
        );
        if on_bottom == OnBottom::Reject {
            if let Some(pos) = kout.winners.iter().position(|&w| w == NO_WINNER) {
                return Err(Error::UndefinedOutput {
                    layer: "maxplus".into(),
                    row: pos / y.cols(),
                });
            }
        }
        let b = y.cols();
        let needs = self.needs(weight) || self.needs(input) || bias.is_some_and(|(b, _)| self.needs(b));
        Ok(self.push(
            Tensor::from_parts_unchecked(vec![m, b], kout.values),
            Op::MaxPlus {
                weight,
                input,
                bias: bias.map(|(b, _)| b),
                cols: k,
                support,
                bias_active: bias.map(|(_, m)| m.to_vec()),
                winners: kout.winners,
            },
            needs,
        ))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let out = self.value(input).map(|v| v.max(0.0));
        let needs = self.needs(input);
        self.push(out, Op::Relu { input }, needs)
    }

    /// Maxout pooling: output row `i` is the max over rows `i + p·N`, `p < groups`.
    pub fn group_max(&mut self, input: NodeId, groups: usize) -> Result<NodeId> {
        let x = self.value(input);
        if groups == 0 || x.rows() % groups != 0 {
            return Err(Error::shape(
                "group_max",
                format!("{} rows not divisible into {groups} groups", x.rows()),
            ));
        }
        let n = x.rows() / groups;
        let b = x.cols();
        let xd = x.data();
        let mut out = xd[..n * b].to_vec();
        let mut winners = vec![0u32; n * b];
        for p in 1..groups {
            let block = &xd[p * n * b..(p + 1) * n * b];
            for (idx, &v) in block.iter().enumerate() {
                if v > out[idx] {
                    out[idx] = v;
                    winners[idx] = p as u32;
                }
            }
        }
        let needs = self.needs(input);
        Ok(self.push(
            Tensor::from_parts_unchecked(vec![n, b], out),
            Op::GroupMax { input, groups, winners },
            needs,
        ))
    }

    /// Per-feature normalisation across the batch (columns).
    pub fn batchnorm(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mode: BnMode<'_>,
    ) -> Result<(NodeId, Option<BatchStats>)> {
        let x = self.value(input);
        let (m, b) = (x.rows(), x.cols());
        if self.value(gamma).len() != m || self.value(beta).len() != m {
            return Err(Error::shape("batchnorm", format!("gamma/beta must have {m} entries")));
        }
        let xd = x.data();
        let mut inv_std = vec![0.0; m];
        let (means, stats, train) = match mode {
            BnMode::Train => {
                if b < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "batchnorm needs at least 2 samples in train mode, got {b}"
                    )));
                }
                let mut means = vec![0.0; m];
                let mut vars = vec![0.0; m];
                for i in 0..m {
                    let row = &xd[i * b..(i + 1) * b];
                    let mean = row.iter().sum::<f64>() / b as f64;
                    let ss: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum();
                    means[i] = mean;
                    vars[i] = ss / (b - 1) as f64;
                    inv_std[i] = 1.0 / (ss / b as f64 + BN_EPSILON).sqrt();
                }
                let stats = BatchStats {
                    mean: means.clone(),
                    var: vars,
                };
                (means, Some(stats), true)
            }
            BnMode::Eval { mean, var } => {
                if mean.len() != m || var.len() != m {
                    return Err(Error::shape(
                        "batchnorm",
                        format!("running stats must have {m} entries"),
                    ));
                }
                for i in 0..m {
                    inv_std[i] = 1.0 / (var[i] + BN_EPSILON).sqrt();
                }
                (mean.to_vec(), None, false)
            }
        };
        let g = self.value(gamma).data();
        let be = self.value(beta).data();
        let mut xhat = vec![0.0; m * b];
        let mut out = vec![0.0; m * b];
        for i in 0..m {
            for j in 0..b {
                let h = (xd[i * b + j] - means[i]) * inv_std[i];
                xhat[i * b + j] = h;
                out[i * b + j] = g[i] * h + be[i];
            }
        }
        let needs = self.needs(input) || self.needs(gamma) || self.needs(beta);
        let id = self.push(
            Tensor::from_parts_unchecked(vec![m, b], out),
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            needs,
        );
        Ok((id, stats))
    }

    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let s = self.value(input).sum();
        let needs = self.needs(input);
        self.push(Tensor::from_parts_unchecked(vec![1], vec![s]), Op::Sum { input }, needs)
    }

    /// Mean binary cross-entropy with logits over every (label, sample) entry.
    /// `targets` is laid out like `logits` (labels × batch).
    pub fn sigmoid_bce(&mut self, logits: NodeId, targets: &[f64]) -> Result<NodeId> {
        let z = self.value(logits);
        if targets.len() != z.len() {
            return Err(Error::shape(
                "sigmoid_bce",
                format!("{} targets for logits {:?}", targets.len(), z.shape()),
            ));
        }
        if let Some(t) = targets.iter().find(|&&t| t != 0.0 && t != 1.0) {
            return Err(Error::InvalidArgument(format!("binary target expected, got {t}")));
        }
        let total: f64 = z
            .data()
            .iter()
            .zip(targets)
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum();
        let loss = total / z.len() as f64;
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::from_parts_unchecked(vec![1], vec![loss]),
            Op::SigmoidBce {
                logits,
                targets: targets.to_vec(),
            },
            needs,
        ))
    }

    /// Mean softmax cross-entropy over the batch; logits are classes × batch.
    pub fn softmax_ce(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let z = self.value(logits);
        let (c, b) = (z.rows(), z.cols());
        if labels.len() != b {
            return Err(Error::shape(
                "softmax_ce",
                format!("{} labels for batch {b}", labels.len()),
            ));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::InvalidArgument(format!("class index {l} out of range 0..{c}")));
        }
        let zd = z.data();
        let mut probs = vec![0.0; c * b];
        let mut total = 0.0;
        for j in 0..b {
            let max = (0..c).map(|i| zd[i * b + j]).fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = (0..c).map(|i| (zd[i * b + j] - max).exp()).sum();
            let lse = max + denom.ln();
            for i in 0..c {
                probs[i * b + j] = (zd[i * b + j] - lse).exp();
            }
            total += lse - zd[labels[j] * b + j];
        }
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::from_parts_unchecked(vec![1], vec![total / b as f64]),
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            needs,
        ))
    }

    /// Smallest gap between the winner and the runner-up over every max-type
    /// decision on the tape. Perturbations smaller than this cannot flip a winner.
    pub fn min_tie_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::Relu { input } => {
                    for &v in self.nodes[input.0].value.data() {
                        margin = margin.min(v.abs());
                    }
                }
                Op::GroupMax { input, groups, .. } => {
                    let x = &self.nodes[input.0].value;
                    let n = x.rows() / groups;
                    let b = x.cols();
                    for idx in 0..n * b {
                        let cands = (0..*groups).map(|p| x.data()[p * n * b + idx]);
                        margin = margin.min(top_two_gap(cands));
                    }
                }
                Op::MaxPlus {
                    weight,
                    input,
                    bias,
                    cols,
                    support,
                    bias_active,
                    ..
                } => {
                    let w = self.nodes[weight.0].value.data();
                    let y = &self.nodes[input.0].value;
                    let b = y.cols();
                    for i in 0..support.rows() {
                        for j in 0..b {
                            let mut cands: Vec<f64> = support
                                .row(i)
                                .iter()
                                .map(|&k| w[i * cols + k as usize] + y.data()[k as usize * b + j])
                                .collect();
                            if let (Some(bid), Some(bm)) = (bias, bias_active) {
                                if bm[i] {
                                    cands.push(self.nodes[bid.0].value.data()[i]);
                                }
                            }
                            margin = margin.min(top_two_gap(cands.into_iter()));
                        }
                    }
                }
                _ => {}
            }
        }
        margin
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, node has shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_parts_unchecked(vec![1], vec![1.0]));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Linear { weight, input, bias } => {
                let w = &self.nodes[weight.0].value;
                let x = &self.nodes[input.0].value;
                let (m, k, b) = (w.rows(), w.cols(), x.cols());
                if self.needs(*weight) {
                    let dw = grad_slot(grads, *weight, w.shape()).data_mut();
                    for i in 0..m {
                        let grow = &gd[i * b..(i + 1) * b];
                        for kk in 0..k {
                            let xrow = &x.data()[kk * b..(kk + 1) * b];
                            let dot: f64 = grow.iter().zip(xrow).map(|(a, c)| a * c).sum();
                            dw[i * k + kk] += dot;
                        }
                    }
                }
                if self.needs(*input) {
                    let dx = grad_slot(grads, *input, x.shape()).data_mut();
                    for i in 0..m {
                        let grow = &gd[i * b..(i + 1) * b];
                        for kk in 0..k {
                            let wv = w.data()[i * k + kk];
                            let dxrow = &mut dx[kk * b..(kk + 1) * b];
                            for (d, gv) in dxrow.iter_mut().zip(grow) {
                                *d += wv * gv;
                            }
                        }
                    }
                }
                if let Some(bid) = bias {
                    if self.needs(*bid) {
                        let shape = self.nodes[bid.0].value.shape().to_vec();
                        let db = grad_slot(grads, *bid, &shape).data_mut();
                        for i in 0..m {
                            db[i] += gd[i * b..(i + 1) * b].iter().sum::<f64>();
                        }
                    }
                }
            }
            Op::MaxPlus {
                weight,
                input,
                bias,
                cols,
                winners,
                ..
            } => {
                let wshape = self.nodes[weight.0].value.shape().to_vec();
                let yshape = self.nodes[input.0].value.shape().to_vec();
                let b = yshape[1];
                let m = wshape[0];
                if self.needs(*weight) {
                    let dw = grad_slot(grads, *weight, &wshape).data_mut();
                    for i in 0..m {
                        for j in 0..b {
                            let k = winners[i * b + j];
                            if k != NO_WINNER && (k as usize) < *cols {
                                dw[i * cols + k as usize] += gd[i * b + j];
                            }
                        }
                    }
                }
                if self.needs(*input) {
                    let dy = grad_slot(grads, *input, &yshape).data_mut();
                    for i in 0..m {
                        for j in 0..b {
                            let k = winners[i * b + j];
                            if k != NO_WINNER && (k as usize) < *cols {
                                dy[k as usize * b + j] += gd[i * b + j];
                            }
                        }
                    }
                }
                if let Some(bid) = bias {
                    if self.needs(*bid) {
                        let shape = self.nodes[bid.0].value.shape().to_vec();
                        let db = grad_slot(grads, *bid, &shape).data_mut();
                        for i in 0..m {
                            for j in 0..b {
                                if winners[i * b + j] as usize == *cols {
                                    db[i] += gd[i * b + j];
                                }
                            }
                        }
                    }
                }
            }
            Op::Relu { input } => {
                if self.needs(*input) {
                    let x = &self.nodes[input.0].value;
                    let dx = grad_slot(grads, *input, x.shape()).data_mut();
                    for ((d, &xv), &gv) in dx.iter_mut().zip(x.data()).zip(gd) {
                        if xv >= 0.0 {
                            *d += gv;
                        }
                    }
                }
            }
            Op::GroupMax {
                input,
                groups: _,
                winners,
            } => {
                if self.needs(*input) {
                    let shape = self.nodes[input.0].value.shape().to_vec();
                    let nb = g.len();
                    let dx = grad_slot(grads, *input, &shape).data_mut();
                    for (idx, &p) in winners.iter().enumerate() {
                        dx[p as usize * nb + idx] += gd[idx];
                    }
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let m = inv_std.len();
                let b = g.cols();
                let gam = self.nodes[gamma.0].value.data().to_vec();
                if self.needs(*beta) {
                    let db = grad_slot(grads, *beta, &[m]).data_mut();
                    for i in 0..m {
                        db[i] += gd[i * b..(i + 1) * b].iter().sum::<f64>();
                    }
                }
                if self.needs(*gamma) {
                    let dg = grad_slot(grads, *gamma, &[m]).data_mut();
                    for i in 0..m {
                        dg[i] += (0..b).map(|j| gd[i * b + j] * xhat[i * b + j]).sum::<f64>();
                    }
                }
                if self.needs(*input) {
                    let dx = grad_slot(grads, *input, &[m, b]).data_mut();
                    for i in 0..m {
                        let s = inv_std[i] * gam[i];
                        if *train {
                            let grow = &gd[i * b..(i + 1) * b];
                            let hrow = &xhat[i * b..(i + 1) * b];
                            let sum_g: f64 = grow.iter().sum();
                            let sum_gh: f64 = grow.iter().zip(hrow).map(|(a, c)| a * c).sum();
                            let bf = b as f64;
                            for j in 0..b {
                                dx[i * b + j] += s * (grow[j] - sum_g / bf - hrow[j] * sum_gh / bf);
                            }
                        } else {
                            for j in 0..b {
                                dx[i * b + j] += s * gd[i * b + j];
                            }
                        }
                    }
                }
            }
            Op::Sum { input } => {
                if self.needs(*input) {
                    let shape = self.nodes[input.0].value.shape().to_vec();
                    let dx = grad_slot(grads, *input, &shape).data_mut();
                    for d in dx.iter_mut() {
                        *d += gd[0];
                    }
                }
            }
            Op::SigmoidBce { logits, targets } => {
                if self.needs(*logits) {
                    let z = &self.nodes[logits.0].value;
                    let scale = gd[0] / z.len() as f64;
                    let dz = grad_slot(grads, *logits, z.shape()).data_mut();
                    for ((d, &zv), &t) in dz.iter_mut().zip(z.data()).zip(targets) {
                        *d += (sigmoid(zv) - t) * scale;
                    }
                }
            }
            Op::SoftmaxCe { logits, labels, probs } => {
                if self.needs(*logits) {
                    let z = &self.nodes[logits.0].value;
                    let b = z.cols();
                    let scale = gd[0] / b as f64;
                    let dz = grad_slot(grads, *logits, z.shape()).data_mut();
                    for (idx, d) in dz.iter_mut().enumerate() {
                        *d += probs[idx] * scale;
                    }
                    for (j, &l) in labels.iter().enumerate() {
                        dz[l * b + j] -= scale;
                    }
                }
            }
        }
    }
}

fn top_two_gap(cands: impl Iterator<Item = f64>) -> f64 {
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for c in cands {
        if c > first {
            second = first;
            first = c;
        } else if c > second {
            second = c;
        }
    }
    if second == f64::NEG_INFINITY {
        f64::INFINITY
    } else {
        first - second
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(t: &Tape, id: NodeId) -> f64 {
        t.value(id).data()[0]
    }

    #[test]
    fn linear_identity_and_small_product() {
        let mut t = Tape::new();
        let i = t.param(Tensor::identity(2));
        let x = t.input(Tensor::from_rows(&[&[1.5], &[-2.0]]));
        let y = t.linear(i, x, None).unwrap();
        assert_eq!(t.value(y).data(), &[1.5, -2.0]);

        let a = t.param(Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let ones = t.input(Tensor::from_rows(&[&[1.0], &[1.0]]));
        let y = t.linear(a, ones, None).unwrap();
        assert_eq!(t.value(y).data(), &[3.0, 7.0]);
    }

    #[test]
    fn grad_of_sum_linear_is_outer_product() {
        let mut t = Tape::new();
        let a = t.param(Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]));
        let x = t.input(Tensor::from_rows(&[&[0.5, 2.0], &[-1.0, 3.0]]));
        let y = t.linear(a, x, None).unwrap();
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        // d sum(Ax) / dA[i][k] = sum_j x[k][j]
        let ga = g.get(a).unwrap();
        for i in 0..3 {
            assert_eq!(ga.get(i, 0), 2.5);
            assert_eq!(ga.get(i, 1), 2.0);
        }
        assert!(g.get(x).is_none());
    }

    #[test]
    fn linear_shape_mismatch() {
        let mut t = Tape::new();
        let a = t.param(Tensor::zeros(&[2, 3]));
        let x = t.input(Tensor::zeros(&[2, 1]));
        assert!(t.linear(a, x, None).is_err());
    }

    #[test]
    fn maxplus_diagonal_zero_bias_is_relu() {
        let mut t = Tape::new();
        let y = t.input(Tensor::from_rows(&[&[-1.0, 2.0], &[3.0, -4.0]]));
        let w = t.param(Tensor::zeros(&[2, 2]));
        let b = t.param(Tensor::zeros(&[2]));
        let mask = [true, false, false, true];
        let out = t
            .maxplus(w, &mask, Some((b, &[true, true])), y, OnBottom::Reject)
            .unwrap();
        assert_eq!(t.value(out).data(), &[0.0, 2.0, 3.0, 0.0]);
    }

    #[test]
    fn maxplus_unbiased_row_max() {
        let mut t = Tape::new();
        let y = t.input(Tensor::from_rows(&[&[-3.0], &[-1.0]]));
        let w = t.param(Tensor::zeros(&[1, 2]));
        let out = t.maxplus(w, &[true, true], None, y, OnBottom::Reject).unwrap();
        assert_eq!(t.value(out).data(), &[-1.0]);
    }

    #[test]
    fn maxplus_single_active_is_gather() {
        let mut t = Tape::new();
        let y = t.input(Tensor::from_rows(&[&[1.0, 10.0], &[2.0, 20.0], &[3.0, 30.0]]));
        let w = t.param(Tensor::zeros(&[3, 3]));
        // permutation (2, 0, 1)
        let mask = [false, false, true, true, false, false, false, true, false];
        let out = t.maxplus(w, &mask, None, y, OnBottom::Reject).unwrap();
        assert_eq!(t.value(out).data(), &[3.0, 30.0, 1.0, 10.0, 2.0, 20.0]);
    }

    #[test]
    fn maxplus_gradient_is_one_hot_and_conserved() {
        let mut t = Tape::new();
        let y = t.param(Tensor::from_rows(&[&[0.5], &[2.0], &[-1.0]]));
        let w = t.param(Tensor::from_rows(&[&[0.0, 0.1, 9.0]]));
        let b = t.param(Tensor::vector(vec![-5.0]).unwrap());
        let out = t
            .maxplus(w, &[true, true, false], Some((b, &[true])), y, OnBottom::Reject)
            .unwrap();
        assert_eq!(t.value(out).data(), &[2.1]);
        let s = t.sum(out);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[0.0, 1.0, 0.0]);
        assert_eq!(g.get(y).unwrap().data(), &[0.0, 1.0, 0.0]);
        assert_eq!(g.get(b).unwrap().data(), &[0.0]);
    }

    #[test]
    fn maxplus_bias_receives_gradient_when_it_wins() {
        let mut t = Tape::new();
        let y = t.input(Tensor::from_rows(&[&[-3.0]]));
        let w = t.param(Tensor::zeros(&[1, 1]));
        let b = t.param(Tensor::vector(vec![1.0]).unwrap());
        let out = t.maxplus(w, &[true], Some((b, &[true])), y, OnBottom::Reject).unwrap();
        let s = t.sum(out);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(b).unwrap().data(), &[1.0]);
        assert_eq!(g.get(w).unwrap().data(), &[0.0]);
    }

    #[test]
    fn maxplus_bottom_policy() {
        let mut t = Tape::new();
        let y = t.input(Tensor::from_rows(&[&[1.0], &[2.0]]));
        let w = t.param(Tensor::zeros(&[2, 2]));
        let mask = [true, true, false, false];
        assert!(matches!(
            t.maxplus(w, &mask, None, y, OnBottom::Reject),
            Err(Error::UndefinedOutput { row: 1, .. })
        ));
        let out = t.maxplus(w, &mask, None, y, OnBottom::Zero).unwrap();
        assert_eq!(t.value(out).data(), &[2.0, 0.0]);
    }

    #[test]
    fn batchnorm_constant_feature_is_zero() {
        let mut t = Tape::new();
        let x = t.input(Tensor::from_rows(&[&[3.0, 3.0, 3.0], &[-1.0, -1.0, -1.0]]));
        let g = t.param(Tensor::vector(vec![1.0, 1.0]).unwrap());
        let b = t.param(Tensor::vector(vec![0.0, 0.0]).unwrap());
        let (y, stats) = t.batchnorm(x, g, b, BnMode::Train).unwrap();
        assert!(t.value(y).data().iter().all(|v| v.abs() < 1e-12));
        assert_eq!(stats.unwrap().mean, vec![3.0, -1.0]);
    }

    #[test]
    fn batchnorm_eval_uses_running_stats() {
        let mut t = Tape::new();
        let x = t.input(Tensor::from_rows(&[&[2.0, 4.0]]));
        let g = t.param(Tensor::vector(vec![2.0]).unwrap());
        let b = t.param(Tensor::vector(vec![0.5]).unwrap());
        let (y, stats) = t
            .batchnorm(
                x,
                g,
                b,
                BnMode::Eval {
                    mean: &[1.0],
                    var: &[4.0],
                },
            )
            .unwrap();
        assert!(stats.is_none());
        let s = (4.0f64 + BN_EPSILON).sqrt();
        let want = [(2.0 - 1.0) / s * 2.0 + 0.5, (4.0 - 1.0) / s * 2.0 + 0.5];
        for (a, b) in t.value(y).data().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn batchnorm_train_needs_two_samples() {
        let mut t = Tape::new();
        let x = t.input(Tensor::zeros(&[2, 1]));
        let g = t.param(Tensor::vector(vec![1.0, 1.0]).unwrap());
        let b = t.param(Tensor::vector(vec![0.0, 0.0]).unwrap());
        assert!(t.batchnorm(x, g, b, BnMode::Train).is_err());
    }

    #[test]
    fn bce_at_zero_logits_is_ln2() {
        let mut t = Tape::new();
        let z = t.param(Tensor::zeros(&[3, 2]));
        let loss = t.sigmoid_bce(z, &[0.0, 1.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
        assert!((scalar(&t, loss) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(t.sigmoid_bce(z, &[0.5; 6]).is_err());
    }

    #[test]
    fn softmax_ce_large_margin_goes_to_zero() {
        let mut t = Tape::new();
        let z = t.param(Tensor::from_rows(&[&[800.0], &[0.0], &[-5.0]]));
        let loss = t.softmax_ce(z, &[0]).unwrap();
        assert!(scalar(&t, loss) < 1e-300);
        assert!(t.softmax_ce(z, &[3]).is_err());
    }

    #[test]
    fn losses_match_direct_formula() {
        // 3 classes/labels x 4 samples.
        let logits = [
            0.3, -1.2, 2.5, 0.0, //
            -0.7, 0.4, -2.2, 1.1, //
            1.9, 0.05, -0.3, -1.6,
        ];
        let targets = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let labels = [2usize, 1, 0, 1];
        let mut t = Tape::new();
        let z = t.param(Tensor::new(vec![3, 4], logits.to_vec()).unwrap());
        let bce = t.sigmoid_bce(z, &targets).unwrap();
        let ce = t.softmax_ce(z, &labels).unwrap();

        let mut want_bce = 0.0;
        for (zv, tv) in logits.iter().zip(targets) {
            let p = 1.0 / (1.0 + (-zv).exp());
            want_bce -= tv * p.ln() + (1.0 - tv) * (1.0 - p).ln();
        }
        want_bce /= 12.0;
        let mut want_ce = 0.0;
        for (j, &l) in labels.iter().enumerate() {
            let denom: f64 = (0..3).map(|i| logits[i * 4 + j].exp()).sum();
            want_ce -= (logits[l * 4 + j].exp() / denom).ln();
        }
        want_ce /= 4.0;
        assert!((scalar(&t, bce) - want_bce).abs() < 1e-12);
        assert!((scalar(&t, ce) - want_ce).abs() < 1e-12);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let z = t.param(Tensor::zeros(&[2, 2]));
        assert!(t.backward(z).is_err());
    }

    #[test]
    fn group_max_picks_pool_winner() {
        let mut t = Tape::new();
        // N = 2, P = 2, batch 1: rows 0,1 are p=0; rows 2,3 are p=1
        let x = t.param(Tensor::from_rows(&[&[1.0], &[5.0], &[3.0], &[4.0]]));
        let y = t.group_max(x, 2).unwrap();
        assert_eq!(t.value(y).data(), &[3.0, 5.0]);
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn tie_margin_sees_relu_kink() {
        let mut t = Tape::new();
        let x = t.input(Tensor::from_rows(&[&[0.25, -2.0]]));
        t.relu(x);
        assert_eq!(t.min_tie_margin(), 0.25);
    }
}
