//! The five classification heads.
//!
//! | variant        | topology                                                        |
//! |----------------|-----------------------------------------------------------------|
//! | `relu`         | linear(+b) → [BN] → ReLU → linear(+b)                           |
//! | `maxout`       | linear(P·h, +b) → [BN] → group max over P → linear(+b)          |
//! | `zhang`        | linear(+b) → [BN] → ReLU → max-plus(out×h, +w0)                 |
//! | `dense-morph`  | linear(no b) → [BN] → max-plus(h×h, all active, +w0) → linear(+b) |
//! | `sparse-morph` | as dense-morph, with only P·h active max-plus weights           |
//!
//! Active max-plus weights and biases start at 0, so a fresh morphological
//! layer is a sparse max-pool floored at zero. Inactive entries stay inactive
//! for the lifetime of the model.

use std::fmt;
use std::str::FromStr;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchStats, BnMode, NodeId, OnBottom, Tape, BN_MOMENTUM};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::tropical::TropicalMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Relu,
    Maxout,
    Zhang,
    #[serde(alias = "dense_morph")]
    DenseMorph,
    #[serde(alias = "sparse_morph")]
    SparseMorph,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Relu,
        Variant::Maxout,
        Variant::Zhang,
        Variant::DenseMorph,
        Variant::SparseMorph,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Relu => "relu",
            Variant::Maxout => "maxout",
            Variant::Zhang => "zhang",
            Variant::DenseMorph => "dense-morph",
            Variant::SparseMorph => "sparse-morph",
        }
    }

    pub fn has_hidden_morph(self) -> bool {
        matches!(self, Variant::DenseMorph | Variant::SparseMorph)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        Variant::ALL.into_iter().find(|v| v.as_str() == norm).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "unknown head variant `{s}` (expected relu, maxout, zhang, dense-morph or sparse-morph)"
            ))
        })
    }
}

fn default_pooling() -> usize {
    2
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub variant: Variant,
    pub d_in: usize,
    pub d_hidden: usize,
    pub d_out: usize,
    #[serde(default = "default_pooling")]
    pub pooling: usize,
    #[serde(default = "default_true")]
    pub batchnorm: bool,
    #[serde(default)]
    pub seed: u64,
    /// Sparse init only: guarantee every row at least one active weight.
    #[serde(default)]
    pub ensure_row_active: bool,
}

impl HeadSpec {
    pub fn new(variant: Variant, d_in: usize, d_hidden: usize, d_out: usize) -> Self {
        Self {
            variant,
            d_in,
            d_hidden,
            d_out,
            pooling: 2,
            batchnorm: true,
            seed: 0,
            ensure_row_active: false,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_batchnorm(mut self, on: bool) -> Self {
        self.batchnorm = on;
        self
    }

    pub fn with_pooling(mut self, pooling: usize) -> Self {
        self.pooling = pooling;
        self
    }

    /// Width of the first linear layer's output.
    pub fn first_width(&self) -> usize {
        match self.variant {
            Variant::Maxout => self.pooling * self.d_hidden,
            _ => self.d_hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.d_hidden == 0 || self.d_out == 0 || self.pooling == 0 {
            return Err(Error::InvalidArgument(format!(
                "head dimensions must be positive: {}→{}→{} (P={})",
                self.d_in, self.d_hidden, self.d_out, self.pooling
            )));
        }
        if self.variant == Variant::SparseMorph {
            let budget = self.pooling * self.d_hidden;
            if budget > self.d_hidden * self.d_hidden {
                return Err(Error::InvalidArgument(format!(
                    "sparse budget P·n = {budget} exceeds the {n}x{n} morphological matrix",
                    n = self.d_hidden
                )));
            }
        }
        Ok(())
    }

    /// Closed-form parameter count (weights and biases; BatchNorm excluded).
    pub fn closed_form_census(&self) -> usize {
        let (i, h, o, p) = (self.d_in, self.d_hidden, self.d_out, self.pooling);
        match self.variant {
            Variant::Relu => i * h + h + h * o + o,
            Variant::Zhang => i * h + h + o * h + o,
            Variant::Maxout => p * i * h + p * h + h * o + o,
            Variant::DenseMorph => i * h + h * h + h + h * o + o,
            Variant::SparseMorph => i * h + p * h + h + h * o + o,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamRole {
    LinearWeight,
    LinearBias,
    MorphWeight,
    MorphBias,
    BnGamma,
    BnBeta,
}

impl ParamRole {
    pub fn counts_in_census(self) -> bool {
        !matches!(self, ParamRole::BnGamma | ParamRole::BnBeta)
    }
}

/// One named parameter. For linear weights `active` is the pruning mask
/// (pruned entries also hold 0.0); for max-plus weights and biases it is the
/// activity mask, and inactive values are never read.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub role: ParamRole,
    pub value: Tensor,
    pub active: Vec<bool>,
}

impl Param {
    fn new(name: &str, role: ParamRole, value: Tensor) -> Self {
        let active = vec![true; value.len()];
        Self {
            name: name.to_string(),
            role,
            value,
            active,
        }
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub const FC1_WEIGHT: &str = "fc1.weight";
pub const FC1_BIAS: &str = "fc1.bias";
pub const BN_GAMMA: &str = "bn.gamma";
pub const BN_BETA: &str = "bn.beta";
pub const MORPH_WEIGHT: &str = "morph.weight";
pub const MORPH_BIAS: &str = "morph.bias";
pub const FC2_WEIGHT: &str = "fc2.weight";
pub const FC2_BIAS: &str = "fc2.bias";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub spec: HeadSpec,
    pub params: Vec<Param>,
    pub running: Option<RunningStats>,
}

/// Node ids of one forward pass.
pub struct ForwardPass {
    pub logits: NodeId,
    /// Aligned with [`ModelParams::params`].
    pub param_nodes: Vec<NodeId>,
    pub bn_stats: Option<BatchStats>,
}

fn uniform_tensor(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let len = shape.iter().product();
    let data = (0..len).map(|_| dist.sample(rng)).collect();
    Tensor::from_parts_unchecked(shape.to_vec(), data)
}

/// Activity mask for a sparse `n_out × n_out` max-plus layer: exactly
/// `p · n_out` positions, drawn uniformly without replacement over the grid.
pub fn sparse_init(n_out: usize, p: usize, seed: u64) -> Result<Vec<bool>> {
    sparse_init_with(n_out, p, false, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn sparse_init_with(n_out: usize, p: usize, ensure_row_active: bool, rng: &mut ChaCha8Rng) -> Result<Vec<bool>> {
    let cells = n_out * n_out;
    let budget = p * n_out;
    if n_out == 0 || p == 0 || budget > cells {
        return Err(Error::InvalidArgument(format!(
            "sparse budget P·n = {budget} does not fit a {n_out}x{n_out} matrix"
        )));
    }
    let mut mask = vec![false; cells];
    if ensure_row_active {
        use rand::Rng;
        for i in 0..n_out {
            mask[i * n_out + rng.random_range(0..n_out)] = true;
        }
        let free: Vec<usize> = (0..cells).filter(|&c| !mask[c]).collect();
        for pick in rand::seq::index::sample(rng, free.len(), budget - n_out) {
            mask[free[pick]] = true;
        }
    } else {
        for pick in rand::seq::index::sample(rng, cells, budget) {
            mask[pick] = true;
        }
    }
    Ok(mask)
}

/// Builds and initialises a head. Linear layers draw from U(±1/√fan_in).
pub fn build_head(spec: &HeadSpec) -> Result<ModelParams> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (i, h, o) = (spec.d_in, spec.d_hidden, spec.d_out);
    let w1 = spec.first_width();
    let mut params = Vec::new();

    params.push(Param::new(
        FC1_WEIGHT,
        ParamRole::LinearWeight,
        uniform_tensor(&mut rng, &[w1, i], i),
    ));
    if !spec.variant.has_hidden_morph() {
        params.push(Param::new(
            FC1_BIAS,
            ParamRole::LinearBias,
            uniform_tensor(&mut rng, &[w1], i),
        ));
    }
    if spec.batchnorm {
        params.push(Param::new(
            BN_GAMMA,
            ParamRole::BnGamma,
            Tensor::new(vec![w1], vec![1.0; w1])?,
        ));
        params.push(Param::new(BN_BETA, ParamRole::BnBeta, Tensor::zeros(&[w1])));
    }
    match spec.variant {
        Variant::DenseMorph | Variant::SparseMorph => {
            let mut w = Param::new(MORPH_WEIGHT, ParamRole::MorphWeight, Tensor::zeros(&[h, h]));
            if spec.variant == Variant::SparseMorph {
                w.active = sparse_init_with(h, spec.pooling, spec.ensure_row_active, &mut rng)?;
            }
            params.push(w);
            params.push(Param::new(MORPH_BIAS, ParamRole::MorphBias, Tensor::zeros(&[h])));
        }
        Variant::Zhang => {
            params.push(Param::new(MORPH_WEIGHT, ParamRole::MorphWeight, Tensor::zeros(&[o, h])));
            params.push(Param::new(MORPH_BIAS, ParamRole::MorphBias, Tensor::zeros(&[o])));
        }
        Variant::Relu | Variant::Maxout => {}
    }
    if spec.variant != Variant::Zhang {
        params.push(Param::new(
            FC2_WEIGHT,
            ParamRole::LinearWeight,
            uniform_tensor(&mut rng, &[o, h], h),
        ));
        params.push(Param::new(
            FC2_BIAS,
            ParamRole::LinearBias,
            uniform_tensor(&mut rng, &[o], h),
        ));
    }
    let running = spec.batchnorm.then(|| RunningStats {
        mean: vec![0.0; w1],
        var: vec![1.0; w1],
    });
    let model = ModelParams {
        spec: spec.clone(),
        params,
        running,
    };
    let census = model.census();
    let expected = spec.closed_form_census();
    if census != expected {
        return Err(Error::InvalidArgument(format!(
            "parameter census {census} disagrees with closed form {expected} for {}",
            spec.variant
        )));
    }
    model.validate()?;
    Ok(model)
}

impl ModelParams {
    /// A `dense-morph` style model from explicit layers: unbiased first
    /// linear `a (h_mid × d_in)`, max-plus `w (h × h_mid)` with optional bias,
    /// and the output linear `(d_out × h)` with bias.
    pub fn dense_morph_from_parts(
        a: Tensor,
        w: TropicalMatrix,
        w0: Option<TropicalMatrix>,
        fc2_weight: Tensor,
        fc2_bias: Tensor,
    ) -> Result<Self> {
        if w.cols() != a.rows() || fc2_weight.cols() != w.rows() || fc2_bias.len() != fc2_weight.rows() {
            return Err(Error::shape(
                "dense_morph_from_parts",
                format!(
                    "linear {:?}, max-plus {}x{}, output {:?}",
                    a.shape(),
                    w.rows(),
                    w.cols(),
                    fc2_weight.shape()
                ),
            ));
        }
        let h = w.rows();
        let (bias_values, bias_active) = match w0 {
            Some(b) if b.rows() == h && b.cols() == 1 => (b.values().to_vec(), b.active().to_vec()),
            Some(b) => {
                return Err(Error::shape(
                    "dense_morph_from_parts",
                    format!("bias must be {h}x1, got {}x{}", b.rows(), b.cols()),
                ))
            }
            None => (vec![0.0; h], vec![false; h]),
        };
        let spec = HeadSpec {
            variant: Variant::DenseMorph,
            d_in: a.cols(),
            d_hidden: h,
            d_out: fc2_weight.rows(),
            pooling: 1,
            batchnorm: false,
            seed: 0,
            ensure_row_active: false,
        };
        let morph_weight = Param {
            name: MORPH_WEIGHT.into(),
            role: ParamRole::MorphWeight,
            value: Tensor::new(vec![h, w.cols()], w.values().to_vec())?,
            active: w.active().to_vec(),
        };
        let morph_bias = Param {
            name: MORPH_BIAS.into(),
            role: ParamRole::MorphBias,
            value: Tensor::new(vec![h], bias_values)?,
            active: bias_active,
        };
        let model = Self {
            spec,
            params: vec![
                Param::new(FC1_WEIGHT, ParamRole::LinearWeight, a),
                morph_weight,
                morph_bias,
                Param::new(FC2_WEIGHT, ParamRole::LinearWeight, fc2_weight),
                Param::new(FC2_BIAS, ParamRole::LinearBias, fc2_bias),
            ],
            running: None,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// The max-plus weights as a tropical matrix, if the head has them.
    pub fn morph_weight(&self) -> Option<TropicalMatrix> {
        let p = self.param(MORPH_WEIGHT)?;
        TropicalMatrix::new(
            p.value.rows(),
            p.value.cols(),
            p.value.data().to_vec(),
            p.active.clone(),
        )
        .ok()
    }

    /// Active weights and biases, BatchNorm excluded.
    pub fn census(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.role.counts_in_census())
            .map(Param::active_count)
            .sum()
    }

    /// Rows of the max-plus layer with neither an active weight nor an active bias.
    pub fn undefined_rows(&self) -> Vec<usize> {
        let (Some(w), Some(b)) = (self.param(MORPH_WEIGHT), self.param(MORPH_BIAS)) else {
            return Vec::new();
        };
        let cols = w.value.cols();
        (0..w.value.rows())
            .filter(|&i| !b.active[i] && !w.active[i * cols..(i + 1) * cols].iter().any(|&a| a))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        match self.undefined_rows().first() {
            Some(&row) => Err(Error::UndefinedOutput {
                layer: MORPH_WEIGHT.into(),
                row,
            }),
            None => Ok(()),
        }
    }

    /// Records the forward pass on `tape`. `x` is features × batch.
    pub fn forward_on(&self, tape: &mut Tape, x: Tensor, mode: Mode, on_bottom: OnBottom) -> Result<ForwardPass> {
        if x.shape().len() != 2 || x.rows() != self.param(FC1_WEIGHT).map_or(0, |p| p.value.cols()) {
            return Err(Error::shape(
                "forward",
                format!("input {:?} for a head with d_in = {}", x.shape(), self.spec.d_in),
            ));
        }
        let nodes: Vec<NodeId> = self.params.iter().map(|p| tape.param(p.value.clone())).collect();
        let node = |name: &str| self.index_of(name).map(|i| nodes[i]);
        let input = tape.input(x);

        let mut h = tape.linear(node(FC1_WEIGHT).expect("fc1"), input, node(FC1_BIAS))?;
        let mut bn_stats = None;
        if let (Some(g), Some(b)) = (node(BN_GAMMA), node(BN_BETA)) {
            let bn_mode = match (mode, &self.running) {
                (Mode::Train, _) | (Mode::Eval, None) => BnMode::Train,
                (Mode::Eval, Some(rs)) => BnMode::Eval {
                    mean: &rs.mean,
                    var: &rs.var,
                },
            };
            let (out, stats) = tape.batchnorm(h, g, b, bn_mode)?;
            h = out;
            bn_stats = stats;
        }
        let morph = |tape: &mut Tape, h: NodeId| -> Result<NodeId> {
            let w = self.param(MORPH_WEIGHT).expect("morph weight");
            let b = self.param(MORPH_BIAS).expect("morph bias");
            tape.maxplus(
                node(MORPH_WEIGHT).expect("morph weight"),
                &w.active,
                Some((node(MORPH_BIAS).expect("morph bias"), &b.active)),
                h,
                on_bottom,
            )
        };
        let logits = match self.spec.variant {
            Variant::Relu => {
                let a = tape.relu(h);
                tape.linear(node(FC2_WEIGHT).expect("fc2"), a, node(FC2_BIAS))?
            }
            Variant::Maxout => {
                let a = tape.group_max(h, self.spec.pooling)?;
                tape.linear(node(FC2_WEIGHT).expect("fc2"), a, node(FC2_BIAS))?
            }
            Variant::Zhang => {
                let a = tape.relu(h);
                morph(tape, a)?
            }
            Variant::DenseMorph | Variant::SparseMorph => {
                let a = morph(tape, h)?;
                tape.linear(node(FC2_WEIGHT).expect("fc2"), a, node(FC2_BIAS))?
            }
        };
        Ok(ForwardPass {
            logits,
            param_nodes: nodes,
            bn_stats,
        })
    }

    /// Evaluation-mode logits (d_out × batch).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.validate()?;
        let mut tape = Tape::new();
        let pass = self.forward_on(&mut tape, x.clone(), Mode::Eval, OnBottom::Reject)?;
        Ok(tape.value(pass.logits).clone())
    }

    /// Running-average update after a training-mode forward pass.
    pub fn update_running_stats(&mut self, stats: &BatchStats) {
        if let Some(rs) = self.running.as_mut() {
            for (r, &m) in rs.mean.iter_mut().zip(&stats.mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
            }
            for (r, &v) in rs.var.iter_mut().zip(&stats.var) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
            }
        }
    }
}
