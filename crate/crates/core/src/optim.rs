//! Adam and Nesterov SGD over masked parameters, the phased training loop
//! and evaluation.
//!
//! Inactive entries (pruned linear weights, −∞ max-plus weights) carry no
//! optimizer state and are never updated.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{OnBottom, Tape};
use crate::data::{BatchTargets, Dataset, SplitName, Targets};
use crate::error::{Error, Result};
use crate::heads::{Mode, ModelParams, Param, ParamRole};
use crate::metrics;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    SgdNesterov,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::SgdNesterov => "sgd_nesterov",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub epochs: usize,
}

fn default_momentum() -> f64 {
    0.9
}
fn default_batch() -> usize {
    128
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub phases: Vec<Phase>,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    /// Decay every trainable entry instead of linear weights only.
    #[serde(default)]
    pub decay_all: bool,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_eps")]
    pub adam_eps: f64,
}

impl TrainConfig {
    pub fn new(phases: Vec<Phase>) -> Self {
        Self {
            phases,
            momentum: default_momentum(),
            weight_decay: 0.0,
            decay_all: false,
            batch_size: default_batch(),
            seed: 0,
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            adam_eps: default_eps(),
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.phases.iter().map(|p| p.epochs).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, detail: String| {
            Err(Error::Config {
                path: path.into(),
                detail,
            })
        };
        if self.phases.is_empty() {
            return bad("train.phases", "at least one phase is required".into());
        }
        for (k, p) in self.phases.iter().enumerate() {
            if p.epochs == 0 {
                return bad(&format!("train.phases.{k}.epochs"), "must be at least 1".into());
            }
            if !(p.lr.is_finite() && p.lr >= 0.0) {
                return bad(
                    &format!("train.phases.{k}.lr"),
                    format!("must be finite and non-negative, got {}", p.lr),
                );
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("train.momentum", format!("must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(
                "train.weight_decay",
                format!("must be non-negative, got {}", self.weight_decay),
            );
        }
        if self.batch_size < 2 {
            return bad(
                "train.batch_size",
                format!("must be at least 2, got {}", self.batch_size),
            );
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || self.adam_eps <= 0.0 {
            return bad(
                "train.adam_*",
                "betas must lie in [0, 1) and eps must be positive".into(),
            );
        }
        Ok(())
    }
}

/// Per-entry optimizer buffers, aligned with the model's parameters.
/// Adam uses both; Nesterov keeps its velocity in `first`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, params: &[Param]) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Self {
            kind,
            step: 0,
            first: zeros(),
            second: match kind {
                OptimizerKind::Adam => zeros(),
                OptimizerKind::SgdNesterov => Vec::new(),
            },
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Hyper {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub decay_all: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Hyper {
    pub fn from_config(cfg: &TrainConfig, lr: f64) -> Self {
        Self {
            lr,
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
            decay_all: cfg.decay_all,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        }
    }

    fn decay_for(&self, role: ParamRole) -> f64 {
        if self.decay_all || role == ParamRole::LinearWeight {
            self.weight_decay
        } else {
            0.0
        }
    }
}

fn check_grads(params: &[Param], grads: &[Tensor], state: &OptimizerState) -> Result<()> {
    if grads.len() != params.len() || state.first.len() != params.len() {
        return Err(Error::shape(
            "optimizer",
            format!(
                "{} params, {} grads, {} state slots",
                params.len(),
                grads.len(),
                state.first.len()
            ),
        ));
    }
    for (p, g) in params.iter().zip(grads) {
        if g.len() != p.value.len() {
            return Err(Error::shape(
                "optimizer",
                format!("gradient for {} has {} entries", p.name, g.len()),
            ));
        }
        if let Some(k) = (0..g.len()).find(|&k| p.active[k] && !g.data()[k].is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of {}[{k}] is {}",
                p.name,
                g.data()[k]
            )));
        }
    }
    Ok(())
}

pub fn adam_step(params: &mut [Param], grads: &[Tensor], state: &mut OptimizerState, hp: &Hyper) -> Result<()> {
    check_grads(params, grads, state)?;
    state.step += 1;
    let t = state.step as i32;
    let (c1, c2) = (1.0 - hp.beta1.powi(t), 1.0 - hp.beta2.powi(t));
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let wd = hp.decay_for(p.role);
        let (m, v) = (&mut state.first[k], &mut state.second[k]);
        let w = p.value.data_mut();
        for i in 0..w.len() {
            if !p.active[i] {
                continue;
            }
            let g = g.data()[i] + wd * w[i];
            m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
            v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
            w[i] -= hp.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + hp.eps);
        }
    }
    Ok(())
}

/// Nesterov momentum in the dampening-free form `v ← μv + g`, step `g + μv`.
pub fn sgd_nesterov_step(params: &mut [Param], grads: &[Tensor], state: &mut OptimizerState, hp: &Hyper) -> Result<()> {
    check_grads(params, grads, state)?;
    state.step += 1;
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let wd = hp.decay_for(p.role);
        let buf = &mut state.first[k];
        let w = p.value.data_mut();
        for i in 0..w.len() {
            if !p.active[i] {
                continue;
            }
            let g = g.data()[i] + wd * w[i];
            buf[i] = hp.momentum * buf[i] + g;
            w[i] -= hp.lr * (g + hp.momentum * buf[i]);
        }
    }
    Ok(())
}

pub fn optimizer_step(params: &mut [Param], grads: &[Tensor], state: &mut OptimizerState, hp: &Hyper) -> Result<()> {
    match state.kind {
        OptimizerKind::Adam => adam_step(params, grads, state, hp),
        OptimizerKind::SgdNesterov => sgd_nesterov_step(params, grads, state, hp),
    }
}

/// Loss of one batch, recorded on `tape`.
fn batch_loss(
    tape: &mut Tape,
    logits: crate::autodiff::NodeId,
    targets: &BatchTargets,
) -> Result<crate::autodiff::NodeId> {
    match targets {
        BatchTargets::Binary(t) => tape.sigmoid_bce(logits, t),
        BatchTargets::Classes(c) => tape.softmax_ce(logits, c),
    }
}

/// One optimizer step on one batch. Returns the batch loss.
pub fn train_step(
    model: &mut ModelParams,
    state: &mut OptimizerState,
    x: Tensor,
    targets: &BatchTargets,
    hp: &Hyper,
) -> Result<f64> {
    let mut tape = Tape::new();
    let pass = model.forward_on(&mut tape, x, Mode::Train, OnBottom::Reject)?;
    let loss = batch_loss(&mut tape, pass.logits, targets)?;
    let loss_value = tape.value(loss).data()[0];
    let mut grads = tape.backward(loss)?;
    let grads: Vec<Tensor> = pass
        .param_nodes
        .iter()
        .zip(&model.params)
        .map(|(&id, p)| grads.take(id).unwrap_or_else(|| Tensor::zeros(p.value.shape())))
        .collect();
    optimizer_step(&mut model.params, &grads, state, hp)?;
    if let Some(stats) = &pass.bn_stats {
        model.update_running_stats(stats);
    }
    Ok(loss_value)
}

/// Evaluation summary on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub roc_auc: Option<f64>,
    pub pr_auc: Option<f64>,
    pub accuracy: Option<f64>,
}

impl Evaluation {
    /// ROC-AUC for tagging, accuracy for classification.
    pub fn primary(&self) -> f64 {
        self.roc_auc.or(self.accuracy).unwrap_or(f64::NAN)
    }
}

const EVAL_CHUNK: usize = 2048;

/// Eval-mode logits for a set of samples (outputs × samples). Rows of a
/// max-plus layer left undefined by pruning read as 0.
pub fn predict(model: &ModelParams, ds: &Dataset, idx: &[usize]) -> Result<Tensor> {
    let outputs = ds.targets.outputs();
    let n = idx.len();
    let mut out = vec![0.0; outputs * n];
    for (c, chunk) in idx.chunks(EVAL_CHUNK).enumerate() {
        let mut tape = Tape::new();
        let pass = model.forward_on(&mut tape, ds.batch_inputs(chunk), Mode::Eval, OnBottom::Zero)?;
        let z = tape.value(pass.logits);
        if z.rows() != outputs {
            return Err(Error::shape(
                "predict",
                format!("head emits {} outputs, dataset has {outputs}", z.rows()),
            ));
        }
        let b = chunk.len();
        for r in 0..outputs {
            out[r * n + c * EVAL_CHUNK..r * n + c * EVAL_CHUNK + b].copy_from_slice(&z.data()[r * b..(r + 1) * b]);
        }
    }
    Ok(Tensor::from_parts_unchecked(vec![outputs, n], out))
}

pub fn evaluate(model: &ModelParams, ds: &Dataset, split: SplitName) -> Result<Evaluation> {
    let idx = ds.splits.split(split);
    if idx.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "split {split:?} of {} is empty",
            ds.name
        )));
    }
    let logits = predict(model, ds, idx)?;
    let mut tape = Tape::new();
    let z = tape.input(logits.clone());
    let targets = ds.batch_targets(idx);
    let loss = batch_loss(&mut tape, z, &targets)?;
    let loss = tape.value(loss).data()[0];
    Ok(match (&ds.targets, targets) {
        (Targets::Multilabel(_), BatchTargets::Binary(t)) => {
            let t = Tensor::from_parts_unchecked(logits.shape().to_vec(), t);
            let finite = logits.data().iter().all(|v| v.is_finite());
            Evaluation {
                loss,
                roc_auc: if finite {
                    metrics::macro_roc_auc(&logits, &t).ok()
                } else {
                    None
                },
                pr_auc: if finite {
                    metrics::macro_pr_auc(&logits, &t).ok()
                } else {
                    None
                },
                accuracy: None,
            }
        }
        (_, BatchTargets::Classes(labels)) => Evaluation {
            loss,
            roc_auc: None,
            pr_auc: None,
            accuracy: Some(metrics::accuracy(&logits, &labels)?),
        },
        (_, BatchTargets::Binary(_)) => unreachable!("binary targets only come from multilabel data"),
    })
}

/// One row of the training curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_roc_auc: Option<f64>,
    pub val_pr_auc: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    /// Parameters at the epoch with the lowest validation loss.
    pub best: ModelParams,
    pub best_epoch: usize,
    pub curves: Vec<EpochRecord>,
    /// Set when training stopped early on a non-finite loss or gradient.
    pub diverged: Option<String>,
}

/// Runs every phase in order. Parameters carry over between phases;
/// optimizer state does not.
pub fn train(model: ModelParams, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, ds, cfg, |_| {})
}

/// [`train`] with a callback after each epoch.
pub fn train_with(
    mut model: ModelParams,
    ds: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.validate()?;
    if ds.splits.train.len() < 2 || ds.splits.val.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} needs a train split of at least 2 and a non-empty val split",
            ds.name
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = ds.splits.train.clone();
    let mut curves = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut epoch = 0;
    let mut diverged = None;

    'phases: for (phase_idx, phase) in cfg.phases.iter().enumerate() {
        let mut state = OptimizerState::new(phase.optimizer, &model.params);
        let hp = Hyper::from_config(cfg, phase.lr);
        for _ in 0..phase.epochs {
            epoch += 1;
            order.shuffle(&mut rng);
            let (mut loss_sum, mut seen) = (0.0, 0usize);
            // A trailing batch of one sample has no batch variance; skip it.
            for batch in order.chunks(cfg.batch_size).filter(|b| b.len() >= 2) {
                let step = train_step(
                    &mut model,
                    &mut state,
                    ds.batch_inputs(batch),
                    &ds.batch_targets(batch),
                    &hp,
                );
                match step {
                    Ok(l) if l.is_finite() => {
                        loss_sum += l * batch.len() as f64;
                        seen += batch.len();
                    }
                    Ok(l) => {
                        diverged = Some(format!("epoch {epoch}: training loss {l}"));
                        break 'phases;
                    }
                    Err(Error::NonFinite(msg)) => {
                        diverged = Some(format!("epoch {epoch}: {msg}"));
                        break 'phases;
                    }
                    Err(e) => return Err(e),
                }
            }
            let val = evaluate(&model, ds, SplitName::Val)?;
            let record = EpochRecord {
                epoch,
                phase: phase_idx,
                optimizer: phase.optimizer,
                lr: phase.lr,
                train_loss: loss_sum / seen.max(1) as f64,
                val_loss: val.loss,
                val_roc_auc: val.roc_auc,
                val_pr_auc: val.pr_auc,
                val_accuracy: val.accuracy,
            };
            on_epoch(&record);
            curves.push(record);
            if !val.loss.is_finite() {
                diverged = Some(format!("epoch {epoch}: validation loss {}", val.loss));
                break 'phases;
            }
            if best.as_ref().is_none_or(|(l, _, _)| val.loss < *l) {
                best = Some((val.loss, epoch, model.clone()));
            }
        }
    }
    match best {
        Some((_, best_epoch, best)) => Ok(TrainOutcome {
            best,
            best_epoch,
            curves,
            diverged,
        }),
        None => Err(Error::Diverged {
            epoch,
            detail: diverged.unwrap_or_else(|| "no epoch completed".into()),
        }),
    }
}
