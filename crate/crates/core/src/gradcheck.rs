//! Central finite differences against `backward()` over every active
//! parameter of a small head.
//!
//! The error for one entry is `|analytic − numeric| / max(|analytic|, |numeric|, FLOOR)`.
//! Points whose tape holds a near-tie (a max-type decision or ReLU input
//! within [`TIE_MARGIN`]) are resampled, since the subgradient there is
//! not what finite differences measure.

use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{OnBottom, Tape};
use crate::error::{Error, Result};
use crate::heads::{build_head, HeadSpec, Mode, ModelParams, ParamRole, Variant};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-6;
/// Denominator floor; below it gradients are compared in absolute terms.
pub const FLOOR: f64 = 1e-5;
pub const TIE_MARGIN: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;
const MAX_ATTEMPTS: usize = 50;
const BATCH: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub variant: Variant,
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Parameter and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    /// Points discarded for sitting too close to a tie.
    pub resamples: usize,
    pub tie_margin: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

struct Point {
    x: Tensor,
    targets: Vec<f64>,
}

fn loss_of(
    model: &ModelParams,
    p: &Point,
) -> Result<(f64, Tape, crate::autodiff::NodeId, Vec<crate::autodiff::NodeId>)> {
    let mut tape = Tape::new();
    let pass = model.forward_on(&mut tape, p.x.clone(), Mode::Train, OnBottom::Reject)?;
    let loss = tape.sigmoid_bce(pass.logits, &p.targets)?;
    Ok((tape.value(loss).data()[0], tape, loss, pass.param_nodes))
}

/// Draws a fresh evaluation point: inputs, targets and max-plus values.
/// Max-plus weights start at 0 in a real head, which makes every unit a
/// tie; here they are spread out so the check probes non-tie points.
fn draw(base: &ModelParams, rng: &mut ChaCha8Rng) -> Result<(ModelParams, Point)> {
    let unit = Uniform::new(-1.0, 1.0).expect("valid range");
    let mut model = base.clone();
    for p in &mut model.params {
        if matches!(p.role, ParamRole::MorphWeight | ParamRole::MorphBias) {
            for (v, &a) in p.value.data_mut().iter_mut().zip(&p.active) {
                if a {
                    *v = unit.sample(rng);
                }
            }
        }
        if p.role == ParamRole::BnGamma {
            for v in p.value.data_mut() {
                *v = 1.0 + 0.5 * unit.sample(rng);
            }
        }
    }
    let d_in = model.spec.d_in;
    let x = Tensor::new(
        vec![d_in, BATCH],
        (0..d_in * BATCH).map(|_| 2.0 * unit.sample(rng)).collect(),
    )?;
    let targets = (0..model.spec.d_out * BATCH)
        .map(|_| f64::from(u8::from(rng.random::<bool>())))
        .collect();
    Ok((model, Point { x, targets }))
}

pub fn gradcheck(spec: &HeadSpec, seed: u64) -> Result<GradcheckReport> {
    let base = build_head(&HeadSpec { seed, ..spec.clone() })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut resamples = 0;
    let (mut model, point, margin) = loop {
        let (model, point) = draw(&base, &mut rng)?;
        let (_, tape, _, _) = loss_of(&model, &point)?;
        let margin = tape.min_tie_margin();
        if margin > TIE_MARGIN {
            break (model, point, margin);
        }
        resamples += 1;
        if resamples >= MAX_ATTEMPTS {
            return Err(Error::InvalidArgument(format!(
                "no tie-free point for {} after {MAX_ATTEMPTS} draws",
                spec.variant
            )));
        }
    };

    let (_, tape, loss, nodes) = loss_of(&model, &point)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = nodes
        .iter()
        .zip(&model.params)
        .map(|(&id, p)| grads.get(id).cloned().unwrap_or_else(|| Tensor::zeros(p.value.shape())))
        .collect();

    let mut report = GradcheckReport {
        variant: spec.variant,
        checked: 0,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        resamples,
        tie_margin: margin,
    };
    for k in 0..model.params.len() {
        for i in 0..model.params[k].value.len() {
            if !model.params[k].active[i] {
                if analytic[k].data()[i] != 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "inactive entry {}[{i}] received gradient {}",
                        model.params[k].name,
                        analytic[k].data()[i]
                    )));
                }
                continue;
            }
            let orig = model.params[k].value.data()[i];
            model.params[k].value.data_mut()[i] = orig + STEP;
            let up = loss_of(&model, &point)?.0;
            model.params[k].value.data_mut()[i] = orig - STEP;
            let down = loss_of(&model, &point)?.0;
            model.params[k].value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic[k].data()[i];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(FLOOR);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((model.params[k].name.clone(), i));
            }
        }
    }
    Ok(report)
}
