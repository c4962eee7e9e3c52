//! One-shot L1 unstructured pruning with per-variant ratio equalization.
//!
//! Every variant is pruned down to the same remaining-parameter count as a
//! ReLU head of the same shape pruned at `(r1, r2)`:
//!
//! * `relu`: first linear at `r1`, last linear at `r2`.
//! * `maxout`: the `P`-times wider first linear at `1 − (1 − r1)/P`, plus
//!   `(P − 1)·h` extra weights to offset its larger bias.
//! * `dense-morph`: first linear and max-plus weights split the ReLU
//!   first-layer budget in proportion to their size. With `d_in = d_hidden`
//!   this is the halved ratio `1 − (1 − r1)/2` on both; the budget is
//!   split in integers so the total matches ReLU exactly.
//! * `sparse-morph`: first linear at `r1` plus `P·h` extra weights; the
//!   sparse max-plus layer is left alone.
//! * `zhang`: first linear at `r1`, max-plus output layer at `r2`.
//!
//! Biases are never pruned. Pruned linear weights are zeroed and masked;
//! pruned max-plus weights are deactivated (the mask form of −∞).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SplitName};
use crate::error::{Error, Result};
use crate::heads::{HeadSpec, ModelParams, ParamRole, Variant, FC1_WEIGHT, FC2_WEIGHT, MORPH_WEIGHT};
use crate::optim::evaluate;
use crate::report::{metric_map, PruneInfo, RunReport};
use crate::tensor::Tensor;
use crate::tropical::TropicalMatrix;

/// `floor(ratio · count)`, snapping products that are integral up to
/// rounding noise (0.8 · 25600 must give 20480, not 20479).
pub fn pruned_count(count: usize, ratio: f64) -> usize {
    let x = ratio * count as f64;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * (count.max(1) as f64) {
        r as usize
    } else {
        x.floor() as usize
    }
}

/// The halved ratio used when a layer doubles in size.
pub fn adjusted_ratio(r1: f64) -> f64 {
    1.0 - (1.0 - r1) / 2.0
}

fn check_ratio(ratio: f64, what: &str) -> Result<()> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!(
            "{what} must lie in [0, 1), got {ratio}"
        )));
    }
    Ok(())
}

/// Indices of the `k` entries to drop: currently inactive entries first,
/// then ascending magnitude, ties by lowest index.
fn smallest_k(values: &[f64], active: &[bool], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        active[a]
            .cmp(&active[b])
            .then(values[a].abs().total_cmp(&values[b].abs()))
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

/// Mask after pruning `floor(ratio·count) + extra` smallest-magnitude
/// weights of a linear layer.
pub fn l1_prune_linear(weights: &Tensor, ratio: f64, extra: usize) -> Result<Vec<bool>> {
    check_ratio(ratio, "pruning ratio")?;
    let all = vec![true; weights.len()];
    let drop = pruned_count(weights.len(), ratio) + extra;
    prune_to(weights.data(), &all, weights.len().saturating_sub(drop), drop, "linear")
}

/// Mask after deactivating `floor(ratio·active_count)` active entries of
/// smallest |value|. With `bias_active`, a row left with neither weights
/// nor bias is rejected.
pub fn l1_prune_morph(w: &TropicalMatrix, ratio: f64, bias_active: Option<&[bool]>) -> Result<Vec<bool>> {
    check_ratio(ratio, "pruning ratio")?;
    let active = w.active_count();
    let drop = pruned_count(active, ratio);
    let mask = prune_to(w.values(), w.active(), active - drop, drop, "max-plus")?;
    if let Some(bias) = bias_active {
        if let Some(row) = first_undefined_row(&mask, w.cols(), bias) {
            return Err(Error::UndefinedOutput {
                layer: MORPH_WEIGHT.into(),
                row,
            });
        }
    }
    Ok(mask)
}

fn first_undefined_row(mask: &[bool], cols: usize, bias: &[bool]) -> Option<usize> {
    (0..bias.len()).find(|&i| !bias[i] && !mask[i * cols..(i + 1) * cols].iter().any(|&a| a))
}

/// Shrinks `active` until at most `target` entries survive.
fn prune_to(values: &[f64], active: &[bool], target: usize, requested: usize, what: &str) -> Result<Vec<bool>> {
    if target == 0 {
        return Err(Error::InvalidArgument(format!(
            "pruning {requested} of {} {what} weights would remove them all",
            values.len()
        )));
    }
    let mut mask = active.to_vec();
    let current = mask.iter().filter(|&&a| a).count();
    if current > target {
        let inactive = values.len() - current;
        for i in smallest_k(values, active, inactive + current - target) {
            mask[i] = false;
        }
    }
    Ok(mask)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Linear,
    Morph,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub param: String,
    pub kind: LayerKind,
    /// Weights in the layer before pruning.
    pub count: usize,
    /// Effective ratio after equalization.
    pub ratio: f64,
    /// Absolute number of weights pruned on top of `floor(ratio · count)`.
    pub extra: usize,
    pub remaining: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrunePlan {
    pub variant: Variant,
    pub r1: f64,
    pub r2: f64,
    pub layers: Vec<LayerPlan>,
    /// Parameters outside the pruned layers (biases, untouched layers).
    pub untouched: usize,
    /// Closed-form census after pruning.
    pub remaining: usize,
}

impl PrunePlan {
    pub fn layer(&self, param: &str) -> Option<&LayerPlan> {
        self.layers.iter().find(|l| l.param == param)
    }
}

fn layer(param: &str, kind: LayerKind, count: usize, ratio: f64, extra: usize) -> Result<LayerPlan> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!(
            "adjusted ratio {ratio} for {param} is outside [0, 1)"
        )));
    }
    let dropped = pruned_count(count, ratio) + extra;
    if dropped >= count {
        return Err(Error::InvalidArgument(format!(
            "plan prunes {dropped} of {count} weights in {param}"
        )));
    }
    Ok(LayerPlan {
        param: param.into(),
        kind,
        count,
        ratio,
        extra,
        remaining: count - dropped,
    })
}

/// A layer plan fixed by its kept count rather than a ratio.
fn kept(param: &str, kind: LayerKind, count: usize, keep: usize) -> Result<LayerPlan> {
    if keep == 0 || keep > count {
        return Err(Error::InvalidArgument(format!(
            "plan keeps {keep} of {count} weights in {param}"
        )));
    }
    Ok(LayerPlan {
        param: param.into(),
        kind,
        count,
        ratio: 1.0 - keep as f64 / count as f64,
        extra: 0,
        remaining: keep,
    })
}

pub fn build_prune_plan(variant: Variant, r1: f64, r2: f64, spec: &HeadSpec) -> Result<PrunePlan> {
    check_ratio(r1, "r1")?;
    check_ratio(r2, "r2")?;
    let spec = HeadSpec {
        variant,
        ..spec.clone()
    };
    spec.validate()?;
    let (i, h, o, p) = (spec.d_in, spec.d_hidden, spec.d_out, spec.pooling);
    let linear = LayerKind::Linear;
    // r1 = 0 leaves the whole first-layer group alone, equalization included.
    let (pw, extra_h) = if r1 > 0.0 { (p, h) } else { (1, 0) };
    let layers = match variant {
        Variant::Relu => vec![
            layer(FC1_WEIGHT, linear, i * h, r1, 0)?,
            layer(FC2_WEIGHT, linear, o * h, r2, 0)?,
        ],
        Variant::Maxout => vec![
            layer(
                FC1_WEIGHT,
                linear,
                p * i * h,
                1.0 - (1.0 - r1) / pw as f64,
                (pw - 1) * extra_h,
            )?,
            layer(FC2_WEIGHT, linear, o * h, r2, 0)?,
        ],
        Variant::DenseMorph => {
            // Kept weights of a ReLU first layer, shared out as i : h.
            let budget = i * h - pruned_count(i * h, r1);
            let (fc1_keep, morph_keep) = if r1 > 0.0 {
                let fc1 = (budget * i).div_ceil(i + h);
                (fc1, budget - fc1)
            } else {
                (i * h, h * h)
            };
            vec![
                kept(FC1_WEIGHT, linear, i * h, fc1_keep)?,
                kept(MORPH_WEIGHT, LayerKind::Morph, h * h, morph_keep)?,
                layer(FC2_WEIGHT, linear, o * h, r2, 0)?,
            ]
        }
        Variant::SparseMorph => vec![
            layer(FC1_WEIGHT, linear, i * h, r1, p * extra_h)?,
            layer(FC2_WEIGHT, linear, o * h, r2, 0)?,
        ],
        Variant::Zhang => vec![
            layer(FC1_WEIGHT, linear, i * h, r1, 0)?,
            layer(MORPH_WEIGHT, LayerKind::Morph, o * h, r2, 0)?,
        ],
    };
    let pruned_total: usize = layers.iter().map(|l| l.count).sum();
    let untouched = spec.closed_form_census() - pruned_total;
    let remaining = untouched + layers.iter().map(|l| l.remaining).sum::<usize>();
    Ok(PrunePlan {
        variant,
        r1,
        r2,
        layers,
        untouched,
        remaining,
    })
}

/// Result of applying a plan to a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneOutcome {
    pub masks: BTreeMap<String, Vec<bool>>,
    pub census: usize,
    /// Max-plus rows left with no active weight and no active bias.
    pub undefined_rows: Vec<usize>,
}

impl PruneOutcome {
    pub fn degenerate(&self) -> bool {
        !self.undefined_rows.is_empty()
    }
}

/// Applies a plan in place. Masks only ever shrink, and re-applying the
/// same plan is a no-op. Undefined rows are reported, not rejected.
pub fn apply_plan(model: &mut ModelParams, plan: &PrunePlan) -> Result<PruneOutcome> {
    if model.spec.variant != plan.variant {
        return Err(Error::InvalidArgument(format!(
            "plan for {} applied to a {} head",
            plan.variant, model.spec.variant
        )));
    }
    let mut masks = BTreeMap::new();
    for lp in &plan.layers {
        let param = model
            .param_mut(&lp.param)
            .ok_or_else(|| Error::InvalidArgument(format!("model has no parameter {}", lp.param)))?;
        if param.value.len() != lp.count {
            return Err(Error::shape(
                "apply_plan",
                format!(
                    "{} has {} weights, plan expects {}",
                    lp.param,
                    param.value.len(),
                    lp.count
                ),
            ));
        }
        let mask = prune_to(
            param.value.data(),
            &param.active,
            lp.remaining,
            lp.count - lp.remaining,
            &lp.param,
        )?;
        if param.role == ParamRole::LinearWeight {
            for (v, &a) in param.value.data_mut().iter_mut().zip(&mask) {
                if !a {
                    *v = 0.0;
                }
            }
        }
        param.active = mask.clone();
        masks.insert(lp.param.clone(), mask);
    }
    Ok(PruneOutcome {
        masks,
        census: model.census(),
        undefined_rows: model.undefined_rows(),
    })
}

/// Prunes a copy of `model` and evaluates it on the test split. Undefined
/// rows read as 0 and set the `degenerate` flag instead of failing.
pub fn prune_and_eval(model: &ModelParams, plan: &PrunePlan, ds: &Dataset) -> Result<RunReport> {
    let mut pruned = model.clone();
    let outcome = apply_plan(&mut pruned, plan)?;
    let eval = evaluate(&pruned, ds, SplitName::Test)?;
    Ok(RunReport {
        variant: model.spec.variant,
        seed: model.spec.seed,
        dataset: ds.name.clone(),
        params: outcome.census,
        best_epoch: 0,
        metrics: metric_map(&eval),
        pruning: Some(PruneInfo {
            r1: plan.r1,
            r2: plan.r2,
            planned: plan.remaining,
        }),
        degenerate: outcome.degenerate(),
        diverged: None,
        curves: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::build_head;

    // Remaining counts per (r2, r1) on a 512→512→50 head.
    const MTAT: [(f64, f64, usize); 16] = [
        (0.8, 0.8, 58111),
        (0.8, 0.9, 31897),
        (0.8, 0.95, 18790),
        (0.8, 0.98, 10925),
        (0.9, 0.8, 55551),
        (0.9, 0.9, 29337),
        (0.9, 0.95, 16230),
        (0.9, 0.98, 8365),
        (0.95, 0.8, 54271),
        (0.95, 0.9, 28057),
        (0.95, 0.95, 14950),
        (0.95, 0.98, 7085),
        (0.98, 0.8, 53503),
        (0.98, 0.9, 27289),
        (0.98, 0.95, 14182),
        (0.98, 0.98, 6317),
    ];

    fn oracle_relu(i: usize, h: usize, o: usize, r1: f64, r2: f64) -> usize {
        // remaining = ceil((1 − r)·count) computed in exact rationals (ratios have ≤ 2 decimals)
        let keep = |count: usize, r: f64| {
            let pct = (r * 100.0).round() as usize;
            ((100 - pct) * count).div_ceil(100)
        };
        keep(i * h, r1) + h + keep(h * o, r2) + o
    }

    #[test]
    fn linear_examples() {
        let w = Tensor::vector(vec![3.0, -1.0, 2.0, -4.0]).unwrap();
        assert_eq!(l1_prune_linear(&w, 0.0, 0).unwrap(), vec![true; 4]);
        assert_eq!(l1_prune_linear(&w, 0.5, 0).unwrap(), vec![true, false, false, true]);
        assert!(l1_prune_linear(&w, 0.5, 2).is_err());
        assert!(l1_prune_linear(&w, 1.0, 0).is_err());
    }

    #[test]
    fn morph_examples() {
        let w = TropicalMatrix::all_active(1, 3, vec![0.5, -0.1, 2.0]).unwrap();
        assert_eq!(l1_prune_morph(&w, 0.0, None).unwrap(), vec![true; 3]);
        assert_eq!(l1_prune_morph(&w, 1.0 / 3.0, None).unwrap(), vec![true, false, true]);
        let single = TropicalMatrix::all_active(2, 1, vec![0.1, 5.0]).unwrap();
        assert!(matches!(
            l1_prune_morph(&single, 0.5, Some(&[false, true])),
            Err(Error::UndefinedOutput { row: 0, .. })
        ));
        assert!(l1_prune_morph(&single, 0.5, Some(&[true, true])).is_ok());
    }

    #[test]
    fn adjusted_ratio_example() {
        assert!((adjusted_ratio(0.9) - 0.95).abs() < 1e-15);
    }

    #[test]
    fn mtat_counts_exact() {
        let spec = HeadSpec::new(Variant::Relu, 512, 512, 50);
        for (r2, r1, expected) in MTAT {
            assert_eq!(oracle_relu(512, 512, 50, r1, r2), expected);
            for v in [
                Variant::Relu,
                Variant::Maxout,
                Variant::DenseMorph,
                Variant::SparseMorph,
            ] {
                let plan = build_prune_plan(v, r1, r2, &spec).unwrap();
                assert_eq!(plan.remaining, expected, "{v} r1={r1} r2={r2}");
            }
        }
    }

    #[test]
    fn cifar_counts_within_two() {
        let table = [
            (0.7, 0.7, 41380),
            (0.7, 0.8, 28273),
            (0.7, 0.9, 15166),
            (0.8, 0.7, 40868),
            (0.8, 0.8, 27761),
            (0.8, 0.9, 14654),
            (0.9, 0.7, 40356),
            (0.9, 0.8, 27249),
            (0.9, 0.9, 14142),
            (0.95, 0.7, 40100),
            (0.95, 0.8, 26993),
            (0.95, 0.9, 13886),
        ];
        let spec = HeadSpec::new(Variant::Relu, 256, 512, 10);
        for (r2, r1, expected) in table {
            for v in [
                Variant::Relu,
                Variant::Maxout,
                Variant::DenseMorph,
                Variant::SparseMorph,
            ] {
                let plan = build_prune_plan(v, r1, r2, &spec).unwrap();
                assert!(
                    plan.remaining.abs_diff(expected) <= 2,
                    "{v} r1={r1} r2={r2}: {}",
                    plan.remaining
                );
            }
        }
    }

    #[test]
    fn remaining_strictly_decreases() {
        let grid = [0.7, 0.8, 0.9, 0.95, 0.98];
        let spec = HeadSpec::new(Variant::Relu, 512, 512, 50);
        for v in Variant::ALL {
            for w in grid.windows(2) {
                for &r in &grid {
                    let a = build_prune_plan(v, w[0], r, &spec).unwrap().remaining;
                    let b = build_prune_plan(v, w[1], r, &spec).unwrap().remaining;
                    assert!(b < a, "{v}: r1 {} → {}", w[0], w[1]);
                    let a = build_prune_plan(v, r, w[0], &spec).unwrap().remaining;
                    let b = build_prune_plan(v, r, w[1], &spec).unwrap().remaining;
                    assert!(b < a, "{v}: r2 {} → {}", w[0], w[1]);
                }
            }
        }
    }

    #[test]
    fn census_matches_plan_and_reapply_is_noop() {
        for v in Variant::ALL {
            let spec = HeadSpec::new(v, 24, 16, 6).with_seed(5);
            let mut model = build_head(&spec).unwrap();
            let plan = build_prune_plan(v, 0.7, 0.8, &spec).unwrap();
            let first = apply_plan(&mut model, &plan).unwrap();
            assert_eq!(first.census, plan.remaining, "{v}");
            let second = apply_plan(&mut model, &plan).unwrap();
            assert_eq!(first, second, "{v}");
        }
    }

    #[test]
    fn zero_plan_keeps_everything() {
        for v in Variant::ALL {
            let spec = HeadSpec::new(v, 10, 8, 3).with_seed(2);
            let mut model = build_head(&spec).unwrap();
            let before = model.clone();
            let plan = build_prune_plan(v, 0.0, 0.0, &spec).unwrap();
            assert_eq!(plan.remaining, spec.closed_form_census(), "{v}");
            apply_plan(&mut model, &plan).unwrap();
            assert_eq!(model, before, "{v}");
        }
    }

    #[test]
    fn pruned_linear_weights_are_smallest() {
        let spec = HeadSpec::new(Variant::Relu, 30, 20, 5).with_seed(11);
        let original = build_head(&spec).unwrap();
        let mut model = original.clone();
        apply_plan(&mut model, &build_prune_plan(Variant::Relu, 0.9, 0.8, &spec).unwrap()).unwrap();
        for name in [FC1_WEIGHT, FC2_WEIGHT] {
            let w = original.param(name).unwrap().value.data();
            let mask = &model.param(name).unwrap().active;
            let max_pruned = (0..w.len())
                .filter(|&k| !mask[k])
                .map(|k| w[k].abs())
                .fold(0.0, f64::max);
            let min_kept = (0..w.len())
                .filter(|&k| mask[k])
                .map(|k| w[k].abs())
                .fold(f64::INFINITY, f64::min);
            assert!(max_pruned <= min_kept, "{name}");
            assert!(model
                .param(name)
                .unwrap()
                .value
                .data()
                .iter()
                .zip(mask)
                .all(|(&v, &a)| a || v == 0.0));
        }
    }

    #[test]
    fn sparse_morph_layer_untouched() {
        let spec = HeadSpec::new(Variant::SparseMorph, 40, 10, 4).with_seed(8);
        let mut model = build_head(&spec).unwrap();
        let before = model.param(MORPH_WEIGHT).unwrap().clone();
        apply_plan(
            &mut model,
            &build_prune_plan(Variant::SparseMorph, 0.9, 0.9, &spec).unwrap(),
        )
        .unwrap();
        assert_eq!(model.param(MORPH_WEIGHT).unwrap(), &before);
    }

    #[test]
    fn zero_plan_matches_unpruned_evaluation() {
        let ds = crate::data::gen_max_affine(200, 5, 2, 3, 1).unwrap();
        for v in Variant::ALL {
            let spec = HeadSpec::new(v, 5, 6, 3).with_seed(3);
            let model = build_head(&spec).unwrap();
            let base = evaluate(&model, &ds, SplitName::Test).unwrap();
            let r = prune_and_eval(&model, &build_prune_plan(v, 0.0, 0.0, &spec).unwrap(), &ds).unwrap();
            assert_eq!(r.metrics, metric_map(&base), "{v}");
            assert_eq!(r.params, spec.closed_form_census());
        }
    }

    #[test]
    fn undefined_rows_are_flagged_not_fatal() {
        // Max-plus layer without bias: pruning can empty a row.
        let a = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let w = TropicalMatrix::all_active(2, 2, vec![0.1, 0.2, 5.0, 0.3]).unwrap();
        let fc2 = Tensor::from_rows(&[&[1.0, 1.0]]);
        let model = ModelParams::dense_morph_from_parts(a, w, None, fc2, Tensor::vector(vec![0.0]).unwrap()).unwrap();
        let plan = PrunePlan {
            variant: Variant::DenseMorph,
            r1: 0.5,
            r2: 0.0,
            layers: vec![LayerPlan {
                param: MORPH_WEIGHT.into(),
                kind: LayerKind::Morph,
                count: 4,
                ratio: 0.5,
                extra: 0,
                remaining: 2,
            }],
            untouched: 0,
            remaining: 2,
        };
        let feats = Tensor::from_rows(&[&[0.5, 1.0], &[1.0, 0.0], &[0.2, 0.3], &[0.9, 0.1]]);
        let targets = Tensor::from_rows(&[&[1.0], &[0.0], &[1.0], &[0.0]]);
        let ds = Dataset::new(
            "tiny",
            0,
            feats,
            crate::data::Targets::Multilabel(targets),
            crate::data::Splits {
                train: vec![],
                val: vec![],
                test: vec![0, 1, 2, 3],
            },
        )
        .unwrap();
        let r = prune_and_eval(&model, &plan, &ds).unwrap();
        assert!(r.degenerate);
        assert!(r.metrics.contains_key("roc_auc"));
    }

    #[test]
    fn rejects_out_of_range() {
        let spec = HeadSpec::new(Variant::Relu, 4, 4, 2);
        assert!(build_prune_plan(Variant::Relu, 1.0, 0.5, &spec).is_err());
        assert!(build_prune_plan(Variant::Relu, 0.5, -0.1, &spec).is_err());
        // sparse extra exceeds what is left of the first layer
        let tiny = HeadSpec::new(Variant::SparseMorph, 2, 4, 2);
        assert!(build_prune_plan(Variant::SparseMorph, 0.5, 0.5, &tiny).is_err());
    }
}
