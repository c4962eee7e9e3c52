//! Ranking and classification metrics.
//!
//! ROC-AUC uses the Mann–Whitney form (ties count one half). PR-AUC is
//! average precision: the step integral of precision over recall, with tied
//! scores entering the curve as a single threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::shape(
            "metric",
            format!("{} scores for {} labels", scores.len(), labels.len()),
        ));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("NaN score".into()));
    }
    Ok(())
}

/// Probability that a random positive outranks a random negative.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "roc_auc needs both classes (got {pos} positive, {neg} negative)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of mid-ranks (1-based) of the positives.
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let mid_rank = (start + 1 + end) as f64 / 2.0;
        let tied_pos = order[start..end].iter().filter(|&&i| labels[i]).count();
        rank_sum += mid_rank * tied_pos as f64;
        start = end;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision.
pub fn pr_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 {
        return Err(Error::UndefinedMetric("pr_auc needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let new_tp = order[start..end].iter().filter(|&&i| labels[i]).count();
        seen += end - start;
        if new_tp > 0 {
            tp += new_tp;
            ap += (new_tp as f64 / pos as f64) * (tp as f64 / seen as f64);
        }
        start = end;
    }
    Ok(ap)
}

/// Macro average of a per-label metric over a `labels × samples` score
/// matrix, skipping labels where the metric is undefined.
pub fn macro_average(scores: &Tensor, targets: &Tensor, metric: fn(&[f64], &[bool]) -> Result<f64>) -> Result<f64> {
    if scores.shape() != targets.shape() {
        return Err(Error::shape(
            "macro_average",
            format!("scores {:?} vs targets {:?}", scores.shape(), targets.shape()),
        ));
    }
    let mut total = 0.0;
    let mut defined = 0;
    for t in 0..scores.rows() {
        let labels: Vec<bool> = targets.row(t).iter().map(|&v| v > 0.5).collect();
        match metric(scores.row(t), &labels) {
            Ok(v) => {
                total += v;
                defined += 1;
            }
            Err(Error::UndefinedMetric(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if defined == 0 {
        return Err(Error::UndefinedMetric("no label has a defined metric".into()));
    }
    Ok(total / defined as f64)
}

pub fn macro_roc_auc(scores: &Tensor, targets: &Tensor) -> Result<f64> {
    macro_average(scores, targets, roc_auc)
}

pub fn macro_pr_auc(scores: &Tensor, targets: &Tensor) -> Result<f64> {
    macro_average(scores, targets, pr_auc)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Argmax match rate for `classes × samples` logits.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let (c, n) = (logits.rows(), logits.cols());
    if labels.len() != n || n == 0 {
        return Err(Error::shape(
            "accuracy",
            format!("{} labels for {n} samples", labels.len()),
        ));
    }
    let d = logits.data();
    let correct = (0..n)
        .filter(|&j| {
            let col: Vec<f64> = (0..c).map(|i| d[i * n + j]).collect();
            argmax(&col) == labels[j]
        })
        .count();
    Ok(correct as f64 / n as f64)
}

/// Averages score columns sharing a group id (e.g. chunks of one excerpt).
/// Groups come back in order of first appearance.
pub fn average_by_group(scores: &Tensor, groups: &[usize]) -> Result<(Tensor, Vec<usize>)> {
    let (r, n) = (scores.rows(), scores.cols());
    if groups.len() != n {
        return Err(Error::shape(
            "average_by_group",
            format!("{} ids for {n} columns", groups.len()),
        ));
    }
    let mut order: Vec<usize> = Vec::new();
    let mut slot = std::collections::HashMap::new();
    for &g in groups {
        slot.entry(g).or_insert_with(|| {
            order.push(g);
            order.len() - 1
        });
    }
    let m = order.len();
    let mut sums = vec![0.0; r * m];
    let mut counts = vec![0usize; m];
    for (j, g) in groups.iter().enumerate() {
        let s = slot[g];
        counts[s] += 1;
        for i in 0..r {
            sums[i * m + s] += scores.get(i, j);
        }
    }
    for i in 0..r {
        for s in 0..m {
            sums[i * m + s] /= counts[s] as f64;
        }
    }
    Ok((Tensor::from_parts_unchecked(vec![r, m], sums), order))
}

/// Mean and standard error (sample sd / √n) of repeated runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// `None` when fewer than two runs are available.
    pub std_err: Option<f64>,
    pub n: usize,
}

pub fn aggregate(values: &[f64]) -> Result<Aggregate> {
    let n = values.len();
    if n == 0 {
        return Err(Error::InvalidArgument("cannot aggregate zero runs".into()));
    }
    // Shifted by the first value so identical runs give exactly zero spread.
    let shift = values[0];
    let offset = values.iter().map(|v| v - shift).sum::<f64>() / n as f64;
    let mean = shift + offset;
    let std_err = (n >= 2).then(|| {
        let var = values.iter().map(|v| (v - shift - offset).powi(2)).sum::<f64>() / (n - 1) as f64;
        var.sqrt() / (n as f64).sqrt()
    });
    Ok(Aggregate { mean, std_err, n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&x| x == 1).collect()
    }

    #[test]
    fn roc_examples() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &b(&[0, 0, 1, 1])).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5; 6], &b(&[0, 1, 0, 1, 1, 0])).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.1, 0.4, 0.35, 0.8], &b(&[0, 0, 1, 1])).unwrap(), 0.75);
        assert!(matches!(
            roc_auc(&[0.1, 0.2], &b(&[1, 1])),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn pr_examples() {
        assert_eq!(pr_auc(&[0.9, 0.8, 0.1, 0.0], &b(&[1, 1, 0, 0])).unwrap(), 1.0);
        for k in 1..=6 {
            let scores: Vec<f64> = (0..6).map(|i| 10.0 - i as f64).collect();
            let mut labels = vec![false; 6];
            labels[k - 1] = true;
            assert!((pr_auc(&scores, &labels).unwrap() - 1.0 / k as f64).abs() < 1e-15);
        }
        assert!(matches!(
            pr_auc(&[0.3, 0.2], &b(&[0, 0])),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn accuracy_examples() {
        let one_hot = Tensor::from_rows(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        assert_eq!(accuracy(&one_hot, &[0, 1, 2]).unwrap(), 1.0);
        // 5 samples, 3 correct
        let logits = Tensor::from_rows(&[&[2.0, 0.0, 1.0, 0.0, 3.0], &[1.0, 5.0, 0.0, 2.0, 1.0]]);
        assert_eq!(accuracy(&logits, &[0, 1, 1, 0, 0]).unwrap(), 0.6);
        // constant logits predict class 0, which is 1/10 of a balanced label set
        let flat = Tensor::zeros(&[10, 20]);
        let labels: Vec<usize> = (0..20).map(|i| i % 10).collect();
        assert_eq!(accuracy(&flat, &labels).unwrap(), 0.1);
    }

    #[test]
    fn aggregate_examples() {
        let same = aggregate(&[0.7, 0.7, 0.7]).unwrap();
        assert_eq!(same.std_err, Some(0.0));
        let two = aggregate(&[0.90, 0.92]).unwrap();
        assert!((two.mean - 0.91).abs() < 1e-12);
        assert!((two.std_err.unwrap() - 0.01).abs() < 1e-12);
        let one = aggregate(&[0.5]).unwrap();
        assert_eq!((one.mean, one.std_err), (0.5, None));
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn macro_average_skips_undefined_labels() {
        let scores = Tensor::from_rows(&[&[0.1, 0.9, 0.5], &[0.3, 0.2, 0.1]]);
        let targets = Tensor::from_rows(&[&[0.0, 1.0, 0.0], &[0.0, 0.0, 0.0]]);
        assert_eq!(macro_roc_auc(&scores, &targets).unwrap(), 1.0);
    }

    #[test]
    fn group_average() {
        let s = Tensor::from_rows(&[&[1.0, 3.0, 10.0, 5.0]]);
        let (avg, order) = average_by_group(&s, &[7, 7, 2, 7]).unwrap();
        assert_eq!(order, vec![7, 2]);
        assert_eq!(avg.data(), &[3.0, 10.0]);
    }

    proptest! {
        #[test]
        fn roc_invariant_under_monotone_transform(
            scores in proptest::collection::vec(-5.0f64..5.0, 2..40),
            seed in any::<u64>(),
        ) {
            let labels: Vec<bool> = (0..scores.len()).map(|i| (seed >> (i % 64)) & 1 == 1).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let base = roc_auc(&scores, &labels).unwrap();
            let warped: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 + 1.0).collect();
            prop_assert!((roc_auc(&warped, &labels).unwrap() - base).abs() < 1e-12);
        }

        #[test]
        fn roc_complement_without_ties(
            scores in proptest::collection::hash_set(-1000i32..1000, 2..40),
            seed in any::<u64>(),
        ) {
            let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
            let labels: Vec<bool> = (0..scores.len()).map(|i| (seed >> (i % 64)) & 1 == 1).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let sum = roc_auc(&scores, &labels).unwrap() + roc_auc(&neg, &labels).unwrap();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }
}
