//! Run reports, curve and sweep CSVs, seed aggregation and markdown tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::Variant;
use crate::metrics::{self, Aggregate};
use crate::optim::{EpochRecord, Evaluation, OptimizerKind};

/// Everything a run produces besides its checkpoint. Contains no timing
/// or path information, so identical runs serialize identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: Variant,
    pub seed: u64,
    pub dataset: String,
    /// Active weights and biases (BatchNorm excluded).
    pub params: usize,
    pub best_epoch: usize,
    /// Test-split metrics keyed `roc_auc`, `pr_auc`, `accuracy`, `loss`.
    pub metrics: BTreeMap<String, f64>,
    #[serde(default)]
    pub pruning: Option<PruneInfo>,
    /// A pruned max-plus row lost every weight and its bias; it reads as 0.
    #[serde(default)]
    pub degenerate: bool,
    #[serde(default)]
    pub diverged: Option<String>,
    #[serde(default)]
    pub curves: Vec<EpochRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneInfo {
    pub r1: f64,
    pub r2: f64,
    /// Closed-form count from the plan; equals `params` after pruning.
    pub planned: usize,
}

pub fn metric_map(e: &Evaluation) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    m.insert("loss".to_string(), e.loss);
    for (k, v) in [("roc_auc", e.roc_auc), ("pr_auc", e.pr_auc), ("accuracy", e.accuracy)] {
        if let Some(v) = v {
            m.insert(k.to_string(), v);
        }
    }
    m
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// ROC-AUC when present, accuracy otherwise.
    pub fn primary(&self) -> Option<f64> {
        self.metrics.get("roc_auc").or(self.metrics.get("accuracy")).copied()
    }
}

/// Mean and standard error of every metric across runs. All runs must
/// report the same metric names.
pub fn aggregate_runs(runs: &[RunReport]) -> Result<BTreeMap<String, Aggregate>> {
    let first = runs
        .first()
        .ok_or_else(|| Error::InvalidArgument("no runs to aggregate".into()))?;
    let keys: BTreeSet<&String> = first.metrics.keys().collect();
    for r in runs {
        let other: BTreeSet<&String> = r.metrics.keys().collect();
        if other != keys {
            return Err(Error::Schema(format!(
                "inconsistent metric sets: {:?} vs {:?} (seed {})",
                keys, other, r.seed
            )));
        }
    }
    keys.into_iter()
        .map(|k| {
            let values: Vec<f64> = runs.iter().map(|r| r.metrics[k]).collect();
            Ok((k.clone(), metrics::aggregate(&values)?))
        })
        .collect()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Schema(format!("{other:?}")),
    })
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Schema(format!("{other:?}")),
    })
}

#[derive(Serialize, Deserialize)]
struct CurveRow {
    epoch: usize,
    phase: usize,
    optimizer: OptimizerKind,
    lr: f64,
    train_loss: f64,
    val_loss: f64,
    val_roc_auc: Option<f64>,
    val_pr_auc: Option<f64>,
    val_accuracy: Option<f64>,
}

/// Per-epoch CSV: epoch, phase, optimizer, lr, train_loss, val_loss and
/// validation metric columns (empty when not applicable).
pub fn write_curves_csv(path: &Path, curves: &[EpochRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in curves {
        w.serialize(CurveRow {
            epoch: r.epoch,
            phase: r.phase,
            optimizer: r.optimizer,
            lr: r.lr,
            train_loss: r.train_loss,
            val_loss: r.val_loss,
            val_roc_auc: r.val_roc_auc,
            val_pr_auc: r.val_pr_auc,
            val_accuracy: r.val_accuracy,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_curves_csv(path: &Path) -> Result<Vec<EpochRecord>> {
    csv_reader(path)?
        .deserialize::<CurveRow>()
        .map(|row| {
            let r = row?;
            Ok(EpochRecord {
                epoch: r.epoch,
                phase: r.phase,
                optimizer: r.optimizer,
                lr: r.lr,
                train_loss: r.train_loss,
                val_loss: r.val_loss,
                val_roc_auc: r.val_roc_auc,
                val_pr_auc: r.val_pr_auc,
                val_accuracy: r.val_accuracy,
            })
        })
        .collect()
}

/// One `(r1, r2)` cell of a pruning sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub variant: Variant,
    pub r1: f64,
    pub r2: f64,
    pub remaining_params: usize,
    pub roc_auc: Option<f64>,
    pub pr_auc: Option<f64>,
    pub accuracy: Option<f64>,
    pub loss: f64,
    pub degenerate: bool,
    pub seed: u64,
}

impl SweepRow {
    pub fn from_report(r: &RunReport) -> Result<Self> {
        let p = r
            .pruning
            .ok_or_else(|| Error::InvalidArgument("sweep rows need a pruned report".into()))?;
        Ok(SweepRow {
            variant: r.variant,
            r1: p.r1,
            r2: p.r2,
            remaining_params: r.params,
            roc_auc: r.metrics.get("roc_auc").copied(),
            pr_auc: r.metrics.get("pr_auc").copied(),
            accuracy: r.metrics.get("accuracy").copied(),
            loss: r.metrics["loss"],
            degenerate: r.degenerate,
            seed: r.seed,
        })
    }
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    csv_reader(path)?
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

fn cell(a: &Aggregate) -> String {
    match a.std_err {
        Some(se) => format!("{:.4} ± {:.4}", a.mean, se),
        None => format!("{:.4} ± n/a", a.mean),
    }
}

const METRIC_ORDER: [&str; 4] = ["roc_auc", "pr_auc", "accuracy", "loss"];

/// Method × metric table of mean ± SE over seeds.
pub fn method_table(groups: &BTreeMap<String, Vec<RunReport>>) -> Result<(String, String)> {
    let mut aggregated = BTreeMap::new();
    let mut names: BTreeSet<String> = BTreeSet::new();
    for (method, runs) in groups {
        let agg = aggregate_runs(runs)?;
        names.extend(agg.keys().cloned());
        aggregated.insert(method.clone(), (runs.len(), agg));
    }
    let cols: Vec<&str> = METRIC_ORDER.iter().copied().filter(|m| names.contains(*m)).collect();
    let mut md = format!(
        "| method | runs | {} |\n|---|---|{}\n",
        cols.join(" | "),
        "---|".repeat(cols.len())
    );
    let mut csv = String::from("method,runs");
    for c in &cols {
        let _ = write!(csv, ",{c}_mean,{c}_se");
    }
    csv.push('\n');
    for (method, (n, agg)) in &aggregated {
        let _ = write!(md, "| {method} | {n} |");
        let _ = write!(csv, "{method},{n}");
        for c in &cols {
            match agg.get(*c) {
                Some(a) => {
                    let _ = write!(md, " {} |", cell(a));
                    let se = a.std_err.map_or("n/a".to_string(), |s| s.to_string());
                    let _ = write!(csv, ",{},{se}", a.mean);
                }
                None => {
                    md.push_str(" |");
                    csv.push_str(",,");
                }
            }
        }
        md.push('\n');
        csv.push('\n');
    }
    Ok((md, csv))
}

/// Ratio-grid × method table over sweep rows (mean ± SE of the first
/// available metric, ROC-AUC or accuracy).
pub fn pruning_table(rows: &[SweepRow]) -> Result<(String, String)> {
    type Key = (u64, u64);
    let key = |r: &SweepRow| -> Key { (r.r2.to_bits(), r.r1.to_bits()) };
    let value = |r: &SweepRow| r.roc_auc.or(r.accuracy);
    let methods: BTreeSet<Variant> = rows.iter().map(|r| r.variant).collect();
    let mut grid: BTreeMap<(u64, u64), (f64, f64, BTreeMap<Variant, (Vec<f64>, usize)>)> = BTreeMap::new();
    for r in rows {
        let v = value(r).ok_or_else(|| Error::Schema("sweep row without a ranking metric".into()))?;
        let entry = grid.entry(key(r)).or_insert_with(|| (r.r2, r.r1, BTreeMap::new()));
        let slot = entry
            .2
            .entry(r.variant)
            .or_insert_with(|| (Vec::new(), r.remaining_params));
        slot.0.push(v);
    }
    let mut ordered: Vec<_> = grid.into_values().collect();
    ordered.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let header: Vec<String> = methods.iter().map(|m| m.to_string()).collect();
    let mut md = format!(
        "| r2 | r1 (params) | {} |\n|---|---|{}\n",
        header.join(" | "),
        "---|".repeat(header.len())
    );
    let mut csv = String::from("r2,r1");
    for m in &methods {
        let _ = write!(csv, ",{m}_params,{m}_mean,{m}_se");
    }
    csv.push('\n');
    for (r2, r1, cells) in ordered {
        let params = cells.values().next().map_or(0, |c| c.1);
        let _ = write!(md, "| {r2} | {r1} ({params}) |");
        let _ = write!(csv, "{r2},{r1}");
        for m in &methods {
            match cells.get(m) {
                Some((vals, p)) => {
                    let a = metrics::aggregate(vals)?;
                    let _ = write!(md, " {} |", cell(&a));
                    let se = a.std_err.map_or("n/a".to_string(), |s| s.to_string());
                    let _ = write!(csv, ",{p},{},{se}", a.mean);
                }
                None => {
                    md.push_str(" |");
                    csv.push_str(",,,");
                }
            }
        }
        md.push('\n');
        csv.push('\n');
    }
    Ok((md, csv))
}

pub const CONVERGENCE_EPOCHS: usize = 25;

/// Plot-ready CSV: one row per (method, seed, epoch ≤ 25).
pub fn convergence_csv(groups: &BTreeMap<String, Vec<RunReport>>) -> String {
    let mut out = String::from("method,seed,epoch,val_loss,val_roc_auc,val_pr_auc,val_accuracy\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for (method, runs) in groups {
        for r in runs {
            for e in r.curves.iter().filter(|e| e.epoch <= CONVERGENCE_EPOCHS) {
                let _ = writeln!(
                    out,
                    "{method},{},{},{},{},{},{}",
                    r.seed,
                    e.epoch,
                    e.val_loss,
                    opt(e.val_roc_auc),
                    opt(e.val_pr_auc),
                    opt(e.val_accuracy)
                );
            }
        }
    }
    out
}
