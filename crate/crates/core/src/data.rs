//! Datasets: IDX and CIFAR-10 binary loaders, a features CSV format and the
//! synthetic max-affine tagging task.
//!
//! Features are stored samples × features. Batches handed to a head are
//! transposed to features × batch.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Multilabel,
    Multiclass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    /// samples × tags, entries in {0, 1}.
    Multilabel(Tensor),
    Multiclass {
        labels: Vec<usize>,
        classes: usize,
    },
}

impl Targets {
    pub fn task(&self) -> Task {
        match self {
            Targets::Multilabel(_) => Task::Multilabel,
            Targets::Multiclass { .. } => Task::Multiclass,
        }
    }

    /// Width of the head output layer.
    pub fn outputs(&self) -> usize {
        match self {
            Targets::Multilabel(t) => t.cols(),
            Targets::Multiclass { classes, .. } => *classes,
        }
    }

    fn len(&self) -> usize {
        match self {
            Targets::Multilabel(t) => t.rows(),
            Targets::Multiclass { labels, .. } => labels.len(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    /// Shuffles `0..n` and cuts it by the given train and val fractions; the
    /// remainder is test.
    pub fn random(n: usize, train: f64, val: f64, seed: u64) -> Self {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = (train * n as f64).round() as usize;
        let n_val = ((val * n as f64).round() as usize).min(n - n_train);
        let test = idx.split_off(n_train + n_val);
        let val = idx.split_off(n_train);
        Splits { train: idx, val, test }
    }

    pub fn split(&self, name: SplitName) -> &[usize] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

/// Targets for one batch, in the layout the loss ops expect.
#[derive(Clone, Debug, PartialEq)]
pub enum BatchTargets {
    /// tags × batch, row-major.
    Binary(Vec<f64>),
    Classes(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub seed: u64,
    pub features: Tensor,
    pub targets: Targets,
    pub splits: Splits,
}

impl Dataset {
    pub fn new(name: impl Into<String>, seed: u64, features: Tensor, targets: Targets, splits: Splits) -> Result<Self> {
        let ds = Dataset {
            name: name.into(),
            seed,
            features,
            targets,
            splits,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn task(&self) -> Task {
        self.targets.task()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.features.shape().len() != 2 {
            return Err(Error::Schema(format!(
                "features must be 2-D, got {:?}",
                self.features.shape()
            )));
        }
        if self.targets.len() != n {
            return Err(Error::Schema(format!(
                "{} target rows for {n} samples",
                self.targets.len()
            )));
        }
        if let Some(v) = self.features.data().iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature value {v}")));
        }
        match &self.targets {
            Targets::Multilabel(t) => {
                if t.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::Schema("multilabel targets must be 0 or 1".into()));
                }
            }
            Targets::Multiclass { labels, classes } => {
                if let Some(l) = labels.iter().find(|&&l| l >= *classes) {
                    return Err(Error::Schema(format!("label {l} outside 0..{classes}")));
                }
            }
        }
        let mut seen = vec![false; n];
        for &i in self
            .splits
            .train
            .iter()
            .chain(&self.splits.val)
            .chain(&self.splits.test)
        {
            if i >= n || seen[i] {
                return Err(Error::Schema(format!("split index {i} out of range or repeated")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|&s| !s) {
            return Err(Error::Schema("splits do not cover every sample".into()));
        }
        Ok(())
    }

    /// Inputs for the given samples as features × batch.
    pub fn batch_inputs(&self, idx: &[usize]) -> Tensor {
        let (d, b) = (self.dim(), idx.len());
        let x = self.features.data();
        let mut out = vec![0.0; d * b];
        for (j, &s) in idx.iter().enumerate() {
            for (k, &v) in x[s * d..(s + 1) * d].iter().enumerate() {
                out[k * b + j] = v;
            }
        }
        Tensor::from_parts_unchecked(vec![d, b], out)
    }

    pub fn batch_targets(&self, idx: &[usize]) -> BatchTargets {
        match &self.targets {
            Targets::Multilabel(t) => {
                let (k, b) = (t.cols(), idx.len());
                let mut out = vec![0.0; k * b];
                for (j, &s) in idx.iter().enumerate() {
                    for (tag, &v) in t.row(s).iter().enumerate() {
                        out[tag * b + j] = v;
                    }
                }
                BatchTargets::Binary(out)
            }
            Targets::Multiclass { labels, .. } => BatchTargets::Classes(idx.iter().map(|&i| labels[i]).collect()),
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, offset: usize, detail: impl Into<String>) -> Error {
    Error::Parse {
        source_name: path.display().to_string(),
        offset: offset as u64,
        detail: detail.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| {
            parse_err(
                path,
                offset,
                format!("truncated: need 4 bytes, file has {}", bytes.len()),
            )
        })
}

/// Header of an IDX file: returns dims and the payload offset.
fn idx_header(bytes: &[u8], path: &Path, magic: u32) -> Result<(Vec<usize>, usize)> {
    let found = be_u32(bytes, 0, path)?;
    if found != magic {
        return Err(parse_err(
            path,
            0,
            format!("bad magic 0x{found:08x}, expected 0x{magic:08x}"),
        ));
    }
    let ndim = (magic & 0xff) as usize;
    let dims = (0..ndim)
        .map(|k| be_u32(bytes, 4 + 4 * k, path).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let start = 4 + 4 * ndim;
    let need = start + dims.iter().product::<usize>();
    if bytes.len() < need {
        return Err(parse_err(
            path,
            bytes.len(),
            format!("truncated: header promises {need} bytes, file has {}", bytes.len()),
        ));
    }
    Ok((dims, start))
}

/// MNIST-style IDX pair. Pixels are scaled to [0, 1]; splits are 80/10/10
/// drawn with `seed`.
pub fn load_idx(images: &Path, labels: &Path, seed: u64) -> Result<Dataset> {
    let img = read(images)?;
    let lab = read(labels)?;
    let (idims, istart) = idx_header(&img, images, 0x0000_0803)?;
    let (ldims, lstart) = idx_header(&lab, labels, 0x0000_0801)?;
    let (n, pixels) = (idims[0], idims[1] * idims[2]);
    if ldims[0] != n {
        return Err(parse_err(labels, 4, format!("{} labels for {n} images", ldims[0])));
    }
    if n == 0 || pixels == 0 {
        return Err(parse_err(images, 4, "empty image set"));
    }
    let features = img[istart..istart + n * pixels]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    let labels: Vec<usize> = lab[lstart..lstart + n].iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(1, |&m| m + 1).max(10);
    Dataset::new(
        "idx",
        seed,
        Tensor::new(vec![n, pixels], features)?,
        Targets::Multiclass { labels, classes },
        Splits::random(n, 0.8, 0.1, seed),
    )
}

pub const CIFAR_RECORD: usize = 1 + 3072;

fn cifar_records(path: &Path, grayscale: bool, feats: &mut Vec<f64>, labels: &mut Vec<usize>) -> Result<usize> {
    let bytes = read(path)?;
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(parse_err(
            path,
            bytes.len() - bytes.len() % CIFAR_RECORD,
            format!(
                "{} bytes is not a whole number of {CIFAR_RECORD}-byte records",
                bytes.len()
            ),
        ));
    }
    for (r, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(parse_err(
                path,
                r * CIFAR_RECORD,
                format!("label {} out of range", rec[0]),
            ));
        }
        labels.push(rec[0] as usize);
        let px = &rec[1..];
        if grayscale {
            feats.extend((0..1024).map(|k| (px[k] as f64 + px[1024 + k] as f64 + px[2048 + k] as f64) / (3.0 * 255.0)));
        } else {
            feats.extend(px.iter().map(|&b| b as f64 / 255.0));
        }
    }
    Ok(bytes.len() / CIFAR_RECORD)
}

/// CIFAR-10 binary batches. Training batches get a random 80-20
/// train/validation split under `seed`; test batches form the test split.
pub fn load_cifar10_binary(train: &[&Path], test: &[&Path], grayscale: bool, seed: u64) -> Result<Dataset> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("no CIFAR-10 training batches given".into()));
    }
    let (mut feats, mut labels) = (Vec::new(), Vec::new());
    let mut n_train = 0;
    for p in train {
        n_train += cifar_records(p, grayscale, &mut feats, &mut labels)?;
    }
    let mut n_test = 0;
    for p in test {
        n_test += cifar_records(p, grayscale, &mut feats, &mut labels)?;
    }
    let n = n_train + n_test;
    let mut splits = Splits::random(n_train, 0.8, 0.2, seed);
    splits.test = (n_train..n).collect();
    let d = feats.len() / n;
    Dataset::new(
        "cifar10",
        seed,
        Tensor::new(vec![n, d], feats)?,
        Targets::Multiclass { labels, classes: 10 },
        splits,
    )
}

/// Parameters of one synthetic tag: `k` affine pieces.
struct MaxAffine {
    w: Vec<f64>,
    b: Vec<f64>,
}

impl MaxAffine {
    fn eval(&self, x: &[f64]) -> f64 {
        let d = x.len();
        self.b
            .iter()
            .enumerate()
            .map(|(k, &b)| {
                b + self.w[k * d..(k + 1) * d]
                    .iter()
                    .zip(x)
                    .map(|(w, x)| w * x)
                    .sum::<f64>()
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Multilabel task whose tag `t` is 1 iff a random max of `k_pieces` affine
/// functions exceeds its median over the sample. Features are standard
/// normal; splits are 80/10/10.
pub fn gen_max_affine(n: usize, d: usize, k_pieces: usize, tags: usize, seed: u64) -> Result<Dataset> {
    if n < 2 || d == 0 || k_pieces == 0 || tags == 0 {
        return Err(Error::InvalidArgument(format!(
            "gen_max_affine needs n ≥ 2 and positive sizes, got n={n} d={d} k={k_pieces} tags={tags}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let features: Vec<f64> = (0..n * d).map(|_| normal(&mut rng)).collect();
    let scale = 1.0 / (d as f64).sqrt();
    let mut targets = vec![0.0; n * tags];
    for t in 0..tags {
        // A constant score column can only come from a degenerate draw; redraw it.
        for attempt in 0.. {
            let f = MaxAffine {
                w: (0..k_pieces * d).map(|_| normal(&mut rng) * scale).collect(),
                b: (0..k_pieces).map(|_| normal(&mut rng) * 0.5).collect(),
            };
            let scores: Vec<f64> = (0..n).map(|i| f.eval(&features[i * d..(i + 1) * d])).collect();
            let mut sorted = scores.clone();
            sorted.sort_by(f64::total_cmp);
            let median = (sorted[(n - 1) / 2] + sorted[n / 2]) / 2.0;
            let positives = scores.iter().filter(|&&s| s > median).count();
            if positives > 0 && positives < n {
                for (i, &s) in scores.iter().enumerate() {
                    targets[i * tags + t] = f64::from(u8::from(s > median));
                }
                break;
            }
            if attempt > 100 {
                return Err(Error::InvalidArgument(format!(
                    "tag {t} stays constant after 100 redraws"
                )));
            }
        }
    }
    Dataset::new(
        format!("max-affine-d{d}-k{k_pieces}"),
        seed,
        Tensor::new(vec![n, d], features)?,
        Targets::Multilabel(Tensor::new(vec![n, tags], targets)?),
        Splits::random(n, 0.8, 0.1, seed.wrapping_add(1)),
    )
}

const SPLIT_COL: &str = "split";
const LABEL_COL: &str = "label";

fn split_label(name: SplitName) -> &'static str {
    match name {
        SplitName::Train => "train",
        SplitName::Val => "val",
        SplitName::Test => "test",
    }
}

/// Reads a features CSV. Columns starting with `x` are features; targets are
/// either columns starting with `y` (multilabel 0/1) or a single `label`
/// column (class index). An optional `split` column holds train/val/test;
/// without it an 80/10/10 split is drawn with `seed`.
pub fn load_features_csv(path: &Path, seed: u64) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Schema(format!("{}: {other:?}", path.display())),
    })?;
    let header = rdr.headers()?.clone();
    let x_cols: Vec<usize> = (0..header.len()).filter(|&i| header[i].starts_with('x')).collect();
    let y_cols: Vec<usize> = (0..header.len()).filter(|&i| header[i].starts_with('y')).collect();
    let label_col = header.iter().position(|h| h == LABEL_COL);
    let split_col = header.iter().position(|h| h == SPLIT_COL);
    if x_cols.is_empty() {
        return Err(Error::Schema(format!("{}: no feature columns (x*)", path.display())));
    }
    let task = match (y_cols.is_empty(), label_col) {
        (false, None) => Task::Multilabel,
        (true, Some(_)) => Task::Multiclass,
        (true, None) => {
            return Err(Error::Schema(format!(
                "{}: missing target column (y* or `{LABEL_COL}`)",
                path.display()
            )))
        }
        (false, Some(_)) => {
            return Err(Error::Schema(format!(
                "{}: both y* and `{LABEL_COL}` targets",
                path.display()
            )))
        }
    };
    let (mut feats, mut ys, mut labels, mut split_tags) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = r + 2;
        let cell = |i: usize| -> Result<f64> {
            let raw = rec.get(i).unwrap_or("");
            let v: f64 = raw.trim().parse().map_err(|_| {
                Error::Schema(format!(
                    "{} line {line}: non-numeric cell {raw:?} in `{}`",
                    path.display(),
                    &header[i]
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("{} line {line}: {raw}", path.display())));
            }
            Ok(v)
        };
        for &i in &x_cols {
            feats.push(cell(i)?);
        }
        for &i in &y_cols {
            ys.push(cell(i)?);
        }
        if let Some(i) = label_col {
            let v = cell(i)?;
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::Schema(format!(
                    "{} line {line}: label {v} is not a class index",
                    path.display()
                )));
            }
            labels.push(v as usize);
        }
        if let Some(i) = split_col {
            let s = match rec.get(i).unwrap_or("").trim() {
                "train" => SplitName::Train,
                "val" => SplitName::Val,
                "test" => SplitName::Test,
                other => {
                    return Err(Error::Schema(format!(
                        "{} line {line}: unknown split {other:?}",
                        path.display()
                    )))
                }
            };
            split_tags.push(s);
        }
    }
    let n = feats.len() / x_cols.len();
    if n == 0 {
        return Err(Error::Schema(format!("{}: no data rows", path.display())));
    }
    let targets = match task {
        Task::Multilabel => Targets::Multilabel(Tensor::new(vec![n, y_cols.len()], ys)?),
        Task::Multiclass => {
            let classes = labels.iter().max().map_or(1, |&m| m + 1);
            Targets::Multiclass { labels, classes }
        }
    };
    let splits = if split_col.is_some() {
        let mut s = Splits::default();
        for (i, tag) in split_tags.into_iter().enumerate() {
            match tag {
                SplitName::Train => s.train.push(i),
                SplitName::Val => s.val.push(i),
                SplitName::Test => s.test.push(i),
            }
        }
        s
    } else {
        Splits::random(n, 0.8, 0.1, seed)
    };
    let name = path
        .file_stem()
        .map_or("features".into(), |s| s.to_string_lossy().into_owned());
    Dataset::new(name, seed, Tensor::new(vec![n, x_cols.len()], feats)?, targets, splits)
}

/// Writes the CSV read by [`load_features_csv`], split column included.
/// Values use the shortest representation that round-trips exactly.
pub fn write_features_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Schema(format!("{other:?}")),
    })?;
    let d = ds.dim();
    let mut header: Vec<String> = (0..d).map(|k| format!("x{k}")).collect();
    match &ds.targets {
        Targets::Multilabel(t) => header.extend((0..t.cols()).map(|k| format!("y{k}"))),
        Targets::Multiclass { .. } => header.push(LABEL_COL.into()),
    }
    header.push(SPLIT_COL.into());
    w.write_record(&header)?;
    let mut split_of = vec![SplitName::Train; ds.len()];
    for name in [SplitName::Val, SplitName::Test] {
        for &i in ds.splits.split(name) {
            split_of[i] = name;
        }
    }
    for i in 0..ds.len() {
        let mut row: Vec<String> = ds.features.row(i).iter().map(|v| v.to_string()).collect();
        match &ds.targets {
            Targets::Multilabel(t) => row.extend(t.row(i).iter().map(|v| v.to_string())),
            Targets::Multiclass { labels, .. } => row.push(labels[i].to_string()),
        }
        row.push(split_label(split_of[i]).into());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn idx_bytes(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
        let mut v = magic.to_be_bytes().to_vec();
        for d in dims {
            v.extend(d.to_be_bytes());
        }
        v.extend(payload);
        v
    }

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::File::create(&p).unwrap().write_all(bytes).unwrap();
        p
    }

    #[test]
    fn idx_fixture_round_trips_shape() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..4 * 784).map(|i| (i % 256) as u8).collect();
        let img = write(dir.path(), "img", &idx_bytes(0x803, &[4, 28, 28], &pixels));
        let lab = write(dir.path(), "lab", &idx_bytes(0x801, &[4], &[3, 1, 4, 1]));
        let ds = load_idx(&img, &lab, 0).unwrap();
        assert_eq!(ds.features.shape(), &[4, 784]);
        assert_eq!(ds.features.get(0, 255), 1.0);
        assert!(matches!(&ds.targets, Targets::Multiclass { labels, .. } if labels == &[3, 1, 4, 1]));
    }

    #[test]
    fn idx_errors() {
        let dir = tempfile::tempdir().unwrap();
        let lab = write(dir.path(), "lab", &idx_bytes(0x801, &[1], &[0]));
        let bad = write(dir.path(), "bad", &idx_bytes(0x804, &[1, 1, 1], &[0]));
        match load_idx(&bad, &lab, 0) {
            Err(Error::Parse { offset, detail, .. }) => {
                assert_eq!(offset, 0);
                assert!(detail.contains("magic"));
            }
            other => panic!("{other:?}"),
        }
        let empty = write(dir.path(), "empty", &[]);
        assert!(
            matches!(load_idx(&empty, &lab, 0), Err(Error::Parse { ref detail, .. }) if detail.contains("truncated"))
        );
        let short = write(dir.path(), "short", &idx_bytes(0x803, &[2, 2, 2], &[1, 2, 3]));
        assert!(
            matches!(load_idx(&short, &lab, 0), Err(Error::Parse { ref detail, .. }) if detail.contains("truncated"))
        );
    }

    fn cifar_fixture(records: usize) -> Vec<u8> {
        (0..records)
            .flat_map(|r| {
                let mut rec = vec![(r % 10) as u8];
                rec.extend((0..3072).map(|k| ((k + r) % 256) as u8));
                rec
            })
            .collect()
    }

    #[test]
    fn cifar_loading_and_split() {
        let dir = tempfile::tempdir().unwrap();
        let one = write(dir.path(), "one.bin", &cifar_fixture(1));
        let ds = load_cifar10_binary(&[one.as_path()], &[], false, 0).unwrap();
        assert_eq!(ds.features.shape(), &[1, 3072]);
        let gray = load_cifar10_binary(&[one.as_path()], &[], true, 0).unwrap();
        assert_eq!(gray.features.shape(), &[1, 1024]);

        let hundred = write(dir.path(), "h.bin", &cifar_fixture(100));
        let test = write(dir.path(), "t.bin", &cifar_fixture(5));
        let a = load_cifar10_binary(&[hundred.as_path()], &[test.as_path()], false, 9).unwrap();
        assert_eq!(
            (a.splits.train.len(), a.splits.val.len(), a.splits.test.len()),
            (80, 20, 5)
        );
        let b = load_cifar10_binary(&[hundred.as_path()], &[test.as_path()], false, 9).unwrap();
        assert_eq!(a.splits, b.splits);

        let mut broken = cifar_fixture(2);
        broken.pop();
        let broken = write(dir.path(), "broken.bin", &broken);
        assert!(matches!(
            load_cifar10_binary(&[broken.as_path()], &[], false, 0),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn max_affine_tags_are_balanced() {
        let ds = gen_max_affine(1000, 8, 3, 5, 4).unwrap();
        let Targets::Multilabel(t) = &ds.targets else { panic!() };
        for tag in 0..5 {
            let pos: f64 = (0..1000).map(|i| t.get(i, tag)).sum();
            assert!((pos / 1000.0 - 0.5).abs() <= 0.02, "tag {tag}: {pos}");
        }
        assert_eq!(ds, gen_max_affine(1000, 8, 3, 5, 4).unwrap());
        assert_eq!(
            (ds.splits.train.len(), ds.splits.val.len(), ds.splits.test.len()),
            (800, 100, 100)
        );
    }

    #[test]
    fn single_piece_tags_are_linearly_separable() {
        // With k = 1 the tag is a thresholded affine function; its own
        // score separates the classes perfectly.
        let (n, d) = (300, 4);
        let ds = gen_max_affine(n, d, 1, 1, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let _features: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let w: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<f64>>();
        let score = |i: usize| ds.features.row(i).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let Targets::Multilabel(t) = &ds.targets else { panic!() };
        let max_neg = (0..n)
            .filter(|&i| t.get(i, 0) == 0.0)
            .map(score)
            .fold(f64::NEG_INFINITY, f64::max);
        let min_pos = (0..n)
            .filter(|&i| t.get(i, 0) == 1.0)
            .map(score)
            .fold(f64::INFINITY, f64::min);
        assert!(max_neg < min_pos);
    }

    #[test]
    fn csv_round_trip_and_schema_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "f.csv", b"x0,x1,y0,y1\n1,2,0,1\n3,4,1,1\n5,6.5,0,0\n");
        let ds = load_features_csv(&p, 0).unwrap();
        assert_eq!(ds.features.shape(), &[3, 2]);
        assert_eq!(ds.task(), Task::Multilabel);

        let out = dir.path().join("out.csv");
        let synth = gen_max_affine(20, 3, 2, 2, 1).unwrap();
        write_features_csv(&synth, &out).unwrap();
        let back = load_features_csv(&out, synth.seed).unwrap();
        assert_eq!(back.features, synth.features);
        assert_eq!(back.targets, synth.targets);
        assert_eq!(back.splits.val.len() + back.splits.test.len(), 4);

        let no_target = write(dir.path(), "n.csv", b"x0,x1\n1,2\n");
        assert!(matches!(load_features_csv(&no_target, 0), Err(Error::Schema(_))));
        let text = write(dir.path(), "t.csv", b"x0,label\nabc,1\n");
        assert!(matches!(load_features_csv(&text, 0), Err(Error::Schema(_))));
        let ragged = write(dir.path(), "r.csv", b"x0,label\n1,1\n2\n");
        assert!(load_features_csv(&ragged, 0).is_err());
    }

    #[test]
    fn batches_are_transposed() {
        let ds = gen_max_affine(10, 3, 2, 2, 0).unwrap();
        let x = ds.batch_inputs(&[4, 7]);
        assert_eq!(x.shape(), &[3, 2]);
        assert_eq!(x.get(2, 1), ds.features.get(7, 2));
        let BatchTargets::Binary(t) = ds.batch_targets(&[4, 7]) else {
            panic!()
        };
        let Targets::Multilabel(full) = &ds.targets else {
            panic!()
        };
        assert_eq!(t[2 + 1], full.get(7, 1));
    }
}
