//! Max-plus and min-plus semiring arithmetic.
//!
//! The semiring bottom element (−∞ in max-plus, +∞ in min-plus) is never
//! stored as an IEEE infinity. A [`TropicalMatrix`] carries an activity mask
//! instead: an inactive entry takes part in no extremum, and the float stored
//! at that position is never read.
//!
//! Maxima and minima break ties toward the lowest flat index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A scalar of the extended reals. `is_bottom` marks the semiring zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtScalar {
    pub value: f64,
    pub is_bottom: bool,
}

impl ExtScalar {
    pub const BOTTOM: ExtScalar = ExtScalar {
        value: 0.0,
        is_bottom: true,
    };

    pub fn finite(value: f64) -> Self {
        Self {
            value,
            is_bottom: false,
        }
    }

    pub fn value(self) -> Option<f64> {
        (!self.is_bottom).then_some(self.value)
    }

    /// Semiring multiplication (ordinary addition); bottom absorbs.
    pub fn plus(self, other: ExtScalar) -> ExtScalar {
        if self.is_bottom || other.is_bottom {
            ExtScalar::BOTTOM
        } else {
            ExtScalar::finite(self.value + other.value)
        }
    }

    /// Max-plus join; bottom is the identity.
    pub fn join(self, other: ExtScalar) -> ExtScalar {
        match (self.is_bottom, other.is_bottom) {
            (true, _) => other,
            (_, true) => self,
            _ => ExtScalar::finite(self.value.max(other.value)),
        }
    }

    /// Min-plus meet, reading `is_bottom` as +∞.
    pub fn meet(self, other: ExtScalar) -> ExtScalar {
        match (self.is_bottom, other.is_bottom) {
            (true, _) => other,
            (_, true) => self,
            _ => ExtScalar::finite(self.value.min(other.value)),
        }
    }
}

/// Weight matrix over the tropical semiring: finite values plus an activity mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TropicalMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    active: Vec<bool>,
}

impl TropicalMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>, active: Vec<bool>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape("tropical matrix", format!("{rows}x{cols}")));
        }
        if values.len() != rows * cols || active.len() != rows * cols {
            return Err(Error::shape(
                "tropical matrix",
                format!(
                    "{rows}x{cols} needs {} values and mask bits, got {} and {}",
                    rows * cols,
                    values.len(),
                    active.len()
                ),
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tropical matrix entry {pos}")));
        }
        Ok(Self {
            rows,
            cols,
            values,
            active,
        })
    }

    pub fn all_active(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        let active = vec![true; values.len()];
        Self::new(rows, cols, values, active)
    }

    /// Every entry inactive (the all-bottom matrix).
    pub fn inactive(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
            active: vec![false; rows * cols],
        }
    }

    /// Max-plus identity: 0 on the diagonal, inactive elsewhere.
    pub fn identity(n: usize) -> Self {
        let mut m = Self::inactive(n, n);
        for i in 0..n {
            m.active[i * n + i] = true;
        }
        m
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        Self {
            rows: t.rows(),
            cols: t.cols(),
            values: t.data().to_vec(),
            active: vec![true; t.len()],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }

    pub fn get(&self, row: usize, col: usize) -> ExtScalar {
        let idx = row * self.cols + col;
        if self.active[idx] {
            ExtScalar::finite(self.values[idx])
        } else {
            ExtScalar::BOTTOM
        }
    }

    pub fn is_active(&self, row: usize, col: usize) -> bool {
        self.active[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        assert!(value.is_finite(), "tropical entries must be finite");
        let idx = row * self.cols + col;
        self.values[idx] = value;
        self.active[idx] = true;
    }

    pub fn deactivate(&mut self, row: usize, col: usize) {
        self.active[row * self.cols + col] = false;
    }

    /// Overwrites the stored value without touching the mask.
    pub fn set_raw(&mut self, idx: usize, value: f64) {
        assert!(value.is_finite(), "tropical entries must be finite");
        self.values[idx] = value;
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn row_active_count(&self, row: usize) -> usize {
        self.active[row * self.cols..(row + 1) * self.cols]
            .iter()
            .filter(|&&a| a)
            .count()
    }

    /// Entrywise negation of active values; mask unchanged.
    pub fn negated(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| -v).collect(),
            ..self.clone()
        }
    }

    pub fn support(&self) -> RowSupport {
        RowSupport::from_mask(self.rows, self.cols, &self.active)
    }
}

/// Compressed list of active column indices per row.
#[derive(Clone, Debug, PartialEq)]
pub struct RowSupport {
    offsets: Vec<usize>,
    indices: Vec<u32>,
}

impl RowSupport {
    pub fn from_mask(rows: usize, cols: usize, active: &[bool]) -> Self {
        debug_assert_eq!(active.len(), rows * cols);
        let mut offsets = Vec::with_capacity(rows + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for i in 0..rows {
            for (j, &a) in active[i * cols..(i + 1) * cols].iter().enumerate() {
                if a {
                    indices.push(j as u32);
                }
            }
            offsets.push(indices.len());
        }
        Self { offsets, indices }
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }
}

/// Winner sentinel for "no candidate" in packed argmax buffers.
pub(crate) const NO_WINNER: u32 = u32::MAX;

/// For every output entry, the inner index `k` that attained the extremum.
#[derive(Clone, Debug, PartialEq)]
pub struct ArgmaxRecord {
    rows: usize,
    cols: usize,
    winners: Vec<u32>,
}

impl ArgmaxRecord {
    pub(crate) fn from_packed(rows: usize, cols: usize, winners: Vec<u32>) -> Self {
        Self { rows, cols, winners }
    }

    /// Winning inner index for output `(row, col)`: the weight sits at
    /// `(row, k)` and the input at `(k, col)`. `None` for bottom outputs.
    pub fn get(&self, row: usize, col: usize) -> Option<usize> {
        let w = self.winners[row * self.cols + col];
        (w != NO_WINNER).then_some(w as usize)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

/// Real matrix whose entries may be the semiring's absorbing bound.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtMatrix {
    values: Tensor,
    bound: Vec<bool>,
}

impl ExtMatrix {
    pub fn get(&self, row: usize, col: usize) -> ExtScalar {
        let idx = row * self.values.cols() + col;
        if self.bound[idx] {
            ExtScalar::BOTTOM
        } else {
            ExtScalar::finite(self.values.data()[idx])
        }
    }

    /// Finite values; bound entries hold 0.0 and must be checked via [`ExtMatrix::is_bound`].
    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn is_bound(&self, row: usize, col: usize) -> bool {
        self.bound[row * self.values.cols() + col]
    }

    pub fn any_bound(&self) -> bool {
        self.bound.iter().any(|&b| b)
    }

    /// All entries finite: the plain real matrix.
    pub fn into_finite(self) -> Option<Tensor> {
        (!self.any_bound()).then_some(self.values)
    }

    /// Bound entries become inactive weights.
    pub fn into_tropical(self) -> TropicalMatrix {
        let (rows, cols) = (self.values.rows(), self.values.cols());
        TropicalMatrix {
            rows,
            cols,
            active: self.bound.iter().map(|b| !b).collect(),
            values: self.values.into_data(),
        }
    }
}

/// Packed result of the max-plus kernel: winners index into `[W | bias]`, so
/// `k == cols` means the bias won.
pub(crate) struct KernelOut {
    pub values: Vec<f64>,
    pub winners: Vec<u32>,
}

/// `out[i][j] = max( max_{k active} W[i][k] + x[k][j], bias[i] )` with
/// lowest-index tie breaking, bias ordered after every weight.
pub(crate) fn max_plus_kernel(
    cols: usize,
    values: &[f64],
    support: &RowSupport,
    x: &Tensor,
    bias: Option<(&[f64], &[bool])>,
) -> KernelOut {
    let rows = support.rows();
    let b = x.cols();
    let xd = x.data();
    let mut out = vec![f64::NEG_INFINITY; rows * b];
    let mut winners = vec![NO_WINNER; rows * b];
    for i in 0..rows {
        let orow = &mut out[i * b..(i + 1) * b];
        let wrow = &mut winners[i * b..(i + 1) * b];
        for &k in support.row(i) {
            let w = values[i * cols + k as usize];
            let xrow = &xd[k as usize * b..(k as usize + 1) * b];
            for j in 0..b {
                let cand = w + xrow[j];
                if cand > orow[j] {
                    orow[j] = cand;
                    wrow[j] = k;
                }
            }
        }
        if let Some((bv, ba)) = bias {
            if ba[i] {
                for j in 0..b {
                    if bv[i] > orow[j] {
                        orow[j] = bv[i];
                        wrow[j] = cols as u32;
                    }
                }
            }
        }
        for j in 0..b {
            if wrow[j] == NO_WINNER {
                orow[j] = 0.0;
            }
        }
    }
    KernelOut { values: out, winners }
}

fn check_inner(op: &'static str, a: &TropicalMatrix, x: &Tensor) -> Result<()> {
    if x.shape().len() > 2 || a.cols != x.rows() {
        return Err(Error::shape(
            op,
            format!("{}x{} against {:?}", a.rows, a.cols, x.shape()),
        ));
    }
    Ok(())
}

/// Max-plus product `A ⊞ x`.
pub fn max_plus_matmul(a: &TropicalMatrix, x: &Tensor) -> Result<(ExtMatrix, ArgmaxRecord)> {
    check_inner("max_plus_matmul", a, x)?;
    let b = x.cols();
    let k = max_plus_kernel(a.cols, &a.values, &a.support(), x, None);
    let bound = k.winners.iter().map(|&w| w == NO_WINNER).collect();
    Ok((
        ExtMatrix {
            values: Tensor::from_parts_unchecked(vec![a.rows, b], k.values),
            bound,
        },
        ArgmaxRecord::from_packed(a.rows, b, k.winners),
    ))
}

/// Min-plus product `A ⊞′ x`; inactive entries read as +∞, and rows without
/// an active entry come back bound (+∞).
pub fn min_plus_matmul(a: &TropicalMatrix, x: &Tensor) -> Result<ExtMatrix> {
    check_inner("min_plus_matmul", a, x)?;
    let b = x.cols();
    let xd = x.data();
    let support = a.support();
    let mut out = vec![0.0; a.rows * b];
    let mut bound = vec![true; a.rows * b];
    for i in 0..a.rows {
        for j in 0..b {
            let mut best = f64::INFINITY;
            for &k in support.row(i) {
                let cand = a.values[i * a.cols + k as usize] + xd[k as usize * b + j];
                if cand < best {
                    best = cand;
                }
            }
            if best.is_finite() {
                out[i * b + j] = best;
                bound[i * b + j] = false;
            }
        }
    }
    Ok(ExtMatrix {
        values: Tensor::from_parts_unchecked(vec![a.rows, b], out),
        bound,
    })
}

fn as_column(x: &[f64]) -> Result<Tensor> {
    Tensor::new(vec![x.len(), 1], x.to_vec())
}

/// Vector dilation `δ_w(x) = max_i (x_i + w_i)` with `w` a 1×n tropical row.
pub fn dilation(w: &TropicalMatrix, x: &[f64]) -> Result<ExtScalar> {
    if w.rows != 1 {
        return Err(Error::shape("dilation", format!("weights must be 1x{}", x.len())));
    }
    let (out, _) = max_plus_matmul(w, &as_column(x)?)?;
    Ok(out.get(0, 0))
}

/// Vector erosion `ε_m(x) = min_i (x_i + m_i)`; bound result reads as +∞.
pub fn erosion(m: &TropicalMatrix, x: &[f64]) -> Result<ExtScalar> {
    if m.rows != 1 {
        return Err(Error::shape("erosion", format!("weights must be 1x{}", x.len())));
    }
    Ok(min_plus_matmul(m, &as_column(x)?)?.get(0, 0))
}

/// Biased dilation `w0 ∨ δ_w(x)`.
pub fn morphological_perceptron(w0: f64, w: &TropicalMatrix, x: &[f64]) -> Result<f64> {
    let d = dilation(w, x)?;
    Ok(ExtScalar::finite(w0).join(d).value)
}
