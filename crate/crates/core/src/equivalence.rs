//! Exact rewrites of ReLU and maxout layers as max-plus blocks.
//!
//! A biased ReLU layer `max(Ax + b, 0)` equals the unbiased product `y = Ax`
//! followed by `diag_mp(b) ⊞ y ∨ 0`. A maxout layer `max_p(A_p x + b_p)`
//! equals `y = [A_1; …; A_P] x` followed by `[diag_mp(b_1) … diag_mp(b_P)] ⊞ y`.

use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{matmul, Tensor};
use crate::tropical::{max_plus_matmul, TropicalMatrix};

/// Max-plus diagonal matrix: `v` on the diagonal, inactive elsewhere.
pub fn diag_mp(v: &[f64]) -> Result<TropicalMatrix> {
    let n = v.len();
    if n == 0 {
        return Err(Error::InvalidArgument("diag_mp of an empty vector".into()));
    }
    let mut m = TropicalMatrix::inactive(n, n);
    for (i, &x) in v.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::NonFinite(format!("diag_mp entry {i}")));
        }
        m.set(i, i, x);
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReluAsMaxPlus {
    pub linear: Tensor,
    pub weight: TropicalMatrix,
    pub bias: TropicalMatrix,
}

impl ReluAsMaxPlus {
    /// `W ⊞ (A x) ∨ w0`.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let y = matmul(&self.linear, x)?;
        let (out, _) = max_plus_matmul(&self.weight, &y)?;
        let mut vals = out.values().clone();
        let b = vals.cols();
        for i in 0..vals.rows() {
            let floor = self.bias.get(i, 0);
            for j in 0..b {
                let cur = out.get(i, j).join(floor);
                vals.data_mut()[i * b + j] = cur.value;
            }
        }
        Ok(vals)
    }
}

pub fn relu_to_maxplus(a: &Tensor, b: &Tensor) -> Result<ReluAsMaxPlus> {
    if a.shape().len() != 2 || b.len() != a.rows() {
        return Err(Error::shape(
            "relu_to_maxplus",
            format!("weight {:?} with bias of length {}", a.shape(), b.len()),
        ));
    }
    Ok(ReluAsMaxPlus {
        linear: a.clone(),
        weight: diag_mp(b.data())?,
        bias: TropicalMatrix::all_active(a.rows(), 1, vec![0.0; a.rows()])?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaxoutAsMaxPlus {
    pub linear: Tensor,
    pub weight: TropicalMatrix,
}

impl MaxoutAsMaxPlus {
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let y = matmul(&self.linear, x)?;
        let (out, _) = max_plus_matmul(&self.weight, &y)?;
        out.into_finite().ok_or_else(|| Error::UndefinedOutput {
            layer: "maxout rewrite".into(),
            row: 0,
        })
    }
}

/// Stacks the `P` pieces and places `diag_mp(b_p)` blocks side by side.
pub fn maxout_to_maxplus(pieces: &[Tensor], biases: &[Tensor]) -> Result<MaxoutAsMaxPlus> {
    let p = pieces.len();
    if p == 0 || biases.len() != p {
        return Err(Error::shape(
            "maxout_to_maxplus",
            format!("{p} pieces with {} biases", biases.len()),
        ));
    }
    let (n, k) = (pieces[0].rows(), pieces[0].cols());
    for (a, b) in pieces.iter().zip(biases) {
        if a.shape() != [n, k] || b.len() != n {
            return Err(Error::shape(
                "maxout_to_maxplus",
                format!("piece {:?} / bias {} against {n}x{k}", a.shape(), b.len()),
            ));
        }
    }
    let stacked: Vec<f64> = pieces.iter().flat_map(|a| a.data().iter().copied()).collect();
    let mut w = TropicalMatrix::inactive(n, p * n);
    for (q, b) in biases.iter().enumerate() {
        for i in 0..n {
            w.set(i, q * n + i, b.data()[i]);
        }
    }
    Ok(MaxoutAsMaxPlus {
        linear: Tensor::new(vec![p * n, k], stacked)?,
        weight: w,
    })
}

/// Direct evaluation of `max(Ax + b, 0)`.
pub fn relu_layer(a: &Tensor, b: &Tensor, x: &Tensor) -> Result<Tensor> {
    let mut y = matmul(a, x)?;
    let cols = y.cols();
    for i in 0..y.rows() {
        for j in 0..cols {
            let v = &mut y.data_mut()[i * cols + j];
            *v = (*v + b.data()[i]).max(0.0);
        }
    }
    Ok(y)
}

/// Direct evaluation of `max_p(A_p x + b_p)`.
pub fn maxout_layer(pieces: &[Tensor], biases: &[Tensor], x: &Tensor) -> Result<Tensor> {
    let mut acc: Option<Tensor> = None;
    for (a, b) in pieces.iter().zip(biases) {
        let mut y = matmul(a, x)?;
        let cols = y.cols();
        for i in 0..y.rows() {
            for j in 0..cols {
                y.data_mut()[i * cols + j] += b.data()[i];
            }
        }
        acc = Some(match acc {
            None => y,
            Some(mut cur) => {
                for (c, v) in cur.data_mut().iter_mut().zip(y.data()) {
                    *c = c.max(*v);
                }
                cur
            }
        });
    }
    acc.ok_or_else(|| Error::InvalidArgument("maxout with no pieces".into()))
}

/// Randomised equivalence suite over layers with dims up to `max_dims`.
#[derive(Clone, Debug, PartialEq)]
pub struct EquivReport {
    pub trials: usize,
    pub relu_failures: usize,
    pub maxout_failures: usize,
    pub relu_max_dev: f64,
    pub maxout_max_dev: f64,
}

impl EquivReport {
    pub fn passed(&self) -> bool {
        self.relu_failures == 0 && self.maxout_failures == 0
    }
}

/// Bounds on the random layer shapes: `(max rows, max inputs, max pooling)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EquivDims {
    pub max_out: usize,
    pub max_in: usize,
    pub max_pool: usize,
}

impl Default for EquivDims {
    fn default() -> Self {
        Self {
            max_out: 16,
            max_in: 16,
            max_pool: 4,
        }
    }
}

pub const EQUIV_TOLERANCE: f64 = 1e-12;

/// Runs `trials` random ReLU and maxout layers against their rewrites on
/// inputs in [−10, 10]. `fault` perturbs the converted weights (negative control).
pub fn run_equivalence_suite(trials: usize, dims: EquivDims, seed: u64, fault: bool) -> Result<EquivReport> {
    if dims.max_out == 0 || dims.max_in == 0 || dims.max_pool == 0 {
        return Err(Error::InvalidArgument("equivalence dims must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vals = Uniform::new_inclusive(-10.0, 10.0).expect("range");
    let rand_t = |rng: &mut ChaCha8Rng, r: usize, c: usize| {
        Tensor::from_parts_unchecked(vec![r, c], (0..r * c).map(|_| vals.sample(rng)).collect())
    };
    let mut report = EquivReport {
        trials,
        relu_failures: 0,
        maxout_failures: 0,
        relu_max_dev: 0.0,
        maxout_max_dev: 0.0,
    };
    for _ in 0..trials {
        let m = rng.random_range(1..=dims.max_out);
        let k = rng.random_range(1..=dims.max_in);
        let p = rng.random_range(1..=dims.max_pool);
        let batch = rng.random_range(1..=8);
        let x = rand_t(&mut rng, k, batch);

        let a = rand_t(&mut rng, m, k);
        let b = rand_t(&mut rng, m, 1);
        let b = Tensor::from_parts_unchecked(vec![m], b.into_data());
        let mut conv = relu_to_maxplus(&a, &b)?;
        if fault {
            let v = conv.weight.get(0, 0).value;
            conv.weight.set(0, 0, v + 1e-6);
        }
        let dev = conv.apply(&x)?.max_abs_diff(&relu_layer(&a, &b, &x)?);
        report.relu_max_dev = report.relu_max_dev.max(dev);
        if dev > EQUIV_TOLERANCE {
            report.relu_failures += 1;
        }

        let pieces: Vec<Tensor> = (0..p).map(|_| rand_t(&mut rng, m, k)).collect();
        let biases: Vec<Tensor> = (0..p)
            .map(|_| Tensor::from_parts_unchecked(vec![m], rand_t(&mut rng, m, 1).into_data()))
            .collect();
        let mut conv = maxout_to_maxplus(&pieces, &biases)?;
        if fault {
            let v = conv.weight.get(0, 0).value;
            conv.weight.set(0, 0, v + 1e-6);
        }
        let dev = conv.apply(&x)?.max_abs_diff(&maxout_layer(&pieces, &biases, &x)?);
        report.maxout_max_dev = report.maxout_max_dev.max(dev);
        if dev > EQUIV_TOLERANCE {
            report.maxout_failures += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diag_mp_examples() {
        assert_eq!(diag_mp(&[0.0, 0.0, 0.0]).unwrap(), TropicalMatrix::identity(3));
        let one = diag_mp(&[2.5]).unwrap();
        assert_eq!(one.get(0, 0).value(), Some(2.5));
        let d = diag_mp(&[1.0, -2.0]).unwrap();
        let x = Tensor::from_rows(&[&[3.0, 0.5], &[4.0, -1.0]]);
        let (out, _) = max_plus_matmul(&d, &x).unwrap();
        assert_eq!(out.into_finite().unwrap().data(), &[4.0, 1.5, 2.0, -3.0]);
        assert!(diag_mp(&[]).is_err());
    }

    #[test]
    fn zero_bias_relu_rewrite_uses_identity() {
        let a = Tensor::from_rows(&[&[1.0, -1.0], &[0.5, 2.0]]);
        let conv = relu_to_maxplus(&a, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(conv.weight, TropicalMatrix::identity(2));
        let x = Tensor::from_rows(&[&[1.0, -3.0], &[2.0, 1.0]]);
        assert_eq!(
            conv.apply(&x).unwrap(),
            relu_layer(&a, &Tensor::zeros(&[2]), &x).unwrap()
        );
    }

    #[test]
    fn negative_preactivations_floor_at_zero() {
        let a = Tensor::from_rows(&[&[1.0], &[2.0]]);
        let b = Tensor::vector(vec![-5.0, -5.0]).unwrap();
        let conv = relu_to_maxplus(&a, &b).unwrap();
        let out = conv.apply(&Tensor::from_rows(&[&[1.0]])).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0]);
    }

    #[test]
    fn random_relu_layer_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = Uniform::new_inclusive(-10.0, 10.0).unwrap();
        let mut draw = |r: usize, c: usize| {
            Tensor::from_parts_unchecked(vec![r, c], (0..r * c).map(|_| u.sample(&mut rng)).collect())
        };
        let a = draw(5, 4);
        let b = Tensor::from_parts_unchecked(vec![5], draw(5, 1).into_data());
        let conv = relu_to_maxplus(&a, &b).unwrap();
        for _ in 0..100 {
            let x = draw(4, 1);
            let dev = conv.apply(&x).unwrap().max_abs_diff(&relu_layer(&a, &b, &x).unwrap());
            assert!(dev <= 1e-12);
        }
    }

    #[test]
    fn maxout_rewrite_shapes_and_identity_pool() {
        let a = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        let conv = maxout_to_maxplus(&[a.clone()], &[Tensor::zeros(&[3])]).unwrap();
        let x = Tensor::from_rows(&[&[1.0], &[-1.0]]);
        assert_eq!(conv.apply(&x).unwrap(), matmul(&a, &x).unwrap());

        let pieces = [a.clone(), a.map(|v| -v)];
        let biases = [Tensor::zeros(&[3]), Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap()];
        let conv = maxout_to_maxplus(&pieces, &biases).unwrap();
        assert_eq!(conv.linear.shape(), &[6, 2]);
        assert_eq!(conv.weight.active_count(), 6);
        assert!(maxout_to_maxplus(&pieces, &biases[..1]).is_err());
        assert!(maxout_to_maxplus(&[a.clone(), Tensor::zeros(&[2, 2])], &biases).is_err());
    }

    #[test]
    fn suite_passes_and_negative_control_fails() {
        let ok = run_equivalence_suite(200, EquivDims::default(), 3, false).unwrap();
        assert!(ok.passed(), "{ok:?}");
        let tiny = run_equivalence_suite(
            20,
            EquivDims {
                max_out: 1,
                max_in: 1,
                max_pool: 1,
            },
            3,
            false,
        )
        .unwrap();
        assert!(tiny.passed());
        let bad = run_equivalence_suite(50, EquivDims::default(), 3, true).unwrap();
        assert!(!bad.passed());
    }
}
