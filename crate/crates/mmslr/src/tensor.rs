//! Dense row-major f64 tensors. Values only; differentiation lives in [`crate::tape`].

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Dense tensor, row-major, 64-bit floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::InvalidShape {
                op: "Tensor::new",
                shape,
                reason: "zero extent".into(),
            });
        }
        if data.len() != numel {
            return Err(Error::InvalidShape {
                op: "Tensor::new",
                shape,
                reason: format!("data length {} != numel {}", data.len(), numel),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel] }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape, data: vec![value; numel] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    /// n x d matrix from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidShape {
                op: "Tensor::from_rows",
                shape: vec![0],
                reason: "no rows".into(),
            });
        }
        let d = rows[0].len();
        let mut data = Vec::with_capacity(n * d);
        for r in rows {
            if r.len() != d {
                return Err(Error::InvalidShape {
                    op: "Tensor::from_rows",
                    shape: vec![n, d],
                    reason: "ragged rows".into(),
                });
            }
            data.extend_from_slice(r);
        }
        Tensor::new(vec![n, d], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn scalar_value(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    /// Number of rows when viewed as 2-D (1-D tensors are a single row).
    pub fn rows(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Number of columns when viewed as 2-D.
    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1]
        } else {
            self.shape[0]
        }
    }

    pub fn at2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set2(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "zip",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// In-place accumulate; shapes must match.
    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_in_place(&mut self, c: f64) {
        for v in &mut self.data {
            *v *= c;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// 2-D matrix product.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (other.rows(), other.cols());
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += a * brow[j];
                }
            }
        }
        Ok(Tensor { shape: vec![m, n], data: out })
    }

    /// 2-D transpose.
    pub fn transpose(&self) -> Tensor {
        let (m, n) = (self.rows(), self.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor { shape: vec![n, m], data: out }
    }

    /// Numerically stabilized softmax along `axis` of a 2-D tensor.
    pub fn softmax2(&self, axis: usize) -> Tensor {
        let logp = self.log_softmax2(axis);
        logp.map(f64::exp)
    }

    /// Numerically stabilized log-softmax along `axis` of a 2-D tensor.
    pub fn log_softmax2(&self, axis: usize) -> Tensor {
        let (m, n) = (self.rows(), self.cols());
        let mut out = self.clone();
        out.shape = if self.shape.len() >= 2 {
            self.shape.clone()
        } else {
            vec![1, n]
        };
        let (outer, inner, ostride, istride) = if axis == 1 {
            (m, n, n, 1)
        } else {
            (n, m, 1, n)
        };
        for o in 0..outer {
            let mut mx = f64::NEG_INFINITY;
            for i in 0..inner {
                mx = mx.max(self.data[o * ostride + i * istride]);
            }
            let mut lse = 0.0;
            for i in 0..inner {
                lse += (self.data[o * ostride + i * istride] - mx).exp();
            }
            let lse = mx + lse.ln();
            for i in 0..inner {
                out.data[o * ostride + i * istride] = self.data[o * ostride + i * istride] - lse;
            }
        }
        out
    }
}

/// log(exp(a) + exp(b)) without overflow; tolerates -inf.
pub fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let id = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(a.matmul(&id).unwrap(), a);
    }

    #[test]
    fn matmul_shape_error() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![2, 3]);
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn softmax_symmetry() {
        let x = Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
        let s = x.softmax2(1);
        assert_eq!(s.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::new(vec![2, 3], vec![1.0, -2.0, 0.5, 30.0, -30.0, 0.0]).unwrap();
        let s = x.softmax2(1);
        for r in 0..2 {
            let sum: f64 = s.row(r).iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn log_softmax_matches_log_of_softmax() {
        let x = Tensor::new(vec![1, 4], vec![30.0, -30.0, 1.0, 0.25]).unwrap();
        let a = x.log_softmax2(1);
        let b = x.softmax2(1).map(f64::ln);
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() <= 1e-10);
        }
    }

    #[test]
    fn log_sum_exp_handles_neg_inf() {
        assert_eq!(log_sum_exp(f64::NEG_INFINITY, -1.0), -1.0);
        let v = log_sum_exp(0.0, 0.0);
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
    }
}
