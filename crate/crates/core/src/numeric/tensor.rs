//! Dense row-major `f64` tensors and the shape-checked kernels shared by the
//! tape and by code that runs without gradients (teacher forward, metrics).

use serde::{Deserialize, Serialize};

use super::TensorError;

/// Dense row-major tensor. Rank 0 is not used; scalars have shape `[1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that `data.len()` equals the shape product.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if shape.is_empty() || numel != data.len() {
            return Err(TensorError::DataLength { shape, len: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; numel] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    /// Row-major matrix from nested rows; all rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, Vec::len);
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Rows and columns of a rank-2 tensor; a rank-1 tensor is one row.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            other => (other[0], other[1..].iter().product()),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let (_, c) = self.dims2();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(TensorError::DataLength { shape, len: self.data.len() });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self, TensorError> {
        self.expect_same_shape(other, op)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub(crate) fn expect_same_shape(&self, other: &Self, op: &'static str) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch { op, lhs: self.shape.clone(), rhs: other.shape.clone() });
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<(), TensorError> {
        self.expect_same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|x| x * c)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `[n, k] x [k, m] -> [n, m]`.
    pub fn matmul(&self, other: &Self) -> Result<Self, TensorError> {
        let mismatch =
            || TensorError::ShapeMismatch { op: "matmul", lhs: self.shape.clone(), rhs: other.shape.clone() };
        if self.shape.len() != 2 || other.shape.len() != 2 {
            return Err(mismatch());
        }
        let (n, k) = (self.shape[0], self.shape[1]);
        let (k2, m) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(mismatch());
        }
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let arow = &self.data[i * k..(i + 1) * k];
            let orow = &mut out[i * m..(i + 1) * m];
            for (p, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * m..(p + 1) * m];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(Self { shape: vec![n, m], data: out })
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = self.dims2();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self { shape: vec![c, r], data: out }
    }

    /// Mean over rows: `[n, d] -> [1, d]`.
    pub fn mean_rows(&self) -> Self {
        let (r, c) = self.dims2();
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, x) in out.iter_mut().zip(self.row(i)) {
                *o += x;
            }
        }
        let inv = 1.0 / r as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        Self { shape: vec![1, c], data: out }
    }

    /// Row-wise softmax of `x / tau`, computed with max subtraction.
    pub fn softmax_rows(&self, tau: f64) -> Result<Self, TensorError> {
        check_tau(tau)?;
        let (r, c) = self.dims2();
        let mut out = self.data.clone();
        for i in 0..r {
            softmax_in_place(&mut out[i * c..(i + 1) * c], tau);
        }
        Ok(Self { shape: self.shape.clone(), data: out })
    }

    /// Row-wise l2 normalization. Zero rows stay zero and are flagged.
    pub fn l2_normalize_rows(&self) -> (Self, Vec<bool>) {
        let (r, c) = self.dims2();
        let mut out = self.data.clone();
        let mut zero = vec![false; r];
        for i in 0..r {
            let row = &mut out[i * c..(i + 1) * c];
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n == 0.0 {
                zero[i] = true;
            } else {
                row.iter_mut().for_each(|x| *x /= n);
            }
        }
        (Self { shape: self.shape.clone(), data: out }, zero)
    }
}

pub(crate) fn check_tau(tau: f64) -> Result<(), TensorError> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(TensorError::InvalidTemperature(tau))
    }
}

fn softmax_in_place(row: &mut [f64], tau: f64) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = ((*x - max) / tau).exp();
        total += *x;
    }
    row.iter_mut().for_each(|x| *x /= total);
}

/// `log(sum(exp(row / tau)))` with max subtraction.
pub(crate) fn log_sum_exp(row: &[f64], tau: f64) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = row.iter().map(|x| ((x - max) / tau).exp()).sum();
    max / tau + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![], vec![]).is_err());
    }

    #[test]
    fn matmul_against_hand_product() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_shape_error_names_op_and_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let err = a.matmul(&Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_is_shift_invariant_and_rejects_bad_tau() {
        let a = Tensor::from_rows(&[vec![1000.0, 1001.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![0.0, 1.0]]).unwrap();
        let sa = a.softmax_rows(1.0).unwrap();
        let sb = b.softmax_rows(1.0).unwrap();
        for (x, y) in sa.data().iter().zip(sb.data()) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(a.softmax_rows(0.0).is_err());
        assert!(a.softmax_rows(-1.0).is_err());
    }

    #[test]
    fn zero_row_normalizes_to_zero_and_is_flagged() {
        let t = Tensor::from_rows(&[vec![3.0, 4.0], vec![0.0, 0.0]]).unwrap();
        let (n, flags) = t.l2_normalize_rows();
        assert_eq!(n.data(), &[0.6, 0.8, 0.0, 0.0]);
        assert_eq!(flags, vec![false, true]);
    }
}
