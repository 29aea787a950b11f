//! Dense row-major tensor of 64-bit floats.
//!
//! Deliberately minimal: just enough shape bookkeeping for the hand-written
//! forward/backward kernels in [`crate::nn`]. No views, no broadcasting.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {:?} wants {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn scalar_fill(shape: &[usize], value: f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// Reinterpret the same data under a new shape of equal volume.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::from_vec(shape, self.data.clone())
    }

    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[i * self.shape[1] + j]
    }

    #[inline]
    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[i * self.shape[1] + j] = v;
    }

    /// Row slice of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        debug_assert_eq!(self.shape.len(), 2);
        let w = self.shape[1];
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        debug_assert_eq!(self.shape.len(), 2);
        let w = self.shape[1];
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Euclidean norm over all elements.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// self += other, elementwise. Shapes must match.
    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// 2-D matrix product: self [n,a] * rhs [a,b] -> [n,b].
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.shape.len() != 2 || rhs.shape.len() != 2 || self.shape[1] != rhs.shape[0] {
            return Err(Error::ShapeMismatch(format!(
                "matmul {:?} x {:?}",
                self.shape, rhs.shape
            )));
        }
        let (n, a, b) = (self.shape[0], self.shape[1], rhs.shape[1]);
        let mut out = vec![0.0; n * b];
        for i in 0..n {
            let xrow = &self.data[i * a..(i + 1) * a];
            let orow = &mut out[i * b..(i + 1) * b];
            for (p, &x) in xrow.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let wrow = &rhs.data[p * b..(p + 1) * b];
                for (o, &w) in orow.iter_mut().zip(wrow) {
                    *o += x * w;
                }
            }
        }
        Tensor::from_vec(&[n, b], out)
    }

    /// selfᵀ * rhs for 2-D tensors: [a,n]ᵀ is not materialized.
    /// self [n,a], rhs [n,b] -> [a,b].
    pub fn matmul_tn(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.shape.len() != 2 || rhs.shape.len() != 2 || self.shape[0] != rhs.shape[0] {
            return Err(Error::ShapeMismatch(format!(
                "matmul_tn {:?} x {:?}",
                self.shape, rhs.shape
            )));
        }
        let (n, a, b) = (self.shape[0], self.shape[1], rhs.shape[1]);
        let mut out = vec![0.0; a * b];
        for i in 0..n {
            let xrow = &self.data[i * a..(i + 1) * a];
            let yrow = &rhs.data[i * b..(i + 1) * b];
            for (p, &x) in xrow.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let orow = &mut out[p * b..(p + 1) * b];
                for (o, &y) in orow.iter_mut().zip(yrow) {
                    *o += x * y;
                }
            }
        }
        Tensor::from_vec(&[a, b], out)
    }

    /// self * rhsᵀ for 2-D tensors: self [n,b], rhs [a,b] -> [n,a].
    pub fn matmul_nt(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.shape.len() != 2 || rhs.shape.len() != 2 || self.shape[1] != rhs.shape[1] {
            return Err(Error::ShapeMismatch(format!(
                "matmul_nt {:?} x {:?}",
                self.shape, rhs.shape
            )));
        }
        let (n, b, a) = (self.shape[0], self.shape[1], rhs.shape[0]);
        let mut out = vec![0.0; n * a];
        for i in 0..n {
            let xrow = &self.data[i * b..(i + 1) * b];
            let orow = &mut out[i * a..(i + 1) * a];
            for (p, o) in orow.iter_mut().enumerate() {
                let wrow = &rhs.data[p * b..(p + 1) * b];
                let mut acc = 0.0;
                for (&x, &w) in xrow.iter().zip(wrow) {
                    acc += x * w;
                }
                *o = acc;
            }
        }
        Tensor::from_vec(&[n, a], out)
    }
}
