use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major `f64` tensor of rank 0, 1 or 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::Shape {
                expected,
                found: values.len(),
            });
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Self {
            shape: vec![values.len()],
            values,
        }
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], values)
    }

    pub fn identity(n: usize) -> Self {
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            values[i * n + i] = 1.0;
        }
        Self {
            shape: vec![n, n],
            values,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Rows and columns, treating a vector as a single column.
    pub fn dims(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (*n, 1),
            [r, c] => (*r, *c),
            _ => (self.values.len(), 1),
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let (_, cols) = self.dims();
        &self.values[r * cols..(r + 1) * cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let (_, cols) = self.dims();
        &mut self.values[r * cols..(r + 1) * cols]
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out = W x` for a row-major `rows x cols` matrix.
pub fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        *o = dot(&w[r * cols..(r + 1) * cols], x);
    }
}

/// `out = Wᵀ y` for a row-major `rows x cols` matrix.
pub fn matvec_t(w: &[f64], rows: usize, cols: usize, y: &[f64], out: &mut [f64]) {
    debug_assert_eq!(y.len(), rows);
    out[..cols].iter_mut().for_each(|o| *o = 0.0);
    for r in 0..rows {
        let yr = y[r];
        if yr == 0.0 {
            continue;
        }
        for (o, wv) in out.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
            *o += yr * wv;
        }
    }
}

/// Max-shifted softmax written into `out`.
pub fn softmax_into(x: &[f64], out: &mut [f64]) -> Result<()> {
    if x.is_empty() {
        return Err(Error::Empty("softmax input"));
    }
    let mut top = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[top] || x[top].is_nan() {
            top = i;
        }
    }
    let max = x[top];
    // Mass outside the largest entry. When it is tiny, 1 - rest / total
    // keeps that entry below 1 whenever a double can; no other entry is
    // then close enough to tie with it.
    let mut rest = 0.0;
    for (i, (o, &v)) in out.iter_mut().zip(x).enumerate() {
        *o = libm::exp(v - max);
        if i != top {
            rest += *o;
        }
    }
    let total = 1.0 + rest;
    out.iter_mut().for_each(|o| *o /= total);
    if rest < 1e-8 {
        out[top] = 1.0 - rest / total;
    }
    Ok(())
}

pub fn softmax(x: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; x.len()];
    softmax_into(x, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_is_uniform() {
        for c in [-30.0, 0.0, 7.5] {
            let p = softmax(&[c; 4]).unwrap();
            for v in p {
                assert!((v - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn log_two_ratio() {
        let p = softmax(&[0.0, core::f64::consts::LN_2]).unwrap();
        assert!((p[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((p[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_element() {
        assert_eq!(softmax(&[-4.2]).unwrap(), vec![1.0]);
    }

    #[test]
    fn empty_rejected() {
        assert!(matches!(softmax(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn shape_mismatch() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn matvec_and_transpose() {
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut out = [0.0; 2];
        matvec(&w, 2, 3, &[1.0, 0.0, -1.0], &mut out);
        assert_eq!(out, [-2.0, -2.0]);
        let mut out_t = [0.0; 3];
        matvec_t(&w, 2, 3, &[1.0, 1.0], &mut out_t);
        assert_eq!(out_t, [5.0, 7.0, 9.0]);
    }
}
