//! Dense row-major tensors and the handful of kernels the layers need.
//!
//! There is no broadcasting: every operation checks shapes and fails with a
//! [`Error::Shape`] naming both operands.

use crate::error::{Error, Result};

/// Dense row-major `f64` array with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that `data` fills `shape` and is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Shape(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!(
                "non-finite value {} at flat index {pos}",
                data[pos]
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        assert!(len > 0, "zero-sized tensor {shape:?}");
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    /// Rank-1 tensor from a vector.
    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    /// `rows × cols` matrix from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Single-element tensor of shape `[1]`.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
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

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Reinterprets the data under a new shape of equal element count.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::Shape(format!(
                "expected a matrix, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(Error::Shape(format!(
                "expected a rank-3 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }
}

/// `y = A x` for a matrix `A` and a vector `x`.
pub fn matvec(a: &Tensor, x: &Tensor) -> Result<Tensor> {
    let (rows, cols) = a.dims2()?;
    if x.shape() != [cols] {
        return Err(Error::shapes("matvec", a.shape(), x.shape()));
    }
    let mut out = vec![0.0; rows];
    matvec_acc(a.data(), cols, x.data(), &mut out);
    Ok(Tensor {
        shape: vec![rows],
        data: out,
    })
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

pub fn tanh(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

/// Softmax of a rank-1 tensor, computed with max subtraction.
pub fn softmax(v: &Tensor) -> Result<Tensor> {
    if v.rank() != 1 {
        return Err(Error::Shape(format!(
            "softmax expects a vector, got shape {:?}",
            v.shape()
        )));
    }
    Ok(Tensor {
        shape: v.shape.clone(),
        data: softmax_slice(v.data())?,
    })
}

/// Overflow-free logistic function.
#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_slice(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Shape("softmax of an empty vector".into()));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    Ok(out)
}

/// Index of the largest element; ties go to the smallest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

// Slice kernels used on the hot paths. The matrix `a` is row-major with
// `cols` columns; callers guarantee the lengths.

/// `out += A x`
#[inline]
pub(crate) fn matvec_acc(a: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(a.len(), cols * out.len());
    debug_assert_eq!(x.len(), cols);
    for (row, o) in a.chunks_exact(cols).zip(out.iter_mut()) {
        *o += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
    }
}

/// `out += Aᵀ g`
#[inline]
pub(crate) fn matvec_t_acc(a: &[f64], cols: usize, g: &[f64], out: &mut [f64]) {
    debug_assert_eq!(a.len(), cols * g.len());
    debug_assert_eq!(out.len(), cols);
    for (row, &gi) in a.chunks_exact(cols).zip(g) {
        if gi == 0.0 {
            continue;
        }
        for (o, w) in out.iter_mut().zip(row) {
            *o += gi * w;
        }
    }
}

/// `acc += g xᵀ`
#[inline]
pub(crate) fn outer_acc(acc: &mut [f64], g: &[f64], x: &[f64]) {
    debug_assert_eq!(acc.len(), g.len() * x.len());
    let cols = x.len();
    for (row, &gi) in acc.chunks_exact_mut(cols).zip(g) {
        if gi == 0.0 {
            continue;
        }
        for (a, v) in row.iter_mut().zip(x) {
            *a += gi * v;
        }
    }
}
