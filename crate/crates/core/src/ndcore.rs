//! Dense row-major tensors and the handful of reductions the engine needs.
//!
//! Every routine sums in a fixed left-to-right order so results are
//! bit-reproducible for fixed inputs regardless of thread placement.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Dense row-major array with shape metadata.
///
/// Dimensions may be zero (an empty split); `shape.iter().product()` always
/// equals `data.len()`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::invalid("tensor shape", "shape must have at least one dimension"));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape {
                op: "tensor construction",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); len],
        }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    /// One-dimensional tensor.
    pub fn vector(data: Vec<T>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut out = Self::zeros(&[n, n]);
        for i in 0..n {
            out.data[i * n + i] = T::one();
        }
        out
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading dimension; a vector counts as a single row.
    pub fn rows(&self) -> usize {
        if self.shape.len() == 1 {
            1
        } else {
            self.shape[0]
        }
    }

    /// Product of the trailing dimensions.
    pub fn cols(&self) -> usize {
        if self.shape.len() == 1 {
            self.shape[0]
        } else {
            self.shape[1..].iter().product()
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape == other.shape
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if !self.same_shape(other) {
            return Err(Error::Shape {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// `self += alpha * other`, elementwise in index order.
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Shape {
                op: "axpy",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: T) {
        for v in &mut self.data {
            *v *= alpha;
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::Shape {
                op: "reshape",
                left: self.shape,
                right: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn transpose(&self) -> Result<Self> {
        if self.shape.len() != 2 {
            return Err(Error::invalid(
                "transpose",
                format!("expected a matrix, got shape {:?}", self.shape),
            ));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..c {
            for i in 0..r {
                data.push(self.data[i * c + j]);
            }
        }
        Ok(Tensor {
            shape: vec![c, r],
            data,
        })
    }
}

/// Matrix product of `a` (m×k) and `b` (k×n).
///
/// Each output element accumulates its k products in ascending order.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::Shape {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a.data[i * k + p];
            let b_row = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * bv;
            }
        }
    }
    Ok(Tensor {
        shape: vec![m, n],
        data: out,
    })
}

/// `log Σ exp(v_i)`, shifted by the maximum.
pub fn log_sum_exp<T: Real>(v: &[T]) -> Result<T> {
    let (max, sum) = shifted_exp_sum(v)?;
    Ok(max + sum.ln())
}

/// `log (1/n) Σ exp(v_i)`.
///
/// Evaluated as `max + (ln Σ exp(v_i - max) - ln n)` so a constant sequence
/// returns its value exactly.
pub fn log_mean_exp<T: Real>(v: &[T]) -> Result<T> {
    let (max, sum) = shifted_exp_sum(v)?;
    let n = T::from_usize(v.len()).expect("length representable");
    Ok(max + (sum.ln() - n.ln()))
}

fn shifted_exp_sum<T: Real>(v: &[T]) -> Result<(T, T)> {
    if v.is_empty() {
        return Err(Error::invalid("log_sum_exp input", "empty sequence"));
    }
    if v.iter().any(|x| x.is_nan()) {
        return Err(Error::NonFinite("log_sum_exp input"));
    }
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return Err(Error::DegenerateLikelihood);
    }
    if max == T::infinity() {
        return Err(Error::NonFinite("log_sum_exp input"));
    }
    let mut sum = T::zero();
    for &x in v {
        sum += (x - max).exp();
    }
    Ok((max, sum))
}

/// Log-probabilities of a categorical distribution parameterized by `logits`.
pub fn log_softmax<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    if !logits.is_finite() {
        return Err(Error::NonFinite("logits"));
    }
    let lse = log_sum_exp(&logits.data)?;
    Ok(logits.map(|v| v - lse))
}

/// `log_softmax(logits)[y]`, keeping full relative accuracy when class `y`
/// dominates and its log-probability is close to zero.
pub fn log_softmax_at<T: Real>(logits: &Tensor<T>, y: usize) -> Result<T> {
    if !logits.is_finite() {
        return Err(Error::NonFinite("logits"));
    }
    let v = &logits.data;
    let ly = *v.get(y).ok_or(Error::ClassIndex {
        index: y,
        classes: v.len(),
    })?;
    if v.iter().all(|&l| l <= ly) {
        let mut rest = T::zero();
        for (j, &l) in v.iter().enumerate() {
            if j != y {
                rest += (l - ly).exp();
            }
        }
        return Ok(-rest.ln_1p());
    }
    Ok(ly - log_sum_exp(v)?)
}

/// Index of the largest element; ties go to the lowest index.
pub fn argmax<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}
