//! Dense row-major tensors and probability vectors.
//!
//! Everything is `f64`; desk-scale problems are small and gradient checking
//! wants the precision. Shapes are validated at construction and non-finite
//! values are rejected.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense tensor with row-major semantics. In practice either a matrix
/// (`[rows, cols]`, one sample per row) or a vector (`[len]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    /// Build a tensor, checking that the shape matches the value count and
    /// every value is finite.
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::Dim(format!(
                "shape {:?} implies {} values, got {}",
                shape,
                expected,
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Validity("non-finite value in tensor".into()));
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

    /// Matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dim("rows have unequal lengths".into()));
        }
        let values: Vec<f64> = rows.iter().flatten().copied().collect();
        Tensor::new(vec![rows.len(), cols], values)
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

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Row count for matrices, length 1 treated as a single row for vectors.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    /// Column count for matrices, full length for vectors.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            _ => self.values.len(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.values[i * c..(i + 1) * c]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows()).map(move |i| self.row(i))
    }

    /// Matrix with the given rows of `self`, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Tensor {
        let c = self.cols();
        let mut values = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Tensor {
            shape: vec![indices.len(), c],
            values,
        }
    }

    /// Elementwise addition of a same-shaped tensor.
    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += *b;
        }
    }

    /// Elementwise `self += c * other`.
    pub fn add_scaled(&mut self, other: &Tensor, c: f64) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * *b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
    }
}

/// Squared Euclidean distance between two equal-length slices.
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Euclidean distance between two equal-length slices.
pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

/// A point on the probability simplex: nonnegative entries summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector(Vec<f64>);

/// Tolerance on the simplex-sum invariant.
pub const PROB_SUM_TOL: f64 = 1e-9;

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Domain("empty probability vector".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(Error::Validity(
                "probability entries must be finite and in [0, 1]".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::Validity(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Self(probs))
    }

    /// One-hot vector of length `k` with a single 1 at `index`.
    pub fn one_hot(index: usize, k: usize) -> Result<Self> {
        if index >= k {
            return Err(Error::Domain(format!("one-hot index {index} out of {k}")));
        }
        let mut v = vec![0.0; k];
        v[index] = 1.0;
        Ok(Self(v))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest entry; ties broken by the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// Largest entry.
    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Check that every row of a matrix is a valid probability vector.
pub fn validate_prob_rows(t: &Tensor, what: &str) -> Result<()> {
    for (i, row) in t.iter_rows().enumerate() {
        if row
            .iter()
            .any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0 + PROB_SUM_TOL)
        {
            return Err(Error::Validity(format!(
                "{what}: row {i} has invalid entries"
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::Validity(format!(
                "{what}: row {i} sums to {sum}, expected 1"
            )));
        }
    }
    Ok(())
}
