//! Truncated tensor algebra T⁽²⁾(ℝ^d).
//!
//! An element is `(1, a¹, a²)` with `a¹ ∈ ℝ^d` and `a² ∈ ℝ^d ⊗ ℝ^d` stored
//! densely in row-major order. The product is
//!
//! ```text
//! (1, a¹, a²) ⊗ (1, b¹, b²) = (1, a¹ + b¹, a² + b² + a¹ ⊗ b¹)
//! ```
//!
//! which is what makes lifts of paths multiplicative over adjacent intervals.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTensor2 {
    dim: usize,
    level1: Vec<f64>,
    level2: Vec<f64>,
}

impl GroupTensor2 {
    pub fn new(dim: usize, level1: Vec<f64>, level2: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("tensor dimension must be >= 1".into()));
        }
        check_dim(dim, level1.len())?;
        check_dim(dim * dim, level2.len())?;
        if level1.iter().chain(level2.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("tensor entries must be finite".into()));
        }
        Ok(Self { dim, level1, level2 })
    }

    /// Builds without validation; callers guarantee the shapes.
    pub(crate) fn from_parts(dim: usize, level1: Vec<f64>, level2: Vec<f64>) -> Self {
        debug_assert_eq!(level1.len(), dim);
        debug_assert_eq!(level2.len(), dim * dim);
        Self { dim, level1, level2 }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            level1: vec![0.0; dim],
            level2: vec![0.0; dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn level1(&self) -> &[f64] {
        &self.level1
    }

    pub fn level2(&self) -> &[f64] {
        &self.level2
    }

    pub fn level2_at(&self, i: usize, j: usize) -> f64 {
        self.level2[i * self.dim + j]
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>) {
        (self.level1, self.level2)
    }

    pub fn chen_mul(&self, other: &Self) -> Result<Self> {
        check_dim(self.dim, other.dim)?;
        Ok(self.mul_unchecked(other))
    }

    pub(crate) fn mul_unchecked(&self, other: &Self) -> Self {
        let d = self.dim;
        let level1 = self
            .level1
            .iter()
            .zip(&other.level1)
            .map(|(a, b)| a + b)
            .collect();
        let mut level2 = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                level2.push(
                    self.level2[i * d + j] + other.level2[i * d + j] + self.level1[i] * other.level1[j],
                );
            }
        }
        Self { dim: d, level1, level2 }
    }

    /// In-place right multiplication, `self ← self ⊗ other`.
    pub(crate) fn mul_assign_unchecked(&mut self, other: &Self) {
        let d = self.dim;
        for i in 0..d {
            let ai = self.level1[i];
            for j in 0..d {
                self.level2[i * d + j] += other.level2[i * d + j] + ai * other.level1[j];
            }
        }
        for (a, b) in self.level1.iter_mut().zip(&other.level1) {
            *a += b;
        }
    }

    /// Group inverse `(1, −a¹, −a² + a¹ ⊗ a¹)`.
    pub fn chen_inv(&self) -> Self {
        let d = self.dim;
        let level1 = self.level1.iter().map(|a| -a).collect();
        let mut level2 = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                level2.push(-self.level2[i * d + j] + self.level1[i] * self.level1[j]);
            }
        }
        Self { dim: d, level1, level2 }
    }

    /// Euclidean norm of level 1 and Frobenius norm of level 2.
    pub fn level_norms(&self) -> (f64, f64) {
        (norm(&self.level1), norm(&self.level2))
    }

    /// Scales level 1 by `lambda` and level 2 by `lambda²`.
    pub fn dilate(&self, lambda: f64) -> Self {
        Self {
            dim: self.dim,
            level1: self.level1.iter().map(|a| lambda * a).collect(),
            level2: self.level2.iter().map(|a| lambda * lambda * a).collect(),
        }
    }

    /// Level-wise difference `(a¹ − b¹, a² − b²)` as plain vectors.
    ///
    /// This is not a group operation; it is what p-variation distances compare.
    pub fn level_diff(&self, other: &Self) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim(self.dim, other.dim)?;
        Ok((
            self.level1.iter().zip(&other.level1).map(|(a, b)| a - b).collect(),
            self.level2.iter().zip(&other.level2).map(|(a, b)| a - b).collect(),
        ))
    }

    /// Antisymmetric part of level 2, `(a² − (a²)ᵀ) / 2`.
    pub fn area(&self) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = 0.5 * (self.level2[i * d + j] - self.level2[j * d + i]);
            }
        }
        out
    }

    /// Largest deviation of the symmetric part of level 2 from `½ a¹ ⊗ a¹`.
    pub fn geometric_defect(&self) -> f64 {
        let d = self.dim;
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                let sym = 0.5 * (self.level2[i * d + j] + self.level2[j * d + i]);
                worst = worst.max((sym - 0.5 * self.level1[i] * self.level1[j]).abs());
            }
        }
        worst
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn outer(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for x in a {
        for y in b {
            out.push(x * y);
        }
    }
    out
}

/// `[ξ, η] = ξ ⊗ η − η ⊗ ξ`
pub fn lie_bracket(xi: &[f64], eta: &[f64]) -> Result<Vec<f64>> {
    check_dim(xi.len(), eta.len())?;
    let d = xi.len();
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = xi[i] * eta[j] - eta[i] * xi[j];
        }
    }
    Ok(out)
}

/// `{ξ, η} = ξ ⊗ η + η ⊗ ξ`
pub fn anti_bracket(xi: &[f64], eta: &[f64]) -> Result<Vec<f64>> {
    check_dim(xi.len(), eta.len())?;
    let d = xi.len();
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = xi[i] * eta[j] + eta[i] * xi[j];
        }
    }
    Ok(out)
}
