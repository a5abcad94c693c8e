//! Axis-aligned box domains shared by the testbed, the optimizers, and SDR.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DomainError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("degenerate box: lo[{index}] = {lo} is not below hi[{index}] = {hi}")]
    Degenerate { index: usize, lo: f64, hi: f64 },
}

/// An axis-aligned box `[lo_i, hi_i]^D` with `lo_i < hi_i` for all `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, DomainError> {
        if lo.len() != hi.len() {
            return Err(DomainError::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        for (i, (&a, &b)) in lo.iter().zip(&hi).enumerate() {
            if !(a < b) || !a.is_finite() || !b.is_finite() {
                return Err(DomainError::Degenerate { index: i, lo: a, hi: b });
            }
        }
        Ok(Self { lo, hi })
    }

    /// The symmetric cube `[-half, half]^dim`.
    pub fn symmetric(dim: usize, half: f64) -> Self {
        Self::new(vec![-half; dim], vec![half; dim]).expect("half must be positive")
    }

    /// The cube `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self, DomainError> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn side(&self, i: usize) -> f64 {
        self.hi[i] - self.lo[i]
    }

    pub fn sides(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.side(i)).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&a, &b)| 0.5 * (a + b))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(&v, (&a, &b))| v >= a && v <= b)
    }

    /// Coordinatewise clamp of `x` into the box. Idempotent.
    pub fn clip(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.dim());
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&v, (&a, &b))| v.clamp(a, b))
            .collect()
    }

    /// One uniform sample, coordinates drawn in index order.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&a, &b)| a + rng.random::<f64>() * (b - a))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_degenerate_sides() {
        assert!(BoxDomain::new(vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(BoxDomain::new(vec![0.0], vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn clip_is_idempotent_and_clamps() {
        let b = BoxDomain::symmetric(2, 5.0);
        let clipped = b.clip(&[7.0, -9.0]);
        assert_eq!(clipped, vec![5.0, -5.0]);
        assert_eq!(b.clip(&clipped), clipped);
    }

    #[test]
    fn uniform_samples_stay_inside() {
        let b = BoxDomain::new(vec![-1.0, 2.0], vec![1.0, 3.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            assert!(b.contains(&b.sample_uniform(&mut rng)));
        }
    }
}
