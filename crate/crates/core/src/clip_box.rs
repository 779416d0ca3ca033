//! Axis-aligned boxes used as the compact region `K`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoxError {
    #[error("box bounds have lengths {lo} and {hi}")]
    LengthMismatch { lo: usize, hi: usize },
    #[error("box coordinate {index} has lo = {lo} not below hi = {hi}")]
    Empty { index: usize, lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ClipBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, BoxError> {
        let b = ClipBox { lo, hi };
        b.validate()?;
        Ok(b)
    }

    /// `[−half, half]^dim`.
    pub fn cube(dim: usize, half: f64) -> Self {
        ClipBox {
            lo: vec![-half; dim],
            hi: vec![half; dim],
        }
    }

    pub fn validate(&self) -> Result<(), BoxError> {
        if self.lo.len() != self.hi.len() {
            return Err(BoxError::LengthMismatch {
                lo: self.lo.len(),
                hi: self.hi.len(),
            });
        }
        for (index, (&lo, &hi)) in self.lo.iter().zip(&self.hi).enumerate() {
            if !(lo < hi) {
                return Err(BoxError::Empty { index, lo, hi });
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// Clamp `x` into the box; returns whether any coordinate moved.
    pub fn clamp(&self, x: &mut [f64]) -> bool {
        let mut moved = false;
        for (v, (lo, hi)) in x.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            let c = v.clamp(*lo, *hi);
            if c != *v {
                *v = c;
                moved = true;
            }
        }
        moved
    }

    /// Largest Euclidean norm of the first two coordinates over the box.
    pub fn max_planar_norm(&self) -> f64 {
        let a = self.lo[0].abs().max(self.hi[0].abs());
        let b = self.lo[1].abs().max(self.hi[1].abs());
        a.hypot(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamping() {
        let b = ClipBox::cube(2, 4.0);
        let mut x = [5.0, -1.0];
        assert!(b.clamp(&mut x));
        assert_eq!(x, [4.0, -1.0]);
        assert!(!b.clamp(&mut x));
        assert!(b.contains(&x));
        assert!((b.max_planar_norm() - 32f64.sqrt()).abs() < 1e-15);
        assert!(ClipBox::new(vec![0.0], vec![0.0]).is_err());
        assert!(ClipBox::new(vec![0.0], vec![1.0, 2.0]).is_err());
    }
}
