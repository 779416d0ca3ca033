//! Equal-width angular bins on the periodic chart domain.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifold::wrap_angle;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BinningError {
    #[error("need at least 2 bins, got {0}")]
    TooFewBins(usize),
    #[error("bin offset must be finite")]
    BadOffset,
}

/// `bins` equal arcs of `[0, 2π)`, the first one starting at `offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    pub bins: usize,
    #[serde(default)]
    pub offset: f64,
}

impl Binning {
    pub fn new(bins: usize) -> Result<Self, BinningError> {
        Self::with_offset(bins, 0.0)
    }

    pub fn with_offset(bins: usize, offset: f64) -> Result<Self, BinningError> {
        if bins < 2 {
            return Err(BinningError::TooFewBins(bins));
        }
        if !offset.is_finite() {
            return Err(BinningError::BadOffset);
        }
        Ok(Binning { bins, offset })
    }

    /// Bins whose centres sit on `0, 2π/bins, …`.
    pub fn centered(bins: usize) -> Result<Self, BinningError> {
        Self::with_offset(bins, -0.5 * TAU / bins.max(1) as f64)
    }

    pub fn validate(&self) -> Result<(), BinningError> {
        Self::with_offset(self.bins, self.offset).map(|_| ())
    }

    pub fn width(&self) -> f64 {
        TAU / self.bins as f64
    }

    /// Left and right edge of bin `i` (right edge may exceed 2π).
    pub fn edges(&self, i: usize) -> (f64, f64) {
        let w = self.width();
        let left = self.offset + i as f64 * w;
        (left, left + w)
    }

    pub fn index_of(&self, u: f64) -> usize {
        let shifted = wrap_angle(u - self.offset);
        let i = (shifted / self.width()) as usize;
        i.min(self.bins - 1)
    }
}
