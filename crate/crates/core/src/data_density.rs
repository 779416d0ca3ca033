//! Densities on the chart domain `[0, 2π)` with respect to `du`.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::binning::Binning;
use crate::manifold::wrap_angle;
use crate::numeric::{bessel_i0, composite_gl, gauss_legendre};

/// Number of cells in the tabulated sampling CDF.
pub const CDF_NODES: usize = 1 << 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DensityError {
    #[error("density table is empty")]
    EmptyTable,
    #[error("density table entry {index} is {value}, all entries must be positive and finite")]
    NonPositiveTable { index: usize, value: f64 },
    #[error("invalid density parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DensityKind {
    UniformInU,
    VonMises { kappa: f64, mu: f64 },
    /// Piecewise constant on the cells `[2πj/N, 2π(j+1)/N)`.
    Table { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataDensity {
    kind: DensityKind,
    // von Mises: 2π I₀(κ); table: Σ v_j · 2π/N
    normalization: f64,
}

impl DataDensity {
    pub fn uniform() -> Self {
        DataDensity {
            kind: DensityKind::UniformInU,
            normalization: TAU,
        }
    }

    pub fn von_mises(kappa: f64, mu: f64) -> Result<Self, DensityError> {
        if !(kappa.is_finite() && kappa >= 0.0) {
            return Err(DensityError::InvalidParameter(format!(
                "von Mises concentration must be finite and >= 0, got {kappa}"
            )));
        }
        if !mu.is_finite() {
            return Err(DensityError::InvalidParameter("von Mises mean must be finite".into()));
        }
        Ok(DataDensity {
            kind: DensityKind::VonMises { kappa, mu },
            normalization: TAU * bessel_i0(kappa),
        })
    }

    pub fn table(values: Vec<f64>) -> Result<Self, DensityError> {
        if values.is_empty() {
            return Err(DensityError::EmptyTable);
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(DensityError::NonPositiveTable { index, value });
        }
        let h = TAU / values.len() as f64;
        let normalization = values.iter().sum::<f64>() * h;
        Ok(DataDensity {
            kind: DensityKind::Table { values },
            normalization,
        })
    }

    pub fn kind(&self) -> &DensityKind {
        &self.kind
    }

    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    pub fn density_at(&self, u: f64) -> f64 {
        match &self.kind {
            DensityKind::UniformInU => 1.0 / TAU,
            DensityKind::VonMises { kappa, mu } => (kappa * (u - mu).cos()).exp() / self.normalization,
            DensityKind::Table { values } => values[self.cell(u, values.len())] / self.normalization,
        }
    }

    pub fn log_density_at(&self, u: f64) -> f64 {
        match &self.kind {
            DensityKind::UniformInU => -TAU.ln(),
            DensityKind::VonMises { kappa, mu } => kappa * (u - mu).cos() - self.normalization.ln(),
            DensityKind::Table { values } => {
                (values[self.cell(u, values.len())] / self.normalization).ln()
            }
        }
    }

    /// `max log p − min log p` over the domain.
    pub fn log_range(&self) -> f64 {
        match &self.kind {
            DensityKind::UniformInU => 0.0,
            DensityKind::VonMises { kappa, .. } => 2.0 * kappa,
            DensityKind::Table { values } => {
                let (lo, hi) = values
                    .iter()
                    .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
                (hi / lo).ln()
            }
        }
    }

    fn cell(&self, u: f64, n: usize) -> usize {
        let t = wrap_angle(u) / TAU * n as f64;
        // points within rounding of a cell edge belong to the cell on the right
        let r = t.round();
        let t = if (t - r).abs() < 1e-9 { r } else { t };
        (t as usize) % n
    }

    /// `∫_a^b p(u) du` for `a ≤ b`, `b − a ≤ 2π`, endpoints anywhere on the line.
    pub fn interval_mass(&self, a: f64, b: f64) -> f64 {
        match &self.kind {
            DensityKind::UniformInU => (b - a) / TAU,
            DensityKind::VonMises { .. } => {
                let panels = (((b - a) / TAU * 64.0).ceil() as usize).max(1);
                composite_gl(a, b, panels, 8)
                    .iter()
                    .map(|(u, w)| w * self.density_at(*u))
                    .sum()
            }
            DensityKind::Table { values } => {
                let n = values.len() as f64;
                let cum = |t: f64| -> f64 {
                    // ∫_0^t on the unwrapped line, periodic extension
                    let turns = (t / TAU).floor();
                    let r = t - turns * TAU;
                    let pos = r / TAU * n;
                    let full = (pos as usize).min(values.len() - 1);
                    let partial: f64 = values[..full].iter().sum::<f64>() + values[full] * (pos - full as f64);
                    (turns * values.iter().sum::<f64>() + partial) * TAU / n / self.normalization
                };
                cum(b) - cum(a)
            }
        }
    }

    /// Per-bin probabilities of this density.
    pub fn reference_table(&self, binning: &Binning) -> Vec<f64> {
        let masses: Vec<f64> = (0..binning.bins)
            .map(|i| {
                let (a, b) = binning.edges(i);
                self.interval_mass(a, b)
            })
            .collect();
        let total: f64 = masses.iter().sum();
        masses.into_iter().map(|m| m / total).collect()
    }

    /// Cumulative distribution on `CDF_NODES + 1` equispaced nodes of `[0, 2π]`.
    fn cdf_table(&self) -> Vec<f64> {
        let h = TAU / CDF_NODES as f64;
        let (z, w) = gauss_legendre(3);
        let mut cdf = Vec::with_capacity(CDF_NODES + 1);
        let mut acc = 0.0;
        cdf.push(0.0);
        for k in 0..CDF_NODES {
            let left = k as f64 * h;
            let mass = match &self.kind {
                DensityKind::VonMises { .. } => z
                    .iter()
                    .zip(&w)
                    .map(|(zi, wi)| 0.5 * h * wi * self.density_at(left + 0.5 * h * (zi + 1.0)))
                    .sum(),
                _ => self.density_at(left + 0.5 * h) * h,
            };
            acc += mass;
            cdf.push(acc);
        }
        for c in cdf.iter_mut() {
            *c /= acc;
        }
        cdf
    }

    /// `n` i.i.d. draws by inverse CDF with linear interpolation.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(n, &mut rng)
    }

    pub fn sample_with<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        let cdf = self.cdf_table();
        let h = TAU / CDF_NODES as f64;
        (0..n)
            .map(|_| {
                let target: f64 = rng.gen();
                // first node with cdf > target
                let k = cdf.partition_point(|&c| c <= target).clamp(1, CDF_NODES);
                let (c0, c1) = (cdf[k - 1], cdf[k]);
                let frac = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.5 };
                wrap_angle((k - 1) as f64 * h + frac * h)
            })
            .collect()
    }

    pub fn describe(&self) -> String {
        match &self.kind {
            DensityKind::UniformInU => "uniform_in_u".into(),
            DensityKind::VonMises { kappa, mu } => format!("von_mises(kappa={kappa}, mu={mu})"),
            DensityKind::Table { values } => format!("table({} cells)", values.len()),
        }
    }
}
