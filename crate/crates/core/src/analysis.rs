//! Chart marginals, off-manifold mass and reference laws for sample sets.

use thiserror::Error;

use crate::binning::Binning;
use crate::data_density::DataDensity;
use crate::manifold::{ManifoldChart, ManifoldError};
use crate::numeric::composite_gl;
use crate::score_fields::GuidancePotential;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("no coordinates to bin")]
    EmptyInput,
    #[error("tables have {left} and {right} bins")]
    BinMismatch { left: usize, right: usize },
    #[error("delta must be positive, got {0}")]
    InvalidDelta(f64),
}

/// Chart coordinates and distances of a batch of ambient points.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProjectedSamples {
    /// `u*` for points inside the tube with a unique foot.
    pub us: Vec<Option<f64>>,
    pub distances: Vec<f64>,
    pub outside_tube: usize,
    pub degenerate: usize,
}

impl ProjectedSamples {
    pub fn coordinates(&self) -> Vec<f64> {
        self.us.iter().flatten().copied().collect()
    }
}

pub fn project_samples<'a>(
    chart: &ManifoldChart,
    points: impl IntoIterator<Item = &'a [f64]>,
) -> ProjectedSamples {
    let mut out = ProjectedSamples::default();
    for x in points {
        match chart.project(x) {
            Ok(p) => {
                out.us.push(Some(p.u_star));
                out.distances.push(p.distance());
            }
            Err(e) => {
                match e {
                    ManifoldError::DegenerateProjection { .. } => out.degenerate += 1,
                    _ => out.outside_tube += 1,
                }
                out.us.push(None);
                out.distances.push(chart.distance(x).unwrap_or(f64::NAN));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChartHistogram {
    pub binning: Binning,
    pub probs: Vec<f64>,
    pub count: usize,
}

pub fn chart_histogram(us: &[f64], binning: &Binning) -> Result<ChartHistogram, AnalysisError> {
    if us.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let mut counts = vec![0usize; binning.bins];
    for &u in us {
        counts[binning.index_of(u)] += 1;
    }
    let n = us.len() as f64;
    Ok(ChartHistogram {
        binning: *binning,
        probs: counts.iter().map(|&c| c as f64 / n).collect(),
        count: us.len(),
    })
}

/// `½ Σ |p_i − q_i|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64, AnalysisError> {
    if p.len() != q.len() {
        return Err(AnalysisError::BinMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Fraction of distances strictly above `delta`.
pub fn off_manifold_mass(distances: &[f64], delta: f64) -> Result<f64, AnalysisError> {
    if !(delta > 0.0) {
        return Err(AnalysisError::InvalidDelta(delta));
    }
    if distances.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let far = distances.iter().filter(|&&d| !(d <= delta)).count();
    Ok(far as f64 / distances.len() as f64)
}

/// Bin masses of `weight(u)·‖Φ′(u)‖ du`, normalized.
pub fn weighted_reference(
    chart: &ManifoldChart,
    binning: &Binning,
    weight: impl Fn(f64) -> f64,
) -> Vec<f64> {
    let masses: Vec<f64> = (0..binning.bins)
        .map(|i| {
            let (a, b) = binning.edges(i);
            composite_gl(a, b, 8, 8)
                .iter()
                .map(|(u, w)| w * weight(*u) * chart.volume_element(*u))
                .sum()
        })
        .collect();
    let total: f64 = masses.iter().sum();
    masses.into_iter().map(|m| m / total).collect()
}

/// Chart marginal of the Riemannian-uniform law.
pub fn uniform_reference(chart: &ManifoldChart, binning: &Binning) -> Vec<f64> {
    weighted_reference(chart, binning, |_| 1.0)
}

/// Chart marginal of the law `∝ exp(−v(Φ(u)))·‖Φ′(u)‖ du`.
pub fn guided_reference(chart: &ManifoldChart, v: &GuidancePotential, binning: &Binning) -> Vec<f64> {
    weighted_reference(chart, binning, |u| (-v.value(&chart.point(u))).exp())
}

/// Chart marginal of a density in `u`.
pub fn density_reference(density: &DataDensity, binning: &Binning) -> Vec<f64> {
    density.reference_table(binning)
}
