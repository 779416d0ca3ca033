//! Gaussian-smoothed data law on a curve and its score.
//!
//! `p_σ(x) = ∫ (2πσ²)^{-d/2} exp(−‖x − γΦ(u)‖² / 2σ²) p_data(u) du` with
//! `γ = 1` (VE) or `γ = √(1 − σ²)` (VP), evaluated by the periodic trapezoid
//! rule in log space. Every evaluation compares the rule on `2N` nodes with
//! the rule on the even `N` of them and rejects the result when they disagree.
//!
//! Close to the curve only a short arc contributes. When the geometry allows
//! it (see [`SmoothedDensitySetup::window`]) the sum is restricted to that arc,
//! which keeps score evaluation cheap at small σ.

use std::f64::consts::TAU;

use thiserror::Error;

use crate::data_density::DataDensity;
use crate::manifold::{dot, ManifoldChart, ManifoldError, Point};

pub const DEFAULT_QUAD_NODES: usize = 4096;

/// Largest accepted change between the coarse and the fine rule (in log p).
pub const CONVERGENCE_TOL: f64 = 1e-6;

// terms further than this below the peak exponent are dropped
const LOG_CUT: f64 = 40.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SmoothedError {
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error("sigma = {sigma} is not valid for {mode:?} smoothing")]
    InvalidSigma { sigma: f64, mode: Mode },
    #[error("quadrature needs a power of two >= 256 nodes, got {0}")]
    BadNodeCount(usize),
    #[error("quadrature not converged: log p changes from {coarse} to {fine} on doubling")]
    QuadratureNotConverged { coarse: f64, fine: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Ve,
    Vp,
}

impl Mode {
    pub fn gamma(self, sigma: f64) -> Result<f64, SmoothedError> {
        match self {
            Mode::Ve if sigma.is_finite() && sigma > 0.0 => Ok(1.0),
            Mode::Vp if sigma.is_finite() && sigma > 0.0 && sigma < 1.0 => {
                Ok((1.0 - sigma * sigma).sqrt())
            }
            _ => Err(SmoothedError::InvalidSigma { sigma, mode: self }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionReport {
    pub sigma: f64,
    pub half_sq_dist: f64,
    pub log_p: f64,
    pub leading_residual: f64,
    pub order1_residual: f64,
}

#[derive(Debug, Clone)]
pub struct SmoothedDensitySetup {
    chart: ManifoldChart,
    data: DataDensity,
    mode: Mode,
    quad_nodes: usize,
    // 2N chart points (row-major) and log p_data at the same nodes
    nodes: Vec<f64>,
    log_data: Vec<f64>,
    log_range: f64,
}

/// Accumulated quadrature over a node set.
struct Sums {
    fine_log: f64,
    coarse_log: f64,
    // Σ w_j (γΦ_j − x) over the fine rule, scaled by exp(−max)
    weighted: Point,
    fine_weight: f64,
}

impl SmoothedDensitySetup {
    pub fn new(
        chart: ManifoldChart,
        data: DataDensity,
        mode: Mode,
        quad_nodes: usize,
    ) -> Result<Self, SmoothedError> {
        if quad_nodes < 256 || !quad_nodes.is_power_of_two() {
            return Err(SmoothedError::BadNodeCount(quad_nodes));
        }
        let total = 2 * quad_nodes;
        let dim = chart.dim();
        let mut nodes = vec![0.0; total * dim];
        let mut log_data = Vec::with_capacity(total);
        for j in 0..total {
            let u = TAU * j as f64 / total as f64;
            chart.point_into(u, &mut nodes[j * dim..(j + 1) * dim]);
            log_data.push(data.log_density_at(u));
        }
        let log_range = data.log_range();
        Ok(SmoothedDensitySetup {
            chart,
            data,
            mode,
            quad_nodes,
            nodes,
            log_data,
            log_range,
        })
    }

    pub fn chart(&self) -> &ManifoldChart {
        &self.chart
    }

    pub fn data(&self) -> &DataDensity {
        &self.data
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn quad_nodes(&self) -> usize {
        self.quad_nodes
    }

    fn check(&self, x: &[f64], sigma: f64) -> Result<f64, SmoothedError> {
        let gamma = self.mode.gamma(sigma)?;
        if x.len() != self.chart.dim() {
            return Err(ManifoldError::DimensionMismatch {
                expected: self.chart.dim(),
                got: x.len(),
            }
            .into());
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ManifoldError::NonFinite.into());
        }
        Ok(gamma)
    }

    fn sq_dist(&self, j: usize, x: &[f64], gamma: f64) -> f64 {
        let dim = x.len();
        let node = &self.nodes[j * dim..(j + 1) * dim];
        node.iter()
            .zip(x)
            .map(|(p, xi)| {
                let r = xi - gamma * p;
                r * r
            })
            .sum()
    }

    /// Contiguous node range `(start, len)` outside of which every term is
    /// negligible, or `None` when that cannot be certified.
    ///
    /// The smallest discrete value of `‖x − γΦ_j‖²` found by descent lies in
    /// the basin of the global closest point as long as it is below the
    /// squared reach of `γM`; every other critical value of the distance is at
    /// least that large. So once the window edges have climbed `2σ²·cut`
    /// above the minimum without passing a local maximum, everything outside
    /// is at least as far down.
    fn window(&self, x: &[f64], sigma: f64, gamma: f64) -> Option<(usize, usize)> {
        let total = 2 * self.quad_nodes;
        let h = TAU / total as f64;
        let scaled: Point = x.iter().map(|v| v / gamma).collect();
        let seed = self.chart.seed_angle(&scaled);
        let mut j = ((seed / h).round() as usize) % total;
        let mut dj = self.sq_dist(j, x, gamma);
        // discrete descent
        let mut steps = 0;
        loop {
            let right = (j + 1) % total;
            let left = (j + total - 1) % total;
            let (dr, dl) = (self.sq_dist(right, x, gamma), self.sq_dist(left, x, gamma));
            if dr < dj && dr <= dl {
                j = right;
                dj = dr;
            } else if dl < dj {
                j = left;
                dj = dl;
            } else {
                break;
            }
            steps += 1;
            if steps > total / 4 {
                return None;
            }
        }
        let cut = LOG_CUT + self.log_range;
        let rise = 2.0 * sigma * sigma * cut;
        let reach = gamma * self.chart.reach();
        if reach * reach - dj < rise {
            return None;
        }
        let limit = total / 2;
        let climb = |dir: isize| -> Option<usize> {
            let mut prev = dj;
            for k in 1..limit {
                let idx = (j as isize + dir * k as isize).rem_euclid(total as isize) as usize;
                let d = self.sq_dist(idx, x, gamma);
                if d < prev {
                    return None;
                }
                if d - dj >= rise {
                    return Some(k);
                }
                prev = d;
            }
            None
        };
        let right = climb(1)?;
        let left = climb(-1)?;
        if left + right + 1 >= limit {
            return None;
        }
        Some(((j + total - left) % total, left + right + 1))
    }

    fn accumulate(
        &self,
        x: &[f64],
        sigma: f64,
        gamma: f64,
        range: Option<(usize, usize)>,
        want_score: bool,
    ) -> Sums {
        let total = 2 * self.quad_nodes;
        let dim = x.len();
        let (start, len) = range.unwrap_or((0, total));
        let inv = 1.0 / (2.0 * sigma * sigma);
        let mut exps = Vec::with_capacity(len);
        let mut peak = f64::NEG_INFINITY;
        for k in 0..len {
            let j = (start + k) % total;
            let e = self.log_data[j] - self.sq_dist(j, x, gamma) * inv;
            peak = peak.max(e);
            exps.push(e);
        }
        let mut fine = 0.0;
        let mut coarse = 0.0;
        let mut weighted = Point::from_elem(0.0, dim);
        for (k, e) in exps.iter().enumerate() {
            let rel = e - peak;
            if rel < -LOG_CUT - 10.0 {
                continue;
            }
            let w = rel.exp();
            fine += w;
            let j = (start + k) % total;
            if j.is_multiple_of(2) {
                coarse += w;
            }
            if want_score {
                let node = &self.nodes[j * dim..(j + 1) * dim];
                for i in 0..dim {
                    weighted[i] += w * (gamma * node[i] - x[i]);
                }
            }
        }
        let h_fine = TAU / total as f64;
        Sums {
            fine_log: peak + (fine * h_fine).ln(),
            coarse_log: peak + (coarse * 2.0 * h_fine).ln(),
            weighted,
            fine_weight: fine,
        }
    }

    fn evaluate(
        &self,
        x: &[f64],
        sigma: f64,
        want_score: bool,
    ) -> Result<(f64, Option<Point>), SmoothedError> {
        let gamma = self.check(x, sigma)?;
        let range = self.window(x, sigma, gamma);
        let sums = self.accumulate(x, sigma, gamma, range, want_score);
        if !((sums.fine_log - sums.coarse_log).abs() <= CONVERGENCE_TOL) {
            return Err(SmoothedError::QuadratureNotConverged {
                coarse: sums.coarse_log,
                fine: sums.fine_log,
            });
        }
        let d = x.len() as f64;
        let log_p = sums.fine_log - 0.5 * d * (TAU * sigma * sigma).ln();
        let score = want_score.then(|| {
            let scale = 1.0 / (sigma * sigma * sums.fine_weight);
            sums.weighted.iter().map(|v| v * scale).collect()
        });
        Ok((log_p, score))
    }

    /// `log p_σ(x)`.
    pub fn log_p_sigma(&self, x: &[f64], sigma: f64) -> Result<f64, SmoothedError> {
        Ok(self.evaluate(x, sigma, false)?.0)
    }

    /// `∇ log p_σ(x)`.
    pub fn score_exact(&self, x: &[f64], sigma: f64) -> Result<Point, SmoothedError> {
        Ok(self.evaluate(x, sigma, true)?.1.expect("score requested"))
    }

    /// Both at once; the score shares the quadrature of the density.
    pub fn log_p_and_score(&self, x: &[f64], sigma: f64) -> Result<(f64, Point), SmoothedError> {
        let (lp, s) = self.evaluate(x, sigma, true)?;
        Ok((lp, s.expect("score requested")))
    }

    /// Laplace approximation of `log p_σ(x)` around the closest point.
    pub fn laplace_log_p(&self, x: &[f64], sigma: f64) -> Result<f64, SmoothedError> {
        self.check(x, sigma)?;
        let proj = self.chart.project(x)?;
        let codim = (self.chart.dim() - self.chart.intrinsic_dim()) as f64;
        let h = curvature_matrix(&self.chart, proj.u_star, x);
        let mut value = -proj.half_sq_dist / (sigma * sigma)
            - 0.5 * codim * (TAU * sigma * sigma).ln()
            - 0.5 * h.abs().ln()
            + self.data.log_density_at(proj.u_star);
        if self.mode == Mode::Vp {
            value -= 0.5 * vp_pairing(&proj.foot, x);
        }
        Ok(value)
    }

    /// Deviation of `log p_σ(x)` from its `O(1)` prediction, with the
    /// codimension coefficient of the `log(2πσ²)` term left as a parameter.
    pub fn order1_residual_with(
        &self,
        x: &[f64],
        sigma: f64,
        codim_coefficient: f64,
    ) -> Result<f64, SmoothedError> {
        let log_p = self.log_p_sigma(x, sigma)?;
        let proj = self.chart.project(x)?;
        let h = curvature_matrix(&self.chart, proj.u_star, x);
        let mut block =
            log_p + proj.half_sq_dist / (sigma * sigma) + codim_coefficient * (TAU * sigma * sigma).ln();
        if self.mode == Mode::Vp {
            block += 0.5 * vp_pairing(&proj.foot, x);
        }
        let predicted = self.data.log_density_at(proj.u_star) - 0.5 * h.abs().ln();
        Ok((block - predicted).abs())
    }

    pub fn expansion_residuals(
        &self,
        x: &[f64],
        sigmas: &[f64],
    ) -> Result<Vec<ExpansionReport>, SmoothedError> {
        let proj = self.chart.project(x)?;
        let codim = 0.5 * (self.chart.dim() - self.chart.intrinsic_dim()) as f64;
        sigmas
            .iter()
            .map(|&sigma| {
                let log_p = self.log_p_sigma(x, sigma)?;
                Ok(ExpansionReport {
                    sigma,
                    half_sq_dist: proj.half_sq_dist,
                    log_p,
                    leading_residual: (sigma * sigma * log_p + proj.half_sq_dist).abs(),
                    order1_residual: self.order1_residual_with(x, sigma, codim)?,
                })
            })
            .collect()
    }
}

/// `⟨P_M(x), x − P_M(x)⟩`.
fn vp_pairing(foot: &[f64], x: &[f64]) -> f64 {
    let r: Point = x.iter().zip(foot).map(|(a, b)| a - b).collect();
    dot(foot, &r)
}

/// `Ĥ(u, x) = ⟨Φ″(u), Φ(u) − x⟩ + ‖Φ′(u)‖²`, a 1×1 matrix for curves.
pub fn curvature_matrix(chart: &ManifoldChart, u: f64, x: &[f64]) -> f64 {
    let jet = chart.jet(u);
    let r: Point = jet.point.iter().zip(x).map(|(p, xi)| p - xi).collect();
    dot(&jet.d2, &r) + dot(&jet.d1, &jet.d1)
}
