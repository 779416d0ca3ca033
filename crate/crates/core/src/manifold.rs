//! Closed curves embedded in `R^d`, described by a single periodic chart
//! `Φ: [0, 2π) → R^d`.
//!
//! Besides the chart and its derivatives this module provides the
//! closest-point projection `P_M`, the half squared distance
//! `d_M(x) = ½ dist(x, M)²` and the tubular-neighbourhood test.
//! Projection locates a node of a cached table (by descent from a chart seed
//! when that is provably enough, by a full scan otherwise) and refines it by
//! bracketed Newton on `u ↦ ½‖x − Φ(u)‖²`.

use std::f64::consts::{PI, TAU};

use smallvec::SmallVec;
use thiserror::Error;

/// Small ambient vector; every manifold in this crate lives in low dimension.
pub type Point = SmallVec<[f64; 4]>;

/// Default number of nodes in the projection scan.
pub const DEFAULT_GRID: usize = 1024;

/// Fraction of the reach used for the default tube radius.
pub const DEFAULT_TUBE_FRACTION: f64 = 0.9;

const NEWTON_TOL: f64 = 1e-14;
const NEWTON_MAX_ITER: usize = 60;
const DEGENERATE_VALUE_GAP: f64 = 1e-9;
const DEGENERATE_ANGLE_GAP: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ManifoldError {
    #[error("invalid chart parameters: {0}")]
    InvalidChart(String),
    #[error("point has dimension {got}, chart lives in R^{expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("point is not finite")]
    NonFinite,
    #[error("point at distance {distance} is outside the tube of radius {tube_radius}")]
    OutsideTube { distance: f64, tube_radius: f64 },
    #[error("closest point is not unique (competing feet at u = {u_first} and u = {u_second})")]
    DegenerateProjection { u_first: f64, u_second: f64 },
}

/// Geometry of the curve.
#[derive(Debug, Clone, PartialEq)]
pub enum ChartKind {
    Circle { radius: f64 },
    Ellipse { a: f64, b: f64 },
    /// Unit circle mapped isometrically into `R^dim` by an orthonormal pair.
    EmbeddedCircle { dim: usize },
}

/// Chart value together with its first two derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub point: Point,
    pub d1: Point,
    pub d2: Point,
}

/// Result of a closest-point projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub u_star: f64,
    pub foot: Point,
    /// `d_M(x) = ½‖x − foot‖²`.
    pub half_sq_dist: f64,
}

impl Projection {
    pub fn distance(&self) -> f64 {
        (2.0 * self.half_sq_dist).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct ManifoldChart {
    kind: ChartKind,
    dim: usize,
    tube_radius: f64,
    // orthonormal pair spanning the plane of an embedded circle
    e1: Point,
    e2: Point,
    grid: Vec<f64>,
    grid_size: usize,
}

/// Wrap a coordinate into `[0, 2π)`.
pub fn wrap_angle(u: f64) -> f64 {
    let w = u.rem_euclid(TAU);
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Shortest signed separation of two angles, in `(−π, π]`.
pub fn angle_gap(u: f64, v: f64) -> f64 {
    let d = (u - v).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

impl ManifoldChart {
    pub fn circle(radius: f64) -> Result<Self, ManifoldError> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(ManifoldError::InvalidChart(format!(
                "circle radius must be positive, got {radius}"
            )));
        }
        Ok(Self::build(ChartKind::Circle { radius }, 2))
    }

    pub fn ellipse(a: f64, b: f64) -> Result<Self, ManifoldError> {
        if !(a.is_finite() && b.is_finite() && a > 0.0 && b > 0.0) {
            return Err(ManifoldError::InvalidChart(format!(
                "ellipse semi-axes must be positive, got a={a}, b={b}"
            )));
        }
        Ok(Self::build(ChartKind::Ellipse { a, b }, 2))
    }

    pub fn embedded_circle(dim: usize) -> Result<Self, ManifoldError> {
        if dim < 2 {
            return Err(ManifoldError::InvalidChart(format!(
                "embedded circle needs ambient dimension >= 2, got {dim}"
            )));
        }
        Ok(Self::build(ChartKind::EmbeddedCircle { dim }, dim))
    }

    fn build(kind: ChartKind, dim: usize) -> Self {
        let (e1, e2) = embedding_frame(dim);
        let mut chart = ManifoldChart {
            kind,
            dim,
            tube_radius: 0.0,
            e1,
            e2,
            grid: Vec::new(),
            grid_size: 0,
        };
        chart.tube_radius = DEFAULT_TUBE_FRACTION * chart.reach();
        chart.rebuild_grid(DEFAULT_GRID);
        chart
    }

    /// Override the tube radius; it must stay strictly inside the reach.
    pub fn with_tube_radius(mut self, eps: f64) -> Result<Self, ManifoldError> {
        if !(eps.is_finite() && eps > 0.0 && eps < self.reach()) {
            return Err(ManifoldError::InvalidChart(format!(
                "tube radius {eps} must lie in (0, reach = {})",
                self.reach()
            )));
        }
        self.tube_radius = eps;
        Ok(self)
    }

    pub fn with_grid_size(mut self, nodes: usize) -> Result<Self, ManifoldError> {
        if nodes < 16 {
            return Err(ManifoldError::InvalidChart(format!(
                "projection grid needs at least 16 nodes, got {nodes}"
            )));
        }
        self.rebuild_grid(nodes);
        Ok(self)
    }

    fn rebuild_grid(&mut self, nodes: usize) {
        let mut grid = Vec::with_capacity(nodes * self.dim);
        let mut p = Point::from_elem(0.0, self.dim);
        for j in 0..nodes {
            self.point_into(TAU * j as f64 / nodes as f64, &mut p);
            grid.extend_from_slice(&p);
        }
        self.grid = grid;
        self.grid_size = nodes;
    }

    pub fn kind(&self) -> &ChartKind {
        &self.kind
    }

    /// Ambient dimension `d`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Intrinsic dimension `n`; always 1 for curves.
    pub fn intrinsic_dim(&self) -> usize {
        1
    }

    pub fn tube_radius(&self) -> f64 {
        self.tube_radius
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    /// Reach of the curve: the smallest radius of curvature (none of the
    /// supported curves has a bottleneck shorter than that).
    pub fn reach(&self) -> f64 {
        match self.kind {
            ChartKind::Circle { radius } => radius,
            ChartKind::Ellipse { a, b } => a.min(b).powi(2) / a.max(b),
            ChartKind::EmbeddedCircle { .. } => 1.0,
        }
    }

    /// `Φ(u)` written into `out`.
    pub fn point_into(&self, u: f64, out: &mut [f64]) {
        let (s, c) = u.sin_cos();
        match self.kind {
            ChartKind::Circle { radius } => {
                out[0] = radius * c;
                out[1] = radius * s;
            }
            ChartKind::Ellipse { a, b } => {
                out[0] = a * c;
                out[1] = b * s;
            }
            ChartKind::EmbeddedCircle { .. } => {
                for ((o, e1), e2) in out.iter_mut().zip(&self.e1).zip(&self.e2) {
                    *o = c * e1 + s * e2;
                }
            }
        }
    }

    pub fn point(&self, u: f64) -> Point {
        let mut p = Point::from_elem(0.0, self.dim);
        self.point_into(wrap_angle(u), &mut p);
        p
    }

    /// `Φ`, `Φ′`, `Φ″` at `u`.
    pub fn jet(&self, u: f64) -> Jet {
        let u = wrap_angle(u);
        let (s, c) = u.sin_cos();
        let mut point = Point::from_elem(0.0, self.dim);
        let mut d1 = Point::from_elem(0.0, self.dim);
        let mut d2 = Point::from_elem(0.0, self.dim);
        match self.kind {
            ChartKind::Circle { radius } => {
                point[0] = radius * c;
                point[1] = radius * s;
                d1[0] = -radius * s;
                d1[1] = radius * c;
                d2[0] = -radius * c;
                d2[1] = -radius * s;
            }
            ChartKind::Ellipse { a, b } => {
                point[0] = a * c;
                point[1] = b * s;
                d1[0] = -a * s;
                d1[1] = b * c;
                d2[0] = -a * c;
                d2[1] = -b * s;
            }
            ChartKind::EmbeddedCircle { .. } => {
                for i in 0..self.dim {
                    let (e1, e2) = (self.e1[i], self.e2[i]);
                    point[i] = c * e1 + s * e2;
                    d1[i] = -s * e1 + c * e2;
                    d2[i] = -point[i];
                }
            }
        }
        Jet { point, d1, d2 }
    }

    /// Riemannian volume element `√det g(u) = ‖Φ′(u)‖`.
    pub fn volume_element(&self, u: f64) -> f64 {
        let (s, c) = u.sin_cos();
        match self.kind {
            ChartKind::Circle { radius } => radius,
            ChartKind::Ellipse { a, b } => (a * a * s * s + b * b * c * c).sqrt(),
            ChartKind::EmbeddedCircle { .. } => 1.0,
        }
    }

    /// Cheap chart coordinate guess for an ambient point; exact on the curve.
    pub fn seed_angle(&self, x: &[f64]) -> f64 {
        match self.kind {
            ChartKind::Circle { .. } => wrap_angle(x[1].atan2(x[0])),
            ChartKind::Ellipse { a, b } => wrap_angle((x[1] / b).atan2(x[0] / a)),
            ChartKind::EmbeddedCircle { .. } => {
                let c = dot(x, &self.e1);
                let s = dot(x, &self.e2);
                wrap_angle(s.atan2(c))
            }
        }
    }

    fn node(&self, j: usize) -> &[f64] {
        &self.grid[j * self.dim..(j + 1) * self.dim]
    }

    /// Discrete descent on the node table from the chart seed. A local
    /// minimum closer than the reach is the global one (every other critical
    /// distance is at least the reach), so no scan is needed in that case.
    fn local_candidate(&self, x: &[f64]) -> Option<Projection> {
        let n = self.grid_size;
        let h = TAU / n as f64;
        let mut j = ((self.seed_angle(x) / h).round() as usize) % n;
        let mut v = half_sq(x, self.node(j));
        for _ in 0..n / 4 {
            let (r, l) = ((j + 1) % n, (j + n - 1) % n);
            let (vr, vl) = (half_sq(x, self.node(r)), half_sq(x, self.node(l)));
            if vr < v && vr <= vl {
                j = r;
                v = vr;
            } else if vl < v {
                j = l;
                v = vl;
            } else {
                let reach = self.reach();
                // strict margin keeps rounding away from the boundary case
                if 2.0 * v < 0.98 * reach * reach {
                    return Some(self.refine(x, j as f64 * h, h));
                }
                return None;
            }
        }
        None
    }

    fn check_point(&self, x: &[f64]) -> Result<(), ManifoldError> {
        if x.len() != self.dim {
            return Err(ManifoldError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ManifoldError::NonFinite);
        }
        Ok(())
    }

    /// Global closest point without the tube or uniqueness checks.
    ///
    /// Returns the best refined candidate together with the runner-up
    /// local minimum (if any lies more than 0.1 away in `u`).
    fn closest_candidates(&self, x: &[f64]) -> (Projection, Option<Projection>) {
        if let Some(p) = self.local_candidate(x) {
            return (p, None);
        }
        self.scan_candidates(x)
    }

    fn scan_candidates(&self, x: &[f64]) -> (Projection, Option<Projection>) {
        let n = self.grid_size;
        let dim = self.dim;
        let mut vals = Vec::with_capacity(n);
        for node in self.grid.chunks_exact(dim) {
            vals.push(half_sq(x, node));
        }
        let (best, _) = vals
            .iter()
            .enumerate()
            .fold((0usize, f64::INFINITY), |(bi, bv), (i, &v)| {
                if v < bv {
                    (i, v)
                } else {
                    (bi, bv)
                }
            });
        let h = TAU / n as f64;
        let u_best = best as f64 * h;

        // runner-up: the lowest non-strict local minimum well separated from the best one
        let mut second: Option<usize> = None;
        for j in 0..n {
            let v = vals[j];
            if v <= vals[(j + n - 1) % n]
                && v <= vals[(j + 1) % n]
                && angle_gap(j as f64 * h, u_best).abs() > DEGENERATE_ANGLE_GAP
                && second.is_none_or(|s| v < vals[s])
            {
                second = Some(j);
            }
        }

        let first = self.refine(x, u_best, h);
        let runner = second.map(|j| self.refine(x, j as f64 * h, h));
        match runner {
            Some(r) if r.half_sq_dist < first.half_sq_dist => (r, Some(first)),
            other => (first, other),
        }
    }

    /// Safeguarded Newton on `g(u) = ½‖x − Φ(u)‖²` inside `[u0 − h, u0 + h]`.
    fn refine(&self, x: &[f64], u0: f64, h: f64) -> Projection {
        let mut lo = u0 - h;
        let mut hi = u0 + h;
        let mut u = u0;
        let bracketed = self.newton_terms(x, lo).0 <= 0.0 && self.newton_terms(x, hi).0 >= 0.0;
        for _ in 0..NEWTON_MAX_ITER {
            let (g1, g2) = self.newton_terms(x, u);
            if g1 == 0.0 {
                break;
            }
            if bracketed {
                if g1 < 0.0 {
                    lo = u;
                } else {
                    hi = u;
                }
            }
            let delta = if g2 > 0.0 { -g1 / g2 } else { f64::NAN };
            if delta.abs() < NEWTON_TOL {
                u += delta;
                break;
            }
            let next = u + delta;
            if bracketed && !(next > lo && next < hi) {
                u = 0.5 * (lo + hi);
                if hi - lo < NEWTON_TOL {
                    break;
                }
            } else if next.is_finite() {
                u = next;
            } else {
                break;
            }
        }
        let u = wrap_angle(u);
        let foot = self.point(u);
        Projection {
            u_star: u,
            half_sq_dist: half_sq(x, &foot),
            foot,
        }
    }

    /// Newton from a nearby coordinate, no grid scan. Valid when `u0` already
    /// lies in the basin of the closest point (e.g. a neighbouring query).
    pub fn refine_from(&self, x: &[f64], u0: f64) -> Projection {
        self.refine(x, u0, TAU / self.grid_size as f64)
    }

    /// First and second derivative of `½‖x − Φ(u)‖²`.
    fn newton_terms(&self, x: &[f64], u: f64) -> (f64, f64) {
        let jet = self.jet(u);
        let mut g1 = 0.0;
        let mut curv = 0.0;
        let mut speed2 = 0.0;
        for i in 0..self.dim {
            let r = x[i] - jet.point[i];
            g1 -= r * jet.d1[i];
            curv -= r * jet.d2[i];
            speed2 += jet.d1[i] * jet.d1[i];
        }
        (g1, speed2 + curv)
    }

    /// Closest point ignoring the tube radius; still rejects medial-axis points.
    pub fn nearest(&self, x: &[f64]) -> Result<Projection, ManifoldError> {
        self.check_point(x)?;
        let (best, runner) = self.closest_candidates(x);
        if let Some(r) = runner {
            if (r.half_sq_dist - best.half_sq_dist).abs() < DEGENERATE_VALUE_GAP
                && angle_gap(r.u_star, best.u_star).abs() > DEGENERATE_ANGLE_GAP
            {
                return Err(ManifoldError::DegenerateProjection {
                    u_first: best.u_star,
                    u_second: r.u_star,
                });
            }
        }
        Ok(best)
    }

    /// Unique closest point for `x` inside the tube `T_M(ε)`.
    pub fn project(&self, x: &[f64]) -> Result<Projection, ManifoldError> {
        let p = self.nearest(x)?;
        let distance = p.distance();
        if distance >= self.tube_radius {
            return Err(ManifoldError::OutsideTube {
                distance,
                tube_radius: self.tube_radius,
            });
        }
        Ok(p)
    }

    /// `dist(x, M)`, well defined even on the medial axis.
    pub fn distance(&self, x: &[f64]) -> Result<f64, ManifoldError> {
        self.check_point(x)?;
        Ok(self.closest_candidates(x).0.distance())
    }

    pub fn in_tube(&self, x: &[f64], eps: f64) -> bool {
        match self.distance(x) {
            Ok(d) => d < eps,
            Err(_) => false,
        }
    }

    /// Axis-aligned bounding box of the curve, `(lo, hi)` per coordinate.
    pub fn bounding_box(&self) -> (Point, Point) {
        let mut lo = Point::from_elem(f64::INFINITY, self.dim);
        let mut hi = Point::from_elem(f64::NEG_INFINITY, self.dim);
        for node in self.grid.chunks_exact(self.dim) {
            for i in 0..self.dim {
                lo[i] = lo[i].min(node[i]);
                hi[i] = hi[i].max(node[i]);
            }
        }
        // grid extremes can miss the true extremes by O(h²)
        let h = TAU / self.grid_size as f64;
        let slack = 0.5 * h * h * self.max_radius();
        for i in 0..self.dim {
            lo[i] -= slack;
            hi[i] += slack;
        }
        (lo, hi)
    }

    fn max_radius(&self) -> f64 {
        match self.kind {
            ChartKind::Circle { radius } => radius,
            ChartKind::Ellipse { a, b } => a.max(b),
            ChartKind::EmbeddedCircle { .. } => 1.0,
        }
    }

    /// Unit normal field used by tube grids; for planar curves the outward
    /// normal, for embedded circles the radial direction.
    pub fn unit_normal(&self, u: f64) -> Point {
        let jet = self.jet(u);
        match self.kind {
            ChartKind::EmbeddedCircle { .. } => jet.point,
            _ => {
                let speed = norm(&jet.d1);
                let mut n = Point::from_elem(0.0, self.dim);
                n[0] = jet.d1[1] / speed;
                n[1] = -jet.d1[0] / speed;
                n
            }
        }
    }

    /// Human readable chart description.
    pub fn describe(&self) -> String {
        match self.kind {
            ChartKind::Circle { radius } => format!("circle(radius={radius})"),
            ChartKind::Ellipse { a, b } => format!("ellipse(a={a}, b={b})"),
            ChartKind::EmbeddedCircle { dim } => format!("embedded_circle(d={dim})"),
        }
    }
}

/// Orthonormal pair used to embed the unit circle: Gram–Schmidt on
/// `(1, …, 1)` and `(1, 2, …, d)`; for `d = 2` the coordinate axes.
fn embedding_frame(dim: usize) -> (Point, Point) {
    if dim == 2 {
        return (
            Point::from_slice(&[1.0, 0.0]),
            Point::from_slice(&[0.0, 1.0]),
        );
    }
    let v1: Point = (0..dim).map(|_| 1.0).collect();
    let v2: Point = (0..dim).map(|i| (i + 1) as f64).collect();
    let n1 = norm(&v1);
    let e1: Point = v1.iter().map(|v| v / n1).collect();
    let proj = dot(&v2, &e1);
    let w: Point = v2.iter().zip(&e1).map(|(v, e)| v - proj * e).collect();
    let nw = norm(&w);
    let e2: Point = w.iter().map(|v| v / nw).collect();
    (e1, e2)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn half_sq(x: &[f64], y: &[f64]) -> f64 {
    0.5 * x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
}
