//! Score fields `(x, σ) ↦ R^d` and the ways to build and combine them.
//!
//! A [`ScoreField`] is a shared evaluator plus metadata describing how far it
//! is from the exact smoothed score and whether it is a gradient.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::clip_box::ClipBox;
use crate::data_density::DataDensity;
use crate::manifold::{ManifoldChart, ManifoldError, Point};
use crate::smoothed_density::{curvature_matrix, SmoothedDensitySetup, SmoothedError};

/// Finite-difference step for guidance gradients.
pub const GUIDE_FD_STEP: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error(transparent)]
    Smoothed(#[from] SmoothedError),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error("perturbation exponent beta = {0} must exceed -2")]
    InvalidBeta(f64),
    #[error("perturbation magnitude c = {0} must be finite and >= 0")]
    InvalidMagnitude(f64),
    #[error("field needs ambient dimension >= {needed}, got {got}")]
    Dimension { needed: usize, got: usize },
    #[error("clip box has dimension {got}, field lives in R^{expected}")]
    BoxDimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    None,
    /// Leading-order approximation, `O(1)` away from the exact score.
    Leading,
    Gradient,
    Rotational,
    Designed,
}

/// Size of `sup_K ‖s − s*‖` as `c·σ^β`, when known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorClass {
    pub kind: ErrorKind,
    pub beta: Option<f64>,
    pub c: Option<f64>,
}

impl ErrorClass {
    pub const EXACT: ErrorClass = ErrorClass {
        kind: ErrorKind::None,
        beta: None,
        c: None,
    };
}

/// Anything that can evaluate a vector field at `(x, σ)`.
pub trait FieldEval: Send + Sync {
    fn eval(&self, x: &[f64], sigma: f64) -> Result<Point, FieldError>;
}

impl<F> FieldEval for F
where
    F: Fn(&[f64], f64) -> Result<Point, FieldError> + Send + Sync,
{
    fn eval(&self, x: &[f64], sigma: f64) -> Result<Point, FieldError> {
        self(x, sigma)
    }
}

#[derive(Clone)]
pub struct ScoreField {
    inner: Arc<dyn FieldEval>,
    dim: usize,
    error_class: ErrorClass,
    is_gradient: bool,
    descriptor: String,
}

impl fmt::Debug for ScoreField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScoreField")
            .field("descriptor", &self.descriptor)
            .field("dim", &self.dim)
            .field("error_class", &self.error_class)
            .field("is_gradient", &self.is_gradient)
            .finish()
    }
}

impl ScoreField {
    pub fn new(
        dim: usize,
        descriptor: impl Into<String>,
        is_gradient: bool,
        error_class: ErrorClass,
        eval: impl FieldEval + 'static,
    ) -> Self {
        ScoreField {
            inner: Arc::new(eval),
            dim,
            error_class,
            is_gradient,
            descriptor: descriptor.into(),
        }
    }

    pub fn eval(&self, x: &[f64], sigma: f64) -> Result<Point, FieldError> {
        self.inner.eval(x, sigma)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn error_class(&self) -> ErrorClass {
        self.error_class
    }

    pub fn is_gradient(&self) -> bool {
        self.is_gradient
    }

    pub fn descriptor(&self) -> &str {
        &self.descriptor
    }
}

/// The exact smoothed score.
pub fn exact_field(setup: Arc<SmoothedDensitySetup>) -> ScoreField {
    let dim = setup.chart().dim();
    let descriptor = format!(
        "exact[{}, {}, {:?}, nodes={}]",
        setup.chart().describe(),
        setup.data().describe(),
        setup.mode(),
        setup.quad_nodes()
    );
    ScoreField::new(
        dim,
        descriptor,
        true,
        ErrorClass::EXACT,
        move |x: &[f64], sigma: f64| Ok(setup.score_exact(x, sigma)?),
    )
}

/// `−(x − P_M(x)) / σ²`.
pub fn leading_field(chart: Arc<ManifoldChart>) -> ScoreField {
    let descriptor = format!("leading[{}]", chart.describe());
    ScoreField::new(
        chart.dim(),
        descriptor,
        true,
        ErrorClass {
            kind: ErrorKind::Leading,
            beta: Some(0.0),
            c: None,
        },
        move |x: &[f64], sigma: f64| {
            let p = chart.project(x)?;
            let inv = 1.0 / (sigma * sigma);
            Ok(x.iter().zip(&p.foot).map(|(a, b)| -(a - b) * inv).collect())
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbKind {
    Gradient,
    Rotational,
}

/// Unit-size perturbation direction `G` on a box.
#[derive(Debug, Clone)]
pub struct Perturbation {
    kind: PerturbKind,
    scale: f64,
}

impl Perturbation {
    pub fn new(kind: PerturbKind, clip: &ClipBox) -> Result<Self, FieldError> {
        if clip.dim() < 2 {
            return Err(FieldError::Dimension {
                needed: 2,
                got: clip.dim(),
            });
        }
        let scale = match kind {
            PerturbKind::Gradient => sup_grad_sin_cos(clip),
            PerturbKind::Rotational => clip.max_planar_norm(),
        };
        Ok(Perturbation { kind, scale })
    }

    /// Normalizing constant: the sup over the box of the raw generator.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn eval(&self, x: &[f64]) -> Point {
        let mut g = Point::from_elem(0.0, x.len());
        match self.kind {
            PerturbKind::Gradient => {
                // ∇(sin x₁ cos x₂)
                g[0] = x[0].cos() * x[1].cos() / self.scale;
                g[1] = -x[0].sin() * x[1].sin() / self.scale;
            }
            PerturbKind::Rotational => {
                g[0] = -x[1] / self.scale;
                g[1] = x[0] / self.scale;
            }
        }
        g
    }
}

/// `sup_K ‖∇(sin x₁ cos x₂)‖`: grid scan plus the lattice points `kπ/2`, where
/// the maximum of `cos²x₁cos²x₂ + sin²x₁sin²x₂` is attained.
fn sup_grad_sin_cos(clip: &ClipBox) -> f64 {
    let norm = |a: f64, b: f64| (a.cos() * b.cos()).hypot(a.sin() * b.sin());
    let axis = |i: usize| -> Vec<f64> {
        let (lo, hi) = (clip.lo[i], clip.hi[i]);
        let mut pts: Vec<f64> = (0..=400).map(|k| lo + (hi - lo) * k as f64 / 400.0).collect();
        let half_pi = std::f64::consts::FRAC_PI_2;
        let mut k = (lo / half_pi).ceil();
        while k * half_pi <= hi {
            pts.push(k * half_pi);
            k += 1.0;
        }
        pts
    };
    let (xs, ys) = (axis(0), axis(1));
    let mut best = 0.0f64;
    for &a in &xs {
        for &b in &ys {
            best = best.max(norm(a, b));
        }
    }
    best
}

/// Adds `c·σ^β·G(x)` with `G` normalized so that `sup_K ‖G‖ = 1`.
pub fn perturb_field(
    base: &ScoreField,
    kind: PerturbKind,
    c: f64,
    beta: f64,
    clip: &ClipBox,
) -> Result<ScoreField, FieldError> {
    if !(beta > -2.0) {
        return Err(FieldError::InvalidBeta(beta));
    }
    if !(c.is_finite() && c >= 0.0) {
        return Err(FieldError::InvalidMagnitude(c));
    }
    if clip.dim() != base.dim() {
        return Err(FieldError::BoxDimension {
            expected: base.dim(),
            got: clip.dim(),
        });
    }
    let g = Perturbation::new(kind, clip)?;
    let inner = base.clone();
    let is_gradient = base.is_gradient() && (kind == PerturbKind::Gradient || c == 0.0);
    let descriptor = format!("perturb[{kind:?}, c={c}, beta={beta}]({})", base.descriptor());
    let class = ErrorClass {
        kind: match kind {
            PerturbKind::Gradient => ErrorKind::Gradient,
            PerturbKind::Rotational => ErrorKind::Rotational,
        },
        beta: Some(beta),
        c: Some(c),
    };
    Ok(ScoreField::new(
        base.dim(),
        descriptor,
        is_gradient,
        class,
        move |x: &[f64], sigma: f64| {
            let mut v = inner.eval(x, sigma)?;
            if c != 0.0 {
                let amp = c * sigma.powf(beta);
                for (vi, gi) in v.iter_mut().zip(g.eval(x)) {
                    *vi += amp * gi;
                }
            }
            Ok(v)
        },
    ))
}

/// Scalar whose gradient is the designed field:
/// `−d_M(x)/σ² + log q(u*) − ½ log Ĥ(u*, x)`.
fn designed_potential(
    chart: &ManifoldChart,
    target: &DataDensity,
    x: &[f64],
    sigma: f64,
    u0: Option<f64>,
) -> Result<f64, FieldError> {
    let p = match u0 {
        Some(u) => chart.refine_from(x, u),
        None => chart.project(x)?,
    };
    let h = curvature_matrix(chart, p.u_star, x);
    Ok(-p.half_sq_dist / (sigma * sigma) + target.log_density_at(p.u_star) - 0.5 * h.abs().ln())
}

/// Gradient field whose small-σ Langevin limit has chart marginal `target`.
pub fn designed_field(chart: Arc<ManifoldChart>, target: DataDensity) -> ScoreField {
    let descriptor = format!("designed[{}, target={}]", chart.describe(), target.describe());
    ScoreField::new(
        chart.dim(),
        descriptor,
        true,
        ErrorClass {
            kind: ErrorKind::Designed,
            beta: Some(0.0),
            c: None,
        },
        move |x: &[f64], sigma: f64| {
            let centre = chart.project(x)?;
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let h = 1e-6 * norm.max(1.0);
            let mut out = Point::from_elem(0.0, x.len());
            let mut probe: Point = x.iter().copied().collect();
            for i in 0..x.len() {
                probe[i] = x[i] + h;
                let up = designed_potential(&chart, &target, &probe, sigma, Some(centre.u_star))?;
                probe[i] = x[i] - h;
                let down = designed_potential(&chart, &target, &probe, sigma, Some(centre.u_star))?;
                probe[i] = x[i];
                out[i] = (up - down) / (2.0 * h);
            }
            Ok(out)
        },
    )
}

/// `σ^α · base`.
pub fn tamper(base: &ScoreField, alpha: f64) -> ScoreField {
    let inner = base.clone();
    let descriptor = format!("tamper[alpha={alpha}]({})", base.descriptor());
    ScoreField::new(
        base.dim(),
        descriptor,
        base.is_gradient(),
        base.error_class(),
        move |x: &[f64], sigma: f64| {
            let mut v = inner.eval(x, sigma)?;
            let scale = sigma.powf(alpha);
            for vi in v.iter_mut() {
                *vi *= scale;
            }
            Ok(v)
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PotentialKind {
    Zero,
    Constant(f64),
    LinearX1,
}

/// Bounded potential `v = clamp(base, −B, B)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidancePotential {
    pub kind: PotentialKind,
    pub clip_level: f64,
}

impl GuidancePotential {
    pub fn new(kind: PotentialKind, clip_level: f64) -> Self {
        GuidancePotential { kind, clip_level }
    }

    pub fn zero() -> Self {
        Self::new(PotentialKind::Zero, f64::INFINITY)
    }

    pub fn raw(&self, x: &[f64]) -> f64 {
        match self.kind {
            PotentialKind::Zero => 0.0,
            PotentialKind::Constant(c) => c,
            PotentialKind::LinearX1 => x[0],
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let b = self.clip_level;
        self.raw(x).clamp(-b, b)
    }

    /// Central-difference gradient of the clipped potential.
    pub fn gradient(&self, x: &[f64]) -> Point {
        let mut probe: Point = x.iter().copied().collect();
        let mut g = Point::from_elem(0.0, x.len());
        for i in 0..x.len() {
            probe[i] = x[i] + GUIDE_FD_STEP;
            let up = self.value(&probe);
            probe[i] = x[i] - GUIDE_FD_STEP;
            let down = self.value(&probe);
            probe[i] = x[i];
            g[i] = (up - down) / (2.0 * GUIDE_FD_STEP);
        }
        g
    }

    pub fn describe(&self) -> String {
        format!("{:?}(clip={})", self.kind, self.clip_level)
    }
}

/// `base − ∇v`.
pub fn guide(base: &ScoreField, v: GuidancePotential) -> ScoreField {
    let inner = base.clone();
    let descriptor = format!("guide[{}]({})", v.describe(), base.descriptor());
    ScoreField::new(
        base.dim(),
        descriptor,
        base.is_gradient(),
        base.error_class(),
        move |x: &[f64], sigma: f64| {
            let mut s = inner.eval(x, sigma)?;
            for (si, gi) in s.iter_mut().zip(v.gradient(x)) {
                *si -= gi;
            }
            Ok(s)
        },
    )
}

/// `max_grid ‖field − s*‖`.
pub fn field_error(
    field: &ScoreField,
    setup: &SmoothedDensitySetup,
    grid: &[Point],
    sigma: f64,
) -> Result<f64, FieldError> {
    let mut worst = 0.0f64;
    for x in grid {
        let f = field.eval(x, sigma)?;
        let s = setup.score_exact(x, sigma)?;
        let d = f.iter().zip(&s).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        worst = worst.max(d);
    }
    Ok(worst)
}

/// `∂₁s₂ − ∂₂s₁` by central differences.
pub fn numeric_curl(field: &ScoreField, x: &[f64], sigma: f64, h: f64) -> Result<f64, FieldError> {
    let mut probe: Point = x.iter().copied().collect();
    let mut partial = |i: usize, comp: usize| -> Result<f64, FieldError> {
        probe[i] = x[i] + h;
        let up = field.eval(&probe, sigma)?[comp];
        probe[i] = x[i] - h;
        let down = field.eval(&probe, sigma)?[comp];
        probe[i] = x[i];
        Ok((up - down) / (2.0 * h))
    };
    Ok(partial(0, 1)? - partial(1, 0)?)
}

/// Points `Φ(u) + t·n(u)` on a regular grid of the tube, `|t| ≤ fraction·ε`.
pub fn tube_grid(chart: &ManifoldChart, angles: usize, offsets: usize, fraction: f64) -> Vec<Point> {
    let eps = fraction * chart.tube_radius();
    let mut out = Vec::with_capacity(angles * offsets);
    for a in 0..angles {
        let u = std::f64::consts::TAU * (a as f64 + 0.5) / angles as f64;
        let base = chart.point(u);
        let n = chart.unit_normal(u);
        for o in 0..offsets {
            let t = if offsets == 1 {
                0.0
            } else {
                -eps + 2.0 * eps * o as f64 / (offsets - 1) as f64
            };
            out.push(base.iter().zip(&n).map(|(b, ni)| b + t * ni).collect());
        }
    }
    out
}
