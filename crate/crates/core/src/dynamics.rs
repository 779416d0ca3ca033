//! Euler–Maruyama integration of (tampered, guided) Langevin dynamics.
//!
//! Each chain draws from its own ChaCha stream `(master_seed, chain)`, so a
//! chain's trajectory does not depend on how chains are scheduled.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::clip_box::ClipBox;
use crate::manifold::{ManifoldChart, Point};
use crate::score_fields::{FieldError, ScoreField};

/// Environment variable holding the worker budget.
pub const WORKERS_ENV: &str = "GEOSCORE_WORKERS";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
    #[error("chain {chain} left the finite range at step {step} (step size too large for the drift?)")]
    NonFiniteState { chain: usize, step: usize },
    #[error("field evaluation failed in chain {chain} at step {step}: {source}")]
    Field {
        chain: usize,
        step: usize,
        source: FieldError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Riemannian-uniform point on the curve.
    OnManifoldUniform,
    /// Centred isotropic Gaussian.
    Gaussian { scale: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub step_size: f64,
    pub n_steps: usize,
    pub n_chains: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub sigma: f64,
    pub master_seed: u64,
    pub clip_box: ClipBox,
    pub init: Init,
    /// Noise variance factor: the increment is `√(2·diffusion·dt)·ξ`.
    pub diffusion: f64,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let bad = |m: String| Err(DynamicsError::InvalidConfig(m));
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return bad(format!("step size must be positive, got {}", self.step_size));
        }
        if self.burn_in >= self.n_steps {
            return bad(format!(
                "burn_in ({}) must be below the number of steps ({})",
                self.burn_in, self.n_steps
            ));
        }
        if self.thin == 0 {
            return bad("thin must be at least 1".into());
        }
        if self.n_chains == 0 {
            return bad("need at least one chain".into());
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.diffusion.is_finite() && self.diffusion > 0.0) {
            return bad(format!("diffusion must be positive, got {}", self.diffusion));
        }
        if let Init::Gaussian { scale } = self.init {
            if !(scale.is_finite() && scale > 0.0) {
                return bad(format!("gaussian init scale must be positive, got {scale}"));
            }
        }
        self.clip_box
            .validate()
            .map_err(|e| DynamicsError::InvalidConfig(e.to_string()))
    }

    pub fn samples_per_chain(&self) -> usize {
        (self.n_steps - self.burn_in) / self.thin
    }

    /// `n_chains · (n_steps − burn_in) / thin`.
    pub fn effective_samples(&self) -> usize {
        self.n_chains * self.samples_per_chain()
    }
}

/// `safety · σ^{2−α}`.
pub fn stiffness_dt(sigma: f64, alpha: f64, safety: f64) -> Result<f64, DynamicsError> {
    if !(safety > 0.0 && safety <= 1.0) {
        return Err(DynamicsError::InvalidConfig(format!(
            "safety must lie in (0, 1], got {safety}"
        )));
    }
    if !(sigma.is_finite() && sigma > 0.0 && alpha.is_finite()) {
        return Err(DynamicsError::InvalidConfig(format!(
            "need sigma > 0 and finite alpha, got sigma={sigma}, alpha={alpha}"
        )));
    }
    Ok(safety * sigma.powf(2.0 - alpha))
}

/// Output of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub chain: usize,
    /// Recorded step indices.
    pub steps: Vec<usize>,
    /// Recorded states, `steps.len() × dim`, row-major.
    pub points: Vec<f64>,
    /// Steps after burn-in where clipping moved the state.
    pub clipped_after_burn_in: usize,
}

#[derive(Debug, Clone)]
pub struct SampleSet {
    pub dim: usize,
    pub chains: Vec<ChainOutput>,
    pub config: SamplerConfig,
    pub field_descriptor: String,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.chains.iter().map(|c| c.steps.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.chains.iter().flat_map(move |c| c.points.chunks_exact(self.dim))
    }

    /// `(chain, step, point)` in canonical order.
    pub fn records(&self) -> impl Iterator<Item = (usize, usize, &[f64])> + '_ {
        self.chains.iter().flat_map(move |c| {
            c.steps
                .iter()
                .zip(c.points.chunks_exact(self.dim))
                .map(move |(s, p)| (c.chain, *s, p))
        })
    }

    /// Clipped steps after burn-in over all post-burn-in steps.
    pub fn clipped_fraction(&self) -> f64 {
        let clipped: usize = self.chains.iter().map(|c| c.clipped_after_burn_in).sum();
        let total = self.config.n_chains * (self.config.n_steps - self.config.burn_in);
        clipped as f64 / total as f64
    }
}

fn initial_state(
    init: Init,
    chart: Option<&ManifoldChart>,
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Point, DynamicsError> {
    match init {
        Init::Gaussian { scale } => Ok((0..dim)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect()),
        Init::OnManifoldUniform => {
            let chart = chart.ok_or_else(|| {
                DynamicsError::InvalidConfig("on-manifold initialisation needs a chart".into())
            })?;
            // rejection against the largest speed
            let top = (0..256)
                .map(|k| chart.volume_element(TAU * k as f64 / 256.0))
                .fold(0.0f64, f64::max)
                * 1.01;
            loop {
                let u = rng.gen_range(0.0..TAU);
                if rng.gen::<f64>() * top <= chart.volume_element(u) {
                    return Ok(chart.point(u));
                }
            }
        }
    }
}

/// Runs a single chain; `run_langevin` is this over all chain indices.
pub fn run_chain(
    field: &ScoreField,
    cfg: &SamplerConfig,
    chart: Option<&ManifoldChart>,
    chain: usize,
) -> Result<ChainOutput, DynamicsError> {
    let dim = field.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.master_seed);
    rng.set_stream(chain as u64);
    let mut x = initial_state(cfg.init, chart, dim, &mut rng)?;
    cfg.clip_box.clamp(&mut x);
    let dt = cfg.step_size;
    let noise = (2.0 * cfg.diffusion * dt).sqrt();
    let per_chain = cfg.samples_per_chain();
    let mut steps = Vec::with_capacity(per_chain);
    let mut points = Vec::with_capacity(per_chain * dim);
    let mut clipped = 0;
    for k in 1..=cfg.n_steps {
        let drift = field.eval(&x, cfg.sigma).map_err(|source| DynamicsError::Field {
            chain,
            step: k,
            source,
        })?;
        for i in 0..dim {
            let xi: f64 = rng.sample(StandardNormal);
            x[i] += dt * drift[i] + noise * xi;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFiniteState { chain, step: k });
        }
        let moved = cfg.clip_box.clamp(&mut x);
        if k > cfg.burn_in {
            if moved {
                clipped += 1;
            }
            if (k - cfg.burn_in).is_multiple_of(cfg.thin) {
                steps.push(k);
                points.extend_from_slice(&x);
            }
        }
    }
    Ok(ChainOutput {
        chain,
        steps,
        points,
        clipped_after_burn_in: clipped,
    })
}

/// Worker budget from the environment, defaulting to the available cores.
pub fn worker_budget() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs every chain in parallel and concatenates the results by chain index.
pub fn run_langevin(
    field: &ScoreField,
    cfg: &SamplerConfig,
    chart: Option<&ManifoldChart>,
) -> Result<SampleSet, DynamicsError> {
    cfg.validate()?;
    if cfg.clip_box.dim() != field.dim() {
        return Err(DynamicsError::InvalidConfig(format!(
            "clip box has dimension {}, field has {}",
            cfg.clip_box.dim(),
            field.dim()
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_budget())
        .build()
        .map_err(|e| DynamicsError::InvalidConfig(e.to_string()))?;
    let chains: Result<Vec<_>, _> = pool.install(|| {
        (0..cfg.n_chains)
            .into_par_iter()
            .map(|c| run_chain(field, cfg, chart, c))
            .collect()
    });
    Ok(SampleSet {
        dim: field.dim(),
        chains: chains?,
        config: cfg.clone(),
        field_descriptor: field.descriptor().to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score_fields::ErrorClass;

    fn ou_field() -> ScoreField {
        ScoreField::new(2, "ou", true, ErrorClass::EXACT, |x: &[f64], _: f64| {
            Ok(x.iter().map(|v| -v).collect())
        })
    }

    fn config(steps: usize, chains: usize) -> SamplerConfig {
        SamplerConfig {
            step_size: 0.01,
            n_steps: steps,
            n_chains: chains,
            burn_in: steps / 2,
            thin: 10,
            sigma: 0.1,
            master_seed: 7,
            clip_box: ClipBox::cube(2, 10.0),
            init: Init::Gaussian { scale: 1.0 },
            diffusion: 1.0,
        }
    }

    #[test]
    fn step_size_rule() {
        assert!((stiffness_dt(0.01, 2.0, 0.1).unwrap() - 0.1).abs() < 1e-15);
        assert!((stiffness_dt(0.01, 0.0, 0.1).unwrap() - 1e-5).abs() < 1e-18);
        assert!((stiffness_dt(0.1, 1.0, 0.5).unwrap() - 0.05).abs() < 1e-15);
        assert!(stiffness_dt(0.1, 1.0, 0.0).is_err());
        assert!(stiffness_dt(0.1, 1.0, 1.5).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = config(100, 1);
        assert!(c.validate().is_ok());
        assert_eq!(c.effective_samples(), 5);
        c.burn_in = 100;
        assert!(c.validate().is_err());
        let mut c = config(100, 1);
        c.thin = 0;
        assert!(c.validate().is_err());
        let mut c = config(100, 1);
        c.step_size = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn sample_counts_and_box() {
        let cfg = config(1000, 3);
        let s = run_langevin(&ou_field(), &cfg, None).unwrap();
        assert_eq!(s.len(), cfg.effective_samples());
        assert!(s.points().all(|p| cfg.clip_box.contains(p)));
        let steps: Vec<usize> = s.chains[0].steps.clone();
        assert_eq!(steps[0], 510);
        assert_eq!(*steps.last().unwrap(), 1000);
    }

    #[test]
    fn chain_order_does_not_matter() {
        let cfg = config(2000, 4);
        let field = ou_field();
        let all = run_langevin(&field, &cfg, None).unwrap();
        let mut reversed: Vec<ChainOutput> =
            (0..4).rev().map(|c| run_chain(&field, &cfg, None, c).unwrap()).collect();
        reversed.sort_by_key(|c| c.chain);
        assert_eq!(all.chains, reversed);
        let again = run_langevin(&field, &cfg, None).unwrap();
        assert_eq!(all.chains, again.chains);
        assert_ne!(all.chains[0].points, all.chains[1].points);
    }

    #[test]
    fn ou_variance_matches_discrete_closed_form() {
        // Euler for dX = −X dt + √2 dW is an AR(1) with stationary variance 1/(1 − dt/2)
        let cfg = SamplerConfig {
            n_steps: 200_000,
            burn_in: 1_000,
            thin: 1,
            n_chains: 4,
            ..config(10, 1)
        };
        let s = run_langevin(&ou_field(), &cfg, None).unwrap();
        let n = s.len() as f64;
        let var: f64 = s.points().map(|p| p[0] * p[0]).sum::<f64>() / n;
        let target = 1.0 / (1.0 - cfg.step_size / 2.0);
        // integrated autocorrelation time of X² is about 1/(2·dt) steps
        let se = (2.0 * target * target / (n * cfg.step_size)).sqrt();
        assert!((var - target).abs() < 4.0 * se, "var {var} target {target} se {se}");
    }

    #[test]
    fn non_finite_state_is_reported() {
        let blow = ScoreField::new(1, "blow", true, ErrorClass::EXACT, |_: &[f64], _: f64| {
            Ok(Point::from_slice(&[f64::INFINITY]))
        });
        let cfg = SamplerConfig {
            clip_box: ClipBox::cube(1, 10.0),
            ..config(10, 1)
        };
        assert_eq!(
            run_langevin(&blow, &cfg, None).unwrap_err(),
            DynamicsError::NonFiniteState { chain: 0, step: 1 }
        );
    }

    #[test]
    fn on_manifold_init_needs_chart() {
        let cfg = SamplerConfig {
            init: Init::OnManifoldUniform,
            ..config(10, 1)
        };
        assert!(run_langevin(&ou_field(), &cfg, None).is_err());
        let chart = ManifoldChart::ellipse(1.0, 2.0).unwrap();
        assert!(run_langevin(&ou_field(), &cfg, Some(&chart)).is_ok());
    }
}
