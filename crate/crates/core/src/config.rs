//! TOML experiment configuration.
//!
//! Every table rejects unknown keys. `resolve` turns a parsed file into the
//! fully explicit form written to `manifest.toml`; loading that manifest
//! reproduces the run.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binning::Binning;
use crate::clip_box::ClipBox;
use crate::data_density::DataDensity;
use crate::dynamics::{stiffness_dt, Init};
use crate::manifold::{ManifoldChart, DEFAULT_TUBE_FRACTION};
use crate::score_fields::{GuidancePotential, PerturbKind, PotentialKind};
use crate::smoothed_density::{Mode, DEFAULT_QUAD_NODES};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: &'static str, message: String },
}

fn invalid(key: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ManifoldSection {
    Circle {
        radius: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tube_fraction: Option<f64>,
    },
    Ellipse {
        a: f64,
        b: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tube_fraction: Option<f64>,
    },
    EmbeddedCircle {
        dim: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tube_fraction: Option<f64>,
    },
}

impl ManifoldSection {
    pub fn build(&self) -> Result<ManifoldChart, ConfigError> {
        let (chart, fraction) = match *self {
            ManifoldSection::Circle { radius, tube_fraction } => {
                (ManifoldChart::circle(radius), tube_fraction)
            }
            ManifoldSection::Ellipse { a, b, tube_fraction } => (ManifoldChart::ellipse(a, b), tube_fraction),
            ManifoldSection::EmbeddedCircle { dim, tube_fraction } => {
                (ManifoldChart::embedded_circle(dim), tube_fraction)
            }
        };
        let chart = chart.map_err(|e| invalid("manifold", e.to_string()))?;
        let fraction = fraction.unwrap_or(DEFAULT_TUBE_FRACTION);
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(invalid("manifold.tube_fraction", format!("{fraction} is not in (0, 1)")));
        }
        let eps = fraction * chart.reach();
        chart
            .with_tube_radius(eps)
            .map_err(|e| invalid("manifold.tube_fraction", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySection {
    Uniform,
    VonMises { kappa: f64, mu: f64 },
    Table { values: Vec<f64> },
}

impl DensitySection {
    pub fn build(&self, key: &'static str) -> Result<DataDensity, ConfigError> {
        match self {
            DensitySection::Uniform => Ok(DataDensity::uniform()),
            DensitySection::VonMises { kappa, mu } => DataDensity::von_mises(*kappa, *mu),
            DensitySection::Table { values } => DataDensity::table(values.clone()),
        }
        .map_err(|e| invalid(key, e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Ve,
    Vp,
}

impl From<ModeName> for Mode {
    fn from(m: ModeName) -> Mode {
        match m {
            ModeName::Ve => Mode::Ve,
            ModeName::Vp => Mode::Vp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseField {
    Exact,
    Leading,
    Designed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbName {
    Gradient,
    Rotational,
}

impl From<PerturbName> for PerturbKind {
    fn from(k: PerturbName) -> PerturbKind {
        match k {
            PerturbName::Gradient => PerturbKind::Gradient,
            PerturbName::Rotational => PerturbKind::Rotational,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbSection {
    pub kind: PerturbName,
    pub c: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GuidanceSection {
    Zero,
    Constant { value: f64, clip: f64 },
    LinearX1 { clip: f64 },
}

impl GuidanceSection {
    pub fn build(&self) -> Result<GuidancePotential, ConfigError> {
        let (kind, clip) = match *self {
            GuidanceSection::Zero => return Ok(GuidancePotential::zero()),
            GuidanceSection::Constant { value, clip } => (PotentialKind::Constant(value), clip),
            GuidanceSection::LinearX1 { clip } => (PotentialKind::LinearX1, clip),
        };
        if !(clip > 0.0) {
            return Err(invalid("score.guidance.clip", format!("must be positive, got {clip}")));
        }
        Ok(GuidancePotential::new(kind, clip))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreSection {
    pub kind: BaseField,
    #[serde(default)]
    pub alpha: f64,
    /// Target law of a designed field.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<DensitySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturb: Option<PerturbSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guidance: Option<GuidanceSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClipSection {
    Cube(f64),
    Bounds { lo: Vec<f64>, hi: Vec<f64> },
}

impl ClipSection {
    pub fn build(&self, dim: usize) -> Result<ClipBox, ConfigError> {
        let b = match self {
            ClipSection::Cube(h) if *h > 0.0 => ClipBox::cube(dim, *h),
            ClipSection::Cube(h) => return Err(invalid("sampler.clip", format!("half-width must be positive, got {h}"))),
            ClipSection::Bounds { lo, hi } => {
                ClipBox::new(lo.clone(), hi.clone()).map_err(|e| invalid("sampler.clip", e.to_string()))?
            }
        };
        if b.dim() != dim {
            return Err(invalid(
                "sampler.clip",
                format!("box has dimension {}, ambient space has {dim}", b.dim()),
            ));
        }
        Ok(b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSection {
    OnManifold,
    Gaussian { scale: f64 },
}

impl From<&InitSection> for Init {
    fn from(s: &InitSection) -> Init {
        match *s {
            InitSection::OnManifold => Init::OnManifoldUniform,
            InitSection::Gaussian { scale } => Init::Gaussian { scale },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub sigma: f64,
    /// Explicit step size; excludes `safety`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Step size as `safety · σ^{2−α}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub safety: Option<f64>,
    pub steps: usize,
    #[serde(default = "default_chains")]
    pub chains: usize,
    /// Defaults to half the steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[serde(default = "default_thin")]
    pub thin: usize,
    #[serde(default = "default_clip")]
    pub clip: ClipSection,
    #[serde(default = "default_init")]
    pub init: InitSection,
}

fn default_chains() -> usize {
    4
}
fn default_thin() -> usize {
    10
}
fn default_clip() -> ClipSection {
    ClipSection::Cube(4.0)
}
fn default_init() -> InitSection {
    InitSection::OnManifold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default)]
    pub bin_offset: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub plot: bool,
    #[serde(default)]
    pub per_bin: bool,
}

fn default_bins() -> usize {
    64
}
fn default_delta() -> f64 {
    0.1
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            bins: default_bins(),
            bin_offset: 0.0,
            delta: default_delta(),
            plot: false,
            per_bin: false,
        }
    }
}

impl AnalysisSection {
    pub fn binning(&self) -> Result<Binning, ConfigError> {
        Binning::with_offset(self.bins, self.bin_offset).map_err(|e| invalid("analysis.bins", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpandSection {
    pub sigmas: Vec<f64>,
    pub points: Vec<Vec<f64>>,
}

/// Informational block written into manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestInfo {
    pub version: String,
    pub seed: u64,
    pub effective_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_quad")]
    pub quad_nodes: usize,
    #[serde(default = "default_mode")]
    pub mode: ModeName,
    pub manifold: ManifoldSection,
    pub data: DensitySection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<ScoreSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerSection>,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expand: Option<ExpandSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<ManifestInfo>,
}

fn default_quad() -> usize {
    DEFAULT_QUAD_NODES
}
fn default_mode() -> ModeName {
    ModeName::Ve
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn score(&self) -> Result<&ScoreSection, ConfigError> {
        self.score.as_ref().ok_or_else(|| invalid("score", "missing [score] table"))
    }

    pub fn sampler(&self) -> Result<&SamplerSection, ConfigError> {
        self.sampler
            .as_ref()
            .ok_or_else(|| invalid("sampler", "missing [sampler] table"))
    }

    pub fn expand(&self) -> Result<&ExpandSection, ConfigError> {
        self.expand.as_ref().ok_or_else(|| invalid("expand", "missing [expand] table"))
    }

    /// Explicit form: resolved step size and burn-in, no derived defaults left.
    pub fn resolve(&self) -> Result<ExperimentConfig, ConfigError> {
        let chart = self.manifold.build()?;
        self.data.build("data")?;
        if self.seed > i64::MAX as u64 {
            return Err(invalid("seed", format!("{} does not fit a TOML integer", self.seed)));
        }
        if self.quad_nodes < 256 || !self.quad_nodes.is_power_of_two() {
            return Err(invalid("quad_nodes", format!("need a power of two ≥ 256, got {}", self.quad_nodes)));
        }
        self.analysis.binning()?;
        if !(self.analysis.delta > 0.0) {
            return Err(invalid("analysis.delta", format!("must be positive, got {}", self.analysis.delta)));
        }
        let mut out = self.clone();
        if let Some(score) = &self.score {
            if !score.alpha.is_finite() {
                return Err(invalid("score.alpha", "must be finite"));
            }
            match (score.kind, &score.target) {
                (BaseField::Designed, None) => {
                    return Err(invalid("score.target", "a designed field needs a target law"))
                }
                (BaseField::Designed, Some(t)) => {
                    t.build("score.target")?;
                }
                (_, Some(_)) => return Err(invalid("score.target", "only designed fields take a target")),
                _ => {}
            }
            if let Some(p) = &score.perturb {
                if !(p.beta > -2.0) {
                    return Err(invalid("score.perturb.beta", format!("must exceed -2, got {}", p.beta)));
                }
                if !(p.c >= 0.0 && p.c.is_finite()) {
                    return Err(invalid("score.perturb.c", format!("must be non-negative, got {}", p.c)));
                }
            }
            if let Some(g) = &score.guidance {
                g.build()?;
            }
        }
        if let Some(s) = &self.sampler {
            let score = self.score()?;
            if !(s.sigma > 0.0 && s.sigma.is_finite()) {
                return Err(invalid("sampler.sigma", format!("must be positive, got {}", s.sigma)));
            }
            if matches!(self.mode, ModeName::Vp) && s.sigma >= 1.0 {
                return Err(invalid("sampler.sigma", "VP mode needs sigma below 1"));
            }
            let dt = match (s.dt, s.safety) {
                (Some(dt), None) if dt > 0.0 && dt.is_finite() => dt,
                (Some(dt), None) => return Err(invalid("sampler.dt", format!("must be positive, got {dt}"))),
                (None, Some(safety)) => {
                    stiffness_dt(s.sigma, score.alpha, safety).map_err(|e| invalid("sampler.safety", e.to_string()))?
                }
                (None, None) => return Err(invalid("sampler.dt", "give either dt or safety")),
                (Some(_), Some(_)) => return Err(invalid("sampler.dt", "dt and safety are mutually exclusive")),
            };
            let burn_in = s.burn_in.unwrap_or(s.steps / 2);
            if s.steps == 0 || burn_in >= s.steps {
                return Err(invalid("sampler.burn_in", format!("{burn_in} must be below steps ({})", s.steps)));
            }
            if s.thin == 0 {
                return Err(invalid("sampler.thin", "must be at least 1"));
            }
            if s.chains == 0 {
                return Err(invalid("sampler.chains", "must be at least 1"));
            }
            if let InitSection::Gaussian { scale } = s.init {
                if !(scale > 0.0) {
                    return Err(invalid("sampler.init.scale", format!("must be positive, got {scale}")));
                }
            }
            let clip = s.clip.build(chart.dim())?;
            let resolved = out.sampler.as_mut().expect("sampler present");
            resolved.dt = Some(dt);
            resolved.safety = None;
            resolved.burn_in = Some(burn_in);
            resolved.clip = ClipSection::Bounds { lo: clip.lo, hi: clip.hi };
        }
        if let Some(e) = &self.expand {
            if e.sigmas.is_empty() || e.points.is_empty() {
                return Err(invalid("expand", "sigmas and points must be nonempty"));
            }
            if let Some(bad) = e.sigmas.iter().find(|s| !(**s > 0.0)) {
                return Err(invalid("expand.sigmas", format!("{bad} is not positive")));
            }
            if let Some(p) = e.points.iter().find(|p| p.len() != chart.dim()) {
                return Err(invalid(
                    "expand.points",
                    format!("point has {} coordinates, ambient space has {}", p.len(), chart.dim()),
                ));
            }
        }
        out.manifest = None;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
seed = 3
[manifold]
kind = "ellipse"
a = 1.0
b = 2.0
[data]
kind = "von_mises"
kappa = 1.0
mu = 0.0
[score]
kind = "exact"
alpha = 1.0
[sampler]
sigma = 0.01
safety = 0.1
steps = 1000
"#;

    #[test]
    fn parse_and_resolve() {
        let cfg = ExperimentConfig::from_toml(BASIC).unwrap();
        let r = cfg.resolve().unwrap();
        let s = r.sampler.as_ref().unwrap();
        assert!((s.dt.unwrap() - 1e-3).abs() < 1e-18);
        assert_eq!(s.burn_in, Some(500));
        assert_eq!(s.clip, ClipSection::Bounds { lo: vec![-4.0; 2], hi: vec![4.0; 2] });
        let again = ExperimentConfig::from_toml(&r.to_toml()).unwrap();
        assert_eq!(again, r);
        assert_eq!(again.resolve().unwrap(), r);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = BASIC.replace("steps = 1000", "steps = 1000\nstep = 3");
        let err = ExperimentConfig::from_toml(&bad).unwrap_err().to_string();
        assert!(err.contains("step"), "{err}");
        let bad = BASIC.replace("kappa = 1.0", "kappa = 1.0\nsigma = 2");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
        let bad = format!("{BASIC}\n[extra]\nx = 1\n");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn parse_errors_carry_position() {
        let bad = BASIC.replace("steps = 1000", "steps = \"many\"");
        let err = ExperimentConfig::from_toml(&bad).unwrap_err().to_string();
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn semantic_errors() {
        for (from, to, key) in [
            ("safety = 0.1", "safety = 2.0", "sampler.safety"),
            ("safety = 0.1", "dt = 0.1\nsafety = 0.1", "sampler.dt"),
            ("safety = 0.1", "", "sampler.dt"),
            ("steps = 1000", "steps = 1000\nburn_in = 1000", "sampler.burn_in"),
            ("b = 2.0", "b = -2.0", "manifold"),
            ("kappa = 1.0", "kappa = -1.0", "data"),
            ("kind = \"exact\"", "kind = \"designed\"", "score.target"),
        ] {
            let cfg = ExperimentConfig::from_toml(&BASIC.replace(from, to)).unwrap();
            match cfg.resolve() {
                Err(ConfigError::Invalid { key: k, .. }) => assert_eq!(k, key),
                other => panic!("expected error for {key}, got {other:?}"),
            }
        }
    }

    #[test]
    fn seeds_must_fit_toml() {
        let mut cfg = ExperimentConfig::from_toml(BASIC).unwrap();
        cfg.seed = u64::MAX;
        assert!(matches!(cfg.resolve(), Err(ConfigError::Invalid { key: "seed", .. })));
        cfg.seed = i64::MAX as u64;
        assert!(ExperimentConfig::from_toml(&cfg.resolve().unwrap().to_toml()).is_ok());
    }

    #[test]
    fn tables_and_guidance() {
        let text = BASIC
            .replace(
                "kind = \"von_mises\"\nkappa = 1.0\nmu = 0.0",
                "kind = \"table\"\nvalues = [1.0, 2.0, 3.0]",
            )
            .replace(
                "alpha = 1.0",
                "alpha = 1.0\n[score.guidance]\nkind = \"linear_x1\"\nclip = 3.0\n[score.perturb]\nkind = \"rotational\"\nc = 0.5\nbeta = -1.0",
            );
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let r = cfg.resolve().unwrap();
        let score = r.score.unwrap();
        assert_eq!(score.guidance, Some(GuidanceSection::LinearX1 { clip: 3.0 }));
        assert_eq!(score.perturb.unwrap().kind, PerturbName::Rotational);
    }
}
