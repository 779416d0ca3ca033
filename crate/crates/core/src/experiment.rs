//! Experiment runner: configuration in, CSV artifacts out.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    chart_histogram, density_reference, guided_reference, off_manifold_mass, project_samples, tv_distance,
    uniform_reference,
};
use crate::binning::Binning;
use crate::clip_box::ClipBox;
use crate::config::{BaseField, ConfigError, ExperimentConfig, ManifestInfo};
use crate::data_density::DataDensity;
use crate::dynamics::{run_langevin, worker_budget, SamplerConfig};
use crate::manifold::ManifoldChart;
use crate::score_fields::{
    designed_field, exact_field, guide, leading_field, perturb_field, tamper, GuidancePotential, ScoreField,
};
use crate::smoothed_density::SmoothedDensitySetup;
use crate::Error;

pub const SAMPLES_FILE: &str = "samples.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const PER_BIN_FILE: &str = "per_bin.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const PLOT_FILE: &str = "samples.svg";
pub const EXPAND_FILE: &str = "expand.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

pub const METRICS_COLUMNS: [&str; 10] = [
    "tv_to_uniform",
    "tv_to_pdata",
    "tv_to_guided",
    "tv_to_target",
    "off_manifold_mass",
    "n_samples",
    "n_binned",
    "outside_tube",
    "degenerate",
    "boundary_fraction",
];

pub const PER_BIN_COLUMNS: [&str; 8] = ["bin", "left", "right", "empirical", "uniform", "pdata", "guided", "target"];

/// `git describe`-style version, overridable at build time.
pub fn version_string() -> &'static str {
    option_env!("GEOSCORE_DESCRIBE").unwrap_or(concat!("v", env!("CARGO_PKG_VERSION")))
}

/// Everything a resolved configuration builds.
pub struct Components {
    pub config: ExperimentConfig,
    pub chart: Arc<ManifoldChart>,
    pub data: DataDensity,
    pub setup: Arc<SmoothedDensitySetup>,
    pub guidance: GuidancePotential,
    /// Law the field is expected to recover on the chart: the designed target,
    /// otherwise the data density.
    pub target: DataDensity,
}

impl Components {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self, Error> {
        let config = cfg.resolve()?;
        let chart = Arc::new(config.manifold.build()?);
        let data = config.data.build("data")?;
        let setup = Arc::new(
            SmoothedDensitySetup::new((*chart).clone(), data.clone(), config.mode.into(), config.quad_nodes)
                .map_err(|e| Error::numeric("density setup", e))?,
        );
        let score = config.score.as_ref();
        let guidance = match score.and_then(|s| s.guidance.as_ref()) {
            Some(g) => g.build()?,
            None => GuidancePotential::zero(),
        };
        let target = match score.and_then(|s| s.target.as_ref()) {
            Some(t) => t.build("score.target")?,
            None => data.clone(),
        };
        Ok(Components {
            config,
            chart,
            data,
            setup,
            guidance,
            target,
        })
    }

    pub fn clip_box(&self) -> Result<ClipBox, Error> {
        Ok(self.config.sampler()?.clip.build(self.chart.dim())?)
    }

    /// Base field, then perturbation, then `σ^α`, then guidance.
    pub fn field(&self) -> Result<ScoreField, Error> {
        let score = self.config.score()?;
        let mut f = match score.kind {
            BaseField::Exact => exact_field(self.setup.clone()),
            BaseField::Leading => leading_field(self.chart.clone()),
            BaseField::Designed => designed_field(self.chart.clone(), self.target.clone()),
        };
        if let Some(p) = &score.perturb {
            let clip = self.clip_box().or_else(|_| Ok::<_, Error>(ClipBox::cube(self.chart.dim(), 4.0)))?;
            f = perturb_field(&f, p.kind.into(), p.c, p.beta, &clip).map_err(|e| Error::numeric("field", e))?;
        }
        if score.alpha != 0.0 {
            f = tamper(&f, score.alpha);
        }
        if score.guidance.is_some() {
            f = guide(&f, self.guidance);
        }
        Ok(f)
    }

    pub fn sampler_config(&self) -> Result<SamplerConfig, Error> {
        let s = self.config.sampler()?;
        Ok(SamplerConfig {
            step_size: s.dt.expect("resolved"),
            n_steps: s.steps,
            n_chains: s.chains,
            burn_in: s.burn_in.expect("resolved"),
            thin: s.thin,
            sigma: s.sigma,
            master_seed: self.config.seed,
            clip_box: self.clip_box()?,
            init: (&s.init).into(),
            diffusion: 1.0,
        })
    }

    pub fn binning(&self) -> Result<Binning, Error> {
        Ok(self.config.analysis.binning()?)
    }
}

/// One sample row.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub chain: usize,
    pub step: usize,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tv_to_uniform: f64,
    pub tv_to_pdata: f64,
    pub tv_to_guided: f64,
    pub tv_to_target: f64,
    pub off_manifold_mass: f64,
    pub n_samples: usize,
    pub n_binned: usize,
    pub outside_tube: usize,
    pub degenerate: usize,
    /// Recorded samples lying on the clip-box boundary.
    pub boundary_fraction: f64,
}

impl Metrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.tv_to_uniform,
            self.tv_to_pdata,
            self.tv_to_guided,
            self.tv_to_target,
            self.off_manifold_mass,
            self.n_samples,
            self.n_binned,
            self.outside_tube,
            self.degenerate,
            self.boundary_fraction
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", METRICS_COLUMNS.join(","), self.csv_row())
    }

    pub fn from_csv(text: &str) -> Option<Metrics> {
        let mut lines = text.lines();
        if lines.next()? != METRICS_COLUMNS.join(",") {
            return None;
        }
        let v: Vec<&str> = lines.next()?.split(',').collect();
        if v.len() != METRICS_COLUMNS.len() {
            return None;
        }
        let f = |i: usize| v[i].parse::<f64>().ok();
        let n = |i: usize| v[i].parse::<usize>().ok();
        Some(Metrics {
            tv_to_uniform: f(0)?,
            tv_to_pdata: f(1)?,
            tv_to_guided: f(2)?,
            tv_to_target: f(3)?,
            off_manifold_mass: f(4)?,
            n_samples: n(5)?,
            n_binned: n(6)?,
            outside_tube: n(7)?,
            degenerate: n(8)?,
            boundary_fraction: f(9)?,
        })
    }
}

/// Per-bin tables behind the metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct BinTables {
    pub binning: Binning,
    pub empirical: Vec<f64>,
    pub uniform: Vec<f64>,
    pub pdata: Vec<f64>,
    pub guided: Vec<f64>,
    pub target: Vec<f64>,
}

impl BinTables {
    pub fn to_csv(&self) -> String {
        let mut out = PER_BIN_COLUMNS.join(",");
        out.push('\n');
        for i in 0..self.binning.bins {
            let (l, r) = self.binning.edges(i);
            let _ = writeln!(
                out,
                "{i},{l},{r},{},{},{},{},{}",
                self.empirical[i], self.uniform[i], self.pdata[i], self.guided[i], self.target[i]
            );
        }
        out
    }
}

pub fn analyze_points<'a>(
    comp: &Components,
    points: impl IntoIterator<Item = &'a [f64]>,
) -> Result<(Metrics, BinTables), Error> {
    let points: Vec<&[f64]> = points.into_iter().collect();
    if points.is_empty() {
        return Err(Error::numeric("analysis", "no samples"));
    }
    let binning = comp.binning()?;
    let projected = project_samples(&comp.chart, points.iter().copied());
    let us = projected.coordinates();
    let hist = chart_histogram(&us, &binning).map_err(|e| Error::numeric("analysis", e))?;
    let uniform = uniform_reference(&comp.chart, &binning);
    let pdata = density_reference(&comp.data, &binning);
    let guided = guided_reference(&comp.chart, &comp.guidance, &binning);
    let target = density_reference(&comp.target, &binning);
    let tv = |r: &[f64]| tv_distance(&hist.probs, r).map_err(|e| Error::numeric("analysis", e));
    let off = off_manifold_mass(&projected.distances, comp.config.analysis.delta)
        .map_err(|e| Error::numeric("analysis", e))?;
    let boundary = match comp.config.sampler.as_ref() {
        Some(s) => {
            let b = s.clip.build(comp.chart.dim())?;
            let on = points
                .iter()
                .filter(|p| p.iter().zip(b.lo.iter().zip(&b.hi)).any(|(v, (lo, hi))| v == lo || v == hi))
                .count();
            on as f64 / points.len() as f64
        }
        None => 0.0,
    };
    let metrics = Metrics {
        tv_to_uniform: tv(&uniform)?,
        tv_to_pdata: tv(&pdata)?,
        tv_to_guided: tv(&guided)?,
        tv_to_target: tv(&target)?,
        off_manifold_mass: off,
        n_samples: points.len(),
        n_binned: us.len(),
        outside_tube: projected.outside_tube,
        degenerate: projected.degenerate,
        boundary_fraction: boundary,
    };
    let tables = BinTables {
        binning,
        empirical: hist.probs,
        uniform,
        pdata,
        guided,
        target,
    };
    Ok((metrics, tables))
}

pub fn samples_header(dim: usize) -> String {
    let mut h = String::from("chain,step");
    for i in 0..dim {
        let _ = write!(h, ",x{i}");
    }
    h
}

pub fn write_samples<'a>(
    path: &Path,
    dim: usize,
    records: impl Iterator<Item = (usize, usize, &'a [f64])>,
) -> Result<(), Error> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut line = String::new();
    let emit = |w: &mut BufWriter<fs::File>, s: &str| w.write_all(s.as_bytes()).map_err(|e| Error::io(path, e));
    emit(&mut w, &samples_header(dim))?;
    emit(&mut w, "\n")?;
    for (chain, step, x) in records {
        line.clear();
        let _ = write!(line, "{chain},{step}");
        for v in x {
            let _ = write!(line, ",{v}");
        }
        line.push('\n');
        emit(&mut w, &line)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_samples(path: &Path) -> Result<(usize, Vec<SampleRecord>), Error> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, message: String| Error::Input {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(h) => h.map_err(|e| Error::io(path, e))?,
        None => return Err(bad(1, "empty file".into())),
    };
    let dim = header.split(',').count().saturating_sub(2);
    if dim == 0 || header != samples_header(dim) {
        return Err(bad(1, format!("expected header `chain,step,x0,…`, found `{header}`")));
    }
    let mut out = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let n = k + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 2 {
            return Err(bad(n, format!("expected {} fields, found {}", dim + 2, fields.len())));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|e| bad(n, format!("`{s}`: {e}")));
        let x = fields[2..]
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| bad(n, format!("`{s}`: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(SampleRecord {
            chain: int(fields[0])?,
            step: int(fields[1])?,
            x,
        });
    }
    Ok((dim, out))
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_manifest(dir: &Path, comp: &Components, effective: usize) -> Result<(), Error> {
    let mut cfg = comp.config.clone();
    cfg.manifest = Some(ManifestInfo {
        version: version_string().to_string(),
        seed: cfg.seed,
        effective_samples: effective,
    });
    write_text(&dir.join(MANIFEST_FILE), &cfg.to_toml())
}

/// What a finished run reports besides its files.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub metrics: Metrics,
    /// Post-burn-in steps at which clipping moved a chain.
    pub clipped_fraction: f64,
    pub field: String,
}

/// Samples, analyzes and writes every artifact into `dir`.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path) -> Result<RunSummary, Error> {
    let comp = Components::build(cfg)?;
    let field = comp.field()?;
    let sampler = comp.sampler_config()?;
    let set = run_langevin(&field, &sampler, Some(&comp.chart)).map_err(|e| Error::numeric("sampling", e))?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_samples(&dir.join(SAMPLES_FILE), set.dim, set.records())?;
    let (metrics, tables) = analyze_points(&comp, set.points())?;
    write_outputs(dir, &comp, &metrics, &tables, set.points())?;
    write_manifest(dir, &comp, sampler.effective_samples())?;
    Ok(RunSummary {
        dir: dir.to_path_buf(),
        metrics,
        clipped_fraction: set.clipped_fraction(),
        field: field.descriptor().to_string(),
    })
}

fn write_outputs<'a>(
    dir: &Path,
    comp: &Components,
    metrics: &Metrics,
    tables: &BinTables,
    points: impl Iterator<Item = &'a [f64]>,
) -> Result<(), Error> {
    write_text(&dir.join(METRICS_FILE), &metrics.to_csv())?;
    if comp.config.analysis.per_bin {
        write_text(&dir.join(PER_BIN_FILE), &tables.to_csv())?;
    }
    if comp.config.analysis.plot {
        let svg = crate::plot::scatter_svg(&comp.chart, points);
        write_text(&dir.join(PLOT_FILE), &svg)?;
    }
    Ok(())
}

/// Recomputes the metrics of a samples file under `cfg` and writes them to `dir`.
pub fn analyze_file(cfg: &ExperimentConfig, samples: &Path, dir: &Path) -> Result<Metrics, Error> {
    let comp = Components::build(cfg)?;
    let (dim, records) = read_samples(samples)?;
    if dim != comp.chart.dim() {
        return Err(Error::Input {
            path: samples.display().to_string(),
            line: 1,
            message: format!("samples have dimension {dim}, manifold lives in {}", comp.chart.dim()),
        });
    }
    let pts = || records.iter().map(|r| r.x.as_slice());
    let (metrics, tables) = analyze_points(&comp, pts())?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_outputs(dir, &comp, &metrics, &tables, pts())?;
    Ok(metrics)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpandRow {
    pub point: usize,
    pub sigma: f64,
    pub x: Vec<f64>,
    pub d_m: f64,
    pub log_p: f64,
    pub leading_residual: f64,
    pub order1_residual: f64,
}

pub fn expand_header(dim: usize) -> String {
    let mut h = String::from("sigma");
    for i in 0..dim {
        let _ = write!(h, ",x{i}");
    }
    h.push_str(",d_M,log_p,leading_residual,order1_residual");
    h
}

pub fn expand_rows(cfg: &ExperimentConfig, sigmas: Option<&[f64]>) -> Result<Vec<ExpandRow>, Error> {
    let comp = Components::build(cfg)?;
    let section = comp.config.expand()?;
    let sigmas = sigmas.unwrap_or(&section.sigmas);
    let mut rows = Vec::new();
    for (k, x) in section.points.iter().enumerate() {
        let reports = comp
            .setup
            .expansion_residuals(x, sigmas)
            .map_err(|e| Error::numeric("expansion", e))?;
        rows.extend(reports.into_iter().map(|r| ExpandRow {
            point: k,
            sigma: r.sigma,
            x: x.clone(),
            d_m: r.half_sq_dist,
            log_p: r.log_p,
            leading_residual: r.leading_residual,
            order1_residual: r.order1_residual,
        }));
    }
    Ok(rows)
}

pub fn expand_csv(dim: usize, rows: &[ExpandRow]) -> String {
    let mut out = expand_header(dim);
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{}", r.sigma);
        for v in &r.x {
            let _ = write!(out, ",{v}");
        }
        let _ = writeln!(out, ",{},{},{},{}", r.d_m, r.log_p, r.leading_residual, r.order1_residual);
    }
    out
}

/// Runs the expansion sweep and writes `expand.csv` into `dir`.
pub fn run_expand(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<ExpandRow>, Error> {
    let dim = cfg.manifold.build()?.dim();
    let rows = expand_rows(cfg, None)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_text(&dir.join(EXPAND_FILE), &expand_csv(dim, &rows))?;
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Alpha,
    Beta,
    Sigma,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Alpha => "alpha",
            SweepAxis::Beta => "beta",
            SweepAxis::Sigma => "sigma",
        }
    }

    /// Copy of `cfg` with this axis set to `value`.
    pub fn apply(self, cfg: &ExperimentConfig, value: f64) -> Result<ExperimentConfig, ConfigError> {
        let missing = |key, what: &str| ConfigError::Invalid {
            key,
            message: format!("sweeping {} needs {what}", self.name()),
        };
        let mut c = cfg.clone();
        c.manifest = None;
        match self {
            SweepAxis::Alpha => c.score.as_mut().ok_or_else(|| missing("score", "a [score] table"))?.alpha = value,
            SweepAxis::Beta => {
                c.score
                    .as_mut()
                    .and_then(|s| s.perturb.as_mut())
                    .ok_or_else(|| missing("score.perturb", "a [score.perturb] table"))?
                    .beta = value
            }
            SweepAxis::Sigma => {
                if let Some(s) = c.sampler.as_mut() {
                    s.sigma = value;
                }
            }
        }
        Ok(c)
    }
}

/// Outcome of one sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub value: f64,
    pub dir: PathBuf,
    pub outcome: Result<Metrics, String>,
}

pub fn cell_dir_name(axis: SweepAxis, index: usize, value: f64) -> String {
    format!("{:03}_{}_{}", index, axis.name(), value)
}

/// Runs one experiment per value in parallel; failed cells are recorded.
pub fn run_sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[f64], dir: &Path) -> Result<Vec<SweepCell>, Error> {
    if values.is_empty() {
        return Err(ConfigError::Invalid {
            key: "values",
            message: "a sweep needs at least one value".into(),
        }
        .into());
    }
    // configuration problems shared by every cell abort the sweep up front
    axis.apply(cfg, values[0])?;
    cfg.sampler()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_budget())
        .build()
        .map_err(|e| Error::numeric("sweep", e))?;
    let cells: Vec<SweepCell> = pool.install(|| {
        values
            .par_iter()
            .enumerate()
            .map(|(i, &value)| {
                let cell = dir.join(cell_dir_name(axis, i, value));
                let outcome = axis
                    .apply(cfg, value)
                    .map_err(Error::from)
                    .and_then(|c| run_experiment(&c, &cell))
                    .map(|s| s.metrics)
                    .map_err(|e| e.to_string());
                SweepCell {
                    value,
                    dir: cell,
                    outcome,
                }
            })
            .collect()
    });
    write_text(&dir.join(SWEEP_FILE), &sweep_csv(axis, &cells))?;
    Ok(cells)
}

pub fn sweep_header() -> String {
    format!("axis,value,status,{},error", METRICS_COLUMNS.join(","))
}

pub fn sweep_csv(axis: SweepAxis, cells: &[SweepCell]) -> String {
    let mut out = sweep_header();
    out.push('\n');
    let empty = vec![""; METRICS_COLUMNS.len()].join(",");
    for c in cells {
        match &c.outcome {
            Ok(m) => {
                let _ = writeln!(out, "{},{},ok,{},", axis.name(), c.value, m.csv_row());
            }
            Err(e) => {
                let msg = e.replace('"', "'").replace('\n', " ");
                let _ = writeln!(out, "{},{},failed,{empty},\"{msg}\"", axis.name(), c.value);
            }
        }
    }
    out
}

/// Expansion residuals over a σ list, one row per (σ, point).
pub fn run_expand_sweep(cfg: &ExperimentConfig, values: &[f64], dir: &Path) -> Result<Vec<ExpandRow>, Error> {
    if values.is_empty() {
        return Err(ConfigError::Invalid {
            key: "values",
            message: "a sweep needs at least one value".into(),
        }
        .into());
    }
    let dim = cfg.manifold.build()?.dim();
    let rows = expand_rows(cfg, Some(values))?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_text(&dir.join(EXPAND_FILE), &expand_csv(dim, &rows))?;
    Ok(rows)
}

/// A bundled configuration.
#[derive(Debug, Clone, Copy)]
pub struct Preset {
    pub name: &'static str,
    pub summary: &'static str,
    pub text: &'static str,
}

impl Preset {
    pub fn config(&self) -> ExperimentConfig {
        ExperimentConfig::from_toml(self.text).expect("bundled presets parse")
    }
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "ellipse_ts1",
        summary: "ellipse(1,2), von Mises data, exact score tampered with alpha=1",
        text: include_str!("../presets/ellipse_ts1.toml"),
    },
    Preset {
        name: "ellipse_langevin",
        summary: "ellipse(1,2), von Mises data, plain Langevin on the exact score",
        text: include_str!("../presets/ellipse_langevin.toml"),
    },
    Preset {
        name: "ellipse_designed",
        summary: "ellipse(1,2), designed field steering to the uniform-in-angle law",
        text: include_str!("../presets/ellipse_designed.toml"),
    },
    Preset {
        name: "ellipse_gradient_error",
        summary: "ellipse(1,2), exact score plus a gradient error of order 1/sigma, alpha=1.5",
        text: include_str!("../presets/ellipse_gradient_error.toml"),
    },
    Preset {
        name: "ellipse_rotational_error",
        summary: "ellipse(1,2), exact score plus a rotational error of order 1/sigma, alpha=1.5",
        text: include_str!("../presets/ellipse_rotational_error.toml"),
    },
    Preset {
        name: "circle_langevin",
        summary: "unit circle, von Mises data, plain Langevin on the exact score",
        text: include_str!("../presets/circle_langevin.toml"),
    },
    Preset {
        name: "circle_guided",
        summary: "unit circle, tampered exact score guided by v(x)=x1 clipped at 3",
        text: include_str!("../presets/circle_guided.toml"),
    },
    Preset {
        name: "circle_expand",
        summary: "unit circle, uniform data, expansion residuals at five points",
        text: include_str!("../presets/circle_expand.toml"),
    },
];

pub fn preset(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}
