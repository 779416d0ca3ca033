//! Acceptance run: every criterion prints one PASS/FAIL line; the process
//! fails if any criterion does.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;
use std::time::Instant;

use geoscore::config::ExperimentConfig;
use geoscore::data_density::DataDensity;
use geoscore::dynamics::{run_langevin, Init, SamplerConfig};
use geoscore::clip_box::ClipBox;
use geoscore::experiment::{preset, run_expand, run_experiment, Components, Metrics};
use geoscore::manifold::ManifoldChart;
use geoscore::score_fields::{
    designed_field, field_error, numeric_curl, tube_grid, ErrorClass, Perturbation, PerturbKind,
    ScoreField,
};
use geoscore::smoothed_density::{Mode, SmoothedDensitySetup, DEFAULT_QUAD_NODES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn verdict(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn io<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

struct Ctx {
    dir: tempfile::TempDir,
}

impl Ctx {
    fn out(&self, name: &str) -> std::path::PathBuf {
        self.dir.path().join(name)
    }

    /// Runs a preset (unless already run) and reads back its metrics.csv.
    fn preset_metrics(&self, name: &str) -> Result<Metrics, String> {
        let dir = self.out(name);
        if !dir.join("metrics.csv").exists() {
            let cfg = preset(name).ok_or(format!("no preset {name}"))?.config();
            io(run_experiment(&cfg, &dir))?;
        }
        let text = io(fs::read_to_string(dir.join("metrics.csv")))?;
        Metrics::from_csv(&text).ok_or_else(|| format!("{name}: unreadable metrics.csv"))
    }
}

struct ExpandCsv {
    rows: Vec<Vec<f64>>,
    header: Vec<String>,
}

impl ExpandCsv {
    fn read(path: &Path) -> Result<Self, String> {
        let text = io(fs::read_to_string(path))?;
        let mut lines = text.lines();
        let header = lines.next().ok_or("empty expand.csv")?.split(',').map(String::from).collect();
        let rows = lines
            .map(|l| l.split(',').map(|v| v.parse::<f64>().map_err(|e| e.to_string())).collect())
            .collect::<Result<_, _>>()?;
        Ok(ExpandCsv { rows, header })
    }

    fn col(&self, name: &str) -> usize {
        self.header.iter().position(|h| h == name).expect("column present")
    }
}

fn circle_expansion(ctx: &Ctx) -> Result<ExpandCsv, String> {
    let dir = ctx.out("circle_expand");
    if !dir.join("expand.csv").exists() {
        io(run_expand(&preset("circle_expand").unwrap().config(), &dir))?;
    }
    ExpandCsv::read(&dir.join("expand.csv"))
}

fn circle_points() -> Vec<Vec<f64>> {
    preset("circle_expand").unwrap().config().expand.unwrap().points
}

fn c1_leading_term(ctx: &Ctx) -> Check {
    let csv = circle_expansion(ctx)?;
    let (s, x0, x1, lead) = (csv.col("sigma"), csv.col("x0"), csv.col("x1"), csv.col("leading_residual"));
    let rows: Vec<&Vec<f64>> = csv.rows.iter().filter(|r| r[x0] == 1.1 && r[x1] == 0.0).collect();
    let sigmas: Vec<f64> = rows.iter().map(|r| r[s]).collect();
    if sigmas != [0.2, 0.1, 0.05, 0.02, 0.01] {
        return Err(format!("unexpected sigma list {sigmas:?}"));
    }
    let res: Vec<f64> = rows.iter().map(|r| r[lead]).collect();
    let decreasing = res.windows(2).all(|w| w[1] < w[0]);
    let last = res[4];
    verdict(
        decreasing && last <= 1e-2,
        format!("residuals {} (strictly decreasing: {decreasing}); {last:.2e} <= 1e-2 at sigma=0.01", fmt(&res)),
    )
}

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(", ")
}

/// Unit vector orthogonal to the plane of the embedded circle in R³.
fn out_of_plane(chart: &ManifoldChart) -> [f64; 3] {
    let (a, b) = (chart.point(0.0), chart.point(0.5 * std::f64::consts::PI));
    let c = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    let n = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
    [c[0] / n, c[1] / n, c[2] / n]
}

fn c2_order_one(ctx: &Ctx) -> Check {
    let csv = circle_expansion(ctx)?;
    let (s, dm, o1) = (csv.col("sigma"), csv.col("d_M"), csv.col("order1_residual"));
    let at: Vec<&Vec<f64>> = csv.rows.iter().filter(|r| r[s] == 0.01).collect();
    let circle: Vec<f64> = at.iter().map(|r| r[o1]).collect();
    let near = at.len() == 5 && at.iter().all(|r| r[dm] <= 0.05);
    let circle_ok = near && circle.iter().all(|r| *r <= 0.1);

    let chart = io(ManifoldChart::embedded_circle(3))?;
    let w = out_of_plane(&chart);
    let setup = io(SmoothedDensitySetup::new(chart.clone(), DataDensity::uniform(), Mode::Ve, DEFAULT_QUAD_NODES))?;
    let (mut right, mut half) = (Vec::new(), Vec::new());
    for (k, (a, b)) in [(0.05, 0.0), (-0.04, 0.02), (0.0, 0.06), (0.03, -0.05), (-0.06, -0.03)].iter().enumerate() {
        let u = 0.4 + 1.2 * k as f64;
        let n = chart.unit_normal(u);
        let x: Vec<f64> = (0..3).map(|i| chart.point(u)[i] + a * n[i] + b * w[i]).collect();
        right.push(io(setup.order1_residual_with(&x, 0.01, 1.0))?);
        half.push(io(setup.order1_residual_with(&x, 0.01, 0.5))?);
    }
    let embedded_ok = right.iter().all(|r| *r <= 0.1) && half.iter().all(|r| *r >= 1.0);
    verdict(
        circle_ok && embedded_ok,
        format!(
            "circle residuals at sigma=0.01 [{}] <= 0.1 (all d_M <= 0.05: {near}); embedded d=3: coefficient 1 [{}] <= 0.1, coefficient 1/2 [{}] >= 1",
            fmt(&circle),
            fmt(&right),
            fmt(&half)
        ),
    )
}

fn c3_vp_correction(_: &Ctx) -> Check {
    let chart = io(ManifoldChart::circle(1.0))?;
    let ve = io(SmoothedDensitySetup::new(chart.clone(), DataDensity::uniform(), Mode::Ve, DEFAULT_QUAD_NODES))?;
    let vp = io(SmoothedDensitySetup::new(chart.clone(), DataDensity::uniform(), Mode::Vp, DEFAULT_QUAD_NODES))?;
    let sigmas = [0.2, 0.1, 0.05, 0.02];
    let mut ok = true;
    let mut worst_at_002 = 0.0f64;
    for x in circle_points() {
        let p = io(chart.project(&x))?;
        let pairing: f64 = p.foot.iter().zip(&x).map(|(f, xi)| f * (xi - f)).sum();
        let mut gaps = Vec::new();
        for &s in &sigmas {
            gaps.push((io(vp.log_p_sigma(&x, s))? - io(ve.log_p_sigma(&x, s))? + 0.5 * pairing).abs());
        }
        ok &= gaps.windows(2).all(|w| w[1] < w[0]);
        worst_at_002 = worst_at_002.max(gaps[3]);
    }
    ok &= worst_at_002 <= 0.05;
    verdict(ok, format!("worst gap at sigma=0.02 {worst_at_002:.2e} <= 0.05; decreasing over sigma {sigmas:?} at all five points: {ok}"))
}

fn c4_laplace_rate(_: &Ctx) -> Check {
    let setup = io(SmoothedDensitySetup::new(
        io(ManifoldChart::circle(1.0))?,
        DataDensity::uniform(),
        Mode::Ve,
        DEFAULT_QUAD_NODES,
    ))?;
    let mut worst = 0.0f64;
    for x in circle_points() {
        let err = |s: f64| -> Result<f64, String> {
            Ok((io(setup.laplace_log_p(&x, s))? - io(setup.log_p_sigma(&x, s))?).abs())
        };
        let e = [err(0.2)?, err(0.1)?, err(0.05)?];
        worst = worst.max(e[1] / e[0]).max(e[2] / e[1]);
    }
    verdict(worst <= 0.7, format!("largest ratio over halvings 0.2 -> 0.1 -> 0.05 at five points: {worst:.3} <= 0.7"))
}

fn c5_exact_recovery(ctx: &Ctx) -> Check {
    let m = ctx.preset_metrics("ellipse_langevin")?;
    verdict(
        m.n_samples >= 1_000_000 && m.tv_to_pdata <= 0.05 && m.off_manifold_mass <= 0.01,
        format!(
            "{} samples; TV to data law {:.4} <= 0.05; off-manifold mass {:.2e} <= 0.01",
            m.n_samples, m.tv_to_pdata, m.off_manifold_mass
        ),
    )
}

fn c6_designed_recovery(ctx: &Ctx) -> Check {
    let m = ctx.preset_metrics("ellipse_designed")?;
    let comp = io(Components::build(&preset("ellipse_designed").unwrap().config()))?;
    let field = designed_field(comp.chart.clone(), comp.target.clone());
    let grid = tube_grid(&comp.chart, 64, 5, 0.5);
    let mut errors = Vec::new();
    for s in [0.1, 0.05, 0.02, 0.01] {
        errors.push(io(field_error(&field, &comp.setup, &grid, s))?);
    }
    verdict(
        m.tv_to_target <= 0.05 && errors.iter().all(|e| *e >= 0.5),
        format!(
            "TV to designed target {:.4} <= 0.05; field error at sigma 0.1, 0.05, 0.02, 0.01: [{}] >= 0.5",
            m.tv_to_target,
            fmt(&errors)
        ),
    )
}

fn c7_uniform_recovery(ctx: &Ctx) -> Check {
    let ts = ctx.preset_metrics("ellipse_ts1")?;
    let plain = ctx.preset_metrics("ellipse_langevin")?;
    verdict(
        ts.tv_to_uniform <= 0.05 && plain.tv_to_uniform >= 0.15,
        format!(
            "alpha=1: TV to uniform {:.4} <= 0.05; alpha=0: TV to uniform {:.4} >= 0.15",
            ts.tv_to_uniform, plain.tv_to_uniform
        ),
    )
}

fn c8_gradient_error(ctx: &Ctx) -> Check {
    let m = ctx.preset_metrics("ellipse_gradient_error")?;
    verdict(m.tv_to_uniform <= 0.07, format!("TV to uniform {:.4} <= 0.07 ({} of {} samples in the tube)", m.tv_to_uniform, m.n_binned, m.n_samples))
}

fn c9_rotational_error(ctx: &Ctx) -> Check {
    let m = ctx.preset_metrics("ellipse_rotational_error")?;
    let cfg = preset("ellipse_rotational_error").unwrap().config();
    let comp = io(Components::build(&cfg))?;
    let field = io(comp.field())?;
    let score = cfg.score.as_ref().unwrap();
    let p = score.perturb.as_ref().unwrap();
    let sigma = cfg.sampler.as_ref().unwrap().sigma;
    let scale = io(Perturbation::new(PerturbKind::Rotational, &ClipBox::cube(2, 4.0)))?.scale();
    let expected = p.c * sigma.powf(p.beta + score.alpha) * 2.0 / scale;
    let grid = tube_grid(&comp.chart, 32, 3, 0.5);
    let mut lo = f64::INFINITY;
    for x in &grid {
        lo = lo.min(io(numeric_curl(&field, x, sigma, 1e-4 * sigma))?.abs());
    }
    verdict(
        m.tv_to_uniform <= 0.07 && lo >= 0.5 * expected,
        format!(
            "TV to uniform {:.4} <= 0.07; min |curl| over the tube {lo:.4e} (generator gives {expected:.4e})",
            m.tv_to_uniform
        ),
    )
}

fn c10_guided(ctx: &Ctx) -> Check {
    let m = ctx.preset_metrics("circle_guided")?;
    verdict(m.tv_to_guided <= 0.05, format!("TV to exp(-cos u) law {:.4} <= 0.05", m.tv_to_guided))
}

fn c11_ou_calibration(_: &Ctx) -> Check {
    let field = ScoreField::new(2, "ou", true, ErrorClass::EXACT, |x: &[f64], _: f64| {
        Ok(x.iter().map(|v| -v).collect())
    });
    let cfg = SamplerConfig {
        step_size: 0.01,
        n_steps: 135_000,
        n_chains: 8,
        burn_in: 10_000,
        thin: 1,
        sigma: 1.0,
        master_seed: 99,
        clip_box: ClipBox::cube(2, 50.0),
        init: Init::Gaussian { scale: 1.0 },
        diffusion: 1.0,
    };
    let set = io(run_langevin(&field, &cfg, None))?;
    let n = set.len();
    let batches_per_chain = 25;
    let mut ok = n >= 1_000_000;
    let mut parts = Vec::new();
    for i in 0..2 {
        let mut means = Vec::new();
        for c in &set.chains {
            let xs: Vec<f64> = c.points.chunks_exact(2).map(|p| p[i]).collect();
            let len = xs.len() / batches_per_chain;
            for b in xs.chunks_exact(len) {
                means.push(b.iter().map(|v| v * v).sum::<f64>() / len as f64);
            }
        }
        let k = means.len() as f64;
        let var = means.iter().sum::<f64>() / k;
        let spread = means.iter().map(|m| (m - var).powi(2)).sum::<f64>() / (k - 1.0);
        let se = (spread / k).sqrt();
        ok &= (var - 1.0).abs() <= 3.0 * se;
        parts.push(format!("x{i}: {var:.4} ± {se:.4}"));
    }
    verdict(ok, format!("{n} samples; {} (target 1 within 3 SE)", parts.join(", ")))
}

fn c12_score_consistency(_: &Ctx) -> Check {
    let s = io(SmoothedDensitySetup::new(
        io(ManifoldChart::ellipse(1.0, 2.0))?,
        io(DataDensity::von_mises(1.0, 0.0))?,
        Mode::Ve,
        DEFAULT_QUAD_NODES,
    ))?;
    let chart = s.chart().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for k in 0..100 {
        let sigma = if k % 2 == 0 { 0.1 } else { 0.02 };
        let u = rng.gen_range(0.0..TAU);
        let t = rng.gen_range(-0.9..0.9) * chart.tube_radius();
        let x: Vec<f64> = chart.point(u).iter().zip(&chart.unit_normal(u)).map(|(p, n)| p + t * n).collect();
        let score = io(s.score_exact(&x, sigma))?;
        let h = 1e-4 * sigma;
        let (mut err, mut size) = (0.0, 0.0);
        for i in 0..2 {
            let (mut up, mut down) = (x.clone(), x.clone());
            up[i] += h;
            down[i] -= h;
            let fd = (io(s.log_p_sigma(&up, sigma))? - io(s.log_p_sigma(&down, sigma))?) / (2.0 * h);
            err += (fd - score[i]).powi(2);
            size += score[i] * score[i];
        }
        worst = worst.max((err / size).sqrt());
    }
    verdict(worst < 1e-4, format!("worst relative error over 100 tube points at sigma 0.1 and 0.02: {worst:.2e} < 1e-4"))
}

fn c13_determinism(ctx: &Ctx) -> Check {
    let mut checked = Vec::new();
    // full reruns of two presets sampled above
    for name in ["ellipse_gradient_error", "ellipse_rotational_error"] {
        ctx.preset_metrics(name)?;
        let again = ctx.out(&format!("{name}_rerun"));
        io(run_experiment(&preset(name).unwrap().config(), &again))?;
        let a = io(fs::read(ctx.out(name).join("samples.csv")))?;
        let b = io(fs::read(again.join("samples.csv")))?;
        if a != b {
            return Err(format!("{name}: samples.csv differs between runs"));
        }
        checked.push(format!("{name} (full)"));
    }
    // every sampling preset, shortened
    let mut short = 0;
    for p in geoscore::experiment::PRESETS {
        let mut cfg: ExperimentConfig = p.config();
        let Some(s) = cfg.sampler.as_mut() else { continue };
        s.steps = 2000;
        s.burn_in = Some(200);
        let mut files = Vec::new();
        for k in 0..2 {
            let dir = ctx.out(&format!("{}_short_{k}", p.name));
            io(run_experiment(&cfg, &dir))?;
            files.push(io(fs::read(dir.join("samples.csv")))?);
        }
        if files[0] != files[1] {
            return Err(format!("{}: samples.csv differs between runs", p.name));
        }
        short += 1;
    }
    Ok(format!("byte-identical samples.csv for {} and {short} shortened presets", checked.join(", ")))
}

fn main() {
    let ctx = Ctx {
        dir: tempfile::tempdir().expect("temporary directory"),
    };
    let criteria: [(&str, fn(&Ctx) -> Check); 13] = [
        ("expansion leading term", c1_leading_term),
        ("expansion order-one term", c2_order_one),
        ("VP correction", c3_vp_correction),
        ("Laplace error rate", c4_laplace_rate),
        ("recovery with the exact score", c5_exact_recovery),
        ("recovery with a designed field", c6_designed_recovery),
        ("uniform recovery, tampered exact score", c7_uniform_recovery),
        ("uniform recovery, gradient error", c8_gradient_error),
        ("uniform recovery, rotational error", c9_rotational_error),
        ("guided stationary law", c10_guided),
        ("sampler calibration", c11_ou_calibration),
        ("score self-consistency", c12_score_consistency),
        ("determinism", c13_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| f == &id.to_string()) {
            continue;
        }
        let start = Instant::now();
        let outcome = check(&ctx);
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
