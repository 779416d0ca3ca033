//! Closed forms shared by the integration tests.

#![allow(dead_code)]

use geoscore::manifold::Point;
use geoscore::score_fields::{ErrorClass, ScoreField};

/// `I₁(z)/I₀(z)` for `z ≥ 0`.
pub fn bessel_ratio(z: f64) -> f64 {
    if z < 20.0 {
        let h = 0.5 * z;
        let (mut t0, mut t1) = (1.0, h);
        let (mut s0, mut s1) = (t0, t1);
        for k in 1..200 {
            let k = k as f64;
            t0 *= h * h / (k * k);
            t1 *= h * h / (k * (k + 1.0));
            s0 += t0;
            s1 += t1;
            if t0 < 1e-17 * s0 {
                break;
            }
        }
        s1 / s0
    } else {
        // large-argument expansions of I₀ and I₁ share the e^z/√(2πz) prefactor
        let series = |mu: f64| {
            let mut term = 1.0;
            let mut sum = 1.0;
            for k in 1..12 {
                let odd = (2 * k - 1) as f64;
                term *= -(mu - odd * odd) / (k as f64 * 8.0 * z);
                sum += term;
            }
            sum
        };
        series(4.0) / series(0.0)
    }
}

/// `log p_σ(x)` for the unit circle with von Mises data (`μ = 0`), VE mode.
pub fn circle_von_mises_log_p(x: &[f64], sigma: f64, kappa: f64) -> f64 {
    let s2 = sigma * sigma;
    let (rx, ry) = (x[0] / s2 + kappa, x[1] / s2);
    let big = rx.hypot(ry);
    let r2 = x[0] * x[0] + x[1] * x[1];
    // log I₀ through the scaled series / asymptotics
    let log_i0 = |z: f64| -> f64 {
        if z < 20.0 {
            let h = 0.5 * z;
            let (mut t, mut s) = (1.0, 1.0);
            for k in 1..200 {
                t *= h * h / (k as f64 * k as f64);
                s += t;
                if t < 1e-17 * s {
                    break;
                }
            }
            s.ln()
        } else {
            let mut term = 1.0;
            let mut sum = 1.0;
            for k in 1..12 {
                let odd = (2 * k - 1) as f64;
                term *= odd * odd / (k as f64 * 8.0 * z);
                sum += term;
            }
            z - 0.5 * (std::f64::consts::TAU * z).ln() + sum.ln()
        }
    };
    -(r2 + 1.0) / (2.0 * s2) + log_i0(big) - log_i0(kappa) - (std::f64::consts::TAU * s2).ln()
}

/// `∇ log p_σ` for the same model.
pub fn circle_von_mises_score(x: &[f64], sigma: f64, kappa: f64) -> Point {
    let s2 = sigma * sigma;
    let (rx, ry) = (x[0] / s2 + kappa, x[1] / s2);
    let big = rx.hypot(ry);
    let a = bessel_ratio(big) / (s2 * big);
    Point::from_slice(&[-x[0] / s2 + a * rx, -x[1] / s2 + a * ry])
}

pub fn closed_form_field(kappa: f64) -> ScoreField {
    ScoreField::new(2, "circle-von-mises-closed-form", true, ErrorClass::EXACT, move |x: &[f64], s: f64| {
        Ok(circle_von_mises_score(x, s, kappa))
    })
}
