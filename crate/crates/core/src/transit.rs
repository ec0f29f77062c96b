//! Transit map across the fast strip `x2 in [eta, L2 - eta]`.
//!
//! With `x2` as the independent variable the map integrates `dx1/dx2 =
//! v1/v2` (and `dt/dx2 = 1/v2` for the transit time). For the quadratic
//! model `v1 = x1^2` and transit time `t2 ~ 2/eta` the map has the closed
//! form `x1' = eta x1 / (eta - 2 x1)`, taking `[-eta, eta/3]` onto
//! `[-eta/3, eta]` with slope `eta^2/(eta - 2 x1)^2 <= 9`.
//!
//! For the stock profile `(L/pi)^2 sin^2(pi x/L)` the full map is exactly
//! `cot(pi x1'/L) = cot(pi x1/L) - (pi/L) t2` (the cotangent is an
//! antiderivative of `1/P`), which serves as an independent oracle for the
//! integrator.

use crate::field::{AxisProfile, FieldSpec};
use crate::geometry::CoverPoint;
use crate::integrate::{integrate_adaptive, IntegrateError, IntegratorOptions, StepControl};
use serde::Serialize;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransitError {
    #[error("x1 = {x1} outside the closed-form domain [-eta, eta/3] for eta = {eta}")]
    OutOfDomain { x1: f64, eta: f64 },
    #[error("v2 = {v2} not positive on the strip at (x1, x2) = ({x1}, {x2})")]
    VelocityNotPositive { x1: f64, x2: f64, v2: f64 },
    #[error("integration failed: {0}")]
    Integration(#[from] IntegrateError),
}

/// Result of one numeric strip transit.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TransitResult {
    pub x1_in: f64,
    pub x1_out: f64,
    /// Time spent crossing the strip.
    pub t2: f64,
    /// True if `|x1|` exceeded `eta` at any point of the transit.
    pub escaped: bool,
}

/// Closed-form transit map `x1' = eta x1 / (eta - 2 x1)` on `[-eta, eta/3]`.
pub fn transit_closed_form(x1: f64, eta: f64) -> Result<f64, TransitError> {
    if !(-eta..=eta / 3.0 + 1e-15).contains(&x1) {
        return Err(TransitError::OutOfDomain { x1, eta });
    }
    Ok(eta * x1 / (eta - 2.0 * x1))
}

/// Derivative of the closed-form map, `eta^2 / (eta - 2 x1)^2`; equals 9 at
/// the right endpoint `x1 = eta/3` and is bounded by 9 on the domain.
pub fn transit_closed_form_slope(x1: f64, eta: f64) -> f64 {
    let d = eta - 2.0 * x1;
    eta * eta / (d * d)
}

/// Inverse of the closed-form map: `x1 = eta y / (eta + 2 y)` on
/// `[-eta/3, eta]`.
pub fn transit_closed_form_inverse(y: f64, eta: f64) -> f64 {
    eta * y / (eta + 2.0 * y)
}

/// Strip transit time for the stock profile:
/// `t2 = (2 pi / L2) cot(pi eta / L2)`.
pub fn transit_time_closed_form(eta: f64, l2: f64) -> f64 {
    assert!(eta > 0.0 && eta < l2 / 2.0, "eta must lie in (0, L2/2)");
    let a = PI * eta / l2;
    2.0 * PI / l2 * (a.cos() / a.sin())
}

/// Exact transit output for the pure product field (`mu = delta = 0`, stock
/// profiles): solves `cot(pi x1'/L) = cot(pi x1/L) - (pi/L) t2` on the branch
/// `|pi x1'/L| < pi/2`.
pub fn transit_exact_pure(x1: f64, eta: f64, l: f64) -> f64 {
    let a = PI * x1 / l;
    let b = PI * eta / l;
    // cot(pi x1'/L) = cot(pi x1/L) - (L/pi) t2, with (L/pi) t2 = 2 cot(b).
    let c = a.cos() / a.sin() - 2.0 * b.cos() / b.sin();
    // atan(1/c) inverts cot on (-pi/2, pi/2), the branch containing the
    // output for inputs inside the strip window.
    l / PI * (1.0 / c).atan()
}

/// Numeric strip transit: integrate `dx1/dx2 = v1/v2` from `x2 = eta` to
/// `x2 = L2 - eta` starting at `x1_in`.
pub fn transit_numeric(
    f: &FieldSpec,
    x1_in: f64,
    eta: f64,
    tol: f64,
) -> Result<TransitResult, TransitError> {
    let geom = f.geometry().expect("torus field");
    let l2 = geom.l2;
    assert!(eta > 0.0 && eta < l2 / 2.0, "eta must lie in (0, L2/2)");
    // Positivity precondition, sampled along the strip at the launch column.
    for k in 0..=64 {
        let x2 = eta + (l2 - 2.0 * eta) * k as f64 / 64.0;
        let v = f.velocity(CoverPoint::new(x1_in, x2));
        if v[1] <= 0.0 {
            return Err(TransitError::VelocityNotPositive {
                x1: x1_in,
                x2,
                v2: v[1],
            });
        }
    }
    let span = l2 - 2.0 * eta;
    let mut escaped = false;
    let cap = 2.0 * eta;
    let rhs = |s: f64, y: &[f64; 2]| {
        let v = f.velocity(CoverPoint::new(y[0], eta + s));
        [v[0] / v[1], 1.0 / v[1]]
    };
    let mut last = [x1_in, 0.0];
    let res = integrate_adaptive(
        rhs,
        [x1_in, 0.0],
        span,
        tol,
        tol,
        &IntegratorOptions::default(),
        |step| {
            let y = step.end_state();
            last = y;
            if y[0].abs() > eta {
                escaped = true;
            }
            if y[0].abs() >= cap {
                return StepControl::Stop;
            }
            StepControl::Continue
        },
    );
    let (x1_out, t2) = match res {
        Ok((y, t_reached)) => {
            if t_reached < span {
                // Stopped at the escape cap.
                (last[0], last[1])
            } else {
                (y[0], y[1])
            }
        }
        Err(e) => {
            if escaped {
                (last[0], last[1])
            } else {
                return Err(e.into());
            }
        }
    };
    if x1_out.abs() > eta {
        escaped = true;
    }
    Ok(TransitResult {
        x1_in,
        x1_out,
        t2,
        escaped,
    })
}

/// Perturbation cases for the transit error scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "case")]
pub enum TransitCase {
    /// `mu = delta = 0` with a cubic `alpha sin^3` deformation of `v2`.
    Base { alpha: f64 },
    /// Unfolding of the `x1` ghost.
    Mu1 { mu1: f64 },
    /// Unfolding of the `x2` circle, shifting the transit time.
    Mu2 { mu2: f64 },
    /// Symmetric coupling of size `delta`.
    Coupling { delta: f64 },
}

impl TransitCase {
    pub fn label(&self) -> String {
        match self {
            TransitCase::Base { alpha } => format!("base(alpha={alpha})"),
            TransitCase::Mu1 { mu1 } => format!("mu1={mu1}"),
            TransitCase::Mu2 { mu2 } => format!("mu2={mu2}"),
            TransitCase::Coupling { delta } => format!("delta={delta}"),
        }
    }

    /// Product/coupled field realizing the case on the square torus.
    pub fn field(&self) -> FieldSpec {
        let geom = crate::geometry::TorusGeometry::square_2pi();
        let l = geom.l2;
        match *self {
            TransitCase::Base { alpha } => FieldSpec::product_snic(
                geom,
                0.0,
                0.0,
                AxisProfile::sin_sq(l),
                AxisProfile::sin_sq_deformed(l, alpha),
            ),
            TransitCase::Mu1 { mu1 } => FieldSpec::uncoupled_snic(geom, mu1, 0.0),
            TransitCase::Mu2 { mu2 } => FieldSpec::uncoupled_snic(geom, 0.0, mu2),
            TransitCase::Coupling { delta } => FieldSpec::coupled_snic(geom, 0.0, 0.0, delta, delta),
        }
    }
}

/// One row of the transit error table.
#[derive(Debug, Clone, Serialize)]
pub struct TransitScanRow {
    pub eta: f64,
    pub x1: f64,
    pub case: String,
    pub err: f64,
    pub t2: f64,
    /// Least-squares exponent of `max_x1 err` against `eta` for this case.
    pub fitted_exponent: f64,
}

/// Error table of `|transit_numeric - transit_closed_form|` over an
/// `eta`-relative grid `x1 = rel * eta`, with one fitted `eta`-exponent per
/// case.
pub fn transit_error_scan(
    etas: &[f64],
    rel_grid: &[f64],
    cases: &[TransitCase],
    tol: f64,
) -> Vec<TransitScanRow> {
    let mut rows = Vec::new();
    for case in cases {
        let f = case.field();
        let mut per_eta: Vec<(f64, f64)> = Vec::new();
        let mut case_rows = Vec::new();
        for &eta in etas {
            let mut max_err = 0.0f64;
            for &rel in rel_grid {
                let x1 = rel * eta;
                let num = transit_numeric(&f, x1, eta, tol).expect("transit");
                let cf = transit_closed_form(x1, eta).expect("domain");
                let err = (num.x1_out - cf).abs();
                max_err = max_err.max(err);
                case_rows.push(TransitScanRow {
                    eta,
                    x1,
                    case: case.label(),
                    err,
                    t2: num.t2,
                    fitted_exponent: f64::NAN,
                });
            }
            per_eta.push((eta, max_err));
        }
        let expo = log_log_slope(&per_eta);
        for r in &mut case_rows {
            r.fitted_exponent = expo;
        }
        rows.extend(case_rows);
    }
    rows
}

/// Least-squares slope of `ln err` against `ln eta`.
fn log_log_slope(pairs: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = pairs
        .iter()
        .filter(|(_, e)| *e > 0.0)
        .map(|(eta, e)| (eta.ln(), e.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Least-squares coefficient of the model `err = c * x1^2 * ln(1/eta)` for
/// one `eta` slice of base-case rows.
pub fn fit_quadratic_log_coefficient(rows: &[TransitScanRow], eta: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for r in rows.iter().filter(|r| r.eta == eta) {
        let g = r.x1 * r.x1 * (1.0 / eta).ln();
        num += r.err * g;
        den += g * g;
    }
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TorusGeometry;

    const L: f64 = 2.0 * PI;

    #[test]
    fn closed_form_endpoint_values_and_slope() {
        let eta = 0.05;
        assert_eq!(transit_closed_form(0.0, eta).unwrap(), 0.0);
        let right = transit_closed_form(eta / 3.0, eta).unwrap();
        assert!((right - eta).abs() < 1e-15);
        assert!((transit_closed_form_slope(eta / 3.0, eta) - 9.0).abs() < 1e-12);
        // Slope bounded by 9 on the whole domain.
        for k in 0..=60 {
            let x1 = -eta + (eta / 3.0 + eta) * k as f64 / 60.0;
            assert!(transit_closed_form_slope(x1, eta) <= 9.0 + 1e-12);
        }
        // Finite-difference slope agrees at the right endpoint.
        let h = 1e-7 * eta;
        let fd = (transit_closed_form(eta / 3.0, eta).unwrap()
            - transit_closed_form(eta / 3.0 - h, eta).unwrap())
            / h;
        assert!((fd - 9.0).abs() < 1e-3, "fd slope {fd}");
        assert!(transit_closed_form(eta / 2.0, eta).is_err());
        assert!(transit_closed_form(-1.01 * eta, eta).is_err());
    }

    #[test]
    fn closed_form_inverse_is_a_conjugacy() {
        let eta = 0.07;
        for k in 0..=40 {
            let y = -eta / 3.0 + (eta + eta / 3.0) * k as f64 / 40.0;
            let x = transit_closed_form_inverse(y, eta);
            assert!(x >= -eta - 1e-15 && x <= eta / 3.0 + 1e-15);
            let back = transit_closed_form(x, eta).unwrap();
            assert!((back - y).abs() < 1e-12, "y {y}: roundtrip {back}");
        }
    }

    #[test]
    fn transit_time_matches_cotangent_form() {
        let t = transit_time_closed_form(0.1, L);
        assert!((t - 19.983333 / 1.0).abs() < 1e-4, "t2 {t}");
        let exact = (0.05f64.cos() / 0.05f64.sin()) * (2.0 * PI / L);
        assert!((t - exact).abs() < 1e-14);
        // eta -> L/2 gives zero transit time; eta << L gives t2 ~ 2/eta.
        assert!(transit_time_closed_form(L / 2.0 - 1e-12, L).abs() < 1e-10);
        let small = transit_time_closed_form(1e-4, L);
        assert!((small * 1e-4 - 2.0).abs() < 1e-6);
    }

    #[test]
    fn numeric_transit_reproduces_time_and_exact_map() {
        let f = FieldSpec::uncoupled_snic(TorusGeometry::square_2pi(), 0.0, 0.0);
        let eta = 0.1;
        let r = transit_numeric(&f, 0.0, eta, 1e-12).unwrap();
        assert!((r.t2 - transit_time_closed_form(eta, L)).abs() < 1e-6);
        assert!(r.x1_out.abs() < 1e-12, "invariant line moved: {}", r.x1_out);
        assert!(!r.escaped);
        // Full-map oracle from the cotangent antiderivative.
        for k in 0..=20 {
            let x1 = -eta + (eta / 4.0 + eta) * k as f64 / 20.0;
            let num = transit_numeric(&f, x1, eta, 1e-12).unwrap();
            let exact = transit_exact_pure(x1, eta, L);
            assert!(
                (num.x1_out - exact).abs() < 1e-9,
                "x1 {x1}: {} vs {exact}",
                num.x1_out
            );
        }
    }

    #[test]
    fn endpoint_examples_hit_paper_interval() {
        let f = FieldSpec::uncoupled_snic(TorusGeometry::square_2pi(), 0.0, 0.0);
        let eta = 0.05;
        let left = transit_numeric(&f, -eta, eta, 1e-12).unwrap();
        assert!(
            (left.x1_out + eta / 3.0).abs() < 5e-3 * eta,
            "left endpoint {} vs {}",
            left.x1_out,
            -eta / 3.0
        );
        // Exact oracle pins it far tighter than the closed form.
        let exact = transit_exact_pure(-eta, eta, L);
        assert!((left.x1_out - exact).abs() < 1e-10);
        let right = transit_numeric(&f, eta / 3.0, eta, 1e-12).unwrap();
        assert!(
            (right.x1_out - eta).abs() < 5e-3 * eta,
            "right endpoint {}",
            right.x1_out
        );
    }

    #[test]
    fn transit_is_monotone_and_drifts_right() {
        let f = TransitCase::Base { alpha: 1.0 }.field();
        let eta = 0.05;
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=30 {
            let x1 = -eta + (eta / 4.0 + eta) * k as f64 / 30.0;
            let r = transit_numeric(&f, x1, eta, 1e-11).unwrap();
            assert!(r.x1_out > prev, "monotonicity broken at {x1}");
            prev = r.x1_out;
            if x1 >= 0.0 {
                assert!(r.x1_out >= x1 - 1e-12, "no rightward drift at {x1}");
            }
        }
    }

    #[test]
    fn escape_is_flagged_past_the_domain() {
        let f = FieldSpec::uncoupled_snic(TorusGeometry::square_2pi(), 0.0, 0.0);
        let eta = 0.05;
        let r = transit_numeric(&f, 0.42 * eta, eta, 1e-10).unwrap();
        assert!(r.escaped);
        assert!(r.x1_out > eta);
    }

    #[test]
    fn mu1_error_at_origin_scales_like_transit_time() {
        let eta = 0.05;
        let t2 = transit_time_closed_form(eta, L);
        for &mu1 in &[1e-6, 2e-6] {
            let f = FieldSpec::uncoupled_snic(TorusGeometry::square_2pi(), mu1, 0.0);
            let r = transit_numeric(&f, 0.0, eta, 1e-12).unwrap();
            // x1(t) = sqrt(mu1) tan(sqrt(mu1) t) => error at 0 is ~ mu1 t2.
            let slope = r.x1_out / mu1;
            assert!(
                (slope - t2).abs() < 0.05 * t2,
                "mu1 {mu1}: slope {slope} vs t2 {t2}"
            );
        }
    }

    #[test]
    fn mu2_shifts_transit_time_cubically_in_eta() {
        let eta = 0.05f64;
        let mu2 = -1e-6;
        let base = transit_numeric(
            &FieldSpec::uncoupled_snic(TorusGeometry::square_2pi(), 0.0, 0.0),
            0.0,
            eta,
            1e-12,
        )
        .unwrap();
        let shifted = transit_numeric(
            &FieldSpec::uncoupled_snic(TorusGeometry::square_2pi(), 0.0, mu2),
            0.0,
            eta,
            1e-12,
        )
        .unwrap();
        let dt = shifted.t2 - base.t2;
        let predicted = -(2.0 / 3.0) * mu2 / eta.powi(3);
        assert!(
            (dt - predicted).abs() < 0.02 * predicted.abs(),
            "dt {dt} vs {predicted}"
        );
    }

    #[test]
    fn base_case_error_fits_quadratic_log_model() {
        let etas = [0.05, 0.1];
        let rel: Vec<f64> = (0..=10).map(|k| -1.0 + 1.25 * k as f64 / 10.0).collect();
        let rows = transit_error_scan(&etas, &rel, &[TransitCase::Base { alpha: 1.0 }], 1e-12);
        let c1 = fit_quadratic_log_coefficient(&rows, 0.05);
        let c2 = fit_quadratic_log_coefficient(&rows, 0.1);
        let ratio = (c1 / c2).max(c2 / c1);
        assert!(ratio < 2.0, "c(0.05) = {c1}, c(0.1) = {c2}");
        // Quadratic scaling of the max error in eta (log correction keeps the
        // fitted exponent slightly below 2).
        let expo = rows[0].fitted_exponent;
        assert!((1.6..=2.1).contains(&expo), "exponent {expo}");
    }
}
