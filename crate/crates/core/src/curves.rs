//! Bifurcation curves of the reduced box family, in closed form and by
//! pseudo-arclength continuation of the fold system.
//!
//! Closed forms (coupling strengths `delta1, delta2 > 0`, `s = sqrt(delta1
//! delta2)`, branch sign `sigma = +/-1`, parameter `theta`):
//!
//! * saddle-node curve: `x1 = (sigma/2) s e^theta`, `x2 = (sigma/2) s
//!   e^(-theta)`, `mu_j = -(s^2/4) e^(+/-2 theta) - (sigma/2) delta_j s
//!   e^(-/+theta)`;
//! * cusp (on the `sigma = +1` branch): `theta_c = ln(delta1/delta2)/6`;
//! * third and fourth equilibria coexisting with a fold point on the
//!   `sigma = +1` branch: `x1 = -(s/2) e^theta + eps delta1^(3/4)
//!   delta2^(1/4) e^(-theta/2)` (and symmetrically for `x2`), `eps = +1`
//!   a saddle, `eps = -1` a sink;
//! * neutral saddle (`tr = 0`): parameterized by `x1` as `mu1 = -x1^2 +
//!   delta1 x1`, `mu2 = -x1^2 - delta2 x1`, equivalently the conic
//!   `(mu1 - mu2)^2 + (delta1 + delta2)(delta2 mu1 + delta1 mu2) = 0`.
//!
//! The continuation solves the three-equation fold system `v = 0, det Dv = 0`
//! in `(x1, x2, mu1, mu2)` with a tangent-constrained Newton corrector, and
//! recovers the fold tangency (cusp) as the interior maximum of `mu1 + mu2`
//! along the branch.

use crate::field::FieldSpec;
use nalgebra::{Matrix4, Vector4};
use thiserror::Error;

/// A point on a saddle-node curve.
#[derive(Debug, Clone, Copy)]
pub struct SaddleNodePoint {
    pub theta: f64,
    pub sigma: f64,
    pub x1: f64,
    pub x2: f64,
    pub mu1: f64,
    pub mu2: f64,
}

/// Closed-form saddle-node point at angle `theta` on the `sigma` branch.
pub fn sne_point(delta1: f64, delta2: f64, sigma: f64, theta: f64) -> SaddleNodePoint {
    let s = (delta1 * delta2).sqrt();
    let x1 = 0.5 * sigma * s * theta.exp();
    let x2 = 0.5 * sigma * s * (-theta).exp();
    SaddleNodePoint {
        theta,
        sigma,
        x1,
        x2,
        mu1: -0.25 * s * s * (2.0 * theta).exp() - 0.5 * sigma * delta1 * s * (-theta).exp(),
        mu2: -0.25 * s * s * (-2.0 * theta).exp() - 0.5 * sigma * delta2 * s * theta.exp(),
    }
}

/// The cusp of the `sigma = +1` saddle-node branch.
#[derive(Debug, Clone, Copy)]
pub struct CuspPoint {
    pub theta: f64,
    pub x1: f64,
    pub x2: f64,
    pub mu1: f64,
    pub mu2: f64,
}

pub fn cusp(delta1: f64, delta2: f64) -> CuspPoint {
    let theta = (delta1 / delta2).ln() / 6.0;
    CuspPoint {
        theta,
        x1: 0.5 * delta1.powf(2.0 / 3.0) * delta2.powf(1.0 / 3.0),
        x2: 0.5 * delta1.powf(1.0 / 3.0) * delta2.powf(2.0 / 3.0),
        mu1: -0.75 * delta1.powf(4.0 / 3.0) * delta2.powf(2.0 / 3.0),
        mu2: -0.75 * delta1.powf(2.0 / 3.0) * delta2.powf(4.0 / 3.0),
    }
}

/// Coordinates of the equilibrium coexisting with the fold point at angle
/// `theta` on the cusped (`sigma = +1`) branch; `eps = +1` is a saddle,
/// `eps = -1` a sink. At `theta = theta_c` the `eps = +1` point merges with
/// the fold point into the cusp.
pub fn coexisting_equilibrium(delta1: f64, delta2: f64, theta: f64, eps: f64) -> (f64, f64) {
    let s = (delta1 * delta2).sqrt();
    let x1 = -0.5 * s * theta.exp() + eps * delta1.powf(0.75) * delta2.powf(0.25) * (-theta / 2.0).exp();
    let x2 = -0.5 * s * (-theta).exp() + eps * delta1.powf(0.25) * delta2.powf(0.75) * (theta / 2.0).exp();
    (x1, x2)
}

/// Neutral-saddle curve parameterized by the saddle coordinate `x1`
/// (the saddle sits at `(x1, -x1)`).
pub fn neutral_saddle_point(delta1: f64, delta2: f64, x1: f64) -> (f64, f64) {
    (-x1 * x1 + delta1 * x1, -x1 * x1 - delta2 * x1)
}

/// Implicit form of the neutral-saddle conic.
pub fn neutral_saddle_residual(delta1: f64, delta2: f64, mu1: f64, mu2: f64) -> f64 {
    (mu1 - mu2) * (mu1 - mu2) + (delta1 + delta2) * (delta2 * mu1 + delta1 * mu2)
}

/// The 0, 1 or 2 values of `mu2` on the neutral-saddle conic above a given
/// `mu1`, solved as a quadratic with the numerically stable split.
pub fn neutral_saddle_mu2(delta1: f64, delta2: f64, mu1: f64) -> Vec<f64> {
    let b = delta1 * (delta1 + delta2) - 2.0 * mu1;
    let c = mu1 * mu1 + delta2 * (delta1 + delta2) * mu1;
    let disc = b * b - 4.0 * c;
    if disc < 0.0 {
        return Vec::new();
    }
    if disc == 0.0 {
        return vec![-b / 2.0];
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let (r1, r2) = if q != 0.0 { (q, c / q) } else { (0.0, -b) };
    let mut out = vec![r1, r2];
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

/// Three-equation fold system `F(x1, x2, mu1, mu2) = (v1, v2, det Dv) = 0`.
pub trait FoldSystem {
    fn residual(&self, u: [f64; 4]) -> [f64; 3];
    /// 3x4 Jacobian of the residual with respect to `(x1, x2, mu1, mu2)`.
    fn jacobian(&self, u: [f64; 4]) -> [[f64; 4]; 3];
}

/// Analytic fold system for the reduced box family.
#[derive(Debug, Clone, Copy)]
pub struct ReducedBoxFold {
    pub delta1: f64,
    pub delta2: f64,
}

impl FoldSystem for ReducedBoxFold {
    fn residual(&self, u: [f64; 4]) -> [f64; 3] {
        let [x1, x2, mu1, mu2] = u;
        [
            mu1 + x1 * x1 + self.delta1 * x2,
            mu2 + x2 * x2 + self.delta2 * x1,
            4.0 * x1 * x2 - self.delta1 * self.delta2,
        ]
    }

    fn jacobian(&self, u: [f64; 4]) -> [[f64; 4]; 3] {
        let [x1, x2, _, _] = u;
        [
            [2.0 * x1, self.delta1, 1.0, 0.0],
            [self.delta2, 2.0 * x2, 0.0, 1.0],
            [4.0 * x2, 4.0 * x1, 0.0, 0.0],
        ]
    }
}

/// Fold system for an arbitrary two-parameter family of fields, with exact
/// state derivatives of the velocity and central finite differences for the
/// parameter derivatives and the determinant row.
pub struct FamilyFold<F: Fn(f64, f64) -> FieldSpec> {
    pub family: F,
    pub fd_step: f64,
}

impl<F: Fn(f64, f64) -> FieldSpec> FamilyFold<F> {
    pub fn new(family: F) -> Self {
        FamilyFold {
            family,
            fd_step: 1e-6,
        }
    }

    fn det_at(&self, u: [f64; 4]) -> f64 {
        let f = (self.family)(u[2], u[3]);
        let j = f.jacobian(crate::geometry::CoverPoint::new(u[0], u[1]));
        j[0][0] * j[1][1] - j[0][1] * j[1][0]
    }
}

impl<F: Fn(f64, f64) -> FieldSpec> FoldSystem for FamilyFold<F> {
    fn residual(&self, u: [f64; 4]) -> [f64; 3] {
        let f = (self.family)(u[2], u[3]);
        let v = f.velocity(crate::geometry::CoverPoint::new(u[0], u[1]));
        [v[0], v[1], self.det_at(u)]
    }

    fn jacobian(&self, u: [f64; 4]) -> [[f64; 4]; 3] {
        let f = (self.family)(u[2], u[3]);
        let p = crate::geometry::CoverPoint::new(u[0], u[1]);
        let jx = f.jacobian(p);
        let h = self.fd_step;
        let mut rows = [[0.0; 4]; 3];
        rows[0][0] = jx[0][0];
        rows[0][1] = jx[0][1];
        rows[1][0] = jx[1][0];
        rows[1][1] = jx[1][1];
        // Parameter derivatives of the velocity.
        for k in 2..4 {
            let mut up = u;
            let mut um = u;
            up[k] += h;
            um[k] -= h;
            let vp = (self.family)(up[2], up[3]).velocity(p);
            let vm = (self.family)(um[2], um[3]).velocity(p);
            rows[0][k] = (vp[0] - vm[0]) / (2.0 * h);
            rows[1][k] = (vp[1] - vm[1]) / (2.0 * h);
        }
        // Determinant row entirely by central differences.
        for k in 0..4 {
            let mut up = u;
            let mut um = u;
            up[k] += h;
            um[k] -= h;
            rows[2][k] = (self.det_at(up) - self.det_at(um)) / (2.0 * h);
        }
        rows
    }
}

#[derive(Debug, Error)]
pub enum CurveError {
    #[error("tangent system singular at {at:?}")]
    TangentSingular { at: [f64; 4] },
    #[error("corrector failed after {halvings} step halvings at {at:?}")]
    StepFailed { at: [f64; 4], halvings: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct ContinuationOptions {
    /// Initial arclength step.
    pub step: f64,
    /// Upper bound on the arclength step after growth.
    pub max_step: f64,
    /// Stop once `max(|mu1|, |mu2|)` exceeds this.
    pub mu_bound: f64,
    pub max_points: usize,
    pub newton_tol: f64,
    pub max_newton: usize,
}

impl ContinuationOptions {
    /// Defaults scaled to a coupling geometric mean `s = sqrt(delta1 delta2)`:
    /// initial step `1e-3 s`, bound `10 max(delta)`.
    pub fn for_deltas(delta1: f64, delta2: f64) -> Self {
        let s = (delta1 * delta2).sqrt();
        ContinuationOptions {
            step: 1e-3 * s,
            max_step: 5e-3 * s.sqrt().max(s),
            mu_bound: 10.0 * delta1.max(delta2),
            max_points: 200_000,
            newton_tol: 1e-11,
            max_newton: 12,
        }
    }
}

/// A continued fold branch: points are `(x1, x2, mu1, mu2)`.
#[derive(Debug, Clone)]
pub struct FoldBranch {
    pub points: Vec<[f64; 4]>,
}

fn solve4(a: &[[f64; 4]; 4], b: [f64; 4]) -> Option<[f64; 4]> {
    let m = Matrix4::from_fn(|r, c| a[r][c]);
    let rhs = Vector4::new(b[0], b[1], b[2], b[3]);
    let sol = m.lu().solve(&rhs)?;
    let out = [sol[0], sol[1], sol[2], sol[3]];
    out.iter().all(|v| v.is_finite()).then_some(out)
}

fn norm4(v: [f64; 4]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Unit tangent of the fold curve at `u`, oriented along `orient`.
pub fn initial_tangent(
    sys: &impl FoldSystem,
    u: [f64; 4],
    orient: [f64; 4],
) -> Result<[f64; 4], CurveError> {
    let j = sys.jacobian(u);
    let mut best: Option<[f64; 4]> = None;
    // Close the 3x4 system with each coordinate axis in turn; the best
    // conditioned closure is the one whose solution has the smallest norm.
    for k in 0..4 {
        let mut a = [[0.0; 4]; 4];
        a[..3].copy_from_slice(&j);
        a[3][k] = 1.0;
        if let Some(t) = solve4(&a, [0.0, 0.0, 0.0, 1.0]) {
            if best.map_or(true, |b| norm4(t) < norm4(b)) {
                best = Some(t);
            }
        }
    }
    let mut t = best.ok_or(CurveError::TangentSingular { at: u })?;
    let n = norm4(t);
    for v in &mut t {
        *v /= n;
    }
    let d = t.iter().zip(orient.iter()).map(|(a, b)| a * b).sum::<f64>();
    if d < 0.0 {
        for v in &mut t {
            *v = -*v;
        }
    }
    Ok(t)
}

fn next_tangent(sys: &impl FoldSystem, u: [f64; 4], prev: [f64; 4]) -> Option<[f64; 4]> {
    let j = sys.jacobian(u);
    let mut a = [[0.0; 4]; 4];
    a[..3].copy_from_slice(&j);
    a[3] = prev;
    let mut t = solve4(&a, [0.0, 0.0, 0.0, 1.0])?;
    let n = norm4(t);
    for v in &mut t {
        *v /= n;
    }
    Some(t)
}

/// One tangent-constrained Newton correction; returns the corrected point and
/// the number of iterations used.
fn correct(
    sys: &impl FoldSystem,
    base: [f64; 4],
    tau: [f64; 4],
    h: f64,
    opts: &ContinuationOptions,
) -> Option<([f64; 4], usize)> {
    let mut u = [
        base[0] + h * tau[0],
        base[1] + h * tau[1],
        base[2] + h * tau[2],
        base[3] + h * tau[3],
    ];
    for it in 1..=opts.max_newton {
        let r = sys.residual(u);
        let arc = tau
            .iter()
            .zip(u.iter().zip(base.iter()))
            .map(|(t, (ui, bi))| t * (ui - bi))
            .sum::<f64>()
            - h;
        let g = [r[0], r[1], r[2], arc];
        let gn = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !gn.is_finite() {
            return None;
        }
        if gn <= opts.newton_tol {
            return Some((u, it));
        }
        let j = sys.jacobian(u);
        let mut a = [[0.0; 4]; 4];
        a[..3].copy_from_slice(&j);
        a[3] = tau;
        let du = solve4(&a, g)?;
        for (ui, d) in u.iter_mut().zip(du.iter()) {
            *ui -= d;
        }
    }
    None
}

/// Continue a fold branch from `u0 = (x1, x2, mu1, mu2)` in the direction
/// `orient` until `max(|mu1|, |mu2|)` leaves `opts.mu_bound` (or the point
/// budget runs out). The starting point is Newton-polished onto the fold
/// system first.
pub fn continue_fold(
    sys: &impl FoldSystem,
    u0: [f64; 4],
    orient: [f64; 4],
    opts: &ContinuationOptions,
) -> Result<FoldBranch, CurveError> {
    // Polish the seed with a plain Newton step on [F; orient . (u - u0)].
    let mut u = u0;
    for _ in 0..opts.max_newton {
        let r = sys.residual(u);
        if r.iter().fold(0.0f64, |m, v| m.max(v.abs())) <= opts.newton_tol {
            break;
        }
        let j = sys.jacobian(u);
        let mut a = [[0.0; 4]; 4];
        a[..3].copy_from_slice(&j);
        a[3] = orient;
        let arc = orient
            .iter()
            .zip(u.iter().zip(u0.iter()))
            .map(|(t, (ui, bi))| t * (ui - bi))
            .sum::<f64>();
        let du = solve4(&a, [r[0], r[1], r[2], arc])
            .ok_or(CurveError::TangentSingular { at: u })?;
        for (ui, d) in u.iter_mut().zip(du.iter()) {
            *ui -= d;
        }
    }
    let mut tau = initial_tangent(sys, u, orient)?;
    let mut points = vec![u];
    let mut h = opts.step;
    while points.len() < opts.max_points {
        let mut halvings = 0;
        let (next, iters) = loop {
            match correct(sys, u, tau, h, opts) {
                Some(ok) => break ok,
                None => {
                    h /= 2.0;
                    halvings += 1;
                    if halvings > 8 {
                        return Err(CurveError::StepFailed { at: u, halvings });
                    }
                }
            }
        };
        u = next;
        if iters <= 3 {
            h = (h * 1.4).min(opts.max_step);
        } else if iters > 6 {
            h /= 2.0;
        }
        tau = next_tangent(sys, u, tau).ok_or(CurveError::TangentSingular { at: u })?;
        points.push(u);
        if u[2].abs().max(u[3].abs()) > opts.mu_bound {
            break;
        }
    }
    Ok(FoldBranch { points })
}

/// Convenience: continue the reduced box saddle-node branch of sign `sigma`
/// starting from the closed-form point at `theta0`, moving toward
/// increasing `theta`.
pub fn continue_reduced_box_sne(
    delta1: f64,
    delta2: f64,
    sigma: f64,
    theta0: f64,
    opts: &ContinuationOptions,
) -> Result<FoldBranch, CurveError> {
    let sys = ReducedBoxFold { delta1, delta2 };
    let p = sne_point(delta1, delta2, sigma, theta0);
    let q = sne_point(delta1, delta2, sigma, theta0 + 1e-5);
    let orient = [q.x1 - p.x1, q.x2 - p.x2, q.mu1 - p.mu1, q.mu2 - p.mu2];
    continue_fold(&sys, [p.x1, p.x2, p.mu1, p.mu2], orient, opts)
}

/// Locate the fold tangency (cusp) along a branch as the interior maximum of
/// `mu1 + mu2`, refined by a parabola through the maximal point and its
/// neighbors. Returns `(x1, x2, mu1, mu2)`, or `None` if the maximum sits at
/// an endpoint.
pub fn fold_tangency(branch: &FoldBranch) -> Option<[f64; 4]> {
    let pts = &branch.points;
    if pts.len() < 3 {
        return None;
    }
    let g = |u: &[f64; 4]| u[2] + u[3];
    let mut imax = 0;
    for (i, p) in pts.iter().enumerate() {
        if g(p) > g(&pts[imax]) {
            imax = i;
        }
    }
    if imax == 0 || imax + 1 == pts.len() {
        return None;
    }
    // Arclength coordinates of the three bracketing points.
    let d = |a: &[f64; 4], b: &[f64; 4]| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let (pm, p0, pp) = (&pts[imax - 1], &pts[imax], &pts[imax + 1]);
    let sm = -d(pm, p0);
    let sp = d(p0, pp);
    let (gm, g0, gp) = (g(pm), g(p0), g(pp));
    // Quadratic through (sm, gm), (0, g0), (sp, gp): vertex position.
    let denom = sm * sm * (gp - g0) - sp * sp * (gm - g0);
    let num = sm * (gp - g0) - sp * (gm - g0);
    if num.abs() < 1e-300 {
        return Some(*p0);
    }
    let s_star = 0.5 * denom / num;
    // Lagrange quadratic interpolation of each coordinate at s_star.
    let l = |s: f64| {
        [
            (s - 0.0) * (s - sp) / ((sm - 0.0) * (sm - sp)),
            (s - sm) * (s - sp) / ((0.0 - sm) * (0.0 - sp)),
            (s - sm) * (s - 0.0) / ((sp - sm) * (sp - 0.0)),
        ]
    };
    let w = l(s_star);
    let mut out = [0.0; 4];
    for k in 0..4 {
        out[k] = w[0] * pm[k] + w[1] * p0[k] + w[2] * pp[k];
    }
    Some(out)
}
