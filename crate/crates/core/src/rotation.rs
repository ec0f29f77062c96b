//! Winding measurement, section return maps and regime classification.
//!
//! Sections are straight lines in the normalized coordinates `a = x1 / L1`,
//! `b = x2 / L2`: the section with integer normal `n` consists of the
//! crossings of `n . (a, b) = offset + k`, `k` integer, in the covering
//! plane. The transverse coordinate along the section is `psi = -n2 a +
//! n1 b`; deck translations by an integer vector `(p, q)` shift the section
//! value by `n . (p, q)` and `psi` by `-n2 p + n1 q`.
//!
//! A periodic orbit of homology type `(p, q)` is a fixed point of the
//! `j`-th return map (`j = n . (p, q)`) up to the `psi` shift `-n2 p + n1 q`,
//! and its return-map derivative equals `exp` of the divergence integrated
//! over one period.

use crate::equilibria::{find_equilibria, Equilibrium, EquilibriumKind, FindOptions, Rect};
use crate::field::FieldSpec;
use crate::geometry::{CoverPoint, TorusGeometry};
use crate::integrate::{
    integrate_adaptive, integrate_to_section, IntegrateError, IntegratorOptions, PlaneSection,
    SectionHit, StepControl,
};
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

/// A section in normalized torus coordinates with integer normal `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SectionSpec {
    pub n: [i64; 2],
    pub offset: f64,
}

impl SectionSpec {
    /// Crossings of `x1 = const` lines (normal `(1, 0)`).
    pub fn vertical(offset: f64) -> Self {
        SectionSpec { n: [1, 0], offset }
    }

    /// Crossings of `x2 = const` lines (normal `(0, 1)`).
    pub fn horizontal(offset: f64) -> Self {
        SectionSpec { n: [0, 1], offset }
    }

    /// Crossings of `x1/L1 + x2/L2 = const` lines (normal `(1, 1)`).
    pub fn diagonal(offset: f64) -> Self {
        SectionSpec { n: [1, 1], offset }
    }

    /// Section value `n . (a, b) - offset` in the cover.
    pub fn s_value(&self, geom: TorusGeometry, p: CoverPoint) -> f64 {
        self.n[0] as f64 * p.x1 / geom.l1 + self.n[1] as f64 * p.x2 / geom.l2 - self.offset
    }

    /// Transverse coordinate `psi = -n2 a + n1 b` in the cover.
    pub fn psi(&self, geom: TorusGeometry, p: CoverPoint) -> f64 {
        -self.n[1] as f64 * p.x1 / geom.l1 + self.n[0] as f64 * p.x2 / geom.l2
    }

    /// Period of `psi` under deck translations that preserve a section line:
    /// 1 for the axis sections, 2 for the diagonal.
    pub fn psi_period(&self) -> f64 {
        let n2 = self.n[0] * self.n[0] + self.n[1] * self.n[1];
        n2 as f64 / gcd(self.n[0], self.n[1]) as f64
    }

    /// `psi` shift induced by the deck translation `(p, q)`.
    pub fn psi_shift(&self, p: i64, q: i64) -> f64 {
        (-self.n[1] * p + self.n[0] * q) as f64
    }

    /// Number of section crossings per deck translation `(p, q)`.
    pub fn crossings(&self, p: i64, q: i64) -> i64 {
        self.n[0] * p + self.n[1] * q
    }

    /// Cover point with given integer section level and transverse value.
    pub fn point_at(&self, geom: TorusGeometry, level: f64, psi: f64) -> CoverPoint {
        let (n1, n2) = (self.n[0] as f64, self.n[1] as f64);
        let n2n = n1 * n1 + n2 * n2;
        let s = level + self.offset;
        let a = (n1 * s - n2 * psi) / n2n;
        let b = (n2 * s + n1 * psi) / n2n;
        CoverPoint::new(a * geom.l1, b * geom.l2)
    }

    /// Section-normal speed `d/dt [n . (a, b)]` for a velocity `v`.
    pub fn normal_speed(&self, geom: TorusGeometry, v: [f64; 2]) -> f64 {
        self.n[0] as f64 * v[0] / geom.l1 + self.n[1] as f64 * v[1] / geom.l2
    }

    fn plane(&self, geom: TorusGeometry, target: f64) -> PlaneSection {
        PlaneSection {
            a: [self.n[0] as f64 / geom.l1, self.n[1] as f64 / geom.l2],
            c: target + self.offset,
        }
    }
}

pub(crate) fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let r = a % b;
        a = b;
        b = r;
    }
    a.max(1)
}

/// Canonical sign for a homology type: `p > 0`, or `p == 0` and `q > 0`,
/// reduced to coprime form.
pub fn canonical_type(p: i64, q: i64) -> (i64, i64) {
    if p == 0 && q == 0 {
        return (0, 0);
    }
    let g = gcd(p, q);
    let (mut p, mut q) = (p / g, q / g);
    if p < 0 || (p == 0 && q < 0) {
        p = -p;
        q = -q;
    }
    (p, q)
}

/// Smallest section-normal speed over a sample grid; positive means the
/// section is transverse to the flow everywhere sampled.
pub fn min_normal_speed(f: &FieldSpec, spec: SectionSpec, samples: usize) -> f64 {
    let geom = f.geometry().expect("torus field");
    let mut min = f64::INFINITY;
    for i in 0..samples {
        for k in 0..samples {
            let p = CoverPoint::new(
                geom.l1 * (i as f64 + 0.5) / samples as f64,
                geom.l2 * (k as f64 + 0.5) / samples as f64,
            );
            min = min.min(spec.normal_speed(geom, f.velocity(p)));
        }
    }
    min
}

/// Check for a global cross-section: one of the candidate linear forms
/// `v1/L1 + v2/L2`, `v1`, `v2` is one-signed over the torus, sampled on a
/// grid with a first-order Lipschitz safety margin. The grid is refined
/// while the evidence is inconclusive; a form that takes both signs at
/// sample points is ruled out exactly. Conservative: still-inconclusive
/// margins report `false`.
pub fn has_global_cross_section(f: &FieldSpec) -> bool {
    let Some(geom) = f.geometry() else {
        return false;
    };
    let forms = [[1.0 / geom.l1, 1.0 / geom.l2], [1.0, 0.0], [0.0, 1.0]];
    let mut alive = [true; 3];
    for n in [96_usize, 384, 1536] {
        let hx = geom.l1 / n as f64;
        let hy = geom.l2 / n as f64;
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        let mut steep = [0.0f64; 3];
        for i in 0..n {
            for k in 0..n {
                let p = CoverPoint::new((i as f64 + 0.5) * hx, (k as f64 + 0.5) * hy);
                let v = f.velocity(p);
                let j = f.jacobian(p);
                for (c, w) in forms.iter().enumerate() {
                    if !alive[c] {
                        continue;
                    }
                    let g = w[0] * v[0] + w[1] * v[1];
                    lo[c] = lo[c].min(g);
                    hi[c] = hi[c].max(g);
                    let gx = w[0] * j[0][0] + w[1] * j[1][0];
                    let gy = w[0] * j[0][1] + w[1] * j[1][1];
                    steep[c] = steep[c].max(gx.hypot(gy));
                }
            }
        }
        // Worst distance from any torus point to a sample is half a cell
        // diagonal; inflate the sampled gradient bound to absorb curvature.
        let r = 0.5 * hx.hypot(hy);
        for c in 0..3 {
            if !alive[c] {
                continue;
            }
            let margin = 1.5 * steep[c] * r;
            if lo[c] > margin || hi[c] < -margin {
                return true;
            }
            if lo[c] < 0.0 && hi[c] > 0.0 {
                // Sign change witnessed at sample points: no section along
                // this form at any resolution.
                alive[c] = false;
            }
        }
        if alive.iter().all(|a| !a) {
            return false;
        }
    }
    false
}

/// Next upward crossing of the next integer section level above `p`.
///
/// Points returned by a previous crossing sit within roundoff of an integer
/// level, so the target level is re-anchored by rounding before stepping.
pub fn next_crossing(
    f: &FieldSpec,
    spec: SectionSpec,
    p: CoverPoint,
    tol: f64,
    t_budget: f64,
) -> Result<SectionHit, IntegrateError> {
    next_crossing_dir(f, spec, p, 1, tol, t_budget)
}

/// Next crossing of the adjacent integer section level in the given
/// direction: `sign = 1` targets the level above, `sign = -1` the level
/// below (used for flows that wind against the section orientation).
pub fn next_crossing_dir(
    f: &FieldSpec,
    spec: SectionSpec,
    p: CoverPoint,
    sign: i64,
    tol: f64,
    t_budget: f64,
) -> Result<SectionHit, IntegrateError> {
    let geom = f.geometry().expect("torus field");
    let s = spec.s_value(geom, p);
    let sgn = sign as f64;
    // Anchor on the nearest level if we are within crossing roundoff of one.
    let target = if (s - s.round()).abs() < 1e-9 {
        s.round() + sgn
    } else if sign > 0 {
        s.floor() + 1.0
    } else {
        s.ceil() - 1.0
    };
    integrate_to_section(
        f,
        p,
        spec.plane(geom, target),
        sign as i8,
        tol,
        t_budget,
        &IntegratorOptions::default(),
    )
}

/// Result of a cover winding run.
#[derive(Debug, Clone, Copy)]
pub struct Winding {
    /// Normalized cover displacement `((x1(T)-x1(0))/L1, (x2(T)-x2(0))/L2)`.
    pub v: [f64; 2],
    pub t: f64,
    pub end: CoverPoint,
    /// True if the displacement never reached the winding threshold.
    pub bounded: bool,
}

impl Winding {
    pub fn norm(&self) -> f64 {
        self.v[0].hypot(self.v[1])
    }

    /// Asymptotic direction estimate (unit vector), `None` for bounded runs.
    pub fn direction(&self) -> Option<[f64; 2]> {
        if self.bounded {
            return None;
        }
        let n = self.norm();
        Some([self.v[0] / n, self.v[1] / n])
    }

    pub fn angle(&self) -> Option<f64> {
        self.direction().map(|d| d[1].atan2(d[0]))
    }
}

/// Integrate the cover orbit from `p0` until the normalized displacement
/// reaches `stop_norm`, the orbit settles onto one of `rest_points`, or
/// `t_max` elapses. A run is `bounded` if it never reached `threshold`.
pub fn winding(
    f: &FieldSpec,
    p0: CoverPoint,
    t_max: f64,
    tol: f64,
    threshold: f64,
    stop_norm: f64,
    rest_points: &[CoverPoint],
) -> Result<Winding, IntegrateError> {
    let geom = f.geometry().expect("torus field");
    let rhs = |_t: f64, y: &[f64; 2]| f.velocity(CoverPoint::new(y[0], y[1]));
    let rest_r = 1e-4 * geom.l1.min(geom.l2);
    let mut end = p0.to_array();
    let mut t_end = 0.0;
    let vnorm = |y: &[f64; 2]| {
        let dv = [(y[0] - p0.x1) / geom.l1, (y[1] - p0.x2) / geom.l2];
        dv[0].hypot(dv[1])
    };
    integrate_adaptive(
        rhs,
        p0.to_array(),
        t_max,
        tol,
        tol,
        &IntegratorOptions::default(),
        |step| {
            let y = step.end_state();
            end = y;
            t_end = step.t_end();
            if vnorm(&y) >= stop_norm {
                return StepControl::Stop;
            }
            let p = geom.project(CoverPoint::from_array(y));
            if rest_points.iter().any(|r| geom.distance(p, *r) < rest_r) {
                return StepControl::Stop;
            }
            StepControl::Continue
        },
    )?;
    let v = [(end[0] - p0.x1) / geom.l1, (end[1] - p0.x2) / geom.l2];
    Ok(Winding {
        v,
        t: t_end,
        end: CoverPoint::from_array(end),
        bounded: v[0].hypot(v[1]) < threshold,
    })
}

/// Asymptotic homology direction of one orbit, with a doubling-time
/// convergence radius.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct HomologyDirection {
    /// Unit direction of the cover displacement; `None` when the orbit
    /// stayed bounded (fewer than 2 revolutions).
    pub direction: Option<[f64; 2]>,
    /// Angle between the half-time and full-time direction estimates in
    /// radians; small values mean the direction has converged.
    pub confidence: f64,
    /// Final normalized displacement.
    pub norm: f64,
    pub t: f64,
}

impl HomologyDirection {
    pub fn angle(&self) -> Option<f64> {
        self.direction.map(|d| d[1].atan2(d[0]))
    }
}

/// Estimate the homology direction from `p0`: the unit vector along the
/// normalized cover displacement `V(T)`. The angular change between the
/// `T/2` and `T` estimates is reported as the convergence radius; orbits
/// with `|V(T)| < 2` report a zero direction.
pub fn homology_direction(
    f: &FieldSpec,
    p0: CoverPoint,
    t_max: f64,
    tol: f64,
) -> Result<HomologyDirection, IntegrateError> {
    const BOUNDED_NORM: f64 = 2.0;
    let half = winding(f, p0, 0.5 * t_max, tol, BOUNDED_NORM, 1e6, &[])?;
    let more = winding(f, half.end, 0.5 * t_max, tol, BOUNDED_NORM, 1e6, &[])?;
    let v = [half.v[0] + more.v[0], half.v[1] + more.v[1]];
    let norm = v[0].hypot(v[1]);
    let t = half.t + more.t;
    if norm < BOUNDED_NORM {
        return Ok(HomologyDirection {
            direction: None,
            confidence: PI,
            norm,
            t,
        });
    }
    let direction = [v[0] / norm, v[1] / norm];
    let confidence = if half.norm() > 0.0 {
        let d = (direction[1].atan2(direction[0]) - half.v[1].atan2(half.v[0])).abs();
        d.min(2.0 * PI - d)
    } else {
        PI
    };
    Ok(HomologyDirection {
        direction: Some(direction),
        confidence,
        norm,
        t,
    })
}

/// Best coprime integer direction `(p, q)` within `q_max` aligned with `v`
/// (positive projection), accepted when the angular error is below
/// `tol_angle`.
pub fn rational_direction(v: [f64; 2], q_max: i64, tol_angle: f64) -> Option<(i64, i64)> {
    let norm = v[0].hypot(v[1]);
    if norm == 0.0 {
        return None;
    }
    let mut best: Option<((i64, i64), f64)> = None;
    for p in -q_max..=q_max {
        for q in -q_max..=q_max {
            if (p, q) == (0, 0) || gcd(p, q) != 1 {
                continue;
            }
            let dot = v[0] * p as f64 + v[1] * q as f64;
            if dot <= 0.0 {
                continue;
            }
            let cross = v[0] * q as f64 - v[1] * p as f64;
            let angle = cross.abs().atan2(dot);
            if best.map_or(true, |(_, a)| angle < a) {
                best = Some(((p, q), angle));
            }
        }
    }
    best.and_then(|(pq, a)| (a < tol_angle).then_some(pq))
}

/// Weighted Birkhoff average of a sequence of increments with the
/// exponential bump weight `w(t) = exp(-1/(t(1-t)))`; converges to the
/// rotation number super-polynomially for Diophantine rotations.
pub fn weighted_birkhoff(diffs: &[f64]) -> f64 {
    let m = diffs.len();
    assert!(m > 0, "empty increment sequence");
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, d) in diffs.iter().enumerate() {
        let t = (k as f64 + 0.5) / m as f64;
        let w = (-1.0 / (t * (1.0 - t))).exp();
        num += w * d;
        den += w;
    }
    num / den
}

/// Rotation number of the section return map: the weighted Birkhoff average
/// of the transverse advance `psi_{k+1} - psi_k` per upward crossing.
pub fn rotation_number(
    f: &FieldSpec,
    spec: SectionSpec,
    p0: CoverPoint,
    n_returns: usize,
    tol: f64,
    t_budget_per_return: f64,
) -> Result<f64, IntegrateError> {
    let geom = f.geometry().expect("torus field");
    let mut p = p0;
    let mut psis = Vec::with_capacity(n_returns + 1);
    for _ in 0..=n_returns {
        let hit = next_crossing(f, spec, p, tol, t_budget_per_return)?;
        psis.push(spec.psi(geom, hit.point));
        p = hit.point;
    }
    let diffs: Vec<f64> = psis.windows(2).map(|w| w[1] - w[0]).collect();
    Ok(weighted_birkhoff(&diffs))
}

/// A verified periodic orbit on the torus.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PeriodicOrbit {
    pub p: i64,
    pub q: i64,
    /// A point of the orbit on the section.
    pub x1: f64,
    pub x2: f64,
    pub period: f64,
    /// Return-map derivative `exp(div integral)` over one period.
    pub multiplier: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct OrbitSearchOptions {
    pub tol: f64,
    pub t_budget_per_return: f64,
    pub max_iters: usize,
    /// Convergence tolerance on the transverse fixed point.
    pub fp_tol: f64,
}

impl Default for OrbitSearchOptions {
    fn default() -> Self {
        OrbitSearchOptions {
            tol: 1e-10,
            t_budget_per_return: 2_000.0,
            max_iters: 60,
            fp_tol: 1e-9,
        }
    }
}

fn section_for_type(p: i64, q: i64) -> Option<SectionSpec> {
    [
        SectionSpec::vertical(0.37),
        SectionSpec::horizontal(0.37),
        SectionSpec::diagonal(0.37),
    ]
    .into_iter()
    .max_by_key(|s| s.crossings(p, q).abs())
    .filter(|s| s.crossings(p, q).abs() >= 1)
}

/// Find the attracting periodic orbit of homology type `(p, q)` by forward
/// iteration of the `j`-th return map from `start`, verifying the cover
/// displacement. Returns `None` when the iteration does not converge (no
/// such orbit, or a non-attracting one).
pub fn find_periodic_orbit(
    f: &FieldSpec,
    p: i64,
    q: i64,
    start: CoverPoint,
    opts: &OrbitSearchOptions,
) -> Option<PeriodicOrbit> {
    let geom = f.geometry()?;
    let spec = section_for_type(p, q)?;
    let j_signed = spec.crossings(p, q);
    let sign = j_signed.signum();
    let j = j_signed.abs();
    let shift = spec.psi_shift(p, q);

    // Land on the section first.
    let mut z = next_crossing_dir(f, spec, start, sign, opts.tol, opts.t_budget_per_return)
        .ok()?
        .point;
    let mut psi_prev = spec.psi(geom, z);
    let mut converged = false;
    for _ in 0..opts.max_iters {
        let mut w = z;
        for _ in 0..j {
            w = next_crossing_dir(f, spec, w, sign, opts.tol, opts.t_budget_per_return)
                .ok()?
                .point;
        }
        let psi = spec.psi(geom, w) - shift;
        let dz = (psi - psi_prev).abs();
        // Re-anchor in the fundamental domain to keep coordinates bounded.
        z = geom.project(w);
        psi_prev = spec.psi(geom, z);
        if dz < opts.fp_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return None;
    }
    // One verification cycle from the converged point: displacement and
    // period.
    let mut w = z;
    let mut t = 0.0;
    for _ in 0..j {
        let hit = next_crossing_dir(f, spec, w, sign, opts.tol, opts.t_budget_per_return).ok()?;
        t += hit.time;
        w = hit.point;
    }
    let dx1 = w.x1 - z.x1;
    let dx2 = w.x2 - z.x2;
    let tol_disp = 1e-6 * (geom.l1 + geom.l2);
    if (dx1 - p as f64 * geom.l1).abs() > tol_disp || (dx2 - q as f64 * geom.l2).abs() > tol_disp {
        return None;
    }
    // Floquet multiplier of the return map: exp of the divergence integral
    // over one period (start and end normal speeds coincide on the closed
    // orbit).
    let rhs3 = |_t: f64, y: &[f64; 3]| {
        let pt = CoverPoint::new(y[0], y[1]);
        let v = f.velocity(pt);
        [v[0], v[1], f.divergence(pt)]
    };
    let (yend, _) = integrate_adaptive(
        rhs3,
        [z.x1, z.x2, 0.0],
        t,
        opts.tol,
        opts.tol,
        &IntegratorOptions::default(),
        |_| StepControl::Continue,
    )
    .ok()?;
    Some(PeriodicOrbit {
        p,
        q,
        x1: z.x1,
        x2: z.x2,
        period: t,
        multiplier: yend[2].exp(),
    })
}

/// Flow regime of a torus field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "regime")]
pub enum Regime {
    /// Equilibria present and every sampled orbit stays bounded in the cover.
    FullyLocked,
    /// Equilibria present but some orbits wind with rational type `(p, q)`.
    Cherry { p: i64, q: i64 },
    /// No equilibria; verified attracting periodic orbit of type `(p, q)`.
    Periodic { p: i64, q: i64 },
    /// No equilibria and no rational lock within the denominator bound.
    Unlocked,
    Unresolved,
}

impl Regime {
    /// Compact integer code for rasters: 0 locked, 1 unlocked, 2 unresolved,
    /// and `100 + 16 p + q` (canonical type) for periodic, `200 + ...` for
    /// winding-with-equilibria.
    pub fn code(&self) -> i64 {
        match *self {
            Regime::FullyLocked => 0,
            Regime::Unlocked => 1,
            Regime::Unresolved => 2,
            Regime::Periodic { p, q } => 100 + 16 * p + q,
            Regime::Cherry { p, q } => 200 + 16 * p + q,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ClassifyOptions {
    pub t_max: f64,
    pub tol: f64,
    /// Displacement below which an orbit counts as bounded.
    pub wind_threshold: f64,
    /// Displacement at which a winding run stops for direction measurement.
    pub stop_norm: f64,
    /// Largest homology denominator tried for rational locking.
    pub q_max: i64,
    pub starts_per_axis: usize,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions {
            t_max: 3_000.0,
            tol: 1e-9,
            wind_threshold: 2.0,
            stop_norm: 40.0,
            q_max: 12,
            starts_per_axis: 4,
        }
    }
}

/// Stratified launch points used by the classifier.
pub fn launch_grid(geom: TorusGeometry, per_axis: usize) -> Vec<CoverPoint> {
    let mut out = Vec::with_capacity(per_axis * per_axis);
    for i in 0..per_axis {
        for k in 0..per_axis {
            out.push(CoverPoint::new(
                geom.l1 * (i as f64 + 0.37) / per_axis as f64,
                geom.l2 * (k as f64 + 0.61) / per_axis as f64,
            ));
        }
    }
    out
}

/// Classify the flow regime of a torus field by equilibrium structure and
/// sampled cover winding, launching from a stratified grid of starts.
pub fn classify_regime(f: &FieldSpec, opts: &ClassifyOptions) -> Regime {
    let Some(geom) = f.geometry() else {
        return Regime::Unresolved;
    };
    classify_regime_from(f, &launch_grid(geom, opts.starts_per_axis), opts)
}

/// Classify the flow regime using the given launch points.
pub fn classify_regime_from(f: &FieldSpec, starts: &[CoverPoint], opts: &ClassifyOptions) -> Regime {
    let Some(geom) = f.geometry() else {
        return Regime::Unresolved;
    };
    if starts.is_empty() {
        return Regime::Unresolved;
    }
    let eqs = find_equilibria(f, Rect::fundamental_domain(geom), &FindOptions::default());
    let sinks: Vec<CoverPoint> = eqs
        .iter()
        .filter(|e| e.kind == EquilibriumKind::Sink)
        .map(Equilibrium::point)
        .collect();

    if eqs.is_empty() {
        // Every orbit winds; measure a direction on one long run.
        let Ok(w) = winding(
            f,
            starts[0],
            opts.t_max,
            opts.tol,
            opts.wind_threshold,
            opts.stop_norm,
            &[],
        ) else {
            return Regime::Unresolved;
        };
        if w.bounded {
            return Regime::Unresolved;
        }
        let tol_angle = 1.5 / w.norm().max(4.0);
        let Some((p, q)) = rational_direction(w.v, opts.q_max, tol_angle) else {
            return Regime::Unlocked;
        };
        match find_periodic_orbit(f, p, q, starts[0], &OrbitSearchOptions::default()) {
            Some(orbit) => {
                let (cp, cq) = canonical_type(orbit.p, orbit.q);
                Regime::Periodic { p: cp, q: cq }
            }
            None => Regime::Unlocked,
        }
    } else {
        let mut winding_run: Option<Winding> = None;
        for s in starts {
            let Ok(w) = winding(
                f,
                *s,
                opts.t_max,
                opts.tol,
                opts.wind_threshold,
                opts.stop_norm,
                &sinks,
            ) else {
                return Regime::Unresolved;
            };
            if !w.bounded && w.norm() > winding_run.as_ref().map_or(0.0, Winding::norm) {
                winding_run = Some(w);
            }
        }
        let Some(w) = winding_run else {
            return Regime::FullyLocked;
        };
        // Push the winding orbit further if the displacement is still small.
        let w = if w.norm() < opts.stop_norm / 2.0 {
            match winding(
                f,
                w.end,
                opts.t_max,
                opts.tol,
                opts.wind_threshold,
                opts.stop_norm,
                &sinks,
            ) {
                Ok(more) if !more.bounded => Winding {
                    v: [w.v[0] + more.v[0], w.v[1] + more.v[1]],
                    t: w.t + more.t,
                    end: more.end,
                    bounded: false,
                },
                _ => w,
            }
        } else {
            w
        };
        let tol_angle = 1.5 / w.norm().max(4.0);
        match rational_direction(w.v, opts.q_max, tol_angle) {
            Some((p, q)) => {
                let (cp, cq) = canonical_type(p, q);
                Regime::Cherry { p: cp, q: cq }
            }
            None => Regime::Unresolved,
        }
    }
}

/// One sample of a detuning sweep of homology-direction angles.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SweepSample {
    pub lambda: f64,
    pub mu1: f64,
    pub mu2: f64,
    /// Direction angle in radians; `None` when the sample did not resolve.
    pub angle: Option<f64>,
    pub confidence: f64,
}

/// Sweep the detuning line `mu1 = k/2 - lambda`, `mu2 = k/2 + lambda` and
/// measure the homology-direction angle at `n` evenly spaced samples.
/// Samples whose direction estimate is bounded or has not converged below
/// 0.05 rad report `None`; they are never interpolated. Deterministic and
/// parallel over samples.
pub fn winding_sweep(
    family: &(impl Fn(f64, f64) -> FieldSpec + Sync),
    k: f64,
    lambda_range: [f64; 2],
    n: usize,
    t_max: f64,
    tol: f64,
) -> Vec<SweepSample> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let lambda = lambda_range[0]
                + (lambda_range[1] - lambda_range[0]) * i as f64 / (n.max(2) - 1) as f64;
            let mu1 = 0.5 * k - lambda;
            let mu2 = 0.5 * k + lambda;
            let f = family(mu1, mu2);
            let start = f
                .geometry()
                .map(|g| launch_grid(g, 1)[0])
                .unwrap_or_else(|| CoverPoint::new(0.37, 0.61));
            let (angle, confidence) = match homology_direction(&f, start, t_max, tol) {
                Ok(h) => match h.angle() {
                    Some(a) if h.confidence < 0.05 => (Some(a), h.confidence),
                    _ => (None, h.confidence),
                },
                Err(_) => (None, PI),
            };
            SweepSample {
                lambda,
                mu1,
                mu2,
                angle,
                confidence,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn explicit_period(lambda: f64) -> f64 {
        2.0 * PI / (lambda * lambda - 1.0).sqrt()
    }

    #[test]
    fn section_geometry_roundtrips() {
        let geom = TorusGeometry::new(2.0 * PI, 4.0 * PI);
        for spec in [
            SectionSpec::vertical(0.25),
            SectionSpec::horizontal(0.1),
            SectionSpec::diagonal(0.4),
        ] {
            for &(level, psi) in &[(0.0, 0.3), (2.0, -1.2), (-1.0, 0.77)] {
                let p = spec.point_at(geom, level, psi);
                assert!((spec.s_value(geom, p) - level).abs() < 1e-12);
                assert!((spec.psi(geom, p) - psi).abs() < 1e-12);
            }
        }
        assert_eq!(SectionSpec::vertical(0.0).psi_period(), 1.0);
        assert_eq!(SectionSpec::horizontal(0.0).psi_period(), 1.0);
        assert_eq!(SectionSpec::diagonal(0.0).psi_period(), 2.0);
    }

    #[test]
    fn canonical_types_normalize_sign_and_scale() {
        assert_eq!(canonical_type(-2, 4), (1, -2));
        assert_eq!(canonical_type(0, -3), (0, 1));
        assert_eq!(canonical_type(3, 3), (1, 1));
        assert_eq!(canonical_type(1, 0), (1, 0));
    }

    #[test]
    fn uncoupled_winding_direction_matches_period_ratio() {
        // lambda = (1.3, 1.15): the cover displacement after time T is
        // (T/T1, T/T2), so the direction angle tends to atan2(T1, T2).
        let f = FieldSpec::explicit_family(1.3, 1.15, 0.0, 0.0);
        let w = winding(
            &f,
            CoverPoint::new(0.5, 1.7),
            5_000.0,
            1e-10,
            2.0,
            60.0,
            &[],
        )
        .unwrap();
        assert!(!w.bounded);
        let t1 = explicit_period(1.3);
        let t2 = explicit_period(1.15);
        let expected = t1.atan2(t2);
        // The fractional parts of the two phases bound the transverse error
        // of the finite-time direction by ~sqrt(2)/|V|.
        assert!(
            (w.angle().unwrap() - expected).abs() < 2.5 / w.norm(),
            "angle {} vs {}",
            w.angle().unwrap(),
            expected
        );
    }

    #[test]
    fn rotation_number_of_uncoupled_flow_is_period_ratio() {
        let f = FieldSpec::explicit_family(1.3, 1.15, 0.0, 0.0);
        // Horizontal section: psi = -a advances by -T2/T1 per upward
        // crossing of an x2 level.
        let rho = rotation_number(
            &f,
            SectionSpec::horizontal(0.37),
            CoverPoint::new(0.5, 1.7),
            160,
            1e-10,
            100.0,
        )
        .unwrap();
        let expected = -explicit_period(1.15) / explicit_period(1.3);
        // Accuracy is limited by the dense-output interpolation used to
        // locate crossings, not the return-map average itself.
        assert!((rho - expected).abs() < 1e-6, "{rho} vs {expected}");
    }

    #[test]
    fn weighted_birkhoff_beats_plain_average_on_quasiperiodic_signal() {
        // Increments rho + periodic wobble of an irrational rotation.
        let rho = 0.381_966_011_250_105; // 2 - golden ratio
        let mut x: f64 = 0.123;
        let mut diffs = Vec::new();
        for _ in 0..300 {
            let d = rho + 0.2 * (2.0 * PI * x).sin();
            diffs.push(d);
            x += rho;
        }
        // The wobble term averages out; its Birkhoff mean is the rotation
        // number of the base rotation.
        let wb = weighted_birkhoff(&diffs);
        let plain = diffs.iter().sum::<f64>() / diffs.len() as f64;
        assert!((wb - rho).abs() < 1e-9, "weighted {wb}");
        assert!((wb - rho).abs() < (plain - rho).abs() / 100.0);
    }

    #[test]
    fn finds_attracting_one_zero_orbit() {
        // mu1 > 0, mu2 < 0 with coupling: x2 locks, x1 keeps turning.
        let f = FieldSpec::coupled_snic(
            TorusGeometry::square_2pi(),
            0.09,
            -0.04,
            0.05,
            0.03,
        );
        let orbit = find_periodic_orbit(
            &f,
            1,
            0,
            CoverPoint::new(1.0, 2.0),
            &OrbitSearchOptions::default(),
        )
        .expect("attracting (1, 0) orbit");
        assert_eq!((orbit.p, orbit.q), (1, 0));
        assert!(orbit.multiplier < 1.0, "multiplier {}", orbit.multiplier);
        assert!(orbit.period > 0.0);
        // No orbit of the transposed type exists.
        assert!(find_periodic_orbit(
            &f,
            0,
            1,
            CoverPoint::new(1.0, 2.0),
            &OrbitSearchOptions::default(),
        )
        .is_none());
    }

    #[test]
    fn classifies_quadrant_regimes() {
        let geom = TorusGeometry::square_2pi();
        let opts = ClassifyOptions::default();
        // Both parameters deep negative: equilibria, everything locks.
        let locked = FieldSpec::coupled_snic(geom, -0.2, -0.25, 0.05, 0.03);
        assert_eq!(classify_regime(&locked, &opts), Regime::FullyLocked);
        // Opposite quadrants: x1 turns, x2 locked.
        let f10 = FieldSpec::coupled_snic(geom, 0.3, -0.2, 0.05, 0.03);
        assert_eq!(classify_regime(&f10, &opts), Regime::Periodic { p: 1, q: 0 });
        let f01 = FieldSpec::coupled_snic(geom, -0.2, 0.3, 0.05, 0.03);
        assert_eq!(classify_regime(&f01, &opts), Regime::Periodic { p: 0, q: 1 });
    }

    #[test]
    fn diagonal_regime_is_irrational_or_high_order() {
        // Both parameters positive and incommensurate frequencies, tiny
        // coupling: no equilibria and no low-order lock.
        let f = FieldSpec::explicit_family(1.31, 1.1043, 0.002, 0.001);
        let r = classify_regime(&f, &ClassifyOptions::default());
        match r {
            Regime::Unlocked | Regime::Periodic { .. } => {}
            other => panic!("unexpected regime {other:?}"),
        }
        assert_ne!(r, Regime::Periodic { p: 1, q: 0 });
        assert_ne!(r, Regime::Periodic { p: 0, q: 1 });
    }

    struct Flat;
    impl crate::field::ScalarProfile for Flat {
        fn value(&self, _x: f64) -> f64 {
            0.0
        }
        fn deriv(&self, _x: f64) -> f64 {
            0.0
        }
    }

    #[test]
    fn homology_direction_of_a_constant_flow() {
        use crate::field::AxisProfile;
        use std::sync::Arc;
        let geom = TorusGeometry::square_2pi();
        let f = FieldSpec::product_snic(
            geom,
            0.5,
            1.0 / 3.0,
            AxisProfile::Custom(Arc::new(Flat)),
            AxisProfile::Custom(Arc::new(Flat)),
        );
        let h = homology_direction(&f, CoverPoint::new(0.2, 0.5), 400.0, 1e-10).unwrap();
        let d = h.direction.expect("winding flow");
        let s13 = 13f64.sqrt();
        // Component speeds (1/2, 1/3) wind like (3, 2).
        assert!((d[0] - 3.0 / s13).abs() < 1e-9);
        assert!((d[1] - 2.0 / s13).abs() < 1e-9);
        assert!(h.confidence < 1e-9);
    }

    #[test]
    fn homology_direction_of_the_symmetric_explicit_family() {
        let f = FieldSpec::explicit_family(2.0, 2.0, 0.0, 0.0);
        let h = homology_direction(&f, CoverPoint::new(1.0, 3.0), 400.0, 1e-10).unwrap();
        let d = h.direction.expect("winding flow");
        let diag = std::f64::consts::FRAC_1_SQRT_2;
        assert!((d[0] - diag).abs() < 0.02);
        assert!((d[1] - diag).abs() < 0.02);
        assert!(h.confidence < 0.02);
    }

    #[test]
    fn homology_direction_zero_flag_when_orbits_are_bounded() {
        let geom = TorusGeometry::square_2pi();
        let f = FieldSpec::coupled_snic(geom, -0.05, -0.05, 0.01, 0.006);
        let h = homology_direction(&f, CoverPoint::new(2.3, 3.8), 500.0, 1e-9).unwrap();
        assert!(h.direction.is_none());
        assert!(h.norm < 2.0);
    }

    #[test]
    fn cross_section_detection() {
        // Both components strictly positive.
        assert!(has_global_cross_section(&FieldSpec::explicit_family(
            2.0, 2.0, 0.0, 0.0
        )));
        // Equilibria present: every linear form vanishes somewhere.
        let geom = TorusGeometry::square_2pi();
        assert!(!has_global_cross_section(&FieldSpec::coupled_snic(
            geom, -0.05, -0.05, 0.01, 0.006
        )));
        // Neither component is one-signed, but the sum is: the positive
        // margin is thin, so this exercises the grid refinement ladder.
        assert!(has_global_cross_section(&FieldSpec::coupled_snic(
            geom, 0.15, -0.05, 0.05, 0.03
        )));
    }

    #[test]
    fn winding_sweep_of_the_uncoupled_family_turns_anticlockwise() {
        let geom = TorusGeometry::square_2pi();
        let family = |mu1: f64, mu2: f64| FieldSpec::uncoupled_snic(geom, mu1, mu2);
        let k = 0.2;
        let samples = winding_sweep(&family, k, [-0.09, 0.09], 9, 6_000.0, 1e-9);
        let angles: Vec<f64> = samples
            .iter()
            .map(|s| s.angle.expect("resolved sample"))
            .collect();
        for w in angles.windows(2) {
            assert!(w[1] > w[0], "turning must be monotone: {angles:?}");
        }
        // Symmetric midpoint is exactly diagonal.
        assert!((angles[4] - PI / 4.0).abs() < 2e-2);
        // Endpoints match the product-flow period closed form.
        let rate = |mu: f64| (mu * (mu + 4.0)).sqrt();
        for idx in [0, 8] {
            let s = &samples[idx];
            let exact = rate(s.mu2).atan2(rate(s.mu1));
            assert!(
                (angles[idx] - exact).abs() < 2e-2,
                "endpoint {idx}: {} vs {exact}",
                angles[idx]
            );
        }
    }
}
