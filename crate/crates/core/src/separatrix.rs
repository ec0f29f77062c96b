//! Saddle separatrix tracing and invariant-circle verification.
//!
//! A planar saddle carries four invariant-manifold branches. This module
//! launches trajectories a small offset along the saddle eigenvectors,
//! follows them (forward for unstable branches, in reversed time for stable
//! ones), and reports where they land: a node translate on the covering
//! plane, a near pass at another saddle, or a budget/region exit. On top of
//! the raw traces it builds the global checks used for phase-portrait
//! classification: the "tartan" portrait of two saddles, a sink and a
//! source; signed gaps between branches on a cross-section, whose roots are
//! heteroclinic connections; an invariant-cone criterion certifying a
//! repelling circle; and chain/return-map evidence for vertical invariant
//! circles.

use crate::equilibria::{
    eigen_data, find_equilibria, Equilibrium, EquilibriumKind, FindOptions, Rect,
};
use crate::field::FieldSpec;
use crate::geometry::{CoverPoint, TorusGeometry};
use crate::integrate::{
    integrate_adaptive, integrate_to_section, IntegrateError, IntegratorOptions, PlaneSection,
    StepControl,
};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SeparatrixError {
    /// The phase portrait does not have the structure the operation needs.
    #[error("missing structure: {0}")]
    MissingStructure(String),
    /// A branch failed to reach the measurement section within budget.
    #[error("{branch} branch did not cross the section")]
    NoSectionCrossing { branch: &'static str },
    /// The gap has the same sign at both ends of the supplied bracket.
    #[error("gap does not change sign over the bracket: {g_lo:.3e} and {g_hi:.3e}")]
    Bracket { g_lo: f64, g_hi: f64 },
    #[error(transparent)]
    Integration(#[from] IntegrateError),
}

/// Names for the four organizing branches of a tartan portrait.
///
/// The two saddles are told apart by their unstable eigenvector: one has it
/// near-vertical (the "upright" saddle), the other near-horizontal (the
/// "flat" saddle). The labels pick one branch of each manifold:
///
/// * `D`: upward unstable branch of the upright saddle,
/// * `C`: leftward stable branch of the upright saddle,
/// * `B`: rightward unstable branch of the flat saddle,
/// * `A`: downward stable branch of the flat saddle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BranchLabel {
    A,
    B,
    C,
    D,
}

impl BranchLabel {
    /// Stable-manifold branches are traced in reversed time.
    pub fn is_stable(self) -> bool {
        matches!(self, BranchLabel::A | BranchLabel::C)
    }
}

/// One invariant-manifold branch of a saddle, ready to trace from
/// `saddle + offset * direction`.
#[derive(Debug, Clone)]
pub struct SaddleBranch {
    pub saddle: Equilibrium,
    pub label: Option<BranchLabel>,
    /// Stable branches are traced in reversed time.
    pub stable: bool,
    /// Unit eigenvector, with the sign selecting the branch.
    pub direction: [f64; 2],
    /// Launch distance along the eigenvector.
    pub offset: f64,
}

impl SaddleBranch {
    pub fn launch_point(&self) -> CoverPoint {
        CoverPoint::new(
            self.saddle.x1 + self.offset * self.direction[0],
            self.saddle.x2 + self.offset * self.direction[1],
        )
    }

    /// The same branch launched from the `(m, n)` lattice translate.
    pub fn translated(&self, geom: TorusGeometry, m: i64, n: i64) -> SaddleBranch {
        let mut b = self.clone();
        b.saddle.x1 += m as f64 * geom.l1;
        b.saddle.x2 += n as f64 * geom.l2;
        b
    }
}

/// Default launch offset for coupling sizes `delta1`, `delta2`: small on the
/// scale of the distance between nearby invariant objects, which shrinks
/// with the geometric mean of the couplings.
pub fn default_offset(delta1: f64, delta2: f64) -> f64 {
    let s = (delta1 * delta2).abs().sqrt();
    if s > 0.0 {
        1e-6 * s
    } else {
        1e-8
    }
}

/// Build one signed branch of `saddle`. `stable` picks the eigenvector
/// (eigenvalues are sorted descending, so index 0 is unstable); `positive`
/// orients its dominant component.
pub fn signed_branch(
    f: &FieldSpec,
    saddle: &Equilibrium,
    stable: bool,
    positive: bool,
    offset: f64,
) -> Result<SaddleBranch, SeparatrixError> {
    if saddle.kind != EquilibriumKind::Saddle {
        return Err(SeparatrixError::MissingStructure(format!(
            "branch base at ({:.4}, {:.4}) is {:?}, not a saddle",
            saddle.x1, saddle.x2, saddle.kind
        )));
    }
    let ed = eigen_data(f, saddle);
    let Some(vecs) = ed.eigenvectors else {
        return Err(SeparatrixError::MissingStructure(
            "saddle eigenvectors unavailable".into(),
        ));
    };
    let mut v = if stable { vecs[1] } else { vecs[0] };
    let dom = if v[0].abs() >= v[1].abs() { 0 } else { 1 };
    if (v[dom] > 0.0) != positive {
        v = [-v[0], -v[1]];
    }
    Ok(SaddleBranch {
        saddle: *saddle,
        label: None,
        stable,
        direction: v,
        offset,
    })
}

/// Split the two saddles of a tartan portrait by eigen-direction: returns
/// `(upright, flat)` where the upright saddle has the more vertical
/// unstable eigenvector. Fails unless one unstable axis is genuinely
/// steeper than the diagonal and the other shallower.
pub fn tartan_saddles(
    f: &FieldSpec,
    eqs: &[Equilibrium],
) -> Result<(Equilibrium, Equilibrium), SeparatrixError> {
    let saddles: Vec<&Equilibrium> = eqs
        .iter()
        .filter(|e| e.kind == EquilibriumKind::Saddle)
        .collect();
    if saddles.len() != 2 {
        return Err(SeparatrixError::MissingStructure(format!(
            "expected 2 saddles, found {}",
            saddles.len()
        )));
    }
    let steepness = |eq: &Equilibrium| -> Result<f64, SeparatrixError> {
        let ed = eigen_data(f, eq);
        let v = ed.eigenvectors.ok_or_else(|| {
            SeparatrixError::MissingStructure("saddle eigenvectors unavailable".into())
        })?[0];
        Ok(v[1].abs() / v[0].abs().max(1e-300))
    };
    let s0 = steepness(saddles[0])?;
    let s1 = steepness(saddles[1])?;
    let (up, flat, steep_up, steep_flat) = if s0 >= s1 {
        (*saddles[0], *saddles[1], s0, s1)
    } else {
        (*saddles[1], *saddles[0], s1, s0)
    };
    if !(steep_up > 1.0 && steep_flat < 1.0) {
        return Err(SeparatrixError::MissingStructure(format!(
            "saddle unstable axes are not split between vertical and horizontal \
             (steepness {steep_up:.3} and {steep_flat:.3})"
        )));
    }
    Ok((up, flat))
}

/// Build the branch named by `label` from the tartan saddles of `eqs`.
pub fn labeled_branch(
    f: &FieldSpec,
    eqs: &[Equilibrium],
    label: BranchLabel,
    offset: f64,
) -> Result<SaddleBranch, SeparatrixError> {
    let (upright, flat) = tartan_saddles(f, eqs)?;
    let (saddle, stable, positive) = match label {
        BranchLabel::D => (upright, false, true), // unstable, upward
        BranchLabel::C => (upright, true, false), // stable, leftward
        BranchLabel::B => (flat, false, true),    // unstable, rightward
        BranchLabel::A => (flat, true, false),    // stable, downward
    };
    let mut b = signed_branch(f, &saddle, stable, positive, offset)?;
    b.label = Some(label);
    Ok(b)
}

/// Where a branch trace ended up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ConnectionTarget {
    /// Captured by the `(m, n)` lattice translate of a sink (unstable
    /// branches, traced forward).
    SinkTranslate { m: i64, n: i64 },
    /// Captured by the `(m, n)` lattice translate of a source (stable
    /// branches, traced backward).
    SourceTranslate { m: i64, n: i64 },
    /// Came within the capture radius of a saddle translate: a connection
    /// is suspected but needs parameter refinement to resolve.
    NearSaddlePass { m: i64, n: i64, distance: f64 },
    /// Left the working region (planar fields only).
    Escaped,
    BudgetExceeded,
}

/// Result of following one branch.
#[derive(Debug, Clone)]
pub struct BranchTrace {
    pub target: ConnectionTarget,
    pub end: CoverPoint,
    /// Trace time used (in the traced flow's own time).
    pub t: f64,
    /// Closest pass distance to a saddle translate inside the flagging band
    /// `(capture_radius, 10 * capture_radius)`, if one occurred.
    pub near_miss: Option<f64>,
    /// Step-end states `(t, [x1, x2])` along the trace.
    pub samples: Vec<(f64, [f64; 2])>,
}

#[derive(Debug, Clone, Copy)]
pub struct TraceOptions {
    pub t_budget: f64,
    /// Distance at which an equilibrium translate captures the trace.
    pub capture_radius: f64,
    pub tol: f64,
    /// Escape bound on `|x1|, |x2|` for planar fields.
    pub planar_bound: f64,
}

impl TraceOptions {
    pub fn for_field(f: &FieldSpec) -> Self {
        let capture_radius = match f.geometry() {
            Some(g) => 1e-4 * g.l1.min(g.l2),
            None => 1e-4,
        };
        TraceOptions {
            t_budget: 4000.0,
            capture_radius,
            tol: 1e-10,
            planar_bound: 10.0,
        }
    }
}

fn point_distance(geom: Option<TorusGeometry>, a: CoverPoint, b: CoverPoint) -> f64 {
    match geom {
        Some(g) => g.distance(a, b),
        None => a.euclid_distance(b),
    }
}

fn lattice_indices(geom: Option<TorusGeometry>, base: CoverPoint, cover: CoverPoint) -> (i64, i64) {
    match geom {
        Some(g) => {
            let (m, n, _) = g.nearest_translate(base, cover);
            (m, n)
        }
        None => (0, 0),
    }
}

enum TraceEvent {
    Capture {
        eq: usize,
        state: [f64; 2],
        t: f64,
    },
    SaddleHit {
        eq: usize,
        state: [f64; 2],
        t: f64,
        distance: f64,
    },
    Escaped {
        state: [f64; 2],
        t: f64,
    },
}

/// Follow one branch until it is captured by a node translate, passes a
/// saddle, escapes (planar fields), or runs out the budget. Stable branches
/// are traced in reversed time, so their capture targets are sources.
///
/// `eqs` are the equilibria of one fundamental domain (or of the planar
/// working region); capture is tested against all of their lattice
/// translates. Saddle-pass detection stays disarmed until the trace has
/// left a ball of radius 20 capture radii around the launch saddle.
pub fn trace_branch(
    f: &FieldSpec,
    branch: &SaddleBranch,
    eqs: &[Equilibrium],
    opts: &TraceOptions,
) -> Result<BranchTrace, SeparatrixError> {
    let geom = f.geometry();
    let flow = if branch.stable {
        f.clone().time_reversed()
    } else {
        f.clone()
    };
    let target_kind = if branch.stable {
        EquilibriumKind::Source
    } else {
        EquilibriumKind::Sink
    };
    let cap = opts.capture_radius;
    let arm_radius = 20.0 * cap;
    let launch_saddle = branch.saddle.point();
    let rhs = |_t: f64, y: &[f64; 2]| flow.velocity(CoverPoint::new(y[0], y[1]));
    let int_opts = IntegratorOptions::default();
    // How long a capture candidate must stay near the node to count.
    let confirm_span = 200.0_f64;

    let mut y = branch.launch_point().to_array();
    let mut t_global = 0.0;
    let mut samples: Vec<(f64, [f64; 2])> = vec![(0.0, y)];
    let mut near_miss: Option<f64> = None;
    let mut armed = false;

    loop {
        let remaining = opts.t_budget - t_global;
        if remaining <= 0.0 {
            return Ok(BranchTrace {
                target: ConnectionTarget::BudgetExceeded,
                end: CoverPoint::new(y[0], y[1]),
                t: t_global,
                near_miss,
                samples,
            });
        }
        let mut event: Option<TraceEvent> = None;
        let (y_end, t_end) = integrate_adaptive(
            rhs,
            y,
            remaining,
            opts.tol,
            opts.tol,
            &int_opts,
            |step| {
                for k in 1..=4 {
                    let theta = 0.25 * k as f64;
                    let z = step.eval(theta);
                    let pz = CoverPoint::new(z[0], z[1]);
                    let tz = t_global + step.t0 + theta * step.h;
                    if !armed && point_distance(geom, launch_saddle, pz) > arm_radius {
                        armed = true;
                    }
                    if geom.is_none()
                        && (z[0].abs() > opts.planar_bound || z[1].abs() > opts.planar_bound)
                    {
                        event = Some(TraceEvent::Escaped { state: z, t: tz });
                        return StepControl::Stop;
                    }
                    for (i, eq) in eqs.iter().enumerate() {
                        let d = point_distance(geom, eq.point(), pz);
                        if eq.kind == target_kind && d < cap {
                            event = Some(TraceEvent::Capture {
                                eq: i,
                                state: z,
                                t: tz,
                            });
                            return StepControl::Stop;
                        }
                        if eq.kind == EquilibriumKind::Saddle && armed {
                            if d < cap {
                                event = Some(TraceEvent::SaddleHit {
                                    eq: i,
                                    state: z,
                                    t: tz,
                                    distance: d,
                                });
                                return StepControl::Stop;
                            }
                            if d < 10.0 * cap {
                                near_miss = Some(near_miss.map_or(d, |m| m.min(d)));
                            }
                        }
                    }
                }
                samples.push((t_global + step.t_end(), step.end_state()));
                StepControl::Continue
            },
        )?;
        match event {
            None => {
                // Ran to the end of the remaining budget without an event.
                y = y_end;
                t_global += t_end;
            }
            Some(TraceEvent::Escaped { state, t }) => {
                samples.push((t, state));
                return Ok(BranchTrace {
                    target: ConnectionTarget::Escaped,
                    end: CoverPoint::new(state[0], state[1]),
                    t,
                    near_miss,
                    samples,
                });
            }
            Some(TraceEvent::SaddleHit {
                eq,
                state,
                t,
                distance,
            }) => {
                let end = CoverPoint::new(state[0], state[1]);
                let (m, n) = lattice_indices(geom, eqs[eq].point(), end);
                samples.push((t, state));
                return Ok(BranchTrace {
                    target: ConnectionTarget::NearSaddlePass { m, n, distance },
                    end,
                    t,
                    near_miss,
                    samples,
                });
            }
            Some(TraceEvent::Capture { eq, state, t }) => {
                // Confirm the capture: the orbit must settle toward the node
                // rather than merely pass through its neighborhood.
                let target_pt = eqs[eq].point();
                y = state;
                t_global = t;
                let span = confirm_span.min(opts.t_budget - t_global).max(0.0);
                let mut verdict: Option<bool> = None;
                if span > 0.0 {
                    let (y2, t2) = integrate_adaptive(
                        rhs,
                        y,
                        span,
                        opts.tol,
                        opts.tol,
                        &int_opts,
                        |step| {
                            let z = step.end_state();
                            samples.push((t_global + step.t_end(), z));
                            let d = point_distance(geom, target_pt, CoverPoint::new(z[0], z[1]));
                            if d < 0.25 * cap {
                                verdict = Some(true);
                                return StepControl::Stop;
                            }
                            if d > 4.0 * cap {
                                verdict = Some(false);
                                return StepControl::Stop;
                            }
                            StepControl::Continue
                        },
                    )?;
                    y = y2;
                    t_global += t2;
                }
                if verdict == Some(false) {
                    // A flyby, not a capture: resume the main loop.
                    continue;
                }
                // Settled, or hovered inside the capture band for the whole
                // confirmation window (which only very slow nodes do).
                let end = CoverPoint::new(y[0], y[1]);
                let (m, n) = lattice_indices(geom, target_pt, end);
                let target = if branch.stable {
                    ConnectionTarget::SourceTranslate { m, n }
                } else {
                    ConnectionTarget::SinkTranslate { m, n }
                };
                return Ok(BranchTrace {
                    target,
                    end,
                    t: t_global,
                    near_miss,
                    samples,
                });
            }
        }
    }
}

/// Signed gap between an unstable branch and a stable branch measured on a
/// cross-section one `eta` short of the next lattice row (or column).
///
/// For vertically traveling branches the section is the line
/// `x2 = top of the unstable saddle's cell - eta`; the unstable branch is
/// integrated forward up through it and the stable branch backward down
/// through it from the saddle translate just above. The gap is the `x1`
/// offset `stable hit - unstable hit`, reduced to the representative
/// nearest zero, so a positive gap means the unstable branch passes left of
/// the stable one. Horizontally traveling branches use the mirrored
/// construction on a vertical section and report the `x2` offset.
pub fn branch_gap_at_section(
    f: &FieldSpec,
    unstable: &SaddleBranch,
    stable: &SaddleBranch,
    eta: f64,
    opts: &TraceOptions,
) -> Result<f64, SeparatrixError> {
    let Some(geom) = f.geometry() else {
        return Err(SeparatrixError::MissingStructure(
            "gap measurement needs a torus geometry".into(),
        ));
    };
    if unstable.stable || !stable.stable {
        return Err(SeparatrixError::MissingStructure(
            "gap takes an unstable branch first and a stable branch second".into(),
        ));
    }
    let int_opts = IntegratorOptions::default();
    let reversed = f.clone().time_reversed();
    let vertical_travel = unstable.direction[1].abs() >= unstable.direction[0].abs();
    if vertical_travel {
        let base = geom.l2 * (unstable.saddle.x2 / geom.l2).floor();
        let level = base + geom.l2 - eta;
        if unstable.saddle.x2 >= level {
            return Err(SeparatrixError::MissingStructure(
                "eta leaves no room between the saddle and the section".into(),
            ));
        }
        let u_hit = integrate_to_section(
            f,
            unstable.launch_point(),
            PlaneSection::horizontal(level),
            1,
            opts.tol,
            opts.t_budget,
            &int_opts,
        )
        .map_err(|e| match e {
            IntegrateError::NoCrossing { .. } => {
                SeparatrixError::NoSectionCrossing { branch: "unstable" }
            }
            other => other.into(),
        })?;
        // Translate the stable branch's saddle to just above the section.
        let k = ((level - stable.saddle.x2) / geom.l2).floor() as i64 + 1;
        let s_branch = stable.translated(geom, 0, k);
        let s_hit = integrate_to_section(
            &reversed,
            s_branch.launch_point(),
            PlaneSection::horizontal(level),
            -1,
            opts.tol,
            opts.t_budget,
            &int_opts,
        )
        .map_err(|e| match e {
            IntegrateError::NoCrossing { .. } => {
                SeparatrixError::NoSectionCrossing { branch: "stable" }
            }
            other => other.into(),
        })?;
        let raw = s_hit.point.x1 - u_hit.point.x1;
        Ok(raw - geom.l1 * (raw / geom.l1).round())
    } else {
        let base = geom.l1 * (unstable.saddle.x1 / geom.l1).floor();
        let level = base + geom.l1 - eta;
        if unstable.saddle.x1 >= level {
            return Err(SeparatrixError::MissingStructure(
                "eta leaves no room between the saddle and the section".into(),
            ));
        }
        let u_hit = integrate_to_section(
            f,
            unstable.launch_point(),
            PlaneSection::vertical(level),
            1,
            opts.tol,
            opts.t_budget,
            &int_opts,
        )
        .map_err(|e| match e {
            IntegrateError::NoCrossing { .. } => {
                SeparatrixError::NoSectionCrossing { branch: "unstable" }
            }
            other => other.into(),
        })?;
        let k = ((level - stable.saddle.x1) / geom.l1).floor() as i64 + 1;
        let s_branch = stable.translated(geom, k, 0);
        let s_hit = integrate_to_section(
            &reversed,
            s_branch.launch_point(),
            PlaneSection::vertical(level),
            -1,
            opts.tol,
            opts.t_budget,
            &int_opts,
        )
        .map_err(|e| match e {
            IntegrateError::NoCrossing { .. } => {
                SeparatrixError::NoSectionCrossing { branch: "stable" }
            }
            other => other.into(),
        })?;
        let raw = s_hit.point.x2 - u_hit.point.x2;
        Ok(raw - geom.l2 * (raw / geom.l2).round())
    }
}

/// Which branch pair a heteroclinic search matches up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapPair {
    /// Upward unstable branch against the downward stable branch of the
    /// saddle one cell up.
    UpwardToStable,
    /// Rightward unstable branch against the leftward stable branch of the
    /// saddle one cell right.
    RightwardToStable,
}

/// Build the labeled branches of `f` and measure the pair's section gap.
pub fn tartan_gap(
    f: &FieldSpec,
    pair: GapPair,
    eta: f64,
    offset: f64,
    opts: &TraceOptions,
) -> Result<f64, SeparatrixError> {
    let Some(geom) = f.geometry() else {
        return Err(SeparatrixError::MissingStructure(
            "gap measurement needs a torus geometry".into(),
        ));
    };
    let eqs = find_equilibria(f, Rect::fundamental_domain(geom), &FindOptions::default());
    let (u_label, s_label) = match pair {
        GapPair::UpwardToStable => (BranchLabel::D, BranchLabel::A),
        GapPair::RightwardToStable => (BranchLabel::B, BranchLabel::C),
    };
    let u = labeled_branch(f, &eqs, u_label, offset)?;
    let s = labeled_branch(f, &eqs, s_label, offset)?;
    branch_gap_at_section(f, &u, &s, eta, opts)
}

/// Root of a branch-gap sign change over a one-parameter family.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GapRoot {
    pub param: f64,
    pub gap: f64,
    pub evaluations: usize,
}

/// Locate the parameter at which the selected branch gap changes sign:
/// bisection down to `param_tol`, then a short secant polish. Errors with
/// [`SeparatrixError::Bracket`] if the gap has one sign across the bracket.
pub fn find_heteroclinic(
    mut family: impl FnMut(f64) -> FieldSpec,
    pair: GapPair,
    eta: f64,
    offset: f64,
    bracket: (f64, f64),
    param_tol: f64,
    opts: &TraceOptions,
) -> Result<GapRoot, SeparatrixError> {
    let mut evals = 0usize;
    let mut gap_at = |p: f64, evals: &mut usize| -> Result<f64, SeparatrixError> {
        *evals += 1;
        tartan_gap(&family(p), pair, eta, offset, opts)
    };
    let (mut lo, mut hi) = bracket;
    if lo > hi {
        std::mem::swap(&mut lo, &mut hi);
    }
    let mut g_lo = gap_at(lo, &mut evals)?;
    if g_lo == 0.0 {
        return Ok(GapRoot {
            param: lo,
            gap: 0.0,
            evaluations: evals,
        });
    }
    let mut g_hi = gap_at(hi, &mut evals)?;
    if g_hi == 0.0 {
        return Ok(GapRoot {
            param: hi,
            gap: 0.0,
            evaluations: evals,
        });
    }
    if g_lo.signum() == g_hi.signum() {
        return Err(SeparatrixError::Bracket { g_lo, g_hi });
    }
    while hi - lo > param_tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let g_mid = gap_at(mid, &mut evals)?;
        if g_mid == 0.0 {
            return Ok(GapRoot {
                param: mid,
                gap: 0.0,
                evaluations: evals,
            });
        }
        if g_mid.signum() == g_lo.signum() {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
            g_hi = g_mid;
        }
    }
    let (mut p_best, mut g_best) = if g_lo.abs() <= g_hi.abs() {
        (lo, g_lo)
    } else {
        (hi, g_hi)
    };
    for _ in 0..2 {
        let denom = g_hi - g_lo;
        if denom == 0.0 {
            break;
        }
        let p = (lo * g_hi - hi * g_lo) / denom;
        if !(p > lo && p < hi) {
            break;
        }
        let g = gap_at(p, &mut evals)?;
        if g.abs() < g_best.abs() {
            p_best = p;
            g_best = g;
        }
        if g == 0.0 {
            break;
        }
        if g.signum() == g_lo.signum() {
            lo = p;
            g_lo = g;
        } else {
            hi = p;
            g_hi = g;
        }
    }
    Ok(GapRoot {
        param: p_best,
        gap: g_best,
        evaluations: evals,
    })
}

/// Outcome of one of the eight branch traces of a tartan check.
#[derive(Debug, Clone, Serialize)]
pub struct BranchOutcome {
    /// Branch of the upright saddle (vs the flat one).
    pub upright: bool,
    pub stable: bool,
    /// Sign of the dominant component of the launch direction.
    pub positive: bool,
    pub target: ConnectionTarget,
}

/// Result of [`verify_basic_tartan`].
#[derive(Debug, Clone, Serialize)]
pub struct TartanReport {
    pub ok: bool,
    pub reason: Option<String>,
    pub sinks: usize,
    pub sources: usize,
    pub saddles: usize,
    pub branches: Vec<BranchOutcome>,
}

/// Check that `f` has the basic tartan portrait: exactly one sink, one
/// source and two saddles per cell, every unstable branch landing on a sink
/// translate and every stable branch (in reversed time) on a source
/// translate, with the two signed branches of each manifold landing one
/// lattice step apart along the manifold's dominant axis.
pub fn verify_basic_tartan(f: &FieldSpec, offset: f64, opts: &TraceOptions) -> TartanReport {
    let mut report = TartanReport {
        ok: false,
        reason: None,
        sinks: 0,
        sources: 0,
        saddles: 0,
        branches: Vec::new(),
    };
    let Some(geom) = f.geometry() else {
        report.reason = Some("field has no torus geometry".into());
        return report;
    };
    let eqs = find_equilibria(f, Rect::fundamental_domain(geom), &FindOptions::default());
    report.sinks = eqs
        .iter()
        .filter(|e| e.kind == EquilibriumKind::Sink)
        .count();
    report.sources = eqs
        .iter()
        .filter(|e| e.kind == EquilibriumKind::Source)
        .count();
    report.saddles = eqs
        .iter()
        .filter(|e| e.kind == EquilibriumKind::Saddle)
        .count();
    if !(report.sinks == 1 && report.sources == 1 && report.saddles == 2 && eqs.len() == 4) {
        report.reason = Some(format!(
            "census (sinks, sources, saddles) = ({}, {}, {}) of {} equilibria; need (1, 1, 2) of 4",
            report.sinks,
            report.sources,
            report.saddles,
            eqs.len()
        ));
        return report;
    }
    let (upright, flat) = match tartan_saddles(f, &eqs) {
        Ok(pair) => pair,
        Err(e) => {
            report.reason = Some(e.to_string());
            return report;
        }
    };

    let mut specs: Vec<(bool, bool, bool, SaddleBranch)> = Vec::new();
    for (saddle, is_upright) in [(upright, true), (flat, false)] {
        for stable in [false, true] {
            for positive in [true, false] {
                match signed_branch(f, &saddle, stable, positive, offset) {
                    Ok(b) => specs.push((is_upright, stable, positive, b)),
                    Err(e) => {
                        report.reason = Some(e.to_string());
                        return report;
                    }
                }
            }
        }
    }
    let traces: Vec<Result<BranchTrace, SeparatrixError>> = specs
        .par_iter()
        .map(|(_, _, _, b)| trace_branch(f, b, &eqs, opts))
        .collect();

    struct Row {
        upright: bool,
        stable: bool,
        positive: bool,
        dir: [f64; 2],
        lattice: Option<(i64, i64)>,
    }
    let mut rows: Vec<Row> = Vec::new();
    let mut failures: Vec<String> = Vec::new();
    for ((is_upright, stable, positive, branch), trace) in specs.iter().zip(traces) {
        let describe = || {
            format!(
                "{} {} branch of the {} saddle",
                if *positive { "positive" } else { "negative" },
                if *stable { "stable" } else { "unstable" },
                if *is_upright { "upright" } else { "flat" }
            )
        };
        let mut lattice = None;
        match trace {
            Err(e) => failures.push(format!("{} failed: {}", describe(), e)),
            Ok(tr) => {
                match (*stable, tr.target) {
                    (false, ConnectionTarget::SinkTranslate { m, n }) => lattice = Some((m, n)),
                    (true, ConnectionTarget::SourceTranslate { m, n }) => lattice = Some((m, n)),
                    (_, other) => {
                        failures.push(format!("{} ended in {:?}", describe(), other));
                    }
                }
                report.branches.push(BranchOutcome {
                    upright: *is_upright,
                    stable: *stable,
                    positive: *positive,
                    target: tr.target,
                });
            }
        }
        rows.push(Row {
            upright: *is_upright,
            stable: *stable,
            positive: *positive,
            dir: branch.direction,
            lattice,
        });
    }
    // The two signed branches of each manifold must land one lattice step
    // apart along the manifold's dominant axis.
    for is_upright in [true, false] {
        for stable in [false, true] {
            let pos = rows
                .iter()
                .find(|r| r.upright == is_upright && r.stable == stable && r.positive);
            let neg = rows
                .iter()
                .find(|r| r.upright == is_upright && r.stable == stable && !r.positive);
            let (Some(pos), Some(neg)) = (pos, neg) else {
                continue;
            };
            let (Some(lp), Some(ln)) = (pos.lattice, neg.lattice) else {
                continue;
            };
            let expected = if pos.dir[1].abs() > pos.dir[0].abs() {
                (0, 1)
            } else {
                (1, 0)
            };
            let got = (lp.0 - ln.0, lp.1 - ln.1);
            if got != expected {
                failures.push(format!(
                    "{} {} manifold endpoints differ by {:?}, expected {:?}",
                    if is_upright { "upright" } else { "flat" },
                    if stable { "stable" } else { "unstable" },
                    got,
                    expected
                ));
            }
        }
    }
    if failures.is_empty() {
        report.ok = true;
    } else {
        report.reason = Some(failures.join("; "));
    }
    report
}

/// Instantaneous rate of change of the weighted tangent slope
/// `s = vbar * dx2/dx1` along the flow at `p`, for a tangent vector
/// currently at slope `s`. `vbar` is the weighting speed at `p` and
/// `vbar_deriv` its derivative in `x1`.
pub fn cone_slope_rate(
    f: &FieldSpec,
    p: CoverPoint,
    vbar: f64,
    vbar_deriv: f64,
    s: f64,
) -> f64 {
    let j = f.jacobian(p);
    let v = f.velocity(p);
    j[1][0] * vbar + (j[1][1] - j[0][0] + vbar_deriv * v[0] / vbar) * s - (j[0][1] / vbar) * s * s
}

#[derive(Debug, Clone, Copy)]
pub struct ConeOptions {
    /// Time limit per tangent run.
    pub run_time: f64,
    /// Stratified `x1` starting positions per cone boundary side.
    pub starts_per_side: usize,
    pub tol: f64,
    /// Override for the annulus half-width in `x2 * x2` units; defaults to
    /// the field's coupling bound with a small floor.
    pub band: Option<f64>,
}

impl Default for ConeOptions {
    fn default() -> Self {
        ConeOptions {
            run_time: 60.0,
            starts_per_side: 6,
            tol: 1e-10,
            band: None,
        }
    }
}

/// Measurements from [`cone_condition_check`].
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ConeReport {
    /// Cone boundary slope `sqrt(-mu2)`.
    pub slope_bound: f64,
    /// The `x2` annulus the tangent runs are confined to.
    pub annulus: (f64, f64),
    /// Minimum of `|s| - slope_bound` over all in-annulus samples; the cone
    /// `|s| >= slope_bound` is forward invariant when this stays >= 0.
    pub min_slack: f64,
    pub min_expansion: f64,
    pub max_expansion: f64,
    pub runs: usize,
    pub time_inside: f64,
}

/// Certify the expansion structure transverse to a horizontal repelling
/// circle near `x2 = sqrt(-mu2)`: tangent vectors started on the cone
/// boundary `|s| = sqrt(-mu2)` must stay in the cone while the base point
/// remains in the annulus `x2^2 in [-mu2 - band, -mu2 + band]`, and their
/// vertical growth rate `(J w)_2 / w_2` is recorded. The slope is weighted
/// by `vbar(x1) = max(mu1, -mu2) + P1(x1)`, which bounds the horizontal
/// speed away from zero.
pub fn cone_condition_check(
    f: &FieldSpec,
    mu1: f64,
    mu2: f64,
    opts: &ConeOptions,
) -> Result<ConeReport, SeparatrixError> {
    let Some(geom) = f.geometry() else {
        return Err(SeparatrixError::MissingStructure(
            "cone check needs a torus geometry".into(),
        ));
    };
    if mu2 >= 0.0 {
        return Err(SeparatrixError::MissingStructure(
            "cone check needs mu2 < 0".into(),
        ));
    }
    let s0 = (-mu2).sqrt();
    let band = opts
        .band
        .unwrap_or_else(|| f.coupling_bound().max(0.01 * -mu2));
    if band >= -mu2 {
        return Err(SeparatrixError::MissingStructure(
            "annulus collapses: coupling too large for mu2".into(),
        ));
    }
    let x2_lo = (-mu2 - band).sqrt();
    let x2_hi = (-mu2 + band).sqrt();
    let x2_mid = 0.5 * (x2_lo + x2_hi);
    let vbar = |x1: f64| mu1.max(-mu2) + (f.uncoupled_axis_speed(0, x1) - mu1);
    let int_opts = IntegratorOptions::default();

    let mut min_slack = f64::INFINITY;
    let mut min_expansion = f64::INFINITY;
    let mut max_expansion = f64::NEG_INFINITY;
    let mut time_inside = 0.0;
    let mut runs = 0usize;

    for i in 0..opts.starts_per_side {
        let x1 = geom.l1 * (i as f64 + 0.5) / opts.starts_per_side as f64;
        for sign in [1.0, -1.0] {
            runs += 1;
            let w_raw = [1.0, sign * s0 / vbar(x1)];
            let norm = (w_raw[0] * w_raw[0] + w_raw[1] * w_raw[1]).sqrt();
            let y0 = [x1, x2_mid, w_raw[0] / norm, w_raw[1] / norm];
            // Base point plus a projectively-evolved unit tangent vector.
            let rhs = |_t: f64, y: &[f64; 4]| {
                let p = CoverPoint::new(y[0], y[1]);
                let v = f.velocity(p);
                let j = f.jacobian(p);
                let jw = [
                    j[0][0] * y[2] + j[0][1] * y[3],
                    j[1][0] * y[2] + j[1][1] * y[3],
                ];
                let lam = y[2] * jw[0] + y[3] * jw[1];
                [v[0], v[1], jw[0] - lam * y[2], jw[1] - lam * y[3]]
            };
            integrate_adaptive(rhs, y0, opts.run_time, opts.tol, opts.tol, &int_opts, |step| {
                for k in 1..=4 {
                    let z = step.eval(0.25 * k as f64);
                    if z[1] < x2_lo || z[1] > x2_hi {
                        return StepControl::Stop;
                    }
                    time_inside += 0.25 * step.h;
                    if z[2].abs() > 1e-12 {
                        let s_val = vbar(z[0]) * z[3] / z[2];
                        let slack = s_val.abs() - s0;
                        if slack < min_slack {
                            min_slack = slack;
                        }
                    }
                    if z[3].abs() > 1e-9 {
                        let j = f.jacobian(CoverPoint::new(z[0], z[1]));
                        let expansion = (j[1][0] * z[2] + j[1][1] * z[3]) / z[3];
                        min_expansion = min_expansion.min(expansion);
                        max_expansion = max_expansion.max(expansion);
                    }
                }
                StepControl::Continue
            })?;
        }
    }
    Ok(ConeReport {
        slope_bound: s0,
        annulus: (x2_lo, x2_hi),
        min_slack,
        min_expansion,
        max_expansion,
        runs,
        time_inside,
    })
}

/// Evidence that a vertical invariant circle exists.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CircleEvidence {
    /// The circle is the closure of a saddle's vertical manifold: its two
    /// signed branches land on node translates one vertical step apart.
    Chain { up: (i64, i64), down: (i64, i64) },
    /// A rotational orbit located by a vertical return map.
    Orbit {
        x1: f64,
        x2: f64,
        period: f64,
        /// Forward Floquet multiplier of the return map (> 1: repelling).
        multiplier: f64,
    },
}

/// Confinement check for the chain circle: while the chained orbit is
/// within `eta` of a horizontal lattice line, `-x1` (centered) must stay in
/// `[lo, hi]`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StripCheck {
    pub lo: f64,
    pub hi: f64,
    pub held: bool,
    /// Worst signed margin over the checked samples (>= 0 when held).
    pub worst: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerticalCirclesReport {
    pub ok: bool,
    pub equilibria: usize,
    /// Evidence for the attracting vertical circle (the one through the
    /// sink column).
    pub attracting: Option<CircleEvidence>,
    /// Evidence for the repelling vertical circle.
    pub repelling: Option<CircleEvidence>,
    pub strip: Option<StripCheck>,
    pub reason: Option<String>,
}

fn census(eqs: &[Equilibrium]) -> (usize, usize, usize) {
    let sinks = eqs
        .iter()
        .filter(|e| e.kind == EquilibriumKind::Sink)
        .count();
    let sources = eqs
        .iter()
        .filter(|e| e.kind == EquilibriumKind::Source)
        .count();
    let saddles = eqs
        .iter()
        .filter(|e| e.kind == EquilibriumKind::Saddle)
        .count();
    (sinks, sources, saddles)
}

/// Trace both signed branches of one vertical manifold of `saddle` and
/// require them to land on node translates one vertical step apart.
fn chain_evidence(
    f: &FieldSpec,
    saddle: &Equilibrium,
    stable: bool,
    eqs: &[Equilibrium],
    offset: f64,
    opts: &TraceOptions,
) -> Result<(CircleEvidence, Vec<(f64, [f64; 2])>), String> {
    let up = signed_branch(f, saddle, stable, true, offset).map_err(|e| e.to_string())?;
    if up.direction[1].abs() <= up.direction[0].abs() {
        return Err(format!(
            "{} manifold of the saddle at ({:.4}, {:.4}) is not vertical",
            if stable { "stable" } else { "unstable" },
            saddle.x1,
            saddle.x2
        ));
    }
    let down = signed_branch(f, saddle, stable, false, offset).map_err(|e| e.to_string())?;
    let tr_up = trace_branch(f, &up, eqs, opts).map_err(|e| e.to_string())?;
    let tr_down = trace_branch(f, &down, eqs, opts).map_err(|e| e.to_string())?;
    let node_of = |tr: &BranchTrace| match (stable, tr.target) {
        (false, ConnectionTarget::SinkTranslate { m, n }) => Ok((m, n)),
        (true, ConnectionTarget::SourceTranslate { m, n }) => Ok((m, n)),
        (_, other) => Err(format!("branch ended in {other:?}")),
    };
    let mn_up = node_of(&tr_up)?;
    let mn_down = node_of(&tr_down)?;
    if (mn_up.0 - mn_down.0, mn_up.1 - mn_down.1) != (0, 1) {
        return Err(format!(
            "branch endpoints {mn_up:?} and {mn_down:?} are not vertically adjacent"
        ));
    }
    let mut samples = tr_up.samples;
    samples.extend(tr_down.samples);
    Ok((
        CircleEvidence::Chain {
            up: mn_up,
            down: mn_down,
        },
        samples,
    ))
}

fn strip_check(
    geom: TorusGeometry,
    samples: &[(f64, [f64; 2])],
    mu1: f64,
    delta: f64,
    eta: f64,
) -> StripCheck {
    let w = delta * eta;
    let pad = delta * eta + 0.05 * mu1.abs();
    let lo = (mu1.abs() - w - pad).max(0.0).sqrt();
    let hi = (mu1.abs() + w + pad).sqrt();
    let mut worst = f64::INFINITY;
    for (_, z) in samples {
        let c1 = z[0] - geom.l1 * (z[0] / geom.l1).round();
        let c2 = z[1] - geom.l2 * (z[1] / geom.l2).round();
        if c2.abs() <= eta {
            let val = -c1;
            let margin = (val - lo).min(hi - val);
            if margin < worst {
                worst = margin;
            }
        }
    }
    if !worst.is_finite() {
        worst = 0.0;
    }
    StripCheck {
        lo,
        hi,
        held: worst >= 0.0,
        worst,
    }
}

/// Verify that the flow has a pair of vertical invariant circles: an
/// attracting one through the column of equilibria and a repelling one.
///
/// With four equilibria per cell both circles are chains of saddle
/// manifolds and nodes. With two equilibria only the attracting circle is a
/// chain; the repelling one is a rotational orbit, located by showing that
/// the backward vertical return map on the segment right of the saddle
/// column maps the segment into itself and then iterating to its fixed
/// point. The chain orbit is also required to stay in a narrow `-x1` strip
/// around `sqrt(-mu1)` while crossing the horizontal lattice band of
/// half-width `eta`.
pub fn verify_vertical_circles(
    f: &FieldSpec,
    mu1: f64,
    eta: f64,
    offset: f64,
    opts: &TraceOptions,
) -> VerticalCirclesReport {
    let mut rep = VerticalCirclesReport {
        ok: false,
        equilibria: 0,
        attracting: None,
        repelling: None,
        strip: None,
        reason: None,
    };
    let Some(geom) = f.geometry() else {
        rep.reason = Some("field has no torus geometry".into());
        return rep;
    };
    if mu1 >= 0.0 {
        rep.reason = Some("needs mu1 < 0 so the equilibrium column exists".into());
        return rep;
    }
    let s1 = (-mu1).sqrt();
    let eqs = find_equilibria(f, Rect::fundamental_domain(geom), &FindOptions::default());
    rep.equilibria = eqs.len();
    let (sinks, sources, saddles_n) = census(&eqs);
    let delta = f.coupling_bound();
    let int_opts = IntegratorOptions::default();
    let mut failures: Vec<String> = Vec::new();

    if eqs.len() == 4 && sinks == 1 && sources == 1 && saddles_n == 2 {
        match tartan_saddles(f, &eqs) {
            Err(e) => failures.push(e.to_string()),
            Ok((upright, flat)) => {
                match chain_evidence(f, &upright, false, &eqs, offset, opts) {
                    Ok((ev, samples)) => {
                        rep.strip = Some(strip_check(geom, &samples, mu1, delta, eta));
                        rep.attracting = Some(ev);
                    }
                    Err(e) => failures.push(format!("attracting chain: {e}")),
                }
                match chain_evidence(f, &flat, true, &eqs, offset, opts) {
                    Ok((ev, _)) => rep.repelling = Some(ev),
                    Err(e) => failures.push(format!("repelling chain: {e}")),
                }
            }
        }
    } else if eqs.len() == 2 && sinks == 1 && saddles_n == 1 {
        let saddle = *eqs
            .iter()
            .find(|e| e.kind == EquilibriumKind::Saddle)
            .expect("census says one saddle");
        match chain_evidence(f, &saddle, false, &eqs, offset, opts) {
            Ok((ev, samples)) => {
                rep.strip = Some(strip_check(geom, &samples, mu1, delta, eta));
                rep.attracting = Some(ev);
            }
            Err(e) => failures.push(format!("attracting chain: {e}")),
        }
        // Repelling circle via the backward vertical return map on the
        // section x2 = eta, one lattice row per application.
        let center1 = |x: f64| x - geom.l1 * (x / geom.l1).round();
        let run = || -> Result<CircleEvidence, String> {
            let d_branch =
                signed_branch(f, &saddle, false, true, offset).map_err(|e| e.to_string())?;
            let base2 = geom.l2 * (saddle.x2 / geom.l2).round();
            let level = base2 + eta;
            if saddle.x2 >= level {
                return Err("saddle sits above the return section".into());
            }
            let d_hit = integrate_to_section(
                f,
                d_branch.launch_point(),
                PlaneSection::horizontal(level),
                1,
                opts.tol,
                opts.t_budget,
                &int_opts,
            )
            .map_err(|e| format!("upward branch: {e}"))?;
            let x1_d = center1(d_hit.point.x1);
            let j_lo = x1_d + 0.15 * s1;
            let j_hi = 2.0 * s1;
            if !(j_lo < s1 && s1 < j_hi) {
                return Err(format!(
                    "return segment [{j_lo:.4}, {j_hi:.4}] does not straddle sqrt(-mu1)"
                ));
            }
            let reversed = f.clone().time_reversed();
            let map = |x1: f64| -> Result<f64, String> {
                let hit = integrate_to_section(
                    &reversed,
                    CoverPoint::new(x1, level),
                    PlaneSection::horizontal(level - geom.l2),
                    -1,
                    opts.tol,
                    opts.t_budget,
                    &int_opts,
                )
                .map_err(|e| format!("return map at x1 = {x1:.4}: {e}"))?;
                Ok(center1(hit.point.x1))
            };
            // The segment must map strictly into itself.
            for k in 0..5 {
                let x = j_lo + (j_hi - j_lo) * k as f64 / 4.0;
                let r = map(x)?;
                if !(r > j_lo && r < j_hi) {
                    return Err(format!(
                        "return map sends {x:.4} to {r:.4}, outside [{j_lo:.4}, {j_hi:.4}]"
                    ));
                }
            }
            let mut x = s1;
            let mut converged = false;
            for _ in 0..60 {
                let r = map(x)?;
                let dx = r - x;
                x = r;
                if dx.abs() < 1e-10 * s1.max(1e-3) {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err("return-map iteration did not converge".into());
            }
            let hit = integrate_to_section(
                &reversed,
                CoverPoint::new(x, level),
                PlaneSection::horizontal(level - geom.l2),
                -1,
                opts.tol,
                opts.t_budget,
                &int_opts,
            )
            .map_err(|e| e.to_string())?;
            let period = hit.time;
            // Growth of the return map at the fixed point: integrate the
            // divergence along the cycle (exact for a section fixed point).
            let rhs3 = |_t: f64, y: &[f64; 3]| {
                let p = CoverPoint::new(y[0], y[1]);
                let v = reversed.velocity(p);
                [v[0], v[1], reversed.divergence(p)]
            };
            let (y_end, _) = integrate_adaptive(
                rhs3,
                [x, level, 0.0],
                period,
                opts.tol,
                opts.tol,
                &int_opts,
                |_| StepControl::Continue,
            )
            .map_err(|e| e.to_string())?;
            let backward_multiplier = y_end[2].exp();
            if !(backward_multiplier < 1.0) {
                return Err(format!(
                    "backward return map is not contracting (multiplier {backward_multiplier:.4})"
                ));
            }
            Ok(CircleEvidence::Orbit {
                x1: x,
                x2: center1(level - base2),
                period,
                multiplier: 1.0 / backward_multiplier,
            })
        };
        match run() {
            Ok(ev) => rep.repelling = Some(ev),
            Err(e) => failures.push(format!("repelling orbit: {e}")),
        }
    } else {
        failures.push(format!(
            "census (sinks, sources, saddles) = ({sinks}, {sources}, {saddles_n}) of {} \
             equilibria; need (1, 1, 2) of 4 or (1, 0, 1) of 2",
            eqs.len()
        ));
    }

    if let Some(strip) = &rep.strip {
        if !strip.held {
            failures.push(format!(
                "chain orbit left the -x1 strip [{:.4}, {:.4}] (worst margin {:.2e})",
                strip.lo, strip.hi, strip.worst
            ));
        }
    }
    if failures.is_empty() && rep.attracting.is_some() && rep.repelling.is_some() {
        rep.ok = true;
    } else if !failures.is_empty() {
        rep.reason = Some(failures.join("; "));
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldSpec;
    use crate::geometry::TorusGeometry;
    use crate::integrate::integrate;

    fn tartan_field() -> FieldSpec {
        FieldSpec::explicit_family_mu(-0.05, -0.05, 0.01, 0.006)
    }

    fn tartan_equilibria(f: &FieldSpec) -> Vec<Equilibrium> {
        let geom = f.geometry().unwrap();
        find_equilibria(f, Rect::fundamental_domain(geom), &FindOptions::default())
    }

    #[test]
    fn labeled_branch_directions_follow_the_coupling_tilt() {
        let f = tartan_field();
        let eqs = tartan_equilibria(&f);
        let h = default_offset(0.01, 0.006);
        let d = labeled_branch(&f, &eqs, BranchLabel::D, h).unwrap();
        let c = labeled_branch(&f, &eqs, BranchLabel::C, h).unwrap();
        let b = labeled_branch(&f, &eqs, BranchLabel::B, h).unwrap();
        let a = labeled_branch(&f, &eqs, BranchLabel::A, h).unwrap();
        assert!(!d.stable && !b.stable && a.stable && c.stable);
        // D: upward, tilted slightly right; C: leftward, tilted slightly up.
        assert!(d.direction[1] > 0.9 && d.direction[0] > 0.0);
        assert!(c.direction[0] < -0.9 && c.direction[1] > 0.0);
        // B: rightward, tilted slightly up; A: downward, tilted slightly right.
        assert!(b.direction[0] > 0.9 && b.direction[1] > 0.0);
        assert!(a.direction[1] < -0.9 && a.direction[0] > 0.0);
        // C and D share a saddle; A and B share the other.
        assert!((c.saddle.x1 - d.saddle.x1).abs() < 1e-12);
        assert!((a.saddle.x1 - b.saddle.x1).abs() < 1e-12);
        assert!((c.saddle.x1 - a.saddle.x1).abs() > 1e-3);
    }

    #[test]
    fn uncoupled_tartan_branches_hit_in_cell_nodes() {
        let geom = TorusGeometry::square_2pi();
        let f = FieldSpec::uncoupled_snic(geom, -0.04, -0.04);
        let eqs = tartan_equilibria(&f);
        assert_eq!(census(&eqs), (1, 1, 2));
        let opts = TraceOptions::for_field(&f);
        let h = 1e-7;
        for (label, want) in [
            (BranchLabel::D, ConnectionTarget::SinkTranslate { m: 0, n: 0 }),
            (BranchLabel::B, ConnectionTarget::SinkTranslate { m: 0, n: 0 }),
            (
                BranchLabel::A,
                ConnectionTarget::SourceTranslate { m: 0, n: 0 },
            ),
            (
                BranchLabel::C,
                ConnectionTarget::SourceTranslate { m: 0, n: 0 },
            ),
        ] {
            let branch = labeled_branch(&f, &eqs, label, h).unwrap();
            let trace = trace_branch(&f, &branch, &eqs, &opts).unwrap();
            assert_eq!(trace.target, want, "label {label:?}");
        }
    }

    #[test]
    fn coupled_tartan_report_is_ok() {
        let f = tartan_field();
        let opts = TraceOptions::for_field(&f);
        let report = verify_basic_tartan(&f, default_offset(0.01, 0.006), &opts);
        assert!(report.ok, "reason: {:?}", report.reason);
        assert_eq!(
            (report.sinks, report.sources, report.saddles),
            (1, 1, 2)
        );
        assert_eq!(report.branches.len(), 8);
    }

    #[test]
    fn no_tartan_without_equilibria() {
        let f = FieldSpec::explicit_family_mu(0.05, 0.02, 0.01, 0.006);
        let opts = TraceOptions::for_field(&f);
        let report = verify_basic_tartan(&f, default_offset(0.01, 0.006), &opts);
        assert!(!report.ok);
        assert_eq!((report.sinks, report.sources, report.saddles), (0, 0, 0));
        assert!(report.reason.is_some());
    }

    #[test]
    fn trace_is_robust_to_the_launch_offset() {
        let f = tartan_field();
        let eqs = tartan_equilibria(&f);
        let opts = TraceOptions::for_field(&f);
        let h = 1e-5;
        let d_coarse = labeled_branch(&f, &eqs, BranchLabel::D, h).unwrap();
        let d_fine = labeled_branch(&f, &eqs, BranchLabel::D, h / 2.0).unwrap();
        let t_coarse = trace_branch(&f, &d_coarse, &eqs, &opts).unwrap();
        let t_fine = trace_branch(&f, &d_fine, &eqs, &opts).unwrap();
        assert_eq!(t_coarse.target, t_fine.target);
        let g_coarse = tartan_gap(&f, GapPair::UpwardToStable, 0.5, h, &opts).unwrap();
        let g_fine = tartan_gap(&f, GapPair::UpwardToStable, 0.5, h / 2.0, &opts).unwrap();
        assert!(
            (g_coarse - g_fine).abs() < 10.0 * h,
            "gaps {g_coarse} vs {g_fine}"
        );
    }

    #[test]
    fn trace_commutes_with_lattice_translation() {
        let f = tartan_field();
        let geom = f.geometry().unwrap();
        let eqs = tartan_equilibria(&f);
        let opts = TraceOptions::for_field(&f);
        let d = labeled_branch(&f, &eqs, BranchLabel::D, 1e-6).unwrap();
        let d_shift = d.translated(geom, 1, 1);
        let t0 = trace_branch(&f, &d, &eqs, &opts).unwrap();
        let t1 = trace_branch(&f, &d_shift, &eqs, &opts).unwrap();
        let (ConnectionTarget::SinkTranslate { m: m0, n: n0 },) = (t0.target,) else {
            panic!("unexpected target {:?}", t0.target);
        };
        let (ConnectionTarget::SinkTranslate { m: m1, n: n1 },) = (t1.target,) else {
            panic!("unexpected target {:?}", t1.target);
        };
        // Lattice indices are measured from the fundamental-domain
        // representative, so the shifted launch lands one cell over.
        assert_eq!((m1 - m0, n1 - n0), (1, 1));
        // Both traces stop inside the confirmation ball of their sink
        // translate, so the endpoints agree to that radius.
        let capture_ball = 0.25 * opts.capture_radius;
        assert!((t1.end.x1 - t0.end.x1 - geom.l1).abs() < 2.0 * capture_ball);
        assert!((t1.end.x2 - t0.end.x2 - geom.l2).abs() < 2.0 * capture_ball);
    }

    #[test]
    fn slow_axis_passage_matches_the_tanh_model() {
        // Straight-line slow passage through a near-fold axis: for
        // xdot = mu + x^2 with mu < 0, the orbit through 0 is
        // -sqrt(-mu) tanh(sqrt(-mu) t).
        let f = FieldSpec::reduced_box(-0.01, 0.0, 0.0, 0.0);
        let root = 0.1_f64;
        let traj = integrate(
            &f,
            CoverPoint::new(0.0, 0.0),
            30.0,
            1e-12,
            &IntegratorOptions::default(),
        )
        .unwrap();
        for t in [5.0, 10.0, 20.0, 30.0] {
            let model = -root * (root * t).tanh();
            let got = traj.sample_at(t)[0];
            assert!(
                (got - model).abs() < 1e-8,
                "t = {t}: got {got}, model {model}"
            );
        }
    }

    #[test]
    fn cone_slope_rate_pushes_outward_on_the_boundary() {
        let geom = TorusGeometry::square_2pi();
        let (mu1, mu2) = (0.1, -0.04);
        let f = FieldSpec::uncoupled_snic(geom, mu1, mu2);
        let s0 = (-mu2).sqrt();
        // Height of the repelling circle: 4 sin^2(x2 / 2) = -mu2.
        let x2 = 2.0 * (0.5 * s0).asin();
        let x1 = 1.3;
        let p = CoverPoint::new(x1, x2);
        let vbar = mu1.max(-mu2) + (f.uncoupled_axis_speed(0, x1) - mu1);
        let vbar_deriv = 2.0 * x1.sin();
        let up = cone_slope_rate(&f, p, vbar, vbar_deriv, s0);
        let down = cone_slope_rate(&f, p, vbar, vbar_deriv, -s0);
        // Uncoupled: sdot = P2'(x2) * s, so the boundary slopes move apart.
        let expect = 2.0 * x2.sin() * s0;
        assert!((up - expect).abs() < 1e-12, "up {up} vs {expect}");
        assert!((down + expect).abs() < 1e-12);
        assert!(up > 0.07 && down < -0.07);
    }

    #[test]
    fn cone_check_uncoupled_matches_the_circle_rate() {
        let geom = TorusGeometry::square_2pi();
        let f = FieldSpec::uncoupled_snic(geom, 0.1, -0.04);
        let report = cone_condition_check(&f, 0.1, -0.04, &ConeOptions::default()).unwrap();
        assert!(report.min_slack >= -1e-9, "slack {}", report.min_slack);
        assert!(report.time_inside > 10.0);
        // Expansion should track P2' across the annulus, close to 2 sqrt(-mu2).
        let rate = 2.0 * 0.04_f64.sqrt();
        assert!(report.min_expansion > 0.95 * rate * 0.968);
        assert!(report.max_expansion < 1.05 * rate * 1.018);
    }

    #[test]
    fn cone_check_coupled_stays_in_band() {
        let geom = TorusGeometry::square_2pi();
        let f = FieldSpec::coupled_snic(geom, 0.15, -0.12, 0.01, 0.006);
        let report = cone_condition_check(&f, 0.15, -0.12, &ConeOptions::default()).unwrap();
        let rate = 2.0 * 0.12_f64.sqrt();
        assert!(report.min_slack >= -1e-9, "slack {}", report.min_slack);
        assert!(
            report.min_expansion > 0.75 * rate && report.max_expansion < 1.25 * rate,
            "expansion [{}, {}] vs rate {rate}",
            report.min_expansion,
            report.max_expansion
        );
    }

    #[test]
    fn vertical_circles_with_four_equilibria() {
        let geom = TorusGeometry::square_2pi();
        let f = FieldSpec::coupled_snic(geom, -0.01, -0.02, 0.02, 0.012);
        let opts = TraceOptions::for_field(&f);
        let rep = verify_vertical_circles(&f, -0.01, 0.15, default_offset(0.02, 0.012), &opts);
        assert!(rep.ok, "reason: {:?}", rep.reason);
        assert_eq!(rep.equilibria, 4);
        assert!(matches!(rep.attracting, Some(CircleEvidence::Chain { .. })));
        assert!(matches!(rep.repelling, Some(CircleEvidence::Chain { .. })));
        let strip = rep.strip.unwrap();
        assert!(strip.held, "strip margin {}", strip.worst);
    }

    #[test]
    fn vertical_circles_with_two_equilibria() {
        let geom = TorusGeometry::square_2pi();
        let f = FieldSpec::coupled_snic(geom, -0.01, 0.0005, 0.02, 0.012);
        let opts = TraceOptions::for_field(&f);
        let rep = verify_vertical_circles(&f, -0.01, 0.15, default_offset(0.02, 0.012), &opts);
        assert!(rep.ok, "reason: {:?}", rep.reason);
        assert_eq!(rep.equilibria, 2);
        assert!(matches!(rep.attracting, Some(CircleEvidence::Chain { .. })));
        let Some(CircleEvidence::Orbit { multiplier, .. }) = rep.repelling else {
            panic!("expected an orbit, got {:?}", rep.repelling);
        };
        assert!(multiplier > 1.0, "multiplier {multiplier}");
    }

    #[test]
    fn heteroclinic_roots_mirror_across_the_diagonal() {
        // For a swap-symmetric coupling the connection curve of the upward
        // pair and that of the rightward pair are reflections of each other
        // across mu1 = mu2, so a vertical slice and the mirrored horizontal
        // slice find the same root.
        let d = 0.01;
        let a = -2.75e-4;
        let bracket = (-3.5e-4, -2.5e-4);
        let opts = TraceOptions::for_field(&FieldSpec::explicit_family_mu(a, a, d, d));
        let vertical = find_heteroclinic(
            |mu2| FieldSpec::explicit_family_mu(a, mu2, d, d),
            GapPair::UpwardToStable,
            0.5,
            1e-7,
            bracket,
            1e-9,
            &opts,
        )
        .unwrap();
        let horizontal = find_heteroclinic(
            |mu1| FieldSpec::explicit_family_mu(mu1, a, d, d),
            GapPair::RightwardToStable,
            0.5,
            1e-7,
            bracket,
            1e-9,
            &opts,
        )
        .unwrap();
        assert!(
            (vertical.param - horizontal.param).abs() < 1e-6,
            "roots {} vs {}",
            vertical.param,
            horizontal.param
        );
        assert!(vertical.gap.abs() < 1e-6, "residual gap {}", vertical.gap);
    }

    #[test]
    fn gap_changes_smoothly_and_brackets_error_when_one_signed() {
        let f = tartan_field();
        let opts = TraceOptions::for_field(&f);
        let g = tartan_gap(&f, GapPair::UpwardToStable, 0.5, 1e-6, &opts).unwrap();
        assert!(g.is_finite());
        // Deep in the locked region the connection gap keeps one sign.
        let family = |mu2: f64| FieldSpec::explicit_family_mu(-0.05, mu2, 0.01, 0.006);
        let err = find_heteroclinic(
            family,
            GapPair::UpwardToStable,
            0.5,
            1e-6,
            (-0.06, -0.05),
            1e-8,
            &opts,
        )
        .unwrap_err();
        assert!(matches!(err, SeparatrixError::Bracket { .. }));
    }
}
