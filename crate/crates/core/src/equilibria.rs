//! Equilibrium location and linear classification.
//!
//! Equilibria are found by Newton iteration from a uniform seed grid and
//! deduplicated by (torus) distance. Classification uses the determinant and
//! trace of the Jacobian:
//!
//! * `det < 0`: saddle;
//! * `det > 0, tr < 0`: sink; `det > 0, tr > 0`: source;
//! * `|det| <= tol_det, |tr| > tol_tr`: saddle-node;
//! * `|det| <= tol_det, |tr| <= tol_tr`: degenerate.
//!
//! For the reduced box field the Jacobian is `[[2 x1, delta1], [delta2, 2 x2]]`,
//! so `det = 4 x1 x2 - delta1 delta2`, `tr = 2 (x1 + x2)`, the eigenvalues are
//! `x1 + x2 +/- sqrt((x2 - x1)^2 + delta1 delta2)` and the eigenvector slopes
//! `(x2 - x1 +/- sqrt((x2 - x1)^2 + delta1 delta2)) / delta1`; the Jacobian is
//! symmetric in the inner product weighted by `(1/delta1, 1/delta2)`, so for
//! positive coupling products the spectrum is always real and the two
//! eigenvectors are orthogonal in that inner product, with slope product
//! `-delta2/delta1`.

use crate::field::FieldSpec;
use crate::geometry::{CoverPoint, TorusGeometry};
use rayon::prelude::*;
use serde::Serialize;

/// Axis-aligned search rectangle.
#[derive(Debug, Clone, Copy)]
pub struct Rect {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Rect {
    pub fn new(lo: [f64; 2], hi: [f64; 2]) -> Self {
        Rect { lo, hi }
    }

    /// Fundamental domain of a torus.
    pub fn fundamental_domain(geom: TorusGeometry) -> Self {
        Rect::new([0.0, 0.0], [geom.l1, geom.l2])
    }

    /// Region guaranteed to contain every equilibrium of a reduced box field
    /// with `|mu_j| <= mu_bound`: from `x_j^2 = -mu_j - delta_j x_k` each
    /// coordinate is bounded by the positive root of `R^2 - delta R - mu_bound`.
    pub fn reduced_box_bound(mu_bound: f64, delta1: f64, delta2: f64) -> Self {
        let d = delta1.abs().max(delta2.abs());
        let r = 1.3 * (0.5 * (d + (d * d + 4.0 * mu_bound.abs()).sqrt())).max(1e-3);
        Rect::new([-r, -r], [r, r])
    }

    pub fn contains(&self, p: CoverPoint, margin: f64) -> bool {
        p.x1 >= self.lo[0] - margin
            && p.x1 <= self.hi[0] + margin
            && p.x2 >= self.lo[1] - margin
            && p.x2 <= self.hi[1] + margin
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EquilibriumKind {
    Sink,
    Source,
    Saddle,
    SaddleNode,
    Degenerate,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Equilibrium {
    pub x1: f64,
    pub x2: f64,
    pub det: f64,
    pub tr: f64,
    pub kind: EquilibriumKind,
}

impl Equilibrium {
    pub fn point(&self) -> CoverPoint {
        CoverPoint::new(self.x1, self.x2)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FindOptions {
    pub seeds_per_axis: usize,
    /// Residual tolerance on the max-norm of the velocity.
    pub tol_root: f64,
    pub max_iter: usize,
}

impl Default for FindOptions {
    fn default() -> Self {
        FindOptions {
            seeds_per_axis: 12,
            tol_root: 1e-12,
            max_iter: 60,
        }
    }
}

fn frobenius(j: &[[f64; 2]; 2]) -> f64 {
    (j[0][0] * j[0][0] + j[0][1] * j[0][1] + j[1][0] * j[1][0] + j[1][1] * j[1][1]).sqrt()
}

/// Degeneracy band for the determinant, scaled by the squared Jacobian size.
pub fn tol_det(j: &[[f64; 2]; 2]) -> f64 {
    1e-8 * frobenius(j).powi(2).max(1.0)
}

/// Degeneracy band for the trace, scaled by the Jacobian size.
pub fn tol_tr(j: &[[f64; 2]; 2]) -> f64 {
    1e-8 * frobenius(j).max(1.0)
}

fn classify(det: f64, tr: f64, j: &[[f64; 2]; 2]) -> EquilibriumKind {
    let td = tol_det(j);
    if det.abs() <= td {
        if tr.abs() <= tol_tr(j) {
            EquilibriumKind::Degenerate
        } else {
            EquilibriumKind::SaddleNode
        }
    } else if det < 0.0 {
        EquilibriumKind::Saddle
    } else if tr < 0.0 {
        EquilibriumKind::Sink
    } else {
        EquilibriumKind::Source
    }
}

/// Newton iteration for a root of the velocity field from one seed.
fn newton_root(
    f: &FieldSpec,
    seed: CoverPoint,
    region: &Rect,
    opts: &FindOptions,
) -> Option<CoverPoint> {
    let mut p = seed;
    let escape = 2.0 * ((region.hi[0] - region.lo[0]) + (region.hi[1] - region.lo[1]));
    for _ in 0..opts.max_iter {
        let v = f.velocity(p);
        if !v[0].is_finite() || !v[1].is_finite() {
            return None;
        }
        if v[0].abs().max(v[1].abs()) <= opts.tol_root {
            return Some(p);
        }
        let j = f.jacobian(p);
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det.abs() < 1e-14 * frobenius(&j).powi(2).max(1e-30) {
            return None;
        }
        let dx1 = (v[0] * j[1][1] - v[1] * j[0][1]) / det;
        let dx2 = (v[1] * j[0][0] - v[0] * j[1][0]) / det;
        p = CoverPoint::new(p.x1 - dx1, p.x2 - dx2);
        if !region.contains(p, escape) {
            return None;
        }
    }
    // Accept slow (fold-type) convergence if the residual is nearly there.
    let v = f.velocity(p);
    if v[0].abs().max(v[1].abs()) <= 100.0 * opts.tol_root {
        Some(p)
    } else {
        None
    }
}

/// Find all equilibria of `f` inside `region`.
///
/// For torus fields the region should be the fundamental domain and
/// deduplication uses torus distance; for the planar reduced box field it
/// uses Euclidean distance. Roots closer than `10 * tol_root` collapse, and
/// near-degenerate roots additionally collapse at a folding-scale radius
/// (Newton scatter around a multiple root is `tol_root^(1/2)` to
/// `tol_root^(1/3)` wide, far above the plain dedup radius).
pub fn find_equilibria(f: &FieldSpec, region: Rect, opts: &FindOptions) -> Vec<Equilibrium> {
    let geom = f.geometry();
    let n = opts.seeds_per_axis.max(2);
    let mut roots: Vec<CoverPoint> = Vec::new();
    let dist = |a: CoverPoint, b: CoverPoint| match geom {
        Some(g) => g.distance(a, b),
        None => a.euclid_distance(b),
    };
    // Newton roots from different seeds scatter by roughly the conditioning
    // number times the step tolerance, so dedup well above that; genuinely
    // distinct equilibria this close only occur inside the degeneracy band
    // handled by the fold merge below.
    let dedup_r = (10.0 * opts.tol_root).max(opts.tol_root.sqrt());
    for i in 0..n {
        for k in 0..n {
            // Interior-offset grid: avoids seeding both identified edges of
            // a fundamental domain.
            let sx = region.lo[0]
                + (region.hi[0] - region.lo[0]) * (i as f64 + 0.5) / n as f64;
            let sy = region.lo[1]
                + (region.hi[1] - region.lo[1]) * (k as f64 + 0.5) / n as f64;
            let Some(mut root) = newton_root(f, CoverPoint::new(sx, sy), &region, opts) else {
                continue;
            };
            if let Some(g) = geom {
                root = g.project(root);
            } else if !region.contains(root, 1e-9) {
                continue;
            }
            if !roots.iter().any(|r| dist(*r, root) < dedup_r) {
                roots.push(root);
            }
        }
    }
    let mut eqs: Vec<Equilibrium> = roots
        .into_iter()
        .map(|p| {
            let j = f.jacobian(p);
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            let tr = j[0][0] + j[1][1];
            Equilibrium {
                x1: p.x1,
                x2: p.x2,
                det,
                tr,
                kind: classify(det, tr, &j),
            }
        })
        .collect();

    // Collapse Newton scatter around folds and cusps: distinct reported
    // roots that are all within the degeneracy band and closer than the
    // multiple-root resolution limit are one (degenerate) equilibrium.
    let fold_r = 20.0 * opts.tol_root.powf(1.0 / 3.0);
    let mut merged: Vec<Equilibrium> = Vec::new();
    for eq in eqs.drain(..) {
        let near_degenerate = matches!(
            eq.kind,
            EquilibriumKind::SaddleNode | EquilibriumKind::Degenerate
        );
        if let Some(prev) = merged.iter_mut().find(|m| {
            dist(m.point(), eq.point()) < fold_r
                && near_degenerate
                && matches!(m.kind, EquilibriumKind::SaddleNode | EquilibriumKind::Degenerate)
        }) {
            // Keep the representative with the smaller residual.
            let res_prev = {
                let v = f.velocity(prev.point());
                v[0].abs().max(v[1].abs())
            };
            let res_new = {
                let v = f.velocity(eq.point());
                v[0].abs().max(v[1].abs())
            };
            if res_new < res_prev {
                *prev = eq;
            }
        } else {
            merged.push(eq);
        }
    }
    merged.sort_by(|a, b| (a.x1, a.x2).partial_cmp(&(b.x1, b.x2)).unwrap());
    merged
}

/// Eigen-structure of an equilibrium.
#[derive(Debug, Clone, Serialize)]
pub struct EigenData {
    /// Eigenvalues as `(re, im)` pairs, sorted by real part (descending).
    pub eigenvalues: [(f64, f64); 2],
    /// Unit eigenvectors (rows), present only for real spectra.
    pub eigenvectors: Option<[[f64; 2]; 2]>,
    /// Eigenvector slopes `xi_2 / xi_1`, `None` when an eigenvector is
    /// vertical (within tolerance) or the spectrum is complex.
    pub slopes: Option<[f64; 2]>,
}

/// Eigen-data at an equilibrium. Uses the closed forms for the reduced box
/// field (nonzero `delta1`, real spectrum) and the numeric 2x2 path otherwise.
pub fn eigen_data(f: &FieldSpec, eq: &Equilibrium) -> EigenData {
    if let FieldSpec::ReducedBox(rb) = f {
        let (x1, x2) = (eq.x1, eq.x2);
        let disc = (x2 - x1) * (x2 - x1) + rb.delta1 * rb.delta2;
        if disc >= 0.0 && rb.delta1.abs() > 1e-12 {
            let root = disc.sqrt();
            let lp = x1 + x2 + root;
            let lm = x1 + x2 - root;
            let sp = (x2 - x1 + root) / rb.delta1;
            let sm = (x2 - x1 - root) / rb.delta1;
            let unit = |s: f64| {
                let n = (1.0 + s * s).sqrt();
                [1.0 / n, s / n]
            };
            return EigenData {
                eigenvalues: [(lp, 0.0), (lm, 0.0)],
                eigenvectors: Some([unit(sp), unit(sm)]),
                slopes: Some([sp, sm]),
            };
        }
    }
    eigen_numeric(&f.jacobian(eq.point()))
}

/// Direct eigensolve of a 2x2 Jacobian.
pub fn eigen_numeric(j: &[[f64; 2]; 2]) -> EigenData {
    let tr = j[0][0] + j[1][1];
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let disc = tr * tr - 4.0 * det;
    if disc < 0.0 {
        let im = (-disc).sqrt() / 2.0;
        return EigenData {
            eigenvalues: [(tr / 2.0, im), (tr / 2.0, -im)],
            eigenvectors: None,
            slopes: None,
        };
    }
    let root = disc.sqrt();
    let l = [(tr + root) / 2.0, (tr - root) / 2.0];
    let mut vecs = [[0.0; 2]; 2];
    for (idx, lam) in l.iter().enumerate() {
        // Rows of (J - lam I) are both orthogonal to the eigenvector; use
        // whichever is better conditioned.
        let r1 = [j[0][0] - lam, j[0][1]];
        let r2 = [j[1][0], j[1][1] - lam];
        let n1 = r1[0].hypot(r1[1]);
        let n2 = r2[0].hypot(r2[1]);
        let v = if n1 >= n2 {
            [-r1[1], r1[0]]
        } else {
            [-r2[1], r2[0]]
        };
        let n = v[0].hypot(v[1]);
        vecs[idx] = if n > 0.0 {
            [v[0] / n, v[1] / n]
        } else {
            // Scalar matrix: any direction is an eigenvector.
            if idx == 0 {
                [1.0, 0.0]
            } else {
                [0.0, 1.0]
            }
        };
    }
    let slope = |v: [f64; 2]| {
        if v[0].abs() > 1e-12 {
            Some(v[1] / v[0])
        } else {
            None
        }
    };
    let slopes = match (slope(vecs[0]), slope(vecs[1])) {
        (Some(a), Some(b)) => Some([a, b]),
        _ => None,
    };
    EigenData {
        eigenvalues: [(l[0], 0.0), (l[1], 0.0)],
        eigenvectors: Some(vecs),
        slopes,
    }
}

/// Inner product in which the reduced box Jacobian is symmetric:
/// `<xi, zeta> = xi1 zeta1 / delta1 + xi2 zeta2 / delta2`.
pub fn weighted_inner(delta1: f64, delta2: f64, xi: [f64; 2], zeta: [f64; 2]) -> f64 {
    xi[0] * zeta[0] / delta1 + xi[1] * zeta[1] / delta2
}

/// Full serialized record of an equilibrium for JSON output.
#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumRecord {
    pub x1: f64,
    pub x2: f64,
    pub det: f64,
    pub tr: f64,
    pub kind: EquilibriumKind,
    /// `(re, im)` pairs.
    pub eigenvalues: [(f64, f64); 2],
    pub slopes: Option<[f64; 2]>,
}

pub fn record(f: &FieldSpec, eq: &Equilibrium) -> EquilibriumRecord {
    let ed = eigen_data(f, eq);
    EquilibriumRecord {
        x1: eq.x1,
        x2: eq.x2,
        det: eq.det,
        tr: eq.tr,
        kind: eq.kind,
        eigenvalues: ed.eigenvalues,
        slopes: ed.slopes,
    }
}

/// The natural search region for a field's equilibria: the fundamental
/// domain on a torus, or the parameter-scaled bounding box for the
/// unbounded reduced family at the given parameter values.
pub fn natural_region(f: &FieldSpec, mu1: f64, mu2: f64) -> Rect {
    match f.geometry() {
        Some(g) => Rect::fundamental_domain(g),
        None => {
            let bound = mu1.abs().max(mu2.abs());
            let (d1, d2) = match f {
                FieldSpec::ReducedBox(rb) => (rb.delta1, rb.delta2),
                _ => (f.coupling_bound(), f.coupling_bound()),
            };
            Rect::reduced_box_bound(bound, d1, d2)
        }
    }
}

/// Node `(mu1, mu2)` of a raster over `mu_rect`: column `c` of `nx` along
/// `mu1`, row `r` of `ny` along `mu2`, endpoints included.
pub fn grid_node(mu_rect: Rect, nx: usize, ny: usize, r: usize, c: usize) -> (f64, f64) {
    let mu1 = mu_rect.lo[0] + (mu_rect.hi[0] - mu_rect.lo[0]) * c as f64 / (nx.max(2) - 1) as f64;
    let mu2 = mu_rect.lo[1] + (mu_rect.hi[1] - mu_rect.lo[1]) * r as f64 / (ny.max(2) - 1) as f64;
    (mu1, mu2)
}

/// Raster of equilibrium counts over a rectangle of `(mu1, mu2)` values for
/// a parameter family. Cells are processed in parallel; the output order is
/// row-major and deterministic.
pub fn equilibrium_count_map(
    family: &(impl Fn(f64, f64) -> FieldSpec + Sync),
    mu_rect: Rect,
    nx: usize,
    ny: usize,
    opts: &FindOptions,
) -> Vec<(f64, f64, usize)> {
    let cells: Vec<(usize, usize)> = (0..ny)
        .flat_map(|r| (0..nx).map(move |c| (r, c)))
        .collect();
    cells
        .into_par_iter()
        .map(|(r, c)| {
            let (mu1, mu2) = grid_node(mu_rect, nx, ny, r, c);
            let f = family(mu1, mu2);
            let region = natural_region(&f, mu1, mu2);
            (mu1, mu2, find_equilibria(&f, region, opts).len())
        })
        .collect()
}
