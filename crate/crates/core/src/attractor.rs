//! Attractor census for torus fields.
//!
//! A field's attractors are summarized as a label: the set of attracting
//! equilibria, the set of verified attracting rotational periodic orbits
//! (one representative per homology type), and a flag for quasiperiodic
//! evidence (orbits that wind without settling on a verified periodic
//! orbit). Two or more distinct kinds in the label mean coexisting
//! attractors, the hysteresis-producing configuration.

use rayon::prelude::*;
use serde::Serialize;

use crate::equilibria::{find_equilibria, Equilibrium, EquilibriumKind, FindOptions, Rect};
use crate::field::FieldSpec;
use crate::geometry::CoverPoint;
use crate::rotation::{
    canonical_type, find_periodic_orbit, launch_grid, rational_direction, winding,
    OrbitSearchOptions, PeriodicOrbit,
};

#[derive(Debug, Clone, Copy)]
pub struct AttractorOptions {
    pub t_max: f64,
    pub tol: f64,
    /// Displacement below which a winding run counts as bounded.
    pub wind_threshold: f64,
    /// Displacement at which a winding run stops for direction measurement.
    pub stop_norm: f64,
    /// Largest homology denominator tried for rational locking.
    pub q_max: i64,
    pub starts_per_axis: usize,
    /// Margin below 1 required of the return-map multiplier before a
    /// periodic orbit counts as verified attracting.
    pub multiplier_margin: f64,
    pub orbit: OrbitSearchOptions,
}

impl Default for AttractorOptions {
    fn default() -> Self {
        AttractorOptions {
            t_max: 3_000.0,
            tol: 1e-9,
            wind_threshold: 2.0,
            stop_norm: 40.0,
            q_max: 12,
            starts_per_axis: 4,
            multiplier_margin: 1e-6,
            orbit: OrbitSearchOptions::default(),
        }
    }
}

/// The set of attractor kinds found for one field.
#[derive(Debug, Clone, Serialize)]
pub struct AttractorLabel {
    /// Attracting equilibria in the fundamental domain.
    pub sinks: Vec<Equilibrium>,
    /// Verified attracting rotational orbits, one per homology type.
    pub orbits: Vec<PeriodicOrbit>,
    /// True when some sampled orbit winds but settles on no verified
    /// periodic orbit: evidence of a quasiperiodic (or Denjoy) attractor.
    pub quasiperiodic: bool,
}

impl AttractorLabel {
    /// Number of distinct attractor kinds present: attracting equilibrium
    /// (counted once), each orbit homology type, quasiperiodic evidence.
    pub fn kinds(&self) -> usize {
        usize::from(!self.sinks.is_empty()) + self.orbits.len() + usize::from(self.quasiperiodic)
    }

    /// True when at least two distinct kinds of attractor coexist.
    pub fn coexistence(&self) -> bool {
        self.kinds() >= 2
    }

    pub fn has_sink(&self) -> bool {
        !self.sinks.is_empty()
    }

    /// The verified orbit whose homology type matches `(p, q)` up to
    /// reflection, if present.
    pub fn orbit_of_type(&self, p: i64, q: i64) -> Option<&PeriodicOrbit> {
        let want = canonical_type(p, q);
        self.orbits
            .iter()
            .find(|o| canonical_type(o.p, o.q) == want)
    }

    /// A verified attracting equilibrium and a verified attracting
    /// rotational orbit are both present.
    pub fn sink_and_orbit(&self) -> bool {
        self.has_sink() && !self.orbits.is_empty()
    }
}

/// Census of the attractors of one torus field from a stratified grid of
/// launch points: equilibrium kinds from the Jacobian, periodic orbits by
/// return-map iteration with a divergence-integral multiplier check.
pub fn attractor_classify(f: &FieldSpec, opts: &AttractorOptions) -> AttractorLabel {
    let geom = f.geometry().expect("attractor census needs a torus field");
    attractor_classify_from(f, &launch_grid(geom, opts.starts_per_axis), opts)
}

/// Attractor census using the given launch points.
pub fn attractor_classify_from(
    f: &FieldSpec,
    starts: &[CoverPoint],
    opts: &AttractorOptions,
) -> AttractorLabel {
    let geom = f.geometry().expect("attractor census needs a torus field");
    let eqs = find_equilibria(f, Rect::fundamental_domain(geom), &FindOptions::default());
    let sinks: Vec<Equilibrium> = eqs
        .iter()
        .filter(|e| e.kind == EquilibriumKind::Sink)
        .copied()
        .collect();
    let rest: Vec<CoverPoint> = eqs.iter().map(Equilibrium::point).collect();
    let rest_r = 1e-4 * geom.l1.min(geom.l2);

    let mut orbits: Vec<PeriodicOrbit> = Vec::new();
    let mut quasiperiodic = false;
    for &start in starts {
        let Ok(w) = winding(
            f,
            start,
            opts.t_max,
            opts.tol,
            opts.wind_threshold,
            opts.stop_norm,
            &rest,
        ) else {
            continue;
        };
        if w.bounded {
            continue;
        }
        // A run that wound for a while and then settled near an equilibrium
        // is a transient into a sink, not a rotational attractor.
        let end = geom.project(w.end);
        if rest.iter().any(|r| geom.distance(end, *r) < rest_r) {
            continue;
        }
        let tol_angle = 1.5 / w.norm().max(4.0);
        match rational_direction(w.v, opts.q_max, tol_angle) {
            Some((p, q)) => {
                if orbits
                    .iter()
                    .any(|o| canonical_type(o.p, o.q) == canonical_type(p, q))
                {
                    continue;
                }
                match find_periodic_orbit(f, p, q, w.end, &opts.orbit) {
                    Some(orb) if orb.multiplier < 1.0 - opts.multiplier_margin => orbits.push(orb),
                    _ => quasiperiodic = true,
                }
            }
            None => quasiperiodic = true,
        }
    }
    AttractorLabel {
        sinks,
        orbits,
        quasiperiodic,
    }
}

/// Options for the coexistence-horn search along the fold curve.
#[derive(Debug, Clone)]
pub struct HornSearchOptions {
    /// `mu1` bracket for the per-slice fold bisection; the low end must have
    /// equilibria and the high end none, else the slice is skipped.
    pub mu1_bracket: [f64; 2],
    pub bisect_iters: usize,
    /// Offset above the fold where the rotational attractor is anchored.
    pub anchor_offset: f64,
    /// Offsets below the fold probed in order; the orbit verified at one
    /// offset seeds the search at the next.
    pub inside_offsets: Vec<f64>,
    pub attractor: AttractorOptions,
}

impl Default for HornSearchOptions {
    fn default() -> Self {
        HornSearchOptions {
            mu1_bracket: [-0.06, 0.2],
            bisect_iters: 45,
            anchor_offset: 2e-3,
            inside_offsets: vec![1e-4, 5e-4, 1e-3, 2e-3],
            attractor: AttractorOptions {
                t_max: 10_000.0,
                stop_norm: 25.0,
                orbit: OrbitSearchOptions {
                    t_budget_per_return: 4_000.0,
                    ..OrbitSearchOptions::default()
                },
                ..AttractorOptions::default()
            },
        }
    }
}

/// A parameter point where a verified attracting equilibrium coexists with
/// a verified attracting rotational periodic orbit.
#[derive(Debug, Clone, Serialize)]
pub struct CoexistencePoint {
    pub mu1: f64,
    pub mu2: f64,
    pub sinks: usize,
    pub orbit: PeriodicOrbit,
}

fn horn_slice(
    family: &(impl Fn(f64, f64) -> FieldSpec + Sync),
    mu2: f64,
    opts: &HornSearchOptions,
) -> Vec<CoexistencePoint> {
    let Some(geom) = family(opts.mu1_bracket[0], mu2).geometry() else {
        return Vec::new();
    };
    let domain = Rect::fundamental_domain(geom);
    let count = |mu1: f64| {
        find_equilibria(&family(mu1, mu2), domain, &FindOptions::default()).len()
    };
    let (mut lo, mut hi) = (opts.mu1_bracket[0], opts.mu1_bracket[1]);
    if count(lo) == 0 || count(hi) > 0 {
        return Vec::new();
    }
    for _ in 0..opts.bisect_iters {
        let mid = 0.5 * (lo + hi);
        if count(mid) > 0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let fold = 0.5 * (lo + hi);
    // Anchor the rotational attractor just outside the fold, where its
    // basin is global and a blind census finds it.
    let anchor = attractor_classify(&family(fold + opts.anchor_offset, mu2), &opts.attractor);
    let Some(orb0) = anchor.orbits.first() else {
        return Vec::new();
    };
    let mut seed = CoverPoint::new(orb0.x1, orb0.x2);
    let mut out = Vec::new();
    for &e0 in &opts.inside_offsets {
        let mu1 = fold - e0;
        let f = family(mu1, mu2);
        let sinks = find_equilibria(&f, domain, &FindOptions::default())
            .iter()
            .filter(|e| e.kind == EquilibriumKind::Sink)
            .count();
        if sinks == 0 {
            continue;
        }
        match find_periodic_orbit(&f, orb0.p, orb0.q, seed, &opts.attractor.orbit) {
            Some(orbit) if orbit.multiplier < 1.0 - opts.attractor.multiplier_margin => {
                seed = CoverPoint::new(orbit.x1, orbit.x2);
                out.push(CoexistencePoint {
                    mu1,
                    mu2,
                    sinks,
                    orbit,
                });
            }
            // The orbit died (homoclinic or saddle-node of orbits): deeper
            // offsets on this slice cannot bring it back.
            _ => break,
        }
    }
    out
}

/// Search for coexisting attractors along the fold curve: on each `mu2`
/// slice, bisect the fold in `mu1`, anchor the rotational attractor just
/// outside it, then march inward by continuation, re-verifying the orbit
/// (return-map fixed point, homology displacement, multiplier) and the
/// attracting equilibrium at every offset. Slices without a fold bracket or
/// an anchor orbit contribute no points and never abort the search.
/// Deterministic and parallel over slices.
pub fn coexistence_search(
    family: &(impl Fn(f64, f64) -> FieldSpec + Sync),
    mu2_slices: &[f64],
    opts: &HornSearchOptions,
) -> Vec<CoexistencePoint> {
    let per_slice: Vec<Vec<CoexistencePoint>> = mu2_slices
        .par_iter()
        .map(|&mu2| horn_slice(family, mu2, opts))
        .collect();
    per_slice.into_iter().flatten().collect()
}

/// Attractor label at one parameter-grid node.
#[derive(Debug, Clone, Serialize)]
pub struct GridLabel {
    pub mu1: f64,
    pub mu2: f64,
    pub label: AttractorLabel,
}

/// Attractor census over an `nx x ny` node grid of `(mu1, mu2)` values
/// (endpoints included). Nodes are processed in parallel; the output is
/// row-major and deterministic.
pub fn attractor_grid(
    family: &(impl Fn(f64, f64) -> FieldSpec + Sync),
    mu_rect: Rect,
    nx: usize,
    ny: usize,
    opts: &AttractorOptions,
) -> Vec<GridLabel> {
    let nodes: Vec<(usize, usize)> = (0..ny)
        .flat_map(|r| (0..nx).map(move |c| (r, c)))
        .collect();
    nodes
        .into_par_iter()
        .map(|(r, c)| {
            let mu1 = mu_rect.lo[0]
                + (mu_rect.hi[0] - mu_rect.lo[0]) * c as f64 / (nx.max(2) - 1) as f64;
            let mu2 = mu_rect.lo[1]
                + (mu_rect.hi[1] - mu_rect.lo[1]) * r as f64 / (ny.max(2) - 1) as f64;
            let f = family(mu1, mu2);
            GridLabel {
                mu1,
                mu2,
                label: attractor_classify(&f, opts),
            }
        })
        .collect()
}
