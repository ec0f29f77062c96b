//! Deterministic parameter-plane rasters.
//!
//! A scan walks a row-major grid of `(mu1, mu2)` nodes, builds the family's
//! field at each node, and classifies the flow there. Cells are independent
//! and are distributed over the rayon pool, but the output is indexed by
//! cell, so the raster (and any file derived from it) is identical for
//! every thread count. A panic inside one cell marks that cell unresolved
//! instead of aborting the scan. The seed drives a per-cell jitter of the
//! launch points used for orbit sampling: one seed, one raster, exactly.

use std::panic::{catch_unwind, AssertUnwindSafe};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::attractor::{attractor_classify_from, AttractorLabel, AttractorOptions};
use crate::equilibria::{find_equilibria, grid_node, natural_region, FindOptions, Rect};
use crate::field::FieldSpec;
use crate::geometry::{CoverPoint, TorusGeometry};
use crate::rotation::{classify_regime_from, ClassifyOptions, Regime};

/// Classifier selector for a raster scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanKind {
    /// Number of equilibria at each node.
    Count,
    /// Flow regime (locked / winding / periodic) at each node.
    Regime,
    /// Attractor census at each node.
    Attractor,
}

impl ScanKind {
    pub fn parse(s: &str) -> Option<ScanKind> {
        match s {
            "count" => Some(ScanKind::Count),
            "regime" => Some(ScanKind::Regime),
            "attractor" => Some(ScanKind::Attractor),
            _ => None,
        }
    }
}

/// Options shared by the raster scans.
#[derive(Debug, Clone)]
pub struct ScanOptions {
    /// Seed for the per-cell launch-point jitter.
    pub seed: u64,
    pub find: FindOptions,
    pub classify: ClassifyOptions,
    pub attractor: AttractorOptions,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            seed: 0,
            find: FindOptions::default(),
            classify: ClassifyOptions::default(),
            attractor: AttractorOptions::default(),
        }
    }
}

/// Launch points for one cell: a stratified grid whose in-stratum offsets
/// come from a ChaCha stream keyed by `(seed, cell)`. Offsets stay in the
/// middle half of each stratum so no start degenerates onto a stratum edge.
pub fn seeded_starts(
    geom: TorusGeometry,
    per_axis: usize,
    seed: u64,
    cell: usize,
) -> Vec<CoverPoint> {
    let key = seed ^ (cell as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let mut out = Vec::with_capacity(per_axis * per_axis);
    for i in 0..per_axis {
        for k in 0..per_axis {
            let u: f64 = rng.gen_range(0.25..0.75);
            let w: f64 = rng.gen_range(0.25..0.75);
            out.push(CoverPoint::new(
                geom.l1 * (i as f64 + u) / per_axis as f64,
                geom.l2 * (k as f64 + w) / per_axis as f64,
            ));
        }
    }
    out
}

/// One cell of an equilibrium-count raster; `None` marks a failed cell.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CountCell {
    pub mu1: f64,
    pub mu2: f64,
    pub count: Option<usize>,
}

/// Equilibrium-count raster with per-cell failure capture.
pub fn count_map(
    family: &(impl Fn(f64, f64) -> FieldSpec + Sync),
    mu_rect: Rect,
    nx: usize,
    ny: usize,
    opts: &ScanOptions,
) -> Vec<CountCell> {
    let find = opts.find;
    (0..nx * ny)
        .into_par_iter()
        .map(|cell| {
            let (mu1, mu2) = grid_node(mu_rect, nx, ny, cell / nx, cell % nx);
            let count = catch_unwind(AssertUnwindSafe(|| {
                let f = family(mu1, mu2);
                let region = natural_region(&f, mu1, mu2);
                find_equilibria(&f, region, &find).len()
            }))
            .ok();
            CountCell { mu1, mu2, count }
        })
        .collect()
}

/// One cell of a regime raster.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RegimeCell {
    pub mu1: f64,
    pub mu2: f64,
    pub regime: Regime,
}

/// Regime raster: per-cell flow classification with jittered launch points.
pub fn regime_map(
    family: &(impl Fn(f64, f64) -> FieldSpec + Sync),
    mu_rect: Rect,
    nx: usize,
    ny: usize,
    opts: &ScanOptions,
) -> Vec<RegimeCell> {
    (0..nx * ny)
        .into_par_iter()
        .map(|cell| {
            let (mu1, mu2) = grid_node(mu_rect, nx, ny, cell / nx, cell % nx);
            let regime = catch_unwind(AssertUnwindSafe(|| {
                let f = family(mu1, mu2);
                let Some(geom) = f.geometry() else {
                    return Regime::Unresolved;
                };
                let starts =
                    seeded_starts(geom, opts.classify.starts_per_axis, opts.seed, cell);
                classify_regime_from(&f, &starts, &opts.classify)
            }))
            .unwrap_or(Regime::Unresolved);
            RegimeCell { mu1, mu2, regime }
        })
        .collect()
}

/// One cell of an attractor raster; `None` marks a failed cell.
#[derive(Debug, Clone, Serialize)]
pub struct AttractorCell {
    pub mu1: f64,
    pub mu2: f64,
    pub label: Option<AttractorLabel>,
}

/// Attractor raster: per-cell attractor census with jittered launch points.
pub fn attractor_map(
    family: &(impl Fn(f64, f64) -> FieldSpec + Sync),
    mu_rect: Rect,
    nx: usize,
    ny: usize,
    opts: &ScanOptions,
) -> Vec<AttractorCell> {
    (0..nx * ny)
        .into_par_iter()
        .map(|cell| {
            let (mu1, mu2) = grid_node(mu_rect, nx, ny, cell / nx, cell % nx);
            let label = catch_unwind(AssertUnwindSafe(|| {
                let f = family(mu1, mu2);
                let geom = f.geometry()?;
                let starts =
                    seeded_starts(geom, opts.attractor.starts_per_axis, opts.seed, cell);
                Some(attractor_classify_from(&f, &starts, &opts.attractor))
            }))
            .ok()
            .flatten();
            AttractorCell { mu1, mu2, label }
        })
        .collect()
}
