//! Torus geometry and covering-space bookkeeping.
//!
//! Phase space is the flat 2-torus `T = (R/L1 Z) x (R/L2 Z)`. All numerics
//! run on the universal cover `R^2`: a trajectory never wraps, so revolution
//! counts, homology data and translate bookkeeping are plain arithmetic on
//! cover coordinates. Projection to the fundamental domain `[0,L1) x [0,L2)`
//! is only applied when comparing positions on the torus itself.

use serde::{Deserialize, Serialize};

/// Side lengths of the torus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusGeometry {
    pub l1: f64,
    pub l2: f64,
}

impl TorusGeometry {
    pub const fn new(l1: f64, l2: f64) -> Self {
        TorusGeometry { l1, l2 }
    }

    /// Square torus of side 2*pi, the natural domain of the explicit family.
    pub const fn square_2pi() -> Self {
        TorusGeometry::new(2.0 * std::f64::consts::PI, 2.0 * std::f64::consts::PI)
    }

    pub fn len(&self, axis: usize) -> f64 {
        match axis {
            0 => self.l1,
            1 => self.l2,
            _ => panic!("axis out of range"),
        }
    }

    /// Wrap a cover point into the fundamental domain `[0,L1) x [0,L2)`.
    pub fn project(&self, p: CoverPoint) -> CoverPoint {
        CoverPoint::new(wrap(p.x1, self.l1), wrap(p.x2, self.l2))
    }

    /// Minimal displacement from `a` to `b` on the torus, each component in
    /// `[-L/2, L/2)`. Adding it to `a` gives the representative of `b`
    /// nearest to `a` on the cover.
    pub fn min_displacement(&self, a: CoverPoint, b: CoverPoint) -> [f64; 2] {
        [
            wrap(b.x1 - a.x1 + 0.5 * self.l1, self.l1) - 0.5 * self.l1,
            wrap(b.x2 - a.x2 + 0.5 * self.l2, self.l2) - 0.5 * self.l2,
        ]
    }

    /// Geodesic distance between the projections of `a` and `b`.
    pub fn distance(&self, a: CoverPoint, b: CoverPoint) -> f64 {
        let d = self.min_displacement(a, b);
        d[0].hypot(d[1])
    }

    /// Deck transformation: translate by `m` periods horizontally and `n`
    /// vertically.
    pub fn translate(&self, p: CoverPoint, m: i64, n: i64) -> CoverPoint {
        CoverPoint::new(p.x1 + m as f64 * self.l1, p.x2 + n as f64 * self.l2)
    }

    /// Integer translate (m, n) such that `cover` is near `base + (m L1, n L2)`,
    /// together with the residual distance.
    pub fn nearest_translate(&self, base: CoverPoint, cover: CoverPoint) -> (i64, i64, f64) {
        let m = ((cover.x1 - base.x1) / self.l1).round();
        let n = ((cover.x2 - base.x2) / self.l2).round();
        let dx = cover.x1 - base.x1 - m * self.l1;
        let dy = cover.x2 - base.x2 - n * self.l2;
        (m as i64, n as i64, dx.hypot(dy))
    }
}

/// Wrap a scalar coordinate into `[0, len)`.
pub fn wrap(x: f64, len: f64) -> f64 {
    let mut r = x % len;
    if r < 0.0 {
        r += len;
    }
    // `x % len` can return exactly `len` after the correction when x is a
    // tiny negative number; normalize that edge case.
    if r >= len {
        r -= len;
    }
    r
}

/// Point on the universal cover of the torus (or on the plane for the
/// reduced box field, which is not periodic).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverPoint {
    pub x1: f64,
    pub x2: f64,
}

impl CoverPoint {
    pub const fn new(x1: f64, x2: f64) -> Self {
        CoverPoint { x1, x2 }
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.x1, self.x2]
    }

    pub fn from_array(a: [f64; 2]) -> Self {
        CoverPoint::new(a[0], a[1])
    }

    pub fn euclid_distance(self, other: CoverPoint) -> f64 {
        (self.x1 - other.x1).hypot(self.x2 - other.x2)
    }
}

impl std::ops::Add<[f64; 2]> for CoverPoint {
    type Output = CoverPoint;
    fn add(self, d: [f64; 2]) -> CoverPoint {
        CoverPoint::new(self.x1 + d[0], self.x2 + d[1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_into_fundamental_domain() {
        assert_eq!(wrap(0.0, 1.0), 0.0);
        assert_eq!(wrap(1.0, 1.0), 0.0);
        assert_eq!(wrap(-0.25, 1.0), 0.75);
        assert_eq!(wrap(7.25, 1.0), 0.25);
        assert!((wrap(-1e-17, 1.0) - 0.0).abs() < 1e-15 || wrap(-1e-17, 1.0) < 1.0);
        let g = TorusGeometry::new(2.0, 3.0);
        let p = g.project(CoverPoint::new(-0.5, 7.5));
        assert!((p.x1 - 1.5).abs() < 1e-15);
        assert!((p.x2 - 1.5).abs() < 1e-15);
    }

    #[test]
    fn torus_distance_uses_shortest_representative() {
        let g = TorusGeometry::new(1.0, 1.0);
        let a = CoverPoint::new(0.05, 0.0);
        let b = CoverPoint::new(0.95, 0.0);
        assert!((g.distance(a, b) - 0.1).abs() < 1e-14);
        // Far apart on the cover, identical on the torus.
        let c = CoverPoint::new(12.05, -3.0);
        assert!(g.distance(a, c) < 1e-12);
    }

    #[test]
    fn nearest_translate_recovers_deck_indices() {
        let g = TorusGeometry::new(2.0, 5.0);
        let base = CoverPoint::new(0.3, 0.7);
        let moved = g.translate(base, 3, -2) + [1e-3, -2e-3];
        let (m, n, dist) = g.nearest_translate(base, moved);
        assert_eq!((m, n), (3, -2));
        assert!((dist - (1e-3f64).hypot(2e-3)).abs() < 1e-12);
    }
}
