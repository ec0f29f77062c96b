//! Vector-field definitions.
//!
//! All fields are autonomous planar fields evaluated on cover coordinates.
//! The torus variants are periodic by construction; the reduced box field is
//! a genuine planar field used as the local model near the origin.
//!
//! Variants:
//!
//! * [`ReducedBox`]: `v1 = mu1 + x1^2 + delta1*x2`, `v2 = mu2 + x2^2 + delta2*x1`.
//!   The normal form of two coupled SNIC oscillators restricted to the box
//!   where both coordinates are small.
//! * [`ExplicitFamily`]: `v1 = lambda1 - cos x1 + eps1 sin x2` (and symmetric)
//!   on the 2*pi square torus.
//! * [`ProductSnic`]: `v_j = mu_j + P_j(x_j)` with periodic profiles `P_j`
//!   that have a quadratic zero at the origin when `mu_j = 0`.
//! * [`PerturbedProduct`]: a `ProductSnic` plus bounded coupling terms.
//!
//! [`FieldSpec::coupled_snic`] builds the workhorse torus embedding of the
//! reduced family: sin^2 profiles plus sine couplings, so that near the
//! origin the field agrees with `ReducedBox` to cubic order with the same
//! `(mu1, mu2, delta1, delta2)`.

use crate::geometry::{CoverPoint, TorusGeometry};
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

/// Scalar periodic profile `P(x)` with a quadratic zero at `x = 0`:
/// `P(0) = P'(0) = 0`, `P''(0) = 2`, and `P > 0` elsewhere on the circle.
pub trait ScalarProfile: Send + Sync {
    fn value(&self, x: f64) -> f64;
    fn deriv(&self, x: f64) -> f64;
}

/// Profile of one axis of a [`ProductSnic`] field.
#[derive(Clone)]
pub enum AxisProfile {
    /// `(L/pi)^2 sin^2(pi x / L) + alpha sin^3(pi x / L)`.
    ///
    /// `alpha = 0` is the stock profile; for `L = 2*pi` it reduces to the
    /// classic `2(1 - cos x)`. Nonzero `alpha` is the cubic deformation used
    /// to probe transit-map error bounds; the profile stays nonnegative for
    /// `alpha > -(L/pi)^2`.
    SinSq { len: f64, alpha: f64 },
    /// User-supplied profile (value and derivative).
    Custom(Arc<dyn ScalarProfile>),
}

impl AxisProfile {
    pub fn sin_sq(len: f64) -> Self {
        AxisProfile::SinSq { len, alpha: 0.0 }
    }

    pub fn sin_sq_deformed(len: f64, alpha: f64) -> Self {
        AxisProfile::SinSq { len, alpha }
    }

    /// The `2(1 - cos x)` profile on a circle of length 2*pi.
    pub fn cosine() -> Self {
        AxisProfile::sin_sq(2.0 * PI)
    }

    pub fn value(&self, x: f64) -> f64 {
        match self {
            AxisProfile::SinSq { len, alpha } => {
                let s = (PI * x / len).sin();
                let scale = len / PI;
                scale * scale * s * s + alpha * s * s * s
            }
            AxisProfile::Custom(p) => p.value(x),
        }
    }

    pub fn deriv(&self, x: f64) -> f64 {
        match self {
            AxisProfile::SinSq { len, alpha } => {
                let th = PI * x / len;
                let (s, c) = th.sin_cos();
                (len / PI) * (2.0 * th).sin() + 3.0 * alpha * (PI / len) * s * s * c
            }
            AxisProfile::Custom(p) => p.deriv(x),
        }
    }
}

impl fmt::Debug for AxisProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AxisProfile::SinSq { len, alpha } => f
                .debug_struct("SinSq")
                .field("len", len)
                .field("alpha", alpha)
                .finish(),
            AxisProfile::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Coupling term added to one component of a perturbed product field.
pub trait CouplingFn: Send + Sync {
    fn value(&self, x1: f64, x2: f64) -> f64;
    /// Gradient `[d/dx1, d/dx2]`.
    fn grad(&self, x1: f64, x2: f64) -> [f64; 2];
}

/// Coupling term of a [`PerturbedProduct`] component.
#[derive(Clone)]
pub enum Coupling {
    /// `amp * (len/2pi) * sin(2pi x / len)` evaluated on the *other* axis
    /// coordinate (the axis the host component does not own). Near the
    /// origin this is `amp * x_other + O(x_other^3)`.
    SinOfOther { amp: f64, other_len: f64 },
    Custom(Arc<dyn CouplingFn>),
}

impl Coupling {
    /// Which cover coordinate the `SinOfOther` term reads is decided by the
    /// component index the coupling is attached to: component 0 reads `x2`,
    /// component 1 reads `x1`.
    fn value(&self, component: usize, x1: f64, x2: f64) -> f64 {
        match self {
            Coupling::SinOfOther { amp, other_len } => {
                let x = if component == 0 { x2 } else { x1 };
                amp * (other_len / (2.0 * PI)) * (2.0 * PI * x / other_len).sin()
            }
            Coupling::Custom(c) => c.value(x1, x2),
        }
    }

    fn grad(&self, component: usize, x1: f64, x2: f64) -> [f64; 2] {
        match self {
            Coupling::SinOfOther { amp, other_len } => {
                let x = if component == 0 { x2 } else { x1 };
                let d = amp * (2.0 * PI * x / other_len).cos();
                if component == 0 {
                    [0.0, d]
                } else {
                    [d, 0.0]
                }
            }
            Coupling::Custom(c) => c.grad(x1, x2),
        }
    }
}

impl fmt::Debug for Coupling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coupling::SinOfOther { amp, other_len } => f
                .debug_struct("SinOfOther")
                .field("amp", amp)
                .field("other_len", other_len)
                .finish(),
            Coupling::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Planar normal form of the coupled pair near the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedBox {
    pub mu1: f64,
    pub mu2: f64,
    pub delta1: f64,
    pub delta2: f64,
}

/// `v1 = lambda1 - cos x1 + eps1 sin x2`, `v2 = lambda2 - cos x2 + eps2 sin x1`
/// on the square torus of side 2*pi.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplicitFamily {
    pub lambda1: f64,
    pub lambda2: f64,
    pub eps1: f64,
    pub eps2: f64,
}

/// Uncoupled product of two circle SNIC oscillators.
#[derive(Debug, Clone)]
pub struct ProductSnic {
    pub geom: TorusGeometry,
    pub mu1: f64,
    pub mu2: f64,
    pub profile1: AxisProfile,
    pub profile2: AxisProfile,
}

/// Product field plus coupling terms with a declared C^1 size bound.
#[derive(Debug, Clone)]
pub struct PerturbedProduct {
    pub base: ProductSnic,
    /// Term added to `v1` and term added to `v2`.
    pub coupling: [Coupling; 2],
    /// Declared bound on the coupling size (used for default step/terminate
    /// scales, never to alter the dynamics).
    pub delta: f64,
}

/// A concrete autonomous vector field on the plane or on a torus cover.
#[derive(Debug, Clone)]
pub enum FieldSpec {
    ReducedBox(ReducedBox),
    ExplicitFamily(ExplicitFamily),
    ProductSnic(ProductSnic),
    PerturbedProduct(PerturbedProduct),
    /// Same orbits as the inner field with time running backwards
    /// (velocity negated). Attractors of the reversed field are the
    /// repellers of the original, which is how the mutually inhibitory
    /// regime is analyzed.
    TimeReversed(Box<FieldSpec>),
}

impl FieldSpec {
    pub fn reduced_box(mu1: f64, mu2: f64, delta1: f64, delta2: f64) -> Self {
        FieldSpec::ReducedBox(ReducedBox {
            mu1,
            mu2,
            delta1,
            delta2,
        })
    }

    pub fn explicit_family(lambda1: f64, lambda2: f64, eps1: f64, eps2: f64) -> Self {
        FieldSpec::ExplicitFamily(ExplicitFamily {
            lambda1,
            lambda2,
            eps1,
            eps2,
        })
    }

    /// Explicit family parametrized by the offsets `mu_j = lambda_j - 1`
    /// from the right-hand saddle-node values.
    pub fn explicit_family_mu(mu1: f64, mu2: f64, eps1: f64, eps2: f64) -> Self {
        FieldSpec::explicit_family(1.0 + mu1, 1.0 + mu2, eps1, eps2)
    }

    pub fn uncoupled_snic(geom: TorusGeometry, mu1: f64, mu2: f64) -> Self {
        FieldSpec::product_snic(
            geom,
            mu1,
            mu2,
            AxisProfile::sin_sq(geom.l1),
            AxisProfile::sin_sq(geom.l2),
        )
    }

    /// Product field `v_j = mu_j + P_j(x_j)` with explicit axis profiles.
    pub fn product_snic(
        geom: TorusGeometry,
        mu1: f64,
        mu2: f64,
        profile1: AxisProfile,
        profile2: AxisProfile,
    ) -> Self {
        FieldSpec::ProductSnic(ProductSnic {
            geom,
            mu1,
            mu2,
            profile1,
            profile2,
        })
    }

    /// Torus embedding of the reduced family:
    /// `v1 = mu1 + (L1/pi)^2 sin^2(pi x1/L1) + delta1 (L2/2pi) sin(2pi x2/L2)`
    /// and symmetrically for `v2`. Near the origin this equals the reduced
    /// box field up to cubic-order corrections.
    pub fn coupled_snic(geom: TorusGeometry, mu1: f64, mu2: f64, delta1: f64, delta2: f64) -> Self {
        FieldSpec::PerturbedProduct(PerturbedProduct {
            base: ProductSnic {
                geom,
                mu1,
                mu2,
                profile1: AxisProfile::sin_sq(geom.l1),
                profile2: AxisProfile::sin_sq(geom.l2),
            },
            coupling: [
                Coupling::SinOfOther {
                    amp: delta1,
                    other_len: geom.l2,
                },
                Coupling::SinOfOther {
                    amp: delta2,
                    other_len: geom.l1,
                },
            ],
            delta: delta1.abs().max(delta2.abs()),
        })
    }

    /// Wrap the field so that time runs backwards.
    pub fn time_reversed(self) -> Self {
        match self {
            // Double reversal restores the original field.
            FieldSpec::TimeReversed(inner) => *inner,
            other => FieldSpec::TimeReversed(Box::new(other)),
        }
    }

    /// Torus side lengths; `None` for the planar reduced box field.
    pub fn geometry(&self) -> Option<TorusGeometry> {
        match self {
            FieldSpec::ReducedBox(_) => None,
            FieldSpec::ExplicitFamily(_) => Some(TorusGeometry::square_2pi()),
            FieldSpec::ProductSnic(p) => Some(p.geom),
            FieldSpec::PerturbedProduct(p) => Some(p.base.geom),
            FieldSpec::TimeReversed(f) => f.geometry(),
        }
    }

    /// Declared coupling size: exact for the reduced box and the explicit
    /// family, the declared bound for perturbed products, zero for products.
    pub fn coupling_bound(&self) -> f64 {
        match self {
            FieldSpec::ReducedBox(f) => f.delta1.abs().max(f.delta2.abs()),
            FieldSpec::ExplicitFamily(f) => f.eps1.abs().max(f.eps2.abs()),
            FieldSpec::ProductSnic(_) => 0.0,
            FieldSpec::PerturbedProduct(p) => p.delta,
            FieldSpec::TimeReversed(f) => f.coupling_bound(),
        }
    }

    /// Velocity at a cover point.
    pub fn velocity(&self, p: CoverPoint) -> [f64; 2] {
        let (x1, x2) = (p.x1, p.x2);
        match self {
            FieldSpec::ReducedBox(f) => [
                f.mu1 + x1 * x1 + f.delta1 * x2,
                f.mu2 + x2 * x2 + f.delta2 * x1,
            ],
            FieldSpec::ExplicitFamily(f) => [
                f.lambda1 - x1.cos() + f.eps1 * x2.sin(),
                f.lambda2 - x2.cos() + f.eps2 * x1.sin(),
            ],
            FieldSpec::ProductSnic(f) => {
                [f.mu1 + f.profile1.value(x1), f.mu2 + f.profile2.value(x2)]
            }
            FieldSpec::PerturbedProduct(f) => {
                let base = &f.base;
                [
                    base.mu1 + base.profile1.value(x1) + f.coupling[0].value(0, x1, x2),
                    base.mu2 + base.profile2.value(x2) + f.coupling[1].value(1, x1, x2),
                ]
            }
            FieldSpec::TimeReversed(f) => {
                let v = f.velocity(p);
                [-v[0], -v[1]]
            }
        }
    }

    /// Exact Jacobian `dv/dx` at a cover point (row-major).
    pub fn jacobian(&self, p: CoverPoint) -> [[f64; 2]; 2] {
        let (x1, x2) = (p.x1, p.x2);
        match self {
            FieldSpec::ReducedBox(f) => [[2.0 * x1, f.delta1], [f.delta2, 2.0 * x2]],
            FieldSpec::ExplicitFamily(f) => [
                [x1.sin(), f.eps1 * x2.cos()],
                [f.eps2 * x1.cos(), x2.sin()],
            ],
            FieldSpec::ProductSnic(f) => {
                [[f.profile1.deriv(x1), 0.0], [0.0, f.profile2.deriv(x2)]]
            }
            FieldSpec::PerturbedProduct(f) => {
                let g1 = f.coupling[0].grad(0, x1, x2);
                let g2 = f.coupling[1].grad(1, x1, x2);
                [
                    [f.base.profile1.deriv(x1) + g1[0], g1[1]],
                    [g2[0], f.base.profile2.deriv(x2) + g2[1]],
                ]
            }
            FieldSpec::TimeReversed(f) => {
                let j = f.jacobian(p);
                [[-j[0][0], -j[0][1]], [-j[1][0], -j[1][1]]]
            }
        }
    }

    pub fn divergence(&self, p: CoverPoint) -> f64 {
        let j = self.jacobian(p);
        j[0][0] + j[1][1]
    }

    /// Coupling-free speed of one component as a function of its own
    /// coordinate: `mu_j + P_j(x)` for product-based fields and the
    /// analogous diagonal part for the other families.
    pub fn uncoupled_axis_speed(&self, axis: usize, x: f64) -> f64 {
        match self {
            FieldSpec::ReducedBox(f) => {
                let mu = if axis == 0 { f.mu1 } else { f.mu2 };
                mu + x * x
            }
            FieldSpec::ExplicitFamily(f) => {
                let lambda = if axis == 0 { f.lambda1 } else { f.lambda2 };
                lambda - x.cos()
            }
            FieldSpec::ProductSnic(f) => {
                if axis == 0 {
                    f.mu1 + f.profile1.value(x)
                } else {
                    f.mu2 + f.profile2.value(x)
                }
            }
            FieldSpec::PerturbedProduct(f) => {
                if axis == 0 {
                    f.base.mu1 + f.base.profile1.value(x)
                } else {
                    f.base.mu2 + f.base.profile2.value(x)
                }
            }
            FieldSpec::TimeReversed(f) => -f.uncoupled_axis_speed(axis, x),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_PI: f64 = 2.0 * PI;

    #[test]
    fn reduced_box_velocity_matches_normal_form() {
        let f = FieldSpec::reduced_box(0.1, 0.1, 0.0, 0.0);
        assert_eq!(f.velocity(CoverPoint::new(0.0, 0.0)), [0.1, 0.1]);
        let f = FieldSpec::reduced_box(0.0, 0.0, 0.5, 0.3);
        assert_eq!(f.velocity(CoverPoint::new(0.0, 0.0)), [0.0, 0.0]);
        let f = FieldSpec::reduced_box(-0.02, 0.03, 0.5, 0.3);
        let v = f.velocity(CoverPoint::new(0.1, -0.2));
        assert!((v[0] - (-0.02 + 0.01 + 0.5 * -0.2)).abs() < 1e-15);
        assert!((v[1] - (0.03 + 0.04 + 0.3 * 0.1)).abs() < 1e-15);
    }

    #[test]
    fn reduced_box_jacobian_entries() {
        let f = FieldSpec::reduced_box(0.0, 0.0, 0.5, 0.3);
        let j = f.jacobian(CoverPoint::new(0.7, -0.4));
        assert_eq!(j, [[1.4, 0.5], [0.3, -0.8]]);
        assert!((f.divergence(CoverPoint::new(0.7, -0.4)) - (1.4 - 0.8)).abs() < 1e-15);
    }

    #[test]
    fn explicit_family_velocity_at_quarter_points() {
        let f = FieldSpec::explicit_family(2.0, 2.0, 0.0, 0.0);
        let v = f.velocity(CoverPoint::new(PI / 2.0, PI));
        assert!((v[0] - 2.0).abs() < 1e-15);
        assert!((v[1] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn sin_sq_profile_has_quadratic_zero_with_unit_coefficient() {
        for len in [1.0, TWO_PI, 5.5] {
            let p = AxisProfile::sin_sq(len);
            assert_eq!(p.value(0.0), 0.0);
            assert!(p.deriv(0.0).abs() < 1e-15);
            for x in [1e-4, -1e-4, 1e-3] {
                // P(x) = x^2 + O(x^4)
                assert!((p.value(x) / (x * x) - 1.0).abs() < 1e-5, "len={len} x={x}");
            }
            // Positive away from the zero.
            for k in 1..10 {
                let x = len * k as f64 / 10.0;
                assert!(p.value(x) > 0.0);
            }
        }
    }

    #[test]
    fn cosine_profile_is_two_one_minus_cos() {
        let p = AxisProfile::cosine();
        for x in [0.3, 1.0, 2.5, 4.0, 6.0] {
            assert!((p.value(x) - 2.0 * (1.0 - x.cos())).abs() < 1e-13);
            assert!((p.deriv(x) - 2.0 * x.sin()).abs() < 1e-13);
        }
    }

    #[test]
    fn deformed_profile_keeps_second_order_taylor_data() {
        let p = AxisProfile::sin_sq_deformed(TWO_PI, 1.0);
        // Cubic term present but the quadratic coefficient is unchanged.
        let x = 1e-3;
        let quad = (p.value(x) + p.value(-x)) / (2.0 * x * x);
        assert!((quad - 1.0).abs() < 1e-5);
        let cubic = (p.value(x) - p.value(-x)) / (2.0 * x * x * x);
        assert!((cubic - (PI / TWO_PI).powi(3) * TWO_PI.powi(3) / TWO_PI.powi(3) * 0.125).abs() < 0.2,
            "cubic coefficient should be alpha*(pi/L)^3*L^3-ish small but nonzero, got {cubic}");
    }

    #[test]
    fn coupled_snic_matches_reduced_box_near_origin() {
        let geom = TorusGeometry::square_2pi();
        let torus = FieldSpec::coupled_snic(geom, 0.003, -0.004, 0.05, 0.03);
        let boxf = FieldSpec::reduced_box(0.003, -0.004, 0.05, 0.03);
        let p = CoverPoint::new(0.01, -0.02);
        let vt = torus.velocity(p);
        let vb = boxf.velocity(p);
        // Profile error is O(x^4), coupling error O(delta * x^3).
        assert!((vt[0] - vb[0]).abs() < 1e-7);
        assert!((vt[1] - vb[1]).abs() < 1e-7);
        let jt = torus.jacobian(p);
        let jb = boxf.jacobian(p);
        for r in 0..2 {
            for c in 0..2 {
                assert!((jt[r][c] - jb[r][c]).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn coupled_snic_is_periodic() {
        let geom = TorusGeometry::new(TWO_PI, 4.0);
        let f = FieldSpec::coupled_snic(geom, 0.01, 0.02, 0.05, 0.03);
        let p = CoverPoint::new(0.37, 1.21);
        let q = geom.translate(p, 3, -2);
        let vp = f.velocity(p);
        let vq = f.velocity(q);
        assert!((vp[0] - vq[0]).abs() < 1e-12);
        assert!((vp[1] - vq[1]).abs() < 1e-12);
    }

    #[test]
    fn time_reversal_negates_velocity_and_jacobian() {
        let f = FieldSpec::explicit_family(0.95, 0.95, 0.01, 0.006);
        let r = f.clone().time_reversed();
        let p = CoverPoint::new(0.3, 5.1);
        let v = f.velocity(p);
        let vr = r.velocity(p);
        assert_eq!([-v[0], -v[1]], vr);
        let j = f.jacobian(p);
        let jr = r.jacobian(p);
        for a in 0..2 {
            for b in 0..2 {
                assert_eq!(jr[a][b], -j[a][b]);
            }
        }
        // Involution.
        if let FieldSpec::ExplicitFamily(inner) = r.time_reversed() {
            assert_eq!(inner.lambda1, 0.95);
        } else {
            panic!("double reversal should unwrap");
        }
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let geom = TorusGeometry::square_2pi();
        let fields = [
            FieldSpec::reduced_box(-0.02, 0.05, 0.5, 0.3),
            FieldSpec::explicit_family(1.1, 0.9, 0.05, 0.03),
            FieldSpec::uncoupled_snic(geom, 0.04, -0.01),
            FieldSpec::coupled_snic(geom, -0.05, -0.05, 0.02, 0.012),
        ];
        let h = 1e-6;
        for f in &fields {
            for &(x1, x2) in &[(0.2, -0.4), (1.7, 3.1), (-0.8, 0.05)] {
                let j = f.jacobian(CoverPoint::new(x1, x2));
                for col in 0..2 {
                    let (dp, dm) = if col == 0 {
                        (CoverPoint::new(x1 + h, x2), CoverPoint::new(x1 - h, x2))
                    } else {
                        (CoverPoint::new(x1, x2 + h), CoverPoint::new(x1, x2 - h))
                    };
                    let vp = f.velocity(dp);
                    let vm = f.velocity(dm);
                    for row in 0..2 {
                        let fd = (vp[row] - vm[row]) / (2.0 * h);
                        assert!(
                            (j[row][col] - fd).abs() < 1e-8,
                            "field {f:?} entry ({row},{col}): analytic {} vs fd {}",
                            j[row][col],
                            fd
                        );
                    }
                }
            }
        }
    }
}
