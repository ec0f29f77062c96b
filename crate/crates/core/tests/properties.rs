//! Randomized structural invariants of the vector fields and their
//! derived quantities.

use proptest::prelude::*;

use snic_core::equilibria::{find_equilibria, eigen_data, weighted_inner, FindOptions, Rect};
use snic_core::field::FieldSpec;
use snic_core::geometry::{CoverPoint, TorusGeometry};
use snic_core::scan::{count_map, ScanOptions};
use snic_core::transit::transit_closed_form;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// A deck of representative torus fields spanning every constructor.
fn torus_fields() -> impl Strategy<Value = FieldSpec> {
    let mu = -0.3..0.3f64;
    let eps = 0.0..0.2f64;
    (mu.clone(), mu, eps.clone(), eps, 0..3usize).prop_map(|(m1, m2, e1, e2, pick)| {
        let geom = TorusGeometry::square_2pi();
        match pick {
            0 => FieldSpec::uncoupled_snic(geom, m1, m2),
            1 => FieldSpec::coupled_snic(geom, m1, m2, e1, e2),
            _ => FieldSpec::explicit_family_mu(m1, m2, e1, e2),
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Torus fields are well defined on the quotient: translating the
    /// evaluation point by full periods changes nothing.
    #[test]
    fn velocity_is_periodic(
        f in torus_fields(),
        x1 in -10.0..10.0f64,
        x2 in -10.0..10.0f64,
        m in -3i64..4,
        n in -3i64..4,
    ) {
        let geom = f.geometry().unwrap();
        let p = CoverPoint::new(x1, x2);
        let q = geom.translate(p, m, n);
        let (vp, vq) = (f.velocity(p), f.velocity(q));
        prop_assert!(close(vp[0], vq[0], 1e-12) && close(vp[1], vq[1], 1e-12));
        let (jp, jq) = (f.jacobian(p), f.jacobian(q));
        for r in 0..2 {
            for c in 0..2 {
                prop_assert!(close(jp[r][c], jq[r][c], 1e-9));
            }
        }
    }

    /// Time reversal negates the velocity and the Jacobian, and applying
    /// it twice restores the original field.
    #[test]
    fn time_reversal_negates_and_involutes(
        f in torus_fields(),
        x1 in -10.0..10.0f64,
        x2 in -10.0..10.0f64,
    ) {
        let p = CoverPoint::new(x1, x2);
        let rev = f.clone().time_reversed();
        let (v, vr) = (f.velocity(p), rev.velocity(p));
        prop_assert!(close(v[0], -vr[0], 1e-12) && close(v[1], -vr[1], 1e-12));
        let (j, jr) = (f.jacobian(p), rev.jacobian(p));
        for r in 0..2 {
            for c in 0..2 {
                prop_assert!(close(j[r][c], -jr[r][c], 1e-9));
            }
        }
        let twice = rev.time_reversed();
        let vt = twice.velocity(p);
        prop_assert!(close(v[0], vt[0], 1e-12) && close(v[1], vt[1], 1e-12));
    }

    /// The uncoupled field is a product: each component depends only on
    /// its own coordinate.
    #[test]
    fn uncoupled_field_separates(
        m1 in -0.3..0.3f64,
        m2 in -0.3..0.3f64,
        x1 in -7.0..7.0f64,
        x2 in -7.0..7.0f64,
        y1 in -7.0..7.0f64,
        y2 in -7.0..7.0f64,
    ) {
        let f = FieldSpec::uncoupled_snic(TorusGeometry::square_2pi(), m1, m2);
        let a = f.velocity(CoverPoint::new(x1, x2));
        let b = f.velocity(CoverPoint::new(x1, y2));
        let c = f.velocity(CoverPoint::new(y1, x2));
        prop_assert!(close(a[0], b[0], 1e-12), "first component ignores x2");
        prop_assert!(close(a[1], c[1], 1e-12), "second component ignores x1");
        let j = f.jacobian(CoverPoint::new(x1, x2));
        prop_assert!(j[0][1].abs() < 1e-9 && j[1][0].abs() < 1e-9);
    }

    /// At every equilibrium of the planar box field with a real spectrum,
    /// the eigenvectors are orthogonal in the coupling-weighted inner
    /// product and their slopes multiply to -delta2/delta1.
    #[test]
    fn box_eigenvectors_obey_the_weighted_geometry(
        m1 in -0.4..0.15f64,
        m2 in -0.4..0.15f64,
        d1 in 0.01..0.6f64,
        d2 in 0.01..0.6f64,
    ) {
        let f = FieldSpec::reduced_box(m1, m2, d1, d2);
        let bound = m1.abs().max(m2.abs());
        let region = Rect::reduced_box_bound(bound, d1, d2);
        for eq in find_equilibria(&f, region, &FindOptions::default()) {
            let ed = eigen_data(&f, &eq);
            if let Some(vecs) = ed.eigenvectors {
                let ip = weighted_inner(d1, d2, vecs[0], vecs[1]);
                prop_assert!(ip.abs() < 1e-8, "weighted inner product {ip}");
            }
            if let Some([s1, s2]) = ed.slopes {
                prop_assert!(close(s1 * s2, -d2 / d1, 1e-6),
                    "slope product {} vs {}", s1 * s2, -d2 / d1);
            }
        }
    }

    /// The strip transit map is strictly increasing in the entry point and
    /// maps the closed-form domain into [-eta, eta].
    #[test]
    fn transit_map_is_monotone(
        eta in 0.01..0.3f64,
        a in -1.0..0.25f64,
        b in -1.0..0.25f64,
    ) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assume!(hi - lo > 1e-6);
        let ya = transit_closed_form(lo * eta, eta).unwrap();
        let yb = transit_closed_form(hi * eta, eta).unwrap();
        prop_assert!(yb > ya, "map must increase: f({lo}) = {ya}, f({hi}) = {yb}");
        prop_assert!(ya >= -eta - 1e-12 && yb <= eta + 1e-12);
    }
}

/// Equilibrium counts over a random box-field window take only the values
/// 0, 2, or 4 — the fold structure admits nothing else.
#[test]
fn count_raster_values_are_even_and_at_most_four() {
    let (d1, d2) = (0.5, 0.3);
    let family = move |m1: f64, m2: f64| FieldSpec::reduced_box(m1, m2, d1, d2);
    let rect = Rect::new([-0.3, -0.25], [0.1, 0.1]);
    let cells = count_map(&family, rect, 17, 17, &ScanOptions::default());
    assert_eq!(cells.len(), 17 * 17);
    let mut seen = std::collections::BTreeSet::new();
    for c in &cells {
        let n = c.count.expect("planar counts never fail");
        assert!(n == 0 || n == 2 || n == 4, "count {n} at ({}, {})", c.mu1, c.mu2);
        seen.insert(n);
    }
    assert!(seen.contains(&0) && seen.contains(&4), "window spans the fold");
}
