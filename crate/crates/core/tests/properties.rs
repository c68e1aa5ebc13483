use proptest::prelude::*;

use tlsbnb::contractor::per_correspondence_arc;
use tlsbnb::relaxation::{build_wls_relaxation, ArcBounds, ResidualInterval};
use tlsbnb::{rot_z, Arc2D, TranslationBall, Vec3};

fn vec3(half: f64) -> impl Strategy<Value = Vec3> {
    (-half..half, -half..half, -half..half).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn truncated(r: f64, eps_sq: f64) -> f64 {
    r.min(eps_sq)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn relaxation_underestimates_truncation_inside_intervals(
        raw in prop::collection::vec((0.0..4.0f64, 0.0..4.0f64, 0.0..1.0f64), 1..20),
        eps in 0.1..1.5f64,
    ) {
        let intervals: Vec<_> = raw.iter().map(|&(a, b, _)| ResidualInterval::new(a.min(b), a.max(b))).collect();
        let relax = build_wls_relaxation(&intervals, eps);
        let residuals: Vec<f64> = intervals.iter().zip(&raw).map(|(iv, &(_, _, s))| iv.min + s * (iv.max - iv.min)).collect();
        let exact: f64 = residuals.iter().map(|&r| truncated(r, eps * eps)).sum();
        prop_assert!(relax.value(residuals.iter().copied()) <= exact + 1e-9);
    }

    #[test]
    fn relaxation_is_tight_at_interval_minimum(
        raw in prop::collection::vec((0.0..4.0f64, 0.0..4.0f64), 1..20),
        eps in 0.1..1.5f64,
    ) {
        let intervals: Vec<_> = raw.iter().map(|&(a, b)| ResidualInterval::new(a.min(b), a.max(b))).collect();
        let relax = build_wls_relaxation(&intervals, eps);
        let exact: f64 = intervals.iter().map(|iv| truncated(iv.min, eps * eps)).sum();
        let value = relax.value(intervals.iter().map(|iv| iv.min));
        prop_assert!((value - exact).abs() <= 1e-9 * (1.0 + exact));
    }

    #[test]
    fn weights_stay_in_unit_range(
        raw in prop::collection::vec((0.0..4.0f64, 0.0..4.0f64), 1..20),
        eps in 0.1..1.5f64,
    ) {
        let intervals: Vec<_> = raw.iter().map(|&(a, b)| ResidualInterval::new(a.min(b), a.max(b))).collect();
        let relax = build_wls_relaxation(&intervals, eps);
        for (w, iv) in relax.weights.iter().zip(&intervals) {
            prop_assert!((0.0..=1.0).contains(w));
            if iv.max <= eps * eps {
                prop_assert_eq!(*w, 1.0);
            }
        }
    }

    #[test]
    fn arc_interval_contains_sampled_residuals(
        p in vec3(10.0), q in vec3(10.0), t in vec3(2.0),
        center in -3.2..3.2f64, radius in 0.0..3.2f64, s in -1.0..1.0f64,
        tr in 0.0..1.0f64, dir in vec3(1.0),
    ) {
        let arc = Arc2D::new(center, radius);
        let tball = TranslationBall::new(t, tr);
        let iv = ArcBounds::new(&arc).pose_interval(&p, &q, &tball);
        let offset = if dir.norm() > 1e-9 { dir.normalize() * tr * dir.norm().min(1.0) } else { Vec3::zeros() };
        let r = (rot_z(center + s * radius) * p - q + t + offset).norm_squared();
        prop_assert!(iv.contains(r, 1e-9 * (1.0 + r)));
    }

    #[test]
    fn correspondence_arc_keeps_every_inlier_angle(
        p in vec3(10.0), t in vec3(2.0), theta in -3.1..3.1f64,
        tr in 0.0..1.0f64, eps in 0.05..1.0f64, noise in vec3(1.0),
    ) {
        // q chosen so (θ, t) makes (p, q) an inlier
        let n = if noise.norm() > 1.0 { noise / noise.norm() } else { noise };
        let q = rot_z(theta) * p + t + n * eps;
        let tball = TranslationBall::new(t, tr);
        let arc = per_correspondence_arc(&p, &q, &tball, eps);
        prop_assert!(arc.contains(theta, 1e-7));
    }
}
