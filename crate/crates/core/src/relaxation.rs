//! Residual interval analysis over search regions and the weighted
//! least-squares (WLS) relaxation of the truncated objective.
//!
//! Every interval is on the *squared* residual. Square roots only appear
//! when a rotation interval is widened by a translation ball.

use crate::geometry::{Arc2D, Rotation3, RotationBall3, TranslationBall, Vec3};

/// Range `[min, max]` of a squared residual over a region.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualInterval {
    pub min: f64,
    pub max: f64,
}

impl ResidualInterval {
    pub fn new(min: f64, max: f64) -> Self {
        debug_assert!(min >= 0.0 && max >= min, "bad interval [{min}, {max}]");
        ResidualInterval { min, max }
    }

    pub fn point(r: f64) -> Self {
        ResidualInterval { min: r, max: r }
    }

    pub fn contains(&self, r: f64, tol: f64) -> bool {
        r >= self.min - tol && r <= self.max + tol
    }

    /// Widens `‖x‖² ∈ self` to `‖x + Δ‖²` for any `‖Δ‖ ≤ radius`.
    #[inline]
    pub fn widen_by_ball(&self, radius: f64) -> Self {
        if radius == 0.0 {
            return *self;
        }
        let lo = (self.min.sqrt() - radius).max(0.0);
        let hi = self.max.sqrt() + radius;
        ResidualInterval {
            min: lo * lo,
            max: hi * hi,
        }
    }
}

/// Interval of `‖p − q + t‖²` over a translation ball.
pub fn translation_residual_interval(p: &Vec3, q: &Vec3, ball: &TranslationBall) -> ResidualInterval {
    let d = (p - q + ball.center).norm();
    ResidualInterval::point(d * d).widen_by_ball(ball.radius)
}

/// Cosines of the smallest and largest angle in `[θ₀ − n, θ₀ + n] ∩ [0, π]`
/// given `cos θ₀`, `sin θ₀ ≥ 0` and `cos n`, `sin n`. No trigonometric calls.
#[inline]
fn angle_window_cosines(cos0: f64, sin0: f64, cos_n: f64, sin_n: f64) -> (f64, f64) {
    let near = if cos0 >= cos_n {
        1.0
    } else {
        cos0 * cos_n + sin0 * sin_n
    };
    let far = if cos0 <= -cos_n {
        -1.0
    } else {
        cos0 * cos_n - sin0 * sin_n
    };
    (near.min(1.0), far.max(-1.0))
}

/// Interval of `|a|² + |b|² − 2|a||b| cos φ` for φ in an angular window.
#[inline]
fn law_of_cosines(offset: f64, na: f64, nb: f64, cos_near: f64, cos_far: f64) -> ResidualInterval {
    let base = offset + (na - nb) * (na - nb);
    let prod = 2.0 * na * nb;
    ResidualInterval {
        min: base + prod * (1.0 - cos_near),
        max: base + prod * (1.0 - cos_far),
    }
}

/// Precomputed data of a rotation ball for repeated interval queries.
#[derive(Clone, Copy, Debug)]
pub struct RotationBallBounds {
    center: Rotation3,
    cos_r: f64,
    sin_r: f64,
}

impl RotationBallBounds {
    pub fn new(ball: &RotationBall3) -> Self {
        let (s, c) = ball.radius.sin_cos();
        RotationBallBounds {
            center: ball.center,
            cos_r: c,
            sin_r: s,
        }
    }

    /// Interval of `‖R p − q‖²` over the ball.
    #[inline]
    pub fn interval(&self, p: &Vec3, q: &Vec3) -> ResidualInterval {
        let np = p.norm();
        let nq = q.norm();
        if np == 0.0 || nq == 0.0 {
            return ResidualInterval::point(np * np + nq * nq);
        }
        let rp = self.center * p;
        let scale = 1.0 / (np * nq);
        let cos0 = (rp.dot(q) * scale).clamp(-1.0, 1.0);
        let sin0 = (rp.cross(q).norm() * scale).min(1.0);
        let (near, far) = angle_window_cosines(cos0, sin0, self.cos_r, self.sin_r);
        law_of_cosines(0.0, np, nq, near, far)
    }
}

/// Interval of `‖R p − q‖²` over a geodesic rotation ball.
pub fn rotation_residual_interval(p: &Vec3, q: &Vec3, ball: &RotationBall3) -> ResidualInterval {
    RotationBallBounds::new(ball).interval(p, q)
}

/// Interval of `‖R p − (q − c)‖²` widened by the translation ball radius, i.e.
/// the interval of `‖R p − q + t‖²` over both balls.
pub fn pose_residual_interval(
    p: &Vec3,
    q: &Vec3,
    rball: &RotationBall3,
    tball: &TranslationBall,
) -> ResidualInterval {
    rotation_residual_interval(p, &(q - tball.center), rball).widen_by_ball(tball.radius)
}

/// Precomputed data of an arc of rotations about +z.
///
/// The z-component is invariant under these rotations, so the residual splits
/// into a constant `(p_z − q_z)²` plus a planar law-of-cosines term. The
/// resulting interval is the exact range and never wider than the geodesic
/// ball bound applied to the full 3D vectors.
#[derive(Clone, Copy, Debug)]
pub struct ArcBounds {
    cos_c: f64,
    sin_c: f64,
    cos_r: f64,
    sin_r: f64,
}

impl ArcBounds {
    pub fn new(arc: &Arc2D) -> Self {
        let (sin_c, cos_c) = arc.center().sin_cos();
        let (sin_r, cos_r) = arc.radius().sin_cos();
        let (cos_r, sin_r) = if arc.is_full() { (-1.0, 0.0) } else { (cos_r, sin_r) };
        ArcBounds {
            cos_c,
            sin_c,
            cos_r,
            sin_r,
        }
    }

    /// Interval of `‖R(θ) p − b‖²` for θ in the arc.
    #[inline]
    pub fn interval(&self, p: &Vec3, b: &Vec3) -> ResidualInterval {
        let dz = p.z - b.z;
        let np = p.x.hypot(p.y);
        let nb = b.x.hypot(b.y);
        if np == 0.0 || nb == 0.0 {
            return ResidualInterval::point(dz * dz + np * np + nb * nb);
        }
        let rx = self.cos_c * p.x - self.sin_c * p.y;
        let ry = self.sin_c * p.x + self.cos_c * p.y;
        let scale = 1.0 / (np * nb);
        let cos0 = ((rx * b.x + ry * b.y) * scale).clamp(-1.0, 1.0);
        let sin0 = ((rx * b.y - ry * b.x).abs() * scale).min(1.0);
        let (near, far) = angle_window_cosines(cos0, sin0, self.cos_r, self.sin_r);
        law_of_cosines(dz * dz, np, nb, near, far)
    }

    /// Interval of `‖R(θ) p − q + t‖²` over the arc and a translation ball.
    #[inline]
    pub fn pose_interval(&self, p: &Vec3, q: &Vec3, tball: &TranslationBall) -> ResidualInterval {
        self.interval(p, &(q - tball.center)).widen_by_ball(tball.radius)
    }
}

/// Interval of `‖R(θ) p − q + t‖²` over an arc of rotations about +z and a translation ball.
pub fn pose_arc_residual_interval(
    p: &Vec3,
    q: &Vec3,
    arc: &Arc2D,
    tball: &TranslationBall,
) -> ResidualInterval {
    ArcBounds::new(arc).pose_interval(p, q, tball)
}

/// Convex under-estimator of the truncated objective over a region: each
/// residual is either a constant outlier, an untouched inlier, or a
/// down-weighted inlier whose affine image passes through `(r_min, r_min)`
/// and `(r_max, ε²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct WlsRelaxation {
    pub weights: Vec<f64>,
    pub outlier_flags: Vec<bool>,
    pub intervals: Vec<ResidualInterval>,
    /// `Σ oᵢ ε² + Σ (1 − oᵢ)(1 − wᵢ) r_minᵢ`
    pub constant: f64,
    pub eps_sq: f64,
}

impl WlsRelaxation {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Weight multiplying the squared residual in the least-squares part (0 for outliers).
    #[inline]
    pub fn effective_weight(&self, i: usize) -> f64 {
        if self.outlier_flags[i] {
            0.0
        } else {
            self.weights[i]
        }
    }

    pub fn effective_weights(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.effective_weight(i)).collect()
    }

    pub fn all_outliers(&self) -> bool {
        self.outlier_flags.iter().all(|&o| o)
    }

    /// Relaxation value for given squared residuals.
    pub fn value<I: IntoIterator<Item = f64>>(&self, residuals_sq: I) -> f64 {
        self.constant
            + residuals_sq
                .into_iter()
                .enumerate()
                .map(|(i, r)| self.effective_weight(i) * r)
                .sum::<f64>()
    }
}

/// Builds the relaxation from per-residual intervals.
pub fn build_wls_relaxation(intervals: &[ResidualInterval], eps: f64) -> WlsRelaxation {
    let eps_sq = eps * eps;
    let n = intervals.len();
    let mut weights = Vec::with_capacity(n);
    let mut outlier_flags = Vec::with_capacity(n);
    let mut constant = 0.0;
    for iv in intervals {
        if iv.min > eps_sq {
            weights.push(1.0);
            outlier_flags.push(true);
            constant += eps_sq;
            continue;
        }
        outlier_flags.push(false);
        let w = if iv.max > eps_sq && iv.max > iv.min {
            (eps_sq - iv.min) / (iv.max - iv.min)
        } else {
            1.0
        };
        constant += (1.0 - w) * iv.min;
        weights.push(w);
    }
    WlsRelaxation {
        weights,
        outlier_flags,
        intervals: intervals.to_vec(),
        constant,
        eps_sq,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{evaluate_tls, rot_z, Correspondence, ProblemInstance, Transform};
    use crate::sampling::{rng_from_seed, rotation_in_ball, uniform_angle, uniform_in_ball, uniform_in_cube};
    use std::f64::consts::PI;

    const TOL: f64 = 1e-12;

    fn close(a: ResidualInterval, min: f64, max: f64) -> bool {
        (a.min - min).abs() < 1e-12 && (a.max - max).abs() < 1e-12
    }

    #[test]
    fn translation_examples() {
        let q = Vec3::zeros();
        let ball = TranslationBall::new(Vec3::zeros(), 0.5);
        assert!(close(translation_residual_interval(&Vec3::new(2.0, 0.0, 0.0), &q, &ball), 2.25, 6.25));
        let p = Vec3::new(0.0, 1.2, 1.6);
        assert!(close(translation_residual_interval(&p, &q, &TranslationBall::point(q)), 4.0, 4.0));
        let ball = TranslationBall::new(Vec3::zeros(), 1.0);
        assert!(close(translation_residual_interval(&Vec3::new(0.3, 0.0, 0.0), &q, &ball), 0.0, 1.69));
    }

    #[test]
    fn rotation_examples() {
        let x = Vec3::x();
        let ball = RotationBall3::new(Rotation3::identity(), PI / 2.0);
        assert!(close(rotation_residual_interval(&x, &x, &ball), 0.0, 2.0));

        let p = Vec3::new(1.0, 2.0, -0.5);
        let q = Vec3::new(-3.0, 0.2, 0.1);
        let full = RotationBall3::new(rot_z(0.7), PI);
        let (np, nq) = (p.norm(), q.norm());
        assert!(close(rotation_residual_interval(&p, &q, &full), (np - nq).powi(2), (np + nq).powi(2)));

        let iv = rotation_residual_interval(&Vec3::zeros(), &Vec3::new(1.0, 1.0, 0.0), &ball);
        assert!(close(iv, 2.0, 2.0));
    }

    #[test]
    fn pose_examples() {
        let mut rng = rng_from_seed(1);
        let p = uniform_in_cube(&mut rng, 3.0);
        let q = uniform_in_cube(&mut rng, 3.0);
        let c = uniform_in_cube(&mut rng, 1.0);
        let rc = rot_z(0.4);
        let iv = pose_residual_interval(&p, &q, &RotationBall3::new(rc, 0.0), &TranslationBall::point(c));
        let exact = (rc * p - q + c).norm_squared();
        assert!((iv.min - exact).abs() < 1e-9 && (iv.max - exact).abs() < 1e-9);

        let x = Vec3::x();
        let iv = pose_residual_interval(
            &x,
            &x,
            &RotationBall3::new(Rotation3::identity(), PI / 2.0),
            &TranslationBall::new(Vec3::zeros(), 0.5),
        );
        assert!(close(iv, 0.0, (2f64.sqrt() + 0.5).powi(2)));
    }

    #[test]
    fn pose_interval_contains_sampled_residuals() {
        let mut rng = rng_from_seed(2);
        for _ in 0..20 {
            let p = uniform_in_cube(&mut rng, 5.0);
            let q = uniform_in_cube(&mut rng, 5.0);
            let rball = RotationBall3::new(crate::sampling::uniform_rotation(&mut rng), rng_unit(&mut rng) * 1.5);
            let tball = TranslationBall::new(uniform_in_cube(&mut rng, 2.0), rng_unit(&mut rng));
            let iv = pose_residual_interval(&p, &q, &rball, &tball);
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for _ in 0..10_000 {
                let r = rotation_in_ball(&mut rng, &rball.center, rball.radius);
                let t = tball.center + uniform_in_ball(&mut rng, tball.radius);
                let v = (r * p - q + t).norm_squared();
                lo = lo.min(v);
                hi = hi.max(v);
            }
            assert!(iv.min <= lo + 1e-9 && hi <= iv.max + 1e-9);
        }
    }

    fn rng_unit(rng: &mut impl rand::Rng) -> f64 {
        rng.gen::<f64>()
    }

    #[test]
    fn arc_interval_is_exact_range() {
        let mut rng = rng_from_seed(5);
        for _ in 0..50 {
            let p = uniform_in_cube(&mut rng, 4.0);
            let b = uniform_in_cube(&mut rng, 4.0);
            let arc = Arc2D::new(uniform_angle(&mut rng), rng_unit(&mut rng) * 2.0);
            let iv = ArcBounds::new(&arc).interval(&p, &b);
            let (lo, hi) = arc.bounds().unwrap();
            let (mut smin, mut smax) = (f64::INFINITY, 0.0f64);
            for k in 0..=20_000 {
                let th = lo + (hi - lo) * k as f64 / 20_000.0;
                let v = (rot_z(th) * p - b).norm_squared();
                smin = smin.min(v);
                smax = smax.max(v);
            }
            assert!(iv.min <= smin + 1e-9 && smax <= iv.max + 1e-9);
            // exact up to the sampling resolution
            assert!(smin - iv.min < 1e-5 * (1.0 + smin) && iv.max - smax < 1e-5 * (1.0 + smax));
            // and never looser than the geodesic-ball bound on 3D vectors
            let ball = RotationBall3::new(rot_z(arc.center()), arc.radius());
            let geo = rotation_residual_interval(&p, &b, &ball);
            assert!(iv.min >= geo.min - 1e-9 && iv.max <= geo.max + 1e-9);
        }
    }

    #[test]
    fn weight_examples() {
        let rel = build_wls_relaxation(&[ResidualInterval::new(0.0, 2.0)], 0.5);
        assert!((rel.weights[0] - 0.125).abs() < TOL && !rel.outlier_flags[0]);

        let rel = build_wls_relaxation(&[ResidualInterval::new(0.5, 3.0)], 0.5);
        assert!(rel.outlier_flags[0] && (rel.constant - 0.25).abs() < TOL);

        let rel = build_wls_relaxation(&[ResidualInterval::new(0.1, 0.2)], 0.5);
        assert_eq!(rel.weights[0], 1.0);
        assert!(!rel.outlier_flags[0] && rel.constant.abs() < TOL);

        // zero width on either side of the threshold
        let rel = build_wls_relaxation(&[ResidualInterval::point(0.3), ResidualInterval::point(0.2)], 0.5);
        assert!(rel.outlier_flags[0] && !rel.outlier_flags[1]);
        assert_eq!(rel.weights, vec![1.0, 1.0]);
    }

    #[test]
    fn reweighted_residual_grazes_threshold() {
        let mut rng = rng_from_seed(9);
        for _ in 0..1000 {
            let a = rng_unit(&mut rng) * 0.3;
            let b = a + rng_unit(&mut rng) * 3.0;
            let rel = build_wls_relaxation(&[ResidualInterval::new(a, b)], 0.5);
            let w = rel.weights[0];
            if !rel.outlier_flags[0] {
                assert!(w > 0.0 && w <= 1.0);
                if b > 0.25 {
                    assert!((w * b + (1.0 - w) * a - 0.25).abs() < 1e-12);
                }
            }
        }
    }

    fn random_pose_instance(rng: &mut crate::sampling::SeededRng, n: usize) -> ProblemInstance {
        let gt = Transform::new(rot_z(uniform_angle(rng)), uniform_in_cube(rng, 2.0));
        let corr = (0..n)
            .map(|i| {
                let p = uniform_in_cube(rng, 3.0);
                let q = if i % 3 == 0 {
                    uniform_in_cube(rng, 5.0)
                } else {
                    gt.rotation * p + gt.translation + uniform_in_ball(rng, 0.3)
                };
                Correspondence::new(p, q)
            })
            .collect();
        ProblemInstance::new(corr, 0.5, Some(Vec3::z())).unwrap()
    }

    #[test]
    fn relaxation_underestimates_and_is_tight_at_points() {
        let mut rng = rng_from_seed(21);
        for _ in 0..20 {
            let inst = random_pose_instance(&mut rng, 12);
            let arc = Arc2D::new(uniform_angle(&mut rng), rng_unit(&mut rng) * 0.8);
            let tball = TranslationBall::new(uniform_in_cube(&mut rng, 2.0), rng_unit(&mut rng) * 1.5);
            let bounds = ArcBounds::new(&arc);
            let ivs: Vec<_> = inst
                .correspondences
                .iter()
                .map(|c| bounds.pose_interval(&c.p, &c.q, &tball))
                .collect();
            let rel = build_wls_relaxation(&ivs, inst.eps);
            let (lo, hi) = arc.bounds().unwrap();
            for _ in 0..1000 {
                let th = rng.gen_range(lo..=hi);
                let x = Transform::new(rot_z(th), tball.center + uniform_in_ball(&mut rng, tball.radius));
                let relaxed = rel.value(inst.correspondences.iter().map(|c| x.residual_sq(c)));
                assert!(relaxed <= evaluate_tls(&inst, &x) + 1e-9);
            }

            let center = Transform::new(rot_z(arc.center()), tball.center);
            let point = ArcBounds::new(&Arc2D::point(arc.center()));
            let ivs: Vec<_> = inst
                .correspondences
                .iter()
                .map(|c| point.pose_interval(&c.p, &c.q, &TranslationBall::point(tball.center)))
                .collect();
            let rel = build_wls_relaxation(&ivs, inst.eps);
            let relaxed = rel.value(inst.correspondences.iter().map(|c| center.residual_sq(c)));
            assert!((relaxed - evaluate_tls(&inst, &center)).abs() < 1e-9);
        }
    }

    use rand::Rng;
}
