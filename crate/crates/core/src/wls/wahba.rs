//! Weighted rotation fitting (Wahba's problem) with optional ball constraints.

use std::f64::consts::PI;

use nalgebra::{Matrix3, SVD};

use super::sphere::solve_symmetric;
use crate::error::{invalid, Result};
use crate::geometry::{
    exp_axis_angle_unchecked, geodesic_distance, rot_z, wrap_angle, Angle2D, Arc2D, Correspondence, Rotation3,
    RotationBall3, Vec3,
};

/// Second-moment sums of a weighted point set. Everything the rotation
/// solvers need is a function of `B = Σ wᵢ pᵢ qᵢᵀ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WahbaAccumulators {
    /// `Σ wᵢ pᵢ qᵢᵀ`
    pub b: Matrix3<f64>,
    /// `B + Bᵀ`
    pub c: Matrix3<f64>,
    /// `Σ wᵢ pᵢ × qᵢ`
    pub z: Vec3,
    pub tr_c: f64,
    /// `Σ wᵢ (‖pᵢ‖² + ‖qᵢ‖²)`, so the objective is `sum_sq − 2 tr(R B)`.
    pub sum_sq: f64,
    pub total_weight: f64,
}

impl WahbaAccumulators {
    pub fn new(pairs: &[Correspondence], weights: &[f64]) -> Self {
        assert_eq!(pairs.len(), weights.len(), "one weight per pair");
        let mut b = Matrix3::zeros();
        let mut sum_sq = 0.0;
        let mut total_weight = 0.0;
        for (c, &w) in pairs.iter().zip(weights) {
            if w == 0.0 {
                continue;
            }
            b += (c.p * w) * c.q.transpose();
            sum_sq += w * (c.p.norm_squared() + c.q.norm_squared());
            total_weight += w;
        }
        Self::from_parts(b, sum_sq, total_weight)
    }

    pub fn from_parts(b: Matrix3<f64>, sum_sq: f64, total_weight: f64) -> Self {
        let c = b + b.transpose();
        WahbaAccumulators {
            b,
            c,
            z: Vec3::new(b[(1, 2)] - b[(2, 1)], b[(2, 0)] - b[(0, 2)], b[(0, 1)] - b[(1, 0)]),
            tr_c: c.trace(),
            sum_sq,
            total_weight,
        }
    }

    /// Accumulators of the pairs `(pᵢ, R_cᵀ qᵢ)`.
    pub fn recentered(&self, center: &Rotation3) -> Self {
        Self::from_parts(self.b * center.matrix(), self.sum_sq, self.total_weight)
    }

    /// `Σ wᵢ ‖R pᵢ − qᵢ‖²`.
    pub fn objective(&self, r: &Rotation3) -> f64 {
        (self.sum_sq - 2.0 * (r.matrix() * self.b).trace()).max(0.0)
    }

    /// Coefficients `(a, b, k)` with `tr(R_z(θ) B) = a cos θ + b sin θ + k`.
    pub fn planar_coefficients(&self) -> (f64, f64, f64) {
        let b = &self.b;
        (b[(0, 0)] + b[(1, 1)], b[(0, 1)] - b[(1, 0)], b[(2, 2)])
    }

    /// `Σ wᵢ ‖R_z(θ) pᵢ − qᵢ‖²`.
    pub fn planar_objective(&self, theta: f64) -> f64 {
        let (a, b, k) = self.planar_coefficients();
        let (s, c) = theta.sin_cos();
        (self.sum_sq - 2.0 * (a * c + b * s + k)).max(0.0)
    }

    fn require_weight(&self) -> Result<()> {
        if self.total_weight > 0.0 {
            Ok(())
        } else {
            Err(invalid("at least one weight must be positive"))
        }
    }
}

fn check_weights(pairs: &[Correspondence], weights: &[f64]) -> Result<()> {
    if pairs.len() != weights.len() {
        return Err(invalid(format!("{} pairs but {} weights", pairs.len(), weights.len())));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(invalid("weights must be finite and non-negative"));
    }
    Ok(())
}

/// Rotation maximizing `tr(R B)` (Kabsch with reflection correction).
pub(crate) fn wahba_from_b(b: &Matrix3<f64>) -> Rotation3 {
    let svd = SVD::new(*b, true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let v = v_t.transpose();
    let ut = u.transpose();
    let mut d = Matrix3::identity();
    if (v * ut).determinant() < 0.0 {
        let k = svd.singular_values.imin();
        d[(k, k)] = -1.0;
    }
    Rotation3::from_matrix_unchecked(v * d * ut)
}

/// `argmin_R Σ wᵢ ‖R pᵢ − qᵢ‖²` over all of SO(3).
pub fn weighted_wahba_svd(pairs: &[Correspondence], weights: &[f64]) -> Result<Rotation3> {
    check_weights(pairs, weights)?;
    let acc = WahbaAccumulators::new(pairs, weights);
    acc.require_weight()?;
    Ok(wahba_from_b(&acc.b))
}

/// Optimal angle about +z from the accumulators: the major eigenvector `v`
/// of `[[c₁, c₂], [c₂, c₃]]` gives `θ = 2 atan2(v₁, v₂)`.
pub(crate) fn fixed_axis_angle(acc: &WahbaAccumulators) -> f64 {
    let c1 = acc.c[(2, 2)];
    let c2 = acc.z.z;
    let c3 = acc.tr_c;
    let half_sum = 0.5 * (c1 + c3);
    let half_diff = 0.5 * (c1 - c3);
    let lambda = half_sum + half_diff.hypot(c2);
    // two algebraically equivalent eigenvector forms; keep the better conditioned one
    let e1 = (c2, lambda - c1);
    let e2 = (lambda - c3, c2);
    let (mut v1, mut v2) = if e1.0.hypot(e1.1) >= e2.0.hypot(e2.1) { e1 } else { e2 };
    if v1 == 0.0 && v2 == 0.0 {
        // P is a multiple of the identity: every angle is optimal
        return 0.0;
    }
    if v2 < 0.0 || (v2 == 0.0 && v1 < 0.0) {
        v1 = -v1;
        v2 = -v2;
    }
    wrap_angle(2.0 * v1.atan2(v2))
}

/// Optimal rotation angle about +z for points already expressed in a frame
/// whose +z is the fixed axis.
pub fn fixed_axis_rotation_solve(pairs: &[Correspondence], weights: &[f64]) -> Result<Angle2D> {
    check_weights(pairs, weights)?;
    let acc = WahbaAccumulators::new(pairs, weights);
    acc.require_weight()?;
    Ok(Angle2D::new(fixed_axis_angle(&acc)))
}

/// Rotation by exactly `angle` whose axis maximizes the Davenport form.
pub(crate) fn angle_constrained_from_acc(acc: &WahbaAccumulators, angle: f64) -> Rotation3 {
    let (s, c) = (0.5 * angle).sin_cos();
    let a = acc.c * (s * s);
    let g = acc.z * (s * c);
    let axis = solve_symmetric(&a, &g);
    exp_axis_angle_unchecked(&axis, angle)
}

/// `argmin_R Σ wᵢ ‖R pᵢ − qᵢ‖²` subject to `d∠(I, R) = angle`.
pub fn angle_constrained_wahba(pairs: &[Correspondence], weights: &[f64], angle: f64) -> Result<Rotation3> {
    if !(angle > 0.0 && angle <= PI) {
        return Err(invalid(format!("constraint angle must lie in (0, π], got {angle}")));
    }
    check_weights(pairs, weights)?;
    let acc = WahbaAccumulators::new(pairs, weights);
    acc.require_weight()?;
    Ok(angle_constrained_from_acc(&acc, angle))
}

/// Search region of a ball-constrained rotation fit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RotationRegion {
    So3(RotationBall3),
    /// Arc of rotations about +z.
    FixedAxis(Arc2D),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationSolution {
    pub rotation: Rotation3,
    /// Set in fixed-axis mode.
    pub angle: Option<Angle2D>,
    pub objective: f64,
    pub constraint_active: bool,
}

/// SO(3) active-set solve from accumulators of the original pairs.
pub(crate) fn so3_ball_solve(acc: &WahbaAccumulators, ball: &RotationBall3) -> (Rotation3, bool) {
    if ball.radius >= PI {
        return (wahba_from_b(&acc.b), false);
    }
    let centered = acc.recentered(&ball.center);
    let delta = wahba_from_b(&centered.b);
    if geodesic_distance(&Rotation3::identity(), &delta) <= ball.radius {
        return (ball.center * delta, false);
    }
    if ball.radius == 0.0 {
        return (ball.center, true);
    }
    let delta = angle_constrained_from_acc(&centered, ball.radius);
    (ball.center * delta, true)
}

/// Fixed-axis active-set solve: unconstrained angle, else the better arc endpoint.
pub(crate) fn arc_solve(acc: &WahbaAccumulators, arc: &Arc2D) -> (f64, bool) {
    let theta = fixed_axis_angle(acc);
    if arc.contains(theta, 0.0) {
        return (theta, false);
    }
    let (lo, hi) = arc.bounds().expect("non-empty arc");
    if acc.planar_objective(lo) <= acc.planar_objective(hi) {
        (lo, true)
    } else {
        (hi, true)
    }
}

/// Minimizes `Σ wᵢ ‖R pᵢ − qᵢ‖²` over a rotation ball or arc.
pub fn ball_constrained_rotation_solve(
    pairs: &[Correspondence],
    weights: &[f64],
    region: &RotationRegion,
) -> Result<RotationSolution> {
    check_weights(pairs, weights)?;
    let acc = WahbaAccumulators::new(pairs, weights);
    acc.require_weight()?;
    rotation_solve_from_acc(&acc, region)
}

pub(crate) fn rotation_solve_from_acc(acc: &WahbaAccumulators, region: &RotationRegion) -> Result<RotationSolution> {
    match region {
        RotationRegion::So3(ball) => {
            let (rotation, active) = so3_ball_solve(acc, ball);
            Ok(RotationSolution {
                rotation,
                angle: None,
                objective: acc.objective(&rotation),
                constraint_active: active,
            })
        }
        RotationRegion::FixedAxis(arc) => {
            if arc.is_empty() {
                return Err(invalid("empty rotation arc"));
            }
            let (theta, active) = arc_solve(acc, arc);
            Ok(RotationSolution {
                rotation: rot_z(theta),
                angle: Some(Angle2D::new(theta)),
                objective: acc.planar_objective(theta),
                constraint_active: active,
            })
        }
    }
}
