//! Geometric primitives shared by the solver and the exact TLS objective.

use std::f64::consts::{PI, TAU};
use std::fmt;

use nalgebra::{Matrix3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub type Vec3 = Vector3<f64>;
pub type Rotation3 = nalgebra::Rotation3<f64>;

/// Tolerance on `‖axis‖ = 1` for user-facing axis arguments.
pub const UNIT_AXIS_TOL: f64 = 1e-12;

/// The two registration problems the solver handles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProblemKind {
    /// Rotation-only alignment over all of SO(3), translation fixed at zero.
    #[serde(rename = "rotation")]
    Rotation,
    /// Rotation about a known axis plus a free 3D translation.
    #[serde(rename = "pose-so2")]
    PoseSo2,
}

impl ProblemKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProblemKind::Rotation => "rotation",
            ProblemKind::PoseSo2 => "pose-so2",
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ProblemKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "rotation" => Ok(ProblemKind::Rotation),
            "pose-so2" => Ok(ProblemKind::PoseSo2),
            other => Err(format!("unknown problem kind '{other}' (expected rotation or pose-so2)")),
        }
    }
}

/// Wraps an angle into `[-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    if (-PI..=PI).contains(&theta) {
        return theta;
    }
    let w = (theta + PI).rem_euclid(TAU) - PI;
    // rem_euclid can land exactly on TAU - PI after rounding
    if w > PI {
        w - TAU
    } else {
        w
    }
}

/// A planar rotation angle, always stored wrapped into `[-π, π]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Angle2D(f64);

impl Angle2D {
    pub fn new(theta: f64) -> Self {
        Angle2D(wrap_angle(theta))
    }

    pub fn radians(self) -> f64 {
        self.0
    }

    /// Rotation by this angle about +z.
    pub fn to_rotation(self) -> Rotation3 {
        rot_z(self.0)
    }

    /// Shortest signed angular offset from `self` to `other`.
    pub fn delta_to(self, other: Angle2D) -> f64 {
        wrap_angle(other.0 - self.0)
    }
}

/// Rotation by `theta` about +z.
pub fn rot_z(theta: f64) -> Rotation3 {
    let (s, c) = theta.sin_cos();
    Rotation3::from_matrix_unchecked(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub p: Vec3,
    pub q: Vec3,
}

impl Correspondence {
    pub fn new(p: Vec3, q: Vec3) -> Self {
        Correspondence { p, q }
    }
}

/// A rigid transform `x ↦ R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform {
    pub rotation: Rotation3,
    pub translation: Vec3,
}

impl Transform {
    pub fn identity() -> Self {
        Transform {
            rotation: Rotation3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Rotation3, translation: Vec3) -> Self {
        Transform {
            rotation,
            translation,
        }
    }

    pub fn from_rotation(rotation: Rotation3) -> Self {
        Transform {
            rotation,
            translation: Vec3::zeros(),
        }
    }

    /// Squared residual `‖R p − q + t‖²` of one correspondence.
    #[inline]
    pub fn residual_sq(&self, c: &Correspondence) -> f64 {
        (self.rotation * c.p - c.q + self.translation).norm_squared()
    }
}

impl Default for Transform {
    fn default() -> Self {
        Transform::identity()
    }
}

/// Registration data: correspondences, truncation threshold and an optional
/// known rotation axis.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemInstance {
    pub correspondences: Vec<Correspondence>,
    pub eps: f64,
    pub axis: Option<Vec3>,
    pub ground_truth: Option<Transform>,
}

impl ProblemInstance {
    pub fn new(correspondences: Vec<Correspondence>, eps: f64, axis: Option<Vec3>) -> Result<Self> {
        let inst = ProblemInstance {
            correspondences,
            eps,
            axis,
            ground_truth: None,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn with_ground_truth(mut self, gt: Transform) -> Self {
        self.ground_truth = Some(gt);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.correspondences.is_empty() {
            return Err(invalid("instance needs at least one correspondence"));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(invalid(format!("eps must be positive and finite, got {}", self.eps)));
        }
        for (i, c) in self.correspondences.iter().enumerate() {
            if !c.p.iter().chain(c.q.iter()).all(|v| v.is_finite()) {
                return Err(invalid(format!("correspondence {i} has a non-finite coordinate")));
            }
        }
        if let Some(axis) = self.axis {
            check_unit(&axis)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.correspondences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.correspondences.is_empty()
    }

    pub fn eps_sq(&self) -> f64 {
        self.eps * self.eps
    }
}

/// A closed ball of translations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TranslationBall {
    pub center: Vec3,
    pub radius: f64,
}

impl TranslationBall {
    pub fn new(center: Vec3, radius: f64) -> Self {
        debug_assert!(radius >= 0.0);
        TranslationBall { center, radius }
    }

    pub fn point(center: Vec3) -> Self {
        TranslationBall {
            center,
            radius: 0.0,
        }
    }

    pub fn contains(&self, t: &Vec3, tol: f64) -> bool {
        (t - self.center).norm() <= self.radius + tol
    }

    /// Nearest point of the ball to `t`.
    pub fn project(&self, t: &Vec3) -> Vec3 {
        let d = t - self.center;
        let n = d.norm();
        if n <= self.radius {
            *t
        } else {
            self.center + d * (self.radius / n)
        }
    }
}

/// A closed geodesic ball of 3D rotations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationBall3 {
    pub center: Rotation3,
    pub radius: f64,
}

impl RotationBall3 {
    pub fn new(center: Rotation3, radius: f64) -> Self {
        RotationBall3 {
            center,
            radius: radius.clamp(0.0, PI),
        }
    }

    pub fn contains(&self, r: &Rotation3, tol: f64) -> bool {
        geodesic_distance(&self.center, r) <= self.radius + tol
    }
}

/// A closed arc of planar rotations, or the empty / full circle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Arc2D {
    Empty,
    Full,
    Arc { center: f64, radius: f64 },
}

impl Arc2D {
    /// Arc from its center and half-length. A radius of π or more is the full circle.
    pub fn new(center: f64, radius: f64) -> Self {
        if radius.is_nan() || radius < 0.0 {
            Arc2D::Empty
        } else if radius >= PI {
            Arc2D::Full
        } else {
            Arc2D::Arc {
                center: wrap_angle(center),
                radius,
            }
        }
    }

    /// Arc covering the unwrapped interval `[lo, hi]`.
    pub fn from_bounds(lo: f64, hi: f64) -> Self {
        if hi < lo {
            return Arc2D::Empty;
        }
        Arc2D::new(0.5 * (lo + hi), 0.5 * (hi - lo))
    }

    pub fn point(theta: f64) -> Self {
        Arc2D::new(theta, 0.0)
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, Arc2D::Empty)
    }

    pub fn is_full(&self) -> bool {
        matches!(self, Arc2D::Full)
    }

    /// Center angle; the full circle is centered at 0.
    pub fn center(&self) -> f64 {
        match *self {
            Arc2D::Arc { center, .. } => center,
            _ => 0.0,
        }
    }

    /// Half-length in radians: 0 for empty, π for full.
    pub fn radius(&self) -> f64 {
        match *self {
            Arc2D::Empty => 0.0,
            Arc2D::Full => PI,
            Arc2D::Arc { radius, .. } => radius,
        }
    }

    /// Unwrapped `[center − radius, center + radius]`, `None` when empty.
    pub fn bounds(&self) -> Option<(f64, f64)> {
        match *self {
            Arc2D::Empty => None,
            _ => {
                let (c, r) = (self.center(), self.radius());
                Some((c - r, c + r))
            }
        }
    }

    pub fn contains(&self, theta: f64, tol: f64) -> bool {
        match *self {
            Arc2D::Empty => false,
            Arc2D::Full => true,
            Arc2D::Arc { center, radius } => wrap_angle(theta - center).abs() <= radius + tol,
        }
    }

    /// Splits the arc into two halves sharing the midpoint.
    pub fn bisect(&self) -> [Arc2D; 2] {
        let (c, r) = (self.center(), self.radius());
        let h = 0.5 * r;
        [Arc2D::new(c - h, h), Arc2D::new(c + h, h)]
    }

    /// An arc containing `self ∩ other`. Exact whenever the intersection is a
    /// single arc; when it splits into two pieces the smaller operand is returned.
    pub fn intersect(&self, other: &Arc2D) -> Arc2D {
        match (*self, *other) {
            (Arc2D::Empty, _) | (_, Arc2D::Empty) => Arc2D::Empty,
            (Arc2D::Full, a) | (a, Arc2D::Full) => a,
            (Arc2D::Arc { center: c1, radius: r1 }, Arc2D::Arc { center: c2, radius: r2 }) => {
                // express `other` relative to self's center
                let d = wrap_angle(c2 - c1);
                let mut pieces: Vec<(f64, f64)> = Vec::with_capacity(2);
                for shift in [-TAU, 0.0, TAU] {
                    let lo = (d + shift - r2).max(-r1);
                    let hi = (d + shift + r2).min(r1);
                    if lo <= hi {
                        pieces.push((lo, hi));
                    }
                }
                match pieces.len() {
                    0 => Arc2D::Empty,
                    1 => Arc2D::from_bounds(c1 + pieces[0].0, c1 + pieces[0].1),
                    _ => {
                        if r1 <= r2 {
                            *self
                        } else {
                            *other
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn check_unit(axis: &Vec3) -> Result<()> {
    let n = axis.norm();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_AXIS_TOL {
        return Err(invalid(format!("axis must be a unit vector, got norm {n}")));
    }
    Ok(())
}

/// Rotation by `theta` about the unit `axis` (right-hand rule).
pub fn exp_axis_angle(axis: &Vec3, theta: f64) -> Result<Rotation3> {
    check_unit(axis)?;
    Ok(exp_axis_angle_unchecked(axis, theta))
}

/// Rodrigues formula without the unit-norm check; the axis is renormalized.
pub(crate) fn exp_axis_angle_unchecked(axis: &Vec3, theta: f64) -> Rotation3 {
    let n = axis.norm();
    if n == 0.0 || theta == 0.0 {
        return Rotation3::identity();
    }
    Rotation3::from_axis_angle(&Unit::new_unchecked(axis / n), theta)
}

/// Rotation from a rotation vector (axis times angle).
pub fn exp_rotvec(v: &Vec3) -> Rotation3 {
    Rotation3::new(*v)
}

/// Angle of the relative rotation `r1ᵀ r2`, in `[0, π]`.
pub fn geodesic_distance(r1: &Rotation3, r2: &Rotation3) -> f64 {
    let m = r1.matrix().transpose() * r2.matrix();
    let cos = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let sin = 0.5
        * Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]).norm();
    // same value as the clamped arccos, but accurate near 0 and π
    sin.atan2(cos).clamp(0.0, PI)
}

/// A rotation taking `axis` to +z. Antipodal input (−z) maps via a half turn about x.
pub fn axis_align_frame(axis: &Vec3) -> Result<Rotation3> {
    check_unit(axis)?;
    let z = Vec3::z();
    let a = axis.normalize();
    if a.dot(&z) >= 0.0 {
        return Ok(rotation_between_upper(&a));
    }
    // flip into the upper hemisphere first so the second step stays well conditioned
    let flip = half_turn_x();
    let a2 = flip * a;
    Ok(rotation_between_upper(&a2) * flip)
}

/// Exact half turn about x.
fn half_turn_x() -> Rotation3 {
    Rotation3::from_matrix_unchecked(Matrix3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0)))
}

/// Minimal rotation taking unit `a` (with `a_z ≥ 0`) onto +z.
fn rotation_between_upper(a: &Vec3) -> Rotation3 {
    let z = Vec3::z();
    let v = a.cross(&z);
    let c = a.dot(&z);
    let vx = Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0);
    let m = Matrix3::identity() + vx + vx * vx * (1.0 / (1.0 + c));
    Rotation3::from_matrix_unchecked(m)
}

/// Exact TLS cost `Σ min(‖R pᵢ − qᵢ + t‖², ε²)`.
pub fn evaluate_tls(instance: &ProblemInstance, transform: &Transform) -> f64 {
    let eps_sq = instance.eps_sq();
    instance
        .correspondences
        .iter()
        .map(|c| transform.residual_sq(c).min(eps_sq))
        .sum()
}

/// Instance with every point expressed in `frame` coordinates.
pub fn rotate_instance(instance: &ProblemInstance, frame: &Rotation3) -> ProblemInstance {
    ProblemInstance {
        correspondences: instance
            .correspondences
            .iter()
            .map(|c| Correspondence::new(frame * c.p, frame * c.q))
            .collect(),
        eps: instance.eps,
        axis: instance.axis.map(|a| frame * a),
        ground_truth: instance.ground_truth.map(|gt| Transform {
            rotation: frame * gt.rotation * frame.inverse(),
            translation: frame * gt.translation,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-12;

    #[test]
    fn exp_examples() {
        let z = Vec3::z();
        assert!((exp_axis_angle(&z, 0.0).unwrap().matrix() - Matrix3::identity()).norm() < TOL);
        let r = exp_axis_angle(&z, PI / 2.0).unwrap();
        assert!((r * Vec3::x() - Vec3::y()).norm() < TOL);
        let r = exp_axis_angle(&Vec3::x(), PI).unwrap();
        assert!((r * Vec3::y() + Vec3::y()).norm() < TOL);
        assert!(exp_axis_angle(&Vec3::new(1.0, 1.0, 0.0), 0.3).is_err());
    }

    #[test]
    fn geodesic_examples() {
        let i = Rotation3::identity();
        assert!(geodesic_distance(&i, &i).abs() < TOL);
        assert!((geodesic_distance(&i, &rot_z(PI / 2.0)) - PI / 2.0).abs() < TOL);
        assert!((geodesic_distance(&rot_z(-PI / 4.0), &rot_z(PI / 4.0)) - PI / 2.0).abs() < TOL);
        assert!((geodesic_distance(&i, &rot_z(PI)) - PI).abs() < TOL);
        assert!((geodesic_distance(&i, &rot_z(1e-9)) - 1e-9).abs() < 1e-20);
    }

    #[test]
    fn align_frame_examples() {
        let r = axis_align_frame(&Vec3::z()).unwrap();
        assert!((r.matrix() - Matrix3::identity()).norm() < TOL);
        let r = axis_align_frame(&-Vec3::z()).unwrap();
        assert!((r * -Vec3::z() - Vec3::z()).norm() < TOL);
        let half_x = Rotation3::from_axis_angle(&Vec3::x_axis(), PI);
        assert!((r.matrix() - half_x.matrix()).norm() < TOL);
        let r = axis_align_frame(&Vec3::x()).unwrap();
        assert!((r * Vec3::x() - Vec3::z()).norm() <= 1e-12);
        let a = Vec3::new(0.3, -0.2, -0.9).normalize();
        let r = axis_align_frame(&a).unwrap();
        assert!((r * a - Vec3::z()).norm() <= 1e-12);
        assert!((r.matrix().determinant() - 1.0).abs() < 1e-12);
        assert!(axis_align_frame(&Vec3::new(0.0, 0.0, 2.0)).is_err());
    }

    fn single(p: Vec3, q: Vec3, eps: f64) -> ProblemInstance {
        ProblemInstance::new(vec![Correspondence::new(p, q)], eps, None).unwrap()
    }

    #[test]
    fn tls_examples() {
        let id = Transform::identity();
        assert_eq!(evaluate_tls(&single(Vec3::x(), Vec3::x(), 0.5), &id), 0.0);
        assert_eq!(evaluate_tls(&single(Vec3::x(), Vec3::y(), 0.5), &id), 0.25);
        let inst = ProblemInstance::new(
            vec![
                Correspondence::new(Vec3::x(), Vec3::x()),
                Correspondence::new(Vec3::x(), Vec3::new(100.0, 0.0, 0.0)),
            ],
            0.5,
            None,
        )
        .unwrap();
        assert_eq!(evaluate_tls(&inst, &id), 0.25);
    }

    #[test]
    fn instance_validation() {
        assert!(ProblemInstance::new(vec![], 0.5, None).is_err());
        let c = vec![Correspondence::new(Vec3::x(), Vec3::x())];
        assert!(ProblemInstance::new(c.clone(), 0.0, None).is_err());
        assert!(ProblemInstance::new(c.clone(), 0.5, Some(Vec3::new(0.0, 0.0, 1.1))).is_err());
        assert!(ProblemInstance::new(c, 0.5, Some(Vec3::z())).is_ok());
    }

    #[test]
    fn wrap_and_arcs() {
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < TOL);
        assert!((wrap_angle(-7.0) - (-7.0 + TAU)).abs() < TOL);
        assert!(wrap_angle(PI) <= PI && wrap_angle(-PI) >= -PI);

        let a = Arc2D::new(0.0, PI / 2.0);
        let [l, r] = a.bisect();
        assert!((l.center() + PI / 4.0).abs() < TOL && (l.radius() - PI / 4.0).abs() < TOL);
        assert!((r.center() - PI / 4.0).abs() < TOL && (r.radius() - PI / 4.0).abs() < TOL);
        let [l, r] = Arc2D::Full.bisect();
        assert!((l.radius() - PI / 2.0).abs() < TOL && (r.radius() - PI / 2.0).abs() < TOL);

        // intersection across the ±π seam
        let a = Arc2D::new(3.0, 0.3);
        let b = Arc2D::new(-3.0, 0.3);
        let c = a.intersect(&b);
        let gap = TAU - 6.0; // distance between centers across the seam
        assert!((c.radius() - (0.6 - gap) / 2.0).abs() < 1e-12);
        assert!(c.contains(PI, 1e-12));
        assert!(Arc2D::new(0.0, 0.1).intersect(&Arc2D::new(1.0, 0.1)).is_empty());
        assert_eq!(Arc2D::Full.intersect(&a), a);
    }
}
