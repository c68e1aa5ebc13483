//! Weighted least-squares pose fit about a fixed axis (+z) with an arc
//! constraint on the angle and a ball constraint on the translation.
//!
//! With normalized weighted centroids `p̄, q̄` the objective separates as
//!
//! ```text
//! f(θ, t) = Σ wᵢ ‖R xᵢ − yᵢ‖² + W ‖R p̄ − q̄ + t‖²,   xᵢ = pᵢ − p̄, yᵢ = qᵢ − q̄
//! ```
//!
//! so for each angle the best translation is `q̄ − R p̄` projected onto the
//! ball, and the problem reduces to one dimension:
//!
//! ```text
//! g(θ) = S(θ) + W · max(0, ‖q̄ − c − R p̄‖ − n_t)²
//! ```
//!
//! `S` and the distance are both sinusoids in θ. If the best angle for `S`
//! keeps the unconstrained translation inside the ball it is optimal outright.
//! Otherwise `g` is minimized by interval bisection using exact sinusoid
//! ranges, which always yields a certified lower bound.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::{PI, TAU};

use nalgebra::Matrix3;

use super::wahba::{arc_solve, WahbaAccumulators};
use crate::contractor::rotation_arc_within;
use crate::error::{invalid, Result};
use crate::geometry::{rot_z, Arc2D, Correspondence, Transform, TranslationBall, Vec3};

/// Result of a ball-constrained pose fit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseSolution {
    pub transform: Transform,
    pub angle: f64,
    /// Objective at `transform`.
    pub objective: f64,
    /// Certified lower bound on the constrained minimum, `≤ objective`.
    pub lower_bound: f64,
    /// The translation ball is binding at the returned pose.
    pub translation_active: bool,
    /// The returned angle sits on the arc boundary.
    pub rotation_active: bool,
}

/// `k − 2 (a cos θ + b sin θ)`
#[derive(Clone, Copy, Debug)]
struct Sinusoid {
    k: f64,
    a: f64,
    b: f64,
}

impl Sinusoid {
    #[inline]
    fn eval(&self, theta: f64) -> f64 {
        let (s, c) = theta.sin_cos();
        self.k - 2.0 * (self.a * c + self.b * s)
    }

    /// Angle of the minimum.
    fn argmin(&self) -> f64 {
        self.b.atan2(self.a)
    }

    #[inline]
    fn derivative(&self, theta: f64) -> f64 {
        let (s, c) = theta.sin_cos();
        2.0 * (self.a * s - self.b * c)
    }

    /// Bound on the absolute first and second derivatives.
    #[inline]
    fn amplitude(&self) -> f64 {
        2.0 * self.a.hypot(self.b)
    }

    /// Exact minimum over `[lo, hi]` (unwrapped, `hi − lo ≤ 2π`).
    #[inline]
    fn min_on(&self, lo: f64, hi: f64) -> f64 {
        let amp = 2.0 * self.a.hypot(self.b);
        if amp == 0.0 {
            return self.k;
        }
        let phase = self.argmin();
        let off = (phase - lo).rem_euclid(TAU);
        if off <= hi - lo {
            self.k - amp
        } else {
            self.eval(lo).min(self.eval(hi))
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Interval {
    lo: f64,
    hi: f64,
    bound: f64,
}

impl PartialEq for Interval {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound
    }
}
impl Eq for Interval {}
impl PartialOrd for Interval {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Interval {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on the bound
        other.bound.total_cmp(&self.bound)
    }
}

/// Precomputed one-dimensional reduction of a pose fit.
#[derive(Clone, Debug)]
pub(crate) struct PoseProblem {
    rot: WahbaAccumulators,
    rot_part: Sinusoid,
    dist_sq: Sinusoid,
    weight: f64,
    p_bar: Vec3,
    q_bar: Vec3,
    tball: TranslationBall,
}

impl PoseProblem {
    pub(crate) fn new(pairs: &[Correspondence], weights: &[f64], tball: &TranslationBall) -> Option<Self> {
        let mut w_sum = 0.0;
        let mut p_bar = Vec3::zeros();
        let mut q_bar = Vec3::zeros();
        for (c, &w) in pairs.iter().zip(weights) {
            w_sum += w;
            p_bar += c.p * w;
            q_bar += c.q * w;
        }
        if !(w_sum > 0.0) {
            return None;
        }
        p_bar /= w_sum;
        q_bar /= w_sum;
        let mut b = Matrix3::zeros();
        let mut sum_sq = 0.0;
        for (c, &w) in pairs.iter().zip(weights) {
            if w == 0.0 {
                continue;
            }
            let x = c.p - p_bar;
            let y = c.q - q_bar;
            b += (x * w) * y.transpose();
            sum_sq += w * (x.norm_squared() + y.norm_squared());
        }
        let rot = WahbaAccumulators::from_parts(b, sum_sq, w_sum);
        let (a, bb, k) = rot.planar_coefficients();
        let rot_part = Sinusoid {
            k: sum_sq - 2.0 * k,
            a,
            b: bb,
        };
        let u = q_bar - tball.center;
        let dist_sq = Sinusoid {
            k: u.norm_squared() + p_bar.norm_squared() - 2.0 * u.z * p_bar.z,
            a: p_bar.x * u.x + p_bar.y * u.y,
            b: p_bar.x * u.y - p_bar.y * u.x,
        };
        Some(PoseProblem {
            rot,
            rot_part,
            dist_sq,
            weight: w_sum,
            p_bar,
            q_bar,
            tball: *tball,
        })
    }

    #[inline]
    fn penalty(&self, dist_sq: f64) -> f64 {
        let excess = (dist_sq.max(0.0).sqrt() - self.tball.radius).max(0.0);
        self.weight * excess * excess
    }

    #[inline]
    fn value(&self, theta: f64) -> f64 {
        self.rot_part.eval(theta).max(0.0) + self.penalty(self.dist_sq.eval(theta))
    }

    /// `g` and its derivative. The penalty is C¹, so this is exact.
    fn value_and_slope(&self, theta: f64) -> (f64, f64) {
        let d = self.dist_sq.eval(theta).max(0.0);
        let dist = d.sqrt();
        let slope_p = if dist > self.tball.radius {
            self.weight * (1.0 - self.tball.radius / dist) * self.dist_sq.derivative(theta)
        } else {
            0.0
        };
        (
            self.rot_part.eval(theta).max(0.0) + self.penalty(d),
            self.rot_part.derivative(theta) + slope_p,
        )
    }

    /// Lower bound of `g` on `[lo, hi]`, the better of two bounds:
    /// the sum of the separate exact minima of `S` and the penalty, and a
    /// second-order Taylor bound about the midpoint using a bound on `|g''|`.
    /// The first is good on wide intervals, the second near the minimizer
    /// where the two terms trade off.
    fn bound_on(&self, lo: f64, hi: f64) -> f64 {
        let d_min = self.dist_sq.min_on(lo, hi).max(0.0);
        let separate = self.rot_part.min_on(lo, hi).max(0.0) + self.penalty(d_min);

        let r = self.tball.radius;
        let amp_d = self.dist_sq.amplitude();
        let mut curv_p = amp_d;
        if r > 0.0 {
            curv_p += r * amp_d * amp_d / (2.0 * d_min.max(r * r).powf(1.5));
        }
        let curvature = self.rot_part.amplitude() + self.weight * curv_p;
        let half = 0.5 * (hi - lo);
        let (g, slope) = self.value_and_slope(lo + half);
        let taylor = g - slope.abs() * half - 0.5 * curvature * half * half;
        // guard against rounding in g itself
        let scale = self.rot_part.k.abs() + self.rot_part.amplitude() + self.weight * (self.dist_sq.k.abs() + amp_d);
        let taylor = taylor - 8.0 * f64::EPSILON * (g.abs() + scale);
        separate.max(taylor)
    }

    fn translation_at(&self, theta: f64) -> (Vec3, bool) {
        let free = self.q_bar - rot_z(theta) * self.p_bar;
        let t = self.tball.project(&free);
        let active = (free - self.tball.center).norm() > self.tball.radius;
        (t, active)
    }

    fn solution(&self, theta: f64, objective: f64, lower_bound: f64, arc: &Arc2D) -> PoseSolution {
        let (translation, translation_active) = self.translation_at(theta);
        let rotation_active = match arc.bounds() {
            Some((lo, hi)) if !arc.is_full() => (theta - lo).abs() < 1e-15 || (theta - hi).abs() < 1e-15,
            _ => false,
        };
        PoseSolution {
            transform: Transform::new(rot_z(theta), translation),
            angle: theta,
            objective,
            lower_bound: lower_bound.min(objective),
            translation_active,
            rotation_active,
        }
    }

    /// Global minimum of `g` over `arc`, returned with a certified lower bound.
    pub(crate) fn solve(&self, arc: &Arc2D) -> Option<PoseSolution> {
        let (lo, hi) = arc.bounds()?;
        let (lo, hi) = if arc.is_full() { (-PI, PI) } else { (lo, hi) };

        // rotation-only optimum over the arc (active set on the angle)
        let (theta_rot, _) = arc_solve(&self.rot, arc);
        let theta_rot = clamp_into(theta_rot, lo, hi);
        let s_min = self.rot_part.eval(theta_rot).max(0.0);
        if self.penalty(self.dist_sq.eval(theta_rot)) == 0.0 {
            return Some(self.solution(theta_rot, s_min, s_min, arc));
        }

        // Candidates: the rotation fit restricted to angles whose free
        // translation stays in the ball, the arc ends, and the angle closest
        // to the ball.
        let mut best_theta = theta_rot;
        let mut best = self.value(theta_rot);
        let consider = |theta: f64, best: &mut f64, best_theta: &mut f64| {
            let v = self.value(theta);
            if v < *best {
                *best = v;
                *best_theta = theta;
            }
        };
        let feasible = rotation_arc_within(&self.p_bar, &(self.q_bar - self.tball.center), self.tball.radius);
        let inside = feasible.intersect(arc);
        if let Some((flo, fhi)) = inside.bounds() {
            let (t, _) = arc_solve(&self.rot, &inside);
            let t = if inside.is_full() { t } else { clamp_into(unwrap_near(t, 0.5 * (flo + fhi)), flo, fhi) };
            consider(unwrap_near(t, 0.5 * (lo + hi)), &mut best, &mut best_theta);
        }
        consider(lo, &mut best, &mut best_theta);
        consider(hi, &mut best, &mut best_theta);
        let theta_d = clamp_into(unwrap_near(self.dist_sq.argmin(), 0.5 * (lo + hi)), lo, hi);
        consider(theta_d, &mut best, &mut best_theta);

        // Interval bisection on g.
        let tol = 1e-11 * (1.0 + best.abs());
        let mut heap = BinaryHeap::with_capacity(64);
        let pieces = 8;
        let step = (hi - lo) / pieces as f64;
        for i in 0..pieces {
            let a = lo + step * i as f64;
            let b = if i + 1 == pieces { hi } else { a + step };
            heap.push(Interval {
                lo: a,
                hi: b,
                bound: self.bound_on(a, b),
            });
        }
        let mut lower = best;
        for _ in 0..600 {
            let Some(top) = heap.pop() else { break };
            if top.bound >= best - tol {
                lower = top.bound;
                heap.push(top);
                break;
            }
            let mid = 0.5 * (top.lo + top.hi);
            if !(mid > top.lo && mid < top.hi) {
                // interval exhausted at floating point resolution
                lower = lower.min(top.bound);
                continue;
            }
            consider(mid, &mut best, &mut best_theta);
            for (a, b) in [(top.lo, mid), (mid, top.hi)] {
                let bound = self.bound_on(a, b).max(top.bound);
                if bound < best {
                    heap.push(Interval { lo: a, hi: b, bound });
                }
            }
        }
        let remaining = heap.iter().map(|iv| iv.bound).fold(f64::INFINITY, f64::min);
        lower = lower.min(remaining).min(best);
        Some(self.solution(best_theta, best, lower, arc))
    }
}

fn clamp_into(theta: f64, lo: f64, hi: f64) -> f64 {
    let t = unwrap_near(theta, 0.5 * (lo + hi));
    t.clamp(lo, hi)
}

/// Representative of `theta` (mod 2π) closest to `reference`.
fn unwrap_near(theta: f64, reference: f64) -> f64 {
    reference + crate::geometry::wrap_angle(theta - reference)
}

/// Minimizes `Σ wᵢ ‖R(θ) pᵢ − qᵢ + t‖²` over θ in `rball` and `t` in `tball`,
/// for points whose fixed rotation axis is +z.
pub fn ball_constrained_pose_solve(
    pairs: &[Correspondence],
    weights: &[f64],
    rball: &Arc2D,
    tball: &TranslationBall,
) -> Result<PoseSolution> {
    if pairs.len() != weights.len() {
        return Err(invalid("one weight per pair"));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(invalid("weights must be non-negative"));
    }
    if rball.is_empty() {
        return Err(invalid("empty rotation arc"));
    }
    let problem = PoseProblem::new(pairs, weights, tball).ok_or_else(|| invalid("at least one weight must be positive"))?;
    Ok(problem.solve(rball).expect("non-empty arc"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{rng_from_seed, uniform_angle, uniform_in_ball, uniform_in_cube};
    use crate::wls::wahba::fixed_axis_rotation_solve;
    use rand::Rng;

    fn objective(pairs: &[Correspondence], w: &[f64], x: &Transform) -> f64 {
        pairs.iter().zip(w).map(|(c, w)| w * x.residual_sq(c)).sum()
    }

    fn random_pairs(rng: &mut crate::sampling::SeededRng, n: usize) -> (Vec<Correspondence>, Vec<f64>) {
        let gt = Transform::new(rot_z(uniform_angle(rng)), uniform_in_ball(rng, 5.0));
        let pairs = (0..n)
            .map(|_| {
                let p = uniform_in_cube(rng, 3.0);
                Correspondence::new(p, gt.rotation * p + gt.translation + uniform_in_ball(rng, 1.0))
            })
            .collect();
        let w = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        (pairs, w)
    }

    #[test]
    fn unconstrained_matches_kabsch_umeyama() {
        let mut rng = rng_from_seed(51);
        for _ in 0..20 {
            let (pairs, w) = random_pairs(&mut rng, 8);
            let sol = ball_constrained_pose_solve(&pairs, &w, &Arc2D::Full, &TranslationBall::new(Vec3::zeros(), 1e6)).unwrap();
            // classical weighted solution on centered points
            let wsum: f64 = w.iter().sum();
            let pb = pairs.iter().zip(&w).map(|(c, w)| c.p * *w).sum::<Vec3>() / wsum;
            let qb = pairs.iter().zip(&w).map(|(c, w)| c.q * *w).sum::<Vec3>() / wsum;
            let centered: Vec<_> = pairs.iter().map(|c| Correspondence::new(c.p - pb, c.q - qb)).collect();
            let th = fixed_axis_rotation_solve(&centered, &w).unwrap().radians();
            let t = qb - rot_z(th) * pb;
            assert!(crate::geometry::wrap_angle(sol.angle - th).abs() < 1e-9);
            assert!((sol.transform.translation - t).norm() < 1e-8);
            assert!(!sol.translation_active);
            assert!((sol.objective - objective(&pairs, &w, &sol.transform)).abs() < 1e-8);
            assert!((sol.lower_bound - sol.objective).abs() < 1e-12);
        }
    }

    #[test]
    fn point_region_returns_center() {
        let mut rng = rng_from_seed(52);
        let (pairs, w) = random_pairs(&mut rng, 6);
        let c = Vec3::new(0.3, -1.0, 2.0);
        let sol = ball_constrained_pose_solve(&pairs, &w, &Arc2D::point(0.7), &TranslationBall::point(c)).unwrap();
        assert!((sol.angle - 0.7).abs() < 1e-15);
        assert!((sol.transform.translation - c).norm() < 1e-12);
        let direct = objective(&pairs, &w, &Transform::new(rot_z(0.7), c));
        assert!((sol.objective - direct).abs() < 1e-9);
        assert!((sol.lower_bound - direct).abs() < 1e-9);
    }

    /// Lipschitz-corrected grid minimum over `θ × t`. Returns `(grid_min, gap)`.
    fn grid_min(pairs: &[Correspondence], w: &[f64], arc: &Arc2D, tball: &TranslationBall) -> (f64, f64) {
        let (lo, hi) = arc.bounds().unwrap();
        let n_th = 200;
        let n_t = 14;
        let h = 2.0 * tball.radius / n_t as f64;
        let mut best = f64::INFINITY;
        for i in 0..=n_th {
            let th = lo + (hi - lo) * i as f64 / n_th as f64;
            let r = rot_z(th);
            for a in 0..=n_t {
                for b in 0..=n_t {
                    for c in 0..=n_t {
                        let off = Vec3::new(a as f64, b as f64, c as f64) * h - Vec3::repeat(tball.radius);
                        let t = tball.project(&(tball.center + off));
                        best = best.min(objective(pairs, w, &Transform::new(r, t)));
                    }
                }
            }
        }
        // |∂f/∂t| ≤ 2 Σ w ‖r‖, |∂f/∂θ| ≤ 2 Σ w ‖r‖ ‖p_xy‖, bounded over the region
        let mut lt = 0.0;
        let mut lth = 0.0;
        for (c, &wi) in pairs.iter().zip(w) {
            let rmax = c.p.norm() + (c.q - tball.center).norm() + tball.radius;
            lt += 2.0 * wi * rmax;
            lth += 2.0 * wi * rmax * c.p.xy().norm();
        }
        let gap = lt * h * 3f64.sqrt() / 2.0 + lth * (hi - lo) / n_th as f64 / 2.0;
        (best, gap)
    }

    #[test]
    fn active_translation_matches_grid() {
        let mut rng = rng_from_seed(53);
        let mut active = 0;
        for _ in 0..12 {
            let (pairs, w) = random_pairs(&mut rng, 6);
            let arc = Arc2D::new(uniform_angle(&mut rng), rng.gen_range(0.05..0.6));
            let tball = TranslationBall::new(uniform_in_ball(&mut rng, 4.0), rng.gen_range(0.1..1.0));
            let sol = ball_constrained_pose_solve(&pairs, &w, &arc, &tball).unwrap();
            assert!(arc.contains(sol.angle, 1e-12));
            assert!(tball.contains(&sol.transform.translation, 1e-9));
            active += sol.translation_active as usize;
            let direct = objective(&pairs, &w, &sol.transform);
            assert!((direct - sol.objective).abs() < 1e-8 * (1.0 + direct));
            assert!(sol.lower_bound <= sol.objective);
            assert!(sol.objective - sol.lower_bound < 1e-6 * (1.0 + sol.objective), "{} {}", sol.objective, sol.lower_bound);
            let (g, gap) = grid_min(&pairs, &w, &arc, &tball);
            assert!(sol.lower_bound <= g + 1e-9, "lower bound {} above grid {}", sol.lower_bound, g);
            assert!(sol.objective <= g + 1e-9 || sol.objective - g <= gap);
        }
        assert!(active >= 6);
    }

    #[test]
    fn lower_bound_never_exceeds_sampled_minimum() {
        let mut rng = rng_from_seed(54);
        for _ in 0..100 {
            let (pairs, w) = random_pairs(&mut rng, 5);
            let arc = Arc2D::new(uniform_angle(&mut rng), rng.gen_range(0.0..PI));
            let tball = TranslationBall::new(uniform_in_ball(&mut rng, 6.0), rng.gen_range(0.0..2.0));
            let sol = ball_constrained_pose_solve(&pairs, &w, &arc, &tball).unwrap();
            let (lo, hi) = arc.bounds().unwrap();
            for _ in 0..2000 {
                let th = rng.gen_range(lo..=hi);
                let t = tball.center + uniform_in_ball(&mut rng, tball.radius);
                let v = objective(&pairs, &w, &Transform::new(rot_z(th), t));
                assert!(sol.lower_bound <= v + 1e-9);
                assert!(sol.objective <= v + 1e-6 * (1.0 + v));
            }
        }
    }
}
