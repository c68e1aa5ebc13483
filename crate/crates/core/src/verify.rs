//! Randomized property suites that check each component against brute-force
//! sampling, independently of the search loop.

use std::f64::consts::PI;

use rand::Rng;
use serde::Serialize;

use crate::bnb::{solve, SolverConfig};
use crate::contractor::{contract_so2, per_correspondence_arc};
use crate::geometry::{
    evaluate_tls, rot_z, Arc2D, Correspondence, ProblemInstance, ProblemKind, RotationBall3,
    Transform, TranslationBall, Vec3,
};
use crate::instances::{generate_adversarial, GenSpec};
use crate::relaxation::{build_wls_relaxation, pose_arc_residual_interval, rotation_residual_interval, ResidualInterval};
use crate::sampling::{rng_from_seed, rotation_in_ball, uniform_angle, uniform_in_ball, uniform_in_cube, uniform_rotation, SeededRng};
use crate::wls::{ball_constrained_pose_solve, ball_constrained_rotation_solve, minimize_wls, Region, RotationRegion};

/// Outcome of one property suite. It passes when `failures == 0`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PropertyReport {
    pub property: String,
    pub trials: usize,
    pub failures: usize,
    /// Largest amount by which any check was violated (0 when none was).
    pub worst_violation: f64,
}

impl PropertyReport {
    fn new(property: &str) -> Self {
        PropertyReport {
            property: property.to_string(),
            trials: 0,
            failures: 0,
            worst_violation: 0.0,
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    /// Records a check `lhs ≤ rhs + tol`.
    fn check_le(&mut self, lhs: f64, rhs: f64, tol: f64) -> bool {
        let excess = lhs - rhs;
        if excess > tol || excess.is_nan() {
            self.failures += 1;
            self.worst_violation = self.worst_violation.max(if excess.is_nan() { f64::INFINITY } else { excess });
            false
        } else {
            true
        }
    }

    fn check(&mut self, ok: bool) {
        if !ok {
            self.failures += 1;
            self.worst_violation = self.worst_violation.max(1.0);
        }
    }
}

fn random_instance(rng: &mut SeededRng, n: usize, outlier_share: f64) -> ProblemInstance {
    let eps = rng.gen_range(0.2..1.0);
    let gt = Transform::new(rot_z(uniform_angle(rng)), uniform_in_ball(rng, 3.0));
    let pairs = (0..n)
        .map(|_| {
            let p = uniform_in_cube(rng, 3.0);
            let q = if rng.gen::<f64>() < outlier_share {
                uniform_in_cube(rng, 6.0)
            } else {
                gt.rotation * p + gt.translation + uniform_in_ball(rng, 0.5 * eps)
            };
            Correspondence::new(p, q)
        })
        .collect();
    ProblemInstance::new(pairs, eps, Some(Vec3::z())).expect("valid").with_ground_truth(gt)
}

/// A pose node around a perturbed ground truth, and a sampler of its members.
fn random_pose_node(rng: &mut SeededRng, inst: &ProblemInstance) -> (Arc2D, TranslationBall) {
    let gt = inst.ground_truth.expect("planted");
    let theta = gt.rotation.angle() * gt.rotation.axis().map_or(1.0, |a| a.z.signum());
    let arc = Arc2D::new(theta + rng.gen_range(-0.3..0.3), rng.gen_range(0.0..1.2));
    let tball = TranslationBall::new(gt.translation + uniform_in_ball(rng, 1.0), rng.gen_range(0.0..1.5));
    (arc, tball)
}

fn sample_pose(rng: &mut SeededRng, arc: &Arc2D, tball: &TranslationBall) -> Transform {
    let th = arc.center() + arc.radius() * rng.gen_range(-1.0..=1.0);
    Transform::new(rot_z(th), tball.center + uniform_in_ball(rng, tball.radius))
}

/// The relaxation, and its certified minimum, never exceed the truncated
/// cost anywhere in the node.
pub fn check_relaxation_underestimates(seed: u64, trials: usize) -> PropertyReport {
    let mut report = PropertyReport::new("relaxation_underestimates");
    let mut rng = rng_from_seed(seed);
    for trial in 0..trials {
        // fixtures: all inliers at an exact node, all outliers, then mixed
        let share = match trial {
            0 => 0.0,
            1 => 1.0,
            _ => rng.gen_range(0.0..0.8),
        };
        let n = rng.gen_range(1..12);
        let inst = random_instance(&mut rng, n, share);
        let rotation_mode = trial % 3 == 2;
        let (intervals, region): (Vec<ResidualInterval>, Region) = if rotation_mode {
            let ball = RotationBall3::new(uniform_rotation(&mut rng), rng.gen_range(0.0..PI));
            let iv = inst
                .correspondences
                .iter()
                .map(|c| rotation_residual_interval(&c.p, &c.q, &ball))
                .collect();
            (iv, Region::Rotation(ball))
        } else {
            let (arc, tball) = if trial == 0 {
                let gt = inst.ground_truth.unwrap();
                let th = gt.rotation.angle() * gt.rotation.axis().map_or(1.0, |a| a.z.signum());
                (Arc2D::point(th), TranslationBall::point(gt.translation))
            } else {
                random_pose_node(&mut rng, &inst)
            };
            let iv = inst
                .correspondences
                .iter()
                .map(|c| pose_arc_residual_interval(&c.p, &c.q, &arc, &tball))
                .collect();
            (iv, Region::Pose { arc, tball })
        };
        let relax = build_wls_relaxation(&intervals, inst.eps);
        let sol = minimize_wls(&inst, &relax, &region);
        report.trials += 1;
        report.check_le(sol.lower_bound, sol.value, 1e-9 * (1.0 + sol.value));
        for _ in 0..50 {
            let x = match region {
                Region::Rotation(ball) => Transform::from_rotation(rotation_in_ball(&mut rng, &ball.center, ball.radius)),
                Region::Pose { arc, tball } => sample_pose(&mut rng, &arc, &tball),
            };
            let tls = evaluate_tls(&inst, &x);
            let relaxed = relax.value(inst.correspondences.iter().map(|c| x.residual_sq(c)));
            report.check_le(relaxed, tls, 1e-9);
            report.check_le(sol.lower_bound, tls, 1e-9);
        }
    }
    report
}

/// Per-correspondence arcs hold every angle at which that residual can be
/// untruncated, and contraction keeps every transform strictly better than
/// the incumbent.
pub fn check_contractor_completeness(seed: u64, trials: usize) -> PropertyReport {
    let mut report = PropertyReport::new("contractor_completeness");
    let mut rng = rng_from_seed(seed);
    for trial in 0..trials {
        let n = rng.gen_range(2..15);
        let share = rng.gen_range(0.0..0.6);
        let inst = random_instance(&mut rng, n, share);
        let (arc, tball) = match trial {
            // full-arc fixture
            0 => (Arc2D::Full, TranslationBall::new(inst.ground_truth.unwrap().translation, 0.5)),
            _ => random_pose_node(&mut rng, &inst),
        };
        let arcs: Vec<Arc2D> = inst
            .correspondences
            .iter()
            .map(|c| per_correspondence_arc(&c.p, &c.q, &tball, inst.eps))
            .collect();
        // incumbent from a transform near the ground truth; trial 1 uses the
        // tightest possible incumbent
        let gt = inst.ground_truth.unwrap();
        let ub = if trial == 1 {
            0.0
        } else {
            let near = Transform::new(gt.rotation * rot_z(rng.gen_range(-0.2..0.2)), gt.translation + uniform_in_ball(&mut rng, 0.3));
            evaluate_tls(&inst, &near)
        };
        let contracted = contract_so2(&inst, &tball, &arc, ub);
        report.trials += 1;
        for _ in 0..200 {
            let x = sample_pose(&mut rng, &arc, &tball);
            let th = crate::io::signed_angle_about(&x.rotation, &Vec3::z());
            for (c, a) in inst.correspondences.iter().zip(&arcs) {
                if x.residual_sq(c) <= inst.eps_sq() {
                    report.check(a.contains(th, 1e-9));
                }
            }
            // the contractor needs at least one inlier, so only strictly
            // improving transforms are guaranteed to survive
            if evaluate_tls(&inst, &x) < ub {
                report.check(contracted.contains(th, 1e-9));
            }
        }
    }
    report
}

/// Lipschitz constant of `Σ wᵢ ‖R(θ) pᵢ − qᵢ + t‖²` in `(θ, t)` over a node.
fn weighted_gap(pairs: &[Correspondence], w: &[f64], tball: &TranslationBall, theta_step: f64, t_step: f64) -> f64 {
    pairs
        .iter()
        .zip(w)
        .map(|(c, wi)| {
            let r_max = c.p.norm() + (c.q - tball.center).norm() + tball.radius;
            2.0 * wi * r_max * (c.p.xy().norm() * theta_step * 0.5 + 3f64.sqrt() * 0.5 * t_step)
        })
        .sum()
}

/// Ball-constrained least-squares solutions are no worse than any grid or
/// sampled point of the region, and no better than the grid minimum minus
/// its Lipschitz gap.
pub fn check_solver_vs_grid(seed: u64, trials: usize) -> PropertyReport {
    let mut report = PropertyReport::new("solver_vs_grid");
    let mut rng = rng_from_seed(seed);
    for trial in 0..trials {
        let n = rng.gen_range(1..7);
        let inst = random_instance(&mut rng, n, 0.3);
        let pairs = &inst.correspondences;
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        if w.iter().all(|&x| x == 0.0) {
            continue;
        }
        report.trials += 1;
        let objective = |x: &Transform| -> f64 { pairs.iter().zip(&w).map(|(c, wi)| wi * x.residual_sq(c)).sum() };
        match trial % 3 {
            0 => {
                // SO(3) ball: compare against samples in the ball
                let ball = RotationBall3::new(uniform_rotation(&mut rng), rng.gen_range(0.0..PI));
                let sol = ball_constrained_rotation_solve(pairs, &w, &RotationRegion::So3(ball)).unwrap();
                report.check(ball.contains(&sol.rotation, 1e-9));
                for _ in 0..300 {
                    let r = rotation_in_ball(&mut rng, &ball.center, ball.radius);
                    report.check_le(sol.objective, objective(&Transform::from_rotation(r)), 1e-9);
                }
            }
            _ => {
                // pose: inactive (huge ball), boundary, or an arc far from
                // where the translation could follow (empty feasible overlap)
                let (arc, tball) = match trial % 9 {
                    1 => (Arc2D::Full, TranslationBall::new(Vec3::zeros(), 100.0)),
                    4 => {
                        let (a, _) = random_pose_node(&mut rng, &inst);
                        (a, TranslationBall::new(uniform_in_ball(&mut rng, 8.0) + Vec3::repeat(10.0), 0.2))
                    }
                    _ => random_pose_node(&mut rng, &inst),
                };
                let sol = ball_constrained_pose_solve(pairs, &w, &arc, &tball).unwrap();
                let th = crate::io::signed_angle_about(&sol.transform.rotation, &Vec3::z());
                report.check(arc.contains(th, 1e-9) && tball.contains(&sol.transform.translation, 1e-9));
                report.check_le(sol.lower_bound, sol.objective, 1e-12 * (1.0 + sol.objective));

                let (lo, hi) = arc.bounds().unwrap();
                let (lo, hi) = if arc.is_full() { (-PI, PI) } else { (lo, hi) };
                let n_th = 48usize;
                let n_t = 6usize;
                let t_step = 2.0 * tball.radius / n_t as f64;
                let mut grid_min = f64::INFINITY;
                for i in 0..=n_th {
                    let th = lo + (hi - lo) * i as f64 / n_th as f64;
                    for a in 0..=n_t {
                        for b in 0..=n_t {
                            for c in 0..=n_t {
                                let off = Vec3::new(a as f64, b as f64, c as f64) * t_step - Vec3::repeat(tball.radius);
                                let t = tball.project(&(tball.center + off));
                                grid_min = grid_min.min(objective(&Transform::new(rot_z(th), t)));
                            }
                        }
                    }
                }
                let gap = weighted_gap(pairs, &w, &tball, (hi - lo) / n_th as f64, t_step);
                report.check_le(sol.objective, grid_min, 1e-9 * (1.0 + grid_min));
                report.check_le(grid_min - gap, sol.lower_bound, 1e-9 * (1.0 + grid_min));
            }
        }
    }
    report
}

/// Converged searches on adversarial instances never report a cost above
/// either planted transform.
pub fn check_bnb_certificates(seed: u64, trials: usize, fractions: &[f64], n: usize) -> PropertyReport {
    let mut report = PropertyReport::new("bnb_certificates");
    for (k, &a) in fractions.iter().enumerate() {
        for t in 0..trials {
            let mut spec = GenSpec::new(n, 0.5, ProblemKind::PoseSo2, seed.wrapping_add((k * trials + t) as u64));
            spec.adversarial_fraction = a;
            let adv = generate_adversarial(&spec).expect("valid spec");
            let res = solve(&adv.instance, &SolverConfig::new(ProblemKind::PoseSo2)).expect("solvable");
            report.trials += 1;
            report.check_le(res.lb, res.ub, 1e-9);
            if res.converged {
                for cost in adv.planted_costs {
                    report.check_le(res.ub, cost, 1e-9);
                }
            }
        }
    }
    report
}
