//! Weighted least-squares solvers used to minimize the relaxation over a
//! search node.

pub mod pose;
pub mod sphere;
pub mod wahba;

pub use pose::{ball_constrained_pose_solve, PoseSolution};
pub use sphere::{sphere_objective, sphere_qcqp_solve};
pub use wahba::{
    angle_constrained_wahba, ball_constrained_rotation_solve, fixed_axis_rotation_solve, weighted_wahba_svd,
    RotationRegion, RotationSolution, WahbaAccumulators,
};

use crate::geometry::{rot_z, Arc2D, ProblemInstance, RotationBall3, Transform, TranslationBall};
use crate::relaxation::WlsRelaxation;

/// Region searched by one node, in the solver's working frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Region {
    /// Rotation only, no translation.
    Rotation(RotationBall3),
    /// Angle about +z and a translation ball.
    Pose { arc: Arc2D, tball: TranslationBall },
}

impl Region {
    /// A representative transform inside the region.
    pub fn center(&self) -> Transform {
        match self {
            Region::Rotation(ball) => Transform::from_rotation(ball.center),
            Region::Pose { arc, tball } => Transform::new(rot_z(arc.center()), tball.center),
        }
    }
}

/// Minimizer of a relaxation over a region.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WlsSolution {
    pub transform: Transform,
    /// Relaxation value at `transform`.
    pub value: f64,
    /// Certified lower bound on the relaxation minimum, hence on the
    /// truncated cost over the region.
    pub lower_bound: f64,
}

/// Minimizes `relaxation` over `region` for `instance`.
pub fn minimize_wls(instance: &ProblemInstance, relaxation: &WlsRelaxation, region: &Region) -> WlsSolution {
    let weights = relaxation.effective_weights();
    if relaxation.all_outliers() || weights.iter().all(|&w| w == 0.0) {
        let transform = region.center();
        let value = relaxation.value(instance.correspondences.iter().map(|c| transform.residual_sq(c)));
        return WlsSolution {
            transform,
            value,
            lower_bound: relaxation.constant,
        };
    }
    let pairs = &instance.correspondences;
    match region {
        Region::Rotation(ball) => {
            let acc = WahbaAccumulators::new(pairs, &weights);
            let (rotation, _) = wahba::so3_ball_solve(&acc, ball);
            let value = relaxation.constant + acc.objective(&rotation);
            WlsSolution {
                transform: Transform::from_rotation(rotation),
                value,
                lower_bound: value,
            }
        }
        Region::Pose { arc, tball } => {
            let problem = pose::PoseProblem::new(pairs, &weights, tball).expect("positive weight");
            let sol = problem.solve(arc).expect("non-empty arc");
            WlsSolution {
                transform: sol.transform,
                value: relaxation.constant + sol.objective,
                lower_bound: relaxation.constant + sol.lower_bound,
            }
        }
    }
}
