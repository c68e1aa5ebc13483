//! Best-first branch and bound over rotations (SO(3) mode) or over an angle
//! about a known axis plus a translation (pose-so2 mode).
//!
//! Every node is contracted (pose mode) and bounded when it is created, and
//! enters the queue keyed by its lower bound. The incumbent is seeded by GNC
//! at the root and improved by evaluating the truncated cost at each node's
//! relaxation minimizer.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;
use std::time::{Duration, Instant};

use crate::contractor::{contract_with_arcs, inlier_lb_from_ub, per_correspondence_arc};
use crate::error::{invalid, Result};
use crate::geometry::{
    axis_align_frame, evaluate_tls, exp_rotvec, rotate_instance, Arc2D, ProblemInstance, ProblemKind, Rotation3,
    RotationBall3, Transform, TranslationBall, Vec3,
};
use crate::relaxation::{build_wls_relaxation, ArcBounds, ResidualInterval, RotationBallBounds};
use crate::wls::pose::PoseProblem;
use crate::wls::{minimize_wls, weighted_wahba_svd, Region};

/// Reported suboptimality of a converged run.
pub const CONVERGED_ETA: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub problem: ProblemKind,
    pub eta_tol: f64,
    pub time_limit: Duration,
    pub max_nodes: usize,
    /// Regions smaller than this (radians or length) are not split further.
    pub min_region: f64,
    pub gnc: bool,
    /// Kept for reproducible bookkeeping; the search itself is deterministic.
    pub seed: u64,
}

impl SolverConfig {
    pub fn new(problem: ProblemKind) -> Self {
        SolverConfig {
            problem,
            eta_tol: 1e-3,
            time_limit: Duration::from_secs(10),
            max_nodes: usize::MAX,
            min_region: 1e-7,
            gnc: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta_tol > 0.0) {
            return Err(invalid("eta_tol must be positive"));
        }
        if self.time_limit.is_zero() {
            return Err(invalid("time_limit must be positive"));
        }
        if !(self.min_region >= 0.0) {
            return Err(invalid("min_region must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverResult {
    pub best: Transform,
    pub ub: f64,
    pub lb: f64,
    pub eta: f64,
    pub converged: bool,
    pub nodes_expanded: usize,
    /// Seconds.
    pub wall_time: f64,
}

/// `(ub − lb)/(1 + ub + lb)`, or the fixed floor once converged.
pub fn suboptimality(ub: f64, lb: f64, converged: bool) -> f64 {
    if converged {
        CONVERGED_ETA
    } else {
        (ub - lb) / (1.0 + ub + lb)
    }
}

/// Axis-aligned box of translations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TranslationBox {
    pub lo: Vec3,
    pub hi: Vec3,
}

impl TranslationBox {
    pub fn new(lo: Vec3, hi: Vec3) -> Self {
        TranslationBox { lo, hi }
    }

    pub fn center(&self) -> Vec3 {
        (self.lo + self.hi) * 0.5
    }

    pub fn half_diagonal(&self) -> f64 {
        (self.hi - self.lo).norm() * 0.5
    }

    /// Smallest enclosing ball.
    pub fn ball(&self) -> TranslationBall {
        TranslationBall::new(self.center(), self.half_diagonal())
    }

    pub fn contains(&self, t: &Vec3) -> bool {
        (0..3).all(|i| self.lo[i] <= t[i] && t[i] <= self.hi[i])
    }

    /// Halves along the longest edge.
    pub fn split(&self) -> [TranslationBox; 2] {
        let e = self.hi - self.lo;
        let axis = e.imax();
        let mid = 0.5 * (self.lo[axis] + self.hi[axis]);
        let mut left = *self;
        let mut right = *self;
        left.hi[axis] = mid;
        right.lo[axis] = mid;
        [left, right]
    }
}

/// Cube of rotation vectors, `center ± half` per axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotvecCube {
    pub center: Vec3,
    pub half: f64,
}

impl RotvecCube {
    /// Geodesic ball containing the image of the cube under `exp`.
    pub fn ball(&self) -> RotationBall3 {
        RotationBall3::new(exp_rotvec(&self.center), (3f64.sqrt() * self.half).min(PI))
    }

    pub fn contains(&self, v: &Vec3) -> bool {
        (v - self.center).amax() <= self.half
    }

    pub fn octants(&self) -> [RotvecCube; 8] {
        let h = 0.5 * self.half;
        std::array::from_fn(|k| {
            let s = |bit: usize| if k & bit == 0 { -h } else { h };
            RotvecCube {
                center: self.center + Vec3::new(s(1), s(2), s(4)),
                half: h,
            }
        })
    }
}

/// Search region of a node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NodeRegion {
    Rotation(RotvecCube),
    Pose { tcube: TranslationBox, arc: Arc2D },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Node {
    pub region: NodeRegion,
    pub lb: f64,
    pub depth: usize,
}

impl Node {
    pub fn tcube(&self) -> Option<TranslationBox> {
        match self.region {
            NodeRegion::Pose { tcube, .. } => Some(tcube),
            NodeRegion::Rotation(_) => None,
        }
    }

    pub fn tball(&self) -> Option<TranslationBall> {
        self.tcube().map(|c| c.ball())
    }

    fn wls_region(&self) -> Region {
        match self.region {
            NodeRegion::Rotation(cube) => Region::Rotation(cube.ball()),
            NodeRegion::Pose { tcube, arc } => Region::Pose {
                arc,
                tball: tcube.ball(),
            },
        }
    }
}

/// Box guaranteed to hold an optimal translation: an optimal transform keeps
/// at least one residual below ε (or every translation is optimal), so
/// `t ∈ q_j − R p_j + εB` for some `j`.
pub fn root_translation_box(instance: &ProblemInstance) -> TranslationBox {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for c in &instance.correspondences {
        let r = c.p.norm();
        lo = lo.inf(&(c.q - Vec3::repeat(r)));
        hi = hi.sup(&(c.q + Vec3::repeat(r)));
    }
    TranslationBox::new(lo - Vec3::repeat(instance.eps), hi + Vec3::repeat(instance.eps))
}

/// The 8 rotation-vector cubes of half-side π/2 tiling `[−π, π]³`.
pub fn root_rotation_cubes() -> [RotvecCube; 8] {
    RotvecCube {
        center: Vec3::zeros(),
        half: PI,
    }
    .octants()
}

/// Initial rotation regions for a problem kind.
pub fn root_rotation_region(problem: ProblemKind) -> Vec<NodeRegion> {
    match problem {
        ProblemKind::Rotation => root_rotation_cubes().into_iter().map(NodeRegion::Rotation).collect(),
        // translation box filled in by the caller
        ProblemKind::PoseSo2 => vec![NodeRegion::Pose {
            tcube: TranslationBox::new(Vec3::zeros(), Vec3::zeros()),
            arc: Arc2D::Full,
        }],
    }
}

/// Children partitioning `node`; empty when the node is at the size floor.
/// `rho_max` converts arc radians into a comparable length.
pub fn branch(node: &Node, rho_max: f64, min_region: f64) -> Vec<Node> {
    let child = |region| Node {
        region,
        lb: node.lb,
        depth: node.depth + 1,
    };
    match node.region {
        NodeRegion::Rotation(cube) => {
            if cube.half < min_region {
                return Vec::new();
            }
            cube.octants().into_iter().map(|c| child(NodeRegion::Rotation(c))).collect()
        }
        NodeRegion::Pose { tcube, arc } => {
            let t_size = tcube.half_diagonal();
            let t_open = (tcube.hi - tcube.lo).max() * 0.5 >= min_region;
            let a_open = arc.radius() >= min_region;
            let split_translation = match (t_open, a_open) {
                (false, false) => return Vec::new(),
                (true, false) => true,
                (false, true) => false,
                (true, true) => t_size >= arc.radius() * rho_max,
            };
            if split_translation {
                tcube
                    .split()
                    .into_iter()
                    .map(|c| child(NodeRegion::Pose { tcube: c, arc }))
                    .collect()
            } else {
                arc.bisect()
                    .into_iter()
                    .map(|a| child(NodeRegion::Pose { tcube, arc: a }))
                    .collect()
            }
        }
    }
}

/// Residual intervals of every correspondence over the node.
fn node_intervals(instance: &ProblemInstance, node: &Node) -> Vec<ResidualInterval> {
    match node.region {
        NodeRegion::Rotation(cube) => {
            let bounds = RotationBallBounds::new(&cube.ball());
            instance.correspondences.iter().map(|c| bounds.interval(&c.p, &c.q)).collect()
        }
        NodeRegion::Pose { tcube, arc } => {
            let bounds = ArcBounds::new(&arc);
            let tball = tcube.ball();
            instance
                .correspondences
                .iter()
                .map(|c| bounds.pose_interval(&c.p, &c.q, &tball))
                .collect()
        }
    }
}

/// Relaxation lower bound of `node` and the in-node relaxation minimizer.
pub fn lower_bound(node: &Node, instance: &ProblemInstance) -> (f64, Transform) {
    let relaxation = build_wls_relaxation(&node_intervals(instance, node), instance.eps);
    let sol = minimize_wls(instance, &relaxation, &node.wls_region());
    (sol.lower_bound.max(0.0), sol.transform)
}

/// Truncated cost at `witness`.
pub fn upper_bound(instance: &ProblemInstance, witness: &Transform) -> (f64, Transform) {
    (evaluate_tls(instance, witness), *witness)
}

/// Least-squares fit with the given weights; rotation-only or about +z.
fn weighted_fit(instance: &ProblemInstance, problem: ProblemKind, weights: &[f64]) -> Option<Transform> {
    match problem {
        ProblemKind::Rotation => weighted_wahba_svd(&instance.correspondences, weights)
            .ok()
            .map(Transform::from_rotation),
        ProblemKind::PoseSo2 => {
            let unbounded = TranslationBall::new(Vec3::zeros(), f64::INFINITY);
            let problem = PoseProblem::new(&instance.correspondences, weights, &unbounded)?;
            problem.solve(&Arc2D::Full).map(|s| s.transform)
        }
    }
}

/// Refits on the current inlier set until the truncated cost stops dropping.
fn polish(instance: &ProblemInstance, problem: ProblemKind, start: Transform) -> (f64, Transform) {
    let eps_sq = instance.eps_sq();
    let mut best = start;
    let mut best_cost = evaluate_tls(instance, &start);
    for _ in 0..20 {
        let weights: Vec<f64> = instance
            .correspondences
            .iter()
            .map(|c| if best.residual_sq(c) <= eps_sq { 1.0 } else { 0.0 })
            .collect();
        let Some(next) = weighted_fit(instance, problem, &weights) else { break };
        let cost = evaluate_tls(instance, &next);
        if cost < best_cost {
            best_cost = cost;
            best = next;
        } else {
            break;
        }
    }
    (best_cost, best)
}

/// Graduated non-convexity for the truncated cost, started from `init`.
///
/// Expects an axis-aligned instance in pose-so2 mode. Returns the better of
/// `init` and the GNC result.
pub fn gnc_tls(instance: &ProblemInstance, problem: ProblemKind, init: &Transform) -> Transform {
    let eps_sq = instance.eps_sq();
    let n = instance.len();
    let residuals = |x: &Transform| -> Vec<f64> { instance.correspondences.iter().map(|c| x.residual_sq(c)).collect() };
    let mut current = *init;
    let mut r = residuals(&current);
    let r_max = r.iter().cloned().fold(0.0, f64::max);
    let mut mu = (eps_sq / (2.0 * r_max - eps_sq)).max(1e-6);
    if !mu.is_finite() || mu <= 0.0 {
        mu = 1e-6;
    }
    let mut weights = vec![1.0; n];
    for _ in 0..100 {
        let upper = (mu + 1.0) / mu * eps_sq;
        let lower = mu / (mu + 1.0) * eps_sq;
        let mut binary = true;
        for (w, &ri) in weights.iter_mut().zip(&r) {
            *w = if ri >= upper {
                0.0
            } else if ri <= lower {
                1.0
            } else {
                binary = false;
                instance.eps * (mu * (mu + 1.0)).sqrt() / ri.sqrt() - mu
            };
        }
        if weights.iter().all(|&w| w == 0.0) {
            break;
        }
        let Some(next) = weighted_fit(instance, problem, &weights) else { break };
        current = next;
        r = residuals(&current);
        if binary {
            break;
        }
        mu *= 1.4;
    }
    if evaluate_tls(instance, &current) <= evaluate_tls(instance, init) {
        current
    } else {
        *init
    }
}

struct Queued {
    node: Node,
    seq: u64,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    // BinaryHeap is a max-heap: smallest lb first, then oldest
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .node
            .lb
            .total_cmp(&self.node.lb)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Search<'a> {
    instance: &'a ProblemInstance,
    config: &'a SolverConfig,
    ub: f64,
    best: Transform,
    heap: BinaryHeap<Queued>,
    seq: u64,
    /// Minimum lower bound over nodes that reached the size floor.
    finalized_lb: f64,
}

impl Search<'_> {
    fn offer(&mut self, candidate: Transform) {
        let cost = evaluate_tls(self.instance, &candidate);
        if cost < self.ub {
            let (cost, polished) = polish(self.instance, self.config.problem, candidate);
            self.ub = cost;
            self.best = polished;
        }
    }

    /// Contracts and bounds a fresh node, then queues it unless pruned.
    fn admit(&mut self, mut node: Node) {
        if let NodeRegion::Pose { tcube, arc } = node.region {
            let tball = tcube.ball();
            let arcs: Vec<Arc2D> = self
                .instance
                .correspondences
                .iter()
                .map(|c| per_correspondence_arc(&c.p, &c.q, &tball, self.instance.eps))
                .collect();
            let k = inlier_lb_from_ub(self.ub, self.instance.eps, self.instance.len()).max(1);
            let contracted = contract_with_arcs(&arcs, k, &arc);
            if contracted.is_empty() {
                return;
            }
            node.region = NodeRegion::Pose { tcube, arc: contracted };
        }
        let (lb, witness) = lower_bound(&node, self.instance);
        node.lb = node.lb.max(lb);
        self.offer(witness);
        if node.lb >= self.ub {
            return;
        }
        self.heap.push(Queued { node, seq: self.seq });
        self.seq += 1;
    }

    fn global_lb(&self) -> f64 {
        let queued = self.heap.peek().map_or(f64::INFINITY, |q| q.node.lb);
        queued.min(self.finalized_lb).min(self.ub)
    }
}

/// Certifiably solves `instance` to η-suboptimality.
pub fn solve(instance: &ProblemInstance, config: &SolverConfig) -> Result<SolverResult> {
    instance.validate()?;
    config.validate()?;
    let start = Instant::now();
    let frame = match config.problem {
        ProblemKind::Rotation => Rotation3::identity(),
        ProblemKind::PoseSo2 => {
            let axis = instance
                .axis
                .ok_or_else(|| invalid("pose-so2 needs a rotation axis"))?;
            axis_align_frame(&axis)?
        }
    };
    let aligned = match config.problem {
        ProblemKind::Rotation => instance.clone(),
        ProblemKind::PoseSo2 => rotate_instance(instance, &frame),
    };
    let rho_max = aligned
        .correspondences
        .iter()
        .map(|c| c.p.xy().norm())
        .fold(0.0, f64::max);

    let mut search = Search {
        instance: &aligned,
        config,
        ub: f64::INFINITY,
        best: Transform::identity(),
        heap: BinaryHeap::new(),
        seq: 0,
        finalized_lb: f64::INFINITY,
    };

    let tbox = root_translation_box(&aligned);
    let init = Transform::new(Rotation3::identity(), match config.problem {
        ProblemKind::Rotation => Vec3::zeros(),
        ProblemKind::PoseSo2 => tbox.center(),
    });
    search.offer(init);
    let weights = vec![1.0; aligned.len()];
    if let Some(fit) = weighted_fit(&aligned, config.problem, &weights) {
        search.offer(fit);
        if config.gnc {
            let g = gnc_tls(&aligned, config.problem, &fit);
            search.offer(g);
        }
    }

    for region in root_rotation_region(config.problem) {
        let region = match region {
            NodeRegion::Pose { arc, .. } => NodeRegion::Pose { tcube: tbox, arc },
            r => r,
        };
        search.admit(Node { region, lb: 0.0, depth: 0 });
    }

    let mut nodes_expanded = 0usize;
    let mut converged;
    loop {
        let lb = search.global_lb();
        converged = suboptimality(search.ub, lb, false) <= config.eta_tol;
        if converged || start.elapsed() >= config.time_limit || nodes_expanded >= config.max_nodes {
            break;
        }
        let Some(Queued { node, .. }) = search.heap.pop() else { break };
        if node.lb >= search.ub {
            continue;
        }
        nodes_expanded += 1;
        let children = branch(&node, rho_max, config.min_region);
        if children.is_empty() {
            let center = node.wls_region().center();
            search.offer(center);
            if node.lb < search.ub {
                search.finalized_lb = search.finalized_lb.min(node.lb);
            }
            continue;
        }
        for child in children {
            search.admit(child);
        }
    }

    let lb = search.global_lb();
    let ub = search.ub;
    let best = Transform::new(
        frame.inverse() * search.best.rotation * frame,
        frame.inverse() * search.best.translation,
    );
    Ok(SolverResult {
        best,
        ub,
        lb,
        eta: suboptimality(ub, lb, converged),
        converged,
        nodes_expanded,
        wall_time: start.elapsed().as_secs_f64(),
    })
}
