//! Contraction of the planar rotation range of a search node.
//!
//! For a translation ball, correspondence `i` can only be an inlier for
//! rotation angles inside an arc `aᵢ`. Any transform whose truncated cost does
//! not exceed the incumbent has at least `k` inliers, so its angle lies where
//! at least `k` arcs overlap. The contracted range is the smallest arc holding
//! that overlap region.

use std::cmp::Ordering;
use std::f64::consts::{PI, TAU};

use crate::geometry::{Arc2D, ProblemInstance, TranslationBall, Vec3};

/// Below this, the largest uncovered gap is treated as no gap at all.
pub const MIN_GAP: f64 = 1e-9;

/// Angles `θ` with `‖R_z(θ) p − b‖ ≤ slack`.
///
/// The z-components are untouched by the rotation, so the z-gap is removed
/// from the slack first and the remaining condition is planar.
pub fn rotation_arc_within(p: &Vec3, b: &Vec3, slack: f64) -> Arc2D {
    let dz = p.z - b.z;
    let rho_sq = slack * slack - dz * dz;
    if rho_sq < 0.0 {
        return Arc2D::Empty;
    }
    let np_sq = p.x * p.x + p.y * p.y;
    let nb_sq = b.x * b.x + b.y * b.y;
    if np_sq == 0.0 || nb_sq == 0.0 {
        // the residual does not depend on the angle
        return if np_sq + nb_sq <= rho_sq {
            Arc2D::Full
        } else {
            Arc2D::Empty
        };
    }
    let denom = 2.0 * (np_sq * nb_sq).sqrt();
    let h = (np_sq + nb_sq - rho_sq) / denom;
    if h > 1.0 {
        return Arc2D::Empty;
    }
    if h <= -1.0 {
        return Arc2D::Full;
    }
    let center = (p.x * b.y - p.y * b.x).atan2(p.x * b.x + p.y * b.y);
    Arc2D::new(center, h.acos())
}

/// Arc of angles for which correspondence `(p, q)` can be untruncated with some
/// translation in `tball`.
pub fn per_correspondence_arc(p: &Vec3, q: &Vec3, tball: &TranslationBall, eps: f64) -> Arc2D {
    rotation_arc_within(p, &(q - tball.center), eps + tball.radius)
}

/// `max(0, ⌈n − ub/ε²⌉)`: inliers any transform with cost ≤ `ub` must have.
///
/// A relative slack of 1e-9 absorbs rounding in `ub/ε²`, which would otherwise
/// round an exact integer up by one.
pub fn inlier_lb_from_ub(ub_tls: f64, eps: f64, n: usize) -> usize {
    let raw = n as f64 - ub_tls / (eps * eps);
    let k = (raw - 1e-9).ceil();
    if k <= 0.0 {
        0
    } else {
        k as usize
    }
}

/// A collection of (possibly wrapping) arcs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ArcSet {
    pub arcs: Vec<Arc2D>,
}

impl ArcSet {
    pub fn new(arcs: Vec<Arc2D>) -> Self {
        ArcSet { arcs }
    }

    /// Number of arcs containing `theta`.
    pub fn coverage(&self, theta: f64, tol: f64) -> usize {
        self.arcs.iter().filter(|a| a.contains(theta, tol)).count()
    }
}

#[derive(Clone, Copy, Debug)]
struct Event {
    at: f64,
    /// +1 opens, −1 closes
    delta: i32,
}

fn sort_events(events: &mut [Event]) {
    // openings first on ties so touching closed arcs overlap
    events.sort_unstable_by(|a, b| match a.at.total_cmp(&b.at) {
        Ordering::Equal => b.delta.cmp(&a.delta),
        o => o,
    });
}

/// Smallest arc containing every angle covered by at least `k` arcs.
pub fn sweep_smallest_arc(arcs: &[Arc2D], k: usize) -> Arc2D {
    let k = k.max(1);
    let mut base = 0usize;
    let mut events = Vec::with_capacity(2 * arcs.len() + 2);
    for arc in arcs {
        match *arc {
            Arc2D::Empty => {}
            Arc2D::Full => base += 1,
            Arc2D::Arc { center, radius } => {
                let s = (center - radius).rem_euclid(TAU);
                let e = s + 2.0 * radius;
                if e <= TAU {
                    events.push(Event { at: s, delta: 1 });
                    events.push(Event { at: e, delta: -1 });
                } else {
                    events.push(Event { at: s, delta: 1 });
                    events.push(Event { at: TAU, delta: -1 });
                    events.push(Event { at: 0.0, delta: 1 });
                    events.push(Event { at: e - TAU, delta: -1 });
                }
            }
        }
    }
    if base >= k {
        return Arc2D::Full;
    }
    if base + events.len() / 2 < k {
        return Arc2D::Empty;
    }
    sort_events(&mut events);

    // maximal closed runs with coverage ≥ k, in increasing order on [0, 2π]
    let mut runs: Vec<(f64, f64)> = Vec::new();
    let mut count = base as i64;
    let mut open_at = 0.0;
    for ev in &events {
        if ev.delta > 0 {
            count += 1;
            if count == k as i64 {
                open_at = ev.at;
            }
        } else {
            if count == k as i64 {
                match runs.last_mut() {
                    // a run closing exactly where the next reopens is one run
                    Some(last) if last.1 >= open_at => last.1 = last.1.max(ev.at),
                    _ => runs.push((open_at, ev.at)),
                }
            }
            count -= 1;
        }
    }
    if runs.is_empty() {
        return Arc2D::Empty;
    }

    // largest uncovered gap, circularly
    let m = runs.len();
    let mut best_gap = runs[0].0 + TAU - runs[m - 1].1;
    let mut best_idx = m - 1;
    for i in 0..m - 1 {
        let gap = runs[i + 1].0 - runs[i].1;
        if gap > best_gap {
            best_gap = gap;
            best_idx = i;
        }
    }
    if best_gap < MIN_GAP {
        return Arc2D::Full;
    }
    if best_idx == m - 1 {
        Arc2D::from_bounds(runs[0].0, runs[m - 1].1)
    } else {
        Arc2D::from_bounds(runs[best_idx + 1].0, runs[best_idx].1 + TAU)
    }
}

/// Hull of the angles inside `current` (not the full circle) covered by at least `k` arcs.
fn sweep_within(arcs: &[Arc2D], k: usize, current: &Arc2D) -> Arc2D {
    let (lo, hi) = match current.bounds() {
        Some(b) => b,
        None => return Arc2D::Empty,
    };
    let width = hi - lo;
    let mut base = 0usize;
    let mut events = Vec::with_capacity(2 * arcs.len());
    for arc in arcs {
        match *arc {
            Arc2D::Empty => {}
            Arc2D::Full => base += 1,
            Arc2D::Arc { center, radius } => {
                let m = (center - lo).rem_euclid(TAU);
                for shift in [-TAU, 0.0, TAU] {
                    let s = (m + shift - radius).max(0.0);
                    let e = (m + shift + radius).min(width);
                    if s <= e {
                        events.push(Event { at: s, delta: 1 });
                        events.push(Event { at: e, delta: -1 });
                    }
                }
            }
        }
    }
    if base >= k {
        return *current;
    }
    sort_events(&mut events);
    let mut count = base as i64;
    let mut first: Option<f64> = None;
    let mut last = 0.0;
    for ev in &events {
        if ev.delta > 0 {
            count += 1;
            if count >= k as i64 && first.is_none() {
                first = Some(ev.at);
            }
        } else {
            if count >= k as i64 {
                last = ev.at;
            }
            count -= 1;
        }
    }
    match first {
        Some(f) => Arc2D::from_bounds(lo + f, lo + last.max(f)),
        None => Arc2D::Empty,
    }
}

/// Shrinks `current_arc` for a node with translation ball `tball` on an
/// instance whose fixed axis is +z. `incumbent_ub` must upper-bound the
/// global minimum. An empty result means the node holds no transform with
/// cost at or below the incumbent.
pub fn contract_so2(
    instance: &ProblemInstance,
    tball: &TranslationBall,
    current_arc: &Arc2D,
    incumbent_ub: f64,
) -> Arc2D {
    let arcs: Vec<Arc2D> = instance
        .correspondences
        .iter()
        .map(|c| per_correspondence_arc(&c.p, &c.q, tball, instance.eps))
        .collect();
    let k = inlier_lb_from_ub(incumbent_ub, instance.eps, instance.len()).max(1);
    contract_with_arcs(&arcs, k, current_arc)
}

pub(crate) fn contract_with_arcs(arcs: &[Arc2D], k: usize, current_arc: &Arc2D) -> Arc2D {
    match current_arc {
        Arc2D::Empty => Arc2D::Empty,
        Arc2D::Full => sweep_smallest_arc(arcs, k),
        Arc2D::Arc { radius, .. } if *radius >= PI => sweep_smallest_arc(arcs, k),
        _ => sweep_within(arcs, k, current_arc),
    }
}
