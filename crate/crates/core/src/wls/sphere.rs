//! Global maximization of a quadratic over the unit sphere,
//! `max nᵀA n + 2 gᵀn  s.t. ‖n‖ = 1`.
//!
//! With `A = QΛQᵀ` and `γ = Qᵀg`, the maximizer is `n = (λI − A)⁻¹ g` where
//! `λ ≥ λ_max(A)` is the rightmost root of `Σⱼ γⱼ² / (λ − λⱼ)² = 1`. When `g`
//! has no component along the top eigenspace that root may not exist (the
//! "hard case") and the solution is completed with a top eigenvector.

use nalgebra::{Matrix3, SymmetricEigen};

use crate::error::{invalid, Result};
use crate::geometry::Vec3;

const SYMMETRY_TOL: f64 = 1e-9;

/// `nᵀA n + 2 gᵀn`.
pub fn sphere_objective(a: &Matrix3<f64>, g: &Vec3, n: &Vec3) -> f64 {
    n.dot(&(a * n)) + 2.0 * g.dot(n)
}

/// Unit vector maximizing `nᵀA n + 2 gᵀn`.
pub fn sphere_qcqp_solve(a: &Matrix3<f64>, g: &Vec3) -> Result<Vec3> {
    let asym = (a - a.transpose()).abs().max();
    if !(asym <= SYMMETRY_TOL * (1.0 + a.abs().max())) {
        return Err(invalid(format!("matrix is not symmetric (max asymmetry {asym:e})")));
    }
    Ok(solve_symmetric(&(0.5 * (a + a.transpose())), g))
}

pub(crate) fn solve_symmetric(a: &Matrix3<f64>, g: &Vec3) -> Vec3 {
    let eig = SymmetricEigen::new(*a);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let lam: [f64; 3] = order.map(|i| eig.eigenvalues[i]);
    let cols: [Vec3; 3] = order.map(|i| eig.eigenvectors.column(i).into_owned());
    let gamma: [f64; 3] = cols.map(|c| c.dot(g));

    let scale = 1.0 + lam[0].abs().max(lam[2].abs()) + g.norm();
    let gnorm = g.norm();
    if gnorm <= 1e-15 * scale {
        return cols[0];
    }

    let mut candidates: Vec<Vec3> = Vec::with_capacity(4);

    // Secular root on (λ₁, λ₁ + ‖g‖]: the function decreases from +∞ (or from
    // the hard-case value) to at most 1 at the right end.
    let norm_at = |l: f64| -> f64 {
        let mut s = 0.0;
        for j in 0..3 {
            let d = l - lam[j];
            if gamma[j] != 0.0 {
                s += (gamma[j] / d).powi(2);
            }
        }
        s.sqrt()
    };
    let mut lo = lam[0];
    let mut hi = lam[0] + gnorm;
    if norm_at(hi) > 1.0 {
        // rounding at the bracket end; widen until it holds
        let mut step = gnorm.max(1e-300);
        while norm_at(hi) > 1.0 {
            step *= 2.0;
            hi = lam[0] + step;
        }
    }
    let mut l = hi;
    for _ in 0..200 {
        let nrm = norm_at(l);
        if !nrm.is_finite() {
            lo = l;
            l = 0.5 * (lo + hi);
            continue;
        }
        // f(λ) = 1/‖n(λ)‖ − 1 is increasing and close to linear near the root
        let f = 1.0 / nrm - 1.0;
        if f > 0.0 {
            hi = l;
        } else {
            lo = l;
        }
        let mut dsum = 0.0;
        for j in 0..3 {
            let d = l - lam[j];
            if gamma[j] != 0.0 {
                dsum += gamma[j] * gamma[j] / (d * d * d);
            }
        }
        let fprime = dsum / (nrm * nrm * nrm);
        let mut next = l - f / fprime;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - l).abs() <= 1e-16 * scale || hi - lo <= 1e-16 * scale {
            l = next;
            break;
        }
        l = next;
    }
    if l > lam[0] {
        let mut n = Vec3::zeros();
        for j in 0..3 {
            n += cols[j] * (gamma[j] / (l - lam[j]));
        }
        let nn = n.norm();
        if nn > 0.0 && nn.is_finite() {
            candidates.push(n / nn);
        }
    }

    // Hard case: drop the components along the (numerically) top eigenspace and
    // fill the remaining norm with a top eigenvector.
    let gap_tol = 1e-10 * scale;
    let mut n_rest = Vec3::zeros();
    let mut top = Vec::new();
    for j in 0..3 {
        let d = lam[0] - lam[j];
        if d <= gap_tol {
            top.push(j);
        } else {
            n_rest += cols[j] * (gamma[j] / d);
        }
    }
    let rest_sq = n_rest.norm_squared();
    if rest_sq <= 1.0 {
        let tau = (1.0 - rest_sq).sqrt();
        for &j in &top {
            candidates.push((n_rest + cols[j] * tau).normalize());
            candidates.push((n_rest - cols[j] * tau).normalize());
        }
    }
    candidates.push(cols[0]);
    candidates.push(-cols[0]);
    candidates.push(g / gnorm);

    let mut best = candidates
        .into_iter()
        .filter(|c| c.iter().all(|v| v.is_finite()))
        .max_by(|x, y| sphere_objective(a, g, x).total_cmp(&sphere_objective(a, g, y)))
        .unwrap_or_else(|| cols[0]);

    // A few projected Newton steps on the stationarity condition clean up
    // rounding from the nearly-hard case.
    for _ in 0..3 {
        let grad = a * best + g;
        let lambda = best.dot(&grad);
        let tangent = grad - best * lambda;
        if tangent.norm() <= 1e-15 * scale {
            break;
        }
        let m = Matrix3::identity() * lambda - a;
        let trial = match m.try_inverse() {
            Some(inv) => {
                let v = inv * g;
                let vn = v.norm();
                if vn > 0.0 {
                    v / vn
                } else {
                    break;
                }
            }
            None => break,
        };
        if sphere_objective(a, g, &trial) > sphere_objective(a, g, &best) {
            best = trial;
        } else {
            break;
        }
    }
    best
}
