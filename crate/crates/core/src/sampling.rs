//! Deterministic random draws used by the instance generator and the
//! verification suites. Every function consumes uniforms from the caller's
//! generator in a fixed order so fixtures are reproducible per seed.

use std::f64::consts::{PI, TAU};

use nalgebra::{Quaternion, UnitQuaternion};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::{Rotation3, Vec3};

/// The generator used everywhere a seed is accepted.
pub type SeededRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform point in the cube `[-half, half]³`. Draws x, y, z in order.
pub fn uniform_in_cube<R: Rng + ?Sized>(rng: &mut R, half: f64) -> Vec3 {
    Vec3::new(
        rng.gen_range(-1.0..=1.0) * half,
        rng.gen_range(-1.0..=1.0) * half,
        rng.gen_range(-1.0..=1.0) * half,
    )
}

/// Uniform point in the closed ball of the given radius (rejection from the cube).
pub fn uniform_in_ball<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> Vec3 {
    if radius <= 0.0 {
        return Vec3::zeros();
    }
    loop {
        let v = uniform_in_cube(rng, 1.0);
        if v.norm_squared() <= 1.0 {
            return v * radius;
        }
    }
}

/// Uniform point in the axis-aligned box `[lo, hi]`.
pub fn uniform_in_box<R: Rng + ?Sized>(rng: &mut R, lo: &Vec3, hi: &Vec3) -> Vec3 {
    Vec3::from_fn(|i, _| {
        if hi[i] > lo[i] {
            rng.gen_range(lo[i]..=hi[i])
        } else {
            lo[i]
        }
    })
}

/// Uniform unit vector.
pub fn uniform_on_sphere<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v = uniform_in_cube(rng, 1.0);
        let n = v.norm();
        if n > 1e-6 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Haar-uniform rotation (Shoemake's subgroup algorithm, three uniforms).
pub fn uniform_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rotation3 {
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    let u3: f64 = rng.gen();
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let q = Quaternion::new(
        b * (TAU * u3).cos(),
        a * (TAU * u2).sin(),
        a * (TAU * u2).cos(),
        b * (TAU * u3).sin(),
    );
    UnitQuaternion::from_quaternion(q).to_rotation_matrix()
}

/// Uniform angle in `[-π, π)`.
pub fn uniform_angle<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.gen_range(-PI..PI)
}

/// Rotation `center · exp(v)` with `v` uniform in the ball of radius `radius`,
/// hence within geodesic distance `radius` of `center`.
pub fn rotation_in_ball<R: Rng + ?Sized>(rng: &mut R, center: &Rotation3, radius: f64) -> Rotation3 {
    let v = uniform_in_ball(rng, radius.min(PI));
    center * Rotation3::new(v)
}
