//! Built-in example systems with known exponents.

use nalgebra::DMatrix;

use crate::cocycles::Cocycle;
use crate::spaces::Space;
use crate::systems::{FiberMap, RandomMapSystem};

/// `√2 − 1`.
pub const SILVER_ROTATION: f64 = std::f64::consts::SQRT_2 - 1.0;
/// `(√5 − 1)/2`.
pub const GOLDEN_ROTATION: f64 = 0.618_033_988_749_894_9;

/// Planar rotation by `angle` radians.
pub fn rotation(angle: f64) -> DMatrix<f64> {
    let (s, c) = angle.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

/// `{x/2, x/2 + 1/2}` on `[0,1]` with equal weights.
pub fn ifs_halves() -> RandomMapSystem {
    let space = Space::Interval { a: 0.0, b: 1.0 };
    RandomMapSystem::new(vec![
        (FiberMap::affine(space, 0.5, 0.0).expect("valid"), 0.5),
        (FiberMap::affine(space, 0.5, 0.5).expect("valid"), 0.5),
    ])
    .expect("valid")
}

/// Two irrational circle rotations with equal weights.
pub fn random_rotations() -> RandomMapSystem {
    RandomMapSystem::new(vec![
        (FiberMap::circle_wave(SILVER_ROTATION, 0.0, 1).expect("valid"), 0.5),
        (FiberMap::circle_wave(GOLDEN_ROTATION, 0.0, 1).expect("valid"), 0.5),
    ])
    .expect("valid")
}

/// `f_c(x) = x − (c/4π)·sin(4πx)` for `c ∈ {0.5, 0.8}`, equal weights.
/// Both maps fix 0 and 1/2 (attracting) and 1/4, 3/4 (repelling).
pub fn two_attractor() -> RandomMapSystem {
    two_attractor_with(0.5, 0.8)
}

pub fn two_attractor_with(c1: f64, c2: f64) -> RandomMapSystem {
    RandomMapSystem::new(vec![
        (FiberMap::circle_wave(0.0, c1, 2).expect("valid"), 0.5),
        (FiberMap::circle_wave(0.0, c2, 2).expect("valid"), 0.5),
    ])
    .expect("valid")
}

/// A circle diffeomorphism with a single attracting fixed point at 0 mixed
/// with the golden rotation. No finite orbit is shared by both maps, so the
/// stationary measure is unique, and the contraction near 0 makes the
/// system mostly contracting.
pub fn minimal_circle() -> RandomMapSystem {
    RandomMapSystem::new(vec![
        (FiberMap::circle_wave(0.0, 0.8, 1).expect("valid"), 0.5),
        (FiberMap::circle_wave(GOLDEN_ROTATION, 0.0, 1).expect("valid"), 0.5),
    ])
    .expect("valid")
}

/// Bernoulli(1/2) over `{diag(2, 1/2), rotation by 1 rad}`.
pub fn hyperbolic_rotation() -> Cocycle {
    let hyper = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]);
    Cocycle::new(vec![hyper, rotation(1.0)], vec![0.5, 0.5]).expect("valid")
}

pub fn hyperbolic_rotation_projective() -> RandomMapSystem {
    hyperbolic_rotation().projective_system().expect("valid")
}

/// The constant cocycle `[[2,1],[1,1]]`.
pub fn golden_cocycle() -> Cocycle {
    Cocycle::constant(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0])).expect("valid")
}

/// Constant rotation cocycle.
pub fn rotation_cocycle(angle: f64) -> Cocycle {
    Cocycle::constant(rotation(angle)).expect("valid")
}

/// `log((3+√5)/2)`, the top exponent of [`golden_cocycle`].
pub fn golden_exponent() -> f64 {
    ((3.0 + 5f64.sqrt()) / 2.0).ln()
}

/// Look up a built-in random map system by name.
pub fn system_by_name(name: &str) -> Option<RandomMapSystem> {
    Some(match name {
        "ifs_halves" => ifs_halves(),
        "random_rotations" => random_rotations(),
        "two_attractor" => two_attractor(),
        "minimal_circle" => minimal_circle(),
        "hyperbolic_rotation" => hyperbolic_rotation_projective(),
        "golden" => golden_cocycle().projective_system().ok()?,
        _ => return None,
    })
}

/// Look up a built-in cocycle by name.
pub fn cocycle_by_name(name: &str) -> Option<Cocycle> {
    Some(match name {
        "hyperbolic_rotation" => hyperbolic_rotation(),
        "golden" => golden_cocycle(),
        "rotation" => rotation_cocycle(1.0),
        _ => return None,
    })
}

pub const SYSTEM_NAMES: &[&str] = &[
    "ifs_halves",
    "random_rotations",
    "two_attractor",
    "minimal_circle",
    "hyperbolic_rotation",
    "golden",
];

pub const COCYCLE_NAMES: &[&str] = &["hyperbolic_rotation", "golden", "rotation"];
