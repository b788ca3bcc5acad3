//! Angle helpers shared by the geometry, relation and density code.

use std::f64::consts::{PI, TAU};

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let a = theta.rem_euclid(TAU);
    if a > PI {
        a - TAU
    } else {
        a
    }
}

/// Reduces an angle modulo π into `[0, π)`, identifying opposite headings.
pub fn fold_pi(theta: f64) -> f64 {
    let a = theta.rem_euclid(PI);
    // rem_euclid can round up to exactly π for tiny negative inputs
    if a >= PI {
        0.0
    } else {
        a
    }
}

/// Rotates a ground-plane vector `(x, z)` by yaw `phi`.
///
/// Yaw follows the KITTI `rotation_y` sense: a positive yaw turns `+x` towards `-z`
/// (equivalently `+z` towards `+x`).
pub fn yaw_rotate(x: f64, z: f64, phi: f64) -> (f64, f64) {
    let (s, c) = phi.sin_cos();
    (c * x + s * z, -s * x + c * z)
}
