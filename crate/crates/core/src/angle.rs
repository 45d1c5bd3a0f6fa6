//! Angle helpers shared by every module.
//!
//! Convention: `x` is the column index growing rightward, `row` grows
//! downward, and an angle `θ` names the direction `(dx, drow) = (cos θ, −sin θ)`,
//! i.e. angles turn counterclockwise as seen on screen. The left side of a
//! direction is reached by turning it a quarter turn counterclockwise on
//! screen, so the left unit vector of `θ` is `(−sin θ, −cos θ)`.

use std::f64::consts::{PI, TAU};

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(TAU);
    if t > PI {
        t -= TAU;
    }
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if t <= -PI {
        t += TAU;
    }
    t
}

/// Absolute angular distance after folding the difference into `(−π, π]`.
/// Always in `[0, π]`.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}

/// Unit step `(dx, drow)` along direction `theta`.
pub fn direction(theta: f64) -> (f64, f64) {
    (theta.cos(), -theta.sin())
}

/// Unit step `(dx, drow)` towards the left of direction `theta`.
pub fn left_of(theta: f64) -> (f64, f64) {
    (-theta.sin(), -theta.cos())
}

/// `π` rounded to `f32`. Stored orientations accept this as the upper end.
pub const PI_F32: f32 = std::f32::consts::PI;

/// Rounds a wrapped angle to `f32` without leaving `(−π, π]`: values that
/// would round onto `−π` are stored as `π` instead.
pub fn store_angle(theta: f64) -> f32 {
    let v = wrap_angle(theta) as f32;
    if (v as f64) <= -PI {
        PI_F32
    } else {
        v
    }
}

/// True when a stored `f32` angle lies in `(−π, π]`.
pub fn is_stored_angle(v: f32) -> bool {
    (v as f64) > -PI && v <= PI_F32
}

/// Maps an undirected line angle into `(−π/2, π/2]`.
pub fn wrap_half_turn(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(PI);
    if t > PI / 2.0 {
        t -= PI;
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_lands_in_half_open_interval() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-0.5) + 0.5).abs() < 1e-15);
        for k in -50..50 {
            let t = wrap_angle(k as f64 * 0.37);
            assert!(t > -PI && t <= PI);
        }
    }

    #[test]
    fn left_is_screen_up_for_rightward_direction() {
        let (dx, drow) = left_of(0.0);
        assert!(dx.abs() < 1e-15);
        assert_eq!(drow, -1.0);
        let (dx, drow) = direction(PI / 2.0);
        assert!(dx.abs() < 1e-15 && (drow + 1.0).abs() < 1e-15);
    }

    #[test]
    fn stored_angles_stay_in_range() {
        for k in 0..10_000 {
            let t = -PI + k as f64 * 1e-12;
            assert!(is_stored_angle(store_angle(t)));
        }
        assert_eq!(store_angle(PI), PI_F32);
        assert!(!is_stored_angle(-PI_F32));
    }

    #[test]
    fn half_turn_range() {
        assert_eq!(wrap_half_turn(PI / 2.0), PI / 2.0);
        assert!((wrap_half_turn(-PI / 2.0) - PI / 2.0).abs() < 1e-15);
        assert!((wrap_half_turn(3.0 * PI / 4.0) + PI / 4.0).abs() < 1e-12);
    }
}
