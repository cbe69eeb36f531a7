//! Shared geometric and angular primitives.
//!
//! All angles are radians, all distances meters. Yaw angles are stored
//! normalized to `[-pi, pi)`; arithmetic that crosses the wrap point goes
//! through [`wrap_angle`] / [`yaw_diff`] so cost functions never see a 2*pi
//! jump.

use nalgebra::{Vector3, Vector4};
use std::f64::consts::{PI, TAU};

/// Wraps an angle to the canonical range `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(TAU) - PI
}

/// Smallest absolute angular separation between `a` and `b`, in `[0, pi]`.
pub fn yaw_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

/// Unwraps `target` to the representative nearest `reference`, so that a
/// spline interpolating between the two never sweeps more than pi.
pub fn unwrap_towards(reference: f64, target: f64) -> f64 {
    reference + wrap_angle(target - reference)
}

/// A sensor pose: position plus yaw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Viewpoint {
    pub pos: Vector3<f64>,
    yaw: f64,
}

impl Viewpoint {
    pub fn new(pos: Vector3<f64>, yaw: f64) -> Self {
        Self {
            pos,
            yaw: wrap_angle(yaw),
        }
    }

    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    /// Position and yaw packed as `(x, y, z, yaw)`.
    pub fn as_vec4(&self) -> Vector4<f64> {
        Vector4::new(self.pos.x, self.pos.y, self.pos.z, self.yaw)
    }
}

/// Full kinematic state: pose plus 4-D (linear + yaw) velocity and
/// acceleration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinState {
    pub vp: Viewpoint,
    /// `(vx, vy, vz, yaw_rate)`
    pub vel: Vector4<f64>,
    /// `(ax, ay, az, yaw_accel)`
    pub acc: Vector4<f64>,
}

impl KinState {
    pub fn at_rest(vp: Viewpoint) -> Self {
        Self {
            vp,
            vel: Vector4::zeros(),
            acc: Vector4::zeros(),
        }
    }

    pub fn linear_vel(&self) -> Vector3<f64> {
        self.vel.xyz()
    }

    pub fn is_finite(&self) -> bool {
        self.vp.pos.iter().all(|v| v.is_finite())
            && self.vp.yaw.is_finite()
            && self.vel.iter().all(|v| v.is_finite())
            && self.acc.iter().all(|v| v.is_finite())
    }
}

/// Axis-aligned box given by its min/max corners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        debug_assert!(min.x <= max.x && min.y <= max.y && min.z <= max.z);
        Self { min, max }
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Closest point of the box to `p` (identity when `p` is inside).
    pub fn clamp_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(
            p.x.clamp(self.min.x, self.max.x),
            p.y.clamp(self.min.y, self.max.y),
            p.z.clamp(self.min.z, self.max.z),
        )
    }

    /// Euclidean distance from `p` to the box; zero inside.
    pub fn distance_outside(&self, p: &Vector3<f64>) -> f64 {
        (p - self.clamp_point(p)).norm()
    }

    pub fn intersects(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] <= other.max[i] && other.min[i] <= self.max[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn yaw_diff_identity_and_antipodal() {
        assert_eq!(yaw_diff(0.0, 0.0), 0.0);
        assert_abs_diff_eq!(yaw_diff(PI / 2.0, -PI / 2.0), PI, epsilon = 1e-12);
    }

    /// Brute-force oracle: minimize |a - b + 2*pi*k| over k in {-1, 0, 1}.
    fn yaw_diff_oracle(a: f64, b: f64) -> f64 {
        [-1.0f64, 0.0, 1.0]
            .iter()
            .map(|k| (a - b + TAU * k).abs())
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn yaw_diff_wraps_like_oracle() {
        let expected = yaw_diff_oracle(3.0, -3.0);
        assert_abs_diff_eq!(expected, TAU - 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(yaw_diff(3.0, -3.0), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(yaw_diff(3.0, -3.0), 0.28319, epsilon = 1e-5);
    }

    #[test]
    fn yaw_diff_properties() {
        let angles = [-3.1, -2.0, -0.5, 0.0, 0.7, 1.57, 2.9, 3.1];
        for &a in &angles {
            for &b in &angles {
                assert_abs_diff_eq!(yaw_diff(a, b), yaw_diff(b, a), epsilon = 1e-12);
                assert_abs_diff_eq!(yaw_diff(a + TAU, b), yaw_diff(a, b), epsilon = 1e-12);
                assert_abs_diff_eq!(yaw_diff(a, b), yaw_diff_oracle(a, b), epsilon = 1e-12);
            }
            assert_eq!(yaw_diff(a, a), 0.0);
            assert!(yaw_diff(a, a + 1.0) <= PI);
        }
    }

    #[test]
    fn viewpoint_normalizes_yaw() {
        let vp = Viewpoint::new(Vector3::zeros(), 3.0 * PI);
        assert!((-PI..PI).contains(&vp.yaw()));
        assert_abs_diff_eq!(vp.yaw(), -PI, epsilon = 1e-12);
    }

    #[test]
    fn unwrap_towards_stays_within_pi() {
        for &r in &[-3.0, 0.0, 2.5] {
            for &t in &[-3.0, -0.1, 1.0, 3.0] {
                let u = unwrap_towards(r, t);
                assert!((u - r).abs() <= PI + 1e-12);
                assert_abs_diff_eq!(wrap_angle(u), wrap_angle(t), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn aabb_distance_and_clamp() {
        let b = Aabb::new(Vector3::zeros(), Vector3::new(1.0, 1.0, 1.0));
        assert_eq!(b.distance_outside(&Vector3::new(0.5, 0.5, 0.5)), 0.0);
        assert_abs_diff_eq!(
            b.distance_outside(&Vector3::new(2.0, 0.5, 0.5)),
            1.0,
            epsilon = 1e-12
        );
        assert!(b.intersects(&Aabb::new(
            Vector3::new(0.9, 0.9, 0.9),
            Vector3::new(2.0, 2.0, 2.0)
        )));
    }
}
