//! Rigid poses in the plane.
//!
//! Positions are in millimetres, angles in radians. Every constructor wraps
//! the heading into `[-π, π)` so that two poses describing the same frame
//! compare equal.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::ops::Mul;

use serde::{Deserialize, Serialize};

/// Wraps an angle into `[-π, π)`.
///
/// The input must be finite; a NaN or infinite angle is a caller bug.
pub fn wrap_angle(t: f64) -> f64 {
    debug_assert!(t.is_finite(), "wrap_angle on non-finite input {t}");
    if (-PI..PI).contains(&t) {
        return t;
    }
    let mut r = (t + PI).rem_euclid(TAU) - PI;
    // rem_euclid may round up to exactly TAU
    if r >= PI {
        r -= TAU;
    }
    if r < -PI {
        r = -PI;
    }
    r
}

/// Signed shortest angular difference `a - b`, in `[-π, π)`.
#[inline]
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b)
}

/// An element of SE(2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Default for Pose2 {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Pose2 {
    pub const IDENTITY: Pose2 = Pose2 { x: 0.0, y: 0.0, theta: 0.0 };

    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta: wrap_angle(theta) }
    }

    pub fn from_position(p: [f64; 2], theta: f64) -> Self {
        Self::new(p[0], p[1], theta)
    }

    #[inline]
    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    /// `self ∘ other`: express `other` (given in this frame) in the parent frame.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(self.x + c * other.x - s * other.y, self.y + s * other.x + c * other.y, self.theta + other.theta)
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(-(c * self.x + s * self.y), s * self.x - c * self.y, -self.theta)
    }

    /// `self⁻¹ ∘ other`, i.e. `other` expressed in this frame.
    pub fn relative(&self, other: &Pose2) -> Pose2 {
        self.inverse().compose(other)
    }

    /// Maps a point given in this frame into the parent frame.
    pub fn transform_point(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }

    /// Rotates a free vector by this pose's heading.
    pub fn rotate(&self, v: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [c * v[0] - s * v[1], s * v[0] + c * v[1]]
    }

    pub fn distance(&self, other: &Pose2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Homogeneous 3×3 matrix of this pose.
    pub fn to_matrix(&self) -> nalgebra::Matrix3<f64> {
        let (s, c) = self.theta.sin_cos();
        nalgebra::Matrix3::new(c, -s, self.x, s, c, self.y, 0.0, 0.0, 1.0)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }
}

impl Mul for Pose2 {
    type Output = Pose2;

    fn mul(self, rhs: Pose2) -> Pose2 {
        self.compose(&rhs)
    }
}

impl fmt::Display for Pose2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.3}, {:.3}, {:.4})", self.x, self.y, self.theta)
    }
}

#[inline]
pub(crate) fn sub2(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub(crate) fn norm2(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;
    use proptest::prelude::*;

    fn from_matrix(m: &Matrix3<f64>) -> Pose2 {
        Pose2::new(m[(0, 2)], m[(1, 2)], m[(1, 0)].atan2(m[(0, 0)]))
    }

    fn close(a: &Pose2, b: &Pose2, tol: f64) -> bool {
        (a.x - b.x).abs() < tol && (a.y - b.y).abs() < tol && angle_diff(a.theta, b.theta).abs() < tol
    }

    #[test]
    fn compose_identity() {
        let p = Pose2::new(3.0, 4.0, 0.5);
        assert_eq!(Pose2::IDENTITY.compose(&p), p);
    }

    #[test]
    fn compose_quarter_turn_matches_matrix_product() {
        let a = Pose2::new(1.0, 0.0, PI / 2.0);
        let b = Pose2::new(1.0, 0.0, 0.0);
        let oracle = from_matrix(&(a.to_matrix() * b.to_matrix()));
        let got = a.compose(&b);
        assert!(close(&got, &oracle, 1e-12));
        assert!(close(&got, &Pose2::new(1.0, 1.0, PI / 2.0), 1e-12));
    }

    #[test]
    fn inverse_quarter_turn_matches_matrix_inverse() {
        let a = Pose2::new(1.0, 0.0, PI / 2.0);
        let oracle = from_matrix(&a.to_matrix().try_inverse().unwrap());
        assert!(close(&a.inverse(), &oracle, 1e-12));
        assert!(close(&a.inverse(), &Pose2::new(0.0, 1.0, -PI / 2.0), 1e-12));
        assert_eq!(Pose2::IDENTITY.inverse(), Pose2::IDENTITY);
    }

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_angle(0.0), 0.0);
        assert!((wrap_angle(3.0 * PI) + PI).abs() < 1e-12);
        let w = wrap_angle(-PI - 1e-9);
        assert!((w - (PI - 1e-9)).abs() < 1e-12);
        assert_eq!(wrap_angle(PI), -PI);
        assert!(wrap_angle(-PI) == -PI);
    }

    fn pose() -> impl Strategy<Value = Pose2> {
        (-500.0..500.0f64, -500.0..500.0f64, -10.0..10.0f64).prop_map(|(x, y, t)| Pose2::new(x, y, t))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn group_laws(a in pose(), b in pose(), c in pose()) {
            let lhs = a.compose(&b).compose(&c);
            let rhs = a.compose(&b.compose(&c));
            prop_assert!(close(&lhs, &rhs, 1e-9));
            prop_assert!(close(&a.compose(&a.inverse()), &Pose2::IDENTITY, 1e-9));
            prop_assert!(close(&a.inverse().compose(&a), &Pose2::IDENTITY, 1e-9));
            prop_assert!(close(&a.compose(&Pose2::IDENTITY), &a, 1e-12));
            prop_assert!(close(&a.inverse().inverse(), &a, 1e-9));
        }

        #[test]
        fn wrap_is_idempotent_and_congruent(t in -1e4..1e4f64) {
            let w = wrap_angle(t);
            prop_assert!((-PI..PI).contains(&w));
            prop_assert_eq!(wrap_angle(w), w);
            let k = ((t - w) / TAU).round();
            prop_assert!((t - w - k * TAU).abs() < 1e-9);
        }
    }
}
