//! Rotation algebra shared by the filter, the simulator and the observability
//! analysis.
//!
//! Quaternions use the JPL convention: vector part first, scalar last, and
//! `quat_to_rot(q_VI)` maps vectors expressed in `V` into `I`. Composition is
//! `R(a ⊗ b) = R(a) R(b)`. A small rotation vector `δθ` corresponds to
//! `δq ≈ [½δθ, 1]` and `R(δq) ≈ I − [δθ]×`.

use nalgebra::{Matrix3, Matrix4, Matrix4x3, Vector3, Vector4};
use std::f64::consts::PI;

use crate::error::So3Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance on `|‖q‖ − 1|` accepted by [`quat_to_rot`].
pub const UNIT_TOLERANCE: f64 = 1e-6;

const SMALL_ANGLE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quaternion {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
}

impl Default for Quaternion {
    fn default() -> Self {
        Self::identity()
    }
}

impl Quaternion {
    pub const fn new(x: f64, y: f64, z: f64, w: f64) -> Self {
        Self { x, y, z, w }
    }

    pub const fn identity() -> Self {
        Self::new(0.0, 0.0, 0.0, 1.0)
    }

    pub fn from_vec4(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn as_vec4(&self) -> Vector4<f64> {
        Vector4::new(self.x, self.y, self.z, self.w)
    }

    pub fn vector(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn norm(&self) -> f64 {
        self.as_vec4().norm()
    }

    /// Unit-norm copy with non-negative scalar part.
    pub fn normalize(&self) -> Self {
        let n = self.norm();
        let s = if self.w < 0.0 { -1.0 / n } else { 1.0 / n };
        Self::new(self.x * s, self.y * s, self.z * s, self.w * s)
    }

    pub fn neg(&self) -> Self {
        Self::new(-self.x, -self.y, -self.z, -self.w)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.w.is_finite()
    }

    /// Rotation matrix without the unit-norm check. The formula is applied to
    /// the raw components, which the observability analysis relies on when it
    /// differentiates off the unit sphere.
    pub fn rotation(&self) -> Mat3 {
        let qv = self.vector();
        let w = self.w;
        (2.0 * w * w - 1.0) * Mat3::identity() - 2.0 * w * skew(&qv) + 2.0 * qv * qv.transpose()
    }

    /// JPL quaternion whose rotation matrix is `exp(−[φ]×)`.
    pub fn from_rotation_vector(phi: &Vec3) -> Self {
        let angle = phi.norm();
        if angle < SMALL_ANGLE {
            return Self::new(0.5 * phi.x, 0.5 * phi.y, 0.5 * phi.z, 1.0).normalize();
        }
        let k = phi / angle;
        let s = (0.5 * angle).sin();
        Self::new(k.x * s, k.y * s, k.z * s, (0.5 * angle).cos())
    }

    /// Inverse of [`Quaternion::from_rotation_vector`], angle in `[0, π]`.
    pub fn to_rotation_vector(&self) -> Vec3 {
        let q = self.normalize();
        let v = q.vector();
        let s = v.norm();
        if s < SMALL_ANGLE {
            return 2.0 * v;
        }
        let angle = 2.0 * s.atan2(q.w);
        v * (angle / s)
    }

    /// Quaternion whose rotation matrix equals `r` (must be a rotation).
    pub fn from_rotation(r: &Mat3) -> Self {
        // JPL R(q) is the transpose of the Hamilton matrix built from the
        // same components, so run the usual Shepperd extraction on Rᵀ.
        let m = r.transpose();
        let trace = m.trace();
        let q = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            Self::new(
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
                0.25 * s,
            )
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            Self::new(
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(2, 1)] - m[(1, 2)]) / s,
            )
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            Self::new(
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
            )
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            Self::new(
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        };
        q.normalize()
    }
}

/// `[v]×`, so that `skew(v) * w == v × w`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn quat_to_rot(q: &Quaternion) -> Result<Mat3, So3Error> {
    let n = q.norm();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(So3Error::NonUnitQuaternion { norm: n });
    }
    Ok(q.rotation())
}

/// JPL product `a ⊗ b`.
pub fn quat_multiply(a: &Quaternion, b: &Quaternion) -> Quaternion {
    let av = a.vector();
    let bv = b.vector();
    let v = a.w * bv + b.w * av - av.cross(&bv);
    Quaternion::new(v.x, v.y, v.z, a.w * b.w - av.dot(&bv))
}

/// `Ξ(q)` with `q̇ = ½ Ξ(q) ω` for body angular rate `ω`.
pub fn xi_matrix(q: &Quaternion) -> Matrix4x3<f64> {
    let top = q.w * Mat3::identity() + skew(&q.vector());
    let mut xi = Matrix4x3::zeros();
    xi.fixed_view_mut::<3, 3>(0, 0).copy_from(&top);
    xi[(3, 0)] = -q.x;
    xi[(3, 1)] = -q.y;
    xi[(3, 2)] = -q.z;
    xi
}

/// `Ω(ω)` with `q̇ = ½ Ω(ω) q`.
pub fn omega_matrix(w: &Vec3) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(w)));
    m[(0, 3)] = w.x;
    m[(1, 3)] = w.y;
    m[(2, 3)] = w.z;
    m[(3, 0)] = -w.x;
    m[(3, 1)] = -w.y;
    m[(3, 2)] = -w.z;
    m
}

/// Rotation about `z` taking `V` vectors into `E`.
pub fn yaw_rotation(psi: f64) -> Mat3 {
    let (s, c) = psi.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Derivative of [`yaw_rotation`] with respect to the yaw angle.
pub fn d_yaw_rotation(psi: f64) -> Mat3 {
    let (s, c) = psi.sin_cos();
    Mat3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Matrix exponential of `[φ]×` (Rodrigues).
pub fn exp_so3(phi: &Vec3) -> Mat3 {
    let angle = phi.norm();
    let k = skew(phi);
    if angle < SMALL_ANGLE {
        return Mat3::identity() + k + 0.5 * k * k;
    }
    let a = angle.sin() / angle;
    let b = (1.0 - angle.cos()) / (angle * angle);
    Mat3::identity() + a * k + b * k * k
}

/// Inverse of [`exp_so3`], angle in `[0, π]`.
pub fn log_so3(r: &Mat3) -> Vec3 {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let angle = cos.acos();
    let vee = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if angle < 1e-6 {
        return 0.5 * vee;
    }
    if PI - angle < 1e-6 {
        // Near π the antisymmetric part vanishes; read the axis off R + I.
        let m = r + Mat3::identity();
        let col = (0..3)
            .max_by(|&i, &j| m.column(i).norm().total_cmp(&m.column(j).norm()))
            .unwrap_or(0);
        let axis = m.column(col).normalize();
        return axis * angle;
    }
    vee * (angle / (2.0 * angle.sin()))
}

/// Right Jacobian of SO(3): `exp(φ + δ) ≈ exp(φ) exp(Jr(φ) δ)`.
pub fn right_jacobian(phi: &Vec3) -> Mat3 {
    let angle = phi.norm();
    let k = skew(phi);
    if angle < 1e-5 {
        return Mat3::identity() - 0.5 * k + k * k / 6.0;
    }
    let a2 = angle * angle;
    Mat3::identity() - (1.0 - angle.cos()) / a2 * k + (angle - angle.sin()) / (a2 * angle) * k * k
}

pub fn left_jacobian(phi: &Vec3) -> Mat3 {
    right_jacobian(&(-phi))
}

pub fn right_jacobian_inv(phi: &Vec3) -> Mat3 {
    let angle = phi.norm();
    let k = skew(phi);
    if angle < 1e-5 {
        return Mat3::identity() + 0.5 * k + k * k / 12.0;
    }
    let a2 = angle * angle;
    let coeff = 1.0 / a2 - (1.0 + angle.cos()) / (2.0 * angle * angle.sin());
    Mat3::identity() + 0.5 * k + coeff * k * k
}

pub fn left_jacobian_inv(phi: &Vec3) -> Mat3 {
    right_jacobian_inv(&(-phi))
}

/// Rotation built from z-y-x Euler angles, mapping body vectors into the
/// reference frame: `Rz(yaw) Ry(pitch) Rx(roll)`.
pub fn euler_zyx(yaw: f64, pitch: f64, roll: f64) -> Mat3 {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sr, cr) = roll.sin_cos();
    let rz = Mat3::new(cy, -sy, 0.0, sy, cy, 0.0, 0.0, 0.0, 1.0);
    let ry = Mat3::new(cp, 0.0, sp, 0.0, 1.0, 0.0, -sp, 0.0, cp);
    let rx = Mat3::new(1.0, 0.0, 0.0, 0.0, cr, -sr, 0.0, sr, cr);
    rz * ry * rx
}

/// Geodesic angle between two rotations, radians.
pub fn rotation_angle_between(a: &Mat3, b: &Mat3) -> f64 {
    log_so3(&(a.transpose() * b)).norm()
}

/// Shortest-arc interpolation between `a` (at `λ = 0`) and `b` (at `λ = 1`).
pub fn slerp(a: &Quaternion, b: &Quaternion, lambda: f64) -> Quaternion {
    let ra = a.rotation();
    let rb = b.rotation();
    // Interpolate the body-to-reference rotation W = Rᵀ with a right
    // increment: W(λ) = Wa exp(λ log(Waᵀ Wb)).
    let wa = ra.transpose();
    let phi = log_so3(&(ra * rb.transpose()));
    let w = wa * exp_so3(&(lambda * phi));
    Quaternion::from_rotation(&w.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit_quat(a: f64, b: f64, c: f64, d: f64) -> Quaternion {
        Quaternion::new(a, b, c, d).normalize()
    }

    /// Independent rotation oracle: the truncated power series of exp(A).
    fn expm_series(a: &Mat3) -> Mat3 {
        let mut term = Mat3::identity();
        let mut sum = Mat3::identity();
        for k in 1..40 {
            term = term * a / k as f64;
            sum += term;
        }
        sum
    }

    #[test]
    fn skew_examples() {
        assert_eq!(skew(&Vec3::zeros()), Mat3::zeros());
        assert_eq!(
            skew(&Vec3::new(0.0, 0.0, 1.0)),
            Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        );
        let v = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(skew(&v) * v, Vec3::zeros());
        let w = Vec3::new(-0.3, 0.7, 2.0);
        assert_relative_eq!(skew(&v) * w, v.cross(&w), epsilon = 1e-15);
        assert_eq!(skew(&v).transpose(), -skew(&v));
    }

    #[test]
    fn quat_to_rot_examples() {
        assert_eq!(quat_to_rot(&Quaternion::identity()).unwrap(), Mat3::identity());
        let half = std::f64::consts::FRAC_PI_2;
        let qz = Quaternion::new(0.0, 0.0, half.sin(), half.cos());
        assert_relative_eq!(
            quat_to_rot(&qz).unwrap(),
            Mat3::from_diagonal(&Vec3::new(-1.0, -1.0, 1.0)),
            epsilon = 1e-15
        );
        assert!(matches!(
            quat_to_rot(&Quaternion::new(0.0, 0.0, 0.0, 1.1)),
            Err(So3Error::NonUnitQuaternion { .. })
        ));
    }

    #[test]
    fn quat_to_rot_matches_rodrigues_oracle() {
        let axis = Vec3::new(0.3, -0.5, 0.8).normalize();
        let angle: f64 = 1.234;
        let q = Quaternion::new(
            axis.x * (angle / 2.0).sin(),
            axis.y * (angle / 2.0).sin(),
            axis.z * (angle / 2.0).sin(),
            (angle / 2.0).cos(),
        );
        // JPL: frame rotation by `angle` about `axis` is exp(−angle [axis]×).
        let oracle = expm_series(&(-angle * skew(&axis)));
        assert_relative_eq!(quat_to_rot(&q).unwrap(), oracle, epsilon = 1e-12);
        let r = quat_to_rot(&q).unwrap();
        assert_relative_eq!(r.transpose() * r, Mat3::identity(), epsilon = 1e-12);
        assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn xi_matrix_examples() {
        let xi = xi_matrix(&Quaternion::identity());
        let mut expected = Matrix4x3::zeros();
        expected.fixed_view_mut::<3, 3>(0, 0).copy_from(&Mat3::identity());
        assert_eq!(xi, expected);

        let q = unit_quat(0.2, -0.4, 0.1, 0.9);
        let w = Vec3::new(0.1, 0.0, 0.0);
        let lhs = 0.5 * xi_matrix(&q) * w;
        let rhs = 0.5 * omega_matrix(&w) * q.as_vec4();
        assert_relative_eq!(lhs, rhs, epsilon = 1e-15);
        assert_eq!(xi_matrix(&q.neg()), -xi_matrix(&q));
    }

    #[test]
    fn yaw_rotation_examples() {
        assert_eq!(yaw_rotation(0.0), Mat3::identity());
        assert_relative_eq!(
            yaw_rotation(std::f64::consts::FRAC_PI_2),
            Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0),
            epsilon = 1e-15
        );
        assert_relative_eq!(
            yaw_rotation(0.4) * yaw_rotation(-1.3),
            yaw_rotation(-0.9),
            epsilon = 1e-15
        );
    }

    #[test]
    fn d_yaw_rotation_examples() {
        assert_eq!(
            d_yaw_rotation(0.0),
            Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        );
        assert_relative_eq!(
            d_yaw_rotation(std::f64::consts::FRAC_PI_2),
            Mat3::new(-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0),
            epsilon = 1e-15
        );
        for &psi in &[-3.0, -1.1, 0.0, 0.3, 2.9] {
            let h = 1e-5;
            let fd = (yaw_rotation(psi + h) - yaw_rotation(psi - h)) / (2.0 * h);
            assert_relative_eq!(d_yaw_rotation(psi), fd, epsilon = 1e-7);
            assert_eq!(d_yaw_rotation(psi) * Vec3::new(0.0, 0.0, 4.2), Vec3::zeros());
        }
    }

    #[test]
    fn wrap_angle_range() {
        assert_relative_eq!(wrap_angle(PI + 0.1), -PI + 0.1, epsilon = 1e-12);
        assert_eq!(wrap_angle(PI), PI);
        assert_relative_eq!(wrap_angle(-PI), PI, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(7.0), 7.0 - 2.0 * PI, epsilon = 1e-12);
    }

    #[test]
    fn exp_log_and_jacobians() {
        let phi = Vec3::new(0.3, -0.2, 0.9);
        assert_relative_eq!(exp_so3(&phi), expm_series(&skew(&phi)), epsilon = 1e-12);
        assert_relative_eq!(log_so3(&exp_so3(&phi)), phi, epsilon = 1e-12);
        let near_pi = Vec3::new(0.0, 1.0, 1.0).normalize() * (PI - 1e-9);
        assert_relative_eq!(log_so3(&exp_so3(&near_pi)).norm(), PI, epsilon = 1e-6);

        let d = Vec3::new(1e-6, -2e-6, 0.5e-6);
        let lhs = exp_so3(&(phi + d));
        let rhs = exp_so3(&phi) * exp_so3(&(right_jacobian(&phi) * d));
        assert_relative_eq!(lhs, rhs, epsilon = 1e-11);
        assert_relative_eq!(
            right_jacobian(&phi) * right_jacobian_inv(&phi),
            Mat3::identity(),
            epsilon = 1e-12
        );
        assert_relative_eq!(
            left_jacobian(&phi) * left_jacobian_inv(&phi),
            Mat3::identity(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn rotation_vector_round_trip() {
        let phi = Vec3::new(-0.4, 1.1, 0.2);
        let q = Quaternion::from_rotation_vector(&phi);
        assert_relative_eq!(q.rotation(), exp_so3(&(-phi)), epsilon = 1e-12);
        assert_relative_eq!(q.to_rotation_vector(), phi, epsilon = 1e-12);
    }

    #[test]
    fn slerp_endpoints_and_midpoint() {
        let a = unit_quat(0.1, 0.2, -0.3, 0.9);
        let b = unit_quat(0.15, 0.1, -0.2, 0.95);
        assert_relative_eq!(slerp(&a, &b, 0.0).rotation(), a.rotation(), epsilon = 1e-12);
        assert_relative_eq!(slerp(&a, &b, 1.0).rotation(), b.rotation(), epsilon = 1e-12);
        let m = slerp(&a, &b, 0.5).rotation();
        assert_relative_eq!(
            rotation_angle_between(&m, &a.rotation()),
            rotation_angle_between(&m, &b.rotation()),
            epsilon = 1e-12
        );
    }

    proptest! {
        #[test]
        fn multiply_composes_rotations(
            a in prop::array::uniform4(-1.0f64..1.0),
            b in prop::array::uniform4(-1.0f64..1.0),
        ) {
            let qa = Quaternion::new(a[0], a[1], a[2], a[3] + 1.5).normalize();
            let qb = Quaternion::new(b[0], b[1], b[2], b[3] - 1.5).normalize();
            let lhs = quat_to_rot(&quat_multiply(&qa, &qb)).unwrap();
            let rhs = quat_to_rot(&qa).unwrap() * quat_to_rot(&qb).unwrap();
            prop_assert!((lhs - rhs).abs().max() < 1e-9);
        }

        #[test]
        fn xi_matches_omega_form(
            a in prop::array::uniform4(-1.0f64..1.0),
            w in prop::array::uniform3(-5.0f64..5.0),
        ) {
            let q = Quaternion::new(a[0], a[1], a[2], a[3] + 1.5).normalize();
            let w = Vec3::new(w[0], w[1], w[2]);
            let diff = 0.5 * xi_matrix(&q) * w - 0.5 * omega_matrix(&w) * q.as_vec4();
            prop_assert!(diff.abs().max() < 1e-12);
        }

        #[test]
        fn from_rotation_inverts_rotation(a in prop::array::uniform4(-1.0f64..1.0)) {
            let q = Quaternion::new(a[0], a[1], a[2], a[3] + 0.01).normalize();
            let back = Quaternion::from_rotation(&q.rotation());
            prop_assert!((back.rotation() - q.rotation()).abs().max() < 1e-9);
            prop_assert!((back.norm() - 1.0).abs() < 1e-9);
        }
    }
}
