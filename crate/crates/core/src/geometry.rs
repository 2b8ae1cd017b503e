//! Rigid-body math on SE(3) with a planar bias.
//!
//! Tangent vectors are ordered translation-first: `(ρx, ρy, ρz, φx, φy, φz)`.
//! Perturbations are applied on the left, `T ← exp(δ)·T`.

use core::f64::consts::PI;
use core::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Matrix6, Vector3, Vector6};
#[cfg(not(feature = "std"))]
use num_traits::Float;

pub type Vec3 = Vector3<f64>;
pub type Vec6 = Vector6<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat6 = Matrix6<f64>;

/// Below this rotation angle the closed forms switch to Taylor series.
pub const SMALL_ANGLE: f64 = 1e-7;

/// Rotations within this distance of π have no canonical logarithm.
pub const LOG_PI_MARGIN: f64 = 1e-9;

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("rotation angle {angle} is within {LOG_PI_MARGIN} of pi; logarithm is not canonical")]
    LogAtPi { angle: f64 },
    #[error("matrix is not a proper rotation (orthonormality error {ortho_err:e}, det {det})")]
    NotARotation { ortho_err: f64, det: f64 },
    #[error("non-finite value in transform")]
    NonFinite,
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut w = a % two_pi;
    if w <= -PI {
        w += two_pi;
    } else if w > PI {
        w -= two_pi;
    }
    w
}

/// Skew-symmetric matrix such that `hat(a) * b == a × b`.
pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// A proper rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation3(Mat3);

impl Rotation3 {
    pub fn identity() -> Self {
        Self(Mat3::identity())
    }

    /// Checks orthonormality and determinant before accepting `m`.
    pub fn from_matrix(m: Mat3) -> Result<Self, GeometryError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let ortho_err = (m.transpose() * m - Mat3::identity()).abs().max();
        let det = m.determinant();
        if ortho_err > ORTHONORMAL_TOL || (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(GeometryError::NotARotation { ortho_err, det });
        }
        Ok(Self(m))
    }

    pub(crate) fn from_matrix_unchecked(m: Mat3) -> Self {
        Self(m)
    }

    /// Counterclockwise rotation about +z.
    pub fn about_z(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self(Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// Yaw angle of the rotated x-axis projected onto the xy-plane.
    pub fn yaw(&self) -> f64 {
        self.0[(1, 0)].atan2(self.0[(0, 0)])
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let w = vee(&(self.0 - self.0.transpose()));
        let s = 0.5 * w.norm();
        let c = 0.5 * (self.0.trace() - 1.0);
        s.atan2(c)
    }

    pub fn exp(phi: &Vec3) -> Self {
        let theta = phi.norm();
        let p = hat(phi);
        let m = if theta < SMALL_ANGLE {
            Mat3::identity() + p + 0.5 * p * p
        } else {
            let half = 0.5 * theta;
            let a = theta.sin() / theta;
            let b = 2.0 * (half.sin() / theta).powi(2);
            Mat3::identity() + a * p + b * p * p
        };
        Self(m)
    }

    /// Axis-angle vector; rejects angles within [`LOG_PI_MARGIN`] of π.
    pub fn log(&self) -> Result<Vec3, GeometryError> {
        let r = &self.0;
        let w = vee(&(r - r.transpose()));
        let s = 0.5 * w.norm();
        let c = 0.5 * (r.trace() - 1.0);
        let theta = s.atan2(c);
        if PI - theta < LOG_PI_MARGIN {
            return Err(GeometryError::LogAtPi { angle: theta });
        }
        if theta < SMALL_ANGLE {
            return Ok(0.5 * (1.0 + theta * theta / 6.0) * w);
        }
        if theta < 0.75 * PI {
            return Ok(theta / (2.0 * s) * w);
        }
        // Near π the skew part loses precision; recover the axis from the
        // symmetric part instead.
        let b = 0.5 * (r + r.transpose()) - c * Mat3::identity();
        let one_minus_c = 1.0 - c;
        let (i, _) =
            (0..3).map(|i| (i, b[(i, i)])).fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        let mut axis: Vec3 = b.column(i).into();
        axis /= (b[(i, i)] * one_minus_c).sqrt();
        axis.normalize_mut();
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
        Ok(theta * axis)
    }
}

impl Mul for Rotation3 {
    type Output = Rotation3;
    fn mul(self, rhs: Rotation3) -> Rotation3 {
        Rotation3(self.0 * rhs.0)
    }
}

/// SO(3) left Jacobian.
pub fn so3_left_jacobian(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let p = hat(phi);
    if theta < SMALL_ANGLE {
        return Mat3::identity() + 0.5 * p + p * p / 6.0;
    }
    let t2 = theta * theta;
    let half = 0.5 * theta;
    let a = 2.0 * half.sin().powi(2) / t2;
    let b = (theta - theta.sin()) / (t2 * theta);
    Mat3::identity() + a * p + b * p * p
}

pub fn so3_left_jacobian_inv(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let p = hat(phi);
    if theta < SMALL_ANGLE {
        return Mat3::identity() - 0.5 * p + p * p / 12.0;
    }
    let half = 0.5 * theta;
    let cot_half = half.cos() / half.sin();
    let b = 1.0 / (theta * theta) - cot_half / (2.0 * theta);
    Mat3::identity() - 0.5 * p + b * p * p
}

/// The coupling block of the SE(3) left Jacobian.
fn se3_q(rho: &Vec3, phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let rx = hat(rho);
    let px = hat(phi);
    let t2 = theta * theta;
    let (c1, c2, c3) = if theta < SMALL_ANGLE {
        (1.0 / 6.0 - t2 / 120.0, 1.0 / 24.0 - t2 / 720.0, 1.0 / 120.0 - t2 / 2520.0)
    } else {
        let (s, c) = theta.sin_cos();
        let t3 = t2 * theta;
        (
            (theta - s) / t3,
            (t2 + 2.0 * c - 2.0) / (2.0 * t2 * t2),
            (2.0 * theta - 3.0 * s + theta * c) / (2.0 * t2 * t3),
        )
    };
    let prp = px * rx * px;
    0.5 * rx
        + c1 * (px * rx + rx * px + prp)
        + c2 * (px * px * rx + rx * px * px - 3.0 * prp)
        + c3 * (prp * px + px * prp)
}

/// SE(3) left Jacobian (6×6, translation-first).
pub fn se3_left_jacobian(xi: &Twist6) -> Mat6 {
    let rho = xi.rho();
    let phi = xi.phi();
    let jl = so3_left_jacobian(&phi);
    let mut out = Mat6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&jl);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&jl);
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&se3_q(&rho, &phi));
    out
}

pub fn se3_left_jacobian_inv(xi: &Twist6) -> Mat6 {
    let rho = xi.rho();
    let phi = xi.phi();
    let jinv = so3_left_jacobian_inv(&phi);
    let q = se3_q(&rho, &phi);
    let mut out = Mat6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&jinv);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&jinv);
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-jinv * q * jinv));
    out
}

/// A 6-vector in se(3): translational part then rotational part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist6(pub Vec6);

impl Twist6 {
    pub fn new(rho: Vec3, phi: Vec3) -> Self {
        Self(Vec6::new(rho.x, rho.y, rho.z, phi.x, phi.y, phi.z))
    }

    pub fn zero() -> Self {
        Self(Vec6::zeros())
    }

    pub fn rho(&self) -> Vec3 {
        self.0.fixed_rows::<3>(0).into()
    }

    pub fn phi(&self) -> Vec3 {
        self.0.fixed_rows::<3>(3).into()
    }

    pub fn as_vector(&self) -> &Vec6 {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

impl core::ops::Neg for Twist6 {
    type Output = Twist6;
    fn neg(self) -> Twist6 {
        Twist6(-self.0)
    }
}

/// Rigid transformation `p ↦ R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub rotation: Rotation3,
    pub translation: Vec3,
}

impl Default for Transform {
    fn default() -> Self {
        Self::identity()
    }
}

impl Transform {
    pub fn new(rotation: Rotation3, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Rotation3::identity(), Vec3::zeros())
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(Rotation3::identity(), t)
    }

    /// Planar pose: position `(x, y)` and counterclockwise heading.
    pub fn from_planar_pose(x: f64, y: f64, heading: f64) -> Self {
        Self::new(Rotation3::about_z(heading), Vec3::new(x, y, 0.0))
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt.matrix() * self.translation))
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation.matrix() * p + self.translation
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Top 3×4 block, row-major.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = self.rotation.matrix();
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x, //
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y, //
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }

    pub fn from_row_major(v: &[f64; 12]) -> Result<Self, GeometryError> {
        let r = Mat3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        let t = Vec3::new(v[3], v[7], v[11]);
        if !t.iter().all(|x| x.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self::new(Rotation3::from_matrix(r)?, t))
    }

    /// 6×6 adjoint, translation-first ordering.
    pub fn adjoint(&self) -> Mat6 {
        let r = self.rotation.matrix();
        let mut ad = Mat6::zeros();
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
        ad.fixed_view_mut::<3, 3>(0, 3).copy_from(&(hat(&self.translation) * r));
        ad
    }

    pub fn yaw(&self) -> f64 {
        self.rotation.yaw()
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().chain(self.rotation.matrix().iter()).all(|v| v.is_finite())
    }
}

impl Mul for Transform {
    type Output = Transform;
    fn mul(self, rhs: Transform) -> Transform {
        Transform::new(self.rotation * rhs.rotation, self.rotation.matrix() * rhs.translation + self.translation)
    }
}

impl Mul<&Transform> for &Transform {
    type Output = Transform;
    fn mul(self, rhs: &Transform) -> Transform {
        *self * *rhs
    }
}

pub fn se3_exp(xi: &Twist6) -> Transform {
    let phi = xi.phi();
    let rotation = Rotation3::exp(&phi);
    let translation = so3_left_jacobian(&phi) * xi.rho();
    Transform::new(rotation, translation)
}

/// Canonical logarithm; fails when the rotation angle is (numerically) π.
pub fn se3_log(t: &Transform) -> Result<Twist6, GeometryError> {
    let phi = t.rotation.log()?;
    let rho = so3_left_jacobian_inv(&phi) * t.translation;
    Ok(Twist6::new(rho, phi))
}

/// Planar error transform with the rotation block laid out as
/// `[cos θ, sin θ; −sin θ, cos θ]`, i.e. a rotation of global vectors into
/// the query frame by `θ`.
pub fn planar_transform(theta_qm: f64, r: [f64; 2]) -> Transform {
    let (s, c) = theta_qm.sin_cos();
    let rot = Mat3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0);
    Transform::new(Rotation3::from_matrix_unchecked(rot), Vec3::new(r[0], r[1], 0.0))
}
