//! Matrix Lie group primitives for SO(3) and SE(3).
//!
//! Rotations are plain 3×3 matrices (`Mat3`) whose orthonormality is checked
//! where it matters rather than enforced by a wrapper type. Twists are body-frame
//! velocities stacked as `[Ω; ν]`.

use nalgebra::{Matrix3, Matrix4, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use std::ops::Mul;
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Vec6 = Vector6<f64>;
pub type Mat6 = Matrix6<f64>;
pub type Mat4 = Matrix4<f64>;

/// Below this angle (rad) the exponential and Jacobian use their series forms.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Tolerance on the symmetric part accepted by [`vex3`].
pub const SKEW_TOL: f64 = 1e-9;

/// Orthonormality tolerance for a valid rotation.
pub const ROTATION_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("matrix is not skew-symmetric (symmetric part {asymmetry:e})")]
    NotSkew { asymmetry: f64 },
    #[error("matrix is not a rotation (orthonormality error {orthonormality:e}, det {det})")]
    NotRotation { orthonormality: f64, det: f64 },
    #[error("matrix is not a twist: {0}")]
    NotTwist(&'static str),
}

/// Skew-symmetric cross-product matrix, `hat3(v) * w == v.cross(&w)`.
pub fn hat3(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat3`]. Rejects matrices whose symmetric part exceeds [`SKEW_TOL`]
/// (scaled by the matrix magnitude when it exceeds one).
pub fn vex3(m: &Mat3) -> Result<Vec3, GeometryError> {
    let sym = (m + m.transpose()) * 0.5;
    let asymmetry = sym.abs().max();
    if asymmetry > SKEW_TOL * m.abs().max().max(1.0) {
        return Err(GeometryError::NotSkew { asymmetry });
    }
    Ok(Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    ))
}

/// `vex(A - Aᵀ)` for an arbitrary square matrix `A`.
///
/// Most gradient expressions in the estimator have the form `vex(X - Xᵀ)`, which
/// is skew by construction; this avoids forming the difference and re-checking it.
pub fn vex_antisym(a: &Mat3) -> Vec3 {
    Vec3::new(
        a[(2, 1)] - a[(1, 2)],
        a[(0, 2)] - a[(2, 0)],
        a[(1, 0)] - a[(0, 1)],
    )
}

/// Body-frame velocity pair `ξ = [Ω; ν]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    /// Angular velocity (rad/s).
    pub omega: Vec3,
    /// Translational velocity (m/s).
    pub nu: Vec3,
}

impl Twist {
    pub fn new(omega: Vec3, nu: Vec3) -> Self {
        Self { omega, nu }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn to_vec6(&self) -> Vec6 {
        Vec6::new(
            self.omega.x,
            self.omega.y,
            self.omega.z,
            self.nu.x,
            self.nu.y,
            self.nu.z,
        )
    }

    pub fn from_vec6(v: &Vec6) -> Self {
        Self {
            omega: v.fixed_rows::<3>(0).into_owned(),
            nu: v.fixed_rows::<3>(3).into_owned(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            omega: self.omega * s,
            nu: self.nu * s,
        }
    }
}

/// Rigid transformation from the body frame to the reference frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Mat3,
    /// Position of the body origin in the reference frame (m).
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Constructs a pose after checking that `rotation` lies on SO(3).
    pub fn checked(rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        check_rotation(&rotation, ROTATION_TOL)?;
        Ok(Self::new(rotation, translation))
    }

    pub fn identity() -> Self {
        Self::new(Mat3::identity(), Vec3::zeros())
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt * self.translation))
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    /// Maps a body-frame point into the reference frame.
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn to_matrix(&self) -> Mat4 {
        let mut m = Mat4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix(m: &Mat4) -> Self {
        Self::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl<'a> Mul<&'a Pose> for &'a Pose {
    type Output = Pose;
    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

/// `‖RᵀR − I‖_F`.
pub fn orthonormality_error(r: &Mat3) -> f64 {
    (r.transpose() * r - Mat3::identity()).norm()
}

pub fn check_rotation(r: &Mat3, tol: f64) -> Result<(), GeometryError> {
    let orthonormality = orthonormality_error(r);
    let det = r.determinant();
    if orthonormality > tol || (det - 1.0).abs() > tol {
        return Err(GeometryError::NotRotation {
            orthonormality,
            det,
        });
    }
    Ok(())
}

/// Nearest rotation in the Frobenius sense (orthogonal polar factor).
pub fn nearest_rotation(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut s = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    u * s * v_t
}

/// Re-projects `r` onto SO(3) only if its orthonormality error exceeds `tol`.
/// Returns whether a projection happened so callers can count it.
pub fn renormalize_if_drifted(r: &mut Mat3, tol: f64) -> bool {
    if orthonormality_error(r) > tol {
        *r = nearest_rotation(r);
        true
    } else {
        false
    }
}

/// 4×4 twist matrix `[Ω^× ν; 0 0]`.
pub fn twist_matrix(xi: &Twist) -> Mat4 {
    let mut m = Mat4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat3(&xi.omega));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&xi.nu);
    m
}

/// Inverse of [`twist_matrix`].
pub fn twist_from_matrix(m: &Mat4) -> Result<Twist, GeometryError> {
    if m.fixed_view::<1, 4>(3, 0).abs().max() > SKEW_TOL {
        return Err(GeometryError::NotTwist("bottom row must be zero"));
    }
    let omega = vex3(&m.fixed_view::<3, 3>(0, 0).into_owned())?;
    Ok(Twist::new(omega, m.fixed_view::<3, 1>(0, 3).into_owned()))
}

/// Rodrigues formula.
pub fn exp_so3(v: &Vec3) -> Mat3 {
    let theta2 = v.norm_squared();
    let theta = theta2.sqrt();
    let k = hat3(v);
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Mat3::identity() + k * a + k * k * b
}

/// Rotation vector of `r` with angle in `[0, π]`.
pub fn log_so3(r: &Mat3) -> Vec3 {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let w = vex_antisym(r) * 0.5;
    let theta = w.norm().atan2(cos);
    if theta < SMALL_ANGLE {
        return w * (1.0 + theta * theta / 6.0);
    }
    if std::f64::consts::PI - theta < 1e-6 {
        // Near a half-turn sin θ vanishes; recover the axis from the symmetric part.
        let b = (r + Mat3::identity()) * 0.5;
        let mut col = 0;
        for i in 1..3 {
            if b[(i, i)] > b[(col, col)] {
                col = i;
            }
        }
        let mut axis: Vec3 = b.column(col).into_owned();
        axis /= axis.norm();
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
        return axis * theta;
    }
    w * (theta / theta.sin())
}

/// Left Jacobian of SO(3), so that `exp_se3` translation is `J_l(Ωt) νt`.
pub fn left_jacobian_so3(v: &Vec3) -> Mat3 {
    let theta2 = v.norm_squared();
    let theta = theta2.sqrt();
    let k = hat3(v);
    let (a, b) = if theta < SMALL_ANGLE {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Mat3::identity() + k * a + k * k * b
}

/// Closed-form exponential of `dt · ξ^∨`.
pub fn exp_se3(xi: &Twist, dt: f64) -> Pose {
    let w = xi.omega * dt;
    let v = xi.nu * dt;
    Pose::new(exp_so3(&w), left_jacobian_so3(&w) * v)
}

/// `Ad_g = [R 0; b^×R R]`.
pub fn adjoint_of_pose(g: &Pose) -> Mat6 {
    let r = g.rotation;
    let mut m = Mat6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
    m.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(hat3(&g.translation) * r));
    m
}

/// `ad_ζ = [w^× 0; v^× w^×]` for `ζ = [w; v]`.
pub fn ad_small(zeta: &Vec6) -> Mat6 {
    let w = hat3(&zeta.fixed_rows::<3>(0).into_owned());
    let v = hat3(&zeta.fixed_rows::<3>(3).into_owned());
    let mut m = Mat6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&w);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&w);
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(&v);
    m
}

/// Co-adjoint `ad*_ζ = ad_ζᵀ`.
pub fn coad(zeta: &Vec6) -> Mat6 {
    ad_small(zeta).transpose()
}

/// Rotation angle of `r`, in `[0, π]`.
pub fn principal_angle(r: &Mat3) -> f64 {
    // atan2 keeps full precision near 0 and π, where acos of the trace does not.
    let sin = 0.5 * vex_antisym(r).norm();
    let cos = 0.5 * (r.trace() - 1.0);
    sin.atan2(cos)
}
