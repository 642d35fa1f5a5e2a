//! SO(3)/SE(3) group operations, exponential/logarithm maps, and the
//! right-Jacobians used by preintegration and residual linearization.
//!
//! Conventions: rotations are 3x3 orthonormal matrices, poses act on points
//! as `R*p + t`, and twists are ordered `[rotation; translation]`. All
//! small-angle paths switch to a truncated series below [`SMALL_ANGLE`].

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use thiserror::Error;

/// Tangent vector of SE(3): `[omega_x, omega_y, omega_z, v_x, v_y, v_z]`.
pub type Twist = Vector6<f64>;

/// Threshold below which exp/log/Jacobian formulas use their Taylor fallback.
pub const SMALL_ANGLE: f64 = 1e-8;

const ORTHONORMALITY_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum LieError {
    #[error("matrix is not a rotation: orthonormality defect {defect:.3e}")]
    NotOrthonormal { defect: f64 },
    #[error("matrix is not a rotation: determinant {det:.6}")]
    NotProper { det: f64 },
    #[error("non-finite entry in input")]
    NonFinite,
}

/// Skew-symmetric matrix such that `hat(a) * b = a x b`.
#[rustfmt::skip]
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0,  -v.z,  v.y,
        v.z,   0.0, -v.x,
       -v.y,   v.x,  0.0,
    )
}

/// Inverse of [`hat`]; assumes the argument is skew-symmetric.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rotation in SO(3), stored as an orthonormal matrix with determinant +1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Validating constructor for matrices from external sources.
    pub fn from_matrix(m: &Matrix3<f64>) -> Result<Self, LieError> {
        if !m.iter().all(|x| x.is_finite()) {
            return Err(LieError::NonFinite);
        }
        let defect = (m.transpose() * m - Matrix3::identity()).norm();
        if defect > ORTHONORMALITY_TOL {
            return Err(LieError::NotOrthonormal { defect });
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ORTHONORMALITY_TOL {
            return Err(LieError::NotProper { det });
        }
        Ok(Rotation(*m))
    }

    /// Wraps a matrix that is known to be orthonormal (e.g. built from group
    /// operations on valid rotations).
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    /// Exponential map via the Rodrigues formula.
    ///
    /// Panics on non-finite input; the tangent always comes from internal
    /// arithmetic, so a NaN here is a programming error upstream.
    pub fn exp(omega: &Vector3<f64>) -> Self {
        assert!(
            omega.iter().all(|x| x.is_finite()),
            "non-finite tangent passed to Rotation::exp"
        );
        let theta2 = omega.norm_squared();
        let w = hat(omega);
        let w2 = w * w;
        if theta2 < SMALL_ANGLE * SMALL_ANGLE {
            // 2-term Taylor of sin(t)/t and (1-cos t)/t^2
            let a = 1.0 - theta2 / 6.0;
            let b = 0.5 - theta2 / 24.0;
            Rotation(Matrix3::identity() + a * w + b * w2)
        } else {
            let theta = theta2.sqrt();
            let a = theta.sin() / theta;
            let b = (1.0 - theta.cos()) / theta2;
            Rotation(Matrix3::identity() + a * w + b * w2)
        }
    }

    /// Logarithm map. Returns the rotation vector with norm <= pi; the
    /// trace-near(-1) branch extracts the axis from `R + I`.
    pub fn log(&self) -> Vector3<f64> {
        let r = &self.0;
        let antisym = Vector3::new(
            r[(2, 1)] - r[(1, 2)],
            r[(0, 2)] - r[(2, 0)],
            r[(1, 0)] - r[(0, 1)],
        );
        let s = 0.5 * antisym.norm(); // sin(theta)
        let c = 0.5 * (r.trace() - 1.0); // cos(theta)
        let theta = s.atan2(c.clamp(-1.0, 1.0));

        if theta < SMALL_ANGLE {
            return 0.5 * antisym;
        }
        if c > -1.0 + 1e-5 {
            return (0.5 * theta / theta.sin()) * antisym;
        }
        // theta near pi: the antisymmetric part degenerates, so extract the
        // axis from the symmetric part, (B - cos(theta) I)/(1 - cos) = a a^T.
        let b = (r + r.transpose()) * 0.5;
        let outer = (b - c * Matrix3::identity()) / (1.0 - c);
        let j = outer.diagonal().imax();
        let mut axis: Vector3<f64> = outer.column(j).into_owned() / outer[(j, j)].sqrt();
        axis.normalize_mut();
        if s > 1e-12 {
            // sign from the antisymmetric part when it is still informative
            if axis.dot(&antisym) < 0.0 {
                axis = -axis;
            }
        } else {
            // exactly pi: both signs are valid; canonicalize on the largest
            // component so the result is deterministic
            let k = axis.iamax();
            if axis[k] < 0.0 {
                axis = -axis;
            }
        }
        theta * axis
    }

    pub fn angle(&self) -> f64 {
        self.log().norm()
    }

    /// Angular distance to another rotation.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        (self.transpose() * *other).angle()
    }

    /// Minimal rotation mapping unit vector `from` onto unit vector `to`.
    pub fn between_vectors(from: &Vector3<f64>, to: &Vector3<f64>) -> Self {
        let f = from.normalize();
        let t = to.normalize();
        let c = f.dot(&t).clamp(-1.0, 1.0);
        let axis = f.cross(&t);
        let s = axis.norm();
        if s < 1e-12 {
            if c > 0.0 {
                return Rotation::identity();
            }
            // antiparallel: rotate by pi about any axis orthogonal to f
            let ortho = if f.x.abs() < 0.9 {
                f.cross(&Vector3::x())
            } else {
                f.cross(&Vector3::y())
            };
            return Rotation::exp(&(std::f64::consts::PI * ortho.normalize()));
        }
        let angle = s.atan2(c);
        Rotation::exp(&(angle * axis / s))
    }

    /// Rotation about the world z-axis.
    pub fn yaw(psi: f64) -> Self {
        Rotation::exp(&Vector3::new(0.0, 0.0, psi))
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl std::ops::Mul<Vector3<f64>> for Rotation {
    type Output = Vector3<f64>;
    fn mul(self, v: Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }
}

impl std::ops::Mul<&Vector3<f64>> for &Rotation {
    type Output = Vector3<f64>;
    fn mul(self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }
}

/// Right Jacobian of SO(3): `Exp(w + d) ~ Exp(w) * Exp(Jr(w) * d)`.
pub fn so3_right_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let w = hat(omega);
    let w2 = w * w;
    if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        Matrix3::identity() - 0.5 * w + (1.0 / 6.0 - theta2 / 120.0) * w2
    } else {
        let theta = theta2.sqrt();
        let a = (1.0 - theta.cos()) / theta2;
        let b = (theta - theta.sin()) / (theta2 * theta);
        Matrix3::identity() - a * w + b * w2
    }
}

/// Inverse of the right Jacobian.
pub fn so3_right_jacobian_inv(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let w = hat(omega);
    let w2 = w * w;
    if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        return Matrix3::identity() + 0.5 * w + (1.0 / 12.0 + theta2 / 720.0) * w2;
    }
    let theta = theta2.sqrt();
    let s = theta.sin();
    let coef = if s.abs() < 1e-9 {
        // limit of 1/t^2 - (1+cos t)/(2 t sin t) as t -> pi
        1.0 / theta2
    } else {
        1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * s)
    };
    Matrix3::identity() + 0.5 * w + coef * w2
}

/// Left Jacobian of SO(3) (also the V-matrix of the SE(3) exponential).
pub fn so3_left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    so3_right_jacobian(&-omega)
}

pub fn so3_left_jacobian_inv(omega: &Vector3<f64>) -> Matrix3<f64> {
    so3_right_jacobian_inv(&-omega)
}

/// Rigid transform in SE(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Rotation::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Applies the transform to a point.
    pub fn act(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * *p + self.translation
    }

    /// SE(3) exponential, twist ordered `[omega; v]`.
    pub fn exp(xi: &Twist) -> Pose {
        let omega = xi.fixed_rows::<3>(0).into_owned();
        let v = xi.fixed_rows::<3>(3).into_owned();
        Pose {
            rotation: Rotation::exp(&omega),
            translation: so3_left_jacobian(&omega) * v,
        }
    }

    /// SE(3) logarithm, inverse of [`Pose::exp`] for rotation angle < pi.
    pub fn log(&self) -> Twist {
        let omega = self.rotation.log();
        let v = so3_left_jacobian_inv(&omega) * self.translation;
        let mut xi = Twist::zeros();
        xi.fixed_rows_mut::<3>(0).copy_from(&omega);
        xi.fixed_rows_mut::<3>(3).copy_from(&v);
        xi
    }

    /// Adjoint matrix: `Exp(Adj_T * xi) = T * Exp(xi) * T^-1`.
    pub fn adjoint(&self) -> Matrix6<f64> {
        let r = self.rotation.matrix();
        let tr = hat(&self.translation) * r;
        let mut adj = Matrix6::zeros();
        adj.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
        adj.fixed_view_mut::<3, 3>(3, 0).copy_from(&tr);
        adj.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
        adj
    }

    /// Right-multiplicative retraction `T * Exp(xi)`.
    pub fn retract(&self, xi: &Twist) -> Pose {
        self.compose(&Pose::exp(xi))
    }
}

impl std::ops::Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

/// Barfoot's Q matrix: the translation-rotation coupling block of the SE(3)
/// left Jacobian, for twist ordering `[omega; v]`.
fn se3_q_matrix(omega: &Vector3<f64>, v: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let w = hat(omega);
    let vv = hat(v);
    let wv = w * vv;
    let vw = vv * w;

    let (c1, c2, c3) = if theta < 1e-4 {
        (
            1.0 / 6.0 - theta2 / 120.0,
            1.0 / 24.0 - theta2 / 720.0,
            1.0 / 120.0 - theta2 / 2520.0,
        )
    } else {
        let (s, c) = (theta.sin(), theta.cos());
        let t3 = theta2 * theta;
        let t4 = theta2 * theta2;
        let t5 = t4 * theta;
        (
            (theta - s) / t3,
            (theta2 + 2.0 * c - 2.0) / (2.0 * t4),
            (2.0 * theta - 3.0 * s + theta * c) / (2.0 * t5),
        )
    };

    0.5 * vv
        + c1 * (wv + vw + w * vw)
        + c2 * (w * wv + vw * w - 3.0 * w * vw)
        + c3 * (w * vw * w + w * wv * w)
}

/// SE(3) left Jacobian for ordering `[omega; v]`.
pub fn se3_left_jacobian(xi: &Twist) -> Matrix6<f64> {
    let omega = xi.fixed_rows::<3>(0).into_owned();
    let v = xi.fixed_rows::<3>(3).into_owned();
    let j = so3_left_jacobian(&omega);
    let q = se3_q_matrix(&omega, &v);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j);
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&q);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j);
    out
}

pub fn se3_right_jacobian(xi: &Twist) -> Matrix6<f64> {
    se3_left_jacobian(&-xi)
}

/// Inverse of the SE(3) right Jacobian; used to linearize Log-based pose
/// residuals under the right retraction.
pub fn se3_right_jacobian_inv(xi: &Twist) -> Matrix6<f64> {
    let neg = -xi;
    let omega = neg.fixed_rows::<3>(0).into_owned();
    let v = neg.fixed_rows::<3>(3).into_owned();
    let jinv = so3_left_jacobian_inv(&omega);
    let q = se3_q_matrix(&omega, &v);
    let lower = -jinv * q * jinv;
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&jinv);
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&lower);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&jinv);
    out
}
