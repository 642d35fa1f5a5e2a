//! Doppler ego-velocity estimation and the lever-arm-compensated body
//! velocity factor.
//!
//! Each scan point with radial velocity `v_d` and direction `u = p/||p||`
//! constrains the radar-frame velocity through `-v_d = v_R . u`. A Cauchy
//! IRLS solve rejects moving objects; the covariance is the inverse
//! unweighted information over the inlier rows.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use thiserror::Error;

use crate::graph::{Key, Residual, RobustKernel, Value};
use crate::lie::{hat, Rotation};
use crate::state::NavState;

/// Points closer than this are discarded (near-field clutter).
pub const MIN_RANGE: f64 = 0.1;

/// One radar return: position in the sensor frame and signed radial speed.
#[derive(Debug, Clone, Copy)]
pub struct RadarPoint {
    pub position: Vector3<f64>,
    pub doppler: f64,
    pub intensity: Option<f64>,
}

/// A timestamped Doppler point set.
#[derive(Debug, Clone)]
pub struct RadarScan {
    pub t: f64,
    pub points: Vec<RadarPoint>,
}

/// Radar-to-body extrinsics: `v_B = R * v_R - omega x lever_arm`.
#[derive(Debug, Clone, Copy)]
pub struct RadarExtrinsics {
    pub rotation: Rotation,
    pub lever_arm: Vector3<f64>,
}

impl Default for RadarExtrinsics {
    fn default() -> Self {
        RadarExtrinsics { rotation: Rotation::identity(), lever_arm: Vector3::zeros() }
    }
}

/// Fitted sensor velocity with its covariance.
#[derive(Debug, Clone, Copy)]
pub struct EgoVelocityEstimate {
    /// Radar-frame velocity [m/s].
    pub velocity: Vector3<f64>,
    pub covariance: Matrix3<f64>,
    pub inliers: usize,
    pub total: usize,
}

#[derive(Debug, Error)]
pub enum EgoVelocityError {
    #[error("need at least 3 usable points, got {got}")]
    InsufficientPoints { got: usize },
    #[error("degenerate direction geometry: min singular value {sigma_min:.3e}")]
    DegenerateGeometry { sigma_min: f64 },
}

const IRLS_ITERS: usize = 10;

/// Robust least-squares fit of the radar-frame ego-velocity.
///
/// `sigma_d` is the Doppler noise standard deviation; the kernel operates on
/// whitened residuals. Inliers are points with `|v.u + v_d| < 3 sigma_d`;
/// the returned covariance is `sigma_d^2 (A^T A)^{-1}` over inlier rows.
pub fn estimate_ego_velocity(
    scan: &RadarScan,
    sigma_d: f64,
    kernel: &RobustKernel,
) -> Result<EgoVelocityEstimate, EgoVelocityError> {
    let usable: Vec<(Vector3<f64>, f64)> = scan
        .points
        .iter()
        .filter(|p| p.position.norm() > MIN_RANGE)
        .map(|p| (p.position / p.position.norm(), p.doppler))
        .collect();
    let total = usable.len();
    if total < 3 {
        return Err(EgoVelocityError::InsufficientPoints { got: total });
    }

    let a = DMatrix::<f64>::from_fn(total, 3, |i, j| usable[i].0[j]);

    let svd = a.clone().svd(false, false);
    let sigma_min = svd.singular_values.min();
    let sigma_max = svd.singular_values.max();
    if sigma_min < 1e-6 * sigma_max.max(1.0) {
        return Err(EgoVelocityError::DegenerateGeometry { sigma_min });
    }

    // unweighted LS start, then IRLS with the robust kernel
    let mut v = solve_weighted(&usable, None);
    if !matches!(kernel, RobustKernel::None) {
        for _ in 0..IRLS_ITERS {
            let weights: Vec<f64> = usable
                .iter()
                .map(|(u, d)| {
                    let r = (v.dot(u) + d) / sigma_d;
                    kernel.weight(r * r)
                })
                .collect();
            v = solve_weighted(&usable, Some(&weights));
        }
    }

    // inlier set and its unweighted information
    let mut info = Matrix3::<f64>::zeros();
    let mut inliers = 0;
    for (u, d) in &usable {
        if (v.dot(u) + d).abs() < 3.0 * sigma_d {
            info += u * u.transpose();
            inliers += 1;
        }
    }
    if inliers < 3 {
        return Err(EgoVelocityError::InsufficientPoints { got: inliers });
    }
    let covariance = match info.try_inverse() {
        Some(inv) => sigma_d * sigma_d * inv,
        None => {
            return Err(EgoVelocityError::DegenerateGeometry {
                sigma_min: info.symmetric_eigenvalues().min().max(0.0).sqrt(),
            })
        }
    };
    Ok(EgoVelocityEstimate { velocity: v, covariance, inliers, total })
}

fn solve_weighted(rows: &[(Vector3<f64>, f64)], weights: Option<&[f64]>) -> Vector3<f64> {
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = Vector3::<f64>::zeros();
    for (i, (u, d)) in rows.iter().enumerate() {
        let w = weights.map_or(1.0, |ws| ws[i]);
        ata += w * u * u.transpose();
        atb += w * (-d) * u;
    }
    // regularized fallback keeps IRLS alive if the weighted system thins out
    ata.try_inverse()
        .unwrap_or_else(|| (ata + Matrix3::identity() * 1e-9).try_inverse().unwrap())
        * atb
}

/// Lever-arm-compensated body velocity and its covariance.
///
/// `v_B = R_RB v_R - (omega - b_w) x p_RB`, `Sigma_B = R_RB Sigma (R_RB)^T`.
pub fn body_velocity(
    est: &EgoVelocityEstimate,
    extrinsics: &RadarExtrinsics,
    omega: &Vector3<f64>,
    gyro_bias: &Vector3<f64>,
) -> (Vector3<f64>, Matrix3<f64>) {
    let v_b = extrinsics.rotation * est.velocity - (omega - gyro_bias).cross(&extrinsics.lever_arm);
    let r = extrinsics.rotation.matrix();
    (v_b, r * est.covariance * r.transpose())
}

/// Residual of the body-velocity measurement against a state:
/// `r_D = v_B_meas(b_w) - R_i^T v_i`.
pub fn body_velocity_residual(
    est: &EgoVelocityEstimate,
    extrinsics: &RadarExtrinsics,
    omega: &Vector3<f64>,
    x: &NavState,
) -> (Vector3<f64>, Matrix3<f64>) {
    let (v_b, cov) = body_velocity(est, extrinsics, omega, &x.gyro_bias());
    (v_b - x.pose.rotation.transpose() * x.velocity, cov)
}

/// Graph factor on `(P_i, V_i, B_i)` carrying one Doppler measurement.
///
/// The gyro-bias coupling through the lever arm makes `b_w` observable from
/// linear velocity alone.
pub struct DopplerFactor {
    keys: [Key; 3],
    measured: Vector3<f64>,
    omega: Vector3<f64>,
    extrinsics: RadarExtrinsics,
}

impl DopplerFactor {
    pub fn new(index: u32, est: &EgoVelocityEstimate, omega: Vector3<f64>, extrinsics: RadarExtrinsics) -> Self {
        DopplerFactor {
            keys: [Key::pose(index), Key::velocity(index), Key::bias(index)],
            measured: est.velocity,
            omega,
            extrinsics,
        }
    }

    /// Body-frame noise for the factor wrapper.
    pub fn noise(est: &EgoVelocityEstimate, extrinsics: &RadarExtrinsics) -> DMatrix<f64> {
        let r = extrinsics.rotation.matrix();
        let cov = r * est.covariance * r.transpose();
        DMatrix::from_fn(3, 3, |i, j| cov[(i, j)])
    }
}

impl Residual for DopplerFactor {
    fn type_name(&self) -> &'static str {
        "Doppler"
    }
    fn keys(&self) -> &[Key] {
        &self.keys
    }
    fn dim(&self) -> usize {
        3
    }
    fn eval(&self, vals: &[&Value]) -> DVector<f64> {
        let pose = vals[0].as_pose();
        let vel = vals[1].as_vec3();
        let bias = vals[2].as_vec6();
        let bw = bias.fixed_rows::<3>(3).into_owned();
        let v_b = self.extrinsics.rotation * self.measured
            - (self.omega - bw).cross(&self.extrinsics.lever_arm);
        let r = v_b - pose.rotation.transpose() * *vel;
        DVector::from_column_slice(r.as_slice())
    }
    fn jacobians(&self, vals: &[&Value]) -> Option<Vec<DMatrix<f64>>> {
        let pose = vals[0].as_pose();
        let vel = vals[1].as_vec3();
        let rt_v = pose.rotation.transpose() * *vel;

        let mut j_pose = DMatrix::<f64>::zeros(3, 6);
        j_pose.view_mut((0, 0), (3, 3)).copy_from(&(-hat(&rt_v)));

        let j_vel = DMatrix::from_fn(3, 3, |i, j| -pose.rotation.matrix().transpose()[(i, j)]);

        let mut j_bias = DMatrix::<f64>::zeros(3, 6);
        j_bias
            .view_mut((0, 3), (3, 3))
            .copy_from(&(-hat(&self.extrinsics.lever_arm)));

        Some(vec![j_pose, j_vel, j_bias])
    }
}
