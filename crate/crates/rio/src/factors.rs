//! Shared graph factors: pose/vector priors, between factors, zero-velocity
//! updates, and ground-plane constraints.

use nalgebra::{DMatrix, DVector, Vector3, Vector6};

use crate::graph::{Factor, GraphError, Key, Residual, Value};
use crate::lie::{se3_right_jacobian_inv, so3_right_jacobian_inv, Pose, Rotation};

fn dmat_from<const R: usize, const C: usize>(m: &nalgebra::SMatrix<f64, R, C>) -> DMatrix<f64> {
    DMatrix::from_fn(R, C, |i, j| m[(i, j)])
}

/// Unary prior on a pose: `r = Log(anchor^-1 T)`.
pub struct PosePrior {
    keys: [Key; 1],
    anchor_inv: Pose,
}

impl PosePrior {
    pub fn new(key: Key, anchor: Pose) -> Self {
        PosePrior { keys: [key], anchor_inv: anchor.inverse() }
    }

    /// Convenience: wraps into a factor with the given 6x6 covariance.
    pub fn factor(key: Key, anchor: Pose, covariance: DMatrix<f64>) -> Result<Factor, GraphError> {
        Factor::gaussian(Self::new(key, anchor), covariance)
    }
}

impl Residual for PosePrior {
    fn type_name(&self) -> &'static str {
        "PosePrior"
    }
    fn keys(&self) -> &[Key] {
        &self.keys
    }
    fn dim(&self) -> usize {
        6
    }
    fn eval(&self, vals: &[&Value]) -> DVector<f64> {
        let t = vals[0].as_pose();
        let r = self.anchor_inv.compose(t).log();
        DVector::from_column_slice(r.as_slice())
    }
    fn jacobians(&self, vals: &[&Value]) -> Option<Vec<DMatrix<f64>>> {
        let t = vals[0].as_pose();
        let r = self.anchor_inv.compose(t).log();
        Some(vec![dmat_from(&se3_right_jacobian_inv(&r))])
    }
}

/// Unary prior on a 3-vector variable.
pub struct Vec3Prior {
    keys: [Key; 1],
    anchor: Vector3<f64>,
}

impl Vec3Prior {
    pub fn new(key: Key, anchor: Vector3<f64>) -> Self {
        Vec3Prior { keys: [key], anchor }
    }

    pub fn factor(key: Key, anchor: Vector3<f64>, covariance: DMatrix<f64>) -> Result<Factor, GraphError> {
        Factor::gaussian(Self::new(key, anchor), covariance)
    }
}

impl Residual for Vec3Prior {
    fn type_name(&self) -> &'static str {
        "Vec3Prior"
    }
    fn keys(&self) -> &[Key] {
        &self.keys
    }
    fn dim(&self) -> usize {
        3
    }
    fn eval(&self, vals: &[&Value]) -> DVector<f64> {
        DVector::from_column_slice((vals[0].as_vec3() - self.anchor).as_slice())
    }
    fn jacobians(&self, _vals: &[&Value]) -> Option<Vec<DMatrix<f64>>> {
        Some(vec![DMatrix::identity(3, 3)])
    }
}

/// Unary prior on a 6-vector variable (bias).
pub struct Vec6Prior {
    keys: [Key; 1],
    anchor: Vector6<f64>,
}

impl Vec6Prior {
    pub fn new(key: Key, anchor: Vector6<f64>) -> Self {
        Vec6Prior { keys: [key], anchor }
    }

    pub fn factor(key: Key, anchor: Vector6<f64>, covariance: DMatrix<f64>) -> Result<Factor, GraphError> {
        Factor::gaussian(Self::new(key, anchor), covariance)
    }
}

impl Residual for Vec6Prior {
    fn type_name(&self) -> &'static str {
        "Vec6Prior"
    }
    fn keys(&self) -> &[Key] {
        &self.keys
    }
    fn dim(&self) -> usize {
        6
    }
    fn eval(&self, vals: &[&Value]) -> DVector<f64> {
        DVector::from_column_slice((vals[0].as_vec6() - self.anchor).as_slice())
    }
    fn jacobians(&self, _vals: &[&Value]) -> Option<Vec<DMatrix<f64>>> {
        Some(vec![DMatrix::identity(6, 6)])
    }
}

/// Relative pose constraint: `r = Log(rel^-1 T_i^-1 T_j)`.
pub struct BetweenPose {
    keys: [Key; 2],
    rel_inv: Pose,
}

impl BetweenPose {
    pub fn new(key_i: Key, key_j: Key, rel: Pose) -> Self {
        BetweenPose { keys: [key_i, key_j], rel_inv: rel.inverse() }
    }

    pub fn factor(key_i: Key, key_j: Key, rel: Pose, covariance: DMatrix<f64>) -> Result<Factor, GraphError> {
        Factor::gaussian(Self::new(key_i, key_j, rel), covariance)
    }
}

impl Residual for BetweenPose {
    fn type_name(&self) -> &'static str {
        "BetweenPose"
    }
    fn keys(&self) -> &[Key] {
        &self.keys
    }
    fn dim(&self) -> usize {
        6
    }
    fn eval(&self, vals: &[&Value]) -> DVector<f64> {
        let ti = vals[0].as_pose();
        let tj = vals[1].as_pose();
        let r = self.rel_inv.compose(&ti.inverse()).compose(tj).log();
        DVector::from_column_slice(r.as_slice())
    }
    fn jacobians(&self, vals: &[&Value]) -> Option<Vec<DMatrix<f64>>> {
        let ti = vals[0].as_pose();
        let tj = vals[1].as_pose();
        let rel_ji = tj.inverse().compose(ti);
        let r = self.rel_inv.compose(&ti.inverse()).compose(tj).log();
        let jr_inv = se3_right_jacobian_inv(&r);
        let ji = -jr_inv * rel_ji.adjoint();
        Some(vec![dmat_from(&ji), dmat_from(&jr_inv)])
    }
}

/// Zero-velocity and zero-motion factor pair for a stationary interval.
///
/// The velocity prior pins `v_i = 0`; the between factor pins
/// `T_{i-1}^-1 T_i = I`. Both use the tight sigmas from [`ZuptConfig`].
pub fn make_zupt_factors(
    key_pose_prev: Key,
    key_pose_curr: Key,
    key_vel_curr: Key,
    cfg: &ZuptConfig,
) -> Result<(Factor, Factor), GraphError> {
    let vel = Vec3Prior::factor(
        key_vel_curr,
        Vector3::zeros(),
        DMatrix::identity(3, 3) * cfg.sigma_v * cfg.sigma_v,
    )?;
    let mut cov = DMatrix::<f64>::zeros(6, 6);
    for i in 0..3 {
        cov[(i, i)] = cfg.sigma_theta * cfg.sigma_theta;
        cov[(i + 3, i + 3)] = cfg.sigma_p * cfg.sigma_p;
    }
    let motion = BetweenPose::factor(key_pose_prev, key_pose_curr, Pose::identity(), cov)?;
    Ok((vel, motion))
}

/// Stationary detector configuration.
#[derive(Debug, Clone, Copy)]
pub struct ZuptConfig {
    /// Speed threshold [m/s].
    pub tau_v: f64,
    /// Dwell time the speed must stay below the threshold [s].
    pub tau_t: f64,
    pub sigma_v: f64,
    pub sigma_theta: f64,
    pub sigma_p: f64,
}

impl Default for ZuptConfig {
    fn default() -> Self {
        ZuptConfig { tau_v: 0.05, tau_t: 0.5, sigma_v: 1e-4, sigma_theta: 1e-4, sigma_p: 1e-4 }
    }
}

/// Flags stationarity when the radar speed stays below `tau_v` for `tau_t`.
/// The flag clears on the first sample at or above the threshold.
#[derive(Debug, Clone)]
pub struct ZuptDetector {
    cfg: ZuptConfig,
    history: std::collections::VecDeque<(f64, f64)>,
}

impl ZuptDetector {
    pub fn new(cfg: ZuptConfig) -> Self {
        ZuptDetector { cfg, history: std::collections::VecDeque::new() }
    }

    pub fn config(&self) -> &ZuptConfig {
        &self.cfg
    }

    pub fn push(&mut self, t: f64, speed: f64) {
        self.history.push_back((t, speed));
        let horizon = t - 2.0 * self.cfg.tau_t.max(1.0);
        while self.history.front().map_or(false, |&(ft, _)| ft < horizon) {
            self.history.pop_front();
        }
    }

    /// Pure function of the stored window: true iff the history spans at
    /// least `tau_t` and every sample in `[t_now - tau_t, t_now]` is below
    /// `tau_v`. Insufficient history is conservatively `false`.
    pub fn is_stationary(&self, t_now: f64) -> bool {
        let Some(&(first_t, _)) = self.history.front() else {
            return false;
        };
        if t_now - first_t < self.cfg.tau_t - 1e-12 {
            return false;
        }
        self.history
            .iter()
            .filter(|&&(t, _)| t >= t_now - self.cfg.tau_t - 1e-12 && t <= t_now + 1e-12)
            .all(|&(_, s)| s < self.cfg.tau_v)
    }
}

/// Prior knowledge of the ground plane, used to constrain the degrees of
/// freedom radar-inertial fusion cannot observe.
#[derive(Debug, Clone)]
pub struct GroundPlaneModel {
    pub normal: Vector3<f64>,
    /// Plane offset along the normal [m].
    pub d: f64,
    /// Rotation aligning the normal with the world z-axis.
    pub r_align: Rotation,
    pub sigma_rp: f64,
    pub sigma_z: f64,
    pub sigma_vz: f64,
}

impl GroundPlaneModel {
    pub fn new(normal: Vector3<f64>, d: f64, sigma_rp: f64, sigma_z: f64, sigma_vz: f64) -> Self {
        let n = normal.normalize();
        let r_align = Rotation::between_vectors(&n, &Vector3::z());
        GroundPlaneModel { normal: n, d, r_align, sigma_rp, sigma_z, sigma_vz }
    }
}

/// Roll/pitch constraint relative to the ground normal:
/// `r = [Log(R_align^T R_i)]_{x,y}`.
pub struct GroundAttitude {
    keys: [Key; 1],
    r_align_t: Rotation,
}

impl Residual for GroundAttitude {
    fn type_name(&self) -> &'static str {
        "GroundAttitude"
    }
    fn keys(&self) -> &[Key] {
        &self.keys
    }
    fn dim(&self) -> usize {
        2
    }
    fn eval(&self, vals: &[&Value]) -> DVector<f64> {
        let t = vals[0].as_pose();
        let log = (self.r_align_t * t.rotation).log();
        DVector::from_column_slice(&[log.x, log.y])
    }
    fn jacobians(&self, vals: &[&Value]) -> Option<Vec<DMatrix<f64>>> {
        let t = vals[0].as_pose();
        let log = (self.r_align_t * t.rotation).log();
        let jr_inv = so3_right_jacobian_inv(&log);
        let mut j = DMatrix::<f64>::zeros(2, 6);
        for c in 0..3 {
            j[(0, c)] = jr_inv[(0, c)];
            j[(1, c)] = jr_inv[(1, c)];
        }
        Some(vec![j])
    }
}

/// Height constraint: `r = (R_align^T p_i)_z - d`.
pub struct GroundHeight {
    keys: [Key; 1],
    r_align_t: Rotation,
    d: f64,
}

impl Residual for GroundHeight {
    fn type_name(&self) -> &'static str {
        "GroundHeight"
    }
    fn keys(&self) -> &[Key] {
        &self.keys
    }
    fn dim(&self) -> usize {
        1
    }
    fn eval(&self, vals: &[&Value]) -> DVector<f64> {
        let t = vals[0].as_pose();
        let z = (self.r_align_t * t.translation).z - self.d;
        DVector::from_column_slice(&[z])
    }
    fn jacobians(&self, vals: &[&Value]) -> Option<Vec<DMatrix<f64>>> {
        let t = vals[0].as_pose();
        // translation perturbation is body-frame: p <- p + R rho
        let row = self.r_align_t.matrix().row(2) * t.rotation.matrix();
        let mut j = DMatrix::<f64>::zeros(1, 6);
        for c in 0..3 {
            j[(0, 3 + c)] = row[c];
        }
        Some(vec![j])
    }
}

/// Velocity-normal-to-ground constraint: `r = (R_align^T v_i)_z`.
pub struct GroundVelocity {
    keys: [Key; 1],
    r_align_t: Rotation,
}

impl Residual for GroundVelocity {
    fn type_name(&self) -> &'static str {
        "GroundVelocity"
    }
    fn keys(&self) -> &[Key] {
        &self.keys
    }
    fn dim(&self) -> usize {
        1
    }
    fn eval(&self, vals: &[&Value]) -> DVector<f64> {
        let v = vals[0].as_vec3();
        DVector::from_column_slice(&[(self.r_align_t * *v).z])
    }
    fn jacobians(&self, _vals: &[&Value]) -> Option<Vec<DMatrix<f64>>> {
        let mut j = DMatrix::<f64>::zeros(1, 3);
        let row = self.r_align_t.matrix().row(2);
        for c in 0..3 {
            j[(0, c)] = row[c];
        }
        Some(vec![j])
    }
}

/// Builds the attitude, height, and normal-velocity factors for one state.
pub fn make_ground_factors(
    key_pose: Key,
    key_vel: Key,
    plane: &GroundPlaneModel,
) -> Result<[Factor; 3], GraphError> {
    let r_align_t = plane.r_align.transpose();
    let att = Factor::gaussian(
        GroundAttitude { keys: [key_pose], r_align_t },
        DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&[
            plane.sigma_rp * plane.sigma_rp,
            plane.sigma_rp * plane.sigma_rp,
        ])),
    )?;
    let height = Factor::gaussian(
        GroundHeight { keys: [key_pose], r_align_t, d: plane.d },
        DMatrix::from_element(1, 1, plane.sigma_z * plane.sigma_z),
    )?;
    let vel = Factor::gaussian(
        GroundVelocity { keys: [key_vel], r_align_t },
        DMatrix::from_element(1, 1, plane.sigma_vz * plane.sigma_vz),
    )?;
    Ok([att, height, vel])
}
