//! IMU preintegration on the manifold: bias-referenced delta accumulation,
//! first-order bias correction, 15x15 covariance propagation, and the
//! 15-dim two-state graph residual.
//!
//! The error state is ordered `[dtheta, dv, dp, dba, dbw]` with the rotation
//! error defined right-multiplicatively, `DeltaR_true = DeltaR * Exp(dtheta)`.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, SVector, Vector3, Vector6};

use crate::graph::{Key, Residual, Value};
use crate::lie::{hat, so3_left_jacobian_inv, so3_right_jacobian, so3_right_jacobian_inv, Rotation};
use crate::state::NavState;

pub type Covariance15 = SMatrix<f64, 15, 15>;

/// One gyro/accel sample. `accel` is specific force in the body frame.
#[derive(Debug, Clone, Copy)]
pub struct ImuSample {
    pub t: f64,
    pub gyro: Vector3<f64>,
    pub accel: Vector3<f64>,
}

/// Continuous-time noise densities, SI units.
#[derive(Debug, Clone, Copy)]
pub struct ImuNoiseModel {
    /// Gyro white noise PSD [ (rad/s)^2 / Hz ].
    pub gyro_noise: Matrix3<f64>,
    /// Accel white noise PSD [ (m/s^2)^2 / Hz ].
    pub accel_noise: Matrix3<f64>,
    /// Accel bias random-walk PSD [ (m/s^2)^2 / s ].
    pub accel_walk: Matrix3<f64>,
    /// Gyro bias random-walk PSD [ (rad/s)^2 / s ].
    pub gyro_walk: Matrix3<f64>,
}

impl ImuNoiseModel {
    /// Isotropic model from scalar densities (sigma units: x/sqrt(Hz) for
    /// white noise, x/sqrt(s) for walks).
    pub fn from_sigmas(sigma_gyro: f64, sigma_accel: f64, accel_walk: f64, gyro_walk: f64) -> Self {
        ImuNoiseModel {
            gyro_noise: Matrix3::identity() * sigma_gyro * sigma_gyro,
            accel_noise: Matrix3::identity() * sigma_accel * sigma_accel,
            accel_walk: Matrix3::identity() * accel_walk * accel_walk,
            gyro_walk: Matrix3::identity() * gyro_walk * gyro_walk,
        }
    }
}

impl Default for ImuNoiseModel {
    fn default() -> Self {
        Self::from_sigmas(1e-3, 1e-2, 1e-4, 1e-5)
    }
}

pub const STANDARD_GRAVITY: f64 = 9.80665;

/// World gravity vector. Convention: z-up world, `g = (0, 0, -9.80665)`, so
/// a resting accelerometer measures `R^T (0, 0, +9.80665)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GravityModel {
    pub g: Vector3<f64>,
}

impl GravityModel {
    pub fn new(g: Vector3<f64>) -> Self {
        let norm = g.norm();
        assert!(
            (norm - STANDARD_GRAVITY).abs() < 0.5,
            "gravity magnitude {norm} outside plausible range"
        );
        GravityModel { g }
    }
}

impl Default for GravityModel {
    fn default() -> Self {
        GravityModel { g: Vector3::new(0.0, 0.0, -STANDARD_GRAVITY) }
    }
}

/// Bias-referenced preintegrated motion between two keyframes.
#[derive(Debug, Clone)]
pub struct PreintegratedDelta {
    /// Reference bias `[accel; gyro]` the deltas were integrated at.
    pub ref_bias: Vector6<f64>,
    pub dt: f64,
    pub delta_rot: Rotation,
    pub delta_vel: Vector3<f64>,
    pub delta_pos: Vector3<f64>,
    /// d(DeltaR)/d(gyro bias)
    pub j_rot_bw: Matrix3<f64>,
    pub j_vel_ba: Matrix3<f64>,
    pub j_vel_bw: Matrix3<f64>,
    pub j_pos_ba: Matrix3<f64>,
    pub j_pos_bw: Matrix3<f64>,
    /// Covariance of `[dtheta, dv, dp, dba, dbw]`.
    pub covariance: Covariance15,
}

impl PreintegratedDelta {
    /// Fresh accumulator referenced at `bias`, with zero initial covariance.
    pub fn new(bias: Vector6<f64>) -> Self {
        PreintegratedDelta {
            ref_bias: bias,
            dt: 0.0,
            delta_rot: Rotation::identity(),
            delta_vel: Vector3::zeros(),
            delta_pos: Vector3::zeros(),
            j_rot_bw: Matrix3::zeros(),
            j_vel_ba: Matrix3::zeros(),
            j_vel_bw: Matrix3::zeros(),
            j_pos_ba: Matrix3::zeros(),
            j_pos_bw: Matrix3::zeros(),
            covariance: Covariance15::zeros(),
        }
    }

    pub fn ref_accel_bias(&self) -> Vector3<f64> {
        self.ref_bias.fixed_rows::<3>(0).into_owned()
    }

    pub fn ref_gyro_bias(&self) -> Vector3<f64> {
        self.ref_bias.fixed_rows::<3>(3).into_owned()
    }

    /// Integrates one sample held constant over `dt` (forward Euler, matching
    /// the discrete sums the residual assumes).
    pub fn integrate(&mut self, sample: &ImuSample, dt: f64, noise: &ImuNoiseModel) {
        assert!(dt > 0.0, "non-positive integration interval");
        let w = sample.gyro - self.ref_gyro_bias();
        let a = sample.accel - self.ref_accel_bias();
        let u = w * dt;
        let r_step = Rotation::exp(&u);
        let jr = so3_right_jacobian(&u);
        let a_k = *self.delta_rot.matrix(); // DeltaR_{i,k} before this step
        let a_hat = hat(&a);

        // state transition for [dtheta, dv, dp, dba, dbw]
        let mut phi = Covariance15::identity();
        phi.fixed_view_mut::<3, 3>(0, 0).copy_from(&r_step.matrix().transpose());
        phi.fixed_view_mut::<3, 3>(0, 12).copy_from(&(-jr * dt));
        phi.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-a_k * a_hat * dt));
        phi.fixed_view_mut::<3, 3>(3, 9).copy_from(&(-a_k * dt));
        phi.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-0.5 * a_k * a_hat * dt * dt));
        phi.fixed_view_mut::<3, 3>(6, 3).copy_from(&(Matrix3::identity() * dt));
        phi.fixed_view_mut::<3, 3>(6, 9).copy_from(&(-0.5 * a_k * dt * dt));

        // additive noise: white measurement noise enters the kinematic
        // blocks, random walks drive the bias blocks
        let gyro_d = noise.gyro_noise / dt; // discrete sample covariance
        let accel_d = noise.accel_noise / dt;
        let g_theta = jr * dt;
        let g_vel = a_k * dt;
        let g_pos = 0.5 * a_k * dt * dt;
        let mut q = Covariance15::zeros();
        q.fixed_view_mut::<3, 3>(0, 0).copy_from(&(g_theta * gyro_d * g_theta.transpose()));
        q.fixed_view_mut::<3, 3>(3, 3).copy_from(&(g_vel * accel_d * g_vel.transpose()));
        q.fixed_view_mut::<3, 3>(6, 6).copy_from(&(g_pos * accel_d * g_pos.transpose()));
        let vp = g_vel * accel_d * g_pos.transpose();
        q.fixed_view_mut::<3, 3>(3, 6).copy_from(&vp);
        q.fixed_view_mut::<3, 3>(6, 3).copy_from(&vp.transpose());
        q.fixed_view_mut::<3, 3>(9, 9).copy_from(&(noise.accel_walk * dt));
        q.fixed_view_mut::<3, 3>(12, 12).copy_from(&(noise.gyro_walk * dt));

        self.covariance = phi * self.covariance * phi.transpose() + q;

        // bias Jacobians share the transition structure
        self.j_pos_ba += self.j_vel_ba * dt - 0.5 * a_k * dt * dt;
        self.j_pos_bw += self.j_vel_bw * dt - 0.5 * a_k * a_hat * self.j_rot_bw * dt * dt;
        self.j_vel_ba -= a_k * dt;
        self.j_vel_bw -= a_k * a_hat * self.j_rot_bw * dt;
        self.j_rot_bw = r_step.matrix().transpose() * self.j_rot_bw - jr * dt;

        // delta updates (position first: it uses the pre-step velocity)
        self.delta_pos += self.delta_vel * dt + 0.5 * (a_k * a) * dt * dt;
        self.delta_vel += (a_k * a) * dt;
        self.delta_rot = self.delta_rot * r_step;
        self.dt += dt;
    }

    /// First-order bias-corrected deltas at bias `b`.
    pub fn corrected(&self, b: &Vector6<f64>) -> (Rotation, Vector3<f64>, Vector3<f64>) {
        let db = b - self.ref_bias;
        let dba = db.fixed_rows::<3>(0).into_owned();
        let dbw = db.fixed_rows::<3>(3).into_owned();
        let rot = self.delta_rot * Rotation::exp(&(self.j_rot_bw * dbw));
        let vel = self.delta_vel + self.j_vel_ba * dba + self.j_vel_bw * dbw;
        let pos = self.delta_pos + self.j_pos_ba * dba + self.j_pos_bw * dbw;
        (rot, vel, pos)
    }

    /// The 15-dim residual `[r_dR, r_dv, r_dp, r_db]` between two states.
    pub fn residual(&self, xi: &NavState, xj: &NavState, gravity: &GravityModel) -> SVector<f64, 15> {
        let (d_rot, d_vel, d_pos) = self.corrected(&xi.bias);
        let ri_t = xi.pose.rotation.transpose();
        let dt = self.dt;
        let g = gravity.g;

        let r_rot = (d_rot.transpose() * ri_t * xj.pose.rotation).log();
        let r_vel = ri_t * (xj.velocity - xi.velocity - g * dt) - d_vel;
        let r_pos = ri_t
            * (xj.pose.translation - xi.pose.translation - xi.velocity * dt - 0.5 * g * dt * dt)
            - d_pos;
        let r_bias = xj.bias - xi.bias;

        let mut r = SVector::<f64, 15>::zeros();
        r.fixed_rows_mut::<3>(0).copy_from(&r_rot);
        r.fixed_rows_mut::<3>(3).copy_from(&r_vel);
        r.fixed_rows_mut::<3>(6).copy_from(&r_pos);
        r.fixed_rows_mut::<6>(9).copy_from(&r_bias);
        r
    }

    /// Propagates a state through the stored deltas (biases carried over).
    pub fn propagate(&self, xi: &NavState, gravity: &GravityModel) -> NavState {
        let (d_rot, d_vel, d_pos) = self.corrected(&xi.bias);
        let ri = xi.pose.rotation;
        let dt = self.dt;
        let g = gravity.g;
        NavState {
            pose: crate::lie::Pose::new(
                ri * d_rot,
                xi.pose.translation + xi.velocity * dt + 0.5 * g * dt * dt + ri * d_pos,
            ),
            velocity: xi.velocity + g * dt + ri * d_vel,
            bias: xi.bias,
        }
    }
}

/// Graph factor connecting `(P_i, V_i, B_i)` to `(P_j, V_j, B_j)` through a
/// preintegrated delta; residual dimension 15, weighted by the propagated
/// covariance plus the bias random-walk block.
pub struct ImuFactor {
    keys: [Key; 6],
    pub delta: PreintegratedDelta,
    gravity: GravityModel,
}

impl ImuFactor {
    pub fn new(index_i: u32, index_j: u32, delta: PreintegratedDelta, gravity: GravityModel) -> Self {
        ImuFactor {
            keys: [
                Key::pose(index_i),
                Key::velocity(index_i),
                Key::bias(index_i),
                Key::pose(index_j),
                Key::velocity(index_j),
                Key::bias(index_j),
            ],
            delta,
            gravity,
        }
    }

    /// Noise for the graph: the propagated 15x15 covariance.
    pub fn noise(&self) -> DMatrix<f64> {
        let c = &self.delta.covariance;
        DMatrix::from_fn(15, 15, |i, j| c[(i, j)])
    }

    fn states(vals: &[&Value]) -> (NavState, NavState) {
        let xi = NavState {
            pose: *vals[0].as_pose(),
            velocity: *vals[1].as_vec3(),
            bias: *vals[2].as_vec6(),
        };
        let xj = NavState {
            pose: *vals[3].as_pose(),
            velocity: *vals[4].as_vec3(),
            bias: *vals[5].as_vec6(),
        };
        (xi, xj)
    }
}

impl Residual for ImuFactor {
    fn type_name(&self) -> &'static str {
        "Imu"
    }

    fn keys(&self) -> &[Key] {
        &self.keys
    }

    fn dim(&self) -> usize {
        15
    }

    fn eval(&self, vals: &[&Value]) -> DVector<f64> {
        let (xi, xj) = Self::states(vals);
        let r = self.delta.residual(&xi, &xj, &self.gravity);
        DVector::from_column_slice(r.as_slice())
    }

    fn jacobians(&self, vals: &[&Value]) -> Option<Vec<DMatrix<f64>>> {
        let (xi, xj) = Self::states(vals);
        let g = self.gravity.g;
        let dt = self.delta.dt;
        let ri = xi.pose.rotation;
        let ri_t = ri.transpose();
        let rj = xj.pose.rotation;
        let db = xi.bias - self.delta.ref_bias;
        let dbw = db.fixed_rows::<3>(3).into_owned();

        let (d_rot_corr, _, _) = self.delta.corrected(&xi.bias);
        let r_rot = (d_rot_corr.transpose() * ri_t * rj).log();
        let jr_inv = so3_right_jacobian_inv(&r_rot);
        let rj_t_ri = (rj.transpose() * ri).matrix().to_owned();

        let dv = xj.velocity - xi.velocity - g * dt;
        let dp = xj.pose.translation - xi.pose.translation - xi.velocity * dt - 0.5 * g * dt * dt;

        // J wrt pose_i = [d/dphi_i | d/drho_i], 15x6
        let mut j_pi = DMatrix::<f64>::zeros(15, 6);
        j_pi.view_mut((0, 0), (3, 3)).copy_from(&(-jr_inv * rj_t_ri));
        j_pi.view_mut((3, 0), (3, 3)).copy_from(&hat(&(ri_t * dv)));
        j_pi.view_mut((6, 0), (3, 3)).copy_from(&hat(&(ri_t * dp)));
        j_pi.view_mut((6, 3), (3, 3)).copy_from(&(-Matrix3::identity()));

        let mut j_vi = DMatrix::<f64>::zeros(15, 3);
        j_vi.view_mut((3, 0), (3, 3)).copy_from(&(-ri_t.matrix().to_owned()));
        j_vi.view_mut((6, 0), (3, 3)).copy_from(&(-(ri_t.matrix() * dt)));

        // bias_i enters the corrected deltas and the bias-difference block
        let mut j_bi = DMatrix::<f64>::zeros(15, 6);
        let jl_inv = so3_left_jacobian_inv(&r_rot);
        let d_rot_dbw =
            -jl_inv * so3_right_jacobian(&(self.delta.j_rot_bw * dbw)) * self.delta.j_rot_bw;
        j_bi.view_mut((0, 3), (3, 3)).copy_from(&d_rot_dbw);
        j_bi.view_mut((3, 0), (3, 3)).copy_from(&(-self.delta.j_vel_ba));
        j_bi.view_mut((3, 3), (3, 3)).copy_from(&(-self.delta.j_vel_bw));
        j_bi.view_mut((6, 0), (3, 3)).copy_from(&(-self.delta.j_pos_ba));
        j_bi.view_mut((6, 3), (3, 3)).copy_from(&(-self.delta.j_pos_bw));
        j_bi.view_mut((9, 0), (6, 6)).copy_from(&(-DMatrix::<f64>::identity(6, 6)));

        let mut j_pj = DMatrix::<f64>::zeros(15, 6);
        j_pj.view_mut((0, 0), (3, 3)).copy_from(&jr_inv);
        j_pj.view_mut((6, 3), (3, 3)).copy_from(&(ri_t * rj).matrix());

        let mut j_vj = DMatrix::<f64>::zeros(15, 3);
        j_vj.view_mut((3, 0), (3, 3)).copy_from(ri_t.matrix());

        let mut j_bj = DMatrix::<f64>::zeros(15, 6);
        j_bj.view_mut((9, 0), (6, 6)).copy_from(&DMatrix::<f64>::identity(6, 6));

        Some(vec![j_pi, j_vi, j_bi, j_pj, j_vj, j_bj])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::pack_bias;

    fn vec3(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    /// Constant-input sample stream held for `n` steps of `dt`.
    fn integrate_constant(
        gyro: Vector3<f64>,
        accel: Vector3<f64>,
        bias: Vector6<f64>,
        n: usize,
        dt: f64,
        noise: &ImuNoiseModel,
    ) -> PreintegratedDelta {
        let mut d = PreintegratedDelta::new(bias);
        for k in 0..n {
            let s = ImuSample { t: k as f64 * dt, gyro, accel };
            d.integrate(&s, dt, noise);
        }
        d
    }

    #[test]
    fn zero_input_leaves_deltas_identity() {
        let noise = ImuNoiseModel::default();
        let d = integrate_constant(Vector3::zeros(), Vector3::zeros(), Vector6::zeros(), 100, 0.005, &noise);
        assert!(d.delta_rot.angle() < 1e-15);
        assert!(d.delta_vel.norm() < 1e-15);
        assert!(d.delta_pos.norm() < 1e-15);
        // covariance grows by accumulated Q only and stays PSD
        let eig = d.covariance.symmetric_eigenvalues();
        assert!(eig.min() > -1e-18);
        assert!(d.covariance.trace() > 0.0);
        assert!((d.dt - 0.5).abs() < 1e-12);
    }

    #[test]
    fn constant_rate_rotation_matches_closed_form() {
        let noise = ImuNoiseModel::default();
        let w = vec3(0.0, 0.0, 0.1);
        let d = integrate_constant(w, Vector3::zeros(), Vector6::zeros(), 1000, 1e-3, &noise);
        let expect = Rotation::exp(&w);
        assert!(
            (d.delta_rot.matrix() - expect.matrix()).norm() < 1e-6,
            "deviation {}",
            (d.delta_rot.matrix() - expect.matrix()).norm()
        );
    }

    #[test]
    fn constant_accel_double_integral() {
        let noise = ImuNoiseModel::default();
        let a = vec3(1.0, 0.0, 0.0);
        let d = integrate_constant(Vector3::zeros(), a, Vector6::zeros(), 2000, 1e-3, &noise);
        assert!((d.delta_vel - vec3(2.0, 0.0, 0.0)).norm() < 1e-6);
        assert!((d.delta_pos - vec3(2.0, 0.0, 0.0)).norm() < 1e-6);
    }

    #[test]
    fn corrected_at_reference_bias_is_exact() {
        let noise = ImuNoiseModel::default();
        let bias = pack_bias(&vec3(0.05, -0.02, 0.01), &vec3(0.002, 0.001, -0.003));
        let d = integrate_constant(vec3(0.2, -0.1, 0.3), vec3(0.5, 9.8, -0.2), bias, 200, 0.005, &noise);
        let (r, v, p) = d.corrected(&bias);
        assert!((r.matrix() - d.delta_rot.matrix()).norm() < 1e-15);
        assert_eq!(v, d.delta_vel);
        assert_eq!(p, d.delta_pos);
    }

    #[test]
    fn bias_correction_matches_reintegration() {
        // first-order Taylor vs full re-integration at a perturbed bias
        let noise = ImuNoiseModel::default();
        let gyro = vec3(0.3, -0.2, 0.5);
        let accel = vec3(1.0, 0.5, 9.5);
        let n = 200;
        let dt = 0.005;
        let base = integrate_constant(gyro, accel, Vector6::zeros(), n, dt, &noise);
        for axis in 0..6 {
            let mut db = Vector6::zeros();
            db[axis] = 1e-4;
            let reint = integrate_constant(gyro, accel, db, n, dt, &noise);
            let (cr, cv, cp) = base.corrected(&db);
            assert!(
                cr.angle_to(&reint.delta_rot) < 1e-6,
                "axis {axis} rot err {}",
                cr.angle_to(&reint.delta_rot)
            );
            assert!((cv - reint.delta_vel).norm() < 1e-6, "axis {axis}");
            assert!((cp - reint.delta_pos).norm() < 1e-6, "axis {axis}");
        }
    }

    #[test]
    fn gyro_bias_perturbation_moves_position_through_coupling_only() {
        let noise = ImuNoiseModel::default();
        let d = integrate_constant(vec3(0.1, 0.0, 0.2), vec3(0.5, 0.0, 9.7), Vector6::zeros(), 100, 0.01, &noise);
        let mut db = Vector6::zeros();
        db[3] = 1e-3; // gyro x
        let (_, _, p) = d.corrected(&db);
        let expected = d.delta_pos + d.j_pos_bw * vec3(1e-3, 0.0, 0.0);
        assert!((p - expected).norm() < 1e-15);
    }

    #[test]
    fn residual_zero_after_noise_free_propagation() {
        let noise = ImuNoiseModel::default();
        let gravity = GravityModel::default();
        let mut d = PreintegratedDelta::new(Vector6::zeros());
        // varying inputs
        for k in 0..400 {
            let t = k as f64 * 0.005;
            let s = ImuSample {
                t,
                gyro: vec3(0.2 * (t * 2.0).sin(), -0.1, 0.3 * (t).cos()),
                accel: vec3(0.5 * t.sin(), 0.2, 9.8),
            };
            d.integrate(&s, 0.005, &noise);
        }
        let xi = NavState {
            pose: crate::lie::Pose::new(Rotation::exp(&vec3(0.1, -0.2, 0.4)), vec3(1.0, 2.0, 3.0)),
            velocity: vec3(0.5, -0.3, 0.1),
            bias: Vector6::zeros(),
        };
        let xj = d.propagate(&xi, &gravity);
        let r = d.residual(&xi, &xj, &gravity);
        assert!(r.norm() < 1e-8, "residual {}", r.norm());
    }

    #[test]
    fn bias_difference_block_is_independent() {
        let noise = ImuNoiseModel::default();
        let gravity = GravityModel::default();
        let d = integrate_constant(vec3(0.1, 0.0, 0.0), vec3(0.0, 0.0, 9.80665), Vector6::zeros(), 100, 0.005, &noise);
        let xi = NavState::identity();
        let xj0 = d.propagate(&xi, &gravity);
        let mut xj = xj0;
        xj.bias = Vector6::from_element(0.01);
        let r0 = d.residual(&xi, &xj0, &gravity);
        let r = d.residual(&xi, &xj, &gravity);
        for i in 0..9 {
            assert!((r[i] - r0[i]).abs() < 1e-15);
        }
        for i in 9..15 {
            assert!((r[i] - 0.01).abs() < 1e-15);
        }
    }

    #[test]
    fn rotation_residual_left_invariance() {
        let noise = ImuNoiseModel::default();
        let gravity = GravityModel::default();
        let d = integrate_constant(vec3(0.0, 0.1, 0.05), vec3(0.1, 0.0, 9.8), Vector6::zeros(), 100, 0.005, &noise);
        let xi = NavState::identity();
        let xj = d.propagate(&xi, &gravity);
        let mut xj_pert = xj;
        xj_pert.pose.rotation = xj.pose.rotation * Rotation::exp(&vec3(1e-3, 0.0, 0.0));
        let r = d.residual(&xi, &xj_pert, &gravity);
        assert!((r.fixed_rows::<3>(0) - vec3(1e-3, 0.0, 0.0)).norm() < 1e-6);
    }

    #[test]
    fn propagate_identity_delta_is_noop() {
        let gravity = GravityModel::default();
        let d = PreintegratedDelta::new(Vector6::zeros());
        let xi = NavState {
            pose: crate::lie::Pose::new(Rotation::exp(&vec3(0.3, 0.0, -0.1)), vec3(1.0, -1.0, 0.5)),
            velocity: vec3(0.2, 0.0, 0.0),
            bias: Vector6::zeros(),
        };
        let xj = d.propagate(&xi, &gravity);
        assert_eq!(xj.pose.translation, xi.pose.translation);
        assert_eq!(xj.velocity, xi.velocity);
    }

    #[test]
    fn free_fall_kinematics() {
        // zero specific force for 1 s: v = g, p = g/2
        let noise = ImuNoiseModel::default();
        let gravity = GravityModel::default();
        let d = integrate_constant(Vector3::zeros(), Vector3::zeros(), Vector6::zeros(), 1000, 1e-3, &noise);
        let xi = NavState::identity();
        let xj = d.propagate(&xi, &gravity);
        assert!((xj.velocity - gravity.g).norm() < 1e-9);
        assert!((xj.pose.translation - 0.5 * gravity.g).norm() < 1e-9);
    }

    #[test]
    fn covariance_psd_and_trace_monotone() {
        let noise = ImuNoiseModel::default();
        let mut d = PreintegratedDelta::new(Vector6::zeros());
        let mut last_trace = 0.0;
        for k in 0..200 {
            let t = k as f64 * 0.005;
            let s = ImuSample { t, gyro: vec3(0.5 * t.sin(), 0.2, -0.3), accel: vec3(1.0, 0.0, 9.5) };
            d.integrate(&s, 0.005, &noise);
            let eig = d.covariance.symmetric_eigenvalues();
            assert!(eig.min() > -1e-15, "step {k}: min eig {}", eig.min());
            let tr = d.covariance.trace();
            assert!(tr >= last_trace - 1e-18, "step {k}");
            last_trace = tr;
        }
    }

    #[test]
    fn split_interval_composition_matches_single() {
        let noise = ImuNoiseModel::default();
        let gravity = GravityModel::default();
        let samples: Vec<ImuSample> = (0..400)
            .map(|k| {
                let t = k as f64 * 0.005;
                ImuSample {
                    t,
                    gyro: vec3(0.3 * (2.0 * t).cos(), 0.1, -0.2 * t.sin()),
                    accel: vec3(0.4 * t.cos(), -0.3, 9.9),
                }
            })
            .collect();
        let mut whole = PreintegratedDelta::new(Vector6::zeros());
        for s in &samples {
            whole.integrate(s, 0.005, &noise);
        }
        let mut first = PreintegratedDelta::new(Vector6::zeros());
        let mut second = PreintegratedDelta::new(Vector6::zeros());
        for s in &samples[..200] {
            first.integrate(s, 0.005, &noise);
        }
        for s in &samples[200..] {
            second.integrate(s, 0.005, &noise);
        }
        let x0 = NavState {
            pose: crate::lie::Pose::new(Rotation::exp(&vec3(0.0, 0.1, 0.3)), vec3(5.0, 0.0, 1.0)),
            velocity: vec3(1.0, 0.5, 0.0),
            bias: Vector6::zeros(),
        };
        let direct = whole.propagate(&x0, &gravity);
        let composed = second.propagate(&first.propagate(&x0, &gravity), &gravity);
        assert!((direct.pose.translation - composed.pose.translation).norm() < 1e-8);
        assert!((direct.velocity - composed.velocity).norm() < 1e-8);
        assert!(direct.pose.rotation.angle_to(&composed.pose.rotation) < 1e-8);
    }

    #[test]
    #[should_panic(expected = "non-positive integration interval")]
    fn non_positive_dt_panics() {
        let noise = ImuNoiseModel::default();
        let mut d = PreintegratedDelta::new(Vector6::zeros());
        let s = ImuSample { t: 0.0, gyro: Vector3::zeros(), accel: Vector3::zeros() };
        d.integrate(&s, 0.0, &noise);
    }

    #[test]
    #[should_panic(expected = "gravity magnitude")]
    fn implausible_gravity_rejected() {
        let _ = GravityModel::new(vec3(0.0, 0.0, -20.0));
    }

    #[test]
    fn factor_jacobians_match_finite_differences() {
        use crate::graph::{numeric_jacobians, Value};
        let noise = ImuNoiseModel::default();
        let gravity = GravityModel::default();
        let mut d = PreintegratedDelta::new(pack_bias(&vec3(0.01, 0.0, -0.02), &vec3(0.001, -0.002, 0.0)));
        for k in 0..100 {
            let t = k as f64 * 0.005;
            let s = ImuSample { t, gyro: vec3(0.4 * t.sin(), -0.2, 0.1), accel: vec3(0.8, 0.3 * t.cos(), 9.6) };
            d.integrate(&s, 0.005, &noise);
        }
        let factor = ImuFactor::new(0, 1, d, gravity);
        let pi = Value::Pose(crate::lie::Pose::new(
            Rotation::exp(&vec3(0.2, -0.3, 0.5)),
            vec3(1.0, 2.0, -0.5),
        ));
        let vi = Value::Vec3(vec3(0.4, -0.2, 0.1));
        let bi = Value::Vec6(pack_bias(&vec3(0.02, 0.01, -0.01), &vec3(0.002, 0.0, -0.001)));
        let pj = Value::Pose(crate::lie::Pose::new(
            Rotation::exp(&vec3(0.25, -0.25, 0.55)),
            vec3(1.3, 2.1, -0.4),
        ));
        let vj = Value::Vec3(vec3(0.5, -0.1, 0.05));
        let bj = Value::Vec6(pack_bias(&vec3(0.021, 0.011, -0.009), &vec3(0.0021, 0.0001, -0.0009)));
        let vals = vec![&pi, &vi, &bi, &pj, &vj, &bj];
        let analytic = factor.jacobians(&vals).unwrap();
        let numeric = numeric_jacobians(&factor, &vals);
        for (idx, (a, n)) in analytic.iter().zip(numeric.iter()).enumerate() {
            let rel = (a - n).norm() / n.norm().max(1e-9);
            assert!(rel < 1e-4, "block {idx} rel err {rel:.3e}");
        }
    }
}
