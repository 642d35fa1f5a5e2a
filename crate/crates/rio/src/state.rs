//! Navigation state shared by the preintegration, hierarchy, and pipeline
//! layers.

use nalgebra::{Vector3, Vector6};

use crate::lie::{Pose, Rotation};

/// Full per-node state: pose on SE(3), world-frame velocity, and the 6-dim
/// IMU bias ordered `[accel; gyro]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavState {
    pub pose: Pose,
    pub velocity: Vector3<f64>,
    pub bias: Vector6<f64>,
}

impl Default for NavState {
    fn default() -> Self {
        Self::identity()
    }
}

impl NavState {
    pub fn identity() -> Self {
        NavState {
            pose: Pose::identity(),
            velocity: Vector3::zeros(),
            bias: Vector6::zeros(),
        }
    }

    pub fn new(pose: Pose, velocity: Vector3<f64>, bias: Vector6<f64>) -> Self {
        NavState {
            pose,
            velocity,
            bias,
        }
    }

    pub fn rotation(&self) -> &Rotation {
        &self.pose.rotation
    }

    pub fn position(&self) -> &Vector3<f64> {
        &self.pose.translation
    }

    pub fn accel_bias(&self) -> Vector3<f64> {
        self.bias.fixed_rows::<3>(0).into_owned()
    }

    pub fn gyro_bias(&self) -> Vector3<f64> {
        self.bias.fixed_rows::<3>(3).into_owned()
    }

    pub fn is_finite(&self) -> bool {
        self.pose.rotation.matrix().iter().all(|x| x.is_finite())
            && self.pose.translation.iter().all(|x| x.is_finite())
            && self.velocity.iter().all(|x| x.is_finite())
            && self.bias.iter().all(|x| x.is_finite())
    }
}

/// Packs accel and gyro bias vectors into the `[accel; gyro]` layout.
pub fn pack_bias(accel: &Vector3<f64>, gyro: &Vector3<f64>) -> Vector6<f64> {
    let mut b = Vector6::zeros();
    b.fixed_rows_mut::<3>(0).copy_from(accel);
    b.fixed_rows_mut::<3>(3).copy_from(gyro);
    b
}
