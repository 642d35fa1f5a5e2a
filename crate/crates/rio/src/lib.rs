//! Hierarchical radar-inertial state estimation.
//!
//! The crate is organized around a generic manifold factor-graph engine
//! ([`graph`]) and the sensor models that feed it: IMU preintegration
//! ([`preintegration`]), Doppler ego-velocity ([`radar`]), zero-velocity and
//! ground-plane constraints ([`factors`]), and GICP-based radar mapping
//! ([`mapping`]). The estimator itself ([`hierarchy`]) runs two coupled
//! graphs: a bounded resetting frontend that produces odometry at scan rate,
//! and a persistent full-state backend whose optimized biases are injected
//! back into the frontend at every reset.
//!
//! Everything is verified against the built-in synthetic world in [`sim`];
//! [`pipeline`] ties the pieces together and the `rio` binary exposes
//! `simulate`, `run`, `eval`, and `ablate` commands on top of it.

pub mod config;
pub mod dataset;
pub mod factors;
pub mod graph;
pub mod hierarchy;
pub mod init;
pub mod lie;
pub mod mapping;
pub mod metrics;
pub mod pipeline;
pub mod preintegration;
pub mod radar;
pub mod sim;
pub mod state;

pub use lie::{Pose, Rotation, Twist};
pub use state::NavState;

/// Version of the on-disk dataset / output record schema.
pub const SCHEMA_VERSION: u32 = 1;
