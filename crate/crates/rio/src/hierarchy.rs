//! The dual-graph estimator: a bounded resetting frontend producing
//! odometry at scan rate, and a persistent full-state backend whose
//! optimized bias (with its marginal covariance) is injected into the
//! frontend prior at every reset.
//!
//! Reset semantics: when the frontend window is full, the newest node's MAP
//! estimate and marginal covariances collapse into three unary priors on a
//! fresh root node. The pose/velocity priors always come from the frontend
//! itself; the bias prior follows the injection policy, taking the backend
//! snapshot while moving and the local estimate while stationary.

use nalgebra::{DMatrix, Matrix3, Matrix6, Vector3, Vector6};
use thiserror::Error;

use crate::factors::{make_ground_factors, make_zupt_factors, GroundPlaneModel, PosePrior, Vec3Prior, Vec6Prior, ZuptConfig};
use crate::graph::{Factor, FactorGraph, Key, SolveError, SolverConfig, Values};
use crate::lie::Pose;
use crate::preintegration::{GravityModel, ImuFactor, PreintegratedDelta};
use crate::radar::{DopplerFactor, EgoVelocityEstimate, RadarExtrinsics};
use crate::state::NavState;

/// Optimized bias with its marginal covariance; the message passed from the
/// persistent graph into the resetting graph's prior.
#[derive(Debug, Clone, Copy)]
pub struct BiasSnapshot {
    pub bias: Vector6<f64>,
    pub covariance: Matrix6<f64>,
    pub source: BiasSource,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BiasSource {
    Local,
    Global,
}

/// Injection policy: globally optimized bias while moving, local bias while
/// stationary (global injection is blocked during ZUPT intervals).
pub fn select_bias_prior(
    zupt: bool,
    local: &BiasSnapshot,
    global: Option<&BiasSnapshot>,
) -> BiasSnapshot {
    match (zupt, global) {
        (false, Some(g)) => *g,
        _ => *local,
    }
}

/// Prior installed at the root of a fresh resetting graph.
#[derive(Debug, Clone)]
pub struct ResetPrior {
    pub t: f64,
    pub pose: Pose,
    pub velocity: Vector3<f64>,
    pub bias: Vector6<f64>,
    pub cov_pose: Matrix6<f64>,
    pub cov_velocity: Matrix3<f64>,
    pub cov_bias: Matrix6<f64>,
    pub bias_source: BiasSource,
}

/// What triggered a backend keyframe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyframeTrigger {
    Time,
    Distance,
    Rotation,
}

#[derive(Debug, Clone, Copy)]
pub struct KeyframeEvent {
    pub index: u32,
    pub t: f64,
    pub trigger: KeyframeTrigger,
}

#[derive(Debug, Error)]
pub enum HierarchyError {
    #[error("frontend solve diverged: {0}")]
    FrontendDiverged(SolveError),
    #[error("backend solve failed: {0}")]
    BackendFailed(SolveError),
    #[error("reset aborted, window extended: {0}")]
    ResetAborted(SolveError),
    #[error("stale bias snapshot: {snapshot:.3}s older than last applied {applied:.3}s")]
    StaleSnapshot { snapshot: f64, applied: f64 },
}

/// Frontend configuration.
#[derive(Debug, Clone)]
pub struct FrontendConfig {
    /// Window bound before a reset.
    pub k_max: usize,
    /// Pose-prior regularization added at reset.
    pub epsilon_t: f64,
    pub solver: SolverConfig,
    pub zupt: ZuptConfig,
    pub ground: Option<GroundPlaneModel>,
    pub gravity: GravityModel,
    pub extrinsics: RadarExtrinsics,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            k_max: 10,
            epsilon_t: 1e-9,
            solver: SolverConfig::default(),
            zupt: ZuptConfig::default(),
            ground: None,
            gravity: GravityModel::default(),
            extrinsics: RadarExtrinsics::default(),
        }
    }
}

fn dmat6(m: &Matrix6<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(6, 6, |i, j| m[(i, j)])
}

fn dmat3(m: &Matrix3<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(3, 3, |i, j| m[(i, j)])
}

fn mat6(m: &DMatrix<f64>) -> Matrix6<f64> {
    Matrix6::from_fn(|i, j| m[(i, j)])
}

fn mat3(m: &DMatrix<f64>) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| m[(i, j)])
}

/// Bounded sliding-window graph that collapses into a prior when full.
pub struct ResettingGraph {
    cfg: FrontendConfig,
    graph: FactorGraph,
    values: Values,
    /// Node indices currently in the window (monotone across resets).
    window: Vec<u32>,
    next_index: u32,
    latest: NavState,
    latest_t: f64,
    grace: usize,
    resets: usize,
    last_snapshot_t: Option<f64>,
}

impl ResettingGraph {
    /// Roots the graph at an initial state with the given prior covariances.
    pub fn new(cfg: FrontendConfig, t0: f64, state: NavState, prior: &ResetPrior) -> Self {
        let mut me = ResettingGraph {
            cfg,
            graph: FactorGraph::new(),
            values: Values::new(),
            window: Vec::new(),
            next_index: 0,
            latest: state,
            latest_t: t0,
            grace: 0,
            resets: 0,
            last_snapshot_t: None,
        };
        me.install_root(t0, prior);
        me
    }

    fn install_root(&mut self, t: f64, prior: &ResetPrior) {
        let idx = self.next_index;
        self.next_index += 1;
        self.window.clear();
        self.window.push(idx);
        self.graph.clear();
        self.values = Values::new();
        self.values.insert_pose(Key::pose(idx), prior.pose);
        self.values.insert_vec3(Key::velocity(idx), prior.velocity);
        self.values.insert_vec6(Key::bias(idx), prior.bias);
        self.graph.add(
            PosePrior::factor(Key::pose(idx), prior.pose, dmat6(&prior.cov_pose))
                .expect("pose prior covariance"),
        );
        self.graph.add(
            Vec3Prior::factor(Key::velocity(idx), prior.velocity, dmat3(&prior.cov_velocity))
                .expect("velocity prior covariance"),
        );
        self.graph.add(
            Vec6Prior::factor(Key::bias(idx), prior.bias, dmat6(&prior.cov_bias))
                .expect("bias prior covariance"),
        );
        if let Some(plane) = &self.cfg.ground {
            for f in make_ground_factors(Key::pose(idx), Key::velocity(idx), plane)
                .expect("ground factors")
            {
                self.graph.add(f);
            }
        }
        self.latest = NavState::new(prior.pose, prior.velocity, prior.bias);
        self.latest_t = t;
    }

    pub fn latest(&self) -> &NavState {
        &self.latest
    }

    pub fn latest_t(&self) -> f64 {
        self.latest_t
    }

    pub fn node_count(&self) -> usize {
        self.window.len()
    }

    pub fn reset_count(&self) -> usize {
        self.resets
    }

    /// True when the window reached its bound (plus any failure grace).
    pub fn is_full(&self) -> bool {
        self.window.len() >= self.cfg.k_max + self.grace
    }

    pub fn current_bias_snapshot(&self) -> Result<BiasSnapshot, SolveError> {
        let idx = *self.window.last().expect("nonempty window");
        let cov = self.graph.marginal_covariance(&self.values, &[Key::bias(idx)])?;
        Ok(BiasSnapshot {
            bias: *self.values.vec6(&Key::bias(idx)),
            covariance: mat6(&cov),
            source: BiasSource::Local,
            t: self.latest_t,
        })
    }

    /// Appends one node with its IMU, Doppler, and optional ZUPT factors,
    /// then re-solves the window and returns the newest MAP state.
    pub fn add_node(
        &mut self,
        t: f64,
        preint: PreintegratedDelta,
        ego: Option<&EgoVelocityEstimate>,
        omega: &Vector3<f64>,
        zupt: bool,
    ) -> Result<NavState, HierarchyError> {
        let prev = *self.window.last().expect("rooted graph");
        let idx = self.next_index;
        self.next_index += 1;
        self.window.push(idx);

        let guess = preint.propagate(&self.latest, &self.cfg.gravity);
        self.values.insert_pose(Key::pose(idx), guess.pose);
        self.values.insert_vec3(Key::velocity(idx), guess.velocity);
        self.values.insert_vec6(Key::bias(idx), guess.bias);

        let imu = ImuFactor::new(prev, idx, preint, self.cfg.gravity);
        let noise = imu.noise();
        self.graph.add(Factor::gaussian(imu, noise).expect("preintegration covariance"));

        if let Some(est) = ego {
            let noise = DopplerFactor::noise(est, &self.cfg.extrinsics);
            let f = DopplerFactor::new(idx, est, *omega, self.cfg.extrinsics);
            self.graph.add(Factor::gaussian(f, noise).expect("doppler covariance"));
        }
        if zupt {
            let (fv, fm) = make_zupt_factors(Key::pose(prev), Key::pose(idx), Key::velocity(idx), &self.cfg.zupt)
                .expect("zupt factors");
            self.graph.add(fv);
            self.graph.add(fm);
        }
        if let Some(plane) = &self.cfg.ground {
            for f in make_ground_factors(Key::pose(idx), Key::velocity(idx), plane)
                .expect("ground factors")
            {
                self.graph.add(f);
            }
        }

        let sol = self
            .graph
            .solve(&self.values, &self.cfg.solver)
            .map_err(HierarchyError::FrontendDiverged)?;
        self.values = sol.values;
        self.latest = NavState::new(
            *self.values.pose(&Key::pose(idx)),
            *self.values.vec3(&Key::velocity(idx)),
            *self.values.vec6(&Key::bias(idx)),
        );
        self.latest_t = t;
        Ok(self.latest)
    }

    /// Collapses the newest node into a prior-rooted fresh graph. The bias
    /// prior follows the injection policy; a failed marginal extraction
    /// aborts the reset and extends the window by two nodes.
    pub fn reset(
        &mut self,
        zupt: bool,
        global: Option<&BiasSnapshot>,
    ) -> Result<ResetPrior, HierarchyError> {
        if let (Some(g), Some(applied)) = (global, self.last_snapshot_t) {
            if g.t < applied - 1e-9 {
                return Err(HierarchyError::StaleSnapshot { snapshot: g.t, applied });
            }
        }
        let idx = *self.window.last().expect("rooted graph");
        let keys = [Key::pose(idx), Key::velocity(idx), Key::bias(idx)];
        let joint = match self.graph.marginal_covariance(&self.values, &keys) {
            Ok(m) => m,
            Err(e) => {
                self.grace += 2;
                return Err(HierarchyError::ResetAborted(e));
            }
        };
        let cov_pose = mat6(&joint.view((0, 0), (6, 6)).clone_owned())
            + Matrix6::identity() * self.cfg.epsilon_t;
        let cov_velocity = mat3(&joint.view((6, 6), (3, 3)).clone_owned());
        let local = BiasSnapshot {
            bias: *self.values.vec6(&Key::bias(idx)),
            covariance: mat6(&joint.view((9, 9), (6, 6)).clone_owned()),
            source: BiasSource::Local,
            t: self.latest_t,
        };
        let chosen = select_bias_prior(zupt, &local, global);
        if chosen.source == BiasSource::Global {
            self.last_snapshot_t = Some(chosen.t);
        }
        let prior = ResetPrior {
            t: self.latest_t,
            pose: *self.values.pose(&Key::pose(idx)),
            velocity: *self.values.vec3(&Key::velocity(idx)),
            bias: chosen.bias,
            cov_pose,
            cov_velocity,
            cov_bias: chosen.covariance,
            bias_source: chosen.source,
        };
        self.grace = 0;
        self.resets += 1;
        let t = self.latest_t;
        self.install_root(t, &prior);
        Ok(prior)
    }

    /// Solves the current (possibly prior-only) graph; used by tests to
    /// check that a reset reproduces the injected estimates exactly.
    pub fn solve_current(&mut self) -> Result<NavState, HierarchyError> {
        let sol = self
            .graph
            .solve(&self.values, &self.cfg.solver)
            .map_err(HierarchyError::FrontendDiverged)?;
        self.values = sol.values;
        let idx = *self.window.last().expect("rooted graph");
        self.latest = NavState::new(
            *self.values.pose(&Key::pose(idx)),
            *self.values.vec3(&Key::velocity(idx)),
            *self.values.vec6(&Key::bias(idx)),
        );
        Ok(self.latest)
    }
}

/// Backend configuration.
#[derive(Debug, Clone)]
pub struct BackendConfig {
    pub solver: SolverConfig,
    pub zupt: ZuptConfig,
    pub ground: Option<GroundPlaneModel>,
    pub gravity: GravityModel,
    pub extrinsics: RadarExtrinsics,
    /// Minimum keyframe separation for a loop closure.
    pub loop_gap: u32,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            solver: SolverConfig::default(),
            zupt: ZuptConfig::default(),
            ground: None,
            gravity: GravityModel::default(),
            extrinsics: RadarExtrinsics::default(),
            loop_gap: 10,
        }
    }
}

/// Relative-pose payload for keyframe registration and loop closures.
#[derive(Debug, Clone)]
pub struct BetweenPayload {
    pub relative: Pose,
    pub information: Matrix6<f64>,
}

/// Full-history graph over pose/velocity/bias nodes; never marginalizes.
pub struct PersistentGraph {
    cfg: BackendConfig,
    graph: FactorGraph,
    values: Values,
    keyframes: Vec<KeyframeEvent>,
    stationary: Vec<bool>,
    latest_snapshot: Option<BiasSnapshot>,
    loops: usize,
}

impl PersistentGraph {
    pub fn new(cfg: BackendConfig, t0: f64, state: NavState, prior: &ResetPrior) -> Self {
        let mut graph = FactorGraph::new();
        let mut values = Values::new();
        values.insert_pose(Key::pose(0), state.pose);
        values.insert_vec3(Key::velocity(0), state.velocity);
        values.insert_vec6(Key::bias(0), state.bias);
        graph.add(PosePrior::factor(Key::pose(0), prior.pose, dmat6(&prior.cov_pose)).expect("pose prior"));
        graph.add(
            Vec3Prior::factor(Key::velocity(0), prior.velocity, dmat3(&prior.cov_velocity))
                .expect("velocity prior"),
        );
        graph.add(Vec6Prior::factor(Key::bias(0), prior.bias, dmat6(&prior.cov_bias)).expect("bias prior"));
        if let Some(plane) = &cfg.ground {
            for f in
                make_ground_factors(Key::pose(0), Key::velocity(0), plane).expect("ground factors")
            {
                graph.add(f);
            }
        }
        PersistentGraph {
            cfg,
            graph,
            values,
            keyframes: vec![KeyframeEvent { index: 0, t: t0, trigger: KeyframeTrigger::Time }],
            stationary: vec![false],
            latest_snapshot: None,
            loops: 0,
        }
    }

    pub fn keyframe_count(&self) -> usize {
        self.keyframes.len()
    }

    pub fn keyframes(&self) -> &[KeyframeEvent] {
        &self.keyframes
    }

    pub fn loop_count(&self) -> usize {
        self.loops
    }

    pub fn latest_snapshot(&self) -> Option<&BiasSnapshot> {
        self.latest_snapshot.as_ref()
    }

    pub fn state_at(&self, index: u32) -> NavState {
        NavState::new(
            *self.values.pose(&Key::pose(index)),
            *self.values.vec3(&Key::velocity(index)),
            *self.values.vec6(&Key::bias(index)),
        )
    }

    /// Appends a keyframe with IMU, Doppler, optional map-between, ZUPT, and
    /// ground factors; re-solves warm and publishes a fresh bias snapshot.
    pub fn add_keyframe(
        &mut self,
        event: KeyframeEvent,
        preint: PreintegratedDelta,
        ego: Option<&EgoVelocityEstimate>,
        omega: &Vector3<f64>,
        zupt: bool,
        map_factor: Option<&BetweenPayload>,
    ) -> Result<BiasSnapshot, HierarchyError> {
        let prev = self.keyframes.last().expect("rooted backend").index;
        let idx = event.index;
        assert!(idx == prev + 1, "keyframe indices must be consecutive");

        let prev_state = self.state_at(prev);
        let guess = preint.propagate(&prev_state, &self.cfg.gravity);
        self.values.insert_pose(Key::pose(idx), guess.pose);
        self.values.insert_vec3(Key::velocity(idx), guess.velocity);
        self.values.insert_vec6(Key::bias(idx), guess.bias);

        let imu = ImuFactor::new(prev, idx, preint, self.cfg.gravity);
        let noise = imu.noise();
        self.graph.add(Factor::gaussian(imu, noise).expect("preintegration covariance"));
        if let Some(est) = ego {
            let noise = DopplerFactor::noise(est, &self.cfg.extrinsics);
            let f = DopplerFactor::new(idx, est, *omega, self.cfg.extrinsics);
            self.graph.add(Factor::gaussian(f, noise).expect("doppler covariance"));
        }
        if let Some(payload) = map_factor {
            self.attach_between(prev, idx, payload);
        }
        if zupt {
            let (fv, fm) = make_zupt_factors(Key::pose(prev), Key::pose(idx), Key::velocity(idx), &self.cfg.zupt)
                .expect("zupt factors");
            self.graph.add(fv);
            self.graph.add(fm);
        }
        if let Some(plane) = &self.cfg.ground {
            for f in make_ground_factors(Key::pose(idx), Key::velocity(idx), plane)
                .expect("ground factors")
            {
                self.graph.add(f);
            }
        }

        self.keyframes.push(event);
        self.stationary.push(zupt);
        self.resolve()?;

        let cov = self
            .graph
            .marginal_covariance(&self.values, &[Key::bias(idx)])
            .map_err(HierarchyError::BackendFailed)?;
        let snapshot = BiasSnapshot {
            bias: *self.values.vec6(&Key::bias(idx)),
            covariance: mat6(&cov),
            source: BiasSource::Global,
            t: event.t,
        };
        self.latest_snapshot = Some(snapshot);
        Ok(snapshot)
    }

    /// Adds a relative-pose factor between two existing keyframes (map
    /// factor attached late, or a verified loop closure).
    pub fn attach_between(&mut self, ki: u32, kj: u32, payload: &BetweenPayload) {
        let residual =
            crate::factors::BetweenPose::new(Key::pose(ki), Key::pose(kj), payload.relative);
        let info = DMatrix::from_fn(6, 6, |i, j| payload.information[(i, j)]);
        self.graph
            .add(Factor::from_information(residual, info).expect("between information"));
    }

    /// Verified loop closure spanning distant keyframes; re-solves.
    pub fn add_loop_closure(
        &mut self,
        ki: u32,
        kj: u32,
        payload: &BetweenPayload,
    ) -> Result<(), HierarchyError> {
        assert!(
            kj.abs_diff(ki) >= self.cfg.loop_gap,
            "loop closure violates the keyframe gap"
        );
        self.attach_between(ki, kj, payload);
        self.loops += 1;
        self.resolve()
    }

    /// Warm-started re-solve of the full graph.
    pub fn resolve(&mut self) -> Result<(), HierarchyError> {
        let sol = self
            .graph
            .solve(&self.values, &self.cfg.solver)
            .map_err(HierarchyError::BackendFailed)?;
        self.values = sol.values;
        Ok(())
    }

    pub fn residual_cost(&self) -> f64 {
        self.graph.cost(&self.values)
    }
}
