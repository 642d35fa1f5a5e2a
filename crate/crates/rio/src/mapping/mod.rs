//! Radar mapping: a fixed-lag per-scan pose smoother, keyframe cloud
//! assembly in the anchor frame, multi-keyframe GICP registration feeding
//! between factors to the backend, and proximity loop-closure proposal.

pub mod gicp;

use std::collections::VecDeque;

use nalgebra::{DMatrix, Matrix3, Matrix6, Vector3};
use thiserror::Error;

use crate::factors::PosePrior;
use crate::graph::{Factor, FactorGraph, FactorId, Key, SolverConfig, Values};
use crate::lie::{Pose, Rotation};
use crate::radar::EgoVelocityEstimate;
pub use gicp::{GicpConfig, GicpReject, GicpResult, VoxelMap};

/// Frame a point cloud is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFrame {
    /// Radar sensor frame of one scan.
    Sensor,
    /// Anchor frame of a keyframe.
    Anchor,
    /// Mapping world frame.
    World,
}

#[derive(Debug, Clone)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub frame: CloudFrame,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>, frame: CloudFrame) -> Self {
        PointCloud { points, frame }
    }

    pub fn transformed(&self, t: &Pose, frame: CloudFrame) -> PointCloud {
        PointCloud { points: self.points.iter().map(|p| t.act(p)).collect(), frame }
    }
}

#[derive(Debug, Error)]
pub enum MappingError {
    #[error("keyframe has no member scans")]
    EmptyKeyframe,
}

/// Aggregated radar scans between two keyframe events, anchored to the
/// frozen pose of the first member scan.
#[derive(Debug, Clone)]
pub struct Keyframe {
    pub index: u32,
    pub t: f64,
    /// World pose of the anchor scan at assembly time.
    pub anchor: Pose,
    /// Member points in the anchor frame.
    pub cloud: PointCloud,
    pub scan_ids: Vec<u32>,
}

/// A scan whose pose left the smoother window.
#[derive(Debug, Clone)]
pub struct FrozenScan {
    pub id: u32,
    pub t: f64,
    pub pose: Pose,
    pub cloud: PointCloud,
}

#[derive(Debug, Clone)]
pub struct SmootherConfig {
    /// Temporal horizon [s]; older scan poses are frozen.
    pub horizon: f64,
    pub gicp: GicpConfig,
    pub solver: SolverConfig,
    /// Rotation noise floor for the odometry factor [rad^2].
    pub rot_noise_floor: f64,
    /// Translation noise floor [m^2].
    pub trans_noise_floor: f64,
    /// Gyro white-noise density feeding the odometry rotation block.
    pub gyro_noise: f64,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        SmootherConfig {
            horizon: 1.0,
            gicp: GicpConfig::default(),
            solver: SolverConfig::default(),
            rot_noise_floor: 1e-8,
            trans_noise_floor: 1e-8,
            gyro_noise: 1e-3,
        }
    }
}

struct WindowScan {
    id: u32,
    t: f64,
    cloud: PointCloud,
    factors: Vec<FactorId>,
}

/// Fixed-lag smoother over radar scan poses. Each new scan is constrained
/// by a constant-velocity odometry factor (translation from the previous
/// ego-velocity, rotation from gyro integration) and, when it converges, a
/// scan-to-map GICP prior against the in-window map.
pub struct ScanSmoother {
    cfg: SmootherConfig,
    graph: FactorGraph,
    values: Values,
    window: VecDeque<WindowScan>,
    frozen: Vec<FrozenScan>,
    last: Option<(u32, f64, Vector3<f64>)>, // id, t, radar-frame velocity
    gicp_accepts: usize,
    gicp_rejects: usize,
}

impl ScanSmoother {
    /// Roots the smoother at the first scan's world pose.
    pub fn new(cfg: SmootherConfig, id: u32, t: f64, pose: Pose, cloud: PointCloud, ego: &EgoVelocityEstimate) -> Self {
        let mut graph = FactorGraph::new();
        let mut values = Values::new();
        values.insert_pose(Key::pose(id), pose);
        let fid = graph.add(
            PosePrior::factor(Key::pose(id), pose, DMatrix::identity(6, 6) * 1e-6)
                .expect("root prior"),
        );
        let mut window = VecDeque::new();
        window.push_back(WindowScan { id, t, cloud, factors: vec![fid] });
        ScanSmoother {
            cfg,
            graph,
            values,
            window,
            frozen: Vec::new(),
            last: Some((id, t, ego.velocity)),
            gicp_accepts: 0,
            gicp_rejects: 0,
        }
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn gicp_counts(&self) -> (usize, usize) {
        (self.gicp_accepts, self.gicp_rejects)
    }

    /// Current estimate of a scan pose still in the window.
    pub fn pose_of(&self, id: u32) -> Option<Pose> {
        self.window
            .iter()
            .find(|s| s.id == id)
            .map(|s| *self.values.pose(&Key::pose(s.id)))
    }

    /// In-window map: all other scans' points at their current estimates.
    fn build_local_map(&self, exclude: u32) -> Vec<Vector3<f64>> {
        let mut pts = Vec::new();
        for s in &self.window {
            if s.id == exclude {
                continue;
            }
            let pose = self.values.pose(&Key::pose(s.id));
            pts.extend(s.cloud.points.iter().map(|p| pose.act(p)));
        }
        pts
    }

    /// Adds a scan: odometry factor, optional scan-to-map GICP prior, warm
    /// re-solve, then freezes poses older than the horizon. Returns the
    /// refined pose of the new scan.
    pub fn add_scan(
        &mut self,
        id: u32,
        t: f64,
        cloud: PointCloud,
        ego: &EgoVelocityEstimate,
        rel_rotation: Rotation,
    ) -> Pose {
        let (prev_id, prev_t, prev_vel) = self.last.expect("smoother is rooted");
        let dt = t - prev_t;
        debug_assert!(dt > 0.0);

        // constant-velocity twist in the previous radar frame
        let rel = Pose::new(rel_rotation, prev_vel * dt);
        let prev_pose = *self.values.pose(&Key::pose(prev_id));
        let guess = prev_pose.compose(&rel);
        self.values.insert_pose(Key::pose(id), guess);

        let mut cov = Matrix6::<f64>::zeros();
        let rot_var = self.cfg.gyro_noise * self.cfg.gyro_noise * dt + self.cfg.rot_noise_floor;
        let trans_cov = ego.covariance * dt * dt + Matrix3::identity() * self.cfg.trans_noise_floor;
        for i in 0..3 {
            cov[(i, i)] = rot_var;
            for j in 0..3 {
                cov[(i + 3, j + 3)] = trans_cov[(i, j)];
            }
        }
        let mut fids = vec![self.graph.add(
            crate::factors::BetweenPose::factor(
                Key::pose(prev_id),
                Key::pose(id),
                rel,
                DMatrix::from_fn(6, 6, |i, j| cov[(i, j)]),
            )
            .expect("odometry covariance"),
        )];

        // scan-to-map refinement; odometry keeps the graph connected if the
        // registration is rejected
        let map_points = self.build_local_map(id);
        if map_points.len() >= self.cfg.gicp.min_voxel_points {
            let map = VoxelMap::build(
                &map_points,
                self.cfg.gicp.voxel_resolution,
                self.cfg.gicp.min_voxel_points,
                self.cfg.gicp.eig_floor,
            );
            match gicp::register(&cloud.points, &map, &guess, &self.cfg.gicp) {
                Ok(result) => {
                    self.gicp_accepts += 1;
                    let info = DMatrix::from_fn(6, 6, |i, j| result.information[(i, j)]);
                    fids.push(
                        self.graph.add(
                            Factor::from_information(
                                PosePrior::new(Key::pose(id), result.transform),
                                info,
                            )
                            .expect("gicp information"),
                        ),
                    );
                }
                Err(_) => {
                    self.gicp_rejects += 1;
                }
            }
        }

        self.window.push_back(WindowScan { id, t, cloud, factors: fids });
        if let Ok(sol) = self.graph.solve(&self.values, &self.cfg.solver) {
            self.values = sol.values;
        }
        self.last = Some((id, t, ego.velocity));

        // freeze everything older than the horizon
        while let Some(front) = self.window.front() {
            if t - front.t <= self.cfg.horizon || self.window.len() <= 1 {
                break;
            }
            self.freeze_front();
        }
        *self.values.pose(&Key::pose(id))
    }

    fn freeze_front(&mut self) {
        let front = self.window.pop_front().expect("nonempty");
        let pose = *self.values.pose(&Key::pose(front.id));
        // re-anchor the new front on its current marginal before dropping
        // the frozen scan's factors
        if let Some(next) = self.window.front() {
            let next_key = Key::pose(next.id);
            if let Ok(marg) = self.graph.marginal_covariance(&self.values, &[next_key]) {
                let anchor = *self.values.pose(&next_key);
                let reg = &marg + DMatrix::identity(6, 6) * 1e-12;
                if let Ok(f) = PosePrior::factor(next_key, anchor, reg) {
                    let fid = self.graph.add(f);
                    if let Some(next_mut) = self.window.front_mut() {
                        next_mut.factors.push(fid);
                    }
                }
            }
        }
        for fid in &front.factors {
            self.graph.remove(*fid);
        }
        // factors of the successor that referenced the frozen pose are gone
        // with it: remove any factor still naming the frozen key
        let stale: Vec<FactorId> = self
            .graph
            .factors()
            .filter(|(_, f)| f.keys().contains(&Key::pose(front.id)))
            .map(|(id, _)| *id)
            .collect();
        for fid in stale {
            self.graph.remove(fid);
        }
        self.values.remove(&Key::pose(front.id));
        self.frozen.push(FrozenScan { id: front.id, t: front.t, pose, cloud: front.cloud });
    }

    /// Drains scans frozen so far.
    pub fn take_frozen(&mut self) -> Vec<FrozenScan> {
        std::mem::take(&mut self.frozen)
    }

    /// Freezes every remaining scan (end of stream).
    pub fn flush(&mut self) -> Vec<FrozenScan> {
        while self.window.len() > 1 {
            self.freeze_front();
        }
        if let Some(front) = self.window.pop_front() {
            let pose = *self.values.pose(&Key::pose(front.id));
            self.frozen.push(FrozenScan { id: front.id, t: front.t, pose, cloud: front.cloud });
        }
        self.take_frozen()
    }
}

/// Merges frozen member scans into the anchor frame of the first one:
/// `C_k = union (T_k^-1 T_i) S_i`.
pub fn assemble_keyframe(index: u32, scans: &[FrozenScan]) -> Result<Keyframe, MappingError> {
    let Some(anchor_scan) = scans.first() else {
        return Err(MappingError::EmptyKeyframe);
    };
    let anchor = anchor_scan.pose;
    let anchor_inv = anchor.inverse();
    let mut points = Vec::new();
    for s in scans {
        let rel = anchor_inv.compose(&s.pose);
        points.extend(s.cloud.points.iter().map(|p| rel.act(p)));
    }
    Ok(Keyframe {
        index,
        t: anchor_scan.t,
        anchor,
        cloud: PointCloud::new(points, CloudFrame::Anchor),
        scan_ids: scans.iter().map(|s| s.id).collect(),
    })
}

/// Registers keyframe `kf` against the voxelized union of its neighbors.
///
/// `neighbor_poses` are the current anchor-pose estimates; the target is
/// built in the frame of `reference` (usually keyframe k-1) and the result
/// is the refined relative pose `T_ref^-1 T_k` with its GN information.
pub fn register_keyframe(
    kf: &Keyframe,
    neighbors: &[(&Keyframe, Pose)],
    reference: &Pose,
    init: &Pose,
    cfg: &GicpConfig,
) -> Result<GicpResult, GicpReject> {
    let ref_inv = reference.inverse();
    let mut target = Vec::new();
    for (nb, pose) in neighbors {
        let rel = ref_inv.compose(pose);
        target.extend(nb.cloud.points.iter().map(|p| rel.act(p)));
    }
    if target.is_empty() {
        return Err(GicpReject::NoCorrespondences);
    }
    let map = VoxelMap::build(&target, cfg.voxel_resolution, cfg.min_voxel_points, cfg.eig_floor);
    gicp::register(&kf.cloud.points, &map, init, cfg)
}

/// A verified loop-closure candidate.
#[derive(Debug, Clone)]
pub struct LoopCandidate {
    pub from: u32,
    pub to: u32,
    /// Refined `T_from^-1 T_to` between anchor poses.
    pub relative: Pose,
    pub information: Matrix6<f64>,
    pub fitness: f64,
}

/// Proposes loop closures for the newest keyframe: the nearest older
/// keyframe within `radius` and at least `gap` indices back, verified by
/// GICP registration at the current pose estimates.
pub fn propose_loop_closures(
    keyframes: &[Keyframe],
    poses: &[Pose],
    radius: f64,
    gap: u32,
    cfg: &GicpConfig,
) -> Vec<LoopCandidate> {
    assert_eq!(keyframes.len(), poses.len());
    let Some((newest, newest_pose)) = keyframes.last().zip(poses.last()) else {
        return Vec::new();
    };
    let mut best: Option<(usize, f64)> = None;
    for (i, (kf, pose)) in keyframes.iter().zip(poses.iter()).enumerate() {
        if newest.index.saturating_sub(kf.index) < gap {
            continue;
        }
        let d = (pose.translation - newest_pose.translation).norm();
        if d < radius && best.map_or(true, |(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    let Some((i, _)) = best else {
        return Vec::new();
    };
    let init = poses[i].inverse().compose(newest_pose);
    match register_keyframe(newest, &[(&keyframes[i], poses[i])], &poses[i], &init, cfg) {
        Ok(res) => vec![LoopCandidate {
            from: keyframes[i].index,
            to: newest.index,
            relative: res.transform,
            information: res.information,
            fitness: res.fitness,
        }],
        Err(_) => Vec::new(),
    }
}

/// Arms/disarms proximity proposals so each revisit produces one candidate.
#[derive(Debug, Default)]
pub struct LoopDetector {
    armed: bool,
    suppressed: bool,
}

impl LoopDetector {
    pub fn new() -> Self {
        LoopDetector { armed: true, suppressed: false }
    }

    /// Feeds the latest proposal result; returns the candidate to apply, if
    /// any. After an accepted candidate the detector stays quiet until a
    /// keyframe arrives with no candidate in range (hysteresis).
    pub fn filter(&mut self, candidates: Vec<LoopCandidate>) -> Option<LoopCandidate> {
        if candidates.is_empty() {
            self.armed = true;
            self.suppressed = false;
            return None;
        }
        if self.armed && !self.suppressed {
            self.suppressed = true;
            return candidates.into_iter().next();
        }
        None
    }
}
