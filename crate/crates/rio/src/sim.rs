//! Synthetic world and sensor generator: planar trajectories with smooth
//! speed profiles, IMU streams with bias random walks, and radar scans with
//! Doppler returns and outliers. Ground truth is the forward-Euler discrete
//! trajectory driven by the same sampled inputs the sensors see, so
//! noise-free data is exactly consistent with the estimator's models.

use nalgebra::{Vector3, Vector6};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::lie::{Pose, Rotation};
use crate::preintegration::{GravityModel, ImuSample, STANDARD_GRAVITY};
use crate::radar::{RadarExtrinsics, RadarPoint, RadarScan};
use crate::state::{pack_bias, NavState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    Straight,
    SquareLoop,
    Corridor,
    FigureEight,
    StationarySegments,
}

impl TrajectoryKind {
    pub fn parse(s: &str) -> Option<TrajectoryKind> {
        match s {
            "straight" => Some(TrajectoryKind::Straight),
            "square_loop" => Some(TrajectoryKind::SquareLoop),
            "corridor" => Some(TrajectoryKind::Corridor),
            "figure_eight" => Some(TrajectoryKind::FigureEight),
            "stationary_segments" => Some(TrajectoryKind::StationarySegments),
            _ => None,
        }
    }

    pub const ALL: [TrajectoryKind; 5] = [
        TrajectoryKind::Straight,
        TrajectoryKind::SquareLoop,
        TrajectoryKind::Corridor,
        TrajectoryKind::FigureEight,
        TrajectoryKind::StationarySegments,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TrajectoryKind::Straight => "straight",
            TrajectoryKind::SquareLoop => "square_loop",
            TrajectoryKind::Corridor => "corridor",
            TrajectoryKind::FigureEight => "figure_eight",
            TrajectoryKind::StationarySegments => "stationary_segments",
        }
    }
}

/// Planar trajectory specification. Position is piecewise C^1: the speed
/// profile is continuous and the path has rounded corners; yaw follows the
/// velocity direction except while stationary.
#[derive(Debug, Clone)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    pub duration: f64,
    pub speed: f64,
    /// Initial stationary window for gravity alignment [s].
    pub start_static: f64,
    /// Periodic dwell schedule: every `period` seconds hold still for
    /// `duration` seconds (ramps included on both sides).
    pub dwell: Option<(f64, f64)>,
    /// Initial heading in the world frame.
    pub initial_yaw: f64,
}

impl TrajectorySpec {
    pub fn new(kind: TrajectoryKind, duration: f64, speed: f64) -> Self {
        let dwell = match kind {
            TrajectoryKind::StationarySegments => Some((14.0, 3.0)),
            _ => None,
        };
        TrajectorySpec { kind, duration, speed, start_static: 1.5, dwell, initial_yaw: 0.0 }
    }

    pub fn with_dwell(mut self, period: f64, duration: f64) -> Self {
        self.dwell = Some((period, duration));
        self
    }
}

/// Landmark world: wall/pillar point sets plus the ground plane.
#[derive(Debug, Clone)]
pub struct WorldModel {
    pub landmarks: Vec<Vector3<f64>>,
    pub ground_normal: Vector3<f64>,
    pub ground_d: f64,
    /// Fraction of returns whose Doppler is corrupted.
    pub outlier_fraction: f64,
}

/// Sensor rates, extrinsics, and noise configuration.
#[derive(Debug, Clone)]
pub struct SensorRig {
    pub imu_rate: f64,
    pub radar_rate: f64,
    pub extrinsics: RadarExtrinsics,
    pub sigma_gyro: f64,
    pub sigma_accel: f64,
    pub gyro_walk: f64,
    pub accel_walk: f64,
    pub sigma_doppler: f64,
    /// True initial biases `[accel; gyro]`.
    pub init_bias: Vector6<f64>,
    /// Points per scan after deterministic downsampling.
    pub max_points_per_scan: usize,
}

impl Default for SensorRig {
    fn default() -> Self {
        SensorRig {
            imu_rate: 200.0,
            radar_rate: 20.0,
            extrinsics: RadarExtrinsics {
                rotation: Rotation::identity(),
                lever_arm: Vector3::new(0.15, 0.0, 0.1),
            },
            sigma_gyro: 1e-3,
            sigma_accel: 1e-2,
            gyro_walk: 1e-5,
            accel_walk: 1e-4,
            sigma_doppler: 0.05,
            init_bias: Vector6::zeros(),
            max_points_per_scan: 350,
        }
    }
}

impl SensorRig {
    /// Zero noise, zero bias; the estimator still assumes its defaults.
    pub fn noise_free() -> Self {
        SensorRig {
            sigma_gyro: 0.0,
            sigma_accel: 0.0,
            gyro_walk: 0.0,
            accel_walk: 0.0,
            sigma_doppler: 0.0,
            ..Default::default()
        }
    }
}

/// Radar field of view: range and half-angles.
const MAX_RANGE: f64 = 30.0;
const MIN_RANGE: f64 = 0.5;
const AZIMUTH_HALF: f64 = 1.0471975511965976; // 60 deg
const ELEVATION_HALF: f64 = 0.3490658503988659; // 20 deg

/// Generated dataset: sensor streams plus ground truth at both rates.
#[derive(Debug, Clone)]
pub struct SimDataset {
    pub imu: Vec<ImuSample>,
    pub scans: Vec<RadarScan>,
    /// Truth at IMU rate.
    pub truth: Vec<(f64, NavState)>,
    /// Truth at scan timestamps.
    pub truth_scans: Vec<(f64, NavState)>,
    pub world: WorldModel,
    pub rig: SensorRig,
    pub duration: f64,
}

// ---------------------------------------------------------------------------
// path shapes

#[derive(Debug, Clone, Copy)]
enum Segment {
    Line { len: f64 },
    Arc { radius: f64, angle: f64 }, // signed angle, left positive
}

impl Segment {
    fn len(&self) -> f64 {
        match self {
            Segment::Line { len } => *len,
            Segment::Arc { radius, angle } => radius * angle.abs(),
        }
    }
}

struct Path {
    segments: Vec<Segment>,
    /// Start position and heading of each segment.
    starts: Vec<(Vector3<f64>, f64)>,
    total_len: f64,
    /// Whether arc length wraps around (closed loops).
    closed: bool,
}

impl Path {
    fn build(segments: Vec<Segment>, closed: bool) -> Path {
        let mut starts = Vec::with_capacity(segments.len());
        let mut pos = Vector3::zeros();
        let mut heading = 0.0f64;
        let mut total = 0.0;
        for seg in &segments {
            starts.push((pos, heading));
            match seg {
                Segment::Line { len } => {
                    pos += *len * Vector3::new(heading.cos(), heading.sin(), 0.0);
                }
                Segment::Arc { radius, angle } => {
                    // rotate about the center offset 90 deg from heading
                    let side = angle.signum();
                    let radius = *radius;
                    let center = pos
                        + radius
                            * Vector3::new(
                                (heading + side * std::f64::consts::FRAC_PI_2).cos(),
                                (heading + side * std::f64::consts::FRAC_PI_2).sin(),
                                0.0,
                            );
                    let start_angle = (pos - center).y.atan2((pos - center).x);
                    let end_angle = start_angle + angle;
                    pos = center + radius * Vector3::new(end_angle.cos(), end_angle.sin(), 0.0);
                    heading += angle;
                }
            }
            total += seg.len();
        }
        Path { segments, starts, total_len: total, closed }
    }

    /// Position, heading, curvature at arc length `s`.
    fn query(&self, s: f64) -> (Vector3<f64>, f64, f64) {
        let mut s = if self.closed { s.rem_euclid(self.total_len) } else { s.min(self.total_len) };
        for (seg, (start_pos, start_heading)) in self.segments.iter().zip(&self.starts) {
            let l = seg.len();
            if s <= l + 1e-12 {
                return match seg {
                    Segment::Line { .. } => {
                        let dir = Vector3::new(start_heading.cos(), start_heading.sin(), 0.0);
                        (start_pos + s * dir, *start_heading, 0.0)
                    }
                    Segment::Arc { radius, angle } => {
                        let side = angle.signum();
                        let radius = *radius;
                        let center = start_pos
                            + radius
                                * Vector3::new(
                                    (start_heading + side * std::f64::consts::FRAC_PI_2).cos(),
                                    (start_heading + side * std::f64::consts::FRAC_PI_2).sin(),
                                    0.0,
                                );
                        let swept = side * s / radius;
                        let start_angle = (start_pos - center).y.atan2((start_pos - center).x);
                        let a = start_angle + swept;
                        let pos = center + radius * Vector3::new(a.cos(), a.sin(), 0.0);
                        (pos, start_heading + swept, side / radius)
                    }
                };
            }
            s -= l;
        }
        let last = self.starts.last().expect("nonempty path");
        (last.0, last.1, 0.0)
    }

    fn bbox(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::new(f64::INFINITY, f64::INFINITY, 0.0);
        let mut hi = Vector3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0);
        let n = 400;
        for i in 0..=n {
            let (p, _, _) = self.query(self.total_len * i as f64 / n as f64);
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }
}

fn path_for(kind: TrajectoryKind) -> Path {
    let corner = 1.5;
    match kind {
        TrajectoryKind::Straight => Path::build(vec![Segment::Line { len: 500.0 }], false),
        TrajectoryKind::SquareLoop => {
            let side = 12.0;
            let straight = side - 2.0 * corner;
            let mut segs = Vec::new();
            for _ in 0..4 {
                segs.push(Segment::Line { len: straight });
                segs.push(Segment::Arc { radius: corner, angle: std::f64::consts::FRAC_PI_2 });
            }
            Path::build(segs, true)
        }
        TrajectoryKind::Corridor => {
            // out, U-turn, back, U-turn (closed racetrack)
            let leg = 18.0;
            Path::build(
                vec![
                    Segment::Line { len: leg },
                    Segment::Arc { radius: corner, angle: std::f64::consts::PI },
                    Segment::Line { len: leg },
                    Segment::Arc { radius: corner, angle: std::f64::consts::PI },
                ],
                true,
            )
        }
        TrajectoryKind::FigureEight => {
            let r = 5.0;
            Path::build(
                vec![
                    Segment::Arc { radius: r, angle: 2.0 * std::f64::consts::PI },
                    Segment::Arc { radius: r, angle: -2.0 * std::f64::consts::PI },
                ],
                true,
            )
        }
        TrajectoryKind::StationarySegments => {
            // short racetrack; dwells come from the speed profile
            let leg = 10.0;
            Path::build(
                vec![
                    Segment::Line { len: leg },
                    Segment::Arc { radius: corner, angle: std::f64::consts::PI },
                    Segment::Line { len: leg },
                    Segment::Arc { radius: corner, angle: std::f64::consts::PI },
                ],
                true,
            )
        }
    }
}

// ---------------------------------------------------------------------------
// speed profile

/// Piecewise-linear speed profile: (time, speed) knots.
struct SpeedProfile {
    knots: Vec<(f64, f64)>,
}

impl SpeedProfile {
    fn build(spec: &TrajectorySpec) -> SpeedProfile {
        let ramp = 1.5;
        let mut knots = vec![(0.0, 0.0), (spec.start_static, 0.0)];
        let mut t = spec.start_static + ramp;
        knots.push((t, spec.speed));
        if let Some((period, dwell)) = spec.dwell {
            while t + period + 2.0 * ramp < spec.duration {
                t += period;
                knots.push((t, spec.speed));
                knots.push((t + ramp, 0.0));
                knots.push((t + ramp + dwell, 0.0));
                knots.push((t + ramp + dwell + ramp, spec.speed));
                t += ramp + dwell + ramp;
            }
        }
        knots.push((spec.duration + 1.0, spec.speed));
        SpeedProfile { knots }
    }

    /// Speed and acceleration at `t`.
    fn query(&self, t: f64) -> (f64, f64) {
        let mut prev = self.knots[0];
        for &k in &self.knots[1..] {
            if t <= k.0 {
                let dt = k.0 - prev.0;
                if dt <= 1e-12 {
                    return (k.1, 0.0);
                }
                let a = (k.1 - prev.1) / dt;
                return (prev.1 + a * (t - prev.0), a);
            }
            prev = k;
        }
        (prev.1, 0.0)
    }
}

// ---------------------------------------------------------------------------
// worlds

fn hash_jitter(a: f64, b: f64, k: f64) -> f64 {
    0.045 * ((a * 12.9898 + b * 78.233 + k).sin() * 43758.5453).fract()
}

/// Rectangular room around the trajectory bbox: four textured walls plus
/// pillar columns for along-wall localization.
fn room_world(lo: Vector3<f64>, hi: Vector3<f64>, margin: f64) -> Vec<Vector3<f64>> {
    let (x0, x1) = (lo.x - margin, hi.x + margin);
    let (y0, y1) = (lo.y - margin, hi.y + margin);
    let mut pts = Vec::new();
    let z_levels = [0.15, 0.2, 0.25, 0.65, 0.7, 0.75, 1.15, 1.2, 1.25, 1.65, 1.7, 1.75];
    let step = 0.25;
    let mut push_wall = |fixed: f64, along0: f64, along1: f64, vertical: bool| {
        let mut a = along0;
        while a <= along1 {
            for z in z_levels {
                let dj = hash_jitter(a, z, fixed);
                let dz = hash_jitter(a, z, fixed + 7.0);
                if vertical {
                    pts.push(Vector3::new(fixed + dj, a, z + dz));
                } else {
                    pts.push(Vector3::new(a, fixed + dj, z + dz));
                }
            }
            a += step;
        }
    };
    push_wall(y0, x0, x1, false);
    push_wall(y1, x0, x1, false);
    push_wall(x0, y0, y1, true);
    push_wall(x1, y0, y1, true);
    // pillars along the walls, protruding inward
    let mut push_pillars = |fixed: f64, along0: f64, along1: f64, inward: f64, vertical: bool| {
        let mut a = along0 + 1.0;
        while a < along1 {
            for dx in [-0.06, 0.0, 0.06] {
                for z in z_levels {
                    let dz = hash_jitter(a + dx, z, fixed + 13.0);
                    if vertical {
                        pts.push(Vector3::new(fixed + inward, a + dx, z + dz));
                    } else {
                        pts.push(Vector3::new(a + dx, fixed + inward, z + dz));
                    }
                }
            }
            a += 2.5;
        }
    };
    push_pillars(y0, x0, x1, 0.45, false);
    push_pillars(y1, x0, x1, -0.45, false);
    push_pillars(x0, y0, y1, 0.45, true);
    push_pillars(x1, y0, y1, -0.45, true);
    pts
}

impl WorldModel {
    /// Default world for a trajectory kind: a room fitted around the path.
    pub fn for_path(kind: TrajectoryKind, duration: f64, speed: f64) -> WorldModel {
        let path = path_for(kind);
        let (lo, hi) = if matches!(kind, TrajectoryKind::Straight) {
            // only the reachable part of the long line
            let reach = (duration * speed).min(path.total_len);
            let (end, _, _) = path.query(reach);
            (
                Vector3::new(0.0f64.min(end.x), -1.0, 0.0),
                Vector3::new(end.x.max(1.0), 1.0, 0.0),
            )
        } else {
            path.bbox()
        };
        WorldModel {
            landmarks: room_world(lo, hi, 5.0),
            ground_normal: Vector3::z(),
            ground_d: 0.0,
            outlier_fraction: 0.1,
        }
    }

    pub fn without_outliers(mut self) -> WorldModel {
        self.outlier_fraction = 0.0;
        self
    }
}

// ---------------------------------------------------------------------------
// generation

/// Generates the dataset. Deterministic for a fixed seed.
pub fn generate(spec: &TrajectorySpec, world: &WorldModel, rig: &SensorRig, seed: u64) -> SimDataset {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let gravity = GravityModel::default();
    let dt = 1.0 / rig.imu_rate;
    let n = (spec.duration * rig.imu_rate).round() as usize;
    let scan_stride = (rig.imu_rate / rig.radar_rate).round() as usize;

    let path = path_for(spec.kind);
    let profile = SpeedProfile::build(spec);
    let yaw0 = Rotation::yaw(spec.initial_yaw);

    // analytic inputs at t=0
    let mut arclen = 0.0;
    let (_, h0, _) = path.query(0.0);
    let mut truth = NavState {
        pose: Pose::new(yaw0 * Rotation::yaw(h0), yaw0 * path.query(0.0).0),
        velocity: Vector3::zeros(),
        bias: rig.init_bias,
    };
    let mut bias_a = truth.bias.fixed_rows::<3>(0).into_owned();
    let mut bias_w = truth.bias.fixed_rows::<3>(3).into_owned();

    let mut imu = Vec::with_capacity(n);
    let mut truth_states = Vec::with_capacity(n);
    let mut scans = Vec::new();
    let mut truth_scans = Vec::new();

    let mut randn3 = |rng: &mut ChaCha12Rng| {
        Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        )
    };

    for k in 0..n {
        let t = k as f64 * dt;
        let (v, dvdt) = profile.query(t);
        let (_, heading, curvature) = path.query(arclen);
        let yaw = spec.initial_yaw + heading;
        let dir = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
        let normal = Vector3::new(-yaw.sin(), yaw.cos(), 0.0);
        let a_world = dvdt * dir + v * v * curvature * normal;
        let omega_body = Vector3::new(0.0, 0.0, v * curvature);

        // record truth BEFORE stepping so state k corresponds to sample k
        truth.bias = pack_bias(&bias_a, &bias_w);
        truth_states.push((t, truth));

        // measurements at sample k
        let specific = truth.pose.rotation.transpose() * (a_world - gravity.g);
        let gyro_noise = if rig.sigma_gyro > 0.0 {
            rig.sigma_gyro / dt.sqrt() * randn3(&mut rng)
        } else {
            Vector3::zeros()
        };
        let accel_noise = if rig.sigma_accel > 0.0 {
            rig.sigma_accel / dt.sqrt() * randn3(&mut rng)
        } else {
            Vector3::zeros()
        };
        let sample = ImuSample {
            t,
            gyro: omega_body + bias_w + gyro_noise,
            accel: specific + bias_a + accel_noise,
        };
        imu.push(sample);

        if k % scan_stride == 0 {
            let scan = render_scan(t, &truth, &omega_body, world, rig, &mut rng);
            scans.push(scan);
            truth_scans.push((t, truth));
        }

        // forward Euler on the discrete truth, consistent with the
        // preintegration sums
        let r_next = truth.pose.rotation * Rotation::exp(&(omega_body * dt));
        let p_next = truth.pose.translation + truth.velocity * dt + 0.5 * a_world * dt * dt;
        let v_next = truth.velocity + a_world * dt;
        truth = NavState { pose: Pose::new(r_next, p_next), velocity: v_next, bias: truth.bias };

        // bias random walks
        if rig.accel_walk > 0.0 {
            bias_a += rig.accel_walk * dt.sqrt() * randn3(&mut rng);
        }
        if rig.gyro_walk > 0.0 {
            bias_w += rig.gyro_walk * dt.sqrt() * randn3(&mut rng);
        }
        arclen += v * dt + 0.5 * dvdt * dt * dt;
    }

    SimDataset {
        imu,
        scans,
        truth: truth_states,
        truth_scans,
        world: world.clone(),
        rig: rig.clone(),
        duration: spec.duration,
    }
}

fn render_scan(
    t: f64,
    truth: &NavState,
    omega_body: &Vector3<f64>,
    world: &WorldModel,
    rig: &SensorRig,
    rng: &mut ChaCha12Rng,
) -> RadarScan {
    let body = truth.pose;
    let radar_pose = body.compose(&Pose::new(rig.extrinsics.rotation, rig.extrinsics.lever_arm));
    let radar_inv = radar_pose.inverse();
    // radar origin velocity in the world, then into the radar frame
    let v_world = truth.velocity + body.rotation * omega_body.cross(&rig.extrinsics.lever_arm);
    let v_radar = radar_pose.rotation.transpose() * v_world;

    let mut visible: Vec<Vector3<f64>> = Vec::new();
    for lm in &world.landmarks {
        let p = radar_inv.act(lm);
        let range = p.norm();
        if range < MIN_RANGE || range > MAX_RANGE {
            continue;
        }
        let az = p.y.atan2(p.x);
        let el = (p.z / range).asin();
        if az.abs() > AZIMUTH_HALF || el.abs() > ELEVATION_HALF {
            continue;
        }
        visible.push(p);
    }
    // deterministic downsampling
    let stride = (visible.len() / rig.max_points_per_scan).max(1);
    let mut points = Vec::with_capacity(visible.len() / stride + 1);
    for (i, p) in visible.into_iter().enumerate() {
        if i % stride != 0 {
            continue;
        }
        let u = p / p.norm();
        let mut doppler = -v_radar.dot(&u);
        if rig.sigma_doppler > 0.0 {
            doppler += rig.sigma_doppler * rng.sample::<f64, _>(StandardNormal);
        }
        if world.outlier_fraction > 0.0 && rng.random::<f64>() < world.outlier_fraction {
            doppler += rng.random_range(-2.0..2.0);
        }
        points.push(RadarPoint { position: p, doppler, intensity: None });
    }
    RadarScan { t, points }
}
