//! Voxelized point-to-distribution GICP registration.
//!
//! The target cloud is binned into voxels; each voxel with enough points
//! carries a mean and an eigenvalue-floored covariance. Registration runs
//! damped Gauss-Newton on the SE(3) right retraction, weighting each
//! correspondence by the inverse voxel covariance. The returned information
//! matrix is the Gauss-Newton Hessian at convergence.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

use crate::lie::{hat, Pose, Twist};

#[derive(Debug, Clone, Copy)]
pub struct VoxelDistribution {
    pub mean: Vector3<f64>,
    pub inv_cov: Matrix3<f64>,
    pub points: usize,
}

/// Sparse voxel grid with per-voxel Gaussian statistics.
#[derive(Debug, Clone)]
pub struct VoxelMap {
    resolution: f64,
    voxels: std::collections::BTreeMap<(i64, i64, i64), VoxelDistribution>,
}

impl VoxelMap {
    /// Bins `points` at `resolution`; voxels with fewer than `min_points`
    /// members get no distribution. Covariances are regularized by flooring
    /// eigenvalues at `eig_floor`.
    pub fn build(points: &[Vector3<f64>], resolution: f64, min_points: usize, eig_floor: f64) -> Self {
        let mut bins: std::collections::BTreeMap<(i64, i64, i64), Vec<Vector3<f64>>> =
            std::collections::BTreeMap::new();
        for p in points {
            bins.entry(Self::key_of(p, resolution)).or_default().push(*p);
        }
        let mut voxels = std::collections::BTreeMap::new();
        for (key, members) in bins {
            if members.len() < min_points {
                continue;
            }
            let n = members.len() as f64;
            let mean: Vector3<f64> = members.iter().sum::<Vector3<f64>>() / n;
            let mut cov = Matrix3::<f64>::zeros();
            for p in &members {
                let d = p - mean;
                cov += d * d.transpose();
            }
            cov /= n;
            let eig = cov.symmetric_eigen();
            let mut inv = Matrix3::<f64>::zeros();
            for i in 0..3 {
                let lam = eig.eigenvalues[i].max(eig_floor);
                let v = eig.eigenvectors.column(i);
                inv += (1.0 / lam) * v * v.transpose();
            }
            voxels.insert(key, VoxelDistribution { mean, inv_cov: inv, points: members.len() });
        }
        VoxelMap { resolution, voxels }
    }

    fn key_of(p: &Vector3<f64>, resolution: f64) -> (i64, i64, i64) {
        (
            (p.x / resolution).floor() as i64,
            (p.y / resolution).floor() as i64,
            (p.z / resolution).floor() as i64,
        )
    }

    pub fn lookup(&self, p: &Vector3<f64>) -> Option<&VoxelDistribution> {
        self.voxels.get(&Self::key_of(p, self.resolution))
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GicpConfig {
    pub voxel_resolution: f64,
    pub min_voxel_points: usize,
    pub eig_floor: f64,
    pub max_iterations: usize,
    /// Mean squared Euclidean point-to-mean error gate [m^2].
    pub max_fitness: f64,
    pub min_inliers: usize,
    /// Correction-magnitude gates on `Log(init^-1 estimate)`.
    pub max_correction_trans: f64,
    pub max_correction_rot: f64,
    /// Correspondences farther than this from the voxel mean are ignored.
    pub max_correspondence_dist: f64,
}

impl Default for GicpConfig {
    fn default() -> Self {
        GicpConfig {
            voxel_resolution: 0.5,
            min_voxel_points: 5,
            eig_floor: 1e-3,
            max_iterations: 50,
            max_fitness: 0.25,
            min_inliers: 20,
            max_correction_trans: 0.5,
            max_correction_rot: 10.0f64.to_radians(),
            max_correspondence_dist: 1.0,
        }
    }
}

/// Accepted registration: refined transform, information, and diagnostics.
#[derive(Debug, Clone)]
pub struct GicpResult {
    pub transform: Pose,
    pub information: Matrix6<f64>,
    /// Mean squared point-to-distribution (Euclidean) error over matches.
    pub fitness: f64,
    pub inliers: usize,
    /// `Log(init^-1 transform)`.
    pub correction: Twist,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GicpReject {
    NoCorrespondences,
    NotConverged,
    Fitness,
    Inliers,
    Correction,
}

impl std::fmt::Display for GicpReject {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            GicpReject::NoCorrespondences => "no correspondences",
            GicpReject::NotConverged => "did not converge",
            GicpReject::Fitness => "fitness gate",
            GicpReject::Inliers => "inlier gate",
            GicpReject::Correction => "correction-magnitude gate",
        };
        f.write_str(s)
    }
}

/// Registers `source` onto `target`, refining `init`.
pub fn register(
    source: &[Vector3<f64>],
    target: &VoxelMap,
    init: &Pose,
    cfg: &GicpConfig,
) -> Result<GicpResult, GicpReject> {
    let mut transform = *init;
    let mut lambda = 1e-6;
    let mut converged = false;
    let mut hessian = Matrix6::<f64>::zeros();

    for _ in 0..cfg.max_iterations {
        let mut h_rr = Matrix3::<f64>::zeros();
        let mut h_rt = Matrix3::<f64>::zeros();
        let mut h_tt = Matrix3::<f64>::zeros();
        let mut g_r = Vector3::<f64>::zeros();
        let mut g_t = Vector3::<f64>::zeros();
        let mut matches = 0;
        let r = *transform.rotation.matrix();
        for p in source {
            let q = transform.act(p);
            let Some(voxel) = target.lookup(&q) else { continue };
            let d = q - voxel.mean;
            if d.norm() > cfg.max_correspondence_dist {
                continue;
            }
            matches += 1;
            // d(T p)/d[phi; rho] = [-R hat(p) | R]
            let jr = -r * hat(p);
            let w = voxel.inv_cov;
            let wjr = w * jr;
            let wr = w * r;
            h_rr += jr.transpose() * wjr;
            h_rt += jr.transpose() * wr;
            h_tt += r.transpose() * wr;
            let gd = w * d;
            g_r += jr.transpose() * gd;
            g_t += r.transpose() * gd;
        }
        if matches == 0 {
            return Err(GicpReject::NoCorrespondences);
        }
        let mut h = Matrix6::<f64>::zeros();
        h.fixed_view_mut::<3, 3>(0, 0).copy_from(&h_rr);
        h.fixed_view_mut::<3, 3>(0, 3).copy_from(&h_rt);
        h.fixed_view_mut::<3, 3>(3, 0).copy_from(&h_rt.transpose());
        h.fixed_view_mut::<3, 3>(3, 3).copy_from(&h_tt);
        let mut g = Vector6::<f64>::zeros();
        g.fixed_rows_mut::<3>(0).copy_from(&g_r);
        g.fixed_rows_mut::<3>(3).copy_from(&g_t);

        hessian = h;
        let damped = h + Matrix6::identity() * lambda;
        let Some(chol) = damped.cholesky() else {
            lambda *= 10.0;
            continue;
        };
        let dx = chol.solve(&(-g));
        transform = transform.retract(&dx);
        lambda = (lambda / 10.0).max(1e-9);
        if dx.norm() < 1e-8 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(GicpReject::NotConverged);
    }

    // diagnostics at the converged transform
    let mut fitness = 0.0;
    let mut inliers = 0;
    for p in source {
        let q = transform.act(p);
        let Some(voxel) = target.lookup(&q) else { continue };
        let d = q - voxel.mean;
        if d.norm() > cfg.max_correspondence_dist {
            continue;
        }
        fitness += d.norm_squared();
        inliers += 1;
    }
    if inliers == 0 {
        return Err(GicpReject::NoCorrespondences);
    }
    fitness /= inliers as f64;
    let correction = init.inverse().compose(&transform).log();

    if fitness > cfg.max_fitness {
        return Err(GicpReject::Fitness);
    }
    if inliers < cfg.min_inliers {
        return Err(GicpReject::Inliers);
    }
    let rot_corr = correction.fixed_rows::<3>(0).norm();
    let trans_corr = correction.fixed_rows::<3>(3).norm();
    if trans_corr > cfg.max_correction_trans || rot_corr > cfg.max_correction_rot {
        return Err(GicpReject::Correction);
    }

    Ok(GicpResult { transform, information: hessian, fitness, inliers, correction })
}

