//! Manifold-aware nonlinear factor graph with damped Gauss-Newton solving,
//! marginal covariance extraction, and warm-started incremental re-solve.
//!
//! Variables live on `SE(3) x R^3 x R^6` (pose, velocity, bias); updates use
//! the right-multiplicative retraction `T <- T * Exp(dx)` for poses and
//! plain addition for vectors. Factors provide a residual and, optionally,
//! analytic Jacobian blocks; anything without analytic Jacobians is
//! linearized by central differences.

pub mod linalg;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::{DMatrix, DVector, Vector3, Vector6};
use thiserror::Error;

use crate::lie::Pose;
use linalg::SkylineMatrix;

/// Variable kind; determines the tangent dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VarKind {
    Pose,
    Velocity,
    Bias,
}

impl VarKind {
    pub fn dim(&self) -> usize {
        match self {
            VarKind::Pose => 6,
            VarKind::Velocity => 3,
            VarKind::Bias => 6,
        }
    }
}

/// Graph variable identifier. Ordering is by `(index, kind)` so that the
/// variables of one time step stay adjacent in the elimination order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Key {
    pub kind: VarKind,
    pub index: u32,
}

impl Key {
    pub fn pose(index: u32) -> Key {
        Key { kind: VarKind::Pose, index }
    }
    pub fn velocity(index: u32) -> Key {
        Key { kind: VarKind::Velocity, index }
    }
    pub fn bias(index: u32) -> Key {
        Key { kind: VarKind::Bias, index }
    }
    pub fn dim(&self) -> usize {
        self.kind.dim()
    }
}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.index, self.kind).cmp(&(other.index, other.kind))
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.kind {
            VarKind::Pose => 'P',
            VarKind::Velocity => 'V',
            VarKind::Bias => 'B',
        };
        write!(f, "{}{}", tag, self.index)
    }
}

/// Manifold element stored per variable.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Pose(Pose),
    Vec3(Vector3<f64>),
    Vec6(Vector6<f64>),
}

impl Value {
    pub fn dim(&self) -> usize {
        match self {
            Value::Pose(_) => 6,
            Value::Vec3(_) => 3,
            Value::Vec6(_) => 6,
        }
    }

    pub fn kind(&self) -> VarKind {
        match self {
            Value::Pose(_) => VarKind::Pose,
            Value::Vec3(_) => VarKind::Velocity,
            Value::Vec6(_) => VarKind::Bias,
        }
    }

    pub fn as_pose(&self) -> &Pose {
        match self {
            Value::Pose(p) => p,
            _ => panic!("value is not a pose"),
        }
    }

    pub fn as_vec3(&self) -> &Vector3<f64> {
        match self {
            Value::Vec3(v) => v,
            _ => panic!("value is not a 3-vector"),
        }
    }

    pub fn as_vec6(&self) -> &Vector6<f64> {
        match self {
            Value::Vec6(v) => v,
            _ => panic!("value is not a 6-vector"),
        }
    }

    /// Local retraction by a tangent slice of matching dimension.
    pub fn retract(&self, dx: &[f64]) -> Value {
        match self {
            Value::Pose(p) => {
                let xi = crate::lie::Twist::from_column_slice(dx);
                Value::Pose(p.retract(&xi))
            }
            Value::Vec3(v) => Value::Vec3(v + Vector3::from_column_slice(dx)),
            Value::Vec6(v) => Value::Vec6(v + Vector6::from_column_slice(dx)),
        }
    }
}

/// Assignment of values to keys.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Values {
    map: BTreeMap<Key, Value>,
}

impl Values {
    pub fn new() -> Self {
        Values { map: BTreeMap::new() }
    }

    pub fn insert(&mut self, key: Key, value: Value) {
        debug_assert_eq!(key.kind.dim(), value.dim(), "kind/value dim mismatch");
        self.map.insert(key, value);
    }

    pub fn insert_pose(&mut self, key: Key, pose: Pose) {
        self.insert(key, Value::Pose(pose));
    }

    pub fn insert_vec3(&mut self, key: Key, v: Vector3<f64>) {
        self.insert(key, Value::Vec3(v));
    }

    pub fn insert_vec6(&mut self, key: Key, v: Vector6<f64>) {
        self.insert(key, Value::Vec6(v));
    }

    pub fn get(&self, key: &Key) -> Option<&Value> {
        self.map.get(key)
    }

    pub fn pose(&self, key: &Key) -> &Pose {
        self.map.get(key).expect("missing key").as_pose()
    }

    pub fn vec3(&self, key: &Key) -> &Vector3<f64> {
        self.map.get(key).expect("missing key").as_vec3()
    }

    pub fn vec6(&self, key: &Key) -> &Vector6<f64> {
        self.map.get(key).expect("missing key").as_vec6()
    }

    pub fn contains(&self, key: &Key) -> bool {
        self.map.contains_key(key)
    }

    pub fn remove(&mut self, key: &Key) -> Option<Value> {
        self.map.remove(key)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &Key> {
        self.map.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Key, &Value)> {
        self.map.iter()
    }

    fn retract_all(&self, layout: &Layout, dx: &[f64]) -> Values {
        let mut out = self.clone();
        for entry in &layout.entries {
            let v = self.map.get(&entry.key).expect("layout key present");
            out.map
                .insert(entry.key, v.retract(&dx[entry.offset..entry.offset + entry.dim]));
        }
        out
    }
}

/// Residual model attached to a factor.
pub trait Residual: Send + Sync {
    fn type_name(&self) -> &'static str;
    fn keys(&self) -> &[Key];
    fn dim(&self) -> usize;
    /// Residual given the factor's variables, in key order.
    fn eval(&self, vals: &[&Value]) -> DVector<f64>;
    /// Analytic Jacobian blocks w.r.t. each key's tangent, or `None` to fall
    /// back to central finite differences.
    fn jacobians(&self, _vals: &[&Value]) -> Option<Vec<DMatrix<f64>>> {
        None
    }
}

/// Central-difference Jacobians (step 1e-6) under the local retraction.
pub fn numeric_jacobians(res: &dyn Residual, vals: &[&Value]) -> Vec<DMatrix<f64>> {
    const STEP: f64 = 1e-6;
    let dim = res.dim();
    let mut out = Vec::with_capacity(vals.len());
    for (vi, v) in vals.iter().enumerate() {
        let vdim = v.dim();
        let mut jac = DMatrix::<f64>::zeros(dim, vdim);
        let mut dx = vec![0.0; vdim];
        for c in 0..vdim {
            dx[c] = STEP;
            let plus = v.retract(&dx);
            dx[c] = -STEP;
            let minus = v.retract(&dx);
            dx[c] = 0.0;
            let mut vp: Vec<&Value> = vals.to_vec();
            vp[vi] = &plus;
            let rp = res.eval(&vp);
            vp[vi] = &minus;
            let rm = res.eval(&vp);
            jac.set_column(c, &((rp - rm) / (2.0 * STEP)));
        }
        out.push(jac);
    }
    out
}

/// Robust reweighting applied to the whitened residual norm.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum RobustKernel {
    #[default]
    None,
    Cauchy {
        scale: f64,
    },
}

impl RobustKernel {
    /// IRLS weight as a function of the whitened squared norm.
    pub fn weight(&self, sq_norm: f64) -> f64 {
        match self {
            RobustKernel::None => 1.0,
            RobustKernel::Cauchy { scale } => 1.0 / (1.0 + sq_norm / (scale * scale)),
        }
    }

    /// Robust cost of a whitened squared norm.
    pub fn cost(&self, sq_norm: f64) -> f64 {
        match self {
            RobustKernel::None => sq_norm,
            RobustKernel::Cauchy { scale } => {
                let c2 = scale * scale;
                c2 * (1.0 + sq_norm / c2).ln()
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("noise covariance is not positive definite")]
    IndefiniteNoise,
    #[error("noise covariance ill-conditioned: condition number {cond:.3e}")]
    IllConditionedNoise { cond: f64 },
    #[error("noise dimension {got} does not match residual dimension {want}")]
    NoiseDimMismatch { got: usize, want: usize },
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("initial values missing key {key}")]
    MissingValue { key: Key },
    #[error("normal equations singular or indefinite at iteration {iteration}")]
    Singular { iteration: usize },
    #[error("information matrix rank-deficient: variable {key} unconstrained")]
    RankDeficient { key: Key },
}

/// Residual plus noise model plus optional robust kernel.
pub struct Factor {
    residual: Box<dyn Residual>,
    sqrt_info: DMatrix<f64>,
    kernel: RobustKernel,
}

impl Factor {
    /// Gaussian factor from a residual and its covariance.
    pub fn gaussian<R: Residual + 'static>(residual: R, covariance: DMatrix<f64>) -> Result<Factor, GraphError> {
        Self::robust(residual, covariance, RobustKernel::None)
    }

    pub fn robust<R: Residual + 'static>(
        residual: R,
        covariance: DMatrix<f64>,
        kernel: RobustKernel,
    ) -> Result<Factor, GraphError> {
        let d = residual.dim();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(GraphError::NoiseDimMismatch { got: covariance.nrows(), want: d });
        }
        let sym = (&covariance + covariance.transpose()) * 0.5;
        let eig = sym.clone().symmetric_eigenvalues();
        let max_e = eig.max();
        let min_e = eig.min();
        if min_e <= 0.0 {
            return Err(GraphError::IndefiniteNoise);
        }
        let cond = max_e / min_e;
        if cond >= 1e12 {
            return Err(GraphError::IllConditionedNoise { cond });
        }
        let chol = sym.cholesky().ok_or(GraphError::IndefiniteNoise)?;
        // whitener W = L^-1 so that ||W r||^2 = r^T Sigma^-1 r
        let mut sqrt_info = DMatrix::<f64>::identity(d, d);
        chol.l().solve_lower_triangular_mut(&mut sqrt_info);
        Ok(Factor { residual: Box::new(residual), sqrt_info, kernel })
    }

    /// Factor weighted directly by an information matrix (PSD; zero rows are
    /// allowed and contribute nothing).
    pub fn from_information<R: Residual + 'static>(
        residual: R,
        information: DMatrix<f64>,
    ) -> Result<Factor, GraphError> {
        let d = residual.dim();
        if information.nrows() != d || information.ncols() != d {
            return Err(GraphError::NoiseDimMismatch { got: information.nrows(), want: d });
        }
        let sym = (&information + information.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        let mut sqrt = DMatrix::<f64>::zeros(d, d);
        for (i, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam < -1e-9 {
                return Err(GraphError::IndefiniteNoise);
            }
            let s = lam.max(0.0).sqrt();
            for r in 0..d {
                sqrt[(i, r)] = s * eig.eigenvectors[(r, i)];
            }
        }
        Ok(Factor { residual: Box::new(residual), sqrt_info: sqrt, kernel: RobustKernel::None })
    }

    pub fn keys(&self) -> &[Key] {
        self.residual.keys()
    }

    pub fn dim(&self) -> usize {
        self.residual.dim()
    }

    pub fn type_name(&self) -> &'static str {
        self.residual.type_name()
    }

    fn gather<'a>(&self, values: &'a Values) -> Vec<&'a Value> {
        self.residual
            .keys()
            .iter()
            .map(|k| values.get(k).expect("missing key"))
            .collect()
    }

    /// Whitened residual at the given values.
    pub fn whitened_residual(&self, values: &Values) -> DVector<f64> {
        let vals = self.gather(values);
        &self.sqrt_info * self.residual.eval(&vals)
    }

    /// Robust cost contribution.
    pub fn cost(&self, values: &Values) -> f64 {
        let r = self.whitened_residual(values);
        self.kernel.cost(r.norm_squared())
    }

    /// Whitened, kernel-weighted residual and Jacobian blocks; this is what
    /// the normal equations consume.
    pub fn linearize(&self, values: &Values) -> (DVector<f64>, Vec<DMatrix<f64>>) {
        let vals = self.gather(values);
        let raw_r = self.residual.eval(&vals);
        let raw_j = self
            .residual
            .jacobians(&vals)
            .unwrap_or_else(|| numeric_jacobians(self.residual.as_ref(), &vals));
        let mut r = &self.sqrt_info * raw_r;
        let mut js: Vec<DMatrix<f64>> = raw_j.into_iter().map(|j| &self.sqrt_info * j).collect();
        let w = self.kernel.weight(r.norm_squared()).sqrt();
        if w != 1.0 {
            r *= w;
            for j in &mut js {
                *j *= w;
            }
        }
        (r, js)
    }
}

/// Identifier of a factor inside a graph.
pub type FactorId = u64;

#[derive(Debug, Clone, Copy)]
struct LayoutEntry {
    key: Key,
    offset: usize,
    dim: usize,
}

struct Layout {
    entries: Vec<LayoutEntry>,
    index: BTreeMap<Key, usize>,
    total: usize,
}

impl Layout {
    fn build(keys: &BTreeSet<Key>) -> Layout {
        let mut entries = Vec::with_capacity(keys.len());
        let mut index = BTreeMap::new();
        let mut offset = 0;
        for &key in keys {
            index.insert(key, entries.len());
            entries.push(LayoutEntry { key, offset, dim: key.dim() });
            offset += key.dim();
        }
        Layout { entries, index, total: offset }
    }

    fn offset_of(&self, key: &Key) -> usize {
        self.entries[self.index[key]].offset
    }

    /// Maps a scalar row back to the variable owning it.
    fn key_of_row(&self, row: usize) -> Key {
        for e in &self.entries {
            if row < e.offset + e.dim {
                return e.key;
            }
        }
        self.entries.last().expect("nonempty layout").key
    }
}

/// Solver configuration: damped Gauss-Newton with a Levenberg-style lambda.
#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub damping_init: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { max_iters: 50, rel_tol: 1e-6, abs_tol: 1e-8, damping_init: 1e-4 }
    }
}

const LAMBDA_MAX: f64 = 1e10;
const LAMBDA_MIN: f64 = 1e-12;

/// Result of a solve.
#[derive(Debug, Clone)]
pub struct Solution {
    pub values: Values,
    pub final_cost: f64,
    pub iterations: usize,
}

/// Nonlinear factor graph over manifold variables.
#[derive(Default)]
pub struct FactorGraph {
    factors: BTreeMap<FactorId, Factor>,
    next_id: FactorId,
}

impl FactorGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, factor: Factor) -> FactorId {
        let id = self.next_id;
        self.next_id += 1;
        self.factors.insert(id, factor);
        id
    }

    pub fn remove(&mut self, id: FactorId) -> Option<Factor> {
        self.factors.remove(&id)
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn clear(&mut self) {
        self.factors.clear();
    }

    pub fn factors(&self) -> impl Iterator<Item = (&FactorId, &Factor)> {
        self.factors.iter()
    }

    /// Set of keys referenced by any factor.
    pub fn keys(&self) -> BTreeSet<Key> {
        let mut set = BTreeSet::new();
        for f in self.factors.values() {
            set.extend(f.keys().iter().copied());
        }
        set
    }

    /// Total robust cost at the given values.
    pub fn cost(&self, values: &Values) -> f64 {
        self.factors.values().map(|f| f.cost(values)).sum()
    }

    /// Text adjacency listing, one factor per line, for golden-file tests.
    pub fn dump_topology(&self) -> String {
        let mut out = String::new();
        for f in self.factors.values() {
            let keys: Vec<String> = f.keys().iter().map(|k| k.to_string()).collect();
            out.push_str(&format!("{} keys=[{}] dim={}\n", f.type_name(), keys.join(","), f.dim()));
        }
        out
    }

    fn check_values(&self, values: &Values) -> Result<(), SolveError> {
        for f in self.factors.values() {
            for k in f.keys() {
                if !values.contains(k) {
                    return Err(SolveError::MissingValue { key: *k });
                }
            }
        }
        Ok(())
    }

    /// Assembles the Gauss-Newton normal equations `H dx = -g` at the given
    /// linearization point, returning `(H, g)` in the layout's ordering.
    fn assemble(&self, values: &Values, layout: &Layout) -> (SkylineMatrix, DVector<f64>) {
        // envelope: each scalar row reaches back to the smallest offset of
        // any key sharing a factor with the row's variable
        let mut row_start: Vec<usize> = (0..layout.total).collect();
        for f in self.factors.values() {
            let min_off = f.keys().iter().map(|k| layout.offset_of(k)).min().unwrap_or(0);
            for k in f.keys() {
                let off = layout.offset_of(k);
                for r in 0..k.dim() {
                    row_start[off + r] = row_start[off + r].min(min_off);
                }
            }
        }
        let mut h = SkylineMatrix::from_envelope(row_start);
        let mut g = DVector::<f64>::zeros(layout.total);

        for f in self.factors.values() {
            let (r, js) = f.linearize(values);
            let offs: Vec<usize> = f.keys().iter().map(|k| layout.offset_of(k)).collect();
            for (a, ja) in js.iter().enumerate() {
                // gradient block: J_a^T r
                let grad = ja.transpose() * &r;
                for (i, gi) in grad.iter().enumerate() {
                    g[offs[a] + i] += gi;
                }
                // Hessian blocks: J_a^T J_b for b <= a in layout order
                for (b, jb) in js.iter().enumerate() {
                    let block = ja.transpose() * jb;
                    for i in 0..block.nrows() {
                        let row = offs[a] + i;
                        for j in 0..block.ncols() {
                            let col = offs[b] + j;
                            if col <= row {
                                h.add(row, col, block[(i, j)]);
                            }
                        }
                    }
                }
            }
        }
        (h, g)
    }

    /// Damped Gauss-Newton. Cost is non-increasing across accepted steps;
    /// convergence when the relative cost decrease drops below `rel_tol` or
    /// the update norm below `abs_tol`.
    pub fn solve(&self, initial: &Values, cfg: &SolverConfig) -> Result<Solution, SolveError> {
        self.check_values(initial)?;
        let keys = self.keys();
        if keys.is_empty() {
            return Ok(Solution { values: initial.clone(), final_cost: 0.0, iterations: 0 });
        }
        let layout = Layout::build(&keys);
        let mut values = initial.clone();
        let mut cost = self.cost(&values);
        let mut lambda = cfg.damping_init;
        let mut iterations = 0;

        for iter in 0..cfg.max_iters {
            let (h, g) = self.assemble(&values, &layout);
            loop {
                let mut damped = h.clone();
                damped.add_diagonal(lambda);
                let chol = match damped.cholesky() {
                    Ok(c) => c,
                    Err(_) => {
                        lambda *= 10.0;
                        if lambda > LAMBDA_MAX {
                            return Err(SolveError::Singular { iteration: iter });
                        }
                        continue;
                    }
                };
                let mut dx: Vec<f64> = (-&g).as_slice().to_vec();
                chol.solve_in_place(&mut dx);
                if dx.iter().any(|x| !x.is_finite()) {
                    return Err(SolveError::Singular { iteration: iter });
                }
                let candidate = values.retract_all(&layout, &dx);
                let new_cost = self.cost(&candidate);
                if new_cost.is_finite() && new_cost <= cost {
                    let step_norm = dx.iter().map(|x| x * x).sum::<f64>().sqrt();
                    values = candidate;
                    let decrease = cost - new_cost;
                    cost = new_cost;
                    lambda = (lambda / 10.0).max(LAMBDA_MIN);
                    iterations = iter + 1;
                    if decrease < cfg.rel_tol * cost.max(1e-12) || step_norm < cfg.abs_tol {
                        return Ok(Solution { values, final_cost: cost, iterations });
                    }
                    break;
                }
                lambda *= 10.0;
                if lambda > LAMBDA_MAX {
                    // no descent direction left; current point is the optimum
                    return Ok(Solution { values, final_cost: cost, iterations });
                }
            }
        }
        Ok(Solution { values, final_cost: cost, iterations })
    }

    /// Dense marginal covariance block for `keys` at the optimum: the
    /// corresponding block of `(J^T Sigma^-1 J)^-1`.
    pub fn marginal_covariance(&self, optimum: &Values, keys: &[Key]) -> Result<DMatrix<f64>, SolveError> {
        self.check_values(optimum)?;
        let all = self.keys();
        let layout = Layout::build(&all);
        let (h, _) = self.assemble(optimum, &layout);
        let chol = h.cholesky().map_err(|row| SolveError::RankDeficient { key: layout.key_of_row(row) })?;

        let sel: Vec<usize> = keys
            .iter()
            .flat_map(|k| {
                let off = layout.offset_of(k);
                (0..k.dim()).map(move |i| off + i)
            })
            .collect();
        let d = sel.len();
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for (c, &col) in sel.iter().enumerate() {
            let mut e = vec![0.0; layout.total];
            e[col] = 1.0;
            chol.solve_in_place(&mut e);
            for (r, &row) in sel.iter().enumerate() {
                cov[(r, c)] = e[row];
            }
        }
        // symmetrize against round-off
        let cov = (&cov + cov.transpose()) * 0.5;
        Ok(cov)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::{BetweenPose, PosePrior, Vec3Prior};
    use crate::lie::{Rotation, Twist};
    use nalgebra::Matrix3;

    fn pose_xyz(x: f64, y: f64, z: f64) -> Pose {
        Pose::new(Rotation::identity(), Vector3::new(x, y, z))
    }

    fn eye(n: usize) -> DMatrix<f64> {
        DMatrix::identity(n, n)
    }

    #[test]
    fn prior_only_map_recovers_anchor() {
        let anchor = Pose::new(
            Rotation::exp(&Vector3::new(0.2, -0.1, 0.5)),
            Vector3::new(1.0, 2.0, -0.5),
        );
        let mut graph = FactorGraph::new();
        graph.add(PosePrior::factor(Key::pose(0), anchor, eye(6) * 0.01).unwrap());
        let mut init = Values::new();
        init.insert_pose(Key::pose(0), Pose::identity());
        let sol = graph.solve(&init, &SolverConfig::default()).unwrap();
        let t = sol.values.pose(&Key::pose(0));
        assert!(t.rotation.angle_to(&anchor.rotation) < 1e-9);
        assert!((t.translation - anchor.translation).norm() < 1e-9);
        assert!(sol.final_cost < 1e-16);
    }

    #[test]
    fn chain_of_exact_constraints() {
        let first = pose_xyz(0.0, 0.0, 0.0);
        let mut xi = Twist::zeros();
        xi[2] = 0.3; // yaw
        xi[3] = 1.0;
        let rel = Pose::exp(&xi);
        let mut graph = FactorGraph::new();
        graph.add(PosePrior::factor(Key::pose(0), first, eye(6) * 1e-4).unwrap());
        graph.add(BetweenPose::factor(Key::pose(0), Key::pose(1), rel, eye(6) * 1e-4).unwrap());
        let mut init = Values::new();
        init.insert_pose(Key::pose(0), pose_xyz(0.1, -0.1, 0.2));
        init.insert_pose(Key::pose(1), pose_xyz(0.5, 0.5, 0.5));
        let sol = graph.solve(&init, &SolverConfig::default()).unwrap();
        let expect = first.compose(&rel);
        let got = sol.values.pose(&Key::pose(1));
        assert!(got.rotation.angle_to(&expect.rotation) < 1e-9);
        assert!((got.translation - expect.translation).norm() < 1e-9);
    }

    #[test]
    fn overdetermined_priors_give_weighted_mean() {
        // three equal-sigma priors at 1, 2, 3 -> optimum 2 (componentwise)
        let mut graph = FactorGraph::new();
        for (i, x) in [1.0, 2.0, 3.0].iter().enumerate() {
            let _ = i;
            graph.add(
                Vec3Prior::factor(Key::velocity(0), Vector3::new(*x, 0.0, 0.0), eye(3) * 0.25)
                    .unwrap(),
            );
        }
        let mut init = Values::new();
        init.insert_vec3(Key::velocity(0), Vector3::zeros());
        let sol = graph.solve(&init, &SolverConfig::default()).unwrap();
        assert!((sol.values.vec3(&Key::velocity(0)) - Vector3::new(2.0, 0.0, 0.0)).norm() < 1e-10);
    }

    #[test]
    fn marginal_of_single_prior_is_its_covariance() {
        let cov = {
            let mut c = eye(3);
            c[(0, 0)] = 0.04;
            c[(1, 1)] = 0.09;
            c[(2, 2)] = 0.25;
            c[(0, 1)] = 0.01;
            c[(1, 0)] = 0.01;
            c
        };
        let mut graph = FactorGraph::new();
        graph.add(Vec3Prior::factor(Key::velocity(0), Vector3::zeros(), cov.clone()).unwrap());
        let mut init = Values::new();
        init.insert_vec3(Key::velocity(0), Vector3::zeros());
        let sol = graph.solve(&init, &SolverConfig::default()).unwrap();
        let marg = graph.marginal_covariance(&sol.values, &[Key::velocity(0)]).unwrap();
        assert!((marg - cov).norm() < 1e-9);
    }

    #[test]
    fn independent_priors_have_zero_cross_block() {
        let mut graph = FactorGraph::new();
        graph.add(Vec3Prior::factor(Key::velocity(0), Vector3::zeros(), eye(3) * 0.1).unwrap());
        graph.add(Vec3Prior::factor(Key::velocity(1), Vector3::zeros(), eye(3) * 0.2).unwrap());
        let mut init = Values::new();
        init.insert_vec3(Key::velocity(0), Vector3::zeros());
        init.insert_vec3(Key::velocity(1), Vector3::zeros());
        let sol = graph.solve(&init, &SolverConfig::default()).unwrap();
        let marg = graph
            .marginal_covariance(&sol.values, &[Key::velocity(0), Key::velocity(1)])
            .unwrap();
        let cross = marg.view((0, 3), (3, 3));
        assert!(cross.norm() < 1e-12);
    }

    /// Linear relative-offset factor used by the toy-chain tests.
    pub struct VecBetween {
        pub keys: [Key; 2],
        pub delta: Vector3<f64>,
    }

    impl Residual for VecBetween {
        fn type_name(&self) -> &'static str {
            "VecBetween"
        }
        fn keys(&self) -> &[Key] {
            &self.keys
        }
        fn dim(&self) -> usize {
            3
        }
        fn eval(&self, vals: &[&Value]) -> DVector<f64> {
            let a = vals[0].as_vec3();
            let b = vals[1].as_vec3();
            DVector::from_column_slice((b - a - self.delta).as_slice())
        }
        fn jacobians(&self, _vals: &[&Value]) -> Option<Vec<DMatrix<f64>>> {
            Some(vec![-DMatrix::identity(3, 3), DMatrix::identity(3, 3)])
        }
    }

    #[test]
    fn chain_marginal_adds_covariances() {
        // prior(x0, Sa) + between(x0, x1, Sb) -> marginal(x1) = Sa + Sb
        let sa = eye(3) * 0.04;
        let sb = eye(3) * 0.09;
        let mut graph = FactorGraph::new();
        graph.add(Vec3Prior::factor(Key::velocity(0), Vector3::zeros(), sa.clone()).unwrap());
        graph.add(
            Factor::gaussian(
                VecBetween { keys: [Key::velocity(0), Key::velocity(1)], delta: Vector3::x() },
                sb.clone(),
            )
            .unwrap(),
        );
        let mut init = Values::new();
        init.insert_vec3(Key::velocity(0), Vector3::zeros());
        init.insert_vec3(Key::velocity(1), Vector3::zeros());
        let sol = graph.solve(&init, &SolverConfig::default()).unwrap();
        let marg = graph.marginal_covariance(&sol.values, &[Key::velocity(1)]).unwrap();
        assert!((marg - (sa + sb)).norm() < 1e-9);
    }

    #[test]
    fn cauchy_weight_is_one_at_zero_residual() {
        let k = RobustKernel::Cauchy { scale: 1.0 };
        assert_eq!(k.weight(0.0), 1.0);
        assert!(k.weight(4.0) < 1.0);
        assert_eq!(RobustKernel::None.weight(100.0), 1.0);
    }

    #[test]
    fn prior_residual_zero_at_anchor() {
        let anchor = pose_xyz(1.0, 2.0, 3.0);
        let prior = PosePrior::new(Key::pose(0), anchor);
        let v = Value::Pose(anchor);
        assert!(prior.eval(&[&v]).norm() < 1e-15);
    }

    #[test]
    fn factor_insertion_order_does_not_change_optimum() {
        let build = |order: &[usize]| -> Values {
            let specs: Vec<Factor> = vec![
                Vec3Prior::factor(Key::velocity(0), Vector3::new(1.0, 0.0, 0.0), eye(3) * 0.1)
                    .unwrap(),
                Vec3Prior::factor(Key::velocity(0), Vector3::new(2.0, 1.0, 0.0), eye(3) * 0.3)
                    .unwrap(),
                Factor::gaussian(
                    VecBetween {
                        keys: [Key::velocity(0), Key::velocity(1)],
                        delta: Vector3::new(0.5, 0.5, 0.5),
                    },
                    eye(3) * 0.2,
                )
                .unwrap(),
                Vec3Prior::factor(Key::velocity(1), Vector3::new(2.0, 2.0, 2.0), eye(3) * 0.5)
                    .unwrap(),
            ];
            let mut by_idx: Vec<Option<Factor>> = specs.into_iter().map(Some).collect();
            let mut graph = FactorGraph::new();
            for &i in order {
                graph.add(by_idx[i].take().unwrap());
            }
            let mut init = Values::new();
            init.insert_vec3(Key::velocity(0), Vector3::zeros());
            init.insert_vec3(Key::velocity(1), Vector3::zeros());
            graph.solve(&init, &SolverConfig::default()).unwrap().values
        };
        let a = build(&[0, 1, 2, 3]);
        let b = build(&[3, 2, 1, 0]);
        assert!((a.vec3(&Key::velocity(0)) - b.vec3(&Key::velocity(0))).norm() < 1e-9);
        assert!((a.vec3(&Key::velocity(1)) - b.vec3(&Key::velocity(1))).norm() < 1e-9);
    }

    #[test]
    fn information_monotonicity_on_linear_graphs() {
        let mut graph = FactorGraph::new();
        graph.add(Vec3Prior::factor(Key::velocity(0), Vector3::zeros(), eye(3) * 0.5).unwrap());
        graph.add(
            Factor::gaussian(
                VecBetween { keys: [Key::velocity(0), Key::velocity(1)], delta: Vector3::x() },
                eye(3) * 0.2,
            )
            .unwrap(),
        );
        graph.add(Vec3Prior::factor(Key::velocity(1), Vector3::x(), eye(3) * 0.8).unwrap());
        let mut init = Values::new();
        init.insert_vec3(Key::velocity(0), Vector3::zeros());
        init.insert_vec3(Key::velocity(1), Vector3::x());
        let sol = graph.solve(&init, &SolverConfig::default()).unwrap();
        let before: f64 = graph
            .marginal_covariance(&sol.values, &[Key::velocity(1)])
            .unwrap()
            .trace();
        // add one more measurement touching x1
        graph.add(Vec3Prior::factor(Key::velocity(1), Vector3::x(), eye(3) * 1.5).unwrap());
        let sol2 = graph.solve(&sol.values, &SolverConfig::default()).unwrap();
        let after: f64 = graph
            .marginal_covariance(&sol2.values, &[Key::velocity(1)])
            .unwrap()
            .trace();
        assert!(after <= before + 1e-12, "{after} > {before}");
    }

    #[test]
    fn warm_start_matches_cold_solve() {
        // polish to machine precision so both paths reach the unique optimum
        let tight = SolverConfig { max_iters: 100, rel_tol: 1e-14, abs_tol: 1e-14, ..Default::default() };
        let mut graph = FactorGraph::new();
        graph.add(PosePrior::factor(Key::pose(0), pose_xyz(0.0, 0.0, 0.0), eye(6) * 0.01).unwrap());
        let mut xi = Twist::zeros();
        xi[1] = 0.2;
        xi[3] = 1.0;
        graph.add(
            BetweenPose::factor(Key::pose(0), Key::pose(1), Pose::exp(&xi), eye(6) * 0.05).unwrap(),
        );
        let mut init = Values::new();
        init.insert_pose(Key::pose(0), Pose::identity());
        init.insert_pose(Key::pose(1), pose_xyz(0.9, 0.1, 0.0));
        let warm_base = graph.solve(&init, &tight).unwrap();

        // append factors, then solve both warm and cold
        graph.add(
            BetweenPose::factor(Key::pose(1), Key::pose(2), Pose::exp(&xi), eye(6) * 0.05).unwrap(),
        );
        graph.add(PosePrior::factor(Key::pose(2), pose_xyz(2.0, 0.4, 0.0), eye(6) * 0.5).unwrap());

        let mut warm_init = warm_base.values.clone();
        warm_init.insert_pose(Key::pose(2), pose_xyz(1.8, 0.3, 0.0));
        let warm = graph.solve(&warm_init, &tight).unwrap();

        let mut cold_init = Values::new();
        cold_init.insert_pose(Key::pose(0), Pose::identity());
        cold_init.insert_pose(Key::pose(1), pose_xyz(0.5, 0.0, 0.1));
        cold_init.insert_pose(Key::pose(2), pose_xyz(1.0, 0.0, 0.2));
        let cold = graph.solve(&cold_init, &tight).unwrap();

        for k in [Key::pose(0), Key::pose(1), Key::pose(2)] {
            let a = warm.values.pose(&k);
            let b = cold.values.pose(&k);
            assert!((a.translation - b.translation).norm() < 1e-8);
            assert!(a.rotation.angle_to(&b.rotation) < 1e-8);
        }
    }

    #[test]
    fn marginal_on_unconstrained_variable_names_it() {
        let mut graph = FactorGraph::new();
        graph.add(Vec3Prior::factor(Key::velocity(0), Vector3::zeros(), eye(3) * 0.1).unwrap());
        // velocity 1 only appears through a between factor with no anchor on
        // the chain's far end: still constrained. Add a genuinely free
        // variable via a zero-information factor.
        graph.add(
            Factor::from_information(
                Vec3Prior::new(Key::velocity(1), Vector3::zeros()),
                DMatrix::zeros(3, 3),
            )
            .unwrap(),
        );
        let mut vals = Values::new();
        vals.insert_vec3(Key::velocity(0), Vector3::zeros());
        vals.insert_vec3(Key::velocity(1), Vector3::zeros());
        let err = graph
            .marginal_covariance(&vals, &[Key::velocity(1)])
            .unwrap_err();
        match err {
            SolveError::RankDeficient { key } => assert_eq!(key, Key::velocity(1)),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn ill_conditioned_noise_rejected() {
        let mut cov = eye(3);
        cov[(0, 0)] = 1e14;
        cov[(2, 2)] = 1e-14;
        let res = Vec3Prior::factor(Key::velocity(0), Vector3::zeros(), cov);
        assert!(matches!(res, Err(GraphError::IllConditionedNoise { .. })));
    }

    #[test]
    fn zero_information_factor_has_no_effect() {
        let mut graph = FactorGraph::new();
        graph.add(Vec3Prior::factor(Key::velocity(0), Vector3::x(), eye(3) * 0.1).unwrap());
        let mut init = Values::new();
        init.insert_vec3(Key::velocity(0), Vector3::zeros());
        let base = graph.solve(&init, &SolverConfig::default()).unwrap();
        graph.add(
            Factor::from_information(
                Vec3Prior::new(Key::velocity(0), Vector3::new(50.0, 0.0, 0.0)),
                DMatrix::zeros(3, 3),
            )
            .unwrap(),
        );
        let with = graph.solve(&init, &SolverConfig::default()).unwrap();
        assert!((base.values.vec3(&Key::velocity(0)) - with.values.vec3(&Key::velocity(0))).norm() < 1e-12);
    }

    #[test]
    fn numeric_jacobian_matches_analytic_for_between() {
        let rel = Pose::new(Rotation::exp(&Vector3::new(0.1, 0.2, -0.3)), Vector3::new(1.0, 0.0, 0.5));
        let res = BetweenPose::new(Key::pose(0), Key::pose(1), rel);
        let ti = Value::Pose(Pose::new(
            Rotation::exp(&Vector3::new(-0.2, 0.4, 0.1)),
            Vector3::new(0.3, -1.0, 2.0),
        ));
        let tj = Value::Pose(Pose::new(
            Rotation::exp(&Vector3::new(0.3, 0.3, 0.2)),
            Vector3::new(1.5, -0.7, 2.2),
        ));
        let vals = vec![&ti, &tj];
        let analytic = res.jacobians(&vals).unwrap();
        let numeric = numeric_jacobians(&res, &vals);
        for (a, n) in analytic.iter().zip(numeric.iter()) {
            let rel_err = (a - n).norm() / n.norm().max(1e-12);
            assert!(rel_err < 1e-4, "rel err {rel_err}");
        }
    }

    #[test]
    fn dump_topology_golden() {
        let mut graph = FactorGraph::new();
        graph.add(PosePrior::factor(Key::pose(0), Pose::identity(), eye(6)).unwrap());
        graph.add(Vec3Prior::factor(Key::velocity(0), Vector3::zeros(), eye(3)).unwrap());
        graph.add(
            BetweenPose::factor(Key::pose(0), Key::pose(1), Pose::identity(), eye(6)).unwrap(),
        );
        let expected = "\
PosePrior keys=[P0] dim=6
Vec3Prior keys=[V0] dim=3
BetweenPose keys=[P0,P1] dim=6
";
        assert_eq!(graph.dump_topology(), expected);
    }

    #[test]
    fn solver_failure_reports_iteration() {
        struct NanResidual {
            keys: [Key; 1],
        }
        impl Residual for NanResidual {
            fn type_name(&self) -> &'static str {
                "NanResidual"
            }
            fn keys(&self) -> &[Key] {
                &self.keys
            }
            fn dim(&self) -> usize {
                3
            }
            fn eval(&self, _vals: &[&Value]) -> DVector<f64> {
                DVector::from_column_slice(&[0.0, 0.0, 0.0])
            }
            fn jacobians(&self, _vals: &[&Value]) -> Option<Vec<DMatrix<f64>>> {
                Some(vec![DMatrix::from_element(3, 3, f64::NAN)])
            }
        }
        let mut graph = FactorGraph::new();
        graph.add(Factor::gaussian(NanResidual { keys: [Key::velocity(0)] }, eye(3)).unwrap());
        let mut init = Values::new();
        init.insert_vec3(Key::velocity(0), Vector3::zeros());
        let err = graph.solve(&init, &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, SolveError::Singular { iteration: 0 }));
    }

    #[test]
    fn missing_initial_value_is_reported() {
        let mut graph = FactorGraph::new();
        graph.add(Vec3Prior::factor(Key::velocity(3), Vector3::zeros(), eye(3)).unwrap());
        let err = graph.solve(&Values::new(), &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, SolveError::MissingValue { key } if key == Key::velocity(3)));
    }

    #[test]
    fn rotation_identity_helper() {
        let m = Matrix3::<f64>::identity();
        assert_eq!(Rotation::from_matrix(&m).unwrap(), Rotation::identity());
    }
}
