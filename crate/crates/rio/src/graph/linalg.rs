//! Envelope (skyline) Cholesky factorization for the Gauss-Newton normal
//! equations.
//!
//! Graph variables are laid out in time order, so the information matrix is
//! banded apart from the rows introduced by loop closures; an envelope
//! factorization has no fill outside the stored profile and needs no
//! symbolic analysis.

/// Symmetric matrix stored as the lower-triangular envelope: row `i` holds
/// columns `row_start[i]..=i` contiguously.
#[derive(Debug, Clone)]
pub struct SkylineMatrix {
    n: usize,
    row_start: Vec<usize>,
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl SkylineMatrix {
    /// Builds a zero matrix with the given envelope profile.
    pub fn from_envelope(row_start: Vec<usize>) -> Self {
        let n = row_start.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut total = 0;
        for (i, &s) in row_start.iter().enumerate() {
            debug_assert!(s <= i);
            offsets.push(total);
            total += i - s + 1;
        }
        offsets.push(total);
        SkylineMatrix {
            n,
            row_start,
            offsets,
            values: vec![0.0; total],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && j >= self.row_start[i]);
        self.offsets[i] + (j - self.row_start[i])
    }

    /// Adds `v` at `(i, j)`; only the lower triangle is addressable.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.values[k] += v;
    }

    pub fn add_diagonal(&mut self, lambda: f64) {
        for i in 0..self.n {
            let k = self.idx(i, i);
            self.values[k] += lambda;
        }
    }

    /// In-place lower Cholesky. On failure returns the pivot row where the
    /// matrix stopped being positive definite.
    pub fn cholesky(mut self) -> Result<SkylineCholesky, usize> {
        for i in 0..self.n {
            let si = self.row_start[i];
            for j in si..=i {
                let sj = self.row_start[j];
                let lo = si.max(sj);
                let mut sum = self.values[self.idx(i, j)];
                // dot product of the overlapping parts of rows i and j
                let oi = self.offsets[i] + (lo - si);
                let oj = self.offsets[j] + (lo - sj);
                for k in 0..j.saturating_sub(lo) {
                    sum -= self.values[oi + k] * self.values[oj + k];
                }
                let k = self.idx(i, j);
                if j < i {
                    let d = self.values[self.offsets[j] + (j - self.row_start[j])];
                    self.values[k] = sum / d;
                } else {
                    if !(sum > 1e-300) {
                        return Err(i);
                    }
                    self.values[k] = sum.sqrt();
                }
            }
        }
        Ok(SkylineCholesky(self))
    }
}

/// Lower Cholesky factor in skyline storage.
#[derive(Debug, Clone)]
pub struct SkylineCholesky(SkylineMatrix);

impl SkylineCholesky {
    /// Solves `L L^T x = b` in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let m = &self.0;
        assert_eq!(x.len(), m.n);
        // forward: L y = b
        for i in 0..m.n {
            let s = m.row_start[i];
            let off = m.offsets[i];
            let mut sum = x[i];
            for (k, col) in (s..i).enumerate() {
                sum -= m.values[off + k] * x[col];
            }
            x[i] = sum / m.values[off + (i - s)];
        }
        // backward: L^T x = y
        for i in (0..m.n).rev() {
            let s = m.row_start[i];
            let off = m.offsets[i];
            x[i] /= m.values[off + (i - s)];
            let xi = x[i];
            for (k, col) in (s..i).enumerate() {
                x[col] -= m.values[off + k] * xi;
            }
        }
    }
}
