//! Structure-exploiting sparse linear algebra for the constraint Jacobian.
//!
//! The Jacobian of the trajectory constraints has a fixed shape: a dense
//! parameter block of `n_theta` leading columns, then one short band of
//! trajectory columns per constraint row. Rows are stored as the dense theta
//! part plus a list of disjoint banded segments, which covers the
//! output-error pattern (one band), the errors-in-variables pattern (an input
//! band and an output band) and the state-space pattern.

mod flops;
mod qr;

pub use flops::{predict_flops, FlopLedger, FlopPrediction, OePattern};
pub use qr::{housegen, qless_qr, qless_qr_dense, solve_step_system, TriangularFactor};

/// Row-oriented sparse matrix with a dense leading column block.
#[derive(Clone, Debug)]
pub struct SparseJacobian {
    n_rows: usize,
    n_cols: usize,
    n_theta: usize,
    /// Row-major m x n_theta dense block.
    theta: Vec<f64>,
    /// Per row: disjoint ascending (start_col, values) segments, all starting
    /// at column >= n_theta.
    bands: Vec<Vec<(usize, Vec<f64>)>>,
    pattern: Option<OePattern>,
}

impl SparseJacobian {
    pub fn new(n_rows: usize, n_cols: usize, n_theta: usize) -> Self {
        SparseJacobian {
            n_rows,
            n_cols,
            n_theta,
            theta: vec![0.0; n_rows * n_theta],
            bands: vec![Vec::new(); n_rows],
            pattern: None,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn pattern(&self) -> Option<OePattern> {
        self.pattern
    }

    /// Tag this matrix as carrying the canonical output-error pattern, which
    /// enables the analytic FLOP accounting during factorization.
    pub fn set_pattern(&mut self, pattern: OePattern) {
        debug_assert_eq!(pattern.m(), self.n_rows);
        debug_assert_eq!(pattern.n_vars(), self.n_cols);
        self.pattern = Some(pattern);
    }

    pub fn theta_row(&self, r: usize) -> &[f64] {
        &self.theta[r * self.n_theta..(r + 1) * self.n_theta]
    }

    pub fn theta_row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.theta[r * self.n_theta..(r + 1) * self.n_theta]
    }

    /// Append a banded segment to a row. Segments must be pushed in ascending
    /// column order and must not overlap.
    pub fn push_segment(&mut self, r: usize, start_col: usize, vals: Vec<f64>) {
        debug_assert!(start_col >= self.n_theta);
        debug_assert!(start_col + vals.len() <= self.n_cols);
        if let Some((s, v)) = self.bands[r].last() {
            debug_assert!(s + v.len() <= start_col, "segments must be disjoint and ordered");
        }
        self.bands[r].push((start_col, vals));
    }

    pub fn segments(&self, r: usize) -> &[(usize, Vec<f64>)] {
        &self.bands[r]
    }

    /// Number of stored entries in a row.
    pub fn row_nnz(&self, r: usize) -> usize {
        self.n_theta + self.bands[r].iter().map(|(_, v)| v.len()).sum::<usize>()
    }

    /// Multiply the whole row (theta part and bands) by a scalar.
    pub fn scale_row(&mut self, r: usize, s: f64) {
        for v in self.theta_row_mut(r) {
            *v *= s;
        }
        for (_, vals) in &mut self.bands[r] {
            for v in vals {
                *v *= s;
            }
        }
    }

    /// y = J v. Multiplications against exact-zero entries of `v` are skipped
    /// and not counted; for a generic dense `v` the count equals the summed
    /// per-row stored-entry counts.
    pub fn matvec(&self, v: &[f64], ledger: &mut FlopLedger) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.n_cols);
        let mut out = vec![0.0; self.n_rows];
        let mut flops = 0u64;
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (a, &vj) in self.theta_row(r).iter().zip(&v[..self.n_theta]) {
                if vj != 0.0 {
                    acc += a * vj;
                    flops += 1;
                }
            }
            for (start, vals) in &self.bands[r] {
                for (a, &vj) in vals.iter().zip(&v[*start..*start + vals.len()]) {
                    if vj != 0.0 {
                        acc += a * vj;
                        flops += 1;
                    }
                }
            }
            *o = acc;
        }
        ledger.matvec_flops += flops;
        out
    }

    /// y = J' w.
    pub fn matvec_t(&self, w: &[f64], ledger: &mut FlopLedger) -> Vec<f64> {
        debug_assert_eq!(w.len(), self.n_rows);
        let mut out = vec![0.0; self.n_cols];
        let mut flops = 0u64;
        for (r, &wr) in w.iter().enumerate() {
            if wr == 0.0 {
                continue;
            }
            for (o, a) in out[..self.n_theta].iter_mut().zip(self.theta_row(r)) {
                *o += a * wr;
            }
            flops += self.row_nnz(r) as u64;
            for (start, vals) in &self.bands[r] {
                for (o, a) in out[*start..*start + vals.len()].iter_mut().zip(vals) {
                    *o += a * wr;
                }
            }
        }
        ledger.matvec_flops += flops;
        out
    }

    /// Entry lookup (slow path, for tests and small solves).
    pub fn get(&self, r: usize, c: usize) -> f64 {
        if c < self.n_theta {
            return self.theta[r * self.n_theta + c];
        }
        for (start, vals) in &self.bands[r] {
            if c >= *start && c < start + vals.len() {
                return vals[c - start];
            }
        }
        0.0
    }

    /// Densify J' in column-major order (n_cols x n_rows), the layout the
    /// dense fallback factorization consumes.
    pub fn to_dense_transposed(&self) -> Vec<f64> {
        let mut jt = vec![0.0; self.n_cols * self.n_rows];
        for r in 0..self.n_rows {
            let col = &mut jt[r * self.n_cols..(r + 1) * self.n_cols];
            col[..self.n_theta].copy_from_slice(self.theta_row(r));
            for (start, vals) in &self.bands[r] {
                col[*start..*start + vals.len()].copy_from_slice(vals);
            }
        }
        jt
    }

    /// Squared Euclidean norm of row r.
    pub fn row_norm_sq(&self, r: usize) -> f64 {
        let mut acc: f64 = self.theta_row(r).iter().map(|v| v * v).sum();
        for (_, vals) in &self.bands[r] {
            acc += vals.iter().map(|v| v * v).sum::<f64>();
        }
        acc
    }
}

/// Build a random matrix with the output-error pattern: dense theta block,
/// one band of width p*(phi+1) per constraint block, identity sub-block on
/// the newest output. Used by benchmarks and factorization tests.
pub fn random_oe_jacobian<R: rand::Rng>(
    n_theta: usize,
    p: usize,
    phi: usize,
    n_data: usize,
    rng: &mut R,
) -> SparseJacobian {
    let pat = OePattern {
        n_theta,
        p,
        phi,
        n_data,
    };
    let m = pat.m();
    let n_cols = pat.n_vars();
    let mut jac = SparseJacobian::new(m, n_cols, n_theta);
    for b in 0..n_data - phi {
        for c in 0..p {
            let r = b * p + c;
            for v in jac.theta_row_mut(r) {
                *v = rng.gen_range(-1.0..1.0);
            }
            let start = n_theta + b * p;
            let width = p * (phi + 1);
            let mut vals: Vec<f64> = (0..width).map(|_| rng.gen_range(-1.0..1.0)).collect();
            vals[p * phi + c] = 1.0;
            jac.push_segment(r, start, vals);
        }
    }
    jac.set_pattern(pat);
    jac
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn matvec_matches_dense_and_counts_nonzeros() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let jac = random_oe_jacobian(2, 1, 1, 8, &mut rng);
        let n = jac.n_cols();
        let m = jac.n_rows();
        let v: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin() + 2.0).collect();
        let mut ledger = FlopLedger::new();
        let got = jac.matvec(&v, &mut ledger);
        for (r, g) in got.iter().enumerate() {
            let want: f64 = (0..n).map(|c| jac.get(r, c) * v[c]).sum();
            assert!((g - want).abs() < 1e-12);
        }
        // generic dense v: count equals summed per-row stored entries
        let expect: u64 = (0..m).map(|r| jac.row_nnz(r) as u64).sum();
        assert_eq!(ledger.matvec_flops, expect);
        // zero vector costs nothing
        let mut ledger = FlopLedger::new();
        let zero = jac.matvec(&vec![0.0; n], &mut ledger);
        assert!(zero.iter().all(|x| *x == 0.0));
        assert_eq!(ledger.matvec_flops, 0);
    }

    #[test]
    fn matvec_t_matches_dense() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let jac = random_oe_jacobian(3, 2, 1, 7, &mut rng);
        let m = jac.n_rows();
        let n = jac.n_cols();
        let w: Vec<f64> = (0..m).map(|i| (i as f64).cos() + 1.5).collect();
        let mut ledger = FlopLedger::new();
        let got = jac.matvec_t(&w, &mut ledger);
        for (c, g) in got.iter().enumerate() {
            let want: f64 = (0..m).map(|r| jac.get(r, c) * w[r]).sum();
            assert!((g - want).abs() < 1e-12);
        }
    }
}
