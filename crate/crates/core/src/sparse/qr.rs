//! Q-less Householder QR of the transposed constraint Jacobian.
//!
//! Only the upper-triangular factor R with `R'R = J J'` is formed; the
//! orthogonal factor is never stored. Columns of J' are processed left to
//! right; each step generates a reflector from the working column, applies it
//! to the trailing columns, and harvests one row of R. Working columns are
//! kept as short banded segment lists, so the per-step work is bounded by the
//! (constant) active bandwidth and the whole factorization is quadratic in
//! the constraint count.

use crate::error::{Error, Result};
use crate::sparse::{FlopLedger, SparseJacobian};

const BREAKDOWN_RTOL: f64 = 1e-12;

/// Upper-triangular factor of `J J'` with the FLOP ledger of the
/// factorization that produced it.
#[derive(Clone, Debug)]
pub struct TriangularFactor {
    dim: usize,
    /// Row-major packed upper triangle; row k holds entries k..dim.
    packed: Vec<f64>,
    pub flop_ledger: FlopLedger,
}

impl TriangularFactor {
    fn zeros(dim: usize) -> Self {
        TriangularFactor {
            dim,
            packed: vec![0.0; dim * (dim + 1) / 2],
            flop_ledger: FlopLedger::new(),
        }
    }

    #[inline]
    fn idx(&self, k: usize, j: usize) -> usize {
        debug_assert!(k <= j && j < self.dim);
        k * self.dim - k * (k - 1) / 2 + (j - k)
    }

    #[inline]
    fn set(&mut self, k: usize, j: usize, v: f64) {
        let i = self.idx(k, j);
        self.packed[i] = v;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Entry R[k, j] for k <= j.
    pub fn entry(&self, k: usize, j: usize) -> f64 {
        self.packed[self.idx(k, j)]
    }

    /// Solve (R'R) sigma = rhs by forward substitution on R' followed by
    /// backward substitution on R.
    pub fn solve_normal(&self, rhs: &[f64]) -> Vec<f64> {
        let m = self.dim;
        debug_assert_eq!(rhs.len(), m);
        // forward: R' z = rhs
        let mut z = vec![0.0; m];
        for i in 0..m {
            let mut acc = rhs[i];
            for (k, zk) in z.iter().enumerate().take(i) {
                acc -= self.packed[k * m - k * (k - 1) / 2 + (i - k)] * zk;
            }
            z[i] = acc / self.packed[self.idx(i, i)];
        }
        // backward: R sigma = z
        let mut sigma = vec![0.0; m];
        for i in (0..m).rev() {
            let row = &self.packed[self.idx(i, i)..self.idx(i, i) + (m - i)];
            let mut acc = z[i];
            for (j, r) in row.iter().enumerate().skip(1) {
                acc -= r * sigma[i + j];
            }
            sigma[i] = acc / row[0];
        }
        sigma
    }
}

/// Solve the controller's normal-equation system with a previously computed
/// factor.
pub fn solve_step_system(factor: &TriangularFactor, rhs: &[f64]) -> Vec<f64> {
    factor.solve_normal(rhs)
}

/// Householder reflector generation: returns `(u, nu)` such that
/// `(I - u u') x = nu * e_1`. For a zero vector the first ledger class is
/// left untouched and `u_1 = sqrt(2)`, `nu = 0`.
pub fn housegen(x: &[f64], ledger: &mut FlopLedger) -> (Vec<f64>, f64) {
    let mut u = x.to_vec();
    let nu = housegen_inplace(&mut u);
    if nu != 0.0 || x.iter().any(|v| *v != 0.0) {
        let nnz = x.iter().filter(|v| **v != 0.0).count() as u64;
        ledger.housegen_flops += 3 * nnz;
        ledger.measured_housegen_flops += 3 * nnz;
    }
    (u, nu)
}

/// Shared reflector kernel over the stored entries of a vector whose first
/// stored entry is the leading element.
fn housegen_inplace(vals: &mut [f64]) -> f64 {
    let norm_sq: f64 = vals.iter().map(|v| v * v).sum();
    let mut nu = norm_sq.sqrt();
    if nu == 0.0 {
        if let Some(first) = vals.first_mut() {
            *first = std::f64::consts::SQRT_2;
        }
        return 0.0;
    }
    for v in vals.iter_mut() {
        *v /= nu;
    }
    if vals[0] >= 0.0 {
        vals[0] += 1.0;
        nu = -nu;
    } else {
        vals[0] -= 1.0;
    }
    let s = vals[0].abs().sqrt();
    for v in vals.iter_mut() {
        *v /= s;
    }
    nu
}

/// A working column of J': disjoint ascending row segments packed into one
/// flat value buffer.
#[derive(Clone, Debug, Default)]
struct WorkCol {
    segs: Vec<(usize, usize)>, // (first row, length)
    vals: Vec<f64>,
}

impl WorkCol {
    fn clear(&mut self) {
        self.segs.clear();
        self.vals.clear();
    }

    fn stored_len(&self) -> usize {
        self.vals.len()
    }

    fn push(&mut self, row: usize, val: f64) {
        if let Some(last) = self.segs.last_mut() {
            if last.0 + last.1 == row {
                last.1 += 1;
                self.vals.push(val);
                return;
            }
            debug_assert!(last.0 + last.1 < row);
        }
        self.segs.push((row, 1));
        self.vals.push(val);
    }

    /// Insert a leading zero entry at `row` if the column does not already
    /// start there.
    fn ensure_leading(&mut self, row: usize) {
        match self.segs.first_mut() {
            Some(s) if s.0 == row => {}
            Some(s) if s.0 == row + 1 => {
                s.0 = row;
                s.1 += 1;
                self.vals.insert(0, 0.0);
            }
            Some(s) => {
                debug_assert!(s.0 > row);
                self.segs.insert(0, (row, 1));
                self.vals.insert(0, 0.0);
            }
            None => {
                self.segs.push((row, 1));
                self.vals.push(0.0);
            }
        }
    }

    /// Remove and return the entry at `row` if it is stored (it can only be
    /// the very first stored entry).
    fn pop_row(&mut self, row: usize) -> f64 {
        match self.segs.first_mut() {
            Some(s) if s.0 == row => {
                let v = self.vals.remove(0);
                s.0 += 1;
                s.1 -= 1;
                if s.1 == 0 {
                    self.segs.remove(0);
                }
                v
            }
            _ => 0.0,
        }
    }
}

/// Inner product of two working columns over their common rows; also returns
/// the number of coinciding stored entries.
fn seg_dot(a: &WorkCol, b: &WorkCol) -> (f64, u64) {
    let mut acc = 0.0;
    let mut count = 0u64;
    let mut ia = 0;
    let mut ib = 0;
    let mut offa = 0;
    let mut offb = 0;
    while ia < a.segs.len() && ib < b.segs.len() {
        let (sa, la) = a.segs[ia];
        let (sb, lb) = b.segs[ib];
        let lo = sa.max(sb);
        let hi = (sa + la).min(sb + lb);
        if lo < hi {
            let va = &a.vals[offa + (lo - sa)..offa + (hi - sa)];
            let vb = &b.vals[offb + (lo - sb)..offb + (hi - sb)];
            acc += va.iter().zip(vb).map(|(x, y)| x * y).sum::<f64>();
            count += (hi - lo) as u64;
        }
        if sa + la <= sb + lb {
            offa += la;
            ia += 1;
        } else {
            offb += lb;
            ib += 1;
        }
    }
    (acc, count)
}

/// Entry cursor over a working column's stored (row, value) pairs.
struct ColCursor<'a> {
    col: &'a WorkCol,
    seg: usize,
    pos: usize, // position within current segment
    off: usize, // value offset of current segment start
}

impl<'a> ColCursor<'a> {
    fn new(col: &'a WorkCol) -> Self {
        ColCursor {
            col,
            seg: 0,
            pos: 0,
            off: 0,
        }
    }

    fn row(&self) -> Option<usize> {
        self.col.segs.get(self.seg).map(|(s, _)| s + self.pos)
    }

    fn value(&self) -> f64 {
        self.col.vals[self.off + self.pos]
    }

    fn advance(&mut self) {
        self.pos += 1;
        if self.pos == self.col.segs[self.seg].1 {
            self.off += self.pos;
            self.pos = 0;
            self.seg += 1;
        }
    }
}

/// scratch = x - d * u over the union pattern, skipping row `harvest_row`,
/// whose resulting value is returned.
fn seg_axpy_harvest(x: &WorkCol, u: &WorkCol, d: f64, harvest_row: usize, scratch: &mut WorkCol) -> f64 {
    scratch.clear();
    let mut harvested = 0.0;
    let mut cx = ColCursor::new(x);
    let mut cu = ColCursor::new(u);
    loop {
        let (row, xv, uv) = match (cx.row(), cu.row()) {
            (None, None) => break,
            (Some(rx), Some(ru)) if rx == ru => {
                let vals = (rx, cx.value(), cu.value());
                cx.advance();
                cu.advance();
                vals
            }
            (Some(rx), ru) if ru.map_or(true, |ru| rx < ru) => {
                let vals = (rx, cx.value(), 0.0);
                cx.advance();
                vals
            }
            (_, Some(ru)) => {
                let vals = (ru, 0.0, cu.value());
                cu.advance();
                vals
            }
            (None, None) => unreachable!(),
        };
        let val = xv - d * uv;
        if row == harvest_row {
            harvested = val;
        } else {
            scratch.push(row, val);
        }
    }
    harvested
}

/// Q-less sparse Householder QR of J'. Returns the triangular factor with the
/// factorization's FLOP ledger; the analytic per-class counters are filled
/// when the matrix carries the output-error pattern tag, otherwise they
/// mirror the measured counts.
pub fn qless_qr(jac: &SparseJacobian) -> Result<TriangularFactor> {
    let m = jac.n_rows();
    let n_theta = jac.n_theta();
    let mut cols: Vec<WorkCol> = (0..m)
        .map(|r| {
            let mut c = WorkCol::default();
            let theta = jac.theta_row(r);
            if n_theta > 0 {
                c.segs.push((0, n_theta));
                c.vals.extend_from_slice(theta);
            }
            for (start, vals) in jac.segments(r) {
                c.segs.push((*start, vals.len()));
                c.vals.extend_from_slice(vals);
            }
            c
        })
        .collect();
    let orig_norms: Vec<f64> = (0..m).map(|r| jac.row_norm_sq(r).sqrt()).collect();

    let mut r = TriangularFactor::zeros(m);
    let mut ledger = FlopLedger::new();
    let mut scratch = WorkCol::default();
    let pattern = jac.pattern();

    for k in 0..m {
        let mut u = std::mem::take(&mut cols[k]);
        u.ensure_leading(k);
        debug_assert!(u.segs.first().map_or(false, |s| s.0 == k));
        ledger.measured_housegen_flops += 3 * u.stored_len() as u64;
        let nu = housegen_inplace(&mut u.vals);
        if orig_norms[k] == 0.0 || nu.abs() < BREAKDOWN_RTOL * orig_norms[k] {
            return Err(Error::RankBreakdown { column: k });
        }
        r.set(k, k, nu);
        let u_len = u.stored_len() as u64;
        for j in k + 1..m {
            let (d, overlap) = seg_dot(&u, &cols[j]);
            ledger.measured_inner_product_flops += overlap;
            let rkj = if d != 0.0 {
                ledger.measured_rank1_update_flops += u_len;
                let v = seg_axpy_harvest(&cols[j], &u, d, k, &mut scratch);
                std::mem::swap(&mut cols[j], &mut scratch);
                v
            } else {
                cols[j].pop_row(k)
            };
            if rkj != 0.0 {
                r.set(k, j, rkj);
            }
        }
        if let Some(pat) = pattern {
            ledger.housegen_flops += 3 * pat.chi(k + 1);
            ledger.inner_product_flops += pat.psi(k + 1);
            ledger.rank1_update_flops += pat.zeta(k + 1);
        }
    }
    if pattern.is_none() {
        ledger.housegen_flops = ledger.measured_housegen_flops;
        ledger.inner_product_flops = ledger.measured_inner_product_flops;
        ledger.rank1_update_flops = ledger.measured_rank1_update_flops;
    }
    r.flop_ledger = ledger;
    Ok(r)
}

/// Dense fallback: the same housegen pipeline on a densified J' (column-major
/// `n_rows x n_cols` buffer, owned). The ledger records the dense counts.
pub fn qless_qr_dense(mut jt: Vec<f64>, n_rows: usize, n_cols: usize) -> Result<TriangularFactor> {
    assert_eq!(jt.len(), n_rows * n_cols);
    let n = n_rows;
    let m = n_cols;
    let orig_norms: Vec<f64> = (0..m)
        .map(|j| jt[j * n..(j + 1) * n].iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut r = TriangularFactor::zeros(m);
    let mut ledger = FlopLedger::new();
    let mut u = vec![0.0; n];
    for k in 0..m {
        let len = n - k;
        u[..len].copy_from_slice(&jt[k * n + k..(k + 1) * n]);
        let nu = housegen_inplace(&mut u[..len]);
        if orig_norms[k] == 0.0 || nu.abs() < BREAKDOWN_RTOL * orig_norms[k] {
            return Err(Error::RankBreakdown { column: k });
        }
        r.set(k, k, nu);
        ledger.housegen_flops += 3 * len as u64;
        let uk = &u[..len];
        for j in k + 1..m {
            let col = &mut jt[j * n + k..(j + 1) * n];
            let d: f64 = uk.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
            for (c, a) in col.iter_mut().zip(uk) {
                *c -= d * a;
            }
            r.set(k, j, col[0]);
        }
        ledger.inner_product_flops += (len * (m - k - 1)) as u64;
        ledger.rank1_update_flops += (len * (m - k - 1)) as u64;
    }
    ledger.measured_housegen_flops = ledger.housegen_flops;
    ledger.measured_inner_product_flops = ledger.inner_product_flops;
    ledger.measured_rank1_update_flops = ledger.rank1_update_flops;
    r.flop_ledger = ledger;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::random_oe_jacobian;
    use rand::SeedableRng;

    fn apply_reflection(u: &[f64], x: &[f64]) -> Vec<f64> {
        let d: f64 = u.iter().zip(x).map(|(a, b)| a * b).sum();
        x.iter().zip(u).map(|(xi, ui)| xi - ui * d).collect()
    }

    #[test]
    fn housegen_three_four() {
        let mut ledger = FlopLedger::new();
        let (u, nu) = housegen(&[3.0, 4.0], &mut ledger);
        assert!((nu + 5.0).abs() < 1e-14);
        assert!((u[0] - 1.6 / 1.6f64.sqrt()).abs() < 1e-14);
        assert!((u[1] - 0.8 / 1.6f64.sqrt()).abs() < 1e-14);
        let refl = apply_reflection(&u, &[3.0, 4.0]);
        assert!((refl[0] + 5.0).abs() < 1e-12);
        assert!(refl[1].abs() < 1e-12);
        assert_eq!(ledger.housegen_flops, 6);
    }

    #[test]
    fn housegen_zero_vector() {
        let mut ledger = FlopLedger::new();
        let (u, nu) = housegen(&[0.0, 0.0, 0.0], &mut ledger);
        assert_eq!(nu, 0.0);
        assert!((u[0] - std::f64::consts::SQRT_2).abs() < 1e-15);
        assert_eq!(ledger.housegen_flops, 0);
    }

    #[test]
    fn housegen_negative_leading_branch() {
        let mut ledger = FlopLedger::new();
        let (u, nu) = housegen(&[-2.0, 0.0, 0.0], &mut ledger);
        assert!((nu - 2.0).abs() < 1e-14);
        assert!((u[0] + 2.0 / 2.0f64.sqrt()).abs() < 1e-14);
        assert_eq!(u[1], 0.0);
        let refl = apply_reflection(&u, &[-2.0, 0.0, 0.0]);
        assert!((refl[0] - 2.0).abs() < 1e-12);
        assert!(refl[1].abs() < 1e-12);
    }

    fn jjt_dense(jac: &SparseJacobian) -> Vec<Vec<f64>> {
        let m = jac.n_rows();
        let n = jac.n_cols();
        let mut jjt = vec![vec![0.0; m]; m];
        for (i, row) in jjt.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..n).map(|c| jac.get(i, c) * jac.get(j, c)).sum();
            }
        }
        jjt
    }

    fn rtr_rel_error(r: &TriangularFactor, jac: &SparseJacobian) -> f64 {
        let m = r.dim();
        let jjt = jjt_dense(jac);
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..m {
            for j in 0..m {
                let rtr: f64 = (0..=i.min(j)).map(|k| r.entry(k, i) * r.entry(k, j)).sum();
                let d = rtr - jjt[i][j];
                num += d * d;
                den += jjt[i][j] * jjt[i][j];
            }
        }
        (num / den).sqrt()
    }

    #[test]
    fn scalar_case() {
        let mut jac = SparseJacobian::new(1, 1, 0);
        jac.push_segment(0, 0, vec![3.5]);
        let r = qless_qr(&jac).unwrap();
        assert!((r.entry(0, 0).abs() - 3.5).abs() < 1e-15);
    }

    #[test]
    fn factor_matches_normal_matrix_on_oe_pattern() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let jac = random_oe_jacobian(2, 1, 1, 12, &mut rng);
        let r = qless_qr(&jac).unwrap();
        assert!(rtr_rel_error(&r, &jac) < 1e-12);
    }

    #[test]
    fn factor_matches_on_taller_patterns() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        for &(nt, p, phi, n) in &[(3usize, 2usize, 2usize, 14usize), (1, 3, 1, 9), (4, 1, 3, 25)] {
            let jac = random_oe_jacobian(nt, p, phi, n, &mut rng);
            let r = qless_qr(&jac).unwrap();
            assert!(
                rtr_rel_error(&r, &jac) < 1e-11,
                "pattern {:?} failed",
                (nt, p, phi, n)
            );
        }
    }

    #[test]
    fn sparse_and_dense_factor_agree() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let jac = random_oe_jacobian(2, 2, 1, 10, &mut rng);
        let rs = qless_qr(&jac).unwrap();
        let rd = qless_qr_dense(jac.to_dense_transposed(), jac.n_cols(), jac.n_rows()).unwrap();
        for k in 0..rs.dim() {
            for j in k..rs.dim() {
                assert!(
                    (rs.entry(k, j) - rd.entry(k, j)).abs() < 1e-10 * (1.0 + rd.entry(k, j).abs())
                );
            }
        }
    }

    #[test]
    fn ledger_matches_closed_forms_on_oe_pattern() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(14);
        for &(nt, p, phi, n) in &[(2usize, 1usize, 1usize, 12usize), (3, 2, 2, 20), (1, 2, 3, 18)] {
            let jac = random_oe_jacobian(nt, p, phi, n, &mut rng);
            let r = qless_qr(&jac).unwrap();
            let pred = crate::sparse::predict_flops(nt, p, phi, n).unwrap();
            assert_eq!(r.flop_ledger.housegen_flops, pred.sum_3chi);
            assert_eq!(r.flop_ledger.inner_product_flops, pred.sum_psi);
            assert_eq!(r.flop_ledger.rank1_update_flops, pred.sum_zeta);
        }
    }

    #[test]
    fn identity_factor_solves_trivially() {
        let mut jac = SparseJacobian::new(3, 3, 0);
        for r in 0..3 {
            jac.push_segment(r, r, vec![1.0]);
        }
        let f = qless_qr(&jac).unwrap();
        let rhs = vec![1.0, -2.0, 0.5];
        let sigma = solve_step_system(&f, &rhs);
        for (s, r) in sigma.iter().zip(&rhs) {
            assert!((s - r).abs() < 1e-14);
        }
    }

    #[test]
    fn solve_matches_dense_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(15);
        let jac = random_oe_jacobian(2, 1, 2, 16, &mut rng);
        let m = jac.n_rows();
        let f = qless_qr(&jac).unwrap();
        let rhs: Vec<f64> = (0..m).map(|i| ((i * 7 % 5) as f64) - 2.0).collect();
        let sigma = f.solve_normal(&rhs);
        // dense oracle via nalgebra on the explicitly formed normal matrix
        let jjt = jjt_dense(&jac);
        let a = nalgebra::DMatrix::from_fn(m, m, |i, j| jjt[i][j]);
        let b = nalgebra::DVector::from_column_slice(&rhs);
        let x = a.lu().solve(&b).unwrap();
        for i in 0..m {
            assert!((sigma[i] - x[i]).abs() < 1e-8 * (1.0 + x[i].abs()));
        }
    }

    #[test]
    fn rank_breakdown_is_reported_with_column() {
        // two identical rows are rank deficient
        let mut jac = SparseJacobian::new(2, 4, 0);
        jac.push_segment(0, 0, vec![1.0, 2.0]);
        jac.push_segment(1, 0, vec![1.0, 2.0]);
        match qless_qr(&jac) {
            Err(Error::RankBreakdown { column }) => assert_eq!(column, 1),
            other => panic!("expected breakdown, got {:?}", other.map(|_| ())),
        }
    }
}
