//! Dense row-major matrices and the incremental low-rank factorizer.
//!
//! Everything here is plain `f64` with no BLAS dependency: the matrices in
//! play are optimizer-state sized (at most a few hundred rows), so simple
//! cache-friendly loops are fast enough and keep results bit-reproducible.
//!
//! The factorizer solves `min ||L R - target||_F^2` by plain gradient
//! descent warm-started from the previous factors, with a cosine step-size
//! schedule over the inner iterations. A truncated-SVD "cold" refresh is
//! provided for periodic re-anchoring of the factors.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Errors from matrix and factorization routines.
#[derive(Debug, Clone, PartialEq)]
pub enum LinalgError {
    /// Operand shapes are incompatible for the requested operation.
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    /// A scalar or size argument is out of its valid range.
    InvalidArgument(String),
    /// A computation produced NaN or Inf.
    NonFinite { context: String },
}

impl std::fmt::Display for LinalgError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LinalgError::ShapeMismatch { op, lhs, rhs } => write!(
                f,
                "{op}: incompatible shapes {}x{} and {}x{}",
                lhs.0, lhs.1, rhs.0, rhs.1
            ),
            LinalgError::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            LinalgError::NonFinite { context } => {
                write!(f, "non-finite value encountered in {context}")
            }
        }
    }
}

impl std::error::Error for LinalgError {}

/// Dense matrix, row-major: `data[i * cols + j]` holds entry `(i, j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::InvalidArgument(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Convenience constructor for literals in tests.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    /// i.i.d. Gaussian entries with the given standard deviation.
    pub fn gaussian<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        let normal = rand_distr::Normal::new(0.0, std).expect("valid std");
        let data = (0..rows * cols).map(|_| rng.sample(normal)).collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self @ other`, checked.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        matmul_into(self, other, &mut out);
        Ok(out)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.shape() != other.shape() {
            return Err(LinalgError::ShapeMismatch {
                op: "add",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.shape() != other.shape() {
            return Err(LinalgError::ShapeMismatch {
                op: "sub",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// `self += s * other`, shapes already validated by the caller.
    pub fn axpy(&mut self, s: f64, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }
}

/// `out = a @ b` with `out` pre-sized. ikj loop order keeps the inner loop
/// contiguous in both `b` and `out`.
fn matmul_into(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    debug_assert_eq!(a.cols, b.rows);
    debug_assert_eq!(out.rows, a.rows);
    debug_assert_eq!(out.cols, b.cols);
    out.data.fill(0.0);
    let n = b.cols;
    for i in 0..a.rows {
        let out_row = &mut out.data[i * n..(i + 1) * n];
        for (k, &aik) in a.row(i).iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let b_row = &b.data[k * n..(k + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
}

/// Factored pair `L (m x r)`, `R (r x n)` approximating an `m x n` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowRankPair {
    pub l: Matrix,
    pub r: Matrix,
}

impl LowRankPair {
    /// Zero factors, the warm start mandated for the first step.
    pub fn zeros(m: usize, n: usize, rank: usize) -> Result<Self, LinalgError> {
        if rank == 0 || rank > m.min(n) {
            return Err(LinalgError::InvalidArgument(format!(
                "rank {rank} out of range for a {m}x{n} matrix"
            )));
        }
        Ok(LowRankPair {
            l: Matrix::zeros(m, rank),
            r: Matrix::zeros(rank, n),
        })
    }

    pub fn rank(&self) -> usize {
        self.l.cols()
    }

    pub fn target_shape(&self) -> (usize, usize) {
        (self.l.rows(), self.r.cols())
    }

    /// Materializes `L @ R`.
    pub fn product(&self) -> Matrix {
        self.l.matmul(&self.r).expect("factor shapes consistent")
    }

    /// Persistent reals held by the pair: `(m + n) * r`.
    pub fn storage_reals(&self) -> usize {
        self.l.len() + self.r.len()
    }

    fn check_against(&self, target: &Matrix) -> Result<(), LinalgError> {
        if self.l.rows() != target.rows()
            || self.r.cols() != target.cols()
            || self.l.cols() != self.r.rows()
        {
            return Err(LinalgError::ShapeMismatch {
                op: "low_rank_fit",
                lhs: self.target_shape(),
                rhs: target.shape(),
            });
        }
        Ok(())
    }
}

/// Gradients of `l(L, R) = 1/2 ||L R - target||_F^2`:
/// `dL = (L R - target) R^T`, `dR = L^T (L R - target)`.
pub fn factor_gradients(
    l: &Matrix,
    r: &Matrix,
    target: &Matrix,
) -> Result<(Matrix, Matrix), LinalgError> {
    if l.cols() != r.rows() {
        return Err(LinalgError::ShapeMismatch {
            op: "factor_gradients",
            lhs: l.shape(),
            rhs: r.shape(),
        });
    }
    if l.rows() != target.rows() || r.cols() != target.cols() {
        return Err(LinalgError::ShapeMismatch {
            op: "factor_gradients",
            lhs: (l.rows(), r.cols()),
            rhs: target.shape(),
        });
    }
    let residual = l.matmul(r)?.sub(target)?;
    let dl = residual.matmul(&r.transpose())?;
    let dr = l.transpose().matmul(&residual)?;
    Ok((dl, dr))
}

/// Inner step size `base * 0.5 * (1 + cos(pi * k / K))` for `1 <= k <= K`.
/// Nonincreasing in `k` and exactly zero at `k = K`.
pub fn cosine_inner_lr(k: usize, total: usize, base: f64) -> Result<f64, LinalgError> {
    if k == 0 || k > total {
        return Err(LinalgError::InvalidArgument(format!(
            "inner iteration {k} out of range 1..={total}"
        )));
    }
    let phase = std::f64::consts::PI * k as f64 / total as f64;
    Ok(base * 0.5 * (1.0 + phase.cos()))
}

/// Spectral-norm estimate by power iteration on `A^T A`, deterministic
/// start vector. Cheap and rough; only used to scale inner step sizes.
pub fn spectral_norm_estimate(a: &Matrix, iters: usize) -> f64 {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5163_4d41);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    let mut sigma = 0.0;
    let mut av = vec![0.0; m];
    for _ in 0..iters {
        // av = A v
        for i in 0..m {
            av[i] = a.row(i).iter().zip(&v).map(|(x, y)| x * y).sum();
        }
        // v = A^T av
        v.fill(0.0);
        for i in 0..m {
            let s = av[i];
            if s == 0.0 {
                continue;
            }
            for (vj, &aij) in v.iter_mut().zip(a.row(i)) {
                *vj += s * aij;
            }
        }
        let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vnorm == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|x| *x /= vnorm);
        // ||A v|| after normalization approximates sigma_max
        sigma = vnorm.sqrt();
    }
    sigma
}

/// Default inner step size for [`low_rank_fit`]: `1 / sigma_max^2` capped
/// at 1.0. The cap keeps the L-factor update stable when the target has
/// small norm (the descent Lipschitz constant never drops below the
/// unit-scale factor norms after a cold refresh).
pub fn default_inner_lr(target: &Matrix) -> f64 {
    let sigma = spectral_norm_estimate(target, 8);
    if sigma <= f64::EPSILON {
        1.0
    } else {
        (1.0 / (sigma * sigma)).min(1.0)
    }
}

/// `K` gradient-descent iterations on `||L R - target||_F^2` warm-started
/// from `warm`, with the cosine inner schedule scaled by `base_lr`.
///
/// An exactly-zero warm start is a stationary point of the objective, so
/// the R factor receives a tiny deterministic i.i.d. perturbation (scale
/// 1e-4) before the first iteration.
pub fn low_rank_fit(
    target: &Matrix,
    warm: &LowRankPair,
    inner_iters: usize,
    base_lr: f64,
) -> Result<LowRankPair, LinalgError> {
    warm.check_against(target)?;
    if inner_iters == 0 {
        return Err(LinalgError::InvalidArgument(
            "inner_iters must be at least 1".to_string(),
        ));
    }
    let mut l = warm.l.clone();
    let mut r = warm.r.clone();
    if l.is_zero() && r.is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xada9_0000 + (target.rows() * 31 + target.cols()) as u64);
        let normal = rand_distr::Normal::new(0.0, 1e-4).expect("valid std");
        for v in r.data_mut() {
            *v = rng.sample(normal);
        }
    }
    for k in 1..=inner_iters {
        let eta = cosine_inner_lr(k, inner_iters, base_lr)?;
        let (dl, dr) = factor_gradients(&l, &r, target)?;
        l.axpy(-eta, &dl);
        r.axpy(-eta, &dr);
        if !l.all_finite() || !r.all_finite() {
            return Err(LinalgError::NonFinite {
                context: format!("low_rank_fit inner iteration {k} of {inner_iters}"),
            });
        }
    }
    Ok(LowRankPair { l, r })
}

/// Best rank-`r` approximation in Frobenius norm via truncated SVD,
/// returned with the singular values absorbed into `L` (`L = U S`,
/// `R = V^T`).
pub fn cold_refresh(target: &Matrix, rank: usize) -> Result<LowRankPair, LinalgError> {
    let (m, n) = target.shape();
    if rank == 0 || rank > m.min(n) {
        return Err(LinalgError::InvalidArgument(format!(
            "rank {rank} out of range for a {m}x{n} matrix"
        )));
    }
    let svd = svd(target)?;
    let mut l = Matrix::zeros(m, rank);
    let mut r = Matrix::zeros(rank, n);
    for j in 0..rank {
        let s = svd.sigma[j];
        for i in 0..m {
            l.set(i, j, svd.u.get(i, j) * s);
        }
        for i in 0..n {
            r.set(j, i, svd.vt.get(j, i));
        }
    }
    Ok(LowRankPair { l, r })
}

/// Thin SVD `A = U diag(sigma) V^T`, singular values descending.
pub struct Svd {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub vt: Matrix,
}

/// One-sided Jacobi SVD. Robust and dependency-free; plenty fast for the
/// optimizer-state matrices this crate handles.
pub fn svd(a: &Matrix) -> Result<Svd, LinalgError> {
    if !a.all_finite() {
        return Err(LinalgError::NonFinite {
            context: "svd input".to_string(),
        });
    }
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Err(LinalgError::InvalidArgument(
            "svd of an empty matrix".to_string(),
        ));
    }
    if m < n {
        // A = U S V^T  <=>  A^T = V S U^T
        let t = svd(&a.transpose())?;
        return Ok(Svd {
            u: t.vt.transpose(),
            sigma: t.sigma,
            vt: t.u.transpose(),
        });
    }

    // Work on a column-major copy of A (m >= n): columns get orthogonalized
    // in place while V accumulates the rotations.
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..m).map(|i| a.get(i, j)).collect())
        .collect();
    let mut v = Matrix::identity(n);

    let tol = 1e-14;
    let max_sweeps = 60;
    for _ in 0..max_sweeps {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for i in 0..m {
                    app += cols[p][i] * cols[p][i];
                    aqq += cols[q][i] * cols[q][i];
                    apq += cols[p][i] * cols[q][i];
                }
                if apq.abs() <= tol * (app * aqq).sqrt() || apq == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let vp = cols[p][i];
                    let vq = cols[q][i];
                    cols[p][i] = c * vp - s * vq;
                    cols[q][i] = s * vp + c * vq;
                }
                for i in 0..n {
                    let vp = v.get(i, p);
                    let vq = v.get(i, q);
                    v.set(i, p, c * vp - s * vq);
                    v.set(i, q, s * vp + c * vq);
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).expect("finite norms"));

    let mut u = Matrix::zeros(m, n);
    let mut sigma = vec![0.0; n];
    let mut vt = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let s = norms[src];
        sigma[dst] = s;
        if s > 0.0 {
            for i in 0..m {
                u.set(i, dst, cols[src][i] / s);
            }
        }
        for i in 0..n {
            vt.set(dst, i, v.get(i, src));
        }
    }
    Ok(Svd { u, sigma, vt })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn matmul_identity() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let i = Matrix::identity(2);
        assert_eq!(i.matmul(&a).unwrap(), a);
    }

    #[test]
    fn matmul_hand_case() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = Matrix::from_rows(&[&[0.0], &[1.0]]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c, Matrix::from_rows(&[&[2.0], &[4.0]]));
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut r = rng(7);
        let a = Matrix::gaussian(7, 3, 1.0, &mut r);
        let b = Matrix::gaussian(3, 5, 1.0, &mut r);
        let c = a.matmul(&b).unwrap();
        for i in 0..7 {
            for j in 0..5 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += a.get(i, k) * b.get(k, j);
                }
                assert!((c.get(i, j) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_mismatch_errors() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        assert!(matches!(
            a.matmul(&b),
            Err(LinalgError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn frobenius_basics() {
        assert_eq!(Matrix::zeros(3, 4).frobenius_norm(), 0.0);
        let m = Matrix::from_rows(&[&[3.0, 4.0]]);
        assert_eq!(m.frobenius_norm(), 5.0);
    }

    #[test]
    fn frobenius_matches_summation_oracle() {
        let mut r = rng(11);
        let m = Matrix::gaussian(5, 5, 2.0, &mut r);
        let direct: f64 = m.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let rel = (m.frobenius_norm() - direct).abs() / direct;
        assert!(rel < 1e-12);
    }

    #[test]
    fn factor_gradients_zero_residual() {
        let l = Matrix::from_rows(&[&[1.0], &[2.0]]);
        let r = Matrix::from_rows(&[&[3.0, 4.0]]);
        let target = l.matmul(&r).unwrap();
        let (dl, dr) = factor_gradients(&l, &r, &target).unwrap();
        assert_eq!(dl.max_abs(), 0.0);
        assert_eq!(dr.max_abs(), 0.0);
    }

    #[test]
    fn factor_gradients_scalar_case() {
        let l = Matrix::from_rows(&[&[1.0]]);
        let r = Matrix::from_rows(&[&[1.0]]);
        let target = Matrix::from_rows(&[&[0.0]]);
        let (dl, dr) = factor_gradients(&l, &r, &target).unwrap();
        assert_eq!(dl.get(0, 0), 1.0);
        assert_eq!(dr.get(0, 0), 1.0);
    }

    #[test]
    fn factor_gradients_match_finite_differences() {
        let mut r = rng(23);
        for _ in 0..100 {
            let l = Matrix::gaussian(6, 2, 1.0, &mut r);
            let rf = Matrix::gaussian(2, 4, 1.0, &mut r);
            let target = Matrix::gaussian(6, 4, 1.0, &mut r);
            let (dl, dr) = factor_gradients(&l, &rf, &target).unwrap();
            let obj = |l: &Matrix, r: &Matrix| -> f64 {
                let e = l.matmul(r).unwrap().sub(&target).unwrap();
                0.5 * e.frobenius_norm().powi(2)
            };
            let h = 1e-6;
            // probe one random entry of each factor per instance
            let (i, j) = (
                (r.random::<u32>() as usize) % 6,
                (r.random::<u32>() as usize) % 2,
            );
            let mut lp = l.clone();
            lp.set(i, j, l.get(i, j) + h);
            let mut lm = l.clone();
            lm.set(i, j, l.get(i, j) - h);
            let fd = (obj(&lp, &rf) - obj(&lm, &rf)) / (2.0 * h);
            let rel = (fd - dl.get(i, j)).abs() / fd.abs().max(1e-8);
            assert!(rel < 1e-5, "dL mismatch: fd={fd}, analytic={}", dl.get(i, j));

            let (i, j) = (
                (r.random::<u32>() as usize) % 2,
                (r.random::<u32>() as usize) % 4,
            );
            let mut rp = rf.clone();
            rp.set(i, j, rf.get(i, j) + h);
            let mut rm = rf.clone();
            rm.set(i, j, rf.get(i, j) - h);
            let fd = (obj(&l, &rp) - obj(&l, &rm)) / (2.0 * h);
            let rel = (fd - dr.get(i, j)).abs() / fd.abs().max(1e-8);
            assert!(rel < 1e-5, "dR mismatch: fd={fd}, analytic={}", dr.get(i, j));
        }
    }

    #[test]
    fn cosine_lr_endpoints() {
        assert!(cosine_inner_lr(5, 5, 1.0).unwrap().abs() < 1e-15);
        assert!((cosine_inner_lr(2, 4, 1.0).unwrap() - 0.5).abs() < 1e-15);
        let expected = 0.5 * (1.0 + (std::f64::consts::PI / 5.0).cos());
        assert!((cosine_inner_lr(1, 5, 1.0).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.9045).abs() < 1e-4);
    }

    #[test]
    fn cosine_lr_monotone_and_range_checked() {
        let mut prev = f64::INFINITY;
        for k in 1..=10 {
            let v = cosine_inner_lr(k, 10, 2.0).unwrap();
            assert!(v <= prev);
            prev = v;
        }
        assert!(cosine_inner_lr(0, 10, 1.0).is_err());
        assert!(cosine_inner_lr(11, 10, 1.0).is_err());
    }

    #[test]
    fn low_rank_fit_fixed_point() {
        let u = Matrix::from_rows(&[&[1.0], &[2.0], &[-1.0]]);
        let vt = Matrix::from_rows(&[&[0.5, 1.5]]);
        let target = u.matmul(&vt).unwrap();
        let warm = LowRankPair { l: u.clone(), r: vt.clone() };
        let fit = low_rank_fit(&target, &warm, 5, 0.1).unwrap();
        assert!((fit.product().sub(&target).unwrap().max_abs()) < 1e-12);
    }

    #[test]
    fn low_rank_fit_recovers_rank_one() {
        let mut r = rng(3);
        let u = Matrix::gaussian(8, 1, 1.0, &mut r);
        let vt = Matrix::gaussian(1, 6, 1.0, &mut r);
        let target = u.matmul(&vt).unwrap();
        let warm = LowRankPair {
            l: Matrix::gaussian(8, 1, 0.01, &mut r),
            r: Matrix::gaussian(1, 6, 0.01, &mut r),
        };
        let base = default_inner_lr(&target);
        let mut pair = warm;
        for _ in 0..60 {
            pair = low_rank_fit(&target, &pair, 5, base).unwrap();
        }
        let rel = pair.product().sub(&target).unwrap().frobenius_norm() / target.frobenius_norm();
        assert!(rel < 1e-3, "relative residual {rel}");
    }

    #[test]
    fn low_rank_fit_objective_does_not_increase() {
        let mut r = rng(17);
        for trial in 0..10 {
            let target = Matrix::gaussian(20, 20, 1.0, &mut r);
            let warm = LowRankPair {
                l: Matrix::gaussian(20, 5, 0.3, &mut r),
                r: Matrix::gaussian(5, 20, 0.3, &mut r),
            };
            let before = warm.product().sub(&target).unwrap().frobenius_norm();
            let base = default_inner_lr(&target);
            let fit = low_rank_fit(&target, &warm, 5, base).unwrap();
            let after = fit.product().sub(&target).unwrap().frobenius_norm();
            assert!(
                after <= before * (1.0 + 1e-12),
                "trial {trial}: objective rose from {before} to {after}"
            );
        }
    }

    #[test]
    fn low_rank_fit_breaks_zero_symmetry() {
        let mut r = rng(29);
        let target = Matrix::gaussian(6, 6, 1.0, &mut r);
        let warm = LowRankPair::zeros(6, 6, 2).unwrap();
        let fit = low_rank_fit(&target, &warm, 5, default_inner_lr(&target)).unwrap();
        assert!(fit.l.frobenius_norm() > 0.0 || fit.r.frobenius_norm() > 0.0);
        // deterministic across calls
        let fit2 = low_rank_fit(&target, &warm, 5, default_inner_lr(&target)).unwrap();
        assert_eq!(fit.l, fit2.l);
        assert_eq!(fit.r, fit2.r);
    }

    #[test]
    fn cold_refresh_diagonal_eckart_young() {
        let target = Matrix::from_rows(&[
            &[3.0, 0.0, 0.0],
            &[0.0, 2.0, 0.0],
            &[0.0, 0.0, 1.0],
        ]);
        let pair = cold_refresh(&target, 2).unwrap();
        let p = pair.product();
        let expected = Matrix::from_rows(&[
            &[3.0, 0.0, 0.0],
            &[0.0, 2.0, 0.0],
            &[0.0, 0.0, 0.0],
        ]);
        assert!(p.sub(&expected).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn cold_refresh_exact_rank_one() {
        let mut r = rng(5);
        let u = Matrix::gaussian(9, 1, 1.0, &mut r);
        let vt = Matrix::gaussian(1, 4, 1.0, &mut r);
        let target = u.matmul(&vt).unwrap();
        let pair = cold_refresh(&target, 1).unwrap();
        let rel = pair.product().sub(&target).unwrap().frobenius_norm() / target.frobenius_norm();
        assert!(rel < 1e-10);
    }

    #[test]
    fn cold_refresh_rank_out_of_range() {
        let target = Matrix::zeros(4, 3);
        assert!(cold_refresh(&target, 0).is_err());
        assert!(cold_refresh(&target, 4).is_err());
    }

    #[test]
    fn cold_refresh_full_rank_reconstructs() {
        let mut r = rng(13);
        let target = Matrix::gaussian(10, 8, 1.0, &mut r);
        let pair = cold_refresh(&target, 8).unwrap();
        let rel = pair.product().sub(&target).unwrap().frobenius_norm() / target.frobenius_norm();
        assert!(rel < 1e-8);
    }

    /// Independent eigen-oracle: symmetric Jacobi eigenvalues of A^T A give
    /// the squared singular values without touching the SVD code path.
    fn gram_eigenvalues(a: &Matrix) -> Vec<f64> {
        let n = a.cols();
        let mut g = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..a.rows() {
                    acc += a.get(k, i) * a.get(k, j);
                }
                g[i][j] = acc;
            }
        }
        // classical Jacobi eigenvalue iteration on the Gram matrix
        for _ in 0..100 {
            let mut off = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    off += g[i][j] * g[i][j];
                }
            }
            if off.sqrt() < 1e-13 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if g[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = 0.5 * (g[q][q] - g[p][p]) / g[p][q];
                    let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    for k in 0..n {
                        let gkp = g[k][p];
                        let gkq = g[k][q];
                        g[k][p] = c * gkp - s * gkq;
                        g[k][q] = s * gkp + c * gkq;
                    }
                    for k in 0..n {
                        let gpk = g[p][k];
                        let gqk = g[q][k];
                        g[p][k] = c * gpk - s * gqk;
                        g[q][k] = s * gpk + c * gqk;
                    }
                }
            }
        }
        let mut eig: Vec<f64> = (0..n).map(|i| g[i][i].max(0.0)).collect();
        eig.sort_by(|x, y| y.partial_cmp(x).unwrap());
        eig
    }

    #[test]
    fn cold_refresh_residual_matches_eigen_oracle() {
        let mut r = rng(41);
        let target = Matrix::gaussian(10, 8, 1.0, &mut r);
        let pair = cold_refresh(&target, 3).unwrap();
        let residual = pair.product().sub(&target).unwrap().frobenius_norm();
        let eig = gram_eigenvalues(&target);
        let expected: f64 = eig[3..].iter().sum::<f64>().sqrt();
        assert!(
            (residual - expected).abs() < 1e-8,
            "residual {residual} vs oracle {expected}"
        );
    }

    #[test]
    fn svd_orthogonality_and_reconstruction() {
        let mut r = rng(31);
        for &(m, n) in &[(6, 6), (9, 4), (4, 9)] {
            let a = Matrix::gaussian(m, n, 1.0, &mut r);
            let s = svd(&a).unwrap();
            let k = m.min(n);
            // descending singular values
            for i in 1..k {
                assert!(s.sigma[i] <= s.sigma[i - 1] + 1e-12);
            }
            // reconstruction
            let mut us = Matrix::zeros(m, k);
            for i in 0..m {
                for j in 0..k {
                    us.set(i, j, s.u.get(i, j) * s.sigma[j]);
                }
            }
            let rec = us.matmul(&s.vt).unwrap();
            assert!(rec.sub(&a).unwrap().max_abs() < 1e-10);
            // U^T U = I, V V^T = I on the thin part
            let utu = s.u.transpose().matmul(&s.u).unwrap();
            let vvt = s.vt.matmul(&s.vt.transpose()).unwrap();
            for i in 0..k {
                for j in 0..k {
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((utu.get(i, j) - e).abs() < 1e-10);
                    assert!((vvt.get(i, j) - e).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn spectral_norm_estimate_close_to_svd() {
        let mut r = rng(19);
        let a = Matrix::gaussian(12, 7, 1.5, &mut r);
        let s = svd(&a).unwrap();
        let est = spectral_norm_estimate(&a, 30);
        let rel = (est - s.sigma[0]).abs() / s.sigma[0];
        assert!(rel < 1e-3, "estimate {est} vs sigma {}", s.sigma[0]);
    }
}
