//! Small dense row-major matrices and the jittered Cholesky used by the
//! sparse-GP algebra. Sizes here are M×M (inducing points) or batch×M, so
//! straightforward loops are adequate.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{input_err, numerical_err, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return input_err(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return input_err("ragged rows");
        }
        Ok(Self { rows: rows.len(), cols, data: rows.concat() })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return input_err(format!(
                "matmul shape mismatch: {:?} x {:?}",
                self.shape(),
                other.shape()
            ));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == T::zero() {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[T]) -> Vec<T> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `selfᵀ · v`.
    pub fn tr_matvec(&self, v: &[T]) -> Vec<T> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![T::zero(); self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        out
    }

    pub fn add_diag(&mut self, value: T) {
        let n = self.rows.min(self.cols);
        for i in 0..n {
            self[(i, i)] += value;
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    pub fn frobenius(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn cast<U: Scalar>(&self) -> Mat<U> {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| U::c(x.f64())).collect() }
    }
}

impl<T> Index<(usize, usize)> for Mat<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Mat<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Lower Cholesky factor of `K + jitter_used·I`.
#[derive(Clone, Debug)]
pub struct CholFactor<T> {
    pub lower: Mat<T>,
    pub jitter_used: T,
}

/// Number of ×10 escalation steps after the base jitter.
pub const JITTER_STEPS: u32 = 6;
pub const DEFAULT_BASE_JITTER: f64 = 1e-8;

fn try_cholesky<T: Scalar>(k: &Mat<T>, jitter: T) -> std::result::Result<Mat<T>, (usize, T)> {
    let n = k.rows();
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = k[(j, j)] + jitter;
        for p in 0..j {
            d -= l[(j, p)] * l[(j, p)];
        }
        if !(d > T::zero()) || !d.is_finite() {
            return Err((j, d));
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in j + 1..n {
            let mut s = k[(i, j)];
            for p in 0..j {
                s -= l[(i, p)] * l[(j, p)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Plain Cholesky factorisation; fails on a non-positive pivot.
pub fn cholesky<T: Scalar>(k: &Mat<T>) -> Result<CholFactor<T>> {
    if k.rows() != k.cols() {
        return input_err(format!("cholesky of non-square {}x{} matrix", k.rows(), k.cols()));
    }
    match try_cholesky(k, T::zero()) {
        Ok(lower) => Ok(CholFactor { lower, jitter_used: T::zero() }),
        Err((j, d)) => numerical_err(format!("matrix is not positive definite: pivot {j} = {:e}", d.f64())),
    }
}

/// Cholesky factorisation with jitter escalation.
///
/// Tries jitter `0`, then `base`, `10·base`, … `10⁶·base`, all scaled by the
/// mean diagonal of `k`, and returns the first success.
pub fn jittered_cholesky<T: Scalar>(k: &Mat<T>, base_jitter: T) -> Result<CholFactor<T>> {
    let (n, m) = k.shape();
    if n != m {
        return input_err(format!("cholesky of non-square {n}x{m} matrix"));
    }
    let mean_diag = if n == 0 {
        T::one()
    } else {
        (0..n).map(|i| k[(i, i)]).sum::<T>() / T::of_usize(n)
    };
    let sym_tol = T::c(1e-10).max(T::epsilon() * T::c(100.0)) * mean_diag.abs().max(T::one());
    if !k.is_symmetric(sym_tol) {
        return input_err("cholesky input is not symmetric");
    }
    let scale = if mean_diag > T::zero() { mean_diag } else { T::one() };
    let mut last_failure = (0, T::zero());
    let schedule = std::iter::once(T::zero()).chain(
        (0..=JITTER_STEPS).map(|s| base_jitter * scale * T::c(10f64.powi(s as i32))),
    );
    for jitter in schedule {
        match try_cholesky(k, jitter) {
            Ok(lower) => return Ok(CholFactor { lower, jitter_used: jitter }),
            Err(fail) => last_failure = fail,
        }
    }
    let max_diag = (0..n).map(|i| k[(i, i)]).fold(T::neg_infinity(), T::max);
    let min_diag = (0..n).map(|i| k[(i, i)]).fold(T::infinity(), T::min);
    numerical_err(format!(
        "cholesky failed at maximum jitter {:e}: pivot {} = {:e}; diagonal range [{:e}, {:e}]",
        (base_jitter * scale * T::c(10f64.powi(JITTER_STEPS as i32))).f64(),
        last_failure.0,
        last_failure.1.f64(),
        min_diag.f64(),
        max_diag.f64()
    ))
}

impl<T: Scalar> CholFactor<T> {
    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    /// Solves `L y = b` in place.
    pub fn forward_sub(&self, b: &mut [T]) {
        let l = &self.lower;
        for i in 0..b.len() {
            let s = b[i] - dot(&l.row(i)[..i], &b[..i]);
            b[i] = s / l[(i, i)];
        }
    }

    /// Solves `Lᵀ x = y` in place.
    pub fn backward_sub(&self, y: &mut [T]) {
        let l = &self.lower;
        let n = y.len();
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[(k, i)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
    }

    pub fn solve_vec(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.forward_sub(&mut x);
        self.backward_sub(&mut x);
        x
    }

    /// `ln det(K + jitter·I)`.
    pub fn log_det(&self) -> T {
        (0..self.dim()).map(|i| self.lower[(i, i)].ln()).sum::<T>() * T::c(2.0)
    }

    /// Explicit `(K + jitter·I)⁻¹`; only used for M×M matrices.
    pub fn inverse(&self) -> Mat<T> {
        let n = self.dim();
        let mut inv = Mat::zeros(n, n);
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e.iter_mut().for_each(|x| *x = T::zero());
            e[j] = T::one();
            let col = self.solve_vec(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        // symmetrise round-off
        for i in 0..n {
            for j in 0..i {
                let avg = (inv[(i, j)] + inv[(j, i)]) * T::c(0.5);
                inv[(i, j)] = avg;
                inv[(j, i)] = avg;
            }
        }
        inv
    }

    pub fn reconstruct(&self) -> Mat<T> {
        self.lower.matmul(&self.lower.transpose()).expect("square factor")
    }
}

/// Solves `(K + jitter·I) X = B` column by column.
pub fn chol_solve<T: Scalar>(f: &CholFactor<T>, b: &Mat<T>) -> Result<Mat<T>> {
    if b.rows() != f.dim() {
        return input_err(format!(
            "chol_solve: factor is {}x{}, right-hand side has {} rows",
            f.dim(),
            f.dim(),
            b.rows()
        ));
    }
    let mut out = Mat::zeros(b.rows(), b.cols());
    let mut col = vec![T::zero(); b.rows()];
    for j in 0..b.cols() {
        for i in 0..b.rows() {
            col[i] = b[(i, j)];
        }
        f.forward_sub(&mut col);
        f.backward_sub(&mut col);
        for i in 0..b.rows() {
            out[(i, j)] = col[i];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_spd(n: usize, seed: u64) -> Mat<f64> {
        let mut rng = crate::seed::rng_from_seed(seed);
        let a = Mat::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut k = a.matmul(&a.transpose()).unwrap();
        k.add_diag(0.5);
        k
    }

    #[test]
    fn identity_factor_has_no_jitter() {
        let f = jittered_cholesky(&Mat::<f64>::identity(3), 1e-8).unwrap();
        assert_eq!(f.jitter_used, 0.0);
        assert_eq!(f.lower, Mat::identity(3));
    }

    #[test]
    fn two_by_two_hand_factor() {
        let k = Mat::from_rows(&[vec![4.0f64, 2.0], vec![2.0, 3.0]]).unwrap();
        let f = jittered_cholesky(&k, 1e-8).unwrap();
        assert_eq!(f.jitter_used, 0.0);
        assert!((f.lower[(0, 0)] - 2.0).abs() < 1e-15);
        assert!((f.lower[(1, 0)] - 1.0).abs() < 1e-15);
        assert!((f.lower[(1, 1)] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(f.lower[(0, 1)], 0.0);
        assert!(f.reconstruct().max_abs_diff(&k) < 1e-14);
    }

    #[test]
    fn singular_matrix_escalates_jitter() {
        let k = Mat::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let f = jittered_cholesky(&k, 1e-8).unwrap();
        assert!(f.jitter_used > 0.0);
        let mut target = k.clone();
        target.add_diag(f.jitter_used);
        let rec = f.reconstruct();
        assert!(rec.max_abs_diff(&target) <= 1e-8 * target.frobenius());
    }

    #[test]
    fn unrecoverable_matrix_reports_diagnostics() {
        let k = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, -5.0]]).unwrap();
        let err = jittered_cholesky(&k, 1e-8).unwrap_err().to_string();
        assert!(err.contains("pivot 1"), "{err}");
    }

    #[test]
    fn rejects_asymmetric_and_nonsquare() {
        let k = Mat::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]).unwrap();
        assert!(jittered_cholesky(&k, 1e-8).is_err());
        assert!(jittered_cholesky(&Mat::<f64>::zeros(2, 3), 1e-8).is_err());
    }

    #[test]
    fn solve_identity_returns_rhs() {
        let f = jittered_cholesky(&Mat::<f64>::identity(3), 1e-8).unwrap();
        let b = Mat::from_fn(3, 2, |i, j| (i * 2 + j) as f64 - 1.5);
        assert_eq!(chol_solve(&f, &b).unwrap(), b);
    }

    #[test]
    fn solve_two_by_two_by_hand() {
        let k = Mat::from_rows(&[vec![4.0f64, 2.0], vec![2.0, 3.0]]).unwrap();
        let f = jittered_cholesky(&k, 1e-8).unwrap();
        let x = chol_solve(&f, &Mat::from_vec(2, 1, vec![2.0, 3.0]).unwrap()).unwrap();
        assert!((x[(0, 0)] - 0.0).abs() < 1e-14);
        assert!((x[(1, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn solve_random_spd_residual() {
        for seed in 0..5 {
            let k = random_spd(6, seed);
            let f = jittered_cholesky(&k, 1e-8).unwrap();
            let mut rng = crate::seed::rng_from_seed(100 + seed);
            let b = Mat::from_fn(6, 3, |_, _| rng.random::<f64>() - 0.5);
            let x = chol_solve(&f, &b).unwrap();
            let mut kj = k.clone();
            kj.add_diag(f.jitter_used);
            let r = kj.matmul(&x).unwrap();
            let mut diff = r.clone();
            for (d, &bb) in diff.as_mut_slice().iter_mut().zip(b.as_slice()) {
                *d -= bb;
            }
            assert!(diff.frobenius() / b.frobenius() < 1e-7);
        }
    }

    #[test]
    fn solve_shape_mismatch() {
        let f = jittered_cholesky(&Mat::<f64>::identity(3), 1e-8).unwrap();
        assert!(chol_solve(&f, &Mat::zeros(2, 1)).is_err());
    }

    #[test]
    fn inverse_and_log_det() {
        let k = random_spd(5, 9);
        let f = jittered_cholesky(&k, 1e-8).unwrap();
        let prod = k.matmul(&f.inverse()).unwrap();
        assert!(prod.max_abs_diff(&Mat::identity(5)) < 1e-9);
        let k2 = Mat::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let f2 = jittered_cholesky(&k2, 1e-8).unwrap();
        assert!((f2.log_det() - 8f64.ln()).abs() < 1e-14);
    }
}
