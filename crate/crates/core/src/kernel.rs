//! ARD squared-exponential kernel.

use serde::{Deserialize, Serialize};

use crate::error::{input_err, Result};
use crate::linalg::Mat;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelHypers<T> {
    pub signal_variance: T,
    pub lengthscales: Vec<T>,
}

impl<T: Scalar> KernelHypers<T> {
    pub fn new(signal_variance: T, lengthscales: Vec<T>) -> Result<Self> {
        if !(signal_variance > T::zero()) {
            return input_err("kernel signal variance must be positive");
        }
        if lengthscales.is_empty() || lengthscales.iter().any(|&l| !(l > T::zero())) {
            return input_err("kernel lengthscales must be non-empty and positive");
        }
        Ok(Self { signal_variance, lengthscales })
    }

    /// Unit signal variance and unit lengthscales.
    pub fn unit(latent_dim: usize) -> Self {
        Self { signal_variance: T::one(), lengthscales: vec![T::one(); latent_dim] }
    }

    pub fn latent_dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Log-space coordinates `(ln σ_f², ln l_1, …, ln l_Q)`.
    pub fn to_log(&self) -> Vec<T> {
        std::iter::once(self.signal_variance.ln())
            .chain(self.lengthscales.iter().map(|l| l.ln()))
            .collect()
    }

    pub fn from_log(log: &[T]) -> Self {
        Self {
            signal_variance: log[0].exp(),
            lengthscales: log[1..].iter().map(|l| l.exp()).collect(),
        }
    }

    #[inline]
    pub(crate) fn inv_sq_lengthscales(&self) -> Vec<T> {
        self.lengthscales.iter().map(|&l| T::one() / (l * l)).collect()
    }
}

#[inline]
pub(crate) fn rbf_with_inv_sq<T: Scalar>(x1: &[T], x2: &[T], sf2: T, inv_sq: &[T]) -> T {
    let mut r2 = T::zero();
    for q in 0..inv_sq.len() {
        let d = x1[q] - x2[q];
        r2 += d * d * inv_sq[q];
    }
    sf2 * (-T::c(0.5) * r2).exp()
}

/// `σ_f² · exp(−½ Σ_q (x1_q − x2_q)² / l_q²)`.
pub fn ard_rbf<T: Scalar>(x1: &[T], x2: &[T], h: &KernelHypers<T>) -> Result<T> {
    let q = h.latent_dim();
    if x1.len() != q || x2.len() != q {
        return input_err(format!(
            "ard_rbf: inputs have dimensions {} and {}, kernel expects {q}",
            x1.len(),
            x2.len()
        ));
    }
    Ok(rbf_with_inv_sq(x1, x2, h.signal_variance, &h.inv_sq_lengthscales()))
}

/// Cross-covariance between the rows of `xa` and `xb`.
pub fn gram<T: Scalar>(xa: &Mat<T>, xb: &Mat<T>, h: &KernelHypers<T>) -> Result<Mat<T>> {
    let q = h.latent_dim();
    if xa.cols() != q || xb.cols() != q {
        return input_err(format!(
            "gram: inputs have {} and {} columns, kernel expects {q}",
            xa.cols(),
            xb.cols()
        ));
    }
    let inv_sq = h.inv_sq_lengthscales();
    Ok(Mat::from_fn(xa.rows(), xb.rows(), |i, j| {
        rbf_with_inv_sq(xa.row(i), xb.row(j), h.signal_variance, &inv_sq)
    }))
}

/// Backpropagates `dk` (the gradient w.r.t. every entry of `k = gram(xa, xb)`)
/// into the inputs and the log-hyperparameters.
///
/// `dlog` has layout `(ln σ_f², ln l_1..Q)`.
pub(crate) fn gram_backward<T: Scalar>(
    xa: &Mat<T>,
    xb: &Mat<T>,
    k: &Mat<T>,
    dk: &Mat<T>,
    h: &KernelHypers<T>,
    mut dxa: Option<&mut Mat<T>>,
    mut dxb: Option<&mut Mat<T>>,
    dlog: &mut [T],
) {
    let q = h.latent_dim();
    let inv_sq = h.inv_sq_lengthscales();
    for i in 0..xa.rows() {
        for j in 0..xb.rows() {
            let g = dk[(i, j)] * k[(i, j)];
            if g == T::zero() {
                continue;
            }
            dlog[0] += g;
            let (ra, rb) = (xa.row(i), xb.row(j));
            for d in 0..q {
                let diff = ra[d] - rb[d];
                let s = g * diff * inv_sq[d];
                dlog[1 + d] += s * diff;
                if let Some(dxa) = dxa.as_deref_mut() {
                    dxa[(i, d)] -= s;
                }
                if let Some(dxb) = dxb.as_deref_mut() {
                    dxb[(j, d)] += s;
                }
            }
        }
    }
}
