//! Variational posteriors `q(X)` and `q(U)`, their KL divergences, latent
//! reparameterisation and the marginal moments of `q(f | X)`.

use crate::error::{input_err, numerical_err, Result};
use crate::kernel::{gram, KernelHypers};
use crate::linalg::{dot, jittered_cholesky, CholFactor, Mat};
use crate::scalar::Scalar;

/// Mean-field `q(X)`: independent `N(m_nq, s_nq²)` per entry.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPosterior<T> {
    pub means: Mat<T>,
    pub stds: Mat<T>,
}

impl<T: Scalar> LatentPosterior<T> {
    pub fn new(means: Mat<T>, stds: Mat<T>) -> Result<Self> {
        if means.shape() != stds.shape() {
            return input_err("latent means and stds differ in shape");
        }
        if stds.as_slice().iter().any(|&s| !(s > T::zero())) {
            return input_err("latent stds must be strictly positive");
        }
        Ok(Self { means, stds })
    }

    pub fn n(&self) -> usize {
        self.means.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.means.cols()
    }
}

/// `q(u) = N(mu, L Lᵀ)` for one GP channel.
#[derive(Clone, Debug, PartialEq)]
pub struct InducingChannel<T> {
    pub mu: Vec<T>,
    pub sigma_chol: Mat<T>,
}

impl<T: Scalar> InducingChannel<T> {
    pub fn new(mu: Vec<T>, sigma_chol: Mat<T>) -> Result<Self> {
        let m = mu.len();
        if sigma_chol.shape() != (m, m) {
            return input_err("inducing covariance factor must be M×M");
        }
        for i in 0..m {
            if !(sigma_chol[(i, i)] > T::zero()) {
                return input_err("inducing covariance factor needs a positive diagonal");
            }
            if (i + 1..m).any(|j| sigma_chol[(i, j)] != T::zero()) {
                return input_err("inducing covariance factor must be lower-triangular");
            }
        }
        Ok(Self { mu, sigma_chol })
    }

    pub fn m(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma(&self) -> Mat<T> {
        self.sigma_chol.matmul(&self.sigma_chol.transpose()).expect("square factor")
    }

    pub fn log_det_sigma(&self) -> T {
        (0..self.m()).map(|i| self.sigma_chol[(i, i)].ln()).sum::<T>() * T::c(2.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InducingInputs<T> {
    pub z: Mat<T>,
}

impl<T: Scalar> InducingInputs<T> {
    pub fn new(z: Mat<T>) -> Result<Self> {
        if z.rows() == 0 {
            return input_err("at least one inducing input is required");
        }
        for i in 0..z.rows() {
            if (0..i).any(|j| z.row(i) == z.row(j)) {
                return input_err(format!("inducing inputs {i} is duplicated"));
            }
        }
        Ok(Self { z })
    }

    pub fn m(&self) -> usize {
        self.z.rows()
    }
}

/// Isotropic latent prior `x_nq ~ N(0, σ_x²)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatentPrior<T> {
    pub variance: T,
}

impl<T: Scalar> Default for LatentPrior<T> {
    fn default() -> Self {
        Self { variance: T::one() }
    }
}

/// `KL(N(m, s²) || N(0, σ_x²))` for one entry.
#[inline]
pub fn kl_x_entry<T: Scalar>(m: T, s: T, prior_var: T) -> T {
    let half = T::c(0.5);
    half * prior_var.ln() - s.ln() + (s * s + m * m) / (T::c(2.0) * prior_var) - half
}

pub fn kl_x<T: Scalar>(q: &LatentPosterior<T>, prior: &LatentPrior<T>) -> T {
    q.means
        .as_slice()
        .iter()
        .zip(q.stds.as_slice())
        .map(|(&m, &s)| kl_x_entry(m, s, prior.variance))
        .sum()
}

/// `KL(q(u) || N(0, K_MM))` with `K_MM` given by its (jittered) factor.
pub fn kl_u<T: Scalar>(ch: &InducingChannel<T>, kmm: &CholFactor<T>) -> Result<T> {
    let m = ch.m();
    if kmm.dim() != m {
        return input_err(format!("kl_u: channel has M = {m}, K_MM is {0}x{0}", kmm.dim()));
    }
    // tr(K⁻¹Σ) = ||L⁻¹ S||_F²
    let mut trace = T::zero();
    let mut col = vec![T::zero(); m];
    for j in 0..m {
        for i in 0..m {
            col[i] = ch.sigma_chol[(i, j)];
        }
        kmm.forward_sub(&mut col);
        trace += dot(&col, &col);
    }
    let mut alpha = ch.mu.clone();
    kmm.forward_sub(&mut alpha);
    let maha = dot(&alpha, &alpha);
    Ok(T::c(0.5) * (trace + maha - T::of_usize(m) + kmm.log_det() - ch.log_det_sigma()))
}

/// Reparameterised draw `m + s ⊙ eps`.
pub fn sample_latents<T: Scalar>(q: &LatentPosterior<T>, eps: &Mat<T>) -> Result<Mat<T>> {
    if eps.shape() != q.means.shape() {
        return input_err("noise shape differs from the latent posterior");
    }
    let data = q
        .means
        .as_slice()
        .iter()
        .zip(q.stds.as_slice())
        .zip(eps.as_slice())
        .map(|((&m, &s), &e)| m + s * e)
        .collect();
    Mat::from_vec(q.n(), q.latent_dim(), data)
}

/// Tolerance below which a negative predictive variance is an error.
pub(crate) fn variance_tolerance<T: Scalar>(signal_variance: T) -> T {
    T::c(1e-8).max(T::c(1e3) * T::epsilon()) * signal_variance.max(T::one())
}

/// Predictive variance from its pieces, floored at zero.
#[inline]
pub(crate) fn floor_variance<T: Scalar>(b2: T, tol: T) -> Result<T> {
    if b2 < -tol || b2.is_nan() {
        return numerical_err(format!("predictive variance {:e} is negative", b2.f64()));
    }
    Ok(b2.max(T::zero()))
}

/// Marginal mean `a` and standard deviation `b` of `q(f | X)` per row of `x`:
/// `a = K_NM K_MM⁻¹ μ`, `b² = diag(K_NN + K_NM K_MM⁻¹ (Σ − K_MM) K_MM⁻¹ K_MN)`.
pub fn channel_moments<T: Scalar>(
    x: &Mat<T>,
    z: &InducingInputs<T>,
    ch: &InducingChannel<T>,
    h: &KernelHypers<T>,
    base_jitter: T,
) -> Result<(Vec<T>, Vec<T>)> {
    if ch.m() != z.m() {
        return input_err("channel and inducing inputs disagree on M");
    }
    let kmm = jittered_cholesky(&gram(&z.z, &z.z, h)?, base_jitter)?;
    let knm = gram(x, &z.z, h)?;
    channel_moments_with(&knm, h.signal_variance, &kmm, ch)
}

/// As [`channel_moments`] with precomputed `K_NM` and factor of `K_MM`.
pub fn channel_moments_with<T: Scalar>(
    knm: &Mat<T>,
    signal_variance: T,
    kmm: &CholFactor<T>,
    ch: &InducingChannel<T>,
) -> Result<(Vec<T>, Vec<T>)> {
    let m = ch.m();
    let alpha = kmm.solve_vec(&ch.mu);
    let tol = variance_tolerance(signal_variance);
    let mut a = Vec::with_capacity(knm.rows());
    let mut b = Vec::with_capacity(knm.rows());
    let mut r = vec![T::zero(); m];
    for n in 0..knm.rows() {
        let k = knm.row(n);
        let w = kmm.solve_vec(k);
        a.push(dot(k, &alpha));
        // r = Sᵀ w
        for (j, rj) in r.iter_mut().enumerate() {
            *rj = (j..m).map(|i| ch.sigma_chol[(i, j)] * w[i]).sum();
        }
        let b2 = signal_variance - dot(k, &w) + dot(&r, &r);
        b.push(floor_variance(b2, tol)?.sqrt());
    }
    Ok((a, b))
}
