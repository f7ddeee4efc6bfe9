//! The evidence lower bound, its gradient, and the held-out predictive
//! log-likelihood.
//!
//! For a batch `B` of rows out of `N`, with `N_x` latent draws,
//!
//! ```text
//! ELBO = −η·(N/|B|)·KL_X(B) − Σ_c KL_U(c) + (N/|B|)·(1/N_x)·Σ_i Σ_{n∈B, d observed} E_q(f|X_i)[log p(y_nd | f)]
//! ```
//!
//! The inner expectations use Gauss-Hermite quadrature, or Monte Carlo over
//! `f ~ N(a, b²)` for the sampling estimator. Categorical columns couple
//! their K channels through the softmax and are always sampled.
//!
//! The gradient is assembled by hand-derived reverse-mode adjoints. With
//! `K = (K_MM + jitter·I)⁻¹` and `Q_c = K Σ_c K − K`, the channel moments are
//! `a = kᵀ K μ_c` and `b² = σ_f² + kᵀ Q_c k`, which lets the backward pass
//! reuse `Q_c k` from the forward pass. Noise draws and the jitter level are
//! constants of the estimator.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{input_err, numerical_err, Error, Result};
use crate::kernel::{gram, gram_backward, KernelHypers};
use crate::likelihood::{categorical_log_pdf_grad, Likelihood, LikelihoodKind};
use crate::linalg::{dot, jittered_cholesky, CholFactor, Mat};
use crate::model::{Model, ParamVector};
use crate::quadrature::{expected_scalar_grad, gh_rule, QuadratureRule, DEFAULT_ORDER};
use crate::recognition::encoder_inputs;
use crate::scalar::Scalar;
use crate::variational::{floor_variance, kl_u, kl_x_entry, variance_tolerance};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Quadrature,
    Sampling,
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Quadrature => "quadrature",
            Self::Sampling => "sampling",
        })
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadrature" => Ok(Self::Quadrature),
            "sampling" => Ok(Self::Sampling),
            _ => Err(Error::Config(format!("unknown estimator '{s}' (expected quadrature or sampling)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub n_latent_samples: usize,
    pub quad_order: usize,
    pub eta: f64,
    pub minibatch_size: usize,
    pub estimator: Estimator,
    /// Draws per entry for the sampling estimator and for categorical columns.
    pub n_f_samples: usize,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            n_latent_samples: 1,
            quad_order: DEFAULT_ORDER,
            eta: 1.0,
            minibatch_size: 64,
            estimator: Estimator::Quadrature,
            n_f_samples: 8,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_latent_samples == 0 || self.minibatch_size == 0 || self.n_f_samples == 0 {
            return bad("n_latent_samples, minibatch_size and n_f_samples must be positive");
        }
        if self.quad_order == 0 || self.quad_order > crate::quadrature::MAX_ORDER {
            return bad("quad_order out of range");
        }
        if !(self.eta >= 1.0) || !self.eta.is_finite() {
            return bad("eta must be at least 1");
        }
        Ok(())
    }
}

/// Standard-normal draws consumed by one objective evaluation, indexed by
/// position in the batch. `f[i]` holds `n_f` draws per channel, laid out
/// as column `c·n_f + j`.
#[derive(Clone, Debug, PartialEq)]
pub struct Noise<T> {
    pub latent: Vec<Mat<T>>,
    pub f: Vec<Mat<T>>,
    pub n_f: usize,
}

impl<T: Scalar> Noise<T> {
    /// Latent draws first, then channel draws. Channel draws are made only
    /// where the estimator uses them; other slots stay zero.
    pub fn draw(model: &Model, rows: usize, cfg: &ObjectiveConfig, rng: &mut impl Rng) -> Self {
        let sample_all = cfg.estimator == Estimator::Sampling;
        Self::draw_with(model, rows, cfg.n_latent_samples, cfg.n_f_samples, sample_all, rng)
    }

    pub(crate) fn draw_with(
        model: &Model,
        rows: usize,
        n_x: usize,
        n_f: usize,
        sample_all: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let q = model.latent_dim();
        let mut normal = || T::c(rng.sample::<f64, _>(StandardNormal));
        let latent = (0..n_x).map(|_| Mat::from_fn(rows, q, |_, _| normal())).collect();
        let sampled: Vec<bool> = model
            .channels
            .iter()
            .map(|ch| sample_all || matches!(model.schema.columns[ch.column].kind, LikelihoodKind::Categorical(_)))
            .collect();
        let width = model.n_channels() * n_f;
        let f = (0..n_x)
            .map(|_| Mat::from_fn(rows, width, |_, col| if sampled[col / n_f] { normal() } else { T::zero() }))
            .collect();
        Self { latent, f, n_f }
    }

    pub fn zeros(model: &Model, rows: usize, cfg: &ObjectiveConfig) -> Self {
        Self {
            latent: vec![Mat::zeros(rows, model.latent_dim()); cfg.n_latent_samples],
            f: vec![Mat::zeros(rows, model.n_channels() * cfg.n_f_samples); cfg.n_latent_samples],
            n_f: cfg.n_f_samples,
        }
    }

    /// The draws belonging to batch positions `idx`.
    pub fn select(&self, idx: &[usize]) -> Self {
        let pick = |m: &Mat<T>| Mat::from_fn(idx.len(), m.cols(), |r, c| m[(idx[r], c)]);
        Self { latent: self.latent.iter().map(pick).collect(), f: self.f.iter().map(pick).collect(), n_f: self.n_f }
    }

    pub fn rows(&self) -> usize {
        self.latent.first().map_or(0, |m| m.rows())
    }
}

/// The three addends of the bound. `kl_x` is already minibatch-scaled;
/// `elbo = −eta·kl_x − kl_u + loglik`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboTerms<T> {
    pub elbo: T,
    pub kl_x: T,
    pub kl_u: T,
    pub loglik: T,
    pub eta: T,
}

/// Held-out log-likelihood over observed entries.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveScore {
    pub sum: f64,
    pub n_entries: usize,
    /// `sum / n_entries`; `None` when nothing was scored.
    pub mean: Option<f64>,
}

struct KernelCache<T> {
    hyp: KernelHypers<T>,
    kmm: Mat<T>,
    chol: CholFactor<T>,
    kinv: Mat<T>,
    tol: T,
}

struct ChannelCache<T> {
    sigma: Mat<T>,
    alpha: Vec<T>,
    q: Mat<T>,
}

enum Purpose<'a> {
    Elbo { estimator: Estimator },
    Predict { columns: &'a [bool] },
}

struct Outcome<T> {
    terms: ElboTerms<T>,
    grad: Option<Vec<T>>,
    n_entries: usize,
}

fn mm<T: Scalar>(a: &Mat<T>, b: &Mat<T>) -> Mat<T> {
    a.matmul(b).expect("square blocks")
}

fn check_shapes<T: Scalar>(model: &Model, data: &Dataset<T>, rows: &[usize], noise: &Noise<T>, n_x: usize, n_f: usize) -> Result<()> {
    if data.schema() != &model.schema {
        return input_err("dataset schema does not match the model");
    }
    if let Some(&r) = rows.iter().find(|&&r| r >= data.n()) {
        return input_err(format!("batch row {r} is out of range for {} rows", data.n()));
    }
    let b = rows.len();
    if noise.latent.len() != n_x || noise.f.len() != n_x || noise.n_f != n_f {
        return input_err("noise does not match the objective configuration");
    }
    if noise.latent.iter().any(|m| m.shape() != (b, model.latent_dim()))
        || noise.f.iter().any(|m| m.shape() != (b, model.n_channels() * n_f))
    {
        return input_err("noise shape does not match the batch");
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn evaluate<T: Scalar>(
    model: &Model,
    pv: &ParamVector<T>,
    data: &Dataset<T>,
    rows: &[usize],
    cfg: &ObjectiveConfig,
    noise: &Noise<T>,
    purpose: Purpose<'_>,
    want_grad: bool,
) -> Result<Outcome<T>> {
    cfg.validate()?;
    let n_x = cfg.n_latent_samples;
    let n_f = cfg.n_f_samples;
    check_shapes(model, data, rows, noise, n_x, n_f)?;
    let p = model.unpack(pv)?;
    let (q, m, b) = (model.latent_dim(), model.num_inducing(), rows.len());
    let nc = model.n_channels();
    let d_cols = model.schema.len();
    let z = &p.inducing.z;
    let rule: QuadratureRule<T> = gh_rule(cfg.quad_order)?;
    let half = T::c(0.5);
    let two = T::c(2.0);

    let is_elbo = matches!(purpose, Purpose::Elbo { .. });
    let (estimator, active): (Estimator, Vec<bool>) = match purpose {
        Purpose::Elbo { estimator } => (estimator, vec![true; d_cols]),
        Purpose::Predict { columns } => (Estimator::Quadrature, columns.to_vec()),
    };
    let scale = if is_elbo && b > 0 { T::of_usize(data.n()) / T::of_usize(b) } else { T::one() };
    let eta = T::c(cfg.eta);
    let wgt = scale / T::of_usize(n_x);

    let base_jitter = T::c(model.config.base_jitter);
    let inducing_jitter = T::c(model.config.inducing_jitter);
    let kernels = p
        .kernels
        .iter()
        .map(|h| {
            let kmm = gram(z, z, h)?;
            let mut shifted = kmm.clone();
            shifted.add_diag(inducing_jitter);
            let chol = jittered_cholesky(&shifted, base_jitter)?;
            let kinv = chol.inverse();
            Ok(KernelCache { hyp: h.clone(), kmm, chol, kinv, tol: variance_tolerance(h.signal_variance) })
        })
        .collect::<Result<Vec<_>>>()?;
    let chans: Vec<ChannelCache<T>> = p
        .channels
        .iter()
        .zip(&model.channels)
        .map(|(ch, info)| {
            let kinv = &kernels[info.kernel].kinv;
            let sigma = ch.sigma();
            let mut qm = mm(&mm(kinv, &sigma), kinv);
            for i in 0..m {
                for j in 0..m {
                    qm[(i, j)] -= kinv[(i, j)];
                }
            }
            for i in 0..m {
                for j in 0..i {
                    let avg = (qm[(i, j)] + qm[(j, i)]) * half;
                    qm[(i, j)] = avg;
                    qm[(j, i)] = avg;
                }
            }
            ChannelCache { sigma, alpha: kinv.matvec(&ch.mu), q: qm }
        })
        .collect();
    let liks: Vec<Likelihood<T>> = (0..d_cols).map(|d| model.likelihood(&p, d)).collect();

    let xin = encoder_inputs(data, rows, model.config.encoder_mask);
    let (mean, std, tape) = p.encoder.forward(&xin)?;

    let n_groups = kernels.len();
    let mut dmean = Mat::zeros(b, q);
    let mut dstd = Mat::zeros(b, q);
    let mut dz = Mat::zeros(m, q);
    let mut dlog = vec![vec![T::zero(); 1 + q]; n_groups];
    let mut dsf2 = vec![T::zero(); n_groups];
    let mut dalpha = vec![vec![T::zero(); m]; if want_grad { nc } else { 0 }];
    let mut dqc = vec![Mat::zeros(m, m); if want_grad { nc } else { 0 }];
    let mut dgauss = vec![T::zero(); p.gaussian_variance.len()];
    let mut dbeta = vec![T::zero(); p.beta_dispersion.len()];

    let mut a_buf = Mat::zeros(b, nc);
    let mut b_buf = Mat::zeros(b, nc);
    let mut ga = Mat::zeros(b, nc);
    let mut gb = Mat::zeros(b, nc);
    let mut u_bufs = vec![Mat::zeros(b, m); if want_grad { nc } else { 0 }];
    let mut u_tmp = vec![T::zero(); m];
    let max_k = model.column_channels.iter().map(|r| r.len()).max().unwrap_or(1);
    let (mut fk, mut gk, mut dak, mut dbk) = (vec![T::zero(); max_k], vec![T::zero(); max_k], vec![T::zero(); max_k], vec![T::zero(); max_k]);
    let inv_nf = T::one() / T::of_usize(n_f);

    let mut loglik = T::zero();
    let mut n_entries = 0;
    for i in 0..n_x {
        let eps = &noise.latent[i];
        let fnoise = &noise.f[i];
        let x = Mat::from_fn(b, q, |n, k| mean[(n, k)] + std[(n, k)] * eps[(n, k)]);
        let knm = kernels.iter().map(|kc| gram(&x, z, &kc.hyp)).collect::<Result<Vec<_>>>()?;

        for (c, info) in model.channels.iter().enumerate() {
            let col = info.column;
            if !active[col] {
                continue;
            }
            let kc = &kernels[info.kernel];
            let ch = &chans[c];
            let sf2 = kc.hyp.signal_variance;
            for n in 0..b {
                if !data.observed(rows[n], col) {
                    continue;
                }
                let k = knm[info.kernel].row(n);
                let u: &mut [T] = if want_grad { u_bufs[c].row_mut(n) } else { &mut u_tmp };
                for (r, ur) in u.iter_mut().enumerate() {
                    *ur = dot(ch.q.row(r), k);
                }
                let b2 = sf2 + dot(k, u);
                a_buf[(n, c)] = dot(k, &ch.alpha);
                b_buf[(n, c)] = floor_variance(b2, kc.tol)?.sqrt();
            }
        }

        if want_grad {
            ga.as_mut_slice().iter_mut().for_each(|v| *v = T::zero());
            gb.as_mut_slice().iter_mut().for_each(|v| *v = T::zero());
        }
        for n in 0..b {
            let f_row = fnoise.row(n);
            for d in 0..d_cols {
                if !active[d] || !data.observed(rows[n], d) {
                    continue;
                }
                let y = data.value(rows[n], d);
                let chs = model.column_channels[d].clone();
                let e = match liks[d] {
                    Likelihood::Categorical { k } => {
                        let cls = y.f64() as usize;
                        let mut e = T::zero();
                        dak[..k].iter_mut().for_each(|v| *v = T::zero());
                        dbk[..k].iter_mut().for_each(|v| *v = T::zero());
                        for j in 0..n_f {
                            for kk in 0..k {
                                let c = chs.start + kk;
                                fk[kk] = a_buf[(n, c)] + b_buf[(n, c)] * f_row[c * n_f + j];
                            }
                            e += categorical_log_pdf_grad(cls, &fk[..k], &mut gk[..k]);
                            for kk in 0..k {
                                dak[kk] += gk[kk];
                                dbk[kk] += gk[kk] * f_row[(chs.start + kk) * n_f + j];
                            }
                        }
                        if want_grad {
                            for kk in 0..k {
                                ga[(n, chs.start + kk)] = wgt * dak[kk] * inv_nf;
                                gb[(n, chs.start + kk)] = wgt * dbk[kk] * inv_nf;
                            }
                        }
                        e * inv_nf
                    }
                    ref lik => {
                        let c = chs.start;
                        let (a, s) = (a_buf[(n, c)], b_buf[(n, c)]);
                        let (e, da, db, dth) = match estimator {
                            Estimator::Quadrature => expected_scalar_grad(lik, y, a, s, &rule),
                            Estimator::Sampling => {
                                let (mut e, mut da, mut db, mut dth) = (T::zero(), T::zero(), T::zero(), T::zero());
                                for j in 0..n_f {
                                    let z = f_row[c * n_f + j];
                                    let (v, dv, dt) = lik.log_pdf_scalar_grad(y, a + s * z);
                                    e += v;
                                    da += dv;
                                    db += dv * z;
                                    dth += dt;
                                }
                                (e * inv_nf, da * inv_nf, db * inv_nf, dth * inv_nf)
                            }
                        };
                        if want_grad {
                            ga[(n, c)] = wgt * da;
                            gb[(n, c)] = wgt * db;
                            if let Some(slot) = model.gaussian_slot[d] {
                                dgauss[slot] += wgt * dth;
                            } else if let Some(slot) = model.beta_slot[d] {
                                dbeta[slot] += wgt * dth;
                            }
                        }
                        e
                    }
                };
                loglik += wgt * e;
                if i == 0 {
                    n_entries += 1;
                }
            }
        }

        if want_grad {
            let mut dknm = vec![Mat::zeros(b, m); n_groups];
            for (c, info) in model.channels.iter().enumerate() {
                let g = info.kernel;
                let ch = &chans[c];
                for n in 0..b {
                    let (gav, gbv) = (ga[(n, c)], gb[(n, c)]);
                    if gav == T::zero() && gbv == T::zero() {
                        continue;
                    }
                    let s = b_buf[(n, c)];
                    let g_b2 = if s > T::zero() { gbv / (two * s) } else { T::zero() };
                    let k = knm[g].row(n);
                    let u = u_bufs[c].row(n);
                    let dk = dknm[g].row_mut(n);
                    let da = &mut dalpha[c];
                    for r in 0..m {
                        dk[r] += gav * ch.alpha[r] + two * g_b2 * u[r];
                        da[r] += gav * k[r];
                    }
                    dsf2[g] += g_b2;
                    if g_b2 != T::zero() {
                        let dq = &mut dqc[c];
                        for r in 0..m {
                            let w = g_b2 * k[r];
                            for (dv, &kv) in dq.row_mut(r).iter_mut().zip(k) {
                                *dv += w * kv;
                            }
                        }
                    }
                }
            }
            let mut dx = Mat::zeros(b, q);
            for (g, kc) in kernels.iter().enumerate() {
                gram_backward(&x, z, &knm[g], &dknm[g], &kc.hyp, Some(&mut dx), Some(&mut dz), &mut dlog[g]);
            }
            for n in 0..b {
                for k in 0..q {
                    dmean[(n, k)] += dx[(n, k)];
                    dstd[(n, k)] += dx[(n, k)] * eps[(n, k)];
                }
            }
        }
    }

    let prior_var = T::c(model.config.prior_variance);
    let (mut kl_x, mut kl_u_total) = (T::zero(), T::zero());
    if is_elbo {
        for n in 0..b {
            for k in 0..q {
                kl_x += kl_x_entry(mean[(n, k)], std[(n, k)], prior_var);
            }
        }
        kl_x *= scale;
        for (c, info) in model.channels.iter().enumerate() {
            kl_u_total += kl_u(&p.channels[c], &kernels[info.kernel].chol)?;
        }
    }
    let elbo = -eta * kl_x - kl_u_total + loglik;
    if !elbo.is_finite() {
        return numerical_err(format!("objective is not finite (kl_x {:e}, kl_u {:e}, loglik {:e})", kl_x.f64(), kl_u_total.f64(), loglik.f64()));
    }
    let terms = ElboTerms { elbo, kl_x, kl_u: kl_u_total, loglik, eta };
    if !want_grad {
        return Ok(Outcome { terms, grad: None, n_entries });
    }

    // Inducing blocks: gradients w.r.t. K = K_MM⁻¹, μ and the covariance factor.
    let mut dkinv = vec![Mat::zeros(m, m); n_groups];
    let mut dkmm = vec![Mat::zeros(m, m); n_groups];
    let mut dmu = vec![vec![T::zero(); m]; nc];
    let mut ds = vec![Mat::zeros(m, m); nc];
    for (c, info) in model.channels.iter().enumerate() {
        let g = info.kernel;
        let kinv = &kernels[g].kinv;
        let ch = &chans[c];
        let mu = &p.channels[c].mu;
        let s = &p.channels[c].sigma_chol;
        // Q = K Σ K − K
        let t1 = mm(&mm(&dqc[c], kinv), &ch.sigma);
        let dsig = mm(&mm(kinv, &dqc[c]), kinv);
        let dsig_s = mm(&dsig, s);
        // α = K μ
        let kda = kinv.matvec(&dalpha[c]);
        let dk = &mut dkinv[g];
        for r in 0..m {
            for j in 0..m {
                dk[(r, j)] += t1[(r, j)] + t1[(j, r)] - dqc[c][(r, j)] + dalpha[c][r] * mu[j];
                ds[c][(r, j)] += two * dsig_s[(r, j)];
            }
            dmu[c][r] += kda[r];
        }
        if is_elbo {
            let ks = mm(kinv, s);
            for r in 0..m {
                for j in 0..m {
                    dk[(r, j)] -= half * (ch.sigma[(r, j)] + mu[r] * mu[j]);
                    dkmm[g][(r, j)] -= half * kinv[(r, j)];
                    ds[c][(r, j)] -= ks[(r, j)];
                }
                dmu[c][r] -= ch.alpha[r];
                ds[c][(r, r)] += T::one() / s[(r, r)];
            }
        }
    }
    let mut dza = Mat::zeros(m, q);
    let mut dzb = Mat::zeros(m, q);
    for (g, kc) in kernels.iter().enumerate() {
        let prop = mm(&mm(&kc.kinv, &dkinv[g]), &kc.kinv);
        for r in 0..m {
            for j in 0..m {
                dkmm[g][(r, j)] -= prop[(r, j)];
            }
        }
        gram_backward(z, z, &kc.kmm, &dkmm[g], &kc.hyp, Some(&mut dza), Some(&mut dzb), &mut dlog[g]);
        dlog[g][0] += kc.hyp.signal_variance * dsf2[g];
    }

    if is_elbo {
        let w = eta * scale;
        for n in 0..b {
            for k in 0..q {
                let (mv, sv) = (mean[(n, k)], std[(n, k)]);
                dmean[(n, k)] -= w * mv / prior_var;
                dstd[(n, k)] -= w * (sv / prior_var - T::one() / sv);
            }
        }
    }
    let enc = p.encoder.backward(&xin, &tape, &dmean, &dstd);

    let mut grad = vec![T::zero(); model.n_params()];
    let idx = &model.idx;
    for g in 0..n_groups {
        grad[idx.kernel[g].clone()].copy_from_slice(&dlog[g]);
    }
    for (gz, ((&a, &bz), &cz)) in grad[idx.z.clone()].iter_mut().zip(dz.as_slice().iter().zip(dza.as_slice()).zip(dzb.as_slice())) {
        *gz = a + bz + cz;
    }
    for c in 0..nc {
        grad[idx.mu[c].clone()].copy_from_slice(&dmu[c]);
        let s = &p.channels[c].sigma_chol;
        let seg = &mut grad[idx.sigma[c].clone()];
        let mut at = 0;
        for r in 0..m {
            for j in 0..=r {
                seg[at] = if r == j { ds[c][(r, r)] * s[(r, r)] } else { ds[c][(r, j)] };
                at += 1;
            }
        }
    }
    for (g, v) in grad[idx.gaussian_variance.clone()].iter_mut().zip(&dgauss) {
        *g = *v;
    }
    for (g, v) in grad[idx.beta_dispersion.clone()].iter_mut().zip(&dbeta) {
        *g = *v;
    }
    grad[idx.encoder_mean.clone()].copy_from_slice(&enc.mean.to_flat());
    grad[idx.encoder_std.clone()].copy_from_slice(&enc.std.to_flat());
    Ok(Outcome { terms, grad: Some(grad), n_entries })
}

/// ELBO terms on batch `rows` of `data` with fixed noise, using the
/// configured estimator.
pub fn elbo_terms<T: Scalar>(
    model: &Model,
    params: &ParamVector<T>,
    data: &Dataset<T>,
    rows: &[usize],
    cfg: &ObjectiveConfig,
    noise: &Noise<T>,
) -> Result<ElboTerms<T>> {
    evaluate(model, params, data, rows, cfg, noise, Purpose::Elbo { estimator: cfg.estimator }, false).map(|o| o.terms)
}

/// ELBO terms and the gradient of the ELBO w.r.t. every coordinate of
/// `params`, for fixed noise.
pub fn elbo_and_grad<T: Scalar>(
    model: &Model,
    params: &ParamVector<T>,
    data: &Dataset<T>,
    rows: &[usize],
    cfg: &ObjectiveConfig,
    noise: &Noise<T>,
) -> Result<(ElboTerms<T>, Vec<T>)> {
    let o = evaluate(model, params, data, rows, cfg, noise, Purpose::Elbo { estimator: cfg.estimator }, true)?;
    Ok((o.terms, o.grad.expect("gradient requested")))
}

/// Quadrature ELBO with noise drawn from `rng`.
pub fn elbo_quadrature<T: Scalar>(
    model: &Model,
    params: &ParamVector<T>,
    data: &Dataset<T>,
    rows: &[usize],
    cfg: &ObjectiveConfig,
    rng: &mut impl Rng,
) -> Result<T> {
    let cfg = ObjectiveConfig { estimator: Estimator::Quadrature, ..cfg.clone() };
    let noise = Noise::draw(model, rows.len(), &cfg, rng);
    elbo_terms(model, params, data, rows, &cfg, &noise).map(|t| t.elbo)
}

/// Sampling ELBO: every channel expectation is a Monte Carlo average over
/// `n_f_samples` reparameterised draws.
pub fn elbo_sampling<T: Scalar>(
    model: &Model,
    params: &ParamVector<T>,
    data: &Dataset<T>,
    rows: &[usize],
    cfg: &ObjectiveConfig,
    rng: &mut impl Rng,
) -> Result<T> {
    let cfg = ObjectiveConfig { estimator: Estimator::Sampling, ..cfg.clone() };
    let noise = Noise::draw(model, rows.len(), &cfg, rng);
    elbo_terms(model, params, data, rows, &cfg, &noise).map(|t| t.elbo)
}

/// Held-out predictive log-likelihood with fixed noise. Each row is encoded
/// from its own observed entries; the expected log-density of every
/// observed entry in `columns` (all columns when `None`) is averaged over
/// the latent draws. Non-categorical entries use quadrature.
pub fn predictive_loglik_with<T: Scalar>(
    model: &Model,
    params: &ParamVector<T>,
    heldout: &Dataset<T>,
    cfg: &ObjectiveConfig,
    columns: Option<&[usize]>,
    noise: &Noise<T>,
) -> Result<PredictiveScore> {
    let mut active = vec![columns.is_none(); model.schema.len()];
    for &c in columns.unwrap_or(&[]) {
        if c >= active.len() {
            return input_err(format!("column {c} is out of range"));
        }
        active[c] = true;
    }
    let rows: Vec<usize> = (0..heldout.n()).collect();
    let o = evaluate(model, params, heldout, &rows, cfg, noise, Purpose::Predict { columns: &active }, false)?;
    let sum = o.terms.loglik.f64();
    Ok(PredictiveScore { sum, n_entries: o.n_entries, mean: (o.n_entries > 0).then(|| sum / o.n_entries as f64) })
}

/// [`predictive_loglik_with`] with noise drawn from `rng`.
pub fn predictive_loglik<T: Scalar>(
    model: &Model,
    params: &ParamVector<T>,
    heldout: &Dataset<T>,
    cfg: &ObjectiveConfig,
    columns: Option<&[usize]>,
    rng: &mut impl Rng,
) -> Result<PredictiveScore> {
    let noise = Noise::draw_with(model, heldout.n(), cfg.n_latent_samples, cfg.n_f_samples, false, rng);
    predictive_loglik_with(model, params, heldout, cfg, columns, &noise)
}
