//! Per-column likelihoods: link functions, log-densities and the
//! derivatives the objective needs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{input_err, Error, Result};
use crate::scalar::Scalar;
use crate::special::{digamma, ln_factorial, ln_gamma, log_sum_exp, norm_cdf, norm_pdf, sigmoid, softplus};

/// Distribution family of one data column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LikelihoodKind {
    Gaussian,
    Bernoulli,
    Beta,
    Poisson,
    /// Categorical over `K ≥ 2` classes, observed as 1-based indices.
    Categorical(usize),
}

impl LikelihoodKind {
    pub fn categorical(k: usize) -> Result<Self> {
        if k < 2 {
            return input_err(format!("categorical cardinality must be at least 2, got {k}"));
        }
        Ok(Self::Categorical(k))
    }

    /// Number of GP channels feeding this column.
    pub fn num_channels(self) -> usize {
        match self {
            Self::Categorical(k) => k,
            _ => 1,
        }
    }

    pub fn cardinality(self) -> usize {
        self.num_channels()
    }

    /// Checks that `y` lies in the support.
    pub fn check_support(self, y: f64) -> std::result::Result<(), String> {
        let ok = match self {
            Self::Gaussian => y.is_finite(),
            Self::Bernoulli => y == 0.0 || y == 1.0,
            Self::Beta => y > 0.0 && y < 1.0,
            Self::Poisson => y >= 0.0 && y.fract() == 0.0 && y.is_finite(),
            Self::Categorical(k) => y.fract() == 0.0 && y >= 1.0 && y <= k as f64,
        };
        if ok {
            Ok(())
        } else {
            Err(format!("value {y} is outside the support of {self}"))
        }
    }
}

impl fmt::Display for LikelihoodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Gaussian => f.write_str("gaussian"),
            Self::Bernoulli => f.write_str("bernoulli"),
            Self::Beta => f.write_str("beta"),
            Self::Poisson => f.write_str("poisson"),
            Self::Categorical(k) => write!(f, "categorical:{k}"),
        }
    }
}

impl FromStr for LikelihoodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "gaussian" => Ok(Self::Gaussian),
            "bernoulli" => Ok(Self::Bernoulli),
            "beta" => Ok(Self::Beta),
            "poisson" => Ok(Self::Poisson),
            other => match other.strip_prefix("categorical:") {
                Some(k) => {
                    let k: usize = k
                        .parse()
                        .map_err(|_| Error::Input(format!("bad categorical cardinality in {other:?}")))?;
                    Self::categorical(k)
                }
                None => input_err(format!("unknown likelihood kind {other:?}")),
            },
        }
    }
}

impl Serialize for LikelihoodKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for LikelihoodKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Shared positive parameters, one slot per gaussian column (variance) and
/// per beta column (inverse dispersion), in column order.
#[derive(Clone, Debug, PartialEq)]
pub struct SharedLikelihoodParams<T> {
    pub gaussian_variance: Vec<T>,
    pub beta_dispersion: Vec<T>,
}

impl<T: Scalar> SharedLikelihoodParams<T> {
    /// The same variance and dispersion for every slot of `kinds`.
    pub fn constant(kinds: &[LikelihoodKind], variance: T, dispersion: T) -> Self {
        let count = |k: LikelihoodKind| kinds.iter().filter(|&&x| x == k).count();
        Self {
            gaussian_variance: vec![variance; count(LikelihoodKind::Gaussian)],
            beta_dispersion: vec![dispersion; count(LikelihoodKind::Beta)],
        }
    }
}

pub const DEFAULT_GAUSSIAN_VARIANCE: f64 = 1.0;
pub const DEFAULT_BETA_DISPERSION: f64 = 10.0;
/// Beta observations are clamped to `[ε, 1 − ε]` at ingestion.
pub const BETA_CLAMP: f64 = 1e-6;

/// A fully parameterised column likelihood.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Likelihood<T> {
    Gaussian { variance: T },
    Bernoulli,
    Beta { dispersion: T },
    Poisson,
    Categorical { k: usize },
}

impl<T: Scalar> Likelihood<T> {
    /// Default-parameterised likelihood for `kind`.
    pub fn default_for(kind: LikelihoodKind) -> Self {
        match kind {
            LikelihoodKind::Gaussian => Self::Gaussian { variance: T::c(DEFAULT_GAUSSIAN_VARIANCE) },
            LikelihoodKind::Bernoulli => Self::Bernoulli,
            LikelihoodKind::Beta => Self::Beta { dispersion: T::c(DEFAULT_BETA_DISPERSION) },
            LikelihoodKind::Poisson => Self::Poisson,
            LikelihoodKind::Categorical(k) => Self::Categorical { k },
        }
    }

    pub fn kind(&self) -> LikelihoodKind {
        match *self {
            Self::Gaussian { .. } => LikelihoodKind::Gaussian,
            Self::Bernoulli => LikelihoodKind::Bernoulli,
            Self::Beta { .. } => LikelihoodKind::Beta,
            Self::Poisson => LikelihoodKind::Poisson,
            Self::Categorical { k } => LikelihoodKind::Categorical(k),
        }
    }

    /// Log-density at a scalar GP value; no support checks. Not valid for
    /// categorical columns.
    #[inline]
    pub fn log_pdf_scalar(&self, y: T, f: T) -> T {
        self.log_pdf_scalar_grad(y, f).0
    }

    /// Returns `(log p, ∂/∂f, ∂/∂ ln θ)` where `θ` is the shared parameter
    /// (σ² or ν; zero for kinds without one).
    #[inline]
    pub fn log_pdf_scalar_grad(&self, y: T, f: T) -> (T, T, T) {
        let half = T::c(0.5);
        match *self {
            Self::Gaussian { variance } => {
                let r = y - f;
                let r2 = r * r / variance;
                let v = -half * (T::TAU() * variance).ln() - half * r2;
                (v, r / variance, -half + half * r2)
            }
            Self::Bernoulli => {
                // y ∈ {0,1}: log σ(f) or log σ(−f)
                let v = if y > half { -softplus(-f) } else { -softplus(f) };
                (v, y - sigmoid(f), T::zero())
            }
            Self::Poisson => {
                let rate = f.exp();
                let lf = T::c(ln_factorial(y.f64().round() as u64));
                (y * f - rate - lf, y - rate, T::zero())
            }
            Self::Beta { dispersion } => beta_log_pdf_grad(y, f, dispersion),
            Self::Categorical { .. } => panic!("categorical likelihood needs a vector of channels"),
        }
    }
}

fn beta_mean_floor<T: Scalar>() -> T {
    T::c(1e-12).max(T::epsilon())
}

/// Beta log-density in mean/dispersion form, mean `Φ(f)`.
fn beta_log_pdf_grad<T: Scalar>(y: T, f: T, nu: T) -> (T, T, T) {
    let floor = beta_mean_floor::<T>();
    let mu_raw = norm_cdf(f);
    let omu_raw = norm_cdf(-f);
    let clamped = mu_raw < floor || omu_raw < floor;
    let mu = mu_raw.max(floor).min(T::one() - floor);
    let omu = omu_raw.max(floor).min(T::one() - floor);
    let a = nu * mu;
    let b = nu * omu;
    let (ly, l1y) = (y.ln(), (-y).ln_1p());
    let v = ln_gamma(nu) - ln_gamma(a) - ln_gamma(b) + (a - T::one()) * ly + (b - T::one()) * l1y;
    let (psi_a, psi_b) = (digamma(a), digamma(b));
    let dmu = nu * (-psi_a + psi_b + ly - l1y);
    let df = if clamped { T::zero() } else { dmu * norm_pdf(f) };
    let dnu = digamma(nu) - mu * psi_a - omu * psi_b + mu * ly + omu * l1y;
    (v, df, dnu * nu)
}

/// Categorical log-mass of 1-based class `y` under `softmax(f)`; writes
/// `∂/∂f_k` into `grad`.
pub fn categorical_log_pdf_grad<T: Scalar>(y: usize, f: &[T], grad: &mut [T]) -> T {
    let lse = log_sum_exp(f);
    for (g, &fk) in grad.iter_mut().zip(f) {
        *g = -(fk - lse).exp();
    }
    grad[y - 1] += T::one();
    f[y - 1] - lse
}

fn check_finite<T: Scalar>(f: &[T]) -> Result<()> {
    if f.iter().any(|v| !v.is_finite()) {
        return input_err("link input must be finite");
    }
    Ok(())
}

fn check_width(kind: LikelihoodKind, f_len: usize) -> Result<()> {
    if f_len != kind.num_channels() {
        return input_err(format!("{kind} expects {} GP values, got {f_len}", kind.num_channels()));
    }
    Ok(())
}

/// Maps GP values to the distribution's parameter domain.
pub fn apply_link<T: Scalar>(kind: LikelihoodKind, f: &[T]) -> Result<Vec<T>> {
    check_width(kind, f.len())?;
    check_finite(f)?;
    Ok(match kind {
        LikelihoodKind::Gaussian => vec![f[0]],
        LikelihoodKind::Bernoulli => vec![sigmoid(f[0])],
        LikelihoodKind::Poisson => vec![f[0].exp()],
        LikelihoodKind::Beta => vec![norm_cdf(f[0])],
        LikelihoodKind::Categorical(_) => {
            let lse = log_sum_exp(f);
            f.iter().map(|&x| (x - lse).exp()).collect()
        }
    })
}

/// Checked log-density of `y` given the column's GP value(s).
pub fn log_pdf<T: Scalar>(lik: &Likelihood<T>, y: T, f: &[T]) -> Result<T> {
    let kind = lik.kind();
    check_width(kind, f.len())?;
    check_finite(f)?;
    kind.check_support(y.f64()).map_err(Error::Input)?;
    match *lik {
        Likelihood::Gaussian { variance } | Likelihood::Beta { dispersion: variance }
            if !(variance > T::zero()) =>
        {
            input_err("shared likelihood parameter must be positive")
        }
        Likelihood::Categorical { k } => {
            let mut g = vec![T::zero(); k];
            Ok(categorical_log_pdf_grad(y.f64() as usize, f, &mut g))
        }
        _ => Ok(lik.log_pdf_scalar(y, f[0])),
    }
}
