//! Special functions used by the likelihood catalogue.

use crate::scalar::Scalar;

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Standard normal CDF.
#[inline]
pub fn norm_cdf<T: Scalar>(x: T) -> T {
    T::c(0.5 * libm::erfc(-x.f64() / std::f64::consts::SQRT_2))
}

/// Standard normal density.
#[inline]
pub fn norm_pdf<T: Scalar>(x: T) -> T {
    let x = x.f64();
    T::c((-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt())
}

#[inline]
pub fn ln_gamma<T: Scalar>(x: T) -> T {
    T::c(libm::lgamma(x.f64()))
}

#[inline]
pub fn digamma<T: Scalar>(x: T) -> T {
    T::c(statrs::function::gamma::digamma(x.f64()))
}

/// `ln(y!)`; exact summation up to 20, log-gamma above.
pub fn ln_factorial(y: u64) -> f64 {
    if y <= 20 {
        (2..=y).map(|k| (k as f64).ln()).sum()
    } else {
        libm::lgamma(y as f64 + 1.0)
    }
}

/// `ln Σ exp(x_i)`, stable.
pub fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<T>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_and_softplus_are_consistent() {
        for &x in &[-40.0f64, -3.0, -0.2, 0.0, 0.7, 5.0, 40.0] {
            let s = sigmoid(x);
            assert!((s.ln() + softplus(-x)).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn ln_factorial_branches_agree() {
        let exact: f64 = (2..=25u64).map(|k| (k as f64).ln()).sum();
        assert!((ln_factorial(25) - exact).abs() < 1e-10);
        assert_eq!(ln_factorial(0), 0.0);
        assert_eq!(ln_factorial(1), 0.0);
        assert!((ln_factorial(3) - 6f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn norm_cdf_tails() {
        assert!((norm_cdf(0.0f64) - 0.5).abs() < 1e-15);
        assert!((norm_cdf(1.96f64) - 0.975_002_104_851_780).abs() < 1e-12);
        assert!(norm_cdf(-10.0f64) > 0.0);
    }
}
