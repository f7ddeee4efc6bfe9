//! Gauss-Hermite rules and 1-D expected log-likelihoods under a Gaussian
//! channel marginal `N(a, b²)`.
//!
//! Nodes are the eigenvalues of the symmetric tridiagonal Jacobi matrix of
//! the Hermite recurrence (located by Sturm bisection, then polished by
//! Newton steps on the orthonormal polynomial). Weights are the Christoffel
//! numbers `1 / Σ_k p_k(t)²`, which equal `√π` times the squared first
//! eigenvector components.

use crate::error::{input_err, Result};
use crate::likelihood::Likelihood;
use crate::scalar::Scalar;

pub const MAX_ORDER: usize = 64;
pub const DEFAULT_ORDER: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule<T> {
    pub order: usize,
    /// Ascending roots of the physicists' Hermite polynomial `H_J`.
    pub nodes: Vec<T>,
    /// Weights for `∫ g(t) e^{−t²} dt`; they sum to `√π`.
    pub weights: Vec<T>,
}

/// Values of the orthonormal Hermite polynomials `p_0..p_n` at `t`.
fn orthonormal_hermite(n: usize, t: f64, out: &mut Vec<f64>) {
    out.clear();
    let p0 = std::f64::consts::PI.powf(-0.25);
    out.push(p0);
    if n == 0 {
        return;
    }
    out.push(std::f64::consts::SQRT_2 * t * p0);
    for k in 1..n {
        let kf = k as f64;
        let next = (2.0 / (kf + 1.0)).sqrt() * t * out[k] - (kf / (kf + 1.0)).sqrt() * out[k - 1];
        out.push(next);
    }
}

/// Number of Jacobi-matrix eigenvalues strictly below `x`.
fn sturm_count(off_sq: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = -x;
    if q < 0.0 {
        count += 1;
    }
    for &e2 in off_sq {
        let denom = if q == 0.0 { f64::EPSILON } else { q };
        q = -x - e2 / denom;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

fn hermite_nodes_weights(order: usize) -> (Vec<f64>, Vec<f64>) {
    // Jacobi matrix: zero diagonal, off-diagonal sqrt(k/2)
    let off_sq: Vec<f64> = (1..order).map(|k| k as f64 / 2.0).collect();
    let bound = 1.0 + 2.0 * ((order as f64) / 2.0).sqrt();
    let mut nodes = Vec::with_capacity(order);
    for j in 0..order {
        // j-th smallest eigenvalue: smallest x with count(x) > j
        let (mut lo, mut hi) = (-bound, bound);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if sturm_count(&off_sq, mid) > j {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-15 * (1.0 + mid.abs()) {
                break;
            }
        }
        nodes.push(0.5 * (lo + hi));
    }
    let mut p = Vec::with_capacity(order + 1);
    for t in nodes.iter_mut() {
        for _ in 0..3 {
            orthonormal_hermite(order, *t, &mut p);
            let deriv = (2.0 * order as f64).sqrt() * p[order - 1];
            if deriv != 0.0 {
                *t -= p[order] / deriv;
            }
        }
    }
    // exact symmetry about the origin
    for j in 0..order / 2 {
        let s = 0.5 * (nodes[order - 1 - j] - nodes[j]);
        nodes[j] = -s;
        nodes[order - 1 - j] = s;
    }
    if order % 2 == 1 {
        nodes[order / 2] = 0.0;
    }
    let mut weights: Vec<f64> = nodes
        .iter()
        .map(|&t| {
            orthonormal_hermite(order - 1, t, &mut p);
            1.0 / p.iter().map(|v| v * v).sum::<f64>()
        })
        .collect();
    for j in 0..order / 2 {
        let w = 0.5 * (weights[j] + weights[order - 1 - j]);
        weights[j] = w;
        weights[order - 1 - j] = w;
    }
    (nodes, weights)
}

/// Gauss-Hermite rule of order `order` (1..=64).
pub fn gh_rule<T: Scalar>(order: usize) -> Result<QuadratureRule<T>> {
    if order == 0 || order > MAX_ORDER {
        return input_err(format!("quadrature order must be in 1..={MAX_ORDER}, got {order}"));
    }
    let (nodes, weights) = hermite_nodes_weights(order);
    Ok(QuadratureRule {
        order,
        nodes: nodes.into_iter().map(T::c).collect(),
        weights: weights.into_iter().map(T::c).collect(),
    })
}

impl<T: Scalar> QuadratureRule<T> {
    /// `∫ g(t) e^{−t²} dt` by the rule.
    pub fn integrate(&self, g: impl Fn(T) -> T) -> T {
        self.nodes.iter().zip(&self.weights).map(|(&t, &w)| w * g(t)).sum()
    }
}

/// `E_{N(f|a,b²)}[log p(y|f)]` with its derivatives w.r.t. `a`, `b` and the
/// log shared parameter, by `f_j = a + √2·b·t_j` and weights `w_j/√π`.
#[inline]
pub(crate) fn expected_scalar_grad<T: Scalar>(
    lik: &Likelihood<T>,
    y: T,
    a: T,
    b: T,
    rule: &QuadratureRule<T>,
) -> (T, T, T, T) {
    let scale = T::SQRT_2() * b;
    let norm = T::one() / T::PI().sqrt();
    let (mut e, mut da, mut db, mut dth) = (T::zero(), T::zero(), T::zero(), T::zero());
    for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
        let (v, dv, dtheta) = lik.log_pdf_scalar_grad(y, a + scale * t);
        let wn = w * norm;
        e += wn * v;
        da += wn * dv;
        db += wn * dv * T::SQRT_2() * t;
        dth += wn * dtheta;
    }
    (e, da, db, dth)
}

/// Quadrature approximation of `E_{N(f|a,b²)}[log p(y|f)]`.
///
/// Categorical columns are not handled here: their K coupled channels are
/// integrated by Monte Carlo in the objective.
pub fn expected_loglik<T: Scalar>(
    lik: &Likelihood<T>,
    y: T,
    a: T,
    b: T,
    rule: &QuadratureRule<T>,
) -> Result<T> {
    if matches!(lik, Likelihood::Categorical { .. }) {
        return input_err("categorical columns are integrated by sampling, not quadrature");
    }
    if !(b >= T::zero()) {
        return input_err("channel standard deviation must be non-negative");
    }
    lik.kind().check_support(y.f64()).map_err(crate::error::Error::Input)?;
    Ok(expected_scalar_grad(lik, y, a, b, rule).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use rand::Rng;
    use statrs::function::gamma::gamma;

    /// ∫ t^k e^{−t²} dt = Γ((k+1)/2) for even k, 0 for odd k.
    fn gaussian_moment(k: u32) -> f64 {
        if k % 2 == 1 {
            0.0
        } else {
            gamma((k as f64 + 1.0) / 2.0)
        }
    }

    #[test]
    fn order_one_rule() {
        let r = gh_rule::<f64>(1).unwrap();
        assert_eq!(r.nodes, vec![0.0]);
        assert!((r.weights[0] - std::f64::consts::PI.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn order_three_rule() {
        let r = gh_rule::<f64>(3).unwrap();
        let sp = std::f64::consts::PI.sqrt();
        let t = 1.5f64.sqrt();
        let expect_nodes = [-t, 0.0, t];
        let expect_weights = [sp / 6.0, 2.0 * sp / 3.0, sp / 6.0];
        for j in 0..3 {
            assert!((r.nodes[j] - expect_nodes[j]).abs() < 1e-14);
            assert!((r.weights[j] - expect_weights[j]).abs() < 1e-14);
            // H_3(t) = 8t³ − 12t vanishes at the nodes
            let x = r.nodes[j];
            assert!((8.0 * x * x * x - 12.0 * x).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_sum_to_sqrt_pi_and_nodes_symmetric() {
        let sp = std::f64::consts::PI.sqrt();
        for j in 1..=MAX_ORDER {
            let r = gh_rule::<f64>(j).unwrap();
            assert!((r.weights.iter().sum::<f64>() - sp).abs() < 1e-10, "J={j}");
            for i in 0..j {
                assert_eq!(r.nodes[i], -r.nodes[j - 1 - i]);
                assert!(r.weights[i] > 0.0);
            }
            assert!(r.nodes.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn moment_exactness_and_no_higher() {
        for j in 1..=10usize {
            let r = gh_rule::<f64>(j).unwrap();
            for k in 0..=(2 * j as u32 - 1) {
                let exact = gaussian_moment(k);
                let got = r.integrate(|t| t.powi(k as i32));
                let err = if exact == 0.0 { got.abs() } else { ((got - exact) / exact).abs() };
                assert!(err < 1e-9, "J={j} k={k} got={got} exact={exact}");
            }
            let k = 2 * j as u32;
            let exact = gaussian_moment(k);
            let got = r.integrate(|t| t.powi(k as i32));
            assert!(((got - exact) / exact).abs() > 1e-6, "J={j} integrates degree {k} exactly");
        }
    }

    #[test]
    fn out_of_range_orders() {
        assert!(gh_rule::<f64>(0).is_err());
        assert!(gh_rule::<f64>(65).is_err());
    }

    #[test]
    fn degenerate_channel_collapses_to_point() {
        let r = gh_rule::<f64>(3).unwrap();
        let lik = Likelihood::Bernoulli;
        let e = expected_loglik(&lik, 1.0, 0.4, 0.0, &r).unwrap();
        assert!((e - lik.log_pdf_scalar(1.0, 0.4)).abs() < 1e-15);
        let p = Likelihood::Poisson;
        let e = expected_loglik(&p, 3.0, -0.2, 0.0, &r).unwrap();
        assert!((e - p.log_pdf_scalar(3.0, -0.2)).abs() < 1e-14);
    }

    #[test]
    fn gaussian_closed_form() {
        // log N(1|0,1) − 2²/2
        let expected = -0.5 * std::f64::consts::TAU.ln() - 0.5 - 2.0;
        let lik = Likelihood::Gaussian { variance: 1.0 };
        for j in [2, 3, 5, 20] {
            let r = gh_rule::<f64>(j).unwrap();
            let e = expected_loglik(&lik, 1.0, 0.0, 2.0, &r).unwrap();
            assert!((e - expected).abs() < 1e-12, "J={j}");
        }
        let r3 = gh_rule::<f64>(3).unwrap();
        let mut rng = rng_from_seed(1);
        for _ in 0..50 {
            let s2 = 0.2 + rng.random::<f64>() * 2.0;
            let (y, a, b) = (rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() - 0.5, rng.random::<f64>() * 2.0);
            let lik = Likelihood::Gaussian { variance: s2 };
            let closed = -0.5 * (std::f64::consts::TAU * s2).ln() - (y - a).powi(2) / (2.0 * s2) - b * b / (2.0 * s2);
            assert!((expected_loglik(&lik, y, a, b, &r3).unwrap() - closed).abs() < 1e-12);
        }
    }

    #[test]
    fn bernoulli_matches_trapezoid_oracle() {
        let (a, b) = (0.4, 0.7);
        let lik = Likelihood::Bernoulli;
        let n = 200_000;
        let (lo, hi) = (a - 8.0 * b, a + 8.0 * b);
        let h = (hi - lo) / n as f64;
        let integrand = |f: f64| {
            let z = (f - a) / b;
            (-0.5 * z * z).exp() / (b * std::f64::consts::TAU.sqrt()) * lik.log_pdf_scalar(1.0, f)
        };
        let mut oracle = 0.5 * (integrand(lo) + integrand(hi));
        for i in 1..n {
            oracle += integrand(lo + i as f64 * h);
        }
        oracle *= h;
        let r = gh_rule::<f64>(20).unwrap();
        assert!((expected_loglik(&lik, 1.0, a, b, &r).unwrap() - oracle).abs() < 1e-6);
    }

    #[test]
    fn gaussian_variance_penalty_is_monotone() {
        let r = gh_rule::<f64>(3).unwrap();
        let lik = Likelihood::Gaussian { variance: 0.8 };
        let mut prev = f64::INFINITY;
        for i in 0..50 {
            let e = expected_loglik(&lik, 0.3, 0.3, i as f64 * 0.1, &r).unwrap();
            assert!(e <= prev);
            prev = e;
        }
    }

    #[test]
    fn three_points_adequate_for_bernoulli() {
        // The J = 3 error stays under 1e-3 for b <= 1 but grows to about 0.018 at b = 2.
        let r3 = gh_rule::<f64>(3).unwrap();
        let r30 = gh_rule::<f64>(30).unwrap();
        let lik = Likelihood::Bernoulli;
        let diff = |y: f64, a: f64, b: f64| {
            expected_loglik(&lik, y, a, b, &r3).unwrap() - expected_loglik(&lik, y, a, b, &r30).unwrap()
        };
        for ia in 0..=24 {
            for ib in 0..=8 {
                let (a, b) = (-3.0 + 0.25 * ia as f64, 0.125 * ib as f64);
                for y in [0.0, 1.0] {
                    let d = diff(y, a, b);
                    assert!(d.abs() < 1e-3, "a={a} b={b} y={y} diff={d}");
                }
            }
        }
        let wide = diff(0.0, 0.0, 2.0);
        assert!((wide - 0.017_992_307_724_816).abs() < 1e-9, "{wide}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let r = gh_rule::<f64>(5).unwrap();
        let liks = [
            (Likelihood::Gaussian { variance: 0.6 }, 0.8),
            (Likelihood::Bernoulli, 1.0),
            (Likelihood::Beta { dispersion: 5.0 }, 0.35),
            (Likelihood::Poisson, 2.0),
        ];
        let h = 1e-6;
        for (lik, y) in liks {
            let (a, b) = (0.2, 0.5);
            let (_, da, db, _) = expected_scalar_grad(&lik, y, a, b, &r);
            let f = |a: f64, b: f64| expected_scalar_grad(&lik, y, a, b, &r).0;
            assert!(((f(a + h, b) - f(a - h, b)) / (2.0 * h) - da).abs() < 1e-7);
            assert!(((f(a, b + h) - f(a, b - h)) / (2.0 * h) - db).abs() < 1e-7);
        }
    }

    #[test]
    fn categorical_rejected() {
        let r = gh_rule::<f64>(3).unwrap();
        assert!(expected_loglik(&Likelihood::Categorical { k: 3 }, 1.0, 0.0, 1.0, &r).is_err());
    }
}
