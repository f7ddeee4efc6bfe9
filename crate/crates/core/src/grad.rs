//! Gradients of scalar objectives over a [`ParamVector`], and a
//! finite-difference checker.
//!
//! Two mechanisms implement [`Objective`]: the ELBO's hand-derived adjoints
//! ([`ElboObjective`]) and a small reverse-mode tape ([`Var`],
//! [`TapeObjective`]) for arbitrary closures.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::data::Dataset;
use crate::error::{numerical_err, Error, Result};
use crate::model::{Model, ParamLayout, ParamVector};
use crate::objective::{elbo_and_grad, elbo_terms, Noise, ObjectiveConfig};
use crate::scalar::Scalar;

/// A scalar function of a flat parameter vector.
pub trait Objective<T: Scalar> {
    fn value(&self, p: &[T]) -> Result<T>;
    fn value_and_grad(&self, p: &[T]) -> Result<(T, Vec<T>)>;
}

/// Evaluates `obj` and its gradient at `p`, rejecting non-finite results
/// with the name of the offending segment.
pub fn value_and_grad<T: Scalar>(obj: &impl Objective<T>, p: &ParamVector<T>) -> Result<(T, Vec<T>)> {
    let (v, g) = obj.value_and_grad(&p.flat)?;
    if g.len() != p.len() {
        return Err(Error::Input(format!("gradient has {} entries, parameters have {}", g.len(), p.len())));
    }
    if !v.is_finite() {
        return numerical_err(format!("objective value {v} is not finite"));
    }
    if let Some(i) = g.iter().position(|x| !x.is_finite()) {
        return numerical_err(format!(
            "gradient coordinate {i} in segment '{}' is not finite",
            p.layout.segment_of(i).unwrap_or("?")
        ));
    }
    Ok((v, g))
}

/// Worst coordinate found by [`finite_diff_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub worst_index: usize,
    pub segment: Option<String>,
    pub analytic: f64,
    pub numeric: f64,
    /// `|analytic − numeric| / max(|analytic|, 1e-8)`.
    pub max_rel_error: f64,
    pub n_coords: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1e-8)
}

/// Compares `analytic` with central differences of `obj` at step `h` on
/// every coordinate.
pub fn finite_diff_check<T: Scalar>(
    obj: &impl Objective<T>,
    p: &[T],
    analytic: &[T],
    h: f64,
    layout: Option<&ParamLayout>,
) -> Result<FdReport> {
    if !(h > 0.0) {
        return Err(Error::Input("finite-difference step must be positive".into()));
    }
    let mut report =
        FdReport { worst_index: 0, segment: None, analytic: 0.0, numeric: 0.0, max_rel_error: -1.0, n_coords: p.len() };
    let mut x = p.to_vec();
    for i in 0..p.len() {
        x[i] = p[i] + T::c(h);
        let up = obj.value(&x)?.f64();
        x[i] = p[i] - T::c(h);
        let down = obj.value(&x)?.f64();
        x[i] = p[i];
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i].f64();
        let rel = relative_error(a, numeric);
        if rel > report.max_rel_error {
            report = FdReport {
                worst_index: i,
                segment: layout.and_then(|l| l.segment_of(i)).map(str::to_string),
                analytic: a,
                numeric,
                max_rel_error: rel,
                n_coords: p.len(),
            };
        }
    }
    report.max_rel_error = report.max_rel_error.max(0.0);
    Ok(report)
}

/// The ELBO on a fixed batch with fixed noise, as a function of the flat
/// parameters.
pub struct ElboObjective<'a, T> {
    pub model: &'a Model,
    pub data: &'a Dataset<T>,
    pub rows: &'a [usize],
    pub cfg: &'a ObjectiveConfig,
    pub noise: &'a Noise<T>,
}

impl<T: Scalar> ElboObjective<'_, T> {
    fn wrap(&self, p: &[T]) -> Result<ParamVector<T>> {
        ParamVector::new(p.to_vec(), self.model.layout.clone())
    }
}

impl<T: Scalar> Objective<T> for ElboObjective<'_, T> {
    fn value(&self, p: &[T]) -> Result<T> {
        Ok(elbo_terms(self.model, &self.wrap(p)?, self.data, self.rows, self.cfg, self.noise)?.elbo)
    }

    fn value_and_grad(&self, p: &[T]) -> Result<(T, Vec<T>)> {
        let (t, g) = elbo_and_grad(self.model, &self.wrap(p)?, self.data, self.rows, self.cfg, self.noise)?;
        Ok((t.elbo, g))
    }
}

#[derive(Clone, Copy)]
struct Node {
    parents: [usize; 2],
    partials: [f64; 2],
}

thread_local! {
    static TAPE: RefCell<Vec<Node>> = const { RefCell::new(Vec::new()) };
}

const NONE: usize = usize::MAX;

fn push(parents: [usize; 2], partials: [f64; 2]) -> usize {
    TAPE.with(|t| {
        let mut t = t.borrow_mut();
        t.push(Node { parents, partials });
        t.len() - 1
    })
}

/// A value recorded on the thread's reverse-mode tape.
#[derive(Clone, Copy, Debug)]
pub struct Var {
    idx: usize,
    val: f64,
}

impl Var {
    fn unary(self, val: f64, d: f64) -> Var {
        Var { idx: push([self.idx, NONE], [d, 0.0]), val }
    }

    fn binary(self, other: Var, val: f64, da: f64, db: f64) -> Var {
        Var { idx: push([self.idx, other.idx], [da, db]), val }
    }

    pub fn constant(val: f64) -> Var {
        Var { idx: push([NONE, NONE], [0.0, 0.0]), val }
    }

    pub fn value(self) -> f64 {
        self.val
    }

    pub fn exp(self) -> Var {
        let e = self.val.exp();
        self.unary(e, e)
    }

    pub fn ln(self) -> Var {
        self.unary(self.val.ln(), 1.0 / self.val)
    }

    pub fn sqrt(self) -> Var {
        let s = self.val.sqrt();
        self.unary(s, 0.5 / s)
    }

    pub fn tanh(self) -> Var {
        let t = self.val.tanh();
        self.unary(t, 1.0 - t * t)
    }

    pub fn powi(self, n: i32) -> Var {
        self.unary(self.val.powi(n), n as f64 * self.val.powi(n - 1))
    }

    pub fn scale(self, c: f64) -> Var {
        self.unary(self.val * c, c)
    }

    pub fn sum(vars: &[Var]) -> Var {
        vars.iter().copied().fold(Var::constant(0.0), |a, b| a + b)
    }
}

impl Add for Var {
    type Output = Var;
    fn add(self, o: Var) -> Var {
        self.binary(o, self.val + o.val, 1.0, 1.0)
    }
}

impl Sub for Var {
    type Output = Var;
    fn sub(self, o: Var) -> Var {
        self.binary(o, self.val - o.val, 1.0, -1.0)
    }
}

impl Mul for Var {
    type Output = Var;
    fn mul(self, o: Var) -> Var {
        self.binary(o, self.val * o.val, o.val, self.val)
    }
}

impl Div for Var {
    type Output = Var;
    fn div(self, o: Var) -> Var {
        self.binary(o, self.val / o.val, 1.0 / o.val, -self.val / (o.val * o.val))
    }
}

impl Neg for Var {
    type Output = Var;
    fn neg(self) -> Var {
        self.unary(-self.val, -1.0)
    }
}

/// Runs `f` on fresh tape inputs at `p` and returns the value and gradient.
pub fn tape_grad(p: &[f64], f: impl Fn(&[Var]) -> Var) -> (f64, Vec<f64>) {
    TAPE.with(|t| t.borrow_mut().clear());
    let inputs: Vec<Var> = p.iter().map(|&v| Var::constant(v)).collect();
    let out = f(&inputs);
    let grad = TAPE.with(|t| {
        let t = t.borrow();
        let mut adj = vec![0.0; t.len()];
        adj[out.idx] = 1.0;
        for i in (0..=out.idx).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = t[i];
            for k in 0..2 {
                if node.parents[k] != NONE {
                    adj[node.parents[k]] += a * node.partials[k];
                }
            }
        }
        inputs.iter().map(|v| adj[v.idx]).collect()
    });
    TAPE.with(|t| t.borrow_mut().clear());
    (out.val, grad)
}

/// An objective written as a closure over tape variables.
pub struct TapeObjective<F>(pub F);

impl<F: Fn(&[Var]) -> Var> Objective<f64> for TapeObjective<F> {
    fn value(&self, p: &[f64]) -> Result<f64> {
        Ok(tape_grad(p, &self.0).0)
    }

    fn value_and_grad(&self, p: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok(tape_grad(p, &self.0))
    }
}
