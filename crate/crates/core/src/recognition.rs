//! Recognition model: two one-hidden-layer networks mapping an encoded data
//! row to the mean and standard deviation of `q(x_n)`.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Schema};
use crate::error::{input_err, Result};
use crate::likelihood::LikelihoodKind;
use crate::linalg::{dot, Mat};
use crate::scalar::Scalar;
use crate::special::sigmoid;

pub const DEFAULT_HIDDEN_WIDTH: usize = 30;
/// Lower clamp of the std head.
pub const STD_FLOOR: f64 = 1e-6;

/// Uniform Xavier draw of a `fan_out × fan_in` weight matrix.
pub fn xavier_init<T: Scalar>(fan_in: usize, fan_out: usize, rng: &mut impl rand::Rng) -> Result<Mat<T>> {
    if fan_in == 0 || fan_out == 0 {
        return input_err("xavier_init needs positive fans");
    }
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Ok(Mat::from_fn(fan_out, fan_in, |_, _| T::c(rng.random_range(-bound..=bound))))
}

/// `out = W2 · tanh(W1 · x + b1) + b2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    pub w1: Mat<T>,
    pub b1: Vec<T>,
    pub w2: Mat<T>,
    pub b2: Vec<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self { w1: Mat::zeros(hidden, input), b1: vec![T::zero(); hidden], w2: Mat::zeros(output, hidden), b2: vec![T::zero(); output] }
    }

    pub fn xavier(input: usize, hidden: usize, output: usize, rng: &mut impl rand::Rng) -> Result<Self> {
        Ok(Self {
            w1: xavier_init(input, hidden, rng)?,
            b1: vec![T::zero(); hidden],
            w2: xavier_init(hidden, output, rng)?,
            b2: vec![T::zero(); output],
        })
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden_width(&self) -> usize {
        self.w1.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.rows()
    }

    pub fn n_params(&self) -> usize {
        self.w1.rows() * self.w1.cols() + self.b1.len() + self.w2.rows() * self.w2.cols() + self.b2.len()
    }

    /// Flattened `(w1, b1, w2, b2)`.
    pub fn to_flat(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.n_params());
        v.extend_from_slice(self.w1.as_slice());
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(self.w2.as_slice());
        v.extend_from_slice(&self.b2);
        v
    }

    pub fn from_flat(input: usize, hidden: usize, output: usize, flat: &[T]) -> Result<Self> {
        let mut m = Self::zeros(input, hidden, output);
        if flat.len() != m.n_params() {
            return input_err(format!("MLP expects {} weights, got {}", m.n_params(), flat.len()));
        }
        let mut at = 0;
        let mut take = |dst: &mut [T]| {
            dst.copy_from_slice(&flat[at..at + dst.len()]);
            at += dst.len();
        };
        take(m.w1.as_mut_slice());
        take(&mut m.b1);
        take(m.w2.as_mut_slice());
        take(&mut m.b2);
        Ok(m)
    }

    fn hidden(&self, x: &[T], out: &mut [T]) {
        for (h, o) in out.iter_mut().enumerate() {
            *o = (dot(self.w1.row(h), x) + self.b1[h]).tanh();
        }
    }

    fn head(&self, hid: &[T], out: &mut [T]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = dot(self.w2.row(k), hid) + self.b2[k];
        }
    }

    /// Accumulates weight gradients for one row given `dout` at the head.
    fn backward_row(&self, x: &[T], hid: &[T], dout: &[T], grad: &mut Mlp<T>, dhid: &mut [T]) {
        dhid.iter_mut().for_each(|v| *v = T::zero());
        for (k, &g) in dout.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            grad.b2[k] += g;
            let w = self.w2.row(k);
            let gw = grad.w2.row_mut(k);
            for h in 0..hid.len() {
                gw[h] += g * hid[h];
                dhid[h] += g * w[h];
            }
        }
        for h in 0..hid.len() {
            let g = dhid[h] * (T::one() - hid[h] * hid[h]);
            if g == T::zero() {
                continue;
            }
            grad.b1[h] += g;
            for (gw, &xi) in grad.w1.row_mut(h).iter_mut().zip(x) {
                *gw += g * xi;
            }
        }
    }
}

#[inline]
fn std_head<T: Scalar>(o: T) -> (T, T) {
    let s = sigmoid(o);
    let lo = T::c(STD_FLOOR);
    let hi = T::one() - T::epsilon();
    if s < lo {
        (lo, T::zero())
    } else if s > hi {
        (hi, T::zero())
    } else {
        (s, s * (T::one() - s))
    }
}

/// Mean network ω₁ and std network ω₂ sharing input and hidden widths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec<T> {
    pub mean: Mlp<T>,
    pub std: Mlp<T>,
}

/// Intermediate values of a batched forward pass.
pub(crate) struct EncoderTape<T> {
    hid_mean: Mat<T>,
    hid_std: Mat<T>,
    dstd_dout: Mat<T>,
}

impl<T: Scalar> EncoderSpec<T> {
    pub fn zeros(input: usize, hidden: usize, latent: usize) -> Self {
        Self { mean: Mlp::zeros(input, hidden, latent), std: Mlp::zeros(input, hidden, latent) }
    }

    pub fn xavier(input: usize, hidden: usize, latent: usize, rng: &mut impl rand::Rng) -> Result<Self> {
        Ok(Self { mean: Mlp::xavier(input, hidden, latent, rng)?, std: Mlp::xavier(input, hidden, latent, rng)? })
    }

    pub fn input_dim(&self) -> usize {
        self.mean.input_dim()
    }

    pub fn hidden_width(&self) -> usize {
        self.mean.hidden_width()
    }

    pub fn latent_dim(&self) -> usize {
        self.mean.output_dim()
    }

    /// `(mean, std)` of `q(x)` for one encoded row.
    pub fn encode(&self, x: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let (m, s) = self.encode_batch(&Mat::from_vec(1, x.len(), x.to_vec())?)?;
        Ok((m.into_vec(), s.into_vec()))
    }

    /// Row-wise [`encode`](Self::encode).
    pub fn encode_batch(&self, x: &Mat<T>) -> Result<(Mat<T>, Mat<T>)> {
        self.forward(x).map(|(m, s, _)| (m, s))
    }

    pub(crate) fn forward(&self, x: &Mat<T>) -> Result<(Mat<T>, Mat<T>, EncoderTape<T>)> {
        if x.cols() != self.input_dim() {
            return input_err(format!("encoder expects {} inputs, got {}", self.input_dim(), x.cols()));
        }
        if x.as_slice().iter().any(|v| !v.is_finite()) {
            return input_err("encoder input contains non-finite values");
        }
        let (b, h, q) = (x.rows(), self.hidden_width(), self.latent_dim());
        let mut hid_mean = Mat::zeros(b, h);
        let mut hid_std = Mat::zeros(b, h);
        let mut mean = Mat::zeros(b, q);
        let mut std = Mat::zeros(b, q);
        let mut dstd_dout = Mat::zeros(b, q);
        let mut raw = vec![T::zero(); q];
        for n in 0..b {
            self.mean.hidden(x.row(n), hid_mean.row_mut(n));
            self.mean.head(hid_mean.row(n), mean.row_mut(n));
            self.std.hidden(x.row(n), hid_std.row_mut(n));
            self.std.head(hid_std.row(n), &mut raw);
            for k in 0..q {
                let (s, ds) = std_head(raw[k]);
                std[(n, k)] = s;
                dstd_dout[(n, k)] = ds;
            }
        }
        Ok((mean, std, EncoderTape { hid_mean, hid_std, dstd_dout }))
    }

    /// Weight gradients given gradients w.r.t. the batch means and stds.
    pub(crate) fn backward(&self, x: &Mat<T>, tape: &EncoderTape<T>, dmean: &Mat<T>, dstd: &Mat<T>) -> EncoderSpec<T> {
        let (i, h, q) = (self.input_dim(), self.hidden_width(), self.latent_dim());
        let mut grad = Self::zeros(i, h, q);
        let mut dhid = vec![T::zero(); h];
        let mut dout = vec![T::zero(); q];
        for n in 0..x.rows() {
            self.mean.backward_row(x.row(n), tape.hid_mean.row(n), dmean.row(n), &mut grad.mean, &mut dhid);
            for k in 0..q {
                dout[k] = dstd[(n, k)] * tape.dstd_dout[(n, k)];
            }
            self.std.backward_row(x.row(n), tape.hid_std.row(n), &dout, &mut grad.std, &mut dhid);
        }
        grad
    }
}

/// Encoder input slots per column: one value, or a one-hot block for
/// categorical columns.
pub fn encoded_width(schema: &Schema, use_mask: bool) -> usize {
    let values: usize = schema.columns.iter().map(|c| c.kind.num_channels()).sum();
    values + if use_mask { schema.len() } else { 0 }
}

/// Encoder inputs for `rows`: observed values (Poisson counts as `ln(1+y)`,
/// categorical one-hot), zeros where missing, then the observation mask.
pub fn encoder_inputs<T: Scalar>(ds: &Dataset<T>, rows: &[usize], use_mask: bool) -> Mat<T> {
    let schema = ds.schema();
    let width = encoded_width(schema, use_mask);
    let mut out = Mat::zeros(rows.len(), width);
    for (r, &n) in rows.iter().enumerate() {
        let row = out.row_mut(r);
        let mut at = 0;
        for (d, col) in schema.columns.iter().enumerate() {
            let obs = ds.observed(n, d);
            let y = ds.value(n, d);
            match col.kind {
                LikelihoodKind::Categorical(k) => {
                    if obs {
                        row[at + y.f64() as usize - 1] = T::one();
                    }
                    at += k;
                }
                kind => {
                    if obs {
                        row[at] = if kind == LikelihoodKind::Poisson { y.ln_1p() } else { y };
                    }
                    at += 1;
                }
            }
        }
        if use_mask {
            for d in 0..schema.len() {
                row[at + d] = if ds.observed(n, d) { T::one() } else { T::zero() };
            }
        }
    }
    out
}
