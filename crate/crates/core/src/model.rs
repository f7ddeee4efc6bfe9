//! Model structure and the flat parameter vector the optimiser works on.
//!
//! All free parameters live in one vector, split into named segments.
//! Positive quantities are stored as logarithms and each inducing
//! covariance factor as its packed lower triangle with a log diagonal, so
//! every coordinate is unconstrained.

use std::ops::Range;
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Schema};
use crate::error::{input_err, Error, Result};
use crate::kernel::KernelHypers;
use crate::likelihood::{Likelihood, LikelihoodKind, DEFAULT_BETA_DISPERSION, DEFAULT_GAUSSIAN_VARIANCE};
use crate::linalg::{Mat, DEFAULT_BASE_JITTER};
use crate::recognition::{encoded_width, encoder_inputs, EncoderSpec, Mlp, DEFAULT_HIDDEN_WIDTH};
use crate::scalar::Scalar;
use crate::seed::rng_for;
use crate::variational::{InducingChannel, InducingInputs, LatentPosterior};

/// How kernel hyperparameters are tied across channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelSharing {
    /// One kernel for every channel.
    Shared,
    /// One kernel per likelihood family present in the schema.
    PerKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub num_inducing: usize,
    pub hidden_width: usize,
    /// Append the observation mask to the encoder input.
    pub encoder_mask: bool,
    pub kernel_sharing: KernelSharing,
    /// Prior variance `σ_x²` of each latent coordinate.
    pub prior_variance: f64,
    /// Constant added to the diagonal of every `K_MM` in the objective.
    pub inducing_jitter: f64,
    /// First nonzero step of the escalation tried when `K_MM` still fails
    /// to factorise, relative to its mean diagonal.
    pub base_jitter: f64,
    pub init_signal_variance: f64,
    pub init_lengthscale: f64,
    pub init_gaussian_variance: f64,
    pub init_beta_dispersion: f64,
    /// Initial `q(u)` covariance is this multiple of the identity.
    pub init_inducing_variance: f64,
}

pub const DEFAULT_INDUCING_JITTER: f64 = 1e-6;

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 2,
            num_inducing: 32,
            hidden_width: DEFAULT_HIDDEN_WIDTH,
            encoder_mask: true,
            kernel_sharing: KernelSharing::Shared,
            prior_variance: 1.0,
            inducing_jitter: DEFAULT_INDUCING_JITTER,
            base_jitter: DEFAULT_BASE_JITTER,
            init_signal_variance: 1.0,
            init_lengthscale: 1.0,
            init_gaussian_variance: DEFAULT_GAUSSIAN_VARIANCE,
            init_beta_dispersion: DEFAULT_BETA_DISPERSION,
            init_inducing_variance: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.latent_dim == 0 || self.num_inducing == 0 || self.hidden_width == 0 {
            return bad("latent_dim, num_inducing and hidden_width must be positive");
        }
        let positive = [
            self.prior_variance,
            self.init_signal_variance,
            self.init_lengthscale,
            self.init_gaussian_variance,
            self.init_beta_dispersion,
            self.init_inducing_variance,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return bad("variances, lengthscales and dispersions must be positive and finite");
        }
        if !(self.base_jitter >= 0.0 && self.inducing_jitter >= 0.0) {
            return bad("base_jitter and inducing_jitter must be non-negative");
        }
        Ok(())
    }
}

/// One GP output stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelInfo {
    pub column: usize,
    pub kernel: usize,
}

/// Named contiguous ranges of the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub segments: Vec<Segment>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

impl Segment {
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.len
    }
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        self.segments.last().map_or(0, |s| s.start + s.len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Name of the segment holding coordinate `i`.
    pub fn segment_of(&self, i: usize) -> Option<&str> {
        self.segments.iter().find(|s| s.range().contains(&i)).map(|s| s.name.as_str())
    }

    pub fn find(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }
}

/// Flat parameter values paired with their layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector<T> {
    pub flat: Vec<T>,
    pub layout: Arc<ParamLayout>,
}

impl<T: Scalar> ParamVector<T> {
    pub fn new(flat: Vec<T>, layout: Arc<ParamLayout>) -> Result<Self> {
        if flat.len() != layout.len() {
            return input_err(format!("parameter vector has {} entries, layout expects {}", flat.len(), layout.len()));
        }
        Ok(Self { flat, layout })
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<&[T]> {
        self.layout.find(name).map(|s| &self.flat[s.range()])
    }

    pub fn cast<U: Scalar>(&self) -> ParamVector<U> {
        ParamVector { flat: self.flat.iter().map(|v| U::c(v.f64())).collect(), layout: self.layout.clone() }
    }
}

/// Decoded parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub kernels: Vec<KernelHypers<T>>,
    pub inducing: InducingInputs<T>,
    pub channels: Vec<InducingChannel<T>>,
    /// One noise variance per Gaussian column, in column order.
    pub gaussian_variance: Vec<T>,
    /// One dispersion per beta column, in column order.
    pub beta_dispersion: Vec<T>,
    pub encoder: EncoderSpec<T>,
}

/// Structure of a model for one schema: channel map, kernel groups and
/// parameter layout.
#[derive(Clone, Debug)]
pub struct Model {
    pub schema: Schema,
    pub config: ModelConfig,
    pub channels: Vec<ChannelInfo>,
    /// Channel range of each column.
    pub column_channels: Vec<Range<usize>>,
    pub kernel_names: Vec<String>,
    pub gaussian_slot: Vec<Option<usize>>,
    pub beta_slot: Vec<Option<usize>>,
    pub encoder_input_dim: usize,
    pub layout: Arc<ParamLayout>,
    pub(crate) idx: LayoutIndex,
}

#[derive(Clone, Debug)]
pub(crate) struct LayoutIndex {
    pub kernel: Vec<Range<usize>>,
    pub z: Range<usize>,
    pub mu: Vec<Range<usize>>,
    pub sigma: Vec<Range<usize>>,
    pub gaussian_variance: Range<usize>,
    pub beta_dispersion: Range<usize>,
    pub encoder_mean: Range<usize>,
    pub encoder_std: Range<usize>,
}

fn kind_family(kind: LikelihoodKind) -> &'static str {
    match kind {
        LikelihoodKind::Gaussian => "gaussian",
        LikelihoodKind::Bernoulli => "bernoulli",
        LikelihoodKind::Beta => "beta",
        LikelihoodKind::Poisson => "poisson",
        LikelihoodKind::Categorical(_) => "categorical",
    }
}

pub fn packed_lower_len(m: usize) -> usize {
    m * (m + 1) / 2
}

impl Model {
    pub fn new(schema: Schema, config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (q, m) = (config.latent_dim, config.num_inducing);
        let mut kernel_names: Vec<String> = Vec::new();
        if config.kernel_sharing == KernelSharing::Shared {
            kernel_names.push("shared".into());
        }
        let mut channels = Vec::new();
        let mut column_channels = Vec::new();
        let (mut gaussian_slot, mut beta_slot) = (Vec::new(), Vec::new());
        let (mut n_gauss, mut n_beta) = (0, 0);
        for (d, col) in schema.columns.iter().enumerate() {
            let kernel = match config.kernel_sharing {
                KernelSharing::Shared => 0,
                KernelSharing::PerKind => {
                    let fam = kind_family(col.kind);
                    match kernel_names.iter().position(|k| k == fam) {
                        Some(i) => i,
                        None => {
                            kernel_names.push(fam.into());
                            kernel_names.len() - 1
                        }
                    }
                }
            };
            let start = channels.len();
            channels.extend((0..col.kind.num_channels()).map(|_| ChannelInfo { column: d, kernel }));
            column_channels.push(start..channels.len());
            gaussian_slot.push((col.kind == LikelihoodKind::Gaussian).then(|| {
                n_gauss += 1;
                n_gauss - 1
            }));
            beta_slot.push((col.kind == LikelihoodKind::Beta).then(|| {
                n_beta += 1;
                n_beta - 1
            }));
        }
        let encoder_input_dim = encoded_width(&schema, config.encoder_mask);
        let mlp_len = Mlp::<f64>::zeros(encoder_input_dim, config.hidden_width, q).n_params();

        let mut segments = Vec::new();
        let mut push = |name: String, len: usize| {
            let start = segments.last().map_or(0, |s: &Segment| s.start + s.len);
            segments.push(Segment { name, start, len });
            start..start + len
        };
        let kernel = kernel_names.iter().map(|k| push(format!("kernel[{k}]"), 1 + q)).collect();
        let z = push("inducing_inputs".into(), m * q);
        let mut mu = Vec::new();
        let mut sigma = Vec::new();
        for c in 0..channels.len() {
            mu.push(push(format!("mu[{c}]"), m));
            sigma.push(push(format!("sigma_chol[{c}]"), packed_lower_len(m)));
        }
        let gaussian_variance = push("gaussian_log_variance".into(), n_gauss);
        let beta_dispersion = push("beta_log_dispersion".into(), n_beta);
        let encoder_mean = push("encoder_mean".into(), mlp_len);
        let encoder_std = push("encoder_std".into(), mlp_len);
        let idx = LayoutIndex { kernel, z, mu, sigma, gaussian_variance, beta_dispersion, encoder_mean, encoder_std };
        Ok(Self {
            schema,
            config,
            channels,
            column_channels,
            kernel_names,
            gaussian_slot,
            beta_slot,
            encoder_input_dim,
            layout: Arc::new(ParamLayout { segments }),
            idx,
        })
    }

    pub fn n_params(&self) -> usize {
        self.layout.len()
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn num_inducing(&self) -> usize {
        self.config.num_inducing
    }

    /// Fully parameterised likelihood of column `d`.
    pub fn likelihood<T: Scalar>(&self, p: &ModelParams<T>, d: usize) -> Likelihood<T> {
        match self.schema.columns[d].kind {
            LikelihoodKind::Gaussian => Likelihood::Gaussian { variance: p.gaussian_variance[self.gaussian_slot[d].unwrap()] },
            LikelihoodKind::Beta => Likelihood::Beta { dispersion: p.beta_dispersion[self.beta_slot[d].unwrap()] },
            kind => Likelihood::default_for(kind),
        }
    }

    /// Initial parameters: unit kernel, `Z ~ N(0, σ_x²)`, zero inducing
    /// means, `q(u)` covariance a small multiple of the identity, Xavier
    /// encoder weights.
    pub fn init_params<T: Scalar>(&self, seed: u64) -> Result<ModelParams<T>> {
        let cfg = &self.config;
        let (q, m) = (cfg.latent_dim, cfg.num_inducing);
        let mut rng = rng_for(seed, "init", 0);
        let sx = cfg.prior_variance.sqrt();
        let z = Mat::from_fn(m, q, |_, _| T::c(sx * rng.sample::<f64, _>(StandardNormal)));
        let encoder = EncoderSpec::xavier(self.encoder_input_dim, cfg.hidden_width, q, &mut rng)?;
        let hyp = KernelHypers::new(T::c(cfg.init_signal_variance), vec![T::c(cfg.init_lengthscale); q])?;
        let mut s0 = Mat::zeros(m, m);
        s0.add_diag(T::c(cfg.init_inducing_variance.sqrt()));
        let channels = (0..self.n_channels()).map(|_| InducingChannel::new(vec![T::zero(); m], s0.clone())).collect::<Result<_>>()?;
        Ok(ModelParams {
            kernels: vec![hyp; self.kernel_names.len()],
            inducing: InducingInputs::new(z)?,
            channels,
            gaussian_variance: vec![T::c(cfg.init_gaussian_variance); self.idx.gaussian_variance.len()],
            beta_dispersion: vec![T::c(cfg.init_beta_dispersion); self.idx.beta_dispersion.len()],
            encoder,
        })
    }

    pub fn init_vector<T: Scalar>(&self, seed: u64) -> Result<ParamVector<T>> {
        self.pack(&self.init_params(seed)?)
    }

    pub fn pack<T: Scalar>(&self, p: &ModelParams<T>) -> Result<ParamVector<T>> {
        let (q, m) = (self.latent_dim(), self.num_inducing());
        if p.kernels.len() != self.kernel_names.len()
            || p.kernels.iter().any(|h| h.latent_dim() != q)
            || p.inducing.z.shape() != (m, q)
            || p.channels.len() != self.n_channels()
            || p.channels.iter().any(|c| c.m() != m)
            || p.gaussian_variance.len() != self.idx.gaussian_variance.len()
            || p.beta_dispersion.len() != self.idx.beta_dispersion.len()
            || p.encoder.input_dim() != self.encoder_input_dim
            || p.encoder.hidden_width() != self.config.hidden_width
            || p.encoder.latent_dim() != q
        {
            return input_err("parameters do not match the model structure");
        }
        let mut flat = Vec::with_capacity(self.n_params());
        for h in &p.kernels {
            flat.extend(h.to_log());
        }
        flat.extend_from_slice(p.inducing.z.as_slice());
        for ch in &p.channels {
            flat.extend_from_slice(&ch.mu);
            for i in 0..m {
                for j in 0..=i {
                    let v = ch.sigma_chol[(i, j)];
                    flat.push(if i == j { v.ln() } else { v });
                }
            }
        }
        flat.extend(p.gaussian_variance.iter().map(|v| v.ln()));
        flat.extend(p.beta_dispersion.iter().map(|v| v.ln()));
        flat.extend(p.encoder.mean.to_flat());
        flat.extend(p.encoder.std.to_flat());
        ParamVector::new(flat, self.layout.clone())
    }

    pub fn unpack<T: Scalar>(&self, pv: &ParamVector<T>) -> Result<ModelParams<T>> {
        if *pv.layout != *self.layout {
            return input_err("parameter layout does not match the model");
        }
        let f = &pv.flat;
        let (q, m, h) = (self.latent_dim(), self.num_inducing(), self.config.hidden_width);
        let kernels = self.idx.kernel.iter().map(|r| KernelHypers::from_log(&f[r.clone()])).collect();
        let z = Mat::from_vec(m, q, f[self.idx.z.clone()].to_vec())?;
        let mut channels = Vec::with_capacity(self.n_channels());
        for c in 0..self.n_channels() {
            let mu = f[self.idx.mu[c].clone()].to_vec();
            channels.push(InducingChannel { mu, sigma_chol: unpack_lower(&f[self.idx.sigma[c].clone()], m) });
        }
        Ok(ModelParams {
            kernels,
            inducing: InducingInputs { z },
            channels,
            gaussian_variance: f[self.idx.gaussian_variance.clone()].iter().map(|v| v.exp()).collect(),
            beta_dispersion: f[self.idx.beta_dispersion.clone()].iter().map(|v| v.exp()).collect(),
            encoder: EncoderSpec {
                mean: Mlp::from_flat(self.encoder_input_dim, h, q, &f[self.idx.encoder_mean.clone()])?,
                std: Mlp::from_flat(self.encoder_input_dim, h, q, &f[self.idx.encoder_std.clone()])?,
            },
        })
    }

    /// Encoder output `q(x_n)` for every row of `data`.
    pub fn embed<T: Scalar>(&self, params: &ParamVector<T>, data: &Dataset<T>) -> Result<LatentPosterior<T>> {
        if data.schema() != &self.schema {
            return input_err("dataset schema does not match the model");
        }
        let rows: Vec<usize> = (0..data.n()).collect();
        let (means, stds) = self.unpack(params)?.encoder.encode_batch(&encoder_inputs(data, &rows, self.config.encoder_mask))?;
        LatentPosterior::new(means, stds)
    }
}

pub(crate) fn unpack_lower<T: Scalar>(packed: &[T], m: usize) -> Mat<T> {
    let mut s = Mat::zeros(m, m);
    let mut at = 0;
    for i in 0..m {
        for j in 0..=i {
            s[(i, j)] = if i == j { packed[at].exp() } else { packed[at] };
            at += 1;
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mixed() -> Schema {
        Schema::from_kinds(&[
            LikelihoodKind::Gaussian,
            LikelihoodKind::Bernoulli,
            LikelihoodKind::Categorical(3),
            LikelihoodKind::Beta,
            LikelihoodKind::Gaussian,
        ])
        .unwrap()
    }

    #[test]
    fn channel_map_and_kernel_groups() {
        let model = Model::new(mixed(), ModelConfig { num_inducing: 4, ..Default::default() }).unwrap();
        assert_eq!(model.n_channels(), 7);
        assert_eq!(model.column_channels[2], 2..5);
        assert_eq!(model.kernel_names, vec!["shared"]);
        assert_eq!(model.gaussian_slot, vec![Some(0), None, None, None, Some(1)]);
        assert_eq!(model.beta_slot[3], Some(0));
        let cfg = ModelConfig { kernel_sharing: KernelSharing::PerKind, ..Default::default() };
        let model = Model::new(mixed(), cfg).unwrap();
        assert_eq!(model.kernel_names, vec!["gaussian", "bernoulli", "categorical", "beta"]);
        assert_eq!(model.channels[6].kernel, 0);
    }

    #[test]
    fn layout_segments_tile_the_vector() {
        let model = Model::new(mixed(), ModelConfig { num_inducing: 3, hidden_width: 4, ..Default::default() }).unwrap();
        let mut at = 0;
        for s in &model.layout.segments {
            assert_eq!(s.start, at);
            at += s.len;
        }
        assert_eq!(at, model.n_params());
        assert_eq!(model.layout.segment_of(0), Some("kernel[shared]"));
        assert_eq!(model.layout.segment_of(model.n_params() - 1), Some("encoder_std"));
        assert_eq!(model.layout.segment_of(model.n_params()), None);
    }

    #[test]
    fn init_round_trips() {
        let model = Model::new(mixed(), ModelConfig { num_inducing: 3, hidden_width: 4, ..Default::default() }).unwrap();
        let p = model.init_params::<f64>(9).unwrap();
        let v = model.pack(&p).unwrap();
        let back = model.unpack(&v).unwrap();
        for (a, b) in model.pack(&back).unwrap().flat.iter().zip(&v.flat) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!((back.channels[0].sigma_chol[(1, 1)] - p.channels[0].sigma_chol[(1, 1)]).abs() < 1e-14);
        assert!(ModelConfig { latent_dim: 0, ..Default::default() }.validate().is_err());
    }
}
