//! Adam optimisation of the ELBO with shuffled minibatches, a per-epoch
//! evaluation trace, and JSON checkpoints.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Schema};
use crate::error::{input_err, Error, Result};
use crate::model::{Model, ModelConfig, ParamLayout, ParamVector};
use crate::objective::{elbo_and_grad, elbo_terms, Estimator, Noise, ObjectiveConfig};
use crate::scalar::Scalar;
use crate::seed::rng_for;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub objective: ObjectiveConfig,
    /// Epoch interval for the checkpoint callback of [`fit_with`].
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            objective: ObjectiveConfig::default(),
            checkpoint_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be finite and non-negative");
        }
        for b in [self.adam_beta1, self.adam_beta2] {
            if !(0.0..1.0).contains(&b) {
                return bad("adam betas must lie in [0, 1)");
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be positive");
        }
        self.objective.validate()
    }
}

/// First and second moment estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(n: usize) -> Self {
        Self { m: vec![T::zero(); n], v: vec![T::zero(); n], t: 0 }
    }
}

/// One bias-corrected Adam step minimising along `g` at step index `t ≥ 1`.
pub fn adam_step<T: Scalar>(p: &mut [T], g: &[T], state: &mut AdamState<T>, t: u64, cfg: &TrainConfig) -> Result<()> {
    if t == 0 {
        return input_err("adam step index starts at 1");
    }
    if g.len() != p.len() || state.m.len() != p.len() || state.v.len() != p.len() {
        return input_err(format!("adam: {} parameters, {} gradient entries", p.len(), g.len()));
    }
    if let Some(i) = g.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("gradient coordinate {i} is not finite")));
    }
    let (b1, b2) = (T::c(cfg.adam_beta1), T::c(cfg.adam_beta2));
    let lr = T::c(cfg.learning_rate);
    let eps = T::c(cfg.adam_eps);
    let c1 = T::one() - b1.powi(t as i32);
    let c2 = T::one() - b2.powi(t as i32);
    for i in 0..p.len() {
        state.m[i] = b1 * state.m[i] + (T::one() - b1) * g[i];
        state.v[i] = b2 * state.v[i] + (T::one() - b2) * g[i] * g[i];
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        p[i] -= lr * mh / (vh.sqrt() + eps);
    }
    state.t = t;
    Ok(())
}

/// Full-data evaluation terms after one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub elbo: f64,
    pub kl_x: f64,
    pub kl_u: f64,
    pub loglik: f64,
    /// Seconds spent in optimisation steps, excluding evaluation.
    pub step_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainResult<T> {
    pub final_params: ParamVector<T>,
    pub best_elbo_params: ParamVector<T>,
    pub elbo_trace: Vec<EpochRecord>,
    /// Index into the trace of the best evaluation ELBO.
    pub best_epoch: Option<usize>,
    pub wall_time_seconds: f64,
    pub adam: AdamState<T>,
    /// Set when training stopped on a non-finite objective; parameters
    /// are then those after the last completed epoch.
    pub diverged: Option<String>,
}

impl<T> TrainResult<T> {
    pub fn best_elbo(&self) -> Option<f64> {
        self.best_epoch.map(|i| self.elbo_trace[i].elbo)
    }
}

/// The evaluation objective shared by every configuration: quadrature on
/// all non-categorical columns with noise drawn once from the eval stream.
pub fn eval_objective(cfg: &ObjectiveConfig) -> ObjectiveConfig {
    ObjectiveConfig { estimator: Estimator::Quadrature, ..cfg.clone() }
}

pub fn eval_noise<T: Scalar>(model: &Model, n: usize, cfg: &TrainConfig) -> Noise<T> {
    let mut rng = rng_for(cfg.seed, "eval", 0);
    Noise::draw(model, n, &eval_objective(&cfg.objective), &mut rng)
}

/// Full-data evaluation ELBO used for the trace.
pub fn evaluate_elbo<T: Scalar>(model: &Model, params: &ParamVector<T>, data: &Dataset<T>, cfg: &TrainConfig) -> Result<EpochRecord> {
    let rows: Vec<usize> = (0..data.n()).collect();
    let noise = eval_noise(model, data.n(), cfg);
    let t = elbo_terms(model, params, data, &rows, &eval_objective(&cfg.objective), &noise)?;
    Ok(EpochRecord { epoch: 0, elbo: t.elbo.f64(), kl_x: t.kl_x.f64(), kl_u: t.kl_u.f64(), loglik: t.loglik.f64(), step_seconds: 0.0 })
}

/// Trains from the seeded initialisation of `model`.
pub fn fit<T: Scalar>(model: &Model, data: &Dataset<T>, cfg: &TrainConfig) -> Result<TrainResult<T>> {
    let init = model.init_vector(cfg.seed)?;
    fit_with(model, data, init, cfg, |_, _, _| Ok(()))
}

/// Trains from `init`, calling `on_checkpoint(epoch, params, adam)` every
/// `checkpoint_every` epochs.
pub fn fit_with<T: Scalar>(
    model: &Model,
    data: &Dataset<T>,
    init: ParamVector<T>,
    cfg: &TrainConfig,
    on_checkpoint: impl FnMut(usize, &ParamVector<T>, &AdamState<T>) -> Result<()>,
) -> Result<TrainResult<T>> {
    let adam = AdamState::new(init.len());
    resume(model, data, init, adam, 0, cfg, on_checkpoint)
}

/// Continues a run after `start_epoch` completed epochs. Every epoch's
/// stream derives from `(cfg.seed, epoch)`, so resuming from a checkpoint
/// reproduces the uninterrupted run. The trace covers the new epochs only.
pub fn resume<T: Scalar>(
    model: &Model,
    data: &Dataset<T>,
    init: ParamVector<T>,
    mut adam: AdamState<T>,
    start_epoch: usize,
    cfg: &TrainConfig,
    mut on_checkpoint: impl FnMut(usize, &ParamVector<T>, &AdamState<T>) -> Result<()>,
) -> Result<TrainResult<T>> {
    cfg.validate()?;
    if data.schema() != &model.schema {
        return input_err("dataset schema does not match the model");
    }
    if init.len() != model.n_params() {
        return input_err(format!("initial parameters have length {}, model needs {}", init.len(), model.n_params()));
    }
    if adam.m.len() != init.len() || adam.v.len() != init.len() {
        return input_err("optimiser state does not match the parameter vector");
    }
    let start = Instant::now();
    let n = data.n();
    let batch = cfg.objective.minibatch_size.min(n.max(1));
    let eval_cfg = eval_objective(&cfg.objective);
    let eval_rows: Vec<usize> = (0..n).collect();
    let eval_noise: Noise<T> = eval_noise(model, n, cfg);

    let mut params = init;
    let mut best = params.clone();
    let mut best_epoch = None;
    let mut best_elbo = f64::NEG_INFINITY;
    let mut trace = Vec::with_capacity(cfg.epochs.saturating_sub(start_epoch));
    let mut diverged = None;
    let mut order: Vec<usize> = (0..n).collect();

    'epochs: for epoch in start_epoch..cfg.epochs {
        let last_good = (params.clone(), adam.clone());
        let mut rng = rng_for(cfg.seed, "epoch", epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let t0 = Instant::now();
        for rows in order.chunks(batch) {
            let noise = Noise::draw(model, rows.len(), &cfg.objective, &mut rng);
            let step = elbo_and_grad(model, &params, data, rows, &cfg.objective, &noise).and_then(|(_, mut g)| {
                g.iter_mut().for_each(|v| *v = -*v);
                let t = adam.t + 1;
                adam_step(&mut params.flat, &g, &mut adam, t, cfg)
            });
            if let Err(e) = step {
                match e {
                    Error::Numerical(msg) => {
                        diverged = Some(format!("epoch {epoch}: {msg}"));
                        (params, adam) = last_good;
                        break 'epochs;
                    }
                    other => return Err(other),
                }
            }
        }
        let step_seconds = t0.elapsed().as_secs_f64();
        let terms = match elbo_terms(model, &params, data, &eval_rows, &eval_cfg, &eval_noise) {
            Ok(t) => t,
            Err(Error::Numerical(msg)) => {
                diverged = Some(format!("epoch {epoch}: {msg}"));
                (params, adam) = last_good;
                break;
            }
            Err(other) => return Err(other),
        };
        let rec = EpochRecord {
            epoch,
            elbo: terms.elbo.f64(),
            kl_x: terms.kl_x.f64(),
            kl_u: terms.kl_u.f64(),
            loglik: terms.loglik.f64(),
            step_seconds,
        };
        if rec.elbo > best_elbo {
            best_elbo = rec.elbo;
            best_epoch = Some(trace.len());
            best = params.clone();
        }
        trace.push(rec);
        if (epoch + 1) % cfg.checkpoint_every == 0 {
            on_checkpoint(epoch + 1, &params, &adam)?;
        }
    }
    if best_epoch.is_none() {
        best = params.clone();
    }
    Ok(TrainResult {
        final_params: params,
        best_elbo_params: best,
        elbo_trace: trace,
        best_epoch,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        adam,
        diverged,
    })
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to rebuild a trained model and continue from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub schema_fingerprint: String,
    pub schema: Schema,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub layout: ParamLayout,
    pub params: Vec<f64>,
    /// Epochs completed; the next epoch's streams derive from `train.seed`.
    pub epoch: usize,
    pub adam: Option<AdamState<f64>>,
}

impl Checkpoint {
    pub fn new<T: Scalar>(model: &Model, train: &TrainConfig, params: &ParamVector<T>, epoch: usize, adam: Option<&AdamState<T>>) -> Self {
        let cast = |v: &[T]| v.iter().map(|x| x.f64()).collect::<Vec<_>>();
        Self {
            version: CHECKPOINT_VERSION,
            schema_fingerprint: model.schema.fingerprint(),
            schema: model.schema.clone(),
            model: model.config.clone(),
            train: train.clone(),
            layout: (*model.layout).clone(),
            params: cast(&params.flat),
            epoch,
            adam: adam.map(|a| AdamState { m: cast(&a.m), v: cast(&a.v), t: a.t }),
        }
    }

    /// Rebuilds the model and its parameters, checking the stored layout.
    pub fn restore<T: Scalar>(&self) -> Result<(Model, ParamVector<T>)> {
        if self.version != CHECKPOINT_VERSION {
            return input_err(format!("unsupported checkpoint version {}", self.version));
        }
        if self.schema.fingerprint() != self.schema_fingerprint {
            return input_err("checkpoint schema does not match its fingerprint");
        }
        let model = Model::new(self.schema.clone(), self.model.clone())?;
        if *model.layout != self.layout {
            return input_err("checkpoint parameter layout does not match its model configuration");
        }
        let flat = self.params.iter().map(|&v| T::c(v)).collect();
        let params = ParamVector::new(flat, model.layout.clone())?;
        Ok((model, params))
    }

    /// The stored optimiser state, or a fresh one when none was saved.
    pub fn adam_state<T: Scalar>(&self) -> AdamState<T> {
        match &self.adam {
            Some(a) => AdamState { m: a.m.iter().map(|&v| T::c(v)).collect(), v: a.v.iter().map(|&v| T::c(v)).collect(), t: a.t },
            None => AdamState::new(self.params.len()),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
    }
}
