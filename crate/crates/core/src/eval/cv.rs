//! Repeated k-fold cross-validation of the three modelling approaches,
//! latent dimensionality selection, and the quadrature/sampling ablation.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::likelihood::LikelihoodKind;
use crate::model::{Model, ModelConfig, ParamVector};
use crate::objective::{predictive_loglik, Estimator, PredictiveScore};
use crate::seed::{derive_seed, rng_for};
use crate::train::{fit, TrainConfig, TrainResult};

/// Which columns are modelled, and with which likelihoods.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Approach {
    /// Approach 1: gaussian columns only.
    GaussianOnly,
    /// Approach 2: every column with its own likelihood.
    Composite,
    /// Approach 3: every column forced to a gaussian likelihood.
    AllGaussian,
}

impl Approach {
    pub const ALL: [Approach; 3] = [Approach::GaussianOnly, Approach::Composite, Approach::AllGaussian];

    pub fn number(self) -> u8 {
        match self {
            Self::GaussianOnly => 1,
            Self::Composite => 2,
            Self::AllGaussian => 3,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Self::GaussianOnly),
            2 => Ok(Self::Composite),
            3 => Ok(Self::AllGaussian),
            _ => Err(Error::Config(format!("unknown approach {n} (expected 1, 2 or 3)"))),
        }
    }

    /// The dataset this approach trains on.
    pub fn transform(self, data: &Dataset<f64>) -> Result<Dataset<f64>> {
        match self {
            Self::GaussianOnly => {
                let cols = gaussian_columns(data);
                if cols.is_empty() {
                    return Err(Error::Config("approach 1 needs at least one gaussian column".into()));
                }
                data.select_columns(&cols)
            }
            Self::Composite => Ok(data.clone()),
            Self::AllGaussian => data.with_kinds(&vec![LikelihoodKind::Gaussian; data.d()]),
        }
    }
}

/// Which held-out entries are scored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    /// The columns that are gaussian in the original schema.
    Gaussian,
    /// Every column the approach models.
    All,
}

pub fn gaussian_columns(data: &Dataset<f64>) -> Vec<usize> {
    data.columns_where(|k| k == LikelihoodKind::Gaussian)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub folds: usize,
    pub reps: usize,
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { folds: 2, reps: 30, seed: 0, model: ModelConfig::default(), train: TrainConfig::default() }
    }
}

/// Fold index of every row for repetition `rep`.
pub fn fold_partition(n: usize, folds: usize, seed: u64, rep: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, "cv-partition", rep as u64));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % folds.max(1);
    }
    fold
}

fn split(fold_of: &[usize], fold: usize) -> (Vec<usize>, Vec<usize>) {
    (0..fold_of.len()).partition(|&i| fold_of[i] != fold)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FoldScore {
    pub rep: usize,
    pub fold: usize,
    pub approach: Approach,
    pub scope: Scope,
    pub sum: f64,
    pub n_entries: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct CvReport {
    pub approaches: Vec<Approach>,
    /// Fold index per row, one vector per repetition, shared by all approaches.
    pub partitions: Vec<Vec<usize>>,
    pub scores: Vec<FoldScore>,
}

impl CvReport {
    /// Per-entry mean over all folds of one repetition.
    pub fn rep_mean(&self, rep: usize, approach: Approach, scope: Scope) -> Option<f64> {
        let (s, n) = self
            .scores
            .iter()
            .filter(|f| f.rep == rep && f.approach == approach && f.scope == scope)
            .fold((0.0, 0usize), |(s, n), f| (s + f.sum, n + f.n_entries));
        (n > 0).then(|| s / n as f64)
    }

    /// `a − b` per repetition on per-entry means.
    pub fn paired_differences(&self, a: Approach, b: Approach, scope: Scope) -> Vec<f64> {
        (0..self.partitions.len())
            .filter_map(|r| Some(self.rep_mean(r, a, scope)? - self.rep_mean(r, b, scope)?))
            .collect()
    }
}

/// Trains `data` with `cfg` (seeded by `seed`) and scores `test` on `columns`.
pub fn train_and_score(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train: &Dataset<f64>,
    test: &Dataset<f64>,
    columns: &[Option<Vec<usize>>],
    predict_seed: u64,
) -> Result<(TrainResult<f64>, Model, Vec<PredictiveScore>)> {
    let model = Model::new(train.schema().clone(), model_cfg.clone())?;
    let res = fit(&model, train, train_cfg)?;
    if let Some(msg) = &res.diverged {
        return Err(Error::Numerical(format!("training diverged: {msg}")));
    }
    let scores = columns
        .iter()
        .map(|cols| score_params(&model, &res.best_elbo_params, test, train_cfg, cols.as_deref(), predict_seed))
        .collect::<Result<_>>()?;
    Ok((res, model, scores))
}

/// Held-out predictive log-likelihood with noise from `seed`.
pub fn score_params(
    model: &Model,
    params: &ParamVector<f64>,
    test: &Dataset<f64>,
    train_cfg: &TrainConfig,
    columns: Option<&[usize]>,
    seed: u64,
) -> Result<PredictiveScore> {
    let mut rng = rng_for(seed, "predict", 0);
    predictive_loglik(model, params, test, &train_cfg.objective, columns, &mut rng)
}

/// Repeated cross-validation with identical fold partitions across
/// approaches. Each (repetition, fold, approach) trains independently.
pub fn repeated_cv(data: &Dataset<f64>, approaches: &[Approach], cfg: &CvConfig) -> Result<CvReport> {
    if cfg.reps == 0 {
        return Err(Error::Config("repeated_cv needs at least one repetition".into()));
    }
    if cfg.folds < 2 || cfg.folds > data.n() {
        return Err(Error::Config(format!("cannot split {} rows into {} folds", data.n(), cfg.folds)));
    }
    let mut approaches = approaches.to_vec();
    approaches.sort();
    approaches.dedup();
    let derived: Vec<Dataset<f64>> = approaches.iter().map(|a| a.transform(data)).collect::<Result<_>>()?;
    let gauss = gaussian_columns(data);
    let partitions: Vec<Vec<usize>> = (0..cfg.reps).map(|r| fold_partition(data.n(), cfg.folds, cfg.seed, r)).collect();

    let n_app = approaches.len();
    let tasks: Vec<(usize, usize, usize)> =
        (0..cfg.reps).flat_map(|r| (0..cfg.folds).flat_map(move |f| (0..n_app).map(move |a| (r, f, a)))).collect();
    let results: Vec<Vec<FoldScore>> = tasks
        .par_iter()
        .map(|&(rep, fold, ai)| {
            let approach = approaches[ai];
            let (train_rows, test_rows) = split(&partitions[rep], fold);
            let ds = &derived[ai];
            let (train, test) = (ds.subset_rows(&train_rows), ds.subset_rows(&test_rows));
            let task = (rep * cfg.folds + fold) as u64;
            let train_cfg = TrainConfig { seed: derive_seed(cfg.seed, "cv-train", task), ..cfg.train.clone() };
            let mut scopes = vec![Scope::Gaussian];
            let mut columns = vec![Some(if approach == Approach::GaussianOnly { (0..ds.d()).collect() } else { gauss.clone() })];
            if approach != Approach::GaussianOnly {
                scopes.push(Scope::All);
                columns.push(None);
            }
            let predict_seed = derive_seed(cfg.seed, "cv-predict", task);
            let (_, _, scores) = train_and_score(&cfg.model, &train_cfg, &train, &test, &columns, predict_seed)?;
            Ok(scopes
                .into_iter()
                .zip(scores)
                .map(|(scope, s)| FoldScore { rep, fold, approach, scope, sum: s.sum, n_entries: s.n_entries })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(CvReport { approaches, partitions, scores: results.into_iter().flatten().collect() })
}

#[derive(Clone, Debug, Serialize)]
pub struct LatentDimScore {
    pub q: usize,
    /// Run index with the highest training ELBO.
    pub best_run: usize,
    pub train_elbo: f64,
    pub heldout: PredictiveScore,
}

#[derive(Clone, Debug, Serialize)]
pub struct LatentDimSelection {
    pub best_q: usize,
    pub per_q: Vec<LatentDimScore>,
}

/// For each candidate Q, trains `runs_per_q` seeded runs, keeps the one
/// with the highest best-epoch ELBO, and scores it on `heldout`. Returns
/// the Q with the highest held-out log-likelihood.
pub fn select_latent_dim(
    train: &Dataset<f64>,
    heldout: &Dataset<f64>,
    q_candidates: &[usize],
    runs_per_q: usize,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<LatentDimSelection> {
    if q_candidates.is_empty() || runs_per_q == 0 {
        return Err(Error::Config("select_latent_dim needs candidates and at least one run".into()));
    }
    let tasks: Vec<(usize, usize)> = q_candidates.iter().flat_map(|&q| (0..runs_per_q).map(move |r| (q, r))).collect();
    let runs: Vec<(f64, Model, ParamVector<f64>)> = tasks
        .par_iter()
        .map(|&(q, r)| {
            let model = Model::new(train.schema().clone(), ModelConfig { latent_dim: q, ..model_cfg.clone() })?;
            let cfg = TrainConfig { seed: derive_seed(train_cfg.seed, "select-q", (q * 1000 + r) as u64), ..train_cfg.clone() };
            let res = fit(&model, train, &cfg)?;
            let elbo = res.best_elbo().unwrap_or(f64::NEG_INFINITY);
            Ok((elbo, model, res.best_elbo_params))
        })
        .collect::<Result<_>>()?;
    let mut per_q = Vec::new();
    for (qi, &q) in q_candidates.iter().enumerate() {
        let group = &runs[qi * runs_per_q..(qi + 1) * runs_per_q];
        let (best_run, (elbo, model, params)) =
            group.iter().enumerate().max_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(b.0.cmp(&a.0))).expect("non-empty");
        if *elbo == f64::NEG_INFINITY {
            return Err(Error::Numerical(format!("every run with Q = {q} diverged before its first epoch")));
        }
        let heldout = score_params(model, params, heldout, train_cfg, None, derive_seed(train_cfg.seed, "select-q-predict", 0))?;
        per_q.push(LatentDimScore { q, best_run, train_elbo: *elbo, heldout });
    }
    let best_q = per_q.iter().max_by(|a, b| a.heldout.sum.total_cmp(&b.heldout.sum).then(b.q.cmp(&a.q))).expect("non-empty").q;
    Ok(LatentDimSelection { best_q, per_q })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub reps: usize,
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { reps: 10, seed: 0, model: ModelConfig::default(), train: TrainConfig::default() }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationRun {
    pub rep: usize,
    pub estimator: Estimator,
    pub heldout: PredictiveScore,
    /// Median over epochs of the time spent in optimisation steps.
    pub epoch_seconds: f64,
    pub wall_seconds: f64,
    pub best_elbo: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationReport {
    /// Fold index per row (fold 1 is held out), one vector per repetition.
    pub partitions: Vec<Vec<usize>>,
    pub runs: Vec<AblationRun>,
}

impl AblationReport {
    pub fn arm(&self, e: Estimator) -> Vec<&AblationRun> {
        self.runs.iter().filter(|r| r.estimator == e).collect()
    }
}

/// Matched quadrature and sampling fits on identical splits and seeds.
/// Both arms of a repetition run back to back on the same thread.
pub fn estimator_ablation(data: &Dataset<f64>, cfg: &AblationConfig) -> Result<AblationReport> {
    if cfg.reps == 0 {
        return Err(Error::Config("ablation needs at least one repetition".into()));
    }
    let partitions: Vec<Vec<usize>> = (0..cfg.reps).map(|r| fold_partition(data.n(), 2, cfg.seed, r)).collect();
    let runs: Vec<Vec<AblationRun>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let (train_rows, test_rows) = split(&partitions[rep], 1);
            let (train, test) = (data.subset_rows(&train_rows), data.subset_rows(&test_rows));
            let seed = derive_seed(cfg.seed, "ablate-train", rep as u64);
            let predict_seed = derive_seed(cfg.seed, "ablate-predict", rep as u64);
            [Estimator::Quadrature, Estimator::Sampling]
                .into_iter()
                .map(|estimator| {
                    let mut train_cfg = TrainConfig { seed, ..cfg.train.clone() };
                    train_cfg.objective.estimator = estimator;
                    let (res, _, scores) = train_and_score(&cfg.model, &train_cfg, &train, &test, &[None], predict_seed)?;
                    let mut secs: Vec<f64> = res.elbo_trace.iter().map(|e| e.step_seconds).collect();
                    secs.sort_by(f64::total_cmp);
                    Ok(AblationRun {
                        rep,
                        estimator,
                        heldout: scores[0],
                        epoch_seconds: crate::eval::consensus::quantile(&secs, 0.5),
                        wall_seconds: res.wall_time_seconds,
                        best_elbo: res.best_elbo().unwrap_or(f64::NAN),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(AblationReport { partitions, runs: runs.into_iter().flatten().collect() })
}
