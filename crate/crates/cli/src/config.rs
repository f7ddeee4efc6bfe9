//! Run configuration: built-in defaults, then the TOML file, then flags.

use std::path::Path;

use hetgplvm::eval::{ConsensusConfig, GmmConfig};
use hetgplvm::objective::Estimator;
use hetgplvm::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::usage;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every random stream of a run derives from it.
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub cluster: GmmConfig,
    pub consensus: ConsensusConfig,
    pub cv: CvSection,
    pub ablate: AblateSection,
    pub eval: EvalSection,
    pub simulate: SimulateSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub folds: usize,
    pub reps: usize,
    pub approaches: Vec<u8>,
}

impl Default for CvSection {
    fn default() -> Self {
        Self { folds: 2, reps: 30, approaches: vec![1, 2, 3] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSection {
    pub reps: usize,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self { reps: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Latent dimensionalities tried when no checkpoint is given.
    pub q_candidates: Vec<usize>,
    pub runs_per_q: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { q_candidates: vec![1, 2, 4], runs_per_q: 3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimulateMode {
    Generative,
    Binarize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub mode: SimulateMode,
    pub n: usize,
    /// Column kinds for the generative sampler when no schema is given.
    pub kinds: Vec<String>,
    pub signal_variance: f64,
    pub lengthscale: f64,
    pub gaussian_variance: f64,
    pub beta_dispersion: f64,
    pub prior_variance: f64,
    /// Surrogate images for binarize mode: `side×side` pixels, `classes` templates.
    pub side: usize,
    pub classes: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        let mut kinds = vec!["gaussian".to_string(); 6];
        kinds.extend(vec!["bernoulli".to_string(); 6]);
        Self {
            mode: SimulateMode::Generative,
            n: 300,
            kinds,
            signal_variance: 1.0,
            lengthscale: 1.0,
            gaussian_variance: 0.1,
            beta_dispersion: 10.0,
            prior_variance: 1.0,
            side: 28,
            classes: 3,
        }
    }
}

/// Flag values that override the file; `None` leaves the file value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub latent_dim: Option<usize>,
    pub inducing: Option<usize>,
    pub quad_order: Option<usize>,
    pub estimator: Option<Estimator>,
    pub eta: Option<f64>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.latent_dim {
            self.model.latent_dim = v;
        }
        if let Some(v) = o.inducing {
            self.model.num_inducing = v;
        }
        if let Some(v) = o.quad_order {
            self.train.objective.quad_order = v;
        }
        if let Some(v) = o.estimator {
            self.train.objective.estimator = v;
        }
        if let Some(v) = o.eta {
            self.train.objective.eta = v;
        }
        if let Some(v) = o.epochs {
            self.train.epochs = v;
        }
        if let Some(v) = o.batch {
            self.train.objective.minibatch_size = v;
        }
        self.train.seed = self.seed;
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.model.validate().map_err(|e| usage(e.to_string()))?;
        self.train.validate().map_err(|e| usage(e.to_string()))?;
        Ok(())
    }
}
