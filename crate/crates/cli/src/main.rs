//! `hetgplvm`: train, embed, evaluate and cluster with the mixed-likelihood
//! GPLVM, and run the evaluation protocol end to end.
//!
//! Every command reads its settings from built-in defaults, then the
//! `--config` TOML file, then flags; later sources win. Outputs go to
//! `--out-dir` together with a `manifest.json` echoing the resolved
//! configuration. Exit codes: 0 success, 2 usage, 3 invalid input,
//! 4 numerical failure.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hetgplvm::objective::Estimator;

use crate::config::{Overrides, RunConfig};
use crate::error::{exit_code, usage};
use crate::output::Outputs;

#[derive(Parser, Debug)]
#[command(name = "hetgplvm", version, about = "Mixed-likelihood Gaussian process latent variable model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Dataset CSV (header row, empty or NA for missing).
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Schema JSON listing column names and kinds.
    #[arg(long, global = true)]
    pub schema: Option<PathBuf>,
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Checkpoint to embed, evaluate or cluster with, or to resume training from.
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub latent_dim: Option<usize>,
    /// Number of inducing points.
    #[arg(long, global = true)]
    pub inducing: Option<usize>,
    /// Gauss-Hermite order.
    #[arg(long, global = true)]
    pub quad_order: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub estimator: Option<EstimatorArg>,
    /// Weight on the latent KL term.
    #[arg(long, global = true)]
    pub eta: Option<f64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Minibatch size.
    #[arg(long, global = true)]
    pub batch: Option<usize>,
    /// Worker threads for independent repetitions; results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum EstimatorArg {
    Quadrature,
    Sampling,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model; writes checkpoints and the ELBO trace.
    Train,
    /// Write the encoder's latent means and standard deviations.
    Embed,
    /// Score a checkpoint on a dataset, or select the latent dimensionality.
    Eval {
        #[arg(long, value_delimiter = ',')]
        q_candidates: Option<Vec<usize>>,
        #[arg(long)]
        runs_per_q: Option<usize>,
    },
    /// Mixture clustering of the latent means with per-cluster statistics.
    Cluster {
        #[arg(long)]
        k_max: Option<usize>,
        #[arg(long)]
        n_init: Option<usize>,
    },
    /// Consensus clustering over random half-samples.
    Consensus {
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        n_perm: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        k_max: Option<usize>,
    },
    /// Repeated cross-validation of the three modelling approaches.
    Cv {
        #[arg(long, value_delimiter = ',')]
        approaches: Option<Vec<u8>>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Matched quadrature and sampling fits.
    Ablate {
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Write a synthetic dataset and its schema.
    Simulate {
        #[arg(long, conflicts_with = "binarize")]
        generative: bool,
        #[arg(long)]
        binarize: bool,
        #[arg(long)]
        n: Option<usize>,
        /// Column kinds for the generative sampler, e.g. gaussian,bernoulli,categorical:3.
        #[arg(long, value_delimiter = ',')]
        kinds: Option<Vec<String>>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Embed => "embed",
            Self::Eval { .. } => "eval",
            Self::Cluster { .. } => "cluster",
            Self::Consensus { .. } => "consensus",
            Self::Cv { .. } => "cv",
            Self::Ablate { .. } => "ablate",
            Self::Simulate { .. } => "simulate",
        }
    }

    /// Command-specific flags folded into the configuration.
    fn apply(&self, cfg: &mut RunConfig) {
        match *self {
            Self::Eval { ref q_candidates, runs_per_q } => {
                if let Some(q) = q_candidates {
                    cfg.eval.q_candidates = q.clone();
                }
                set(&mut cfg.eval.runs_per_q, runs_per_q);
            }
            Self::Cluster { k_max, n_init } => {
                set(&mut cfg.cluster.k_max, k_max);
                set(&mut cfg.cluster.n_init, n_init);
            }
            Self::Consensus { reps, n_perm, alpha, k_max } => {
                set(&mut cfg.consensus.reps, reps);
                set(&mut cfg.consensus.n_perm, n_perm);
                set(&mut cfg.consensus.alpha, alpha);
                set(&mut cfg.cluster.k_max, k_max);
            }
            Self::Cv { ref approaches, reps, folds } => {
                if let Some(a) = approaches {
                    cfg.cv.approaches = a.clone();
                }
                set(&mut cfg.cv.reps, reps);
                set(&mut cfg.cv.folds, folds);
            }
            Self::Ablate { reps } => set(&mut cfg.ablate.reps, reps),
            Self::Simulate { generative, binarize, n, ref kinds } => {
                if generative {
                    cfg.simulate.mode = config::SimulateMode::Generative;
                }
                if binarize {
                    cfg.simulate.mode = config::SimulateMode::Binarize;
                }
                set(&mut cfg.simulate.n, n);
                if let Some(k) = kinds {
                    cfg.simulate.kinds = k.clone();
                }
            }
            Self::Train | Self::Embed => {}
        }
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            latent_dim: self.latent_dim,
            inducing: self.inducing,
            quad_order: self.quad_order,
            estimator: self.estimator.map(|e| match e {
                EstimatorArg::Quadrature => Estimator::Quadrature,
                EstimatorArg::Sampling => Estimator::Sampling,
            }),
            eta: self.eta,
            epochs: self.epochs,
            batch: self.batch,
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.common.config.as_deref())?;
    cfg.apply(&cli.common.overrides());
    cli.command.apply(&mut cfg);
    cfg.validate()?;
    let mut out = Outputs::new(cli.common.out_dir.clone());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.common.jobs.unwrap_or(0))
        .build()
        .map_err(|e| usage(format!("cannot start {} worker threads: {e}", cli.common.jobs.unwrap_or(0))))?;
    let name = cli.command.name();
    let result = pool.install(|| commands::dispatch(name, &cli.common, &cfg, &mut out));
    if let Err(e) = &result {
        if out.is_empty() {
            return result;
        }
        out.manifest(name, &cfg, commands::inputs(&cli.common), Some(format!("{e:#}")))?;
    } else {
        out.manifest(name, &cfg, commands::inputs(&cli.common), None)?;
    }
    result
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { error::EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
