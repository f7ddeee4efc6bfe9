//! The evaluation protocol: mixture clustering, consensus robustness,
//! cluster statistics, and cross-validated model comparison.

pub mod consensus;
pub mod cv;
pub mod gmm;
pub mod stats;

pub use consensus::{consensus, permutation_thresholds, ConsensusConfig, ConsensusReport};
pub use cv::{
    estimator_ablation, fold_partition, repeated_cv, select_latent_dim, AblationConfig, AblationReport, Approach, CvConfig,
    CvReport, LatentDimSelection, Scope,
};
pub use gmm::{gmm_fit, label_agreement, ClusterResult, GmmConfig};
pub use stats::{cluster_stats, ColumnStat};
