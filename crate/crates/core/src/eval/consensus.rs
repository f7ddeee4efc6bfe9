//! Consensus clustering over random subsamples and permutation thresholds
//! for the per-cluster consensus index.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{input_err, Result};
use crate::linalg::Mat;
use crate::seed::{rng_for, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsensusConfig {
    pub reps: usize,
    pub subsample_frac: f64,
    pub n_perm: usize,
    pub alpha: f64,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        Self { reps: 100, subsample_frac: 0.5, n_perm: 1000, alpha: 0.05 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ConsensusReport {
    /// Co-clustered over co-sampled counts; `NaN` where a pair was never
    /// sampled together.
    pub matrix: Mat<f64>,
    pub co_sample_counts: Mat<f64>,
    /// Mean defined consensus over pairs inside each reference cluster
    /// `1..=K`; `NaN` when a cluster has no defined pair.
    pub per_cluster_index: Vec<f64>,
    pub thresholds: Vec<f64>,
}

impl ConsensusReport {
    pub fn significant(&self) -> Vec<bool> {
        self.per_cluster_index.iter().zip(&self.thresholds).map(|(i, t)| i > t).collect()
    }
}

/// Runs `run(subsample, rng)` on `reps` random subsamples of `0..n` and
/// accumulates how often each pair lands in the same cluster. `run` returns
/// one label per subsampled index; label `0` (outlier) never co-clusters.
/// Thresholds come from [`permutation_thresholds`].
pub fn consensus<F>(n: usize, run: F, reference_labels: &[usize], cfg: &ConsensusConfig, seed: u64) -> Result<ConsensusReport>
where
    F: Fn(&[usize], &mut Rng) -> Result<Vec<usize>> + Sync,
{
    if cfg.reps == 0 {
        return input_err("consensus needs at least one repetition");
    }
    if !(cfg.subsample_frac > 0.0 && cfg.subsample_frac < 1.0) {
        return input_err("subsample_frac must lie in (0, 1)");
    }
    if reference_labels.len() != n {
        return input_err(format!("{} reference labels for {n} samples", reference_labels.len()));
    }
    let size = ((cfg.subsample_frac * n as f64).round() as usize).clamp(1, n);
    let runs: Vec<(Vec<usize>, Vec<usize>)> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_for(seed, "consensus", r as u64);
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            idx.truncate(size);
            idx.sort_unstable();
            let labels = run(&idx, &mut rng)?;
            if labels.len() != idx.len() {
                return input_err(format!("clustering returned {} labels for {} samples", labels.len(), idx.len()));
            }
            Ok((idx, labels))
        })
        .collect::<Result<_>>()?;
    let mut together: Mat<f64> = Mat::zeros(n, n);
    let mut sampled: Mat<f64> = Mat::zeros(n, n);
    for (idx, labels) in &runs {
        for a in 0..idx.len() {
            for b in 0..a {
                let (i, j) = (idx[a], idx[b]);
                sampled[(i, j)] += 1.0;
                if labels[a] != 0 && labels[a] == labels[b] {
                    together[(i, j)] += 1.0;
                }
            }
        }
    }
    let mut matrix = Mat::from_fn(n, n, |_, _| f64::NAN);
    let mut counts = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let c = sampled[(i, j)];
            counts[(i, j)] = c;
            counts[(j, i)] = c;
            if c > 0.0 {
                let v = together[(i, j)] / c;
                matrix[(i, j)] = v;
                matrix[(j, i)] = v;
            }
        }
    }
    let per_cluster_index = cluster_indices(&matrix, reference_labels);
    let thresholds = permutation_thresholds(&matrix, reference_labels, cfg.n_perm, cfg.alpha, seed)?;
    Ok(ConsensusReport { matrix, co_sample_counts: counts, per_cluster_index, thresholds })
}

/// Mean defined off-diagonal consensus within each cluster `1..=K`.
pub fn cluster_indices(matrix: &Mat<f64>, labels: &[usize]) -> Vec<f64> {
    let k = labels.iter().copied().max().unwrap_or(0);
    let mut sum = vec![0.0; k + 1];
    let mut cnt = vec![0usize; k + 1];
    for i in 0..labels.len() {
        let li = labels[i];
        if li == 0 {
            continue;
        }
        for j in 0..i {
            let v = matrix[(i, j)];
            if labels[j] == li && !v.is_nan() {
                sum[li] += v;
                cnt[li] += 1;
            }
        }
    }
    (1..=k).map(|c| if cnt[c] > 0 { sum[c] / cnt[c] as f64 } else { f64::NAN }).collect()
}

/// Linear-interpolation quantile of an ascending sample.
pub fn quantile(sorted: &[f64], level: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = level.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-cluster `(1 − alpha/K)` quantiles of the cluster index under random
/// relabelings that keep cluster sizes (outliers stay outliers).
pub fn permutation_thresholds(matrix: &Mat<f64>, reference_labels: &[usize], n_perm: usize, alpha: f64, seed: u64) -> Result<Vec<f64>> {
    if n_perm < 100 {
        return input_err("permutation thresholds need at least 100 permutations");
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return input_err("alpha must lie in (0, 1)");
    }
    let k = reference_labels.iter().copied().max().unwrap_or(0);
    if k == 0 {
        return Ok(Vec::new());
    }
    let level = bonferroni_level(alpha, k);
    let members: Vec<usize> = (0..reference_labels.len()).filter(|&i| reference_labels[i] != 0).collect();
    let perms: Vec<Vec<f64>> = (0..n_perm)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_for(seed, "permutation", r as u64);
            let mut shuffled: Vec<usize> = members.iter().map(|&i| reference_labels[i]).collect();
            shuffled.shuffle(&mut rng);
            let mut labels = vec![0usize; reference_labels.len()];
            for (&i, &l) in members.iter().zip(&shuffled) {
                labels[i] = l;
            }
            let mut idx = cluster_indices(matrix, &labels);
            idx.resize(k, f64::NAN);
            idx
        })
        .collect();
    Ok((0..k)
        .map(|c| {
            let mut v: Vec<f64> = perms.iter().map(|p| p[c]).filter(|x| !x.is_nan()).collect();
            v.sort_by(f64::total_cmp);
            quantile(&v, level)
        })
        .collect())
}

/// Per-cluster quantile level after Bonferroni correction over `k` clusters.
pub fn bonferroni_level(alpha: f64, k: usize) -> f64 {
    1.0 - alpha / k as f64
}
