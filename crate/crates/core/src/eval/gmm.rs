//! Full-covariance Gaussian mixtures fitted by EM, with the number of
//! components chosen by BIC and small clusters relabelled as outliers.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{input_err, numerical_err, Result};
use crate::linalg::{cholesky, CholFactor, Mat};
use crate::seed::rng_for;
use crate::special::log_sum_exp;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmConfig {
    pub k_max: usize,
    pub n_init: usize,
    pub max_iter: usize,
    /// Stop when the log-likelihood gains less than `tol·max(1, |ll|)`.
    pub tol: f64,
    /// Added to a covariance that is not positive definite.
    pub reg_covar: f64,
    /// Clusters holding less than this fraction of points become outliers.
    pub min_cluster_frac: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self { k_max: 20, n_init: 10, max_iter: 500, tol: 1e-10, reg_covar: 1e-6, min_cluster_frac: 0.05 }
    }
}

#[derive(Clone, Debug)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub means: Mat<f64>,
    pub chols: Vec<CholFactor<f64>>,
}

impl GaussianMixture {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    /// Per-point log joint `ln w_k + ln N(x | μ_k, Σ_k)`.
    pub fn log_joint(&self, x: &Mat<f64>) -> Mat<f64> {
        let (n, q) = x.shape();
        let k = self.n_components();
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        let mut out = Mat::zeros(n, k);
        let mut r = vec![0.0; q];
        for c in 0..k {
            let base = self.weights[c].ln() - 0.5 * (q as f64 * ln2pi + self.chols[c].log_det());
            for i in 0..n {
                for (j, rj) in r.iter_mut().enumerate() {
                    *rj = x[(i, j)] - self.means[(c, j)];
                }
                self.chols[c].forward_sub(&mut r);
                out[(i, c)] = base - 0.5 * r.iter().map(|v| v * v).sum::<f64>();
            }
        }
        out
    }

    /// Normalised responsibilities and the total log-likelihood.
    pub fn responsibilities(&self, x: &Mat<f64>) -> (Mat<f64>, f64) {
        let mut lj = self.log_joint(x);
        let mut ll = 0.0;
        for i in 0..x.rows() {
            let row = lj.row_mut(i);
            let z = log_sum_exp(row);
            ll += z;
            row.iter_mut().for_each(|v| *v = (*v - z).exp());
        }
        (lj, ll)
    }

    /// Free parameters of a `K`-component full-covariance mixture in `Q` dimensions.
    pub fn n_free_params(k: usize, q: usize) -> usize {
        (k - 1) + k * q + k * q * (q + 1) / 2
    }
}

/// One EM run from a seeded k-means++ start.
#[derive(Clone, Debug)]
pub struct EmFit {
    pub mixture: GaussianMixture,
    pub log_likelihood: f64,
    /// Log-likelihood after every E-step.
    pub history: Vec<f64>,
}

fn m_step(x: &Mat<f64>, resp: &Mat<f64>, reg: f64) -> Result<GaussianMixture> {
    let (n, q) = x.shape();
    let k = resp.cols();
    let mut weights = vec![0.0; k];
    let mut means = Mat::zeros(k, q);
    let mut chols = Vec::with_capacity(k);
    for c in 0..k {
        let nk: f64 = (0..n).map(|i| resp[(i, c)]).sum();
        if !(nk > 1e-10) {
            return numerical_err(format!("mixture component {c} is empty"));
        }
        weights[c] = nk / n as f64;
        for i in 0..n {
            for j in 0..q {
                means[(c, j)] += resp[(i, c)] * x[(i, j)];
            }
        }
        for j in 0..q {
            means[(c, j)] /= nk;
        }
        let mut cov = Mat::zeros(q, q);
        for i in 0..n {
            let r = resp[(i, c)];
            for a in 0..q {
                let da = x[(i, a)] - means[(c, a)];
                for b in 0..=a {
                    cov[(a, b)] += r * da * (x[(i, b)] - means[(c, b)]);
                }
            }
        }
        for a in 0..q {
            for b in 0..=a {
                cov[(a, b)] /= nk;
                cov[(b, a)] = cov[(a, b)];
            }
        }
        let chol = match cholesky(&cov) {
            Ok(f) => f,
            Err(_) => {
                cov.add_diag(reg);
                cholesky(&cov)?
            }
        };
        chols.push(chol);
    }
    Ok(GaussianMixture { weights, means, chols })
}

fn kmeans_pp(x: &Mat<f64>, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let n = x.rows();
    let d2 = |i: usize, j: usize| x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let mut centres = vec![rng.random_range(0..n)];
    let mut best: Vec<f64> = (0..n).map(|i| d2(i, centres[0])).collect();
    while centres.len() < k {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &b) in best.iter().enumerate() {
                if u < b {
                    chosen = i;
                    break;
                }
                u -= b;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centres.push(pick);
        for (i, b) in best.iter_mut().enumerate() {
            *b = b.min(d2(i, pick));
        }
    }
    centres
}

pub fn em_fit(x: &Mat<f64>, k: usize, cfg: &GmmConfig, rng: &mut impl Rng) -> Result<EmFit> {
    let n = x.rows();
    if k == 0 || k > n {
        return input_err(format!("cannot fit {k} components to {n} points"));
    }
    let centres = kmeans_pp(x, k, rng);
    let d2 = |i: usize, c: usize| x.row(i).iter().zip(x.row(centres[c])).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let mut resp = Mat::zeros(n, k);
    for i in 0..n {
        let nearest = (0..k).min_by(|&a, &b| d2(i, a).total_cmp(&d2(i, b))).unwrap_or(0);
        resp[(i, nearest)] = 1.0;
    }
    let mut mixture = m_step(x, &resp, cfg.reg_covar)?;
    let mut history = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..cfg.max_iter {
        let (r, ll) = mixture.responsibilities(x);
        if !ll.is_finite() {
            return numerical_err("mixture log-likelihood is not finite");
        }
        history.push(ll);
        if ll - prev < cfg.tol * ll.abs().max(1.0) {
            break;
        }
        prev = ll;
        mixture = m_step(x, &r, cfg.reg_covar)?;
    }
    let log_likelihood = *history.last().expect("at least one E-step");
    Ok(EmFit { mixture, log_likelihood, history })
}

#[derive(Clone, Debug, Serialize)]
pub struct ClusterResult {
    /// `0` marks outliers; retained clusters are numbered from 1 by size.
    pub labels: Vec<usize>,
    pub n_clusters: usize,
    /// `N×K` over all components of the selected mixture.
    pub responsibilities: Mat<f64>,
    /// BIC of the selected mixture (lower is better).
    pub model_score: f64,
    pub n_components: usize,
    /// `(K, BIC)` for every K that produced a fit.
    pub scores: Vec<(usize, f64)>,
    pub criterion: String,
}

/// Fits `1..=k_max` components, `n_init` restarts each, and keeps the
/// lowest-BIC mixture.
pub fn gmm_fit(latents: &Mat<f64>, k_max: usize, n_init: usize, seed: u64) -> Result<ClusterResult> {
    gmm_fit_with(latents, &GmmConfig { k_max, n_init, ..Default::default() }, seed)
}

pub fn gmm_fit_with(latents: &Mat<f64>, cfg: &GmmConfig, seed: u64) -> Result<ClusterResult> {
    let (n, q) = latents.shape();
    if cfg.k_max == 0 || n <= cfg.k_max {
        return input_err(format!("gmm needs N > k_max ≥ 1 (N = {n}, k_max = {})", cfg.k_max));
    }
    if cfg.n_init == 0 {
        return input_err("gmm needs at least one initialisation");
    }
    if latents.as_slice().iter().any(|v| !v.is_finite()) {
        return input_err("gmm input contains non-finite values");
    }
    let tasks: Vec<(usize, usize)> = (1..=cfg.k_max).flat_map(|k| (0..cfg.n_init).map(move |i| (k, i))).collect();
    let fits: Vec<Option<EmFit>> = tasks
        .par_iter()
        .map(|&(k, i)| {
            let mut rng = rng_for(seed, "gmm", (k * 100_000 + i) as u64);
            em_fit(latents, k, cfg, &mut rng).ok()
        })
        .collect();
    let mut scores = Vec::new();
    let mut best: Option<(f64, EmFit)> = None;
    for k in 1..=cfg.k_max {
        let restarts = &fits[(k - 1) * cfg.n_init..k * cfg.n_init];
        let Some(fit) = restarts.iter().flatten().max_by(|a, b| a.log_likelihood.total_cmp(&b.log_likelihood)) else {
            continue;
        };
        let bic = -2.0 * fit.log_likelihood + GaussianMixture::n_free_params(k, q) as f64 * (n as f64).ln();
        scores.push((k, bic));
        if best.as_ref().is_none_or(|(b, _)| bic < *b) {
            best = Some((bic, fit.clone()));
        }
    }
    let Some((bic, fit)) = best else {
        return numerical_err("every mixture restart failed");
    };
    let (resp, _) = fit.mixture.responsibilities(latents);
    let k = fit.mixture.n_components();
    let hard: Vec<usize> = (0..n)
        .map(|i| (0..k).max_by(|&a, &b| resp[(i, a)].total_cmp(&resp[(i, b)]).then(b.cmp(&a))).unwrap_or(0))
        .collect();
    let mut sizes = vec![0usize; k];
    hard.iter().for_each(|&c| sizes[c] += 1);
    let mut kept: Vec<usize> = (0..k).filter(|&c| (sizes[c] as f64) >= cfg.min_cluster_frac * n as f64).collect();
    kept.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    let mut relabel = vec![0usize; k];
    for (rank, &c) in kept.iter().enumerate() {
        relabel[c] = rank + 1;
    }
    Ok(ClusterResult {
        labels: hard.iter().map(|&c| relabel[c]).collect(),
        n_clusters: kept.len(),
        responsibilities: resp,
        model_score: bic,
        n_components: k,
        scores,
        criterion: "bic".into(),
    })
}

/// Fraction of points on which two labelings agree under the best
/// one-to-one matching of labels (exhaustive for up to 8 labels, greedy beyond).
pub fn label_agreement(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 1.0;
    }
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0usize; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let matched = if ka <= 8 && kb <= 8 { best_matching(&table, 0, &mut vec![false; kb]) } else { greedy_matching(&table) };
    matched as f64 / a.len() as f64
}

fn best_matching(t: &[Vec<usize>], row: usize, used: &mut [bool]) -> usize {
    if row == t.len() {
        return 0;
    }
    let mut best = best_matching(t, row + 1, used);
    for c in 0..used.len() {
        if !used[c] {
            used[c] = true;
            best = best.max(t[row][c] + best_matching(t, row + 1, used));
            used[c] = false;
        }
    }
    best
}

fn greedy_matching(t: &[Vec<usize>]) -> usize {
    let mut cells: Vec<(usize, usize, usize)> =
        t.iter().enumerate().flat_map(|(r, row)| row.iter().enumerate().map(move |(c, &v)| (v, r, c))).collect();
    cells.sort_by(|a, b| b.cmp(a));
    let (mut ur, mut uc) = (vec![false; t.len()], vec![false; t.first().map_or(0, |r| r.len())]);
    let mut total = 0;
    for (v, r, c) in cells {
        if !ur[r] && !uc[c] {
            ur[r] = true;
            uc[c] = true;
            total += v;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn blobs(n_per: usize, centres: &[(f64, f64)], seed: u64) -> (Mat<f64>, Vec<usize>) {
        let mut rng = rng_for(seed, "blobs", 0);
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for (c, &(cx, cy)) in centres.iter().enumerate() {
            for _ in 0..n_per {
                rows.push(vec![cx + rng.sample::<f64, _>(StandardNormal), cy + rng.sample::<f64, _>(StandardNormal)]);
                truth.push(c);
            }
        }
        (Mat::from_rows(&rows).unwrap(), truth)
    }

    #[test]
    fn finds_two_separated_blobs() {
        let (x, truth) = blobs(100, &[(-5.0, -5.0), (5.0, 5.0)], 1);
        let res = gmm_fit(&x, 5, 10, 3).unwrap();
        assert_eq!(res.n_components, 2);
        assert_eq!(res.n_clusters, 2);
        assert!(label_agreement(&res.labels, &truth) >= 0.99);
        for i in 0..x.rows() {
            let s: f64 = res.responsibilities.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_points_form_one_cluster() {
        let x = Mat::from_fn(50, 2, |_, j| 0.5 + j as f64);
        let res = gmm_fit(&x, 3, 4, 0).unwrap();
        assert_eq!(res.n_components, 1);
        assert!(res.labels.iter().all(|&l| l == 1));
    }

    #[test]
    fn em_log_likelihood_never_decreases() {
        let (x, _) = blobs(60, &[(0.0, 0.0), (3.0, 0.0), (0.0, 4.0)], 2);
        for k in 1..=4 {
            let fit = em_fit(&x, k, &GmmConfig::default(), &mut rng_for(5, "em", k as u64)).unwrap();
            for w in fit.history.windows(2) {
                assert!(w[1] >= w[0] - 1e-8, "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn small_clusters_become_outliers() {
        let (mut x, _) = blobs(100, &[(-6.0, 0.0), (6.0, 0.0)], 4);
        let mut rows: Vec<Vec<f64>> = (0..x.rows()).map(|i| x.row(i).to_vec()).collect();
        for i in 0..6 {
            rows.push(vec![0.0 + 0.01 * i as f64, 30.0]);
        }
        x = Mat::from_rows(&rows).unwrap();
        let res = gmm_fit(&x, 4, 6, 1).unwrap();
        assert!(res.n_components >= 3);
        assert_eq!(res.n_clusters, 2);
        assert!(res.labels[200..].iter().all(|&l| l == 0));
        assert_eq!(res.labels.iter().filter(|&&l| l == 0).count(), 6);
    }

    #[test]
    fn seeded_fit_is_deterministic_and_validated() {
        let (x, _) = blobs(40, &[(0.0, 0.0), (4.0, 4.0)], 6);
        assert_eq!(gmm_fit(&x, 3, 3, 8).unwrap().labels, gmm_fit(&x, 3, 3, 8).unwrap().labels);
        assert!(gmm_fit(&x, 0, 3, 8).is_err());
        assert!(gmm_fit(&Mat::zeros(3, 2), 3, 3, 8).is_err());
    }

    #[test]
    fn agreement_is_permutation_invariant() {
        assert_eq!(label_agreement(&[0, 0, 1, 1, 2], &[2, 2, 0, 0, 1]), 1.0);
        assert_eq!(label_agreement(&[0, 0, 1, 1], &[0, 1, 0, 1]), 0.5);
    }
}
