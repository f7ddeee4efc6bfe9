//! Per-cluster, per-column characterisation: corrected log odds ratios for
//! binary columns and Welch t-statistics elsewhere.

use serde::Serialize;

use crate::data::Dataset;
use crate::error::{input_err, Result};
use crate::likelihood::LikelihoodKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatKind {
    LogOddsRatio,
    WelchT,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ColumnStat {
    pub cluster: usize,
    pub column: String,
    pub kind: StatKind,
    /// `None` when a side has fewer than two observed entries, the column
    /// is categorical, or the statistic is degenerate.
    pub value: Option<f64>,
    pub n_cluster: usize,
    pub n_rest: usize,
    pub note: Option<String>,
}

/// `ln((a+½)(d+½) / ((b+½)(c+½)))` for cluster successes `a`, failures `b`
/// and rest successes `c`, failures `d`.
pub fn log_odds_ratio(a: usize, b: usize, c: usize, d: usize) -> f64 {
    let h = |x: usize| x as f64 + 0.5;
    (h(a) * h(d) / (h(b) * h(c))).ln()
}

/// Welch's t for `x` against `y`; `None` if either side has fewer than two
/// values or both variances vanish with distinct means.
pub fn welch_t(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || y.len() < 2 {
        return None;
    }
    let mv = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let s2 = v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (v.len() - 1) as f64;
        (m, s2)
    };
    let ((mx, vx), (my, vy)) = (mv(x), mv(y));
    let diff = mx - my;
    let se = (vx / x.len() as f64 + vy / y.len() as f64).sqrt();
    if diff == 0.0 {
        Some(0.0)
    } else if se > 0.0 {
        Some(diff / se)
    } else {
        None
    }
}

/// Statistics of each cluster `1..=K` against every other row (outliers
/// included in the rest), for every column.
pub fn cluster_stats(data: &Dataset<f64>, labels: &[usize]) -> Result<Vec<ColumnStat>> {
    if labels.len() != data.n() {
        return input_err(format!("{} labels for {} rows", labels.len(), data.n()));
    }
    let k = labels.iter().copied().max().unwrap_or(0);
    let mut out = Vec::new();
    for cl in 1..=k {
        for (d, col) in data.schema().columns.iter().enumerate() {
            let (mut inside, mut rest) = (Vec::new(), Vec::new());
            for (i, &l) in labels.iter().enumerate() {
                if data.observed(i, d) {
                    if l == cl { &mut inside } else { &mut rest }.push(data.value(i, d));
                }
            }
            let (n_cluster, n_rest) = (inside.len(), rest.len());
            let few = n_cluster < 2 || n_rest < 2;
            let (kind, value, note) = match col.kind {
                LikelihoodKind::Bernoulli => {
                    let ones = |v: &[f64]| v.iter().filter(|&&y| y == 1.0).count();
                    let (a, c) = (ones(&inside), ones(&rest));
                    let value = (!few).then(|| log_odds_ratio(a, n_cluster - a, c, n_rest - c));
                    (StatKind::LogOddsRatio, value, few.then(|| "fewer than two observed entries on a side".to_string()))
                }
                LikelihoodKind::Categorical(_) => (StatKind::WelchT, None, Some("categorical column".to_string())),
                _ => {
                    let value = welch_t(&inside, &rest);
                    let note = if few {
                        Some("fewer than two observed entries on a side".to_string())
                    } else if value.is_none() {
                        Some("zero variance on both sides".to_string())
                    } else {
                        None
                    };
                    (StatKind::WelchT, value, note)
                }
            };
            out.push(ColumnStat { cluster: cl, column: col.name.clone(), kind, value, n_cluster, n_rest, note });
        }
    }
    Ok(out)
}
