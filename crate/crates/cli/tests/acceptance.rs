//! Acceptance checks. Prints one PASS/FAIL line per criterion and a
//! summary. With `ACCEPTANCE_STRICT=1` the target exits non-zero when any
//! criterion fails. Pass criterion numbers as arguments to run a subset,
//! e.g. `cargo test --test acceptance -- 1 3`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use hetgplvm::data::{Dataset, Schema};
use hetgplvm::eval::consensus::{cluster_indices, consensus, permutation_thresholds, ConsensusConfig};
use hetgplvm::eval::cv::{
    estimator_ablation, fold_partition, repeated_cv, score_params, select_latent_dim, AblationConfig, Approach, CvConfig,
    Scope,
};
use hetgplvm::eval::gmm::gmm_fit;
use hetgplvm::grad::{finite_diff_check, value_and_grad, ElboObjective};
use hetgplvm::kernel::{gram, KernelHypers};
use hetgplvm::likelihood::{Likelihood, LikelihoodKind, SharedLikelihoodParams};
use hetgplvm::linalg::{cholesky, jittered_cholesky, CholFactor, Mat};
use hetgplvm::model::{Model, ModelConfig, ParamVector};
use hetgplvm::objective::{Estimator, Noise, ObjectiveConfig};
use hetgplvm::quadrature::{expected_loglik, gh_rule};
use hetgplvm::seed::{rng_for, Rng};
use hetgplvm::train::{fit, TrainConfig};
use hetgplvm::variational::{kl_u, kl_x_entry, InducingChannel};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

// Pinned tolerances and budgets.
const MONOMIAL_REL_TOL: f64 = 1e-9;
const GAUSSIAN_CLOSED_FORM_TOL: f64 = 1e-12;
const FD_REL_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;
const KL_X_TOL: f64 = 1e-6;
const KL_U_SE: f64 = 3.0;
const MC_SAMPLES: usize = 1_000_000;
const NONNEG_INPUTS: usize = 10_000;
const IQR_FACTOR: f64 = 2.0;
const SPEED_FACTOR: f64 = 0.75;
const CV_MIN_POSITIVE: usize = 8;
const SELECT_MIN_HITS: usize = 3;
const ALPHA: f64 = 0.05;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

type Check = fn() -> Outcome;

fn main() -> ExitCode {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, Option<Duration>, Check); 10] = [
        (1, "quadrature correctness", Some(Duration::from_secs(1)), quadrature_correctness),
        (2, "gradient gate", Some(Duration::from_secs(120)), gradient_gate),
        (3, "KL oracles", Some(Duration::from_secs(60)), kl_oracles),
        (4, "estimator agreement", None, estimator_agreement),
        (5, "ablation speed", None, ablation_speed),
        (6, "composite-likelihood advantage", Some(Duration::from_secs(1800)), composite_advantage),
        (7, "generative recovery", None, generative_recovery),
        (8, "consensus protocol", Some(Duration::from_secs(1200)), consensus_protocol),
        (9, "eta centring", None, eta_centring),
        (10, "determinism", None, determinism),
    ];
    let (mut failed, mut ran) = (0, 0);
    for (id, name, budget, check) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let mut o = check();
        let secs = start.elapsed();
        if let Some(b) = budget {
            if secs > b {
                o.pass = false;
                o.detail += &format!("; over the {}s budget", b.as_secs());
            }
        }
        ran += 1;
        failed += usize::from(!o.pass);
        println!("criterion {id} ({name}): {} [{:.1}s] {}", if o.pass { "PASS" } else { "FAIL" }, secs.as_secs_f64(), o.detail);
    }
    println!("acceptance: {failed} of {ran} criteria failed");
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failed > 0 && strict {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

// ---------- shared setup ----------

fn normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn kinds(spec: &[&str]) -> Vec<LikelihoodKind> {
    spec.iter().map(|k| k.parse().unwrap()).collect()
}

fn mixed_kinds() -> Vec<LikelihoodKind> {
    let mut k = vec![LikelihoodKind::Gaussian; 6];
    k.extend(vec![LikelihoodKind::Bernoulli; 6]);
    k
}

/// Draws from the generative model with unit kernel, `σ² = 0.1` and
/// `ν = 10`.
fn generate(n: usize, q: usize, kinds: &[LikelihoodKind], seed: u64) -> hetgplvm::data::GenerativeSample {
    let schema = Schema::from_kinds(kinds).unwrap();
    let shared = SharedLikelihoodParams::constant(kinds, 0.1, 10.0);
    hetgplvm::data::sample_generative(n, &schema, &KernelHypers::unit(q), &shared, 1.0, seed).unwrap()
}

/// The dataset of criteria 4 to 6: N = 300, 6 gaussian and 6 bernoulli columns.
fn mixed_dataset(seed: u64) -> Dataset<f64> {
    generate(300, 2, &mixed_kinds(), seed).data
}

fn model_cfg() -> ModelConfig {
    ModelConfig { latent_dim: 2, num_inducing: 16, ..Default::default() }
}

fn train_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        learning_rate: 0.01,
        objective: ObjectiveConfig { minibatch_size: 64, n_f_samples: 8, ..Default::default() },
        ..Default::default()
    }
}

/// Training budget for every trained criterion; long enough for the ELBO to settle.
const EPOCHS: usize = 2000;

fn median(v: &[f64]) -> f64 {
    quantile(v, 0.5)
}

fn quantile(v: &[f64], p: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = p * (s.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

// ---------- 1 ----------

fn quadrature_correctness() -> Outcome {
    let mut worst_moment: f64 = 0.0;
    for j in 1..=10 {
        let rule = gh_rule::<f64>(j).unwrap();
        for k in 0..2 * j as i32 {
            let exact = if k % 2 == 1 { 0.0 } else { statrs::function::gamma::gamma((k as f64 + 1.0) / 2.0) };
            let approx = rule.integrate(|t| t.powi(k));
            worst_moment = worst_moment.max((approx - exact).abs() / exact.abs().max(1.0));
        }
    }
    let rule = gh_rule::<f64>(3).unwrap();
    let mut rng = rng_for(1, "acceptance-quadrature", 0);
    let mut worst_gauss: f64 = 0.0;
    for _ in 0..1000 {
        let (y, a) = (3.0 * normal(&mut rng), 3.0 * normal(&mut rng));
        let b: f64 = rng.random_range(0.0..2.0);
        let var: f64 = rng.random_range(0.05..3.0);
        let closed = -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (y - a).powi(2) / (2.0 * var) - b * b / (2.0 * var);
        let quad = expected_loglik(&Likelihood::Gaussian { variance: var }, y, a, b, &rule).unwrap();
        worst_gauss = worst_gauss.max((quad - closed).abs() / closed.abs().max(1.0));
    }
    outcome(
        worst_moment <= MONOMIAL_REL_TOL && worst_gauss <= GAUSSIAN_CLOSED_FORM_TOL,
        format!("worst monomial rel err {worst_moment:.2e} (tol {MONOMIAL_REL_TOL:e}), gaussian J=3 vs closed form {worst_gauss:.2e} (tol {GAUSSIAN_CLOSED_FORM_TOL:e})"),
    )
}

// ---------- 2 ----------

fn random_dataset(n: usize, kinds: &[LikelihoodKind], rng: &mut Rng) -> Dataset<f64> {
    let values = Mat::from_fn(n, kinds.len(), |_, j| match kinds[j] {
        LikelihoodKind::Gaussian => normal(rng),
        LikelihoodKind::Bernoulli => rng.random_range(0..2) as f64,
        LikelihoodKind::Beta => rng.random_range(0.05..0.95),
        LikelihoodKind::Poisson => rng.random_range(0..6) as f64,
        LikelihoodKind::Categorical(c) => rng.random_range(1..=c) as f64,
    });
    Dataset::fully_observed(values, Schema::from_kinds(kinds).unwrap()).unwrap()
}

fn gradient_gate() -> Outcome {
    let ks = kinds(&["gaussian", "bernoulli", "beta"]);
    let cfg = ObjectiveConfig::default();
    let mut worst: f64 = 0.0;
    let mut worst_seed = 0;
    for seed in 0..20 {
        let mut rng = rng_for(seed, "acceptance-gradient", 0);
        let data = random_dataset(6, &ks, &mut rng);
        let model =
            Model::new(data.schema().clone(), ModelConfig { latent_dim: 2, num_inducing: 2, hidden_width: 4, ..Default::default() }).unwrap();
        let mut params: ParamVector<f64> = model.init_vector(seed).unwrap();
        for v in params.flat.iter_mut() {
            *v += 0.3 * normal(&mut rng);
        }
        let rows: Vec<usize> = (0..6).collect();
        let noise = Noise::draw(&model, 6, &cfg, &mut rng);
        let obj = ElboObjective { model: &model, data: &data, rows: &rows, cfg: &cfg, noise: &noise };
        let (_, g) = value_and_grad(&obj, &params).unwrap();
        let rep = finite_diff_check(&obj, &params.flat, &g, FD_STEP, Some(&model.layout)).unwrap();
        if rep.max_rel_error > worst {
            worst = rep.max_rel_error;
            worst_seed = seed;
        }
    }
    outcome(worst < FD_REL_TOL, format!("worst relative error {worst:.2e} at seed {worst_seed} over 20 seeds (tol {FD_REL_TOL:e})"))
}

// ---------- 3 ----------

/// `∫ q log(q/p)` for `q = N(m, s²)`, `p = N(0, v)` by composite Simpson
/// over `m ± 12s`.
fn kl_x_numeric(m: f64, s: f64, v: f64) -> f64 {
    let intervals = 20_000;
    let (lo, hi) = (m - 12.0 * s, m + 12.0 * s);
    let h = (hi - lo) / intervals as f64;
    let f = |x: f64| {
        let lq = -0.5 * (2.0 * std::f64::consts::PI * s * s).ln() - (x - m).powi(2) / (2.0 * s * s);
        let lp = -0.5 * (2.0 * std::f64::consts::PI * v).ln() - x * x / (2.0 * v);
        lq.exp() * (lq - lp)
    };
    let mut acc = f(lo) + f(hi);
    for i in 1..intervals {
        acc += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

fn random_kl_u_instance(rng: &mut Rng) -> (InducingChannel<f64>, CholFactor<f64>) {
    let m = rng.random_range(1..=4);
    let q = rng.random_range(1..=3);
    let z = Mat::from_fn(m, q, |_, _| 1.5 * normal(rng));
    let h = KernelHypers::new(rng.random_range(0.3..2.0), (0..q).map(|_| rng.random_range(0.5..2.0)).collect()).unwrap();
    let mut k = gram(&z, &z, &h).unwrap();
    k.add_diag(0.05);
    let kmm = cholesky(&k).unwrap();
    let mut l = Mat::zeros(m, m);
    for i in 0..m {
        l[(i, i)] = rng.random_range(0.2..1.2);
        for j in 0..i {
            l[(i, j)] = 0.3 * normal(rng);
        }
    }
    let mu = (0..m).map(|_| normal(rng)).collect();
    (InducingChannel::new(mu, l).unwrap(), kmm)
}

/// Monte Carlo `E_q[log q(u) − log p(u)]` and its standard error.
fn kl_u_monte_carlo(ch: &InducingChannel<f64>, kmm: &CholFactor<f64>, samples: usize, rng: &mut Rng) -> (f64, f64) {
    let m = ch.m();
    let half_log_ratio = 0.5 * (kmm.log_det() - ch.log_det_sigma());
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    let mut eps = vec![0.0; m];
    for _ in 0..samples {
        eps.iter_mut().for_each(|e| *e = normal(rng));
        let mut u: Vec<f64> = (0..m).map(|i| ch.mu[i] + (0..=i).map(|j| ch.sigma_chol[(i, j)] * eps[j]).sum::<f64>()).collect();
        kmm.forward_sub(&mut u);
        let v = half_log_ratio - 0.5 * eps.iter().map(|e| e * e).sum::<f64>() + 0.5 * u.iter().map(|x| x * x).sum::<f64>();
        sum += v;
        sum_sq += v * v;
    }
    let n = samples as f64;
    let mean = sum / n;
    (mean, ((sum_sq / n - mean * mean) / n).sqrt())
}

fn kl_oracles() -> Outcome {
    let mut rng = rng_for(3, "acceptance-kl", 0);
    let mut worst_x: f64 = 0.0;
    for _ in 0..50 {
        let (m, s, v) = (2.0 * normal(&mut rng), rng.random_range(0.05..3.0), rng.random_range(0.2..4.0));
        worst_x = worst_x.max((kl_x_entry(m, s, v) - kl_x_numeric(m, s, v)).abs());
    }
    let mut worst_z: f64 = 0.0;
    for _ in 0..5 {
        let (ch, kmm) = random_kl_u_instance(&mut rng);
        let (mc, se) = kl_u_monte_carlo(&ch, &kmm, MC_SAMPLES, &mut rng);
        worst_z = worst_z.max((kl_u(&ch, &kmm).unwrap() - mc).abs() / se);
    }
    let mut negatives = 0;
    for _ in 0..NONNEG_INPUTS {
        let x = kl_x_entry(3.0 * normal(&mut rng), rng.random_range(1e-3..5.0), rng.random_range(1e-2..10.0));
        let (ch, kmm) = random_kl_u_instance(&mut rng);
        let u = kl_u(&ch, &kmm).unwrap();
        negatives += usize::from(x < 0.0) + usize::from(u < 0.0);
    }
    outcome(
        worst_x <= KL_X_TOL && worst_z <= KL_U_SE && negatives == 0,
        format!(
            "kl_x vs Simpson integration max abs err {worst_x:.2e} (tol {KL_X_TOL:e}); kl_u vs {MC_SAMPLES} draws max {worst_z:.2} SE (tol {KL_U_SE}); {negatives} negative values in {NONNEG_INPUTS} inputs each"
        ),
    )
}

// ---------- 4, 5 ----------

fn ablation() -> &'static hetgplvm::eval::cv::AblationReport {
    static REPORT: std::sync::OnceLock<hetgplvm::eval::cv::AblationReport> = std::sync::OnceLock::new();
    REPORT.get_or_init(|| {
        let cfg = AblationConfig { reps: 10, seed: 4, model: model_cfg(), train: train_cfg(EPOCHS) };
        estimator_ablation(&mixed_dataset(4), &cfg).unwrap()
    })
}

fn estimator_agreement() -> Outcome {
    let rep = ablation();
    let (quad, samp) = (rep.arm(Estimator::Quadrature), rep.arm(Estimator::Sampling));
    let diffs: Vec<f64> = quad.iter().zip(&samp).map(|(a, b)| a.heldout.mean.unwrap() - b.heldout.mean.unwrap()).collect();
    let (med, iqr) = (median(&diffs), quantile(&diffs, 0.75) - quantile(&diffs, 0.25));
    let q_med = median(&quad.iter().map(|r| r.heldout.mean.unwrap()).collect::<Vec<_>>());
    outcome(
        med.abs() <= IQR_FACTOR * iqr,
        format!("paired per-entry difference quadrature - sampling: median {med:.4}, IQR {iqr:.4} (gate |median| <= {IQR_FACTOR} IQR); quadrature median {q_med:.4}"),
    )
}

fn ablation_speed() -> Outcome {
    let rep = ablation();
    let secs = |e| median(&rep.arm(e).iter().map(|r| r.epoch_seconds).collect::<Vec<_>>());
    let (q, s) = (secs(Estimator::Quadrature), secs(Estimator::Sampling));
    outcome(q <= SPEED_FACTOR * s, format!("median epoch time quadrature {:.3} ms, sampling {:.3} ms, ratio {:.3} (gate {SPEED_FACTOR})", 1e3 * q, 1e3 * s, q / s))
}

// ---------- 6 ----------

fn composite_advantage() -> Outcome {
    let cfg = CvConfig { folds: 2, reps: 10, seed: 6, model: model_cfg(), train: train_cfg(EPOCHS) };
    let report = repeated_cv(&mixed_dataset(6), &[Approach::Composite, Approach::AllGaussian], &cfg).unwrap();
    let diffs = report.paired_differences(Approach::Composite, Approach::AllGaussian, Scope::Gaussian);
    let positive = diffs.iter().filter(|&&d| d > 0.0).count();
    outcome(
        positive >= CV_MIN_POSITIVE && diffs.len() == 10,
        format!("approach 2 - approach 3 on gaussian columns positive in {positive}/{} reps (gate {CV_MIN_POSITIVE}); median {:.4}", diffs.len(), median(&diffs)),
    )
}

// ---------- 7 ----------

fn generative_recovery() -> Outcome {
    let (mut picked, mut improved) = (Vec::new(), 0);
    for seed in 0..5u64 {
        let data = generate(400, 2, &mixed_kinds(), 70 + seed).data;
        let fold = fold_partition(data.n(), 2, seed, 0);
        let rows = |f: usize| (0..data.n()).filter(|&i| fold[i] == f).collect::<Vec<_>>();
        let (train, heldout) = (data.subset_rows(&rows(0)), data.subset_rows(&rows(1)));
        let tc = TrainConfig { seed, ..train_cfg(EPOCHS) };
        let sel = select_latent_dim(&train, &heldout, &[1, 2, 4], 2, &model_cfg(), &tc).unwrap();
        picked.push(sel.best_q);

        let model = Model::new(train.schema().clone(), model_cfg()).unwrap();
        let res = fit(&model, &train, &tc).unwrap();
        let init = model.init_vector(seed).unwrap();
        let before = score_params(&model, &init, &heldout, &tc, None, seed).unwrap().sum;
        let after = score_params(&model, &res.best_elbo_params, &heldout, &tc, None, seed).unwrap().sum;
        improved += usize::from(after > before);
    }
    let hits = picked.iter().filter(|&&q| q >= 2).count();
    outcome(
        hits >= SELECT_MIN_HITS && improved == 5,
        format!("selected Q per seed {picked:?}, Q >= 2 in {hits}/5 (gate {SELECT_MIN_HITS}); trained beats untrained held-out in {improved}/5 (gate 5)"),
    )
}

// ---------- 8 ----------

/// Three well-separated latent blobs mapped through random GP functions to
/// 6 gaussian and 6 bernoulli columns. Returns the data and the blob labels 1..=3.
fn blob_dataset(n: usize, seed: u64) -> (Dataset<f64>, Vec<usize>) {
    let mut rng = rng_for(seed, "acceptance-blobs", 0);
    let centres = [(0.0, 3.0), (2.6, -1.5), (-2.6, -1.5)];
    let labels: Vec<usize> = (0..n).map(|i| i % 3 + 1).collect();
    let x = Mat::from_fn(n, 2, |i, j| {
        let c = centres[labels[i] - 1];
        (if j == 0 { c.0 } else { c.1 }) + 0.4 * normal(&mut rng)
    });
    let h = KernelHypers::new(1.0, vec![1.5, 1.5]).unwrap();
    let chol = jittered_cholesky(&gram(&x, &x, &h).unwrap(), 1e-8).unwrap();
    let ks = mixed_kinds();
    let mut values = Mat::zeros(n, ks.len());
    for (j, &k) in ks.iter().enumerate() {
        let z: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        for i in 0..n {
            let f: f64 = (0..=i).map(|p| chol.lower[(i, p)] * z[p]).sum();
            values[(i, j)] = match k {
                LikelihoodKind::Gaussian => f + 0.3 * normal(&mut rng),
                _ => f64::from(rng.random::<f64>() < hetgplvm::special::sigmoid(3.0 * f)),
            };
        }
    }
    (Dataset::fully_observed(values, Schema::from_kinds(&ks).unwrap()).unwrap(), labels)
}

fn consensus_protocol() -> Outcome {
    let (data, truth) = blob_dataset(150, 8);
    let tc = train_cfg(EPOCHS);
    let run = |idx: &[usize], rng: &mut Rng| {
        let sub = data.subset_rows(idx);
        let model = Model::new(sub.schema().clone(), model_cfg())?;
        let res = fit(&model, &sub, &TrainConfig { seed: rng.random(), ..tc.clone() })?;
        let q = model.embed(&res.best_elbo_params, &sub)?;
        Ok(gmm_fit(&q.means, 5, 3, rng.random())?.labels)
    };
    let cfg = ConsensusConfig { reps: 30, subsample_frac: 0.5, n_perm: 1000, alpha: ALPHA };
    let rep = consensus(data.n(), run, &truth, &cfg, 8).unwrap();
    let true_ok = rep.significant().iter().all(|&s| s);
    let mut shuffled = truth.clone();
    shuffled.shuffle(&mut rng_for(8, "acceptance-shuffle", 0));
    let idx = cluster_indices(&rep.matrix, &shuffled);
    let thr = permutation_thresholds(&rep.matrix, &shuffled, cfg.n_perm, ALPHA, 9).unwrap();
    let shuffled_hits = idx.iter().zip(&thr).filter(|(i, t)| i > t).count();
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ");
    outcome(
        true_ok && shuffled_hits == 0,
        format!(
            "true clusters index [{}] vs thresholds [{}]; shuffled labels index [{}] vs [{}], {shuffled_hits} exceed",
            fmt(&rep.per_cluster_index),
            fmt(&rep.thresholds),
            fmt(&idx),
            fmt(&thr)
        ),
    )
}

// ---------- 9 ----------

fn eta_centring() -> Outcome {
    let data = generate(200, 2, &mixed_kinds(), 9).data;
    let spread = |eta: f64| {
        let norms: Vec<f64> = (0..5u64)
            .map(|seed| {
                let model = Model::new(data.schema().clone(), model_cfg()).unwrap();
                let mut tc = TrainConfig { seed, ..train_cfg(EPOCHS) };
                tc.objective.eta = eta;
                let res = fit(&model, &data, &tc).unwrap();
                let q = model.embed(&res.best_elbo_params, &data).unwrap();
                (0..q.n()).map(|i| q.means.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()).sum()
            })
            .collect();
        median(&norms)
    };
    let (one, ten) = (spread(1.0), spread(10.0));
    outcome(ten < one, format!("median sum of latent mean norms: eta=1 {one:.3}, eta=10 {ten:.3}"))
}

// ---------- 10 ----------

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        if name == "ablation_timing.csv" {
            continue;
        }
        let mut bytes = std::fs::read(&path).unwrap();
        if name == "manifest.json" {
            let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
            v.as_object_mut().unwrap().remove("timestamp");
            bytes = serde_json::to_vec(&v).unwrap();
        }
        files.insert(name, bytes);
    }
    files
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let r = root();
    let p = |s: &str| r.join(s).display().to_string();
    let toy = [
        "--config".to_string(),
        p("data/toy.toml"),
        "--data".into(),
        p("data/toy.csv"),
        "--schema".into(),
        p("data/toy_schema.json"),
    ];
    let exec = |args: &[String], out: &Path| {
        Command::new(env!("CARGO_BIN_EXE_hetgplvm")).args(args).arg("--out-dir").arg(out).output().unwrap()
    };
    let with = |cmd: &str, extra: &[&str]| {
        let mut v = vec![cmd.to_string()];
        v.extend(toy.iter().cloned());
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    };
    let trained = tmp.path().join("trained");
    if !exec(&with("train", &[]), &trained).status.success() {
        return outcome(false, "training the toy model failed");
    }
    let ck = trained.join("best.json").display().to_string();
    let runs = [
        ("train", with("train", &[])),
        ("embed", with("embed", &["--checkpoint", &ck])),
        ("eval", with("eval", &["--checkpoint", &ck])),
        ("eval-select", with("eval", &[])),
        ("cluster", with("cluster", &["--checkpoint", &ck])),
        ("consensus", with("consensus", &[])),
        ("cv", with("cv", &[])),
        ("ablate", with("ablate", &[])),
        ("simulate", ["simulate", "--generative", "--n", "100", "--seed", "1"].map(String::from).to_vec()),
        ("simulate-binarize", ["simulate", "--binarize", "--n", "40", "--seed", "1"].map(String::from).to_vec()),
    ];
    let mut bad = Vec::new();
    let mut files = 0;
    for (name, args) in &runs {
        let (a, b) = (tmp.path().join(format!("{name}-a")), tmp.path().join(format!("{name}-b")));
        let (oa, ob) = (exec(args, &a), exec(args, &b));
        if !oa.status.success() || !ob.status.success() {
            bad.push(format!("{name} exited with {:?}", oa.status.code()));
            continue;
        }
        let (sa, sb) = (snapshot(&a), snapshot(&b));
        files += sa.len();
        if sa != sb {
            bad.push(format!("{name} differs"));
        }
    }
    outcome(
        bad.is_empty(),
        if bad.is_empty() { format!("{} commands, {files} output files byte-identical on re-run", runs.len()) } else { bad.join("; ") },
    )
}
