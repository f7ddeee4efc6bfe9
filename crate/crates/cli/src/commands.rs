use std::path::{Path, PathBuf};

use anyhow::Context as _;
use hetgplvm::data::{binarize_half, load_dataset, read_dataset, sample_generative, surrogate_images, write_dataset, Dataset, Schema};
use hetgplvm::eval::cv::{score_params, AblationConfig, Approach, CvConfig, Scope};
use hetgplvm::eval::gmm::gmm_fit_with;
use hetgplvm::eval::{cluster_stats, consensus, estimator_ablation, fold_partition, repeated_cv, select_latent_dim, ClusterResult};
use hetgplvm::kernel::KernelHypers;
use hetgplvm::likelihood::{LikelihoodKind, SharedLikelihoodParams};
use hetgplvm::linalg::Mat;
use hetgplvm::objective::Estimator;
use hetgplvm::train::{resume, AdamState};
use hetgplvm::{Checkpoint, Model, ParamVector, TrainConfig};
use rand::Rng as _;
use serde_json::{json, Value};

use crate::config::{RunConfig, SimulateMode};
use crate::error::usage;
use crate::output::{display, num, opt, Outputs};
use crate::Common;

pub fn dispatch(name: &str, c: &Common, cfg: &RunConfig, out: &mut Outputs) -> anyhow::Result<()> {
    match name {
        "train" => train(c, cfg, out),
        "embed" => embed(c, out),
        "eval" => eval(c, cfg, out),
        "cluster" => cluster(c, cfg, out),
        "consensus" => consensus_cmd(c, cfg, out),
        "cv" => cv(c, cfg, out),
        "ablate" => ablate(c, cfg, out),
        "simulate" => simulate(c, cfg, out),
        other => Err(usage(format!("unknown command {other}"))),
    }
}

pub fn inputs(c: &Common) -> Value {
    json!({
        "data": display(&c.data),
        "schema": display(&c.schema),
        "config": display(&c.config),
        "checkpoint": display(&c.checkpoint),
    })
}

fn require<'a>(p: &'a Option<PathBuf>, flag: &str) -> anyhow::Result<&'a Path> {
    let p = p.as_deref().ok_or_else(|| usage(format!("{flag} is required")))?;
    if !p.is_file() {
        return Err(usage(format!("{flag} {}: no such file", p.display())));
    }
    Ok(p)
}

fn load_data(c: &Common) -> anyhow::Result<Dataset<f64>> {
    let (data, schema) = (require(&c.data, "--data")?, require(&c.schema, "--schema")?);
    Ok(load_dataset(data, schema)?)
}

fn load_checkpoint(c: &Common, data: &Dataset<f64>) -> anyhow::Result<(Checkpoint, Model, ParamVector<f64>)> {
    let ck = Checkpoint::load(require(&c.checkpoint, "--checkpoint")?)?;
    if ck.schema_fingerprint != data.schema().fingerprint() {
        return Err(hetgplvm::Error::Input("dataset schema does not match the checkpoint".into()).into());
    }
    let (model, params) = ck.restore()?;
    Ok((ck, model, params))
}

fn train(c: &Common, cfg: &RunConfig, out: &mut Outputs) -> anyhow::Result<()> {
    let data = load_data(c)?;
    let mut train_cfg = cfg.train.clone();
    let (model, init, adam, start) = if c.checkpoint.is_some() {
        let (ck, model, params) = load_checkpoint(c, &data)?;
        // A resumed run keeps the checkpoint's seed so its streams continue.
        train_cfg.seed = ck.train.seed;
        out.notes.push(format!("resumed after epoch {}", ck.epoch));
        (model, params, ck.adam_state(), ck.epoch)
    } else {
        let model = Model::new(data.schema().clone(), cfg.model.clone())?;
        let init = model.init_vector(train_cfg.seed)?;
        let adam = AdamState::new(init.len());
        (model, init, adam, 0)
    };
    let ck_path = out.path("checkpoint.json")?;
    let res = resume(&model, &data, init, adam, start, &train_cfg, |epoch, p, a| {
        Checkpoint::new(&model, &train_cfg, p, epoch, Some(a)).save(&ck_path)
    })?;
    let done = start + res.elbo_trace.len();
    Checkpoint::new(&model, &train_cfg, &res.final_params, done, Some(&res.adam)).save(&ck_path)?;
    Checkpoint::new(&model, &train_cfg, &res.best_elbo_params, done, None).save(out.path("best.json")?)?;
    out.csv(
        "trace.csv",
        &["epoch", "elbo", "kl_x", "kl_u", "loglik"],
        res.elbo_trace.iter().map(|r| [format!("{}", r.epoch + 1), num(r.elbo), num(r.kl_x), num(r.kl_u), num(r.loglik)]),
    )?;
    if let Some(i) = res.best_epoch {
        out.notes.push(format!("best ELBO {} after epoch {}", res.elbo_trace[i].elbo, res.elbo_trace[i].epoch + 1));
    }
    if let Some(msg) = res.diverged {
        out.notes.push(format!("checkpoint.json holds the parameters after epoch {done}"));
        return Err(hetgplvm::Error::Numerical(format!("training diverged at {msg}")).into());
    }
    Ok(())
}

fn latent_rows(m: &Mat<f64>, s: Option<&Mat<f64>>) -> Vec<Vec<String>> {
    (0..m.rows())
        .map(|i| {
            let mut row = vec![i.to_string()];
            row.extend(m.row(i).iter().map(|&v| num(v)));
            if let Some(s) = s {
                row.extend(s.row(i).iter().map(|&v| num(v)));
            }
            row
        })
        .collect()
}

fn latent_header(q: usize, with_std: bool) -> Vec<String> {
    let mut h = vec!["row".to_string()];
    h.extend((1..=q).map(|j| format!("m{j}")));
    if with_std {
        h.extend((1..=q).map(|j| format!("s{j}")));
    }
    h
}

fn embed(c: &Common, out: &mut Outputs) -> anyhow::Result<()> {
    let data = load_data(c)?;
    let (_, model, params) = load_checkpoint(c, &data)?;
    let q = model.embed(&params, &data)?;
    let header = latent_header(model.latent_dim(), true);
    out.csv("latents.csv", &header.iter().map(String::as_str).collect::<Vec<_>>(), latent_rows(&q.means, Some(&q.stds)))
}

fn score_json(s: &hetgplvm::objective::PredictiveScore) -> Value {
    json!({ "sum": s.sum, "n_entries": s.n_entries, "mean": s.mean })
}

fn eval(c: &Common, cfg: &RunConfig, out: &mut Outputs) -> anyhow::Result<()> {
    let data = load_data(c)?;
    if c.checkpoint.is_some() {
        let (_, model, params) = load_checkpoint(c, &data)?;
        let total = score_params(&model, &params, &data, &cfg.train, None, cfg.seed)?;
        let mut columns = Vec::new();
        for (d, col) in data.schema().columns.iter().enumerate() {
            let s = score_params(&model, &params, &data, &cfg.train, Some(&[d]), cfg.seed)?;
            columns.push(json!({ "column": col.name, "kind": col.kind.to_string(), "score": score_json(&s) }));
        }
        return out.json("metrics.json", &json!({ "predictive_loglik": score_json(&total), "columns": columns }));
    }
    let part = fold_partition(data.n(), 2, cfg.seed, 0);
    let rows = |f: usize| (0..data.n()).filter(|&i| part[i] == f).collect::<Vec<_>>();
    let (train, heldout) = (data.subset_rows(&rows(0)), data.subset_rows(&rows(1)));
    let sel = select_latent_dim(&train, &heldout, &cfg.eval.q_candidates, cfg.eval.runs_per_q, &cfg.model, &cfg.train)?;
    out.csv(
        "select_q.csv",
        &["q", "best_run", "train_elbo", "heldout_sum", "n_entries", "heldout_mean"],
        sel.per_q.iter().map(|s| {
            [s.q.to_string(), s.best_run.to_string(), num(s.train_elbo), num(s.heldout.sum), s.heldout.n_entries.to_string(), opt(s.heldout.mean)]
        }),
    )?;
    out.json("metrics.json", &json!({ "best_q": sel.best_q, "train_rows": train.n(), "heldout_rows": heldout.n() }))
}

fn write_clusters(out: &mut Outputs, data: &Dataset<f64>, res: &ClusterResult) -> anyhow::Result<()> {
    out.csv("clusters.csv", &["row", "label"], res.labels.iter().enumerate().map(|(i, l)| [i.to_string(), l.to_string()]))?;
    out.csv("model_selection.csv", &["k", res.criterion.as_str()], res.scores.iter().map(|(k, s)| [k.to_string(), num(*s)]))?;
    let stats = cluster_stats(data, &res.labels)?;
    out.csv(
        "cluster_stats.csv",
        &["cluster", "column", "statistic", "value", "n_cluster", "n_rest", "note"],
        stats.iter().map(|s| {
            let kind = match s.kind {
                hetgplvm::eval::stats::StatKind::LogOddsRatio => "log-odds-ratio",
                hetgplvm::eval::stats::StatKind::WelchT => "welch-t",
            };
            [s.cluster.to_string(), s.column.clone(), kind.into(), opt(s.value), s.n_cluster.to_string(), s.n_rest.to_string(), s.note.clone().unwrap_or_default()]
        }),
    )?;
    let sizes: Vec<usize> = (0..=res.n_clusters).map(|k| res.labels.iter().filter(|&&l| l == k).count()).collect();
    out.json(
        "cluster_summary.json",
        &json!({
            "n_clusters": res.n_clusters,
            "n_components": res.n_components,
            "criterion": res.criterion,
            "model_score": res.model_score,
            "outliers": sizes[0],
            "cluster_sizes": &sizes[1..],
        }),
    )
}

fn cluster(c: &Common, cfg: &RunConfig, out: &mut Outputs) -> anyhow::Result<()> {
    let data = load_data(c)?;
    let (_, model, params) = load_checkpoint(c, &data)?;
    let q = model.embed(&params, &data)?;
    let res = gmm_fit_with(&q.means, &cfg.cluster, cfg.seed)?;
    write_clusters(out, &data, &res)
}

/// Trains on `data` and clusters the latent means.
fn train_and_cluster(data: &Dataset<f64>, cfg: &RunConfig, seed: u64) -> hetgplvm::Result<Vec<usize>> {
    let model = Model::new(data.schema().clone(), cfg.model.clone())?;
    let train_cfg = TrainConfig { seed, ..cfg.train.clone() };
    let res = hetgplvm::train::fit(&model, data, &train_cfg)?;
    if let Some(msg) = res.diverged {
        return Err(hetgplvm::Error::Numerical(format!("training diverged at {msg}")));
    }
    let q = model.embed(&res.best_elbo_params, data)?;
    Ok(gmm_fit_with(&q.means, &cfg.cluster, seed)?.labels)
}

fn consensus_cmd(c: &Common, cfg: &RunConfig, out: &mut Outputs) -> anyhow::Result<()> {
    let data = load_data(c)?;
    let reference = if c.checkpoint.is_some() {
        let (_, model, params) = load_checkpoint(c, &data)?;
        gmm_fit_with(&model.embed(&params, &data)?.means, &cfg.cluster, cfg.seed)?.labels
    } else {
        train_and_cluster(&data, cfg, cfg.seed)?
    };
    let run = |idx: &[usize], rng: &mut hetgplvm::seed::Rng| train_and_cluster(&data.subset_rows(idx), cfg, rng.random());
    let rep = consensus(data.n(), run, &reference, &cfg.consensus, cfg.seed)?;
    let n = data.n();
    let mut header = vec!["row".to_string()];
    header.extend((0..n).map(|j| j.to_string()));
    out.csv(
        "consensus_matrix.csv",
        &header.iter().map(String::as_str).collect::<Vec<_>>(),
        (0..n).map(|i| std::iter::once(i.to_string()).chain((0..n).map(|j| num(rep.matrix[(i, j)]))).collect::<Vec<_>>()),
    )?;
    out.csv("reference_labels.csv", &["row", "label"], reference.iter().enumerate().map(|(i, l)| [i.to_string(), l.to_string()]))?;
    let significant = rep.significant();
    out.csv(
        "consensus_index.csv",
        &["cluster", "size", "index", "threshold", "significant"],
        rep.per_cluster_index.iter().enumerate().map(|(k, &v)| {
            let size = reference.iter().filter(|&&l| l == k + 1).count();
            [(k + 1).to_string(), size.to_string(), num(v), num(rep.thresholds[k]), significant[k].to_string()]
        }),
    )
}

fn partition_rows(partitions: &[Vec<usize>]) -> Vec<[String; 3]> {
    partitions
        .iter()
        .enumerate()
        .flat_map(|(r, p)| p.iter().enumerate().map(move |(i, f)| [r.to_string(), i.to_string(), f.to_string()]))
        .collect()
}

fn cv(c: &Common, cfg: &RunConfig, out: &mut Outputs) -> anyhow::Result<()> {
    let data = load_data(c)?;
    let approaches: Vec<Approach> = cfg.cv.approaches.iter().map(|&a| Approach::from_number(a)).collect::<Result<_, _>>()?;
    let cv_cfg = CvConfig { folds: cfg.cv.folds, reps: cfg.cv.reps, seed: cfg.seed, model: cfg.model.clone(), train: cfg.train.clone() };
    let report = repeated_cv(&data, &approaches, &cv_cfg)?;
    let scope_name = |s: Scope| match s {
        Scope::Gaussian => "gaussian",
        Scope::All => "all",
    };
    out.csv(
        "cv_scores.csv",
        &["rep", "fold", "approach", "scope", "sum", "n_entries"],
        report.scores.iter().map(|s| {
            [s.rep.to_string(), s.fold.to_string(), s.approach.number().to_string(), scope_name(s.scope).into(), num(s.sum), s.n_entries.to_string()]
        }),
    )?;
    let mut rows = Vec::new();
    for rep in 0..cv_cfg.reps {
        for scope in [Scope::Gaussian, Scope::All] {
            let m = |a: Approach| report.rep_mean(rep, a, scope);
            let diff = |a, b| Some(m(a)? - m(b)?);
            let mut row = vec![rep.to_string(), scope_name(scope).to_string()];
            row.extend(Approach::ALL.iter().map(|&a| opt(m(a))));
            row.push(opt(diff(Approach::Composite, Approach::AllGaussian)));
            row.push(opt(diff(Approach::Composite, Approach::GaussianOnly)));
            rows.push(row);
        }
    }
    out.csv(
        "cv_paired.csv",
        &["rep", "scope", "approach_1", "approach_2", "approach_3", "diff_2_minus_3", "diff_2_minus_1"],
        rows,
    )?;
    out.csv("partitions.csv", &["rep", "row", "fold"], partition_rows(&report.partitions))
}

fn ablate(c: &Common, cfg: &RunConfig, out: &mut Outputs) -> anyhow::Result<()> {
    let data = load_data(c)?;
    let ab = AblationConfig { reps: cfg.ablate.reps, seed: cfg.seed, model: cfg.model.clone(), train: cfg.train.clone() };
    let report = estimator_ablation(&data, &ab)?;
    let (q, s) = (report.arm(Estimator::Quadrature), report.arm(Estimator::Sampling));
    out.csv(
        "ablation.csv",
        &["rep", "n_entries", "quadrature_heldout", "sampling_heldout", "difference", "quadrature_best_elbo", "sampling_best_elbo"],
        q.iter().zip(&s).map(|(a, b)| {
            [
                a.rep.to_string(),
                a.heldout.n_entries.to_string(),
                num(a.heldout.sum),
                num(b.heldout.sum),
                num(a.heldout.sum - b.heldout.sum),
                num(a.best_elbo),
                num(b.best_elbo),
            ]
        }),
    )?;
    out.csv(
        "ablation_timing.csv",
        &["rep", "quadrature_epoch_seconds", "sampling_epoch_seconds", "ratio", "quadrature_wall_seconds", "sampling_wall_seconds"],
        q.iter().zip(&s).map(|(a, b)| {
            [
                a.rep.to_string(),
                num(a.epoch_seconds),
                num(b.epoch_seconds),
                num(a.epoch_seconds / b.epoch_seconds),
                num(a.wall_seconds),
                num(b.wall_seconds),
            ]
        }),
    )?;
    out.notes.push("ablation_timing.csv holds measured times and differs between runs".into());
    out.csv("partitions.csv", &["rep", "row", "fold"], partition_rows(&report.partitions))
}

/// Reads a numeric matrix from a CSV with a header row.
fn read_matrix(path: &Path) -> anyhow::Result<Mat<f64>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row: Vec<f64> = rec
            .iter()
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| hetgplvm::Error::Input(format!("{} row {}: {e}", path.display(), i + 1)))?;
        rows.push(row);
    }
    Ok(Mat::from_rows(&rows)?)
}

fn simulate(c: &Common, cfg: &RunConfig, out: &mut Outputs) -> anyhow::Result<()> {
    let s = &cfg.simulate;
    let data = match s.mode {
        SimulateMode::Generative => {
            let schema = match &c.schema {
                Some(_) => Schema::load(require(&c.schema, "--schema")?)?,
                None => {
                    let kinds: Vec<LikelihoodKind> = s
                        .kinds
                        .iter()
                        .map(|k| k.parse::<LikelihoodKind>().map_err(|e| usage(format!("--kinds: {e}"))))
                        .collect::<anyhow::Result<_>>()?;
                    Schema::from_kinds(&kinds)?
                }
            };
            let q = cfg.model.latent_dim;
            let h = KernelHypers::new(s.signal_variance, vec![s.lengthscale; q])?;
            let shared = SharedLikelihoodParams::constant(&schema.kinds(), s.gaussian_variance, s.beta_dispersion);
            let sample = sample_generative(s.n, &schema, &h, &shared, s.prior_variance, cfg.seed)?;
            let header = latent_header(q, false);
            out.csv("latents.csv", &header.iter().map(String::as_str).collect::<Vec<_>>(), latent_rows(&sample.latents, None))?;
            sample.data
        }
        SimulateMode::Binarize => {
            let matrix = match &c.data {
                Some(_) => read_matrix(require(&c.data, "--data")?)?,
                None => surrogate_images(s.n, s.side, s.classes, cfg.seed),
            };
            binarize_half(&matrix, cfg.seed)?
        }
    };
    let file = std::fs::File::create(out.path("data.csv")?)?;
    write_dataset(&data, std::io::BufWriter::new(file))?;
    data.schema().save(out.path("schema.json")?)?;
    // The written files must load back through the validating reader.
    let check = std::fs::File::open(out.path("data.csv")?)?;
    read_dataset(check, data.schema().clone()).context("simulated dataset failed validation")?;
    Ok(())
}
