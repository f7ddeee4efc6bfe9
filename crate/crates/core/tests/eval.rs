mod common;

use common::{kinds, random_dataset};
use hetgplvm::eval::cv::{estimator_ablation, gaussian_columns, repeated_cv, select_latent_dim, AblationConfig, Approach, CvConfig, Scope};
use hetgplvm::eval::gmm::{gmm_fit, label_agreement};
use hetgplvm::linalg::Mat;
use hetgplvm::model::ModelConfig;
use hetgplvm::objective::Estimator;
use hetgplvm::seed::rng_for;
use hetgplvm::{Error, TrainConfig};
use rand::Rng;
use rand_distr::StandardNormal;

fn small_model() -> ModelConfig {
    ModelConfig { latent_dim: 2, num_inducing: 5, hidden_width: 4, ..Default::default() }
}

fn small_train() -> TrainConfig {
    let mut t = TrainConfig { epochs: 8, learning_rate: 1e-2, ..Default::default() };
    t.objective.minibatch_size = 16;
    t
}

fn cv_config(reps: usize) -> CvConfig {
    CvConfig { folds: 2, reps, seed: 11, model: small_model(), train: small_train() }
}

#[test]
fn single_arm_cv_scores_every_fold() {
    let data = random_dataset(30, &kinds(&["gaussian", "bernoulli", "poisson"]), 7, &mut rng_for(1, "cv", 0));
    let rep = repeated_cv(&data, &[Approach::Composite], &cv_config(3)).unwrap();
    let gauss: Vec<_> = rep.scores.iter().filter(|s| s.scope == Scope::Gaussian).collect();
    assert_eq!(gauss.len(), 2 * 3);
    assert!(rep.scores.iter().all(|s| s.approach == Approach::Composite && s.sum.is_finite()));
    let observed_gauss: usize = (0..30).filter(|&i| data.observed(i, 0)).count();
    for r in 0..3 {
        let n: usize = gauss.iter().filter(|s| s.rep == r).map(|s| s.n_entries).sum();
        assert_eq!(n, observed_gauss);
    }
}

#[test]
fn cv_is_seeded_and_paired() {
    let data = random_dataset(30, &kinds(&["gaussian", "bernoulli", "beta"]), 0, &mut rng_for(2, "cv", 0));
    let cfg = cv_config(2);
    let a = repeated_cv(&data, &Approach::ALL, &cfg).unwrap();
    let b = repeated_cv(&data, &Approach::ALL, &cfg).unwrap();
    assert_eq!(a.partitions, b.partitions);
    let bits = |r: &hetgplvm::eval::CvReport| r.scores.iter().map(|s| s.sum.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));

    let gauss = gaussian_columns(&data);
    for rep in 0..2 {
        let sizes: Vec<usize> = Approach::ALL
            .iter()
            .map(|&ap| a.scores.iter().filter(|s| s.rep == rep && s.approach == ap && s.scope == Scope::Gaussian).map(|s| s.n_entries).sum())
            .collect();
        assert!(sizes.iter().all(|&n| n == 30 * gauss.len()), "{sizes:?}");
    }
    assert_eq!(a.paired_differences(Approach::Composite, Approach::AllGaussian, Scope::Gaussian).len(), 2);
    assert_eq!(a.paired_differences(Approach::Composite, Approach::AllGaussian, Scope::All).len(), 2);
    assert!(a.paired_differences(Approach::GaussianOnly, Approach::Composite, Scope::All).is_empty());
}

#[test]
fn gaussian_only_approach_needs_a_gaussian_column() {
    let data = random_dataset(20, &kinds(&["bernoulli", "poisson"]), 0, &mut rng_for(3, "cv", 0));
    match repeated_cv(&data, &[Approach::GaussianOnly], &cv_config(1)) {
        Err(Error::Config(_)) => {}
        other => panic!("expected a configuration error, got {other:?}"),
    }
    assert!(repeated_cv(&data, &[Approach::Composite], &CvConfig { reps: 0, ..cv_config(1) }).is_err());
}

#[test]
fn singleton_candidate_is_selected() {
    let mut rng = rng_for(4, "select", 0);
    let train = random_dataset(24, &kinds(&["gaussian", "bernoulli"]), 0, &mut rng);
    let heldout = random_dataset(10, &kinds(&["gaussian", "bernoulli"]), 0, &mut rng);
    let sel = select_latent_dim(&train, &heldout, &[2], 2, &small_model(), &small_train()).unwrap();
    assert_eq!(sel.best_q, 2);
    assert_eq!(sel.per_q.len(), 1);
    assert!(sel.per_q[0].heldout.sum.is_finite());
    let again = select_latent_dim(&train, &heldout, &[2], 2, &small_model(), &small_train()).unwrap();
    assert_eq!(again.per_q[0].heldout.sum.to_bits(), sel.per_q[0].heldout.sum.to_bits());
    assert_eq!(again.per_q[0].best_run, sel.per_q[0].best_run);
}

#[test]
fn ablation_pairs_both_arms() {
    let data = random_dataset(30, &kinds(&["gaussian", "bernoulli"]), 0, &mut rng_for(5, "ablate", 0));
    let cfg = AblationConfig { reps: 2, seed: 3, model: small_model(), train: small_train() };
    let rep = estimator_ablation(&data, &cfg).unwrap();
    assert_eq!(rep.partitions.len(), 2);
    let (q, s) = (rep.arm(Estimator::Quadrature), rep.arm(Estimator::Sampling));
    assert_eq!((q.len(), s.len()), (2, 2));
    for (a, b) in q.iter().zip(&s) {
        assert_eq!(a.rep, b.rep);
        assert_eq!(a.heldout.n_entries, b.heldout.n_entries);
        assert!(a.epoch_seconds >= 0.0 && b.epoch_seconds >= 0.0);
    }
}

#[test]
fn three_separated_blobs_are_recovered() {
    let mut rng = rng_for(6, "blobs", 0);
    let centres = [(-6.0, 0.0), (6.0, 0.0), (0.0, 8.0)];
    let truth: Vec<usize> = (0..150).map(|i| i / 50).collect();
    let x = Mat::from_fn(150, 2, |i, j| {
        let c = centres[truth[i]];
        (if j == 0 { c.0 } else { c.1 }) + rng.sample::<f64, _>(StandardNormal)
    });
    let fit = gmm_fit(&x, 6, 4, 9).unwrap();
    assert_eq!(fit.n_clusters, 3);
    assert!(label_agreement(&fit.labels, &truth.iter().map(|t| t + 1).collect::<Vec<_>>()) >= 0.99);
    for i in 0..150 {
        let row: f64 = fit.responsibilities.row(i).iter().sum();
        assert!((row - 1.0).abs() < 1e-9);
    }
}
