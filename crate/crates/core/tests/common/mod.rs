#![allow(dead_code)]

use hetgplvm::data::{Dataset, Schema};
use hetgplvm::likelihood::LikelihoodKind;
use hetgplvm::linalg::Mat;
use hetgplvm::model::{Model, ModelConfig, ParamVector};
use hetgplvm::objective::{Noise, ObjectiveConfig};
use hetgplvm::seed::rng_for;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn kinds(spec: &[&str]) -> Vec<LikelihoodKind> {
    spec.iter().map(|k| k.parse().unwrap()).collect()
}

/// Random observed values in each column's support; roughly one entry in
/// `missing_every` is masked.
pub fn random_dataset(n: usize, kinds: &[LikelihoodKind], missing_every: usize, rng: &mut impl Rng) -> Dataset<f64> {
    let d = kinds.len();
    let mut values = Mat::zeros(n, d);
    let mut mask = vec![true; n * d];
    for i in 0..n {
        for (j, &k) in kinds.iter().enumerate() {
            values[(i, j)] = match k {
                LikelihoodKind::Gaussian => rng.sample::<f64, _>(StandardNormal),
                LikelihoodKind::Bernoulli => rng.random_range(0..2) as f64,
                LikelihoodKind::Beta => rng.random_range(0.05..0.95),
                LikelihoodKind::Poisson => rng.random_range(0..6) as f64,
                LikelihoodKind::Categorical(c) => rng.random_range(1..=c) as f64,
            };
            if missing_every > 0 && rng.random_range(0..missing_every) == 0 {
                mask[i * d + j] = false;
            }
        }
    }
    Dataset::new(values, mask, Schema::from_kinds(kinds).unwrap()).unwrap()
}

/// Initial parameters with every coordinate perturbed, so no block sits at
/// a special point.
pub fn perturbed_params(model: &Model, seed: u64, spread: f64) -> ParamVector<f64> {
    let mut p = model.init_vector::<f64>(seed).unwrap();
    let mut rng = rng_for(seed, "perturb", 0);
    for v in p.flat.iter_mut() {
        *v += spread * rng.sample::<f64, _>(StandardNormal);
    }
    p
}

pub struct Fixture {
    pub model: Model,
    pub params: ParamVector<f64>,
    pub data: Dataset<f64>,
    pub rows: Vec<usize>,
    pub cfg: ObjectiveConfig,
    pub noise: Noise<f64>,
}

/// Tiny mixed model: `N` rows, the given kinds, `M` inducing points, `Q`
/// latent dimensions, small encoder.
pub fn fixture(seed: u64, n: usize, kind_spec: &[&str], m: usize, q: usize, cfg: ObjectiveConfig) -> Fixture {
    let ks = kinds(kind_spec);
    let mut rng = rng_for(seed, "fixture", 0);
    let data = random_dataset(n, &ks, 0, &mut rng);
    let config = ModelConfig { latent_dim: q, num_inducing: m, hidden_width: 4, ..Default::default() };
    let model = Model::new(data.schema().clone(), config).unwrap();
    let params = perturbed_params(&model, seed, 0.3);
    let rows: Vec<usize> = (0..n).collect();
    let noise = Noise::draw(&model, n, &cfg, &mut rng);
    Fixture { model, params, data, rows, cfg, noise }
}
