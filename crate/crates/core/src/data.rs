//! Column schemas, mixed-type datasets with missing values, CSV I/O and
//! synthetic data generators.

use std::collections::HashSet;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Beta, Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{input_err, Error, Result};
use crate::kernel::{gram, KernelHypers};
use crate::likelihood::{LikelihoodKind, SharedLikelihoodParams, BETA_CLAMP};
use crate::linalg::{jittered_cholesky, Mat, DEFAULT_BASE_JITTER};
use crate::scalar::Scalar;
use crate::seed::{fnv1a, rng_for, Rng};
use crate::special::{norm_cdf, sigmoid};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: LikelihoodKind,
}

impl ColumnSchema {
    pub fn new(name: impl Into<String>, kind: LikelihoodKind) -> Self {
        Self { name: name.into(), kind }
    }
}

/// Ordered column typing of a dataset. Stored on disk as
/// `{"columns": [{"name": "age", "kind": "gaussian"}, ...]}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSchema>,
}

impl Schema {
    pub fn new(columns: Vec<ColumnSchema>) -> Result<Self> {
        if columns.is_empty() {
            return input_err("schema has no columns");
        }
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return input_err(format!("duplicate column name '{}'", c.name));
            }
        }
        Ok(Self { columns })
    }

    /// Schema with generated names `y1..yD`.
    pub fn from_kinds(kinds: &[LikelihoodKind]) -> Result<Self> {
        Self::new(kinds.iter().enumerate().map(|(i, &k)| ColumnSchema::new(format!("y{}", i + 1), k)).collect())
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn kinds(&self) -> Vec<LikelihoodKind> {
        self.columns.iter().map(|c| c.kind).collect()
    }

    /// Stable hex digest of names and kinds.
    pub fn fingerprint(&self) -> String {
        let text: Vec<String> = self.columns.iter().map(|c| format!("{}:{}", c.name, c.kind)).collect();
        format!("{:016x}", fnv1a(text.join("\n").as_bytes()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read schema {}: {e}", path.display())))?;
        let raw: Schema =
            serde_json::from_str(&text).map_err(|e| Error::Input(format!("schema {}: {e}", path.display())))?;
        Self::new(raw.columns)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// `N×D` values with an observation mask. Categorical values are 1-based
/// class indices; masked entries hold zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    values: Mat<T>,
    mask: Vec<bool>,
    schema: Schema,
}

impl<T: Scalar> Dataset<T> {
    /// Validates supports of observed entries; beta values are clamped to
    /// `[1e-6, 1 − 1e-6]` first. Masked cells are zeroed.
    pub fn new(mut values: Mat<T>, mask: Vec<bool>, schema: Schema) -> Result<Self> {
        let (n, d) = values.shape();
        if d != schema.len() {
            return input_err(format!("data has {d} columns, schema has {}", schema.len()));
        }
        if mask.len() != n * d {
            return input_err("mask size differs from the value matrix");
        }
        for i in 0..n {
            for (j, col) in schema.columns.iter().enumerate() {
                if !mask[i * d + j] {
                    values[(i, j)] = T::zero();
                    continue;
                }
                let mut y = values[(i, j)].f64();
                if col.kind == LikelihoodKind::Beta && y.is_finite() {
                    y = y.clamp(BETA_CLAMP, 1.0 - BETA_CLAMP);
                    values[(i, j)] = T::c(y);
                }
                col.kind
                    .check_support(y)
                    .map_err(|e| Error::Input(format!("row {}, column '{}': {e}", i + 1, col.name)))?;
            }
        }
        Ok(Self { values, mask, schema })
    }

    /// Dataset with every entry observed.
    pub fn fully_observed(values: Mat<T>, schema: Schema) -> Result<Self> {
        let len = values.rows() * values.cols();
        Self::new(values, vec![true; len], schema)
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn d(&self) -> usize {
        self.values.cols()
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn values(&self) -> &Mat<T> {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn observed(&self, n: usize, d: usize) -> bool {
        self.mask[n * self.d() + d]
    }

    #[inline]
    pub fn value(&self, n: usize, d: usize) -> T {
        self.values[(n, d)]
    }

    /// Overwrites the stored value of a masked cell; observed cells are
    /// untouched. Used to check that masked data never leaks.
    pub fn set_masked_value(&mut self, n: usize, d: usize, v: T) {
        if !self.observed(n, d) {
            self.values[(n, d)] = v;
        }
    }

    pub fn n_observed(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn subset_rows(&self, rows: &[usize]) -> Self {
        let d = self.d();
        let mut values = Vec::with_capacity(rows.len() * d);
        let mut mask = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            values.extend_from_slice(self.values.row(r));
            mask.extend_from_slice(&self.mask[r * d..(r + 1) * d]);
        }
        Self { values: Mat::from_vec(rows.len(), d, values).expect("row subset"), mask, schema: self.schema.clone() }
    }

    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        if cols.is_empty() {
            return input_err("column selection is empty");
        }
        let columns = cols.iter().map(|&c| self.schema.columns[c].clone()).collect();
        let values = Mat::from_fn(self.n(), cols.len(), |i, j| self.values[(i, cols[j])]);
        let mask = (0..self.n()).flat_map(|i| cols.iter().map(move |&c| (i, c))).map(|(i, c)| self.observed(i, c)).collect();
        Ok(Self { values, mask, schema: Schema::new(columns)? })
    }

    /// Same values under a different typing; supports are re-checked.
    pub fn with_kinds(&self, kinds: &[LikelihoodKind]) -> Result<Self> {
        if kinds.len() != self.d() {
            return input_err("kind list length differs from the column count");
        }
        let columns = self.schema.columns.iter().zip(kinds).map(|(c, &k)| ColumnSchema::new(c.name.clone(), k)).collect();
        Self::new(self.values.clone(), self.mask.clone(), Schema::new(columns)?)
    }

    /// Indices of columns whose kind satisfies `pred`.
    pub fn columns_where(&self, pred: impl Fn(LikelihoodKind) -> bool) -> Vec<usize> {
        (0..self.d()).filter(|&j| pred(self.schema.columns[j].kind)).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset { values: self.values.cast(), mask: self.mask.clone(), schema: self.schema.clone() }
    }
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c == "NA"
}

/// Reads a headed CSV whose header must equal the schema's column names.
pub fn load_dataset(csv_path: impl AsRef<Path>, schema_path: impl AsRef<Path>) -> Result<Dataset<f64>> {
    let schema = Schema::load(schema_path)?;
    let csv_path = csv_path.as_ref();
    let file = std::fs::File::open(csv_path)
        .map_err(|e| Error::Input(format!("cannot open {}: {e}", csv_path.display())))?;
    read_dataset(file, schema)
}

pub fn read_dataset(reader: impl std::io::Read, schema: Schema) -> Result<Dataset<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let names: Vec<&str> = schema.columns.iter().map(|c| c.name.as_str()).collect();
    if header != names {
        return input_err(format!("CSV header {header:?} does not match schema columns {names:?}"));
    }
    let d = schema.len();
    let (mut values, mut mask) = (Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != d {
            return input_err(format!("row {} has {} fields, expected {d}", i + 1, rec.len()));
        }
        for (j, cell) in rec.iter().enumerate() {
            if is_missing(cell) {
                values.push(0.0);
                mask.push(false);
            } else {
                let v: f64 = cell.trim().parse().map_err(|_| {
                    Error::Input(format!("row {}, column '{}': cannot parse '{cell}'", i + 1, schema.columns[j].name))
                })?;
                values.push(v);
                mask.push(true);
            }
        }
    }
    let n = mask.len() / d;
    Dataset::new(Mat::from_vec(n, d, values)?, mask, schema)
}

/// Writes values with shortest round-trip formatting and `NA` for missing.
pub fn write_dataset<T: Scalar>(ds: &Dataset<T>, writer: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(ds.schema.columns.iter().map(|c| c.name.as_str()))?;
    for i in 0..ds.n() {
        let row: Vec<String> =
            (0..ds.d()).map(|j| if ds.observed(i, j) { format!("{}", ds.value(i, j)) } else { "NA".into() }).collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset<T: Scalar>(
    ds: &Dataset<T>,
    csv_path: impl AsRef<Path>,
    schema_path: impl AsRef<Path>,
) -> Result<()> {
    write_dataset(ds, std::fs::File::create(csv_path)?)?;
    ds.schema.save(schema_path)
}

/// Output of [`sample_generative`].
#[derive(Clone, Debug)]
pub struct GenerativeSample {
    pub data: Dataset<f64>,
    /// True latent inputs, `N×Q`.
    pub latents: Mat<f64>,
    /// GP values per channel, `N×C` in column order (K channels per categorical).
    pub f: Mat<f64>,
}

pub const MAX_GENERATIVE_N: usize = 2000;

/// Draws `X ~ N(0, σ_x²)`, one GP function per channel over `X`, then the
/// observations from the linked likelihoods. Every entry is observed.
pub fn sample_generative(
    n: usize,
    schema: &Schema,
    h: &KernelHypers<f64>,
    shared: &SharedLikelihoodParams<f64>,
    sigma_x2: f64,
    seed: u64,
) -> Result<GenerativeSample> {
    if n == 0 || n > MAX_GENERATIVE_N {
        return input_err(format!("generative sampler needs 1 ≤ N ≤ {MAX_GENERATIVE_N}, got {n}"));
    }
    if !(sigma_x2 > 0.0) {
        return input_err("latent prior variance must be positive");
    }
    let q = h.latent_dim();
    let mut rng = rng_for(seed, "generative", 0);
    let sx = sigma_x2.sqrt();
    let latents = Mat::from_fn(n, q, |_, _| sx * rng.sample::<f64, _>(StandardNormal));
    let chol = jittered_cholesky(&gram(&latents, &latents, h)?, DEFAULT_BASE_JITTER)?;
    let n_channels: usize = schema.columns.iter().map(|c| c.kind.num_channels()).sum();
    let mut f = Mat::zeros(n, n_channels);
    let mut z = vec![0.0; n];
    for c in 0..n_channels {
        z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        for i in 0..n {
            f[(i, c)] = (0..=i).map(|k| chol.lower[(i, k)] * z[k]).sum();
        }
    }
    let kinds = schema.kinds();
    let count = |k: LikelihoodKind| kinds.iter().filter(|&&x| x == k).count();
    if shared.gaussian_variance.len() != count(LikelihoodKind::Gaussian)
        || shared.beta_dispersion.len() != count(LikelihoodKind::Beta)
    {
        return input_err("shared likelihood parameters need one slot per gaussian and per beta column");
    }
    let mut values = Mat::zeros(n, schema.len());
    let (mut c0, mut g, mut b) = (0, 0, 0);
    for (j, col) in schema.columns.iter().enumerate() {
        let theta = match col.kind {
            LikelihoodKind::Gaussian => {
                g += 1;
                shared.gaussian_variance[g - 1]
            }
            LikelihoodKind::Beta => {
                b += 1;
                shared.beta_dispersion[b - 1]
            }
            _ => 0.0,
        };
        for i in 0..n {
            values[(i, j)] = draw_observation(col.kind, &f.row(i)[c0..c0 + col.kind.num_channels()], theta, &mut rng)?;
        }
        c0 += col.kind.num_channels();
    }
    Ok(GenerativeSample { data: Dataset::fully_observed(values, schema.clone())?, latents, f })
}

/// `theta` is the column's variance or dispersion where it has one.
fn draw_observation(kind: LikelihoodKind, f: &[f64], theta: f64, rng: &mut Rng) -> Result<f64> {
    let bad = |e: String| Error::Input(format!("cannot sample {kind}: {e}"));
    Ok(match kind {
        LikelihoodKind::Gaussian => f[0] + theta.sqrt() * rng.sample::<f64, _>(StandardNormal),
        LikelihoodKind::Bernoulli => (rng.random::<f64>() < sigmoid(f[0])) as u8 as f64,
        LikelihoodKind::Poisson => {
            let rate = f[0].exp();
            Poisson::new(rate).map_err(|e| bad(e.to_string()))?.sample(rng)
        }
        LikelihoodKind::Beta => {
            let mu = norm_cdf(f[0]).clamp(BETA_CLAMP, 1.0 - BETA_CLAMP);
            let nu = theta;
            let y: f64 = Beta::new(nu * mu, nu * (1.0 - mu)).map_err(|e| bad(e.to_string()))?.sample(rng);
            y.clamp(BETA_CLAMP, 1.0 - BETA_CLAMP)
        }
        LikelihoodKind::Categorical(k) => {
            let m = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = f.iter().map(|v| (v - m).exp()).collect();
            let mut u = rng.random::<f64>() * w.iter().sum::<f64>();
            let mut cls = k;
            for (i, wi) in w.iter().enumerate() {
                if u < *wi {
                    cls = i + 1;
                    break;
                }
                u -= wi;
            }
            cls as f64
        }
    })
}

/// First `⌈D/2⌉` columns become Bernoulli draws with success probability
/// equal to the entry; the rest stay as Gaussian-typed reals.
pub fn binarize_half(matrix: &Mat<f64>, seed: u64) -> Result<Dataset<f64>> {
    if let Some(v) = matrix.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return input_err(format!("binarize_half needs entries in [0, 1], found {v}"));
    }
    let (n, d) = matrix.shape();
    let split = d.div_ceil(2);
    let mut rng = rng_for(seed, "binarize", 0);
    let mut values = matrix.clone();
    for i in 0..n {
        for j in 0..split {
            let p = matrix[(i, j)];
            values[(i, j)] = (rng.random::<f64>() < p) as u8 as f64;
        }
    }
    let kinds: Vec<LikelihoodKind> =
        (0..d).map(|j| if j < split { LikelihoodKind::Bernoulli } else { LikelihoodKind::Gaussian }).collect();
    let schema = Schema::new(
        kinds.iter().enumerate().map(|(j, &k)| ColumnSchema::new(format!("px{}", j + 1), k)).collect(),
    )?;
    Dataset::fully_observed(values, schema)
}

/// Smooth random `side×side` images flattened row-major, intensities in
/// `[0, 1]`: a few Gaussian bumps per image around one of `n_classes`
/// class templates.
pub fn surrogate_images(n: usize, side: usize, n_classes: usize, seed: u64) -> Mat<f64> {
    let mut rng = rng_for(seed, "surrogate-images", 0);
    let unit = |rng: &mut Rng| rng.random::<f64>() * side as f64;
    let templates: Vec<Vec<(f64, f64)>> =
        (0..n_classes.max(1)).map(|_| (0..4).map(|_| (unit(&mut rng), unit(&mut rng))).collect()).collect();
    let width = side as f64 / 6.0;
    let mut out = Mat::zeros(n, side * side);
    for i in 0..n {
        let t = &templates[i % templates.len()];
        let bumps: Vec<(f64, f64, f64)> = t
            .iter()
            .map(|&(cx, cy)| {
                let jitter = width * 0.5;
                (cx + jitter * rng.sample::<f64, _>(StandardNormal), cy + jitter * rng.sample::<f64, _>(StandardNormal), 0.5 + 0.5 * rng.random::<f64>())
            })
            .collect();
        let row = out.row_mut(i);
        for y in 0..side {
            for x in 0..side {
                let v: f64 = bumps
                    .iter()
                    .map(|&(cx, cy, a)| {
                        let r2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                        a * (-0.5 * r2 / (width * width)).exp()
                    })
                    .sum();
                row[y * side + x] = v.min(1.0);
            }
        }
    }
    out
}
