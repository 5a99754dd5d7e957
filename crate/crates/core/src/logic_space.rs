//! The unified logic mechanism: per-layer language centers, the multilingual
//! shift matrix, a rank-r language-variation basis from its SVD, and the
//! shared-subspace projector `h - lambda * B (B^T h)`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, UlxError};
use crate::numerics::{svd, Mat, Vector};

/// Short language code ("en", "sw", ...). Ordering is plain byte order and
/// is used wherever the pipeline needs a deterministic tie-break.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LanguageId(String);

impl LanguageId {
    pub fn new(code: impl Into<String>) -> Result<Self> {
        let code = code.into();
        if code.is_empty() {
            return Err(UlxError::Config("language code must be nonempty".into()));
        }
        Ok(LanguageId(code))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LanguageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One validation observation: a hidden state for (sample, language, layer).
#[derive(Debug, Clone)]
pub struct ValidationItem {
    pub sample: String,
    pub language: LanguageId,
    pub layer: usize,
    pub state: Vector,
}

/// Language-specific realizations of the same contents: a parallel corpus of
/// hidden states over (sample, language, layer).
#[derive(Debug, Clone, Default)]
pub struct ValidationSet {
    items: Vec<ValidationItem>,
}

impl ValidationSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, sample: impl Into<String>, language: LanguageId, layer: usize, state: Vector) {
        self.items.push(ValidationItem {
            sample: sample.into(),
            language,
            layer,
            state,
        });
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn languages(&self) -> BTreeSet<LanguageId> {
        self.items.iter().map(|it| it.language.clone()).collect()
    }

    pub fn items(&self) -> &[ValidationItem] {
        &self.items
    }

    /// Missing (sample, language) cells at `layer`: every sample seen at that
    /// layer must appear for every language in the set.
    pub fn missing_coverage(&self, layer: usize) -> Vec<(String, LanguageId)> {
        let languages = self.languages();
        let samples: BTreeSet<&str> = self
            .items
            .iter()
            .filter(|it| it.layer == layer)
            .map(|it| it.sample.as_str())
            .collect();
        let present: BTreeSet<(&str, &LanguageId)> = self
            .items
            .iter()
            .filter(|it| it.layer == layer)
            .map(|it| (it.sample.as_str(), &it.language))
            .collect();
        let mut missing = Vec::new();
        for sample in &samples {
            for lang in &languages {
                if !present.contains(&(sample, lang)) {
                    missing.push((sample.to_string(), lang.clone()));
                }
            }
        }
        missing
    }
}

/// Per-language mean of validation states at one layer.
pub fn compute_language_centers(
    val: &ValidationSet,
    layer: usize,
) -> Result<BTreeMap<LanguageId, Vector>> {
    let languages = val.languages();
    if languages.is_empty() {
        return Err(UlxError::Coverage(0, "validation set is empty".into()));
    }
    let missing = val.missing_coverage(layer);
    if !missing.is_empty() {
        let list = missing
            .iter()
            .take(8)
            .map(|(s, l)| format!("({s}, {l})"))
            .collect::<Vec<_>>()
            .join(", ");
        return Err(UlxError::Coverage(missing.len(), list));
    }

    let mut sums: BTreeMap<LanguageId, (Vector, usize)> = BTreeMap::new();
    let mut dim: Option<usize> = None;
    for it in val.items() {
        if it.layer != layer {
            continue;
        }
        match dim {
            None => dim = Some(it.state.len()),
            Some(d) if d != it.state.len() => {
                return Err(UlxError::Dimension(format!(
                    "state for ({}, {}) has dim {} but expected {d}",
                    it.sample,
                    it.language,
                    it.state.len()
                )))
            }
            _ => {}
        }
        let entry = sums
            .entry(it.language.clone())
            .or_insert_with(|| (Vector::zeros(it.state.len()), 0));
        entry.0.axpy(1.0, &it.state);
        entry.1 += 1;
    }
    if sums.is_empty() {
        return Err(UlxError::Coverage(
            languages.len(),
            format!("no states at layer {layer}"),
        ));
    }
    if sums.len() != languages.len() {
        let absent: Vec<String> = languages
            .iter()
            .filter(|l| !sums.contains_key(*l))
            .map(|l| format!("(*, {l})"))
            .collect();
        return Err(UlxError::Coverage(absent.len(), absent.join(", ")));
    }
    Ok(sums
        .into_iter()
        .map(|(lang, (sum, n))| (lang, sum.scaled(1.0 / n as f64)))
        .collect())
}

/// Stack centers into the d x |L| multilingual shift matrix; column j is the
/// center of the j-th language in sorted id order.
pub fn build_shift_matrix(centers: &BTreeMap<LanguageId, Vector>) -> Result<Mat> {
    if centers.len() < 2 {
        return Err(UlxError::Config(format!(
            "shift matrix needs >= 2 languages, got {}",
            centers.len()
        )));
    }
    let dim = centers.values().next().expect("nonempty").len();
    for (lang, c) in centers {
        if c.len() != dim {
            return Err(UlxError::Dimension(format!(
                "center for {lang} has dim {} but expected {dim}",
                c.len()
            )));
        }
    }
    let cols: Vec<Vector> = centers.values().cloned().collect();
    Mat::from_columns(&cols)
}

/// A fitted per-layer logic-space model. Immutable once built; safe to share
/// across concurrent projection calls.
#[derive(Debug, Clone)]
pub struct LogicSpaceModel {
    layer: usize,
    dim: usize,
    rank: usize,
    lambda: f64,
    centers: BTreeMap<LanguageId, Vector>,
    /// d x rank, orthonormal columns: top-r left singular vectors of the
    /// shift matrix.
    basis: Mat,
}

impl LogicSpaceModel {
    /// Fit centers and the language-variation basis at one layer.
    pub fn fit(val: &ValidationSet, layer: usize, rank: usize, lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(UlxError::Config(format!("lambda {lambda} outside [0, 1]")));
        }
        if rank == 0 {
            return Err(UlxError::Config("rank must be >= 1".into()));
        }
        let centers = compute_language_centers(val, layer)?;
        if centers.len() < 2 {
            return Err(UlxError::Config(
                "a one-language validation set has no cross-lingual variation to remove".into(),
            ));
        }
        if rank > centers.len() {
            return Err(UlxError::Config(format!(
                "rank {rank} exceeds language count {}",
                centers.len()
            )));
        }
        let shift = build_shift_matrix(&centers)?;
        let dec = svd(&shift)?;
        let dim = shift.rows();
        let mut basis = Mat::zeros(dim, rank);
        for j in 0..rank {
            basis.col_mut(j).copy_from_slice(dec.u.col(j));
        }
        Ok(LogicSpaceModel {
            layer,
            dim,
            rank,
            lambda,
            centers,
            basis,
        })
    }

    /// Assemble a model from parts (used by the file loader and bindings).
    pub fn from_parts(
        layer: usize,
        lambda: f64,
        centers: BTreeMap<LanguageId, Vector>,
        basis: Mat,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(UlxError::Config(format!("lambda {lambda} outside [0, 1]")));
        }
        let dim = basis.rows();
        let rank = basis.cols();
        for (lang, c) in &centers {
            if c.len() != dim {
                return Err(UlxError::Dimension(format!(
                    "center for {lang} has dim {} but basis rows are {dim}",
                    c.len()
                )));
            }
        }
        // Orthonormality within 1e-8, per the model invariant.
        for a in 0..rank {
            for b in a..rank {
                let dot: f64 = basis
                    .col(a)
                    .iter()
                    .zip(basis.col(b))
                    .map(|(x, y)| x * y)
                    .sum();
                let want = if a == b { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-8 {
                    return Err(UlxError::Numeric(format!(
                        "basis columns {a},{b} not orthonormal: inner product {dot}"
                    )));
                }
            }
        }
        Ok(LogicSpaceModel {
            layer,
            dim,
            rank,
            lambda,
            centers,
            basis,
        })
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn centers(&self) -> &BTreeMap<LanguageId, Vector> {
        &self.centers
    }

    pub fn basis(&self) -> &Mat {
        &self.basis
    }

    /// Same model with a different shrinkage factor.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(UlxError::Config(format!("lambda {lambda} outside [0, 1]")));
        }
        let mut m = self.clone();
        m.lambda = lambda;
        Ok(m)
    }

    /// Project into the unified logic space: `h - lambda * B (B^T h)`.
    /// The projector is never materialized as a d x d matrix.
    pub fn project(&self, h: &Vector) -> Result<Vector> {
        if h.len() != self.dim {
            return Err(UlxError::Dimension(format!(
                "project: input dim {} vs model dim {}",
                h.len(),
                self.dim
            )));
        }
        if self.lambda == 0.0 {
            return Ok(h.clone());
        }
        let coeffs = self.basis.transpose_mul_vec(h)?;
        let mut out = h.clone();
        for (j, &c) in coeffs.iter().enumerate() {
            let col = self.basis.col(j);
            let scale = self.lambda * c;
            for (o, &b) in out.0.iter_mut().zip(col) {
                *o -= scale * b;
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            schema: MODEL_SCHEMA.to_string(),
            dim: self.dim,
            layer: self.layer,
            rank: self.rank,
            lambda: self.lambda,
            languages: self.centers.keys().map(|l| l.as_str().to_string()).collect(),
            centers: self
                .centers
                .iter()
                .map(|(l, v)| (l.as_str().to_string(), v.as_slice().to_vec()))
                .collect(),
            basis: self.basis.as_col_major().to_vec(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.schema != MODEL_SCHEMA {
            return Err(UlxError::Config(format!(
                "unsupported model schema {:?}, expected {MODEL_SCHEMA:?}",
                file.schema
            )));
        }
        let mut centers = BTreeMap::new();
        for (code, values) in file.centers {
            centers.insert(LanguageId::new(code)?, Vector::new(values)?);
        }
        let basis = Mat::from_col_major(file.dim, file.rank, file.basis)?;
        let model = LogicSpaceModel::from_parts(file.layer, file.lambda, centers, basis)?;
        if model.dim != file.dim {
            return Err(UlxError::Dimension("model dim mismatch".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}

pub const MODEL_SCHEMA: &str = "ulx-model/1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    schema: String,
    dim: usize,
    layer: usize,
    rank: usize,
    lambda: f64,
    languages: Vec<String>,
    centers: BTreeMap<String, Vec<f64>>,
    /// Column-major d x rank.
    basis: Vec<f64>,
}
