//! Synthetic multilingual hidden-state generator with planted ground truth.
//!
//! Every language path follows a shared smooth per-layer signal plus a
//! per-language offset drawn from a low-rank subspace. Paths in the drifting
//! set additionally accumulate a per-layer random walk, which bends their
//! layer trajectory and separates their curvature signal from the coherent
//! cohort. Token streams spell the path's planted answer at the end.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backends::{HiddenStateProvider, PathId, PathStream, ProviderCaps, StepEvent};
use crate::error::{Result, UlxError};
use crate::logic_space::{LanguageId, ValidationSet};
use crate::numerics::{Mat, Vector};
use crate::rng::{Purpose, Stream};

pub const SCENARIO_SCHEMA: &str = "ulx-scenario/1";

fn default_offset_rank() -> usize {
    4
}
fn default_offset_scale() -> f64 {
    1.0
}
fn default_sigma_eps() -> f64 {
    0.01
}
fn default_sigma_w() -> f64 {
    0.0
}
fn default_val_samples() -> usize {
    24
}

/// Declarative description of a synthetic decoding scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticScenario {
    pub schema: String,
    pub query_id: String,
    pub dim: usize,
    pub layers: usize,
    pub languages: Vec<String>,
    /// Language the query is posed in; defaults to the first listed.
    #[serde(default)]
    pub source_language: Option<String>,
    /// Languages whose paths drift away from the shared signal.
    #[serde(default)]
    pub drifting: Vec<String>,
    /// Rank of the planted language-offset subspace.
    #[serde(default = "default_offset_rank")]
    pub offset_rank: usize,
    #[serde(default = "default_offset_scale")]
    pub offset_scale: f64,
    /// iid observation-noise scale on every state.
    #[serde(default = "default_sigma_eps")]
    pub sigma_eps: f64,
    /// Per-step random-walk scale for drifting paths.
    #[serde(default = "default_sigma_w")]
    pub sigma_w: f64,
    /// Extra rendition perturbation per language (for exercising selection).
    #[serde(default)]
    pub misaligned: BTreeMap<String, f64>,
    /// Correct final answer carried by coherent paths.
    pub true_answer: String,
    /// Per-language planted answers; unlisted coherent languages answer
    /// `true_answer`, unlisted drifting languages answer "wrong-<code>".
    #[serde(default)]
    pub answers: BTreeMap<String, String>,
    pub max_len: usize,
    #[serde(default = "default_val_samples")]
    pub val_samples: usize,
    pub seed: u64,
}

impl SyntheticScenario {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let scenario: SyntheticScenario = serde_json::from_str(&text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCENARIO_SCHEMA {
            return Err(UlxError::Config(format!(
                "unsupported scenario schema {:?}, expected {SCENARIO_SCHEMA:?}",
                self.schema
            )));
        }
        if self.dim == 0 || self.layers < 2 || self.max_len == 0 {
            return Err(UlxError::Config(
                "scenario needs dim >= 1, layers >= 2, max_len >= 1".into(),
            ));
        }
        if self.languages.is_empty() {
            return Err(UlxError::Config("scenario needs at least one language".into()));
        }
        let unique: BTreeSet<&String> = self.languages.iter().collect();
        if unique.len() != self.languages.len() {
            return Err(UlxError::Config("duplicate language codes".into()));
        }
        for d in &self.drifting {
            if !unique.contains(d) {
                return Err(UlxError::Config(format!(
                    "drifting language {d:?} not in the language set"
                )));
            }
        }
        if self.drifting.len() == self.languages.len() {
            return Err(UlxError::Config("coherent set must be nonempty".into()));
        }
        if self.offset_rank == 0 || self.offset_rank > self.dim {
            return Err(UlxError::Config(format!(
                "offset rank {} outside [1, dim={}]",
                self.offset_rank, self.dim
            )));
        }
        if self.sigma_w < 0.0 || self.sigma_eps < 0.0 {
            return Err(UlxError::Config("noise scales must be >= 0".into()));
        }
        if let Some(src) = &self.source_language {
            if !unique.contains(src) {
                return Err(UlxError::Config(format!(
                    "source language {src:?} not in the language set"
                )));
            }
        }
        Ok(())
    }

    pub fn source(&self) -> &str {
        self.source_language
            .as_deref()
            .unwrap_or_else(|| self.languages[0].as_str())
    }

    /// Planted answer carried by one language's path.
    pub fn answer_for(&self, code: &str) -> String {
        if let Some(a) = self.answers.get(code) {
            return a.clone();
        }
        if self.drifting.iter().any(|d| d == code) {
            format!("wrong-{code}")
        } else {
            self.true_answer.clone()
        }
    }
}

/// Sinusoid-mixture parameters for the shared signal.
struct SignalParams {
    /// phases[k][j]: phase of component k in coordinate j.
    phases: Vec<Vec<f64>>,
    amps: Vec<f64>,
    /// Angular frequency over decode steps, per component.
    step_freq: Vec<f64>,
    /// Angular frequency over layers, per component.
    layer_freq: Vec<f64>,
}

const SIGNAL_COMPONENTS: usize = 3;

/// Immutable generator state shared by the provider and its streams.
struct Core {
    scenario: SyntheticScenario,
    offsets: BTreeMap<LanguageId, Vector>,
    offset_basis: Mat,
    signal: SignalParams,
}

impl Core {
    /// Shared signal s(t, m).
    fn signal_at(&self, t: usize, layer: usize) -> Vector {
        let mut v = vec![0.0; self.scenario.dim];
        for k in 0..SIGNAL_COMPONENTS {
            let amp = self.signal.amps[k];
            let arg0 =
                self.signal.step_freq[k] * t as f64 + self.signal.layer_freq[k] * layer as f64;
            for (j, x) in v.iter_mut().enumerate() {
                *x += amp * (arg0 + self.signal.phases[k][j]).sin();
            }
        }
        Vector::from_raw(v)
    }
}

pub struct SyntheticProvider {
    core: Arc<Core>,
    caps: ProviderCaps,
}

impl SyntheticProvider {
    pub fn new(scenario: SyntheticScenario) -> Result<Self> {
        scenario.validate()?;
        let mut languages: Vec<LanguageId> = scenario
            .languages
            .iter()
            .map(|c| LanguageId::new(c.clone()))
            .collect::<Result<_>>()?;
        languages.sort();

        let offset_basis = random_orthonormal(scenario.dim, scenario.offset_rank, scenario.seed);
        let mut offsets = BTreeMap::new();
        for lang in &languages {
            let mut s = Stream::derive(
                scenario.seed,
                Purpose::Scenario,
                &[0x0FF5, Stream::key_of(lang.as_str())],
            );
            let coeffs: Vec<f64> = (0..scenario.offset_rank)
                .map(|_| s.next_gaussian() / (scenario.offset_rank as f64).sqrt())
                .collect();
            let o = offset_basis.mul_vec(&coeffs)?.scaled(scenario.offset_scale);
            offsets.insert(lang.clone(), o);
        }

        let mut phase_stream = Stream::derive(scenario.seed, Purpose::Scenario, &[0x5161]);
        let mut phases = Vec::with_capacity(SIGNAL_COMPONENTS);
        for _ in 0..SIGNAL_COMPONENTS {
            phases.push(
                (0..scenario.dim)
                    .map(|_| phase_stream.next_f64() * std::f64::consts::TAU)
                    .collect(),
            );
        }
        let signal = SignalParams {
            phases,
            amps: (0..SIGNAL_COMPONENTS)
                .map(|k| 1.0 / (k as f64 + 1.0))
                .collect(),
            step_freq: (0..SIGNAL_COMPONENTS)
                .map(|k| std::f64::consts::TAU / (24.0 * (k as f64 + 1.0)))
                .collect(),
            layer_freq: (0..SIGNAL_COMPONENTS)
                .map(|k| std::f64::consts::TAU * (k as f64 + 1.0) / 16.0)
                .collect(),
        };

        let caps = ProviderCaps {
            dim: scenario.dim,
            layers: scenario.layers,
            languages,
        };
        Ok(SyntheticProvider {
            core: Arc::new(Core {
                scenario,
                offsets,
                offset_basis,
                signal,
            }),
            caps,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::new(SyntheticScenario::from_file(path)?)
    }

    pub fn scenario(&self) -> &SyntheticScenario {
        &self.core.scenario
    }

    pub fn query_id(&self) -> &str {
        &self.core.scenario.query_id
    }

    pub fn true_answer(&self) -> &str {
        &self.core.scenario.true_answer
    }

    pub fn is_drifting(&self, lang: &LanguageId) -> bool {
        self.core.scenario.drifting.iter().any(|d| d == lang.as_str())
    }

    /// The planted offset basis (handy for tests asserting recovery).
    pub fn offset_basis(&self) -> &Mat {
        &self.core.offset_basis
    }

    pub fn offsets(&self) -> &BTreeMap<LanguageId, Vector> {
        &self.core.offsets
    }

    /// Parallel validation states for fitting logic-space models. Per-sample
    /// base vectors are centered exactly, so language centers recover the
    /// planted offsets up to observation noise.
    pub fn validation_set(&self, layers: &[usize]) -> Result<ValidationSet> {
        let scenario = &self.core.scenario;
        let n = scenario.val_samples.max(2);
        let mut val = ValidationSet::new();
        for &layer in layers {
            if layer >= scenario.layers {
                return Err(UlxError::Config(format!(
                    "validation layer {layer} outside 0..{}",
                    scenario.layers
                )));
            }
            let mut bases: Vec<Vector> = Vec::with_capacity(n);
            for i in 0..n {
                let mut s = Stream::derive(
                    scenario.seed,
                    Purpose::Validation,
                    &[layer as u64, i as u64],
                );
                bases.push(Vector::from_raw(
                    (0..scenario.dim).map(|_| s.next_gaussian()).collect(),
                ));
            }
            let mut mean = Vector::zeros(scenario.dim);
            for b in &bases {
                mean.axpy(1.0 / n as f64, b);
            }
            for (i, b) in bases.iter().enumerate() {
                let centered = b.sub(&mean);
                for lang in &self.caps.languages {
                    let mut state = centered.add(&self.core.offsets[lang]);
                    if scenario.sigma_eps > 0.0 {
                        let mut s = Stream::derive(
                            scenario.seed,
                            Purpose::Validation,
                            &[0xE75, layer as u64, i as u64, Stream::key_of(lang.as_str())],
                        );
                        for x in state.0.iter_mut() {
                            *x += scenario.sigma_eps * s.next_gaussian();
                        }
                    }
                    val.push(format!("v{i:03}"), lang.clone(), layer, state);
                }
            }
        }
        Ok(val)
    }
}

impl HiddenStateProvider for SyntheticProvider {
    fn caps(&self) -> &ProviderCaps {
        &self.caps
    }

    fn source_language(&self) -> Option<LanguageId> {
        LanguageId::new(self.core.scenario.source()).ok()
    }

    fn rendition_state(&self, language: &LanguageId, layer: usize) -> Result<Vector> {
        let scenario = &self.core.scenario;
        if layer >= scenario.layers {
            return Err(UlxError::Backend {
                path: language.to_string(),
                message: format!("layer {layer} outside 0..{}", scenario.layers),
            });
        }
        let offset = self
            .core
            .offsets
            .get(language)
            .ok_or_else(|| UlxError::Backend {
                path: language.to_string(),
                message: "unknown language".into(),
            })?;
        // Query understanding state: a fixed per-layer vector shared by all
        // renditions, plus the language offset and small noise.
        let mut s = Stream::derive(scenario.seed, Purpose::Scenario, &[0x9E4D, layer as u64]);
        let mut state: Vec<f64> = (0..scenario.dim).map(|_| s.next_gaussian()).collect();
        for (x, o) in state.iter_mut().zip(offset.as_slice()) {
            *x += o;
        }
        if let Some(scale) = scenario.misaligned.get(language.as_str()) {
            let mut m = Stream::derive(
                scenario.seed,
                Purpose::Scenario,
                &[0x3155, Stream::key_of(language.as_str())],
            );
            for x in state.iter_mut() {
                *x += scale * m.next_gaussian();
            }
        }
        if scenario.sigma_eps > 0.0 {
            let mut nz = Stream::derive(
                scenario.seed,
                Purpose::PathNoise,
                &[0x4E0D, Stream::key_of(language.as_str()), layer as u64],
            );
            for x in state.iter_mut() {
                *x += scenario.sigma_eps * nz.next_gaussian();
            }
        }
        Ok(Vector::from_raw(state))
    }

    fn open_path(&self, path: &PathId, monitored_layers: &[usize]) -> Result<Box<dyn PathStream>> {
        let scenario = &self.core.scenario;
        if !self.core.offsets.contains_key(path.language()) {
            return Err(UlxError::Backend {
                path: path.to_string(),
                message: "unknown language".into(),
            });
        }
        for &m in monitored_layers {
            if m >= scenario.layers {
                return Err(UlxError::Backend {
                    path: path.to_string(),
                    message: format!("monitored layer {m} outside 0..{}", scenario.layers),
                });
            }
        }
        Ok(Box::new(SyntheticStream {
            core: Arc::clone(&self.core),
            path: path.clone(),
            path_key: Stream::key_of(&path.to_string()),
            monitored: monitored_layers.to_vec(),
            drifting: self.is_drifting(path.language()),
            answer: scenario.answer_for(path.language().as_str()),
            t: 0,
            walks: monitored_layers
                .iter()
                .map(|&m| (m, Vector::zeros(scenario.dim)))
                .collect(),
        }))
    }

    fn full_length(&self, _path: &PathId) -> Result<usize> {
        Ok(self.core.scenario.max_len)
    }
}

struct SyntheticStream {
    core: Arc<Core>,
    path: PathId,
    path_key: u64,
    monitored: Vec<usize>,
    drifting: bool,
    answer: String,
    t: usize,
    /// Per-layer random-walk accumulators for drifting paths.
    walks: BTreeMap<usize, Vector>,
}

impl PathStream for SyntheticStream {
    fn step(&mut self) -> Result<StepEvent> {
        let scenario = &self.core.scenario;
        let max_len = scenario.max_len;
        if self.t >= max_len {
            return Err(UlxError::State(format!(
                "path {} stepped past the end of its {max_len}-step stream",
                self.path
            )));
        }
        let t = self.t;
        let offset = &self.core.offsets[self.path.language()];
        let mut states = BTreeMap::new();
        for &layer in &self.monitored {
            let mut state = self.core.signal_at(t, layer);
            state.axpy(1.0, offset);
            if self.drifting && scenario.sigma_w > 0.0 {
                let scale = scenario.sigma_w / (scenario.dim as f64).sqrt();
                let mut s = Stream::derive(
                    scenario.seed,
                    Purpose::PathDrift,
                    &[self.path_key, t as u64, layer as u64],
                );
                let walk = self.walks.get_mut(&layer).expect("walk per layer");
                for w in walk.0.iter_mut() {
                    *w += scale * s.next_gaussian();
                }
                state.axpy(1.0, walk);
            }
            if scenario.sigma_eps > 0.0 {
                let mut s = Stream::derive(
                    scenario.seed,
                    Purpose::PathNoise,
                    &[self.path_key, t as u64, layer as u64],
                );
                for x in state.0.iter_mut() {
                    *x += scenario.sigma_eps * s.next_gaussian();
                }
            }
            states.insert(layer, state);
        }

        // Final tokens spell the planted answer's bytes; earlier tokens are
        // opaque filler derived from the path stream.
        let answer_bytes = self.answer.as_bytes();
        let answer_start = max_len.saturating_sub(answer_bytes.len());
        let token = if t >= answer_start && t - answer_start < answer_bytes.len() {
            256 + u32::from(answer_bytes[t - answer_start])
        } else {
            let mut s = Stream::derive(
                scenario.seed,
                Purpose::Scenario,
                &[0x70C5, self.path_key, t as u64],
            );
            (s.next_u64() % 50_000) as u32
        };

        self.t += 1;
        Ok(StepEvent {
            token,
            states,
            finished: self.t == max_len,
        })
    }

    fn decode_text(&self) -> String {
        let lang = self.path.language();
        if self.t >= self.core.scenario.max_len {
            format!(
                "<think>{} steps reasoned in {lang}</think>\n\\boxed{{{}}}",
                self.t, self.answer
            )
        } else {
            format!("<think>{} steps reasoned in {lang} (truncated)", self.t)
        }
    }
}

/// Gram-Schmidt an orthonormal d x r basis out of seeded Gaussian vectors.
fn random_orthonormal(dim: usize, rank: usize, seed: u64) -> Mat {
    let mut basis = Mat::zeros(dim, rank);
    let mut col = 0;
    let mut attempt = 0u64;
    while col < rank {
        let mut s = Stream::derive(seed, Purpose::Scenario, &[0xBA55, col as u64, attempt]);
        let mut v: Vec<f64> = (0..dim).map(|_| s.next_gaussian()).collect();
        for _ in 0..2 {
            for prev in 0..col {
                let pcol = basis.col(prev);
                let proj: f64 = pcol.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (x, p) in v.iter_mut().zip(pcol) {
                    *x -= proj * p;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            attempt += 1;
            continue;
        }
        for (i, x) in v.iter().enumerate() {
            basis.set(i, col, x / norm);
        }
        col += 1;
        attempt = 0;
    }
    basis
}
