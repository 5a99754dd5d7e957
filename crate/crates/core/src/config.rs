//! Run configuration: the "ulx-config/1" file schema, defaults, validation,
//! and the driver that turns a config into a finished report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backends::{HiddenStateProvider, SyntheticProvider, TraceProvider};
use crate::error::{Result, UlxError};
use crate::logic_space::{LanguageId, LogicSpaceModel};
use crate::orchestrator::{run, Mode, RunReport, RunSettings};
use crate::pruning::PruningConfig;

pub const CONFIG_SCHEMA: &str = "ulx-config/1";

pub const DEFAULT_LAMBDA: f64 = 0.4;
pub const DEFAULT_ANALYSIS_LAYER: usize = 13;
pub const DEFAULT_RANK: usize = 4;
pub const DEFAULT_K: usize = 9;
pub const DEFAULT_T_WARM: u64 = 10;
pub const DEFAULT_RHO: f64 = 0.6;

fn d_mode() -> Mode {
    Mode::UlXcot
}
fn d_k() -> usize {
    DEFAULT_K
}
fn d_rho() -> f64 {
    DEFAULT_RHO
}
fn d_t_warm() -> u64 {
    DEFAULT_T_WARM
}
fn d_tau() -> u64 {
    12
}
fn d_eps_abs() -> f64 {
    0.05
}
fn d_eps_rel() -> f64 {
    0.5
}
fn d_gamma() -> f64 {
    1.1
}
fn d_delta() -> f64 {
    1e-8
}
fn d_lambda() -> f64 {
    DEFAULT_LAMBDA
}
fn d_rank() -> usize {
    DEFAULT_RANK
}
fn d_analysis_layer() -> usize {
    DEFAULT_ANALYSIS_LAYER
}
fn d_max_len() -> usize {
    100_000
}
fn d_deadline() -> u64 {
    32
}
fn d_cost() -> f64 {
    1.0
}

/// Where hidden states come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BackendSpec {
    /// Synthetic scenario file.
    Synthetic { scenario: PathBuf },
    /// One query's trace directory (`<dir>/<path>.ultrace`).
    Trace { dir: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    #[serde(default = "d_mode")]
    pub mode: Mode,
    /// Restrict the run to this language subset of the backend's set.
    #[serde(default)]
    pub languages: Option<Vec<String>>,
    /// Candidate set size for selection.
    #[serde(default = "d_k")]
    pub k: usize,
    #[serde(default = "d_rho")]
    pub rho: f64,
    #[serde(default = "d_t_warm")]
    pub t_warm: u64,
    #[serde(default = "d_tau")]
    pub tau: u64,
    #[serde(default = "d_eps_abs")]
    pub eps_abs: f64,
    #[serde(default = "d_eps_rel")]
    pub eps_rel: f64,
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    #[serde(default = "d_delta")]
    pub delta: f64,
    /// Shrinkage for auto-fitted models (model files carry their own).
    #[serde(default = "d_lambda")]
    pub lambda: f64,
    #[serde(default = "d_rank")]
    pub rank: usize,
    #[serde(default = "d_analysis_layer")]
    pub analysis_layer: usize,
    /// Inclusive monitored layer range; defaults to the middle third of the
    /// backend's layer count.
    #[serde(default)]
    pub monitored_layers: Option<(usize, usize)>,
    #[serde(default = "d_max_len")]
    pub max_len: usize,
    pub seed: u64,
    pub backend: BackendSpec,
    /// Logic-space model files (one per layer). When absent, models are
    /// fitted from the synthetic backend's validation states.
    #[serde(default)]
    pub models: Option<Vec<PathBuf>>,
    #[serde(default = "d_deadline")]
    pub score_deadline: u64,
    #[serde(default)]
    pub pin_source: bool,
    #[serde(default)]
    pub proportional_window: bool,
    /// Query language override.
    #[serde(default)]
    pub source_language: Option<String>,
    /// Mono-mode replica count (defaults to k).
    #[serde(default)]
    pub replicas: Option<usize>,
    #[serde(default = "d_cost")]
    pub cost_per_token: f64,
}

impl RunConfig {
    /// A minimal config for a synthetic scenario; fields hold the documented
    /// defaults and can be adjusted before `execute`.
    pub fn synthetic(scenario: impl Into<PathBuf>, seed: u64) -> Self {
        RunConfig {
            schema: CONFIG_SCHEMA.to_string(),
            mode: d_mode(),
            languages: None,
            k: d_k(),
            rho: d_rho(),
            t_warm: d_t_warm(),
            tau: d_tau(),
            eps_abs: d_eps_abs(),
            eps_rel: d_eps_rel(),
            gamma: d_gamma(),
            delta: d_delta(),
            lambda: d_lambda(),
            rank: d_rank(),
            analysis_layer: d_analysis_layer(),
            monitored_layers: None,
            max_len: d_max_len(),
            seed,
            backend: BackendSpec::Synthetic {
                scenario: scenario.into(),
            },
            models: None,
            score_deadline: d_deadline(),
            pin_source: false,
            proportional_window: false,
            source_language: None,
            replicas: None,
            cost_per_token: d_cost(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(UlxError::Config(format!(
                "unsupported config schema {:?}, expected {CONFIG_SCHEMA:?}",
                self.schema
            )));
        }
        if self.k == 0 {
            return Err(UlxError::Config("k must be >= 1".into()));
        }
        if self.rank == 0 {
            return Err(UlxError::Config("rank must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(UlxError::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if self.max_len == 0 {
            return Err(UlxError::Config("max_len must be >= 1".into()));
        }
        if let Some((lo, hi)) = self.monitored_layers {
            if hi <= lo {
                return Err(UlxError::Config(format!(
                    "monitored layer range [{lo}, {hi}] needs at least 2 layers"
                )));
            }
        }
        // Range checks owned by the pruning module.
        self.pruning_config(self.monitored_layers.unwrap_or((0, 1)))
            .validate()?;
        Ok(())
    }

    fn pruning_config(&self, (layer_lo, layer_hi): (usize, usize)) -> PruningConfig {
        PruningConfig {
            t_warm: self.t_warm,
            tau: self.tau,
            rho: self.rho,
            eps_abs: self.eps_abs,
            eps_rel: self.eps_rel,
            gamma: self.gamma,
            delta: self.delta,
            layer_lo,
            layer_hi,
            score_deadline: self.score_deadline,
            proportional_window: self.proportional_window,
        }
    }

    /// Middle third of the backend's layer stack.
    fn default_monitored(layers: usize) -> (usize, usize) {
        let lo = layers / 3;
        let hi = (2 * layers) / 3;
        if hi > lo {
            (lo, hi)
        } else {
            (0, layers.saturating_sub(1).max(1))
        }
    }

    pub fn open_provider(&self) -> Result<Box<dyn HiddenStateProvider>> {
        match &self.backend {
            BackendSpec::Synthetic { scenario } => {
                Ok(Box::new(SyntheticProvider::from_file(scenario)?))
            }
            BackendSpec::Trace { dir } => Ok(Box::new(TraceProvider::open(dir)?)),
        }
    }

    /// Query id the report will carry (scenario field, or trace dir name).
    pub fn query_id(&self) -> Result<String> {
        match &self.backend {
            BackendSpec::Synthetic { scenario } => {
                Ok(crate::backends::SyntheticScenario::from_file(scenario)?.query_id)
            }
            BackendSpec::Trace { dir } => Ok(dir
                .file_name()
                .map(|n| n.to_string_lossy().to_string())
                .unwrap_or_else(|| "query".to_string())),
        }
    }

    /// Run the configured pipeline end to end.
    pub fn execute(&self) -> Result<RunReport> {
        match &self.backend {
            BackendSpec::Synthetic { scenario } => {
                let provider = SyntheticProvider::from_file(scenario)?;
                let query_id = provider.query_id().to_string();
                self.execute_with(&provider, &query_id)
            }
            BackendSpec::Trace { dir } => {
                let provider = TraceProvider::open(dir)?;
                let query_id = provider.query_id().to_string();
                self.execute_with(&provider, &query_id)
            }
        }
    }

    /// Run against an already-open provider.
    pub fn execute_with(
        &self,
        provider: &dyn HiddenStateProvider,
        query_id: &str,
    ) -> Result<RunReport> {
        self.validate()?;
        let caps = provider.caps();
        let monitored = self
            .monitored_layers
            .unwrap_or_else(|| Self::default_monitored(caps.layers));
        let pruning = self.pruning_config(monitored);
        pruning.validate()?;

        let mut needed: Vec<usize> = pruning.monitored_layers();
        if !needed.contains(&self.analysis_layer) {
            needed.push(self.analysis_layer);
        }
        let models = self.resolve_models(provider, &needed)?;

        let source = match &self.source_language {
            Some(code) => Some(LanguageId::new(code.clone())?),
            None => self.default_source(provider),
        };
        let languages = match &self.languages {
            None => None,
            Some(codes) => {
                let mut subset = Vec::with_capacity(codes.len());
                for code in codes {
                    let lang = LanguageId::new(code.clone())?;
                    if !caps.languages.contains(&lang) {
                        return Err(UlxError::Config(format!(
                            "configured language {code:?} not served by the backend"
                        )));
                    }
                    subset.push(lang);
                }
                Some(subset)
            }
        };
        let settings = RunSettings {
            mode: self.mode,
            languages,
            k: self.k,
            analysis_layer: self.analysis_layer,
            pin_source: self.pin_source,
            source,
            replicas: self.replicas.unwrap_or(self.k),
            pruning,
            max_len: self.max_len,
            seed: self.seed,
            cost_per_token: self.cost_per_token,
        };
        run(query_id, provider, &models, &settings)
    }

    fn default_source(&self, provider: &dyn HiddenStateProvider) -> Option<LanguageId> {
        provider
            .source_language()
            .or_else(|| provider.caps().languages.first().cloned())
    }

    fn resolve_models(
        &self,
        provider: &dyn HiddenStateProvider,
        needed_layers: &[usize],
    ) -> Result<BTreeMap<usize, LogicSpaceModel>> {
        let mut models = BTreeMap::new();
        if let Some(files) = &self.models {
            for file in files {
                let model = LogicSpaceModel::load(file)?;
                models.insert(model.layer(), model);
            }
        } else {
            match &self.backend {
                BackendSpec::Synthetic { scenario } => {
                    let tmp = SyntheticProvider::from_file(scenario)?;
                    let val = tmp.validation_set(needed_layers)?;
                    for &layer in needed_layers {
                        models.insert(
                            layer,
                            LogicSpaceModel::fit(&val, layer, self.rank, self.lambda)?,
                        );
                    }
                }
                BackendSpec::Trace { .. } => {
                    return Err(UlxError::Config(
                        "trace backends need model files (run `ulx fit` first)".into(),
                    ));
                }
            }
        }
        for layer in needed_layers {
            let model = models.get(layer).ok_or_else(|| {
                UlxError::Config(format!("no model covers layer {layer}"))
            })?;
            if model.dim() != provider.caps().dim {
                return Err(UlxError::Dimension(format!(
                    "model at layer {layer} has dim {}, backend serves {}",
                    model.dim(),
                    provider.caps().dim
                )));
            }
        }
        Ok(models)
    }
}
