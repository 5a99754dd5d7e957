//! Hidden-state providers behind one contract: a synthetic multilingual
//! generator with planted ground truth, and a replayer over recorded traces.

pub mod synthetic;
pub mod trace;

pub use synthetic::{SyntheticProvider, SyntheticScenario};
pub use trace::{record_traces, write_validation_traces, TraceFile, TraceProvider};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Result, UlxError};
use crate::logic_space::LanguageId;
use crate::numerics::Vector;

/// One decoding path. Usually just a language; mono-mode ablations decode
/// several replicas of the query language, distinguished by an index.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PathId {
    language: LanguageId,
    replica: Option<u32>,
}

impl PathId {
    pub fn for_language(language: LanguageId) -> Self {
        PathId {
            language,
            replica: None,
        }
    }

    pub fn replica(language: LanguageId, index: u32) -> Self {
        PathId {
            language,
            replica: Some(index),
        }
    }

    pub fn language(&self) -> &LanguageId {
        &self.language
    }

    pub fn replica_index(&self) -> Option<u32> {
        self.replica
    }
}

impl fmt::Display for PathId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.replica {
            None => write!(f, "{}", self.language),
            Some(i) => write!(f, "{}#{i}", self.language),
        }
    }
}

impl FromStr for PathId {
    type Err = UlxError;
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once('#') {
            None => Ok(PathId::for_language(LanguageId::new(s)?)),
            Some((code, idx)) => {
                let replica = idx.parse::<u32>().map_err(|_| {
                    UlxError::Config(format!("bad replica index in path id {s:?}"))
                })?;
                Ok(PathId::replica(LanguageId::new(code)?, replica))
            }
        }
    }
}

impl Serialize for PathId {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PathId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(de::Error::custom)
    }
}

/// What a provider can serve.
#[derive(Debug, Clone)]
pub struct ProviderCaps {
    pub dim: usize,
    pub layers: usize,
    pub languages: Vec<LanguageId>,
}

/// Output of one decode step: the sampled token and the hidden states of the
/// requested layers, position-specific (the orchestrator keeps the running
/// position averages itself).
#[derive(Debug, Clone)]
pub struct StepEvent {
    pub token: u32,
    pub states: BTreeMap<usize, Vector>,
    pub finished: bool,
}

/// One path's token/state stream. Single-consumer; deterministic given the
/// provider seed, the path id, and the step index.
pub trait PathStream {
    fn step(&mut self) -> Result<StepEvent>;
    /// Text decoded so far (provider-supplied; token ids stay opaque).
    fn decode_text(&self) -> String;
}

/// Hidden-state provider contract. Streams are independently owned per path;
/// the provider itself is immutable and may be shared.
pub trait HiddenStateProvider {
    fn caps(&self) -> &ProviderCaps;

    /// Language the query was posed in, when the backend knows it.
    fn source_language(&self) -> Option<LanguageId> {
        None
    }

    /// Last-token hidden state of this language's rendition of the query at
    /// the given layer (no decoding involved).
    fn rendition_state(&self, language: &LanguageId, layer: usize) -> Result<Vector>;

    /// Open the decode stream for a path, reporting states for
    /// `monitored_layers` at every step.
    fn open_path(&self, path: &PathId, monitored_layers: &[usize]) -> Result<Box<dyn PathStream>>;

    /// Steps this path would take if decoded to its natural end (used for
    /// baseline cost accounting; replay knows this from the file, the
    /// synthetic generator from its max length).
    fn full_length(&self, path: &PathId) -> Result<usize>;
}
