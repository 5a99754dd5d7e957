//! Efficient cross-lingual chain-of-thought at simulation scale.
//!
//! The pipeline: fit a language-invariant logic space from hidden states,
//! select a query-adaptive candidate language set, decode candidates in
//! lockstep while monitoring trajectory curvature, prune low-quality paths
//! at the end of a scoring window, vote over surviving answers, and account
//! for token/latency savings against a full-enumeration baseline. Hidden
//! states come from pluggable providers: a synthetic generator with planted
//! ground truth and an offline trace replayer.

pub mod backends;
pub mod config;
pub mod error;
pub mod logic_space;
pub mod numerics;
pub mod orchestrator;
pub mod pruning;
pub mod rng;
pub mod selection;
pub mod sweep;

pub use error::{Result, UlxError};
pub use logic_space::{LanguageId, LogicSpaceModel, ValidationSet};
pub use numerics::{angle, cosine, svd, Mat, Vector};
pub use orchestrator::{extract_answer, run, simulate_latency, vote, RunReport};
pub use pruning::{CohortStats, CurvatureSample, PruningConfig};
pub use selection::{select_candidates, uss, CandidateSet, QueryRenditions};
