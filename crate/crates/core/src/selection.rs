//! Candidate language selection: rank each language's rendition of the query
//! by understanding similarity in the unified logic space, keep the top k.

use std::collections::BTreeMap;

use crate::error::{Result, UlxError};
use crate::logic_space::{LanguageId, LogicSpaceModel};
use crate::numerics::{cosine, Vector};

/// Last-token hidden states of semantically equivalent renditions of one
/// query, at the analysis layer, keyed by language.
#[derive(Debug, Clone)]
pub struct QueryRenditions {
    pub source: LanguageId,
    pub states: BTreeMap<LanguageId, Vector>,
}

impl QueryRenditions {
    pub fn new(source: LanguageId, states: BTreeMap<LanguageId, Vector>) -> Result<Self> {
        if states.is_empty() {
            return Err(UlxError::Coverage(0, "no rendition states".into()));
        }
        if !states.contains_key(&source) {
            return Err(UlxError::Coverage(
                1,
                format!("(query, {source}) source rendition missing"),
            ));
        }
        Ok(QueryRenditions { source, states })
    }
}

/// Ranked candidate languages with their scores, descending.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub entries: Vec<(LanguageId, f64)>,
    pub k: usize,
}

impl CandidateSet {
    pub fn languages(&self) -> Vec<LanguageId> {
        self.entries.iter().map(|(l, _)| l.clone()).collect()
    }

    pub fn contains(&self, lang: &LanguageId) -> bool {
        self.entries.iter().any(|(l, _)| l == lang)
    }
}

/// Understanding similarity score: cosine of the two projected states.
pub fn uss(model: &LogicSpaceModel, h_src: &Vector, h_tgt: &Vector) -> Result<f64> {
    let a = model.project(h_src)?;
    let b = model.project(h_tgt)?;
    cosine(&a, &b)
}

/// Rank all rendition languages by USS against the source rendition and keep
/// the top `min(k, |L|)`. Ties break by ascending language id. When
/// `pin_source` is set the source language always survives, displacing the
/// lowest-ranked pick if necessary.
pub fn select_candidates(
    model: &LogicSpaceModel,
    query: &QueryRenditions,
    k: usize,
    pin_source: bool,
) -> Result<CandidateSet> {
    if k == 0 {
        return Err(UlxError::Config("selection k must be >= 1".into()));
    }
    let h_src = query
        .states
        .get(&query.source)
        .ok_or_else(|| UlxError::Coverage(1, format!("(query, {})", query.source)))?;

    let mut scored: Vec<(LanguageId, f64)> = Vec::with_capacity(query.states.len());
    for (lang, h) in &query.states {
        scored.push((lang.clone(), uss(model, h_src, h)?));
    }
    // Descending score, ascending id on ties. BTreeMap iteration already
    // yields ascending ids, and the sort is stable.
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());

    let take = k.min(scored.len());
    let mut entries: Vec<(LanguageId, f64)> = scored[..take].to_vec();
    if pin_source && !entries.iter().any(|(l, _)| *l == query.source) {
        let src_entry = scored
            .iter()
            .find(|(l, _)| *l == query.source)
            .cloned()
            .expect("source present in states");
        entries.pop();
        entries.push(src_entry);
        entries.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    }
    Ok(CandidateSet { entries, k })
}
