//! Per-query pipeline: selection, lockstep decoding with warm-up and
//! divergence monitoring, windowed scoring, pruning at the window end,
//! free-running completion of survivors, answer extraction, voting, and
//! token/latency accounting against the full-enumeration cost.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backends::{HiddenStateProvider, PathId, PathStream};
use crate::error::{Result, UlxError};
use crate::logic_space::{LanguageId, LogicSpaceModel};
use crate::numerics::Vector;
use crate::pruning::{
    accumulate_lqs, curvature, divergence_test, finalize_pruning, k_prime, step_score,
    CohortStats, CurvatureSample, PruningConfig,
};
use crate::selection::{select_candidates, uss, QueryRenditions};

pub const REPORT_SCHEMA: &str = "ulx-report/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    UlXcot,
    FullBaseline,
    /// Monolingual ablation: replicas of the query language share the same
    /// monitoring and pruning machinery.
    Mono,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::UlXcot => f.write_str("ul-xcot"),
            Mode::FullBaseline => f.write_str("full-baseline"),
            Mode::Mono => f.write_str("mono"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSettings {
    pub mode: Mode,
    /// Subset of the provider's languages to consider (None: all of them).
    pub languages: Option<Vec<LanguageId>>,
    pub k: usize,
    pub analysis_layer: usize,
    pub pin_source: bool,
    /// Query language; defaults to the first provider language.
    pub source: Option<LanguageId>,
    /// Mono-mode path count.
    pub replicas: usize,
    pub pruning: PruningConfig,
    pub max_len: usize,
    pub seed: u64,
    /// c1: simulated cost of one token on one path.
    pub cost_per_token: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    /// Decoded to its natural end (or the length cap) after pruning.
    Finished,
    /// Emitted its answer before the pruning moment; exempt from pruning.
    FinishedEarly,
    Pruned,
    Errored,
}

impl StopReason {
    pub fn survived(self) -> bool {
        matches!(self, StopReason::Finished | StopReason::FinishedEarly)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectedLanguage {
    pub language: String,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathOutcome {
    pub path: PathId,
    pub language: String,
    /// Tokens generated == completed decode steps.
    pub tokens: u64,
    pub stop_reason: StopReason,
    pub answer: Option<String>,
    pub lqs: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Totals {
    pub tokens: u64,
    /// Cost of decoding every selected path to its natural end.
    pub baseline_tokens: u64,
    pub saved_pct: f64,
    pub simulated_latency: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub query_id: String,
    pub mode: Mode,
    pub seed: u64,
    pub source_language: String,
    pub selected: Vec<SelectedLanguage>,
    pub paths: Vec<PathOutcome>,
    /// One record per monitored step up to the pruning moment.
    pub cohort_log: Vec<CohortStats>,
    /// First step declared divergent, if any.
    pub divergence_step: Option<u64>,
    /// First scored step (divergence step, or the deadline fallback).
    pub window_start: Option<u64>,
    /// The pruning moment T_E; pruned paths stop with exactly this many tokens.
    pub prune_step: Option<u64>,
    pub retained: Vec<PathId>,
    pub vote: Option<String>,
    pub totals: Totals,
    pub cost_per_token: f64,
    /// Hardware-dependent; excluded from the serialized report so identical
    /// (config, seed) runs produce byte-identical files.
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: RunReport = serde_json::from_str(text)?;
        if report.schema != REPORT_SCHEMA {
            return Err(UlxError::Config(format!(
                "unsupported report schema {:?}, expected {REPORT_SCHEMA:?}",
                report.schema
            )));
        }
        Ok(report)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Contents of the last balanced `\boxed{...}` marker, or None when absent
/// or unbalanced.
pub fn extract_answer(text: &str) -> Option<String> {
    const MARKER: &str = r"\boxed{";
    let start = text.rfind(MARKER)?;
    let inner = &text[start + MARKER.len()..];
    let mut depth = 1usize;
    for (i, ch) in inner.char_indices() {
        match ch {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(inner[..i].to_string());
                }
            }
            _ => {}
        }
    }
    None
}

/// Plurality vote over (answer, lqs) pairs. Ties break by higher summed LQS
/// among the tied answers, then by the lexicographically smallest answer.
/// Empty input abstains (None).
pub fn vote(entries: &[(String, u64)]) -> Option<String> {
    if entries.is_empty() {
        return None;
    }
    let mut tally: BTreeMap<&str, (usize, u64)> = BTreeMap::new();
    for (answer, lqs) in entries {
        let e = tally.entry(answer).or_insert((0, 0));
        e.0 += 1;
        e.1 += lqs;
    }
    tally
        .into_iter()
        .max_by(|a, b| {
            (a.1 .0)
                .cmp(&b.1 .0)
                .then((a.1 .1).cmp(&b.1 .1))
                .then(b.0.cmp(a.0)) // smaller string wins on full tie
        })
        .map(|(answer, _)| answer.to_string())
}

/// Simulated latency: every lockstep step costs `cost_per_token` per active
/// path; after the pruning moment survivors free-run in parallel, so the
/// tail costs the maximum remaining length.
pub fn simulate_latency(report: &RunReport) -> f64 {
    let c1 = report.cost_per_token;
    let lockstep_end = report
        .prune_step
        .unwrap_or_else(|| report.paths.iter().map(|p| p.tokens).max().unwrap_or(0));
    let mut lockstep_cost = 0.0;
    for t in 0..lockstep_end {
        let active = report.paths.iter().filter(|p| p.tokens > t).count();
        lockstep_cost += c1 * active as f64;
    }
    let tail = report
        .paths
        .iter()
        .map(|p| p.tokens.saturating_sub(lockstep_end))
        .max()
        .unwrap_or(0);
    lockstep_cost + c1 * tail as f64
}

enum Status {
    Active,
    Finished { early: bool },
    Pruned,
    Errored(String),
}

struct PathRun {
    id: PathId,
    stream: Box<dyn PathStream>,
    tokens: u64,
    /// Running sum of projected states per monitored layer.
    sums: BTreeMap<usize, Vector>,
    history: Vec<CurvatureSample>,
    status: Status,
    lqs: u64,
}

/// Execute one query end to end and assemble its report.
pub fn run(
    query_id: &str,
    provider: &dyn HiddenStateProvider,
    models: &BTreeMap<usize, LogicSpaceModel>,
    settings: &RunSettings,
) -> Result<RunReport> {
    let started = Instant::now();
    settings.pruning.validate()?;
    if settings.max_len == 0 {
        return Err(UlxError::Config("max_len must be >= 1".into()));
    }
    if settings.k == 0 {
        return Err(UlxError::Config("k must be >= 1".into()));
    }
    let monitored = settings.pruning.monitored_layers();
    let caps = provider.caps();
    if settings.analysis_layer >= caps.layers
        || *monitored.last().expect("nonempty range") >= caps.layers
    {
        return Err(UlxError::Config(format!(
            "analysis layer {} / monitored [{}, {}] outside provider's {} layers",
            settings.analysis_layer,
            settings.pruning.layer_lo,
            settings.pruning.layer_hi,
            caps.layers
        )));
    }
    let analysis_model = models.get(&settings.analysis_layer).ok_or_else(|| {
        UlxError::Config(format!("no model for analysis layer {}", settings.analysis_layer))
    })?;
    for m in &monitored {
        if !models.contains_key(m) {
            return Err(UlxError::Config(format!("no model for monitored layer {m}")));
        }
    }

    // Stage 1-2: renditions and candidate selection.
    let run_languages: Vec<LanguageId> = match &settings.languages {
        Some(subset) => subset.clone(),
        None => caps.languages.clone(),
    };
    let source = match &settings.source {
        Some(s) => s.clone(),
        None => run_languages
            .first()
            .cloned()
            .ok_or_else(|| UlxError::Config("run has no languages".into()))?,
    };
    if !run_languages.contains(&source) {
        return Err(UlxError::Config(format!(
            "source language {source} not in the run's language set"
        )));
    }
    let mut states = BTreeMap::new();
    for lang in &run_languages {
        states.insert(
            lang.clone(),
            provider.rendition_state(lang, settings.analysis_layer)?,
        );
    }
    let renditions = QueryRenditions::new(source.clone(), states)?;

    let effective_rho = match settings.mode {
        Mode::FullBaseline => 0.0,
        _ => settings.pruning.rho,
    };
    let (selected, path_ids): (Vec<SelectedLanguage>, Vec<PathId>) = match settings.mode {
        Mode::UlXcot | Mode::FullBaseline => {
            let k = match settings.mode {
                Mode::FullBaseline => run_languages.len(),
                _ => settings.k,
            };
            let candidates =
                select_candidates(analysis_model, &renditions, k, settings.pin_source)?;
            let selected = candidates
                .entries
                .iter()
                .map(|(l, s)| SelectedLanguage {
                    language: l.as_str().to_string(),
                    score: *s,
                })
                .collect();
            let mut ids: Vec<PathId> = candidates
                .entries
                .iter()
                .map(|(l, _)| PathId::for_language(l.clone()))
                .collect();
            ids.sort();
            (selected, ids)
        }
        Mode::Mono => {
            let h_src = &renditions.states[&source];
            let score = uss(analysis_model, h_src, h_src)?;
            let replicas = settings.replicas.max(1);
            let ids = (0..replicas as u32)
                .map(|i| PathId::replica(source.clone(), i))
                .collect();
            (
                vec![SelectedLanguage {
                    language: source.as_str().to_string(),
                    score,
                }],
                ids,
            )
        }
    };

    // Stage 3: lockstep decode with monitoring.
    let mut paths: Vec<PathRun> = Vec::with_capacity(path_ids.len());
    for id in &path_ids {
        let stream = provider.open_path(id, &monitored)?;
        paths.push(PathRun {
            id: id.clone(),
            stream,
            tokens: 0,
            sums: monitored
                .iter()
                .map(|&m| (m, Vector::zeros(caps.dim)))
                .collect(),
            history: Vec::new(),
            status: Status::Active,
            lqs: 0,
        });
    }

    let initial_k_prime = k_prime(effective_rho, paths.len());
    let mut t: u64 = 0;
    let mut monitor_log: Vec<CohortStats> = Vec::new();
    let mut scored: Vec<CohortStats> = Vec::new();
    let mut divergence_step: Option<u64> = None;
    let mut window_start: Option<u64> = None;
    let mut window_len: u64 = 0;
    let mut prune_step: Option<u64> = None;
    let mut retained_set: BTreeSet<PathId> = BTreeSet::new();
    let mut pruning_done = false;

    loop {
        let mut any_active = false;
        for path in paths.iter_mut() {
            if !matches!(path.status, Status::Active) {
                continue;
            }
            any_active = true;
            match path.stream.step() {
                Err(e) => {
                    // A failing path never crashes the cohort; it is treated
                    // as pruned at its last completed step.
                    path.status = Status::Errored(e.to_string());
                    continue;
                }
                Ok(ev) => {
                    path.tokens = t + 1;
                    let mut projection_failure = None;
                    for (layer, state) in &ev.states {
                        match models[layer].project(state) {
                            Ok(proj) => {
                                path.sums.get_mut(layer).expect("monitored layer").axpy(1.0, &proj)
                            }
                            Err(e) => {
                                projection_failure = Some(e.to_string());
                                break;
                            }
                        }
                    }
                    if let Some(msg) = projection_failure {
                        path.status = Status::Errored(msg);
                        continue;
                    }
                    if ev.finished || path.tokens as usize >= settings.max_len {
                        path.status = Status::Finished {
                            early: !pruning_done,
                        };
                    }
                }
            }
        }
        if !any_active {
            break;
        }
        if paths
            .iter()
            .all(|p| matches!(p.status, Status::Errored(_)))
        {
            return Err(UlxError::AllPathsErrored);
        }

        if !pruning_done && t >= settings.pruning.t_warm {
            let mut kappas: BTreeMap<PathId, f64> = BTreeMap::new();
            for path in paths.iter_mut() {
                if !matches!(path.status, Status::Active) {
                    continue;
                }
                let layer_states: Vec<Vector> = monitored
                    .iter()
                    .map(|m| path.sums[m].scaled(1.0 / path.tokens as f64))
                    .collect();
                let sample = curvature(t, &layer_states, settings.pruning.delta)?;
                kappas.insert(path.id.clone(), sample.kappa);
                path.history.push(sample);
            }
            if !kappas.is_empty() {
                let mut stats = divergence_test(t, &kappas, &settings.pruning);
                if stats.divergent && divergence_step.is_none() {
                    divergence_step = Some(t);
                }
                if window_start.is_none()
                    && (stats.divergent
                        || t >= settings.pruning.t_warm + settings.pruning.score_deadline)
                {
                    window_start = Some(t);
                    window_len = settings.pruning.window_len(t);
                }
                if let Some(ws) = window_start {
                    if t >= ws && t <= ws + window_len {
                        step_score(&mut stats, initial_k_prime, settings.seed)?;
                        scored.push(stats.clone());
                    }
                }
                monitor_log.push(stats);
                if window_start.is_some_and(|ws| t == ws + window_len) {
                    // End of the scoring window: prune before the next token.
                    let all_ids: BTreeSet<PathId> = paths.iter().map(|p| p.id.clone()).collect();
                    let lqs_all = accumulate_lqs(&all_ids, &scored, scored.len())?;
                    for path in paths.iter_mut() {
                        path.lqs = lqs_all[&path.id];
                    }
                    let active_ids: BTreeSet<PathId> = paths
                        .iter()
                        .filter(|p| matches!(p.status, Status::Active))
                        .map(|p| p.id.clone())
                        .collect();
                    if !active_ids.is_empty() {
                        let lqs_active: BTreeMap<PathId, u64> = lqs_all
                            .iter()
                            .filter(|(p, _)| active_ids.contains(*p))
                            .map(|(p, v)| (p.clone(), *v))
                            .collect();
                        let mean_g = window_mean_centrality(&scored, &active_ids);
                        retained_set = finalize_pruning(&lqs_active, &mean_g, effective_rho);
                        for path in paths.iter_mut() {
                            if matches!(path.status, Status::Active)
                                && !retained_set.contains(&path.id)
                            {
                                path.status = Status::Pruned;
                            }
                        }
                    }
                    prune_step = Some(t + 1);
                    pruning_done = true;
                }
            }
        }
        t += 1;
    }

    // Stage 4: answers, vote, accounting.
    let mut outcomes = Vec::with_capacity(paths.len());
    let mut vote_entries: Vec<(String, u64)> = Vec::new();
    let mut total_tokens = 0u64;
    let mut baseline_tokens = 0u64;
    for path in &paths {
        let text = path.stream.decode_text();
        let answer = extract_answer(&text);
        let (stop_reason, error) = match &path.status {
            Status::Finished { early: true } if prune_step.is_some() => {
                (StopReason::FinishedEarly, None)
            }
            Status::Finished { .. } => (StopReason::Finished, None),
            Status::Pruned => (StopReason::Pruned, None),
            Status::Errored(msg) => (StopReason::Errored, Some(msg.clone())),
            Status::Active => {
                return Err(UlxError::State(format!(
                    "path {} still active after decode loop",
                    path.id
                )))
            }
        };
        if stop_reason.survived() {
            if let Some(a) = &answer {
                vote_entries.push((a.clone(), path.lqs));
            }
        }
        total_tokens += path.tokens;
        baseline_tokens += provider.full_length(&path.id)?.min(settings.max_len) as u64;
        outcomes.push(PathOutcome {
            path: path.id.clone(),
            language: path.id.language().as_str().to_string(),
            tokens: path.tokens,
            stop_reason,
            answer,
            lqs: path.lqs,
            error,
        });
    }
    let vote_result = vote(&vote_entries);

    let saved_pct = if baseline_tokens > 0 {
        100.0 * (1.0 - total_tokens as f64 / baseline_tokens as f64)
    } else {
        0.0
    };
    let mut report = RunReport {
        schema: REPORT_SCHEMA.to_string(),
        query_id: query_id.to_string(),
        mode: settings.mode,
        seed: settings.seed,
        source_language: source.as_str().to_string(),
        selected,
        paths: outcomes,
        cohort_log: monitor_log,
        divergence_step,
        window_start,
        prune_step,
        retained: retained_set.into_iter().collect(),
        vote: vote_result,
        totals: Totals {
            tokens: total_tokens,
            baseline_tokens,
            saved_pct,
            simulated_latency: 0.0,
        },
        cost_per_token: settings.cost_per_token,
        wall_clock_seconds: 0.0,
    };
    report.totals.simulated_latency = simulate_latency(&report);
    report.wall_clock_seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

/// Mean centrality per path over the scored window (steps where the path was
/// still in the cohort).
fn window_mean_centrality(
    scored: &[CohortStats],
    paths: &BTreeSet<PathId>,
) -> BTreeMap<PathId, f64> {
    let mut sums: BTreeMap<PathId, (f64, usize)> = BTreeMap::new();
    for step in scored {
        for (path, g) in &step.centrality {
            if paths.contains(path) {
                let e = sums.entry(path.clone()).or_insert((0.0, 0));
                e.0 += g;
                e.1 += 1;
            }
        }
    }
    sums.into_iter()
        .map(|(p, (sum, n))| (p, sum / n.max(1) as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extract_answer_takes_last_marker() {
        assert_eq!(extract_answer("reasoning... \\boxed{42}").as_deref(), Some("42"));
        assert_eq!(extract_answer("\\boxed{a}\\boxed{b}").as_deref(), Some("b"));
    }

    #[test]
    fn extract_answer_balances_braces() {
        assert_eq!(
            extract_answer("\\boxed{\\frac{1}{2}}").as_deref(),
            Some("\\frac{1}{2}")
        );
        assert_eq!(extract_answer("\\boxed{\\frac{1}{2}"), None);
        assert_eq!(extract_answer("no marker here"), None);
    }

    #[test]
    fn vote_majority_and_singleton() {
        let entries = vec![
            ("A".to_string(), 0),
            ("A".to_string(), 0),
            ("B".to_string(), 9),
        ];
        assert_eq!(vote(&entries).as_deref(), Some("A"));
        assert_eq!(vote(&[("A".to_string(), 1)]).as_deref(), Some("A"));
        assert_eq!(vote(&[]), None);
    }

    #[test]
    fn vote_tie_breaks_by_lqs_then_lexicographic() {
        let entries = vec![("A".to_string(), 3), ("B".to_string(), 1)];
        assert_eq!(vote(&entries).as_deref(), Some("A"));
        let entries = vec![("B".to_string(), 3), ("A".to_string(), 1)];
        assert_eq!(vote(&entries).as_deref(), Some("B"));
        let entries = vec![("B".to_string(), 2), ("A".to_string(), 2)];
        assert_eq!(vote(&entries).as_deref(), Some("A"));
    }

    #[test]
    fn latency_formula_matches_worked_example() {
        // 10 paths, T_E = 14, 5 pruned at 14, survivors run to 200.
        let mk = |tokens: u64, reason: StopReason| PathOutcome {
            path: "xx".parse().unwrap(),
            language: "xx".into(),
            tokens,
            stop_reason: reason,
            answer: None,
            lqs: 0,
            error: None,
        };
        let mut paths = Vec::new();
        for i in 0..5 {
            let mut p = mk(14, StopReason::Pruned);
            p.path = format!("p{i}").parse().unwrap();
            paths.push(p);
        }
        for i in 0..5 {
            let mut p = mk(200, StopReason::Finished);
            p.path = format!("s{i}").parse().unwrap();
            paths.push(p);
        }
        let report = RunReport {
            schema: REPORT_SCHEMA.into(),
            query_id: "q".into(),
            mode: Mode::UlXcot,
            seed: 0,
            source_language: "en".into(),
            selected: vec![],
            paths,
            cohort_log: vec![],
            divergence_step: Some(10),
            window_start: Some(10),
            prune_step: Some(14),
            retained: vec![],
            vote: None,
            totals: Totals {
                tokens: 1070,
                baseline_tokens: 2000,
                saved_pct: 46.5,
                simulated_latency: 0.0,
            },
            cost_per_token: 1.0,
            wall_clock_seconds: 0.0,
        };
        // 14 * 10 + (200 - 14) = 326 cost units.
        assert_eq!(simulate_latency(&report), 326.0);
    }
}
