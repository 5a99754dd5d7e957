//! Dynamic chain-of-thought pruning: per-step curvature of the layer
//! trajectory in the logic space, cohort divergence detection, windowed
//! point assignment, quality-score accumulation, and top-k' retention.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::backends::PathId;
use crate::error::{Result, UlxError};
use crate::logic_space::LogicSpaceModel;
use crate::numerics::{angle, Vector};
use crate::rng::{Purpose, Stream};

/// Knobs for the monitoring/pruning stage. Defaults follow the operating
/// point used throughout: warm-up 10 steps, fixed window 12, pruning ratio
/// 0.6, with thresholds exposed for calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruningConfig {
    /// Steps with pruning disabled at the start of decoding.
    pub t_warm: u64,
    /// Scoring window length; the window covers tau + 1 steps inclusive.
    pub tau: u64,
    /// Fraction of paths terminated at the pruning moment.
    pub rho: f64,
    /// Absolute spread threshold on kappa.
    pub eps_abs: f64,
    /// Relative spread threshold.
    pub eps_rel: f64,
    /// Concentration factor: divergent only if the max relative spread is at
    /// least gamma times the mean.
    pub gamma: f64,
    /// Stability floor for relative spreads and chord degeneracy.
    pub delta: f64,
    /// First monitored layer.
    pub layer_lo: usize,
    /// Last monitored layer (inclusive); must exceed `layer_lo`.
    pub layer_hi: usize,
    /// If no divergent step shows up within this many steps after warm-up,
    /// scoring starts anyway so pruning always happens.
    pub score_deadline: u64,
    /// Window length proportional to the divergence step (3c) instead of the
    /// fixed tau.
    pub proportional_window: bool,
}

impl Default for PruningConfig {
    fn default() -> Self {
        PruningConfig {
            t_warm: 10,
            tau: 12,
            rho: 0.6,
            eps_abs: 0.05,
            eps_rel: 0.5,
            gamma: 1.1,
            delta: 1e-8,
            layer_lo: 8,
            layer_hi: 16,
            score_deadline: 32,
            proportional_window: false,
        }
    }
}

impl PruningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(UlxError::Config(format!("rho {} outside [0, 1]", self.rho)));
        }
        if self.tau < 1 {
            return Err(UlxError::Config("tau must be >= 1".into()));
        }
        if self.eps_abs <= 0.0 || self.eps_rel <= 0.0 || self.delta <= 0.0 {
            return Err(UlxError::Config(
                "eps_abs, eps_rel, and delta must be positive".into(),
            ));
        }
        if self.gamma < 1.0 {
            return Err(UlxError::Config("gamma must be >= 1".into()));
        }
        if self.layer_hi <= self.layer_lo {
            return Err(UlxError::Config(format!(
                "monitored layer range [{}, {}] needs at least 2 layers",
                self.layer_lo, self.layer_hi
            )));
        }
        Ok(())
    }

    pub fn monitored_layers(&self) -> Vec<usize> {
        (self.layer_lo..=self.layer_hi).collect()
    }

    /// Effective scoring-window length once the window start `c` is known.
    pub fn window_len(&self, c: u64) -> u64 {
        if self.proportional_window {
            (3 * c).max(1)
        } else {
            self.tau
        }
    }
}

/// Survivor count for a cohort of `n` under pruning ratio `rho`.
pub fn k_prime(rho: f64, n: usize) -> usize {
    (((1.0 - rho) * n as f64).round() as usize).max(1)
}

/// Per-step, per-path curvature descriptor across the monitored layers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvatureSample {
    pub step: u64,
    /// L2 change per adjacent layer pair.
    pub delta_m: Vec<f64>,
    /// Angular change per adjacent layer pair.
    pub delta_a: Vec<f64>,
    /// End-to-end L2 chord.
    pub chord_m: f64,
    /// End-to-end angular chord.
    pub chord_a: f64,
    pub r_m: f64,
    pub r_a: f64,
    pub kappa: f64,
}

/// Mean over token positions of the projected states of a prefix at one
/// layer. Summation runs in prefix order, so an incremental running sum
/// reproduces it bit for bit.
pub fn position_averaged_state(prefix_states: &[Vector], model: &LogicSpaceModel) -> Result<Vector> {
    if prefix_states.is_empty() {
        return Err(UlxError::State(
            "position average needs a nonempty prefix".into(),
        ));
    }
    let mut sum = Vector::zeros(model.dim());
    for s in prefix_states {
        sum.axpy(1.0, &model.project(s)?);
    }
    Ok(sum.scaled(1.0 / prefix_states.len() as f64))
}

/// Curvature of the layer trajectory `states[0..]` (position-averaged
/// projected states for consecutive monitored layers). Ratios with a chord
/// below `delta` are zeroed: no net movement means no curvature evidence.
pub fn curvature(step: u64, states: &[Vector], delta: f64) -> Result<CurvatureSample> {
    if states.len() < 2 {
        return Err(UlxError::State(format!(
            "curvature needs >= 2 layers of states, got {}",
            states.len()
        )));
    }
    let mut delta_m = Vec::with_capacity(states.len() - 1);
    let mut delta_a = Vec::with_capacity(states.len() - 1);
    for pair in states.windows(2) {
        delta_m.push(pair[1].sub(&pair[0]).norm());
        delta_a.push(angle(&pair[1], &pair[0])?);
    }
    let first = &states[0];
    let last = &states[states.len() - 1];
    let chord_m = last.sub(first).norm();
    let chord_a = angle(last, first)?;
    let r_m = if chord_m < delta {
        0.0
    } else {
        delta_m.iter().sum::<f64>() / chord_m
    };
    let r_a = if chord_a < delta {
        0.0
    } else {
        delta_a.iter().sum::<f64>() / chord_a
    };
    Ok(CurvatureSample {
        step,
        delta_m,
        delta_a,
        chord_m,
        chord_a,
        r_m,
        r_a,
        kappa: r_m - r_a,
    })
}

/// Cohort-level divergence statistics for one step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CohortStats {
    pub step: u64,
    pub n: usize,
    pub kappas: BTreeMap<PathId, f64>,
    /// Maximum absolute pairwise spread of kappa.
    pub d_max: f64,
    /// Maximum relative pairwise spread.
    pub r_max: f64,
    /// Mean relative spread over unordered pairs.
    pub r_mean: f64,
    pub divergent: bool,
    /// Mean absolute distance to the rest of the cohort, per path.
    pub centrality: BTreeMap<PathId, f64>,
    pub awarded: BTreeSet<PathId>,
}

/// Pairwise spread test: divergent iff the absolute spread, the relative
/// spread, and the concentration condition all hold. A cohort of one path
/// (or none) has no pairs and is never divergent.
pub fn divergence_test(step: u64, kappas: &BTreeMap<PathId, f64>, cfg: &PruningConfig) -> CohortStats {
    let n = kappas.len();
    let values: Vec<f64> = kappas.values().copied().collect();
    let mut d_max = 0.0_f64;
    let mut r_max = 0.0_f64;
    let mut r_sum = 0.0_f64;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = (values[i] - values[j]).abs();
            let denom = values[i].abs().max(values[j].abs()).max(cfg.delta);
            let rel = diff / denom;
            d_max = d_max.max(diff);
            r_max = r_max.max(rel);
            r_sum += rel;
            pairs += 1;
        }
    }
    let r_mean = if pairs > 0 { r_sum / pairs as f64 } else { 0.0 };
    let divergent =
        pairs > 0 && d_max > cfg.eps_abs && r_max > cfg.eps_rel && r_max >= cfg.gamma * r_mean;
    CohortStats {
        step,
        n,
        kappas: kappas.clone(),
        d_max,
        r_max,
        r_mean,
        divergent,
        centrality: BTreeMap::new(),
        awarded: BTreeSet::new(),
    }
}

/// Mean absolute kappa distance to every other path; 0 for a singleton.
pub fn centrality(kappas: &BTreeMap<PathId, f64>) -> Result<BTreeMap<PathId, f64>> {
    if kappas.is_empty() {
        return Err(UlxError::State("centrality needs at least one path".into()));
    }
    let n = kappas.len();
    let mut g = BTreeMap::new();
    for (path, &k) in kappas {
        let sum: f64 = kappas
            .iter()
            .filter(|(other, _)| *other != path)
            .map(|(_, &k2)| (k - k2).abs())
            .sum();
        g.insert(path.clone(), sum / (n - 1).max(1) as f64);
    }
    Ok(g)
}

/// Assign this step's points: on a non-divergent step a uniformly random
/// `K_t'`-subset drawn from the per-(seed, step) substream; on a divergent
/// step the `K_t'` most central paths (smallest g, ties by ascending path
/// id). Fills `centrality` and `awarded` on the cohort and returns the
/// awarded set.
pub fn step_score(
    cohort: &mut CohortStats,
    k_prime_cap: usize,
    run_seed: u64,
) -> Result<BTreeSet<PathId>> {
    let n = cohort.kappas.len();
    if n == 0 {
        return Err(UlxError::State("step_score on an empty cohort".into()));
    }
    let k_t = k_prime_cap.min(n).max(1);
    cohort.centrality = centrality(&cohort.kappas)?;
    let paths: Vec<&PathId> = cohort.kappas.keys().collect();

    let awarded: BTreeSet<PathId> = if cohort.divergent {
        let mut ranked: Vec<&PathId> = paths.clone();
        ranked.sort_by(|a, b| {
            let ga = cohort.centrality[*a];
            let gb = cohort.centrality[*b];
            ga.partial_cmp(&gb).unwrap().then_with(|| a.cmp(b))
        });
        ranked[..k_t].iter().map(|p| (*p).clone()).collect()
    } else {
        let mut stream = Stream::derive(run_seed, Purpose::StepAward, &[cohort.step]);
        stream
            .sample_indices(n, k_t)
            .into_iter()
            .map(|i| paths[i].clone())
            .collect()
    };
    cohort.awarded = awarded.clone();
    Ok(awarded)
}

/// Sum each path's per-step points over a completed scoring window.
/// `window_len` is the number of scored steps expected (tau + 1 when the
/// window ran to completion with live paths).
pub fn accumulate_lqs(
    paths: &BTreeSet<PathId>,
    scored_steps: &[CohortStats],
    window_len: usize,
) -> Result<BTreeMap<PathId, u64>> {
    if scored_steps.len() < window_len {
        return Err(UlxError::State(format!(
            "scoring window not complete: {} of {window_len} steps",
            scored_steps.len()
        )));
    }
    let mut lqs: BTreeMap<PathId, u64> = paths.iter().map(|p| (p.clone(), 0)).collect();
    for step in scored_steps {
        for p in &step.awarded {
            if let Some(v) = lqs.get_mut(p) {
                *v += 1;
            }
        }
    }
    Ok(lqs)
}

/// Retain the top `k' = max(1, round((1 - rho) * N))` paths by LQS. Ties
/// break by lower mean window centrality, then ascending path id. Returns
/// the retained set.
pub fn finalize_pruning(
    lqs: &BTreeMap<PathId, u64>,
    mean_g: &BTreeMap<PathId, f64>,
    rho: f64,
) -> BTreeSet<PathId> {
    let n = lqs.len();
    if n == 0 {
        return BTreeSet::new();
    }
    let keep = k_prime(rho, n).min(n);
    let mut ranked: Vec<&PathId> = lqs.keys().collect();
    ranked.sort_by(|a, b| {
        lqs[*b]
            .cmp(&lqs[*a])
            .then_with(|| {
                let ga = mean_g.get(*a).copied().unwrap_or(f64::INFINITY);
                let gb = mean_g.get(*b).copied().unwrap_or(f64::INFINITY);
                ga.partial_cmp(&gb).unwrap()
            })
            .then_with(|| a.cmp(b))
    });
    ranked[..keep].iter().map(|p| (*p).clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic_space::{LanguageId, LogicSpaceModel};
    use crate::numerics::Mat;

    fn v(xs: &[f64]) -> Vector {
        Vector::new(xs.to_vec()).unwrap()
    }

    fn path(code: &str) -> PathId {
        code.parse().unwrap()
    }

    fn kappas(pairs: &[(&str, f64)]) -> BTreeMap<PathId, f64> {
        pairs.iter().map(|(c, k)| (path(c), *k)).collect()
    }

    fn cfg() -> PruningConfig {
        PruningConfig {
            eps_abs: 0.2,
            eps_rel: 0.5,
            gamma: 1.0,
            delta: 1e-6,
            ..PruningConfig::default()
        }
    }

    #[test]
    fn curvature_quarter_turns() {
        // (1,0) -> (0,1) -> (-1,0): r_M = 2*sqrt(2)/2, r_A = pi/pi.
        let s = curvature(0, &[v(&[1.0, 0.0]), v(&[0.0, 1.0]), v(&[-1.0, 0.0])], 1e-8).unwrap();
        assert!((s.r_m - 2.0_f64.sqrt()).abs() < 1e-12);
        assert!((s.r_a - 1.0).abs() < 1e-12);
        assert!((s.kappa - (2.0_f64.sqrt() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn curvature_collinear_zeroes_angular_ratio() {
        let s = curvature(0, &[v(&[1.0, 0.0]), v(&[2.0, 0.0]), v(&[3.0, 0.0])], 1e-8).unwrap();
        assert_eq!(s.r_m, 1.0);
        assert_eq!(s.r_a, 0.0);
        assert_eq!(s.kappa, 1.0);
    }

    #[test]
    fn curvature_stationary_is_fully_degenerate() {
        let s = curvature(0, &[v(&[1.0, 1.0]), v(&[1.0, 1.0]), v(&[1.0, 1.0])], 1e-8).unwrap();
        assert_eq!(s.r_m, 0.0);
        assert_eq!(s.r_a, 0.0);
        assert_eq!(s.kappa, 0.0);
    }

    #[test]
    fn curvature_needs_two_layers() {
        assert!(matches!(
            curvature(0, &[v(&[1.0])], 1e-8),
            Err(UlxError::State(_))
        ));
    }

    fn identity_model(dim: usize) -> LogicSpaceModel {
        let mut centers = BTreeMap::new();
        centers.insert(LanguageId::new("a").unwrap(), Vector::zeros(dim));
        let mut b = Mat::zeros(dim, 1);
        b.set(0, 0, 1.0);
        LogicSpaceModel::from_parts(0, 0.0, centers, b).unwrap()
    }

    #[test]
    fn position_average_two_points() {
        let model = identity_model(2);
        let got = position_averaged_state(&[v(&[1.0, 0.0]), v(&[3.0, 2.0])], &model).unwrap();
        assert_eq!(got.as_slice(), &[2.0, 1.0]);
    }

    #[test]
    fn position_average_singleton_and_empty() {
        let model = identity_model(2);
        let got = position_averaged_state(&[v(&[4.0, 5.0])], &model).unwrap();
        assert_eq!(got.as_slice(), &[4.0, 5.0]);
        assert!(position_averaged_state(&[], &model).is_err());
    }

    #[test]
    fn equal_kappas_never_diverge() {
        let stats = divergence_test(3, &kappas(&[("a", 0.4), ("b", 0.4), ("c", 0.4)]), &cfg());
        assert_eq!(stats.d_max, 0.0);
        assert!(!stats.divergent);
    }

    #[test]
    fn two_path_divergence_worked_example() {
        let stats = divergence_test(0, &kappas(&[("a", 0.1), ("b", 0.9)]), &cfg());
        assert!((stats.d_max - 0.8).abs() < 1e-15);
        assert!((stats.r_max - 0.8 / 0.9).abs() < 1e-12);
        assert_eq!(stats.r_max, stats.r_mean);
        assert!(stats.divergent);
    }

    #[test]
    fn small_absolute_spread_blocks_divergence() {
        let stats = divergence_test(0, &kappas(&[("a", 0.0), ("b", 0.01), ("c", 0.02)]), &cfg());
        assert!(stats.d_max <= 0.2);
        assert!(!stats.divergent);
    }

    #[test]
    fn singleton_cohort_is_non_divergent_with_zero_spreads() {
        let stats = divergence_test(0, &kappas(&[("a", 5.0)]), &cfg());
        assert!(!stats.divergent);
        assert_eq!(stats.d_max, 0.0);
        assert_eq!(stats.r_max, 0.0);
        assert_eq!(stats.r_mean, 0.0);
    }

    #[test]
    fn centrality_worked_example() {
        let g = centrality(&kappas(&[("a", 0.0), ("b", 0.1), ("c", 1.0)])).unwrap();
        assert!((g[&path("a")] - 0.55).abs() < 1e-15);
        assert!((g[&path("b")] - 0.50).abs() < 1e-15);
        assert!((g[&path("c")] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn centrality_two_paths_symmetric() {
        let g = centrality(&kappas(&[("a", 0.2), ("b", 0.7)])).unwrap();
        assert_eq!(g[&path("a")], g[&path("b")]);
        assert!((g[&path("a")] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn centrality_all_equal_is_zero_and_singleton_is_zero() {
        let g = centrality(&kappas(&[("a", 0.3), ("b", 0.3)])).unwrap();
        assert_eq!(g[&path("a")], 0.0);
        let g1 = centrality(&kappas(&[("a", 9.0)])).unwrap();
        assert_eq!(g1[&path("a")], 0.0);
    }

    #[test]
    fn step_score_awards_everyone_when_k_covers_cohort() {
        let mut stats = divergence_test(5, &kappas(&[("a", 0.4), ("b", 0.4), ("c", 0.4)]), &cfg());
        let awarded = step_score(&mut stats, 3, 42).unwrap();
        assert_eq!(awarded.len(), 3);
    }

    #[test]
    fn step_score_divergent_keeps_most_central() {
        let mut stats = divergence_test(0, &kappas(&[("a", 0.0), ("b", 0.1), ("c", 1.0)]), &cfg());
        assert!(stats.divergent);
        let awarded = step_score(&mut stats, 2, 7).unwrap();
        // g = {a: 0.55, b: 0.50, c: 0.95}: keep b and a.
        assert!(awarded.contains(&path("a")) && awarded.contains(&path("b")));
        assert!(!awarded.contains(&path("c")));
    }

    #[test]
    fn step_score_clamps_to_cohort_size() {
        let mut stats = divergence_test(0, &kappas(&[("a", 0.0), ("b", 2.0)]), &cfg());
        let awarded = step_score(&mut stats, 5, 7).unwrap();
        assert_eq!(awarded.len(), 2);
    }

    #[test]
    fn step_score_is_reproducible_per_step_substream() {
        let mut s1 = divergence_test(9, &kappas(&[("a", 0.1), ("b", 0.1), ("c", 0.1), ("d", 0.1)]), &cfg());
        let mut s2 = s1.clone();
        let a1 = step_score(&mut s1, 2, 123).unwrap();
        let a2 = step_score(&mut s2, 2, 123).unwrap();
        assert_eq!(a1, a2);
    }

    #[test]
    fn lqs_sums_points() {
        let paths: BTreeSet<PathId> = [path("a"), path("b")].into();
        let mk = |awarded: &[&str], step| {
            let mut s = divergence_test(step, &kappas(&[("a", 0.0), ("b", 0.0)]), &cfg());
            s.awarded = awarded.iter().map(|c| path(c)).collect();
            s
        };
        let steps = vec![mk(&["a"], 0), mk(&[], 1), mk(&["a", "b"], 2)];
        let lqs = accumulate_lqs(&paths, &steps, 3).unwrap();
        assert_eq!(lqs[&path("a")], 2);
        assert_eq!(lqs[&path("b")], 1);
        assert!(matches!(
            accumulate_lqs(&paths, &steps, 4),
            Err(UlxError::State(_))
        ));
    }

    #[test]
    fn finalize_keeps_top_two() {
        let lqs: BTreeMap<PathId, u64> =
            [(path("l1"), 3), (path("l2"), 1), (path("l3"), 2)].into();
        let retained = finalize_pruning(&lqs, &BTreeMap::new(), 1.0 - 2.0 / 3.0);
        assert_eq!(retained, [path("l1"), path("l3")].into());
    }

    #[test]
    fn finalize_rho_zero_retains_all_and_floor_is_one() {
        let lqs: BTreeMap<PathId, u64> = [(path("a"), 0), (path("b"), 5)].into();
        assert_eq!(finalize_pruning(&lqs, &BTreeMap::new(), 0.0).len(), 2);
        assert_eq!(finalize_pruning(&lqs, &BTreeMap::new(), 1.0).len(), 1);
        assert!(finalize_pruning(&lqs, &BTreeMap::new(), 1.0).contains(&path("b")));
    }

    #[test]
    fn finalize_ties_break_by_centrality_then_id() {
        let lqs: BTreeMap<PathId, u64> = [(path("a"), 2), (path("b"), 2), (path("c"), 2)].into();
        let mean_g: BTreeMap<PathId, f64> =
            [(path("a"), 0.9), (path("b"), 0.1), (path("c"), 0.5)].into();
        let retained = finalize_pruning(&lqs, &mean_g, 1.0 - 2.0 / 3.0);
        assert_eq!(retained, [path("b"), path("c")].into());
        // Without centrality info, ascending id decides.
        let retained2 = finalize_pruning(&lqs, &BTreeMap::new(), 1.0 - 2.0 / 3.0);
        assert_eq!(retained2, [path("a"), path("b")].into());
    }

    #[test]
    fn k_prime_rounds_and_floors() {
        assert_eq!(k_prime(0.6, 18), 7); // round(7.2)
        assert_eq!(k_prime(0.5, 10), 5);
        assert_eq!(k_prime(0.0, 4), 4);
        assert_eq!(k_prime(1.0, 4), 1);
    }
}
