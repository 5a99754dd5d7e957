//! Acceptance suite: one test per criterion, each asserting its stated
//! tolerance and runtime budget and printing a summary line (visible with
//! `cargo test --test acceptance -- --nocapture`).

mod common;

use std::collections::BTreeMap;
use std::time::Instant;

use common::{
    base_scenario, calibrated_sigma_w, gram_aat, gs_basis, jacobi_symmetric_eigen, random_matrix,
    random_vector, test_stream, write_scenario, LANGS_18,
};
use ulx_core::backends::{record_traces, HiddenStateProvider, SyntheticProvider, TraceFile};
use ulx_core::config::{BackendSpec, RunConfig};
use ulx_core::logic_space::{compute_language_centers, LanguageId, LogicSpaceModel};
use ulx_core::numerics::{svd, Vector};
use ulx_core::orchestrator::{Mode, StopReason};
use ulx_core::pruning::{centrality, curvature, divergence_test, step_score, PruningConfig};
use ulx_core::selection::{select_candidates, QueryRenditions};
use ulx_core::sweep::{parse_rho_range, sweep_rho};

struct Budget {
    name: &'static str,
    start: Instant,
    limit_s: f64,
}

impl Budget {
    fn new(name: &'static str, limit_s: f64) -> Self {
        Budget {
            name,
            start: Instant::now(),
            limit_s,
        }
    }

    fn done(self, detail: String) {
        let elapsed = self.start.elapsed().as_secs_f64();
        println!(
            "{} PASS ({detail}) [{elapsed:.2}s < {:.0}s]",
            self.name, self.limit_s
        );
        assert!(
            elapsed < self.limit_s,
            "{} exceeded its runtime budget: {elapsed:.2}s >= {}s",
            self.name,
            self.limit_s
        );
    }
}

#[test]
fn acceptance_01_numerics_oracle_suite() {
    let budget = Budget::new("ACCEPT-01 numerics-oracles", 5.0);
    let mut stream = test_stream(0xA1);
    let mut worst_recon = 0.0_f64;
    for _ in 0..100 {
        let rows = 1 + stream.next_below(10) as usize;
        let cols = 1 + stream.next_below(10) as usize;
        let a = random_matrix(rows, cols, &mut stream);
        let dec = svd(&a).unwrap();
        // Reconstruction within 1e-8 * ||A||_F.
        let mut err_sq = 0.0;
        for i in 0..rows {
            for j in 0..cols {
                let mut x = 0.0;
                for k in 0..dec.s.len() {
                    x += dec.u.get(i, k) * dec.s[k] * dec.v.get(j, k);
                }
                let d = x - a.get(i, j);
                err_sq += d * d;
            }
        }
        let rel = err_sq.sqrt() / a.frobenius_norm().max(1e-300);
        worst_recon = worst_recon.max(rel);
        assert!(rel <= 1e-8, "reconstruction error {rel}");

        // Left singular vectors against the symmetric eigen oracle on A A^T.
        let (eigenvalues, eigenvectors) = jacobi_symmetric_eigen(&gram_aat(&a));
        for k in 0..rows.min(cols) {
            let gap_ok = {
                let lo = if k + 1 < eigenvalues.len() {
                    (eigenvalues[k] - eigenvalues[k + 1]).abs()
                } else {
                    f64::INFINITY
                };
                let hi = if k > 0 {
                    (eigenvalues[k - 1] - eigenvalues[k]).abs()
                } else {
                    f64::INFINITY
                };
                lo.min(hi) > 1e-6 * eigenvalues[0].max(1.0)
            };
            if !gap_ok || dec.s[k] < 1e-6 {
                continue;
            }
            let dot: f64 = (0..rows).map(|i| dec.u.get(i, k) * eigenvectors.get(i, k)).sum();
            assert!(
                (dot.abs() - 1.0).abs() < 1e-7,
                "U[:,{k}] misaligned with the AA^T eigenvector"
            );
        }
    }
    budget.done(format!("100 matrices, worst recon {worst_recon:.2e}"));
}

#[test]
fn acceptance_02_projection_correctness() {
    let budget = Budget::new("ACCEPT-02 projection", 2.0);
    let mut stream = test_stream(0xA2);
    let mut worst_residual = 0.0_f64;
    for _ in 0..1000 {
        let dim = 3 + stream.next_below(14) as usize;
        let rank = 1 + stream.next_below(3.min(dim as u64 - 1)) as usize;
        let basis = gs_basis(dim, rank, &mut stream);
        let mut centers = BTreeMap::new();
        centers.insert(LanguageId::new("x").unwrap(), Vector::zeros(dim));
        let full = LogicSpaceModel::from_parts(0, 1.0, centers.clone(), basis.clone()).unwrap();
        let h = random_vector(dim, &mut stream);

        // lambda = 1: the projected vector is orthogonal to the basis.
        let projected = full.project(&h).unwrap();
        let bound = 1e-8 * h.norm().max(1e-12);
        for c in basis.transpose_mul_vec(&projected).unwrap() {
            worst_residual = worst_residual.max(c.abs() / h.norm().max(1e-12));
            assert!(c.abs() <= bound, "B^T P h = {c} over {bound}");
        }

        // lambda = 0 returns the input bit for bit.
        let id = LogicSpaceModel::from_parts(0, 0.0, centers.clone(), basis.clone()).unwrap();
        let same = id.project(&h).unwrap();
        for (a, b) in same.as_slice().iter().zip(h.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits(), "lambda=0 not exact");
        }

        // Linearity within 1e-10 at moderate scales.
        let u = random_vector(dim, &mut stream);
        let a = stream.next_f64() * 2.0 - 1.0;
        let b = stream.next_f64() * 2.0 - 1.0;
        let lhs = full.project(&h.scaled(a).add(&u.scaled(b))).unwrap();
        let rhs = full
            .project(&h)
            .unwrap()
            .scaled(a)
            .add(&full.project(&u).unwrap().scaled(b));
        assert!(lhs.sub(&rhs).norm() <= 1e-10, "linearity violated");
    }
    budget.done(format!("1000 draws, worst |B^T P h|/|h| {worst_residual:.2e}"));
}

#[test]
fn acceptance_03_planted_subspace_recovery() {
    let budget = Budget::new("ACCEPT-03 planted-recovery", 5.0);
    let scenario = base_scenario("accept3", &LANGS_18, &[], 0.0, 10, 303);
    let r_star = scenario.offset_rank;
    let provider = SyntheticProvider::new(scenario).unwrap();
    let layer = 13;
    let val = provider.validation_set(&[layer]).unwrap();
    let model = LogicSpaceModel::fit(&val, layer, r_star, 1.0).unwrap();
    let centers = compute_language_centers(&val, layer).unwrap();

    let variance = |cs: &BTreeMap<LanguageId, Vector>| {
        let n = cs.len() as f64;
        let dim = cs.values().next().unwrap().len();
        let mut mean = Vector::zeros(dim);
        for c in cs.values() {
            mean.axpy(1.0 / n, c);
        }
        cs.values()
            .map(|c| {
                let d = c.sub(&mean);
                d.dot(&d)
            })
            .sum::<f64>()
            / n
    };
    let before = variance(&centers);
    let projected: BTreeMap<LanguageId, Vector> = centers
        .iter()
        .map(|(l, c)| (l.clone(), model.project(c).unwrap()))
        .collect();
    let after = variance(&projected);
    let ratio = after / before;
    assert!(ratio <= 0.01, "dispersion ratio {ratio} above 1%");
    budget.done(format!("center variance ratio {ratio:.2e} <= 1e-2"));
}

#[test]
fn acceptance_04_divergence_and_centrality_oracles() {
    let budget = Budget::new("ACCEPT-04 cohort-oracles", 10.0);
    let cfg = PruningConfig {
        eps_abs: 0.2,
        eps_rel: 0.5,
        gamma: 1.1,
        delta: 1e-6,
        ..PruningConfig::default()
    };
    let grid = [-0.5, 0.0, 0.15, 1.0];
    let path = |i: usize| -> ulx_core::backends::PathId { format!("l{i:02}").parse().unwrap() };
    let mut cohorts = 0usize;
    for size in 1..=6usize {
        for mut code in 0..grid.len().pow(size as u32) {
            let mut kappas = Vec::with_capacity(size);
            for _ in 0..size {
                kappas.push(grid[code % grid.len()]);
                code /= grid.len();
            }
            let map: BTreeMap<_, _> = kappas.iter().enumerate().map(|(i, &k)| (path(i), k)).collect();
            let stats = divergence_test(0, &map, &cfg);
            // Exhaustive pairwise enumeration, identical order of summation.
            let mut d_max = 0.0_f64;
            let mut r_max = 0.0_f64;
            let mut r_sum = 0.0;
            let mut pairs = 0usize;
            for i in 0..size {
                for j in (i + 1)..size {
                    let diff = (kappas[i] - kappas[j]).abs();
                    let rel = diff / kappas[i].abs().max(kappas[j].abs()).max(cfg.delta);
                    d_max = d_max.max(diff);
                    r_max = r_max.max(rel);
                    r_sum += rel;
                    pairs += 1;
                }
            }
            let r_mean = if pairs > 0 { r_sum / pairs as f64 } else { 0.0 };
            let divergent = pairs > 0
                && d_max > cfg.eps_abs
                && r_max > cfg.eps_rel
                && r_max >= cfg.gamma * r_mean;
            assert_eq!(stats.d_max, d_max);
            assert_eq!(stats.r_max, r_max);
            assert_eq!(stats.r_mean, r_mean);
            assert_eq!(stats.divergent, divergent);

            let g = centrality(&map).unwrap();
            for (i, &k) in kappas.iter().enumerate() {
                let sum: f64 = kappas
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, &k2)| (k - k2).abs())
                    .sum();
                assert_eq!(g[&path(i)], sum / (size.max(2) - 1) as f64);
            }
            cohorts += 1;
        }
    }

    // Exactly K_t' points per step across 1000 seeded steps.
    let mut stream = test_stream(0xA4);
    for step in 0..1000u64 {
        let n = 1 + stream.next_below(8) as usize;
        let cap = 1 + stream.next_below(10) as usize;
        let map: BTreeMap<_, _> = (0..n)
            .map(|i| (path(i), stream.next_f64() * 2.0 - 1.0))
            .collect();
        let mut stats = divergence_test(step, &map, &cfg);
        let awarded = step_score(&mut stats, cap, 0xACC4).unwrap();
        assert_eq!(awarded.len(), cap.min(n));
    }
    budget.done(format!("{cohorts} cohorts enumerated exactly, 1000 scored steps"));
}

#[test]
fn acceptance_05_curvature_worked_example() {
    let budget = Budget::new("ACCEPT-05 curvature", 1.0);
    let v = |xs: &[f64]| Vector::new(xs.to_vec()).unwrap();
    // Independent scalar oracle: two unit quarter-turn hops.
    // delta_M = sqrt(2) each, chord_M = 2, r_M = 2*sqrt(2)/2 = sqrt(2);
    // delta_A = pi/2 each, chord_A = pi, r_A = 1; kappa = sqrt(2) - 1.
    let oracle_r_m = (2.0 * (2.0_f64).sqrt()) / 2.0;
    let oracle_r_a = (std::f64::consts::FRAC_PI_2 * 2.0) / std::f64::consts::PI;
    let oracle_kappa = oracle_r_m - oracle_r_a;

    let s = curvature(0, &[v(&[1.0, 0.0]), v(&[0.0, 1.0]), v(&[-1.0, 0.0])], 1e-8).unwrap();
    assert!((s.r_m - oracle_r_m).abs() <= 1e-12);
    assert!((s.r_a - oracle_r_a).abs() <= 1e-12);
    assert!((s.kappa - oracle_kappa).abs() <= 1e-12);
    assert!((s.kappa - (2.0_f64.sqrt() - 1.0)).abs() <= 1e-12);

    let collinear = curvature(0, &[v(&[1.0, 0.0]), v(&[2.0, 0.0]), v(&[3.0, 0.0])], 1e-8).unwrap();
    assert_eq!(collinear.kappa, 1.0);
    let stationary =
        curvature(0, &[v(&[1.0, 1.0]), v(&[1.0, 1.0]), v(&[1.0, 1.0])], 1e-8).unwrap();
    assert_eq!(stationary.kappa, 0.0);
    budget.done(format!("kappa {} within 1e-12 of oracle", s.kappa));
}

fn forced_config(dir: &std::path::Path, seed: u64) -> RunConfig {
    let scenario = base_scenario("accept6", &LANGS_18[..10], &["de", "es"], 2.0, 200, 7);
    let path = write_scenario(dir, &scenario);
    let mut cfg = RunConfig::synthetic(path, seed);
    cfg.k = 10;
    cfg.rho = 0.5;
    cfg.tau = 3;
    cfg.monitored_layers = Some((8, 16));
    cfg
}

#[test]
fn acceptance_06_token_accounting_identity() {
    let budget = Budget::new("ACCEPT-06 token-accounting", 2.0);
    let dir = tempfile::tempdir().unwrap();
    let report = forced_config(dir.path(), 1).execute().unwrap();
    let sum: u64 = report.paths.iter().map(|p| p.tokens).sum();
    assert_eq!(report.totals.tokens, sum, "totals.tokens != sum of stop steps");
    assert_eq!(report.prune_step, Some(14));
    assert_eq!(
        report
            .paths
            .iter()
            .filter(|p| p.stop_reason == StopReason::Pruned)
            .count(),
        5
    );
    assert_eq!(report.totals.tokens, 1070);
    assert_eq!(report.totals.baseline_tokens, 2000);
    assert!((report.totals.saved_pct - 46.5).abs() < 1e-12);
    budget.done("10 paths, T_E=14, 5 pruned: 1070 vs 2000 (46.5%)".to_string());
}

#[test]
fn acceptance_07_pruning_efficacy_at_simulation_scale() {
    let budget = Budget::new("ACCEPT-07 pruning-efficacy", 60.0);
    let dir = tempfile::tempdir().unwrap();
    let drifting = ["bn", "ja", "ko", "sw", "te", "th"];
    let sigma_w = calibrated_sigma_w();
    let scenario = base_scenario("accept7", &LANGS_18, &drifting, sigma_w, 200, 1234);
    let path = write_scenario(dir.path(), &scenario);

    let mut total_tokens = 0u64;
    let mut total_baseline = 0u64;
    let mut drifters_pruned = 0usize;
    let mut drifters_total = 0usize;
    let mut hits_pruned = 0usize;
    let mut hits_unpruned = 0usize;
    for seed in 1..=50u64 {
        let mut cfg = RunConfig::synthetic(&path, seed);
        cfg.k = LANGS_18.len();
        cfg.rho = 0.6;
        cfg.monitored_layers = Some((8, 16));
        let report = cfg.execute().unwrap();
        total_tokens += report.totals.tokens;
        total_baseline += report.totals.baseline_tokens;
        for p in &report.paths {
            if drifting.contains(&p.language.as_str()) {
                drifters_total += 1;
                if p.stop_reason == StopReason::Pruned {
                    drifters_pruned += 1;
                }
            }
        }
        if report.vote.as_deref() == Some("42") {
            hits_pruned += 1;
        }
        let mut unpruned = cfg.clone();
        unpruned.rho = 0.0;
        let baseline_report = unpruned.execute().unwrap();
        if baseline_report.vote.as_deref() == Some("42") {
            hits_unpruned += 1;
        }
    }
    let saving = 1.0 - total_tokens as f64 / total_baseline as f64;
    let recall = drifters_pruned as f64 / drifters_total as f64;
    let acc_pruned = hits_pruned as f64 / 50.0;
    let acc_unpruned = hits_unpruned as f64 / 50.0;
    assert!(saving >= 0.40, "aggregate token saving {saving:.3} below 40%");
    assert!(recall >= 0.8, "drifting-path pruning recall {recall:.3} below 0.8");
    assert!(
        (acc_pruned - acc_unpruned).abs() <= 0.02,
        "vote accuracy moved by {:.3} (pruned {acc_pruned:.3} vs unpruned {acc_unpruned:.3})",
        (acc_pruned - acc_unpruned).abs()
    );
    budget.done(format!(
        "saving {:.1}%, recall {recall:.2}, accuracy delta {:.3}",
        100.0 * saving,
        (acc_pruned - acc_unpruned).abs()
    ));
}

#[test]
fn acceptance_08_rho_sweep_shape() {
    let budget = Budget::new("ACCEPT-08 rho-sweep", 60.0);
    let dir = tempfile::tempdir().unwrap();
    let base = forced_config(dir.path(), 5);
    let rhos = parse_rho_range("0.0:0.9:0.05").unwrap();
    let rows = sweep_rho(&base, &rhos, &[5]).unwrap();
    assert_eq!(rows.len(), 19);
    for pair in rows.windows(2) {
        assert!(
            pair[1].tokens <= pair[0].tokens + 1e-9,
            "tokens rose from rho {} to {}",
            pair[0].rho,
            pair[1].rho
        );
        assert!(
            pair[1].simulated_latency <= pair[0].simulated_latency + 1e-9,
            "latency rose from rho {} to {}",
            pair[0].rho,
            pair[1].rho
        );
    }
    // rho = 0 equals the full baseline exactly with the matched seed.
    let mut baseline_cfg = base.clone();
    baseline_cfg.mode = Mode::FullBaseline;
    let baseline = baseline_cfg.execute().unwrap();
    assert_eq!(rows[0].tokens, baseline.totals.tokens as f64);
    assert_eq!(rows[0].simulated_latency, baseline.totals.simulated_latency);
    budget.done(format!(
        "19 rho cells nonincreasing; rho=0 tokens {} == baseline",
        rows[0].tokens
    ));
}

#[test]
fn acceptance_09_determinism_and_replay() {
    let budget = Budget::new("ACCEPT-09 determinism-replay", 30.0);
    let dir = tempfile::tempdir().unwrap();
    let cfg = forced_config(dir.path(), 21);

    // Byte-identical repeated runs.
    let a = cfg.execute().unwrap().to_json().unwrap();
    let b = cfg.execute().unwrap().to_json().unwrap();
    assert_eq!(a, b, "repeated runs differ");

    // Trace round trip is bit-exact.
    let scenario_path = match &cfg.backend {
        BackendSpec::Synthetic { scenario } => scenario.clone(),
        _ => unreachable!(),
    };
    let provider = SyntheticProvider::from_file(&scenario_path).unwrap();
    let paths: Vec<_> = provider
        .caps()
        .languages
        .iter()
        .map(|l| ulx_core::backends::PathId::for_language(l.clone()))
        .collect();
    let mut layers: Vec<usize> = (8..=16).collect();
    layers.push(13);
    layers.sort_unstable();
    layers.dedup();
    let qdir = record_traces(&provider, "accept6", &paths, &layers, &[13], &dir.path().join("t")).unwrap();
    for entry in std::fs::read_dir(&qdir).unwrap() {
        let file = entry.unwrap().path();
        let trace = TraceFile::read_from(&file).unwrap();
        let rewritten = dir.path().join("rt.ultrace");
        trace.write_to(&rewritten).unwrap();
        assert_eq!(
            std::fs::read(&file).unwrap(),
            std::fs::read(&rewritten).unwrap(),
            "trace round trip not bit-exact for {}",
            file.display()
        );
    }

    // Live synthetic vs trace replay: byte-identical reports under shared
    // model files.
    let model_dir = dir.path().join("models");
    std::fs::create_dir_all(&model_dir).unwrap();
    let val = provider.validation_set(&layers).unwrap();
    let mut model_files = Vec::new();
    for &layer in &layers {
        let model = LogicSpaceModel::fit(&val, layer, cfg.rank, cfg.lambda).unwrap();
        let file = model_dir.join(format!("model-{layer}.json"));
        model.save(&file).unwrap();
        model_files.push(file);
    }
    let mut live_cfg = cfg.clone();
    live_cfg.models = Some(model_files.clone());
    let mut replay_cfg = cfg.clone();
    replay_cfg.backend = BackendSpec::Trace { dir: qdir };
    replay_cfg.models = Some(model_files);
    let live = live_cfg.execute().unwrap().to_json().unwrap();
    let replayed = replay_cfg.execute().unwrap().to_json().unwrap();
    assert_eq!(live, replayed, "live vs replay reports differ");
    budget.done("repeat, round-trip, and replay all byte-identical".to_string());
}

#[test]
fn acceptance_10_selection_oracle() {
    let budget = Budget::new("ACCEPT-10 selection-oracle", 5.0);
    let mut stream = test_stream(0xA10);
    let dim = 16;
    let codes: Vec<String> = (0..32).map(|i| format!("q{i:02}")).collect();

    for trial in 0..1000 {
        let n = 2 + stream.next_below(31) as usize;
        let k = 1 + stream.next_below(n as u64) as usize;
        let basis = gs_basis(dim, 2, &mut stream);
        let mut centers = BTreeMap::new();
        centers.insert(LanguageId::new("x").unwrap(), Vector::zeros(dim));
        let model = LogicSpaceModel::from_parts(0, 0.4, centers, basis.clone()).unwrap();

        let mut states = BTreeMap::new();
        for code in codes.iter().take(n) {
            states.insert(
                LanguageId::new(code.clone()).unwrap(),
                random_vector(dim, &mut stream),
            );
        }
        let source = LanguageId::new(codes[0].clone()).unwrap();
        let q = QueryRenditions::new(source.clone(), states.clone()).unwrap();
        let got = select_candidates(&model, &q, k, false).unwrap();

        // Oracle: raw cosine of projections by direct arithmetic, full sort.
        let lam = 0.4;
        let project = |h: &Vector| -> Vec<f64> {
            let mut out = h.as_slice().to_vec();
            for j in 0..basis.cols() {
                let col = basis.col(j);
                let c: f64 = col.iter().zip(h.as_slice()).map(|(a, b)| a * b).sum();
                for (o, bb) in out.iter_mut().zip(col) {
                    *o -= lam * c * bb;
                }
            }
            out
        };
        let cos = |u: &[f64], v: &[f64]| -> f64 {
            let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
            let nu: f64 = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nv: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nu < 1e-12 || nv < 1e-12 {
                0.0
            } else {
                dot / (nu * nv)
            }
        };
        let src_proj = project(&states[&source]);
        let mut oracle: Vec<(LanguageId, f64)> = states
            .iter()
            .map(|(l, h)| (l.clone(), cos(&src_proj, &project(h))))
            .collect();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        oracle.truncate(k.min(n));
        let oracle_langs: Vec<LanguageId> = oracle.into_iter().map(|(l, _)| l).collect();
        assert_eq!(got.languages(), oracle_langs, "trial {trial} mismatch");

        // Scale invariance of the ranking under positive rescaling.
        let which = stream.next_below(n as u64) as usize;
        let target = LanguageId::new(codes[which].clone()).unwrap();
        let scale = 10f64.powf(stream.next_f64() * 6.0 - 3.0);
        let mut rescaled = states.clone();
        let v = rescaled[&target].scaled(scale);
        rescaled.insert(target, v);
        let q2 = QueryRenditions::new(source, rescaled).unwrap();
        let got2 = select_candidates(&model, &q2, k, false).unwrap();
        assert_eq!(
            got.languages(),
            got2.languages(),
            "trial {trial}: rescaling moved the selection"
        );
    }
    budget.done("1000 seeded selections equal the exhaustive sort".to_string());
}
