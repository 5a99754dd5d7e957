//! Pruning-ratio sweeps: run the configured pipeline across a rho grid and
//! seed set, reporting planted-answer accuracy and mean cost per cell.

use serde::{Deserialize, Serialize};

use crate::config::{BackendSpec, RunConfig};
use crate::error::{Result, UlxError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub rho: f64,
    /// Fraction of seeds whose vote matched the planted answer.
    pub accuracy: f64,
    /// Mean total tokens over seeds.
    pub tokens: f64,
    /// Mean simulated latency over seeds.
    pub simulated_latency: f64,
}

/// Run `base` at every rho in `rhos`, each over `seeds`, and average.
/// Requires a backend with a planted true answer (the synthetic scenario).
pub fn sweep_rho(base: &RunConfig, rhos: &[f64], seeds: &[u64]) -> Result<Vec<SweepRow>> {
    if rhos.is_empty() || seeds.is_empty() {
        return Err(UlxError::Config("sweep needs at least one rho and one seed".into()));
    }
    let truth = match &base.backend {
        BackendSpec::Synthetic { scenario } => {
            crate::backends::SyntheticScenario::from_file(scenario)?.true_answer
        }
        BackendSpec::Trace { .. } => {
            return Err(UlxError::Config(
                "rho sweeps score planted answers; use a synthetic backend".into(),
            ))
        }
    };
    let mut rows = Vec::with_capacity(rhos.len());
    for &rho in rhos {
        if !(0.0..=1.0).contains(&rho) {
            return Err(UlxError::Config(format!("sweep rho {rho} outside [0, 1]")));
        }
        let mut hits = 0usize;
        let mut tokens = 0.0;
        let mut latency = 0.0;
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.rho = rho;
            cfg.seed = seed;
            let report = cfg.execute()?;
            if report.vote.as_deref() == Some(truth.as_str()) {
                hits += 1;
            }
            tokens += report.totals.tokens as f64;
            latency += report.totals.simulated_latency;
        }
        rows.push(SweepRow {
            rho,
            accuracy: hits as f64 / seeds.len() as f64,
            tokens: tokens / seeds.len() as f64,
            simulated_latency: latency / seeds.len() as f64,
        });
    }
    Ok(rows)
}

/// Parse an inclusive "start:end:step" rho range.
pub fn parse_rho_range(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(UlxError::Config(format!(
            "rho range {spec:?} must be start:end:step"
        )));
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| {
            p.parse::<f64>()
                .map_err(|_| UlxError::Config(format!("bad number {p:?} in rho range")))
        })
        .collect::<Result<_>>()?;
    let (start, end, step) = (nums[0], nums[1], nums[2]);
    if step <= 0.0 || end < start || !(0.0..=1.0).contains(&start) || !(0.0..=1.0).contains(&end) {
        return Err(UlxError::Config(format!("malformed rho range {spec:?}")));
    }
    let mut rhos = Vec::new();
    let mut i = 0u32;
    loop {
        // Snap accumulated grid points to 10 decimals so cells read cleanly.
        let rho = ((start + step * f64::from(i)) * 1e10).round() / 1e10;
        if rho > end + 1e-12 {
            break;
        }
        rhos.push(rho.min(1.0));
        i += 1;
    }
    Ok(rhos)
}
