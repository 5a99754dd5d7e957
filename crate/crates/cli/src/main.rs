//! `ulx`: fit logic-space models, run pipeline and baseline queries, sweep
//! the pruning ratio, generate synthetic traces, and tabulate reports.
//!
//! Exit codes: 0 success, 1 runtime/data error, 2 usage/config error.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ulx_core::backends::{
    record_traces, write_validation_traces, HiddenStateProvider, PathId, SyntheticProvider,
    TraceFile,
};
use ulx_core::config::RunConfig;
use ulx_core::logic_space::{
    build_shift_matrix, compute_language_centers, LogicSpaceModel, ValidationSet,
};
use ulx_core::numerics::{svd, Vector};
use ulx_core::orchestrator::{Mode, RunReport};
use ulx_core::sweep::{parse_rho_range, sweep_rho};
use ulx_core::UlxError;

#[derive(Parser)]
#[command(
    name = "ulx",
    about = "Unified-logic cross-lingual chain-of-thought pipeline at simulation scale",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a logic-space model from a validation trace directory.
    Fit(FitArgs),
    /// Run one configured query and write its report.
    Run(RunArgs),
    /// Sweep the pruning ratio and write a CSV of accuracy and cost.
    Sweep(SweepArgs),
    /// Tabulate one or more run reports as CSV.
    Report(ReportArgs),
    /// Generate trace files from a synthetic scenario.
    Trace(TraceArgs),
}

fn parse_rank(s: &str) -> Result<usize, String> {
    let v: usize = s.parse().map_err(|_| format!("{s:?} is not an integer"))?;
    if v == 0 {
        return Err("rank must be >= 1".into());
    }
    Ok(v)
}

fn parse_lambda(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if !(0.0..=1.0).contains(&v) {
        return Err("lambda must be in [0, 1]".into());
    }
    Ok(v)
}

#[derive(Args)]
struct FitArgs {
    /// Validation trace directory: <dir>/<sample>/<language>.ultrace,
    /// parallel across languages.
    #[arg(long)]
    val: PathBuf,
    /// Transformer layer to fit.
    #[arg(long)]
    layer: usize,
    /// Rank of the language-variation basis.
    #[arg(long, value_parser = parse_rank, default_value = "4")]
    rank: usize,
    /// Shrinkage factor applied by the projector.
    #[arg(long, value_parser = parse_lambda, default_value = "0.4")]
    lambda: f64,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration file (schema ulx-config/1).
    #[arg(long)]
    config: PathBuf,
    /// Where to write the run report.
    #[arg(long)]
    report: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's pruning ratio.
    #[arg(long)]
    rho: Option<f64>,
    /// Override the config's mode (ul-xcot, full-baseline, mono).
    #[arg(long)]
    mode: Option<String>,
    /// Override the config's candidate set size.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Inclusive rho range as start:end:step.
    #[arg(long)]
    rho: String,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
    /// Seeds per rho cell (seed, seed+1, ...).
    #[arg(long, default_value = "1")]
    seeds: u64,
}

#[derive(Args)]
struct ReportArgs {
    /// Report files to tabulate.
    #[arg(long, num_args = 1.., required = true)]
    reports: Vec<PathBuf>,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TraceArgs {
    /// Synthetic scenario file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output root directory.
    #[arg(long)]
    out: PathBuf,
    /// Write a one-record-per-sample validation corpus instead of full
    /// decode traces.
    #[arg(long)]
    validation: bool,
    /// Inclusive layer range to record, as lo:hi (default: the middle third
    /// of the scenario's layers).
    #[arg(long)]
    layers: Option<String>,
    /// Analysis layer whose rendition states are recorded.
    #[arg(long, default_value = "13")]
    analysis_layer: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Report(args) => cmd_report(args),
        Command::Trace(args) => cmd_trace(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

/// Usage/config problems exit 2; runtime and data problems exit 1.
fn exit_code_for(e: &UlxError) -> u8 {
    match e {
        UlxError::Config(_) | UlxError::Json(_) => 2,
        _ => 1,
    }
}

fn cmd_fit(args: FitArgs) -> ulx_core::Result<ExitCode> {
    let val = read_validation_traces(&args.val, args.layer)?;
    let missing = val.missing_coverage(args.layer);
    if !missing.is_empty() {
        eprintln!(
            "error: validation set is missing {} (sample, language) entries at layer {}:",
            missing.len(),
            args.layer
        );
        for (sample, language) in &missing {
            eprintln!("  ({sample}, {language})");
        }
        return Ok(ExitCode::from(1));
    }

    let model = LogicSpaceModel::fit(&val, args.layer, args.rank, args.lambda)?;
    let centers = compute_language_centers(&val, args.layer)?;
    println!("fitted layer {} (rank {}, lambda {})", args.layer, args.rank, args.lambda);
    for (lang, center) in &centers {
        println!("  center |{lang}| = {:.6}", center.norm());
    }
    let shift = build_shift_matrix(&centers)?;
    let dec = svd(&shift)?;
    let shown: Vec<String> = dec
        .s
        .iter()
        .take(args.rank.max(4).min(dec.s.len()))
        .map(|s| format!("{s:.6}"))
        .collect();
    println!("  top singular values: {}", shown.join(", "));
    println!(
        "  dispersion ratio (projected/unprojected center variance): {:.6e}",
        dispersion_ratio(&model, &centers)
    );
    model.save(&args.out)?;
    println!("wrote {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

/// Variance of the projected centers over the variance of the raw centers.
fn dispersion_ratio(
    model: &LogicSpaceModel,
    centers: &BTreeMap<ulx_core::LanguageId, Vector>,
) -> f64 {
    let variance = |cs: &[Vector]| {
        let n = cs.len() as f64;
        let dim = cs[0].len();
        let mut mean = Vector::zeros(dim);
        for c in cs {
            mean.axpy(1.0 / n, c);
        }
        cs.iter()
            .map(|c| {
                let d = c.sub(&mean);
                d.dot(&d)
            })
            .sum::<f64>()
            / n
    };
    let raw: Vec<Vector> = centers.values().cloned().collect();
    let projected: Vec<Vector> = raw.iter().map(|c| model.project(c).unwrap()).collect();
    variance(&projected) / variance(&raw)
}

/// Layout: <dir>/<sample>/<language>.ultrace; the last record's state at
/// `layer` is the sample's understanding state.
fn read_validation_traces(dir: &Path, layer: usize) -> ulx_core::Result<ValidationSet> {
    let mut val = ValidationSet::new();
    let mut samples: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    samples.sort();
    if samples.is_empty() {
        return Err(UlxError::Config(format!(
            "no sample directories under {}",
            dir.display()
        )));
    }
    for sample_dir in samples {
        let sample = sample_dir
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_default();
        let mut files: Vec<PathBuf> = std::fs::read_dir(&sample_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "ultrace"))
            .collect();
        files.sort();
        for file in files {
            let trace = TraceFile::read_from(&file)?;
            if let Some(states) = trace.states.last() {
                if let Some(state) = states.get(&layer) {
                    val.push(
                        sample.clone(),
                        trace.path_id.language().clone(),
                        layer,
                        state.clone(),
                    );
                }
            }
        }
    }
    Ok(val)
}

fn cmd_run(args: RunArgs) -> ulx_core::Result<ExitCode> {
    let mut cfg = RunConfig::load(&args.config)?;
    // Precedence: flag > file > default.
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(rho) = args.rho {
        cfg.rho = rho;
    }
    if let Some(k) = args.k {
        cfg.k = k;
    }
    if let Some(mode) = &args.mode {
        cfg.mode = match mode.as_str() {
            "ul-xcot" => Mode::UlXcot,
            "full-baseline" => Mode::FullBaseline,
            "mono" => Mode::Mono,
            other => {
                return Err(UlxError::Config(format!(
                    "unknown mode {other:?} (expected ul-xcot, full-baseline, or mono)"
                )))
            }
        };
    }
    cfg.validate()?;
    let report = cfg.execute()?;
    report.save(&args.report)?;
    println!(
        "mode={} vote={} tokens={} baseline_tokens={} saved={:.1}% latency={} wall={:.3}s",
        report.mode,
        report.vote.as_deref().unwrap_or("(abstain)"),
        report.totals.tokens,
        report.totals.baseline_tokens,
        report.totals.saved_pct,
        report.totals.simulated_latency,
        report.wall_clock_seconds
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(args: SweepArgs) -> ulx_core::Result<ExitCode> {
    let cfg = RunConfig::load(&args.config)?;
    let rhos = parse_rho_range(&args.rho)?;
    if args.seeds == 0 {
        return Err(UlxError::Config("--seeds must be >= 1".into()));
    }
    let seeds: Vec<u64> = (0..args.seeds).map(|i| cfg.seed + i).collect();
    let rows = sweep_rho(&cfg, &rhos, &seeds)?;
    let mut out = String::from("rho,accuracy,tokens,simulated_latency\n");
    for row in &rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.rho, row.accuracy, row.tokens, row.simulated_latency
        ));
    }
    write_text(&args.out, &out)?;
    println!(
        "swept {} rho cells x {} seeds -> {}",
        rows.len(),
        seeds.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(args: ReportArgs) -> ulx_core::Result<ExitCode> {
    let mut rows = Vec::new();
    for file in &args.reports {
        let report = match RunReport::load(file) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("error: cannot read report {}: {e}", file.display());
                return Ok(ExitCode::from(1));
            }
        };
        rows.push(report);
    }
    let mut out = String::from(
        "query_id,mode,seed,vote,languages,tokens,baseline_tokens,saved_pct,simulated_latency,per_language_tokens\n",
    );
    for r in &rows {
        let langs: Vec<&str> = r.selected.iter().map(|s| s.language.as_str()).collect();
        let per_language: Vec<String> = r
            .paths
            .iter()
            .map(|p| format!("{}:{}", p.path, p.tokens))
            .collect();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.query_id,
            r.mode,
            r.seed,
            r.vote.as_deref().unwrap_or(""),
            langs.join(";"),
            r.totals.tokens,
            r.totals.baseline_tokens,
            r.totals.saved_pct,
            r.totals.simulated_latency,
            per_language.join(";")
        ));
    }
    write_text(&args.out, &out)?;
    println!("tabulated {} reports -> {}", rows.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_trace(args: TraceArgs) -> ulx_core::Result<ExitCode> {
    let provider = SyntheticProvider::from_file(&args.scenario)?;
    let caps = provider.caps();
    let layers = match &args.layers {
        Some(spec) => {
            let (lo, hi) = spec
                .split_once(':')
                .ok_or_else(|| UlxError::Config(format!("--layers {spec:?} must be lo:hi")))?;
            let lo: usize = lo
                .parse()
                .map_err(|_| UlxError::Config(format!("bad layer {lo:?}")))?;
            let hi: usize = hi
                .parse()
                .map_err(|_| UlxError::Config(format!("bad layer {hi:?}")))?;
            if hi <= lo {
                return Err(UlxError::Config("--layers needs lo < hi".into()));
            }
            (lo, hi)
        }
        None => (caps.layers / 3, (2 * caps.layers) / 3),
    };
    let mut record_layers: Vec<usize> = (layers.0..=layers.1).collect();
    if !record_layers.contains(&args.analysis_layer) {
        record_layers.push(args.analysis_layer);
        record_layers.sort_unstable();
    }

    if args.validation {
        let written = write_validation_traces(&provider, &record_layers, &args.out)?;
        println!(
            "wrote {written} validation traces under {}",
            args.out.display()
        );
    } else {
        let paths: Vec<PathId> = caps
            .languages
            .iter()
            .map(|l| PathId::for_language(l.clone()))
            .collect();
        let qdir = record_traces(
            &provider,
            provider.query_id(),
            &paths,
            &record_layers,
            &[args.analysis_layer],
            &args.out,
        )?;
        println!("wrote {} decode traces under {}", paths.len(), qdir.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn write_text(path: &Path, text: &str) -> ulx_core::Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}
