use std::fs::{self, File};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::assigndesign::{CounterfactualMode, Design, ExposureKind, ExposureSpec};
use crate::coa::{coa_ipw_estimate, estimation_error_terms, EstimandRequest, Positivity, SkipReason};
use crate::error::{CoaError, Result};
use crate::harness::{
    consistency_sweep, coverage_normality_report, derive_seed, influence_diagnostics, monte_carlo, summarize,
    validate_unbiasedness, NetworkSpec, RunConfig, Scenario,
};
use crate::inference::{confidence_interval, variance_components};
use crate::netgraph::{load_edge_list, Network};
use crate::structural::{
    global_exposure_fp, recover_linear_in_means, total_effect_decomposition, trace_estimands,
    transformed_outcome, LinearizedSystem, TraceEstimands,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DESIGN: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "coa-lab", version, about = "Conditional-on-assignment exposure effects under network interference")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw one assignment, generate outcomes, and compare estimates with the oracle.
    Simulate(CommonArgs),
    /// Estimate exposure effects from observed assignments and outcomes.
    Estimate(CommonArgs),
    /// Check unbiasedness by enumerating every assignment.
    Validate(CommonArgs),
    /// Monte Carlo replications with coverage and normality summaries.
    Mc(CommonArgs),
    /// Estimation error across network sizes.
    Sweep(CommonArgs),
    /// Recover linear-in-means parameters and decompose the total effect.
    Recover(RecoverArgs),
    /// Dependency, weight-variance and influence diagnostics.
    Diagnose(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Edge list CSV "src,dst" for an edge_list network.
    #[arg(long)]
    pub edges: Option<PathBuf>,
    /// Assignment CSV "unit,d".
    #[arg(long)]
    pub assign: Option<PathBuf>,
    /// Outcome CSV "unit,y".
    #[arg(long)]
    pub outcomes: Option<PathBuf>,
    /// Output directory; the report goes to stdout without it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Positivity failures are errors.
    #[arg(long, conflicts_with = "lenient")]
    pub strict: bool,
    /// Units failing positivity are skipped and reported.
    #[arg(long)]
    pub lenient: bool,
    /// Worker threads for replications.
    #[arg(long, env = "COA_LAB_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RecoverArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Distances summed explicitly before the dominant-eigenvector tail.
    #[arg(long, default_value_t = 5)]
    pub s0: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Warning {
    pub code: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unit: Option<usize>,
}

impl Warning {
    fn new(code: &'static str, message: impl Into<String>) -> Self {
        Warning {
            code,
            message: message.into(),
            unit: None,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ReportDocument<T: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub config: RunConfig,
    pub result: T,
    pub warnings: Vec<Warning>,
}

/// Parses `argv` (program name first), runs the subcommand and returns the exit status.
pub fn run_cli<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("coa-lab: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &CoaError) -> i32 {
    match e {
        CoaError::Config { .. } | CoaError::Parse { .. } | CoaError::Io(_) => EXIT_CONFIG,
        e if e.is_design_failure() => EXIT_DESIGN,
        _ => EXIT_FAILURE,
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Simulate(a) => simulate(&a),
        Command::Estimate(a) => estimate(&a),
        Command::Validate(a) => validate(&a),
        Command::Mc(a) => mc(&a),
        Command::Sweep(a) => sweep(&a),
        Command::Recover(a) => recover(&a),
        Command::Diagnose(a) => diagnose(&a),
    }
}

/// Config with command-line overrides applied, plus the edge list if given.
fn setup(args: &CommonArgs) -> Result<(RunConfig, Option<Network>)> {
    if let Some(threads) = args.threads {
        if threads == 0 {
            return Err(CoaError::config("threads", "must be positive"));
        }
        // a second initialization in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let text = read_text(&args.config)?;
    let mut cfg = RunConfig::from_json(&text)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.strict {
        cfg.positivity = Positivity::Strict;
    } else if args.lenient {
        cfg.positivity = Positivity::Lenient;
    }
    cfg.validate()?;
    let edges = match (&args.edges, &cfg.network) {
        (Some(path), NetworkSpec::EdgeList { n, directed }) => Some(load_edge_list(open(path)?, *n, *directed)?),
        (Some(_), _) => return Err(CoaError::config("network.kind", "--edges needs an edge_list network")),
        (None, _) => None,
    };
    Ok((cfg, edges))
}

fn read_text(path: &Path) -> Result<String> {
    let mut s = String::new();
    open(path)?.read_to_string(&mut s)?;
    Ok(s)
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| CoaError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Reads a two-column `unit,<column>` CSV whose ids cover `0..n` exactly once.
pub fn read_unit_column<R: Read>(reader: R, n: usize, column: &str) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut values: Vec<Option<f64>> = vec![None; n];
    for (idx, record) in rdr.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| CoaError::Parse {
            line,
            message: e.to_string(),
        })?;
        if record.len() != 2 {
            return Err(CoaError::Parse {
                line,
                message: format!("expected unit,{column}"),
            });
        }
        if line == 1 && &record[0] == "unit" && &record[1] == column {
            continue;
        }
        let parse_err = |what: &str| CoaError::Parse {
            line,
            message: format!("bad {what} {:?}", record.iter().collect::<Vec<_>>()),
        };
        let unit: usize = record[0].parse().map_err(|_| parse_err("unit"))?;
        let value: f64 = record[1].parse().map_err(|_| parse_err(column))?;
        if !value.is_finite() {
            return Err(parse_err(column));
        }
        match values.get_mut(unit) {
            None => {
                return Err(CoaError::Parse {
                    line,
                    message: format!("unit {unit} outside 0..{n}"),
                })
            }
            Some(Some(_)) => {
                return Err(CoaError::Parse {
                    line,
                    message: format!("unit {unit} listed twice"),
                })
            }
            Some(slot) => *slot = Some(value),
        }
    }
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| v.ok_or_else(|| CoaError::config(column, format!("unit {i} is missing"))))
        .collect()
}

fn binary_assignment(d: &[f64]) -> Result<Vec<u8>> {
    d.iter()
        .enumerate()
        .map(|(i, &v)| match v {
            0.0 => Ok(0),
            1.0 => Ok(1),
            _ => Err(CoaError::config("d", format!("unit {i} has non-binary assignment {v}"))),
        })
        .collect()
}

fn emit<T: Serialize>(
    args: &CommonArgs,
    command: &'static str,
    cfg: &RunConfig,
    result: T,
    warnings: Vec<Warning>,
    tables: Vec<(&str, Vec<u8>)>,
) -> Result<()> {
    let report = ReportDocument {
        tool: "coa-lab",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed: cfg.seed,
        config: cfg.clone(),
        result,
        warnings,
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| CoaError::Undefined(e.to_string()))?;
    match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("report.json"), json + "\n")?;
            for (name, bytes) in tables {
                fs::write(dir.join(name), bytes)?;
            }
        }
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{json}")?;
        }
    }
    Ok(())
}

fn skip_warnings(skipped: &[Option<SkipReason>]) -> Vec<Warning> {
    skipped
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            let code = match (*s)? {
                SkipReason::Masked => return None,
                SkipReason::Positivity => "skipped_positivity",
                SkipReason::EmptyCell => "skipped_empty_cell",
                SkipReason::UndefinedExposure => "skipped_undefined_exposure",
                SkipReason::EnumerationCap => "skipped_enumeration_cap",
            };
            Some(Warning {
                code,
                message: format!("unit {i} excluded from every level"),
                unit: Some(i),
            })
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct WeightSummary {
    min: f64,
    max: f64,
    mean: f64,
    /// Units with a nonzero weight.
    active: usize,
}

fn weight_summary(weights: &[f64], mask: &[bool]) -> WeightSummary {
    let w: Vec<f64> = weights.iter().zip(mask).filter(|(_, m)| **m).map(|(w, _)| *w).collect();
    let k = w.len().max(1) as f64;
    WeightSummary {
        min: w.iter().copied().fold(f64::INFINITY, f64::min),
        max: w.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean: w.iter().sum::<f64>() / k,
        active: w.iter().filter(|&&x| x != 0.0).count(),
    }
}

#[derive(Debug, Serialize)]
struct LevelEstimate {
    level: f64,
    estimate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<f64>,
    included: usize,
    weights: WeightSummary,
}

#[derive(Debug, Serialize)]
struct InferenceBlock {
    sigma: f64,
    ci_lower: f64,
    ci_upper: f64,
    alpha: f64,
    rho: f64,
    scale: f64,
    clamped: bool,
    bounded_pairs: usize,
}

#[derive(Debug, Serialize)]
struct EstimateResult {
    n: usize,
    levels: Vec<LevelEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tau_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tau_star: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    inference: Option<InferenceBlock>,
    skipped_units: Vec<usize>,
}

/// Estimates at every level, the contrast and its interval; oracles when a model is supplied.
fn estimate_block(
    cfg: &RunConfig,
    design: &Design,
    request: &EstimandRequest<'_>,
    y: &[f64],
    d: &[u8],
    oracles: Option<Vec<f64>>,
    warnings: &mut Vec<Warning>,
) -> Result<EstimateResult> {
    let est = coa_ipw_estimate(y, d, design, request)?;
    let mask = est[0].mask();
    warnings.extend(skip_warnings(&est[0].skipped));
    let levels = est
        .iter()
        .enumerate()
        .map(|(k, e)| LevelEstimate {
            level: e.level,
            estimate: e.value,
            oracle: oracles.as_ref().map(|o| o[k]),
            included: e.included(),
            weights: weight_summary(&e.weights, &mask),
        })
        .collect();
    let included = est[0].included();
    let mut result = EstimateResult {
        n: y.len(),
        levels,
        tau_hat: None,
        tau_star: None,
        inference: None,
        skipped_units: mask.iter().enumerate().filter(|(_, m)| !**m).map(|(i, _)| i).collect(),
    };
    if let [e1, e0] = est.as_slice() {
        result.tau_hat = Some(e1.value - e0.value);
        result.tau_star = oracles.as_ref().map(|o| o[0] - o[1]);
        if cfg.inference.enabled {
            let v = variance_components(y, d, design, request, cfg.inference.rho, cfg.inference.bound)?;
            let ci = confidence_interval(e1.value - e0.value, v.sigma, included, cfg.inference.rho, cfg.inference.alpha)?;
            if v.clamped {
                warnings.push(Warning::new("sigma_clamped", "variance estimate was negative and clamped to zero"));
            }
            if v.bound_fallback {
                warnings.push(Warning::new(
                    "coupling_bound_fallback",
                    "no unit observed at the second level; the coupling used the outcome bound",
                ));
            }
            if v.bounded_pairs > 0 {
                warnings.push(Warning::new(
                    "incompatible_pairs_bounded",
                    format!("{} unit pairs with zero joint exposure probability were bounded", v.bounded_pairs),
                ));
            }
            result.inference = Some(InferenceBlock {
                sigma: v.sigma,
                ci_lower: ci.lower,
                ci_upper: ci.upper,
                alpha: ci.alpha,
                rho: cfg.inference.rho,
                scale: ci.scale,
                clamped: v.clamped,
                bounded_pairs: v.bounded_pairs,
            });
        }
    }
    Ok(result)
}

fn request_for<'a>(cfg: &RunConfig, net: &'a Network) -> EstimandRequest<'a> {
    EstimandRequest {
        spec: ExposureSpec::new(cfg.exposure, net),
        mode: cfg.counterfactual.clone(),
        levels: cfg.levels.clone(),
        mask: None,
        positivity: cfg.positivity,
    }
}

fn unit_csv<T: std::fmt::Display>(column: &str, values: &[T]) -> Vec<u8> {
    let mut out = format!("unit,{column}\n");
    for (i, v) in values.iter().enumerate() {
        out.push_str(&format!("{i},{v}\n"));
    }
    out.into_bytes()
}

fn simulate(args: &CommonArgs) -> Result<()> {
    let (cfg, edges) = setup(args)?;
    let scenario = Scenario::build(&cfg, None, edges)?;
    let request = scenario.request(&cfg);
    let d = scenario.design.sample(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0)));
    let y = scenario.model.evaluate_binary(&d)?;
    let dec = estimation_error_terms(&scenario.model, &scenario.design, &request, &d)?;
    let oracles = dec.iter().map(|e| e.oracle.value).collect();
    let mut warnings = Vec::new();
    let result = estimate_block(&cfg, &scenario.design, &request, &y, &d, Some(oracles), &mut warnings)?;
    let tables = vec![("assignments.csv", unit_csv("d", &d)), ("outcomes.csv", unit_csv("y", &y))];
    emit(args, "simulate", &cfg, result, warnings, tables)
}

/// Observed `(d, y)` from the CSV flags.
fn observed(args: &CommonArgs, n: usize) -> Result<(Vec<u8>, Vec<f64>)> {
    let (Some(assign), Some(outcomes)) = (&args.assign, &args.outcomes) else {
        return Err(CoaError::config("assign", "--assign and --outcomes are both required"));
    };
    let d = binary_assignment(&read_unit_column(open(assign)?, n, "d")?)?;
    let y = read_unit_column(open(outcomes)?, n, "y")?;
    Ok((d, y))
}

fn estimate(args: &CommonArgs) -> Result<()> {
    let (cfg, edges) = setup(args)?;
    let net = cfg.build_network(None, edges)?;
    let design = cfg.build_design(&net)?;
    let (d, y) = observed(args, net.n())?;
    let request = request_for(&cfg, &net);
    let mut warnings = Vec::new();
    let result = estimate_block(&cfg, &design, &request, &y, &d, None, &mut warnings)?;
    emit(args, "estimate", &cfg, result, warnings, Vec::new())
}

fn validate(args: &CommonArgs) -> Result<()> {
    let (cfg, edges) = setup(args)?;
    let report = validate_unbiasedness(&cfg, edges)?;
    emit(args, "validate", &cfg, report, Vec::new(), Vec::new())
}

#[derive(Debug, Serialize)]
struct McResult {
    n: usize,
    summary: crate::harness::McSummary,
    coverage: crate::harness::CoverageReport,
}

fn mc(args: &CommonArgs) -> Result<()> {
    let (cfg, edges) = setup(args)?;
    let scenario = Scenario::build(&cfg, None, edges)?;
    let table = monte_carlo(&scenario, &scenario.request(&cfg), &cfg.inference, cfg.replications, cfg.seed)?;
    let summary = summarize(&table);
    let coverage = coverage_normality_report(&table, cfg.inference.enabled.then_some(cfg.inference.alpha));
    let mut warnings = Vec::new();
    if cfg.levels.len() == 2 && cfg.inference.enabled && coverage.coverage.is_none() {
        warnings.push(Warning::new(
            "coverage_unavailable",
            format!(
                "coverage needs at least {} replications",
                crate::harness::MIN_COVERAGE_REPLICATIONS
            ),
        ));
    }
    if cfg.levels.len() == 2 && coverage.ks_p_value.is_none() {
        warnings.push(Warning::new("normality_unavailable", "no nondegenerate contrast errors"));
    }
    if cfg.counterfactual.depends_on_rest(&scenario.design) {
        warnings.push(Warning::new(
            "normality_conditioning",
            "the counterfactual depends on assignments outside the exposure domain; normality is not covered",
        ));
    }
    if summary.clamped > 0 {
        warnings.push(Warning::new(
            "sigma_clamped",
            format!("{} replications clamped a negative variance estimate", summary.clamped),
        ));
    }
    let mut csv = Vec::new();
    table.write_csv(&mut csv)?;
    let result = McResult {
        n: table.n,
        summary,
        coverage,
    };
    emit(args, "mc", &cfg, result, warnings, vec![("replications.csv", csv)])
}

#[derive(Debug, Serialize)]
struct SweepResult {
    rows: Vec<crate::harness::SweepRow>,
    /// RMSE at each size over RMSE at the first.
    rmse_ratios: Vec<Option<f64>>,
}

fn sweep(args: &CommonArgs) -> Result<()> {
    let (cfg, _) = setup(args)?;
    if matches!(cfg.network, NetworkSpec::EdgeList { .. }) {
        return Err(CoaError::config("network.kind", "sweeps need a generated network family"));
    }
    let sizes = if cfg.sizes.is_empty() { vec![cfg.network.n()] } else { cfg.sizes.clone() };
    let rows = consistency_sweep(&cfg, &sizes)?;
    let base = rows.first().map_or(0.0, |r| r.error.rmse);
    let rmse_ratios = rows.iter().map(|r| (base > 0.0).then(|| r.error.rmse / base)).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["n", "replications", "mean", "se", "rmse"]).map_err(csv_error)?;
    for r in &rows {
        w.write_record([
            r.n.to_string(),
            r.replications.to_string(),
            r.error.mean.to_string(),
            r.error.se.to_string(),
            r.error.rmse.to_string(),
        ])
        .map_err(csv_error)?;
    }
    let csv = w.into_inner().map_err(|e| CoaError::Undefined(e.to_string()))?;
    emit(args, "sweep", &cfg, SweepResult { rows, rmse_ratios }, Vec::new(), vec![("sweep.csv", csv)])
}

fn csv_error(e: csv::Error) -> CoaError {
    CoaError::Io(std::io::Error::other(e))
}

#[derive(Debug, Serialize)]
struct RecoverResult {
    source: &'static str,
    traces: TraceEstimands,
    recovery: crate::structural::Recovery,
    #[serde(skip_serializing_if = "Option::is_none")]
    decomposition: Option<crate::structural::Decomposition>,
    #[serde(skip_serializing_if = "Option::is_none")]
    global_exposure: Option<crate::structural::FPSummary>,
}

/// Plug-in trace estimates from one experiment.
fn estimated_traces(net: &Network, design: &Design, cfg: &RunConfig, d: &[u8], y: &[f64]) -> Result<TraceEstimands> {
    let ly = transformed_outcome(net, y, 1);
    let contrast = |values: &[f64], kind: ExposureKind| -> Result<f64> {
        let req = EstimandRequest {
            positivity: cfg.positivity,
            ..EstimandRequest::new(ExposureSpec::new(kind, net), CounterfactualMode::Experimental, vec![1.0, 0.0])
        };
        let e = coa_ipw_estimate(values, d, design, &req)?;
        Ok(e[0].value - e[1].value)
    };
    Ok(TraceEstimands {
        tau_y: contrast(y, ExposureKind::Fraction)?,
        tau_ly: contrast(&ly, ExposureKind::Fraction)?,
        tau_dir: contrast(y, ExposureKind::Own)?,
        tau_ly0: contrast(&ly, ExposureKind::Own)?,
    })
}

fn recover(args: &RecoverArgs) -> Result<()> {
    let common = &args.common;
    let (cfg, edges) = setup(common)?;
    let mut warnings = Vec::new();
    let result = if common.assign.is_some() || common.outcomes.is_some() {
        let net = cfg.build_network(None, edges)?;
        let design = cfg.build_design(&net)?;
        let (d, y) = observed(common, net.n())?;
        let traces = estimated_traces(&net, &design, &cfg, &d, &y)?;
        RecoverResult {
            source: "estimated",
            traces,
            recovery: recover_linear_in_means(&traces, 1.0)?,
            decomposition: None,
            global_exposure: None,
        }
    } else {
        let scenario = Scenario::build(&cfg, None, edges)?;
        let sys = LinearizedSystem::from_model(&scenario.model, &vec![0.0; scenario.n()], 1.0)?;
        let traces = trace_estimands(&sys)?;
        let global_exposure = match global_exposure_fp(&sys, &vec![1.0; scenario.n()], args.s0) {
            Ok(fp) => Some(fp),
            Err(e) => {
                warnings.push(Warning::new("global_exposure_unavailable", e.to_string()));
                None
            }
        };
        RecoverResult {
            source: "model",
            traces,
            recovery: recover_linear_in_means(&traces, 1.0)?,
            decomposition: Some(total_effect_decomposition(&sys)?),
            global_exposure,
        }
    };
    if result.recovery.gamma2.is_none() {
        warnings.push(Warning::new(
            "gamma2_unidentified",
            "the network carries no variation identifying the peer coefficient",
        ));
    }
    emit(common, "recover", &cfg, result, warnings, Vec::new())
}

fn diagnose(args: &CommonArgs) -> Result<()> {
    let (cfg, _) = setup(args)?;
    if matches!(cfg.network, NetworkSpec::EdgeList { .. }) {
        return Err(CoaError::config("network.kind", "diagnostics need a generated network family"));
    }
    let sizes = if cfg.sizes.is_empty() { vec![cfg.network.n()] } else { cfg.sizes.clone() };
    let rows = influence_diagnostics(&cfg, &sizes)?;
    let mut warnings = Vec::new();
    if sizes.iter().any(|&n| n > crate::assigndesign::INFLUENCE_CAP) {
        warnings.push(Warning::new(
            "influence_not_enumerated",
            format!(
                "influence is not enumerated above {} units and is reported as null",
                crate::assigndesign::INFLUENCE_CAP
            ),
        ));
    }
    let mut csv = String::from("n,influence_max,influence_mean,max_dependency,positivity_bound\n");
    let cell = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.n,
            cell(r.influence_max),
            cell(r.influence_mean),
            r.max_dependency,
            r.positivity_bound
        ));
    }
    emit(args, "diagnose", &cfg, rows, warnings, vec![("diagnostics.csv", csv.into_bytes())])
}
