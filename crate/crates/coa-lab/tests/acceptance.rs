//! Acceptance checks. Each criterion prints one PASS/FAIL line; the process
//! exits nonzero if any fails. `ACCEPTANCE_ONLY=3,8` runs a subset.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use coa_lab::assigndesign::{all_assignments, CounterfactualMode, Design, ExposureKind, ExposureSpec};
use coa_lab::coa::{coa_ipw_estimate, estimation_error_terms, oracle_estimand, EstimandRequest, Positivity};
use coa_lab::harness::{
    consistency_sweep, coverage_normality_report, run_monte_carlo, validate_unbiasedness, DesignSpec,
    EstimatorSpec, InferenceSpec, ModelSpec, NetworkSpec, RunConfig, RunMode, SCHEMA_VERSION,
};
use coa_lab::inference::{variance_components, w_lower_bound, CondCDF, OwnUnitTerm};
use coa_lab::netgraph::Network;
use coa_lab::outcomes::{
    smoking_game, ExposureResponse, LinearInMeansParams, ModelKind, OutcomeModel, PeerAggregate, SmoothModel,
};
use coa_lab::structural::{
    global_exposure_fp, late_weights, primitivity, random_peer_operator, recover_linear_in_means,
    remainder_log_slope, total_effect_decomposition, trace_estimands, transformed_outcome, LateSetting,
    LinearizedSystem, Primitivity, TraceEstimands, UnitDerivatives,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const UNBIASED_TOL: f64 = 1e-10;
const DECOMPOSITION_TOL: f64 = 1e-10;
const RECOVERY_TOL: f64 = 1e-8;
const RECOVERY_SE_MULTIPLE: f64 = 3.0;
const FP_SLOPE_REL_TOL: f64 = 0.15;
const FP_ENSEMBLE: usize = 40;
const SPARSE_RMSE_RATIO_MAX: f64 = 0.35;
const DENSE_RMSE_RATIO_MIN: f64 = 0.8;
const COVERAGE_MIN: f64 = 0.93;
const CONSERVATIVE_TOL: f64 = 1e-10;
const KS_P_MIN: f64 = 0.01;
const COUPLING_TOL: f64 = 1e-12;
const LATE_TOL: f64 = 1e-10;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

type Check = fn() -> Outcome;

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn main() -> ExitCode {
    let criteria: [(u8, &str, Duration, Check); 10] = [
        (1, "unbiasedness by enumeration", secs(30), unbiasedness),
        (2, "decomposition identity", secs(5), decomposition),
        (3, "structural recovery", secs(120), recovery),
        (4, "dominant-eigenvector remainder", secs(10), fp_remainder),
        (5, "consistency and dense counterexample", secs(600), consistency),
        (6, "coverage and conservativeness", secs(600), coverage),
        (7, "normality", secs(600), normality),
        (8, "isotone lower bound", secs(1), isotone),
        (9, "LATE identities", secs(5), late),
        (10, "worked examples", secs(5), worked_examples),
    ];
    let only: Option<Vec<u8>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|k| k.trim().parse().ok()).collect());
    let mut failed = 0;
    for (k, name, limit, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&k)) {
            continue;
        }
        let start = Instant::now();
        let out = check();
        let elapsed = start.elapsed();
        let pass = out.pass && elapsed < limit;
        failed += usize::from(!pass);
        println!(
            "{} criterion {k} ({name}): {} [{:.2}s, limit {}s]",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}

fn config(network: NetworkSpec, model: ModelSpec, exposure: ExposureKind, levels: Vec<f64>) -> RunConfig {
    RunConfig {
        schema: SCHEMA_VERSION,
        network,
        model,
        design: DesignSpec::Bernoulli { p: 0.5 },
        exposure,
        counterfactual: CounterfactualMode::Experimental,
        levels,
        inference: InferenceSpec::default(),
        replications: 0,
        seed: 20240,
        mode: RunMode::Enumerate,
        sizes: Vec::new(),
        positivity: Positivity::Lenient,
        estimator: EstimatorSpec::Coa,
    }
}

fn lim_params(gamma1: f64, gamma2: f64) -> LinearInMeansParams {
    LinearInMeansParams {
        beta0: 0.0,
        beta1: 1.0,
        gamma1,
        gamma2,
    }
}

/// The sparse benchmark: degree-4 ring, linear-in-means, fraction exposure.
fn sparse_benchmark(n: usize, replications: usize) -> RunConfig {
    let mut cfg = config(
        NetworkSpec::Ring { n, k: 4 },
        ModelSpec::LinearInMeans {
            params: lim_params(0.5, 0.1),
            shock_scale: 1.0,
        },
        ExposureKind::Fraction,
        vec![0.75, 0.25],
    );
    cfg.mode = RunMode::MonteCarlo;
    cfg.replications = replications;
    cfg
}

fn unbiasedness() -> Outcome {
    let response = ExposureResponse {
        base: 1.0,
        direct: 1.5,
        spillover: 2.0,
        interaction: -0.5,
    };
    let models = [
        (
            "sutva",
            ModelSpec::Sutva {
                effect: 2.0,
                shock_scale: 1.0,
            },
        ),
        (
            "exposure",
            ModelSpec::Exposure {
                exposure: ExposureKind::Fraction,
                response,
                shock_scale: 1.0,
            },
        ),
        (
            "linear-in-means",
            ModelSpec::LinearInMeans {
                params: lim_params(0.5, 0.3),
                shock_scale: 1.0,
            },
        ),
        (
            "patient-zero",
            ModelSpec::PatientZero {
                injection: 0,
                effective_prob: 0.7,
            },
        ),
    ];
    let exposures = [
        (ExposureKind::Own, vec![1.0, 0.0]),
        (ExposureKind::Fraction, vec![1.0, 0.5, 0.0]),
    ];
    let mut worst = 0.0f64;
    let mut cases = 0;
    for (name, model) in &models {
        for (exposure, levels) in &exposures {
            let cfg = config(NetworkSpec::Path { n: 8 }, model.clone(), *exposure, levels.clone());
            match validate_unbiasedness(&cfg, None) {
                Ok(r) if r.assignments == 256 => worst = worst.max(r.max_abs_bias),
                Ok(r) => return Outcome::new(false, format!("{name}: {} assignments", r.assignments)),
                Err(e) => return Outcome::new(false, format!("{name}/{exposure:?}: {e}")),
            }
            cases += 1;
        }
    }
    Outcome::new(
        worst <= UNBIASED_TOL,
        format!("{cases} model/exposure cases, max |bias| = {worst:.2e} (tol {UNBIASED_TOL:.0e})"),
    )
}

fn lim_system(net: Network, gamma1: f64, gamma2: f64) -> LinearizedSystem {
    let n = net.n();
    let model = OutcomeModel::linear_in_means(net, lim_params(gamma1, gamma2), vec![0.0; n]).expect("model");
    LinearizedSystem::from_model(&model, &vec![0.0; n], 1.0).expect("system")
}

fn decomposition() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for g in 0..10 {
        let n = rng.gen_range(5..=50);
        let net = Network::random_bounded_degree(n, 4, 0.5, &mut rng);
        let sys = lim_system(net, 0.3, 0.04 + 0.02 * g as f64);
        match total_effect_decomposition(&sys) {
            Ok(dec) => {
                let sum: f64 = dec.by_distance.iter().sum();
                worst = worst.max((dec.tau_total - sum).abs());
            }
            Err(e) => return Outcome::new(false, e.to_string()),
        }
    }
    Outcome::new(
        worst <= DECOMPOSITION_TOL,
        format!("10 graphs, max |τ_tot − Σ τ_s| = {worst:.2e} (tol {DECOMPOSITION_TOL:.0e})"),
    )
}

/// One experiment's plug-in estimates of the four trace estimands.
fn estimated_traces(net: &Network, model: &OutcomeModel, design: &Design, d: &[u8]) -> coa_lab::Result<TraceEstimands> {
    let y = model.evaluate_binary(d)?;
    let ly = transformed_outcome(net, &y, 1);
    let contrast = |values: &[f64], kind: ExposureKind| -> coa_lab::Result<f64> {
        let req = EstimandRequest::new(ExposureSpec::new(kind, net), CounterfactualMode::Experimental, vec![1.0, 0.0]);
        let e = coa_ipw_estimate(values, d, design, &req)?;
        Ok(e[0].value - e[1].value)
    };
    Ok(TraceEstimands {
        tau_y: contrast(&y, ExposureKind::Fraction)?,
        tau_ly: contrast(&ly, ExposureKind::Fraction)?,
        tau_dir: contrast(&y, ExposureKind::Own)?,
        tau_ly0: contrast(&ly, ExposureKind::Own)?,
    })
}

fn recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let graphs = [
        ("K3", Network::complete(3)),
        ("random-20", Network::random_bounded_degree(20, 3, 0.6, &mut rng)),
    ];
    let mut exact_err = 0.0f64;
    for (_, net) in &graphs {
        for gamma2 in [0.1, 0.25] {
            let sys = lim_system(net.clone(), 0.0, gamma2);
            let r = trace_estimands(&sys).and_then(|t| recover_linear_in_means(&t, 1.0));
            match r {
                Ok(r) => {
                    let g = r.gamma2.unwrap_or(f64::NAN);
                    exact_err = exact_err.max((g - gamma2).abs()).max((r.beta1 - 1.0).abs());
                }
                Err(e) => return Outcome::new(false, e.to_string()),
            }
        }
    }
    let n = 500;
    let replications = 500;
    let net = Network::random_bounded_degree(n, 3, 0.8, &mut rng);
    let design = Design::bernoulli(n, 0.5).expect("design");
    let mut ipw = Vec::new();
    for gamma2 in [0.1, 0.25] {
        let shocks: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let params = LinearInMeansParams {
            beta0: 0.2,
            ..lim_params(0.0, gamma2)
        };
        let model = OutcomeModel::linear_in_means(net.clone(), params, shocks).expect("model");
        let mut draws = Vec::with_capacity(replications);
        for _ in 0..replications {
            let d = design.sample(&mut rng);
            match estimated_traces(&net, &model, &design, &d) {
                Ok(t) => draws.push(t),
                Err(e) => return Outcome::new(false, e.to_string()),
            }
        }
        // recover from the replication means of the unbiased trace estimates,
        // with a delta-method standard error for the ratio τ_Y/τ_LY
        let r = draws.len() as f64;
        let mean = |f: fn(&TraceEstimands) -> f64| draws.iter().map(f).sum::<f64>() / r;
        let averaged = TraceEstimands {
            tau_y: mean(|t| t.tau_y),
            tau_ly: mean(|t| t.tau_ly),
            tau_dir: mean(|t| t.tau_dir),
            tau_ly0: mean(|t| t.tau_ly0),
        };
        let mean = match recover_linear_in_means(&averaged, 1.0) {
            Ok(rec) => rec.gamma2.unwrap_or(f64::NAN),
            Err(e) => return Outcome::new(false, e.to_string()),
        };
        let linearized: f64 = draws
            .iter()
            .map(|t| ((t.tau_y - averaged.tau_y) - mean * (t.tau_ly - averaged.tau_ly)).powi(2))
            .sum::<f64>()
            / (r - 1.0);
        let se = (linearized / r).sqrt() / averaged.tau_ly.abs();
        ipw.push((gamma2, mean, se));
    }
    let ipw_ok = ipw.iter().all(|(g, m, se)| (m - g).abs() <= RECOVERY_SE_MULTIPLE * se);
    let ipw_text: Vec<String> = ipw
        .iter()
        .map(|(g, m, se)| format!("γ₂={g}: γ̂₂={m:.4} ± {se:.4}"))
        .collect();
    Outcome::new(
        exact_err <= RECOVERY_TOL && ipw_ok,
        format!(
            "exact max error {exact_err:.2e} (tol {RECOVERY_TOL:.0e}); IPW n={n} R={replications}: {} (within {RECOVERY_SE_MULTIPLE} SE)",
            ipw_text.join(", ")
        ),
    )
}

/// The first primitive draw is the declared test system; the rest of the
/// ensemble is summarized by its median, since a finite window of powers still
/// carries transients from eigenvalues close to `λ₂`.
fn fp_remainder() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut rel = Vec::new();
    let mut attempts = 0;
    while rel.len() < FP_ENSEMBLE && attempts < 1000 {
        attempts += 1;
        let net = Network::erdos_renyi(30, 0.15, &mut rng);
        let h_y = random_peer_operator(&net, 0.8, &mut rng);
        if primitivity(&h_y) != Primitivity::Primitive {
            continue;
        }
        let sys = LinearizedSystem::new(net, h_y, DMatrix::identity(30, 30), 1.0).expect("system");
        match global_exposure_fp(&sys, &[1.0; 30], 10) {
            Ok(fp) => {
                let norms: Vec<_> = fp.remainder_norms.iter().filter(|r| r.s0 >= 2).cloned().collect();
                let slope = remainder_log_slope(&norms);
                let target = fp.lambda2.ln();
                rel.push(((slope - target) / target).abs());
            }
            Err(e) => return Outcome::new(false, e.to_string()),
        }
    }
    if rel.len() < FP_ENSEMBLE {
        return Outcome::new(false, "too few primitive draws");
    }
    let first = rel[0];
    let mut sorted = rel.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[FP_ENSEMBLE / 2];
    let within = rel.iter().filter(|&&r| r <= FP_SLOPE_REL_TOL).count();
    Outcome::new(
        first <= FP_SLOPE_REL_TOL && median <= FP_SLOPE_REL_TOL,
        format!(
            "relative slope error vs log|λ₂|: test system {first:.3}, ensemble median {median:.3} (tol {FP_SLOPE_REL_TOL}); {within}/{FP_ENSEMBLE} draws within tolerance"
        ),
    )
}

fn consistency() -> Outcome {
    let sizes = [100, 1600];
    let replications = 2000;
    let mut sparse = sparse_benchmark(100, replications);
    sparse.mode = RunMode::Sweep;
    let sparse_rows = match consistency_sweep(&sparse, &sizes) {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, e.to_string()),
    };
    let sparse_ratio = sparse_rows[1].error.rmse / sparse_rows[0].error.rmse;

    let mut dense = config(
        NetworkSpec::Complete { n: 100 },
        ModelSpec::Exposure {
            exposure: ExposureKind::Fraction,
            response: ExposureResponse {
                base: 1.0,
                direct: 1.0,
                spillover: 2.0,
                interaction: 0.0,
            },
            shock_scale: 1.0,
        },
        ExposureKind::Fraction,
        vec![0.5],
    );
    dense.mode = RunMode::Sweep;
    dense.replications = replications;
    dense.estimator = EstimatorSpec::PolicyShift { p: 0.52 };
    let dense_rows = match consistency_sweep(&dense, &sizes) {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, e.to_string()),
    };
    let dense_ratio = dense_rows[1].error.rmse / dense_rows[0].error.rmse;
    Outcome::new(
        sparse_ratio <= SPARSE_RMSE_RATIO_MAX && dense_ratio >= DENSE_RMSE_RATIO_MIN,
        format!(
            "sparse RMSE {:.4} → {:.4}, ratio {sparse_ratio:.3} (max {SPARSE_RMSE_RATIO_MAX}); dense RMSE {:.4} → {:.4}, ratio {dense_ratio:.3} (min {DENSE_RMSE_RATIO_MIN})",
            sparse_rows[0].error.rmse, sparse_rows[1].error.rmse, dense_rows[0].error.rmse, dense_rows[1].error.rmse
        ),
    )
}

/// Exact `E[σ̂]` and `n·var(τ̂ − τ*)` over every assignment.
fn enumerated_conservativeness(model: &OutcomeModel, design: &Design, req: &EstimandRequest<'_>) -> coa_lab::Result<(f64, f64)> {
    let n = design.n();
    let (mut m1, mut m2, mut es) = (0.0, 0.0, 0.0);
    for d in all_assignments(n) {
        let p = design.pmf(&d);
        if p == 0.0 {
            continue;
        }
        let dec = estimation_error_terms(model, design, req, &d)?;
        let err = (dec[0].estimate.value - dec[0].oracle.value) - (dec[1].estimate.value - dec[1].oracle.value);
        m1 += p * err;
        m2 += p * err * err;
        let y = model.evaluate_binary(&d)?;
        es += p * variance_components(&y, &d, design, req, 0.5, None)?.sigma;
    }
    Ok((es, n as f64 * (m2 - m1 * m1)))
}

fn small_designs() -> coa_lab::Result<Vec<(f64, f64)>> {
    let response = ExposureResponse {
        base: 0.5,
        direct: 1.0,
        spillover: 0.8,
        interaction: 0.3,
    };
    let shocks = |n: usize| -> Vec<f64> { (0..n).map(|i| 0.3 * i as f64 - 0.7).collect() };
    let mut out = Vec::new();

    let net = Network::path(6);
    let y0 = vec![0.0, 1.0, 2.0, -1.0, 0.5, 3.0];
    let y1 = vec![1.5, 0.0, 4.0, 2.0, 0.5, 1.0];
    let model = OutcomeModel::sutva(net.clone(), y0, y1)?;
    let design = Design::bernoulli(6, 0.3)?;
    let req = EstimandRequest::new(ExposureSpec::new(ExposureKind::Own, &net), CounterfactualMode::PointMass, vec![1.0, 0.0]);
    out.push(enumerated_conservativeness(&model, &design, &req)?);

    let net = Network::cycle(7);
    let model = OutcomeModel::exposure(net.clone(), ExposureKind::Count, response, shocks(7))?;
    let design = Design::bernoulli(7, 0.5)?;
    let req = EstimandRequest::new(ExposureSpec::new(ExposureKind::Count, &net), CounterfactualMode::Experimental, vec![2.0, 0.0]);
    out.push(enumerated_conservativeness(&model, &design, &req)?);

    let net = Network::path(8);
    let model = OutcomeModel::exposure(net.clone(), ExposureKind::Fraction, response, shocks(8))?;
    let design = Design::bernoulli(8, 0.5)?;
    let req = EstimandRequest::new(ExposureSpec::new(ExposureKind::Fraction, &net), CounterfactualMode::Experimental, vec![1.0, 0.0]);
    out.push(enumerated_conservativeness(&model, &design, &req)?);
    Ok(out)
}

fn coverage() -> Outcome {
    let small = match small_designs() {
        Ok(s) => s,
        Err(e) => return Outcome::new(false, e.to_string()),
    };
    let conservative = small.iter().all(|(es, var)| *es >= var - CONSERVATIVE_TOL);
    let gaps: Vec<String> = small.iter().map(|(es, var)| format!("{es:.4}≥{var:.4}")).collect();
    let table = match run_monte_carlo(&sparse_benchmark(400, 2000), None) {
        Ok(t) => t,
        Err(e) => return Outcome::new(false, e.to_string()),
    };
    let report = coverage_normality_report(&table, Some(0.05));
    let cov = report.coverage.unwrap_or(0.0);
    Outcome::new(
        conservative && cov >= COVERAGE_MIN,
        format!(
            "coverage {cov:.4} over {} replications at n=400 (min {COVERAGE_MIN}); E σ̂ vs exact variance on 3 small designs: {}",
            report.replications,
            gaps.join(", ")
        ),
    )
}

fn normality() -> Outcome {
    let mut cfg = sparse_benchmark(1600, 2000);
    cfg.inference.enabled = false;
    let table = match run_monte_carlo(&cfg, None) {
        Ok(t) => t,
        Err(e) => return Outcome::new(false, e.to_string()),
    };
    let report = coverage_normality_report(&table, None);
    let p = report.ks_p_value.unwrap_or(0.0);
    Outcome::new(
        p > KS_P_MIN,
        format!(
            "KS D = {:.4}, p = {p:.3} over {} replications at n=1600 (min p {KS_P_MIN})",
            report.ks_statistic.unwrap_or(f64::NAN),
            report.replications
        ),
    )
}

/// Minimum of `Σ cost_ik π_ik` over couplings `π` of `row` and `col` by
/// enumerating every basic solution of the transportation polytope.
fn transport_minimum(cost: &DMatrix<f64>, row: &[f64], col: &[f64]) -> f64 {
    let (m, k) = (row.len(), col.len());
    let cells: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..k).map(move |j| (i, j))).collect();
    let basis = m + k - 1;
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << cells.len()) {
        if mask.count_ones() as usize != basis {
            continue;
        }
        let chosen: Vec<(usize, usize)> = cells
            .iter()
            .enumerate()
            .filter(|(b, _)| mask >> b & 1 == 1)
            .map(|(_, c)| *c)
            .collect();
        // row sums, then all but the last column sum
        let mut a = DMatrix::<f64>::zeros(basis, basis);
        let mut rhs = nalgebra::DVector::zeros(basis);
        for (c, &(i, j)) in chosen.iter().enumerate() {
            a[(i, c)] = 1.0;
            if j + 1 < k {
                a[(m + j, c)] = 1.0;
            }
        }
        for i in 0..m {
            rhs[i] = row[i];
        }
        for j in 0..k - 1 {
            rhs[m + j] = col[j];
        }
        if a.determinant().abs() < 1e-9 {
            continue;
        }
        let Some(x) = a.lu().solve(&rhs) else { continue };
        if x.iter().any(|&v| v < -1e-12) {
            continue;
        }
        let value: f64 = chosen.iter().zip(x.iter()).map(|(&(i, j), v)| cost[(i, j)] * v).sum();
        best = best.min(value);
    }
    best
}

fn isotone() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    let instances = 200;
    for _ in 0..instances {
        let m = rng.gen_range(1..=4);
        let k = rng.gen_range(1..=4);
        let terms: Vec<OwnUnitTerm> = (0..m)
            .map(|_| OwnUnitTerm {
                y: f64::from(rng.gen_range(-4i32..=4)) * 0.5,
                inverse_probability: rng.gen_range(1.0..4.0),
                cov: -rng.gen_range(0.0..2.0),
            })
            .collect();
        let support: Vec<f64> = (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let masses: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
        let target = CondCDF::from_weighted(0.0, &support, &masses).expect("target");
        let plug_in = w_lower_bound(&terms, Some(&target), 1, 0.5, 0.0).expect("bound").value;

        let total_ip: f64 = terms.iter().map(|u| u.inverse_probability).sum();
        let row: Vec<f64> = terms.iter().map(|u| u.inverse_probability / total_ip).collect();
        let mut col = Vec::new();
        let mut prev = 0.0;
        for c in &target.cumulative {
            col.push(c - prev);
            prev = *c;
        }
        // Σ_i cov_i ip_i y_i E[Ŷ_i] = total_ip · Σ_ik π_ik cov_i y_i s_k
        let cost = DMatrix::from_fn(m, target.support.len(), |i, j| {
            total_ip * terms[i].cov * terms[i].y * target.support[j]
        });
        let brute = transport_minimum(&cost, &row, &col);
        worst = worst.max((plug_in - brute).abs() / brute.abs().max(1.0));
    }
    Outcome::new(
        worst <= COUPLING_TOL,
        format!("{instances} marginal pairs, max |plug-in − min over couplings| = {worst:.2e} (tol {COUPLING_TOL:.0e})"),
    )
}

fn late() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    let mut negative = 0usize;
    let mut cases = 0;
    for _ in 0..12 {
        let n = rng.gen_range(4..=12);
        let net = Network::random_bounded_degree(n, 3, 0.7, &mut rng);
        if net.max_degree() == 0 {
            continue;
        }
        for aggregate in [PeerAggregate::Mean, PeerAggregate::Sum] {
            let mut sm = SmoothModel::random_complementarity(&net, &mut rng);
            sm.spillover = 0.0;
            sm.aggregate = aggregate;
            if aggregate == PeerAggregate::Sum {
                sm.peer.iter_mut().for_each(|p| *p *= 0.3);
            }
            let model = OutcomeModel::new(net.clone(), ModelKind::Smooth(sm)).expect("model");
            let d: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0u8..2))).collect();
            let (derivs, t_y) = UnitDerivatives::from_model(&model, &d).expect("derivatives");
            let sys = LinearizedSystem::from_model(&model, &d, 1.0).expect("system");
            let x = sys.response().expect("response");
            let l = net.adjacency();
            let settings: Vec<(LateSetting, DMatrix<f64>, DMatrix<f64>)> = match aggregate {
                PeerAggregate::Mean => vec![(LateSetting::Exposure, t_y.clone(), l.clone())],
                PeerAggregate::Sum => (1..=3)
                    .map(|s| {
                        let moved = net.path_distance_indicator(s).indicator;
                        let ls = (0..s).fold(DMatrix::identity(n, n), |acc, _| &acc * &l);
                        (LateSetting::PathOrder { s }, ls, moved)
                    })
                    .collect(),
            };
            for (setting, front, moved) in settings {
                let lw = match late_weights(&net, &derivs, &setting, Some(&t_y)) {
                    Ok(lw) => lw,
                    Err(coa_lab::CoaError::Undefined(_)) => continue,
                    Err(e) => return Outcome::new(false, e.to_string()),
                };
                // the ratio of contrasts from the re-solved linear response
                let num = x.component_mul(&moved).sum();
                let den = (&front * &x).component_mul(&moved).sum();
                if den == 0.0 {
                    continue;
                }
                let ratio = num / den;
                worst = worst.max((ratio - lw.weighted_average).abs() / ratio.abs().max(1.0));
                negative += lw.weights.iter().filter(|&&a| a < 0.0).count();
                cases += 1;
            }
        }
    }
    Outcome::new(
        worst <= LATE_TOL && negative == 0 && cases > 0,
        format!("{cases} model/setting cases, max |ratio − weighted average| = {worst:.2e} (tol {LATE_TOL:.0e}), {negative} negative weights"),
    )
}

fn worked_examples() -> Outcome {
    let net = Network::path(3);
    let model = OutcomeModel::patient_zero(net.clone(), 0, vec![1; 3]).expect("model");
    let design = Design::bernoulli(3, 0.5).expect("design");
    let req = EstimandRequest::new(ExposureSpec::new(ExposureKind::Own, &net), CounterfactualMode::PointMass, vec![1.0, 0.0]);
    let contrast = match oracle_estimand(&model, &design, &req, &[0, 0, 0]) {
        Ok(o) => o[0].value - o[1].value,
        Err(e) => return Outcome::new(false, e.to_string()),
    };
    let chain_ok = (contrast + 1.0).abs() < 1e-12;

    // Type-A units always smoke; an untreated F unit smokes iff more than half
    // of the other nine smoke, so with k treated the top equilibrium keeps
    // 10 − k smokers while (9 − k)/9 > 1/2, i.e. k ≤ 4.
    let (n_a, n_f) = (2, 8);
    let (g_net, game) = smoking_game(n_a, n_f);
    let n = n_a + n_f;
    let derived_threshold = (0..=n_f).find(|&k| (n - 1 - k) as f64 / (n - 1) as f64 <= 0.5).expect("threshold");
    let mut shares = Vec::new();
    for k in 0..=n_f {
        let d: Vec<u8> = (0..n).map(|i| u8::from(i >= n_a && i < n_a + k)).collect();
        let eq = match game.enumerate(&g_net, &d) {
            Ok(eq) => eq,
            Err(e) => return Outcome::new(false, e.to_string()),
        };
        // the enumerated largest equilibrium dominates every other one
        let top: Vec<u8> = (0..n).map(|i| eq.all.iter().map(|y| y[i]).max().unwrap_or(0)).collect();
        if !eq.all.contains(&top) || top != eq.largest {
            return Outcome::new(false, format!("no largest equilibrium with {k} treated"));
        }
        shares.push(top.iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64);
    }
    let collapse = (1..shares.len()).find(|&k| shares[k - 1] - shares[k] > 1.5 / n as f64);
    let game_ok = collapse == Some(derived_threshold);
    let (before, after) = collapse.map_or((f64::NAN, f64::NAN), |k| (shares[k - 1], shares[k]));
    Outcome::new(
        chain_ok && game_ok,
        format!(
            "patient-zero contrast {contrast}; smoking share collapses from {:.0}% to {:.0}% at {} treated (derived {derived_threshold}; reference: 60% to 20%)",
            100.0 * before,
            100.0 * after,
            collapse.map_or("none".into(), |k| k.to_string()),
        ),
    )
}
