//! Exhaustive enumeration and Monte Carlo studies of the randomization
//! distribution of the estimators.

mod config;

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

pub use config::{
    derive_seed, DesignSpec, EstimatorSpec, InferenceSpec, ModelSpec, NetworkSpec, RunConfig, RunMode,
    Scenario, ENUMERATION_UNIT_CAP, SCHEMA_VERSION,
};

use crate::assigndesign::{
    all_assignments, design_diagnostics, rao_blackwell_weight, INFLUENCE_CAP, Design, ExposureKind, ExposureSpec,
};
use crate::coa::{estimation_error_terms, EstimandRequest};
use crate::error::{CoaError, Result};
use crate::inference::{confidence_interval, variance_components};
use crate::netgraph::Network;
use crate::outcomes::{ModelKind, OutcomeModel};

/// Coverage is not reported from fewer replications than this.
pub const MIN_COVERAGE_REPLICATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelBias {
    pub level: f64,
    /// `E_{π₀}[V̂(t) − V*(t | D)]`.
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnbiasednessReport {
    pub levels: Vec<LevelBias>,
    pub max_abs_bias: f64,
    /// Assignments with positive design probability.
    pub assignments: usize,
}

/// Exact `Σ_D π₀(D)·(V̂(t; D) − V*(t | D))` over every binary assignment.
pub fn expected_error(
    model: &OutcomeModel,
    design: &Design,
    request: &EstimandRequest<'_>,
) -> Result<UnbiasednessReport> {
    let n = design.n();
    if n > ENUMERATION_UNIT_CAP {
        return Err(CoaError::EnumerationCap {
            what: "units for exhaustive enumeration",
            size: n,
            cap: ENUMERATION_UNIT_CAP,
        });
    }
    let assignments: Vec<Vec<u8>> = all_assignments(n).filter(|d| design.pmf(d) > 0.0).collect();
    let terms: Vec<Vec<f64>> = assignments
        .par_iter()
        .map(|d| {
            let p = design.pmf(d);
            estimation_error_terms(model, design, request, d)
                .map(|dec| dec.iter().map(|e| p * (e.estimate.value - e.oracle.value)).collect())
        })
        .collect::<Result<_>>()?;
    let levels: Vec<LevelBias> = request
        .levels
        .iter()
        .enumerate()
        .map(|(k, &level)| LevelBias {
            level,
            bias: terms.iter().map(|row| row[k]).sum(),
        })
        .collect();
    let max_abs_bias = levels.iter().map(|l| l.bias.abs()).fold(0.0, f64::max);
    Ok(UnbiasednessReport {
        levels,
        max_abs_bias,
        assignments: assignments.len(),
    })
}

pub fn validate_unbiasedness(cfg: &RunConfig, edges: Option<Network>) -> Result<UnbiasednessReport> {
    let scenario = Scenario::build(cfg, None, edges)?;
    expected_error(&scenario.model, &scenario.design, &scenario.request(cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationRow {
    pub replication: usize,
    pub treated: usize,
    pub included: usize,
    /// `V̂(t)` per level.
    pub estimates: Vec<f64>,
    /// `V*(t | D)` per level.
    pub oracles: Vec<f64>,
    pub tau_hat: Option<f64>,
    pub tau_star: Option<f64>,
    pub sigma: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub covered: Option<bool>,
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationTable {
    pub n: usize,
    pub levels: Vec<f64>,
    pub seed: u64,
    pub rows: Vec<ReplicationRow>,
}

impl ReplicationTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = ["replication", "treated", "included"].map(String::from).to_vec();
        header.extend(self.levels.iter().map(|t| format!("vhat_{t}")));
        header.extend(self.levels.iter().map(|t| format!("vstar_{t}")));
        header.extend(
            ["tau_hat", "tau_star", "sigma", "ci_lower", "ci_upper", "covered", "clamped"].map(String::from),
        );
        w.write_record(&header).map_err(csv_error)?;
        let opt = |x: Option<f64>| x.map_or_else(String::new, |v| v.to_string());
        for row in &self.rows {
            let mut rec = vec![row.replication.to_string(), row.treated.to_string(), row.included.to_string()];
            rec.extend(row.estimates.iter().map(f64::to_string));
            rec.extend(row.oracles.iter().map(f64::to_string));
            rec.extend([
                opt(row.tau_hat),
                opt(row.tau_star),
                opt(row.sigma),
                opt(row.ci_lower),
                opt(row.ci_upper),
                row.covered.map_or_else(String::new, |c| c.to_string()),
                row.clamped.to_string(),
            ]);
            w.write_record(&rec).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> CoaError {
    CoaError::Io(std::io::Error::other(e))
}

fn replication_rng(seed: u64, r: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, r as u64))
}

fn replicate(
    scenario: &Scenario,
    request: &EstimandRequest<'_>,
    inference: &InferenceSpec,
    seed: u64,
    r: usize,
) -> Result<ReplicationRow> {
    let d = scenario.design.sample(&mut replication_rng(seed, r));
    let dec = estimation_error_terms(&scenario.model, &scenario.design, request, &d)?;
    let estimates: Vec<f64> = dec.iter().map(|e| e.estimate.value).collect();
    let oracles: Vec<f64> = dec.iter().map(|e| e.oracle.value).collect();
    let included = dec.first().map_or(0, |e| e.estimate.included());
    let mut row = ReplicationRow {
        replication: r,
        treated: d.iter().filter(|&&v| v == 1).count(),
        included,
        tau_hat: None,
        tau_star: None,
        sigma: None,
        ci_lower: None,
        ci_upper: None,
        covered: None,
        clamped: false,
        estimates,
        oracles,
    };
    if let [e1, e0] = dec.as_slice() {
        let tau_hat = e1.estimate.value - e0.estimate.value;
        let tau_star = e1.oracle.value - e0.oracle.value;
        row.tau_hat = Some(tau_hat);
        row.tau_star = Some(tau_star);
        if inference.enabled {
            let y = scenario.model.evaluate_binary(&d)?;
            let v = variance_components(&y, &d, &scenario.design, request, inference.rho, inference.bound)?;
            let ci = confidence_interval(tau_hat, v.sigma, included, inference.rho, inference.alpha)?;
            row.sigma = Some(v.sigma);
            row.ci_lower = Some(ci.lower);
            row.ci_upper = Some(ci.upper);
            row.covered = Some(ci.contains(tau_star));
            row.clamped = v.clamped;
        }
    }
    Ok(row)
}

/// `replications` independent draws; draw `r` uses a generator seeded from `(seed, r)`.
pub fn monte_carlo(
    scenario: &Scenario,
    request: &EstimandRequest<'_>,
    inference: &InferenceSpec,
    replications: usize,
    seed: u64,
) -> Result<ReplicationTable> {
    let rows = (0..replications)
        .into_par_iter()
        .map(|r| replicate(scenario, request, inference, seed, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(ReplicationTable {
        n: scenario.n(),
        levels: request.levels.clone(),
        seed,
        rows,
    })
}

pub fn run_monte_carlo(cfg: &RunConfig, edges: Option<Network>) -> Result<ReplicationTable> {
    let scenario = Scenario::build(cfg, None, edges)?;
    monte_carlo(&scenario, &scenario.request(cfg), &cfg.inference, cfg.replications, cfg.seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorSummary {
    pub mean: f64,
    /// Standard error of the mean.
    pub se: f64,
    pub rmse: f64,
}

impl ErrorSummary {
    pub fn from_errors(errors: &[f64]) -> Option<Self> {
        let r = errors.len();
        if r == 0 {
            return None;
        }
        let rf = r as f64;
        let mean = errors.iter().sum::<f64>() / rf;
        let var = if r > 1 {
            errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (rf - 1.0)
        } else {
            0.0
        };
        Some(ErrorSummary {
            mean,
            se: (var / rf).sqrt(),
            rmse: (errors.iter().map(|e| e * e).sum::<f64>() / rf).sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McSummary {
    pub replications: usize,
    /// `V̂(t) − V*(t | D)` per level.
    pub level_errors: Vec<Option<ErrorSummary>>,
    pub contrast_error: Option<ErrorSummary>,
    pub mean_sigma: Option<f64>,
    /// `n·var(τ̂ − τ*)` across replications.
    pub scaled_error_variance: Option<f64>,
    pub clamped: usize,
}

pub fn summarize(table: &ReplicationTable) -> McSummary {
    let level_errors = (0..table.levels.len())
        .map(|k| {
            let e: Vec<f64> = table.rows.iter().map(|r| r.estimates[k] - r.oracles[k]).collect();
            ErrorSummary::from_errors(&e)
        })
        .collect();
    let contrast: Vec<f64> = table
        .rows
        .iter()
        .filter_map(|r| Some(r.tau_hat? - r.tau_star?))
        .collect();
    let contrast_error = ErrorSummary::from_errors(&contrast);
    let sigmas: Vec<f64> = table.rows.iter().filter_map(|r| r.sigma).collect();
    let mean_sigma = (!sigmas.is_empty()).then(|| sigmas.iter().sum::<f64>() / sigmas.len() as f64);
    let scaled_error_variance = contrast_error.map(|s| {
        let r = contrast.len() as f64;
        table.n as f64 * (s.rmse.powi(2) - s.mean.powi(2)) * r / (r - 1.0).max(1.0)
    });
    McSummary {
        replications: table.rows.len(),
        level_errors,
        contrast_error,
        mean_sigma,
        scaled_error_variance,
        clamped: table.rows.iter().filter(|r| r.clamped).count(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub replications: usize,
    pub error: ErrorSummary,
}

/// Mean outcome under Bernoulli(`p₁`) estimated with shift weights
/// `P₁(D_i)P₁(T_i)/(P₀(D_i)P₀(T_i))`, with its exact value.
pub fn policy_shift_estimate(model: &OutcomeModel, design: &Design, p1: f64, d: &[u8]) -> Result<(f64, f64)> {
    let (Design::Bernoulli(b0), ModelKind::Exposure(em)) = (design, model.kind()) else {
        return Err(CoaError::config(
            "estimator",
            "policy-shift weights need a Bernoulli design and an exposure model",
        ));
    };
    if !(0.0..=1.0).contains(&p1) {
        return Err(CoaError::config("estimator.p", format!("{p1} is outside [0,1]")));
    }
    let p0 = b0.p();
    let policy = Design::bernoulli(model.n(), p1)?;
    let net = model.net();
    let spec = ExposureSpec::new(em.kind, net);
    let y = model.evaluate_binary(d)?;
    let r = em.response;
    let n = model.n();
    let mut estimate = 0.0;
    let mut target = 0.0;
    for i in 0..n {
        let t = spec.value(d, i).ok_or(CoaError::UndefinedExposure(i))?;
        let own = if d[i] == 1 { p1 / p0 } else { (1.0 - p1) / (1.0 - p0) };
        let w = match em.kind {
            ExposureKind::Own => own,
            _ => own * rao_blackwell_weight(&policy, design, &spec, i, t)?,
        };
        estimate += w * y[i];
        let deg = net.degree(i) as f64;
        let mean_t = match em.kind {
            ExposureKind::Own => p1,
            ExposureKind::Count => deg * p1,
            ExposureKind::Fraction => p1,
            ExposureKind::Any => 1.0 - (1.0 - p1).powf(deg),
        };
        target += match em.kind {
            ExposureKind::Own => r.base + (r.direct + r.spillover + r.interaction) * p1,
            _ => r.base + r.direct * p1 + (r.spillover + r.interaction * p1) * mean_t,
        } + em.shocks[i];
    }
    Ok((estimate / n as f64, target / n as f64))
}

/// RMSE of the tracked estimator across network sizes.
pub fn consistency_sweep(cfg: &RunConfig, sizes: &[usize]) -> Result<Vec<SweepRow>> {
    sizes
        .iter()
        .map(|&n| {
            let scenario = Scenario::build(cfg, Some(n), None)?;
            let request = scenario.request(cfg);
            let seed = derive_seed(cfg.seed, n as u64);
            let errors = (0..cfg.replications)
                .into_par_iter()
                .map(|r| {
                    let d = scenario.design.sample(&mut replication_rng(seed, r));
                    match cfg.estimator {
                        EstimatorSpec::Coa => {
                            let dec = estimation_error_terms(&scenario.model, &scenario.design, &request, &d)?;
                            Ok(dec[0].estimate.value - dec[0].oracle.value)
                        }
                        EstimatorSpec::PolicyShift { p } => {
                            let (est, target) = policy_shift_estimate(&scenario.model, &scenario.design, p, &d)?;
                            Ok(est - target)
                        }
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            let error = ErrorSummary::from_errors(&errors).unwrap_or(ErrorSummary {
                mean: 0.0,
                se: 0.0,
                rmse: 0.0,
            });
            Ok(SweepRow {
                n,
                replications: errors.len(),
                error,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub replications: usize,
    /// `None` below the replication guard or without intervals.
    pub coverage: Option<f64>,
    pub nominal: Option<f64>,
    /// Root mean square of `τ̂ − τ*`, the studentizing scale.
    pub error_scale: Option<f64>,
    pub ks_statistic: Option<f64>,
    pub ks_p_value: Option<f64>,
    /// Rows without a contrast, or all rows when the error scale is zero.
    pub excluded: usize,
}

/// Coverage of `τ*` by the intervals, and a KS test of `(τ̂ − τ*)/scale` against N(0,1).
pub fn coverage_normality_report(table: &ReplicationTable, alpha: Option<f64>) -> CoverageReport {
    let covered: Vec<bool> = table.rows.iter().filter_map(|r| r.covered).collect();
    let coverage = (covered.len() >= MIN_COVERAGE_REPLICATIONS)
        .then(|| covered.iter().filter(|&&c| c).count() as f64 / covered.len() as f64);
    let errors: Vec<f64> = table
        .rows
        .iter()
        .filter_map(|r| Some(r.tau_hat? - r.tau_star?))
        .collect();
    let mut excluded = table.rows.len() - errors.len();
    let scale = (!errors.is_empty()).then(|| (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt());
    let (ks_statistic, ks_p_value) = match scale {
        Some(s) if s > 0.0 => {
            let z: Vec<f64> = errors.iter().map(|e| e / s).collect();
            let (d, p) = ks_normal(&z);
            (Some(d), Some(p))
        }
        _ => {
            excluded += errors.len();
            (None, None)
        }
    };
    CoverageReport {
        replications: table.rows.len(),
        coverage,
        nominal: alpha.map(|a| 1.0 - a),
        error_scale: scale,
        ks_statistic,
        ks_p_value,
        excluded,
    }
}

/// One-sample Kolmogorov–Smirnov distance to N(0,1) and its asymptotic p-value.
pub fn ks_normal(sample: &[f64]) -> (f64, f64) {
    let mut z = sample.to_vec();
    z.sort_by(f64::total_cmp);
    let n = z.len() as f64;
    let normal = Normal::standard();
    let d = z
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let f = normal.cdf(x);
            (f - k as f64 / n).max((k as f64 + 1.0) / n - f)
        })
        .fold(0.0, f64::max);
    (d, kolmogorov_survival((n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d))
}

/// `P(K > λ)` for the Kolmogorov distribution.
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let sum: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            let sign = if k as u64 % 2 == 1 { 1.0 } else { -1.0 };
            sign * (-2.0 * k * k * lambda * lambda).exp()
        })
        .sum();
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfluenceRow {
    pub n: usize,
    /// `C_n = max_j (1/n) Σ_{i≠j} E|φ_ij|`; `None` above the enumeration cap.
    pub influence_max: Option<f64>,
    pub influence_mean: Option<f64>,
    /// `A_n`.
    pub max_dependency: usize,
    /// `B_Tn`.
    pub positivity_bound: f64,
}

/// Influence, dependency and weight-variance bounds at each size.
pub fn influence_diagnostics(cfg: &RunConfig, sizes: &[usize]) -> Result<Vec<InfluenceRow>> {
    sizes
        .iter()
        .map(|&n| {
            let scenario = Scenario::build(cfg, Some(n), None)?;
            influence_row(&scenario, cfg)
        })
        .collect()
}

pub fn influence_row(scenario: &Scenario, cfg: &RunConfig) -> Result<InfluenceRow> {
    let spec = ExposureSpec::new(cfg.exposure, &scenario.net);
    let diag = design_diagnostics(
        &scenario.design,
        &spec,
        &cfg.counterfactual,
        &cfg.levels,
        &vec![0; scenario.n()],
        (scenario.n() <= INFLUENCE_CAP).then_some(&scenario.model),
        None,
    )?;
    Ok(InfluenceRow {
        n: scenario.n(),
        influence_max: diag.influence_max,
        influence_mean: diag.influence_mean,
        max_dependency: diag.max_dependency,
        positivity_bound: diag.positivity_bound,
    })
}
