use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assigndesign::{CounterfactualMode, Design, ExposureSpec, LocalCounterfactual};
use crate::error::{CoaError, Result};
use crate::outcomes::OutcomeModel;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Positivity {
    /// Any positivity or empty-cell failure is an error.
    Strict,
    /// Failing units are skipped and reported.
    #[default]
    Lenient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    Masked,
    Positivity,
    EmptyCell,
    UndefinedExposure,
    EnumerationCap,
}

impl SkipReason {
    fn from_error(e: &CoaError) -> Option<Self> {
        match e {
            CoaError::Positivity { .. } => Some(SkipReason::Positivity),
            CoaError::EmptyCell { .. } => Some(SkipReason::EmptyCell),
            CoaError::UndefinedExposure(_) => Some(SkipReason::UndefinedExposure),
            CoaError::EnumerationCap { .. } => Some(SkipReason::EnumerationCap),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EstimandRequest<'a> {
    pub spec: ExposureSpec<'a>,
    pub mode: CounterfactualMode,
    pub levels: Vec<f64>,
    /// Units to include; `None` includes everyone.
    pub mask: Option<Vec<bool>>,
    pub positivity: Positivity,
}

impl<'a> EstimandRequest<'a> {
    pub fn new(spec: ExposureSpec<'a>, mode: CounterfactualMode, levels: Vec<f64>) -> Self {
        EstimandRequest {
            spec,
            mode,
            levels,
            mask: None,
            positivity: Positivity::Lenient,
        }
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Self {
        self.mask = Some(mask);
        self
    }

    pub fn strict(mut self) -> Self {
        self.positivity = Positivity::Strict;
        self
    }

    fn masked_out(&self, i: usize) -> bool {
        self.mask.as_ref().is_some_and(|m| !m[i])
    }
}

/// Per-unit local counterfactuals for every requested level, with a common
/// skip mask: a unit failing at any level is dropped from all of them.
struct UnitTable {
    /// `locals[i][k]` for level `k`; empty when unit `i` is skipped.
    locals: Vec<Vec<LocalCounterfactual>>,
    skipped: Vec<Option<SkipReason>>,
}

impl UnitTable {
    fn build(design: &Design, request: &EstimandRequest<'_>, d: &[u8]) -> Result<Self> {
        let n = design.n();
        if d.len() != n {
            return Err(CoaError::InvalidInput(format!(
                "assignment has {} entries for {n} units",
                d.len()
            )));
        }
        if request.mask.as_ref().is_some_and(|m| m.len() != n) {
            return Err(CoaError::InvalidInput("unit mask length does not match n".into()));
        }
        if request.levels.is_empty() {
            return Err(CoaError::InvalidInput("no exposure levels requested".into()));
        }
        let rows: Vec<std::result::Result<Vec<LocalCounterfactual>, SkipReason>> = (0..n)
            .into_par_iter()
            .map(|i| {
                if request.masked_out(i) {
                    return Ok(Err(SkipReason::Masked));
                }
                let mut row = Vec::with_capacity(request.levels.len());
                for &t in &request.levels {
                    match LocalCounterfactual::new(design, &request.spec, &request.mode, d, i, t) {
                        Ok(lc) => row.push(lc),
                        Err(e) => match SkipReason::from_error(&e) {
                            Some(SkipReason::UndefinedExposure) => {
                                return Ok(Err(SkipReason::UndefinedExposure))
                            }
                            Some(reason) if request.positivity == Positivity::Lenient => {
                                return Ok(Err(reason))
                            }
                            _ => return Err(e),
                        },
                    }
                }
                Ok(Ok(row))
            })
            .collect::<Result<_>>()?;
        let mut locals = Vec::with_capacity(n);
        let mut skipped = Vec::with_capacity(n);
        for row in rows {
            match row {
                Ok(r) => {
                    locals.push(r);
                    skipped.push(None);
                }
                Err(reason) => {
                    locals.push(Vec::new());
                    skipped.push(Some(reason));
                }
            }
        }
        if skipped.iter().all(Option::is_some) {
            return Err(CoaError::NoEligibleUnits);
        }
        Ok(UnitTable { locals, skipped })
    }

    fn included(&self) -> usize {
        self.skipped.iter().filter(|s| s.is_none()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimate {
    pub level: f64,
    /// `V̂(t)`: mean contribution over included units.
    pub value: f64,
    /// `Y_i r_it`; zero for skipped units.
    pub contributions: Vec<f64>,
    /// `r_it`; zero for skipped units.
    pub weights: Vec<f64>,
    pub skipped: Vec<Option<SkipReason>>,
}

impl Estimate {
    pub fn included(&self) -> usize {
        self.skipped.iter().filter(|s| s.is_none()).count()
    }

    pub fn mask(&self) -> Vec<bool> {
        self.skipped.iter().map(Option::is_none).collect()
    }
}

/// `V*(t | Y(·), D)` restricted to the included units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleEstimand {
    pub level: f64,
    pub value: f64,
    /// `Σ_d π_T(d | D_{−𝒩_T(i)}) Y_i(d, D_{−𝒩_T(i)})`; zero for skipped units.
    pub unit_values: Vec<f64>,
    pub skipped: Vec<Option<SkipReason>>,
}

fn mean_over(values: &[f64], skipped: &[Option<SkipReason>], included: usize) -> f64 {
    values
        .iter()
        .zip(skipped)
        .filter(|(_, s)| s.is_none())
        .map(|(v, _)| v)
        .sum::<f64>()
        / included as f64
}

/// IPW estimates `V̂(t) = mean_i Y_i r_it`, one per requested level.
pub fn coa_ipw_estimate(
    y: &[f64],
    d: &[u8],
    design: &Design,
    request: &EstimandRequest<'_>,
) -> Result<Vec<Estimate>> {
    if y.len() != design.n() {
        return Err(CoaError::InvalidInput(format!(
            "outcomes have {} entries for {} units",
            y.len(),
            design.n()
        )));
    }
    let table = UnitTable::build(design, request, d)?;
    let included = table.included();
    Ok(request
        .levels
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let weights: Vec<f64> = table
                .locals
                .iter()
                .map(|row| row.get(k).map_or(0.0, |lc| lc.realized_weight(d)))
                .collect();
            let contributions: Vec<f64> = weights.iter().zip(y).map(|(w, yi)| w * yi).collect();
            Estimate {
                level: t,
                value: mean_over(&contributions, &table.skipped, included),
                contributions,
                weights,
                skipped: table.skipped.clone(),
            }
        })
        .collect())
}

fn oracle_with_table(
    model: &OutcomeModel,
    d: &[u8],
    request: &EstimandRequest<'_>,
    table: &UnitTable,
) -> Result<(Vec<f64>, Vec<OracleEstimand>)> {
    let y = model.evaluate_binary(d)?;
    let included = table.included();
    let per_unit: Vec<Vec<f64>> = table
        .locals
        .par_iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .map(|lc| {
                    lc.cell
                        .patterns
                        .iter()
                        .zip(&lc.target)
                        .filter(|(_, p)| **p > 0.0)
                        .map(|(&m, p)| Ok(p * model.unit_counterfactual(i, d, &y, &lc.cell.domain, m)?))
                        .sum::<Result<f64>>()
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let oracles = request
        .levels
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let unit_values: Vec<f64> = per_unit.iter().map(|row| row.get(k).copied().unwrap_or(0.0)).collect();
            OracleEstimand {
                level: t,
                value: mean_over(&unit_values, &table.skipped, included),
                unit_values,
                skipped: table.skipped.clone(),
            }
        })
        .collect();
    Ok((y, oracles))
}

/// Exact `V*(t | Y(·), D)` by local enumeration, holding `D` fixed outside
/// each unit's exposure domain. Needs the outcome model.
pub fn oracle_estimand(
    model: &OutcomeModel,
    design: &Design,
    request: &EstimandRequest<'_>,
    d: &[u8],
) -> Result<Vec<OracleEstimand>> {
    let table = UnitTable::build(design, request, d)?;
    oracle_with_table(model, d, request, &table).map(|(_, o)| o)
}

/// Realized estimator, oracle and per-unit error terms sharing one unit mask.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorDecomposition {
    pub estimate: Estimate,
    pub oracle: OracleEstimand,
    /// `u_i(t) = r_it Y_i(D) − Σ_d π_T(d|·) Y_i(d, ·)`; zero for skipped units.
    pub errors: Vec<f64>,
}

pub fn estimation_error_terms(
    model: &OutcomeModel,
    design: &Design,
    request: &EstimandRequest<'_>,
    d: &[u8],
) -> Result<Vec<ErrorDecomposition>> {
    let table = UnitTable::build(design, request, d)?;
    let (y, oracles) = oracle_with_table(model, d, request, &table)?;
    let included = table.included();
    Ok(oracles
        .into_iter()
        .enumerate()
        .map(|(k, oracle)| {
            let weights: Vec<f64> = table
                .locals
                .iter()
                .map(|row| row.get(k).map_or(0.0, |lc| lc.realized_weight(d)))
                .collect();
            let contributions: Vec<f64> = weights.iter().zip(&y).map(|(w, yi)| w * yi).collect();
            let errors = contributions
                .iter()
                .zip(&oracle.unit_values)
                .map(|(c, v)| c - v)
                .collect();
            let estimate = Estimate {
                level: oracle.level,
                value: mean_over(&contributions, &table.skipped, included),
                contributions,
                weights,
                skipped: table.skipped.clone(),
            };
            ErrorDecomposition {
                estimate,
                oracle,
                errors,
            }
        })
        .collect())
}

/// `τ̂(t₁, t₀) = V̂(t₁) − V̂(t₀)`.
pub fn coa_contrast(e1: &Estimate, e0: &Estimate) -> Result<f64> {
    if e1.mask() != e0.mask() {
        return Err(CoaError::InvalidInput(
            "estimates were computed over different unit masks".into(),
        ));
    }
    Ok(e1.value - e0.value)
}

/// Horvitz–Thompson direct effect under Bernoulli(`p`).
pub fn direct_effect_ht(y: &[f64], d: &[u8], p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(CoaError::config("design.p", format!("{p} must lie strictly in (0,1)")));
    }
    if y.len() != d.len() || y.is_empty() {
        return Err(CoaError::InvalidInput("outcome and assignment lengths differ".into()));
    }
    let total: f64 = y
        .iter()
        .zip(d)
        .map(|(yi, &di)| if di == 1 { yi / p } else { -yi / (1.0 - p) })
        .sum();
    Ok(total / y.len() as f64)
}

/// `mean(Y) · π₁(D)/π₀(D)`.
pub fn naive_policy_value(y: &[f64], d: &[u8], policy: &Design, design: &Design) -> Result<f64> {
    let p0 = design.pmf(d);
    if p0 <= 0.0 {
        return Err(CoaError::Positivity {
            unit: usize::MAX,
            level: f64::NAN,
        });
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    Ok(mean * policy.pmf(d) / p0)
}
