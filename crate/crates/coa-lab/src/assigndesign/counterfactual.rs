use serde::{Deserialize, Serialize};

use super::design::{local_pattern, Design};
use super::exposure::{ExposureCell, ExposureKind, ExposureSpec};
use crate::error::{CoaError, Result};

/// How the counterfactual re-randomizes a unit's exposure domain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum CounterfactualMode {
    /// `π_{T,0}`: the experimental conditional restricted to the cell.
    #[default]
    Experimental,
    /// All mass on the cell member treating the lowest-indexed domain units.
    PointMass,
    /// Mass proportional to `count_weights[#treated]` within the cell.
    Custom { count_weights: Vec<f64> },
}

impl CounterfactualMode {
    /// Whether `π_T` can vary with the assignment outside the domain.
    pub fn depends_on_rest(&self, design: &Design) -> bool {
        matches!(self, CounterfactualMode::Experimental) && !design.is_independent()
    }
}

/// `π_T(·|D_{−𝒩_T(i)})` and `π₀(·|D_{−𝒩_T(i)})` over one exposure cell.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalCounterfactual {
    pub cell: ExposureCell,
    pub target: Vec<f64>,
    pub experimental: Vec<f64>,
    /// `P_{π₀}(T_i = t | D_{−𝒩_T(i)})`.
    pub cell_probability: f64,
}

impl LocalCounterfactual {
    pub fn new(
        design: &Design,
        spec: &ExposureSpec<'_>,
        mode: &CounterfactualMode,
        d: &[u8],
        i: usize,
        t: f64,
    ) -> Result<Self> {
        let cell = spec.cell(i, t)?;
        let experimental: Vec<f64> = cell
            .patterns
            .iter()
            .map(|&m| design.conditional_pmf(&cell.domain, m, d))
            .collect();
        let cell_probability: f64 = experimental.iter().sum();
        let positivity = || CoaError::Positivity { unit: i, level: t };
        let target = match mode {
            CounterfactualMode::Experimental => {
                if cell_probability <= 0.0 {
                    return Err(positivity());
                }
                experimental.iter().map(|p| p / cell_probability).collect()
            }
            CounterfactualMode::PointMass => {
                let k = (0..cell.patterns.len())
                    .min_by_key(|&k| (cell.patterns[k].count_ones(), cell.patterns[k]))
                    .expect("cells are nonempty");
                let mut v = vec![0.0; cell.patterns.len()];
                v[k] = 1.0;
                v
            }
            CounterfactualMode::Custom { count_weights } => {
                let raw: Vec<f64> = cell
                    .patterns
                    .iter()
                    .map(|m| count_weights.get(m.count_ones() as usize).copied().unwrap_or(0.0))
                    .collect();
                if raw.iter().any(|w| *w < 0.0 || !w.is_finite()) {
                    return Err(CoaError::config(
                        "counterfactual.count_weights",
                        "weights must be finite and nonnegative",
                    ));
                }
                let total: f64 = raw.iter().sum();
                if total <= 0.0 {
                    return Err(CoaError::EmptyCell { unit: i, level: t });
                }
                raw.into_iter().map(|w| w / total).collect()
            }
        };
        if target
            .iter()
            .zip(&experimental)
            .any(|(pt, p0)| *pt > 0.0 && *p0 <= 0.0)
        {
            return Err(positivity());
        }
        Ok(LocalCounterfactual {
            cell,
            target,
            experimental,
            cell_probability,
        })
    }

    pub fn unit(&self) -> usize {
        self.cell.unit
    }

    /// `π_T(d)/π₀(d)` for a local pattern, zero outside the cell.
    pub fn weight(&self, local: u64) -> f64 {
        match self.cell.patterns.binary_search(&local) {
            Ok(k) if self.target[k] > 0.0 => self.target[k] / self.experimental[k],
            _ => 0.0,
        }
    }

    /// `r_it` at the realized assignment.
    pub fn realized_weight(&self, d: &[u8]) -> f64 {
        self.weight(local_pattern(&self.cell.domain, d))
    }

    /// Cell member index of the realized local assignment, if any.
    pub fn realized_index(&self, d: &[u8]) -> Option<usize> {
        self.cell
            .patterns
            .binary_search(&local_pattern(&self.cell.domain, d))
            .ok()
    }
}

/// `r_it = π_T(D_𝒩 | D_{−𝒩}) / π₀(D_𝒩 | D_{−𝒩})`.
pub fn likelihood_ratio_weight(
    design: &Design,
    spec: &ExposureSpec<'_>,
    mode: &CounterfactualMode,
    d: &[u8],
    i: usize,
    t: f64,
) -> Result<f64> {
    LocalCounterfactual::new(design, spec, mode, d, i, t).map(|lc| lc.realized_weight(d))
}

/// `E_{π₀}[π₁(D)/π₀(D) | T_i(D) = t] = P_{π₁}(T_i = t) / P_{π₀}(T_i = t)`.
pub fn rao_blackwell_weight(
    policy: &Design,
    design: &Design,
    spec: &ExposureSpec<'_>,
    i: usize,
    t: f64,
) -> Result<f64> {
    if let (Design::Bernoulli(b1), Design::Bernoulli(b0)) = (policy, design) {
        return bernoulli_cell_ratio(spec, b1.p(), b0.p(), i, t);
    }
    let cell = spec.cell(i, t)?;
    let mass = |pi: &Design| -> f64 {
        cell.patterns
            .iter()
            .map(|&m| pi.marginal_pmf(&cell.domain, m))
            .sum()
    };
    let p0 = mass(design);
    if p0 <= 0.0 {
        return Err(CoaError::Positivity { unit: i, level: t });
    }
    Ok(mass(policy) / p0)
}

/// Independent designs: binomial coefficients cancel, so no enumeration.
/// Products of per-unit ratios are formed in log space; `p^m` alone
/// underflows for domains of a few thousand units.
fn bernoulli_cell_ratio(spec: &ExposureSpec<'_>, p1: f64, p0: f64, i: usize, t: f64) -> Result<f64> {
    let m = spec.domain(i).len();
    let k = spec.target(i, t)? as usize;
    let positivity = || CoaError::Positivity { unit: i, level: t };
    // ln((a/b)^count), with 0/0 never reached because count = 0 short-circuits
    let log_ratio = |a: f64, b: f64, count: usize| -> Option<f64> {
        match count {
            0 => Some(0.0),
            _ if b <= 0.0 => None,
            _ => Some(count as f64 * (a / b).ln()),
        }
    };
    match spec.kind {
        ExposureKind::Any if k == 1 => {
            let any = |p: f64| -(m as f64 * (-p).ln_1p()).exp_m1();
            let den = any(p0);
            if den <= 0.0 {
                return Err(positivity());
            }
            Ok(any(p1) / den)
        }
        ExposureKind::Any => log_ratio(1.0 - p1, 1.0 - p0, m).map(f64::exp).ok_or_else(positivity),
        _ => {
            let treated = log_ratio(p1, p0, k).ok_or_else(positivity)?;
            let control = log_ratio(1.0 - p1, 1.0 - p0, m - k).ok_or_else(positivity)?;
            Ok((treated + control).exp())
        }
    }
}
