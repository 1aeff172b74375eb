use serde::Serialize;

use super::counterfactual::{CounterfactualMode, LocalCounterfactual};
use super::design::{all_assignments, local_pattern, set_pattern, Design};
use super::exposure::{ExposureSpec, LOCAL_ENUMERATION_CAP};
use crate::error::{CoaError, Result};
use crate::outcomes::OutcomeModel;

/// Largest `n` for which influence is computed by full enumeration.
pub const INFLUENCE_CAP: usize = 14;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnitDiagnostics {
    pub unit: usize,
    pub level: f64,
    /// `var(r_it | D_{−𝒩_T(i)})`; `None` when the unit is skipped.
    pub weight_variance: Option<f64>,
    pub dependency_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignDiagnostics {
    pub units: Vec<UnitDiagnostics>,
    /// `B_Tn`: largest weight variance.
    pub positivity_bound: f64,
    /// `A_n`: largest dependency neighborhood.
    pub max_dependency: usize,
    pub skipped: usize,
    /// Per-unit variance of distribution-shift weights toward `policy`.
    pub shift_weight_variance: Option<Vec<f64>>,
    /// `max_j (1/n) Σ_{i≠j} E|φ_ij|`.
    pub influence_max: Option<f64>,
    /// `(1/n²) Σ_j Σ_{i≠j} E|φ_ij|`.
    pub influence_mean: Option<f64>,
}

/// Exact weight variances, dependency sizes and (optionally) the influence
/// sequence, conditioning on `reference` outside each exposure domain.
pub fn design_diagnostics(
    design: &Design,
    spec: &ExposureSpec<'_>,
    mode: &CounterfactualMode,
    levels: &[f64],
    reference: &[u8],
    model: Option<&OutcomeModel>,
    policy: Option<&Design>,
) -> Result<DesignDiagnostics> {
    let n = design.n();
    let mut units = Vec::new();
    for &t in levels {
        for i in 0..n {
            let dependency_size = spec.dependency_neighborhood(design, i).len();
            let weight_variance = match LocalCounterfactual::new(design, spec, mode, reference, i, t) {
                Ok(lc) => {
                    let (m1, m2) = lc
                        .cell
                        .patterns
                        .iter()
                        .zip(&lc.experimental)
                        .fold((0.0, 0.0), |(a, b), (&m, &p)| {
                            let w = lc.weight(m);
                            (a + p * w, b + p * w * w)
                        });
                    Some((m2 - m1 * m1).max(0.0))
                }
                Err(e) if e.is_design_failure() => None,
                Err(e) => return Err(e),
            };
            units.push(UnitDiagnostics {
                unit: i,
                level: t,
                weight_variance,
                dependency_size,
            });
        }
    }
    let positivity_bound = units
        .iter()
        .filter_map(|u| u.weight_variance)
        .fold(0.0, f64::max);
    let max_dependency = units.iter().map(|u| u.dependency_size).max().unwrap_or(0);
    let skipped = units.iter().filter(|u| u.weight_variance.is_none()).count();

    let shift_weight_variance = policy
        .map(|p| (0..n).map(|i| shift_variance(p, design, spec, i)).collect::<Result<Vec<_>>>())
        .transpose()?;

    let (influence_max, influence_mean) = match model {
        Some(m) => {
            let (mx, mean) = influence(m, design, spec)?;
            (Some(mx), Some(mean))
        }
        None => (None, None),
    };

    Ok(DesignDiagnostics {
        units,
        positivity_bound,
        max_dependency,
        skipped,
        shift_weight_variance,
        influence_max,
        influence_mean,
    })
}

/// Variance under `π₀` of `P_{π₁}(T_i)/P_{π₀}(T_i)` evaluated at the realized exposure.
fn shift_variance(policy: &Design, design: &Design, spec: &ExposureSpec<'_>, i: usize) -> Result<f64> {
    let domain = spec.domain(i);
    if domain.len() > LOCAL_ENUMERATION_CAP {
        return Err(CoaError::EnumerationCap {
            what: "exposure domain",
            size: domain.len(),
            cap: LOCAL_ENUMERATION_CAP,
        });
    }
    if !spec.is_defined(i) {
        return Ok(0.0);
    }
    let mut scratch = vec![0u8; design.n()];
    let mut by_level: Vec<(f64, f64, f64)> = Vec::new();
    for m in 0..1u64 << domain.len() {
        set_pattern(&mut scratch, &domain, m);
        let t = spec.value(&scratch, i).expect("defined exposure");
        let (p0, p1) = (design.marginal_pmf(&domain, m), policy.marginal_pmf(&domain, m));
        match by_level.iter_mut().find(|(lv, _, _)| *lv == t) {
            Some(entry) => {
                entry.1 += p0;
                entry.2 += p1;
            }
            None => by_level.push((t, p0, p1)),
        }
    }
    let (m1, m2) = by_level
        .iter()
        .filter(|(_, p0, _)| *p0 > 0.0)
        .fold((0.0, 0.0), |(a, b), (_, p0, p1)| {
            let w = p1 / p0;
            (a + p0 * w, b + p0 * w * w)
        });
    Ok((m2 - m1 * m1).max(0.0))
}

/// Swap-enumeration influence: for each `D`, each `i` and each `j ≠ i`, the
/// range of `Y_j` over assignments to `𝒜_T(i)` that keep `D` fixed on `𝒩_T(j)`.
fn influence(model: &OutcomeModel, design: &Design, spec: &ExposureSpec<'_>) -> Result<(f64, f64)> {
    let n = model.n();
    if n > INFLUENCE_CAP {
        return Err(CoaError::EnumerationCap {
            what: "units for influence enumeration",
            size: n,
            cap: INFLUENCE_CAP,
        });
    }
    let blocks: Vec<Vec<usize>> = (0..n).map(|i| spec.dependency_neighborhood(design, i)).collect();
    let domains: Vec<Vec<usize>> = (0..n).map(|j| spec.domain(j)).collect();
    let mut totals = vec![0.0; n];
    for d in all_assignments(n) {
        let p = design.pmf(&d);
        if p == 0.0 {
            continue;
        }
        for (i, block) in blocks.iter().enumerate() {
            let outcomes: Vec<(u64, Vec<f64>)> = (0..1u64 << block.len())
                .map(|z| {
                    let mut e = d.clone();
                    set_pattern(&mut e, block, z);
                    model.evaluate_binary(&e).map(|y| (z, y))
                })
                .collect::<Result<_>>()?;
            for j in (0..n).filter(|&j| j != i) {
                let fixed: Vec<usize> = (0..block.len())
                    .filter(|&k| domains[j].contains(&block[k]))
                    .collect();
                let realized = local_pattern(block, &d);
                let (lo, hi) = outcomes
                    .iter()
                    .filter(|(z, _)| fixed.iter().all(|&k| (z >> k) & 1 == (realized >> k) & 1))
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, y)| {
                        (lo.min(y[j]), hi.max(y[j]))
                    });
                totals[j] += p * (hi - lo);
            }
        }
    }
    let scale = 1.0 / n as f64;
    let max = totals.iter().fold(0.0f64, |m, v| m.max(*v)) * scale;
    let mean = totals.iter().sum::<f64>() * scale * scale;
    Ok((max, mean))
}
