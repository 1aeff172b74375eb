use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::assigndesign::{
    local_pattern, set_pattern, CounterfactualMode, Design, ExposureSpec, LocalCounterfactual,
    LOCAL_ENUMERATION_CAP,
};
use crate::coa::{coa_ipw_estimate, EstimandRequest};
use crate::error::{CoaError, Result};

const CDF_TOL: f64 = 1e-12;

/// Right-continuous step cdf on sorted support points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CondCDF {
    pub level: f64,
    pub support: Vec<f64>,
    /// Cumulative mass at each support point; the last entry is 1.
    pub cumulative: Vec<f64>,
    /// Weight total before renormalization.
    pub raw_total: f64,
}

impl CondCDF {
    /// Weighted empirical cdf of `values`; weights must be nonnegative.
    pub fn from_weighted(level: f64, values: &[f64], weights: &[f64]) -> Result<Self> {
        let mut pairs: Vec<(f64, f64)> = values
            .iter()
            .zip(weights)
            .filter(|(_, w)| **w > 0.0)
            .map(|(&v, &w)| (v, w))
            .collect();
        let raw_total: f64 = pairs.iter().map(|(_, w)| w).sum();
        if pairs.is_empty() || !raw_total.is_finite() {
            return Err(CoaError::Undefined(format!("no unit observed at exposure {level}")));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut support: Vec<f64> = Vec::new();
        let mut cumulative: Vec<f64> = Vec::new();
        let mut running = 0.0f64;
        for (v, w) in pairs {
            running += w / raw_total;
            let c = running.clamp(0.0, 1.0);
            match support.last() {
                Some(&last) if last == v => *cumulative.last_mut().expect("paired") = c,
                _ => {
                    support.push(v);
                    cumulative.push(c);
                }
            }
        }
        // running maximum then pin the terminal value
        for k in 1..cumulative.len() {
            cumulative[k] = cumulative[k].max(cumulative[k - 1]);
        }
        *cumulative.last_mut().expect("nonempty") = 1.0;
        Ok(CondCDF {
            level,
            support,
            cumulative,
            raw_total,
        })
    }

    pub fn cdf(&self, y: f64) -> f64 {
        match self.support.partition_point(|&s| s <= y) {
            0 => 0.0,
            k => self.cumulative[k - 1],
        }
    }

    fn left_limit(&self, y: f64) -> f64 {
        match self.support.partition_point(|&s| s < y) {
            0 => 0.0,
            k => self.cumulative[k - 1],
        }
    }

    /// `inf{x : F(x) ≥ u}`.
    pub fn quantile(&self, u: f64) -> f64 {
        let k = self.cumulative.partition_point(|&c| c < u - CDF_TOL);
        self.support[k.min(self.support.len() - 1)]
    }

    /// `∫_a^b F⁻¹(u) du`.
    fn quantile_integral(&self, a: f64, b: f64) -> f64 {
        let mut total = 0.0;
        let mut lo = 0.0f64;
        for (s, &c) in self.support.iter().zip(&self.cumulative) {
            let (x, y) = (lo.max(a), c.min(b));
            if y > x {
                total += s * (y - x);
            }
            lo = c;
        }
        total
    }

    /// Mean of `target⁻¹(U)` for `U` uniform on `(F(y−), F(y)]`; the
    /// comonotone partner of the atom at `y`.
    pub fn coupled_mean(&self, target: &CondCDF, y: f64) -> f64 {
        let (a, b) = (self.left_limit(y), self.cdf(y));
        if b - a <= CDF_TOL {
            return target.quantile(b);
        }
        target.quantile_integral(a, b) / (b - a)
    }
}

/// `F₂⁻¹(F₁(y))`.
pub fn isotone_match(f1: &CondCDF, f2: &CondCDF, y: f64) -> f64 {
    f2.quantile(f1.cdf(y))
}

/// Unit inclusion shared by every variance term: the estimate's mask.
fn included_units(y: &[f64], d: &[u8], design: &Design, request: &EstimandRequest<'_>) -> Result<Vec<bool>> {
    Ok(coa_ipw_estimate(y, d, design, request)?[0].mask())
}

/// HT estimate of `F_n(·; t)` over the included units.
pub fn conditional_cdf_hat(
    y: &[f64],
    d: &[u8],
    design: &Design,
    spec: &ExposureSpec<'_>,
    mask: &[bool],
    t: f64,
) -> Result<CondCDF> {
    let weights: Vec<f64> = (0..y.len())
        .map(|i| {
            if !mask[i] || !spec.at_level(d, i, t)? {
                return Ok(0.0);
            }
            Ok(1.0 / spec.probability(design, d, i, t)?)
        })
        .collect::<Result<_>>()?;
    let n = mask.iter().filter(|m| **m).count() as f64;
    let mut cdf = CondCDF::from_weighted(t, y, &weights)?;
    cdf.raw_total /= n;
    Ok(cdf)
}

/// Joint weight moments of units `i` and `j` at levels `(a, b)`, exact
/// under `π₀` conditional on `D` outside `𝒩_T(i) ∪ 𝒩_T(j)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairMoment {
    /// `P(T_i = a, T_j = b | ·)`.
    pub joint: f64,
    /// `cov(r_ia, r_jb | ·)`.
    pub cov: f64,
}

struct PairEnumerator<'a> {
    design: &'a Design,
    spec: &'a ExposureSpec<'a>,
    mode: &'a CounterfactualMode,
    d: &'a [u8],
    levels: [f64; 2],
    /// Rest-free local counterfactuals, `Some` only for independent designs.
    fixed: Option<Vec<[Option<LocalCounterfactual>; 2]>>,
}

impl<'a> PairEnumerator<'a> {
    fn new(
        design: &'a Design,
        spec: &'a ExposureSpec<'a>,
        mode: &'a CounterfactualMode,
        d: &'a [u8],
        levels: [f64; 2],
        mask: &[bool],
    ) -> Result<Self> {
        let fixed = if design.is_independent() {
            let table = (0..d.len())
                .into_par_iter()
                .map(|i| {
                    let mut row = [None, None];
                    if mask[i] {
                        for (slot, &t) in row.iter_mut().zip(&levels) {
                            *slot = Some(LocalCounterfactual::new(design, spec, mode, d, i, t)?);
                        }
                    }
                    Ok(row)
                })
                .collect::<Result<Vec<_>>>()?;
            Some(table)
        } else {
            None
        };
        Ok(PairEnumerator {
            design,
            spec,
            mode,
            d,
            levels,
            fixed,
        })
    }

    /// `(1{T_i = t}, r_it)` at assignment `e`.
    fn weight(&self, e: &[u8], i: usize, k: usize) -> Result<(bool, f64)> {
        let compute = |lc: &LocalCounterfactual| {
            let m = local_pattern(&lc.cell.domain, e);
            (lc.cell.contains(m), lc.weight(m))
        };
        match &self.fixed {
            Some(table) => Ok(compute(table[i][k].as_ref().expect("included unit"))),
            None => {
                let lc = LocalCounterfactual::new(self.design, self.spec, self.mode, e, i, self.levels[k])?;
                Ok(compute(&lc))
            }
        }
    }

    /// Moments for every level combination: `out[a][b]` pairs `i` at level
    /// `a` with `j` at level `b`.
    fn moments(&self, i: usize, j: usize) -> Result<[[PairMoment; 2]; 2]> {
        let mut union = self.spec.domain(i);
        union.extend(self.spec.domain(j));
        union.sort_unstable();
        union.dedup();
        if union.len() > LOCAL_ENUMERATION_CAP {
            return Err(CoaError::EnumerationCap {
                what: "pair exposure domain",
                size: union.len(),
                cap: LOCAL_ENUMERATION_CAP,
            });
        }
        let mut e = self.d.to_vec();
        let mut ri = [0.0; 2];
        let mut rj = [0.0; 2];
        let mut rr = [[0.0; 2]; 2];
        let mut joint = [[0.0; 2]; 2];
        for z in 0..1u64 << union.len() {
            let p = self.design.conditional_pmf(&union, z, self.d);
            if p <= 0.0 {
                continue;
            }
            set_pattern(&mut e, &union, z);
            let wi = [self.weight(&e, i, 0)?, self.weight(&e, i, 1)?];
            let wj = [self.weight(&e, j, 0)?, self.weight(&e, j, 1)?];
            for a in 0..2 {
                ri[a] += p * wi[a].1;
                rj[a] += p * wj[a].1;
                for b in 0..2 {
                    rr[a][b] += p * wi[a].1 * wj[b].1;
                    if wi[a].0 && wj[b].0 {
                        joint[a][b] += p;
                    }
                }
            }
        }
        let cell = |a: usize, b: usize| PairMoment {
            joint: joint[a][b],
            cov: rr[a][b] - ri[a] * rj[b],
        };
        Ok([[cell(0, 0), cell(0, 1)], [cell(1, 0), cell(1, 1)]])
    }
}

/// Units `j` whose weights can co-vary with unit `i`'s:
/// `𝒩_T(j) ∩ 𝒜_T(i) ≠ ∅`.
fn pair_sets(design: &Design, spec: &ExposureSpec<'_>, mask: &[bool]) -> Vec<Vec<usize>> {
    let n = mask.len();
    let mut covering = vec![Vec::new(); n];
    for j in (0..n).filter(|&j| mask[j]) {
        for k in spec.domain(j) {
            covering[k].push(j);
        }
    }
    (0..n)
        .map(|i| {
            if !mask[i] {
                return Vec::new();
            }
            let mut js: Vec<usize> = spec
                .dependency_neighborhood(design, i)
                .into_iter()
                .flat_map(|k| covering[k].iter().copied())
                .collect();
            js.sort_unstable();
            js.dedup();
            js
        })
        .collect()
}

fn scale(n: usize, rho: f64) -> f64 {
    let n = n as f64;
    n.powf(2.0 * rho) / (n * n)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceComponents {
    pub levels: [f64; 2],
    pub rho: f64,
    pub n: usize,
    pub omega_11: f64,
    pub omega_22: f64,
    /// Cross-unit part of `ω̂^L(t₁,t₂)`.
    pub cross: f64,
    /// `Ŵ^L(t₁,t₂)`.
    pub w_lower: f64,
    pub omega_lower_12: f64,
    pub sigma: f64,
    /// σ̂ was negative before clamping.
    pub clamped: bool,
    /// Pairs whose joint exposure probability is zero, bounded by `|xy| ≤ (x²+y²)/2`.
    pub bounded_pairs: usize,
    /// No unit observed at `t₂`; the coupling fell back to the outcome bound.
    pub bound_fallback: bool,
}

/// One unit observed at `t₁`, as input to the isotone lower bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OwnUnitTerm {
    pub y: f64,
    /// `1 / π₀(t₁ | D_{−𝒩_T(i)})`.
    pub inverse_probability: f64,
    /// `cov(r_{it₁}, r_{it₂} | D_{−𝒩_T(i)})`.
    pub cov: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WLower {
    pub value: f64,
    pub fallback: bool,
}

/// `Ŵ^L`: each unit's unobserved `Y_i(t₂)` replaced by its partner under
/// the coupling that minimizes `Σ cov_i Y_i Ŷ_i`, given the marginal `target`.
///
/// Units are ranked by `−cov_i Y_i` and coupled comonotonically with
/// `target`. Without a target, `Ŷ_i = ±bound`.
pub fn w_lower_bound(
    terms: &[OwnUnitTerm],
    target: Option<&CondCDF>,
    n: usize,
    rho: f64,
    bound: f64,
) -> Result<WLower> {
    if terms.is_empty() {
        return Ok(WLower {
            value: 0.0,
            fallback: false,
        });
    }
    let keys: Vec<f64> = terms.iter().map(|u| -u.cov * u.y).collect();
    let partners: Vec<f64> = match target {
        Some(f2) => {
            let weights: Vec<f64> = terms.iter().map(|u| u.inverse_probability).collect();
            let g = CondCDF::from_weighted(f2.level, &keys, &weights)?;
            keys.iter().map(|&k| g.coupled_mean(f2, k)).collect()
        }
        None => keys.iter().map(|k| bound * k.signum()).collect(),
    };
    let total: f64 = terms
        .iter()
        .zip(&partners)
        .map(|(u, yhat)| u.cov * u.inverse_probability * u.y * yhat)
        .sum();
    Ok(WLower {
        value: scale(n, rho) * total,
        fallback: target.is_none(),
    })
}

/// `ω̂(t,t)` alone.
pub fn omega_hat_same(
    y: &[f64],
    d: &[u8],
    design: &Design,
    request: &EstimandRequest<'_>,
    t: f64,
    rho: f64,
) -> Result<f64> {
    let req = EstimandRequest {
        levels: vec![t, t],
        ..request.clone()
    };
    let v = variance_components(y, d, design, &req, rho, None)?;
    Ok(v.omega_11)
}

/// All components of `σ̂(t₁,t₂)` for `request.levels = [t₁, t₂]`.
///
/// `bound` caps `|Y|` for the fallback coupling; defaults to `max |Y_i|`.
pub fn variance_components(
    y: &[f64],
    d: &[u8],
    design: &Design,
    request: &EstimandRequest<'_>,
    rho: f64,
    bound: Option<f64>,
) -> Result<VarianceComponents> {
    let levels: [f64; 2] = request
        .levels
        .as_slice()
        .try_into()
        .map_err(|_| CoaError::InvalidInput("variance needs exactly two exposure levels".into()))?;
    if !(rho > 0.0 && rho <= 0.5) {
        return Err(CoaError::config("inference.rho", format!("{rho} outside (0, 1/2]")));
    }
    let mask = included_units(y, d, design, request)?;
    let n = mask.iter().filter(|m| **m).count();
    let spec = &request.spec;
    let enumerator = PairEnumerator::new(design, spec, &request.mode, d, levels, &mask)?;
    let pairs = pair_sets(design, spec, &mask);

    let at: Vec<[bool; 2]> = (0..y.len())
        .map(|i| {
            if !mask[i] {
                return Ok([false, false]);
            }
            Ok([spec.at_level(d, i, levels[0])?, spec.at_level(d, i, levels[1])?])
        })
        .collect::<Result<_>>()?;
    let inv_prob: Vec<[f64; 2]> = (0..y.len())
        .map(|i| {
            let mut out = [0.0; 2];
            for k in 0..2 {
                if at[i][k] {
                    out[k] = 1.0 / spec.probability(design, d, i, levels[k])?;
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    // HT estimate of Y_i(t)², zero when unobserved.
    let square = |i: usize, k: usize| inv_prob[i][k] * y[i] * y[i];

    struct Row {
        same: [f64; 2],
        cross: f64,
        bounded: usize,
        own: Option<OwnUnitTerm>,
    }
    let rows: Vec<Row> = (0..y.len())
        .into_par_iter()
        .map(|i| {
            let mut row = Row {
                same: [0.0; 2],
                cross: 0.0,
                bounded: 0,
                own: None,
            };
            for &j in &pairs[i] {
                let m = enumerator.moments(i, j)?;
                for k in 0..2 {
                    let pm = m[k][k];
                    if pm.joint > 0.0 {
                        if at[i][k] && at[j][k] {
                            row.same[k] += y[i] * y[j] * pm.cov / pm.joint;
                        }
                    } else if pm.cov != 0.0 {
                        row.same[k] += pm.cov.abs() * 0.5 * (square(i, k) + square(j, k));
                        row.bounded += 1;
                    }
                }
                if i == j {
                    if at[i][0] {
                        row.own = Some(OwnUnitTerm {
                            y: y[i],
                            inverse_probability: inv_prob[i][0],
                            cov: m[0][1].cov,
                        });
                    }
                    continue;
                }
                let pm = m[0][1];
                if pm.joint > 0.0 {
                    if at[i][0] && at[j][1] {
                        row.cross += y[i] * y[j] * pm.cov / pm.joint;
                    }
                } else if pm.cov != 0.0 {
                    // cov ≤ 0 here, so cov·xy ≥ cov·(x²+y²)/2
                    row.cross += pm.cov * 0.5 * (square(i, 0) + square(j, 1));
                    row.bounded += 1;
                }
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;

    let s = scale(n, rho);
    let omega_11 = s * rows.iter().map(|r| r.same[0]).sum::<f64>();
    let omega_22 = s * rows.iter().map(|r| r.same[1]).sum::<f64>();
    let cross = s * rows.iter().map(|r| r.cross).sum::<f64>();
    let bounded_pairs = rows.iter().map(|r| r.bounded).sum();
    let terms: Vec<OwnUnitTerm> = rows.iter().filter_map(|r| r.own).collect();

    let target = match conditional_cdf_hat(y, d, design, spec, &mask, levels[1]) {
        Ok(f) => Some(f),
        Err(CoaError::Undefined(_)) => None,
        Err(e) => return Err(e),
    };
    let bound = bound.unwrap_or_else(|| y.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    let w = w_lower_bound(&terms, target.as_ref(), n, rho, bound)?;

    let mut v = VarianceComponents {
        levels,
        rho,
        n,
        omega_11,
        omega_22,
        cross,
        w_lower: w.value,
        omega_lower_12: cross + w.value,
        sigma: 0.0,
        clamped: false,
        bounded_pairs,
        bound_fallback: w.fallback,
    };
    let (sigma, clamped) = sigma_conservative(&v);
    v.sigma = sigma;
    v.clamped = clamped;
    Ok(v)
}

/// `max(0, ω̂₁₁ + ω̂₂₂ − 2ω̂^L₁₂)` and whether clamping applied.
pub fn sigma_conservative(v: &VarianceComponents) -> (f64, bool) {
    let raw = v.omega_11 + v.omega_22 - 2.0 * v.omega_lower_12;
    (raw.max(0.0), raw < 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
    /// Standard error multiplier `n^{−ρ}`.
    pub scale: f64,
}

impl ConfidenceInterval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

/// Standard-normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// `τ̂ ± n^{−ρ} σ̂^{1/2} z_{1−α/2}`.
pub fn confidence_interval(tau: f64, sigma: f64, n: usize, rho: f64, alpha: f64) -> Result<ConfidenceInterval> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CoaError::config("inference.alpha", format!("{alpha} outside (0,1)")));
    }
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(CoaError::InvalidInput(format!("variance {sigma} is not a nonnegative number")));
    }
    let scale = (n as f64).powf(-rho);
    let half = scale * sigma.sqrt() * normal_quantile(1.0 - alpha / 2.0);
    Ok(ConfidenceInterval {
        lower: tau - half,
        upper: tau + half,
        alpha,
        scale,
    })
}
