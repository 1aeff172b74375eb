use serde::{Deserialize, Serialize};

use super::design::{local_pattern, mask, Design};
use crate::error::{CoaError, Result};
use crate::netgraph::Network;

/// Largest exposure domain enumerated locally.
pub const LOCAL_ENUMERATION_CAP: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExposureKind {
    /// `D_i`
    Own,
    /// `Σ_j L_ij D_j`
    Count,
    /// Treated share of neighbors; undefined for isolated units.
    Fraction,
    /// `max_j L_ij D_j`
    Any,
}

/// An exposure mapping bound to a network.
#[derive(Debug, Clone, Copy)]
pub struct ExposureSpec<'a> {
    pub kind: ExposureKind,
    pub net: &'a Network,
}

/// Local assignments on the exposure domain that realize a level.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureCell {
    pub unit: usize,
    pub level: f64,
    pub domain: Vec<usize>,
    /// Bit `k` of each pattern is the value on `domain[k]`.
    pub patterns: Vec<u64>,
    /// Treated count in the domain that the level maps to.
    pub target_count: u32,
}

impl ExposureCell {
    pub fn contains(&self, pattern: u64) -> bool {
        self.patterns.binary_search(&pattern).is_ok()
    }
}

/// Round-half-up of `t·deg`, tolerant to representation error.
pub fn fraction_target(t: f64, degree: usize) -> u32 {
    (t * degree as f64 + 0.5 + 1e-9).floor().max(0.0) as u32
}

impl<'a> ExposureSpec<'a> {
    pub fn new(kind: ExposureKind, net: &'a Network) -> Self {
        ExposureSpec { kind, net }
    }

    /// `𝒩_T(i)`.
    pub fn domain(&self, i: usize) -> Vec<usize> {
        match self.kind {
            ExposureKind::Own => vec![i],
            _ => self.net.neighbors(i).to_vec(),
        }
    }

    /// `𝒜_T(i)` under `design`.
    pub fn dependency_neighborhood(&self, design: &Design, i: usize) -> Vec<usize> {
        design.dependency_set(&self.domain(i))
    }

    pub fn is_defined(&self, i: usize) -> bool {
        !(self.kind == ExposureKind::Fraction && self.net.degree(i) == 0)
    }

    /// `T_i(D)`, or `None` for an isolated unit under fraction exposure.
    pub fn value(&self, d: &[u8], i: usize) -> Option<f64> {
        let treated = || self.net.neighbors(i).iter().filter(|&&j| d[j] == 1).count();
        match self.kind {
            ExposureKind::Own => Some(f64::from(d[i])),
            ExposureKind::Count => Some(treated() as f64),
            ExposureKind::Fraction => {
                let deg = self.net.degree(i);
                (deg > 0).then(|| treated() as f64 / deg as f64)
            }
            ExposureKind::Any => Some(if treated() > 0 { 1.0 } else { 0.0 }),
        }
    }

    /// Maps a nominal level to the domain treated count it stands for.
    pub(crate) fn target(&self, i: usize, t: f64) -> Result<u32> {
        let len = self.domain(i).len();
        let empty = || CoaError::EmptyCell { unit: i, level: t };
        let integral = |x: f64| {
            let r = x.round();
            ((x - r).abs() < 1e-9 && r >= 0.0).then_some(r as u32)
        };
        match self.kind {
            ExposureKind::Own | ExposureKind::Any => match integral(t) {
                Some(v @ (0 | 1)) => Ok(v),
                _ => Err(empty()),
            },
            ExposureKind::Count => integral(t).filter(|&c| c as usize <= len).ok_or_else(empty),
            ExposureKind::Fraction => {
                if len == 0 {
                    return Err(CoaError::UndefinedExposure(i));
                }
                if !(0.0..=1.0).contains(&t) {
                    return Err(empty());
                }
                Ok(fraction_target(t, len))
            }
        }
    }

    /// `𝒟_i(t)`, sorted by pattern value.
    pub fn cell(&self, i: usize, t: f64) -> Result<ExposureCell> {
        let domain = self.domain(i);
        if domain.len() > LOCAL_ENUMERATION_CAP {
            return Err(CoaError::EnumerationCap {
                what: "exposure domain",
                size: domain.len(),
                cap: LOCAL_ENUMERATION_CAP,
            });
        }
        let target = self.target(i, t)?;
        let full = mask(domain.len());
        let patterns: Vec<u64> = match self.kind {
            ExposureKind::Any if target == 1 => (1..=full).collect(),
            _ => (0..=full).filter(|m| m.count_ones() == target).collect(),
        };
        if patterns.is_empty() {
            return Err(CoaError::EmptyCell { unit: i, level: t });
        }
        Ok(ExposureCell {
            unit: i,
            level: t,
            domain,
            patterns,
            target_count: target,
        })
    }

    /// Whether `T_i(D)` falls in the cell of level `t`.
    pub fn at_level(&self, d: &[u8], i: usize, t: f64) -> Result<bool> {
        let cell = self.cell(i, t)?;
        Ok(cell.contains(local_pattern(&cell.domain, d)))
    }

    /// `P_{π₀}(T_i = t | D_{−𝒩_T(i)})`.
    pub fn probability(&self, design: &Design, d: &[u8], i: usize, t: f64) -> Result<f64> {
        let cell = self.cell(i, t)?;
        Ok(cell
            .patterns
            .iter()
            .map(|&m| design.conditional_pmf(&cell.domain, m, d))
            .sum())
    }
}
