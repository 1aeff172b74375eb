//! Trace-formula estimands of the linearized equilibrium response.
//!
//! Throughout, `X = (I − H_Y)⁻¹H_D` and the effect on `Y_i` of moving the
//! assignments of a unit set `S_i` is `t·Σ_{j∈S_i} X_ij`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::error::{CoaError, Result};
use crate::netgraph::{leading_eigenpair, Network, PathDistanceIndicators};
use crate::outcomes::{ModelKind, OutcomeModel, PeerAggregate, SmoothModel};

/// Largest path count enumerated for higher-order LATE weights.
pub const PATH_ENUMERATION_CAP: usize = 1 << 22;

/// Jacobians of the equilibrium map at a reference point.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedSystem {
    pub net: Network,
    pub h_y: DMatrix<f64>,
    pub h_d: DMatrix<f64>,
    pub t: f64,
}

impl LinearizedSystem {
    pub fn new(net: Network, h_y: DMatrix<f64>, h_d: DMatrix<f64>, t: f64) -> Result<Self> {
        let n = net.n();
        for (name, m) in [("H_Y", &h_y), ("H_D", &h_d)] {
            if m.shape() != (n, n) {
                return Err(CoaError::InvalidInput(format!(
                    "{name} is {}×{}, expected {n}×{n}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    if m[(i, j)] != 0.0 && !net.link(i, j) {
                        return Err(CoaError::InvalidInput(format!(
                            "{name}[{i}][{j}] is nonzero without a link"
                        )));
                    }
                }
            }
        }
        if !t.is_finite() {
            return Err(CoaError::InvalidInput("step t must be finite".into()));
        }
        Ok(LinearizedSystem { net, h_y, h_d, t })
    }

    /// Jacobians of `model` at assignment `d` and its equilibrium outcome.
    pub fn from_model(model: &OutcomeModel, d: &[f64], t: f64) -> Result<Self> {
        let y = model.evaluate(d)?;
        let (h_y, h_d) = model.jacobians(d, &y)?;
        LinearizedSystem::new(model.net().clone(), h_y, h_d, t)
    }

    pub fn n(&self) -> usize {
        self.net.n()
    }

    fn resolvent(&self) -> nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn> {
        (DMatrix::identity(self.n(), self.n()) - &self.h_y).lu()
    }

    /// `X = (I − H_Y)⁻¹H_D`.
    pub fn response(&self) -> Result<DMatrix<f64>> {
        self.resolvent()
            .solve(&self.h_d)
            .ok_or_else(|| CoaError::Singular("I − H_Y".into()))
    }

    /// `(t/n)·1ᵀ(I − H_Y)⁻¹H_DΔ`.
    pub fn total_effect(&self, delta: &[f64]) -> Result<f64> {
        self.check_delta(delta)?;
        let rhs = &self.h_d * DVector::from_column_slice(delta);
        let x = self
            .resolvent()
            .solve(&rhs)
            .ok_or_else(|| CoaError::Singular("I − H_Y".into()))?;
        Ok(self.t / self.n() as f64 * x.sum())
    }

    fn check_delta(&self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.n() {
            return Err(CoaError::InvalidInput(format!(
                "Δ has {} entries for {} units",
                delta.len(),
                self.n()
            )));
        }
        Ok(())
    }
}

/// `(t/n)·Σ_ij X_ij S_ij`: average effect on `Y_i` of moving every `j` with `S_ij = 1`.
fn contrast(x: &DMatrix<f64>, selector: &DMatrix<f64>, t: f64) -> f64 {
    t / x.nrows() as f64 * x.component_mul(selector).sum()
}

/// `τ_s`: effect of moving every unit at path distance exactly `s`.
pub fn tau_path_distance(sys: &LinearizedSystem, s: usize) -> Result<f64> {
    let x = sys.response()?;
    Ok(contrast(&x, &sys.net.path_distance_indicator(s).indicator, sys.t))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decomposition {
    pub tau_total: f64,
    /// `τ_0, …, τ_S` with `S` the largest finite distance.
    pub by_distance: Vec<f64>,
    pub residual: f64,
}

/// `τ_tot` by a linear solve against `Σ_s τ_s` over all finite distances.
pub fn total_effect_decomposition(sys: &LinearizedSystem) -> Result<Decomposition> {
    let n = sys.n();
    let tau_total = sys.total_effect(&vec![1.0; n])?;
    let x = sys.response()?;
    let dist = sys.net.distance_matrix();
    let diameter = dist
        .iter()
        .flat_map(|row| row.iter().flatten().copied())
        .max()
        .unwrap_or(0);
    let by_distance: Vec<f64> = (0..=diameter)
        .map(|s| contrast(&x, &PathDistanceIndicators::from_distances(s, &dist).indicator, sys.t))
        .collect();
    let residual = tau_total - by_distance.iter().sum::<f64>();
    Ok(Decomposition {
        tau_total,
        by_distance,
        residual,
    })
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    eigen_moduli(m).first().copied().unwrap_or(0.0)
}

/// Eigenvalue moduli in decreasing order.
fn eigen_moduli(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut moduli: Vec<f64> = m.complex_eigenvalues().iter().map(|z| z.norm()).collect();
    moduli.sort_by(|a, b| b.total_cmp(a));
    moduli
}

/// Induced 1-norm (largest absolute column sum).
fn norm_one(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeumannApprox {
    pub terms: usize,
    pub value: f64,
    pub exact: f64,
    pub error: f64,
    /// `(t/n)‖H_Y‖₁^{terms+1}/(1 − ‖H_Y‖₁)·‖H_DΔ‖₁`, when `‖H_Y‖₁ < 1`.
    pub error_bound: Option<f64>,
    pub spectral_radius: f64,
}

/// `(t/n)·1ᵀ(Σ_{s=0}^{terms} H_Yˢ)H_DΔ` next to the exact solve.
pub fn neumann_total_effect(sys: &LinearizedSystem, delta: &[f64], terms: usize) -> Result<NeumannApprox> {
    sys.check_delta(delta)?;
    let radius = spectral_radius(&sys.h_y);
    if radius >= 1.0 {
        return Err(CoaError::InvalidInput(format!(
            "spectral radius of H_Y is {radius:.6}, the Neumann series diverges"
        )));
    }
    let exact = sys.total_effect(delta)?;
    let scale = sys.t / sys.n() as f64;
    let mut v = &sys.h_d * DVector::from_column_slice(delta);
    let rhs_norm = v.iter().map(|x| x.abs()).sum::<f64>();
    let mut sum = v.sum();
    for _ in 0..terms {
        v = &sys.h_y * v;
        sum += v.sum();
    }
    let value = scale * sum;
    let h = norm_one(&sys.h_y);
    let error_bound =
        (h < 1.0).then(|| scale.abs() * h.powi(terms as i32 + 1) / (1.0 - h) * rhs_norm);
    Ok(NeumannApprox {
        terms,
        value,
        exact,
        error: exact - value,
        error_bound,
        spectral_radius: radius,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitivity {
    Primitive,
    /// Strongly connected class label per unit.
    Reducible { classes: Vec<usize>, count: usize },
    Periodic { period: usize },
}

/// Primitivity of the nonzero pattern: irreducible with aperiodic cycles.
pub fn primitivity(m: &DMatrix<f64>) -> Primitivity {
    let n = m.nrows();
    let succ: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| m[(i, j)] != 0.0).collect())
        .collect();
    let (classes, count) = strong_components(&succ);
    if count != 1 || succ.iter().all(Vec::is_empty) {
        return Primitivity::Reducible { classes, count };
    }
    let mut level = vec![usize::MAX; n];
    level[0] = 0;
    let mut queue = std::collections::VecDeque::from([0]);
    let mut period = 0usize;
    while let Some(u) = queue.pop_front() {
        for &v in &succ[u] {
            if level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            } else {
                period = gcd(period, (level[u] + 1).abs_diff(level[v]));
            }
        }
    }
    match period {
        1 => Primitivity::Primitive,
        p => Primitivity::Periodic { period: p },
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Kosaraju labels in order of discovery on the reversed graph.
fn strong_components(succ: &[Vec<usize>]) -> (Vec<usize>, usize) {
    let n = succ.len();
    let mut pred = vec![Vec::new(); n];
    for (u, row) in succ.iter().enumerate() {
        for &v in row {
            pred[v].push(u);
        }
    }
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![(start, 0usize)];
        while let Some((u, k)) = stack.pop() {
            if let Some(&v) = succ[u].get(k) {
                stack.push((u, k + 1));
                if !seen[v] {
                    seen[v] = true;
                    stack.push((v, 0));
                }
            } else {
                order.push(u);
            }
        }
    }
    let mut label = vec![usize::MAX; n];
    let mut count = 0;
    for &start in order.iter().rev() {
        if label[start] != usize::MAX {
            continue;
        }
        label[start] = count;
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            for &v in &pred[u] {
                if label[v] == usize::MAX {
                    label[v] = count;
                    stack.push(v);
                }
            }
        }
        count += 1;
    }
    (label, count)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemainderNorm {
    pub s0: usize,
    /// `‖Q^{s₀+1}(I − Q)⁻¹‖₂`.
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FPSummary {
    pub lambda1: f64,
    /// Second largest eigenvalue modulus.
    pub lambda2: f64,
    /// Right eigenvector `w*`, unit length.
    pub w: Vec<f64>,
    /// Left eigenvector `v*`, scaled so `v*ᵀw* = 1`.
    pub v: Vec<f64>,
    /// `T_∞(Δ) = v*ᵀH_DΔ`.
    pub global_exposure: f64,
    pub s0: usize,
    pub tau_total: f64,
    /// `(t/n)Σ_{s≤s₀} 1ᵀH_YˢH_DΔ`.
    pub explicit: f64,
    /// `(t/n)(1ᵀw*)·λ₁^{s₀+1}/(1 − λ₁)·T_∞(Δ)`.
    pub rank_one: f64,
    pub remainder: f64,
    pub remainder_norms: Vec<RemainderNorm>,
}

/// Splits `τ_tot` into distances up to `s₀`, the dominant-eigenvector tail and a remainder.
pub fn global_exposure_fp(sys: &LinearizedSystem, delta: &[f64], s0: usize) -> Result<FPSummary> {
    sys.check_delta(delta)?;
    let n = sys.n();
    match primitivity(&sys.h_y) {
        Primitivity::Primitive => {}
        Primitivity::Reducible { count, .. } => {
            return Err(CoaError::InvalidInput(format!(
                "H_Y is reducible with {count} strongly connected classes; analyze each class separately"
            )))
        }
        Primitivity::Periodic { period } => {
            return Err(CoaError::InvalidInput(format!(
                "H_Y is irreducible but periodic with period {period}"
            )))
        }
    }
    let moduli = eigen_moduli(&sys.h_y);
    if moduli[0] >= 1.0 {
        return Err(CoaError::InvalidInput(format!(
            "spectral radius of H_Y is {:.6}, no global exposure limit",
            moduli[0]
        )));
    }
    let pair = leading_eigenpair(&sys.h_y, 1e-13, 100_000)?;
    let lambda1 = pair.value;
    let lambda2 = moduli.get(1).copied().unwrap_or(0.0);
    let w = DVector::from_vec(pair.right);
    let v_raw = DVector::from_vec(pair.left);
    let v = &v_raw / v_raw.dot(&w);
    let p = &w * v.transpose();
    let q = &sys.h_y - &p * lambda1;

    let scale = sys.t / n as f64;
    let hd_delta = &sys.h_d * DVector::from_column_slice(delta);
    let global_exposure = v.dot(&hd_delta);
    let tau_total = sys.total_effect(delta)?;

    let mut term = hd_delta.clone();
    let mut explicit = term.sum();
    for _ in 0..s0 {
        term = &sys.h_y * term;
        explicit += term.sum();
    }
    let explicit = scale * explicit;
    let rank_one = scale * w.sum() * lambda1.powi(s0 as i32 + 1) / (1.0 - lambda1) * global_exposure;

    let resolvent_q = (DMatrix::identity(n, n) - &q)
        .try_inverse()
        .ok_or_else(|| CoaError::Singular("I − Q".into()))?;
    let mut q_power = q.clone();
    let mut remainder_norms = Vec::with_capacity(s0 + 1);
    for s in 0..=s0 {
        remainder_norms.push(RemainderNorm {
            s0: s,
            norm: spectral_norm(&(&q_power * &resolvent_q)),
        });
        q_power = &q_power * &q;
    }

    Ok(FPSummary {
        lambda1,
        lambda2,
        w: w.iter().copied().collect(),
        v: v.iter().copied().collect(),
        global_exposure,
        s0,
        tau_total,
        explicit,
        rank_one,
        remainder: tau_total - explicit - rank_one,
        remainder_norms,
    })
}

/// Least-squares slope of `ln ‖remainder‖` against `s₀`.
pub fn remainder_log_slope(norms: &[RemainderNorm]) -> f64 {
    let pts: Vec<(f64, f64)> = norms.iter().map(|r| (r.s0 as f64, r.norm.ln())).collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Nonnegative weights on the links of `net`, rescaled to the given spectral radius.
pub fn random_peer_operator<R: Rng + ?Sized>(net: &Network, radius: f64, rng: &mut R) -> DMatrix<f64> {
    let n = net.n();
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        for &j in net.neighbors(i) {
            h[(i, j)] = rng.gen_range(0.5..1.5);
        }
    }
    let r = spectral_radius(&h);
    if r > 0.0 {
        h *= radius / r;
    }
    h
}

/// The four contrasts that identify the linear-in-means parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEstimands {
    /// Effect on `Y_i` of moving `i`'s neighbors.
    pub tau_y: f64,
    /// Effect on `(LY)_i` of moving `i`'s neighbors.
    pub tau_ly: f64,
    /// Effect on `Y_i` of moving `D_i`.
    pub tau_dir: f64,
    /// Effect on `(LY)_i` of moving `D_i`.
    pub tau_ly0: f64,
}

pub fn trace_estimands(sys: &LinearizedSystem) -> Result<TraceEstimands> {
    let x = sys.response()?;
    let l = sys.net.adjacency();
    let lx = &l * &x;
    let n = sys.n();
    let eye = DMatrix::identity(n, n);
    Ok(TraceEstimands {
        tau_y: contrast(&x, &l, sys.t),
        tau_ly: contrast(&lx, &l, sys.t),
        tau_dir: contrast(&x, &eye, sys.t),
        tau_ly0: contrast(&lx, &eye, sys.t),
    })
}

/// `Lˢy`, the outcome whose CoA contrasts give `τ_{LˢY}`.
pub fn transformed_outcome(net: &Network, y: &[f64], s: usize) -> Vec<f64> {
    (0..s).fold(y.to_vec(), |acc, _| net.apply(&acc))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Recovery {
    /// `None` when the network carries no identifying variation.
    pub gamma2: Option<f64>,
    pub beta1: f64,
}

/// `γ̂₂ = τ_Y/τ_LY`, `β̂₁ = (τ_dir − γ̂₂τ_LY⁽⁰⁾)/t`. Exact for
/// `Y = β₀ + β₁D + γ₂LY + U` on graphs without self-links.
pub fn recover_linear_in_means(traces: &TraceEstimands, t: f64) -> Result<Recovery> {
    if t == 0.0 || !t.is_finite() {
        return Err(CoaError::InvalidInput("step t must be finite and nonzero".into()));
    }
    let tiny = f64::EPSILON * traces.tau_dir.abs().max(1.0);
    if traces.tau_ly.abs() <= tiny {
        if traces.tau_ly0.abs() <= tiny && traces.tau_y.abs() <= tiny {
            return Ok(Recovery {
                gamma2: None,
                beta1: traces.tau_dir / t,
            });
        }
        return Err(CoaError::Undefined(
            "τ_LY is zero: no identifying variation for γ₂".into(),
        ));
    }
    let gamma2 = traces.tau_y / traces.tau_ly;
    Ok(Recovery {
        gamma2: Some(gamma2),
        beta1: (traces.tau_dir - gamma2 * traces.tau_ly0) / t,
    })
}

/// Per-unit derivatives of `h̃(d, T; i)` at the reference point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnitDerivatives {
    /// `∂h̃/∂T` at `T_i`.
    pub h_t: Vec<f64>,
    /// `∂h̃/∂d` at `D_i`.
    pub h_d: Vec<f64>,
}

impl UnitDerivatives {
    /// Derivatives of a smooth model with exposure `T_i = κ_i(LY)_i`, plus `T_Y`.
    pub fn from_smooth(net: &Network, model: &SmoothModel, y: &[f64]) -> Result<(Self, DMatrix<f64>)> {
        if model.spillover != 0.0 {
            return Err(CoaError::InvalidInput(
                "LATE weights need H_D diagonal; the model has exogenous spillovers".into(),
            ));
        }
        let n = net.n();
        let t = model.peer_exposure(net, y);
        let slope = |x: f64| match model.response {
            crate::outcomes::PeerResponse::Linear => 1.0,
            crate::outcomes::PeerResponse::Tanh => 1.0 - x.tanh().powi(2),
        };
        let h_t = (0..n).map(|i| model.peer[i] * slope(t[i])).collect();
        let mut t_y = net.adjacency();
        if model.aggregate == PeerAggregate::Mean {
            for i in 0..n {
                let k = net.degree(i);
                if k > 0 {
                    t_y.row_mut(i).scale_mut(1.0 / k as f64);
                }
            }
        }
        Ok((
            UnitDerivatives {
                h_t,
                h_d: model.direct.clone(),
            },
            t_y,
        ))
    }

    /// From a model kind that has such a structure.
    pub fn from_model(model: &OutcomeModel, d: &[f64]) -> Result<(Self, DMatrix<f64>)> {
        match model.kind() {
            ModelKind::Smooth(s) => {
                let y = model.evaluate(d)?;
                UnitDerivatives::from_smooth(model.net(), s, &y)
            }
            ModelKind::LinearInMeans(m) if m.params.gamma1 == 0.0 => {
                let n = model.n();
                Ok((
                    UnitDerivatives {
                        h_t: vec![m.params.gamma2; n],
                        h_d: vec![m.params.beta1; n],
                    },
                    model.net().adjacency(),
                ))
            }
            _ => Err(CoaError::InvalidInput(
                "LATE weights need an exposure-mediated model without exogenous spillovers".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LateSetting {
    /// `T_i = (LY)_i`.
    NeighborSum,
    /// General exposure with Jacobian `T_Y`, supported on the links.
    Exposure,
    /// Moving units at distance `s` against `τ_{LˢY}`.
    PathOrder { s: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LateWeights {
    /// Unit weights, or path weights for `PathOrder`.
    pub weights: Vec<f64>,
    /// The derivative (or derivative product) each weight multiplies.
    pub derivatives: Vec<f64>,
    pub weighted_average: f64,
    pub tau_y: f64,
    pub tau_denominator: f64,
    pub ratio: f64,
    /// 2-norm condition number of `I − H_Y`.
    pub condition_number: f64,
}

/// Complier weights for the ratio of contrasts, computed alongside the ratio itself.
///
/// `t_y` is the exposure Jacobian for [`LateSetting::Exposure`] and is ignored otherwise.
pub fn late_weights(
    net: &Network,
    derivs: &UnitDerivatives,
    setting: &LateSetting,
    t_y: Option<&DMatrix<f64>>,
) -> Result<LateWeights> {
    let n = net.n();
    if derivs.h_t.len() != n || derivs.h_d.len() != n {
        return Err(CoaError::InvalidInput(format!("derivatives do not match {n} units")));
    }
    let l = net.adjacency();
    let exposure_jacobian = match setting {
        LateSetting::Exposure => {
            let ty = t_y.ok_or_else(|| CoaError::InvalidInput("exposure setting needs T_Y".into()))?;
            if ty.shape() != (n, n) {
                return Err(CoaError::InvalidInput("T_Y has the wrong shape".into()));
            }
            if (0..n).any(|i| (0..n).any(|j| ty[(i, j)] != 0.0 && !net.link(i, j))) {
                return Err(CoaError::InvalidInput("T_Y is nonzero off the links".into()));
            }
            ty.clone()
        }
        _ => l.clone(),
    };
    let h_y = DMatrix::from_diagonal(&DVector::from_column_slice(&derivs.h_t)) * &exposure_jacobian;
    let resolvent = DMatrix::identity(n, n) - &h_y;
    let singular = resolvent.clone().svd(false, false).singular_values;
    let smin = singular.iter().copied().fold(f64::INFINITY, f64::min);
    let smax = singular.iter().copied().fold(0.0, f64::max);
    let condition_number = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let lu = resolvent.lu();
    let hd = DMatrix::from_diagonal(&DVector::from_column_slice(&derivs.h_d));
    let moved = match setting {
        LateSetting::PathOrder { s } => net.path_distance_indicator(*s).indicator.transpose(),
        _ => l.transpose(),
    };
    let b = lu
        .solve(&(hd * moved))
        .ok_or_else(|| CoaError::Singular("I − H_Y".into()))?;
    let nf = n as f64;
    let tau_y = b.trace() / nf;

    let (weights, derivatives, tau_denominator) = match setting {
        LateSetting::NeighborSum | LateSetting::Exposure => {
            let tb = &exposure_jacobian * &b;
            let weights: Vec<f64> = (0..n).map(|i| tb[(i, i)]).collect();
            (weights, derivs.h_t.clone(), tb.trace() / nf)
        }
        LateSetting::PathOrder { s } => {
            let mut weights = Vec::new();
            let mut derivatives = Vec::new();
            let mut path = Vec::with_capacity(s + 1);
            for j0 in 0..n {
                path.push(j0);
                walk_paths(net, &derivs.h_t, &b, *s, &mut path, 1.0, &mut weights, &mut derivatives)?;
                path.pop();
            }
            let ls = (0..*s).fold(DMatrix::identity(n, n), |acc, _| &acc * &l);
            (weights, derivatives, (ls * &b).trace() / nf)
        }
    };
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        return Err(CoaError::Undefined("LATE weights sum to zero".into()));
    }
    let weighted_average = weights.iter().zip(&derivatives).map(|(a, h)| a * h).sum::<f64>() / total;
    Ok(LateWeights {
        weights,
        derivatives,
        weighted_average,
        tau_y,
        tau_denominator,
        ratio: tau_y / tau_denominator,
        condition_number,
    })
}

/// Every walk `j₀ → … → j_s` along links, weighted by `B[j_s][j₀]`.
#[allow(clippy::too_many_arguments)]
fn walk_paths(
    net: &Network,
    h: &[f64],
    b: &DMatrix<f64>,
    s: usize,
    path: &mut Vec<usize>,
    product: f64,
    weights: &mut Vec<f64>,
    derivatives: &mut Vec<f64>,
) -> Result<()> {
    let last = *path.last().expect("nonempty walk");
    if path.len() == s + 1 {
        if weights.len() >= PATH_ENUMERATION_CAP {
            return Err(CoaError::EnumerationCap {
                what: "walks for higher-order LATE weights",
                size: weights.len() + 1,
                cap: PATH_ENUMERATION_CAP,
            });
        }
        weights.push(b[(last, path[0])]);
        derivatives.push(product);
        return Ok(());
    }
    for &next in net.neighbors(last) {
        path.push(next);
        walk_paths(net, h, b, s, path, product * h[last], weights, derivatives)?;
        path.pop();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::outcomes::LinearInMeansParams;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lim(net: Network, gamma1: f64, gamma2: f64) -> OutcomeModel {
        let n = net.n();
        let p = LinearInMeansParams {
            beta0: 0.2,
            beta1: 1.0,
            gamma1,
            gamma2,
        };
        OutcomeModel::linear_in_means(net, p, vec![0.0; n]).unwrap()
    }

    fn lim_system(net: Network, gamma2: f64, t: f64) -> LinearizedSystem {
        let n = net.n();
        LinearizedSystem::from_model(&lim(net, 0.0, gamma2), &vec![0.0; n], t).unwrap()
    }

    #[test]
    fn edgeless_has_only_direct_effects() {
        let net = Network::edgeless(4, false);
        let h_d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]));
        let sys = LinearizedSystem::new(net, DMatrix::zeros(4, 4), h_d, 0.5).unwrap();
        assert_eq!(tau_path_distance(&sys, 1).unwrap(), 0.0);
        assert_eq!(tau_path_distance(&sys, 3).unwrap(), 0.0);
        assert_abs_diff_eq!(tau_path_distance(&sys, 0).unwrap(), 0.5 / 4.0 * 10.0, epsilon = 1e-15);
    }

    #[test]
    fn k3_total_effect_is_two() {
        let sys = lim_system(Network::complete(3), 0.25, 1.0);
        let dec = total_effect_decomposition(&sys).unwrap();
        assert_abs_diff_eq!(dec.tau_total, 2.0, epsilon = 1e-14);
        // (I − 0.25L)⁻¹ = 0.8I + 0.4J
        assert_abs_diff_eq!(dec.by_distance[0], 1.2, epsilon = 1e-14);
        assert_abs_diff_eq!(dec.by_distance[1], 0.8, epsilon = 1e-14);
        assert_eq!(dec.by_distance.len(), 2);
        assert!(dec.residual.abs() < 1e-14);
    }

    #[test]
    fn path_distance_effects_match_resolves() {
        let net = Network::path(3);
        let model = lim(net.clone(), 0.3, 0.4);
        let d = [1.0, 0.0, 1.0];
        let t = 0.6;
        let sys = LinearizedSystem::from_model(&model, &d, t).unwrap();
        let y = model.evaluate(&d).unwrap();
        for s in 0..3 {
            let ind = net.path_distance_indicator(s).indicator;
            let oracle: f64 = (0..3)
                .map(|i| {
                    let moved: Vec<f64> = (0..3).map(|j| d[j] + t * ind[(i, j)]).collect();
                    model.evaluate(&moved).unwrap()[i] - y[i]
                })
                .sum::<f64>()
                / 3.0;
            assert_abs_diff_eq!(tau_path_distance(&sys, s).unwrap(), oracle, epsilon = 1e-12);
        }
    }

    #[test]
    fn disjoint_components_add() {
        let a = Network::path(4);
        let b = Network::complete(3);
        let joint = a.disjoint_union(&b).unwrap();
        let tot = |net: Network| {
            let n = net.n() as f64;
            total_effect_decomposition(&lim_system(net, 0.2, 1.0)).unwrap().tau_total * n
        };
        let sum = tot(a) + tot(b);
        assert_abs_diff_eq!(tot(joint), sum, epsilon = 1e-12);
    }

    #[test]
    fn decomposition_identity_on_directed_graph() {
        let net = Network::from_edges(5, true, [(0, 1), (1, 2), (2, 0), (3, 4), (2, 3)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h_y = random_peer_operator(&net, 0.7, &mut rng);
        let mut h_d = random_peer_operator(&net, 0.5, &mut rng);
        h_d.set_diagonal(&DVector::from_element(5, 1.0));
        let sys = LinearizedSystem::new(net, h_y, h_d, 1.0).unwrap();
        let dec = total_effect_decomposition(&sys).unwrap();
        assert!(dec.residual.abs() < 1e-12);
    }

    #[test]
    fn sparsity_is_enforced() {
        let net = Network::path(3);
        let mut h = DMatrix::zeros(3, 3);
        h[(0, 2)] = 0.1;
        assert!(LinearizedSystem::new(net, h, DMatrix::identity(3, 3), 1.0).is_err());
    }

    #[test]
    fn neumann_series() {
        let sys = LinearizedSystem::new(Network::path(2), DMatrix::zeros(2, 2), DMatrix::identity(2, 2), 1.0)
            .unwrap();
        let approx = neumann_total_effect(&sys, &[1.0, 1.0], 0).unwrap();
        assert_eq!(approx.error, 0.0);

        let k3 = lim_system(Network::complete(3), 0.25, 1.0);
        let errs: Vec<f64> = (0..12)
            .map(|k| neumann_total_effect(&k3, &[1.0; 3], k).unwrap().error)
            .collect();
        for w in errs.windows(2) {
            assert!((w[1] / w[0] - 0.5).abs() < 0.05);
        }
        let ring = lim_system(Network::cycle(8), 0.3, 0.7);
        let delta = [1.0, -0.5, 0.0, 2.0, 1.0, 0.3, 0.0, -1.0];
        for k in 0..10 {
            let a = neumann_total_effect(&ring, &delta, k).unwrap();
            assert!(a.error.abs() <= a.error_bound.unwrap() + 1e-15);
        }

        let big = LinearizedSystem::new(Network::complete(3), Network::complete(3).adjacency() * 0.55, DMatrix::identity(3, 3), 1.0)
            .unwrap();
        assert!(neumann_total_effect(&big, &[1.0; 3], 5).is_err());
    }

    #[test]
    fn primitivity_diagnosis() {
        assert_eq!(primitivity(&Network::complete(3).adjacency()), Primitivity::Primitive);
        assert_eq!(primitivity(&Network::cycle(4).adjacency()), Primitivity::Periodic { period: 2 });
        assert_eq!(primitivity(&Network::cycle(5).adjacency()), Primitivity::Primitive);
        let two = Network::complete(3).disjoint_union(&Network::complete(3)).unwrap();
        match primitivity(&two.adjacency()) {
            Primitivity::Reducible { count, classes } => {
                assert_eq!(count, 2);
                assert_eq!(classes[0], classes[2]);
                assert_ne!(classes[0], classes[3]);
            }
            other => panic!("{other:?}"),
        }
        let chain = Network::from_edges(3, true, [(0, 1), (1, 2)]).unwrap();
        assert!(matches!(primitivity(&chain.adjacency()), Primitivity::Reducible { count: 3, .. }));
        assert!(matches!(primitivity(&DMatrix::zeros(1, 1)), Primitivity::Reducible { .. }));
    }

    #[test]
    fn fp_rank_one_operator_has_no_remainder() {
        let n = 5;
        let net = Network::complete(n);
        let h = DMatrix::from_element(n, n, 0.6 / n as f64);
        let sys = LinearizedSystem::new(net, h, DMatrix::identity(n, n), 1.0).unwrap();
        for s0 in 1..6 {
            let fp = global_exposure_fp(&sys, &[1.0, 0.0, 2.0, 0.5, 1.0], s0).unwrap();
            assert_abs_diff_eq!(fp.lambda1, 0.6, epsilon = 1e-12);
            assert!(fp.remainder.abs() < 1e-12);
            assert!(fp.remainder_norms.iter().all(|r| r.norm < 1e-12));
        }
    }

    #[test]
    fn fp_on_k3() {
        let sys = lim_system(Network::complete(3), 0.25, 1.0);
        let fp = global_exposure_fp(&sys, &[1.0; 3], 2).unwrap();
        assert_abs_diff_eq!(fp.lambda1, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(fp.lambda2, 0.25, epsilon = 1e-12);
        let c = 1.0 / 3f64.sqrt();
        for k in 0..3 {
            assert_abs_diff_eq!(fp.w[k], c, epsilon = 1e-10);
            assert_abs_diff_eq!(fp.v[k], c, epsilon = 1e-10);
        }
        // 1 is an eigenvector, so the rank-1 part carries the whole tail
        assert!(fp.remainder.abs() < 1e-12);
        assert_abs_diff_eq!(fp.tau_total, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn fp_rejects_periodic_and_reducible() {
        let sys = lim_system(Network::cycle(4), 0.2, 1.0);
        assert!(global_exposure_fp(&sys, &[1.0; 4], 3).is_err());
        let two = Network::complete(3).disjoint_union(&Network::complete(3)).unwrap();
        assert!(global_exposure_fp(&lim_system(two, 0.2, 1.0), &[1.0; 6], 3).is_err());
    }

    #[test]
    fn fp_remainder_split_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Network::erdos_renyi(12, 0.4, &mut rng);
        let h = random_peer_operator(&net, 0.8, &mut rng);
        assert_eq!(primitivity(&h), Primitivity::Primitive);
        let sys = LinearizedSystem::new(net, h, DMatrix::identity(12, 12), 0.5).unwrap();
        let delta: Vec<f64> = (0..12).map(|i| (i % 3) as f64).collect();
        let fp = global_exposure_fp(&sys, &delta, 4).unwrap();
        let p = DVector::from_vec(fp.w.clone()) * DVector::from_vec(fp.v.clone()).transpose();
        let q = &sys.h_y - p * fp.lambda1;
        let tail = q.pow(5) * (DMatrix::identity(12, 12) - &q).try_inverse().unwrap();
        let direct = 0.5 / 12.0 * (tail * DVector::from_vec(delta)).sum();
        assert_abs_diff_eq!(fp.remainder, direct, epsilon = 1e-12);
    }

    #[test]
    fn fp_remainder_decays_at_second_eigenvalue() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let net = Network::erdos_renyi(30, 0.15, &mut rng);
            let h = random_peer_operator(&net, 0.8, &mut rng);
            if primitivity(&h) != Primitivity::Primitive {
                continue;
            }
            let sys = LinearizedSystem::new(net, h, DMatrix::identity(30, 30), 1.0).unwrap();
            let fp = global_exposure_fp(&sys, &[1.0; 30], 10).unwrap();
            let slope = remainder_log_slope(&fp.remainder_norms[2..=10]);
            let target = fp.lambda2.ln();
            assert!((slope - target).abs() <= 0.15 * target.abs());
        }
    }

    #[test]
    fn recovery_is_exact() {
        for gamma2 in [0.1, 0.25] {
            let sys = lim_system(Network::complete(3), gamma2, 1.0);
            let r = recover_linear_in_means(&trace_estimands(&sys).unwrap(), 1.0).unwrap();
            assert_abs_diff_eq!(r.gamma2.unwrap(), gamma2, epsilon = 1e-12);
            assert_abs_diff_eq!(r.beta1, 1.0, epsilon = 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Network::random_bounded_degree(20, 4, 0.5, &mut rng);
        let sys = lim_system(net, 0.2, 0.3);
        let r = recover_linear_in_means(&trace_estimands(&sys).unwrap(), 0.3).unwrap();
        assert_abs_diff_eq!(r.gamma2.unwrap(), 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(r.beta1, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn recovery_degenerate_cases() {
        let sys = lim_system(Network::cycle(5), 0.0, 1.0);
        let tr = trace_estimands(&sys).unwrap();
        assert_eq!(tr.tau_y, 0.0);
        assert_eq!(recover_linear_in_means(&tr, 1.0).unwrap().gamma2, Some(0.0));

        let sys = lim_system(Network::edgeless(3, false), 0.3, 2.0);
        let tr = trace_estimands(&sys).unwrap();
        let r = recover_linear_in_means(&tr, 2.0).unwrap();
        assert_eq!(r.gamma2, None);
        assert_abs_diff_eq!(r.beta1, tr.tau_dir / 2.0, epsilon = 1e-15);

        let bad = TraceEstimands {
            tau_y: 1.0,
            tau_ly: 0.0,
            tau_dir: 1.0,
            tau_ly0: 0.5,
        };
        assert!(recover_linear_in_means(&bad, 1.0).is_err());
    }

    #[test]
    fn transformed_outcome_powers() {
        let net = Network::path(3);
        assert_eq!(transformed_outcome(&net, &[1.0, 2.0, 3.0], 0), vec![1.0, 2.0, 3.0]);
        assert_eq!(transformed_outcome(&net, &[1.0, 2.0, 3.0], 1), vec![2.0, 4.0, 2.0]);
        assert_eq!(transformed_outcome(&net, &[1.0, 2.0, 3.0], 2), vec![4.0, 4.0, 4.0]);
    }

    #[test]
    fn homogeneous_derivatives_give_constant_ratio() {
        let net = Network::cycle(6);
        let derivs = UnitDerivatives {
            h_t: vec![0.3; 6],
            h_d: vec![1.2; 6],
        };
        for setting in [LateSetting::NeighborSum, LateSetting::PathOrder { s: 1 }] {
            let lw = late_weights(&net, &derivs, &setting, None).unwrap();
            assert_abs_diff_eq!(lw.ratio, 0.3, epsilon = 1e-12);
        }
        let lw = late_weights(&net, &derivs, &LateSetting::PathOrder { s: 2 }, None).unwrap();
        assert_abs_diff_eq!(lw.ratio, 0.09, epsilon = 1e-12);
    }

    #[test]
    fn path_order_one_is_neighbor_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = Network::random_bounded_degree(9, 3, 0.6, &mut rng);
        let derivs = UnitDerivatives {
            h_t: (0..9).map(|_| rng.gen_range(0.0..0.3)).collect(),
            h_d: (0..9).map(|_| rng.gen_range(0.5..1.5)).collect(),
        };
        let a = late_weights(&net, &derivs, &LateSetting::NeighborSum, None).unwrap();
        let b = late_weights(&net, &derivs, &LateSetting::PathOrder { s: 1 }, None).unwrap();
        assert_abs_diff_eq!(a.ratio, b.ratio, epsilon = 1e-12);
        assert_abs_diff_eq!(a.weighted_average, b.weighted_average, epsilon = 1e-12);
    }

    #[test]
    fn smooth_model_late_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            let net = Network::random_bounded_degree(10, 3, 0.7, &mut rng);
            let mut model = SmoothModel::random_complementarity(&net, &mut rng);
            model.spillover = 0.0;
            let om = OutcomeModel::new(net.clone(), ModelKind::Smooth(model)).unwrap();
            let d: Vec<f64> = (0..10).map(|_| f64::from(rng.gen_range(0u8..2))).collect();
            let (derivs, t_y) = UnitDerivatives::from_model(&om, &d).unwrap();
            let lw = late_weights(&net, &derivs, &LateSetting::Exposure, Some(&t_y)).unwrap();
            assert!(lw.weights.iter().all(|&a| a >= 0.0));
            assert_abs_diff_eq!(lw.ratio, lw.weighted_average, epsilon = 1e-10);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn decomposition_identity(seed in any::<u64>(), n in 2usize..40, g in 0.0f64..0.2) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = Network::random_bounded_degree(n, 4, 0.5, &mut rng);
            let dec = total_effect_decomposition(&lim_system(net, g, 1.0)).unwrap();
            prop_assert!(dec.residual.abs() <= 1e-10);
        }

        #[test]
        fn late_identity_and_sign(seed in any::<u64>(), n in 3usize..12, s in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = Network::random_bounded_degree(n, 3, 0.7, &mut rng);
            prop_assume!(net.max_degree() > 0);
            let derivs = UnitDerivatives {
                h_t: (0..n).map(|_| rng.gen_range(0.0..0.3)).collect(),
                h_d: (0..n).map(|_| rng.gen_range(0.2..1.5)).collect(),
            };
            let setting = LateSetting::PathOrder { s };
            match late_weights(&net, &derivs, &setting, None) {
                Ok(lw) => {
                    prop_assert!(lw.weights.iter().all(|&a| a >= 0.0));
                    prop_assert!((lw.ratio - lw.weighted_average).abs() <= 1e-10 * lw.ratio.abs().max(1.0));
                }
                Err(CoaError::Undefined(_)) => {}
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
        }
    }
}
