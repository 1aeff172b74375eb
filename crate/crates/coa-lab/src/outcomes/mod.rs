//! Potential-outcome mappings `D ↦ Y(D)` with fixed unobservables.

mod games;
mod smooth;
mod solver;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::assigndesign::{ExposureKind, ExposureSpec};
use crate::error::{CoaError, Result};
use crate::netgraph::Network;

pub use games::{smoking_game, EXHAUSTIVE_GAME_CAP, PatientZero, ThresholdEquilibria, ThresholdGame};
pub use smooth::{PeerAggregate, PeerResponse, SmoothModel};
pub use solver::{solve_fixed_point, EquilibriumSolution, Jacobian, SolverOptions};

/// Finite-difference step for black-box Jacobians.
pub const FD_STEP: f64 = 1e-6;

/// `Y_i = y0_i + (y1_i − y0_i)·D_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sutva {
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
}

/// `Y_i = base + direct·D_i + spillover·T_i + interaction·D_i·T_i + U_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExposureResponse {
    pub base: f64,
    pub direct: f64,
    pub spillover: f64,
    #[serde(default)]
    pub interaction: f64,
}

impl ExposureResponse {
    pub fn eval(&self, d: f64, t: f64, u: f64) -> f64 {
        self.base + self.direct * d + self.spillover * t + self.interaction * d * t + u
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExposureModel {
    pub kind: ExposureKind,
    pub response: ExposureResponse,
    pub shocks: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearInMeansParams {
    pub beta0: f64,
    pub beta1: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

/// Linear-in-means reduced form `Y = G(β₀1 + U) + G(β₁I + γ₁L)D`,
/// `G = (I − γ₂L)⁻¹`, with both pieces precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearInMeans {
    pub params: LinearInMeansParams,
    pub shocks: Vec<f64>,
    intercept: DVector<f64>,
    response: DMatrix<f64>,
}

impl LinearInMeans {
    pub fn new(net: &Network, params: LinearInMeansParams, shocks: Vec<f64>) -> Result<Self> {
        let n = net.n();
        if shocks.len() != n {
            return Err(CoaError::InvalidInput(format!(
                "{} shocks for {n} units",
                shocks.len()
            )));
        }
        let l = net.adjacency();
        let a = DMatrix::identity(n, n) - &l * params.gamma2;
        let lu = a.lu();
        let g = lu
            .try_inverse()
            .ok_or_else(|| CoaError::Singular(format!("I − γ₂L with γ₂ = {}", params.gamma2)))?;
        let rhs = DVector::from_iterator(n, shocks.iter().map(|u| params.beta0 + u));
        let intercept = &g * rhs;
        let response = &g * (DMatrix::identity(n, n) * params.beta1 + &l * params.gamma1);
        Ok(LinearInMeans {
            params,
            shocks,
            intercept,
            response,
        })
    }

    /// `∂Y/∂D = (I − γ₂L)⁻¹(β₁I + γ₁L)`.
    pub fn response_matrix(&self) -> &DMatrix<f64> {
        &self.response
    }

    pub fn evaluate(&self, d: &[f64]) -> Vec<f64> {
        let y = &self.intercept + &self.response * DVector::from_column_slice(d);
        y.iter().copied().collect()
    }
}

/// The closed form of the linear-in-means model as a direct linear solve.
pub fn evaluate_linear_in_means(
    params: &LinearInMeansParams,
    shocks: &[f64],
    net: &Network,
    d: &[f64],
) -> Result<Vec<f64>> {
    let n = net.n();
    let l = net.adjacency();
    let a = DMatrix::identity(n, n) - &l * params.gamma2;
    let dv = DVector::from_column_slice(d);
    let rhs = DVector::from_iterator(n, shocks.iter().map(|u| params.beta0 + u))
        + &dv * params.beta1
        + (&l * &dv) * params.gamma1;
    a.lu()
        .solve(&rhs)
        .map(|y| y.iter().copied().collect())
        .ok_or_else(|| CoaError::Singular(format!("I − γ₂L with γ₂ = {}", params.gamma2)))
}

/// `Y_i = h̃(D_i, T_i(D), U_i)`; undefined exposures enter as 0.
pub fn evaluate_exposure_model<H>(h: H, shocks: &[f64], spec: &ExposureSpec<'_>, d: &[u8]) -> Vec<f64>
where
    H: Fn(f64, f64, f64) -> f64,
{
    (0..d.len())
        .map(|i| h(f64::from(d[i]), spec.value(d, i).unwrap_or(0.0), shocks[i]))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    Sutva(Sutva),
    Exposure(ExposureModel),
    LinearInMeans(LinearInMeans),
    Smooth(SmoothModel),
    PatientZero(PatientZero),
    Threshold(ThresholdGame),
}

/// A potential-outcome mapping bound to its network.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeModel {
    net: Network,
    kind: ModelKind,
    bound: Option<f64>,
}

impl OutcomeModel {
    pub fn new(net: Network, kind: ModelKind) -> Result<Self> {
        let n = net.n();
        let len_ok = match &kind {
            ModelKind::Sutva(s) => s.y0.len() == n && s.y1.len() == n,
            ModelKind::Exposure(e) => e.shocks.len() == n,
            ModelKind::LinearInMeans(l) => l.shocks.len() == n,
            ModelKind::Smooth(s) => s.len() == n,
            ModelKind::PatientZero(p) => p.effective.len() == n && p.injection < n,
            ModelKind::Threshold(g) => g.alpha.len() == n,
        };
        if !len_ok {
            return Err(CoaError::InvalidInput(format!(
                "model parameters do not match {n} units"
            )));
        }
        Ok(OutcomeModel {
            net,
            kind,
            bound: None,
        })
    }

    pub fn with_bound(mut self, bound: f64) -> Self {
        self.bound = Some(bound);
        self
    }

    pub fn sutva(net: Network, y0: Vec<f64>, y1: Vec<f64>) -> Result<Self> {
        OutcomeModel::new(net, ModelKind::Sutva(Sutva { y0, y1 }))
    }

    pub fn exposure(
        net: Network,
        kind: ExposureKind,
        response: ExposureResponse,
        shocks: Vec<f64>,
    ) -> Result<Self> {
        OutcomeModel::new(
            net,
            ModelKind::Exposure(ExposureModel {
                kind,
                response,
                shocks,
            }),
        )
    }

    pub fn linear_in_means(net: Network, params: LinearInMeansParams, shocks: Vec<f64>) -> Result<Self> {
        let lim = LinearInMeans::new(&net, params, shocks)?;
        OutcomeModel::new(net, ModelKind::LinearInMeans(lim))
    }

    pub fn patient_zero(net: Network, injection: usize, effective: Vec<u8>) -> Result<Self> {
        let pz = PatientZero::new(&net, injection, effective)?;
        OutcomeModel::new(net, ModelKind::PatientZero(pz))
    }

    pub fn net(&self) -> &Network {
        &self.net
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn n(&self) -> usize {
        self.net.n()
    }

    pub fn bound(&self) -> Option<f64> {
        self.bound
    }

    /// Whether the model accepts only 0/1 assignments.
    pub fn binary_only(&self) -> bool {
        matches!(
            self.kind,
            ModelKind::PatientZero(_) | ModelKind::Threshold(_) | ModelKind::Exposure(_)
        )
    }

    /// `Y(D)` for a real-valued assignment.
    pub fn evaluate(&self, d: &[f64]) -> Result<Vec<f64>> {
        if d.len() != self.n() {
            return Err(CoaError::InvalidInput(format!(
                "assignment has {} entries for {} units",
                d.len(),
                self.n()
            )));
        }
        if self.binary_only() && d.iter().any(|&x| x != 0.0 && x != 1.0) {
            return Err(CoaError::InvalidInput("model requires a binary assignment".into()));
        }
        let bits = || d.iter().map(|&x| x as u8).collect::<Vec<u8>>();
        let y = match &self.kind {
            ModelKind::Sutva(s) => (0..d.len())
                .map(|i| s.y0[i] + (s.y1[i] - s.y0[i]) * d[i])
                .collect(),
            ModelKind::Exposure(e) => {
                let spec = ExposureSpec::new(e.kind, &self.net);
                evaluate_exposure_model(|a, b, c| e.response.eval(a, b, c), &e.shocks, &spec, &bits())
            }
            ModelKind::LinearInMeans(l) => l.evaluate(d),
            ModelKind::Smooth(s) => s.evaluate(&self.net, d)?.y,
            ModelKind::PatientZero(p) => p.evaluate(&self.net, &bits()),
            ModelKind::Threshold(g) => g.largest_equilibrium(&self.net, &bits())?,
        };
        Ok(y)
    }

    pub fn evaluate_binary(&self, d: &[u8]) -> Result<Vec<f64>> {
        let real: Vec<f64> = d.iter().map(|&v| f64::from(v)).collect();
        self.evaluate(&real)
    }

    /// `Y_i` after replacing `D` on `domain` by `local`, given `y = Y(D)`.
    pub fn unit_counterfactual(
        &self,
        i: usize,
        d: &[u8],
        y: &[f64],
        domain: &[usize],
        local: u64,
    ) -> Result<f64> {
        let changed: Vec<(usize, u8)> = domain
            .iter()
            .enumerate()
            .map(|(k, &j)| (j, ((local >> k) & 1) as u8))
            .filter(|&(j, v)| d[j] != v)
            .collect();
        if changed.is_empty() {
            return Ok(y[i]);
        }
        match &self.kind {
            ModelKind::Sutva(s) => {
                let di = changed
                    .iter()
                    .find(|(j, _)| *j == i)
                    .map_or(d[i], |&(_, v)| v);
                Ok(s.y0[i] + (s.y1[i] - s.y0[i]) * f64::from(di))
            }
            ModelKind::LinearInMeans(l) => Ok(y[i]
                + changed
                    .iter()
                    .map(|&(j, v)| l.response[(i, j)] * (f64::from(v) - f64::from(d[j])))
                    .sum::<f64>()),
            ModelKind::Exposure(e) => {
                let mut e_d = d.to_vec();
                changed.iter().for_each(|&(j, v)| e_d[j] = v);
                let spec = ExposureSpec::new(e.kind, &self.net);
                let t = spec.value(&e_d, i).unwrap_or(0.0);
                Ok(e.response.eval(f64::from(e_d[i]), t, e.shocks[i]))
            }
            _ => {
                let mut e_d = d.to_vec();
                changed.iter().for_each(|&(j, v)| e_d[j] = v);
                Ok(self.evaluate_binary(&e_d)?[i])
            }
        }
    }

    /// `(∂h/∂Y, ∂h/∂D)` at `(D, Y)`.
    pub fn jacobians(&self, d: &[f64], y: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let n = self.n();
        let l = self.net.adjacency();
        match &self.kind {
            ModelKind::Sutva(s) => Ok((
                DMatrix::zeros(n, n),
                DMatrix::from_diagonal(&DVector::from_iterator(
                    n,
                    (0..n).map(|i| s.y1[i] - s.y0[i]),
                )),
            )),
            ModelKind::LinearInMeans(m) => {
                let p = m.params;
                Ok((&l * p.gamma2, DMatrix::identity(n, n) * p.beta1 + &l * p.gamma1))
            }
            ModelKind::Exposure(e) => {
                let r = e.response;
                let mut hd = DMatrix::zeros(n, n);
                for i in 0..n {
                    let deg = self.net.degree(i);
                    let (t, dt): (f64, f64) = match e.kind {
                        ExposureKind::Own => (d[i], 1.0),
                        ExposureKind::Count => {
                            (self.net.neighbors(i).iter().map(|&j| d[j]).sum(), 1.0)
                        }
                        ExposureKind::Fraction if deg > 0 => (
                            self.net.neighbors(i).iter().map(|&j| d[j]).sum::<f64>() / deg as f64,
                            1.0 / deg as f64,
                        ),
                        ExposureKind::Fraction => (0.0, 0.0),
                        ExposureKind::Any => {
                            return Err(CoaError::InvalidInput(
                                "any-exposure responses are not differentiable".into(),
                            ))
                        }
                    };
                    let dy_dt = r.spillover + r.interaction * d[i];
                    hd[(i, i)] += r.direct + r.interaction * t;
                    match e.kind {
                        ExposureKind::Own => hd[(i, i)] += dy_dt * dt,
                        _ => {
                            for &j in self.net.neighbors(i) {
                                hd[(i, j)] += dy_dt * dt;
                            }
                        }
                    }
                }
                Ok((DMatrix::zeros(n, n), hd))
            }
            ModelKind::Smooth(s) => Ok(s.jacobians(&self.net, d, y)),
            ModelKind::PatientZero(_) | ModelKind::Threshold(_) => Err(CoaError::InvalidInput(
                "discrete models have no Jacobian".into(),
            )),
        }
    }

    /// Fixed point of a smooth model from `y_init`.
    pub fn solve_fixed_point(
        &self,
        d: &[f64],
        y_init: &[f64],
        opts: &SolverOptions,
    ) -> Result<EquilibriumSolution> {
        match &self.kind {
            ModelKind::Smooth(s) => s.solve(&self.net, d, y_init, opts),
            _ => Err(CoaError::InvalidInput(
                "fixed-point solving applies to smooth models".into(),
            )),
        }
    }

    /// Largest `|Y_i|` seen, checked against the asserted bound.
    pub fn check_bound(&self, y: &[f64]) -> Result<()> {
        if let Some(b) = self.bound {
            if let Some((i, v)) = y.iter().enumerate().find(|(_, v)| v.abs() > b) {
                return Err(CoaError::InvalidInput(format!(
                    "unit {i} outcome {v} exceeds bound {b}"
                )));
            }
        }
        Ok(())
    }
}

/// `(I − H_Y)⁻¹ t H_D Δ`.
pub fn linearized_response(
    h_y: &DMatrix<f64>,
    h_d: &DMatrix<f64>,
    delta: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    let n = h_y.nrows();
    let rhs = h_d * DVector::from_column_slice(delta) * t;
    (DMatrix::identity(n, n) - h_y)
        .lu()
        .solve(&rhs)
        .map(|v| v.iter().copied().collect())
        .ok_or_else(|| CoaError::Singular("I − H_Y".into()))
}
