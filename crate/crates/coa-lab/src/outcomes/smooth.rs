use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::solver::{solve_fixed_point, EquilibriumSolution, Jacobian, SolverOptions};
use super::{LinearInMeansParams, FD_STEP};
use crate::error::{CoaError, Result};
use crate::netgraph::Network;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeerAggregate {
    /// `T_i(Y) = Σ_j L_ij Y_j`
    Sum,
    /// `T_i(Y) = Σ_j L_ij Y_j / deg_i`
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeerResponse {
    Linear,
    Tanh,
}

/// Equilibrium model
/// `h_i(D, Y) = a_i + b_i D_i + γ₁(LD)_i + c_i g(T_i(Y))`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothModel {
    pub intercept: Vec<f64>,
    pub direct: Vec<f64>,
    pub spillover: f64,
    pub peer: Vec<f64>,
    pub aggregate: PeerAggregate,
    pub response: PeerResponse,
    /// Use closed-form derivatives; otherwise central differences.
    pub analytic: bool,
    pub y_init: Vec<f64>,
    pub options: SolverOptions,
}

impl SmoothModel {
    pub fn from_linear_in_means(params: &LinearInMeansParams, shocks: &[f64]) -> Self {
        let n = shocks.len();
        SmoothModel {
            intercept: shocks.iter().map(|u| params.beta0 + u).collect(),
            direct: vec![params.beta1; n],
            spillover: params.gamma1,
            peer: vec![params.gamma2; n],
            aggregate: PeerAggregate::Sum,
            response: PeerResponse::Linear,
            analytic: true,
            y_init: vec![0.0; n],
            options: SolverOptions::default(),
        }
    }

    /// Heterogeneous strategic-complements model with nonnegative derivatives.
    pub fn random_complementarity<R: Rng + ?Sized>(net: &Network, rng: &mut R) -> Self {
        let n = net.n();
        SmoothModel {
            intercept: (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            direct: (0..n).map(|_| rng.gen_range(0.2..1.5)).collect(),
            spillover: rng.gen_range(0.0..0.3),
            peer: (0..n).map(|_| rng.gen_range(0.1..0.8)).collect(),
            aggregate: PeerAggregate::Mean,
            response: PeerResponse::Tanh,
            analytic: true,
            y_init: vec![0.0; n],
            options: SolverOptions::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.intercept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intercept.is_empty()
    }

    fn kappa(&self, net: &Network, i: usize) -> f64 {
        match self.aggregate {
            PeerAggregate::Sum => 1.0,
            PeerAggregate::Mean => match net.degree(i) {
                0 => 0.0,
                k => 1.0 / k as f64,
            },
        }
    }

    fn g(&self, x: f64) -> f64 {
        match self.response {
            PeerResponse::Linear => x,
            PeerResponse::Tanh => x.tanh(),
        }
    }

    fn g_prime(&self, x: f64) -> f64 {
        match self.response {
            PeerResponse::Linear => 1.0,
            PeerResponse::Tanh => 1.0 - x.tanh().powi(2),
        }
    }

    /// `T_i(Y)` for every unit.
    pub fn peer_exposure(&self, net: &Network, y: &[f64]) -> Vec<f64> {
        net.apply(y)
            .into_iter()
            .enumerate()
            .map(|(i, s)| s * self.kappa(net, i))
            .collect()
    }

    fn h_unit(&self, net: &Network, d: &[f64], y: &[f64], i: usize) -> f64 {
        let ld: f64 = net.neighbors(i).iter().map(|&j| d[j]).sum();
        let t: f64 = net.neighbors(i).iter().map(|&j| y[j]).sum::<f64>() * self.kappa(net, i);
        self.intercept[i] + self.direct[i] * d[i] + self.spillover * ld + self.peer[i] * self.g(t)
    }

    pub fn h(&self, net: &Network, d: &[f64], y: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|i| self.h_unit(net, d, y, i)).collect()
    }

    /// `(H_Y, H_D)`; entries outside the link pattern are exactly zero.
    pub fn jacobians(&self, net: &Network, d: &[f64], y: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.len();
        let mut hy = DMatrix::zeros(n, n);
        let mut hd = DMatrix::zeros(n, n);
        if self.analytic {
            let t = self.peer_exposure(net, y);
            for i in 0..n {
                let k = self.kappa(net, i);
                let slope = self.peer[i] * self.g_prime(t[i]) * k;
                hd[(i, i)] = self.direct[i];
                for &j in net.neighbors(i) {
                    hy[(i, j)] = slope;
                    hd[(i, j)] = self.spillover;
                }
            }
        } else {
            let mut yy = y.to_vec();
            let mut dd = d.to_vec();
            for i in 0..n {
                for &j in net.neighbors(i) {
                    hy[(i, j)] = central(&mut yy, j, |v| self.h_unit(net, d, v, i));
                }
                for j in std::iter::once(i).chain(net.neighbors(i).iter().copied()) {
                    hd[(i, j)] = central(&mut dd, j, |v| self.h_unit(net, v, y, i));
                }
            }
        }
        (hy, hd)
    }

    pub fn solve(
        &self,
        net: &Network,
        d: &[f64],
        y_init: &[f64],
        opts: &SolverOptions,
    ) -> Result<EquilibriumSolution> {
        if y_init.len() != self.len() || d.len() != self.len() {
            return Err(CoaError::InvalidInput("dimension mismatch in solve".into()));
        }
        let jac = |y: &[f64]| self.jacobians(net, d, y).0;
        let jac_ref: Option<Jacobian<'_>> = if self.analytic { Some(&jac) } else { None };
        solve_fixed_point(|y| self.h(net, d, y), jac_ref, y_init, opts)
    }

    pub fn evaluate(&self, net: &Network, d: &[f64]) -> Result<EquilibriumSolution> {
        self.solve(net, d, &self.y_init, &self.options)
    }
}

fn central(x: &mut [f64], j: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
    let x0 = x[j];
    x[j] = x0 + FD_STEP;
    let up = f(x);
    x[j] = x0 - FD_STEP;
    let down = f(x);
    x[j] = x0;
    (up - down) / (2.0 * FD_STEP)
}
