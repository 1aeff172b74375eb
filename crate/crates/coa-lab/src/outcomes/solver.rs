use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CoaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Iterations without a halving of the residual before a Newton step.
    pub stall_window: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            damping: 0.5,
            tol: 1e-10,
            max_iter: 10_000,
            stall_window: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumSolution {
    pub y: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// `max_i |Y_i − h_i(Y)|`
    pub residual: f64,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Jacobian `∂h/∂Y` at a point.
pub type Jacobian<'a> = &'a dyn Fn(&[f64]) -> DMatrix<f64>;

/// Solves `Y = h(Y)` by damped iteration from `y_init`.
///
/// `jacobian`, when given, returns `∂h/∂Y`; it is used for Newton steps
/// once the damped iteration stops making progress.
pub fn solve_fixed_point<H>(
    h: H,
    jacobian: Option<Jacobian<'_>>,
    y_init: &[f64],
    opts: &SolverOptions,
) -> Result<EquilibriumSolution>
where
    H: Fn(&[f64]) -> Vec<f64>,
{
    let lambda = opts.damping;
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(CoaError::InvalidInput(format!("damping {lambda} outside (0,1]")));
    }
    let mut y = y_init.to_vec();
    let mut best = f64::INFINITY;
    let mut since_progress = 0usize;
    let mut first = None;
    for it in 0..=opts.max_iter {
        let hy = h(&y);
        let step: Vec<f64> = hy.iter().zip(&y).map(|(a, b)| a - b).collect();
        let residual = max_abs(&step);
        if !residual.is_finite() || residual > 1e12 * (1.0 + *first.get_or_insert(residual)) {
            return Err(CoaError::NonConvergence {
                iterations: it,
                residual,
            });
        }
        if residual <= opts.tol {
            return Ok(EquilibriumSolution {
                y,
                converged: true,
                iterations: it,
                residual,
            });
        }
        if it == opts.max_iter {
            return Err(CoaError::NonConvergence {
                iterations: it,
                residual,
            });
        }
        if residual < 0.5 * best {
            best = residual;
            since_progress = 0;
        } else {
            since_progress += 1;
        }
        match jacobian {
            Some(jac) if since_progress >= opts.stall_window => {
                let n = y.len();
                let a = DMatrix::identity(n, n) - jac(&y);
                let delta = a
                    .lu()
                    .solve(&DVector::from_vec(step))
                    .ok_or_else(|| CoaError::Singular("I − H_Y at Newton step".into()))?;
                y.iter_mut().zip(delta.iter()).for_each(|(yi, di)| *yi += di);
                since_progress = 0;
                best = f64::INFINITY;
            }
            _ => {
                y.iter_mut()
                    .zip(&step)
                    .for_each(|(yi, si)| *yi += lambda * si);
            }
        }
    }
    unreachable!("loop returns on its final iteration")
}
