use std::collections::VecDeque;

use crate::error::{CoaError, Result};
use crate::netgraph::Network;

/// Single injection point; unit `i` is infected iff a chain of units with
/// `W_j D_j = 0` links it to the injection point.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientZero {
    pub injection: usize,
    pub effective: Vec<u8>,
    /// `spreads_to[j]` lists units `i` with `L_ij = 1`.
    spreads_to: Vec<Vec<usize>>,
}

impl PatientZero {
    pub fn new(net: &Network, injection: usize, effective: Vec<u8>) -> Result<Self> {
        if injection >= net.n() {
            return Err(CoaError::InvalidInput(format!(
                "injection unit {injection} out of range"
            )));
        }
        let mut spreads_to = vec![Vec::new(); net.n()];
        for i in 0..net.n() {
            for &j in net.neighbors(i) {
                spreads_to[j].push(i);
            }
        }
        Ok(PatientZero {
            injection,
            effective,
            spreads_to,
        })
    }

    pub fn evaluate(&self, net: &Network, d: &[u8]) -> Vec<f64> {
        let n = net.n();
        let open = |j: usize| self.effective[j] * d[j] == 0;
        let mut y = vec![0.0; n];
        if !open(self.injection) {
            return y;
        }
        y[self.injection] = 1.0;
        let mut queue = VecDeque::from([self.injection]);
        while let Some(j) = queue.pop_front() {
            for &i in &self.spreads_to[j] {
                if y[i] == 0.0 && open(i) {
                    y[i] = 1.0;
                    queue.push_back(i);
                }
            }
        }
        y
    }
}

/// Binary coordination game: unit `i` plays 1 iff
/// `α_i + βD_i + γT_i > 0`, with `T_i` the share of neighbors playing 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdGame {
    pub alpha: Vec<f64>,
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdEquilibria {
    pub all: Vec<Vec<u8>>,
    pub largest: Vec<u8>,
}

/// Exhaustive equilibrium search limit.
pub const EXHAUSTIVE_GAME_CAP: usize = 20;

impl ThresholdGame {
    fn best_response(&self, net: &Network, d: &[u8], y: &[u8], i: usize) -> u8 {
        let deg = net.degree(i);
        let share = if deg == 0 {
            0.0
        } else {
            net.neighbors(i).iter().filter(|&&j| y[j] == 1).count() as f64 / deg as f64
        };
        u8::from(self.alpha[i] + self.beta * f64::from(d[i]) + self.gamma * share > 0.0)
    }

    pub fn is_equilibrium(&self, net: &Network, d: &[u8], y: &[u8]) -> bool {
        (0..y.len()).all(|i| self.best_response(net, d, y, i) == y[i])
    }

    /// Simultaneous best responses from the all-ones profile; decreasing
    /// under complementarity, so the limit is the largest equilibrium.
    pub fn largest_profile(&self, net: &Network, d: &[u8]) -> Result<Vec<u8>> {
        if self.gamma < 0.0 {
            return Err(CoaError::InvalidInput(
                "largest-equilibrium selection needs γ ≥ 0".into(),
            ));
        }
        let mut y = vec![1u8; net.n()];
        loop {
            let next: Vec<u8> = (0..y.len()).map(|i| self.best_response(net, d, &y, i)).collect();
            if next == y {
                return Ok(y);
            }
            y = next;
        }
    }

    pub fn largest_equilibrium(&self, net: &Network, d: &[u8]) -> Result<Vec<f64>> {
        Ok(self
            .largest_profile(net, d)?
            .into_iter()
            .map(f64::from)
            .collect())
    }

    /// Every pure equilibrium by checking all `2ⁿ` profiles.
    pub fn enumerate(&self, net: &Network, d: &[u8]) -> Result<ThresholdEquilibria> {
        let n = net.n();
        if n > EXHAUSTIVE_GAME_CAP {
            return Err(CoaError::EnumerationCap {
                what: "game profiles",
                size: n,
                cap: EXHAUSTIVE_GAME_CAP,
            });
        }
        let all: Vec<Vec<u8>> = crate::assigndesign::all_assignments(n)
            .filter(|y| self.is_equilibrium(net, d, y))
            .collect();
        let largest = self.largest_profile(net, d)?;
        Ok(ThresholdEquilibria { all, largest })
    }
}

/// The two-type smoking game on the complete graph: `n_a` type-A units
/// (`α = 1.2`) followed by `n_f` type-F units (`α = −0.5`), `β = −1`, `γ = 1`.
pub fn smoking_game(n_a: usize, n_f: usize) -> (Network, ThresholdGame) {
    let alpha = std::iter::repeat_n(1.2, n_a)
        .chain(std::iter::repeat_n(-0.5, n_f))
        .collect();
    (
        Network::complete(n_a + n_f),
        ThresholdGame {
            alpha,
            beta: -1.0,
            gamma: 1.0,
        },
    )
}
