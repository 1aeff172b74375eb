use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assigndesign::{CounterfactualMode, Design, ExposureKind, ExposureSpec, TwoStage};
use crate::coa::{EstimandRequest, Positivity};
use crate::error::{CoaError, Result};
use crate::netgraph::Network;
use crate::outcomes::{ExposureResponse, LinearInMeansParams, ModelKind, OutcomeModel, SmoothModel};

pub const SCHEMA_VERSION: u32 = 1;

/// Enumeration is limited to `2^ENUMERATION_UNIT_CAP` assignments.
pub const ENUMERATION_UNIT_CAP: usize = 14;

const NETWORK_STREAM: u64 = 0x6e65_7477;
const MODEL_STREAM: u64 = 0x6d6f_6465;
const DESIGN_STREAM: u64 = 0x6465_7369;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for stream `index` under `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix(mix(master) ^ index)
}

pub(crate) fn stream_rng(master: u64, stream: u64, n: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(master, stream), n as u64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkSpec {
    Edgeless { n: usize },
    Path { n: usize },
    Cycle { n: usize },
    Complete { n: usize },
    /// Each unit linked to its `k/2` nearest neighbors on either side.
    Ring { n: usize, k: usize },
    ErdosRenyi { n: usize, p: f64 },
    BoundedDegree { n: usize, max_degree: usize, edge_prob: f64 },
    /// Supplied separately as an edge list.
    EdgeList { n: usize, #[serde(default)] directed: bool },
}

impl NetworkSpec {
    pub fn n(&self) -> usize {
        match *self {
            NetworkSpec::Edgeless { n }
            | NetworkSpec::Path { n }
            | NetworkSpec::Cycle { n }
            | NetworkSpec::Complete { n }
            | NetworkSpec::Ring { n, .. }
            | NetworkSpec::ErdosRenyi { n, .. }
            | NetworkSpec::BoundedDegree { n, .. }
            | NetworkSpec::EdgeList { n, .. } => n,
        }
    }

    /// The same family at a different size.
    pub fn resized(&self, size: usize) -> Result<Self> {
        let mut spec = self.clone();
        match &mut spec {
            NetworkSpec::Edgeless { n }
            | NetworkSpec::Path { n }
            | NetworkSpec::Cycle { n }
            | NetworkSpec::Complete { n }
            | NetworkSpec::Ring { n, .. }
            | NetworkSpec::ErdosRenyi { n, .. }
            | NetworkSpec::BoundedDegree { n, .. } => *n = size,
            NetworkSpec::EdgeList { .. } => {
                return Err(CoaError::config("network.kind", "an edge list cannot be resized"))
            }
        }
        Ok(spec)
    }

    pub fn build<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Network> {
        Ok(match *self {
            NetworkSpec::Edgeless { n } => Network::edgeless(n, false),
            NetworkSpec::Path { n } => Network::path(n),
            NetworkSpec::Cycle { n } => Network::cycle(n),
            NetworkSpec::Complete { n } => Network::complete(n),
            NetworkSpec::Ring { n, k } => {
                if k % 2 == 1 || k >= n {
                    return Err(CoaError::config("network.k", format!("need an even degree below n, got {k}")));
                }
                Network::ring_lattice(n, k)
            }
            NetworkSpec::ErdosRenyi { n, p } => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(CoaError::config("network.p", format!("{p} is outside [0,1]")));
                }
                Network::erdos_renyi(n, p, rng)
            }
            NetworkSpec::BoundedDegree {
                n,
                max_degree,
                edge_prob,
            } => {
                if !(0.0..=1.0).contains(&edge_prob) {
                    return Err(CoaError::config("network.edge_prob", format!("{edge_prob} is outside [0,1]")));
                }
                Network::random_bounded_degree(n, max_degree, edge_prob, rng)
            }
            NetworkSpec::EdgeList { .. } => {
                return Err(CoaError::config("network", "an edge-list network needs an edge file"))
            }
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// All potential outcomes zero.
    #[default]
    Zero,
    /// `Y_i(0) = U_i`, `Y_i(1) = U_i + effect`.
    Sutva {
        effect: f64,
        #[serde(default)]
        shock_scale: f64,
    },
    Exposure {
        exposure: ExposureKind,
        response: ExposureResponse,
        #[serde(default)]
        shock_scale: f64,
    },
    LinearInMeans {
        params: LinearInMeansParams,
        #[serde(default)]
        shock_scale: f64,
    },
    PatientZero {
        #[serde(default)]
        injection: usize,
        /// Probability that treatment blocks transmission through a unit.
        effective_prob: f64,
    },
    /// Heterogeneous strategic complements drawn at random.
    Complementarity {
        #[serde(default)]
        exogenous_spillover: bool,
    },
}

impl ModelSpec {
    pub fn build<R: Rng + ?Sized>(&self, net: &Network, rng: &mut R) -> Result<OutcomeModel> {
        let n = net.n();
        match self {
            ModelSpec::Zero => OutcomeModel::sutva(net.clone(), vec![0.0; n], vec![0.0; n]),
            ModelSpec::Sutva { effect, shock_scale } => {
                let y0 = uniform_shocks(rng, n, *shock_scale);
                let y1 = y0.iter().map(|u| u + effect).collect();
                OutcomeModel::sutva(net.clone(), y0, y1)
            }
            ModelSpec::Exposure {
                exposure,
                response,
                shock_scale,
            } => OutcomeModel::exposure(net.clone(), *exposure, *response, uniform_shocks(rng, n, *shock_scale)),
            ModelSpec::LinearInMeans { params, shock_scale } => {
                OutcomeModel::linear_in_means(net.clone(), *params, uniform_shocks(rng, n, *shock_scale))
            }
            ModelSpec::PatientZero {
                injection,
                effective_prob,
            } => {
                if !(0.0..=1.0).contains(effective_prob) {
                    return Err(CoaError::config("model.effective_prob", "must lie in [0,1]"));
                }
                let effective = (0..n).map(|_| u8::from(rng.gen_bool(*effective_prob))).collect();
                OutcomeModel::patient_zero(net.clone(), *injection, effective)
            }
            ModelSpec::Complementarity { exogenous_spillover } => {
                let mut m = SmoothModel::random_complementarity(net, rng);
                if !exogenous_spillover {
                    m.spillover = 0.0;
                }
                OutcomeModel::new(net.clone(), ModelKind::Smooth(m))
            }
        }
    }
}

fn uniform_shocks<R: Rng + ?Sized>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| if scale > 0.0 { rng.gen_range(-scale..scale) } else { 0.0 })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DesignSpec {
    Bernoulli { p: f64 },
    /// Saturation design; references are listed or drawn at random.
    TwoStage {
        #[serde(default)]
        reference_units: Option<Vec<usize>>,
        #[serde(default)]
        reference_count: Option<usize>,
        saturations: Vec<f64>,
        weights: Vec<f64>,
        #[serde(default)]
        fallback_p: Option<f64>,
    },
}

impl DesignSpec {
    pub fn build<R: Rng + ?Sized>(&self, net: &Network, rng: &mut R) -> Result<Design> {
        match self {
            DesignSpec::Bernoulli { p } => Design::bernoulli(net.n(), *p),
            DesignSpec::TwoStage {
                reference_units,
                reference_count,
                saturations,
                weights,
                fallback_p,
            } => {
                let ts = match (reference_units, reference_count) {
                    (Some(refs), None) => {
                        TwoStage::new(net, refs.clone(), saturations.clone(), weights.clone(), *fallback_p)?
                    }
                    (None, Some(k)) => TwoStage::with_random_references(
                        net,
                        *k,
                        saturations.clone(),
                        weights.clone(),
                        *fallback_p,
                        rng,
                    )?,
                    _ => {
                        return Err(CoaError::config(
                            "design.reference_units",
                            "give exactly one of reference_units and reference_count",
                        ))
                    }
                };
                Ok(Design::TwoStage(ts))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceSpec {
    pub alpha: f64,
    pub rho: f64,
    /// Outcome bound for the fallback coupling.
    pub bound: Option<f64>,
    /// Compute `σ̂` and intervals when two levels are requested.
    pub enabled: bool,
}

impl Default for InferenceSpec {
    fn default() -> Self {
        InferenceSpec {
            alpha: 0.05,
            rho: 0.5,
            bound: None,
            enabled: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Enumerate,
    #[default]
    MonteCarlo,
    Sweep,
}

/// Which estimator a sweep tracks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorSpec {
    /// `V̂(t) − V*(t | D)` at the first level.
    #[default]
    Coa,
    /// IPW estimate of the mean outcome under Bernoulli(`p`) with
    /// exposure-level shift weights, against its exact value.
    PolicyShift { p: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    pub network: NetworkSpec,
    /// Only simulation paths read the model; estimation from data ignores it.
    #[serde(default)]
    pub model: ModelSpec,
    pub design: DesignSpec,
    pub exposure: ExposureKind,
    #[serde(default)]
    pub counterfactual: CounterfactualMode,
    /// One level, or `[t₁, t₀]` for a contrast.
    pub levels: Vec<f64>,
    #[serde(default)]
    pub inference: InferenceSpec,
    #[serde(default)]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: RunMode,
    #[serde(default)]
    pub sizes: Vec<usize>,
    #[serde(default)]
    pub positivity: Positivity,
    #[serde(default)]
    pub estimator: EstimatorSpec,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let message = e.inner().to_string();
            CoaError::Config {
                field: field_path(&e.path().to_string(), &message),
                message,
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(CoaError::config(
                "schema",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema),
            ));
        }
        if self.levels.is_empty() || self.levels.len() > 2 {
            return Err(CoaError::config("levels", "give one level or a pair [t1, t0]"));
        }
        if !(self.inference.alpha > 0.0 && self.inference.alpha < 1.0) {
            return Err(CoaError::config("inference.alpha", "must lie in (0,1)"));
        }
        if !(self.inference.rho > 0.0 && self.inference.rho <= 0.5) {
            return Err(CoaError::config("inference.rho", "must lie in (0, 1/2]"));
        }
        if self.mode == RunMode::Enumerate && self.network.n() > ENUMERATION_UNIT_CAP {
            return Err(CoaError::config(
                "network.n",
                format!("enumeration supports at most {ENUMERATION_UNIT_CAP} units"),
            ));
        }
        if self.mode == RunMode::Sweep && self.sizes.is_empty() {
            return Err(CoaError::config("sizes", "a sweep needs at least one size"));
        }
        Ok(())
    }
}

impl RunConfig {
    pub fn build_network(&self, size: Option<usize>, edges: Option<Network>) -> Result<Network> {
        let spec = match size {
            Some(n) => self.network.resized(n)?,
            None => self.network.clone(),
        };
        match (&spec, edges) {
            (NetworkSpec::EdgeList { n, .. }, Some(net)) if net.n() != *n => {
                Err(CoaError::config("network.n", format!("edge list has {} units", net.n())))
            }
            (NetworkSpec::EdgeList { .. }, Some(net)) => Ok(net),
            (_, _) => spec.build(&mut stream_rng(self.seed, NETWORK_STREAM, spec.n())),
        }
    }

    pub fn build_design(&self, net: &Network) -> Result<Design> {
        self.design.build(net, &mut stream_rng(self.seed, DESIGN_STREAM, net.n()))
    }
}

/// Dotted path of the offending field, extended by a missing field's name.
fn field_path(path: &str, message: &str) -> String {
    let missing = message
        .strip_prefix("missing field `")
        .and_then(|rest| rest.split('`').next());
    match (path, missing) {
        (".", Some(name)) => name.to_string(),
        (".", None) => "config".to_string(),
        (p, Some(name)) => format!("{p}.{name}"),
        (p, None) => p.to_string(),
    }
}

/// Network, outcome model and design instantiated from a config.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub net: Network,
    pub model: OutcomeModel,
    pub design: Design,
}

impl Scenario {
    /// Builds at the configured size, or at `size` for sweeps. `edges`
    /// supplies an edge-list network.
    pub fn build(cfg: &RunConfig, size: Option<usize>, edges: Option<Network>) -> Result<Self> {
        let net = cfg.build_network(size, edges)?;
        let model = cfg.model.build(&net, &mut stream_rng(cfg.seed, MODEL_STREAM, net.n()))?;
        let design = cfg.build_design(&net)?;
        Ok(Scenario { net, model, design })
    }

    pub fn n(&self) -> usize {
        self.net.n()
    }

    pub fn request<'a>(&'a self, cfg: &RunConfig) -> EstimandRequest<'a> {
        EstimandRequest {
            spec: ExposureSpec::new(cfg.exposure, &self.net),
            mode: cfg.counterfactual.clone(),
            levels: cfg.levels.clone(),
            mask: None,
            positivity: cfg.positivity,
        }
    }
}
