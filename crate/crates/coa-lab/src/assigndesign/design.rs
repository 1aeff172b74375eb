use rand::seq::index::sample as sample_indices;
use rand::Rng;

use crate::error::{CoaError, Result};
use crate::netgraph::Network;

/// Largest number of saturation profiles summed over in one two-stage block.
pub const SATURATION_PROFILE_CAP: usize = 1 << 20;

/// Binary assignment vector.
pub type Assignment = Vec<u8>;

/// Randomization distribution over binary assignments.
#[derive(Debug, Clone, PartialEq)]
pub enum Design {
    Bernoulli(Bernoulli),
    TwoStage(TwoStage),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bernoulli {
    n: usize,
    p: f64,
}

impl Bernoulli {
    pub fn new(n: usize, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(CoaError::config("design.p", format!("{p} is outside [0,1]")));
        }
        Ok(Bernoulli { n, p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }
}

/// Saturation design: each reference neighborhood receives a treatment
/// probability drawn from `F`, and a unit's probability is the average over
/// the reference neighborhoods containing it.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStage {
    n: usize,
    saturations: Vec<f64>,
    weights: Vec<f64>,
    reference_units: Vec<usize>,
    neighborhoods: Vec<Vec<usize>>,
    covering: Vec<Vec<usize>>,
    fallback_p: f64,
    block_of_ref: Vec<usize>,
    blocks: Vec<Block>,
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    refs: Vec<usize>,
    units: Vec<usize>,
}

impl TwoStage {
    /// `saturations[k]` has probability `weights[k]` under `F`. Units outside
    /// every reference neighborhood are treated with `fallback_p`, which
    /// defaults to the mean saturation.
    pub fn new(
        net: &Network,
        reference_units: Vec<usize>,
        saturations: Vec<f64>,
        weights: Vec<f64>,
        fallback_p: Option<f64>,
    ) -> Result<Self> {
        let n = net.n();
        if saturations.is_empty() || saturations.len() != weights.len() {
            return Err(CoaError::config(
                "design.saturations",
                "need matching, nonempty saturation and probability lists",
            ));
        }
        if saturations.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(CoaError::config("design.saturations", "values must lie in [0,1]"));
        }
        if weights.iter().any(|w| *w < 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(CoaError::config(
                "design.probs",
                "saturation probabilities must be nonnegative and sum to 1",
            ));
        }
        let mut seen = vec![false; n];
        for &r in &reference_units {
            if r >= n || std::mem::replace(&mut seen[r], true) {
                return Err(CoaError::config(
                    "design.reference_units",
                    format!("unit {r} is out of range or repeated"),
                ));
            }
        }
        let mean_saturation: f64 = saturations.iter().zip(&weights).map(|(s, w)| s * w).sum();
        let fallback_p = fallback_p.unwrap_or(mean_saturation);
        if !(0.0..=1.0).contains(&fallback_p) {
            return Err(CoaError::config("design.fallback_p", "must lie in [0,1]"));
        }

        let neighborhoods: Vec<Vec<usize>> = reference_units
            .iter()
            .map(|&r| net.neighbors(r).to_vec())
            .collect();
        let mut covering = vec![Vec::new(); n];
        for (k, hood) in neighborhoods.iter().enumerate() {
            for &j in hood {
                covering[j].push(k);
            }
        }

        // Blocks: connected components of the unit/reference incidence graph.
        let kcount = reference_units.len();
        let mut parent: Vec<usize> = (0..kcount).collect();
        fn find(parent: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while parent[r] != r {
                r = parent[r];
            }
            let mut c = x;
            while parent[c] != r {
                let next = parent[c];
                parent[c] = r;
                c = next;
            }
            r
        }
        for refs in &covering {
            for w in refs.windows(2) {
                let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
                parent[a] = b;
            }
        }
        let mut block_of_ref = vec![usize::MAX; kcount];
        let mut blocks: Vec<Block> = Vec::new();
        for k in 0..kcount {
            let root = find(&mut parent, k);
            if block_of_ref[root] == usize::MAX {
                block_of_ref[root] = blocks.len();
                blocks.push(Block {
                    refs: Vec::new(),
                    units: Vec::new(),
                });
            }
            block_of_ref[k] = block_of_ref[root];
            blocks[block_of_ref[k]].refs.push(k);
        }
        for (j, refs) in covering.iter().enumerate() {
            if let Some(&k) = refs.first() {
                blocks[block_of_ref[k]].units.push(j);
            }
        }
        for b in &blocks {
            let profiles = saturations.len().checked_pow(b.refs.len() as u32);
            if profiles.is_none_or(|p| p > SATURATION_PROFILE_CAP) {
                return Err(CoaError::EnumerationCap {
                    what: "saturation profiles in a reference block",
                    size: profiles.unwrap_or(usize::MAX),
                    cap: SATURATION_PROFILE_CAP,
                });
            }
        }

        Ok(TwoStage {
            n,
            saturations,
            weights,
            reference_units,
            neighborhoods,
            covering,
            fallback_p,
            block_of_ref,
            blocks,
        })
    }

    /// Picks `k` reference units uniformly without replacement.
    pub fn with_random_references<R: Rng + ?Sized>(
        net: &Network,
        k: usize,
        saturations: Vec<f64>,
        weights: Vec<f64>,
        fallback_p: Option<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        if k > net.n() {
            return Err(CoaError::config(
                "design.k",
                format!("{k} reference units requested from {} units", net.n()),
            ));
        }
        let mut refs = sample_indices(rng, net.n(), k).into_vec();
        refs.sort_unstable();
        TwoStage::new(net, refs, saturations, weights, fallback_p)
    }

    pub fn reference_units(&self) -> &[usize] {
        &self.reference_units
    }

    pub fn reference_neighborhood(&self, k: usize) -> &[usize] {
        &self.neighborhoods[k]
    }

    pub fn fallback_p(&self) -> f64 {
        self.fallback_p
    }

    /// Blended probability `p̃_j` for a saturation profile over all references.
    fn blended(&self, j: usize, profile: &[f64]) -> f64 {
        let refs = &self.covering[j];
        if refs.is_empty() {
            self.fallback_p
        } else {
            refs.iter().map(|&k| profile[k]).sum::<f64>() / refs.len() as f64
        }
    }

    /// Σ over saturation profiles of the block of `F(profile)·Π_j P(d_j)`
    /// for the units whose value `value(j)` is known.
    fn block_mass(&self, block: usize, value: &dyn Fn(usize) -> Option<u8>) -> f64 {
        let b = &self.blocks[block];
        let known: Vec<(usize, u8)> = b
            .units
            .iter()
            .filter_map(|&j| value(j).map(|v| (j, v)))
            .collect();
        if known.is_empty() {
            return 1.0;
        }
        let m = self.saturations.len();
        let kb = b.refs.len();
        let mut profile = vec![0.0; self.reference_units.len()];
        let mut digits = vec![0usize; kb];
        let mut total = 0.0;
        loop {
            let mut w = 1.0;
            for (slot, &k) in b.refs.iter().enumerate() {
                profile[k] = self.saturations[digits[slot]];
                w *= self.weights[digits[slot]];
            }
            if w > 0.0 {
                for &(j, v) in &known {
                    let p = self.blended(j, &profile);
                    w *= if v == 1 { p } else { 1.0 - p };
                    if w == 0.0 {
                        break;
                    }
                }
                total += w;
            }
            let mut pos = 0;
            loop {
                if pos == kb {
                    return total;
                }
                digits[pos] += 1;
                if digits[pos] < m {
                    break;
                }
                digits[pos] = 0;
                pos += 1;
            }
        }
    }

    fn blocks_touching(&self, units: &[usize]) -> Vec<usize> {
        let mut out: Vec<usize> = units
            .iter()
            .filter_map(|&j| self.covering[j].first().map(|&k| self.block_of_ref[k]))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

impl Design {
    pub fn bernoulli(n: usize, p: f64) -> Result<Self> {
        Bernoulli::new(n, p).map(Design::Bernoulli)
    }

    pub fn n(&self) -> usize {
        match self {
            Design::Bernoulli(b) => b.n,
            Design::TwoStage(t) => t.n,
        }
    }

    /// True when unit assignments are mutually independent.
    pub fn is_independent(&self) -> bool {
        matches!(self, Design::Bernoulli(_))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Assignment {
        match self {
            Design::Bernoulli(b) => (0..b.n).map(|_| draw(rng, b.p)).collect(),
            Design::TwoStage(t) => {
                let profile: Vec<f64> = (0..t.reference_units.len())
                    .map(|_| {
                        let u: f64 = rng.gen();
                        let mut acc = 0.0;
                        for (s, w) in t.saturations.iter().zip(&t.weights) {
                            acc += w;
                            if u < acc {
                                return *s;
                            }
                        }
                        *t.saturations.last().expect("nonempty support")
                    })
                    .collect();
                (0..t.n).map(|j| draw(rng, t.blended(j, &profile))).collect()
            }
        }
    }

    /// `π₀(d)` for a full assignment.
    pub fn pmf(&self, d: &[u8]) -> f64 {
        match self {
            Design::Bernoulli(b) => d.iter().map(|&v| bern(b.p, v)).product(),
            Design::TwoStage(t) => {
                let uncovered: f64 = (0..t.n)
                    .filter(|&j| t.covering[j].is_empty())
                    .map(|j| bern(t.fallback_p, d[j]))
                    .product();
                (0..t.blocks.len())
                    .map(|b| t.block_mass(b, &|j| Some(d[j])))
                    .product::<f64>()
                    * uncovered
            }
        }
    }

    /// `π₀(d_S = local | D_{-S})` where `d` supplies the complement.
    /// Bit `k` of `local` is the value for `subset[k]`.
    pub fn conditional_pmf(&self, subset: &[usize], local: u64, d: &[u8]) -> f64 {
        match self {
            Design::Bernoulli(b) => bernoulli_pattern(b.p, subset.len(), local),
            Design::TwoStage(t) => {
                let pos = |j: usize| subset.iter().position(|&s| s == j);
                let mut prob = 1.0;
                for (k, &j) in subset.iter().enumerate() {
                    if t.covering[j].is_empty() {
                        prob *= bern(t.fallback_p, bit(local, k));
                    }
                }
                for b in t.blocks_touching(subset) {
                    let joint = t.block_mass(b, &|j| {
                        Some(pos(j).map_or(d[j], |k| bit(local, k)))
                    });
                    let rest = t.block_mass(b, &|j| if pos(j).is_some() { None } else { Some(d[j]) });
                    prob *= if rest > 0.0 { joint / rest } else { 0.0 };
                }
                prob
            }
        }
    }

    /// Marginal `π₀(d_S = local)`.
    pub fn marginal_pmf(&self, subset: &[usize], local: u64) -> f64 {
        match self {
            Design::Bernoulli(b) => bernoulli_pattern(b.p, subset.len(), local),
            Design::TwoStage(t) => {
                let pos = |j: usize| subset.iter().position(|&s| s == j);
                let mut prob = 1.0;
                for (k, &j) in subset.iter().enumerate() {
                    if t.covering[j].is_empty() {
                        prob *= bern(t.fallback_p, bit(local, k));
                    }
                }
                for b in t.blocks_touching(subset) {
                    prob *= t.block_mass(b, &|j| pos(j).map(|k| bit(local, k)));
                }
                prob
            }
        }
    }

    /// Units whose assignments are not independent of `D` on `domain`:
    /// the domain itself plus every reference neighborhood overlapping it.
    pub fn dependency_set(&self, domain: &[usize]) -> Vec<usize> {
        let mut out = domain.to_vec();
        if let Design::TwoStage(t) = self {
            for &j in domain {
                for &k in &t.covering[j] {
                    out.extend_from_slice(&t.neighborhoods[k]);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

fn draw<R: Rng + ?Sized>(rng: &mut R, p: f64) -> u8 {
    u8::from(rng.gen::<f64>() < p)
}

fn bern(p: f64, v: u8) -> f64 {
    if v == 1 {
        p
    } else {
        1.0 - p
    }
}

fn bernoulli_pattern(p: f64, len: usize, local: u64) -> f64 {
    let ones = (local & mask(len)).count_ones() as i32;
    p.powi(ones) * (1.0 - p).powi(len as i32 - ones)
}

pub(crate) fn mask(len: usize) -> u64 {
    if len >= 64 {
        u64::MAX
    } else {
        (1u64 << len) - 1
    }
}

pub(crate) fn bit(pattern: u64, k: usize) -> u8 {
    ((pattern >> k) & 1) as u8
}

/// Reads `d` on `subset` into a bit pattern.
pub fn local_pattern(subset: &[usize], d: &[u8]) -> u64 {
    subset
        .iter()
        .enumerate()
        .fold(0, |acc, (k, &j)| acc | (u64::from(d[j] & 1) << k))
}

/// Writes `pattern` onto `subset` of `d`.
pub fn set_pattern(d: &mut [u8], subset: &[usize], pattern: u64) {
    for (k, &j) in subset.iter().enumerate() {
        d[j] = bit(pattern, k);
    }
}

/// All binary vectors of length `n`, indexed by their bit pattern.
pub fn all_assignments(n: usize) -> impl Iterator<Item = Assignment> {
    (0u64..1 << n).map(move |m| (0..n).map(|k| bit(m, k)).collect())
}
