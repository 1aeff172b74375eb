//! Interference networks: unweighted adjacency, path distances, components
//! and a power-iteration eigensolver.
//!
//! Row `i` of the adjacency lists the units whose assignments and outcomes
//! feed into unit `i`, i.e. `L_ij = 1` iff `j` is in `neighbors(i)`. An edge
//! record `src,dst` means `src` influences `dst`.

use std::collections::VecDeque;
use std::io::Read;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{CoaError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    directed: bool,
    neighbors: Vec<Vec<usize>>,
}

impl Network {
    pub fn edgeless(n: usize, directed: bool) -> Self {
        Network {
            directed,
            neighbors: vec![Vec::new(); n],
        }
    }

    /// Builds a network from `(src, dst)` pairs; duplicates collapse.
    pub fn from_edges<I>(n: usize, directed: bool, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut net = Network::edgeless(n, directed);
        for (src, dst) in edges {
            net.insert(src, dst)?;
        }
        for row in &mut net.neighbors {
            row.sort_unstable();
            row.dedup();
        }
        Ok(net)
    }

    fn insert(&mut self, src: usize, dst: usize) -> Result<()> {
        let n = self.n();
        if src >= n || dst >= n {
            return Err(CoaError::InvalidInput(format!(
                "edge ({src},{dst}) references a unit outside 0..{n}"
            )));
        }
        if src == dst {
            return Err(CoaError::InvalidInput(format!("self-loop on unit {src}")));
        }
        self.neighbors[dst].push(src);
        if !self.directed {
            self.neighbors[src].push(dst);
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    /// Units `j` with `L_ij = 1`, sorted.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn link(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    /// Number of nonzero adjacency entries.
    pub fn link_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    pub fn adjacency(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::zeros(n, n);
        for (i, row) in self.neighbors.iter().enumerate() {
            for &j in row {
                m[(i, j)] = 1.0;
            }
        }
        m
    }

    /// `(L x)_i = Σ_j L_ij x_j`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.neighbors
            .iter()
            .map(|row| row.iter().map(|&j| x[j]).sum())
            .collect()
    }

    pub fn path(n: usize) -> Self {
        Network::from_edges(n, false, (1..n).map(|i| (i - 1, i))).expect("valid path")
    }

    pub fn cycle(n: usize) -> Self {
        if n < 3 {
            return Network::path(n);
        }
        Network::from_edges(n, false, (0..n).map(|i| (i, (i + 1) % n))).expect("valid cycle")
    }

    pub fn complete(n: usize) -> Self {
        let edges = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)));
        Network::from_edges(n, false, edges).expect("valid complete graph")
    }

    /// Ring lattice where each unit links to the `k/2` nearest units on each side.
    pub fn ring_lattice(n: usize, k: usize) -> Self {
        let half = (k / 2).min(n.saturating_sub(1) / 2);
        let edges = (0..n).flat_map(|i| (1..=half).map(move |h| (i, (i + h) % n)));
        Network::from_edges(n, false, edges).expect("valid ring lattice")
    }

    pub fn erdos_renyi<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Self {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        Network::from_edges(n, false, edges).expect("valid random graph")
    }

    /// Random undirected graph with every degree at most `max_degree`:
    /// candidate pairs are visited in random order and kept while both
    /// endpoints have spare capacity.
    pub fn random_bounded_degree<R: Rng + ?Sized>(
        n: usize,
        max_degree: usize,
        edge_prob: f64,
        rng: &mut R,
    ) -> Self {
        use rand::seq::SliceRandom;
        let mut pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        pairs.shuffle(rng);
        let mut deg = vec![0usize; n];
        let mut edges = Vec::new();
        for (i, j) in pairs {
            if deg[i] < max_degree && deg[j] < max_degree && rng.gen::<f64>() < edge_prob {
                deg[i] += 1;
                deg[j] += 1;
                edges.push((i, j));
            }
        }
        Network::from_edges(n, false, edges).expect("valid bounded-degree graph")
    }

    /// Places `other` after `self`, relabelling its units by `self.n()`.
    pub fn disjoint_union(&self, other: &Network) -> Result<Self> {
        if self.directed != other.directed {
            return Err(CoaError::InvalidInput(
                "cannot join directed and undirected networks".into(),
            ));
        }
        let off = self.n();
        let mut neighbors = self.neighbors.clone();
        neighbors.extend(
            other
                .neighbors
                .iter()
                .map(|row| row.iter().map(|&j| j + off).collect()),
        );
        Ok(Network {
            directed: self.directed,
            neighbors,
        })
    }

    /// Breadth-first distances from `source` following `L_ij = 1` steps.
    pub fn distances_from(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n()];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].expect("queued units have distances");
            for &v in &self.neighbors[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn distance_matrix(&self) -> Vec<Vec<Option<usize>>> {
        (0..self.n()).map(|i| self.distances_from(i)).collect()
    }

    /// Largest finite distance between any ordered pair.
    pub fn diameter(&self) -> usize {
        self.distance_matrix()
            .iter()
            .flat_map(|row| row.iter().flatten().copied())
            .max()
            .unwrap_or(0)
    }

    pub fn path_distance_indicator(&self, s: usize) -> PathDistanceIndicators {
        PathDistanceIndicators::from_distances(s, &self.distance_matrix())
    }

    /// Component labels ignoring edge direction, numbered by first appearance.
    pub fn connected_components(&self) -> Vec<usize> {
        let n = self.n();
        let mut undirected: Vec<Vec<usize>> = self.neighbors.clone();
        if self.directed {
            for (i, row) in self.neighbors.iter().enumerate() {
                for &j in row {
                    undirected[j].push(i);
                }
            }
        }
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = next;
            let mut stack = vec![start];
            while let Some(u) = stack.pop() {
                for &v in &undirected[u] {
                    if label[v] == usize::MAX {
                        label[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        label
    }

    pub fn component_count(&self) -> usize {
        self.connected_components()
            .into_iter()
            .max()
            .map_or(0, |m| m + 1)
    }
}

/// Parses `src,dst` records with an optional header line and 0-based ids.
pub fn load_edge_list<R: Read>(reader: R, n: usize, directed: bool) -> Result<Network> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut edges = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| CoaError::Parse {
            line,
            message: e.to_string(),
        })?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        if record.len() != 2 {
            return Err(CoaError::Parse {
                line,
                message: format!("expected 2 fields, found {}", record.len()),
            });
        }
        let parsed = (record[0].parse::<usize>(), record[1].parse::<usize>());
        match parsed {
            (Ok(src), Ok(dst)) => {
                if src >= n || dst >= n {
                    return Err(CoaError::Parse {
                        line,
                        message: format!("unit id out of range 0..{n}"),
                    });
                }
                if src == dst {
                    return Err(CoaError::Parse {
                        line,
                        message: format!("self-loop on unit {src}"),
                    });
                }
                edges.push((src, dst));
            }
            _ if line == 1 && edges.is_empty() => {}
            _ => {
                return Err(CoaError::Parse {
                    line,
                    message: format!("malformed record {:?}", record.iter().collect::<Vec<_>>()),
                })
            }
        }
    }
    Network::from_edges(n, directed, edges)
}

/// `L̃_s`: pairs at shortest path length exactly `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathDistanceIndicators {
    pub s: usize,
    pub indicator: DMatrix<f64>,
}

impl PathDistanceIndicators {
    pub fn from_distances(s: usize, dist: &[Vec<Option<usize>>]) -> Self {
        let n = dist.len();
        let indicator =
            DMatrix::from_fn(n, n, |i, j| if dist[i][j] == Some(s) { 1.0 } else { 0.0 });
        PathDistanceIndicators { s, indicator }
    }

    pub fn is_zero(&self) -> bool {
        self.indicator.iter().all(|&x| x == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Eigenpair {
    pub value: f64,
    /// Right eigenvector, `M v = λ v`.
    pub right: Vec<f64>,
    /// Left eigenvector, `wᵀ M = λ wᵀ`.
    pub left: Vec<f64>,
    pub iterations: usize,
}

/// Dominant eigenpair by power iteration on `M` and `Mᵀ`.
///
/// Vectors are unit length with nonnegative first nonzero entry. When a
/// standard basis vector is itself an eigenvector for `λ₁` the lowest-index
/// one is reported.
pub fn leading_eigenpair(m: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<Eigenpair> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(CoaError::InvalidInput(
            "eigenpair needs a nonempty square matrix".into(),
        ));
    }
    let (value, right, it_r) = power_iterate(m, tol, max_iter)?;
    let mt = m.transpose();
    let (value_l, left, it_l) = power_iterate(&mt, tol, max_iter)?;
    if (value - value_l).abs() > tol.sqrt().max(1e-8) * value.abs().max(1.0) {
        return Err(CoaError::NonConvergence {
            iterations: it_r.max(it_l),
            residual: (value - value_l).abs(),
        });
    }
    Ok(Eigenpair {
        value,
        right: basis_tie_break(m, value, right, tol),
        left: basis_tie_break(&mt, value, left, tol),
        iterations: it_r.max(it_l),
    })
}

fn power_iterate(m: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<(f64, Vec<f64>, usize)> {
    let n = m.nrows();
    let mut x = nalgebra::DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let y = m * &x;
        let norm = y.norm();
        if norm == 0.0 {
            return Ok((0.0, canonical_sign(x.as_slice().to_vec()), it));
        }
        let next = y / norm;
        let lambda = next.dot(&(m * &next));
        residual = (m * &next - &next * lambda).norm();
        x = next;
        if residual <= tol {
            return Ok((lambda, canonical_sign(x.as_slice().to_vec()), it));
        }
    }
    Err(CoaError::NonConvergence {
        iterations: max_iter,
        residual,
    })
}

fn basis_tie_break(m: &DMatrix<f64>, lambda: f64, v: Vec<f64>, tol: f64) -> Vec<f64> {
    let n = m.nrows();
    (0..n)
        .find(|&k| {
            (0..n).all(|i| {
                let target = if i == k { lambda } else { 0.0 };
                (m[(i, k)] - target).abs() <= tol
            })
        })
        .map(|k| {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            e
        })
        .unwrap_or(v)
}

pub(crate) fn canonical_sign(mut v: Vec<f64>) -> Vec<f64> {
    if let Some(&first) = v.iter().find(|x| **x != 0.0) {
        if first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
    v
}
