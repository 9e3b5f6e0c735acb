//! Network structure, breadth-first hop distances and the distance-decay
//! co-clustering weights used by the distance-dependent partition prior.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Undirected, unweighted graph over the series' nodes, with an optional
/// population covariate per node.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    node_ids: Vec<String>,
    adjacency: Vec<bool>,
    neighbors: Vec<Vec<usize>>,
    population: Option<Vec<f64>>,
}

impl Network {
    /// Builds a network from node labels and an undirected edge list given as
    /// index pairs. Duplicate edges (in either orientation) are merged.
    pub fn new(
        node_ids: Vec<String>,
        edges: &[(usize, usize)],
        population: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = node_ids.len();
        if n == 0 {
            return Err(Error::data("network must have at least one node"));
        }
        let mut adjacency = vec![false; n * n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::data(format!(
                    "edge ({a}, {b}) references a node outside 0..{n}"
                )));
            }
            if a == b {
                return Err(Error::data(format!(
                    "self-loop on node {:?} is not allowed",
                    node_ids[a]
                )));
            }
            adjacency[a * n + b] = true;
            adjacency[b * n + a] = true;
        }
        Self::from_adjacency(node_ids, adjacency, population)
    }

    /// Builds a network from a dense row-major `n x n` adjacency matrix.
    pub fn from_adjacency(
        node_ids: Vec<String>,
        adjacency: Vec<bool>,
        population: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = node_ids.len();
        if n == 0 {
            return Err(Error::data("network must have at least one node"));
        }
        if adjacency.len() != n * n {
            return Err(Error::data(format!(
                "adjacency has {} entries, expected {}",
                adjacency.len(),
                n * n
            )));
        }
        for i in 0..n {
            if adjacency[i * n + i] {
                return Err(Error::data(format!("self-loop on node {:?}", node_ids[i])));
            }
            for j in (i + 1)..n {
                if adjacency[i * n + j] != adjacency[j * n + i] {
                    return Err(Error::data("adjacency matrix is not symmetric"));
                }
            }
        }
        if let Some(pop) = &population {
            if pop.len() != n {
                return Err(Error::data(format!(
                    "population has {} entries for {n} nodes",
                    pop.len()
                )));
            }
            if let Some((i, p)) = pop.iter().enumerate().find(|(_, p)| !(p.is_finite() && **p > 0.0)) {
                return Err(Error::data(format!(
                    "population of node {:?} must be positive, got {p}",
                    node_ids[i]
                )));
            }
        }
        let neighbors = (0..n)
            .map(|i| (0..n).filter(|&j| adjacency[i * n + j]).collect())
            .collect();
        Ok(Network {
            node_ids,
            adjacency,
            neighbors,
            population,
        })
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn is_adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.len() + j]
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn population(&self) -> Option<&[f64]> {
        self.population.as_deref()
    }

    /// Returns a copy with the population covariate replaced.
    pub fn with_population(self, population: Option<Vec<f64>>) -> Result<Self> {
        Self::from_adjacency(self.node_ids, self.adjacency, population)
    }

    /// Relabels nodes so that new node `k` is old node `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.len();
        if perm.len() != n {
            return Err(Error::data("permutation length differs from node count"));
        }
        let mut adjacency = vec![false; n * n];
        for a in 0..n {
            for b in 0..n {
                adjacency[a * n + b] = self.is_adjacent(perm[a], perm[b]);
            }
        }
        let ids = perm.iter().map(|&p| self.node_ids[p].clone()).collect();
        let pop = self
            .population
            .as_ref()
            .map(|p| perm.iter().map(|&k| p[k]).collect());
        Self::from_adjacency(ids, adjacency, pop)
    }
}

/// All-pairs hop counts. `None` marks an unreachable pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceMatrix {
    n: usize,
    hops: Vec<Option<u32>>,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Hop count between `i` and `j`, or `None` when disconnected.
    pub fn hops(&self, i: usize, j: usize) -> Option<u32> {
        self.hops[i * self.n + j]
    }

    /// Distance as a real number, `f64::INFINITY` when disconnected.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.hops(i, j).map_or(f64::INFINITY, f64::from)
    }
}

/// Unweighted shortest-path hop counts between every pair of nodes, one
/// breadth-first search per source.
pub fn shortest_path_matrix(net: &Network) -> DistanceMatrix {
    let n = net.len();
    let mut hops = vec![None; n * n];
    let mut queue = VecDeque::with_capacity(n);
    for source in 0..n {
        let row = &mut hops[source * n..(source + 1) * n];
        row[source] = Some(0);
        queue.clear();
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            let du = row[u].expect("queued nodes have a distance");
            for &v in net.neighbors(u) {
                if row[v].is_none() {
                    row[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
    }
    DistanceMatrix { n, hops }
}

/// Dense square matrix of co-clustering weights. Rows are normalized; the
/// matrix is generally not symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    n: usize,
    values: Vec<f64>,
}

impl WeightMatrix {
    /// Wraps a row-major `n x n` matrix. The diagonal is forced to zero.
    pub fn from_rows(n: usize, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::data(format!(
                "weight matrix has {} entries, expected {}",
                values.len(),
                n * n
            )));
        }
        if values.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::data("weights must be finite and nonnegative"));
        }
        for i in 0..n {
            values[i * n + i] = 0.0;
        }
        Ok(WeightMatrix { n, values })
    }

    /// All off-diagonal weights equal to one: the Dirichlet-process case.
    pub fn uniform(n: usize) -> Self {
        let mut values = vec![1.0; n * n];
        for i in 0..n {
            values[i * n + i] = 0.0;
        }
        WeightMatrix { n, values }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }
}

/// Distance-decay weights `exp(-h * d_ij)`, each row rescaled so its
/// off-diagonal entries sum to `N - 1`.
///
/// Disconnected pairs get weight zero when `h > 0`. With `h = 0` every
/// off-diagonal weight is exactly one, whatever the distances.
pub fn ddp_weights(d: &DistanceMatrix, h: f64) -> Result<WeightMatrix> {
    if !(h.is_finite() && h >= 0.0) {
        return Err(Error::config(format!("distance decay h must be >= 0, got {h}")));
    }
    let n = d.len();
    if n == 0 {
        return Err(Error::data("distance matrix is empty"));
    }
    if h == 0.0 {
        return Ok(WeightMatrix::uniform(n));
    }
    let target = (n - 1) as f64;
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        let row = &mut values[i * n..(i + 1) * n];
        for (j, w) in row.iter_mut().enumerate() {
            if j != i {
                if let Some(hops) = d.hops(i, j) {
                    *w = (-h * f64::from(hops)).exp();
                }
            }
        }
        let total: f64 = row.iter().sum();
        if n > 1 {
            if total <= 0.0 {
                return Err(Error::data(format!(
                    "node {i} is disconnected from every other node; its co-clustering weights cannot be rescaled"
                )));
            }
            let scale = target / total;
            row.iter_mut().for_each(|w| *w *= scale);
        }
    }
    Ok(WeightMatrix { n, values })
}
