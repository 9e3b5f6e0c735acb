//! Partition priors (distance-dependent and Dirichlet-multinomial finite
//! mixture) and the prior on cluster coefficients.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use crate::poisson::ln_gamma;

use crate::error::{Error, Result};
use crate::graph::{ddp_weights, shortest_path_matrix, Network, WeightMatrix};
use crate::model::ClusterParams;

/// Cluster labels for `N` nodes, some possibly unallocated.
///
/// Built with [`PartitionState::from_labels`] and updated with `remove` and
/// `assign`, the occupied labels always form the contiguous range `0..k`.
/// A fixed-slot state from [`PartitionState::with_components`] may instead
/// hold empty slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionState {
    labels: Vec<Option<usize>>,
    sizes: Vec<usize>,
}

impl PartitionState {
    pub fn unallocated(nodes: usize) -> Self {
        PartitionState {
            labels: vec![None; nodes],
            sizes: Vec::new(),
        }
    }

    /// Builds a canonical state from arbitrary labels. Labels are renumbered
    /// in order of first appearance.
    pub fn from_labels(labels: &[usize]) -> Self {
        let canonical = canonical_labels(labels);
        let k = canonical.iter().max().map_or(0, |m| m + 1);
        let mut sizes = vec![0; k];
        for &l in &canonical {
            sizes[l] += 1;
        }
        PartitionState {
            labels: canonical.into_iter().map(Some).collect(),
            sizes,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }

    /// Number of occupied clusters, `K`.
    pub fn n_clusters(&self) -> usize {
        self.sizes.len()
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels[i]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn is_complete(&self) -> bool {
        self.labels.iter().all(Option::is_some)
    }

    /// Labels of a fully allocated state.
    pub fn labels(&self) -> Vec<usize> {
        self.labels
            .iter()
            .map(|l| l.expect("every node is allocated"))
            .collect()
    }

    /// Unallocates node `i`. When that empties its cluster the cluster is
    /// deleted, higher labels shift down, and the deleted label is returned.
    pub fn remove(&mut self, i: usize) -> Option<usize> {
        let label = self.labels[i].take()?;
        self.sizes[label] -= 1;
        if self.sizes[label] > 0 {
            return None;
        }
        self.sizes.remove(label);
        for l in self.labels.iter_mut().flatten() {
            if *l > label {
                *l -= 1;
            }
        }
        Some(label)
    }

    /// Fixed-slot allocation for a finite mixture: `components` slots, some
    /// possibly empty. Labels are kept as given.
    pub fn with_components(labels: &[usize], components: usize) -> Self {
        let mut sizes = vec![0; components];
        for &l in labels {
            sizes[l] += 1;
        }
        PartitionState {
            labels: labels.iter().copied().map(Some).collect(),
            sizes,
        }
    }

    /// Unallocates node `i` without deleting its slot if it empties.
    pub fn unassign(&mut self, i: usize) -> Option<usize> {
        let label = self.labels[i].take()?;
        self.sizes[label] -= 1;
        Some(label)
    }

    pub fn raw_labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    /// Allocates node `i` to `label`; `label == n_clusters()` opens a new
    /// cluster.
    pub fn assign(&mut self, i: usize, label: usize) {
        debug_assert!(self.labels[i].is_none());
        assert!(label <= self.sizes.len(), "label {label} skips past a new cluster");
        if label == self.sizes.len() {
            self.sizes.push(0);
        }
        self.sizes[label] += 1;
        self.labels[i] = Some(label);
    }
}

/// Renumbers labels by first appearance, so `[4, 4, 1, 7]` becomes
/// `[0, 0, 1, 2]`.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

/// Hyperparameters of the distance-dependent prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdpHyper {
    /// New-cluster mass.
    pub alpha: f64,
    /// Distance decay.
    pub h: f64,
}

impl DdpHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.h.is_finite() && self.h >= 0.0) {
            return Err(Error::config(format!("h must be >= 0, got {}", self.h)));
        }
        Ok(())
    }
}

/// Prior over partitions used by the sampler.
#[derive(Debug, Clone, PartialEq)]
pub enum PartitionPrior {
    /// Distance-dependent co-clustering prior with row-normalized weights.
    Ddp { alpha: f64, weights: WeightMatrix },
    /// Finite mixture with `components` slots and a symmetric
    /// Dirichlet(`gamma0`) prior on the proportions, collapsed.
    Fmm { components: usize, gamma0: f64 },
}

impl PartitionPrior {
    /// Distance-dependent prior built from hop distances on `net`.
    pub fn ddp(net: &Network, hyper: DdpHyper) -> Result<Self> {
        hyper.validate()?;
        let weights = ddp_weights(&shortest_path_matrix(net), hyper.h)?;
        Ok(PartitionPrior::Ddp {
            alpha: hyper.alpha,
            weights,
        })
    }

    pub fn fmm(components: usize, gamma0: f64) -> Result<Self> {
        if components == 0 {
            return Err(Error::config("a finite mixture needs at least one component"));
        }
        if !(gamma0.is_finite() && gamma0 > 0.0) {
            return Err(Error::config(format!("gamma0 must be > 0, got {gamma0}")));
        }
        Ok(PartitionPrior::Fmm { components, gamma0 })
    }

    /// Log-probability of a complete labelling under sequential allocation
    /// in ascending node order (distance-dependent prior) or under the
    /// Dirichlet-multinomial (finite mixture, labels are component indices).
    pub fn log_prob(&self, labels: &[usize]) -> f64 {
        match self {
            PartitionPrior::Ddp { alpha, weights } => {
                let canonical = canonical_labels(labels);
                let mut state = PartitionState::unallocated(labels.len());
                let mut total = 0.0;
                for (i, &l) in canonical.iter().enumerate() {
                    let probs = ddp_conditional(i, &state, weights, *alpha);
                    total += probs[l].ln();
                    state.assign(i, l);
                }
                total
            }
            PartitionPrior::Fmm { components, gamma0 } => {
                let k = *components as f64;
                let mut counts = vec![0usize; *components];
                for &l in labels {
                    counts[l] += 1;
                }
                ln_gamma(k * gamma0) - ln_gamma(labels.len() as f64 + k * gamma0)
                    + counts
                        .iter()
                        .map(|&c| ln_gamma(c as f64 + gamma0) - ln_gamma(*gamma0))
                        .sum::<f64>()
            }
        }
    }
}

/// Allocation probabilities for node `i` given the other allocated nodes in
/// `state` (node `i` itself must be unallocated).
///
/// Entry `k < K` is proportional to the summed weights `w_ij` of the members
/// of cluster `k`; the final entry, a new cluster, is proportional to
/// `alpha`.
pub fn ddp_conditional(i: usize, state: &PartitionState, weights: &WeightMatrix, alpha: f64) -> Vec<f64> {
    debug_assert!(state.label(i).is_none(), "node {i} must be removed first");
    let k = state.n_clusters();
    let mut probs = vec![0.0; k + 1];
    let row = weights.row(i);
    for (j, &w) in row.iter().enumerate() {
        if j != i {
            if let Some(l) = state.label(j) {
                probs[l] += w;
            }
        }
    }
    probs[k] = alpha;
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    probs
}

/// Collapsed Dirichlet-multinomial allocation probabilities for node `i`
/// over `components` slots, proportional to `n_k + gamma0` where `n_k`
/// counts the other allocated nodes in slot `k`.
pub fn fmm_conditional(i: usize, labels: &[Option<usize>], components: usize, gamma0: f64) -> Vec<f64> {
    let mut probs = vec![gamma0; components];
    for (j, l) in labels.iter().enumerate() {
        if j != i {
            if let Some(l) = l {
                probs[*l] += 1.0;
            }
        }
    }
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    probs
}

/// Prior on each cluster's coefficient triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientPrior {
    /// Independent Gamma(shape, rate) on each coordinate.
    Gamma { shape: f64, rate: f64 },
    /// Uniform over a finite set of coefficient triples.
    Atoms { atoms: Vec<ClusterParams> },
}

impl Default for CoefficientPrior {
    fn default() -> Self {
        CoefficientPrior::Gamma { shape: 1.0, rate: 1.0 }
    }
}

impl CoefficientPrior {
    pub fn gamma(shape: f64, rate: f64) -> Result<Self> {
        let prior = CoefficientPrior::Gamma { shape, rate };
        prior.validate()?;
        Ok(prior)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CoefficientPrior::Gamma { shape, rate } => {
                if !(shape.is_finite() && *shape > 0.0 && rate.is_finite() && *rate > 0.0) {
                    return Err(Error::config(format!(
                        "gamma prior needs shape > 0 and rate > 0, got ({shape}, {rate})"
                    )));
                }
            }
            CoefficientPrior::Atoms { atoms } => {
                if atoms.is_empty() || atoms.iter().any(|a| !a.is_valid()) {
                    return Err(Error::config("atom prior needs at least one valid triple"));
                }
            }
        }
        Ok(())
    }

    pub fn log_pdf(&self, theta: &ClusterParams) -> f64 {
        match self {
            CoefficientPrior::Gamma { shape, rate } => coeff_prior_logpdf(theta, *shape, *rate),
            CoefficientPrior::Atoms { atoms } => {
                let hits = atoms.iter().filter(|a| *a == theta).count();
                if hits == 0 {
                    f64::NEG_INFINITY
                } else {
                    (hits as f64 / atoms.len() as f64).ln()
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ClusterParams {
        match self {
            CoefficientPrior::Gamma { shape, rate } => coeff_prior_sample(*shape, *rate, rng),
            CoefficientPrior::Atoms { atoms } => atoms[rng.random_range(0..atoms.len())],
        }
    }
}

/// Sum of independent Gamma(shape, rate) log-densities over the three
/// coordinates; negative infinity off the open positive orthant.
pub fn coeff_prior_logpdf(theta: &ClusterParams, shape: f64, rate: f64) -> f64 {
    if theta.0.iter().any(|c| !(*c > 0.0)) {
        return f64::NEG_INFINITY;
    }
    let norm = shape * rate.ln() - ln_gamma(shape);
    theta
        .0
        .iter()
        .map(|c| norm + (shape - 1.0) * c.ln() - rate * c)
        .sum()
}

/// Three independent Gamma(shape, rate) draws.
pub fn coeff_prior_sample<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> ClusterParams {
    let dist = Gamma::new(shape, 1.0 / rate).expect("validated gamma parameters");
    ClusterParams([dist.sample(rng), dist.sample(rng), dist.sample(rng)])
}
