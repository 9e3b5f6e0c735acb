//! Forward simulation of count series and prior partitions.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Network;
use crate::model::{conditional_mean, intercepts, ClusterParams, CountSeries, LagOperator, PredictorMode};
use crate::poisson;
use crate::prior::{ddp_conditional, fmm_conditional, PartitionPrior, PartitionState};

/// Simulated means above this trigger an explosive-path warning.
pub const EXPLOSIVE_RATE: f64 = 1e6;

#[derive(Debug, Clone)]
pub struct SimSpec {
    pub network: Network,
    /// Cluster label of each node.
    pub labels: Vec<usize>,
    /// Coefficients of each cluster, indexed by label.
    pub thetas: Vec<ClusterParams>,
    pub steps: usize,
    /// Counts at step 1; drawn from Poisson(theta_1 v_i) when absent.
    pub y_init: Option<Vec<u64>>,
    pub mode: PredictorMode,
    pub scale: Option<f64>,
    pub seed: u64,
}

impl SimSpec {
    fn validate(&self) -> Result<()> {
        let n = self.network.len();
        if self.labels.len() != n {
            return Err(Error::data(format!("{} labels for {n} nodes", self.labels.len())));
        }
        let k = self.labels.iter().max().map_or(0, |m| m + 1);
        if self.thetas.len() != k {
            return Err(Error::data(format!(
                "labels use {k} clusters but {} coefficient triples were given",
                self.thetas.len()
            )));
        }
        if let Some(t) = self.thetas.iter().find(|t| !t.is_valid()) {
            return Err(Error::data(format!("invalid coefficients {:?}", t.0)));
        }
        if self.steps < 2 {
            return Err(Error::config("simulation needs at least 2 time steps"));
        }
        if let Some(init) = &self.y_init {
            if init.len() != n {
                return Err(Error::data(format!("y_init has {} entries for {n} nodes", init.len())));
            }
        }
        Ok(())
    }
}

/// Simulates a count series from `spec`, deterministic in `spec.seed`.
pub fn simulate(spec: &SimSpec) -> Result<CountSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    simulate_with(spec, &mut rng)
}

/// As [`simulate`], drawing from a caller-supplied generator (the seed in
/// `spec` is ignored).
pub fn simulate_with<R: Rng + ?Sized>(spec: &SimSpec, rng: &mut R) -> Result<CountSeries> {
    spec.validate()?;
    let n = spec.network.len();
    let lag = LagOperator::for_network(&spec.network, spec.mode)?;
    let (v, _) = intercepts(&spec.network, spec.mode, spec.scale)?;
    let mut rows = vec![Vec::with_capacity(spec.steps); n];
    let init: Vec<u64> = match &spec.y_init {
        Some(y) => y.clone(),
        None => (0..n)
            .map(|i| poisson::sample(spec.thetas[spec.labels[i]].intercept() * v[i], rng))
            .collect(),
    };
    for (row, y) in rows.iter_mut().zip(&init) {
        row.push(*y);
    }
    let mut prev = init;
    let mut max_rate: f64 = 0.0;
    for _ in 2..=spec.steps {
        let x = lag.apply(&prev);
        let next: Vec<u64> = (0..n)
            .map(|i| {
                let rate = conditional_mean(&spec.thetas[spec.labels[i]], v[i], x[i], prev[i] as f64);
                max_rate = max_rate.max(rate);
                poisson::sample(rate, rng)
            })
            .collect();
        for (row, y) in rows.iter_mut().zip(&next) {
            row.push(*y);
        }
        prev = next;
    }
    if max_rate > EXPLOSIVE_RATE {
        log::warn!("simulated mean reached {max_rate:.3e}; the process looks explosive");
    }
    CountSeries::from_rows(rows)
}

/// Labels drawn by allocating nodes in ascending order from the prior
/// conditionals. Distance-dependent draws come out canonical; finite-mixture
/// draws are slot indices.
pub fn sample_prior_labels<R: Rng + ?Sized>(prior: &PartitionPrior, nodes: usize, rng: &mut R) -> Vec<usize> {
    match prior {
        PartitionPrior::Ddp { alpha, weights } => {
            let mut state = PartitionState::unallocated(nodes);
            for i in 0..nodes {
                let probs = ddp_conditional(i, &state, weights, *alpha);
                state.assign(i, pick(&probs, rng));
            }
            state.labels()
        }
        PartitionPrior::Fmm { components, gamma0 } => {
            let mut labels = vec![None; nodes];
            for i in 0..nodes {
                let probs = fmm_conditional(i, &labels, *components, *gamma0);
                labels[i] = Some(pick(&probs, rng));
            }
            labels.into_iter().map(|l| l.expect("allocated")).collect()
        }
    }
}

/// A partition drawn from the prior by sequential allocation.
pub fn simulate_prior_partition<R: Rng + ?Sized>(prior: &PartitionPrior, nodes: usize, rng: &mut R) -> PartitionState {
    PartitionState::from_labels(&sample_prior_labels(prior, nodes, rng))
}

fn pick<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let mut u: f64 = rng.random();
    for (k, p) in probs.iter().enumerate() {
        if u < *p {
            return k;
        }
        u -= p;
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::WeightMatrix;
    use crate::model::{build_predictors, node_log_likelihood, TimeWindow};

    fn ring(n: usize) -> Network {
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Network::new((0..n).map(|i| i.to_string()).collect(), &edges, None).unwrap()
    }

    fn spec(thetas: Vec<ClusterParams>, labels: Vec<usize>, steps: usize, seed: u64) -> SimSpec {
        SimSpec {
            network: ring(labels.len()),
            labels,
            thetas,
            steps,
            y_init: None,
            mode: PredictorMode::Raw,
            scale: None,
            seed,
        }
    }

    #[test]
    fn zero_coefficients_give_zero_counts() {
        let mut s = spec(vec![ClusterParams([0.0; 3])], vec![0; 5], 10, 1);
        s.y_init = Some(vec![3, 1, 4, 1, 5]);
        let y = simulate(&s).unwrap();
        for i in 0..5 {
            assert!(y.row(i)[1..].iter().all(|&c| c == 0));
        }
        assert_eq!(y.column(1), vec![3, 1, 4, 1, 5]);
    }

    #[test]
    fn intercept_only_counts_are_iid_poisson() {
        let mu = 3.7;
        let y = simulate(&spec(vec![ClusterParams([mu, 0.0, 0.0])], vec![0; 10], 2001, 2)).unwrap();
        let cells: Vec<f64> = y.rows().flat_map(|r| r[1..].iter().map(|&c| c as f64)).collect();
        let n = cells.len() as f64;
        let mean = cells.iter().sum::<f64>() / n;
        assert!((mean - mu).abs() < 3.0 * (mu / n).sqrt(), "mean {mu} vs {mean}");
    }

    #[test]
    fn pure_autoregression_is_a_martingale() {
        let mut s = spec(vec![ClusterParams([0.0, 0.0, 1.0])], vec![0; 400], 6, 3);
        s.y_init = Some(vec![20; 400]);
        let y = simulate(&s).unwrap();
        for t in 2..=6 {
            let prev: f64 = y.column(t - 1).iter().map(|&c| c as f64).sum();
            let next: f64 = y.column(t).iter().map(|&c| c as f64).sum();
            // sum of conditionally Poisson counts has variance equal to its mean
            assert!((next - prev).abs() < 4.0 * prev.sqrt(), "step {t}: {prev} -> {next}");
        }
    }

    #[test]
    fn simulation_is_seed_deterministic() {
        let s = spec(
            vec![ClusterParams([0.5, 0.2, 0.4]), ClusterParams([40.0, 0.1, 0.1])],
            vec![0, 1, 0, 1, 1],
            30,
            9,
        );
        assert_eq!(simulate(&s).unwrap(), simulate(&s).unwrap());
        let other = SimSpec { seed: 10, ..s.clone() };
        assert_ne!(simulate(&s).unwrap(), simulate(&other).unwrap());
    }

    #[test]
    fn simulated_data_has_finite_likelihood() {
        let thetas = vec![ClusterParams([0.5, 0.2, 0.4]), ClusterParams([2.0, 0.1, 0.1])];
        let labels = vec![0, 1, 0, 1, 1, 0];
        let s = spec(thetas.clone(), labels.clone(), 40, 4);
        let y = simulate(&s).unwrap();
        let p = build_predictors(&y, &s.network, PredictorMode::Raw, None).unwrap();
        for i in 0..6 {
            let ll = node_log_likelihood(i, &thetas[labels[i]], &y, &p, TimeWindow::full(40));
            assert!(ll.is_finite());
        }
    }

    #[test]
    fn rejects_inconsistent_specs() {
        let good = spec(vec![ClusterParams([1.0; 3])], vec![0; 3], 5, 0);
        assert!(simulate(&SimSpec { labels: vec![0, 1, 0], ..good.clone() }).is_err());
        assert!(simulate(&SimSpec { steps: 1, ..good.clone() }).is_err());
        assert!(simulate(&SimSpec { y_init: Some(vec![1]), ..good.clone() }).is_err());
        assert!(simulate(&SimSpec { mode: PredictorMode::PopulationAdjusted, ..good }).is_err());
    }

    #[test]
    fn tiny_alpha_gives_one_cluster_huge_alpha_singletons() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tiny = PartitionPrior::Ddp { alpha: 1e-12, weights: WeightMatrix::uniform(5) };
        let huge = PartitionPrior::Ddp { alpha: 1e6, weights: WeightMatrix::uniform(5) };
        for _ in 0..1000 {
            assert_eq!(simulate_prior_partition(&tiny, 5, &mut rng).n_clusters(), 1);
        }
        let singletons = (0..1000)
            .filter(|_| simulate_prior_partition(&huge, 5, &mut rng).n_clusters() == 5)
            .count();
        assert!(singletons >= 990);
    }

    #[test]
    fn fmm_prior_labels_stay_in_range() {
        let prior = PartitionPrior::fmm(3, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            assert!(sample_prior_labels(&prior, 7, &mut rng).iter().all(|&l| l < 3));
        }
    }
}
