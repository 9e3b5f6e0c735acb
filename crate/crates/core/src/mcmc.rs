//! Posterior sampling: Gibbs sweeps over node labels, alternated with
//! log-scale random-walk Metropolis updates of each cluster's coefficients.
//!
//! New clusters under the distance-dependent prior are handled with `m`
//! auxiliary coefficient draws from the prior, each carrying `1/m` of the
//! new-cluster mass, which keeps the label update exact despite the
//! non-conjugate likelihood.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClusterParams, ModelData, TimeWindow};
use crate::prior::{
    canonical_labels, ddp_conditional, fmm_conditional, CoefficientPrior, PartitionPrior, PartitionState,
};

/// Acceptance rate the burn-in step-size adaptation aims for.
pub const TARGET_ACCEPTANCE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    /// Auxiliary coefficient draws offered as new clusters in each label update.
    pub aux_components: usize,
    /// Standard deviation of the log-scale random-walk proposal.
    pub rw_step: f64,
    /// Tune `rw_step` during burn-in.
    pub adapt: bool,
    pub seed: u64,
    pub chains: usize,
    /// Visit nodes in a fresh random order each sweep instead of ascending.
    pub random_scan: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            iterations: 20_000,
            burn_in: 10_000,
            thinning: 10,
            aux_components: 3,
            rw_step: 0.1,
            adapt: true,
            seed: 0,
            chains: 1,
            random_scan: false,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("iterations must be positive"));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::config(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thinning == 0 {
            return Err(Error::config("thinning must be at least 1"));
        }
        if self.aux_components == 0 {
            return Err(Error::config("aux_components must be at least 1"));
        }
        if !(self.rw_step.is_finite() && self.rw_step > 0.0) {
            return Err(Error::config(format!("rw_step must be > 0, got {}", self.rw_step)));
        }
        if self.chains == 0 {
            return Err(Error::config("chains must be at least 1"));
        }
        Ok(())
    }

    /// Number of retained draws, `floor((iterations - burn_in) / thinning)`.
    pub fn retained_draws(&self) -> usize {
        (self.iterations - self.burn_in) / self.thinning
    }
}

/// One chain's current labels and coefficients with cached density terms.
#[derive(Debug, Clone)]
pub struct ChainState {
    partition: PartitionState,
    thetas: Vec<ClusterParams>,
    node_loglik: Vec<f64>,
    theta_log_prior: Vec<f64>,
    partition_log_prior: f64,
    log_post: f64,
}

impl ChainState {
    pub fn partition(&self) -> &PartitionState {
        &self.partition
    }

    pub fn labels(&self) -> Vec<usize> {
        self.partition.labels()
    }

    /// One coefficient triple per cluster (per slot for a finite mixture).
    pub fn thetas(&self) -> &[ClusterParams] {
        &self.thetas
    }

    /// Cached joint log density, up to a constant.
    pub fn log_post(&self) -> f64 {
        self.log_post
    }

    /// Coefficients and labels with clusters renumbered by first appearance
    /// and empty slots dropped.
    pub fn to_draw(&self) -> Draw {
        let labels = self.labels();
        let canonical = canonical_labels(&labels);
        let k = canonical.iter().max().map_or(0, |m| m + 1);
        let mut thetas = vec![ClusterParams([0.0; 3]); k];
        for (&raw, &c) in labels.iter().zip(&canonical) {
            thetas[c] = self.thetas[raw];
        }
        Draw {
            labels: canonical,
            thetas,
            log_post: self.log_post,
        }
    }
}

/// A retained posterior draw: canonical labels and the coefficients of each
/// occupied cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub labels: Vec<usize>,
    pub thetas: Vec<ClusterParams>,
    pub log_post: f64,
}

impl Draw {
    /// Coefficients governing node `i` in this draw.
    pub fn theta_of(&self, i: usize) -> &ClusterParams {
        &self.thetas[self.labels[i]]
    }

    pub fn n_clusters(&self) -> usize {
        self.thetas.len()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptanceStats {
    pub proposed: u64,
    pub accepted: u64,
}

impl AcceptanceStats {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    fn add(&mut self, other: AcceptanceStats) {
        self.proposed += other.proposed;
        self.accepted += other.accepted;
    }
}

/// Output of one chain after burn-in and thinning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub chain: usize,
    pub draws: Vec<Draw>,
    /// Coefficient-update acceptance after burn-in.
    pub acceptance: AcceptanceStats,
    /// Proposal scale in force after burn-in.
    pub rw_step: f64,
}

impl PosteriorSamples {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }
}

/// Random stream for chain `chain` under `seed`. Chain 0 is the stream a
/// single-chain run uses.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

/// Draws an index with probability proportional to `exp(log_weights)`;
/// `None` when every weight is zero.
fn sample_log_weights<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> Option<usize> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return None;
    }
    let weights: Vec<f64> = log_weights.iter().map(|w| (w - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, w) in weights.iter().enumerate() {
        if u < *w {
            return Some(k);
        }
        u -= w;
    }
    // rounding slack: fall back to the last positive weight
    weights.iter().rposition(|w| *w > 0.0)
}

fn sample_probs<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let logs: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
    sample_log_weights(&logs, rng).expect("prior probabilities have positive mass")
}

/// The posterior target: data, likelihood window and priors.
#[derive(Debug, Clone, Copy)]
pub struct Sampler<'a> {
    data: &'a ModelData,
    window: TimeWindow,
    partition_prior: &'a PartitionPrior,
    coeff_prior: &'a CoefficientPrior,
    aux_components: usize,
}

impl<'a> Sampler<'a> {
    pub fn new(
        data: &'a ModelData,
        window: TimeWindow,
        partition_prior: &'a PartitionPrior,
        coeff_prior: &'a CoefficientPrior,
        aux_components: usize,
    ) -> Result<Self> {
        window.check(data.counts().n_steps())?;
        coeff_prior.validate()?;
        if aux_components == 0 {
            return Err(Error::config("aux_components must be at least 1"));
        }
        if let PartitionPrior::Ddp { weights, .. } = partition_prior {
            if weights.len() != data.n_nodes() {
                return Err(Error::mismatch(format!(
                    "prior weights cover {} nodes, data has {}",
                    weights.len(),
                    data.n_nodes()
                )));
            }
        }
        Ok(Sampler {
            data,
            window,
            partition_prior,
            coeff_prior,
            aux_components,
        })
    }

    fn n_nodes(&self) -> usize {
        self.data.n_nodes()
    }

    fn loglik(&self, i: usize, theta: &ClusterParams) -> f64 {
        self.data.node_log_likelihood(i, theta, self.window)
    }

    /// Recomputes the joint log density from scratch.
    pub fn log_posterior(&self, labels: &[usize], thetas: &[ClusterParams]) -> f64 {
        let lik: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| self.loglik(i, &thetas[l]))
            .sum();
        let coeff: f64 = thetas.iter().map(|t| self.coeff_prior.log_pdf(t)).sum();
        lik + coeff + self.partition_prior.log_prob(labels)
    }

    /// Builds a chain state from explicit labels and coefficients. For a
    /// finite mixture, labels are slot indices and `thetas` has one entry per
    /// slot; otherwise labels are canonicalized.
    pub fn state_from(&self, labels: &[usize], thetas: Vec<ClusterParams>) -> Result<ChainState> {
        if labels.len() != self.n_nodes() {
            return Err(Error::mismatch("label vector length differs from node count"));
        }
        let (partition, thetas) = match self.partition_prior {
            PartitionPrior::Fmm { components, .. } => {
                if thetas.len() != *components || labels.iter().any(|&l| l >= *components) {
                    return Err(Error::data("finite-mixture state needs one theta per slot"));
                }
                (PartitionState::with_components(labels, *components), thetas)
            }
            PartitionPrior::Ddp { .. } => {
                let k = labels.iter().max().map_or(0, |m| m + 1);
                if thetas.len() != k {
                    return Err(Error::data("need one theta per cluster label"));
                }
                let canonical = canonical_labels(labels);
                let mut reordered = vec![ClusterParams([0.0; 3]); k];
                let mut used = vec![false; k];
                for (&raw, &c) in labels.iter().zip(&canonical) {
                    reordered[c] = thetas[raw];
                    used[c] = true;
                }
                let occupied = used.iter().filter(|u| **u).count();
                reordered.truncate(occupied);
                (PartitionState::from_labels(labels), reordered)
            }
        };
        let labels = partition.labels();
        let node_loglik: Vec<f64> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| self.loglik(i, &thetas[l]))
            .collect();
        let theta_log_prior: Vec<f64> = thetas.iter().map(|t| self.coeff_prior.log_pdf(t)).collect();
        let partition_log_prior = self.partition_prior.log_prob(&labels);
        let log_post =
            node_loglik.iter().sum::<f64>() + theta_log_prior.iter().sum::<f64>() + partition_log_prior;
        Ok(ChainState {
            partition,
            thetas,
            node_loglik,
            theta_log_prior,
            partition_log_prior,
            log_post,
        })
    }

    /// Initial state: labels by sequential allocation from the partition
    /// prior, coefficients from the coefficient prior.
    pub fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> ChainState {
        let labels = crate::sim::sample_prior_labels(self.partition_prior, self.n_nodes(), rng);
        let slots = match self.partition_prior {
            PartitionPrior::Fmm { components, .. } => *components,
            PartitionPrior::Ddp { .. } => labels.iter().max().map_or(0, |m| m + 1),
        };
        let thetas = (0..slots).map(|_| self.coeff_prior.sample(rng)).collect();
        self.state_from(&labels, thetas)
            .expect("prior draws are consistent with the sampler")
    }

    /// One Gibbs sweep over every node's label.
    pub fn gibbs_update_labels<R: Rng + ?Sized>(&self, state: &mut ChainState, random_scan: bool, rng: &mut R) {
        let mut order: Vec<usize> = (0..self.n_nodes()).collect();
        if random_scan {
            order.shuffle(rng);
        }
        for i in order {
            match self.partition_prior {
                PartitionPrior::Ddp { alpha, weights } => self.update_ddp_label(state, i, *alpha, weights, rng),
                PartitionPrior::Fmm { components, gamma0 } => {
                    self.update_fmm_label(state, i, *components, *gamma0, rng)
                }
            }
        }
        let labels = state.partition.labels();
        let fresh = self.partition_prior.log_prob(&labels);
        state.log_post += fresh - state.partition_log_prior;
        state.partition_log_prior = fresh;
    }

    fn update_ddp_label<R: Rng + ?Sized>(
        &self,
        state: &mut ChainState,
        i: usize,
        alpha: f64,
        weights: &crate::graph::WeightMatrix,
        rng: &mut R,
    ) {
        let m = self.aux_components;
        let old_label = state.partition.label(i).expect("complete state");
        let old_theta = state.thetas[old_label];
        state.log_post -= state.node_loglik[i];
        let singleton = state.partition.remove(i).is_some();
        if singleton {
            state.thetas.remove(old_label);
            let lp = state.theta_log_prior.remove(old_label);
            state.log_post -= lp;
        }

        let k = state.partition.n_clusters();
        let prior = ddp_conditional(i, &state.partition, weights, alpha);
        // a removed singleton's coefficients stay on offer as the first auxiliary
        let aux: Vec<ClusterParams> = (0..m)
            .map(|j| {
                if singleton && j == 0 {
                    old_theta
                } else {
                    self.coeff_prior.sample(rng)
                }
            })
            .collect();
        let liks: Vec<f64> = state.thetas.iter().chain(&aux).map(|t| self.loglik(i, t)).collect();
        let aux_mass = prior[k] / m as f64;
        let log_weights: Vec<f64> = (0..k + m)
            .map(|c| {
                let p = if c < k { prior[c] } else { aux_mass };
                p.ln() + liks[c]
            })
            .collect();
        let choice = sample_log_weights(&log_weights, rng).unwrap_or_else(|| {
            log::warn!("node {i} has zero likelihood under every candidate cluster; using the prior alone");
            let prior_only: Vec<f64> = (0..k + m)
                .map(|c| if c < k { prior[c] } else { aux_mass })
                .collect();
            sample_probs(&prior_only, rng)
        });

        if choice < k {
            state.partition.assign(i, choice);
        } else {
            let theta = aux[choice - k];
            state.partition.assign(i, k);
            state.thetas.push(theta);
            let lp = self.coeff_prior.log_pdf(&theta);
            state.theta_log_prior.push(lp);
            state.log_post += lp;
        }
        state.node_loglik[i] = liks[choice];
        state.log_post += liks[choice];
    }

    fn update_fmm_label<R: Rng + ?Sized>(
        &self,
        state: &mut ChainState,
        i: usize,
        components: usize,
        gamma0: f64,
        rng: &mut R,
    ) {
        state.log_post -= state.node_loglik[i];
        state.partition.unassign(i);
        let prior = fmm_conditional(i, state.partition.raw_labels(), components, gamma0);
        let liks: Vec<f64> = state.thetas.iter().map(|t| self.loglik(i, t)).collect();
        let log_weights: Vec<f64> = prior.iter().zip(&liks).map(|(p, l)| p.ln() + l).collect();
        let choice = sample_log_weights(&log_weights, rng).unwrap_or_else(|| {
            log::warn!("node {i} has zero likelihood under every component; using the prior alone");
            sample_probs(&prior, rng)
        });
        state.partition.assign(i, choice);
        state.node_loglik[i] = liks[choice];
        state.log_post += liks[choice];
    }

    fn members(&self, state: &ChainState) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); state.thetas.len()];
        for i in 0..self.n_nodes() {
            members[state.partition.label(i).expect("complete state")].push(i);
        }
        members
    }

    /// Updates every cluster's coefficients once.
    ///
    /// Under a Gamma prior each occupied cluster gets a joint log-scale
    /// random-walk Metropolis proposal; under an atom prior its coefficients
    /// are redrawn exactly from the finite conditional. Empty finite-mixture
    /// slots are refreshed from the prior.
    pub fn mh_update_coefficients<R: Rng + ?Sized>(
        &self,
        state: &mut ChainState,
        rw_step: f64,
        rng: &mut R,
    ) -> AcceptanceStats {
        let mut stats = AcceptanceStats::default();
        for (k, members) in self.members(state).into_iter().enumerate() {
            if members.is_empty() {
                let theta = self.coeff_prior.sample(rng);
                let lp = self.coeff_prior.log_pdf(&theta);
                state.log_post += lp - state.theta_log_prior[k];
                state.thetas[k] = theta;
                state.theta_log_prior[k] = lp;
                continue;
            }
            match self.coeff_prior {
                CoefficientPrior::Gamma { .. } => {
                    stats.proposed += 1;
                    if self.random_walk_step(state, k, &members, rw_step, rng) {
                        stats.accepted += 1;
                    }
                }
                CoefficientPrior::Atoms { atoms } => self.atom_step(state, k, &members, atoms, rng),
            }
        }
        stats
    }

    fn random_walk_step<R: Rng + ?Sized>(
        &self,
        state: &mut ChainState,
        k: usize,
        members: &[usize],
        rw_step: f64,
        rng: &mut R,
    ) -> bool {
        let current = state.thetas[k];
        let mut proposal = current;
        for c in proposal.0.iter_mut() {
            let eps: f64 = rng.sample(StandardNormal);
            *c *= (rw_step * eps).exp();
        }
        let new_liks: Vec<f64> = members.iter().map(|&i| self.loglik(i, &proposal)).collect();
        let d_lik: f64 = members
            .iter()
            .zip(&new_liks)
            .map(|(&i, l)| l - state.node_loglik[i])
            .sum();
        let new_prior = self.coeff_prior.log_pdf(&proposal);
        let d_prior = new_prior - state.theta_log_prior[k];
        let d_jacobian: f64 = proposal
            .0
            .iter()
            .zip(&current.0)
            .map(|(p, c)| p.ln() - c.ln())
            .sum();
        let log_ratio = d_lik + d_prior + d_jacobian;
        let u: f64 = rng.random();
        if u.ln() < log_ratio {
            for (&i, l) in members.iter().zip(new_liks) {
                state.node_loglik[i] = l;
            }
            state.thetas[k] = proposal;
            state.theta_log_prior[k] = new_prior;
            state.log_post += d_lik + d_prior;
            true
        } else {
            false
        }
    }

    fn atom_step<R: Rng + ?Sized>(
        &self,
        state: &mut ChainState,
        k: usize,
        members: &[usize],
        atoms: &[ClusterParams],
        rng: &mut R,
    ) {
        let liks: Vec<Vec<f64>> = atoms
            .iter()
            .map(|a| members.iter().map(|&i| self.loglik(i, a)).collect())
            .collect();
        let log_weights: Vec<f64> = liks.iter().map(|l| l.iter().sum()).collect();
        let Some(choice) = sample_log_weights(&log_weights, rng) else {
            return;
        };
        let old_lik: f64 = members.iter().map(|&i| state.node_loglik[i]).sum();
        let new_lik: f64 = log_weights[choice];
        for (&i, l) in members.iter().zip(&liks[choice]) {
            state.node_loglik[i] = *l;
        }
        let lp = self.coeff_prior.log_pdf(&atoms[choice]);
        state.log_post += new_lik - old_lik + lp - state.theta_log_prior[k];
        state.thetas[k] = atoms[choice];
        state.theta_log_prior[k] = lp;
    }

    /// Runs one chain on stream `chain` of `config.seed`.
    pub fn run(&self, config: &McmcConfig, chain: usize) -> Result<PosteriorSamples> {
        config.validate()?;
        let mut rng = chain_rng(config.seed, chain);
        let mut state = self.initial_state(&mut rng);
        let mut log_step = config.rw_step.ln();
        let mut acceptance = AcceptanceStats::default();
        let mut draws = Vec::with_capacity(config.retained_draws());
        for it in 1..=config.iterations {
            self.gibbs_update_labels(&mut state, config.random_scan, &mut rng);
            let stats = self.mh_update_coefficients(&mut state, log_step.exp(), &mut rng);
            if it <= config.burn_in {
                if config.adapt && stats.proposed > 0 {
                    let gain = (it as f64).powf(-0.6);
                    log_step += gain * (stats.accepted as f64 / stats.proposed as f64 - TARGET_ACCEPTANCE);
                }
                continue;
            }
            acceptance.add(stats);
            if (it - config.burn_in).is_multiple_of(config.thinning) {
                draws.push(state.to_draw());
            }
        }
        Ok(PosteriorSamples {
            chain,
            draws,
            acceptance,
            rw_step: log_step.exp(),
        })
    }
}

/// Runs a single chain; equivalent to chain 0 of [`run_multichain`].
pub fn run_chain(
    data: &ModelData,
    window: TimeWindow,
    partition_prior: &PartitionPrior,
    coeff_prior: &CoefficientPrior,
    config: &McmcConfig,
) -> Result<PosteriorSamples> {
    Sampler::new(data, window, partition_prior, coeff_prior, config.aux_components)?.run(config, 0)
}

/// Runs `config.chains` chains in parallel, each on its own stream of the
/// master seed. Output order is by chain index.
pub fn run_multichain(
    data: &ModelData,
    window: TimeWindow,
    partition_prior: &PartitionPrior,
    coeff_prior: &CoefficientPrior,
    config: &McmcConfig,
) -> Result<Vec<PosteriorSamples>> {
    config.validate()?;
    let sampler = Sampler::new(data, window, partition_prior, coeff_prior, config.aux_components)?;
    (0..config.chains)
        .into_par_iter()
        .map(|c| sampler.run(config, c))
        .collect()
}
