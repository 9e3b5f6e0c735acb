//! Joint-distribution checks of the sampler. Draws of (partition, theta, y)
//! from the prior and forward model are compared with a chain that
//! alternates "simulate y given the parameters" with one sampler sweep given
//! y. Both have the same stationary distribution only if the sweep leaves the
//! posterior invariant.
//!
//! The distance-dependent label update is also checked against the exact
//! stationary law of its own sweep on a four-node path.

mod common;

use pnarm::mcmc::{chain_rng, run_chain, McmcConfig, Sampler};
use pnarm::model::{build_predictors, CountSeries, TimeWindow};
use pnarm::prior::{ddp_conditional, CoefficientPrior, DdpHyper, PartitionPrior, PartitionState};
use pnarm::sim::{sample_prior_labels, simulate_with, SimSpec};
use pnarm::{ClusterParams, ModelData, Network, PredictorMode};
use rand::Rng;

const STEPS: usize = 4;
const Y_INIT: [u64; 3] = [2, 0, 3];

/// Functionals compared between the two samplers.
fn functionals(labels: &[usize], thetas: &[ClusterParams], y_total: u64) -> [f64; 5] {
    let t0 = thetas[labels[0]].0;
    [
        t0[0],
        t0[2],
        (labels[0] == labels[1]) as u8 as f64,
        (labels[1] == labels[2]) as u8 as f64,
        y_total as f64,
    ]
}

fn simulate_counts<R: Rng>(net: &Network, labels: &[usize], thetas: &[ClusterParams], rng: &mut R) -> pnarm::CountSeries {
    let used = labels.iter().max().unwrap() + 1;
    let spec = SimSpec {
        network: net.clone(),
        labels: labels.to_vec(),
        thetas: thetas[..used].to_vec(),
        steps: STEPS,
        y_init: Some(Y_INIT.to_vec()),
        mode: PredictorMode::Raw,
        scale: None,
        seed: 0,
    };
    simulate_with(&spec, rng).unwrap()
}

fn total(counts: &pnarm::CountSeries) -> u64 {
    counts.rows().flat_map(|r| r[1..].iter()).sum()
}

fn initial<R: Rng>(prior: &PartitionPrior, coeff: &CoefficientPrior, rng: &mut R) -> (Vec<usize>, Vec<ClusterParams>) {
    let labels = sample_prior_labels(prior, 3, rng);
    let slots = match prior {
        PartitionPrior::Fmm { components, .. } => *components,
        PartitionPrior::Ddp { .. } => labels.iter().max().unwrap() + 1,
    };
    (labels, (0..slots).map(|_| coeff.sample(rng)).collect())
}

fn geweke(prior: PartitionPrior, seed: u64) {
    let net = common::path(3);
    let coeff = CoefficientPrior::gamma(2.0, 4.0).unwrap();
    let forward_n = 40_000;
    let chain_n = 60_000;

    let mut rng = chain_rng(seed, 0);
    let forward: Vec<[f64; 5]> = (0..forward_n)
        .map(|_| {
            let (labels, thetas) = initial(&prior, &coeff, &mut rng);
            let y = simulate_counts(&net, &labels, &thetas, &mut rng);
            functionals(&labels, &thetas, total(&y))
        })
        .collect();

    let mut rng = chain_rng(seed, 1);
    let (mut labels, mut thetas) = initial(&prior, &coeff, &mut rng);
    let mut chain = Vec::with_capacity(chain_n);
    for _ in 0..chain_n {
        let counts = simulate_counts(&net, &labels, &thetas, &mut rng);
        let y_total = total(&counts);
        let preds = build_predictors(&counts, &net, PredictorMode::Raw, None).unwrap();
        let data = ModelData::new(counts, preds).unwrap();
        let sampler = Sampler::new(&data, TimeWindow::full(STEPS), &prior, &coeff, 3).unwrap();
        let mut state = sampler.state_from(&labels, thetas).unwrap();
        sampler.gibbs_update_labels(&mut state, false, &mut rng);
        sampler.mh_update_coefficients(&mut state, 0.6, &mut rng);
        labels = state.labels();
        thetas = state.thetas().to_vec();
        chain.push(functionals(&labels, &thetas, y_total));
    }

    for k in 0..5 {
        let a: Vec<f64> = forward.iter().map(|f| f[k]).collect();
        let b: Vec<f64> = chain.iter().map(|f| f[k]).collect();
        let (ma, mb) = (common::mean(&a), common::mean(&b));
        let var_a = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / (a.len() - 1) as f64;
        let se = (var_a / a.len() as f64 + common::batch_means_se(&b).powi(2)).sqrt();
        let z = (ma - mb) / se;
        assert!(z.abs() < 4.0, "functional {k}: forward {ma:.4} chain {mb:.4} z {z:.2}");
    }
}

#[test]
fn finite_mixture_sweep_preserves_joint_distribution() {
    geweke(PartitionPrior::fmm(2, 1.0).unwrap(), 11);
}

#[test]
fn dirichlet_process_sweep_preserves_joint_distribution() {
    let prior = PartitionPrior::ddp(&common::path(3), DdpHyper { alpha: 1.0, h: 0.0 }).unwrap();
    geweke(prior, 12);
}

/// Transition matrix over canonical partitions of one ascending Gibbs sweep
/// of the distance-dependent conditionals.
fn exact_sweep(parts: &[Vec<usize>], prior: &PartitionPrior) -> Vec<Vec<f64>> {
    let PartitionPrior::Ddp { alpha, weights } = prior else {
        unreachable!()
    };
    let index = |labels: &[usize]| parts.iter().position(|p| *p == common::canonical(labels)).unwrap();
    let n = parts.len();
    let mut kernel: Vec<Vec<f64>> = (0..n).map(|a| (0..n).map(|b| (a == b) as u8 as f64).collect()).collect();
    for i in 0..parts[0].len() {
        let mut step = vec![vec![0.0; n]; n];
        for (a, p) in parts.iter().enumerate() {
            let mut state = PartitionState::from_labels(p);
            state.remove(i);
            for (l, prob) in ddp_conditional(i, &state, weights, *alpha).into_iter().enumerate() {
                let mut next = state.clone();
                next.assign(i, l);
                step[a][index(&next.labels())] += prob;
            }
        }
        kernel = (0..n)
            .map(|a| (0..n).map(|c| (0..n).map(|b| kernel[a][b] * step[b][c]).sum()).collect())
            .collect();
    }
    kernel
}

#[test]
fn distance_dependent_sweep_targets_its_exact_stationary_law() {
    let net = common::path(4);
    let prior = PartitionPrior::ddp(&net, DdpHyper { alpha: 1.0, h: 1.0 }).unwrap();
    let parts = common::set_partitions(4);
    let kernel = exact_sweep(&parts, &prior);
    let mut pi = vec![1.0 / parts.len() as f64; parts.len()];
    for _ in 0..500 {
        pi = (0..pi.len()).map(|b| (0..pi.len()).map(|a| pi[a] * kernel[a][b]).sum()).collect();
    }

    let counts = CountSeries::from_rows(vec![vec![0, 0]; 4]).unwrap();
    let preds = build_predictors(&counts, &net, PredictorMode::Raw, None).unwrap();
    let data = ModelData::new(counts, preds).unwrap();
    let config = McmcConfig {
        iterations: 101_000,
        burn_in: 1_000,
        thinning: 1,
        seed: 31,
        ..McmcConfig::default()
    };
    let chain = run_chain(&data, TimeWindow::empty(), &prior, &CoefficientPrior::default(), &config).unwrap();
    for (p, &exact) in parts.iter().zip(&pi) {
        let hits: Vec<f64> = chain.draws.iter().map(|d| (common::canonical(&d.labels) == *p) as u8 as f64).collect();
        let z = (common::mean(&hits) - exact) / common::batch_means_se(&hits);
        assert!(z.abs() < 4.0, "partition {p:?}: sampled {:.4} exact {exact:.4} z {z:.2}", common::mean(&hits));
    }

    // Allocating nodes one at a time from the same conditionals gives a
    // different law once h > 0.
    let sequential: Vec<f64> = parts
        .iter()
        .map(|p| {
            let mut state = PartitionState::unallocated(4);
            let PartitionPrior::Ddp { alpha, weights } = &prior else { unreachable!() };
            p.iter()
                .enumerate()
                .map(|(i, &l)| {
                    let prob = ddp_conditional(i, &state, weights, *alpha)[l];
                    state.assign(i, l);
                    prob
                })
                .product()
        })
        .collect();
    let gap = pi.iter().zip(&sequential).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(gap > 0.01, "gap {gap}");
}
