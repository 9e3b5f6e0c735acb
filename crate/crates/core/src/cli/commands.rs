//! Command implementations. Each reads its inputs, writes its artifacts into
//! the output directory and logs what it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::io::{self, CountsTable};
use crate::error::{Error, Result};
use crate::eval::{self, ScoreReport};
use crate::graph::Network;
use crate::mcmc::{run_multichain, Draw, PosteriorSamples};
use crate::model::{build_predictors, ClusterParams, CountSeries, ModelData, PredictorMode, Predictors, TimeWindow};
use crate::posterior::{
    cocluster_matrix, least_squares_partition, pool_chains, predictive_pmf, rate_inputs, PredictiveDistribution,
};
use crate::sim::{simulate as simulate_counts, SimSpec};

/// Data and predictors restricted to the training steps.
struct Loaded {
    table: CountsTable,
    network: Network,
    train: usize,
    train_counts: CountSeries,
    predictors: Predictors,
}

fn load(config: &RunConfig) -> Result<Loaded> {
    let table = io::read_counts(config.counts_path()?)?;
    let network = io::load_network(config.edges_path()?, config.paths.covariates.as_deref(), &table.node_ids)?;
    let train = config.train_steps(table.counts.n_steps())?;
    let train_counts = table.counts.truncated(train)?;
    let predictors = build_predictors(&train_counts, &network, config.model.mode, config.model.scale)?;
    Ok(Loaded {
        table,
        network,
        train,
        train_counts,
        predictors,
    })
}

fn output_dir(config: &RunConfig) -> Result<PathBuf> {
    let dir = config.output_dir();
    fs::create_dir_all(&dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })?;
    Ok(dir)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub chain: usize,
    pub draws: usize,
    pub proposed: u64,
    pub accepted: u64,
    pub acceptance_rate: f64,
    pub final_rw_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub node_ids: Vec<String>,
    pub time_labels: Vec<String>,
    pub train_steps: usize,
    /// Population scale `c` used for the intercepts.
    pub scale: f64,
    pub chains: Vec<ChainSummary>,
    pub config: RunConfig,
}

/// Runs the sampler and writes `draws.jsonl` and `manifest.json`.
pub fn fit(config: &RunConfig) -> Result<Vec<PosteriorSamples>> {
    let data = load(config)?;
    let prior = config.prior.build(&data.network)?;
    let scale = data.predictors.scale();
    let model = ModelData::new(data.train_counts, data.predictors)?;
    let chains = run_multichain(
        &model,
        TimeWindow::full(data.train),
        &prior,
        &config.coefficients,
        &config.mcmc,
    )?;
    let dir = output_dir(config)?;
    let draws_path = dir.join("draws.jsonl");
    io::write_draws(&draws_path, &chains, config.mcmc.burn_in, config.mcmc.thinning)?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_owned(),
        seed: config.mcmc.seed,
        node_ids: data.table.node_ids.clone(),
        time_labels: data.table.time_labels[..data.train].to_vec(),
        train_steps: data.train,
        scale,
        chains: chains
            .iter()
            .map(|c| ChainSummary {
                chain: c.chain,
                draws: c.draws.len(),
                proposed: c.acceptance.proposed,
                accepted: c.acceptance.accepted,
                acceptance_rate: c.acceptance.rate(),
                final_rw_step: c.rw_step,
            })
            .collect(),
        config: config.clone(),
    };
    io::write_json(&dir.join("manifest.json"), &manifest)?;
    for c in &chains {
        log::info!("chain {}: {} draws, acceptance {:.3}", c.chain, c.draws.len(), c.acceptance.rate());
    }
    log::info!("wrote {}", draws_path.display());
    Ok(chains)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackReport {
    pub weights: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Validation time steps (1-based).
    pub steps: Vec<usize>,
    pub components: Vec<StackComponent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackComponent {
    pub draws: PathBuf,
    pub chain: usize,
}

fn draws_path(config: &RunConfig, draws: Option<&Path>) -> PathBuf {
    draws.map_or_else(|| config.output_dir().join("draws.jsonl"), Path::to_path_buf)
}

/// Loads chains and checks them against the data.
fn load_chains(path: &Path, nodes: usize) -> Result<Vec<PosteriorSamples>> {
    let chains = io::read_draws(path)?;
    for (c, draws) in &chains {
        if let Some(d) = draws.iter().find(|d| d.labels.len() != nodes) {
            return Err(Error::mismatch(format!(
                "{}: chain {c} has draws over {} nodes, the data has {nodes}",
                path.display(),
                d.labels.len()
            )));
        }
    }
    Ok(chains
        .into_iter()
        .map(|(chain, draws)| PosteriorSamples {
            chain,
            draws,
            acceptance: Default::default(),
            rw_step: f64::NAN,
        })
        .collect())
}

/// Pooled draws with per-draw weights, using stacking weights when given.
fn pooled(chains: &[PosteriorSamples], weights: Option<&Path>) -> Result<(Vec<Draw>, Vec<f64>)> {
    let stacked = weights.map(io::read_json::<StackReport>).transpose()?;
    if let Some(s) = &stacked {
        if s.weights.len() != chains.len() {
            return Err(Error::mismatch(format!(
                "{} stacking weights for {} chains",
                s.weights.len(),
                chains.len()
            )));
        }
    }
    pool_chains(chains, stacked.as_ref().map(|s| s.weights.as_slice()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct QuantileValue {
    q: f64,
    value: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct PmfRow {
    y: u64,
    pmf: f64,
    cdf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct NodeForecast {
    node: String,
    mean: f64,
    quantiles: Vec<QuantileValue>,
    pmf: Vec<PmfRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct PartitionSummary {
    /// Zero-based position of the selected draw in the pooled draw list.
    draw_index: usize,
    loss: f64,
    labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct ForecastReport {
    step: usize,
    time_label: Option<String>,
    draws: usize,
    nodes: Vec<NodeForecast>,
    least_squares: PartitionSummary,
    cocluster: Vec<Vec<f64>>,
}

/// Writes `forecast.json`, `forecast.csv` and `cocluster.csv`.
pub fn forecast(config: &RunConfig, draws: Option<&Path>, weights: Option<&Path>) -> Result<()> {
    let data = load(config)?;
    let n = data.network.len();
    let chains = load_chains(&draws_path(config, draws), n)?;
    let (pooled_draws, draw_weights) = pooled(&chains, weights)?;
    let step = data.train + 1;
    let inputs = rate_inputs(&data.predictors, &data.train_counts, step)?;
    let dist = predictive_pmf(&pooled_draws, Some(&draw_weights), &inputs)?;
    let c_hat = cocluster_matrix(&pooled_draws)?;
    let ls = least_squares_partition(&pooled_draws, &c_hat)?;
    let q = &config.eval.quantiles;
    let nodes: Vec<NodeForecast> = (0..n)
        .map(|i| {
            let m = dist.node(i);
            NodeForecast {
                node: data.table.node_ids[i].clone(),
                mean: m.mean(),
                quantiles: q.iter().map(|&q| QuantileValue { q, value: m.quantile(q) }).collect(),
                pmf: m
                    .pmf_table(config.eval.coverage)
                    .into_iter()
                    .map(|(y, pmf, cdf)| PmfRow { y, pmf, cdf })
                    .collect(),
            }
        })
        .collect();
    let dir = output_dir(config)?;
    let mut header = vec!["node".to_owned(), "mean".to_owned()];
    header.extend(q.iter().map(|q| format!("q{q}")));
    header.push("cluster".to_owned());
    io::write_csv(
        &dir.join("forecast.csv"),
        &header.iter().map(String::as_str).collect::<Vec<_>>(),
        nodes.iter().zip(&ls.labels).map(|(f, l)| {
            let mut row = vec![f.node.clone(), f.mean.to_string()];
            row.extend(f.quantiles.iter().map(|q| q.value.to_string()));
            row.push((l + 1).to_string());
            row
        }),
    )?;
    let mut header = vec!["node"];
    header.extend(data.table.node_ids.iter().map(String::as_str));
    io::write_csv(
        &dir.join("cocluster.csv"),
        &header,
        c_hat.rows().zip(&data.table.node_ids).map(|(r, id)| {
            std::iter::once(id.clone())
                .chain(r.iter().map(f64::to_string))
                .collect()
        }),
    )?;
    let report = ForecastReport {
        step,
        time_label: data.table.time_labels.get(step - 1).cloned(),
        draws: pooled_draws.len(),
        nodes,
        least_squares: PartitionSummary {
            draw_index: ls.index,
            loss: ls.loss,
            labels: ls.labels.iter().map(|l| l + 1).collect(),
        },
        cocluster: c_hat.rows().map(<[f64]>::to_vec).collect(),
    };
    io::write_json(&dir.join("forecast.json"), &report)?;
    log::info!("wrote forecast for step {step} to {}", dir.display());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct MaseSummary {
    mean: f64,
    undefined: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct ScoreFile {
    train: ScoreReport,
    test: ScoreReport,
    mase: MaseSummary,
}

fn predictives(
    draws: &[Draw],
    weights: &[f64],
    predictors: &Predictors,
    counts: &CountSeries,
    steps: impl Iterator<Item = usize>,
) -> Result<Vec<PredictiveDistribution>> {
    steps
        .map(|t| predictive_pmf(draws, Some(weights), &rate_inputs(predictors, counts, t)?))
        .collect()
}

/// Writes `score.json`, `mase.csv`, `pit.csv` and `pit_histogram.csv`.
pub fn score(config: &RunConfig, draws: Option<&Path>, weights: Option<&Path>) -> Result<()> {
    let data = load(config)?;
    let steps = data.table.counts.n_steps();
    if data.train >= steps {
        return Err(Error::config(format!(
            "scoring needs a held-out step: train_steps is {} of {steps}",
            data.train
        )));
    }
    let n = data.network.len();
    let chains = load_chains(&draws_path(config, draws), n)?;
    let (pooled_draws, w) = pooled(&chains, weights)?;
    let train_dists = predictives(&pooled_draws, &w, &data.predictors, &data.train_counts, 2..=data.train)?;
    let test_dists = predictives(&pooled_draws, &w, &data.predictors, &data.train_counts, std::iter::once(data.train + 1))?;
    let observed = &data.table.counts;
    let train = eval::log_score(&train_dists, observed)?;
    let test = eval::log_score(&test_dists, observed)?;
    let point: Vec<f64> = (0..n).map(|i| test_dists[0].point_forecast(i)).collect();
    let truth = observed.column(data.train + 1);
    let mase = eval::mase(&point, &truth, &data.train_counts)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.eval.pit_seed);
    let mut pit_rows = Vec::new();
    let mut pits = Vec::new();
    for (set, dists) in [("train", &train_dists), ("test", &test_dists)] {
        for d in dists.iter() {
            for i in 0..n {
                let u = eval::randomized_pit(d.node(i), observed.get(i, d.step), &mut rng);
                pits.push(u);
                pit_rows.push(vec![
                    data.table.node_ids[i].clone(),
                    d.step.to_string(),
                    set.to_owned(),
                    u.to_string(),
                ]);
            }
        }
    }
    let dir = output_dir(config)?;
    io::write_csv(&dir.join("pit.csv"), &["node", "step", "set", "u"], pit_rows)?;
    let bins = 10;
    io::write_csv(
        &dir.join("pit_histogram.csv"),
        &["lower", "upper", "count"],
        eval::pit_histogram(&pits, bins).into_iter().enumerate().map(|(b, c)| {
            vec![
                (b as f64 / bins as f64).to_string(),
                ((b + 1) as f64 / bins as f64).to_string(),
                c.to_string(),
            ]
        }),
    )?;
    io::write_csv(
        &dir.join("mase.csv"),
        &["node", "forecast", "observed", "scaled_error"],
        (0..n).map(|i| {
            vec![
                data.table.node_ids[i].clone(),
                point[i].to_string(),
                truth[i].to_string(),
                mase.scaled[i].map_or_else(String::new, |s| s.to_string()),
            ]
        }),
    )?;
    let undefined = (0..n)
        .filter(|&i| mase.scaled[i].is_none())
        .map(|i| data.table.node_ids[i].clone())
        .collect();
    io::write_json(
        &dir.join("score.json"),
        &ScoreFile {
            train,
            test,
            mase: MaseSummary { mean: mase.mean, undefined },
        },
    )?;
    log::info!("wrote scores to {}", dir.display());
    Ok(())
}

/// Stacking weights for every chain in `draw_files`, fitted on the last
/// `window` training steps. Writes `weights.json`.
pub fn stack(config: &RunConfig, draw_files: &[PathBuf]) -> Result<StackReport> {
    let data = load(config)?;
    let n = data.network.len();
    let mut components = Vec::new();
    let mut chains = Vec::new();
    for path in draw_files {
        for c in load_chains(path, n)? {
            components.push(StackComponent {
                draws: path.clone(),
                chain: c.chain,
            });
            chains.push(c);
        }
    }
    if config.eval.window == 0 {
        return Err(Error::config("stacking window must be at least 1"));
    }
    let first = data.train.saturating_sub(config.eval.window - 1).max(2);
    let steps: Vec<usize> = (first..=data.train).collect();
    let per_chain: Vec<Vec<PredictiveDistribution>> = chains
        .iter()
        .map(|c| {
            let w = vec![1.0 / c.draws.len() as f64; c.draws.len()];
            predictives(&c.draws, &w, &data.predictors, &data.train_counts, steps.iter().copied())
        })
        .collect::<Result<_>>()?;
    let mut densities = Vec::with_capacity(steps.len() * n);
    for (s, &t) in steps.iter().enumerate() {
        for i in 0..n {
            let y = data.train_counts.get(i, t);
            densities.push(per_chain.iter().map(|d| d[s].pmf(i, y)).collect());
        }
    }
    let fit = eval::stacking_weights(&densities)?;
    let report = StackReport {
        weights: fit.weights,
        objective: fit.objective,
        iterations: fit.iterations,
        steps,
        components,
    };
    let dir = output_dir(config)?;
    io::write_json(&dir.join("weights.json"), &report)?;
    log::info!("wrote {}", dir.join("weights.json").display());
    Ok(report)
}

/// Simulation spec file. Labels are 1-based indices into `thetas`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationFile {
    pub nodes: Vec<String>,
    pub edges: PathBuf,
    pub covariates: Option<PathBuf>,
    pub labels: Vec<usize>,
    pub thetas: Vec<ClusterParams>,
    pub steps: usize,
    #[serde(default)]
    pub y_init: Option<Vec<u64>>,
    #[serde(default)]
    pub mode: PredictorMode,
    #[serde(default)]
    pub scale: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

/// Simulates counts from a spec file and writes them as a counts CSV with
/// integer time labels.
pub fn simulate(spec_path: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let text = fs::read_to_string(spec_path).map_err(|source| Error::Io {
        path: spec_path.display().to_string(),
        source,
    })?;
    let file: SimulationFile =
        toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", spec_path.display())))?;
    let base = spec_path.parent().unwrap_or(Path::new(""));
    let network = io::load_network(
        &base.join(&file.edges),
        file.covariates.as_ref().map(|p| base.join(p)).as_deref(),
        &file.nodes,
    )?;
    if file.labels.contains(&0) {
        return Err(Error::config("simulation labels are 1-based"));
    }
    let spec = SimSpec {
        network,
        labels: file.labels.iter().map(|l| l - 1).collect(),
        thetas: file.thetas,
        steps: file.steps,
        y_init: file.y_init,
        mode: file.mode,
        scale: file.scale,
        seed: seed.unwrap_or(file.seed),
    };
    let counts = simulate_counts(&spec)?;
    let table = CountsTable {
        node_ids: file.nodes,
        time_labels: (1..=spec.steps).map(|t| t.to_string()).collect(),
        counts,
    };
    let path = match out {
        Some(p) => p.to_path_buf(),
        None => output_dir(&RunConfig::default())?.join("counts.csv"),
    };
    io::write_counts(&path, &table)?;
    log::info!("wrote {}", path.display());
    Ok(())
}
