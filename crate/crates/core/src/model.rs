//! The observation model: count series, predictor construction, conditional
//! means and the per-node Poisson log-likelihood.
//!
//! Time steps in the public API are numbered from 1, so a series of length
//! `T` has steps `1..=T` and the likelihood runs over steps `2..=T`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Network;
use crate::poisson::{self, ln_factorial};

/// Node-by-time matrix of nonnegative counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountSeries {
    nodes: usize,
    steps: usize,
    values: Vec<u64>,
}

impl CountSeries {
    /// One row per node, one column per time step.
    pub fn from_rows(rows: Vec<Vec<u64>>) -> Result<Self> {
        let nodes = rows.len();
        if nodes == 0 {
            return Err(Error::data("count series has no nodes"));
        }
        let steps = rows[0].len();
        if steps == 0 {
            return Err(Error::data("count series has no time steps"));
        }
        if let Some(i) = rows.iter().position(|r| r.len() != steps) {
            return Err(Error::data(format!(
                "row {i} has {} time steps, expected {steps}",
                rows[i].len()
            )));
        }
        Ok(CountSeries {
            nodes,
            steps,
            values: rows.into_iter().flatten().collect(),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes
    }

    pub fn n_steps(&self) -> usize {
        self.steps
    }

    /// Count of node `i` at time step `t` (1-based).
    pub fn get(&self, i: usize, t: usize) -> u64 {
        debug_assert!((1..=self.steps).contains(&t));
        self.values[i * self.steps + t - 1]
    }

    pub fn row(&self, i: usize) -> &[u64] {
        &self.values[i * self.steps..(i + 1) * self.steps]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.values.chunks(self.steps)
    }

    /// Counts of every node at step `t` (1-based).
    pub fn column(&self, t: usize) -> Vec<u64> {
        (0..self.nodes).map(|i| self.get(i, t)).collect()
    }

    /// The first `steps` time steps.
    pub fn truncated(&self, steps: usize) -> Result<Self> {
        if steps == 0 || steps > self.steps {
            return Err(Error::config(format!(
                "cannot truncate a series of length {} to {steps} steps",
                self.steps
            )));
        }
        Self::from_rows(self.rows().map(|r| r[..steps].to_vec()).collect())
    }
}

/// Inclusive range of 1-based time steps over which likelihood terms are
/// accumulated. `first > last` denotes the empty window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub first: usize,
    pub last: usize,
}

impl TimeWindow {
    pub fn new(first: usize, last: usize) -> Self {
        TimeWindow { first, last }
    }

    /// Every step with a predecessor: `2..=steps`.
    pub fn full(steps: usize) -> Self {
        TimeWindow { first: 2, last: steps }
    }

    /// No likelihood terms at all; the posterior equals the prior.
    pub fn empty() -> Self {
        TimeWindow { first: 2, last: 1 }
    }

    pub fn is_empty(&self) -> bool {
        self.first > self.last
    }

    pub fn len(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            self.last - self.first + 1
        }
    }

    pub fn steps(&self) -> std::ops::RangeInclusive<usize> {
        self.first..=self.last
    }

    /// Checks that the window fits inside a series of length `steps`.
    pub fn check(&self, steps: usize) -> Result<()> {
        if self.is_empty() {
            return Ok(());
        }
        if self.first < 2 || self.last > steps {
            return Err(Error::config(format!(
                "time window {}..={} is outside 2..={steps}",
                self.first, self.last
            )));
        }
        Ok(())
    }
}

/// Cluster-specific coefficients `(intercept, network, autoregressive)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClusterParams(pub [f64; 3]);

impl ClusterParams {
    pub fn new(intercept: f64, network: f64, autoregressive: f64) -> Result<Self> {
        let theta = ClusterParams([intercept, network, autoregressive]);
        if !theta.is_valid() {
            return Err(Error::data(format!(
                "coefficients must be finite and nonnegative, got {:?}",
                theta.0
            )));
        }
        Ok(theta)
    }

    pub fn is_valid(&self) -> bool {
        self.0.iter().all(|c| c.is_finite() && *c >= 0.0)
    }

    pub fn intercept(&self) -> f64 {
        self.0[0]
    }

    pub fn network(&self) -> f64 {
        self.0[1]
    }

    pub fn autoregressive(&self) -> f64 {
        self.0[2]
    }
}

/// How the intercept and network-lag predictors are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PredictorMode {
    /// `v_i = 1` and the unweighted mean of the neighbors' previous counts.
    #[default]
    Raw,
    /// `v_i = p_i / c` and a population-rescaled neighbor mean.
    PopulationAdjusted,
}

/// Sparse linear map from one time step's counts to the network lag.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LagOperator {
    rows: Vec<Vec<(usize, f64)>>,
}

impl LagOperator {
    pub fn new(rows: Vec<Vec<(usize, f64)>>) -> Self {
        LagOperator { rows }
    }

    /// No neighbors anywhere: the lag is identically zero.
    pub fn zero(nodes: usize) -> Self {
        LagOperator {
            rows: vec![Vec::new(); nodes],
        }
    }

    pub fn for_network(net: &Network, mode: PredictorMode) -> Result<Self> {
        let pop = match mode {
            PredictorMode::Raw => None,
            PredictorMode::PopulationAdjusted => Some(net.population().ok_or_else(|| {
                Error::config("population-adjusted predictors need a population covariate")
            })?),
        };
        let rows = (0..net.len())
            .map(|i| {
                let deg = net.degree(i) as f64;
                net.neighbors(i)
                    .iter()
                    .map(|&j| {
                        let w = match pop {
                            None => 1.0 / deg,
                            Some(p) => p[i] / (deg * p[j]),
                        };
                        (j, w)
                    })
                    .collect()
            })
            .collect();
        Ok(LagOperator { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Network lag for node `i` given the previous counts of every node.
    pub fn apply_node<F: Fn(usize) -> f64>(&self, i: usize, prev: F) -> f64 {
        self.rows[i].iter().map(|&(j, w)| w * prev(j)).sum()
    }

    pub fn apply(&self, prev: &[u64]) -> Vec<f64> {
        (0..self.rows.len())
            .map(|i| self.apply_node(i, |j| prev[j] as f64))
            .collect()
    }
}

/// Intercept predictor `v` and network lags `X_{i,t}` for `t = 1..T-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictors {
    mode: PredictorMode,
    scale: f64,
    intercept: Vec<f64>,
    lag: Vec<f64>,
    lag_steps: usize,
    operator: LagOperator,
}

impl Predictors {
    /// Assembles predictors from explicit values: `lag[i]` holds
    /// `X_{i,1}, ..., X_{i,T-1}`.
    pub fn from_parts(intercept: Vec<f64>, lag: Vec<Vec<f64>>, operator: LagOperator) -> Result<Self> {
        let nodes = intercept.len();
        if lag.len() != nodes || operator.len() != nodes {
            return Err(Error::data("predictor dimensions disagree on node count"));
        }
        let lag_steps = lag.first().map_or(0, Vec::len);
        if lag.iter().any(|r| r.len() != lag_steps) {
            return Err(Error::data("network-lag rows have different lengths"));
        }
        let flat: Vec<f64> = lag.into_iter().flatten().collect();
        if intercept.iter().chain(&flat).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::data("predictors must be finite and nonnegative"));
        }
        Ok(Predictors {
            mode: PredictorMode::Raw,
            scale: 1.0,
            intercept,
            lag: flat,
            lag_steps,
            operator,
        })
    }

    pub fn mode(&self) -> PredictorMode {
        self.mode
    }

    /// The population scaling constant `c` (1 for raw predictors).
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn n_nodes(&self) -> usize {
        self.intercept.len()
    }

    pub fn intercept(&self, i: usize) -> f64 {
        self.intercept[i]
    }

    /// `X_{i,t}` for `t` in `1..T` (1-based).
    pub fn lag(&self, i: usize, t: usize) -> f64 {
        debug_assert!((1..=self.lag_steps).contains(&t));
        self.lag[i * self.lag_steps + t - 1]
    }

    pub fn lag_row(&self, i: usize) -> &[f64] {
        &self.lag[i * self.lag_steps..(i + 1) * self.lag_steps]
    }

    /// Number of time steps of the series these predictors were built for.
    pub fn series_len(&self) -> usize {
        self.lag_steps + 1
    }

    pub fn operator(&self) -> &LagOperator {
        &self.operator
    }

    /// Network lag at the final observed step, `X_{i,T}`, for one-step-ahead
    /// forecasting.
    pub fn horizon_lag(&self, counts: &CountSeries) -> Vec<f64> {
        self.operator.apply(&counts.column(counts.n_steps()))
    }
}

/// Builds the intercept and network-lag predictors for `counts` on `net`.
///
/// `scale` is the population constant `c`; when `None` it defaults to the
/// mean population. Isolated nodes get a zero network lag.
pub fn build_predictors(
    counts: &CountSeries,
    net: &Network,
    mode: PredictorMode,
    scale: Option<f64>,
) -> Result<Predictors> {
    let n = net.len();
    if counts.n_nodes() != n {
        return Err(Error::mismatch(format!(
            "counts have {} nodes but the network has {n}",
            counts.n_nodes()
        )));
    }
    if let Some(c) = scale {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::config(format!("population scale c must be > 0, got {c}")));
        }
    }
    let operator = LagOperator::for_network(net, mode)?;
    let (intercept, scale) = intercepts(net, mode, scale)?;
    let steps = counts.n_steps();
    let lag_steps = steps.saturating_sub(1);
    let mut lag = vec![0.0; n * lag_steps];
    for i in 0..n {
        for t in 1..steps {
            lag[i * lag_steps + t - 1] = operator.apply_node(i, |j| counts.get(j, t) as f64);
        }
    }
    Ok(Predictors {
        mode,
        scale,
        intercept,
        lag,
        lag_steps,
        operator,
    })
}

/// Intercept predictors `v` and the resolved population constant `c`.
pub fn intercepts(net: &Network, mode: PredictorMode, scale: Option<f64>) -> Result<(Vec<f64>, f64)> {
    if let Some(c) = scale {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::config(format!("population scale c must be > 0, got {c}")));
        }
    }
    let n = net.len();
    match mode {
        PredictorMode::Raw => Ok((vec![1.0; n], scale.unwrap_or(1.0))),
        PredictorMode::PopulationAdjusted => {
            let pop = net.population().ok_or_else(|| {
                Error::config("population-adjusted predictors need a population covariate")
            })?;
            let c = scale.unwrap_or_else(|| pop.iter().sum::<f64>() / n as f64);
            Ok((pop.iter().map(|p| p / c).collect(), c))
        }
    }
}

/// `theta_1 v + theta_2 x + theta_3 y`.
#[inline]
pub fn conditional_mean(theta: &ClusterParams, v: f64, x: f64, y: f64) -> f64 {
    let [a, b, c] = theta.0;
    a * v + b * x + c * y
}

/// Poisson log-likelihood of node `i` over `window` under coefficients
/// `theta`, including the `log(y!)` terms. Returns negative infinity when a
/// positive count meets a zero mean.
pub fn node_log_likelihood(
    i: usize,
    theta: &ClusterParams,
    counts: &CountSeries,
    predictors: &Predictors,
    window: TimeWindow,
) -> f64 {
    let v = predictors.intercept(i);
    window
        .steps()
        .map(|t| {
            let rate = conditional_mean(theta, v, predictors.lag(i, t - 1), counts.get(i, t - 1) as f64);
            poisson::ln_pmf(counts.get(i, t), rate)
        })
        .sum()
}

/// Counts and predictors checked against each other, with cached
/// log-factorials for fast repeated likelihood evaluation.
#[derive(Debug, Clone)]
pub struct ModelData {
    counts: CountSeries,
    predictors: Predictors,
    ln_factorials: Vec<f64>,
}

impl ModelData {
    pub fn new(counts: CountSeries, predictors: Predictors) -> Result<Self> {
        if counts.n_nodes() != predictors.n_nodes() {
            return Err(Error::mismatch(format!(
                "counts have {} nodes, predictors {}",
                counts.n_nodes(),
                predictors.n_nodes()
            )));
        }
        if counts.n_steps() != predictors.series_len() {
            return Err(Error::mismatch(format!(
                "counts have {} steps, predictors were built for {}",
                counts.n_steps(),
                predictors.series_len()
            )));
        }
        let ln_factorials = counts.values.iter().map(|&y| ln_factorial(y)).collect();
        Ok(ModelData {
            counts,
            predictors,
            ln_factorials,
        })
    }

    pub fn counts(&self) -> &CountSeries {
        &self.counts
    }

    pub fn predictors(&self) -> &Predictors {
        &self.predictors
    }

    pub fn n_nodes(&self) -> usize {
        self.counts.n_nodes()
    }

    /// Same value as [`node_log_likelihood`].
    pub fn node_log_likelihood(&self, i: usize, theta: &ClusterParams, window: TimeWindow) -> f64 {
        if window.is_empty() {
            return 0.0;
        }
        let steps = self.counts.steps;
        let y = self.counts.row(i);
        let lf = &self.ln_factorials[i * steps..(i + 1) * steps];
        let x = self.predictors.lag_row(i);
        let v = self.predictors.intercept(i);
        let mut total = 0.0;
        for t in window.steps() {
            let rate = conditional_mean(theta, v, x[t - 2], y[t - 2] as f64);
            let obs = y[t - 1];
            if rate == 0.0 {
                if obs > 0 {
                    return f64::NEG_INFINITY;
                }
                continue;
            }
            let term = if obs == 0 { 0.0 } else { obs as f64 * rate.ln() };
            total += term - rate - lf[t - 1];
        }
        total
    }
}
