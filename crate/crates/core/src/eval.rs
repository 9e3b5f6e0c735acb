//! Forecast scoring: log score, MASE, randomized PIT, and stacking weights.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::CountSeries;
use crate::posterior::{PoissonMixture, PredictiveDistribution};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    /// Mean of the finite per-cell scores.
    pub mean: f64,
    /// 1-based time steps scored, one row of `cells` per step.
    pub steps: Vec<usize>,
    /// `cells[s][i]` is the score of node `i` at `steps[s]`.
    pub cells: Vec<Vec<f64>>,
    /// Number of observations that had zero predictive mass; their cells
    /// hold `+inf` and are left out of the mean.
    pub zero_mass: usize,
}

/// Negative log predictive probability of one observation. Computed from the
/// mass function directly, which equals `-ln(P(y) - P(y-1))` without the
/// cancellation.
pub fn cell_log_score(dist: &PoissonMixture, y: u64) -> f64 {
    -dist.pmf(y).ln()
}

/// Scores each predictive against the observed counts at its step.
pub fn log_score(predictives: &[PredictiveDistribution], observed: &CountSeries) -> Result<ScoreReport> {
    if predictives.is_empty() {
        return Err(Error::config("no time steps to score"));
    }
    let mut cells = Vec::with_capacity(predictives.len());
    let mut steps = Vec::with_capacity(predictives.len());
    let mut zero_mass = 0;
    for p in predictives {
        if p.n_nodes() != observed.n_nodes() {
            return Err(Error::mismatch("predictive and observed node counts differ"));
        }
        if p.step == 0 || p.step > observed.n_steps() {
            return Err(Error::mismatch(format!("no observation for step {}", p.step)));
        }
        let row: Vec<f64> = (0..p.n_nodes())
            .map(|i| cell_log_score(p.node(i), observed.get(i, p.step)))
            .collect();
        zero_mass += row.iter().filter(|s| s.is_infinite()).count();
        cells.push(row);
        steps.push(p.step);
    }
    if zero_mass > 0 {
        log::warn!("{zero_mass} observations had zero predictive mass");
    }
    let finite: Vec<f64> = cells.iter().flatten().copied().filter(|s| s.is_finite()).collect();
    let mean = if finite.is_empty() {
        f64::INFINITY
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };
    Ok(ScoreReport {
        mean,
        steps,
        cells,
        zero_mass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaseReport {
    /// Scaled error per node; `None` where the in-sample naive error is zero.
    pub scaled: Vec<Option<f64>>,
    /// Mean over the nodes with a defined scaled error.
    pub mean: f64,
}

/// Mean absolute scaled error of one-step forecasts against the in-sample
/// mean absolute error of the naive last-value forecast.
pub fn mase(forecast: &[f64], truth: &[u64], train: &CountSeries) -> Result<MaseReport> {
    let n = train.n_nodes();
    if forecast.len() != n || truth.len() != n {
        return Err(Error::mismatch(format!("expected {n} forecasts and observations")));
    }
    let steps = train.n_steps();
    if steps < 2 {
        return Err(Error::config("scaling needs at least two training steps"));
    }
    let scaled: Vec<Option<f64>> = (0..n)
        .map(|i| {
            let row = train.row(i);
            let naive = row.windows(2).map(|w| w[1].abs_diff(w[0]) as f64).sum::<f64>() / (steps - 1) as f64;
            (naive > 0.0).then(|| (truth[i] as f64 - forecast[i]).abs() / naive)
        })
        .collect();
    let defined: Vec<f64> = scaled.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::data("every node has a constant training series; MASE is undefined"));
    }
    let skipped = n - defined.len();
    if skipped > 0 {
        log::warn!("{skipped} nodes excluded from MASE: constant training series");
    }
    Ok(MaseReport {
        mean: defined.iter().sum::<f64>() / defined.len() as f64,
        scaled,
    })
}

/// Randomized probability integral transform `P(y-1) + U p(y)`.
pub fn randomized_pit<R: Rng + ?Sized>(dist: &PoissonMixture, y: u64, rng: &mut R) -> f64 {
    let below = dist.cdf(y as i64 - 1);
    let u: f64 = rng.random();
    (below + u * dist.pmf(y)).min(1.0)
}

/// Counts of values in `bins` equal-width bins over `[0, 1]`; 1.0 falls in
/// the last bin.
pub fn pit_histogram(values: &[f64], bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    if bins == 0 {
        return counts;
    }
    for &u in values {
        let b = ((u * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample Kolmogorov-Smirnov test against Uniform(0, 1), with the
/// asymptotic p-value after Stephens' small-sample correction.
pub fn ks_uniform(values: &[f64]) -> KsResult {
    let n = values.len();
    if n == 0 {
        return KsResult {
            statistic: 0.0,
            p_value: 1.0,
        };
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let nf = n as f64;
    let d = sorted
        .iter()
        .enumerate()
        .map(|(k, &u)| {
            let u = u.clamp(0.0, 1.0);
            ((k + 1) as f64 / nf - u).max(u - k as f64 / nf)
        })
        .fold(0.0, f64::max);
    let root = nf.sqrt();
    let lambda = (root + 0.12 + 0.11 / root) * d;
    KsResult {
        statistic: d,
        p_value: kolmogorov_survival(lambda),
    }
}

fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StackingResult {
    pub weights: Vec<f64>,
    /// Sum over cells of the log stacked predictive density.
    pub objective: f64,
    pub iterations: usize,
}

/// Sum over cells `n` of `ln sum_c w_c dens[n][c]`.
pub fn stacking_objective(densities: &[Vec<f64>], weights: &[f64]) -> f64 {
    densities
        .iter()
        .map(|row| row.iter().zip(weights).map(|(d, w)| d * w).sum::<f64>().ln())
        .sum()
}

const STACKING_TOL: f64 = 1e-10;
const STACKING_MAX_ITER: usize = 10_000;

/// Simplex weights maximizing [`stacking_objective`], where `densities[n][c]`
/// is chain `c`'s predictive probability of cell `n`. Uses the EM fixed
/// point from uniform weights.
pub fn stacking_weights(densities: &[Vec<f64>]) -> Result<StackingResult> {
    let chains = densities.first().map_or(0, Vec::len);
    if densities.is_empty() || chains == 0 {
        return Err(Error::config("stacking needs at least one cell and one chain"));
    }
    if densities.iter().any(|r| r.len() != chains) {
        return Err(Error::mismatch("every cell needs one density per chain"));
    }
    if densities.iter().flatten().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(Error::data("predictive densities must be finite and nonnegative"));
    }
    if let Some(n) = densities.iter().position(|r| r.iter().all(|&d| d == 0.0)) {
        return Err(Error::data(format!("cell {n} has zero predictive mass under every chain")));
    }
    let cells = densities.len() as f64;
    let mut w = vec![1.0 / chains as f64; chains];
    let mut objective = stacking_objective(densities, &w);
    let mut iterations = 0;
    while iterations < STACKING_MAX_ITER {
        iterations += 1;
        let mut next = vec![0.0; chains];
        for row in densities {
            let mix: f64 = row.iter().zip(&w).map(|(d, w)| d * w).sum();
            for c in 0..chains {
                next[c] += w[c] * row[c] / mix;
            }
        }
        for x in &mut next {
            *x /= cells;
        }
        let total: f64 = next.iter().sum();
        for x in &mut next {
            *x /= total;
        }
        w = next;
        let updated = stacking_objective(densities, &w);
        let change = (updated - objective).abs() / objective.abs().max(f64::MIN_POSITIVE);
        objective = updated;
        if change < STACKING_TOL {
            break;
        }
    }
    Ok(StackingResult {
        weights: w,
        objective,
        iterations,
    })
}
