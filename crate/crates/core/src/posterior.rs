//! Summaries of posterior draws: co-clustering frequencies, the
//! least-squares partition, and one-step-ahead predictive distributions.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mcmc::{Draw, PosteriorSamples};
use crate::model::{conditional_mean, CountSeries, Predictors};
use crate::poisson;

/// Posterior frequency with which each pair of nodes shares a cluster.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoclusterMatrix {
    n: usize,
    values: Vec<f64>,
}

impl CoclusterMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.n)
    }
}

pub fn cocluster_matrix(draws: &[Draw]) -> Result<CoclusterMatrix> {
    let first = draws.first().ok_or_else(|| Error::data("no posterior draws"))?;
    let n = first.labels.len();
    if draws.iter().any(|d| d.labels.len() != n) {
        return Err(Error::mismatch("draws disagree on the number of nodes"));
    }
    let mut counts = vec![0usize; n * n];
    for d in draws {
        for i in 0..n {
            for j in 0..n {
                if d.labels[i] == d.labels[j] {
                    counts[i * n + j] += 1;
                }
            }
        }
    }
    let m = draws.len() as f64;
    Ok(CoclusterMatrix {
        n,
        values: counts.into_iter().map(|c| c as f64 / m).collect(),
    })
}

/// Squared distance between a draw's co-clustering indicators and `c_hat`,
/// summed over ordered pairs `i != j`.
pub fn partition_loss(labels: &[usize], c_hat: &CoclusterMatrix) -> f64 {
    let n = labels.len();
    let mut loss = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let same = if labels[i] == labels[j] { 1.0 } else { 0.0 };
                loss += (same - c_hat.get(i, j)).powi(2);
            }
        }
    }
    loss
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeastSquaresPartition {
    /// Zero-based index of the selected draw.
    pub index: usize,
    pub loss: f64,
    pub labels: Vec<usize>,
}

/// The draw whose partition is closest to `c_hat` in squared loss; ties go
/// to the earliest draw. Losses within a relative `1e-12` count as tied,
/// since equal losses of different partitions can round differently.
pub fn least_squares_partition(draws: &[Draw], c_hat: &CoclusterMatrix) -> Result<LeastSquaresPartition> {
    if draws.is_empty() {
        return Err(Error::data("no posterior draws"));
    }
    let mut best = LeastSquaresPartition {
        index: 0,
        loss: f64::INFINITY,
        labels: Vec::new(),
    };
    for (m, d) in draws.iter().enumerate() {
        if d.labels.len() != c_hat.len() {
            return Err(Error::mismatch("draw and co-clustering matrix sizes differ"));
        }
        let loss = partition_loss(&d.labels, c_hat);
        if m == 0 || loss < best.loss - 1e-12 * best.loss.max(1.0) {
            best = LeastSquaresPartition {
                index: m,
                loss,
                labels: d.labels.clone(),
            };
        }
    }
    Ok(best)
}

/// A finite mixture of Poisson distributions with nonnegative weights
/// summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonMixture {
    rates: Vec<f64>,
    weights: Vec<f64>,
}

/// Multiples of `sqrt(rate) + 1` above the rate where a component's mass
/// underflows to zero in double precision.
const TAIL_SPAN: f64 = 40.0;

impl PoissonMixture {
    pub fn new(rates: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if rates.is_empty() || rates.len() != weights.len() {
            return Err(Error::data("mixture needs matching, nonempty rates and weights"));
        }
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::data("mixture rates must be finite and nonnegative"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::data("mixture weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::data(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(PoissonMixture { rates, weights })
    }

    /// Equal weights.
    pub fn uniform(rates: Vec<f64>) -> Result<Self> {
        let w = 1.0 / rates.len().max(1) as f64;
        let weights = vec![w; rates.len()];
        Self::new(rates, weights)
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn pmf(&self, y: u64) -> f64 {
        self.rates
            .iter()
            .zip(&self.weights)
            .map(|(r, w)| w * poisson::pmf(y, *r))
            .sum()
    }

    /// `P(Y <= y)`, zero for negative `y`.
    pub fn cdf(&self, y: i64) -> f64 {
        let (hi, lo) = self.cdf_parts(y);
        (hi + lo).clamp(0.0, 1.0)
    }

    /// `P(Y <= y)` as an unevaluated sum `hi + lo` carrying roughly twice
    /// the working precision, so that differences of neighbouring values
    /// keep their accuracy in the upper tail.
    pub fn cdf_parts(&self, y: i64) -> (f64, f64) {
        if y < 0 {
            return (0.0, 0.0);
        }
        let mut total = Compensated::default();
        for (&rate, &w) in self.rates.iter().zip(&self.weights) {
            let part = poisson_cdf(y as u64, rate);
            let hi = w * part.sum;
            total.add(hi);
            total.add(w.mul_add(part.sum, -hi) + w * part.carry);
        }
        (total.sum, total.carry)
    }

    /// `P(y) - P(y - 1)` evaluated from [`PoissonMixture::cdf_parts`].
    pub fn cdf_increment(&self, y: u64) -> f64 {
        let (a, b) = self.cdf_parts(y as i64);
        let (c, d) = self.cdf_parts(y as i64 - 1);
        (a - c) + (b - d)
    }

    pub fn mean(&self) -> f64 {
        self.rates.iter().zip(&self.weights).map(|(r, w)| r * w).sum()
    }

    /// Smallest `y` with `P(Y <= y) >= q`.
    pub fn quantile(&self, q: f64) -> u64 {
        let mut y = 0u64;
        let mut cum = Compensated::default();
        loop {
            cum.add(self.pmf(y));
            if cum.value() >= q || y >= self.support_bound() {
                return y;
            }
            y += 1;
        }
    }

    /// `(y, pmf, cdf)` rows from zero until the cumulative mass reaches
    /// `coverage`.
    pub fn pmf_table(&self, coverage: f64) -> Vec<(u64, f64, f64)> {
        let mut rows = Vec::new();
        let mut cum = Compensated::default();
        let mut y = 0u64;
        loop {
            let p = self.pmf(y);
            cum.add(p);
            rows.push((y, p, cum.value().min(1.0)));
            if cum.value() >= coverage || y >= self.support_bound() {
                return rows;
            }
            y += 1;
        }
    }

    /// A count beyond which the remaining mass is below double precision.
    pub fn support_bound(&self) -> u64 {
        let max = self.rates.iter().copied().fold(0.0, f64::max);
        (max + TAIL_SPAN * (max.sqrt() + 1.0)).ceil() as u64
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Poisson CDF by direct summation of the mass function from the point
/// below which terms underflow, stopping once they underflow again above the
/// mode. Values at `y` and `y + 1` share every term up to `y`.
fn poisson_cdf(y: u64, rate: f64) -> Compensated {
    let mut total = Compensated::default();
    if rate == 0.0 {
        total.add(1.0);
        return total;
    }
    let lo = first_representable(rate);
    if y < lo {
        return total;
    }
    let mut p = poisson::pmf(lo, rate);
    total.add(p);
    for u in (lo + 1)..=y {
        p *= rate / u as f64;
        if p == 0.0 && u as f64 > rate {
            break;
        }
        total.add(p);
    }
    total
}

/// Log mass below which Poisson terms are treated as zero.
const LN_NEGLIGIBLE: f64 = -700.0;

/// Smallest count at or below the mode whose log mass is at least
/// `LN_NEGLIGIBLE`; the mass below it is under `exp(-700)`.
fn first_representable(rate: f64) -> u64 {
    let (mut lo, mut hi) = (0u64, rate.floor() as u64);
    if poisson::ln_pmf(lo, rate) >= LN_NEGLIGIBLE {
        return 0;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if poisson::ln_pmf(mid, rate) >= LN_NEGLIGIBLE {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Predictive distributions of every node at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution {
    /// 1-based time step being predicted.
    pub step: usize,
    nodes: Vec<PoissonMixture>,
}

impl PredictiveDistribution {
    pub fn from_mixtures(step: usize, nodes: Vec<PoissonMixture>) -> Self {
        PredictiveDistribution { step, nodes }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, i: usize) -> &PoissonMixture {
        &self.nodes[i]
    }

    pub fn pmf(&self, i: usize, y: u64) -> f64 {
        self.nodes[i].pmf(y)
    }

    pub fn cdf(&self, i: usize, y: i64) -> f64 {
        self.nodes[i].cdf(y)
    }

    /// Predictive mean of node `i`.
    pub fn point_forecast(&self, i: usize) -> f64 {
        self.nodes[i].mean()
    }
}

/// Predictor values feeding the conditional mean at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct RateInputs {
    pub step: usize,
    pub intercept: Vec<f64>,
    pub lag: Vec<f64>,
    pub previous: Vec<f64>,
}

/// Inputs for predicting step `t` from data through `t - 1`. Steps
/// `2..=T` use the stored predictors; `T + 1` forms the network lag from the
/// last observed counts.
pub fn rate_inputs(predictors: &Predictors, counts: &CountSeries, t: usize) -> Result<RateInputs> {
    let steps = counts.n_steps();
    if predictors.n_nodes() != counts.n_nodes() || predictors.series_len() != steps {
        return Err(Error::mismatch("predictors were built for different data"));
    }
    if !(2..=steps + 1).contains(&t) {
        return Err(Error::config(format!("cannot predict step {t} from a series of length {steps}")));
    }
    let n = counts.n_nodes();
    let lag = if t <= steps {
        (0..n).map(|i| predictors.lag(i, t - 1)).collect()
    } else {
        predictors.horizon_lag(counts)
    };
    Ok(RateInputs {
        step: t,
        intercept: (0..n).map(|i| predictors.intercept(i)).collect(),
        lag,
        previous: (0..n).map(|i| counts.get(i, t - 1) as f64).collect(),
    })
}

/// Per-node Poisson mixtures over `draws` at the step described by
/// `inputs`. Weights default to `1/M`.
pub fn predictive_pmf(draws: &[Draw], weights: Option<&[f64]>, inputs: &RateInputs) -> Result<PredictiveDistribution> {
    if draws.is_empty() {
        return Err(Error::data("no posterior draws"));
    }
    let n = inputs.intercept.len();
    if draws.iter().any(|d| d.labels.len() != n) {
        return Err(Error::mismatch(format!("draws do not have {n} nodes")));
    }
    let weights = match weights {
        Some(w) if w.len() != draws.len() => {
            return Err(Error::mismatch("one weight per draw is required"));
        }
        Some(w) => w.to_vec(),
        None => vec![1.0 / draws.len() as f64; draws.len()],
    };
    let nodes = (0..n)
        .map(|i| {
            let rates = draws
                .iter()
                .map(|d| conditional_mean(d.theta_of(i), inputs.intercept[i], inputs.lag[i], inputs.previous[i]))
                .collect();
            PoissonMixture::new(rates, weights.clone())
        })
        .collect::<Result<_>>()?;
    Ok(PredictiveDistribution {
        step: inputs.step,
        nodes,
    })
}

/// Pools several chains into one draw list with per-draw weights
/// `w_c / M_c`. Without chain weights every chain counts equally.
pub fn pool_chains(chains: &[PosteriorSamples], chain_weights: Option<&[f64]>) -> Result<(Vec<Draw>, Vec<f64>)> {
    if chains.is_empty() || chains.iter().any(|c| c.draws.is_empty()) {
        return Err(Error::data("every chain needs at least one draw"));
    }
    let cw = match chain_weights {
        Some(w) if w.len() != chains.len() => {
            return Err(Error::mismatch(format!(
                "{} chain weights for {} chains",
                w.len(),
                chains.len()
            )))
        }
        Some(w) => w.to_vec(),
        None => vec![1.0 / chains.len() as f64; chains.len()],
    };
    let mut draws = Vec::new();
    let mut weights = Vec::new();
    for (c, w) in chains.iter().zip(cw) {
        let m = c.draws.len() as f64;
        draws.extend(c.draws.iter().cloned());
        weights.extend(std::iter::repeat_n(w / m, c.draws.len()));
    }
    Ok((draws, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ClusterParams;
    use proptest::prelude::*;

    fn draw(labels: &[usize]) -> Draw {
        let k = labels.iter().max().unwrap() + 1;
        Draw {
            labels: labels.to_vec(),
            thetas: (0..k).map(|c| ClusterParams([c as f64 + 1.0, 0.0, 0.0])).collect(),
            log_post: 0.0,
        }
    }

    #[test]
    fn single_draw_cocluster_is_indicator() {
        let c = cocluster_matrix(&[draw(&[0, 1, 0])]).unwrap();
        assert_eq!(c.get(0, 2), 1.0);
        assert_eq!(c.get(0, 1), 0.0);
        assert_eq!(c.get(1, 1), 1.0);
    }

    #[test]
    fn two_draw_cocluster_and_tie() {
        let draws = [draw(&[0, 0, 1]), draw(&[0, 1, 1])];
        let c = cocluster_matrix(&draws).unwrap();
        assert_eq!(c.get(0, 1), 0.5);
        assert_eq!(c.get(1, 2), 0.5);
        assert_eq!(c.get(0, 2), 0.0);
        // four ordered pairs each off by 0.5
        assert!((partition_loss(&draws[0].labels, &c) - 1.0).abs() < 1e-15);
        assert!((partition_loss(&draws[1].labels, &c) - 1.0).abs() < 1e-15);
        let ls = least_squares_partition(&draws, &c).unwrap();
        assert_eq!(ls.index, 0);
    }

    #[test]
    fn identical_draws_have_zero_loss() {
        let draws = vec![draw(&[0, 1, 1, 2]); 4];
        let c = cocluster_matrix(&draws).unwrap();
        let ls = least_squares_partition(&draws, &c).unwrap();
        assert_eq!((ls.index, ls.loss), (0, 0.0));
    }

    #[test]
    fn majority_partition_wins() {
        let draws = [draw(&[0, 1, 1]), draw(&[0, 0, 0]), draw(&[0, 0, 0])];
        let c = cocluster_matrix(&draws).unwrap();
        let losses: Vec<f64> = draws.iter().map(|d| partition_loss(&d.labels, &c)).collect();
        // c_12 = c_13 = 2/3, c_23 = 1: draw 0 loses 4 * (2/3)^2, the others 4 * (1/3)^2
        assert!((losses[0] - 16.0 / 9.0).abs() < 1e-12);
        assert!((losses[1] - 4.0 / 9.0).abs() < 1e-12);
        assert_eq!(least_squares_partition(&draws, &c).unwrap().index, 1);
    }

    #[test]
    fn empty_draws_are_rejected() {
        assert!(cocluster_matrix(&[]).is_err());
    }

    #[test]
    fn mixture_hand_values() {
        let m = PoissonMixture::uniform(vec![1.0, 3.0]).unwrap();
        let expected = ((-1f64).exp() + (-3f64).exp()) / 2.0;
        assert!((m.pmf(0) - expected).abs() < 1e-16);
        assert_eq!(m.mean(), 2.0);
        let single = PoissonMixture::uniform(vec![1.0]).unwrap();
        assert!((single.cdf(0) - (-1f64).exp()).abs() < 1e-16);
        assert_eq!(single.cdf(-1), 0.0);
        let weighted = PoissonMixture::new(vec![0.0, 4.0], vec![0.25, 0.75]).unwrap();
        assert_eq!(weighted.mean(), 3.0);
    }

    #[test]
    fn equal_components_collapse() {
        let a = PoissonMixture::uniform(vec![2.5, 2.5]).unwrap();
        let b = PoissonMixture::uniform(vec![2.5]).unwrap();
        for y in 0..20 {
            assert!((a.pmf(y) - b.pmf(y)).abs() < 1e-16);
            assert!((a.cdf(y as i64) - b.cdf(y as i64)).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_rate_component() {
        let m = PoissonMixture::uniform(vec![0.0]).unwrap();
        assert_eq!(m.pmf(0), 1.0);
        assert_eq!(m.pmf(1), 0.0);
        assert_eq!(m.cdf(0), 1.0);
    }

    #[test]
    fn cdf_reaches_one() {
        let m = PoissonMixture::uniform(vec![0.5, 12.0, 140.0]).unwrap();
        let y = (140.0 + 20.0 * 140f64.sqrt() + 50.0) as i64;
        assert!((m.cdf(y) - 1.0).abs() < 1e-9);
        let table = m.pmf_table(0.9999);
        assert!(table.last().unwrap().2 >= 0.9999);
        assert!(table.windows(2).all(|w| w[0].2 <= w[1].2));
    }

    #[test]
    fn cdf_increments_match_the_mass_function_in_the_upper_tail() {
        let m = PoissonMixture::new(vec![0.05, 90.0], vec![0.3, 0.7]).unwrap();
        for y in [0u64, 1, 60, 90, 130, 150] {
            let p = m.pmf(y);
            assert!((m.cdf_increment(y) / p - 1.0).abs() < 1e-12, "y = {y}");
        }
    }

    #[test]
    fn large_rates_keep_their_mass() {
        for rate in [800.0, 1e4, 2.5e5] {
            let m = PoissonMixture::uniform(vec![rate]).unwrap();
            let y = rate as i64;
            // median of a Poisson is within one of its mean
            assert!((m.cdf(y) - 0.5).abs() < 0.01, "rate {rate}: {}", m.cdf(y));
            assert!(m.cdf(m.support_bound() as i64) > 1.0 - 1e-12);
        }
    }

    #[test]
    fn quantiles() {
        let m = PoissonMixture::uniform(vec![4.0]).unwrap();
        let median = m.quantile(0.5);
        assert!(m.cdf(median as i64) >= 0.5);
        assert!(m.cdf(median as i64 - 1) < 0.5);
        assert_eq!(m.quantile(0.0), 0);
    }

    #[test]
    fn weights_must_sum_to_one() {
        assert!(PoissonMixture::new(vec![1.0, 2.0], vec![0.5, 0.6]).is_err());
        assert!(PoissonMixture::new(vec![-1.0], vec![1.0]).is_err());
    }

    #[test]
    fn predictive_rates_follow_the_draws() {
        let counts = CountSeries::from_rows(vec![vec![2, 5], vec![1, 3]]).unwrap();
        let net = crate::graph::Network::new(vec!["a".into(), "b".into()], &[(0, 1)], None).unwrap();
        let p = crate::model::build_predictors(&counts, &net, crate::model::PredictorMode::Raw, None).unwrap();
        let d = Draw {
            labels: vec![0, 0],
            thetas: vec![ClusterParams([1.0, 0.5, 0.25])],
            log_post: 0.0,
        };
        let horizon = rate_inputs(&p, &counts, 3).unwrap();
        let dist = predictive_pmf(std::slice::from_ref(&d), None, &horizon).unwrap();
        // node a: 1 + 0.5 * 3 + 0.25 * 5
        assert!((dist.point_forecast(0) - 3.75).abs() < 1e-12);
        let inside = rate_inputs(&p, &counts, 2).unwrap();
        let dist = predictive_pmf(&[d], None, &inside).unwrap();
        assert!((dist.point_forecast(1) - (1.0 + 0.5 * 2.0 + 0.25 * 1.0)).abs() < 1e-12);
        assert!(rate_inputs(&p, &counts, 4).is_err());
        assert!(rate_inputs(&p, &counts, 1).is_err());
    }

    #[test]
    fn pooled_weights() {
        let chain = |n: usize, c: usize| PosteriorSamples {
            chain: c,
            draws: vec![draw(&[0, 0]); n],
            acceptance: Default::default(),
            rw_step: 0.1,
        };
        let (draws, w) = pool_chains(&[chain(2, 0), chain(4, 1)], Some(&[0.8, 0.2])).unwrap();
        assert_eq!(draws.len(), 6);
        assert_eq!(w, vec![0.4, 0.4, 0.05, 0.05, 0.05, 0.05]);
        assert!(pool_chains(&[chain(2, 0)], Some(&[0.5, 0.5])).is_err());
    }

    proptest! {
        #[test]
        fn cocluster_ignores_label_names(
            labels in proptest::collection::vec(proptest::collection::vec(0usize..4, 5), 1..6),
        ) {
            let draws: Vec<Draw> = labels.iter().map(|l| draw(l)).collect();
            // swap names 0 <-> 1 inside each draw
            let renamed: Vec<Draw> = labels
                .iter()
                .map(|l| draw(&l.iter().map(|&x| match x { 0 => 1, 1 => 0, o => o }).collect::<Vec<_>>()))
                .collect();
            prop_assert_eq!(cocluster_matrix(&draws).unwrap(), cocluster_matrix(&renamed).unwrap());
            let c = cocluster_matrix(&draws).unwrap();
            for i in 0..5 {
                prop_assert_eq!(c.get(i, i), 1.0);
                for j in 0..5 {
                    prop_assert_eq!(c.get(i, j), c.get(j, i));
                }
            }
        }

        #[test]
        fn least_squares_matches_brute_force(
            labels in proptest::collection::vec(proptest::collection::vec(0usize..3, 4), 1..8),
        ) {
            let draws: Vec<Draw> = labels.iter().map(|l| draw(l)).collect();
            let c = cocluster_matrix(&draws).unwrap();
            let ls = least_squares_partition(&draws, &c).unwrap();
            // independent loss via explicit pair enumeration on the raw labels
            let m = labels.len() as f64;
            let loss = |z: &[usize]| {
                let mut total = 0.0;
                for i in 0..4 {
                    for j in 0..4 {
                        if i == j { continue; }
                        let freq = labels.iter().filter(|l| l[i] == l[j]).count() as f64 / m;
                        let ind = (z[i] == z[j]) as u8 as f64;
                        total += (ind - freq) * (ind - freq);
                    }
                }
                total
            };
            let losses: Vec<f64> = labels.iter().map(|l| loss(l)).collect();
            let best = losses.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assert!((ls.loss - best).abs() < 1e-12);
            let first = losses.iter().position(|l| (l - best).abs() < 1e-12).unwrap();
            prop_assert_eq!(ls.index, first);
        }

        #[test]
        fn cdf_is_monotone_and_normalized(
            rates in proptest::collection::vec(0.0f64..60.0, 1..6),
        ) {
            let m = PoissonMixture::uniform(rates).unwrap();
            let mut prev = 0.0;
            for y in -1..=m.support_bound() as i64 {
                let c = m.cdf(y);
                prop_assert!(c >= prev - 1e-15);
                prev = c;
            }
            prop_assert!((prev - 1.0).abs() < 1e-9);
        }
    }
}
