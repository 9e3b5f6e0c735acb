//! C ABI over the `pnarm` library.
//!
//! Every fallible function returns a [`PnarmStatus`]; on failure a message is
//! available from [`pnarm_last_error`] on the same thread. Objects are opaque
//! handles created by `*_new`/`*_run` functions and released with the
//! matching `*_free`. Matrices are row-major and node indices are 0-based.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use pnarm::eval::stacking_weights;
use pnarm::mcmc::{run_multichain, McmcConfig, PosteriorSamples};
use pnarm::model::{build_predictors, CountSeries, ModelData, PredictorMode, Predictors, TimeWindow};
use pnarm::posterior::{cocluster_matrix, least_squares_partition, pool_chains, predictive_pmf, rate_inputs};
use pnarm::prior::{CoefficientPrior, DdpHyper, PartitionPrior};
use pnarm::{Network, PredictiveDistribution};

/// Result of a call. The data error codes match the command-line tool's exit
/// codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PnarmStatus {
    Ok = 0,
    InvalidConfig = 2,
    InvalidData = 3,
    Mismatch = 4,
    NullPointer = 5,
    OutOfRange = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PnarmPriorKind {
    /// Distance-dependent partition prior with `alpha` and `h`.
    Ddp = 0,
    /// Finite mixture with `components` slots and concentration `gamma0`.
    Fmm = 1,
}

/// Model, prior and sampler settings for [`pnarm_fit_run`]. Start from
/// [`pnarm_fit_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PnarmFitOptions {
    pub prior: PnarmPriorKind,
    pub alpha: f64,
    pub h: f64,
    pub components: usize,
    pub gamma0: f64,
    /// Gamma shape and rate of each coefficient.
    pub coeff_shape: f64,
    pub coeff_rate: f64,
    /// Population-scaled intercept and lag; needs populations on the network.
    pub population_adjusted: bool,
    /// Population scale; 0 uses the mean population.
    pub scale: f64,
    /// Leading steps used for fitting; 0 uses every step.
    pub train_steps: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub chains: usize,
    pub aux_components: usize,
    pub rw_step: f64,
    pub adapt: bool,
    pub seed: u64,
}

pub struct PnarmNetwork(Network);

pub struct PnarmCounts(CountSeries);

pub struct PnarmFit {
    chains: Vec<PosteriorSamples>,
    counts: CountSeries,
    predictors: Predictors,
}

pub struct PnarmForecast(PredictiveDistribution);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(PnarmStatus, String);

impl From<pnarm::Error> for Failure {
    fn from(e: pnarm::Error) -> Self {
        let status = match e.exit_code() {
            2 => PnarmStatus::InvalidConfig,
            4 => PnarmStatus::Mismatch,
            _ => PnarmStatus::InvalidData,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(PnarmStatus::NullPointer, format!("{what} is null"))
}

fn out_of_range(msg: String) -> Failure {
    Failure(PnarmStatus::OutOfRange, msg)
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> PnarmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PnarmStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_owned());
            set_error(format!("panic: {msg}"));
            PnarmStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn as_slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn as_mut_slice<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn write<T>(p: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    p.write(value);
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pnarm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the most recent failure on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pnarm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn pnarm_fit_options_default() -> PnarmFitOptions {
    let mcmc = McmcConfig::default();
    PnarmFitOptions {
        prior: PnarmPriorKind::Ddp,
        alpha: 1.0,
        h: 1.0,
        components: 2,
        gamma0: 1.0,
        coeff_shape: 1.0,
        coeff_rate: 1.0,
        population_adjusted: false,
        scale: 0.0,
        train_steps: 0,
        iterations: mcmc.iterations,
        burn_in: mcmc.burn_in,
        thinning: mcmc.thinning,
        chains: mcmc.chains,
        aux_components: mcmc.aux_components,
        rw_step: mcmc.rw_step,
        adapt: mcmc.adapt,
        seed: mcmc.seed,
    }
}

/// Builds a network on `n_nodes` nodes from `n_edges` undirected edges
/// `(from[e], to[e])`. `population` holds `n_nodes` values or is NULL.
///
/// # Safety
/// `from` and `to` must point to `n_edges` readable values, `population` to
/// `n_nodes` values when non-null, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pnarm_network_new(
    n_nodes: usize,
    from: *const usize,
    to: *const usize,
    n_edges: usize,
    population: *const f64,
    out: *mut *mut PnarmNetwork,
) -> PnarmStatus {
    guard(|| {
        let from = as_slice(from, n_edges, "from")?;
        let to = as_slice(to, n_edges, "to")?;
        let population = if population.is_null() {
            None
        } else {
            Some(as_slice(population, n_nodes, "population")?.to_vec())
        };
        let edges: Vec<(usize, usize)> = from.iter().copied().zip(to.iter().copied()).collect();
        let ids = (0..n_nodes).map(|i| i.to_string()).collect();
        let net = Network::new(ids, &edges, population)?;
        write(out, Box::into_raw(Box::new(PnarmNetwork(net))), "out")
    })
}

/// # Safety
/// `net` must be NULL or a handle from [`pnarm_network_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pnarm_network_free(net: *mut PnarmNetwork) {
    free(net)
}

/// Number of nodes, or 0 for a NULL handle.
///
/// # Safety
/// `net` must be NULL or a live network handle.
#[no_mangle]
pub unsafe extern "C" fn pnarm_network_len(net: *const PnarmNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.0.len())
}

/// Copies a node-by-time count matrix (`n_nodes` rows of `n_steps`).
///
/// # Safety
/// `values` must point to `n_nodes * n_steps` readable values and `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn pnarm_counts_new(
    values: *const u64,
    n_nodes: usize,
    n_steps: usize,
    out: *mut *mut PnarmCounts,
) -> PnarmStatus {
    guard(|| {
        let len = n_nodes
            .checked_mul(n_steps)
            .ok_or_else(|| out_of_range("count matrix size overflows".into()))?;
        let values = as_slice(values, len, "values")?;
        let rows = if n_steps == 0 {
            vec![Vec::new(); n_nodes]
        } else {
            values.chunks(n_steps).map(<[u64]>::to_vec).collect()
        };
        let counts = CountSeries::from_rows(rows)?;
        write(out, Box::into_raw(Box::new(PnarmCounts(counts))), "out")
    })
}

/// # Safety
/// `counts` must be NULL or a handle from [`pnarm_counts_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pnarm_counts_free(counts: *mut PnarmCounts) {
    free(counts)
}

fn build_fit(net: &Network, counts: &CountSeries, opts: &PnarmFitOptions) -> Result<PnarmFit, Failure> {
    let steps = counts.n_steps();
    let train = if opts.train_steps == 0 { steps } else { opts.train_steps };
    if train > steps {
        return Err(out_of_range(format!("train_steps {train} exceeds the {steps} observed steps")));
    }
    let counts = counts.truncated(train)?;
    let mode = if opts.population_adjusted {
        PredictorMode::PopulationAdjusted
    } else {
        PredictorMode::Raw
    };
    let scale = (opts.scale != 0.0).then_some(opts.scale);
    let predictors = build_predictors(&counts, net, mode, scale)?;
    let prior = match opts.prior {
        PnarmPriorKind::Ddp => PartitionPrior::ddp(net, DdpHyper { alpha: opts.alpha, h: opts.h })?,
        PnarmPriorKind::Fmm => PartitionPrior::fmm(opts.components, opts.gamma0)?,
    };
    let coeff = CoefficientPrior::gamma(opts.coeff_shape, opts.coeff_rate)?;
    let config = McmcConfig {
        iterations: opts.iterations,
        burn_in: opts.burn_in,
        thinning: opts.thinning,
        aux_components: opts.aux_components,
        rw_step: opts.rw_step,
        adapt: opts.adapt,
        seed: opts.seed,
        chains: opts.chains,
        random_scan: false,
    };
    let data = ModelData::new(counts.clone(), predictors.clone())?;
    let chains = run_multichain(&data, TimeWindow::full(train), &prior, &coeff, &config)?;
    Ok(PnarmFit {
        chains,
        counts,
        predictors,
    })
}

/// Samples the posterior. `options` may be NULL for the defaults.
///
/// # Safety
/// `net` and `counts` must be live handles, `options` NULL or readable, and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pnarm_fit_run(
    net: *const PnarmNetwork,
    counts: *const PnarmCounts,
    options: *const PnarmFitOptions,
    out: *mut *mut PnarmFit,
) -> PnarmStatus {
    guard(|| {
        let net = &as_ref(net, "net")?.0;
        let counts = &as_ref(counts, "counts")?.0;
        let opts = options.as_ref().copied().unwrap_or_else(|| pnarm_fit_options_default());
        let fit = build_fit(net, counts, &opts)?;
        write(out, Box::into_raw(Box::new(fit)), "out")
    })
}

/// # Safety
/// `fit` must be NULL or a handle from [`pnarm_fit_run`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pnarm_fit_free(fit: *mut PnarmFit) {
    free(fit)
}

/// # Safety
/// `fit` must be NULL or a live fit handle.
#[no_mangle]
pub unsafe extern "C" fn pnarm_fit_n_chains(fit: *const PnarmFit) -> usize {
    fit.as_ref().map_or(0, |f| f.chains.len())
}

/// # Safety
/// `fit` must be NULL or a live fit handle.
#[no_mangle]
pub unsafe extern "C" fn pnarm_fit_n_nodes(fit: *const PnarmFit) -> usize {
    fit.as_ref().map_or(0, |f| f.counts.n_nodes())
}

/// Retained draws of one chain.
///
/// # Safety
/// `fit` must be a live fit handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pnarm_fit_n_draws(fit: *const PnarmFit, chain: usize, out: *mut usize) -> PnarmStatus {
    guard(|| {
        let fit = as_ref(fit, "fit")?;
        let c = fit
            .chains
            .get(chain)
            .ok_or_else(|| out_of_range(format!("chain {chain} of {}", fit.chains.len())))?;
        write(out, c.draws.len(), "out")
    })
}

/// Copies one draw: canonical cluster labels into `labels` (`n_nodes`
/// entries) and, when `thetas` is non-null, each node's coefficients into
/// `thetas` (`n_nodes` rows of 3).
///
/// # Safety
/// `fit` must be a live fit handle, `labels` writable for `n_nodes` values
/// and `thetas` NULL or writable for `3 * n_nodes` values.
#[no_mangle]
pub unsafe extern "C" fn pnarm_fit_draw(
    fit: *const PnarmFit,
    chain: usize,
    draw: usize,
    labels: *mut usize,
    thetas: *mut f64,
) -> PnarmStatus {
    guard(|| {
        let fit = as_ref(fit, "fit")?;
        let d = fit
            .chains
            .get(chain)
            .and_then(|c| c.draws.get(draw))
            .ok_or_else(|| out_of_range(format!("no draw {draw} in chain {chain}")))?;
        let n = d.labels.len();
        as_mut_slice(labels, n, "labels")?.copy_from_slice(&d.labels);
        if !thetas.is_null() {
            let out = as_mut_slice(thetas, 3 * n, "thetas")?;
            for (i, row) in out.chunks_mut(3).enumerate() {
                row.copy_from_slice(&d.theta_of(i).0);
            }
        }
        Ok(())
    })
}

/// Posterior co-clustering frequencies over every chain, `n_nodes` squared
/// values.
///
/// # Safety
/// `fit` must be a live fit handle and `out` writable for `n_nodes^2` values.
#[no_mangle]
pub unsafe extern "C" fn pnarm_fit_cocluster(fit: *const PnarmFit, out: *mut f64) -> PnarmStatus {
    guard(|| {
        let fit = as_ref(fit, "fit")?;
        let (draws, _) = pool_chains(&fit.chains, None)?;
        let c = cocluster_matrix(&draws)?;
        let n = c.len();
        let out = as_mut_slice(out, n * n, "out")?;
        for (dst, row) in out.chunks_mut(n.max(1)).zip(c.rows()) {
            dst.copy_from_slice(row);
        }
        Ok(())
    })
}

/// The sampled partition closest to the co-clustering matrix in squared
/// error. `loss` may be NULL.
///
/// # Safety
/// `fit` must be a live fit handle, `labels` writable for `n_nodes` values
/// and `loss` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn pnarm_fit_least_squares(fit: *const PnarmFit, labels: *mut usize, loss: *mut f64) -> PnarmStatus {
    guard(|| {
        let fit = as_ref(fit, "fit")?;
        let (draws, _) = pool_chains(&fit.chains, None)?;
        let c = cocluster_matrix(&draws)?;
        let ls = least_squares_partition(&draws, &c)?;
        as_mut_slice(labels, ls.labels.len(), "labels")?.copy_from_slice(&ls.labels);
        if !loss.is_null() {
            loss.write(ls.loss);
        }
        Ok(())
    })
}

/// Posterior predictive for the step after the training data. `chain_weights`
/// holds one weight per chain or is NULL for equal weights.
///
/// # Safety
/// `fit` must be a live fit handle, `chain_weights` NULL or readable for
/// `n_weights` values, and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pnarm_fit_forecast(
    fit: *const PnarmFit,
    chain_weights: *const f64,
    n_weights: usize,
    out: *mut *mut PnarmForecast,
) -> PnarmStatus {
    guard(|| {
        let fit = as_ref(fit, "fit")?;
        let weights = if chain_weights.is_null() {
            None
        } else {
            Some(as_slice(chain_weights, n_weights, "chain_weights")?)
        };
        let (draws, w) = pool_chains(&fit.chains, weights)?;
        let inputs = rate_inputs(&fit.predictors, &fit.counts, fit.counts.n_steps() + 1)?;
        let dist = predictive_pmf(&draws, Some(&w), &inputs)?;
        write(out, Box::into_raw(Box::new(PnarmForecast(dist))), "out")
    })
}

/// # Safety
/// `forecast` must be NULL or a handle from [`pnarm_fit_forecast`] not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn pnarm_forecast_free(forecast: *mut PnarmForecast) {
    free(forecast)
}

/// 1-based time step being forecast, or 0 for a NULL handle.
///
/// # Safety
/// `forecast` must be NULL or a live forecast handle.
#[no_mangle]
pub unsafe extern "C" fn pnarm_forecast_step(forecast: *const PnarmForecast) -> usize {
    forecast.as_ref().map_or(0, |f| f.0.step)
}

unsafe fn node_mixture<'a>(
    forecast: *const PnarmForecast,
    node: usize,
) -> Result<&'a pnarm::PoissonMixture, Failure> {
    let f = &as_ref(forecast, "forecast")?.0;
    if node >= f.n_nodes() {
        return Err(out_of_range(format!("node {node} of {}", f.n_nodes())));
    }
    Ok(f.node(node))
}

/// Predictive mean of one node.
///
/// # Safety
/// `forecast` must be a live forecast handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pnarm_forecast_mean(forecast: *const PnarmForecast, node: usize, out: *mut f64) -> PnarmStatus {
    guard(|| write(out, node_mixture(forecast, node)?.mean(), "out"))
}

/// Predictive probability of count `y` at one node.
///
/// # Safety
/// `forecast` must be a live forecast handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pnarm_forecast_pmf(
    forecast: *const PnarmForecast,
    node: usize,
    y: u64,
    out: *mut f64,
) -> PnarmStatus {
    guard(|| write(out, node_mixture(forecast, node)?.pmf(y), "out"))
}

/// Predictive probability of a count at most `y`; 0 for negative `y`.
///
/// # Safety
/// `forecast` must be a live forecast handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pnarm_forecast_cdf(
    forecast: *const PnarmForecast,
    node: usize,
    y: i64,
    out: *mut f64,
) -> PnarmStatus {
    guard(|| write(out, node_mixture(forecast, node)?.cdf(y), "out"))
}

/// Smallest count whose predictive CDF reaches `q`.
///
/// # Safety
/// `forecast` must be a live forecast handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pnarm_forecast_quantile(
    forecast: *const PnarmForecast,
    node: usize,
    q: f64,
    out: *mut u64,
) -> PnarmStatus {
    guard(|| {
        if !(0.0..=1.0).contains(&q) {
            return Err(out_of_range(format!("quantile level {q} outside [0, 1]")));
        }
        write(out, node_mixture(forecast, node)?.quantile(q), "out")
    })
}

/// Stacking weights for `n_components` predictives from their densities at
/// `n_cells` observations, `densities[cell * n_components + c]`. Writes
/// `n_components` weights and, when non-null, the summed log objective.
///
/// # Safety
/// `densities` must be readable for `n_cells * n_components` values,
/// `weights` writable for `n_components` values and `objective` NULL or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn pnarm_stacking_weights(
    densities: *const f64,
    n_cells: usize,
    n_components: usize,
    weights: *mut f64,
    objective: *mut f64,
) -> PnarmStatus {
    guard(|| {
        let len = n_cells
            .checked_mul(n_components)
            .ok_or_else(|| out_of_range("density matrix size overflows".into()))?;
        let d = as_slice(densities, len, "densities")?;
        let rows: Vec<Vec<f64>> = d.chunks(n_components.max(1)).map(<[f64]>::to_vec).collect();
        let result = stacking_weights(&rows)?;
        as_mut_slice(weights, n_components, "weights")?.copy_from_slice(&result.weights);
        if !objective.is_null() {
            objective.write(result.objective);
        }
        Ok(())
    })
}
