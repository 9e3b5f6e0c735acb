#ifndef PNARM_H
#define PNARM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum pnarm_prior_kind {
  /**
   * Distance-dependent partition prior with `alpha` and `h`.
   */
  PNARM_PRIOR_KIND_DDP = 0,
  /**
   * Finite mixture with `components` slots and concentration `gamma0`.
   */
  PNARM_PRIOR_KIND_FMM = 1,
} pnarm_prior_kind;

/**
 * Result of a call. The data error codes match the command-line tool's exit
 * codes.
 */
typedef enum pnarm_status {
  PNARM_STATUS_OK = 0,
  PNARM_STATUS_INVALID_CONFIG = 2,
  PNARM_STATUS_INVALID_DATA = 3,
  PNARM_STATUS_MISMATCH = 4,
  PNARM_STATUS_NULL_POINTER = 5,
  PNARM_STATUS_OUT_OF_RANGE = 6,
  PNARM_STATUS_PANIC = 7,
} pnarm_status;

typedef struct pnarm_counts pnarm_counts;

typedef struct pnarm_fit pnarm_fit;

typedef struct pnarm_forecast pnarm_forecast;

typedef struct pnarm_network pnarm_network;

/**
 * Model, prior and sampler settings for [`pnarm_fit_run`]. Start from
 * [`pnarm_fit_options_default`].
 */
typedef struct pnarm_fit_options {
  enum pnarm_prior_kind prior;
  double alpha;
  double h;
  size_t components;
  double gamma0;
  /**
   * Gamma shape and rate of each coefficient.
   */
  double coeff_shape;
  double coeff_rate;
  /**
   * Population-scaled intercept and lag; needs populations on the network.
   */
  bool population_adjusted;
  /**
   * Population scale; 0 uses the mean population.
   */
  double scale;
  /**
   * Leading steps used for fitting; 0 uses every step.
   */
  size_t train_steps;
  size_t iterations;
  size_t burn_in;
  size_t thinning;
  size_t chains;
  size_t aux_components;
  double rw_step;
  bool adapt;
  uint64_t seed;
} pnarm_fit_options;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *pnarm_version(void);

/**
 * Message of the most recent failure on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *pnarm_last_error(void);

struct pnarm_fit_options pnarm_fit_options_default(void);

/**
 * Builds a network on `n_nodes` nodes from `n_edges` undirected edges
 * `(from[e], to[e])`. `population` holds `n_nodes` values or is NULL.
 *
 * # Safety
 * `from` and `to` must point to `n_edges` readable values, `population` to
 * `n_nodes` values when non-null, and `out` must be writable.
 */
enum pnarm_status pnarm_network_new(size_t n_nodes,
                                    const size_t *from,
                                    const size_t *to,
                                    size_t n_edges,
                                    const double *population,
                                    struct pnarm_network **out);

/**
 * # Safety
 * `net` must be NULL or a handle from [`pnarm_network_new`] not yet freed.
 */
void pnarm_network_free(struct pnarm_network *net);

/**
 * Number of nodes, or 0 for a NULL handle.
 *
 * # Safety
 * `net` must be NULL or a live network handle.
 */
size_t pnarm_network_len(const struct pnarm_network *net);

/**
 * Copies a node-by-time count matrix (`n_nodes` rows of `n_steps`).
 *
 * # Safety
 * `values` must point to `n_nodes * n_steps` readable values and `out` must
 * be writable.
 */
enum pnarm_status pnarm_counts_new(const uint64_t *values,
                                   size_t n_nodes,
                                   size_t n_steps,
                                   struct pnarm_counts **out);

/**
 * # Safety
 * `counts` must be NULL or a handle from [`pnarm_counts_new`] not yet freed.
 */
void pnarm_counts_free(struct pnarm_counts *counts);

/**
 * Samples the posterior. `options` may be NULL for the defaults.
 *
 * # Safety
 * `net` and `counts` must be live handles, `options` NULL or readable, and
 * `out` writable.
 */
enum pnarm_status pnarm_fit_run(const struct pnarm_network *net,
                                const struct pnarm_counts *counts,
                                const struct pnarm_fit_options *options,
                                struct pnarm_fit **out);

/**
 * # Safety
 * `fit` must be NULL or a handle from [`pnarm_fit_run`] not yet freed.
 */
void pnarm_fit_free(struct pnarm_fit *fit);

/**
 * # Safety
 * `fit` must be NULL or a live fit handle.
 */
size_t pnarm_fit_n_chains(const struct pnarm_fit *fit);

/**
 * # Safety
 * `fit` must be NULL or a live fit handle.
 */
size_t pnarm_fit_n_nodes(const struct pnarm_fit *fit);

/**
 * Retained draws of one chain.
 *
 * # Safety
 * `fit` must be a live fit handle and `out` writable.
 */
enum pnarm_status pnarm_fit_n_draws(const struct pnarm_fit *fit, size_t chain, size_t *out);

/**
 * Copies one draw: canonical cluster labels into `labels` (`n_nodes`
 * entries) and, when `thetas` is non-null, each node's coefficients into
 * `thetas` (`n_nodes` rows of 3).
 *
 * # Safety
 * `fit` must be a live fit handle, `labels` writable for `n_nodes` values
 * and `thetas` NULL or writable for `3 * n_nodes` values.
 */
enum pnarm_status pnarm_fit_draw(const struct pnarm_fit *fit,
                                 size_t chain,
                                 size_t draw,
                                 size_t *labels,
                                 double *thetas);

/**
 * Posterior co-clustering frequencies over every chain, `n_nodes` squared
 * values.
 *
 * # Safety
 * `fit` must be a live fit handle and `out` writable for `n_nodes^2` values.
 */
enum pnarm_status pnarm_fit_cocluster(const struct pnarm_fit *fit, double *out);

/**
 * The sampled partition closest to the co-clustering matrix in squared
 * error. `loss` may be NULL.
 *
 * # Safety
 * `fit` must be a live fit handle, `labels` writable for `n_nodes` values
 * and `loss` NULL or writable.
 */
enum pnarm_status pnarm_fit_least_squares(const struct pnarm_fit *fit,
                                          size_t *labels,
                                          double *loss);

/**
 * Posterior predictive for the step after the training data. `chain_weights`
 * holds one weight per chain or is NULL for equal weights.
 *
 * # Safety
 * `fit` must be a live fit handle, `chain_weights` NULL or readable for
 * `n_weights` values, and `out` writable.
 */
enum pnarm_status pnarm_fit_forecast(const struct pnarm_fit *fit,
                                     const double *chain_weights,
                                     size_t n_weights,
                                     struct pnarm_forecast **out);

/**
 * # Safety
 * `forecast` must be NULL or a handle from [`pnarm_fit_forecast`] not yet
 * freed.
 */
void pnarm_forecast_free(struct pnarm_forecast *forecast);

/**
 * 1-based time step being forecast, or 0 for a NULL handle.
 *
 * # Safety
 * `forecast` must be NULL or a live forecast handle.
 */
size_t pnarm_forecast_step(const struct pnarm_forecast *forecast);

/**
 * Predictive mean of one node.
 *
 * # Safety
 * `forecast` must be a live forecast handle and `out` writable.
 */
enum pnarm_status pnarm_forecast_mean(const struct pnarm_forecast *forecast,
                                      size_t node,
                                      double *out);

/**
 * Predictive probability of count `y` at one node.
 *
 * # Safety
 * `forecast` must be a live forecast handle and `out` writable.
 */
enum pnarm_status pnarm_forecast_pmf(const struct pnarm_forecast *forecast,
                                     size_t node,
                                     uint64_t y,
                                     double *out);

/**
 * Predictive probability of a count at most `y`; 0 for negative `y`.
 *
 * # Safety
 * `forecast` must be a live forecast handle and `out` writable.
 */
enum pnarm_status pnarm_forecast_cdf(const struct pnarm_forecast *forecast,
                                     size_t node,
                                     int64_t y,
                                     double *out);

/**
 * Smallest count whose predictive CDF reaches `q`.
 *
 * # Safety
 * `forecast` must be a live forecast handle and `out` writable.
 */
enum pnarm_status pnarm_forecast_quantile(const struct pnarm_forecast *forecast,
                                          size_t node,
                                          double q,
                                          uint64_t *out);

/**
 * Stacking weights for `n_components` predictives from their densities at
 * `n_cells` observations, `densities[cell * n_components + c]`. Writes
 * `n_components` weights and, when non-null, the summed log objective.
 *
 * # Safety
 * `densities` must be readable for `n_cells * n_components` values,
 * `weights` writable for `n_components` values and `objective` NULL or
 * writable.
 */
enum pnarm_status pnarm_stacking_weights(const double *densities,
                                         size_t n_cells,
                                         size_t n_components,
                                         double *weights,
                                         double *objective);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PNARM_H */
