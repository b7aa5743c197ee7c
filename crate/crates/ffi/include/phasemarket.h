#ifndef PHASEMARKET_H
#define PHASEMARKET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum PmStatus {
  PM_STATUS_OK = 0,
  PM_STATUS_NULL_POINTER = 1,
  PM_STATUS_INVALID_CONFIG = 2,
  PM_STATUS_UNKNOWN_KEY = 3,
  PM_STATUS_BAD_VALUE = 4,
  PM_STATUS_IO = 5,
  PM_STATUS_ANALYSIS = 6,
  PM_STATUS_BUFFER_TOO_SMALL = 7,
  PM_STATUS_INVALID_UTF8 = 8,
  PM_STATUS_PANIC = 9,
} PmStatus;

/**
 * Simulation parameters.
 */
typedef struct PmConfig PmConfig;

/**
 * Ensemble price histogram.
 */
typedef struct PmHistogram PmHistogram;

/**
 * Outcome of one simulation.
 */
typedef struct PmResult PmResult;

/**
 * Plateau and peak of a histogram. Peak fields are NaN and
 * `has_gaussian` is 0 when no peak was fitted; `shoulder_price` is 0 when
 * no shoulder was found.
 */
typedef struct PmDecomposition {
  double split_price;
  double f0;
  double f0_err;
  int32_t plateau_found;
  int32_t has_gaussian;
  double gauss_amplitude;
  double gauss_mean;
  double gauss_sigma;
  uint32_t shoulder_price;
} PmDecomposition;

/**
 * `F0 = g0 (alpha - alpha_c)^gamma` with one-sigma errors.
 */
typedef struct PmPowerLaw {
  double g0;
  double g0_err;
  double alpha_c;
  double alpha_c_err;
  double gamma;
  double gamma_err;
  double residual;
  size_t n_points;
} PmPowerLaw;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the calling thread's last failure, or null. Valid until the
 * next failing call on this thread.
 */
const char *pm_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pm_version(void);

/**
 * Buy-side utility `alpha / price + last_delta`.
 */
double pm_call_utility(double alpha, uint32_t price, int8_t last_delta);

/**
 * Sell-side utility `price - beta * last_delta`.
 */
double pm_put_utility(double beta, uint32_t price, int8_t last_delta);

/**
 * New configuration: full-scale defaults, or the desk profile when `desk`
 * is non-zero.
 */
struct PmConfig *pm_config_new(int32_t desk);

/**
 * Parses a TOML configuration document.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum PmStatus pm_config_from_toml(const char *toml, struct PmConfig **out);

/**
 * Sets one configuration key from its textual value.
 *
 * # Safety
 * `cfg` must come from this library; `key` and `value` must be
 * NUL-terminated strings.
 */
enum PmStatus pm_config_set(struct PmConfig *cfg, const char *key, const char *value);

/**
 * `PM_STATUS_OK` when the configuration is valid.
 *
 * # Safety
 * `cfg` must come from this library.
 */
enum PmStatus pm_config_validate(const struct PmConfig *cfg);

/**
 * # Safety
 * `cfg` must come from this library or be null; it is invalid afterwards.
 */
void pm_config_free(struct PmConfig *cfg);

/**
 * Runs one simulation with the given seed.
 *
 * # Safety
 * `cfg` must come from this library; `out` must be writable.
 */
enum PmStatus pm_simulate(const struct PmConfig *cfg, uint64_t seed, struct PmResult **out);

/**
 * Number of stocks in a result.
 *
 * # Safety
 * `res` must come from this library.
 */
size_t pm_result_n_stocks(const struct PmResult *res);

/**
 * Copies final prices into `buf` (`len` entries available).
 *
 * # Safety
 * `res` must come from this library; `buf` must hold `len` values.
 */
enum PmStatus pm_result_prices(const struct PmResult *res, uint32_t *buf, size_t len);

/**
 * Trades (buys plus sells) in the final step.
 *
 * # Safety
 * `res` must come from this library.
 */
size_t pm_result_final_trades(const struct PmResult *res);

/**
 * Susceptibility of the simulation's ledger.
 *
 * # Safety
 * `res` must come from this library; `chi` must be writable.
 */
enum PmStatus pm_result_chi(const struct PmResult *res, double *chi);

/**
 * # Safety
 * `res` must come from this library or be null; it is invalid afterwards.
 */
void pm_result_free(struct PmResult *res);

/**
 * Runs `n_sims` simulations seeded from `base_seed` and accumulates their
 * final prices. `workers` = 0 uses every core.
 *
 * # Safety
 * `cfg` must come from this library; `out` must be writable.
 */
enum PmStatus pm_ensemble_histogram(const struct PmConfig *cfg,
                                    size_t n_sims,
                                    uint64_t base_seed,
                                    size_t workers,
                                    struct PmHistogram **out);

/**
 * Lowest price bin.
 *
 * # Safety
 * `h` must come from this library.
 */
uint32_t pm_histogram_floor(const struct PmHistogram *h);

/**
 * Number of bins, from the floor to the highest observed price.
 *
 * # Safety
 * `h` must come from this library.
 */
size_t pm_histogram_len(const struct PmHistogram *h);

/**
 * Copies bin counts into `buf`.
 *
 * # Safety
 * `h` must come from this library; `buf` must hold `len` values.
 */
enum PmStatus pm_histogram_counts(const struct PmHistogram *h, uint64_t *buf, size_t len);

/**
 * Plateau/peak decomposition with default options.
 *
 * # Safety
 * `h` must come from this library; `out` must be writable.
 */
enum PmStatus pm_histogram_decompose(const struct PmHistogram *h, struct PmDecomposition *out);

/**
 * # Safety
 * `h` must come from this library or be null; it is invalid afterwards.
 */
void pm_histogram_free(struct PmHistogram *h);

/**
 * Fits `F0 = g0 (alpha - alpha_c)^gamma` to `n` samples. `sigma` may be
 * null for an unweighted fit.
 *
 * # Safety
 * `alpha` and `f0` (and `sigma` when non-null) must hold `n` values;
 * `out` must be writable.
 */
enum PmStatus pm_fit_power_law(const double *alpha,
                               const double *f0,
                               const double *sigma,
                               size_t n,
                               struct PmPowerLaw *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PHASEMARKET_H */
