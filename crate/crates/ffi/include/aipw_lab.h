#ifndef AIPW_LAB_H
#define AIPW_LAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum AipwStatus {
  AIPW_STATUS_OK = 0,
  AIPW_STATUS_NULL_POINTER = 1,
  AIPW_STATUS_INVALID_INPUT = 2,
  AIPW_STATUS_ARM_EMPTY = 3,
  AIPW_STATUS_SINGULAR_DESIGN = 4,
  AIPW_STATUS_LEARNER_FAILED = 5,
  AIPW_STATUS_NONFINITE_VALUE = 6,
  AIPW_STATUS_UNEQUAL_FOLDS = 7,
  AIPW_STATUS_GUARD_VIOLATED = 8,
  AIPW_STATUS_SCENARIO_FAILED = 9,
  AIPW_STATUS_IO = 10,
  AIPW_STATUS_NOT_FOUND = 11,
  AIPW_STATUS_PANIC = 99,
} AipwStatus;

/**
 * Opaque trial dataset.
 */
typedef struct AipwDataset AipwDataset;

/**
 * Opaque simulation result.
 */
typedef struct AipwScenarioResult AipwScenarioResult;

/**
 * One estimate with its Wald interval.
 */
typedef struct AipwEstimate {
  double point;
  double variance_est;
  double se;
  double ci_low;
  double ci_high;
} AipwEstimate;

/**
 * Estimates of both arm means and the ATE.
 */
typedef struct AipwArmEstimates {
  struct AipwEstimate mean1;
  struct AipwEstimate mean0;
  struct AipwEstimate ate;
} AipwArmEstimates;

/**
 * ATE coverage summary of one estimator.
 */
typedef struct AipwCoverage {
  size_t runs;
  size_t failures;
  double coverage;
  double wilson_low;
  double wilson_high;
  double mean_var_est;
  double mc_scaled_var;
} AipwCoverage;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Valid until the next
 * failing call on the same thread.
 */
const char *aipw_last_error(void);

/**
 * Library version as a static string.
 */
const char *aipw_version(void);

/**
 * Builds a dataset from row-major covariates `x` (`n × p`), treatment
 * indicators `a` (0 or 1) and outcomes `y`, with constant propensity `pi1`.
 *
 * # Safety
 * `x` must point to `n * p` doubles, `a` to `n` bytes, `y` to `n` doubles,
 * and `out` to writable storage for one pointer.
 */
enum AipwStatus aipw_dataset_new(const double *x,
                                 const uint8_t *a,
                                 const double *y,
                                 size_t n,
                                 size_t p,
                                 double pi1,
                                 struct AipwDataset **out);

/**
 * Releases a dataset; null is ignored.
 *
 * # Safety
 * `ds` must come from [`aipw_dataset_new`] and not have been freed.
 */
void aipw_dataset_free(struct AipwDataset *ds);

/**
 * Number of rows of a dataset, or 0 for null.
 *
 * # Safety
 * `ds` must be null or a live dataset handle.
 */
size_t aipw_dataset_len(const struct AipwDataset *ds);

/**
 * Inverse probability weighting estimates.
 *
 * # Safety
 * `ds` must be a live dataset handle and `out` writable.
 */
enum AipwStatus aipw_estimate_ipw(const struct AipwDataset *ds,
                                  double alpha,
                                  struct AipwArmEstimates *out);

/**
 * ANCOVA ATE estimate; `hc` is 0, 1 or 3 for HC0, HC1 or HC3.
 *
 * # Safety
 * `ds` must be a live dataset handle and `out` writable.
 */
enum AipwStatus aipw_estimate_ancova(const struct AipwDataset *ds,
                                     double alpha,
                                     uint32_t hc,
                                     struct AipwEstimate *out);

/**
 * AIPW with the outcome model fitted on the full data. `learner_json` is a
 * learner spec such as `{"kind":"ols"}`.
 *
 * # Safety
 * `ds` must be a live dataset handle, `learner_json` a NUL-terminated
 * string and `out` writable.
 */
enum AipwStatus aipw_estimate_aipw(const struct AipwDataset *ds,
                                   const char *learner_json,
                                   uint64_t seed,
                                   double alpha,
                                   struct AipwArmEstimates *out);

/**
 * Cross-fit AIPW with `k` folds.
 *
 * # Safety
 * As for [`aipw_estimate_aipw`].
 */
enum AipwStatus aipw_estimate_crossfit(const struct AipwDataset *ds,
                                       const char *learner_json,
                                       size_t k,
                                       uint64_t seed,
                                       double alpha,
                                       struct AipwArmEstimates *out);

/**
 * Runs a scenario given as JSON. With `oracle` set, oracle variances are
 * computed as well.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string and `out` writable.
 */
enum AipwStatus aipw_scenario_run(const char *config_json,
                                  bool oracle,
                                  struct AipwScenarioResult **out);

/**
 * Releases a scenario result; null is ignored.
 *
 * # Safety
 * `res` must come from [`aipw_scenario_run`] and not have been freed.
 */
void aipw_scenario_result_free(struct AipwScenarioResult *res);

/**
 * Coverage summary of the named estimator.
 *
 * # Safety
 * `res` must be a live result handle, `estimator` a NUL-terminated string
 * and `out` writable.
 */
enum AipwStatus aipw_scenario_coverage(const struct AipwScenarioResult *res,
                                       const char *estimator,
                                       struct AipwCoverage *out);

/**
 * Oracle variance `σ#²` of the named estimator; requires a result run with
 * `oracle` set.
 *
 * # Safety
 * As for [`aipw_scenario_coverage`], with `out` pointing to one double.
 */
enum AipwStatus aipw_scenario_sigma_hash_sq(const struct AipwScenarioResult *res,
                                            const char *estimator,
                                            double *out);

/**
 * Writes estimates.csv and coverage.csv (plus variance.csv and qq.csv when
 * oracle values exist) into `dir`.
 *
 * # Safety
 * `res` must be a live result handle and `dir` a NUL-terminated path.
 */
enum AipwStatus aipw_scenario_write_csv(const struct AipwScenarioResult *res, const char *dir);

/**
 * Wilson score interval.
 *
 * # Safety
 * `low` and `high` must be writable.
 */
enum AipwStatus aipw_wilson_interval(size_t successes,
                                     size_t trials,
                                     double level,
                                     double *low,
                                     double *high);

/**
 * K-rate factor; `n = 0` leaves out the `n` power.
 *
 * # Safety
 * `out` must be writable.
 */
enum AipwStatus aipw_k_rate_factor(size_t k, double r, bool subgaussian, size_t n, double *out);

/**
 * Total of the cross-fit (`cross_fit` set) or non-cross-fit bound for
 * inputs given as JSON.
 *
 * # Safety
 * `inputs_json` must be a NUL-terminated string and `total` writable.
 */
enum AipwStatus aipw_bound_total(const char *inputs_json, bool cross_fit, double *total);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AIPW_LAB_H */
