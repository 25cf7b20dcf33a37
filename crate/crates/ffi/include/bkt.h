#ifndef BKT_H
#define BKT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of every fallible call.
 */
typedef enum BktStatus {
  BKT_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  BKT_STATUS_NULL_POINTER = 1,
  /**
   * An argument or configuration value is out of range.
   */
  BKT_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Input data could not be read or is unusable.
   */
  BKT_STATUS_DATA_ERROR = 3,
  /**
   * A numerical step failed (non-positive-definite matrix, degenerate Jacobian).
   */
  BKT_STATUS_NUMERICAL_ERROR = 4,
  /**
   * A panic was caught at the boundary.
   */
  BKT_STATUS_PANIC = 5,
} BktStatus;

/**
 * Output of a joint sampler run.
 */
typedef struct BktChainOutput BktChainOutput;

/**
 * Paired samples `(x_i, y_i)`.
 */
typedef struct BktDataset BktDataset;

/**
 * Sampler settings. Obtain defaults from [`bkt_chain_config_default`].
 */
typedef struct BktChainConfig {
  size_t iters;
  size_t burnin;
  size_t thin;
  size_t hmc_steps;
  size_t leapfrog_steps;
  uint64_t seed;
  double prior_odds;
} BktChainConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (nul
 * terminated, truncated to `len`). Returns the full message length
 * without the terminator, or 0 when there is no error.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes of writes.
 */
size_t bkt_last_error_message(char *buf, size_t len);

/**
 * Library version as a static nul-terminated string.
 */
const char *bkt_version(void);

/**
 * Builds a dataset from row-major `n x dim` arrays `x` and `y`.
 *
 * # Safety
 * `x` and `y` must each be valid for `n * dim` reads; `out` must be valid
 * for a write.
 */
enum BktStatus bkt_dataset_new(const double *x,
                               const double *y,
                               size_t n,
                               size_t dim,
                               struct BktDataset **out);

/**
 * Reads a paired CSV file (header `x1..xD,y1..yD`).
 *
 * # Safety
 * `path` must be a valid nul-terminated string; `out` must be valid for a
 * write.
 */
enum BktStatus bkt_dataset_read_csv(const char *path, struct BktDataset **out);

/**
 * Number of pairs, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t bkt_dataset_len(const struct BktDataset *ds);

/**
 * Dimension of each sample, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t bkt_dataset_dim(const struct BktDataset *ds);

/**
 * Frees a dataset. Null is ignored.
 *
 * # Safety
 * `ds` must be null or a handle not yet freed.
 */
void bkt_dataset_free(struct BktDataset *ds);

/**
 * Median-heuristic kernel parameter of the pooled sample.
 *
 * # Safety
 * `ds` must be a live handle; `theta` must be valid for a write.
 */
enum BktStatus bkt_median_heuristic(const struct BktDataset *ds, double *theta);

/**
 * Natural log of the Bayes factor (null over alternative) at a fixed
 * `theta`, with `s` evaluation points drawn using `seed`. `sigma_method`
 * is 1 or 2.
 *
 * # Safety
 * `ds` must be a live handle; `log_bf` must be valid for a write.
 */
enum BktStatus bkt_log_bf(const struct BktDataset *ds,
                          size_t s,
                          uint64_t seed,
                          uint8_t sigma_method,
                          double theta,
                          double *log_bf);

/**
 * Default sampler settings.
 */
struct BktChainConfig bkt_chain_config_default(void);

/**
 * Runs the joint sampler over the hypothesis and `theta`. Evaluation points
 * are drawn with the chain seed.
 *
 * # Safety
 * `ds` and `cfg` must be live; `out` must be valid for a write.
 */
enum BktStatus bkt_chain_run(const struct BktDataset *ds,
                             size_t s,
                             uint8_t sigma_method,
                             const struct BktChainConfig *cfg,
                             struct BktChainOutput **out);

/**
 * Posterior probability of the alternative, or NaN for a null handle.
 *
 * # Safety
 * `chain` must be null or a live handle.
 */
double bkt_chain_p_h1(const struct BktChainOutput *chain);

/**
 * HMC acceptance rate, or NaN for a null handle.
 *
 * # Safety
 * `chain` must be null or a live handle.
 */
double bkt_chain_acceptance_rate(const struct BktChainOutput *chain);

/**
 * Number of retained samples, or 0 for a null handle.
 *
 * # Safety
 * `chain` must be null or a live handle.
 */
size_t bkt_chain_len(const struct BktChainOutput *chain);

/**
 * Copies up to `len` retained samples into `theta` and `model` (0 for the
 * null, 1 for the alternative; either may be null). Returns the number
 * copied.
 *
 * # Safety
 * `chain` must be null or live; non-null `theta` and `model` must be valid
 * for `len` writes.
 */
size_t bkt_chain_samples(const struct BktChainOutput *chain,
                         double *theta,
                         uint8_t *model,
                         size_t len);

/**
 * Frees a chain output. Null is ignored.
 *
 * # Safety
 * `chain` must be null or a handle not yet freed.
 */
void bkt_chain_free(struct BktChainOutput *chain);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BKT_H */
