#ifndef BMCKIT_H
#define BMCKIT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BmcStatus {
  BMC_STATUS_OK = 0,
  BMC_STATUS_NULL_POINTER = 1,
  BMC_STATUS_INVALID_ARGUMENT = 2,
  BMC_STATUS_INVALID_MODEL = 3,
  BMC_STATUS_NOT_ERGODIC = 4,
  BMC_STATUS_DIMENSION_MISMATCH = 5,
  BMC_STATUS_SUPPORT_MISMATCH = 6,
  BMC_STATUS_ZERO_PROBABILITY = 7,
  BMC_STATUS_EMPTY_CLUSTER = 8,
  BMC_STATUS_NO_CONVERGENCE = 9,
  BMC_STATUS_PARSE = 10,
  BMC_STATUS_IO = 11,
  BMC_STATUS_PANIC = 12,
} BmcStatus;

/**
 * A hard assignment of states to clusters.
 */
typedef struct BmcAssignment BmcAssignment;

/**
 * A cluster model: cluster transition matrix plus state labels.
 */
typedef struct BmcModel BmcModel;

/**
 * A sample path over states `0..n`.
 */
typedef struct BmcPath BmcPath;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next call into the library from the same thread.
 */
const char *bmc_last_error(void);

/**
 * Builds a model from `n` state labels and a row-major `m * m` matrix `p`.
 *
 * # Safety
 * `sigma` must point to `n` values, `p` to `m * m` values and `out` to
 * writable storage for one handle.
 */
enum BmcStatus bmc_model_new(size_t m,
                             const size_t *sigma,
                             size_t n,
                             const double *p,
                             struct BmcModel **out);

/**
 * Parses a model from its JSON form (`m`, `sigma`, `p`).
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` writable.
 */
enum BmcStatus bmc_model_from_json(const char *json, struct BmcModel **out);

/**
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void bmc_model_free(struct BmcModel *model);

/**
 * Number of states, or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t bmc_model_n(const struct BmcModel *model);

/**
 * Number of clusters, or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t bmc_model_m(const struct BmcModel *model);

/**
 * Samples `length` states starting from equilibrium.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum BmcStatus bmc_sample(const struct BmcModel *model,
                          size_t length,
                          uint64_t seed,
                          struct BmcPath **out);

/**
 * Wraps `len` state ids in `0..n`.
 *
 * # Safety
 * `symbols` must point to `len` values and `out` be writable.
 */
enum BmcStatus bmc_path_new(size_t n, const size_t *symbols, size_t len, struct BmcPath **out);

/**
 * # Safety
 * `path` must be NULL or a handle not yet freed.
 */
void bmc_path_free(struct BmcPath *path);

/**
 * Path length, or 0 for NULL.
 *
 * # Safety
 * `path` must be NULL or a live handle.
 */
size_t bmc_path_len(const struct BmcPath *path);

/**
 * Copies the state ids into `buf`, which must hold `bmc_path_len` values.
 *
 * # Safety
 * `path` must be a live handle and `buf` point to `cap` writable values.
 */
enum BmcStatus bmc_path_symbols(const struct BmcPath *path, size_t *buf, size_t cap);

/**
 * Wraps `n` labels in `0..m`.
 *
 * # Safety
 * `labels` must point to `n` values and `out` be writable.
 */
enum BmcStatus bmc_assignment_new(size_t m,
                                  const size_t *labels,
                                  size_t n,
                                  struct BmcAssignment **out);

/**
 * The model's own clusters.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum BmcStatus bmc_assignment_from_model(const struct BmcModel *model, struct BmcAssignment **out);

/**
 * # Safety
 * `assignment` must be NULL or a handle not yet freed.
 */
void bmc_assignment_free(struct BmcAssignment *assignment);

/**
 * Copies the labels into `buf`, which must hold one value per state.
 *
 * # Safety
 * `assignment` must be a live handle and `buf` point to `cap` writable values.
 */
enum BmcStatus bmc_assignment_labels(const struct BmcAssignment *assignment,
                                     size_t *buf,
                                     size_t cap);

/**
 * Trims the `gamma` highest-degree states, then runs spectral clustering and
 * `iterations` improvement passes on the path's transition counts.
 *
 * # Safety
 * `path` must be a live handle and `out` writable.
 */
enum BmcStatus bmc_cluster(const struct BmcPath *path,
                           size_t m,
                           size_t gamma,
                           size_t iterations,
                           uint64_t seed,
                           struct BmcAssignment **out);

/**
 * Fraction of misclassified states under the best relabelling.
 *
 * # Safety
 * Both handles must be live and `out` writable.
 */
enum BmcStatus bmc_misclassification(const struct BmcAssignment *truth,
                                     const struct BmcAssignment *estimate,
                                     double *out);

/**
 * Per-step log-likelihood ratio of `p` over `q` along the path.
 *
 * # Safety
 * `p` and `q` must each point to `n * n` values, with `n` the path's state
 * count, and `out` be writable.
 */
enum BmcStatus bmc_kl_rate_diff(const struct BmcPath *path,
                                const double *p,
                                const double *q,
                                double *out);

/**
 * Half-width of the confidence interval for the KL rate difference.
 *
 * # Safety
 * `out` must be writable.
 */
enum BmcStatus bmc_confidence_halfwidth(double delta,
                                        size_t length,
                                        size_t tau_mix,
                                        double z,
                                        double *out);

/**
 * CAIC order selection over `0..=r_max`. `caic` receives `r_max + 1` values
 * and may be NULL.
 *
 * # Safety
 * `path` must be a live handle, `out_r` writable and `caic` NULL or
 * pointing to `r_max + 1` writable values.
 */
enum BmcStatus bmc_select_order(const struct BmcPath *path,
                                size_t r_max,
                                size_t *out_r,
                                double *caic);

/**
 * Limiting singular-value density of a block variance profile with
 * row-major `m * m` entries `s` and cluster fractions `alpha`, evaluated at
 * `len` grid points.
 *
 * # Safety
 * `s` must point to `m * m` values, `alpha` to `m`, `grid` to `len` and
 * `density` to `len` writable values.
 */
enum BmcStatus bmc_limiting_density(const double *s,
                                    const double *alpha,
                                    size_t m,
                                    const double *grid,
                                    size_t len,
                                    double eta,
                                    double *density);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BMCKIT_H */
