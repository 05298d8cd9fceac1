#ifndef LOSSCAPE_H
#define LOSSCAPE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LosscapeStatus {
  LOSSCAPE_STATUS_OK = 0,
  LOSSCAPE_STATUS_NULL_POINTER = 1,
  LOSSCAPE_STATUS_INVALID_ARGUMENT = 2,
  LOSSCAPE_STATUS_SHAPE = 3,
  LOSSCAPE_STATUS_NON_FINITE = 4,
  LOSSCAPE_STATUS_PRECONDITION = 5,
  LOSSCAPE_STATUS_CONSTRUCTION = 6,
  LOSSCAPE_STATUS_PARSE = 7,
  LOSSCAPE_STATUS_IO = 8,
  LOSSCAPE_STATUS_PANIC = 9,
} LosscapeStatus;

typedef enum LosscapeVerdict {
  LOSSCAPE_VERDICT_CERTIFIED_GLOBAL_MINIMUM = 0,
  LOSSCAPE_VERDICT_CONDITIONS_NOT_MET = 1,
  LOSSCAPE_VERDICT_NOT_CRITICAL = 2,
} LosscapeVerdict;

typedef struct LosscapeDataset LosscapeDataset;

typedef struct LosscapeParams LosscapeParams;

typedef struct LosscapeReport LosscapeReport;

/**
 * Certification tolerances. A zero field selects the library default; `rank_tol` and
 * `tau_nd` are absolute thresholds when non-zero.
 */
typedef struct LosscapeTolerances {
  double eps_crit;
  double eps_phi;
  double rank_tol;
  double tau_nd;
} LosscapeTolerances;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *losscape_version(void);

/**
 * Message of the last failure on this thread, or NULL. Valid until the next failing call.
 */
const char *losscape_last_error_message(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, not yet freed.
 */
void losscape_string_free(char *s);

struct LosscapeTolerances losscape_tolerances_default(void);

/**
 * Numerical rank of a row-major `rows × cols` matrix. `tol <= 0` selects the automatic
 * cutoff `max(rows, cols) · eps · σ_max`.
 *
 * # Safety
 * `values` must point to `rows * cols` doubles; `rank` must be writable.
 */
enum LosscapeStatus losscape_numerical_rank(const double *values,
                                            size_t rows,
                                            size_t cols,
                                            double tol,
                                            size_t *rank);

/**
 * Parses dataset text (header `# d=.. m=.. mode=..` followed by CSV rows).
 *
 * # Safety
 * `text` must be a NUL-terminated string; `dataset` must be writable.
 */
enum LosscapeStatus losscape_dataset_parse(const char *text_, struct LosscapeDataset **dataset);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `dataset` must be writable.
 */
enum LosscapeStatus losscape_dataset_read(const char *path, struct LosscapeDataset **dataset);

/**
 * Regression data from row-major `x` (`n × d`) and `y` (`n × m`).
 *
 * # Safety
 * `x` and `y` must point to `n * d` and `n * m` doubles; `dataset` must be writable.
 */
enum LosscapeStatus losscape_dataset_regression(const double *x,
                                                size_t n,
                                                size_t d,
                                                const double *y,
                                                size_t m,
                                                struct LosscapeDataset **dataset);

/**
 * Classification data from row-major `x` (`n × d`) and 0-based labels in `[0, m)`.
 *
 * # Safety
 * `x` must point to `n * d` doubles and `classes` to `n` labels; `dataset` must be writable.
 */
enum LosscapeStatus losscape_dataset_classification(const double *x,
                                                    size_t n,
                                                    size_t d,
                                                    const size_t *classes,
                                                    size_t m,
                                                    struct LosscapeDataset **dataset);

/**
 * Number of samples, or 0 for NULL.
 *
 * # Safety
 * `dataset` must be NULL or a live handle.
 */
size_t losscape_dataset_len(const struct LosscapeDataset *dataset);

/**
 * # Safety
 * `dataset` must be NULL or a handle from this library, not yet freed.
 */
void losscape_dataset_free(struct LosscapeDataset *dataset);

/**
 * # Safety
 * `json` must be a NUL-terminated string; `params` must be writable.
 */
enum LosscapeStatus losscape_params_parse(const char *json, struct LosscapeParams **params);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `params` must be writable.
 */
enum LosscapeStatus losscape_params_read(const char *path, struct LosscapeParams **params);

/**
 * # Safety
 * `params` must be a live handle; `json` must be writable.
 */
enum LosscapeStatus losscape_params_to_json(const struct LosscapeParams *params, char **json);

/**
 * # Safety
 * `params` must be NULL or a handle from this library, not yet freed.
 */
void losscape_params_free(struct LosscapeParams *params);

/**
 * Steepest descent from a seeded random initialization. `activation` uses the CLI
 * syntax (`sigmoid`, `tanh`, `softplus:4`); `loss` may be NULL for squared loss;
 * `max_iters == 0` keeps the default. `converged` may be NULL.
 *
 * # Safety
 * Pointers must be valid for the stated lengths; `params` must be writable.
 */
enum LosscapeStatus losscape_train(const struct LosscapeDataset *dataset,
                                   const size_t *widths,
                                   size_t n_widths,
                                   const char *activation,
                                   const char *loss,
                                   uint64_t seed,
                                   size_t max_iters,
                                   struct LosscapeParams **params,
                                   bool *converged);

/**
 * # Safety
 * Handles must be live; `loss` may be NULL; `tol` may be NULL; `report` must be writable.
 */
enum LosscapeStatus losscape_certify_independent_inputs(const struct LosscapeParams *params,
                                                        const struct LosscapeDataset *dataset,
                                                        const char *loss,
                                                        const struct LosscapeTolerances *tol,
                                                        struct LosscapeReport **report);

/**
 * Wide layer `k` with a non-degenerate Hessian block over the 1-based layers in `subset`.
 *
 * # Safety
 * Handles must be live; `subset` must point to `subset_len` entries; `loss` and `tol`
 * may be NULL; `report` must be writable.
 */
enum LosscapeStatus losscape_certify_main(const struct LosscapeParams *params,
                                          const struct LosscapeDataset *dataset,
                                          const char *loss,
                                          size_t k,
                                          const size_t *subset,
                                          size_t subset_len,
                                          const struct LosscapeTolerances *tol,
                                          struct LosscapeReport **report);

/**
 * # Safety
 * Handles must be live; `loss` and `tol` may be NULL; `report` must be writable.
 */
enum LosscapeStatus losscape_certify_nondegenerate_minimum(const struct LosscapeParams *params,
                                                           const struct LosscapeDataset *dataset,
                                                           const char *loss,
                                                           size_t k,
                                                           const struct LosscapeTolerances *tol,
                                                           struct LosscapeReport **report);

/**
 * Separable loss with linearly separable features at layer `k` (0 for the raw inputs).
 *
 * # Safety
 * Handles must be live; `tol` may be NULL; `report` must be writable.
 */
enum LosscapeStatus losscape_certify_separable(const struct LosscapeParams *params,
                                               const struct LosscapeDataset *dataset,
                                               size_t k,
                                               const struct LosscapeTolerances *tol,
                                               struct LosscapeReport **report);

/**
 * # Safety
 * `report` must be a live handle; `verdict` must be writable.
 */
enum LosscapeStatus losscape_report_verdict(const struct LosscapeReport *report,
                                            enum LosscapeVerdict *verdict);

/**
 * Gradient norm and objective value at the certified point. Either output may be NULL.
 *
 * # Safety
 * `report` must be a live handle.
 */
enum LosscapeStatus losscape_report_values(const struct LosscapeReport *report,
                                           double *grad_norm,
                                           double *objective);

/**
 * # Safety
 * `report` must be a live handle; `json` must be writable.
 */
enum LosscapeStatus losscape_report_to_json(const struct LosscapeReport *report, char **json);

/**
 * # Safety
 * `report` must be NULL or a handle from this library, not yet freed.
 */
void losscape_report_free(struct LosscapeReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LOSSCAPE_H */
