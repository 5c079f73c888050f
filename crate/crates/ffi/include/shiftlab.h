#ifndef SHIFTLAB_H
#define SHIFTLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum ShiftlabStatus {
  SHIFTLAB_STATUS_OK = 0,
  SHIFTLAB_STATUS_NULL_POINTER = 1,
  SHIFTLAB_STATUS_INVALID_ARGUMENT = 2,
  SHIFTLAB_STATUS_DIMENSION_MISMATCH = 3,
  // Inputs are valid but the problem has no solution (e.g. marginals of
  // different mass, a single class, an empty selection).
  SHIFTLAB_STATUS_INFEASIBLE = 4,
  SHIFTLAB_STATUS_NUMERICAL = 5,
  // A caller-provided buffer is too small.
  SHIFTLAB_STATUS_BUFFER_TOO_SMALL = 6,
  // An internal panic was caught at the boundary.
  SHIFTLAB_STATUS_INTERNAL = 7,
} ShiftlabStatus;

typedef enum ShiftlabMetric {
  SHIFTLAB_METRIC_EUCLIDEAN = 0,
  SHIFTLAB_METRIC_MANHATTAN = 1,
  SHIFTLAB_METRIC_CHEBYSHEV = 2,
} ShiftlabMetric;

// Softmax classifier trained by [`shiftlab_softmax_fit`].
typedef struct ShiftlabClassifier ShiftlabClassifier;

// Affine regression model `w·x + b` returned by [`shiftlab_jdot_fit`].
typedef struct ShiftlabLinearModel ShiftlabLinearModel;

// Coupling matrix returned by the transport solvers.
typedef struct ShiftlabPlan ShiftlabPlan;

// Outcome of [`shiftlab_prior_shift`].
typedef struct ShiftlabPriorShiftSummary {
  size_t iterations;
  bool converged;
  double test_statistic;
  double p_value;
  bool significant;
} ShiftlabPriorShiftSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *shiftlab_version(void);

// Copies the calling thread's last error message into `buf` (truncated,
// always NUL-terminated when `capacity > 0`) and returns the full message
// length excluding the terminator. Returns 0 when no error was recorded.
//
// # Safety
// `buf` must be NULL or point to `capacity` writable bytes.
size_t shiftlab_last_error(char *buf, size_t capacity);

// Fits a multinomial softmax classifier with L2 strength `reg`.
// `labels` holds class indices in `[0, classes)`; `weights` may be NULL
// for unit weights.
//
// # Safety
// `features` must hold `rows * cols` doubles, `labels` and (when not NULL)
// `weights` must hold `rows` values, and `out` must be writable.
enum ShiftlabStatus shiftlab_softmax_fit(const double *features,
                                         size_t rows,
                                         size_t cols,
                                         const uint32_t *labels,
                                         size_t classes,
                                         const double *weights,
                                         double reg,
                                         struct ShiftlabClassifier **out);

// Number of classes of a fitted classifier, or 0 for NULL.
//
// # Safety
// `clf` must be NULL or a live handle.
size_t shiftlab_classifier_classes(const struct ShiftlabClassifier *clf);

// Writes class posteriors, `rows * classes` row-major, into `out`.
//
// # Safety
// `clf` must be a live handle, `features` must hold `rows * cols` doubles
// and `out` must have room for `capacity` doubles.
enum ShiftlabStatus shiftlab_classifier_predict_proba(const struct ShiftlabClassifier *clf,
                                                      const double *features,
                                                      size_t rows,
                                                      size_t cols,
                                                      double *out,
                                                      size_t capacity);

// Releases a classifier. NULL is ignored.
//
// # Safety
// `clf` must be NULL or a handle not yet freed.
void shiftlab_classifier_free(struct ShiftlabClassifier *clf);

// Re-estimates target class priors by EM for a fitted classifier and tests
// the shift at level `alpha`. `priors_out` receives one value per class.
//
// # Safety
// `clf` must be a live handle, `target` must hold `rows * cols` doubles,
// `priors_out` must have room for `capacity` doubles and `summary` must be
// writable.
enum ShiftlabStatus shiftlab_prior_shift(const struct ShiftlabClassifier *clf,
                                         const double *target,
                                         size_t rows,
                                         size_t cols,
                                         double tol,
                                         size_t max_iter,
                                         double alpha,
                                         double *priors_out,
                                         size_t capacity,
                                         struct ShiftlabPriorShiftSummary *summary);

// Exact optimal transport between weights `a` (length `rows`) and `b`
// (length `cols`) under the row-major `rows * cols` cost matrix.
//
// # Safety
// `a`, `b` and `costs` must hold the stated number of doubles; `out` must
// be writable.
enum ShiftlabStatus shiftlab_ot_exact(const double *a,
                                      size_t rows,
                                      const double *b,
                                      size_t cols,
                                      const double *costs,
                                      struct ShiftlabPlan **out);

// Entropic transport by Sinkhorn iteration. `epsilon <= 0` selects the
// default strength of 1e-3 times the mean cost.
//
// # Safety
// As [`shiftlab_ot_exact`].
enum ShiftlabStatus shiftlab_ot_sinkhorn(const double *a,
                                         size_t rows,
                                         const double *b,
                                         size_t cols,
                                         const double *costs,
                                         double epsilon,
                                         size_t max_iter,
                                         double tol,
                                         struct ShiftlabPlan **out);

// Plan shape, solver iterations and convergence flag. Any output pointer
// may be NULL.
//
// # Safety
// `plan` must be a live handle; non-NULL outputs must be writable.
enum ShiftlabStatus shiftlab_plan_info(const struct ShiftlabPlan *plan,
                                       size_t *rows,
                                       size_t *cols,
                                       size_t *iterations,
                                       bool *converged);

// Copies the coupling, row-major, into `out`.
//
// # Safety
// `plan` must be a live handle and `out` must have room for `capacity` doubles.
enum ShiftlabStatus shiftlab_plan_copy(const struct ShiftlabPlan *plan,
                                       double *out,
                                       size_t capacity);

// Total cost `Σ γ_ij C_ij` of a plan under a cost matrix of the same shape.
//
// # Safety
// `plan` must be a live handle, `costs` must hold as many doubles as the
// plan and `out` must be writable.
enum ShiftlabStatus shiftlab_plan_cost(const struct ShiftlabPlan *plan,
                                       const double *costs,
                                       double *out);

// Releases a plan. NULL is ignored.
//
// # Safety
// `plan` must be NULL or a handle not yet freed.
void shiftlab_plan_free(struct ShiftlabPlan *plan);

// `p`-Wasserstein distance between two weighted point clouds in `dim`
// dimensions, solved exactly.
//
// # Safety
// `mu_points` must hold `mu_len * dim` doubles and `mu_weights` `mu_len`;
// likewise for `nu`; `out` must be writable.
enum ShiftlabStatus shiftlab_wasserstein(const double *mu_points,
                                         const double *mu_weights,
                                         size_t mu_len,
                                         const double *nu_points,
                                         const double *nu_weights,
                                         size_t nu_len,
                                         size_t dim,
                                         enum ShiftlabMetric metric,
                                         double p,
                                         double *out);

// Kernel mean matching weights for `source` rows against `target` rows.
// `bandwidth <= 0` selects the median heuristic. `out` receives
// `source_rows` weights.
//
// # Safety
// `source` must hold `source_rows * dim` doubles, `target` must hold
// `target_rows * dim`, and `out` must have room for `capacity` doubles.
enum ShiftlabStatus shiftlab_kmm_weights(const double *source,
                                         size_t source_rows,
                                         const double *target,
                                         size_t target_rows,
                                         size_t dim,
                                         double bandwidth,
                                         double bound,
                                         double *out,
                                         size_t capacity);

// Joint-distribution transport regression from labeled source rows to
// unlabeled target rows. `lambda <= 0` uses the default feature weight.
//
// # Safety
// `source` must hold `source_rows * dim` doubles, `targets` must hold
// `source_rows`, `target` must hold `target_rows * dim`, and `out` must be
// writable.
enum ShiftlabStatus shiftlab_jdot_fit(const double *source,
                                      const double *targets,
                                      size_t source_rows,
                                      const double *target,
                                      size_t target_rows,
                                      size_t dim,
                                      double lambda,
                                      double ridge_reg,
                                      size_t max_iter,
                                      struct ShiftlabLinearModel **out);

// Copies the slope vector (`capacity >= dim`) and intercept of a model.
//
// # Safety
// `model` must be a live handle, `slopes` must have room for `capacity`
// doubles and `intercept` must be writable.
enum ShiftlabStatus shiftlab_linear_model_coefficients(const struct ShiftlabLinearModel *model,
                                                       double *slopes,
                                                       size_t capacity,
                                                       double *intercept);

// Releases a linear model. NULL is ignored.
//
// # Safety
// `model` must be NULL or a handle not yet freed.
void shiftlab_linear_model_free(struct ShiftlabLinearModel *model);

// Two-window mean-shift detector on a loss stream. Writes up to
// `capacity` event indices into `events` and the total count into `count`;
// returns `BufferTooSmall` when the events did not fit.
//
// # Safety
// `losses` must hold `len` doubles, `events` must have room for `capacity`
// values and `count` must be writable.
enum ShiftlabStatus shiftlab_drift_detector(const double *losses,
                                            size_t len,
                                            size_t window,
                                            double threshold,
                                            size_t *events,
                                            size_t capacity,
                                            size_t *count);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SHIFTLAB_H */
