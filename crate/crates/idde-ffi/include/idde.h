#ifndef IDDE_H
#define IDDE_H

/* Generated from the idde-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. Values are stable across releases.
 */
typedef enum IddeStatus {
  IDDE_STATUS_OK = 0,
  /**
   * null pointer, non-UTF-8 string, or out-of-range index
   */
  IDDE_STATUS_INVALID_ARGUMENT = 1,
  IDDE_STATUS_INVALID_HISTORY = 2,
  IDDE_STATUS_DIMENSION_MISMATCH = 3,
  IDDE_STATUS_ETA_MISMATCH = 4,
  IDDE_STATUS_INVALID_SPEC = 5,
  IDDE_STATUS_DOMAIN = 6,
  IDDE_STATUS_NEAR_SINGULAR = 7,
  IDDE_STATUS_KERNEL_POLE = 8,
  IDDE_STATUS_CONTOUR_PROXIMITY = 9,
  IDDE_STATUS_WINDING_UNSTABLE = 10,
  IDDE_STATUS_SUBDIVISION_DEPTH = 11,
  IDDE_STATUS_NEWTON_DIVERGENCE = 12,
  IDDE_STATUS_POLE_ORDER_AMBIGUOUS = 13,
  IDDE_STATUS_LAURENT_RESIDUAL = 14,
  IDDE_STATUS_NOT_SIMPLE = 15,
  IDDE_STATUS_UNSUPPORTED_POLE_ORDER = 16,
  IDDE_STATUS_MISSING_LINEARIZATION = 17,
  IDDE_STATUS_EQUILIBRIUM_DIVERGENCE = 18,
  IDDE_STATUS_NON_FINITE_STATE = 19,
  IDDE_STATUS_BRANCH_FAILURE = 20,
  IDDE_STATUS_HOPF_FAILURE = 21,
  IDDE_STATUS_IO = 22,
  IDDE_STATUS_JSON = 23,
  IDDE_STATUS_CSV_FORMAT = 24,
  /**
   * a panic was caught at the boundary; state may be inconsistent
   */
  IDDE_STATUS_PANIC = 25,
} IddeStatus;

/**
 * Opaque linear history functional.
 */
typedef struct IddeFunctional IddeFunctional;

/**
 * Opaque history function (initial data / projected output).
 */
typedef struct IddeHistory IddeHistory;

/**
 * Opaque nonlinear model.
 */
typedef struct IddeModel IddeModel;

/**
 * Opaque set of characteristic roots.
 */
typedef struct IddeRootSet IddeRootSet;

/**
 * Opaque simulation trace.
 */
typedef struct IddeTrace IddeTrace;

/**
 * Stability verdict for a functional.
 */
typedef struct IddeStabilityInfo {
  bool stable;
  /**
   * certified decay rate; NaN when unstable
   */
  double decay;
  /**
   * rightmost root; NaN when no root lies in the scanned region
   */
  double rightmost_re;
  double rightmost_im;
  size_t root_count;
} IddeStabilityInfo;

/**
 * Scalar data of one characteristic root.
 */
typedef struct IddeRootInfo {
  double re;
  double im;
  size_t multiplicity;
  size_t pole_order;
  size_t null_dim;
  double residual;
  bool simple;
} IddeRootInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the message of the most recent failure on this thread into `buf`
 * (NUL-terminated, truncated to `capacity`). Returns the full message
 * length in bytes, excluding the NUL; call with a null `buf` to size the
 * buffer.
 */
size_t idde_last_error(char *buf, size_t capacity);

/**
 * Library version as a static NUL-terminated string.
 */
const char *idde_version(void);

/**
 * Builds a linear functional from a JSON preset reference:
 * `{"name": "erlang2", "params": {"a": 2.0, "delta": 1.0, "eta": 0.5}}`.
 * Known names: one-exponential, erlang2, discrete, jordan, free.
 */
enum IddeStatus idde_functional_from_json(const char *json, struct IddeFunctional **out);

void idde_functional_free(struct IddeFunctional *p);

enum IddeStatus idde_functional_dim(const struct IddeFunctional *p, size_t *out);

enum IddeStatus idde_functional_eta(const struct IddeFunctional *p, double *out);

/**
 * Determinant of the characteristic matrix at lambda = re + i im.
 */
enum IddeStatus idde_functional_char_det(const struct IddeFunctional *p,
                                         double re,
                                         double im,
                                         double *out_re,
                                         double *out_im);

/**
 * Finds all characteristic roots in the rectangle. The result handle owns
 * the full spectral data; scalar fields are read with
 * [`idde_rootset_get`].
 */
enum IddeStatus idde_functional_find_roots(const struct IddeFunctional *p,
                                           double re_min,
                                           double re_max,
                                           double im_min,
                                           double im_max,
                                           double tol,
                                           struct IddeRootSet **out);

/**
 * Scans a default region (extended to the a-priori root bound) and reports
 * the verdict.
 */
enum IddeStatus idde_functional_stability(const struct IddeFunctional *p,
                                          struct IddeStabilityInfo *out);

enum IddeStatus idde_rootset_len(const struct IddeRootSet *p, size_t *out);

enum IddeStatus idde_rootset_get(const struct IddeRootSet *p,
                                 size_t index,
                                 struct IddeRootInfo *out);

void idde_rootset_free(struct IddeRootSet *p);

/**
 * Constant history phi(theta) = value (length `dim`) sampled on `nodes`
 * geometric grid points.
 */
enum IddeStatus idde_history_constant(double eta,
                                      size_t dim,
                                      const double *value,
                                      size_t nodes,
                                      struct IddeHistory **out);

/**
 * Weighted sup norm of the history.
 */
enum IddeStatus idde_history_eta_norm(const struct IddeHistory *p, double *out);

void idde_history_free(struct IddeHistory *p);

/**
 * Builds a model from a JSON preset reference. Known names: chemostat,
 * fishery, wright-erlang2, wright-discrete, plus every linear preset
 * (wrapped as a model).
 */
enum IddeStatus idde_model_from_json(const char *json, struct IddeModel **out);

void idde_model_free(struct IddeModel *p);

enum IddeStatus idde_model_dim(const struct IddeModel *p, size_t *out);

enum IddeStatus idde_model_eta(const struct IddeModel *p, double *out);

/**
 * Newton search for an equilibrium from `guess`; writes `dim` values into
 * `out_x`.
 */
enum IddeStatus idde_model_equilibrium(const struct IddeModel *p,
                                       const double *guess,
                                       double *out_x);

/**
 * First-order functional of the model at the given constant state.
 */
enum IddeStatus idde_model_linearize(const struct IddeModel *p,
                                     const double *xbar,
                                     struct IddeFunctional **out);

/**
 * Integrates the model from the history over [0, horizon] with fixed step.
 * A trajectory escaping to infinity yields `IDDE_STATUS_NON_FINITE_STATE`
 * but still produces the partial trace.
 */
enum IddeStatus idde_model_simulate(const struct IddeModel *model,
                                    const struct IddeHistory *history,
                                    double horizon,
                                    double step,
                                    struct IddeTrace **out);

/**
 * Number of knots in the trace.
 */
enum IddeStatus idde_trace_len(const struct IddeTrace *p, size_t *out);

enum IddeStatus idde_trace_dim(const struct IddeTrace *p, size_t *out);

/**
 * Copies knot times into `times` (len values) and states row-major into
 * `states` (len * dim values). Either buffer may be null to skip it.
 */
enum IddeStatus idde_trace_copy(const struct IddeTrace *p, double *times, double *states);

/**
 * True when the integration reached the horizon.
 */
enum IddeStatus idde_trace_completed(const struct IddeTrace *p, bool *out);

void idde_trace_free(struct IddeTrace *p);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IDDE_H */
