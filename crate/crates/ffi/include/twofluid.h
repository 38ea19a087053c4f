#ifndef TWOFLUID_H
#define TWOFLUID_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum TfStatus {
  TF_STATUS_OK = 0,
  /**
   * Null pointer, bad length or malformed string.
   */
  TF_STATUS_INVALID_ARGUMENT = 1,
  /**
   * Input outside the mathematical domain (non-positive density, γ ≤ 1, ...).
   */
  TF_STATUS_DOMAIN = 2,
  TF_STATUS_NON_CONVERGENCE = 3,
  TF_STATUS_POSITIVITY_LOSS = 4,
  TF_STATUS_DIMENSION_MISMATCH = 5,
  /**
   * Any other numerical failure.
   */
  TF_STATUS_NUMERICAL = 6,
  /**
   * A panic was caught at the boundary.
   */
  TF_STATUS_PANIC = 7,
} TfStatus;

/**
 * Opaque simulation handle.
 */
typedef struct TfSimulation TfSimulation;

/**
 * Closure solution at one material point.
 */
typedef struct TfClosureResult {
  double z;
  double alpha;
  double p;
  double residual;
  uint32_t iterations;
} TfClosureResult;

/**
 * Selected diagnostics of the current state.
 */
typedef struct TfDiagnostics {
  double t;
  double mass;
  double energy;
  double lyapunov_g;
  double lyapunov_full;
  double min_tau;
  double max_tau;
  double dist_tau;
  double dist_u;
} TfDiagnostics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread; empty if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *tf_last_error_message(void);

/**
 * Solves the pressure closure for partial densities `(r, q)`.
 *
 * # Safety
 * `out` must be null or point to writable memory for one `TfClosureResult`.
 */
enum TfStatus tf_closure_solve(double r,
                               double q,
                               double gamma_plus,
                               double gamma_minus,
                               struct TfClosureResult *out);

/**
 * Creates a simulation of a registered scenario (`"uniform"`,
 * `"smooth-bump"`, `"two-zone"`, `"near-vacuum-fraction"`).
 *
 * # Safety
 * `scenario` must be a NUL-terminated string; `out` must point to writable
 * memory for one pointer. On failure `*out` is set to null.
 */
enum TfStatus tf_simulation_new(const char *scenario,
                                size_t n_cells,
                                double gamma_plus,
                                double gamma_minus,
                                double mu,
                                double cfl,
                                struct TfSimulation **out);

/**
 * Creates a simulation from explicit data: `r0`, `q0` of length `n_cells`
 * and `u0` of length `n_cells + 1` with zero endpoints.
 *
 * # Safety
 * The arrays must be readable for the stated lengths; `out` as in
 * [`tf_simulation_new`].
 */
enum TfStatus tf_simulation_new_from_data(const double *r0,
                                          const double *q0,
                                          const double *u0,
                                          size_t n_cells,
                                          double gamma_plus,
                                          double gamma_minus,
                                          double mu,
                                          double cfl,
                                          struct TfSimulation **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `sim` must be null or a handle from `tf_simulation_new*` not yet freed.
 */
void tf_simulation_free(struct TfSimulation *sim);

/**
 * Takes one step of the stable size; writes it to `dt_out` if non-null.
 * The state is left unchanged on failure.
 *
 * # Safety
 * `sim` must be a live handle; `dt_out` null or writable.
 */
enum TfStatus tf_simulation_step(struct TfSimulation *sim, double *dt_out);

/**
 * Integrates until time `t_end`, landing on it exactly.
 *
 * # Safety
 * `sim` must be a live handle.
 */
enum TfStatus tf_simulation_advance(struct TfSimulation *sim, double t_end);

/**
 * Current time, or NaN for a null handle.
 *
 * # Safety
 * `sim` must be null or a live handle.
 */
double tf_simulation_time(const struct TfSimulation *sim);

/**
 * Number of cells, or 0 for a null handle.
 *
 * # Safety
 * `sim` must be null or a live handle.
 */
size_t tf_simulation_n_cells(const struct TfSimulation *sim);

/**
 * Number of steps taken so far, or 0 for a null handle.
 *
 * # Safety
 * `sim` must be null or a live handle.
 */
size_t tf_simulation_step_count(const struct TfSimulation *sim);

/**
 * Copies the specific volume (`n_cells` values).
 *
 * # Safety
 * `sim` must be a live handle; `buf` writable for `len` values.
 */
enum TfStatus tf_simulation_copy_tau(const struct TfSimulation *sim, double *buf, size_t len);

/**
 * Copies the nodal velocity (`n_cells + 1` values).
 *
 * # Safety
 * As [`tf_simulation_copy_tau`].
 */
enum TfStatus tf_simulation_copy_u(const struct TfSimulation *sim, double *buf, size_t len);

/**
 * Evaluates diagnostics of the current state.
 *
 * # Safety
 * `sim` must be a live handle; `out` writable.
 */
enum TfStatus tf_simulation_diagnostics(const struct TfSimulation *sim, struct TfDiagnostics *out);

/**
 * Steady-state dominant density `Z∞`, or NaN for a null handle.
 *
 * # Safety
 * `sim` must be null or a live handle.
 */
double tf_simulation_steady_z(const struct TfSimulation *sim);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TWOFLUID_H */
