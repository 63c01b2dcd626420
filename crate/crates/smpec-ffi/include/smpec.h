#ifndef SMPEC_H
#define SMPEC_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible entry point.
 */
typedef enum SmpecStatus {
  SMPEC_STATUS_OK = 0,
  SMPEC_STATUS_NULL_POINTER = 1,
  SMPEC_STATUS_INVALID_ARGUMENT = 2,
  SMPEC_STATUS_CONFIG = 3,
  SMPEC_STATUS_NUMERICAL = 4,
  SMPEC_STATUS_LOWER_LEVEL = 5,
  SMPEC_STATUS_STALLED = 6,
  SMPEC_STATUS_BUFFER_TOO_SMALL = 7,
  SMPEC_STATUS_PANIC = 8,
} SmpecStatus;

typedef enum SmpecSolver {
  SMPEC_SOLVER_ZSOL_CONVEX = 0,
  SMPEC_SOLVER_ZSOL_NONCONVEX = 1,
  SMPEC_SOLVER_ZSOL_ACC = 2,
  SMPEC_SOLVER_SAA = 3,
} SmpecSolver;

/**
 * Opaque problem handle.
 */
typedef struct SmpecProblem SmpecProblem;

/**
 * Opaque result of one solver run.
 */
typedef struct SmpecRun SmpecRun;

/**
 * Plain-data schedule. `lower_alpha <= 0` selects the default lower step,
 * `batch == 0` the growing batch `k+1`.
 */
typedef struct SmpecSchedule {
  double gamma0;
  double a;
  double eta0;
  double b;
  double r;
  double tau;
  double rho;
  double m0;
  double lambda;
  double delta;
  double lower_alpha;
  uint64_t iters;
  uint64_t batch;
  bool relax_step_bound;
} SmpecSchedule;

typedef struct SmpecCounters {
  uint64_t upper_projections;
  uint64_t upper_samples;
  uint64_t lower_solves;
  uint64_t lower_projections;
  uint64_t lower_samples;
} SmpecCounters;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *smpec_version(void);

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`) and returns the full message length without the NUL.
 * Returns 0 when no error has been recorded.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t smpec_last_error_message(char *buf, size_t len);

/**
 * Builds a registry problem (`"cournot2s"`, `"bard"`, `"p1"`, ...) with
 * `n_params` overrides given as parallel key/value arrays.
 *
 * # Safety
 * `id` and every key must be NUL-terminated strings; `keys` and `values`
 * must hold `n_params` entries; `out` must be writable.
 */
enum SmpecStatus smpec_problem_new(const char *id,
                                   const char *const *keys,
                                   const double *values,
                                   size_t n_params,
                                   struct SmpecProblem **out);

/**
 * # Safety
 * `problem` must be null or a handle from [`smpec_problem_new`] not yet freed.
 */
void smpec_problem_free(struct SmpecProblem *problem);

/**
 * Dimension of the upper-level variable (0 for a null handle).
 *
 * # Safety
 * `problem` must be null or a live handle.
 */
size_t smpec_problem_dim_x(const struct SmpecProblem *problem);

/**
 * Reference optimum in the problem's reported sign convention.
 *
 * # Safety
 * `problem` must be a live handle, `x` must hold `len` doubles, `f` must be writable.
 */
enum SmpecStatus smpec_problem_optimum(const struct SmpecProblem *problem,
                                       double *x,
                                       size_t len,
                                       double *f);

/**
 * Expected objective at `x` (reported sign), using the closed form when the
 * problem has one and otherwise `validation_size` fixed validation draws.
 *
 * # Safety
 * `problem` must be a live handle, `x` must hold `len` doubles, `out` must be writable.
 */
enum SmpecStatus smpec_expected_value(const struct SmpecProblem *problem,
                                      const double *x,
                                      size_t len,
                                      uint64_t validation_size,
                                      double *out);

/**
 * Writes the library default schedule into `out`.
 *
 * # Safety
 * `out` must be writable.
 */
enum SmpecStatus smpec_schedule_default(struct SmpecSchedule *out);

/**
 * Runs one seeded solve. `exact_lower` selects exact lower-level solves;
 * the accelerated scheme and SAA always solve exactly.
 *
 * # Safety
 * `problem` must be a live handle, `schedule` readable and `out` writable.
 */
enum SmpecStatus smpec_run(const struct SmpecProblem *problem,
                           enum SmpecSolver solver,
                           bool exact_lower,
                           const struct SmpecSchedule *schedule,
                           uint64_t seed,
                           struct SmpecRun **out);

/**
 * # Safety
 * `run` must be null or a handle from [`smpec_run`] not yet freed.
 */
void smpec_run_free(struct SmpecRun *run);

/**
 * Copies the returned point (averaged iterate, `x_R` or `z_K`).
 *
 * # Safety
 * `run` must be a live handle and `x` must hold `len` doubles.
 */
enum SmpecStatus smpec_run_output(const struct SmpecRun *run, double *x, size_t len);

/**
 * # Safety
 * `run` must be a live handle and `out` writable.
 */
enum SmpecStatus smpec_run_counters(const struct SmpecRun *run, struct SmpecCounters *out);

/**
 * Solver wall time in seconds (negative for a null handle).
 *
 * # Safety
 * `run` must be null or a live handle.
 */
double smpec_run_wall_time(const struct SmpecRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SMPEC_H */
