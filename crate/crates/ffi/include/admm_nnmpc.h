#ifndef ADMM_NNMPC_H
#define ADMM_NNMPC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AnStatus {
  AN_STATUS_OK = 0,
  AN_STATUS_NULL_POINTER = 1,
  AN_STATUS_CONFIG = 2,
  AN_STATUS_INVALID_ARGUMENT = 3,
  AN_STATUS_SOLVER = 4,
  AN_STATUS_IO = 5,
  AN_STATUS_PANIC = 6,
} AnStatus;

typedef enum AnPlanner {
  AN_PLANNER_ADMM = 0,
  AN_PLANNER_BASELINE = 1,
} AnPlanner;

typedef enum AnOutcome {
  AN_OUTCOME_MERGED = 0,
  AN_OUTCOME_FAILED = 1,
  AN_OUTCOME_COLLISION = 2,
  AN_OUTCOME_STEP_LIMIT = 3,
} AnOutcome;

/**
 * Opaque result of one simulated run.
 */
typedef struct AnRunResult AnRunResult;

/**
 * Opaque scenario handle.
 */
typedef struct AnScenario AnScenario;

typedef struct AnMetrics {
  enum AnOutcome outcome;
  /**
   * Step at which the outcome was decided.
   */
  size_t outcome_step;
  /**
   * Merge step, or −1 when the run did not merge.
   */
  int64_t t_merge;
  double c_max;
  double d_min;
  size_t steps;
  size_t fallback_steps;
} AnMetrics;

/**
 * Ego state `(x, y, ψ, v)`.
 */
typedef struct AnState {
  double x;
  double y;
  double psi;
  double v;
} AnState;

typedef struct AnControl {
  double delta;
  double a;
} AnControl;

typedef struct AnCertificate {
  double sigma_min_c;
  double l_j;
  double m;
  double bound;
  double rho_used;
  bool satisfied;
} AnCertificate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *an_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *an_version(void);

/**
 * Parses a scenario from JSON text.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a writable pointer.
 */
enum AnStatus an_scenario_from_json(const char *json, struct AnScenario **out);

/**
 * Loads a builtin scenario (`two_lane` or `three_lane`).
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a writable pointer.
 */
enum AnStatus an_scenario_builtin(const char *name, struct AnScenario **out);

/**
 * # Safety
 * `scenario` must come from an `an_scenario_*` constructor and not be freed twice.
 */
void an_scenario_free(struct AnScenario *scenario);

/**
 * Closed-loop simulation of one planner on a scenario.
 *
 * # Safety
 * `scenario` must be a live handle and `out` a writable pointer.
 */
enum AnStatus an_run(const struct AnScenario *scenario,
                     enum AnPlanner planner,
                     struct AnRunResult **out);

/**
 * # Safety
 * `result` must come from [`an_run`] and not be freed twice.
 */
void an_run_result_free(struct AnRunResult *result);

/**
 * # Safety
 * `result` must be a live handle and `out` a writable pointer.
 */
enum AnStatus an_run_metrics(const struct AnRunResult *result, struct AnMetrics *out);

/**
 * The run's sim log as CSV. Free the string with [`an_string_free`].
 *
 * # Safety
 * `result` must be a live handle and `out` a writable pointer.
 */
enum AnStatus an_run_simlog_csv(const struct AnRunResult *result, char **out);

/**
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void an_string_free(char *s);

/**
 * One step of the bicycle model with the default parameters.
 *
 * # Safety
 * All pointers must be valid; `out` may alias `state`.
 */
enum AnStatus an_bicycle_step(const struct AnState *state,
                              const struct AnControl *control,
                              struct AnState *out);

/**
 * Penalty certificate for the scenario's first planning step.
 *
 * # Safety
 * `scenario` must be a live handle and `out` a writable pointer.
 */
enum AnStatus an_certify(const struct AnScenario *scenario,
                         size_t samples,
                         uint64_t seed,
                         struct AnCertificate *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADMM_NNMPC_H */
