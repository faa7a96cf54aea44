#ifndef NOREGRESS_H
#define NOREGRESS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Confinement role.
 */
typedef enum NrRole {
  NR_ROLE_READ_ONLY = 0,
  NR_ROLE_WRITER = 1,
} NrRole;

/**
 * Result codes.
 */
typedef enum NrStatus {
  NR_STATUS_OK = 0,
  NR_STATUS_NULL_ARGUMENT = 1,
  NR_STATUS_INVALID_UTF8 = 2,
  NR_STATUS_IO = 3,
  NR_STATUS_SCHEMA = 4,
  NR_STATUS_INVALID_SCENARIO = 5,
  NR_STATUS_INVALID_ARGUMENT = 6,
  NR_STATUS_PARSE = 7,
  NR_STATUS_LINT_REJECTED = 8,
  NR_STATUS_ENGINE = 9,
  /**
   * A value does not fit the C representation.
   */
  NR_STATUS_OVERFLOW = 10,
  NR_STATUS_PANIC = 11,
} NrStatus;

/**
 * A transaction engine over a scenario with its fault injected.
 */
typedef struct NrEngine NrEngine;

/**
 * A loaded scenario.
 */
typedef struct NrScenario NrScenario;

/**
 * A severity value. `infinite` marks the crash state; otherwise the value
 * is `numer / denom` with `denom > 0`.
 */
typedef struct NrSeverity {
  bool infinite;
  int64_t numer;
  int64_t denom;
} NrSeverity;

/**
 * Last error message on this thread, or null. Valid until the next failing
 * call on the same thread.
 */
const char *nr_last_error(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void nr_string_free(char *s);

/**
 * Loads and checks a scenario file.
 *
 * # Safety
 * `path` must be a valid C string; `out` must be writable.
 */
enum NrStatus nr_scenario_load(const char *path, struct NrScenario **out);

/**
 * Frees a scenario. Null is ignored.
 *
 * # Safety
 * `s` must come from [`nr_scenario_load`] and not have been freed.
 */
void nr_scenario_free(struct NrScenario *s);

/**
 * Runs one episode with the scenario's playbook and returns the report as
 * JSON. `ablation` is `"full"`, `"noretry"` or `"naive"`; null means full.
 *
 * # Safety
 * `s` must be a live scenario; `ablation` null or a C string; `out_json`
 * writable.
 */
enum NrStatus nr_run_episode(const struct NrScenario *s,
                             const char *ablation,
                             uint64_t seed,
                             char **out_json);

/**
 * Confinement check. Writes whether the command is allowed and, when
 * blocked, the exact reason (null when allowed).
 *
 * # Safety
 * `command` must be a C string; both out-parameters writable.
 */
enum NrStatus nr_lint(const char *command, enum NrRole role, bool *out_allowed, char **out_reason);

/**
 * Creates an engine over the scenario's faulted state with weights 1,1,1.
 *
 * # Safety
 * `s` must be a live scenario; `out` writable.
 */
enum NrStatus nr_engine_new(const struct NrScenario *s, struct NrEngine **out);

/**
 * Frees an engine. Null is ignored.
 *
 * # Safety
 * `e` must come from [`nr_engine_new`] and not have been freed.
 */
void nr_engine_free(struct NrEngine *e);

/**
 * Current severity.
 *
 * # Safety
 * `e` must be a live engine; `out` writable.
 */
enum NrStatus nr_engine_severity(struct NrEngine *e, struct NrSeverity *out);

/**
 * Opens a mitigation transaction with window `k`.
 *
 * # Safety
 * `e` must be a live engine.
 */
enum NrStatus nr_engine_begin(struct NrEngine *e, size_t k);

/**
 * Executes one command in the open transaction and reports the severity
 * afterwards.
 *
 * # Safety
 * `e` must be a live engine; `command` a C string; `out_mu` null or
 * writable.
 */
enum NrStatus nr_engine_step(struct NrEngine *e, const char *command, struct NrSeverity *out_mu);

/**
 * Commits the transaction if severity did not rise, otherwise undoes it.
 * Writes whether it committed.
 *
 * # Safety
 * `e` must be a live engine; `out_committed` null or writable.
 */
enum NrStatus nr_engine_finalize(struct NrEngine *e, bool *out_committed);

/**
 * Aborts and undoes the open transaction.
 *
 * # Safety
 * `e` must be a live engine.
 */
enum NrStatus nr_engine_abort(struct NrEngine *e);

/**
 * Library version, statically allocated.
 */
const char *nr_version(void);

#endif  /* NOREGRESS_H */
