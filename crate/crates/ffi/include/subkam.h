#ifndef SUBKAM_H
#define SUBKAM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum SubkamStatus {
  SUBKAM_STATUS_OK = 0,
  SUBKAM_STATUS_NULL_POINTER = 1,
  SUBKAM_STATUS_INVALID_ARGUMENT = 2,
  SUBKAM_STATUS_UNKNOWN_INSTANCE = 3,
  SUBKAM_STATUS_CONFIG = 4,
  SUBKAM_STATUS_NOT_CONVERGED = 5,
  SUBKAM_STATUS_NUMERICAL = 6,
  SUBKAM_STATUS_IO = 7,
  SUBKAM_STATUS_PANIC = 8,
} SubkamStatus;

/**
 * Values on a uniform state grid.
 */
typedef struct SubkamGrid SubkamGrid;

/**
 * A control system together with its Lagrangian.
 */
typedef struct SubkamInstance SubkamInstance;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread; valid until the next call.
 */
const char *subkam_last_error(void);

/**
 * Builds a named built-in instance.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SubkamStatus subkam_instance_new(const char *name, struct SubkamInstance **out);

/**
 * Builds the instance described by configuration text, including `custom`.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SubkamStatus subkam_instance_from_config(const char *text, struct SubkamInstance **out);

/**
 * # Safety
 * `inst` must come from an instance constructor and not be freed twice.
 */
void subkam_instance_free(struct SubkamInstance *inst);

/**
 * State dimension `d`, or 0 for a null handle.
 *
 * # Safety
 * `inst` must be null or a live handle.
 */
size_t subkam_instance_state_dim(const struct SubkamInstance *inst);

/**
 * Number of controls `m`, or 0 for a null handle.
 *
 * # Safety
 * `inst` must be null or a live handle.
 */
size_t subkam_instance_control_dim(const struct SubkamInstance *inst);

/**
 * `min_x L(x, 0)` for instances with a trusted oracle.
 *
 * # Safety
 * `inst` must be a live handle and `out` a valid pointer.
 */
enum SubkamStatus subkam_oracle_critical(const struct SubkamInstance *inst, double *out);

/**
 * `L(x, u)` with `x` of length `d` and `u` of length `m`.
 *
 * # Safety
 * Pointers must be valid for the instance dimensions.
 */
enum SubkamStatus subkam_lagrangian(const struct SubkamInstance *inst,
                                    const double *x,
                                    const double *u,
                                    double *out);

/**
 * `H(x, p)` for a covector `p` of length `d`.
 *
 * # Safety
 * Pointers must be valid for the instance dimensions.
 */
enum SubkamStatus subkam_hamiltonian(const struct SubkamInstance *inst,
                                     const double *x,
                                     const double *p,
                                     double *out);

/**
 * Sub-Riemannian distance with default optimizer settings and `seed`.
 *
 * # Safety
 * Pointers must be valid for the instance dimensions.
 */
enum SubkamStatus subkam_sr_distance(const struct SubkamInstance *inst,
                                     const double *x,
                                     const double *y,
                                     uint64_t seed,
                                     double *out);

/**
 * Critical solution on the cube `[−half_width, half_width]^d` with
 * `resolution` nodes per axis, started from zero.
 *
 * # Safety
 * `inst` must be a live handle and `out` a valid pointer.
 */
enum SubkamStatus subkam_critical_solution(const struct SubkamInstance *inst,
                                           double c,
                                           double half_width,
                                           size_t resolution,
                                           double dt,
                                           size_t control_samples,
                                           double control_bound,
                                           struct SubkamGrid **out);

/**
 * # Safety
 * `grid` must come from this library and not be freed twice.
 */
void subkam_grid_free(struct SubkamGrid *grid);

/**
 * Number of nodes, or 0 for a null handle.
 *
 * # Safety
 * `grid` must be null or a live handle.
 */
size_t subkam_grid_len(const struct SubkamGrid *grid);

/**
 * Copies node values (axis 0 fastest) into `out`, which holds `len` doubles.
 *
 * # Safety
 * `out` must be valid for `len` writes.
 */
enum SubkamStatus subkam_grid_values(const struct SubkamGrid *grid, double *out, size_t len);

/**
 * Multilinear interpolation at `x` (length `d`), clamped to the box.
 *
 * # Safety
 * `x` must be valid for `d` reads and `out` for one write.
 */
enum SubkamStatus subkam_grid_interpolate(const struct SubkamGrid *grid,
                                          const double *x,
                                          double *out);

/**
 * Runs a full configuration. `out_dir` may be null to keep the file's
 * setting. `exit_code` receives 0 (ok), 1 (error) or 2 (flagged).
 *
 * # Safety
 * Strings must be NUL-terminated; `exit_code` must be valid.
 */
enum SubkamStatus subkam_run_config(const char *text, const char *out_dir, int *exit_code);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SUBKAM_H */
