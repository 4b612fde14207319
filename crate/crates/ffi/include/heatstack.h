/* C interface for the heatstack thermal simulator.
* Generated by cbindgen from crates/ffi; do not edit by hand. */

#ifndef HEATSTACK_H
#define HEATSTACK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Time integration scheme for transient runs.
 */
typedef enum HsScheme {
  /**
   * First-order implicit; damps all modes, safe at any step size.
   */
  HsBackwardEuler = 0,
  /**
   * Second-order trapezoidal.
   */
  HsCrankNicolson = 1,
} HsScheme;

/**
 * Result code for fallible calls that do not return a handle.
 */
typedef enum HsStatus {
  /**
   * The call succeeded.
   */
  HsOk = 0,
  /**
   * Malformed or inconsistent input (files, text, arguments).
   */
  HsInvalidInput = 1,
  /**
   * The solver failed to produce a trustworthy answer.
   */
  HsNumericalFailure = 2,
  /**
   * A required pointer argument was null.
   */
  HsNullPointer = 3,
  /**
   * A string argument was not valid UTF-8.
   */
  HsInvalidUtf8 = 4,
  /**
   * An internal invariant was violated; state may be inconsistent.
   */
  HsInternalPanic = 5,
} HsStatus;

/**
 * Per-cell temperatures in kelvin, indexed like the grid's cells.
 */
typedef struct HsField HsField;

/**
 * Discretized cell mesh over a stack.
 */
typedef struct HsGrid HsGrid;

/**
 * Validated stack description (layers, materials, sink).
 */
typedef struct HsStack HsStack;

/**
 * Assembled conductance/capacitance network with its power vector.
 */
typedef struct HsSystem HsSystem;

/**
 * Time behavior of one power source.
 *
 * `kind = 0`: constant `p0` watts (other fields ignored).
 * `kind = 1`: modulated pulse
 * `p(t) = p0 + p0 * exp(-(t - t0)^2 / tau2) * sin(omega * t)`.
 */
typedef struct HsDrive {
  uint32_t kind;
  double p0;
  double t0;
  double tau2;
  double omega;
} HsDrive;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *hs_version(void);

/**
 * Message describing the most recent failure on this thread. Never
 * null; the pointer stays valid until the next failing call on the
 * same thread.
 */
const char *hs_last_error_message(void);

/**
 * Parse and validate a stack description from text. `base_dir` resolves
 * relative floorplan references and may be null for "." . Returns null
 * on failure.
 *
 * # Safety
 * `text` (and `base_dir` when non-null) must be NUL-terminated strings.
 */
struct HsStack *hs_stack_parse_text(const char *text, const char *base_dir);

/**
 * Parse and validate a stack description file. Relative floorplan
 * references resolve against the file's directory. Returns null on
 * failure.
 *
 * # Safety
 * `path` must be a NUL-terminated string.
 */
struct HsStack *hs_stack_parse_file(const char *path);

/**
 * Number of layers in the stack (0 if `stack` is null).
 *
 * # Safety
 * `stack` must be null or a live handle from this library.
 */
uintptr_t hs_stack_layer_count(const struct HsStack *stack);

/**
 * Split high-resistance layers until the variance of per-layer vertical
 * resistances falls to `rel_threshold` of its starting value or
 * `max_iter` splits have happened. Returns a new handle; the input is
 * untouched.
 *
 * # Safety
 * `stack` must be a live handle from this library.
 */
struct HsStack *hs_stack_divide(const struct HsStack *stack,
                                double rel_threshold,
                                uint32_t max_iter);

/**
 * Release a stack handle (null is a no-op).
 *
 * # Safety
 * `stack` must be null or a handle not freed before.
 */
void hs_stack_free(struct HsStack *stack);

/**
 * Mesh the stack on an `nx` by `ny` in-plane lattice. Returns null on
 * failure.
 *
 * # Safety
 * `stack` must be a live handle from this library.
 */
struct HsGrid *hs_grid_uniform(const struct HsStack *stack, uintptr_t nx, uintptr_t ny);

/**
 * Number of cells in the grid (0 if `grid` is null).
 *
 * # Safety
 * `grid` must be null or a live handle from this library.
 */
uintptr_t hs_grid_cell_count(const struct HsGrid *grid);

/**
 * Release a grid handle (null is a no-op).
 *
 * # Safety
 * `grid` must be null or a handle not freed before.
 */
void hs_grid_free(struct HsGrid *grid);

/**
 * Assemble the conductance/capacitance network for a grid.
 * `powers[i]` is the wattage of source id `i`; `powers` may be null
 * when `n_powers` is 0. Returns null on failure.
 *
 * # Safety
 * `grid` must be a live handle; `powers` must be null or point to
 * `n_powers` doubles.
 */
struct HsSystem *hs_system_assemble(const struct HsGrid *grid,
                                    const double *powers,
                                    uintptr_t n_powers);

/**
 * Release a system handle (null is a no-op).
 *
 * # Safety
 * `system` must be null or a handle not freed before.
 */
void hs_system_free(struct HsSystem *system);

/**
 * Solve the steady-state temperature field. Returns null on failure.
 *
 * # Safety
 * `system` must be a live handle from this library.
 */
struct HsField *hs_steady_solve(const struct HsSystem *system);

/**
 * March the system from the stack's initial temperature to `t_end`
 * with step `dt`, re-evaluating `drives` each step, and return the
 * final field. The system's power vector is updated in place. Returns
 * null on failure.
 *
 * # Safety
 * `grid` and `system` must be live handles; `drives` must be null or
 * point to `n_drives` entries.
 */
struct HsField *hs_transient_final(const struct HsGrid *grid,
                                   struct HsSystem *system,
                                   const struct HsDrive *drives,
                                   uintptr_t n_drives,
                                   double dt,
                                   double t_end,
                                   enum HsScheme scheme);

/**
 * Number of cells in the field (0 if `field` is null).
 *
 * # Safety
 * `field` must be null or a live handle from this library.
 */
uintptr_t hs_field_len(const struct HsField *field);

/**
 * Copy the whole field into `out` (kelvin, cell order). `capacity`
 * must be at least the field length.
 *
 * # Safety
 * `field` must be a live handle; `out` must point to `capacity`
 * writable doubles.
 */
enum HsStatus hs_field_copy(const struct HsField *field, double *out, uintptr_t capacity);

/**
 * Report the hottest cell: its index into the grid's cells and its
 * temperature. Either output pointer may be null to skip it.
 *
 * # Safety
 * `field` must be a live handle; non-null outputs must be writable.
 */
enum HsStatus hs_field_hottest(const struct HsField *field,
                               uintptr_t *out_cell,
                               double *out_kelvin);

/**
 * Release a field handle (null is a no-op).
 *
 * # Safety
 * `field` must be null or a handle not freed before.
 */
void hs_field_free(struct HsField *field);

/**
 * Evaluate the modulated pulse
 * `p(t) = p0 + p0 * exp(-(t - t0)^2 / tau2) * sin(omega * t)`.
 */
double hs_pulse_power(double p0, double t0, double tau2, double omega, double t);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HEATSTACK_H */
