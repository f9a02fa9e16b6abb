/* C interface to the fracflow multiscale simulation toolkit. */

#ifndef FRACFLOW_H
#define FRACFLOW_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes for every API call.
 */
typedef enum FfStatus {
  FF_STATUS_OK = 0,
  /**
   * A pointer argument was NULL.
   */
  FF_STATUS_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  FF_STATUS_INVALID_UTF8 = 2,
  /**
   * JSON input could not be parsed.
   */
  FF_STATUS_MALFORMED_JSON = 3,
  /**
   * Configuration or argument values violate a precondition.
   */
  FF_STATUS_INVALID_ARGUMENT = 4,
  /**
   * Geometry construction or validation failed.
   */
  FF_STATUS_GEOMETRY_ERROR = 5,
  /**
   * A linear solve or basis construction failed.
   */
  FF_STATUS_SOLVE_ERROR = 6,
  /**
   * File input/output failed.
   */
  FF_STATUS_IO_ERROR = 7,
  /**
   * A buffer length does not match the expected size.
   */
  FF_STATUS_SIZE_MISMATCH = 8,
  /**
   * The callee panicked; state may be inconsistent.
   */
  FF_STATUS_PANIC = 9,
} FfStatus;

/**
 * Opaque upscaled-model handle (basis, transmissibilities, steppers).
 */
typedef struct FfCoarseModel FfCoarseModel;

/**
 * Opaque fractured-geometry handle.
 */
typedef struct FfGeometry FfGeometry;

/**
 * Opaque trained-network handle.
 */
typedef struct FfNet FfNet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message into `buf` (NUL-terminated, truncated to
 * `len` bytes). Returns the full message length in bytes, excluding the
 * terminator, so callers can re-query with a larger buffer. Passing
 * `buf = NULL` or `len = 0` only queries the length.
 */
size_t ff_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ff_version(void);

/**
 * Build a geometry from a JSON spec (domain extents, grid sizes, fracture
 * list). On success `*out` owns the new handle.
 *
 * # Safety
 * `spec_json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FfStatus ff_geometry_from_json(const char *spec_json, struct FfGeometry **out);

/**
 * Release a geometry handle. NULL is ignored.
 *
 * # Safety
 * `geo` must be a handle from this library, not yet freed.
 */
void ff_geometry_free(struct FfGeometry *geo);

/**
 * Number of coarse degrees of freedom (matrix blocks + fracture pieces).
 *
 * # Safety
 * `geo` must be a live geometry handle and `out` a valid pointer.
 */
enum FfStatus ff_geometry_n_dofs(const struct FfGeometry *geo, size_t *out);

/**
 * Number of fine-grid vertices.
 *
 * # Safety
 * `geo` must be a live geometry handle and `out` a valid pointer.
 */
enum FfStatus ff_geometry_n_vertices(const struct FfGeometry *geo, size_t *out);

/**
 * Number of coarse blocks.
 *
 * # Safety
 * `geo` must be a live geometry handle and `out` a valid pointer.
 */
enum FfStatus ff_geometry_n_blocks(const struct FfGeometry *geo, size_t *out);

/**
 * Build a new geometry with fracture segment `segment` translated
 * vertically by `offset_blocks` coarse blocks (negative = down).
 *
 * # Safety
 * `geo` must be a live geometry handle and `out` a valid pointer.
 */
enum FfStatus ff_geometry_shift_fracture(const struct FfGeometry *geo,
                                         size_t segment,
                                         int64_t offset_blocks,
                                         struct FfGeometry **out);

/**
 * Solve the fine-scale problem from a zero initial state. Writes
 * `(n_steps + 1) × n_vertices` states row-major into `states_out`
 * (`states_len` must equal that product).
 *
 * `mobility_json` example: `{"kind":"constant","value":1.0}`.
 * `source_json` example:
 * `{"kind":"two_well","block_plus":2,"block_minus":7,"magnitude":1.0}`.
 *
 * # Safety
 * `geo` must be a live geometry handle, the strings NUL-terminated, and
 * `states_out` must point to at least `states_len` doubles.
 */
enum FfStatus ff_fine_solve(const struct FfGeometry *geo,
                            const char *mobility_json,
                            const char *source_json,
                            size_t n_steps,
                            double total_time,
                            double *states_out,
                            size_t states_len);

/**
 * Build the upscaled model for a geometry: constraint-minimizing basis
 * with oversampling width `k`, transmissibility operators, and time
 * steppers for `n_steps` implicit steps over `total_time`.
 *
 * # Safety
 * `geo` must be a live geometry handle, `mobility_json` NUL-terminated,
 * and `out` a valid pointer.
 */
enum FfStatus ff_coarse_model_build(const struct FfGeometry *geo,
                                    size_t k,
                                    const char *mobility_json,
                                    size_t n_steps,
                                    double total_time,
                                    struct FfCoarseModel **out);

/**
 * Release a coarse-model handle. NULL is ignored.
 *
 * # Safety
 * `model` must be a handle from this library, not yet freed.
 */
void ff_coarse_model_free(struct FfCoarseModel *model);

/**
 * Coarse dimension of the model.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum FfStatus ff_coarse_model_n(const struct FfCoarseModel *model, size_t *out);

/**
 * Run the upscaled model for one source from a zero initial state.
 * Writes `(n_steps + 1) × n` coarse states into `states_out` and
 * `n_steps × n` coarse loads into `loads_out`, both row-major.
 *
 * # Safety
 * `model` must be a live handle, `source_json` NUL-terminated, and the
 * buffers at least `states_len` / `loads_len` doubles long.
 */
enum FfStatus ff_coarse_model_run(const struct FfCoarseModel *model,
                                  const char *source_json,
                                  double *states_out,
                                  size_t states_len,
                                  double *loads_out,
                                  size_t loads_len);

/**
 * Load a trained network from a model file written by the toolkit.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FfStatus ff_net_load(const char *path, struct FfNet **out);

/**
 * Release a network handle. NULL is ignored.
 *
 * # Safety
 * `net` must be a handle from this library, not yet freed.
 */
void ff_net_free(struct FfNet *net);

/**
 * Input width of the network (state and source encoding concatenated).
 *
 * # Safety
 * `net` must be a live handle and `out` a valid pointer.
 */
enum FfStatus ff_net_d_in(const struct FfNet *net, size_t *out);

/**
 * Output width of the network (the coarse dimension).
 *
 * # Safety
 * `net` must be a live handle and `out` a valid pointer.
 */
enum FfStatus ff_net_d_out(const struct FfNet *net, size_t *out);

/**
 * One surrogate step: `y = N(x)` including the model's standardization.
 *
 * # Safety
 * `net` must be a live handle; `x` / `y_out` must point to `x_len` /
 * `y_len` doubles.
 */
enum FfStatus ff_net_predict(const struct FfNet *net,
                             const double *x,
                             size_t x_len,
                             double *y_out,
                             size_t y_len);

/**
 * Run a full experiment (generate → train → evaluate) from a JSON config.
 * On success writes all artifacts to the config's output directory and
 * stores the mean one-step test errors of the observation-, mixture-, and
 * simulation-trained networks into `means_out[0..3]` (pass NULL to skip).
 *
 * # Safety
 * `config_json` must be NUL-terminated; `means_out` NULL or 3 doubles.
 */
enum FfStatus ff_run_example(const char *config_json, double *means_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FRACFLOW_H */
