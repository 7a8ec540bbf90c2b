#ifndef WEINGARTEN_H
#define WEINGARTEN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum WgStatus {
  WG_STATUS_OK = 0,
  WG_STATUS_NULL_POINTER = 1,
  WG_STATUS_INVALID_ARGUMENT = 2,
  WG_STATUS_CONFIG = 3,
  WG_STATUS_SERRIN = 4,
  WG_STATUS_CONTINUATION = 5,
  WG_STATUS_DIAGNOSTICS = 6,
  WG_STATUS_IO = 7,
  WG_STATUS_BUFFER_TOO_SMALL = 8,
  WG_STATUS_PSI = 9,
  WG_STATUS_PANIC = 10,
} WgStatus;

typedef enum WgMeshFormat {
  WG_MESH_FORMAT_OBJ = 0,
  WG_MESH_FORMAT_VTK = 1,
} WgMeshFormat;

/**
 * Validated run configuration.
 */
typedef struct WgConfig WgConfig;

/**
 * Parsed curvature expression.
 */
typedef struct WgPsi WgPsi;

/**
 * Result of a run: the final state plus its residual.
 */
typedef struct WgSolution WgSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *wg_last_error(void);

/**
 * Process exit code used by the command-line tool for `status`.
 */
int32_t wg_status_exit_code(enum WgStatus status);

/**
 * Parses a TOML configuration held in `text`.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a writable pointer.
 */
enum WgStatus wg_config_from_toml(const char *text, struct WgConfig **out);

/**
 * Reads a TOML configuration file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum WgStatus wg_config_load(const char *path, struct WgConfig **out);

/**
 * Overrides the grid resolution.
 *
 * # Safety
 * `config` must come from `wg_config_from_toml` or `wg_config_load`.
 */
enum WgStatus wg_config_set_grid(struct WgConfig *config, size_t rings, size_t sectors);

/**
 * # Safety
 * `config` must be NULL or a handle not yet freed.
 */
void wg_config_free(struct WgConfig *config);

/**
 * Runs the solver without writing files. On continuation or diagnostics
 * failure `out` still receives the last state and the status says why.
 *
 * # Safety
 * `config` must be a live handle and `out` a writable pointer.
 */
enum WgStatus wg_solve(const struct WgConfig *config, struct WgSolution **out);

/**
 * # Safety
 * `solution` must be NULL or a handle not yet freed.
 */
void wg_solution_free(struct WgSolution *solution);

/**
 * Number of grid nodes, or 0 for NULL.
 *
 * # Safety
 * `solution` must be NULL or a live handle.
 */
size_t wg_solution_node_count(const struct WgSolution *solution);

/**
 * Status of the run that produced `solution`.
 *
 * # Safety
 * `solution` must be a live handle.
 */
enum WgStatus wg_solution_status(const struct WgSolution *solution);

/**
 * Copies `u = 1 / rho` per node into `buf` (at least node-count values).
 *
 * # Safety
 * `buf` must be writable for `len` doubles.
 */
enum WgStatus wg_solution_copy_u(const struct WgSolution *solution, double *buf, size_t len);

/**
 * Copies embedded vertices as `x0 y0 z0 x1 ...` (three per node).
 *
 * # Safety
 * `buf` must be writable for `len` doubles.
 */
enum WgStatus wg_solution_copy_vertices(const struct WgSolution *solution, double *buf, size_t len);

/**
 * Max-norm of the target residual at the returned state.
 *
 * # Safety
 * `out` must be writable.
 */
enum WgStatus wg_solution_residual(const struct WgSolution *solution, double *out);

/**
 * Writes the embedded mesh as OBJ or legacy VTK.
 *
 * # Safety
 * `path` must be a NUL-terminated string.
 */
enum WgStatus wg_solution_export(const struct WgSolution *solution,
                                 const char *path,
                                 enum WgMeshFormat format);

/**
 * Parses a curvature expression in `nx`, `ny`, `nz`.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a writable pointer.
 */
enum WgStatus wg_psi_parse(const char *text, struct WgPsi **out);

/**
 * Evaluates `psi` at the point `n[0..3]`.
 *
 * # Safety
 * `n` must point to three readable doubles and `out` be writable.
 */
enum WgStatus wg_psi_eval(const struct WgPsi *psi, const double *n, double *out);

/**
 * # Safety
 * `psi` must be NULL or a handle not yet freed.
 */
void wg_psi_free(struct WgPsi *psi);

/**
 * Normalized elementary symmetric function `S_k` of `values[0..n]`.
 *
 * # Safety
 * `values` must point to `n` readable doubles and `out` be writable.
 */
enum WgStatus wg_elem_sym_norm(const double *values, size_t n, size_t k, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WEINGARTEN_H */
