#ifndef RTE_TOMO_H
#define RTE_TOMO_H

/* Generated by cbindgen from rte-tomo-capi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status code of every fallible call.
typedef enum RtStatus {
  // Success.
  RT_STATUS_OK = 0,
  // A pointer argument was null or an index was out of range.
  RT_STATUS_INVALID_ARGUMENT = 1,
  // Invalid configuration or malformed input file.
  RT_STATUS_CONFIG_ERROR = 2,
  // A transport solve failed to converge.
  RT_STATUS_SOLVER_ERROR = 3,
  // An iteration tripped the divergence guard.
  RT_STATUS_DIVERGENCE = 4,
  // An internal panic was caught at the boundary.
  RT_STATUS_PANIC = 5,
} RtStatus;

// Coefficient kind of a medium handle.
typedef enum RtMediumKind {
  RT_MEDIUM_KIND_SCATTERING = 0,
  RT_MEDIUM_KIND_ABSORPTION = 1,
} RtMediumKind;

// Opaque synthetic measurement dataset.
typedef struct RtDataset RtDataset;

// Opaque phase-space grid.
typedef struct RtGrid RtGrid;

// Opaque nodal coefficient field.
typedef struct RtMedium RtMedium;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent failure on this thread. The pointer
// stays valid until the next failing call on the same thread.
const char *rt_last_error_message(void);

// Library version as a static C string.
const char *rt_version(void);

// Create a phase grid with `n_cells_per_side` cells per axis and
// `n_angles` directions (at least 4, divisible by 4).
//
// # Safety
// `out` must be a valid pointer to receive the handle; release it with
// [`rt_grid_free`].
enum RtStatus rt_grid_new(size_t n_cells_per_side, size_t n_angles, struct RtGrid **out);

// Release a grid handle (null is ignored).
//
// # Safety
// `grid` must have come from [`rt_grid_new`] and not be freed twice.
void rt_grid_free(struct RtGrid *grid);

// Number of spatial nodes; zero for a null handle.
//
// # Safety
// `grid` must be a live handle or null.
size_t rt_grid_node_count(const struct RtGrid *grid);

// Number of directions; zero for a null handle.
//
// # Safety
// `grid` must be a live handle or null.
size_t rt_grid_angle_count(const struct RtGrid *grid);

// Size of the inflow boundary set; zero for a null handle.
//
// # Safety
// `grid` must be a live handle or null.
size_t rt_grid_inflow_count(const struct RtGrid *grid);

// Size of the outflow boundary set; zero for a null handle.
//
// # Safety
// `grid` must be a live handle or null.
size_t rt_grid_outflow_count(const struct RtGrid *grid);

// Create the reference two-bump coefficient on the grid.
//
// # Safety
// `grid` must be a live handle; `out` receives a handle to release with
// [`rt_medium_free`].
enum RtStatus rt_medium_two_bump(const struct RtGrid *grid,
                                 enum RtMediumKind kind,
                                 struct RtMedium **out);

// Create a constant coefficient field.
//
// # Safety
// As [`rt_medium_two_bump`].
enum RtStatus rt_medium_constant(const struct RtGrid *grid,
                                 enum RtMediumKind kind,
                                 double value,
                                 struct RtMedium **out);

// Create a coefficient field from `len` nodal values in node-major order.
//
// # Safety
// `values` must point to `len` readable doubles; `len` must equal the
// grid's node count.
enum RtStatus rt_medium_from_values(const struct RtGrid *grid,
                                    enum RtMediumKind kind,
                                    const double *values,
                                    size_t len,
                                    struct RtMedium **out);

// Copy the nodal values of a medium into a caller buffer of length `len`
// (the grid's node count).
//
// # Safety
// `buffer` must point to `len` writable doubles.
enum RtStatus rt_medium_values(const struct RtMedium *medium, double *buffer, size_t len);

// Release a medium handle (null is ignored).
//
// # Safety
// `medium` must have come from a medium constructor and not be freed twice.
void rt_medium_free(struct RtMedium *medium);

// Solve the forward problem for the normalized delta source at position
// `inflow_index` in the grid's inflow set and write the measured outflow
// (one value per outflow pair) into `psi`.
//
// # Safety
// `psi` must point to `psi_len` writable doubles with `psi_len` equal to
// the grid's outflow count.
enum RtStatus rt_albedo_delta(const struct RtGrid *grid,
                              const struct RtMedium *medium,
                              size_t inflow_index,
                              double tolerance,
                              double *psi,
                              size_t psi_len);

// Quadrature-weighted (or plain, when `weighted` is false) relative L2
// error between two media on the same grid.
//
// # Safety
// All handles must be live; `out` must be writable.
enum RtStatus rt_relative_error(const struct RtGrid *grid,
                                const struct RtMedium *candidate,
                                const struct RtMedium *truth,
                                bool weighted,
                                double *out);

// Generate a seeded synthetic dataset against a ground-truth medium.
//
// # Safety
// `grid` and `medium` must be live handles; `out` receives a handle to
// release with [`rt_dataset_free`].
enum RtStatus rt_dataset_generate(const struct RtGrid *grid,
                                  const struct RtMedium *medium,
                                  size_t n_pairs,
                                  double noise_std,
                                  uint64_t seed,
                                  struct RtDataset **out);

// Number of experiments in a dataset; zero for a null handle.
//
// # Safety
// `dataset` must be a live handle or null.
size_t rt_dataset_len(const struct RtDataset *dataset);

// Source location (inflow node and angle index) of experiment `k`.
//
// # Safety
// `node` and `angle` must be writable.
enum RtStatus rt_dataset_source(const struct RtDataset *dataset,
                                size_t k,
                                size_t *node,
                                size_t *angle);

// Copy experiment `k`'s measured outflow into a caller buffer of length
// `len` (the grid's outflow count).
//
// # Safety
// `buffer` must point to `len` writable doubles.
enum RtStatus rt_dataset_psi(const struct RtDataset *dataset, size_t k, double *buffer, size_t len);

// Release a dataset handle (null is ignored).
//
// # Safety
// `dataset` must have come from [`rt_dataset_generate`] and not be freed
// twice.
void rt_dataset_free(struct RtDataset *dataset);

// Execute a pipeline command with a JSON run configuration, writing all
// artifacts under `out_dir`. `command` is one of `generate-data`,
// `invert`, `assemble-linear`, `spectral-report` or `cost-table`; the
// configuration documents are the same ones the command-line tool accepts.
//
// # Safety
// `command`, `config_json` and `out_dir` must be valid NUL-terminated
// strings.
enum RtStatus rt_run_json(const char *command, const char *config_json, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RTE_TOMO_H */
