#ifndef DYNCOPULA_H
#define DYNCOPULA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of every fallible call.
 */
typedef enum {
  DC_STATUS_OK = 0,
  /*
   A required pointer argument was null.
   */
  DC_STATUS_NULL_POINTER = 1,
  /*
   A string argument was not valid UTF-8.
   */
  DC_STATUS_INVALID_UTF8 = 2,
  /*
   Malformed or inconsistent configuration.
   */
  DC_STATUS_CONFIG = 3,
  /*
   Any other bad input: parameters, shapes, domains.
   */
  DC_STATUS_INVALID_INPUT = 4,
  /*
   The numerics failed: stability bound, divergence, blow-up.
   */
  DC_STATUS_NUMERICAL = 5,
  DC_STATUS_IO = 6,
  /*
   A caller-supplied buffer is too small.
   */
  DC_STATUS_BUFFER_TOO_SMALL = 7,
  /*
   An internal panic was caught at the boundary.
   */
  DC_STATUS_PANIC = 8,
} DcStatus;

typedef enum {
  DC_METRIC_SUP = 0,
  DC_METRIC_L2 = 1,
} DcMetric;

/*
 Parsed and checked experiment configuration.
 */
typedef struct DcConfig DcConfig;

/*
 Copula values on a uniform lattice of [0,1]^n.
 */
typedef struct DcGrid DcGrid;

/*
 Scalar summary of an evolution run.
 */
typedef struct {
  size_t steps;
  double dt;
  double max_boundary_correction;
  double max_clip;
  bool axioms_passed;
} DcEvolveSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *dc_version(void);

/*
 Message of the last failed call on this thread; empty after a success.
 Valid until the next call into the library from the same thread.
 */
const char *dc_last_error_message(void);

/*
 Steps the stability bound asks for when the last call failed with
 `DC_STATUS_NUMERICAL` for that reason; 0 otherwise.
 */
size_t dc_last_error_required_steps(void);

/*
 Parses a TOML configuration.

 # Safety
 `toml` must be a NUL-terminated string; `out` must be writable.
 */
DcStatus dc_config_from_toml(const char *toml, DcConfig **out);

/*
 Reads and parses a TOML configuration file.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
DcStatus dc_config_load(const char *path, DcConfig **out);

/*
 Replaces the root seed.

 # Safety
 `cfg` must be a live handle.
 */
DcStatus dc_config_set_seed(DcConfig *cfg, uint64_t seed);

/*
 Replaces the lattice resolution; the configuration is left unchanged when
 the new value is rejected.

 # Safety
 `cfg` must be a live handle.
 */
DcStatus dc_config_set_resolution(DcConfig *cfg, size_t resolution);

/*
 # Safety
 `cfg` must be null or a handle not yet freed.
 */
void dc_config_free(DcConfig *cfg);

/*
 The configured initial copula sampled on the lattice at t0.

 # Safety
 `cfg` must be a live handle; `out` must be writable.
 */
DcStatus dc_initial_grid(const DcConfig *cfg, DcGrid **out);

/*
 Evolves the configured initial copula from t0 to t1. `summary` and
 `diagnostics_json` may be null; a returned JSON string is released with
 `dc_string_free`.

 # Safety
 `cfg` must be a live handle; `out` must be writable.
 */
DcStatus dc_evolve(const DcConfig *cfg,
                   DcGrid **out,
                   DcEvolveSummary *summary,
                   char **diagnostics_json);

/*
 Distance between `grid` and the empirical copula of paths simulated (or
 read) as configured. `pass` may be null.

 # Safety
 `cfg` and `grid` must be live handles; `distance` must be writable.
 */
DcStatus dc_validate(const DcConfig *cfg, const DcGrid *grid, double *distance, bool *pass);

/*
 Chapman–Kolmogorov residual of the configured copula triple.

 # Safety
 `cfg` must be a live handle; `residual` must be writable.
 */
DcStatus dc_product_residual(const DcConfig *cfg, double *residual);

/*
 Bivariate Gaussian copula with correlation `rho` on the lattice.

 # Safety
 `out` must be writable.
 */
DcStatus dc_grid_gaussian(double rho, size_t resolution, double time, DcGrid **out);

/*
 Independence copula of dimension `dim` on the lattice.

 # Safety
 `out` must be writable.
 */
DcStatus dc_grid_product(size_t dim, size_t resolution, double time, DcGrid **out);

/*
 Grid from `len = resolution^dim` values in row-major order, last axis fastest.

 # Safety
 `values` must point to `len` readable doubles; `out` must be writable.
 */
DcStatus dc_grid_from_values(size_t dim,
                             size_t resolution,
                             const double *values,
                             size_t len,
                             double time,
                             DcGrid **out);

/*
 # Safety
 `grid` must be null or a live handle.
 */
size_t dc_grid_dim(const DcGrid *grid);

/*
 # Safety
 `grid` must be null or a live handle.
 */
size_t dc_grid_resolution(const DcGrid *grid);

/*
 Number of lattice values.

 # Safety
 `grid` must be null or a live handle.
 */
size_t dc_grid_len(const DcGrid *grid);

/*
 # Safety
 `grid` must be null or a live handle.
 */
double dc_grid_time(const DcGrid *grid);

/*
 Borrowed view of the values, valid while the handle lives.

 # Safety
 `grid` must be null or a live handle.
 */
const double *dc_grid_values(const DcGrid *grid);

/*
 Copies the values into `buf`, which must hold `dc_grid_len` doubles.

 # Safety
 `grid` must be a live handle; `buf` must point to `len` writable doubles.
 */
DcStatus dc_grid_copy_values(const DcGrid *grid, double *buf, size_t len);

/*
 Multilinear interpolation at `u` (length `dim`).

 # Safety
 `grid` must be a live handle; `u` must point to `n` doubles; `out` must be writable.
 */
DcStatus dc_grid_interpolate(const DcGrid *grid, const double *u, size_t n, double *out);

/*
 Distance between two grids of equal shape.

 # Safety
 `a` and `b` must be live handles; `out` must be writable.
 */
DcStatus dc_grid_distance(const DcGrid *a, const DcGrid *b, DcMetric metric, double *out);

/*
 # Safety
 `grid` must be null or a handle not yet freed.
 */
void dc_grid_free(DcGrid *grid);

/*
 Releases a string returned by the library.

 # Safety
 `s` must be null or a string from this library not yet freed.
 */
void dc_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DYNCOPULA_H */
