#ifndef CEMGMS_H
#define CEMGMS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CemStatus {
  CEM_STATUS_OK = 0,
  CEM_STATUS_NULL_POINTER = 1,
  CEM_STATUS_INVALID_ARGUMENT = 2,
  CEM_STATUS_CONFIG = 3,
  CEM_STATUS_IO = 4,
  CEM_STATUS_NUMERICAL = 5,
  CEM_STATUS_INTERNAL = 6,
  CEM_STATUS_PANIC = 7,
} CemStatus;

/**
 * An experiment configuration.
 */
typedef struct CemConfig CemConfig;

/**
 * A permeability field.
 */
typedef struct CemField CemField;

/**
 * The result of one run.
 */
typedef struct CemRun CemRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call into this library.
 */
const char *cem_last_error(void);

/**
 * Library version, a static string.
 */
const char *cem_version(void);

/**
 * Seeded channelized field with background 1 and channels at `contrast`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum CemStatus cem_field_channelized(size_t nx,
                                     size_t ny,
                                     size_t channels,
                                     double contrast,
                                     uint64_t seed,
                                     struct CemField **out);

/**
 * Loads a raster file (`nx ny` header, then `nx·ny` values, row-major).
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum CemStatus cem_field_from_raster(const char *path, struct CemField **out);

/**
 * Field from `len = nx·ny` row-major cell values.
 *
 * # Safety
 * `values` must point to `len` readable doubles and `out` be writable.
 */
enum CemStatus cem_field_from_values(size_t nx,
                                     size_t ny,
                                     const double *values,
                                     size_t len,
                                     struct CemField **out);

/**
 * `κ_max / κ_min`.
 *
 * # Safety
 * `field` must be a live handle and `out` writable.
 */
enum CemStatus cem_field_contrast(const struct CemField *field, double *out);

/**
 * # Safety
 * `field` must be null or a handle not yet freed.
 */
void cem_field_free(struct CemField *field);

/**
 * Default configuration (80×80 fine grid, 10×10 coarse, `L_z = 2`, auto
 * layers, `τ = 0.01`, `T = 1`, no output directory).
 *
 * # Safety
 * `out` must be writable.
 */
enum CemStatus cem_config_default(struct CemConfig **out);

/**
 * Sets one config key, using the same keys as the config file format.
 *
 * # Safety
 * `config` must be a live handle; `key` and `value` NUL-terminated strings.
 */
enum CemStatus cem_config_set(struct CemConfig *config, const char *key, const char *value);

/**
 * # Safety
 * `config` must be null or a handle not yet freed.
 */
void cem_config_free(struct CemConfig *config);

/**
 * Runs the configured experiment (sweeps are ignored).
 *
 * # Safety
 * `config` must be a live handle and `out` writable.
 */
enum CemStatus cem_run_single(const struct CemConfig *config, struct CemRun **out);

/**
 * Runs the configured experiment on `field` instead of the configured one.
 *
 * # Safety
 * `config` and `field` must be live handles and `out` writable.
 */
enum CemStatus cem_run_with_field(const struct CemConfig *config,
                                  const struct CemField *field,
                                  struct CemRun **out);

/**
 * Number of stored time levels (`N + 1`).
 *
 * # Safety
 * `run` must be a live handle and `out` writable.
 */
enum CemStatus cem_run_steps(const struct CemRun *run, size_t *out);

/**
 * Time and relative errors at time level `step`; an error that is undefined
 * (zero reference norm) is reported as NaN.
 *
 * # Safety
 * `run` must be a live handle; the output pointers writable.
 */
enum CemStatus cem_run_errors(const struct CemRun *run,
                              size_t step,
                              double *t,
                              double *e_v,
                              double *e_p);

/**
 * Oversampling layers actually used (resolves `auto`).
 *
 * # Safety
 * `run` must be a live handle and `out` writable.
 */
enum CemStatus cem_run_layers(const struct CemRun *run, size_t *out);

/**
 * # Safety
 * `run` must be null or a handle not yet freed.
 */
void cem_run_free(struct CemRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CEMGMS_H */
