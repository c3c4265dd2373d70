#ifndef FEDDURE_H
#define FEDDURE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FeddureStatus {
  FEDDURE_STATUS_OK = 0,
  FEDDURE_STATUS_NULL_POINTER = 1,
  FEDDURE_STATUS_INVALID_UTF8 = 2,
  FEDDURE_STATUS_CONFIG = 3,
  FEDDURE_STATUS_RUNTIME = 4,
  FEDDURE_STATUS_BUFFER_TOO_SMALL = 5,
  FEDDURE_STATUS_PANIC = 6,
} FeddureStatus;

/**
 * Opaque experiment configuration.
 */
typedef struct FeddureConfig FeddureConfig;

/**
 * Opaque in-memory experiment.
 */
typedef struct FeddureExperiment FeddureExperiment;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message on this thread, or null. Valid until the next failing
 * call on the same thread.
 */
const char *feddure_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *feddure_version(void);

/**
 * Default configuration.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum FeddureStatus feddure_config_default(struct FeddureConfig **out);

/**
 * Configuration from a flat TOML document.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FeddureStatus feddure_config_from_toml(const char *toml, struct FeddureConfig **out);

/**
 * Configuration from a built-in preset name.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FeddureStatus feddure_config_from_preset(const char *name, struct FeddureConfig **out);

/**
 * Sets one key. The value uses TOML syntax; bare words are read as
 * strings. The config is left unchanged if the result is invalid.
 *
 * # Safety
 * `cfg` must come from a `feddure_config_*` constructor; `key` and `value`
 * must be NUL-terminated strings.
 */
enum FeddureStatus feddure_config_set(struct FeddureConfig *cfg,
                                      const char *key,
                                      const char *value);

/**
 * Writes the config as TOML into `buf` (NUL-terminated). `needed` receives
 * the required size including the terminator; a too-small buffer returns
 * `BUFFER_TOO_SMALL` without writing.
 *
 * # Safety
 * `cfg` must be valid; `buf` must hold `capacity` bytes or be null when
 * `capacity` is 0; `needed` must be valid.
 */
enum FeddureStatus feddure_config_to_toml(const struct FeddureConfig *cfg,
                                          char *buf,
                                          size_t capacity,
                                          size_t *needed);

/**
 * # Safety
 * `cfg` must come from a constructor and not be used afterwards. Null is
 * ignored.
 */
void feddure_config_free(struct FeddureConfig *cfg);

/**
 * Builds data, partition, clients, and the initial model.
 *
 * # Safety
 * `cfg` must be valid and `out` a valid pointer.
 */
enum FeddureStatus feddure_experiment_new(const struct FeddureConfig *cfg,
                                          struct FeddureExperiment **out);

/**
 * Rebuilds an experiment from `cfg` and restores a checkpoint file.
 *
 * # Safety
 * `cfg` must be valid, `path` NUL-terminated, `out` a valid pointer.
 */
enum FeddureStatus feddure_experiment_resume(const struct FeddureConfig *cfg,
                                             const char *path,
                                             struct FeddureExperiment **out);

/**
 * Runs one round; `accuracy` (nullable) receives the new test accuracy.
 *
 * # Safety
 * `exp` must be valid; `accuracy` null or valid.
 */
enum FeddureStatus feddure_experiment_run_round(struct FeddureExperiment *exp, double *accuracy);

/**
 * Number of completed rounds.
 *
 * # Safety
 * `exp` must be valid and `out` a valid pointer.
 */
enum FeddureStatus feddure_experiment_rounds_done(const struct FeddureExperiment *exp, size_t *out);

/**
 * Test accuracy of the latest round; fails before the first round.
 *
 * # Safety
 * `exp` must be valid and `out` a valid pointer.
 */
enum FeddureStatus feddure_experiment_accuracy(const struct FeddureExperiment *exp, double *out);

/**
 * Number of global model parameters.
 *
 * # Safety
 * `exp` must be valid and `out` a valid pointer.
 */
enum FeddureStatus feddure_experiment_param_count(const struct FeddureExperiment *exp, size_t *out);

/**
 * Copies the flattened global parameters into `buf`.
 *
 * # Safety
 * `exp` must be valid and `buf` must hold `len` doubles.
 */
enum FeddureStatus feddure_experiment_copy_params(const struct FeddureExperiment *exp,
                                                  double *buf,
                                                  size_t len);

/**
 * Writes a JSON checkpoint.
 *
 * # Safety
 * `exp` must be valid and `path` NUL-terminated.
 */
enum FeddureStatus feddure_experiment_save_checkpoint(const struct FeddureExperiment *exp,
                                                      const char *path);

/**
 * # Safety
 * `exp` must come from a constructor and not be used afterwards. Null is
 * ignored.
 */
void feddure_experiment_free(struct FeddureExperiment *exp);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDDURE_H */
