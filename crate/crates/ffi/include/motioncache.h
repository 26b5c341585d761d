#ifndef MOTIONCACHE_H
#define MOTIONCACHE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes shared by every entry point.
typedef enum McStatus {
  MC_STATUS_OK = 0,
  MC_STATUS_NULL_POINTER = 1,
  MC_STATUS_INVALID_UTF8 = 2,
  MC_STATUS_INVALID_ARGUMENT = 3,
  MC_STATUS_CONFIG = 4,
  MC_STATUS_STATE = 5,
  MC_STATUS_NUMERIC = 6,
  MC_STATUS_INSUFFICIENT_DATA = 7,
  MC_STATUS_FORMAT = 8,
  MC_STATUS_IO = 9,
  MC_STATUS_PANIC = 10,
} McStatus;

// Opaque handle owning a validated experiment configuration.
typedef struct McEngine McEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL. The pointer
// stays valid until the next call into the library from the same thread.
const char *mc_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *mc_version(void);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void mc_string_free(char *s);

// Creates an engine from JSON config text (NULL selects the defaults).
//
// # Safety
// `config_json` must be NULL or a NUL-terminated string; `out` must be writable.
enum McStatus mc_engine_new(const char *config_json, struct McEngine **out);

// Destroys an engine. NULL is ignored.
//
// # Safety
// `engine` must come from [`mc_engine_new`] and not have been freed.
void mc_engine_free(struct McEngine *engine);

// Overrides the engine's seed list with a single seed.
//
// # Safety
// `engine` must be a live engine.
enum McStatus mc_engine_set_seed(struct McEngine *engine, uint64_t seed);

// Runs every configured policy and returns the summary JSON. When
// `out_dir` is not NULL, traces and `summary.json` are written there.
//
// # Safety
// `engine` must be live, `out_dir` NULL or NUL-terminated, `summary_out` writable.
enum McStatus mc_engine_run(const struct McEngine *engine, const char *out_dir, char **summary_out);

// Runs a check (`prop1`, `lemma`, `ndcg` or `sparse-dense`). `passed` is
// set to 1 or 0; the report JSON goes to `report_out` when it is not NULL.
//
// # Safety
// `engine` must be live, `kind` NUL-terminated, `passed` writable.
enum McStatus mc_engine_verify(const struct McEngine *engine,
                               const char *kind,
                               int32_t *passed,
                               char **report_out);

// Canonical hash of the engine's configuration (hex SHA-256).
//
// # Safety
// `engine` must be live and `out` writable.
enum McStatus mc_engine_config_hash(const struct McEngine *engine, char **out);

// Canonical hash of JSON config text without building an engine.
//
// # Safety
// `config_json` must be NULL or NUL-terminated; `out` must be writable.
enum McStatus mc_config_hash(const char *config_json, char **out);

// Full-depth NDCG of ranking by `proxy` against relevance `oracle`.
//
// # Safety
// Both arrays must hold `n` doubles; `out` must be writable.
enum McStatus mc_ndcg(const double *proxy, const double *oracle, size_t n, double *out);

// Soft weights `α + (1 − α)(M − min)/(max − min + eps)` of one frame.
//
// # Safety
// `importance` and `out` must each hold `n` doubles.
enum McStatus mc_soft_map(const double *importance,
                          size_t n,
                          double alpha,
                          double eps,
                          double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOTIONCACHE_H */
