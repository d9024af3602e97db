#ifndef PRUNESCOPE_H
#define PRUNESCOPE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of every fallible call.
 */
typedef enum PsStatus {
  PS_STATUS_OK = 0,
  PS_STATUS_NULL_ARGUMENT = 1,
  PS_STATUS_INVALID_ARGUMENT = 2,
  PS_STATUS_CONFIG = 3,
  PS_STATUS_NUMERICAL = 4,
  PS_STATUS_IO = 5,
  PS_STATUS_PARSE = 6,
  PS_STATUS_CHECKPOINT = 7,
  PS_STATUS_MISSING_ARTIFACT = 8,
  PS_STATUS_PANIC = 9,
  PS_STATUS_OTHER = 10,
} PsStatus;

/*
 A checkpoint loaded from disk.
 */
typedef struct PsCheckpoint PsCheckpoint;

/*
 Parsed and validated experiment configuration.
 */
typedef struct PsConfig PsConfig;

/*
 An experiment bound to an artifact directory.
 */
typedef struct PsPipeline PsPipeline;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failure on this thread, or null. The pointer stays
 valid until the next failing call on the same thread.
 */
const char *ps_last_error(void);

/*
 Library version as a static nul-terminated string.
 */
const char *ps_version(void);

/*
 Default desk-scale configuration.

 # Safety
 `out` must be a valid pointer to write a handle into.
 */
enum PsStatus ps_config_default(struct PsConfig **out);

/*
 Parses a JSON configuration.

 # Safety
 `json` must be a nul-terminated string and `out` a valid pointer.
 */
enum PsStatus ps_config_from_json(const char *json, struct PsConfig **out);

/*
 Fingerprint (hex SHA-256) of the configuration, copied into `buf`
 including the terminating nul. `buf_len` must be at least 65.

 # Safety
 `cfg` must be a live handle and `buf` valid for `buf_len` bytes.
 */
enum PsStatus ps_config_fingerprint(const struct PsConfig *cfg, char *buf, size_t buf_len);

/*
 # Safety
 `cfg` must be null or a handle from this library, not yet freed.
 */
void ps_config_free(struct PsConfig *cfg);

/*
 Opens (or resumes) an experiment in `out_dir`. Relative dataset paths
 resolve against `data_base`, which may be null for the working directory.

 # Safety
 `cfg` must be a live handle; strings must be nul-terminated; `out` valid.
 */
enum PsStatus ps_pipeline_open(const struct PsConfig *cfg,
                               const char *out_dir,
                               const char *data_base,
                               struct PsPipeline **out);

/*
 Runs every remaining stage.

 # Safety
 `p` must be a live handle.
 */
enum PsStatus ps_pipeline_run_all(struct PsPipeline *p);

/*
 Runs one stage by name ("data", "dense", "imp", "variants", "eigen",
 "radius", "interp", "surface", "geometry", "taylor", "postprune",
 "summary", "plots"), along with whatever it depends on.

 # Safety
 `p` must be a live handle and `stage` nul-terminated.
 */
enum PsStatus ps_pipeline_run_stage(struct PsPipeline *p, const char *stage);

/*
 # Safety
 `p` must be null or a handle from this library, not yet freed.
 */
void ps_pipeline_free(struct PsPipeline *p);

/*
 Loads and verifies a checkpoint file.

 # Safety
 `path` must be nul-terminated and `out` valid.
 */
enum PsStatus ps_checkpoint_load(const char *path, struct PsCheckpoint **out);

/*
 Parameter count, or 0 for a null handle.

 # Safety
 `cp` must be null or a live handle.
 */
size_t ps_checkpoint_param_count(const struct PsCheckpoint *cp);

/*
 Pruning level recorded in the header, or 0 for a null handle.

 # Safety
 `cp` must be null or a live handle.
 */
size_t ps_checkpoint_level(const struct PsCheckpoint *cp);

/*
 Copies the parameters into `buf`, which must hold exactly
 `ps_checkpoint_param_count` doubles.

 # Safety
 `cp` must be a live handle and `buf` valid for `len` doubles.
 */
enum PsStatus ps_checkpoint_copy_params(const struct PsCheckpoint *cp, double *buf, size_t len);

/*
 Copies the mask as one byte (0 or 1) per parameter.

 # Safety
 `cp` must be a live handle and `buf` valid for `len` bytes.
 */
enum PsStatus ps_checkpoint_copy_mask(const struct PsCheckpoint *cp, uint8_t *buf, size_t len);

/*
 # Safety
 `cp` must be null or a handle from this library, not yet freed.
 */
void ps_checkpoint_free(struct PsCheckpoint *cp);

/*
 Sum of the logs of the `k` largest positive eigenvalues.

 # Safety
 `eigenvalues` must be valid for `n` doubles and `out` valid.
 */
enum PsStatus ps_inverse_volume(const double *eigenvalues, size_t n, size_t k, double *out);

/*
 Renders SVG figures for an artifact directory with a manifest.

 # Safety
 `dir` must be nul-terminated.
 */
enum PsStatus ps_emit_plots(const char *dir);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* PRUNESCOPE_H */
