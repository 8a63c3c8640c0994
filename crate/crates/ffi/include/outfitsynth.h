#ifndef OUTFITSYNTH_H
#define OUTFITSYNTH_H

#pragma once

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OsStatus {
  OS_STATUS_OK = 0,
  OS_STATUS_NULL_POINTER = 1,
  OS_STATUS_INVALID_ARGUMENT = 2,
  OS_STATUS_IO = 3,
  OS_STATUS_INTEGRITY = 4,
  OS_STATUS_HASH_MISMATCH = 5,
  OS_STATUS_RUNTIME = 6,
  OS_STATUS_BUFFER_TOO_SMALL = 7,
  OS_STATUS_PANIC = 8,
} OsStatus;

/**
 * Resolved run configuration.
 */
typedef struct OsConfig OsConfig;

/**
 * Outfit generator with one item generator per target category.
 */
typedef struct OsGenerator OsGenerator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *os_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *os_version(void);

/**
 * Default configuration.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum OsStatus os_config_default(struct OsConfig **out);

/**
 * Configuration from a flat JSON object with dotted keys, applied over
 * the defaults.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum OsStatus os_config_from_json(const char *json, struct OsConfig **out);

/**
 * Sets one dotted key; `value` is JSON or a bare string.
 *
 * # Safety
 * `cfg` must come from this library; `key` and `value` must be NUL-terminated.
 */
enum OsStatus os_config_set(struct OsConfig *cfg, const char *key, const char *value);

/**
 * Writes the config hash (64 hex digits and a NUL) into `buf`.
 *
 * # Safety
 * `cfg` must come from this library; `buf` must hold `len` bytes.
 */
enum OsStatus os_config_hash(const struct OsConfig *cfg, char *buf, size_t len);

/**
 * # Safety
 * `cfg` must come from this library or be NULL; it is invalid afterwards.
 */
void os_config_free(struct OsConfig *cfg);

/**
 * Freshly initialized generator for `cfg`.
 *
 * # Safety
 * `cfg` must come from this library; `out` must be writable.
 */
enum OsStatus os_generator_new(const struct OsConfig *cfg, struct OsGenerator **out);

/**
 * Generator restored from a training checkpoint. With a non-NULL `cfg`,
 * the checkpoint's config hash must match unless `force` is nonzero.
 *
 * # Safety
 * `path` must be NUL-terminated; `cfg` NULL or from this library; `out` writable.
 */
enum OsStatus os_generator_load(const char *path,
                                const struct OsConfig *cfg,
                                int32_t force,
                                struct OsGenerator **out);

/**
 * Side length in pixels, or 0 for NULL.
 *
 * # Safety
 * `g` must come from this library or be NULL.
 */
size_t os_generator_image_size(const struct OsGenerator *g);

/**
 * Number of outfit positions (given item included), or 0 for NULL.
 *
 * # Safety
 * `g` must come from this library or be NULL.
 */
size_t os_generator_num_items(const struct OsGenerator *g);

/**
 * Completes an outfit.
 *
 * `given` is one `3×S×S` planar RGB image in `[-1, 1]`. `masks` holds one
 * `S×S` {0, 1} mask per target category in configured order. `out`
 * receives every outfit position (given item included) as `3×S×S` planes,
 * `num_items × 3 × S × S` floats in total.
 *
 * # Safety
 * `g` must come from this library; the buffers must hold the stated lengths.
 */
enum OsStatus os_generator_generate(const struct OsGenerator *g,
                                    const float *given,
                                    size_t given_len,
                                    const float *masks,
                                    size_t masks_len,
                                    float *out,
                                    size_t out_len);

/**
 * # Safety
 * `g` must come from this library or be NULL; it is invalid afterwards.
 */
void os_generator_free(struct OsGenerator *g);

/**
 * Renders a synthetic corpus of `n` outfits into `out_dir`.
 *
 * # Safety
 * `out_dir` must be NUL-terminated.
 */
enum OsStatus os_corpus_generate(size_t n, uint64_t seed, size_t image_size, const char *out_dir);

/**
 * SSIM of two `3×S×S` planar images in `[-1, 1]`.
 *
 * # Safety
 * `x` and `y` must each hold `3 * size * size` floats; `out` must be writable.
 */
enum OsStatus os_ssim(const float *x, const float *y, size_t size, double *out);

/**
 * Fraction of pairs where `pos[i] > neg[i]`.
 *
 * # Safety
 * `pos` and `neg` must each hold `n` doubles; `out` must be writable.
 */
enum OsStatus os_fcts(const double *pos, const double *neg, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OUTFITSYNTH_H */
