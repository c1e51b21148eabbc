#ifndef WGQED_H
#define WGQED_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum WgqedDirection {
  WGQED_DIRECTION_FORWARD = 0,
  WGQED_DIRECTION_BACKWARD = 1,
} WgqedDirection;

typedef enum WgqedStatus {
  WGQED_STATUS_OK = 0,
  WGQED_STATUS_NULL_POINTER = 1,
  WGQED_STATUS_INVALID_ARGUMENT = 2,
  WGQED_STATUS_CONFIG = 3,
  WGQED_STATUS_IO = 4,
  WGQED_STATUS_NUMERICS = 5,
  WGQED_STATUS_BUFFER_TOO_SMALL = 6,
  WGQED_STATUS_PANIC = 7,
} WgqedStatus;

/**
 * Resolved experiment configuration.
 */
typedef struct WgqedConfig WgqedConfig;

/**
 * Time-tag stream read from disk.
 */
typedef struct WgqedTags WgqedTags;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *wgqed_version(void);

/**
 * Copies the last error message of this thread into `buf` (truncated,
 * always NUL-terminated when `len > 0`) and returns the full message length
 * excluding the terminator. Returns 0 when no error was recorded.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t wgqed_last_error(char *buf, size_t len);

/**
 * Loads a configuration file, applying `n_overrides` `key=value` strings.
 *
 * # Safety
 * `path` must be a NUL-terminated string, `overrides` must hold
 * `n_overrides` such strings (or be null when zero), `out` must be writable.
 */
enum WgqedStatus wgqed_config_load(const char *path,
                                   const char *const *overrides,
                                   size_t n_overrides,
                                   struct WgqedConfig **out);

/**
 * Parses configuration text.
 *
 * # Safety
 * Same contract as [`wgqed_config_load`] with `text` in place of `path`.
 */
enum WgqedStatus wgqed_config_parse(const char *text,
                                    const char *const *overrides,
                                    size_t n_overrides,
                                    struct WgqedConfig **out);

/**
 * # Safety
 * `cfg` must be null or a handle from `wgqed_config_load`/`_parse` that has
 * not been freed.
 */
void wgqed_config_free(struct WgqedConfig *cfg);

/**
 * Number of emitters, 0 for a null handle.
 *
 * # Safety
 * `cfg` must be null or a live handle.
 */
size_t wgqed_config_emitter_count(const struct WgqedConfig *cfg);

/**
 * Number of points of the configured time grid, 0 for a null handle.
 *
 * # Safety
 * `cfg` must be null or a live handle.
 */
size_t wgqed_config_time_grid_len(const struct WgqedConfig *cfg);

/**
 * `direction` takes a [`WgqedDirection`] value. Fills `times` (ns, may be null) and `g1` (photons/ns) with the
 * diffusion-averaged intensity on the configured time grid. Both buffers
 * need `wgqed_config_time_grid_len` entries.
 *
 * # Safety
 * `cfg` must be a live handle; buffers must hold `len` doubles.
 */
enum WgqedStatus wgqed_g1(const struct WgqedConfig *cfg,
                          int32_t direction,
                          double *times,
                          double *g1,
                          size_t len);

/**
 * Zero-delay `g2` of the configured analysis chain for a
 * [`WgqedDirection`] value, with (`with_irf != 0`)
 * or without detector jitter.
 *
 * # Safety
 * `cfg` must be a live handle and `out` writable.
 */
enum WgqedStatus wgqed_g2_zero_delay(const struct WgqedConfig *cfg,
                                     int32_t direction,
                                     int32_t with_irf,
                                     double *out);

/**
 * Forward transmission at `n` common laser detunings (GHz) under CW
 * driving, averaged over the configured diffusion ensemble.
 *
 * # Safety
 * `cfg` must be a live handle; `delta_ghz` and `out` must hold `n` doubles.
 */
enum WgqedStatus wgqed_transmission(const struct WgqedConfig *cfg,
                                    const double *delta_ghz,
                                    size_t n,
                                    double *out);

/**
 * Reads a text or binary tag file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum WgqedStatus wgqed_tags_read(const char *path, struct WgqedTags **out);

/**
 * # Safety
 * `tags` must be null or a live handle.
 */
size_t wgqed_tags_len(const struct WgqedTags *tags);

/**
 * Copies record `index` into the output pointers.
 *
 * # Safety
 * `tags` must be a live handle; output pointers must be writable.
 */
enum WgqedStatus wgqed_tags_get(const struct WgqedTags *tags,
                                size_t index,
                                uint64_t *pulse_index,
                                int64_t *time_ps,
                                uint8_t *channel);

/**
 * # Safety
 * `tags` must be null or a live handle that has not been freed.
 */
void wgqed_tags_free(struct WgqedTags *tags);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WGQED_H */
