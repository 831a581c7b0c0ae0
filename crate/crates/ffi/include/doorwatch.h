#ifndef DOORWATCH_H
#define DOORWATCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Length of the histogram written by [`dw_lbp_histogram`].
 */
#define DW_HISTOGRAM_LEN 3776

/**
 * Result codes. The non-zero values match the command-line exit codes
 * where a matching category exists.
 */
typedef enum DwStatus {
  DW_STATUS_OK = 0,
  DW_STATUS_STORAGE = 1,
  DW_STATUS_INVALID_INPUT = 2,
  DW_STATUS_CONFLICT = 3,
  DW_STATUS_NOT_FOUND = 4,
  DW_STATUS_QUALITY = 5,
  DW_STATUS_BACKEND_UNAVAILABLE = 6,
  DW_STATUS_NULL_ARGUMENT = 7,
  DW_STATUS_PANIC = 8,
} DwStatus;

/**
 * A configured engine with its backend connection and notification queue.
 */
typedef struct DwEngine DwEngine;

/**
 * Enrolled-person store.
 */
typedef struct DwProfileStore DwProfileStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next call on the same thread.
 */
const char *dw_last_error(void);

/**
 * Frees a string returned through an `out` parameter. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void dw_string_free(char *s);

/**
 * Static version string.
 */
const char *dw_version(void);

/**
 * Opens (creating if needed) the profile store at `root`.
 *
 * # Safety
 * `root` must be a valid C string; `out` a valid pointer.
 */
enum DwStatus dw_profile_store_open(const char *root, struct DwProfileStore **out);

/**
 * # Safety
 * `store` must come from [`dw_profile_store_open`] or be null.
 */
void dw_profile_store_close(struct DwProfileStore *store);

/**
 * Enrolls a person from every image in `chips_dir`. `email` and `contact`
 * may be null. Writes the new person id to `out_person_id`.
 *
 * # Safety
 * Pointers must be valid; strings NUL-terminated.
 */
enum DwStatus dw_profile_add_person(struct DwProfileStore *store,
                                    const char *name,
                                    const char *email,
                                    const char *contact,
                                    const char *chips_dir,
                                    char **out_person_id);

/**
 * Deletes by person id or name.
 *
 * # Safety
 * Pointers must be valid.
 */
enum DwStatus dw_profile_delete_person(struct DwProfileStore *store, const char *person);

/**
 * Number of enrolled persons.
 *
 * # Safety
 * Pointers must be valid.
 */
enum DwStatus dw_profile_count(struct DwProfileStore *store, size_t *out);

/**
 * One line per person.
 *
 * # Safety
 * Pointers must be valid.
 */
enum DwStatus dw_profile_summary(struct DwProfileStore *store, char **out);

/**
 * Loads an engine config file and assembles the engine.
 *
 * # Safety
 * `config_path` must be a valid C string; `out` a valid pointer.
 */
enum DwStatus dw_engine_open(const char *config_path, struct DwEngine **out);

/**
 * Processes every frame currently in the camera directories and writes
 * per-camera counts as a JSON object to `out_json`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum DwStatus dw_engine_process_pending(struct DwEngine *engine, char **out_json);

/**
 * Drains pending notifications and frees the engine.
 *
 * # Safety
 * `engine` must come from [`dw_engine_open`] or be null.
 */
void dw_engine_close(struct DwEngine *engine);

/**
 * Event-log summary as JSON. `since`/`until` are RFC 3339 or null.
 *
 * # Safety
 * Pointers must be valid.
 */
enum DwStatus dw_history_json(const char *log_path,
                              const char *since,
                              const char *until,
                              size_t top,
                              char **out);

/**
 * Renders a scene-facts JSON object as a one-sentence description.
 *
 * # Safety
 * Pointers must be valid.
 */
enum DwStatus dw_describe(const char *facts_json, char **out);

/**
 * Uniform LBP histogram of a row-major 8-bit grayscale chip. `out` must
 * hold [`DW_HISTOGRAM_LEN`] values.
 *
 * # Safety
 * `pixels` must point to `width * height` bytes and `out` to `out_len` doubles.
 */
enum DwStatus dw_lbp_histogram(const uint8_t *pixels,
                               uint32_t width,
                               uint32_t height,
                               double *out,
                               size_t out_len);

/**
 * Chi-square distance between two histograms of length `len`.
 *
 * # Safety
 * `a` and `b` must point to `len` doubles; `out` must be valid.
 */
enum DwStatus dw_chi_square(const double *a, const double *b, size_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DOORWATCH_H */
