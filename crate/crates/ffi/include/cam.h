#ifndef CAM_H
#define CAM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CamStatus {
  CAM_STATUS_OK = 0,
  CAM_STATUS_NULL_ARGUMENT = 1,
  CAM_STATUS_INVALID_UTF8 = 2,
  CAM_STATUS_IO = 3,
  CAM_STATUS_SCHEMA = 4,
  CAM_STATUS_INVALID_MODEL = 5,
  CAM_STATUS_NOT_FOUND = 6,
  CAM_STATUS_MISALIGNED = 7,
  CAM_STATUS_OTHER = 8,
  CAM_STATUS_PANIC = 9,
} CamStatus;

/**
 * Opaque model handle.
 */
typedef struct CamModel CamModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a model document from `path` into `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CamStatus cam_model_load(const char *path, struct CamModel **out);

/**
 * Parses a model document held in memory.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CamStatus cam_model_from_json(const char *json, struct CamModel **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void cam_model_free(struct CamModel *model);

/**
 * Number of input features the model expects.
 *
 * # Safety
 * `model` must be a live handle or null (returns 0).
 */
uintptr_t cam_model_feature_count(const struct CamModel *model);

/**
 * Scores a preprocessed instance (`len` values in feature order, each in [0,1]).
 *
 * # Safety
 * `model` must be live, `x` must point to `len` doubles, `score` must be valid.
 */
enum CamStatus cam_predict_instance(const struct CamModel *model,
                                    const double *x,
                                    uintptr_t len,
                                    double *score);

/**
 * Scores a raw record given as JSON (`{"features": {...}}` or a bare map).
 * Writes `{"strengths": {...}, "score": s}` to `*out`.
 *
 * # Safety
 * `model` must be live, `record` NUL-terminated, `out` valid.
 */
enum CamStatus cam_predict_json(const struct CamModel *model, const char *record, char **out);

/**
 * Explains `node` (id or label) for a raw JSON record. Writes the
 * explanation step as JSON to `*out`.
 *
 * # Safety
 * `model` must be live, `record` and `node` NUL-terminated, `out` valid.
 */
enum CamStatus cam_explain_json(const struct CamModel *model,
                                const char *record,
                                const char *node,
                                char **out);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void cam_string_free(char *s);

/**
 * Message of the last failed call on this thread, or null. Owned by the
 * library and valid until the next failing call on this thread.
 */
const char *cam_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CAM_H */
