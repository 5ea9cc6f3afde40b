#ifndef ROTE_H
#define ROTE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RoteStatus {
  ROTE_STATUS_OK = 0,
  ROTE_STATUS_NULL_POINTER = 1,
  ROTE_STATUS_INVALID_ARGUMENT = 2,
  ROTE_STATUS_BUFFER_TOO_SMALL = 3,
  ROTE_STATUS_PRE_EPOCH = 4,
  ROTE_STATUS_IO = 5,
  ROTE_STATUS_CHECKPOINT = 6,
  ROTE_STATUS_INTERNAL = 7,
} RoteStatus;

typedef enum RoteMode {
  ROTE_MODE_POSITIONAL = 0,
  ROTE_MODE_TIMESTAMP = 1,
  ROTE_MODE_YEAR = 2,
  ROTE_MODE_YEAR_MONTH = 3,
  ROTE_MODE_YEAR_MONTH_DAY = 4,
} RoteMode;

/**
 * Opaque model handle.
 */
typedef struct RoteModel RoteModel;

/**
 * Years, months and days elapsed since 1970-01-01 UTC.
 */
typedef struct RoteTriplet {
  uint64_t year;
  uint64_t month;
  uint64_t day;
} RoteTriplet;

/**
 * Fusion bases and weights for [`rote_fuse_levels`].
 */
typedef struct RoteLevels {
  double base_year;
  double base_month;
  double base_day;
  double alpha_year;
  double alpha_month;
  double alpha_day;
} RoteLevels;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *rote_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rote_version(void);

/**
 * # Safety
 * `out` must point to a writable `RoteTriplet`.
 */
enum RoteStatus rote_decompose_timestamp(int64_t seconds, struct RoteTriplet *out);

/**
 * Writes `head_dim / 2` inverse frequencies.
 *
 * # Safety
 * `out` must point to `out_len` writable doubles.
 */
enum RoteStatus rote_inverse_frequencies(double base,
                                         uintptr_t head_dim,
                                         double *out,
                                         uintptr_t out_len);

/**
 * Rotates each pair of `x` by the matching angle; `n_angles` must be `len / 2`.
 *
 * # Safety
 * `x` and `out` must hold `len` doubles and `angles` `n_angles` doubles.
 */
enum RoteStatus rote_apply_rotary(const double *x,
                                  uintptr_t len,
                                  const double *angles,
                                  uintptr_t n_angles,
                                  double *out);

/**
 * Weighted sum of year, month and day rotations of `x` (length = head_dim).
 * A null `levels` selects the default bases and weights.
 *
 * # Safety
 * `x` and `out` must hold `len` doubles; `levels` is null or valid.
 */
enum RoteStatus rote_fuse_levels(const double *x,
                                 uintptr_t len,
                                 struct RoteTriplet time,
                                 const struct RoteLevels *levels,
                                 double *out);

/**
 * Freshly initialized model with default sizes.
 *
 * # Safety
 * `out` must point to a writable handle slot.
 */
enum RoteStatus rote_model_new(uintptr_t vocab_size,
                               enum RoteMode mode,
                               uint64_t seed,
                               struct RoteModel **out);

/**
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string, `out` a writable slot.
 */
enum RoteStatus rote_model_load(const char *path, struct RoteModel **out);

/**
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated UTF-8 string.
 */
enum RoteStatus rote_model_save(const struct RoteModel *model, const char *path);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not freed before.
 */
void rote_model_free(struct RoteModel *model);

/**
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum RoteStatus rote_model_param_count(const struct RoteModel *model, uintptr_t *out);

/**
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum RoteStatus rote_model_vocab_size(const struct RoteModel *model, uintptr_t *out);

/**
 * Next-item scores for a history of `len` (item, unix seconds) pairs in
 * time order. `scores` receives `vocab_size` values; index 0 is `-inf`.
 *
 * # Safety
 * `items` and `timestamps` must hold `len` values and `scores` `scores_len`.
 */
enum RoteStatus rote_model_score_next(const struct RoteModel *model,
                                      const uintptr_t *items,
                                      const int64_t *timestamps,
                                      uintptr_t len,
                                      double *scores,
                                      uintptr_t scores_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROTE_H */
