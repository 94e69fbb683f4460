#ifndef SOMNOFLOW_H
#define SOMNOFLOW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum sf_status {
  SF_STATUS_OK = 0,
  // A required pointer was null or a string was not UTF-8.
  SF_STATUS_INVALID_ARGUMENT = 1,
  // The checkpoint could not be read.
  SF_STATUS_IO = 2,
  // The checkpoint is truncated or inconsistent.
  SF_STATUS_CORRUPT = 3,
  // The signal cannot be staged, e.g. no good sample or under one epoch.
  SF_STATUS_BAD_INPUT = 4,
  // The output buffers hold fewer entries than the record has epochs.
  SF_STATUS_BUFFER_TOO_SMALL = 5,
  // Any other failure, including a caught panic.
  SF_STATUS_INTERNAL = 6,
} sf_status;

// A loaded checkpoint: network, standardization and metadata.
typedef struct sf_model sf_model;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Loads the checkpoint at `path` (a NUL-terminated UTF-8 path) into a
// new handle stored in `*out`. `*out` is left untouched on failure.
//
// # Safety
// `path` must be a valid C string and `out` a writable pointer.
enum sf_status sf_model_load(const char *path, struct sf_model **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `model` must come from [`sf_model_load`] and not be used afterwards.
void sf_model_free(struct sf_model *model);

// Number of 30-s epochs staged from `n_samples` samples at 1 Hz; a
// trailing partial epoch is ignored.
size_t sf_epoch_count(size_t n_samples);

// Stages one night of 1 Hz heart rate.
//
// `hr` and `quality` hold `n_samples` values; quality 0 marks a good
// sample and anything else a defective one, which is repaired by
// interpolation before standardization with the checkpoint's statistics.
// For each epoch `e`, `p_wake[e]` receives the wake probability and
// `stages[e]` 1 for wake or 0 for sleep. Both buffers must hold
// `capacity` entries; either may be null if not wanted. The epoch count
// is written to `*n_epochs` when it is non-null, also on
// [`SfStatus::BufferTooSmall`].
//
// # Safety
// `model` must be a live handle; `hr` and `quality` must point to
// `n_samples` readable values; non-null output buffers must be writable
// for `capacity` entries.
enum sf_status sf_predict(const struct sf_model *model,
                          const double *hr,
                          const uint8_t *quality,
                          size_t n_samples,
                          double *p_wake,
                          uint8_t *stages,
                          size_t capacity,
                          size_t *n_epochs);

// Training epoch and seed recorded in the checkpoint.
//
// # Safety
// `model` must be a live handle; non-null outputs must be writable.
enum sf_status sf_model_info(const struct sf_model *model, size_t *epoch, uint64_t *seed);

// Message of the last failed call on this thread, or an empty string.
// Valid until the next call into the library from the same thread.
const char *sf_last_error(void);

// Library version as a static string.
const char *sf_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SOMNOFLOW_H */
