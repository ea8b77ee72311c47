#ifndef AMT_H
#define AMT_H

/* Generated by cbindgen from the amt-ffi crate. Edit the Rust source, not this file. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. `AmtOk` is zero; every other value leaves
 * an explanation in `amt_last_error_message`.
 */
typedef enum AmtStatus {
  AmtOk = 0,
  /**
   * A required pointer argument was NULL.
   */
  AmtNullArgument = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  AmtInvalidUtf8 = 2,
  /**
   * The operating system reported an I/O failure.
   */
  AmtIoError = 3,
  /**
   * A file or argument was readable but malformed or out of range.
   */
  AmtBadData = 4,
  /**
   * Two objects that must agree in shape did not.
   */
  AmtShapeMismatch = 5,
  /**
   * A defect inside the library; please report the error message.
   */
  AmtInternalError = 6,
} AmtStatus;

/**
 * A frame-by-pitch activation grid. Rows are analysis frames in time
 * order, columns are semitones from MIDI 36 upward.
 */
typedef struct AmtLabels AmtLabels;

/**
 * A loaded model checkpoint. Create with `amt_model_load`, release with
 * `amt_model_free`.
 */
typedef struct AmtModel AmtModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string. Never NULL; do not
 * free it.
 */
const char *amt_version(void);

/**
 * Explanation of the most recent failure on the calling thread, or an
 * empty string before the first failure. The pointer stays valid until the
 * next failing call on the same thread; do not free it.
 */
const char *amt_last_error_message(void);

/**
 * Loads a model checkpoint and writes a new handle to `out`. On failure
 * `out` is left untouched.
 *
 * # Safety
 * `path` must be NULL or a NUL-terminated string; `out` must point to
 * writable storage for one pointer. On success the caller owns the handle
 * and must release it with `amt_model_free`.
 */
enum AmtStatus amt_model_load(const char *path, struct AmtModel **out);

/**
 * Releases a handle from `amt_model_load`. NULL is a no-op.
 *
 * # Safety
 * `model` must be NULL or a handle this library returned that has not been
 * freed already; it must not be used afterwards.
 */
void amt_model_free(struct AmtModel *model);

/**
 * Transcribes a mono 16-bit PCM WAV file and writes a fresh labels handle
 * to `out`. Analysis uses the stock frame length and the stock constant-Q
 * layout sized to the model's input, at the file's own sample rate. A cell
 * is active when its predicted probability strictly exceeds `threshold`;
 * 0.5 is the usual operating point.
 *
 * # Safety
 * `model` must be a live handle from `amt_model_load`, `wav_path` NULL or
 * a NUL-terminated string, and `out` writable storage for one pointer. On
 * success the caller owns the labels handle and must release it with
 * `amt_labels_free`.
 */
enum AmtStatus amt_transcribe_wav(const struct AmtModel *model,
                                  const char *wav_path,
                                  double threshold,
                                  struct AmtLabels **out);

/**
 * Number of frames (rows) in the grid; 0 when `labels` is NULL.
 *
 * # Safety
 * `labels` must be NULL or a live handle this library returned.
 */
uint32_t amt_labels_frames(const struct AmtLabels *labels);

/**
 * Number of pitch bins (columns) in the grid; 0 when `labels` is NULL.
 *
 * # Safety
 * `labels` must be NULL or a live handle this library returned.
 */
uint32_t amt_labels_bins(const struct AmtLabels *labels);

/**
 * Reads one cell: 1 when active, 0 when inactive, -1 when `labels` is NULL
 * or the coordinates fall outside the grid.
 *
 * # Safety
 * `labels` must be NULL or a live handle this library returned.
 */
int32_t amt_labels_get(const struct AmtLabels *labels, uint32_t frame, uint32_t bin);

/**
 * Writes the grid to `path` in the binary label-file format.
 *
 * # Safety
 * `labels` must be a live handle this library returned; `path` must be
 * NULL or a NUL-terminated string.
 */
enum AmtStatus amt_labels_save(const struct AmtLabels *labels, const char *path);

/**
 * Reads a binary label file and writes a fresh handle to `out`.
 *
 * # Safety
 * `path` must be NULL or a NUL-terminated string; `out` must point to
 * writable storage for one pointer. On success the caller owns the handle
 * and must release it with `amt_labels_free`.
 */
enum AmtStatus amt_labels_load(const char *path, struct AmtLabels **out);

/**
 * Releases a handle from `amt_transcribe_wav` or `amt_labels_load`. NULL
 * is a no-op.
 *
 * # Safety
 * `labels` must be NULL or a handle this library returned that has not
 * been freed already; it must not be used afterwards.
 */
void amt_labels_free(struct AmtLabels *labels);

/**
 * Fraction of frames whose full activation row matches exactly between the
 * two grids, written to `out`. The grids must share both dimensions.
 *
 * # Safety
 * `pred` and `truth` must be live handles this library returned; `out`
 * must point to writable storage for one double.
 */
enum AmtStatus amt_subset_accuracy(const struct AmtLabels *pred,
                                   const struct AmtLabels *truth,
                                   double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AMT_H */
