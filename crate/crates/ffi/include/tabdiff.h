#ifndef TABDIFF_H
#define TABDIFF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Ancestral sampling.
 */
#define TABDIFF_MODE_DDPM 0

/**
 * Deterministic sampling, optionally Anderson-accelerated.
 */
#define TABDIFF_MODE_DDIM 1

typedef enum TabdiffStatus {
  TABDIFF_STATUS_OK = 0,
  TABDIFF_STATUS_NULL_POINTER = 1,
  TABDIFF_STATUS_INVALID_ARGUMENT = 2,
  TABDIFF_STATUS_DIMENSION = 3,
  TABDIFF_STATUS_PARSE = 4,
  TABDIFF_STATUS_CHECKPOINT = 5,
  TABDIFF_STATUS_NON_FINITE = 6,
  TABDIFF_STATUS_IO = 7,
  TABDIFF_STATUS_BUFFER_TOO_SMALL = 8,
  TABDIFF_STATUS_PANIC = 9,
} TabdiffStatus;

/**
 * Trained guidance classifier.
 */
typedef struct TabdiffClassifier TabdiffClassifier;

/**
 * Trained denoiser with its schedule and data scaling.
 */
typedef struct TabdiffModel TabdiffModel;

typedef struct TabdiffSampleOptions {
  /**
   * `TABDIFF_MODE_DDPM` or `TABDIFF_MODE_DDIM`.
   */
  uint32_t mode;
  /**
   * Reverse steps; 0 means the full schedule.
   */
  size_t steps;
  /**
   * Anderson table size for DDIM, 0 disables.
   */
  size_t k;
  uint64_t seed;
  /**
   * Zero ancestral noise in DDPM mode.
   */
  bool sigma_zero;
  /**
   * Threshold outputs of binary models to {0, 1}.
   */
  bool binarize;
  double threshold;
} TabdiffSampleOptions;

typedef struct TabdiffMetrics {
  /**
   * NaN when either probability vector is constant.
   */
  double rho;
  double sae;
  double rmse;
} TabdiffMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Valid until
 * the next call into this library on the same thread.
 */
const char *tabdiff_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tabdiff_version(void);

/**
 * DDIM with table size 3 over the full schedule, seed 0, threshold 0.5.
 */
struct TabdiffSampleOptions tabdiff_sample_options_default(void);

/**
 * Load a denoiser checkpoint. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TabdiffStatus tabdiff_model_load(const char *path, struct TabdiffModel **out);

/**
 * # Safety
 * `model` must be NULL or a handle from [`tabdiff_model_load`] not yet freed.
 */
void tabdiff_model_free(struct TabdiffModel *model);

/**
 * Features per record, or 0 for a NULL handle.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t tabdiff_model_feature_dim(const struct TabdiffModel *model);

/**
 * Schedule length, or 0 for a NULL handle.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t tabdiff_model_steps(const struct TabdiffModel *model);

/**
 * Load a classifier checkpoint. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TabdiffStatus tabdiff_classifier_load(const char *path, struct TabdiffClassifier **out);

/**
 * # Safety
 * `clf` must be NULL or a handle from [`tabdiff_classifier_load`] not yet freed.
 */
void tabdiff_classifier_free(struct TabdiffClassifier *clf);

/**
 * Generate `n` records into `out` (row-major, `n * feature_dim` values).
 * `options` may be NULL for the defaults.
 *
 * # Safety
 * `model` must be a live handle; `out` must point to `out_len` writable doubles.
 */
enum TabdiffStatus tabdiff_sample(const struct TabdiffModel *model,
                                  const struct TabdiffSampleOptions *options,
                                  size_t n,
                                  double *out,
                                  size_t out_len);

/**
 * Generate `n` records conditioned on `label` with guidance strength `scale`.
 *
 * # Safety
 * As [`tabdiff_sample`]; `clf` must be a live classifier handle.
 */
enum TabdiffStatus tabdiff_sample_guided(const struct TabdiffModel *model,
                                         const struct TabdiffClassifier *clf,
                                         const struct TabdiffSampleOptions *options,
                                         size_t label,
                                         double scale,
                                         size_t n,
                                         double *out,
                                         size_t out_len);

/**
 * Fidelity of binary records: both matrices are row-major with `cols`
 * columns and are thresholded at `threshold` first.
 *
 * # Safety
 * `real` and `synth` must hold `real_rows * cols` and `synth_rows * cols`
 * doubles; `out` must be writable.
 */
enum TabdiffStatus tabdiff_eval_binary(const double *real,
                                       size_t real_rows,
                                       const double *synth,
                                       size_t synth_rows,
                                       size_t cols,
                                       double threshold,
                                       struct TabdiffMetrics *out);

/**
 * Area under the ROC curve of `scores` against 0/1 `labels`.
 *
 * # Safety
 * `scores` and `labels` must hold `n` elements; `out` must be writable.
 */
enum TabdiffStatus tabdiff_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TABDIFF_H */
