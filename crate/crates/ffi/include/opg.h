#ifndef OPG_H
#define OPG_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Which score [`opg_model_score`] computes.
typedef enum OpgScoreKind {
  // Probability mass outside the seen classes. Higher means more likely unseen.
  OPG_SCORE_KIND_DETECTION = 0,
  // One minus the largest seen-class probability.
  OPG_SCORE_KIND_MAX_SOFTMAX = 1,
} OpgScoreKind;

// Result codes shared by every function in this library.
typedef enum OpgStatus {
  OPG_STATUS_OK = 0,
  OPG_STATUS_NULL_POINTER = 1,
  OPG_STATUS_INVALID_ARGUMENT = 2,
  OPG_STATUS_SHAPE_MISMATCH = 3,
  OPG_STATUS_IO = 4,
  OPG_STATUS_FORMAT = 5,
  OPG_STATUS_NON_FINITE = 6,
  OPG_STATUS_PANIC = 7,
} OpgStatus;

// A trained model loaded from a checkpoint.
typedef struct OpgModel OpgModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null after a success.
// The pointer stays valid until the next call on the same thread.
const char *opg_last_error_message(void);

// Library version as a static nul-terminated string.
const char *opg_version(void);

// Loads a checkpoint file. On success `*out` owns a new handle.
//
// # Safety
// `path` must be a nul-terminated UTF-8 string and `out` a writable pointer.
enum OpgStatus opg_model_load(const char *path, struct OpgModel **out);

// Releases a handle from [`opg_model_load`]. Null is ignored.
//
// # Safety
// `model` must be null or a handle not yet freed.
void opg_model_free(struct OpgModel *model);

// Number of seen classes `r` and total head width `r + r'`.
//
// # Safety
// `model` must be a live handle; outputs must be writable.
enum OpgStatus opg_model_classes(const struct OpgModel *model, size_t *r, size_t *head_width);

// Expected image height, width and channel count.
//
// # Safety
// `model` must be a live handle; outputs must be writable.
enum OpgStatus opg_model_input_shape(const struct OpgModel *model,
                                     size_t *height,
                                     size_t *width,
                                     size_t *channels);

// Softmax probabilities over the full head for `n` images.
//
// `pixels` holds `n * H * W * C` floats in `[0, 1]`, row-major NHWC.
// `probs` receives `n * head_width` values.
//
// # Safety
// Buffers must hold at least the stated number of elements.
enum OpgStatus opg_model_probs(const struct OpgModel *model,
                               const float *pixels,
                               size_t n,
                               double *probs);

// Scores `n` images. `scores` receives `n` values in `[0, 1]`.
//
// # Safety
// `pixels` holds `n * H * W * C` floats; `scores` holds `n` doubles.
enum OpgStatus opg_model_score(const struct OpgModel *model,
                               const float *pixels,
                               size_t n,
                               enum OpgScoreKind kind,
                               double *scores);

// Scores precomputed probability rows: `probs` is `n * width`, row-major,
// with the first `r` columns the seen classes.
//
// # Safety
// `probs` holds `n * width` doubles; `scores` holds `n`.
enum OpgStatus opg_score_probs(const double *probs,
                               size_t n,
                               size_t width,
                               size_t r,
                               enum OpgScoreKind kind,
                               double *scores);

// Openness of a train/test/target class configuration, in percent.
//
// # Safety
// `out` must be writable.
enum OpgStatus opg_compute_openness(uint64_t n_train,
                                    uint64_t n_test,
                                    uint64_t n_target,
                                    double *out);

// Area under the ROC curve with `unseen` as the positive class. Ties
// count one half.
//
// # Safety
// `seen` holds `n_seen` doubles, `unseen` holds `n_unseen`, `out` is writable.
enum OpgStatus opg_auroc(const double *seen,
                         size_t n_seen,
                         const double *unseen,
                         size_t n_unseen,
                         double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OPG_H */
