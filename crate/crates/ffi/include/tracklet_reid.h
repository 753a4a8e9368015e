#ifndef TRACKLET_REID_H
#define TRACKLET_REID_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum ReidStatus {
  REID_STATUS_OK = 0,
  REID_STATUS_NULL_POINTER = 1,
  REID_STATUS_INVALID_ARGUMENT = 2,
  REID_STATUS_IO = 3,
  REID_STATUS_FORMAT = 4,
  REID_STATUS_CONTRACT = 5,
  REID_STATUS_INSUFFICIENT_DATA = 6,
  REID_STATUS_PANIC = 7,
} ReidStatus;

// Pair scoring technique.
typedef enum ReidScorer {
  REID_SCORER_LATE_MIN = 0,
  REID_SCORER_LATE_MAX = 1,
  REID_SCORER_LATE_MEAN = 2,
  REID_SCORER_MV_AVERAGE = 3,
  REID_SCORER_MV_JOINT = 4,
} ReidScorer;

// Opaque trained or initialized model.
typedef struct ReidModelHandle ReidModelHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static NUL-terminated string.
const char *reid_version(void);

// Message of the last failed call on this thread, or NULL. The pointer
// stays valid until the next call into the library on this thread.
const char *reid_last_error(void);

// Freshly initialized model with the default encoder shape for
// `feature_dim` inputs.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum ReidStatus reid_model_init(size_t feature_dim, uint64_t seed, struct ReidModelHandle **out);

// Loads a TRW1 weights file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum ReidStatus reid_model_load(const char *path, struct ReidModelHandle **out);

// Writes the model as a TRW1 weights file.
//
// # Safety
// `model` must come from this library and `path` be NUL-terminated.
enum ReidStatus reid_model_save(const struct ReidModelHandle *model, const char *path);

// Releases a model; NULL is ignored.
//
// # Safety
// `model` must come from this library and not be used afterwards.
void reid_model_free(struct ReidModelHandle *model);

// Input feature dimension, or 0 for NULL.
//
// # Safety
// `model` must be NULL or come from this library.
size_t reid_model_feature_dim(const struct ReidModelHandle *model);

// Embedding dimension, or 0 for NULL.
//
// # Safety
// `model` must be NULL or come from this library.
size_t reid_model_embed_dim(const struct ReidModelHandle *model);

// Unit-norm tracklet embedding from the joint or averaging encoder;
// `out_len` must equal the embedding dimension.
//
// # Safety
// `frames` must hold `n_frames × feature_dim` doubles and `out` `out_len`.
enum ReidStatus reid_embed_tracklet(const struct ReidModelHandle *model,
                                    const double *frames,
                                    size_t n_frames,
                                    size_t feature_dim,
                                    enum ReidScorer scorer,
                                    double *out,
                                    size_t out_len);

// Similarity of two tracklets under `scorer`.
//
// # Safety
// `a` and `b` must hold `n_a × feature_dim` and `n_b × feature_dim`
// doubles; `out_score` must be writable.
enum ReidStatus reid_score_pair(const struct ReidModelHandle *model,
                                const double *a,
                                size_t n_a,
                                const double *b,
                                size_t n_b,
                                size_t feature_dim,
                                enum ReidScorer scorer,
                                double *out_score);

// Contrastive loss of `rows` unit-norm embeddings where rows `k` and
// `k + rows/2` are positives; the gradient is written to `out_grad` when
// it is not NULL.
//
// # Safety
// `embeddings` must hold `rows × cols` doubles, `out_grad` (if not NULL)
// the same, and `out_loss` must be writable.
enum ReidStatus reid_nt_xent_loss(const double *embeddings,
                                  size_t rows,
                                  size_t cols,
                                  double temperature,
                                  double *out_loss,
                                  double *out_grad);

// Area under the ROC curve; `labels` are 0 or nonzero.
//
// # Safety
// `scores` and `labels` must each hold `n` elements.
enum ReidStatus reid_roc_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

// Smallest threshold whose false positive rate on the labelled scores is
// at most `target_fpr`.
//
// # Safety
// `scores` and `labels` must each hold `n` elements.
enum ReidStatus reid_calibrate_threshold(const double *scores,
                                         const uint8_t *labels,
                                         size_t n,
                                         double target_fpr,
                                         double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRACKLET_REID_H */
