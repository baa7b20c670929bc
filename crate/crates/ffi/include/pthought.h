#ifndef PTHOUGHT_H
#define PTHOUGHT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call.
 */
typedef enum PtStatus {
  PT_STATUS_OK = 0,
  PT_STATUS_NULL_ARGUMENT = 1,
  PT_STATUS_INVALID_UTF8 = 2,
  PT_STATUS_IO = 3,
  PT_STATUS_PARSE = 4,
  PT_STATUS_INVALID_INPUT = 5,
  PT_STATUS_CONFIG = 6,
  PT_STATUS_NUMERIC = 7,
  PT_STATUS_BUFFER_TOO_SMALL = 8,
  PT_STATUS_PANIC = 9,
} PtStatus;

/**
 * Sentence vectors grouped by paraphrase group.
 */
typedef struct PtEmbeddingSet PtEmbeddingSet;

/**
 * A loaded checkpoint ready to encode text.
 */
typedef struct PtModel PtModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *pt_last_error_message(void);

/**
 * Loads a checkpoint. With `allow_unk` false, encoding text that contains
 * words outside the vocabulary fails instead of using `<unk>`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum PtStatus pt_model_load(const char *path, bool allow_unk, struct PtModel **out);

/**
 * Releases a model; NULL is ignored.
 *
 * # Safety
 * `model` must come from [`pt_model_load`] and not be used afterwards.
 */
void pt_model_free(struct PtModel *model);

/**
 * Width of the sentence vectors the model produces; 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t pt_model_width(const struct PtModel *model);

/**
 * Encodes one sentence into `out[0..len]`; `len` must equal the model width.
 *
 * # Safety
 * `model` must be a live handle, `text` a NUL-terminated string, and `out`
 * writable for `len` doubles.
 */
enum PtStatus pt_model_embed(const struct PtModel *model,
                             const char *text,
                             double *out,
                             size_t len);

/**
 * Loads a sentence-vector TSV; groups with a single sentence are dropped.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum PtStatus pt_embedding_set_load(const char *path, struct PtEmbeddingSet **out);

/**
 * Number of groups in the set; 0 for NULL.
 *
 * # Safety
 * `set` must be NULL or a live handle.
 */
size_t pt_embedding_set_group_count(const struct PtEmbeddingSet *set);

/**
 * Mean over groups of the mean pairwise cosine within each group.
 *
 * # Safety
 * `set` must be a live handle and `out` writable.
 */
enum PtStatus pt_embedding_set_p_coherence_total(const struct PtEmbeddingSet *set, double *out);

/**
 * Releases a set; NULL is ignored.
 *
 * # Safety
 * `set` must come from [`pt_embedding_set_load`] and not be used afterwards.
 */
void pt_embedding_set_free(struct PtEmbeddingSet *set);

/**
 * Cosine similarity of two vectors of length `len`.
 *
 * # Safety
 * `u` and `v` must be readable for `len` doubles and `out` writable.
 */
enum PtStatus pt_pair_score(const double *u, const double *v, size_t len, double *out);

/**
 * Sample Pearson correlation of `x` and `y`.
 *
 * # Safety
 * `x` and `y` must be readable for `len` doubles and `out` writable.
 */
enum PtStatus pt_pearson(const double *x, const double *y, size_t len, double *out);

/**
 * Five-bin target distribution for a similarity score in `[0, 5]`.
 *
 * # Safety
 * `out` must be writable for 5 doubles.
 */
enum PtStatus pt_sts_target(double score, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PTHOUGHT_H */
