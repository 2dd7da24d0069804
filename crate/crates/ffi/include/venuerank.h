#ifndef VENUERANK_H
#define VENUERANK_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome codes for [`vr_scheduler_record`].
 */
#define VR_OUTCOME_FIRST 0

#define VR_OUTCOME_SECOND 1

#define VR_OUTCOME_INDIFFERENT 2

typedef enum VrStatus {
  VR_STATUS_OK = 0,
  VR_STATUS_NULL_ARGUMENT = 1,
  VR_STATUS_INVALID_UTF8 = 2,
  VR_STATUS_INVALID_ARGUMENT = 3,
  VR_STATUS_LOAD_FAILED = 4,
  VR_STATUS_RANK_FAILED = 5,
  VR_STATUS_OUT_OF_RANGE = 6,
  VR_STATUS_EXHAUSTED = 7,
  VR_STATUS_UNEXPECTED_PAIR = 8,
  VR_STATUS_NOTHING_TO_UNDO = 9,
  VR_STATUS_PANIC = 10,
} VrStatus;

typedef struct VrDataset VrDataset;

typedef struct VrScheduler VrScheduler;

typedef struct VrScores VrScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next call into this library from the same thread.
 */
const char *vr_last_error(void);

/**
 * Library version, a static string.
 */
const char *vr_version(void);

/**
 * Loads the dataset files in directory `dir`.
 *
 * # Safety
 * `dir` must be a valid NUL-terminated string and `out` a writable pointer.
 */
enum VrStatus vr_dataset_load(const char *dir, struct VrDataset **out);

/**
 * # Safety
 * `ds` must be null or a handle from [`vr_dataset_load`] not yet freed.
 */
void vr_dataset_free(struct VrDataset *ds);

/**
 * Number of comparisons in the dataset.
 *
 * # Safety
 * `ds` must be a live dataset handle.
 */
size_t vr_dataset_comparison_count(const struct VrDataset *ds);

/**
 * Consensus fit over every comparison of `field`.
 *
 * # Safety
 * `ds` must be a live dataset handle, `field` a NUL-terminated string and
 * `out` writable.
 */
enum VrStatus vr_fit_field(const struct VrDataset *ds,
                           const char *field,
                           double alpha,
                           struct VrScores **out);

/**
 * One respondent's own fit.
 *
 * # Safety
 * As [`vr_fit_field`], with `respondent` a NUL-terminated string.
 */
enum VrStatus vr_fit_individual(const struct VrDataset *ds,
                                const char *respondent,
                                double alpha,
                                struct VrScores **out);

/**
 * Fits `n_items` items named `"0"`..`"n_items-1"` from `len` strict outcomes
 * where `winners[k]` beat `losers[k]`.
 *
 * # Safety
 * `winners` and `losers` must each point to `len` readable values (or be
 * null when `len` is 0), and `out` must be writable.
 */
enum VrStatus vr_fit_pairs(uint32_t n_items,
                           const uint32_t *winners,
                           const uint32_t *losers,
                           size_t len,
                           double alpha,
                           struct VrScores **out);

/**
 * # Safety
 * `scores` must be a live scores handle.
 */
size_t vr_scores_len(const struct VrScores *scores);

/**
 * Raw and min-max normalized score of item `index` (items are ordered by id).
 *
 * # Safety
 * `scores` must be a live scores handle; `raw` and `normalized` may be null.
 */
enum VrStatus vr_scores_get(const struct VrScores *scores,
                            size_t index,
                            double *raw,
                            double *normalized);

/**
 * Id of item `index`, owned by the handle; null when out of range.
 *
 * # Safety
 * `scores` must be a live scores handle.
 */
const char *vr_scores_id(const struct VrScores *scores, size_t index);

/**
 * Fitted inverse temperature, or a negative value when it is not identifiable.
 *
 * # Safety
 * `scores` must be a live scores handle.
 */
double vr_scores_beta(const struct VrScores *scores);

/**
 * # Safety
 * `scores` must be null or a live scores handle.
 */
void vr_scores_free(struct VrScores *scores);

/**
 * Scheduler over items `"0"`..`"n_items-1"` with the default completion rule.
 *
 * # Safety
 * `out` must be writable.
 */
enum VrStatus vr_scheduler_new(uint32_t n_items, uint64_t seed, struct VrScheduler **out);

/**
 * Issues the outstanding pair. With `continue_past_completion` set, keeps
 * serving pairs after the stage is complete until every pair is used.
 *
 * # Safety
 * `s` must be a live scheduler handle; `first`, `second` and `stage_complete`
 * must be writable.
 */
enum VrStatus vr_scheduler_next(struct VrScheduler *s,
                                bool continue_past_completion,
                                uint32_t *first,
                                uint32_t *second,
                                bool *stage_complete);

/**
 * Records the answer to the outstanding pair, given in issued order.
 *
 * # Safety
 * `s` must be a live scheduler handle.
 */
enum VrStatus vr_scheduler_record(struct VrScheduler *s,
                                  uint32_t first,
                                  uint32_t second,
                                  int32_t outcome);

/**
 * Reverts the last recorded answer.
 *
 * # Safety
 * `s` must be a live scheduler handle.
 */
enum VrStatus vr_scheduler_undo(struct VrScheduler *s);

/**
 * Number of answered pairs.
 *
 * # Safety
 * `s` must be a live scheduler handle.
 */
size_t vr_scheduler_answered(const struct VrScheduler *s);

/**
 * # Safety
 * `s` must be null or a live scheduler handle.
 */
void vr_scheduler_free(struct VrScheduler *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VENUERANK_H */
