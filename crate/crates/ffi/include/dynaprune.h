#ifndef DYNAPRUNE_H
#define DYNAPRUNE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define DP_DELTA_KL 0

#define DP_DELTA_CE 1

#define DP_PAYLOAD_FULL_PROBS 0

#define DP_PAYLOAD_DELTA_MAGNITUDES 1

#define DP_RECORDING_TRAIN_TIME 0

#define DP_RECORDING_EVAL_TIME 1

#define DP_FORMAT_BINARY 0

#define DP_FORMAT_CSV 1

#define DP_METHOD_TDDS 0

#define DP_METHOD_RANDOM 1

#define DP_METHOD_ENTROPY 2

#define DP_METHOD_FORGETTING 3

#define DP_METHOD_EL2N 4

#define DP_METHOD_AUM 5

#define DP_METHOD_DYNUNC 6

/**
 * Result of every fallible call.
 */
typedef enum {
  DP_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  DP_STATUS_NULL_POINTER = 1,
  /**
   * A path was not valid UTF-8.
   */
  DP_STATUS_INVALID_UTF8 = 2,
  DP_STATUS_IO = 3,
  /**
   * Malformed file: bad magic, checksum, truncation, or header.
   */
  DP_STATUS_FORMAT = 4,
  /**
   * Well-formed input with invalid values (row sums, non-finite numbers).
   */
  DP_STATUS_DATA = 5,
  DP_STATUS_PARAM = 6,
  DP_STATUS_RANGE = 7,
  DP_STATUS_SHAPE = 8,
  /**
   * A caller buffer is too small, or an engine size limit was exceeded.
   */
  DP_STATUS_CAPACITY = 9,
  DP_STATUS_TRAINING = 10,
  DP_STATUS_PANIC = 11,
} DpStatus;

typedef struct DpCoreset DpCoreset;

typedef struct DpScoreTable DpScoreTable;

/**
 * An open, checksum-verified trajectory log.
 */
typedef struct DpTrajectory DpTrajectory;

/**
 * A trajectory log being written one epoch at a time.
 */
typedef struct DpTrajectoryWriter DpTrajectoryWriter;

/**
 * Header fields of an open trajectory log.
 */
typedef struct {
  uint64_t n_samples;
  uint32_t n_classes;
  uint32_t n_epochs;
  /**
   * Values per block returned by `dp_trajectory_read_epoch`.
   */
  uint64_t block_len;
  /**
   * Blocks stored: `n_epochs` for full probabilities, `n_epochs - 1` for deltas.
   */
  uint32_t block_count;
  uint32_t payload_kind;
  uint32_t recording_mode;
} DpTrajectoryInfo;

typedef struct {
  /**
   * Leading epochs to score; 0 means the whole log.
   */
  uint32_t epochs;
  uint32_t window;
  double beta;
  uint32_t delta_kind;
  bool signed_deltas;
  /**
   * Probability floor before logarithms; 0 selects the default.
   */
  double epsilon;
} DpTddsParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dp_version(void);

/**
 * Message describing the last failed call on this thread, or NULL if the last
 * call succeeded. Valid until the next call into this library.
 */
const char *dp_last_error_message(void);

/**
 * Opens a trajectory log and verifies its checksum.
 */
DpStatus dp_trajectory_open(const char *path, DpTrajectory **out);

DpStatus dp_trajectory_info(const DpTrajectory *traj, DpTrajectoryInfo *out);

/**
 * Copies the `n_samples` labels into `out`.
 */
DpStatus dp_trajectory_labels(const DpTrajectory *traj, uint32_t *out, size_t capacity);

/**
 * Copies block `epoch` (row-major `n_samples × n_classes` probabilities, or
 * `n_samples` delta magnitudes) into `out`.
 */
DpStatus dp_trajectory_read_epoch(DpTrajectory *traj, uint32_t epoch, float *out, size_t capacity);

void dp_trajectory_free(DpTrajectory *traj);

/**
 * Creates a full-probability trajectory log at `path` expecting exactly
 * `n_epochs` epochs. `labels` holds `n_samples` class indices.
 */
DpStatus dp_trajectory_writer_create(const char *path,
                                     uint64_t n_samples,
                                     uint32_t n_classes,
                                     uint32_t n_epochs,
                                     uint32_t recording_mode,
                                     const uint32_t *labels,
                                     DpTrajectoryWriter **out);

/**
 * Appends one epoch of `n_samples × n_classes` row-major probabilities.
 */
DpStatus dp_trajectory_writer_push_epoch(DpTrajectoryWriter *writer,
                                         const float *probs,
                                         size_t len);

/**
 * Like `dp_trajectory_writer_push_epoch`, narrowing each value to the
 * nearest `float`.
 */
DpStatus dp_trajectory_writer_push_epoch_f64(DpTrajectoryWriter *writer,
                                             const double *probs,
                                             size_t len);

/**
 * Writes the checksum and closes the file. Always releases the handle.
 */
DpStatus dp_trajectory_writer_finish(DpTrajectoryWriter *writer);

/**
 * Releases a writer without finishing it; the partial file is left invalid.
 */
void dp_trajectory_writer_free(DpTrajectoryWriter *writer);

/**
 * KL divergence of `next` from `prev`, each of length `n_classes`.
 */
DpStatus dp_kl_delta(const double *next,
                     const double *prev,
                     size_t n_classes,
                     double epsilon,
                     double *out);

/**
 * Log-ratio of the target-class probabilities, `ln next[target] - ln prev[target]`.
 */
DpStatus dp_ce_delta(const double *next,
                     const double *prev,
                     size_t n_classes,
                     uint32_t target,
                     double epsilon,
                     double *out);

/**
 * Fills `out` with the default scoring parameters (whole log, window 10,
 * beta 0.9, KL deltas).
 */
DpStatus dp_tdds_params_default(DpTddsParams *out);

DpStatus dp_tdds_scores(DpTrajectory *traj, const DpTddsParams *params, DpScoreTable **out);

/**
 * Scores a full-probability log with one of the baseline methods.
 */
DpStatus dp_baseline_scores(DpTrajectory *traj,
                            uint32_t method,
                            uint32_t el2n_epochs,
                            uint32_t dynunc_window,
                            uint64_t seed,
                            DpScoreTable **out);

/**
 * Wraps externally computed scores so they can be saved or selected from.
 */
DpStatus dp_score_table_from_values(uint32_t method,
                                    const double *scores,
                                    size_t n,
                                    DpScoreTable **out);

/**
 * Loads a score table, binary or CSV.
 */
DpStatus dp_score_table_load(const char *path, DpScoreTable **out);

DpStatus dp_score_table_save(const DpScoreTable *table, const char *path, uint32_t format);

/**
 * Number of scores, or 0 for NULL.
 */
size_t dp_score_table_len(const DpScoreTable *table);

/**
 * Method code of the table, or `UINT32_MAX` for NULL.
 */
uint32_t dp_score_table_method(const DpScoreTable *table);

DpStatus dp_score_table_copy(const DpScoreTable *table, double *out, size_t capacity);

void dp_score_table_free(DpScoreTable *table);

/**
 * Keeps the `max(1, round((1 - rate) * n))` highest scores; ties go to the
 * lower index.
 */
DpStatus dp_select_top_m(const DpScoreTable *table, double rate, DpCoreset **out);

DpStatus dp_coreset_load(const char *path, DpCoreset **out);

DpStatus dp_coreset_save(const DpCoreset *coreset, const char *path, uint32_t format);

/**
 * Number of kept samples, or 0 for NULL.
 */
size_t dp_coreset_len(const DpCoreset *coreset);

/**
 * Size of the dataset the coreset was selected from, or 0 for NULL.
 */
uint64_t dp_coreset_total(const DpCoreset *coreset);

/**
 * Copies kept indices (ascending) and their weights. Either buffer may be
 * NULL to skip it.
 */
DpStatus dp_coreset_copy(const DpCoreset *coreset,
                         uint64_t *indices,
                         double *weights,
                         size_t capacity);

void dp_coreset_free(DpCoreset *coreset);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DYNAPRUNE_H */
