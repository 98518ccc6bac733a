#ifndef LONGTAIL_H
#define LONGTAIL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Stratum tag as stored in tag arrays.
 */
#define LT_TAG_TYPICAL 0

#define LT_TAG_ATYPICAL 1

#define LT_TAG_NOISY 2

typedef enum LtStatus {
  LT_STATUS_OK = 0,
  LT_STATUS_NULL_POINTER = 1,
  LT_STATUS_INVALID_ARGUMENT = 2,
  LT_STATUS_BUFFER_TOO_SMALL = 3,
  LT_STATUS_DIMENSION = 4,
  LT_STATUS_INDEX = 5,
  LT_STATUS_CONTRACT = 6,
  LT_STATUS_CONFIG = 7,
  LT_STATUS_FORMAT = 8,
  LT_STATUS_DIVERGENCE = 9,
  LT_STATUS_IO = 10,
  LT_STATUS_PANIC = 11,
} LtStatus;

/**
 * Augmentation variant.
 */
typedef enum LtRegime {
  LT_REGIME_NONE = 0,
  LT_REGIME_STANDARD = 1,
  LT_REGIME_TARGETED = 2,
} LtRegime;

/**
 * A validated experiment config.
 */
typedef struct LtExperiment LtExperiment;

/**
 * A trace CSV read into memory.
 */
typedef struct LtTrace LtTrace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread; empty after a
 * success. Valid until the next `lt_` call on the same thread.
 */
const char *lt_last_error_message(void);

/**
 * Library version, a static NUL-terminated string.
 */
const char *lt_version(void);

/**
 * Step-decayed learning rate for a 1-based `epoch`.
 *
 * # Safety
 * `decay_epochs` must point to `n_decay` values (or be NULL when zero);
 * `out` must be writable.
 */
enum LtStatus lt_learning_rate(double base_lr,
                               double decay_factor,
                               const size_t *decay_epochs,
                               size_t n_decay,
                               size_t total_epochs,
                               size_t epoch,
                               double *out);

/**
 * Ids to augment in `epoch` under a targeted policy. `msp` holds the
 * previous epoch's MSP per id and may be NULL during warmup. Writes the
 * sorted ids to `out_ids` and their count to `out_len`.
 *
 * # Safety
 * `msp` must hold `n` values when non-NULL; `out_ids` must hold `out_cap`.
 */
enum LtStatus lt_select_targets(size_t warmup_epochs,
                                double target_fraction,
                                size_t epoch,
                                const double *msp,
                                size_t n,
                                size_t *out_ids,
                                size_t out_cap,
                                size_t *out_len);

/**
 * Exact AUROC of atypical over noisy ranks. `tags` uses the `LT_TAG_*` codes.
 *
 * # Safety
 * `ranks` and `tags` must each hold `n` values; `out` must be writable.
 */
enum LtStatus lt_auroc(const size_t *ranks, const uint8_t *tags, size_t n, double *out);

/**
 * Parses and validates a TOML config from a string. `output_dir` may be
 * NULL to keep the config's own.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
enum LtStatus lt_experiment_from_toml(const char *toml,
                                      const char *output_dir,
                                      struct LtExperiment **out);

/**
 * Loads and validates a config file.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum LtStatus lt_experiment_load(const char *path, struct LtExperiment **out);

/**
 * Releases an experiment. NULL is ignored.
 *
 * # Safety
 * `exp` must come from `lt_experiment_*` and not be used afterwards.
 */
void lt_experiment_free(struct LtExperiment *exp);

/**
 * Replaces every seed in the experiment.
 *
 * # Safety
 * `exp` must be a live handle.
 */
enum LtStatus lt_experiment_set_seed(struct LtExperiment *exp, uint64_t seed);

/**
 * Writes the 64-hex-digit config hash plus a NUL into `buf` (capacity >= 65).
 *
 * # Safety
 * `exp` must be a live handle; `buf` must hold `cap` bytes.
 */
enum LtStatus lt_experiment_config_hash(const struct LtExperiment *exp, char *buf, size_t cap);

/**
 * Builds and writes the stratified dataset. `counts` receives the number
 * of typical, atypical and noisy examples, in that order.
 *
 * # Safety
 * `exp` must be a live handle; `counts` must hold 3 values.
 */
enum LtStatus lt_experiment_build_dataset(const struct LtExperiment *exp, size_t *counts);

/**
 * Trains one variant on the built dataset, writing its trace and model.
 * On divergence the partial trace is kept and `LT_STATUS_DIVERGENCE` returned.
 *
 * # Safety
 * `exp` must be a live handle; `test_accuracy` must be writable.
 */
enum LtStatus lt_experiment_train(const struct LtExperiment *exp,
                                  enum LtRegime variant,
                                  double *test_accuracy);

/**
 * Opens the trace written for `variant` under the experiment's output directory.
 *
 * # Safety
 * `exp` must be a live handle; `out` must be writable.
 */
enum LtStatus lt_experiment_open_trace(const struct LtExperiment *exp,
                                       enum LtRegime variant,
                                       struct LtTrace **out);

/**
 * Reads a trace CSV.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum LtStatus lt_trace_open(const char *path, struct LtTrace **out);

/**
 * Releases a trace. NULL is ignored.
 *
 * # Safety
 * `trace` must come from `lt_trace_open` or `lt_experiment_open_trace`.
 */
void lt_trace_free(struct LtTrace *trace);

/**
 * Number of recorded epochs and of examples per epoch.
 *
 * # Safety
 * `trace` must be a live handle; outputs must be writable.
 */
enum LtStatus lt_trace_dims(const struct LtTrace *trace, size_t *epochs, size_t *examples);

/**
 * The 1-based epoch number stored in row `row`.
 *
 * # Safety
 * `trace` must be a live handle; `epoch` must be writable.
 */
enum LtStatus lt_trace_epoch(const struct LtTrace *trace, size_t row, size_t *epoch);

/**
 * MSP of every example in row `row`, indexed by example id.
 *
 * # Safety
 * `trace` must be a live handle; `out` must hold `cap` values.
 */
enum LtStatus lt_trace_msp_row(const struct LtTrace *trace, size_t row, double *out, size_t cap);

/**
 * Rank of every example in row `row` (0 = lowest MSP).
 *
 * # Safety
 * `trace` must be a live handle; `out` must hold `cap` values.
 */
enum LtStatus lt_trace_rank_row(const struct LtTrace *trace, size_t row, size_t *out, size_t cap);

/**
 * `LT_TAG_*` code of every example.
 *
 * # Safety
 * `trace` must be a live handle; `out` must hold `cap` values.
 */
enum LtStatus lt_trace_tags(const struct LtTrace *trace, uint8_t *out, size_t cap);

/**
 * AUROC of atypical over noisy ranks in row `row`.
 *
 * # Safety
 * `trace` must be a live handle; `out` must be writable.
 */
enum LtStatus lt_trace_auroc(const struct LtTrace *trace, size_t row, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LONGTAIL_H */
