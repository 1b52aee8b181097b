/* C interface to the fedsim federated learning simulator. */

#ifndef FEDSIM_H
#define FEDSIM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum FedsimStatus {
  FEDSIM_STATUS_OK = 0,
  FEDSIM_STATUS_RUNTIME = 1,
  FEDSIM_STATUS_CONFIG = 2,
  FEDSIM_STATUS_PARTITION = 3,
  FEDSIM_STATUS_BUDGET = 4,
  FEDSIM_STATUS_NULL_ARGUMENT = 5,
  FEDSIM_STATUS_INVALID_UTF8 = 6,
} FedsimStatus;

/**
 * A parsed and validated experiment configuration.
 */
typedef struct FedsimExperiment FedsimExperiment;

/**
 * A finished run: metrics rows, ledger CSV and summary values.
 */
typedef struct FedsimRun FedsimRun;

/**
 * One metrics row in a C-friendly layout. `tau` is -1 when the protocol
 * has no interval column.
 */
typedef struct FedsimMetricsRow {
  uint64_t round;
  int64_t tau;
  uint64_t cum_uplink_bits;
  uint64_t cum_downlink_bits;
  double cum_cost;
  double train_loss;
  double test_acc;
  double sim_time;
} FedsimMetricsRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent error on this thread. The pointer stays valid
 * until the next failing call on the same thread.
 */
const char *fedsim_last_error_message(void);

/**
 * Parse a JSON configuration string into an experiment handle.
 *
 * # Safety
 * `json` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum FedsimStatus fedsim_experiment_from_json(const char *json, struct FedsimExperiment **out);

/**
 * Load a JSON configuration file into an experiment handle.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum FedsimStatus fedsim_experiment_from_file(const char *path, struct FedsimExperiment **out);

/**
 * Override the master seed of a parsed experiment.
 *
 * # Safety
 * `experiment` must be a live handle from `fedsim_experiment_from_*`.
 */
enum FedsimStatus fedsim_experiment_set_seed(struct FedsimExperiment *experiment, uint64_t seed);

/**
 * # Safety
 * `experiment` must be a handle from `fedsim_experiment_from_*` or null.
 */
void fedsim_experiment_free(struct FedsimExperiment *experiment);

/**
 * Execute the experiment in memory and hand back a run handle.
 *
 * # Safety
 * `experiment` must be a live handle and `out` a valid pointer.
 */
enum FedsimStatus fedsim_run(const struct FedsimExperiment *experiment, struct FedsimRun **out);

/**
 * Execute the experiment and also write metrics.csv, ledger.csv,
 * summary.json (and protocol extras) under `out_dir`. `out` may be null
 * when only the files are wanted.
 *
 * # Safety
 * `experiment` must be a live handle; `out_dir` a valid NUL-terminated
 * string; `out` either null or a valid pointer.
 */
enum FedsimStatus fedsim_run_to_dir(const struct FedsimExperiment *experiment,
                                    const char *out_dir,
                                    struct FedsimRun **out);

/**
 * # Safety
 * `run` must be a handle from `fedsim_run*` or null.
 */
void fedsim_run_free(struct FedsimRun *run);

/**
 * Number of metrics rows (completed rounds).
 *
 * # Safety
 * `run` must be a live run handle.
 */
size_t fedsim_run_round_count(const struct FedsimRun *run);

/**
 * Copy one metrics row into `out`.
 *
 * # Safety
 * `run` must be a live run handle and `out` a valid pointer.
 */
enum FedsimStatus fedsim_run_metrics_row(const struct FedsimRun *run,
                                         size_t index,
                                         struct FedsimMetricsRow *out);

/**
 * Final test accuracy, or NaN for an empty run.
 *
 * # Safety
 * `run` must be a live run handle.
 */
double fedsim_run_final_accuracy(const struct FedsimRun *run);

/**
 * Mean label privacy of a multi-hop augmentation run, NaN otherwise.
 *
 * # Safety
 * `run` must be a live run handle.
 */
double fedsim_run_mean_privacy(const struct FedsimRun *run);

/**
 * Cumulative uplink bytes charged to the ledger.
 *
 * # Safety
 * `run` must be a live run handle.
 */
uint64_t fedsim_run_uplink_bits(const struct FedsimRun *run);

/**
 * Copy the metrics CSV into `buf` (NUL-terminated, truncating at `cap`).
 * Returns the full length in bytes excluding the terminator, so calling
 * with `cap == 0` sizes the buffer.
 *
 * # Safety
 * `run` must be a live run handle; `buf` must point to `cap` writable
 * bytes (or be null when `cap == 0`).
 */
size_t fedsim_run_metrics_csv(const struct FedsimRun *run, char *buf, size_t cap);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDSIM_H */
