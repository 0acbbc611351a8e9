#ifndef FLEXCOMM_H
#define FLEXCOMM_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum FcCollective {
  FC_COLLECTIVE_AG = 0,
  FC_COLLECTIVE_ART_RING = 1,
  FC_COLLECTIVE_ART_TREE = 2,
} FcCollective;

typedef enum FcCompressor {
  FC_COMPRESSOR_EXACT = 0,
  FC_COMPRESSOR_LAYERWISE = 1,
  FC_COMPRESSOR_THRESHOLD = 2,
} FcCompressor;

typedef enum FcPair {
  FC_PAIR_RING_OVER_TREE = 0,
  FC_PAIR_RING_OVER_AG = 1,
  FC_PAIR_TREE_OVER_AG = 2,
} FcPair;

typedef enum FcStatus {
  FC_STATUS_OK = 0,
  FC_STATUS_NULL_POINTER = 1,
  FC_STATUS_INVALID_ARGUMENT = 2,
  FC_STATUS_CONFIG = 3,
  FC_STATUS_RUNTIME = 4,
  FC_STATUS_BUFFER_TOO_SMALL = 5,
  FC_STATUS_PANIC = 6,
} FcStatus;

/**
 * Opaque network schedule.
 */
typedef struct FcSchedule FcSchedule;

/**
 * Opaque finished simulation.
 */
typedef struct FcSimulation FcSimulation;

/**
 * Modeled times in seconds.
 */
typedef struct FcCostBreakdown {
  double ps;
  double ring_ar;
  double tree_ar;
  double broadcast;
  double allgather_dense;
  double ag;
  double art_ring;
  double art_tree;
} FcCostBreakdown;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *fc_last_error(void);

/**
 * # Safety
 * `s` must come from a flexcomm function returning `char **`, or be null.
 */
void fc_string_free(char *s);

/**
 * Modeled costs of every collective and the cheapest compressed one.
 *
 * # Safety
 * `out_costs` and `out_selected` must be valid for writes.
 */
enum FcStatus fc_plan(double alpha_ms,
                      double bandwidth_gbps,
                      double model_bytes,
                      uintptr_t workers,
                      double cr,
                      struct FcCostBreakdown *out_costs,
                      enum FcCollective *out_selected);

/**
 * Ratio below which the pair's first collective stops winning.
 * `*out_exists` is false when there is no crossover in (0, 1].
 *
 * # Safety
 * `out_c` and `out_exists` must be valid for writes.
 */
enum FcStatus fc_crossover_cr(double alpha_ms,
                              double bandwidth_gbps,
                              double model_bytes,
                              uintptr_t workers,
                              enum FcPair pair,
                              double *out_c,
                              bool *out_exists);

/**
 * Top-k compression of `values[0..len]`. Writes up to `capacity` kept
 * entries in ascending index order and their count to `*out_count`.
 * Returns `BufferTooSmall` (with `*out_count` set) when `capacity` is short.
 * `rounds` is only used by the threshold compressor.
 *
 * # Safety
 * `values` must hold `len` doubles; `out_indices` and `out_values` must
 * hold `capacity` elements; `out_count` must be valid for writes.
 */
enum FcStatus fc_topk(const double *values,
                      uintptr_t len,
                      double cr,
                      enum FcCompressor method,
                      uint32_t rounds,
                      uintptr_t *out_indices,
                      double *out_values,
                      uintptr_t capacity,
                      uintptr_t *out_count);

/**
 * `||topk(g)||^2 / ||g||^2` with the exact compressor.
 *
 * # Safety
 * `values` must hold `len` doubles; `out_gain` must be valid for writes.
 */
enum FcStatus fc_compression_gain(const double *values, uintptr_t len, double cr, double *out_gain);

/**
 * Parses trace text (`start_epoch,alpha_ms,bandwidth_gbps` lines).
 *
 * # Safety
 * `trace` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum FcStatus fc_schedule_parse(const char *trace, struct FcSchedule **out);

/**
 * Builds the `c1` or `c2` preset scaled to `epochs`.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum FcStatus fc_schedule_preset(const char *name, uint64_t epochs, struct FcSchedule **out);

/**
 * Number of segments, or 0 for a null handle.
 *
 * # Safety
 * `schedule` must be null or a live handle.
 */
uintptr_t fc_schedule_len(const struct FcSchedule *schedule);

/**
 * Network conditions in effect at `epoch`.
 *
 * # Safety
 * `schedule` must be a live handle; outputs must be valid for writes.
 */
enum FcStatus fc_schedule_params_at(const struct FcSchedule *schedule,
                                    uint64_t epoch,
                                    double *out_alpha_ms,
                                    double *out_bandwidth_gbps);

/**
 * Trace text for the schedule.
 *
 * # Safety
 * `schedule` must be a live handle; `out` must be valid for writes.
 */
enum FcStatus fc_schedule_to_trace(const struct FcSchedule *schedule, char **out);

/**
 * # Safety
 * `schedule` must be null or a handle not yet freed.
 */
void fc_schedule_free(struct FcSchedule *schedule);

/**
 * Runs a simulation described by TOML `config`. Relative paths in the
 * config resolve against `base_dir` (the current directory if null).
 *
 * # Safety
 * `config` must be a NUL-terminated string, `base_dir` null or one;
 * `out` must be valid for writes.
 */
enum FcStatus fc_simulation_run(const char *config,
                                const char *base_dir,
                                struct FcSimulation **out);

/**
 * Steps executed, or 0 for a null handle.
 *
 * # Safety
 * `sim` must be null or a live handle.
 */
uintptr_t fc_simulation_steps(const struct FcSimulation *sim);

/**
 * Summary as JSON.
 *
 * # Safety
 * `sim` must be a live handle; `out` must be valid for writes.
 */
enum FcStatus fc_simulation_summary_json(const struct FcSimulation *sim, char **out);

/**
 * Per-step metrics as CSV.
 *
 * # Safety
 * `sim` must be a live handle; `out` must be valid for writes.
 */
enum FcStatus fc_simulation_metrics_csv(const struct FcSimulation *sim, char **out);

/**
 * # Safety
 * `sim` must be null or a handle not yet freed.
 */
void fc_simulation_free(struct FcSimulation *sim);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLEXCOMM_H */
