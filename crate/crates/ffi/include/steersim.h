#ifndef STEERSIM_H
#define STEERSIM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible function.
 */
typedef enum SteersimStatus {
  STEERSIM_STATUS_OK = 0,
  STEERSIM_STATUS_NULL_POINTER = 1,
  STEERSIM_STATUS_INVALID_ARGUMENT = 2,
  STEERSIM_STATUS_IO = 3,
  STEERSIM_STATUS_PARSE = 4,
  STEERSIM_STATUS_MODEL = 5,
  STEERSIM_STATUS_SCHEMA_MISMATCH = 6,
  STEERSIM_STATUS_UNKNOWN_THRESHOLD = 7,
  STEERSIM_STATUS_OUT_OF_RANGE = 8,
  STEERSIM_STATUS_INTERNAL = 9,
} SteersimStatus;

typedef struct SteersimCoveragePredictor SteersimCoveragePredictor;

typedef struct SteersimTrafficPredictor SteersimTrafficPredictor;

typedef struct SteersimTrajectoryModel SteersimTrajectoryModel;

/**
 * Flow five-tuple; addresses are IPv4 in host byte order.
 */
typedef struct SteersimFlowKey {
  uint32_t src_addr;
  uint32_t dst_addr;
  uint16_t src_port;
  uint16_t dst_port;
  uint8_t protocol;
} SteersimFlowKey;

/**
 * First packet of a flow. `direction` is 0 for uplink, 1 for downlink.
 */
typedef struct SteersimPacket {
  double arrival_time;
  uint32_t size;
  uint8_t direction;
} SteersimPacket;

/**
 * Best route match for an observed fingerprint sequence.
 */
typedef struct SteersimRouteMatch {
  uint32_t route_id;
  double score;
  double distance;
  /**
   * Template step aligned with the last observed fingerprint.
   */
  size_t current_step;
} SteersimRouteMatch;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next steersim call on the same thread.
 */
const char *steersim_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *steersim_version(void);

/**
 * Load a traffic predictor written by `steersim train-traffic`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SteersimStatus steersim_traffic_load(const char *path, struct SteersimTrafficPredictor **out);

/**
 * Probability that the flow's total volume exceeds `threshold_bytes`
 * (1000, 10000 or 100000), from its key and first packet.
 *
 * # Safety
 * All pointers must be valid; `handle` must come from `steersim_traffic_load`.
 */
enum SteersimStatus steersim_traffic_predict(const struct SteersimTrafficPredictor *handle_ptr,
                                             const struct SteersimFlowKey *key,
                                             const struct SteersimPacket *first_packet,
                                             uint64_t threshold_bytes,
                                             double *out);

/**
 * # Safety
 * `handle` must come from `steersim_traffic_load` or be NULL; it must not be used afterwards.
 */
void steersim_traffic_free(struct SteersimTrafficPredictor *handle);

/**
 * Load a coverage predictor written by `steersim train-coverage`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SteersimStatus steersim_coverage_load(const char *path,
                                           struct SteersimCoveragePredictor **out);

/**
 * Number of primary cells the coverage model expects.
 *
 * # Safety
 * `handle` must come from `steersim_coverage_load`.
 */
enum SteersimStatus steersim_coverage_cells(const struct SteersimCoveragePredictor *handle_ptr,
                                            size_t *out);

/**
 * Probability of secondary-carrier coverage from `n_cells` primary RSRP values (dBm).
 *
 * # Safety
 * `primary_rsrp` must point to `n_cells` doubles.
 */
enum SteersimStatus steersim_coverage_predict(const struct SteersimCoveragePredictor *handle_ptr,
                                              const double *primary_rsrp,
                                              size_t n_cells,
                                              double *out);

/**
 * # Safety
 * `handle` must come from `steersim_coverage_load` or be NULL; it must not be used afterwards.
 */
void steersim_coverage_free(struct SteersimCoveragePredictor *handle);

/**
 * Load a trajectory model written by `steersim mobility`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SteersimStatus steersim_trajectory_load(const char *path,
                                             struct SteersimTrajectoryModel **out);

/**
 * Match `steps` observed fingerprints, each `n_cells` RSRP values laid out
 * row by row, and report the best route.
 *
 * # Safety
 * `rsrp` must point to `steps * n_cells` doubles.
 */
enum SteersimStatus steersim_trajectory_match(const struct SteersimTrajectoryModel *handle_ptr,
                                              const double *rsrp,
                                              size_t steps,
                                              size_t n_cells,
                                              struct SteersimRouteMatch *out);

/**
 * Stored coverage probabilities for the `horizon` steps after `current_step`.
 *
 * # Safety
 * `out` must have room for `horizon` doubles.
 */
enum SteersimStatus steersim_trajectory_coverage_ahead(const struct SteersimTrajectoryModel *handle_ptr,
                                                       uint32_t route_id,
                                                       size_t current_step,
                                                       size_t horizon,
                                                       double *out);

/**
 * # Safety
 * `handle` must come from `steersim_trajectory_load` or be NULL; it must not be used afterwards.
 */
void steersim_trajectory_free(struct SteersimTrajectoryModel *handle);

/**
 * Area under the ROC curve of `n` scores against 0/1 labels.
 *
 * # Safety
 * `scores` and `labels` must each point to `n` elements.
 */
enum SteersimStatus steersim_auc(const double *scores,
                                 const uint8_t *labels,
                                 size_t n,
                                 double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STEERSIM_H */
