#ifndef IAD_H
#define IAD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible call. `IAD_STATUS_OK` is zero.
 */
typedef enum IadStatus {
  IAD_STATUS_OK = 0,
  IAD_STATUS_NULL_POINTER = 1,
  IAD_STATUS_INVALID_CONFIG = 2,
  IAD_STATUS_INVALID_ARGUMENT = 3,
  IAD_STATUS_INVALID_SAMPLE = 4,
  IAD_STATUS_EMPTY_GROUP = 5,
  IAD_STATUS_EMPTY_SERIES = 6,
  IAD_STATUS_LENGTH_MISMATCH = 7,
  IAD_STATUS_OUT_OF_RANGE = 8,
  IAD_STATUS_INTERNAL = 9,
} IadStatus;

typedef enum IadDetectorKind {
  IAD_DETECTOR_KIND_Z_SCORE = 0,
  IAD_DETECTOR_KIND_MEAN = 1,
} IadDetectorKind;

/**
 * Result of an offline run over one VMM.
 */
typedef struct IadDetection IadDetection;

/**
 * Streaming detector for one VMM.
 */
typedef struct IadEngine IadEngine;

/**
 * Detector settings. Obtain defaults from [`iad_detector_config_default`].
 */
typedef struct IadDetectorConfig {
  size_t window;
  double mean_threshold_percent;
  double z_multiplier;
  double min_percent_vms_fault;
  /**
   * Negative means "same as `window`".
   */
  int64_t warmup_ticks;
  double epsilon;
  enum IadDetectorKind kind;
} IadDetectorConfig;

/**
 * One VMM-level decision. `emitted` is false when a step produced nothing.
 */
typedef struct IadVerdict {
  bool emitted;
  size_t tick;
  bool anomalous;
  double vote_fraction;
  size_t num_changed;
} IadVerdict;

typedef struct IadEvent {
  size_t start_tick;
  size_t end_tick;
  double peak_vote_fraction;
} IadEvent;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty if none. Valid
 * until the next failing call on the same thread.
 */
const char *iad_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *iad_version(void);

/**
 * # Safety
 * `out` must be null or point to writable memory for one config.
 */
enum IadStatus iad_detector_config_default(struct IadDetectorConfig *out);

/**
 * Creates a streaming engine for a VMM hosting `num_vms` VMs. `vm_ids` may
 * be null, in which case VMs are named `vm-0`, `vm-1`, ...
 *
 * # Safety
 * `cfg` and `out` must be valid; `vm_ids`, if non-null, must hold `num_vms`
 * NUL-terminated UTF-8 strings.
 */
enum IadStatus iad_engine_new(const struct IadDetectorConfig *cfg,
                              const char *const *vm_ids,
                              size_t num_vms,
                              struct IadEngine **out);

/**
 * Ingests one tick (`num_values` must equal the VM count). `out` receives
 * the verdict, with `emitted = false` while the detectors warm up. On error
 * the engine is unchanged.
 *
 * # Safety
 * `engine` must come from [`iad_engine_new`]; `values` must hold
 * `num_values` doubles; `out` must be writable.
 */
enum IadStatus iad_engine_step(struct IadEngine *engine,
                               const double *values,
                               size_t num_values,
                               struct IadVerdict *out);

/**
 * Copies the indices of the VMs that changed in the last emitted verdict
 * into `buf` (up to `cap`) and writes the full count to `len`.
 *
 * # Safety
 * `engine` must be valid; `buf` must hold `cap` elements (may be null when
 * `cap` is zero); `len` must be writable.
 */
enum IadStatus iad_engine_last_changed(const struct IadEngine *engine,
                                       size_t *buf,
                                       size_t cap,
                                       size_t *len);

/**
 * # Safety
 * `engine` must be null or come from [`iad_engine_new`] and not be used
 * afterwards.
 */
void iad_engine_free(struct IadEngine *engine);

/**
 * Runs offline detection over a VM-major matrix: `values[vm * num_ticks +
 * t]`. Anomalous ticks at most `max_gap` quiet ticks apart form one event.
 *
 * # Safety
 * `cfg` and `out` must be valid; `values` must hold `num_vms * num_ticks`
 * doubles.
 */
enum IadStatus iad_detect_offline(const struct IadDetectorConfig *cfg,
                                  const double *values,
                                  size_t num_vms,
                                  size_t num_ticks,
                                  size_t max_gap,
                                  struct IadDetection **out);

/**
 * Number of verdicts; 0 for a null handle.
 *
 * # Safety
 * `det` must be null or valid.
 */
size_t iad_detection_num_verdicts(const struct IadDetection *det);

/**
 * # Safety
 * `det` must be valid and `out` writable.
 */
enum IadStatus iad_detection_verdict(const struct IadDetection *det,
                                     size_t index,
                                     struct IadVerdict *out);

/**
 * Number of events; 0 for a null handle.
 *
 * # Safety
 * `det` must be null or valid.
 */
size_t iad_detection_num_events(const struct IadDetection *det);

/**
 * # Safety
 * `det` must be valid and `out` writable.
 */
enum IadStatus iad_detection_event(const struct IadDetection *det,
                                   size_t index,
                                   struct IadEvent *out);

/**
 * True when the run has at least `min_events` events.
 *
 * # Safety
 * `det` must be null or valid.
 */
bool iad_detection_is_anomalous(const struct IadDetection *det, size_t min_events);

/**
 * # Safety
 * `det` must be null or come from [`iad_detect_offline`] and not be used
 * afterwards.
 */
void iad_detection_free(struct IadDetection *det);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IAD_H */
