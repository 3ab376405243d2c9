#ifndef TMREACH_H
#define TMREACH_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. Values 2..=7 match the command-line exit
 * codes for the same failure class.
 */
typedef enum TmStatus {
  TM_STATUS_OK = 0,
  /**
   * Bad argument, unknown name or invalid configuration.
   */
  TM_STATUS_INVALID_ARGUMENT = 2,
  TM_STATUS_DIMENSION_MISMATCH = 3,
  TM_STATUS_STEP_FAILURE = 4,
  TM_STATUS_DIVERGED = 5,
  TM_STATUS_IO = 6,
  TM_STATUS_SOUNDNESS = 7,
  TM_STATUS_NULL_POINTER = 10,
  TM_STATUS_INVALID_UTF8 = 11,
  TM_STATUS_PANIC = 12,
} TmStatus;

/**
 * A neural network.
 */
typedef struct TmNet TmNet;

/**
 * A reachable tube: one box per step.
 */
typedef struct TmTube TmTube;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *tm_version(void);

/**
 * Message of the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *tm_last_error(void);

/**
 * Process-wide switch for outward rounding of interval endpoints.
 */
void tm_set_sound_rounding(int on);

/**
 * Parses a network from its JSON text.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` writable.
 */
enum TmStatus tm_net_from_json(const char *json, struct TmNet **out);

/**
 * Loads a network from a JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum TmStatus tm_net_load(const char *path, struct TmNet **out);

/**
 * # Safety
 * `net` must come from this library and not be used afterwards.
 */
void tm_net_free(struct TmNet *net);

/**
 * Input width of the network, or 0 for NULL.
 *
 * # Safety
 * `net` must be NULL or a live handle.
 */
size_t tm_net_input_dim(const struct TmNet *net);

/**
 * # Safety
 * `net` must be NULL or a live handle.
 */
size_t tm_net_output_dim(const struct TmNet *net);

/**
 * Evaluates the network at a point; `y` receives `output_dim` values.
 *
 * # Safety
 * `x` must hold `x_len` values and `y` room for the output.
 */
enum TmStatus tm_net_forward(const struct TmNet *net, const double *x, size_t x_len, double *y);

/**
 * Discrete-time tube of a one-step network (`residual != 0`: the network
 * predicts the increment). `radius` holds one value or `n`; `actions`
 * holds `horizon * input_dim` values, step-major.
 *
 * # Safety
 * Pointers must reference arrays of the stated lengths.
 */
enum TmStatus tm_dt_reach_net(const struct TmNet *net,
                              int residual,
                              const double *center,
                              size_t n,
                              const double *radius,
                              size_t radius_len,
                              const double *actions,
                              size_t horizon,
                              size_t window,
                              struct TmTube **out);

/**
 * Discrete-time tube of a registered analytical map.
 *
 * # Safety
 * `name` must be NUL-terminated; arrays as in [`tm_dt_reach_net`].
 */
enum TmStatus tm_dt_reach_system(const char *name,
                                 const double *center,
                                 size_t n,
                                 const double *radius,
                                 size_t radius_len,
                                 const double *actions,
                                 size_t horizon,
                                 size_t window,
                                 struct TmTube **out);

/**
 * Continuous-time flowpipe of a registered system under a held input.
 * A tube that stops early is still returned; inspect
 * [`tm_tube_failure_step`].
 *
 * # Safety
 * `name` must be NUL-terminated; arrays must have the stated lengths.
 */
enum TmStatus tm_ct_reach_system(const char *name,
                                 const double *input,
                                 size_t input_len,
                                 const double *center,
                                 size_t n,
                                 const double *radius,
                                 size_t radius_len,
                                 double h,
                                 size_t steps,
                                 size_t order,
                                 struct TmTube **out);

/**
 * # Safety
 * `tube` must come from this library and not be used afterwards.
 */
void tm_tube_free(struct TmTube *tube);

/**
 * Number of boxes (steps including the initial one).
 *
 * # Safety
 * `tube` must be NULL or a live handle.
 */
size_t tm_tube_len(const struct TmTube *tube);

/**
 * State dimension of the boxes.
 *
 * # Safety
 * `tube` must be NULL or a live handle.
 */
size_t tm_tube_dim(const struct TmTube *tube);

/**
 * First step that could not be certified, or -1 when the tube is complete.
 *
 * # Safety
 * `tube` must be a live handle.
 */
int64_t tm_tube_failure_step(const struct TmTube *tube);

/**
 * Copies the bounds of box `step` into `lo` and `hi` (each `dim` long).
 *
 * # Safety
 * `lo` and `hi` must have room for `dim` values.
 */
enum TmStatus tm_tube_bounds(const struct TmTube *tube,
                             size_t step,
                             double *lo,
                             double *hi,
                             size_t dim);

/**
 * Sum of box volumes over all steps; fails on an incomplete tube.
 *
 * # Safety
 * `out` must be writable.
 */
enum TmStatus tm_tube_volume(const struct TmTube *tube, double *out);

/**
 * Tube as CSV text; release with [`tm_string_free`]. NULL on failure.
 *
 * # Safety
 * `tube` must be a live handle.
 */
char *tm_tube_to_csv(const struct TmTube *tube);

/**
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void tm_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TMREACH_H */
