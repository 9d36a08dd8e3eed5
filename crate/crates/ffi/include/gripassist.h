#ifndef GRIPASSIST_H
#define GRIPASSIST_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GaStatus {
  GA_STATUS_OK = 0,
  GA_STATUS_NULL_POINTER = 1,
  GA_STATUS_INVALID_ARGUMENT = 2,
  GA_STATUS_PARSE = 3,
  GA_STATUS_INFEASIBLE = 4,
  GA_STATUS_FINISHED = 5,
  GA_STATUS_INTERNAL = 6,
  GA_STATUS_PANIC = 7,
} GaStatus;

typedef enum GaMode {
  GA_MODE_MANUAL = 0,
  GA_MODE_ASSISTED = 1,
} GaMode;

typedef enum GaApertureKey {
  GA_APERTURE_KEY_HOLD = 0,
  GA_APERTURE_KEY_OPEN = 1,
  GA_APERTURE_KEY_CLOSE = 2,
} GaApertureKey;

/**
 * Opaque session handle.
 */
typedef struct GaSession GaSession;

/**
 * Gripper and assistance state after a tick.
 */
typedef struct GaState {
  uint64_t tick;
  double x;
  double y;
  double theta;
  double aperture;
  /**
   * Velocity sent to the plant on the last tick.
   */
  double command_x;
  double command_y;
  /**
   * Selected grasp, or -1 in manual mode and before the first tick.
   */
  int64_t grasp_id;
  double position_error;
  bool finished;
  bool success;
} GaState;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *ga_last_error(void);

/**
 * Library version as a static string.
 */
const char *ga_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void ga_string_free(char *s);

/**
 * Unit direction for a string of held numpad keys such as `"86"`.
 *
 * # Safety
 * `keys` must be a valid C string; `out` must point to two doubles.
 */
enum GaStatus ga_numpad_direction(const char *keys, double *out);

/**
 * Opens a session on the scene of trial `trial`. `config_json` is an
 * experiment config document, or null for the defaults. `mode` is a
 * [`GaMode`] value.
 *
 * # Safety
 * `config_json` must be null or a valid C string; `out` must be writable.
 */
enum GaStatus ga_session_new(const char *config_json,
                             uint64_t trial,
                             int32_t mode,
                             struct GaSession **out);

/**
 * Advances the session one tick with the operator's velocity (mm/s).
 * `aperture` is a [`GaApertureKey`] value.
 *
 * # Safety
 * `session` must be a live handle; `state` may be null.
 */
enum GaStatus ga_session_tick(struct GaSession *session,
                              double vx,
                              double vy,
                              int32_t aperture,
                              struct GaState *state);

/**
 * Copies the current state.
 *
 * # Safety
 * `session` must be a live handle; `state` must be writable.
 */
enum GaStatus ga_session_state(const struct GaSession *session, struct GaState *state);

/**
 * Session setup (scene, candidates, target, start) as JSON.
 *
 * # Safety
 * `session` must be a live handle; `out` must be writable. Free the
 * result with [`ga_string_free`].
 */
enum GaStatus ga_session_setup_json(const struct GaSession *session, char **out);

/**
 * Releases a session. Null is ignored.
 *
 * # Safety
 * `session` must come from [`ga_session_new`] and not have been freed.
 */
void ga_session_free(struct GaSession *session);

/**
 * Samples candidate grasps on a scene document and returns them as a JSON
 * array.
 *
 * # Safety
 * `scene_json` must be a valid C string, `config_json` null or a valid C
 * string, and `out` writable. Free the result with [`ga_string_free`].
 */
enum GaStatus ga_sample_grasps(const char *config_json,
                               const char *scene_json,
                               uint64_t seed,
                               char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRIPASSIST_H */
