#ifndef STACKPLAN_H
#define STACKPLAN_H

/* Generated by cbindgen from stackplan-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code of every fallible call.
 */
enum SpStatus
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  SpOk = 0,
  /**
   * A required pointer was null or an argument was out of range.
   */
  SpInvalidArgument = 1,
  /**
   * JSON could not be parsed or failed validation.
   */
  SpParseError = 2,
  /**
   * The search finished without a plan matching every visible object.
   */
  SpPlanningFailure = 3,
  /**
   * Internal failure; details via `sp_last_error_message`.
   */
  SpInternalError = 4,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum SpStatus SpStatus;
#else
typedef int32_t SpStatus;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/**
 * Pick poses for every catalog object plus the global place offset.
 */
typedef struct SpLayout SpLayout;

/**
 * Detections of the visible subset of a scene.
 */
typedef struct SpObservation SpObservation;

/**
 * A finished plan together with the catalog it refers to.
 */
typedef struct SpPlan SpPlan;

/**
 * A validated ground-truth scene (catalog, table, placements).
 */
typedef struct SpScene SpScene;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *sp_last_error_message(void);

/**
 * Frees a string returned by this library.
 */
void sp_string_free(char *s);

/**
 * Parses and validates a scene from its JSON form.
 */
SpStatus sp_scene_from_json(const char *json, struct SpScene **out);

void sp_scene_free(struct SpScene *scene);

/**
 * Number of catalog objects in the scene.
 */
uintptr_t sp_scene_object_count(const struct SpScene *scene);

/**
 * Parses an observation from its JSON form.
 */
SpStatus sp_observation_from_json(const char *json, struct SpObservation **out);

void sp_observation_free(struct SpObservation *observation);

/**
 * Number of detections (the size of the visible set).
 */
uintptr_t sp_observation_detection_count(const struct SpObservation *observation);

/**
 * Serializes an observation to JSON (caller frees via `sp_string_free`).
 */
SpStatus sp_observation_to_json(const struct SpObservation *observation, char **out_json);

/**
 * Simulates the vision stage on a scene. `vision_config_json` may be null
 * for defaults; `seed` overrides the config's seed.
 */
SpStatus sp_observe(const struct SpScene *scene,
                    const char *vision_config_json,
                    uint64_t seed,
                    struct SpObservation **out);

/**
 * Parses a pick layout from its JSON form.
 */
SpStatus sp_layout_from_json(const char *json, struct SpLayout **out);

void sp_layout_free(struct SpLayout *layout);

/**
 * Searches for an assembly plan. `search_config_json` may be null for
 * defaults; `seed` overrides the config's seed. Returns
 * `SpPlanningFailure` (with a best-effort plan in `out`) when the budget
 * runs out before every visible object is matched.
 */
SpStatus sp_plan(const struct SpScene *scene,
                 const struct SpObservation *observation,
                 const struct SpLayout *layout,
                 const char *search_config_json,
                 uint64_t seed,
                 struct SpPlan **out);

void sp_plan_free(struct SpPlan *plan);

/**
 * Whether every visible object was matched.
 */
bool sp_plan_success(const struct SpPlan *plan);

/**
 * Achieved reward in [0, 1].
 */
double sp_plan_reward(const struct SpPlan *plan);

/**
 * Number of search rollouts spent.
 */
uint64_t sp_plan_rollouts_used(const struct SpPlan *plan);

/**
 * Number of pick-and-place steps.
 */
uintptr_t sp_plan_step_count(const struct SpPlan *plan);

/**
 * Serializes the plan to its JSON file form (caller frees the string).
 */
SpStatus sp_plan_to_json(const struct SpPlan *plan, char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STACKPLAN_H */
