#include <stdio.h>
#include <stdlib.h>
#include "stackplan.h"

static char *slurp(const char *path) {
    FILE *f = fopen(path, "rb");
    if (!f) { perror(path); exit(2); }
    fseek(f, 0, SEEK_END); long n = ftell(f); fseek(f, 0, SEEK_SET);
    char *buf = malloc(n + 1);
    fread(buf, 1, n, f); buf[n] = 0; fclose(f);
    return buf;
}

int main(void) {
    char *scene_json = slurp("scenarios/scenes/b_analog.json");
    char *layout_json = slurp("scenarios/layouts/b_analog.json");

    SpScene *scene = NULL;
    if (sp_scene_from_json(scene_json, &scene) != SpOk) {
        fprintf(stderr, "scene: %s\n", sp_last_error_message());
        return 1;
    }
    const char *vision = "{\"camera_dir\": [0.0, 1.0, -0.14], \"occlusion_threshold\": 0.5,"
                         " \"pos_noise_sigma\": 0.002, \"confidence_threshold\": 0.5}";
    SpObservation *obs = NULL;
    if (sp_observe(scene, vision, 0, &obs) != SpOk) {
        fprintf(stderr, "observe: %s\n", sp_last_error_message());
        return 1;
    }
    SpLayout *layout = NULL;
    if (sp_layout_from_json(layout_json, &layout) != SpOk) return 1;

    SpPlan *plan = NULL;
    SpStatus st = sp_plan(scene, obs, layout, NULL, 0, &plan);
    printf("status=%d detections=%zu success=%d reward=%.3f rollouts=%llu steps=%zu\n",
           (int)st, sp_observation_detection_count(obs), (int)sp_plan_success(plan),
           sp_plan_reward(plan), (unsigned long long)sp_plan_rollouts_used(plan),
           sp_plan_step_count(plan));

    sp_plan_free(plan); sp_layout_free(layout);
    sp_observation_free(obs); sp_scene_free(scene);
    free(scene_json); free(layout_json);
    return st == SpOk ? 0 : 1;
}
