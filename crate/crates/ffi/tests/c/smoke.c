#include <stdio.h>
#include "focusrl.h"

int main(void) {
    const char *spec = "{\"view_id\": \"c\", \"seed\": 1, \"width\": 64, \"height\": 64,"
                       " \"z_min\": 0.0, \"z_max\": 6.0, \"z_star\": 3.0, \"blur_gain\": 2.0}";
    FrlStack *stack = NULL;
    FrlEnv *env = NULL;
    FrlStep step;
    if (frl_stack_generate(spec, &stack) != FRL_STATUS_OK) return 1;
    if (frl_env_new(stack, NULL, &env) != FRL_STATUS_OK) return 2;
    frl_stack_free(stack);
    if (frl_env_reset(env, 10) != FRL_STATUS_OK) return 3;
    if (frl_env_step(env, 2, &step) != FRL_STATUS_OK) return 4;
    printf("%zu %d %.1f\n", frl_stack_len(NULL), (int)step.outcome, step.reward);
    if (frl_env_step(env, 2, &step) != FRL_STATUS_EPISODE_FINISHED) return 5;
    if (frl_last_error_message() == NULL) return 6;
    frl_env_free(env);
    return 0;
}
