#ifndef FOCUSRL_H
#define FOCUSRL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum FrlStatus {
  FRL_STATUS_OK = 0,
  FRL_STATUS_NULL_POINTER = 1,
  FRL_STATUS_INVALID_ARGUMENT = 2,
  FRL_STATUS_IO = 3,
  FRL_STATUS_FORMAT = 4,
  FRL_STATUS_ARCH_MISMATCH = 5,
  FRL_STATUS_EPISODE_FINISHED = 6,
  FRL_STATUS_SHAPE = 7,
  FRL_STATUS_PANIC = 8,
} FrlStatus;

// Episode outcome codes, identical to the core enum order.
typedef enum FrlOutcome {
  FRL_OUTCOME_RUNNING = 0,
  FRL_OUTCOME_SUCCESS_TERMINATE = 1,
  FRL_OUTCOME_FAIL_TERMINATE_BLUR = 2,
  FRL_OUTCOME_FAIL_OUT_OF_RANGE = 3,
  FRL_OUTCOME_FAIL_MAX_STEPS = 4,
} FrlOutcome;

// One virtual microscope episode at a time.
typedef struct FrlEnv FrlEnv;

// Q-network loaded from a checkpoint, evaluated in inference mode.
typedef struct FrlNet FrlNet;

// Immutable focal stack; may be shared by several environments.
typedef struct FrlStack FrlStack;

// What one `frl_env_step` produced.
typedef struct FrlStep {
  double reward;
  bool done;
  enum FrlOutcome outcome;
  // Stack index after the move.
  size_t index;
  // Actions taken so far in the episode.
  size_t steps;
  // Normalized focus of the frame at `index`.
  double focus_norm;
} FrlStep;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null if none. The
// pointer stays valid until the next failing call on the same thread.
const char *frl_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *frl_version(void);

// Number of executable actions (codes `0..frl_num_actions()`).
size_t frl_num_actions(void);

// Renders a synthetic stack from a JSON stack description.
enum FrlStatus frl_stack_generate(const char *spec_json, struct FrlStack **out);

// Loads a stack directory written by `focusrl gen-stack`.
enum FrlStatus frl_stack_load(const char *dir, struct FrlStack **out);

// Number of focus positions; 0 for a null handle.
size_t frl_stack_len(const struct FrlStack *stack);

// Copies the normalized focus curve into `out[0..len]`; `len` must equal
// the stack length.
enum FrlStatus frl_stack_focus_curve(const struct FrlStack *stack, double *out, size_t len);

void frl_stack_free(struct FrlStack *stack);

// Creates an environment over `stack`. `config_json` may be null for the
// default configuration. The stack handle may be freed afterwards.
enum FrlStatus frl_env_new(const struct FrlStack *stack,
                           const char *config_json,
                           struct FrlEnv **out);

// Starts a new episode at stack `index`.
enum FrlStatus frl_env_reset(struct FrlEnv *env, size_t index);

// Applies action `code` (0..4) and reports the transition.
enum FrlStatus frl_env_step(struct FrlEnv *env, uint8_t code, struct FrlStep *out);

// Current stack index; `SIZE_MAX` for a null handle.
size_t frl_env_index(const struct FrlEnv *env);

enum FrlOutcome frl_env_outcome(const struct FrlEnv *env);

void frl_env_free(struct FrlEnv *env);

// Loads a checkpoint file.
enum FrlStatus frl_net_load(const char *path, struct FrlNet **out);

// Writes the Q-values of the environment's current state into
// `out[0..5]`.
enum FrlStatus frl_net_q_values(const struct FrlNet *net,
                                const struct FrlEnv *env,
                                double *out,
                                size_t len);

// Greedy action code for the environment's current state.
enum FrlStatus frl_net_greedy_action(const struct FrlNet *net,
                                     const struct FrlEnv *env,
                                     uint8_t *out);

void frl_net_free(struct FrlNet *net);

// Learnable parameters and multiply-accumulates of a network architecture
// given as JSON; null selects the reference architecture.
enum FrlStatus frl_count(const char *arch_json, uint64_t *params, uint64_t *macs);

// Step reward under the default environment configuration.
enum FrlStatus frl_reward(double focus_norm, enum FrlOutcome outcome, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FOCUSRL_H */
