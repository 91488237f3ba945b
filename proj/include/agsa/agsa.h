#ifndef AGSA_AGSA_H
#define AGSA_AGSA_H

/* C interface to the agsa audio-visual navigation library.
 *
 * Every function returns an agsa_status. On failure the message for the
 * calling thread is available from agsa_last_error() until the next call. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define AGSA_API __declspec(dllexport)
#else
#define AGSA_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum agsa_status {
  AGSA_OK = 0,
  AGSA_ERR_SHAPE = 1,
  AGSA_ERR_CONFIG = 2,
  AGSA_ERR_STATE = 3,
  AGSA_ERR_CONTRACT = 4,
  AGSA_ERR_UNSUPPORTED = 5,
  AGSA_ERR_PARSE = 6,
  AGSA_ERR_DATA = 7,
  AGSA_ERR_NUMERIC = 8,
  AGSA_ERR_IO = 9,
  AGSA_ERR_INVALID_ARGUMENT = 10,
  AGSA_ERR_INTERNAL = 11
} agsa_status;

enum { AGSA_ACTION_FORWARD = 0, AGSA_ACTION_TURN_LEFT = 1, AGSA_ACTION_TURN_RIGHT = 2, AGSA_ACTION_STOP = 3 };
enum { AGSA_HEADING_N = 0, AGSA_HEADING_E = 1, AGSA_HEADING_S = 2, AGSA_HEADING_W = 3 };

/* Receives one line of progress output. */
typedef void (*agsa_log_fn)(const char* line, void* user);

AGSA_API const char* agsa_version(void);
AGSA_API const char* agsa_status_name(agsa_status status);
AGSA_API const char* agsa_last_error(void);

/* ---- Environment ---------------------------------------------------------
 * Episodes follow the run config (NULL for defaults): map list, fixed or
 * random source/start, heard sound pool. */
typedef struct agsa_env agsa_env;

AGSA_API agsa_status agsa_env_create(const char* config_path, uint64_t seed, agsa_env** out);
AGSA_API void agsa_env_destroy(agsa_env* env);
AGSA_API agsa_status agsa_env_reset(agsa_env* env);
AGSA_API agsa_status agsa_env_step(agsa_env* env, int action, double* reward, int* done, int* success);
AGSA_API agsa_status agsa_env_pose(const agsa_env* env, int* x, int* y, int* heading, int* d_geo);
/* Sizes in doubles: depth H*W, spectrogram F*T*2 (channel-last). */
AGSA_API agsa_status agsa_env_observation_sizes(const agsa_env* env, size_t* depth_len, size_t* spectrogram_len);
AGSA_API agsa_status agsa_env_observation(const agsa_env* env, double* depth, size_t depth_len, double* spectrogram,
                                          size_t spectrogram_len);

/* ---- Model ---------------------------------------------------------------- */
typedef struct agsa_model agsa_model;

AGSA_API agsa_status agsa_model_create(const char* config_path, uint64_t seed, agsa_model** out);
AGSA_API agsa_status agsa_model_load(const char* checkpoint_path, agsa_model** out);
AGSA_API void agsa_model_destroy(agsa_model* model);
AGSA_API agsa_status agsa_model_parameter_count(const agsa_model* model, size_t* count);
/* Clears the recurrent state; call at every episode start. */
AGSA_API agsa_status agsa_model_reset_state(agsa_model* model);
/* Greedy action for the environment's current observation; also reports
 * the four action probabilities and the value estimate when non-NULL. */
AGSA_API agsa_status agsa_model_act(agsa_model* model, const agsa_env* env, int* action, double* probs4,
                                    double* value);

/* ---- Commands ---------------------------------------------------------------- */

/* overrides: "section.key=value" strings. resume_checkpoint may be NULL. */
AGSA_API agsa_status agsa_train(const char* config_path, const char* const* overrides, size_t n_overrides,
                                const char* resume_checkpoint, agsa_log_fn log, void* user);

typedef struct agsa_eval_request {
  const char* checkpoint_path;  /* required for agent "policy" */
  const char* config_path;      /* optional; must match the checkpoint architecture */
  const char* setting;          /* "heard" or "unheard" */
  const char* agent;            /* "policy", "random" or "direction_follower"; NULL means policy */
  int blind;
  int episodes;                 /* 0: eval.episodes from the config */
  const char* trajectory_path;  /* optional episode log output */
  const char* records_path;     /* optional; the summary record is appended */
} agsa_eval_request;

typedef struct agsa_metrics {
  double sr;
  double spl;
  double sna;
  size_t episodes;
} agsa_metrics;

AGSA_API agsa_status agsa_eval(const agsa_eval_request* request, agsa_metrics* metrics, agsa_log_fn log, void* user);

AGSA_API agsa_status agsa_ablate(const char* config_path, const char* const* overrides, size_t n_overrides,
                                 const char* records_path, agsa_log_fn log, void* user);

/* episode < 0 selects the first episode in the log. */
AGSA_API agsa_status agsa_plot(const char* log_path, const char* map_path, int episode, const char* out_path);

AGSA_API agsa_status agsa_grad_check(int seeds, int* failures, agsa_log_fn log, void* user);

#ifdef __cplusplus
}
#endif

#endif
