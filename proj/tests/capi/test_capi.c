/* Exercises the C interface from plain C. */

#include <math.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "agsa/agsa.h"

static int failures = 0;

#define EXPECT(cond)                                                  \
  do {                                                                \
    if (!(cond)) {                                                    \
      fprintf(stderr, "%s:%d: expected %s\n", __FILE__, __LINE__, #cond); \
      ++failures;                                                     \
    }                                                                 \
  } while (0)

static void count_lines(const char* line, void* user) {
  (void)line;
  ++*(int*)user;
}

static void test_errors(void) {
  agsa_env* env = NULL;
  EXPECT(agsa_env_create("/nonexistent/config.json", 1, &env) == AGSA_ERR_IO);
  EXPECT(env == NULL);
  EXPECT(strlen(agsa_last_error()) > 0);
  EXPECT(agsa_env_create(NULL, 1, NULL) == AGSA_ERR_INVALID_ARGUMENT);
  EXPECT(agsa_env_reset(NULL) == AGSA_ERR_INVALID_ARGUMENT);
  EXPECT(strcmp(agsa_status_name(AGSA_OK), "ok") == 0 || strlen(agsa_status_name(AGSA_OK)) > 0);
  EXPECT(agsa_model_load("/nonexistent/checkpoint.bin", NULL) == AGSA_ERR_INVALID_ARGUMENT);
  agsa_env_destroy(NULL);
  agsa_model_destroy(NULL);
}

static void test_episode(void) {
  agsa_env* env = NULL;
  agsa_model* model = NULL;
  size_t depth_len = 0, spec_len = 0, params = 0;
  double* depth;
  double* spec;
  double probs[4], value = 0.0, reward = 0.0;
  int action = -1, done = 0, success = 0, x, y, heading, d_geo, steps = 0;

  EXPECT(agsa_env_create(NULL, 5, &env) == AGSA_OK);
  EXPECT(agsa_model_create(NULL, 5, &model) == AGSA_OK);
  EXPECT(agsa_model_parameter_count(model, &params) == AGSA_OK);
  EXPECT(params == 157030);
  EXPECT(agsa_env_reset(env) == AGSA_OK);
  EXPECT(agsa_env_observation_sizes(env, &depth_len, &spec_len) == AGSA_OK);
  EXPECT(depth_len == 16 * 16);
  EXPECT(spec_len == 16 * 16 * 2);
  depth = malloc(depth_len * sizeof *depth);
  spec = malloc(spec_len * sizeof *spec);
  EXPECT(agsa_env_observation(env, depth, depth_len, spec, spec_len) == AGSA_OK);
  EXPECT(agsa_env_observation(env, depth, depth_len - 1, spec, spec_len) == AGSA_ERR_SHAPE);
  EXPECT(depth[0] >= 0.0 && depth[0] <= 1.0);
  EXPECT(agsa_model_reset_state(model) == AGSA_OK);
  while (!done && steps < 200) {
    EXPECT(agsa_model_act(model, env, &action, probs, &value) == AGSA_OK);
    EXPECT(action >= 0 && action < 4);
    EXPECT(fabs(probs[0] + probs[1] + probs[2] + probs[3] - 1.0) < 1e-9);
    EXPECT(agsa_env_step(env, action, &reward, &done, &success) == AGSA_OK);
    ++steps;
  }
  EXPECT(done);
  EXPECT(agsa_env_pose(env, &x, &y, &heading, &d_geo) == AGSA_OK);
  EXPECT(heading >= 0 && heading < 4);
  EXPECT(d_geo >= 0);
  EXPECT(agsa_env_step(env, AGSA_ACTION_FORWARD, &reward, &done, &success) == AGSA_ERR_STATE);
  EXPECT(agsa_env_reset(env) == AGSA_OK);
  EXPECT(agsa_env_step(env, 7, &reward, &done, &success) == AGSA_ERR_INVALID_ARGUMENT);
  free(depth);
  free(spec);
  agsa_model_destroy(model);
  agsa_env_destroy(env);
}

static void test_commands(void) {
  agsa_metrics m;
  agsa_eval_request req;
  int lines = 0, grad_failures = -1;
  memset(&req, 0, sizeof req);
  req.setting = "heard";
  req.agent = "random";
  req.episodes = 5;
  EXPECT(agsa_eval(&req, &m, count_lines, &lines) == AGSA_OK);
  EXPECT(m.episodes == 5);
  EXPECT(m.sr >= 0.0 && m.sr <= 1.0);
  req.agent = "policy";
  EXPECT(agsa_eval(&req, &m, NULL, NULL) != AGSA_OK);
  req.setting = "loud";
  req.agent = "random";
  EXPECT(agsa_eval(&req, &m, NULL, NULL) == AGSA_ERR_CONFIG);
  EXPECT(agsa_grad_check(1, &grad_failures, NULL, NULL) == AGSA_OK);
  EXPECT(grad_failures == 0);
  EXPECT(agsa_plot("/nonexistent/log.jsonl", "room8", -1, "/tmp/x.svg") == AGSA_ERR_IO);
  EXPECT(agsa_plot("/nonexistent/log.jsonl", NULL, -1, "/tmp/x.svg") == AGSA_ERR_INVALID_ARGUMENT);
}

int main(void) {
  EXPECT(agsa_version() != NULL);
  test_errors();
  test_episode();
  test_commands();
  if (failures) {
    fprintf(stderr, "%d C API check(s) failed\n", failures);
    return 1;
  }
  printf("C API checks passed\n");
  return 0;
}
