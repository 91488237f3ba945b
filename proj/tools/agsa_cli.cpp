// Command-line front end over the C API.

#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "agsa/agsa.h"

namespace {

void print_line(const char* line, void*) {
  std::printf("%s\n", line);
  std::fflush(stdout);
}

int report(agsa_status status) {
  if (status == AGSA_OK) return 0;
  std::fprintf(stderr, "error: %s: %s\n", agsa_status_name(status), agsa_last_error());
  return 2;
}

std::vector<const char*> c_strings(const std::vector<std::string>& v) {
  std::vector<const char*> out;
  for (const auto& s : v) out.push_back(s.c_str());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audio-visual navigation agents in a gridworld acoustic simulator"};
  app.require_subcommand(1);

  std::string config_path, resume_path;
  std::vector<std::string> overrides;
  auto* train = app.add_subcommand("train", "Train a PPO agent");
  train->add_option("--config", config_path, "Run config (JSON)")->check(CLI::ExistingFile);
  train->add_option("--set", overrides, "Override a config value: section.key=value");
  train->add_option("--resume", resume_path, "Continue from a checkpoint")->check(CLI::ExistingFile);

  std::string checkpoint, setting = "heard", agent = "policy", eval_config, trajectories, records;
  bool blind = false;
  int episodes = 0;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint or a baseline agent");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate")->check(CLI::ExistingFile);
  eval->add_option("--setting", setting, "heard or unheard")->check(CLI::IsMember({"heard", "unheard"}));
  eval->add_flag("--blind", blind, "Zero the visual observation");
  eval->add_option("--config", eval_config, "Run config overriding the checkpoint's eval settings")
      ->check(CLI::ExistingFile);
  eval->add_option("--agent", agent, "policy, random or direction_follower")
      ->check(CLI::IsMember({"policy", "random", "direction_follower"}));
  eval->add_option("--episodes", episodes, "Episode count (default: eval.episodes)");
  eval->add_option("--trajectories", trajectories, "Write the episode log here");
  eval->add_option("--records", records, "Append the summary record to this file");

  std::string ablate_config, ablate_records;
  std::vector<std::string> ablate_overrides;
  auto* ablate = app.add_subcommand("ablate", "Train and evaluate the four fusion variants");
  ablate->add_option("--config", ablate_config, "Base run config")->required()->check(CLI::ExistingFile);
  ablate->add_option("--set", ablate_overrides, "Override a config value: section.key=value");
  ablate->add_option("--records", ablate_records, "Write one summary record per variant");

  std::string log_path, map_path, out_path;
  int episode = -1;
  auto* plot = app.add_subcommand("plot", "Render an episode trajectory as SVG");
  plot->add_option("--log", log_path, "Episode log")->required()->check(CLI::ExistingFile);
  plot->add_option("--map", map_path, "Map file or bundled map name")->required();
  plot->add_option("--out", out_path, "Output SVG")->required();
  plot->add_option("--episode", episode, "Episode id (default: first)");

  int seeds = 5;
  auto* grad = app.add_subcommand("grad-check", "Finite-difference gradient checks of every module");
  grad->add_option("--seeds", seeds, "Random instances per module")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  if (*train) {
    if (config_path.empty() && resume_path.empty()) {
      std::fprintf(stderr, "error: train needs --config or --resume\n");
      return 2;
    }
    const auto sets = c_strings(overrides);
    return report(agsa_train(config_path.empty() ? nullptr : config_path.c_str(), sets.data(), sets.size(),
                             resume_path.empty() ? nullptr : resume_path.c_str(), print_line, nullptr));
  }
  if (*eval) {
    agsa_eval_request req{};
    req.checkpoint_path = checkpoint.c_str();
    req.config_path = eval_config.c_str();
    req.setting = setting.c_str();
    req.agent = agent.c_str();
    req.blind = blind ? 1 : 0;
    req.episodes = episodes;
    req.trajectory_path = trajectories.c_str();
    req.records_path = records.c_str();
    agsa_metrics m{};
    return report(agsa_eval(&req, &m, print_line, nullptr));
  }
  if (*ablate) {
    const auto sets = c_strings(ablate_overrides);
    return report(agsa_ablate(ablate_config.c_str(), sets.data(), sets.size(), ablate_records.c_str(), print_line,
                              nullptr));
  }
  if (*plot) {
    const int rc = report(agsa_plot(log_path.c_str(), map_path.c_str(), episode, out_path.c_str()));
    if (rc == 0) std::printf("wrote %s\n", out_path.c_str());
    return rc;
  }
  if (*grad) {
    int failures = 0;
    const int rc = report(agsa_grad_check(seeds, &failures, print_line, nullptr));
    if (rc != 0) return rc;
    std::printf("%d failing case(s)\n", failures);
    return failures == 0 ? 0 : 1;
  }
  return 0;
}
