#pragma once

#include <cstdint>
#include <string>

#include "common.hpp"

namespace sprig {

// Every trainer hyperparameter plus artifact-level settings. Defaults match
// the published table; total_timesteps defaults to the desk-scale budget.
struct TrainerConfig {
  int64_t rollout_length = 2048;
  int64_t batch_size = 64;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double learning_rate = 1e-4;
  int64_t ppo_epochs = 4;
  double clip_epsilon = 0.2;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double max_grad_norm = 0.5;
  double lambda_cost = 1e-4;
  double alpha_coop = 0.7;
  int64_t total_timesteps = 200000;
  int64_t max_episode_length = 10000;
  uint64_t seed = 0;
  std::string mode = "sprig";  // sprig | ppo_baseline
  std::string env = "beam_catch";
  std::string out_dir = "runs";

  // environment parameters
  int64_t env_height = 12;
  int64_t env_width = 12;
  int64_t spawn_period = 3;
  int64_t max_objects = 4;

  // artifact-level switches
  int64_t checkpoint_cadence = 0;  // iterations between checkpoints; 0 = final only
  bool use_eq9_weighting = false;
  std::string baseline_torso = "attention";  // attention | conv
  bool debug_stage_isolation = false;
};

// Flat "key = value" file; unknown keys are rejected, missing keys keep
// their defaults, values are range-checked.
TrainerConfig parse_config(const std::string& path);
TrainerConfig parse_config_text(const std::string& text);
void set_config_key(TrainerConfig& cfg, const std::string& key, const std::string& value);
std::string config_get(const TrainerConfig& cfg, const std::string& key);
std::string serialize_config(const TrainerConfig& cfg);
void save_config(const TrainerConfig& cfg, const std::string& path);

// Hash of the serialized snapshot, for unique run directory names.
std::string config_hash(const TrainerConfig& cfg);

}  // namespace sprig
