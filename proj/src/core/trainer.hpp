#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "config.hpp"
#include "env.hpp"
#include "gae.hpp"
#include "perception.hpp"
#include "policy.hpp"
#include "tensor.hpp"

namespace sprig {

struct IterationMetrics {
  int64_t iteration = 0;
  int64_t env_steps = 0;
  double mean_episode_return = 0.0;
  double leader_utility = 0.0;
  double u_policy = 0.0;
  double raw_cost = 0.0;
  double weighted_cost = 0.0;
  double clip_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double leader_grad_norm = 0.0;    // pre-clip
  double follower_grad_norm = 0.0;  // pre-clip
  double wall_time_s = 0.0;         // kept out of metrics.csv for determinism
};

// Column header of metrics.csv (everything except wall time, which goes to
// timing.csv so metric files stay byte-reproducible).
std::string metrics_csv_header();
std::string metrics_csv_row(const IterationMetrics& m);

struct Minibatch {
  Tensor observations;  // (B, stack, H, W), constant
  std::vector<int> actions;
  Tensor old_log_probs;  // (B), constant
  Tensor advantages;     // (B), constant, normalized
  Tensor returns;        // (B), constant
  double advantage_mean = 0.0;  // full-rollout statistics
  double advantage_std = 1.0;
};

struct LeaderDelta {
  double leader_utility = 0.0;
  double u_policy = 0.0;
  double raw_cost = 0.0;
  double weighted_cost = 0.0;
  double grad_norm = 0.0;       // pre-clip
  double post_clip_norm = 0.0;
  double clip_factor = 1.0;
};

struct FollowerDelta {
  double loss = 0.0;
  double clip_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double raw_cost = 0.0;
  double weighted_cost = 0.0;
  double grad_norm = 0.0;       // pre-clip
  double post_clip_norm = 0.0;
  double clip_factor = 1.0;
};

// Two-stage cooperative Stackelberg training atop PPO, plus the plain-PPO
// baseline (joint update of the shared torso and the policy head).
class Trainer {
 public:
  Trainer(const TrainerConfig& cfg, uint64_t run_seed);

  Trajectory collect_rollout(int length);
  Minibatch materialize(const Trajectory& traj, const AdvantageBatch& adv,
                        const std::vector<int>& indices) const;

  LeaderDelta leader_stage(const Minibatch& mb);
  FollowerDelta follower_stage(const Minibatch& mb);
  FollowerDelta joint_stage(const Minibatch& mb);  // ppo_baseline update

  // on_iteration (optional) runs after each completed iteration, e.g. to cut
  // cadence checkpoints.
  std::vector<IterationMetrics> train(
      const std::function<void(int64_t)>& on_iteration = nullptr);

  AttentionStack& perception() { return *perception_; }
  PolicyNet& policy() { return *policy_; }
  Environment& env() { return *env_; }
  const TrainerConfig& config() const { return cfg_; }
  uint64_t run_seed() const { return run_seed_; }

  std::vector<Tensor> perception_params() const { return perception_->params(); }
  std::vector<Tensor> policy_params() const { return policy_->params(); }

 private:
  TrainerConfig cfg_;
  uint64_t run_seed_;
  std::unique_ptr<Environment> env_;
  std::unique_ptr<AttentionStack> perception_;
  std::unique_ptr<PolicyNet> policy_;
  AdamState adam_leader_;
  AdamState adam_follower_;
  AdamState adam_joint_;
  Rng env_seeds_;
  Rng action_rng_;
  Rng shuffle_rng_;

  std::vector<double> pending_obs_;  // current observation between rollouts
  double episode_return_acc_ = 0.0;
  std::vector<double> finished_episode_returns_;  // within the current rollout
  double last_mean_episode_return_ = 0.0;

  double grad_norm(const std::vector<Tensor>& params) const;
};

// Full run: trains, then writes metrics.csv, timing.csv, manifest.txt and
// checkpoints under out_dir.
void run_training(const TrainerConfig& cfg, uint64_t run_seed, const std::string& out_dir);

struct EvalResult {
  double mean_return = 0.0;
  double std_return = 0.0;
  std::vector<double> episode_returns;
};

// Greedy-action evaluation of a saved checkpoint. env_override replaces the
// environment id recorded in the checkpoint's config snapshot.
EvalResult evaluate_checkpoint(const std::string& checkpoint_path,
                               const std::optional<std::string>& env_override, int episodes,
                               uint64_t seed);

// Mean/std return of the uniform-random policy, for baseline comparisons.
EvalResult random_policy_return(const TrainerConfig& cfg, int episodes, uint64_t seed);

std::string artifact_version();

}  // namespace sprig
