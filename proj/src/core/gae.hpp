#pragma once

#include <vector>

#include "common.hpp"

namespace sprig {

// Fixed-length rollout record. All vectors share length T; `values` carries
// one extra bootstrap entry for the state after the final step.
struct Trajectory {
  std::vector<double> observations;  // T * obs_size, row-major
  int obs_size = 0;
  std::vector<int> actions;
  std::vector<double> rewards;
  std::vector<double> values;  // length T + 1
  std::vector<double> log_probs;
  std::vector<unsigned char> dones;

  int length() const { return static_cast<int>(rewards.size()); }
  void check() const;
};

struct AdvantageBatch {
  std::vector<double> advantages;      // normalized (after normalize())
  std::vector<double> raw_advantages;  // pre-normalization
  std::vector<double> returns;         // raw advantage + value target
  // statistics of the batch the advantages were normalized over; minibatch
  // slices inherit them so stage contracts can be checked downstream
  double norm_mean = 0.0;
  double norm_std = 1.0;
  bool normalized = false;
};

// delta_t = r_t + gamma*(1-done_t)*V(s_{t+1}) - V(s_t)
// A_t = sum_{l>=0} (gamma*lam)^l delta_{t+l}, reset across done flags,
// computed by the standard backward recursion. returns_t = A_t + V(s_t).
AdvantageBatch compute_gae(const Trajectory& traj, double gamma, double lam);

// advantages <- (raw - mean) / (population std + 1e-8)
AdvantageBatch normalize(AdvantageBatch batch);

}  // namespace sprig
