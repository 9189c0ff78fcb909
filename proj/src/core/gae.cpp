#include "gae.hpp"

#include <cmath>

namespace sprig {

void Trajectory::check() const {
  size_t t = rewards.size();
  if (actions.size() != t || log_probs.size() != t || dones.size() != t) {
    throw Error(ErrorCode::shape, "trajectory: vector lengths differ");
  }
  if (values.size() != t + 1) {
    throw Error(ErrorCode::shape, "trajectory: values must have length T + 1");
  }
  if (obs_size > 0 && observations.size() != t * static_cast<size_t>(obs_size)) {
    throw Error(ErrorCode::shape, "trajectory: observation buffer size mismatch");
  }
}

AdvantageBatch compute_gae(const Trajectory& traj, double gamma, double lam) {
  if (!(gamma >= 0.0 && gamma < 1.0)) {
    throw Error(ErrorCode::config, "compute_gae: gamma must lie in [0, 1)");
  }
  if (!(lam >= 0.0 && lam <= 1.0)) {
    throw Error(ErrorCode::config, "compute_gae: lambda must lie in [0, 1]");
  }
  traj.check();
  const int t_len = traj.length();
  AdvantageBatch out;
  out.raw_advantages.assign(t_len, 0.0);
  out.returns.assign(t_len, 0.0);
  double gae = 0.0;
  for (int t = t_len - 1; t >= 0; --t) {
    double not_done = traj.dones[t] ? 0.0 : 1.0;
    double delta = traj.rewards[t] + gamma * not_done * traj.values[t + 1] - traj.values[t];
    gae = delta + gamma * lam * not_done * gae;
    out.raw_advantages[t] = gae;
    out.returns[t] = gae + traj.values[t];
  }
  out.advantages = out.raw_advantages;
  return out;
}

AdvantageBatch normalize(AdvantageBatch batch) {
  const size_t n = batch.raw_advantages.size();
  if (n < 2) {
    throw Error(ErrorCode::degenerate, "normalize: batch of length < 2 is degenerate");
  }
  double mean = 0.0;
  for (double a : batch.raw_advantages) mean += a;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double a : batch.raw_advantages) var += (a - mean) * (a - mean);
  var /= static_cast<double>(n);  // population variance
  double std = std::sqrt(var);
  batch.advantages.resize(n);
  for (size_t i = 0; i < n; ++i) {
    batch.advantages[i] = (batch.raw_advantages[i] - mean) / (std + 1e-8);
  }
  // record the post-normalization statistics for downstream contract checks
  double m2 = 0.0;
  for (double a : batch.advantages) m2 += a;
  m2 /= static_cast<double>(n);
  double v2 = 0.0;
  for (double a : batch.advantages) v2 += (a - m2) * (a - m2);
  batch.norm_mean = m2;
  batch.norm_std = std::sqrt(v2 / static_cast<double>(n));
  batch.normalized = true;
  return batch;
}

}  // namespace sprig
