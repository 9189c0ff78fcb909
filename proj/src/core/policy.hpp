#pragma once

#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "common.hpp"
#include "tensor.hpp"

namespace sprig {

// Follower network: tanh MLP torso with categorical action head and scalar
// value head.
class PolicyNet {
 public:
  PolicyNet(int feature_dim, int n_actions, Rng& rng, int hidden = 256);

  int n_actions() const { return n_actions_; }
  std::vector<Tensor> params() const;
  std::vector<std::pair<std::string, Tensor>> named_params() const;

  struct Forward {
    Tensor logits;  // (batch, n_actions)
    Tensor value;   // (batch, 1)
  };
  Forward forward(const Tensor& features) const;
  Tensor logits_only(const Tensor& features) const;

 private:
  int n_actions_;
  Tensor w1_, b1_, w2_, b2_, wa_, ba_, wv_, bv_;
  Tensor torso(const Tensor& features) const;
};

struct ActionSample {
  int action;
  double log_prob;
  double value;
};

// Samples from the categorical distribution given by one feature row's
// logits; also returns log pi(a) and V(s).
ActionSample act(const Tensor& feature_row, const PolicyNet& net, Rng& rng);
int greedy_action(const Tensor& feature_row, const PolicyNet& net);

// H = -sum_a p_a log p_a, averaged over batch rows.
Tensor entropy(const Tensor& logits);
double entropy_value(const std::vector<double>& probabilities);

// exp(new - old), elementwise.
Tensor ppo_ratio(const Tensor& new_log_prob, const Tensor& old_log_prob);
std::vector<double> ppo_ratio(const std::vector<double>& new_log_prob,
                              const std::vector<double>& old_log_prob);

// mean over batch of min(r*A, clip(r, 1-eps, 1+eps)*A)
Tensor clip_loss(const Tensor& ratio, const Tensor& advantage, double epsilon);
double clip_loss(const std::vector<double>& ratio, const std::vector<double>& advantage,
                 double epsilon);

struct FollowerBatch {
  Tensor features;          // (batch, feature_dim)
  std::vector<int> actions;
  Tensor old_log_probs;     // (batch)
  Tensor advantages;        // (batch), normalized
  Tensor returns;           // (batch)
  // Statistics of the rollout the advantages were normalized over. Minibatch
  // slices carry the full-rollout statistics; when left unset the loss
  // computes them from the batch itself.
  double advantage_mean = std::numeric_limits<double>::quiet_NaN();
  double advantage_std = std::numeric_limits<double>::quiet_NaN();
};

struct FollowerLossParts {
  Tensor loss;
  double clip_loss;
  double value_loss;
  double entropy;
};

// L_phi = -L_CLIP + value_coef*mean((V - R)^2) - entropy_coef*H + C_theta,
// where the cost term enters as a detached constant. The advantage batch
// must be normalized: |mean| <= 0.1 and |std - 1| <= 0.1.
FollowerLossParts follower_loss(const FollowerBatch& batch, const PolicyNet& net, double epsilon,
                                double value_coef, double entropy_coef,
                                double perception_cost_term);

}  // namespace sprig
