#pragma once

#include <vector>

#include "common.hpp"
#include "tensor.hpp"

namespace sprig {

struct ConvSpec {
  int out_channels;
  int kernel;
  int stride;
  int pad;
};

// Leader network: three conv stages, each followed by single-head
// self-attention over the flattened spatial positions, then a linear feature
// head. Temporal context enters through the frame-stack channels of the
// first conv.
class AttentionStack {
 public:
  // obs shape (stack_depth, height, width)
  AttentionStack(int stack_depth, int height, int width, Rng& rng, int feature_dim = 128,
                 bool use_attention = true);

  int feature_dim() const { return feature_dim_; }
  int n_layers() const { return static_cast<int>(attn_q_.size()); }
  bool use_attention() const { return use_attention_; }
  int input_height() const { return height_; }
  int input_width() const { return width_; }
  int stack_depth() const { return stack_depth_; }

  std::vector<Tensor> params() const;
  std::vector<std::pair<std::string, Tensor>> named_params() const;

  // Attention maps from the most recent forward pass, one flat buffer per
  // layer, shape (batch, P, P) row-major.
  const std::vector<std::vector<double>>& last_attention() const { return last_attention_; }
  const std::vector<std::vector<int>>& last_attention_shape() const {
    return last_attention_shape_;
  }

  struct Forward {
    Tensor features;                 // (batch, feature_dim)
    std::vector<Tensor> attention;   // per layer, (batch, P, P)
  };

  // x: (batch, stack, H, W) with values in [0, 1]
  Forward forward(const Tensor& x);

  // Zeroes the attention score projections so attention rows start uniform.
  void zero_attention_scores();

 private:
  int stack_depth_, height_, width_, feature_dim_;
  bool use_attention_;
  std::vector<ConvSpec> conv_specs_;
  std::vector<Tensor> conv_w_, conv_b_;
  std::vector<Tensor> attn_q_, attn_k_, attn_v_;  // weights (C, d) / (C, C)
  std::vector<Tensor> attn_qb_, attn_kb_, attn_vb_;
  std::vector<int> attn_dk_;
  Tensor feat_w_, feat_b_;
  int flat_dim_ = 0;
  std::vector<std::vector<double>> last_attention_;
  std::vector<std::vector<int>> last_attention_shape_;
};

struct FeatureBatch {
  Tensor features;
  std::vector<Tensor> attention;
};

// Mean over layers of ||A_k||_1 / numel(A_k); attention rows are
// row-stochastic so the result lies in [0, 1]. Differentiable.
Tensor attention_cost(const std::vector<Tensor>& attention);

struct PerceptionCost {
  double raw_cost;       // in [0, 1]
  double weighted_cost;  // lambda_c * raw
};

PerceptionCost perception_cost(const std::vector<Tensor>& attention, double lambda_c);

// Algorithm-style leader utility on scalar graph nodes:
//   u_L = alpha*(-lambda_c*raw_cost) + (1-alpha)*u_policy
// With eq9_weighting the weights swap:
//   u_L = alpha*u_policy - (1-alpha)*lambda_c*raw_cost
Tensor leader_utility(const Tensor& u_policy, const Tensor& raw_cost, double lambda_c,
                      double alpha_coop, bool eq9_weighting = false);
double leader_utility(double u_policy, double raw_cost, double lambda_c, double alpha_coop,
                      bool eq9_weighting = false);

// Orthogonal init helpers (shared with the policy net).
Tensor orthogonal_matrix(int rows, int cols, double gain, Rng& rng);
Tensor orthogonal_conv(int oc, int ic, int kh, int kw, double gain, Rng& rng);

}  // namespace sprig
