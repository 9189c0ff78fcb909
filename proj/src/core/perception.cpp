#include "perception.hpp"

#include <cmath>

namespace sprig {

namespace {

// Modified Gram-Schmidt on the columns of a gaussian (rows x cols) matrix,
// rows >= cols. Column signs are fixed by the leading entry for determinism.
std::vector<double> orthonormal_columns(int rows, int cols, Rng& rng) {
  std::vector<double> m(static_cast<size_t>(rows) * cols);
  for (double& x : m) x = rng.normal();
  for (int c = 0; c < cols; ++c) {
    for (int prev = 0; prev < c; ++prev) {
      double dot = 0.0;
      for (int r = 0; r < rows; ++r) dot += m[r * cols + c] * m[r * cols + prev];
      for (int r = 0; r < rows; ++r) m[r * cols + c] -= dot * m[r * cols + prev];
    }
    double norm = 0.0;
    for (int r = 0; r < rows; ++r) norm += m[r * cols + c] * m[r * cols + c];
    norm = std::sqrt(norm);
    if (norm < 1e-12) {
      // astronomically unlikely; fall back to a unit basis column
      for (int r = 0; r < rows; ++r) m[r * cols + c] = (r == c % rows) ? 1.0 : 0.0;
      continue;
    }
    double sign = m[c % rows * cols + c] >= 0.0 ? 1.0 : -1.0;
    for (int r = 0; r < rows; ++r) m[r * cols + c] *= sign / norm;
  }
  return m;
}

}  // namespace

Tensor orthogonal_matrix(int rows, int cols, double gain, Rng& rng) {
  std::vector<double> m;
  if (rows >= cols) {
    m = orthonormal_columns(rows, cols, rng);
  } else {
    std::vector<double> t = orthonormal_columns(cols, rows, rng);  // (cols x rows)
    m.resize(static_cast<size_t>(rows) * cols);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) m[r * cols + c] = t[c * rows + r];
    }
  }
  for (double& x : m) x *= gain;
  return Tensor::from_data({rows, cols}, std::move(m), true);
}

Tensor orthogonal_conv(int oc, int ic, int kh, int kw, double gain, Rng& rng) {
  Tensor flat = orthogonal_matrix(oc, ic * kh * kw, gain, rng);
  return Tensor::from_data({oc, ic, kh, kw}, flat.data(), true);
}

AttentionStack::AttentionStack(int stack_depth, int height, int width, Rng& rng, int feature_dim,
                               bool use_attention)
    : stack_depth_(stack_depth),
      height_(height),
      width_(width),
      feature_dim_(feature_dim),
      use_attention_(use_attention) {
  if (stack_depth < 1 || height < 1 || width < 1 || feature_dim < 1) {
    throw Error(ErrorCode::config, "attention stack: bad input dimensions");
  }
  conv_specs_ = {{16, 5, 2, 2}, {32, 3, 2, 1}, {32, 3, 2, 1}};

  int c = stack_depth, h = height, w = width;
  for (const ConvSpec& spec : conv_specs_) {
    conv_w_.push_back(orthogonal_conv(spec.out_channels, c, spec.kernel, spec.kernel,
                                      std::sqrt(2.0), rng));
    conv_b_.push_back(Tensor::zeros({spec.out_channels}, true));
    h = (h + 2 * spec.pad - spec.kernel) / spec.stride + 1;
    w = (w + 2 * spec.pad - spec.kernel) / spec.stride + 1;
    if (h < 1 || w < 1) throw Error(ErrorCode::config, "attention stack: input too small");
    c = spec.out_channels;
    if (use_attention_) {
      int dk = std::min(16, c);
      attn_dk_.push_back(dk);
      attn_q_.push_back(orthogonal_matrix(c, dk, 1.0, rng));
      attn_k_.push_back(orthogonal_matrix(c, dk, 1.0, rng));
      attn_v_.push_back(orthogonal_matrix(c, c, 1.0, rng));
      attn_qb_.push_back(Tensor::zeros({dk}, true));
      attn_kb_.push_back(Tensor::zeros({dk}, true));
      attn_vb_.push_back(Tensor::zeros({c}, true));
    }
  }
  flat_dim_ = c * h * w;
  feat_w_ = orthogonal_matrix(flat_dim_, feature_dim_, 1.0, rng);
  feat_b_ = Tensor::zeros({feature_dim_}, true);
}

std::vector<Tensor> AttentionStack::params() const {
  std::vector<Tensor> out;
  for (const auto& [name, t] : named_params()) out.push_back(t);
  return out;
}

std::vector<std::pair<std::string, Tensor>> AttentionStack::named_params() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (size_t i = 0; i < conv_w_.size(); ++i) {
    std::string idx = std::to_string(i);
    out.emplace_back("conv" + idx + ".w", conv_w_[i]);
    out.emplace_back("conv" + idx + ".b", conv_b_[i]);
    if (use_attention_) {
      out.emplace_back("attn" + idx + ".q", attn_q_[i]);
      out.emplace_back("attn" + idx + ".qb", attn_qb_[i]);
      out.emplace_back("attn" + idx + ".k", attn_k_[i]);
      out.emplace_back("attn" + idx + ".kb", attn_kb_[i]);
      out.emplace_back("attn" + idx + ".v", attn_v_[i]);
      out.emplace_back("attn" + idx + ".vb", attn_vb_[i]);
    }
  }
  out.emplace_back("feat.w", feat_w_);
  out.emplace_back("feat.b", feat_b_);
  return out;
}

void AttentionStack::zero_attention_scores() {
  for (size_t i = 0; i < attn_q_.size(); ++i) {
    std::fill(attn_q_[i].mutable_data().begin(), attn_q_[i].mutable_data().end(), 0.0);
    std::fill(attn_k_[i].mutable_data().begin(), attn_k_[i].mutable_data().end(), 0.0);
  }
}

AttentionStack::Forward AttentionStack::forward(const Tensor& x) {
  if (x.rank() != 4) throw Error(ErrorCode::shape, "perception forward: observations must be rank-4");
  if (x.shape()[1] != stack_depth_ || x.shape()[2] != height_ || x.shape()[3] != width_) {
    throw Error(ErrorCode::shape, "perception forward: observation shape mismatch");
  }
  int batch = x.shape()[0];

  Forward out;
  last_attention_.clear();
  last_attention_shape_.clear();

  Tensor cur = x;
  int h = height_, w = width_, c = stack_depth_;
  for (size_t i = 0; i < conv_specs_.size(); ++i) {
    const ConvSpec& spec = conv_specs_[i];
    cur = relu(conv2d(cur, conv_w_[i], conv_b_[i], spec.stride, spec.pad));
    h = (h + 2 * spec.pad - spec.kernel) / spec.stride + 1;
    w = (w + 2 * spec.pad - spec.kernel) / spec.stride + 1;
    c = spec.out_channels;
    if (!use_attention_) continue;

    int p = h * w;
    // tokens: (batch, P, C)
    Tensor tokens = transpose_last2(reshape(cur, {batch, c, p}));
    Tensor q = add_bias(matmul(tokens, attn_q_[i]), attn_qb_[i]);
    Tensor k = add_bias(matmul(tokens, attn_k_[i]), attn_kb_[i]);
    Tensor v = add_bias(matmul(tokens, attn_v_[i]), attn_vb_[i]);
    Tensor scores = scale(bmm(q, k, /*transpose_b=*/true),
                          1.0 / std::sqrt(static_cast<double>(attn_dk_[i])));
    Tensor attn = softmax(scores);  // (batch, P, P), rows sum to 1
    out.attention.push_back(attn);
    last_attention_.push_back(attn.data());
    last_attention_shape_.push_back(attn.shape());
    Tensor mixed = add(tokens, bmm(attn, v));
    cur = reshape(transpose_last2(mixed), {batch, c, h, w});
  }

  Tensor flat = reshape(cur, {batch, flat_dim_});
  out.features = sprig::tanh(add_bias(matmul(flat, feat_w_), feat_b_));
  return out;
}

Tensor attention_cost(const std::vector<Tensor>& attention) {
  if (attention.empty()) {
    throw Error(ErrorCode::usage, "attention_cost: empty attention record");
  }
  // softmax outputs are nonnegative, so the entrywise L1 norm is a plain sum
  Tensor acc = mean(attention[0]);
  for (size_t i = 1; i < attention.size(); ++i) {
    acc = add(acc, mean(attention[i]));
  }
  return scale(acc, 1.0 / static_cast<double>(attention.size()));
}

PerceptionCost perception_cost(const std::vector<Tensor>& attention, double lambda_c) {
  double raw = attention_cost(attention).value();
  return PerceptionCost{raw, lambda_c * raw};
}

Tensor leader_utility(const Tensor& u_policy, const Tensor& raw_cost, double lambda_c,
                      double alpha_coop, bool eq9_weighting) {
  if (!(alpha_coop >= 0.0 && alpha_coop <= 1.0)) {
    throw Error(ErrorCode::config, "leader_utility: alpha_coop must lie in [0, 1]");
  }
  Tensor weighted = scale(raw_cost, lambda_c);
  double w_cost = eq9_weighting ? (1.0 - alpha_coop) : alpha_coop;
  double w_policy = eq9_weighting ? alpha_coop : (1.0 - alpha_coop);
  return add(scale(weighted, -w_cost), scale(u_policy, w_policy));
}

double leader_utility(double u_policy, double raw_cost, double lambda_c, double alpha_coop,
                      bool eq9_weighting) {
  return leader_utility(Tensor::scalar(u_policy), Tensor::scalar(raw_cost), lambda_c, alpha_coop,
                        eq9_weighting)
      .value();
}

}  // namespace sprig
