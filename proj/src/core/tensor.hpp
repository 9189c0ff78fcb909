#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "common.hpp"

namespace sprig {

// Reverse-mode autodiff over dense double tensors. Graphs are define-by-run:
// every op records its parents and a backprop closure on the result node,
// and backward() walks the graph in reverse topological order. Ops executed
// under a NoGradScope (or whose inputs carry no gradient) record nothing.
struct TensorNode {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;  // sized lazily; empty means all-zero
  bool requires_grad = false;
  bool needs_grad = false;  // this node participates in some backward pass
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;

  int64_t numel() const {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
  }
  void ensure_grad() {
    if (grad.empty()) grad.assign(static_cast<size_t>(numel()), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int64_t numel() const { return node_->numel(); }
  int rank() const { return static_cast<int>(node_->shape.size()); }

  const std::vector<double>& data() const { return node_->data; }
  std::vector<double>& mutable_data() { return node_->data; }
  double value() const;  // scalar tensors only
  double item(int64_t i) const { return node_->data[static_cast<size_t>(i)]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) {
    node_->requires_grad = b;
    node_->needs_grad = b;
  }
  // Gradient of the last backward pass; zeros if the tensor did not
  // participate.
  std::vector<double> grad() const;
  std::vector<double>& grad_ref() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    node_->grad.assign(static_cast<size_t>(node_->numel()), 0.0);
  }
  const char* op_name() const { return node_->op; }

  std::shared_ptr<TensorNode> node() const { return node_; }
  static Tensor wrap(std::shared_ptr<TensorNode> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<TensorNode> node_;
};

// Disables graph recording for the enclosed scope (rollout collection and
// evaluation paths).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// Temporarily freezes a parameter set: gradients are not accumulated into
// frozen leaves, so the other player's stage cannot touch them.
class FreezeScope {
 public:
  explicit FreezeScope(const std::vector<Tensor>& params);
  ~FreezeScope();
  FreezeScope(const FreezeScope&) = delete;
  FreezeScope& operator=(const FreezeScope&) = delete;

 private:
  std::vector<Tensor> params_;
};

// --- primitives -------------------------------------------------------------
// Binary ops accept equal shapes or a scalar (1-element) operand, which is
// broadcast.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double s);
Tensor add_const(const Tensor& a, double c);
Tensor neg(const Tensor& a);

// bias is rank-1 with length equal to a's last axis, broadcast over the rest.
Tensor add_bias(const Tensor& a, const Tensor& bias);

Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor clip(const Tensor& a, double lo, double hi);

Tensor softmax(const Tensor& a);      // over the last axis
Tensor log_softmax(const Tensor& a);  // over the last axis

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// (m,k)x(k,n) -> (m,n); a rank-3 lhs (b,m,k) folds its leading axes.
Tensor matmul(const Tensor& a, const Tensor& b);
// (b,m,k)x(b,k,n) -> (b,m,n); transpose_b treats b as (b,n,k).
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);
// x:(b,ic,h,w) w:(oc,ic,kh,kw) bias:(oc)
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);

// m:(b,n), idx per row -> (b)
Tensor gather_rows(const Tensor& m, const std::vector<int>& idx);
Tensor reshape(const Tensor& a, std::vector<int> shape);
Tensor transpose_last2(const Tensor& a);  // (b,m,n) -> (b,n,m)
Tensor detach(const Tensor& a);

// --- engine -----------------------------------------------------------------
void backward(const Tensor& loss);
void zero_grad(const std::vector<Tensor>& params);

// Scales every gradient by max_norm/g when the global L2 norm g exceeds
// max_norm; returns the factor applied (1.0 when untouched).
double clip_global_norm(const std::vector<Tensor>& params, double max_norm);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

void adam_step(std::vector<Tensor>& params, AdamState& state, double lr);

// Central-difference gradient check. Rebuilds the graph via `build` for every
// probe; returns max over parameter entries of
// |analytic - numeric| / max(1, |analytic|).
double finite_difference_check(const std::function<Tensor()>& build,
                               std::vector<Tensor> params, double eps);

uint64_t param_checksum(const std::vector<Tensor>& params);

}  // namespace sprig
