#include "tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace sprig {

namespace {

thread_local bool g_grad_enabled = true;

void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw Error(ErrorCode::numeric, std::string("non-finite value produced by op '") + op + "'");
    }
  }
}

void require_finite_input(const Tensor& t, const char* op) {
  for (double x : t.data()) {
    if (!std::isfinite(x)) {
      throw Error(ErrorCode::invalid_value,
                  std::string("non-finite input to op '") + op + "'");
    }
  }
}

std::shared_ptr<TensorNode> make_node(std::vector<int> shape, const char* op) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->data.resize(static_cast<size_t>(n->numel()));
  n->op = op;
  return n;
}

// Attaches parents + backprop closure when the result participates in a
// backward pass; otherwise the node stays a constant leaf.
Tensor finish(std::shared_ptr<TensorNode> out,
              std::vector<std::shared_ptr<TensorNode>> parents,
              std::function<void(TensorNode&)> backprop) {
  check_finite(out->data, out->op);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs = needs || p->needs_grad;
  }
  if (needs) {
    out->needs_grad = true;
    out->parents = std::move(parents);
    out->backprop = std::move(backprop);
  }
  return Tensor::wrap(std::move(out));
}

enum class BinKind { same, a_scalar, b_scalar };

BinKind binary_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return BinKind::same;
  if (a.numel() == 1) return BinKind::a_scalar;
  if (b.numel() == 1) return BinKind::b_scalar;
  throw Error(ErrorCode::shape, std::string(op) + ": shapes are neither equal nor scalar-broadcastable");
}

int last_dim(const Tensor& a, const char* op) {
  if (a.rank() < 1) throw Error(ErrorCode::shape, std::string(op) + ": rank-0 input");
  return a.shape().back();
}

}  // namespace

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  auto n = make_node(std::move(shape), "leaf");
  n->requires_grad = requires_grad;
  n->needs_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.mutable_data().begin(), t.mutable_data().end(), value);
  return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
  auto n = make_node(std::move(shape), "leaf");
  if (static_cast<int64_t>(data.size()) != n->numel()) {
    throw Error(ErrorCode::shape, "from_data: data length does not match shape");
  }
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  n->needs_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from_data({1}, {v}, requires_grad);
}

double Tensor::value() const {
  if (numel() != 1) throw Error(ErrorCode::shape, "value(): tensor is not scalar");
  return node_->data[0];
}

std::vector<double> Tensor::grad() const {
  if (!node_->grad.empty()) return node_->grad;
  return std::vector<double>(static_cast<size_t>(numel()), 0.0);
}

NoGradScope::NoGradScope() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradScope::~NoGradScope() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }

FreezeScope::FreezeScope(const std::vector<Tensor>& params) : params_(params) {
  for (auto& p : params_) p.set_requires_grad(false);
}
FreezeScope::~FreezeScope() {
  for (auto& p : params_) p.set_requires_grad(true);
}

// --- elementwise binary -------------------------------------------------

namespace {

template <typename Fwd>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd,
                 std::function<void(TensorNode&, TensorNode&, TensorNode&)> bwd) {
  BinKind kind = binary_kind(a, b, name);
  const auto& out_shape = (kind == BinKind::a_scalar) ? b.shape() : a.shape();
  auto out = make_node(out_shape, name);
  const size_t n = out->data.size();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out->data.data();
  for (size_t i = 0; i < n; ++i) {
    double va = (kind == BinKind::a_scalar) ? pa[0] : pa[i];
    double vb = (kind == BinKind::b_scalar) ? pb[0] : pb[i];
    po[i] = fwd(va, vb);
  }
  auto an = a.node();
  auto bn = b.node();
  return finish(out, {an, bn}, [an, bn, bwd](TensorNode& o) { bwd(o, *an, *bn); });
}

// adds `g` into the grad of `p`, collapsing to a scalar when p is scalar
void accumulate(TensorNode& p, size_t i, double g) {
  if (!p.needs_grad) return;
  p.ensure_grad();
  p.grad[p.data.size() == 1 ? 0 : i] += g;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "add", [](double x, double y) { return x + y; },
                   [](TensorNode& o, TensorNode& an, TensorNode& bn) {
                     for (size_t i = 0; i < o.grad.size(); ++i) {
                       accumulate(an, i, o.grad[i]);
                       accumulate(bn, i, o.grad[i]);
                     }
                   });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "sub", [](double x, double y) { return x - y; },
                   [](TensorNode& o, TensorNode& an, TensorNode& bn) {
                     for (size_t i = 0; i < o.grad.size(); ++i) {
                       accumulate(an, i, o.grad[i]);
                       accumulate(bn, i, -o.grad[i]);
                     }
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "mul", [](double x, double y) { return x * y; },
                   [](TensorNode& o, TensorNode& an, TensorNode& bn) {
                     bool as = an.data.size() == 1 && o.data.size() != 1;
                     bool bs = bn.data.size() == 1 && o.data.size() != 1;
                     for (size_t i = 0; i < o.grad.size(); ++i) {
                       double va = as ? an.data[0] : an.data[i];
                       double vb = bs ? bn.data[0] : bn.data[i];
                       accumulate(an, i, o.grad[i] * vb);
                       accumulate(bn, i, o.grad[i] * va);
                     }
                   });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  if (bias.rank() != 1 || bias.shape()[0] != last_dim(a, "add_bias")) {
    throw Error(ErrorCode::shape, "add_bias: bias must be rank-1 matching the last axis");
  }
  int cols = bias.shape()[0];
  int64_t rows = a.numel() / cols;
  auto out = make_node(a.shape(), "add_bias");
  const double* pa = a.data().data();
  const double* pb = bias.data().data();
  double* po = out->data.data();
  for (int64_t r = 0; r < rows; ++r) {
    for (int j = 0; j < cols; ++j) po[r * cols + j] = pa[r * cols + j] + pb[j];
  }
  auto an = a.node();
  auto bn = bias.node();
  return finish(out, {an, bn}, [an, bn, rows, cols](TensorNode& o) {
    if (an->needs_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
    }
    if (bn->needs_grad) {
      bn->ensure_grad();
      for (int64_t r = 0; r < rows; ++r) {
        for (int j = 0; j < cols; ++j) bn->grad[j] += o.grad[r * cols + j];
      }
    }
  });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  // ties route the gradient to the first operand
  return binary_op(a, b, "minimum", [](double x, double y) { return x <= y ? x : y; },
                   [](TensorNode& o, TensorNode& an, TensorNode& bn) {
                     bool as = an.data.size() == 1 && o.data.size() != 1;
                     bool bs = bn.data.size() == 1 && o.data.size() != 1;
                     for (size_t i = 0; i < o.grad.size(); ++i) {
                       double va = as ? an.data[0] : an.data[i];
                       double vb = bs ? bn.data[0] : bn.data[i];
                       if (va <= vb) {
                         accumulate(an, i, o.grad[i]);
                       } else {
                         accumulate(bn, i, o.grad[i]);
                       }
                     }
                   });
}

// --- elementwise unary ----------------------------------------------------

namespace {

template <typename Fwd>
Tensor unary_op(const Tensor& a, const char* name, Fwd fwd,
                std::function<void(TensorNode&, TensorNode&)> bwd) {
  auto out = make_node(a.shape(), name);
  const size_t n = out->data.size();
  const double* pa = a.data().data();
  double* po = out->data.data();
  for (size_t i = 0; i < n; ++i) po[i] = fwd(pa[i]);
  auto an = a.node();
  return finish(out, {an}, [an, bwd](TensorNode& o) { bwd(o, *an); });
}

}  // namespace

Tensor scale(const Tensor& a, double s) {
  return unary_op(a, "scale", [s](double x) { return x * s; },
                  [s](TensorNode& o, TensorNode& an) {
                    an.ensure_grad();
                    for (size_t i = 0; i < o.grad.size(); ++i) an.grad[i] += s * o.grad[i];
                  });
}

Tensor add_const(const Tensor& a, double c) {
  return unary_op(a, "add_const", [c](double x) { return x + c; },
                  [](TensorNode& o, TensorNode& an) {
                    an.ensure_grad();
                    for (size_t i = 0; i < o.grad.size(); ++i) an.grad[i] += o.grad[i];
                  });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor relu(const Tensor& a) {
  return unary_op(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
                  [](TensorNode& o, TensorNode& an) {
                    an.ensure_grad();
                    for (size_t i = 0; i < o.grad.size(); ++i) {
                      if (an.data[i] > 0.0) an.grad[i] += o.grad[i];
                    }
                  });
}

Tensor tanh(const Tensor& a) {
  return unary_op(a, "tanh", [](double x) { return std::tanh(x); },
                  [](TensorNode& o, TensorNode& an) {
                    an.ensure_grad();
                    for (size_t i = 0; i < o.grad.size(); ++i) {
                      an.grad[i] += o.grad[i] * (1.0 - o.data[i] * o.data[i]);
                    }
                  });
}

Tensor exp(const Tensor& a) {
  return unary_op(a, "exp", [](double x) { return std::exp(x); },
                  [](TensorNode& o, TensorNode& an) {
                    an.ensure_grad();
                    for (size_t i = 0; i < o.grad.size(); ++i) {
                      an.grad[i] += o.grad[i] * o.data[i];
                    }
                  });
}

Tensor clip(const Tensor& a, double lo, double hi) {
  if (lo > hi) throw Error(ErrorCode::invalid_value, "clip: lo > hi");
  return unary_op(a, "clip", [lo, hi](double x) { return std::min(hi, std::max(lo, x)); },
                  [lo, hi](TensorNode& o, TensorNode& an) {
                    an.ensure_grad();
                    for (size_t i = 0; i < o.grad.size(); ++i) {
                      if (an.data[i] >= lo && an.data[i] <= hi) an.grad[i] += o.grad[i];
                    }
                  });
}

// --- softmax family ---------------------------------------------------------

Tensor softmax(const Tensor& a) {
  require_finite_input(a, "softmax");
  int cols = last_dim(a, "softmax");
  int64_t rows = a.numel() / cols;
  auto out = make_node(a.shape(), "softmax");
  const double* pa = a.data().data();
  double* po = out->data.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = pa + r * cols;
    double* y = po + r * cols;
    double mx = x[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (int j = 0; j < cols; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (int j = 0; j < cols; ++j) y[j] /= z;
  }
  auto an = a.node();
  return finish(out, {an}, [an, cols, rows](TensorNode& o) {
    an->ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      const double* y = o.data.data() + r * cols;
      const double* gy = o.grad.data() + r * cols;
      double dot = 0.0;
      for (int j = 0; j < cols; ++j) dot += gy[j] * y[j];
      double* gx = an->grad.data() + r * cols;
      for (int j = 0; j < cols; ++j) gx[j] += y[j] * (gy[j] - dot);
    }
  });
}

Tensor log_softmax(const Tensor& a) {
  require_finite_input(a, "log_softmax");
  int cols = last_dim(a, "log_softmax");
  int64_t rows = a.numel() / cols;
  auto out = make_node(a.shape(), "log_softmax");
  const double* pa = a.data().data();
  double* po = out->data.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = pa + r * cols;
    double* y = po + r * cols;
    double mx = x[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (int j = 0; j < cols; ++j) z += std::exp(x[j] - mx);
    double lz = mx + std::log(z);
    for (int j = 0; j < cols; ++j) y[j] = x[j] - lz;
  }
  auto an = a.node();
  return finish(out, {an}, [an, cols, rows](TensorNode& o) {
    an->ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      const double* y = o.data.data() + r * cols;
      const double* gy = o.grad.data() + r * cols;
      double gsum = 0.0;
      for (int j = 0; j < cols; ++j) gsum += gy[j];
      double* gx = an->grad.data() + r * cols;
      for (int j = 0; j < cols; ++j) gx[j] += gy[j] - std::exp(y[j]) * gsum;
    }
  });
}

// --- reductions -------------------------------------------------------------

Tensor sum(const Tensor& a) {
  auto out = make_node({1}, "sum");
  double s = 0.0;
  for (double x : a.data()) s += x;
  out->data[0] = s;
  auto an = a.node();
  return finish(out, {an}, [an](TensorNode& o) {
    an->ensure_grad();
    double g = o.grad[0];
    for (double& gx : an->grad) gx += g;
  });
}

Tensor mean(const Tensor& a) {
  int64_t n = a.numel();
  auto out = make_node({1}, "mean");
  double s = 0.0;
  for (double x : a.data()) s += x;
  out->data[0] = s / static_cast<double>(n);
  auto an = a.node();
  return finish(out, {an}, [an, n](TensorNode& o) {
    an->ensure_grad();
    double g = o.grad[0] / static_cast<double>(n);
    for (double& gx : an->grad) gx += g;
  });
}

// --- linear algebra ---------------------------------------------------------

namespace {

// C(m,n) += A(m,k) * B(k,n), optionally B transposed to (n,k)
void gemm_acc(const double* a, const double* b, double* c, int m, int k, int n, bool bt) {
  if (!bt) {
    for (int i = 0; i < m; ++i) {
      double* ci = c + static_cast<int64_t>(i) * n;
      const double* ai = a + static_cast<int64_t>(i) * k;
      for (int p = 0; p < k; ++p) {
        double av = ai[p];
        if (av == 0.0) continue;
        const double* bp = b + static_cast<int64_t>(p) * n;
        for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  } else {
    for (int i = 0; i < m; ++i) {
      double* ci = c + static_cast<int64_t>(i) * n;
      const double* ai = a + static_cast<int64_t>(i) * k;
      for (int j = 0; j < n; ++j) {
        const double* bj = b + static_cast<int64_t>(j) * k;
        double s = 0.0;
        for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
        ci[j] += s;
      }
    }
  }
}

// C(m,n) += A(k,m)^T * B(k,n)
void gemm_at_acc(const double* a, const double* b, double* c, int k, int m, int n) {
  for (int p = 0; p < k; ++p) {
    const double* ap = a + static_cast<int64_t>(p) * m;
    const double* bp = b + static_cast<int64_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      double av = ap[i];
      if (av == 0.0) continue;
      double* ci = c + static_cast<int64_t>(i) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (b.rank() != 2) throw Error(ErrorCode::shape, "matmul: rhs must be rank-2");
  if (a.rank() != 2 && a.rank() != 3) {
    throw Error(ErrorCode::shape, "matmul: lhs must be rank-2 or rank-3");
  }
  int k = a.shape().back();
  if (k != b.shape()[0]) throw Error(ErrorCode::shape, "matmul: inner dimensions differ");
  int n = b.shape()[1];
  int64_t m64 = a.numel() / k;
  int m = static_cast<int>(m64);

  std::vector<int> out_shape = a.shape();
  out_shape.back() = n;
  auto out = make_node(out_shape, "matmul");
  std::fill(out->data.begin(), out->data.end(), 0.0);
  gemm_acc(a.data().data(), b.data().data(), out->data.data(), m, k, n, false);

  auto an = a.node();
  auto bn = b.node();
  return finish(out, {an, bn}, [an, bn, m, k, n](TensorNode& o) {
    if (an->needs_grad) {
      an->ensure_grad();
      // dA = dC * B^T
      gemm_acc(o.grad.data(), bn->data.data(), an->grad.data(), m, n, k, true);
    }
    if (bn->needs_grad) {
      bn->ensure_grad();
      // dB = A^T * dC
      gemm_at_acc(an->data.data(), o.grad.data(), bn->grad.data(), m, k, n);
    }
  });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  if (a.rank() != 3 || b.rank() != 3) throw Error(ErrorCode::shape, "bmm: inputs must be rank-3");
  int batch = a.shape()[0];
  if (b.shape()[0] != batch) throw Error(ErrorCode::shape, "bmm: batch dimensions differ");
  int m = a.shape()[1];
  int k = a.shape()[2];
  int n = transpose_b ? b.shape()[1] : b.shape()[2];
  int bk = transpose_b ? b.shape()[2] : b.shape()[1];
  if (bk != k) throw Error(ErrorCode::shape, "bmm: inner dimensions differ");

  auto out = make_node({batch, m, n}, "bmm");
  std::fill(out->data.begin(), out->data.end(), 0.0);
  const int64_t sa = static_cast<int64_t>(m) * k;
  const int64_t sb = static_cast<int64_t>(b.shape()[1]) * b.shape()[2];
  const int64_t so = static_cast<int64_t>(m) * n;
  for (int i = 0; i < batch; ++i) {
    gemm_acc(a.data().data() + i * sa, b.data().data() + i * sb, out->data.data() + i * so, m, k, n,
             transpose_b);
  }

  auto an = a.node();
  auto bn = b.node();
  return finish(out, {an, bn}, [an, bn, batch, m, k, n, sa, sb, so, transpose_b](TensorNode& o) {
    if (an->needs_grad) an->ensure_grad();
    if (bn->needs_grad) bn->ensure_grad();
    for (int i = 0; i < batch; ++i) {
      const double* go = o.grad.data() + i * so;
      const double* pa = an->data.data() + i * sa;
      const double* pb = bn->data.data() + i * sb;
      if (!transpose_b) {
        // C = A*B: dA = dC*B^T, dB = A^T*dC
        if (an->needs_grad) gemm_acc(go, pb, an->grad.data() + i * sa, m, n, k, true);
        if (bn->needs_grad) gemm_at_acc(pa, go, bn->grad.data() + i * sb, m, k, n);
      } else {
        // C = A*B^T: dA = dC*B, dB = dC^T*A
        if (an->needs_grad) gemm_acc(go, pb, an->grad.data() + i * sa, m, n, k, false);
        if (bn->needs_grad) gemm_at_acc(go, pa, bn->grad.data() + i * sb, m, n, k);
      }
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
  if (x.rank() != 4 || w.rank() != 4) throw Error(ErrorCode::shape, "conv2d: x and w must be rank-4");
  if (stride < 1 || pad < 0) throw Error(ErrorCode::invalid_value, "conv2d: bad stride/padding");
  int b = x.shape()[0], ic = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
  int oc = w.shape()[0];
  if (w.shape()[1] != ic) throw Error(ErrorCode::shape, "conv2d: channel mismatch");
  int kh = w.shape()[2], kw = w.shape()[3];
  if (bias.numel() != oc) throw Error(ErrorCode::shape, "conv2d: bias size mismatch");
  int oh = (h + 2 * pad - kh) / stride + 1;
  int ow = (wd + 2 * pad - kw) / stride + 1;
  if (oh < 1 || ow < 1) throw Error(ErrorCode::shape, "conv2d: kernel larger than padded input");

  auto out = make_node({b, oc, oh, ow}, "conv2d");
  const double* px = x.data().data();
  const double* pw = w.data().data();
  const double* pb = bias.data().data();
  double* po = out->data.data();
  auto xi = [&](int bi, int c, int i, int j) {
    return px[((static_cast<int64_t>(bi) * ic + c) * h + i) * wd + j];
  };
  for (int bi = 0; bi < b; ++bi) {
    for (int o = 0; o < oc; ++o) {
      for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j) {
          double s = pb[o];
          int i0 = i * stride - pad;
          int j0 = j * stride - pad;
          for (int c = 0; c < ic; ++c) {
            const double* wk = pw + ((static_cast<int64_t>(o) * ic + c) * kh) * kw;
            for (int ki = 0; ki < kh; ++ki) {
              int ii = i0 + ki;
              if (ii < 0 || ii >= h) continue;
              for (int kj = 0; kj < kw; ++kj) {
                int jj = j0 + kj;
                if (jj < 0 || jj >= wd) continue;
                s += wk[ki * kw + kj] * xi(bi, c, ii, jj);
              }
            }
          }
          po[((static_cast<int64_t>(bi) * oc + o) * oh + i) * ow + j] = s;
        }
      }
    }
  }

  auto xn = x.node();
  auto wn = w.node();
  auto biasn = bias.node();
  return finish(out, {xn, wn, biasn},
                [xn, wn, biasn, b, ic, h, wd, oc, kh, kw, oh, ow, stride, pad](TensorNode& o) {
    if (xn->needs_grad) xn->ensure_grad();
    if (wn->needs_grad) wn->ensure_grad();
    if (biasn->needs_grad) biasn->ensure_grad();
    const double* go = o.grad.data();
    for (int bi = 0; bi < b; ++bi) {
      for (int oo = 0; oo < oc; ++oo) {
        for (int i = 0; i < oh; ++i) {
          for (int j = 0; j < ow; ++j) {
            double g = go[((static_cast<int64_t>(bi) * oc + oo) * oh + i) * ow + j];
            if (g == 0.0) continue;
            if (biasn->needs_grad) biasn->grad[oo] += g;
            int i0 = i * stride - pad;
            int j0 = j * stride - pad;
            for (int c = 0; c < ic; ++c) {
              int64_t wbase = (static_cast<int64_t>(oo) * ic + c) * kh * kw;
              int64_t xbase = (static_cast<int64_t>(bi) * ic + c) * h * static_cast<int64_t>(wd);
              for (int ki = 0; ki < kh; ++ki) {
                int ii = i0 + ki;
                if (ii < 0 || ii >= h) continue;
                for (int kj = 0; kj < kw; ++kj) {
                  int jj = j0 + kj;
                  if (jj < 0 || jj >= wd) continue;
                  if (wn->needs_grad) {
                    wn->grad[wbase + ki * kw + kj] += g * xn->data[xbase + ii * wd + jj];
                  }
                  if (xn->needs_grad) {
                    xn->grad[xbase + ii * wd + jj] += g * wn->data[wbase + ki * kw + kj];
                  }
                }
              }
            }
          }
        }
      }
    }
  });
}

// --- indexing / shape -------------------------------------------------------

Tensor gather_rows(const Tensor& m, const std::vector<int>& idx) {
  if (m.rank() != 2) throw Error(ErrorCode::shape, "gather_rows: input must be rank-2");
  int rows = m.shape()[0];
  int cols = m.shape()[1];
  if (static_cast<int>(idx.size()) != rows) {
    throw Error(ErrorCode::shape, "gather_rows: one index per row required");
  }
  for (int i : idx) {
    if (i < 0 || i >= cols) throw Error(ErrorCode::invalid_value, "gather_rows: index out of range");
  }
  auto out = make_node({rows}, "gather_rows");
  for (int r = 0; r < rows; ++r) out->data[r] = m.data()[static_cast<int64_t>(r) * cols + idx[r]];
  auto mn = m.node();
  auto indices = idx;
  return finish(out, {mn}, [mn, indices, cols](TensorNode& o) {
    mn->ensure_grad();
    for (size_t r = 0; r < indices.size(); ++r) {
      mn->grad[r * cols + indices[r]] += o.grad[r];
    }
  });
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  if (n != a.numel()) throw Error(ErrorCode::shape, "reshape: element count mismatch");
  auto out = make_node(std::move(shape), "reshape");
  out->data = a.data();
  auto an = a.node();
  return finish(out, {an}, [an](TensorNode& o) {
    an->ensure_grad();
    for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
  });
}

Tensor transpose_last2(const Tensor& a) {
  if (a.rank() != 3) throw Error(ErrorCode::shape, "transpose_last2: input must be rank-3");
  int b = a.shape()[0], m = a.shape()[1], n = a.shape()[2];
  auto out = make_node({b, n, m}, "transpose_last2");
  const double* pa = a.data().data();
  double* po = out->data.data();
  for (int i = 0; i < b; ++i) {
    const double* src = pa + static_cast<int64_t>(i) * m * n;
    double* dst = po + static_cast<int64_t>(i) * m * n;
    for (int r = 0; r < m; ++r) {
      for (int c = 0; c < n; ++c) dst[c * m + r] = src[r * n + c];
    }
  }
  auto an = a.node();
  return finish(out, {an}, [an, b, m, n](TensorNode& o) {
    an->ensure_grad();
    for (int i = 0; i < b; ++i) {
      const double* gsrc = o.grad.data() + static_cast<int64_t>(i) * m * n;
      double* gdst = an->grad.data() + static_cast<int64_t>(i) * m * n;
      for (int r = 0; r < m; ++r) {
        for (int c = 0; c < n; ++c) gdst[r * n + c] += gsrc[c * m + r];
      }
    }
  });
}

Tensor detach(const Tensor& a) {
  return Tensor::from_data(a.shape(), a.data(), false);
}

// --- backward engine --------------------------------------------------------

void backward(const Tensor& loss) {
  if (loss.numel() != 1) throw Error(ErrorCode::shape, "backward: loss must be scalar");
  if (!std::isfinite(loss.value())) {
    throw Error(ErrorCode::numeric, std::string("backward: non-finite loss from op '") +
                                        loss.op_name() + "'");
  }

  // iterative post-order DFS over the recorded graph
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  struct Frame {
    TensorNode* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  TensorNode* root = loss.node().get();
  if (visited.insert(root).second) stack.push_back({root, 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorNode* p = f.node->parents[f.next_parent++].get();
      if (p->needs_grad && visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  for (TensorNode* n : order) n->ensure_grad();
  root->grad[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (!n->backprop) continue;
    n->backprop(*n);
    for (const auto& p : n->parents) {
      if (!p->needs_grad) continue;
      for (double g : p->grad) {
        if (!std::isfinite(g)) {
          throw Error(ErrorCode::numeric,
                      std::string("backward: non-finite gradient below op '") + n->op + "'");
        }
      }
    }
  }
}

void zero_grad(const std::vector<Tensor>& params) {
  for (const Tensor& p : params) {
    const_cast<Tensor&>(p).zero_grad();
  }
}

double clip_global_norm(const std::vector<Tensor>& params, double max_norm) {
  if (max_norm <= 0.0) throw Error(ErrorCode::invalid_value, "clip_global_norm: max_norm must be > 0");
  double sq = 0.0;
  for (const Tensor& p : params) {
    for (double g : p.node()->grad) sq += g * g;
  }
  double norm = std::sqrt(sq);
  if (norm <= max_norm) return 1.0;
  double factor = max_norm / norm;
  for (const Tensor& p : params) {
    for (double& g : p.node()->grad) g *= factor;
  }
  return factor;
}

void adam_step(std::vector<Tensor>& params, AdamState& state, double lr) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(static_cast<size_t>(params[i].numel()), 0.0);
      state.v[i].assign(static_cast<size_t>(params[i].numel()), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw Error(ErrorCode::usage, "adam_step: state does not match parameter list");
  }
  state.t += 1;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (p.node()->grad.empty()) {
      throw Error(ErrorCode::usage, "adam_step: parameter has no gradient populated");
    }
    auto& m = state.m[i];
    auto& v = state.v[i];
    auto& g = p.node()->grad;
    auto& x = p.mutable_data();
    for (size_t j = 0; j < x.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      double mhat = m[j] / bc1;
      double vhat = v[j] / bc2;
      x[j] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

double finite_difference_check(const std::function<Tensor()>& build, std::vector<Tensor> params,
                               double eps) {
  if (eps <= 0.0 || eps > 1e-2) {
    throw Error(ErrorCode::invalid_value, "finite_difference_check: eps must be in (0, 1e-2]");
  }
  zero_grad(params);
  Tensor loss = build();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const Tensor& p : params) analytic.push_back(p.grad());

  double worst = 0.0;
  NoGradScope ng;
  for (size_t i = 0; i < params.size(); ++i) {
    auto& x = params[i].mutable_data();
    for (size_t j = 0; j < x.size(); ++j) {
      double saved = x[j];
      x[j] = saved + eps;
      double fp = build().value();
      x[j] = saved - eps;
      double fm = build().value();
      x[j] = saved;
      double numeric = (fp - fm) / (2.0 * eps);
      double a = analytic[i][j];
      double err = std::fabs(a - numeric) / std::max(1.0, std::fabs(a));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

uint64_t param_checksum(const std::vector<Tensor>& params) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const Tensor& p : params) {
    h = fnv1a(p.data().data(), p.data().size() * sizeof(double), h);
  }
  return h;
}

}  // namespace sprig
