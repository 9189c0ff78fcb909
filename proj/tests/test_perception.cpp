#include <cmath>
#include <map>

#include "core/perception.hpp"
#include "core/tensor.hpp"
#include "doctest.h"

using namespace sprig;

namespace {

// Straight-line reimplementation of the full forward pass for batch size 1,
// plain loops over named parameters. Mirrors the published layer recipe:
// three conv stages (16/32/32, kernels 5/3/3, stride 2), single-head
// attention after each, tanh feature head.
std::vector<double> forward_oracle(const AttentionStack& stack, const std::vector<double>& obs,
                                   int in_c, int in_h, int in_w) {
  std::map<std::string, std::pair<std::vector<int>, std::vector<double>>> params;
  for (const auto& [name, t] : stack.named_params()) {
    params[name] = {t.shape(), t.data()};
  }
  struct Spec {
    int oc, k, stride, pad;
  };
  const Spec specs[3] = {{16, 5, 2, 2}, {32, 3, 2, 1}, {32, 3, 2, 1}};

  std::vector<double> cur = obs;
  int c = in_c, h = in_h, w = in_w;
  for (int layer = 0; layer < 3; ++layer) {
    const Spec& sp = specs[layer];
    std::string idx = std::to_string(layer);
    const auto& cw = params.at("conv" + idx + ".w").second;
    const auto& cb = params.at("conv" + idx + ".b").second;
    int oh = (h + 2 * sp.pad - sp.k) / sp.stride + 1;
    int ow = (w + 2 * sp.pad - sp.k) / sp.stride + 1;
    std::vector<double> conv(static_cast<size_t>(sp.oc) * oh * ow, 0.0);
    for (int o = 0; o < sp.oc; ++o) {
      for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j) {
          double acc = cb[o];
          for (int ci = 0; ci < c; ++ci) {
            for (int ki = 0; ki < sp.k; ++ki) {
              for (int kj = 0; kj < sp.k; ++kj) {
                int ii = i * sp.stride - sp.pad + ki;
                int jj = j * sp.stride - sp.pad + kj;
                if (ii < 0 || ii >= h || jj < 0 || jj >= w) continue;
                acc += cw[((static_cast<size_t>(o) * c + ci) * sp.k + ki) * sp.k + kj] *
                       cur[(static_cast<size_t>(ci) * h + ii) * w + jj];
              }
            }
          }
          conv[(static_cast<size_t>(o) * oh + i) * ow + j] = std::max(0.0, acc);
        }
      }
    }
    c = sp.oc;
    h = oh;
    w = ow;

    // attention over P = h*w tokens of width c
    int p = h * w;
    const auto& wq = params.at("attn" + idx + ".q").second;
    const auto& bq = params.at("attn" + idx + ".qb").second;
    const auto& wk = params.at("attn" + idx + ".k").second;
    const auto& bk = params.at("attn" + idx + ".kb").second;
    const auto& wv = params.at("attn" + idx + ".v").second;
    const auto& bv = params.at("attn" + idx + ".vb").second;
    int dk = static_cast<int>(params.at("attn" + idx + ".qb").first[0]);

    auto token = [&](int pos, int ch) { return conv[static_cast<size_t>(ch) * p + pos]; };
    std::vector<double> q(static_cast<size_t>(p) * dk, 0.0), kk(static_cast<size_t>(p) * dk, 0.0),
        v(static_cast<size_t>(p) * c, 0.0);
    for (int pos = 0; pos < p; ++pos) {
      for (int d = 0; d < dk; ++d) {
        double aq = bq[d], ak = bk[d];
        for (int ch = 0; ch < c; ++ch) {
          aq += token(pos, ch) * wq[static_cast<size_t>(ch) * dk + d];
          ak += token(pos, ch) * wk[static_cast<size_t>(ch) * dk + d];
        }
        q[static_cast<size_t>(pos) * dk + d] = aq;
        kk[static_cast<size_t>(pos) * dk + d] = ak;
      }
      for (int d = 0; d < c; ++d) {
        double av = bv[d];
        for (int ch = 0; ch < c; ++ch) {
          av += token(pos, ch) * wv[static_cast<size_t>(ch) * c + d];
        }
        v[static_cast<size_t>(pos) * c + d] = av;
      }
    }
    std::vector<double> mixed(static_cast<size_t>(p) * c, 0.0);
    for (int pos = 0; pos < p; ++pos) {
      std::vector<double> row(static_cast<size_t>(p), 0.0);
      double mx = -1e300;
      for (int pos2 = 0; pos2 < p; ++pos2) {
        double score = 0.0;
        for (int d = 0; d < dk; ++d) {
          score += q[static_cast<size_t>(pos) * dk + d] * kk[static_cast<size_t>(pos2) * dk + d];
        }
        row[pos2] = score / std::sqrt(static_cast<double>(dk));
        mx = std::max(mx, row[pos2]);
      }
      double z = 0.0;
      for (int pos2 = 0; pos2 < p; ++pos2) {
        row[pos2] = std::exp(row[pos2] - mx);
        z += row[pos2];
      }
      for (int pos2 = 0; pos2 < p; ++pos2) row[pos2] /= z;
      for (int d = 0; d < c; ++d) {
        double acc = token(pos, d);
        for (int pos2 = 0; pos2 < p; ++pos2) {
          acc += row[pos2] * v[static_cast<size_t>(pos2) * c + d];
        }
        mixed[static_cast<size_t>(pos) * c + d] = acc;
      }
    }
    // back to channel-major layout
    cur.assign(static_cast<size_t>(c) * p, 0.0);
    for (int pos = 0; pos < p; ++pos) {
      for (int ch = 0; ch < c; ++ch) {
        cur[static_cast<size_t>(ch) * p + pos] = mixed[static_cast<size_t>(pos) * c + ch];
      }
    }
  }

  const auto& fw = params.at("feat.w").second;
  const auto& fb = params.at("feat.b").second;
  int flat = c * h * w;
  int fd = static_cast<int>(params.at("feat.b").first[0]);
  std::vector<double> features(static_cast<size_t>(fd), 0.0);
  for (int j = 0; j < fd; ++j) {
    double acc = fb[j];
    for (int i = 0; i < flat; ++i) acc += cur[i] * fw[static_cast<size_t>(i) * fd + j];
    features[j] = std::tanh(acc);
  }
  return features;
}

Tensor random_obs(Rng& rng, int batch, int c, int h, int w) {
  std::vector<double> data(static_cast<size_t>(batch) * c * h * w);
  for (double& x : data) x = rng.next_double();
  return Tensor::from_data({batch, c, h, w}, std::move(data));
}

}  // namespace

TEST_SUITE_BEGIN("perception");

TEST_CASE("zero observations give finite features and uniform attention under zero scores") {
  Rng rng(17);
  AttentionStack stack(4, 12, 12, rng);
  stack.zero_attention_scores();
  Tensor obs = Tensor::zeros({2, 4, 12, 12});
  auto fwd = stack.forward(obs);
  for (double f : fwd.features.data()) CHECK(std::isfinite(f));
  for (const Tensor& a : fwd.attention) {
    int p = a.shape()[1];
    double expect = 1.0 / static_cast<double>(p);
    for (double v : a.data()) CHECK(v == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("attention rows are probability distributions") {
  Rng rng(19);
  AttentionStack stack(4, 12, 12, rng);
  auto fwd = stack.forward(random_obs(rng, 3, 4, 12, 12));
  CHECK(fwd.attention.size() == 3);  // one block per conv stage
  for (const Tensor& a : fwd.attention) {
    int b = a.shape()[0], p = a.shape()[1];
    for (int bi = 0; bi < b; ++bi) {
      for (int r = 0; r < p; ++r) {
        double row = 0.0;
        for (int cc = 0; cc < p; ++cc) {
          double v = a.item((static_cast<int64_t>(bi) * p + r) * p + cc);
          CHECK(v >= 0.0);
          CHECK(v <= 1.0);
          row += v;
        }
        CHECK(row == doctest::Approx(1.0).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("duplicated observations produce identical feature rows") {
  Rng rng(23);
  AttentionStack stack(4, 8, 8, rng, 32);
  std::vector<double> one(4 * 8 * 8);
  for (double& x : one) x = rng.next_double();
  std::vector<double> two = one;
  two.insert(two.end(), one.begin(), one.end());
  auto fwd = stack.forward(Tensor::from_data({2, 4, 8, 8}, two));
  int fd = stack.feature_dim();
  for (int j = 0; j < fd; ++j) {
    CHECK(fwd.features.item(j) == fwd.features.item(fd + j));
  }
}

TEST_CASE("repeated forward passes agree bitwise") {
  Rng rng(29);
  AttentionStack stack(4, 10, 10, rng, 64);
  Tensor obs = random_obs(rng, 2, 4, 10, 10);
  auto a = stack.forward(obs);
  auto b = stack.forward(obs);
  CHECK(a.features.data() == b.features.data());
}

TEST_CASE("single observation matches the straight-line forward oracle") {
  Rng rng(31);
  AttentionStack stack(2, 6, 6, rng, 24);
  std::vector<double> obs(2 * 6 * 6);
  for (double& x : obs) x = rng.next_double();
  auto fwd = stack.forward(Tensor::from_data({1, 2, 6, 6}, obs));
  std::vector<double> want = forward_oracle(stack, obs, 2, 6, 6);
  REQUIRE(static_cast<int>(want.size()) == stack.feature_dim());
  for (int j = 0; j < stack.feature_dim(); ++j) {
    CHECK(fwd.features.item(j) == doctest::Approx(want[j]).epsilon(1e-12));
  }
}

TEST_CASE("wrong observation rank or shape is rejected") {
  Rng rng(37);
  AttentionStack stack(4, 12, 12, rng);
  CHECK_THROWS_AS(stack.forward(Tensor::zeros({4, 12, 12})), Error);
  CHECK_THROWS_AS(stack.forward(Tensor::zeros({1, 4, 10, 12})), Error);
}

TEST_CASE("perception cost formula") {
  SUBCASE("all zeros give zero cost") {
    std::vector<Tensor> attn = {Tensor::zeros({1, 3, 3}), Tensor::zeros({1, 2, 2})};
    CHECK(perception_cost(attn, 0.5).raw_cost == doctest::Approx(0.0));
  }
  SUBCASE("all ones give the upper bound 1") {
    std::vector<Tensor> attn = {Tensor::full({1, 3, 3}, 1.0), Tensor::full({1, 2, 2}, 1.0)};
    PerceptionCost c = perception_cost(attn, 2.0);
    CHECK(c.raw_cost == doctest::Approx(1.0));
    CHECK(c.weighted_cost == doctest::Approx(2.0));
  }
  SUBCASE("uniform n x n attention costs 1/n") {
    const int n = 5;
    std::vector<Tensor> attn = {Tensor::full({1, n, n}, 1.0 / n), Tensor::full({1, n, n}, 1.0 / n)};
    CHECK(perception_cost(attn, 1.0).raw_cost == doctest::Approx(1.0 / n).epsilon(1e-12));
  }
  SUBCASE("empty record is a usage error") {
    std::vector<Tensor> attn;
    CHECK_THROWS_AS(perception_cost(attn, 1.0), Error);
  }
}

TEST_CASE("raw cost stays inside [0, 1] for random parameters and inputs") {
  Rng rng(41);
  for (int trial = 0; trial < 30; ++trial) {
    AttentionStack stack(4, 8, 8, rng, 16);
    auto fwd = stack.forward(random_obs(rng, 2, 4, 8, 8));
    double raw = perception_cost(fwd.attention, 1e-4).raw_cost;
    CHECK(raw >= 0.0);
    CHECK(raw <= 1.0);
  }
}

TEST_CASE("leader utility arithmetic") {
  SUBCASE("alpha 1 ignores the policy term") {
    CHECK(leader_utility(123.0, 0.5, 2.0, 1.0) == doctest::Approx(-1.0));
  }
  SUBCASE("alpha 0 returns the policy term") {
    CHECK(leader_utility(0.75, 0.9, 2.0, 0.0) == doctest::Approx(0.75));
  }
  SUBCASE("published cooperation weight") {
    // alpha 0.7, weighted cost 0.5, u_policy 1.0 -> -0.05
    CHECK(leader_utility(1.0, 5000.0, 1e-4, 0.7) == doctest::Approx(-0.05).epsilon(1e-12));
  }
  SUBCASE("swapped weighting") {
    // alpha u_policy - (1 - alpha) weighted cost
    CHECK(leader_utility(1.0, 5000.0, 1e-4, 0.7, true) ==
          doctest::Approx(0.7 - 0.3 * 0.5).epsilon(1e-12));
  }
  SUBCASE("alpha outside [0,1] is a configuration error") {
    CHECK_THROWS_AS(leader_utility(1.0, 0.5, 1.0, 1.5), Error);
  }
}

TEST_CASE("leader utility is strictly decreasing in raw cost") {
  for (double alpha : {0.3, 0.7, 1.0}) {
    double prev = leader_utility(0.4, 0.0, 0.5, alpha);
    for (double raw : {0.2, 0.5, 0.9}) {
      double u = leader_utility(0.4, raw, 0.5, alpha);
      CHECK(u < prev);
      prev = u;
    }
  }
}

TEST_CASE("leader utility graph passes the gradient check") {
  Rng rng(43);
  AttentionStack stack(2, 6, 6, rng, 8);
  Tensor obs = random_obs(rng, 2, 2, 6, 6);
  Tensor adv = Tensor::from_data({2}, {0.8, -0.8});
  Tensor fake_log_probs_weight = Tensor::from_data({8}, std::vector<double>(8, 0.2));
  auto build = [&] {
    auto fwd = stack.forward(obs);
    Tensor raw = attention_cost(fwd.attention);
    // stand-in policy score: weighted feature sum per row
    Tensor scores = matmul(fwd.features, reshape(fake_log_probs_weight, {8, 1}));
    Tensor u_policy = mean(mul(reshape(scores, {2}), adv));
    return leader_utility(u_policy, raw, 0.3, 0.7);
  };
  double err = finite_difference_check(build, stack.params(), 1e-5);
  CHECK(err < 1e-3);
}

TEST_CASE("conv-only torso skips attention and reports no maps") {
  Rng rng(47);
  AttentionStack stack(4, 12, 12, rng, 128, /*use_attention=*/false);
  auto fwd = stack.forward(random_obs(rng, 2, 4, 12, 12));
  CHECK(fwd.attention.empty());
  CHECK(fwd.features.shape() == std::vector<int>{2, 128});
}

TEST_SUITE_END();
