#include "verify.hpp"

#include <cmath>
#include <functional>
#include <sstream>
#include <vector>

#include "common.hpp"
#include "gae.hpp"
#include "perception.hpp"
#include "policy.hpp"
#include "tabular.hpp"
#include "tensor.hpp"

namespace sprig {

namespace {

class Reporter {
 public:
  void check(const std::string& name, bool ok, const std::string& detail) {
    out_ << (ok ? "PASS" : "FAIL") << ' ' << name;
    if (!detail.empty()) out_ << ": " << detail;
    out_ << '\n';
    passed_ = passed_ && ok;
  }
  bool passed() const { return passed_; }
  std::string text() const { return out_.str(); }

 private:
  std::ostringstream out_;
  bool passed_ = true;
};

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

// --- tabular properties -----------------------------------------------------

void verify_tabular(Reporter& rep, uint64_t seed) {
  Rng rng(split_seed(seed, 100));
  const int n_instances = 50;
  const double gammas[] = {0.5, 0.9, 0.99};

  double worst_ratio_rel = 0.0;  // max over trials of ratio/gamma
  double worst_fp_gap = 0.0;     // max of start-independence gap / bound
  bool residual_decay_ok = true;
  double worst_reduction_gap = 0.0;
  const double tol = 1e-8;

  for (int i = 0; i < n_instances; ++i) {
    double gamma = gammas[i % 3];
    // keep slow-discount instances off the exhaustive phi grid so the
    // suite stays inside its runtime bound
    bool full_phi = i % 2 == 0 && gamma < 0.95;
    TabularGameMdp g = random_game_instance(rng, 5, 3, 4, gamma, full_phi);

    for (int trial = 0; trial < 100; ++trial) {
      ValueTable f1 = random_value_table(rng, g.base.n_states, g.base.n_actions);
      ValueTable f2 = random_value_table(rng, g.base.n_states, g.base.n_actions);
      if (sup_distance(f1, f2) == 0.0) continue;
      double ratio = contraction_ratio(g, f1, f2);
      worst_ratio_rel = std::max(worst_ratio_rel, ratio / gamma);
    }

    ValueIterationResult a = value_iteration(g, tol, 100000);
    ValueIterationResult b = value_iteration(
        g, tol, 100000, ValueTable::constant(g.base.n_states, g.base.n_actions, 50.0));
    double gap = sup_distance(a.fixed_point, b.fixed_point);
    double bound = 2.0 * tol / (1.0 - gamma);
    worst_fp_gap = std::max(worst_fp_gap, gap / bound);

    for (size_t n = 1; n < a.residuals.size(); ++n) {
      if (a.residuals[n] > gamma * a.residuals[n - 1] + tol) residual_decay_ok = false;
    }

    // reduction: lambda = 0, phi pinned to the greedy map of a random table
    ValueTable f = random_value_table(rng, g.base.n_states, g.base.n_actions);
    std::vector<int> greedy(g.base.n_states);
    for (int s = 0; s < g.base.n_states; ++s) {
      int best = 0;
      for (int aa = 1; aa < g.base.n_actions; ++aa) {
        if (f.at(s, aa) > f.at(s, best)) best = aa;
      }
      greedy[s] = best;
    }
    TabularGameMdp reduced = g;
    reduced.lambda_cost = 0.0;
    reduced.phi_grid = {greedy};
    ValueTable via_game = stackelberg_bellman_apply(f, reduced).values;
    ValueTable via_mdp = bellman_apply(f, g.base);
    worst_reduction_gap = std::max(worst_reduction_gap, sup_distance(via_game, via_mdp));
  }

  rep.check("tabular.contraction", worst_ratio_rel <= 1.0 + 1e-12,
            "max ratio/gamma = " + fmt(worst_ratio_rel) + " over " +
                std::to_string(n_instances) + " instances x 100 pairs");
  rep.check("tabular.fixed_point_uniqueness", worst_fp_gap <= 1.0,
            "worst gap / (2 tol/(1-gamma)) = " + fmt(worst_fp_gap));
  rep.check("tabular.residual_decay", residual_decay_ok,
            "residual[n+1] <= gamma residual[n] + tol everywhere");
  rep.check("tabular.reduction_to_bellman", worst_reduction_gap <= 1e-12,
            "max |T_S f - T f| = " + fmt(worst_reduction_gap));
}

// --- gradient properties ------------------------------------------------

struct PrimitiveCase {
  std::string name;
  std::function<double(Rng&)> run;  // returns fd error
};

double fd_error_of(const std::function<Tensor()>& build, std::vector<Tensor> params) {
  return finite_difference_check(build, std::move(params), 1e-5);
}

Tensor random_tensor(Rng& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  std::vector<double> data(static_cast<size_t>(n));
  for (double& x : data) x = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(data), true);
}

// keeps relu/clip/min inputs away from their kinks
Tensor random_tensor_away_from(Rng& rng, std::vector<int> shape, double margin) {
  Tensor t = random_tensor(rng, std::move(shape), -1.0, 1.0);
  for (double& x : t.mutable_data()) {
    if (std::fabs(x) < margin) x = x < 0 ? x - margin : x + margin;
  }
  return t;
}

void verify_gradients(Reporter& rep, uint64_t seed) {
  Rng rng(split_seed(seed, 200));

  std::vector<PrimitiveCase> cases;
  auto shape2 = [](Rng& r) {
    return std::vector<int>{2 + static_cast<int>(r.next_below(3)),
                            2 + static_cast<int>(r.next_below(4))};
  };

  cases.push_back({"add", [&](Rng& r) {
    Tensor a = random_tensor(r, shape2(r));
    Tensor b = random_tensor(r, a.shape());
    return fd_error_of([&] { return mean(add(a, b)); }, {a, b});
  }});
  cases.push_back({"sub", [&](Rng& r) {
    Tensor a = random_tensor(r, shape2(r));
    Tensor b = random_tensor(r, a.shape());
    return fd_error_of([&] { return mean(sub(a, b)); }, {a, b});
  }});
  cases.push_back({"mul", [&](Rng& r) {
    Tensor a = random_tensor(r, shape2(r));
    Tensor b = random_tensor(r, a.shape());
    return fd_error_of([&] { return mean(mul(a, b)); }, {a, b});
  }});
  cases.push_back({"scalar_broadcast", [&](Rng& r) {
    Tensor a = random_tensor(r, shape2(r));
    Tensor s = random_tensor(r, {1});
    return fd_error_of([&] { return mean(add(mul(a, s), s)); }, {a, s});
  }});
  cases.push_back({"matmul", [&](Rng& r) {
    int m = 2 + static_cast<int>(r.next_below(3));
    int k = 2 + static_cast<int>(r.next_below(3));
    int n = 2 + static_cast<int>(r.next_below(3));
    Tensor a = random_tensor(r, {m, k});
    Tensor b = random_tensor(r, {k, n});
    return fd_error_of([&] { return mean(matmul(a, b)); }, {a, b});
  }});
  cases.push_back({"bmm", [&](Rng& r) {
    Tensor a = random_tensor(r, {2, 3, 4});
    Tensor b = random_tensor(r, {2, 4, 3});
    Tensor c = random_tensor(r, {2, 3, 4});
    return fd_error_of([&] { return mean(add(bmm(a, b), bmm(a, c, true))); }, {a, b, c});
  }});
  cases.push_back({"conv2d", [&](Rng& r) {
    Tensor x = random_tensor(r, {2, 2, 5, 5});
    Tensor w = random_tensor(r, {3, 2, 3, 3});
    Tensor b = random_tensor(r, {3});
    return fd_error_of([&] { return mean(conv2d(x, w, b, 2, 1)); }, {x, w, b});
  }});
  cases.push_back({"relu", [&](Rng& r) {
    Tensor a = random_tensor_away_from(r, shape2(r), 0.05);
    return fd_error_of([&] { return mean(relu(a)); }, {a});
  }});
  cases.push_back({"tanh", [&](Rng& r) {
    Tensor a = random_tensor(r, shape2(r));
    return fd_error_of([&] { return mean(sprig::tanh(a)); }, {a});
  }});
  cases.push_back({"exp", [&](Rng& r) {
    Tensor a = random_tensor(r, shape2(r));
    return fd_error_of([&] { return mean(sprig::exp(a)); }, {a});
  }});
  cases.push_back({"softmax", [&](Rng& r) {
    Tensor a = random_tensor(r, shape2(r));
    Tensor w = random_tensor(r, a.shape());
    return fd_error_of([&] { return mean(mul(softmax(a), w)); }, {a});
  }});
  cases.push_back({"log_softmax", [&](Rng& r) {
    Tensor a = random_tensor(r, shape2(r));
    Tensor w = random_tensor(r, a.shape());
    return fd_error_of([&] { return mean(mul(log_softmax(a), w)); }, {a});
  }});
  cases.push_back({"sum", [&](Rng& r) {
    Tensor a = random_tensor(r, shape2(r));
    return fd_error_of([&] { return sum(a); }, {a});
  }});
  cases.push_back({"mean", [&](Rng& r) {
    Tensor a = random_tensor(r, shape2(r));
    return fd_error_of([&] { return mean(a); }, {a});
  }});
  cases.push_back({"clip", [&](Rng& r) {
    Tensor a = random_tensor_away_from(r, shape2(r), 0.05);
    return fd_error_of([&] { return mean(clip(a, -0.5, 0.5)); }, {a});
  }});
  cases.push_back({"minimum", [&](Rng& r) {
    Tensor a = random_tensor(r, shape2(r));
    Tensor b = random_tensor(r, a.shape());
    // keep the two branches separated so central differences stay smooth
    for (size_t i = 0; i < a.mutable_data().size(); ++i) {
      if (std::fabs(a.mutable_data()[i] - b.mutable_data()[i]) < 0.05) {
        b.mutable_data()[i] += 0.1;
      }
    }
    return fd_error_of([&] { return mean(minimum(a, b)); }, {a, b});
  }});
  cases.push_back({"gather", [&](Rng& r) {
    int rows = 3 + static_cast<int>(r.next_below(3));
    int cols = 2 + static_cast<int>(r.next_below(3));
    Tensor a = random_tensor(r, {rows, cols});
    std::vector<int> idx(rows);
    for (int& i : idx) i = static_cast<int>(r.next_below(static_cast<uint64_t>(cols)));
    return fd_error_of([&] { return mean(gather_rows(a, idx)); }, {a});
  }});
  cases.push_back({"add_bias", [&](Rng& r) {
    Tensor a = random_tensor(r, {3, 4});
    Tensor b = random_tensor(r, {4});
    return fd_error_of([&] { return mean(add_bias(a, b)); }, {a, b});
  }});
  cases.push_back({"reshape_transpose", [&](Rng& r) {
    Tensor a = random_tensor(r, {2, 3, 4});
    Tensor w = random_tensor(r, {2, 4, 3});
    return fd_error_of([&] { return mean(mul(transpose_last2(a), w)); }, {a});
  }});

  double worst_primitive = 0.0;
  std::string worst_name = "-";
  for (const PrimitiveCase& c : cases) {
    double case_worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      case_worst = std::max(case_worst, c.run(rng));
    }
    if (case_worst > worst_primitive) {
      worst_primitive = case_worst;
      worst_name = c.name;
    }
  }
  rep.check("gradients.primitives", worst_primitive < 1e-4,
            "max relative error " + fmt(worst_primitive) + " (worst: " + worst_name + "), " +
                std::to_string(cases.size()) + " primitives x 20 trials");

  // full leader-utility graph on a tiny stack
  {
    Rng init(split_seed(seed, 201));
    AttentionStack perception(2, 6, 6, init, 16);
    PolicyNet policy(16, 3, init, 8);
    Tensor obs = random_tensor(init, {2, 2, 6, 6}, 0.0, 1.0);
    obs.set_requires_grad(false);
    std::vector<int> actions = {1, 2};
    Tensor adv = Tensor::from_data({2}, {0.7, -0.3});
    auto build = [&] {
      auto fwd = perception.forward(obs);
      Tensor raw_cost = attention_cost(fwd.attention);
      Tensor logits = policy.logits_only(fwd.features);
      Tensor u_policy = mean(mul(gather_rows(log_softmax(logits), actions), adv));
      return neg(leader_utility(u_policy, raw_cost, 0.5, 0.7));
    };
    FreezeScope freeze_phi(policy.params());
    double err = finite_difference_check(build, perception.params(), 1e-5);
    rep.check("gradients.leader_utility_graph", err < 1e-3, "max relative error " + fmt(err));
  }

  // full follower-loss graph
  {
    Rng init(split_seed(seed, 202));
    PolicyNet policy(8, 3, init, 8);
    Tensor features = random_tensor(init, {4, 8});
    features.set_requires_grad(false);
    FollowerBatch batch;
    batch.features = features;
    batch.actions = {0, 2, 1, 1};
    batch.old_log_probs = Tensor::from_data({4}, {-1.1, -0.9, -1.0, -1.3});
    batch.advantages = Tensor::from_data({4}, {1.0, -1.0, 0.5, -0.5});
    batch.returns = Tensor::from_data({4}, {0.3, -0.1, 0.2, 0.0});
    batch.advantage_mean = 0.0;
    batch.advantage_std = 1.0;
    auto build = [&] {
      return follower_loss(batch, policy, 0.2, 0.5, 0.01, 0.25).loss;
    };
    double err = finite_difference_check(build, policy.params(), 1e-5);
    rep.check("gradients.follower_loss_graph", err < 1e-3, "max relative error " + fmt(err));
  }
}

// --- gae properties -----------------------------------------------------

// straight O(T^2) evaluation of the advantage sum with done masking
std::vector<double> gae_brute_force(const Trajectory& traj, double gamma, double lam) {
  int t_len = traj.length();
  std::vector<double> adv(t_len, 0.0);
  for (int t = 0; t < t_len; ++t) {
    double coeff = 1.0;
    for (int l = 0; t + l < t_len; ++l) {
      int u = t + l;
      double not_done = traj.dones[u] ? 0.0 : 1.0;
      double delta = traj.rewards[u] + gamma * not_done * traj.values[u + 1] - traj.values[u];
      adv[t] += coeff * delta;
      if (traj.dones[u]) break;
      coeff *= gamma * lam;
    }
  }
  return adv;
}

Trajectory random_trajectory(Rng& rng, int t_len, double done_prob = 0.25) {
  Trajectory traj;
  traj.obs_size = 0;
  for (int t = 0; t < t_len; ++t) {
    traj.actions.push_back(0);
    traj.rewards.push_back(rng.uniform(-1.0, 1.0));
    traj.values.push_back(rng.uniform(-1.0, 1.0));
    traj.log_probs.push_back(-1.0);
    traj.dones.push_back(rng.next_double() < done_prob ? 1 : 0);
  }
  traj.values.push_back(rng.uniform(-1.0, 1.0));
  return traj;
}

void verify_gae(Reporter& rep, uint64_t seed) {
  Rng rng(split_seed(seed, 300));
  int exact_matches = 0;
  const int trials = 100;
  double worst = 0.0;
  for (int i = 0; i < trials; ++i) {
    int t_len = 2 + static_cast<int>(rng.next_below(7));
    Trajectory traj = random_trajectory(rng, t_len);
    AdvantageBatch got = compute_gae(traj, 0.99, 0.95);
    std::vector<double> want = gae_brute_force(traj, 0.99, 0.95);
    double gap = 0.0;
    for (int t = 0; t < t_len; ++t) gap = std::max(gap, std::fabs(got.raw_advantages[t] - want[t]));
    worst = std::max(worst, gap);
    if (gap <= 1e-9) ++exact_matches;
  }
  rep.check("gae.brute_force_match", exact_matches == trials,
            std::to_string(exact_matches) + "/" + std::to_string(trials) +
                " matches, worst gap " + fmt(worst));

  // lambda = 1, no terminations: A_t + V_t telescopes to the bootstrapped
  // Monte-Carlo return
  double worst_tel = 0.0;
  for (int i = 0; i < 20; ++i) {
    int t_len = 3 + static_cast<int>(rng.next_below(6));
    Trajectory traj = random_trajectory(rng, t_len, 0.0);
    AdvantageBatch got = compute_gae(traj, 0.99, 1.0);
    for (int t = 0; t < t_len; ++t) {
      double mc = 0.0;
      double disc = 1.0;
      for (int u = t; u < t_len; ++u) {
        mc += disc * traj.rewards[u];
        disc *= 0.99;
      }
      mc += disc * traj.values[t_len];
      worst_tel = std::max(worst_tel,
                           std::fabs(got.raw_advantages[t] + traj.values[t] - mc));
    }
  }
  rep.check("gae.telescoping_identity", worst_tel < 1e-9, "worst gap " + fmt(worst_tel));

  // normalize: zero mean, unit population std, idempotent
  double worst_mean = 0.0, worst_std = 0.0, worst_idem = 0.0;
  for (int i = 0; i < 20; ++i) {
    Trajectory traj = random_trajectory(rng, 16);
    AdvantageBatch norm = normalize(compute_gae(traj, 0.99, 0.95));
    worst_mean = std::max(worst_mean, std::fabs(norm.norm_mean));
    worst_std = std::max(worst_std, std::fabs(norm.norm_std - 1.0));
    AdvantageBatch again = norm;
    again.raw_advantages = norm.advantages;
    again = normalize(again);
    for (size_t t = 0; t < again.advantages.size(); ++t) {
      worst_idem = std::max(worst_idem, std::fabs(again.advantages[t] - norm.advantages[t]));
    }
  }
  rep.check("gae.normalize_contract", worst_mean <= 1e-8 && worst_std <= 1e-6,
            "|mean| " + fmt(worst_mean) + ", |std-1| " + fmt(worst_std));
  rep.check("gae.normalize_idempotent", worst_idem < 1e-6, "worst drift " + fmt(worst_idem));
}

}  // namespace

VerifyReport run_verify_suite(const std::string& suite, uint64_t master_seed) {
  Reporter rep;
  bool any = false;
  if (suite == "tabular" || suite == "all") {
    verify_tabular(rep, master_seed);
    any = true;
  }
  if (suite == "gradients" || suite == "all") {
    verify_gradients(rep, master_seed);
    any = true;
  }
  if (suite == "gae" || suite == "all") {
    verify_gae(rep, master_seed);
    any = true;
  }
  if (!any) {
    throw Error(ErrorCode::config,
                "unknown verify suite '" + suite + "' (expected tabular, gradients, gae or all)");
  }
  VerifyReport out;
  out.passed = rep.passed();
  out.text = rep.text();
  return out;
}

}  // namespace sprig
