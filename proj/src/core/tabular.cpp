#include "tabular.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace sprig {

namespace {

void require_finite_table(const std::vector<double>& v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw Error(ErrorCode::invalid_value, std::string(what) + " contains a non-finite entry");
    }
  }
}

}  // namespace

void TabularMdp::validate() const {
  if (n_states < 1 || n_actions < 1) {
    throw Error(ErrorCode::config, "mdp: n_states and n_actions must be positive");
  }
  if (transition.size() != static_cast<size_t>(n_states) * n_actions * n_states) {
    throw Error(ErrorCode::shape, "mdp: transition table size mismatch");
  }
  if (reward.size() != static_cast<size_t>(n_states) * n_actions) {
    throw Error(ErrorCode::shape, "mdp: reward table size mismatch");
  }
  if (!(gamma >= 0.0 && gamma < 1.0)) {
    throw Error(ErrorCode::config, "mdp: gamma must lie in [0, 1)");
  }
  if (!std::isfinite(r_max) || r_max < 0.0) {
    throw Error(ErrorCode::config, "mdp: r_max must be finite and nonnegative");
  }
  require_finite_table(transition, "transition");
  require_finite_table(reward, "reward");
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      double row = 0.0;
      for (int s2 = 0; s2 < n_states; ++s2) {
        double pv = p(s, a, s2);
        if (pv < 0.0 || pv > 1.0) {
          throw Error(ErrorCode::invalid_value, "mdp: transition entry outside [0, 1]");
        }
        row += pv;
      }
      if (std::fabs(row - 1.0) > 1e-12) {
        throw Error(ErrorCode::invalid_value, "mdp: transition row does not sum to 1");
      }
      if (std::fabs(r(s, a)) > r_max) {
        throw Error(ErrorCode::invalid_value, "mdp: reward exceeds declared r_max");
      }
    }
  }
}

void TabularGameMdp::validate() const {
  base.validate();
  if (n_theta < 1) throw Error(ErrorCode::config, "game: theta grid is empty");
  if (phi_grid.empty()) throw Error(ErrorCode::config, "game: phi grid is empty");
  if (cost.size() != static_cast<size_t>(base.n_states) * n_theta) {
    throw Error(ErrorCode::shape, "game: cost table size mismatch");
  }
  if (lambda_cost < 0.0) throw Error(ErrorCode::config, "game: lambda_cost must be nonnegative");
  for (double cv : cost) {
    if (!(cv >= 0.0 && cv <= 1.0)) {
      throw Error(ErrorCode::invalid_value, "game: cost entry outside [0, 1]");
    }
  }
  for (const auto& phi : phi_grid) {
    if (phi.size() != static_cast<size_t>(base.n_states)) {
      throw Error(ErrorCode::shape, "game: phi map length must equal n_states");
    }
    for (int a : phi) {
      if (a < 0 || a >= base.n_actions) {
        throw Error(ErrorCode::invalid_value, "game: phi map action out of range");
      }
    }
  }
}

ValueTable ValueTable::zeros(int n_states, int n_actions) {
  return constant(n_states, n_actions, 0.0);
}

ValueTable ValueTable::constant(int n_states, int n_actions, double v) {
  ValueTable t;
  t.n_states = n_states;
  t.n_actions = n_actions;
  t.values.assign(static_cast<size_t>(n_states) * n_actions, v);
  return t;
}

double sup_distance(const ValueTable& a, const ValueTable& b) {
  if (a.values.size() != b.values.size()) {
    throw Error(ErrorCode::shape, "sup_distance: table sizes differ");
  }
  double d = 0.0;
  for (size_t i = 0; i < a.values.size(); ++i) {
    d = std::max(d, std::fabs(a.values[i] - b.values[i]));
  }
  return d;
}

ValueTable bellman_apply(const ValueTable& f, const TabularMdp& mdp) {
  mdp.validate();
  if (f.n_states != mdp.n_states || f.n_actions != mdp.n_actions) {
    throw Error(ErrorCode::shape, "bellman_apply: value table does not match the mdp");
  }
  require_finite_table(f.values, "value table");

  // max_a' f(s',a') per successor state
  std::vector<double> best(mdp.n_states);
  for (int s2 = 0; s2 < mdp.n_states; ++s2) {
    double m = f.at(s2, 0);
    for (int a2 = 1; a2 < mdp.n_actions; ++a2) m = std::max(m, f.at(s2, a2));
    best[s2] = m;
  }

  ValueTable out = ValueTable::zeros(mdp.n_states, mdp.n_actions);
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      double ev = 0.0;
      for (int s2 = 0; s2 < mdp.n_states; ++s2) ev += mdp.p(s, a, s2) * best[s2];
      out.at(s, a) = mdp.r(s, a) + mdp.gamma * ev;
    }
  }
  return out;
}

StackelbergResult stackelberg_bellman_apply(const ValueTable& f, const TabularGameMdp& g) {
  g.validate();
  const TabularMdp& m = g.base;
  if (f.n_states != m.n_states || f.n_actions != m.n_actions) {
    throw Error(ErrorCode::shape, "stackelberg_bellman_apply: value table does not match the game");
  }
  require_finite_table(f.values, "value table");

  // continuation value per (s,a,phi): gamma * sum_s' P(s'|s,a) f(s', phi(s'))
  const int n_phi = static_cast<int>(g.phi_grid.size());
  StackelbergResult res;
  res.values = ValueTable::zeros(m.n_states, m.n_actions);
  res.argmax_theta.assign(static_cast<size_t>(m.n_states) * m.n_actions, 0);
  res.argmin_phi.assign(static_cast<size_t>(m.n_states) * m.n_actions, 0);

  for (int s = 0; s < m.n_states; ++s) {
    for (int a = 0; a < m.n_actions; ++a) {
      double best_outer = 0.0;
      int best_t = -1, best_p = -1;
      for (int t = 0; t < g.n_theta; ++t) {
        double inner = 0.0;
        int inner_p = -1;
        for (int p = 0; p < n_phi; ++p) {
          double cont = 0.0;
          const auto& phi = g.phi_grid[p];
          for (int s2 = 0; s2 < m.n_states; ++s2) {
            cont += m.p(s, a, s2) * f.at(s2, phi[s2]);
          }
          double v = m.r(s, a) - g.lambda_cost * g.c(s, t) + m.gamma * cont;
          bool better = g.cooperative ? (v > inner) : (v < inner);
          if (inner_p < 0 || better) {
            inner = v;
            inner_p = p;
          }
        }
        if (best_t < 0 || inner > best_outer) {
          best_outer = inner;
          best_t = t;
          best_p = inner_p;
        }
      }
      res.values.at(s, a) = best_outer;
      res.argmax_theta[static_cast<size_t>(s) * m.n_actions + a] = best_t;
      res.argmin_phi[static_cast<size_t>(s) * m.n_actions + a] = best_p;
    }
  }
  return res;
}

ValueIterationResult value_iteration(const TabularGameMdp& g, double tol, int max_iters) {
  return value_iteration(g, tol, max_iters, ValueTable::zeros(g.base.n_states, g.base.n_actions));
}

ValueIterationResult value_iteration(const TabularGameMdp& g, double tol, int max_iters,
                                     const ValueTable& start) {
  if (tol <= 0.0) throw Error(ErrorCode::config, "value_iteration: tol must be positive");
  if (max_iters < 1) throw Error(ErrorCode::config, "value_iteration: max_iters must be positive");
  ValueIterationResult out;
  ValueTable f = start;
  for (int it = 0; it < max_iters; ++it) {
    ValueTable next = stackelberg_bellman_apply(f, g).values;
    double res = sup_distance(next, f);
    out.residuals.push_back(res);
    f = std::move(next);
    if (res < tol) {
      out.fixed_point = std::move(f);
      out.iterations = it + 1;
      return out;
    }
  }
  std::ostringstream msg;
  msg << "value_iteration: no convergence after " << max_iters
      << " iterations (last residual " << out.residuals.back() << ")";
  throw Error(ErrorCode::non_convergence, msg.str());
}

double contraction_ratio(const TabularGameMdp& g, const ValueTable& f1, const ValueTable& f2) {
  double denom = sup_distance(f1, f2);
  if (denom == 0.0) {
    throw Error(ErrorCode::invalid_value, "contraction_ratio: f1 equals f2, ratio undefined");
  }
  double num = sup_distance(stackelberg_bellman_apply(f1, g).values,
                            stackelberg_bellman_apply(f2, g).values);
  return num / denom;
}

Equilibrium extract_equilibrium(const TabularGameMdp& g, const ValueTable& f_star, double tol) {
  StackelbergResult r = stackelberg_bellman_apply(f_star, g);
  double residual = sup_distance(r.values, f_star);
  if (residual > 10.0 * tol) {
    std::ostringstream msg;
    msg << "extract_equilibrium: table is not a fixed point (residual " << residual
        << " > 10*tol " << 10.0 * tol << ")";
    throw Error(ErrorCode::stale_input, msg.str());
  }
  Equilibrium eq;
  eq.theta_star = std::move(r.argmax_theta);
  eq.phi_star = std::move(r.argmin_phi);
  eq.greedy_policy.assign(g.base.n_states, 0);
  for (int s = 0; s < g.base.n_states; ++s) {
    int best = 0;
    for (int a = 1; a < g.base.n_actions; ++a) {
      if (f_star.at(s, a) > f_star.at(s, best)) best = a;
    }
    eq.greedy_policy[s] = best;
  }
  return eq;
}

std::vector<std::vector<int>> enumerate_policies(int n_states, int n_actions) {
  int64_t count = 1;
  for (int s = 0; s < n_states; ++s) {
    count *= n_actions;
    if (count > 1000000) {
      throw Error(ErrorCode::size, "enumerate_policies: too many deterministic policies");
    }
  }
  std::vector<std::vector<int>> all;
  all.reserve(static_cast<size_t>(count));
  std::vector<int> cur(n_states, 0);
  for (int64_t i = 0; i < count; ++i) {
    all.push_back(cur);
    for (int s = n_states - 1; s >= 0; --s) {
      if (++cur[s] < n_actions) break;
      cur[s] = 0;
    }
  }
  return all;
}

// --- instance file I/O --------------------------------------------------

namespace {

struct KvFile {
  std::vector<std::pair<std::string, std::string>> entries;

  const std::string* find(const std::string& key) const {
    for (const auto& [k, v] : entries) {
      if (k == key) return &v;
    }
    return nullptr;
  }
  const std::string& require(const std::string& key) const {
    const std::string* v = find(key);
    if (!v) throw Error(ErrorCode::format, "instance file: missing key '" + key + "'");
    return *v;
  }
};

KvFile parse_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::format, "cannot open instance file: " + path);
  KvFile kv;
  std::string line;
  while (std::getline(in, line)) {
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      size_t b = s.find_first_not_of(" \t\r");
      size_t e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (!key.empty()) kv.entries.emplace_back(key, val);
  }
  return kv;
}

std::vector<double> parse_doubles(const std::string& s, size_t expected, const std::string& key) {
  std::istringstream in(s);
  std::vector<double> out;
  double x;
  while (in >> x) out.push_back(x);
  if (out.size() != expected) {
    std::ostringstream msg;
    msg << "instance file: key '" << key << "' expects " << expected << " numbers, got "
        << out.size();
    throw Error(ErrorCode::format, msg.str());
  }
  return out;
}

int parse_int(const std::string& s, const std::string& key) {
  try {
    size_t pos = 0;
    int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::format, "instance file: key '" + key + "' is not an integer");
  }
}

double parse_double(const std::string& s, const std::string& key) {
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::format, "instance file: key '" + key + "' is not a number");
  }
}

}  // namespace

TabularGameMdp load_game_instance(const std::string& path) {
  KvFile kv = parse_kv_file(path);
  TabularGameMdp g;
  g.base.n_states = parse_int(kv.require("n_states"), "n_states");
  g.base.n_actions = parse_int(kv.require("n_actions"), "n_actions");
  g.base.gamma = parse_double(kv.require("gamma"), "gamma");
  g.lambda_cost = parse_double(kv.require("lambda_cost"), "lambda_cost");
  if (const std::string* rm = kv.find("r_max")) {
    g.base.r_max = parse_double(*rm, "r_max");
  }
  size_t sa = static_cast<size_t>(g.base.n_states) * g.base.n_actions;
  g.base.transition = parse_doubles(kv.require("transition"), sa * g.base.n_states, "transition");
  g.base.reward = parse_doubles(kv.require("reward"), sa, "reward");
  if (kv.find("r_max") == nullptr) {
    double m = 0.0;
    for (double r : g.base.reward) m = std::max(m, std::fabs(r));
    g.base.r_max = m;
  }
  g.n_theta = parse_int(kv.require("n_theta"), "n_theta");
  g.cost = parse_doubles(kv.require("cost"),
                         static_cast<size_t>(g.base.n_states) * std::max(g.n_theta, 0), "cost");
  if (const std::string* coop = kv.find("cooperative")) {
    if (*coop != "true" && *coop != "false") {
      throw Error(ErrorCode::format, "instance file: 'cooperative' must be true or false");
    }
    g.cooperative = (*coop == "true");
  }

  const std::string& phi = kv.require("phi_grid");
  if (phi == "all") {
    g.phi_grid = enumerate_policies(g.base.n_states, g.base.n_actions);
  } else {
    std::istringstream rows(phi);
    std::string row;
    while (std::getline(rows, row, ';')) {
      std::istringstream in(row);
      std::vector<int> map;
      int a;
      while (in >> a) map.push_back(a);
      if (!map.empty()) g.phi_grid.push_back(std::move(map));
    }
  }
  g.validate();
  return g;
}

void save_game_instance(const TabularGameMdp& g, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::format, "cannot write instance file: " + path);
  out.precision(17);
  auto dump = [&out](const char* key, const std::vector<double>& v) {
    out << key << " =";
    for (double x : v) out << ' ' << x;
    out << '\n';
  };
  out << "n_states = " << g.base.n_states << '\n';
  out << "n_actions = " << g.base.n_actions << '\n';
  out << "gamma = " << g.base.gamma << '\n';
  out << "lambda_cost = " << g.lambda_cost << '\n';
  out << "r_max = " << g.base.r_max << '\n';
  dump("transition", g.base.transition);
  dump("reward", g.base.reward);
  out << "n_theta = " << g.n_theta << '\n';
  dump("cost", g.cost);
  out << "cooperative = " << (g.cooperative ? "true" : "false") << '\n';
  out << "phi_grid =";
  for (size_t i = 0; i < g.phi_grid.size(); ++i) {
    if (i) out << " ;";
    for (int a : g.phi_grid[i]) out << ' ' << a;
  }
  out << '\n';
}

TabularGameMdp random_game_instance(Rng& rng, int max_states, int max_actions, int max_theta,
                                    double gamma, bool full_phi_enumeration) {
  TabularGameMdp g;
  g.base.n_states = 2 + static_cast<int>(rng.next_below(static_cast<uint64_t>(max_states - 1)));
  g.base.n_actions = 2 + static_cast<int>(rng.next_below(static_cast<uint64_t>(max_actions - 1)));
  g.base.gamma = gamma;
  g.base.r_max = 1.0;
  size_t sa = static_cast<size_t>(g.base.n_states) * g.base.n_actions;
  g.base.transition.resize(sa * g.base.n_states);
  g.base.reward.resize(sa);
  for (size_t i = 0; i < sa; ++i) {
    double row_sum = 0.0;
    std::vector<double> row(g.base.n_states);
    for (int s2 = 0; s2 < g.base.n_states; ++s2) {
      row[s2] = -std::log(1.0 - rng.next_double());
      row_sum += row[s2];
    }
    for (int s2 = 0; s2 < g.base.n_states; ++s2) {
      g.base.transition[i * g.base.n_states + s2] = row[s2] / row_sum;
    }
    // renormalize the tail entry so the row sums to 1 exactly enough
    double acc = 0.0;
    for (int s2 = 0; s2 < g.base.n_states - 1; ++s2) acc += g.base.transition[i * g.base.n_states + s2];
    g.base.transition[i * g.base.n_states + g.base.n_states - 1] = 1.0 - acc;
    g.base.reward[i] = rng.uniform(-1.0, 1.0);
  }
  g.n_theta = 1 + static_cast<int>(rng.next_below(static_cast<uint64_t>(max_theta)));
  g.cost.resize(static_cast<size_t>(g.base.n_states) * g.n_theta);
  for (double& c : g.cost) c = rng.next_double();
  g.lambda_cost = rng.next_double();
  if (full_phi_enumeration) {
    g.phi_grid = enumerate_policies(g.base.n_states, g.base.n_actions);
  } else {
    int n_phi = 1 + static_cast<int>(rng.next_below(6));
    for (int i = 0; i < n_phi; ++i) {
      std::vector<int> phi(g.base.n_states);
      for (int s = 0; s < g.base.n_states; ++s) {
        phi[s] = static_cast<int>(rng.next_below(static_cast<uint64_t>(g.base.n_actions)));
      }
      g.phi_grid.push_back(std::move(phi));
    }
  }
  g.validate();
  return g;
}

ValueTable random_value_table(Rng& rng, int n_states, int n_actions, double amplitude) {
  ValueTable f = ValueTable::zeros(n_states, n_actions);
  for (double& v : f.values) v = rng.uniform(-amplitude, amplitude);
  return f;
}

}  // namespace sprig
