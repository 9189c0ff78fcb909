#pragma once

#include <string>
#include <vector>

#include "common.hpp"

namespace sprig {

// Finite MDP with row-stochastic transitions. Value tables are indexed (s,a).
struct TabularMdp {
  int n_states = 0;
  int n_actions = 0;
  std::vector<double> transition;  // [s][a][s'], row-major
  std::vector<double> reward;      // [s][a]
  double gamma = 0.0;
  double r_max = 1.0;

  double p(int s, int a, int s2) const {
    return transition[(static_cast<size_t>(s) * n_actions + a) * n_states + s2];
  }
  double r(int s, int a) const { return reward[static_cast<size_t>(s) * n_actions + a]; }

  // Throws on violated invariants (rows not summing to one, reward bound,
  // discount out of range).
  void validate() const;
};

// The augmented game: leader points are columns of the cost table, follower
// points are deterministic state->action maps.
struct TabularGameMdp {
  TabularMdp base;
  int n_theta = 0;
  std::vector<std::vector<int>> phi_grid;  // each entry: state -> action
  std::vector<double> cost;                // [s][theta], values in [0,1]
  double lambda_cost = 0.0;
  bool cooperative = false;  // replaces the inner min with a max

  double c(int s, int t) const { return cost[static_cast<size_t>(s) * n_theta + t]; }
  void validate() const;
};

struct ValueTable {
  int n_states = 0;
  int n_actions = 0;
  std::vector<double> values;  // [s][a]

  static ValueTable zeros(int n_states, int n_actions);
  static ValueTable constant(int n_states, int n_actions, double v);
  double& at(int s, int a) { return values[static_cast<size_t>(s) * n_actions + a]; }
  double at(int s, int a) const { return values[static_cast<size_t>(s) * n_actions + a]; }
};

double sup_distance(const ValueTable& a, const ValueTable& b);

// Standard Bellman optimality operator:
//   out(s,a) = R(s,a) + gamma * sum_s' P(s'|s,a) max_a' f(s',a')
ValueTable bellman_apply(const ValueTable& f, const TabularMdp& mdp);

struct StackelbergResult {
  ValueTable values;
  std::vector<int> argmax_theta;  // [s][a] selected leader index
  std::vector<int> argmin_phi;    // [s][a] selected follower index
};

// Stackelberg-Bellman operator:
//   out(s,a) = max_t min_p [ R(s,a) - lambda*C_t(s)
//                            + gamma * sum_s' P(s'|s,a) f(s', p(s')) ]
// Ties break toward the lowest grid index. `cooperative` on the instance
// replaces min_p with max_p.
StackelbergResult stackelberg_bellman_apply(const ValueTable& f, const TabularGameMdp& g);

struct ValueIterationResult {
  ValueTable fixed_point;
  int iterations = 0;
  std::vector<double> residuals;  // sup-norm residual per iteration
};

ValueIterationResult value_iteration(const TabularGameMdp& g, double tol, int max_iters);
ValueIterationResult value_iteration(const TabularGameMdp& g, double tol, int max_iters,
                                     const ValueTable& start);

// ||T_S f1 - T_S f2||_inf / ||f1 - f2||_inf
double contraction_ratio(const TabularGameMdp& g, const ValueTable& f1, const ValueTable& f2);

struct Equilibrium {
  std::vector<int> theta_star;     // [s][a]
  std::vector<int> phi_star;       // [s][a]
  std::vector<int> greedy_policy;  // [s]
};

// Requires f_star to be a fixed point: residual must stay within 10*tol.
Equilibrium extract_equilibrium(const TabularGameMdp& g, const ValueTable& f_star, double tol);

// Enumerates every deterministic state->action map (n_actions^n_states of
// them), lowest-index-first in the last state.
std::vector<std::vector<int>> enumerate_policies(int n_states, int n_actions);

// Flat key/value instance file; see README for the schema.
TabularGameMdp load_game_instance(const std::string& path);
void save_game_instance(const TabularGameMdp& g, const std::string& path);

// Randomized desk-scale instance for property suites.
TabularGameMdp random_game_instance(Rng& rng, int max_states = 5, int max_actions = 3,
                                    int max_theta = 4, double gamma = 0.9,
                                    bool full_phi_enumeration = true);
ValueTable random_value_table(Rng& rng, int n_states, int n_actions, double amplitude = 10.0);

}  // namespace sprig
