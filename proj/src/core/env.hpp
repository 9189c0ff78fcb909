#pragma once

#include <deque>
#include <memory>
#include <string>
#include <vector>

#include "common.hpp"
#include "tabular.hpp"

namespace sprig {

constexpr int kFrameStack = 4;

// Pixel environment with a 4-frame observation stack. Observations are flat
// (stack, H, W) buffers with values in [0, 1]; reset repeats the first frame
// across the stack.
class Environment {
 public:
  virtual ~Environment() = default;
  virtual int n_actions() const = 0;
  virtual int height() const = 0;
  virtual int width() const = 0;
  virtual int max_episode_length() const = 0;
  int obs_size() const { return kFrameStack * height() * width(); }

  virtual void reset(uint64_t seed, std::vector<double>& obs) = 0;
  virtual void step(int action, std::vector<double>& obs, double& reward, bool& done) = 0;
};

struct BeamCatchConfig {
  int height = 12;
  int width = 12;
  int spawn_period = 3;
  int max_objects = 4;
  int max_episode_length = 10000;
};

// Falling-object catching task. One object spawns every spawn_period steps
// at a uniform random column and descends one row per step; catching it on
// the bottom row pays +1, missing it -1. Actions: 0 left, 1 stay, 2 right.
class BeamCatchEnv : public Environment {
 public:
  explicit BeamCatchEnv(const BeamCatchConfig& cfg);

  int n_actions() const override { return 3; }
  int height() const override { return cfg_.height; }
  int width() const override { return cfg_.width; }
  int max_episode_length() const override { return cfg_.max_episode_length; }

  void reset(uint64_t seed, std::vector<double>& obs) override;
  void step(int action, std::vector<double>& obs, double& reward, bool& done) override;

  const BeamCatchConfig& config() const { return cfg_; }

 private:
  struct Obj {
    int row;
    int col;
  };
  BeamCatchConfig cfg_;
  std::unique_ptr<Rng> rng_;
  int agent_col_ = 0;
  int steps_ = 0;
  bool terminal_ = true;
  std::vector<Obj> objects_;
  std::deque<std::vector<double>> frames_;

  void render(std::vector<double>& frame) const;
  void emit(std::vector<double>& obs) const;
};

// One-row corridor: reach the rightmost cell. Reward 1 on the step taken at
// the goal cell, after which the episode ends. Actions: 0 left, 1 right.
class ChainEnv : public Environment {
 public:
  ChainEnv(int n_cells, int max_episode_length);

  int n_actions() const override { return 2; }
  int height() const override { return 1; }
  int width() const override { return n_cells_; }
  int max_episode_length() const override { return max_len_; }

  void reset(uint64_t seed, std::vector<double>& obs) override;
  void step(int action, std::vector<double>& obs, double& reward, bool& done) override;

 private:
  int n_cells_;
  int max_len_;
  int pos_ = 0;
  int steps_ = 0;
  bool terminal_ = true;
  std::deque<std::vector<double>> frames_;

  void emit(std::vector<double>& obs);
};

std::unique_ptr<Environment> make_environment(const std::string& id, int height, int width,
                                              int spawn_period, int max_objects,
                                              int max_episode_length);

// Maximum achievable undiscounted beam-catch return over `horizon` steps for
// one seed, by dynamic programming over (step, agent column) against the
// seed's deterministic spawn schedule.
double optimal_return(const BeamCatchConfig& cfg, uint64_t seed, int horizon);

// Deterministic left/right corridor as a TabularMdp. States 0..n_cells-1
// form the chain (goal = n_cells-1, paying 1 for any action taken there);
// state n_cells is the absorbing zero-reward terminal. Optimal values on the
// chain follow V*(s) = gamma^(goal distance).
TabularMdp chain_mdp(int n_cells, double gamma);

}  // namespace sprig
