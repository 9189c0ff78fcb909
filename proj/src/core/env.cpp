#include "env.hpp"

#include <algorithm>
#include <cmath>

namespace sprig {

namespace {

constexpr double kAgentPixel = 1.0;
constexpr double kObjectPixel = 0.7;

void stack_frames(const std::deque<std::vector<double>>& frames, std::vector<double>& obs) {
  size_t frame_size = frames.front().size();
  obs.resize(kFrameStack * frame_size);
  for (int i = 0; i < kFrameStack; ++i) {
    std::copy(frames[i].begin(), frames[i].end(), obs.begin() + i * frame_size);
  }
}

}  // namespace

BeamCatchEnv::BeamCatchEnv(const BeamCatchConfig& cfg) : cfg_(cfg) {
  if (cfg.height < 2 || cfg.width < 2) {
    throw Error(ErrorCode::config, "beam_catch: grid must be at least 2x2");
  }
  if (cfg.spawn_period < 1 || cfg.max_objects < 1 || cfg.max_episode_length < 1) {
    throw Error(ErrorCode::config, "beam_catch: bad spawn/limit configuration");
  }
}

void BeamCatchEnv::render(std::vector<double>& frame) const {
  frame.assign(static_cast<size_t>(cfg_.height) * cfg_.width, 0.0);
  for (const Obj& o : objects_) {
    frame[static_cast<size_t>(o.row) * cfg_.width + o.col] = kObjectPixel;
  }
  frame[static_cast<size_t>(cfg_.height - 1) * cfg_.width + agent_col_] = kAgentPixel;
}

void BeamCatchEnv::emit(std::vector<double>& obs) const { stack_frames(frames_, obs); }

void BeamCatchEnv::reset(uint64_t seed, std::vector<double>& obs) {
  rng_ = std::make_unique<Rng>(seed);
  agent_col_ = cfg_.width / 2;
  steps_ = 0;
  terminal_ = false;
  objects_.clear();
  std::vector<double> frame;
  render(frame);
  frames_.assign(kFrameStack, frame);
  emit(obs);
}

void BeamCatchEnv::step(int action, std::vector<double>& obs, double& reward, bool& done) {
  if (terminal_) {
    throw Error(ErrorCode::usage, "beam_catch: step after terminal state without reset");
  }
  if (action < 0 || action > 2) {
    throw Error(ErrorCode::invalid_value, "beam_catch: action must be 0, 1 or 2");
  }
  agent_col_ = std::clamp(agent_col_ + (action - 1), 0, cfg_.width - 1);

  reward = 0.0;
  for (Obj& o : objects_) o.row += 1;
  for (size_t i = 0; i < objects_.size();) {
    if (objects_[i].row >= cfg_.height - 1) {
      reward += objects_[i].col == agent_col_ ? 1.0 : -1.0;
      objects_.erase(objects_.begin() + static_cast<long>(i));
    } else {
      ++i;
    }
  }

  if (steps_ % cfg_.spawn_period == 0 &&
      static_cast<int>(objects_.size()) < cfg_.max_objects) {
    objects_.push_back(Obj{0, static_cast<int>(rng_->next_below(cfg_.width))});
  }

  steps_ += 1;
  done = steps_ >= cfg_.max_episode_length;
  terminal_ = done;

  std::vector<double> frame;
  render(frame);
  frames_.pop_front();
  frames_.push_back(std::move(frame));
  emit(obs);
}

ChainEnv::ChainEnv(int n_cells, int max_episode_length)
    : n_cells_(n_cells), max_len_(max_episode_length) {
  if (n_cells < 2) throw Error(ErrorCode::config, "chain: at least 2 cells required");
  if (max_episode_length < 1) throw Error(ErrorCode::config, "chain: bad episode length");
}

void ChainEnv::emit(std::vector<double>& obs) { stack_frames(frames_, obs); }

void ChainEnv::reset(uint64_t seed, std::vector<double>& obs) {
  (void)seed;  // fully deterministic
  pos_ = 0;
  steps_ = 0;
  terminal_ = false;
  std::vector<double> frame(static_cast<size_t>(n_cells_), 0.0);
  frame[0] = 1.0;
  frames_.assign(kFrameStack, frame);
  emit(obs);
}

void ChainEnv::step(int action, std::vector<double>& obs, double& reward, bool& done) {
  if (terminal_) throw Error(ErrorCode::usage, "chain: step after terminal state without reset");
  if (action < 0 || action > 1) {
    throw Error(ErrorCode::invalid_value, "chain: action must be 0 or 1");
  }
  reward = 0.0;
  if (pos_ == n_cells_ - 1) {
    reward = 1.0;
    done = true;
  } else {
    pos_ = std::clamp(pos_ + (action == 0 ? -1 : 1), 0, n_cells_ - 1);
    steps_ += 1;
    done = steps_ >= max_len_;
  }
  terminal_ = done;
  std::vector<double> frame(static_cast<size_t>(n_cells_), 0.0);
  frame[pos_] = 1.0;
  frames_.pop_front();
  frames_.push_back(std::move(frame));
  emit(obs);
}

std::unique_ptr<Environment> make_environment(const std::string& id, int height, int width,
                                              int spawn_period, int max_objects,
                                              int max_episode_length) {
  if (id == "beam_catch") {
    BeamCatchConfig cfg;
    cfg.height = height;
    cfg.width = width;
    cfg.spawn_period = spawn_period;
    cfg.max_objects = max_objects;
    cfg.max_episode_length = max_episode_length;
    return std::make_unique<BeamCatchEnv>(cfg);
  }
  if (id == "chain") {
    return std::make_unique<ChainEnv>(width, max_episode_length);
  }
  throw Error(ErrorCode::config, "unknown environment id: " + id);
}

double optimal_return(const BeamCatchConfig& cfg, uint64_t seed, int horizon) {
  if (cfg.height * cfg.width > 256 || horizon > 64) {
    throw Error(ErrorCode::size, "optimal_return: configuration too large for exact search");
  }
  if (horizon < 1) throw Error(ErrorCode::invalid_value, "optimal_return: horizon must be >= 1");

  // Replay the spawn schedule exactly as the environment produces it. Agent
  // actions never touch the rng, so the schedule is a pure function of the
  // seed. land[t] = column of the object landing during step t (1-based
  // steps_ counter in the env maps to t = steps index below), or -1.
  std::vector<int> land(static_cast<size_t>(horizon), -1);
  {
    Rng rng(seed);
    std::vector<std::pair<int, int>> objects;  // (landing_step, col)
    int alive = 0;
    for (int t = 0; t < horizon; ++t) {
      // object spawned at the end of step t sits at row 0 and reaches
      // row height-1 during step t + height - 1
      for (auto& [ls, col] : objects) {
        if (ls == t) {
          land[t] = col;
          --alive;
        }
      }
      if (t % cfg.spawn_period == 0 && alive < cfg.max_objects) {
        int col = static_cast<int>(rng.next_below(cfg.width));
        objects.emplace_back(t + cfg.height - 1, col);
        ++alive;
      }
    }
  }

  // value[c] = best return from steps t..horizon-1 with the agent at column
  // c before step t
  std::vector<double> value(static_cast<size_t>(cfg.width), 0.0);
  for (int t = horizon - 1; t >= 0; --t) {
    std::vector<double> next(static_cast<size_t>(cfg.width), 0.0);
    for (int c = 0; c < cfg.width; ++c) {
      double best = -1e300;
      for (int mv = -1; mv <= 1; ++mv) {
        int c2 = std::clamp(c + mv, 0, cfg.width - 1);
        double r = 0.0;
        if (land[t] >= 0) r = land[t] == c2 ? 1.0 : -1.0;
        best = std::max(best, r + value[c2]);
      }
      next[c] = best;
    }
    value = std::move(next);
  }
  return value[cfg.width / 2];
}

TabularMdp chain_mdp(int n_cells, double gamma) {
  if (n_cells < 2) throw Error(ErrorCode::config, "chain_mdp: at least 2 cells required");
  TabularMdp m;
  m.n_states = n_cells + 1;  // chain cells plus absorbing terminal
  m.n_actions = 2;           // 0 left, 1 right
  m.gamma = gamma;
  m.r_max = 1.0;
  size_t sa = static_cast<size_t>(m.n_states) * m.n_actions;
  m.transition.assign(sa * m.n_states, 0.0);
  m.reward.assign(sa, 0.0);
  auto set_p = [&m](int s, int a, int s2) {
    m.transition[(static_cast<size_t>(s) * m.n_actions + a) * m.n_states + s2] = 1.0;
  };
  int goal = n_cells - 1;
  int sink = n_cells;
  for (int s = 0; s < n_cells; ++s) {
    if (s == goal) {
      // any action at the goal pays 1 and falls through to the terminal
      for (int a = 0; a < 2; ++a) {
        set_p(s, a, sink);
        m.reward[static_cast<size_t>(s) * m.n_actions + a] = 1.0;
      }
    } else {
      set_p(s, 0, std::max(s - 1, 0));
      set_p(s, 1, s + 1);
    }
  }
  set_p(sink, 0, sink);
  set_p(sink, 1, sink);
  m.validate();
  return m;
}

}  // namespace sprig
