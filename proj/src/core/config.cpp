#include "config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace sprig {

namespace {

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

[[noreturn]] void bad_value(const std::string& key, const std::string& constraint) {
  throw Error(ErrorCode::config, "config key '" + key + "': " + constraint);
}

int64_t to_int(const std::string& key, const std::string& v) {
  int64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, "expected an integer");
  return out;
}

uint64_t to_uint(const std::string& key, const std::string& v) {
  uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    bad_value(key, "expected a nonnegative integer");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size() || !std::isfinite(out)) throw std::invalid_argument(key);
    return out;
  } catch (const std::exception&) {
    bad_value(key, "expected a finite number");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  bad_value(key, "expected true or false");
}

}  // namespace

void set_config_key(TrainerConfig& cfg, const std::string& key, const std::string& value) {
  auto positive = [&](int64_t v) {
    if (v < 1) bad_value(key, "must be positive");
    return v;
  };
  if (key == "rollout_length") {
    cfg.rollout_length = positive(to_int(key, value));
  } else if (key == "batch_size") {
    cfg.batch_size = positive(to_int(key, value));
  } else if (key == "gamma") {
    cfg.gamma = to_double(key, value);
    if (!(cfg.gamma >= 0.0 && cfg.gamma < 1.0)) bad_value(key, "must lie in [0, 1)");
  } else if (key == "gae_lambda") {
    cfg.gae_lambda = to_double(key, value);
    if (!(cfg.gae_lambda >= 0.0 && cfg.gae_lambda <= 1.0)) bad_value(key, "must lie in [0, 1]");
  } else if (key == "learning_rate") {
    cfg.learning_rate = to_double(key, value);
    if (cfg.learning_rate < 0.0) bad_value(key, "must be nonnegative");
  } else if (key == "ppo_epochs") {
    cfg.ppo_epochs = positive(to_int(key, value));
  } else if (key == "clip_epsilon") {
    cfg.clip_epsilon = to_double(key, value);
    if (cfg.clip_epsilon <= 0.0) bad_value(key, "must be positive");
  } else if (key == "value_coef") {
    cfg.value_coef = to_double(key, value);
    if (cfg.value_coef < 0.0) bad_value(key, "must be nonnegative");
  } else if (key == "entropy_coef") {
    cfg.entropy_coef = to_double(key, value);
    if (cfg.entropy_coef < 0.0) bad_value(key, "must be nonnegative");
  } else if (key == "max_grad_norm") {
    cfg.max_grad_norm = to_double(key, value);
    if (cfg.max_grad_norm <= 0.0) bad_value(key, "must be positive");
  } else if (key == "lambda_cost") {
    cfg.lambda_cost = to_double(key, value);
    if (cfg.lambda_cost < 0.0) bad_value(key, "must be nonnegative");
  } else if (key == "alpha_coop") {
    cfg.alpha_coop = to_double(key, value);
    if (!(cfg.alpha_coop >= 0.0 && cfg.alpha_coop <= 1.0)) bad_value(key, "must lie in [0, 1]");
  } else if (key == "total_timesteps") {
    cfg.total_timesteps = positive(to_int(key, value));
  } else if (key == "max_episode_length") {
    cfg.max_episode_length = positive(to_int(key, value));
  } else if (key == "seed") {
    cfg.seed = to_uint(key, value);
  } else if (key == "mode") {
    if (value != "sprig" && value != "ppo_baseline") {
      bad_value(key, "must be 'sprig' or 'ppo_baseline'");
    }
    cfg.mode = value;
  } else if (key == "env") {
    if (value != "beam_catch" && value != "chain") {
      bad_value(key, "must be 'beam_catch' or 'chain'");
    }
    cfg.env = value;
  } else if (key == "out_dir") {
    if (value.empty()) bad_value(key, "must not be empty");
    cfg.out_dir = value;
  } else if (key == "env_height") {
    cfg.env_height = positive(to_int(key, value));
  } else if (key == "env_width") {
    cfg.env_width = positive(to_int(key, value));
  } else if (key == "spawn_period") {
    cfg.spawn_period = positive(to_int(key, value));
  } else if (key == "max_objects") {
    cfg.max_objects = positive(to_int(key, value));
  } else if (key == "checkpoint_cadence") {
    cfg.checkpoint_cadence = to_int(key, value);
    if (cfg.checkpoint_cadence < 0) bad_value(key, "must be nonnegative");
  } else if (key == "use_eq9_weighting") {
    cfg.use_eq9_weighting = to_bool(key, value);
  } else if (key == "baseline_torso") {
    if (value != "attention" && value != "conv") bad_value(key, "must be 'attention' or 'conv'");
    cfg.baseline_torso = value;
  } else if (key == "debug_stage_isolation") {
    cfg.debug_stage_isolation = to_bool(key, value);
  } else {
    throw Error(ErrorCode::config, "config: unknown key '" + key + "'");
  }
}

std::string config_get(const TrainerConfig& cfg, const std::string& key) {
  if (key == "rollout_length") return std::to_string(cfg.rollout_length);
  if (key == "batch_size") return std::to_string(cfg.batch_size);
  if (key == "gamma") return format_double(cfg.gamma);
  if (key == "gae_lambda") return format_double(cfg.gae_lambda);
  if (key == "learning_rate") return format_double(cfg.learning_rate);
  if (key == "ppo_epochs") return std::to_string(cfg.ppo_epochs);
  if (key == "clip_epsilon") return format_double(cfg.clip_epsilon);
  if (key == "value_coef") return format_double(cfg.value_coef);
  if (key == "entropy_coef") return format_double(cfg.entropy_coef);
  if (key == "max_grad_norm") return format_double(cfg.max_grad_norm);
  if (key == "lambda_cost") return format_double(cfg.lambda_cost);
  if (key == "alpha_coop") return format_double(cfg.alpha_coop);
  if (key == "total_timesteps") return std::to_string(cfg.total_timesteps);
  if (key == "max_episode_length") return std::to_string(cfg.max_episode_length);
  if (key == "seed") return std::to_string(cfg.seed);
  if (key == "mode") return cfg.mode;
  if (key == "env") return cfg.env;
  if (key == "out_dir") return cfg.out_dir;
  if (key == "env_height") return std::to_string(cfg.env_height);
  if (key == "env_width") return std::to_string(cfg.env_width);
  if (key == "spawn_period") return std::to_string(cfg.spawn_period);
  if (key == "max_objects") return std::to_string(cfg.max_objects);
  if (key == "checkpoint_cadence") return std::to_string(cfg.checkpoint_cadence);
  if (key == "use_eq9_weighting") return cfg.use_eq9_weighting ? "true" : "false";
  if (key == "baseline_torso") return cfg.baseline_torso;
  if (key == "debug_stage_isolation") return cfg.debug_stage_isolation ? "true" : "false";
  throw Error(ErrorCode::config, "config: unknown key '" + key + "'");
}

namespace {

const std::vector<std::string>& key_order() {
  static const std::vector<std::string> keys = {
      "rollout_length", "batch_size", "gamma", "gae_lambda", "learning_rate", "ppo_epochs",
      "clip_epsilon", "value_coef", "entropy_coef", "max_grad_norm", "lambda_cost", "alpha_coop",
      "total_timesteps", "max_episode_length", "seed", "mode", "env", "out_dir", "env_height",
      "env_width", "spawn_period", "max_objects", "checkpoint_cadence", "use_eq9_weighting",
      "baseline_torso", "debug_stage_isolation"};
  return keys;
}

void apply_lines(TrainerConfig& cfg, std::istream& in) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      size_t b = s.find_first_not_of(" \t\r");
      size_t e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::string trimmed = trim(line);
    if (trimmed.empty()) continue;
    size_t eq = trimmed.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::config,
                  "config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    std::string key = trim(trimmed.substr(0, eq));
    std::string value = trim(trimmed.substr(eq + 1));
    set_config_key(cfg, key, value);
  }
}

}  // namespace

TrainerConfig parse_config_text(const std::string& text) {
  TrainerConfig cfg;
  std::istringstream in(text);
  apply_lines(cfg, in);
  return cfg;
}

TrainerConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::config, "cannot open config file: " + path);
  TrainerConfig cfg;
  apply_lines(cfg, in);
  return cfg;
}

std::string serialize_config(const TrainerConfig& cfg) {
  std::ostringstream out;
  for (const std::string& key : key_order()) {
    out << key << " = " << config_get(cfg, key) << '\n';
  }
  return out.str();
}

void save_config(const TrainerConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::config, "cannot write config file: " + path);
  out << serialize_config(cfg);
}

std::string config_hash(const TrainerConfig& cfg) {
  // out_dir names where results land; it is not part of the experiment
  TrainerConfig keyed = cfg;
  keyed.out_dir = "runs";
  std::string snapshot = serialize_config(keyed);
  uint64_t h = fnv1a(snapshot.data(), snapshot.size());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf, 16);
}

}  // namespace sprig
