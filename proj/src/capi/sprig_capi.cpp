#include "sprig/sprig.h"

#include <cstring>
#include <string>

#include "../core/config.hpp"
#include "../core/curves.hpp"
#include "../core/tabular.hpp"
#include "../core/trainer.hpp"
#include "../core/verify.hpp"

struct sprig_config {
  sprig::TrainerConfig cfg;
};

struct sprig_tabular_game {
  sprig::TabularGameMdp game;
};

namespace {

thread_local std::string g_last_error;

sprig_status fail(sprig_status code, const std::string& msg) {
  g_last_error = msg;
  return code;
}

sprig_status status_of(const sprig::Error& e) {
  if (e.code() == sprig::ErrorCode::config) return SPRIG_CONFIG_ERROR;
  return SPRIG_RUNTIME_ERROR;
}

char* dup_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.data(), s.size() + 1);
  return out;
}

template <typename Fn>
sprig_status guarded(Fn&& fn) {
  try {
    g_last_error.clear();
    return fn();
  } catch (const sprig::Error& e) {
    return fail(status_of(e), e.what());
  } catch (const std::exception& e) {
    return fail(SPRIG_RUNTIME_ERROR, e.what());
  }
}

}  // namespace

extern "C" {

const char* sprig_version(void) { return "sprig-0.1.0"; }

const char* sprig_last_error(void) { return g_last_error.c_str(); }

void sprig_string_free(char* s) { delete[] s; }

sprig_status sprig_config_create(sprig_config** out) {
  return guarded([&]() {
    if (!out) return fail(SPRIG_CONFIG_ERROR, "out must not be null");
    *out = new sprig_config{};
    return SPRIG_OK;
  });
}

sprig_status sprig_config_load(const char* path, sprig_config** out) {
  return guarded([&]() {
    if (!path || !out) return fail(SPRIG_CONFIG_ERROR, "path and out must not be null");
    auto* cfg = new sprig_config{sprig::parse_config(path)};
    *out = cfg;
    return SPRIG_OK;
  });
}

sprig_status sprig_config_set(sprig_config* cfg, const char* key, const char* value) {
  return guarded([&]() {
    if (!cfg || !key || !value) return fail(SPRIG_CONFIG_ERROR, "null argument");
    sprig::set_config_key(cfg->cfg, key, value);
    return SPRIG_OK;
  });
}

sprig_status sprig_config_get(const sprig_config* cfg, const char* key, char** value) {
  return guarded([&]() {
    if (!cfg || !key || !value) return fail(SPRIG_CONFIG_ERROR, "null argument");
    *value = dup_string(sprig::config_get(cfg->cfg, key));
    return SPRIG_OK;
  });
}

sprig_status sprig_config_save(const sprig_config* cfg, const char* path) {
  return guarded([&]() {
    if (!cfg || !path) return fail(SPRIG_CONFIG_ERROR, "null argument");
    sprig::save_config(cfg->cfg, path);
    return SPRIG_OK;
  });
}

sprig_status sprig_config_hash(const sprig_config* cfg, char** hash) {
  return guarded([&]() {
    if (!cfg || !hash) return fail(SPRIG_CONFIG_ERROR, "null argument");
    *hash = dup_string(sprig::config_hash(cfg->cfg));
    return SPRIG_OK;
  });
}

void sprig_config_free(sprig_config* cfg) { delete cfg; }

sprig_status sprig_train_run(const sprig_config* cfg, uint64_t run_seed, const char* out_dir) {
  return guarded([&]() {
    if (!cfg || !out_dir) return fail(SPRIG_CONFIG_ERROR, "null argument");
    sprig::run_training(cfg->cfg, run_seed, out_dir);
    return SPRIG_OK;
  });
}

uint64_t sprig_derive_seed(uint64_t master_seed, uint64_t index) {
  return sprig::split_seed(master_seed, index);
}

sprig_status sprig_evaluate(const char* checkpoint_path, const char* env_id, int episodes,
                            uint64_t seed, double* mean_return, double* std_return) {
  return guarded([&]() {
    if (!checkpoint_path || episodes < 1) {
      return fail(SPRIG_CONFIG_ERROR, "checkpoint path required, episodes must be >= 1");
    }
    std::optional<std::string> env;
    if (env_id) env = std::string(env_id);
    sprig::EvalResult res = sprig::evaluate_checkpoint(checkpoint_path, env, episodes, seed);
    if (mean_return) *mean_return = res.mean_return;
    if (std_return) *std_return = res.std_return;
    return SPRIG_OK;
  });
}

sprig_status sprig_verify(const char* suite, uint64_t master_seed, char** report) {
  return guarded([&]() {
    if (!suite) return fail(SPRIG_CONFIG_ERROR, "suite must not be null");
    sprig::VerifyReport rep = sprig::run_verify_suite(suite, master_seed);
    if (report) *report = dup_string(rep.text);
    if (!rep.passed) {
      g_last_error = "one or more properties failed";
      return SPRIG_VERIFY_FAILED;
    }
    return SPRIG_OK;
  });
}

sprig_status sprig_export_curves(const char* const* metrics_paths, size_t n_paths,
                                 const char* out_csv) {
  return guarded([&]() {
    if (!metrics_paths || !out_csv) return fail(SPRIG_CONFIG_ERROR, "null argument");
    std::vector<std::string> paths;
    paths.reserve(n_paths);
    for (size_t i = 0; i < n_paths; ++i) paths.emplace_back(metrics_paths[i]);
    sprig::export_curves(paths, out_csv);
    return SPRIG_OK;
  });
}

sprig_status sprig_tabular_game_load(const char* path, sprig_tabular_game** out) {
  return guarded([&]() {
    if (!path || !out) return fail(SPRIG_CONFIG_ERROR, "null argument");
    *out = new sprig_tabular_game{sprig::load_game_instance(path)};
    return SPRIG_OK;
  });
}

void sprig_tabular_game_free(sprig_tabular_game* game) { delete game; }

sprig_status sprig_tabular_dims(const sprig_tabular_game* game, uint32_t* n_states,
                                uint32_t* n_actions) {
  return guarded([&]() {
    if (!game) return fail(SPRIG_CONFIG_ERROR, "null game handle");
    if (n_states) *n_states = static_cast<uint32_t>(game->game.base.n_states);
    if (n_actions) *n_actions = static_cast<uint32_t>(game->game.base.n_actions);
    return SPRIG_OK;
  });
}

sprig_status sprig_tabular_value_iteration(const sprig_tabular_game* game, double tol,
                                           uint64_t max_iters, double* values,
                                           uint64_t* iterations, double* final_residual) {
  return guarded([&]() {
    if (!game) return fail(SPRIG_CONFIG_ERROR, "null game handle");
    sprig::ValueIterationResult res = sprig::value_iteration(
        game->game, tol, static_cast<int>(max_iters));
    if (values) {
      std::memcpy(values, res.fixed_point.values.data(),
                  res.fixed_point.values.size() * sizeof(double));
    }
    if (iterations) *iterations = static_cast<uint64_t>(res.iterations);
    if (final_residual) *final_residual = res.residuals.back();
    return SPRIG_OK;
  });
}

sprig_status sprig_tabular_contraction_ratio(const sprig_tabular_game* game, const double* f1,
                                             const double* f2, double* ratio) {
  return guarded([&]() {
    if (!game || !f1 || !f2 || !ratio) return fail(SPRIG_CONFIG_ERROR, "null argument");
    int ns = game->game.base.n_states;
    int na = game->game.base.n_actions;
    sprig::ValueTable t1 = sprig::ValueTable::zeros(ns, na);
    sprig::ValueTable t2 = sprig::ValueTable::zeros(ns, na);
    std::memcpy(t1.values.data(), f1, t1.values.size() * sizeof(double));
    std::memcpy(t2.values.data(), f2, t2.values.size() * sizeof(double));
    *ratio = sprig::contraction_ratio(game->game, t1, t2);
    return SPRIG_OK;
  });
}

}  // extern "C"
