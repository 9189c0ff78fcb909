// Command-line front end. Links against the C API only; all functionality
// lives behind sprig/sprig.h.
#include <cstdint>
#include <cstdio>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "sprig/sprig.h"

namespace {

int report_failure(const char* what, sprig_status status) {
  std::fprintf(stderr, "error: %s: %s\n", what, sprig_last_error());
  return static_cast<int>(status);
}

struct ConfigHandle {
  sprig_config* cfg = nullptr;
  ~ConfigHandle() {
    if (cfg) sprig_config_free(cfg);
  }
};

int cmd_train(const std::string& config_path, int n_seeds, const std::string& mode,
              const std::string& out_dir, int jobs) {
  ConfigHandle handle;
  sprig_status st = config_path.empty() ? sprig_config_create(&handle.cfg)
                                        : sprig_config_load(config_path.c_str(), &handle.cfg);
  if (st != SPRIG_OK) return report_failure("loading config", st);
  if (!mode.empty()) {
    st = sprig_config_set(handle.cfg, "mode", mode.c_str());
    if (st != SPRIG_OK) return report_failure("setting mode", st);
  }
  if (!out_dir.empty()) {
    st = sprig_config_set(handle.cfg, "out_dir", out_dir.c_str());
    if (st != SPRIG_OK) return report_failure("setting out_dir", st);
  }

  char* out_root_c = nullptr;
  char* hash_c = nullptr;
  char* master_seed_c = nullptr;
  char* run_mode_c = nullptr;
  if (sprig_config_get(handle.cfg, "out_dir", &out_root_c) != SPRIG_OK ||
      sprig_config_hash(handle.cfg, &hash_c) != SPRIG_OK ||
      sprig_config_get(handle.cfg, "seed", &master_seed_c) != SPRIG_OK ||
      sprig_config_get(handle.cfg, "mode", &run_mode_c) != SPRIG_OK) {
    return report_failure("reading config", SPRIG_CONFIG_ERROR);
  }
  std::string out_root = out_root_c;
  std::string hash = hash_c;
  std::string run_mode = run_mode_c;
  uint64_t master_seed = std::strtoull(master_seed_c, nullptr, 10);
  sprig_string_free(out_root_c);
  sprig_string_free(hash_c);
  sprig_string_free(master_seed_c);
  sprig_string_free(run_mode_c);

  struct RunResult {
    uint64_t seed = 0;
    sprig_status status = SPRIG_OK;
    std::string dir;
    std::string error;
  };
  std::vector<RunResult> results(static_cast<size_t>(n_seeds));
  for (int i = 0; i < n_seeds; ++i) {
    results[i].seed = sprig_derive_seed(master_seed, static_cast<uint64_t>(i));
    results[i].dir = out_root + "/" + run_mode + "_" + hash + "_s" +
                     std::to_string(results[i].seed);
  }

  auto worker = [&](int begin, int step) {
    for (int i = begin; i < n_seeds; i += step) {
      RunResult& r = results[i];
      r.status = sprig_train_run(handle.cfg, r.seed, r.dir.c_str());
      if (r.status != SPRIG_OK) r.error = sprig_last_error();
    }
  };
  if (jobs <= 1) {
    worker(0, 1);
  } else {
    std::vector<std::thread> threads;
    int n_threads = std::min(jobs, n_seeds);
    threads.reserve(static_cast<size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t) threads.emplace_back(worker, t, n_threads);
    for (auto& t : threads) t.join();
  }

  int exit_code = 0;
  for (const RunResult& r : results) {
    if (r.status == SPRIG_OK) {
      std::printf("run seed=%llu dir=%s status=completed\n",
                  static_cast<unsigned long long>(r.seed), r.dir.c_str());
    } else {
      std::fprintf(stderr, "run seed=%llu failed: %s\n",
                   static_cast<unsigned long long>(r.seed), r.error.c_str());
      exit_code = static_cast<int>(r.status);
    }
  }
  return exit_code;
}

int cmd_verify(const std::string& suite, uint64_t master_seed) {
  char* report = nullptr;
  sprig_status st = sprig_verify(suite.c_str(), master_seed, &report);
  if (report) {
    std::fputs(report, stdout);
    sprig_string_free(report);
  }
  if (st == SPRIG_OK) {
    std::printf("verify %s: all properties passed\n", suite.c_str());
    return 0;
  }
  if (st == SPRIG_VERIFY_FAILED) {
    std::fprintf(stderr, "verify %s: FAILED\n", suite.c_str());
    return 1;
  }
  return report_failure("verify", st);
}

int cmd_export(const std::vector<std::string>& inputs, const std::string& out) {
  std::vector<const char*> paths;
  paths.reserve(inputs.size());
  for (const std::string& p : inputs) paths.push_back(p.c_str());
  sprig_status st = sprig_export_curves(paths.data(), paths.size(), out.c_str());
  if (st != SPRIG_OK) return report_failure("export-curves", st);
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& env, int episodes, uint64_t seed) {
  double mean = 0.0, stddev = 0.0;
  sprig_status st = sprig_evaluate(checkpoint.c_str(), env.empty() ? nullptr : env.c_str(),
                                   episodes, seed, &mean, &stddev);
  if (st != SPRIG_OK) return report_failure("eval", st);
  std::printf("episodes=%d mean_return=%.6f std_return=%.6f\n", episodes, mean, stddev);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SPRIG: cooperative Stackelberg perception-policy training"};
  app.require_subcommand(1);

  std::string config_path, mode, out_dir;
  int n_seeds = 1, jobs = 1;
  CLI::App* train = app.add_subcommand("train", "run training for one or more seeds");
  train->add_option("--config", config_path, "config file (flat key = value)");
  train->add_option("--seeds", n_seeds, "number of seeds fanned out from the master seed")
      ->check(CLI::PositiveNumber);
  train->add_option("--mode", mode, "sprig or ppo_baseline (overrides config)");
  train->add_option("--out", out_dir, "output root directory (overrides config)");
  train->add_option("--jobs", jobs, "parallel runs")->check(CLI::PositiveNumber);

  std::string suite = "all";
  uint64_t verify_seed = 20240501;
  CLI::App* verify = app.add_subcommand("verify", "run randomized property suites");
  verify->add_option("--suite", suite, "tabular | gradients | gae | all");
  verify->add_option("--seed", verify_seed, "master seed for the randomized trials");

  std::vector<std::string> export_inputs;
  std::string export_out = "curves.csv";
  CLI::App* exportc = app.add_subcommand("export-curves", "aggregate metrics files into curves");
  exportc->add_option("--out", export_out, "output csv path");
  exportc->add_option("inputs", export_inputs, "metrics.csv files")->required();

  std::string checkpoint, eval_env;
  int episodes = 20;
  uint64_t eval_seed = 0;
  CLI::App* evalc = app.add_subcommand("eval", "greedy evaluation of a checkpoint");
  evalc->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  evalc->add_option("--env", eval_env, "environment id override");
  evalc->add_option("--episodes", episodes, "episode count")->check(CLI::PositiveNumber);
  evalc->add_option("--seed", eval_seed, "evaluation seed");

  CLI11_PARSE(app, argc, argv);

  if (train->parsed()) return cmd_train(config_path, n_seeds, mode, out_dir, jobs);
  if (verify->parsed()) return cmd_verify(suite, verify_seed);
  if (exportc->parsed()) return cmd_export(export_inputs, export_out);
  if (evalc->parsed()) return cmd_eval(checkpoint, eval_env, episodes, eval_seed);
  return 0;
}
