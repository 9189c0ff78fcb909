#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "core/checkpoint.hpp"
#include "core/trainer.hpp"
#include "doctest.h"

using namespace sprig;

namespace {

TrainerConfig chain_config() {
  TrainerConfig cfg;
  cfg.env = "chain";
  cfg.env_width = 6;
  cfg.max_episode_length = 32;
  cfg.rollout_length = 64;
  cfg.batch_size = 32;
  cfg.total_timesteps = 128;
  cfg.ppo_epochs = 2;
  return cfg;
}

Minibatch first_minibatch(Trainer& trainer, int size) {
  Trajectory traj = trainer.collect_rollout(static_cast<int>(trainer.config().rollout_length));
  AdvantageBatch adv = normalize(compute_gae(traj, trainer.config().gamma,
                                             trainer.config().gae_lambda));
  std::vector<int> idx(size);
  std::iota(idx.begin(), idx.end(), 0);
  return trainer.materialize(traj, adv, idx);
}

std::vector<std::vector<double>> snapshot(const std::vector<Tensor>& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const Tensor& p : params) out.push_back(p.data());
  return out;
}

}  // namespace

TEST_SUITE_BEGIN("trainer");

TEST_CASE("rollout of length 2048 carries 2049 values") {
  TrainerConfig cfg = chain_config();
  cfg.rollout_length = 2048;
  cfg.total_timesteps = 2048;
  Trainer trainer(cfg, 1);
  Trajectory traj = trainer.collect_rollout(2048);
  CHECK(traj.actions.size() == 2048);
  CHECK(traj.rewards.size() == 2048);
  CHECK(traj.log_probs.size() == 2048);
  CHECK(traj.dones.size() == 2048);
  CHECK(traj.values.size() == 2049);
  CHECK(traj.observations.size() == static_cast<size_t>(2048) * traj.obs_size);
}

TEST_CASE("rollouts are bitwise reproducible per seed") {
  TrainerConfig cfg = chain_config();
  Trainer a(cfg, 7);
  Trainer b(cfg, 7);
  Trajectory ta = a.collect_rollout(64);
  Trajectory tb = b.collect_rollout(64);
  CHECK(ta.actions == tb.actions);
  CHECK(ta.rewards == tb.rewards);
  CHECK(ta.values == tb.values);
  CHECK(ta.log_probs == tb.log_probs);
  CHECK(ta.observations == tb.observations);
}

TEST_CASE("an env that terminates every step marks every done flag") {
  TrainerConfig cfg;
  cfg.env = "beam_catch";
  cfg.env_height = 6;
  cfg.env_width = 6;
  cfg.max_episode_length = 1;
  cfg.rollout_length = 16;
  Trainer trainer(cfg, 3);
  Trajectory traj = trainer.collect_rollout(16);
  for (unsigned char d : traj.dones) CHECK(d == 1);
  // GAE then treats each step in isolation
  AdvantageBatch adv = compute_gae(traj, 0.99, 0.95);
  for (int t = 0; t < traj.length(); ++t) {
    CHECK(adv.raw_advantages[t] ==
          doctest::Approx(traj.rewards[t] - traj.values[t]).epsilon(1e-12));
  }
}

TEST_CASE("leader stage") {
  SUBCASE("learning rate zero leaves perception parameters bitwise unchanged") {
    TrainerConfig cfg = chain_config();
    cfg.learning_rate = 0.0;
    Trainer trainer(cfg, 11);
    Minibatch mb = first_minibatch(trainer, 32);
    auto before = snapshot(trainer.perception_params());
    trainer.leader_stage(mb);
    CHECK(snapshot(trainer.perception_params()) == before);
  }

  SUBCASE("policy parameters never move") {
    TrainerConfig cfg = chain_config();
    Trainer trainer(cfg, 13);
    Minibatch mb = first_minibatch(trainer, 32);
    auto phi_before = snapshot(trainer.policy_params());
    trainer.leader_stage(mb);
    CHECK(snapshot(trainer.policy_params()) == phi_before);
  }

  SUBCASE("alpha 1 reduces the gradient to the cost term alone") {
    TrainerConfig cfg = chain_config();
    cfg.alpha_coop = 1.0;
    cfg.learning_rate = 0.0;  // keep parameters fixed so gradients are comparable
    Trainer a(cfg, 17);
    Trainer b(cfg, 17);
    Minibatch mb = first_minibatch(a, 32);

    a.leader_stage(mb);  // leaves post-clip gradients on theta
    std::vector<Tensor> theta_a = a.perception_params();

    std::vector<Tensor> theta_b = b.perception_params();
    zero_grad(theta_b);
    auto fwd = b.perception().forward(mb.observations);
    backward(scale(attention_cost(fwd.attention), cfg.lambda_cost));
    clip_global_norm(theta_b, cfg.max_grad_norm);

    for (size_t i = 0; i < theta_a.size(); ++i) {
      auto ga = theta_a[i].grad();
      auto gb = theta_b[i].grad();
      REQUIRE(ga.size() == gb.size());
      for (size_t j = 0; j < ga.size(); ++j) {
        CHECK(ga[j] == doctest::Approx(gb[j]).epsilon(1e-12));
      }
    }
  }

  SUBCASE("update direction matches the finite-difference ascent direction") {
    TrainerConfig cfg = chain_config();
    cfg.learning_rate = 0.0;
    Trainer trainer(cfg, 19);
    Minibatch mb = first_minibatch(trainer, 16);
    trainer.leader_stage(mb);  // gradient of -u_L stays on theta
    std::vector<Tensor> theta = trainer.perception_params();

    // central differences of u_L on a deterministic subsample of coordinates
    auto u_leader = [&]() {
      NoGradScope ng;
      auto fwd = trainer.perception().forward(mb.observations);
      Tensor raw = attention_cost(fwd.attention);
      Tensor logits = trainer.policy().logits_only(fwd.features);
      Tensor u_policy = mean(mul(gather_rows(log_softmax(logits), mb.actions), mb.advantages));
      return leader_utility(u_policy, raw, cfg.lambda_cost, cfg.alpha_coop).value();
    };
    Rng pick(23);
    double dot = 0.0, na = 0.0, nb = 0.0;
    const double eps = 1e-5;
    for (int probe = 0; probe < 400; ++probe) {
      size_t pi = pick.next_below(theta.size());
      auto& data = theta[pi].mutable_data();
      size_t j = pick.next_below(data.size());
      double saved = data[j];
      data[j] = saved + eps;
      double up = u_leader();
      data[j] = saved - eps;
      double down = u_leader();
      data[j] = saved;
      double fd_ascent = (up - down) / (2.0 * eps);
      double analytic_ascent = -theta[pi].grad()[j];  // stage descends -u_L
      dot += fd_ascent * analytic_ascent;
      na += fd_ascent * fd_ascent;
      nb += analytic_ascent * analytic_ascent;
    }
    double cosine = dot / std::sqrt(na * nb);
    CHECK(cosine > 0.99);
  }
}

TEST_CASE("follower stage") {
  SUBCASE("learning rate zero leaves policy parameters bitwise unchanged") {
    TrainerConfig cfg = chain_config();
    cfg.learning_rate = 0.0;
    Trainer trainer(cfg, 29);
    Minibatch mb = first_minibatch(trainer, 32);
    auto before = snapshot(trainer.policy_params());
    trainer.follower_stage(mb);
    CHECK(snapshot(trainer.policy_params()) == before);
  }

  SUBCASE("perception parameters never move") {
    TrainerConfig cfg = chain_config();
    Trainer trainer(cfg, 31);
    Minibatch mb = first_minibatch(trainer, 32);
    auto theta_before = snapshot(trainer.perception_params());
    trainer.follower_stage(mb);
    CHECK(snapshot(trainer.perception_params()) == theta_before);
  }

  SUBCASE("zero advantages and perfect value fit leave only the entropy gradient") {
    TrainerConfig cfg = chain_config();
    cfg.learning_rate = 0.0;
    Trainer a(cfg, 37);
    Trainer b(cfg, 37);
    Minibatch mb = first_minibatch(a, 16);

    // rebuild the minibatch with zero advantages and returns equal to the
    // current value predictions; rollout statistics stay (0, 1)
    {
      NoGradScope ng;
      auto fwd = a.perception().forward(mb.observations);
      PolicyNet::Forward f = a.policy().forward(fwd.features);
      std::vector<double> rets(16);
      for (int i = 0; i < 16; ++i) rets[i] = f.value.item(i);
      mb.returns = Tensor::from_data({16}, rets);
      mb.advantages = Tensor::zeros({16});
      mb.advantage_mean = 0.0;
      mb.advantage_std = 1.0;
    }

    a.follower_stage(mb);  // gradients left on phi
    std::vector<Tensor> phi_a = a.policy_params();

    std::vector<Tensor> phi_b = b.policy_params();
    zero_grad(phi_b);
    {
      FreezeScope freeze(b.perception_params());
      auto fwd = b.perception().forward(mb.observations);
      Tensor h = entropy(b.policy().forward(fwd.features).logits);
      backward(scale(h, -cfg.entropy_coef));
    }
    clip_global_norm(phi_b, cfg.max_grad_norm);

    for (size_t i = 0; i < phi_a.size(); ++i) {
      auto ga = phi_a[i].grad();
      auto gb = phi_b[i].grad();
      for (size_t j = 0; j < ga.size(); ++j) {
        CHECK(ga[j] == doctest::Approx(gb[j]).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("stage isolation holds under debug checksums") {
  TrainerConfig cfg = chain_config();
  cfg.debug_stage_isolation = true;
  cfg.total_timesteps = 128;
  Trainer trainer(cfg, 41);
  CHECK_NOTHROW(trainer.train());
}

TEST_CASE("post-clip gradient norms respect the ceiling") {
  TrainerConfig cfg = chain_config();
  Trainer trainer(cfg, 43);
  Minibatch mb = first_minibatch(trainer, 32);
  for (int pass = 0; pass < 4; ++pass) {
    LeaderDelta ld = trainer.leader_stage(mb);
    FollowerDelta fd = trainer.follower_stage(mb);
    CHECK(ld.post_clip_norm <= cfg.max_grad_norm + 1e-9);
    CHECK(fd.post_clip_norm <= cfg.max_grad_norm + 1e-9);
  }
}

TEST_CASE("train iteration arithmetic follows the published table") {
  // total 8192 at rollout 2048 gives exactly 4 iterations; with 4 epochs and
  // batch 64 each stage sees 4 * 4 * (2048/64) = 512 minibatch passes
  TrainerConfig cfg;
  CHECK(cfg.rollout_length == 2048);
  CHECK(cfg.ppo_epochs == 4);
  CHECK(cfg.batch_size == 64);
  cfg.total_timesteps = 8192;
  int64_t iterations = cfg.total_timesteps / cfg.rollout_length;
  CHECK(iterations == 4);
  CHECK(iterations * cfg.ppo_epochs * (cfg.rollout_length / cfg.batch_size) == 512);

  // run the same arithmetic at desk scale and count metric rows
  TrainerConfig small = chain_config();
  small.total_timesteps = 4 * small.rollout_length;
  Trainer trainer(small, 47);
  std::vector<IterationMetrics> series = trainer.train();
  CHECK(series.size() == 4);
  CHECK(series.back().env_steps == small.total_timesteps);
}

TEST_CASE("identical seeds give identical metrics streams") {
  TrainerConfig cfg = chain_config();
  cfg.mode = "ppo_baseline";
  auto run = [&cfg] {
    Trainer t(cfg, 53);
    std::vector<IterationMetrics> series = t.train();
    std::string rows;
    for (const IterationMetrics& m : series) rows += metrics_csv_row(m) + "\n";
    return rows;
  };
  CHECK(run() == run());
}

TEST_CASE("with alpha 0 and lambda 0 the follower objective equals the baseline") {
  TrainerConfig cfg = chain_config();
  cfg.alpha_coop = 0.0;
  cfg.lambda_cost = 0.0;
  TrainerConfig base_cfg = cfg;
  base_cfg.mode = "ppo_baseline";

  Trainer sprig_t(cfg, 59);
  Trainer base_t(base_cfg, 59);
  Minibatch mb = first_minibatch(sprig_t, 32);

  // identical initial parameters (same seed) so the two paths are comparable
  auto loss_sprig = [&] {
    FreezeScope freeze(sprig_t.perception_params());
    auto fwd = sprig_t.perception().forward(mb.observations);
    double weighted = perception_cost(fwd.attention, cfg.lambda_cost).weighted_cost;
    FollowerBatch batch{fwd.features, mb.actions,      mb.old_log_probs, mb.advantages,
                        mb.returns,   mb.advantage_mean, mb.advantage_std};
    return follower_loss(batch, sprig_t.policy(), cfg.clip_epsilon, cfg.value_coef,
                         cfg.entropy_coef, weighted)
        .loss.value();
  }();
  auto loss_base = [&] {
    NoGradScope ng;
    auto fwd = base_t.perception().forward(mb.observations);
    FollowerBatch batch{fwd.features, mb.actions,      mb.old_log_probs, mb.advantages,
                        mb.returns,   mb.advantage_mean, mb.advantage_std};
    return follower_loss(batch, base_t.policy(), base_cfg.clip_epsilon, base_cfg.value_coef,
                         base_cfg.entropy_coef, 0.0)
        .loss.value();
  }();
  CHECK(loss_sprig == doctest::Approx(loss_base).epsilon(1e-10));
}

TEST_CASE("metrics rows are sequential and well-formed") {
  TrainerConfig cfg = chain_config();
  Trainer trainer(cfg, 61);
  std::vector<IterationMetrics> series = trainer.train();
  REQUIRE(!series.empty());
  for (size_t i = 0; i < series.size(); ++i) {
    CHECK(series[i].iteration == static_cast<int64_t>(i));
    CHECK(series[i].entropy >= 0.0);
    CHECK(series[i].wall_time_s >= 0.0);
  }
}

TEST_CASE("numeric blowups abort with the iteration and phase named") {
  TrainerConfig cfg = chain_config();
  Trainer trainer(cfg, 63);
  // poison the value bias; the first forward pass trips the NaN guard
  for (auto& [name, t] : trainer.policy().named_params()) {
    if (name == "value.b") {
      std::fill(t.mutable_data().begin(), t.mutable_data().end(), std::nan(""));
    }
  }
  try {
    trainer.train();
    FAIL("expected a numeric abort");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::numeric);
    CHECK(std::string(e.what()).find("iteration 0") != std::string::npos);
    CHECK(std::string(e.what()).find("rollout") != std::string::npos);
  }
}

TEST_CASE("run_training writes metrics, timing, manifest and checkpoint") {
  namespace fs = std::filesystem;
  TrainerConfig cfg = chain_config();
  fs::path dir = fs::temp_directory_path() / "sprig_run_test";
  fs::remove_all(dir);
  run_training(cfg, 67, dir.string());
  CHECK(fs::exists(dir / "metrics.csv"));
  CHECK(fs::exists(dir / "timing.csv"));
  CHECK(fs::exists(dir / "manifest.txt"));
  CHECK(fs::exists(dir / "checkpoint_final.bin"));

  std::ifstream metrics((dir / "metrics.csv").string());
  std::string header;
  std::getline(metrics, header);
  CHECK(header == metrics_csv_header());
  int rows = 0;
  std::string line;
  while (std::getline(metrics, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == cfg.total_timesteps / cfg.rollout_length);

  std::ifstream manifest((dir / "manifest.txt").string());
  std::string text((std::istreambuf_iterator<char>(manifest)), std::istreambuf_iterator<char>());
  CHECK(text.find("status = completed") != std::string::npos);
  CHECK(text.find("mode = sprig") != std::string::npos);
  CHECK(text.find("gamma = ") != std::string::npos);  // config echo
  fs::remove_all(dir);
}

TEST_CASE("checkpoints round trip bit-exact and drive evaluation deterministically") {
  namespace fs = std::filesystem;
  TrainerConfig cfg = chain_config();
  fs::path dir = fs::temp_directory_path() / "sprig_ckpt_test";
  fs::remove_all(dir);
  run_training(cfg, 71, dir.string());
  fs::path ckpt_path = dir / "checkpoint_final.bin";

  Checkpoint loaded = load_checkpoint(ckpt_path.string());
  fs::path copy = dir / "copy.bin";
  save_checkpoint(loaded, copy.string());
  Checkpoint reloaded = load_checkpoint(copy.string());
  REQUIRE(loaded.params.size() == reloaded.params.size());
  for (size_t i = 0; i < loaded.params.size(); ++i) {
    CHECK(loaded.params[i].first == reloaded.params[i].first);
    CHECK(loaded.params[i].second.data() == reloaded.params[i].second.data());  // bit exact
  }
  CHECK(loaded.config_snapshot == reloaded.config_snapshot);

  EvalResult a = evaluate_checkpoint(ckpt_path.string(), std::nullopt, 5, 11);
  EvalResult b = evaluate_checkpoint(ckpt_path.string(), std::nullopt, 5, 11);
  CHECK(a.episode_returns == b.episode_returns);
  fs::remove_all(dir);
}

TEST_CASE("corrupt checkpoints are format errors") {
  namespace fs = std::filesystem;
  fs::path path = fs::temp_directory_path() / "sprig_bad_ckpt.bin";
  std::ofstream(path.string()) << "not a checkpoint";
  try {
    load_checkpoint(path.string());
    FAIL("expected format error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::format);
  }
  fs::remove(path);
}

TEST_CASE("untrained greedy evaluation sits near the random baseline") {
  namespace fs = std::filesystem;
  TrainerConfig cfg;
  cfg.env = "beam_catch";
  cfg.max_episode_length = 60;
  cfg.rollout_length = 32;
  cfg.batch_size = 32;
  cfg.total_timesteps = 32;
  cfg.learning_rate = 0.0;  // keep the net untrained
  fs::path dir = fs::temp_directory_path() / "sprig_eval_test";
  fs::remove_all(dir);
  run_training(cfg, 73, dir.string());
  EvalResult untrained =
      evaluate_checkpoint((dir / "checkpoint_final.bin").string(), std::nullopt, 30, 3);
  EvalResult rand_eval = random_policy_return(cfg, 30, 3);
  CHECK(std::fabs(untrained.mean_return - rand_eval.mean_return) <=
        3.0 * (rand_eval.std_return + 1e-9));
  fs::remove_all(dir);
}

TEST_SUITE_END();
