#include "trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "checkpoint.hpp"

namespace sprig {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double now_seconds() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

}  // namespace

std::string artifact_version() { return "sprig-0.1.0"; }

std::string metrics_csv_header() {
  return "iteration,env_steps,mean_episode_return,leader_utility,u_policy,raw_cost,"
         "weighted_cost,clip_loss,value_loss,entropy,leader_grad_norm,follower_grad_norm";
}

std::string metrics_csv_row(const IterationMetrics& m) {
  std::ostringstream out;
  out << m.iteration << ',' << m.env_steps << ',' << fmt(m.mean_episode_return) << ','
      << fmt(m.leader_utility) << ',' << fmt(m.u_policy) << ',' << fmt(m.raw_cost) << ','
      << fmt(m.weighted_cost) << ',' << fmt(m.clip_loss) << ',' << fmt(m.value_loss) << ','
      << fmt(m.entropy) << ',' << fmt(m.leader_grad_norm) << ',' << fmt(m.follower_grad_norm);
  return out.str();
}

Trainer::Trainer(const TrainerConfig& cfg, uint64_t run_seed)
    : cfg_(cfg),
      run_seed_(run_seed),
      env_seeds_(split_seed(run_seed, 1)),
      action_rng_(split_seed(run_seed, 2)),
      shuffle_rng_(split_seed(run_seed, 3)) {
  env_ = make_environment(cfg.env, static_cast<int>(cfg.env_height),
                          static_cast<int>(cfg.env_width), static_cast<int>(cfg.spawn_period),
                          static_cast<int>(cfg.max_objects),
                          static_cast<int>(cfg.max_episode_length));
  Rng init_rng(split_seed(run_seed, 0));
  bool attention = cfg.mode == "sprig" || cfg.baseline_torso == "attention";
  perception_ = std::make_unique<AttentionStack>(kFrameStack, env_->height(), env_->width(),
                                                 init_rng, 128, attention);
  policy_ = std::make_unique<PolicyNet>(perception_->feature_dim(), env_->n_actions(), init_rng);
  env_->reset(env_seeds_.next_u64(), pending_obs_);
}

Trajectory Trainer::collect_rollout(int length) {
  NoGradScope ng;
  Trajectory traj;
  traj.obs_size = env_->obs_size();
  traj.observations.reserve(static_cast<size_t>(length) * traj.obs_size);
  traj.actions.reserve(length);
  traj.rewards.reserve(length);
  traj.values.reserve(length + 1);
  traj.log_probs.reserve(length);
  traj.dones.reserve(length);
  finished_episode_returns_.clear();

  const int stack = kFrameStack, h = env_->height(), w = env_->width();
  for (int t = 0; t < length; ++t) {
    traj.observations.insert(traj.observations.end(), pending_obs_.begin(), pending_obs_.end());
    Tensor obs = Tensor::from_data({1, stack, h, w}, pending_obs_);
    Tensor features = perception_->forward(obs).features;
    ActionSample s = act(features, *policy_, action_rng_);

    double reward = 0.0;
    bool done = false;
    env_->step(s.action, pending_obs_, reward, done);
    episode_return_acc_ += reward;
    if (done) {
      finished_episode_returns_.push_back(episode_return_acc_);
      episode_return_acc_ = 0.0;
      env_->reset(env_seeds_.next_u64(), pending_obs_);
    }

    traj.actions.push_back(s.action);
    traj.rewards.push_back(reward);
    traj.values.push_back(s.value);
    traj.log_probs.push_back(s.log_prob);
    traj.dones.push_back(done ? 1 : 0);
  }

  // bootstrap value of the state after the final step
  Tensor obs = Tensor::from_data({1, stack, h, w}, pending_obs_);
  Tensor features = perception_->forward(obs).features;
  PolicyNet::Forward f = policy_->forward(features);
  traj.values.push_back(f.value.item(0));
  traj.check();
  return traj;
}

Minibatch Trainer::materialize(const Trajectory& traj, const AdvantageBatch& adv,
                               const std::vector<int>& indices) const {
  const int b = static_cast<int>(indices.size());
  const int os = traj.obs_size;
  Minibatch mb;
  std::vector<double> obs(static_cast<size_t>(b) * os);
  std::vector<double> old_lp(b), a(b), r(b);
  mb.actions.resize(b);
  for (int i = 0; i < b; ++i) {
    int idx = indices[i];
    std::copy(traj.observations.begin() + static_cast<int64_t>(idx) * os,
              traj.observations.begin() + static_cast<int64_t>(idx + 1) * os,
              obs.begin() + static_cast<int64_t>(i) * os);
    mb.actions[i] = traj.actions[idx];
    old_lp[i] = traj.log_probs[idx];
    a[i] = adv.advantages[idx];
    r[i] = adv.returns[idx];
  }
  mb.observations =
      Tensor::from_data({b, kFrameStack, env_->height(), env_->width()}, std::move(obs));
  mb.old_log_probs = Tensor::from_data({b}, std::move(old_lp));
  mb.advantages = Tensor::from_data({b}, std::move(a));
  mb.returns = Tensor::from_data({b}, std::move(r));
  mb.advantage_mean = adv.norm_mean;
  mb.advantage_std = adv.norm_std;
  return mb;
}

double Trainer::grad_norm(const std::vector<Tensor>& params) const {
  double sq = 0.0;
  for (const Tensor& p : params) {
    for (double g : p.node()->grad) sq += g * g;
  }
  return std::sqrt(sq);
}

LeaderDelta Trainer::leader_stage(const Minibatch& mb) {
  std::vector<Tensor> theta = perception_->params();
  std::vector<Tensor> phi = policy_->params();
  uint64_t phi_checksum = 0;
  if (cfg_.debug_stage_isolation) phi_checksum = param_checksum(phi);

  LeaderDelta delta;
  {
    FreezeScope freeze_phi(phi);
    zero_grad(theta);
    AttentionStack::Forward fwd = perception_->forward(mb.observations);
    Tensor raw_cost = perception_->use_attention() ? attention_cost(fwd.attention)
                                                   : Tensor::scalar(0.0);
    Tensor logits = policy_->logits_only(fwd.features);
    Tensor log_probs = gather_rows(log_softmax(logits), mb.actions);
    Tensor u_policy = mean(mul(log_probs, mb.advantages));
    Tensor u_leader =
        leader_utility(u_policy, raw_cost, cfg_.lambda_cost, cfg_.alpha_coop, cfg_.use_eq9_weighting);
    backward(neg(u_leader));

    delta.leader_utility = u_leader.value();
    delta.u_policy = u_policy.value();
    delta.raw_cost = raw_cost.value();
    delta.weighted_cost = cfg_.lambda_cost * delta.raw_cost;
    delta.grad_norm = grad_norm(theta);
    delta.clip_factor = clip_global_norm(theta, cfg_.max_grad_norm);
    delta.post_clip_norm = grad_norm(theta);
    adam_step(theta, adam_leader_, cfg_.learning_rate);
  }

  if (cfg_.debug_stage_isolation && param_checksum(phi) != phi_checksum) {
    throw Error(ErrorCode::usage, "leader stage mutated policy parameters");
  }
  return delta;
}

FollowerDelta Trainer::follower_stage(const Minibatch& mb) {
  std::vector<Tensor> theta = perception_->params();
  std::vector<Tensor> phi = policy_->params();
  uint64_t theta_checksum = 0;
  if (cfg_.debug_stage_isolation) theta_checksum = param_checksum(theta);

  FollowerDelta delta;
  {
    // features recomputed from the post-update theta, gradient-free
    FreezeScope freeze_theta(theta);
    zero_grad(phi);
    AttentionStack::Forward fwd = perception_->forward(mb.observations);
    if (perception_->use_attention()) {
      PerceptionCost cost = perception_cost(fwd.attention, cfg_.lambda_cost);
      delta.raw_cost = cost.raw_cost;
      delta.weighted_cost = cost.weighted_cost;
    }
    FollowerBatch batch{fwd.features, mb.actions,       mb.old_log_probs,
                        mb.advantages, mb.returns,      mb.advantage_mean,
                        mb.advantage_std};
    FollowerLossParts parts = follower_loss(batch, *policy_, cfg_.clip_epsilon, cfg_.value_coef,
                                            cfg_.entropy_coef, delta.weighted_cost);
    backward(parts.loss);
    delta.loss = parts.loss.value();
    delta.clip_loss = parts.clip_loss;
    delta.value_loss = parts.value_loss;
    delta.entropy = parts.entropy;
    delta.grad_norm = grad_norm(phi);
    delta.clip_factor = clip_global_norm(phi, cfg_.max_grad_norm);
    delta.post_clip_norm = grad_norm(phi);
    adam_step(phi, adam_follower_, cfg_.learning_rate);
  }

  if (cfg_.debug_stage_isolation && param_checksum(theta) != theta_checksum) {
    throw Error(ErrorCode::usage, "follower stage mutated perception parameters");
  }
  return delta;
}

FollowerDelta Trainer::joint_stage(const Minibatch& mb) {
  std::vector<Tensor> all = perception_->params();
  std::vector<Tensor> phi = policy_->params();
  all.insert(all.end(), phi.begin(), phi.end());

  zero_grad(all);
  AttentionStack::Forward fwd = perception_->forward(mb.observations);
  FollowerDelta delta;
  if (perception_->use_attention()) {
    // measured for logging; the baseline objective has no cost term
    std::vector<Tensor> det;
    det.reserve(fwd.attention.size());
    for (const Tensor& a : fwd.attention) det.push_back(detach(a));
    PerceptionCost cost = perception_cost(det, cfg_.lambda_cost);
    delta.raw_cost = cost.raw_cost;
    delta.weighted_cost = cost.weighted_cost;
  }
  FollowerBatch batch{fwd.features, mb.actions,       mb.old_log_probs,
                      mb.advantages, mb.returns,      mb.advantage_mean,
                      mb.advantage_std};
  FollowerLossParts parts =
      follower_loss(batch, *policy_, cfg_.clip_epsilon, cfg_.value_coef, cfg_.entropy_coef, 0.0);
  backward(parts.loss);
  delta.loss = parts.loss.value();
  delta.clip_loss = parts.clip_loss;
  delta.value_loss = parts.value_loss;
  delta.entropy = parts.entropy;
  delta.grad_norm = grad_norm(all);
  delta.clip_factor = clip_global_norm(all, cfg_.max_grad_norm);
  delta.post_clip_norm = grad_norm(all);
  adam_step(all, adam_joint_, cfg_.learning_rate);
  return delta;
}

std::vector<IterationMetrics> Trainer::train(const std::function<void(int64_t)>& on_iteration) {
  const int64_t iterations = cfg_.total_timesteps / cfg_.rollout_length;
  const int rollout = static_cast<int>(cfg_.rollout_length);
  const int batch = static_cast<int>(cfg_.batch_size);
  const int n_minibatches = rollout / batch;
  if (n_minibatches < 1) {
    throw Error(ErrorCode::config, "train: batch_size exceeds rollout_length");
  }
  const bool sprig_mode = cfg_.mode == "sprig";

  std::vector<IterationMetrics> series;
  int64_t env_steps = 0;
  double t_start = now_seconds();

  for (int64_t iter = 0; iter < iterations; ++iter) {
    const char* phase = "rollout";
    try {
      Trajectory traj = collect_rollout(rollout);
      env_steps += rollout;
      AdvantageBatch adv = normalize(compute_gae(traj, cfg_.gamma, cfg_.gae_lambda));

      std::vector<int> order(static_cast<size_t>(rollout));
      std::iota(order.begin(), order.end(), 0);

      IterationMetrics m;
      m.iteration = iter;
      m.env_steps = env_steps;
      int64_t leader_passes = 0, follower_passes = 0;
      for (int64_t epoch = 0; epoch < cfg_.ppo_epochs; ++epoch) {
        shuffle_rng_.shuffle(order);
        for (int start = 0; start + batch <= rollout; start += batch) {
          std::vector<int> idx(order.begin() + start, order.begin() + start + batch);
          Minibatch mb = materialize(traj, adv, idx);
          if (sprig_mode) {
            phase = "leader stage";
            LeaderDelta ld = leader_stage(mb);
            m.leader_utility += ld.leader_utility;
            m.u_policy += ld.u_policy;
            m.raw_cost += ld.raw_cost;
            m.weighted_cost += ld.weighted_cost;
            m.leader_grad_norm += ld.grad_norm;
            ++leader_passes;
            phase = "follower stage";
            FollowerDelta fd = follower_stage(mb);
            m.clip_loss += fd.clip_loss;
            m.value_loss += fd.value_loss;
            m.entropy += fd.entropy;
            m.follower_grad_norm += fd.grad_norm;
            ++follower_passes;
          } else {
            phase = "joint stage";
            FollowerDelta fd = joint_stage(mb);
            m.raw_cost += fd.raw_cost;
            m.weighted_cost += fd.weighted_cost;
            m.clip_loss += fd.clip_loss;
            m.value_loss += fd.value_loss;
            m.entropy += fd.entropy;
            m.follower_grad_norm += fd.grad_norm;
            ++follower_passes;
          }
          phase = "rollout";
        }
      }
      if (leader_passes > 0) {
        m.leader_utility /= static_cast<double>(leader_passes);
        m.u_policy /= static_cast<double>(leader_passes);
        m.leader_grad_norm /= static_cast<double>(leader_passes);
      }
      if (follower_passes > 0) {
        m.clip_loss /= static_cast<double>(follower_passes);
        m.value_loss /= static_cast<double>(follower_passes);
        m.entropy /= static_cast<double>(follower_passes);
        m.follower_grad_norm /= static_cast<double>(follower_passes);
      }
      int64_t cost_passes = sprig_mode ? leader_passes : follower_passes;
      if (cost_passes > 0) {
        m.raw_cost /= static_cast<double>(cost_passes);
        m.weighted_cost /= static_cast<double>(cost_passes);
      }
      if (!finished_episode_returns_.empty()) {
        double s = std::accumulate(finished_episode_returns_.begin(),
                                   finished_episode_returns_.end(), 0.0);
        last_mean_episode_return_ = s / static_cast<double>(finished_episode_returns_.size());
      }
      m.mean_episode_return = last_mean_episode_return_;
      m.wall_time_s = now_seconds() - t_start;
      series.push_back(m);
      if (on_iteration) on_iteration(iter);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::numeric) {
        std::ostringstream msg;
        msg << "training aborted at iteration " << iter << " (" << phase << "): " << e.what();
        throw Error(ErrorCode::numeric, msg.str());
      }
      throw;
    }
  }
  return series;
}

namespace {

Checkpoint make_checkpoint(Trainer& trainer) {
  Checkpoint ckpt;
  ckpt.config_snapshot = serialize_config(trainer.config());
  for (const auto& [name, tensor] : trainer.perception().named_params()) {
    ckpt.params.emplace_back("perception." + name, tensor);
  }
  for (const auto& [name, tensor] : trainer.policy().named_params()) {
    ckpt.params.emplace_back("policy." + name, tensor);
  }
  return ckpt;
}

void load_params_into(const Checkpoint& ckpt, const std::string& prefix,
                      std::vector<std::pair<std::string, Tensor>> named) {
  for (auto& [name, tensor] : named) {
    const Tensor* src = ckpt.find(prefix + name);
    if (!src) {
      throw Error(ErrorCode::format, "checkpoint: missing parameter '" + prefix + name + "'");
    }
    if (src->shape() != tensor.shape()) {
      throw Error(ErrorCode::format, "checkpoint: shape mismatch for '" + prefix + name + "'");
    }
    tensor.mutable_data() = src->data();
  }
}

}  // namespace

void run_training(const TrainerConfig& cfg, uint64_t run_seed, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  Trainer trainer(cfg, run_seed);
  double t0 = now_seconds();
  std::string status = "completed";
  std::string failure;
  std::vector<IterationMetrics> series;
  try {
    series = trainer.train([&](int64_t iter) {
      if (cfg.checkpoint_cadence > 0 && (iter + 1) % cfg.checkpoint_cadence == 0) {
        char name[64];
        std::snprintf(name, sizeof(name), "checkpoint_iter%06lld.bin",
                      static_cast<long long>(iter + 1));
        save_checkpoint(make_checkpoint(trainer), (fs::path(out_dir) / name).string());
      }
    });
  } catch (const Error& e) {
    status = "aborted";
    failure = e.what();
  }

  {
    std::ofstream metrics(fs::path(out_dir) / "metrics.csv");
    metrics << metrics_csv_header() << '\n';
    for (const IterationMetrics& m : series) metrics << metrics_csv_row(m) << '\n';
  }
  {
    std::ofstream timing(fs::path(out_dir) / "timing.csv");
    timing << "iteration,wall_time_s\n";
    for (const IterationMetrics& m : series) {
      timing << m.iteration << ',' << fmt(m.wall_time_s) << '\n';
    }
  }
  if (status == "completed") {
    save_checkpoint(make_checkpoint(trainer), (fs::path(out_dir) / "checkpoint_final.bin").string());
  }
  {
    std::ofstream manifest(fs::path(out_dir) / "manifest.txt");
    manifest << "version = " << artifact_version() << '\n';
    manifest << "config_hash = " << config_hash(cfg) << '\n';
    manifest << "run_seed = " << run_seed << '\n';
    manifest << "mode = " << cfg.mode << '\n';
    manifest << "status = " << status << '\n';
    if (!failure.empty()) manifest << "failure = " << failure << '\n';
    manifest << "wall_time_s = " << fmt(now_seconds() - t0) << '\n';
    manifest << "# config snapshot\n" << serialize_config(cfg);
  }
  if (status != "completed") {
    throw Error(ErrorCode::numeric, "run " + std::to_string(run_seed) + " aborted: " + failure);
  }
}

EvalResult evaluate_checkpoint(const std::string& checkpoint_path,
                               const std::optional<std::string>& env_override, int episodes,
                               uint64_t seed) {
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  TrainerConfig cfg = parse_config_text(ckpt.config_snapshot);
  if (env_override) {
    set_config_key(cfg, "env", *env_override);
  }

  auto env = make_environment(cfg.env, static_cast<int>(cfg.env_height),
                              static_cast<int>(cfg.env_width), static_cast<int>(cfg.spawn_period),
                              static_cast<int>(cfg.max_objects),
                              static_cast<int>(cfg.max_episode_length));
  Rng init_rng(1);
  bool attention = cfg.mode == "sprig" || cfg.baseline_torso == "attention";
  AttentionStack perception(kFrameStack, env->height(), env->width(), init_rng, 128, attention);
  PolicyNet policy(perception.feature_dim(), env->n_actions(), init_rng);
  load_params_into(ckpt, "perception.", perception.named_params());
  load_params_into(ckpt, "policy.", policy.named_params());

  NoGradScope ng;
  Rng episode_seeds(split_seed(seed, 7));
  EvalResult res;
  std::vector<double> obs;
  for (int ep = 0; ep < episodes; ++ep) {
    env->reset(episode_seeds.next_u64(), obs);
    double ret = 0.0;
    bool done = false;
    while (!done) {
      Tensor obs_t = Tensor::from_data({1, kFrameStack, env->height(), env->width()}, obs);
      int action = greedy_action(perception.forward(obs_t).features, policy);
      double reward = 0.0;
      env->step(action, obs, reward, done);
      ret += reward;
    }
    res.episode_returns.push_back(ret);
  }
  double mean = std::accumulate(res.episode_returns.begin(), res.episode_returns.end(), 0.0) /
                static_cast<double>(episodes);
  double var = 0.0;
  for (double r : res.episode_returns) var += (r - mean) * (r - mean);
  res.mean_return = mean;
  res.std_return = std::sqrt(var / static_cast<double>(episodes));
  return res;
}

EvalResult random_policy_return(const TrainerConfig& cfg, int episodes, uint64_t seed) {
  auto env = make_environment(cfg.env, static_cast<int>(cfg.env_height),
                              static_cast<int>(cfg.env_width), static_cast<int>(cfg.spawn_period),
                              static_cast<int>(cfg.max_objects),
                              static_cast<int>(cfg.max_episode_length));
  Rng episode_seeds(split_seed(seed, 7));
  Rng action_rng(split_seed(seed, 8));
  EvalResult res;
  std::vector<double> obs;
  for (int ep = 0; ep < episodes; ++ep) {
    env->reset(episode_seeds.next_u64(), obs);
    double ret = 0.0;
    bool done = false;
    while (!done) {
      int action = static_cast<int>(action_rng.next_below(env->n_actions()));
      double reward = 0.0;
      env->step(action, obs, reward, done);
      ret += reward;
    }
    res.episode_returns.push_back(ret);
  }
  double mean = std::accumulate(res.episode_returns.begin(), res.episode_returns.end(), 0.0) /
                static_cast<double>(episodes);
  double var = 0.0;
  for (double r : res.episode_returns) var += (r - mean) * (r - mean);
  res.mean_return = mean;
  res.std_return = std::sqrt(var / static_cast<double>(episodes));
  return res;
}

}  // namespace sprig
