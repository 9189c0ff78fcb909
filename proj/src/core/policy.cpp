#include "policy.hpp"

#include <cmath>

#include "perception.hpp"

namespace sprig {

PolicyNet::PolicyNet(int feature_dim, int n_actions, Rng& rng, int hidden)
    : n_actions_(n_actions) {
  if (feature_dim < 1 || n_actions < 1 || hidden < 1) {
    throw Error(ErrorCode::config, "policy net: bad dimensions");
  }
  w1_ = orthogonal_matrix(feature_dim, hidden, std::sqrt(2.0), rng);
  b1_ = Tensor::zeros({hidden}, true);
  w2_ = orthogonal_matrix(hidden, hidden, std::sqrt(2.0), rng);
  b2_ = Tensor::zeros({hidden}, true);
  wa_ = orthogonal_matrix(hidden, n_actions, 0.01, rng);
  ba_ = Tensor::zeros({n_actions}, true);
  wv_ = orthogonal_matrix(hidden, 1, 1.0, rng);
  bv_ = Tensor::zeros({1}, true);
}

std::vector<Tensor> PolicyNet::params() const {
  return {w1_, b1_, w2_, b2_, wa_, ba_, wv_, bv_};
}

std::vector<std::pair<std::string, Tensor>> PolicyNet::named_params() const {
  return {{"mlp1.w", w1_}, {"mlp1.b", b1_}, {"mlp2.w", w2_}, {"mlp2.b", b2_},
          {"action.w", wa_}, {"action.b", ba_}, {"value.w", wv_}, {"value.b", bv_}};
}

Tensor PolicyNet::torso(const Tensor& features) const {
  Tensor h1 = sprig::tanh(add_bias(matmul(features, w1_), b1_));
  return sprig::tanh(add_bias(matmul(h1, w2_), b2_));
}

PolicyNet::Forward PolicyNet::forward(const Tensor& features) const {
  Tensor h = torso(features);
  Forward out;
  out.logits = add_bias(matmul(h, wa_), ba_);
  out.value = add_bias(matmul(h, wv_), bv_);
  return out;
}

Tensor PolicyNet::logits_only(const Tensor& features) const {
  return add_bias(matmul(torso(features), wa_), ba_);
}

ActionSample act(const Tensor& feature_row, const PolicyNet& net, Rng& rng) {
  NoGradScope ng;
  Tensor row = feature_row.rank() == 1
                   ? reshape(feature_row, {1, feature_row.shape()[0]})
                   : feature_row;
  PolicyNet::Forward f = net.forward(row);
  Tensor logp = log_softmax(f.logits);
  int n = net.n_actions();
  double u = rng.next_double();
  double cdf = 0.0;
  int action = n - 1;
  for (int a = 0; a < n; ++a) {
    cdf += std::exp(logp.item(a));
    if (u < cdf) {
      action = a;
      break;
    }
  }
  return ActionSample{action, logp.item(action), f.value.item(0)};
}

int greedy_action(const Tensor& feature_row, const PolicyNet& net) {
  NoGradScope ng;
  Tensor row = feature_row.rank() == 1
                   ? reshape(feature_row, {1, feature_row.shape()[0]})
                   : feature_row;
  Tensor logits = net.logits_only(row);
  int best = 0;
  for (int a = 1; a < net.n_actions(); ++a) {
    if (logits.item(a) > logits.item(best)) best = a;
  }
  return best;
}

Tensor entropy(const Tensor& logits) {
  Tensor p = softmax(logits);
  Tensor logp = log_softmax(logits);
  // mean over batch of per-row sums == full sum / batch
  int64_t batch = logits.numel() / logits.shape().back();
  return scale(sum(mul(p, logp)), -1.0 / static_cast<double>(batch));
}

double entropy_value(const std::vector<double>& probabilities) {
  double h = 0.0;
  for (double p : probabilities) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

Tensor ppo_ratio(const Tensor& new_log_prob, const Tensor& old_log_prob) {
  return sprig::exp(sub(new_log_prob, old_log_prob));
}

std::vector<double> ppo_ratio(const std::vector<double>& new_log_prob,
                              const std::vector<double>& old_log_prob) {
  if (new_log_prob.size() != old_log_prob.size()) {
    throw Error(ErrorCode::shape, "ppo_ratio: vector lengths differ");
  }
  std::vector<double> out(new_log_prob.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::exp(new_log_prob[i] - old_log_prob[i]);
  return out;
}

Tensor clip_loss(const Tensor& ratio, const Tensor& advantage, double epsilon) {
  if (epsilon <= 0.0) throw Error(ErrorCode::config, "clip_loss: epsilon must be positive");
  Tensor unclipped = mul(ratio, advantage);
  Tensor clipped = mul(clip(ratio, 1.0 - epsilon, 1.0 + epsilon), advantage);
  return mean(minimum(unclipped, clipped));
}

double clip_loss(const std::vector<double>& ratio, const std::vector<double>& advantage,
                 double epsilon) {
  return clip_loss(Tensor::from_data({static_cast<int>(ratio.size())}, ratio),
                   Tensor::from_data({static_cast<int>(advantage.size())}, advantage), epsilon)
      .value();
}

FollowerLossParts follower_loss(const FollowerBatch& batch, const PolicyNet& net, double epsilon,
                                double value_coef, double entropy_coef,
                                double perception_cost_term) {
  double adv_mean = batch.advantage_mean;
  double adv_std = batch.advantage_std;
  if (std::isnan(adv_mean) || std::isnan(adv_std)) {
    const auto& a = batch.advantages.data();
    double m = 0.0;
    for (double x : a) m += x;
    m /= static_cast<double>(a.size());
    double var = 0.0;
    for (double x : a) var += (x - m) * (x - m);
    adv_mean = m;
    adv_std = std::sqrt(var / static_cast<double>(a.size()));
  }
  if (std::fabs(adv_mean) > 0.1 || std::fabs(adv_std - 1.0) > 0.1) {
    throw Error(ErrorCode::usage,
                "follower_loss: advantage batch is not normalized (|mean| <= 0.1 and "
                "|std-1| <= 0.1 required)");
  }
  PolicyNet::Forward f = net.forward(batch.features);
  Tensor logp = log_softmax(f.logits);
  Tensor new_log_prob = gather_rows(logp, batch.actions);
  Tensor ratio = ppo_ratio(new_log_prob, batch.old_log_probs);
  Tensor l_clip = clip_loss(ratio, batch.advantages, epsilon);

  int b = batch.features.shape()[0];
  Tensor v = reshape(f.value, {b});
  Tensor verr = sub(v, batch.returns);
  Tensor l_value = mean(mul(verr, verr));
  Tensor h = entropy(f.logits);

  Tensor loss = add(add(neg(l_clip), scale(l_value, value_coef)),
                    add(scale(h, -entropy_coef), Tensor::scalar(perception_cost_term)));
  return FollowerLossParts{loss, l_clip.value(), l_value.value(), h.value()};
}

}  // namespace sprig
