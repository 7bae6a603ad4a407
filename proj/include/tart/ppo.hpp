#pragma once

// Generalised advantage estimation and the clipped-surrogate update.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "tart/policy.hpp"

namespace tart::ppo {

using nn::Mat;
using policy::PolicyAction;
using policy::PolicyNet;

struct GaeResult {
  Vec advantages;
  Vec value_targets;
};

// dones[t] marks the last step of an episode: no bootstrap from t+1.
// `last_value` bootstraps the step after the final one when it is not done.
inline GaeResult gae_advantages(std::span<const double> rewards, std::span<const double> values,
                                std::span<const char> dones, double gamma, double lambda, double last_value = 0.0) {
  const std::size_t n = rewards.size();
  if (values.size() != n || dones.size() != n) throw RejectionError("gae: rewards, values and dones differ in length");
  if (gamma < 0.0 || gamma > 1.0 || lambda < 0.0 || lambda > 1.0) throw RejectionError("gae: gamma and lambda must lie in [0, 1]");
  GaeResult r;
  r.advantages = Vec::Zero(static_cast<Eigen::Index>(n));
  double running = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const bool terminal = dones[i] != 0;
    const double next_value = terminal ? 0.0 : (i + 1 < n ? values[i + 1] : last_value);
    const double delta = rewards[i] + gamma * next_value - values[i];
    running = delta + (terminal ? 0.0 : gamma * lambda * running);
    r.advantages[static_cast<Eigen::Index>(i)] = running;
  }
  r.value_targets = r.advantages + Eigen::Map<const Vec>(values.data(), static_cast<Eigen::Index>(n));
  return r;
}

struct RolloutBatch {
  Mat observations;  // obs_dim x N
  std::vector<PolicyAction> actions;
  Vec old_log_probs;
  Vec rewards;
  Vec value_targets;
  Vec advantages;
  std::vector<char> dones;

  std::size_t size() const { return actions.size(); }

  void check() const {
    const auto n = static_cast<Eigen::Index>(actions.size());
    if (observations.cols() != n || old_log_probs.size() != n || value_targets.size() != n ||
        advantages.size() != n || (rewards.size() != 0 && rewards.size() != n) ||
        (!dones.empty() && static_cast<Eigen::Index>(dones.size()) != n))
      throw RejectionError("rollout batch arrays differ in length");
    if (!advantages.allFinite()) throw RejectionError("rollout batch advantages are not finite");
  }
};

struct PpoConfig {
  double gamma = 0.99;
  double lambda = 0.95;
  double clip = 0.2;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  int epochs = 4;
  int minibatch = 256;
  bool normalize_advantages = true;
};

struct PpoLoss {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double total = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
};

struct PpoStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double total_loss = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  int minibatches = 0;
  bool aborted = false;
  std::string diagnostic;
};

// Mean/std normalisation with a 1e-8 std floor. A single sample has no
// spread to normalise against and is returned unchanged.
inline Vec normalize_advantages(const Vec& adv) {
  if (adv.size() < 2) return adv;
  const double mean = adv.mean();
  const double var = (adv.array() - mean).square().mean();
  return (adv.array() - mean) / std::max(std::sqrt(var), 1e-8);
}

// Clipped surrogate + value + entropy loss on the samples `idx`. When
// `accumulate` is set, parameter gradients of the total are added to `net`.
inline PpoLoss ppo_loss(PolicyNet& net, const RolloutBatch& batch, const Vec& advantages, std::span<const int> idx,
                        const PpoConfig& cfg, bool accumulate) {
  const auto m = static_cast<Eigen::Index>(idx.size());
  Mat obs(batch.observations.rows(), m);
  std::vector<PolicyAction> acts;
  acts.reserve(idx.size());
  for (Eigen::Index i = 0; i < m; ++i) {
    obs.col(i) = batch.observations.col(idx[static_cast<std::size_t>(i)]);
    acts.push_back(batch.actions[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
  }
  PolicyNet::Tape tape;
  const policy::EvalResult ev = net.evaluate(obs, acts, &tape);
  PpoLoss l;
  Vec g_logp(m), g_ent(m), g_val(m);
  const double inv_m = 1.0 / static_cast<double>(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const int k = idx[static_cast<std::size_t>(i)];
    const double a = advantages[k];
    const double log_ratio = ev.log_probs[i] - batch.old_log_probs[k];
    const double ratio = std::exp(log_ratio);
    const double clipped = std::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
    const double unclipped_obj = ratio * a;
    const double clipped_obj = clipped * a;
    l.policy_loss -= std::min(unclipped_obj, clipped_obj) * inv_m;
    const bool grad_flows = unclipped_obj <= clipped_obj || (ratio >= 1.0 - cfg.clip && ratio <= 1.0 + cfg.clip);
    g_logp[i] = grad_flows ? -a * ratio * inv_m : 0.0;
    const double verr = ev.values[i] - batch.value_targets[k];
    l.value_loss += 0.5 * verr * verr * inv_m;
    g_val[i] = cfg.value_coef * verr * inv_m;
    l.entropy += ev.entropy[i] * inv_m;
    g_ent[i] = -cfg.entropy_coef * inv_m;
    l.approx_kl += ((ratio - 1.0) - log_ratio) * inv_m;
    if (std::abs(ratio - 1.0) > cfg.clip) l.clip_fraction += inv_m;
  }
  l.total = l.policy_loss + cfg.value_coef * l.value_loss - cfg.entropy_coef * l.entropy;
  if (accumulate) net.backward(tape, obs, acts, g_logp, g_ent, g_val);
  return l;
}

inline PpoStats ppo_update(PolicyNet& net, nn::Adam& opt, const RolloutBatch& batch, const PpoConfig& cfg, Rng& rng) {
  batch.check();
  PpoStats s;
  const int n = static_cast<int>(batch.size());
  if (n == 0) return s;
  const Vec adv = cfg.normalize_advantages ? normalize_advantages(batch.advantages) : batch.advantages;
  const nn::ParamList params = net.params();
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const int mb = std::max(1, std::min(cfg.minibatch, n));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (int start = 0; start < n; start += mb) {
      const int len = std::min(mb, n - start);
      const std::span<const int> idx(order.data() + start, static_cast<std::size_t>(len));
      nn::zero_grads(params);
      const PpoLoss l = ppo_loss(net, batch, adv, idx, cfg, true);
      if (!std::isfinite(l.total)) {
        s.aborted = true;
        s.diagnostic = "non-finite ppo loss at epoch " + std::to_string(epoch) + " (policy " +
                       std::to_string(l.policy_loss) + ", value " + std::to_string(l.value_loss) + ", entropy " +
                       std::to_string(l.entropy) + ")";
        return s;
      }
      opt.step(params);
      s.policy_loss += l.policy_loss;
      s.value_loss += l.value_loss;
      s.entropy += l.entropy;
      s.total_loss += l.total;
      s.approx_kl += l.approx_kl;
      s.clip_fraction += l.clip_fraction;
      ++s.minibatches;
    }
  }
  const double k = 1.0 / std::max(1, s.minibatches);
  s.policy_loss *= k;
  s.value_loss *= k;
  s.entropy *= k;
  s.total_loss *= k;
  s.approx_kl *= k;
  s.clip_fraction *= k;
  return s;
}

}  // namespace tart::ppo
