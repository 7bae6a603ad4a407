#pragma once

// Tactic-conditioned hybrid policy. One network head scores the discrete
// resource actions and (optionally) the tactic codes; the maneuver head is a
// squashed Gaussian over [obs ++ conditioning vector], where the
// conditioning vector is the codebook entry of the chosen code. A separate
// critic estimates the state value.

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "tart/errors.hpp"
#include "tart/nn.hpp"
#include "tart/pamdp.hpp"

namespace tart::policy {

using nn::Mat;

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;
inline constexpr double kHalfLog2Pi = 0.91893853320467274178;

enum class ActMode { kSample, kGreedy };

struct PolicyConfig {
  int obs_dim = 0;
  ActionSpec spec;
  int num_codes = 0;  // 0: no code head
  int cond_dim = 0;   // width of the conditioning vector (0: none)
  std::vector<int> hidden{64, 64};
  double init_logstd = -0.5;
};

// What the policy actually sampled; enough to recompute log-probabilities.
struct PolicyAction {
  int discrete = 0;
  int code = -1;
  bool code_selected = false;  // the code term enters the log-prob only when chosen this step
  Vec raw;                     // pre-squash maneuver sample, max_param_dim wide
  Vec cond;                    // conditioning vector seen by the maneuver head
};

struct PolicyOutput {
  Vec discrete_probs;
  Vec code_probs;
  Vec maneuver_mean;
  Vec maneuver_logstd;
  double value = 0.0;
};

struct Conditioning {
  bool select_code = true;
  int held_code = -1;
  const Mat* code_table = nullptr;  // cond_dim x num_codes
  Vec fixed;                        // used when there is no code head
};

struct ActResult {
  HybridAction action;
  PolicyAction pa;
  double log_prob = 0.0;
  double value = 0.0;
};

struct EvalResult {
  Vec log_probs;
  Vec entropy;
  Vec values;
};

// Squash u -> [lo, hi] through tanh.
inline double squash(double u, const Interval& b) { return b.lo + (b.hi - b.lo) * 0.5 * (std::tanh(u) + 1.0); }

// log |d squash / du| computed without forming 1 - tanh^2.
inline double log_squash_jacobian(double u, const Interval& b) {
  const double a = std::abs(u);
  return std::log(0.5 * (b.hi - b.lo)) + 2.0 * (std::numbers::ln2 - a - std::log1p(std::exp(-2.0 * a)));
}

inline Vec log_softmax(const Vec& logits) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return logits.array() - lse;
}

class PolicyNet {
 public:
  struct Tape {
    nn::Mlp::Tape actor, maneuver, critic;
    Mat logits;
    Mat mean;
  };

  PolicyNet() = default;
  PolicyNet(const PolicyConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.spec.check();
    if (cfg.obs_dim < 1) throw ConfigError("policy obs_dim must be >= 1");
    const int heads = cfg.spec.num_discrete + cfg.num_codes;
    actor_ = nn::Mlp("actor", cfg.obs_dim, cfg.hidden, heads, rng, 0.01);
    maneuver_ = nn::Mlp("maneuver", cfg.obs_dim + cfg.cond_dim, cfg.hidden, std::max(1, cfg.spec.max_param_dim()), rng, 0.01);
    critic_ = nn::Mlp("critic", cfg.obs_dim, cfg.hidden, 1, rng, 1.0);
    logstd_ = nn::Param("logstd", Mat::Constant(std::max(1, cfg.spec.max_param_dim()), 1, cfg.init_logstd));
  }

  const PolicyConfig& config() const { return cfg_; }
  int param_dim() const { return cfg_.spec.max_param_dim(); }

  nn::ParamList params() {
    return nn::concat({actor_.params(), maneuver_.params(), critic_.params(), nn::ParamList{&logstd_}});
  }

  Vec logstd() const { return logstd_.value.col(0).cwiseMax(kLogStdMin).cwiseMin(kLogStdMax); }

  PolicyOutput output(const Vec& obs, const Vec& cond) const {
    check_obs(obs.size());
    PolicyOutput out;
    const Vec logits = actor_.forward(obs).col(0);
    out.discrete_probs = log_softmax(logits.head(cfg_.spec.num_discrete)).array().exp();
    if (cfg_.num_codes > 0) out.code_probs = log_softmax(logits.tail(cfg_.num_codes)).array().exp();
    out.maneuver_mean = maneuver_.forward(stack(obs, cond)).col(0);
    out.maneuver_logstd = logstd();
    out.value = critic_.forward(obs)(0, 0);
    return out;
  }

  double value(const Vec& obs) const {
    check_obs(obs.size());
    return critic_.forward(obs)(0, 0);
  }

  ActResult act(const Vec& obs, const Conditioning& cond, ActMode mode, Rng& rng) const {
    check_obs(obs.size());
    const int kd = cfg_.spec.num_discrete;
    const Vec logits = actor_.forward(obs).col(0);
    const Vec pd = log_softmax(logits.head(kd)).array().exp();
    PolicyAction pa;
    pa.discrete = pick(pd, mode, rng);
    if (cfg_.num_codes > 0) {
      if (cond.select_code || cond.held_code < 0) {
        pa.code = pick(log_softmax(logits.tail(cfg_.num_codes)).array().exp(), mode, rng);
        pa.code_selected = true;
      } else {
        pa.code = cond.held_code;
      }
      if (!cond.code_table) throw RejectionError("policy has a code head but no code table was given");
      pa.cond = cond.code_table->col(pa.code);
    } else {
      pa.cond = cond.fixed;
    }
    if (pa.cond.size() != cfg_.cond_dim) throw RejectionError("conditioning vector width mismatch");
    const Vec mean = maneuver_.forward(stack(obs, pa.cond)).col(0);
    const Vec std = logstd().array().exp();
    pa.raw = mean;
    if (mode == ActMode::kSample)
      for (Eigen::Index j = 0; j < pa.raw.size(); ++j) pa.raw[j] += std[j] * standard_normal(rng);
    ActResult r;
    r.pa = pa;
    r.action = to_env_action(pa);
    Mat o(obs.size(), 1);
    o.col(0) = obs;
    const EvalResult ev = evaluate(o, std::span<const PolicyAction>(&r.pa, 1));
    r.log_prob = ev.log_probs[0];
    r.value = ev.values[0];
    return r;
  }

  HybridAction to_env_action(const PolicyAction& pa) const {
    HybridAction a;
    a.discrete = pa.discrete;
    const int dim = cfg_.spec.param_dims[static_cast<std::size_t>(pa.discrete)];
    const auto& bounds = cfg_.spec.param_bounds[static_cast<std::size_t>(pa.discrete)];
    a.params = Vec(dim);
    for (int j = 0; j < dim; ++j) a.params[j] = squash(pa.raw[j], bounds[j]);
    return a;
  }

  // Joint log-probabilities, entropies and values for a batch (columns of
  // obs). Fills `tape` for a later backward().
  EvalResult evaluate(const Mat& obs, std::span<const PolicyAction> actions, Tape* tape = nullptr) const {
    check_obs(obs.rows());
    const Eigen::Index n = obs.cols();
    if (static_cast<Eigen::Index>(actions.size()) != n) throw RejectionError("evaluate: batch size mismatch");
    const int kd = cfg_.spec.num_discrete, kc = cfg_.num_codes, p = std::max(1, param_dim());
    Mat cin(cfg_.obs_dim + cfg_.cond_dim, n);
    cin.topRows(cfg_.obs_dim) = obs;
    for (Eigen::Index i = 0; i < n; ++i) {
      const PolicyAction& a = actions[static_cast<std::size_t>(i)];
      if (a.discrete < 0 || a.discrete >= kd) throw RejectionError("evaluate: discrete index out of range");
      if (a.cond.size() != cfg_.cond_dim) throw RejectionError("evaluate: conditioning width mismatch");
      if (a.raw.size() != p && param_dim() > 0) throw RejectionError("evaluate: maneuver width mismatch");
      if (kc > 0 && a.code_selected && (a.code < 0 || a.code >= kc))
        throw RejectionError("evaluate: code index out of range");
      if (cfg_.cond_dim > 0) cin.col(i).tail(cfg_.cond_dim) = a.cond;
    }
    Tape local;
    Tape& t = tape ? *tape : local;
    t.logits = actor_.forward(obs, &t.actor);
    t.mean = maneuver_.forward(cin, &t.maneuver);
    const Mat values = critic_.forward(obs, &t.critic);
    const Vec ls = logstd();

    EvalResult r;
    r.log_probs.resize(n);
    r.entropy.resize(n);
    r.values = values.row(0).transpose();
    for (Eigen::Index i = 0; i < n; ++i) {
      const PolicyAction& a = actions[static_cast<std::size_t>(i)];
      const Vec lpd = log_softmax(t.logits.col(i).head(kd));
      double lp = lpd[a.discrete];
      double ent = -(lpd.array().exp() * lpd.array()).sum();
      if (kc > 0 && a.code_selected) {
        const Vec lpc = log_softmax(t.logits.col(i).tail(kc));
        lp += lpc[a.code];
        ent += -(lpc.array().exp() * lpc.array()).sum();
      }
      const int dim = cfg_.spec.param_dims[static_cast<std::size_t>(a.discrete)];
      const auto& bounds = cfg_.spec.param_bounds[static_cast<std::size_t>(a.discrete)];
      for (int j = 0; j < dim; ++j) {
        const double z = (a.raw[j] - t.mean(j, i)) * std::exp(-ls[j]);
        lp += -0.5 * z * z - ls[j] - kHalfLog2Pi - log_squash_jacobian(a.raw[j], bounds[j]);
        ent += 0.5 + kHalfLog2Pi + ls[j];
      }
      r.log_probs[i] = lp;
      r.entropy[i] = ent;
    }
    return r;
  }

  // Accumulates gradients of sum_i (g_logp[i] logp_i + g_ent[i] H_i + g_val[i] V_i).
  void backward(const Tape& t, const Mat& obs, std::span<const PolicyAction> actions, const Vec& g_logp,
                const Vec& g_ent, const Vec& g_val) {
    const Eigen::Index n = obs.cols();
    const int kd = cfg_.spec.num_discrete, kc = cfg_.num_codes;
    const Vec ls = logstd();
    Mat d_logits = Mat::Zero(t.logits.rows(), n);
    Mat d_mean = Mat::Zero(t.mean.rows(), n);
    Vec d_logstd = Vec::Zero(ls.size());
    const auto softmax_grad = [](const Vec& lp, int taken, double gl, double ge) {
      const Vec p = lp.array().exp();
      const double h = -(p.array() * lp.array()).sum();
      Vec g = -gl * p;
      if (taken >= 0) g[taken] += gl;
      g.array() += ge * (-p.array() * (lp.array() + h));
      return g;
    };
    for (Eigen::Index i = 0; i < n; ++i) {
      const PolicyAction& a = actions[static_cast<std::size_t>(i)];
      d_logits.col(i).head(kd) = softmax_grad(log_softmax(t.logits.col(i).head(kd)), a.discrete, g_logp[i], g_ent[i]);
      if (kc > 0 && a.code_selected)
        d_logits.col(i).tail(kc) = softmax_grad(log_softmax(t.logits.col(i).tail(kc)), a.code, g_logp[i], g_ent[i]);
      const int dim = cfg_.spec.param_dims[static_cast<std::size_t>(a.discrete)];
      for (int j = 0; j < dim; ++j) {
        const double inv_var = std::exp(-2.0 * ls[j]);
        const double diff = a.raw[j] - t.mean(j, i);
        d_mean(j, i) = g_logp[i] * diff * inv_var;
        d_logstd[j] += g_logp[i] * (diff * diff * inv_var - 1.0) + g_ent[i];
      }
    }
    actor_.backward(t.actor, d_logits);
    maneuver_.backward(t.maneuver, d_mean);
    critic_.backward(t.critic, g_val.transpose());
    for (Eigen::Index j = 0; j < d_logstd.size(); ++j) {
      const double v = logstd_.value(j, 0);
      if (v >= kLogStdMin && v <= kLogStdMax) logstd_.grad(j, 0) += d_logstd[j];
    }
  }

 private:
  void check_obs(Eigen::Index rows) const {
    if (rows != cfg_.obs_dim)
      throw RejectionError("observation width " + std::to_string(rows) + " != " + std::to_string(cfg_.obs_dim));
  }

  static Vec stack(const Vec& a, const Vec& b) {
    Vec out(a.size() + b.size());
    out << a, b;
    return out;
  }

  static int pick(const Vec& probs, ActMode mode, Rng& rng) {
    Eigen::Index best = 0;
    if (mode == ActMode::kGreedy) {
      probs.maxCoeff(&best);
      return static_cast<int>(best);
    }
    double u = uniform01(rng);
    for (Eigen::Index k = 0; k < probs.size(); ++k) {
      u -= probs[k];
      if (u < 0.0) return static_cast<int>(k);
    }
    return static_cast<int>(probs.size() - 1);
  }

  PolicyConfig cfg_;
  nn::Mlp actor_;
  nn::Mlp maneuver_;
  nn::Mlp critic_;
  nn::Param logstd_;
};

}  // namespace tart::policy
