#pragma once

// Trainable agents. TacticAgent covers tart and its ablations plus the
// plain hybrid PPO baseline; HyarAgent is the reduced latent-action
// baseline.

#include <algorithm>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "tart/codebook.hpp"
#include "tart/config.hpp"
#include "tart/errors.hpp"
#include "tart/policy.hpp"
#include "tart/ppo.hpp"
#include "tart/repr.hpp"

namespace tart {

using nn::Mat;
using policy::ActMode;
using policy::PolicyAction;

// ---------------------------------------------------------------------------
// Variants

inline const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names{"tart", "hppo", "hyar_lite", "tart_no_vq", "tart_no_contrast"};
  return names;
}

inline void check_variant(const std::string& name) {
  const auto& names = variant_names();
  if (std::find(names.begin(), names.end(), name) == names.end())
    throw RejectionError("unknown variant '" + name + "'");
}

struct VariantSpec {
  std::string name;
  ConfigMap overrides;
};

// Config keys a variant changes relative to tart (besides its name).
inline ConfigMap variant_defaults(const std::string& name) {
  check_variant(name);
  if (name == "tart_no_contrast") return {{"w_nce", "0"}};
  return {};
}

inline RunConfig resolve_variant(const RunConfig& base, const VariantSpec& spec) {
  check_variant(spec.name);
  RunConfig c = base;
  c.variant = spec.name;
  apply_overrides(c, variant_defaults(spec.name));
  apply_overrides(c, spec.overrides);
  return c;
}

// ---------------------------------------------------------------------------

struct EnvInfo {
  int obs_dim = 0;
  ActionSpec spec;
  std::set<int> resource_ids;
};

// Per-episode acting memory held by each rollout worker.
struct ActContext {
  int code = -1;
  int since_select = 0;
  std::vector<Vec> history;  // state ++ flatten_action rows, oldest first

  void reset() {
    code = -1;
    since_select = 0;
    history.clear();
  }
};

struct AgentStep {
  HybridAction action;
  PolicyAction pa;
  double log_prob = 0.0;
  double value = 0.0;
};

struct RolloutStep {
  Transition tr;
  PolicyAction pa;
  double log_prob = 0.0;
  double value = 0.0;
};

struct WorkerRollout {
  std::vector<RolloutStep> steps;
  double last_value = 0.0;  // V(next_state) of the final step when it is not terminal
};

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  double ppo_loss = 0.0;
  // Weighted contributions of the representation objective.
  double nce_loss = 0.0;
  double vq_loss = 0.0;
  double commit_loss = 0.0;
  std::optional<double> mi_estimate;
  std::optional<double> perplexity;
  std::optional<int> dead_codes;
  double aux_loss = 0.0;  // hyar_lite action-VAE loss
  int segments = 0;
  bool representation_updated = false;
  bool policy_updated = false;
  bool aborted = false;
  std::string diagnostic;

  double total_loss() const { return ppo_loss + nce_loss + vq_loss + commit_loss + aux_loss; }
};

class Agent {
 public:
  virtual ~Agent() = default;

  virtual std::string variant() const = 0;
  virtual AgentStep act(const Vec& obs, ActContext& ctx, ActMode mode, Rng& rng) const = 0;
  virtual double value(const Vec& obs) const = 0;
  // policy_phase = false trains only the representation (pretraining schedule).
  virtual UpdateStats update(std::span<const WorkerRollout> rollouts, Rng& rng, bool policy_phase) = 0;
  virtual nlohmann::json save() const = 0;
  virtual void load(const nlohmann::json& j) = 0;
  virtual int num_codes() const { return 0; }
  virtual std::optional<nlohmann::json> codebook_json() const { return std::nullopt; }

  // Bookkeeping after an environment step.
  void after_step(ActContext& ctx, const Vec& obs, const HybridAction& a, bool done) const {
    if (done) {
      ctx.reset();
      return;
    }
    if (history_len_ > 0) {
      const Vec fa = flatten_action(env_.spec, a);
      Vec row(obs.size() + fa.size());
      row << obs, fa;
      ctx.history.push_back(std::move(row));
      if (static_cast<int>(ctx.history.size()) > history_len_) ctx.history.erase(ctx.history.begin());
    }
  }

  const EnvInfo& env_info() const { return env_; }

 protected:
  explicit Agent(EnvInfo env) : env_(std::move(env)) {}

  EnvInfo env_;
  int history_len_ = 0;
};

inline ppo::PpoConfig ppo_config(const RunConfig& c) {
  ppo::PpoConfig p;
  p.gamma = c.gamma;
  p.lambda = c.gae_lambda;
  p.clip = c.clip;
  p.value_coef = c.value_coef;
  p.entropy_coef = c.entropy_coef;
  p.epochs = c.ppo_epochs;
  p.minibatch = c.minibatch;
  return p;
}

inline nn::AdamConfig adam_config(double lr, double max_grad_norm = 0.0) {
  nn::AdamConfig a;
  a.lr = lr;
  a.max_grad_norm = max_grad_norm;
  return a;
}

// GAE per worker, concatenated in worker order.
inline ppo::RolloutBatch make_rollout_batch(std::span<const WorkerRollout> rollouts, int obs_dim, double gamma,
                                            double lambda) {
  std::size_t n = 0;
  for (const auto& w : rollouts) n += w.steps.size();
  ppo::RolloutBatch b;
  b.observations.resize(obs_dim, static_cast<Eigen::Index>(n));
  b.old_log_probs.resize(static_cast<Eigen::Index>(n));
  b.rewards.resize(static_cast<Eigen::Index>(n));
  b.value_targets.resize(static_cast<Eigen::Index>(n));
  b.advantages.resize(static_cast<Eigen::Index>(n));
  Eigen::Index k = 0;
  for (const auto& w : rollouts) {
    std::vector<double> r, v;
    std::vector<char> d;
    for (const RolloutStep& s : w.steps) {
      r.push_back(s.tr.reward);
      v.push_back(s.value);
      d.push_back(s.tr.done ? 1 : 0);
    }
    const ppo::GaeResult g = ppo::gae_advantages(r, v, d, gamma, lambda, w.last_value);
    for (std::size_t i = 0; i < w.steps.size(); ++i, ++k) {
      const RolloutStep& s = w.steps[i];
      b.observations.col(k) = s.tr.state;
      b.actions.push_back(s.pa);
      b.old_log_probs[k] = s.log_prob;
      b.rewards[k] = s.tr.reward;
      b.value_targets[k] = g.value_targets[static_cast<Eigen::Index>(i)];
      b.advantages[k] = g.advantages[static_cast<Eigen::Index>(i)];
      b.dones.push_back(d[i]);
    }
  }
  return b;
}

inline void copy_ppo_stats(const ppo::PpoStats& p, UpdateStats& s) {
  s.policy_loss = p.policy_loss;
  s.value_loss = p.value_loss;
  s.entropy = p.entropy;
  s.approx_kl = p.approx_kl;
  s.clip_fraction = p.clip_fraction;
  s.ppo_loss = p.total_loss;
  s.policy_updated = !p.aborted && p.minibatches > 0;
  if (p.aborted) {
    s.aborted = true;
    s.diagnostic = p.diagnostic;
  }
}

// ---------------------------------------------------------------------------

class TacticAgent final : public Agent {
 public:
  TacticAgent(const RunConfig& cfg, const EnvInfo& env, Rng& rng) : Agent(env), cfg_(cfg) {
    const std::string& v = cfg.variant;
    if (v != "tart" && v != "hppo" && v != "tart_no_vq" && v != "tart_no_contrast")
      throw RejectionError("TacticAgent cannot build variant '" + v + "'");
    representation_ = v != "hppo";
    quantize_ = v == "tart" || v == "tart_no_contrast";
    history_cond_ = v == "tart_no_vq";
    history_len_ = history_cond_ ? cfg.rep_window : 0;

    repr::EncoderConfig ec;
    ec.latent_dim = cfg.rep_latent_dim;
    ec.hidden = parse_int_list(cfg.rep_hidden, "rep.hidden");
    ec.window = cfg.rep_window;
    ec.temperature = cfg.rep_temperature;
    row_dim_ = env.obs_dim + env.spec.flat_dim();

    policy::PolicyConfig pc;
    pc.obs_dim = env.obs_dim;
    pc.spec = env.spec;
    pc.num_codes = quantize_ ? cfg.vq_codes : 0;
    pc.cond_dim = representation_ ? ec.latent_dim : 0;
    pc.hidden = parse_int_list(cfg.policy_hidden, "policy.hidden");
    pc.init_logstd = cfg.policy_init_logstd;
    net_ = policy::PolicyNet(pc, rng);
    policy_opt_ = nn::Adam(adam_config(cfg.lr, cfg.max_grad_norm));

    if (representation_) {
      encoder_ = repr::TemporalEncoder(ec, row_dim_, rng);
      rep_opt_ = nn::Adam(adam_config(cfg.rep_lr, 1.0));
    }
    if (quantize_) codebook_ = vq::Codebook(ec.latent_dim, cfg.vq_codes, cfg.vq_beta, rng);
  }

  std::string variant() const override { return cfg_.variant; }
  int num_codes() const override { return quantize_ ? codebook_.size() : 0; }
  bool has_representation() const { return representation_; }
  bool quantizes() const { return quantize_; }

  policy::PolicyNet& net() { return net_; }
  const policy::PolicyNet& net() const { return net_; }
  repr::TemporalEncoder& encoder() { return encoder_; }
  vq::Codebook& codebook() { return codebook_; }
  const vq::Codebook& codebook() const { return codebook_; }

  AgentStep act(const Vec& obs, ActContext& ctx, ActMode mode, Rng& rng) const override {
    policy::Conditioning c;
    if (quantize_) {
      c.select_code = ctx.code < 0 || ctx.since_select >= cfg_.policy_code_period;
      c.held_code = ctx.code;
      c.code_table = &codebook_.entries.value;
    } else if (history_cond_) {
      c.fixed = history_latent(ctx);
    } else {
      c.fixed = Vec(0);
    }
    const policy::ActResult r = net_.act(obs, c, mode, rng);
    if (quantize_) {
      if (r.pa.code_selected) ctx.since_select = 0;
      ctx.code = r.pa.code;
      ++ctx.since_select;
    }
    return {r.action, r.pa, r.log_prob, r.value};
  }

  double value(const Vec& obs) const override { return net_.value(obs); }

  // Window-encoder latent of the most recent H steps (zero rows before the
  // episode start).
  Vec history_latent(const ActContext& ctx) const {
    const int h = cfg_.rep_window;
    Mat rows = Mat::Zero(h, row_dim_);
    const int have = static_cast<int>(ctx.history.size());
    for (int i = 0; i < have; ++i) rows.row(h - have + i) = ctx.history[static_cast<std::size_t>(i)].transpose();
    return encoder_.encode_window(rows);
  }

  UpdateStats update(std::span<const WorkerRollout> rollouts, Rng& rng, bool policy_phase) override {
    UpdateStats s;
    if (representation_) representation_update(rollouts, rng, s);
    if (policy_phase) {
      const ppo::RolloutBatch batch = make_rollout_batch(rollouts, env_.obs_dim, cfg_.gamma, cfg_.gae_lambda);
      copy_ppo_stats(ppo::ppo_update(net_, policy_opt_, batch, ppo_config(cfg_), rng), s);
    }
    return s;
  }

  nlohmann::json save() const override {
    auto& self = const_cast<TacticAgent&>(*this);
    nlohmann::json j{{"kind", "tactic"},
                     {"variant", cfg_.variant},
                     {"policy", nn::params_to_json(self.net_.params())},
                     {"policy_opt", policy_opt_.to_json()}};
    if (representation_) {
      j["encoder"] = nn::params_to_json(self.encoder_.params());
      j["rep_opt"] = rep_opt_.to_json();
    }
    if (quantize_) j["codebook"] = vq::to_json(codebook_);
    return j;
  }

  void load(const nlohmann::json& j) override {
    if (j.at("kind") != "tactic" || j.at("variant") != cfg_.variant)
      throw RejectionError("checkpoint agent does not match variant " + cfg_.variant);
    nn::params_from_json(net_.params(), j.at("policy"));
    policy_opt_.from_json(j.at("policy_opt"), net_.params());
    if (representation_) {
      nn::params_from_json(encoder_.params(), j.at("encoder"));
      rep_opt_.from_json(j.at("rep_opt"), rep_params());
    }
    if (quantize_) vq::from_json(codebook_, j.at("codebook"));
  }

  std::optional<nlohmann::json> codebook_json() const override {
    if (!quantize_) return std::nullopt;
    return vq::to_json(codebook_);
  }

  nn::ParamList rep_params() {
    nn::ParamList ps = encoder_.params();
    if (quantize_ && !cfg_.vq_ema) ps.push_back(&codebook_.entries);
    return ps;
  }

 private:
  void representation_update(std::span<const WorkerRollout> rollouts, Rng& rng, UpdateStats& s) {
    std::vector<TrajectorySegment> segments;
    for (const WorkerRollout& w : rollouts) {
      std::vector<Transition> traj;
      traj.reserve(w.steps.size());
      for (const RolloutStep& st : w.steps) traj.push_back(st.tr);
      auto segs = extract_segments(traj, cfg_.rep_window, env_.resource_ids);
      segments.insert(segments.end(), std::make_move_iterator(segs.begin()), std::make_move_iterator(segs.end()));
    }
    const int n = static_cast<int>(segments.size());
    s.segments = n;
    if (n < 2) return;

    Mat anchors(row_dim_, n), windows(row_dim_ * cfg_.rep_window, n);
    for (int i = 0; i < n; ++i) {
      anchors.col(i) = state_action_features(env_.spec, segments[static_cast<std::size_t>(i)].anchor);
      windows.col(i) = window_features(env_.spec, segments[static_cast<std::size_t>(i)]);
    }
    if (quantize_ && !codebook_.initialized) vq::init_from_pool(codebook_, encoder_.window().encode(windows), rng);

    const nn::ParamList params = rep_params();
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    const int bsz = std::min(cfg_.rep_batch, n);
    double nce = 0.0, mi = 0.0, cbl = 0.0, cml = 0.0;
    int batches = 0;
    for (int epoch = 0; epoch < cfg_.rep_epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      for (int start = 0; start + 2 <= n; start += bsz) {
        int len = std::min(bsz, n - start);
        if (n - (start + len) < 2) len = n - start;  // fold a short tail into this batch
        Mat a(row_dim_, len), w(windows.rows(), len);
        for (int i = 0; i < len; ++i) {
          a.col(i) = anchors.col(order[static_cast<std::size_t>(start + i)]);
          w.col(i) = windows.col(order[static_cast<std::size_t>(start + i)]);
        }
        nn::zero_grads(params);
        repr::UnitEncoder::Tape ta, tw;
        const Mat za = encoder_.anchor().encode(a, &ta);
        const Mat zm = encoder_.window().encode(w, &tw);

        Mat codes = zm;
        std::vector<int> idx(static_cast<std::size_t>(len), 0);
        if (quantize_) {
          for (int i = 0; i < len; ++i) {
            const vq::Quantized q = vq::quantize(zm.col(i), codebook_);
            idx[static_cast<std::size_t>(i)] = q.index;
            codes.col(i) = q.code;
          }
        }
        // InfoNCE positives: the window latents, or their straight-through
        // quantised codes (normalised) when rep.nce_on_codes is set.
        Mat positives = zm;
        Vec code_norms;
        if (quantize_ && cfg_.rep_nce_on_codes) positives = nn::normalize_columns(codes, &code_norms);
        const repr::InfoNceResult r = repr::infonce_loss(za, positives, cfg_.rep_temperature);
        Mat dza = cfg_.w_nce * r.grad_anchors;
        Mat dzm = cfg_.w_nce * r.grad_positives;
        if (quantize_ && cfg_.rep_nce_on_codes) {
          // d/d(codes) then copied straight through to zm.
          const Mat dcodes = nn::normalize_columns_backward(positives, code_norms, dzm);
          for (int i = 0; i < len; ++i) dzm.col(i) = vq::StraightThrough::backward(dcodes.col(i));
        }
        double cb_sum = 0.0, cm_sum = 0.0;
        if (quantize_) {
          for (int i = 0; i < len; ++i) {
            const vq::VqLosses l = vq::vq_losses(zm.col(i), codes.col(i), codebook_.beta);
            cb_sum += l.codebook_loss;
            cm_sum += l.commitment_loss;
            dzm.col(i) += cfg_.w_commit * l.grad_z / len;
            if (!cfg_.vq_ema) codebook_.entries.grad.col(idx[static_cast<std::size_t>(i)]) += cfg_.w_vq * l.grad_code / len;
          }
        }
        encoder_.anchor().backward(ta, dza);
        encoder_.window().backward(tw, dzm);
        rep_opt_.step(params);
        if (quantize_ && cfg_.vq_ema) vq::ema_update(codebook_, zm, idx, cfg_.vq_ema_decay);

        nce += cfg_.w_nce * r.loss;
        mi += r.mi_estimate;
        cbl += cfg_.w_vq * cb_sum / len;
        cml += cfg_.w_commit * cm_sum / len;
        ++batches;
        start += len - bsz;  // keep stride consistent when the tail was folded in
      }
    }
    if (batches == 0) return;
    s.representation_updated = true;
    s.nce_loss = nce / batches;
    s.mi_estimate = mi / batches;
    s.vq_loss = cbl / batches;
    s.commit_loss = cml / batches;

    if (quantize_) {
      const Mat zm = encoder_.window().encode(windows);
      std::vector<int> idx(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = vq::quantize(zm.col(i), codebook_).index;
      vq::update_usage(codebook_, idx, cfg_.vq_usage_decay);
      const vq::CodebookMetrics m = vq::codebook_metrics(idx, codebook_, cfg_.vq_dead_threshold);
      s.perplexity = m.perplexity;
      s.dead_codes = m.dead_codes;
      vq::reinit_dead_codes(codebook_, zm, rng, cfg_.vq_dead_threshold);
    }
  }

  RunConfig cfg_;
  int row_dim_ = 0;
  bool representation_ = false;
  bool quantize_ = false;
  bool history_cond_ = false;
  policy::PolicyNet net_;
  nn::Adam policy_opt_;
  repr::TemporalEncoder encoder_;
  nn::Adam rep_opt_;
  vq::Codebook codebook_;
};

// ---------------------------------------------------------------------------
// Reduced HyAR: the policy acts in a continuous latent space (a discrete
// embedding e and a parameter latent z); a conditional action VAE decodes
// (state, e, z) to a hybrid action. No dynamics-prediction auxiliary.

class HyarAgent final : public Agent {
 public:
  static constexpr double kLatentScale = 2.0;

  HyarAgent(const RunConfig& cfg, const EnvInfo& env, Rng& rng) : Agent(env), cfg_(cfg) {
    if (cfg.variant != "hyar_lite") throw RejectionError("HyarAgent builds only hyar_lite");
    me_ = cfg.hyar_embed_dim;
    mz_ = cfg.hyar_latent_dim;
    p_ = std::max(1, env.spec.max_param_dim());
    const auto hidden = parse_int_list(cfg.policy_hidden, "policy.hidden");
    policy::PolicyConfig pc;
    pc.obs_dim = env.obs_dim;
    pc.spec = ActionSpec::uniform(1, me_ + mz_, Interval{-1.0, 1.0});
    pc.hidden = hidden;
    pc.init_logstd = cfg.policy_init_logstd;
    net_ = policy::PolicyNet(pc, rng);
    opt_ = nn::Adam(adam_config(cfg.lr, cfg.max_grad_norm));

    Mat e(me_, env.spec.num_discrete);
    for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = 2.0 * uniform01(rng) - 1.0;
    embed_ = nn::Param("hyar.embed", e);
    vae_enc_ = nn::Mlp("hyar.enc", env.obs_dim + me_ + p_, hidden, 2 * mz_, rng);
    vae_dec_ = nn::Mlp("hyar.dec", env.obs_dim + me_ + mz_, hidden, p_, rng);
    vae_opt_ = nn::Adam(adam_config(cfg.hyar_lr, 1.0));
  }

  std::string variant() const override { return "hyar_lite"; }

  AgentStep act(const Vec& obs, ActContext& /*ctx*/, ActMode mode, Rng& rng) const override {
    policy::Conditioning c;
    c.fixed = Vec(0);
    const policy::ActResult r = net_.act(obs, c, mode, rng);
    return {decode(obs, r.action.params), r.pa, r.log_prob, r.value};
  }

  double value(const Vec& obs) const override { return net_.value(obs); }

  HybridAction decode(const Vec& obs, const Vec& latent) const {
    const Vec e = latent.head(me_);
    int k = 0;
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < embed_.value.cols(); ++i) {
      const double d = (e - embed_.value.col(i)).squaredNorm();
      if (d < best) best = d, k = i;
    }
    Vec in(obs.size() + me_ + mz_);
    in << obs, embed_.value.col(k), kLatentScale * latent.tail(mz_);
    const Vec xn = vae_dec_.forward(in).col(0).array().tanh();
    HybridAction a;
    a.discrete = k;
    const int dim = env_.spec.param_dims[static_cast<std::size_t>(k)];
    const auto& b = env_.spec.param_bounds[static_cast<std::size_t>(k)];
    a.params = Vec(dim);
    for (int j = 0; j < dim; ++j) a.params[j] = std::clamp(b[j].lo + (b[j].hi - b[j].lo) * 0.5 * (xn[j] + 1.0), b[j].lo, b[j].hi);
    return a;
  }

  UpdateStats update(std::span<const WorkerRollout> rollouts, Rng& rng, bool policy_phase) override {
    UpdateStats s;
    s.aux_loss = vae_update(rollouts, rng);
    if (policy_phase) {
      const ppo::RolloutBatch batch = make_rollout_batch(rollouts, env_.obs_dim, cfg_.gamma, cfg_.gae_lambda);
      copy_ppo_stats(ppo::ppo_update(net_, opt_, batch, ppo_config(cfg_), rng), s);
    }
    return s;
  }

  nlohmann::json save() const override {
    auto& self = const_cast<HyarAgent&>(*this);
    return {{"kind", "hyar"},
            {"variant", "hyar_lite"},
            {"policy", nn::params_to_json(self.net_.params())},
            {"policy_opt", opt_.to_json()},
            {"vae", nn::params_to_json(self.vae_params())},
            {"vae_opt", vae_opt_.to_json()}};
  }

  void load(const nlohmann::json& j) override {
    if (j.at("kind") != "hyar") throw RejectionError("checkpoint agent is not hyar_lite");
    nn::params_from_json(net_.params(), j.at("policy"));
    opt_.from_json(j.at("policy_opt"), net_.params());
    nn::params_from_json(vae_params(), j.at("vae"));
    vae_opt_.from_json(j.at("vae_opt"), vae_params());
  }

  nn::ParamList vae_params() { return nn::concat({vae_enc_.params(), vae_dec_.params(), nn::ParamList{&embed_}}); }

 private:
  // Normalised parameters in [-1, 1], zero-padded to p_.
  Vec normalized_params(const HybridAction& a) const {
    Vec x = Vec::Zero(p_);
    const auto& b = env_.spec.param_bounds[static_cast<std::size_t>(a.discrete)];
    for (Eigen::Index j = 0; j < a.params.size(); ++j) x[j] = 2.0 * (a.params[j] - b[j].lo) / (b[j].hi - b[j].lo) - 1.0;
    return x;
  }

  double vae_update(std::span<const WorkerRollout> rollouts, Rng& rng) {
    std::vector<const RolloutStep*> data;
    for (const auto& w : rollouts)
      for (const auto& st : w.steps) data.push_back(&st);
    const int n = static_cast<int>(data.size());
    if (n == 0) return 0.0;
    const int od = env_.obs_dim;
    const nn::ParamList params = vae_params();
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    const int bsz = std::min(256, n);
    double total = 0.0;
    int batches = 0;
    for (int epoch = 0; epoch < cfg_.hyar_epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      for (int start = 0; start < n; start += bsz) {
        const int len = std::min(bsz, n - start);
        Mat enc_in(od + me_ + p_, len), target(p_, len), mask = Mat::Zero(p_, len);
        std::vector<int> ks(static_cast<std::size_t>(len));
        for (int i = 0; i < len; ++i) {
          const RolloutStep& st = *data[static_cast<std::size_t>(order[static_cast<std::size_t>(start + i)])];
          const int k = st.tr.action.discrete;
          ks[static_cast<std::size_t>(i)] = k;
          target.col(i) = normalized_params(st.tr.action);
          mask.col(i).head(st.tr.action.params.size()).setOnes();
          enc_in.col(i) << st.tr.state, embed_.value.col(k), target.col(i);
        }
        nn::zero_grads(params);
        nn::Mlp::Tape te, td;
        const Mat stats = vae_enc_.forward(enc_in, &te);
        const Mat mu = stats.topRows(mz_);
        const Mat logvar = stats.bottomRows(mz_).cwiseMax(-8.0).cwiseMin(4.0);
        Mat eps(mz_, len);
        for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = standard_normal(rng);
        const Mat sigma = (0.5 * logvar.array()).exp();
        const Mat z = mu.array() + sigma.array() * eps.array();
        Mat dec_in(od + me_ + mz_, len);
        dec_in.topRows(od) = enc_in.topRows(od);
        dec_in.middleRows(od, me_) = enc_in.middleRows(od, me_);
        dec_in.bottomRows(mz_) = z;
        const Mat xhat = vae_dec_.forward(dec_in, &td).array().tanh();
        const Mat err = (xhat - target).cwiseProduct(mask);
        const double recon = err.squaredNorm() / len;
        const double kl = 0.5 * (mu.array().square() + logvar.array().exp() - 1.0 - logvar.array()).sum() / len;
        total += recon + cfg_.hyar_kl * kl;
        ++batches;

        const Mat dxhat = 2.0 * err / len;
        const Mat dd = dxhat.array() * (1.0 - xhat.array().square());
        const Mat ddec_in = vae_dec_.backward(td, dd);
        const Mat dz = ddec_in.bottomRows(mz_);
        Mat dstats(2 * mz_, len);
        dstats.topRows(mz_) = dz + cfg_.hyar_kl * mu / len;
        Mat dlogvar = (dz.array() * eps.array() * 0.5 * sigma.array()).matrix() +
                      cfg_.hyar_kl * 0.5 * (logvar.array().exp() - 1.0).matrix() / len;
        const Mat raw_lv = stats.bottomRows(mz_);
        for (Eigen::Index i = 0; i < dlogvar.size(); ++i)
          if (raw_lv.data()[i] < -8.0 || raw_lv.data()[i] > 4.0) dlogvar.data()[i] = 0.0;
        dstats.bottomRows(mz_) = dlogvar;
        const Mat denc_in = vae_enc_.backward(te, dstats);
        for (int i = 0; i < len; ++i) {
          const int k = ks[static_cast<std::size_t>(i)];
          embed_.grad.col(k) += ddec_in.col(i).segment(od, me_) + denc_in.col(i).segment(od, me_);
        }
        vae_opt_.step(params);
        embed_.value = embed_.value.cwiseMax(-1.0).cwiseMin(1.0);
      }
    }
    return batches > 0 ? total / batches : 0.0;
  }

  RunConfig cfg_;
  int me_ = 4, mz_ = 4, p_ = 1;
  policy::PolicyNet net_;
  nn::Adam opt_;
  nn::Param embed_;
  nn::Mlp vae_enc_, vae_dec_;
  nn::Adam vae_opt_;
};

inline std::unique_ptr<Agent> make_agent(const RunConfig& resolved, const EnvInfo& env, Rng& rng) {
  check_variant(resolved.variant);
  if (resolved.variant == "hyar_lite") return std::make_unique<HyarAgent>(resolved, env, rng);
  return std::make_unique<TacticAgent>(resolved, env, rng);
}

inline std::unique_ptr<Agent> build_variant(const VariantSpec& spec, const RunConfig& base, const EnvInfo& env,
                                            Rng& rng) {
  return make_agent(resolve_variant(base, spec), env, rng);
}

}  // namespace tart
