#pragma once

// Run configuration: a flat `key = value` text format. Lines starting with
// '#' are comments; `include <path>` splices another file (relative to the
// including file). Later assignments override earlier ones.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "tart/combat.hpp"
#include "tart/errors.hpp"

namespace tart {

struct RunConfig {
  std::string env = "maze";
  std::string maze_file = "data/mazes/benchmark_7x7.txt";
  double maze_step_scale = 1.0;
  combat::CombatConfig combat;

  std::string variant = "tart";
  std::uint64_t seed = 0;
  long total_steps = 200000;
  int rollout_steps = 4096;
  int workers = 4;

  double w_nce = 1.0;
  double w_vq = 1.0;
  double w_commit = 0.25;

  int rep_latent_dim = 16;
  std::string rep_hidden = "64,64";
  int rep_window = 8;
  double rep_temperature = 0.1;
  double rep_lr = 1e-3;
  int rep_epochs = 4;
  int rep_batch = 64;
  std::string rep_schedule = "joint";  // joint | pretrain
  int rep_pretrain_updates = 0;
  bool rep_nce_on_codes = false;

  int vq_codes = 16;
  double vq_beta = 0.25;
  bool vq_ema = false;
  double vq_ema_decay = 0.99;
  double vq_usage_decay = 0.9;
  double vq_dead_threshold = 1e-3;

  std::string policy_hidden = "64,64";
  int policy_code_period = 1;  // re-select the tactic code every N steps
  double policy_init_logstd = -0.5;

  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip = 0.2;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  int ppo_epochs = 4;
  int minibatch = 256;
  double lr = 3e-4;
  double max_grad_norm = 0.5;

  int hyar_embed_dim = 4;
  int hyar_latent_dim = 4;
  double hyar_lr = 1e-3;
  int hyar_epochs = 4;
  double hyar_kl = 0.5;

  int eval_episodes = 20;
  int eval_every = 1;
  int ckpt_every = 0;
  std::string out;

  // Calls f(key, member) for every field in a fixed order.
  template <class Self, class F>
  static void visit(Self& c, F&& f) {
    f("env", c.env);
    f("maze.file", c.maze_file);
    f("maze.step_scale", c.maze_step_scale);
    f("combat.dt", c.combat.dt);
    f("combat.v_min", c.combat.v_min);
    f("combat.v_max", c.combat.v_max);
    f("combat.max_turn_rate", c.combat.max_turn_rate);
    f("combat.max_climb_rate", c.combat.max_climb_rate);
    f("combat.max_accel", c.combat.max_accel);
    f("combat.missiles", c.combat.missiles);
    f("combat.flares", c.combat.flares);
    f("combat.missile_speed", c.combat.missile_speed);
    f("combat.missile_pk", c.combat.missile_pk);
    f("combat.flare_rho", c.combat.flare_rho);
    f("combat.lock_cone", c.combat.lock_cone);
    f("combat.max_steps", c.combat.max_steps);
    f("combat.arena_radius", c.combat.arena_radius);
    f("combat.opponent_fire_cooldown", c.combat.opponent_fire_cooldown);
    f("variant", c.variant);
    f("seed", c.seed);
    f("total_steps", c.total_steps);
    f("rollout_steps", c.rollout_steps);
    f("workers", c.workers);
    f("w_nce", c.w_nce);
    f("w_vq", c.w_vq);
    f("w_commit", c.w_commit);
    f("rep.latent_dim", c.rep_latent_dim);
    f("rep.hidden", c.rep_hidden);
    f("rep.window", c.rep_window);
    f("rep.temperature", c.rep_temperature);
    f("rep.lr", c.rep_lr);
    f("rep.epochs", c.rep_epochs);
    f("rep.batch", c.rep_batch);
    f("rep.schedule", c.rep_schedule);
    f("rep.pretrain_updates", c.rep_pretrain_updates);
    f("rep.nce_on_codes", c.rep_nce_on_codes);
    f("vq.codes", c.vq_codes);
    f("vq.beta", c.vq_beta);
    f("vq.ema", c.vq_ema);
    f("vq.ema_decay", c.vq_ema_decay);
    f("vq.usage_decay", c.vq_usage_decay);
    f("vq.dead_threshold", c.vq_dead_threshold);
    f("policy.hidden", c.policy_hidden);
    f("policy.code_period", c.policy_code_period);
    f("policy.init_logstd", c.policy_init_logstd);
    f("ppo.gamma", c.gamma);
    f("ppo.lambda", c.gae_lambda);
    f("ppo.clip", c.clip);
    f("ppo.value_coef", c.value_coef);
    f("ppo.entropy_coef", c.entropy_coef);
    f("ppo.epochs", c.ppo_epochs);
    f("ppo.minibatch", c.minibatch);
    f("ppo.lr", c.lr);
    f("ppo.max_grad_norm", c.max_grad_norm);
    f("hyar.embed_dim", c.hyar_embed_dim);
    f("hyar.latent_dim", c.hyar_latent_dim);
    f("hyar.lr", c.hyar_lr);
    f("hyar.epochs", c.hyar_epochs);
    f("hyar.kl", c.hyar_kl);
    f("eval.episodes", c.eval_episodes);
    f("eval.every", c.eval_every);
    f("ckpt.every", c.ckpt_every);
    f("out", c.out);
  }
};

namespace config_detail {

template <class T>
std::string format_value(const T& v) {
  if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else if constexpr (std::is_same_v<T, bool>) {
    return v ? "1" : "0";
  } else {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);  // shortest round-trip form
    return std::string(buf, res.ptr);
  }
}

template <class T>
void parse_value(const std::string& key, const std::string& text, T& out) {
  if constexpr (std::is_same_v<T, std::string>) {
    out = text;
  } else if constexpr (std::is_same_v<T, bool>) {
    if (text == "1" || text == "true") out = true;
    else if (text == "0" || text == "false") out = false;
    else throw ConfigError("config key '" + key + "' expects a boolean, got '" + text + "'");
  } else {
    T v{};
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size())
      throw ConfigError("config key '" + key + "' has malformed value '" + text + "'");
    out = v;
  }
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace config_detail

using ConfigMap = std::map<std::string, std::string>;

// Ordered key/value view of every field.
inline std::vector<std::pair<std::string, std::string>> to_pairs(const RunConfig& c) {
  std::vector<std::pair<std::string, std::string>> out;
  RunConfig::visit(c, [&](const char* key, const auto& v) { out.emplace_back(key, config_detail::format_value(v)); });
  return out;
}

inline void apply_overrides(RunConfig& c, const ConfigMap& kv) {
  for (const auto& [key, value] : kv) {
    bool found = false;
    RunConfig::visit(c, [&](const char* k, auto& member) {
      if (key == k) {
        config_detail::parse_value(key, value, member);
        found = true;
      }
    });
    if (!found) throw ConfigError("unknown config key '" + key + "'");
  }
}

inline std::string serialize_config(const RunConfig& c) {
  std::string out;
  for (const auto& [k, v] : to_pairs(c)) out += k + " = " + v + "\n";
  return out;
}

namespace config_detail {

inline void parse_into(std::istream& is, const std::filesystem::path& base_dir, ConfigMap& kv, int depth) {
  if (depth > 16) throw ConfigError("config include depth exceeded (cycle?)");
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.rfind("include", 0) == 0 && (t.size() > 7 && (t[7] == ' ' || t[7] == '\t'))) {
      const std::filesystem::path inc = trim(t.substr(7));
      const std::filesystem::path path = inc.is_absolute() ? inc : base_dir / inc;
      std::ifstream f(path);
      if (!f) throw ConfigError("cannot open included config: " + path.string());
      parse_into(f, path.parent_path(), kv, depth + 1);
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + " lacks '=': " + t);
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + " has an empty key");
    kv[key] = trim(t.substr(eq + 1));
  }
}

}  // namespace config_detail

inline ConfigMap parse_config_map(std::istream& is, const std::filesystem::path& base_dir = ".") {
  ConfigMap kv;
  config_detail::parse_into(is, base_dir, kv, 0);
  return kv;
}

inline RunConfig parse_config(std::istream& is, const std::filesystem::path& base_dir = ".") {
  RunConfig c;
  apply_overrides(c, parse_config_map(is, base_dir));
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path.string());
  return parse_config(f, path.parent_path());
}

// Keys whose values differ between two configs.
inline std::vector<std::string> config_diff(const RunConfig& a, const RunConfig& b) {
  const auto pa = to_pairs(a), pb = to_pairs(b);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (pa[i].second != pb[i].second) out.push_back(pa[i].first);
  return out;
}

inline std::vector<int> parse_int_list(const std::string& s, const std::string& key) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = config_detail::trim(item);
    if (item.empty()) continue;
    int v = 0;
    config_detail::parse_value(key, item, v);
    out.push_back(v);
  }
  return out;
}

inline void validate(const RunConfig& c) {
  if (c.env != "maze" && c.env != "combat") throw ConfigError("env must be 'maze' or 'combat'");
  if (c.total_steps < 1) throw ConfigError("total_steps must be >= 1");
  if (c.rollout_steps < 1) throw ConfigError("rollout_steps must be >= 1");
  if (c.workers < 1) throw ConfigError("workers must be >= 1");
  if (c.rollout_steps % c.workers != 0) throw ConfigError("rollout_steps must be divisible by workers");
  if (c.w_nce < 0.0 || c.w_vq < 0.0 || c.w_commit < 0.0) throw ConfigError("loss weights must be >= 0");
  if (c.rep_schedule != "joint" && c.rep_schedule != "pretrain") throw ConfigError("rep.schedule must be joint or pretrain");
  if (c.rep_batch < 2) throw ConfigError("rep.batch must be >= 2");
  if (c.vq_codes < 2) throw ConfigError("vq.codes must be >= 2");
  if (c.policy_code_period < 1) throw ConfigError("policy.code_period must be >= 1");
  if (c.eval_episodes < 1) throw ConfigError("eval.episodes must be >= 1");
  if (c.gamma < 0.0 || c.gamma > 1.0 || c.gae_lambda < 0.0 || c.gae_lambda > 1.0)
    throw ConfigError("ppo.gamma and ppo.lambda must lie in [0, 1]");
  if (c.env == "combat") c.combat.validate();
}

}  // namespace tart
