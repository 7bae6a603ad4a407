#pragma once

// Training loop, evaluation and checkpoints.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "tart/agent.hpp"
#include "tart/combat.hpp"
#include "tart/config.hpp"
#include "tart/env.hpp"
#include "tart/maze.hpp"

#ifndef TART_DATA_DIR
#define TART_DATA_DIR "data"
#endif

namespace tart {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

inline constexpr int kCheckpointVersion = 1;

// ---------------------------------------------------------------------------
// Environments

// Relative data paths are tried as given, then against the source tree.
inline fs::path resolve_data_path(const std::string& p) {
  const fs::path path(p);
  if (path.is_absolute() || fs::exists(path)) return path;
  const fs::path alt = fs::path(TART_DATA_DIR).parent_path() / path;
  if (fs::exists(alt)) return alt;
  return path;
}

inline std::unique_ptr<Env> make_env(const RunConfig& c) {
  if (c.env == "maze") {
    maze::MazeConfig m = maze::load_maze(resolve_data_path(c.maze_file).string());
    m.step_scale = c.maze_step_scale;
    return std::make_unique<maze::MazeEnv>(std::move(m));
  }
  if (c.env == "combat") return std::make_unique<combat::CombatEnv>(c.combat);
  throw ConfigError("unknown env '" + c.env + "'");
}

inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

// Identifies the environment a policy was trained on. Uses the maze content
// rather than its path.
inline std::string env_description(const RunConfig& c) {
  std::string d = "env=" + c.env + "\n";
  if (c.env == "maze") {
    maze::MazeConfig m = maze::load_maze(resolve_data_path(c.maze_file).string());
    d += maze::format_maze(m) + "step_scale=" + config_detail::format_value(c.maze_step_scale) + "\n";
  } else {
    for (const auto& [k, v] : to_pairs(c))
      if (k.rfind("combat.", 0) == 0) d += k + "=" + v + "\n";
  }
  return d;
}

inline std::string env_hash(const RunConfig& c) { return fnv1a_hex(env_description(c)); }

inline std::string config_hash(const RunConfig& c) {
  RunConfig k = c;
  k.out.clear();
  return fnv1a_hex(serialize_config(k) + env_description(c));
}

inline EnvInfo env_info(const Env& e) { return {e.obs_dim(), e.action_spec(), e.resource_ids()}; }

// ---------------------------------------------------------------------------
// Rollout workers. Each owns an environment and its own RNG streams, so the
// collected data does not depend on thread scheduling.

struct Worker {
  std::unique_ptr<Env> env;
  Vec obs;
  ActContext ctx;
  Rng act_rng;
  Rng seed_rng;
  bool need_reset = true;
  double episode_return = 0.0;
  std::vector<double> finished_returns;
};

inline std::vector<Worker> make_workers(const RunConfig& c, const Env& proto) {
  std::vector<Worker> ws(static_cast<std::size_t>(c.workers));
  for (int i = 0; i < c.workers; ++i) {
    Worker& w = ws[static_cast<std::size_t>(i)];
    w.env = proto.clone();
    w.act_rng = make_rng(c.seed, 100 + static_cast<std::uint64_t>(i));
    w.seed_rng = make_rng(c.seed, 500 + static_cast<std::uint64_t>(i));
  }
  return ws;
}

inline void collect(const Agent& agent, Worker& w, int steps, WorkerRollout& out) {
  out.steps.clear();
  out.steps.reserve(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    if (w.need_reset) {
      w.obs = w.env->reset(w.seed_rng());
      w.ctx.reset();
      w.episode_return = 0.0;
      w.need_reset = false;
    }
    const AgentStep s = agent.act(w.obs, w.ctx, ActMode::kSample, w.act_rng);
    StepResult r = w.env->step(s.action);
    RolloutStep rs;
    rs.tr.state = w.obs;
    rs.tr.action = s.action;
    rs.tr.reward = r.reward;
    rs.tr.next_state = r.obs;
    rs.tr.done = r.done;
    rs.tr.info = std::move(r.info);
    rs.pa = s.pa;
    rs.log_prob = s.log_prob;
    rs.value = s.value;
    agent.after_step(w.ctx, w.obs, s.action, r.done);
    w.episode_return += r.reward;
    if (r.done) {
      w.finished_returns.push_back(w.episode_return);
      w.need_reset = true;
    }
    w.obs = std::move(r.obs);
    out.steps.push_back(std::move(rs));
  }
  out.last_value = w.need_reset ? 0.0 : agent.value(w.obs);
}

// One rollout from every worker; threads are used when there is more than one.
inline std::vector<WorkerRollout> collect_rollouts(const Agent& agent, std::vector<Worker>& ws, int steps_per_worker) {
  std::vector<WorkerRollout> out(ws.size());
  if (ws.size() == 1) {
    collect(agent, ws[0], steps_per_worker, out[0]);
    return out;
  }
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(ws.size());
  for (std::size_t i = 0; i < ws.size(); ++i)
    threads.emplace_back([&, i] {
      try {
        collect(agent, ws[i], steps_per_worker, out[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    });
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EpisodeLog {
  double ret = 0.0;
  int steps = 0;
  int resources_used = 0;
  int wasted = 0;
  std::vector<int> codes;
  std::vector<HybridAction> actions;
  std::vector<double> rewards;
  std::vector<maze::PathStep> path;  // maze only
  std::vector<ojson> states;
};

struct EvalSummary {
  int episodes = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
  std::vector<double> returns;
  double mean_resources_used = 0.0;
  double mean_wasted = 0.0;
  int total_wasted = 0;
  std::vector<long> code_histogram;
  std::vector<EpisodeLog> logs;
};

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Population standard deviation.
inline double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

inline EvalSummary evaluate_agent(const Agent& agent, const Env& proto, int episodes, std::uint64_t seed,
                                  bool keep_logs = false) {
  if (episodes < 1) throw RejectionError("evaluation needs episodes >= 1");
  std::unique_ptr<Env> env = proto.clone();
  Rng seed_rng = make_rng(seed, 7);
  Rng act_rng = make_rng(seed, 8);
  const auto* maze_env = dynamic_cast<const maze::MazeEnv*>(env.get());
  const std::set<int> resources = env->resource_ids();
  EvalSummary s;
  s.episodes = episodes;
  s.code_histogram.assign(static_cast<std::size_t>(agent.num_codes()), 0);
  std::vector<double> used, wasted;
  for (int ep = 0; ep < episodes; ++ep) {
    EpisodeLog log;
    Vec obs = env->reset(seed_rng());
    ActContext ctx;
    if (keep_logs) log.states.push_back(env->log_state());
    for (;;) {
      double x0 = 0, y0 = 0;
      if (maze_env) x0 = maze_env->state().x, y0 = maze_env->state().y;
      const AgentStep a = agent.act(obs, ctx, ActMode::kGreedy, act_rng);
      StepResult r = env->step(a.action);
      agent.after_step(ctx, obs, a.action, r.done);
      const bool was_wasted = r.info.count("wasted_resource") && r.info.at("wasted_resource") != 0.0;
      if (resources.count(a.action.discrete) && !was_wasted) ++log.resources_used;
      if (was_wasted) ++log.wasted;
      if (a.pa.code >= 0 && a.pa.code < agent.num_codes()) ++s.code_histogram[static_cast<std::size_t>(a.pa.code)];
      log.ret += r.reward;
      ++log.steps;
      if (keep_logs) {
        log.codes.push_back(a.pa.code);
        log.actions.push_back(a.action);
        log.rewards.push_back(r.reward);
        log.states.push_back(env->log_state());
        if (maze_env)
          log.path.push_back({x0, y0, maze_env->state().x, maze_env->state().y,
                              r.info.count("dash") && r.info.at("dash") != 0.0});
      }
      obs = std::move(r.obs);
      if (r.done) break;
    }
    s.returns.push_back(log.ret);
    used.push_back(log.resources_used);
    wasted.push_back(log.wasted);
    s.total_wasted += log.wasted;
    if (keep_logs) s.logs.push_back(std::move(log));
  }
  s.mean_return = mean_of(s.returns);
  s.std_return = std_of(s.returns);
  s.mean_resources_used = mean_of(used);
  s.mean_wasted = mean_of(wasted);
  return s;
}

inline ojson eval_summary_json(const EvalSummary& s) {
  return {{"episodes", s.episodes},
          {"mean_return", s.mean_return},
          {"std_return", s.std_return},
          {"returns", s.returns},
          {"mean_resources_used", s.mean_resources_used},
          {"mean_wasted", s.mean_wasted},
          {"total_wasted", s.total_wasted},
          {"code_histogram", s.code_histogram}};
}

// Episode log file: a header line, then one line per episode.
inline void write_episode_logs(std::ostream& os, const RunConfig& c, const Env& env, const EvalSummary& s,
                               int num_codes) {
  ojson header{{"kind", "header"}, {"env", c.env}, {"num_codes", num_codes}};
  if (const auto* m = dynamic_cast<const maze::MazeEnv*>(&env)) header["maze"] = maze::format_maze(m->config());
  os << header.dump() << "\n";
  for (std::size_t i = 0; i < s.logs.size(); ++i) {
    const EpisodeLog& l = s.logs[i];
    ojson actions = ojson::array();
    for (const auto& a : l.actions) actions.push_back({{"discrete", a.discrete}, {"params", detail::to_std(a.params)}});
    ojson path = ojson::array();
    for (const auto& p : l.path) path.push_back({p.x0, p.y0, p.x1, p.y1, p.dash ? 1 : 0});
    ojson rec{{"kind", "episode"},          {"index", i},         {"return", l.ret},
              {"steps", l.steps},           {"resources_used", l.resources_used},
              {"wasted", l.wasted},         {"codes", l.codes},   {"actions", actions},
              {"rewards", l.rewards}};
    if (!l.path.empty()) rec["path"] = path;
    rec["states"] = l.states;
    os << rec.dump() << "\n";
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

inline fs::path default_out_root() {
  if (const char* v = std::getenv("TART_OUT"); v && *v) return v;
  return "runs";
}

inline fs::path run_dir(const RunConfig& c) {
  if (!c.out.empty()) return c.out;
  return default_out_root() / (c.variant + "_seed" + std::to_string(c.seed));
}

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f << text;
  f.flush();
  if (!f) throw RuntimeAbort("failed to write " + p.string() + " (disk full or unwritable)");
}

inline json make_checkpoint(const RunConfig& c, const Agent& agent, long step, int update, const Rng& update_rng) {
  return {{"version", kCheckpointVersion}, {"config", serialize_config(c)}, {"config_hash", config_hash(c)},
          {"env_hash", env_hash(c)},       {"step", step},                  {"update", update},
          {"agent", agent.save()},         {"rng", {{"update", rng_state(update_rng)}}}};
}

struct LoadedCheckpoint {
  RunConfig config;
  std::unique_ptr<Agent> agent;
  std::unique_ptr<Env> env;
  long step = 0;
  json raw;
};

inline LoadedCheckpoint load_checkpoint(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw RejectionError("cannot open checkpoint " + path.string());
  LoadedCheckpoint lc;
  try {
    lc.raw = json::parse(f);
  } catch (const json::exception& e) {
    throw RejectionError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
  if (lc.raw.value("version", 0) != kCheckpointVersion) throw RejectionError("unsupported checkpoint version");
  std::istringstream cs(lc.raw.at("config").get<std::string>());
  lc.config = parse_config(cs);
  if (env_hash(lc.config) != lc.raw.at("env_hash").get<std::string>())
    throw RejectionError("checkpoint env hash does not match its stored config");
  lc.env = make_env(lc.config);
  Rng init = make_rng(lc.config.seed, 1);
  lc.agent = make_agent(lc.config, env_info(*lc.env), init);
  lc.agent->load(lc.raw.at("agent"));
  lc.step = lc.raw.at("step").get<long>();
  return lc;
}

// Greedy evaluation of a checkpoint. When `env_override` is given its
// environment must hash to the one the checkpoint was trained on.
inline EvalSummary evaluate_checkpoint(const fs::path& path, int episodes, std::optional<std::uint64_t> seed = {},
                                       const std::optional<RunConfig>& env_override = {}, bool keep_logs = false) {
  if (episodes < 1) throw RejectionError("evaluation needs episodes >= 1");
  LoadedCheckpoint lc = load_checkpoint(path);
  const Env* env = lc.env.get();
  std::unique_ptr<Env> other;
  if (env_override) {
    const std::string want = lc.raw.at("env_hash").get<std::string>();
    const std::string got = env_hash(*env_override);
    if (got != want)
      throw RejectionError("environment config hash " + got + " does not match checkpoint env hash " + want);
    other = make_env(*env_override);
    env = other.get();
  }
  return evaluate_agent(*lc.agent, *env, episodes, seed.value_or(lc.config.seed), keep_logs);
}

// ---------------------------------------------------------------------------
// Training

struct TrainResult {
  fs::path out_dir;
  fs::path checkpoint;
  int updates = 0;
  long steps = 0;
  std::optional<double> final_eval_mean;
  std::optional<double> final_eval_std;
  std::optional<double> final_perplexity;
  std::optional<double> final_mi;
  double wall_clock_s = 0.0;
};

inline ojson metrics_record(long step, int update, const UpdateStats& s, const std::optional<EvalSummary>& ev,
                            const std::vector<double>& train_returns) {
  const auto opt = [](const auto& o) -> ojson { return o ? ojson(*o) : ojson(nullptr); };
  ojson r;
  r["step"] = step;
  r["update"] = update;
  r["eval_return_mean"] = ev ? ojson(ev->mean_return) : ojson(nullptr);
  r["eval_return_std"] = ev ? ojson(ev->std_return) : ojson(nullptr);
  r["eval_wasted_mean"] = ev ? ojson(ev->mean_wasted) : ojson(nullptr);
  r["train_return_mean"] = train_returns.empty() ? ojson(nullptr) : ojson(mean_of(train_returns));
  r["train_episodes"] = train_returns.size();
  r["policy_loss"] = s.policy_loss;
  r["value_loss"] = s.value_loss;
  r["entropy"] = s.entropy;
  r["approx_kl"] = s.approx_kl;
  r["clip_fraction"] = s.clip_fraction;
  r["ppo_loss"] = s.ppo_loss;
  r["nce_loss"] = s.nce_loss;
  r["mi_estimate"] = opt(s.mi_estimate);
  r["vq_loss"] = s.vq_loss;
  r["commit_loss"] = s.commit_loss;
  r["aux_loss"] = s.aux_loss;
  r["total_loss"] = s.total_loss();
  r["perplexity"] = opt(s.perplexity);
  r["dead_codes"] = opt(s.dead_codes);
  r["segments"] = s.segments;
  return r;
}

// Flat CSV export of a metrics log (columns of the first record).
inline std::string metrics_csv(const std::vector<ojson>& records) {
  if (records.empty()) return "";
  std::string out;
  std::vector<std::string> cols;
  for (const auto& [k, v] : records.front().items()) cols.push_back(k);
  for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? "," : "") + cols[i];
  out += "\n";
  for (const auto& r : records) {
    for (std::size_t i = 0; i < cols.size(); ++i) {
      if (i) out += ",";
      const auto it = r.find(cols[i]);
      if (it != r.end() && !it->is_null()) out += it->is_string() ? it->get<std::string>() : it->dump();
    }
    out += "\n";
  }
  return out;
}

struct TrainOptions {
  std::ostream* progress = nullptr;
};

// Collect -> representation update -> policy update -> periodic evaluation,
// once per rollout. Writes metrics.jsonl, metrics.csv, timing.jsonl,
// config.cfg and checkpoint.json under the run directory.
inline TrainResult train(RunConfig c, const TrainOptions& opt = {}) {
  validate(c);
  if (c.env == "maze") c.maze_file = fs::absolute(resolve_data_path(c.maze_file)).lexically_normal().string();
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult res;
  res.out_dir = run_dir(c);
  std::error_code ec;
  fs::create_directories(res.out_dir, ec);
  if (ec) throw RuntimeAbort("cannot create output directory " + res.out_dir.string() + ": " + ec.message());
  write_text(res.out_dir / "config.cfg", serialize_config(c));

  const std::unique_ptr<Env> proto = make_env(c);
  Rng init_rng = make_rng(c.seed, 1);
  Rng update_rng = make_rng(c.seed, 2);
  std::unique_ptr<Agent> agent = make_agent(c, env_info(*proto), init_rng);
  std::vector<Worker> workers = make_workers(c, *proto);

  const int updates = static_cast<int>(c.total_steps / c.rollout_steps);
  const int per_worker = c.rollout_steps / c.workers;
  res.checkpoint = res.out_dir / "checkpoint.json";

  std::ofstream metrics(res.out_dir / "metrics.jsonl", std::ios::binary | std::ios::trunc);
  std::ofstream timing(res.out_dir / "timing.jsonl", std::ios::binary | std::ios::trunc);
  if (!metrics || !timing) throw RuntimeAbort("cannot open metrics logs in " + res.out_dir.string());
  std::vector<ojson> records;
  const auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
  const auto save = [&](const fs::path& p, long step, int update) {
    write_text(p, make_checkpoint(c, *agent, step, update, update_rng).dump());
  };

  long step = 0;
  std::optional<EvalSummary> last_eval;
  for (int u = 0; u < updates; ++u) {
    std::vector<WorkerRollout> rollouts = collect_rollouts(*agent, workers, per_worker);
    std::vector<double> train_returns;
    for (Worker& w : workers) {
      train_returns.insert(train_returns.end(), w.finished_returns.begin(), w.finished_returns.end());
      w.finished_returns.clear();
    }
    const bool policy_phase = c.rep_schedule == "joint" || u >= c.rep_pretrain_updates;
    UpdateStats stats = agent->update(rollouts, update_rng, policy_phase);
    step += c.rollout_steps;
    if (!stats.aborted && !std::isfinite(stats.total_loss())) {
      stats.aborted = true;
      stats.diagnostic = "non-finite total loss (ppo " + std::to_string(stats.ppo_loss) + ", nce " +
                         std::to_string(stats.nce_loss) + ", vq " + std::to_string(stats.vq_loss) + ", commit " +
                         std::to_string(stats.commit_loss) + ")";
    }
    if (stats.aborted) {
      save(res.checkpoint, step, u);
      const std::string msg = "update " + std::to_string(u) + " at step " + std::to_string(step) + ": " + stats.diagnostic;
      write_text(res.out_dir / "abort.txt", msg + "\n");
      throw RuntimeAbort("training aborted: " + msg);
    }

    std::optional<EvalSummary> ev;
    if ((u + 1) % std::max(1, c.eval_every) == 0 || u + 1 == updates) {
      ev = evaluate_agent(*agent, *proto, c.eval_episodes, c.seed);
      last_eval = ev;
    }
    const ojson rec = metrics_record(step, u, stats, ev, train_returns);
    metrics << rec.dump() << "\n";
    metrics.flush();
    timing << ojson{{"step", step}, {"wall_clock_s", elapsed()}}.dump() << "\n";
    timing.flush();
    if (!metrics || !timing) throw RuntimeAbort("failed writing metrics (disk full?); partial logs kept");
    records.push_back(rec);
    res.final_perplexity = stats.perplexity;
    res.final_mi = stats.mi_estimate;
    if (c.ckpt_every > 0 && (u + 1) % c.ckpt_every == 0)
      save(res.out_dir / ("checkpoint_" + std::to_string(step) + ".json"), step, u);
    if (opt.progress) {
      *opt.progress << "[" << c.variant << " seed " << c.seed << "] step " << step;
      if (ev) *opt.progress << " eval " << ev->mean_return;
      if (stats.perplexity) *opt.progress << " ppl " << *stats.perplexity;
      if (stats.mi_estimate) *opt.progress << " mi " << *stats.mi_estimate;
      *opt.progress << std::endl;
    }
    res.updates = u + 1;
  }
  res.steps = step;
  save(res.checkpoint, step, res.updates);
  write_text(res.out_dir / "metrics.csv", metrics_csv(records));
  {
    const EvalSummary logged = evaluate_agent(*agent, *proto, std::min(3, c.eval_episodes), c.seed, true);
    std::ostringstream os;
    write_episode_logs(os, c, *proto, logged, agent->num_codes());
    write_text(res.out_dir / "episodes.jsonl", os.str());
  }
  if (last_eval) {
    res.final_eval_mean = last_eval->mean_return;
    res.final_eval_std = last_eval->std_return;
  }
  res.wall_clock_s = elapsed();
  return res;
}

}  // namespace tart
