// tart: train, evaluate, compare and plot.
//
// Exit codes: 0 success, 2 configuration error, 3 runtime abort.

#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "tart/compare.hpp"
#include "tart/harness.hpp"
#include "tart/plot.hpp"

namespace {

using namespace tart;

ConfigMap parse_sets(const std::vector<std::string>& sets) {
  ConfigMap kv;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    kv[config_detail::trim(s.substr(0, eq))] = config_detail::trim(s.substr(eq + 1));
  }
  return kv;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!(item = config_detail::trim(item)).empty()) out.push_back(item);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal action representations for hybrid-action reinforcement learning"};
  app.require_subcommand(1);

  std::string config_path, out_dir, ckpt_path, env_name, variants_arg, seeds_arg, env_config;
  std::vector<std::string> sets, inputs;
  std::uint64_t seed = 0;
  long steps = 0;
  int episodes = 0, jobs = 1;
  bool quiet = false;

  auto* train_cmd = app.add_subcommand("train", "train one variant on one seed");
  train_cmd->add_option("--config", config_path, "run config file")->required();
  auto* train_seed = train_cmd->add_option("--seed", seed, "run seed (overrides the config)");
  train_cmd->add_option("--out", out_dir, "output directory");
  train_cmd->add_option("--set", sets, "config override key=value (repeatable)");
  train_cmd->add_flag("--quiet", quiet, "no progress lines");

  auto* eval_cmd = app.add_subcommand("eval", "greedy evaluation of a checkpoint");
  eval_cmd->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  eval_cmd->add_option("--episodes", episodes, "number of episodes")->required();
  auto* eval_seed = eval_cmd->add_option("--seed", seed, "evaluation seed (default: the run seed)");
  eval_cmd->add_option("--config", env_config, "evaluate on the environment of this config file");
  eval_cmd->add_option("--env", env_name, "evaluate on this environment with default parameters");
  eval_cmd->add_option("--out", out_dir, "write summary.json and episodes.jsonl here");

  auto* cmp_cmd = app.add_subcommand("compare", "train several variants over several seeds");
  cmp_cmd->add_option("--env", env_name, "maze or combat")->required();
  cmp_cmd->add_option("--variants", variants_arg, "comma-separated variant names")->required();
  cmp_cmd->add_option("--seeds", seeds_arg, "comma-separated seeds (at least 2)")->required();
  cmp_cmd->add_option("--config", config_path, "base run config");
  cmp_cmd->add_option("--steps", steps, "total environment steps per run");
  cmp_cmd->add_option("--out", out_dir, "output directory");
  cmp_cmd->add_option("--jobs", jobs, "concurrent runs (separate processes)");
  cmp_cmd->add_option("--set", sets, "config override key=value (repeatable)");
  cmp_cmd->add_flag("--quiet", quiet, "no progress lines");

  auto* plot_cmd = app.add_subcommand("plot", "render learning curves and episode logs");
  plot_cmd->add_option("--in", inputs, "run directories or log files")->required();
  plot_cmd->add_option("--out", out_dir, "image directory")->required();

  auto* dump_cmd = app.add_subcommand("dump-codebook", "print the codebook stored in a checkpoint");
  dump_cmd->add_option("--ckpt", ckpt_path, "checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*train_cmd) {
      RunConfig c = load_config(config_path);
      apply_overrides(c, parse_sets(sets));
      if (*train_seed) c.seed = seed;
      if (!out_dir.empty()) c.out = out_dir;
      const TrainResult r = train(c, {quiet ? nullptr : &std::cerr});
      ojson s{{"out_dir", r.out_dir.string()}, {"checkpoint", r.checkpoint.string()}, {"updates", r.updates},
              {"steps", r.steps}};
      s["final_eval_return"] = r.final_eval_mean ? ojson(*r.final_eval_mean) : ojson(nullptr);
      std::cout << s.dump(2) << std::endl;
    } else if (*eval_cmd) {
      std::optional<RunConfig> env_cfg;
      if (!env_config.empty()) env_cfg = load_config(env_config);
      if (!env_name.empty()) {
        RunConfig e;
        e.env = env_name;
        validate(e);
        env_cfg = e;
      }
      std::optional<std::uint64_t> s;
      if (*eval_seed) s = seed;
      const bool logs = !out_dir.empty();
      const EvalSummary sum = evaluate_checkpoint(ckpt_path, episodes, s, env_cfg, logs);
      if (logs) {
        fs::create_directories(out_dir);
        write_text(fs::path(out_dir) / "summary.json", eval_summary_json(sum).dump(2) + "\n");
        LoadedCheckpoint lc = load_checkpoint(ckpt_path);
        std::ostringstream os;
        write_episode_logs(os, lc.config, env_cfg ? *make_env(*env_cfg) : *lc.env, sum, lc.agent->num_codes());
        write_text(fs::path(out_dir) / "episodes.jsonl", os.str());
      }
      std::cout << eval_summary_json(sum).dump(2) << std::endl;
    } else if (*cmp_cmd) {
      RunConfig base;
      if (!config_path.empty()) base = load_config(config_path);
      base.env = env_name;
      apply_overrides(base, parse_sets(sets));
      if (steps > 0) base.total_steps = steps;
      validate(base);
      std::vector<std::uint64_t> seeds;
      for (const auto& s : split(seeds_arg)) {
        std::uint64_t v = 0;
        config_detail::parse_value("--seeds", s, v);
        seeds.push_back(v);
      }
      const fs::path root = out_dir.empty() ? default_out_root() / ("compare_" + env_name) : fs::path(out_dir);
      const ComparisonResult r = run_comparison(base, split(variants_arg), seeds, root, jobs, quiet ? nullptr : &std::cerr);
      std::cout << summary_csv(r.summary);
      std::cout << "results: " << r.results_csv.string() << "\nplot: " << r.plot.string() << std::endl;
    } else if (*plot_cmd) {
      std::vector<fs::path> in(inputs.begin(), inputs.end());
      for (const auto& p : plot::plot(in, out_dir)) std::cout << p.string() << "\n";
    } else if (*dump_cmd) {
      LoadedCheckpoint lc = load_checkpoint(ckpt_path);
      const auto cb = lc.agent->codebook_json();
      if (!cb) throw RejectionError("variant " + lc.config.variant + " has no codebook");
      std::cout << cb->dump(2) << std::endl;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << std::endl;
    return 2;
  } catch (const RejectionError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "aborted: " << e.what() << std::endl;
    return 3;
  }
  return 0;
}
