#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "tart/compare.hpp"
#include "tart/harness.hpp"
#include "tart/plot.hpp"

using namespace tart;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tart_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

RunConfig tiny(const std::string& variant, const fs::path& out) {
  RunConfig c;
  c.maze_file = "data/mazes/open_3x3.txt";
  c.variant = variant;
  c.total_steps = 512;
  c.rollout_steps = 256;
  c.workers = 1;
  c.rep_hidden = "16";
  c.rep_latent_dim = 4;
  c.rep_window = 2;
  c.rep_epochs = 1;
  c.vq_codes = 4;
  c.policy_hidden = "16";
  c.ppo_epochs = 1;
  c.minibatch = 128;
  c.eval_episodes = 3;
  c.out = out.string();
  return c;
}

}  // namespace

TEST(Config, SerializeParseRoundTrip) {
  RunConfig c;
  c.variant = "hppo";
  c.w_nce = 0.125;
  c.rep_hidden = "32,16";
  c.combat.flare_rho = 0.3;
  std::istringstream is(serialize_config(c));
  EXPECT_TRUE(config_diff(c, parse_config(is)).empty());
}

TEST(Config, IncludeThenOverride) {
  const fs::path d = scratch("include");
  std::ofstream(d / "base.cfg") << "seed = 7\nw_nce = 0.5\n";
  std::ofstream(d / "child.cfg") << "# comment\ninclude base.cfg\nw_nce = 2\n";
  const RunConfig c = load_config(d / "child.cfg");
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.w_nce, 2.0);
}

TEST(Config, RejectsBadInput) {
  std::istringstream unknown("nonsense = 1\n");
  EXPECT_THROW(parse_config(unknown), ConfigError);
  std::istringstream no_eq("seed 3\n");
  EXPECT_THROW(parse_config(no_eq), ConfigError);
  std::istringstream bad_num("seed = x\n");
  EXPECT_THROW(parse_config(bad_num), ConfigError);
  RunConfig c;
  c.w_vq = -1.0;
  EXPECT_THROW(validate(c), ConfigError);
  c = RunConfig{};
  c.rollout_steps = 100;
  c.workers = 3;
  EXPECT_THROW(validate(c), ConfigError);
  c = RunConfig{};
  c.eval_episodes = 0;
  EXPECT_THROW(validate(c), ConfigError);
}

TEST(Hashes, EnvHashIgnoresAgentSettings) {
  RunConfig a, b;
  b.variant = "hppo";
  b.seed = 4;
  EXPECT_EQ(env_hash(a), env_hash(b));
  EXPECT_NE(config_hash(a), config_hash(b));
  b.maze_file = "data/mazes/open_3x3.txt";
  EXPECT_NE(env_hash(a), env_hash(b));
  RunConfig c;
  c.env = "combat";
  EXPECT_NE(env_hash(a), env_hash(c));
}

TEST(Train, RunShorterThanOneRolloutWritesEmptyLogAndInitialCheckpoint) {
  const fs::path d = scratch("zero");
  RunConfig c = tiny("tart", d);
  c.total_steps = 100;
  const TrainResult r = train(c);
  EXPECT_EQ(r.updates, 0);
  EXPECT_EQ(r.steps, 0);
  EXPECT_TRUE(slurp(d / "metrics.jsonl").empty());
  ASSERT_TRUE(fs::exists(r.checkpoint));
  EXPECT_EQ(load_checkpoint(r.checkpoint).step, 0);
  EXPECT_FALSE(r.final_eval_mean.has_value());
}

TEST(Train, WritesExpectedArtifacts) {
  const fs::path d = scratch("artifacts");
  const TrainResult r = train(tiny("tart", d));
  EXPECT_EQ(r.updates, 2);
  EXPECT_EQ(r.steps, 512);
  for (const char* f : {"config.cfg", "metrics.jsonl", "metrics.csv", "timing.jsonl", "checkpoint.json", "episodes.jsonl"})
    EXPECT_TRUE(fs::exists(d / f)) << f;
  const auto recs = plot::read_jsonl(d / "metrics.jsonl");
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[1]["step"].get<long>(), 512);
  EXPECT_TRUE(recs[1]["perplexity"].is_number());
  EXPECT_TRUE(recs[1]["mi_estimate"].is_number());
  EXPECT_NEAR(recs[1]["total_loss"].get<double>(),
              recs[1]["ppo_loss"].get<double>() + recs[1]["nce_loss"].get<double>() +
                  recs[1]["vq_loss"].get<double>() + recs[1]["commit_loss"].get<double>(),
              1e-9);
}

TEST(Train, SameSeedGivesByteIdenticalMetrics) {
  for (int workers : {1, 2}) {
    const fs::path a = scratch("det_a"), b = scratch("det_b");
    RunConfig ca = tiny("tart", a), cb = tiny("tart", b);
    ca.workers = cb.workers = workers;
    train(ca);
    train(cb);
    EXPECT_EQ(slurp(a / "metrics.jsonl"), slurp(b / "metrics.jsonl")) << workers;
    EXPECT_EQ(slurp(a / "episodes.jsonl"), slurp(b / "episodes.jsonl")) << workers;
  }
}

TEST(Train, ZeroRepresentationWeightsAreLoggedAsZero) {
  const fs::path d = scratch("zero_w");
  RunConfig c = tiny("tart", d);
  c.w_nce = c.w_vq = c.w_commit = 0.0;
  train(c);
  for (const auto& r : plot::read_jsonl(d / "metrics.jsonl")) {
    EXPECT_EQ(r["nce_loss"].get<double>(), 0.0);
    EXPECT_EQ(r["vq_loss"].get<double>(), 0.0);
    EXPECT_EQ(r["commit_loss"].get<double>(), 0.0);
  }
}

TEST(Train, HppoLogsNullRepresentationDiagnostics) {
  const fs::path d = scratch("hppo");
  train(tiny("hppo", d));
  for (const auto& r : plot::read_jsonl(d / "metrics.jsonl")) {
    EXPECT_TRUE(r["mi_estimate"].is_null());
    EXPECT_TRUE(r["perplexity"].is_null());
  }
}

TEST(Train, DivergenceAbortsWithDiagnostic) {
  const fs::path d = scratch("abort");
  RunConfig c = tiny("hppo", d);
  c.lr = 1e300;
  c.max_grad_norm = 0.0;
  c.ppo_epochs = 4;
  EXPECT_THROW(train(c), RuntimeAbort);
  EXPECT_TRUE(fs::exists(d / "abort.txt"));
  EXPECT_NE(slurp(d / "abort.txt").find("non-finite"), std::string::npos);
  EXPECT_TRUE(fs::exists(d / "checkpoint.json"));
}

TEST(Train, OutputRootFollowsEnvironmentVariable) {
  const fs::path root = scratch("out_root");
  ::setenv("TART_OUT", root.c_str(), 1);
  RunConfig c = tiny("hppo", "");
  c.out.clear();
  c.total_steps = 256;
  const TrainResult r = train(c);
  ::unsetenv("TART_OUT");
  EXPECT_EQ(r.out_dir, root / "hppo_seed0");
  EXPECT_TRUE(fs::exists(root / "hppo_seed0" / "metrics.jsonl"));
}

TEST(Eval, RejectsZeroEpisodes) {
  RunConfig c = tiny("tart", "");
  const auto env = make_env(c);
  Rng rng = make_rng(0, 1);
  const auto agent = make_agent(c, env_info(*env), rng);
  EXPECT_THROW(evaluate_agent(*agent, *env, 0, 0), RejectionError);
}

TEST(Eval, GreedyPolicyOnDeterministicMazeHasZeroSpread) {
  RunConfig c = tiny("tart", "");
  const auto env = make_env(c);
  Rng rng = make_rng(0, 1);
  const auto agent = make_agent(c, env_info(*env), rng);
  const EvalSummary s = evaluate_agent(*agent, *env, 5, 11);
  EXPECT_EQ(s.episodes, 5);
  EXPECT_EQ(s.std_return, 0.0);
}

TEST(Eval, CheckpointReloadReproducesFinalEvaluation) {
  const fs::path d = scratch("reload");
  const RunConfig c = tiny("tart", d);
  const TrainResult r = train(c);
  ASSERT_TRUE(r.final_eval_mean.has_value());
  const EvalSummary s = evaluate_checkpoint(r.checkpoint, c.eval_episodes);
  EXPECT_EQ(s.mean_return, *r.final_eval_mean);
  EXPECT_EQ(s.std_return, *r.final_eval_std);
}

TEST(Eval, CheckpointRejectsOtherEnvironment) {
  const fs::path d = scratch("hash");
  RunConfig c = tiny("tart", d);
  c.total_steps = 256;
  const TrainResult r = train(c);
  RunConfig combat;
  combat.env = "combat";
  EXPECT_THROW(evaluate_checkpoint(r.checkpoint, 1, {}, combat), RejectionError);
  EXPECT_NO_THROW(evaluate_checkpoint(r.checkpoint, 1, {}, c));
  EXPECT_THROW(evaluate_checkpoint(d / "missing.json", 1), RejectionError);
}

TEST(Plot, SingleRunHasNoBandAndIsReproducible) {
  const fs::path d = scratch("plot_run");
  train(tiny("tart", d));
  const fs::path p1 = scratch("plot_a"), p2 = scratch("plot_b");
  const auto w1 = plot::plot({d}, p1);
  plot::plot({d}, p2);
  ASSERT_TRUE(fs::exists(p1 / "learning_curve.svg"));
  EXPECT_EQ(slurp(p1 / "learning_curve.svg").find("<polygon"), std::string::npos);
  EXPECT_TRUE(fs::exists(p1 / "mi_estimate.svg"));
  EXPECT_TRUE(fs::exists(p1 / "perplexity.svg"));
  for (const fs::path& f : w1) EXPECT_EQ(slurp(f), slurp(p2 / f.filename())) << f;
}

TEST(Plot, SeveralSeedsOfOneVariantAreShaded) {
  const fs::path a = scratch("plot_s0"), b = scratch("plot_s1");
  RunConfig ca = tiny("tart", a), cb = tiny("tart", b);
  cb.seed = 1;
  train(ca);
  train(cb);
  const fs::path out = scratch("plot_band");
  plot::plot({a, b}, out);
  EXPECT_NE(slurp(out / "learning_curve.svg").find("<polygon"), std::string::npos);
}

TEST(Plot, MissingColumnsOmitTheirPanels) {
  const fs::path d = scratch("plot_hppo");
  train(tiny("hppo", d));
  const fs::path out = scratch("plot_hppo_out");
  plot::plot({d}, out);
  EXPECT_TRUE(fs::exists(out / "learning_curve.svg"));
  EXPECT_FALSE(fs::exists(out / "mi_estimate.svg"));
  EXPECT_FALSE(fs::exists(out / "perplexity.svg"));
}

TEST(Plot, RejectsEmptyOrMissingLogs) {
  const fs::path d = scratch("plot_empty");
  std::ofstream(d / "metrics.jsonl").close();
  EXPECT_THROW(plot::plot({d / "metrics.jsonl"}, d / "out"), RejectionError);
  EXPECT_THROW(plot::plot({d / "nope.jsonl"}, d / "out"), RejectionError);
  EXPECT_THROW(plot::plot({}, d / "out"), RejectionError);
}

TEST(Compare, AggregatesSeedsPerVariant) {
  const fs::path d = scratch("compare");
  RunConfig base = tiny("tart", "");
  base.out.clear();
  const ComparisonResult res = run_comparison(base, {"hppo"}, {0, 1}, d);
  ASSERT_EQ(res.rows.size(), 2u);
  ASSERT_EQ(res.summary.size(), 1u);
  for (const auto& r : res.rows) EXPECT_TRUE(r.ok) << r.error;
  const double m0 = res.rows[0].final_return_mean, m1 = res.rows[1].final_return_mean;
  EXPECT_NEAR(res.summary[0].mean, (m0 + m1) / 2, 1e-12);
  EXPECT_NEAR(res.summary[0].std, std::abs(m0 - m1) / 2, 1e-12);
  EXPECT_EQ(res.summary[0].runs_ok, 2);
  const std::string csv = slurp(d / "results.csv");
  EXPECT_EQ(csv.rfind(kResultsHeader, 0), 0u);
  EXPECT_TRUE(fs::exists(d / "summary.csv"));
  EXPECT_TRUE(fs::exists(d / "comparison.svg"));

  const fs::path d2 = scratch("compare2");
  const ComparisonResult again = run_comparison(base, {"hppo"}, {0, 1}, d2, 2);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(again.rows[i].final_return_mean, res.rows[i].final_return_mean);
  EXPECT_EQ(slurp(d / "summary.csv"), slurp(d2 / "summary.csv"));
}

TEST(Compare, RejectsSingleSeedAndUnknownVariant) {
  const fs::path d = scratch("compare_bad");
  const RunConfig base = tiny("tart", "");
  EXPECT_THROW(run_comparison(base, {"tart"}, {0}, d), RejectionError);
  EXPECT_THROW(run_comparison(base, {"foo"}, {0, 1}, d), RejectionError);
}
