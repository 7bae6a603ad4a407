#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "tart/policy.hpp"
#include "tart/ppo.hpp"

using namespace tart;
using nn::Mat;
using policy::ActMode;
using policy::Conditioning;
using policy::PolicyAction;
using policy::PolicyConfig;
using policy::PolicyNet;

namespace {

ActionSpec hybrid_spec() {
  ActionSpec s;
  s.num_discrete = 3;
  s.param_dims = {2, 2, 2};
  s.param_bounds = {{{-1, 1}, {0, 4}}, {{-1, 1}, {0, 4}}, {{-2, -1}, {-3, 3}}};
  return s;
}

PolicyConfig tactic_config(const ActionSpec& spec, int obs_dim = 4) {
  PolicyConfig c;
  c.obs_dim = obs_dim;
  c.spec = spec;
  c.num_codes = 3;
  c.cond_dim = 2;
  c.hidden = {8};
  c.init_logstd = 0.0;
  return c;
}

Mat code_table() {
  Mat t(2, 3);
  t << 1, 0, -1, 0, 1, 0.5;
  return t;
}

// Zeroes the actor's output layer so both softmax heads are uniform.
void flatten_actor(PolicyNet& net) {
  for (nn::Param* p : net.params())
    if (p->name == "actor.w1" || p->name == "actor.b1") p->value.setZero();
}

}  // namespace

TEST(PolicyOutput, ProbabilitiesAreSimplicesAndLogStdBounded) {
  Rng rng = make_rng(1);
  const PolicyNet net(tactic_config(hybrid_spec()), rng);
  for (int i = 0; i < 100; ++i) {
    const auto out = net.output(Vec::Random(4) * 3.0, Vec::Random(2));
    EXPECT_NEAR(out.discrete_probs.sum(), 1.0, 1e-6);
    EXPECT_NEAR(out.code_probs.sum(), 1.0, 1e-6);
    EXPECT_GE(out.discrete_probs.minCoeff(), 0.0);
    EXPECT_GE(out.code_probs.minCoeff(), 0.0);
    EXPECT_GE(out.maneuver_logstd.minCoeff(), policy::kLogStdMin);
    EXPECT_LE(out.maneuver_logstd.maxCoeff(), policy::kLogStdMax);
    EXPECT_TRUE(std::isfinite(out.value));
  }
}

TEST(PolicyAct, GreedyIsDeterministic) {
  Rng rng = make_rng(2);
  const PolicyNet net(tactic_config(hybrid_spec()), rng);
  const Mat table = code_table();
  Conditioning cond;
  cond.code_table = &table;
  const Vec obs = Vec::Random(4);
  Rng r1 = make_rng(10), r2 = make_rng(20);
  const auto a = net.act(obs, cond, ActMode::kGreedy, r1);
  const auto b = net.act(obs, cond, ActMode::kGreedy, r2);
  EXPECT_TRUE(a.action == b.action);
  EXPECT_EQ(a.pa.code, b.pa.code);
  EXPECT_EQ(a.log_prob, b.log_prob);
}

TEST(PolicyAct, SamplesStayInBoundsWithoutClipping) {
  Rng rng = make_rng(3);
  PolicyConfig cfg = tactic_config(hybrid_spec());
  cfg.init_logstd = 2.0;  // wide noise pushes samples toward the bounds
  const PolicyNet net(cfg, rng);
  const Mat table = code_table();
  Conditioning cond;
  cond.code_table = &table;
  for (int i = 0; i < 10000; ++i) {
    const auto r = net.act(Vec::Random(4), cond, ActMode::kSample, rng);
    const auto& b = cfg.spec.param_bounds[static_cast<std::size_t>(r.action.discrete)];
    for (Eigen::Index j = 0; j < r.action.params.size(); ++j) {
      ASSERT_GE(r.action.params[j], b[j].lo);
      ASSERT_LE(r.action.params[j], b[j].hi);
    }
    ASSERT_FALSE(validate_action(cfg.spec, r.action).clipped);
  }
}

TEST(PolicyAct, LogProbMatchesEvaluate) {
  Rng rng = make_rng(4);
  const PolicyNet net(tactic_config(hybrid_spec()), rng);
  const Mat table = code_table();
  Conditioning cond;
  cond.code_table = &table;
  for (int i = 0; i < 200; ++i) {
    const Vec obs = Vec::Random(4);
    const auto r = net.act(obs, cond, ActMode::kSample, rng);
    Mat o(4, 1);
    o.col(0) = obs;
    const auto ev = net.evaluate(o, std::span<const PolicyAction>(&r.pa, 1));
    EXPECT_NEAR(ev.log_probs[0], r.log_prob, 1e-6);
    EXPECT_NEAR(ev.values[0], r.value, 1e-12);
  }
}

TEST(PolicyAct, RejectsWrongObservationWidth) {
  Rng rng = make_rng(4);
  const PolicyNet net(tactic_config(hybrid_spec()), rng);
  const Mat table = code_table();
  Conditioning cond;
  cond.code_table = &table;
  EXPECT_THROW(net.act(Vec::Zero(5), cond, ActMode::kGreedy, rng), RejectionError);
  std::vector<PolicyAction> acts(2);
  EXPECT_THROW(net.evaluate(Mat::Zero(4, 3), acts), RejectionError);
}

TEST(PolicyEvaluate, UniformTwoWayHeadHasEntropyLn2) {
  Rng rng = make_rng(5);
  PolicyConfig cfg;
  cfg.obs_dim = 2;
  cfg.spec = ActionSpec::uniform(2, 0);
  cfg.hidden = {4};
  PolicyNet net(cfg, rng);
  flatten_actor(net);
  PolicyAction a;
  a.discrete = 1;
  const auto ev = net.evaluate(Mat::Random(2, 1), std::span<const PolicyAction>(&a, 1));
  EXPECT_NEAR(ev.entropy[0], std::log(2.0), 1e-12);
  EXPECT_NEAR(ev.log_probs[0], -std::log(2.0), 1e-12);
}

TEST(PolicyEvaluate, DiscreteAndCodeEntropiesNonNegative) {
  Rng rng = make_rng(6);
  PolicyConfig cfg = tactic_config(ActionSpec::uniform(3, 0));
  const PolicyNet net(cfg, rng);
  const Mat table = code_table();
  Conditioning cond;
  cond.code_table = &table;
  for (int i = 0; i < 200; ++i) {
    const auto r = net.act(Vec::Random(4) * 5.0, cond, ActMode::kSample, rng);
    Mat o = Mat::Random(4, 1) * 5.0;
    EXPECT_GE(net.evaluate(o, std::span<const PolicyAction>(&r.pa, 1)).entropy[0], 0.0);
  }
}

TEST(PolicyEvaluate, JointDistributionOverDiscreteAndCodeIsNormalised) {
  Rng rng = make_rng(7);
  PolicyConfig cfg = tactic_config(ActionSpec::uniform(3, 0));
  const PolicyNet net(cfg, rng);
  const Mat table = code_table();
  for (int trial = 0; trial < 20; ++trial) {
    const Mat o = Mat::Random(4, 1) * 3.0;
    double total = 0.0;
    for (int k = 0; k < 3; ++k)
      for (int c = 0; c < 3; ++c) {
        PolicyAction a;
        a.discrete = k;
        a.code = c;
        a.code_selected = true;
        a.cond = table.col(c);
        total += std::exp(net.evaluate(o, std::span<const PolicyAction>(&a, 1)).log_probs[0]);
      }
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(PolicyEvaluate, GradientsMatchFiniteDifferences) {
  Rng rng = make_rng(8);
  PolicyConfig cfg = tactic_config(hybrid_spec(), 3);
  cfg.hidden = {5};
  PolicyNet net(cfg, rng);
  const Mat table = code_table();
  Conditioning cond;
  cond.code_table = &table;
  const int n = 6;
  Mat obs = Mat::Random(3, n);
  std::vector<PolicyAction> acts;
  for (int i = 0; i < n; ++i) {
    cond.select_code = i % 2 == 0;
    cond.held_code = 1;
    acts.push_back(net.act(obs.col(i), cond, ActMode::kSample, rng).pa);
  }
  const Vec gl = Vec::Random(n), ge = Vec::Random(n), gv = Vec::Random(n);
  const auto objective = [&]() {
    const auto ev = net.evaluate(obs, acts);
    return gl.dot(ev.log_probs) + ge.dot(ev.entropy) + gv.dot(ev.values);
  };
  auto ps = net.params();
  nn::zero_grads(ps);
  PolicyNet::Tape tape;
  net.evaluate(obs, acts, &tape);
  net.backward(tape, obs, acts, gl, ge, gv);
  const Vec analytic = nn::flatten_grads(ps);
  const Vec theta = nn::flatten_values(ps);
  const Vec fd = oracle::fd_gradient(
      [&](const Vec& t) {
        nn::assign_values(ps, t);
        return objective();
      },
      theta);
  nn::assign_values(ps, theta);
  EXPECT_LT(oracle::rel_error(analytic, fd), 1e-4);
}

TEST(Gae, TelescopingSum) {
  const std::vector<double> r{1, 1, 1}, v{0, 0, 0};
  const std::vector<char> d{0, 0, 1};
  const auto g = ppo::gae_advantages(r, v, d, 1.0, 1.0);
  EXPECT_EQ(g.advantages, (Vec(3) << 3, 2, 1).finished());
  EXPECT_EQ(g.value_targets, g.advantages);
}

TEST(Gae, LambdaZeroIsTdError) {
  const std::vector<double> r{0.5, -1.0, 2.0}, v{0.2, 0.4, -0.3};
  const std::vector<char> d{0, 0, 0};
  const double gamma = 0.9;
  const auto g = ppo::gae_advantages(r, v, d, gamma, 0.0, 0.7);
  EXPECT_DOUBLE_EQ(g.advantages[0], 0.5 + gamma * 0.4 - 0.2);
  EXPECT_DOUBLE_EQ(g.advantages[1], -1.0 + gamma * -0.3 - 0.4);
  EXPECT_DOUBLE_EQ(g.advantages[2], 2.0 + gamma * 0.7 + 0.3);
  for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(g.value_targets[i], g.advantages[i] + v[static_cast<std::size_t>(i)]);
}

TEST(Gae, NoBootstrapAcrossDone) {
  const std::vector<double> r{0.5, 1.0}, v{0.2, 5.0};
  const std::vector<char> d{1, 0};
  EXPECT_DOUBLE_EQ(ppo::gae_advantages(r, v, d, 0.99, 0.0).advantages[0], 0.5 - 0.2);
  EXPECT_DOUBLE_EQ(ppo::gae_advantages(r, v, d, 0.99, 0.95).advantages[0], 0.5 - 0.2);
}

TEST(Gae, RejectsBadInputs) {
  const std::vector<double> r{1}, v{0, 0};
  const std::vector<char> d{0};
  EXPECT_THROW(ppo::gae_advantages(r, v, d, 0.9, 0.9), RejectionError);
  EXPECT_THROW(ppo::gae_advantages(r, r, d, 1.1, 0.9), RejectionError);
}

namespace {

ppo::RolloutBatch sample_batch(const PolicyNet& net, const Mat& table, int n, Rng& rng) {
  ppo::RolloutBatch b;
  Conditioning cond;
  cond.code_table = &table;
  b.observations = Mat::Random(net.config().obs_dim, n);
  b.old_log_probs.resize(n);
  b.value_targets = Vec::Random(n);
  b.advantages = Vec::Random(n);
  for (int i = 0; i < n; ++i) {
    const auto r = net.act(b.observations.col(i), cond, ActMode::kSample, rng);
    b.actions.push_back(r.pa);
    b.old_log_probs[i] = r.log_prob;
  }
  return b;
}

}  // namespace

TEST(Ppo, ZeroAdvantagesGiveZeroPolicyTerm) {
  Rng rng = make_rng(9);
  PolicyNet net(tactic_config(hybrid_spec()), rng);
  const Mat table = code_table();
  ppo::RolloutBatch b = sample_batch(net, table, 16, rng);
  b.advantages.setZero();
  std::vector<int> idx(16);
  for (int i = 0; i < 16; ++i) idx[static_cast<std::size_t>(i)] = i;
  auto ps = net.params();
  nn::zero_grads(ps);
  const auto l = ppo::ppo_loss(net, b, b.advantages, idx, {}, true);
  EXPECT_EQ(l.policy_loss, 0.0);
  // With the entropy bonus off as well, only the critic receives gradient.
  nn::zero_grads(ps);
  ppo::PpoConfig no_entropy;
  no_entropy.entropy_coef = 0.0;
  ppo::ppo_loss(net, b, b.advantages, idx, no_entropy, true);
  for (nn::Param* p : ps) {
    if (p->name.rfind("actor", 0) == 0 || p->name.rfind("maneuver", 0) == 0 || p->name == "logstd")
      EXPECT_EQ(p->grad.norm(), 0.0) << p->name;
  }
}

TEST(Ppo, UnchangedParamsGiveUnitRatio) {
  Rng rng = make_rng(10);
  PolicyNet net(tactic_config(hybrid_spec()), rng);
  const Mat table = code_table();
  const ppo::RolloutBatch b = sample_batch(net, table, 32, rng);
  std::vector<int> idx(32);
  for (int i = 0; i < 32; ++i) idx[static_cast<std::size_t>(i)] = i;
  const auto l = ppo::ppo_loss(net, b, b.advantages, idx, {}, false);
  EXPECT_EQ(l.clip_fraction, 0.0);
  EXPECT_NEAR(l.approx_kl, 0.0, 1e-12);
  EXPECT_NEAR(l.policy_loss, -b.advantages.mean(), 1e-9);
}

TEST(Ppo, PositiveAdvantageRaisesTakenActionProbability) {
  Rng rng = make_rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    PolicyNet net(tactic_config(hybrid_spec()), rng);
    const Mat table = code_table();
    ppo::RolloutBatch b = sample_batch(net, table, 1, rng);
    b.advantages[0] = 1.0;
    b.value_targets[0] = 0.0;
    ppo::PpoConfig cfg;
    cfg.epochs = 1;
    cfg.entropy_coef = 0.0;
    nn::Adam opt({.lr = 1e-3});
    ppo::ppo_update(net, opt, b, cfg, rng);
    const auto after = net.evaluate(b.observations, b.actions);
    EXPECT_GE(after.log_probs[0], b.old_log_probs[0]);
  }
}

TEST(Ppo, MismatchedBatchIsRejected) {
  Rng rng = make_rng(12);
  PolicyNet net(tactic_config(hybrid_spec()), rng);
  const Mat table = code_table();
  ppo::RolloutBatch b = sample_batch(net, table, 4, rng);
  b.advantages = Vec::Zero(3);
  nn::Adam opt;
  EXPECT_THROW(ppo::ppo_update(net, opt, b, {}, rng), RejectionError);
}

TEST(Ppo, NonFiniteLossAbortsWithDiagnostic) {
  Rng rng = make_rng(13);
  PolicyNet net(tactic_config(hybrid_spec()), rng);
  const Mat table = code_table();
  ppo::RolloutBatch b = sample_batch(net, table, 4, rng);
  b.value_targets[2] = std::numeric_limits<double>::infinity();
  nn::Adam opt;
  const auto s = ppo::ppo_update(net, opt, b, {}, rng);
  EXPECT_TRUE(s.aborted);
  EXPECT_FALSE(s.diagnostic.empty());
}

TEST(Conditioning, TwoCodeBanditLearnsOppositeModes) {
  // Each code's conditioning vector points at a different target maneuver;
  // the reward is high only when the maneuver matches the chosen code's mode.
  Rng rng = make_rng(14);
  PolicyConfig cfg;
  cfg.obs_dim = 1;
  cfg.spec = ActionSpec::uniform(1, 1);
  cfg.num_codes = 2;
  cfg.cond_dim = 1;
  cfg.hidden = {16};
  cfg.init_logstd = -0.5;
  PolicyNet net(cfg, rng);
  Mat table(1, 2);
  table << 1.0, -1.0;
  const double target[2] = {0.7, -0.7};
  Conditioning cond;
  cond.code_table = &table;
  nn::Adam opt({.lr = 3e-3});
  ppo::PpoConfig pcfg;
  pcfg.minibatch = 64;
  const Vec obs = Vec::Ones(1);
  for (int it = 0; it < 60; ++it) {
    ppo::RolloutBatch b;
    const int n = 256;
    b.observations = Mat::Ones(1, n);
    b.old_log_probs.resize(n);
    std::vector<double> rewards, values;
    std::vector<char> dones(static_cast<std::size_t>(n), 1);
    for (int i = 0; i < n; ++i) {
      const auto r = net.act(obs, cond, ActMode::kSample, rng);
      b.actions.push_back(r.pa);
      b.old_log_probs[i] = r.log_prob;
      rewards.push_back(1.0 - std::abs(r.action.params[0] - target[r.pa.code]));
      values.push_back(r.value);
    }
    const auto g = ppo::gae_advantages(rewards, values, dones, 0.99, 0.95);
    b.advantages = g.advantages;
    b.value_targets = g.value_targets;
    ppo::ppo_update(net, opt, b, pcfg, rng);
  }
  Rng greedy = make_rng(0);
  cond.select_code = false;
  cond.held_code = 0;
  const double m0 = net.act(obs, cond, ActMode::kGreedy, greedy).action.params[0];
  cond.held_code = 1;
  const double m1 = net.act(obs, cond, ActMode::kGreedy, greedy).action.params[0];
  EXPECT_GT(m0 - m1, 0.5) << m0 << " " << m1;
}
