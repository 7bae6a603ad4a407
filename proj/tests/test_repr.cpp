#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "tart/repr.hpp"

using namespace tart;
using nn::Mat;
using repr::EncoderConfig;
using repr::TemporalEncoder;

namespace {

EncoderConfig small_cfg(int window) {
  EncoderConfig c;
  c.latent_dim = 4;
  c.hidden = {8};
  c.window = window;
  c.temperature = 0.5;
  return c;
}

Mat unit_columns(Rng& rng, int d, int n) {
  Mat m(d, n);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = standard_normal(rng);
  return nn::normalize_columns(m);
}

}  // namespace

TEST(Encoders, OutputsAreUnitNormAndDeterministic) {
  Rng rng = make_rng(1);
  TemporalEncoder enc(small_cfg(3), 5, rng);
  for (int i = 0; i < 50; ++i) {
    const Vec a = Vec::Random(5);
    const Mat w = Mat::Random(3, 5);
    EXPECT_NEAR(enc.encode_anchor(a).norm(), 1.0, 1e-5);
    EXPECT_NEAR(enc.encode_window(w).norm(), 1.0, 1e-5);
    EXPECT_TRUE(enc.encode_anchor(a) == enc.encode_anchor(a));
    EXPECT_TRUE(enc.encode_window(w) == enc.encode_window(w));
  }
}

TEST(Encoders, RejectWrongShapes) {
  Rng rng = make_rng(1);
  TemporalEncoder enc(small_cfg(3), 5, rng);
  EXPECT_THROW(enc.encode_anchor(Vec::Zero(4)), RejectionError);
  EXPECT_THROW(enc.encode_window(Mat::Zero(2, 5)), RejectionError);
  EXPECT_THROW(enc.encode_window(Mat::Zero(3, 6)), RejectionError);
}

TEST(EncoderConfig, RejectsInvalid) {
  EncoderConfig c;
  c.latent_dim = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = EncoderConfig{};
  c.temperature = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(InfoNce, UniformSimilaritiesGiveLogN) {
  const auto r = repr::infonce_from_logits(Mat::Constant(4, 4, 0.37));
  EXPECT_NEAR(r.loss, std::log(4.0), 1e-12);
  EXPECT_NEAR(r.mi_estimate, 0.0, 1e-12);
}

TEST(InfoNce, UniformUnitBatchGivesLogN) {
  // Every anchor and positive is the same unit vector.
  Mat z = Mat::Zero(3, 4);
  z.row(0).setOnes();
  const auto r = repr::infonce_loss(z, z, 0.1);
  EXPECT_NEAR(r.loss, std::log(4.0), 1e-6);
}

TEST(InfoNce, SaturatedDiagonalGivesZero) {
  const double tau = 0.1;
  const Mat s = Mat::Identity(4, 4) * (100.0 / tau);
  EXPECT_NEAR(repr::infonce_from_logits(s).loss, 0.0, 1e-12);
}

TEST(InfoNce, RejectsSmallOrMalformedBatches) {
  Rng rng = make_rng(0);
  const Mat one = unit_columns(rng, 3, 1);
  EXPECT_THROW(repr::infonce_loss(one, one, 0.1), RejectionError);
  const Mat two = unit_columns(rng, 3, 2);
  EXPECT_THROW(repr::infonce_loss(two, two * 2.0, 0.1), RejectionError);
  EXPECT_THROW(repr::infonce_loss(two, unit_columns(rng, 3, 3), 0.1), RejectionError);
}

TEST(InfoNce, NonNegativeAndBoundedByLogN) {
  Rng rng = make_rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + uniform_index(rng, 30);
    const int d = 2 + uniform_index(rng, 15);
    const double tau = 0.05 + uniform01(rng);
    const auto r = repr::infonce_loss(unit_columns(rng, d, n), unit_columns(rng, d, n), tau);
    EXPECT_GE(r.loss, 0.0);
    EXPECT_LE(r.mi_estimate, std::log(static_cast<double>(n)) + 1e-12);
  }
}

TEST(InfoNce, EncoderGradientsMatchFiniteDifferences) {
  // d = 4, N = 8 on a fixed tiny pair of encoders.
  Rng rng = make_rng(3);
  TemporalEncoder enc(small_cfg(2), 3, rng);
  const Mat anchors = Mat::Random(3, 8);
  const Mat windows = Mat::Random(6, 8);
  const double tau = 0.5;
  const auto loss = [&]() {
    return repr::infonce_loss(enc.anchor().encode(anchors), enc.window().encode(windows), tau).loss;
  };
  repr::UnitEncoder::Tape ta, tw;
  const auto r = repr::infonce_loss(enc.anchor().encode(anchors, &ta), enc.window().encode(windows, &tw), tau);
  auto ps = enc.params();
  nn::zero_grads(ps);
  enc.anchor().backward(ta, r.grad_anchors);
  enc.window().backward(tw, r.grad_positives);
  const Vec analytic = nn::flatten_grads(ps);
  const Vec theta = nn::flatten_values(ps);
  const Vec fd = oracle::fd_gradient(
      [&](const Vec& t) {
        nn::assign_values(ps, t);
        return loss();
      },
      theta);
  nn::assign_values(ps, theta);
  EXPECT_LT(oracle::rel_error(analytic, fd), 1e-4);
}

TEST(WindowEncoder, TrainedEncoderIsOrderSensitive) {
  // The anchor says whether the window ramps up or down; both orders use
  // the same multiset of rows, so only step order carries the signal.
  Rng rng = make_rng(11);
  EncoderConfig cfg = small_cfg(4);
  cfg.latent_dim = 8;
  cfg.hidden = {32};
  cfg.temperature = 0.2;
  TemporalEncoder enc(cfg, 2, rng);
  auto ps = enc.params();
  nn::Adam opt({.lr = 3e-3});
  const int n = 32;
  const auto make_window = [&](double base, bool up) {
    Mat w(4, 2);
    for (int k = 0; k < 4; ++k) {
      const int step = up ? k : 3 - k;
      w(k, 0) = base + 0.25 * step;
      w(k, 1) = 0.0;
    }
    return w;
  };
  const auto flat = [](const Mat& w) {
    const Mat t = w.transpose();
    return Vec(t.reshaped());
  };
  double last_mi = 0.0;
  for (int it = 0; it < 400; ++it) {
    Mat a(2, n), m(8, n);
    for (int i = 0; i < n; ++i) {
      const bool up = bernoulli(rng, 0.5);
      const double base = uniform01(rng) - 0.5;
      a(0, i) = up ? 1.0 : -1.0;
      a(1, i) = base;
      m.col(i) = flat(make_window(base, up));
    }
    repr::UnitEncoder::Tape ta, tw;
    const auto r = repr::infonce_loss(enc.anchor().encode(a, &ta), enc.window().encode(m, &tw), cfg.temperature);
    nn::zero_grads(ps);
    enc.anchor().backward(ta, r.grad_anchors);
    enc.window().backward(tw, r.grad_positives);
    opt.step(ps);
    last_mi = r.mi_estimate;
  }
  EXPECT_GT(last_mi, std::log(2.0) * 0.5);
  const Mat w = make_window(0.1, true);
  const Mat reversed = w.colwise().reverse();
  EXPECT_GT((enc.encode_window(w) - enc.encode_window(reversed)).norm(), 0.1);
}

TEST(InfoNce, GaussianMiEstimateIsWithinAnalyticBand) {
  const auto run = fixture::train_gaussian_mi(0, 0.9, 256, 1000, 20);
  EXPECT_NEAR(oracle::gaussian_mi(0.9), 0.830, 1e-3);
  EXPECT_GE(run.estimate, 0.6);
  EXPECT_LE(run.estimate, oracle::gaussian_mi(0.9));
}

TEST(InfoNce, EstimatorTrainedOnIndependentPairsReadsZero) {
  const auto run = fixture::train_gaussian_mi(0, 0.9, 256, 1000, 0, true, 100);
  EXPECT_NEAR(run.shuffled, 0.0, 0.1);
}
