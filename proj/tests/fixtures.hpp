#pragma once

// Training scripts shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <vector>

#include "tart/nn.hpp"
#include "tart/repr.hpp"
#include "tart/rng.hpp"

namespace fixture {

using tart::nn::Mat;
using tart::nn::Vec;

// Paired samples (x, y) from a standard bivariate normal with correlation rho.
inline void gaussian_pairs(tart::Rng& rng, int n, double rho, Mat& x, Mat& y) {
  x.resize(1, n);
  y.resize(1, n);
  const double s = std::sqrt(1.0 - rho * rho);
  for (int i = 0; i < n; ++i) {
    const double a = tart::standard_normal(rng);
    x(0, i) = a;
    y(0, i) = rho * a + s * tart::standard_normal(rng);
  }
}

struct MiRun {
  double estimate = 0.0;       // mean over held-out batches
  double shuffled = 0.0;       // one held-out batch, mean over `shuffles` permutations of the positives
  std::vector<double> trace;   // training-batch estimates
};

inline Mat permute_columns(const Mat& m, tart::Rng& rng) {
  std::vector<int> perm(static_cast<std::size_t>(m.cols()));
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
  std::shuffle(perm.begin(), perm.end(), rng);
  Mat out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.cols(); ++i) out.col(i) = m.col(perm[static_cast<std::size_t>(i)]);
  return out;
}

// Trains two unit encoders with InfoNCE on correlated Gaussian pairs and
// reports the held-out MI estimate ln N - loss. With `shuffle_pairs` the
// training pairing is permuted every batch, so the encoders only ever see
// independent pairs.
inline MiRun train_gaussian_mi(std::uint64_t seed, double rho, int batch, int steps, int eval_batches,
                               bool shuffle_pairs = false, int shuffles = 100, double temperature = 0.1) {
  tart::Rng rng = tart::make_rng(seed, 1);
  tart::repr::UnitEncoder fa("fa", 1, {64, 64}, 8, rng), fb("fb", 1, {64, 64}, 8, rng);
  auto params = tart::nn::concat({fa.params(), fb.params()});
  tart::nn::Adam opt({.lr = 1e-3});
  MiRun run;
  Mat x, y;
  for (int s = 0; s < steps; ++s) {
    gaussian_pairs(rng, batch, rho, x, y);
    if (shuffle_pairs) y = permute_columns(y, rng);
    tart::repr::UnitEncoder::Tape ta, tb;
    const Mat za = fa.encode(x, &ta), zb = fb.encode(y, &tb);
    const auto r = tart::repr::infonce_loss(za, zb, temperature);
    tart::nn::zero_grads(params);
    fa.backward(ta, r.grad_anchors);
    fb.backward(tb, r.grad_positives);
    opt.step(params);
    run.trace.push_back(r.mi_estimate);
  }
  tart::Rng eval = tart::make_rng(seed, 2);
  for (int b = 0; b < eval_batches; ++b) {
    gaussian_pairs(eval, batch, rho, x, y);
    run.estimate += tart::repr::infonce_loss(fa.encode(x), fb.encode(y), temperature).mi_estimate / eval_batches;
  }
  gaussian_pairs(eval, batch, rho, x, y);
  const Mat za = fa.encode(x), zb = fb.encode(y);
  for (int k = 0; k < shuffles; ++k)
    run.shuffled += tart::repr::infonce_loss(za, permute_columns(zb, eval), temperature).mi_estimate / shuffles;
  return run;
}

}  // namespace fixture
