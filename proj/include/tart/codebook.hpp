#pragma once

// Vector-quantised tactic codebook.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "tart/errors.hpp"
#include "tart/nn.hpp"
#include "tart/rng.hpp"

namespace tart::vq {

using nn::Mat;
using nn::Vec;

inline constexpr double kDeadThreshold = 1e-3;
inline constexpr double kReinitNoise = 1e-3;

struct Codebook {
  nn::Param entries;  // d x K_c, one code per column
  Vec usage;          // EMA of per-code assignment frequency
  double beta = 0.25;
  bool initialized = false;  // entries seeded from encoder outputs
  Mat ema_sum;               // EMA-mode running sums, d x K_c
  Vec ema_count;

  Codebook() = default;
  Codebook(int dim, int num_codes, double beta_, Rng& rng) : beta(beta_) {
    if (num_codes < 2) throw ConfigError("codebook needs K_c >= 2");
    if (!(beta_ > 0.0)) throw ConfigError("codebook beta must be > 0");
    Mat e(dim, num_codes);
    for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = standard_normal(rng);
    entries = nn::Param("codebook", nn::normalize_columns(e));
    usage = Vec::Constant(num_codes, 1.0 / num_codes);
    ema_sum = entries.value;
    ema_count = Vec::Ones(num_codes);
  }

  int size() const { return static_cast<int>(entries.value.cols()); }
  int dim() const { return static_cast<int>(entries.value.rows()); }
  Vec code(int k) const { return entries.value.col(k); }
};

struct Quantized {
  int index = 0;
  Vec code;
  double distance2 = 0.0;
};

// Nearest entry by Euclidean distance; ties go to the lowest index.
inline Quantized quantize(const Vec& z, const Codebook& cb) {
  if (z.size() != cb.dim()) throw RejectionError("quantize: latent width differs from codebook dimension");
  if (!z.allFinite()) throw RejectionError("quantize: latent is not finite");
  Quantized q;
  q.distance2 = std::numeric_limits<double>::infinity();
  for (int k = 0; k < cb.size(); ++k) {
    const double d = (z - cb.entries.value.col(k)).squaredNorm();
    if (d < q.distance2) {
      q.distance2 = d;
      q.index = k;
    }
  }
  q.code = cb.entries.value.col(q.index);
  return q;
}

struct VqLosses {
  double codebook_loss = 0.0;    // ||sg(z) - e||^2
  double commitment_loss = 0.0;  // beta ||z - sg(e)||^2
  Vec grad_z;                    // from the commitment term only
  Vec grad_code;                 // from the codebook term only
};

inline VqLosses vq_losses(const Vec& z, const Vec& code, double beta) {
  VqLosses l;
  const Vec diff = z - code;
  l.codebook_loss = diff.squaredNorm();
  l.commitment_loss = beta * diff.squaredNorm();
  l.grad_z = 2.0 * beta * diff;
  l.grad_code = -2.0 * diff;
  return l;
}

// Forward returns the code; backward copies the downstream gradient to z.
struct StraightThrough {
  static Vec forward(const Vec& /*z*/, const Vec& code) { return code; }
  static Vec backward(const Vec& grad_out) { return grad_out; }
};

struct CodebookMetrics {
  double perplexity = 1.0;
  int dead_codes = 0;
};

inline double perplexity(std::span<const int> indices, int num_codes) {
  if (indices.empty()) throw RejectionError("perplexity needs at least one index");
  std::vector<double> counts(static_cast<std::size_t>(num_codes), 0.0);
  for (int k : indices) {
    if (k < 0 || k >= num_codes) throw RejectionError("code index out of range");
    counts[static_cast<std::size_t>(k)] += 1.0;
  }
  double h = 0.0;
  for (double c : counts) {
    if (c == 0.0) continue;
    const double p = c / static_cast<double>(indices.size());
    h -= p * std::log(p);
  }
  return std::exp(h);
}

inline CodebookMetrics codebook_metrics(std::span<const int> indices, const Codebook& cb,
                                        double dead_threshold = kDeadThreshold) {
  CodebookMetrics m;
  m.perplexity = perplexity(indices, cb.size());
  for (int k = 0; k < cb.size(); ++k)
    if (cb.usage[k] < dead_threshold) ++m.dead_codes;
  return m;
}

inline void update_usage(Codebook& cb, std::span<const int> indices, double decay) {
  if (indices.empty()) return;
  Vec freq = Vec::Zero(cb.size());
  for (int k : indices) freq[k] += 1.0;
  freq /= static_cast<double>(indices.size());
  cb.usage = decay * cb.usage + (1.0 - decay) * freq;
}

// EMA codebook update (alternative to the gradient codebook loss).
inline void ema_update(Codebook& cb, const Mat& z, std::span<const int> indices, double decay) {
  Mat sums = Mat::Zero(cb.dim(), cb.size());
  Vec counts = Vec::Zero(cb.size());
  for (Eigen::Index i = 0; i < z.cols(); ++i) {
    sums.col(indices[i]) += z.col(i);
    counts[indices[i]] += 1.0;
  }
  cb.ema_sum = decay * cb.ema_sum + (1.0 - decay) * sums;
  cb.ema_count = decay * cb.ema_count + (1.0 - decay) * counts;
  for (int k = 0; k < cb.size(); ++k)
    if (cb.ema_count[k] > 1e-8) cb.entries.value.col(k) = cb.ema_sum.col(k) / cb.ema_count[k];
}

struct ReinitResult {
  int replaced = 0;
  bool warning = false;  // empty pool, nothing done
};

// Each dead code is replaced by a uniformly drawn pool latent plus N(0, 1e-3)
// noise; its usage is reset to the mean usage.
inline ReinitResult reinit_dead_codes(Codebook& cb, const Mat& pool, Rng& rng,
                                      double dead_threshold = kDeadThreshold) {
  ReinitResult r;
  if (pool.cols() == 0) {
    r.warning = true;
    return r;
  }
  const double mean_usage = cb.usage.mean();
  for (int k = 0; k < cb.size(); ++k) {
    if (cb.usage[k] >= dead_threshold) continue;
    const int pick = uniform_index(rng, static_cast<int>(pool.cols()));
    Vec v = pool.col(pick);
    for (Eigen::Index j = 0; j < v.size(); ++j) v[j] += kReinitNoise * standard_normal(rng);
    cb.entries.value.col(k) = v;
    cb.ema_sum.col(k) = v;
    cb.ema_count[k] = 1.0;
    cb.usage[k] = mean_usage;
    ++r.replaced;
  }
  return r;
}

// Seeds every entry from distinct pool latents (plus noise) when the pool is
// large enough, otherwise with replacement.
inline void init_from_pool(Codebook& cb, const Mat& pool, Rng& rng) {
  if (pool.cols() == 0) return;
  std::vector<int> order(static_cast<std::size_t>(pool.cols()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::shuffle(order.begin(), order.end(), rng);
  for (int k = 0; k < cb.size(); ++k) {
    const int pick = order[static_cast<std::size_t>(k) % order.size()];
    Vec v = pool.col(pick);
    for (Eigen::Index j = 0; j < v.size(); ++j) v[j] += kReinitNoise * standard_normal(rng);
    cb.entries.value.col(k) = v;
  }
  cb.ema_sum = cb.entries.value;
  cb.ema_count = Vec::Ones(cb.size());
  cb.initialized = true;
}

inline nlohmann::json to_json(const Codebook& cb) {
  const auto vec = [](const auto& m) { return std::vector<double>(m.data(), m.data() + m.size()); };
  return {{"dim", cb.dim()},       {"size", cb.size()},       {"beta", cb.beta},
          {"initialized", cb.initialized}, {"entries", vec(cb.entries.value)}, {"usage", vec(cb.usage)},
          {"ema_sum", vec(cb.ema_sum)},    {"ema_count", vec(cb.ema_count)}};
}

inline void from_json(Codebook& cb, const nlohmann::json& j) {
  const int d = j.at("dim").get<int>();
  const int k = j.at("size").get<int>();
  if (d != cb.dim() || k != cb.size()) throw RejectionError("codebook archive shape mismatch");
  cb.beta = j.at("beta").get<double>();
  cb.initialized = j.at("initialized").get<bool>();
  const auto e = j.at("entries").get<std::vector<double>>();
  const auto u = j.at("usage").get<std::vector<double>>();
  const auto s = j.at("ema_sum").get<std::vector<double>>();
  const auto c = j.at("ema_count").get<std::vector<double>>();
  cb.entries.value = Eigen::Map<const Mat>(e.data(), d, k);
  cb.entries.zero_grad();
  cb.usage = Eigen::Map<const Vec>(u.data(), k);
  cb.ema_sum = Eigen::Map<const Mat>(s.data(), d, k);
  cb.ema_count = Eigen::Map<const Vec>(c.data(), k);
}

}  // namespace tart::vq
