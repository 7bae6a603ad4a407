#pragma once

// Temporal action representation: an anchor encoder for the resource-event
// context and a window encoder for the subsequent maneuver window, trained
// with an InfoNCE lower bound on their mutual information.

#include <cmath>
#include <string>
#include <vector>

#include "tart/errors.hpp"
#include "tart/nn.hpp"
#include "tart/pamdp.hpp"

namespace tart::repr {

using nn::Mat;

struct EncoderConfig {
  int latent_dim = 16;
  std::vector<int> hidden{64, 64};
  int window = 8;
  double temperature = 0.1;

  void validate() const {
    if (latent_dim < 2) throw ConfigError("encoder latent_dim must be >= 2");
    if (window < 1) throw ConfigError("encoder window must be >= 1");
    if (!(temperature > 0.0)) throw ConfigError("encoder temperature must be > 0");
  }
};

// MLP followed by L2 normalisation; outputs live on the unit sphere.
class UnitEncoder {
 public:
  struct Tape {
    nn::Mlp::Tape mlp;
    Mat out;
    nn::Vec norms;
  };

  UnitEncoder() = default;
  UnitEncoder(const std::string& name, int in_dim, const std::vector<int>& hidden, int latent, Rng& rng)
      : net_(name, in_dim, hidden, latent, rng) {}

  int in_dim() const { return net_.in_dim(); }
  int latent_dim() const { return net_.out_dim(); }

  Mat encode(const Mat& x, Tape* tape = nullptr) const {
    if (x.rows() != in_dim())
      throw RejectionError("encoder input width " + std::to_string(x.rows()) + " != " + std::to_string(in_dim()));
    nn::Vec norms;
    Mat out = nn::normalize_columns(net_.forward(x, tape ? &tape->mlp : nullptr), &norms);
    if (tape) {
      tape->out = out;
      tape->norms = norms;
    }
    return out;
  }

  Vec encode_one(const Vec& x) const { return encode(x).col(0); }

  Mat backward(const Tape& tape, const Mat& dz) {
    return net_.backward(tape.mlp, nn::normalize_columns_backward(tape.out, tape.norms, dz));
  }

  nn::ParamList params() { return net_.params(); }

 private:
  nn::Mlp net_;
};

// Anchor context = state ++ flatten_action at the resource event. Window =
// H rows of state ++ flatten_action, concatenated in time order so the
// encoding depends on step order.
class TemporalEncoder {
 public:
  TemporalEncoder() = default;
  TemporalEncoder(const EncoderConfig& cfg, int row_dim, Rng& rng) : cfg_(cfg), row_dim_(row_dim) {
    cfg.validate();
    anchor_ = UnitEncoder("enc_anchor", row_dim, cfg.hidden, cfg.latent_dim, rng);
    window_ = UnitEncoder("enc_window", row_dim * cfg.window, cfg.hidden, cfg.latent_dim, rng);
  }

  const EncoderConfig& config() const { return cfg_; }
  int row_dim() const { return row_dim_; }

  Vec encode_anchor(const Vec& anchor_context) const {
    if (anchor_context.size() != row_dim_)
      throw RejectionError("anchor context width " + std::to_string(anchor_context.size()) + " != " +
                           std::to_string(row_dim_));
    return anchor_.encode_one(anchor_context);
  }

  // `rows` is H x row_dim, one timestep per row.
  Vec encode_window(const Mat& rows) const {
    if (rows.rows() != cfg_.window)
      throw RejectionError("window length " + std::to_string(rows.rows()) + " != H=" + std::to_string(cfg_.window));
    if (rows.cols() != row_dim_)
      throw RejectionError("window row width " + std::to_string(rows.cols()) + " != " + std::to_string(row_dim_));
    const Mat rm = rows.transpose();  // column-major storage of the transpose = row-major rows
    return window_.encode(rm.reshaped(rm.size(), 1)).col(0);
  }

  UnitEncoder& anchor() { return anchor_; }
  UnitEncoder& window() { return window_; }
  const UnitEncoder& anchor() const { return anchor_; }
  const UnitEncoder& window() const { return window_; }

  nn::ParamList params() { return nn::concat({anchor_.params(), window_.params()}); }

 private:
  EncoderConfig cfg_;
  int row_dim_ = 0;
  UnitEncoder anchor_;
  UnitEncoder window_;
};

struct InfoNceResult {
  double loss = 0.0;
  double mi_estimate = 0.0;  // ln N - loss
  Mat grad_logits;           // d loss / d S, N x N
  Mat grad_anchors;          // d x N
  Mat grad_positives;        // d x N
};

// loss = -(1/N) sum_i log softmax_j(S_ij)[i]; row i holds anchor i against
// every positive.
inline InfoNceResult infonce_from_logits(const Mat& logits) {
  const Eigen::Index n = logits.rows();
  if (n < 2 || logits.cols() != n) throw RejectionError("infonce needs a square similarity matrix with N >= 2");
  if (!logits.allFinite()) throw RejectionError("infonce similarity matrix is not finite");
  InfoNceResult r;
  Mat q(n, n);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = logits.row(i).maxCoeff();
    const Eigen::ArrayXd e = (logits.row(i).array() - m).exp();
    const double s = e.sum();
    total += -(logits(i, i) - m - std::log(s));
    q.row(i) = e / s;
  }
  r.loss = total / static_cast<double>(n);
  r.mi_estimate = std::log(static_cast<double>(n)) - r.loss;
  r.grad_logits = (q - Mat::Identity(n, n)) / static_cast<double>(n);
  return r;
}

// Anchors and positives are d x N with unit-norm columns.
inline InfoNceResult infonce_loss(const Mat& anchors, const Mat& positives, double temperature) {
  if (!(temperature > 0.0)) throw RejectionError("infonce temperature must be > 0");
  if (anchors.cols() < 2) throw RejectionError("infonce batch needs N >= 2");
  if (anchors.rows() != positives.rows() || anchors.cols() != positives.cols())
    throw RejectionError("infonce anchors and positives differ in shape");
  for (Eigen::Index i = 0; i < anchors.cols(); ++i) {
    if (std::abs(anchors.col(i).norm() - 1.0) > 1e-5 || std::abs(positives.col(i).norm() - 1.0) > 1e-5)
      throw RejectionError("infonce batch rows must have unit L2 norm");
  }
  InfoNceResult r = infonce_from_logits(anchors.transpose() * positives / temperature);
  r.grad_anchors = positives * r.grad_logits.transpose() / temperature;
  r.grad_positives = anchors * r.grad_logits / temperature;
  return r;
}

}  // namespace tart::repr
