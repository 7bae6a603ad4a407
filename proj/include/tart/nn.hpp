#pragma once

// Small dense networks with hand-written backprop. Batches are stored
// column-wise: a (features x batch) matrix holds one sample per column.

#include <Eigen/Core>
#include <cmath>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tart/errors.hpp"
#include "tart/rng.hpp"

namespace tart::nn {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using json = nlohmann::json;

struct Param {
  std::string name;
  Mat value;
  Mat grad;

  Param() = default;
  Param(std::string n, Mat v) : name(std::move(n)), value(std::move(v)) { zero_grad(); }
  void zero_grad() { grad = Mat::Zero(value.rows(), value.cols()); }
};

using ParamList = std::vector<Param*>;

inline void zero_grads(const ParamList& ps) {
  for (Param* p : ps) p->zero_grad();
}

inline std::size_t param_count(const ParamList& ps) {
  std::size_t n = 0;
  for (const Param* p : ps) n += static_cast<std::size_t>(p->value.size());
  return n;
}

inline Vec flatten_values(const ParamList& ps) {
  Vec out(static_cast<Eigen::Index>(param_count(ps)));
  Eigen::Index k = 0;
  for (const Param* p : ps) {
    out.segment(k, p->value.size()) = p->value.reshaped();
    k += p->value.size();
  }
  return out;
}

inline Vec flatten_grads(const ParamList& ps) {
  Vec out(static_cast<Eigen::Index>(param_count(ps)));
  Eigen::Index k = 0;
  for (const Param* p : ps) {
    out.segment(k, p->grad.size()) = p->grad.reshaped();
    k += p->grad.size();
  }
  return out;
}

inline void assign_values(const ParamList& ps, const Vec& flat) {
  Eigen::Index k = 0;
  for (Param* p : ps) {
    p->value.reshaped() = flat.segment(k, p->value.size());
    k += p->value.size();
  }
}

// Archive layout: [{"name", "rows", "cols", "data": column-major values}].
inline json params_to_json(const ParamList& ps) {
  json arr = json::array();
  for (const Param* p : ps) {
    std::vector<double> data(p->value.data(), p->value.data() + p->value.size());
    arr.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}, {"data", data}});
  }
  return arr;
}

inline void params_from_json(const ParamList& ps, const json& arr) {
  if (!arr.is_array() || arr.size() != ps.size())
    throw RejectionError("parameter archive does not match network layout");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const json& e = arr[i];
    Param* p = ps[i];
    if (e.at("name").get<std::string>() != p->name || e.at("rows").get<Eigen::Index>() != p->value.rows() ||
        e.at("cols").get<Eigen::Index>() != p->value.cols())
      throw RejectionError("parameter '" + p->name + "' shape or name mismatch in archive");
    const auto data = e.at("data").get<std::vector<double>>();
    p->value = Eigen::Map<const Mat>(data.data(), p->value.rows(), p->value.cols());
    p->zero_grad();
  }
}

// Fully connected net, tanh hidden activations, linear output.
class Mlp {
 public:
  struct Tape {
    std::vector<Mat> inputs;  // input of each layer
  };

  Mlp() = default;

  Mlp(const std::string& name, int in, const std::vector<int>& hidden, int out, Rng& rng,
      double out_gain = 1.0) {
    std::vector<int> sizes{in};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(out);
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      const bool last = l + 2 == sizes.size();
      const double gain = last ? out_gain : std::sqrt(2.0);
      const double scale = gain / std::sqrt(static_cast<double>(std::max(1, sizes[l])));
      Mat w(sizes[l + 1], sizes[l]);
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = scale * standard_normal(rng);
      params_.emplace_back(name + ".w" + std::to_string(l), std::move(w));
      params_.emplace_back(name + ".b" + std::to_string(l), Mat::Zero(sizes[l + 1], 1));
    }
  }

  int in_dim() const { return static_cast<int>(params_.front().value.cols()); }
  int out_dim() const { return static_cast<int>(params_.back().value.rows()); }
  std::size_t num_layers() const { return params_.size() / 2; }

  Mat forward(const Mat& x, Tape* tape = nullptr) const {
    if (x.rows() != in_dim())
      throw RejectionError("mlp input width " + std::to_string(x.rows()) + " != " + std::to_string(in_dim()));
    if (tape) tape->inputs.clear();
    Mat a = x;
    for (std::size_t l = 0; l < num_layers(); ++l) {
      if (tape) tape->inputs.push_back(a);
      Mat z = weight(l) * a;
      z.colwise() += bias(l).col(0);
      a = (l + 1 == num_layers()) ? z : Mat(z.array().tanh());
    }
    return a;
  }

  // Accumulates parameter gradients; returns d(loss)/d(input).
  Mat backward(const Tape& tape, const Mat& dy) {
    Mat g = dy;
    for (std::size_t l = num_layers(); l-- > 0;) {
      const Mat& in = tape.inputs[l];
      params_[2 * l].grad.noalias() += g * in.transpose();
      params_[2 * l + 1].grad += g.rowwise().sum();
      Mat gin = weight(l).transpose() * g;
      if (l > 0) gin.array() *= 1.0 - in.array().square();
      g = std::move(gin);
    }
    return g;
  }

  ParamList params() {
    ParamList out;
    for (Param& p : params_) out.push_back(&p);
    return out;
  }

 private:
  const Mat& weight(std::size_t l) const { return params_[2 * l].value; }
  const Mat& bias(std::size_t l) const { return params_[2 * l + 1].value; }

  std::vector<Param> params_;
};

// Row-wise L2 normalisation of columns with its backward pass.
inline Mat normalize_columns(const Mat& x, Vec* norms = nullptr) {
  Vec n = x.colwise().norm().transpose();
  n = n.cwiseMax(1e-12);
  if (norms) *norms = n;
  return x * n.cwiseInverse().asDiagonal();
}

inline Mat normalize_columns_backward(const Mat& y, const Vec& norms, const Mat& dy) {
  const Eigen::RowVectorXd proj = (y.array() * dy.array()).colwise().sum();
  Mat dx = dy - y * proj.asDiagonal();
  return dx * norms.cwiseInverse().asDiagonal();
}

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double max_grad_norm = 0.0;  // <= 0 disables clipping
};

// Moments are keyed by position in the parameter list, so the same list
// order must be passed to every step().
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  long steps() const { return t_; }

  // Returns the pre-clip global gradient norm.
  double step(const ParamList& ps) {
    if (m_.empty()) {
      for (const Param* p : ps) {
        m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
        v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
      }
    }
    if (m_.size() != ps.size()) throw RejectionError("adam: parameter list changed between steps");
    double sq = 0.0;
    for (const Param* p : ps) sq += p->grad.squaredNorm();
    const double norm = std::sqrt(sq);
    const double scale = (cfg_.max_grad_norm > 0.0 && norm > cfg_.max_grad_norm) ? cfg_.max_grad_norm / norm : 1.0;
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < ps.size(); ++i) {
      const Mat g = ps[i]->grad * scale;
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseAbs2();
      ps[i]->value.array() -= cfg_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
    }
    return norm;
  }

  json to_json() const {
    json ms = json::array(), vs = json::array();
    for (std::size_t i = 0; i < m_.size(); ++i) {
      ms.push_back(std::vector<double>(m_[i].data(), m_[i].data() + m_[i].size()));
      vs.push_back(std::vector<double>(v_[i].data(), v_[i].data() + v_[i].size()));
    }
    return {{"t", t_}, {"lr", cfg_.lr}, {"m", ms}, {"v", vs}};
  }

  void from_json(const json& j, const ParamList& ps) {
    t_ = j.at("t").get<long>();
    m_.clear();
    v_.clear();
    const auto& ms = j.at("m");
    const auto& vs = j.at("v");
    if (ms.empty()) return;
    if (ms.size() != ps.size()) throw RejectionError("adam state does not match parameter list");
    for (std::size_t i = 0; i < ps.size(); ++i) {
      const auto m = ms[i].get<std::vector<double>>();
      const auto v = vs[i].get<std::vector<double>>();
      m_.push_back(Eigen::Map<const Mat>(m.data(), ps[i]->value.rows(), ps[i]->value.cols()));
      v_.push_back(Eigen::Map<const Mat>(v.data(), ps[i]->value.rows(), ps[i]->value.cols()));
    }
  }

 private:
  AdamConfig cfg_;
  std::vector<Mat> m_, v_;
  long t_ = 0;
};

inline ParamList concat(std::initializer_list<ParamList> lists) {
  ParamList out;
  for (const auto& l : lists) out.insert(out.end(), l.begin(), l.end());
  return out;
}

}  // namespace tart::nn
