#pragma once

// Parameterized-action MDP data model: hybrid actions, transitions and the
// resource-anchored trajectory segments consumed by the representation
// learner.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <nlohmann/json.hpp>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tart/errors.hpp"

namespace tart {

using Vec = Eigen::VectorXd;

struct Interval {
  double lo = -1.0;
  double hi = 1.0;
};

struct ActionSpec {
  int num_discrete = 1;
  std::vector<int> param_dims;                       // one entry per discrete action
  std::vector<std::vector<Interval>> param_bounds;   // [discrete][dim]

  // Every discrete action carries `dim` parameters bounded by `bounds`.
  static ActionSpec uniform(int num_discrete, int dim, Interval bounds = {}) {
    ActionSpec s;
    s.num_discrete = num_discrete;
    s.param_dims.assign(static_cast<std::size_t>(num_discrete), dim);
    s.param_bounds.assign(static_cast<std::size_t>(num_discrete),
                          std::vector<Interval>(static_cast<std::size_t>(dim), bounds));
    return s;
  }

  int max_param_dim() const {
    int m = 0;
    for (int d : param_dims) m = std::max(m, d);
    return m;
  }

  // Width of flatten_action output: one-hot ++ zero-padded params.
  int flat_dim() const { return num_discrete + max_param_dim(); }

  void check() const {
    if (num_discrete < 1) throw RejectionError("action spec needs at least one discrete action");
    if (param_dims.size() != static_cast<std::size_t>(num_discrete) ||
        param_bounds.size() != static_cast<std::size_t>(num_discrete))
      throw RejectionError("action spec: param_dims/param_bounds must have one entry per discrete action");
    for (int k = 0; k < num_discrete; ++k) {
      if (param_dims[k] < 0) throw RejectionError("action spec: negative parameter dimension");
      if (param_bounds[k].size() != static_cast<std::size_t>(param_dims[k]))
        throw RejectionError("action spec: bounds count differs from parameter dimension");
      for (const Interval& b : param_bounds[k])
        if (!(b.lo < b.hi)) throw RejectionError("action spec: bound requires lo < hi");
    }
  }
};

struct HybridAction {
  int discrete = 0;
  Vec params;

  friend bool operator==(const HybridAction& a, const HybridAction& b) {
    return a.discrete == b.discrete && a.params.size() == b.params.size() && a.params == b.params;
  }
};

struct ValidatedAction {
  HybridAction action;
  bool clipped = false;
};

inline ValidatedAction validate_action(const ActionSpec& spec, const HybridAction& a) {
  if (a.discrete < 0 || a.discrete >= spec.num_discrete)
    throw RejectionError("discrete index " + std::to_string(a.discrete) + " outside [0, " +
                         std::to_string(spec.num_discrete) + ")");
  const int dim = spec.param_dims[static_cast<std::size_t>(a.discrete)];
  if (a.params.size() != dim)
    throw RejectionError("parameter length " + std::to_string(a.params.size()) + " != " + std::to_string(dim));
  ValidatedAction out{a, false};
  const auto& bounds = spec.param_bounds[static_cast<std::size_t>(a.discrete)];
  for (int j = 0; j < dim; ++j) {
    const double v = a.params[j];
    if (std::isnan(v)) throw RejectionError("parameter is NaN");
    const double c = std::clamp(v, bounds[j].lo, bounds[j].hi);
    if (c != v) out.clipped = true;
    out.action.params[j] = c;
  }
  return out;
}

inline Vec flatten_action(const ActionSpec& spec, const HybridAction& a) {
  Vec out = Vec::Zero(spec.flat_dim());
  out[a.discrete] = 1.0;
  out.segment(spec.num_discrete, a.params.size()) = a.params;
  return out;
}

using Info = std::map<std::string, double>;

struct Transition {
  Vec state;
  HybridAction action;
  double reward = 0.0;
  Vec next_state;
  bool done = false;
  Info info;
};

struct StateAction {
  Vec state;
  HybridAction action;
};

struct TrajectorySegment {
  int anchor_t = 0;
  StateAction anchor;
  std::vector<StateAction> window;  // steps anchor_t+1 .. anchor_t+H
};

// One segment per resource event at t with t+H inside the trajectory and no
// episode boundary among steps t .. t+H-1.
inline std::vector<TrajectorySegment> extract_segments(std::span<const Transition> traj, int horizon,
                                                       const std::set<int>& resource_ids) {
  if (horizon < 1) throw RejectionError("segment horizon must be >= 1");
  std::vector<TrajectorySegment> out;
  const int n = static_cast<int>(traj.size());
  // next_done[t]: first index >= t with done set (n if none).
  std::vector<int> next_done(static_cast<std::size_t>(n) + 1, n);
  for (int t = n - 1; t >= 0; --t) next_done[t] = traj[t].done ? t : next_done[t + 1];
  for (int t = 0; t + horizon < n; ++t) {
    if (!resource_ids.contains(traj[t].action.discrete)) continue;
    if (next_done[t] < t + horizon) continue;
    TrajectorySegment seg;
    seg.anchor_t = t;
    seg.anchor = {traj[t].state, traj[t].action};
    seg.window.reserve(static_cast<std::size_t>(horizon));
    for (int k = 1; k <= horizon; ++k) seg.window.push_back({traj[t + k].state, traj[t + k].action});
    out.push_back(std::move(seg));
  }
  return out;
}

// state ++ flatten_action
inline Vec state_action_features(const ActionSpec& spec, const StateAction& sa) {
  const Vec fa = flatten_action(spec, sa.action);
  Vec out(sa.state.size() + fa.size());
  out << sa.state, fa;
  return out;
}

// Window rows concatenated in time order.
inline Vec window_features(const ActionSpec& spec, const TrajectorySegment& seg) {
  const Eigen::Index row = seg.anchor.state.size() + spec.flat_dim();
  Vec out(row * static_cast<Eigen::Index>(seg.window.size()));
  for (std::size_t k = 0; k < seg.window.size(); ++k)
    out.segment(static_cast<Eigen::Index>(k) * row, row) = state_action_features(spec, seg.window[k]);
  return out;
}

// ---------------------------------------------------------------------------
// Trajectory persistence: one JSON object per line, keys in the order
// state, action {discrete, params}, reward, next_state, done, info.

namespace detail {
inline std::vector<double> to_std(const Vec& v) { return {v.data(), v.data() + v.size()}; }
inline Vec from_std(const std::vector<double>& v) {
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}
}  // namespace detail

inline nlohmann::ordered_json transition_to_json(const Transition& tr) {
  nlohmann::ordered_json j;
  j["state"] = detail::to_std(tr.state);
  j["action"] = {{"discrete", tr.action.discrete}, {"params", detail::to_std(tr.action.params)}};
  j["reward"] = tr.reward;
  j["next_state"] = detail::to_std(tr.next_state);
  j["done"] = tr.done;
  j["info"] = tr.info;
  return j;
}

inline Transition transition_from_json(const nlohmann::ordered_json& j) {
  Transition tr;
  tr.state = detail::from_std(j.at("state").get<std::vector<double>>());
  tr.action.discrete = j.at("action").at("discrete").get<int>();
  tr.action.params = detail::from_std(j.at("action").at("params").get<std::vector<double>>());
  tr.reward = j.at("reward").get<double>();
  tr.next_state = detail::from_std(j.at("next_state").get<std::vector<double>>());
  tr.done = j.at("done").get<bool>();
  tr.info = j.at("info").get<Info>();
  return tr;
}

inline void write_trajectory(std::ostream& os, std::span<const Transition> traj) {
  for (const Transition& tr : traj) os << transition_to_json(tr).dump() << '\n';
}

inline std::vector<Transition> read_trajectory(std::istream& is) {
  std::vector<Transition> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    out.push_back(transition_from_json(nlohmann::ordered_json::parse(line)));
  }
  return out;
}

}  // namespace tart
