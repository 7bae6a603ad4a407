#pragma once

// Independent reference implementations used only by the tests. None of
// these call into the code under test for the quantity they check.

#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <limits>
#include <set>
#include <span>
#include <vector>

#include "tart/maze.hpp"
#include "tart/pamdp.hpp"

namespace oracle {

// Linear scan with the squared distance accumulated by hand; first minimum wins.
inline int nearest_index(const Eigen::VectorXd& z, const Eigen::MatrixXd& entries) {
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < entries.cols(); ++k) {
    double d = 0.0;
    for (Eigen::Index j = 0; j < z.size(); ++j) {
      const double diff = z[j] - entries(j, k);
      d += diff * diff;
    }
    if (best < 0 || d < best_d) {
      best = static_cast<int>(k);
      best_d = d;
    }
  }
  return best;
}

// Counts resource events whose H-step window stays in range and inside the
// episode, by checking every step of every candidate window.
inline int segment_count(std::span<const tart::Transition> traj, int h, const std::set<int>& ids) {
  int n = 0;
  for (std::size_t t = 0; t < traj.size(); ++t) {
    if (!ids.count(traj[t].action.discrete)) continue;
    if (t + static_cast<std::size_t>(h) >= traj.size()) continue;
    bool crosses = false;
    for (std::size_t k = t; k < t + static_cast<std::size_t>(h); ++k) crosses = crosses || traj[k].done;
    if (!crosses) ++n;
  }
  return n;
}

// Central finite-difference gradient of f at x.
inline Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd x,
                                   double h = 1e-6) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = f(x);
    x[i] = x0 - h;
    const double fm = f(x);
    x[i] = x0;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline double rel_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / scale;
}

// I(X;Y) of a bivariate normal with correlation rho.
inline double gaussian_mi(double rho) { return -0.5 * std::log(1.0 - rho * rho); }

// Minimum number of steps to the goal in the grid abstraction of the maze
// (4-neighbour unit moves, dashes of up to dash_cells straight cells that
// must land on a free cell, falling back to shorter hops), found by
// iterative-deepening depth-first search. Returns -1 when the goal is not
// reachable within `limit` steps.
class MazeSearch {
 public:
  explicit MazeSearch(const tart::maze::MazeConfig& cfg) : cfg_(cfg) {}

  int min_steps(int limit) const {
    for (int depth = 0; depth <= limit; ++depth) {
      best_.assign(static_cast<std::size_t>(cfg_.width * cfg_.height * (cfg_.budget + 1)), -1);
      if (dfs(cfg_.start.x, cfg_.start.y, cfg_.budget, depth)) return depth;
    }
    return -1;
  }

 private:
  bool free(int x, int y) const {
    return x >= 0 && y >= 0 && x < cfg_.width && y < cfg_.height && cfg_.walls[static_cast<std::size_t>(y * cfg_.width + x)] == 0;
  }

  // Remaining depth already explored from this node without success.
  bool dfs(int x, int y, int b, int left) const {
    if (x == cfg_.goal.x && y == cfg_.goal.y) return true;
    if (left == 0) return false;
    int& seen = best_[static_cast<std::size_t>((b * cfg_.height + y) * cfg_.width + x)];
    if (seen >= left) return false;
    seen = left;
    static const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
    for (int d = 0; d < 4; ++d)
      if (free(x + dx[d], y + dy[d]) && dfs(x + dx[d], y + dy[d], b, left - 1)) return true;
    if (b > 0)
      for (int d = 0; d < 4; ++d)
        for (int k = cfg_.dash_cells; k >= 1; --k)
          if (free(x + k * dx[d], y + k * dy[d])) {
            if (dfs(x + k * dx[d], y + k * dy[d], b - 1, left - 1)) return true;
            break;
          }
    return false;
  }

  const tart::maze::MazeConfig& cfg_;
  mutable std::vector<int> best_;
};

}  // namespace oracle
