#pragma once

// Budgeted maze navigation. The agent moves continuously (in cell units) and
// may spend a limited budget of DASH actions that jump over walls.
//
// Coordinates: x grows to the right (column), y grows downward (row). Cell
// (cx, cy) covers [cx, cx+1) x [cy, cy+1).

#include <array>
#include <cmath>
#include <deque>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tart/env.hpp"
#include "tart/errors.hpp"
#include "tart/svg.hpp"

namespace tart::maze {

inline constexpr int kMove = 0;
inline constexpr int kDash = 1;
inline constexpr int kObsDim = 13;
inline constexpr double kStepReward = -0.01;
inline constexpr double kGoalReward = 1.0;

struct Cell {
  int x = 0;
  int y = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

struct MazeConfig {
  int width = 0;
  int height = 0;
  std::vector<char> walls;  // row-major, 1 = wall
  Cell start;
  Cell goal;
  int budget = 0;
  int dash_cells = 1;
  int max_steps = 1;
  double step_scale = 1.0;

  bool inside(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
  // Out-of-bounds cells count as walls.
  bool blocked(int x, int y) const { return !inside(x, y) || walls[static_cast<std::size_t>(y * width + x)] != 0; }
  bool free(Cell c) const { return !blocked(c.x, c.y); }

  void validate() const {
    if (width < 1 || height < 1 || walls.size() != static_cast<std::size_t>(width * height))
      throw ConfigError("maze grid is empty or ragged");
    if (!free(start)) throw ConfigError("maze start is not a free cell");
    if (!free(goal)) throw ConfigError("maze goal is not a free cell");
    if (budget < 0) throw ConfigError("maze budget must be >= 0");
    if (dash_cells < 1) throw ConfigError("maze dash length must be >= 1");
    if (max_steps < 1) throw ConfigError("maze max_steps must be >= 1");
    if (!(step_scale > 0.0)) throw ConfigError("maze step_scale must be > 0");
  }
};

// File format: header `budget=<int> dash=<int> max_steps=<int>` then one line
// per row using '#' wall, '.' free, 'S' start, 'G' goal.
inline MazeConfig parse_maze(std::istream& is) {
  MazeConfig cfg;
  std::string header;
  if (!std::getline(is, header)) throw ConfigError("maze file is empty");
  bool have_budget = false, have_dash = false, have_steps = false;
  std::istringstream hs(header);
  std::string tok;
  while (hs >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw ConfigError("maze header token without '=': " + tok);
    const std::string key = tok.substr(0, eq);
    int value = 0;
    try {
      value = std::stoi(tok.substr(eq + 1));
    } catch (const std::exception&) {
      throw ConfigError("maze header value is not an integer: " + tok);
    }
    if (key == "budget") cfg.budget = value, have_budget = true;
    else if (key == "dash") cfg.dash_cells = value, have_dash = true;
    else if (key == "max_steps") cfg.max_steps = value, have_steps = true;
    else throw ConfigError("unknown maze header key: " + key);
  }
  if (!have_budget || !have_dash || !have_steps)
    throw ConfigError("maze header must define budget, dash and max_steps");

  std::vector<std::string> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    rows.push_back(line);
  }
  if (rows.empty()) throw ConfigError("maze has no rows");
  cfg.height = static_cast<int>(rows.size());
  cfg.width = static_cast<int>(rows.front().size());
  int starts = 0, goals = 0;
  for (int y = 0; y < cfg.height; ++y) {
    if (static_cast<int>(rows[y].size()) != cfg.width) throw ConfigError("maze rows have different widths");
    for (int x = 0; x < cfg.width; ++x) {
      const char c = rows[y][x];
      switch (c) {
        case '#': cfg.walls.push_back(1); break;
        case '.': cfg.walls.push_back(0); break;
        case 'S': cfg.walls.push_back(0); cfg.start = {x, y}; ++starts; break;
        case 'G': cfg.walls.push_back(0); cfg.goal = {x, y}; ++goals; break;
        default: throw ConfigError(std::string("unexpected maze character '") + c + "'");
      }
    }
  }
  if (starts != 1 || goals != 1) throw ConfigError("maze needs exactly one 'S' and one 'G'");
  cfg.validate();
  return cfg;
}

inline MazeConfig load_maze(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open maze file: " + path);
  return parse_maze(in);
}

inline std::string format_maze(const MazeConfig& cfg) {
  std::string out = "budget=" + std::to_string(cfg.budget) + " dash=" + std::to_string(cfg.dash_cells) +
                    " max_steps=" + std::to_string(cfg.max_steps) + "\n";
  for (int y = 0; y < cfg.height; ++y) {
    for (int x = 0; x < cfg.width; ++x) {
      if (Cell{x, y} == cfg.start) out += 'S';
      else if (Cell{x, y} == cfg.goal) out += 'G';
      else out += cfg.blocked(x, y) ? '#' : '.';
    }
    out += '\n';
  }
  return out;
}

inline ActionSpec maze_action_spec() {
  // MOVE and DASH both take a direction (dx, dy) in [-1, 1]^2.
  return ActionSpec::uniform(2, 2, Interval{-1.0, 1.0});
}

struct MazeState {
  double x = 0.0;
  double y = 0.0;
  int budget_left = 0;
  int t = 0;
};

inline Cell cell_of(double x, double y) {
  return {static_cast<int>(std::floor(x)), static_cast<int>(std::floor(y))};
}

// Axis-separated continuous move: try x then y; a blocked axis keeps its
// coordinate.
inline void move_axis_separated(const MazeConfig& cfg, MazeState& s, double dx, double dy) {
  const auto segment_clear = [&](double from, double to, auto cell_at) {
    const int a = static_cast<int>(std::floor(std::min(from, to)));
    const int b = static_cast<int>(std::floor(std::max(from, to)));
    for (int c = a; c <= b; ++c)
      if (cell_at(c)) return false;
    return true;
  };
  const double nx = s.x + dx;
  const int row = static_cast<int>(std::floor(s.y));
  if (dx != 0.0 && segment_clear(s.x, nx, [&](int c) { return cfg.blocked(c, row); })) s.x = nx;
  const double ny = s.y + dy;
  const int col = static_cast<int>(std::floor(s.x));
  if (dy != 0.0 && segment_clear(s.y, ny, [&](int c) { return cfg.blocked(col, c); })) s.y = ny;
}

// Jump dash_cells along the unit direction ignoring walls in transit. If the
// landing cell is blocked, back off one cell length at a time along the ray.
inline void dash(const MazeConfig& cfg, MazeState& s, double dx, double dy) {
  const double norm = std::hypot(dx, dy);
  if (norm == 0.0) return;
  const double ux = dx / norm, uy = dy / norm;
  for (int k = cfg.dash_cells; k >= 1; --k) {
    const double nx = s.x + k * ux, ny = s.y + k * uy;
    if (cfg.free(cell_of(nx, ny))) {
      s.x = nx;
      s.y = ny;
      return;
    }
  }
}

class MazeEnv final : public Env {
 public:
  explicit MazeEnv(MazeConfig cfg) : cfg_(std::move(cfg)), spec_(maze_action_spec()) { cfg_.validate(); }

  const MazeConfig& config() const { return cfg_; }
  const MazeState& state() const { return state_; }
  void set_state(const MazeState& s) { state_ = s; }

  Vec reset(std::uint64_t /*seed: the maze has no stochastic elements*/) override {
    state_ = {cfg_.start.x + 0.5, cfg_.start.y + 0.5, cfg_.budget, 0};
    return observe();
  }

  StepResult step(const HybridAction& raw) override {
    const HybridAction a = validate_action(spec_, raw).action;
    StepResult r;
    bool wasted = false, dashed = false;
    const double dx = a.params[0], dy = a.params[1];
    if (a.discrete == kDash && state_.budget_left > 0) {
      dash(cfg_, state_, dx, dy);
      --state_.budget_left;
      dashed = true;
    } else {
      wasted = a.discrete == kDash;
      move_axis_separated(cfg_, state_, cfg_.step_scale * dx, cfg_.step_scale * dy);
    }
    ++state_.t;
    r.reward = kStepReward;
    const bool at_goal = cell_of(state_.x, state_.y) == cfg_.goal;
    if (at_goal) r.reward += kGoalReward;
    const bool truncated = !at_goal && state_.t >= cfg_.max_steps;
    r.done = at_goal || truncated;
    r.obs = observe();
    r.info = {{"budget_left", state_.budget_left},
              {"wasted_resource", wasted ? 1.0 : 0.0},
              {"dash", dashed ? 1.0 : 0.0},
              {"goal", at_goal ? 1.0 : 0.0},
              {"truncated", truncated ? 1.0 : 0.0}};
    return r;
  }

  // [x/W, y/H, goal_dx/W, goal_dy/H, budget fraction, walls of the 8 neighbours]
  // (the centre of the 3x3 patch is the agent's own cell, always free)
  Vec observe() const {
    Vec o(kObsDim);
    const double w = cfg_.width, h = cfg_.height;
    o[0] = state_.x / w;
    o[1] = state_.y / h;
    o[2] = (cfg_.goal.x + 0.5 - state_.x) / w;
    o[3] = (cfg_.goal.y + 0.5 - state_.y) / h;
    o[4] = static_cast<double>(state_.budget_left) / std::max(1, cfg_.budget);
    const Cell c = cell_of(state_.x, state_.y);
    int k = 5;
    for (int oy = -1; oy <= 1; ++oy)
      for (int ox = -1; ox <= 1; ++ox)
        if (ox != 0 || oy != 0) o[k++] = cfg_.blocked(c.x + ox, c.y + oy) ? 1.0 : 0.0;
    return o;
  }

  const ActionSpec& action_spec() const override { return spec_; }
  int obs_dim() const override { return kObsDim; }
  std::set<int> resource_ids() const override { return {kDash}; }
  std::string name() const override { return "maze"; }

  nlohmann::ordered_json log_state() const override {
    return {{"x", state_.x}, {"y", state_.y}, {"budget_left", state_.budget_left}, {"t", state_.t}};
  }

  std::unique_ptr<Env> clone() const override { return std::make_unique<MazeEnv>(*this); }

 private:
  MazeConfig cfg_;
  ActionSpec spec_;
  MazeState state_;
};

// ---------------------------------------------------------------------------
// Exact optimum of the discretised problem: BFS over (cell, budget_left) with
// unit-cost 4-neighbour MOVE edges and DASH edges (budget - 1) landing where
// the environment's dash would land from a cell centre.

struct OracleStep {
  int discrete = kMove;
  int dx = 0;
  int dy = 0;
};

struct OracleResult {
  bool reachable = false;
  int steps = 0;
  double ret = 0.0;
  std::vector<OracleStep> plan;
};

// Undiscounted return of an episode of `steps` steps, summed per step in time
// order exactly as an episode accumulates it (1.0 - 0.01 * steps at the goal).
inline double episode_return(int steps, bool reaches_goal) {
  if (steps == 0) return reaches_goal ? kGoalReward : 0.0;
  double ret = 0.0;
  for (int t = 0; t < steps; ++t) ret += kStepReward + (reaches_goal && t + 1 == steps ? kGoalReward : 0.0);
  return ret;
}

inline OracleResult oracle_return(const MazeConfig& cfg) {
  cfg.validate();
  OracleResult res;
  const int layers = cfg.budget + 1;
  const auto index = [&](Cell c, int b) { return (b * cfg.height + c.y) * cfg.width + c.x; };
  const int n = cfg.width * cfg.height * layers;
  std::vector<int> dist(static_cast<std::size_t>(n), -1);
  std::vector<int> parent(static_cast<std::size_t>(n), -1);
  std::vector<OracleStep> via(static_cast<std::size_t>(n));
  std::deque<std::pair<Cell, int>> queue;
  dist[index(cfg.start, cfg.budget)] = 0;
  queue.push_back({cfg.start, cfg.budget});
  constexpr std::array<std::array<int, 2>, 4> dirs{{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}};
  int goal_node = -1;
  while (!queue.empty()) {
    const auto [c, b] = queue.front();
    queue.pop_front();
    const int u = index(c, b);
    if (c == cfg.goal) {
      goal_node = u;
      break;
    }
    const auto relax = [&](Cell nc, int nb, OracleStep step) {
      const int v = index(nc, nb);
      if (dist[v] >= 0) return;
      dist[v] = dist[u] + 1;
      parent[v] = u;
      via[v] = step;
      queue.push_back({nc, nb});
    };
    for (const auto& d : dirs) {
      const Cell nc{c.x + d[0], c.y + d[1]};
      if (cfg.free(nc)) relax(nc, b, {kMove, d[0], d[1]});
    }
    if (b > 0) {
      for (const auto& d : dirs) {
        Cell land = c;
        for (int k = cfg.dash_cells; k >= 1; --k) {
          const Cell nc{c.x + k * d[0], c.y + k * d[1]};
          if (cfg.free(nc)) {
            land = nc;
            break;
          }
        }
        relax(land, b - 1, {kDash, d[0], d[1]});
      }
    }
  }
  // Goal beyond the step cap is treated as unreachable: the episode truncates.
  if (goal_node < 0 || dist[goal_node] > cfg.max_steps) {
    res.reachable = false;
    res.steps = cfg.max_steps;
    res.ret = episode_return(cfg.max_steps, false);
    return res;
  }
  res.reachable = true;
  res.steps = dist[goal_node];
  res.ret = episode_return(res.steps, true);
  for (int v = goal_node; parent[v] >= 0; v = parent[v]) res.plan.push_back(via[v]);
  std::reverse(res.plan.begin(), res.plan.end());
  return res;
}

// Scripted actions following the oracle plan (exact when step_scale = 1).
inline std::vector<HybridAction> oracle_actions(const MazeConfig& cfg) {
  std::vector<HybridAction> out;
  for (const OracleStep& s : oracle_return(cfg).plan) {
    HybridAction a;
    a.discrete = s.discrete;
    a.params = Vec(2);
    a.params << s.dx, s.dy;
    out.push_back(a);
  }
  return out;
}

// ---------------------------------------------------------------------------

struct PathStep {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool dash = false;  // non-degraded DASH
};

inline std::string render_trajectory_svg(const MazeConfig& cfg, std::span<const PathStep> path,
                                         const std::string& title = "") {
  constexpr double kCell = 40.0, kMargin = 20.0;
  const double top = title.empty() ? kMargin : kMargin + 16.0;
  svg::Canvas canvas(cfg.width * kCell + 2 * kMargin, cfg.height * kCell + top + kMargin);
  const auto px = [&](double x) { return kMargin + x * kCell; };
  const auto py = [&](double y) { return top + y * kCell; };
  if (!title.empty()) canvas.text(kMargin, kMargin + 2.0, title, 13);
  for (int y = 0; y < cfg.height; ++y)
    for (int x = 0; x < cfg.width; ++x)
      canvas.rect(px(x), py(y), kCell, kCell, cfg.blocked(x, y) ? "#333333" : "#ffffff", "#cccccc");
  canvas.rect(px(cfg.start.x), py(cfg.start.y), kCell, kCell, "#cfe8ff", "#cccccc");
  canvas.rect(px(cfg.goal.x), py(cfg.goal.y), kCell, kCell, "#c9f2c9", "#cccccc");
  for (const PathStep& s : path) {
    if (s.dash) {
      canvas.line(px(s.x0), py(s.y0), px(s.x1), py(s.y1), "#e67300", 2.5, true);
      canvas.circle(px(s.x0), py(s.y0), 6.0, "#e67300");
    } else {
      canvas.line(px(s.x0), py(s.y0), px(s.x1), py(s.y1), "#1f4fbf", 2.0);
    }
  }
  return canvas.str();
}

}  // namespace tart::maze
