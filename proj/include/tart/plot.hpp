#pragma once

// SVG plots from metrics logs and episode logs.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tart/errors.hpp"
#include "tart/maze.hpp"
#include "tart/svg.hpp"

namespace tart::plot {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

struct MetricsLog {
  std::string label;
  fs::path path;
  std::vector<ojson> records;
};

inline std::vector<ojson> read_jsonl(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw RejectionError("cannot open log " + p.string());
  std::vector<ojson> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(ojson::parse(line));
    } catch (const ojson::exception& e) {
      throw RejectionError("malformed log line in " + p.string() + ": " + e.what());
    }
  }
  return out;
}

// Series label: the variant recorded next to the log, else the directory name.
inline std::string log_label(const fs::path& log) {
  std::ifstream cfg(log.parent_path() / "config.cfg");
  std::string line;
  while (cfg && std::getline(cfg, line))
    if (line.rfind("variant = ", 0) == 0) return line.substr(10);
  const std::string dir = log.parent_path().filename().string();
  return dir.empty() ? log.stem().string() : dir;
}

inline MetricsLog read_metrics_log(const fs::path& in) {
  MetricsLog m;
  m.path = fs::is_directory(in) ? in / "metrics.jsonl" : in;
  m.records = read_jsonl(m.path);
  if (m.records.empty()) throw RejectionError("metrics log " + m.path.string() + " is empty");
  m.label = log_label(m.path);
  return m;
}

struct Series {
  std::string label;
  std::vector<double> x, mean, std;
  bool shaded = false;  // more than one log contributed
};

inline bool has_column(const std::vector<MetricsLog>& logs, const std::string& col) {
  for (const auto& l : logs)
    for (const auto& r : l.records)
      if (r.contains(col) && r[col].is_number()) return true;
  return false;
}

// Mean and population std over logs sharing a label, per step.
inline std::vector<Series> aggregate(const std::vector<MetricsLog>& logs, const std::string& col) {
  std::vector<std::string> labels;
  for (const auto& l : logs)
    if (std::find(labels.begin(), labels.end(), l.label) == labels.end()) labels.push_back(l.label);
  std::vector<Series> out;
  for (const auto& label : labels) {
    std::map<double, std::vector<double>> by_step;
    int n_logs = 0;
    for (const auto& l : logs) {
      if (l.label != label) continue;
      ++n_logs;
      for (const auto& r : l.records)
        if (r.contains(col) && r[col].is_number() && r.contains("step"))
          by_step[r["step"].get<double>()].push_back(r[col].get<double>());
    }
    Series s;
    s.label = label;
    s.shaded = n_logs > 1;
    for (const auto& [x, vs] : by_step) {
      double m = 0.0;
      for (double v : vs) m += v;
      m /= static_cast<double>(vs.size());
      double var = 0.0;
      for (double v : vs) var += (v - m) * (v - m);
      s.x.push_back(x);
      s.mean.push_back(m);
      s.std.push_back(std::sqrt(var / static_cast<double>(vs.size())));
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline const std::vector<std::string>& palette() {
  static const std::vector<std::string> p{"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
                                          "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939",
                                          "#8c6d31", "#843c39", "#7b4173", "#3182bd"};
  return p;
}

inline std::string tick_label(double v) {
  char buf[32];
  if (std::abs(v) >= 1000.0) std::snprintf(buf, sizeof(buf), "%.0f", v);
  else std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

inline std::string line_chart_svg(const std::string& title, const std::string& ylabel,
                                  const std::vector<Series>& series) {
  constexpr double W = 640, H = 400, L = 70, R = 150, T = 40, B = 50;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool any = false;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const double lo = s.mean[i] - (s.shaded ? s.std[i] : 0.0), hi = s.mean[i] + (s.shaded ? s.std[i] : 0.0);
      if (!any) x0 = x1 = s.x[i], y0 = lo, y1 = hi, any = true;
      x0 = std::min(x0, s.x[i]), x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, lo), y1 = std::max(y1, hi);
    }
  if (x1 - x0 < 1e-12) x0 -= 1.0, x1 += 1.0;
  if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad, y1 += pad;
  const auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  const auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  svg::Canvas c(W, H);
  c.rect(0, 0, W, H, "#ffffff");
  c.text(L, 24, title, 15);
  c.line(L, H - B, W - R, H - B, "#000000");
  c.line(L, T, L, H - B, "#000000");
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    c.line(px(xv), H - B, px(xv), H - B + 5, "#000000");
    c.text(px(xv), H - B + 18, tick_label(xv), 10, "middle");
    c.line(L - 5, py(yv), L, py(yv), "#000000");
    c.line(L, py(yv), W - R, py(yv), "#eeeeee");
    c.text(L - 8, py(yv) + 4, tick_label(yv), 10, "end");
  }
  c.text((L + W - R) / 2, H - 12, "environment steps", 11, "middle");
  c.text(12, T - 10, ylabel, 11);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const Series& s = series[k];
    const std::string& col = palette()[k % palette().size()];
    if (s.shaded && !s.x.empty()) {
      std::vector<std::pair<double, double>> band;
      for (std::size_t i = 0; i < s.x.size(); ++i) band.emplace_back(px(s.x[i]), py(s.mean[i] + s.std[i]));
      for (std::size_t i = s.x.size(); i-- > 0;) band.emplace_back(px(s.x[i]), py(s.mean[i] - s.std[i]));
      c.polygon(band, col, 0.2);
    }
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < s.x.size(); ++i) pts.emplace_back(px(s.x[i]), py(s.mean[i]));
    if (pts.size() == 1) c.circle(pts[0].first, pts[0].second, 3.0, col);
    c.polyline(pts, col, 2.0);
    const double ly = T + 16.0 * static_cast<double>(k);
    c.line(W - R + 10, ly, W - R + 30, ly, col, 3.0);
    c.text(W - R + 35, ly + 4, s.label, 11);
  }
  return c.str();
}

// Rows of coloured cells, one row per episode, one cell per step.
inline std::string code_timeline_svg(const std::vector<std::vector<int>>& episodes, int num_codes) {
  constexpr double L = 60, T = 40, cell_h = 18;
  std::size_t longest = 1;
  for (const auto& e : episodes) longest = std::max(longest, e.size());
  const double cell_w = std::max(1.0, std::min(12.0, 900.0 / static_cast<double>(longest)));
  const double W = L + cell_w * static_cast<double>(longest) + 20, H = T + cell_h * episodes.size() + 40;
  svg::Canvas c(W, H);
  c.rect(0, 0, W, H, "#ffffff");
  c.text(L, 24, "tactic code per step (" + std::to_string(num_codes) + " codes)", 14);
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    const double y = T + cell_h * static_cast<double>(e);
    c.text(L - 6, y + 13, "ep " + std::to_string(e), 10, "end");
    for (std::size_t t = 0; t < episodes[e].size(); ++t) {
      const int k = episodes[e][t];
      c.rect(L + cell_w * static_cast<double>(t), y, cell_w, cell_h - 2,
             k < 0 ? "#dddddd" : palette()[static_cast<std::size_t>(k) % palette().size()]);
    }
  }
  return c.str();
}

inline void write_file(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f << s;
  if (!f) throw RuntimeAbort("failed to write " + p.string());
}

inline std::string sanitize(std::string s) {
  for (char& ch : s)
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_') ch = '_';
  return s;
}

// Renders from an episode log: maze trajectories (with dash markers) and the
// code-usage timeline.
inline std::vector<fs::path> plot_episodes(const fs::path& episodes_file, const fs::path& out_dir,
                                           const std::string& prefix) {
  const std::vector<ojson> recs = read_jsonl(episodes_file);
  if (recs.empty() || recs.front().value("kind", "") != "header")
    throw RejectionError("episode log " + episodes_file.string() + " has no header");
  const ojson& head = recs.front();
  std::vector<fs::path> written;
  std::optional<maze::MazeConfig> mz;
  if (head.contains("maze")) {
    std::istringstream is(head["maze"].get<std::string>());
    mz = maze::parse_maze(is);
  }
  std::vector<std::vector<int>> codes;
  bool any_code = false;
  for (std::size_t i = 1; i < recs.size(); ++i) {
    const ojson& r = recs[i];
    if (r.value("kind", "") != "episode") continue;
    const auto ep_codes = r.at("codes").get<std::vector<int>>();
    for (int k : ep_codes) any_code = any_code || k >= 0;
    codes.push_back(ep_codes);
    if (mz && r.contains("path")) {
      std::vector<maze::PathStep> path;
      for (const auto& p : r["path"])
        path.push_back({p[0].get<double>(), p[1].get<double>(), p[2].get<double>(), p[3].get<double>(),
                        p[4].get<int>() != 0});
      const fs::path f = out_dir / (prefix + "maze_ep" + std::to_string(codes.size() - 1) + ".svg");
      char title[96];
      std::snprintf(title, sizeof(title), "episode %zu, return %.3f", codes.size() - 1, r.at("return").get<double>());
      write_file(f, maze::render_trajectory_svg(*mz, path, title));
      written.push_back(f);
    }
  }
  if (any_code) {
    const fs::path f = out_dir / (prefix + "code_usage.svg");
    write_file(f, code_timeline_svg(codes, head.value("num_codes", 0)));
    written.push_back(f);
  }
  return written;
}

// Inputs are run directories, metrics.jsonl files or episodes.jsonl files.
inline std::vector<fs::path> plot(const std::vector<fs::path>& inputs, const fs::path& out_dir) {
  if (inputs.empty()) throw RejectionError("plot needs at least one log");
  std::vector<MetricsLog> logs;
  std::vector<fs::path> episode_files;
  for (const fs::path& in : inputs) {
    if (!fs::exists(in)) throw RejectionError("no such log: " + in.string());
    if (fs::is_directory(in)) {
      if (!fs::exists(in / "metrics.jsonl") && !fs::exists(in / "episodes.jsonl"))
        throw RejectionError("directory " + in.string() + " holds no logs");
      if (fs::exists(in / "metrics.jsonl")) logs.push_back(read_metrics_log(in));
      if (fs::exists(in / "episodes.jsonl")) episode_files.push_back(in / "episodes.jsonl");
    } else if (in.filename() == "episodes.jsonl" || in.filename().string().find("episodes") != std::string::npos) {
      episode_files.push_back(in);
    } else {
      logs.push_back(read_metrics_log(in));
    }
  }
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  if (!logs.empty()) {
    const fs::path lc = out_dir / "learning_curve.svg";
    write_file(lc, line_chart_svg("evaluation return", "return", aggregate(logs, "eval_return_mean")));
    written.push_back(lc);
    if (has_column(logs, "mi_estimate")) {
      const fs::path f = out_dir / "mi_estimate.svg";
      write_file(f, line_chart_svg("InfoNCE mutual-information estimate", "nats", aggregate(logs, "mi_estimate")));
      written.push_back(f);
    }
    if (has_column(logs, "perplexity")) {
      const fs::path f = out_dir / "perplexity.svg";
      write_file(f, line_chart_svg("codebook perplexity", "perplexity", aggregate(logs, "perplexity")));
      written.push_back(f);
    }
  }
  for (std::size_t i = 0; i < episode_files.size(); ++i) {
    const std::string prefix = episode_files.size() > 1 ? "run" + std::to_string(i) + "_" : "";
    const auto w = plot_episodes(episode_files[i], out_dir, prefix);
    written.insert(written.end(), w.begin(), w.end());
  }
  return written;
}

}  // namespace tart::plot
