#pragma once

// Multi-variant, multi-seed comparison runs.

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "tart/agent.hpp"
#include "tart/harness.hpp"
#include "tart/plot.hpp"

namespace tart {

struct ComparisonRow {
  std::string variant;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double final_return_mean = std::nan("");
  double final_return_std = std::nan("");
  double best_return = std::nan("");
  double final_perplexity = std::nan("");  // NaN: not applicable
  double final_mi = std::nan("");
  long steps = 0;
  double wall_clock_s = 0.0;
  fs::path out_dir;
};

struct ComparisonSummary {
  std::string variant;
  int runs_ok = 0;
  int runs_failed = 0;
  double mean = std::nan("");  // mean over seeds of the final evaluation return
  double std = std::nan("");   // population std over seeds
};

struct ComparisonResult {
  std::vector<ComparisonRow> rows;
  std::vector<ComparisonSummary> summary;
  fs::path results_csv, summary_csv, plot;
};

inline std::string csv_num(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

inline std::string csv_field(std::string s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return out + "\"";
}

inline const char* kResultsHeader =
    "variant,seed,status,final_return_mean,final_return_std,best_return,final_perplexity,final_mi,steps,"
    "wall_clock_s,out_dir,error";

inline std::string results_csv(const std::vector<ComparisonRow>& rows) {
  std::string out = std::string(kResultsHeader) + "\n";
  for (const auto& r : rows)
    out += r.variant + "," + std::to_string(r.seed) + "," + (r.ok ? "ok" : "failed") + "," +
           csv_num(r.final_return_mean) + "," + csv_num(r.final_return_std) + "," + csv_num(r.best_return) + "," +
           csv_num(r.final_perplexity) + "," + csv_num(r.final_mi) + "," + std::to_string(r.steps) + "," +
           csv_num(r.wall_clock_s) + "," + csv_field(r.out_dir.string()) + "," + csv_field(r.error) + "\n";
  return out;
}

inline std::vector<ComparisonSummary> summarize(const std::vector<ComparisonRow>& rows) {
  std::vector<ComparisonSummary> out;
  std::map<std::string, std::vector<double>> finals;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& s) { return s.variant == r.variant; });
    if (it == out.end()) {
      out.push_back({r.variant});
      it = out.end() - 1;
    }
    if (r.ok) {
      ++it->runs_ok;
      finals[r.variant].push_back(r.final_return_mean);
    } else {
      ++it->runs_failed;
    }
  }
  for (auto& s : out) {
    const auto& v = finals[s.variant];
    if (v.empty()) continue;
    s.mean = mean_of(v);
    s.std = std_of(v);
  }
  return out;
}

inline std::string summary_csv(const std::vector<ComparisonSummary>& s) {
  std::string out = "variant,runs_ok,runs_failed,final_return_mean,final_return_std\n";
  for (const auto& r : s)
    out += r.variant + "," + std::to_string(r.runs_ok) + "," + std::to_string(r.runs_failed) + "," + csv_num(r.mean) +
           "," + csv_num(r.std) + "\n";
  return out;
}

namespace compare_detail {

inline ComparisonRow row_from_train(const std::string& variant, std::uint64_t seed, const TrainResult& t) {
  ComparisonRow r;
  r.variant = variant;
  r.seed = seed;
  r.ok = true;
  r.out_dir = t.out_dir;
  r.steps = t.steps;
  r.wall_clock_s = t.wall_clock_s;
  if (t.final_eval_mean) r.final_return_mean = *t.final_eval_mean;
  if (t.final_eval_std) r.final_return_std = *t.final_eval_std;
  if (t.final_perplexity) r.final_perplexity = *t.final_perplexity;
  if (t.final_mi) r.final_mi = *t.final_mi;
  for (const auto& rec : plot::read_jsonl(t.out_dir / "metrics.jsonl"))
    if (rec["eval_return_mean"].is_number()) {
      const double v = rec["eval_return_mean"].get<double>();
      if (std::isnan(r.best_return) || v > r.best_return) r.best_return = v;
    }
  return r;
}

inline ojson row_json(const ComparisonRow& r) {
  const auto n = [](double v) { return std::isnan(v) ? ojson(nullptr) : ojson(v); };
  return {{"variant", r.variant},       {"seed", r.seed},
          {"ok", r.ok},                 {"error", r.error},
          {"final_return_mean", n(r.final_return_mean)}, {"final_return_std", n(r.final_return_std)},
          {"best_return", n(r.best_return)},             {"final_perplexity", n(r.final_perplexity)},
          {"final_mi", n(r.final_mi)},  {"steps", r.steps},
          {"wall_clock_s", r.wall_clock_s}, {"out_dir", r.out_dir.string()}};
}

inline ComparisonRow row_from_json(const ojson& j) {
  const auto n = [](const ojson& v) { return v.is_number() ? v.get<double>() : std::nan(""); };
  ComparisonRow r;
  r.variant = j.at("variant").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.ok = j.at("ok").get<bool>();
  r.error = j.at("error").get<std::string>();
  r.final_return_mean = n(j.at("final_return_mean"));
  r.final_return_std = n(j.at("final_return_std"));
  r.best_return = n(j.at("best_return"));
  r.final_perplexity = n(j.at("final_perplexity"));
  r.final_mi = n(j.at("final_mi"));
  r.steps = j.at("steps").get<long>();
  r.wall_clock_s = j.at("wall_clock_s").get<double>();
  r.out_dir = j.at("out_dir").get<std::string>();
  return r;
}

inline ComparisonRow run_one(const RunConfig& base, const std::string& variant, std::uint64_t seed,
                             const fs::path& dir, std::ostream* progress) {
  try {
    RunConfig c = resolve_variant(base, {variant, {}});
    c.seed = seed;
    c.out = dir.string();
    return row_from_train(variant, seed, train(c, {progress}));
  } catch (const std::exception& e) {
    ComparisonRow r;
    r.variant = variant;
    r.seed = seed;
    r.error = e.what();
    r.out_dir = dir;
    return r;
  }
}

}  // namespace compare_detail

// Trains every variant on every seed and writes results.csv, summary.csv and
// comparison.svg under out_root. A failed run is recorded, not fatal. With
// jobs > 1, runs execute as concurrent child processes, each in its own
// directory.
inline ComparisonResult run_comparison(const RunConfig& base, const std::vector<std::string>& variants,
                                       const std::vector<std::uint64_t>& seeds, const fs::path& out_root,
                                       int jobs = 1, std::ostream* progress = nullptr) {
  if (seeds.size() < 2) throw RejectionError("comparison needs at least 2 seeds");
  if (variants.empty()) throw RejectionError("comparison needs at least one variant");
  for (const auto& v : variants) check_variant(v);
  fs::create_directories(out_root);

  struct Job {
    std::string variant;
    std::uint64_t seed;
    fs::path dir;
  };
  std::vector<Job> todo;
  for (const auto& v : variants)
    for (auto s : seeds) todo.push_back({v, s, out_root / (v + "_seed" + std::to_string(s))});

  ComparisonResult res;
  res.rows.resize(todo.size());
  if (jobs <= 1) {
    for (std::size_t i = 0; i < todo.size(); ++i)
      res.rows[i] = compare_detail::run_one(base, todo[i].variant, todo[i].seed, todo[i].dir, progress);
  } else {
    std::map<pid_t, std::size_t> running;
    std::size_t next = 0;
    const auto reap_one = [&] {
      int status = 0;
      const pid_t pid = ::wait(&status);
      if (pid <= 0) return;
      const std::size_t i = running.at(pid);
      running.erase(pid);
      const fs::path rj = todo[i].dir / "result.json";
      std::ifstream f(rj);
      if (f) {
        res.rows[i] = compare_detail::row_from_json(ojson::parse(f));
      } else {
        ComparisonRow r;
        r.variant = todo[i].variant;
        r.seed = todo[i].seed;
        r.out_dir = todo[i].dir;
        r.error = "worker process exited with status " + std::to_string(status);
        res.rows[i] = r;
      }
    };
    while (next < todo.size() || !running.empty()) {
      if (next < todo.size() && static_cast<int>(running.size()) < jobs) {
        std::fflush(nullptr);
        const pid_t pid = ::fork();
        if (pid == 0) {
          const Job& j = todo[next];
          const ComparisonRow r = compare_detail::run_one(base, j.variant, j.seed, j.dir, progress);
          std::error_code ec;
          fs::create_directories(j.dir, ec);
          std::ofstream(j.dir / "result.json") << compare_detail::row_json(r).dump() << "\n";
          std::fflush(nullptr);
          ::_exit(0);
        }
        if (pid < 0) throw RuntimeAbort("fork failed");
        running[pid] = next++;
      } else {
        reap_one();
      }
    }
  }

  res.summary = summarize(res.rows);
  res.results_csv = out_root / "results.csv";
  res.summary_csv = out_root / "summary.csv";
  write_text(res.results_csv, results_csv(res.rows));
  write_text(res.summary_csv, summary_csv(res.summary));

  std::vector<plot::MetricsLog> logs;
  for (const auto& r : res.rows) {
    if (!r.ok) continue;
    plot::MetricsLog l;
    l.label = r.variant;
    l.records = plot::read_jsonl(r.out_dir / "metrics.jsonl");
    if (!l.records.empty()) logs.push_back(std::move(l));
  }
  res.plot = out_root / "comparison.svg";
  write_text(res.plot, plot::line_chart_svg("evaluation return (mean and std over seeds)", "return",
                                            plot::aggregate(logs, "eval_return_mean")));
  return res;
}

}  // namespace tart
