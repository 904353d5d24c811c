#pragma once

// Evaluation harness: runs the pipeline over a theorem set and reports solve
// rates and pass@k over the whole-proof samples.

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "hybridprover/orchestrator.hpp"
#include "hybridprover/parallel.hpp"
#include "hybridprover/result.hpp"
#include "json.hpp"

namespace hybridprover::eval {

enum class EvalErrorKind { InsufficientSamples, BadDataset };

struct EvalError {
  EvalErrorKind kind;
  std::string detail;
};

using Outcomes = std::vector<std::vector<bool>>;  // per theorem, per sample in order

/// Fraction of theorems with at least one pass among their first k samples.
inline Result<double, EvalError> compute_pass_at_k(const Outcomes& o, std::size_t k) {
  if (o.empty()) return 0.0;
  std::size_t solved = 0;
  for (std::size_t t = 0; t < o.size(); ++t) {
    if (o[t].size() < k)
      return unexpected(EvalError{EvalErrorKind::InsufficientSamples,
                                  "theorem " + std::to_string(t) + " has " + std::to_string(o[t].size()) +
                                      " samples, need " + std::to_string(k)});
    if (std::any_of(o[t].begin(), o[t].begin() + static_cast<std::ptrdiff_t>(k), [](bool b) { return b; })) ++solved;
  }
  return static_cast<double>(solved) / static_cast<double>(o.size());
}

/// Mean over theorems of 1 - C(n-c, k) / C(n, k), with n samples and c passes.
inline Result<double, EvalError> compute_pass_at_k_unbiased(const Outcomes& o, std::size_t k) {
  if (o.empty()) return 0.0;
  double sum = 0;
  for (std::size_t t = 0; t < o.size(); ++t) {
    const std::size_t n = o[t].size();
    if (n < k || k == 0)
      return unexpected(EvalError{EvalErrorKind::InsufficientSamples, "theorem " + std::to_string(t)});
    const auto c = static_cast<std::size_t>(std::count(o[t].begin(), o[t].end(), true));
    if (n - c < k) {
      sum += 1.0;
      continue;
    }
    double miss = 1.0;
    for (std::size_t i = n - c + 1; i <= n; ++i) miss *= 1.0 - static_cast<double>(k) / static_cast<double>(i);
    sum += 1.0 - miss;
  }
  return sum / static_cast<double>(o.size());
}

/// 1, 2, 4, ... below n, then n itself.
inline std::vector<std::size_t> default_ks(std::size_t n) {
  std::vector<std::size_t> ks;
  for (std::size_t k = 1; k < n; k *= 2) ks.push_back(k);
  if (n > 0) ks.push_back(n);
  return ks;
}

struct DatasetEntry {
  std::string name;
  std::string theorem;
};

/// One {"name", "theorem"} object per line.
inline Result<std::vector<DatasetEntry>, EvalError> read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) return unexpected(EvalError{EvalErrorKind::BadDataset, "cannot read " + path});
  std::vector<DatasetEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("theorem") || !j["theorem"].is_string())
      return unexpected(EvalError{EvalErrorKind::BadDataset, path + ":" + std::to_string(lineno)});
    out.push_back({j.value("name", "theorem_" + std::to_string(lineno)), j["theorem"]});
  }
  return out;
}

struct TheoremOutcome {
  std::string name;
  std::optional<orchestrator::ProveResult> result;
  std::optional<orchestrator::PipelineError> error;
  std::vector<bool> samples;  // padded with failures up to the sample count
};

struct EvalOptions {
  std::size_t jobs = 1;
  bool unbiased = false;
};

struct EvalReport {
  std::vector<TheoremOutcome> theorems;  // sorted by name
  std::size_t sample_count = 0;
  std::map<std::size_t, double> pass_at_k;
  bool unbiased = false;
  double wall_seconds = 0;
  double cpu_seconds = 0;

  std::size_t solved() const {
    return static_cast<std::size_t>(std::count_if(theorems.begin(), theorems.end(), [](const TheoremOutcome& t) {
      return t.result && t.result->status != orchestrator::ProveStatus::Unsolved;
    }));
  }
  std::size_t count(orchestrator::ProveStatus s) const {
    return static_cast<std::size_t>(std::count_if(
        theorems.begin(), theorems.end(), [s](const TheoremOutcome& t) { return t.result && t.result->status == s; }));
  }
  std::size_t errors() const {
    return static_cast<std::size_t>(
        std::count_if(theorems.begin(), theorems.end(), [](const TheoremOutcome& t) { return t.error.has_value(); }));
  }
  double success_rate() const {
    return theorems.empty() ? 0.0 : static_cast<double>(solved()) / static_cast<double>(theorems.size());
  }
};

/// Builds the pass@k table from whole-proof sample outcomes.
inline Result<std::map<std::size_t, double>, EvalError> pass_at_k_table(const Outcomes& o, std::size_t n,
                                                                        bool unbiased) {
  std::map<std::size_t, double> table;
  for (auto k : default_ks(n)) {
    auto r = unbiased ? compute_pass_at_k_unbiased(o, k) : compute_pass_at_k(o, k);
    if (!r) return unexpected(r.error());
    table[k] = *r;
  }
  return table;
}

/// Proves every entry; whole candidates are all checked so each sample has an
/// outcome. Theorems run in parallel up to `opts.jobs` and share `b.checker`.
inline EvalReport run_eval(const std::vector<DatasetEntry>& entries, orchestrator::PipelineConfig cfg,
                           orchestrator::Backends b, const EvalOptions& opts = {}) {
  const auto wall0 = std::chrono::steady_clock::now();
  const std::clock_t cpu0 = std::clock();
  cfg.exhaustive_whole = true;
  EvalReport rep;
  rep.sample_count = cfg.whole_sampling.n;
  rep.unbiased = opts.unbiased;

  auto outcome = parallel::run<TheoremOutcome>(
      entries.size(), opts.jobs, parallel::Mode::All,
      [&](std::size_t i, std::stop_token) {
        TheoremOutcome t;
        t.name = entries[i].name;
        auto thm = syntax::parse_theorem(entries[i].theorem);
        if (!thm) {
          t.error = orchestrator::PipelineError{orchestrator::PipelineErrorKind::Backend,
                                                "theorem does not parse: " + thm.error().describe()};
        } else {
          auto r = orchestrator::prove(thm->decl, cfg, b);
          if (r) {
            t.samples = r->sample_outcomes;
            t.result = std::move(*r);
          } else {
            t.error = r.error();
          }
        }
        t.samples.resize(std::max(t.samples.size(), rep.sample_count), false);
        return t;
      },
      [](const TheoremOutcome&) { return false; });
  for (auto& r : outcome.results)
    if (r) rep.theorems.push_back(std::move(*r));
  std::stable_sort(rep.theorems.begin(), rep.theorems.end(),
                   [](const TheoremOutcome& a, const TheoremOutcome& c) { return a.name < c.name; });

  Outcomes o;
  for (const auto& t : rep.theorems) o.push_back(t.samples);
  if (auto table = pass_at_k_table(o, rep.sample_count, opts.unbiased)) rep.pass_at_k = std::move(*table);
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  rep.cpu_seconds = static_cast<double>(std::clock() - cpu0) / CLOCKS_PER_SEC;
  return rep;
}

inline nlohmann::ordered_json theorem_record(const TheoremOutcome& t) {
  if (t.result) return orchestrator::result_record(t.name, *t.result);
  nlohmann::ordered_json j;
  j["theorem_name"] = t.name;
  j["status"] = "Error";
  j["error"] = t.error ? t.error->detail : "";
  return j;
}

inline nlohmann::ordered_json aggregate_record(const EvalReport& r, const nlohmann::ordered_json& config) {
  nlohmann::ordered_json pk = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.pass_at_k) pk[std::to_string(k)] = v;
  nlohmann::ordered_json j;
  j["aggregate"] = true;
  j["total"] = r.theorems.size();
  j["solved"] = r.solved();
  j["success_rate"] = r.success_rate();
  j["samples_per_theorem"] = r.sample_count;
  j["pass_at_k_estimator"] = r.unbiased ? "unbiased" : "prefix";
  j["pass_at_k"] = pk;
  j["stage_attribution"] = {{"solved_whole", r.count(orchestrator::ProveStatus::SolvedWhole)},
                            {"solved_refined", r.count(orchestrator::ProveStatus::SolvedRefined)},
                            {"unsolved", r.count(orchestrator::ProveStatus::Unsolved)},
                            {"errors", r.errors()}};
  j["wall_seconds"] = r.wall_seconds;
  j["cpu_seconds"] = r.cpu_seconds;
  j["config"] = config;
  return j;
}

}  // namespace hybridprover::eval
