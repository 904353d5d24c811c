#pragma once

// The end-to-end proving pipeline: whole-proof generation and checking, then
// sketching of every filtered candidate, sketch validation, and hole-wise
// refinement with step-model tactics, hammer suggestions and heuristics.

#include <chrono>
#include <cstddef>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <stop_token>
#include <string>
#include <vector>

#include "hybridprover/checker.hpp"
#include "hybridprover/filter.hpp"
#include "hybridprover/model.hpp"
#include "hybridprover/parallel.hpp"
#include "hybridprover/result.hpp"
#include "hybridprover/sketch.hpp"
#include "hybridprover/syntax.hpp"
#include "json.hpp"

namespace hybridprover::orchestrator {

using checker::VerdictStatus;

struct PipelineConfig {
  model::SamplingConfig whole_sampling;
  model::SamplingConfig step_sampling = model::default_step_sampling();
  std::size_t workers = 64;
  double check_timeout = 30;
  double hammer_timeout = 30;
  std::size_t refine_budget = 16;  // full-proof checks per sketch during refinement
  std::size_t sketch_limit = 16;
  std::size_t hammer_max_suggestions = 8;
  bool dedup = true;
  bool use_step_model = true;
  bool use_hammer = true;
  bool use_heuristics = true;
  bool refine = true;
  /// Check every whole candidate instead of stopping at the first Valid one,
  /// so each sample gets an outcome (evaluation mode).
  bool exhaustive_whole = false;
  model::PromptTemplate prompt;
  filter::FilterConfig filter;
  checker::WrapperConfig wrapper;
};

enum class ProveStatus { SolvedWhole, SolvedRefined, Unsolved };

inline std::string_view to_string(ProveStatus s) {
  switch (s) {
    case ProveStatus::SolvedWhole: return "SolvedWhole";
    case ProveStatus::SolvedRefined: return "SolvedRefined";
    case ProveStatus::Unsolved: return "Unsolved";
  }
  return "?";
}

struct StageStats {
  std::size_t candidates_generated = 0;
  std::size_t candidates_filtered = 0;  // passed the filter
  std::size_t candidates_unique = 0;    // distinct, placeholder-free, eligible for checking
  std::size_t candidates_checked = 0;
  std::size_t whole_timeouts = 0;
  std::size_t sketches_built = 0;
  std::size_t sketches_valid = 0;
  std::size_t holes_total = 0;
  std::size_t refinement_checks = 0;       // hole-wise plus full-proof checks
  std::size_t refinement_full_checks = 0;  // full-proof checks only
  std::size_t hammer_calls = 0;
  std::size_t step_model_calls = 0;
  std::size_t step_model_failures = 0;
  std::size_t prover_calls = 0;
  std::size_t prover_call_bound = 0;

  double whole_seconds = 0;
  double sketch_seconds = 0;
  double refine_seconds = 0;
  double total_seconds = 0;

  /// Counts only; wall times differ between otherwise identical runs.
  friend bool operator==(const StageStats& a, const StageStats& b) {
    auto counts = [](const StageStats& s) {
      return std::tuple(s.candidates_generated, s.candidates_filtered, s.candidates_unique, s.candidates_checked,
                        s.whole_timeouts, s.sketches_built, s.sketches_valid, s.holes_total, s.refinement_checks,
                        s.refinement_full_checks, s.hammer_calls, s.step_model_calls, s.step_model_failures,
                        s.prover_calls, s.prover_call_bound);
    };
    return counts(a) == counts(b);
  }
};

struct ProveResult {
  ProveStatus status = ProveStatus::Unsolved;
  std::optional<syntax::ProofScript> proof;
  StageStats stats;
  /// Whole-proof outcome per generated sample, in sample order; false for
  /// samples rejected by the filter. Complete only in exhaustive mode.
  std::vector<bool> sample_outcomes;

  friend bool operator==(const ProveResult&, const ProveResult&) = default;
};

enum class PipelineErrorKind { Backend, Checker };

struct PipelineError {
  PipelineErrorKind kind;
  std::string detail;
};

struct Backends {
  model::Backend& whole;
  model::Backend* step = nullptr;  // null: no step model
  checker::CheckService& checker;
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct CheckTask {
  checker::Verdict verdict;
};

inline bool is_checker_error(const checker::Verdict& v) { return v.status == VerdictStatus::CheckerError; }

/// Candidates for one hole, deduplicated in source priority order.
struct HoleCandidates {
  std::vector<model::TacticCandidate> list;
  std::size_t cursor = 0;                // next candidate to validate
  std::vector<std::size_t> validated;    // indices into list, in discovery order
};

class Refiner {
 public:
  Refiner(const syntax::TheoremDecl& thm, const sketch::ProofSketch& s, const PipelineConfig& cfg, Backends& b,
          StageStats& stats, std::stop_token stop)
      : thm_(thm), s_(s), cfg_(cfg), b_(b), stats_(stats), stop_(stop) {}

  Result<std::optional<syntax::ProofScript>, PipelineError> run() {
    const auto goals = sketch::parse_subgoals(s_, &thm_);
    holes_.resize(s_.holes.size());
    for (std::size_t i = 0; i < goals.size(); ++i) {
      auto c = candidates_for(i, goals[i]);
      if (!c) return unexpected(c.error());
      holes_[i].list = std::move(*c);
    }
    // First fit per hole; a hole with no validated tactic ends the search.
    for (std::size_t i = 0; i < holes_.size(); ++i) {
      auto ok = validated(i, 0);
      if (!ok) return unexpected(ok.error());
      if (!*ok) return std::optional<syntax::ProofScript>{};
    }
    // Full proofs over validated tactic tuples in order of increasing index sum.
    using Tuple = std::vector<std::size_t>;
    auto later = [](const Tuple& a, const Tuple& b) {
      std::size_t sa = 0, sb = 0;
      for (auto x : a) sa += x;
      for (auto x : b) sb += x;
      return sa != sb ? sa > sb : a > b;
    };
    std::priority_queue<Tuple, std::vector<Tuple>, decltype(later)> frontier(later);
    std::set<Tuple> seen;
    frontier.push(Tuple(holes_.size(), 0));
    seen.insert(frontier.top());
    while (!frontier.empty() && stats_.refinement_full_checks < cfg_.refine_budget && !stop_.stop_requested()) {
      Tuple t = frontier.top();
      frontier.pop();
      sketch::HoleAssignment a;
      for (std::size_t i = 0; i < holes_.size(); ++i)
        a[s_.holes[i].id] = holes_[i].list[holes_[i].validated[t[i]]].text;
      auto full = sketch::substitute(s_, a);
      if (full && !syntax::contains_placeholder(*full)) {
        auto v = check(checker::wrap_theory(thm_, *full, cfg_.wrapper));
        ++stats_.refinement_full_checks;
        ++stats_.refinement_checks;
        if (checker_failed(v)) return unexpected(PipelineError{PipelineErrorKind::Checker, v.message});
        if (v.valid()) return std::optional<syntax::ProofScript>(std::move(*full));
      }
      for (std::size_t i = 0; i < holes_.size(); ++i) {
        Tuple n = t;
        ++n[i];
        if (seen.count(n)) continue;
        auto ok = validated(i, n[i]);
        if (!ok) return unexpected(ok.error());
        if (!*ok) continue;
        seen.insert(n);
        frontier.push(std::move(n));
      }
    }
    return std::optional<syntax::ProofScript>{};
  }

 private:
  static bool checker_failed(const checker::Verdict& v) { return v.status == VerdictStatus::CheckerError; }

  checker::Verdict check(const std::string& doc, std::stop_token st = {}) {
    ++stats_.prover_calls;
    std::stop_source combined;
    std::stop_callback a(stop_, [&] { combined.request_stop(); });
    std::stop_callback b(st, [&] { combined.request_stop(); });
    return b_.checker.check({doc, cfg_.check_timeout}, combined.get_token());
  }

  Result<std::vector<model::TacticCandidate>, PipelineError> candidates_for(std::size_t i, const sketch::Subgoal& g) {
    const bool whole = s_.holes[i].path.empty();
    auto parses = [&](const std::string& text) {
      return whole ? static_cast<bool>(syntax::parse_proof(text)) : static_cast<bool>(syntax::parse_justification(text));
    };
    std::vector<model::TacticCandidate> out;
    std::set<std::string> seen;
    auto add = [&](std::string text, model::TacticSource src) {
      if (!parses(text)) return;
      auto key = syntax::normalize_text(text);
      if (!seen.insert(key).second) return;
      out.push_back({std::move(text), src});
    };
    if (cfg_.use_step_model && b_.step) {
      ++stats_.step_model_calls;
      auto responses = b_.step->generate(model::build_tactic_prompt(g), cfg_.step_sampling);
      if (!responses) {
        ++stats_.step_model_failures;
      } else {
        for (const auto& v : filter::filter_batch(*responses, cfg_.filter))
          if (v.accepted) add(v.proof_text, model::TacticSource::LlmStep);
      }
    }
    if (cfg_.use_hammer) {
      ++stats_.hammer_calls;
      ++stats_.prover_calls;
      auto found = checker::sledgehammer_probe(b_.checker, thm_, s_, s_.holes[i].id, cfg_.hammer_timeout,
                                               cfg_.wrapper, stop_);
      if (!found) return unexpected(PipelineError{PipelineErrorKind::Checker, found.error().detail});
      std::size_t taken = 0;
      for (auto& c : *found) {
        if (taken++ == cfg_.hammer_max_suggestions) break;
        add(std::move(c.text), model::TacticSource::Sledgehammer);
      }
    }
    if (cfg_.use_heuristics)
      for (const auto& c : model::heuristic_tactics()) add(c.text, c.source);
    return out;
  }

  /// True once hole i has at least k+1 validated tactics, validating further
  /// candidates (other holes left as sorry) as needed.
  Result<bool, PipelineError> validated(std::size_t i, std::size_t k) {
    auto& h = holes_[i];
    while (h.validated.size() <= k && h.cursor < h.list.size() && !stop_.stop_requested()) {
      const std::size_t from = h.cursor;
      const std::size_t count = h.list.size() - from;
      auto outcome = parallel::run<CheckTask>(
          count, cfg_.workers, parallel::Mode::FirstInOrder,
          [&](std::size_t j, std::stop_token st) {
            auto filled = sketch::partial_fill(s_, s_.holes[i].id, h.list[from + j].text);
            if (!filled) return CheckTask{checker::Verdict::make(VerdictStatus::Invalid, filled.error().detail)};
            return CheckTask{check(checker::wrap_theory(thm_, *filled, cfg_.wrapper), st)};
          },
          [](const CheckTask& t) { return t.verdict.valid(); },
          [](const CheckTask& t) { return is_checker_error(t.verdict); }, stop_);
      stats_.refinement_checks += outcome.started;
      if (outcome.aborted_by)
        return unexpected(PipelineError{PipelineErrorKind::Checker, outcome.results[*outcome.aborted_by]->verdict.message});
      if (!outcome.winner) {
        h.cursor = h.list.size();
        break;
      }
      h.validated.push_back(from + *outcome.winner);
      h.cursor = from + *outcome.winner + 1;
    }
    return h.validated.size() > k;
  }

  const syntax::TheoremDecl& thm_;
  const sketch::ProofSketch& s_;
  const PipelineConfig& cfg_;
  Backends& b_;
  StageStats& stats_;
  std::stop_token stop_;
  std::vector<HoleCandidates> holes_;
};

}  // namespace detail

/// Checks candidates concurrently and returns the index of a Valid one. With
/// `exhaustive` every candidate is checked; otherwise the first Valid verdict
/// stops the run and no new check starts.
struct ParallelCheck {
  std::optional<std::size_t> valid_index;
  std::vector<std::optional<checker::Verdict>> verdicts;
  std::size_t checked = 0;
  std::optional<std::string> checker_error;
};

inline ParallelCheck check_candidates_parallel(const std::vector<syntax::ProofScript>& cands,
                                               const syntax::TheoremDecl& thm, const PipelineConfig& cfg,
                                               checker::CheckService& svc, bool exhaustive = false,
                                               std::stop_token stop = {}) {
  auto outcome = parallel::run<detail::CheckTask>(
      cands.size(), cfg.workers, exhaustive ? parallel::Mode::All : parallel::Mode::Any,
      [&](std::size_t i, std::stop_token st) {
        return detail::CheckTask{svc.check({checker::wrap_theory(thm, cands[i], cfg.wrapper), cfg.check_timeout}, st)};
      },
      [](const detail::CheckTask& t) { return t.verdict.valid(); },
      [](const detail::CheckTask& t) { return detail::is_checker_error(t.verdict); }, stop);
  ParallelCheck out;
  out.checked = outcome.started;
  for (auto& r : outcome.results) out.verdicts.push_back(r ? std::optional(r->verdict) : std::nullopt);
  if (outcome.aborted_by) {
    out.checker_error = outcome.results[*outcome.aborted_by]->verdict.message;
    return out;
  }
  out.valid_index = outcome.winner;
  if (exhaustive && !out.valid_index) {
    for (std::size_t i = 0; i < out.verdicts.size(); ++i)
      if (out.verdicts[i] && out.verdicts[i]->valid()) {
        out.valid_index = i;
        break;
      }
  }
  return out;
}

/// Hole-wise first-fit refinement of a validated sketch, then full-proof checks
/// over combinations of validated tactics up to the refine budget.
inline Result<std::optional<syntax::ProofScript>, PipelineError> refine_sketch(
    const sketch::ProofSketch& s, const syntax::TheoremDecl& thm, const PipelineConfig& cfg, Backends& b,
    StageStats& stats, std::stop_token stop = {}) {
  StageStats local;
  detail::Refiner r(thm, s, cfg, b, local, stop);
  auto out = r.run();
  stats.refinement_checks += local.refinement_checks;
  stats.refinement_full_checks += local.refinement_full_checks;
  stats.hammer_calls += local.hammer_calls;
  stats.step_model_calls += local.step_model_calls;
  stats.step_model_failures += local.step_model_failures;
  stats.prover_calls += local.prover_calls;
  return out;
}

/// Worst-case prover calls for refining one sketch with `holes` holes.
inline std::size_t refinement_call_bound(const PipelineConfig& cfg, std::size_t holes) {
  const std::size_t per_hole_candidates = (cfg.use_step_model ? cfg.step_sampling.n : 0) +
                                          (cfg.use_hammer ? cfg.hammer_max_suggestions : 0) +
                                          (cfg.use_heuristics ? model::heuristic_tactics().size() : 0);
  const std::size_t probes = cfg.use_hammer ? 1 : 0;
  return holes * (per_hole_candidates + probes) + cfg.refine_budget;
}

inline Result<ProveResult, PipelineError> prove(const syntax::TheoremDecl& thm, const PipelineConfig& cfg,
                                                Backends b, std::stop_token stop = {}) {
  using detail::Clock;
  const auto t_start = Clock::now();
  ProveResult res;
  auto& st = res.stats;

  // Whole-proof generation, filtering and checking.
  auto responses = b.whole.generate(model::build_whole_proof_prompt(thm, cfg.prompt), cfg.whole_sampling);
  if (!responses) return unexpected(PipelineError{PipelineErrorKind::Backend, responses.error().describe()});
  st.candidates_generated = responses->size();
  const auto verdicts = filter::filter_batch(*responses, cfg.filter);

  std::vector<syntax::ProofScript> unique;
  std::vector<std::optional<std::size_t>> sample_to_unique(verdicts.size());
  std::map<std::string, std::size_t> by_render;
  for (std::size_t i = 0; i < verdicts.size(); ++i) {
    if (!verdicts[i].accepted) continue;
    ++st.candidates_filtered;
    const auto& script = *verdicts[i].script;
    if (syntax::contains_placeholder(script)) continue;
    const std::string key = syntax::render(script);
    if (cfg.dedup) {
      if (auto it = by_render.find(key); it != by_render.end()) {
        sample_to_unique[i] = it->second;
        continue;
      }
      by_render.emplace(key, unique.size());
    }
    sample_to_unique[i] = unique.size();
    unique.push_back(script);
  }
  st.candidates_unique = unique.size();

  auto whole = check_candidates_parallel(unique, thm, cfg, b.checker, cfg.exhaustive_whole, stop);
  st.candidates_checked = whole.checked;
  st.prover_calls += whole.checked;
  for (const auto& v : whole.verdicts)
    if (v && v->status == VerdictStatus::Timeout) ++st.whole_timeouts;
  if (whole.checker_error) return unexpected(PipelineError{PipelineErrorKind::Checker, *whole.checker_error});
  res.sample_outcomes.resize(verdicts.size(), false);
  for (std::size_t i = 0; i < verdicts.size(); ++i)
    if (sample_to_unique[i]) {
      const auto& v = whole.verdicts[*sample_to_unique[i]];
      res.sample_outcomes[i] = v && v->valid();
    }
  st.whole_seconds = detail::seconds_since(t_start);
  st.prover_call_bound = st.candidates_unique;

  if (whole.valid_index) {
    res.status = ProveStatus::SolvedWhole;
    res.proof = unique[*whole.valid_index];
    st.total_seconds = detail::seconds_since(t_start);
    return res;
  }

  // Sketches from every filtered candidate, fewest holes first.
  const auto t_sketch = Clock::now();
  struct Built {
    sketch::ProofSketch sketch;
    std::size_t sample_index;
  };
  std::vector<Built> sketches;
  std::set<std::string> seen_skeletons;
  for (std::size_t i = 0; i < verdicts.size(); ++i) {
    if (!verdicts[i].accepted) continue;
    auto s = sketch::build_sketch(*verdicts[i].script);
    if (s.holes.empty()) continue;
    if (cfg.dedup && !seen_skeletons.insert(syntax::render(s.skeleton)).second) continue;
    sketches.push_back({std::move(s), (*responses)[i].sample_index});
  }
  std::stable_sort(sketches.begin(), sketches.end(), [](const Built& a, const Built& b) {
    if (a.sketch.holes.size() != b.sketch.holes.size()) return a.sketch.holes.size() < b.sketch.holes.size();
    return a.sample_index < b.sample_index;
  });
  if (sketches.size() > cfg.sketch_limit) sketches.resize(cfg.sketch_limit);
  st.sketches_built = sketches.size();
  st.prover_call_bound += sketches.size();

  std::vector<syntax::ProofScript> skeletons;
  for (const auto& s : sketches) skeletons.push_back(s.sketch.skeleton);
  auto validation = check_candidates_parallel(skeletons, thm, cfg, b.checker, /*exhaustive=*/true, stop);
  st.prover_calls += validation.checked;
  if (validation.checker_error) return unexpected(PipelineError{PipelineErrorKind::Checker, *validation.checker_error});
  std::vector<const sketch::ProofSketch*> valid;
  for (std::size_t i = 0; i < sketches.size(); ++i)
    if (validation.verdicts[i] && validation.verdicts[i]->valid()) {
      valid.push_back(&sketches[i].sketch);
      st.holes_total += sketches[i].sketch.holes.size();
      st.prover_call_bound += refinement_call_bound(cfg, sketches[i].sketch.holes.size());
    }
  st.sketches_valid = valid.size();
  st.sketch_seconds = detail::seconds_since(t_sketch);

  // Refinement, one sketch at a time in order.
  const auto t_refine = Clock::now();
  if (cfg.refine) {
    for (const auto* s : valid) {
      if (stop.stop_requested()) break;
      auto refined = refine_sketch(*s, thm, cfg, b, st, stop);
      if (!refined) return unexpected(refined.error());
      if (*refined) {
        res.status = ProveStatus::SolvedRefined;
        res.proof = std::move(**refined);
        break;
      }
    }
  }
  st.refine_seconds = detail::seconds_since(t_refine);
  st.total_seconds = detail::seconds_since(t_start);
  return res;
}

// ---------------------------------------------------------------------------
// Result records

inline nlohmann::ordered_json stats_json(const StageStats& s) {
  return {
      {"candidates_generated", s.candidates_generated},
      {"candidates_filtered", s.candidates_filtered},
      {"candidates_unique", s.candidates_unique},
      {"candidates_checked", s.candidates_checked},
      {"whole_timeouts", s.whole_timeouts},
      {"sketches_built", s.sketches_built},
      {"sketches_valid", s.sketches_valid},
      {"holes_total", s.holes_total},
      {"refinement_checks", s.refinement_checks},
      {"refinement_full_checks", s.refinement_full_checks},
      {"hammer_calls", s.hammer_calls},
      {"step_model_calls", s.step_model_calls},
      {"step_model_failures", s.step_model_failures},
      {"prover_calls", s.prover_calls},
      {"prover_call_bound", s.prover_call_bound},
      {"prover_call_bound_formula",
       "unique_candidates + sketches_built + sum over valid sketches of "
       "holes * (step_n + hammer_max_suggestions + heuristics + 1) + refine_budget"},
      {"whole_seconds", s.whole_seconds},
      {"sketch_seconds", s.sketch_seconds},
      {"refine_seconds", s.refine_seconds},
  };
}

inline nlohmann::ordered_json result_record(const std::string& theorem_name, const ProveResult& r) {
  nlohmann::ordered_json j;
  j["theorem_name"] = theorem_name;
  j["status"] = to_string(r.status);
  j["stats"] = stats_json(r.stats);
  j["elapsed"] = r.stats.total_seconds;
  if (r.proof) j["final_proof"] = syntax::render(*r.proof);
  return j;
}

}  // namespace hybridprover::orchestrator
