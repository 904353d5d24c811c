#pragma once

// Checking contract shared by the Isabelle server client and the mock oracle:
// theory wrapping, verdicts, a session-slot pool with a watchdog, and
// Sledgehammer probing.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <stop_token>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "hybridprover/model.hpp"
#include "hybridprover/result.hpp"
#include "hybridprover/sketch.hpp"
#include "hybridprover/syntax.hpp"
#include "json.hpp"

namespace hybridprover::checker {

using Clock = std::chrono::steady_clock;
using Seconds = std::chrono::duration<double>;

// ---------------------------------------------------------------------------
// Theory documents

struct WrapperConfig {
  std::string theory_name = "Scratch";
  std::vector<std::string> imports = {"Main"};
  std::string session = "HOL";
};

namespace detail {

inline bool is_plain_name(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '\'')) return false;
  return true;
}

}  // namespace detail

/// Session-qualified names such as HOL-Library.Multiset must be quoted.
inline std::string import_name(std::string_view name) {
  if (detail::is_plain_name(name) || (name.size() >= 2 && name.front() == '"')) return std::string(name);
  return "\"" + std::string(name) + "\"";
}

inline std::string wrap_theory(const syntax::TheoremDecl& thm, std::string_view proof_text,
                               const WrapperConfig& w = {}) {
  std::string out = "theory " + w.theory_name + " imports";
  for (const auto& i : w.imports) out += " " + import_name(i);
  out += " begin\n";
  out += syntax::render_theorem(thm) + "\n";
  out += std::string(proof_text) + "\nend\n";
  return out;
}

inline std::string wrap_theory(const syntax::TheoremDecl& thm, const syntax::ProofScript& proof,
                               const WrapperConfig& w = {}) {
  return wrap_theory(thm, syntax::render(proof), w);
}

/// Theorem and proof text of a document produced by wrap_theory.
struct Unwrapped {
  syntax::TheoremDecl theorem;
  std::string proof_text;
  std::size_t proof_offset = 0;
};

inline std::optional<Unwrapped> unwrap_theory(std::string_view doc) {
  auto thm = syntax::parse_theorem(doc);
  if (!thm) return std::nullopt;
  std::string_view rest = doc.substr(thm->proof_offset);
  while (!rest.empty() && syntax::detail::is_space(rest.back())) rest.remove_suffix(1);
  if (rest.size() < 3 || rest.substr(rest.size() - 3) != "end") return std::nullopt;
  rest.remove_suffix(3);
  while (!rest.empty() && syntax::detail::is_space(rest.back())) rest.remove_suffix(1);
  return Unwrapped{thm->decl, std::string(rest), thm->proof_offset};
}

// ---------------------------------------------------------------------------
// Verdicts

struct CheckRequest {
  std::string theory_text;
  double timeout = 30;  // seconds
};

enum class VerdictStatus { Valid, Invalid, Timeout, CheckerError, Cancelled };

inline std::string_view to_string(VerdictStatus s) {
  switch (s) {
    case VerdictStatus::Valid: return "Valid";
    case VerdictStatus::Invalid: return "Invalid";
    case VerdictStatus::Timeout: return "Timeout";
    case VerdictStatus::CheckerError: return "CheckerError";
    case VerdictStatus::Cancelled: return "Cancelled";
  }
  return "?";
}

struct Verdict {
  VerdictStatus status = VerdictStatus::CheckerError;
  std::string message;                  // prover error text (Invalid) or detail (CheckerError)
  std::optional<std::size_t> position;  // byte offset into the theory document
  double elapsed = 0;                   // seconds

  bool valid() const { return status == VerdictStatus::Valid; }

  static Verdict make(VerdictStatus s, std::string msg = {}, std::optional<std::size_t> pos = {}) {
    return Verdict{s, std::move(msg), pos, 0};
  }
};

/// Output of a hammer run: the document verdict plus every suggestion found.
struct HammerOutput {
  Verdict verdict;
  std::vector<std::string> suggestions;
};

/// One prover connection pool. `slot` identifies the session a call runs on;
/// calls on distinct slots may run concurrently, one call per slot at a time.
class ProverBackend {
 public:
  virtual ~ProverBackend() = default;
  virtual Verdict check(const CheckRequest& r, std::size_t slot, std::stop_token stop) = 0;
  virtual HammerOutput hammer(const CheckRequest& r, std::size_t slot, std::stop_token stop) = 0;
  /// Tears down and reopens the session behind `slot`; false if that failed.
  virtual bool restart(std::size_t /*slot*/) { return true; }
};

/// Suggestions in prover output: the text after "Try this:" minus a trailing
/// timing annotation such as "(12 ms)" or "(> 1.0 s)".
inline std::vector<std::string> parse_try_this(std::string_view output) {
  static const std::regex timing(R"(\s*\((>\s*)?[0-9.]+\s*(ms|s)\)\s*$)");
  std::vector<std::string> out;
  std::size_t pos = 0;
  static constexpr std::string_view kMarker = "Try this:";
  while ((pos = output.find(kMarker, pos)) != std::string_view::npos) {
    pos += kMarker.size();
    auto end = output.find('\n', pos);
    std::string s(output.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos));
    s = std::regex_replace(s, timing, "");
    s = syntax::normalize_text(s);
    if (!s.empty() && std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mock oracle

inline constexpr std::string_view kHammerCommand = "sledgehammer";

/// Deterministic stand-in for the prover. A document is Valid when every
/// terminal justification is accepted for its goal: by a rule keyed on the
/// goal (optionally prefixed by the case name, "Nil: ?case"), else by the
/// default verdict. sorry and oops pass when accept_sorry is set.
struct MockOracle {
  std::map<std::string, std::set<std::string>> rules;
  VerdictStatus default_verdict = VerdictStatus::Invalid;
  bool accept_sorry = true;
  std::map<std::string, std::vector<std::string>> hammer_rules;  // goal key -> suggestions
  std::set<std::string> bad_methods;      // proof opening methods that fail outright
  std::set<std::string> rejected_proofs;  // whole proofs that fail even if every step passes

  std::chrono::milliseconds latency{0};
  std::optional<std::chrono::milliseconds> valid_latency;  // latency for Valid documents, if different
  std::size_t fail_first = 0;  // first N calls report CheckerError
  std::string hang_marker;     // documents containing this never finish

  static std::string key(std::string_view text) { return syntax::normalize_text(syntax::unquote(syntax::normalize_text(text))); }

  void accept(std::string_view goal, std::string_view tactic) { rules[key(goal)].insert(key(tactic)); }
  void suggest(std::string_view goal, std::string_view tactic) { hammer_rules[key(goal)].push_back(std::string(tactic)); }
  void reject_proof(std::string_view proof) { rejected_proofs.insert(key(proof)); }

  static Result<MockOracle, std::string> from_json(const nlohmann::json& j) {
    MockOracle m;
    try {
      if (j.contains("rules"))
        for (const auto& [goal, tactics] : j.at("rules").items())
          for (const auto& t : tactics) m.accept(goal, t.get<std::string>());
      if (j.contains("hammer"))
        for (const auto& [goal, tactics] : j.at("hammer").items())
          for (const auto& t : tactics) m.suggest(goal, t.get<std::string>());
      if (j.contains("default_verdict")) {
        const auto v = j.at("default_verdict").get<std::string>();
        if (v == "valid" || v == "Valid") {
          m.default_verdict = VerdictStatus::Valid;
        } else if (v == "invalid" || v == "Invalid") {
          m.default_verdict = VerdictStatus::Invalid;
        } else {
          return unexpected("default_verdict must be valid or invalid");
        }
      }
      m.accept_sorry = j.value("accept_sorry", true);
      for (const auto& b : j.value("bad_methods", std::vector<std::string>{})) m.bad_methods.insert(key(b));
      for (const auto& p : j.value("rejected_proofs", std::vector<std::string>{})) m.reject_proof(p);
      m.latency = std::chrono::milliseconds(j.value("latency_ms", 0));
      if (j.contains("valid_latency_ms")) m.valid_latency = std::chrono::milliseconds(j.at("valid_latency_ms").get<long>());
      m.fail_first = j.value("fail_first", std::size_t{0});
      m.hang_marker = j.value("hang_marker", std::string{});
    } catch (const nlohmann::json::exception& e) {
      return unexpected(std::string("bad oracle file: ") + e.what());
    }
    return m;
  }

  static Result<MockOracle, std::string> from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) return unexpected("cannot open oracle file " + path);
    auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) return unexpected("oracle file " + path + " is not valid JSON");
    return from_json(j);
  }

  /// Pure evaluation of one document, ignoring latency and fault injection.
  Verdict evaluate(std::string_view doc) const { return run(doc, nullptr); }

  /// Hammer evaluation: the hole holding the hammer command gets the
  /// suggestions configured for its goal.
  HammerOutput evaluate_hammer(std::string_view doc) const {
    HammerOutput out;
    out.verdict = run(doc, &out.suggestions);
    return out;
  }

 private:
  static constexpr std::string_view kProbeMarker = "hammer_probe_hole";

  std::set<std::string> accepted_for(const sketch::Subgoal& g) const {
    const std::string goal = key(g.goal_prop);
    if (g.case_name) {
      if (auto it = rules.find(key(*g.case_name + ": " + goal)); it != rules.end()) return it->second;
    }
    if (auto it = rules.find(goal); it != rules.end()) return it->second;
    return {};
  }

  bool has_rule(const sketch::Subgoal& g) const {
    const std::string goal = key(g.goal_prop);
    return (g.case_name && rules.count(key(*g.case_name + ": " + goal))) || rules.count(goal);
  }

  std::vector<std::string> hammer_for(const sketch::Subgoal& g) const {
    const std::string goal = key(g.goal_prop);
    if (g.case_name) {
      if (auto it = hammer_rules.find(key(*g.case_name + ": " + goal)); it != hammer_rules.end()) return it->second;
    }
    if (auto it = hammer_rules.find(goal); it != hammer_rules.end()) return it->second;
    return {};
  }

  Verdict run(std::string_view doc_in, std::vector<std::string>* suggestions) const {
    std::string doc(doc_in);
    if (suggestions) {
      // "sledgehammer ... sorry" at the hole becomes a marker justification.
      auto toks = syntax::tokenize(doc);
      if (!toks) return Verdict::make(VerdictStatus::Invalid, "Outer syntax error", 0);
      std::size_t h = 0;
      while (h < toks->size() && (*toks)[h].text != kHammerCommand) ++h;
      std::size_t s = h;
      while (s < toks->size() && (*toks)[s].text != "sorry") ++s;
      if (s == toks->size()) return Verdict::make(VerdictStatus::Invalid, "no hammer command in document");
      doc = doc.substr(0, (*toks)[h].span.start_offset) + "by " + std::string(kProbeMarker) +
            doc.substr((*toks)[s].span.end_offset);
    }
    auto unwrapped = unwrap_theory(doc);
    if (!unwrapped) return Verdict::make(VerdictStatus::Invalid, "Outer syntax error: malformed theory", 0);
    const std::string& proof_text = unwrapped->proof_text;
    auto parsed = syntax::parse_proof(proof_text);
    if (!parsed)
      return Verdict::make(VerdictStatus::Invalid, "Outer syntax error: " + parsed.error().message,
                           unwrapped->proof_offset + parsed.error().span.start_offset);
    if (parsed->is_isar_block()) {
      const auto& b = parsed->block();
      if (b.opening_method && bad_methods.count(key(*b.opening_method)))
        return Verdict::make(VerdictStatus::Invalid, "Failed to apply initial proof method",
                             unwrapped->proof_offset);
    }
    const auto s = sketch::build_sketch(*parsed);
    const auto goals = sketch::parse_subgoals(s, &unwrapped->theorem);
    for (std::size_t i = 0; i < s.holes.size(); ++i) {
      const auto& j = s.holes[i].original_justification;
      const auto pos = unwrapped->proof_offset + j.span.start_offset;
      if (j.kind == syntax::JustificationKind::Sorry || j.kind == syntax::JustificationKind::Oops) {
        if (!accept_sorry) return Verdict::make(VerdictStatus::Invalid, "sorry is not allowed", pos);
        continue;
      }
      const std::string tactic = key(syntax::render(j));
      if (suggestions && tactic == "by " + std::string(kProbeMarker)) {
        *suggestions = hammer_for(goals[i]);
        continue;
      }
      const bool ok = has_rule(goals[i]) ? accepted_for(goals[i]).count(tactic) > 0
                                         : default_verdict == VerdictStatus::Valid;
      if (!ok) return Verdict::make(VerdictStatus::Invalid, "Failed to finish proof: " + tactic, pos);
    }
    if (rejected_proofs.count(key(syntax::render(*parsed))))
      return Verdict::make(VerdictStatus::Invalid, "Failed to finish proof", unwrapped->proof_offset);
    return Verdict::make(VerdictStatus::Valid);
  }
};

/// ProverBackend over a MockOracle, with latency and fault injection. Records
/// every document it sees and the peak number of concurrent calls.
class MockBackend : public ProverBackend {
 public:
  explicit MockBackend(MockOracle oracle) : oracle_(std::move(oracle)) {}

  Verdict check(const CheckRequest& r, std::size_t slot, std::stop_token stop) override {
    return call(r, slot, stop, nullptr);
  }

  HammerOutput hammer(const CheckRequest& r, std::size_t slot, std::stop_token stop) override {
    HammerOutput out;
    out.verdict = call(r, slot, stop, &out.suggestions);
    return out;
  }

  bool restart(std::size_t) override {
    ++restarts_;
    return true;
  }

  std::size_t calls() const { return calls_; }
  std::size_t restarts() const { return restarts_; }
  std::size_t peak_concurrency() const { return peak_; }
  std::vector<std::string> documents() const {
    std::lock_guard lock(mu_);
    return documents_;
  }
  const MockOracle& oracle() const { return oracle_; }

 private:
  Verdict call(const CheckRequest& r, std::size_t, std::stop_token stop, std::vector<std::string>* suggestions) {
    const std::size_t n = calls_++;
    {
      std::lock_guard lock(mu_);
      documents_.push_back(r.theory_text);
    }
    const std::size_t now = ++active_;
    for (std::size_t p = peak_; now > p && !peak_.compare_exchange_weak(p, now);) {
    }
    struct Leave {
      std::atomic<std::size_t>& a;
      ~Leave() { --a; }
    } leave{active_};

    auto wait = [&](std::optional<Clock::time_point> until) {
      std::mutex m;
      std::condition_variable_any cv;
      std::unique_lock lock(m);
      if (until) return !cv.wait_until(lock, stop, *until, [] { return false; });
      cv.wait(lock, stop, [] { return false; });
      return false;
    };
    if (!oracle_.hang_marker.empty() && r.theory_text.find(oracle_.hang_marker) != std::string::npos) {
      wait(std::nullopt);
      return Verdict::make(VerdictStatus::Cancelled, "interrupted");
    }
    HammerOutput out;
    if (suggestions)
      out = oracle_.evaluate_hammer(r.theory_text);
    else
      out.verdict = oracle_.evaluate(r.theory_text);
    const auto latency = out.verdict.valid() && oracle_.valid_latency ? *oracle_.valid_latency : oracle_.latency;
    if (latency.count() > 0 && !wait(Clock::now() + latency)) return Verdict::make(VerdictStatus::Cancelled, "interrupted");
    if (n < oracle_.fail_first) return Verdict::make(VerdictStatus::CheckerError, "session died");
    if (suggestions) *suggestions = std::move(out.suggestions);
    return out.verdict;
  }

  MockOracle oracle_;
  std::atomic<std::size_t> calls_{0};
  std::atomic<std::size_t> restarts_{0};
  std::atomic<std::size_t> active_{0};
  std::atomic<std::size_t> peak_{0};
  mutable std::mutex mu_;
  std::vector<std::string> documents_;
};

// ---------------------------------------------------------------------------
// Watchdog and slot pool

/// One thread that requests stop on registered stop sources at their deadlines.
class Watchdog {
 public:
  Watchdog() : thread_([this](std::stop_token st) { loop(st); }) {}
  ~Watchdog() {
    thread_.request_stop();
    cv_.notify_all();
  }

  using Ticket = std::size_t;

  Ticket arm(Clock::time_point deadline, std::stop_source target) {
    std::lock_guard lock(mu_);
    const Ticket t = next_++;
    armed_.emplace(t, Entry{deadline, std::move(target)});
    cv_.notify_all();
    return t;
  }

  void disarm(Ticket t) {
    std::lock_guard lock(mu_);
    armed_.erase(t);
  }

 private:
  struct Entry {
    Clock::time_point deadline;
    std::stop_source target;
  };

  void loop(std::stop_token st) {
    std::unique_lock lock(mu_);
    while (!st.stop_requested()) {
      auto earliest = Clock::time_point::max();
      const auto now = Clock::now();
      for (auto it = armed_.begin(); it != armed_.end();) {
        if (it->second.deadline <= now) {
          it->second.target.request_stop();
          it = armed_.erase(it);
        } else {
          earliest = std::min(earliest, it->second.deadline);
          ++it;
        }
      }
      if (earliest == Clock::time_point::max()) {
        cv_.wait(lock, st, [&] { return !armed_.empty(); });
      } else {
        cv_.wait_until(lock, st, earliest, [&] {
          for (const auto& [_, e] : armed_)
            if (e.deadline < earliest) return true;
          return false;
        });
      }
    }
  }

  std::mutex mu_;
  std::condition_variable_any cv_;
  std::map<Ticket, Entry> armed_;
  Ticket next_ = 0;
  std::jthread thread_;
};

struct ServiceConfig {
  std::size_t slots = 64;
  double grace = 5;  // seconds a cancelled backend call may take to wind down
  bool retry_on_error = true;
};

/// Checks documents on a bounded pool of backend slots. Every call gets a
/// watchdog deadline of request timeout; a CheckerError restarts the slot and
/// retries once.
class CheckService {
 public:
  CheckService(ProverBackend& backend, ServiceConfig cfg = {})
      : backend_(backend), cfg_(cfg), busy_(std::max<std::size_t>(1, cfg.slots), false) {}

  const ServiceConfig& config() const { return cfg_; }
  std::size_t calls() const { return calls_; }
  std::size_t restarts() const { return restarts_; }

  Verdict check(const CheckRequest& r, std::stop_token caller = {}) {
    return run(r, caller, [&](std::size_t slot, std::stop_token st) { return HammerOutput{backend_.check(r, slot, st), {}}; })
        .verdict;
  }

  HammerOutput hammer(const CheckRequest& r, std::stop_token caller = {}) {
    return run(r, caller, [&](std::size_t slot, std::stop_token st) { return backend_.hammer(r, slot, st); });
  }

 private:
  template <class Call>
  HammerOutput run(const CheckRequest& r, std::stop_token caller, Call&& call) {
    const auto start = Clock::now();
    auto slot = acquire(caller);
    if (!slot) {
      HammerOutput out{Verdict::make(VerdictStatus::Cancelled, "cancelled while waiting for a session"), {}};
      out.verdict.elapsed = Seconds(Clock::now() - start).count();
      return out;
    }
    HammerOutput out;
    for (int attempt = 0; attempt < 2; ++attempt) {
      ++calls_;
      std::stop_source stop;
      std::stop_callback forward(caller, [&] { stop.request_stop(); });
      std::atomic<bool> timed_out{false};
      std::stop_source deadline_src;
      std::stop_callback on_deadline(deadline_src.get_token(), [&] {
        timed_out = true;
        stop.request_stop();
      });
      const auto t0 = Clock::now();
      const auto ticket = watchdog_.arm(t0 + std::chrono::duration_cast<Clock::duration>(Seconds(r.timeout)), deadline_src);
      out = call(*slot, stop.get_token());
      watchdog_.disarm(ticket);
      if (timed_out) {
        out.verdict = Verdict::make(VerdictStatus::Timeout, "watchdog timeout after " + std::to_string(r.timeout) + "s");
        out.suggestions.clear();
      } else if (caller.stop_requested() && out.verdict.status != VerdictStatus::Valid) {
        out.verdict.status = VerdictStatus::Cancelled;
      }
      if (out.verdict.status != VerdictStatus::CheckerError || !cfg_.retry_on_error || attempt == 1 ||
          caller.stop_requested())
        break;
      ++restarts_;
      if (!backend_.restart(*slot)) break;
    }
    release(*slot);
    out.verdict.elapsed = Seconds(Clock::now() - start).count();
    return out;
  }

  std::optional<std::size_t> acquire(std::stop_token caller) {
    std::unique_lock lock(mu_);
    std::optional<std::size_t> slot;
    auto free_slot = [&] {
      for (std::size_t i = 0; i < busy_.size(); ++i)
        if (!busy_[i]) {
          slot = i;
          return true;
        }
      return false;
    };
    if (!cv_.wait(lock, caller, free_slot)) return std::nullopt;
    busy_[*slot] = true;
    return slot;
  }

  void release(std::size_t slot) {
    {
      std::lock_guard lock(mu_);
      busy_[slot] = false;
    }
    cv_.notify_one();
  }

  ProverBackend& backend_;
  ServiceConfig cfg_;
  std::mutex mu_;
  std::condition_variable_any cv_;
  std::vector<bool> busy_;
  std::atomic<std::size_t> calls_{0};
  std::atomic<std::size_t> restarts_{0};
  Watchdog watchdog_;
};

// ---------------------------------------------------------------------------
// Sledgehammer

/// Document for a hammer run on hole `h`: the sketch with the hammer command
/// in place of that hole's sorry.
inline std::string hammer_document(const syntax::TheoremDecl& thm, const sketch::ProofSketch& s, sketch::HoleId h,
                                   double timeout, const WrapperConfig& w = {}) {
  const std::string command = std::string(kHammerCommand) + " [timeout = " +
                              std::to_string(static_cast<long>(timeout)) + "] sorry";
  return wrap_theory(thm, sketch::render_with_raw_hole(s, h, command), w);
}

struct ProbeError {
  std::string detail;
};

/// Suggestions for hole `h`, tagged sledgehammer. A timeout or an invalid
/// surrounding document yields no suggestions; only a checker failure is an error.
inline Result<std::vector<model::TacticCandidate>, ProbeError> sledgehammer_probe(
    CheckService& svc, const syntax::TheoremDecl& thm, const sketch::ProofSketch& s, sketch::HoleId h,
    double timeout, const WrapperConfig& w = {}, std::stop_token stop = {}) {
  auto out = svc.hammer({hammer_document(thm, s, h, timeout, w), timeout}, stop);
  if (out.verdict.status == VerdictStatus::CheckerError) return unexpected(ProbeError{out.verdict.message});
  std::vector<model::TacticCandidate> cands;
  if (out.verdict.status != VerdictStatus::Valid) return cands;
  for (auto& text : out.suggestions)
    if (syntax::parse_justification(text)) cands.push_back({std::move(text), model::TacticSource::Sledgehammer});
  return cands;
}

}  // namespace hybridprover::checker
