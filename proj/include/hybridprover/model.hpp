#pragma once

// Prompt construction and generation backends for the whole-proof and
// proof-step roles, plus the fixed heuristic tactic battery.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <deque>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

#include "httplib.h"
#include "hybridprover/filter.hpp"
#include "hybridprover/result.hpp"
#include "hybridprover/sketch.hpp"
#include "hybridprover/syntax.hpp"
#include "json.hpp"

namespace hybridprover::model {

using filter::ModelResponse;

// ---------------------------------------------------------------------------
// Prompts

struct FewShotExample {
  std::string theorem;
  std::string proof;
};

inline constexpr std::string_view kWholeProofInstruction =
    "Generate proof code in Isabelle/HOL based on the input Isabelle/HOL theorem. Make sure that the "
    "generated proof can be verified by Isabelle/HOL. Do not generate extra natural language descriptions.";

inline constexpr std::string_view kInputMarker = "**Input theorem:**";

inline constexpr std::string_view kStepInstruction =
    "Generate one Isabelle/HOL proof step that closes the goal below in its local context. Answer only "
    "with {\"Isabelle_proof\": \"<proof step>\"}, for example {\"Isabelle_proof\": \"by simp\"}. Do not "
    "generate extra natural language descriptions.";

struct PromptTemplate {
  std::string instruction = std::string(kWholeProofInstruction);
  std::vector<FewShotExample> few_shot;  // off by default
};

/// The three classic examples: a one-step apply proof, an apply induction and
/// an Isar induction.
inline std::vector<FewShotExample> default_few_shot() {
  return {
      {R"x(theorem app_Nil: "[] @ xs = (xs :: 'a list)")x", "by simp"},
      {R"x(theorem list_reverse: "rev (rev xs) = xs")x", "apply (induct xs) apply simp apply simp done"},
      {R"x(theorem append_assoc: "(xs @ ys) @ zs = xs @ (ys @ zs)")x",
       "proof (induct xs) case Nil then show ?case by simp next case (Cons x xs) then show ?case by simp qed"},
  };
}

inline std::string envelope(std::string_view proof) {
  nlohmann::ordered_json j;
  j[std::string(filter::kEnvelopeField)] = proof;
  return j.dump();
}

inline std::string build_whole_proof_prompt(const syntax::TheoremDecl& thm, const PromptTemplate& t = {}) {
  std::string out = t.instruction + "\n";
  for (std::size_t i = 0; i < t.few_shot.size(); ++i) {
    const auto n = std::to_string(i + 1);
    out += "Input theorem " + n + ":\n" + t.few_shot[i].theorem + "\n";
    out += "Isabelle proof " + n + ":\n" + envelope(t.few_shot[i].proof) + "\n\n";
  }
  out += std::string(kInputMarker) + "\n";
  out += syntax::render_theorem(thm);
  return out;
}

/// Instruction, then the case, the local context in source order and the goal.
inline std::string build_tactic_prompt(const sketch::Subgoal& g) {
  std::string out = std::string(kStepInstruction) + "\n";
  if (g.case_name) out += "case " + *g.case_name + "\n";
  for (const auto& line : g.context_lines) out += line + "\n";
  out += "goal: " + g.goal_prop;
  return out;
}

// ---------------------------------------------------------------------------
// Sampling and tactic candidates

struct SamplingConfig {
  double temperature = 0.7;
  std::size_t n = 128;
  std::size_t max_tokens = 2048;
  std::vector<std::string> stop_sequences;
  std::optional<std::uint64_t> seed;
};

inline SamplingConfig default_step_sampling() {
  SamplingConfig c;
  c.n = 32;
  c.max_tokens = 256;
  return c;
}

enum class TacticSource { LlmStep, Sledgehammer, Heuristic };

inline std::string_view to_string(TacticSource s) {
  switch (s) {
    case TacticSource::LlmStep: return "llm_step";
    case TacticSource::Sledgehammer: return "sledgehammer";
    case TacticSource::Heuristic: return "heuristic";
  }
  return "?";
}

struct TacticCandidate {
  std::string text;
  TacticSource source = TacticSource::Heuristic;

  friend bool operator==(const TacticCandidate&, const TacticCandidate&) = default;
};

inline const std::vector<TacticCandidate>& heuristic_tactics() {
  static const std::vector<TacticCandidate> battery = [] {
    std::vector<TacticCandidate> v;
    for (const char* t : {"by auto", "by simp", "by blast", "by fastforce", "by force", "by eval", "by presburger",
                          "by sos", "by arith", "by linarith", "by (auto simp: field_simps)"})
      v.push_back({t, TacticSource::Heuristic});
    return v;
  }();
  return battery;
}

// ---------------------------------------------------------------------------
// Backends

enum class BackendErrorKind { BackendUnreachable, BackendRejected, ScriptExhausted, Timeout, BadConfig };

inline std::string_view to_string(BackendErrorKind k) {
  switch (k) {
    case BackendErrorKind::BackendUnreachable: return "BackendUnreachable";
    case BackendErrorKind::BackendRejected: return "BackendRejected";
    case BackendErrorKind::ScriptExhausted: return "ScriptExhausted";
    case BackendErrorKind::Timeout: return "Timeout";
    case BackendErrorKind::BadConfig: return "BadConfig";
  }
  return "?";
}

struct BackendError {
  BackendErrorKind kind;
  std::string detail;
  int status = 0;  // BackendRejected only

  std::string describe() const {
    std::string out(to_string(kind));
    if (status) out += " (HTTP " + std::to_string(status) + ")";
    if (!detail.empty()) out += ": " + detail;
    return out;
  }
};

using Responses = Result<std::vector<ModelResponse>, BackendError>;

class Backend {
 public:
  virtual ~Backend() = default;
  /// Between 1 and c.n responses, sample_index dense from 0.
  virtual Responses generate(const std::string& prompt, const SamplingConfig& c) = 0;
};

/// Replays recorded response batches, one batch per call, in call order.
class ScriptedBackend : public Backend {
 public:
  ScriptedBackend() = default;
  explicit ScriptedBackend(std::vector<std::vector<std::string>> batches) {
    for (auto& b : batches) batches_.push_back(std::move(b));
  }

  void push(std::vector<std::string> batch) {
    std::lock_guard lock(mu_);
    batches_.push_back(std::move(batch));
  }

  std::size_t remaining() const {
    std::lock_guard lock(mu_);
    return batches_.size();
  }

  std::vector<std::string> prompts() const {
    std::lock_guard lock(mu_);
    return prompts_;
  }

  Responses generate(const std::string& prompt, const SamplingConfig& c) override {
    std::lock_guard lock(mu_);
    prompts_.push_back(prompt);
    if (batches_.empty()) return unexpected(BackendError{BackendErrorKind::ScriptExhausted, "no batch left"});
    auto batch = std::move(batches_.front());
    batches_.pop_front();
    std::vector<ModelResponse> out;
    for (std::size_t i = 0; i < batch.size() && i < c.n; ++i) out.push_back({std::move(batch[i]), i});
    return out;
  }

  /// One batch per line: either a JSON array of response strings or an
  /// object {"responses": [...]}.
  static Result<ScriptedBackend, BackendError> from_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) return unexpected(BackendError{BackendErrorKind::BadConfig, "cannot open script " + path});
    ScriptedBackend b;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_object() && j.contains("responses")) j = j["responses"];
      if (!j.is_array())
        return unexpected(BackendError{BackendErrorKind::BadConfig, path + ":" + std::to_string(lineno) + ": not a batch"});
      std::vector<std::string> batch;
      for (const auto& r : j) {
        if (!r.is_string())
          return unexpected(
              BackendError{BackendErrorKind::BadConfig, path + ":" + std::to_string(lineno) + ": non-string response"});
        batch.push_back(r.get<std::string>());
      }
      b.batches_.push_back(std::move(batch));
    }
    return b;
  }

  ScriptedBackend(ScriptedBackend&& o) noexcept : batches_(std::move(o.batches_)), prompts_(std::move(o.prompts_)) {}

 private:
  mutable std::mutex mu_;
  std::deque<std::vector<std::string>> batches_;
  std::vector<std::string> prompts_;
};

enum class BackendKind { HttpChat, Scripted };

struct BackendConfig {
  BackendKind kind = BackendKind::Scripted;
  std::string endpoint;  // e.g. http://localhost:8000/v1/chat/completions
  std::string model_name;
  std::string api_key_env = "OPENAI_API_KEY";
  double request_timeout = 600;  // seconds
  std::size_t max_in_flight = 8;
  std::string script_path;
};

/// Scheme+authority and path of an endpoint URL.
struct Endpoint {
  std::string base;
  std::string path;
};

inline std::optional<Endpoint> split_endpoint(std::string_view url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos) return std::nullopt;
  const auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") return std::nullopt;
  const auto path_start = url.find('/', scheme_end + 3);
  Endpoint e;
  e.base = std::string(url.substr(0, path_start));
  e.path = path_start == std::string_view::npos ? "/v1/chat/completions" : std::string(url.substr(path_start));
  if (e.base.size() <= scheme_end + 3) return std::nullopt;
  return e;
}

/// Chat-completions client. Endpoints that return fewer choices than asked
/// for are called again until n responses are collected.
class HttpChatBackend : public Backend {
 public:
  explicit HttpChatBackend(BackendConfig cfg)
      : cfg_(std::move(cfg)), slots_(static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, cfg_.max_in_flight))) {}

  static Result<std::unique_ptr<HttpChatBackend>, BackendError> create(BackendConfig cfg) {
    if (cfg.model_name.empty()) return unexpected(BackendError{BackendErrorKind::BadConfig, "model name required"});
    if (!split_endpoint(cfg.endpoint))
      return unexpected(BackendError{BackendErrorKind::BadConfig, "bad endpoint URL '" + cfg.endpoint + "'"});
    return std::make_unique<HttpChatBackend>(std::move(cfg));
  }

  nlohmann::json request_body(const std::string& prompt, const SamplingConfig& c, std::size_t n) const {
    nlohmann::json body = {
        {"model", cfg_.model_name},
        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
        {"temperature", c.temperature},
        {"n", n},
        {"max_tokens", c.max_tokens},
    };
    if (!c.stop_sequences.empty()) body["stop"] = c.stop_sequences;
    if (c.seed) body["seed"] = *c.seed;
    return body;
  }

  Responses generate(const std::string& prompt, const SamplingConfig& c) override {
    std::vector<ModelResponse> out;
    std::size_t ask = c.n;
    while (out.size() < c.n) {
      auto batch = request(prompt, c, ask);
      if (!batch) {
        if (out.empty()) return unexpected(batch.error());
        break;
      }
      if (batch->empty()) break;
      const std::size_t k = batch->size();  // what the endpoint really returns per call
      for (auto& text : *batch) {
        if (out.size() == c.n) break;
        out.push_back({std::move(text), out.size()});
      }
      ask = std::min(k, c.n - out.size());
    }
    if (out.empty()) return unexpected(BackendError{BackendErrorKind::BackendRejected, "no choices in response"});
    return out;
  }

 private:
  Result<std::vector<std::string>, BackendError> request(const std::string& prompt, const SamplingConfig& c,
                                                         std::size_t n) {
    const auto ep = *split_endpoint(cfg_.endpoint);
    slots_.acquire();
    struct Release {
      std::counting_semaphore<>& s;
      ~Release() { s.release(); }
    } release{slots_};

    httplib::Client client(ep.base);
    const auto sec = static_cast<time_t>(cfg_.request_timeout);
    const auto usec = static_cast<time_t>((cfg_.request_timeout - static_cast<double>(sec)) * 1e6);
    client.set_connection_timeout(sec, usec);
    client.set_read_timeout(sec, usec);
    client.set_write_timeout(sec, usec);
    httplib::Headers headers;
    if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key)
      headers.emplace("Authorization", std::string("Bearer ") + key);

    auto res = client.Post(ep.path, headers, request_body(prompt, c, n).dump(), "application/json");
    if (!res) {
      const auto err = res.error();
      const auto kind = (err == httplib::Error::Read || err == httplib::Error::Write ||
                         err == httplib::Error::ConnectionTimeout)
                            ? BackendErrorKind::Timeout
                            : BackendErrorKind::BackendUnreachable;
      return unexpected(BackendError{kind, httplib::to_string(err)});
    }
    if (res->status < 200 || res->status >= 300)
      return unexpected(BackendError{BackendErrorKind::BackendRejected, res->body, res->status});
    auto j = nlohmann::json::parse(res->body, nullptr, false);
    if (j.is_discarded() || !j.contains("choices") || !j["choices"].is_array())
      return unexpected(BackendError{BackendErrorKind::BackendRejected, "malformed response body", res->status});
    std::vector<std::string> texts;
    for (const auto& ch : j["choices"]) {
      const auto* content = ch.contains("message") ? &ch["message"] : &ch;
      if (content->contains("content") && (*content)["content"].is_string())
        texts.push_back((*content)["content"].get<std::string>());
      else if (ch.contains("text") && ch["text"].is_string())
        texts.push_back(ch["text"].get<std::string>());
    }
    return texts;
  }

  BackendConfig cfg_;
  std::counting_semaphore<> slots_;
};

inline Result<std::unique_ptr<Backend>, BackendError> make_backend(const BackendConfig& cfg) {
  if (cfg.kind == BackendKind::HttpChat) {
    auto b = HttpChatBackend::create(cfg);
    if (!b) return unexpected(b.error());
    return std::unique_ptr<Backend>(std::move(*b));
  }
  if (cfg.script_path.empty()) return unexpected(BackendError{BackendErrorKind::BadConfig, "scripted backend needs a script"});
  auto s = ScriptedBackend::from_jsonl(cfg.script_path);
  if (!s) return unexpected(s.error());
  return std::unique_ptr<Backend>(std::make_unique<ScriptedBackend>(std::move(*s)));
}

}  // namespace hybridprover::model
