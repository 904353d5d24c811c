#pragma once

// Proof filter: pulls the proof out of the model's structured response and
// rejects candidates that cannot be proofs before any prover time is spent.

#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "hybridprover/result.hpp"
#include "hybridprover/syntax.hpp"
#include "json.hpp"

namespace hybridprover::filter {

/// Field name of the response envelope: {"Isabelle_proof": "<proof>"}.
inline constexpr std::string_view kEnvelopeField = "Isabelle_proof";

struct ModelResponse {
  std::string raw;
  std::size_t sample_index = 0;
};

enum class EnvelopeMode { Strict, Lenient };

enum class RejectReason { NotStructured, BadLeadingKeyword, ParseFailure };

inline std::string_view to_string(RejectReason r) {
  switch (r) {
    case RejectReason::NotStructured: return "NotStructured";
    case RejectReason::BadLeadingKeyword: return "BadLeadingKeyword";
    case RejectReason::ParseFailure: return "ParseFailure";
  }
  return "?";
}

struct FilterVerdict {
  bool accepted = false;
  std::string proof_text;
  std::optional<RejectReason> reason;
  std::string detail;
  std::optional<syntax::ProofScript> script;  // set when accepted
};

struct FilterConfig {
  EnvelopeMode mode = EnvelopeMode::Strict;
  std::set<std::string, std::less<>> leading_keywords = {
      "proof", "apply", "by",  "using",  "unfolding", "case", "have",
      "show",  "fix",   "assume", "obtain", "then",   "subgoal", "sorry"};
  syntax::ParserConfig parser = syntax::default_parser_config();
};

inline const FilterConfig& default_filter_config() {
  static const FilterConfig cfg;
  return cfg;
}

struct NotStructured {
  std::string detail;
};

namespace detail {

/// Parses `text` as exactly one object holding exactly one string field named
/// Isabelle_proof. Duplicate keys are rejected, not collapsed.
inline std::optional<std::string> read_envelope(std::string_view text) {
  int top_level_keys = 0;
  auto count_keys = [&](int depth, nlohmann::json::parse_event_t event, nlohmann::json&) {
    if (event == nlohmann::json::parse_event_t::key && depth == 1) ++top_level_keys;
    return true;
  };
  nlohmann::json j = nlohmann::json::parse(text.begin(), text.end(), count_keys, false);
  if (j.is_discarded() || !j.is_object() || top_level_keys != 1 || j.size() != 1) return std::nullopt;
  auto it = j.find(std::string(kEnvelopeField));
  if (it == j.end() || !it->is_string()) return std::nullopt;
  return it->get<std::string>();
}

/// End of the balanced object starting at `open` (one past '}'), honoring
/// string literals and escapes; npos if it never closes.
inline std::size_t balanced_object_end(std::string_view s, std::size_t open) {
  int depth = 0;
  bool in_string = false;
  for (std::size_t i = open; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string) {
      if (c == '\\') {
        ++i;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}') {
      if (--depth == 0) return i + 1;
    }
  }
  return std::string_view::npos;
}

}  // namespace detail

/// Extracts the proof text from a response envelope. Strict mode accepts only a
/// response that is exactly the envelope (surrounding whitespace allowed);
/// lenient mode also finds the first balanced envelope embedded in prose.
inline Result<std::string, NotStructured> extract_envelope(const ModelResponse& r,
                                                           EnvelopeMode mode = EnvelopeMode::Strict) {
  if (auto proof = detail::read_envelope(r.raw)) return *proof;
  if (mode == EnvelopeMode::Lenient) {
    const std::string_view s = r.raw;
    for (std::size_t open = s.find('{'); open != std::string_view::npos; open = s.find('{', open + 1)) {
      const std::size_t end = detail::balanced_object_end(s, open);
      if (end == std::string_view::npos) continue;
      if (auto proof = detail::read_envelope(s.substr(open, end - open))) return *proof;
    }
  }
  return unexpected(NotStructured{"no {\"Isabelle_proof\": <string>} envelope found"});
}

/// Accepts iff the first token is a proof-leading keyword and the whole text parses.
inline FilterVerdict syntactic_gate(std::string_view proof_text,
                                    const FilterConfig& cfg = default_filter_config()) {
  FilterVerdict v;
  v.proof_text = std::string(proof_text);
  auto toks = syntax::tokenize(proof_text);
  const bool leading_ok = toks && !toks->empty() && (*toks)[0].kind == syntax::TokenKind::Word &&
                          cfg.leading_keywords.count((*toks)[0].text) > 0;
  if (!leading_ok) {
    v.reason = RejectReason::BadLeadingKeyword;
    v.detail = toks && !toks->empty() ? "starts with '" + (*toks)[0].text + "'" : "no leading token";
    return v;
  }
  auto parsed = syntax::parse_proof(proof_text, cfg.parser);
  if (!parsed) {
    v.reason = RejectReason::ParseFailure;
    v.detail = parsed.error().describe();
    return v;
  }
  v.accepted = true;
  v.script = std::move(*parsed);
  return v;
}

/// Envelope extraction followed by the syntactic gate.
inline FilterVerdict filter_response(const ModelResponse& r, const FilterConfig& cfg = default_filter_config()) {
  auto proof = extract_envelope(r, cfg.mode);
  if (!proof) {
    FilterVerdict v;
    v.reason = RejectReason::NotStructured;
    v.detail = proof.error().detail;
    return v;
  }
  return syntactic_gate(*proof, cfg);
}

/// Filters a batch element-wise; output order matches input order.
inline std::vector<FilterVerdict> filter_batch(const std::vector<ModelResponse>& batch,
                                               const FilterConfig& cfg = default_filter_config()) {
  std::vector<FilterVerdict> out;
  out.reserve(batch.size());
  for (const auto& r : batch) out.push_back(filter_response(r, cfg));
  return out;
}

}  // namespace hybridprover::filter
