#pragma once

// Mechanical proof sketches: every terminal justification of a candidate proof
// becomes an indexed `sorry` hole, holes can be listed as subgoals, and filled
// back in one at a time or all at once.

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hybridprover/result.hpp"
#include "hybridprover/syntax.hpp"

namespace hybridprover::sketch {

using HoleId = std::size_t;

/// Statement indices from the root block down to the statement that owns the
/// hole. Empty for a sketch whose whole proof collapsed into one hole.
using HolePath = std::vector<std::size_t>;

struct Hole {
  HoleId id = 0;
  HolePath path;
  syntax::Justification original_justification;
};

struct ProofSketch {
  syntax::ProofScript skeleton;
  std::vector<Hole> holes;

  const Hole* find(HoleId id) const {
    for (const auto& h : holes)
      if (h.id == id) return &h;
    return nullptr;
  }
};

struct Subgoal {
  HoleId hole_id = 0;
  std::optional<std::string> case_name;
  std::string goal_prop;
  std::vector<std::string> context_lines;
};

using HoleAssignment = std::map<HoleId, std::string>;

struct SketchConfig {
  /// Replace a nested proof block by a single hole instead of recursing into it.
  bool collapse_nested = false;
  syntax::ParserConfig parser = syntax::default_parser_config();
};

inline const SketchConfig& default_sketch_config() {
  static const SketchConfig cfg;
  return cfg;
}

enum class SketchErrorKind { MissingHole, UnknownHole, UnparsableTactic };

inline std::string_view to_string(SketchErrorKind k) {
  switch (k) {
    case SketchErrorKind::MissingHole: return "MissingHole";
    case SketchErrorKind::UnknownHole: return "UnknownHole";
    case SketchErrorKind::UnparsableTactic: return "UnparsableTactic";
  }
  return "?";
}

struct SketchError {
  SketchErrorKind kind;
  HoleId hole = 0;
  std::string detail;
};

namespace detail {

using syntax::IsarBlock;
using syntax::Justification;
using syntax::JustificationKind;

inline Justification chain_as_justification(const syntax::ApplyChain& c) {
  Justification j;
  if (c.commands.empty() && c.terminator == syntax::Terminator::By) {
    j.kind = JustificationKind::ByTactic;
    j.text = c.tactic;
  } else if (c.commands.empty() && c.terminator == syntax::Terminator::Sorry) {
    j.kind = JustificationKind::Sorry;
  } else if (c.commands.empty() && c.terminator == syntax::Terminator::Oops) {
    j.kind = JustificationKind::Oops;
  } else {
    j.kind = JustificationKind::ApplySeq;
    j.chain = c;
  }
  return j;
}

inline void sketch_block(IsarBlock& block, HolePath& path, std::vector<Hole>& holes, const SketchConfig& cfg) {
  for (std::size_t i = 0; i < block.statements.size(); ++i) {
    auto& st = block.statements[i];
    if (!st.justification) continue;
    path.push_back(i);
    auto& j = *st.justification;
    if (j.kind == JustificationKind::NestedProof && !cfg.collapse_nested) {
      sketch_block(**j.block, path, holes, cfg);
    } else {
      holes.push_back(Hole{holes.size(), path, j});
      j = Justification::sorry();
    }
    path.pop_back();
  }
}

/// Statement addressed by `path`; nullptr if the path does not resolve.
inline syntax::IsarStatement* resolve(syntax::ProofScript& script, const HolePath& path) {
  if (path.empty() || !script.is_isar_block()) return nullptr;
  IsarBlock* block = &script.block();
  for (std::size_t k = 0; k < path.size(); ++k) {
    if (path[k] >= block->statements.size()) return nullptr;
    auto& st = block->statements[path[k]];
    if (k + 1 == path.size()) return &st;
    if (!st.justification || st.justification->kind != JustificationKind::NestedProof) return nullptr;
    block = &**st.justification->block;
  }
  return nullptr;
}

inline std::string case_name_of(const std::string& case_args) {
  std::string s = case_args;
  if (s.size() >= 2 && s.front() == '(' && s.back() == ')') s = s.substr(1, s.size() - 2);
  return s;
}

inline bool is_context(const syntax::IsarStatement& st) {
  using K = syntax::StatementKind;
  // A bare "then" or "moreover" says nothing on its own.
  if (st.kind == K::Chain) return !st.prop.empty();
  return st.kind == K::Fix || st.kind == K::Assume || st.kind == K::Obtain || st.kind == K::Let;
}

}  // namespace detail

/// Replaces every terminal justification with `sorry`, recording one hole per
/// replacement in source order. Apply-style proofs collapse to a single hole.
inline ProofSketch build_sketch(const syntax::ProofScript& p, const SketchConfig& cfg = default_sketch_config()) {
  ProofSketch s;
  s.skeleton = p;
  if (!p.is_isar_block()) {
    s.holes.push_back(Hole{0, {}, detail::chain_as_justification(p.chain())});
    syntax::ApplyChain degenerate;
    degenerate.terminator = syntax::Terminator::Sorry;
    s.skeleton.body = std::move(degenerate);
  } else {
    HolePath path;
    detail::sketch_block(s.skeleton.block(), path, s.holes, cfg);
  }
  s.skeleton.style = syntax::classify_style(s.skeleton);
  return s;
}

/// The justification each hole replaced, rendered as text.
inline HoleAssignment original_tactics(const ProofSketch& s) {
  HoleAssignment a;
  for (const auto& h : s.holes) a[h.id] = syntax::render(h.original_justification);
  return a;
}

/// One subgoal per hole, in hole order. The goal of a whole-proof hole is the
/// theorem statement when one is supplied, "?thesis" otherwise.
inline std::vector<Subgoal> parse_subgoals(const ProofSketch& s, const syntax::TheoremDecl* thm = nullptr) {
  std::vector<Subgoal> out;
  for (const auto& hole : s.holes) {
    Subgoal g;
    g.hole_id = hole.id;
    if (hole.path.empty() || !s.skeleton.is_isar_block()) {
      g.goal_prop = thm ? syntax::unquote(thm->statement) : "?thesis";
      out.push_back(std::move(g));
      continue;
    }
    // Walk down, remembering each enclosing block and the index taken in it.
    std::vector<std::pair<const syntax::IsarBlock*, std::size_t>> trail;
    const syntax::IsarBlock* block = &s.skeleton.block();
    for (std::size_t k = 0; k < hole.path.size(); ++k) {
      trail.emplace_back(block, hole.path[k]);
      const auto& st = block->statements[hole.path[k]];
      if (k + 1 < hole.path.size()) block = &**st.justification->block;
    }
    const auto& [inner, index] = trail.back();
    const auto& target = inner->statements[index];
    g.goal_prop = target.prop;
    for (std::size_t i = index; i-- > 0;) {
      const auto& st = inner->statements[i];
      if (st.kind == syntax::StatementKind::Next) break;
      if (detail::is_context(st)) g.context_lines.push_back(syntax::detail::Renderer::head(st));
    }
    std::reverse(g.context_lines.begin(), g.context_lines.end());
    for (auto it = trail.rbegin(); it != trail.rend() && !g.case_name; ++it) {
      const auto& [b, idx] = *it;
      for (std::size_t i = idx + 1; i-- > 0;) {
        const auto& st = b->statements[i];
        if (i != idx && st.kind == syntax::StatementKind::Next) break;
        if (st.kind == syntax::StatementKind::Case) {
          g.case_name = detail::case_name_of(st.prop);
          break;
        }
      }
    }
    out.push_back(std::move(g));
  }
  return out;
}

/// Fills one hole and returns the reduced sketch; the remaining holes keep
/// their ids and paths.
inline Result<ProofSketch, SketchError> fill_hole(const ProofSketch& s, HoleId id, std::string_view tactic,
                                                  const SketchConfig& cfg = default_sketch_config()) {
  const Hole* hole = s.find(id);
  if (!hole) return unexpected(SketchError{SketchErrorKind::MissingHole, id, "no such hole"});
  ProofSketch out = s;
  std::erase_if(out.holes, [&](const Hole& h) { return h.id == id; });
  if (hole->path.empty()) {
    auto p = syntax::parse_proof(tactic, cfg.parser);
    if (!p) return unexpected(SketchError{SketchErrorKind::UnparsableTactic, id, p.error().describe()});
    out.skeleton = std::move(*p);
    return out;
  }
  auto j = syntax::parse_justification(tactic, cfg.parser);
  if (!j) return unexpected(SketchError{SketchErrorKind::UnparsableTactic, id, j.error().describe()});
  auto* st = detail::resolve(out.skeleton, hole->path);
  if (!st) return unexpected(SketchError{SketchErrorKind::MissingHole, id, "hole path does not resolve"});
  st->justification = std::move(*j);
  out.skeleton.style = syntax::classify_style(out.skeleton);
  return out;
}

/// Fills hole `id` with `tactic`; every other hole stays `sorry`.
inline Result<syntax::ProofScript, SketchError> partial_fill(const ProofSketch& s, HoleId id,
                                                             std::string_view tactic,
                                                             const SketchConfig& cfg = default_sketch_config()) {
  auto filled = fill_hole(s, id, tactic, cfg);
  if (!filled) return unexpected(filled.error());
  return std::move(filled->skeleton);
}

/// Fills every hole. The assignment must cover exactly the sketch's holes.
inline Result<syntax::ProofScript, SketchError> substitute(const ProofSketch& s, const HoleAssignment& a,
                                                           const SketchConfig& cfg = default_sketch_config()) {
  for (const auto& h : s.holes)
    if (!a.count(h.id)) return unexpected(SketchError{SketchErrorKind::MissingHole, h.id, "hole not assigned"});
  for (const auto& [id, _] : a)
    if (!s.find(id)) return unexpected(SketchError{SketchErrorKind::UnknownHole, id, "not a hole of this sketch"});
  ProofSketch cur = s;
  for (const auto& h : s.holes) {
    auto next = fill_hole(cur, h.id, a.at(h.id), cfg);
    if (!next) return unexpected(next.error());
    cur = std::move(*next);
  }
  return std::move(cur.skeleton);
}

/// Renders the skeleton with hole `id` replaced by raw text that need not be a
/// parseable justification (used to place diagnostic commands such as the hammer).
inline std::string render_with_raw_hole(const ProofSketch& s, HoleId id, std::string_view raw) {
  static constexpr std::string_view kMarker = "sorry_hole_marker_7f3a";
  const Hole* hole = s.find(id);
  if (!hole) return syntax::render(s.skeleton);
  if (hole->path.empty()) return std::string(raw);
  ProofSketch tmp = s;
  auto* st = detail::resolve(tmp.skeleton, hole->path);
  if (!st) return syntax::render(s.skeleton);
  st->justification = syntax::Justification::by(std::string(kMarker));
  std::string text = syntax::render(tmp.skeleton);
  const std::string needle = "by " + std::string(kMarker);
  if (auto pos = text.find(needle); pos != std::string::npos) text.replace(pos, needle.size(), raw);
  return text;
}

}  // namespace hybridprover::sketch
