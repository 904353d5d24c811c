#pragma once

// Corpus preparation: comment and whitespace purification, split by proof
// style, step-count filtering and structured record emission.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hybridprover/filter.hpp"
#include "hybridprover/result.hpp"
#include "hybridprover/syntax.hpp"
#include "json.hpp"

namespace hybridprover::dataprep {

struct CorpusRecord {
  std::string theorem;
  std::string proof;
  std::string source_path;
  syntax::ProofStyle style = syntax::ProofStyle::Isar;
  std::size_t steps = 0;

  friend bool operator==(const CorpusRecord&, const CorpusRecord&) = default;
};

struct PrepConfig {
  std::size_t apply_min = 1;
  std::size_t apply_max = 5;
  std::size_t isar_min = 5;
  std::size_t isar_max = 50;
  std::vector<std::pair<std::string, std::string>> symbol_rewrites = {{"\\<open>", "\xE2\x80\xB9"},
                                                                      {"\\<close>", "\xE2\x80\xBA"}};
  bool emit_labels = false;

  bool valid() const { return apply_min <= apply_max && isar_min <= isar_max; }
};

enum class PrepErrorKind { UnterminatedComment, IOFailure, BadInput };

inline std::string_view to_string(PrepErrorKind k) {
  switch (k) {
    case PrepErrorKind::UnterminatedComment: return "UnterminatedComment";
    case PrepErrorKind::IOFailure: return "IOFailure";
    case PrepErrorKind::BadInput: return "BadInput";
  }
  return "?";
}

struct PrepError {
  PrepErrorKind kind;
  std::string detail;
};

// ---------------------------------------------------------------------------
// purify

namespace detail {

inline void replace_all(std::string& s, std::string_view from, std::string_view to) {
  if (from.empty()) return;
  for (std::size_t i = s.find(from); i != std::string::npos; i = s.find(from, i + to.size()))
    s.replace(i, from.size(), to);
}

// Length of the string or cartouche literal starting at i, 0 if none. An
// unterminated literal runs to the end of the text.
inline std::size_t literal_len(std::string_view s, std::size_t i) {
  std::size_t end = syntax::detail::npos;
  if (syntax::detail::is_string_quote(s[i]))
    end = syntax::detail::skip_string(s, i);
  else if (syntax::detail::cartouche_open_len(s, i))
    end = syntax::detail::skip_cartouche(s, i);
  else
    return 0;
  return end == syntax::detail::npos ? s.size() - i : end - i;
}

}  // namespace detail

/// Removes (* ... *) comments (nested, never inside literals), collapses runs
/// of blanks and tabs, trims every line, drops blank lines, then applies the
/// symbol rewrites in order. Idempotent for the default rewrite table.
inline Result<std::string, PrepError> purify(std::string_view text, const PrepConfig& cfg = {}) {
  std::string out;
  bool line_start = true;
  bool pending_space = false;
  auto emit = [&](std::string_view piece) {
    if (pending_space && !line_start) out += ' ';
    pending_space = false;
    line_start = false;
    out += piece;
  };
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (syntax::detail::at(text, i, "(*")) {
      const auto end = syntax::detail::skip_comment(text, i);
      if (end == syntax::detail::npos)
        return unexpected(PrepError{PrepErrorKind::UnterminatedComment, "comment opened at byte " + std::to_string(i)});
      pending_space = true;  // keeps "(" and "*)" around a comment from fusing
      i = end;
    } else if (c == ' ' || c == '\t' || c == '\r') {
      pending_space = true;
      ++i;
    } else if (c == '\n') {
      if (!line_start) out += '\n';
      line_start = true;
      pending_space = false;
      ++i;
    } else if (auto n = detail::literal_len(text, i)) {
      emit(text.substr(i, n));
      i += n;
    } else {
      emit(text.substr(i, 1));
      ++i;
    }
  }
  while (!out.empty() && out.back() == '\n') out.pop_back();
  for (const auto& [from, to] : cfg.symbol_rewrites) detail::replace_all(out, from, to);
  return out;
}

// ---------------------------------------------------------------------------
// Style split and step filter

struct Reject {
  CorpusRecord record;
  std::string reason;
};

struct StyleSplit {
  std::vector<CorpusRecord> isar;
  std::vector<CorpusRecord> apply;
  std::vector<Reject> rejects;
};

/// Classifies and counts each record; unparseable proofs go to rejects.
inline StyleSplit split_by_style(std::vector<CorpusRecord> records,
                                 const syntax::ParserConfig& parser = syntax::default_parser_config()) {
  StyleSplit out;
  for (auto& r : records) {
    auto p = syntax::parse_proof(r.proof, parser);
    if (!p) {
      out.rejects.push_back({std::move(r), std::string(syntax::to_string(p.error().kind)) + ": " + p.error().message});
      continue;
    }
    r.style = syntax::classify_style(*p);
    r.steps = syntax::count_steps(*p);
    (r.style == syntax::ProofStyle::Isar ? out.isar : out.apply).push_back(std::move(r));
  }
  return out;
}

inline bool within_step_bounds(const CorpusRecord& r, const PrepConfig& cfg) {
  if (r.style == syntax::ProofStyle::ApplyStyle) return r.steps >= cfg.apply_min && r.steps <= cfg.apply_max;
  return r.steps >= cfg.isar_min && r.steps <= cfg.isar_max;
}

/// Keeps records of `style` whose step count lies in the inclusive bounds.
inline std::vector<CorpusRecord> filter_by_steps(std::vector<CorpusRecord> records, syntax::ProofStyle style,
                                                 const PrepConfig& cfg) {
  std::vector<CorpusRecord> out;
  for (auto& r : records)
    if (r.style == style && within_step_bounds(r, cfg)) out.push_back(std::move(r));
  return out;
}

// ---------------------------------------------------------------------------
// I/O

inline nlohmann::ordered_json record_json(const CorpusRecord& r, const PrepConfig& cfg) {
  nlohmann::ordered_json j;
  j["theorem"] = r.theorem;
  j[std::string(filter::kEnvelopeField)] = r.proof;
  if (cfg.emit_labels) j["label"] = r.source_path;
  return j;
}

/// Writes one object per line, ordered by source path then input order.
inline Result<std::size_t, PrepError> emit_records(std::vector<CorpusRecord> records,
                                                   const std::filesystem::path& path, const PrepConfig& cfg) {
  std::stable_sort(records.begin(), records.end(),
                   [](const CorpusRecord& a, const CorpusRecord& b) { return a.source_path < b.source_path; });
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) return unexpected(PrepError{PrepErrorKind::IOFailure, "cannot write " + path.string()});
  for (const auto& r : records) out << record_json(r, cfg).dump() << '\n';
  out.flush();
  if (!out) return unexpected(PrepError{PrepErrorKind::IOFailure, "write failed: " + path.string()});
  return records.size();
}

inline Result<std::size_t, PrepError> emit_rejects(const std::vector<Reject>& rejects,
                                                   const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) return unexpected(PrepError{PrepErrorKind::IOFailure, "cannot write " + path.string()});
  for (const auto& r : rejects) {
    nlohmann::ordered_json j;
    j["theorem"] = r.record.theorem;
    j["proof"] = r.record.proof;
    j["source_path"] = r.record.source_path;
    j["reason"] = r.reason;
    out << j.dump() << '\n';
  }
  if (!out) return unexpected(PrepError{PrepErrorKind::IOFailure, "write failed: " + path.string()});
  return rejects.size();
}

/// Reads {"theorem", "proof", "source_path"} lines; blank lines are skipped.
inline Result<std::vector<CorpusRecord>, PrepError> read_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return unexpected(PrepError{PrepErrorKind::IOFailure, "cannot read " + path.string()});
  std::vector<CorpusRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("theorem") || !j.contains("proof") ||
        !j["theorem"].is_string() || !j["proof"].is_string())
      return unexpected(PrepError{PrepErrorKind::BadInput, path.string() + ":" + std::to_string(lineno)});
    out.push_back({j["theorem"], j["proof"], j.value("source_path", path.filename().string())});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Deterministic train/valid/test assignment

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

/// Parses "95,1,4"-style percentages; they must sum to 100.
inline std::optional<std::vector<unsigned>> parse_split(std::string_view spec) {
  std::vector<unsigned> parts;
  std::size_t i = 0;
  while (i <= spec.size()) {
    const auto comma = std::min(spec.find(',', i), spec.size());
    const auto piece = spec.substr(i, comma - i);
    if (piece.empty() || piece.find_first_not_of("0123456789") != std::string_view::npos || piece.size() > 3)
      return std::nullopt;
    parts.push_back(static_cast<unsigned>(std::stoul(std::string(piece))));
    i = comma + 1;
  }
  unsigned total = 0;
  for (auto p : parts) total += p;
  if (parts.empty() || total != 100) return std::nullopt;
  return parts;
}

/// Bucket index for a record under the given percentages; depends only on
/// the record's source path and theorem text.
inline std::size_t split_bucket(const CorpusRecord& r, const std::vector<unsigned>& percents) {
  const unsigned slot = static_cast<unsigned>(fnv1a(r.source_path + '\n' + r.theorem) % 100);
  unsigned acc = 0;
  for (std::size_t b = 0; b < percents.size(); ++b) {
    acc += percents[b];
    if (slot < acc) return b;
  }
  return percents.size() - 1;
}

// ---------------------------------------------------------------------------
// Whole pipeline

struct PrepSummary {
  std::size_t input = 0;
  std::size_t isar_kept = 0;
  std::size_t apply_kept = 0;
  std::size_t dropped_by_steps = 0;
  std::size_t rejects = 0;
  std::vector<std::filesystem::path> outputs;
};

/// Purifies, splits and filters every record of the *.jsonl files in `input`
/// (a file or a directory) and writes isar/apply/rejects files into `out_dir`.
/// With `split`, each style is further divided into train/valid/test files.
inline Result<PrepSummary, PrepError> run_prep(const std::filesystem::path& input,
                                               const std::filesystem::path& out_dir, const PrepConfig& cfg,
                                               const std::optional<std::vector<unsigned>>& split = std::nullopt) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  std::error_code ec;
  if (fs::is_directory(input, ec)) {
    for (const auto& e : fs::directory_iterator(input, ec))
      if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
    std::sort(files.begin(), files.end());
  } else if (fs::is_regular_file(input, ec)) {
    files.push_back(input);
  } else {
    return unexpected(PrepError{PrepErrorKind::IOFailure, "no such input: " + input.string()});
  }

  PrepSummary summary;
  std::vector<CorpusRecord> purified;
  std::vector<Reject> rejects;
  for (const auto& f : files) {
    auto recs = read_records(f);
    if (!recs) return unexpected(recs.error());
    for (auto& r : *recs) {
      ++summary.input;
      auto thm = purify(r.theorem, cfg);
      auto proof = purify(r.proof, cfg);
      if (!thm || !proof) {
        rejects.push_back({r, std::string(to_string(PrepErrorKind::UnterminatedComment))});
        continue;
      }
      if (thm->empty() || proof->empty()) {
        rejects.push_back({r, "empty after purification"});
        continue;
      }
      purified.push_back({*thm, *proof, r.source_path});
    }
  }

  auto parts = split_by_style(std::move(purified));
  for (auto& r : parts.rejects) rejects.push_back(std::move(r));
  const std::size_t classified = parts.isar.size() + parts.apply.size();
  auto isar = filter_by_steps(std::move(parts.isar), syntax::ProofStyle::Isar, cfg);
  auto apply = filter_by_steps(std::move(parts.apply), syntax::ProofStyle::ApplyStyle, cfg);
  summary.isar_kept = isar.size();
  summary.apply_kept = apply.size();
  summary.dropped_by_steps = classified - isar.size() - apply.size();
  summary.rejects = rejects.size();

  fs::create_directories(out_dir, ec);
  if (ec) return unexpected(PrepError{PrepErrorKind::IOFailure, "cannot create " + out_dir.string()});

  auto write = [&](const std::vector<CorpusRecord>& recs, const std::string& stem) -> Result<bool, PrepError> {
    if (!split) {
      auto p = out_dir / (stem + ".jsonl");
      auto w = emit_records(recs, p, cfg);
      if (!w) return unexpected(w.error());
      summary.outputs.push_back(p);
      return true;
    }
    static const char* kNames[] = {"train", "valid", "test"};
    std::vector<std::vector<CorpusRecord>> buckets(split->size());
    for (const auto& r : recs) buckets[split_bucket(r, *split)].push_back(r);
    for (std::size_t b = 0; b < buckets.size(); ++b) {
      const std::string name = b < 3 ? kNames[b] : "part" + std::to_string(b);
      auto p = out_dir / (stem + "." + name + ".jsonl");
      auto w = emit_records(buckets[b], p, cfg);
      if (!w) return unexpected(w.error());
      summary.outputs.push_back(p);
    }
    return true;
  };
  if (auto w = write(isar, "isar"); !w) return unexpected(w.error());
  if (auto w = write(apply, "apply"); !w) return unexpected(w.error());
  auto rp = out_dir / "rejects.jsonl";
  if (auto w = emit_rejects(rejects, rp); !w) return unexpected(w.error());
  summary.outputs.push_back(rp);
  return summary;
}

}  // namespace hybridprover::dataprep
