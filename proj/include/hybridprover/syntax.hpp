#pragma once

// Statement-granularity parser for Isabelle proof scripts.
//
// Propositions and method arguments are kept as opaque, whitespace-normalized
// text. The grammar only recognizes command keywords, balanced delimiters
// (quotes, cartouches, brackets, comments) and the block structure of Isar.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "hybridprover/result.hpp"

namespace hybridprover::syntax {

struct SourceSpan {
  std::size_t start_offset = 0;
  std::size_t end_offset = 0;
  std::size_t line = 1;
};

// ---------------------------------------------------------------------------
// Keywords

enum class Role {
  TheoremStart,  // theorem, lemma, corollary
  BlockOpen,     // proof
  BlockClose,    // qed
  Next,          // next
  Case,          // case
  Goal,          // show, have, thus, hence, obtain
  Context,       // fix, assume, let
  Chain,         // then, from, with, moreover, ...
  Prelude,       // apply, using, unfolding
  Subgoal,       // subgoal
  Terminal,      // by, done, sorry, oops
  Auxiliary,     // where: a keyword that never starts a command
};

enum class StatementKind { Case, Show, Have, Fix, Assume, Obtain, Next, Chain, Let };

struct KeywordInfo {
  Role role;
  StatementKind kind = StatementKind::Chain;
};

/// Data-driven keyword set. Extend it to teach the parser new commands.
class KeywordTable {
 public:
  KeywordTable() = default;

  static const KeywordTable& defaults() {
    static const KeywordTable table = [] {
      KeywordTable t;
      using R = Role;
      using K = StatementKind;
      for (auto kw : {"theorem", "lemma", "corollary"}) t.add(kw, {R::TheoremStart});
      t.add("proof", {R::BlockOpen});
      t.add("qed", {R::BlockClose});
      t.add("next", {R::Next, K::Next});
      t.add("case", {R::Case, K::Case});
      t.add("show", {R::Goal, K::Show});
      t.add("thus", {R::Goal, K::Show});
      t.add("have", {R::Goal, K::Have});
      t.add("hence", {R::Goal, K::Have});
      t.add("obtain", {R::Goal, K::Obtain});
      t.add("fix", {R::Context, K::Fix});
      t.add("assume", {R::Context, K::Assume});
      t.add("presume", {R::Context, K::Assume});
      t.add("let", {R::Context, K::Let});
      t.add("note", {R::Context, K::Let});
      t.add("define", {R::Context, K::Let});
      for (auto kw : {"then", "from", "with", "moreover", "ultimately", "also", "finally"})
        t.add(kw, {R::Chain, K::Chain});
      for (auto kw : {"apply", "using", "unfolding", "supply", "including"})
        t.add(kw, {R::Prelude, K::Chain});
      t.add("subgoal", {R::Subgoal});
      for (auto kw : {"by", "done", "sorry", "oops"}) t.add(kw, {R::Terminal});
      t.add("where", {R::Auxiliary});
      return t;
    }();
    return table;
  }

  void add(std::string keyword, KeywordInfo info) { entries_[std::move(keyword)] = info; }
  void remove(std::string_view keyword) {
    if (auto it = entries_.find(keyword); it != entries_.end()) entries_.erase(it);
  }

  std::optional<KeywordInfo> find(std::string_view word) const {
    auto it = entries_.find(word);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  bool contains(std::string_view word) const { return entries_.find(word) != entries_.end(); }

 private:
  std::map<std::string, KeywordInfo, std::less<>> entries_;
};

struct ParserConfig {
  KeywordTable keywords = KeywordTable::defaults();
  /// Maximum nesting of proof blocks and subgoal bodies.
  std::size_t max_depth = 64;
};

inline const ParserConfig& default_parser_config() {
  static const ParserConfig config;
  return config;
}

// ---------------------------------------------------------------------------
// Errors

enum class ParseErrorKind { EmptyInput, UnbalancedBlock, UnknownCommand, MissingArgument };

inline std::string_view to_string(ParseErrorKind k) {
  switch (k) {
    case ParseErrorKind::EmptyInput: return "EmptyInput";
    case ParseErrorKind::UnbalancedBlock: return "UnbalancedBlock";
    case ParseErrorKind::UnknownCommand: return "UnknownCommand";
    case ParseErrorKind::MissingArgument: return "MissingArgument";
  }
  return "?";
}

struct ParseError {
  ParseErrorKind kind;
  std::string message;
  SourceSpan span;

  std::string describe() const {
    return std::string(to_string(kind)) + " at line " + std::to_string(span.line) + ": " + message;
  }
};

// ---------------------------------------------------------------------------
// Tokens

enum class TokenKind { Word, String, Cartouche, Group, Symbol };

struct Token {
  TokenKind kind;
  std::string text;
  SourceSpan span;
  bool glued = false;  // no whitespace between this token and the previous one
};

namespace detail {

inline constexpr std::string_view kOpenCartouche = "\xE2\x80\xB9";   // ‹
inline constexpr std::string_view kCloseCartouche = "\xE2\x80\xBA";  // ›
inline constexpr std::string_view kOpenSymbol = "\\<open>";
inline constexpr std::string_view kCloseSymbol = "\\<close>";
inline constexpr std::size_t npos = std::string_view::npos;

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline bool at(std::string_view s, std::size_t i, std::string_view p) {
  return i <= s.size() && s.substr(i, p.size()) == p;
}

inline std::size_t cartouche_open_len(std::string_view s, std::size_t i) {
  if (at(s, i, kOpenCartouche)) return kOpenCartouche.size();
  if (at(s, i, kOpenSymbol)) return kOpenSymbol.size();
  return 0;
}

inline std::size_t cartouche_close_len(std::string_view s, std::size_t i) {
  if (at(s, i, kCloseCartouche)) return kCloseCartouche.size();
  if (at(s, i, kCloseSymbol)) return kCloseSymbol.size();
  return 0;
}

inline bool is_string_quote(char c) { return c == '"' || c == '`'; }

/// One past the closing quote, or npos when unterminated.
inline std::size_t skip_string(std::string_view s, std::size_t i) {
  const char q = s[i];
  for (std::size_t j = i + 1; j < s.size(); ++j) {
    if (s[j] == '\\') {
      ++j;
      continue;
    }
    if (s[j] == q) return j + 1;
  }
  return npos;
}

inline std::size_t skip_cartouche(std::string_view s, std::size_t i) {
  std::size_t depth = 0;
  std::size_t j = i;
  while (j < s.size()) {
    if (auto n = cartouche_open_len(s, j)) {
      ++depth;
      j += n;
    } else if (auto m = cartouche_close_len(s, j)) {
      j += m;
      if (--depth == 0) return j;
    } else {
      ++j;
    }
  }
  return npos;
}

/// Nested (* ... *) comment starting at i.
inline std::size_t skip_comment(std::string_view s, std::size_t i) {
  std::size_t depth = 0;
  std::size_t j = i;
  while (j < s.size()) {
    if (at(s, j, "(*")) {
      ++depth;
      j += 2;
    } else if (at(s, j, "*)")) {
      j += 2;
      if (--depth == 0) return j;
    } else {
      ++j;
    }
  }
  return npos;
}

inline bool is_open_bracket(char c) { return c == '(' || c == '[' || c == '{'; }
inline bool is_close_bracket(char c) { return c == ')' || c == ']' || c == '}'; }
inline char closer_for(char c) { return c == '(' ? ')' : c == '[' ? ']' : '}'; }

inline bool is_word_byte(char c) {
  auto u = static_cast<unsigned char>(c);
  return (u >= 'a' && u <= 'z') || (u >= 'A' && u <= 'Z') || (u >= '0' && u <= '9') || c == '_' ||
         c == '\'' || u >= 0x80;
}

inline bool is_symbol_byte(char c) {
  static constexpr std::string_view kSymbols = "!#$%&*+-/:;<=>@^|~.,?\\";
  return kSymbols.find(c) != npos;
}

/// Length of an Isabelle symbol "\<name>" at i, or 0.
inline std::size_t named_symbol_len(std::string_view s, std::size_t i) {
  if (!at(s, i, "\\<")) return 0;
  std::size_t j = i + 2;
  while (j < s.size() && (std::isalnum(static_cast<unsigned char>(s[j])) || s[j] == '^' || s[j] == '_')) ++j;
  if (j < s.size() && s[j] == '>' && j > i + 2) return j + 1 - i;
  return 0;
}

inline std::size_t count_newlines(std::string_view s, std::size_t from, std::size_t to) {
  std::size_t n = 0;
  for (std::size_t i = from; i < to && i < s.size(); ++i)
    if (s[i] == '\n') ++n;
  return n;
}

/// Whitespace-normalizes a bracket group: runs collapse to one space, no space
/// just inside brackets, comments dropped, quoted text and cartouches verbatim.
inline std::string normalize_group(std::string_view raw) {
  std::string out;
  bool pending_space = false;
  auto flush_space = [&](char next) {
    if (pending_space && !out.empty() && !is_open_bracket(out.back()) && !is_close_bracket(next))
      out.push_back(' ');
    pending_space = false;
  };
  std::size_t i = 0;
  while (i < raw.size()) {
    const char c = raw[i];
    if (at(raw, i, "(*")) {
      std::size_t end = skip_comment(raw, i);
      i = end == npos ? raw.size() : end;
      pending_space = true;
      continue;
    }
    if (is_space(c)) {
      pending_space = true;
      ++i;
      continue;
    }
    std::size_t end = i + 1;
    if (is_string_quote(c)) {
      end = skip_string(raw, i);
    } else if (cartouche_open_len(raw, i)) {
      end = skip_cartouche(raw, i);
    }
    if (end == npos) end = raw.size();
    flush_space(c);
    out.append(raw.substr(i, end - i));
    i = end;
  }
  return out;
}

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  Result<std::vector<Token>, ParseError> run() {
    std::vector<Token> tokens;
    bool saw_space = true;
    while (pos_ < src_.size()) {
      const char c = src_[pos_];
      if (is_space(c)) {
        if (c == '\n') ++line_;
        ++pos_;
        saw_space = true;
        continue;
      }
      if (at(src_, pos_, "(*")) {
        std::size_t end = skip_comment(src_, pos_);
        if (end == npos) return fail("unterminated comment", pos_, src_.size());
        advance_to(end);
        saw_space = true;
        continue;
      }
      if (at(src_, pos_, "\\<comment>")) {
        std::size_t j = pos_ + std::string_view("\\<comment>").size();
        while (j < src_.size() && is_space(src_[j])) ++j;
        if (cartouche_open_len(src_, j)) {
          std::size_t end = skip_cartouche(src_, j);
          if (end == npos) return fail("unterminated cartouche", j, src_.size());
          advance_to(end);
          saw_space = true;
          continue;
        }
      }
      const std::size_t start = pos_;
      const std::size_t start_line = line_;
      TokenKind kind;
      std::size_t end;
      if (is_string_quote(c)) {
        kind = TokenKind::String;
        end = skip_string(src_, pos_);
        if (end == npos) return fail("unterminated string literal", start, src_.size());
      } else if (cartouche_open_len(src_, pos_)) {
        kind = TokenKind::Cartouche;
        end = skip_cartouche(src_, pos_);
        if (end == npos) return fail("unterminated cartouche", start, src_.size());
      } else if (cartouche_close_len(src_, pos_)) {
        return fail("unbalanced cartouche close", start, start + cartouche_close_len(src_, pos_));
      } else if (is_open_bracket(c)) {
        kind = TokenKind::Group;
        auto r = scan_group(start);
        if (!r) return unexpected(r.error());
        end = *r;
      } else if (is_close_bracket(c)) {
        return fail(std::string("unbalanced '") + c + "'", start, start + 1);
      } else if (word_start_len(pos_) > 0) {
        kind = TokenKind::Word;
        end = scan_word(pos_);
      } else {
        kind = TokenKind::Symbol;
        end = pos_ + 1;
        while (end < src_.size() && is_symbol_byte(src_[end]) && !named_symbol_len(src_, end) &&
               !(src_[end] == '?' && end + 1 < src_.size() && is_word_byte(src_[end + 1])))
          ++end;
      }
      std::string text(src_.substr(start, end - start));
      if (kind == TokenKind::Group) text = normalize_group(text);
      tokens.push_back(Token{kind, std::move(text), SourceSpan{start, end, start_line}, !saw_space});
      advance_to(end);
      saw_space = false;
    }
    return tokens;
  }

 private:
  Unexpected<ParseError> fail(std::string msg, std::size_t start, std::size_t end) const {
    return unexpected(ParseError{ParseErrorKind::UnbalancedBlock, std::move(msg),
                                 SourceSpan{start, end, line_ + count_newlines(src_, pos_, start)}});
  }

  void advance_to(std::size_t end) {
    line_ += count_newlines(src_, pos_, end);
    pos_ = end;
  }

  std::size_t word_start_len(std::size_t i) const {
    if (i >= src_.size()) return 0;
    if (cartouche_open_len(src_, i) || cartouche_close_len(src_, i)) return 0;
    if (auto n = named_symbol_len(src_, i)) return n;
    const char c = src_[i];
    if (c == '?' && i + 1 < src_.size() && (is_word_byte(src_[i + 1]) || named_symbol_len(src_, i + 1)))
      return 1;
    return is_word_byte(c) ? 1 : 0;
  }

  std::size_t scan_word(std::size_t i) const {
    std::size_t j = i + word_start_len(i);
    while (j < src_.size()) {
      if (cartouche_open_len(src_, j) || cartouche_close_len(src_, j)) break;
      if (auto n = named_symbol_len(src_, j)) {
        if (at(src_, j, kOpenSymbol) || at(src_, j, kCloseSymbol)) break;
        j += n;
      } else if (is_word_byte(src_[j])) {
        ++j;
      } else if (src_[j] == '.' && j + 1 < src_.size() && is_word_byte(src_[j + 1]) &&
                 !cartouche_open_len(src_, j + 1) && !cartouche_close_len(src_, j + 1)) {
        j += 2;
      } else {
        break;
      }
    }
    return j;
  }

  Result<std::size_t, ParseError> scan_group(std::size_t start) const {
    std::vector<char> stack;
    std::size_t j = start;
    while (j < src_.size()) {
      const char c = src_[j];
      if (at(src_, j, "(*")) {
        std::size_t end = skip_comment(src_, j);
        if (end == npos) return fail("unterminated comment", j, src_.size());
        j = end;
      } else if (is_string_quote(c)) {
        std::size_t end = skip_string(src_, j);
        if (end == npos) return fail("unterminated string literal", j, src_.size());
        j = end;
      } else if (cartouche_open_len(src_, j)) {
        std::size_t end = skip_cartouche(src_, j);
        if (end == npos) return fail("unterminated cartouche", j, src_.size());
        j = end;
      } else if (is_open_bracket(c)) {
        stack.push_back(closer_for(c));
        ++j;
      } else if (is_close_bracket(c)) {
        if (stack.empty() || stack.back() != c)
          return fail(std::string("mismatched '") + c + "'", j, j + 1);
        stack.pop_back();
        ++j;
        if (stack.empty()) return j;
      } else {
        ++j;
      }
    }
    return fail(std::string("unclosed '") + src_[start] + "'", start, src_.size());
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
};

}  // namespace detail

inline Result<std::vector<Token>, ParseError> tokenize(std::string_view text) {
  return detail::Lexer(text).run();
}

/// Joins tokens with canonical spacing: one space between tokens, none before
/// a label colon or comma, none before a bracket group glued to its head.
inline std::string join_tokens(const std::vector<Token>& tokens, std::size_t from = 0,
                               std::size_t to = std::string::npos) {
  std::string out;
  to = std::min(to, tokens.size());
  for (std::size_t i = from; i < to; ++i) {
    const Token& t = tokens[i];
    if (i > from) {
      const Token& prev = tokens[i - 1];
      const bool tight_punct = t.kind == TokenKind::Symbol && (t.text == ":" || t.text == ",") &&
                               prev.kind != TokenKind::Symbol;
      const bool glued_group = t.kind == TokenKind::Group && t.glued;
      if (!tight_punct && !glued_group) out.push_back(' ');
    }
    out += t.text;
  }
  return out;
}

/// Canonical single-spaced form of arbitrary text; falls back to collapsing
/// whitespace when the text does not tokenize.
inline std::string normalize_text(std::string_view text) {
  if (auto toks = tokenize(text)) return join_tokens(*toks);
  std::string out;
  bool space = false;
  for (char c : text) {
    if (detail::is_space(c)) {
      space = !out.empty();
      continue;
    }
    if (space) out.push_back(' ');
    space = false;
    out.push_back(c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// AST

/// Heap-allocated value with deep-copy semantics, for recursive AST nodes.
template <class T>
class Box {
 public:
  Box(T value) : p_(std::make_unique<T>(std::move(value))) {}
  Box(const Box& o) : p_(o.p_ ? std::make_unique<T>(*o.p_) : nullptr) {}
  Box(Box&&) noexcept = default;
  Box& operator=(const Box& o) {
    if (this != &o) p_ = o.p_ ? std::make_unique<T>(*o.p_) : nullptr;
    return *this;
  }
  Box& operator=(Box&&) noexcept = default;
  ~Box() = default;

  T& operator*() { return *p_; }
  const T& operator*() const { return *p_; }
  T* operator->() { return p_.get(); }
  const T* operator->() const { return p_.get(); }

  friend bool operator==(const Box& a, const Box& b) {
    if (!a.p_ || !b.p_) return a.p_ == b.p_;
    return *a.p_ == *b.p_;
  }

 private:
  std::unique_ptr<T> p_;
};

enum class ProofStyle { Isar, ApplyStyle };

inline std::string_view to_string(ProofStyle s) { return s == ProofStyle::Isar ? "isar" : "apply"; }

struct Justification;
struct IsarBlock;

/// One refinement command before a terminal method: apply, using, unfolding,
/// or a subgoal with its own nested body.
struct ApplyStep {
  std::string keyword;
  std::string args;
  std::optional<Box<Justification>> body;  // subgoal only
  SourceSpan span;

  friend bool operator==(const ApplyStep& a, const ApplyStep& b) {
    return a.keyword == b.keyword && a.args == b.args && a.body == b.body;
  }
};

enum class Terminator { Done, By, Sorry, Oops };

struct ApplyChain {
  std::vector<ApplyStep> commands;
  Terminator terminator = Terminator::Done;
  std::string tactic;  // method text when terminator == By

  friend bool operator==(const ApplyChain& a, const ApplyChain& b) {
    return a.commands == b.commands && a.terminator == b.terminator && a.tactic == b.tactic;
  }
};

enum class JustificationKind { ByTactic, NestedProof, ApplySeq, Sorry, Oops, Immediate };

struct Justification {
  JustificationKind kind = JustificationKind::Sorry;
  std::string text;                      // ByTactic method, or "." / ".." for Immediate
  std::optional<Box<IsarBlock>> block;   // NestedProof
  ApplyChain chain;                      // ApplySeq
  SourceSpan span;

  static Justification sorry() { return {}; }
  static Justification by(std::string method) {
    Justification j;
    j.kind = JustificationKind::ByTactic;
    j.text = std::move(method);
    return j;
  }

  friend bool operator==(const Justification& a, const Justification& b) {
    if (a.kind != b.kind) return false;
    switch (a.kind) {
      case JustificationKind::ByTactic:
      case JustificationKind::Immediate: return a.text == b.text;
      case JustificationKind::NestedProof: return a.block == b.block;
      case JustificationKind::ApplySeq: return a.chain == b.chain;
      default: return true;
    }
  }
};

struct IsarStatement {
  StatementKind kind = StatementKind::Chain;
  std::string keyword;  // source spelling, e.g. "thus" for a Show
  std::string label;    // have IH: ... -> "IH"
  std::string prop;     // opaque argument text
  std::optional<Justification> justification;
  SourceSpan span;

  friend bool operator==(const IsarStatement& a, const IsarStatement& b) {
    return a.kind == b.kind && a.keyword == b.keyword && a.label == b.label && a.prop == b.prop &&
           a.justification == b.justification;
  }
};

struct IsarBlock {
  std::vector<ApplyStep> prelude;  // using/unfolding/apply before "proof"
  std::optional<std::string> opening_method;
  std::vector<IsarStatement> statements;
  std::optional<std::string> closing_method;
  SourceSpan span;

  friend bool operator==(const IsarBlock& a, const IsarBlock& b) {
    return a.prelude == b.prelude && a.opening_method == b.opening_method &&
           a.statements == b.statements && a.closing_method == b.closing_method;
  }
};

struct ProofScript {
  std::variant<IsarBlock, ApplyChain> body;
  ProofStyle style = ProofStyle::ApplyStyle;

  bool is_isar_block() const { return std::holds_alternative<IsarBlock>(body); }
  const IsarBlock& block() const { return std::get<IsarBlock>(body); }
  IsarBlock& block() { return std::get<IsarBlock>(body); }
  const ApplyChain& chain() const { return std::get<ApplyChain>(body); }

  friend bool operator==(const ProofScript& a, const ProofScript& b) {
    return a.body == b.body && a.style == b.style;
  }
};

struct TheoremDecl {
  std::string keyword = "theorem";
  std::optional<std::string> name;
  std::string statement;
  std::optional<std::string> attributes;

  friend bool operator==(const TheoremDecl&, const TheoremDecl&) = default;
};

// ---------------------------------------------------------------------------
// Style and step counting

namespace detail {

inline bool justification_has_block(const Justification& j);

inline bool steps_have_block(const std::vector<ApplyStep>& steps) {
  for (const auto& s : steps)
    if (s.body && justification_has_block(**s.body)) return true;
  return false;
}

inline bool justification_has_block(const Justification& j) {
  if (j.kind == JustificationKind::NestedProof) return true;
  if (j.kind == JustificationKind::ApplySeq) return steps_have_block(j.chain.commands);
  return false;
}

}  // namespace detail

/// Isar iff the script contains at least one proof block anywhere.
inline ProofStyle classify_style(const ProofScript& p) {
  if (p.is_isar_block()) return ProofStyle::Isar;
  return detail::steps_have_block(p.chain().commands) ? ProofStyle::Isar : ProofStyle::ApplyStyle;
}

namespace detail {

struct StepCounter {
  // Isar: statements + one per block opening. Apply: apply commands + by.
  std::size_t isar = 0;
  std::size_t apply = 0;

  void block(const IsarBlock& b) {
    ++isar;
    steps(b.prelude);
    for (const auto& s : b.statements) {
      ++isar;
      if (s.justification) justification(*s.justification);
    }
  }
  void steps(const std::vector<ApplyStep>& cmds) {
    for (const auto& c : cmds) {
      if (c.keyword == "apply") ++apply;
      if (c.body) justification(**c.body);
    }
  }
  void chain(const ApplyChain& c) {
    steps(c.commands);
    if (c.terminator == Terminator::By) ++apply;
  }
  void justification(const Justification& j) {
    switch (j.kind) {
      case JustificationKind::NestedProof: block(**j.block); break;
      case JustificationKind::ApplySeq: chain(j.chain); break;
      case JustificationKind::ByTactic: ++apply; break;
      default: break;
    }
  }
};

}  // namespace detail

inline std::size_t count_steps(const ProofScript& p) {
  detail::StepCounter counter;
  if (p.is_isar_block()) {
    counter.block(p.block());
  } else {
    counter.chain(p.chain());
  }
  return classify_style(p) == ProofStyle::Isar ? counter.isar : counter.apply;
}

// ---------------------------------------------------------------------------
// Parser

namespace detail {

/// A parsed proof body: zero or more refinement steps and one terminal.
struct ProofBody {
  enum class End { Block, By, Done, Sorry, Oops, Immediate };
  std::vector<ApplyStep> steps;
  End end = End::Sorry;
  std::string text;
  std::optional<IsarBlock> block;
  SourceSpan span;
};

class Parser {
 public:
  Parser(const std::vector<Token>& tokens, const ParserConfig& cfg) : toks_(tokens), cfg_(cfg) {}

  bool at_end() const { return pos_ >= toks_.size(); }

  Result<ProofBody, ParseError> body() {
    ProofBody out;
    out.span = here();
    while (true) {
      if (at_end())
        return error(ParseErrorKind::UnbalancedBlock, "proof ends without a terminal method",
                     out.span);
      const Token& t = toks_[pos_];
      if (t.kind == TokenKind::Symbol && (t.text == "." || t.text == "..")) {
        if (!out.steps.empty())
          return error(ParseErrorKind::UnknownCommand, "'" + t.text + "' after apply commands", t.span);
        ++pos_;
        out.end = ProofBody::End::Immediate;
        out.text = t.text;
        return finish(out, t);
      }
      auto info = keyword(t);
      if (!info) return unknown(t);
      switch (info->role) {
        case Role::Prelude: {
          ++pos_;
          auto args = collect_args();
          if (args.empty())
            return error(ParseErrorKind::MissingArgument, "'" + t.text + "' needs an argument", t.span);
          out.steps.push_back(ApplyStep{t.text, join_tokens(args), std::nullopt, t.span});
          break;
        }
        case Role::Subgoal: {
          ++pos_;
          if (++depth_ > cfg_.max_depth)
            return error(ParseErrorKind::UnbalancedBlock, "nesting depth limit exceeded", t.span);
          auto args = collect_args();
          auto inner = body();
          --depth_;
          if (!inner) return unexpected(inner.error());
          out.steps.push_back(
              ApplyStep{t.text, join_tokens(args), Box<Justification>(to_justification(*inner)), t.span});
          break;
        }
        case Role::Terminal: {
          ++pos_;
          if (t.text == "by") {
            auto args = collect_args();
            if (args.empty())
              return error(ParseErrorKind::MissingArgument, "'by' needs a proof method", t.span);
            out.end = ProofBody::End::By;
            out.text = join_tokens(args);
          } else if (t.text == "done") {
            if (out.steps.empty())
              return error(ParseErrorKind::UnbalancedBlock, "'done' without preceding apply", t.span);
            out.end = ProofBody::End::Done;
          } else if (t.text == "sorry") {
            out.end = ProofBody::End::Sorry;
          } else if (t.text == "oops") {
            out.end = ProofBody::End::Oops;
          } else {
            return unknown(t);
          }
          return finish(out, toks_[pos_ - 1]);
        }
        case Role::BlockOpen: {
          auto b = block(std::move(out.steps));
          if (!b) return unexpected(b.error());
          out.steps.clear();
          out.end = ProofBody::End::Block;
          out.span.end_offset = b->span.end_offset;
          out.block = std::move(*b);
          return out;
        }
        default:
          return error(ParseErrorKind::UnknownCommand,
                       "'" + t.text + "' cannot start a proof here", t.span);
      }
    }
  }

  static Justification to_justification(ProofBody b) {
    Justification j;
    j.span = b.span;
    using End = ProofBody::End;
    if (b.end == End::Block) {
      j.kind = JustificationKind::NestedProof;
      j.block = Box<IsarBlock>(std::move(*b.block));
    } else if (b.steps.empty() && b.end == End::By) {
      j.kind = JustificationKind::ByTactic;
      j.text = std::move(b.text);
    } else if (b.steps.empty() && b.end == End::Sorry) {
      j.kind = JustificationKind::Sorry;
    } else if (b.steps.empty() && b.end == End::Oops) {
      j.kind = JustificationKind::Oops;
    } else if (b.end == End::Immediate) {
      j.kind = JustificationKind::Immediate;
      j.text = std::move(b.text);
    } else {
      j.kind = JustificationKind::ApplySeq;
      j.chain = to_chain(std::move(b));
    }
    return j;
  }

  static ApplyChain to_chain(ProofBody b) {
    ApplyChain c;
    c.commands = std::move(b.steps);
    switch (b.end) {
      case ProofBody::End::By:
        c.terminator = Terminator::By;
        c.tactic = std::move(b.text);
        break;
      case ProofBody::End::Sorry: c.terminator = Terminator::Sorry; break;
      case ProofBody::End::Oops: c.terminator = Terminator::Oops; break;
      default: c.terminator = Terminator::Done; break;
    }
    return c;
  }

  SourceSpan here() const {
    if (at_end()) {
      if (toks_.empty()) return {};
      auto s = toks_.back().span;
      return SourceSpan{s.end_offset, s.end_offset, s.line};
    }
    return toks_[pos_].span;
  }

  Unexpected<ParseError> error(ParseErrorKind kind, std::string msg, SourceSpan span) const {
    return unexpected(ParseError{kind, std::move(msg), span});
  }

  Unexpected<ParseError> unknown(const Token& t) const {
    return error(ParseErrorKind::UnknownCommand, "unknown command '" + t.text + "'", t.span);
  }

 private:
  std::optional<KeywordInfo> keyword(const Token& t) const {
    if (t.kind != TokenKind::Word) return std::nullopt;
    return cfg_.keywords.find(t.text);
  }

  bool starts_command(const Token& t) const {
    if (t.kind == TokenKind::Symbol) return t.text == "." || t.text == "..";
    auto info = keyword(t);
    return info && info->role != Role::Auxiliary;
  }

  std::vector<Token> collect_args() {
    std::vector<Token> args;
    while (!at_end() && !starts_command(toks_[pos_])) args.push_back(toks_[pos_++]);
    return args;
  }

  static ProofBody finish(ProofBody& b, const Token& last) {
    b.span.end_offset = last.span.end_offset;
    return std::move(b);
  }

  Result<IsarBlock, ParseError> block(std::vector<ApplyStep> prelude) {
    const Token& open = toks_[pos_++];
    if (++depth_ > cfg_.max_depth)
      return error(ParseErrorKind::UnbalancedBlock, "nesting depth limit exceeded", open.span);
    IsarBlock b;
    b.prelude = std::move(prelude);
    b.span = open.span;
    if (auto args = collect_args(); !args.empty()) b.opening_method = join_tokens(args);
    while (true) {
      if (at_end())
        return error(ParseErrorKind::UnbalancedBlock, "'proof' without matching 'qed'", open.span);
      const Token& t = toks_[pos_];
      if (auto info = keyword(t); info && info->role == Role::BlockClose) {
        ++pos_;
        if (auto args = collect_args(); !args.empty()) b.closing_method = join_tokens(args);
        b.span.end_offset = toks_[pos_ - 1].span.end_offset;
        break;
      }
      auto st = statement();
      if (!st) return unexpected(st.error());
      b.statements.push_back(std::move(*st));
    }
    --depth_;
    return b;
  }

  static void split_label(std::vector<Token>& args, std::string& label) {
    if (args.size() >= 2 && args[0].kind == TokenKind::Word && args[1].kind == TokenKind::Symbol &&
        args[1].text == ":") {
      label = args[0].text;
      args.erase(args.begin(), args.begin() + 2);
    } else if (args.size() >= 3 && args[0].kind == TokenKind::Word && args[1].kind == TokenKind::Group &&
               args[1].text.front() == '[' && args[2].kind == TokenKind::Symbol && args[2].text == ":") {
      label = args[0].text + args[1].text;
      args.erase(args.begin(), args.begin() + 3);
    }
  }

  Result<IsarStatement, ParseError> statement() {
    const Token& t = toks_[pos_];
    auto info = keyword(t);
    if (!info) return unknown(t);
    IsarStatement s;
    s.keyword = t.text;
    s.span = t.span;
    switch (info->role) {
      case Role::Next:
        ++pos_;
        s.kind = StatementKind::Next;
        return s;
      case Role::Case: {
        ++pos_;
        s.kind = StatementKind::Case;
        auto args = collect_args();
        if (args.empty()) return error(ParseErrorKind::MissingArgument, "'case' needs a name", t.span);
        s.prop = join_tokens(args);
        break;
      }
      case Role::Context:
      case Role::Chain:
      case Role::Prelude: {
        ++pos_;
        s.kind = info->role == Role::Prelude ? StatementKind::Chain : info->kind;
        auto args = collect_args();
        if (info->role == Role::Context) {
          if (args.empty())
            return error(ParseErrorKind::MissingArgument, "'" + t.text + "' needs an argument", t.span);
          split_label(args, s.label);
        }
        s.prop = join_tokens(args);
        break;
      }
      case Role::Goal: {
        ++pos_;
        s.kind = info->kind;
        auto args = collect_args();
        split_label(args, s.label);
        if (args.empty())
          return error(ParseErrorKind::MissingArgument, "'" + t.text + "' needs a proposition", t.span);
        s.prop = join_tokens(args);
        auto b = body();
        if (!b) return unexpected(b.error());
        s.justification = to_justification(std::move(*b));
        s.span.end_offset = s.justification->span.end_offset;
        return s;
      }
      default:
        return error(ParseErrorKind::UnknownCommand, "'" + t.text + "' is not an Isar statement", t.span);
    }
    s.span.end_offset = toks_[pos_ - 1].span.end_offset;
    return s;
  }

  const std::vector<Token>& toks_;
  const ParserConfig& cfg_;
  std::size_t pos_ = 0;
  std::size_t depth_ = 0;
};

inline Result<ProofBody, ParseError> parse_complete_body(std::string_view text, const ParserConfig& cfg) {
  auto toks = tokenize(text);
  if (!toks) return unexpected(toks.error());
  if (toks->empty()) return unexpected(ParseError{ParseErrorKind::EmptyInput, "no proof text", {}});
  Parser p(*toks, cfg);
  auto body = p.body();
  if (!body) return unexpected(body.error());
  if (!p.at_end())
    return unexpected(
        ParseError{ParseErrorKind::UnbalancedBlock, "unexpected text after end of proof", p.here()});
  return body;
}

}  // namespace detail

/// Parses a complete proof script (everything after the theorem statement).
inline Result<ProofScript, ParseError> parse_proof(std::string_view text,
                                                   const ParserConfig& cfg = default_parser_config()) {
  auto body = detail::parse_complete_body(text, cfg);
  if (!body) return unexpected(body.error());
  ProofScript p;
  if (body->end == detail::ProofBody::End::Block) {
    p.body = std::move(*body->block);
  } else if (body->end == detail::ProofBody::End::Immediate) {
    return unexpected(ParseError{ParseErrorKind::UnknownCommand,
                                 "immediate proof '" + body->text + "' cannot stand alone", body->span});
  } else {
    p.body = detail::Parser::to_chain(std::move(*body));
  }
  p.style = classify_style(p);
  return p;
}

/// Parses a justification: the text that closes one goal statement.
inline Result<Justification, ParseError> parse_justification(
    std::string_view text, const ParserConfig& cfg = default_parser_config()) {
  auto body = detail::parse_complete_body(text, cfg);
  if (!body) return unexpected(body.error());
  return detail::Parser::to_justification(std::move(*body));
}

// ---------------------------------------------------------------------------
// Theorem declarations

struct ParsedTheorem {
  TheoremDecl decl;
  std::size_t proof_offset = 0;  // byte offset where the proof text begins
};

/// Finds the first theorem/lemma/corollary in `text` and parses its header.
/// The statement extends up to the first proof command or "end".
inline Result<ParsedTheorem, ParseError> parse_theorem(std::string_view text,
                                                       const ParserConfig& cfg = default_parser_config()) {
  auto toks = tokenize(text);
  if (!toks) return unexpected(toks.error());
  if (toks->empty()) return unexpected(ParseError{ParseErrorKind::EmptyInput, "no theorem text", {}});
  const auto& ts = *toks;
  std::size_t i = 0;
  auto role_of = [&](const Token& t) -> std::optional<Role> {
    if (t.kind != TokenKind::Word) return std::nullopt;
    if (auto info = cfg.keywords.find(t.text)) return info->role;
    return std::nullopt;
  };
  while (i < ts.size() && role_of(ts[i]) != Role::TheoremStart) ++i;
  if (i == ts.size())
    return unexpected(ParseError{ParseErrorKind::UnknownCommand, "no theorem, lemma or corollary", ts[0].span});
  ParsedTheorem out;
  out.decl.keyword = ts[i].text;
  const SourceSpan head = ts[i].span;
  ++i;
  auto is_colon = [&](std::size_t k) {
    return k < ts.size() && ts[k].kind == TokenKind::Symbol && ts[k].text == ":";
  };
  auto is_attr = [&](std::size_t k) {
    return k < ts.size() && ts[k].kind == TokenKind::Group && ts[k].text.front() == '[';
  };
  if (i < ts.size() && ts[i].kind == TokenKind::Word && !role_of(ts[i])) {
    if (is_colon(i + 1)) {
      out.decl.name = ts[i].text;
      i += 2;
    } else if (is_attr(i + 1) && is_colon(i + 2)) {
      out.decl.name = ts[i].text;
      out.decl.attributes = ts[i + 1].text;
      i += 3;
    }
  } else if (is_attr(i) && is_colon(i + 1)) {
    out.decl.attributes = ts[i].text;
    i += 2;
  }
  const std::size_t stmt_begin = i;
  auto ends_statement = [&](const Token& t) {
    if (t.kind == TokenKind::Symbol) return t.text == "." || t.text == "..";
    if (t.kind == TokenKind::Word && t.text == "end") return true;
    auto r = role_of(t);
    return r && *r != Role::Auxiliary;
  };
  while (i < ts.size() && !ends_statement(ts[i])) ++i;
  if (i == stmt_begin)
    return unexpected(ParseError{ParseErrorKind::MissingArgument, "theorem has no statement", head});
  out.decl.statement = join_tokens(ts, stmt_begin, i);
  out.proof_offset = i < ts.size() ? ts[i].span.start_offset : text.size();
  return out;
}

inline std::string render_theorem(const TheoremDecl& thm) {
  if (!thm.name) {
    if (thm.attributes) return "lemma " + *thm.attributes + ": " + thm.statement;
    return "lemma " + thm.statement;
  }
  std::string out = thm.keyword + " " + *thm.name;
  if (thm.attributes) out += " " + *thm.attributes;
  return out + ": " + thm.statement;
}

/// Statement text with one enclosing pair of quotes or cartouche delimiters removed.
inline std::string unquote(std::string_view s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"' && detail::skip_string(s, 0) == s.size())
    return std::string(s.substr(1, s.size() - 2));
  if (auto open = detail::cartouche_open_len(s, 0); open && detail::skip_cartouche(s, 0) == s.size()) {
    std::size_t close = detail::at(s, s.size() - detail::kCloseCartouche.size(), detail::kCloseCartouche)
                            ? detail::kCloseCartouche.size()
                            : detail::kCloseSymbol.size();
    return std::string(s.substr(open, s.size() - open - close));
  }
  return std::string(s);
}

// ---------------------------------------------------------------------------
// Rendering

namespace detail {

class Renderer {
 public:
  std::string take() {
    std::string out;
    for (std::size_t i = 0; i < lines_.size(); ++i) {
      if (i) out.push_back('\n');
      out += lines_[i];
    }
    return out;
  }

  void line(std::size_t indent, std::string text) { lines_.push_back(std::string(2 * indent, ' ') + text); }

  static std::string head(const IsarStatement& s) {
    std::string out = s.keyword;
    if (!s.label.empty()) out += " " + s.label + ":";
    if (!s.prop.empty()) out += " " + s.prop;
    return out;
  }

  static std::string step_text(const ApplyStep& s) {
    return s.args.empty() ? s.keyword : s.keyword + " " + s.args;
  }

  static bool is_one_liner(const Justification& j) {
    switch (j.kind) {
      case JustificationKind::ByTactic:
      case JustificationKind::Sorry:
      case JustificationKind::Oops:
      case JustificationKind::Immediate: return true;
      case JustificationKind::ApplySeq:
        if (j.chain.terminator != Terminator::By && j.chain.terminator != Terminator::Sorry) return false;
        for (const auto& c : j.chain.commands)
          if (c.keyword == "apply" || c.body) return false;
        return true;
      default: return false;
    }
  }

  static std::string one_liner(const Justification& j) {
    switch (j.kind) {
      case JustificationKind::ByTactic: return "by " + j.text;
      case JustificationKind::Sorry: return "sorry";
      case JustificationKind::Oops: return "oops";
      case JustificationKind::Immediate: return j.text;
      default: {
        std::string out;
        for (const auto& c : j.chain.commands) out += step_text(c) + " ";
        return out + terminator_text(j.chain);
      }
    }
  }

  static std::string terminator_text(const ApplyChain& c) {
    switch (c.terminator) {
      case Terminator::Done: return "done";
      case Terminator::By: return "by " + c.tactic;
      case Terminator::Sorry: return "sorry";
      case Terminator::Oops: return "oops";
    }
    return "done";
  }

  void steps(const std::vector<ApplyStep>& cmds, std::size_t indent) {
    for (const auto& c : cmds) {
      if (!c.body) {
        line(indent, step_text(c));
      } else if (is_one_liner(**c.body)) {
        line(indent, step_text(c) + " " + one_liner(**c.body));
      } else {
        line(indent, step_text(c));
        justification_lines(**c.body, indent + 1);
      }
    }
  }

  void chain(const ApplyChain& c, std::size_t indent) {
    steps(c.commands, indent);
    line(indent, terminator_text(c));
  }

  void block(const IsarBlock& b, std::size_t indent) {
    steps(b.prelude, indent);
    line(indent, b.opening_method ? "proof " + *b.opening_method : "proof");
    std::string pending;
    for (std::size_t i = 0; i < b.statements.size(); ++i) {
      const auto& s = b.statements[i];
      if (s.kind == StatementKind::Next) {
        flush(pending, indent + 1);
        line(indent, "next");
        continue;
      }
      std::string h = pending.empty() ? head(s) : pending + " " + head(s);
      pending.clear();
      const bool next_is_goal = i + 1 < b.statements.size() && is_goal(b.statements[i + 1].kind);
      if (s.kind == StatementKind::Chain && next_is_goal && !s.justification) {
        pending = std::move(h);
        continue;
      }
      statement_with(h, s, indent + 1);
    }
    flush(pending, indent + 1);
    line(indent, b.closing_method ? "qed " + *b.closing_method : "qed");
  }

  void justification_lines(const Justification& j, std::size_t indent) {
    switch (j.kind) {
      case JustificationKind::NestedProof: block(**j.block, indent); break;
      case JustificationKind::ApplySeq: chain(j.chain, indent); break;
      default: line(indent, one_liner(j)); break;
    }
  }

 private:
  static bool is_goal(StatementKind k) {
    return k == StatementKind::Show || k == StatementKind::Have || k == StatementKind::Obtain;
  }

  void flush(std::string& pending, std::size_t indent) {
    if (!pending.empty()) line(indent, pending);
    pending.clear();
  }

  void statement_with(const std::string& h, const IsarStatement& s, std::size_t indent) {
    if (!s.justification) {
      line(indent, h);
    } else if (is_one_liner(*s.justification)) {
      line(indent, h + " " + one_liner(*s.justification));
    } else if (s.justification->kind == JustificationKind::NestedProof) {
      line(indent, h);
      block(**s.justification->block, indent);
    } else {
      line(indent, h);
      justification_lines(*s.justification, indent + 1);
    }
  }

  std::vector<std::string> lines_;
};

}  // namespace detail

/// Normalized source text: one statement per line, single spaces.
inline std::string render(const ProofScript& p) {
  detail::Renderer r;
  if (p.is_isar_block()) {
    r.block(p.block(), 0);
  } else {
    r.chain(p.chain(), 0);
  }
  return r.take();
}

inline std::string render(const Justification& j) {
  if (detail::Renderer::is_one_liner(j)) return detail::Renderer::one_liner(j);
  detail::Renderer r;
  r.justification_lines(j, 0);
  return r.take();
}

inline std::string render(const IsarStatement& s) {
  std::string out = detail::Renderer::head(s);
  if (s.justification) {
    out += detail::Renderer::is_one_liner(*s.justification) ? " " : "\n";
    out += render(*s.justification);
  }
  return out;
}

/// True if any terminal of the script is sorry or oops.
inline bool contains_placeholder(const ProofScript& p);

namespace detail {

inline bool placeholder_in(const Justification& j);

inline bool placeholder_in(const std::vector<ApplyStep>& steps) {
  for (const auto& s : steps)
    if (s.body && placeholder_in(**s.body)) return true;
  return false;
}

inline bool placeholder_in(const ApplyChain& c) {
  return c.terminator == Terminator::Sorry || c.terminator == Terminator::Oops || placeholder_in(c.commands);
}

inline bool placeholder_in(const IsarBlock& b) {
  if (placeholder_in(b.prelude)) return true;
  for (const auto& s : b.statements)
    if (s.justification && placeholder_in(*s.justification)) return true;
  return false;
}

inline bool placeholder_in(const Justification& j) {
  switch (j.kind) {
    case JustificationKind::Sorry:
    case JustificationKind::Oops: return true;
    case JustificationKind::NestedProof: return placeholder_in(**j.block);
    case JustificationKind::ApplySeq: return placeholder_in(j.chain);
    default: return false;
  }
}

}  // namespace detail

inline bool contains_placeholder(const ProofScript& p) {
  if (p.is_isar_block()) return detail::placeholder_in(p.block());
  return detail::placeholder_in(p.chain());
}

}  // namespace hybridprover::syntax
