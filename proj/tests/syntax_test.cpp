#include "hybridprover/syntax.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

#include "fixtures.hpp"

namespace hybridprover::syntax {
namespace {

// Independent step count for the corpus: counts keyword tokens directly.
// Apply style: "apply" and "by" tokens. Isar: statement keywords plus "proof".
std::size_t token_step_oracle(const std::string& text, bool isar) {
  static const std::set<std::string> statement_keywords = {
      "case", "next", "show", "have", "thus", "hence", "obtain", "fix", "assume", "let", "then",
      "from", "with", "moreover", "ultimately", "also", "finally"};
  auto toks = tokenize(text);
  std::size_t n = 0;
  for (const auto& t : *toks) {
    if (t.kind != TokenKind::Word) continue;
    if (isar) {
      n += statement_keywords.count(t.text) + (t.text == "proof" ? 1 : 0);
    } else {
      n += (t.text == "apply" || t.text == "by") ? 1 : 0;
    }
  }
  return n;
}

TEST(Tokenize, SkipsNestedCommentsAndKeepsLiterals) {
  auto toks = tokenize(R"x(by (* a (* b *) c *) (simp add: "x (* y *)"))x");
  ASSERT_TRUE(toks);
  ASSERT_EQ(toks->size(), 2u);
  EXPECT_EQ((*toks)[0].text, "by");
  EXPECT_EQ((*toks)[1].kind, TokenKind::Group);
  EXPECT_EQ((*toks)[1].text, R"x((simp add: "x (* y *)"))x");
}

TEST(Tokenize, CartouchesAreSingleTokens) {
  auto toks = tokenize("have ‹a ‹nested› b› by simp");
  ASSERT_TRUE(toks);
  ASSERT_EQ(toks->size(), 4u);
  EXPECT_EQ((*toks)[1].kind, TokenKind::Cartouche);
}

TEST(Tokenize, GroupWhitespaceIsNormalized) {
  auto toks = tokenize("apply (  induction   xs\n arbitrary: ys )");
  ASSERT_TRUE(toks);
  EXPECT_EQ((*toks)[1].text, "(induction xs arbitrary: ys)");
}

TEST(Tokenize, SpansTrackLines) {
  auto toks = tokenize("apply auto\n\ndone");
  ASSERT_TRUE(toks);
  EXPECT_EQ((*toks)[2].span.line, 3u);
  EXPECT_EQ((*toks)[2].span.start_offset, 12u);
  EXPECT_EQ((*toks)[2].span.end_offset, 16u);
}

TEST(Tokenize, UnterminatedDelimitersAreSpannedErrors) {
  for (const char* bad : {"by (simp", "have \"x", "(* open", "by simp)", "have ‹x"}) {
    auto toks = tokenize(bad);
    ASSERT_FALSE(toks) << bad;
    EXPECT_EQ(toks.error().kind, ParseErrorKind::UnbalancedBlock) << bad;
  }
}

TEST(ParseProof, ApplyChainFromRevRev) {
  auto p = parse_proof(fixtures::kRevRevApply);
  ASSERT_TRUE(p) << p.error().describe();
  ASSERT_FALSE(p->is_isar_block());
  const auto& chain = p->chain();
  ASSERT_EQ(chain.commands.size(), 2u);
  EXPECT_EQ(chain.commands[0].keyword, "apply");
  EXPECT_EQ(chain.commands[0].args, "(induction xs)");
  EXPECT_EQ(chain.commands[1].args, "auto");
  EXPECT_EQ(chain.terminator, Terminator::Done);
}

TEST(ParseProof, EmptyInput) {
  for (const char* empty : {"", "   \n\t", "(* only a comment *)"}) {
    auto p = parse_proof(empty);
    ASSERT_FALSE(p);
    EXPECT_EQ(p.error().kind, ParseErrorKind::EmptyInput);
  }
}

TEST(ParseProof, IsarBlockFromRevRev) {
  auto p = parse_proof(fixtures::kRevRevIsarOneLine);
  ASSERT_TRUE(p) << p.error().describe();
  ASSERT_TRUE(p->is_isar_block());
  const auto& b = p->block();
  EXPECT_EQ(b.opening_method, "(induction xs)");
  // case, then, show, next, case, then, show
  ASSERT_EQ(b.statements.size(), 7u);
  EXPECT_EQ(b.statements[0].kind, StatementKind::Case);
  EXPECT_EQ(b.statements[0].prop, "Nil");
  EXPECT_EQ(b.statements[1].kind, StatementKind::Chain);
  EXPECT_EQ(b.statements[2].kind, StatementKind::Show);
  EXPECT_EQ(b.statements[2].prop, "?case");
  ASSERT_TRUE(b.statements[2].justification);
  EXPECT_EQ(b.statements[2].justification->kind, JustificationKind::ByTactic);
  EXPECT_EQ(b.statements[2].justification->text, "simp");
  EXPECT_EQ(b.statements[3].kind, StatementKind::Next);
  EXPECT_EQ(b.statements[4].prop, "(Cons a xs)");
}

TEST(ParseProof, LayoutDoesNotMatter) {
  auto a = parse_proof(fixtures::kRevRevIsar);
  auto b = parse_proof(fixtures::kRevRevIsarOneLine);
  ASSERT_TRUE(a);
  ASSERT_TRUE(b);
  EXPECT_EQ(*a, *b);
}

TEST(ParseProof, Errors) {
  struct Case {
    const char* text;
    ParseErrorKind kind;
  };
  for (auto [text, kind] : std::vector<Case>{
           {"proof (induction xs) case Nil then show ?case by simp", ParseErrorKind::UnbalancedBlock},
           {"proof (induction xs) case Nil qed qed", ParseErrorKind::UnbalancedBlock},
           {"The proof is trivial.", ParseErrorKind::UnknownCommand},
           {"apply auto", ParseErrorKind::UnbalancedBlock},
           {"by", ParseErrorKind::MissingArgument},
           {"done", ParseErrorKind::UnbalancedBlock},
           {"proof - show ?thesis qed", ParseErrorKind::UnknownCommand},
           {"proof - by simp qed", ParseErrorKind::UnknownCommand},
           {"lemma foo: \"x\" by simp", ParseErrorKind::UnknownCommand},
       }) {
    auto p = parse_proof(text);
    ASSERT_FALSE(p) << text;
    EXPECT_EQ(p.error().kind, kind) << text << " -> " << p.error().describe();
  }
}

TEST(ParseProof, ErrorSpanPointsAtOffendingToken) {
  auto p = parse_proof("apply auto\nshow ?thesis\ndone");
  ASSERT_FALSE(p);
  EXPECT_EQ(p.error().kind, ParseErrorKind::UnknownCommand);
  EXPECT_EQ(p.error().span.line, 2u);
  EXPECT_EQ(p.error().span.start_offset, 11u);
}

TEST(ParseProof, DepthCapIsUnbalancedBlock) {
  std::string deep;
  for (int i = 0; i < 200; ++i) deep += "proof - have \"x\" ";
  deep += "by simp";
  for (int i = 0; i < 200; ++i) deep += " qed";
  auto p = parse_proof(deep);
  ASSERT_FALSE(p);
  EXPECT_EQ(p.error().kind, ParseErrorKind::UnbalancedBlock);

  ParserConfig generous;
  generous.max_depth = 500;
  EXPECT_TRUE(parse_proof(deep, generous));
}

TEST(ParseProof, KeywordTableIsDataDriven) {
  const char* text = "proof - consider x where \"P x\" by blast then show ?thesis by simp qed";
  EXPECT_FALSE(parse_proof(text));
  ParserConfig cfg;
  cfg.keywords.add("consider", {Role::Goal, StatementKind::Have});
  auto p = parse_proof(text, cfg);
  ASSERT_TRUE(p) << p.error().describe();
  EXPECT_EQ(p->block().statements[0].keyword, "consider");
}

TEST(ParseProof, LabelsAttributesAndImmediateProofs) {
  auto p = parse_proof(
      "proof - have IH[simp]: \"a = b\" by simp assume h: \"c\" from h show ?thesis . qed");
  ASSERT_TRUE(p) << p.error().describe();
  const auto& s = p->block().statements;
  EXPECT_EQ(s[0].label, "IH[simp]");
  EXPECT_EQ(s[0].prop, "\"a = b\"");
  EXPECT_EQ(s[1].label, "h");
  EXPECT_EQ(s[3].justification->kind, JustificationKind::Immediate);
}

TEST(ParseProof, SubgoalBlocksInApplyChains) {
  auto p = parse_proof("apply (induction t) subgoal by simp subgoal apply auto done done");
  ASSERT_TRUE(p) << p.error().describe();
  const auto& c = p->chain();
  ASSERT_EQ(c.commands.size(), 3u);
  EXPECT_EQ(c.commands[1].keyword, "subgoal");
  EXPECT_EQ((*c.commands[1].body)->kind, JustificationKind::ByTactic);
  EXPECT_EQ((*c.commands[2].body)->kind, JustificationKind::ApplySeq);
  EXPECT_EQ(classify_style(*p), ProofStyle::ApplyStyle);
}

TEST(ClassifyStyle, Examples) {
  EXPECT_EQ(classify_style(*parse_proof(fixtures::kRevRevApply)), ProofStyle::ApplyStyle);
  EXPECT_EQ(classify_style(*parse_proof(fixtures::kRevRevIsar)), ProofStyle::Isar);
  EXPECT_EQ(classify_style(*parse_proof("using assms by simp")), ProofStyle::ApplyStyle);
  // An Isar block inside a subgoal makes the whole script Isar.
  auto mixed = parse_proof("apply (cases x) subgoal proof - show ?thesis by simp qed done");
  ASSERT_TRUE(mixed) << mixed.error().describe();
  EXPECT_EQ(classify_style(*mixed), ProofStyle::Isar);
  EXPECT_EQ(mixed->style, ProofStyle::Isar);
}

TEST(CountSteps, Examples) {
  EXPECT_EQ(count_steps(*parse_proof(fixtures::kRevRevApply)), 2u);
  // 1 block opening + 7 statements.
  EXPECT_EQ(count_steps(*parse_proof(fixtures::kRevRevIsar)), 8u);
  EXPECT_EQ(count_steps(*parse_proof("by simp")), 1u);
  EXPECT_EQ(count_steps(*parse_proof("apply auto sorry")), 1u);
  EXPECT_EQ(count_steps(*parse_proof("apply auto oops")), 1u);
  EXPECT_EQ(count_steps(*parse_proof("using foo by simp")), 1u);
}

TEST(CountSteps, MatchesTokenOracleOnCorpus) {
  for (const auto& e : fixtures::load_corpus()) {
    auto p = parse_proof(e.proof);
    ASSERT_TRUE(p) << e.proof;
    // The token oracle does not understand subgoal bodies or mixed scripts.
    if (e.proof.find("subgoal") != std::string::npos) continue;
    EXPECT_EQ(count_steps(*p), token_step_oracle(e.proof, p->style == ProofStyle::Isar)) << e.proof;
  }
}

TEST(Render, ApplyChainFromRevRev) {
  EXPECT_EQ(render(*parse_proof(fixtures::kRevRevApply)), "apply (induction xs)\napply auto\ndone");
}

TEST(Render, IsarFromRevRev) {
  EXPECT_EQ(render(*parse_proof(fixtures::kRevRevIsar)), fixtures::kRevRevIsarRendered);
}

TEST(Render, ShowWithSorry) {
  IsarStatement s;
  s.kind = StatementKind::Show;
  s.keyword = "show";
  s.prop = "?case";
  s.justification = Justification::sorry();
  EXPECT_EQ(render(s), "show ?case sorry");
}

TEST(Render, CanonicalSpacing) {
  auto p = parse_proof("proof-\n  have   IH  :  \"x\"   using  assms(1) ,  foo  by  (simp  add:  bar)\n  thus ?thesis..\nqed");
  ASSERT_TRUE(p) << p.error().describe();
  EXPECT_EQ(render(*p),
            "proof -\n  have IH: \"x\" using assms(1), foo by (simp add: bar)\n  thus ?thesis ..\nqed");
}

TEST(Render, RoundTripOnCorpus) {
  auto corpus = fixtures::load_corpus();
  ASSERT_GE(corpus.size(), 25u);
  for (const auto& e : corpus) {
    auto p = parse_proof(e.proof);
    ASSERT_TRUE(p) << e.proof << "\n" << p.error().describe();
    const std::string text = render(*p);
    auto again = parse_proof(text);
    ASSERT_TRUE(again) << text;
    EXPECT_EQ(*p, *again) << text;
    EXPECT_EQ(render(*again), text);
  }
}

// Token-level equivalence: rendering only changes whitespace between tokens.
TEST(Render, TokenEquivalentToInput) {
  for (const auto& e : fixtures::load_corpus()) {
    auto in = tokenize(e.proof);
    auto out = tokenize(render(*parse_proof(e.proof)));
    ASSERT_EQ(in->size(), out->size()) << e.proof;
    for (std::size_t i = 0; i < in->size(); ++i) EXPECT_EQ((*in)[i].text, (*out)[i].text);
  }
}

TEST(ParseProof, TotalOnRandomBytes) {
  std::mt19937 rng(7);
  const std::string alphabet = "proof qed by apply done sorry show have case next then ()[]{}\"*:.-? \n‹›";
  for (int i = 0; i < 3000; ++i) {
    std::string s;
    const int len = std::uniform_int_distribution<int>(0, 60)(rng);
    for (int k = 0; k < len; ++k) s.push_back(alphabet[rng() % alphabet.size()]);
    auto p = parse_proof(s);
    if (p) {
      auto again = parse_proof(render(*p));
      ASSERT_TRUE(again) << s;
      EXPECT_EQ(*p, *again) << s;
    }
  }
}

TEST(ParseTheorem, NamedAndAnonymous) {
  auto t = parse_theorem(fixtures::kListReverseTheorem);
  ASSERT_TRUE(t);
  EXPECT_EQ(t->decl.keyword, "theorem");
  EXPECT_EQ(t->decl.name, "list_reverse");
  EXPECT_EQ(t->decl.statement, "\"rev (rev xs) = xs\"");
  EXPECT_EQ(render_theorem(t->decl), fixtures::kListReverseTheorem);

  auto anon = parse_theorem("lemma \"x = x\" by simp");
  ASSERT_TRUE(anon);
  EXPECT_FALSE(anon->decl.name);
  EXPECT_EQ(anon->decl.statement, "\"x = x\"");
  EXPECT_EQ(render_theorem(anon->decl), "lemma \"x = x\"");
  EXPECT_EQ(std::string("lemma \"x = x\" by simp").substr(anon->proof_offset), "by simp");
}

TEST(ParseTheorem, InsideTheoryWithAttributesAndAssumes) {
  auto t = parse_theorem(
      "theory Foo imports Main begin\nlemma foo [simp]:\n  assumes \"a\"\n  shows \"b\"\n  using assms by simp\nend");
  ASSERT_TRUE(t) << t.error().describe();
  EXPECT_EQ(t->decl.name, "foo");
  EXPECT_EQ(t->decl.attributes, "[simp]");
  EXPECT_EQ(t->decl.statement, "assumes \"a\" shows \"b\"");
}

TEST(Unquote, StripsOneLayer) {
  EXPECT_EQ(unquote("\"rev (rev xs) = xs\""), "rev (rev xs) = xs");
  EXPECT_EQ(unquote("‹x›"), "x");
  EXPECT_EQ(unquote("\\<open>x\\<close>"), "x");
  EXPECT_EQ(unquote("?case"), "?case");
  EXPECT_EQ(unquote("\"a\" \"b\""), "\"a\" \"b\"");
}

TEST(ContainsPlaceholder, FindsNestedSorry) {
  EXPECT_FALSE(contains_placeholder(*parse_proof(fixtures::kRevRevIsar)));
  EXPECT_TRUE(contains_placeholder(*parse_proof("proof - have \"x\" proof - show ?thesis sorry qed then show ?thesis by simp qed")));
  EXPECT_TRUE(contains_placeholder(*parse_proof("apply auto oops")));
}

}  // namespace
}  // namespace hybridprover::syntax
