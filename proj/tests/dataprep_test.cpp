#include "hybridprover/dataprep.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "fixtures.hpp"

namespace hybridprover::dataprep {
namespace {

namespace fs = std::filesystem;

std::string purified(std::string_view t) {
  auto r = purify(t);
  EXPECT_TRUE(r) << t;
  return r ? *r : std::string();
}

TEST(Purify, TrailingComment) { EXPECT_EQ(purified("by simp  (* trivial *)"), "by simp"); }

TEST(Purify, NestedComment) { EXPECT_EQ(purified("(* a (* nested *) b *) by auto"), "by auto"); }

TEST(Purify, TabsCollapse) { EXPECT_EQ(purified("apply\t\tauto"), "apply auto"); }

TEST(Purify, LinesTrimmedAndBlankLinesDropped) {
  EXPECT_EQ(purified("  proof -   \n\n  (* only a comment *)\n   show ?thesis  by simp \t\nqed  "),
            "proof -\nshow ?thesis by simp\nqed");
}

TEST(Purify, LiteralsUntouched) {
  EXPECT_EQ(purified("have \"a  (* b *)  c\" by simp"), "have \"a  (* b *)  c\" by simp");
  EXPECT_EQ(purified("have \\<open>x  (* y *)\\<close> by simp"), "have \xE2\x80\xB9x  (* y *)\xE2\x80\xBA by simp");
}

TEST(Purify, CartoucheRewrite) { EXPECT_EQ(purified("using \\<open>P\\<close>"), "using \xE2\x80\xB9P\xE2\x80\xBA"); }

TEST(Purify, UnterminatedComment) {
  auto r = purify("by simp (* open");
  ASSERT_FALSE(r);
  EXPECT_EQ(r.error().kind, PrepErrorKind::UnterminatedComment);
}

TEST(Purify, CommentBetweenParenAndStarDoesNotFuse) {
  const auto once = purified("((* x *)*)");
  EXPECT_EQ(purified(once), once);
}

TEST(Purify, IdempotentOnGeneratedStrings) {
  const std::vector<std::string> alphabet = {"a",  "b",  " ",  "  ", "\t", "\n", "(",         "*",
                                             ")",  "(*", "*)", "\"", "\\", "`",  "\\<open>", "\\<close>",
                                             "\xE2\x80\xB9", "\xE2\x80\xBA", "by", "simp", "\r"};
  std::mt19937 rng(12345);
  std::uniform_int_distribution<std::size_t> len(0, 40), pick(0, alphabet.size() - 1);
  std::size_t succeeded = 0;
  for (int n = 0; n < 1000; ++n) {
    std::string s;
    for (std::size_t k = len(rng); k > 0; --k) s += alphabet[pick(rng)];
    auto once = purify(s);
    if (!once) continue;
    ++succeeded;
    auto twice = purify(*once);
    ASSERT_TRUE(twice) << "input: " << s;
    ASSERT_EQ(*twice, *once) << "input: " << s;
  }
  EXPECT_GT(succeeded, 300u);
}

CorpusRecord rec(std::string proof, std::string src = "A.thy") {
  return {"lemma \"x = x\"", std::move(proof), std::move(src)};
}

std::string apply_proof(std::size_t applies) {
  std::string p;
  for (std::size_t i = 0; i < applies; ++i) p += "apply simp\n";
  return p + "done";
}

// Isar proof with `steps` steps: one for the block plus one per statement.
std::string isar_proof(std::size_t steps) {
  std::string p = "proof -\n";
  for (std::size_t i = 0; i + 2 < steps; ++i) p += "  have \"x = x\" by simp\n";
  return p + "  show ?thesis by simp\nqed";
}

TEST(SplitByStyle, RevRev) {
  auto s = split_by_style({rec(fixtures::kRevRevIsar), rec(fixtures::kRevRevApply), rec("proof (")});
  ASSERT_EQ(s.isar.size(), 1u);
  ASSERT_EQ(s.apply.size(), 1u);
  ASSERT_EQ(s.rejects.size(), 1u);
  EXPECT_EQ(s.isar[0].steps, 7u + 1u);
  EXPECT_EQ(s.apply[0].steps, 2u);
  EXPECT_FALSE(s.rejects[0].reason.empty());
}

TEST(SplitByStyle, MixedGoesToIsar) {
  auto s = split_by_style({rec("apply (induction xs)\nsubgoal proof - show ?thesis by simp qed\ndone")});
  EXPECT_EQ(s.isar.size() + s.rejects.size(), 1u);
  if (!s.rejects.empty()) GTEST_SKIP() << s.rejects[0].reason;
  EXPECT_EQ(s.isar.size(), 1u);
}

TEST(SplitByStyle, PartitionComplete) {
  std::vector<CorpusRecord> in;
  for (const auto& e : fixtures::load_corpus()) in.push_back({e.theorem, e.proof, e.source_path});
  in.push_back(rec("qed"));
  const auto n = in.size();
  auto s = split_by_style(in);
  EXPECT_EQ(s.isar.size() + s.apply.size() + s.rejects.size(), n);
}

TEST(FilterBySteps, ApplyBoundaries) {
  auto s = split_by_style({rec(apply_proof(1)), rec(apply_proof(5)), rec(apply_proof(6))});
  ASSERT_EQ(s.apply.size(), 3u);
  EXPECT_EQ(s.apply[1].steps, 5u);
  EXPECT_EQ(s.apply[2].steps, 6u);
  auto kept = filter_by_steps(s.apply, syntax::ProofStyle::ApplyStyle, {});
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[1].steps, 5u);
}

TEST(FilterBySteps, IsarBoundaries) {
  auto s = split_by_style({rec(isar_proof(4)), rec(isar_proof(5)), rec(isar_proof(50)), rec(isar_proof(51))});
  ASSERT_EQ(s.isar.size(), 4u);
  EXPECT_EQ(s.isar[0].steps, 4u);
  EXPECT_EQ(s.isar[3].steps, 51u);
  auto kept = filter_by_steps(s.isar, syntax::ProofStyle::Isar, {});
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].steps, 5u);
  EXPECT_EQ(kept[1].steps, 50u);
}

TEST(FilterBySteps, OtherStyleExcluded) {
  auto s = split_by_style({rec(apply_proof(2)), rec(isar_proof(6))});
  std::vector<CorpusRecord> all = s.apply;
  all.insert(all.end(), s.isar.begin(), s.isar.end());
  EXPECT_EQ(filter_by_steps(all, syntax::ProofStyle::Isar, {}).size(), 1u);
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("hp_prep_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<nlohmann::json> read_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<nlohmann::json> out;
  std::string line;
  while (std::getline(in, line)) out.push_back(nlohmann::json::parse(line));
  return out;
}

TEST(EmitRecords, FieldNamesAndLabel) {
  TempDir d;
  PrepConfig cfg;
  ASSERT_TRUE(emit_records({rec("by simp", "B.thy")}, d.path / "a.jsonl", cfg));
  std::ifstream in(d.path / "a.jsonl");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, R"({"theorem":"lemma \"x = x\"","Isabelle_proof":"by simp"})");
  cfg.emit_labels = true;
  ASSERT_TRUE(emit_records({rec("by simp", "B.thy")}, d.path / "b.jsonl", cfg));
  EXPECT_EQ(read_lines(d.path / "b.jsonl")[0]["label"], "B.thy");
}

TEST(EmitRecords, EmptyListEmptyFile) {
  TempDir d;
  ASSERT_TRUE(emit_records({}, d.path / "e.jsonl", {}));
  EXPECT_EQ(fs::file_size(d.path / "e.jsonl"), 0u);
}

TEST(EmitRecords, StableOrderBySourcePath) {
  TempDir d;
  ASSERT_TRUE(emit_records({rec("by b", "B.thy"), rec("by a1", "A.thy"), rec("by a2", "A.thy")}, d.path / "o.jsonl", {}));
  auto lines = read_lines(d.path / "o.jsonl");
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0]["Isabelle_proof"], "by a1");
  EXPECT_EQ(lines[1]["Isabelle_proof"], "by a2");
  EXPECT_EQ(lines[2]["Isabelle_proof"], "by b");
}

TEST(EmitRecords, UnwritablePath) {
  auto r = emit_records({rec("by simp")}, "/nonexistent_dir_hp/x.jsonl", {});
  ASSERT_FALSE(r);
  EXPECT_EQ(r.error().kind, PrepErrorKind::IOFailure);
}

TEST(Split, ParseAndDeterministicBuckets) {
  auto p = parse_split("95,1,4");
  ASSERT_TRUE(p);
  EXPECT_EQ(*p, (std::vector<unsigned>{95, 1, 4}));
  EXPECT_FALSE(parse_split("95,1,5"));
  EXPECT_FALSE(parse_split("95,,5"));
  EXPECT_FALSE(parse_split("a"));
  std::vector<std::size_t> counts(3);
  for (int i = 0; i < 2000; ++i) {
    CorpusRecord r{"lemma t" + std::to_string(i), "by simp", "F.thy"};
    const auto b = split_bucket(r, *p);
    EXPECT_EQ(b, split_bucket(r, *p));
    ++counts[b];
  }
  EXPECT_GT(counts[0], 1800u);
  EXPECT_GT(counts[2], 30u);
}

TEST(RunPrep, EmittedRecordsReparseAndPassFilter) {
  TempDir d;
  const auto in_dir = d.path / "in";
  fs::create_directories(in_dir);
  {
    std::ofstream out(in_dir / "c.jsonl");
    out << nlohmann::json{{"theorem", "lemma a: \"x = x\""}, {"proof", "apply\t\tsimp (* c *)\ndone"}, {"source_path", "X.thy"}}.dump() << "\n";
    out << nlohmann::json{{"theorem", "lemma b: \"x = x\""}, {"proof", isar_proof(6)}, {"source_path", "X.thy"}}.dump() << "\n";
    out << nlohmann::json{{"theorem", "lemma c: \"x = x\""}, {"proof", apply_proof(9)}, {"source_path", "X.thy"}}.dump() << "\n";
    out << nlohmann::json{{"theorem", "lemma d: \"x = x\""}, {"proof", "by simp (* open"}, {"source_path", "X.thy"}}.dump() << "\n";
    out << nlohmann::json{{"theorem", "lemma e: \"x = x\""}, {"proof", "proof ("}, {"source_path", "X.thy"}}.dump() << "\n";
  }
  PrepConfig cfg;
  cfg.emit_labels = true;
  auto s = run_prep(in_dir, d.path / "out", cfg);
  ASSERT_TRUE(s) << s.error().detail;
  EXPECT_EQ(s->input, 5u);
  EXPECT_EQ(s->apply_kept, 1u);
  EXPECT_EQ(s->isar_kept, 1u);
  EXPECT_EQ(s->dropped_by_steps, 1u);
  EXPECT_EQ(s->rejects, 2u);
  EXPECT_EQ(s->input, s->apply_kept + s->isar_kept + s->dropped_by_steps + s->rejects);
  for (const char* name : {"isar.jsonl", "apply.jsonl"}) {
    for (const auto& j : read_lines(d.path / "out" / name)) {
      auto p = syntax::parse_proof(j["Isabelle_proof"].get<std::string>());
      ASSERT_TRUE(p);
      CorpusRecord r{j["theorem"], j["Isabelle_proof"], j["label"], syntax::classify_style(*p), syntax::count_steps(*p)};
      EXPECT_TRUE(within_step_bounds(r, cfg));
    }
  }
  auto apply = read_lines(d.path / "out" / "apply.jsonl");
  ASSERT_EQ(apply.size(), 1u);
  EXPECT_EQ(apply[0]["Isabelle_proof"], "apply simp\ndone");
  EXPECT_EQ(read_lines(d.path / "out" / "rejects.jsonl").size(), 2u);
}

TEST(RunPrep, SplitWritesThreeFilesPerStyle) {
  TempDir d;
  {
    std::ofstream out(d.path / "c.jsonl");
    for (int i = 0; i < 50; ++i)
      out << nlohmann::json{{"theorem", "lemma l" + std::to_string(i) + ": \"x = x\""}, {"proof", "by simp"}, {"source_path", "Y.thy"}}.dump() << "\n";
  }
  auto s = run_prep(d.path / "c.jsonl", d.path / "out", {}, parse_split("95,1,4"));
  ASSERT_TRUE(s);
  for (const char* f : {"apply.train.jsonl", "apply.valid.jsonl", "apply.test.jsonl", "isar.test.jsonl"})
    EXPECT_TRUE(fs::exists(d.path / "out" / f)) << f;
  std::size_t total = 0;
  for (const char* f : {"apply.train.jsonl", "apply.valid.jsonl", "apply.test.jsonl"})
    total += read_lines(d.path / "out" / f).size();
  EXPECT_EQ(total, 50u);
}

}  // namespace
}  // namespace hybridprover::dataprep
