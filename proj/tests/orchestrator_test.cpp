#include "hybridprover/orchestrator.hpp"

#include <gtest/gtest.h>

#include "fixtures.hpp"

namespace hybridprover::orchestrator {
namespace {

using checker::CheckService;
using checker::MockBackend;
using checker::MockOracle;
using model::envelope;
using model::ScriptedBackend;

syntax::TheoremDecl list_reverse() { return syntax::parse_theorem(fixtures::kListReverseTheorem)->decl; }

syntax::ProofScript parse(std::string_view t) { return *syntax::parse_proof(t); }

const char* kRevRevWithAuto =
    "proof (induction xs) case Nil then show ?case by auto next case (Cons a xs) then show ?case by auto qed";

MockOracle per_case_simp() {
  MockOracle m;
  m.accept("Nil: ?case", "by simp");
  m.accept("Cons a xs: ?case", "by simp");
  return m;
}

PipelineConfig small_config(std::size_t workers = 4) {
  PipelineConfig c;
  c.workers = workers;
  c.whole_sampling.n = 8;
  c.step_sampling.n = 4;
  return c;
}

struct Rig {
  MockBackend prover;
  CheckService service;
  ScriptedBackend whole;
  ScriptedBackend step;

  explicit Rig(MockOracle o, std::size_t slots = 8) : prover(std::move(o)), service(prover, {slots, 5, true}) {}

  Result<ProveResult, PipelineError> prove(const PipelineConfig& cfg) {
    return orchestrator::prove(list_reverse(), cfg, Backends{whole, &step, service});
  }
};

TEST(Prove, ScenarioA_SecondWholeCandidateValid) {
  MockOracle o;
  o.accept("rev (rev xs) = xs", fixtures::kRevRevApply);
  Rig rig(o);
  rig.whole.push({envelope("by auto"), envelope(fixtures::kRevRevApply), envelope("by blast")});
  auto r = rig.prove(small_config(1));
  ASSERT_TRUE(r) << r.error().detail;
  EXPECT_EQ(r->status, ProveStatus::SolvedWhole);
  EXPECT_EQ(r->stats.refinement_checks, 0u);
  EXPECT_EQ(r->stats.candidates_checked, 2u);
  EXPECT_EQ(*r->proof, parse(fixtures::kRevRevApply));
  EXPECT_EQ(r->stats.sketches_built, 0u);
}

TEST(Prove, ScenarioB_RefinedToRevRev) {
  Rig rig(per_case_simp());
  rig.whole.push({envelope(kRevRevWithAuto), envelope("by auto")});
  rig.step.push({envelope("by blast")});
  rig.step.push({envelope("by simp")});
  rig.step.push({envelope("by simp")});
  auto r = rig.prove(small_config());
  ASSERT_TRUE(r) << r.error().detail;
  EXPECT_EQ(r->status, ProveStatus::SolvedRefined);
  EXPECT_EQ(syntax::normalize_text(syntax::render(*r->proof)),
            syntax::normalize_text(fixtures::kRevRevIsarRendered));
  EXPECT_EQ(r->stats.candidates_checked, r->stats.candidates_unique);
  // "by auto" also yields a one-hole sketch, which is refined first.
  EXPECT_EQ(r->stats.sketches_valid, 2u);
  EXPECT_EQ(r->stats.holes_total, 3u);
  EXPECT_EQ(r->stats.refinement_full_checks, 1u);
  EXPECT_LE(r->stats.prover_calls, r->stats.prover_call_bound);
}

TEST(Prove, ScenarioC_Unsolved) {
  MockOracle o;
  Rig rig(o);
  rig.whole.push({envelope(kRevRevWithAuto), envelope("by auto"), "not json"});
  auto r = rig.prove(small_config());
  ASSERT_TRUE(r) << r.error().detail;
  EXPECT_EQ(r->status, ProveStatus::Unsolved);
  EXPECT_FALSE(r->proof);
  EXPECT_EQ(r->stats.candidates_generated, 3u);
  EXPECT_EQ(r->stats.candidates_filtered, 2u);
  EXPECT_EQ(r->stats.step_model_failures, 3u);  // script exhausted, one call per hole
  EXPECT_EQ(r->stats.refinement_full_checks, 0u);
  EXPECT_LE(r->stats.prover_calls, r->stats.prover_call_bound);
}

TEST(Prove, DeterministicWithOneWorker) {
  std::optional<ProveResult> first;
  for (int run = 0; run < 3; ++run) {
    Rig rig(per_case_simp());
    rig.whole.push({envelope(kRevRevWithAuto), envelope("by auto"), envelope("apply simp done")});
    rig.step.push({envelope("by auto"), envelope("by simp")});
    rig.step.push({envelope("by simp")});
    auto r = rig.prove(small_config(1));
    ASSERT_TRUE(r);
    if (!first) first = *r;
    EXPECT_EQ(*r, *first);
  }
}

TEST(Prove, PlaceholderCandidatesAreSketchedNotChecked) {
  Rig rig(per_case_simp());
  rig.whole.push({envelope("proof (induction xs) case Nil then show ?case sorry next case (Cons a xs) then show ?case sorry qed")});
  rig.step.push({envelope("by simp")});
  rig.step.push({envelope("by simp")});
  auto r = rig.prove(small_config());
  ASSERT_TRUE(r);
  EXPECT_EQ(r->stats.candidates_unique, 0u);
  EXPECT_EQ(r->stats.candidates_checked, 0u);
  EXPECT_EQ(r->status, ProveStatus::SolvedRefined);
}

TEST(Prove, DuplicateCandidatesCheckedOnce) {
  MockOracle o;
  Rig rig(o);
  rig.whole.push({envelope("by auto"), envelope("by  auto"), envelope("by simp")});
  auto cfg = small_config();
  cfg.refine = false;
  auto r = rig.prove(cfg);
  ASSERT_TRUE(r);
  EXPECT_EQ(r->stats.candidates_unique, 2u);
  EXPECT_EQ(r->stats.candidates_checked, 2u);
}

TEST(Prove, BackendFailureIsAnError) {
  Rig rig(MockOracle{});
  auto r = rig.prove(small_config());
  ASSERT_FALSE(r);
  EXPECT_EQ(r.error().kind, PipelineErrorKind::Backend);
}

TEST(Prove, PersistentCheckerErrorPropagates) {
  MockOracle o;
  o.fail_first = 1000;
  Rig rig(o);
  rig.whole.push({envelope("by auto")});
  auto r = rig.prove(small_config());
  ASSERT_FALSE(r);
  EXPECT_EQ(r.error().kind, PipelineErrorKind::Checker);
  EXPECT_EQ(rig.service.restarts(), 1u);
}

TEST(Prove, TransientCheckerErrorIsRetried) {
  MockOracle o;
  o.fail_first = 1;
  o.accept("rev (rev xs) = xs", "by simp");
  Rig rig(o);
  rig.whole.push({envelope("by simp")});
  auto r = rig.prove(small_config());
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, ProveStatus::SolvedWhole);
}

TEST(Prove, ExhaustiveModeRecordsEverySample) {
  MockOracle o;
  o.accept("rev (rev xs) = xs", "by simp");
  Rig rig(o);
  rig.whole.push({envelope("by auto"), envelope("by simp"), "junk", envelope("by simp")});
  auto cfg = small_config();
  cfg.exhaustive_whole = true;
  auto r = rig.prove(cfg);
  ASSERT_TRUE(r);
  EXPECT_EQ(r->sample_outcomes, (std::vector<bool>{false, true, false, true}));
  EXPECT_EQ(r->stats.candidates_checked, 2u);
}

TEST(CheckCandidates, OnlyLastValid) {
  MockOracle o;
  o.accept("rev (rev xs) = xs", "by blast");
  MockBackend prover(o);
  CheckService svc(prover);
  std::vector<syntax::ProofScript> c = {parse("by auto"), parse("by simp"), parse("by force"), parse("by blast")};
  for (std::size_t w : {1u, 4u}) {
    auto cfg = small_config(w);
    auto out = check_candidates_parallel(c, list_reverse(), cfg, svc);
    ASSERT_TRUE(out.valid_index);
    EXPECT_EQ(*out.valid_index, 3u);
    EXPECT_GE(out.checked, 1u);
    EXPECT_LE(out.checked, 4u);
  }
}

TEST(CheckCandidates, NoneValid) {
  MockBackend prover(MockOracle{});
  CheckService svc(prover);
  std::vector<syntax::ProofScript> c = {parse("by auto"), parse("by simp")};
  auto out = check_candidates_parallel(c, list_reverse(), small_config(), svc);
  EXPECT_FALSE(out.valid_index);
  EXPECT_EQ(out.checked, 2u);
}

TEST(CheckCandidates, EarlyValidCancelsTheRest) {
  MockOracle o;
  o.accept("rev (rev xs) = xs", "by simp");
  o.latency = std::chrono::milliseconds(20);
  o.valid_latency = std::chrono::milliseconds(1);
  MockBackend prover(o);
  CheckService svc(prover, {16, 5, true});
  std::vector<syntax::ProofScript> c = {parse("by simp")};
  for (int i = 0; i < 99; ++i) c.push_back(parse("by (simp add: f" + std::to_string(i) + ")"));
  auto out = check_candidates_parallel(c, list_reverse(), small_config(16), svc);
  ASSERT_TRUE(out.valid_index);
  EXPECT_EQ(*out.valid_index, 0u);
  EXPECT_LT(out.checked, 100u);
}

sketch::ProofSketch rev_rev_sketch() { return sketch::build_sketch(parse(fixtures::kRevRevIsar)); }

TEST(Refine, TwoHolesBySimp) {
  MockBackend prover(per_case_simp());
  CheckService svc(prover);
  ScriptedBackend whole, step;
  step.push({envelope("by simp")});
  step.push({envelope("by simp")});
  Backends b{whole, &step, svc};
  StageStats st;
  auto cfg = small_config();
  auto out = refine_sketch(rev_rev_sketch(), list_reverse(), cfg, b, st);
  ASSERT_TRUE(out);
  ASSERT_TRUE(*out);
  EXPECT_EQ(**out, parse(fixtures::kRevRevIsar));
  // Heuristics contribute the other candidates; "by simp" is a duplicate of the step answer.
  const std::size_t per_hole = 1 + model::heuristic_tactics().size() - 1;
  EXPECT_LE(st.refinement_checks, 2 * per_hole + 1);
  EXPECT_EQ(st.refinement_full_checks, 1u);
}

TEST(Refine, CombinedProofInvalidOnceThenSecondCombination) {
  MockOracle o = per_case_simp();
  o.accept("Nil: ?case", "by auto");
  o.accept("Cons a xs: ?case", "by auto");
  o.reject_proof(kRevRevWithAuto);  // the first combination tried
  MockBackend prover(o);
  CheckService svc(prover);
  ScriptedBackend whole, step;
  Backends b{whole, nullptr, svc};
  auto cfg = small_config();
  cfg.use_step_model = false;
  cfg.use_hammer = false;
  StageStats st;
  auto out = refine_sketch(rev_rev_sketch(), list_reverse(), cfg, b, st);
  ASSERT_TRUE(out);
  ASSERT_TRUE(*out);
  EXPECT_EQ(st.refinement_full_checks, 2u);
  const auto text = syntax::render(**out);
  EXPECT_NE(text.find("by auto"), std::string::npos) << text;
  EXPECT_NE(text.find("by simp"), std::string::npos) << text;
}

TEST(Refine, BudgetCapsFullChecks) {
  MockOracle o;
  auto s = rev_rev_sketch();
  for (const auto& x : model::heuristic_tactics()) {
    o.accept("Nil: ?case", x.text);
    o.accept("Cons a xs: ?case", x.text);
    for (const auto& y : model::heuristic_tactics()) {
      auto full = sketch::substitute(s, {{s.holes[0].id, x.text}, {s.holes[1].id, y.text}});
      if (full) o.reject_proof(syntax::render(*full));
    }
  }
  MockBackend prover(o);
  CheckService svc(prover);
  ScriptedBackend whole;
  Backends b{whole, nullptr, svc};
  auto cfg = small_config();
  cfg.use_step_model = false;
  cfg.use_hammer = false;
  cfg.refine_budget = 5;
  StageStats st;
  auto out = refine_sketch(s, list_reverse(), cfg, b, st);
  ASSERT_TRUE(out);
  EXPECT_FALSE(*out);
  EXPECT_EQ(st.refinement_full_checks, 5u);
  EXPECT_LE(st.prover_calls, refinement_call_bound(cfg, 2));
}

TEST(Refine, HammerSuggestionsUsed) {
  MockOracle o = per_case_simp();
  o.suggest("Nil: ?case", "by simp");
  o.suggest("Cons a xs: ?case", "by simp");
  MockBackend prover(o);
  CheckService svc(prover);
  ScriptedBackend whole;
  Backends b{whole, nullptr, svc};
  auto cfg = small_config();
  cfg.use_step_model = false;
  cfg.use_heuristics = false;
  StageStats st;
  auto out = refine_sketch(rev_rev_sketch(), list_reverse(), cfg, b, st);
  ASSERT_TRUE(out);
  ASSERT_TRUE(*out);
  EXPECT_EQ(st.hammer_calls, 2u);
  EXPECT_EQ(st.refinement_checks, 3u);
}

TEST(ResultRecord, Fields) {
  ProveResult r;
  r.status = ProveStatus::SolvedWhole;
  r.proof = parse("by simp");
  auto j = result_record("list_reverse", r);
  EXPECT_EQ(j["theorem_name"], "list_reverse");
  EXPECT_EQ(j["status"], "SolvedWhole");
  EXPECT_EQ(j["final_proof"], "by simp");
  EXPECT_TRUE(j["stats"].contains("prover_call_bound_formula"));
  r.proof.reset();
  EXPECT_FALSE(result_record("x", r).contains("final_proof"));
}

}  // namespace
}  // namespace hybridprover::orchestrator
