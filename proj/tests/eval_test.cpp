#include "hybridprover/eval.hpp"

#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"

namespace hybridprover::eval {
namespace {

std::vector<bool> pass_at(std::size_t n, std::initializer_list<std::size_t> passes) {
  std::vector<bool> v(n, false);
  for (auto p : passes) v[p] = true;
  return v;
}

TEST(PassAtK, LastSampleOnly) {
  Outcomes o = {pass_at(128, {127})};
  EXPECT_EQ(*compute_pass_at_k(o, 128), 1.0);
  EXPECT_EQ(*compute_pass_at_k(o, 32), 0.0);
}

TEST(PassAtK, AllFail) {
  Outcomes o = {pass_at(128, {}), pass_at(128, {})};
  for (std::size_t k : {1u, 32u, 128u}) EXPECT_EQ(*compute_pass_at_k(o, k), 0.0);
}

TEST(PassAtK, TwoTheoremsOnePassesAtTen) {
  Outcomes o = {pass_at(128, {10}), pass_at(128, {})};
  EXPECT_EQ(*compute_pass_at_k(o, 32), 0.5);
  EXPECT_EQ(*compute_pass_at_k(o, 10), 0.0);
  EXPECT_EQ(*compute_pass_at_k(o, 11), 0.5);
}

TEST(PassAtK, SyntheticMatrix) {
  // Hand-computed: first passes at 0, 5, 40, 127, never.
  Outcomes o = {pass_at(128, {0, 3}), pass_at(128, {5}), pass_at(128, {40, 90}), pass_at(128, {127}),
                pass_at(128, {})};
  EXPECT_EQ(*compute_pass_at_k(o, 1), 1.0 / 5);
  EXPECT_EQ(*compute_pass_at_k(o, 32), 2.0 / 5);
  EXPECT_EQ(*compute_pass_at_k(o, 128), 4.0 / 5);
}

TEST(PassAtK, InsufficientSamples) {
  auto r = compute_pass_at_k({pass_at(8, {})}, 9);
  ASSERT_FALSE(r);
  EXPECT_EQ(r.error().kind, EvalErrorKind::InsufficientSamples);
}

TEST(PassAtK, MonotoneInK) {
  std::mt19937 rng(7);
  std::bernoulli_distribution coin(0.02);
  for (int trial = 0; trial < 50; ++trial) {
    Outcomes o(20, std::vector<bool>(64));
    for (auto& t : o)
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = coin(rng);
    double prev = 0;
    for (std::size_t k = 1; k <= 64; ++k) {
      const double v = *compute_pass_at_k(o, k);
      ASSERT_GE(v, prev);
      prev = v;
      ASSERT_GE(*compute_pass_at_k_unbiased(o, k) + 1e-12, k == 1 ? 0.0 : *compute_pass_at_k_unbiased(o, k - 1));
    }
  }
}

// Brute force over all k-subsets for small n.
double subsets_oracle(const std::vector<bool>& s, std::size_t k) {
  const std::size_t n = s.size();
  std::size_t hit = 0, total = 0;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != k) continue;
    ++total;
    bool any = false;
    for (std::size_t i = 0; i < n; ++i)
      if ((mask >> i) & 1u) any = any || s[i];
    hit += any;
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

TEST(PassAtK, UnbiasedMatchesSubsetEnumeration) {
  const std::vector<std::vector<bool>> cases = {pass_at(10, {3}), pass_at(10, {0, 9}), pass_at(10, {}),
                                                pass_at(10, {1, 2, 3, 4, 5, 6, 7})};
  for (const auto& c : cases)
    for (std::size_t k = 1; k <= 10; ++k)
      EXPECT_NEAR(*compute_pass_at_k_unbiased({c}, k), subsets_oracle(c, k), 1e-12);
}

TEST(DefaultKs, PowersThenN) {
  EXPECT_EQ(default_ks(128), (std::vector<std::size_t>{1, 2, 4, 8, 16, 32, 64, 128}));
  EXPECT_EQ(default_ks(32), (std::vector<std::size_t>{1, 2, 4, 8, 16, 32}));
  EXPECT_EQ(default_ks(12), (std::vector<std::size_t>{1, 2, 4, 8, 12}));
}

TEST(RunEval, ScriptedTheoremSet) {
  checker::MockOracle o;
  o.accept("rev (rev xs) = xs", "by simp");
  checker::MockBackend prover(o);
  checker::CheckService svc(prover);
  model::ScriptedBackend whole;
  whole.push({model::envelope("by auto"), model::envelope("by simp"), model::envelope("by blast"),
              model::envelope("by simp")});
  whole.push({model::envelope("by auto"), "junk", model::envelope("by blast"), model::envelope("by force")});
  orchestrator::PipelineConfig cfg;
  cfg.whole_sampling.n = 4;
  cfg.workers = 1;
  cfg.refine = false;
  std::vector<DatasetEntry> ds = {{"b_rev", fixtures::kListReverseTheorem},
                                  {"a_other", "theorem other: \"length (rev xs) = length xs\""}};
  auto rep = run_eval(ds, cfg, {whole, nullptr, svc});
  ASSERT_EQ(rep.theorems.size(), 2u);
  EXPECT_EQ(rep.theorems[0].name, "a_other");
  EXPECT_EQ(rep.solved(), 1u);
  EXPECT_EQ(rep.success_rate(), 0.5);
  EXPECT_EQ(rep.pass_at_k.at(1), 0.0);
  EXPECT_EQ(rep.pass_at_k.at(2), 0.5);
  EXPECT_EQ(rep.pass_at_k.at(4), 0.5);
  auto agg = aggregate_record(rep, {{"n", 4}});
  EXPECT_EQ(agg["pass_at_k"]["4"], 0.5);
  EXPECT_EQ(agg["stage_attribution"]["solved_whole"], 1);
  EXPECT_EQ(agg["config"]["n"], 4);
}

TEST(RunEval, BackendFailureRecordedAsError) {
  checker::MockBackend prover(checker::MockOracle{});
  checker::CheckService svc(prover);
  model::ScriptedBackend whole;
  orchestrator::PipelineConfig cfg;
  cfg.whole_sampling.n = 2;
  auto rep = run_eval({{"t", fixtures::kListReverseTheorem}}, cfg, {whole, nullptr, svc});
  ASSERT_EQ(rep.theorems.size(), 1u);
  EXPECT_TRUE(rep.theorems[0].error);
  EXPECT_EQ(rep.errors(), 1u);
  EXPECT_EQ(rep.pass_at_k.at(2), 0.0);
  EXPECT_EQ(theorem_record(rep.theorems[0])["status"], "Error");
}

}  // namespace
}  // namespace hybridprover::eval
