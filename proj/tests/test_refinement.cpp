#include "confgap/refinement.hpp"

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace confgap;
using testing_support::features;
using testing_support::gaussian_rows;

namespace {

FeatureMatrix named(const Matrix &rows, std::vector<std::string> cols, const std::string &prefix,
                    FeatureKind kind = FeatureKind::DataDerived) {
  return FeatureMatrix(testing_support::make_ids(rows.rows(), prefix), std::move(cols), rows, kind);
}

// Source and target agree on every column except `noise`, which is shifted in
// the target.
DomainPair planted_pair(std::uint64_t seed, double shift) {
  const Matrix s = gaussian_rows(200, 3, seed);
  Matrix t = gaussian_rows(200, 3, seed + 1000);
  t.col(2).array() += shift;
  const std::vector<std::string> cols{"a", "b", "noise"};
  return {"pair" + std::to_string(seed), named(s, cols, "s"), named(t, cols, "t")};
}

}  // namespace

TEST(Fuse, ConcatenatesDataFirst) {
  const FeatureMatrix d = named((Matrix(2, 2) << 1, 2, 3, 4).finished(), {"d0", "d1"}, "s");
  const FeatureMatrix k = named((Matrix(2, 1) << 9, 8).finished(), {"k0"}, "s", FeatureKind::Knowledge);
  const FeatureMatrix f = fuse(d, k);
  EXPECT_EQ(f.columns(), (std::vector<std::string>{"d0", "d1", "k0"}));
  EXPECT_EQ(f.kind(), FeatureKind::Fused);
  EXPECT_EQ(f.rows()(1, 2), 8);
}

TEST(Fuse, MatchesRowsById) {
  const FeatureMatrix d({"a", "b"}, {"d0"}, (Matrix(2, 1) << 1, 2).finished(), FeatureKind::DataDerived);
  const FeatureMatrix k({"b", "a"}, {"k0"}, (Matrix(2, 1) << 20, 10).finished(), FeatureKind::Knowledge);
  const FeatureMatrix f = fuse(d, k);
  EXPECT_EQ(f.rows()(0, 1), 10);
  EXPECT_EQ(f.rows()(1, 1), 20);
}

TEST(Fuse, RejectsMismatchedRows) {
  const FeatureMatrix d = named(Matrix::Zero(3, 1), {"d0"}, "s");
  EXPECT_THROW(fuse(d, named(Matrix::Zero(2, 1), {"k0"}, "s")), InputError);
  EXPECT_THROW(fuse(d, named(Matrix::Zero(3, 1), {"k0"}, "x")), InputError);
  EXPECT_THROW(fuse(d, named(Matrix::Zero(3, 1), {"d0"}, "s")), InputError);
}

TEST(Ablation, GreedyRemovesPlantedShiftColumn) {
  const std::vector<DomainPair> pairs{planted_pair(1, 6.0), planted_pair(2, 6.0)};
  const auto trace = ablation_search(pairs, {"a", "b", "noise"}, {});
  // Later rounds may commit further removals that help by chance; the planted
  // column must go first.
  ASSERT_FALSE(trace.best_removed.empty());
  EXPECT_EQ(trace.best_removed.front(), "noise");
  EXPECT_EQ(std::count(trace.best_subset.begin(), trace.best_subset.end(), "noise"), 0);
  EXPECT_GT(trace.best_avg_sdcd, trace.steps.front().avg_sdcd + 30.0);
  EXPECT_EQ(trace.steps.front().removed_column, "");
  EXPECT_EQ(trace.steps.front().per_pair_sdcd.size(), 2u);
}

TEST(Ablation, EmptyRemovableReturnsBaseline) {
  const std::vector<DomainPair> pairs{planted_pair(3, 6.0)};
  const auto trace = ablation_search(pairs, {}, {});
  ASSERT_EQ(trace.steps.size(), 1u);
  EXPECT_TRUE(trace.best_removed.empty());
  EXPECT_EQ(trace.best_avg_sdcd, trace.steps[0].avg_sdcd);
}

TEST(Ablation, ExhaustiveAtLeastGreedy) {
  const std::vector<DomainPair> pairs{planted_pair(4, 1.5), planted_pair(5, 3.0)};
  AblationOptions opt;
  const auto greedy = ablation_search(pairs, {"a", "b", "noise"}, opt);
  opt.strategy = AblationStrategy::ExhaustiveSmall;
  const auto exhaustive = ablation_search(pairs, {"a", "b", "noise"}, opt);
  EXPECT_GE(exhaustive.best_avg_sdcd, greedy.best_avg_sdcd);
  EXPECT_EQ(exhaustive.steps.size(), 1u + 6u);  // the full-removal subset is skipped
}

TEST(Ablation, NeverBelowBaseline) {
  for (std::uint64_t seed : {6, 7, 8}) {
    const std::vector<DomainPair> pairs{planted_pair(seed, 0.0)};
    const auto trace = ablation_search(pairs, {"a", "noise"}, {});
    EXPECT_GE(trace.best_avg_sdcd, trace.steps.front().avg_sdcd);
  }
}

TEST(Ablation, ZeroVarianceColumnBarelyMatters) {
  Matrix s = gaussian_rows(120, 3, 9);
  Matrix t = gaussian_rows(120, 3, 10, 0.3);
  s.col(2).setConstant(1.0);
  t.col(2).setConstant(1.0);
  const std::vector<std::string> cols{"a", "b", "flat"};
  const std::vector<DomainPair> pairs{{"p", named(s, cols, "s"), named(t, cols, "t")}};
  const auto trace = ablation_search(pairs, {"flat"}, {});
  ASSERT_EQ(trace.steps.size(), 2u);
  EXPECT_LE(std::abs(trace.steps[1].avg_sdcd - trace.steps[0].avg_sdcd), 1e-6);
}

TEST(Ablation, ValidatesInput) {
  const std::vector<DomainPair> pairs{planted_pair(1, 0.0)};
  EXPECT_THROW(ablation_search({}, {}, {}), InputError);
  EXPECT_THROW(ablation_search(pairs, {"missing"}, {}), InputError);
  EXPECT_THROW(ablation_search(pairs, {"a", "a"}, {}), InputError);
  std::vector<std::string> cols;
  for (int j = 0; j < 13; ++j) cols.push_back("c" + std::to_string(j));
  const Matrix s = gaussian_rows(20, 13, 1);
  const std::vector<DomainPair> wide{{"w", named(s, cols, "s"), named(s, cols, "t")}};
  AblationOptions opt;
  opt.strategy = AblationStrategy::ExhaustiveSmall;
  EXPECT_THROW(ablation_search(wide, cols, opt), InputError);
}

TEST(Ablation, Deterministic) {
  const std::vector<DomainPair> pairs{planted_pair(11, 2.0), planted_pair(12, 2.0)};
  const auto a = ablation_search(pairs, {"a", "b", "noise"}, {});
  const auto b = ablation_search(pairs, {"a", "b", "noise"}, {});
  ASSERT_EQ(a.steps.size(), b.steps.size());
  for (std::size_t i = 0; i < a.steps.size(); ++i) EXPECT_EQ(a.steps[i].avg_sdcd, b.steps[i].avg_sdcd);
  EXPECT_EQ(a.best_removed, b.best_removed);
}
