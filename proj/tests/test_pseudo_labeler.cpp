#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "smis/pseudo_labeler.hpp"
#include "test_util.hpp"

using namespace smis;
using testutil::to_labels;
using testutil::to_volume;

TEST(Cosine, BasicValues) {
  const std::vector<double> a{1, 2, 3}, b{4, 5, 6};
  EXPECT_NEAR(cosine_similarity<double>(a, a), 1.0, 1e-15);
  EXPECT_NEAR(cosine_similarity<double>(std::vector<double>{1, 0}, std::vector<double>{0, 1}), 0.0, 1e-15);
  EXPECT_NEAR(cosine_similarity<double>(a, b), 32.0 / (std::sqrt(14.0) * std::sqrt(77.0)), 1e-12);
  EXPECT_NEAR(cosine_similarity<double>(a, b), 0.97463, 1e-5);
}

TEST(Cosine, ZeroNormGivesSentinel) {
  EXPECT_EQ(cosine_similarity<double>(std::vector<double>{0, 0}, std::vector<double>{1, 0}), -1.0);
  EXPECT_EQ(cosine_similarity<double>(std::vector<double>{1e-14, 0}, std::vector<double>{1, 0}), -1.0);
}

TEST(LabelDense, ExactAlignmentAndScaleInvariance) {
  DenseVectorSet<double> p{2, 2, {{1, 0}, {0, 1}}};
  Volume<double> f(2, 1, 2);
  f(0, 0, 0) = 2;   // (2, 0) -> class 0
  f(1, 0, 1) = 0.5;  // (0, 0.5) -> class 1
  auto m = label_dense(f, p);
  EXPECT_EQ(m.at(0, 0), 0);
  EXPECT_EQ(m.at(1, 0), 1);
  f(0, 0, 1) = 0.4;
  const auto before = label_dense(f, p);
  f(0, 0, 1) *= 3;
  f(1, 0, 1) *= 3;
  EXPECT_EQ(label_dense(f, p), before);
}

TEST(LabelDense, TiesGoToLowestClass) {
  DenseVectorSet<double> p{3, 2, {{0, 1}, {1, 0}, {1, 0}}};
  Volume<double> f(2, 1, 1);
  f(0, 0, 0) = 1;
  EXPECT_EQ(label_dense(f, p).at(0, 0), 1);
}

TEST(LabelDense, EmptyPrototypesRejected) {
  EXPECT_THROW(label_dense(Volume<double>(2, 2, 2), DenseVectorSet<double>{}), InputError);
}

TEST(LabelDense, MatchesExhaustiveArgmax) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const auto g = oracle::random_grid(8, 4, 4, rng);
    std::vector<std::vector<double>> protos;
    for (int c = 0; c < 5; ++c) protos.push_back(oracle::cell(oracle::random_grid(8, 1, 1, rng), 0, 0));
    DenseVectorSet<double> set{5, 8, protos};
    const auto m = label_dense(to_volume(g), set);
    ASSERT_EQ(to_labels(m), oracle::nearest_prototype(g, protos));
    ASSERT_EQ(m.unknown_count(), 0u);
  }
}

TEST(LabelSparse, SingleEntryLabelsOnlyGlobalArgmax) {
  std::mt19937_64 rng(3);
  const auto g = oracle::random_grid(4, 3, 3, rng);
  const auto v = oracle::cell(oracle::random_grid(4, 1, 1, rng), 0, 0);
  SparseVectorSet<double> s{2, 4, {{v, 1, 0, 0, 0}}};
  const auto out = label_sparse(to_volume(g), s, {1, -1.0});
  EXPECT_EQ(out.mask.annotated_count(), 1u);
  int best = 0;
  for (int p = 1; p < 9; ++p)
    if (oracle::cosine(v, oracle::cell(g, p % 3, p / 3)) > oracle::cosine(v, oracle::cell(g, best % 3, best / 3))) best = p;
  EXPECT_EQ(out.mask.labels[best], 1);
}

TEST(LabelSparse, ContestedCellTakesMoreSimilarClass) {
  // Two cells; entry A (class 0) is closer to cell 1 than entry B (class 1).
  Volume<double> f(2, 1, 2);
  f(0, 0, 0) = 1;
  f(1, 0, 0) = 0;
  f(0, 0, 1) = 1;
  f(1, 0, 1) = 1;
  SparseVectorSet<double> s{2, 2, {{{1, 0.9}, 0, 0, 0, 0}, {{1, 0.2}, 1, 0, 0, 0}}};
  const auto out = label_sparse(f, s, {2, -1.0});
  EXPECT_EQ(out.mask.at(1, 0), 0);
  EXPECT_EQ(out.mask.at(0, 0), 1);
}

TEST(LabelSparse, ThresholdDiscardsWeakMatches) {
  Volume<double> f(2, 1, 2);
  f(0, 0, 0) = 1;
  f(1, 0, 1) = 1;
  SparseVectorSet<double> s{2, 2, {{{1, 0}, 1, 0, 0, 0}}};
  const auto out = label_sparse(f, s, {2, 0.5});
  EXPECT_EQ(out.mask.at(0, 0), 1);
  EXPECT_EQ(out.mask.at(1, 0), kUnknown);  // similarity 0 < 0.5
  EXPECT_TRUE(std::isnan(out.winning_similarity[1]));
}

TEST(LabelSparse, ZeroNormCellsStayUnknown) {
  Volume<double> f(2, 1, 2);
  f(0, 0, 0) = 1;
  SparseVectorSet<double> s{2, 2, {{{1, 0}, 0, 0, 0, 0}}};
  const auto out = label_sparse(f, s, {2, -0.5});
  EXPECT_EQ(out.mask.at(1, 0), kUnknown);
}

TEST(LabelSparse, KLargerThanGridIsClamped) {
  Volume<double> f(1, 1, 2, 1.0);
  SparseVectorSet<double> s{1, 1, {{{1.0}, 0, 0, 0, 0}}};
  EXPECT_EQ(label_sparse(f, s, {10, -1.0}).mask.annotated_count(), 2u);
}

TEST(LabelSparse, InvalidConfigAndEmptySetRejected) {
  Volume<double> f(1, 1, 1, 1.0);
  SparseVectorSet<double> s{1, 1, {{{1.0}, 0, 0, 0, 0}}};
  EXPECT_THROW(label_sparse(f, s, {0, 0.5}), ConfigError);
  EXPECT_THROW(label_sparse(f, s, {1, 1.5}), ConfigError);
  EXPECT_THROW(label_sparse(f, SparseVectorSet<double>{1, 1, {}}, {1, 0.5}), InputError);
}

TEST(LabelSparse, PropertiesAndOracleOnRandomInstances) {
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<int> dim(1, 4), z(2, 8), cls(2, 5), nent(1, 6);
  for (int trial = 0; trial < 100; ++trial) {
    const int H = dim(rng), W = dim(rng), Z = z(rng), C = cls(rng);
    const auto g = oracle::random_grid(Z, H, W, rng);
    std::vector<oracle::Entry> entries;
    const int n = nent(rng);
    std::uniform_int_distribution<int> pc(0, C - 1);
    for (int e = 0; e < n; ++e) entries.push_back({oracle::cell(oracle::random_grid(Z, 1, 1, rng), 0, 0), pc(rng)});
    const auto set = testutil::to_sparse_set(entries, C);
    const auto f = to_volume(g);
    for (int k : {1, 2, 3}) {
      std::size_t prev_unknown = 0;
      for (double t : {-1.0, 0.0, 0.5, 0.9}) {
        const auto out = label_sparse(f, set, {k, t});
        ASSERT_EQ(to_labels(out.mask), oracle::topk_threshold(g, entries, k, t));
        ASSERT_GE(out.mask.unknown_count(), prev_unknown);
        prev_unknown = out.mask.unknown_count();
        ASSERT_LE(out.mask.annotated_count(), static_cast<std::size_t>(k) * entries.size());
        for (std::size_t p = 0; p < out.mask.size(); ++p)
          if (out.mask.labels[p] != kUnknown) ASSERT_GE(out.winning_similarity[p], t);
      }
      const auto a = label_sparse(f, set, {k, -1.0}).mask;
      const auto b = label_sparse(f, set, {k + 1, -1.0}).mask;
      for (std::size_t p = 0; p < a.size(); ++p)
        if (a.labels[p] != kUnknown) ASSERT_NE(b.labels[p], kUnknown);
    }
  }
}

TEST(PseudoLabeler, DispatchesOnPrototypeKind) {
  Volume<double> f(2, 2, 2);
  f(0, 0, 0) = 1;
  f(1, 1, 1) = 1;
  f(0, 0, 1) = 1;
  f(1, 1, 0) = 1;
  PseudoLabeler<double> dense{DenseVectorSet<double>{2, 2, {{1, 0}, {0, 1}}}, {}};
  EXPECT_EQ(dense.mode(), MaskKind::dense);
  EXPECT_EQ(dense.label(f).unknown_count(), 0u);
  const auto up = dense.label(f, 4, 4);
  EXPECT_EQ(up.width, 4);
  PseudoLabeler<double> sparse{SparseVectorSet<double>{2, 2, {{{1, 0}, 0, 0, 0, 0}}}, {1, 0.5}};
  EXPECT_EQ(sparse.mode(), MaskKind::sparse);
  EXPECT_EQ(sparse.label(f).annotated_count(), 1u);
}
