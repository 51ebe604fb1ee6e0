#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "smis/analytic_generator.hpp"
#include "smis/prototyping.hpp"
#include "test_util.hpp"

using namespace smis;
using testutil::to_mask;
using testutil::to_volume;

TEST(DensePrototypes, MatchOracleOnRandomInstances) {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> side(1, 4), zd(1, 8), cd(1, 5), nd(1, 3);
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int H = side(rng), W = side(rng), Z = zd(rng), N = nd(rng);
    const int C = std::min(cd(rng), H * W);
    std::vector<oracle::Grid> grids;
    std::vector<oracle::Labels> labels;
    std::vector<Volume<double>> feats;
    std::vector<SemanticMask> masks;
    for (int i = 0; i < N; ++i) {
      grids.push_back(oracle::random_grid(Z, H, W, rng));
      // Only the first pair is guaranteed to contain every class.
      labels.push_back(i == 0 ? testutil::covering_labels(H, W, C, rng) : oracle::random_labels(H, W, C, rng));
      feats.push_back(to_volume(grids.back()));
      masks.push_back(to_mask(labels.back(), C));
    }
    const auto got = dense_prototypes<double>(std::span<const Volume<double>>(feats), std::span<const SemanticMask>(masks));
    const auto want = oracle::masked_average_prototypes(grids, labels, C);
    ASSERT_EQ(got.class_count, C);
    for (int c = 0; c < C; ++c)
      for (int z = 0; z < Z; ++z) ASSERT_NEAR(got.vectors[c][z], want[c][z], 1e-12);
    ++checked;
  }
  EXPECT_EQ(checked, 200);
}

TEST(DensePrototypes, OnePixelAndFullSupport) {
  Volume<double> f(2, 2, 2);
  for (std::size_t i = 0; i < f.size(); ++i) f.data[i] = static_cast<double>(i + 1);
  auto m = SemanticMask::dense(2, 2, 2, 0);
  m.at(1, 1) = 1;
  std::vector<Volume<double>> fs{f};
  std::vector<SemanticMask> ms{m};
  const auto p = dense_prototypes<double>(std::span<const Volume<double>>(fs), std::span<const SemanticMask>(ms));
  EXPECT_DOUBLE_EQ(p.vectors[1][0], f(0, 1, 1));
  EXPECT_DOUBLE_EQ(p.vectors[1][1], f(1, 1, 1));
  EXPECT_DOUBLE_EQ(p.vectors[0][0], (1 + 2 + 3) / 3.0);
  EXPECT_DOUBLE_EQ(p.vectors[0][1], (5 + 6 + 7) / 3.0);
}

TEST(DensePrototypes, PairOrderInvarianceAndLinearity) {
  std::mt19937_64 rng(4);
  std::vector<Volume<double>> fs;
  std::vector<SemanticMask> ms;
  for (int i = 0; i < 3; ++i) {
    fs.push_back(to_volume(oracle::random_grid(4, 3, 3, rng)));
    ms.push_back(to_mask(testutil::covering_labels(3, 3, 3, rng), 3));
  }
  auto run = [](const std::vector<Volume<double>>& f, const std::vector<SemanticMask>& m) {
    return dense_prototypes<double>(std::span<const Volume<double>>(f), std::span<const SemanticMask>(m));
  };
  const auto base = run(fs, ms);
  auto fr = fs;
  auto mr = ms;
  std::reverse(fr.begin(), fr.end());
  std::reverse(mr.begin(), mr.end());
  const auto rev = run(fr, mr);
  for (int c = 0; c < 3; ++c)
    for (int z = 0; z < 4; ++z) EXPECT_NEAR(base.vectors[c][z], rev.vectors[c][z], 1e-12);
  auto fs2 = fs;
  for (auto& f : fs2)
    for (auto& v : f.data) v = 2.5 * v;
  const auto scaled = run(fs2, ms);
  for (int c = 0; c < 3; ++c)
    for (int z = 0; z < 4; ++z) EXPECT_NEAR(scaled.vectors[c][z], 2.5 * base.vectors[c][z], 1e-12);
}

TEST(DensePrototypes, HighResolutionMaskIsResizedOntoGrid) {
  Volume<double> f(1, 2, 2);
  f.data = {1, 2, 3, 4};
  auto m = SemanticMask::dense(8, 8, 2, 0);
  for (int y = 0; y < 8; ++y)
    for (int x = 4; x < 8; ++x) m.at(x, y) = 1;
  std::vector<Volume<double>> fs{f};
  std::vector<SemanticMask> ms{m};
  const auto p = dense_prototypes<double>(std::span<const Volume<double>>(fs), std::span<const SemanticMask>(ms));
  EXPECT_DOUBLE_EQ(p.vectors[0][0], 2.0);
  EXPECT_DOUBLE_EQ(p.vectors[1][0], 3.0);
}

TEST(DensePrototypes, Errors) {
  Volume<double> f(2, 2, 2, 1.0);
  std::vector<Volume<double>> fs{f};
  auto run = [&](const SemanticMask& m) {
    std::vector<SemanticMask> ms{m};
    return dense_prototypes<double>(std::span<const Volume<double>>(fs), std::span<const SemanticMask>(ms));
  };
  EXPECT_THROW(run(SemanticMask::dense(2, 2, 3, 0)), InputError);  // classes 1, 2 missing
  EXPECT_THROW(run(SemanticMask::sparse(2, 2, 1)), InputError);
  std::vector<SemanticMask> none;
  EXPECT_THROW(dense_prototypes<double>(std::span<const Volume<double>>(fs), std::span<const SemanticMask>(none)), InputError);
}

TEST(SparsePrototypes, OneEntryPerAnnotatedPixel) {
  std::mt19937_64 rng(8);
  const auto g = oracle::random_grid(3, 2, 2, rng);
  std::vector<Volume<double>> fs{to_volume(g), to_volume(g)};
  auto a = SemanticMask::sparse(4, 4, 3);
  a.at(0, 0) = 1;
  a.at(3, 3) = 2;
  auto b = SemanticMask::sparse(4, 4, 3);
  b.at(2, 1) = 0;
  std::vector<SemanticMask> ms{a, b};
  const auto s = sparse_prototypes<double>(std::span<const Volume<double>>(fs), std::span<const SemanticMask>(ms));
  ASSERT_EQ(s.entries.size(), 3u);
  EXPECT_EQ(s.entries[0].class_id, 1);
  EXPECT_EQ(s.entries[0].vector, oracle::cell(g, 0, 0));
  EXPECT_EQ(s.entries[1].class_id, 2);
  EXPECT_EQ(s.entries[1].vector, oracle::cell(g, 1, 1));
  EXPECT_EQ(s.entries[2].pair_index, 1);
  EXPECT_EQ(s.entries[2].vector, oracle::cell(g, 1, 0));
  std::vector<SemanticMask> empty{SemanticMask::sparse(4, 4, 3)};
  std::vector<Volume<double>> one{fs[0]};
  EXPECT_THROW(sparse_prototypes<double>(std::span<const Volume<double>>(one), std::span<const SemanticMask>(empty)), InputError);
}

TEST(PrototypeArchive, RoundTripDenseAndSparse) {
  PseudoLabeler<float> dense{DenseVectorSet<float>{2, 3, {{1, 2, 3}, {-1, 0.5f, 0}}}, {}};
  const auto back = prototypes_from_archive(deserialize(serialize(prototypes_to_archive(dense, {"bg", "fg"}))));
  EXPECT_EQ(std::get<DenseVectorSet<float>>(back.prototypes).vectors, std::get<DenseVectorSet<float>>(dense.prototypes).vectors);
  PseudoLabeler<float> sparse{SparseVectorSet<float>{4, 2, {{{1, 2}, 3, 0, 5, 6}, {{0, 1}, 0, 1, 2, 3}}}, {5, 0.25}};
  const auto sb = prototypes_from_archive(deserialize(serialize(prototypes_to_archive(sparse))));
  ASSERT_EQ(sb.mode(), MaskKind::sparse);
  EXPECT_EQ(sb.sparse_config.k, 5);
  EXPECT_DOUBLE_EQ(sb.sparse_config.t, 0.25);
  const auto& e = std::get<SparseVectorSet<float>>(sb.prototypes).entries;
  ASSERT_EQ(e.size(), 2u);
  EXPECT_EQ(e[0].class_id, 3);
  EXPECT_EQ(e[0].x, 5);
  EXPECT_EQ(e[1].vector, (std::vector<float>{0, 1}));
  Archive junk;
  junk.meta = json{{"kind", "generator"}};
  EXPECT_THROW(prototypes_from_archive(junk), InputError);
}

TEST(Inversion, RecoversAnalyticImage) {
  const AnalyticGenerator g;
  const auto target = g.sample(12345);
  InversionConfig cfg;
  cfg.steps = 120;
  cfg.mean_samples = 64;
  const auto res = invert_image(g, target.image, cfg);
  EXPECT_LT(res.final_mse, res.initial_mse);
  EXPECT_LT(res.final_mse, 0.25 * res.initial_mse);
}

TEST(Inversion, ZeroStepsAndShapeErrors) {
  const AnalyticGenerator g;
  const auto s = g.sample(1);
  InversionConfig cfg;
  cfg.steps = 0;
  cfg.mean_samples = 8;
  const auto res = invert_image(g, s.image, cfg, s.latents);
  EXPECT_EQ(res.final_mse, 0.0);
  EXPECT_THROW(invert_image(g, Image(3, 8, 8), cfg), InputError);
  cfg.steps = -1;
  EXPECT_THROW(invert_image(g, s.image, cfg), ConfigError);
}

TEST(GeneratorPrototypes, AnalyticOneShotLabelsOwnSample) {
  const AnalyticGenerator g;
  // A sample with both shapes present.
  std::uint64_t seed = 0;
  GeneratorSample s;
  for (;; ++seed) {
    s = g.sample(seed);
    const auto m = g.semantics(s.latents);
    if (std::count(m.labels.begin(), m.labels.end(), 1) > 20 && std::count(m.labels.begin(), m.labels.end(), 2) > 20) break;
  }
  std::vector<LabeledPair> pairs{{g.semantics(s.latents), std::nullopt, s.latents}};
  const auto protos = dense_prototypes(g, std::span<LabeledPair>(pairs));
  PseudoLabeler<float> lab{protos, {}};
  const auto truth = resize_majority(g.semantics(s.latents), 16, 16);
  EXPECT_GT(agreement(lab.label(s.features), truth), 0.9);
  std::vector<LabeledPair> no_source{{g.semantics(s.latents), std::nullopt, std::nullopt}};
  EXPECT_THROW(dense_prototypes(g, std::span<LabeledPair>(no_source)), InputError);
}
