#include <gtest/gtest.h>

#include <random>

#include "smis/annotations.hpp"
#include "smis/style_generator.hpp"
#include "smis/synthesis.hpp"
#include "test_util.hpp"

using namespace smis;

namespace {

EncoderConfig small_config(const GeneratorMetadata& m, int classes) {
  EncoderConfig c;
  c.class_count = classes;
  c.layer_count = m.layer_count;
  c.latent_dim = m.latent_dim;
  c.input_size = 32;
  c.widths = {8, 16, 16, 16};
  return c;
}

SemanticMask blob_mask() {
  auto m = SemanticMask::dense(32, 32, 3, 0);
  for (int y = 8; y < 20; ++y)
    for (int x = 6; x < 18; ++x) m.at(x, y) = 1;
  for (int y = 18; y < 28; ++y)
    for (int x = 18; x < 28; ++x) m.at(x, y) = 2;
  return m;
}

}  // namespace

TEST(Synthesis, FullMixIgnoresSeedAndRepeatsExactly) {
  const StyleGenerator g;
  Encoder<float> enc(small_config(g.metadata(), 3), 2);
  SynthesisRequest req{blob_mask(), g.metadata().layer_count, 41, 3};
  const auto r = synthesize_from_mask(enc, g, req);
  ASSERT_EQ(r.images.size(), 3u);
  EXPECT_EQ(r.images[0].data, r.images[1].data);
  EXPECT_EQ(r.images[1].data, r.images[2].data);
  req.seed = 9000;
  EXPECT_EQ(synthesize_from_mask(enc, g, req).images[0].data, r.images[0].data);
  const auto again = synthesize_from_mask(enc, g, {blob_mask(), 3, 41, 2});
  EXPECT_EQ(synthesize_from_mask(enc, g, {blob_mask(), 3, 41, 2}).images[1].data, again.images[1].data);
}

TEST(Synthesis, ZeroMixReproducesGeneratorSamples) {
  const StyleGenerator g;
  Encoder<float> enc(small_config(g.metadata(), 3), 2);
  const auto r = synthesize_from_mask(enc, g, {blob_mask(), 0, 100, 3});
  for (int v = 0; v < 3; ++v) {
    EXPECT_EQ(r.variant_seeds[v], 100u + v);
    EXPECT_EQ(r.images[v].data, g.sample(100 + v).image.data);
  }
}

TEST(Synthesis, MixLocalityAcrossSeeds) {
  const StyleGenerator g;
  Encoder<float> enc(small_config(g.metadata(), 3), 2);
  const int L = g.metadata().layer_count;
  for (int l = 0; l <= L; ++l) {
    const auto a = synthesize_from_mask(enc, g, {blob_mask(), l, 1, 2});
    const auto b = synthesize_from_mask(enc, g, {blob_mask(), l, 500, 1});
    for (int i = 0; i < L; ++i) {
      const bool same_ab = a.latents[0].codes[i] == b.latents[0].codes[i];
      const bool same_variants = a.latents[0].codes[i] == a.latents[1].codes[i];
      if (i < l) {
        ASSERT_TRUE(same_ab) << l << " " << i;
        ASSERT_EQ(a.latents[0].codes[i], a.encoded.codes[i]);
      } else {
        ASSERT_FALSE(same_ab) << l << " " << i;
        ASSERT_FALSE(same_variants) << l << " " << i;
      }
    }
  }
}

TEST(Synthesis, DefaultMixLayerAndValidation) {
  const AnalyticGenerator a;
  EXPECT_EQ(default_mix_layer(a.metadata()), 4);
  const StyleGenerator s;
  EXPECT_EQ(default_mix_layer(s.metadata()), 8);
  Encoder<float> enc(small_config(s.metadata(), 3), 2);
  EXPECT_EQ(synthesize_from_mask(enc, s, {blob_mask(), std::nullopt, 0, 1}).mix_layer, 8);
  EXPECT_THROW(synthesize_from_mask(enc, s, {blob_mask(), 9, 0, 1}), InputError);
  EXPECT_THROW(synthesize_from_mask(enc, s, {blob_mask(), -1, 0, 1}), InputError);
  EXPECT_THROW(synthesize_from_mask(enc, s, {blob_mask(), 8, 0, 0}), InputError);
  EXPECT_THROW(synthesize_from_mask(enc, s, {SemanticMask::dense(32, 32, 5), 8, 0, 1}), InputError);
  EXPECT_THROW(synthesize_from_mask(enc, a, {blob_mask(), 2, 0, 1}), ConfigError);
}

TEST(Synthesis, CompatibilityRequiresMatchingGeneratorHash) {
  const StyleGenerator g;
  LoadedEncoder le{Encoder<float>(small_config(g.metadata(), 3), 2), {g.hash(), "p", MaskKind::dense}, 0, ""};
  EXPECT_NO_THROW(check_compatible(le, g));
  StyleGeneratorConfig other;
  other.seed = 77;
  EXPECT_THROW(check_compatible(le, StyleGenerator(other)), ConfigError);
  le.provenance.generator_hash.clear();
  EXPECT_THROW(check_compatible(le, g), ConfigError);
}

TEST(FidelityProbe, SelfAgreementAndDisjointMasks) {
  const AnalyticGenerator g;
  const auto labeler = testutil::analytic_labeler(g);
  const auto s = g.sample(17);
  const auto own = labeler.label(s.features, 32, 32);
  EXPECT_DOUBLE_EQ(layout_fidelity_probe(own, s.latents, g, labeler), 1.0);
  // A mask of a class that appears nowhere in the pseudo mask.
  const auto pseudo = labeler.label(s.features);
  int missing = -1;
  for (int c = 0; c < 3; ++c)
    if (std::count(pseudo.labels.begin(), pseudo.labels.end(), c) == 0) missing = c;
  if (missing >= 0) {
    EXPECT_DOUBLE_EQ(layout_fidelity_probe(SemanticMask::dense(32, 32, 3, missing), s.latents, g, labeler), 0.0);
  }
  EXPECT_THROW(layout_fidelity_probe(SemanticMask::sparse(32, 32, 3), s.latents, g, labeler), InputError);
}

TEST(FidelityProbe, TrainedEncoderBeatsRandomLatents) {
  const AnalyticGenerator g;
  const auto labeler = testutil::analytic_labeler(g);
  TrainConfig tc;
  tc.iterations = 300;
  tc.learning_rate = 1e-3;
  tc.mean_latent_samples = 128;
  const auto enc = train_encoder(small_config(g.metadata(), 3), tc, g, labeler).encoder;
  double trained = 0, random = 0;
  for (int i = 0; i < 50; ++i) {
    const auto s = g.sample(derive_seed(1, streams::held_out, i));
    const auto mask = labeler.label(s.features, 32, 32);
    trained += layout_fidelity_probe(mask, enc.encode(mask), g, labeler);
    random += layout_fidelity_probe(mask, g.sample(derive_seed(1, streams::baseline, i)).latents, g, labeler);
  }
  EXPECT_GT(trained / 50, random / 50);
}

TEST(Annotations, RasterizePointsAndStrokes) {
  const auto a = parse_annotation(json::parse(R"({"width": 8, "height": 8, "class_count": 3,
      "points": [{"class": 2, "x": 7, "y": 7}],
      "strokes": [{"class": 1, "points": [[0, 0], [3, 3]]}, {"class": 0, "points": [[0, 7], [3, 7]]}]})"));
  const auto m = rasterize(a, 3);
  EXPECT_EQ(m.kind, MaskKind::sparse);
  EXPECT_EQ(m.at(7, 7), 2);
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(m.at(i, i), 1);
    EXPECT_EQ(m.at(i, 7), 0);
  }
  EXPECT_EQ(m.annotated_count(), 9u);
  EXPECT_EQ(rasterize(a, 3), m);
  EXPECT_EQ(rasterize(parse_annotation(annotation_to_json(a)), 3), m);
  const auto up = rasterize(a, 3, 16, 16);
  EXPECT_EQ(up.at(14, 14), 2);
}

TEST(Annotations, BresenhamMatchesBruteForceOnShallowLines) {
  for (int x1 = 0; x1 < 10; ++x1)
    for (int y1 = 0; y1 <= x1; ++y1) {
      const auto cells = detail::line_cells(0, 0, x1, y1);
      ASSERT_EQ(cells.size(), static_cast<std::size_t>(x1 + 1));
      for (int x = 0; x <= x1; ++x) {
        // Exact line y = x*y1/x1, rounded half away from the start.
        const double yexact = x1 == 0 ? 0.0 : static_cast<double>(x) * y1 / x1;
        ASSERT_LE(std::abs(cells[x].second - yexact), 0.5 + 1e-12);
        ASSERT_EQ(cells[x].first, x);
      }
    }
}

TEST(Annotations, RejectsBadPayloads) {
  EXPECT_THROW(rasterize(parse_annotation(json::parse(R"({"width": 4, "height": 4, "points": [{"class": 5, "x": 0, "y": 0}]})")), 3), InputError);
  EXPECT_THROW(rasterize(parse_annotation(json::parse(R"({"width": 4, "height": 4, "points": [{"class": 1, "x": 4, "y": 0}]})")), 3), InputError);
  EXPECT_THROW(parse_annotation(json::parse(R"({"height": 4})")), InputError);
  EXPECT_THROW(rasterize(parse_annotation(json::parse(R"({"width": 4, "height": 4, "class_count": 2})")), 3), InputError);
}
