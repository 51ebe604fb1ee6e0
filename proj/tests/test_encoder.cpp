#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "smis/encoder.hpp"
#include "test_util.hpp"

using namespace smis;

namespace {

EncoderConfig probe_config() {
  EncoderConfig c;
  c.class_count = 2;
  c.layer_count = 2;
  c.latent_dim = 4;
  c.input_size = 8;
  c.widths = {4, 4, 4, 4};
  c.head_pool = 1;
  return c;
}

EncoderConfig analytic_config() {
  EncoderConfig c;
  c.class_count = 3;
  c.layer_count = 4;
  c.latent_dim = 16;
  c.input_size = 32;
  c.widths = {8, 16, 16, 16};
  return c;
}

SemanticMask random_dense(int size, int classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(0, classes - 1);
  auto m = SemanticMask::dense(size, size, classes);
  for (auto& l : m.labels) l = static_cast<ClassId>(d(rng));
  return m;
}

LatentStack random_stack(int layers, int dim, std::mt19937_64& rng) {
  std::normal_distribution<float> n;
  LatentStack s;
  for (int l = 0; l < layers; ++l) {
    s.codes.emplace_back(dim);
    for (auto& v : s.codes.back()) v = n(rng);
  }
  return s;
}

double mean(const std::vector<double>& v, std::size_t from, std::size_t to) {
  return std::accumulate(v.begin() + from, v.begin() + to, 0.0) / static_cast<double>(to - from);
}

}  // namespace

TEST(Encoder, ShapeDeterminismAndNonConstantMap) {
  Encoder<float> enc(analytic_config(), 3);
  std::mt19937_64 rng(1);
  const auto a = random_dense(32, 3, rng), b = random_dense(32, 3, rng);
  const auto ea = enc.encode(a);
  EXPECT_EQ(ea.layer_count(), 4);
  EXPECT_EQ(ea.dim(), 16);
  EXPECT_EQ(enc.encode(a).codes, ea.codes);
  EXPECT_NE(enc.encode(b).codes, ea.codes);
  EXPECT_THROW(enc.encode(SemanticMask::dense(32, 32, 4)), InputError);
}

TEST(Encoder, AcceptsAnyMaskSizeAndSparseInput) {
  Encoder<float> enc(analytic_config(), 3);
  auto s = SemanticMask::sparse(64, 64, 3);
  s.at(10, 10) = 2;
  EXPECT_EQ(enc.encode(s).layer_count(), 4);
  EXPECT_EQ(enc.encode(SemanticMask::dense(16, 16, 3, 1)).layer_count(), 4);
  const auto one_hot_in = enc.prepare(s);
  EXPECT_EQ(one_hot_in.channels, 4);
  EXPECT_EQ(one_hot_in(3, 0, 0), 1.0f);
}

TEST(Encoder, ConfigValidation) {
  auto c = analytic_config();
  c.input_size = 12;
  EXPECT_THROW(Encoder<float>{c}, ConfigError);
  c = analytic_config();
  c.widths = {1, 2};
  EXPECT_THROW(Encoder<float>{c}, ConfigError);
  c = analytic_config();
  c.layer_count = 8;
  EXPECT_THROW(c.check_generator(AnalyticGenerator().metadata()), ConfigError);
}

TEST(LatentLoss, MatchesOracleAndReductionConvention) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<std::vector<double>>> pred, tgt;
    std::vector<LatentStack> targets;
    for (int b = 0; b < 3; ++b) {
      const auto p = random_stack(4, 6, rng), t = random_stack(4, 6, rng);
      std::vector<std::vector<double>> pd, td;
      for (int l = 0; l < 4; ++l) {
        pd.emplace_back(p.codes[l].begin(), p.codes[l].end());
        td.emplace_back(t.codes[l].begin(), t.codes[l].end());
      }
      pred.push_back(pd);
      tgt.push_back(td);
      targets.push_back(t);
    }
    ASSERT_NEAR(latent_loss(pred, targets), oracle::latent_l2(pred, tgt), 1e-9);
  }
  // Single sample, one coordinate off by one.
  auto t = random_stack(3, 4, rng);
  std::vector<std::vector<float>> p = t.codes;
  p[1][2] += 1.0f;
  EXPECT_NEAR(latent_loss(std::vector<std::vector<std::vector<float>>>{p}, {t}), 1.0, 1e-6);
}

TEST(TrainingStep, ExactTargetGivesZeroLossAndGradient) {
  Encoder<float> enc(probe_config(), 9);
  std::mt19937_64 rng(2);
  const auto mask = random_dense(8, 2, rng);
  const std::vector<LatentStack> targets{enc.encode(mask)};
  auto params = enc.params();
  nn::zero_grads(params);
  EXPECT_EQ(loss_and_gradients(enc, {mask}, targets), 0.0);
  for (auto* p : params)
    for (float g : p->grad) ASSERT_EQ(g, 0.0f);
}

TEST(TrainingStep, GradientMatchesFiniteDifferencesOnProbeEncoder) {
  Encoder<double> enc(probe_config(), 21);
  auto params = enc.params();
  const auto n = nn::count_params(params);
  EXPECT_GE(n, 900u);
  EXPECT_LE(n, 1100u);
  std::mt19937_64 rng(4);
  auto sparse = SemanticMask::sparse(8, 8, 2);
  sparse.at(1, 2) = 0;
  sparse.at(6, 5) = 1;
  const std::vector<SemanticMask> masks{random_dense(8, 2, rng), sparse};
  const std::vector<LatentStack> targets{random_stack(2, 4, rng), random_stack(2, 4, rng)};
  nn::zero_grads(params);
  loss_and_gradients(enc, masks, targets);
  std::vector<double> analytic, numeric;
  auto loss_only = [&] {
    std::vector<std::vector<std::vector<double>>> pred;
    for (const auto& m : masks) pred.push_back(enc.forward(enc.prepare(m)));
    return latent_loss(pred, targets);
  };
  const double h = 1e-6;
  for (auto* p : params)
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + h;
      const double up = loss_only();
      p->value[i] = orig - h;
      const double dn = loss_only();
      p->value[i] = orig;
      analytic.push_back(p->grad[i]);
      numeric.push_back((up - dn) / (2 * h));
    }
  double diff = 0, na = 0, nn_ = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn_ += numeric[i] * numeric[i];
  }
  const double rel = std::sqrt(diff) / std::max(std::sqrt(na), std::sqrt(nn_));
  EXPECT_LT(rel, 1e-4) << "relative error " << rel;
}

TEST(TrainingStep, GeneratorIsUntouchedAndLossFinite) {
  const AnalyticGenerator g;
  const auto hash = g.hash();
  const auto labeler = testutil::analytic_labeler(g);
  TrainConfig tc;
  tc.learning_rate = 1e-3;
  tc.seed = 3;
  TrainState st(Encoder<float>(analytic_config(), 1), tc, {hash, "", MaskKind::dense});
  for (int i = 0; i < 100; ++i) {
    const double loss = training_step(st, g, labeler);
    ASSERT_TRUE(std::isfinite(loss));
    ASSERT_GE(loss, 0.0);
  }
  EXPECT_EQ(st.step, 100);
  EXPECT_EQ(g.hash(), hash);
}

TEST(TrainingStep, NonFiniteLossAborts) {
  TrainConfig tc;
  TrainState st(Encoder<float>(probe_config(), 1), tc, {});
  TrainingBatch b;
  b.masks.push_back(SemanticMask::dense(8, 8, 2));
  LatentStack t = LatentStack::broadcast(std::vector<float>(4, 0.f), 2);
  t.codes[0][0] = std::nanf("");
  b.targets.push_back(t);
  b.seeds.push_back(77);
  EXPECT_THROW(training_step(st, b), TrainingError);
  EXPECT_EQ(st.step, 0);
}

TEST(Train, LossDecreasesAndRunsAreDeterministic) {
  const AnalyticGenerator g;
  const auto labeler = testutil::analytic_labeler(g);
  TrainConfig tc;
  tc.iterations = 200;
  tc.learning_rate = 1e-3;
  tc.seed = 11;
  tc.mean_latent_samples = 64;
  const auto a = train_encoder(analytic_config(), tc, g, labeler);
  ASSERT_EQ(a.losses.size(), 200u);
  EXPECT_LT(mean(a.losses, 150, 200), mean(a.losses, 0, 50));
  tc.iterations = 30;
  const auto b1 = train_encoder(analytic_config(), tc, g, labeler);
  const auto b2 = train_encoder(analytic_config(), tc, g, labeler);
  EXPECT_EQ(b1.losses, b2.losses);
  EXPECT_EQ(archive_hash(b1.checkpoint), archive_hash(b2.checkpoint));
  for (std::size_t i = 0; i < 30; ++i) EXPECT_EQ(b1.losses[i], a.losses[i]);
}

TEST(Train, RejectsMismatchedInputs) {
  const AnalyticGenerator g;
  const auto labeler = testutil::analytic_labeler(g);
  TrainConfig tc;
  tc.iterations = 1;
  auto c = analytic_config();
  c.class_count = 4;
  EXPECT_THROW(train_encoder(c, tc, g, labeler), ConfigError);
  tc.batch_size = 0;
  EXPECT_THROW(train_encoder(analytic_config(), tc, g, labeler), ConfigError);
}

TEST(Train, WritesArtifactsAndCheckpointRoundTrips) {
  const AnalyticGenerator g;
  const auto labeler = testutil::analytic_labeler(g);
  TrainConfig tc;
  tc.iterations = 6;
  tc.checkpoint_every = 3;
  tc.diagnostic_every = 3;
  tc.diagnostic_count = 2;
  tc.mean_latent_samples = 16;
  const auto dir = testutil::temp_dir("train");
  const auto res = train_encoder(analytic_config(), tc, g, labeler, {dir, "protohash"});
  EXPECT_TRUE(std::filesystem::exists(dir / "encoder.smis"));
  EXPECT_TRUE(std::filesystem::exists(dir / "checkpoints" / "step_0000003.smis"));
  EXPECT_TRUE(std::filesystem::exists(dir / "diagnostics" / "step_0000000.png"));
  EXPECT_TRUE(std::filesystem::exists(dir / "diagnostics" / "step_0000006.png"));
  std::ifstream csv(dir / "loss.csv");
  std::string line;
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 7);
  const auto loaded = load_encoder(dir / "encoder.smis");
  EXPECT_EQ(loaded.provenance.generator_hash, g.hash());
  EXPECT_EQ(loaded.provenance.prototype_hash, "protohash");
  EXPECT_EQ(loaded.provenance.mode, MaskKind::dense);
  EXPECT_EQ(loaded.step, 6);
  std::mt19937_64 rng(8);
  const auto m = random_dense(32, 3, rng);
  EXPECT_EQ(loaded.encoder.encode(m).codes, res.encoder.encode(m).codes);
}

TEST(Diagnostics, SheetLayoutAndRows) {
  const AnalyticGenerator g;
  const auto labeler = testutil::analytic_labeler(g);
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4};
  Encoder<float> fresh(analytic_config(), 1);
  fresh.set_average_latent(g.mean_latent(16, 0));
  TrainConfig tc;
  tc.iterations = 20;
  tc.learning_rate = 1e-3;
  tc.mean_latent_samples = 16;
  const auto trained = train_encoder(analytic_config(), tc, g, labeler).encoder;
  const auto a = export_diagnostics(fresh, g, labeler, seeds);
  const auto b = export_diagnostics(trained, g, labeler, seeds);
  EXPECT_EQ(a.height, 3 * 32);
  EXPECT_EQ(a.width, 4 * 32);
  auto row = [](const Volume<float>& s, int r) {
    std::vector<float> out;
    for (int c = 0; c < 3; ++c)
      for (int y = r * 32; y < (r + 1) * 32; ++y)
        for (int x = 0; x < s.width; ++x) out.push_back(s(c, y, x));
    return out;
  };
  EXPECT_EQ(row(a, 0), row(b, 0));
  EXPECT_EQ(row(a, 1), row(b, 1));
  EXPECT_NE(row(a, 2), row(b, 2));
  // Row 2 is the colourised pseudo mask of each seed, recomputed directly.
  const auto direct = colorize(labeler.label(g.sample(3).features, 32, 32));
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) ASSERT_EQ(a(0, 32 + y, 2 * 32 + x), direct(0, y, x));
}

TEST(FitMask, ShrinkGrowAndIdentity) {
  auto m = SemanticMask::dense(4, 4, 2, 1);
  EXPECT_EQ(fit_mask(m, 4), m);
  EXPECT_EQ(fit_mask(m, 8).width, 8);
  EXPECT_EQ(fit_mask(SemanticMask::dense(64, 64, 2, 1), 8), SemanticMask::dense(8, 8, 2, 1));
}
