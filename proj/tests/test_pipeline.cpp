#include <gtest/gtest.h>

#include <cstdlib>
#include <map>

#include "smis/pipeline.hpp"
#include "test_util.hpp"

using namespace smis;

namespace {

json quick_config(const std::string& mode = "dense") {
  json j = json::parse(R"({
    "seed": 3,
    "paths": {"output_dir": "out"},
    "toy_data": {"count": 12, "labeled": [0, 1]},
    "gan": {"backend": "analytic"},
    "inversion": {"steps": 60, "mean_samples": 32},
    "encoder": {"widths": [8, 8, 8, 8]},
    "train": {"iterations": 20, "learning_rate": 0.001, "checkpoint_every": 10, "diagnostic_every": 10,
              "diagnostic_count": 2, "mean_latent_samples": 32},
    "synthesis": {"variant_count": 2},
    "sweep": {"k": [1, 3], "t": [-1, 0.5, 0.9], "count": 2},
    "pseudo_count": 6
  })");
  j["mode"] = mode;
  return j;
}

fs::path write_config(const fs::path& dir, const json& j) {
  fs::create_directories(dir);
  write_file(dir / "run.json", j.dump(2));
  return dir / "run.json";
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).generic_string()] = read_file(e.path());
  return out;
}

void run_chain(const RunConfig& c) {
  cmd_render_toy_data(c);
  cmd_train_toy_gan(c);
  cmd_extract_prototypes(c);
  cmd_pseudo_label(c, c.pseudo_count);
  cmd_train_encoder(c);
}

int run_cli(const std::string& args) {
  const int rc = std::system((std::string(SMIS_CLI_PATH) + " -q " + args + " > /dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST(RunConfig, DefaultsOverridesAndHash) {
  const auto dir = testutil::temp_dir("config");
  const auto path = write_config(dir, quick_config());
  const auto a = load_run_config(path);
  EXPECT_EQ(a.train.iterations, 20);
  EXPECT_EQ(a.generator_path(), dir / "out" / "gan" / "generator.smis");
  const auto b = load_run_config(path, {"train.iterations=7", "synthesis.mix_layer=2", "class_names=[\"a\",\"b\",\"c\"]"});
  EXPECT_EQ(b.train.iterations, 7);
  EXPECT_EQ(b.synthesis.mix_layer, 2);
  EXPECT_EQ(b.class_names.size(), 3u);
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a), config_hash(load_run_config(path)));
  // Round trip through the canonical form.
  EXPECT_EQ(config_hash(run_config_from_json(to_json_config(a), dir)), config_hash(a));
}

TEST(RunConfig, ErrorsNameTheField) {
  const auto path = write_config(testutil::temp_dir("config_err"), quick_config());
  auto message = [&](const std::vector<std::string>& o) {
    try {
      load_run_config(path, o);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_NE(message({"train.iterations=abc"}).find("train.iterations"), std::string::npos);
  EXPECT_NE(message({"train.iterations=0"}).find("train.iterations"), std::string::npos);
  EXPECT_NE(message({"encoder.widht=3"}).find("encoder.widht"), std::string::npos);
  EXPECT_NE(message({"mode=blurry"}).find("mode"), std::string::npos);
  EXPECT_NE(message({"sparse.t=2"}).find("t must"), std::string::npos);
  EXPECT_NE(message({"evaluate.metrics=[\"fid\"]"}).find("evaluate.metrics"), std::string::npos);
  EXPECT_NE(message({"novalue"}).find("key=value"), std::string::npos);
  EXPECT_THROW(load_run_config("/nonexistent/run.json"), ConfigError);
}

TEST(Pipeline, ChainIsByteIdenticalOnRerun) {
  const auto dir = testutil::temp_dir("chain_det");
  const auto c = load_run_config(write_config(dir, quick_config()));
  run_chain(c);
  cmd_synthesize(c, c.output_dir() / "pseudo" / "masks");
  cmd_evaluate(c, c.output_dir() / "synth" / "masks", c.output_dir() / "pseudo" / "masks");
  const auto first = snapshot(c.output_dir());
  run_chain(c);
  cmd_synthesize(c, c.output_dir() / "pseudo" / "masks");
  cmd_evaluate(c, c.output_dir() / "synth" / "masks", c.output_dir() / "pseudo" / "masks");
  const auto second = snapshot(c.output_dir());
  ASSERT_EQ(first.size(), second.size());
  for (const auto& [name, bytes] : first) {
    ASSERT_TRUE(second.count(name)) << name;
    EXPECT_TRUE(second.at(name) == bytes) << name;
  }
  // Every manifest lists each file of its directory with its hash.
  for (const auto* sub : {"data", "gan", "prototypes", "pseudo", "encoder", "synth", "eval"}) {
    const auto m = read_manifest(c.output_dir() / sub);
    ASSERT_TRUE(m) << sub;
    EXPECT_EQ(m->config_hash, config_hash(c));
    EXPECT_EQ(m->seed, 3u);
    for (const auto& [rel, h] : m->outputs) EXPECT_EQ(file_hash(c.output_dir() / sub / rel), h) << rel;
  }
  EXPECT_EQ(read_manifest(c.output_dir() / "synth")->inputs.at("generator"), read_manifest(c.output_dir() / "pseudo")->inputs.at("generator"));
}

TEST(Pipeline, PseudoLabelSeedSevenTwice) {
  const auto dir = testutil::temp_dir("pseudo7");
  auto j = quick_config();
  j["seed"] = 7;
  const auto c = load_run_config(write_config(dir, j));
  cmd_render_toy_data(c);
  cmd_train_toy_gan(c);
  cmd_extract_prototypes(c);
  cmd_pseudo_label(c, 4);
  const auto a = snapshot(c.output_dir() / "pseudo");
  cmd_pseudo_label(c, 4);
  EXPECT_EQ(a, snapshot(c.output_dir() / "pseudo"));
  EXPECT_EQ(files_with_extension(c.output_dir() / "pseudo" / "masks", ".png").size(), 4u);
}

TEST(Pipeline, EvaluateSelfIsPerfectAndChecksProvenance) {
  const auto dir = testutil::temp_dir("eval");
  const auto c = load_run_config(write_config(dir, quick_config()));
  run_chain(c);
  const auto gt = c.output_dir() / "pseudo" / "masks";
  const auto self = cmd_evaluate(c, gt, gt);
  EXPECT_DOUBLE_EQ(self["metrics"]["miou"].get<double>(), 1.0);
  EXPECT_DOUBLE_EQ(self["metrics"]["accuracy"].get<double>(), 1.0);
  EXPECT_TRUE(self.contains("baseline"));
  EXPECT_LT(self["baseline"]["accuracy"].get<double>(), 1.0);

  cmd_synthesize(c, gt);
  const auto pred = c.output_dir() / "synth" / "masks";
  EXPECT_NO_THROW(cmd_evaluate(c, pred, gt));
  // A prediction made from another generator is refused unless overridden.
  auto manifest = *read_manifest(c.output_dir() / "synth");
  manifest.inputs["generator"] = std::string(64, 'f');
  write_file(c.output_dir() / "synth" / kManifestName, json(manifest).dump());
  EXPECT_THROW(cmd_evaluate(c, pred, gt), ProvenanceError);
  EXPECT_NO_THROW(cmd_evaluate(c, pred, gt, {true}));
  // Missing predictions are an error, not a silent skip.
  fs::remove(pred / "00000.png");
  EXPECT_THROW(cmd_evaluate(c, pred, gt, {true}), InputError);
}

TEST(Pipeline, MismatchedEncoderIsRejected) {
  const auto dir = testutil::temp_dir("mismatch");
  const auto c = load_run_config(write_config(dir, quick_config()));
  run_chain(c);
  // Replace the generator with a differently seeded one after training.
  auto j = quick_config();
  j["analytic"] = {{"seed", 99}};
  const auto other = load_run_config(write_config(dir, j));
  cmd_train_toy_gan(other);
  EXPECT_THROW(cmd_synthesize(c, c.output_dir() / "pseudo" / "masks"), ConfigError);
}

TEST(Pipeline, SparseChainAndSweepCoverageIsMonotone) {
  const auto dir = testutil::temp_dir("sparse_chain");
  const auto c = load_run_config(write_config(dir, quick_config("sparse")));
  cmd_render_toy_data(c);
  const auto pm = load_pair_manifest(c.pairs_path());
  EXPECT_EQ(pm.mode, MaskKind::sparse);
  EXPECT_GT(pm.pairs[0].mask.unknown_count(), 0u);
  cmd_train_toy_gan(c);
  cmd_extract_prototypes(c);
  cmd_sweep_kt(c, c.sweep.k, c.sweep.t);
  const auto csv = read_file(c.output_dir() / "sweep" / "coverage.csv");
  std::map<std::pair<int, int>, std::vector<double>> by_sample_k;  // (sample, k) -> fractions over t
  std::map<std::pair<int, double>, std::vector<double>> by_sample_t;
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    int s, k;
    double t, f;
    ASSERT_EQ(std::sscanf(line.c_str(), "%d,%d,%lf,%lf", &s, &k, &t, &f), 4);
    by_sample_k[{s, k}].push_back(f);
    by_sample_t[{s, t}].push_back(f);
  }
  ASSERT_EQ(by_sample_k.size(), 4u);
  for (const auto& [key, fr] : by_sample_k)
    for (std::size_t i = 1; i < fr.size(); ++i) EXPECT_LE(fr[i], fr[i - 1]);  // higher t, fewer labels
  for (const auto& [key, fr] : by_sample_t)
    for (std::size_t i = 1; i < fr.size(); ++i) EXPECT_GE(fr[i], fr[i - 1]);  // higher k, more labels
  // Each entry labels at most k cells, so coverage is bounded by k * entries / cells.
  const auto lab = load_labeler(c);
  const auto entries = std::get<SparseVectorSet<float>>(lab.prototypes).entries.size();
  const auto meta = load_config_generator(c)->metadata();
  const double cells = static_cast<double>(meta.feature_width) * meta.feature_height;
  for (const auto& [key, fr] : by_sample_k) {
    EXPECT_GT(fr.front(), 0.0);
    EXPECT_LE(fr.front(), key.second * entries / cells + 1e-6);
  }
  EXPECT_TRUE(fs::exists(c.output_dir() / "sweep" / "sample_00000.png"));
  // Dense prototypes cannot be swept.
  const auto d = load_run_config(write_config(testutil::temp_dir("sparse_chain_dense"), quick_config()));
  cmd_render_toy_data(d);
  cmd_train_toy_gan(d);
  cmd_extract_prototypes(d);
  EXPECT_THROW(cmd_sweep_kt(d, {1}, {0.5}), ConfigError);
}

TEST(Pipeline, ModeMustMatchPairManifest) {
  const auto dir = testutil::temp_dir("mode_mismatch");
  const auto c = load_run_config(write_config(dir, quick_config("sparse")));
  cmd_render_toy_data(c);
  cmd_train_toy_gan(c);
  const auto dense = load_run_config(write_config(dir, quick_config("dense")));
  EXPECT_THROW(cmd_extract_prototypes(dense), ConfigError);
}

TEST(Cli, ExitCodes) {
  const auto dir = testutil::temp_dir("cli");
  const auto cfg = write_config(dir, quick_config()).string();
  EXPECT_EQ(run_cli("-c " + cfg + " render-toy-data"), 0);
  EXPECT_EQ(run_cli("-c " + cfg + " train-toy-gan"), 0);
  EXPECT_EQ(run_cli("-c " + cfg + " show-config"), 0);
  EXPECT_EQ(run_cli("-c " + cfg + " --set train.iterations=-1 show-config"), 2);
  EXPECT_EQ(run_cli("-c " + cfg + " --set bogus=1 show-config"), 2);
  EXPECT_EQ(run_cli("-c " + cfg + " frobnicate"), 2);
  EXPECT_EQ(run_cli("-c " + cfg + " pseudo-label"), 2);  // no prototypes yet
  // A pair manifest pointing at an unreadable mask is a runtime failure.
  write_file(dir / "bad_pairs.json", R"({"class_count": 3, "pairs": [{"mask": "nothing.png"}]})");
  EXPECT_EQ(run_cli("-c " + cfg + " --set paths.pairs=bad_pairs.json extract-prototypes"), 3);
}
