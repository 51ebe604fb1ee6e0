#pragma once

// One JSON file describes one experiment end to end. Relative paths resolve
// against the file's directory; empty artifact paths default to the places
// where the producing command writes them under output_dir.

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "smis/analytic_generator.hpp"
#include "smis/archive.hpp"
#include "smis/encoder.hpp"
#include "smis/prototyping.hpp"
#include "smis/pseudo_labeler.hpp"
#include "smis/style_generator.hpp"

namespace smis {

namespace fs = std::filesystem;

struct PathsConfig {
  std::string output_dir = "run";
  std::string dataset;     // directory of training images for the toy GAN
  std::string pairs;       // labelled-pair manifest
  std::string generator;
  std::string prototypes;
  std::string encoder;
};

struct ToyDataConfig {
  int count = 2000;
  std::vector<int> labeled{0};  // dataset indices written to the pair manifest
  int sparse_points = 6;        // per class, sparse mode only
};

struct GanSection {
  std::string backend = "style";  // style | analytic
  GanTrainConfig train;
};

struct SynthesisSection {
  std::optional<int> mix_layer;
  int variant_count = 4;
  std::uint64_t seed = 0;
};

struct SweepSection {
  std::vector<int> k{1, 2, 3};
  std::vector<double> t{0.0, 0.5, 0.9};
  int count = 4;
};

struct EvaluateSection {
  std::vector<std::string> metrics{"miou", "fwiou", "accuracy"};
  bool baseline = true;
};

struct RunConfig {
  std::uint64_t seed = 0;
  MaskKind mode = MaskKind::dense;
  std::vector<std::string> class_names;
  PathsConfig paths;
  ToyDataConfig toy_data;
  AnalyticGeneratorOptions analytic;
  GanSection gan;
  InversionConfig inversion;
  SparseLabelerConfig sparse;
  EncoderConfig encoder;
  TrainConfig train;
  SynthesisSection synthesis;
  int pseudo_count = 64;
  SweepSection sweep;
  EvaluateSection evaluate;

  fs::path base_dir = ".";  // not serialised

  fs::path resolve(const std::string& p) const { return p.empty() ? fs::path() : (fs::path(p).is_absolute() ? fs::path(p) : base_dir / p); }
  fs::path output_dir() const { return resolve(paths.output_dir); }
  fs::path dataset_path() const { return paths.dataset.empty() ? output_dir() / "data" / "images" : resolve(paths.dataset); }
  fs::path pairs_path() const { return paths.pairs.empty() ? output_dir() / "data" / "pairs.json" : resolve(paths.pairs); }
  fs::path generator_path() const { return paths.generator.empty() ? output_dir() / "gan" / "generator.smis" : resolve(paths.generator); }
  fs::path prototypes_path() const {
    return paths.prototypes.empty() ? output_dir() / "prototypes" / "prototypes.smis" : resolve(paths.prototypes);
  }
  fs::path encoder_path() const { return paths.encoder.empty() ? output_dir() / "encoder" / "encoder.smis" : resolve(paths.encoder); }

  void validate() const {
    if (paths.output_dir.empty()) throw ConfigError("paths.output_dir must not be empty");
    if (toy_data.count < 1) throw ConfigError("toy_data.count must be >= 1");
    for (int i : toy_data.labeled)
      if (i < 0 || i >= toy_data.count) throw ConfigError("toy_data.labeled index " + std::to_string(i) + " is outside the dataset");
    if (toy_data.sparse_points < 1) throw ConfigError("toy_data.sparse_points must be >= 1");
    if (gan.backend != "style" && gan.backend != "analytic") throw ConfigError("gan.backend must be 'style' or 'analytic'");
    gan.train.generator.validate();
    if (gan.train.steps < 0 || gan.train.batch_size < 1) throw ConfigError("gan.steps must be >= 0 and gan.batch_size >= 1");
    if (inversion.steps < 0) throw ConfigError("inversion.steps must be >= 0");
    if (inversion.mean_samples < 1) throw ConfigError("inversion.mean_samples must be >= 1");
    sparse.validate();
    train.validate();
    if (synthesis.variant_count < 1) throw ConfigError("synthesis.variant_count must be >= 1");
    if (synthesis.mix_layer && *synthesis.mix_layer < 0) throw ConfigError("synthesis.mix_layer must be >= 0");
    if (pseudo_count < 1) throw ConfigError("pseudo_count must be >= 1");
    if (sweep.k.empty() || sweep.t.empty() || sweep.count < 1) throw ConfigError("sweep needs k values, t values and count >= 1");
    for (int k : sweep.k)
      if (k < 1) throw ConfigError("sweep.k values must be >= 1");
    for (double t : sweep.t)
      if (t < -1 || t > 1) throw ConfigError("sweep.t values must lie in [-1, 1]");
    static const std::set<std::string> known{"miou", "fwiou", "accuracy", "landmark_rmse"};
    for (const auto& m : evaluate.metrics)
      if (!known.count(m)) throw ConfigError("evaluate.metrics: unknown metric '" + m + "'");
  }
};

namespace detail {

inline json inversion_json(const InversionConfig& c) {
  return json{{"steps", c.steps}, {"step_size", c.step_size}, {"mean_samples", c.mean_samples},
              {"per_layer", c.per_layer}, {"seed", c.seed}};
}

inline json analytic_json(const AnalyticGeneratorOptions& o) {
  return json{{"image_size", o.image_size}, {"feature_size", o.feature_size}, {"feature_channels", o.feature_channels},
              {"seed", o.seed}, {"mapping_perturbation", o.mapping_perturbation}};
}

inline void check_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError((where.empty() ? std::string("config") : where) + " must be an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw ConfigError("unknown config field '" + (where.empty() ? k : where + "." + k) + "'");
}

// Sets a dotted key to a value parsed as JSON, falling back to a string.
inline void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* node = &j;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    if (!node->contains(part)) (*node)[part] = json::object();
    node = &(*node)[part];
    if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
    start = dot + 1;
  }
}

}  // namespace detail

inline json to_json_config(const RunConfig& c) {
  json synth{{"variant_count", c.synthesis.variant_count}, {"seed", c.synthesis.seed}};
  synth["mix_layer"] = c.synthesis.mix_layer ? json(*c.synthesis.mix_layer) : json(nullptr);
  json gan = c.gan.train;
  gan["backend"] = c.gan.backend;
  return json{{"seed", c.seed},
              {"mode", to_string(c.mode)},
              {"class_names", c.class_names},
              {"paths",
               {{"output_dir", c.paths.output_dir},
                {"dataset", c.paths.dataset},
                {"pairs", c.paths.pairs},
                {"generator", c.paths.generator},
                {"prototypes", c.paths.prototypes},
                {"encoder", c.paths.encoder}}},
              {"toy_data", {{"count", c.toy_data.count}, {"labeled", c.toy_data.labeled}, {"sparse_points", c.toy_data.sparse_points}}},
              {"analytic", detail::analytic_json(c.analytic)},
              {"gan", gan},
              {"inversion", detail::inversion_json(c.inversion)},
              {"sparse", {{"k", c.sparse.k}, {"t", c.sparse.t}}},
              {"encoder", c.encoder},
              {"train", c.train},
              {"synthesis", synth},
              {"pseudo_count", c.pseudo_count},
              {"sweep", {{"k", c.sweep.k}, {"t", c.sweep.t}, {"count", c.sweep.count}}},
              {"evaluate", {{"metrics", c.evaluate.metrics}, {"baseline", c.evaluate.baseline}}}};
}

namespace detail {

// Runs `parse` on a section; on a type error, retries key by key to name the
// offending field.
template <typename F>
void parse_section(const json& j, const std::string& name, const std::set<std::string>& allowed, F parse) {
  check_keys(j, name, allowed);
  try {
    parse(j);
  } catch (const json::exception& e) {
    for (const auto& [k, v] : j.items()) {
      try {
        parse(json{{k, v}});
      } catch (const json::exception& inner) {
        throw ConfigError("config field '" + name + "." + k + "': " + inner.what());
      }
    }
    throw ConfigError("config field '" + name + "': " + e.what());
  } catch (const InputError& e) {
    throw ConfigError("config field '" + name + "': " + e.what());
  }
}

}  // namespace detail

inline RunConfig run_config_from_json(const json& j, const fs::path& base_dir = ".") {
  using detail::parse_section;
  RunConfig c;
  c.base_dir = base_dir;
  parse_section(j, "", {"seed", "mode", "class_names", "paths", "toy_data", "analytic", "gan", "inversion", "sparse", "encoder",
                        "train", "synthesis", "pseudo_count", "sweep", "evaluate"},
                [](const json&) {});
  auto top = [&](const std::string& key, auto parse) {
    if (!j.contains(key)) return;
    try {
      parse(j.at(key));
    } catch (const json::exception& e) {
      throw ConfigError("config field '" + key + "': " + e.what());
    } catch (const InputError& e) {
      throw ConfigError("config field '" + key + "': " + e.what());
    }
  };
  top("seed", [&](const json& v) { c.seed = v.get<std::uint64_t>(); });
  top("mode", [&](const json& v) { c.mode = parse_mask_kind(v.get<std::string>()); });
  top("class_names", [&](const json& v) { c.class_names = v.get<std::vector<std::string>>(); });
  top("pseudo_count", [&](const json& v) { c.pseudo_count = v.get<int>(); });
  if (j.contains("paths"))
    parse_section(j.at("paths"), "paths", {"output_dir", "dataset", "pairs", "generator", "prototypes", "encoder"}, [&](const json& p) {
      c.paths.output_dir = p.value("output_dir", c.paths.output_dir);
      c.paths.dataset = p.value("dataset", c.paths.dataset);
      c.paths.pairs = p.value("pairs", c.paths.pairs);
      c.paths.generator = p.value("generator", c.paths.generator);
      c.paths.prototypes = p.value("prototypes", c.paths.prototypes);
      c.paths.encoder = p.value("encoder", c.paths.encoder);
    });
  if (j.contains("toy_data"))
    parse_section(j.at("toy_data"), "toy_data", {"count", "labeled", "sparse_points"}, [&](const json& t) {
      c.toy_data.count = t.value("count", c.toy_data.count);
      c.toy_data.labeled = t.value("labeled", c.toy_data.labeled);
      c.toy_data.sparse_points = t.value("sparse_points", c.toy_data.sparse_points);
    });
  if (j.contains("analytic"))
    parse_section(j.at("analytic"), "analytic", {"image_size", "feature_size", "feature_channels", "seed", "mapping_perturbation"},
                  [&](const json& a) {
                    c.analytic.image_size = a.value("image_size", c.analytic.image_size);
                    c.analytic.feature_size = a.value("feature_size", c.analytic.feature_size);
                    c.analytic.feature_channels = a.value("feature_channels", c.analytic.feature_channels);
                    c.analytic.seed = a.value("seed", c.analytic.seed);
                    c.analytic.mapping_perturbation = a.value("mapping_perturbation", c.analytic.mapping_perturbation);
                  });
  if (j.contains("gan"))
    parse_section(j.at("gan"), "gan", {"backend", "steps", "batch_size", "learning_rate", "beta1", "beta2", "seed", "generator"},
                  [&](const json& g) {
                    c.gan.backend = g.value("backend", c.gan.backend);
                    from_json(g, c.gan.train);
                  });
  if (j.contains("inversion"))
    parse_section(j.at("inversion"), "inversion", {"steps", "step_size", "mean_samples", "per_layer", "seed"}, [&](const json& v) {
      c.inversion.steps = v.value("steps", c.inversion.steps);
      c.inversion.step_size = v.value("step_size", c.inversion.step_size);
      c.inversion.mean_samples = v.value("mean_samples", c.inversion.mean_samples);
      c.inversion.per_layer = v.value("per_layer", c.inversion.per_layer);
      c.inversion.seed = v.value("seed", c.inversion.seed);
    });
  if (j.contains("sparse"))
    parse_section(j.at("sparse"), "sparse", {"k", "t"}, [&](const json& s) {
      c.sparse.k = s.value("k", c.sparse.k);
      c.sparse.t = s.value("t", c.sparse.t);
    });
  if (j.contains("encoder"))
    parse_section(j.at("encoder"), "encoder",
                  {"class_count", "layer_count", "latent_dim", "input_size", "widths", "head_pool", "head_gain"},
                  [&](const json& e) { from_json(e, c.encoder); });
  if (j.contains("train"))
    parse_section(j.at("train"), "train",
                  {"iterations", "batch_size", "learning_rate", "optimizer", "seed", "checkpoint_every", "diagnostic_every",
                   "diagnostic_count", "mean_latent_samples", "queue_capacity"},
                  [&](const json& t) { from_json(t, c.train); });
  if (j.contains("synthesis"))
    parse_section(j.at("synthesis"), "synthesis", {"mix_layer", "variant_count", "seed"}, [&](const json& s) {
      if (s.contains("mix_layer")) {
        if (s.at("mix_layer").is_null())
          c.synthesis.mix_layer.reset();
        else
          c.synthesis.mix_layer = s.at("mix_layer").get<int>();
      }
      c.synthesis.variant_count = s.value("variant_count", c.synthesis.variant_count);
      c.synthesis.seed = s.value("seed", c.synthesis.seed);
    });
  if (j.contains("sweep"))
    parse_section(j.at("sweep"), "sweep", {"k", "t", "count"}, [&](const json& s) {
      c.sweep.k = s.value("k", c.sweep.k);
      c.sweep.t = s.value("t", c.sweep.t);
      c.sweep.count = s.value("count", c.sweep.count);
    });
  if (j.contains("evaluate"))
    parse_section(j.at("evaluate"), "evaluate", {"metrics", "baseline"}, [&](const json& e) {
      c.evaluate.metrics = e.value("metrics", c.evaluate.metrics);
      c.evaluate.baseline = e.value("baseline", c.evaluate.baseline);
    });
  c.validate();
  return c;
}

inline RunConfig load_run_config(const fs::path& path, const std::vector<std::string>& overrides = {}) {
  if (!fs::exists(path)) throw ConfigError("config file " + path.string() + " does not exist");
  json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw ConfigError("config file " + path.string() + " is not valid JSON");
  for (const auto& o : overrides) detail::apply_override(j, o);
  return run_config_from_json(j, path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

// Hash of the canonical serialisation; key order is fixed by json's sorted maps.
inline std::string config_hash(const RunConfig& c) { return sha256_hex(to_json_config(c).dump()); }

}  // namespace smis
