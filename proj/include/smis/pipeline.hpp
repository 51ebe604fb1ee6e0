#pragma once

// Workflow commands. Each one reads a RunConfig plus input artifacts, writes
// into its own directory under output_dir and finishes with provenance.json:
//   {"command", "config_hash", "seed", "inputs": {name: hash}, "outputs": {relative path: sha256}}
// No timestamps or absolute paths are recorded, so repeated runs are
// byte-identical.

#include <algorithm>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "smis/annotations.hpp"
#include "smis/config.hpp"
#include "smis/generator_io.hpp"
#include "smis/image_io.hpp"
#include "smis/metrics.hpp"
#include "smis/synthesis.hpp"

namespace smis {

struct ProvenanceError : ConfigError {
  using ConfigError::ConfigError;
};

using Log = std::function<void(const std::string&)>;

struct Manifest {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;
};

inline void to_json(json& j, const Manifest& m) {
  j = json{{"command", m.command}, {"config_hash", m.config_hash}, {"seed", m.seed}, {"inputs", m.inputs}, {"outputs", m.outputs}};
}
inline void from_json(const json& j, Manifest& m) {
  m.command = j.value("command", "");
  m.config_hash = j.value("config_hash", "");
  m.seed = j.value("seed", std::uint64_t{0});
  m.inputs = j.value("inputs", std::map<std::string, std::string>{});
  m.outputs = j.value("outputs", std::map<std::string, std::string>{});
}

inline constexpr char kManifestName[] = "provenance.json";

inline std::string file_hash(const fs::path& p) { return sha256_hex(read_file(p)); }

// Hashes every file under `dir` except the manifest itself.
inline Manifest write_manifest(const fs::path& dir, Manifest m) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != kManifestName) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  m.outputs.clear();
  for (const auto& f : files) m.outputs[fs::relative(f, dir).generic_string()] = file_hash(f);
  write_file(dir / kManifestName, json(m).dump(2) + "\n");
  return m;
}

inline std::optional<Manifest> read_manifest(const fs::path& dir) {
  const auto p = dir / kManifestName;
  if (!fs::exists(p)) return std::nullopt;
  return json::parse(read_file(p)).get<Manifest>();
}

// Clears a command's directory so stale files never leak into a manifest.
inline fs::path fresh_dir(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

inline void require_file(const fs::path& p, const std::string& field) {
  if (!fs::exists(p)) throw ConfigError(field + ": " + p.string() + " does not exist");
}

inline std::string index_name(long i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05ld", i);
  return buf;
}

inline Manifest base_manifest(const RunConfig& c, const std::string& command) {
  return Manifest{command, config_hash(c), c.seed, {}, {}};
}

inline std::vector<fs::path> files_with_extension(const fs::path& dir, const std::string& ext) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Labelled pairs

struct PairManifest {
  int class_count = 0;
  MaskKind mode = MaskKind::dense;
  std::vector<std::string> class_names;
  std::vector<LabeledPair> pairs;
};

// {"class_count": 3, "mode": "dense", "class_names": [...],
//  "pairs": [{"image": "images/00000.png", "mask": "masks/00000.png"}]}
// "mask" may also name a sparse annotation (.json); "latents" an archive.
inline PairManifest load_pair_manifest(const fs::path& path) {
  const json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw InputError(path.string() + " is not valid JSON");
  PairManifest out;
  try {
    out.class_count = j.at("class_count").get<int>();
    out.mode = parse_mask_kind(j.value("mode", std::string("dense")));
    out.class_names = j.value("class_names", std::vector<std::string>{});
    const auto dir = path.parent_path();
    for (const auto& p : j.at("pairs")) {
      LabeledPair lp;
      const fs::path mask_path = dir / p.at("mask").get<std::string>();
      if (mask_path.extension() == ".json")
        lp.mask = rasterize(load_annotation(mask_path), out.class_count);
      else
        lp.mask = load_mask(mask_path, out.class_count, out.mode);
      if (lp.mask.kind != out.mode)
        throw InputError("pair mask " + mask_path.string() + " is " + to_string(lp.mask.kind) + ", manifest mode is " + to_string(out.mode));
      if (p.contains("image")) lp.image = load_image(dir / p.at("image").get<std::string>());
      if (p.contains("latents")) lp.latents = LatentStack::from_archive(load_archive(dir / p.at("latents").get<std::string>()));
      out.pairs.push_back(std::move(lp));
    }
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  if (out.pairs.empty()) throw InputError(path.string() + " lists no pairs");
  return out;
}

// ---------------------------------------------------------------------------
// Commands

// Analytic scenes as a toy dataset: images/, ground-truth masks/, and a pair
// manifest naming the configured labelled indices.
inline Manifest cmd_render_toy_data(const RunConfig& c, const Log& log = {}) {
  const auto dir = fresh_dir(c.output_dir() / "data");
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  const AnalyticGenerator g(c.analytic);
  for (int i = 0; i < c.toy_data.count; ++i) {
    const auto s = g.sample(derive_seed(c.seed, streams::dataset, i));
    save_image(s.image, dir / "images" / (index_name(i) + ".png"));
    save_mask(g.semantics(s.latents), dir / "masks" / (index_name(i) + ".png"));
  }
  json pairs = json::array();
  if (c.mode == MaskKind::sparse) fs::create_directories(dir / "sparse");
  for (int i : c.toy_data.labeled) {
    const auto name = index_name(i);
    json entry{{"image", "images/" + name + ".png"}, {"mask", "masks/" + name + ".png"}};
    if (c.mode == MaskKind::sparse) {
      // A few random points per class stand in for scribbles.
      const auto gt = load_mask(dir / "masks" / (name + ".png"), AnalyticGenerator::kClasses, MaskKind::dense);
      auto sparse = SemanticMask::sparse(gt.width, gt.height, gt.class_count);
      std::mt19937_64 rng(derive_seed(c.seed, streams::pseudo_label, static_cast<std::uint64_t>(i)));
      for (int cls = 0; cls < gt.class_count; ++cls) {
        std::vector<std::size_t> cells;
        for (std::size_t p = 0; p < gt.size(); ++p)
          if (gt.labels[p] == cls) cells.push_back(p);
        std::shuffle(cells.begin(), cells.end(), rng);
        for (std::size_t n = 0; n < cells.size() && n < static_cast<std::size_t>(c.toy_data.sparse_points); ++n)
          sparse.labels[cells[n]] = static_cast<ClassId>(cls);
      }
      save_mask(sparse, dir / "sparse" / (name + ".png"));
      entry["mask"] = "sparse/" + name + ".png";
    }
    pairs.push_back(entry);
  }
  std::vector<std::string> names = c.class_names;
  if (names.empty()) names = {"background", "disc", "square"};
  write_file(dir / "pairs.json",
             json{{"class_count", AnalyticGenerator::kClasses}, {"mode", to_string(c.mode)}, {"class_names", names}, {"pairs", pairs}}
                     .dump(2) +
                 "\n");
  if (log) log("rendered " + std::to_string(c.toy_data.count) + " scenes into " + dir.string());
  auto m = base_manifest(c, "render-toy-data");
  m.inputs["analytic_generator"] = g.hash();
  return write_manifest(dir, m);
}

inline Manifest cmd_train_toy_gan(const RunConfig& c, const Log& log = {}) {
  const auto dir = fresh_dir(c.output_dir() / "gan");
  auto m = base_manifest(c, "train-toy-gan");
  std::unique_ptr<Generator> g;
  if (c.gan.backend == "analytic") {
    g = std::make_unique<AnalyticGenerator>(c.analytic);
  } else {
    const auto data_dir = c.dataset_path();
    require_file(data_dir, "paths.dataset");
    std::vector<Image> data;
    std::vector<std::string> hashes;
    for (const auto& f : files_with_extension(data_dir, ".png")) {
      const auto bytes = read_file(f);
      hashes.push_back(sha256_hex(bytes));
      data.push_back(decode_image_png(bytes));
    }
    if (data.empty()) throw ConfigError("paths.dataset: " + data_dir.string() + " contains no PNG images");
    std::string joined;
    for (const auto& h : hashes) joined += h;
    m.inputs["dataset"] = sha256_hex(joined);
    auto gc = c.gan.train;
    gc.seed = derive_seed(c.seed, streams::init, 100);
    std::ofstream csv(dir / "gan_loss.csv");
    csv << "step,d_loss,g_loss\n";
    auto res = train_toy_generator(data, gc, [&](int step, double d, double gl) {
      csv << step << ',' << d << ',' << gl << '\n';
      if (log && step % 100 == 0) log("gan step " + std::to_string(step) + " d " + std::to_string(d) + " g " + std::to_string(gl));
    });
    g = std::make_unique<StyleGenerator>(std::move(res.generator));
  }
  save_generator(*g, dir / "generator.smis");
  std::vector<Image> tiles;
  for (int i = 0; i < 16; ++i) tiles.push_back(g->sample(derive_seed(c.seed, streams::diagnostics, i)).image);
  save_image(tile_images(tiles, 8), dir / "samples.png");
  if (log) log("generator " + g->hash().substr(0, 12) + " written to " + (dir / "generator.smis").string());
  return write_manifest(dir, m);
}

inline PseudoLabeler<float> load_labeler(const RunConfig& c) {
  require_file(c.prototypes_path(), "paths.prototypes");
  auto lab = prototypes_from_archive<float>(load_archive(c.prototypes_path()));
  lab.sparse_config = c.sparse;
  if (lab.mode() != c.mode)
    throw ConfigError("mode: config says " + to_string(c.mode) + ", prototype file is " + to_string(lab.mode()));
  return lab;
}

inline std::unique_ptr<Generator> load_config_generator(const RunConfig& c) {
  require_file(c.generator_path(), "paths.generator");
  return load_generator(c.generator_path());
}

inline Manifest cmd_extract_prototypes(const RunConfig& c, const Log& log = {}) {
  const auto g = load_config_generator(c);
  require_file(c.pairs_path(), "paths.pairs");
  auto pm = load_pair_manifest(c.pairs_path());
  if (pm.mode != c.mode)
    throw ConfigError("mode: config says " + to_string(c.mode) + ", pair manifest is " + to_string(pm.mode));
  const auto dir = fresh_dir(c.output_dir() / "prototypes");
  auto inv = c.inversion;
  inv.seed = derive_seed(c.seed, streams::init, 200);
  std::vector<InversionResult> inversions;
  const auto feats = pair_features(*g, pm.pairs, inv, &inversions);
  std::vector<SemanticMask> masks;
  for (const auto& p : pm.pairs) masks.push_back(p.mask);
  PseudoLabeler<float> lab;
  lab.sparse_config = c.sparse;
  if (c.mode == MaskKind::dense)
    lab.prototypes = dense_prototypes<float>(feats, masks);
  else
    lab.prototypes = sparse_prototypes<float>(feats, masks);
  std::vector<std::string> names = c.class_names.empty() ? pm.class_names : c.class_names;
  save_archive(prototypes_to_archive(lab, names), dir / "prototypes.smis");

  json report = json::array();
  for (const auto& r : inversions) report.push_back({{"initial_mse", r.initial_mse}, {"final_mse", r.final_mse}});
  write_file(dir / "inversion.json", report.dump(2) + "\n");
  const auto& meta = g->metadata();
  std::vector<Image> tiles;
  for (std::size_t i = 0; i < pm.pairs.size(); ++i) {
    const auto& p = pm.pairs[i];
    tiles.push_back(p.image ? *p.image : Image(3, meta.image_height, meta.image_width));
    tiles.push_back(g->synthesize(*p.latents, false).image);
    tiles.push_back(colorize(fit_mask(p.mask, meta.image_width)));
    tiles.push_back(colorize(lab.label(feats[i], meta.image_width, meta.image_height)));
  }
  save_image(tile_images(tiles, 4), dir / "pairs_preview.png");
  if (log) log("extracted " + to_string(c.mode) + " prototypes from " + std::to_string(pm.pairs.size()) + " pair(s)");
  auto m = base_manifest(c, "extract-prototypes");
  m.inputs["generator"] = g->hash();
  m.inputs["pairs"] = file_hash(c.pairs_path());
  return write_manifest(dir, m);
}

inline Manifest cmd_pseudo_label(const RunConfig& c, int count, const Log& log = {}) {
  const auto g = load_config_generator(c);
  const auto lab = load_labeler(c);
  const auto dir = fresh_dir(c.output_dir() / "pseudo");
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  const auto& meta = g->metadata();
  for (int i = 0; i < count; ++i) {
    const auto s = g->sample(derive_seed(c.seed, streams::pseudo_label, i));
    save_image(s.image, dir / "images" / (index_name(i) + ".png"));
    save_mask(lab.label(s.features, meta.image_width, meta.image_height), dir / "masks" / (index_name(i) + ".png"));
  }
  if (log) log("pseudo-labelled " + std::to_string(count) + " samples");
  auto m = base_manifest(c, "pseudo-label");
  m.inputs["generator"] = g->hash();
  m.inputs["prototypes"] = file_hash(c.prototypes_path());
  return write_manifest(dir, m);
}

// Fills the generator- and prototype-dependent encoder fields left at 0.
inline EncoderConfig resolved_encoder_config(const RunConfig& c, const GeneratorMetadata& meta, int classes) {
  auto e = c.encoder;
  if (e.class_count == 0) e.class_count = classes;
  if (e.layer_count == 0) e.layer_count = meta.layer_count;
  if (e.latent_dim == 0) e.latent_dim = meta.latent_dim;
  if (e.input_size == 0) e.input_size = meta.image_width;
  return e;
}

// model.json lets the studio server load a trained chain.
inline json model_descriptor(const RunConfig& c, const fs::path& dir, const std::string& id) {
  auto rel = [&](const fs::path& p) { return fs::relative(fs::absolute(p), fs::absolute(dir)).generic_string(); };
  return json{{"id", id},
              {"generator", rel(c.generator_path())},
              {"encoder", "encoder.smis"},
              {"prototypes", rel(c.prototypes_path())},
              {"class_names", c.class_names}};
}

inline Manifest cmd_train_encoder(const RunConfig& c, const Log& log = {}) {
  const auto g = load_config_generator(c);
  const auto lab = load_labeler(c);
  const auto dir = fresh_dir(c.output_dir() / "encoder");
  const auto ecfg = resolved_encoder_config(c, g->metadata(), lab.class_count());
  auto tc = c.train;
  tc.seed = derive_seed(c.seed, streams::init, 300 + c.train.seed);
  const auto proto_hash = file_hash(c.prototypes_path());
  const long every = std::max<long>(1, tc.iterations / 20);
  const auto res = train_encoder(ecfg, tc, *g, lab, {dir, proto_hash}, [&](long step, double loss) {
    if (log && step % every == 0) log("encoder step " + std::to_string(step) + " loss " + std::to_string(loss));
  });
  write_file(dir / "model.json", model_descriptor(c, dir, c.output_dir().filename().string()).dump(2) + "\n");
  auto m = base_manifest(c, "train-encoder");
  m.inputs["generator"] = g->hash();
  m.inputs["prototypes"] = proto_hash;
  return write_manifest(dir, m);
}

struct ChainModel {
  std::unique_ptr<Generator> generator;
  LoadedEncoder encoder;
  PseudoLabeler<float> labeler;
};

// Loads generator + encoder + prototypes and checks they belong together.
inline ChainModel load_chain(const RunConfig& c) {
  ChainModel ch{load_config_generator(c), {}, load_labeler(c)};
  require_file(c.encoder_path(), "paths.encoder");
  ch.encoder = load_encoder(c.encoder_path());
  check_compatible(ch.encoder, *ch.generator);
  const auto ph = file_hash(c.prototypes_path());
  if (!ch.encoder.provenance.prototype_hash.empty() && ch.encoder.provenance.prototype_hash != ph)
    throw ProvenanceError("encoder was trained with prototypes " + ch.encoder.provenance.prototype_hash.substr(0, 12) +
                          ", configured prototypes are " + ph.substr(0, 12));
  if (ch.labeler.class_count() != ch.encoder.encoder.config().class_count)
    throw ConfigError("prototype class count differs from the encoder's");
  return ch;
}

// Reads a layout: indexed/grey PNG or sparse annotation JSON.
inline SemanticMask load_layout(const fs::path& path, int class_count, MaskKind mode, int width, int height) {
  if (path.extension() == ".json") return rasterize(load_annotation(path), class_count, width, height);
  return load_mask(path, class_count, mode);
}

// Synthesizes from one layout file or every layout in a directory. Writes
// images/<stem>_vNN.png, masks/<stem>.png (pseudo mask of variant 0 at the
// layout's size) and results.json.
inline Manifest cmd_synthesize(const RunConfig& c, const fs::path& input, const Log& log = {}) {
  const auto ch = load_chain(c);
  const auto& g = *ch.generator;
  const auto& meta = g.metadata();
  std::vector<fs::path> layouts;
  if (fs::is_directory(input)) {
    for (const auto& ext : {".png", ".json"}) {
      auto f = files_with_extension(input, ext);
      layouts.insert(layouts.end(), f.begin(), f.end());
    }
    std::sort(layouts.begin(), layouts.end());
  } else {
    require_file(input, "mask");
    layouts.push_back(input);
  }
  if (layouts.empty()) throw ConfigError("mask: " + input.string() + " contains no layouts");
  const auto dir = fresh_dir(c.output_dir() / "synth");
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  json results = json::object();
  std::string joined;
  for (const auto& path : layouts) {
    joined += file_hash(path);
    const auto mask = load_layout(path, ch.labeler.class_count(), c.mode, meta.image_width, meta.image_height);
    const auto res = synthesize_from_mask(ch.encoder.encoder, g, {mask, c.synthesis.mix_layer, c.synthesis.seed, c.synthesis.variant_count});
    const auto stem = path.stem().string();
    json fid = json::array();
    for (std::size_t v = 0; v < res.images.size(); ++v) {
      char suffix[16];
      std::snprintf(suffix, sizeof suffix, "_v%02zu.png", v);
      save_image(res.images[v], dir / "images" / (stem + suffix));
      fid.push_back(layout_fidelity_probe(mask, res.latents[v], g, ch.labeler));
    }
    const auto out = g.synthesize(res.latents[0], true);
    const auto pseudo = ch.labeler.label(*out.features);
    save_mask(pseudo.width <= mask.width ? upscale_mask(pseudo, mask.width, mask.height) : resample_nearest(pseudo, mask.width, mask.height),
              dir / "masks" / (stem + ".png"));
    results[stem] = {{"mix_layer", res.mix_layer}, {"variant_seeds", res.variant_seeds}, {"fidelity", fid}};
  }
  write_file(dir / "results.json", results.dump(2) + "\n");
  if (log) log("synthesized " + std::to_string(layouts.size()) + " layout(s)");
  auto m = base_manifest(c, "synthesize");
  m.inputs["generator"] = g.hash();
  m.inputs["encoder"] = ch.encoder.hash;
  m.inputs["prototypes"] = file_hash(c.prototypes_path());
  m.inputs["layouts"] = sha256_hex(joined);
  return write_manifest(dir, m);
}

struct EvaluateOptions {
  bool allow_mismatch = false;
};

// Refuses to compare directories produced from different artifacts.
inline void check_chain(const RunConfig& c, const fs::path& pred_dir, const fs::path& gt_dir) {
  const auto pm = read_manifest(pred_dir.parent_path());
  const auto gm = read_manifest(gt_dir.parent_path());
  std::vector<std::string> problems;
  if (pm && gm)
    for (const auto& [k, h] : pm->inputs) {
      auto it = gm->inputs.find(k);
      if (it != gm->inputs.end() && k != "layouts" && it->second != h)
        problems.push_back(k + " differs between prediction (" + h.substr(0, 12) + ") and ground truth (" + it->second.substr(0, 12) + ")");
    }
  if (pm && pm->inputs.count("generator") && fs::exists(c.generator_path())) {
    const auto gh = load_generator(c.generator_path())->hash();
    if (gh != pm->inputs.at("generator"))
      problems.push_back("prediction was made with generator " + pm->inputs.at("generator").substr(0, 12) + ", configured generator is " + gh.substr(0, 12));
  }
  if (!problems.empty()) {
    std::string msg = "provenance mismatch:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ProvenanceError(msg + "\n(pass --allow-mismatch to evaluate anyway)");
  }
}

inline json metric_block(const ConfusionMatrix& cm, const std::vector<std::string>& metrics) {
  json out = json::object();
  for (const auto& m : metrics) {
    if (m == "miou") out["miou"] = miou(cm);
    if (m == "fwiou") out["fwiou"] = fwiou(cm);
    if (m == "accuracy") out["accuracy"] = pixel_accuracy(cm);
  }
  return out;
}

// Compares masks (and optionally landmark files) matched by file stem.
inline json cmd_evaluate(const RunConfig& c, const fs::path& pred_dir, const fs::path& gt_dir, const EvaluateOptions& opt = {},
                         const Log& log = {}) {
  require_file(pred_dir, "pred");
  require_file(gt_dir, "gt");
  if (!opt.allow_mismatch) check_chain(c, pred_dir, gt_dir);
  int classes = c.encoder.class_count;
  std::unique_ptr<Generator> g;
  std::optional<PseudoLabeler<float>> lab;
  if (fs::exists(c.prototypes_path())) {
    lab = load_labeler(c);
    classes = lab->class_count();
  }
  if (classes == 0 && !c.class_names.empty()) classes = static_cast<int>(c.class_names.size());
  if (classes == 0) throw ConfigError("encoder.class_count: class count unknown (no prototypes, class_names or encoder.class_count)");

  json report{{"pred", pred_dir.generic_string()}, {"gt", gt_dir.generic_string()}};
  const bool want_iou = std::any_of(c.evaluate.metrics.begin(), c.evaluate.metrics.end(), [](const auto& m) { return m != "landmark_rmse"; });
  std::vector<SemanticMask> gts;
  if (want_iou) {
    ConfusionMatrix cm(classes);
    std::size_t missing = 0;
    for (const auto& gt_path : files_with_extension(gt_dir, ".png")) {
      const auto pred_path = pred_dir / gt_path.filename();
      gts.push_back(load_mask(gt_path, classes, MaskKind::sparse));
      if (!fs::exists(pred_path)) {
        ++missing;
        continue;
      }
      cm = accumulate_confusion(load_mask(pred_path, classes, MaskKind::sparse), gts.back(), cm);
    }
    if (gts.empty()) throw InputError("gt: " + gt_dir.string() + " contains no masks");
    if (missing) throw InputError("pred: " + std::to_string(missing) + " ground-truth mask(s) have no prediction");
    report["masks"] = gts.size();
    report["metrics"] = metric_block(cm, c.evaluate.metrics);
    report["per_class_iou"] = json::array();
    for (double v : class_iou(cm)) report["per_class_iou"].push_back(std::isnan(v) ? json(nullptr) : json(v));

    if (c.evaluate.baseline && lab && fs::exists(c.generator_path())) {
      g = load_generator(c.generator_path());
      ConfusionMatrix base(classes);
      for (std::size_t i = 0; i < gts.size(); ++i) {
        const auto s = g->sample(derive_seed(c.seed, streams::baseline, i));
        base = accumulate_confusion(lab->label(s.features, gts[i].width, gts[i].height), gts[i], base);
      }
      report["baseline"] = metric_block(base, c.evaluate.metrics);
    }
  }
  if (std::count(c.evaluate.metrics.begin(), c.evaluate.metrics.end(), "landmark_rmse")) {
    std::vector<LandmarkSet> preds, gts_l;
    for (const auto& gt_path : files_with_extension(gt_dir, ".json")) {
      const auto pred_path = pred_dir / gt_path.filename();
      gts_l.push_back(json::parse(read_file(gt_path)).get<LandmarkSet>());
      preds.push_back(fs::exists(pred_path) ? json::parse(read_file(pred_path)).get<LandmarkSet>() : LandmarkSet{{}, false});
    }
    const auto r = landmark_rmse(preds, gts_l);
    report["landmarks"] = {{"rmse", r.rmse}, {"na_count", r.na_count}, {"matched", r.matched}};
  }

  const auto dir = fresh_dir(c.output_dir() / "eval");
  write_file(dir / "metrics.json", report.dump(2) + "\n");
  std::string csv = "metric,value\n";
  if (report.contains("metrics"))
    for (const auto& [k, v] : report["metrics"].items()) csv += k + "," + v.dump() + "\n";
  if (report.contains("baseline"))
    for (const auto& [k, v] : report["baseline"].items()) csv += "baseline_" + k + "," + v.dump() + "\n";
  if (report.contains("landmarks")) {
    csv += "landmark_rmse," + report["landmarks"]["rmse"].dump() + "\n";
    csv += "landmark_na_count," + report["landmarks"]["na_count"].dump() + "\n";
  }
  write_file(dir / "metrics.csv", csv);
  if (log) log(report.dump(2));
  auto m = base_manifest(c, "evaluate");
  for (const auto& [name, p] : {std::pair{"pred", pred_dir}, std::pair{"gt", gt_dir}}) {
    std::string joined;
    for (const auto& f : files_with_extension(p, ".png")) joined += file_hash(f);
    for (const auto& f : files_with_extension(p, ".json")) joined += file_hash(f);
    m.inputs[name] = sha256_hex(joined);
  }
  write_manifest(dir, m);
  return report;
}

// Sparse pseudo masks over a k x t grid: one sheet per sample (rows k,
// columns t) and the annotated fraction of every cell in coverage.csv.
inline Manifest cmd_sweep_kt(const RunConfig& c, const std::vector<int>& ks, const std::vector<double>& ts, const Log& log = {}) {
  const auto g = load_config_generator(c);
  auto lab = load_labeler(c);
  if (lab.mode() != MaskKind::sparse) throw ConfigError("mode: sweep-kt needs sparse prototypes");
  for (int k : ks)
    if (k < 1) throw ConfigError("sweep.k values must be >= 1");
  for (double t : ts)
    if (t < -1 || t > 1) throw ConfigError("sweep.t values must lie in [-1, 1]");
  const auto dir = fresh_dir(c.output_dir() / "sweep");
  const auto& meta = g->metadata();
  std::string csv = "sample,k,t,annotated_fraction\n";
  for (int i = 0; i < c.sweep.count; ++i) {
    const auto s = g->sample(derive_seed(c.seed, streams::pseudo_label, i));
    std::vector<Image> tiles;
    for (int k : ks) {
      tiles.push_back(s.image);
      for (double t : ts) {
        lab.sparse_config = {k, t};
        const auto mask = lab.label(s.features);
        tiles.push_back(colorize(upscale_mask(mask, meta.image_width, meta.image_height)));
        char row[96];
        std::snprintf(row, sizeof row, "%d,%d,%g,%.6f\n", i, k, t, static_cast<double>(mask.annotated_count()) / mask.size());
        csv += row;
      }
    }
    save_image(tile_images(tiles, static_cast<int>(ts.size()) + 1), dir / ("sample_" + index_name(i) + ".png"));
  }
  write_file(dir / "coverage.csv", csv);
  if (log) log("swept " + std::to_string(ks.size()) + " k x " + std::to_string(ts.size()) + " t values");
  auto m = base_manifest(c, "sweep-kt");
  m.inputs["generator"] = g->hash();
  m.inputs["prototypes"] = file_hash(c.prototypes_path());
  return write_manifest(dir, m);
}

}  // namespace smis
