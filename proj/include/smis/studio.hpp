#pragma once

// Studio service core: a registry of immutable loaded models and pure
// request handlers returning (status, JSON). The HTTP binding in
// tools/smis_studio.cpp only routes and copies bytes.
//
// A model directory holds model.json descriptors (at the top level or one or
// two directories down):
//   {"id": "toy", "generator": "...smis", "encoder": "...smis", "prototypes": "...smis",
//    "class_names": [...], "colors": ["#rrggbb", ...]}
// Paths are relative to the descriptor.

#include <openssl/evp.h>

#include <map>
#include <memory>
#include <shared_mutex>
#include <string>
#include <vector>

#include "smis/annotations.hpp"
#include "smis/generator_io.hpp"
#include "smis/image_io.hpp"
#include "smis/synthesis.hpp"

namespace smis {

inline constexpr int kMaxVariants = 16;
inline constexpr int kMaxAnnotationCanvas = 4096;

inline std::string base64_encode(const std::string& in) {
  std::string out(4 * ((in.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(in.data()), static_cast<int>(in.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

inline std::string base64_decode(const std::string& in) {
  if (in.size() % 4 != 0) throw InputError("base64 payload length is not a multiple of 4");
  if (in.empty()) return {};
  std::string out(in.size() / 4 * 3, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(in.data()), static_cast<int>(in.size()));
  if (n < 0) throw InputError("payload is not valid base64");
  std::size_t pad = 0;
  if (in.back() == '=') ++pad;
  if (in.size() > 1 && in[in.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

inline std::string hex_color(const Rgb& c) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c[0], c[1], c[2]);
  return buf;
}

inline Rgb parse_hex_color(const std::string& s) {
  if (s.size() != 7 || s[0] != '#') throw InputError("colour '" + s + "' is not #rrggbb");
  Rgb c{};
  for (int k = 0; k < 3; ++k) c[k] = static_cast<std::uint8_t>(std::stoi(s.substr(1 + 2 * k, 2), nullptr, 16));
  return c;
}

struct SessionModel {
  std::string id;
  std::unique_ptr<Generator> generator;
  LoadedEncoder encoder;
  PseudoLabeler<float> labeler;
  std::vector<std::string> class_names;
  std::vector<Rgb> palette;

  MaskKind mode() const { return labeler.mode(); }
  const GeneratorMetadata& metadata() const { return generator->metadata(); }
  int class_count() const { return labeler.class_count(); }

  json summary() const {
    const auto& m = metadata();
    return json{{"id", id},
                {"mode", to_string(mode())},
                {"class_count", class_count()},
                {"backend", m.backend},
                {"canvas", {{"width", m.image_width}, {"height", m.image_height}}},
                {"layer_count", m.layer_count},
                {"default_mix_layer", default_mix_layer(m)},
                {"generator_hash", generator->hash()},
                {"encoder_hash", encoder.hash}};
  }
};

inline std::shared_ptr<const SessionModel> load_session_model(const std::filesystem::path& descriptor) {
  const json j = json::parse(read_file(descriptor), nullptr, false);
  if (j.is_discarded()) throw ConfigError(descriptor.string() + " is not valid JSON");
  const auto dir = descriptor.parent_path();
  auto m = std::make_shared<SessionModel>();
  try {
    m->id = j.value("id", dir.filename().string());
    m->generator = load_generator(dir / j.at("generator").get<std::string>());
    m->encoder = load_encoder(dir / j.at("encoder").get<std::string>());
    const auto proto_path = dir / j.at("prototypes").get<std::string>();
    const auto proto_bytes = read_file(proto_path);
    m->labeler = prototypes_from_archive<float>(deserialize(proto_bytes));
    m->class_names = j.value("class_names", std::vector<std::string>{});
    if (m->class_names.empty()) {
      const auto a = deserialize(proto_bytes);
      m->class_names = a.meta.value("class_names", std::vector<std::string>{});
    }
    m->palette = default_palette(m->class_count());
    if (j.contains("colors")) {
      const auto colors = j.at("colors").get<std::vector<std::string>>();
      for (std::size_t c = 0; c < colors.size() && c < m->palette.size(); ++c) m->palette[c] = parse_hex_color(colors[c]);
    }
    check_compatible(m->encoder, *m->generator);
    const auto ph = sha256_hex(proto_bytes);
    if (!m->encoder.provenance.prototype_hash.empty() && m->encoder.provenance.prototype_hash != ph)
      throw ConfigError("encoder and prototypes of model '" + m->id + "' come from different runs");
    if (m->encoder.encoder.config().class_count != m->class_count())
      throw ConfigError("encoder and prototypes of model '" + m->id + "' differ in class count");
  } catch (const json::exception& e) {
    throw ConfigError(descriptor.string() + ": " + e.what());
  }
  return m;
}

class ModelRegistry {
 public:
  void add(std::shared_ptr<const SessionModel> m) {
    std::unique_lock lock(mutex_);
    if (models_.count(m->id)) throw ConfigError("duplicate model id '" + m->id + "'");
    models_[m->id] = std::move(m);
  }

  // Loads every model.json up to two levels below `dir`.
  void load_directory(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw ConfigError("model directory " + dir.string() + " does not exist");
    std::vector<std::filesystem::path> found;
    for (auto it = std::filesystem::recursive_directory_iterator(dir); it != std::filesystem::recursive_directory_iterator(); ++it) {
      if (it.depth() >= 2) it.disable_recursion_pending();
      if (it->is_regular_file() && it->path().filename() == "model.json") found.push_back(it->path());
    }
    std::sort(found.begin(), found.end());
    for (const auto& f : found) add(load_session_model(f));
  }

  std::shared_ptr<const SessionModel> find(const std::string& id) const {
    std::shared_lock lock(mutex_);
    auto it = models_.find(id);
    return it == models_.end() ? nullptr : it->second;
  }

  std::vector<std::shared_ptr<const SessionModel>> all() const {
    std::shared_lock lock(mutex_);
    std::vector<std::shared_ptr<const SessionModel>> out;
    for (const auto& [id, m] : models_) out.push_back(m);
    return out;
  }

 private:
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::shared_ptr<const SessionModel>> models_;
};

struct StudioResponse {
  int status = 200;
  json body;
};

struct HttpError : std::runtime_error {
  HttpError(int s, const std::string& msg) : std::runtime_error(msg), status(s) {}
  int status;
};

namespace detail {

inline StudioResponse error_response(int status, const std::string& msg) { return {status, json{{"error", msg}}}; }

inline json parse_body(const std::string& body) {
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw HttpError(422, "request body must be a JSON object");
  return j;
}

template <typename T>
T field(const json& j, const std::string& name, T fallback) {
  if (!j.contains(name) || j.at(name).is_null()) return fallback;
  try {
    return j.at(name).get<T>();
  } catch (const json::exception&) {
    throw HttpError(422, "field '" + name + "' has the wrong type");
  }
}

// Request mask at the model canvas; never resized.
inline SemanticMask request_mask(const SessionModel& model, const json& body) {
  const auto& meta = model.metadata();
  const int C = model.class_count();
  const bool has_png = body.contains("mask_png"), has_ann = body.contains("annotation");
  if (has_png == has_ann) throw HttpError(422, "send exactly one of 'mask_png' or 'annotation'");
  if (has_ann) {
    if (model.mode() == MaskKind::dense) throw HttpError(409, "model '" + model.id + "' is dense; stroke/point payloads need a sparse model");
    SparseAnnotation a;
    try {
      a = parse_annotation(body.at("annotation"));
    } catch (const InputError& e) {
      throw HttpError(422, e.what());
    }
    if (a.width > kMaxAnnotationCanvas || a.height > kMaxAnnotationCanvas)
      throw HttpError(422, "annotation canvas exceeds " + std::to_string(kMaxAnnotationCanvas) + " pixels per side");
    try {
      auto m = rasterize(a, C, meta.image_width, meta.image_height);
      if (m.annotated_count() == 0) throw HttpError(422, "annotation marks no pixels");
      return m;
    } catch (const InputError& e) {
      throw HttpError(422, e.what());
    }
  }
  std::string png;
  try {
    png = base64_decode(field<std::string>(body, "mask_png", ""));
  } catch (const InputError& e) {
    throw HttpError(422, std::string("mask_png: ") + e.what());
  }
  SemanticMask m;
  try {
    m = decode_mask_png(png, C, MaskKind::sparse);
  } catch (const InputError& e) {
    throw HttpError(422, std::string("mask_png: ") + e.what());
  }
  if (m.width != meta.image_width || m.height != meta.image_height)
    throw HttpError(422, "mask is " + std::to_string(m.width) + "x" + std::to_string(m.height) + ", canvas is " +
                             std::to_string(meta.image_width) + "x" + std::to_string(meta.image_height));
  if (m.unknown_count() == 0) {
    m.kind = MaskKind::dense;
  } else if (model.mode() == MaskKind::dense) {
    throw HttpError(409, "model '" + model.id + "' is dense; the mask has unlabelled pixels");
  }
  if (m.annotated_count() == 0) throw HttpError(422, "mask has no labelled pixels");
  return m;
}

}  // namespace detail

inline StudioResponse studio_list_models(const ModelRegistry& reg) {
  json out = json::array();
  for (const auto& m : reg.all()) out.push_back(m->summary());
  return {200, json{{"models", out}}};
}

inline StudioResponse studio_classes(const ModelRegistry& reg, const std::string& id) {
  const auto m = reg.find(id);
  if (!m) return detail::error_response(404, "unknown model '" + id + "'");
  json classes = json::array();
  for (int c = 0; c < m->class_count(); ++c)
    classes.push_back({{"id", c},
                       {"name", c < static_cast<int>(m->class_names.size()) ? m->class_names[c] : "class " + std::to_string(c)},
                       {"color", hex_color(m->palette[c])}});
  const auto& meta = m->metadata();
  return {200, json{{"model", id},
                    {"mode", to_string(m->mode())},
                    {"class_count", m->class_count()},
                    {"unknown", kUnknown},
                    {"canvas", {{"width", meta.image_width}, {"height", meta.image_height}}},
                    {"layer_count", meta.layer_count},
                    {"default_mix_layer", default_mix_layer(meta)},
                    {"classes", classes}}};
}

// Body: {"mask_png": base64 | "annotation": {...}, "mix_layer": int?, "seed": uint, "variant_count": int}
inline StudioResponse studio_synthesize(const ModelRegistry& reg, const std::string& id, const std::string& body) {
  const auto m = reg.find(id);
  if (!m) return detail::error_response(404, "unknown model '" + id + "'");
  try {
    const auto j = detail::parse_body(body);
    SynthesisRequest req;
    req.mask = detail::request_mask(*m, j);
    if (j.contains("mix_layer") && !j.at("mix_layer").is_null()) req.mix_layer = detail::field<int>(j, "mix_layer", 0);
    req.seed = detail::field<std::uint64_t>(j, "seed", 0);
    req.variant_count = detail::field<int>(j, "variant_count", 1);
    if (req.variant_count < 1 || req.variant_count > kMaxVariants)
      throw HttpError(422, "variant_count must be in [1, " + std::to_string(kMaxVariants) + "]");
    SynthesisResult res;
    try {
      res = synthesize_from_mask(m->encoder.encoder, *m->generator, req);
    } catch (const InputError& e) {
      throw HttpError(422, e.what());
    }
    json images = json::array(), fidelity = json::array();
    for (std::size_t v = 0; v < res.images.size(); ++v) {
      images.push_back(base64_encode(encode_image_png(res.images[v])));
      fidelity.push_back(layout_fidelity_probe(req.mask, res.latents[v], *m->generator, m->labeler));
    }
    return {200, json{{"model", id}, {"mix_layer", res.mix_layer}, {"variant_seeds", res.variant_seeds}, {"images", images}, {"fidelity", fidelity}}};
  } catch (const HttpError& e) {
    return detail::error_response(e.status, e.what());
  }
}

// Body: {"seed": uint}
inline StudioResponse studio_pseudo_preview(const ModelRegistry& reg, const std::string& id, const std::string& body) {
  const auto m = reg.find(id);
  if (!m) return detail::error_response(404, "unknown model '" + id + "'");
  try {
    const auto j = detail::parse_body(body);
    const auto seed = detail::field<std::uint64_t>(j, "seed", 0);
    const auto s = m->generator->sample(seed);
    const auto& meta = m->metadata();
    const auto mask = m->labeler.label(s.features, meta.image_width, meta.image_height);
    return {200, json{{"model", id},
                      {"seed", seed},
                      {"image", base64_encode(encode_image_png(s.image))},
                      {"mask_png", base64_encode(encode_mask_png(mask, m->palette))},
                      {"annotated_fraction", static_cast<double>(mask.annotated_count()) / mask.size()}}};
  } catch (const HttpError& e) {
    return detail::error_response(e.status, e.what());
  }
}

}  // namespace smis
