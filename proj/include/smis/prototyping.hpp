#pragma once

// Representative vectors from a handful of labelled pairs: latent recovery
// by inversion, dense per-class masked average pooling, and sparse
// per-annotated-pixel vectors.

#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "smis/generator.hpp"
#include "smis/mask.hpp"
#include "smis/nn/optim.hpp"
#include "smis/pseudo_labeler.hpp"

namespace smis {

struct OptimizationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LabeledPair {
  SemanticMask mask;
  std::optional<Image> image;
  std::optional<LatentStack> latents;
};

struct InversionConfig {
  int steps = 300;
  double step_size = 0.05;
  int mean_samples = 256;
  bool per_layer = false;  // optimise every layer code separately (W+)
  std::uint64_t seed = 0;
};

struct InversionResult {
  LatentStack latents;
  double initial_mse = 0;
  double final_mse = 0;
};

// Minimises mean per-pixel squared error between synthesize(latents) and
// `image` with Adam, starting at `init` or at the mean latent.
inline InversionResult invert_image(const Generator& g, const Image& image, const InversionConfig& cfg,
                                    std::optional<LatentStack> init = std::nullopt) {
  const auto& m = g.metadata();
  if (image.channels != 3 || image.width != m.image_width || image.height != m.image_height)
    throw InputError("invert_image: image is " + shape_string(image) + ", generator renders 3x" +
                     std::to_string(m.image_height) + "x" + std::to_string(m.image_width));
  if (cfg.steps < 0) throw ConfigError("invert_image: steps must be >= 0");
  LatentStack current = init ? *init : LatentStack::broadcast(g.mean_latent(cfg.mean_samples, cfg.seed), m.layer_count);
  current.validate(m);

  // Flat parameter vector: one code (shared) or L codes.
  const int groups = cfg.per_layer ? m.layer_count : 1;
  nn::Param<double> w("latent", {groups, m.latent_dim});
  for (int gi = 0; gi < groups; ++gi)
    for (int k = 0; k < m.latent_dim; ++k) w.value[gi * m.latent_dim + k] = current.codes[gi][k];
  auto to_stack = [&] {
    LatentStack s;
    for (int l = 0; l < m.layer_count; ++l) {
      const int gi = cfg.per_layer ? l : 0;
      std::vector<float> c(m.latent_dim);
      for (int k = 0; k < m.latent_dim; ++k) c[k] = static_cast<float>(w.value[gi * m.latent_dim + k]);
      s.codes.push_back(std::move(c));
    }
    return s;
  };

  nn::OptimizerConfig oc;
  oc.learning_rate = cfg.step_size;
  nn::Optimizer<double> opt({&w}, oc);
  InversionResult res;
  current = to_stack();
  res.initial_mse = image_mse(g.synthesize(current, false).image, image);
  double mse = res.initial_mse;
  for (int step = 0; step < cfg.steps; ++step) {
    const auto out = g.synthesize(current, false).image;
    mse = image_mse(out, image);
    if (!std::isfinite(mse)) throw OptimizationError("invert_image: non-finite reconstruction loss at step " + std::to_string(step));
    Image grad(out.channels, out.height, out.width);
    const float scale = static_cast<float>(2.0 / out.size());
    for (std::size_t i = 0; i < out.size(); ++i) grad.data[i] = scale * (out.data[i] - image.data[i]);
    const auto gl = g.latent_gradient(current, grad);
    w.zero_grad();
    for (int l = 0; l < m.layer_count; ++l) {
      const int gi = cfg.per_layer ? l : 0;
      for (int k = 0; k < m.latent_dim; ++k) w.grad[gi * m.latent_dim + k] += gl.codes[l][k];
    }
    opt.step();
    current = to_stack();
  }
  res.latents = current;
  res.final_mse = cfg.steps == 0 ? res.initial_mse : image_mse(g.synthesize(current, false).image, image);
  if (!std::isfinite(res.final_mse)) throw OptimizationError("invert_image: non-finite reconstruction loss");
  return res;
}

// Alias kept next to the prototype code that consumes it.
inline SemanticMask resize_mask_to_feature_grid(const SemanticMask& mask, int width, int height) {
  if (width <= 0 || height <= 0) throw InputError("resize_mask_to_feature_grid: zero target size");
  return resize_majority(mask, width, height);
}

// Masked average pooling per pair, averaged over the pairs in which the class
// occurs. `masks` are at any resolution and are majority-resized onto the
// feature grid.
template <typename T>
DenseVectorSet<T> dense_prototypes(std::span<const Volume<T>> features, std::span<const SemanticMask> masks) {
  if (features.empty() || features.size() != masks.size())
    throw InputError("dense_prototypes: need one feature map per mask and at least one pair");
  const int C = masks.front().class_count;
  const int Z = features.front().channels;
  std::vector<std::vector<double>> sum(C, std::vector<double>(Z, 0.0));
  std::vector<int> pairs_with(C, 0);
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& f = features[i];
    if (f.channels != Z) throw InputError("dense_prototypes: feature maps differ in channel count");
    if (masks[i].class_count != C) throw InputError("dense_prototypes: masks differ in class count");
    if (masks[i].kind != MaskKind::dense) throw InputError("dense_prototypes: mask " + std::to_string(i) + " is sparse");
    masks[i].validate();
    const auto resized = resize_mask_to_feature_grid(masks[i], f.width, f.height);
    std::vector<std::vector<double>> acc(C, std::vector<double>(Z, 0.0));
    std::vector<long> count(C, 0);
    for (int y = 0; y < f.height; ++y)
      for (int x = 0; x < f.width; ++x) {
        const ClassId c = resized.at(x, y);
        ++count[c];
        for (int z = 0; z < Z; ++z) acc[c][z] += f(z, y, x);
      }
    for (int c = 0; c < C; ++c) {
      if (count[c] == 0) continue;
      ++pairs_with[c];
      for (int z = 0; z < Z; ++z) sum[c][z] += acc[c][z] / static_cast<double>(count[c]);
    }
  }
  DenseVectorSet<T> out;
  out.class_count = C;
  out.dim = Z;
  out.vectors.assign(C, std::vector<T>(Z));
  for (int c = 0; c < C; ++c) {
    if (pairs_with[c] == 0)
      throw InputError("dense_prototypes: class " + std::to_string(c) + " does not occur in any labelled mask");
    double norm = 0;
    for (int z = 0; z < Z; ++z) {
      out.vectors[c][z] = static_cast<T>(sum[c][z] / pairs_with[c]);
      norm += sum[c][z] * sum[c][z];
    }
    if (!(norm > 0) || !std::isfinite(norm))
      throw InputError("dense_prototypes: class " + std::to_string(c) + " has a zero or non-finite vector");
  }
  return out;
}

// One entry per annotated source pixel: the feature vector of the grid cell
// containing it. Entries are ordered by pair, then row-major pixel order.
template <typename T>
SparseVectorSet<T> sparse_prototypes(std::span<const Volume<T>> features, std::span<const SemanticMask> masks) {
  if (features.empty() || features.size() != masks.size())
    throw InputError("sparse_prototypes: need one feature map per mask and at least one pair");
  SparseVectorSet<T> out;
  out.class_count = masks.front().class_count;
  out.dim = features.front().channels;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const auto& f = features[i];
    const auto& m = masks[i];
    if (f.channels != out.dim) throw InputError("sparse_prototypes: feature maps differ in channel count");
    if (m.class_count != out.class_count) throw InputError("sparse_prototypes: masks differ in class count");
    m.validate();
    if (m.annotated_count() == 0) throw InputError("sparse_prototypes: mask " + std::to_string(i) + " has no annotated pixels");
    for (int y = 0; y < m.height; ++y)
      for (int x = 0; x < m.width; ++x) {
        const ClassId c = m.at(x, y);
        if (c == kUnknown) continue;
        const int cx = static_cast<int>(static_cast<long>(x) * f.width / m.width);
        const int cy = static_cast<int>(static_cast<long>(y) * f.height / m.height);
        out.entries.push_back({detail::cell_vector(f, cx, cy), c, static_cast<int>(i), x, y});
      }
  }
  return out;
}

// Resolves latents for every pair (inverting images where no latents are
// stored) and returns the feature maps at the generator's tap.
inline std::vector<FeatureMap> pair_features(const Generator& g, std::span<LabeledPair> pairs, const InversionConfig& inv,
                                             std::vector<InversionResult>* inversions = nullptr) {
  std::vector<FeatureMap> out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto& p = pairs[i];
    if (!p.latents) {
      if (!p.image) throw InputError("labelled pair " + std::to_string(i) + " has neither image nor latents");
      auto res = invert_image(g, *p.image, inv);
      p.latents = res.latents;
      if (inversions) inversions->push_back(res);
    }
    out.push_back(*g.synthesize(*p.latents, true).features);
  }
  return out;
}

inline DenseVectorSet<float> dense_prototypes(const Generator& g, std::span<LabeledPair> pairs,
                                              const InversionConfig& inv = {}) {
  const auto feats = pair_features(g, pairs, inv);
  std::vector<SemanticMask> masks;
  for (const auto& p : pairs) masks.push_back(p.mask);
  return dense_prototypes<float>(feats, masks);
}

inline SparseVectorSet<float> sparse_prototypes(const Generator& g, std::span<LabeledPair> pairs,
                                                const InversionConfig& inv = {}) {
  const auto feats = pair_features(g, pairs, inv);
  std::vector<SemanticMask> masks;
  for (const auto& p : pairs) masks.push_back(p.mask);
  return sparse_prototypes<float>(feats, masks);
}

// Prototype files share the tensor archive format.
template <typename T>
Archive prototypes_to_archive(const PseudoLabeler<T>& labeler, const std::vector<std::string>& class_names = {}) {
  Archive a;
  a.meta = json{{"kind", "prototypes"},
                {"mode", to_string(labeler.mode())},
                {"class_count", labeler.class_count()},
                {"dim", labeler.dim()},
                {"k", labeler.sparse_config.k},
                {"t", labeler.sparse_config.t},
                {"class_names", class_names}};
  if (const auto* d = std::get_if<DenseVectorSet<T>>(&labeler.prototypes)) {
    std::vector<T> flat;
    for (const auto& v : d->vectors) flat.insert(flat.end(), v.begin(), v.end());
    a.put("dense.vectors", {d->class_count, d->dim}, flat);
  } else {
    const auto& s = std::get<SparseVectorSet<T>>(labeler.prototypes);
    std::vector<T> flat;
    json sources = json::array();
    for (const auto& e : s.entries) {
      flat.insert(flat.end(), e.vector.begin(), e.vector.end());
      sources.push_back({e.class_id, e.pair_index, e.x, e.y});
    }
    a.meta["entries"] = sources;
    a.put("sparse.vectors", {static_cast<int>(s.entries.size()), s.dim}, flat);
  }
  return a;
}

template <typename T = float>
PseudoLabeler<T> prototypes_from_archive(const Archive& a) {
  if (a.meta.value("kind", "") != "prototypes") throw InputError("archive is not a prototype file");
  PseudoLabeler<T> out;
  out.sparse_config.k = a.meta.value("k", 3);
  out.sparse_config.t = a.meta.value("t", 0.5);
  const int C = a.meta.at("class_count").get<int>();
  const int Z = a.meta.at("dim").get<int>();
  if (parse_mask_kind(a.meta.at("mode").get<std::string>()) == MaskKind::dense) {
    DenseVectorSet<T> d{C, Z, {}};
    const auto& b = a.get("dense.vectors");
    if (b.data.size() != static_cast<std::size_t>(C) * Z) throw InputError("prototype file: dense tensor size mismatch");
    for (int c = 0; c < C; ++c) d.vectors.emplace_back(b.data.begin() + c * Z, b.data.begin() + (c + 1) * Z);
    out.prototypes = std::move(d);
  } else {
    SparseVectorSet<T> s{C, Z, {}};
    const auto& b = a.get("sparse.vectors");
    const auto& src = a.meta.at("entries");
    if (b.data.size() != src.size() * Z) throw InputError("prototype file: sparse tensor size mismatch");
    for (std::size_t i = 0; i < src.size(); ++i) {
      SparseEntry<T> e;
      e.vector.assign(b.data.begin() + i * Z, b.data.begin() + (i + 1) * Z);
      e.class_id = src[i][0].get<ClassId>();
      e.pair_index = src[i][1].get<int>();
      e.x = src[i][2].get<int>();
      e.y = src[i][3].get<int>();
      s.entries.push_back(std::move(e));
    }
    out.prototypes = std::move(s);
  }
  return out;
}

}  // namespace smis
