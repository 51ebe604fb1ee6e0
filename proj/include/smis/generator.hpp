#pragma once

// Frozen style-based generator abstraction: a mapping network producing one
// intermediate code, broadcast to L synthesis layers, and a synthesis network
// that renders an image and exposes one intermediate feature map.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "smis/archive.hpp"
#include "smis/mask.hpp"
#include "smis/rng.hpp"
#include "smis/tensor.hpp"

namespace smis {

using Image = Volume<float>;       // 3 x H x W, values in [-1, 1]
using FeatureMap = Volume<float>;  // Z x H' x W'

struct GeneratorMetadata {
  std::string backend;
  int noise_dim = 0;       // D_z
  int latent_dim = 0;      // D_w
  int layer_count = 0;     // L
  int feature_channels = 0;  // Z
  int feature_width = 0;   // W'
  int feature_height = 0;  // H'
  int image_width = 0;     // W
  int image_height = 0;    // H
  int feature_tap_layer = 0;
  int class_count = 0;     // known semantics (analytic backend only), else 0

  void validate() const {
    for (int v : {noise_dim, latent_dim, layer_count, feature_channels, feature_width, feature_height, image_width,
                  image_height})
      if (v <= 0) throw ConfigError("generator metadata: dimensions must be positive");
    if (feature_width > image_width || feature_height > image_height)
      throw ConfigError("generator metadata: feature grid larger than image");
    if (feature_tap_layer < 0 || feature_tap_layer >= layer_count)
      throw ConfigError("generator metadata: feature_tap_layer out of range");
  }

  bool operator==(const GeneratorMetadata&) const = default;
};

inline void to_json(json& j, const GeneratorMetadata& m) {
  j = json{{"backend", m.backend},
           {"noise_dim", m.noise_dim},
           {"latent_dim", m.latent_dim},
           {"layer_count", m.layer_count},
           {"feature_channels", m.feature_channels},
           {"feature_width", m.feature_width},
           {"feature_height", m.feature_height},
           {"image_width", m.image_width},
           {"image_height", m.image_height},
           {"feature_tap_layer", m.feature_tap_layer},
           {"class_count", m.class_count}};
}

inline void from_json(const json& j, GeneratorMetadata& m) {
  j.at("backend").get_to(m.backend);
  j.at("noise_dim").get_to(m.noise_dim);
  j.at("latent_dim").get_to(m.latent_dim);
  j.at("layer_count").get_to(m.layer_count);
  j.at("feature_channels").get_to(m.feature_channels);
  j.at("feature_width").get_to(m.feature_width);
  j.at("feature_height").get_to(m.feature_height);
  j.at("image_width").get_to(m.image_width);
  j.at("image_height").get_to(m.image_height);
  j.at("feature_tap_layer").get_to(m.feature_tap_layer);
  m.class_count = j.value("class_count", 0);
}

struct NoiseVector {
  std::vector<float> values;

  int dim() const { return static_cast<int>(values.size()); }
  bool operator==(const NoiseVector&) const = default;

  static NoiseVector from_seed(std::uint64_t seed, int dim) { return {standard_normal(seed, dim)}; }
};

// L per-layer codes of dimension D_w.
struct LatentStack {
  std::vector<std::vector<float>> codes;

  int layer_count() const { return static_cast<int>(codes.size()); }
  int dim() const { return codes.empty() ? 0 : static_cast<int>(codes.front().size()); }
  bool operator==(const LatentStack&) const = default;

  static LatentStack broadcast(const std::vector<float>& w, int layers) {
    return {std::vector<std::vector<float>>(layers, w)};
  }

  void validate(const GeneratorMetadata& m) const {
    if (layer_count() != m.layer_count)
      throw InputError("latent stack has " + std::to_string(layer_count()) + " layers, generator expects " +
                       std::to_string(m.layer_count));
    for (const auto& c : codes) {
      if (static_cast<int>(c.size()) != m.latent_dim)
        throw InputError("latent code has dimension " + std::to_string(c.size()) + ", generator expects " +
                         std::to_string(m.latent_dim));
      for (float v : c)
        if (!std::isfinite(v)) throw InputError("latent code contains non-finite values");
    }
  }

  Archive to_archive() const {
    Archive a;
    a.meta = json{{"kind", "latent_stack"}, {"layer_count", layer_count()}, {"latent_dim", dim()}};
    std::vector<float> flat;
    for (const auto& c : codes) flat.insert(flat.end(), c.begin(), c.end());
    a.put("latents", {layer_count(), dim()}, flat);
    return a;
  }

  static LatentStack from_archive(const Archive& a) {
    const auto& b = a.get("latents");
    if (b.shape.size() != 2) throw InputError("latent archive: expected a rank-2 tensor");
    LatentStack s;
    for (int i = 0; i < b.shape[0]; ++i)
      s.codes.emplace_back(b.data.begin() + static_cast<long>(i) * b.shape[1],
                           b.data.begin() + static_cast<long>(i + 1) * b.shape[1]);
    return s;
  }
};

struct SynthesisOutput {
  Image image;
  std::optional<FeatureMap> features;
};

struct GeneratorSample {
  std::uint64_t seed = 0;
  NoiseVector noise;
  Image image;
  FeatureMap features;
  LatentStack latents;
};

class Generator {
 public:
  virtual ~Generator() = default;

  virtual const GeneratorMetadata& metadata() const = 0;

  // Deterministic; one mapped code broadcast to all L layers.
  virtual LatentStack map_latent(const NoiseVector& z) const = 0;

  virtual SynthesisOutput synthesize(const LatentStack& latents, bool capture_features) const = 0;

  // Gradient of <grad_image, synthesize(latents).image> with respect to
  // every code in the stack.
  virtual LatentStack latent_gradient(const LatentStack& latents, const Image& grad_image) const = 0;

  virtual SemanticMask analytic_semantics(const NoiseVector&) const {
    throw UnsupportedError("analytic_semantics is only available on the analytic backend");
  }

  virtual Archive to_archive() const = 0;

  std::string hash() const { return archive_hash(to_archive()); }

  GeneratorSample sample(std::uint64_t seed) const {
    GeneratorSample s;
    s.seed = seed;
    s.noise = NoiseVector::from_seed(seed, metadata().noise_dim);
    s.latents = map_latent(s.noise);
    auto out = synthesize(s.latents, true);
    s.image = std::move(out.image);
    s.features = std::move(*out.features);
    return s;
  }

  // Average of map_latent over `count` Gaussian draws.
  std::vector<float> mean_latent(int count, std::uint64_t seed) const {
    std::vector<double> acc(metadata().latent_dim, 0.0);
    for (int i = 0; i < count; ++i) {
      const auto w = map_latent(NoiseVector::from_seed(derive_seed(seed, streams::mean_latent, i), metadata().noise_dim));
      for (std::size_t d = 0; d < acc.size(); ++d) acc[d] += w.codes.front()[d];
    }
    std::vector<float> out(acc.size());
    for (std::size_t d = 0; d < acc.size(); ++d) out[d] = static_cast<float>(acc[d] / count);
    return out;
  }

 protected:
  void check_noise(const NoiseVector& z) const {
    if (z.dim() != metadata().noise_dim)
      throw InputError("noise vector has dimension " + std::to_string(z.dim()) + ", generator expects " +
                       std::to_string(metadata().noise_dim));
  }
};

// Mean squared difference between two images of equal shape.
inline double image_mse(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw InputError("image_mse: shape mismatch");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

}  // namespace smis
