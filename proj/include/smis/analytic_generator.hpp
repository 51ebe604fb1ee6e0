#pragma once

// Analytic toy generator: renders a disc (class 1) over a square (class 2) on
// a background (class 0). The coarsest code carries geometry, the remaining
// codes carry colours and shading, so the true class of every pixel is known
// in closed form.

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include "smis/generator.hpp"

namespace smis {

struct AnalyticScene {
  // geometry, unit coordinates with (0,0) at the top-left image corner
  double disc_x = 0.5, disc_y = 0.5, disc_r = 0.2;
  bool disc_present = true;
  double square_x = 0.5, square_y = 0.5, square_half = 0.17;
  bool square_present = true;
  // appearance
  std::array<double, 3> background{};
  std::array<double, 3> disc_color{};
  std::array<double, 3> square_color{};
  double brightness = 0.0;
  double shading = 0.0;
  std::array<double, 8> style{};

  static constexpr double kPresenceThreshold = -0.3;

  static AnalyticScene from_latents(const LatentStack& s) {
    const auto& g = s.codes.at(0);
    const auto& bg = s.codes.at(1);
    const auto& col = s.codes.at(2);
    const auto& fine = s.codes.at(3);
    AnalyticScene sc;
    sc.disc_x = 0.5 + 0.3 * std::tanh(g[0]);
    sc.disc_y = 0.5 + 0.3 * std::tanh(g[1]);
    sc.disc_r = 0.2 + 0.08 * std::tanh(g[2]);
    sc.disc_present = g[3] > kPresenceThreshold;
    sc.square_x = 0.5 + 0.3 * std::tanh(g[4]);
    sc.square_y = 0.5 + 0.3 * std::tanh(g[5]);
    sc.square_half = 0.17 + 0.07 * std::tanh(g[6]);
    sc.square_present = g[7] > kPresenceThreshold;
    constexpr std::array<double, 3> bg_base{-0.6, -0.4, -0.2};
    constexpr std::array<double, 3> disc_base{0.8, -0.5, -0.5};
    constexpr std::array<double, 3> square_base{-0.5, -0.3, 0.8};
    for (int k = 0; k < 3; ++k) {
      sc.background[k] = bg_base[k] + 0.25 * std::tanh(bg[k]);
      sc.disc_color[k] = disc_base[k] + 0.15 * std::tanh(col[k]);
      sc.square_color[k] = square_base[k] + 0.15 * std::tanh(col[3 + k]);
    }
    sc.brightness = 0.1 * std::tanh(fine[0]);
    sc.shading = 0.1 * std::tanh(fine[1]);
    for (int k = 0; k < 8; ++k) sc.style[k] = std::tanh(bg[8 + k % 8]) * 0.5 + std::tanh(col[8 + k % 8]) * 0.5;
    return sc;
  }

  bool inside_disc(double u, double v) const {
    const double dx = u - disc_x, dy = v - disc_y;
    return disc_present && dx * dx + dy * dy <= disc_r * disc_r;
  }
  bool inside_square(double u, double v) const {
    return square_present && std::max(std::abs(u - square_x), std::abs(v - square_y)) <= square_half;
  }

  int class_at(double u, double v) const {
    if (inside_disc(u, v)) return 1;
    if (inside_square(u, v)) return 2;
    return 0;
  }

  // Soft coverage of (background, disc, square) at a point; `sharpness` is
  // the edge slope in units of 1/image-width.
  std::array<double, 3> coverage(double u, double v, double sharpness) const {
    auto sigmoid = [](double t) { return 1.0 / (1.0 + std::exp(-t)); };
    const double dd = std::hypot(u - disc_x, v - disc_y);
    const double ds = std::max(std::abs(u - square_x), std::abs(v - square_y));
    const double a_disc = disc_present ? sigmoid((disc_r - dd) * sharpness) : 0.0;
    const double a_sq = square_present ? sigmoid((square_half - ds) * sharpness) * (1.0 - a_disc) : 0.0;
    return {1.0 - a_disc - a_sq, a_disc, a_sq};
  }
};

struct AnalyticGeneratorOptions {
  int image_size = 32;
  int feature_size = 16;
  int feature_channels = 8;
  std::uint64_t seed = 0;
  double mapping_perturbation = 0.1;  // 0 gives an identity mapping matrix
};

class AnalyticGenerator final : public Generator {
 public:
  static constexpr int kClasses = 3;

  using Options = AnalyticGeneratorOptions;

  explicit AnalyticGenerator(Options opt = {}) {
    meta_.backend = "analytic";
    meta_.noise_dim = 16;
    meta_.latent_dim = 16;
    meta_.layer_count = 4;
    meta_.feature_channels = opt.feature_channels;
    meta_.feature_width = meta_.feature_height = opt.feature_size;
    meta_.image_width = meta_.image_height = opt.image_size;
    meta_.feature_tap_layer = meta_.layer_count - 1;
    meta_.class_count = kClasses;
    meta_.validate();

    std::mt19937_64 rng(opt.seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    const int d = meta_.noise_dim;
    mapping_weight_.assign(static_cast<std::size_t>(d) * d, 0.0f);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        mapping_weight_[i * d + j] =
            static_cast<float>((i == j ? 1.0 : 0.0) + opt.mapping_perturbation * n01(rng) / std::sqrt(d));
    mapping_bias_.assign(d, 0.0f);
    embedding_.resize(static_cast<std::size_t>(kClasses) * meta_.feature_channels);
    for (int c = 0; c < kClasses; ++c) {
      double norm = 0;
      for (int k = 0; k < meta_.feature_channels; ++k) {
        const double v = n01(rng);
        embedding_[c * meta_.feature_channels + k] = static_cast<float>(v);
        norm += v * v;
      }
      for (int k = 0; k < meta_.feature_channels; ++k)
        embedding_[c * meta_.feature_channels + k] /= static_cast<float>(std::sqrt(norm));
    }
  }

  static AnalyticGenerator from_archive(const Archive& a) {
    AnalyticGenerator g;
    a.meta.at("metadata").get_to(g.meta_);
    g.meta_.validate();
    g.mapping_weight_ = a.get("mapping.weight").data;
    g.mapping_bias_ = a.get("mapping.bias").data;
    g.embedding_ = a.get("class_embedding").data;
    if (g.mapping_weight_.size() != static_cast<std::size_t>(g.meta_.noise_dim) * g.meta_.latent_dim ||
        g.mapping_bias_.size() != static_cast<std::size_t>(g.meta_.latent_dim) ||
        g.embedding_.size() != static_cast<std::size_t>(kClasses) * g.meta_.feature_channels)
      throw InputError("analytic generator archive: tensor sizes do not match metadata");
    return g;
  }

  const GeneratorMetadata& metadata() const override { return meta_; }

  LatentStack map_latent(const NoiseVector& z) const override {
    check_noise(z);
    const int d = meta_.latent_dim, n = meta_.noise_dim;
    std::vector<float> w(d);
    for (int i = 0; i < d; ++i) {
      double s = mapping_bias_[i];
      for (int j = 0; j < n; ++j) s += static_cast<double>(mapping_weight_[i * n + j]) * z.values[j];
      w[i] = static_cast<float>(s < 0 ? s * 0.2 : s);
    }
    return LatentStack::broadcast(w, meta_.layer_count);
  }

  SynthesisOutput synthesize(const LatentStack& latents, bool capture_features) const override {
    latents.validate(meta_);
    const auto sc = AnalyticScene::from_latents(latents);
    SynthesisOutput out;
    out.image = render(sc);
    if (capture_features) out.features = features(sc);
    return out;
  }

  LatentStack latent_gradient(const LatentStack& latents, const Image& grad_image) const override {
    latents.validate(meta_);
    constexpr double h = 1e-3;
    LatentStack grad = latents;
    LatentStack probe = latents;
    for (int l = 0; l < meta_.layer_count; ++l)
      for (int k = 0; k < meta_.latent_dim; ++k) {
        const float orig = probe.codes[l][k];
        probe.codes[l][k] = static_cast<float>(orig + h);
        const double up = inner(render(AnalyticScene::from_latents(probe)), grad_image);
        probe.codes[l][k] = static_cast<float>(orig - h);
        const double dn = inner(render(AnalyticScene::from_latents(probe)), grad_image);
        probe.codes[l][k] = orig;
        grad.codes[l][k] = static_cast<float>((up - dn) / (2 * h));
      }
    return grad;
  }

  SemanticMask analytic_semantics(const NoiseVector& z) const override { return semantics(map_latent(z)); }

  SemanticMask semantics(const LatentStack& latents) const {
    latents.validate(meta_);
    const auto sc = AnalyticScene::from_latents(latents);
    auto mask = SemanticMask::dense(meta_.image_width, meta_.image_height, kClasses);
    for (int y = 0; y < meta_.image_height; ++y)
      for (int x = 0; x < meta_.image_width; ++x)
        mask.at(x, y) = static_cast<ClassId>(
            sc.class_at((x + 0.5) / meta_.image_width, (y + 0.5) / meta_.image_height));
    return mask;
  }

  Archive to_archive() const override {
    Archive a;
    a.meta = json{{"kind", "generator"}, {"metadata", meta_}};
    a.put("mapping.weight", {meta_.latent_dim, meta_.noise_dim}, mapping_weight_);
    a.put("mapping.bias", {meta_.latent_dim}, mapping_bias_);
    a.put("class_embedding", {kClasses, meta_.feature_channels}, embedding_);
    return a;
  }

  const std::vector<float>& mapping_weight() const { return mapping_weight_; }
  const std::vector<float>& mapping_bias() const { return mapping_bias_; }
  const std::vector<float>& class_embedding() const { return embedding_; }

  double edge_sharpness() const { return 2.0 * meta_.image_width; }

  Image render(const AnalyticScene& sc) const {
    const int W = meta_.image_width, H = meta_.image_height;
    Image img(3, H, W);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double u = (x + 0.5) / W, v = (y + 0.5) / H;
        const auto cov = sc.coverage(u, v, edge_sharpness());
        for (int k = 0; k < 3; ++k) {
          const double c = cov[0] * sc.background[k] + cov[1] * sc.disc_color[k] + cov[2] * sc.square_color[k] +
                           sc.brightness + sc.shading * (v - 0.5);
          img(k, y, x) = static_cast<float>(std::clamp(c, -1.0, 1.0));
        }
      }
    return img;
  }

  FeatureMap features(const AnalyticScene& sc) const {
    const int Z = meta_.feature_channels, Wf = meta_.feature_width, Hf = meta_.feature_height;
    FeatureMap f(Z, Hf, Wf);
    for (int y = 0; y < Hf; ++y)
      for (int x = 0; x < Wf; ++x) {
        const auto cov = sc.coverage((x + 0.5) / Wf, (y + 0.5) / Hf, edge_sharpness());
        for (int k = 0; k < Z; ++k) {
          double v = 0.15 * sc.style[k % 8];
          for (int c = 0; c < kClasses; ++c) v += cov[c] * embedding_[c * Z + k];
          f(k, y, x) = static_cast<float>(v);
        }
      }
    return f;
  }

 private:
  static double inner(const Image& a, const Image& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a.data[i]) * b.data[i];
    return s;
  }

  GeneratorMetadata meta_;
  std::vector<float> mapping_weight_, mapping_bias_, embedding_;
};

}  // namespace smis
