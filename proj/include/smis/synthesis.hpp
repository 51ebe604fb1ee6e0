#pragma once

// Layout -> image. The first `mix_layer` codes come from the encoded layout,
// the remaining ones from the mapping of seeded noise, one seed per variant.

#include <algorithm>
#include <optional>

#include "smis/encoder.hpp"

namespace smis {

inline constexpr int kDefaultMixLayer = 8;

inline int default_mix_layer(const GeneratorMetadata& m) { return std::min(kDefaultMixLayer, m.layer_count); }

struct SynthesisRequest {
  SemanticMask mask;
  std::optional<int> mix_layer;  // defaults to min(8, L)
  std::uint64_t seed = 0;
  int variant_count = 1;
};

struct SynthesisResult {
  std::vector<Image> images;
  std::vector<LatentStack> latents;
  std::vector<std::uint64_t> variant_seeds;
  int mix_layer = 0;
  LatentStack encoded;
};

// Variant v uses noise seed base + v.
inline std::uint64_t variant_seed(std::uint64_t base, int v) { return base + static_cast<std::uint64_t>(v); }

// Refuses encoder/generator pairs that were not trained together.
inline void check_compatible(const LoadedEncoder& enc, const Generator& g) {
  enc.encoder.config().check_generator(g.metadata());
  const auto gh = g.hash();
  if (enc.provenance.generator_hash.empty())
    throw ConfigError("encoder checkpoint carries no generator hash");
  if (enc.provenance.generator_hash != gh)
    throw ConfigError("encoder was trained against generator " + enc.provenance.generator_hash.substr(0, 12) +
                      ", loaded generator is " + gh.substr(0, 12));
}

inline LatentStack mix_latents(const LatentStack& encoded, const LatentStack& random, int mix_layer) {
  LatentStack out = random;
  for (int i = 0; i < mix_layer; ++i) out.codes[i] = encoded.codes[i];
  return out;
}

inline SynthesisResult synthesize_from_mask(const Encoder<float>& enc, const Generator& g, const SynthesisRequest& req) {
  const auto& m = g.metadata();
  enc.config().check_generator(m);
  const int l = req.mix_layer.value_or(default_mix_layer(m));
  if (l < 0 || l > m.layer_count)
    throw InputError("mix layer " + std::to_string(l) + " is outside [0, " + std::to_string(m.layer_count) + "]");
  if (req.variant_count < 1) throw InputError("variant_count must be >= 1");
  SynthesisResult res;
  res.mix_layer = l;
  res.encoded = enc.encode(req.mask);
  for (int v = 0; v < req.variant_count; ++v) {
    const auto s = variant_seed(req.seed, v);
    LatentStack codes = res.encoded;
    if (l < m.layer_count) codes = mix_latents(res.encoded, g.map_latent(NoiseVector::from_seed(s, m.noise_dim)), l);
    res.images.push_back(g.synthesize(codes, false).image);
    res.latents.push_back(std::move(codes));
    res.variant_seeds.push_back(s);
  }
  return res;
}

// Pseudo-labels the features produced by `latents` and reports agreement with
// `mask` over its annotated pixels.
inline double layout_fidelity_probe(const SemanticMask& mask, const LatentStack& latents, const Generator& g,
                                    const PseudoLabeler<float>& labeler) {
  if (mask.annotated_count() == 0) throw InputError("layout_fidelity_probe: mask has no annotated pixels");
  const auto out = g.synthesize(latents, true);
  const auto pseudo = labeler.label(*out.features);
  const bool grows = pseudo.width <= mask.width && pseudo.height <= mask.height;
  const auto at_mask = grows ? upscale_mask(pseudo, mask.width, mask.height) : resample_nearest(pseudo, mask.width, mask.height);
  return agreement(at_mask, mask);
}

}  // namespace smis
