// One labelled scene -> a layout encoder -> several images per hand-drawn layout.
//
//   one_shot_layouts [out_dir]
//
// Runs on the analytic generator in well under a minute and writes
// one_shot_layouts.png: rows of (layout, variants...) plus the pseudo mask of
// the first variant.

#include <iostream>

#include "smis/analytic_generator.hpp"
#include "smis/encoder.hpp"
#include "smis/image_io.hpp"
#include "smis/prototyping.hpp"
#include "smis/synthesis.hpp"

using namespace smis;

namespace {

SemanticMask draw_layout(int disc_x, int disc_y, int r, int sq_x, int sq_y, int half) {
  auto m = SemanticMask::dense(32, 32, 3, 0);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      if (std::abs(x - sq_x) <= half && std::abs(y - sq_y) <= half) m.at(x, y) = 2;
      if ((x - disc_x) * (x - disc_x) + (y - disc_y) * (y - disc_y) <= r * r) m.at(x, y) = 1;
    }
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  const std::filesystem::path out = argc > 1 ? argv[1] : ".";
  std::filesystem::create_directories(out);
  const AnalyticGenerator g;
  const auto& meta = g.metadata();

  // The single labelled pair: a generated scene and its layout.
  GeneratorSample s;
  for (std::uint64_t seed = 0;; ++seed) {
    s = g.sample(seed);
    const auto m = g.semantics(s.latents);
    if (std::count(m.labels.begin(), m.labels.end(), 1) > 80 && std::count(m.labels.begin(), m.labels.end(), 2) > 80) break;
  }
  std::vector<LabeledPair> pairs{{g.semantics(s.latents), s.image, std::nullopt}};
  InversionConfig inv;
  inv.steps = 200;
  std::vector<InversionResult> report;
  const auto feats = pair_features(g, pairs, inv, &report);
  std::cout << "inversion mse " << report[0].initial_mse << " -> " << report[0].final_mse << std::endl;
  const std::vector<SemanticMask> masks{pairs[0].mask};
  const PseudoLabeler<float> labeler{dense_prototypes<float>(feats, masks), {}};

  EncoderConfig ec;
  ec.class_count = 3;
  ec.layer_count = meta.layer_count;
  ec.latent_dim = meta.latent_dim;
  ec.input_size = 32;
  ec.widths = {8, 16, 16, 16};
  TrainConfig tc;
  tc.iterations = 400;
  tc.batch_size = 4;
  tc.learning_rate = 1e-3;
  tc.mean_latent_samples = 256;
  const auto trained = train_encoder(ec, tc, g, labeler, {}, [](long step, double loss) {
    if (step % 100 == 0) std::cout << "step " << step << " loss " << loss << std::endl;
  });

  const std::vector<SemanticMask> layouts{draw_layout(10, 10, 6, 22, 22, 6), draw_layout(22, 12, 8, 8, 24, 4),
                                          draw_layout(16, 16, 5, 16, 16, 12)};
  constexpr int kVariants = 4;
  std::vector<Image> tiles;
  for (const auto& layout : layouts) {
    const auto res = synthesize_from_mask(trained.encoder, g, {layout, 2, 7, kVariants});
    tiles.push_back(colorize(layout));
    for (const auto& im : res.images) tiles.push_back(im);
    tiles.push_back(colorize(labeler.label(*g.synthesize(res.latents[0], true).features, 32, 32)));
    double fid = 0;
    for (const auto& l : res.latents) fid += layout_fidelity_probe(layout, l, g, labeler);
    std::cout << "layout fidelity " << fid / kVariants << std::endl;
  }
  save_image(tile_images(tiles, kVariants + 2), out / "one_shot_layouts.png");
  std::cout << "wrote " << (out / "one_shot_layouts.png").string() << std::endl;
}
