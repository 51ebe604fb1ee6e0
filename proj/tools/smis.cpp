// smis: command-line driver for the few-shot layout-to-image workflow.
//
//   smis -c run.json [--set key=value ...] <command> [options]
//
// Exit codes: 0 success, 2 configuration error, 3 runtime error.

#include <iostream>

#include <CLI11.hpp>

#include "smis/pipeline.hpp"

namespace {

std::string join_list(const std::vector<std::string>& v) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out + "]";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot semantic image synthesis on a frozen style generator"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;
  bool quiet = false;
  app.add_option("-c,--config", config_path, "Run configuration (JSON)")->required();
  app.add_option("--set", overrides, "Override a config field, e.g. --set train.iterations=500");
  app.add_flag("-q,--quiet", quiet, "Only print errors");

  auto* render = app.add_subcommand("render-toy-data", "Render analytic scenes, ground-truth masks and a pair manifest");
  auto* gan = app.add_subcommand("train-toy-gan", "Train (or instantiate) the toy generator");
  auto* protos = app.add_subcommand("extract-prototypes", "Representative vectors from the labelled pairs");

  auto* pseudo = app.add_subcommand("pseudo-label", "Write generated images with their pseudo masks");
  int count = 0;
  pseudo->add_option("-n,--count", count, "Number of samples (default: pseudo_count)");

  auto* train = app.add_subcommand("train-encoder", "Train the layout encoder on pseudo-labelled samples");

  auto* synth = app.add_subcommand("synthesize", "Images from a layout file or a directory of layouts");
  std::string mask_path;
  std::optional<int> mix_layer, variants;
  std::optional<std::uint64_t> synth_seed;
  synth->add_option("-m,--mask", mask_path, "Mask PNG, annotation JSON, or a directory of them")->required();
  synth->add_option("-l,--mix-layer", mix_layer, "Layers taken from the encoded layout");
  synth->add_option("-s,--seed", synth_seed, "Base noise seed for the remaining layers");
  synth->add_option("-v,--variants", variants, "Number of variants");

  auto* eval = app.add_subcommand("evaluate", "Layout-fidelity metrics between two mask directories");
  std::string pred_dir, gt_dir;
  bool allow_mismatch = false;
  eval->add_option("--pred", pred_dir, "Predicted masks")->required();
  eval->add_option("--gt", gt_dir, "Ground-truth masks")->required();
  eval->add_flag("--allow-mismatch", allow_mismatch, "Evaluate even when the provenance chains disagree");

  auto* sweep = app.add_subcommand("sweep-kt", "Sparse pseudo masks over a grid of k and t");
  std::vector<std::string> ks, ts;
  sweep->add_option("--k", ks, "k values")->delimiter(',');
  sweep->add_option("--t", ts, "t values")->delimiter(',');

  auto* show = app.add_subcommand("show-config", "Print the resolved configuration and its hash");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  if (mix_layer) overrides.push_back("synthesis.mix_layer=" + std::to_string(*mix_layer));
  if (synth_seed) overrides.push_back("synthesis.seed=" + std::to_string(*synth_seed));
  if (variants) overrides.push_back("synthesis.variant_count=" + std::to_string(*variants));
  if (!ks.empty()) overrides.push_back("sweep.k=" + join_list(ks));
  if (!ts.empty()) overrides.push_back("sweep.t=" + join_list(ts));
  if (count > 0) overrides.push_back("pseudo_count=" + std::to_string(count));

  const smis::Log log = [quiet](const std::string& msg) {
    if (!quiet) std::cout << msg << std::endl;
  };
  try {
    const auto cfg = smis::load_run_config(config_path, overrides);
    if (*render) smis::cmd_render_toy_data(cfg, log);
    if (*gan) smis::cmd_train_toy_gan(cfg, log);
    if (*protos) smis::cmd_extract_prototypes(cfg, log);
    if (*pseudo) smis::cmd_pseudo_label(cfg, cfg.pseudo_count, log);
    if (*train) smis::cmd_train_encoder(cfg, log);
    if (*synth) smis::cmd_synthesize(cfg, mask_path, log);
    if (*eval) smis::cmd_evaluate(cfg, pred_dir, gt_dir, {allow_mismatch}, log);
    if (*sweep) smis::cmd_sweep_kt(cfg, cfg.sweep.k, cfg.sweep.t, log);
    if (*show) std::cout << smis::to_json_config(cfg).dump(2) << "\nconfig_hash " << smis::config_hash(cfg) << std::endl;
  } catch (const smis::ConfigError& e) {
    std::cerr << "config error: " << e.what() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 3;
  }
  return 0;
}
