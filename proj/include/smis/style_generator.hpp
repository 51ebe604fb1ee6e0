#pragma once

// Small trainable style-based generator (AdaIN-modulated conv blocks) and the
// discriminator used to pretrain it adversarially at toy scale.

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "smis/generator.hpp"
#include "smis/nn/layers.hpp"
#include "smis/nn/optim.hpp"

namespace smis {

struct StyleGeneratorConfig {
  int image_size = 32;
  int noise_dim = 64;
  int latent_dim = 64;
  int mapping_layers = 2;
  int base_channels = 32;  // channels at 4x4 and 8x8
  int fine_channels = 16;  // channels at 16x16 and above
  std::uint64_t seed = 0;

  int channels_at(int res) const { return res <= 8 ? base_channels : fine_channels; }

  int resolution_count() const {
    int n = 0;
    for (int r = 4; r <= image_size; r *= 2) ++n;
    return n;
  }
  // One conv at 4x4, two per later resolution, plus the toRGB layer.
  int layer_count() const { return 1 + 2 * (resolution_count() - 1) + 1; }

  void validate() const {
    if (image_size < 8 || (image_size & (image_size - 1)) != 0)
      throw ConfigError("style generator image_size must be a power of two >= 8");
    if (noise_dim <= 0 || latent_dim <= 0 || mapping_layers <= 0 || base_channels <= 0 || fine_channels <= 0)
      throw ConfigError("style generator dimensions must be positive");
  }
};

inline void to_json(json& j, const StyleGeneratorConfig& c) {
  j = json{{"image_size", c.image_size},       {"noise_dim", c.noise_dim},
           {"latent_dim", c.latent_dim},       {"mapping_layers", c.mapping_layers},
           {"base_channels", c.base_channels}, {"fine_channels", c.fine_channels},
           {"seed", c.seed}};
}

inline void from_json(const json& j, StyleGeneratorConfig& c) {
  c.image_size = j.value("image_size", c.image_size);
  c.noise_dim = j.value("noise_dim", c.noise_dim);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.mapping_layers = j.value("mapping_layers", c.mapping_layers);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.fine_channels = j.value("fine_channels", c.fine_channels);
  c.seed = j.value("seed", c.seed);
}

class StyleGenerator final : public Generator {
  using P = nn::Param<float>;

  struct Block {
    bool upsample = false;
    nn::Conv2d<float> conv;
    nn::Linear<float> style;  // D_w -> 2*out (scale, shift)
    P noise_strength;
    P noise;  // frozen per-pixel noise, [1, res, res]
  };

  struct BlockRecord {
    Volume<float> input;  // after optional upsampling
    Volume<float> pre_act;
    nn::InstanceNormRecord<float> norm;
    std::vector<float> style;
  };

  struct Record {
    std::vector<BlockRecord> blocks;
    Volume<float> rgb_input;
    Volume<float> rgb_modulated;
    std::vector<float> rgb_style;
    Volume<float> rgb_out;  // after tanh
    std::vector<std::vector<float>> mapping_inputs;  // input of each mapping linear
    std::vector<std::vector<float>> mapping_pre;     // pre-activation outputs
  };

 public:
  explicit StyleGenerator(StyleGeneratorConfig cfg = {}) : cfg_(cfg) {
    cfg_.validate();
    build();
    std::mt19937_64 rng(cfg_.seed);
    for (auto& l : mapping_) l.init(rng);
    nn::fill_normal(const_input_.value, rng, 1.0);
    for (auto& b : blocks_) {
      b.conv.init(rng);
      b.style.init(rng, 0.5);
      std::fill(b.noise_strength.value.begin(), b.noise_strength.value.end(), 0.05f);
      nn::fill_normal(b.noise.value, rng, 1.0);
    }
    rgb_style_.init(rng, 0.5);
    rgb_conv_.init(rng, 1.0);
  }

  static StyleGenerator from_archive(const Archive& a) {
    StyleGeneratorConfig cfg = a.meta.at("config").get<StyleGeneratorConfig>();
    StyleGenerator g(cfg);
    a.load_params(g.params());
    return g;
  }

  const StyleGeneratorConfig& config() const { return cfg_; }
  const GeneratorMetadata& metadata() const override { return meta_; }

  LatentStack map_latent(const NoiseVector& z) const override {
    check_noise(z);
    return LatentStack::broadcast(mapping_forward(z.values, nullptr), meta_.layer_count);
  }

  SynthesisOutput synthesize(const LatentStack& latents, bool capture_features) const override {
    latents.validate(meta_);
    return forward(latents, nullptr, capture_features);
  }

  LatentStack latent_gradient(const LatentStack& latents, const Image& grad_image) const override {
    latents.validate(meta_);
    Record rec;
    forward(latents, &rec, false);
    StyleGenerator scratch = *this;
    return scratch.backward(rec, latents, grad_image);
  }

  Archive to_archive() const override {
    Archive a;
    a.meta = json{{"kind", "generator"}, {"metadata", meta_}, {"config", cfg_}};
    auto* self = const_cast<StyleGenerator*>(this);
    a.put_params(self->params());
    return a;
  }

  nn::ParamRefs<float> params() {
    nn::ParamRefs<float> ps;
    for (auto& l : mapping_) l.collect(ps);
    ps.push_back(&const_input_);
    for (auto& b : blocks_) {
      b.conv.collect(ps);
      b.style.collect(ps);
      ps.push_back(&b.noise_strength);
      ps.push_back(&b.noise);
    }
    rgb_style_.collect(ps);
    rgb_conv_.collect(ps);
    return ps;
  }

  // Parameters updated by adversarial training (frozen noise excluded).
  nn::ParamRefs<float> trainable_params() {
    nn::ParamRefs<float> ps;
    for (auto* p : params())
      if (p->name.size() < 6 || p->name.compare(p->name.size() - 6, 6, ".noise") != 0) ps.push_back(p);
    return ps;
  }

  // Training path: forward with a record, then backward through synthesis
  // and mapping, accumulating parameter gradients.
  Image train_forward(const NoiseVector& z, Record& rec, std::vector<float>& w) const {
    w = mapping_forward(z.values, &rec);
    const auto stack = LatentStack::broadcast(w, meta_.layer_count);
    return forward(stack, &rec, false).image;
  }

  void train_backward(const Record& rec, const std::vector<float>& w, const Image& grad_image) {
    const auto stack = LatentStack::broadcast(w, meta_.layer_count);
    const auto gstack = backward(rec, stack, grad_image);
    std::vector<float> gw(meta_.latent_dim, 0.0f);
    for (const auto& c : gstack.codes)
      for (int k = 0; k < meta_.latent_dim; ++k) gw[k] += c[k];
    mapping_backward(rec, gw);
  }

  using TrainRecord = Record;

 private:
  void build() {
    meta_.backend = "style";
    meta_.noise_dim = cfg_.noise_dim;
    meta_.latent_dim = cfg_.latent_dim;
    meta_.layer_count = cfg_.layer_count();
    meta_.image_width = meta_.image_height = cfg_.image_size;
    meta_.class_count = 0;

    for (int i = 0; i < cfg_.mapping_layers; ++i)
      mapping_.emplace_back("mapping." + std::to_string(i), i == 0 ? cfg_.noise_dim : cfg_.latent_dim,
                            cfg_.latent_dim);
    const_input_ = P("synthesis.const", {cfg_.channels_at(4), 4, 4});
    int in = cfg_.channels_at(4);
    int idx = 0;
    // Feature tap: last conv whose resolution is <= 64.
    int tap = 0, tap_res = 4, tap_ch = in;
    for (int res = 4; res <= cfg_.image_size; res *= 2) {
      const int convs = res == 4 ? 1 : 2;
      for (int k = 0; k < convs; ++k) {
        const int out = cfg_.channels_at(res);
        const std::string name = "synthesis." + std::to_string(idx);
        Block b;
        b.upsample = (res > 4 && k == 0);
        b.conv = nn::Conv2d<float>(name + ".conv", in, out, 3);
        b.style = nn::Linear<float>(name + ".style", cfg_.latent_dim, 2 * out);
        b.noise_strength = P(name + ".noise_strength", {out});
        b.noise = P(name + ".noise", {1, res, res});
        blocks_.push_back(std::move(b));
        if (res <= 64) {
          tap = idx;
          tap_res = res;
          tap_ch = out;
        }
        in = out;
        ++idx;
      }
    }
    rgb_style_ = nn::Linear<float>("torgb.style", cfg_.latent_dim, in);
    rgb_conv_ = nn::Conv2d<float>("torgb.conv", in, 3, 1);
    meta_.feature_tap_layer = tap;
    meta_.feature_channels = tap_ch;
    meta_.feature_width = meta_.feature_height = tap_res;
    meta_.validate();
  }

  std::vector<float> mapping_forward(const std::vector<float>& z, Record* rec) const {
    std::vector<float> x = z;
    double ms = 0;
    for (float v : x) ms += static_cast<double>(v) * v;
    const float inv = static_cast<float>(1.0 / std::sqrt(ms / x.size() + 1e-8));
    for (auto& v : x) v *= inv;
    for (const auto& l : mapping_) {
      if (rec) rec->mapping_inputs.push_back(x);
      auto pre = l.forward(x);
      if (rec) rec->mapping_pre.push_back(pre);
      x = nn::leaky_relu<float>(pre);
    }
    return x;
  }

  void mapping_backward(const Record& rec, std::vector<float> g) {
    for (int i = static_cast<int>(mapping_.size()) - 1; i >= 0; --i) {
      g = nn::leaky_relu_backward<float>(rec.mapping_pre[i], g);
      g = mapping_[i].backward(rec.mapping_inputs[i], g);
    }
  }

  SynthesisOutput forward(const LatentStack& latents, Record* rec, bool capture) const {
    SynthesisOutput out;
    Volume<float> x(const_input_.shape[0], 4, 4);
    x.data = const_input_.value;
    if (rec) rec->blocks.resize(blocks_.size());
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const auto& b = blocks_[i];
      if (b.upsample) x = nn::upsample2x(x);
      auto h = b.conv.forward(x);
      for (int c = 0; c < h.channels; ++c) {
        auto ch = h.channel(c);
        const float s = b.noise_strength.value[c];
        for (std::size_t p = 0; p < ch.size(); ++p) ch[p] += s * b.noise.value[p];
      }
      auto a = nn::leaky_relu(h);
      nn::InstanceNormRecord<float> nrec;
      auto n = nn::instance_norm(a, rec ? &nrec : nullptr);
      const auto style = b.style.forward(latents.codes[i]);
      for (int c = 0; c < n.channels; ++c) {
        const float scale = 1.0f + style[c], shift = style[n.channels + c];
        for (auto& v : n.channel(c)) v = v * scale + shift;
      }
      if (rec) {
        auto& r = rec->blocks[i];
        r.input = std::move(x);
        r.pre_act = std::move(h);
        r.norm = std::move(nrec);
        r.style = style;
      }
      x = std::move(n);
      if (capture && static_cast<int>(i) == meta_.feature_tap_layer) out.features = x;
    }
    const auto s = rgb_style_.forward(latents.codes.back());
    Volume<float> xm = x;
    for (int c = 0; c < xm.channels; ++c)
      for (auto& v : xm.channel(c)) v *= 1.0f + s[c];
    out.image = nn::tanh_fn(rgb_conv_.forward(xm));
    if (rec) {
      rec->rgb_input = std::move(x);
      rec->rgb_modulated = std::move(xm);
      rec->rgb_style = s;
      rec->rgb_out = out.image;
    }
    return out;
  }

  LatentStack backward(const Record& rec, const LatentStack& latents, const Image& grad_image) {
    LatentStack g;
    g.codes.assign(meta_.layer_count, std::vector<float>(meta_.latent_dim, 0.0f));
    auto d = nn::tanh_backward(rec.rgb_out, grad_image);
    auto dxm = rgb_conv_.backward(rec.rgb_modulated, d);
    std::vector<float> ds(dxm.channels, 0.0f);
    Volume<float> dx = dxm;
    for (int c = 0; c < dxm.channels; ++c) {
      const float scale = 1.0f + rec.rgb_style[c];
      auto gch = dx.channel(c);
      auto xin = rec.rgb_input.channel(c);
      float acc = 0;
      for (std::size_t p = 0; p < gch.size(); ++p) {
        acc += gch[p] * xin[p];
        gch[p] *= scale;
      }
      ds[c] = acc;
    }
    g.codes.back() = rgb_style_.backward(latents.codes.back(), ds);
    for (int i = static_cast<int>(blocks_.size()) - 1; i >= 0; --i) {
      auto& b = blocks_[i];
      const auto& r = rec.blocks[i];
      const int C = dx.channels;
      std::vector<float> dstyle(2 * C, 0.0f);
      Volume<float> dn = dx;
      for (int c = 0; c < C; ++c) {
        const float scale = 1.0f + r.style[c];
        auto gch = dn.channel(c);
        auto nh = r.norm.normalized.channel(c);
        float dscale = 0, dshift = 0;
        for (std::size_t p = 0; p < gch.size(); ++p) {
          dscale += gch[p] * nh[p];
          dshift += gch[p];
          gch[p] *= scale;
        }
        dstyle[c] = dscale;
        dstyle[C + c] = dshift;
      }
      g.codes[i] = b.style.backward(latents.codes[i], dstyle);
      auto da = nn::instance_norm_backward(r.norm, dn);
      auto dh = nn::leaky_relu_backward(r.pre_act, da);
      for (int c = 0; c < C; ++c) {
        auto gch = dh.channel(c);
        float acc = 0;
        for (std::size_t p = 0; p < gch.size(); ++p) acc += gch[p] * b.noise.value[p];
        b.noise_strength.grad[c] += acc;
      }
      dx = b.conv.backward(r.input, dh);
      if (b.upsample) dx = nn::upsample2x_backward(dx);
    }
    for (std::size_t k = 0; k < dx.size(); ++k) const_input_.grad[k] += dx.data[k];
    return g;
  }

  StyleGeneratorConfig cfg_;
  GeneratorMetadata meta_;
  std::vector<nn::Linear<float>> mapping_;
  P const_input_;
  std::vector<Block> blocks_;
  nn::Linear<float> rgb_style_;
  nn::Conv2d<float> rgb_conv_;
};

struct DiscriminatorConfig {
  int image_size = 32;
  int channels = 16;
  int max_channels = 32;
  std::uint64_t seed = 1;
};

class Discriminator {
  struct Record {
    std::vector<Volume<float>> conv_inputs;  // input of each conv (incl. fromRGB)
    std::vector<Volume<float>> conv_outputs;  // pre-activation
    std::vector<float> flat, hidden_pre;
  };

 public:
  explicit Discriminator(DiscriminatorConfig cfg = {}) : cfg_(cfg) {
    std::mt19937_64 rng(cfg.seed);
    from_rgb_ = nn::Conv2d<float>("disc.from_rgb", 3, cfg.channels, 1);
    from_rgb_.init(rng);
    int ch = cfg.channels;
    int idx = 0;
    for (int res = cfg.image_size; res > 4; res /= 2) {
      const int out = std::min(ch * 2, cfg.max_channels);
      convs_.emplace_back("disc.conv" + std::to_string(idx++), ch, out, 3);
      convs_.back().init(rng);
      ch = out;
    }
    hidden_ = nn::Linear<float>("disc.fc", ch * 16, 64);
    hidden_.init(rng);
    out_ = nn::Linear<float>("disc.out", 64, 1);
    out_.init(rng, 1.0);
  }

  float score(const Image& img, Record* rec = nullptr) const {
    if (img.height != cfg_.image_size || img.width != cfg_.image_size)
      throw InputError("discriminator: image size mismatch");
    if (rec) rec->conv_inputs.push_back(img);
    auto h = from_rgb_.forward(img);
    if (rec) rec->conv_outputs.push_back(h);
    auto x = nn::leaky_relu(h);
    for (const auto& c : convs_) {
      if (rec) rec->conv_inputs.push_back(x);
      h = c.forward(x);
      if (rec) rec->conv_outputs.push_back(h);
      x = nn::avgpool2x(nn::leaky_relu(h));
    }
    if (rec) rec->flat = x.data;
    auto pre = hidden_.forward(x.data);
    if (rec) rec->hidden_pre = pre;
    const auto a = nn::leaky_relu<float>(pre);
    return out_.forward(a)[0];
  }

  // Backpropagates d(loss)/d(score); returns d(loss)/d(image).
  Image backward(const Record& rec, float dscore) {
    const auto a = nn::leaky_relu<float>(rec.hidden_pre);
    const std::vector<float> d{dscore};
    auto da = out_.backward(a, d);
    auto dpre = nn::leaky_relu_backward<float>(rec.hidden_pre, da);
    auto dflat = hidden_.backward(rec.flat, dpre);
    const int last = static_cast<int>(convs_.size());
    const auto& lastout = rec.conv_outputs[last];
    Volume<float> dx(lastout.channels, lastout.height / 2, lastout.width / 2);
    dx.data = std::move(dflat);
    for (int i = last - 1; i >= 0; --i) {
      auto dact = nn::avgpool2x_backward(dx);
      auto dh = nn::leaky_relu_backward(rec.conv_outputs[i + 1], dact);
      dx = convs_[i].backward(rec.conv_inputs[i + 1], dh);
    }
    auto dh = nn::leaky_relu_backward(rec.conv_outputs[0], dx);
    return from_rgb_.backward(rec.conv_inputs[0], dh);
  }

  nn::ParamRefs<float> params() {
    nn::ParamRefs<float> ps;
    from_rgb_.collect(ps);
    for (auto& c : convs_) c.collect(ps);
    hidden_.collect(ps);
    out_.collect(ps);
    return ps;
  }

  using TrainRecord = Record;

 private:
  DiscriminatorConfig cfg_;
  nn::Conv2d<float> from_rgb_;
  std::vector<nn::Conv2d<float>> convs_;
  nn::Linear<float> hidden_, out_;
};

struct GanTrainConfig {
  int steps = 2000;
  int batch_size = 8;
  double learning_rate = 0.002;
  double beta1 = 0.0;
  double beta2 = 0.99;
  std::uint64_t seed = 0;
  StyleGeneratorConfig generator;
};

inline void to_json(json& j, const GanTrainConfig& c) {
  j = json{{"steps", c.steps}, {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate},
           {"beta1", c.beta1}, {"beta2", c.beta2},           {"seed", c.seed},
           {"generator", c.generator}};
}

inline void from_json(const json& j, GanTrainConfig& c) {
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.seed = j.value("seed", c.seed);
  if (j.contains("generator")) j.at("generator").get_to(c.generator);
}

struct GanTrainResult {
  StyleGenerator generator;
  Discriminator discriminator;
  std::vector<double> d_loss, g_loss;
};

namespace detail {
inline double softplus(double x) { return x > 30 ? x : std::log1p(std::exp(x)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace detail

// Non-saturating logistic GAN on `dataset`. Single-threaded and fully
// determined by cfg.seed.
inline GanTrainResult train_toy_generator(const std::vector<Image>& dataset, const GanTrainConfig& cfg,
                                          const std::function<void(int, double, double)>& progress = {}) {
  if (dataset.empty()) throw InputError("train_toy_generator: dataset is empty");
  for (const auto& img : dataset)
    if (img.channels != 3 || img.width != cfg.generator.image_size || img.height != cfg.generator.image_size)
      throw InputError("train_toy_generator: dataset image is " + shape_string(img) + ", expected 3x" +
                       std::to_string(cfg.generator.image_size) + "x" + std::to_string(cfg.generator.image_size));
  if (cfg.batch_size <= 0 || cfg.steps < 0) throw ConfigError("train_toy_generator: bad steps/batch_size");

  auto gcfg = cfg.generator;
  gcfg.seed = derive_seed(cfg.seed, streams::init, 0);
  GanTrainResult res{StyleGenerator(gcfg), Discriminator({gcfg.image_size, 16, 32, derive_seed(cfg.seed, streams::init, 1)}), {}, {}};
  auto& G = res.generator;
  auto& D = res.discriminator;
  nn::OptimizerConfig oc;
  oc.learning_rate = cfg.learning_rate;
  oc.beta1 = cfg.beta1;
  oc.beta2 = cfg.beta2;
  auto gparams = G.trainable_params();
  auto dparams = D.params();
  nn::Optimizer<float> gopt(gparams, oc), dopt(dparams, oc);
  std::mt19937_64 rng(derive_seed(cfg.seed, streams::dataset, 0));
  std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
  const int Dz = G.metadata().noise_dim;
  std::uint64_t z_counter = 0;
  auto next_z = [&] { return NoiseVector::from_seed(derive_seed(cfg.seed, streams::train_batch, z_counter++), Dz); };
  const float scale = 1.0f / static_cast<float>(cfg.batch_size);

  for (int step = 0; step < cfg.steps; ++step) {
    // discriminator
    nn::zero_grads(dparams);
    double dl = 0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      Discriminator::TrainRecord rr;
      const float sr = D.score(dataset[pick(rng)], &rr);
      dl += detail::softplus(-sr);
      D.backward(rr, static_cast<float>(-detail::sigmoid(-sr)));
      const auto fake = G.map_latent(next_z());
      Discriminator::TrainRecord rf;
      const float sf = D.score(G.synthesize(fake, false).image, &rf);
      dl += detail::softplus(sf);
      D.backward(rf, static_cast<float>(detail::sigmoid(sf)));
    }
    dopt.step(scale);
    // generator
    nn::zero_grads(gparams);
    double gl = 0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      StyleGenerator::TrainRecord grec;
      std::vector<float> w;
      const auto img = G.train_forward(next_z(), grec, w);
      Discriminator::TrainRecord rf;
      const float sf = D.score(img, &rf);
      gl += detail::softplus(-sf);
      const auto dimg = D.backward(rf, static_cast<float>(-detail::sigmoid(-sf)));
      G.train_backward(grec, w, dimg);
    }
    gopt.step(scale);
    res.d_loss.push_back(dl * scale);
    res.g_loss.push_back(gl * scale);
    if (progress) progress(step, res.d_loss.back(), res.g_loss.back());
  }
  return res;
}

}  // namespace smis
