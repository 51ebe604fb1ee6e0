#pragma once

// Layout encoder: one-hot mask -> three-scale conv pyramid -> one small head
// per generator layer. Trained with a plain latent regression loss against
// the codes of pseudo-labelled generator samples; the generator is only read.

#include <cmath>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>
#include <vector>

#include "smis/archive.hpp"
#include "smis/generator.hpp"
#include "smis/image_io.hpp"
#include "smis/nn/layers.hpp"
#include "smis/nn/optim.hpp"
#include "smis/prototyping.hpp"
#include "smis/pseudo_labeler.hpp"
#include "smis/rng.hpp"

namespace smis {

struct EncoderConfig {
  int class_count = 0;
  int layer_count = 0;
  int latent_dim = 0;
  int input_size = 32;
  // stem width, then one width per pyramid level (fine -> coarse)
  std::vector<int> widths{16, 32, 48, 64};
  int head_pool = 4;
  double head_gain = 0.5;

  int input_channels() const { return class_count + 1; }

  void validate() const {
    if (class_count < 1 || class_count > kMaxClasses) throw ConfigError("encoder.class_count must be in [1, 255]");
    if (layer_count < 1) throw ConfigError("encoder.layer_count must be >= 1");
    if (latent_dim < 1) throw ConfigError("encoder.latent_dim must be >= 1");
    if (input_size < 8 || input_size % 8 != 0) throw ConfigError("encoder.input_size must be a multiple of 8");
    if (widths.size() != 4) throw ConfigError("encoder.widths needs 4 entries (stem + 3 levels)");
    for (int w : widths)
      if (w < 1) throw ConfigError("encoder.widths must be positive");
    if (head_pool < 1) throw ConfigError("encoder.head_pool must be >= 1");
  }

  void check_generator(const GeneratorMetadata& m) const {
    if (m.layer_count != layer_count || m.latent_dim != latent_dim)
      throw ConfigError("encoder expects " + std::to_string(layer_count) + " codes of dimension " +
                        std::to_string(latent_dim) + ", generator has " + std::to_string(m.layer_count) + " x " +
                        std::to_string(m.latent_dim));
  }
};

inline void to_json(json& j, const EncoderConfig& c) {
  j = json{{"class_count", c.class_count}, {"layer_count", c.layer_count}, {"latent_dim", c.latent_dim},
           {"input_size", c.input_size},   {"widths", c.widths},           {"head_pool", c.head_pool},
           {"head_gain", c.head_gain}};
}
inline void from_json(const json& j, EncoderConfig& c) {
  c.class_count = j.value("class_count", c.class_count);
  c.layer_count = j.value("layer_count", c.layer_count);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.input_size = j.value("input_size", c.input_size);
  c.widths = j.value("widths", c.widths);
  c.head_pool = j.value("head_pool", c.head_pool);
  c.head_gain = j.value("head_gain", c.head_gain);
}

// Mask at the encoder input size: majority vote when shrinking, nearest when
// enlarging.
inline SemanticMask fit_mask(const SemanticMask& m, int size) {
  if (m.width == size && m.height == size) return m;
  if (m.width >= size && m.height >= size) return resize_majority(m, size, size);
  if (m.width <= size && m.height <= size) return upscale_mask(m, size, size);
  return resample_nearest(m, size, size);
}

template <typename T>
class Encoder {
 public:
  struct Record {
    Volume<T> input, stem_pre;
    std::vector<Volume<T>> down_in, down_pre, mid_in, mid_pre;  // per level
    std::vector<Volume<T>> head_in;                             // pooled, per layer
  };

  Encoder() = default;

  explicit Encoder(EncoderConfig cfg, std::uint64_t seed = 0) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build();
    std::mt19937_64 rng(seed);
    stem_.init(rng);
    for (int l = 0; l < 3; ++l) {
      down_[l].init(rng);
      mid_[l].init(rng);
    }
    for (auto& h : heads_) h.init(rng, cfg_.head_gain);
    w_avg_.value.assign(cfg_.latent_dim, T(0));
  }

  const EncoderConfig& config() const { return cfg_; }

  // Pyramid level feeding each generator layer: coarsest level for the
  // first third of the layers, finest for the last third.
  int level_of(int layer) const { return 2 - std::min(2, layer * 3 / cfg_.layer_count); }

  void set_average_latent(const std::vector<float>& w) {
    if (static_cast<int>(w.size()) != cfg_.latent_dim) throw InputError("average latent has the wrong dimension");
    w_avg_.value.assign(w.begin(), w.end());
  }
  const std::vector<T>& average_latent() const { return w_avg_.value; }

  Volume<T> prepare(const SemanticMask& mask) const {
    if (mask.class_count != cfg_.class_count)
      throw InputError("mask has " + std::to_string(mask.class_count) + " classes, encoder expects " +
                       std::to_string(cfg_.class_count));
    mask.validate();
    return one_hot<T>(fit_mask(mask, cfg_.input_size), cfg_.input_channels());
  }

  // Codes as rows [layer][dim].
  std::vector<std::vector<T>> forward(const Volume<T>& input, Record* rec = nullptr) const {
    if (input.channels != cfg_.input_channels() || input.width != cfg_.input_size || input.height != cfg_.input_size)
      throw InputError("encoder input is " + shape_string(input) + ", expected " +
                       shape_string(cfg_.input_channels(), cfg_.input_size, cfg_.input_size));
    auto stem_pre = stem_.forward(input);
    auto x = nn::leaky_relu(stem_pre);
    std::vector<Volume<T>> levels;
    if (rec) {
      rec->input = input;
      rec->stem_pre = stem_pre;
      rec->down_in.clear();
      rec->down_pre.clear();
      rec->mid_in.clear();
      rec->mid_pre.clear();
      rec->head_in.clear();
    }
    for (int l = 0; l < 3; ++l) {
      auto dp = down_[l].forward(x);
      auto a = nn::leaky_relu(dp);
      auto mp = mid_[l].forward(a);
      if (rec) {
        rec->down_in.push_back(std::move(x));
        rec->down_pre.push_back(dp);
        rec->mid_in.push_back(a);
        rec->mid_pre.push_back(mp);
      }
      x = nn::leaky_relu(mp);
      levels.push_back(x);
    }
    std::vector<std::vector<T>> out(cfg_.layer_count);
    for (int i = 0; i < cfg_.layer_count; ++i) {
      auto pooled = nn::pool_to(levels[level_of(i)], cfg_.head_pool);
      out[i] = heads_[i].forward(std::span<const T>(pooled.data));
      for (int d = 0; d < cfg_.latent_dim; ++d) out[i][d] += w_avg_.value[d];
      if (rec) rec->head_in.push_back(std::move(pooled));
    }
    return out;
  }

  LatentStack encode(const SemanticMask& mask) const {
    const auto codes = forward(prepare(mask));
    LatentStack s;
    for (const auto& c : codes) s.codes.emplace_back(c.begin(), c.end());
    return s;
  }

  // Accumulates parameter gradients for d(loss)/d(codes) = dcodes.
  void backward(const Record& rec, const std::vector<std::vector<T>>& dcodes) {
    std::vector<Volume<T>> dlevel(3);
    for (int l = 0; l < 3; ++l) dlevel[l] = Volume<T>(rec.mid_pre[l].channels, rec.mid_pre[l].height, rec.mid_pre[l].width);
    for (int i = 0; i < cfg_.layer_count; ++i) {
      const auto& hin = rec.head_in[i];
      auto dflat = heads_[i].backward(std::span<const T>(hin.data), std::span<const T>(dcodes[i]));
      Volume<T> dpooled(hin.channels, hin.height, hin.width);
      dpooled.data = std::move(dflat);
      auto& target = dlevel[level_of(i)];
      const auto dl = nn::pool_to_backward(dpooled, target.height, target.width);
      for (std::size_t k = 0; k < target.size(); ++k) target.data[k] += dl.data[k];
    }
    Volume<T> carry;
    for (int l = 2; l >= 0; --l) {
      auto g = dlevel[l];
      if (l < 2)
        for (std::size_t k = 0; k < g.size(); ++k) g.data[k] += carry.data[k];
      g = nn::leaky_relu_backward(rec.mid_pre[l], g);
      g = mid_[l].backward(rec.mid_in[l], g);
      g = nn::leaky_relu_backward(rec.down_pre[l], g);
      carry = down_[l].backward(rec.down_in[l], g);
    }
    carry = nn::leaky_relu_backward(rec.stem_pre, carry);
    stem_.backward(rec.input, carry);
  }

  nn::ParamRefs<T> params() {
    nn::ParamRefs<T> ps;
    stem_.collect(ps);
    for (int l = 0; l < 3; ++l) {
      down_[l].collect(ps);
      mid_[l].collect(ps);
    }
    for (auto& h : heads_) h.collect(ps);
    return ps;
  }

  Archive to_archive() const {
    Archive a;
    a.meta = json{{"kind", "encoder"}, {"config", cfg_}};
    auto* self = const_cast<Encoder*>(this);
    a.put_params(self->params());
    a.put(w_avg_);
    return a;
  }

  static Encoder from_archive(const Archive& a) {
    if (a.meta.value("kind", "") != "encoder") throw InputError("archive is not an encoder checkpoint");
    Encoder e(a.meta.at("config").get<EncoderConfig>());
    a.load_params(e.params());
    a.load(e.w_avg_);
    return e;
  }

  template <typename U>
  Encoder<U> cast() const {
    Encoder<U> e(cfg_);
    auto* self = const_cast<Encoder*>(this);
    auto src = self->params();
    auto dst = e.params();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i]->copy_from(*src[i]);
    e.set_average_latent(std::vector<float>(w_avg_.value.begin(), w_avg_.value.end()));
    return e;
  }

 private:
  void build() {
    const auto& w = cfg_.widths;
    stem_ = nn::Conv2d<T>("enc.stem", cfg_.input_channels(), w[0], 3, 1);
    for (int l = 0; l < 3; ++l) {
      down_[l] = nn::Conv2d<T>("enc.level" + std::to_string(l) + ".down", w[l], w[l + 1], 3, 2);
      mid_[l] = nn::Conv2d<T>("enc.level" + std::to_string(l) + ".conv", w[l + 1], w[l + 1], 3, 1);
    }
    heads_.clear();
    for (int i = 0; i < cfg_.layer_count; ++i) {
      const int lvl = level_of(i);
      int side = cfg_.input_size >> (lvl + 1);
      while (side > cfg_.head_pool) side /= 2;
      heads_.emplace_back("enc.head" + std::to_string(i), w[lvl + 1] * side * side, cfg_.latent_dim);
    }
    w_avg_ = nn::Param<T>("enc.average_latent", {cfg_.latent_dim});
  }

  EncoderConfig cfg_;
  nn::Conv2d<T> stem_;
  nn::Conv2d<T> down_[3], mid_[3];
  std::vector<nn::Linear<T>> heads_;
  nn::Param<T> w_avg_;  // added to every head output, not trained
};

// Sum over layers and dimensions of squared code error, averaged over the
// batch.
template <typename T>
double latent_loss(const std::vector<std::vector<std::vector<T>>>& predicted, const std::vector<LatentStack>& targets) {
  if (predicted.empty() || predicted.size() != targets.size()) throw InputError("latent_loss: batch size mismatch");
  double total = 0;
  for (std::size_t b = 0; b < predicted.size(); ++b) {
    if (predicted[b].size() != targets[b].codes.size()) throw InputError("latent_loss: layer count mismatch");
    for (std::size_t l = 0; l < predicted[b].size(); ++l)
      for (std::size_t d = 0; d < predicted[b][l].size(); ++d) {
        const double diff = static_cast<double>(predicted[b][l][d]) - targets[b].codes[l][d];
        total += diff * diff;
      }
  }
  return total / static_cast<double>(predicted.size());
}

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Loss and accumulated parameter gradients for one batch of (mask, target)
// pairs. Gradients are added to whatever the encoder already holds.
template <typename T>
double loss_and_gradients(Encoder<T>& enc, const std::vector<SemanticMask>& masks, const std::vector<LatentStack>& targets) {
  if (masks.empty() || masks.size() != targets.size()) throw InputError("training batch is empty or misaligned");
  std::vector<typename Encoder<T>::Record> recs(masks.size());
  std::vector<std::vector<std::vector<T>>> pred;
  for (std::size_t b = 0; b < masks.size(); ++b) pred.push_back(enc.forward(enc.prepare(masks[b]), &recs[b]));
  const double loss = latent_loss(pred, targets);
  if (!std::isfinite(loss)) return loss;
  const double scale = 2.0 / static_cast<double>(masks.size());
  for (std::size_t b = 0; b < masks.size(); ++b) {
    std::vector<std::vector<T>> d(pred[b].size());
    for (std::size_t l = 0; l < d.size(); ++l) {
      d[l].resize(pred[b][l].size());
      for (std::size_t k = 0; k < d[l].size(); ++k)
        d[l][k] = static_cast<T>(scale * (static_cast<double>(pred[b][l][k]) - targets[b].codes[l][k]));
    }
    enc.backward(recs[b], d);
  }
  return loss;
}

struct TrainConfig {
  long iterations = 100000;
  int batch_size = 2;
  double learning_rate = 1e-4;
  std::string optimizer = "adam";
  std::uint64_t seed = 0;
  long checkpoint_every = 10000;  // 0 disables intermediate checkpoints
  long diagnostic_every = 10000;  // 0 disables intermediate sheets
  int diagnostic_count = 4;
  int mean_latent_samples = 1024;
  int queue_capacity = 2;

  void validate() const {
    if (iterations < 1) throw ConfigError("train.iterations must be positive");
    if (batch_size < 1) throw ConfigError("train.batch_size must be positive");
    if (!(learning_rate > 0)) throw ConfigError("train.learning_rate must be positive");
    if (optimizer != "adam" && optimizer != "ranger") throw ConfigError("train.optimizer must be adam or ranger");
    if (checkpoint_every < 0 || diagnostic_every < 0) throw ConfigError("train cadences must be >= 0");
    if (diagnostic_count < 1) throw ConfigError("train.diagnostic_count must be positive");
    if (mean_latent_samples < 1) throw ConfigError("train.mean_latent_samples must be positive");
    if (queue_capacity < 1) throw ConfigError("train.queue_capacity must be positive");
  }
};

inline void to_json(json& j, const TrainConfig& c) {
  j = json{{"iterations", c.iterations},
           {"batch_size", c.batch_size},
           {"learning_rate", c.learning_rate},
           {"optimizer", c.optimizer},
           {"seed", c.seed},
           {"checkpoint_every", c.checkpoint_every},
           {"diagnostic_every", c.diagnostic_every},
           {"diagnostic_count", c.diagnostic_count},
           {"mean_latent_samples", c.mean_latent_samples},
           {"queue_capacity", c.queue_capacity}};
}
inline void from_json(const json& j, TrainConfig& c) {
  c.iterations = j.value("iterations", c.iterations);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.optimizer = j.value("optimizer", c.optimizer);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.diagnostic_every = j.value("diagnostic_every", c.diagnostic_every);
  c.diagnostic_count = j.value("diagnostic_count", c.diagnostic_count);
  c.mean_latent_samples = j.value("mean_latent_samples", c.mean_latent_samples);
  c.queue_capacity = j.value("queue_capacity", c.queue_capacity);
}

// Where a checkpoint came from; synthesis refuses mismatches.
struct Provenance {
  std::string generator_hash;
  std::string prototype_hash;
  MaskKind mode = MaskKind::dense;
};

inline void to_json(json& j, const Provenance& p) {
  j = json{{"generator_hash", p.generator_hash}, {"prototype_hash", p.prototype_hash}, {"mode", to_string(p.mode)}};
}
inline void from_json(const json& j, Provenance& p) {
  p.generator_hash = j.value("generator_hash", "");
  p.prototype_hash = j.value("prototype_hash", "");
  p.mode = parse_mask_kind(j.value("mode", "dense"));
}

struct TrainingBatch {
  long step = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<SemanticMask> masks;
  std::vector<LatentStack> targets;
};

// Sample -> generate -> pseudo-label, for the seeds of one step.
inline TrainingBatch make_batch(const Generator& g, const PseudoLabeler<float>& labeler, long step, int batch_size,
                                std::uint64_t seed) {
  const auto& m = g.metadata();
  TrainingBatch b;
  b.step = step;
  for (int i = 0; i < batch_size; ++i) {
    const auto s = derive_seed(seed, streams::train_batch, static_cast<std::uint64_t>(step) * batch_size + i);
    const auto sample = g.sample(s);
    b.seeds.push_back(s);
    b.masks.push_back(labeler.label(sample.features, m.image_width, m.image_height));
    b.targets.push_back(sample.latents);
  }
  return b;
}

struct TrainState {
  long step = 0;
  Encoder<float> encoder;
  nn::Optimizer<float> optimizer;
  nn::ParamRefs<float> params;
  std::vector<double> losses;
  std::vector<std::uint64_t> diagnostic_seeds;
  Provenance provenance;
  TrainConfig train_config;

  TrainState(Encoder<float> enc, const TrainConfig& tc, Provenance prov)
      : encoder(std::move(enc)), provenance(std::move(prov)), train_config(tc) {
    params = encoder.params();
    nn::OptimizerConfig oc;
    oc.name = tc.optimizer;
    oc.learning_rate = tc.learning_rate;
    optimizer = nn::Optimizer<float>(params, oc);
    for (int i = 0; i < tc.diagnostic_count; ++i) diagnostic_seeds.push_back(derive_seed(tc.seed, streams::diagnostics, i));
  }
  TrainState(const TrainState&) = delete;
  TrainState& operator=(const TrainState&) = delete;
};

// One encoder update on an already pseudo-labelled batch.
inline double training_step(TrainState& st, const TrainingBatch& batch) {
  nn::zero_grads(st.params);
  const double loss = loss_and_gradients(st.encoder, batch.masks, batch.targets);
  if (!std::isfinite(loss)) {
    std::ostringstream msg;
    msg << "non-finite encoder loss at step " << st.step << " (batch seeds";
    for (auto s : batch.seeds) msg << ' ' << s;
    msg << ")";
    throw TrainingError(msg.str());
  }
  st.optimizer.step();
  ++st.step;
  st.losses.push_back(loss);
  return loss;
}

inline double training_step(TrainState& st, const Generator& g, const PseudoLabeler<float>& labeler) {
  return training_step(st, make_batch(g, labeler, st.step, st.train_config.batch_size, st.train_config.seed));
}

inline Archive encoder_checkpoint(const TrainState& st) {
  Archive a = st.encoder.to_archive();
  a.meta["provenance"] = st.provenance;
  a.meta["train_config"] = st.train_config;
  a.meta["step"] = st.step;
  return a;
}

struct LoadedEncoder {
  Encoder<float> encoder;
  Provenance provenance;
  long step = 0;
  std::string hash;
};

inline LoadedEncoder load_encoder(const Archive& a) {
  LoadedEncoder out{Encoder<float>::from_archive(a), {}, a.meta.value("step", 0L), archive_hash(a)};
  if (a.meta.contains("provenance")) out.provenance = a.meta.at("provenance").get<Provenance>();
  return out;
}

inline LoadedEncoder load_encoder(const std::filesystem::path& path) { return load_encoder(load_archive(path)); }

// Three-row sheet: samples, their pseudo masks, reconstructions from the
// encoded masks.
inline Volume<float> export_diagnostics(const Encoder<float>& enc, const Generator& g, const PseudoLabeler<float>& labeler,
                                        const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw InputError("export_diagnostics: no seeds");
  const auto& m = g.metadata();
  std::vector<Volume<float>> row1, row2, row3;
  for (auto s : seeds) {
    const auto sample = g.sample(s);
    const auto mask = labeler.label(sample.features, m.image_width, m.image_height);
    row1.push_back(sample.image);
    row2.push_back(colorize(mask));
    row3.push_back(g.synthesize(enc.encode(mask), false).image);
  }
  std::vector<Volume<float>> tiles = row1;
  tiles.insert(tiles.end(), row2.begin(), row2.end());
  tiles.insert(tiles.end(), row3.begin(), row3.end());
  return tile_images(tiles, static_cast<int>(seeds.size()));
}

namespace detail {

// Bounded FIFO between the batch producer and the optimiser.
template <typename Item>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t cap) : cap_(cap) {}

  bool push(Item item) {
    std::unique_lock lk(mu_);
    not_full_.wait(lk, [&] { return q_.size() < cap_ || closed_; });
    if (closed_) return false;
    q_.push_back(std::move(item));
    not_empty_.notify_one();
    return true;
  }

  std::optional<Item> pop() {
    std::unique_lock lk(mu_);
    not_empty_.wait(lk, [&] { return !q_.empty() || closed_; });
    if (q_.empty()) return std::nullopt;
    Item it = std::move(q_.front());
    q_.pop_front();
    not_full_.notify_one();
    return it;
  }

  void close() {
    std::lock_guard lk(mu_);
    closed_ = true;
    not_full_.notify_all();
    not_empty_.notify_all();
  }

 private:
  std::size_t cap_;
  std::deque<Item> q_;
  bool closed_ = false;
  std::mutex mu_;
  std::condition_variable not_full_, not_empty_;
};

inline std::string step_name(long step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%07ld", step);
  return buf;
}

}  // namespace detail

struct TrainOutputs {
  std::optional<std::filesystem::path> dir;  // checkpoints, loss.csv, diagnostics
  std::string prototype_hash;
};

struct TrainResult {
  Encoder<float> encoder;
  std::vector<double> losses;
  Archive checkpoint;
};

using TrainProgress = std::function<void(long step, double loss)>;

// Full loop. Batches for upcoming steps are produced on a worker thread; the
// stream of batches depends only on (seed, step), so results do not depend on
// thread timing.
inline TrainResult train_encoder(const EncoderConfig& ecfg, const TrainConfig& tcfg, const Generator& g,
                                 const PseudoLabeler<float>& labeler, const TrainOutputs& outputs = {},
                                 const TrainProgress& progress = {}) {
  ecfg.validate();
  tcfg.validate();
  ecfg.check_generator(g.metadata());
  if (labeler.class_count() != ecfg.class_count)
    throw ConfigError("encoder.class_count (" + std::to_string(ecfg.class_count) + ") differs from the prototype classes (" +
                      std::to_string(labeler.class_count()) + ")");
  if (labeler.dim() != g.metadata().feature_channels)
    throw ConfigError("prototype dimension " + std::to_string(labeler.dim()) + " differs from generator feature channels " +
                      std::to_string(g.metadata().feature_channels));

  Encoder<float> enc(ecfg, derive_seed(tcfg.seed, streams::init, 0));
  enc.set_average_latent(g.mean_latent(tcfg.mean_latent_samples, derive_seed(tcfg.seed, streams::mean_latent, 0)));
  TrainState st(std::move(enc), tcfg, Provenance{g.hash(), outputs.prototype_hash, labeler.mode()});

  std::ofstream loss_log;
  if (outputs.dir) {
    std::filesystem::create_directories(*outputs.dir);
    loss_log.open(*outputs.dir / "loss.csv", std::ios::trunc);
    if (!loss_log) throw std::runtime_error("cannot write " + (*outputs.dir / "loss.csv").string());
    loss_log << "step,loss\n";
  }
  auto write_sheet = [&](const std::string& name) {
    if (!outputs.dir) return;
    save_image(export_diagnostics(st.encoder, g, labeler, st.diagnostic_seeds), *outputs.dir / "diagnostics" / (name + ".png"));
  };
  write_sheet(detail::step_name(0));

  detail::BoundedQueue<TrainingBatch> queue(static_cast<std::size_t>(tcfg.queue_capacity));
  std::exception_ptr producer_error;
  std::thread producer([&] {
    try {
      for (long s = 0; s < tcfg.iterations; ++s)
        if (!queue.push(make_batch(g, labeler, s, tcfg.batch_size, tcfg.seed))) return;
    } catch (...) {
      producer_error = std::current_exception();
    }
    queue.close();
  });
  struct Joiner {
    detail::BoundedQueue<TrainingBatch>& q;
    std::thread& t;
    ~Joiner() {
      q.close();
      if (t.joinable()) t.join();
    }
  } joiner{queue, producer};

  while (st.step < tcfg.iterations) {
    auto batch = queue.pop();
    if (!batch) break;
    double loss;
    try {
      loss = training_step(st, *batch);
    } catch (const TrainingError&) {
      if (outputs.dir) {
        json dump{{"step", st.step}, {"seeds", batch->seeds}, {"recent_losses", st.losses}};
        write_file(*outputs.dir / "divergence.json", dump.dump(2));
        save_archive(encoder_checkpoint(st), *outputs.dir / "divergence_encoder.smis");
      }
      throw;
    }
    if (loss_log) loss_log << st.step << ',' << loss << '\n';
    if (progress) progress(st.step, loss);
    if (outputs.dir && tcfg.checkpoint_every > 0 && st.step % tcfg.checkpoint_every == 0 && st.step < tcfg.iterations)
      save_archive(encoder_checkpoint(st), *outputs.dir / "checkpoints" / (detail::step_name(st.step) + ".smis"));
    if (tcfg.diagnostic_every > 0 && st.step % tcfg.diagnostic_every == 0) write_sheet(detail::step_name(st.step));
  }
  queue.close();
  if (producer.joinable()) producer.join();
  if (producer_error) std::rethrow_exception(producer_error);

  TrainResult res{st.encoder, st.losses, encoder_checkpoint(st)};
  if (outputs.dir) {
    save_archive(res.checkpoint, *outputs.dir / "encoder.smis");
    if (tcfg.diagnostic_every == 0 || st.step % tcfg.diagnostic_every != 0) write_sheet(detail::step_name(st.step));
  }
  return res;
}

}  // namespace smis
