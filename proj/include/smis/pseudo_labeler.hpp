#pragma once

// Pseudo semantic masks from generator feature maps: nearest-prototype
// labelling for dense layouts and thresholded top-k matching for sparse ones.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <variant>
#include <vector>

#include "smis/mask.hpp"
#include "smis/tensor.hpp"

namespace smis {

inline constexpr double kCosineEps = 1e-12;

// Returns -1 when either vector has (near) zero norm.
template <typename T>
double cosine_similarity(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw InputError("cosine_similarity: dimension mismatch");
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += static_cast<double>(a[i]) * b[i];
    aa += static_cast<double>(a[i]) * a[i];
    bb += static_cast<double>(b[i]) * b[i];
  }
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  if (na <= kCosineEps || nb <= kCosineEps) return -1.0;
  return ab / (na * nb);
}

// One representative vector per class.
template <typename T>
struct DenseVectorSet {
  int class_count = 0;
  int dim = 0;
  std::vector<std::vector<T>> vectors;  // indexed by class id

  bool operator==(const DenseVectorSet&) const = default;
};

template <typename T>
struct SparseEntry {
  std::vector<T> vector;
  ClassId class_id = 0;
  int pair_index = 0;
  int x = 0, y = 0;  // annotated pixel in the source mask

  bool operator==(const SparseEntry&) const = default;
};

// One representative vector per annotated pixel.
template <typename T>
struct SparseVectorSet {
  int class_count = 0;
  int dim = 0;
  std::vector<SparseEntry<T>> entries;

  bool operator==(const SparseVectorSet&) const = default;
};

struct SparseLabelerConfig {
  int k = 3;
  double t = 0.5;

  void validate() const {
    if (k < 1) throw ConfigError("sparse labeler: k must be >= 1");
    if (!(t >= -1.0 && t <= 1.0)) throw ConfigError("sparse labeler: t must lie in [-1, 1]");
  }
};

namespace detail {
template <typename T>
std::vector<T> cell_vector(const Volume<T>& f, int x, int y) {
  std::vector<T> v(f.channels);
  for (int c = 0; c < f.channels; ++c) v[c] = f(c, y, x);
  return v;
}

// Cell vectors laid out row-major, each of length Z.
template <typename T>
std::vector<T> cells_major(const Volume<T>& f) {
  std::vector<T> out(f.size());
  const std::size_t n = f.plane();
  for (int c = 0; c < f.channels; ++c)
    for (std::size_t p = 0; p < n; ++p) out[p * f.channels + c] = f.data[c * n + p];
  return out;
}
}  // namespace detail

// Nearest-prototype labelling; ties go to the lowest class id.
template <typename T>
SemanticMask label_dense(const Volume<T>& features, const DenseVectorSet<T>& prototypes) {
  if (prototypes.vectors.empty()) throw InputError("label_dense: empty prototype set");
  if (prototypes.dim != features.channels)
    throw InputError("label_dense: prototype dimension " + std::to_string(prototypes.dim) + " != feature channels " +
                     std::to_string(features.channels));
  auto mask = SemanticMask::dense(features.width, features.height, prototypes.class_count);
  const auto cells = detail::cells_major(features);
  const int Z = features.channels;
  for (std::size_t p = 0; p < features.plane(); ++p) {
    const std::span<const T> f(cells.data() + p * Z, Z);
    int best = 0;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < prototypes.vectors.size(); ++c) {
      const double s = cosine_similarity<T>(prototypes.vectors[c], f);
      if (s > best_sim) {
        best_sim = s;
        best = static_cast<int>(c);
      }
    }
    mask.labels[p] = static_cast<ClassId>(best);
  }
  return mask;
}

struct SparseLabeling {
  SemanticMask mask;
  // Winning similarity per cell; NaN where no entry matched.
  std::vector<double> winning_similarity;
};

// Each entry proposes its class at its k most similar cells (ties in rank by
// row-major cell order). A contested cell keeps the most similar proposal
// (ties: lowest class id, then lowest entry index). Cells whose winning
// similarity is below t, or that received no proposal, stay unknown.
template <typename T>
SparseLabeling label_sparse(const Volume<T>& features, const SparseVectorSet<T>& prototypes,
                            const SparseLabelerConfig& config) {
  config.validate();
  if (prototypes.entries.empty()) throw InputError("label_sparse: empty prototype set");
  if (prototypes.dim != features.channels)
    throw InputError("label_sparse: prototype dimension " + std::to_string(prototypes.dim) +
                     " != feature channels " + std::to_string(features.channels));
  const int n = static_cast<int>(features.plane());
  const int Z = features.channels;
  const int k = std::min(config.k, n);
  const auto cells = detail::cells_major(features);

  constexpr double none = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> best_sim(n, none);
  std::vector<int> best_class(n, -1), best_entry(n, -1);
  std::vector<double> sims(n);
  std::vector<int> order(n);
  for (std::size_t e = 0; e < prototypes.entries.size(); ++e) {
    const auto& entry = prototypes.entries[e];
    for (int p = 0; p < n; ++p)
      sims[p] = cosine_similarity<T>(entry.vector, std::span<const T>(cells.data() + static_cast<std::size_t>(p) * Z, Z));
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + k, order.end(),
                      [&](int a, int b) { return sims[a] > sims[b] || (sims[a] == sims[b] && a < b); });
    for (int r = 0; r < k; ++r) {
      const int p = order[r];
      const double s = sims[p];
      const int cls = entry.class_id;
      const bool wins = best_class[p] < 0 || s > best_sim[p] ||
                        (s == best_sim[p] && (cls < best_class[p] || (cls == best_class[p] && static_cast<int>(e) < best_entry[p])));
      if (wins) {
        best_sim[p] = s;
        best_class[p] = cls;
        best_entry[p] = static_cast<int>(e);
      }
    }
  }
  SparseLabeling out{SemanticMask::sparse(features.width, features.height, prototypes.class_count), {}};
  out.winning_similarity.assign(n, none);
  for (int p = 0; p < n; ++p) {
    if (best_class[p] < 0 || best_sim[p] < config.t) continue;
    out.mask.labels[p] = static_cast<ClassId>(best_class[p]);
    out.winning_similarity[p] = best_sim[p];
  }
  return out;
}

// A prototype set together with the labelling rule that consumes it.
template <typename T>
struct PseudoLabeler {
  std::variant<DenseVectorSet<T>, SparseVectorSet<T>> prototypes;
  SparseLabelerConfig sparse_config;

  MaskKind mode() const { return prototypes.index() == 0 ? MaskKind::dense : MaskKind::sparse; }
  int class_count() const {
    return std::visit([](const auto& p) { return p.class_count; }, prototypes);
  }
  int dim() const {
    return std::visit([](const auto& p) { return p.dim; }, prototypes);
  }

  // Pseudo mask at feature resolution.
  SemanticMask label(const Volume<T>& features) const {
    if (const auto* d = std::get_if<DenseVectorSet<T>>(&prototypes)) return label_dense(features, *d);
    return label_sparse(features, std::get<SparseVectorSet<T>>(prototypes), sparse_config).mask;
  }

  // Pseudo mask enlarged to image resolution.
  SemanticMask label(const Volume<T>& features, int width, int height) const {
    return upscale_mask(label(features), width, height);
  }
};

}  // namespace smis
