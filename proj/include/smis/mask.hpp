#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "smis/tensor.hpp"

namespace smis {

using ClassId = std::uint8_t;
inline constexpr ClassId kUnknown = 255;
inline constexpr int kMaxClasses = 255;

enum class MaskKind { dense, sparse };

inline std::string to_string(MaskKind k) { return k == MaskKind::dense ? "dense" : "sparse"; }

inline MaskKind parse_mask_kind(const std::string& s) {
  if (s == "dense") return MaskKind::dense;
  if (s == "sparse") return MaskKind::sparse;
  throw InputError("unknown mask kind '" + s + "' (expected dense or sparse)");
}

// Per-pixel class assignment, row-major. Sparse masks mark unannotated
// pixels with kUnknown.
struct SemanticMask {
  MaskKind kind = MaskKind::dense;
  int width = 0;
  int height = 0;
  int class_count = 0;
  std::vector<ClassId> labels;

  SemanticMask() = default;
  SemanticMask(MaskKind k, int w, int h, int classes, ClassId fill)
      : kind(k), width(w), height(h), class_count(classes), labels(static_cast<std::size_t>(w) * h, fill) {}

  static SemanticMask dense(int w, int h, int classes, ClassId fill = 0) {
    return {MaskKind::dense, w, h, classes, fill};
  }
  static SemanticMask sparse(int w, int h, int classes) { return {MaskKind::sparse, w, h, classes, kUnknown}; }

  ClassId& at(int x, int y) { return labels[static_cast<std::size_t>(y) * width + x]; }
  ClassId at(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }

  std::size_t size() const { return labels.size(); }

  std::size_t unknown_count() const { return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), kUnknown)); }
  std::size_t annotated_count() const { return size() - unknown_count(); }

  bool operator==(const SemanticMask&) const = default;

  void validate() const {
    if (width <= 0 || height <= 0) throw InputError("mask has empty size");
    if (labels.size() != static_cast<std::size_t>(width) * height) throw InputError("mask label count does not match size");
    if (class_count < 1 || class_count > kMaxClasses) throw InputError("mask class count out of range");
    for (ClassId c : labels) {
      if (c == kUnknown) {
        if (kind == MaskKind::dense) throw InputError("dense mask contains unknown label");
      } else if (c >= class_count) {
        throw InputError("mask label " + std::to_string(c) + " >= class count " + std::to_string(class_count));
      }
    }
  }
};

namespace detail {

// Source index range covered by target cell `i` when mapping n source cells
// onto m target cells. Always non-empty.
inline std::pair<int, int> covered_range(int i, int m, int n) {
  const long lo = static_cast<long>(i) * n / m;
  long hi = (static_cast<long>(i + 1) * n + m - 1) / m;
  if (hi <= lo) hi = lo + 1;
  return {static_cast<int>(lo), static_cast<int>(std::min<long>(hi, n))};
}

}  // namespace detail

// Per-cell majority vote over the covered source pixels. Unknown pixels do
// not vote; a cell with no known pixels stays unknown. Ties go to the lowest
// class id.
inline SemanticMask resize_majority(const SemanticMask& mask, int width, int height) {
  if (width <= 0 || height <= 0) throw InputError("resize target size must be positive");
  SemanticMask out(mask.kind, width, height, mask.class_count, kUnknown);
  std::vector<int> votes(mask.class_count);
  for (int cy = 0; cy < height; ++cy) {
    const auto [y0, y1] = detail::covered_range(cy, height, mask.height);
    for (int cx = 0; cx < width; ++cx) {
      const auto [x0, x1] = detail::covered_range(cx, width, mask.width);
      std::fill(votes.begin(), votes.end(), 0);
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
          const ClassId c = mask.at(x, y);
          if (c != kUnknown) ++votes[c];
        }
      int best = -1, best_votes = 0;
      for (int c = 0; c < mask.class_count; ++c)
        if (votes[c] > best_votes) {
          best = c;
          best_votes = votes[c];
        }
      out.at(cx, cy) = best < 0 ? kUnknown : static_cast<ClassId>(best);
    }
  }
  return out;
}

// Nearest-neighbour enlargement; unknown labels propagate.
inline SemanticMask upscale_mask(const SemanticMask& mask, int width, int height) {
  if (width < mask.width || height < mask.height)
    throw InputError("upscale_mask cannot shrink " + std::to_string(mask.width) + "x" + std::to_string(mask.height) +
                     " to " + std::to_string(width) + "x" + std::to_string(height));
  SemanticMask out(mask.kind, width, height, mask.class_count, kUnknown);
  for (int y = 0; y < height; ++y) {
    const int sy = static_cast<int>(static_cast<long>(y) * mask.height / height);
    for (int x = 0; x < width; ++x) {
      const int sx = static_cast<int>(static_cast<long>(x) * mask.width / width);
      out.at(x, y) = mask.at(sx, sy);
    }
  }
  return out;
}

// Nearest-neighbour sampling in either direction (used to fit an arbitrary
// mask onto the encoder input grid).
inline SemanticMask resample_nearest(const SemanticMask& mask, int width, int height) {
  if (mask.width == width && mask.height == height) return mask;
  SemanticMask out(mask.kind, width, height, mask.class_count, kUnknown);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      out.at(x, y) = mask.at(static_cast<int>(static_cast<long>(x) * mask.width / width),
                             static_cast<int>(static_cast<long>(y) * mask.height / height));
  return out;
}

// One channel per class plus a trailing channel for unknown.
template <typename T>
Volume<T> one_hot(const SemanticMask& mask, int channels) {
  if (channels < mask.class_count + 1)
    throw InputError("one_hot needs " + std::to_string(mask.class_count + 1) + " channels, encoder has " +
                     std::to_string(channels));
  Volume<T> v(channels, mask.height, mask.width);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      const ClassId c = mask.at(x, y);
      v(c == kUnknown ? channels - 1 : c, y, x) = T(1);
    }
  return v;
}

// Fraction of cells where `mask` is known and equals `reference`.
inline double agreement(const SemanticMask& mask, const SemanticMask& reference) {
  if (mask.width != reference.width || mask.height != reference.height) throw InputError("agreement: size mismatch");
  std::size_t hit = 0, total = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (reference.labels[i] == kUnknown) continue;
    ++total;
    if (mask.labels[i] == reference.labels[i]) ++hit;
  }
  if (total == 0) throw InputError("reference mask has no known cells");
  return static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace smis
