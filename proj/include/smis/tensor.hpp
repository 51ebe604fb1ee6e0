#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace smis {

// Thrown for malformed caller input (shape mismatch, bad class id, ...).
struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Thrown when a run/model configuration is inconsistent.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown when an operation is not available on a backend.
struct UnsupportedError : std::logic_error {
  using std::logic_error::logic_error;
};

// Channel-major (C, H, W) grid. Used for images, feature maps and activations.
template <typename T>
struct Volume {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Volume() = default;
  Volume(int c, int h, int w, T fill = T(0))
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  bool empty() const { return data.empty(); }

  T& operator()(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  const T& operator()(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }

  std::span<T> channel(int c) { return {data.data() + c * plane(), plane()}; }
  std::span<const T> channel(int c) const { return {data.data() + c * plane(), plane()}; }

  bool same_shape(const Volume& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }

  template <typename U>
  Volume<U> cast() const {
    Volume<U> out(channels, height, width);
    std::transform(data.begin(), data.end(), out.data.begin(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](T v) { return std::isfinite(v); });
  }
};

template <typename T>
inline Volume<T> flat_volume(std::vector<T> v) {
  Volume<T> out;
  out.channels = static_cast<int>(v.size());
  out.height = 1;
  out.width = 1;
  out.data = std::move(v);
  return out;
}

inline std::string shape_string(int c, int h, int w) {
  return std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
}

template <typename T>
std::string shape_string(const Volume<T>& v) {
  return shape_string(v.channels, v.height, v.width);
}

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
  assert(a.size() == b.size());
  T s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace smis
