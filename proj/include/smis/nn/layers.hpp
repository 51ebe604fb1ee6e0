#pragma once

// Minimal CPU building blocks for the generator, discriminator and encoder.
// Layers are pure in forward(); backward() takes the forward input back from
// the caller and accumulates parameter gradients into Param::grad. A network
// that owns several layers keeps its own activation record, so inference
// through a const network is safe to share between threads.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "smis/tensor.hpp"

namespace smis::nn {

template <typename T>
struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;

  Param() = default;
  Param(std::string n, std::vector<int> s) : name(std::move(n)), shape(std::move(s)) {
    std::size_t count = 1;
    for (int d : shape) count *= static_cast<std::size_t>(d);
    value.assign(count, T(0));
    grad.assign(count, T(0));
  }

  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }

  template <typename U>
  void copy_from(const Param<U>& o) {
    shape = o.shape;
    value.assign(o.value.begin(), o.value.end());
    grad.assign(value.size(), T(0));
  }
};

template <typename T>
using ParamRefs = std::vector<Param<T>*>;

template <typename T>
void zero_grads(const ParamRefs<T>& ps) {
  for (auto* p : ps) p->zero_grad();
}

template <typename T>
std::size_t count_params(const ParamRefs<T>& ps) {
  std::size_t n = 0;
  for (auto* p : ps) n += p->size();
  return n;
}

inline void fill_normal(std::vector<float>& v, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& x : v) x = static_cast<float>(dist(rng));
}

inline void fill_normal(std::vector<double>& v, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& x : v) x = dist(rng);
}

constexpr double kLeakySlope = 0.2;

template <typename T>
Volume<T> leaky_relu(const Volume<T>& x) {
  Volume<T> y = x;
  for (auto& v : y.data)
    if (v < T(0)) v *= T(kLeakySlope);
  return y;
}

template <typename T>
Volume<T> leaky_relu_backward(const Volume<T>& x, const Volume<T>& dy) {
  Volume<T> dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i)
    if (x.data[i] < T(0)) dx.data[i] *= T(kLeakySlope);
  return dx;
}

template <typename T>
Volume<T> tanh_fn(const Volume<T>& x) {
  Volume<T> y = x;
  for (auto& v : y.data) v = std::tanh(v);
  return y;
}

// dy * (1 - tanh(x)^2), given y = tanh(x)
template <typename T>
Volume<T> tanh_backward(const Volume<T>& y, const Volume<T>& dy) {
  Volume<T> dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] *= T(1) - y.data[i] * y.data[i];
  return dx;
}

template <typename T>
Volume<T> upsample2x(const Volume<T>& x) {
  Volume<T> y(x.channels, x.height * 2, x.width * 2);
  for (int c = 0; c < x.channels; ++c)
    for (int r = 0; r < y.height; ++r)
      for (int q = 0; q < y.width; ++q) y(c, r, q) = x(c, r / 2, q / 2);
  return y;
}

template <typename T>
Volume<T> upsample2x_backward(const Volume<T>& dy) {
  Volume<T> dx(dy.channels, dy.height / 2, dy.width / 2);
  for (int c = 0; c < dy.channels; ++c)
    for (int r = 0; r < dy.height; ++r)
      for (int q = 0; q < dy.width; ++q) dx(c, r / 2, q / 2) += dy(c, r, q);
  return dx;
}

template <typename T>
Volume<T> avgpool2x(const Volume<T>& x) {
  Volume<T> y(x.channels, x.height / 2, x.width / 2);
  for (int c = 0; c < y.channels; ++c)
    for (int r = 0; r < y.height; ++r)
      for (int q = 0; q < y.width; ++q)
        y(c, r, q) = T(0.25) * (x(c, 2 * r, 2 * q) + x(c, 2 * r + 1, 2 * q) + x(c, 2 * r, 2 * q + 1) +
                                x(c, 2 * r + 1, 2 * q + 1));
  return y;
}

template <typename T>
Volume<T> avgpool2x_backward(const Volume<T>& dy) {
  Volume<T> dx(dy.channels, dy.height * 2, dy.width * 2);
  for (int c = 0; c < dy.channels; ++c)
    for (int r = 0; r < dx.height; ++r)
      for (int q = 0; q < dx.width; ++q) dx(c, r, q) = T(0.25) * dy(c, r / 2, q / 2);
  return dx;
}

// Average-pool by repeated halving until the spatial size is <= target.
template <typename T>
Volume<T> pool_to(const Volume<T>& x, int target) {
  Volume<T> y = x;
  while (y.height > target || y.width > target) y = avgpool2x(y);
  return y;
}

template <typename T>
Volume<T> pool_to_backward(const Volume<T>& dy, int source_h, int source_w) {
  Volume<T> dx = dy;
  while (dx.height < source_h || dx.width < source_w) dx = avgpool2x_backward(dx);
  return dx;
}

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in, int out, int kernel, int stride = 1)
      : in_(in), out_(out), k_(kernel), stride_(stride), pad_(kernel / 2),
        weight_(name + ".weight", {out, in, kernel, kernel}), bias_(name + ".bias", {out}) {}

  void init(std::mt19937_64& rng, double gain = std::sqrt(2.0)) {
    fill_normal(weight_.value, rng, gain / std::sqrt(static_cast<double>(in_ * k_ * k_)));
    std::fill(bias_.value.begin(), bias_.value.end(), T(0));
  }

  int out_size(int n) const { return (n + 2 * pad_ - k_) / stride_ + 1; }
  int in_channels() const { return in_; }
  int out_channels() const { return out_; }

  Volume<T> forward(const Volume<T>& x) const {
    check(x);
    const int oh = out_size(x.height), ow = out_size(x.width);
    const std::size_t P = static_cast<std::size_t>(oh) * ow, J = static_cast<std::size_t>(in_) * k_ * k_;
    const auto col = im2col(x, oh, ow);
    Volume<T> y(out_, oh, ow);
    // Four output channels per pass over the column matrix.
    int o = 0;
    for (; o + 4 <= out_; o += 4) {
      T* y0 = &y(o, 0, 0);
      T* y1 = y0 + P;
      T* y2 = y1 + P;
      T* y3 = y2 + P;
      std::fill(y0, y0 + P, bias_.value[o]);
      std::fill(y1, y1 + P, bias_.value[o + 1]);
      std::fill(y2, y2 + P, bias_.value[o + 2]);
      std::fill(y3, y3 + P, bias_.value[o + 3]);
      const T* w0 = &weight_.value[o * J];
      for (std::size_t j = 0; j < J; ++j) {
        const T a = w0[j], b = w0[J + j], c = w0[2 * J + j], d = w0[3 * J + j];
        const T* cj = &col[j * P];
        for (std::size_t p = 0; p < P; ++p) {
          const T v = cj[p];
          y0[p] += a * v;
          y1[p] += b * v;
          y2[p] += c * v;
          y3[p] += d * v;
        }
      }
    }
    for (; o < out_; ++o) {
      T* yo = &y(o, 0, 0);
      std::fill(yo, yo + P, bias_.value[o]);
      const T* wo = &weight_.value[o * J];
      for (std::size_t j = 0; j < J; ++j) {
        const T a = wo[j];
        const T* cj = &col[j * P];
        for (std::size_t p = 0; p < P; ++p) yo[p] += a * cj[p];
      }
    }
    return y;
  }

  Volume<T> backward(const Volume<T>& x, const Volume<T>& dy) {
    const int oh = dy.height, ow = dy.width;
    const std::size_t P = static_cast<std::size_t>(oh) * ow, J = static_cast<std::size_t>(in_) * k_ * k_;
    const auto col = im2col(x, oh, ow);
    std::vector<T> dcol(J * P, T(0));
    for (int o = 0; o < out_; ++o) {
      const T* g = &dy(o, 0, 0);
      T bsum = 0;
      for (std::size_t p = 0; p < P; ++p) bsum += g[p];
      bias_.grad[o] += bsum;
      T* gw = &weight_.grad[o * J];
      const T* wo = &weight_.value[o * J];
      for (std::size_t j = 0; j < J; ++j) {
        const T* cj = &col[j * P];
        T* dj = &dcol[j * P];
        const T w = wo[j];
        T acc[4] = {0, 0, 0, 0};
        std::size_t p = 0;
        for (; p + 4 <= P; p += 4) {
          acc[0] += g[p] * cj[p];
          acc[1] += g[p + 1] * cj[p + 1];
          acc[2] += g[p + 2] * cj[p + 2];
          acc[3] += g[p + 3] * cj[p + 3];
        }
        for (; p < P; ++p) acc[0] += g[p] * cj[p];
        gw[j] += (acc[0] + acc[1]) + (acc[2] + acc[3]);
        for (std::size_t q = 0; q < P; ++q) dj[q] += w * g[q];
      }
    }
    return col2im(dcol, x.height, x.width, oh, ow);
  }

  void collect(ParamRefs<T>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }

 private:
  std::size_t widx(int o, int i, int ky, int kx) const {
    return ((static_cast<std::size_t>(o) * in_ + i) * k_ + ky) * k_ + kx;
  }

  // Rows (i, ky, kx), columns output pixels; zero where the tap falls in
  // the padding.
  std::vector<T> im2col(const Volume<T>& x, int oh, int ow) const {
    const std::size_t P = static_cast<std::size_t>(oh) * ow;
    std::vector<T> col(static_cast<std::size_t>(in_) * k_ * k_ * P, T(0));
    for (int i = 0; i < in_; ++i)
      for (int ky = 0; ky < k_; ++ky)
        for (int kx = 0; kx < k_; ++kx) {
          T* row = &col[((static_cast<std::size_t>(i) * k_ + ky) * k_ + kx) * P];
          for (int r = 0; r < oh; ++r) {
            const int sy = r * stride_ + ky - pad_;
            if (sy < 0 || sy >= x.height) continue;
            const T* src = &x(i, sy, 0);
            T* dst = row + static_cast<std::size_t>(r) * ow;
            for (int q = 0; q < ow; ++q) {
              const int sx = q * stride_ + kx - pad_;
              if (sx >= 0 && sx < x.width) dst[q] = src[sx];
            }
          }
        }
    return col;
  }

  Volume<T> col2im(const std::vector<T>& dcol, int h, int w, int oh, int ow) const {
    const std::size_t P = static_cast<std::size_t>(oh) * ow;
    Volume<T> dx(in_, h, w);
    for (int i = 0; i < in_; ++i)
      for (int ky = 0; ky < k_; ++ky)
        for (int kx = 0; kx < k_; ++kx) {
          const T* row = &dcol[((static_cast<std::size_t>(i) * k_ + ky) * k_ + kx) * P];
          for (int r = 0; r < oh; ++r) {
            const int sy = r * stride_ + ky - pad_;
            if (sy < 0 || sy >= h) continue;
            T* dst = &dx(i, sy, 0);
            const T* src = row + static_cast<std::size_t>(r) * ow;
            for (int q = 0; q < ow; ++q) {
              const int sx = q * stride_ + kx - pad_;
              if (sx >= 0 && sx < w) dst[sx] += src[q];
            }
          }
        }
    return dx;
  }

  void check(const Volume<T>& x) const {
    if (x.channels != in_)
      throw InputError(weight_.name + ": expected " + std::to_string(in_) + " input channels, got " +
                       std::to_string(x.channels));
  }

  int in_ = 0, out_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
  Param<T> weight_, bias_;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in, int out)
      : in_(in), out_(out), weight_(name + ".weight", {out, in}), bias_(name + ".bias", {out}) {}

  void init(std::mt19937_64& rng, double gain = std::sqrt(2.0), T bias = T(0)) {
    fill_normal(weight_.value, rng, gain / std::sqrt(static_cast<double>(in_)));
    std::fill(bias_.value.begin(), bias_.value.end(), bias);
  }

  int in_features() const { return in_; }
  int out_features() const { return out_; }

  std::vector<T> forward(std::span<const T> x) const {
    if (static_cast<int>(x.size()) != in_)
      throw InputError(weight_.name + ": expected " + std::to_string(in_) + " inputs, got " +
                       std::to_string(x.size()));
    std::vector<T> y(bias_.value.begin(), bias_.value.end());
    for (int o = 0; o < out_; ++o) {
      const T* row = &weight_.value[static_cast<std::size_t>(o) * in_];
      T s = 0;
      for (int i = 0; i < in_; ++i) s += row[i] * x[i];
      y[o] += s;
    }
    return y;
  }

  std::vector<T> backward(std::span<const T> x, std::span<const T> dy) {
    std::vector<T> dx(in_, T(0));
    for (int o = 0; o < out_; ++o) {
      const T g = dy[o];
      bias_.grad[o] += g;
      if (g == T(0)) continue;
      const std::size_t base = static_cast<std::size_t>(o) * in_;
      for (int i = 0; i < in_; ++i) {
        weight_.grad[base + i] += g * x[i];
        dx[i] += g * weight_.value[base + i];
      }
    }
    return dx;
  }

  void collect(ParamRefs<T>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }
  const Param<T>& weight() const { return weight_; }
  const Param<T>& bias() const { return bias_; }

 private:
  int in_ = 0, out_ = 0;
  Param<T> weight_, bias_;
};

template <typename T>
std::vector<T> leaky_relu(std::span<const T> x) {
  std::vector<T> y(x.begin(), x.end());
  for (auto& v : y)
    if (v < T(0)) v *= T(kLeakySlope);
  return y;
}

template <typename T>
std::vector<T> leaky_relu_backward(std::span<const T> x, std::span<const T> dy) {
  std::vector<T> dx(dy.begin(), dy.end());
  for (std::size_t i = 0; i < dx.size(); ++i)
    if (x[i] < T(0)) dx[i] *= T(kLeakySlope);
  return dx;
}

// Per-channel instance normalisation without affine parameters.
template <typename T>
struct InstanceNormRecord {
  std::vector<T> inv_std;
  Volume<T> normalized;
};

template <typename T>
Volume<T> instance_norm(const Volume<T>& x, InstanceNormRecord<T>* rec = nullptr, T eps = T(1e-5)) {
  Volume<T> y(x.channels, x.height, x.width);
  std::vector<T> inv(x.channels);
  const T n = static_cast<T>(x.plane());
  for (int c = 0; c < x.channels; ++c) {
    auto src = x.channel(c);
    T mean = 0;
    for (T v : src) mean += v;
    mean /= n;
    T var = 0;
    for (T v : src) var += (v - mean) * (v - mean);
    var /= n;
    inv[c] = T(1) / std::sqrt(var + eps);
    auto dst = y.channel(c);
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = (src[i] - mean) * inv[c];
  }
  if (rec) {
    rec->inv_std = inv;
    rec->normalized = y;
  }
  return y;
}

template <typename T>
Volume<T> instance_norm_backward(const InstanceNormRecord<T>& rec, const Volume<T>& dy) {
  const auto& xhat = rec.normalized;
  Volume<T> dx(dy.channels, dy.height, dy.width);
  const T n = static_cast<T>(dy.plane());
  for (int c = 0; c < dy.channels; ++c) {
    auto g = dy.channel(c);
    auto xh = xhat.channel(c);
    T sum_g = 0, sum_gx = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      sum_g += g[i];
      sum_gx += g[i] * xh[i];
    }
    auto out = dx.channel(c);
    for (std::size_t i = 0; i < g.size(); ++i)
      out[i] = rec.inv_std[c] * (g[i] - sum_g / n - xh[i] * sum_gx / n);
  }
  return dx;
}

}  // namespace smis::nn
