#pragma once

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "bnasr/linalg.hpp"
#include "bnasr/tensor.hpp"

namespace bnasr {

enum class Mode { kTrain, kEval };

/// Named handle to a tensor owned by a layer. Buffers (batch-norm running
/// statistics) are checkpointed but never receive gradient updates.
template <typename Real>
struct ParamRef {
  std::string name;
  Tensor<Real>* tensor = nullptr;
  bool trainable = true;
};

template <typename Real>
using ParamList = std::vector<ParamRef<Real>>;

/// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))
template <typename Real>
void init_uniform_fan_in(Tensor<Real>& t, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(double(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.values()) v = Real(dist(rng));
}

template <typename Real>
Tensor<Real> make_param(Shape shape) {
  Tensor<Real> t(std::move(shape));
  t.enable_grad();
  return t;
}

// ---------------------------------------------------------------------------
// Convolution

struct Conv2dGeometry {
  std::size_t in_channels = 1, out_channels = 1;
  std::size_t kernel_h = 1, kernel_w = 1;
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 0, pad_w = 0;

  std::size_t out_h(std::size_t h) const { return out_extent(h, kernel_h, stride_h, pad_h, "height"); }
  std::size_t out_w(std::size_t w) const { return out_extent(w, kernel_w, stride_w, pad_w, "width"); }
  std::size_t patch_size() const { return in_channels * kernel_h * kernel_w; }

  static std::size_t out_extent(std::size_t n, std::size_t k, std::size_t s, std::size_t p,
                                const char* axis) {
    if (k > n + 2 * p) {
      throw ShapeError(std::string("conv2d: kernel ") + axis + " " + std::to_string(k) +
                       " exceeds padded input " + axis + " " + std::to_string(n + 2 * p));
    }
    return (n + 2 * p - k) / s + 1;
  }
};

namespace detail {

// cols is (C*kH*kW) x (H'*W'); x is C x H x W.
template <typename Real>
void im2col(const Conv2dGeometry& g, const Real* x, std::size_t h, std::size_t w, Real* cols) {
  const std::size_t oh = g.out_h(h), ow = g.out_w(w);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    for (std::size_t i = 0; i < g.kernel_h; ++i) {
      for (std::size_t j = 0; j < g.kernel_w; ++j, ++row) {
        Real* out = cols + row * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          const std::ptrdiff_t iy = std::ptrdiff_t(y * g.stride_h + i) - std::ptrdiff_t(g.pad_h);
          Real* dst = out + y * ow;
          if (iy < 0 || iy >= std::ptrdiff_t(h)) {
            std::fill(dst, dst + ow, Real(0));
            continue;
          }
          const Real* src = x + (c * h + std::size_t(iy)) * w;
          for (std::size_t xo = 0; xo < ow; ++xo) {
            const std::ptrdiff_t ix = std::ptrdiff_t(xo * g.stride_w + j) - std::ptrdiff_t(g.pad_w);
            dst[xo] = (ix < 0 || ix >= std::ptrdiff_t(w)) ? Real(0) : src[ix];
          }
        }
      }
    }
  }
}

template <typename Real>
void col2im(const Conv2dGeometry& g, const Real* cols, std::size_t h, std::size_t w, Real* dx) {
  const std::size_t oh = g.out_h(h), ow = g.out_w(w);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    for (std::size_t i = 0; i < g.kernel_h; ++i) {
      for (std::size_t j = 0; j < g.kernel_w; ++j, ++row) {
        const Real* in = cols + row * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          const std::ptrdiff_t iy = std::ptrdiff_t(y * g.stride_h + i) - std::ptrdiff_t(g.pad_h);
          if (iy < 0 || iy >= std::ptrdiff_t(h)) continue;
          Real* dst = dx + (c * h + std::size_t(iy)) * w;
          const Real* src = in + y * ow;
          for (std::size_t xo = 0; xo < ow; ++xo) {
            const std::ptrdiff_t ix = std::ptrdiff_t(xo * g.stride_w + j) - std::ptrdiff_t(g.pad_w);
            if (ix >= 0 && ix < std::ptrdiff_t(w)) dst[ix] += src[xo];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Cross-correlation of a C_in x H x W map with C_out x C_in x kH x kW kernels.
template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& input, const Tensor<Real>& kernels, const Tensor<Real>& bias,
                    std::pair<std::size_t, std::size_t> stride,
                    std::pair<std::size_t, std::size_t> padding) {
  require_rank(input, 3, "conv2d input");
  require_rank(kernels, 4, "conv2d kernels");
  if (kernels.dim(1) != input.dim(0)) {
    throw ShapeError("conv2d: kernel bank " + shape_str(kernels.shape()) +
                     " does not match input channels of " + shape_str(input.shape()));
  }
  Conv2dGeometry g{input.dim(0), kernels.dim(0), kernels.dim(2), kernels.dim(3),
                   stride.first, stride.second, padding.first, padding.second};
  if (!bias.empty()) require_shape(bias, {g.out_channels}, "conv2d bias");
  const std::size_t h = input.dim(1), w = input.dim(2);
  const std::size_t oh = g.out_h(h), ow = g.out_w(w);
  std::vector<Real> cols(g.patch_size() * oh * ow);
  detail::im2col(g, input.data(), h, w, cols.data());
  Tensor<Real> out({g.out_channels, oh, ow});
  gemm(Trans::kNo, Trans::kNo, g.out_channels, oh * ow, g.patch_size(), kernels.data(), cols.data(),
       Real(0), out.data());
  if (!bias.empty()) {
    for (std::size_t c = 0; c < g.out_channels; ++c) {
      Real* p = out.data() + c * oh * ow;
      for (std::size_t i = 0; i < oh * ow; ++i) p[i] += bias[c];
    }
  }
  return out;
}

/// Batched convolution layer over N x C x H x W tensors.
template <typename Real>
class Conv2d {
 public:
  struct Cache {
    Tensor<Real> input;
  };

  Conv2d() = default;
  explicit Conv2d(const Conv2dGeometry& geometry)
      : geometry_(geometry),
        weight_(make_param<Real>({geometry.out_channels, geometry.in_channels, geometry.kernel_h,
                                  geometry.kernel_w})),
        bias_(make_param<Real>({geometry.out_channels})) {}

  void init(std::mt19937_64& rng) {
    init_uniform_fan_in(weight_, geometry_.patch_size(), rng);
    bias_.fill(Real(0));
  }

  const Conv2dGeometry& geometry() const { return geometry_; }
  Tensor<Real>& weight() { return weight_; }
  Tensor<Real>& bias() { return bias_; }

  void collect(const std::string& prefix, ParamList<Real>& out) {
    out.push_back({prefix + ".weight", &weight_, true});
    out.push_back({prefix + ".bias", &bias_, true});
  }

  Tensor<Real> forward(const Tensor<Real>& x, Cache& cache, Mode = Mode::kEval) const {
    check_input(x);
    const auto& g = geometry_;
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = g.out_h(h), ow = g.out_w(w), plane = oh * ow;
    Tensor<Real> y({n, g.out_channels, oh, ow});
    std::vector<Real> cols(g.patch_size() * plane);
    for (std::size_t s = 0; s < n; ++s) {
      detail::im2col(g, x.data() + s * g.in_channels * h * w, h, w, cols.data());
      Real* ys = y.data() + s * g.out_channels * plane;
      gemm(Trans::kNo, Trans::kNo, g.out_channels, plane, g.patch_size(), weight_.data(), cols.data(),
           Real(0), ys);
      for (std::size_t c = 0; c < g.out_channels; ++c) {
        Real* p = ys + c * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] += bias_[c];
      }
    }
    cache.input = x;
    check_finite(y, "conv2d");
    return y;
  }

  Tensor<Real> backward(const Tensor<Real>& gy, const Cache& cache) {
    const auto& g = geometry_;
    const Tensor<Real>& x = cache.input;
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = g.out_h(h), ow = g.out_w(w), plane = oh * ow;
    require_shape(gy, {n, g.out_channels, oh, ow}, "conv2d backward");
    Tensor<Real> gx(x.shape());
    std::vector<Real> cols(g.patch_size() * plane), gcols(g.patch_size() * plane);
    auto gw = weight_.grad();
    auto gb = bias_.grad();
    for (std::size_t s = 0; s < n; ++s) {
      const Real* gys = gy.data() + s * g.out_channels * plane;
      detail::im2col(g, x.data() + s * g.in_channels * h * w, h, w, cols.data());
      gemm(Trans::kNo, Trans::kYes, g.out_channels, g.patch_size(), plane, gys, cols.data(), Real(1),
           gw.data());
      for (std::size_t c = 0; c < g.out_channels; ++c) {
        const Real* p = gys + c * plane;
        Real acc = 0;
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
        gb[c] += acc;
      }
      gemm(Trans::kYes, Trans::kNo, g.patch_size(), plane, g.out_channels, weight_.data(), gys, Real(0),
           gcols.data());
      detail::col2im(g, gcols.data(), h, w, gx.data() + s * g.in_channels * h * w);
    }
    return gx;
  }

 private:
  void check_input(const Tensor<Real>& x) const {
    require_rank(x, 4, "conv2d layer input");
    if (x.dim(1) != geometry_.in_channels) {
      throw ShapeError("conv2d layer: expected " + std::to_string(geometry_.in_channels) +
                       " input channels, got shape " + shape_str(x.shape()));
    }
  }

  Conv2dGeometry geometry_;
  Tensor<Real> weight_;
  Tensor<Real> bias_;
};

// ---------------------------------------------------------------------------
// Batch normalization over N x C x H x W, statistics per channel.
//
// `widths` optionally gives the number of valid time columns per sample;
// columns at or beyond that width are excluded from the statistics and
// produce zero output and zero gradient.

template <typename Real>
class BatchNorm2d {
 public:
  struct Cache {
    Tensor<Real> normalized;
    std::vector<Real> inv_std;
    std::vector<std::size_t> widths;
    Mode mode = Mode::kEval;
  };

  static constexpr double kMomentum = 0.9;
  static constexpr double kEpsilon = 1e-5;

  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t channels)
      : gamma_(make_param<Real>({channels})),
        beta_(make_param<Real>({channels})),
        running_mean_({channels}, Real(0)),
        running_var_({channels}, Real(1)) {
    gamma_.fill(Real(1));
  }

  std::size_t channels() const { return gamma_.size(); }
  Tensor<Real>& gamma() { return gamma_; }
  Tensor<Real>& beta() { return beta_; }
  Tensor<Real>& running_mean() { return running_mean_; }
  Tensor<Real>& running_var() { return running_var_; }

  void collect(const std::string& prefix, ParamList<Real>& out) {
    out.push_back({prefix + ".gamma", &gamma_, true});
    out.push_back({prefix + ".beta", &beta_, true});
    out.push_back({prefix + ".running_mean", &running_mean_, false});
    out.push_back({prefix + ".running_var", &running_var_, false});
  }

  Tensor<Real> forward(const Tensor<Real>& x, Cache& cache, Mode mode,
                       std::span<const std::size_t> widths = {}) {
    require_rank(x, 4, "batchnorm input");
    const std::size_t n = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (ch != channels()) throw ShapeError("batchnorm: channel mismatch, shape " + shape_str(x.shape()));
    cache.widths.assign(n, w);
    if (!widths.empty()) {
      if (widths.size() != n) throw ShapeError("batchnorm: widths size mismatch");
      for (std::size_t s = 0; s < n; ++s) cache.widths[s] = std::min(widths[s], w);
    }
    cache.mode = mode;
    cache.inv_std.assign(ch, Real(0));
    std::vector<Real> mean(ch);
    if (mode == Mode::kTrain) {
      std::size_t count = 0;
      for (std::size_t s = 0; s < n; ++s) count += cache.widths[s] * h;
      if (count == 0) throw ShapeError("batchnorm: no valid positions in batch");
      for (std::size_t c = 0; c < ch; ++c) {
        double sum = 0, sq = 0;
        for_each_valid(x, cache.widths, c, [&](std::size_t idx) {
          sum += x[idx];
          sq += double(x[idx]) * x[idx];
        });
        const double m = sum / double(count);
        const double var = std::max(0.0, sq / double(count) - m * m);
        mean[c] = Real(m);
        cache.inv_std[c] = Real(1.0 / std::sqrt(var + kEpsilon));
        const double unbiased = count > 1 ? var * double(count) / double(count - 1) : var;
        running_mean_[c] = Real(kMomentum * running_mean_[c] + (1 - kMomentum) * m);
        running_var_[c] = Real(kMomentum * running_var_[c] + (1 - kMomentum) * unbiased);
      }
    } else {
      for (std::size_t c = 0; c < ch; ++c) {
        mean[c] = running_mean_[c];
        cache.inv_std[c] = Real(1.0 / std::sqrt(double(running_var_[c]) + kEpsilon));
      }
    }
    Tensor<Real> y(x.shape());
    cache.normalized = Tensor<Real>(x.shape());
    for (std::size_t c = 0; c < ch; ++c) {
      for_each_valid(x, cache.widths, c, [&](std::size_t idx) {
        const Real xn = (x[idx] - mean[c]) * cache.inv_std[c];
        cache.normalized[idx] = xn;
        y[idx] = gamma_[c] * xn + beta_[c];
      });
    }
    check_finite(y, "batchnorm");
    return y;
  }

  Tensor<Real> backward(const Tensor<Real>& gy, const Cache& cache) {
    const Tensor<Real>& xn = cache.normalized;
    require_shape(gy, xn.shape(), "batchnorm backward");
    const std::size_t n = xn.dim(0), ch = xn.dim(1), h = xn.dim(2);
    std::size_t count = 0;
    for (std::size_t s = 0; s < n; ++s) count += cache.widths[s] * h;
    Tensor<Real> gx(xn.shape());
    auto gg = gamma_.grad();
    auto gbeta = beta_.grad();
    for (std::size_t c = 0; c < ch; ++c) {
      double sum_g = 0, sum_gx = 0;
      for_each_valid(xn, cache.widths, c, [&](std::size_t idx) {
        sum_g += gy[idx];
        sum_gx += double(gy[idx]) * xn[idx];
      });
      gg[c] += Real(sum_gx);
      gbeta[c] += Real(sum_g);
      const Real scale = gamma_[c] * cache.inv_std[c];
      if (cache.mode == Mode::kTrain) {
        const Real mean_g = Real(sum_g / double(count));
        const Real mean_gx = Real(sum_gx / double(count));
        for_each_valid(xn, cache.widths, c, [&](std::size_t idx) {
          gx[idx] = scale * (gy[idx] - mean_g - xn[idx] * mean_gx);
        });
      } else {
        for_each_valid(xn, cache.widths, c, [&](std::size_t idx) { gx[idx] = scale * gy[idx]; });
      }
    }
    return gx;
  }

 private:
  template <typename F>
  static void for_each_valid(const Tensor<Real>& t, const std::vector<std::size_t>& widths,
                             std::size_t c, F&& f) {
    const std::size_t ch = t.dim(1), h = t.dim(2), w = t.dim(3);
    for (std::size_t s = 0; s < t.dim(0); ++s) {
      const std::size_t base = (s * ch + c) * h * w;
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < widths[s]; ++j) f(base + i * w + j);
      }
    }
  }

  Tensor<Real> gamma_, beta_, running_mean_, running_var_;
};

// ---------------------------------------------------------------------------
// Elementwise clip to [lo, hi]. Gradient passes only strictly inside.

template <typename Real>
class HardClip {
 public:
  struct Cache {
    std::vector<unsigned char> pass;
  };

  explicit HardClip(Real lo = Real(0), Real hi = Real(20)) : lo_(lo), hi_(hi) {}

  Real lo() const { return lo_; }
  Real hi() const { return hi_; }
  void collect(const std::string&, ParamList<Real>&) {}

  Tensor<Real> forward(const Tensor<Real>& x, Cache& cache, Mode = Mode::kEval) const {
    Tensor<Real> y(x.shape());
    cache.pass.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const Real v = x[i];
      cache.pass[i] = v > lo_ && v < hi_;
      y[i] = v < lo_ ? lo_ : (v > hi_ ? hi_ : v);
    }
    return y;
  }

  Tensor<Real> backward(const Tensor<Real>& gy, const Cache& cache) const {
    Tensor<Real> gx(gy.shape());
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] = cache.pass[i] ? gy[i] : Real(0);
    return gx;
  }

 private:
  Real lo_, hi_;
};

// ---------------------------------------------------------------------------
// Affine map over rows: T x in -> T x out.

template <typename Real>
class Linear {
 public:
  struct Cache {
    Tensor<Real> input;
  };

  Linear() = default;
  Linear(std::size_t in, std::size_t out)
      : weight_(make_param<Real>({out, in})), bias_(make_param<Real>({out})) {}

  std::size_t in_features() const { return weight_.dim(1); }
  std::size_t out_features() const { return weight_.dim(0); }
  Tensor<Real>& weight() { return weight_; }
  Tensor<Real>& bias() { return bias_; }

  void init(std::mt19937_64& rng) {
    init_uniform_fan_in(weight_, in_features(), rng);
    bias_.fill(Real(0));
  }

  void collect(const std::string& prefix, ParamList<Real>& out) {
    out.push_back({prefix + ".weight", &weight_, true});
    out.push_back({prefix + ".bias", &bias_, true});
  }

  Tensor<Real> forward(const Tensor<Real>& x, Cache& cache, Mode = Mode::kEval) const {
    require_rank(x, 2, "linear input");
    if (x.dim(1) != in_features()) {
      throw ShapeError("linear: expected width " + std::to_string(in_features()) + ", got shape " +
                       shape_str(x.shape()));
    }
    const std::size_t t = x.dim(0);
    Tensor<Real> y({t, out_features()});
    gemm(Trans::kNo, Trans::kYes, t, out_features(), in_features(), x.data(), weight_.data(), Real(0),
         y.data());
    for (std::size_t i = 0; i < t; ++i) {
      Real* r = y.row(i);
      for (std::size_t j = 0; j < out_features(); ++j) r[j] += bias_[j];
    }
    cache.input = x;
    check_finite(y, "linear");
    return y;
  }

  Tensor<Real> backward(const Tensor<Real>& gy, const Cache& cache) {
    const Tensor<Real>& x = cache.input;
    const std::size_t t = x.dim(0);
    require_shape(gy, {t, out_features()}, "linear backward");
    gemm(Trans::kYes, Trans::kNo, out_features(), in_features(), t, gy.data(), x.data(), Real(1),
         weight_.grad().data());
    auto gb = bias_.grad();
    for (std::size_t i = 0; i < t; ++i) {
      const Real* r = gy.row(i);
      for (std::size_t j = 0; j < out_features(); ++j) gb[j] += r[j];
    }
    Tensor<Real> gx({t, in_features()});
    gemm(Trans::kNo, Trans::kNo, t, in_features(), out_features(), gy.data(), weight_.data(), Real(0),
         gx.data());
    return gx;
  }

 private:
  Tensor<Real> weight_, bias_;
};

// ---------------------------------------------------------------------------
// Row-wise log-softmax over T x K.

template <typename Real>
class LogSoftmax {
 public:
  struct Cache {
    Tensor<Real> output;
  };

  void collect(const std::string&, ParamList<Real>&) {}

  Tensor<Real> forward(const Tensor<Real>& x, Cache& cache, Mode = Mode::kEval) const {
    require_rank(x, 2, "log_softmax input");
    const std::size_t t = x.dim(0), k = x.dim(1);
    Tensor<Real> y(x.shape());
    for (std::size_t i = 0; i < t; ++i) {
      const Real* r = x.row(i);
      Real hi = *std::max_element(r, r + k);
      double sum = 0;
      for (std::size_t j = 0; j < k; ++j) sum += std::exp(double(r[j] - hi));
      const Real lse = hi + Real(std::log(sum));
      Real* o = y.row(i);
      for (std::size_t j = 0; j < k; ++j) o[j] = r[j] - lse;
    }
    cache.output = y;
    return y;
  }

  Tensor<Real> backward(const Tensor<Real>& gy, const Cache& cache) const {
    const Tensor<Real>& y = cache.output;
    require_shape(gy, y.shape(), "log_softmax backward");
    const std::size_t t = y.dim(0), k = y.dim(1);
    Tensor<Real> gx(y.shape());
    for (std::size_t i = 0; i < t; ++i) {
      const Real* g = gy.row(i);
      const Real* o = y.row(i);
      Real sum = 0;
      for (std::size_t j = 0; j < k; ++j) sum += g[j];
      Real* d = gx.row(i);
      for (std::size_t j = 0; j < k; ++j) d[j] = g[j] - std::exp(o[j]) * sum;
    }
    return gx;
  }
};

/// Pass-through layer, the trivial reference case for gradient checks.
template <typename Real>
class Identity {
 public:
  struct Cache {};
  void collect(const std::string&, ParamList<Real>&) {}
  Tensor<Real> forward(const Tensor<Real>& x, Cache&, Mode = Mode::kEval) const { return x; }
  Tensor<Real> backward(const Tensor<Real>& gy, const Cache&) const { return gy; }
};

}  // namespace bnasr
