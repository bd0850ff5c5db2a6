#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "bnasr/layers.hpp"

namespace bnasr {

// GRU recurrence with one bias per gate:
//   z = sigmoid(Wz x + Uz h + bz)
//   r = sigmoid(Wr x + Ur h + br)
//   n = tanh(Wn x + Un (r * h) + bn)
//   h' = (1 - z) * h + z * n
// Gate blocks are stacked [z; r; n] along the first axis of wx (3h x w),
// wh (3h x h) and b (3h).
template <typename Real>
class GruCell {
 public:
  /// Per-step intermediates; row t belongs to sequence position t.
  struct Trace {
    Tensor<Real> h_prev, z, r, n, rh;
  };

  GruCell() = default;
  GruCell(std::size_t input_width, std::size_t hidden)
      : wx_(make_param<Real>({3 * hidden, input_width})),
        wh_(make_param<Real>({3 * hidden, hidden})),
        b_(make_param<Real>({3 * hidden})) {}

  std::size_t input_width() const { return wx_.dim(1); }
  std::size_t hidden() const { return wh_.dim(1); }
  Tensor<Real>& wx() { return wx_; }
  Tensor<Real>& wh() { return wh_; }
  Tensor<Real>& b() { return b_; }

  void init(std::mt19937_64& rng) {
    init_uniform_fan_in(wx_, input_width(), rng);
    init_uniform_fan_in(wh_, hidden(), rng);
    b_.fill(Real(0));
  }

  void collect(const std::string& prefix, ParamList<Real>& out) {
    out.push_back({prefix + ".wx", &wx_, true});
    out.push_back({prefix + ".wh", &wh_, true});
    out.push_back({prefix + ".b", &b_, true});
  }

  /// One recurrence step given the input projection ax = Wx x + b.
  void step(const Real* ax, const Real* h_prev, Real* h, Real* z, Real* r, Real* n, Real* rh) const {
    const std::size_t hd = hidden();
    std::vector<Real> rec(2 * hd);
    gemv(Trans::kNo, 2 * hd, hd, wh_.data(), h_prev, Real(0), rec.data());
    for (std::size_t i = 0; i < hd; ++i) {
      z[i] = sigmoid(ax[i] + rec[i]);
      r[i] = sigmoid(ax[hd + i] + rec[hd + i]);
      rh[i] = r[i] * h_prev[i];
    }
    std::vector<Real> an(ax + 2 * hd, ax + 3 * hd);
    gemv(Trans::kNo, hd, hd, wh_.data() + 2 * hd * hd, rh, Real(1), an.data());
    for (std::size_t i = 0; i < hd; ++i) {
      n[i] = std::tanh(an[i]);
      h[i] = (Real(1) - z[i]) * h_prev[i] + z[i] * n[i];
    }
  }

  /// Backward through one step. `dh` is the total gradient reaching h; writes
  /// d(ax) and d(h_prev), accumulates recurrent weight gradients.
  void step_backward(const Real* dh, const Real* h_prev, const Real* z, const Real* r, const Real* n,
                     const Real* rh, Real* dax, Real* dh_prev) {
    const std::size_t hd = hidden();
    Real* daz = dax;
    Real* dar = dax + hd;
    Real* dan = dax + 2 * hd;
    for (std::size_t i = 0; i < hd; ++i) {
      const Real dn = dh[i] * z[i];
      const Real dz = dh[i] * (n[i] - h_prev[i]);
      dh_prev[i] = dh[i] * (Real(1) - z[i]);
      dan[i] = dn * (Real(1) - n[i] * n[i]);
      daz[i] = dz * z[i] * (Real(1) - z[i]);
    }
    auto gwh = wh_.grad();
    ger(hd, hd, dan, rh, gwh.data() + 2 * hd * hd);
    std::vector<Real> drh(hd);
    gemv(Trans::kYes, hd, hd, wh_.data() + 2 * hd * hd, dan, Real(0), drh.data());
    for (std::size_t i = 0; i < hd; ++i) {
      const Real dr = drh[i] * h_prev[i];
      dh_prev[i] += drh[i] * r[i];
      dar[i] = dr * r[i] * (Real(1) - r[i]);
    }
    ger(2 * hd, hd, dax, h_prev, gwh.data());
    gemv(Trans::kYes, 2 * hd, hd, wh_.data(), dax, Real(1), dh_prev);
  }

  /// Runs the recurrence over the rows of x (T x w) from a zero state, in
  /// reverse order when `reverse`. Output row t is the state after input row t.
  Tensor<Real> run(const Tensor<Real>& x, bool reverse, Trace& trace) const {
    require_rank(x, 2, "gru input");
    if (x.dim(1) != input_width()) {
      throw ShapeError("gru: expected input width " + std::to_string(input_width()) + ", got shape " +
                       shape_str(x.shape()));
    }
    const std::size_t t_len = x.dim(0), hd = hidden();
    Tensor<Real> ax = project(x);
    Tensor<Real> out({t_len, hd});
    trace.h_prev = Tensor<Real>({t_len, hd});
    trace.z = Tensor<Real>({t_len, hd});
    trace.r = Tensor<Real>({t_len, hd});
    trace.n = Tensor<Real>({t_len, hd});
    trace.rh = Tensor<Real>({t_len, hd});
    for (std::size_t k = 0; k < t_len; ++k) {
      const std::size_t t = reverse ? t_len - 1 - k : k;
      Real* hp = trace.h_prev.row(t);
      if (k > 0) {
        const std::size_t prev = reverse ? t + 1 : t - 1;
        std::copy(out.row(prev), out.row(prev) + hd, hp);
      }
      step(ax.row(t), hp, out.row(t), trace.z.row(t), trace.r.row(t), trace.n.row(t), trace.rh.row(t));
    }
    check_finite(out, "gru");
    return out;
  }

  /// Backpropagation through time for `run`; returns d(x).
  Tensor<Real> run_backward(const Tensor<Real>& x, bool reverse, const Tensor<Real>& gout,
                            const Trace& trace) {
    const std::size_t t_len = x.dim(0), hd = hidden(), w = input_width();
    require_shape(gout, {t_len, hd}, "gru backward");
    Tensor<Real> dax({t_len, 3 * hd});
    std::vector<Real> carry(hd, Real(0)), dh(hd), dh_prev(hd);
    for (std::size_t k = t_len; k-- > 0;) {
      const std::size_t t = reverse ? t_len - 1 - k : k;
      const Real* g = gout.row(t);
      for (std::size_t i = 0; i < hd; ++i) dh[i] = g[i] + carry[i];
      step_backward(dh.data(), trace.h_prev.row(t), trace.z.row(t), trace.r.row(t), trace.n.row(t),
                    trace.rh.row(t), dax.row(t), dh_prev.data());
      carry = dh_prev;
    }
    gemm(Trans::kYes, Trans::kNo, 3 * hd, w, t_len, dax.data(), x.data(), Real(1), wx_.grad().data());
    auto gb = b_.grad();
    for (std::size_t t = 0; t < t_len; ++t) {
      const Real* d = dax.row(t);
      for (std::size_t i = 0; i < 3 * hd; ++i) gb[i] += d[i];
    }
    Tensor<Real> gx({t_len, w});
    gemm(Trans::kNo, Trans::kNo, t_len, w, 3 * hd, dax.data(), wx_.data(), Real(0), gx.data());
    return gx;
  }

 private:
  static Real sigmoid(Real v) { return Real(1) / (Real(1) + std::exp(-v)); }

  Tensor<Real> project(const Tensor<Real>& x) const {
    const std::size_t t_len = x.dim(0), hd3 = 3 * hidden();
    Tensor<Real> ax({t_len, hd3});
    gemm(Trans::kNo, Trans::kYes, t_len, hd3, input_width(), x.data(), wx_.data(), Real(0), ax.data());
    for (std::size_t t = 0; t < t_len; ++t) {
      Real* a = ax.row(t);
      for (std::size_t i = 0; i < hd3; ++i) a[i] += b_[i];
    }
    return ax;
  }

  Tensor<Real> wx_, wh_, b_;
};

/// Single GRU step exposed through the layer contract: each input row is
/// [x, h_prev] (width w + h), each output row the next state.
template <typename Real>
class GruStep {
 public:
  struct Cache {
    Tensor<Real> input;
    typename GruCell<Real>::Trace trace;
  };

  explicit GruStep(GruCell<Real>& cell) : cell_(&cell) {}

  void collect(const std::string& prefix, ParamList<Real>& out) { cell_->collect(prefix, out); }

  Tensor<Real> forward(const Tensor<Real>& x, Cache& cache, Mode = Mode::kEval) const {
    const std::size_t w = cell_->input_width(), hd = cell_->hidden();
    require_rank(x, 2, "gru step input");
    if (x.dim(1) != w + hd) throw ShapeError("gru step: expected rows of width w + h");
    const std::size_t rows = x.dim(0);
    Tensor<Real> out({rows, hd});
    auto& tr = cache.trace;
    tr.h_prev = Tensor<Real>({rows, hd});
    tr.z = tr.r = tr.n = tr.rh = Tensor<Real>({rows, hd});
    Tensor<Real> xs({rows, w});
    for (std::size_t i = 0; i < rows; ++i) {
      std::copy(x.row(i), x.row(i) + w, xs.row(i));
      std::copy(x.row(i) + w, x.row(i) + w + hd, tr.h_prev.row(i));
    }
    Tensor<Real> ax = project(xs);
    for (std::size_t i = 0; i < rows; ++i) {
      cell_->step(ax.row(i), tr.h_prev.row(i), out.row(i), tr.z.row(i), tr.r.row(i), tr.n.row(i),
                  tr.rh.row(i));
    }
    cache.input = xs;
    return out;
  }

  Tensor<Real> backward(const Tensor<Real>& gy, const Cache& cache) {
    const std::size_t w = cell_->input_width(), hd = cell_->hidden();
    const std::size_t rows = gy.dim(0);
    const auto& tr = cache.trace;
    Tensor<Real> dax({rows, 3 * hd});
    Tensor<Real> gx({rows, w + hd});
    std::vector<Real> dh_prev(hd);
    for (std::size_t i = 0; i < rows; ++i) {
      cell_->step_backward(gy.row(i), tr.h_prev.row(i), tr.z.row(i), tr.r.row(i), tr.n.row(i),
                           tr.rh.row(i), dax.row(i), dh_prev.data());
      std::copy(dh_prev.begin(), dh_prev.end(), gx.row(i) + w);
    }
    gemm(Trans::kYes, Trans::kNo, 3 * hd, w, rows, dax.data(), cache.input.data(), Real(1),
         cell_->wx().grad().data());
    auto gb = cell_->b().grad();
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < 3 * hd; ++j) gb[j] += dax(i, j);
    }
    Tensor<Real> gxs({rows, w});
    gemm(Trans::kNo, Trans::kNo, rows, w, 3 * hd, dax.data(), cell_->wx().data(), Real(0), gxs.data());
    for (std::size_t i = 0; i < rows; ++i) std::copy(gxs.row(i), gxs.row(i) + w, gx.row(i));
    return gx;
  }

 private:
  Tensor<Real> project(const Tensor<Real>& xs) const {
    const std::size_t rows = xs.dim(0), hd3 = 3 * cell_->hidden();
    Tensor<Real> ax({rows, hd3});
    gemm(Trans::kNo, Trans::kYes, rows, hd3, cell_->input_width(), xs.data(), cell_->wx().data(),
         Real(0), ax.data());
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < hd3; ++j) ax(i, j) += cell_->b()[j];
    }
    return ax;
  }

  GruCell<Real>* cell_;
};

/// Bidirectional GRU over a T x w sequence; the two directions' per-step
/// outputs are summed, so the output is T x h.
template <typename Real>
class BiGru {
 public:
  struct Cache {
    Tensor<Real> input;
    typename GruCell<Real>::Trace fwd, bwd;
  };

  BiGru() = default;
  BiGru(std::size_t input_width, std::size_t hidden)
      : forward_(input_width, hidden), backward_(input_width, hidden) {}

  std::size_t input_width() const { return forward_.input_width(); }
  std::size_t hidden() const { return forward_.hidden(); }
  GruCell<Real>& forward_cell() { return forward_; }
  GruCell<Real>& backward_cell() { return backward_; }

  void init(std::mt19937_64& rng) {
    forward_.init(rng);
    backward_.init(rng);
  }

  void collect(const std::string& prefix, ParamList<Real>& out) {
    forward_.collect(prefix + ".fwd", out);
    backward_.collect(prefix + ".bwd", out);
  }

  Tensor<Real> forward(const Tensor<Real>& x, Cache& cache, Mode = Mode::kEval) const {
    Tensor<Real> out = forward_.run(x, false, cache.fwd);
    Tensor<Real> back = backward_.run(x, true, cache.bwd);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += back[i];
    cache.input = x;
    return out;
  }

  Tensor<Real> backward(const Tensor<Real>& gy, const Cache& cache) {
    Tensor<Real> gx = forward_.run_backward(cache.input, false, gy, cache.fwd);
    Tensor<Real> gb = backward_.run_backward(cache.input, true, gy, cache.bwd);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gb[i];
    return gx;
  }

 private:
  GruCell<Real> forward_, backward_;
};

}  // namespace bnasr
