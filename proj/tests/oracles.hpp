#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance run. Each one is brute force on purpose.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "bnasr/complexity.hpp"
#include "bnasr/ctc.hpp"
#include "bnasr/gradcheck.hpp"
#include "bnasr/lm.hpp"
#include "bnasr/model.hpp"

namespace bnasr::oracle {

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = d(rng);
  return t;
}

// ---- CTC ----

inline Tensor<double> random_log_probs(std::size_t t_len, std::size_t k, std::mt19937_64& rng, double scale = 1.5) {
  Tensor<double> t({t_len, k});
  std::normal_distribution<double> normal(0.0, scale);
  for (std::size_t i = 0; i < t_len; ++i) {
    double lse = kNegInf<double>;
    for (std::size_t c = 0; c < k; ++c) lse = log_add_exp(lse, t(i, c) = normal(rng));
    for (std::size_t c = 0; c < k; ++c) t(i, c) -= lse;
  }
  return t;
}

inline Labels collapse(const Labels& path) {
  Labels out;
  int prev = -1;
  for (int c : path) {
    if (c != prev && c != 0) out.push_back(c);
    prev = c;
  }
  return out;
}

// P(labeling | x) for every labeling reachable by some frame-level path.
inline std::map<Labels, double> enumerate_paths(const Tensor<double>& lp) {
  const std::size_t t_len = lp.dim(0), k = lp.dim(1);
  std::map<Labels, double> out;
  Labels path(t_len, 0);
  std::size_t total = 1;
  for (std::size_t t = 0; t < t_len; ++t) total *= k;
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t rest = code;
    double logp = 0;
    for (std::size_t t = 0; t < t_len; ++t) {
      path[t] = int(rest % k);
      rest /= k;
      logp += lp(t, std::size_t(path[t]));
    }
    out[collapse(path)] += std::exp(logp);
  }
  return out;
}

// Every label sequence over 1..k-1 of length up to n.
inline std::vector<Labels> all_sequences(std::size_t k, std::size_t n) {
  std::vector<Labels> out{{}};
  std::vector<Labels> frontier{{}};
  for (std::size_t len = 1; len <= n; ++len) {
    std::vector<Labels> grown;
    for (const auto& s : frontier) {
      for (std::size_t c = 1; c < k; ++c) {
        Labels e = s;
        e.push_back(int(c));
        grown.push_back(e);
      }
    }
    out.insert(out.end(), grown.begin(), grown.end());
    frontier = std::move(grown);
  }
  return out;
}

// Highest-scoring labeling by exact probability plus an optional bonus.
inline Labels exhaustive_best(const Tensor<double>& lp, const std::function<double(const Labels&)>& bonus) {
  Labels best;
  double best_score = kNegInf<double>;
  for (const auto& [labels, p] : enumerate_paths(lp)) {
    const double s = std::log(p) + bonus(labels);
    if (s > best_score) {
      best_score = s;
      best = labels;
    }
  }
  return best;
}

// Max relative error of the CTC gradient against central differences.
inline double ctc_gradient_error(Tensor<double> lp, const Labels& target, double eps = 1e-5) {
  const auto r = ctc_loss(lp, target);
  double worst = 0;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    const double saved = lp[i];
    lp[i] = saved + eps;
    const double plus = ctc_loss(lp, target).loss;
    lp[i] = saved - eps;
    const double minus = ctc_loss(lp, target).loss;
    lp[i] = saved;
    worst = std::max(worst, relative_error(r.grad[i], (plus - minus) / (2 * eps)));
  }
  return worst;
}

// ---- complexity ----

struct Tally {
  std::uint64_t macs = 0, flops = 0;
};

// Walks every output element of every layer and every kernel tap.
inline Tally enumerate_flops(const ConvBlockSpec& block, std::size_t bins, std::size_t frames,
                             const FlopConvention& c) {
  Tally t;
  long h = long(bins), w = long(frames);
  for (const auto& l : block.layers) {
    const long oh = (h + 2 * long(l.pad_h) - long(l.kernel_h)) / long(l.stride_h) + 1;
    const long ow = (w + 2 * long(l.pad_w) - long(l.kernel_w)) / long(l.stride_w) + 1;
    for (std::size_t co = 0; co < l.out_channels; ++co) {
      for (long y = 0; y < oh; ++y) {
        for (long x = 0; x < ow; ++x) {
          for (std::size_t ci = 0; ci < l.in_channels; ++ci) {
            for (long i = 0; i < long(l.kernel_h); ++i) {
              for (long j = 0; j < long(l.kernel_w); ++j) {
                const long iy = y * long(l.stride_h) + i - long(l.pad_h);
                const long ix = x * long(l.stride_w) + j - long(l.pad_w);
                const bool inside = iy >= 0 && iy < h && ix >= 0 && ix < w;
                if (inside || !c.skip_padding_taps) {
                  ++t.macs;
                  t.flops += c.flops_per_mac;
                }
              }
            }
          }
          t.flops += c.bias_ops + c.batchnorm_ops + c.activation_ops;
        }
      }
    }
    h = oh;
    w = ow;
  }
  return t;
}

inline ConvBlockSpec random_block(std::mt19937_64& rng, std::size_t bins, std::size_t frames) {
  for (;;) {
    ConvBlockSpec b{"random", {}};
    std::size_t ch = 1, h = bins, w = frames;
    const std::size_t n = 1 + rng() % 4;
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) {
      ConvLayerSpec l{ch, 1 + rng() % 6, 1 + rng() % 7, 1 + rng() % 5, 1 + rng() % 3, 1 + rng() % 3, 0, 0};
      l.pad_h = rng() % l.kernel_h;
      l.pad_w = rng() % l.kernel_w;
      if (l.kernel_h > h + 2 * l.pad_h || l.kernel_w > w + 2 * l.pad_w) {
        ok = false;
        break;
      }
      h = l.geometry().out_h(h);
      w = l.geometry().out_w(w);
      ch = l.out_channels;
      b.layers.push_back(l);
    }
    if (ok) return b;
  }
}

// ---- alignment ----

using Triple = std::tuple<std::size_t, std::size_t, std::size_t>;  // S, D, I

// Every alignment of ref against hyp, as (S, D, I) counts. Matches cost 0.
inline void all_alignments(const std::vector<int>& r, const std::vector<int>& h, std::size_t i, std::size_t j,
                           Triple acc, std::set<Triple>& out) {
  if (i == r.size() && j == h.size()) {
    out.insert(acc);
    return;
  }
  auto [s, d, ins] = acc;
  if (i < r.size() && j < h.size()) all_alignments(r, h, i + 1, j + 1, {s + (r[i] != h[j]), d, ins}, out);
  if (i < r.size()) all_alignments(r, h, i + 1, j, {s, d + 1, ins}, out);
  if (j < h.size()) all_alignments(r, h, i, j + 1, {s, d, ins + 1}, out);
}

// (S, D, I) of every minimum-cost alignment, built over suffixes.
inline std::set<Triple> optimal_alignments(const std::vector<int>& r, const std::vector<int>& h) {
  const std::size_t n = r.size(), m = h.size();
  std::vector<std::size_t> cost((n + 1) * (m + 1));
  std::vector<std::set<Triple>> sets((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) { return i * (m + 1) + j; };
  for (std::size_t i = n + 1; i-- > 0;) {
    for (std::size_t j = m + 1; j-- > 0;) {
      auto& out = sets[at(i, j)];
      if (i == n && j == m) {
        out.insert({0, 0, 0});
        continue;
      }
      std::size_t best = SIZE_MAX;
      std::vector<std::pair<std::size_t, Triple>> moves;  // (child index, delta)
      if (i < n && j < m) moves.push_back({at(i + 1, j + 1), {std::size_t(r[i] != h[j]), 0, 0}});
      if (i < n) moves.push_back({at(i + 1, j), {0, 1, 0}});
      if (j < m) moves.push_back({at(i, j + 1), {0, 0, 1}});
      for (const auto& [k, d] : moves) {
        best = std::min(best, cost[k] + std::get<0>(d) + std::get<1>(d) + std::get<2>(d));
      }
      cost[at(i, j)] = best;
      for (const auto& [k, d] : moves) {
        if (cost[k] + std::get<0>(d) + std::get<1>(d) + std::get<2>(d) != best) continue;
        for (const auto& [s, dd, ii] : sets[k]) out.insert({s + std::get<0>(d), dd + std::get<1>(d), ii + std::get<2>(d)});
      }
    }
  }
  return sets[0];
}

// Base-3 digits of code, least significant first.
inline std::vector<int> sequence(std::size_t code, std::size_t len) {
  std::vector<int> v(len);
  for (std::size_t k = 0; k < len; ++k, code /= 3) v[k] = int(code % 3);
  return v;
}

inline std::size_t power3(std::size_t n) {
  std::size_t p = 1;
  while (n--) p *= 3;
  return p;
}

// ---- language model ----

using Corpus = std::vector<std::vector<std::string>>;

inline Corpus random_corpus(std::mt19937_64& rng, std::size_t vocab, std::size_t lines) {
  Corpus out;
  std::geometric_distribution<int> len(0.3);
  // Skewed word choice so that short histories repeat.
  std::vector<double> weights;
  for (std::size_t i = 0; i < vocab; ++i) weights.push_back(1.0 / double(i + 1));
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  for (std::size_t i = 0; i < lines; ++i) {
    std::vector<std::string> s;
    const int n = 1 + len(rng);
    for (int j = 0; j < n; ++j) s.push_back("w" + std::to_string(pick(rng)));
    out.push_back(std::move(s));
  }
  return out;
}

// Words a model can predict: everything except <s>.
inline std::vector<std::string> predictable(const NGramModel& m) {
  std::vector<std::string> out;
  for (const auto& w : m.words()) {
    if (w != kSentenceStart) out.push_back(w);
  }
  return out;
}

// Sum of P(w | ctx) over the predictable vocabulary.
inline double mass(const NGramModel& m, const std::vector<std::string>& ctx) {
  double s = 0;
  for (const auto& w : predictable(m)) s += std::pow(10.0, m.score(ctx, w));
  return s;
}

// ---- full network ----

struct NetworkCheck {
  double worst = 0;
  std::string worst_at;
  std::size_t checked = 0;
  // Entries whose perturbation crosses a hard-clip kink, where no derivative exists.
  std::size_t kinks = 0;
  // Conv biases feed batch-norm, so both gradients must vanish there.
  double max_conv_bias_grad = 0, max_conv_bias_numeric = 0;
};

// CTC loss over a two-utterance batch in training mode, backpropagated through
// recurrent, normalization and convolution layers, against central differences
// on up to `per_tensor` entries of every trainable tensor. With kinks excluded
// exactly, a larger step keeps rounding noise off entries whose gradient is tiny.
inline NetworkCheck check_network_gradient(std::uint64_t seed, std::size_t per_tensor = 12, double eps = 1e-4) {
  std::mt19937_64 rng(seed);
  auto net = build_model<double>(custom_config("BlockA", 2, 5), 4, 21);
  for (auto& p : net.parameters()) {
    if (p.trainable && p.name.find(".b") != std::string::npos) {
      for (auto& v : p.tensor->values()) v = std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
    }
  }
  Tensor<double> x({2, 1, kFeatureBins, 12});
  std::normal_distribution<double> normal;
  for (auto& v : x.values()) v = normal(rng);
  // Second utterance is shorter; its tail must not matter.
  const std::vector<std::size_t> widths{12, 9};
  const std::vector<Labels> targets{{1, 2, 2}, {3}};
  auto loss_of = [&](Network<double>::Cache& cache, std::vector<Tensor<double>>* grads) {
    const auto lp = net.forward_tensor(x, widths, cache, Mode::kTrain);
    double total = 0;
    for (std::size_t s = 0; s < lp.size(); ++s) {
      auto r = ctc_loss(lp[s], targets[s]);
      total += r.loss;
      if (grads) grads->push_back(std::move(r.grad));
    }
    return total;
  };
  net.zero_grad();
  Network<double>::Cache cache;
  std::vector<Tensor<double>> grads;
  loss_of(cache, &grads);
  net.backward(grads, cache);

  NetworkCheck out;
  for (auto& p : net.parameters()) {
    if (!p.trainable) continue;
    auto values = p.tensor->values();
    const auto grad = p.tensor->grad();
    std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
    const std::size_t samples = std::min(values.size(), per_tensor);
    for (std::size_t k = 0; k < samples; ++k) {
      const std::size_t i = samples == values.size() ? k : pick(rng);
      const double saved = values[i];
      Network<double>::Cache up, down;
      values[i] = saved + eps;
      const double plus = loss_of(up, nullptr);
      values[i] = saved - eps;
      const double minus = loss_of(down, nullptr);
      values[i] = saved;
      const double numeric = (plus - minus) / (2 * eps);
      // Some clip input changed side between the two evaluations: the loss
      // has a kink inside the interval and the difference quotient is meaningless.
      bool crossed = false;
      for (std::size_t s = 0; s < up.conv.size(); ++s) crossed |= up.conv[s].clip.pass != down.conv[s].clip.pass;
      if (crossed) {
        ++out.kinks;
        continue;
      }
      ++out.checked;
      if (p.name.rfind("conv.", 0) == 0 && p.name.find(".bias") != std::string::npos) {
        out.max_conv_bias_grad = std::max(out.max_conv_bias_grad, std::abs(double(grad[i])));
        out.max_conv_bias_numeric = std::max(out.max_conv_bias_numeric, std::abs(numeric));
        continue;
      }
      const double err = relative_error(grad[i], numeric);
      if (err > out.worst) {
        out.worst = err;
        out.worst_at = p.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return out;
}

}  // namespace bnasr::oracle
