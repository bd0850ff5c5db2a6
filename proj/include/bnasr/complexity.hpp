#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "bnasr/model.hpp"

namespace bnasr {

/// What gets counted as a floating-point operation. Every op class is kept
/// separate so that other published conventions can be rebuilt from a report.
struct FlopConvention {
  std::uint64_t flops_per_mac = 2;
  std::uint64_t bias_ops = 1;        // per conv/linear output element
  std::uint64_t batchnorm_ops = 2;   // per element, folded eval form (scale + shift)
  std::uint64_t activation_ops = 1;  // per element, hard clip
  // Per GRU step and hidden unit, beyond the matrix products: 3 bias adds,
  // 2 sigmoids, 1 tanh, r*h, and the 3-op interpolation (1-z)h + zn.
  std::uint64_t gru_elementwise_ops = 10;
  // Skipping taps that land in zero padding makes counts slightly
  // sub-linear at the sequence edges; off by default.
  bool skip_padding_taps = false;
};

struct LayerCost {
  std::string name;
  std::string kind;
  std::string output;  // e.g. "32x41x150"
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
  std::uint64_t flops = 0;
};

struct ComplexityReport {
  std::string subject;
  std::size_t input_bins = kFeatureBins;
  std::size_t input_frames = 0;
  std::size_t output_frames = 0;
  FlopConvention convention;
  std::vector<LayerCost> layers;

  std::uint64_t total_params() const { return sum(&LayerCost::params); }
  std::uint64_t total_macs() const { return sum(&LayerCost::macs); }
  std::uint64_t total_flops() const { return sum(&LayerCost::flops); }

 private:
  std::uint64_t sum(std::uint64_t LayerCost::*field) const {
    std::uint64_t s = 0;
    for (const auto& l : layers) s += l.*field;
    return s;
  }
};

inline constexpr std::size_t kReportFrames = 300;

namespace detail {

// Number of kernel offsets along one axis that land inside the input, summed
// over all output positions.
inline std::uint64_t in_bounds_taps(std::size_t n, std::size_t k, std::size_t s, std::size_t p) {
  const std::size_t out = Conv2dGeometry::out_extent(n, k, s, p, "axis");
  std::uint64_t taps = 0;
  for (std::size_t o = 0; o < out; ++o) {
    for (std::size_t i = 0; i < k; ++i) {
      const std::ptrdiff_t x = std::ptrdiff_t(o * s + i) - std::ptrdiff_t(p);
      taps += x >= 0 && x < std::ptrdiff_t(n);
    }
  }
  return taps;
}

inline std::string dims(std::initializer_list<std::size_t> d) {
  std::string s;
  for (std::size_t v : d) s += (s.empty() ? "" : "x") + std::to_string(v);
  return s;
}

}  // namespace detail

inline std::uint64_t conv_stage_params(const ConvLayerSpec& l) {
  return std::uint64_t(l.kernel_h) * l.kernel_w * l.in_channels * l.out_channels + l.out_channels +
         2 * l.out_channels;
}

/// Weights, biases and batch-norm scale/shift of a convolution block.
inline std::uint64_t count_params(const ConvBlockSpec& block) {
  std::uint64_t n = 0;
  for (const auto& l : block.layers) n += conv_stage_params(l);
  return n;
}

inline std::uint64_t gru_params(std::size_t width, std::size_t hidden) {
  return 2 * 3 * (std::uint64_t(width) * hidden + std::uint64_t(hidden) * hidden + hidden);
}

inline std::uint64_t linear_params(std::size_t in, std::size_t out) { return std::uint64_t(in) * out + out; }

/// Per-layer costs of a convolution block on a bins x frames input:
/// a conv, batch-norm and clip entry per stage.
inline std::vector<LayerCost> block_costs(const ConvBlockSpec& block, std::size_t bins, std::size_t frames,
                                          const FlopConvention& conv = {}) {
  if (frames == 0 || bins == 0) throw ConfigError("complexity: input must have at least one bin and frame");
  validate(block);
  std::vector<LayerCost> out;
  std::size_t h = bins, w = frames;
  for (std::size_t i = 0; i < block.layers.size(); ++i) {
    const auto& l = block.layers[i];
    const auto g = l.geometry();
    const std::size_t oh = g.out_h(h), ow = g.out_w(w);
    const std::uint64_t elems = std::uint64_t(l.out_channels) * oh * ow;
    std::uint64_t macs;
    if (conv.skip_padding_taps) {
      macs = detail::in_bounds_taps(h, l.kernel_h, l.stride_h, l.pad_h) *
             detail::in_bounds_taps(w, l.kernel_w, l.stride_w, l.pad_w) * l.in_channels * l.out_channels;
    } else {
      macs = elems * l.kernel_h * l.kernel_w * l.in_channels;
    }
    const std::string shape = detail::dims({l.out_channels, oh, ow});
    const std::string idx = std::to_string(i);
    out.push_back({"conv." + idx, "conv2d " + std::to_string(l.kernel_h) + "x" + std::to_string(l.kernel_w), shape,
                   std::uint64_t(l.kernel_h) * l.kernel_w * l.in_channels * l.out_channels + l.out_channels, macs,
                   conv.flops_per_mac * macs + conv.bias_ops * elems});
    out.push_back({"bn." + idx, "batchnorm", shape, 2 * std::uint64_t(l.out_channels), 0, conv.batchnorm_ops * elems});
    out.push_back({"clip." + idx, "hardclip", shape, 0, 0, conv.activation_ops * elems});
    h = oh;
    w = ow;
  }
  return out;
}

inline std::uint64_t count_flops(const ConvBlockSpec& block, std::size_t bins, std::size_t frames,
                                 const FlopConvention& conv = {}) {
  std::uint64_t f = 0;
  for (const auto& l : block_costs(block, bins, frames, conv)) f += l.flops;
  return f;
}

inline std::uint64_t count_macs(const ConvBlockSpec& block, std::size_t bins, std::size_t frames,
                                const FlopConvention& conv = {}) {
  std::uint64_t m = 0;
  for (const auto& l : block_costs(block, bins, frames, conv)) m += l.macs;
  return m;
}

inline ComplexityReport report_block(const ConvBlockSpec& block, std::size_t frames = kReportFrames,
                                     std::size_t bins = kFeatureBins, const FlopConvention& conv = {}) {
  ComplexityReport r;
  r.subject = block.name;
  r.input_bins = bins;
  r.input_frames = frames;
  r.convention = conv;
  r.layers = block_costs(block, bins, frames, conv);
  r.output_frames = block.out_frames(frames);
  return r;
}

/// Whole network: conv block, BiGRU stack and output projection (the
/// log-softmax head is not counted).
inline ComplexityReport report(const ModelConfig& config, std::size_t alphabet_size,
                               std::size_t frames = kReportFrames, std::size_t bins = kFeatureBins,
                               const FlopConvention& conv = {}) {
  const ConvBlockSpec block = block_by_name(config.block);
  ComplexityReport r = report_block(block, frames, bins, conv);
  r.subject = config.name;
  const std::uint64_t t = r.output_frames;
  std::size_t width = block.feature_width(bins);
  for (std::size_t i = 0; i < config.rnn_layers; ++i) {
    const std::size_t h = config.rnn_hidden;
    const std::uint64_t macs = 2 * t * 3 * (std::uint64_t(width) * h + std::uint64_t(h) * h);
    const std::uint64_t flops = conv.flops_per_mac * macs + 2 * t * conv.gru_elementwise_ops * h + t * h;
    r.layers.push_back({"rnn." + std::to_string(i), "bigru " + std::to_string(width) + "->" + std::to_string(h),
                        detail::dims({std::size_t(t), h}), gru_params(width, h), macs, flops});
    width = h;
  }
  const std::size_t classes = alphabet_size + 1;
  const std::uint64_t macs = t * width * classes;
  r.layers.push_back({"fc", "linear " + std::to_string(width) + "->" + std::to_string(classes),
                      detail::dims({std::size_t(t), classes}), linear_params(width, classes), macs,
                      conv.flops_per_mac * macs + conv.bias_ops * t * classes});
  return r;
}

/// Aligned table followed by a totals line.
inline std::string format_table(const ComplexityReport& r) {
  std::ostringstream out;
  out << r.subject << " on " << r.input_bins << " bins x " << r.input_frames << " frames (" << r.output_frames
      << " output frames)\n";
  char line[160];
  std::snprintf(line, sizeof(line), "%-8s %-22s %-14s %12s %16s %16s\n", "layer", "kind", "output", "params", "MACs",
                "FLOPs");
  out << line;
  for (const auto& l : r.layers) {
    std::snprintf(line, sizeof(line), "%-8s %-22s %-14s %12llu %16llu %16llu\n", l.name.c_str(), l.kind.c_str(),
                  l.output.c_str(), static_cast<unsigned long long>(l.params), static_cast<unsigned long long>(l.macs),
                  static_cast<unsigned long long>(l.flops));
    out << line;
  }
  std::snprintf(line, sizeof(line), "%-8s %-22s %-14s %12llu %16llu %16llu\n", "total", "", "",
                static_cast<unsigned long long>(r.total_params()), static_cast<unsigned long long>(r.total_macs()),
                static_cast<unsigned long long>(r.total_flops()));
  out << line;
  return out.str();
}

/// One key=value line per fact, for scripts.
inline std::string format_key_values(const ComplexityReport& r) {
  std::ostringstream out;
  const auto& c = r.convention;
  out << "subject=" << r.subject << '\n'
      << "input_bins=" << r.input_bins << '\n'
      << "input_frames=" << r.input_frames << '\n'
      << "output_frames=" << r.output_frames << '\n'
      << "convention.flops_per_mac=" << c.flops_per_mac << '\n'
      << "convention.bias_ops=" << c.bias_ops << '\n'
      << "convention.batchnorm_ops=" << c.batchnorm_ops << '\n'
      << "convention.activation_ops=" << c.activation_ops << '\n'
      << "convention.gru_elementwise_ops=" << c.gru_elementwise_ops << '\n'
      << "convention.skip_padding_taps=" << (c.skip_padding_taps ? 1 : 0) << '\n';
  for (const auto& l : r.layers) {
    out << "layer." << l.name << ".params=" << l.params << '\n'
        << "layer." << l.name << ".macs=" << l.macs << '\n'
        << "layer." << l.name << ".flops=" << l.flops << '\n';
  }
  out << "params_total=" << r.total_params() << '\n'
      << "macs_total=" << r.total_macs() << '\n'
      << "flops_total=" << r.total_flops() << '\n';
  return out.str();
}

}  // namespace bnasr
