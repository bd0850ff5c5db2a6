#pragma once

#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "bnasr/features.hpp"
#include "bnasr/gru.hpp"
#include "bnasr/layers.hpp"

namespace bnasr {

/// One convolution layer; kernel and stride are (frequency, time).
struct ConvLayerSpec {
  std::size_t in_channels, out_channels;
  std::size_t kernel_h, kernel_w;
  std::size_t stride_h, stride_w;
  std::size_t pad_h, pad_w;

  Conv2dGeometry geometry() const {
    return {in_channels, out_channels, kernel_h, kernel_w, stride_h, stride_w, pad_h, pad_w};
  }
};

/// Convolution front end. Every layer is followed by batch norm and a hard clip.
struct ConvBlockSpec {
  std::string name;
  std::vector<ConvLayerSpec> layers;

  std::size_t out_channels() const { return layers.back().out_channels; }

  /// Frequency extent after the block for `bins` input bins.
  std::size_t out_bins(std::size_t bins = kFeatureBins) const {
    for (const auto& l : layers) bins = l.geometry().out_h(bins);
    return bins;
  }
  /// Time extent after the block for `frames` input frames.
  std::size_t out_frames(std::size_t frames) const {
    for (const auto& l : layers) frames = l.geometry().out_w(frames);
    return frames;
  }
  /// Width of the per-frame vector handed to the recurrent stack.
  std::size_t feature_width(std::size_t bins = kFeatureBins) const { return out_channels() * out_bins(bins); }
};

inline void validate(const ConvBlockSpec& block) {
  if (block.layers.empty()) throw ConfigError("block " + block.name + " has no layers");
  std::size_t channels = 1;
  for (std::size_t i = 0; i < block.layers.size(); ++i) {
    const auto& l = block.layers[i];
    const std::string where = block.name + " layer " + std::to_string(i);
    if (!l.in_channels || !l.out_channels || !l.kernel_h || !l.kernel_w || !l.stride_h || !l.stride_w) {
      throw ConfigError(where + ": extents must be positive");
    }
    if (l.pad_h >= l.kernel_h || l.pad_w >= l.kernel_w) throw ConfigError(where + ": padding must be below kernel size");
    if (l.in_channels != channels) throw ConfigError(where + ": channel chain broken");
    channels = l.out_channels;
  }
}

inline ConvBlockSpec ds2_block() {
  return {"DS2", {{1, 32, 41, 11, 2, 2, 20, 5}, {32, 32, 21, 11, 2, 1, 10, 5}}};
}

inline ConvBlockSpec block_a() {
  return {"BlockA", {{1, 32, 7, 3, 2, 2, 3, 1}, {32, 32, 3, 3, 1, 1, 1, 1}}};
}

inline ConvBlockSpec block_b() {
  return {"BlockB",
          {{1, 32, 7, 3, 2, 2, 3, 1}, {32, 32, 3, 3, 1, 1, 1, 1}, {32, 64, 3, 3, 1, 1, 1, 1},
           {64, 64, 3, 3, 1, 1, 1, 1}}};
}

inline ConvBlockSpec block_by_name(std::string_view name) {
  if (name == "DS2") return ds2_block();
  if (name == "BlockA") return block_a();
  if (name == "BlockB") return block_b();
  throw ConfigError("unknown convolution block '" + std::string(name) + "' (expected DS2, BlockA or BlockB)");
}

struct ModelConfig {
  std::string name;
  std::string block;
  std::size_t rnn_layers = 0;
  std::size_t rnn_hidden = 0;
  bool custom = false;
};

/// The eight evaluated configurations.
inline const std::vector<ModelConfig>& registered_configs() {
  static const std::vector<ModelConfig> configs{
      {"A-3GRU", "BlockA", 3, 512},       {"A-4GRU", "BlockA", 4, 512},
      {"A-5GRU", "BlockA", 5, 512},       {"B-3GRU", "BlockB", 3, 512},
      {"B-4GRU", "BlockB", 4, 512},       {"B-5GRU", "BlockB", 5, 512},
      {"B-5GRU-Large", "BlockB", 5, 800}, {"2CNN-5GRU", "DS2", 5, 800},
  };
  return configs;
}

inline ModelConfig find_config(std::string_view name) {
  for (const auto& c : registered_configs()) {
    if (c.name == name) return c;
  }
  throw ConfigError("unknown model config '" + std::string(name) + "'");
}

/// Unregistered configuration, marked as custom.
inline ModelConfig custom_config(std::string block, std::size_t rnn_layers, std::size_t rnn_hidden) {
  block_by_name(block);
  if (rnn_layers == 0 || rnn_hidden == 0) throw ConfigError("custom config needs at least one GRU layer and unit");
  ModelConfig c{"custom:" + block + "-" + std::to_string(rnn_layers) + "x" + std::to_string(rnn_hidden), block,
                rnn_layers, rnn_hidden, true};
  return c;
}

/// Parses "custom:<block>-<layers>x<hidden>" or looks up a registered name.
inline ModelConfig resolve_config(std::string_view name) {
  constexpr std::string_view prefix = "custom:";
  if (name.substr(0, prefix.size()) != prefix) return find_config(name);
  const std::string rest(name.substr(prefix.size()));
  const auto dash = rest.rfind('-'), x = rest.rfind('x');
  if (dash == std::string::npos || x == std::string::npos || x < dash) {
    throw ConfigError("malformed custom config '" + std::string(name) + "'");
  }
  try {
    return custom_config(rest.substr(0, dash), std::stoul(rest.substr(dash + 1, x - dash - 1)),
                         std::stoul(rest.substr(x + 1)));
  } catch (const std::logic_error&) {
    throw ConfigError("malformed custom config '" + std::string(name) + "'");
  }
}

/// Convolution block -> per-frame flatten -> BiGRU stack -> linear -> log-softmax.
template <typename Real>
class Network {
 public:
  struct ConvStageCache {
    typename Conv2d<Real>::Cache conv;
    typename BatchNorm2d<Real>::Cache bn;
    typename HardClip<Real>::Cache clip;
    std::vector<std::size_t> widths;
  };
  struct UtteranceCache {
    std::vector<typename BiGru<Real>::Cache> rnn;
    typename Linear<Real>::Cache fc;
    typename LogSoftmax<Real>::Cache softmax;
  };
  struct Cache {
    std::vector<ConvStageCache> conv;
    std::vector<UtteranceCache> utterances;
    Shape conv_out_shape;
    std::vector<std::size_t> frames;  // output frames per utterance
  };

  Network() = default;
  Network(ModelConfig config, std::size_t alphabet_size)
      : config_(std::move(config)), block_(block_by_name(config_.block)), num_classes_(alphabet_size + 1) {
    validate(block_);
    if (config_.rnn_layers == 0 || config_.rnn_hidden == 0) throw ConfigError("model needs a recurrent stack");
    for (const auto& l : block_.layers) {
      conv_.emplace_back(l.geometry());
      bn_.emplace_back(l.out_channels);
    }
    std::size_t width = block_.feature_width();
    for (std::size_t i = 0; i < config_.rnn_layers; ++i) {
      rnn_.emplace_back(width, config_.rnn_hidden);
      width = config_.rnn_hidden;
    }
    fc_ = Linear<Real>(width, num_classes_);
  }

  const ModelConfig& config() const { return config_; }
  const ConvBlockSpec& block() const { return block_; }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t output_frames(std::size_t input_frames) const { return block_.out_frames(input_frames); }
  Linear<Real>& output_layer() { return fc_; }
  std::vector<BiGru<Real>>& rnn() { return rnn_; }

  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& c : conv_) c.init(rng);
    for (auto& r : rnn_) r.init(rng);
    fc_.init(rng);
  }

  /// All tensors in checkpoint order; running statistics are non-trainable.
  ParamList<Real> parameters() {
    ParamList<Real> out;
    for (std::size_t i = 0; i < conv_.size(); ++i) {
      conv_[i].collect("conv." + std::to_string(i), out);
      bn_[i].collect("bn." + std::to_string(i), out);
    }
    for (std::size_t i = 0; i < rnn_.size(); ++i) rnn_[i].collect("rnn." + std::to_string(i), out);
    fc_.collect("fc", out);
    return out;
  }

  void collect(const std::string& prefix, ParamList<Real>& out) {
    for (auto& p : parameters()) out.push_back({prefix + "." + p.name, p.tensor, p.trainable});
  }

  void zero_grad() {
    for (auto& p : parameters()) {
      if (p.trainable) p.tensor->zero_grad();
    }
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto& p : parameters()) {
      if (p.trainable) n += p.tensor->size();
    }
    return n;
  }

  /// Log-probabilities (frames'' x classes) for every utterance of the batch.
  std::vector<Tensor<Real>> forward(const std::vector<const Spectrogram*>& batch, Cache& cache, Mode mode) {
    if (batch.empty()) throw ShapeError("forward: empty batch");
    const std::size_t n = batch.size();
    std::size_t t_max = 0;
    std::vector<std::size_t> widths(n);
    for (std::size_t s = 0; s < n; ++s) {
      if (batch[s]->values.size() != batch[s]->frames * kFeatureBins) {
        throw ShapeError("forward: spectrogram must have 81 bins per frame");
      }
      widths[s] = batch[s]->frames;
      t_max = std::max(t_max, widths[s]);
    }
    Tensor<Real> x({n, 1, kFeatureBins, t_max});
    for (std::size_t s = 0; s < n; ++s) {
      Real* dst = x.data() + s * kFeatureBins * t_max;
      for (std::size_t t = 0; t < batch[s]->frames; ++t) {
        for (std::size_t b = 0; b < kFeatureBins; ++b) dst[b * t_max + t] = Real(batch[s]->at(t, b));
      }
    }
    return forward_tensor(x, widths, cache, mode);
  }

  /// Same as `forward` on an N x 1 x 81 x T tensor with per-utterance frame counts.
  std::vector<Tensor<Real>> forward_tensor(const Tensor<Real>& input, std::vector<std::size_t> widths,
                                           Cache& cache, Mode mode) {
    require_rank(input, 4, "network input");
    if (input.dim(1) != 1 || input.dim(2) != kFeatureBins) {
      throw ShapeError("network input must be N x 1 x 81 x T, got " + shape_str(input.shape()));
    }
    const std::size_t n = input.dim(0);
    cache.conv.assign(conv_.size(), {});
    Tensor<Real> x = input;
    for (std::size_t i = 0; i < conv_.size(); ++i) {
      auto& c = cache.conv[i];
      const auto g = conv_[i].geometry();
      for (auto& w : widths) w = g.out_w(w);
      c.widths = widths;
      Tensor<Real> y = conv_[i].forward(x, c.conv, mode);
      y = bn_[i].forward(y, c.bn, mode, widths);
      x = clip_.forward(y, c.clip, mode);
    }
    cache.conv_out_shape = x.shape();
    cache.frames = widths;
    const std::size_t ch = x.dim(1), f = x.dim(2), t_max = x.dim(3);
    cache.utterances.assign(n, {});
    std::vector<Tensor<Real>> out(n);
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t t_len = widths[s];
      Tensor<Real> seq({t_len, ch * f});
      const Real* src = x.data() + s * ch * f * t_max;
      for (std::size_t t = 0; t < t_len; ++t) {
        Real* row = seq.row(t);
        for (std::size_t k = 0; k < ch * f; ++k) row[k] = src[k * t_max + t];
      }
      auto& uc = cache.utterances[s];
      uc.rnn.assign(rnn_.size(), {});
      for (std::size_t l = 0; l < rnn_.size(); ++l) seq = rnn_[l].forward(seq, uc.rnn[l], mode);
      seq = fc_.forward(seq, uc.fc, mode);
      out[s] = softmax_.forward(seq, uc.softmax, mode);
    }
    return out;
  }

  /// Accumulates parameter gradients for d(loss)/d(log-probs) of every utterance.
  void backward(const std::vector<Tensor<Real>>& grad_log_probs, const Cache& cache) {
    const Shape& shape = cache.conv_out_shape;
    const std::size_t n = shape[0], ch = shape[1], f = shape[2], t_max = shape[3];
    if (grad_log_probs.size() != n) throw ShapeError("backward: batch size mismatch");
    Tensor<Real> g(shape);
    for (std::size_t s = 0; s < n; ++s) {
      const auto& uc = cache.utterances[s];
      Tensor<Real> d = softmax_.backward(grad_log_probs[s], uc.softmax);
      d = fc_.backward(d, uc.fc);
      for (std::size_t l = rnn_.size(); l-- > 0;) d = rnn_[l].backward(d, uc.rnn[l]);
      Real* dst = g.data() + s * ch * f * t_max;
      for (std::size_t t = 0; t < cache.frames[s]; ++t) {
        const Real* row = d.row(t);
        for (std::size_t k = 0; k < ch * f; ++k) dst[k * t_max + t] = row[k];
      }
    }
    for (std::size_t i = conv_.size(); i-- > 0;) {
      const auto& c = cache.conv[i];
      g = clip_.backward(g, c.clip);
      g = bn_[i].backward(g, c.bn);
      g = conv_[i].backward(g, c.conv);
    }
  }

 private:
  ModelConfig config_;
  ConvBlockSpec block_;
  std::size_t num_classes_ = 0;
  std::vector<Conv2d<Real>> conv_;
  std::vector<BatchNorm2d<Real>> bn_;
  HardClip<Real> clip_{Real(0), Real(20)};
  std::vector<BiGru<Real>> rnn_;
  Linear<Real> fc_;
  LogSoftmax<Real> softmax_;
};

template <typename Real>
Network<Real> build_model(const ModelConfig& config, std::size_t alphabet_size, std::uint64_t seed = 1) {
  if (alphabet_size == 0) throw ConfigError("alphabet must not be empty");
  Network<Real> net(config, alphabet_size);
  net.init(seed);
  return net;
}

}  // namespace bnasr
