#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <vector>

#include "bnasr/error.hpp"
#include "bnasr/wav.hpp"

namespace bnasr {

// Front end: 20 ms Hamming windows every 10 ms, 160-point DFT at 8 kHz.
inline constexpr double kFeatureRate = 8000.0;
inline constexpr std::size_t kFrameWidth = 160;
inline constexpr std::size_t kFrameShift = 80;
inline constexpr std::size_t kFeatureBins = kFrameWidth / 2 + 1;  // 81
inline constexpr double kLogFloor = 1e-10;
inline constexpr double kStdGuard = 1e-5;

/// Frames x 81 matrix of log magnitudes, row-major.
struct Spectrogram {
  std::size_t frames = 0;
  std::vector<float> values;

  static constexpr std::size_t bins = kFeatureBins;
  static constexpr double frame_shift_ms = 10.0;
  static constexpr double frame_width_ms = 20.0;

  float at(std::size_t frame, std::size_t bin) const { return values[frame * bins + bin]; }
};

inline std::size_t frame_count(std::size_t samples) {
  return samples < kFrameWidth ? 0 : (samples - kFrameWidth) / kFrameShift + 1;
}

/// Linear-interpolation resampling. Output holds floor(N * target / rate)
/// samples, so duration is kept to within one output sample period.
inline AudioClip resample(const AudioClip& clip, double target_rate) {
  if (!(target_rate > 0)) throw ConfigError("resample: target rate must be positive");
  if (!(clip.sample_rate > 0)) throw ConfigError("resample: clip has no sample rate");
  if (target_rate == clip.sample_rate) return clip;
  AudioClip out;
  out.sample_rate = target_rate;
  const std::size_t n = clip.samples.size();
  if (n == 0) return out;
  const double ratio = clip.sample_rate / target_rate;
  const auto m = std::size_t(std::floor(double(n) * target_rate / clip.sample_rate));
  out.samples.resize(std::max<std::size_t>(m, 1));
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    const double pos = double(i) * ratio;
    const auto lo = std::min(std::size_t(pos), n - 1);
    const std::size_t hi = std::min(lo + 1, n - 1);
    const double frac = pos - double(lo);
    out.samples[i] = float((1.0 - frac) * clip.samples[lo] + frac * clip.samples[hi]);
  }
  return out;
}

namespace detail {

struct DftTables {
  std::vector<double> window;     // Hamming, kFrameWidth
  std::vector<double> cos_table;  // kFeatureBins x kFrameWidth
  std::vector<double> sin_table;

  DftTables() : window(kFrameWidth), cos_table(kFeatureBins * kFrameWidth), sin_table(kFeatureBins * kFrameWidth) {
    const double two_pi = 2.0 * std::numbers::pi;
    for (std::size_t n = 0; n < kFrameWidth; ++n) {
      window[n] = 0.54 - 0.46 * std::cos(two_pi * double(n) / double(kFrameWidth - 1));
    }
    for (std::size_t k = 0; k < kFeatureBins; ++k) {
      for (std::size_t n = 0; n < kFrameWidth; ++n) {
        const double angle = two_pi * double((k * n) % kFrameWidth) / double(kFrameWidth);
        cos_table[k * kFrameWidth + n] = std::cos(angle);
        sin_table[k * kFrameWidth + n] = std::sin(angle);
      }
    }
  }

  static const DftTables& get() {
    static const DftTables tables;
    return tables;
  }
};

}  // namespace detail

namespace detail {

// ln(|X_k| + 1e-10) for every frame, in double precision.
inline std::vector<double> log_magnitudes(const AudioClip& clip, std::size_t& frames) {
  if (clip.sample_rate != kFeatureRate) {
    throw ConfigError("log_spectrogram expects 8000 Hz audio, got " + std::to_string(clip.sample_rate));
  }
  if (clip.samples.size() < kFrameWidth) {
    throw DataError("input too short: " + std::to_string(clip.samples.size()) +
                    " samples, need at least " + std::to_string(kFrameWidth));
  }
  const auto& tab = DftTables::get();
  frames = frame_count(clip.samples.size());
  std::vector<double> out(frames * kFeatureBins);
  double frame[kFrameWidth];
  for (std::size_t f = 0; f < frames; ++f) {
    const float* src = clip.samples.data() + f * kFrameShift;
    for (std::size_t n = 0; n < kFrameWidth; ++n) frame[n] = double(src[n]) * tab.window[n];
    for (std::size_t k = 0; k < kFeatureBins; ++k) {
      const double* c = tab.cos_table.data() + k * kFrameWidth;
      const double* s = tab.sin_table.data() + k * kFrameWidth;
      double re = 0, im = 0;
      for (std::size_t n = 0; n < kFrameWidth; ++n) {
        re += frame[n] * c[n];
        im -= frame[n] * s[n];
      }
      out[f * kFeatureBins + k] = std::log(std::hypot(re, im) + kLogFloor);
    }
  }
  return out;
}

// Subtract the mean, divide by max(std, 1e-5).
inline void normalize_in_place(std::vector<double>& values) {
  if (values.empty()) return;
  // Shifted by the first value so constant input yields an exact mean.
  const double shift = values.front();
  double sum = 0;
  for (double v : values) sum += v - shift;
  const double mean = shift + sum / double(values.size());
  double sq = 0;
  for (double v : values) sq += (v - mean) * (v - mean);
  const double scale = 1.0 / std::max(std::sqrt(sq / double(values.size())), kStdGuard);
  for (double& v : values) v = (v - mean) * scale;
}

inline Spectrogram to_spectrogram(const std::vector<double>& values, std::size_t frames) {
  Spectrogram spec;
  spec.frames = frames;
  spec.values.assign(values.begin(), values.end());
  return spec;
}

}  // namespace detail

/// Log magnitudes before utterance normalization. Requires 8 kHz input.
inline Spectrogram raw_log_spectrogram(const AudioClip& clip) {
  std::size_t frames = 0;
  const std::vector<double> values = detail::log_magnitudes(clip, frames);
  return detail::to_spectrogram(values, frames);
}

/// Normalized log-spectrogram of an 8 kHz clip.
inline Spectrogram log_spectrogram(const AudioClip& clip) {
  std::size_t frames = 0;
  std::vector<double> values = detail::log_magnitudes(clip, frames);
  detail::normalize_in_place(values);
  return detail::to_spectrogram(values, frames);
}

/// Resamples to 8 kHz when needed, then extracts normalized features.
inline Spectrogram extract_features(const AudioClip& clip) {
  return log_spectrogram(clip.sample_rate == kFeatureRate ? clip : resample(clip, kFeatureRate));
}

// Feature cache record: uint32 frames, uint32 bins, then frames*bins float32,
// all little-endian, row-major.

inline void write_feature_cache(const std::filesystem::path& path, const Spectrogram& spec) {
  static_assert(std::endian::native == std::endian::little);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const std::uint32_t header[2] = {std::uint32_t(spec.frames), std::uint32_t(Spectrogram::bins)};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  out.write(reinterpret_cast<const char*>(spec.values.data()),
            std::streamsize(spec.values.size() * sizeof(float)));
}

inline Spectrogram read_feature_cache(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  if (bytes.size() < 8) throw FormatError(path.string() + ": truncated feature header", bytes.size());
  const std::uint32_t frames = detail::read_le32(bytes.data());
  const std::uint32_t bins = detail::read_le32(bytes.data() + 4);
  if (bins != Spectrogram::bins) {
    throw FormatError(path.string() + ": expected 81 bins, found " + std::to_string(bins), 4);
  }
  const std::size_t expected = 8 + std::size_t(frames) * bins * sizeof(float);
  if (bytes.size() != expected) {
    throw FormatError(path.string() + ": payload size mismatch, expected " + std::to_string(expected) +
                          " bytes",
                      bytes.size());
  }
  Spectrogram spec;
  spec.frames = frames;
  spec.values.resize(std::size_t(frames) * bins);
  std::memcpy(spec.values.data(), bytes.data() + 8, spec.values.size() * sizeof(float));
  return spec;
}

}  // namespace bnasr
