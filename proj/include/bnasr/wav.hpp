#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "bnasr/error.hpp"

namespace bnasr {

struct AudioClip {
  std::vector<float> samples;  // in [-1, 1)
  double sample_rate = 0;

  double duration() const { return sample_rate > 0 ? double(samples.size()) / sample_rate : 0.0; }
};

/// Layout of a PCM WAV file as found in its header.
struct WavInfo {
  std::uint16_t channels = 0;
  std::uint32_t sample_rate = 0;
  std::uint16_t bits_per_sample = 0;
  std::size_t data_offset = 0;
  std::size_t data_bytes = 0;

  std::size_t frames() const { return data_bytes / (std::size_t(channels) * (bits_per_sample / 8)); }
  double duration() const { return sample_rate ? double(frames()) / sample_rate : 0.0; }
};

namespace detail {

inline std::uint32_t read_le32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}
inline std::uint16_t read_le16(const unsigned char* p) {
  return std::uint16_t(p[0] | (p[1] << 8));
}
inline void put_le32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_le16(std::string& out, std::uint16_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char(v >> 8));
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace detail

/// Parses RIFF/WAVE headers. Only 16-bit integer PCM is accepted.
inline WavInfo parse_wav_header(const unsigned char* bytes, std::size_t size) {
  using detail::read_le16;
  using detail::read_le32;
  if (size < 12) throw FormatError("truncated RIFF header", size);
  if (std::memcmp(bytes, "RIFF", 4) != 0) throw FormatError("missing RIFF tag", 0);
  if (std::memcmp(bytes + 8, "WAVE", 4) != 0) throw FormatError("missing WAVE tag", 8);
  WavInfo info;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= size) {
    const unsigned char* chunk = bytes + pos;
    const std::uint32_t chunk_size = read_le32(chunk + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (chunk_size < 16 || body + 16 > size) throw FormatError("truncated fmt chunk", body);
      std::uint16_t format = read_le16(bytes + body);
      info.channels = read_le16(bytes + body + 2);
      info.sample_rate = read_le32(bytes + body + 4);
      info.bits_per_sample = read_le16(bytes + body + 14);
      if (format == 0xFFFE) {
        // WAVE_FORMAT_EXTENSIBLE: the sub-format GUID starts with the codec tag.
        if (chunk_size < 40 || body + 26 > size) throw FormatError("truncated extensible fmt chunk", body);
        format = read_le16(bytes + body + 24);
      }
      if (format != 1) {
        throw FormatError("unsupported codec tag " + std::to_string(format) + " (only PCM)", body);
      }
      if (info.bits_per_sample != 16) {
        throw FormatError("unsupported sample width " + std::to_string(info.bits_per_sample) +
                              " bits (only 16)",
                          body + 14);
      }
      if (info.channels == 0) throw FormatError("zero channels", body + 2);
      if (info.sample_rate == 0) throw FormatError("zero sample rate", body + 4);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw FormatError("data chunk before fmt chunk", pos);
      if (chunk_size == 0) throw FormatError("zero-length data chunk", pos + 4);
      if (body + chunk_size > size) {
        throw FormatError("truncated data chunk: header claims " + std::to_string(chunk_size) +
                              " bytes, file holds " + std::to_string(size - body),
                          size);
      }
      info.data_offset = body;
      info.data_bytes = chunk_size;
      const std::size_t frame_bytes = std::size_t(info.channels) * 2;
      if (info.data_bytes % frame_bytes != 0) {
        throw FormatError("data chunk is not a whole number of frames", body + info.data_bytes);
      }
      return info;
    }
    pos = body + chunk_size + (chunk_size & 1);
  }
  throw FormatError(have_fmt ? "no data chunk" : "no fmt chunk", pos);
}

/// Header fields of a WAV file on disk.
inline WavInfo read_wav_info(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  try {
    return parse_wav_header(bytes.data(), bytes.size());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

/// Decodes 16-bit PCM; samples are scaled by 1/32768 and channels averaged.
inline AudioClip decode_wav(const unsigned char* bytes, std::size_t size) {
  const WavInfo info = parse_wav_header(bytes, size);
  AudioClip clip;
  clip.sample_rate = info.sample_rate;
  const std::size_t frames = info.frames();
  clip.samples.resize(frames);
  const unsigned char* p = bytes + info.data_offset;
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0;
    for (std::size_t c = 0; c < info.channels; ++c, p += 2) {
      acc += double(std::int16_t(detail::read_le16(p)));
    }
    clip.samples[f] = float(acc / info.channels / 32768.0);
  }
  return clip;
}

inline AudioClip load_wav(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  try {
    return decode_wav(bytes.data(), bytes.size());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

/// Encodes mono 16-bit PCM, clamping to the representable range.
inline std::string encode_wav(const AudioClip& clip) {
  using detail::put_le16;
  using detail::put_le32;
  const auto rate = std::uint32_t(std::lround(clip.sample_rate));
  const auto data_bytes = std::uint32_t(clip.samples.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put_le32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_le32(out, 16);
  put_le16(out, 1);
  put_le16(out, 1);
  put_le32(out, rate);
  put_le32(out, rate * 2);
  put_le16(out, 2);
  put_le16(out, 16);
  out += "data";
  put_le32(out, data_bytes);
  for (float s : clip.samples) {
    const long q = std::lround(double(s) * 32768.0);
    put_le16(out, std::uint16_t(std::int16_t(std::clamp(q, -32768L, 32767L))));
  }
  return out;
}

inline void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const std::string bytes = encode_wav(clip);
  out.write(bytes.data(), std::streamsize(bytes.size()));
}

}  // namespace bnasr
