#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "bnasr/data.hpp"
#include "bnasr/error.hpp"
#include "bnasr/wav.hpp"

namespace bnasr::synth {

// Tone-pattern speech stand-in. Every letter is a short burst of two sine
// tones; a space is a pause. Letters listed as confusable share their first
// tone and sit close on the second, so additive noise blurs them unless
// word context disambiguates.

inline constexpr double kPi = 3.14159265358979323846;

struct Options {
  double sample_rate = 8000;
  double char_seconds = 0.065;
  double space_seconds = 0.065;
  double jitter = 0.15;   // relative spread of per-character durations
  double noise = 0.01;    // std of additive white noise
  double amplitude = 0.3;
  double min_words = 2, max_words = 4;
};

struct Voice {
  char32_t symbol;
  double f1, f2;  // Hz
};

/// Letter -> tone pair. `o`/`u`, `e`/`i` and `k`/`g` are the confusable pairs.
inline const std::vector<Voice>& voices() {
  static const std::vector<Voice> v{
      {U'a', 350, 1250},  {U'b', 600, 2650},  {U'c', 450, 3300},  {U'd', 900, 2100},  {U'e', 500, 1900},
      {U'g', 1100, 2450}, {U'h', 1500, 3050}, {U'i', 500, 2000},  {U'j', 1300, 1800}, {U'k', 1100, 2550},
      {U'l', 700, 3500},  {U'm', 1700, 2250}, {U'n', 1900, 2800}, {U'o', 800, 1450},  {U'p', 2100, 3150},
      {U'r', 2300, 2700}, {U's', 2500, 3400}, {U't', 2700, 3600}, {U'u', 800, 1550},  {U'y', 3000, 3700},
      {U'v', 3200, 3800},
  };
  return v;
}

inline const Voice& voice(char32_t c) {
  for (const auto& v : voices()) {
    if (v.symbol == c) return v;
  }
  throw DataError("synth: no voice for codepoint " + utf8::describe(c));
}

/// Constrained grammar: subject [adverb] [object] verb, with objects tied
/// to the verbs they go with.
struct Grammar {
  std::vector<std::string> subjects{"ami", "tumi", "se"};
  std::vector<std::string> adverbs{"ekhon", "kal", "roj"};
  struct Frame {
    std::vector<std::string> objects;
    std::vector<std::string> verbs;
  };
  std::vector<Frame> frames{
      {{"bhat", "jol", "cha"}, {"khai", "khabo"}},
      {{"boi", "potro"}, {"pori", "likhi"}},
      {{"gan", "kotha"}, {"gai", "boli"}},
      {{"bari", "pothe"}, {"jai", "thaki"}},
  };

  std::string sentence(std::mt19937_64& rng, std::size_t words) const {
    if (words < 2 || words > 4) throw ConfigError("synth grammar makes 2 to 4 word sentences");
    auto pick = [&](const std::vector<std::string>& v) -> const std::string& { return v[rng() % v.size()]; };
    const Frame& f = frames[rng() % frames.size()];
    std::string s = pick(subjects);
    if (words == 4) s += " " + pick(adverbs);
    if (words >= 3) s += " " + pick(f.objects);
    s += " " + pick(f.verbs);
    return s;
  }

  std::vector<std::string> all_words() const {
    std::vector<std::string> out = subjects;
    out.insert(out.end(), adverbs.begin(), adverbs.end());
    for (const auto& f : frames) {
      out.insert(out.end(), f.objects.begin(), f.objects.end());
      out.insert(out.end(), f.verbs.begin(), f.verbs.end());
    }
    return out;
  }
};

/// Random sentence with 2..4 words drawn uniformly.
inline std::string random_sentence(std::mt19937_64& rng, const Grammar& g = {}, const Options& o = {}) {
  const auto lo = std::size_t(o.min_words), hi = std::size_t(o.max_words);
  return g.sentence(rng, lo + std::size_t(rng() % (hi - lo + 1)));
}

inline AudioClip render(const std::string& text, std::mt19937_64& rng, const Options& o = {}) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  AudioClip clip;
  clip.sample_rate = o.sample_rate;
  auto pause = [&](double seconds) { clip.samples.resize(clip.samples.size() + std::size_t(seconds * o.sample_rate)); };
  pause(0.04);
  for (char32_t c : utf8::decode(text)) {
    const double dur = (c == U' ' ? o.space_seconds : o.char_seconds) * (1.0 + o.jitter * unit(rng));
    if (c == U' ') {
      pause(dur);
      continue;
    }
    const Voice& v = voice(c);
    const std::size_t n = std::size_t(dur * o.sample_rate);
    const double phase1 = kPi * unit(rng), phase2 = kPi * unit(rng);
    for (std::size_t i = 0; i < n; ++i) {
      // Hann envelope, so neighbouring letters (and doubled letters) stay separable.
      const double env = 0.5 - 0.5 * std::cos(2 * kPi * double(i) / double(n));
      const double t = double(i) / o.sample_rate;
      const double s = std::sin(2 * kPi * v.f1 * t + phase1) + 0.7 * std::sin(2 * kPi * v.f2 * t + phase2);
      clip.samples.push_back(float(o.amplitude * env * s / 1.7));
    }
  }
  pause(0.04);
  for (auto& s : clip.samples) s += float(o.noise * gauss(rng));
  return clip;
}

/// Writes `count` utterances as WAVs under `dir` and returns their manifest.
inline Manifest write_corpus(const std::filesystem::path& dir, std::size_t count, std::uint64_t seed,
                             const Options& o = {}, const Grammar& g = {}, const std::string& prefix = "utt") {
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(seed);
  Manifest m;
  for (std::size_t i = 0; i < count; ++i) {
    const std::string text = random_sentence(rng, g, o);
    const AudioClip clip = render(text, rng, o);
    char name[64];
    std::snprintf(name, sizeof(name), "%s%04zu.wav", prefix.c_str(), i);
    const auto path = dir / name;
    write_wav(path, clip);
    m.records.push_back({path.string(), text, double(clip.samples.size()) / clip.sample_rate});
  }
  return m;
}

}  // namespace bnasr::synth
