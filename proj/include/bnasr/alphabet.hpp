#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "bnasr/error.hpp"
#include "bnasr/log.hpp"
#include "bnasr/utf8.hpp"

namespace bnasr {

using Labels = std::vector<int>;

/// Codepoint inventory. Label 0 is the CTC blank; symbol i has label i + 1.
class Alphabet {
 public:
  static constexpr int kBlank = 0;

  Alphabet() = default;

  /// Symbols must be unique; they are stored sorted by codepoint.
  explicit Alphabet(std::vector<char32_t> symbols) : symbols_(std::move(symbols)) {
    std::sort(symbols_.begin(), symbols_.end());
    if (std::adjacent_find(symbols_.begin(), symbols_.end()) != symbols_.end()) {
      throw ConfigError("alphabet symbols must be unique");
    }
    for (std::size_t i = 0; i < symbols_.size(); ++i) index_[symbols_[i]] = int(i) + 1;
  }

  /// Number of symbols L, excluding the blank.
  std::size_t size() const { return symbols_.size(); }
  /// Network output width, L + 1.
  std::size_t num_classes() const { return symbols_.size() + 1; }
  const std::vector<char32_t>& symbols() const { return symbols_; }

  bool contains(char32_t cp) const { return index_.count(cp) != 0; }
  /// Label of `cp`, or -1 when absent.
  int label_of(char32_t cp) const {
    const auto it = index_.find(cp);
    return it == index_.end() ? -1 : it->second;
  }
  char32_t symbol(int label) const {
    if (label < 1 || std::size_t(label) > symbols_.size()) {
      throw DataError("label " + std::to_string(label) + " outside alphabet");
    }
    return symbols_[std::size_t(label) - 1];
  }
  /// Label of the space symbol, or -1 when the alphabet has none.
  int space_label() const { return label_of(U' '); }

  /// Strict encoding: an unknown codepoint is an error naming it and `utterance`.
  Labels encode(std::string_view text, std::string_view utterance = {}) const {
    Labels out;
    for (char32_t cp : utf8::decode(text)) {
      const int l = label_of(cp);
      if (l < 0) {
        throw DataError("codepoint " + utf8::describe(cp) + " not in alphabet" +
                        (utterance.empty() ? std::string() : " (utterance " + std::string(utterance) + ")"));
      }
      out.push_back(l);
    }
    return out;
  }

  /// Evaluation-time encoding: unknown codepoints are dropped with a warning.
  Labels encode_lenient(std::string_view text, std::string_view utterance = {}) const {
    Labels out;
    for (char32_t cp : utf8::decode(text)) {
      const int l = label_of(cp);
      if (l < 0) {
        log::warn("dropping unknown codepoint ", utf8::describe(cp), " from ", utterance);
        continue;
      }
      out.push_back(l);
    }
    return out;
  }

  /// Inverse of encode; blanks are skipped.
  std::string decode(const Labels& labels) const {
    std::string out;
    for (int l : labels) {
      if (l != kBlank) utf8::append(out, symbol(l));
    }
    return out;
  }

  /// FNV-1a over the codepoint list; recorded in checkpoints.
  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ull;
    for (char32_t cp : symbols_) {
      for (int i = 0; i < 4; ++i) {
        h ^= (std::uint64_t(cp) >> (8 * i)) & 0xff;
        h *= 1099511628211ull;
      }
    }
    return h;
  }

  friend bool operator==(const Alphabet& a, const Alphabet& b) { return a.symbols_ == b.symbols_; }

 private:
  std::vector<char32_t> symbols_;
  std::unordered_map<char32_t, int> index_;
};

/// Union of all codepoints in the transcripts.
template <typename Range>
Alphabet build_alphabet(const Range& transcripts) {
  std::set<char32_t> seen;
  for (const auto& t : transcripts) {
    for (char32_t cp : utf8::decode(t)) seen.insert(cp);
  }
  if (seen.empty()) throw DataError("build_alphabet: corpus has no characters");
  return Alphabet(std::vector<char32_t>(seen.begin(), seen.end()));
}

/// Alphabet file: one codepoint per line (UTF-8), line 1 is label 1.
inline void write_alphabet(const std::filesystem::path& path, const Alphabet& alphabet) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (char32_t cp : alphabet.symbols()) out << utf8::encode(cp) << '\n';
}

inline Alphabet read_alphabet(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<char32_t> symbols;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::u32string cps = utf8::decode(line);
    if (cps.size() != 1) throw ParseError("alphabet line must hold exactly one codepoint", line_no);
    symbols.push_back(cps[0]);
  }
  if (symbols.empty()) throw ParseError("empty alphabet file", line_no);
  const std::vector<char32_t> original = symbols;
  Alphabet a(std::move(symbols));
  if (a.symbols() != original) throw ParseError("alphabet file is not sorted by codepoint", line_no);
  return a;
}

}  // namespace bnasr
