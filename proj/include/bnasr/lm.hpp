#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "bnasr/error.hpp"

namespace bnasr {

inline constexpr std::string_view kSentenceStart = "<s>";
inline constexpr std::string_view kSentenceEnd = "</s>";
inline constexpr std::string_view kUnknownWord = "<unk>";

/// Whitespace tokenization; no normalization.
inline std::vector<std::string> split_words(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.emplace_back(line.substr(start, i - start));
  }
  return out;
}

namespace detail {
struct IdSeqHash {
  std::size_t operator()(const std::vector<int>& v) const noexcept {
    std::size_t h = 1469598103934665603ull;
    for (int x : v) {
      h ^= std::size_t(std::uint32_t(x));
      h *= 1099511628211ull;
    }
    return h;
  }
};
}  // namespace detail

/// Backoff n-gram model with log10 probabilities and backoff weights, the
/// in-memory form of an ARPA file.
class NGramModel {
 public:
  struct Entry {
    double log10_prob = 0;
    double log10_backoff = 0;
  };
  using Table = std::unordered_map<std::vector<int>, Entry, detail::IdSeqHash>;

  NGramModel() = default;
  explicit NGramModel(std::size_t order) : tables_(order) {
    if (order == 0) throw ConfigError("n-gram order must be positive");
  }

  std::size_t order() const { return tables_.size(); }
  std::size_t vocab_size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  /// Id of `word`, or -1 if it is not in the vocabulary.
  int find(std::string_view word) const {
    const auto it = ids_.find(std::string(word));
    return it == ids_.end() ? -1 : it->second;
  }
  /// Id of `word`, mapping out-of-vocabulary words to <unk>.
  int id(std::string_view word) const {
    const int i = find(word);
    return i >= 0 ? i : unk_;
  }
  const std::string& word(int id) const { return words_.at(std::size_t(id)); }
  int unk_id() const { return unk_; }

  int add_word(const std::string& word) {
    const auto it = ids_.find(word);
    if (it != ids_.end()) return it->second;
    const int id = int(words_.size());
    words_.push_back(word);
    ids_.emplace(word, id);
    if (word == kUnknownWord) unk_ = id;
    return id;
  }

  /// Table of n-grams of length n (1-based).
  Table& table(std::size_t n) { return tables_.at(n - 1); }
  const Table& table(std::size_t n) const { return tables_.at(n - 1); }

  const Entry* lookup(const std::vector<int>& ngram) const {
    if (ngram.empty() || ngram.size() > order()) return nullptr;
    const auto& t = table(ngram.size());
    const auto it = t.find(ngram);
    return it == t.end() ? nullptr : &it->second;
  }

  /// log10 P(word | context) by backoff: the longest stored n-gram wins,
  /// backoff weights of the skipped contexts accumulate. Only the last
  /// order-1 context ids are used.
  double score_ids(const std::vector<int>& context, int word) const {
    const std::size_t keep = std::min(context.size(), order() - 1);
    std::vector<int> ctx(context.end() - std::ptrdiff_t(keep), context.end());
    double backoff = 0;
    for (std::size_t n = ctx.size() + 1; n-- > 0;) {
      std::vector<int> h(ctx.end() - std::ptrdiff_t(n), ctx.end());
      std::vector<int> g = h;
      g.push_back(word);
      if (const Entry* e = lookup(g)) return backoff + e->log10_prob;
      if (const Entry* he = lookup(h)) backoff += he->log10_backoff;
    }
    return backoff + kMissingWordLog10;
  }

  double score(const std::vector<std::string>& context, std::string_view word) const {
    std::vector<int> ids;
    ids.reserve(context.size());
    for (const auto& w : context) ids.push_back(id(w));
    return score_ids(ids, id(word));
  }

  /// log10 probability of a sentence, including </s>.
  double sentence_log10(const std::vector<std::string>& words) const {
    std::vector<int> ctx{id(kSentenceStart)};
    double total = 0;
    for (const auto& w : words) {
      const int i = id(w);
      total += score_ids(ctx, i);
      ctx.push_back(i);
    }
    return total + score_ids(ctx, id(kSentenceEnd));
  }

  /// Per-token perplexity over sentences (tokens include </s>).
  double perplexity(const std::vector<std::vector<std::string>>& sentences) const {
    double total = 0;
    std::size_t tokens = 0;
    for (const auto& s : sentences) {
      total += sentence_log10(s);
      tokens += s.size() + 1;
    }
    return tokens ? std::pow(10.0, -total / double(tokens)) : 1.0;
  }

  /// Floor used when a word has no unigram entry at all (external files without <unk>).
  static constexpr double kMissingWordLog10 = -100.0;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
  std::vector<Table> tables_;
  int unk_ = -1;
};

struct KneserNeyOptions {
  std::size_t order = 4;
  double discount = 0.75;
};

/// Interpolated Kneser-Ney with one fixed discount D.
///
/// Adjusted counts: highest-order n-grams and n-grams starting with <s> keep
/// raw counts; every other n-gram counts its distinct left extensions. For a
/// context h with adjusted counts a(h w):
///   p(w | h) = (a(hw) - D) / sum_v a(hv) + gamma(h) p(w | h')
///   gamma(h) = D * |{v : a(hv) > 0}| / sum_v a(hv)
/// and unigrams interpolate with the uniform distribution over the predictable
/// vocabulary (every word, </s> and <unk>; <s> is never predicted).
inline NGramModel train_kneser_ney(const std::vector<std::vector<std::string>>& sentences,
                                   const KneserNeyOptions& opt = {}) {
  if (opt.order == 0) throw ConfigError("n-gram order must be positive");
  if (!(opt.discount > 0 && opt.discount < 1)) throw ConfigError("discount must lie in (0, 1)");
  std::set<std::string> vocab;
  std::size_t tokens = 0;
  for (const auto& s : sentences) {
    for (const auto& w : s) {
      if (w == kSentenceStart || w == kSentenceEnd || w == kUnknownWord) {
        throw DataError("corpus contains reserved token " + w);
      }
      vocab.insert(w);
      ++tokens;
    }
  }
  if (tokens == 0) throw DataError("language model corpus is empty");

  NGramModel model(opt.order);
  model.add_word(std::string(kUnknownWord));
  const int bos = model.add_word(std::string(kSentenceStart));
  const int eos = model.add_word(std::string(kSentenceEnd));
  for (const auto& w : vocab) model.add_word(w);
  const std::size_t n_max = opt.order;

  // Raw counts per order.
  std::vector<std::map<std::vector<int>, double>> raw(n_max);
  for (const auto& s : sentences) {
    if (s.empty()) continue;
    std::vector<int> ids{bos};
    for (const auto& w : s) ids.push_back(model.id(w));
    ids.push_back(eos);
    for (std::size_t n = 1; n <= n_max; ++n) {
      for (std::size_t i = 0; i + n <= ids.size(); ++i) {
        raw[n - 1][std::vector<int>(ids.begin() + std::ptrdiff_t(i), ids.begin() + std::ptrdiff_t(i + n))] += 1;
      }
    }
  }

  // Adjusted counts.
  std::vector<std::map<std::vector<int>, double>> adj(n_max);
  adj[n_max - 1] = raw[n_max - 1];
  for (std::size_t n = 1; n < n_max; ++n) {
    for (const auto& [g, c] : raw[n - 1]) {
      if (g.front() == bos) adj[n - 1][g] = c;
    }
    for (const auto& [g, c] : raw[n]) {
      // g = v + suffix: one more distinct left extension of the suffix.
      std::vector<int> suffix(g.begin() + 1, g.end());
      if (suffix.front() == bos) continue;
      adj[n - 1][suffix] += 1;
    }
  }
  // Unigrams for the predictable vocabulary, including unseen <unk>.
  for (int w = 0; w < int(model.vocab_size()); ++w) {
    if (w != bos) adj[0].try_emplace(std::vector<int>{w}, 0.0);
  }

  const double d = opt.discount;
  // Context statistics: sum of adjusted counts and number of distinct continuations.
  std::vector<std::map<std::vector<int>, std::pair<double, double>>> ctx_stats(n_max);
  for (std::size_t n = 1; n <= n_max; ++n) {
    for (const auto& [g, a] : adj[n - 1]) {
      if (n == 1 && g.front() == bos) continue;
      std::vector<int> h(g.begin(), g.end() - 1);
      auto& st = ctx_stats[n - 1][h];
      st.first += a;
      if (a > 0) st.second += 1;
    }
  }

  // Interpolated probabilities, lowest order first.
  std::vector<std::map<std::vector<int>, double>> prob(n_max);
  const double uniform = 1.0 / double(model.vocab_size() - 1);
  {
    const auto& st = ctx_stats[0].at({});
    const double gamma = d * st.second / st.first;
    for (const auto& [g, a] : adj[0]) {
      if (g.front() == bos) continue;
      prob[0][g] = std::max(a - d, 0.0) / st.first + gamma * uniform;
    }
  }
  for (std::size_t n = 2; n <= n_max; ++n) {
    for (const auto& [g, a] : adj[n - 1]) {
      std::vector<int> h(g.begin(), g.end() - 1);
      const auto& st = ctx_stats[n - 1].at(h);
      const double gamma = d * st.second / st.first;
      const std::vector<int> lower(g.begin() + 1, g.end());
      prob[n - 1][g] = (a - d) / st.first + gamma * prob[n - 2].at(lower);
    }
  }

  for (std::size_t n = 1; n <= n_max; ++n) {
    auto& table = model.table(n);
    for (const auto& [g, p] : prob[n - 1]) table[g].log10_prob = std::log10(p);
  }
  model.table(1)[{bos}].log10_prob = -99.0;
  for (std::size_t n = 2; n <= n_max; ++n) {
    for (const auto& [h, st] : ctx_stats[n - 1]) {
      model.table(n - 1).at(h).log10_backoff = std::log10(d * st.second / st.first);
    }
  }
  return model;
}

/// Reads line-per-sentence text.
inline std::vector<std::vector<std::string>> read_sentences(std::istream& in) {
  std::vector<std::vector<std::string>> out;
  std::string line;
  while (std::getline(in, line)) {
    auto words = split_words(line);
    if (!words.empty()) out.push_back(std::move(words));
  }
  return out;
}

// ---------------------------------------------------------------------------
// ARPA text format

inline void write_arpa(std::ostream& out, const NGramModel& model) {
  out << "\n\\data\\\n";
  for (std::size_t n = 1; n <= model.order(); ++n) out << "ngram " << n << '=' << model.table(n).size() << '\n';
  char buf[32];
  for (std::size_t n = 1; n <= model.order(); ++n) {
    out << "\n\\" << n << "-grams:\n";
    std::vector<std::pair<std::vector<std::string>, const NGramModel::Entry*>> rows;
    for (const auto& [g, e] : model.table(n)) {
      std::vector<std::string> words;
      for (int id : g) words.push_back(model.word(id));
      rows.emplace_back(std::move(words), &e);
    }
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [words, e] : rows) {
      std::snprintf(buf, sizeof(buf), "%.7f", e->log10_prob);
      out << buf << '\t';
      for (std::size_t i = 0; i < words.size(); ++i) out << (i ? " " : "") << words[i];
      if (n < model.order() && e->log10_backoff != 0.0) {
        std::snprintf(buf, sizeof(buf), "%.7f", e->log10_backoff);
        out << '\t' << buf;
      }
      out << '\n';
    }
  }
  out << "\n\\end\\\n";
}

inline void write_arpa(const std::filesystem::path& path, const NGramModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_arpa(out, model);
}

inline NGramModel read_arpa(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&](bool skip_blank) {
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!skip_blank || line.find_first_not_of(" \t") != std::string::npos) return true;
    }
    return false;
  };

  // Anything before \data\ is a free-form preamble.
  bool found = false;
  while (next_line(true)) {
    if (line == "\\data\\") {
      found = true;
      break;
    }
  }
  if (!found) throw ParseError("missing \\data\\ section", line_no);

  std::vector<std::size_t> counts;
  while (next_line(true)) {
    if (line.rfind("ngram ", 0) != 0) break;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("malformed ngram count line", line_no);
    std::size_t n = 0, c = 0;
    try {
      n = std::stoul(line.substr(6, eq - 6));
      c = std::stoul(line.substr(eq + 1));
    } catch (const std::logic_error&) {
      throw ParseError("malformed ngram count line", line_no);
    }
    if (n != counts.size() + 1) throw ParseError("ngram counts out of order", line_no);
    counts.push_back(c);
  }
  if (counts.empty()) throw ParseError("no ngram counts in \\data\\ section", line_no);

  NGramModel model(counts.size());
  for (std::size_t n = 1; n <= counts.size(); ++n) {
    const std::string header = "\\" + std::to_string(n) + "-grams:";
    if (line != header) throw ParseError("expected section header " + header, line_no);
    std::size_t entries = 0;
    bool more = false;
    while ((more = next_line(true))) {
      if (!line.empty() && line[0] == '\\') break;
      std::istringstream fields(line);
      std::string tok;
      std::vector<std::string> toks;
      while (fields >> tok) toks.push_back(tok);
      if (toks.size() != n + 1 && toks.size() != n + 2) {
        throw ParseError("expected " + std::to_string(n) + " words in " + std::to_string(n) + "-gram entry", line_no);
      }
      NGramModel::Entry e;
      try {
        e.log10_prob = std::stod(toks[0]);
        if (toks.size() == n + 2) e.log10_backoff = std::stod(toks[n + 1]);
      } catch (const std::logic_error&) {
        throw ParseError("malformed number", line_no);
      }
      std::vector<int> ids;
      for (std::size_t i = 1; i <= n; ++i) {
        if (n > 1 && model.find(toks[i]) < 0) {
          throw ParseError("word '" + toks[i] + "' has no unigram entry", line_no);
        }
        ids.push_back(model.add_word(toks[i]));
      }
      if (!model.table(n).emplace(std::move(ids), e).second) throw ParseError("duplicate n-gram", line_no);
      ++entries;
    }
    if (entries != counts[n - 1]) {
      throw ParseError("header declares " + std::to_string(counts[n - 1]) + " " + std::to_string(n) +
                           "-grams, section holds " + std::to_string(entries),
                       line_no);
    }
    if (!more) throw ParseError("unexpected end of file", line_no);
  }
  if (line != "\\end\\") throw ParseError("expected \\end\\", line_no);
  if (model.find(kUnknownWord) < 0) {
    // Toolkits that omit <unk> implicitly give it a floor probability.
    const int unk = model.add_word(std::string(kUnknownWord));
    model.table(1)[{unk}].log10_prob = NGramModel::kMissingWordLog10;
  }
  return model;
}

inline NGramModel read_arpa(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return read_arpa(in);
}

}  // namespace bnasr
