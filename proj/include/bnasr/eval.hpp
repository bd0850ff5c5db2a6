#pragma once

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include <optional>

#include "bnasr/ctc.hpp"
#include "bnasr/data.hpp"
#include "bnasr/error.hpp"
#include "bnasr/lm.hpp"
#include "bnasr/model.hpp"
#include "bnasr/utf8.hpp"

namespace bnasr {

struct EditCounts {
  std::size_t substitutions = 0, deletions = 0, insertions = 0;
  std::size_t reference_length = 0;

  std::size_t errors() const { return substitutions + deletions + insertions; }
  /// 100 * errors / reference length; 0 for an empty reference with no errors.
  double rate() const {
    if (reference_length == 0) return errors() ? 100.0 * double(errors()) : 0.0;
    return 100.0 * double(errors()) / double(reference_length);
  }
  EditCounts& operator+=(const EditCounts& o) {
    substitutions += o.substitutions;
    deletions += o.deletions;
    insertions += o.insertions;
    reference_length += o.reference_length;
    return *this;
  }
  bool operator==(const EditCounts&) const = default;
};

/// Unit-cost Levenshtein alignment. Among minimal alignments the backtrace
/// prefers substitution (or match), then deletion, then insertion.
template <typename Seq>
EditCounts edit_distance(const Seq& ref, const Seq& hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      at(i, j) = std::min({sub, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  }
  EditCounts c;
  c.reference_length = n;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      if (ref[i - 1] != hyp[j - 1]) ++c.substitutions;
      --i;
      --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++c.deletions;
      --i;
    } else {
      ++c.insertions;
      --j;
    }
  }
  return c;
}

inline EditCounts word_errors(const std::string& ref, const std::string& hyp) {
  return edit_distance(split_words(ref), split_words(hyp));
}

inline EditCounts char_errors(const std::string& ref, const std::string& hyp) {
  return edit_distance(utf8::decode(ref), utf8::decode(hyp));
}

namespace detail {
template <typename F>
EditCounts corpus_errors(const std::vector<std::string>& refs, const std::vector<std::string>& hyps, F&& f) {
  if (refs.size() != hyps.size()) {
    throw ContractViolation("error rate: " + std::to_string(refs.size()) + " references but " +
                            std::to_string(hyps.size()) + " hypotheses");
  }
  EditCounts total;
  for (std::size_t i = 0; i < refs.size(); ++i) total += f(refs[i], hyps[i]);
  return total;
}
}  // namespace detail

/// Corpus WER in percent, from summed counts over whitespace tokens.
inline double wer(const std::vector<std::string>& refs, const std::vector<std::string>& hyps) {
  return detail::corpus_errors(refs, hyps, word_errors).rate();
}

/// Corpus CER in percent, over codepoints including spaces.
inline double cer(const std::vector<std::string>& refs, const std::vector<std::string>& hyps) {
  return detail::corpus_errors(refs, hyps, char_errors).rate();
}

struct UtteranceResult {
  std::string path, reference, hypothesis;
  EditCounts words, chars;
};

struct EvalResult {
  std::string decoder;  // "greedy" or "beam+lm"
  EditCounts words, chars;
  std::vector<UtteranceResult> utterances;

  double wer() const { return words.rate(); }
  double cer() const { return chars.rate(); }

  void add(UtteranceResult u) {
    words += u.words;
    chars += u.chars;
    utterances.push_back(std::move(u));
  }
};

inline UtteranceResult score_utterance(std::string path, std::string ref, std::string hyp) {
  UtteranceResult u{std::move(path), std::move(ref), std::move(hyp), {}, {}};
  u.words = word_errors(u.reference, u.hypothesis);
  u.chars = char_errors(u.reference, u.hypothesis);
  return u;
}

/// `path<TAB>ref<TAB>hyp<TAB>wer`, one line per utterance.
inline void write_utterance_tsv(std::ostream& out, const EvalResult& r) {
  char buf[32];
  for (const auto& u : r.utterances) {
    std::snprintf(buf, sizeof(buf), "%.2f", u.words.rate());
    out << u.path << '\t' << u.reference << '\t' << u.hypothesis << '\t' << buf << '\n';
  }
}

inline std::string format_percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Decoding a manifest with a trained network

struct DecodeSettings {
  const NGramModel* lm = nullptr;  // beam+LM pass runs only when set
  BeamOptions beam;
  std::size_t batch_size = 20;
};

/// Eval-mode log-probabilities for a batch of spectrograms.
template <typename Real>
std::vector<Tensor<Real>> infer(Network<Real>& net, const std::vector<const Spectrogram*>& batch) {
  typename Network<Real>::Cache cache;
  return net.forward(batch, cache, Mode::kEval);
}

template <typename Real>
Tensor<Real> infer(Network<Real>& net, const Spectrogram& spec) {
  return infer(net, std::vector<const Spectrogram*>{&spec}).front();
}

struct Evaluation {
  EvalResult greedy;
  std::optional<EvalResult> beam;  // present when an LM was supplied
};

/// Greedy pass (always) and beam+LM pass (when `settings.lm` is set) over
/// every utterance. Reference codepoints outside the alphabet are dropped.
template <typename Real>
Evaluation evaluate(Network<Real>& net, const Alphabet& alphabet, const Manifest& manifest,
                    const DecodeSettings& settings = {}) {
  if (alphabet.num_classes() != net.num_classes()) {
    throw ConfigError("alphabet has " + std::to_string(alphabet.num_classes()) + " classes but the network has " +
                      std::to_string(net.num_classes()));
  }
  Evaluation ev;
  ev.greedy.decoder = "greedy";
  std::optional<BeamSearchDecoder> beam;
  if (settings.lm) {
    beam.emplace(alphabet, settings.lm, settings.beam);
    ev.beam.emplace();
    ev.beam->decoder = "beam+lm";
  }
  const std::size_t bs = std::max<std::size_t>(1, settings.batch_size);
  for (std::size_t start = 0; start < manifest.size(); start += bs) {
    const std::size_t end = std::min(manifest.size(), start + bs);
    std::vector<Spectrogram> feats;
    std::vector<std::size_t> usable;
    for (std::size_t i = start; i < end; ++i) {
      Spectrogram s = load_features(manifest.records[i].path);
      try {
        net.output_frames(s.frames);
        usable.push_back(i);
        feats.push_back(std::move(s));
      } catch (const ShapeError&) {
        log::warn("utterance ", manifest.records[i].path, " is too short for the network; scored as empty");
      }
    }
    std::vector<const Spectrogram*> ptrs;
    for (const auto& f : feats) ptrs.push_back(&f);
    std::vector<Tensor<Real>> out;
    if (!ptrs.empty()) out = infer(net, ptrs);
    std::size_t k = 0;
    for (std::size_t i = start; i < end; ++i) {
      const auto& rec = manifest.records[i];
      const std::string ref = alphabet.decode(alphabet.encode_lenient(rec.transcript, rec.path));
      const bool ok = k < usable.size() && usable[k] == i;
      ev.greedy.add(score_utterance(rec.path, ref, ok ? alphabet.decode(greedy_decode(out[k])) : std::string()));
      if (beam) ev.beam->add(score_utterance(rec.path, ref, ok ? alphabet.decode(beam->decode(out[k])) : std::string()));
      if (ok) ++k;
    }
  }
  return ev;
}

/// Summary block with the columns of a results table: validation WER
/// (no LM), test WER without LM, and test WER with LM. Missing entries
/// print as "-".
struct ResultRow {
  std::string model;
  std::optional<double> val_wer, test_wer_no_lm, test_wer;
};

inline std::string format_results(const std::vector<ResultRow>& rows) {
  auto cell = [](const std::optional<double>& v) { return v ? format_percent(*v) : std::string("-"); };
  std::size_t w = 5;
  for (const auto& r : rows) w = std::max(w, r.model.size());
  std::string out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-*s %10s %14s %10s\n", int(w), "model", "val", "test_no_lm", "test");
  out += line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%-*s %10s %14s %10s\n", int(w), r.model.c_str(), cell(r.val_wer).c_str(),
                  cell(r.test_wer_no_lm).c_str(), cell(r.test_wer).c_str());
    out += line;
  }
  return out;
}

}  // namespace bnasr
