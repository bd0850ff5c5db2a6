#include <gtest/gtest.h>

#include <algorithm>
#include <functional>
#include <filesystem>
#include <random>
#include <set>
#include <sstream>
#include <tuple>

#include "bnasr/eval.hpp"
#include "oracles.hpp"

using namespace bnasr;
using namespace bnasr::oracle;
namespace fs = std::filesystem;

TEST(EditDistance, WorkedExamples) {
  auto words = [](const char* r, const char* h) { return word_errors(r, h); };
  EXPECT_EQ(words("a b c", "a b c").errors(), 0u);
  const auto del = words("a b c", "a c");
  EXPECT_EQ(del.substitutions, 0u);
  EXPECT_EQ(del.deletions, 1u);
  EXPECT_EQ(del.insertions, 0u);
  const auto ins = words("", "a b");
  EXPECT_EQ(ins.insertions, 2u);
  EXPECT_EQ(ins.substitutions + ins.deletions, 0u);
  // One token replaced: a substitution, never a deletion plus an insertion.
  const auto sub = words("a b c", "a x c");
  EXPECT_EQ(sub.substitutions, 1u);
  EXPECT_EQ(sub.deletions + sub.insertions, 0u);
}

TEST(EditDistance, MatchesExhaustiveAlignment) {
  // Lengths up to 4 per side: the complete set of alignments, enumerated.
  for (std::size_t n = 0; n <= 4; ++n) {
    for (std::size_t m = 0; m <= 4; ++m) {
      for (std::size_t a = 0; a < power3(n); ++a) {
        for (std::size_t b = 0; b < power3(m); ++b) {
          const auto r = sequence(a, n), h = sequence(b, m);
          std::set<Triple> options;
          all_alignments(r, h, 0, 0, {0, 0, 0}, options);
          std::size_t best = SIZE_MAX;
          for (const auto& [s, d, i] : options) best = std::min(best, s + d + i);
          const auto c = edit_distance(r, h);
          ASSERT_EQ(c.errors(), best);
          ASSERT_TRUE(options.count({c.substitutions, c.deletions, c.insertions}));
        }
      }
    }
  }
}

TEST(EditDistance, AllPairsUpToSix) {
  // Every pair with both sides up to 6 tokens: the set of (S, D, I) counts
  // reachable by some optimal alignment, built over suffixes.
  std::size_t pairs = 0;
  for (std::size_t n = 0; n <= 6; ++n) {
    for (std::size_t m = 0; m <= 6; ++m) {
      for (std::size_t a = 0; a < power3(n); ++a) {
        for (std::size_t b = 0; b < power3(m); ++b) {
          const auto r = sequence(a, n), h = sequence(b, m);
          const auto c = edit_distance(r, h);
          ASSERT_TRUE(optimal_alignments(r, h).count({c.substitutions, c.deletions, c.insertions}))
              << "n=" << n << " m=" << m << " a=" << a << " b=" << b;
          ASSERT_EQ(c.reference_length, n);
          ++pairs;
        }
      }
    }
  }
  EXPECT_EQ(pairs, 1093u * 1093u);
}

TEST(EditDistance, Properties) {
  std::mt19937_64 rng(5);
  auto random_seq = [&] {
    std::vector<int> v(rng() % 8);
    for (auto& x : v) x = int(rng() % 4);
    return v;
  };
  for (int trial = 0; trial < 500; ++trial) {
    const auto x = random_seq(), y = random_seq(), z = random_seq();
    EXPECT_EQ(edit_distance(x, x).errors(), 0u);
    const auto e = edit_distance(x, std::vector<int>{});
    EXPECT_EQ(e.deletions, x.size());
    EXPECT_EQ(e.substitutions + e.insertions, 0u);
    EXPECT_LE(edit_distance(x, z).errors(), edit_distance(x, y).errors() + edit_distance(y, z).errors());
    EXPECT_EQ(edit_distance(x, y).errors(), edit_distance(y, x).errors());
  }
}

TEST(ErrorRates, WorkedExamples) {
  EXPECT_DOUBLE_EQ(wer({"ami bhalo achi", "x y"}, {"ami bhalo achi", "x y"}), 0.0);
  EXPECT_NEAR(wer({"ami bhalo achi"}, {"ami achi"}), 100.0 / 3.0, 1e-12);
  EXPECT_EQ(format_percent(wer({"ami bhalo achi"}, {"ami achi"})), "33.33");
  EXPECT_DOUBLE_EQ(cer({"ab"}, {"ac"}), 50.0);
  // Spaces count as characters; Bengali codepoints count once each.
  EXPECT_DOUBLE_EQ(cer({"a b"}, {"ab"}), 100.0 / 3.0);
  EXPECT_DOUBLE_EQ(cer({"আমি"}, {"আম"}), 100.0 / 3.0);
  // Can exceed 100.
  EXPECT_DOUBLE_EQ(wer({"a"}, {"b c d"}), 300.0);
  EXPECT_THROW(wer({"a", "b"}, {"a"}), ContractViolation);
  EXPECT_THROW(cer({"a"}, {}), ContractViolation);
}

TEST(ErrorRates, AggregatedFromCountsAndOrderInvariant) {
  std::vector<std::string> refs{"a b c d", "e", "f g", ""}, hyps{"a x c", "e e", "", "z"};
  // Summed counts: (1 sub + 1 del) + 1 ins + 2 del + 1 ins = 6 errors over 7 words.
  EXPECT_NEAR(wer(refs, hyps), 600.0 / 7.0, 1e-12);
  std::vector<std::size_t> order{0, 1, 2, 3};
  std::mt19937_64 rng(2);
  for (int k = 0; k < 10; ++k) {
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::string> r, h;
    for (std::size_t i : order) {
      r.push_back(refs[i]);
      h.push_back(hyps[i]);
    }
    EXPECT_DOUBLE_EQ(wer(r, h), wer(refs, hyps));
    EXPECT_DOUBLE_EQ(cer(r, h), cer(refs, hyps));
  }
}

TEST(Evaluate, PerfectAlignmentsScoreZero) {
  const Alphabet alphabet(std::vector<char32_t>{U' ', U'a', U'b'});
  const std::string ref = "ab ba";
  const Labels target = alphabet.encode(ref);
  // One-hot path: each label followed by a blank.
  Tensor<double> lp({2 * target.size(), alphabet.num_classes()}, std::log(1e-6));
  for (std::size_t i = 0; i < target.size(); ++i) {
    lp(2 * i, std::size_t(target[i])) = std::log(1 - 2e-6);
    lp(2 * i + 1, 0) = std::log(1 - 2e-6);
  }
  NGramModel lm = train_kneser_ney({split_words("ab ba"), split_words("ba ab")});
  const BeamSearchDecoder beam(alphabet, &lm);
  EvalResult greedy, lm_result;
  greedy.add(score_utterance("u", ref, alphabet.decode(greedy_decode(lp))));
  lm_result.add(score_utterance("u", ref, alphabet.decode(beam.decode(lp))));
  EXPECT_EQ(greedy.wer(), 0.0);
  EXPECT_EQ(lm_result.wer(), 0.0);
  EXPECT_EQ(greedy.cer(), 0.0);
}

TEST(Evaluate, RunsNetworkOverManifest) {
  const fs::path dir = fs::temp_directory_path() / "bnasr_eval";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const Alphabet alphabet(std::vector<char32_t>{U' ', U'a', U'b'});
  Manifest m;
  std::mt19937_64 rng(4);
  std::normal_distribution<float> noise(0.f, 0.1f);
  for (int i = 0; i < 3; ++i) {
    AudioClip clip;
    clip.sample_rate = 8000;
    for (int k = 0; k < 4000 + 800 * i; ++k) clip.samples.push_back(noise(rng));
    const fs::path p = dir / ("u" + std::to_string(i) + ".wav");
    write_wav(p, clip);
    m.records.push_back({p.string(), i == 2 ? "ab aé" : "ab ba", double(clip.samples.size()) / 8000.0});
  }
  auto net = build_model<double>(custom_config("BlockA", 1, 8), alphabet.size(), 3);
  NGramModel lm = train_kneser_ney({split_words("ab ba")});
  DecodeSettings settings;
  settings.lm = &lm;
  settings.beam.beam_width = 8;
  settings.batch_size = 2;
  const long before = log::warnings();
  const Evaluation ev = evaluate(net, alphabet, m, settings);
  EXPECT_EQ(log::warnings(), before + 1);  // the unknown codepoint
  ASSERT_TRUE(ev.beam.has_value());
  ASSERT_EQ(ev.greedy.utterances.size(), 3u);
  EXPECT_EQ(ev.greedy.utterances[2].reference, "ab a");
  EXPECT_EQ(ev.greedy.words.reference_length, 6u);
  EXPECT_EQ(ev.beam->chars.reference_length, 14u);
  // Batched evaluation equals one utterance at a time.
  settings.batch_size = 1;
  const Evaluation single = evaluate(net, alphabet, m, settings);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(single.greedy.utterances[i].hypothesis, ev.greedy.utterances[i].hypothesis);
    EXPECT_EQ(single.beam->utterances[i].hypothesis, ev.beam->utterances[i].hypothesis);
  }
  std::ostringstream tsv;
  write_utterance_tsv(tsv, ev.greedy);
  std::size_t lines = 0, tabs = 0;
  for (char c : tsv.str()) {
    lines += c == '\n';
    tabs += c == '\t';
  }
  EXPECT_EQ(lines, 3u);
  EXPECT_EQ(tabs, 9u);
  EXPECT_THROW(evaluate(net, Alphabet(std::vector<char32_t>{U'a'}), m), ConfigError);
  fs::remove_all(dir);
}

TEST(Evaluate, ResultsTable) {
  const std::string t = format_results({{"A-3GRU", 40.5, 31.25, std::nullopt}, {"B-5GRU-Large", 30.0, 31.45, 13.67}});
  EXPECT_NE(t.find("test_no_lm"), std::string::npos);
  EXPECT_NE(t.find("13.67"), std::string::npos);
  EXPECT_NE(t.find(" -\n"), std::string::npos);
}
