// bnasr_synth: writes a tone-pattern corpus from the built-in constrained
// grammar, for smoke tests and overfitting experiments.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <random>

#include "bnasr/synth.hpp"

using namespace bnasr;

int main(int argc, char** argv) {
  CLI::App app{"Synthetic tone-pattern speech corpus", "bnasr_synth"};
  std::string out_dir, lm_text;
  std::size_t count = 20, lm_sentences = 2000;
  std::uint64_t seed = 1;
  synth::Options opt;
  app.add_option("--out-dir", out_dir, "Directory for WAVs and manifest.tsv")->required();
  app.add_option("--count", count)->capture_default_str();
  app.add_option("--seed", seed)->capture_default_str();
  app.add_option("--noise", opt.noise, "Std of additive noise")->capture_default_str();
  app.add_option("--char-seconds", opt.char_seconds)->capture_default_str();
  app.add_option("--jitter", opt.jitter)->capture_default_str();
  app.add_option("--lm-text", lm_text, "Also write grammar sentences for LM training to this file");
  app.add_option("--lm-sentences", lm_sentences)->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  try {
    const Manifest m = synth::write_corpus(out_dir, count, seed, opt);
    write_manifest(std::filesystem::path(out_dir) / "manifest.tsv", m);
    std::printf("utterances=%zu seconds=%.2f\n", m.size(), m.total_seconds());
    if (!lm_text.empty()) {
      std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
      std::ofstream out(lm_text);
      if (!out) throw DataError("cannot write " + lm_text);
      for (std::size_t i = 0; i < lm_sentences; ++i) out << synth::random_sentence(rng) << '\n';
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "bnasr-error kind=%s exit=2 message=\"%s\"\n", to_string(e.kind()), e.what());
    return 2;
  }
  return 0;
}
