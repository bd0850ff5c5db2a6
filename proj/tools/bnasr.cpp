// bnasr: command-line front end for the speech recognition pipeline.

#include <CLI11.hpp>
#include <Eigen/Core>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "bnasr/checkpoint.hpp"
#include "bnasr/complexity.hpp"
#include "bnasr/data.hpp"
#include "bnasr/eval.hpp"
#include "bnasr/lm.hpp"
#include "bnasr/train.hpp"

using namespace bnasr;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kInternal = 3 };

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::kConfig: return kUsage;
    case ErrorKind::kShape:
    case ErrorKind::kFormat:
    case ErrorKind::kParse:
    case ErrorKind::kData: return kData;
    case ErrorKind::kContract:
    case ErrorKind::kNumeric: return kInternal;
  }
  return kInternal;
}

// One line on stderr: `bnasr-error kind=<kind> exit=<code> message="<text>"`.
void report_error(const std::string& kind, int code, const std::string& message) {
  std::string m;
  for (char c : message) {
    if (c == '"' || c == '\\') m += '\\';
    m += (c == '\n' ? ' ' : c);
  }
  std::cerr << "bnasr-error kind=" << kind << " exit=" << code << " message=\"" << m << "\"\n";
}

struct Globals {
  std::uint64_t seed = 1;
  int precision = 32;
  int threads = 1;
  int verbose = 0;
  bool quiet = false;
};

// -- resolved configuration --------------------------------------------------

// Defaults rendered with round-trip precision, so a replay sees the same bits.
std::string exact(double v) {
  char buf[32];
  for (int digits = 6; digits <= 17; ++digits) {
    std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

Json option_values(const CLI::App& app) {
  Json j = Json::object();
  for (const CLI::Option* o : app.get_options()) {
    std::string name = o->get_lnames().empty() ? o->get_name() : o->get_lnames().front();
    if (name == "help" || name.empty()) continue;
    if (o->get_expected_min() == 0 && !o->get_positional()) {
      if (o->get_lnames().empty()) continue;  // short-only counters such as -v
      j[name] = o->count() > 0 && o->as<bool>();
      continue;
    }
    if (o->count() > 0) {
      const auto& r = o->results();
      j[name] = r.size() == 1 ? Json(r.front()) : Json(r);
    } else if (!o->get_default_str().empty()) {
      j[name] = o->get_default_str();
    }
  }
  return j;
}

/// Everything needed to rerun: global options, subcommand and its options
/// with defaults filled in. Printed as one JSON line on stderr.
Json resolved_config(const CLI::App& app, const CLI::App& sub) {
  Json g = option_values(app);
  g.erase("replay");
  return {{"bnasr", 1}, {"global", g}, {"subcommand", sub.get_name()}, {"options", option_values(sub)}};
}

std::vector<std::string> argv_from_config(const Json& cfg, const CLI::App& app) {
  std::vector<std::string> args;
  auto emit = [&](const Json& opts, const CLI::App& scope, std::vector<std::string>& positional) {
    for (auto it = opts.begin(); it != opts.end(); ++it) {
      const CLI::Option* o = nullptr;
      for (const CLI::Option* cand : scope.get_options()) {
        const std::string n = cand->get_lnames().empty() ? cand->get_name() : cand->get_lnames().front();
        if (n == it.key()) o = cand;
      }
      if (!o) throw ConfigError("replay: unknown option '" + it.key() + "'");
      if (o->get_positional()) {
        if (it->is_array()) {
          for (const auto& v : *it) positional.push_back(v.get<std::string>());
        } else {
          positional.push_back(it->get<std::string>());
        }
      } else if (it->is_boolean()) {
        if (it->get<bool>()) args.push_back("--" + it.key());
      } else if (it->is_array()) {
        for (const auto& v : *it) {
          args.push_back("--" + it.key());
          args.push_back(v.get<std::string>());
        }
      } else {
        args.push_back("--" + it.key());
        args.push_back(it->get<std::string>());
      }
    }
  };
  try {
    std::vector<std::string> none;
    emit(cfg.at("global"), app, none);
    const std::string sub = cfg.at("subcommand").get<std::string>();
    args.push_back(sub);
    std::vector<std::string> positional;
    emit(cfg.at("options"), *app.get_subcommand(sub), positional);
    args.insert(args.end(), positional.begin(), positional.end());
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("replay: malformed configuration: ") + e.what());
  } catch (const CLI::OptionNotFound&) {
    throw ConfigError("replay: unknown subcommand");
  }
  return args;
}

// -- subcommands ---------------------------------------------------------------

struct PrepareArgs {
  std::string index, audio_dir, out_dir;
  ColumnMapping columns;
  bool split = true;
};

int run_prepare(const PrepareArgs& a, const Globals& g) {
  const Manifest all = scan_corpus(a.index, a.audio_dir, a.columns);
  if (all.empty()) throw DataError("no utterances found for " + a.index);
  fs::create_directories(a.out_dir);
  write_manifest(fs::path(a.out_dir) / "all.tsv", all);
  std::vector<std::string> texts;
  if (a.split) {
    const Splits s = split(all, {}, g.seed);
    write_manifest(fs::path(a.out_dir) / "train.tsv", s.train);
    write_manifest(fs::path(a.out_dir) / "val.tsv", s.val);
    write_manifest(fs::path(a.out_dir) / "test.tsv", s.test);
    for (const auto& r : s.train.records) texts.push_back(r.transcript);
    std::printf("utterances=%zu train=%zu val=%zu test=%zu hours=%.2f\n", all.size(), s.train.size(), s.val.size(),
                s.test.size(), all.total_hours());
  } else {
    for (const auto& r : all.records) texts.push_back(r.transcript);
    std::printf("utterances=%zu hours=%.2f\n", all.size(), all.total_hours());
  }
  const Alphabet alphabet = build_alphabet(texts);
  write_alphabet(fs::path(a.out_dir) / "alphabet.txt", alphabet);
  std::printf("alphabet_size=%zu\n", alphabet.size());
  return kOk;
}

int run_features(const std::string& manifest, const std::string& out_dir, const std::string& out_manifest) {
  const Manifest m = read_manifest(manifest);
  fs::create_directories(out_dir);
  Manifest cached;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto& r = m.records[i];
    const Spectrogram s = extract_features(load_wav(r.path));
    char name[32];
    std::snprintf(name, sizeof(name), "%06zu.feat", i);
    const fs::path p = fs::path(out_dir) / name;
    write_feature_cache(p, s);
    cached.records.push_back({p.string(), r.transcript, r.duration});
  }
  write_manifest(out_manifest.empty() ? fs::path(out_dir) / "manifest.tsv" : fs::path(out_manifest), cached);
  std::printf("utterances=%zu\n", cached.size());
  return kOk;
}

struct TrainArgs {
  std::string config, train, val, out, alphabet, resume;
  TrainConfig tc;
  bool no_bucket = false;
  bool preload = false;
};

template <typename Real>
int run_train(TrainArgs a, const Globals& g) {
  const ModelConfig cfg = resolve_config(a.config);
  const Manifest train_m = read_manifest(a.train), val_m = read_manifest(a.val);
  Alphabet alphabet;
  if (!a.alphabet.empty()) {
    alphabet = read_alphabet(a.alphabet);
  } else {
    std::vector<std::string> texts;
    for (const auto& r : train_m.records) texts.push_back(r.transcript);
    alphabet = build_alphabet(texts);
  }
  a.tc.seed = g.seed;
  a.tc.bucket = !a.no_bucket;
  Dataset train = make_dataset(train_m, alphabet), val = make_dataset(val_m, alphabet);
  if (a.preload) {
    train.preload();
    val.preload();
  }
  auto net = build_model<Real>(cfg, alphabet.size(), g.seed);
  log::info("model ", cfg.name, " with ", net.parameter_count(), " parameters, alphabet of ", alphabet.size());
  Trainer<Real> trainer(net, alphabet, std::move(train), std::move(val), a.tc, a.out);
  if (!a.resume.empty()) trainer.resume(a.resume);
  const TrainState& s = trainer.run();
  write_alphabet(fs::path(a.out) / "alphabet.txt", alphabet);
  std::printf("epochs=%zu best_epoch=%zu best_val_wer=%.2f stopped_early=%d\n", s.epochs_done, s.best_epoch + 1,
              s.best_val_wer, s.stopped_early ? 1 : 0);
  return kOk;
}

int run_lm_train(const std::string& corpus, const std::string& out, const KneserNeyOptions& opt) {
  std::ifstream in(corpus);
  if (!in) throw DataError("cannot open corpus " + corpus);
  const NGramModel lm = train_kneser_ney(read_sentences(in), opt);
  write_arpa(fs::path(out), lm);
  std::printf("order=%zu", lm.order());
  for (std::size_t n = 1; n <= lm.order(); ++n) std::printf(" ngram%zu=%zu", n, lm.table(n).size());
  std::printf("\n");
  return kOk;
}

struct DecodeArgs {
  std::string checkpoint, wav, manifest, val, lm, tsv;
  BeamOptions beam;
};

std::optional<NGramModel> load_lm(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return read_arpa(fs::path(path));
}

template <typename Real>
int run_decode(const DecodeArgs& a) {
  const Checkpoint c = read_checkpoint(a.checkpoint);
  const Alphabet alphabet = checkpoint_alphabet(c);
  auto net = network_from_checkpoint<Real>(c);
  const auto lm = load_lm(a.lm);
  const Spectrogram s = load_features(a.wav);
  const Tensor<Real> lp = infer(net, s);
  const Labels labels = lm ? BeamSearchDecoder(alphabet, &*lm, a.beam).decode(lp) : greedy_decode(lp);
  std::cout << alphabet.decode(labels) << '\n';
  return kOk;
}

template <typename Real>
int run_eval(const DecodeArgs& a) {
  const Checkpoint c = read_checkpoint(a.checkpoint);
  const Alphabet alphabet = checkpoint_alphabet(c);
  auto net = network_from_checkpoint<Real>(c);
  const auto lm = load_lm(a.lm);
  DecodeSettings settings;
  settings.lm = lm ? &*lm : nullptr;
  settings.beam = a.beam;
  const Evaluation test = evaluate(net, alphabet, read_manifest(a.manifest), settings);
  ResultRow row{net.config().name, std::nullopt, test.greedy.wer(), std::nullopt};
  if (test.beam) row.test_wer = test.beam->wer();
  if (!a.val.empty()) row.val_wer = evaluate(net, alphabet, read_manifest(a.val)).greedy.wer();
  std::cout << format_results({row});
  std::printf("cer_no_lm=%.2f", test.greedy.cer());
  if (test.beam) std::printf(" cer=%.2f", test.beam->cer());
  std::printf("\n");
  const fs::path tsv = a.tsv.empty() ? fs::path(a.checkpoint).replace_extension(".eval.tsv") : fs::path(a.tsv);
  std::ofstream out(tsv);
  if (!out) throw DataError("cannot write " + tsv.string());
  write_utterance_tsv(out, test.beam ? *test.beam : test.greedy);
  log::info("per-utterance results written to ", tsv.string());
  return kOk;
}

struct AnalyzeArgs {
  std::string block, config;
  std::size_t frames = kReportFrames, alphabet_size = 60;
  std::string format = "both";
  bool skip_padding = false;
};

int run_analyze(const AnalyzeArgs& a) {
  if (a.block.empty() == a.config.empty()) throw ConfigError("analyze needs exactly one of --block or --config");
  FlopConvention conv;
  conv.skip_padding_taps = a.skip_padding;
  const ComplexityReport r = a.block.empty() ? report(resolve_config(a.config), a.alphabet_size, a.frames,
                                                      kFeatureBins, conv)
                                             : report_block(block_by_name(a.block), a.frames, kFeatureBins, conv);
  if (a.format == "text" || a.format == "both") std::cout << format_table(r);
  if (a.format == "both") std::cout << '\n';
  if (a.format == "kv" || a.format == "both") std::cout << format_key_values(r);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bnasr: CNN-BiGRU-CTC speech recognition toolkit", "bnasr"};
  app.require_subcommand(1);
  Globals g;
  std::string replay;
  app.add_option("--seed", g.seed, "Seed for every random choice")->capture_default_str();
  app.add_option("--precision", g.precision, "Floating-point width")->check(CLI::IsMember({32, 64}))->capture_default_str();
  app.add_option("--threads", g.threads, "Cap on parallel sections")->check(CLI::PositiveNumber)->capture_default_str();
  app.add_flag("-v", g.verbose, "More logging (repeatable)");
  app.add_flag("--quiet", g.quiet, "Only warnings and errors");

  // prepare
  PrepareArgs prep;
  bool no_split = false;
  auto* p = app.add_subcommand("prepare", "Index + audio directory -> manifests, splits and alphabet");
  p->add_option("--index", prep.index, "Tab-separated index (e.g. utt_spk_text.tsv)")->required();
  p->add_option("--audio-dir", prep.audio_dir, "Root of the audio tree")->required();
  p->add_option("--out-dir", prep.out_dir, "Where manifests are written")->required();
  p->add_option("--id-column", prep.columns.id_column)->capture_default_str();
  p->add_option("--text-column", prep.columns.text_column)->capture_default_str();
  p->add_option("--shard-prefix", prep.columns.shard_prefix, "Leading id characters naming the audio subdirectory")
      ->capture_default_str();
  p->add_option("--ext", prep.columns.extension)->capture_default_str();
  p->add_flag("--no-split", no_split, "Write only all.tsv");

  // features
  std::string feat_manifest, feat_dir, feat_out;
  auto* f = app.add_subcommand("features", "Precompute normalized log-spectrograms");
  f->add_option("--manifest", feat_manifest)->required();
  f->add_option("--out-dir", feat_dir)->required();
  f->add_option("--out-manifest", feat_out, "Defaults to <out-dir>/manifest.tsv");

  // train
  TrainArgs ta;
  auto* t = app.add_subcommand("train", "Train a model with CTC");
  t->add_option("--config", ta.config, "Registered model name or custom:<Block>-<layers>x<hidden>")->required();
  t->add_option("--train", ta.train)->required();
  t->add_option("--val", ta.val)->required();
  t->add_option("--out", ta.out, "Output directory for checkpoints and history.csv")->required();
  t->add_option("--alphabet", ta.alphabet, "Alphabet file; built from the training transcripts if absent");
  t->add_option("--resume", ta.resume, "Continue from a last.ckpt");
  t->add_option("--lr", ta.tc.initial_lr)->default_str(exact(ta.tc.initial_lr));
  t->add_option("--gamma", ta.tc.gamma)->default_str(exact(ta.tc.gamma));
  t->add_option("--momentum", ta.tc.momentum)->default_str(exact(ta.tc.momentum));
  t->add_option("--clip", ta.tc.clip_norm)->default_str(exact(ta.tc.clip_norm));
  t->add_option("--batch-size", ta.tc.batch_size)->capture_default_str();
  t->add_option("--epochs", ta.tc.max_epochs)->capture_default_str();
  t->add_option("--patience", ta.tc.patience)->capture_default_str();
  t->add_flag("--no-bucket", ta.no_bucket, "Random batches instead of length-sorted ones");
  t->add_flag("--preload", ta.preload, "Keep all features in memory");

  // lm-train
  std::string corpus, arpa_out;
  KneserNeyOptions kn;
  auto* l = app.add_subcommand("lm-train", "Interpolated Kneser-Ney n-gram model to ARPA");
  l->add_option("--order", kn.order)->capture_default_str();
  l->add_option("--discount", kn.discount)->default_str(exact(kn.discount));
  l->add_option("corpus", corpus, "One sentence per line")->required();
  l->add_option("output", arpa_out, "ARPA file to write")->required();

  // decode / eval share decoder flags
  DecodeArgs da;
  auto decoder_flags = [&](CLI::App* s) {
    s->add_option("--checkpoint", da.checkpoint)->required();
    s->add_option("--lm", da.lm, "ARPA language model for beam search");
    s->add_option("--beam", da.beam.beam_width)->capture_default_str();
    s->add_option("--alpha", da.beam.alpha)->default_str(exact(da.beam.alpha));
    s->add_option("--beta", da.beam.beta)->default_str(exact(da.beam.beta));
  };
  auto* d = app.add_subcommand("decode", "Transcribe one recording");
  decoder_flags(d);
  d->add_option("--wav", da.wav, "WAV file (or .feat cache)")->required();
  auto* e = app.add_subcommand("eval", "WER/CER of a checkpoint on a manifest");
  decoder_flags(e);
  e->add_option("--manifest", da.manifest, "Test manifest")->required();
  e->add_option("--val", da.val, "Validation manifest (scored without LM)");
  e->add_option("--tsv", da.tsv, "Per-utterance results; defaults next to the checkpoint");

  // analyze
  AnalyzeArgs aa;
  auto* an = app.add_subcommand("analyze", "Parameter and FLOP counts");
  an->add_option("--block", aa.block, "DS2, BlockA or BlockB");
  an->add_option("--config", aa.config, "Whole model from the registry");
  an->add_option("--frames", aa.frames)->capture_default_str();
  an->add_option("--alphabet-size", aa.alphabet_size)->capture_default_str();
  an->add_option("--format", aa.format)->check(CLI::IsMember({"text", "kv", "both"}))->capture_default_str();
  an->add_flag("--skip-padding", aa.skip_padding, "Do not count taps that fall in zero padding");

  // replay
  std::string replay_line;
  auto* r = app.add_subcommand("replay", "Rerun a logged resolved-config line");
  r->add_option("config", replay_line, "The JSON after 'resolved-config' (or a file holding it)")->required();

  if (argc <= 1) {
    std::cout << app.help();
    report_error("usage", kUsage, "no subcommand given");
    return kUsage;
  }

  std::vector<std::string> args(argv + 1, argv + argc);
  for (int round = 0; round < 2; ++round) {
    try {
      std::vector<std::string> reversed(args.rbegin(), args.rend());
      app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
      std::cout << app.help();
      return kOk;
    } catch (const CLI::CallForAllHelp&) {
      std::cout << app.help("", CLI::AppFormatMode::All);
      return kOk;
    } catch (const CLI::ParseError& err) {
      if (err.get_exit_code() == 0) return kOk;
      std::cerr << app.help();
      report_error("usage", kUsage, err.what());
      return kUsage;
    }
    if (!r->parsed()) break;
    if (round == 1) {
      report_error("usage", kUsage, "replay of a replay");
      return kUsage;
    }
    std::string text = replay_line;
    std::error_code ec;
    if (text.rfind('{', 0) != 0 && fs::is_regular_file(text, ec)) {
      std::ifstream in(text);
      std::getline(in, text);
    }
    const std::string tag = "resolved-config ";
    if (auto pos = text.find(tag); pos != std::string::npos) text = text.substr(pos + tag.size());
    try {
      args = argv_from_config(Json::parse(text), app);
    } catch (const std::exception& err) {
      report_error("usage", kUsage, err.what());
      return kUsage;
    }
    app.clear();
  }

  log::set_level(g.quiet ? log::Level::kWarn : (g.verbose > 0 ? log::Level::kDebug : log::Level::kInfo));
  Eigen::setNbThreads(g.threads);
  const CLI::App* sub = app.get_subcommands().front();
  log::info("resolved-config ", resolved_config(app, *sub).dump());

  try {
    const bool f64 = g.precision == 64;
    if (p->parsed()) {
      prep.split = !no_split;
      return run_prepare(prep, g);
    }
    if (f->parsed()) return run_features(feat_manifest, feat_dir, feat_out);
    if (t->parsed()) return f64 ? run_train<double>(ta, g) : run_train<float>(ta, g);
    if (l->parsed()) return run_lm_train(corpus, arpa_out, kn);
    if (d->parsed()) return f64 ? run_decode<double>(da) : run_decode<float>(da);
    if (e->parsed()) return f64 ? run_eval<double>(da) : run_eval<float>(da);
    if (an->parsed()) return run_analyze(aa);
  } catch (const Error& err) {
    const int code = exit_code(err.kind());
    report_error(to_string(err.kind()), code, err.what());
    return code;
  } catch (const std::filesystem::filesystem_error& err) {
    report_error("data", kData, err.what());
    return kData;
  } catch (const std::exception& err) {
    report_error("internal", kInternal, err.what());
    return kInternal;
  }
  report_error("internal", kInternal, "no handler for subcommand");
  return kInternal;
}
