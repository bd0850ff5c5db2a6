#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "bnasr/synth.hpp"
#include "bnasr/train.hpp"

using namespace bnasr;
namespace fs = std::filesystem;

namespace {

struct Scalar {
  Tensor<double> t{{1}};
  ParamList<double> params;
  Scalar(double p, double g) {
    t[0] = p;
    t.enable_grad();
    t.grad()[0] = g;
    params.push_back({"p", &t, true});
  }
};

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Small corpus shared by the trainer tests, written once.
struct Corpus {
  fs::path dir = fs::temp_directory_path() / "bnasr_train_corpus";
  Manifest manifest;
  Alphabet alphabet;
  Corpus() {
    fs::remove_all(dir);
    manifest = synth::write_corpus(dir, 6, 11);
    std::vector<std::string> texts;
    for (const auto& r : manifest.records) texts.push_back(r.transcript);
    alphabet = build_alphabet(texts);
  }
  ~Corpus() { fs::remove_all(dir); }
};

const Corpus& corpus() {
  static Corpus c;
  return c;
}

TrainConfig tiny_config(std::size_t epochs) {
  TrainConfig c;
  c.initial_lr = 1e-3;
  c.batch_size = 2;
  c.max_epochs = epochs;
  c.patience = 10;
  c.seed = 5;
  return c;
}

TrainState train_into(const fs::path& out, std::size_t epochs, const fs::path* resume_from = nullptr) {
  const auto& c = corpus();
  auto net = build_model<double>(custom_config("BlockA", 1, 6), c.alphabet.size(), 7);
  Trainer<double> trainer(net, c.alphabet, make_dataset(c.manifest, c.alphabet), make_dataset(c.manifest, c.alphabet),
                          tiny_config(epochs), out);
  if (resume_from) trainer.resume(*resume_from);
  return trainer.run();
}

}  // namespace

TEST(Schedule, LearningRate) {
  TrainConfig c;
  EXPECT_EQ(lr_at(c, 0), 3e-4);
  EXPECT_NEAR(lr_at(c, 2), 3e-4 / 1.21, 1e-15);
  EXPECT_NEAR(lr_at(c, 2), 2.479e-4, 1e-7);
  c.gamma = 1;
  for (std::size_t e = 0; e < 30; ++e) EXPECT_EQ(lr_at(c, e), 3e-4);
  for (std::size_t e = 1; e < 30; ++e) EXPECT_LT(lr_at(TrainConfig{}, e), lr_at(TrainConfig{}, e - 1));
}

TEST(Schedule, ConfigValidation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.gamma = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.patience = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.max_epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(EarlyStop, HistoryCases) {
  EXPECT_FALSE(early_stop({37.0, 36.0, 35.0}));
  EXPECT_TRUE(early_stop({35.0, 36.0, 35.5, 35.9}));
  EXPECT_FALSE(early_stop({35.0, 36.0, 34.0, 36.0, 36.0}));
  // Ties are not improvements.
  EXPECT_TRUE(early_stop({35.0, 35.0, 35.0, 35.0}));
  EXPECT_FALSE(early_stop({35.0}, 1));
  EXPECT_TRUE(early_stop({35.0, 35.0}, 1));
  EXPECT_THROW(early_stop({}), ContractViolation);
}

TEST(Sgd, WorkedExamples) {
  {
    Scalar s(1.0, 2.0);
    SgdMomentum<double> opt(0.0, 400);
    opt.step(s.params, 0.1);
    EXPECT_DOUBLE_EQ(s.t[0], 0.8);
  }
  {
    Tensor<double> a({3}, 0.5), b({2, 2}, -1.0);
    a.enable_grad();
    b.enable_grad();
    ParamList<double> params{{"a", &a, true}, {"b", &b, true}};
    SgdMomentum<double> opt(0.0, 400);
    opt.step(params, 0.1);
    EXPECT_EQ(a, Tensor<double>({3}, 0.5));
    EXPECT_EQ(b, Tensor<double>({2, 2}, -1.0));
  }
  {
    Scalar s(0.0, 1.0);
    SgdMomentum<double> opt(0.9, 400);
    opt.step(s.params, 1.0);
    EXPECT_DOUBLE_EQ(s.t[0], -1.0);
    opt.step(s.params, 1.0);
    EXPECT_DOUBLE_EQ(s.t[0], -2.9);
  }
}

TEST(Sgd, NonTrainableBuffersUntouched) {
  Tensor<double> w({2}, 1.0), buf({2}, 3.0);
  w.enable_grad();
  buf.enable_grad();
  w.grad()[0] = w.grad()[1] = buf.grad()[0] = buf.grad()[1] = 1.0;
  ParamList<double> params{{"w", &w, true}, {"buf", &buf, false}};
  SgdMomentum<double> opt(0.9, 400);
  opt.step(params, 0.5);
  EXPECT_EQ(w, Tensor<double>({2}, 0.5));
  EXPECT_EQ(buf, Tensor<double>({2}, 3.0));
}

TEST(Sgd, ClippingNeverIncreasesNorm) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor<double> a({7}), b({3, 5});
    a.enable_grad();
    b.enable_grad();
    const double scale = std::pow(10.0, double(trial % 7) - 2);
    for (auto& x : a.grad()) x = scale * g(rng);
    for (auto& x : b.grad()) x = scale * g(rng);
    ParamList<double> params{{"a", &a, true}, {"b", &b, true}};
    const double max_norm = 0.5 + double(trial % 5);
    const double before = gradient_norm(params);
    EXPECT_EQ(clip_gradients(params, max_norm), before);
    const double after = gradient_norm(params);
    EXPECT_LE(after, before + 1e-12);
    EXPECT_LE(after, max_norm + 1e-9);
    if (before <= max_norm) {
      EXPECT_EQ(after, before);
    }
  }
}

TEST(Sgd, NonFiniteNormSkipsBatch) {
  Scalar s(1.0, std::numeric_limits<double>::quiet_NaN());
  SgdMomentum<double> opt(0.9, 400);
  const long before = log::warnings();
  const auto step = opt.step(s.params, 0.1);
  EXPECT_TRUE(step.skipped);
  EXPECT_EQ(opt.skipped(), 1u);
  EXPECT_EQ(s.t[0], 1.0);
  EXPECT_EQ(log::warnings(), before + 1);
  s.t.grad()[0] = std::numeric_limits<double>::infinity();
  opt.step(s.params, 0.1);
  EXPECT_EQ(opt.skipped(), 2u);
}

TEST(Checkpoint, RoundTripAndPrecisionConversion) {
  const fs::path dir = fs::temp_directory_path() / "bnasr_ckpt";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const Alphabet alphabet(std::vector<char32_t>{U' ', U'a', U'b', U'আ'});
  auto net = build_model<double>(custom_config("BlockA", 1, 5), alphabet.size(), 3);
  Checkpoint c = network_checkpoint(net, alphabet);
  c.meta["note"] = "x";
  write_checkpoint(dir / "a.ckpt", c);
  const Checkpoint r = read_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(r.meta["note"], "x");
  EXPECT_EQ(checkpoint_alphabet(r), alphabet);
  auto same = network_from_checkpoint<double>(r);
  auto lower = network_from_checkpoint<float>(r);
  auto pa = net.parameters(), pb = same.parameters();
  auto pc = lower.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].name, pb[i].name);
    EXPECT_EQ(*pa[i].tensor, *pb[i].tensor);
    for (std::size_t k = 0; k < pa[i].tensor->size(); ++k) {
      EXPECT_EQ((*pc[i].tensor)[k], float((*pa[i].tensor)[k]));
    }
  }
  // And back up again from a float checkpoint.
  write_checkpoint(dir / "f.ckpt", network_checkpoint(lower, alphabet));
  const auto raised = network_from_checkpoint<double>(read_checkpoint(dir / "f.ckpt"));
  EXPECT_EQ(raised.config().name, net.config().name);
  fs::remove_all(dir);
}

TEST(Checkpoint, CorruptFilesRaiseFormatErrors) {
  const Alphabet alphabet(std::vector<char32_t>{U'a', U'b'});
  auto net = build_model<float>(custom_config("BlockA", 1, 3), alphabet.size(), 3);
  const std::string bytes = encode_checkpoint(network_checkpoint(net, alphabet));
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, 5)), FormatError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
  std::string bad_json = bytes;
  bad_json[9] = '#';
  EXPECT_THROW(decode_checkpoint(bad_json), FormatError);
  std::string huge = bytes;
  huge[7] = '\x7f';
  EXPECT_THROW(decode_checkpoint(huge), FormatError);
  Checkpoint c = decode_checkpoint(bytes);
  c.meta["alphabet_hash"] = "0000000000000000";
  EXPECT_THROW(checkpoint_alphabet(c), FormatError);
}

TEST(Trainer, SingleEpochWritesOneCheckpoint) {
  const fs::path out = fs::temp_directory_path() / "bnasr_train_one";
  fs::remove_all(out);
  const auto state = train_into(out, 1);
  EXPECT_EQ(state.epochs_done, 1u);
  ASSERT_EQ(state.history.size(), 1u);
  EXPECT_EQ(state.history[0].lr, 1e-3);
  EXPECT_TRUE(std::isfinite(state.history[0].train_loss));
  const Checkpoint c = read_checkpoint(out / "last.ckpt");
  EXPECT_EQ(c.meta["train"]["epochs_done"], 1);
  EXPECT_NE(c.find("momentum/fc.weight"), nullptr);
  std::ifstream csv(out / "history.csv");
  std::string header, row, extra;
  std::getline(csv, header);
  std::getline(csv, row);
  EXPECT_EQ(header, "epoch,lr,train_loss,val_wer");
  EXPECT_EQ(row.substr(0, 2), "1,");
  EXPECT_FALSE(std::getline(csv, extra));
  fs::remove_all(out);
}

TEST(Trainer, ResumeMatchesUninterruptedRun) {
  const fs::path a = fs::temp_directory_path() / "bnasr_train_a";
  const fs::path b = fs::temp_directory_path() / "bnasr_train_b";
  const fs::path b2 = fs::temp_directory_path() / "bnasr_train_b2";
  for (const auto& p : {a, b, b2}) fs::remove_all(p);
  const auto full = train_into(a, 2);
  train_into(b, 1);
  const fs::path ckpt = b / "last.ckpt";
  const auto resumed = train_into(b2, 2, &ckpt);
  EXPECT_EQ(resumed.epochs_done, 2u);
  ASSERT_EQ(resumed.history.size(), full.history.size());
  for (std::size_t i = 0; i < full.history.size(); ++i) {
    EXPECT_EQ(resumed.history[i].train_loss, full.history[i].train_loss);
    EXPECT_EQ(resumed.history[i].val_wer, full.history[i].val_wer);
  }
  // Parameters, momentum and state all bitwise equal.
  EXPECT_EQ(file_bytes(a / "last.ckpt"), file_bytes(b2 / "last.ckpt"));
  for (const auto& p : {a, b, b2}) fs::remove_all(p);
}

TEST(Trainer, FixedSeedRunsAreBitwiseIdentical) {
  const fs::path a = fs::temp_directory_path() / "bnasr_train_s1";
  const fs::path b = fs::temp_directory_path() / "bnasr_train_s2";
  fs::remove_all(a);
  fs::remove_all(b);
  train_into(a, 2);
  train_into(b, 2);
  EXPECT_EQ(file_bytes(a / "last.ckpt"), file_bytes(b / "last.ckpt"));
  EXPECT_EQ(file_bytes(a / "best.ckpt"), file_bytes(b / "best.ckpt"));
  EXPECT_EQ(file_bytes(a / "history.csv"), file_bytes(b / "history.csv"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Trainer, EarlyStoppingEndsRun) {
  const auto& c = corpus();
  const fs::path out = fs::temp_directory_path() / "bnasr_train_stop";
  fs::remove_all(out);
  auto net = build_model<double>(custom_config("BlockA", 1, 4), c.alphabet.size(), 7);
  TrainConfig cfg = tiny_config(30);
  cfg.initial_lr = 1e-7;  // WER cannot move, so the first epoch stays best
  cfg.patience = 2;
  Trainer<double> trainer(net, c.alphabet, make_dataset(c.manifest, c.alphabet), make_dataset(c.manifest, c.alphabet),
                          cfg, out);
  const auto& state = trainer.run();
  EXPECT_TRUE(state.stopped_early);
  EXPECT_EQ(state.epochs_done, 3u);
  EXPECT_LE(state.since_improvement, cfg.patience);
  fs::remove_all(out);
}

TEST(Synth, CorpusIsDeterministicAndSpellable) {
  std::mt19937_64 r1(3), r2(3);
  const synth::Grammar g;
  for (int i = 0; i < 50; ++i) {
    const std::string s = synth::random_sentence(r1, g);
    EXPECT_EQ(s, synth::random_sentence(r2, g));
    const auto words = split_words(s);
    EXPECT_GE(words.size(), 2u);
    EXPECT_LE(words.size(), 4u);
    for (char32_t cp : utf8::decode(s)) {
      if (cp != U' ') {
        EXPECT_NO_THROW(synth::voice(cp));
      }
    }
  }
  std::mt19937_64 a(1), b(1);
  EXPECT_EQ(synth::render("ami", a).samples, synth::render("ami", b).samples);
}
