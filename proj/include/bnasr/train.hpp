#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "bnasr/checkpoint.hpp"
#include "bnasr/ctc.hpp"
#include "bnasr/data.hpp"
#include "bnasr/eval.hpp"
#include "bnasr/log.hpp"
#include "bnasr/model.hpp"

namespace bnasr {

struct TrainConfig {
  double initial_lr = 3e-4;
  double gamma = 1.0 / 1.1;  // per-epoch decay factor
  double momentum = 0.9;
  double clip_norm = 400.0;
  std::size_t batch_size = 20;
  std::size_t max_epochs = 30;
  std::size_t patience = 3;
  std::uint64_t seed = 1;
  bool bucket = true;  // length-sorted batches

  void validate() const {
    if (!(initial_lr > 0)) throw ConfigError("initial learning rate must be positive");
    if (!(gamma > 0 && gamma <= 1)) throw ConfigError("gamma must be in (0, 1]");
    if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must be in [0, 1)");
    if (!(clip_norm > 0)) throw ConfigError("clip norm must be positive");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (max_epochs == 0) throw ConfigError("max_epochs must be at least 1");
    if (patience == 0) throw ConfigError("patience must be at least 1");
  }
};

inline Json to_json(const TrainConfig& c) {
  return {{"initial_lr", c.initial_lr}, {"gamma", c.gamma},           {"momentum", c.momentum},
          {"clip_norm", c.clip_norm},   {"batch_size", c.batch_size}, {"max_epochs", c.max_epochs},
          {"patience", c.patience},     {"seed", c.seed},             {"bucket", c.bucket}};
}

/// Learning rate for a 0-based epoch.
inline double lr_at(const TrainConfig& c, std::size_t epoch) {
  return c.initial_lr * std::pow(c.gamma, double(epoch));
}

/// True when the best value in `history` was reached `patience` or more
/// epochs ago. Only strict improvements count, so ties keep the older best.
inline bool early_stop(const std::vector<double>& history, std::size_t patience = 3) {
  if (history.empty()) throw ContractViolation("early_stop needs at least one epoch of history");
  std::size_t best = 0;
  for (std::size_t i = 1; i < history.size(); ++i) {
    if (history[i] < history[best]) best = i;
  }
  return history.size() - 1 - best >= patience;
}

/// L2 norm over the gradients of all trainable parameters.
template <typename Real>
double gradient_norm(const ParamList<Real>& params) {
  double s = 0;
  for (const auto& p : params) {
    if (!p.trainable) continue;
    for (Real g : p.tensor->grad()) s += double(g) * double(g);
  }
  return std::sqrt(s);
}

/// Rescales gradients so their global norm is at most `max_norm`. Returns
/// the norm before clipping.
template <typename Real>
double clip_gradients(ParamList<Real>& params, double max_norm) {
  const double norm = gradient_norm(params);
  if (std::isfinite(norm) && norm > max_norm) {
    const Real scale = Real(max_norm / norm);
    for (auto& p : params) {
      if (!p.trainable) continue;
      for (Real& g : p.tensor->grad()) g *= scale;
    }
  }
  return norm;
}

/// Classical momentum: v <- mu v + g, p <- p - lr v, after global-norm clipping.
template <typename Real>
class SgdMomentum {
 public:
  struct Step {
    double norm = 0;
    bool clipped = false;
    bool skipped = false;
  };

  SgdMomentum(double momentum, double clip_norm) : momentum_(momentum), clip_(clip_norm) {}

  Step step(ParamList<Real>& params, double lr) {
    Step s;
    s.norm = clip_gradients(params, clip_);
    if (!std::isfinite(s.norm)) {
      ++skipped_;
      s.skipped = true;
      log::warn("non-finite gradient norm; batch skipped (", skipped_, " so far)");
      return s;
    }
    s.clipped = s.norm > clip_;
    ensure_buffers(params);
    std::size_t k = 0;
    const Real mu = Real(momentum_), rate = Real(lr);
    for (auto& p : params) {
      if (!p.trainable) continue;
      auto& v = velocity_[k++];
      auto g = p.tensor->grad();
      Real* w = p.tensor->data();
      for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = mu * v[i] + g[i];
        w[i] -= rate * v[i];
      }
    }
    return s;
  }

  std::size_t skipped() const { return skipped_; }
  void set_skipped(std::size_t n) { skipped_ = n; }

  /// One buffer per trainable parameter, in parameter order (empty until the first step).
  std::vector<std::vector<Real>>& velocity() { return velocity_; }

  void ensure_buffers(const ParamList<Real>& params) {
    if (!velocity_.empty()) return;
    for (const auto& p : params) {
      if (p.trainable) velocity_.emplace_back(p.tensor->size(), Real(0));
    }
  }

 private:
  double momentum_, clip_;
  std::vector<std::vector<Real>> velocity_;
  std::size_t skipped_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 0-based
  double lr = 0;
  double train_loss = 0;
  double val_wer = 0;
};

struct TrainState {
  std::size_t epochs_done = 0;
  double best_val_wer = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t since_improvement = 0;
  std::size_t skipped_batches = 0;
  std::string rng;  // serialized mt19937_64
  std::vector<EpochRecord> history;
  bool stopped_early = false;

  std::vector<double> val_history() const {
    std::vector<double> v;
    for (const auto& e : history) v.push_back(e.val_wer);
    return v;
  }
};

inline Json to_json(const TrainState& s) {
  Json h = Json::array();
  for (const auto& e : s.history) h.push_back({e.epoch, e.lr, e.train_loss, e.val_wer});
  return {{"epochs_done", s.epochs_done},
          {"best_val_wer", std::isfinite(s.best_val_wer) ? Json(s.best_val_wer) : Json(nullptr)},
          {"best_epoch", s.best_epoch},
          {"since_improvement", s.since_improvement},
          {"skipped_batches", s.skipped_batches},
          {"rng", s.rng},
          {"history", h},
          {"stopped_early", s.stopped_early}};
}

inline TrainState train_state_from_json(const Json& j) {
  try {
    TrainState s;
    s.epochs_done = j.at("epochs_done").get<std::size_t>();
    s.best_val_wer = j.at("best_val_wer").is_null() ? std::numeric_limits<double>::infinity()
                                                    : j.at("best_val_wer").get<double>();
    s.best_epoch = j.at("best_epoch").get<std::size_t>();
    s.since_improvement = j.at("since_improvement").get<std::size_t>();
    s.skipped_batches = j.at("skipped_batches").get<std::size_t>();
    s.rng = j.at("rng").get<std::string>();
    s.stopped_early = j.value("stopped_early", false);
    for (const auto& e : j.at("history")) {
      s.history.push_back({e.at(0).get<std::size_t>(), e.at(1).get<double>(), e.at(2).get<double>(),
                           e.at(3).get<double>()});
    }
    return s;
  } catch (const Json::exception& e) {
    throw FormatError(std::string("checkpoint training state: ") + e.what(), 8);
  }
}

inline void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "epoch,lr,train_loss,val_wer\n";
  char line[128];
  for (const auto& e : history) {
    std::snprintf(line, sizeof(line), "%zu,%.9g,%.9g,%.4f\n", e.epoch + 1, e.lr, e.train_loss, e.val_wer);
    out << line;
  }
}

/// Corpus WER of greedy decoding, used as the early-stopping monitor.
template <typename Real>
double greedy_wer(Network<Real>& net, const Alphabet& alphabet, const Dataset& data, std::size_t batch_size) {
  EditCounts total;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    std::vector<Spectrogram> feats;
    for (std::size_t i = start; i < end; ++i) feats.push_back(data.get(i));
    std::vector<const Spectrogram*> ptrs;
    for (const auto& f : feats) ptrs.push_back(&f);
    const auto out = infer(net, ptrs);
    for (std::size_t i = start; i < end; ++i) {
      total += word_errors(alphabet.decode(data.targets[i]), alphabet.decode(greedy_decode(out[i - start])));
    }
  }
  return total.rate();
}

/// Epoch loop: batches in a seed-determined order, mean CTC loss per batch,
/// momentum SGD, greedy validation WER, early stopping, and a `last.ckpt`
/// plus `best.ckpt` in `out_dir` after every epoch.
template <typename Real>
class Trainer {
 public:
  Trainer(Network<Real>& net, const Alphabet& alphabet, Dataset train, Dataset val, TrainConfig config,
          std::filesystem::path out_dir)
      : net_(&net),
        alphabet_(alphabet),
        config_(config),
        out_dir_(std::move(out_dir)),
        opt_(config.momentum, config.clip_norm) {
    config_.validate();
    if (alphabet.num_classes() != net.num_classes()) throw ConfigError("alphabet does not match network output width");
    auto out_frames = [&](std::size_t t) { return net.output_frames(t); };
    train_ = filter_feasible(train, out_frames);
    val_ = filter_feasible(val, out_frames);
    if (train_.size() == 0) throw DataError("no trainable utterances after filtering");
    if (val_.size() == 0) throw DataError("no validation utterances after filtering");
    std::mt19937_64 rng(config_.seed);
    state_.rng = serialize(rng);
    std::filesystem::create_directories(out_dir_);
  }

  const TrainState& state() const { return state_; }
  const Dataset& train_set() const { return train_; }
  std::filesystem::path last_checkpoint() const { return out_dir_ / "last.ckpt"; }
  std::filesystem::path best_checkpoint() const { return out_dir_ / "best.ckpt"; }

  /// Restores parameters, momentum and progress from a `last.ckpt`.
  void resume(const std::filesystem::path& path) {
    const Checkpoint c = read_checkpoint(path);
    if (checkpoint_alphabet(c) != alphabet_) throw ConfigError("checkpoint alphabet differs from the data alphabet");
    load_parameters(*net_, c);
    if (!c.meta.contains("train")) throw FormatError("checkpoint has no training state", 8);
    state_ = train_state_from_json(c.meta["train"]);
    opt_.set_skipped(state_.skipped_batches);
    auto params = net_->parameters();
    auto& vel = opt_.velocity();
    vel.clear();
    if (c.find("momentum/" + first_trainable(params))) {
      for (const auto& p : params) {
        if (!p.trainable) continue;
        Tensor<Real> v = restore_tensor<Real>(c.at("momentum/" + p.name));
        if (v.size() != p.tensor->size()) throw ShapeError("momentum buffer for " + p.name + " has the wrong size");
        vel.push_back(std::move(v.storage()));
      }
    }
    log::info("resumed from ", path.string(), " after epoch ", state_.epochs_done);
  }

  /// Trains until early stopping or `max_epochs` total epochs.
  const TrainState& run() {
    while (state_.epochs_done < config_.max_epochs && !state_.stopped_early) run_epoch();
    return state_;
  }

  /// One epoch of updates followed by validation and checkpointing.
  void run_epoch() {
    const std::size_t epoch = state_.epochs_done;
    std::mt19937_64 rng = deserialize(state_.rng);
    const std::uint64_t epoch_seed = rng();
    state_.rng = serialize(rng);
    const double lr = lr_at(config_, epoch);
    const BatchPlan plan = make_batch_plan(train_.frames, config_.batch_size, config_.bucket, epoch_seed);

    std::size_t next = 0;
    PrefetchQueue<std::vector<Spectrogram>> queue([&]() -> std::optional<std::vector<Spectrogram>> {
      if (next == plan.size()) return std::nullopt;
      std::vector<Spectrogram> feats;
      for (std::size_t i : plan[next]) feats.push_back(train_.get(i));
      ++next;
      return feats;
    });

    double loss_sum = 0;
    std::size_t utterances = 0;
    auto params = net_->parameters();
    for (std::size_t b = 0; b < plan.size(); ++b) {
      const auto feats = queue.pop();
      if (!feats) throw ContractViolation("prefetch queue ended early");
      std::vector<const Spectrogram*> ptrs;
      for (const auto& f : *feats) ptrs.push_back(&f);
      net_->zero_grad();
      typename Network<Real>::Cache cache;
      const auto log_probs = net_->forward(ptrs, cache, Mode::kTrain);
      std::vector<Tensor<Real>> grads;
      const double n = double(ptrs.size());
      double batch_loss = 0;
      std::size_t used = 0;
      for (std::size_t k = 0; k < ptrs.size(); ++k) {
        const Labels& target = train_.targets[plan[b][k]];
        if (!ctc_feasible(target, log_probs[k].dim(0))) {
          // Feasibility was screened from durations; the decoded audio may be a frame shorter.
          log::warn("skipping ", train_.manifest.records[plan[b][k]].path, ": target too long for its frames");
          grads.emplace_back(log_probs[k].shape());
          continue;
        }
        auto r = ctc_loss(log_probs[k], target);
        ++used;
        batch_loss += r.loss;
        for (auto& g : r.grad.storage()) g = Real(double(g) / n);
        grads.push_back(std::move(r.grad));
      }
      net_->backward(grads, cache);
      const auto step = opt_.step(params, lr);
      if (!step.skipped) {
        loss_sum += batch_loss;
        utterances += used;
      }
      log::debug("epoch ", epoch + 1, " batch ", b + 1, "/", plan.size(), " loss ", batch_loss / n, " norm ",
                 step.norm);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = utterances ? loss_sum / double(utterances) : std::numeric_limits<double>::quiet_NaN();
    rec.val_wer = greedy_wer(*net_, alphabet_, val_, config_.batch_size);
    state_.history.push_back(rec);
    state_.skipped_batches = opt_.skipped();
    state_.epochs_done = epoch + 1;
    const bool improved = rec.val_wer < state_.best_val_wer;
    if (improved) {
      state_.best_val_wer = rec.val_wer;
      state_.best_epoch = epoch;
      state_.since_improvement = 0;
    } else {
      ++state_.since_improvement;
    }
    state_.stopped_early = early_stop(state_.val_history(), config_.patience);

    const Checkpoint c = make_checkpoint();
    write_checkpoint(last_checkpoint(), c);
    if (improved) write_checkpoint(best_checkpoint(), c);
    write_history_csv(out_dir_ / "history.csv", state_.history);
    char msg[160];
    std::snprintf(msg, sizeof(msg), "epoch %zu lr %.4g train_loss %.4f val_wer %.2f%s", epoch + 1, lr, rec.train_loss,
                  rec.val_wer, improved ? " (best)" : "");
    log::info(msg);
    if (state_.stopped_early) log::info("early stopping after epoch ", epoch + 1);
  }

  Checkpoint make_checkpoint() {
    Checkpoint c = network_checkpoint(*net_, alphabet_);
    c.meta["train"] = to_json(state_);
    c.meta["train_config"] = to_json(config_);
    auto params = net_->parameters();
    opt_.ensure_buffers(params);
    std::size_t k = 0;
    for (const auto& p : params) {
      if (!p.trainable) continue;
      Tensor<Real> v(p.tensor->shape(), opt_.velocity()[k++]);
      c.tensors.push_back(store_tensor("momentum/" + p.name, v));
    }
    return c;
  }

 private:
  static std::string serialize(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
  }
  static std::mt19937_64 deserialize(const std::string& s) {
    std::mt19937_64 rng;
    std::istringstream is(s);
    is >> rng;
    if (!is) throw FormatError("corrupt RNG state in checkpoint", 8);
    return rng;
  }
  static std::string first_trainable(const ParamList<Real>& params) {
    for (const auto& p : params) {
      if (p.trainable) return p.name;
    }
    return {};
  }

  Network<Real>* net_;
  Alphabet alphabet_;
  TrainConfig config_;
  std::filesystem::path out_dir_;
  SgdMomentum<Real> opt_;
  Dataset train_, val_;
  TrainState state_;
};

}  // namespace bnasr
