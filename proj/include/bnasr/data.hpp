#pragma once

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include "bnasr/alphabet.hpp"
#include "bnasr/ctc.hpp"
#include "bnasr/features.hpp"
#include "bnasr/log.hpp"
#include "bnasr/wav.hpp"

namespace bnasr {

struct ManifestRecord {
  std::string path;
  std::string transcript;
  double duration = 0;  // seconds
};

struct Manifest {
  std::vector<ManifestRecord> records;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  double total_seconds() const {
    double s = 0;
    for (const auto& r : records) s += r.duration;
    return s;
  }
  double total_hours() const { return total_seconds() / 3600.0; }
};

inline void validate(const Manifest& m) {
  std::unordered_set<std::string> seen;
  for (const auto& r : m.records) {
    if (!(r.duration > 0)) throw DataError("manifest: non-positive duration for " + r.path);
    if (!seen.insert(r.path).second) throw DataError("manifest: duplicate path " + r.path);
  }
}

namespace detail {
inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) return out;
    start = tab + 1;
  }
}
}  // namespace detail

/// TSV `path<TAB>transcript<TAB>duration_seconds`, no header.
inline Manifest read_manifest(std::istream& in) {
  Manifest m;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = detail::split_tabs(line);
    if (f.size() != 3) throw ParseError("manifest row needs 3 tab-separated fields, got " + std::to_string(f.size()), line_no);
    ManifestRecord r{f[0], f[1], 0};
    try {
      std::size_t used = 0;
      r.duration = std::stod(f[2], &used);
      if (used != f[2].size()) throw std::invalid_argument("trailing");
    } catch (const std::logic_error&) {
      throw ParseError("malformed duration '" + f[2] + "'", line_no);
    }
    if (!(r.duration > 0)) throw ParseError("duration must be positive", line_no);
    if (r.path.empty()) throw ParseError("empty path", line_no);
    m.records.push_back(std::move(r));
  }
  validate(m);
  return m;
}

inline Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open manifest " + path.string());
  try {
    return read_manifest(in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.line());
  }
}

inline void write_manifest(std::ostream& out, const Manifest& m) {
  char buf[32];
  for (const auto& r : m.records) {
    std::snprintf(buf, sizeof(buf), "%.6f", r.duration);
    out << r.path << '\t' << r.transcript << '\t' << buf << '\n';
  }
}

inline void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write manifest " + path.string());
  write_manifest(out, m);
}

/// Where the fields of a corpus index live. The defaults follow the OpenSLR
/// layout: `utt_id<TAB>speaker<TAB>transcript`, audio at
/// `<audio_dir>/<first 2 chars of id>/<id>.wav`.
struct ColumnMapping {
  std::size_t id_column = 0;
  std::size_t text_column = 2;
  std::size_t shard_prefix = 2;  // 0 = files directly under audio_dir
  std::string extension = ".wav";
};

inline std::filesystem::path audio_path_for(const std::filesystem::path& audio_dir, const std::string& id,
                                            const ColumnMapping& map) {
  std::filesystem::path p = audio_dir;
  if (map.shard_prefix > 0) p /= id.substr(0, std::min(map.shard_prefix, id.size()));
  return p / (id + map.extension);
}

/// One record per index row whose audio exists; durations come from the WAV headers.
inline Manifest scan_corpus(const std::filesystem::path& index, const std::filesystem::path& audio_dir,
                            const ColumnMapping& map = {}) {
  std::ifstream in(index, std::ios::binary);
  if (!in) throw DataError("cannot open corpus index " + index.string());
  Manifest m;
  std::string line;
  std::size_t line_no = 0, missing = 0;
  const std::size_t need = std::max(map.id_column, map.text_column) + 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = detail::split_tabs(line);
    if (f.size() < need) {
      throw ParseError(index.string() + ": row has " + std::to_string(f.size()) + " columns, mapping needs " +
                           std::to_string(need),
                       line_no);
    }
    const std::string& id = f[map.id_column];
    if (id.empty()) throw ParseError(index.string() + ": empty utterance id", line_no);
    const auto audio = audio_path_for(audio_dir, id, map);
    if (!std::filesystem::exists(audio)) {
      log::warn("missing audio for " + id + " (" + audio.string() + "), skipped");
      ++missing;
      continue;
    }
    const WavInfo info = read_wav_info(audio);
    m.records.push_back({audio.string(), f[map.text_column], info.duration()});
  }
  if (missing) log::info(std::to_string(missing) + " index rows without audio");
  validate(m);
  return m;
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitRatios {
  double train = 0.68, val = 0.12, test = 0.20;
};

struct Splits {
  Manifest train, val, test;
};

namespace detail {
// Fisher-Yates with a portable index draw, so that splits do not depend on
// the standard library's distribution implementation.
template <typename T>
void portable_shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
}
}  // namespace detail

/// Split boundaries floor(N*train) and floor(N*(train+val)).
inline std::pair<std::size_t, std::size_t> split_sizes(std::size_t n, const SplitRatios& r = {}) {
  if (r.train < 0 || r.val < 0 || r.test < 0 || std::abs(r.train + r.val + r.test - 1.0) > 1e-9) {
    throw ConfigError("split ratios must be non-negative and sum to 1");
  }
  // The small slack keeps exact products such as 100 * 0.68 from rounding down.
  const auto b1 = std::size_t(std::floor(double(n) * r.train + 1e-7));
  const auto b2 = std::min(n, std::size_t(std::floor(double(n) * (r.train + r.val) + 1e-7)));
  return {b1, b2};
}

inline Splits split(const Manifest& m, const SplitRatios& ratios = {}, std::uint64_t seed = 1) {
  const auto [b1, b2] = split_sizes(m.size(), ratios);
  std::vector<std::size_t> order(m.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  detail::portable_shuffle(order, rng);
  Splits s;
  for (std::size_t i = 0; i < order.size(); ++i) {
    Manifest& dst = i < b1 ? s.train : i < b2 ? s.val : s.test;
    dst.records.push_back(m.records[order[i]]);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Batching

/// Feature frames for a clip of `seconds`, after resampling to the feature rate.
inline std::size_t frames_for_duration(double seconds) {
  return frame_count(std::size_t(std::llround(seconds * kFeatureRate)));
}

using BatchPlan = std::vector<std::vector<std::size_t>>;

/// Groups utterance indices into batches. With bucketing, utterances are
/// ordered by length (random tie order) and cut into consecutive batches;
/// without, the order is a plain shuffle. Batch order is shuffled either way
/// and the last, possibly smaller, batch is kept. A pure function of its
/// arguments.
inline BatchPlan make_batch_plan(const std::vector<std::size_t>& lengths, std::size_t batch_size, bool bucket,
                                 std::uint64_t seed) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(lengths.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  detail::portable_shuffle(order, rng);
  if (bucket) {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return lengths[a] < lengths[b]; });
  }
  BatchPlan plan;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    plan.emplace_back(order.begin() + std::ptrdiff_t(i),
                      order.begin() + std::ptrdiff_t(std::min(order.size(), i + batch_size)));
  }
  detail::portable_shuffle(plan, rng);
  return plan;
}

/// Fraction of padded frames over all batches of a plan.
inline double padding_fraction(const BatchPlan& plan, const std::vector<std::size_t>& lengths) {
  std::size_t padded = 0, total = 0;
  for (const auto& b : plan) {
    std::size_t t_max = 0;
    for (std::size_t i : b) t_max = std::max(t_max, lengths[i]);
    for (std::size_t i : b) {
      padded += t_max - lengths[i];
      total += t_max;
    }
  }
  return total ? double(padded) / double(total) : 0.0;
}

/// Indices whose target fits the model's output length; others are skipped with a warning.
inline std::vector<std::size_t> feasible_indices(const std::vector<Labels>& targets,
                                                 const std::vector<std::size_t>& output_frames,
                                                 const std::vector<std::string>* names = nullptr) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (ctc_feasible(targets[i], output_frames[i])) {
      keep.push_back(i);
    } else {
      log::warn("skipping " + (names ? (*names)[i] : "utterance " + std::to_string(i)) + ": target of " +
                std::to_string(targets[i].size()) + " labels does not fit " + std::to_string(output_frames[i]) +
                " output frames");
    }
  }
  return keep;
}

// ---------------------------------------------------------------------------
// Datasets

/// Features for a manifest path: `.feat` caches are read directly, anything
/// else is decoded as WAV.
inline Spectrogram load_features(const std::string& path) {
  if (std::filesystem::path(path).extension() == ".feat") return read_feature_cache(path);
  return extract_features(load_wav(path));
}

/// Manifest plus encoded targets and frame counts. Features are loaded lazily
/// unless `preload` was called.
struct Dataset {
  Manifest manifest;
  std::vector<Labels> targets;
  std::vector<std::size_t> frames;
  std::vector<Spectrogram> features;  // empty unless preloaded

  std::size_t size() const { return manifest.size(); }

  void preload() {
    features.clear();
    features.reserve(size());
    for (std::size_t i = 0; i < size(); ++i) {
      features.push_back(load_features(manifest.records[i].path));
      frames[i] = features.back().frames;
    }
  }

  Spectrogram get(std::size_t i) const {
    return features.empty() ? load_features(manifest.records[i].path) : features[i];
  }
};

inline Dataset make_dataset(Manifest m, const Alphabet& alphabet) {
  Dataset d;
  d.targets.reserve(m.size());
  d.frames.reserve(m.size());
  for (const auto& r : m.records) {
    d.targets.push_back(alphabet.encode(r.transcript, r.path));
    d.frames.push_back(frames_for_duration(r.duration));
  }
  d.manifest = std::move(m);
  return d;
}

/// Drops utterances whose targets cannot fit the model's output length.
template <typename OutFrames>
Dataset filter_feasible(const Dataset& d, OutFrames&& out_frames) {
  std::vector<std::size_t> outs;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < d.size(); ++i) {
    bool ok = true;
    std::size_t o = 0;
    try {
      o = out_frames(d.frames[i]);
    } catch (const ShapeError&) {
      ok = false;  // shorter than the first kernel
    }
    outs.push_back(ok ? o : 0);
    names.push_back(d.manifest.records[i].path);
  }
  Dataset out;
  for (std::size_t i : feasible_indices(d.targets, outs, &names)) {
    out.manifest.records.push_back(d.manifest.records[i]);
    out.targets.push_back(d.targets[i]);
    out.frames.push_back(d.frames[i]);
    if (!d.features.empty()) out.features.push_back(d.features[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prefetching

/// Runs `produce` on a worker thread, keeping at most `capacity` finished
/// items ahead of the consumer. `produce` returns nullopt when exhausted.
/// An exception in the producer is rethrown from `pop`.
template <typename T>
class PrefetchQueue {
 public:
  PrefetchQueue(std::function<std::optional<T>()> produce, std::size_t capacity = 2)
      : produce_(std::move(produce)), capacity_(capacity) {
    if (capacity_ == 0) throw ConfigError("prefetch capacity must be positive");
    worker_ = std::thread([this] { run(); });
  }
  PrefetchQueue(const PrefetchQueue&) = delete;
  PrefetchQueue& operator=(const PrefetchQueue&) = delete;

  ~PrefetchQueue() {
    {
      std::lock_guard<std::mutex> lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    worker_.join();
  }

  std::optional<T> pop() {
    std::unique_lock<std::mutex> lock(mu_);
    cv_.wait(lock, [&] { return !items_.empty() || done_; });
    if (items_.empty()) {
      if (error_) std::rethrow_exception(error_);
      return std::nullopt;
    }
    T item = std::move(items_.front());
    items_.pop_front();
    cv_.notify_all();
    return item;
  }

  /// Largest number of items ever buffered at once.
  std::size_t high_water() const {
    std::lock_guard<std::mutex> lock(mu_);
    return high_water_;
  }

 private:
  void run() {
    try {
      for (;;) {
        {
          std::unique_lock<std::mutex> lock(mu_);
          cv_.wait(lock, [&] { return items_.size() < capacity_ || stop_; });
          if (stop_) break;
        }
        std::optional<T> item = produce_();
        std::lock_guard<std::mutex> lock(mu_);
        if (!item) break;
        items_.push_back(std::move(*item));
        high_water_ = std::max(high_water_, items_.size());
        cv_.notify_all();
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(mu_);
      error_ = std::current_exception();
    }
    std::lock_guard<std::mutex> lock(mu_);
    done_ = true;
    cv_.notify_all();
  }

  std::function<std::optional<T>()> produce_;
  std::size_t capacity_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<T> items_;
  std::size_t high_water_ = 0;
  bool stop_ = false, done_ = false;
  std::exception_ptr error_;
  std::thread worker_;
};

}  // namespace bnasr
