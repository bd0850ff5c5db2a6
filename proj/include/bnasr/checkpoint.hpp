#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bnasr/alphabet.hpp"
#include "bnasr/error.hpp"
#include "bnasr/model.hpp"
#include "bnasr/tensor.hpp"

namespace bnasr {

// Checkpoint file layout:
//   bytes 0..7   little-endian uint64 length N of the JSON index
//   bytes 8..8+N JSON: {"meta": {...}, "tensors": [{name, dtype, shape, offset, nbytes}, ...]}
//   then tensor payloads, little-endian, at `offset` relative to the end of the index.

using Json = nlohmann::json;

struct StoredTensor {
  std::string name;
  std::string dtype;  // "f32" or "f64"
  Shape shape;
  std::vector<unsigned char> bytes;
};

namespace detail {

inline bool little_endian_host() {
  const std::uint16_t one = 1;
  unsigned char b;
  std::memcpy(&b, &one, 1);
  return b == 1;
}

inline void byteswap_words(unsigned char* p, std::size_t nbytes, std::size_t word) {
  for (std::size_t i = 0; i + word <= nbytes; i += word) std::reverse(p + i, p + i + word);
}

inline std::size_t dtype_size(const std::string& dtype, std::size_t offset) {
  if (dtype == "f32") return 4;
  if (dtype == "f64") return 8;
  throw FormatError("unknown tensor dtype '" + dtype + "'", offset);
}

}  // namespace detail

template <typename Real>
StoredTensor store_tensor(std::string name, const Tensor<Real>& t) {
  StoredTensor s{std::move(name), std::is_same_v<Real, float> ? "f32" : "f64", t.shape(), {}};
  s.bytes.resize(t.size() * sizeof(Real));
  if (t.size()) std::memcpy(s.bytes.data(), t.data(), s.bytes.size());
  if (!detail::little_endian_host()) detail::byteswap_words(s.bytes.data(), s.bytes.size(), sizeof(Real));
  return s;
}

/// Values of a stored tensor converted to Real (f32 <-> f64 as needed).
template <typename Real>
Tensor<Real> restore_tensor(const StoredTensor& s) {
  const std::size_t word = detail::dtype_size(s.dtype, 0);
  const std::size_t n = shape_size(s.shape);
  if (n * word != s.bytes.size()) throw FormatError("tensor " + s.name + " payload size mismatch", 0);
  std::vector<unsigned char> raw = s.bytes;
  if (!detail::little_endian_host()) detail::byteswap_words(raw.data(), raw.size(), word);
  Tensor<Real> t(s.shape);
  for (std::size_t i = 0; i < n; ++i) {
    if (word == 4) {
      float v;
      std::memcpy(&v, raw.data() + 4 * i, 4);
      t[i] = Real(v);
    } else {
      double v;
      std::memcpy(&v, raw.data() + 8 * i, 8);
      t[i] = Real(v);
    }
  }
  return t;
}

struct Checkpoint {
  Json meta = Json::object();
  std::vector<StoredTensor> tensors;

  const StoredTensor* find(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }
  const StoredTensor& at(const std::string& name) const {
    const StoredTensor* t = find(name);
    if (!t) throw DataError("checkpoint has no tensor '" + name + "'");
    return *t;
  }
};

inline std::string encode_checkpoint(const Checkpoint& c) {
  Json index;
  index["meta"] = c.meta;
  index["tensors"] = Json::array();
  std::uint64_t offset = 0;
  for (const auto& t : c.tensors) {
    index["tensors"].push_back(
        {{"name", t.name}, {"dtype", t.dtype}, {"shape", t.shape}, {"offset", offset}, {"nbytes", t.bytes.size()}});
    offset += t.bytes.size();
  }
  const std::string head = index.dump();
  std::string out(8, '\0');
  const std::uint64_t n = head.size();
  for (int i = 0; i < 8; ++i) out[std::size_t(i)] = char((n >> (8 * i)) & 0xff);
  out += head;
  for (const auto& t : c.tensors) out.append(reinterpret_cast<const char*>(t.bytes.data()), t.bytes.size());
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 8) throw FormatError("checkpoint truncated before index length", bytes.size());
  std::uint64_t n = 0;
  for (int i = 0; i < 8; ++i) n |= std::uint64_t(static_cast<unsigned char>(bytes[std::size_t(i)])) << (8 * i);
  if (n > bytes.size() - 8) throw FormatError("checkpoint index length exceeds file size", 0);
  Json index;
  try {
    index = Json::parse(bytes.begin() + 8, bytes.begin() + 8 + std::ptrdiff_t(n));
  } catch (const Json::parse_error& e) {
    throw FormatError(std::string("checkpoint index is not valid JSON: ") + e.what(), 8 + e.byte);
  }
  const std::size_t base = 8 + std::size_t(n);
  Checkpoint c;
  try {
    c.meta = index.at("meta");
    for (const auto& e : index.at("tensors")) {
      StoredTensor t;
      t.name = e.at("name").get<std::string>();
      t.dtype = e.at("dtype").get<std::string>();
      t.shape = e.at("shape").get<Shape>();
      const auto off = e.at("offset").get<std::uint64_t>();
      const auto nb = e.at("nbytes").get<std::uint64_t>();
      if (off > bytes.size() - base || nb > bytes.size() - base - off) {
        throw FormatError("tensor " + t.name + " extends past end of file", base + off);
      }
      if (shape_size(t.shape) * detail::dtype_size(t.dtype, base + off) != nb) {
        throw FormatError("tensor " + t.name + " size does not match its shape", base + off);
      }
      t.bytes.assign(bytes.begin() + std::ptrdiff_t(base + off), bytes.begin() + std::ptrdiff_t(base + off + nb));
      c.tensors.push_back(std::move(t));
    }
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed checkpoint index: ") + e.what(), 8);
  }
  return c;
}

/// Written to a sibling temporary file and renamed, so an interrupted save
/// never leaves a half-written checkpoint behind.
inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    const std::string bytes = encode_checkpoint(c);
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

// ---------------------------------------------------------------------------
// Networks

inline Json config_json(const ModelConfig& c) {
  return {{"name", c.name}, {"block", c.block}, {"rnn_layers", c.rnn_layers}, {"rnn_hidden", c.rnn_hidden},
          {"custom", c.custom}};
}

inline ModelConfig config_from_json(const Json& j) {
  try {
    ModelConfig c;
    c.name = j.at("name").get<std::string>();
    c.block = j.at("block").get<std::string>();
    c.rnn_layers = j.at("rnn_layers").get<std::size_t>();
    c.rnn_hidden = j.at("rnn_hidden").get<std::size_t>();
    c.custom = j.value("custom", false);
    return c;
  } catch (const Json::exception& e) {
    throw FormatError(std::string("checkpoint model config: ") + e.what(), 8);
  }
}

inline std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Model weights, buffers, configuration and alphabet. Training state is
/// added by the trainer under meta["train"] and "momentum/..." tensors.
template <typename Real>
Checkpoint network_checkpoint(Network<Real>& net, const Alphabet& alphabet) {
  if (alphabet.num_classes() != net.num_classes()) throw ConfigError("alphabet does not match network output width");
  Checkpoint c;
  c.meta["format"] = "bnasr-checkpoint";
  c.meta["version"] = 1;
  c.meta["config"] = config_json(net.config());
  std::vector<std::uint32_t> cps(alphabet.symbols().begin(), alphabet.symbols().end());
  c.meta["alphabet"] = cps;
  c.meta["alphabet_hash"] = hex64(alphabet.hash());
  c.meta["precision"] = std::is_same_v<Real, float> ? "f32" : "f64";
  for (auto& p : net.parameters()) c.tensors.push_back(store_tensor(p.name, *p.tensor));
  return c;
}

inline Alphabet checkpoint_alphabet(const Checkpoint& c) {
  std::vector<char32_t> symbols;
  try {
    for (auto v : c.meta.at("alphabet")) symbols.push_back(char32_t(v.get<std::uint32_t>()));
  } catch (const Json::exception& e) {
    throw FormatError(std::string("checkpoint alphabet: ") + e.what(), 8);
  }
  Alphabet a(std::move(symbols));
  if (c.meta.contains("alphabet_hash") && c.meta["alphabet_hash"] != hex64(a.hash())) {
    throw FormatError("checkpoint alphabet hash mismatch", 8);
  }
  return a;
}

inline ModelConfig checkpoint_config(const Checkpoint& c) {
  if (!c.meta.contains("config")) throw FormatError("checkpoint has no model config", 8);
  return config_from_json(c.meta["config"]);
}

/// Copies stored tensors into `net`, converting precision if needed.
template <typename Real>
void load_parameters(Network<Real>& net, const Checkpoint& c) {
  for (auto& p : net.parameters()) {
    Tensor<Real> t = restore_tensor<Real>(c.at(p.name));
    if (t.shape() != p.tensor->shape()) {
      throw ShapeError("checkpoint tensor " + p.name + " has shape " + shape_str(t.shape()) + ", network expects " +
                       shape_str(p.tensor->shape()));
    }
    p.tensor->storage() = std::move(t.storage());
  }
}

template <typename Real>
Network<Real> network_from_checkpoint(const Checkpoint& c) {
  const Alphabet a = checkpoint_alphabet(c);
  Network<Real> net(checkpoint_config(c), a.size());
  load_parameters(net, c);
  return net;
}

}  // namespace bnasr
