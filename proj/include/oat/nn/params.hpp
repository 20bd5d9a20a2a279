#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "oat/error.hpp"
#include "oat/io.hpp"
#include "oat/nn/tensor.hpp"
#include "oat/rng.hpp"

namespace oat::nn {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Named trainable tensors in insertion order, plus their ADAM moments.
template <class T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
    std::vector<T> m;  // first moment
    std::vector<T> v;  // second moment
  };

  Tensor<T> add(const std::string& name, Shape shape, std::vector<T> values) {
    if (index_.count(name)) throw ConfigError("param store: duplicate parameter name '" + name + "'");
    Tensor<T> t(std::move(shape), std::move(values), true);
    index_[name] = entries_.size();
    entries_.push_back({name, t, std::vector<T>(t.size(), T(0)), std::vector<T>(t.size(), T(0))});
    return t;
  }

  Tensor<T> add_constant(const std::string& name, Shape shape, T value) {
    const std::size_t n = numel(shape);
    return add(name, std::move(shape), std::vector<T>(n, value));
  }

  /// Glorot-uniform initialization in +-sqrt(6 / (fan_in + fan_out)).
  Tensor<T> add_glorot(const std::string& name, Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<T> values(numel(shape));
    for (T& x : values) x = static_cast<T>(rng.uniform(-limit, limit));
    return add(name, std::move(shape), std::move(values));
  }

  const Tensor<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("param store: no parameter named '" + name + "'");
    return entries_[it->second].tensor;
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.size();
    return n;
  }

  long step() const noexcept { return step_; }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

  void set_trainable(bool on) {
    for (auto& e : entries_) e.tensor.set_requires_grad(on);
  }

  /// FNV-1a over names, shapes and value bytes.
  std::uint64_t hash() const {
    std::uint64_t h = fnv1a64("");
    for (const auto& e : entries_) {
      h = fnv1a64(e.name, h);
      h = fnv1a64(shape_str(e.tensor.shape()), h);
      const auto vals = e.tensor.values();
      h = fnv1a64(std::string_view(reinterpret_cast<const char*>(vals.data()), vals.size() * sizeof(T)), h);
    }
    return h;
  }

  /// Copies values (not optimizer state) from another store with identical layout.
  void copy_values_from(const ParamStore& other) {
    if (other.entries_.size() != entries_.size()) throw ConfigError("param store: layout mismatch");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      auto src = other.entries_[i].tensor.values();
      auto dst = entries_[i].tensor.values();
      if (other.entries_[i].name != entries_[i].name || src.size() != dst.size())
        throw ConfigError("param store: layout mismatch at '" + entries_[i].name + "'");
      std::copy(src.begin(), src.end(), dst.begin());
    }
  }

  template <class U>
  friend void adam_step(ParamStore<U>& store, const AdamConfig& cfg);

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
  long step_ = 0;
};

/// Bias-corrected ADAM update of every parameter; gradients are cleared afterwards.
template <class T>
void adam_step(ParamStore<T>& store, const AdamConfig& cfg) {
  for (const auto& e : store.entries_) {
    if (!e.tensor.has_grad()) throw NumericError("adam_step: parameter '" + e.name + "' has no gradient");
  }
  ++store.step_;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(store.step_));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(store.step_));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  for (auto& e : store.entries_) {
    auto p = e.tensor.values();
    auto g = e.tensor.grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      e.m[i] = b1 * e.m[i] + (T(1) - b1) * g[i];
      e.v[i] = b2 * e.v[i] + (T(1) - b2) * g[i] * g[i];
      const double mhat = static_cast<double>(e.m[i]) / c1;
      const double vhat = static_cast<double>(e.v[i]) / c2;
      p[i] -= static_cast<T>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
    e.tensor.zero_grad();
  }
}

// ---------------------------------------------------------------------------------------------
// Checkpoint file: "OACKPT01", u32 tensor count, then per tensor u32 name length, name bytes,
// u8 rank, rank x u32 dims, f32 payload; all little-endian.

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
  friend bool operator==(const CheckpointTensor&, const CheckpointTensor&) = default;
};

inline constexpr char kCheckpointMagic[] = "OACKPT01";

inline std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointTensor>& tensors) {
  io::ByteWriter w;
  w.bytes(kCheckpointMagic, 8);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.shape.size() > 255) throw DataError("checkpoint: rank too large for '" + t.name + "'");
    if (t.values.size() != numel(t.shape)) throw DataError("checkpoint: size mismatch for '" + t.name + "'");
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.u8(static_cast<std::uint8_t>(t.shape.size()));
    for (std::size_t d : t.shape) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.values) w.f32(v);
  }
  return w.take();
}

inline std::vector<CheckpointTensor> decode_checkpoint(const std::vector<std::uint8_t>& buf) {
  if (buf.size() < 8) throw FormatError(FormatError::Kind::kMalformedHeader, "checkpoint: file too short for magic");
  io::ByteReader r(buf, "checkpoint");
  const std::string magic = r.str(8);
  if (magic != std::string(kCheckpointMagic, 8))
    throw FormatError(FormatError::Kind::kUnsupportedMagic, "checkpoint: unsupported magic '" + magic + "'");
  const std::uint32_t count = r.u32();
  std::vector<CheckpointTensor> out;
  for (std::uint32_t k = 0; k < count; ++k) {
    CheckpointTensor t;
    t.name = r.str(r.u32());
    const std::uint8_t rank = r.u8();
    for (std::uint8_t d = 0; d < rank; ++d) t.shape.push_back(r.u32());
    const std::size_t n = numel(t.shape);
    r.need(4 * n);
    t.values.resize(n);
    for (float& v : t.values) v = r.f32();
    out.push_back(std::move(t));
  }
  return out;
}

template <class T>
void append_checkpoint(std::vector<CheckpointTensor>& out, const ParamStore<T>& store) {
  for (const auto& e : store.entries()) {
    CheckpointTensor t{e.name, e.tensor.shape(), {}};
    t.values.reserve(e.tensor.size());
    for (T v : e.tensor.values()) t.values.push_back(static_cast<float>(v));
    out.push_back(std::move(t));
  }
}

/// Loads every parameter of `store` from `tensors` by name; shapes must match exactly.
template <class T>
void assign_checkpoint(ParamStore<T>& store, const std::vector<CheckpointTensor>& tensors) {
  std::map<std::string, const CheckpointTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  for (auto& e : store.entries()) {
    auto it = by_name.find(e.name);
    if (it == by_name.end()) throw DataError("checkpoint: missing tensor '" + e.name + "'");
    if (it->second->shape != e.tensor.shape())
      throw DataError("checkpoint: tensor '" + e.name + "' has shape " + shape_str(it->second->shape) +
                      ", expected " + shape_str(e.tensor.shape()));
    auto dst = e.tensor.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(it->second->values[i]);
  }
}

inline void save_checkpoint(const std::vector<CheckpointTensor>& tensors, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_checkpoint(tensors));
}

inline std::vector<CheckpointTensor> load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(io::read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(e.kind(), path.string() + ": " + e.what());
  }
}

}  // namespace oat::nn
