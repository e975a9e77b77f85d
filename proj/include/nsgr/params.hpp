#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "nsgr/autodiff.hpp"
#include "nsgr/errors.hpp"
#include "nsgr/tensor.hpp"

namespace nsgr {

// Named parameter tensors with accumulated gradients, per-tensor trainable
// flags and Adam state. Iteration order is the sorted name order, so
// serialization and checksums are deterministic.
class ParamStore {
 public:
  struct Entry {
    Tensor value;
    Tensor grad;
    bool trainable = true;
    // Adam state
    Tensor m, v;
    std::uint64_t step = 0;
  };

  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  Tensor& create(const std::string& name, std::size_t rows, std::size_t cols, bool trainable = true) {
    if (has(name)) throw ConfigError("parameter already exists: " + name);
    Entry e;
    e.value = Tensor(rows, cols);
    e.grad = Tensor(rows, cols);
    e.m = Tensor(rows, cols);
    e.v = Tensor(rows, cols);
    e.trainable = trainable;
    return entries_.emplace(name, std::move(e)).first->second.value;
  }

  Tensor& create_normal(const std::string& name, std::size_t rows, std::size_t cols, Rng& rng,
                        double stddev = 0.01, bool trainable = true) {
    Tensor& t = create(name, rows, cols, trainable);
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : t.data) v = dist(rng);
    return t;
  }

  Entry& entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }
  const Entry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }

  Tensor& value(const std::string& name) { return entry(name).value; }
  const Tensor& value(const std::string& name) const { return entry(name).value; }
  Tensor& grad(const std::string& name) { return entry(name).grad; }

  bool trainable(const std::string& name) const { return entry(name).trainable; }
  void set_trainable(const std::string& name, bool flag) { entry(name).trainable = flag; }
  void freeze_all() {
    for (auto& [k, e] : entries_) e.trainable = false;
  }

  // Graph leaf for this parameter. Gradients accumulate back into the store
  // when the parameter is trainable; frozen parameters yield plain constants.
  Var var(const std::string& name) {
    Entry& e = entry(name);
    Var v = make_leaf(e.value, e.trainable);
    if (e.trainable) {
      Tensor* g = &e.grad;
      v.set_leaf_hook([g](const Tensor& dv) { add_inplace(*g, dv); });
    }
    return v;
  }

  void zero_grads() {
    for (auto& [k, e] : entries_) std::fill(e.grad.data.begin(), e.grad.data.end(), 0.0);
  }

  // One Adam update over all trainable entries. Frozen entries are untouched
  // byte for byte.
  void adam_step(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    for (auto& [k, e] : entries_) {
      if (!e.trainable) continue;
      e.step += 1;
      const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(e.step));
      const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(e.step));
      for (std::size_t i = 0; i < e.value.data.size(); ++i) {
        const double g = e.grad.data[i];
        e.m.data[i] = beta1 * e.m.data[i] + (1.0 - beta1) * g;
        e.v.data[i] = beta2 * e.v.data[i] + (1.0 - beta2) * g * g;
        const double mhat = e.m.data[i] / bc1;
        const double vhat = e.v.data[i] / bc2;
        e.value.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, e] : entries_) out.push_back(k);
    return out;
  }
  std::size_t size() const { return entries_.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [k, e] : entries_) n += e.value.size();
    return n;
  }

  // ---- checkpoint serialization ----
  // Format: magic "NSGRPRM\0", u32 version, u64 record count, then per record:
  // u32 name length, name bytes, u64 rows, u64 cols, u8 trainable, and
  // rows*cols doubles, all little-endian.

  std::vector<std::uint8_t> serialize() const {
    std::vector<std::uint8_t> buf;
    auto put_bytes = [&buf](const void* p, std::size_t n) {
      const auto* b = static_cast<const std::uint8_t*>(p);
      buf.insert(buf.end(), b, b + n);
    };
    auto put_u32 = [&](std::uint32_t v) {
      std::uint8_t b[4];
      for (int i = 0; i < 4; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
      put_bytes(b, 4);
    };
    auto put_u64 = [&](std::uint64_t v) {
      std::uint8_t b[8];
      for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
      put_bytes(b, 8);
    };
    auto put_f64 = [&](double d) {
      std::uint64_t v;
      std::memcpy(&v, &d, 8);
      put_u64(v);
    };

    put_bytes("NSGRPRM\0", 8);
    put_u32(kFormatVersion);
    put_u64(entries_.size());
    for (const auto& [name, e] : entries_) {
      put_u32(static_cast<std::uint32_t>(name.size()));
      put_bytes(name.data(), name.size());
      put_u64(e.value.rows);
      put_u64(e.value.cols);
      buf.push_back(e.trainable ? 1 : 0);
      for (double d : e.value.data) put_f64(d);
    }
    return buf;
  }

  void deserialize(const std::vector<std::uint8_t>& buf) {
    std::size_t pos = 0;
    auto need = [&](std::size_t n) {
      if (pos + n > buf.size()) throw DataError("checkpoint truncated");
    };
    auto get_u32 = [&]() {
      need(4);
      std::uint32_t v = 0;
      for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + i]) << (8 * i);
      pos += 4;
      return v;
    };
    auto get_u64 = [&]() {
      need(8);
      std::uint64_t v = 0;
      for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[pos + i]) << (8 * i);
      pos += 8;
      return v;
    };

    need(8);
    if (std::memcmp(buf.data(), "NSGRPRM\0", 8) != 0) throw DataError("not a parameter checkpoint");
    pos += 8;
    const std::uint32_t version = get_u32();
    if (version != kFormatVersion)
      throw DataError("unsupported checkpoint version " + std::to_string(version));
    const std::uint64_t count = get_u64();
    entries_.clear();
    for (std::uint64_t r = 0; r < count; ++r) {
      const std::uint32_t nlen = get_u32();
      need(nlen);
      std::string name(reinterpret_cast<const char*>(buf.data() + pos), nlen);
      pos += nlen;
      const std::uint64_t rows = get_u64();
      const std::uint64_t cols = get_u64();
      need(1);
      const bool trainable = buf[pos++] != 0;
      Tensor& t = create(name, rows, cols, trainable);
      for (double& d : t.data) {
        const std::uint64_t v = get_u64();
        std::memcpy(&d, &v, 8);
      }
    }
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    const auto buf = serialize();
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw DataError("short write on checkpoint: " + path);
  }

  void load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("missing checkpoint: " + path);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    deserialize(buf);
  }

  // FNV-1a over the serialized bytes; equal checksums on every run is how the
  // freeze contract is audited.
  std::uint64_t checksum() const {
    std::uint64_t h = 1469598103934665603ull;
    for (std::uint8_t b : serialize()) {
      h ^= b;
      h *= 1099511628211ull;
    }
    return h;
  }

  static constexpr std::uint32_t kFormatVersion = 1;

 private:
  std::map<std::string, Entry> entries_;
};

}  // namespace nsgr
