#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "srp4ctr/common.hpp"
#include "srp4ctr/tensor.hpp"

namespace srp4ctr {

// Named parameter registry. Insertion order is the canonical iteration order,
// which keeps optimizer updates, checkpoints and digests deterministic.
// Each distinct buffer is registered exactly once; shared (tied) views are
// held by model structs directly and never re-registered.
template <typename F>
class ParameterStore {
 public:
  Tensor<F> add(const std::string& name, Tensor<F> t) {
    if (index_.count(name)) throw ContractError("parameter '" + name + "' already registered");
    t.set_requires_grad(true);
    index_[name] = items_.size();
    items_.emplace_back(name, t);
    return t;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  const Tensor<F>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
    return items_[it->second].second;
  }

  const std::vector<std::pair<std::string, Tensor<F>>>& items() const { return items_; }

  std::vector<std::pair<std::string, Tensor<F>>> trainable() const {
    std::vector<std::pair<std::string, Tensor<F>>> out;
    for (const auto& kv : items_)
      if (kv.second.requires_grad) out.push_back(kv);
    return out;
  }

  void zero_grads() const {
    for (const auto& kv : items_) kv.second.zero_grad();
  }

  void set_trainable_prefix(const std::string& prefix, bool on) {
    bool hit = false;
    for (auto& kv : items_) {
      if (kv.first.rfind(prefix, 0) == 0) {
        kv.second.set_requires_grad(on);
        hit = true;
      }
    }
    if (!hit) throw ContractError("no parameters match prefix '" + prefix + "'");
  }

  std::size_t count() const { return items_.size(); }

  std::size_t value_count() const {
    std::size_t n = 0;
    for (const auto& kv : items_) n += kv.second.numel();
    return n;
  }

  // Order-sensitive hash over names and raw values.
  std::uint64_t digest() const {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& [name, t] : items_) {
      h ^= fnv1a64(name);
      h *= 1099511628211ull;
      h ^= value_digest(t);
      h *= 1099511628211ull;
    }
    return h;
  }

 private:
  std::vector<std::pair<std::string, Tensor<F>>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---- checkpoint format ---------------------------------------------------
// Binary, little-endian:
//   "SRPC" | u32 version=1 | u32 tensor_count
//   per tensor: u32 name_len | name bytes | u32 rank | u32 extent[rank] |
//               f32 value[numel]
// Values are stored as 32-bit floats regardless of the in-memory scalar type.

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  os.write(b, 4);
}

inline std::uint32_t get_u32(std::istream& is, const std::string& path) {
  char b[4];
  if (!is.read(b, 4)) throw IoError("truncated checkpoint: " + path);
  std::uint32_t v;
  std::memcpy(&v, b, 4);
  return v;
}

}  // namespace detail

template <typename F>
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor<F>>>& entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write("SRPC", 4);
  detail::put_u32(os, 1);
  detail::put_u32(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(t.shape.size()));
    for (int e : t.shape) detail::put_u32(os, static_cast<std::uint32_t>(e));
    for (F v : *t.data) {
      const float f = static_cast<float>(v);
      char b[4];
      std::memcpy(b, &f, 4);
      os.write(b, 4);
    }
  }
  if (!os) throw IoError("failed while writing checkpoint: " + path);
}

template <typename F>
void save_checkpoint(const std::string& path, const ParameterStore<F>& store) {
  save_checkpoint(path, store.items());
}

template <typename F>
std::vector<std::pair<std::string, Tensor<F>>> load_checkpoint_entries(
    const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "SRPC", 4) != 0)
    throw IoError("not a checkpoint file: " + path);
  const std::uint32_t version = detail::get_u32(is, path);
  if (version != 1)
    throw IoError("unsupported checkpoint version " + std::to_string(version) + ": " + path);
  const std::uint32_t count = detail::get_u32(is, path);
  std::vector<std::pair<std::string, Tensor<F>>> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = detail::get_u32(is, path);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw IoError("truncated checkpoint: " + path);
    const std::uint32_t rank = detail::get_u32(is, path);
    std::vector<int> shape(rank);
    std::size_t numel = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      shape[r] = static_cast<int>(detail::get_u32(is, path));
      numel *= static_cast<std::size_t>(shape[r]);
    }
    Tensor<F> t = Tensor<F>::zeros(shape);
    for (std::size_t j = 0; j < numel; ++j) {
      char b[4];
      if (!is.read(b, 4)) throw IoError("truncated checkpoint: " + path);
      float f;
      std::memcpy(&f, b, 4);
      (*t.data)[j] = static_cast<F>(f);
    }
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

struct LoadReport {
  std::vector<std::string> loaded;
  std::vector<std::string> missing;  // in store but not in the file
  std::vector<std::string> unused;   // in the file but not in the store
};

// Copies values in place (buffer identity, and therefore any tying, is
// preserved). Strict mode demands an exact name set.
template <typename F>
LoadReport load_checkpoint(const std::string& path, ParameterStore<F>& store,
                           bool strict) {
  auto entries = load_checkpoint_entries<F>(path);
  std::unordered_map<std::string, const Tensor<F>*> by_name;
  for (const auto& [name, t] : entries) by_name[name] = &t;

  LoadReport rep;
  for (const auto& [name, dst] : store.items()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      rep.missing.push_back(name);
      continue;
    }
    const Tensor<F>& src = *it->second;
    if (src.shape != dst.shape)
      throw IoError("checkpoint shape mismatch for '" + name + "': file has " +
                    src.shape_str() + ", model has " + dst.shape_str());
    std::copy(src.data->begin(), src.data->end(), dst.data->begin());
    rep.loaded.push_back(name);
  }
  for (const auto& [name, t] : entries)
    if (!store.has(name)) rep.unused.push_back(name);

  if (strict && (!rep.missing.empty() || !rep.unused.empty())) {
    std::string msg = "checkpoint does not match model:";
    for (const auto& n : rep.missing) msg += " missing:" + n;
    for (const auto& n : rep.unused) msg += " unused:" + n;
    throw IoError(msg);
  }
  return rep;
}

}  // namespace srp4ctr
