#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "srp4ctr/common.hpp"

namespace srp4ctr {

// Dense row-major tensor with shared storage. Copies are shallow: two Tensor
// values holding the same buffers alias each other, which is how parameter
// sharing (tied projections, shared embeddings) is expressed.
template <typename F>
struct Tensor {
  std::vector<int> shape;
  std::shared_ptr<std::vector<F>> data;
  std::shared_ptr<std::vector<F>> grad;  // allocated iff requires_grad
  bool requires_grad = false;

  Tensor() = default;

  std::size_t numel() const {
    std::size_t n = 1;
    for (int e : shape) n *= static_cast<std::size_t>(e);
    return shape.empty() ? (data ? data->size() : 0) : n;
  }

  bool defined() const { return static_cast<bool>(data); }
  bool is_scalar() const { return defined() && numel() == 1; }

  int rows() const {
    if (shape.size() != 2) throw ShapeError("rows(): tensor is not 2-d");
    return shape[0];
  }
  int cols() const {
    if (shape.size() != 2) throw ShapeError("cols(): tensor is not 2-d");
    return shape[1];
  }

  // Like shared_ptr, a const handle still exposes mutable storage.
  F* ptr() const { return data->data(); }
  F* gptr() const { return grad->data(); }

  F& at(int i, int j) const {
    return (*data)[static_cast<std::size_t>(i) * cols() + j];
  }
  F item() const {
    if (!is_scalar()) throw ContractError("item(): tensor is not scalar");
    return (*data)[0];
  }

  void ensure_grad() {
    if (!grad) grad = std::make_shared<std::vector<F>>(numel(), F(0));
  }

  void zero_grad() const {
    if (grad) std::fill(grad->begin(), grad->end(), F(0));
  }

  void set_requires_grad(bool rg) {
    requires_grad = rg;
    if (rg) ensure_grad();
  }

  bool aliases(const Tensor& other) const { return data == other.data; }

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    Tensor t;
    t.shape = std::move(shape);
    std::size_t n = 1;
    for (int e : t.shape) {
      if (e <= 0) throw ShapeError("zeros: extents must be positive");
      n *= static_cast<std::size_t>(e);
    }
    t.data = std::make_shared<std::vector<F>>(n, F(0));
    if (requires_grad) t.set_requires_grad(true);
    return t;
  }

  static Tensor full(std::vector<int> shape, F value) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.data->begin(), t.data->end(), value);
    return t;
  }

  static Tensor scalar(F value) {
    Tensor t = zeros({1, 1});
    (*t.data)[0] = value;
    return t;
  }

  static Tensor from(std::vector<int> shape, std::vector<F> values) {
    Tensor t;
    t.shape = std::move(shape);
    std::size_t n = 1;
    for (int e : t.shape) n *= static_cast<std::size_t>(e);
    if (values.size() != n) throw ShapeError("from: value count does not match shape");
    t.data = std::make_shared<std::vector<F>>(std::move(values));
    return t;
  }

  static Tensor row(std::vector<F> values) {
    const int n = static_cast<int>(values.size());
    return from({1, n}, std::move(values));
  }

  static Tensor from_rows(std::initializer_list<std::initializer_list<F>> rows) {
    const int m = static_cast<int>(rows.size());
    const int n = m > 0 ? static_cast<int>(rows.begin()->size()) : 0;
    std::vector<F> v;
    v.reserve(static_cast<std::size_t>(m) * n);
    for (const auto& r : rows) {
      if (static_cast<int>(r.size()) != n) throw ShapeError("from_rows: ragged rows");
      v.insert(v.end(), r.begin(), r.end());
    }
    return from({m, n}, std::move(v));
  }

  static Tensor truncated_normal(std::vector<int> shape, double stddev, Rng& rng) {
    Tensor t = zeros(std::move(shape));
    for (auto& x : *t.data) x = static_cast<F>(rng.truncated_normal(stddev));
    return t;
  }

  // Deep copy (fresh buffers, same values; grad not copied).
  Tensor clone() const {
    Tensor t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<F>>(*data);
    if (requires_grad) t.set_requires_grad(true);
    return t;
  }

  template <typename G>
  Tensor<G> cast() const {
    Tensor<G> t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<G>>(data->size());
    for (std::size_t i = 0; i < data->size(); ++i)
      (*t.data)[i] = static_cast<G>((*data)[i]);
    if (requires_grad) t.set_requires_grad(true);
    return t;
  }

  bool all_finite() const {
    for (F x : *data)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i)
      os << shape[i] << (i + 1 < shape.size() ? "," : "");
    os << ']';
    return os.str();
  }
};

template <typename F>
bool same_values(const Tensor<F>& a, const Tensor<F>& b) {
  return a.shape == b.shape && *a.data == *b.data;
}

template <typename F>
std::uint64_t value_digest(const Tensor<F>& t,
                           std::uint64_t seed = 1469598103934665603ull) {
  return fnv1a64(t.data->data(), t.data->size() * sizeof(F), seed);
}

}  // namespace srp4ctr
