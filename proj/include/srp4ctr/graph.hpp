#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "srp4ctr/common.hpp"
#include "srp4ctr/tensor.hpp"

namespace srp4ctr {

// Running tally of forward matmul FLOPs (2*m*k*n per product). The serving
// simulator snapshots this around pipeline stages; backward passes bypass it.
inline thread_local std::uint64_t g_matmul_flops = 0;

inline void flops_reset() { g_matmul_flops = 0; }
inline std::uint64_t flops_value() { return g_matmul_flops; }

namespace detail {

// c[m,n] += a[m,k] * b[k,n]
template <typename F>
void mm_nn(const F* a, const F* b, F* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const F* arow = a + static_cast<std::size_t>(i) * k;
    F* crow = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const F aip = arow[p];
      const F* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

// c[m,n] += a[m,k] * b[n,k]^T. Transposes b into scratch first so the inner
// loop is an elementwise accumulate (vectorizable) instead of a serial dot.
template <typename F>
void mm_nt(const F* a, const F* b, F* c, int m, int k, int n) {
  thread_local std::vector<F> bt;
  bt.resize(static_cast<std::size_t>(k) * n);
  for (int j = 0; j < n; ++j) {
    const F* brow = b + static_cast<std::size_t>(j) * k;
    for (int p = 0; p < k; ++p) bt[static_cast<std::size_t>(p) * n + j] = brow[p];
  }
  mm_nn(a, bt.data(), c, m, k, n);
}

// c[k,n] += a[m,k]^T * b[m,n]
template <typename F>
void mm_tn(const F* a, const F* b, F* c, int m, int k, int n) {
  for (int p = 0; p < m; ++p) {
    const F* arow = a + static_cast<std::size_t>(p) * k;
    const F* brow = b + static_cast<std::size_t>(p) * n;
    for (int i = 0; i < k; ++i) {
      const F api = arow[i];
      F* crow = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += api * brow[j];
    }
  }
}

}  // namespace detail

// Reverse-mode tape. One Graph records one forward pass; backward() replays
// the tape in reverse. Gradients of leaf tensors (parameters, inputs created
// outside the tape) accumulate across passes until explicitly zeroed;
// gradients of tape intermediates are reset on every backward() call.
template <typename F>
class Graph {
 public:
  explicit Graph(bool check_finite = false) : check_finite_(check_finite) {}

  // When false, ops run forward-only: nothing is recorded and outputs do not
  // require grad. Used for evaluation and serving.
  bool recording = true;

  void clear() {
    tape_.clear();
    outs_.clear();
  }

  std::size_t size() const { return tape_.size(); }

  void backward(const Tensor<F>& loss) {
    if (!loss.is_scalar())
      throw ContractError("backward: loss must be a scalar tensor, got shape " +
                          loss.shape_str());
    if (!loss.requires_grad || !loss.grad)
      throw ContractError("backward: loss was not produced by a recorded computation");
    for (auto& t : outs_) t.zero_grad();
    (*loss.grad)[0] = F(1);
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
    if (check_finite_) {
      for (auto& t : outs_) {
        if (t.grad)
          for (F x : *t.grad)
            if (!std::isfinite(static_cast<double>(x)))
              throw Error("backward produced non-finite gradients");
      }
    }
  }

  // ---- arithmetic -------------------------------------------------------

  Tensor<F> add(const Tensor<F>& a, const Tensor<F>& b) {
    if (a.shape != b.shape)
      throw ShapeError("add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    Tensor<F> out = make_out(a.shape, wants_grad(a) || wants_grad(b));
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] + (*b.data)[i];
    finish(out, "add", [a, b, out]() {
      const std::size_t n2 = out.numel();
      if (a.requires_grad)
        for (std::size_t i = 0; i < n2; ++i) (*a.grad)[i] += (*out.grad)[i];
      if (b.requires_grad)
        for (std::size_t i = 0; i < n2; ++i) (*b.grad)[i] += (*out.grad)[i];
    });
    return out;
  }

  Tensor<F> add_n(const std::vector<Tensor<F>>& xs) {
    if (xs.empty()) throw ContractError("add_n: empty input list");
    bool rg = false;
    for (const auto& x : xs) {
      if (x.shape != xs[0].shape) throw ShapeError("add_n: shape mismatch");
      rg = rg || wants_grad(x);
    }
    Tensor<F> out = make_out(xs[0].shape, rg);
    const std::size_t n = out.numel();
    for (const auto& x : xs)
      for (std::size_t i = 0; i < n; ++i) (*out.data)[i] += (*x.data)[i];
    finish(out, "add_n", [xs, out]() {
      const std::size_t n2 = out.numel();
      for (const auto& x : xs)
        if (x.requires_grad)
          for (std::size_t i = 0; i < n2; ++i) (*x.grad)[i] += (*out.grad)[i];
    });
    return out;
  }

  Tensor<F> mul(const Tensor<F>& a, const Tensor<F>& b) {
    if (a.shape != b.shape)
      throw ShapeError("mul: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    Tensor<F> out = make_out(a.shape, wants_grad(a) || wants_grad(b));
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * (*b.data)[i];
    finish(out, "mul", [a, b, out]() {
      const std::size_t n2 = out.numel();
      if (a.requires_grad)
        for (std::size_t i = 0; i < n2; ++i)
          (*a.grad)[i] += (*out.grad)[i] * (*b.data)[i];
      if (b.requires_grad)
        for (std::size_t i = 0; i < n2; ++i)
          (*b.grad)[i] += (*out.grad)[i] * (*a.data)[i];
    });
    return out;
  }

  Tensor<F> scale(const Tensor<F>& a, F c) {
    Tensor<F> out = make_out(a.shape, wants_grad(a));
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * c;
    finish(out, "scale", [a, c, out]() {
      if (!a.requires_grad) return;
      const std::size_t n2 = out.numel();
      for (std::size_t i = 0; i < n2; ++i) (*a.grad)[i] += (*out.grad)[i] * c;
    });
    return out;
  }

  // x[m,n] + row-broadcast bias[1,n]
  Tensor<F> add_bias(const Tensor<F>& x, const Tensor<F>& bias) {
    const int m = x.rows(), n = x.cols();
    if (bias.rows() != 1 || bias.cols() != n)
      throw ShapeError("add_bias: bias must be [1," + std::to_string(n) + "]");
    Tensor<F> out = make_out(x.shape, wants_grad(x) || wants_grad(bias));
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) out.at(i, j) = x.at(i, j) + (*bias.data)[j];
    finish(out, "add_bias", [x, bias, out, m, n]() {
      if (x.requires_grad) {
        const std::size_t t = out.numel();
        for (std::size_t i = 0; i < t; ++i) (*x.grad)[i] += (*out.grad)[i];
      }
      if (bias.requires_grad) {
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            (*bias.grad)[j] += (*out.grad)[static_cast<std::size_t>(i) * n + j];
      }
    });
    return out;
  }

  // ---- matrix products --------------------------------------------------

  Tensor<F> matmul(const Tensor<F>& a, const Tensor<F>& b) {
    const int m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k)
      throw ShapeError("matmul: inner extents differ, " + a.shape_str() + " * " +
                       b.shape_str());
    g_matmul_flops += 2ull * m * k * n;
    Tensor<F> out = make_out({m, n}, wants_grad(a) || wants_grad(b));
    detail::mm_nn(a.ptr(), b.ptr(), out.ptr(), m, k, n);
    finish(out, "matmul", [a, b, out, m, k, n]() {
      if (a.requires_grad) detail::mm_nt(out.gptr(), b.ptr(), a.gptr(), m, n, k);
      if (b.requires_grad) detail::mm_tn(a.ptr(), out.gptr(), b.gptr(), m, k, n);
    });
    return out;
  }

  // a[m,k] * b[n,k]^T -> [m,n]
  Tensor<F> matmul_nt(const Tensor<F>& a, const Tensor<F>& b) {
    const int m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k)
      throw ShapeError("matmul_nt: inner extents differ, " + a.shape_str() + " * " +
                       b.shape_str() + "^T");
    g_matmul_flops += 2ull * m * k * n;
    Tensor<F> out = make_out({m, n}, wants_grad(a) || wants_grad(b));
    detail::mm_nt(a.ptr(), b.ptr(), out.ptr(), m, k, n);
    finish(out, "matmul_nt", [a, b, out, m, k, n]() {
      if (a.requires_grad) detail::mm_nn(out.gptr(), b.ptr(), a.gptr(), m, n, k);
      if (b.requires_grad) detail::mm_tn(out.gptr(), a.ptr(), b.gptr(), m, n, k);
    });
    return out;
  }

  // ---- nonlinearities ---------------------------------------------------

  Tensor<F> gelu(const Tensor<F>& x) {
    Tensor<F> out = make_out(x.shape, wants_grad(x));
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) {
      const double v = static_cast<double>((*x.data)[i]);
      (*out.data)[i] = static_cast<F>(0.5 * v * (1.0 + std::erf(v * M_SQRT1_2)));
    }
    finish(out, "gelu", [x, out]() {
      if (!x.requires_grad) return;
      const std::size_t n2 = out.numel();
      const double inv_sqrt_2pi = 0.3989422804014326779;
      for (std::size_t i = 0; i < n2; ++i) {
        const double v = static_cast<double>((*x.data)[i]);
        const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        (*x.grad)[i] += (*out.grad)[i] * static_cast<F>(cdf + v * pdf);
      }
    });
    return out;
  }

  // Row-wise softmax with max subtraction.
  Tensor<F> softmax_rows(const Tensor<F>& x) {
    const int m = x.rows(), n = x.cols();
    if (n < 1) throw ShapeError("softmax_rows: empty rows");
    Tensor<F> out = make_out(x.shape, wants_grad(x));
    for (int i = 0; i < m; ++i) {
      F mx = x.at(i, 0);
      for (int j = 1; j < n; ++j) mx = std::max(mx, x.at(i, j));
      F sum = F(0);
      for (int j = 0; j < n; ++j) {
        const F e = std::exp(x.at(i, j) - mx);
        out.at(i, j) = e;
        sum += e;
      }
      const F inv = F(1) / sum;
      for (int j = 0; j < n; ++j) out.at(i, j) *= inv;
    }
    finish(out, "softmax_rows", [x, out, m, n]() {
      if (!x.requires_grad) return;
      for (int i = 0; i < m; ++i) {
        F dot = F(0);
        for (int j = 0; j < n; ++j) {
          const std::size_t idx = static_cast<std::size_t>(i) * n + j;
          dot += (*out.grad)[idx] * (*out.data)[idx];
        }
        for (int j = 0; j < n; ++j) {
          const std::size_t idx = static_cast<std::size_t>(i) * n + j;
          (*x.grad)[idx] += (*out.data)[idx] * ((*out.grad)[idx] - dot);
        }
      }
    });
    return out;
  }

  // Row-wise layer norm: ((x - mean) / sqrt(var + 1e-6)) * gain + bias.
  Tensor<F> layer_norm_rows(const Tensor<F>& x, const Tensor<F>& gain,
                            const Tensor<F>& bias) {
    const int m = x.rows(), n = x.cols();
    if (n < 2) throw ShapeError("layer_norm_rows: vector extent must be >= 2");
    if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n)
      throw ShapeError("layer_norm_rows: gain/bias must be [1," + std::to_string(n) + "]");
    const F eps = static_cast<F>(1e-6);
    Tensor<F> out =
        make_out(x.shape, wants_grad(x) || wants_grad(gain) || wants_grad(bias));
    // Normalised values are cached for backward.
    auto xhat = std::make_shared<std::vector<F>>(out.numel());
    auto inv_sd = std::make_shared<std::vector<F>>(m);
    for (int i = 0; i < m; ++i) {
      F mean = F(0);
      for (int j = 0; j < n; ++j) mean += x.at(i, j);
      mean /= static_cast<F>(n);
      F var = F(0);
      for (int j = 0; j < n; ++j) {
        const F d = x.at(i, j) - mean;
        var += d * d;
      }
      var /= static_cast<F>(n);
      const F isd = F(1) / std::sqrt(var + eps);
      (*inv_sd)[i] = isd;
      for (int j = 0; j < n; ++j) {
        const std::size_t idx = static_cast<std::size_t>(i) * n + j;
        const F h = (x.at(i, j) - mean) * isd;
        (*xhat)[idx] = h;
        out.at(i, j) = h * (*gain.data)[j] + (*bias.data)[j];
      }
    }
    finish(out, "layer_norm_rows", [x, gain, bias, out, xhat, inv_sd, m, n]() {
      for (int i = 0; i < m; ++i) {
        const std::size_t base = static_cast<std::size_t>(i) * n;
        if (gain.requires_grad || bias.requires_grad) {
          for (int j = 0; j < n; ++j) {
            if (gain.requires_grad)
              (*gain.grad)[j] += (*out.grad)[base + j] * (*xhat)[base + j];
            if (bias.requires_grad) (*bias.grad)[j] += (*out.grad)[base + j];
          }
        }
        if (x.requires_grad) {
          F sum_dh = F(0), sum_dh_h = F(0);
          for (int j = 0; j < n; ++j) {
            const F dh = (*out.grad)[base + j] * (*gain.data)[j];
            sum_dh += dh;
            sum_dh_h += dh * (*xhat)[base + j];
          }
          const F inv_n = F(1) / static_cast<F>(n);
          for (int j = 0; j < n; ++j) {
            const F dh = (*out.grad)[base + j] * (*gain.data)[j];
            (*x.grad)[base + j] +=
                (*inv_sd)[i] *
                (dh - inv_n * sum_dh - (*xhat)[base + j] * inv_n * sum_dh_h);
          }
        }
      }
    });
    return out;
  }

  // ---- structural ops ---------------------------------------------------

  Tensor<F> slice_rows(const Tensor<F>& x, int r0, int r1) {
    const int m = x.rows(), n = x.cols();
    if (r0 < 0 || r1 > m || r0 >= r1)
      throw ShapeError("slice_rows: bad range [" + std::to_string(r0) + "," +
                       std::to_string(r1) + ") for " + x.shape_str());
    Tensor<F> out = make_out({r1 - r0, n}, wants_grad(x));
    std::copy(x.ptr() + static_cast<std::size_t>(r0) * n,
              x.ptr() + static_cast<std::size_t>(r1) * n, out.ptr());
    finish(out, "slice_rows", [x, out, r0, n]() {
      if (!x.requires_grad) return;
      const std::size_t cnt = out.numel();
      const std::size_t off = static_cast<std::size_t>(r0) * n;
      for (std::size_t i = 0; i < cnt; ++i) (*x.grad)[off + i] += (*out.grad)[i];
    });
    return out;
  }

  Tensor<F> slice_cols(const Tensor<F>& x, int c0, int c1) {
    const int m = x.rows(), n = x.cols();
    if (c0 < 0 || c1 > n || c0 >= c1)
      throw ShapeError("slice_cols: bad range [" + std::to_string(c0) + "," +
                       std::to_string(c1) + ") for " + x.shape_str());
    const int w = c1 - c0;
    Tensor<F> out = make_out({m, w}, wants_grad(x));
    for (int i = 0; i < m; ++i)
      std::copy(&x.at(i, c0), &x.at(i, c0) + w, out.ptr() + static_cast<std::size_t>(i) * w);
    finish(out, "slice_cols", [x, out, c0, w, m, n]() {
      if (!x.requires_grad) return;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j)
          (*x.grad)[static_cast<std::size_t>(i) * n + c0 + j] +=
              (*out.grad)[static_cast<std::size_t>(i) * w + j];
    });
    return out;
  }

  Tensor<F> concat_cols(const std::vector<Tensor<F>>& xs) {
    if (xs.empty()) throw ContractError("concat_cols: empty input list");
    const int m = xs[0].rows();
    int total = 0;
    bool rg = false;
    for (const auto& x : xs) {
      if (x.rows() != m) throw ShapeError("concat_cols: row counts differ");
      total += x.cols();
      rg = rg || wants_grad(x);
    }
    Tensor<F> out = make_out({m, total}, rg);
    int off = 0;
    for (const auto& x : xs) {
      const int w = x.cols();
      for (int i = 0; i < m; ++i)
        std::copy(x.ptr() + static_cast<std::size_t>(i) * w,
                  x.ptr() + static_cast<std::size_t>(i) * w + w,
                  out.ptr() + static_cast<std::size_t>(i) * total + off);
      off += w;
    }
    finish(out, "concat_cols", [xs, out, m, total]() {
      int off2 = 0;
      for (const auto& x : xs) {
        const int w = x.cols();
        if (x.requires_grad)
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j)
              (*x.grad)[static_cast<std::size_t>(i) * w + j] +=
                  (*out.grad)[static_cast<std::size_t>(i) * total + off2 + j];
        off2 += w;
      }
    });
    return out;
  }

  // Zero-pads x[t,n] to [target_rows, n].
  Tensor<F> pad_rows(const Tensor<F>& x, int target_rows) {
    const int t = x.rows(), n = x.cols();
    if (target_rows < t) throw ShapeError("pad_rows: target smaller than input");
    Tensor<F> out = make_out({target_rows, n}, wants_grad(x));
    std::copy(x.ptr(), x.ptr() + x.numel(), out.ptr());
    finish(out, "pad_rows", [x, out]() {
      if (!x.requires_grad) return;
      const std::size_t cnt = x.numel();
      for (std::size_t i = 0; i < cnt; ++i) (*x.grad)[i] += (*out.grad)[i];
    });
    return out;
  }

  Tensor<F> gather_rows(const Tensor<F>& table, std::vector<int> ids) {
    const int v = table.rows(), n = table.cols();
    for (int id : ids)
      if (id < 0 || id >= v)
        throw ContractError("gather_rows: id " + std::to_string(id) +
                            " outside table of " + std::to_string(v) + " rows");
    const int m = static_cast<int>(ids.size());
    if (m == 0) throw ContractError("gather_rows: empty id list");
    Tensor<F> out = make_out({m, n}, wants_grad(table));
    for (int i = 0; i < m; ++i)
      std::copy(table.ptr() + static_cast<std::size_t>(ids[i]) * n,
                table.ptr() + static_cast<std::size_t>(ids[i]) * n + n,
                out.ptr() + static_cast<std::size_t>(i) * n);
    finish(out, "gather_rows", [table, out, ids = std::move(ids), n]() {
      if (!table.requires_grad) return;
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (int j = 0; j < n; ++j)
          (*table.grad)[static_cast<std::size_t>(ids[i]) * n + j] +=
              (*out.grad)[i * n + j];
    });
    return out;
  }

  // Copy of x with the listed rows replaced by a broadcast [1,n] row.
  Tensor<F> overwrite_rows(const Tensor<F>& x, std::vector<int> rows,
                           const Tensor<F>& row) {
    const int m = x.rows(), n = x.cols();
    if (row.rows() != 1 || row.cols() != n)
      throw ShapeError("overwrite_rows: replacement must be [1," + std::to_string(n) + "]");
    for (int r : rows)
      if (r < 0 || r >= m)
        throw ContractError("overwrite_rows: row " + std::to_string(r) + " out of range");
    Tensor<F> out = make_out(x.shape, wants_grad(x) || wants_grad(row));
    std::copy(x.ptr(), x.ptr() + x.numel(), out.ptr());
    std::vector<bool> replaced(m, false);
    for (int r : rows) {
      replaced[r] = true;
      std::copy(row.ptr(), row.ptr() + n, out.ptr() + static_cast<std::size_t>(r) * n);
    }
    finish(out, "overwrite_rows",
           [x, row, out, replaced = std::move(replaced), m, n]() {
             for (int i = 0; i < m; ++i) {
               const std::size_t base = static_cast<std::size_t>(i) * n;
               if (replaced[i]) {
                 if (row.requires_grad)
                   for (int j = 0; j < n; ++j) (*row.grad)[j] += (*out.grad)[base + j];
               } else if (x.requires_grad) {
                 for (int j = 0; j < n; ++j) (*x.grad)[base + j] += (*out.grad)[base + j];
               }
             }
           });
    return out;
  }

  // View with a new shape over the same storage; numel must match. Gradients
  // flow through the shared buffer, so no tape entry is needed.
  Tensor<F> reshape(const Tensor<F>& x, std::vector<int> shape) {
    std::size_t n = 1;
    for (int e : shape) n *= static_cast<std::size_t>(e);
    if (n != x.numel()) throw ShapeError("reshape: element count mismatch");
    Tensor<F> out = x;
    out.shape = std::move(shape);
    return out;
  }

  // ---- reductions -------------------------------------------------------

  Tensor<F> mean_rows(const Tensor<F>& x) {
    const int m = x.rows(), n = x.cols();
    Tensor<F> out = make_out({1, n}, wants_grad(x));
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) (*out.data)[j] += x.at(i, j);
    const F inv = F(1) / static_cast<F>(m);
    for (int j = 0; j < n; ++j) (*out.data)[j] *= inv;
    finish(out, "mean_rows", [x, out, m, n, inv]() {
      if (!x.requires_grad) return;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          (*x.grad)[static_cast<std::size_t>(i) * n + j] += (*out.grad)[j] * inv;
    });
    return out;
  }

  Tensor<F> sum_all(const Tensor<F>& x) {
    Tensor<F> out = make_out({1, 1}, wants_grad(x));
    F acc = F(0);
    for (F v : *x.data) acc += v;
    (*out.data)[0] = acc;
    finish(out, "sum_all", [x, out]() {
      if (!x.requires_grad) return;
      const F g = (*out.grad)[0];
      for (auto& v : *x.grad) v += g;
    });
    return out;
  }

  Tensor<F> mean_all(const Tensor<F>& x) {
    return scale(sum_all(x), F(1) / static_cast<F>(x.numel()));
  }

  // ---- losses -----------------------------------------------------------

  // Mean cross-entropy of row-wise softmax(logits) against integer targets.
  Tensor<F> softmax_ce(const Tensor<F>& logits, std::vector<int> targets) {
    const int m = logits.rows(), v = logits.cols();
    if (static_cast<int>(targets.size()) != m)
      throw ShapeError("softmax_ce: target count != logit rows");
    for (int t : targets)
      if (t < 0 || t >= v) throw ContractError("softmax_ce: target id out of range");
    Tensor<F> out = make_out({1, 1}, wants_grad(logits));
    F total = F(0);
    for (int i = 0; i < m; ++i) {
      F mx = logits.at(i, 0);
      for (int j = 1; j < v; ++j) mx = std::max(mx, logits.at(i, j));
      F sum = F(0);
      for (int j = 0; j < v; ++j) sum += std::exp(logits.at(i, j) - mx);
      total += mx + std::log(sum) - logits.at(i, targets[i]);
    }
    (*out.data)[0] = total / static_cast<F>(m);
    finish(out, "softmax_ce", [logits, out, targets = std::move(targets), m, v]() {
      if (!logits.requires_grad) return;
      const F g = (*out.grad)[0] / static_cast<F>(m);
      for (int i = 0; i < m; ++i) {
        F mx = logits.at(i, 0);
        for (int j = 1; j < v; ++j) mx = std::max(mx, logits.at(i, j));
        F sum = F(0);
        for (int j = 0; j < v; ++j) sum += std::exp(logits.at(i, j) - mx);
        const F inv = F(1) / sum;
        for (int j = 0; j < v; ++j) {
          const F p = std::exp(logits.at(i, j) - mx) * inv;
          (*logits.grad)[static_cast<std::size_t>(i) * v + j] +=
              g * (p - (j == targets[i] ? F(1) : F(0)));
        }
      }
    });
    return out;
  }

  // Binary cross-entropy from the pre-sigmoid logit; numerically stable.
  Tensor<F> bce_logit(const Tensor<F>& logit, F label) {
    if (!logit.is_scalar()) throw ContractError("bce_logit: logit must be scalar");
    Tensor<F> out = make_out({1, 1}, wants_grad(logit));
    const F z = (*logit.data)[0];
    const F loss = z > F(0) ? z - z * label + std::log1p(std::exp(-z))
                            : -z * label + std::log1p(std::exp(z));
    (*out.data)[0] = loss;
    finish(out, "bce_logit", [logit, out, label]() {
      if (!logit.requires_grad) return;
      const F z2 = (*logit.data)[0];
      const F s = F(1) / (F(1) + std::exp(-z2));
      (*logit.grad)[0] += (*out.grad)[0] * (s - label);
    });
    return out;
  }

 private:
  bool wants_grad(const Tensor<F>& t) const {
    if (t.requires_grad && !t.grad)
      throw ContractError("tensor requires grad but has no grad buffer");
    return recording && t.requires_grad;
  }

  Tensor<F> make_out(std::vector<int> shape, bool rg) {
    Tensor<F> t = Tensor<F>::zeros(std::move(shape));
    if (rg) t.set_requires_grad(true);
    return t;
  }

  template <typename Fn>
  void finish(Tensor<F>& out, const char* op, Fn&& bwd) {
    if (check_finite_ && !out.all_finite())
      throw Error(std::string("op '") + op + "' produced non-finite values");
    if (out.requires_grad) {
      outs_.push_back(out);
      tape_.emplace_back(std::forward<Fn>(bwd));
    }
  }

  std::vector<std::function<void()>> tape_;
  std::vector<Tensor<F>> outs_;
  bool check_finite_;
};

// Inference-scope helper: scalar sigmoid.
template <typename F>
F sigmoid(F z) {
  return F(1) / (F(1) + std::exp(-z));
}

}  // namespace srp4ctr
