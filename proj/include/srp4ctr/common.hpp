#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace srp4ctr {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor extents disagree with what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// An API precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Bad configuration value or an inconsistent combination of options.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed input file; carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& msg, long line)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg),
        line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// A metric is undefined for the given inputs (e.g. AUC on a single class).
class MetricError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Hashing / digests
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(const void* bytes, std::size_t n,
                             std::uint64_t seed = 1469598103934665603ull) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s,
                             std::uint64_t seed = 1469598103934665603ull) {
  return fnv1a64(s.data(), s.size(), seed);
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Derives an independent stream seed from a base seed and salts. Used so that
// every consumer (init of one tensor, mask plan of one sequence, ...) gets its
// own deterministic stream regardless of evaluation order.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt) {
  return splitmix64(base ^ splitmix64(salt));
}

inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t a,
                              std::uint64_t b) {
  return mix_seed(mix_seed(base, a), b);
}

inline std::uint64_t mix_seed(std::uint64_t base, std::string_view tag) {
  return mix_seed(base, fnv1a64(tag));
}

inline std::uint64_t mix_seed(std::uint64_t base, std::string_view tag,
                              std::uint64_t a) {
  return mix_seed(mix_seed(base, fnv1a64(tag)), a);
}

inline std::uint64_t mix_seed(std::uint64_t base, std::string_view tag,
                              std::uint64_t a, std::uint64_t b) {
  return mix_seed(mix_seed(mix_seed(base, fnv1a64(tag)), a), b);
}

// ---------------------------------------------------------------------------
// Rng
// ---------------------------------------------------------------------------

// mt19937 wrapper that avoids std <random> distributions, whose output
// sequences are implementation-defined. Everything here is pinned by the
// standardised mt19937 stream, so a (config, seed) pair reproduces byte-for-
// byte on any conforming toolchain.
class Rng {
 public:
  explicit Rng(std::uint64_t seed)
      : gen_(static_cast<std::uint32_t>(splitmix64(seed) >> 32)) {}

  std::uint32_t next_u32() { return gen_(); }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() {
    const std::uint32_t a = gen_() >> 5;  // 27 bits
    const std::uint32_t b = gen_() >> 6;  // 26 bits
    return (static_cast<double>(a) * 67108864.0 + static_cast<double>(b)) /
           9007199254740992.0;
  }

  // Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint32_t below(std::uint32_t n) {
    if (n == 0) throw ContractError("Rng::below: n must be positive");
    if ((n & (n - 1)) == 0) return gen_() & (n - 1);
    const std::uint32_t limit = UINT32_MAX - UINT32_MAX % n;
    std::uint32_t v = gen_();
    while (v >= limit) v = gen_();
    return v % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller with a cached spare.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double two_pi = 6.283185307179586476925286766559;
    const double u = 1.0 - uniform();
    const double r = std::sqrt(-2.0 * std::log(u));
    const double theta = uniform() * two_pi;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Normal truncated to +/- 2 sigma, then scaled.
  double truncated_normal(double stddev) {
    double z = gaussian();
    while (z < -2.0 || z > 2.0) z = gaussian();
    return z * stddev;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::uint32_t j = below(static_cast<std::uint32_t>(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace srp4ctr
