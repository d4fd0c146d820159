// noi: trainable optimal interpolation for gappy space-time fields.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace noi {

// ---------------------------------------------------------------------------
// Error taxonomy. Everything thrown by the library derives from Error so
// callers (notably the CLI) can catch one type and report a clean message.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Shape or dimension mismatch between operands.
struct DimensionError : Error {
  explicit DimensionError(const std::string& msg) : Error("dimension error: " + msg) {}
};

/// NaN/Inf produced by a numeric kernel, or an otherwise invalid value.
struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error("numeric error: " + msg) {}
};

/// API misuse: a precondition on how the call is made was violated.
struct ContractError : Error {
  explicit ContractError(const std::string& msg) : Error("contract error: " + msg) {}
};

/// Matrix expected to be symmetric positive-definite is not.
struct NotSpdError : Error {
  explicit NotSpdError(const std::string& msg) : Error("not SPD: " + msg) {}
};

/// Iterative solver hit its iteration cap before reaching tolerance.
struct IterationLimitError : Error {
  explicit IterationLimitError(const std::string& msg) : Error("iteration limit: " + msg) {}
};

/// Discretization produced an unstable / indefinite operator.
struct StabilityError : Error {
  explicit StabilityError(const std::string& msg) : Error("stability error: " + msg) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error("io error: " + msg) {}
};

#define NOI_REQUIRE(cond, ExcType, msg) \
  do {                                  \
    if (!(cond)) throw ExcType(msg);    \
  } while (0)

// ---------------------------------------------------------------------------
// RandomStream: deterministic, platform-independent random numbers.
//
// std::normal_distribution is implementation-defined, so seeded runs would
// not reproduce across standard libraries. We draw uniforms from xoshiro-style
// splitmix-seeded mt19937_64 bits and apply Box-Muller ourselves.
// ---------------------------------------------------------------------------

class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : state_(splitmix(seed)) {}

  std::uint64_t next_u64() {
    // xorshift128+ style step on two splitmix-derived words.
    std::uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545F4914F6CDD1DULL;
  }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (pair cached).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  /// Derive an independent stream (for per-window / per-seed fan-out).
  RandomStream fork(std::uint64_t salt) const {
    return RandomStream(state_ ^ splitmix(salt ^ 0x9E3779B97F4A7C15ULL));
  }

 private:
  static std::uint64_t splitmix(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// ---------------------------------------------------------------------------
// parallel_for: static partition over [0, n). Results must be written to
// disjoint slots so the reduction order stays deterministic.
// ---------------------------------------------------------------------------

inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& body) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  const int workers = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(threads), n));
  std::vector<std::thread> pool;
  std::exception_ptr first_error = nullptr;
  std::mutex err_mutex;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      try {
        for (std::size_t i = static_cast<std::size_t>(w); i < n; i += static_cast<std::size_t>(workers)) {
          body(i);
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------
// Small direct DFT, one axis at a time. Grids here are tiny (tens of nodes
// per axis), so the O(n * sum(dims)) direct transform is plenty.
// ---------------------------------------------------------------------------

namespace dft {

using cd = std::complex<double>;

/// In-place DFT along a single axis of a 3D array stored row-major as
/// (n0, n1, n2). sign = -1 forward, +1 inverse (inverse applies 1/n).
inline void transform_axis(std::vector<cd>& a, int n0, int n1, int n2, int axis, int sign) {
  const int n = axis == 0 ? n0 : (axis == 1 ? n1 : n2);
  const int stride = axis == 0 ? n1 * n2 : (axis == 1 ? n2 : 1);
  std::vector<cd> tw(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    const double ang = sign * 2.0 * M_PI * k / n;
    tw[static_cast<std::size_t>(k)] = cd(std::cos(ang), std::sin(ang));
  }
  std::vector<cd> line(static_cast<std::size_t>(n));
  const int outer = n0 * n1 * n2 / n;
  for (int o = 0; o < outer; ++o) {
    // Base offset of this line.
    int base;
    if (axis == 0) {
      base = o;
    } else if (axis == 1) {
      const int i0 = o / n2, i2 = o % n2;
      base = i0 * n1 * n2 + i2;
    } else {
      base = o * n2;
    }
    for (int i = 0; i < n; ++i) line[static_cast<std::size_t>(i)] = a[static_cast<std::size_t>(base + i * stride)];
    for (int k = 0; k < n; ++k) {
      cd acc(0.0, 0.0);
      int idx = 0;
      for (int i = 0; i < n; ++i) {
        acc += line[static_cast<std::size_t>(i)] * tw[static_cast<std::size_t>(idx)];
        idx += k;
        if (idx >= n) idx -= n;
      }
      if (sign > 0) acc /= static_cast<double>(n);
      a[static_cast<std::size_t>(base + k * stride)] = acc;
    }
  }
}

/// Full 3D DFT. sign = -1 forward, +1 inverse (normalized).
inline void transform3(std::vector<cd>& a, int n0, int n1, int n2, int sign) {
  transform_axis(a, n0, n1, n2, 0, sign);
  transform_axis(a, n0, n1, n2, 1, sign);
  transform_axis(a, n0, n1, n2, 2, sign);
}

}  // namespace dft

}  // namespace noi
