// noi: trainable optimal interpolation for gappy space-time fields.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "noi/core.hpp"

namespace noi {

/// Padding behaviour for "same" convolutions.
enum class Pad { periodic, reflect, zero };

// ---------------------------------------------------------------------------
// Tensor: dense row-major array of 64-bit floats.
//
// Plain value type: construction and arithmetic only, no graph bookkeeping
// (that lives in Tape). Every kernel that produces a Tensor finishes with a
// finiteness check; NaN/Inf anywhere raises NumericError.
// ---------------------------------------------------------------------------

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(checked_numel(shape_), fill) {}

  Tensor(std::vector<int> shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    NOI_REQUIRE(data_.size() == checked_numel(shape_), DimensionError, "tensor data length does not match shape");
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

  static Tensor randn(std::vector<int> shape, RandomStream& rng, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = stddev * rng.normal();
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  int ndims() const { return static_cast<int>(shape_.size()); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  std::string shape_str() const {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << ")";
    return os.str();
  }

  void check_finite(const char* where) const {
    for (double v : data_) {
      if (!std::isfinite(v)) throw NumericError(std::string("non-finite value in ") + where);
    }
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::fabs(v));
    return m;
  }

 private:
  static std::size_t checked_numel(const std::vector<int>& shape) {
    NOI_REQUIRE(!shape.empty(), DimensionError, "tensor needs at least one dimension");
    std::size_t n = 1;
    for (int d : shape) {
      NOI_REQUIRE(d > 0, DimensionError, "tensor dimensions must be positive");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  std::vector<int> shape_;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Raw kernels. These work on plain Tensors; Tape wraps them into
// differentiable primitives. Convolutions come in the closed bilinear family
// {forward, input-adjoint, weight-gradient} so that adjoints of adjoints stay
// inside the family (this is what makes backward-of-backward possible).
// ---------------------------------------------------------------------------

namespace kern {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  NOI_REQUIRE(a.same_shape(b), DimensionError,
              std::string(op) + ": shapes " + a.shape_str() + " vs " + b.shape_str());
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] - b[i];
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
  return out;
}

inline Tensor scale(const Tensor& a, double c) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = c * a[i];
  return out;
}

inline Tensor tanh_(const Tensor& a) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = std::tanh(a[i]);
  return out;
}

inline Tensor sigmoid_(const Tensor& a) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-a[i]));
  return out;
}

inline Tensor exp_(const Tensor& a) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = std::exp(a[i]);
  return out;
}

inline Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i];
  return Tensor::scalar(s);
}

inline Tensor broadcast(const Tensor& s, const std::vector<int>& shape) {
  NOI_REQUIRE(s.numel() == 1, DimensionError, "broadcast expects a scalar");
  return Tensor(shape, s[0]);
}

/// out[i] = a[i] * s[0] where s is a 1-element tensor.
inline Tensor scale_by(const Tensor& a, const Tensor& s) {
  NOI_REQUIRE(s.numel() == 1, DimensionError, "scale_by expects a scalar second operand");
  return scale(a, s[0]);
}

// --- channel helpers for (C, H, W) tensors ---------------------------------

inline void require_chw(const Tensor& t, const char* op) {
  NOI_REQUIRE(t.ndims() == 3, DimensionError, std::string(op) + ": expected a (C,H,W) tensor, got " + t.shape_str());
}

inline Tensor slice_ch(const Tensor& a, int c0, int c1) {
  require_chw(a, "slice_ch");
  const int C = a.dim(0), H = a.dim(1), W = a.dim(2);
  NOI_REQUIRE(0 <= c0 && c0 < c1 && c1 <= C, DimensionError, "slice_ch: bad channel range");
  Tensor out({c1 - c0, H, W});
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::copy(a.data() + c0 * plane, a.data() + c1 * plane, out.data());
  return out;
}

/// Embed a (c1-c0, H, W) block into channels [c0, c1) of a zero (C, H, W).
inline Tensor pad_ch(const Tensor& a, int C, int c0) {
  require_chw(a, "pad_ch");
  const int H = a.dim(1), W = a.dim(2);
  Tensor out({C, H, W});
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::copy(a.data(), a.data() + a.numel(), out.data() + c0 * plane);
  return out;
}

/// (C) -> (C, H, W), replicating each channel value over the plane.
inline Tensor ch_broadcast(const Tensor& b, int H, int W) {
  NOI_REQUIRE(b.ndims() == 1, DimensionError, "ch_broadcast expects a 1-d tensor");
  const int C = b.dim(0);
  Tensor out({C, H, W});
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int c = 0; c < C; ++c) std::fill(out.data() + c * plane, out.data() + (c + 1) * plane, b[static_cast<std::size_t>(c)]);
  return out;
}

/// (C, H, W) -> (C), summing over the plane.
inline Tensor ch_sum(const Tensor& a) {
  require_chw(a, "ch_sum");
  const int C = a.dim(0), H = a.dim(1), W = a.dim(2);
  Tensor out({C});
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int c = 0; c < C; ++c) {
    double s = 0.0;
    const double* p = a.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) s += p[i];
    out[static_cast<std::size_t>(c)] = s;
  }
  return out;
}

// --- 2D "same" convolution with channels -----------------------------------
//
// input (Ci, H, W), kernel (Co, Ci, kh, kw) with kh, kw odd -> (Co, H, W).
// Implemented by materializing a padded copy so the inner loops are contiguous
// and free of wrap logic. pad_plane/fold_plane are exact adjoints.

inline int reflect_index(int i, int n) {
  // mirror without repeating the edge sample: -1 -> 1, n -> n-2
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

inline int map_index(int i, int n, Pad mode) {
  switch (mode) {
    case Pad::periodic: {
      int r = i % n;
      return r < 0 ? r + n : r;
    }
    case Pad::reflect:
      return reflect_index(i, n);
    case Pad::zero:
      return (i < 0 || i >= n) ? -1 : i;
  }
  return -1;
}

/// Pad one (H, W) plane to (H + 2ph, W + 2pw) according to mode.
inline void pad_plane(const double* src, int H, int W, int ph, int pw, Pad mode, double* dst) {
  const int Hp = H + 2 * ph, Wp = W + 2 * pw;
  for (int y = 0; y < Hp; ++y) {
    const int ys = map_index(y - ph, H, mode);
    double* drow = dst + static_cast<std::size_t>(y) * Wp;
    if (ys < 0) {
      std::fill(drow, drow + Wp, 0.0);
      continue;
    }
    const double* srow = src + static_cast<std::size_t>(ys) * W;
    for (int x = 0; x < Wp; ++x) {
      const int xs = map_index(x - pw, W, mode);
      drow[x] = xs < 0 ? 0.0 : srow[xs];
    }
  }
}

/// Adjoint of pad_plane: accumulate a padded-gradient plane back onto (H, W).
inline void fold_plane(const double* gpad, int H, int W, int ph, int pw, Pad mode, double* gdst) {
  const int Wp = W + 2 * pw;
  for (int y = 0; y < H + 2 * ph; ++y) {
    const int ys = map_index(y - ph, H, mode);
    if (ys < 0) continue;
    const double* grow = gpad + static_cast<std::size_t>(y) * Wp;
    double* drow = gdst + static_cast<std::size_t>(ys) * W;
    for (int x = 0; x < W + 2 * pw; ++x) {
      const int xs = map_index(x - pw, W, mode);
      if (xs >= 0) drow[xs] += grow[x];
    }
  }
}

inline void check_conv2d_shapes(const Tensor& input, const Tensor& kernel) {
  require_chw(input, "conv2d input");
  NOI_REQUIRE(kernel.ndims() == 4, DimensionError, "conv2d kernel must be (Co,Ci,kh,kw), got " + kernel.shape_str());
  NOI_REQUIRE(kernel.dim(1) == input.dim(0), DimensionError,
              "conv2d: kernel input channels " + kernel.shape_str() + " vs input " + input.shape_str());
  NOI_REQUIRE(kernel.dim(2) % 2 == 1 && kernel.dim(3) % 2 == 1, DimensionError, "conv2d kernel sizes must be odd");
}

inline Tensor conv2d(const Tensor& input, const Tensor& kernel, Pad mode) {
  check_conv2d_shapes(input, kernel);
  const int Ci = input.dim(0), H = input.dim(1), W = input.dim(2);
  const int Co = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  const int ph = kh / 2, pw = kw / 2;
  const int Hp = H + 2 * ph, Wp = W + 2 * pw;

  std::vector<double> padded(static_cast<std::size_t>(Ci) * Hp * Wp);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const std::size_t plane_p = static_cast<std::size_t>(Hp) * Wp;
  for (int ci = 0; ci < Ci; ++ci) pad_plane(input.data() + ci * plane, H, W, ph, pw, mode, padded.data() + ci * plane_p);

  Tensor out({Co, H, W});
  for (int co = 0; co < Co; ++co) {
    double* oplane = out.data() + co * plane;
    for (int ci = 0; ci < Ci; ++ci) {
      const double* pplane = padded.data() + ci * plane_p;
      const double* kbase = kernel.data() + ((static_cast<std::size_t>(co) * Ci + ci) * kh) * kw;
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          const double wgt = kbase[ky * kw + kx];
          if (wgt == 0.0) continue;
          for (int y = 0; y < H; ++y) {
            const double* srow = pplane + static_cast<std::size_t>(y + ky) * Wp + kx;
            double* orow = oplane + static_cast<std::size_t>(y) * W;
            for (int x = 0; x < W; ++x) orow[x] += wgt * srow[x];
          }
        }
      }
    }
  }
  return out;
}

/// Adjoint of conv2d in its input: cotangent (Co, H, W) -> (Ci, H, W).
inline Tensor conv2d_adj(const Tensor& cot, const Tensor& kernel, Pad mode) {
  require_chw(cot, "conv2d_adj cotangent");
  NOI_REQUIRE(kernel.ndims() == 4 && kernel.dim(0) == cot.dim(0), DimensionError,
              "conv2d_adj: kernel " + kernel.shape_str() + " vs cotangent " + cot.shape_str());
  const int Co = kernel.dim(0), Ci = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  const int H = cot.dim(1), W = cot.dim(2);
  const int ph = kh / 2, pw = kw / 2;
  const int Hp = H + 2 * ph, Wp = W + 2 * pw;
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const std::size_t plane_p = static_cast<std::size_t>(Hp) * Wp;

  std::vector<double> gpad(static_cast<std::size_t>(Ci) * plane_p, 0.0);
  for (int co = 0; co < Co; ++co) {
    const double* uplane = cot.data() + co * plane;
    for (int ci = 0; ci < Ci; ++ci) {
      double* gplane = gpad.data() + ci * plane_p;
      const double* kbase = kernel.data() + ((static_cast<std::size_t>(co) * Ci + ci) * kh) * kw;
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          const double wgt = kbase[ky * kw + kx];
          if (wgt == 0.0) continue;
          for (int y = 0; y < H; ++y) {
            double* grow = gplane + static_cast<std::size_t>(y + ky) * Wp + kx;
            const double* urow = uplane + static_cast<std::size_t>(y) * W;
            for (int x = 0; x < W; ++x) grow[x] += wgt * urow[x];
          }
        }
      }
    }
  }
  Tensor out({Ci, H, W});
  for (int ci = 0; ci < Ci; ++ci) fold_plane(gpad.data() + ci * plane_p, H, W, ph, pw, mode, out.data() + ci * plane);
  return out;
}

/// Gradient of conv2d in its kernel: (input, cotangent) -> (Co, Ci, kh, kw).
inline Tensor conv2d_wgrad(const Tensor& input, const Tensor& cot, int kh, int kw, Pad mode) {
  require_chw(input, "conv2d_wgrad input");
  require_chw(cot, "conv2d_wgrad cotangent");
  NOI_REQUIRE(input.dim(1) == cot.dim(1) && input.dim(2) == cot.dim(2), DimensionError,
              "conv2d_wgrad: spatial shapes differ");
  const int Ci = input.dim(0), H = input.dim(1), W = input.dim(2);
  const int Co = cot.dim(0);
  const int ph = kh / 2, pw = kw / 2;
  const int Hp = H + 2 * ph, Wp = W + 2 * pw;
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const std::size_t plane_p = static_cast<std::size_t>(Hp) * Wp;

  std::vector<double> padded(static_cast<std::size_t>(Ci) * plane_p);
  for (int ci = 0; ci < Ci; ++ci) pad_plane(input.data() + ci * plane, H, W, ph, pw, mode, padded.data() + ci * plane_p);

  Tensor out({Co, Ci, kh, kw});
  for (int co = 0; co < Co; ++co) {
    const double* uplane = cot.data() + co * plane;
    for (int ci = 0; ci < Ci; ++ci) {
      const double* pplane = padded.data() + ci * plane_p;
      double* kbase = out.data() + ((static_cast<std::size_t>(co) * Ci + ci) * kh) * kw;
      for (int ky = 0; ky < kh; ++ky) {
        if (kw == 3) {
          // one sweep per row accumulates the three taps together
          double t0a = 0.0, t0b = 0.0, t1a = 0.0, t1b = 0.0, t2a = 0.0, t2b = 0.0;
          for (int y = 0; y < H; ++y) {
            const double* srow = pplane + static_cast<std::size_t>(y + ky) * Wp;
            const double* urow = uplane + static_cast<std::size_t>(y) * W;
            int x = 0;
            for (; x + 2 <= W; x += 2) {
              t0a += srow[x] * urow[x];
              t1a += srow[x + 1] * urow[x];
              t2a += srow[x + 2] * urow[x];
              t0b += srow[x + 1] * urow[x + 1];
              t1b += srow[x + 2] * urow[x + 1];
              t2b += srow[x + 3] * urow[x + 1];
            }
            for (; x < W; ++x) {
              t0a += srow[x] * urow[x];
              t1a += srow[x + 1] * urow[x];
              t2a += srow[x + 2] * urow[x];
            }
          }
          kbase[ky * 3 + 0] = t0a + t0b;
          kbase[ky * 3 + 1] = t1a + t1b;
          kbase[ky * 3 + 2] = t2a + t2b;
          continue;
        }
        for (int kx = 0; kx < kw; ++kx) {
          // four-lane accumulation; fixed order keeps results reproducible
          double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
          for (int y = 0; y < H; ++y) {
            const double* srow = pplane + static_cast<std::size_t>(y + ky) * Wp + kx;
            const double* urow = uplane + static_cast<std::size_t>(y) * W;
            int x = 0;
            for (; x + 4 <= W; x += 4) {
              a0 += srow[x] * urow[x];
              a1 += srow[x + 1] * urow[x + 1];
              a2 += srow[x + 2] * urow[x + 2];
              a3 += srow[x + 3] * urow[x + 3];
            }
            for (; x < W; ++x) a0 += srow[x] * urow[x];
          }
          kbase[ky * kw + kx] = (a0 + a1) + (a2 + a3);
        }
      }
    }
  }
  return out;
}

// --- 3D circular "same" convolution -----------------------------------------
//
// input (T, H, W), kernel (kt, kh, kw) odd in every axis, periodic wrap in
// every axis. Used by the stationary linear-convolution prior, where the
// kernel may span the whole window.

inline void check_circ3_shapes(const Tensor& input, const Tensor& kernel) {
  NOI_REQUIRE(input.ndims() == 3, DimensionError, "circ_conv3d input must be (T,H,W)");
  NOI_REQUIRE(kernel.ndims() == 3, DimensionError, "circ_conv3d kernel must be (kt,kh,kw)");
  NOI_REQUIRE(kernel.dim(0) % 2 == 1 && kernel.dim(1) % 2 == 1 && kernel.dim(2) % 2 == 1, DimensionError,
              "circ_conv3d kernel sizes must be odd");
  NOI_REQUIRE(kernel.dim(0) <= 2 * input.dim(0) - 1 && kernel.dim(1) <= 2 * input.dim(1) - 1 &&
                  kernel.dim(2) <= 2 * input.dim(2) - 1,
              DimensionError, "circ_conv3d kernel larger than twice the input");
}

inline Tensor circ_conv3d(const Tensor& input, const Tensor& kernel) {
  check_circ3_shapes(input, kernel);
  const int T = input.dim(0), H = input.dim(1), W = input.dim(2);
  const int kt = kernel.dim(0), kh = kernel.dim(1), kw = kernel.dim(2);
  const int ct = kt / 2, ch = kh / 2, cw = kw / 2;
  Tensor out({T, H, W});
  auto wrap = [](int i, int n) {
    int r = i % n;
    return r < 0 ? r + n : r;
  };
  for (int dt = 0; dt < kt; ++dt) {
    for (int dy = 0; dy < kh; ++dy) {
      for (int dx = 0; dx < kw; ++dx) {
        const double wgt = kernel[(static_cast<std::size_t>(dt) * kh + dy) * kw + dx];
        if (wgt == 0.0) continue;
        const int ot = dt - ct, oy = dy - ch, ox = dx - cw;
        for (int t = 0; t < T; ++t) {
          const int ts = wrap(t + ot, T);
          for (int y = 0; y < H; ++y) {
            const int ys = wrap(y + oy, H);
            const double* srow = input.data() + (static_cast<std::size_t>(ts) * H + ys) * W;
            double* orow = out.data() + (static_cast<std::size_t>(t) * H + y) * W;
            if (ox == 0) {
              for (int x = 0; x < W; ++x) orow[x] += wgt * srow[x];
            } else {
              for (int x = 0; x < W; ++x) orow[x] += wgt * srow[wrap(x + ox, W)];
            }
          }
        }
      }
    }
  }
  return out;
}

/// Kernel reversed along every axis: the adjoint of circ_conv3d(., k) is
/// circ_conv3d(., reverse_kernel(k)).
inline Tensor reverse_kernel3(const Tensor& k) {
  NOI_REQUIRE(k.ndims() == 3, DimensionError, "reverse_kernel3 expects a 3-d kernel");
  const int a = k.dim(0), b = k.dim(1), c = k.dim(2);
  Tensor out({a, b, c});
  for (int i = 0; i < a; ++i)
    for (int j = 0; j < b; ++j)
      for (int l = 0; l < c; ++l)
        out[(static_cast<std::size_t>(a - 1 - i) * b + (b - 1 - j)) * c + (c - 1 - l)] =
            k[(static_cast<std::size_t>(i) * b + j) * c + l];
  return out;
}

/// Gradient of circ_conv3d in its kernel.
inline Tensor circ_conv3d_wgrad(const Tensor& input, const Tensor& cot, int kt, int kh, int kw) {
  NOI_REQUIRE(input.ndims() == 3 && cot.same_shape(input), DimensionError, "circ_conv3d_wgrad shape mismatch");
  const int T = input.dim(0), H = input.dim(1), W = input.dim(2);
  const int ct = kt / 2, ch = kh / 2, cw = kw / 2;
  Tensor out({kt, kh, kw});
  auto wrap = [](int i, int n) {
    int r = i % n;
    return r < 0 ? r + n : r;
  };
  for (int dt = 0; dt < kt; ++dt) {
    for (int dy = 0; dy < kh; ++dy) {
      for (int dx = 0; dx < kw; ++dx) {
        const int ot = dt - ct, oy = dy - ch, ox = dx - cw;
        double acc = 0.0;
        for (int t = 0; t < T; ++t) {
          const int ts = wrap(t + ot, T);
          for (int y = 0; y < H; ++y) {
            const int ys = wrap(y + oy, H);
            const double* srow = input.data() + (static_cast<std::size_t>(ts) * H + ys) * W;
            const double* urow = cot.data() + (static_cast<std::size_t>(t) * H + y) * W;
            for (int x = 0; x < W; ++x) acc += urow[x] * srow[wrap(x + ox, W)];
          }
        }
        out[(static_cast<std::size_t>(dt) * kh + dy) * kw + dx] = acc;
      }
    }
  }
  return out;
}

}  // namespace kern

}  // namespace noi
