// noi: trainable optimal interpolation for gappy space-time fields.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "noi/tensor.hpp"

namespace noi {

struct GridGeom {
  double dx = 1.0, dy = 1.0, dt = 1.0;
};

/// Real-valued space-time grid (nt, ny, nx), row-major with x fastest.
struct Field3D {
  Tensor data;  // shape (nt, ny, nx)
  GridGeom geom;

  Field3D() = default;
  Field3D(Tensor d, GridGeom g) : data(std::move(d)), geom(g) {
    NOI_REQUIRE(data.ndims() == 3, DimensionError, "Field3D expects a (nt,ny,nx) tensor");
  }

  static Field3D zeros(int nt, int ny, int nx, GridGeom g = {}) { return Field3D(Tensor({nt, ny, nx}), g); }

  int nt() const { return data.dim(0); }
  int ny() const { return data.dim(1); }
  int nx() const { return data.dim(2); }
  std::size_t numel() const { return data.numel(); }

  double& at(int t, int y, int x) { return data[idx(t, y, x)]; }
  double at(int t, int y, int x) const { return data[idx(t, y, x)]; }

  std::size_t idx(int t, int y, int x) const {
    return (static_cast<std::size_t>(t) * ny() + static_cast<std::size_t>(y)) * nx() + static_cast<std::size_t>(x);
  }

  /// Time window [t0, t0+len) as a new field.
  Field3D window(int t0, int len) const {
    NOI_REQUIRE(t0 >= 0 && t0 + len <= nt(), DimensionError, "window out of range");
    Tensor out({len, ny(), nx()});
    const std::size_t plane = static_cast<std::size_t>(ny()) * nx();
    std::copy(data.data() + t0 * plane, data.data() + (t0 + len) * plane, out.data());
    return Field3D(std::move(out), geom);
  }

  Field3D time_slice(int t) const { return window(t, 1); }
};

inline double mse(const Tensor& a, const Tensor& b) {
  kern::require_same_shape(a, b, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.numel());
}

inline double mse(const Field3D& a, const Field3D& b) { return mse(a.data, b.data); }

inline double rel_l2(const Tensor& a, const Tensor& ref) {
  kern::require_same_shape(a, ref, "rel_l2");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = a[i] - ref[i];
    num += d * d;
    den += ref[i] * ref[i];
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

}  // namespace noi
