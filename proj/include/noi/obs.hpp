// noi: trainable optimal interpolation for gappy space-time fields.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "noi/field.hpp"

namespace noi {

/// Boolean observation mask over a (nt, ny, nx) grid.
struct Mask3D {
  int nt = 0, ny = 0, nx = 0;
  GridGeom geom;
  std::vector<std::uint8_t> on;  // size nt*ny*nx

  std::size_t numel() const { return on.size(); }

  bool at(int t, int y, int x) const {
    return on[(static_cast<std::size_t>(t) * ny + static_cast<std::size_t>(y)) * nx + static_cast<std::size_t>(x)] != 0;
  }

  std::size_t count() const {
    std::size_t c = 0;
    for (auto b : on) c += b ? 1 : 0;
    return c;
  }

  double fraction() const { return numel() ? static_cast<double>(count()) / static_cast<double>(numel()) : 0.0; }

  /// 0/1 tensor of the grid shape (for masked residuals on a tape).
  Tensor as_tensor() const {
    Tensor m({nt, ny, nx});
    for (std::size_t i = 0; i < on.size(); ++i) m[i] = on[i] ? 1.0 : 0.0;
    return m;
  }
};

/// Observations: values on the mask support (zero elsewhere), noise variance.
struct ObsSet {
  Mask3D mask;
  Tensor values;  // (nt, ny, nx); zero off the mask
  double sigma2 = 1e-3;

  ObsSet() = default;
  ObsSet(Mask3D m, Tensor v, double s2) : mask(std::move(m)), values(std::move(v)), sigma2(s2) {
    NOI_REQUIRE(values.ndims() == 3 && values.dim(0) == mask.nt && values.dim(1) == mask.ny && values.dim(2) == mask.nx,
                DimensionError, "ObsSet: values shape does not match mask");
    NOI_REQUIRE(sigma2 >= 0.0, ContractError, "ObsSet: negative noise variance");
    values.check_finite("ObsSet values");
    for (std::size_t i = 0; i < values.numel(); ++i) {
      if (!mask.on[i]) NOI_REQUIRE(values[i] == 0.0, ContractError, "ObsSet: nonzero value off the mask");
    }
  }

  std::size_t count() const { return mask.count(); }
};

// ---------------------------------------------------------------------------
// Along-track style sampling: diagonal stripes with per-step phase drift,
// x + slope*y + drift*t = phase (mod spacing).
// ---------------------------------------------------------------------------

struct TrackPattern {
  int spacing = 8;   // >= 2 for actual gaps; 1 observes everything
  int slope = 1;     // stripe direction, cells of x per cell of y
  int drift = 1;     // phase advance per time step
  int phase = 0;     // initial phase offset
};

inline Mask3D track_mask(int nt, int ny, int nx, const TrackPattern& p, GridGeom geom = {}) {
  NOI_REQUIRE(p.spacing >= 1, ContractError, "track_mask: spacing must be >= 1");
  Mask3D m;
  m.nt = nt;
  m.ny = ny;
  m.nx = nx;
  m.geom = geom;
  m.on.assign(static_cast<std::size_t>(nt) * ny * nx, 0);
  auto mod = [&](long v) {
    long r = v % p.spacing;
    return r < 0 ? r + p.spacing : r;
  };
  std::size_t i = 0;
  for (int t = 0; t < nt; ++t)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x, ++i)
        m.on[i] = mod(static_cast<long>(x) + static_cast<long>(p.slope) * y + static_cast<long>(p.drift) * t +
                      p.phase) == 0;
  return m;
}

inline Mask3D full_mask(int nt, int ny, int nx, GridGeom geom = {}) {
  Mask3D m;
  m.nt = nt;
  m.ny = ny;
  m.nx = nx;
  m.geom = geom;
  m.on.assign(static_cast<std::size_t>(nt) * ny * nx, 1);
  return m;
}

/// y = truth + N(0, sigma2) on the mask. Deterministic for a given seed.
inline ObsSet observe(const Field3D& truth, const Mask3D& mask, double sigma2, std::uint64_t seed) {
  NOI_REQUIRE(truth.nt() == mask.nt && truth.ny() == mask.ny && truth.nx() == mask.nx, DimensionError,
              "observe: field and mask shapes differ");
  RandomStream rng(seed);
  const double sd = std::sqrt(sigma2);
  Tensor vals({mask.nt, mask.ny, mask.nx});
  for (std::size_t i = 0; i < vals.numel(); ++i) {
    if (mask.on[i]) vals[i] = truth.data[i] + sd * rng.normal();
  }
  return ObsSet(Mask3D(mask), std::move(vals), sigma2);
}

// ---------------------------------------------------------------------------
// Observation operator H (restriction to the mask, row-major scan order) and
// its adjoint (zero-padded embedding).
// ---------------------------------------------------------------------------

inline std::vector<double> apply_H(const Tensor& x, const Mask3D& mask) {
  NOI_REQUIRE(x.numel() == mask.numel(), DimensionError, "apply_H: size mismatch");
  std::vector<double> out;
  out.reserve(mask.count());
  for (std::size_t i = 0; i < mask.on.size(); ++i) {
    if (mask.on[i]) out.push_back(x[i]);
  }
  return out;
}

inline Tensor apply_H_transpose(const std::vector<double>& v, const Mask3D& mask) {
  NOI_REQUIRE(v.size() == mask.count(), DimensionError, "apply_H_transpose: size mismatch");
  Tensor out({mask.nt, mask.ny, mask.nx});
  std::size_t k = 0;
  for (std::size_t i = 0; i < mask.on.size(); ++i) {
    if (mask.on[i]) out[i] = v[k++];
  }
  return out;
}

}  // namespace noi
