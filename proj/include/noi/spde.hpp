// noi: trainable optimal interpolation for gappy space-time fields.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "noi/field.hpp"
#include "noi/sparse.hpp"

namespace noi {

enum class Boundary { periodic, neumann };

/// Node-wise velocity components driving the anisotropic part of the
/// diffusion tensor H = gamma*I + beta * v v'.
struct VelocityField {
  std::vector<double> v1, v2;  // each ny*nx, row-major x fastest
};

/// Smooth periodic eddy-like velocity field,
///   v1 = a * sin(2*pi*x/nx) * cos(2*pi*y/ny)
///   v2 = -a * cos(2*pi*x/nx) * sin(2*pi*y/ny).
inline VelocityField default_velocity_field(int ny, int nx, double amplitude = 0.3) {
  VelocityField v;
  v.v1.resize(static_cast<std::size_t>(ny) * nx);
  v.v2.resize(static_cast<std::size_t>(ny) * nx);
  for (int y = 0; y < ny; ++y) {
    for (int x = 0; x < nx; ++x) {
      const double sx = 2.0 * M_PI * x / nx, sy = 2.0 * M_PI * y / ny;
      v.v1[static_cast<std::size_t>(y) * nx + x] = amplitude * std::sin(sx) * std::cos(sy);
      v.v2[static_cast<std::size_t>(y) * nx + x] = -amplitude * std::cos(sx) * std::sin(sy);
    }
  }
  return v;
}

struct SpdeParams {
  double kappa = 0.33;  // range parameter
  double tau = 1.0;     // regularization variance scale
  int alpha = 4;        // even fractional exponent, in {2, 4}
  double gamma = 1.0;   // isotropic diffusion weight
  double beta = 25.0;   // anisotropy amplitude
  VelocityField velocity;  // per-node v(s); ignored when beta == 0
  int nx = 32, ny = 32, nt = 64;
  GridGeom geom;
  Boundary boundary = Boundary::periodic;
  int burn_in = 50;  // settling steps discarded by simulate()

  void validate() const {
    NOI_REQUIRE(kappa > 0.0, ContractError, "SpdeParams: kappa must be positive");
    NOI_REQUIRE(tau >= 0.0, ContractError, "SpdeParams: tau must be non-negative");
    NOI_REQUIRE(gamma > 0.0, ContractError, "SpdeParams: gamma must be positive");
    NOI_REQUIRE(beta >= 0.0, ContractError, "SpdeParams: beta must be non-negative");
    NOI_REQUIRE(alpha >= 2 && alpha % 2 == 0, ContractError, "SpdeParams: alpha must be an even integer >= 2");
    NOI_REQUIRE(alpha <= 4, ContractError, "SpdeParams: alpha > 4 is not supported");
    NOI_REQUIRE(nx >= 3 && ny >= 3 && nt >= 1, ContractError, "SpdeParams: grid too small");
    NOI_REQUIRE(burn_in >= 0, ContractError, "SpdeParams: negative burn-in");
    if (beta > 0.0) {
      NOI_REQUIRE(velocity.v1.size() == static_cast<std::size_t>(nx) * ny &&
                      velocity.v2.size() == static_cast<std::size_t>(nx) * ny,
                  ContractError, "SpdeParams: velocity field does not match the grid");
    }
  }

  /// Params with the default eddy velocity field attached.
  static SpdeParams gp_diff2(int nx_ = 32, int ny_ = 32, int nt_ = 64) {
    SpdeParams p;
    p.nx = nx_;
    p.ny = ny_;
    p.nt = nt_;
    p.velocity = default_velocity_field(ny_, nx_);
    return p;
  }

  /// Isotropic stationary configuration (beta = 0).
  static SpdeParams gp_iso(int nx_ = 32, int ny_ = 32, int nt_ = 64, int alpha_ = 4) {
    SpdeParams p;
    p.nx = nx_;
    p.ny = ny_;
    p.nt = nt_;
    p.beta = 0.0;
    p.alpha = alpha_;
    return p;
  }
};

// ---------------------------------------------------------------------------
// Spatial operator A ~ kappa^2 - div(H grad), conservative 9-point stencil.
//
// Axis terms use flux form with face-averaged H11/H22 (exactly the 5-point
// Laplacian when H = I). Cross terms are assembled per cell from the bilinear
// center gradient with cell-averaged H12, which keeps the matrix symmetric
// for arbitrary node-wise H. Cross-term quadrature differs from the axis
// quadrature, so very strong anisotropy can push the assembly indefinite;
// that surfaces as a StabilityError at factorization time.
// ---------------------------------------------------------------------------

inline SparseSym build_spatial_operator(const SpdeParams& p, int /*t*/ = 0) {
  p.validate();
  const int nx = p.nx, ny = p.ny, n = nx * ny;
  const double dx = p.geom.dx, dy = p.geom.dy;
  const bool periodic = p.boundary == Boundary::periodic;

  auto node = [&](int y, int x) { return y * nx + x; };
  auto h11 = [&](int i) { return p.gamma + (p.beta > 0.0 ? p.beta * p.velocity.v1[static_cast<std::size_t>(i)] * p.velocity.v1[static_cast<std::size_t>(i)] : 0.0); };
  auto h22 = [&](int i) { return p.gamma + (p.beta > 0.0 ? p.beta * p.velocity.v2[static_cast<std::size_t>(i)] * p.velocity.v2[static_cast<std::size_t>(i)] : 0.0); };
  auto h12 = [&](int i) { return p.beta > 0.0 ? p.beta * p.velocity.v1[static_cast<std::size_t>(i)] * p.velocity.v2[static_cast<std::size_t>(i)] : 0.0; };

  TripletBuilder tb;
  for (int i = 0; i < n; ++i) tb.add(i, i, p.kappa * p.kappa);

  // x-direction fluxes
  for (int y = 0; y < ny; ++y) {
    const int xmax = periodic ? nx : nx - 1;
    for (int x = 0; x < xmax; ++x) {
      const int a = node(y, x), b = node(y, (x + 1) % nx);
      const double w = 0.5 * (h11(a) + h11(b)) / (dx * dx);
      tb.add(a, a, w);
      tb.add(b, b, w);
      tb.add(a, b, -w);
      tb.add(b, a, -w);
    }
  }
  // y-direction fluxes
  for (int x = 0; x < nx; ++x) {
    const int ymax = periodic ? ny : ny - 1;
    for (int y = 0; y < ymax; ++y) {
      const int a = node(y, x), b = node((y + 1) % ny, x);
      const double w = 0.5 * (h22(a) + h22(b)) / (dy * dy);
      tb.add(a, a, w);
      tb.add(b, b, w);
      tb.add(a, b, -w);
      tb.add(b, a, -w);
    }
  }
  // cross terms, one quadrature point per cell
  if (p.beta > 0.0) {
    const int ymax = periodic ? ny : ny - 1;
    const int xmax = periodic ? nx : nx - 1;
    for (int y = 0; y < ymax; ++y) {
      for (int x = 0; x < xmax; ++x) {
        const int c00 = node(y, x), c10 = node(y, (x + 1) % nx);
        const int c01 = node((y + 1) % ny, x), c11 = node((y + 1) % ny, (x + 1) % nx);
        const int cs[4] = {c00, c10, c01, c11};
        const double gx[4] = {-0.5 / dx, 0.5 / dx, -0.5 / dx, 0.5 / dx};
        const double gy[4] = {-0.5 / dy, -0.5 / dy, 0.5 / dy, 0.5 / dy};
        const double h = 0.25 * (h12(c00) + h12(c10) + h12(c01) + h12(c11)) * dx * dy;
        if (h == 0.0) continue;
        for (int a = 0; a < 4; ++a)
          for (int b = 0; b < 4; ++b) tb.add(cs[a], cs[b], h * (gx[a] * gy[b] + gy[a] * gx[b]));
      }
    }
  }
  return SparseSym(tb.to_csr(n, n));
}

namespace detail {

/// M = I + dt * A^(alpha/2), the per-step implicit-Euler operator. The
/// fractional power is realized as an integer matrix power (alpha/2 in {1,2}).
inline SparseSym implicit_step_operator(const SpdeParams& p) {
  const SparseSym a = build_spatial_operator(p);
  SparseCsr apow = a.csr();
  for (int rep = 1; rep < p.alpha / 2; ++rep) apow = sparse_matmul(apow, a.csr());
  return SparseSym(sparse_add(sparse_identity(a.n()), apow, 1.0, p.geom.dt));
}

inline CholFactor factor_step_operator(const SparseSym& m) {
  try {
    return cholesky(m);
  } catch (const NotSpdError& e) {
    throw StabilityError(std::string("implicit-Euler operator is not SPD (grid spacing too coarse for the "
                                     "diffusion tensor?): ") +
                         e.what());
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// simulate: x_0 = 0; each step solves  M x_k = x_{k-1} + dt*tau*z_k  with
// z_k i.i.d. standard normal per node. The first burn_in steps are discarded.
// Deterministic for a given seed.
// ---------------------------------------------------------------------------

inline Field3D simulate(const SpdeParams& p, std::uint64_t seed) {
  p.validate();
  const int n = p.nx * p.ny;
  const SparseSym m = detail::implicit_step_operator(p);
  const CholFactor chol = detail::factor_step_operator(m);

  RandomStream rng(seed);
  Field3D out = Field3D::zeros(p.nt, p.ny, p.nx, p.geom);
  std::vector<double> x(static_cast<std::size_t>(n), 0.0), rhs(static_cast<std::size_t>(n));
  const double noise = p.geom.dt * p.tau;
  for (int step = 0; step < p.burn_in + p.nt; ++step) {
    for (int i = 0; i < n; ++i) rhs[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)] + noise * rng.normal();
    x = chol.solve(rhs);
    const int k = step - p.burn_in;
    if (k >= 0) std::copy(x.begin(), x.end(), out.data.data() + static_cast<std::size_t>(k) * n);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Window precision matrix.
//
// Stack a window x = (x_1, ..., x_T) of the recursion M x_k = x_{k-1} +
// dt*tau*z_k started from x_0 = 0. Then B x = dt*tau*z, where B is lower
// block-bidiagonal with M on the diagonal and -I on the subdiagonal. Since z
// is standard normal, the window density is exp(-||B x||^2 / (2 (dt tau)^2))
// and the precision is
//
//   Q = B'B / (dt*tau)^2,
//
// block tridiagonal with diagonal blocks (M'M + I), last block M'M, and
// off-diagonal blocks -M (M is symmetric). This matches windows produced by
// simulate() with burn_in = 0; windows cut from a long settled run treat the
// pre-window state as part of the noise, which is the convention used
// throughout the benchmarks.
// ---------------------------------------------------------------------------

inline SparseSym precision_matrix(const SpdeParams& p, int window_len) {
  p.validate();
  NOI_REQUIRE(window_len >= 1, ContractError, "precision_matrix: window length must be >= 1");
  NOI_REQUIRE(p.tau > 0.0, ContractError, "precision_matrix: tau must be positive");
  const int n = p.nx * p.ny, T = window_len;
  const SparseSym m = detail::implicit_step_operator(p);
  const SparseCsr mtm = sparse_matmul(m.csr(), m.csr());
  const double s = 1.0 / (p.geom.dt * p.tau * p.geom.dt * p.tau);

  TripletBuilder tb;
  auto add_block = [&](int bi, int bj, const SparseCsr& blk, double w) {
    for (int i = 0; i < blk.rows; ++i) {
      for (int k = blk.row_ptr[static_cast<std::size_t>(i)]; k < blk.row_ptr[static_cast<std::size_t>(i) + 1]; ++k) {
        tb.add(bi * n + i, bj * n + blk.col[static_cast<std::size_t>(k)], w * blk.val[static_cast<std::size_t>(k)]);
      }
    }
  };
  const SparseCsr eye = sparse_identity(n);
  for (int k = 0; k < T; ++k) {
    add_block(k, k, mtm, s);
    if (k < T - 1) add_block(k, k, eye, s);
    if (k + 1 < T) {
      add_block(k, k + 1, m.csr(), -s);
      add_block(k + 1, k, m.csr(), -s);
    }
  }
  return SparseSym(tb.to_csr(n * T, n * T));
}

/// Periodic-in-time variant: every diagonal block is (M'M + I) and the
/// off-diagonal blocks wrap around. Circulant in time for constant H, which
/// is the case the spectral prior construction covers. Requires T >= 3 so
/// wrap and neighbor blocks do not collide.
inline SparseSym precision_matrix_periodic(const SpdeParams& p, int window_len) {
  p.validate();
  NOI_REQUIRE(window_len >= 3, ContractError, "precision_matrix_periodic: window length must be >= 3");
  NOI_REQUIRE(p.tau > 0.0, ContractError, "precision_matrix_periodic: tau must be positive");
  const int n = p.nx * p.ny, T = window_len;
  const SparseSym m = detail::implicit_step_operator(p);
  const SparseCsr mtm = sparse_matmul(m.csr(), m.csr());
  const double s = 1.0 / (p.geom.dt * p.tau * p.geom.dt * p.tau);

  TripletBuilder tb;
  auto add_block = [&](int bi, int bj, const SparseCsr& blk, double w) {
    for (int i = 0; i < blk.rows; ++i) {
      for (int k = blk.row_ptr[static_cast<std::size_t>(i)]; k < blk.row_ptr[static_cast<std::size_t>(i) + 1]; ++k) {
        tb.add(bi * n + i, bj * n + blk.col[static_cast<std::size_t>(k)], w * blk.val[static_cast<std::size_t>(k)]);
      }
    }
  };
  const SparseCsr eye = sparse_identity(n);
  for (int k = 0; k < T; ++k) {
    add_block(k, k, mtm, s);
    add_block(k, k, eye, s);
    const int nxt = (k + 1) % T;
    add_block(k, nxt, m.csr(), -s);
    add_block(nxt, k, m.csr(), -s);
  }
  return SparseSym(tb.to_csr(n * T, n * T));
}

// ---------------------------------------------------------------------------
// Stationary spectra (beta = 0, periodic boundaries).
// ---------------------------------------------------------------------------

/// Symbol of the discrete spatial operator at integer frequencies.
inline double spatial_symbol(const SpdeParams& p, int fy, int fx) {
  const double lx = (2.0 - 2.0 * std::cos(2.0 * M_PI * fx / p.nx)) / (p.geom.dx * p.geom.dx);
  const double ly = (2.0 - 2.0 * std::cos(2.0 * M_PI * fy / p.ny)) / (p.geom.dy * p.geom.dy);
  return p.kappa * p.kappa + p.gamma * (lx + ly);
}

/// Spectrum of precision_matrix_periodic as a (T, ny, nx) tensor: the
/// operator is circulant in all three axes, with eigenvalue
///   q(w, fy, fx) = (m^2 + 1 - 2 m cos(2 pi w / T)) / (dt tau)^2,
/// where m = 1 + dt * a^(alpha/2) and a = spatial_symbol.
inline Tensor stationary_precision_spectrum(const SpdeParams& p, int window_len) {
  p.validate();
  NOI_REQUIRE(p.beta == 0.0, ContractError, "stationary spectrum requires the isotropic mode (beta = 0)");
  NOI_REQUIRE(p.boundary == Boundary::periodic, ContractError, "stationary spectrum requires periodic boundaries");
  NOI_REQUIRE(p.tau > 0.0, ContractError, "stationary spectrum: tau must be positive");
  const int T = window_len;
  Tensor q({T, p.ny, p.nx});
  const double s = 1.0 / (p.geom.dt * p.tau * p.geom.dt * p.tau);
  std::size_t i = 0;
  for (int w = 0; w < T; ++w) {
    const double ct = std::cos(2.0 * M_PI * w / T);
    for (int fy = 0; fy < p.ny; ++fy) {
      for (int fx = 0; fx < p.nx; ++fx, ++i) {
        const double a = spatial_symbol(p, fy, fx);
        const double m = 1.0 + p.geom.dt * std::pow(a, p.alpha / 2);
        q[i] = (m * m + 1.0 - 2.0 * m * ct) * s;
      }
    }
  }
  return q;
}

}  // namespace noi
