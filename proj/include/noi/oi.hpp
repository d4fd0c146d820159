// noi: trainable optimal interpolation for gappy space-time fields.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "noi/obs.hpp"
#include "noi/sparse.hpp"
#include "noi/spde.hpp"

namespace noi {

namespace detail {

/// Row-major dense SPD helpers for the covariance-form solve and small
/// inversions. Kept deliberately simple; guarded by size checks upstream.
struct DenseMat {
  int n = 0;
  std::vector<double> a;  // n*n row-major

  static DenseMat zeros(int n_) {
    DenseMat m;
    m.n = n_;
    m.a.assign(static_cast<std::size_t>(n_) * n_, 0.0);
    return m;
  }
  double& at(int i, int j) { return a[static_cast<std::size_t>(i) * n + j]; }
  double at(int i, int j) const { return a[static_cast<std::size_t>(i) * n + j]; }
};

/// In-place lower Cholesky. Throws NotSpdError on a bad pivot.
inline void dense_cholesky(DenseMat& m) {
  const int n = m.n;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = m.at(i, j);
      for (int k = 0; k < j; ++k) s -= m.at(i, k) * m.at(j, k);
      if (i == j) {
        NOI_REQUIRE(s > 0.0 && std::isfinite(s), NotSpdError, "dense cholesky: non-positive pivot");
        m.at(i, i) = std::sqrt(s);
      } else {
        m.at(i, j) = s / m.at(j, j);
      }
    }
    for (int j = i + 1; j < n; ++j) m.at(i, j) = 0.0;
  }
}

inline std::vector<double> dense_chol_solve(const DenseMat& l, std::vector<double> b) {
  const int n = l.n;
  for (int i = 0; i < n; ++i) {
    double s = b[static_cast<std::size_t>(i)];
    for (int k = 0; k < i; ++k) s -= l.at(i, k) * b[static_cast<std::size_t>(k)];
    b[static_cast<std::size_t>(i)] = s / l.at(i, i);
  }
  for (int i = n - 1; i >= 0; --i) {
    double s = b[static_cast<std::size_t>(i)];
    for (int k = i + 1; k < n; ++k) s -= l.at(k, i) * b[static_cast<std::size_t>(k)];
    b[static_cast<std::size_t>(i)] = s / l.at(i, i);
  }
  return b;
}

/// Dense inverse of a sparse SPD matrix (column-by-column solves).
inline DenseMat dense_spd_inverse(const SparseSym& q) {
  const int n = q.n();
  DenseMat qd = DenseMat::zeros(n);
  const SparseCsr& m = q.csr();
  for (int i = 0; i < n; ++i) {
    for (int k = m.row_ptr[static_cast<std::size_t>(i)]; k < m.row_ptr[static_cast<std::size_t>(i) + 1]; ++k) {
      qd.at(i, m.col[static_cast<std::size_t>(k)]) = m.val[static_cast<std::size_t>(k)];
    }
  }
  dense_cholesky(qd);
  DenseMat inv = DenseMat::zeros(n);
  std::vector<double> e(static_cast<std::size_t>(n), 0.0);
  for (int j = 0; j < n; ++j) {
    e[static_cast<std::size_t>(j)] = 1.0;
    std::vector<double> col = dense_chol_solve(qd, e);
    for (int i = 0; i < n; ++i) inv.at(i, j) = col[static_cast<std::size_t>(i)];
    e[static_cast<std::size_t>(j)] = 0.0;
  }
  return inv;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// OIProblem: observations + prior precision Q (sparse) + prior mean.
// A dense prior covariance P can be attached for the covariance-form solve;
// otherwise it is derived from Q on demand (small instances only).
// ---------------------------------------------------------------------------

struct OIProblem {
  ObsSet obs;
  SparseSym precision;  // Q = P^{-1}
  Field3D mean;
  std::optional<detail::DenseMat> covariance;  // optional explicit dense P

  void check() const {
    NOI_REQUIRE(static_cast<int>(mean.numel()) == precision.n(), DimensionError,
                "OIProblem: mean length does not match Q");
    NOI_REQUIRE(mean.numel() == obs.mask.numel(), DimensionError, "OIProblem: obs grid does not match mean");
    NOI_REQUIRE(obs.sigma2 > 0.0, ContractError, "OIProblem: sigma2 must be positive");
  }
};

/// (1/sigma2) ||y - Hx||^2 + (x - mu)' Q (x - mu)
inline double oi_cost(const Tensor& x, const OIProblem& prob) {
  prob.check();
  NOI_REQUIRE(x.numel() == prob.mean.numel(), DimensionError, "oi_cost: state shape mismatch");
  double data = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (prob.obs.mask.on[i]) {
      const double r = prob.obs.values[i] - x[i];
      data += r * r;
    }
  }
  std::vector<double> d(x.numel());
  for (std::size_t i = 0; i < x.numel(); ++i) d[i] = x[i] - prob.mean.data[i];
  return data / prob.obs.sigma2 + quad_form(prob.precision, d);
}

inline double oi_cost(const Field3D& x, const OIProblem& prob) { return oi_cost(x.data, prob); }

/// Gradient of oi_cost at x.
inline Tensor oi_grad(const Tensor& x, const OIProblem& prob) {
  NOI_REQUIRE(x.numel() == prob.mean.numel(), DimensionError, "oi_grad: state shape mismatch");
  std::vector<double> d(x.numel());
  for (std::size_t i = 0; i < x.numel(); ++i) d[i] = x[i] - prob.mean.data[i];
  const std::vector<double> qd = prob.precision.apply(d);
  Tensor g(x.shape());
  const double inv_s2 = 1.0 / prob.obs.sigma2;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    double v = 2.0 * qd[i];
    if (prob.obs.mask.on[i]) v += 2.0 * inv_s2 * (x[i] - prob.obs.values[i]);
    g[i] = v;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Precision-form solve:  x = mu + (H'R^{-1}H + Q)^{-1} H'R^{-1} (y - H mu).
// One sparse SPD solve in state space.
// ---------------------------------------------------------------------------

struct PrecisionSolveOptions {
  Ordering ordering = Ordering::rcm;
  std::size_t direct_mem_limit = std::size_t(400) << 20;
  CgOptions cg;
};

inline Field3D solve_precision(const OIProblem& prob, const PrecisionSolveOptions& opt = {}) {
  prob.check();
  const std::size_t n = prob.mean.numel();
  const double inv_s2 = 1.0 / prob.obs.sigma2;

  TripletBuilder diag;
  for (std::size_t i = 0; i < n; ++i) {
    if (prob.obs.mask.on[i]) diag.add(static_cast<int>(i), static_cast<int>(i), inv_s2);
  }
  const SparseSym sys(sparse_add(prob.precision.csr(), diag.to_csr(static_cast<int>(n), static_cast<int>(n))));

  std::vector<double> rhs(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (prob.obs.mask.on[i]) rhs[i] = inv_s2 * (prob.obs.values[i] - prob.mean.data[i]);
  }
  std::vector<double> dx;
  if (CholFactor::envelope_bytes(sys, opt.ordering) <= opt.direct_mem_limit) {
    dx = cholesky(sys, opt.ordering).solve(rhs);
  } else {
    dx = pcg_solve(sys, rhs, opt.cg);
  }
  Field3D out = prob.mean;
  for (std::size_t i = 0; i < n; ++i) out.data[i] += dx[i];
  out.data.check_finite("solve_precision");
  return out;
}

// ---------------------------------------------------------------------------
// Covariance-form solve (Kalman gain):
//   x = mu + P H' (H P H' + R)^{-1} (y - H mu).
// Dense observation-space algebra; small instances only.
// ---------------------------------------------------------------------------

inline Field3D solve_covariance(const OIProblem& prob, int max_state_dim = 2000) {
  prob.check();
  const int n = static_cast<int>(prob.mean.numel());
  NOI_REQUIRE(n <= max_state_dim, ContractError,
              "solve_covariance: instance too large for dense algebra (" + std::to_string(n) + ")");
  const detail::DenseMat p = prob.covariance ? *prob.covariance : detail::dense_spd_inverse(prob.precision);
  NOI_REQUIRE(p.n == n, DimensionError, "solve_covariance: covariance size mismatch");

  std::vector<int> obs_idx;
  for (std::size_t i = 0; i < prob.obs.mask.on.size(); ++i) {
    if (prob.obs.mask.on[i]) obs_idx.push_back(static_cast<int>(i));
  }
  const int m = static_cast<int>(obs_idx.size());
  Field3D out = prob.mean;
  if (m == 0) return out;

  detail::DenseMat s = detail::DenseMat::zeros(m);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) s.at(i, j) = p.at(obs_idx[static_cast<std::size_t>(i)], obs_idx[static_cast<std::size_t>(j)]);
    s.at(i, i) += prob.obs.sigma2;
  }
  detail::dense_cholesky(s);
  std::vector<double> innov(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const std::size_t gi = static_cast<std::size_t>(obs_idx[static_cast<std::size_t>(i)]);
    innov[static_cast<std::size_t>(i)] = prob.obs.values[gi] - prob.mean.data[gi];
  }
  const std::vector<double> w = detail::dense_chol_solve(s, std::move(innov));
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int j = 0; j < m; ++j) acc += p.at(i, obs_idx[static_cast<std::size_t>(j)]) * w[static_cast<std::size_t>(j)];
    out.data[static_cast<std::size_t>(i)] += acc;
  }
  out.data.check_finite("solve_covariance");
  return out;
}

// ---------------------------------------------------------------------------
// Plain gradient-descent OI.
// ---------------------------------------------------------------------------

struct GdTraceRow {
  int iter;
  double cost;
  double grad_norm;
};

struct GdOptions {
  int max_iters = 5000;
  double grad_tol = 0.0;                    // stop when ||g|| falls below (0 = run all iters)
  std::function<double(int)> step;          // step size per iteration; default 1/lambda_max
  int power_iters = 60;                     // for the default step estimate
};

/// Largest Hessian eigenvalue of oi_cost via power iteration
/// (Hessian = 2 (Q + H'H / sigma2)).
inline double oi_hessian_lambda_max(const OIProblem& prob, int iters = 60) {
  const std::size_t n = prob.mean.numel();
  RandomStream rng(12345);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  const double inv_s2 = 1.0 / prob.obs.sigma2;
  double lam = 1.0;
  for (int it = 0; it < iters; ++it) {
    std::vector<double> hv = prob.precision.apply(v);
    for (std::size_t i = 0; i < n; ++i) {
      if (prob.obs.mask.on[i]) hv[i] += inv_s2 * v[i];
      hv[i] *= 2.0;
    }
    double nrm = 0.0;
    for (double x : hv) nrm += x * x;
    nrm = std::sqrt(nrm);
    NOI_REQUIRE(nrm > 0.0, NumericError, "power iteration collapsed");
    for (std::size_t i = 0; i < n; ++i) v[i] = hv[i] / nrm;
    lam = nrm;
  }
  return lam;
}

inline std::pair<Field3D, std::vector<GdTraceRow>> gradient_descent_oi(const OIProblem& prob, const Field3D& x0,
                                                                       const GdOptions& opt = {}) {
  prob.check();
  NOI_REQUIRE(x0.numel() == prob.mean.numel(), DimensionError, "gradient_descent_oi: bad initial state");
  std::function<double(int)> step = opt.step;
  if (!step) {
    const double fixed = 1.0 / oi_hessian_lambda_max(prob, opt.power_iters);
    step = [fixed](int) { return fixed; };
  }
  Field3D x = x0;
  std::vector<GdTraceRow> trace;
  trace.reserve(static_cast<std::size_t>(opt.max_iters));
  for (int k = 0; k < opt.max_iters; ++k) {
    const Tensor g = oi_grad(x.data, prob);
    double gn = 0.0;
    for (std::size_t i = 0; i < g.numel(); ++i) gn += g[i] * g[i];
    gn = std::sqrt(gn);
    trace.push_back({k, oi_cost(x, prob), gn});
    if (opt.grad_tol > 0.0 && gn < opt.grad_tol) break;
    const double a = step(k);
    for (std::size_t i = 0; i < x.numel(); ++i) x.data[i] -= a * g[i];
  }
  return {std::move(x), std::move(trace)};
}

// ---------------------------------------------------------------------------
// Spectral square-root kernels (stationary periodic case).
//
// Given a strictly positive spectrum s on the (T, ny, nx) torus, returns the
// real convolution kernel whose circulant operator has eigenvalues sqrt(s).
// Feeding the spectrum of Q yields the square-root factor L with L'L = Q;
// feeding a covariance spectrum yields the square root of P.
// ---------------------------------------------------------------------------

struct SpectralKernel {
  Tensor raw;       // (T, ny, nx): tap for circular offset (dt, dy, dx)
  Tensor centered;  // odd-sized centered kernel for circ_conv3d
  int clipped = 0;  // spectrum bins raised to the floor before sqrt
};

namespace detail {

/// Fold the raw circular taps into a centered odd kernel. For even axes the
/// tap at offset n/2 is split between the two aliased positions so the
/// centered kernel applies exactly the same circulant operator.
inline Tensor center_circular_kernel(const Tensor& raw) {
  const int T = raw.dim(0), H = raw.dim(1), W = raw.dim(2);
  const int mt = (T % 2 == 0) ? T + 1 : T;
  const int mh = (H % 2 == 0) ? H + 1 : H;
  const int mw = (W % 2 == 0) ? W + 1 : W;
  Tensor out({mt, mh, mw});
  auto weight = [](int off, int n) {
    // split factor for aliased boundary taps on even axes
    return (n % 2 == 0 && std::abs(off) == n / 2) ? 0.5 : 1.0;
  };
  auto wrap = [](int off, int n) {
    int r = off % n;
    return r < 0 ? r + n : r;
  };
  for (int it = 0; it < mt; ++it) {
    const int ot = it - mt / 2;
    for (int iy = 0; iy < mh; ++iy) {
      const int oy = iy - mh / 2;
      for (int ix = 0; ix < mw; ++ix) {
        const int ox = ix - mw / 2;
        const double w = weight(ot, T) * weight(oy, H) * weight(ox, W);
        out[(static_cast<std::size_t>(it) * mh + iy) * mw + ix] =
            w * raw[(static_cast<std::size_t>(wrap(ot, T)) * H + wrap(oy, H)) * W + wrap(ox, W)];
      }
    }
  }
  return out;
}

}  // namespace detail

inline SpectralKernel spectral_sqrt_kernel(const Tensor& spectrum, double floor = 1e-12) {
  NOI_REQUIRE(spectrum.ndims() == 3, DimensionError, "spectral_sqrt_kernel expects a (T,ny,nx) spectrum");
  const int T = spectrum.dim(0), H = spectrum.dim(1), W = spectrum.dim(2);
  SpectralKernel out;
  std::vector<dft::cd> buf(spectrum.numel());
  for (std::size_t i = 0; i < spectrum.numel(); ++i) {
    double v = spectrum[i];
    NOI_REQUIRE(v > 0.0, NumericError, "spectral_sqrt_kernel: spectrum is not positive (not a covariance)");
    if (v < floor) {
      v = floor;
      ++out.clipped;
    }
    buf[i] = dft::cd(std::sqrt(v), 0.0);
  }
  dft::transform3(buf, T, H, W, +1);  // inverse DFT
  out.raw = Tensor({T, H, W});
  double max_im = 0.0, max_re = 0.0;
  for (std::size_t i = 0; i < buf.size(); ++i) {
    out.raw[i] = buf[i].real();
    max_im = std::max(max_im, std::fabs(buf[i].imag()));
    max_re = std::max(max_re, std::fabs(buf[i].real()));
  }
  NOI_REQUIRE(max_im <= 1e-9 * std::max(1.0, max_re), NumericError,
              "spectral_sqrt_kernel: spectrum is not symmetric (complex kernel)");
  out.centered = detail::center_circular_kernel(out.raw);
  return out;
}

/// Square-root factor of the periodic window precision: a convolution kernel
/// k with (conv k)' (conv k) = precision_matrix_periodic(p, window_len).
inline SpectralKernel stationary_prior_kernel(const SpdeParams& p, int window_len) {
  return spectral_sqrt_kernel(stationary_precision_spectrum(p, window_len));
}

}  // namespace noi
