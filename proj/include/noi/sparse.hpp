// noi: trainable optimal interpolation for gappy space-time fields.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <queue>
#include <vector>

#include "noi/core.hpp"

namespace noi {

// ---------------------------------------------------------------------------
// General compressed-sparse-row matrix. Building block for the symmetric
// type below and for triangular factors used as prior operators.
// ---------------------------------------------------------------------------

struct SparseCsr {
  int rows = 0, cols = 0;
  std::vector<int> row_ptr;  // size rows+1
  std::vector<int> col;
  std::vector<double> val;

  std::size_t nnz() const { return col.size(); }

  void apply(const double* x, double* y) const {
    for (int i = 0; i < rows; ++i) {
      double s = 0.0;
      for (int k = row_ptr[static_cast<std::size_t>(i)]; k < row_ptr[static_cast<std::size_t>(i) + 1]; ++k) {
        s += val[static_cast<std::size_t>(k)] * x[col[static_cast<std::size_t>(k)]];
      }
      y[i] = s;
    }
  }

  std::vector<double> apply(const std::vector<double>& x) const {
    NOI_REQUIRE(static_cast<int>(x.size()) == cols, DimensionError, "sparse apply: vector length mismatch");
    std::vector<double> y(static_cast<std::size_t>(rows));
    apply(x.data(), y.data());
    return y;
  }

  SparseCsr transposed() const {
    SparseCsr t;
    t.rows = cols;
    t.cols = rows;
    t.row_ptr.assign(static_cast<std::size_t>(cols) + 1, 0);
    for (int c : col) ++t.row_ptr[static_cast<std::size_t>(c) + 1];
    for (int i = 0; i < cols; ++i) t.row_ptr[static_cast<std::size_t>(i) + 1] += t.row_ptr[static_cast<std::size_t>(i)];
    t.col.resize(nnz());
    t.val.resize(nnz());
    std::vector<int> cursor(t.row_ptr.begin(), t.row_ptr.end() - 1);
    for (int i = 0; i < rows; ++i) {
      for (int k = row_ptr[static_cast<std::size_t>(i)]; k < row_ptr[static_cast<std::size_t>(i) + 1]; ++k) {
        const int c = col[static_cast<std::size_t>(k)];
        const int dst = cursor[static_cast<std::size_t>(c)]++;
        t.col[static_cast<std::size_t>(dst)] = i;
        t.val[static_cast<std::size_t>(dst)] = val[static_cast<std::size_t>(k)];
      }
    }
    return t;
  }
};

/// Coordinate-format accumulator; duplicate entries are summed.
class TripletBuilder {
 public:
  void add(int i, int j, double v) {
    entries_.push_back({i, j, v});
  }

  SparseCsr to_csr(int rows, int cols) const {
    for (const auto& e : entries_) {
      NOI_REQUIRE(e.i >= 0 && e.i < rows && e.j >= 0 && e.j < cols, DimensionError, "triplet out of range");
    }
    std::vector<std::size_t> order(entries_.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (entries_[a].i != entries_[b].i) return entries_[a].i < entries_[b].i;
      return entries_[a].j < entries_[b].j;
    });
    SparseCsr m;
    m.rows = rows;
    m.cols = cols;
    m.row_ptr.assign(static_cast<std::size_t>(rows) + 1, 0);
    for (std::size_t idx = 0; idx < order.size();) {
      const auto& e0 = entries_[order[idx]];
      double s = 0.0;
      std::size_t idx2 = idx;
      while (idx2 < order.size() && entries_[order[idx2]].i == e0.i && entries_[order[idx2]].j == e0.j) {
        s += entries_[order[idx2]].v;
        ++idx2;
      }
      m.col.push_back(e0.j);
      m.val.push_back(s);
      ++m.row_ptr[static_cast<std::size_t>(e0.i) + 1];
      idx = idx2;
    }
    for (int i = 0; i < rows; ++i) m.row_ptr[static_cast<std::size_t>(i) + 1] += m.row_ptr[static_cast<std::size_t>(i)];
    return m;
  }

 private:
  struct Entry {
    int i, j;
    double v;
  };
  std::vector<Entry> entries_;
};

// ---------------------------------------------------------------------------
// SparseSym: structurally symmetric matrix with full (both-triangle) storage.
// ---------------------------------------------------------------------------

class SparseSym {
 public:
  SparseSym() = default;

  /// Takes the full symmetric pattern. Verifies structural symmetry and
  /// finiteness; numeric symmetry is enforced to round-off by averaging.
  explicit SparseSym(SparseCsr m) : csr_(std::move(m)) {
    NOI_REQUIRE(csr_.rows == csr_.cols, DimensionError, "SparseSym must be square");
    for (double v : csr_.val) NOI_REQUIRE(std::isfinite(v), NumericError, "SparseSym: non-finite entry");
    const SparseCsr t = csr_.transposed();
    NOI_REQUIRE(t.row_ptr == csr_.row_ptr && t.col == csr_.col, ContractError,
                "SparseSym: pattern is not structurally symmetric");
    for (std::size_t k = 0; k < csr_.val.size(); ++k) {
      csr_.val[k] = 0.5 * (csr_.val[k] + t.val[k]);
    }
  }

  int n() const { return csr_.rows; }
  const SparseCsr& csr() const { return csr_; }

  std::vector<double> apply(const std::vector<double>& x) const { return csr_.apply(x); }
  void apply(const double* x, double* y) const { csr_.apply(x, y); }

  double entry(int i, int j) const {
    for (int k = csr_.row_ptr[static_cast<std::size_t>(i)]; k < csr_.row_ptr[static_cast<std::size_t>(i) + 1]; ++k) {
      if (csr_.col[static_cast<std::size_t>(k)] == j) return csr_.val[static_cast<std::size_t>(k)];
    }
    return 0.0;
  }

  std::size_t max_row_nnz() const {
    std::size_t m = 0;
    for (int i = 0; i < n(); ++i) {
      m = std::max(m, static_cast<std::size_t>(csr_.row_ptr[static_cast<std::size_t>(i) + 1] -
                                               csr_.row_ptr[static_cast<std::size_t>(i)]));
    }
    return m;
  }

 private:
  SparseCsr csr_;
};

inline std::vector<double> apply(const SparseSym& a, const std::vector<double>& x) { return a.apply(x); }

/// x' A x, computed as the inner product of x with apply(A, x).
inline double quad_form(const SparseSym& a, const std::vector<double>& x) {
  const std::vector<double> ax = a.apply(x);
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * ax[i];
  return s;
}

// --- sparse algebra ----------------------------------------------------------

inline SparseCsr sparse_identity(int n, double scale = 1.0) {
  SparseCsr m;
  m.rows = m.cols = n;
  m.row_ptr.resize(static_cast<std::size_t>(n) + 1);
  m.col.resize(static_cast<std::size_t>(n));
  m.val.assign(static_cast<std::size_t>(n), scale);
  for (int i = 0; i <= n; ++i) m.row_ptr[static_cast<std::size_t>(i)] = i;
  std::iota(m.col.begin(), m.col.end(), 0);
  return m;
}

/// alpha*A + beta*B with matching dimensions (patterns may differ).
inline SparseCsr sparse_add(const SparseCsr& a, const SparseCsr& b, double alpha = 1.0, double beta = 1.0) {
  NOI_REQUIRE(a.rows == b.rows && a.cols == b.cols, DimensionError, "sparse_add: dimension mismatch");
  SparseCsr c;
  c.rows = a.rows;
  c.cols = a.cols;
  c.row_ptr.assign(static_cast<std::size_t>(a.rows) + 1, 0);
  std::vector<double> acc(static_cast<std::size_t>(a.cols), 0.0);
  std::vector<int> mark(static_cast<std::size_t>(a.cols), -1);
  std::vector<int> touched;
  for (int i = 0; i < a.rows; ++i) {
    touched.clear();
    auto scan = [&](const SparseCsr& m, double w) {
      for (int k = m.row_ptr[static_cast<std::size_t>(i)]; k < m.row_ptr[static_cast<std::size_t>(i) + 1]; ++k) {
        const int j = m.col[static_cast<std::size_t>(k)];
        if (mark[static_cast<std::size_t>(j)] != i) {
          mark[static_cast<std::size_t>(j)] = i;
          acc[static_cast<std::size_t>(j)] = 0.0;
          touched.push_back(j);
        }
        acc[static_cast<std::size_t>(j)] += w * m.val[static_cast<std::size_t>(k)];
      }
    };
    scan(a, alpha);
    scan(b, beta);
    std::sort(touched.begin(), touched.end());
    for (int j : touched) {
      c.col.push_back(j);
      c.val.push_back(acc[static_cast<std::size_t>(j)]);
    }
    c.row_ptr[static_cast<std::size_t>(i) + 1] = static_cast<int>(c.col.size());
  }
  return c;
}

inline SparseCsr sparse_matmul(const SparseCsr& a, const SparseCsr& b) {
  NOI_REQUIRE(a.cols == b.rows, DimensionError, "sparse_matmul: inner dimension mismatch");
  SparseCsr c;
  c.rows = a.rows;
  c.cols = b.cols;
  c.row_ptr.assign(static_cast<std::size_t>(a.rows) + 1, 0);
  std::vector<double> acc(static_cast<std::size_t>(b.cols), 0.0);
  std::vector<int> mark(static_cast<std::size_t>(b.cols), -1);
  std::vector<int> touched;
  for (int i = 0; i < a.rows; ++i) {
    touched.clear();
    for (int ka = a.row_ptr[static_cast<std::size_t>(i)]; ka < a.row_ptr[static_cast<std::size_t>(i) + 1]; ++ka) {
      const int kcol = a.col[static_cast<std::size_t>(ka)];
      const double av = a.val[static_cast<std::size_t>(ka)];
      for (int kb = b.row_ptr[static_cast<std::size_t>(kcol)]; kb < b.row_ptr[static_cast<std::size_t>(kcol) + 1]; ++kb) {
        const int j = b.col[static_cast<std::size_t>(kb)];
        if (mark[static_cast<std::size_t>(j)] != i) {
          mark[static_cast<std::size_t>(j)] = i;
          acc[static_cast<std::size_t>(j)] = 0.0;
          touched.push_back(j);
        }
        acc[static_cast<std::size_t>(j)] += av * b.val[static_cast<std::size_t>(kb)];
      }
    }
    std::sort(touched.begin(), touched.end());
    for (int j : touched) {
      c.col.push_back(j);
      c.val.push_back(acc[static_cast<std::size_t>(j)]);
    }
    c.row_ptr[static_cast<std::size_t>(i) + 1] = static_cast<int>(c.col.size());
  }
  return c;
}

// --- orderings ---------------------------------------------------------------

enum class Ordering { natural, rcm };

/// Reverse Cuthill-McKee. Good bandwidth reduction on grid graphs, which is
/// what the envelope factorization below wants.
inline std::vector<int> rcm_ordering(const SparseCsr& a) {
  const int n = a.rows;
  std::vector<int> degree(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) degree[static_cast<std::size_t>(i)] = a.row_ptr[static_cast<std::size_t>(i) + 1] - a.row_ptr[static_cast<std::size_t>(i)];
  std::vector<int> order;
  order.reserve(static_cast<std::size_t>(n));
  std::vector<char> visited(static_cast<std::size_t>(n), 0);
  std::vector<int> nbrs;
  for (int comp_start = 0; comp_start < n; ++comp_start) {
    if (visited[static_cast<std::size_t>(comp_start)]) continue;
    // min-degree node of this component as a pseudo-peripheral start
    int start = comp_start;
    for (int i = comp_start; i < n; ++i) {
      if (!visited[static_cast<std::size_t>(i)] && degree[static_cast<std::size_t>(i)] < degree[static_cast<std::size_t>(start)]) start = i;
    }
    std::queue<int> q;
    q.push(start);
    visited[static_cast<std::size_t>(start)] = 1;
    while (!q.empty()) {
      const int u = q.front();
      q.pop();
      order.push_back(u);
      nbrs.clear();
      for (int k = a.row_ptr[static_cast<std::size_t>(u)]; k < a.row_ptr[static_cast<std::size_t>(u) + 1]; ++k) {
        const int v = a.col[static_cast<std::size_t>(k)];
        if (!visited[static_cast<std::size_t>(v)]) {
          visited[static_cast<std::size_t>(v)] = 1;
          nbrs.push_back(v);
        }
      }
      std::sort(nbrs.begin(), nbrs.end(), [&](int x, int y) {
        if (degree[static_cast<std::size_t>(x)] != degree[static_cast<std::size_t>(y)]) return degree[static_cast<std::size_t>(x)] < degree[static_cast<std::size_t>(y)];
        return x < y;
      });
      for (int v : nbrs) q.push(v);
    }
  }
  std::reverse(order.begin(), order.end());
  return order;  // order[k] = original index placed at position k
}

// ---------------------------------------------------------------------------
// CholFactor: envelope (profile) Cholesky with a fill-reducing permutation.
// Rows are stored dense from their first nonzero column to the diagonal;
// for RCM-ordered grid operators the envelope is tight.
// ---------------------------------------------------------------------------

class CholFactor {
 public:
  /// Estimated envelope storage (bytes) for a given ordering, without
  /// factorizing. Used to decide between the direct and CG paths.
  static std::size_t envelope_bytes(const SparseSym& a, Ordering ord) {
    const auto layout = symbolic(a, ord);
    return layout.total * sizeof(double);
  }

  static CholFactor factorize(const SparseSym& a, Ordering ord = Ordering::rcm) {
    CholFactor f;
    const int n = a.n();
    auto layout = symbolic(a, ord);
    f.perm_ = std::move(layout.perm);
    f.iperm_.resize(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) f.iperm_[static_cast<std::size_t>(f.perm_[static_cast<std::size_t>(k)])] = k;
    f.first_ = std::move(layout.first);
    f.offset_ = std::move(layout.offset);
    f.vals_.assign(layout.total, 0.0);

    // scatter permuted A into the envelope (lower triangle)
    const SparseCsr& m = a.csr();
    for (int inew = 0; inew < n; ++inew) {
      const int iold = f.perm_[static_cast<std::size_t>(inew)];
      for (int k = m.row_ptr[static_cast<std::size_t>(iold)]; k < m.row_ptr[static_cast<std::size_t>(iold) + 1]; ++k) {
        const int jnew = f.iperm_[static_cast<std::size_t>(m.col[static_cast<std::size_t>(k)])];
        if (jnew <= inew) f.at(inew, jnew) = m.val[static_cast<std::size_t>(k)];
      }
    }

    // numeric factorization
    for (int i = 0; i < n; ++i) {
      const int fi = f.first_[static_cast<std::size_t>(i)];
      double* rowi = &f.vals_[f.offset_[static_cast<std::size_t>(i)]];
      for (int j = fi; j < i; ++j) {
        const int fj = f.first_[static_cast<std::size_t>(j)];
        const double* rowj = &f.vals_[f.offset_[static_cast<std::size_t>(j)]];
        const int k0 = std::max(fi, fj);
        double s = rowi[j - fi];
        const double* pi = rowi + (k0 - fi);
        const double* pj = rowj + (k0 - fj);
        for (int k = k0; k < j; ++k) s -= *pi++ * *pj++;
        rowi[j - fi] = s / rowj[j - fj];
      }
      double d = rowi[i - fi];
      for (int k = fi; k < i; ++k) d -= rowi[k - fi] * rowi[k - fi];
      NOI_REQUIRE(d > 0.0 && std::isfinite(d), NotSpdError,
                  "cholesky: non-positive pivot at row " + std::to_string(i));
      rowi[i - fi] = std::sqrt(d);
    }
    return f;
  }

  int n() const { return static_cast<int>(first_.size()); }
  const std::vector<int>& perm() const { return perm_; }

  /// L entry in permuted coordinates (lower triangle; zero outside envelope).
  double l_entry(int i, int j) const {
    if (j > i || j < first_[static_cast<std::size_t>(i)]) return 0.0;
    return vals_[f_offset(i) + static_cast<std::size_t>(j - first_[static_cast<std::size_t>(i)])];
  }

  /// Solve A x = b for the matrix this factor was computed from.
  std::vector<double> solve(const std::vector<double>& b) const {
    const int nn = n();
    NOI_REQUIRE(static_cast<int>(b.size()) == nn, DimensionError, "cholesky solve: length mismatch");
    std::vector<double> y(static_cast<std::size_t>(nn));
    for (int i = 0; i < nn; ++i) y[static_cast<std::size_t>(i)] = b[static_cast<std::size_t>(perm_[static_cast<std::size_t>(i)])];
    // forward: L z = P b
    for (int i = 0; i < nn; ++i) {
      const int fi = first_[static_cast<std::size_t>(i)];
      const double* rowi = &vals_[f_offset(i)];
      double s = y[static_cast<std::size_t>(i)];
      for (int k = fi; k < i; ++k) s -= rowi[k - fi] * y[static_cast<std::size_t>(k)];
      y[static_cast<std::size_t>(i)] = s / rowi[i - fi];
    }
    // backward: L^T w = z
    for (int i = nn - 1; i >= 0; --i) {
      const int fi = first_[static_cast<std::size_t>(i)];
      const double* rowi = &vals_[f_offset(i)];
      const double w = y[static_cast<std::size_t>(i)] / rowi[i - fi];
      y[static_cast<std::size_t>(i)] = w;
      for (int k = fi; k < i; ++k) y[static_cast<std::size_t>(k)] -= rowi[k - fi] * w;
    }
    std::vector<double> x(static_cast<std::size_t>(nn));
    for (int i = 0; i < nn; ++i) x[static_cast<std::size_t>(perm_[static_cast<std::size_t>(i)])] = y[static_cast<std::size_t>(i)];
    return x;
  }

  /// Apply L^T P (maps x to the "whitened" coordinates): ||L^T P x||^2 = x' A x.
  std::vector<double> apply_lt_p(const std::vector<double>& x) const {
    const int nn = n();
    NOI_REQUIRE(static_cast<int>(x.size()) == nn, DimensionError, "apply_lt_p: length mismatch");
    std::vector<double> xp(static_cast<std::size_t>(nn)), out(static_cast<std::size_t>(nn), 0.0);
    for (int i = 0; i < nn; ++i) xp[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(perm_[static_cast<std::size_t>(i)])];
    for (int i = 0; i < nn; ++i) {
      const int fi = first_[static_cast<std::size_t>(i)];
      const double* rowi = &vals_[f_offset(i)];
      const double xi = xp[static_cast<std::size_t>(i)];
      for (int k = fi; k <= i; ++k) out[static_cast<std::size_t>(k)] += rowi[k - fi] * xi;
    }
    return out;
  }

  /// Export L^T P as a general sparse matrix (used by the matrix prior).
  SparseCsr lt_p_csr() const {
    const int nn = n();
    TripletBuilder tb;
    for (int i = 0; i < nn; ++i) {
      const int fi = first_[static_cast<std::size_t>(i)];
      for (int k = fi; k <= i; ++k) {
        const double v = vals_[f_offset(i) + static_cast<std::size_t>(k - fi)];
        if (v != 0.0) tb.add(k, perm_[static_cast<std::size_t>(i)], v);  // row k of L^T, column through P
      }
    }
    return tb.to_csr(nn, nn);
  }

 private:
  struct Layout {
    std::vector<int> perm;
    std::vector<int> first;
    std::vector<std::size_t> offset;
    std::size_t total = 0;
  };

  static Layout symbolic(const SparseSym& a, Ordering ord) {
    const int n = a.n();
    Layout lay;
    lay.perm = (ord == Ordering::rcm) ? rcm_ordering(a.csr()) : [&] {
      std::vector<int> p(static_cast<std::size_t>(n));
      std::iota(p.begin(), p.end(), 0);
      return p;
    }();
    std::vector<int> iperm(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) iperm[static_cast<std::size_t>(lay.perm[static_cast<std::size_t>(k)])] = k;
    lay.first.assign(static_cast<std::size_t>(n), 0);
    const SparseCsr& m = a.csr();
    for (int inew = 0; inew < n; ++inew) {
      int fi = inew;
      const int iold = lay.perm[static_cast<std::size_t>(inew)];
      for (int k = m.row_ptr[static_cast<std::size_t>(iold)]; k < m.row_ptr[static_cast<std::size_t>(iold) + 1]; ++k) {
        fi = std::min(fi, iperm[static_cast<std::size_t>(m.col[static_cast<std::size_t>(k)])]);
      }
      lay.first[static_cast<std::size_t>(inew)] = fi;
    }
    lay.offset.resize(static_cast<std::size_t>(n));
    std::size_t total = 0;
    for (int i = 0; i < n; ++i) {
      lay.offset[static_cast<std::size_t>(i)] = total;
      total += static_cast<std::size_t>(i - lay.first[static_cast<std::size_t>(i)] + 1);
    }
    lay.total = total;
    return lay;
  }

  std::size_t f_offset(int i) const { return offset_[static_cast<std::size_t>(i)]; }
  double& at(int i, int j) { return vals_[offset_[static_cast<std::size_t>(i)] + static_cast<std::size_t>(j - first_[static_cast<std::size_t>(i)])]; }

  std::vector<int> perm_, iperm_, first_;
  std::vector<std::size_t> offset_;
  std::vector<double> vals_;
};

inline CholFactor cholesky(const SparseSym& a, Ordering ord = Ordering::rcm) { return CholFactor::factorize(a, ord); }

// --- Jacobi-preconditioned conjugate gradients -------------------------------

struct CgOptions {
  double rel_tol = 1e-10;
  int max_iters = 10000;
};

inline std::vector<double> pcg_solve(const SparseSym& a, const std::vector<double>& b, const CgOptions& opt = {}) {
  const int n = a.n();
  NOI_REQUIRE(static_cast<int>(b.size()) == n, DimensionError, "pcg: length mismatch");
  std::vector<double> inv_diag(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double d = a.entry(i, i);
    NOI_REQUIRE(d > 0.0, NotSpdError, "pcg: non-positive diagonal");
    inv_diag[static_cast<std::size_t>(i)] = 1.0 / d;
  }
  auto dot = [](const std::vector<double>& u, const std::vector<double>& v) {
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
    return s;
  };
  std::vector<double> x(static_cast<std::size_t>(n), 0.0), r = b, z(static_cast<std::size_t>(n)), p, ap;
  const double bnorm = std::sqrt(dot(b, b));
  if (bnorm == 0.0) return x;
  for (int i = 0; i < n; ++i) z[static_cast<std::size_t>(i)] = inv_diag[static_cast<std::size_t>(i)] * r[static_cast<std::size_t>(i)];
  p = z;
  double rz = dot(r, z);
  for (int it = 0; it < opt.max_iters; ++it) {
    ap = a.apply(p);
    const double alpha = rz / dot(p, ap);
    for (int i = 0; i < n; ++i) {
      x[static_cast<std::size_t>(i)] += alpha * p[static_cast<std::size_t>(i)];
      r[static_cast<std::size_t>(i)] -= alpha * ap[static_cast<std::size_t>(i)];
    }
    if (std::sqrt(dot(r, r)) <= opt.rel_tol * bnorm) return x;
    for (int i = 0; i < n; ++i) z[static_cast<std::size_t>(i)] = inv_diag[static_cast<std::size_t>(i)] * r[static_cast<std::size_t>(i)];
    const double rz_new = dot(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = z[static_cast<std::size_t>(i)] + beta * p[static_cast<std::size_t>(i)];
  }
  throw IterationLimitError("pcg did not converge in " + std::to_string(opt.max_iters) + " iterations");
}

// --- one-shot SPD solve -------------------------------------------------------

struct SolveSpdOptions {
  std::size_t direct_mem_limit = std::size_t(400) << 20;  // bytes of envelope before CG kicks in
  CgOptions cg;
};

/// Solve A x = b for SPD A. Direct envelope Cholesky while the factor fits,
/// Jacobi-PCG above the memory limit.
inline std::vector<double> solve_spd(const SparseSym& a, const std::vector<double>& b, const SolveSpdOptions& opt = {}) {
  if (CholFactor::envelope_bytes(a, Ordering::rcm) <= opt.direct_mem_limit) {
    return cholesky(a).solve(b);
  }
  return pcg_solve(a, b, opt.cg);
}

}  // namespace noi
