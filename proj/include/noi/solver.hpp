// noi: trainable optimal interpolation for gappy space-time fields.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <utility>

#include "noi/variational.hpp"

namespace noi {

// ---------------------------------------------------------------------------
// Step-size and mixing schedules:
//   a(k) = nu * K0 / (K0 + k)          positive, decreasing
//   w(k) = tanh(alpha * (k - K1))      in (-1, 1), zero at K1, -> 1
// Early iterations weight the LSTM direction, late iterations reduce to a
// plain decreasing-step gradient descent.
// ---------------------------------------------------------------------------

struct Schedule {
  double nu = 0.05;
  int k0 = 50;
  double alpha = 0.1;
  int k1 = 10;

  void validate() const {
    NOI_REQUIRE(nu > 0.0 && alpha > 0.0, ContractError, "Schedule: nu and alpha must be positive");
    NOI_REQUIRE(k0 >= 1 && k1 >= 1, ContractError, "Schedule: K0 and K1 must be positive integers");
  }
};

inline std::pair<double, double> schedule_eval(const Schedule& s, int k) {
  const double a = s.nu * static_cast<double>(s.k0) / (static_cast<double>(s.k0) + k);
  const double w = std::tanh(s.alpha * (k - s.k1));
  return {a, w};
}

// ---------------------------------------------------------------------------
// SolverModel: the trainable state of the iterative solver. The neural
// operator G is a ConvLSTM cell followed by a 1x1 linear projection back to
// state channels; the LSTM hidden state is bounded, so G is a bounded
// operator whatever its weights.
// ---------------------------------------------------------------------------

struct SolverModel {
  bool use_lstm = true;
  ConvLSTMCell cell;
  Tensor proj;  // (state_ch, hidden, 1, 1)
  Schedule sched;
  int iters = 20;

  static SolverModel pure_gradient(Schedule s = {}, int iters = 20) {
    SolverModel m;
    m.use_lstm = false;
    m.sched = s;
    m.iters = iters;
    return m;
  }

  static SolverModel zeros(int state_ch, int hidden, int ksize = 3, Pad pad = Pad::periodic, Schedule s = {},
                           int iters = 20) {
    SolverModel m;
    m.cell = ConvLSTMCell::zeros(state_ch, hidden, ksize, pad);
    m.proj = Tensor({state_ch, hidden, 1, 1});
    m.sched = s;
    m.iters = iters;
    return m;
  }

  static SolverModel random(int state_ch, int hidden, std::uint64_t seed, int ksize = 3, Pad pad = Pad::periodic,
                            Schedule s = {}, int iters = 20, double proj_scale = 0.05) {
    SolverModel m;
    RandomStream rng(seed);
    m.cell = ConvLSTMCell::random(state_ch, hidden, rng, ksize, pad);
    m.proj = Tensor::randn({state_ch, hidden, 1, 1}, rng, proj_scale / std::sqrt(static_cast<double>(hidden)));
    m.sched = s;
    m.iters = iters;
    return m;
  }

  int state_channels() const { return use_lstm ? cell.in_channels : 0; }

  void collect_params(ParamRefs& refs) {
    if (!use_lstm) return;
    cell.collect_params(refs, "solver.cell");
    refs.add("solver.proj", proj);
  }
};

/// Zero-filling initialization: observed values where sampled, zero elsewhere.
inline Field3D init_state(const ObsSet& obs) {
  return Field3D(Tensor(obs.values), obs.mask.geom);
}

// ---------------------------------------------------------------------------
// Solve traces (the data behind cost-vs-iteration plots).
// Row k holds the cost and gradient norm of the state *entering* iteration k;
// final_j is the cost of the returned state.
// ---------------------------------------------------------------------------

struct SolveTrace {
  struct Row {
    int iter;
    double j;
    double grad_norm;
    double mse_truth;  // NaN-free only when a truth reference was supplied
    double mse_oi;
  };
  std::vector<Row> rows;
  double final_j = 0.0;
  bool has_mse_truth = false;
  bool has_mse_oi = false;
};

struct SolveOptions {
  int iters = -1;  // override model.iters when > 0
  const Field3D* truth = nullptr;
  const Field3D* oi_ref = nullptr;
};

namespace detail {

struct IterDiag {
  double j, grad_norm;
};

/// One Algorithm-1 update on an existing tape. Returns the new iterate and
/// LSTM state (vars on the same tape).
inline Var solver_iteration(Tape& t, SolverModel& model, VarCost& cost, const Binding& b, const ObsVars& ov,
                            const std::optional<Var>& z, Var x, int k, LstmState* lstm, IterDiag* diag) {
  Var j = inner_cost(t, x, ov, z, cost, b);
  Var g = t.grad(j, x);
  if (diag) {
    diag->j = t.val(j)[0];
    double gn = 0.0;
    const Tensor& gv = t.val(g);
    for (std::size_t i = 0; i < gv.numel(); ++i) gn += gv[i] * gv[i];
    diag->grad_norm = std::sqrt(gn);
  }
  const auto [a, w] = schedule_eval(model.sched, k);
  if (!model.use_lstm) {
    return t.sub(x, t.scale(g, a));
  }
  *lstm = lstm_step(t, model.cell, b, g, lstm->h, lstm->c);
  Var gg = t.conv2d(lstm->h, b.of(model.proj), model.cell.pad_mode);
  Var upd = t.add(t.scale(g, a * w), t.scale(gg, a * (1.0 - w)));
  return t.sub(x, upd);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Inference solve: executes exactly K iterations from x0, LSTM state zeroed
// at the start and carried across iterations. Uses a throwaway tape per
// iteration so memory stays flat no matter how long the run is.
// ---------------------------------------------------------------------------

inline std::pair<Field3D, SolveTrace> solve(SolverModel& model, VarCost& cost, const ObsSet& obs, const Field3D& x0,
                                            const std::optional<Field3D>& modality = std::nullopt,
                                            const SolveOptions& opts = {}) {
  model.sched.validate();
  const int iters = opts.iters > 0 ? opts.iters : model.iters;
  NOI_REQUIRE(iters >= 1, ContractError, "solve: iteration budget must be >= 1");
  NOI_REQUIRE(x0.numel() == obs.mask.numel(), DimensionError, "solve: x0 shape does not match observations");

  ParamRefs refs;
  model.collect_params(refs);
  cost.collect_params(refs);

  const int H = x0.ny(), W = x0.nx();
  Tensor x = x0.data;
  Tensor h, c;
  if (model.use_lstm) {
    h = Tensor({model.cell.hidden_channels, H, W});
    c = Tensor({model.cell.hidden_channels, H, W});
  }

  SolveTrace tr;
  tr.has_mse_truth = opts.truth != nullptr;
  tr.has_mse_oi = opts.oi_ref != nullptr;
  tr.rows.reserve(static_cast<std::size_t>(iters));

  for (int k = 0; k < iters; ++k) {
    try {
      Tape t;
      Binding b(t, refs, false);
      ObsVars ov = ObsVars::bind(t, obs);
      std::optional<Var> z;
      if (modality) z = t.constant(Tensor(modality->data));
      Var xv = t.input(Tensor(x), true);
      LstmState lstm;
      if (model.use_lstm) {
        lstm.h = t.input(Tensor(h), false);
        lstm.c = t.input(Tensor(c), false);
      }
      detail::IterDiag diag{};
      Var xn = detail::solver_iteration(t, model, cost, b, ov, z, xv, k, &lstm, &diag);
      tr.rows.push_back({k, diag.j, diag.grad_norm, opts.truth ? mse(x, opts.truth->data) : 0.0,
                         opts.oi_ref ? mse(x, opts.oi_ref->data) : 0.0});
      x = t.val(xn);
      if (model.use_lstm) {
        h = t.val(lstm.h);
        c = t.val(lstm.c);
      }
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " (solver iteration " + std::to_string(k) + ")");
    }
  }
  {
    Tape t;
    Binding b(t, refs, false);
    ObsVars ov = ObsVars::bind(t, obs);
    std::optional<Var> z;
    if (modality) z = t.constant(Tensor(modality->data));
    Var xv = t.input(Tensor(x), false);
    tr.final_j = t.val(inner_cost(t, xv, ov, z, cost, b))[0];
  }
  return {Field3D(std::move(x), x0.geom), std::move(tr)};
}

// ---------------------------------------------------------------------------
// Training-mode solve: the whole unroll lives on one tape so the outer loss
// can backpropagate through every iteration, including through the inner
// cost gradients.
// ---------------------------------------------------------------------------

struct UnrolledSolve {
  Var x_final;
  SolveTrace trace;
};

inline UnrolledSolve solve_unrolled(Tape& t, SolverModel& model, VarCost& cost, const Binding& b, const ObsVars& ov,
                                    const std::optional<Var>& z, Var x0, int iters) {
  model.sched.validate();
  NOI_REQUIRE(iters >= 1, ContractError, "solve_unrolled: iteration budget must be >= 1");
  NOI_REQUIRE(t.needs_grad(x0.id), ContractError,
              "solve_unrolled: x0 must be a grad-enabled leaf (the inner cost is differentiated against it)");
  Var x = x0;
  LstmState lstm;
  const int sh = t.val(x0).dim(1), sw = t.val(x0).dim(2);
  if (model.use_lstm) {
    lstm.h = t.constant(Tensor({model.cell.hidden_channels, sh, sw}));
    lstm.c = t.constant(Tensor({model.cell.hidden_channels, sh, sw}));
  }
  UnrolledSolve out;
  out.trace.rows.reserve(static_cast<std::size_t>(iters));
  for (int k = 0; k < iters; ++k) {
    try {
      detail::IterDiag diag{};
      x = detail::solver_iteration(t, model, cost, b, ov, z, x, k, &lstm, &diag);
      out.trace.rows.push_back({k, diag.j, diag.grad_norm, 0.0, 0.0});
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " (solver iteration " + std::to_string(k) + ")");
    }
  }
  out.x_final = x;
  out.trace.final_j = t.val(inner_cost(t, x, ov, z, cost, b))[0];
  return out;
}

}  // namespace noi
