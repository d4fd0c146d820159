// noi: trainable optimal interpolation for gappy space-time fields.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include "noi/solver.hpp"

namespace noi {

// ---------------------------------------------------------------------------
// Datasets: sliding windows cut from one long simulation, with per-window
// observations whose track phase advances with the global time index.
// ---------------------------------------------------------------------------

struct Window {
  Field3D truth;
  ObsSet obs;
  std::optional<Field3D> oi_ref;    // analytical OI reconstruction (for the L2 loss / traces)
  std::optional<Field3D> modality;  // gap-free secondary observation z
  int center = 0;                   // global time index of the window center
};

struct IndexRange {
  int lo = 0, hi = 0;  // half-open [lo, hi) of window-center indices
  int size() const { return hi - lo; }
};

struct DatasetConfig {
  SpdeParams spde;
  int window = 5;  // DAW length, odd
  TrackPattern track{8, 1, 1, 0};
  double sigma2 = 1e-3;
  IndexRange train, val, test;
  bool with_oi_refs = false;
  bool with_modality = false;
  std::uint64_t obs_seed = 1;
  std::uint64_t modality_seed = 2;
  double modality_noise = 0.1;
  int threads = 1;

  void validate() const {
    NOI_REQUIRE(window >= 1 && window % 2 == 1, ConfigError, "dataset: window length must be odd and >= 1");
    const int h = window / 2;
    auto check_range = [&](const IndexRange& r, const char* name) {
      NOI_REQUIRE(r.lo <= r.hi, ConfigError, std::string("dataset: empty-inverted range ") + name);
      NOI_REQUIRE(r.lo - h >= 0 && r.hi - 1 + h < spde.nt, ConfigError,
                  std::string("dataset: range ") + name + " does not fit the simulation");
    };
    check_range(train, "train");
    check_range(val, "val");
    check_range(test, "test");
    auto overlaps = [](const IndexRange& a, const IndexRange& b) { return a.lo < b.hi && b.lo < a.hi; };
    NOI_REQUIRE(!overlaps(train, val) && !overlaps(train, test) && !overlaps(val, test), ConfigError,
                "dataset: train/val/test ranges must be disjoint");
  }
};

struct Dataset {
  std::vector<Window> train, val, test;
  SparseSym q;  // window precision of the generating process
  double sigma2 = 1e-3;
  int window = 5, ny = 0, nx = 0;
};

namespace detail {

/// Synthetic gap-free secondary modality: z = tanh(truth) + smoothed noise.
/// Informative about the state but not trivially invertible.
inline Field3D make_modality(const Field3D& truth, std::uint64_t seed, double noise_amp) {
  RandomStream rng(seed);
  Tensor eta = Tensor::randn(truth.data.shape(), rng, noise_amp);
  Tensor smooth({3, 3, 3}, 1.0 / 27.0);
  eta = kern::circ_conv3d(eta, smooth);
  Tensor z(truth.data.shape());
  for (std::size_t i = 0; i < z.numel(); ++i) z[i] = std::tanh(truth.data[i]) + eta[i];
  return Field3D(std::move(z), truth.geom);
}

}  // namespace detail

/// Cut windows out of a simulation per the config. OI references (when
/// requested) are computed with the precision-form solve, in parallel.
inline Dataset build_dataset(const Field3D& sim, const DatasetConfig& cfg) {
  cfg.validate();
  NOI_REQUIRE(sim.nt() == cfg.spde.nt && sim.ny() == cfg.spde.ny && sim.nx() == cfg.spde.nx, DimensionError,
              "build_dataset: simulation does not match the SPDE grid");
  Dataset ds;
  ds.window = cfg.window;
  ds.ny = sim.ny();
  ds.nx = sim.nx();
  ds.sigma2 = cfg.sigma2;
  ds.q = precision_matrix(cfg.spde, cfg.window);

  std::optional<Field3D> z_full;
  if (cfg.with_modality) z_full = detail::make_modality(sim, cfg.modality_seed, cfg.modality_noise);

  const int h = cfg.window / 2;
  auto cut = [&](const IndexRange& r, std::vector<Window>& out) {
    for (int c = r.lo; c < r.hi; ++c) {
      Window w;
      w.center = c;
      w.truth = sim.window(c - h, cfg.window);
      TrackPattern tp = cfg.track;
      tp.phase += tp.drift * (c - h);  // continue the global track phase
      const Mask3D m = track_mask(cfg.window, sim.ny(), sim.nx(), tp, sim.geom);
      w.obs = observe(w.truth, m, cfg.sigma2, cfg.obs_seed + 7919ull * static_cast<std::uint64_t>(c));
      if (z_full) w.modality = z_full->window(c - h, cfg.window);
      out.push_back(std::move(w));
    }
  };
  cut(cfg.train, ds.train);
  cut(cfg.val, ds.val);
  cut(cfg.test, ds.test);

  if (cfg.with_oi_refs) {
    auto add_refs = [&](std::vector<Window>& ws) {
      parallel_for(ws.size(), cfg.threads, [&](std::size_t i) {
        OIProblem prob{ws[i].obs, ds.q, Field3D::zeros(cfg.window, sim.ny(), sim.nx(), sim.geom), std::nullopt};
        ws[i].oi_ref = solve_precision(prob);
      });
    };
    add_refs(ds.train);
    add_refs(ds.val);
    add_refs(ds.test);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Training losses (Lemma-3 family).
// ---------------------------------------------------------------------------

enum class LossKind { l1_mse_truth, l2_mse_oi, l3_oi_cost };

inline const char* loss_name(LossKind k) {
  switch (k) {
    case LossKind::l1_mse_truth: return "L1";
    case LossKind::l2_mse_oi: return "L2";
    case LossKind::l3_oi_cost: return "L3";
  }
  return "?";
}

inline Var loss_l1(Tape& t, Var xhat, const Tensor& truth) { return t.sqnorm(t.sub(xhat, t.constant(Tensor(truth)))); }

inline Var loss_l2(Tape& t, Var xhat, const Tensor& oi_ref) { return t.sqnorm(t.sub(xhat, t.constant(Tensor(oi_ref)))); }

/// L3 = (1/sigma2) ||y - H x||^2 + x' Q x  (the OI variational cost, mu = 0).
inline Var loss_l3(Tape& t, Var xhat, const ObsVars& ov, const SparseOp& q, double sigma2) {
  Var data = t.scale(masked_data_term(t, xhat, ov), 1.0 / sigma2);
  return t.add(data, t.dot(xhat, q.apply(t, xhat)));
}

/// Scalar (off-tape) versions used for validation / reporting.
inline double loss_value(LossKind kind, const Tensor& xhat, const Window& w, const SparseSym& q, double sigma2) {
  switch (kind) {
    case LossKind::l1_mse_truth: {
      double s = 0.0;
      for (std::size_t i = 0; i < xhat.numel(); ++i) {
        const double d = xhat[i] - w.truth.data[i];
        s += d * d;
      }
      return s;
    }
    case LossKind::l2_mse_oi: {
      NOI_REQUIRE(w.oi_ref.has_value(), ConfigError, "L2 loss requires OI references in the dataset");
      double s = 0.0;
      for (std::size_t i = 0; i < xhat.numel(); ++i) {
        const double d = xhat[i] - w.oi_ref->data[i];
        s += d * d;
      }
      return s;
    }
    case LossKind::l3_oi_cost: {
      OIProblem prob{w.obs, q, Field3D(Tensor(xhat.shape()), w.truth.geom), std::nullopt};
      prob.obs.sigma2 = sigma2;
      return oi_cost(xhat, prob);
    }
  }
  throw ContractError("unknown loss kind");
}

// ---------------------------------------------------------------------------
// Bi-level training loop.
// ---------------------------------------------------------------------------

struct TrainConfig {
  LossKind loss = LossKind::l1_mse_truth;
  int epochs = 20;
  double lr = 2e-3;
  int unroll = 8;      // solver iterations per training step
  int batch = 4;       // windows per optimizer update (gradients are aggregated)
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const {
    NOI_REQUIRE(epochs >= 0, ConfigError, "train: epochs must be >= 0");
    NOI_REQUIRE(unroll >= 1, ConfigError, "train: unroll iterations must be >= 1");
    NOI_REQUIRE(batch >= 1, ConfigError, "train: batch size must be >= 1");
    NOI_REQUIRE(lr > 0.0, ConfigError, "train: learning rate must be positive");
  }
};

struct EpochRow {
  int epoch;
  double train_loss;
  double val_loss;
};

struct TrainResult {
  std::vector<EpochRow> history;
  int best_epoch = -1;
  double best_val_loss = 0.0;
};

namespace detail {

struct WindowGrads {
  double loss = 0.0;
  std::vector<Tensor> grads;
  Tensor x_final;
};

inline WindowGrads train_window_pass(const Window& w, const ParamRefs& refs, SolverModel& model, VarCost& cost,
                                     const TrainConfig& cfg, const SparseOp& q_op, double sigma2,
                                     const Tensor& x0) {
  Tape t;
  Binding b(t, refs, true);
  ObsVars ov = ObsVars::bind(t, w.obs);
  std::optional<Var> z;
  if (cost.multimodal) {
    NOI_REQUIRE(w.modality.has_value(), ConfigError, "multimodal training requires the modality in the dataset");
    z = t.constant(Tensor(w.modality->data));
  }
  Var x0v = t.input(Tensor(x0), true);
  const UnrolledSolve un = solve_unrolled(t, model, cost, b, ov, z, x0v, cfg.unroll);
  Var loss;
  switch (cfg.loss) {
    case LossKind::l1_mse_truth: loss = loss_l1(t, un.x_final, w.truth.data); break;
    case LossKind::l2_mse_oi:
      NOI_REQUIRE(w.oi_ref.has_value(), ConfigError, "L2 training requires OI references in the dataset");
      loss = loss_l2(t, un.x_final, w.oi_ref->data);
      break;
    case LossKind::l3_oi_cost: loss = loss_l3(t, un.x_final, ov, q_op, sigma2); break;
  }
  WindowGrads out;
  out.loss = t.val(loss)[0];
  const auto gvars = t.grad(loss, b.vars());
  out.grads.reserve(gvars.size());
  for (Var g : gvars) out.grads.push_back(t.val(g));
  out.x_final = t.val(un.x_final);
  return out;
}

}  // namespace detail

/// Bi-level training. The initial condition alternates per epoch between the
/// zero-filling initialization (even epochs) and the gradient-detached output
/// of the previous pass over that window (odd epochs). Gradients are
/// aggregated over each batch before the Adam update; parameters of the best
/// validation epoch are restored at the end.
inline TrainResult train(const TrainConfig& cfg, const Dataset& ds, SolverModel& model, VarCost& cost) {
  cfg.validate();
  NOI_REQUIRE(!ds.train.empty(), ConfigError, "train: empty training split");
  if (cfg.loss == LossKind::l2_mse_oi) {
    for (const auto& w : ds.train) NOI_REQUIRE(w.oi_ref.has_value(), ConfigError, "L2 training requires OI references");
  }

  ParamRefs refs;
  model.collect_params(refs);
  cost.collect_params(refs);
  AdamState adam = AdamState::init(refs.tensors, cfg.lr);
  const SparseOp q_op(ds.q.csr());

  std::vector<Tensor> detached(ds.train.size());  // last solver output per window
  std::vector<char> have_detached(ds.train.size(), 0);

  TrainResult result;
  std::vector<Tensor> best_params;
  auto snapshot = [&]() {
    best_params.clear();
    for (Tensor* p : refs.tensors) best_params.push_back(*p);
  };

  auto validation_loss = [&]() {
    if (ds.val.empty()) return 0.0;
    std::vector<double> losses(ds.val.size(), 0.0);
    parallel_for(ds.val.size(), cfg.threads, [&](std::size_t i) {
      const Window& w = ds.val[i];
      auto [xhat, tr] = solve(model, cost, w.obs, init_state(w.obs),
                              w.modality ? std::optional<Field3D>(*w.modality) : std::nullopt,
                              SolveOptions{cfg.unroll, nullptr, nullptr});
      losses[i] = loss_value(cfg.loss, xhat.data, w, ds.q, ds.sigma2);
    });
    double s = 0.0;
    for (double v : losses) s += v;
    return s / static_cast<double>(losses.size());
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const bool use_detached = (epoch % 2 == 1);
    double epoch_loss = 0.0;
    for (std::size_t batch_lo = 0; batch_lo < ds.train.size(); batch_lo += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t batch_hi = std::min(ds.train.size(), batch_lo + static_cast<std::size_t>(cfg.batch));
      std::vector<detail::WindowGrads> outs(batch_hi - batch_lo);
      parallel_for(batch_hi - batch_lo, cfg.threads, [&](std::size_t bi) {
        const std::size_t i = batch_lo + bi;
        const Window& w = ds.train[i];
        const Tensor x0 = (use_detached && have_detached[i]) ? detached[i] : init_state(w.obs).data;
        try {
          outs[bi] = detail::train_window_pass(w, refs, model, cost, cfg, q_op, ds.sigma2, x0);
        } catch (const NumericError& e) {
          throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ", window center " +
                             std::to_string(w.center) + ")");
        }
      });
      // deterministic aggregation in window order
      std::vector<Tensor> grad_sum;
      grad_sum.reserve(refs.size());
      for (std::size_t p = 0; p < refs.size(); ++p) grad_sum.push_back(Tensor::zeros_like(*refs.tensors[p]));
      for (std::size_t bi = 0; bi < outs.size(); ++bi) {
        epoch_loss += outs[bi].loss;
        for (std::size_t p = 0; p < refs.size(); ++p) grad_sum[p] = kern::add(grad_sum[p], outs[bi].grads[p]);
        const std::size_t i = batch_lo + bi;
        detached[i] = std::move(outs[bi].x_final);
        have_detached[i] = 1;
      }
      adam_update(adam, refs.tensors, grad_sum);
    }
    epoch_loss /= static_cast<double>(ds.train.size());
    const double val = validation_loss();
    result.history.push_back({epoch, epoch_loss, val});
    if (result.best_epoch < 0 || val < result.best_val_loss) {
      result.best_epoch = epoch;
      result.best_val_loss = val;
      snapshot();
    }
  }
  if (!best_params.empty()) {
    for (std::size_t p = 0; p < refs.size(); ++p) *refs.tensors[p] = best_params[p];
  }
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation metrics.
// ---------------------------------------------------------------------------

struct Metrics {
  double mse_truth = 0.0;   // over the whole window
  double mse_center = 0.0;  // center slice of the DAW only
  double oi_score = 0.0;    // OI variational cost under the true Q (mu = 0)
  double wall_seconds = 0.0;
  int windows = 0;
};

inline Metrics metrics_of_outputs(const std::vector<Tensor>& xhats, const std::vector<Window>& split,
                                  const SparseSym& q, double sigma2) {
  NOI_REQUIRE(xhats.size() == split.size(), DimensionError, "metrics: output/window count mismatch");
  Metrics m;
  m.windows = static_cast<int>(split.size());
  const int h = split.empty() ? 0 : split[0].truth.nt() / 2;
  for (std::size_t i = 0; i < split.size(); ++i) {
    const Window& w = split[i];
    m.mse_truth += mse(xhats[i], w.truth.data);
    const Field3D xf(Tensor(xhats[i]), w.truth.geom);
    m.mse_center += mse(xf.time_slice(h).data, w.truth.time_slice(h).data);
    OIProblem prob{w.obs, q, Field3D(Tensor(xhats[i].shape()), w.truth.geom), std::nullopt};
    prob.obs.sigma2 = sigma2;
    m.oi_score += oi_cost(xhats[i], prob);
  }
  if (!split.empty()) {
    m.mse_truth /= static_cast<double>(split.size());
    m.mse_center /= static_cast<double>(split.size());
    m.oi_score /= static_cast<double>(split.size());
  }
  return m;
}

/// Run the solver on every window of a split and compute the metric set.
/// oi_score always uses the supplied (true) precision, whatever the prior.
inline Metrics evaluate(SolverModel& model, VarCost& cost, const std::vector<Window>& split, const SparseSym& q,
                        double sigma2, int iters, int threads = 1) {
  std::vector<Tensor> xhats(split.size());
  const auto t0 = std::chrono::steady_clock::now();
  parallel_for(split.size(), threads, [&](std::size_t i) {
    auto [xhat, tr] = solve(model, cost, split[i].obs, init_state(split[i].obs),
                            split[i].modality ? std::optional<Field3D>(*split[i].modality) : std::nullopt,
                            SolveOptions{iters, nullptr, nullptr});
    xhats[i] = std::move(xhat.data);
  });
  const auto t1 = std::chrono::steady_clock::now();
  Metrics m = metrics_of_outputs(xhats, split, q, sigma2);
  m.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
  return m;
}

// ---------------------------------------------------------------------------
// One-shot direct inversion baseline: the conv-residual network applied once
// to the zero-filled initialization, trained on the L1 loss.
// ---------------------------------------------------------------------------

struct DirectNet {
  std::shared_ptr<ConvResPrior> net;

  static DirectNet make(int state_ch, int hidden, std::uint64_t seed, Pad pad = Pad::periodic) {
    RandomStream rng(seed);
    return DirectNet{std::make_shared<ConvResPrior>(state_ch, hidden, 3, pad, rng)};
  }

  Tensor apply_once(const ObsSet& obs) const {
    Tape t;
    ParamRefs refs;
    net->collect_params(refs, "net");
    Binding b(t, refs, false);
    Var x0 = t.constant(Tensor(init_state(obs).data));
    return t.val(net->apply(t, b, x0));
  }
};

inline TrainResult train_direct(const TrainConfig& cfg, const Dataset& ds, DirectNet& dn) {
  cfg.validate();
  NOI_REQUIRE(!ds.train.empty(), ConfigError, "train_direct: empty training split");
  ParamRefs refs;
  dn.net->collect_params(refs, "net");
  AdamState adam = AdamState::init(refs.tensors, cfg.lr);

  TrainResult result;
  std::vector<Tensor> best_params;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (std::size_t batch_lo = 0; batch_lo < ds.train.size(); batch_lo += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t batch_hi = std::min(ds.train.size(), batch_lo + static_cast<std::size_t>(cfg.batch));
      std::vector<detail::WindowGrads> outs(batch_hi - batch_lo);
      parallel_for(batch_hi - batch_lo, cfg.threads, [&](std::size_t bi) {
        const Window& w = ds.train[batch_lo + bi];
        Tape t;
        Binding b(t, refs, true);
        Var x0 = t.constant(Tensor(init_state(w.obs).data));
        Var xhat = dn.net->apply(t, b, x0);
        Var loss = loss_l1(t, xhat, w.truth.data);
        detail::WindowGrads wg;
        wg.loss = t.val(loss)[0];
        for (Var g : t.grad(loss, b.vars())) wg.grads.push_back(t.val(g));
        outs[bi] = std::move(wg);
      });
      std::vector<Tensor> grad_sum;
      for (std::size_t p = 0; p < refs.size(); ++p) grad_sum.push_back(Tensor::zeros_like(*refs.tensors[p]));
      for (auto& o : outs) {
        epoch_loss += o.loss;
        for (std::size_t p = 0; p < refs.size(); ++p) grad_sum[p] = kern::add(grad_sum[p], o.grads[p]);
      }
      adam_update(adam, refs.tensors, grad_sum);
    }
    epoch_loss /= static_cast<double>(ds.train.size());
    double val = 0.0;
    if (!ds.val.empty()) {
      for (const auto& w : ds.val) {
        const Tensor xhat = dn.apply_once(w.obs);
        val += loss_value(LossKind::l1_mse_truth, xhat, w, ds.q, ds.sigma2);
      }
      val /= static_cast<double>(ds.val.size());
    }
    result.history.push_back({epoch, epoch_loss, val});
    if (result.best_epoch < 0 || val < result.best_val_loss) {
      result.best_epoch = epoch;
      result.best_val_loss = val;
      best_params.clear();
      for (Tensor* p : refs.tensors) best_params.push_back(*p);
    }
  }
  if (!best_params.empty()) {
    for (std::size_t p = 0; p < refs.size(); ++p) *refs.tensors[p] = best_params[p];
  }
  return result;
}

inline Metrics evaluate_direct(const DirectNet& dn, const std::vector<Window>& split, const SparseSym& q,
                               double sigma2) {
  std::vector<Tensor> xhats(split.size());
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < split.size(); ++i) xhats[i] = dn.apply_once(split[i].obs);
  const auto t1 = std::chrono::steady_clock::now();
  Metrics m = metrics_of_outputs(xhats, split, q, sigma2);
  m.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
  return m;
}

}  // namespace noi
