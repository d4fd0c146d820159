// noi: trainable optimal interpolation for gappy space-time fields.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cctype>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "noi/io.hpp"

namespace noi {

// ---------------------------------------------------------------------------
// Model construction shared by the CLI and the benchmark harness.
// ---------------------------------------------------------------------------

struct ModelSpec {
  std::string prior_kind = "conv-res";  // matrix | linear-conv | conv-res
  int hidden = 16;                      // LSTM hidden channels
  int prior_hidden = 8;                 // conv-res hidden channels
  int prior_kernel = 3;
  int linear_kernel_t = 3, linear_kernel_s = 5;  // trainable linear-conv taps
  double prior_init = 0.3;  // weight scale of trainable priors: large enough that
                            // the inner gradient is informative from the start
  double proj_init = 0.3;   // LSTM output-projection scale
  int iters = 20;
  Schedule sched;
  // lambda policy: fixed sigma2 (exact-OI equivalence), fixed value, or trainable
  enum class Lambda { sigma2, fixed, trainable } lambda = Lambda::trainable;
  double lambda_value = 0.1;
  // multimodal block
  bool multimodal = false;
  int feature_channels = 8;
  double lambda1 = 1.0, lambda2 = 0.5, lambda3 = -1.0;  // lambda3 < 0 -> use lambda policy value
};

inline std::shared_ptr<PriorOp> build_prior(const ModelSpec& spec, int window, const SparseSym& q,
                                            std::uint64_t seed) {
  RandomStream rng(seed ^ 0x5851f42d4c957f2dULL);
  if (spec.prior_kind == "matrix") return make_matrix_prior(q);
  if (spec.prior_kind == "linear-conv")
    return LinearConvPrior::trainable(std::min(spec.linear_kernel_t, 2 * window - 1) | 1, spec.linear_kernel_s,
                                      spec.linear_kernel_s, rng, spec.prior_init);
  if (spec.prior_kind == "conv-res")
    return std::make_shared<ConvResPrior>(window, spec.prior_hidden, spec.prior_kernel, Pad::periodic, rng,
                                          spec.prior_init);
  throw ConfigError("unknown prior kind '" + spec.prior_kind + "'");
}

inline VarCost build_cost(const ModelSpec& spec, int window, const SparseSym& q, double sigma2, std::uint64_t seed) {
  VarCost cost = VarCost::with_prior(build_prior(spec, window, q, seed), sigma2);
  switch (spec.lambda) {
    case ModelSpec::Lambda::sigma2: cost.lambda = sigma2; break;
    case ModelSpec::Lambda::fixed: cost.lambda = spec.lambda_value; break;
    case ModelSpec::Lambda::trainable: cost.enable_trainable_lambda(spec.lambda_value); break;
  }
  if (spec.multimodal) {
    RandomStream rng(seed ^ 0x9e3779b97f4a7c15ULL);
    auto g = std::make_shared<FeatureNet>(FeatureNet::random(window, spec.feature_channels, rng));
    auto h = std::make_shared<FeatureNet>(FeatureNet::random(window, spec.feature_channels, rng));
    const double l3 = spec.lambda3 >= 0.0 ? spec.lambda3 : spec.lambda_value;
    // the prior-residual weight moves into lambda3; the lambda slot stays at 1
    VarCost mm = VarCost::with_prior(cost.prior, 1.0);
    mm.trainable_lambda = cost.trainable_lambda;
    mm.log_lambda = cost.log_lambda;
    mm.enable_multimodal(g, h, spec.lambda1, spec.lambda2, l3);
    return mm;
  }
  return cost;
}

inline SolverModel build_solver(const ModelSpec& spec, int window, std::uint64_t seed) {
  return SolverModel::random(window, spec.hidden, seed, 3, Pad::periodic, spec.sched, spec.iters, spec.proj_init);
}

// ---------------------------------------------------------------------------
// Benchmark harness: reproduces the interpolation-benchmark table structure
// (method x prior x training loss -> MSE / OI-score / time) plus
// per-iteration traces for cost-vs-iteration plots.
// ---------------------------------------------------------------------------

struct BenchMethod {
  std::string raw;
  enum class Kind { oi_exact, oi_gd, direct_cnn, solver } kind;
  std::string prior;  // solver only
  LossKind loss = LossKind::l1_mse_truth;
  int iters = 0;  // eval iterations (oi-gd / solver); 0 = default
};

inline BenchMethod parse_method(const std::string& s) {
  BenchMethod m;
  m.raw = s;
  std::vector<std::string> parts;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const std::size_t c = s.find(':', pos);
    parts.push_back(s.substr(pos, c == std::string::npos ? std::string::npos : c - pos));
    if (c == std::string::npos) break;
    pos = c + 1;
  }
  if (parts[0] == "oi-exact") {
    NOI_REQUIRE(parts.size() == 1, ConfigError, "oi-exact takes no options");
    m.kind = BenchMethod::Kind::oi_exact;
    return m;
  }
  if (parts[0] == "oi-gd") {
    NOI_REQUIRE(parts.size() <= 2, ConfigError, "oi-gd takes at most an iteration count");
    m.kind = BenchMethod::Kind::oi_gd;
    m.iters = parts.size() == 2 ? std::stoi(parts[1]) : 2000;
    return m;
  }
  if (parts[0] == "direct-cnn") {
    NOI_REQUIRE(parts.size() == 1, ConfigError, "direct-cnn takes no options");
    m.kind = BenchMethod::Kind::direct_cnn;
    return m;
  }
  if (parts[0] == "solver") {
    NOI_REQUIRE(parts.size() >= 3 && parts.size() <= 4, ConfigError,
                "solver method must be solver:<prior>:<loss>[:<iters>]");
    m.kind = BenchMethod::Kind::solver;
    m.prior = parts[1];
    m.loss = cfg::parse_loss(parts[2]);
    m.iters = parts.size() == 4 ? std::stoi(parts[3]) : 0;
    return m;
  }
  throw ConfigError("unknown benchmark method '" + s + "'");
}

struct BenchConfig {
  SpdeParams spde;
  std::uint64_t sim_seed = 0;
  int window = 5;
  TrackPattern track{8, 1, 1, 0};
  double sigma2 = 1e-3;
  IndexRange train_range, val_range, test_range;
  std::uint64_t obs_seed = 1;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<std::string> methods{"oi-exact", "oi-gd", "direct-cnn", "solver:conv-res:L1", "solver:matrix:L3:100"};
  TrainConfig train_base;
  ModelSpec model_base;
  int threads = 1;
};

struct BenchRow {
  std::string method;
  std::string prior;
  std::string loss;
  long seed = -1;  // -1 for training-free methods
  Metrics metrics;
  double train_seconds = 0.0;
};

struct BenchReport {
  std::vector<BenchRow> rows;

  double min_oi_score() const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& r : rows) m = std::min(m, r.metrics.oi_score);
    return m;
  }
  const BenchRow* find(const std::string& method, long seed) const {
    for (const auto& r : rows)
      if (r.method == method && r.seed == seed) return &r;
    return nullptr;
  }
};

namespace detail {

inline SolveTrace gd_trace(const OIProblem& prob, const Field3D& x0, int iters, double lambda,
                           const Field3D& truth, const Field3D& oi_ref) {
  // fixed-step gradient descent on the OI cost, recording j_phi = lambda * oi_cost
  const double step = 1.0 / oi_hessian_lambda_max(prob);
  SolveTrace tr;
  tr.has_mse_truth = tr.has_mse_oi = true;
  Field3D x = x0;
  for (int k = 0; k < iters; ++k) {
    const Tensor g = oi_grad(x.data, prob);
    double gn = 0.0;
    for (std::size_t i = 0; i < g.numel(); ++i) gn += g[i] * g[i];
    tr.rows.push_back({k, lambda * oi_cost(x, prob), lambda * std::sqrt(gn), mse(x.data, truth.data),
                       mse(x.data, oi_ref.data)});
    for (std::size_t i = 0; i < x.numel(); ++i) x.data[i] -= step * g[i];
  }
  tr.final_j = lambda * oi_cost(x, prob);
  return tr;
}

inline std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) out.push_back((std::isalnum(static_cast<unsigned char>(c)) != 0) ? c : '_');
  return out;
}

}  // namespace detail

/// Run the full benchmark. When out_dir is non-empty, writes report.csv,
/// report.json, per-method iteration traces on the first test window, and
/// timings.csv. Wall-clock numbers go only to timings.csv so that every
/// other output is byte-identical across reruns.
inline BenchReport run_benchmark(const BenchConfig& bc, const std::string& out_dir = "") {
  NOI_REQUIRE(!bc.methods.empty(), ConfigError, "benchmark: no methods given");
  const Field3D sim = simulate(bc.spde, bc.sim_seed);

  DatasetConfig dc;
  dc.spde = bc.spde;
  dc.window = bc.window;
  dc.track = bc.track;
  dc.sigma2 = bc.sigma2;
  dc.train = bc.train_range;
  dc.val = bc.val_range;
  dc.test = bc.test_range;
  dc.obs_seed = bc.obs_seed;
  dc.with_oi_refs = true;
  dc.with_modality = bc.model_base.multimodal;
  dc.threads = bc.threads;
  const Dataset ds = build_dataset(sim, dc);
  NOI_REQUIRE(!ds.test.empty(), ConfigError, "benchmark: empty test split");
  const Window& traced = ds.test[0];

  BenchReport report;
  struct TraceOut {
    std::string name;
    SolveTrace trace;
  };
  std::vector<TraceOut> traces;

  for (const std::string& mstr : bc.methods) {
    const BenchMethod method = parse_method(mstr);
    switch (method.kind) {
      case BenchMethod::Kind::oi_exact: {
        std::vector<Tensor> outs(ds.test.size());
        const auto t0 = std::chrono::steady_clock::now();
        parallel_for(ds.test.size(), bc.threads, [&](std::size_t i) {
          OIProblem prob{ds.test[i].obs, ds.q, Field3D::zeros(bc.window, ds.ny, ds.nx, sim.geom), std::nullopt};
          outs[i] = solve_precision(prob).data;
        });
        const auto t1 = std::chrono::steady_clock::now();
        Metrics m = metrics_of_outputs(outs, ds.test, ds.q, ds.sigma2);
        m.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
        report.rows.push_back({"oi-exact", "covariance", "", -1, m, 0.0});
        SolveTrace tr;
        tr.has_mse_truth = tr.has_mse_oi = true;
        OIProblem prob{traced.obs, ds.q, Field3D::zeros(bc.window, ds.ny, ds.nx, sim.geom), std::nullopt};
        tr.rows.push_back({0, bc.sigma2 * oi_cost(outs[0], prob), 0.0, mse(outs[0], traced.truth.data),
                           mse(outs[0], traced.oi_ref->data)});
        tr.final_j = tr.rows[0].j;
        traces.push_back({"oi_exact", std::move(tr)});
        break;
      }
      case BenchMethod::Kind::oi_gd: {
        std::vector<Tensor> outs(ds.test.size());
        const auto t0 = std::chrono::steady_clock::now();
        parallel_for(ds.test.size(), bc.threads, [&](std::size_t i) {
          OIProblem prob{ds.test[i].obs, ds.q, Field3D::zeros(bc.window, ds.ny, ds.nx, sim.geom), std::nullopt};
          GdOptions opt;
          opt.max_iters = method.iters;
          outs[i] = gradient_descent_oi(prob, init_state(ds.test[i].obs), opt).first.data;
        });
        const auto t1 = std::chrono::steady_clock::now();
        Metrics m = metrics_of_outputs(outs, ds.test, ds.q, ds.sigma2);
        m.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
        report.rows.push_back({"oi-gd", "covariance", "", -1, m, 0.0});
        OIProblem prob{traced.obs, ds.q, Field3D::zeros(bc.window, ds.ny, ds.nx, sim.geom), std::nullopt};
        traces.push_back({"oi_gd", detail::gd_trace(prob, init_state(traced.obs), std::min(method.iters, 500),
                                                    bc.sigma2, traced.truth, *traced.oi_ref)});
        break;
      }
      case BenchMethod::Kind::direct_cnn: {
        for (std::uint64_t seed : bc.seeds) {
          DirectNet dn = DirectNet::make(bc.window, bc.model_base.prior_hidden, seed + 101);
          TrainConfig tc = bc.train_base;
          tc.loss = LossKind::l1_mse_truth;
          tc.seed = seed;
          tc.threads = bc.threads;
          const auto t0 = std::chrono::steady_clock::now();
          train_direct(tc, ds, dn);
          const auto t1 = std::chrono::steady_clock::now();
          Metrics m = evaluate_direct(dn, ds.test, ds.q, ds.sigma2);
          report.rows.push_back({"direct-cnn", "conv-res", "L1", static_cast<long>(seed), m,
                                 std::chrono::duration<double>(t1 - t0).count()});
          if (seed == bc.seeds.front()) {
            SolveTrace tr;
            tr.has_mse_truth = tr.has_mse_oi = true;
            const Tensor out = dn.apply_once(traced.obs);
            OIProblem prob{traced.obs, ds.q, Field3D::zeros(bc.window, ds.ny, ds.nx, sim.geom), std::nullopt};
            tr.rows.push_back({0, bc.sigma2 * oi_cost(out, prob), 0.0, mse(out, traced.truth.data),
                               mse(out, traced.oi_ref->data)});
            tr.final_j = tr.rows[0].j;
            traces.push_back({"direct_cnn", std::move(tr)});
          }
        }
        break;
      }
      case BenchMethod::Kind::solver: {
        for (std::uint64_t seed : bc.seeds) {
          ModelSpec spec = bc.model_base;
          spec.prior_kind = method.prior;
          if (method.prior == "matrix") spec.lambda = ModelSpec::Lambda::sigma2;
          VarCost cost = build_cost(spec, bc.window, ds.q, ds.sigma2, seed + 7);
          SolverModel model = build_solver(spec, bc.window, seed + 13);
          TrainConfig tc = bc.train_base;
          tc.loss = method.loss;
          tc.seed = seed;
          tc.threads = bc.threads;
          const auto t0 = std::chrono::steady_clock::now();
          train(tc, ds, model, cost);
          const auto t1 = std::chrono::steady_clock::now();
          const int eval_iters = method.iters > 0 ? method.iters : spec.iters;
          Metrics m = evaluate(model, cost, ds.test, ds.q, ds.sigma2, eval_iters, bc.threads);
          report.rows.push_back({method.raw, method.prior, loss_name(method.loss), static_cast<long>(seed), m,
                                 std::chrono::duration<double>(t1 - t0).count()});
          if (seed == bc.seeds.front()) {
            auto [xhat, tr] = solve(model, cost, traced.obs, init_state(traced.obs),
                                    traced.modality ? std::optional<Field3D>(*traced.modality) : std::nullopt,
                                    SolveOptions{eval_iters, &traced.truth, &*traced.oi_ref});
            traces.push_back({detail::sanitize(method.raw), std::move(tr)});
          }
        }
        break;
      }
    }
  }

  if (!out_dir.empty()) {
    {
      std::ofstream out(out_dir + "/report.csv", std::ios::trunc);
      NOI_REQUIRE(out.good(), IoError, "cannot write benchmark report to " + out_dir);
      out << "method,prior,loss,seed,mse_truth,mse_center,oi_score\n";
      for (const auto& r : report.rows) {
        out << r.method << ',' << r.prior << ',' << r.loss << ',' << r.seed << ',' << fmt_double(r.metrics.mse_truth)
            << ',' << fmt_double(r.metrics.mse_center) << ',' << fmt_double(r.metrics.oi_score) << '\n';
      }
    }
    {
      json j;
      json rows = json::array();
      for (const auto& r : report.rows) {
        json row;
        row["method"] = r.method;
        row["prior"] = r.prior;
        row["loss"] = r.loss;
        row["seed"] = r.seed;
        row["mse_truth"] = r.metrics.mse_truth;
        row["mse_center"] = r.metrics.mse_center;
        row["oi_score"] = r.metrics.oi_score;
        rows.push_back(std::move(row));
      }
      j["rows"] = std::move(rows);
      write_json_file(out_dir + "/report.json", j);
    }
    {
      std::ofstream out(out_dir + "/timings.csv", std::ios::trunc);
      out << "method,seed,train_seconds,eval_seconds\n";
      for (const auto& r : report.rows) {
        out << r.method << ',' << r.seed << ',' << fmt_double(r.train_seconds) << ','
            << fmt_double(r.metrics.wall_seconds) << '\n';
      }
    }
    for (const auto& t : traces) write_trace_csv(out_dir + "/trace_" + t.name + ".csv", t.trace);
  }
  return report;
}

}  // namespace noi
