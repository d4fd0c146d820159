#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "noi/training.hpp"
#include "test_util.hpp"

using namespace noi;

namespace {

Dataset tiny_dataset(int nx, int ny, int nt, int window, std::uint64_t seed, bool with_oi = false,
                     bool with_modality = false, int spacing = 3) {
  SpdeParams p = SpdeParams::gp_iso(nx, ny, nt, 2);
  p.burn_in = 10;
  const Field3D sim = simulate(p, seed);
  DatasetConfig dc;
  dc.spde = p;
  dc.window = window;
  dc.track = TrackPattern{spacing, 1, 1, 0};
  dc.sigma2 = 1e-3;
  const int h = window / 2;
  const int usable = nt - 2 * h;
  dc.train = {h, h + usable / 2};
  dc.val = {h + usable / 2, h + 3 * usable / 4};
  dc.test = {h + 3 * usable / 4, nt - h};
  dc.with_oi_refs = with_oi;
  dc.with_modality = with_modality;
  return build_dataset(sim, dc);
}

}  // namespace

TEST_CASE("losses: trivial identities and the sum-of-squares oracle") {
  RandomStream rng(120);
  const Tensor a = Tensor::randn({3, 4, 4}, rng);
  const Tensor b = Tensor::randn({3, 4, 4}, rng);

  Tape t;
  SUBCASE("L1 of the truth itself is zero") {
    CHECK(t.val(loss_l1(t, t.constant(Tensor(a)), a))[0] == 0.0);
  }
  SUBCASE("L2 of the OI reference itself is zero") {
    CHECK(t.val(loss_l2(t, t.constant(Tensor(a)), a))[0] == 0.0);
  }
  SUBCASE("independently coded sum-of-squares oracle") {
    double want = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
      const double d = a[i] - b[i];
      want += d * d;
    }
    CHECK(t.val(loss_l1(t, t.constant(Tensor(a)), b))[0] == doctest::Approx(want).epsilon(1e-12));
    CHECK(t.val(loss_l2(t, t.constant(Tensor(a)), b))[0] == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("L3 equals the OI variational cost and is minimal at the OI solution") {
  Dataset ds = tiny_dataset(6, 6, 16, 3, 121, true);
  const Window& w = ds.train[0];
  const SparseOp q_op(ds.q.csr());

  Tape t;
  ObsVars ov = ObsVars::bind(t, w.obs);
  RandomStream rng(122);
  const Tensor x = Tensor::randn({3, 6, 6}, rng);
  const double via_tape = t.val(loss_l3(t, t.constant(Tensor(x)), ov, q_op, ds.sigma2))[0];
  OIProblem prob{w.obs, ds.q, Field3D::zeros(3, 6, 6), std::nullopt};
  CHECK(via_tape == doctest::Approx(oi_cost(x, prob)).epsilon(1e-12));

  // optimality of the OI reference under L3
  const double at_oi = oi_cost(w.oi_ref->data, prob);
  for (int rep = 0; rep < 20; ++rep) {
    Tensor xp = w.oi_ref->data;
    for (std::size_t i = 0; i < xp.numel(); ++i) xp[i] += 1e-3 * rng.normal();
    CHECK(oi_cost(xp, prob) >= at_oi);
  }
}

TEST_CASE("dataset windows follow the global track phase and stay disjoint") {
  SpdeParams p = SpdeParams::gp_iso(8, 8, 20, 2);
  p.burn_in = 5;
  const Field3D sim = simulate(p, 9);
  DatasetConfig dc;
  dc.spde = p;
  dc.window = 3;
  dc.track = TrackPattern{4, 1, 1, 0};
  dc.train = {1, 8};
  dc.val = {8, 13};
  dc.test = {13, 19};
  const Dataset ds = build_dataset(sim, dc);
  CHECK(ds.train.size() == 7);
  CHECK(ds.val.size() == 5);
  CHECK(ds.test.size() == 6);

  // window truth matches the corresponding simulation slice
  const Window& w = ds.train[2];  // center 3
  for (int tl = 0; tl < 3; ++tl)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) CHECK(w.truth.at(tl, y, x) == sim.at(w.center - 1 + tl, y, x));

  // the mask continues the global pattern: local slice tl corresponds to global t
  const Mask3D global = track_mask(20, 8, 8, dc.track);
  for (int tl = 0; tl < 3; ++tl)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) CHECK(w.obs.mask.at(tl, y, x) == global.at(w.center - 1 + tl, y, x));

  // overlapping ranges are rejected
  DatasetConfig bad = dc;
  bad.val = {7, 12};
  CHECK_THROWS_AS(build_dataset(sim, bad), ConfigError);
}

TEST_CASE("zero epochs leave every parameter bit-identical") {
  Dataset ds = tiny_dataset(6, 6, 14, 3, 123);
  RandomStream rng(124);
  auto prior = std::make_shared<ConvResPrior>(3, 4, 3, Pad::periodic, rng);
  VarCost cost = VarCost::with_prior(prior, 1.0);
  cost.enable_trainable_lambda(0.1);
  SolverModel model = SolverModel::random(3, 6, 125);

  ParamRefs refs;
  model.collect_params(refs);
  cost.collect_params(refs);
  std::vector<Tensor> before;
  for (Tensor* p : refs.tensors) before.push_back(*p);

  TrainConfig tc;
  tc.epochs = 0;
  train(tc, ds, model, cost);
  for (std::size_t i = 0; i < refs.size(); ++i) {
    CHECK(std::memcmp(before[i].data(), refs.tensors[i]->data(), before[i].numel() * sizeof(double)) == 0);
  }
}

TEST_CASE("detached initial conditions block gradients into the producing solve") {
  Dataset ds = tiny_dataset(6, 6, 14, 3, 126);
  const Window& w = ds.train[0];
  RandomStream rng(127);

  // model A produces x*, model B consumes it; A's parameters must see no gradient
  SolverModel model_a = SolverModel::random(3, 4, 128);
  SolverModel model_b = SolverModel::random(3, 4, 129);
  VarCost cost_a = VarCost::with_prior(std::make_shared<ConvResPrior>(3, 4, 3, Pad::periodic, rng), 0.5);
  VarCost cost_b = VarCost::with_prior(std::make_shared<ConvResPrior>(3, 4, 3, Pad::periodic, rng), 0.5);

  Tape t;
  ParamRefs refs_a, refs_b;
  model_a.collect_params(refs_a);
  cost_a.collect_params(refs_a);
  model_b.collect_params(refs_b);
  cost_b.collect_params(refs_b);
  Binding ba(t, refs_a, true);
  Binding bb(t, refs_b, true);
  ObsVars ov = ObsVars::bind(t, w.obs);

  Var x0 = t.input(Tensor(init_state(w.obs).data), true);
  const UnrolledSolve first = solve_unrolled(t, model_a, cost_a, ba, ov, std::nullopt, x0, 3);
  Var x_star = t.detach(first.x_final);
  const UnrolledSolve second = solve_unrolled(t, model_b, cost_b, bb, ov, std::nullopt, x_star, 3);
  Var loss = loss_l1(t, second.x_final, w.truth.data);

  std::vector<Var> wrt = ba.vars();
  for (Var v : bb.vars()) wrt.push_back(v);
  const auto grads = t.grad(loss, wrt);
  double a_norm = 0.0, b_norm = 0.0;
  for (std::size_t i = 0; i < ba.vars().size(); ++i) a_norm += t.val(grads[i]).max_abs();
  for (std::size_t i = ba.vars().size(); i < wrt.size(); ++i) b_norm += t.val(grads[i]).max_abs();
  CHECK(a_norm == 0.0);
  CHECK(b_norm > 0.0);
}

TEST_CASE("bi-level gradient matches finite differences through the unroll") {
  Dataset ds = tiny_dataset(6, 6, 14, 3, 130);
  const Window& w = ds.train[1];
  RandomStream rng(131);
  auto prior = std::make_shared<ConvResPrior>(3, 3, 3, Pad::periodic, rng);
  VarCost cost = VarCost::with_prior(prior, 0.3);
  SolverModel model = SolverModel::random(3, 4, 132);

  ParamRefs refs;
  model.collect_params(refs);
  cost.collect_params(refs);

  auto loss_of = [&]() {
    Tape t;
    Binding b(t, refs, true);
    ObsVars ov = ObsVars::bind(t, w.obs);
    Var x0 = t.input(Tensor(init_state(w.obs).data), true);
    const UnrolledSolve un = solve_unrolled(t, model, cost, b, ov, std::nullopt, x0, 4);
    Var loss = loss_l1(t, un.x_final, w.truth.data);
    return std::make_pair(t.val(loss)[0], std::make_pair(&t, loss));
  };

  // autodiff gradient for two representative parameters: a prior conv weight
  // and an LSTM kernel
  Tape t;
  Binding b(t, refs, true);
  ObsVars ov = ObsVars::bind(t, w.obs);
  Var x0 = t.input(Tensor(init_state(w.obs).data), true);
  const UnrolledSolve un = solve_unrolled(t, model, cost, b, ov, std::nullopt, x0, 4);
  Var loss = loss_l1(t, un.x_final, w.truth.data);

  for (const std::string& pname : {std::string("prior.w1"), std::string("solver.cell.w_in")}) {
    std::size_t pi = refs.size();
    for (std::size_t i = 0; i < refs.size(); ++i)
      if (refs.names[i] == pname) pi = i;
    REQUIRE(pi < refs.size());
    Tensor* param = refs.tensors[pi];
    const Tensor g = t.val(t.grad(loss, b.of(*param)));

    // FD along 5 random directions (full FD over every weight is wasteful)
    RandomStream drng(133);
    const Tensor p0 = *param;
    for (int rep = 0; rep < 5; ++rep) {
      Tensor dir = Tensor::randn(p0.shape(), drng);
      const double h = 1e-5;
      Tensor pp = p0;
      for (std::size_t i = 0; i < pp.numel(); ++i) pp[i] = p0[i] + h * dir[i];
      *param = pp;
      const double fp = loss_of().first;
      for (std::size_t i = 0; i < pp.numel(); ++i) pp[i] = p0[i] - h * dir[i];
      *param = pp;
      const double fm = loss_of().first;
      *param = p0;
      const double fd = (fp - fm) / (2 * h);
      double ad = 0.0;
      for (std::size_t i = 0; i < g.numel(); ++i) ad += g[i] * dir[i];
      CHECK(std::fabs(ad - fd) <= 1e-4 * std::max({1.0, std::fabs(fd), std::fabs(ad)}));
    }
  }
}

TEST_CASE("metrics on a hand-computed two-window toy split") {
  // windows of ones and twos, predictor of zeros: mse = mean of squares
  Dataset ds = tiny_dataset(4, 4, 12, 3, 134);
  std::vector<Window> split(ds.test.begin(), ds.test.begin() + 2);
  split[0].truth.data = Tensor({3, 4, 4}, 1.0);
  split[1].truth.data = Tensor({3, 4, 4}, 2.0);
  std::vector<Tensor> zeros{Tensor({3, 4, 4}), Tensor({3, 4, 4})};
  const Metrics m = metrics_of_outputs(zeros, split, ds.q, ds.sigma2);
  CHECK(m.mse_truth == doctest::Approx((1.0 + 4.0) / 2.0));
  CHECK(m.mse_center == doctest::Approx((1.0 + 4.0) / 2.0));
  // oi_score of the zero field is the pure data term
  double want = 0.0;
  for (int k = 0; k < 2; ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < split[static_cast<std::size_t>(k)].obs.values.numel(); ++i)
      if (split[static_cast<std::size_t>(k)].obs.mask.on[i])
        s += split[static_cast<std::size_t>(k)].obs.values[i] * split[static_cast<std::size_t>(k)].obs.values[i];
    want += s / ds.sigma2 / 2.0;
  }
  CHECK(m.oi_score == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("oi outputs attain the minimal oi_score in evaluation") {
  Dataset ds = tiny_dataset(6, 6, 16, 3, 135, true);
  std::vector<Tensor> oi_outs;
  for (const auto& w : ds.test) oi_outs.push_back(w.oi_ref->data);
  const Metrics m_oi = metrics_of_outputs(oi_outs, ds.test, ds.q, ds.sigma2);
  double direct = 0.0;
  for (const auto& w : ds.test) {
    OIProblem prob{w.obs, ds.q, Field3D::zeros(3, 6, 6), std::nullopt};
    direct += oi_cost(w.oi_ref->data, prob) / static_cast<double>(ds.test.size());
  }
  CHECK(m_oi.oi_score == doctest::Approx(direct).epsilon(1e-12));

  // any other prediction scores worse
  std::vector<Tensor> zeros(ds.test.size(), Tensor({3, 6, 6}));
  const Metrics m_zero = metrics_of_outputs(zeros, ds.test, ds.q, ds.sigma2);
  CHECK(m_zero.oi_score > m_oi.oi_score);
}

TEST_CASE("short training run: finite improving loss, deterministic across thread counts") {
  Dataset ds = tiny_dataset(8, 8, 20, 3, 136);
  auto run = [&](int threads) {
    RandomStream rng(137);
    VarCost cost = VarCost::with_prior(std::make_shared<ConvResPrior>(3, 4, 3, Pad::periodic, rng), 0.1);
    cost.enable_trainable_lambda(0.1);
    SolverModel model = SolverModel::random(3, 6, 138, 3, Pad::periodic, Schedule{}, 4);
    TrainConfig tc;
    tc.epochs = 6;
    tc.unroll = 4;
    tc.batch = 3;
    tc.threads = threads;
    return train(tc, ds, model, cost);
  };
  const TrainResult res = run(2);
  REQUIRE(res.history.size() == 6);
  for (const auto& r : res.history) {
    CHECK(std::isfinite(r.train_loss));
    CHECK(std::isfinite(r.val_loss));
  }
  CHECK(res.history.back().train_loss < res.history.front().train_loss);
  CHECK(res.best_epoch >= 0);

  // gradient aggregation is ordered, so the thread count cannot change results
  const TrainResult res1 = run(1);
  REQUIRE(res1.history.size() == res.history.size());
  for (std::size_t i = 0; i < res.history.size(); ++i) {
    CHECK(res.history[i].train_loss == res1.history[i].train_loss);
    CHECK(res.history[i].val_loss == res1.history[i].val_loss);
  }
}

TEST_CASE("direct one-shot baseline trains and evaluates") {
  Dataset ds = tiny_dataset(8, 8, 20, 3, 139);
  DirectNet dn = DirectNet::make(3, 4, 140);
  TrainConfig tc;
  tc.epochs = 4;
  tc.batch = 4;
  const TrainResult res = train_direct(tc, ds, dn);
  REQUIRE(res.history.size() == 4);
  const Metrics m = evaluate_direct(dn, ds.test, ds.q, ds.sigma2);
  CHECK(std::isfinite(m.mse_truth));
  CHECK(m.windows == static_cast<int>(ds.test.size()));
}

TEST_CASE("multimodal training path runs and uses the modality") {
  Dataset ds = tiny_dataset(6, 6, 16, 3, 141, false, true);
  REQUIRE(ds.train[0].modality.has_value());
  RandomStream rng(142);
  auto prior = std::make_shared<ConvResPrior>(3, 4, 3, Pad::periodic, rng);
  VarCost cost = VarCost::with_prior(prior, 1.0);
  auto g = std::make_shared<FeatureNet>(FeatureNet::random(3, 4, rng));
  auto h = std::make_shared<FeatureNet>(FeatureNet::random(3, 4, rng));
  cost.enable_multimodal(g, h, 1.0, 0.5, 0.1);
  SolverModel model = SolverModel::random(3, 4, 143, 3, Pad::periodic, Schedule{}, 4);
  TrainConfig tc;
  tc.epochs = 2;
  tc.unroll = 3;
  const TrainResult res = train(tc, ds, model, cost);
  CHECK(res.history.size() == 2);
  const Metrics m = evaluate(model, cost, ds.test, ds.q, ds.sigma2, 4);
  CHECK(std::isfinite(m.mse_truth));
}
