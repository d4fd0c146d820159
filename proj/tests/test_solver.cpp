#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "noi/solver.hpp"
#include "test_util.hpp"

using namespace noi;

namespace {

// Well-conditioned instance for convergence demonstrations: kappa and tau are
// chosen so that j_phi with lambda = sigma2 has a Hessian the default
// schedule handles (stable at a(0) = nu, weak modes still contract).
struct Lemma2Instance {
  SpdeParams params;
  Field3D truth;
  ObsSet obs;
  SparseSym q;
  OIProblem prob;
  Field3D oi;
  VarCost cost;
};

Lemma2Instance make_lemma2_instance(std::uint64_t seed) {
  Lemma2Instance L;
  L.params = SpdeParams::gp_iso(8, 8, 3, 2);
  L.params.kappa = 1.5;
  L.params.tau = 0.1;
  L.params.burn_in = 0;
  L.truth = simulate(L.params, seed);
  L.obs = observe(L.truth, track_mask(3, 8, 8, TrackPattern{3, 1, 1, 0}), 1e-3, seed + 1);
  L.q = precision_matrix(L.params, 3);
  L.prob = OIProblem{L.obs, L.q, Field3D::zeros(3, 8, 8), std::nullopt};
  L.oi = solve_precision(L.prob);
  L.cost = VarCost::with_prior(make_matrix_prior(L.q), L.obs.sigma2);
  return L;
}

}  // namespace

TEST_CASE("schedule evaluation") {
  Schedule s;  // nu=0.05, K0=50, alpha=0.1, K1=10
  CHECK(schedule_eval(s, 0).first == doctest::Approx(0.05));
  CHECK(schedule_eval(s, s.k1).second == doctest::Approx(0.0));
  Schedule sharp{0.05, 50, 1.0, 10};
  CHECK(schedule_eval(sharp, 20).second == doctest::Approx(std::tanh(10.0)).epsilon(1e-12));
  // a decreasing, positive; omega in (-1,1) climbing to 1
  double prev_a = 1e9;
  for (int k = 0; k < 200; ++k) {
    const auto [a, w] = schedule_eval(s, k);
    CHECK(a > 0.0);
    CHECK(a < prev_a);
    CHECK(w > -1.0);
    CHECK(w < 1.0);
    prev_a = a;
  }
}

TEST_CASE("init_state: zero-filling") {
  Lemma2Instance L = make_lemma2_instance(100);
  SUBCASE("full mask returns y") {
    const ObsSet full = observe(L.truth, full_mask(3, 8, 8), 1e-3, 3);
    const Field3D x0 = init_state(full);
    for (std::size_t i = 0; i < x0.numel(); ++i) CHECK(x0.data[i] == full.values[i]);
  }
  SUBCASE("empty mask returns zeros") {
    Mask3D empty = full_mask(3, 8, 8);
    std::fill(empty.on.begin(), empty.on.end(), 0);
    const Field3D x0 = init_state(ObsSet(empty, Tensor({3, 8, 8}), 1e-3));
    CHECK(x0.data.max_abs() == 0.0);
  }
  SUBCASE("support size equals the mask count") {
    const Field3D x0 = init_state(L.obs);
    std::size_t nz = 0;
    for (std::size_t i = 0; i < x0.numel(); ++i) nz += x0.data[i] != 0.0 ? 1 : 0;
    CHECK(nz == L.obs.count());
  }
}

TEST_CASE("pure-gradient mode reproduces gradient_descent_oi with step sigma2*a(k)") {
  Lemma2Instance L = make_lemma2_instance(101);
  const int K = 40;
  SolverModel m = SolverModel::pure_gradient(Schedule{}, K);
  const Field3D x0 = init_state(L.obs);
  auto [xs, tr] = solve(m, L.cost, L.obs, x0);

  // grad j_phi = sigma2 * grad oi_cost when lambda = sigma2 and mu = 0
  GdOptions opt;
  opt.max_iters = K;
  const double s2 = L.obs.sigma2;
  opt.step = [&, s2](int k) { return s2 * schedule_eval(Schedule{}, k).first; };
  auto [xg, trg] = gradient_descent_oi(L.prob, x0, opt);

  CHECK(rel_l2(xs.data, xg.data) < 1e-12);
  REQUIRE(tr.rows.size() == static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    CHECK(tr.rows[static_cast<std::size_t>(k)].j ==
          doctest::Approx(s2 * trg[static_cast<std::size_t>(k)].cost).epsilon(1e-10));
  }
}

TEST_CASE("zero-initialized G at the exact solution is a fixed point") {
  Lemma2Instance L = make_lemma2_instance(102);
  SolverModel m = SolverModel::zeros(3, 8, 3, Pad::periodic, Schedule{}, 50);
  auto [x, tr] = solve(m, L.cost, L.obs, L.oi);
  CHECK(rel_l2(x.data, L.oi.data) < 1e-6);
}

TEST_CASE("untrained bounded G converges to the exact OI solution (Lemma 2)") {
  Lemma2Instance L = make_lemma2_instance(103);
  SolverModel m = SolverModel::random(3, 8, /*seed=*/17, 3, Pad::periodic, Schedule{}, 2000);
  auto [x, tr] = solve(m, L.cost, L.obs, init_state(L.obs));
  CHECK(rel_l2(x.data, L.oi.data) < 1e-3);
}

TEST_CASE("far beyond K1 the update is within one degree of the raw gradient direction") {
  Lemma2Instance L = make_lemma2_instance(104);
  // identical deterministic trajectories: the 151-iteration run passes through
  // the 150-iteration run's endpoint
  SolverModel m150 = SolverModel::random(3, 8, 18, 3, Pad::periodic, Schedule{}, 150);
  SolverModel m151 = SolverModel::random(3, 8, 18, 3, Pad::periodic, Schedule{}, 151);
  auto [xa, ta] = solve(m150, L.cost, L.obs, init_state(L.obs));
  auto [xb, tb] = solve(m151, L.cost, L.obs, init_state(L.obs));

  // update taken at k = 150 and the gradient there
  Tape t;
  ParamRefs refs;
  L.cost.collect_params(refs);
  Binding b(t, refs, false);
  ObsVars ov = ObsVars::bind(t, L.obs);
  Var xv = t.input(Tensor(xa.data), true);
  const Tensor g = t.val(t.grad(j_phi(t, xv, ov, L.cost, b), xv));

  double dot = 0.0, nu = 0.0, ng = 0.0;
  for (std::size_t i = 0; i < g.numel(); ++i) {
    const double upd = xa.data[i] - xb.data[i];  // = a(150) * [w g + (1-w) G(g)]
    dot += upd * g[i];
    nu += upd * upd;
    ng += g[i] * g[i];
  }
  REQUIRE(nu > 0.0);
  const double cosang = dot / std::sqrt(nu * ng);
  CHECK(std::acos(std::min(1.0, cosang)) * 180.0 / M_PI < 1.0);
}

TEST_CASE("solver is deterministic") {
  Lemma2Instance L = make_lemma2_instance(105);
  SolverModel m = SolverModel::random(3, 8, 19, 3, Pad::periodic, Schedule{}, 30);
  auto [xa, ta] = solve(m, L.cost, L.obs, init_state(L.obs));
  auto [xb, tb] = solve(m, L.cost, L.obs, init_state(L.obs));
  CHECK(std::memcmp(xa.data.data(), xb.data.data(), xa.data.numel() * sizeof(double)) == 0);
  REQUIRE(ta.rows.size() == tb.rows.size());
  for (std::size_t i = 0; i < ta.rows.size(); ++i) {
    CHECK(ta.rows[i].j == tb.rows[i].j);
    CHECK(ta.rows[i].grad_norm == tb.rows[i].grad_norm);
  }
}

TEST_CASE("exploding steps raise NumericError carrying the iteration index") {
  Lemma2Instance L = make_lemma2_instance(106);
  SolverModel m = SolverModel::pure_gradient(Schedule{1e9, 50, 0.1, 10}, 50);
  try {
    solve(m, L.cost, L.obs, init_state(L.obs));
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("iteration") != std::string::npos);
  }
}

TEST_CASE("unrolled solve matches the inference solve iterate by iterate") {
  Lemma2Instance L = make_lemma2_instance(107);
  SolverModel m = SolverModel::random(3, 6, 20, 3, Pad::periodic, Schedule{}, 6);
  const Field3D x0 = init_state(L.obs);
  auto [x_inf, tr_inf] = solve(m, L.cost, L.obs, x0);

  Tape t;
  ParamRefs refs;
  m.collect_params(refs);
  L.cost.collect_params(refs);
  Binding b(t, refs, true);
  ObsVars ov = ObsVars::bind(t, L.obs);
  Var x0v = t.input(Tensor(x0.data), true);
  const UnrolledSolve un = solve_unrolled(t, m, L.cost, b, ov, std::nullopt, x0v, 6);

  CHECK(rel_l2(t.val(un.x_final), x_inf.data) < 1e-14);
  for (std::size_t k = 0; k < 6; ++k) {
    CHECK(un.trace.rows[k].j == doctest::Approx(tr_inf.rows[k].j).epsilon(1e-13));
  }
}

TEST_CASE("G output is bounded by the projection weight mass") {
  RandomStream rng(110);
  SolverModel m = SolverModel::random(2, 4, 21, 3, Pad::periodic, Schedule{}, 10);
  double proj_l1 = 0.0;
  // per output channel, sum |proj| over hidden channels; |h| <= 1 bounds G
  for (int co = 0; co < 2; ++co) {
    double s = 0.0;
    for (int ci = 0; ci < 4; ++ci) s += std::fabs(m.proj[static_cast<std::size_t>(co) * 4 + ci]);
    proj_l1 = std::max(proj_l1, s);
  }
  ParamRefs refs;
  m.collect_params(refs);
  for (int rep = 0; rep < 50; ++rep) {
    Tape t;
    Binding b(t, refs, false);
    Var g = t.constant(Tensor::randn({2, 5, 5}, rng, 100.0));
    LstmState st{t.constant(Tensor({4, 5, 5})), t.constant(Tensor({4, 5, 5}))};
    st = lstm_step(t, m.cell, b, g, st.h, st.c);
    Var gg = t.conv2d(st.h, b.of(m.proj), Pad::periodic);
    CHECK(t.val(gg).max_abs() <= proj_l1 + 1e-12);
  }
}
