#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "noi/solver.hpp"
#include "test_util.hpp"

using namespace noi;

namespace {

struct Setup {
  SpdeParams params;
  Field3D truth;
  ObsSet obs;
  SparseSym q;
};

Setup make_setup(int nx, int ny, int T, std::uint64_t seed, double sigma2 = 1e-3) {
  Setup s;
  s.params = SpdeParams::gp_iso(nx, ny, T, 2);
  s.params.burn_in = 0;
  s.truth = simulate(s.params, seed);
  s.obs = observe(s.truth, track_mask(T, ny, nx, TrackPattern{3, 1, 1, 0}), sigma2, seed + 1);
  s.q = precision_matrix(s.params, T);
  return s;
}

double eval_j_phi(VarCost& cost, const ObsSet& obs, const Tensor& x) {
  Tape t;
  ParamRefs refs;
  cost.collect_params(refs);
  Binding b(t, refs, false);
  ObsVars ov = ObsVars::bind(t, obs);
  return t.val(j_phi(t, t.constant(Tensor(x)), ov, cost, b))[0];
}

}  // namespace

TEST_CASE("j_phi: identity prior and exactly interpolating state give zero cost") {
  Setup s = make_setup(4, 4, 3, 70, 0.0);
  // zero kernel -> Phi(x) = x - 0*conv = x: no regularization
  VarCost cost = VarCost::with_prior(std::make_shared<LinearConvPrior>(Tensor({1, 1, 1}), false), 2.0);
  Tensor x = s.obs.values;  // equals truth on the mask (sigma2 = 0)
  CHECK(eval_j_phi(cost, s.obs, x) == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("j_phi with the matrix prior and lambda = sigma2 is sigma2 times the OI cost") {
  Setup s = make_setup(6, 6, 3, 71);
  VarCost cost = VarCost::with_prior(make_matrix_prior(s.q), s.obs.sigma2);
  OIProblem prob{s.obs, s.q, Field3D::zeros(3, 6, 6), std::nullopt};
  RandomStream rng(72);
  for (int rep = 0; rep < 5; ++rep) {
    const Tensor x = Tensor::randn({3, 6, 6}, rng);
    const double lhs = eval_j_phi(cost, s.obs, x);
    const double rhs = s.obs.sigma2 * oi_cost(x, prob);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
  }
}

TEST_CASE("gradient of j_phi matches finite differences") {
  Setup s = make_setup(4, 4, 2, 73);
  RandomStream rng(74);
  SUBCASE("linear prior, gradient in x") {
    VarCost cost = VarCost::with_prior(make_matrix_prior(s.q), s.obs.sigma2);
    const Tensor x0 = Tensor::randn({2, 4, 4}, rng);
    Tape t;
    ParamRefs refs;
    cost.collect_params(refs);
    Binding b(t, refs, false);
    ObsVars ov = ObsVars::bind(t, s.obs);
    Var x = t.input(Tensor(x0), true);
    const Tensor g = t.val(t.grad(j_phi(t, x, ov, cost, b), x));
    auto f = [&](const std::vector<double>& v) { return eval_j_phi(cost, s.obs, testutil::from_vec({2, 4, 4}, v)); };
    CHECK(testutil::rel_err(testutil::to_vec(g), testutil::fd_gradient(f, testutil::to_vec(x0))) < 1e-6);
  }
  SUBCASE("nonlinear prior, gradient in x and in a prior weight") {
    RandomStream prng(75);
    auto prior = std::make_shared<ConvResPrior>(2, 4, 3, Pad::periodic, prng);
    VarCost cost = VarCost::with_prior(prior, 0.5);
    const Tensor x0 = Tensor::randn({2, 4, 4}, rng);

    ParamRefs refs;
    cost.collect_params(refs);
    Tape t;
    Binding b(t, refs, true);
    ObsVars ov = ObsVars::bind(t, s.obs);
    Var x = t.input(Tensor(x0), true);
    Var j = j_phi(t, x, ov, cost, b);
    const Tensor gx = t.val(t.grad(j, x));
    auto fx = [&](const std::vector<double>& v) { return eval_j_phi(cost, s.obs, testutil::from_vec({2, 4, 4}, v)); };
    CHECK(testutil::rel_err(testutil::to_vec(gx), testutil::fd_gradient(fx, testutil::to_vec(x0))) < 1e-6);

    // d j_phi / d w1 via FD
    Tensor* w1 = refs.tensors[0];
    const Tensor gw = t.val(t.grad(j, b.of(*w1)));
    const Tensor w0 = *w1;
    auto fw = [&](const std::vector<double>& v) {
      *w1 = testutil::from_vec(w0.shape(), v);
      const double out = eval_j_phi(cost, s.obs, x0);
      *w1 = w0;
      return out;
    };
    CHECK(testutil::rel_err(testutil::to_vec(gw), testutil::fd_gradient(fw, testutil::to_vec(w0))) < 1e-6);
  }
}

TEST_CASE("make_matrix_prior realizes the precision quadratic form") {
  RandomStream rng(76);
  SUBCASE("identity precision") {
    VarCost cost = VarCost::with_prior(make_matrix_prior(SparseSym(sparse_identity(12))), 1.0);
    Tape t;
    ParamRefs refs;
    cost.collect_params(refs);
    Binding b(t, refs, false);
    Var x = t.constant(Tensor::randn({3, 2, 2}, rng));
    Var r = t.sub(x, cost.prior->apply(t, b, x));
    double n2 = 0.0;
    for (std::size_t i = 0; i < 12; ++i) n2 += t.val(x)[i] * t.val(x)[i];
    CHECK(t.val(t.sqnorm(r))[0] == doctest::Approx(n2).epsilon(1e-12));
  }
  SUBCASE("diagonal precision of 4 scales the norm by 4") {
    VarCost cost = VarCost::with_prior(make_matrix_prior(SparseSym(sparse_identity(12, 4.0))), 1.0);
    Tape t;
    ParamRefs refs;
    cost.collect_params(refs);
    Binding b(t, refs, false);
    Var x = t.constant(Tensor::randn({3, 2, 2}, rng));
    Var r = t.sub(x, cost.prior->apply(t, b, x));
    double n2 = 0.0;
    for (std::size_t i = 0; i < 12; ++i) n2 += t.val(x)[i] * t.val(x)[i];
    CHECK(t.val(t.sqnorm(r))[0] == doctest::Approx(4.0 * n2).epsilon(1e-12));
  }
  SUBCASE("SPDE window precision") {
    Setup s = make_setup(6, 6, 3, 77);
    VarCost cost = VarCost::with_prior(make_matrix_prior(s.q), 1.0);
    Tape t;
    ParamRefs refs;
    cost.collect_params(refs);
    Binding b(t, refs, false);
    for (int rep = 0; rep < 5; ++rep) {
      Var x = t.constant(Tensor::randn({3, 6, 6}, rng));
      Var r = t.sub(x, cost.prior->apply(t, b, x));
      CHECK(t.val(t.sqnorm(r))[0] == doctest::Approx(quad_form(s.q, testutil::to_vec(t.val(x)))).epsilon(1e-10));
    }
  }
}

TEST_CASE("Property-1 equivalence: argmin of j_phi equals the precision-form OI solution") {
  Setup s = make_setup(6, 6, 3, 78);
  // normal equations of j_phi with lambda = sigma2: (H'H + sigma2 Q) x = H'y
  const std::size_t n = 108;
  TripletBuilder diag;
  for (std::size_t i = 0; i < n; ++i)
    if (s.obs.mask.on[i]) diag.add(static_cast<int>(i), static_cast<int>(i), 1.0);
  const SparseSym sys(sparse_add(diag.to_csr(108, 108), s.q.csr(), 1.0, s.obs.sigma2));
  std::vector<double> rhs(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    if (s.obs.mask.on[i]) rhs[i] = s.obs.values[i];
  const auto argmin = cholesky(sys).solve(rhs);

  OIProblem prob{s.obs, s.q, Field3D::zeros(3, 6, 6), std::nullopt};
  const Field3D xhat = solve_precision(prob);
  CHECK(testutil::rel_err(argmin, testutil::to_vec(xhat.data)) < 1e-6);
}

TEST_CASE("Lemma-1 realization: spectral conv prior matches the matrix prior cost") {
  SpdeParams p = SpdeParams::gp_iso(6, 8, 1, 2);
  const int T = 3;
  const SparseSym q_per = precision_matrix_periodic(p, T);
  const Mask3D m = track_mask(T, 8, 6, TrackPattern{3, 1, 1, 0});
  Field3D zero = Field3D::zeros(T, 8, 6);
  const ObsSet obs = observe(zero, m, 1e-3, 80);

  VarCost matrix_cost = VarCost::with_prior(make_matrix_prior(q_per), 1e-3);
  VarCost conv_cost = VarCost::with_prior(LinearConvPrior::from_spectral(stationary_prior_kernel(p, T)), 1e-3);

  RandomStream rng(81);
  for (int rep = 0; rep < 5; ++rep) {
    const Tensor x = Tensor::randn({T, 8, 6}, rng);
    const double a = eval_j_phi(matrix_cost, obs, x);
    const double b = eval_j_phi(conv_cost, obs, x);
    CHECK(a == doctest::Approx(b).epsilon(1e-8));
  }
}

TEST_CASE("ConvResPrior with all-zero weights reduces to ridge regularization") {
  auto prior = ConvResPrior::zeros(2, 4);
  VarCost cost = VarCost::with_prior(prior, 0.7);
  Mask3D empty = full_mask(2, 4, 4);
  std::fill(empty.on.begin(), empty.on.end(), 0);
  const ObsSet obs(empty, Tensor({2, 4, 4}), 1e-3);
  RandomStream rng(82);
  const Tensor x = Tensor::randn({2, 4, 4}, rng);
  double n2 = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) n2 += x[i] * x[i];
  CHECK(eval_j_phi(cost, obs, x) == doctest::Approx(0.7 * n2).epsilon(1e-12));
}

TEST_CASE("LinearConvPrior is linear") {
  RandomStream rng(83);
  auto prior = LinearConvPrior::trainable(3, 3, 3, rng, 0.3);
  Tape t;
  ParamRefs refs;
  prior->collect_params(refs, "prior");
  Binding b(t, refs, false);
  for (int rep = 0; rep < 5; ++rep) {
    Var x = t.constant(Tensor::randn({3, 5, 5}, rng));
    Var y = t.constant(Tensor::randn({3, 5, 5}, rng));
    const double ca = rng.uniform(-2, 2), cb = rng.uniform(-2, 2);
    Var lhs = prior->apply(t, b, t.add(t.scale(x, ca), t.scale(y, cb)));
    Var rhs = t.add(t.scale(prior->apply(t, b, x), ca), t.scale(prior->apply(t, b, y), cb));
    CHECK(testutil::rel_err(t.val(lhs), t.val(rhs)) < 1e-12);
  }
}

TEST_CASE("j_multimodal: lambda2 = 0 reduces to a scaled j_phi") {
  Setup s = make_setup(4, 4, 2, 84);
  RandomStream rng(85);
  auto prior = std::make_shared<ConvResPrior>(2, 4, 3, Pad::periodic, rng);

  VarCost mm = VarCost::with_prior(prior, 1.0);
  mm.enable_multimodal(std::make_shared<FeatureNet>(FeatureNet::make_identity()),
                       std::make_shared<FeatureNet>(FeatureNet::make_identity()), 2.0, 0.0, 0.5);
  VarCost plain = VarCost::with_prior(prior, 0.25);  // lambda = l3/l1

  const Tensor x = Tensor::randn({2, 4, 4}, rng);
  const Field3D z = Field3D::zeros(2, 4, 4);

  Tape t;
  ParamRefs refs;
  mm.collect_params(refs);
  Binding b(t, refs, false);
  ObsVars ov = ObsVars::bind(t, s.obs);
  const double jm = t.val(j_multimodal(t, t.constant(Tensor(x)), ov, t.constant(Tensor(z.data)), mm, b))[0];
  const double jp = eval_j_phi(plain, s.obs, x);
  CHECK(jm == doctest::Approx(2.0 * jp).epsilon(1e-12));
}

TEST_CASE("j_multimodal: identity feature maps and z = x zero the middle term") {
  Setup s = make_setup(4, 4, 2, 86);
  RandomStream rng(87);
  auto prior = std::make_shared<ConvResPrior>(2, 4, 3, Pad::periodic, rng);
  VarCost mm = VarCost::with_prior(prior, 1.0);
  mm.enable_multimodal(std::make_shared<FeatureNet>(FeatureNet::make_identity()),
                       std::make_shared<FeatureNet>(FeatureNet::make_identity()), 1.0, 5.0, 0.5);
  const Tensor x = Tensor::randn({2, 4, 4}, rng);

  Tape t;
  ParamRefs refs;
  mm.collect_params(refs);
  Binding b(t, refs, false);
  ObsVars ov = ObsVars::bind(t, s.obs);
  const double with_term = t.val(j_multimodal(t, t.constant(Tensor(x)), ov, t.constant(Tensor(x)), mm, b))[0];

  mm.lambda2 = 0.0;
  const double without = t.val(j_multimodal(t, t.constant(Tensor(x)), ov, t.constant(Tensor(x)), mm, b))[0];
  CHECK(with_term == doctest::Approx(without).epsilon(1e-13));
}

TEST_CASE("j_multimodal gradients match finite differences (x and feature-net weight)") {
  Setup s = make_setup(4, 4, 2, 88);
  RandomStream rng(89);
  auto prior = std::make_shared<ConvResPrior>(2, 3, 3, Pad::periodic, rng);
  VarCost mm = VarCost::with_prior(prior, 1.0);
  auto g = std::make_shared<FeatureNet>(FeatureNet::random(2, 3, rng));
  auto h = std::make_shared<FeatureNet>(FeatureNet::random(2, 3, rng));
  mm.enable_multimodal(g, h, 1.0, 0.8, 0.3);
  const Tensor x0 = Tensor::randn({2, 4, 4}, rng);
  const Tensor z0 = Tensor::randn({2, 4, 4}, rng, 0.5);

  auto eval_mm = [&](const Tensor& x) {
    Tape t;
    ParamRefs refs;
    mm.collect_params(refs);
    Binding b(t, refs, false);
    ObsVars ov = ObsVars::bind(t, s.obs);
    return t.val(j_multimodal(t, t.constant(Tensor(x)), ov, t.constant(Tensor(z0)), mm, b))[0];
  };

  ParamRefs refs;
  mm.collect_params(refs);
  Tape t;
  Binding b(t, refs, true);
  ObsVars ov = ObsVars::bind(t, s.obs);
  Var x = t.input(Tensor(x0), true);
  Var j = j_multimodal(t, x, ov, t.constant(Tensor(z0)), mm, b);

  const Tensor gx = t.val(t.grad(j, x));
  auto fx = [&](const std::vector<double>& v) { return eval_mm(testutil::from_vec({2, 4, 4}, v)); };
  CHECK(testutil::rel_err(testutil::to_vec(gx), testutil::fd_gradient(fx, testutil::to_vec(x0))) < 1e-6);

  Tensor* gw = &g->w1;
  const Tensor gg = t.val(t.grad(j, b.of(*gw)));
  const Tensor w0 = *gw;
  auto fw = [&](const std::vector<double>& v) {
    *gw = testutil::from_vec(w0.shape(), v);
    const double out = eval_mm(x0);
    *gw = w0;
    return out;
  };
  CHECK(testutil::rel_err(testutil::to_vec(gg), testutil::fd_gradient(fw, testutil::to_vec(w0))) < 1e-6);
}

TEST_CASE("multimodal cost without a configured block raises ConfigError") {
  Setup s = make_setup(4, 4, 2, 90);
  RandomStream rng(91);
  VarCost plain = VarCost::with_prior(std::make_shared<ConvResPrior>(2, 3, 3, Pad::periodic, rng), 1.0);
  Tape t;
  ParamRefs refs;
  plain.collect_params(refs);
  Binding b(t, refs, false);
  ObsVars ov = ObsVars::bind(t, s.obs);
  Var x = t.constant(Tensor({2, 4, 4}));
  CHECK_THROWS_AS(j_multimodal(t, x, ov, x, plain, b), ConfigError);
}

TEST_CASE("trainable lambda: value uses exp(log-lambda) and receives a gradient") {
  Setup s = make_setup(4, 4, 2, 92);
  RandomStream rng(93);
  VarCost cost = VarCost::with_prior(std::make_shared<ConvResPrior>(2, 3, 3, Pad::periodic, rng), 1.0);
  cost.enable_trainable_lambda(0.37);
  const Tensor x0 = Tensor::randn({2, 4, 4}, rng);

  ParamRefs refs;
  cost.collect_params(refs);
  Tape t;
  Binding b(t, refs, true);
  ObsVars ov = ObsVars::bind(t, s.obs);
  Var j = j_phi(t, t.constant(Tensor(x0)), ov, cost, b);

  // cross-check against the fixed-lambda evaluation
  VarCost fixed = cost;
  fixed.trainable_lambda = false;
  fixed.lambda = 0.37;
  CHECK(t.val(j)[0] == doctest::Approx(eval_j_phi(fixed, s.obs, x0)).epsilon(1e-12));

  const Tensor gl = t.val(t.grad(j, b.of(cost.log_lambda)));
  const Tensor l0 = cost.log_lambda;
  auto fl = [&](const std::vector<double>& v) {
    cost.log_lambda = testutil::from_vec({1}, v);
    Tape t2;
    ParamRefs r2;
    cost.collect_params(r2);
    Binding b2(t2, r2, false);
    ObsVars ov2 = ObsVars::bind(t2, s.obs);
    const double out = t2.val(j_phi(t2, t2.constant(Tensor(x0)), ov2, cost, b2))[0];
    cost.log_lambda = l0;
    return out;
  };
  CHECK(testutil::rel_err(testutil::to_vec(gl), testutil::fd_gradient(fl, testutil::to_vec(l0))) < 1e-6);
}
