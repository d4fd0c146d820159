#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "noi/nn.hpp"
#include "test_util.hpp"

using namespace noi;

TEST_CASE("lstm_step: all-zero cell maps zero input to zero hidden state") {
  ConvLSTMCell cell = ConvLSTMCell::zeros(2, 3);
  ParamRefs refs;
  cell.collect_params(refs, "cell");
  Tape t;
  Binding b(t, refs, false);
  Var x = t.constant(Tensor({2, 4, 4}));
  Var h = t.constant(Tensor({3, 4, 4}));
  Var c = t.constant(Tensor({3, 4, 4}));
  const LstmState s = lstm_step(t, cell, b, x, h, c);
  CHECK(t.val(s.h).max_abs() == 0.0);
  CHECK(t.val(s.c).max_abs() == 0.0);
}

TEST_CASE("lstm_step gate equations, hand-evaluated on a 1x1 cell") {
  // zero kernels, biases only: i=sigmoid(bi), f=sigmoid(bf), g=tanh(bg), o=sigmoid(bo)
  ConvLSTMCell cell = ConvLSTMCell::zeros(1, 1, 1);
  const double bi = 0.3, bf = -20.0, bg = 0.7, bo = 0.2;
  cell.bias = Tensor({4}, {bi, bf, bg, bo});
  ParamRefs refs;
  cell.collect_params(refs, "cell");
  Tape t;
  Binding b(t, refs, false);
  Var x = t.constant(Tensor({1, 1, 1}, 5.0));    // ignored: kernels are zero
  Var h = t.constant(Tensor({1, 1, 1}, 0.4));
  Var c = t.constant(Tensor({1, 1, 1}, 10.0));   // large previous cell state
  const LstmState s = lstm_step(t, cell, b, x, h, c);

  const double ig = 1.0 / (1.0 + std::exp(-bi));
  const double fg = 1.0 / (1.0 + std::exp(-bf));  // ~0: forget gate slams shut
  const double gg = std::tanh(bg);
  const double og = 1.0 / (1.0 + std::exp(-bo));
  const double c_want = fg * 10.0 + ig * gg;
  CHECK(t.val(s.c)[0] == doctest::Approx(c_want).epsilon(1e-12));
  // with the huge negative forget bias the old state is wiped: candidate only
  CHECK(t.val(s.c)[0] == doctest::Approx(ig * gg).epsilon(1e-6));
  CHECK(t.val(s.h)[0] == doctest::Approx(og * std::tanh(c_want)).epsilon(1e-12));
}

TEST_CASE("lstm hidden state stays inside (-1, 1) for arbitrary inputs") {
  RandomStream rng(31);
  ConvLSTMCell cell = ConvLSTMCell::random(2, 4, rng);
  // exaggerate the weights; the bound is structural
  cell.w_in = kern::scale(cell.w_in, 50.0);
  cell.bias = Tensor::randn({16}, rng, 10.0);
  ParamRefs refs;
  cell.collect_params(refs, "cell");

  double max_h = 0.0;
  Tensor h({4, 3, 3}), c({4, 3, 3});
  for (int step = 0; step < 1000; ++step) {
    Tape t;
    Binding b(t, refs, false);
    const LstmState s = lstm_step(t, cell, b, t.constant(Tensor::randn({2, 3, 3}, rng, 5.0)),
                                  t.constant(Tensor(h)), t.constant(Tensor(c)));
    h = t.val(s.h);
    c = t.val(s.c);
    max_h = std::max(max_h, h.max_abs());
  }
  CHECK(max_h < 1.0);
}

TEST_CASE("lstm_step channel mismatch raises DimensionError") {
  ConvLSTMCell cell = ConvLSTMCell::zeros(2, 3);
  ParamRefs refs;
  cell.collect_params(refs, "cell");
  Tape t;
  Binding b(t, refs, false);
  Var bad = t.constant(Tensor({5, 4, 4}));
  Var h = t.constant(Tensor({3, 4, 4}));
  CHECK_THROWS_AS(lstm_step(t, cell, b, bad, h, h), DimensionError);
}

TEST_CASE("lstm gradients pass a finite-difference check") {
  RandomStream rng(32);
  ConvLSTMCell cell = ConvLSTMCell::random(1, 2, rng);
  const Tensor x0 = Tensor::randn({1, 3, 3}, rng, 0.5);

  auto eval = [&](Tape& t) {
    ParamRefs refs;
    cell.collect_params(refs, "cell");
    Binding b(t, refs, true);
    const LstmState s = lstm_step(t, cell, b, t.constant(Tensor(x0)), t.constant(Tensor({2, 3, 3})),
                                  t.constant(Tensor({2, 3, 3})));
    return std::make_pair(t.sqnorm(s.h), b.of(cell.w_in));
  };

  Tape t;
  const auto [loss, win_var] = eval(t);
  const Tensor g = t.val(t.grad(loss, win_var));

  const Tensor w0 = cell.w_in;
  auto f = [&](const std::vector<double>& v) {
    cell.w_in = testutil::from_vec(w0.shape(), v);
    Tape t2;
    const double out = t2.val(eval(t2).first)[0];
    cell.w_in = w0;
    return out;
  };
  const auto fd = testutil::fd_gradient(f, testutil::to_vec(w0));
  CHECK(testutil::rel_err(testutil::to_vec(g), fd) < 1e-5);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Tensor p({4}, {1.0, -2.0, 3.0, 0.5});
  const Tensor orig = p;
  std::vector<Tensor*> params{&p};
  AdamState st = AdamState::init(params, 0.1);
  for (int i = 0; i < 5; ++i) adam_update(st, params, {Tensor({4})});
  for (std::size_t i = 0; i < 4; ++i) CHECK(p[i] == orig[i]);
}

TEST_CASE("adam first step with constant gradient is a near-sign step of size lr") {
  // first step: m_hat = g, v_hat = g^2, update = -lr * g/(|g| + eps) ~ -lr * sign(g)
  Tensor p({3}, {0.0, 0.0, 0.0});
  std::vector<Tensor*> params{&p};
  AdamState st = AdamState::init(params, 0.01);
  adam_update(st, params, {Tensor({3}, {2.5, -0.3, 1e-3})});
  CHECK(p[0] == doctest::Approx(-0.01).epsilon(1e-5));
  CHECK(p[1] == doctest::Approx(0.01).epsilon(1e-4));
  CHECK(p[2] == doctest::Approx(-0.01).epsilon(1e-3));
}

TEST_CASE("adam drives f(p) = p^2 toward zero in 100 steps") {
  // independent scalar oracle of the same recurrence, run side by side
  double po = 1.0, m = 0.0, v = 0.0;
  const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int k = 1; k <= 100; ++k) {
    const double g = 2.0 * po;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    po -= lr * (m / (1 - std::pow(b1, k))) / (std::sqrt(v / (1 - std::pow(b2, k))) + eps);
  }

  Tensor p({1}, {1.0});
  std::vector<Tensor*> params{&p};
  AdamState st = AdamState::init(params, 0.1);
  for (int k = 0; k < 100; ++k) adam_update(st, params, {Tensor({1}, {2.0 * p[0]})});

  CHECK(std::fabs(po) < 0.1);                      // oracle reaches the target
  CHECK(p[0] == doctest::Approx(po).epsilon(1e-12));  // implementation tracks the oracle
  CHECK(std::fabs(p[0]) < 0.1);
}

TEST_CASE("adam shape mismatch raises DimensionError") {
  Tensor p({3});
  std::vector<Tensor*> params{&p};
  AdamState st = AdamState::init(params);
  CHECK_THROWS_AS(adam_update(st, params, {Tensor({4})}), DimensionError);
}
