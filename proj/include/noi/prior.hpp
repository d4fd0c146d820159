// noi: trainable optimal interpolation for gappy space-time fields.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>

#include "noi/nn.hpp"
#include "noi/oi.hpp"

namespace noi {

// ---------------------------------------------------------------------------
// Prior operators Phi. The regularizer in the variational cost is
// ||x - Phi(x)||^2, so Phi = identity means no regularization and Phi = 0
// means plain ridge.
// ---------------------------------------------------------------------------

class PriorOp {
 public:
  virtual ~PriorOp() = default;
  virtual Var apply(Tape& t, const Binding& b, Var x) const = 0;
  virtual void collect_params(ParamRefs& refs, const std::string& prefix) { (void)refs; (void)prefix; }
  virtual std::string kind() const = 0;
  virtual bool is_linear() const = 0;
};

/// Phi(x) = (I - L) x with L the Cholesky square-root factor of the precision
/// (L'L = Q), so ||x - Phi(x)||^2 = ||Lx||^2 = x'Qx.
class MatrixPrior final : public PriorOp {
 public:
  explicit MatrixPrior(const SparseSym& q) : l_op_(cholesky(q).lt_p_csr()) {}

  Var apply(Tape& t, const Binding&, Var x) const override { return t.sub(x, l_op_.apply(t, x)); }
  std::string kind() const override { return "matrix"; }
  bool is_linear() const override { return true; }

  /// The factor as an operator (for tests / diagnostics).
  const SparseOp& factor_op() const { return l_op_; }

 private:
  SparseOp l_op_;
};

inline std::shared_ptr<MatrixPrior> make_matrix_prior(const SparseSym& q) { return std::make_shared<MatrixPrior>(q); }

/// Phi(x) = x - conv(x, k), circular in all three axes. With the kernel from
/// the spectral construction this reproduces the matrix prior exactly in the
/// stationary periodic case; with a small kernel it is a trainable
/// linear prior.
class LinearConvPrior final : public PriorOp {
 public:
  LinearConvPrior(Tensor kernel, bool trainable) : kernel_(std::move(kernel)), trainable_(trainable) {
    NOI_REQUIRE(kernel_.ndims() == 3, DimensionError, "LinearConvPrior kernel must be (kt,kh,kw)");
  }

  static std::shared_ptr<LinearConvPrior> from_spectral(const SpectralKernel& sk) {
    return std::make_shared<LinearConvPrior>(sk.centered, false);
  }

  /// Small trainable kernel, initialized near zero (Phi starts near identity).
  static std::shared_ptr<LinearConvPrior> trainable(int kt, int kh, int kw, RandomStream& rng, double init_scale = 1e-2) {
    return std::make_shared<LinearConvPrior>(Tensor::randn({kt, kh, kw}, rng, init_scale), true);
  }

  Var apply(Tape& t, const Binding& b, Var x) const override {
    Var k = trainable_ ? b.of(kernel_) : t.constant(Tensor(kernel_));
    return t.sub(x, t.circ3(x, k));
  }

  void collect_params(ParamRefs& refs, const std::string& prefix) override {
    if (trainable_) refs.add(prefix + ".kernel", kernel_);
  }

  std::string kind() const override { return "linear-conv"; }
  bool is_linear() const override { return true; }

  const Tensor& kernel() const { return kernel_; }
  Tensor& kernel_mut() { return kernel_; }

 private:
  Tensor kernel_;
  bool trainable_;
};

/// Small nonlinear convolutional-residual prior:
///   Phi(x) = conv2(tanh(conv1(x) + b1)) + b2 + skip(x)
/// with a 1x1 linear skip path. All-zero weights give Phi = 0 (ridge).
class ConvResPrior final : public PriorOp {
 public:
  ConvResPrior(int state_ch, int hidden_ch, int ksize, Pad pad, RandomStream& rng, double init_scale = 0.05)
      : state_ch_(state_ch), hidden_ch_(hidden_ch), ksize_(ksize), pad_(pad) {
    const double s1 = init_scale / std::sqrt(static_cast<double>(state_ch) * ksize * ksize);
    const double s2 = init_scale / std::sqrt(static_cast<double>(hidden_ch) * ksize * ksize);
    w1_ = Tensor::randn({hidden_ch, state_ch, ksize, ksize}, rng, s1);
    b1_ = Tensor({hidden_ch});
    w2_ = Tensor::randn({state_ch, hidden_ch, ksize, ksize}, rng, s2);
    b2_ = Tensor({state_ch});
    // skip starts at identity so the initial prior is close to Phi(x) = x
    skip_ = Tensor({state_ch, state_ch, 1, 1});
    for (int c = 0; c < state_ch; ++c) skip_[static_cast<std::size_t>(c) * state_ch + c] = 1.0;
  }

  static std::shared_ptr<ConvResPrior> zeros(int state_ch, int hidden_ch, int ksize = 3, Pad pad = Pad::periodic) {
    RandomStream rng(0);
    auto p = std::make_shared<ConvResPrior>(state_ch, hidden_ch, ksize, pad, rng, 0.0);
    p->skip_ = Tensor({state_ch, state_ch, 1, 1});
    return p;
  }

  Var apply(Tape& t, const Binding& b, Var x) const override {
    const int H = t.val(x).dim(1), W = t.val(x).dim(2);
    Var hid = t.tanh_(t.add(t.conv2d(x, b.of(w1_), pad_), t.ch_broadcast(b.of(b1_), H, W)));
    Var res = t.add(t.conv2d(hid, b.of(w2_), pad_), t.ch_broadcast(b.of(b2_), H, W));
    return t.add(res, t.conv2d(x, b.of(skip_), pad_));
  }

  void collect_params(ParamRefs& refs, const std::string& prefix) override {
    refs.add(prefix + ".w1", w1_);
    refs.add(prefix + ".b1", b1_);
    refs.add(prefix + ".w2", w2_);
    refs.add(prefix + ".b2", b2_);
    refs.add(prefix + ".skip", skip_);
  }

  std::string kind() const override { return "conv-res"; }
  bool is_linear() const override { return false; }

 private:
  int state_ch_, hidden_ch_, ksize_;
  Pad pad_;
  Tensor w1_, b1_, w2_, b2_, skip_;
};

}  // namespace noi
