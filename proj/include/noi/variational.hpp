// noi: trainable optimal interpolation for gappy space-time fields.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <optional>

#include "noi/prior.hpp"

namespace noi {

/// Small convnet used for the multimodal feature maps g(.) and h(.):
/// conv(in -> c) + tanh + conv(c -> c), or a plain identity pass-through.
struct FeatureNet {
  bool identity = false;
  Pad pad = Pad::periodic;
  Tensor w1, b1, w2, b2;

  static FeatureNet make_identity() {
    FeatureNet f;
    f.identity = true;
    return f;
  }

  static FeatureNet random(int in_ch, int feat_ch, RandomStream& rng, int ksize = 3, Pad pad = Pad::periodic) {
    FeatureNet f;
    f.pad = pad;
    const double s1 = 1.0 / std::sqrt(static_cast<double>(in_ch) * ksize * ksize);
    const double s2 = 1.0 / std::sqrt(static_cast<double>(feat_ch) * ksize * ksize);
    f.w1 = Tensor::randn({feat_ch, in_ch, ksize, ksize}, rng, s1);
    f.b1 = Tensor({feat_ch});
    f.w2 = Tensor::randn({feat_ch, feat_ch, ksize, ksize}, rng, s2);
    f.b2 = Tensor({feat_ch});
    return f;
  }

  Var apply(Tape& t, const Binding& b, Var x) const {
    if (identity) return x;
    const int H = t.val(x).dim(1), W = t.val(x).dim(2);
    Var hid = t.tanh_(t.add(t.conv2d(x, b.of(w1), pad), t.ch_broadcast(b.of(b1), H, W)));
    return t.add(t.conv2d(hid, b.of(w2), pad), t.ch_broadcast(b.of(b2), H, W));
  }

  void collect_params(ParamRefs& refs, const std::string& prefix) {
    if (identity) return;
    refs.add(prefix + ".w1", w1);
    refs.add(prefix + ".b1", b1);
    refs.add(prefix + ".w2", w2);
    refs.add(prefix + ".b2", b2);
  }
};

// ---------------------------------------------------------------------------
// VarCost: the reformulated variational cost
//   J(x) = ||y - Hx||^2 + lambda ||x - Phi(x)||^2
// and its multimodal extension
//   J(x) = l1 ||y - Hx||^2 + l2 ||g(z) - h(x)||^2 + l3 ||x - Phi(x)||^2.
// lambda can be trained in log-space so it stays positive.
// ---------------------------------------------------------------------------

struct VarCost {
  std::shared_ptr<PriorOp> prior;
  double lambda = 1.0;
  bool trainable_lambda = false;
  Tensor log_lambda;  // 1-element; only used when trainable_lambda

  bool multimodal = false;
  double lambda1 = 1.0, lambda2 = 1.0, lambda3 = 1.0;
  std::shared_ptr<FeatureNet> g_net, h_net;

  static VarCost with_prior(std::shared_ptr<PriorOp> p, double lam) {
    VarCost c;
    c.prior = std::move(p);
    c.lambda = lam;
    return c;
  }

  void enable_trainable_lambda(double initial) {
    NOI_REQUIRE(initial > 0.0, ContractError, "lambda must start positive");
    trainable_lambda = true;
    log_lambda = Tensor::scalar(std::log(initial));
  }

  void enable_multimodal(std::shared_ptr<FeatureNet> g, std::shared_ptr<FeatureNet> h, double l1, double l2, double l3) {
    NOI_REQUIRE(l1 >= 0.0 && l2 >= 0.0 && l3 >= 0.0, ContractError, "multimodal weights must be non-negative");
    multimodal = true;
    g_net = std::move(g);
    h_net = std::move(h);
    lambda1 = l1;
    lambda2 = l2;
    lambda3 = l3;
  }

  void collect_params(ParamRefs& refs) {
    NOI_REQUIRE(prior != nullptr, ContractError, "VarCost has no prior");
    prior->collect_params(refs, "prior");
    if (trainable_lambda) refs.add("lambda.log", log_lambda);
    if (multimodal) {
      g_net->collect_params(refs, "g");
      h_net->collect_params(refs, "h");
    }
  }
};

/// Observation constants bound once per tape.
struct ObsVars {
  Var y, mask;
  static ObsVars bind(Tape& t, const ObsSet& obs) {
    return ObsVars{t.constant(Tensor(obs.values)), t.constant(obs.mask.as_tensor())};
  }
};

/// ||y - Hx||^2 as a masked residual (the mask is 0/1, so squaring it is a
/// no-op and the product restricts the residual to observed cells).
inline Var masked_data_term(Tape& t, Var x, const ObsVars& ov) {
  Var r = t.mul(t.sub(x, ov.y), ov.mask);
  return t.sqnorm(r);
}

/// J_Phi(x, y, Omega) = ||y - Hx||^2 + lambda ||x - Phi(x)||^2, on the tape.
inline Var j_phi(Tape& t, Var x, const ObsVars& ov, const VarCost& cost, const Binding& b) {
  NOI_REQUIRE(cost.prior != nullptr, ContractError, "j_phi: cost has no prior");
  Var data = masked_data_term(t, x, ov);
  Var resid = t.sub(x, cost.prior->apply(t, b, x));
  Var reg = t.sqnorm(resid);
  Var reg_w = cost.trainable_lambda ? t.scale_by(reg, t.exp_(b.of(cost.log_lambda))) : t.scale(reg, cost.lambda);
  return t.add(data, reg_w);
}

/// Multimodal cost of the gap-free secondary observation z.
inline Var j_multimodal(Tape& t, Var x, const ObsVars& ov, Var z, const VarCost& cost, const Binding& b) {
  NOI_REQUIRE(cost.multimodal && cost.g_net && cost.h_net, ConfigError, "j_multimodal: multimodal block not configured");
  Var data = t.scale(masked_data_term(t, x, ov), cost.lambda1);
  Var feat = t.sub(cost.g_net->apply(t, b, z), cost.h_net->apply(t, b, x));
  Var mid = t.scale(t.sqnorm(feat), cost.lambda2);
  Var resid = t.sub(x, cost.prior->apply(t, b, x));
  Var reg = t.scale(t.sqnorm(resid), cost.lambda3);
  return t.add(t.add(data, mid), reg);
}

/// Dispatch: the solver minimizes this cost each iteration.
inline Var inner_cost(Tape& t, Var x, const ObsVars& ov, const std::optional<Var>& z, const VarCost& cost,
                      const Binding& b) {
  if (cost.multimodal) {
    NOI_REQUIRE(z.has_value(), ConfigError, "multimodal cost requires the secondary modality");
    return j_multimodal(t, x, ov, *z, cost, b);
  }
  return j_phi(t, x, ov, cost, b);
}

}  // namespace noi
