// noi: trainable optimal interpolation for gappy space-time fields.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "noi/tape.hpp"

namespace noi {

// ---------------------------------------------------------------------------
// Named parameter collection + per-tape binding.
//
// Trainable components own plain Tensors. Before building a graph, bind()
// turns each into a leaf Var on the tape; components fetch their leaf through
// Binding::of(). Gradients are read back in ParamRefs order, which is stable,
// so optimizer state and checkpoints stay aligned.
// ---------------------------------------------------------------------------

struct ParamRefs {
  std::vector<Tensor*> tensors;
  std::vector<std::string> names;

  void add(const std::string& name, Tensor& t) {
    names.push_back(name);
    tensors.push_back(&t);
  }

  std::size_t size() const { return tensors.size(); }
};

class Binding {
 public:
  Binding() = default;

  Binding(Tape& tape, const ParamRefs& refs, bool trainable) {
    vars_.reserve(refs.size());
    for (std::size_t i = 0; i < refs.size(); ++i) {
      Var v = tape.input(Tensor(*refs.tensors[i]), trainable);
      index_.emplace(refs.tensors[i], vars_.size());
      vars_.push_back(v);
    }
  }

  Var of(const Tensor& param) const {
    auto it = index_.find(&param);
    NOI_REQUIRE(it != index_.end(), ContractError, "parameter was not bound to this tape");
    return vars_[it->second];
  }

  const std::vector<Var>& vars() const { return vars_; }

 private:
  std::vector<Var> vars_;
  std::unordered_map<const Tensor*, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Convolutional LSTM cell on (C, H, W) tensors.
// Gate preactivations come from one input conv + one hidden conv + bias,
// split channel-wise in the order [input, forget, candidate, output].
// ---------------------------------------------------------------------------

struct ConvLSTMCell {
  Tensor w_in;   // (4*hidden, in_ch, k, k)
  Tensor w_hid;  // (4*hidden, hidden, k, k)
  Tensor bias;   // (4*hidden)
  int in_channels = 0;
  int hidden_channels = 0;
  int kernel_size = 3;
  Pad pad_mode = Pad::periodic;

  static ConvLSTMCell zeros(int in_ch, int hidden, int ksize = 3, Pad pad = Pad::periodic) {
    ConvLSTMCell c;
    c.in_channels = in_ch;
    c.hidden_channels = hidden;
    c.kernel_size = ksize;
    c.pad_mode = pad;
    c.w_in = Tensor({4 * hidden, in_ch, ksize, ksize});
    c.w_hid = Tensor({4 * hidden, hidden, ksize, ksize});
    c.bias = Tensor({4 * hidden});
    return c;
  }

  static ConvLSTMCell random(int in_ch, int hidden, RandomStream& rng, int ksize = 3, Pad pad = Pad::periodic,
                             double gain = 1.0) {
    ConvLSTMCell c = zeros(in_ch, hidden, ksize, pad);
    const double s_in = gain / std::sqrt(static_cast<double>(in_ch) * ksize * ksize);
    const double s_hid = gain / std::sqrt(static_cast<double>(hidden) * ksize * ksize);
    c.w_in = Tensor::randn(c.w_in.shape(), rng, s_in);
    c.w_hid = Tensor::randn(c.w_hid.shape(), rng, s_hid);
    // open the forget gate at the start; the other biases stay zero
    for (int i = hidden; i < 2 * hidden; ++i) c.bias[static_cast<std::size_t>(i)] = 1.0;
    return c;
  }

  void collect_params(ParamRefs& refs, const std::string& prefix) {
    refs.add(prefix + ".w_in", w_in);
    refs.add(prefix + ".w_hid", w_hid);
    refs.add(prefix + ".bias", bias);
  }
};

struct LstmState {
  Var h, c;
};

/// One ConvLSTM step. Hidden output is o * tanh(c'), so |h'| < 1 everywhere.
inline LstmState lstm_step(Tape& t, const ConvLSTMCell& cell, const Binding& b, Var input, Var h, Var c) {
  const Tensor& xin = t.val(input);
  NOI_REQUIRE(xin.ndims() == 3 && xin.dim(0) == cell.in_channels, DimensionError,
              "lstm_step: input channels do not match the cell");
  NOI_REQUIRE(t.val(h).dim(0) == cell.hidden_channels && t.val(c).dim(0) == cell.hidden_channels, DimensionError,
              "lstm_step: state channels do not match the cell");
  const int H = xin.dim(1), W = xin.dim(2);
  const int nh = cell.hidden_channels;

  Var pre = t.add(t.add(t.conv2d(input, b.of(cell.w_in), cell.pad_mode), t.conv2d(h, b.of(cell.w_hid), cell.pad_mode)),
                  t.ch_broadcast(b.of(cell.bias), H, W));
  Var gi = t.sigmoid_(t.slice_ch(pre, 0, nh));
  Var gf = t.sigmoid_(t.slice_ch(pre, nh, 2 * nh));
  Var gc = t.tanh_(t.slice_ch(pre, 2 * nh, 3 * nh));
  Var go = t.sigmoid_(t.slice_ch(pre, 3 * nh, 4 * nh));
  Var c_new = t.add(t.mul(gf, c), t.mul(gi, gc));
  Var h_new = t.mul(go, t.tanh_(c_new));
  return LstmState{h_new, c_new};
}

// ---------------------------------------------------------------------------
// Adam.
// ---------------------------------------------------------------------------

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<Tensor> m, v;  // aligned with the parameter list

  static AdamState init(const std::vector<Tensor*>& params, double lr = 1e-3) {
    AdamState s;
    s.lr = lr;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const Tensor* p : params) {
      s.m.push_back(Tensor::zeros_like(*p));
      s.v.push_back(Tensor::zeros_like(*p));
    }
    return s;
  }
};

/// Standard Adam recurrence with bias correction, applied in place.
inline void adam_update(AdamState& state, const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
  NOI_REQUIRE(params.size() == grads.size() && params.size() == state.m.size(), DimensionError,
              "adam_update: parameter/gradient count mismatch");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& w = *params[p];
    const Tensor& g = grads[p];
    NOI_REQUIRE(w.same_shape(g), DimensionError, "adam_update: gradient shape mismatch");
    Tensor& m = state.m[p];
    Tensor& v = state.v[p];
    for (std::size_t i = 0; i < w.numel(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
    w.check_finite("adam_update");
  }
}

}  // namespace noi
