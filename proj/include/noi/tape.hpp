// noi: trainable optimal interpolation for gappy space-time fields.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "noi/sparse.hpp"
#include "noi/tensor.hpp"

namespace noi {

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

// ---------------------------------------------------------------------------
// Tape: define-by-run reverse-mode autodiff over a flat list of nodes.
//
// Every primitive evaluates eagerly and records its parents plus a VJP
// callback. The crucial property: a VJP emits *ordinary tape primitives*, so
// the nodes produced by grad() are themselves differentiable. That is what
// lets a training loss backpropagate through the gradient of the inner
// variational cost computed during an unrolled solve.
//
// Node ids increase with emission order, so reverse id order is a valid
// reverse-topological order and the backward sweep visits each node exactly
// once. Accumulation order is fixed by ids, which makes repeated backward
// passes over identical graphs bit-identical.
// ---------------------------------------------------------------------------

class Tape {
 public:
  // parent_adj starts invalid; the callback fills entries for parents that
  // require gradients. out_id identifies the node being differentiated.
  using VjpFn = std::function<void(Tape&, int out_id, Var adj, std::vector<Var>& parent_adj)>;

  struct Node {
    Tensor value;
    std::vector<int> parents;
    VjpFn vjp;  // empty for leaves / non-differentiable nodes
    bool requires_grad = false;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return nodes_.size(); }

  void clear() { nodes_.clear(); }

  const Tensor& val(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Tensor& val(Var v) const { return val(v.id); }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  Var input(Tensor value, bool requires_grad) {
    value.check_finite("input");
    return push(std::move(value), {}, nullptr, requires_grad);
  }

  Var constant(Tensor value) { return input(std::move(value), false); }

  /// Leaf copy of an existing node: gradients reach it but do not continue
  /// into the graph that produced the value.
  Var detach(Var v) {
    check_mine(v, "detach");
    return push(Tensor(val(v)), {}, nullptr, true);
  }

  // --- elementwise -----------------------------------------------------------

  Var add(Var a, Var b) {
    check_mine(a, "add");
    check_mine(b, "add");
    return push(kern::add(val(a), val(b)), {a.id, b.id},
                [](Tape& t, int, Var adj, std::vector<Var>& pa) {
                  pa[0] = adj;
                  pa[1] = adj;
                });
  }

  Var sub(Var a, Var b) {
    check_mine(a, "sub");
    check_mine(b, "sub");
    return push(kern::sub(val(a), val(b)), {a.id, b.id},
                [](Tape& t, int, Var adj, std::vector<Var>& pa) {
                  pa[0] = adj;
                  pa[1] = t.scale(adj, -1.0);
                });
  }

  Var neg(Var a) { return scale(a, -1.0); }

  Var scale(Var a, double c) {
    check_mine(a, "scale");
    return push(kern::scale(val(a), c), {a.id},
                [c](Tape& t, int, Var adj, std::vector<Var>& pa) { pa[0] = t.scale(adj, c); });
  }

  /// a*x + b elementwise with scalar constants.
  Var affine(Var x, double a, double b) {
    check_mine(x, "affine");
    Tensor out(val(x).shape());
    const Tensor& in = val(x);
    for (std::size_t i = 0; i < in.numel(); ++i) out[i] = a * in[i] + b;
    return push(std::move(out), {x.id},
                [a](Tape& t, int, Var adj, std::vector<Var>& pa) { pa[0] = t.scale(adj, a); });
  }

  Var mul(Var a, Var b) {
    check_mine(a, "mul");
    check_mine(b, "mul");
    return push(kern::mul(val(a), val(b)), {a.id, b.id},
                [](Tape& t, int out_id, Var adj, std::vector<Var>& pa) {
                  const std::vector<int> parents = t.node(out_id).parents;
                  if (t.needs_grad(parents[0])) pa[0] = t.mul(adj, Var{&t, parents[1]});
                  if (t.needs_grad(parents[1])) pa[1] = t.mul(adj, Var{&t, parents[0]});
                });
  }

  /// Elementwise product with a 1-element tensor (e.g. a trainable weight).
  Var scale_by(Var a, Var s) {
    check_mine(a, "scale_by");
    check_mine(s, "scale_by");
    return push(kern::scale_by(val(a), val(s)), {a.id, s.id},
                [](Tape& t, int out_id, Var adj, std::vector<Var>& pa) {
                  const std::vector<int> parents = t.node(out_id).parents;
                  if (t.needs_grad(parents[0])) pa[0] = t.scale_by(adj, Var{&t, parents[1]});
                  if (t.needs_grad(parents[1])) pa[1] = t.sum_all(t.mul(adj, Var{&t, parents[0]}));
                });
  }

  Var exp_(Var a) {
    check_mine(a, "exp");
    return push(kern::exp_(val(a)), {a.id},
                [](Tape& t, int out_id, Var adj, std::vector<Var>& pa) {
                  pa[0] = t.mul(adj, Var{&t, out_id});
                });
  }

  Var tanh_(Var a) {
    check_mine(a, "tanh");
    return push(kern::tanh_(val(a)), {a.id},
                [](Tape& t, int out_id, Var adj, std::vector<Var>& pa) {
                  Var y{&t, out_id};
                  pa[0] = t.mul(adj, t.affine(t.mul(y, y), -1.0, 1.0));
                });
  }

  Var sigmoid_(Var a) {
    check_mine(a, "sigmoid");
    return push(kern::sigmoid_(val(a)), {a.id},
                [](Tape& t, int out_id, Var adj, std::vector<Var>& pa) {
                  Var y{&t, out_id};
                  pa[0] = t.mul(adj, t.mul(y, t.affine(y, -1.0, 1.0)));
                });
  }

  // --- reductions / broadcasts ------------------------------------------------

  Var sum_all(Var a) {
    check_mine(a, "sum_all");
    const std::vector<int> shape = val(a).shape();
    return push(kern::sum_all(val(a)), {a.id},
                [shape](Tape& t, int, Var adj, std::vector<Var>& pa) { pa[0] = t.broadcast(adj, shape); });
  }

  Var broadcast(Var s, const std::vector<int>& shape) {
    check_mine(s, "broadcast");
    return push(kern::broadcast(val(s), shape), {s.id},
                [](Tape& t, int, Var adj, std::vector<Var>& pa) { pa[0] = t.sum_all(adj); });
  }

  // --- channel ops on (C, H, W) -------------------------------------------------

  Var slice_ch(Var a, int c0, int c1) {
    check_mine(a, "slice_ch");
    const int C = val(a).dim(0);
    return push(kern::slice_ch(val(a), c0, c1), {a.id},
                [C, c0](Tape& t, int, Var adj, std::vector<Var>& pa) { pa[0] = t.pad_ch(adj, C, c0); });
  }

  Var pad_ch(Var a, int C, int c0) {
    check_mine(a, "pad_ch");
    const int cn = val(a).dim(0);
    return push(kern::pad_ch(val(a), C, c0), {a.id},
                [c0, cn](Tape& t, int, Var adj, std::vector<Var>& pa) { pa[0] = t.slice_ch(adj, c0, c0 + cn); });
  }

  Var ch_broadcast(Var b, int H, int W) {
    check_mine(b, "ch_broadcast");
    return push(kern::ch_broadcast(val(b), H, W), {b.id},
                [](Tape& t, int, Var adj, std::vector<Var>& pa) { pa[0] = t.ch_sum(adj); });
  }

  Var ch_sum(Var a) {
    check_mine(a, "ch_sum");
    const int H = val(a).dim(1), W = val(a).dim(2);
    return push(kern::ch_sum(val(a)), {a.id},
                [H, W](Tape& t, int, Var adj, std::vector<Var>& pa) { pa[0] = t.ch_broadcast(adj, H, W); });
  }

  // --- 2D convolution family ----------------------------------------------------
  //
  // The three ops form a closed family under adjoints, so gradients of
  // gradients never leave it.

  Var conv2d(Var x, Var k, Pad mode) {
    check_mine(x, "conv2d");
    check_mine(k, "conv2d");
    const int kh = val(k).dim(2), kw = val(k).dim(3);
    return push(kern::conv2d(val(x), val(k), mode), {x.id, k.id},
                [mode, kh, kw](Tape& t, int out_id, Var adj, std::vector<Var>& pa) {
                  const std::vector<int> parents = t.node(out_id).parents;
                  Var xv{&t, parents[0]}, kv{&t, parents[1]};
                  if (t.needs_grad(parents[0])) pa[0] = t.conv2d_adj(adj, kv, mode);
                  if (t.needs_grad(parents[1])) pa[1] = t.conv2d_wgrad(xv, adj, kh, kw, mode);
                });
  }

  Var conv2d_adj(Var u, Var k, Pad mode) {
    check_mine(u, "conv2d_adj");
    check_mine(k, "conv2d_adj");
    const int kh = val(k).dim(2), kw = val(k).dim(3);
    return push(kern::conv2d_adj(val(u), val(k), mode), {u.id, k.id},
                [mode, kh, kw](Tape& t, int out_id, Var adj, std::vector<Var>& pa) {
                  const std::vector<int> parents = t.node(out_id).parents;
                  Var uv{&t, parents[0]}, kv{&t, parents[1]};
                  if (t.needs_grad(parents[0])) pa[0] = t.conv2d(adj, kv, mode);
                  if (t.needs_grad(parents[1])) pa[1] = t.conv2d_wgrad(adj, uv, kh, kw, mode);
                });
  }

  Var conv2d_wgrad(Var x, Var u, int kh, int kw, Pad mode) {
    check_mine(x, "conv2d_wgrad");
    check_mine(u, "conv2d_wgrad");
    return push(kern::conv2d_wgrad(val(x), val(u), kh, kw, mode), {x.id, u.id},
                [mode](Tape& t, int out_id, Var adj, std::vector<Var>& pa) {
                  const std::vector<int> parents = t.node(out_id).parents;
                  Var xv{&t, parents[0]}, uv{&t, parents[1]};
                  if (t.needs_grad(parents[0])) pa[0] = t.conv2d_adj(uv, adj, mode);
                  if (t.needs_grad(parents[1])) pa[1] = t.conv2d(xv, adj, mode);
                });
  }

  // --- circular 3D convolution family --------------------------------------------

  Var circ3(Var x, Var k) {
    check_mine(x, "circ3");
    check_mine(k, "circ3");
    const int kt = val(k).dim(0), kh = val(k).dim(1), kw = val(k).dim(2);
    return push(kern::circ_conv3d(val(x), val(k)), {x.id, k.id},
                [kt, kh, kw](Tape& t, int out_id, Var adj, std::vector<Var>& pa) {
                  const std::vector<int> parents = t.node(out_id).parents;
                  Var xv{&t, parents[0]}, kv{&t, parents[1]};
                  if (t.needs_grad(parents[0])) pa[0] = t.circ3(adj, t.rev3(kv));
                  if (t.needs_grad(parents[1])) pa[1] = t.circ3_wgrad(xv, adj, kt, kh, kw);
                });
  }

  Var rev3(Var k) {
    check_mine(k, "rev3");
    return push(kern::reverse_kernel3(val(k)), {k.id},
                [](Tape& t, int, Var adj, std::vector<Var>& pa) { pa[0] = t.rev3(adj); });
  }

  Var circ3_wgrad(Var x, Var u, int kt, int kh, int kw) {
    check_mine(x, "circ3_wgrad");
    check_mine(u, "circ3_wgrad");
    return push(kern::circ_conv3d_wgrad(val(x), val(u), kt, kh, kw), {x.id, u.id},
                [](Tape& t, int out_id, Var adj, std::vector<Var>& pa) {
                  const std::vector<int> parents = t.node(out_id).parents;
                  Var xv{&t, parents[0]}, uv{&t, parents[1]};
                  if (t.needs_grad(parents[0])) pa[0] = t.circ3(uv, t.rev3(adj));
                  if (t.needs_grad(parents[1])) pa[1] = t.circ3(xv, adj);
                });
  }

  // --- constant sparse matrix times vector ----------------------------------------

  /// y = M x where M is a constant sparse matrix (shape of x preserved;
  /// numel(x) must equal M's column count). mt is M transposed.
  Var sparse_mv(std::shared_ptr<const SparseCsr> m, std::shared_ptr<const SparseCsr> mt, Var x) {
    check_mine(x, "sparse_mv");
    const Tensor& xin = val(x);
    NOI_REQUIRE(static_cast<int>(xin.numel()) == m->cols, DimensionError, "sparse_mv: size mismatch");
    NOI_REQUIRE(m->rows == m->cols, DimensionError, "sparse_mv: only square operators keep tensor shape");
    Tensor out(xin.shape());
    m->apply(xin.data(), out.data());
    return push(std::move(out), {x.id},
                [m, mt](Tape& t, int, Var adj, std::vector<Var>& pa) { pa[0] = t.sparse_mv(mt, m, adj); });
  }

  // --- composites -------------------------------------------------------------------

  Var dot(Var a, Var b) { return sum_all(mul(a, b)); }
  Var sqnorm(Var a) { return sum_all(mul(a, a)); }

  // --- backward ----------------------------------------------------------------------

  /// Reverse sweep from a scalar root. Returns one gradient node per entry of
  /// wrt (zero tensors for parameters the root does not depend on). The
  /// returned nodes are ordinary tape values and can be differentiated again.
  std::vector<Var> grad(Var root, const std::vector<Var>& wrt) {
    check_mine(root, "grad");
    NOI_REQUIRE(val(root).numel() == 1, ContractError, "grad: root must be a scalar");
    int min_id = root.id;
    for (Var w : wrt) {
      check_mine(w, "grad wrt");
      min_id = std::min(min_id, w.id);
    }
    // adj[i] = node id of accumulated adjoint of node i, or -1
    std::vector<int> adj(static_cast<std::size_t>(root.id) + 1, -1);
    adj[static_cast<std::size_t>(root.id)] = constant(Tensor::scalar(1.0)).id;

    std::vector<Var> parent_adj;
    for (int i = root.id; i >= min_id; --i) {
      const int a_id = adj[static_cast<std::size_t>(i)];
      if (a_id < 0) continue;
      if (!nodes_[static_cast<std::size_t>(i)].vjp || !nodes_[static_cast<std::size_t>(i)].requires_grad) continue;
      // Copy: the callback emits nodes, which can reallocate the node store.
      const std::vector<int> parents = nodes_[static_cast<std::size_t>(i)].parents;
      const VjpFn vjp = nodes_[static_cast<std::size_t>(i)].vjp;
      parent_adj.assign(parents.size(), Var{});
      vjp(*this, i, Var{this, a_id}, parent_adj);
      for (std::size_t p = 0; p < parents.size(); ++p) {
        if (!parent_adj[p].valid()) continue;
        const int pid = parents[p];
        int& slot = adj[static_cast<std::size_t>(pid)];
        slot = (slot < 0) ? parent_adj[p].id : add(Var{this, slot}, parent_adj[p]).id;
      }
    }

    std::vector<Var> out;
    out.reserve(wrt.size());
    for (Var w : wrt) {
      const int a_id = adj[static_cast<std::size_t>(w.id)];
      out.push_back(a_id >= 0 ? Var{this, a_id} : constant(Tensor::zeros_like(val(w))));
    }
    return out;
  }

  /// Single-target convenience.
  Var grad(Var root, Var wrt) { return grad(root, std::vector<Var>{wrt})[0]; }

 private:
  void check_mine(Var v, const char* op) {
    NOI_REQUIRE(v.tape == this && v.id >= 0 && v.id < static_cast<int>(nodes_.size()), ContractError,
                std::string(op) + ": var does not belong to this tape");
  }

  Var push(Tensor value, std::vector<int> parents, VjpFn vjp, bool requires_grad_leaf = false) {
    value.check_finite("tape op");
    bool rg = requires_grad_leaf;
    for (int p : parents) rg = rg || nodes_[static_cast<std::size_t>(p)].requires_grad;
    nodes_.push_back(Node{std::move(value), std::move(parents), std::move(vjp), rg});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
};

/// Pack a square SparseCsr with its transpose for use with Tape::sparse_mv.
struct SparseOp {
  std::shared_ptr<const SparseCsr> m, mt;
  explicit SparseOp(SparseCsr mat) {
    auto t = std::make_shared<SparseCsr>(mat.transposed());
    m = std::make_shared<const SparseCsr>(std::move(mat));
    mt = std::move(t);
  }
  Var apply(Tape& t, Var x) const { return t.sparse_mv(m, mt, x); }
};

}  // namespace noi
