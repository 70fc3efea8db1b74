#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "vagram/tensor.hpp"

namespace vagram::ad {

using Id = int;

// Reverse-mode tape. Records every primitive op in execution order, which is
// a topological order by construction (inputs always precede their node).
// A tape is single-owner while recording; independent tapes are independent.
class Tape {
 public:
  enum class Op {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    Min,
    AddRow,
    Scale,
    AddScalar,
    Tanh,
    Relu,
    Silu,
    Sin,
    Cos,
    Exp,
    Log,
    Square,
    Clip,
    Sum,
    Mean,
    RowSum,
    ConcatCols,
    SliceCols,
  };

  struct Node {
    Op op;
    Id a = -1;
    Id b = -1;
    double p0 = 0.0;
    double p1 = 0.0;
    Tensor value;
    bool requires_grad = false;
  };

  // Gradient map produced by backward(): one slot per tape node, populated
  // for nodes on a gradient path; leaves that require gradients but were
  // never reached read back as zeros.
  class GradMap {
   public:
    GradMap(const Tape& tape, std::vector<Tensor> grads) : tape_(&tape), grads_(std::move(grads)) {}

    // Gradient of the backward root with respect to node `id`.
    Tensor at(Id id) const {
      const Node& n = tape_->node(id);
      if (!n.requires_grad)
        throw Error("GradMap::at: node " + std::to_string(id) + " does not require gradients");
      if (grads_[static_cast<std::size_t>(id)].size() == 0) return Tensor::zeros(n.value.shape());
      return grads_[static_cast<std::size_t>(id)];
    }

   private:
    const Tape* tape_;
    std::vector<Tensor> grads_;
  };

  std::size_t size() const { return nodes_.size(); }

  const Node& node(Id id) const { return nodes_[static_cast<std::size_t>(id)]; }

  const Tensor& value(Id id) const { return nodes_[static_cast<std::size_t>(id)].value; }

  bool requires_grad(Id id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  Id leaf(Tensor v, bool requires_grad = false) {
    return push(Op::Leaf, -1, -1, 0.0, 0.0, std::move(v), requires_grad);
  }

  Id constant(Tensor v) { return leaf(std::move(v), false); }

  Id matmul(Id a, Id b) { return binary(Op::MatMul, a, b, tensor_ops::matmul(value(a), value(b))); }
  Id add(Id a, Id b) { return binary(Op::Add, a, b, tensor_ops::add(value(a), value(b))); }
  Id sub(Id a, Id b) { return binary(Op::Sub, a, b, tensor_ops::sub(value(a), value(b))); }
  Id mul(Id a, Id b) { return binary(Op::Mul, a, b, tensor_ops::mul(value(a), value(b))); }
  Id min(Id a, Id b) { return binary(Op::Min, a, b, tensor_ops::minimum(value(a), value(b))); }
  Id add_row(Id a, Id b) { return binary(Op::AddRow, a, b, tensor_ops::add_row(value(a), value(b))); }

  Id concat_cols(Id a, Id b) {
    return binary(Op::ConcatCols, a, b, tensor_ops::concat_cols(value(a), value(b)));
  }

  Id scale(Id a, double k) {
    check_id(a);
    return push(Op::Scale, a, -1, k, 0.0, tensor_ops::scale(value(a), k), requires_grad(a));
  }

  Id add_scalar(Id a, double k) {
    check_id(a);
    return push(Op::AddScalar, a, -1, k, 0.0, tensor_ops::add_scalar(value(a), k), requires_grad(a));
  }

  Id tanh(Id a) { return unary(Op::Tanh, a, tensor_ops::map(value(a), [](double x) { return std::tanh(x); })); }

  // Subgradient at 0 is 0.
  Id relu(Id a) { return unary(Op::Relu, a, tensor_ops::map(value(a), [](double x) { return x > 0.0 ? x : 0.0; })); }

  Id silu(Id a) { return unary(Op::Silu, a, tensor_ops::map(value(a), tensor_ops::silu)); }
  Id sin(Id a) { return unary(Op::Sin, a, tensor_ops::map(value(a), [](double x) { return std::sin(x); })); }
  Id cos(Id a) { return unary(Op::Cos, a, tensor_ops::map(value(a), [](double x) { return std::cos(x); })); }
  Id exp(Id a) { return unary(Op::Exp, a, tensor_ops::map(value(a), [](double x) { return std::exp(x); })); }
  Id log(Id a) { return unary(Op::Log, a, tensor_ops::map(value(a), [](double x) { return std::log(x); })); }
  Id square(Id a) { return unary(Op::Square, a, tensor_ops::map(value(a), [](double x) { return x * x; })); }

  Id clip(Id a, double lo, double hi) {
    check_id(a);
    return push(Op::Clip, a, -1, lo, hi, tensor_ops::clip(value(a), lo, hi), requires_grad(a));
  }

  Id sum(Id a) { return unary(Op::Sum, a, tensor_ops::sum(value(a))); }
  Id mean(Id a) { return unary(Op::Mean, a, tensor_ops::mean(value(a))); }
  Id row_sum(Id a) { return unary(Op::RowSum, a, tensor_ops::row_sum(value(a))); }

  Id slice_cols(Id a, int c0, int c1) {
    check_id(a);
    return push(Op::SliceCols, a, -1, c0, c1, tensor_ops::slice_cols(value(a), c0, c1), requires_grad(a));
  }

  // Reverse pass from a scalar root. Returns d(root)/d(node) for every node
  // that requires gradients; each recorded node is processed at most once.
  GradMap backward(Id root) const {
    check_id(root);
    if (!value(root).is_scalar())
      throw ShapeError("backward: root must be scalar, got shape " + value(root).shape_str());
    std::vector<Tensor> bar(nodes_.size());
    if (requires_grad(root)) bar[static_cast<std::size_t>(root)] = Tensor::ones(value(root).shape());
    for (Id i = root; i >= 0; --i) {
      const Node& n = nodes_[static_cast<std::size_t>(i)];
      Tensor& g = bar[static_cast<std::size_t>(i)];
      if (!n.requires_grad || g.size() == 0 || n.op == Op::Leaf) continue;
      propagate(n, g, bar);
    }
    return GradMap(*this, std::move(bar));
  }

 private:
  std::vector<Node> nodes_;

  void check_id(Id id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
      throw Error("Tape: invalid node id " + std::to_string(id));
  }

  Id push(Op op, Id a, Id b, double p0, double p1, Tensor value, bool rg) {
    Node n{op, a, b, p0, p1, std::move(value), rg};
    if (!n.value.all_finite())
      throw NonFiniteError("non-finite output of " + op_name(op) + " at node " +
                           std::to_string(nodes_.size()));
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size()) - 1;
  }

  Id unary(Op op, Id a, Tensor out) {
    check_id(a);
    return push(op, a, -1, 0.0, 0.0, std::move(out), requires_grad(a));
  }

  Id binary(Op op, Id a, Id b, Tensor out) {
    check_id(a);
    check_id(b);
    return push(op, a, b, 0.0, 0.0, std::move(out), requires_grad(a) || requires_grad(b));
  }

  static void accumulate(Tensor& slot, const Tensor& delta) {
    if (slot.size() == 0)
      slot = delta;
    else
      slot = tensor_ops::add(slot, delta);
  }

  void add_to_input(Id input, Tensor delta, std::vector<Tensor>& bar) const {
    if (input < 0) return;
    if (!requires_grad(input)) return;
    accumulate(bar[static_cast<std::size_t>(input)], delta);
  }

  void propagate(const Node& n, const Tensor& g, std::vector<Tensor>& bar) const {
        const Tensor* av = n.a >= 0 ? &value(n.a) : nullptr;
    const Tensor* bv = n.b >= 0 ? &value(n.b) : nullptr;
    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::MatMul:
        add_to_input(n.a, tensor_ops::matmul_nt(g, *bv), bar);
        add_to_input(n.b, tensor_ops::matmul_tn(*av, g), bar);
        break;
      case Op::Add:
        add_to_input(n.a, g, bar);
        add_to_input(n.b, g, bar);
        break;
      case Op::Sub:
        add_to_input(n.a, g, bar);
        add_to_input(n.b, tensor_ops::scale(g, -1.0), bar);
        break;
      case Op::Mul:
        add_to_input(n.a, tensor_ops::mul(g, *bv), bar);
        add_to_input(n.b, tensor_ops::mul(g, *av), bar);
        break;
      case Op::Min: {
        Tensor ga = g, gb = g;
        for (long i = 0; i < g.size(); ++i) {
          if ((*av)[i] <= (*bv)[i])
            gb[i] = 0.0;
          else
            ga[i] = 0.0;
        }
        add_to_input(n.a, ga, bar);
        add_to_input(n.b, gb, bar);
        break;
      }
      case Op::AddRow: {
        add_to_input(n.a, g, bar);
        if (n.b >= 0 && requires_grad(n.b)) {
          Tensor gb = tensor_ops::col_sum(g);
          add_to_input(n.b, Tensor(bv->shape(), gb.raw()), bar);
        }
        break;
      }
      case Op::Scale:
        add_to_input(n.a, tensor_ops::scale(g, n.p0), bar);
        break;
      case Op::AddScalar:
        add_to_input(n.a, g, bar);
        break;
      case Op::Tanh: {
        Tensor d = n.value;
        for (long i = 0; i < d.size(); ++i) d[i] = g[i] * (1.0 - d[i] * d[i]);
        add_to_input(n.a, d, bar);
        break;
      }
      case Op::Relu: {
        Tensor d = g;
        for (long i = 0; i < d.size(); ++i)
          if ((*av)[i] <= 0.0) d[i] = 0.0;
        add_to_input(n.a, d, bar);
        break;
      }
      case Op::Silu: {
        Tensor d = g;
        for (long i = 0; i < d.size(); ++i) d[i] *= tensor_ops::silu_grad((*av)[i]);
        add_to_input(n.a, d, bar);
        break;
      }
      case Op::Sin: {
        Tensor d = g;
        for (long i = 0; i < d.size(); ++i) d[i] *= std::cos((*av)[i]);
        add_to_input(n.a, d, bar);
        break;
      }
      case Op::Cos: {
        Tensor d = g;
        for (long i = 0; i < d.size(); ++i) d[i] *= -std::sin((*av)[i]);
        add_to_input(n.a, d, bar);
        break;
      }
      case Op::Exp: {
        Tensor d = g;
        for (long i = 0; i < d.size(); ++i) d[i] *= n.value[i];
        add_to_input(n.a, d, bar);
        break;
      }
      case Op::Log: {
        Tensor d = g;
        for (long i = 0; i < d.size(); ++i) d[i] /= (*av)[i];
        add_to_input(n.a, d, bar);
        break;
      }
      case Op::Square: {
        Tensor d = g;
        for (long i = 0; i < d.size(); ++i) d[i] *= 2.0 * (*av)[i];
        add_to_input(n.a, d, bar);
        break;
      }
      case Op::Clip: {
        Tensor d = g;
        for (long i = 0; i < d.size(); ++i) {
          const double x = (*av)[i];
          if (x < n.p0 || x > n.p1) d[i] = 0.0;
        }
        add_to_input(n.a, d, bar);
        break;
      }
      case Op::Sum:
        add_to_input(n.a, Tensor::full(av->shape(), g.value()), bar);
        break;
      case Op::Mean:
        add_to_input(n.a, Tensor::full(av->shape(), g.value() / static_cast<double>(av->size())), bar);
        break;
      case Op::RowSum: {
        const int m = av->rows(), cN = av->cols();
        Tensor d(av->shape());
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < cN; ++j) d[static_cast<long>(i) * cN + j] = g[i];
        add_to_input(n.a, d, bar);
        break;
      }
      case Op::ConcatCols: {
        add_to_input(n.a, tensor_ops::slice_cols(g, 0, av->cols()), bar);
        add_to_input(n.b, tensor_ops::slice_cols(g, av->cols(), av->cols() + bv->cols()), bar);
        break;
      }
      case Op::SliceCols: {
        if (!requires_grad(n.a)) break;
        Tensor d(av->shape());
        const int c0 = static_cast<int>(n.p0), c1 = static_cast<int>(n.p1);
        for (int i = 0; i < av->rows(); ++i)
          for (int j = c0; j < c1; ++j) d.at(i, j) = g.at(i, j - c0);
        add_to_input(n.a, d, bar);
        break;
      }
    }
  }

  static std::string op_name(Op op) {
    switch (op) {
      case Op::Leaf: return "leaf";
      case Op::MatMul: return "matmul";
      case Op::Add: return "add";
      case Op::Sub: return "sub";
      case Op::Mul: return "mul";
      case Op::Min: return "min";
      case Op::AddRow: return "add_row";
      case Op::Scale: return "scale";
      case Op::AddScalar: return "add_scalar";
      case Op::Tanh: return "tanh";
      case Op::Relu: return "relu";
      case Op::Silu: return "silu";
      case Op::Sin: return "sin";
      case Op::Cos: return "cos";
      case Op::Exp: return "exp";
      case Op::Log: return "log";
      case Op::Square: return "square";
      case Op::Clip: return "clip";
      case Op::Sum: return "sum";
      case Op::Mean: return "mean";
      case Op::RowSum: return "row_sum";
      case Op::ConcatCols: return "concat_cols";
      case Op::SliceCols: return "slice_cols";
    }
    return "?";
  }
};

// Gradient of a scalar-valued function with respect to its input tensor.
// `fn` records the function on the given tape and returns the output id.
// Anything `fn` captures enters the tape as non-gradient leaves, so no
// parameter gradients accumulate.
inline Tensor grad_wrt_input(const std::function<Id(Tape&, Id)>& fn, const Tensor& input) {
  Tape tape;
  const Tensor batched =
      input.rank() == 2 ? input : Tensor({1, static_cast<int>(input.size())}, input.raw());
  const Id x = tape.leaf(batched, true);
  const Id out = fn(tape, x);
  if (!tape.value(out).is_scalar())
    throw ShapeError("grad_wrt_input: function output must be scalar, got shape " +
                     tape.value(out).shape_str());
  const Tensor g = tape.backward(out).at(x);
  return Tensor(input.shape(), g.raw());
}

}  // namespace vagram::ad
