#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "vagram/autodiff.hpp"
#include "vagram/tensor.hpp"

namespace vagram {

// A differentiable state-value function. apply() records V over a batch of
// states [B, d] and returns a [B, 1] node; gradients with respect to the
// states flow, parameters inside the implementation never accumulate any.
class ValueFn {
 public:
  virtual ~ValueFn() = default;

  virtual ad::Id apply(ad::Tape& tape, ad::Id states) const = 0;

  Tensor evaluate(const Tensor& states) const {
    ad::Tape tape;
    const ad::Id out = apply(tape, tape.constant(as_batch(states)));
    return tape.value(out);
  }

  double evaluate_one(const std::vector<double>& state) const {
    return evaluate(Tensor::row(state)).value();
  }

  static Tensor as_batch(const Tensor& t) {
    return t.rank() == 2 ? t : Tensor({1, static_cast<int>(t.size())}, t.raw());
  }
};

// The set of state-value evaluators whose gradients feed the model losses.
using ValueBundle = std::vector<std::shared_ptr<const ValueFn>>;

// Wraps a plain tape-recording function as a ValueFn; used by tests and by
// analytically defined value functions.
class FnValue : public ValueFn {
 public:
  explicit FnValue(std::function<ad::Id(ad::Tape&, ad::Id)> fn) : fn_(std::move(fn)) {}
  ad::Id apply(ad::Tape& tape, ad::Id states) const override { return fn_(tape, states); }

 private:
  std::function<ad::Id(ad::Tape&, ad::Id)> fn_;
};

// V(s) = w^T s + b applied row-wise.
class LinearValue : public ValueFn {
 public:
  LinearValue(std::vector<double> w, double b = 0.0) : w_(std::move(w)), b_(b) {}

  ad::Id apply(ad::Tape& tape, ad::Id states) const override {
    const ad::Id w = tape.constant(Tensor({static_cast<int>(w_.size()), 1}, w_));
    return tape.add_scalar(tape.matmul(states, w), b_);
  }

 private:
  std::vector<double> w_;
  double b_;
};

// Per-sample gradients d V / d s at every row of `states`: one forward and
// one reverse pass, exploiting that batch rows are independent.
inline Tensor per_sample_value_gradients(const ValueFn& v, const Tensor& states) {
  ad::Tape tape;
  const ad::Id s = tape.leaf(ValueFn::as_batch(states), true);
  const ad::Id out = v.apply(tape, s);
  const ad::Id root = tape.sum(out);
  const Tensor g = tape.backward(root).at(s);
  if (!g.all_finite()) throw NonFiniteError("per_sample_value_gradients: non-finite gradient");
  return g;
}

// Gradient rows for every value function in the bundle: result[v] is the
// [B, d] matrix of per-sample gradients of bundle entry v.
inline std::vector<Tensor> value_gradients(const ValueBundle& bundle, const Tensor& states) {
  if (states.rows() == 0) throw Error("value_gradients: empty batch");
  std::vector<Tensor> out;
  out.reserve(bundle.size());
  for (const auto& v : bundle) out.push_back(per_sample_value_gradients(*v, states));
  return out;
}

}  // namespace vagram
