#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "vagram/autodiff.hpp"
#include "vagram/nn.hpp"
#include "vagram/sac.hpp"
#include "vagram/value_fn.hpp"

namespace vagram::loss {

enum class LossKind {
  Mse,
  Nll,
  IterVaml,
  IterVamlMse,
  TaylorVaml,
  Vagram,
  VagramBound,
  ValueWeightedMse,
  SacVaml,
};

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::Mse: return "mse";
    case LossKind::Nll: return "nll";
    case LossKind::IterVaml: return "itervaml";
    case LossKind::IterVamlMse: return "itervaml_mse";
    case LossKind::TaylorVaml: return "taylor_vaml";
    case LossKind::Vagram: return "vagram";
    case LossKind::VagramBound: return "vagram_bound";
    case LossKind::ValueWeightedMse: return "value_weighted_mse";
    case LossKind::SacVaml: return "sac_vaml";
  }
  return "?";
}

inline LossKind loss_kind_from_string(const std::string& s) {
  if (s == "mse") return LossKind::Mse;
  if (s == "nll") return LossKind::Nll;
  if (s == "itervaml") return LossKind::IterVaml;
  if (s == "itervaml_mse") return LossKind::IterVamlMse;
  if (s == "taylor_vaml") return LossKind::TaylorVaml;
  if (s == "vagram") return LossKind::Vagram;
  if (s == "vagram_bound") return LossKind::VagramBound;
  if (s == "value_weighted_mse") return LossKind::ValueWeightedMse;
  if (s == "sac_vaml") return LossKind::SacVaml;
  throw ConfigError("unknown loss kind: " + s);
}

// Tagged choice of model loss with its hyperparameters.
struct LossSpec {
  LossKind kind = LossKind::Mse;
  double lambda = 0.01;                    // itervaml_mse tradeoff factor
  double bound_m = 1.0;                    // vagram_bound curvature constant M
  int sac_k = 4;                           // sac_vaml action samples per state
  std::optional<double> clip_percentile;   // in (0, 100]; gradient-norm clipping
  std::vector<int> vf_indices{0};          // bundle entries the loss sums over

  void validate() const {
    if (lambda < 0.0) throw ConfigError("LossSpec: lambda must be >= 0");
    if (bound_m < 0.0) throw ConfigError("LossSpec: M must be >= 0");
    if (sac_k < 1) throw ConfigError("LossSpec: K must be >= 1");
    if (clip_percentile && !(*clip_percentile > 0.0 && *clip_percentile <= 100.0))
      throw ConfigError("LossSpec: clip percentile must be in (0, 100]");
    if (vf_indices.empty()) throw ConfigError("LossSpec: vf_indices must be nonempty");
  }

  bool uses_gradients() const {
    return kind == LossKind::TaylorVaml || kind == LossKind::Vagram || kind == LossKind::VagramBound;
  }

  bool uses_values() const {
    return kind == LossKind::IterVaml || kind == LossKind::IterVamlMse ||
           kind == LossKind::ValueWeightedMse || kind == LossKind::SacVaml;
  }
};

// ---------------------------------------------------------------------------
// Tape builders. f_pred is a live node; s' and gradient rows enter as
// constants. Every loss is the mean over batch rows of a per-sample term.

inline ad::Id mse_term(ad::Tape& t, ad::Id f_pred, ad::Id sp) {
  return t.mean(t.row_sum(t.square(t.sub(f_pred, sp))));
}

// (V(s'_i) - V(f_i))^2 with V(s') precomputed.
inline ad::Id itervaml_term(ad::Tape& t, const ValueFn& v, ad::Id f_pred, ad::Id v_sp) {
  const ad::Id v_f = v.apply(t, f_pred);
  return t.mean(t.square(t.sub(v_sp, v_f)));
}

// (g_i^T (f_i - s'_i))^2.
inline ad::Id taylor_vaml_term(ad::Tape& t, ad::Id g, ad::Id f_pred, ad::Id sp) {
  return t.mean(t.square(t.row_sum(t.mul(g, t.sub(f_pred, sp)))));
}

// sum_d g_{i,d}^2 (f_{i,d} - s'_{i,d})^2; the dim(S) constant is dropped.
inline ad::Id vagram_term(ad::Tape& t, ad::Id g, ad::Id f_pred, ad::Id sp) {
  return t.mean(t.row_sum(t.mul(t.square(g), t.square(t.sub(f_pred, sp)))));
}

// 2 (g_i^T d_i)^2 + (M^2 / 2) ||d_i||^4.
inline ad::Id vagram_bound_term(ad::Tape& t, ad::Id g, ad::Id f_pred, ad::Id sp, double m) {
  const ad::Id d = t.sub(f_pred, sp);
  const ad::Id first = t.scale(t.square(t.row_sum(t.mul(g, d))), 2.0);
  const ad::Id second = t.scale(t.square(t.row_sum(t.square(d))), m * m / 2.0);
  return t.mean(t.add(first, second));
}

// w_i ||d_i||^2 with w_i = 1 / (|V(s'_i)| + eps) as constant weights.
inline ad::Id value_weighted_mse_term(ad::Tape& t, ad::Id weights, ad::Id f_pred, ad::Id sp) {
  return t.mean(t.mul(weights, t.row_sum(t.square(t.sub(f_pred, sp)))));
}

constexpr double kValueWeightEps = 1e-6;

inline Tensor value_weights(const ValueFn& v, const Tensor& sp) {
  Tensor w = v.evaluate(sp);
  for (long i = 0; i < w.size(); ++i) w[i] = 1.0 / (std::fabs(w[i]) + kValueWeightEps);
  return w;
}

// Monte-Carlo entropy-like estimate H(s) = (1/K) sum_k log pi(a_k|s) with
// a_k reparameterized through the supplied noise tensors, recorded on tape.
inline ad::Id entropy_estimate(ad::Tape& t, const sac::SacAgent& agent, ad::Id states,
                               const std::vector<Tensor>& noise) {
  ad::Id acc = -1;
  for (const Tensor& xi : noise) {
    const ad::Id lp = agent.policy_log_prob_with_noise(t, states, xi, false, nullptr).log_prob;
    acc = acc < 0 ? lp : t.add(acc, lp);
  }
  return t.scale(acc, 1.0 / static_cast<double>(noise.size()));
}

// |V(s') - V(f) - (H(s') - H(f))|^2. The two entropy estimates share the
// same noise draws so an exact model yields exactly zero loss.
inline ad::Id sac_vaml_term(ad::Tape& t, const sac::SacAgent& agent, const ValueFn& v, ad::Id f_pred,
                            ad::Id sp, ad::Id v_sp, int k, Rng& rng) {
  const int b = t.value(sp).rows();
  std::vector<Tensor> noise;
  noise.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    Tensor xi({b, agent.action_dim()});
    for (long j = 0; j < xi.size(); ++j) xi[j] = rng.normal();
    noise.push_back(std::move(xi));
  }
  const ad::Id v_f = v.apply(t, f_pred);
  const ad::Id h_sp = entropy_estimate(t, agent, sp, noise);
  const ad::Id h_f = entropy_estimate(t, agent, f_pred, noise);
  const ad::Id diff = t.sub(t.sub(v_sp, v_f), t.sub(h_sp, h_f));
  return t.mean(t.square(diff));
}

// ---------------------------------------------------------------------------
// Eager entry points (tests, held-out evaluation, loss surfaces).

inline ad::Id constant_batch(ad::Tape& t, const Tensor& x) { return t.constant(ValueFn::as_batch(x)); }

inline double mse_loss(const Tensor& f_pred, const Tensor& sp) {
  ad::Tape t;
  return t.value(mse_term(t, constant_batch(t, f_pred), constant_batch(t, sp))).value();
}

inline double itervaml_loss(const ValueFn& v, const Tensor& f_pred, const Tensor& sp) {
  ad::Tape t;
  const ad::Id v_sp = t.constant(v.evaluate(sp));
  return t.value(itervaml_term(t, v, constant_batch(t, f_pred), v_sp)).value();
}

inline double taylor_vaml_loss(const Tensor& g, const Tensor& f_pred, const Tensor& sp) {
  ad::Tape t;
  return t.value(taylor_vaml_term(t, constant_batch(t, g), constant_batch(t, f_pred), constant_batch(t, sp)))
      .value();
}

inline double vagram_loss(const Tensor& g, const Tensor& f_pred, const Tensor& sp) {
  ad::Tape t;
  return t.value(vagram_term(t, constant_batch(t, g), constant_batch(t, f_pred), constant_batch(t, sp)))
      .value();
}

inline double vagram_bound_loss(const Tensor& g, const Tensor& f_pred, const Tensor& sp, double m) {
  ad::Tape t;
  return t
      .value(vagram_bound_term(t, constant_batch(t, g), constant_batch(t, f_pred), constant_batch(t, sp), m))
      .value();
}

inline double itervaml_mse_loss(const ValueFn& v, const Tensor& f_pred, const Tensor& sp, double lambda) {
  return itervaml_loss(v, f_pred, sp) + lambda * mse_loss(f_pred, sp);
}

inline double value_weighted_mse_loss(const ValueFn& v, const Tensor& f_pred, const Tensor& sp) {
  ad::Tape t;
  const ad::Id w = t.constant(value_weights(v, ValueFn::as_batch(sp)));
  return t.value(value_weighted_mse_term(t, w, constant_batch(t, f_pred), constant_batch(t, sp))).value();
}

inline double sac_vaml_loss(const sac::SacAgent& agent, const ValueFn& v, const Tensor& f_pred,
                            const Tensor& sp, int k, Rng& rng) {
  ad::Tape t;
  const ad::Id v_sp = t.constant(v.evaluate(sp));
  return t
      .value(sac_vaml_term(t, agent, v, constant_batch(t, f_pred), constant_batch(t, sp), v_sp, k, rng))
      .value();
}

// ---------------------------------------------------------------------------
// Gradient preprocessing.

struct ClippedGradients {
  Tensor grads;
  double threshold = 0.0;
};

// Clips per-sample gradient rows at the nearest-rank p-th percentile of
// their L2 norms within the batch. Rows at or below the threshold are left
// bit-identical.
inline ClippedGradients clip_gradients(const Tensor& grads, double percentile) {
  const Tensor g = ValueFn::as_batch(grads);
  if (g.rows() == 0) throw Error("clip_gradients: empty input");
  const int b = g.rows(), d = g.cols();
  std::vector<double> norms(static_cast<std::size_t>(b));
  for (int i = 0; i < b; ++i) norms[static_cast<std::size_t>(i)] = tensor_ops::l2_norm(g.data() + static_cast<long>(i) * d, d);
  const double threshold = percentile_nearest_rank(norms, percentile);
  ClippedGradients out{g, threshold};
  for (int i = 0; i < b; ++i) {
    const double n = norms[static_cast<std::size_t>(i)];
    if (n > threshold && n > 0.0) {
      const double s = threshold / n;
      for (int j = 0; j < d; ++j) out.grads.at(i, j) *= s;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// A training batch with everything the loss needs precomputed: per-sample
// per-VF gradient rows (already clipped) and per-VF values at s'.

struct PreparedBatch {
  Tensor s, a, sp;
  std::vector<Tensor> grads;               // aligned with spec.vf_indices
  std::vector<double> clip_thresholds;     // aligned with grads; empty if no clipping
  std::vector<Tensor> values_sp;           // V(s') per selected VF
  std::vector<Tensor> weights;             // value_weighted_mse weights per VF
};

inline PreparedBatch prepare_batch(const LossSpec& spec, const ValueBundle& bundle, const Tensor& s,
                                   const Tensor& a, const Tensor& sp) {
  spec.validate();
  for (int idx : spec.vf_indices)
    if (idx < 0 || static_cast<std::size_t>(idx) >= bundle.size())
      throw ConfigError("prepare_batch: vf index " + std::to_string(idx) + " outside bundle of size " +
                        std::to_string(bundle.size()));
  PreparedBatch pb;
  pb.s = ValueFn::as_batch(s);
  pb.a = ValueFn::as_batch(a);
  pb.sp = ValueFn::as_batch(sp);
  for (int idx : spec.vf_indices) {
    const ValueFn& v = *bundle[static_cast<std::size_t>(idx)];
    if (spec.uses_gradients()) {
      Tensor g = per_sample_value_gradients(v, pb.sp);
      if (spec.clip_percentile) {
        ClippedGradients cg = clip_gradients(g, *spec.clip_percentile);
        pb.grads.push_back(std::move(cg.grads));
        pb.clip_thresholds.push_back(cg.threshold);
      } else {
        pb.grads.push_back(std::move(g));
      }
    }
    if (spec.kind == LossKind::IterVaml || spec.kind == LossKind::IterVamlMse ||
        spec.kind == LossKind::SacVaml)
      pb.values_sp.push_back(v.evaluate(pb.sp));
    if (spec.kind == LossKind::ValueWeightedMse) pb.weights.push_back(value_weights(v, pb.sp));
  }
  return pb;
}

// Sum of the per-VF losses over the selected value functions, recorded on
// the tape against a live model prediction node.
inline ad::Id multi_vf_loss(ad::Tape& t, const LossSpec& spec, const ValueBundle& bundle,
                            const PreparedBatch& pb, ad::Id f_pred, const sac::SacAgent* agent = nullptr,
                            Rng* rng = nullptr) {
  spec.validate();
  if (spec.kind == LossKind::Nll)
    throw ConfigError("multi_vf_loss: nll is an ensemble likelihood, not a prediction loss");
  const ad::Id sp = t.constant(pb.sp);
  ad::Id total = -1;
  auto accumulate = [&](ad::Id term) { total = total < 0 ? term : t.add(total, term); };
  for (std::size_t vi = 0; vi < spec.vf_indices.size(); ++vi) {
    const ValueFn& v = *bundle[static_cast<std::size_t>(spec.vf_indices[vi])];
    switch (spec.kind) {
      case LossKind::Mse:
        accumulate(mse_term(t, f_pred, sp));
        break;
      case LossKind::IterVaml:
        accumulate(itervaml_term(t, v, f_pred, t.constant(pb.values_sp[vi])));
        break;
      case LossKind::IterVamlMse: {
        const ad::Id iv = itervaml_term(t, v, f_pred, t.constant(pb.values_sp[vi]));
        accumulate(t.add(iv, t.scale(mse_term(t, f_pred, sp), spec.lambda)));
        break;
      }
      case LossKind::TaylorVaml:
        accumulate(taylor_vaml_term(t, t.constant(pb.grads[vi]), f_pred, sp));
        break;
      case LossKind::Vagram:
        accumulate(vagram_term(t, t.constant(pb.grads[vi]), f_pred, sp));
        break;
      case LossKind::VagramBound:
        accumulate(vagram_bound_term(t, t.constant(pb.grads[vi]), f_pred, sp, spec.bound_m));
        break;
      case LossKind::ValueWeightedMse:
        accumulate(value_weighted_mse_term(t, t.constant(pb.weights[vi]), f_pred, sp));
        break;
      case LossKind::SacVaml: {
        if (!agent || !rng) throw ConfigError("multi_vf_loss: sac_vaml needs the agent and an RNG");
        accumulate(sac_vaml_term(t, *agent, v, f_pred, sp, t.constant(pb.values_sp[vi]), spec.sac_k, *rng));
        break;
      }
      case LossKind::Nll:
        break;
    }
  }
  return total;
}

// Held-out VAML error: mean (V(s') - V(f(s,a)))^2, pure evaluation.
inline double eval_vaml_error(const ValueFn& v, const nn::DeterministicModel& model,
                              const Tensor& s, const Tensor& a, const Tensor& sp) {
  if (sp.rows() == 0) throw Error("eval_vaml_error: empty held-out set");
  const Tensor f = model.predict(s, a);
  const Tensor v_sp = v.evaluate(sp);
  const Tensor v_f = v.evaluate(f);
  double acc = 0.0;
  for (long i = 0; i < v_sp.size(); ++i) {
    const double d = v_sp[i] - v_f[i];
    acc += d * d;
  }
  return acc / static_cast<double>(v_sp.size());
}

}  // namespace vagram::loss
