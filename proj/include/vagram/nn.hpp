#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "vagram/autodiff.hpp"
#include "vagram/common.hpp"
#include "vagram/tensor.hpp"

namespace vagram::nn {

enum class Activation { Relu, Silu, Tanh };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Silu: return "silu";
    case Activation::Tanh: return "tanh";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "silu") return Activation::Silu;
  if (s == "tanh") return Activation::Tanh;
  throw ConfigError("unknown activation: " + s);
}

// Fully connected network. Weights are stored [d_in, d_out] so a batch of
// row vectors multiplies straight through.
class Mlp {
 public:
  Mlp() = default;

  Mlp(std::vector<int> layer_dims, Activation activation, std::vector<Tensor> weights,
      std::vector<Tensor> biases)
      : layer_dims_(std::move(layer_dims)),
        activation_(activation),
        weights_(std::move(weights)),
        biases_(std::move(biases)) {}

  // Fan-in uniform initialization: W ~ U(-sqrt(1/fan_in), +sqrt(1/fan_in)),
  // biases zero. Deterministic under seed.
  static Mlp init(const std::vector<int>& dims, Activation activation, std::uint64_t seed) {
    if (dims.size() < 2) throw ConfigError("Mlp::init: need at least input and output dims");
    for (int d : dims)
      if (d < 1) throw ConfigError("Mlp::init: zero or negative layer dimension");
    Rng rng(seed);
    std::vector<Tensor> ws, bs;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      const int fan_in = dims[l], fan_out = dims[l + 1];
      const double bound = std::sqrt(1.0 / fan_in);
      Tensor w({fan_in, fan_out});
      for (long i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
      ws.push_back(std::move(w));
      bs.push_back(Tensor::zeros({fan_out}));
    }
    return Mlp(dims, activation, std::move(ws), std::move(bs));
  }

  const std::vector<int>& layer_dims() const { return layer_dims_; }
  Activation activation() const { return activation_; }
  int input_dim() const { return layer_dims_.front(); }
  int output_dim() const { return layer_dims_.back(); }
  std::size_t num_layers() const { return weights_.size(); }

  Tensor& weight(std::size_t l) { return weights_[l]; }
  const Tensor& weight(std::size_t l) const { return weights_[l]; }
  Tensor& bias(std::size_t l) { return biases_[l]; }
  const Tensor& bias(std::size_t l) const { return biases_[l]; }

  long param_count() const {
    long n = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l) n += weights_[l].size() + biases_[l].size();
    return n;
  }

  // Flat parameter list W0, b0, W1, b1, ... matching the tape leaf order of
  // forward(); the optimizer and gradient extraction rely on this order.
  std::vector<Tensor*> params() {
    std::vector<Tensor*> out;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      out.push_back(&weights_[l]);
      out.push_back(&biases_[l]);
    }
    return out;
  }

  std::vector<const Tensor*> params() const {
    std::vector<const Tensor*> out;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      out.push_back(&weights_[l]);
      out.push_back(&biases_[l]);
    }
    return out;
  }

  // Eager forward for a batch [B, in] -> [B, out].
  Tensor forward(const Tensor& x) const {
    using namespace tensor_ops;
    Tensor h = x.rank() == 2 ? x : Tensor({1, static_cast<int>(x.size())}, x.raw());
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      h = add_row(matmul(h, weights_[l]), biases_[l]);
      if (l + 1 < weights_.size()) h = activate_eager(h);
    }
    return h;
  }

  // Records the forward pass on a tape. Parameters enter as leaves with
  // requires_grad = train_params; their ids are appended to param_ids in
  // params() order when requested.
  ad::Id forward(ad::Tape& tape, ad::Id x, bool train_params = false,
                 std::vector<ad::Id>* param_ids = nullptr) const {
    ad::Id h = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      const ad::Id w = tape.leaf(weights_[l], train_params);
      const ad::Id b = tape.leaf(biases_[l], train_params);
      if (param_ids) {
        param_ids->push_back(w);
        param_ids->push_back(b);
      }
      h = tape.add_row(tape.matmul(h, w), b);
      if (l + 1 < weights_.size()) h = activate(tape, h);
    }
    return h;
  }

 private:
  Tensor activate_eager(const Tensor& h) const {
    using namespace tensor_ops;
    switch (activation_) {
      case Activation::Relu: return map(h, [](double x) { return x > 0.0 ? x : 0.0; });
      case Activation::Silu: return map(h, tensor_ops::silu);
      case Activation::Tanh: return map(h, [](double x) { return std::tanh(x); });
    }
    return h;
  }

  ad::Id activate(ad::Tape& tape, ad::Id h) const {
    switch (activation_) {
      case Activation::Relu: return tape.relu(h);
      case Activation::Silu: return tape.silu(h);
      case Activation::Tanh: return tape.tanh(h);
    }
    return h;
  }

  std::vector<int> layer_dims_;
  Activation activation_ = Activation::Relu;
  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;
};

enum class PredictMode { Delta, Absolute };

inline std::string to_string(PredictMode m) { return m == PredictMode::Delta ? "delta" : "absolute"; }

inline PredictMode predict_mode_from_string(const std::string& s) {
  if (s == "delta") return PredictMode::Delta;
  if (s == "absolute") return PredictMode::Absolute;
  throw ConfigError("unknown predict mode: " + s);
}

// Deterministic dynamics model: net maps the (s, a) concatenation to the
// predicted next state (absolute) or to the next-state delta.
class DeterministicModel {
 public:
  DeterministicModel() = default;

  DeterministicModel(Mlp net, PredictMode mode, int state_dim, int action_dim)
      : net_(std::move(net)), mode_(mode), state_dim_(state_dim), action_dim_(action_dim) {
    if (net_.input_dim() != state_dim + action_dim || net_.output_dim() != state_dim)
      throw ConfigError("DeterministicModel: net dims " + Tensor::shape_str(net_.layer_dims()) +
                        " do not map (s,a) of dims (" + std::to_string(state_dim) + "," +
                        std::to_string(action_dim) + ") to the state space");
  }

  static DeterministicModel init(int state_dim, int action_dim, const std::vector<int>& hidden,
                                 Activation act, PredictMode mode, std::uint64_t seed) {
    std::vector<int> dims{state_dim + action_dim};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(state_dim);
    return DeterministicModel(Mlp::init(dims, act, seed), mode, state_dim, action_dim);
  }

  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }
  PredictMode mode() const { return mode_; }
  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }

  Tensor predict(const Tensor& s, const Tensor& a) const {
    using namespace tensor_ops;
    const Tensor out = net_.forward(concat_cols(as_matrix(s), as_matrix(a)));
    if (!out.all_finite()) throw NonFiniteError("DeterministicModel::predict: non-finite prediction");
    return mode_ == PredictMode::Delta ? add(as_matrix(s), out) : out;
  }

  ad::Id predict(ad::Tape& tape, ad::Id s, ad::Id a, bool train_params = true,
                 std::vector<ad::Id>* param_ids = nullptr) const {
    const ad::Id x = tape.concat_cols(s, a);
    const ad::Id out = net_.forward(tape, x, train_params, param_ids);
    return mode_ == PredictMode::Delta ? tape.add(s, out) : out;
  }

  static Tensor as_matrix(const Tensor& t) {
    return t.rank() == 2 ? t : Tensor({1, static_cast<int>(t.size())}, t.raw());
  }

 private:
  Mlp net_;
  PredictMode mode_ = PredictMode::Delta;
  int state_dim_ = 0;
  int action_dim_ = 0;
};

// Ensemble of Gaussian networks, each emitting (mean, log-variance) per
// state dimension. Used as the maximum-likelihood baseline model.
class GaussianEnsemble {
 public:
  GaussianEnsemble() = default;

  GaussianEnsemble(std::vector<Mlp> members, PredictMode mode, int state_dim, int action_dim,
                   double log_var_min = -10.0, double log_var_max = 0.5)
      : members_(std::move(members)),
        mode_(mode),
        state_dim_(state_dim),
        action_dim_(action_dim),
        log_var_min_(log_var_min),
        log_var_max_(log_var_max) {
    if (members_.empty()) throw ConfigError("GaussianEnsemble: need at least one member");
    for (const Mlp& m : members_)
      if (m.input_dim() != state_dim + action_dim || m.output_dim() != 2 * state_dim)
        throw ConfigError("GaussianEnsemble: member dims do not emit (mean, log-var) per state dim");
  }

  static GaussianEnsemble init(int member_count, int state_dim, int action_dim,
                               const std::vector<int>& hidden, Activation act, PredictMode mode,
                               std::uint64_t seed) {
    std::vector<int> dims{state_dim + action_dim};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(2 * state_dim);
    std::vector<Mlp> members;
    Rng rng(seed);
    for (int e = 0; e < member_count; ++e)
      members.push_back(Mlp::init(dims, act, rng.fork(static_cast<std::uint64_t>(e)).next_u64()));
    return GaussianEnsemble(std::move(members), mode, state_dim, action_dim);
  }

  std::vector<Mlp>& members() { return members_; }
  const std::vector<Mlp>& members() const { return members_; }
  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  PredictMode mode() const { return mode_; }
  double log_var_min() const { return log_var_min_; }
  double log_var_max() const { return log_var_max_; }

  // Mean prediction of one member (no variance sampling).
  Tensor predict_member(std::size_t member, const Tensor& s, const Tensor& a) const {
    using namespace tensor_ops;
    const Tensor sm = DeterministicModel::as_matrix(s);
    const Tensor out = members_[member].forward(concat_cols(sm, DeterministicModel::as_matrix(a)));
    Tensor mu = slice_cols(out, 0, state_dim_);
    if (!mu.all_finite()) throw NonFiniteError("GaussianEnsemble::predict_member: non-finite mean");
    return mode_ == PredictMode::Delta ? add(sm, mu) : mu;
  }

  // Gaussian negative log-likelihood recorded on a tape:
  // mean over members and samples of sum_d [(mu - s')^2 / var + log var],
  // with the constant term dropped and per-dim diagonal variance clamped
  // to [log_var_min, log_var_max].
  ad::Id nll(ad::Tape& tape, ad::Id s, ad::Id a, ad::Id sp, bool train_params = true,
             std::vector<ad::Id>* param_ids = nullptr) const {
    const ad::Id x = tape.concat_cols(s, a);
    ad::Id total = -1;
    for (const Mlp& m : members_) {
      const ad::Id out = m.forward(tape, x, train_params, param_ids);
      ad::Id mu = tape.slice_cols(out, 0, state_dim_);
      if (mode_ == PredictMode::Delta) mu = tape.add(s, mu);
      const ad::Id log_var = tape.clip(tape.slice_cols(out, state_dim_, 2 * state_dim_),
                                       log_var_min_, log_var_max_);
      const ad::Id sq = tape.square(tape.sub(mu, sp));
      const ad::Id inv_var = tape.exp(tape.scale(log_var, -1.0));
      const ad::Id per_dim = tape.add(tape.mul(sq, inv_var), log_var);
      const ad::Id per_sample = tape.row_sum(per_dim);
      const ad::Id member_loss = tape.mean(per_sample);
      total = total < 0 ? member_loss : tape.add(total, member_loss);
    }
    return tape.scale(total, 1.0 / static_cast<double>(members_.size()));
  }

 private:
  std::vector<Mlp> members_;
  PredictMode mode_ = PredictMode::Delta;
  int state_dim_ = 0;
  int action_dim_ = 0;
  double log_var_min_ = -10.0;
  double log_var_max_ = 0.5;
};

// SGD / Adam over a flat parameter list. Moment tensors are allocated on
// first use and must keep matching the parameter shapes afterwards.
class Optimizer {
 public:
  enum class Kind { Sgd, Adam };

  Optimizer() = default;
  Optimizer(Kind kind, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : kind_(kind), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  static Optimizer sgd(double lr) { return Optimizer(Kind::Sgd, lr); }
  static Optimizer adam(double lr) { return Optimizer(Kind::Adam, lr); }

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

  void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
    if (params.size() != grads.size())
      throw Error("Optimizer::step: " + std::to_string(params.size()) + " params vs " +
                  std::to_string(grads.size()) + " grads");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!params[i]->same_shape(grads[i]))
        throw ShapeError("Optimizer::step: grad shape " + grads[i].shape_str() +
                         " does not match param shape " + params[i]->shape_str());
      if (!grads[i].all_finite()) throw NonFiniteError("Optimizer::step: non-finite gradient");
    }
    if (kind_ == Kind::Sgd) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        const Tensor& g = grads[i];
        for (long j = 0; j < p.size(); ++j) p[j] -= lr_ * g[j];
      }
      return;
    }
    if (m_.empty()) {
      for (const Tensor* p : params) {
        m_.push_back(Tensor::zeros(p->shape()));
        v_.push_back(Tensor::zeros(p->shape()));
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = *params[i];
      const Tensor& g = grads[i];
      Tensor& m = m_[i];
      Tensor& v = v_[i];
      for (long j = 0; j < p.size(); ++j) {
        m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
        v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        p[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

 private:
  Kind kind_ = Kind::Adam;
  double lr_ = 1e-3;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
  std::vector<Tensor> m_, v_;
};

// Pulls parameter gradients out of a GradMap in params() order.
inline std::vector<Tensor> collect_grads(const ad::Tape::GradMap& gm, const std::vector<ad::Id>& ids) {
  std::vector<Tensor> out;
  out.reserve(ids.size());
  for (ad::Id id : ids) out.push_back(gm.at(id));
  return out;
}

// --- checkpoint format -----------------------------------------------------
// One JSON document per network: {schema_version, layer_dims, activation,
// arrays: [{weight: nested row-major lists, bias: list}, ...]}.

inline nlohmann::json mlp_to_json(const Mlp& mlp) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < mlp.num_layers(); ++l) {
    const Tensor& w = mlp.weight(l);
    nlohmann::json rows = nlohmann::json::array();
    for (int i = 0; i < w.rows(); ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (int j = 0; j < w.cols(); ++j) row.push_back(w.at(i, j));
      rows.push_back(std::move(row));
    }
    nlohmann::json bias = nlohmann::json::array();
    for (long j = 0; j < mlp.bias(l).size(); ++j) bias.push_back(mlp.bias(l)[j]);
    layers.push_back({{"weight", std::move(rows)}, {"bias", std::move(bias)}});
  }
  return nlohmann::json{{"schema_version", 1},
                        {"layer_dims", mlp.layer_dims()},
                        {"activation", to_string(mlp.activation())},
                        {"arrays", std::move(layers)}};
}

inline Mlp mlp_from_json(const nlohmann::json& j) {
  if (!j.contains("schema_version") || j.at("schema_version").get<int>() != 1)
    throw ConfigError("mlp_from_json: unsupported schema_version");
  const std::vector<int> dims = j.at("layer_dims").get<std::vector<int>>();
  const Activation act = activation_from_string(j.at("activation").get<std::string>());
  const nlohmann::json& layers = j.at("arrays");
  if (layers.size() + 1 != dims.size()) throw ConfigError("mlp_from_json: layer count mismatch");
  std::vector<Tensor> ws, bs;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const int din = dims[l], dout = dims[l + 1];
    Tensor w({din, dout});
    const nlohmann::json& rows = layers[l].at("weight");
    if (static_cast<int>(rows.size()) != din) throw ConfigError("mlp_from_json: weight row count mismatch");
    for (int i = 0; i < din; ++i) {
      if (static_cast<int>(rows[i].size()) != dout)
        throw ConfigError("mlp_from_json: weight col count mismatch");
      for (int jj = 0; jj < dout; ++jj) w.at(i, jj) = rows[i][jj].get<double>();
    }
    Tensor b({dout});
    const nlohmann::json& bias = layers[l].at("bias");
    if (static_cast<int>(bias.size()) != dout) throw ConfigError("mlp_from_json: bias length mismatch");
    for (int jj = 0; jj < dout; ++jj) b[jj] = bias[jj].get<double>();
    ws.push_back(std::move(w));
    bs.push_back(std::move(b));
  }
  return Mlp(dims, act, std::move(ws), std::move(bs));
}

inline void save_mlp(const std::filesystem::path& path, const Mlp& mlp) {
  write_file_atomic(path, mlp_to_json(mlp).dump(2) + "\n");
}

inline Mlp load_mlp(const std::filesystem::path& path) {
  return mlp_from_json(nlohmann::json::parse(read_file(path)));
}

}  // namespace vagram::nn
