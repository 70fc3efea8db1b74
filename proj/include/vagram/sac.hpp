#pragma once

#include <cmath>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "vagram/env.hpp"
#include "vagram/nn.hpp"
#include "vagram/value_fn.hpp"

namespace vagram::sac {

constexpr double kLogStdMin = -20.0;
constexpr double kLogStdMax = 2.0;
constexpr double kSquashEps = 1e-6;

struct SacConfig {
  std::vector<int> hidden{64, 64};
  nn::Activation activation = nn::Activation::Relu;
  double lr = 3e-4;
  double gamma = 0.99;
  double tau = 0.005;
  double alpha_init = 1.0;
  bool auto_alpha = true;
  int batch_size = 128;
};

enum class SampleMode { Stochastic, Mean };

struct SacLosses {
  double critic = 0.0;
  double actor = 0.0;
  double alpha = 0.0;
  double alpha_value = 0.0;
};

// Soft actor-critic with a squashed-Gaussian policy, two critics, Polyak
// target copies and auto-tuned entropy temperature.
class SacAgent {
 public:
  SacAgent() = default;

  static SacAgent init(int obs_dim, int action_dim, double action_bound, const SacConfig& cfg,
                       std::uint64_t seed) {
    SacAgent a;
    a.obs_dim_ = obs_dim;
    a.action_dim_ = action_dim;
    a.action_bound_ = action_bound;
    a.cfg_ = cfg;
    a.target_entropy_ = -static_cast<double>(action_dim);
    a.log_alpha_ = std::log(cfg.alpha_init);
    Rng root(seed);
    std::vector<int> pol_dims{obs_dim};
    pol_dims.insert(pol_dims.end(), cfg.hidden.begin(), cfg.hidden.end());
    pol_dims.push_back(2 * action_dim);
    std::vector<int> q_dims{obs_dim + action_dim};
    q_dims.insert(q_dims.end(), cfg.hidden.begin(), cfg.hidden.end());
    q_dims.push_back(1);
    a.policy_ = nn::Mlp::init(pol_dims, cfg.activation, root.fork(1).next_u64());
    a.q1_ = nn::Mlp::init(q_dims, cfg.activation, root.fork(2).next_u64());
    a.q2_ = nn::Mlp::init(q_dims, cfg.activation, root.fork(3).next_u64());
    a.q1_target_ = a.q1_;
    a.q2_target_ = a.q2_;
    a.policy_opt_ = nn::Optimizer::adam(cfg.lr);
    a.q_opt_ = nn::Optimizer::adam(cfg.lr);
    a.alpha_opt_ = nn::Optimizer::adam(cfg.lr);
    a.log_alpha_tensor_ = Tensor::scalar(a.log_alpha_);
    a.rng_ = root.fork(4);
    return a;
  }

  int obs_dim() const { return obs_dim_; }
  int action_dim() const { return action_dim_; }
  double action_bound() const { return action_bound_; }
  double alpha() const { return std::exp(log_alpha_); }
  double gamma() const { return cfg_.gamma; }
  const SacConfig& config() const { return cfg_; }
  nn::Mlp& policy() { return policy_; }
  const nn::Mlp& policy() const { return policy_; }
  nn::Mlp& critic(int which) { return *critic_ptr(which); }
  const nn::Mlp& critic(int which) const { return *critic_ptr(which); }

  struct PolicyOut {
    Tensor action;    // [B, action_dim]
    Tensor log_prob;  // [B, 1]
  };

  PolicyOut policy_sample(const Tensor& obs, SampleMode mode) { return policy_sample(obs, mode, rng_); }

  // Squashed-Gaussian action; stochastic mode draws the reparameterization
  // noise from `rng`.
  PolicyOut policy_sample(const Tensor& obs, SampleMode mode, Rng& rng) const {
    using namespace tensor_ops;
    const Tensor o = ValueFn::as_batch(obs);
    if (!o.all_finite()) throw NonFiniteError("policy_sample: non-finite observation");
    const Tensor out = policy_.forward(o);
    const Tensor mean = slice_cols(out, 0, action_dim_);
    const Tensor log_std = clip(slice_cols(out, action_dim_, 2 * action_dim_), kLogStdMin, kLogStdMax);
    Tensor xi = Tensor::zeros(mean.shape());
    if (mode == SampleMode::Stochastic)
      for (long i = 0; i < xi.size(); ++i) xi[i] = rng.normal();
    return squash(mean, log_std, xi);
  }

  // log pi(a|s) for pre-squash noise xi: Gaussian log-density minus the
  // tanh change-of-variables correction minus log(action_bound) per dim.
  PolicyOut squash(const Tensor& mean, const Tensor& log_std, const Tensor& xi) const {
    using namespace tensor_ops;
    const int b = mean.rows();
    Tensor action({b, action_dim_});
    Tensor log_prob({b, 1});
    for (int i = 0; i < b; ++i) {
      double lp = 0.0;
      for (int j = 0; j < action_dim_; ++j) {
        const double ls = log_std.at(i, j);
        const double u = mean.at(i, j) + std::exp(ls) * xi.at(i, j);
        const double t = std::tanh(u);
        action.at(i, j) = action_bound_ * t;
        lp += -0.5 * xi.at(i, j) * xi.at(i, j) - ls - 0.5 * std::log(2.0 * M_PI);
        lp += -std::log(1.0 - t * t + kSquashEps) - std::log(action_bound_);
      }
      log_prob[i] = lp;
    }
    if (!action.all_finite() || !log_prob.all_finite())
      throw NonFiniteError("policy_sample: non-finite action or log-prob");
    return {action, log_prob};
  }

  // Bootstrap target y = r + gamma * (1 - done) * (min(q1_t, q2_t)(s', a') -
  // alpha * log pi(a'|s')) with a' freshly sampled from the policy.
  Tensor critic_targets(const env::BatchTensors& batch) {
    using namespace tensor_ops;
    PolicyOut next = policy_sample(batch.sp, SampleMode::Stochastic);
    const Tensor q_in = concat_cols(batch.sp, next.action);
    const Tensor qmin = minimum(q1_target_.forward(q_in), q2_target_.forward(q_in));
    const Tensor boot = sub(qmin, scale(next.log_prob, alpha()));
    Tensor y = batch.r;
    for (int i = 0; i < y.rows(); ++i)
      y[i] += cfg_.gamma * (1.0 - batch.done[i]) * boot[i];
    return y;
  }

  SacLosses update(const std::vector<env::Transition>& transitions) {
    if (transitions.empty()) throw Error("SacAgent::update: empty batch");
    const env::BatchTensors batch = env::make_batch(transitions);
    SacLosses losses;
    losses.critic = update_critics(batch);
    const double mean_logp = update_actor(batch, &losses.actor);
    losses.alpha = update_alpha(mean_logp);
    losses.alpha_value = alpha();
    polyak_update();
    return losses;
  }

  double update_critics(const env::BatchTensors& batch) {
    return update_critics_against(batch, critic_targets(batch));
  }

  // Summed mean-squared bootstrap error of both critics against a fixed
  // target vector.
  double critic_loss(const env::BatchTensors& batch, const Tensor& y) const {
    using namespace tensor_ops;
    const Tensor q_in = concat_cols(batch.s, batch.a);
    const Tensor e1 = sub(q1_.forward(q_in), y);
    const Tensor e2 = sub(q2_.forward(q_in), y);
    return mean(mul(e1, e1)).value() + mean(mul(e2, e2)).value();
  }

  double update_critics_against(const env::BatchTensors& batch, const Tensor& y) {
    ad::Tape tape;
    const ad::Id s = tape.constant(batch.s);
    const ad::Id a = tape.constant(batch.a);
    const ad::Id target = tape.constant(y);
    const ad::Id q_in = tape.concat_cols(s, a);
    std::vector<ad::Id> pids;
    const ad::Id q1v = q1_.forward(tape, q_in, true, &pids);
    const ad::Id q2v = q2_.forward(tape, q_in, true, &pids);
    const ad::Id loss =
        tape.add(tape.mean(tape.square(tape.sub(q1v, target))), tape.mean(tape.square(tape.sub(q2v, target))));
    const auto gm = tape.backward(loss);
    std::vector<Tensor*> params = q1_.params();
    for (Tensor* p : q2_.params()) params.push_back(p);
    q_opt_.step(params, nn::collect_grads(gm, pids));
    return tape.value(loss).value();
  }

  // Returns the batch-mean log-prob for the subsequent alpha update.
  double update_actor(const env::BatchTensors& batch, double* actor_loss) {
    ad::Tape tape;
    const ad::Id s = tape.constant(batch.s);
    std::vector<ad::Id> pids;
    const int b = batch.s.rows();
    Tensor xi({b, action_dim_});
    for (long i = 0; i < xi.size(); ++i) xi[i] = rng_.normal();
    const TapeSample ts = policy_log_prob_with_noise(tape, s, xi, true, &pids);
    const ad::Id logp = ts.log_prob;
    const ad::Id q_in = tape.concat_cols(s, ts.action);
    const ad::Id qmin = tape.min(q1_.forward(tape, q_in), q2_.forward(tape, q_in));
    const ad::Id loss = tape.mean(tape.sub(tape.scale(logp, alpha()), qmin));
    const auto gm = tape.backward(loss);
    policy_opt_.step(policy_.params(), nn::collect_grads(gm, pids));
    if (actor_loss) *actor_loss = tape.value(loss).value();
    return tensor_ops::mean(tape.value(logp)).value();
  }

  double update_alpha(double mean_logp) {
    if (!cfg_.auto_alpha) return 0.0;
    // J(alpha) = -log_alpha * (logp + target_entropy) detached, so the
    // descent direction on log_alpha is +(logp + target_entropy).
    const double grad = -(mean_logp + target_entropy_);
    Tensor g = Tensor::scalar(grad);
    std::vector<Tensor*> p{&log_alpha_tensor_};
    alpha_opt_.step(p, {g});
    log_alpha_ = log_alpha_tensor_.value();
    return -log_alpha_ * (mean_logp + target_entropy_);
  }

  struct TapeSample {
    ad::Id action;
    ad::Id log_prob;
  };

  // Records the reparameterized policy sample and its log-prob on the tape.
  TapeSample policy_log_prob_with_noise(ad::Tape& tape, ad::Id s, const Tensor& xi, bool train_params,
                                        std::vector<ad::Id>* pids) const {
    const ad::Id out = policy_.forward(tape, s, train_params, pids);
    const ad::Id mean = tape.slice_cols(out, 0, action_dim_);
    const ad::Id log_std = tape.clip(tape.slice_cols(out, action_dim_, 2 * action_dim_), kLogStdMin, kLogStdMax);
    const ad::Id xi_id = tape.constant(xi);
    const ad::Id u = tape.add(mean, tape.mul(tape.exp(log_std), xi_id));
    const ad::Id tanh_u = tape.tanh(u);
    const ad::Id action = tape.scale(tanh_u, action_bound_);
    // Gaussian term: -0.5 xi^2 - log_std - 0.5 log(2 pi), with xi constant.
    Tensor gauss_const = tensor_ops::map(xi, [](double x) { return -0.5 * x * x - 0.5 * std::log(2.0 * M_PI); });
    const ad::Id gauss = tape.add(tape.constant(gauss_const), tape.scale(log_std, -1.0));
    const ad::Id one_minus_t2 = tape.add_scalar(tape.scale(tape.square(tanh_u), -1.0), 1.0 + kSquashEps);
    const ad::Id corr = tape.scale(tape.log(one_minus_t2), -1.0);
    const ad::Id per_dim = tape.add(gauss, corr);
    const ad::Id log_prob = tape.add_scalar(
        tape.row_sum(per_dim), -static_cast<double>(action_dim_) * std::log(action_bound_));
    return {action, log_prob};
  }

  void polyak_update() {
    polyak_pair(q1_, q1_target_);
    polyak_pair(q2_, q2_target_);
  }

  void hard_copy_targets() {
    q1_target_ = q1_;
    q2_target_ = q2_;
  }

  // State value V(s) = Q_which(s, a_mean) with a_mean the deterministic
  // (tanh-squashed) policy mean; entropy term intentionally excluded.
  double state_value(const std::vector<double>& s, int which) const {
    return value_fn(which)->evaluate_one(s);
  }

  // Value evaluator over critic `which` in {0: q1, 1: q2, 2: q1_target,
  // 3: q2_target}. Holds copies of the current networks, so it is a frozen
  // snapshot; gradients flow through the policy's dependence on the state.
  std::shared_ptr<const ValueFn> value_fn(int which) const {
    return std::make_shared<SacValueFn>(policy_, *critic_ptr(which), action_dim_, action_bound_);
  }

  // The four empirical value functions: both critics and both targets.
  ValueBundle value_bundle() const {
    return {value_fn(0), value_fn(1), value_fn(2), value_fn(3)};
  }

  void save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    nn::save_mlp(dir / "policy.json", policy_);
    nn::save_mlp(dir / "q1.json", q1_);
    nn::save_mlp(dir / "q2.json", q2_);
    nn::save_mlp(dir / "q1_target.json", q1_target_);
    nn::save_mlp(dir / "q2_target.json", q2_target_);
    nlohmann::json meta{{"schema_version", 1},
                        {"log_alpha", log_alpha_},
                        {"obs_dim", obs_dim_},
                        {"action_dim", action_dim_},
                        {"action_bound", action_bound_},
                        {"gamma", cfg_.gamma},
                        {"tau", cfg_.tau}};
    write_file_atomic(dir / "agent.json", meta.dump(2) + "\n");
  }

  static SacAgent load(const std::filesystem::path& dir, const SacConfig& cfg, std::uint64_t seed) {
    const nlohmann::json meta = nlohmann::json::parse(read_file(dir / "agent.json"));
    SacAgent a;
    a.cfg_ = cfg;
    a.obs_dim_ = meta.at("obs_dim").get<int>();
    a.action_dim_ = meta.at("action_dim").get<int>();
    a.action_bound_ = meta.at("action_bound").get<double>();
    a.log_alpha_ = meta.at("log_alpha").get<double>();
    a.log_alpha_tensor_ = Tensor::scalar(a.log_alpha_);
    a.target_entropy_ = -static_cast<double>(a.action_dim_);
    a.policy_ = nn::load_mlp(dir / "policy.json");
    a.q1_ = nn::load_mlp(dir / "q1.json");
    a.q2_ = nn::load_mlp(dir / "q2.json");
    a.q1_target_ = nn::load_mlp(dir / "q1_target.json");
    a.q2_target_ = nn::load_mlp(dir / "q2_target.json");
    a.policy_opt_ = nn::Optimizer::adam(cfg.lr);
    a.q_opt_ = nn::Optimizer::adam(cfg.lr);
    a.alpha_opt_ = nn::Optimizer::adam(cfg.lr);
    a.rng_ = Rng(seed).fork(4);
    return a;
  }

  class SacValueFn : public ValueFn {
   public:
    SacValueFn(nn::Mlp policy, nn::Mlp critic, int action_dim, double action_bound)
        : policy_(std::move(policy)),
          critic_(std::move(critic)),
          action_dim_(action_dim),
          action_bound_(action_bound) {}

    ad::Id apply(ad::Tape& tape, ad::Id states) const override {
      const ad::Id out = policy_.forward(tape, states, false, nullptr);
      const ad::Id mean = tape.slice_cols(out, 0, action_dim_);
      const ad::Id action = tape.scale(tape.tanh(mean), action_bound_);
      return critic_.forward(tape, tape.concat_cols(states, action), false, nullptr);
    }

   private:
    nn::Mlp policy_;
    nn::Mlp critic_;
    int action_dim_;
    double action_bound_;
  };

 private:
  const nn::Mlp* critic_ptr(int which) const {
    switch (which) {
      case 0: return &q1_;
      case 1: return &q2_;
      case 2: return &q1_target_;
      case 3: return &q2_target_;
    }
    throw Error("SacAgent: critic index " + std::to_string(which) + " out of range [0,3]");
  }

  nn::Mlp* critic_ptr(int which) {
    return const_cast<nn::Mlp*>(static_cast<const SacAgent*>(this)->critic_ptr(which));
  }

  void polyak_pair(const nn::Mlp& online, nn::Mlp& target) {
    const double tau = cfg_.tau;
    for (std::size_t l = 0; l < online.num_layers(); ++l) {
      for (long i = 0; i < online.weight(l).size(); ++i)
        target.weight(l)[i] = (1.0 - tau) * target.weight(l)[i] + tau * online.weight(l)[i];
      for (long i = 0; i < online.bias(l).size(); ++i)
        target.bias(l)[i] = (1.0 - tau) * target.bias(l)[i] + tau * online.bias(l)[i];
    }
  }

  int obs_dim_ = 0;
  int action_dim_ = 0;
  double action_bound_ = 1.0;
  SacConfig cfg_;
  double target_entropy_ = -1.0;
  double log_alpha_ = 0.0;
  Tensor log_alpha_tensor_;
  nn::Mlp policy_, q1_, q2_, q1_target_, q2_target_;
  nn::Optimizer policy_opt_, q_opt_, alpha_opt_;
  Rng rng_{0};
};

}  // namespace vagram::sac
