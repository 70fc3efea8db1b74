#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "vagram/env.hpp"
#include "vagram/metrics.hpp"
#include "vagram/model_loss.hpp"
#include "vagram/nn.hpp"
#include "vagram/sac.hpp"

namespace vagram::dyna {

// Ring buffer of transitions with FIFO eviction and uniform sampling with
// replacement.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, std::uint64_t seed) : capacity_(capacity), rng_(seed) {
    if (capacity == 0) throw ConfigError("ReplayBuffer: capacity must be positive");
    storage_.reserve(capacity);
  }

  std::size_t size() const { return storage_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return storage_.empty(); }

  const env::Transition& operator[](std::size_t i) const { return storage_[i]; }

  void push(env::Transition t) {
    if (storage_.size() < capacity_) {
      storage_.push_back(std::move(t));
    } else {
      storage_[head_] = std::move(t);
      head_ = (head_ + 1) % capacity_;
    }
  }

  std::vector<env::Transition> sample(int n) { return sample_with(rng_, n); }

  std::vector<env::Transition> sample_with(Rng& rng, int n) const {
    if (storage_.empty()) throw Error("ReplayBuffer: sample from empty buffer");
    std::vector<env::Transition> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out.push_back(storage_[rng.integer(storage_.size())]);
    return out;
  }

  std::vector<env::Transition> contents() const { return storage_; }

 private:
  std::size_t capacity_;
  std::vector<env::Transition> storage_;
  std::size_t head_ = 0;
  Rng rng_;
};

// Stopping rule for per-epoch model fitting: hard step cap plus patience on
// the held-out loss.
struct TrainCriterion {
  int max_steps = 500;
  int patience = 5;
  int eval_every = 25;
  int batch_size = 64;
  double heldout_frac = 0.1;
  nn::Optimizer::Kind optimizer = nn::Optimizer::Kind::Adam;
  double lr = 1e-3;
};

struct TrainResult {
  std::vector<double> train_curve;
  std::vector<double> heldout_curve;
  std::optional<double> final_heldout;
  std::optional<double> mean_clip_threshold;
  int steps = 0;
};

namespace detail {

struct Split {
  std::vector<env::Transition> train;
  std::vector<env::Transition> heldout;
};

inline Split split_heldout(std::vector<env::Transition> data, double frac, Rng& rng) {
  // Fisher-Yates, then carve the tail as held-out.
  for (std::size_t i = data.size(); i > 1; --i) {
    const std::size_t j = rng.integer(i);
    std::swap(data[i - 1], data[j]);
  }
  std::size_t h = static_cast<std::size_t>(std::floor(frac * static_cast<double>(data.size())));
  if (h >= data.size()) h = data.size() - 1;
  Split s;
  s.heldout.assign(data.end() - static_cast<long>(h), data.end());
  s.train.assign(data.begin(), data.end() - static_cast<long>(h));
  return s;
}

inline std::vector<env::Transition> draw(const std::vector<env::Transition>& pool, int n, Rng& rng) {
  std::vector<env::Transition> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(pool[rng.integer(pool.size())]);
  return out;
}

}  // namespace detail

// Minibatch descent of the multi-VF model loss with early stopping on a
// held-out split. The model trains warm: parameters and the optimizer state
// carry over between calls.
inline TrainResult train_model(nn::DeterministicModel& model, nn::Optimizer& opt,
                               const ReplayBuffer& buffer, const ValueBundle& bundle,
                               const loss::LossSpec& spec, const TrainCriterion& crit,
                               std::uint64_t seed, const sac::SacAgent* agent = nullptr) {
  spec.validate();
  Rng rng(seed);
  Rng split_rng = rng.fork(1), batch_rng = rng.fork(2), loss_rng = rng.fork(3);
  detail::Split split = detail::split_heldout(buffer.contents(), crit.heldout_frac, split_rng);
  if (split.train.empty()) throw Error("train_model: no training data");
  const bool have_heldout = !split.heldout.empty();
  loss::PreparedBatch heldout_pb;
  env::BatchTensors heldout_bt;
  if (have_heldout) {
    heldout_bt = env::make_batch(split.heldout);
    heldout_pb = loss::prepare_batch(spec, bundle, heldout_bt.s, heldout_bt.a, heldout_bt.sp);
  }

  TrainResult result;
  double best = std::numeric_limits<double>::infinity();
  int evals_since_improvement = 0;
  double clip_sum = 0.0;
  long clip_count = 0;

  auto heldout_loss = [&]() {
    ad::Tape t;
    const Tensor f = model.predict(heldout_bt.s, heldout_bt.a);
    Rng eval_rng = loss_rng.fork(999);
    const ad::Id l = loss::multi_vf_loss(t, spec, bundle, heldout_pb, t.constant(f), agent, &eval_rng);
    return t.value(l).value();
  };

  for (int step = 0; step < crit.max_steps; ++step) {
    const std::vector<env::Transition> batch = detail::draw(split.train, crit.batch_size, batch_rng);
    const env::BatchTensors bt = env::make_batch(batch);
    const loss::PreparedBatch pb = loss::prepare_batch(spec, bundle, bt.s, bt.a, bt.sp);
    for (double th : pb.clip_thresholds) {
      clip_sum += th;
      ++clip_count;
    }
    try {
      ad::Tape tape;
      const ad::Id s = tape.constant(bt.s);
      const ad::Id a = tape.constant(bt.a);
      std::vector<ad::Id> pids;
      const ad::Id f_pred = model.predict(tape, s, a, true, &pids);
      const ad::Id l = loss::multi_vf_loss(tape, spec, bundle, pb, f_pred, agent, &loss_rng);
      const auto gm = tape.backward(l);
      opt.step(model.net().params(), nn::collect_grads(gm, pids));
      result.train_curve.push_back(tape.value(l).value());
    } catch (const NonFiniteError& e) {
      throw NonFiniteError("train_model: loss " + loss::to_string(spec.kind) + " aborted at step " +
                           std::to_string(step) + ": " + e.what());
    }
    ++result.steps;
    if (have_heldout && (step + 1) % crit.eval_every == 0) {
      const double h = heldout_loss();
      result.heldout_curve.push_back(h);
      if (h < best) {
        best = h;
        evals_since_improvement = 0;
      } else if (++evals_since_improvement >= crit.patience) {
        break;
      }
    }
  }
  if (have_heldout) result.final_heldout = heldout_loss();
  if (clip_count > 0) result.mean_clip_threshold = clip_sum / static_cast<double>(clip_count);
  return result;
}

// Ensemble maximum-likelihood fitting with the same stopping rule.
inline TrainResult train_model_nll(nn::GaussianEnsemble& ensemble, nn::Optimizer& opt,
                                   const ReplayBuffer& buffer, const TrainCriterion& crit,
                                   std::uint64_t seed) {
  Rng rng(seed);
  Rng split_rng = rng.fork(1), batch_rng = rng.fork(2);
  detail::Split split = detail::split_heldout(buffer.contents(), crit.heldout_frac, split_rng);
  if (split.train.empty()) throw Error("train_model_nll: no training data");
  const bool have_heldout = !split.heldout.empty();
  env::BatchTensors heldout_bt;
  if (have_heldout) heldout_bt = env::make_batch(split.heldout);

  std::vector<Tensor*> params;
  for (nn::Mlp& m : ensemble.members())
    for (Tensor* p : m.params()) params.push_back(p);

  auto heldout_loss = [&]() {
    ad::Tape t;
    return t
        .value(ensemble.nll(t, t.constant(heldout_bt.s), t.constant(heldout_bt.a),
                            t.constant(heldout_bt.sp), false, nullptr))
        .value();
  };

  TrainResult result;
  double best = std::numeric_limits<double>::infinity();
  int evals_since_improvement = 0;
  for (int step = 0; step < crit.max_steps; ++step) {
    const env::BatchTensors bt = env::make_batch(detail::draw(split.train, crit.batch_size, batch_rng));
    try {
      ad::Tape tape;
      std::vector<ad::Id> pids;
      const ad::Id l = ensemble.nll(tape, tape.constant(bt.s), tape.constant(bt.a),
                                    tape.constant(bt.sp), true, &pids);
      const auto gm = tape.backward(l);
      opt.step(params, nn::collect_grads(gm, pids));
      result.train_curve.push_back(tape.value(l).value());
    } catch (const NonFiniteError& e) {
      throw NonFiniteError("train_model_nll: aborted at step " + std::to_string(step) + ": " + e.what());
    }
    ++result.steps;
    if (have_heldout && (step + 1) % crit.eval_every == 0) {
      const double h = heldout_loss();
      result.heldout_curve.push_back(h);
      if (h < best) {
        best = h;
        evals_since_improvement = 0;
      } else if (++evals_since_improvement >= crit.patience) {
        break;
      }
    }
  }
  if (have_heldout) result.final_heldout = heldout_loss();
  return result;
}

// Scalar reward regression r ~ f(s, a) with mean squared error.
inline TrainResult train_reward_model(nn::Mlp& reward_model, nn::Optimizer& opt,
                                      const ReplayBuffer& buffer, const TrainCriterion& crit,
                                      std::uint64_t seed) {
  Rng rng(seed);
  Rng split_rng = rng.fork(1), batch_rng = rng.fork(2);
  detail::Split split = detail::split_heldout(buffer.contents(), crit.heldout_frac, split_rng);
  if (split.train.empty()) throw Error("train_reward_model: no training data");
  TrainResult result;
  for (int step = 0; step < crit.max_steps; ++step) {
    const env::BatchTensors bt = env::make_batch(detail::draw(split.train, crit.batch_size, batch_rng));
    ad::Tape tape;
    std::vector<ad::Id> pids;
    const ad::Id x = tape.concat_cols(tape.constant(bt.s), tape.constant(bt.a));
    const ad::Id pred = reward_model.forward(tape, x, true, &pids);
    const ad::Id l = tape.mean(tape.square(tape.sub(pred, tape.constant(bt.r))));
    const auto gm = tape.backward(l);
    opt.step(reward_model.params(), nn::collect_grads(gm, pids));
    result.train_curve.push_back(tape.value(l).value());
    ++result.steps;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Model rollouts.

// Produces (s', r) for one rollout branch; returns non-finite values to
// signal an invalid prediction.
using BranchPredictor = std::function<std::pair<std::vector<double>, double>(
    const std::vector<double>& s, const std::vector<double>& a, Rng& rng)>;

inline BranchPredictor learned_predictor(const nn::DeterministicModel& model, const nn::Mlp& reward_model) {
  return [&model, &reward_model](const std::vector<double>& s, const std::vector<double>& a, Rng&) {
    using namespace tensor_ops;
    const Tensor x = concat_cols(Tensor::row(s), Tensor::row(a));
    Tensor out = model.net().forward(x);
    if (model.mode() == nn::PredictMode::Delta)
      for (long i = 0; i < out.size(); ++i) out[i] += s[static_cast<std::size_t>(i)];
    const double r = reward_model.forward(x).value();
    return std::make_pair(out.raw(), r);
  };
}

inline BranchPredictor learned_predictor(const nn::GaussianEnsemble& ensemble, const nn::Mlp& reward_model) {
  return [&ensemble, &reward_model](const std::vector<double>& s, const std::vector<double>& a, Rng& rng) {
    using namespace tensor_ops;
    const std::size_t member = static_cast<std::size_t>(rng.integer(ensemble.members().size()));
    const Tensor x = concat_cols(Tensor::row(s), Tensor::row(a));
    Tensor out = ensemble.members()[member].forward(x);
    std::vector<double> sp(static_cast<std::size_t>(ensemble.state_dim()));
    for (int i = 0; i < ensemble.state_dim(); ++i)
      sp[static_cast<std::size_t>(i)] =
          (ensemble.mode() == nn::PredictMode::Delta ? s[static_cast<std::size_t>(i)] : 0.0) + out[i];
    const double r = reward_model.forward(x).value();
    return std::make_pair(sp, r);
  };
}

// Analytic transition and reward; used to sanity-check the Dyna loop against
// a perfect model.
inline BranchPredictor oracle_predictor(const env::EnvSpec& spec, const env::DistractorSpec& distractor) {
  return [spec, distractor](const std::vector<double>& s, const std::vector<double>& a, Rng&) {
    const env::PendulumState core = env::core_state_from_obs(s, spec);
    auto [next, reward] = env::pendulum_step(core, a[0], spec);
    std::vector<double> z(s.begin() + spec.core_obs_dim(), s.end());
    const std::vector<double> zp = env::distractor_step(z, distractor);
    return std::make_pair(env::observe(next, zp, spec), reward);
  };
}

struct RolloutStats {
  long generated = 0;
  long dropped = 0;
};

// Branches `count` rollouts from states sampled out of the environment
// buffer and rolls them `horizon` steps under the current policy. Branches
// that produce non-finite predictions are dropped and counted; model
// transitions always carry done = false.
inline RolloutStats model_rollout(const BranchPredictor& predict, sac::SacAgent& agent,
                                  const ReplayBuffer& buffer_env, ReplayBuffer& buffer_model,
                                  int count, int horizon, Rng& rng) {
  RolloutStats stats;
  if (count == 0) return stats;
  if (horizon < 1) throw ConfigError("model_rollout: horizon must be >= 1");
  std::vector<env::Transition> starts = buffer_env.sample_with(rng, count);
  std::vector<std::vector<double>> states;
  states.reserve(starts.size());
  for (const env::Transition& t : starts) states.push_back(t.s);
  for (int h = 0; h < horizon && !states.empty(); ++h) {
    Tensor s_batch({static_cast<int>(states.size()), static_cast<int>(states.front().size())});
    for (std::size_t i = 0; i < states.size(); ++i)
      for (std::size_t j = 0; j < states[i].size(); ++j)
        s_batch.at(static_cast<int>(i), static_cast<int>(j)) = states[i][j];
    const Tensor actions = agent.policy_sample(s_batch, sac::SampleMode::Stochastic, rng).action;
    std::vector<std::vector<double>> next_states;
    for (std::size_t i = 0; i < states.size(); ++i) {
      std::vector<double> a(static_cast<std::size_t>(actions.cols()));
      for (int j = 0; j < actions.cols(); ++j) a[static_cast<std::size_t>(j)] = actions.at(static_cast<int>(i), j);
      auto [sp, r] = predict(states[i], a, rng);
      bool finite = std::isfinite(r);
      for (double v : sp) finite = finite && std::isfinite(v);
      if (!finite) {
        ++stats.dropped;
        continue;
      }
      buffer_model.push(env::Transition{states[i], a, r, sp, false});
      ++stats.generated;
      next_states.push_back(std::move(sp));
    }
    states = std::move(next_states);
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Real/model data mixing.

// Linear ramp of the model-data fraction by epoch, capped at `end`.
inline double mix_fraction(int epoch, double start, double end, int ramp_epochs) {
  if (ramp_epochs <= 0) return end;
  const double t = std::min(1.0, static_cast<double>(epoch) / static_cast<double>(ramp_epochs));
  return start + (end - start) * t;
}

struct MixedBatch {
  std::vector<env::Transition> batch;
  int fallback = 0;  // transitions redirected because a source was empty
};

inline MixedBatch mixed_batch(const ReplayBuffer& buffer_env, const ReplayBuffer& buffer_model,
                              double frac_model, int n, Rng& rng) {
  if (frac_model < 0.0 || frac_model > 1.0) throw ConfigError("mixed_batch: frac_model outside [0,1]");
  MixedBatch out;
  int n_model = static_cast<int>(std::lround(frac_model * static_cast<double>(n)));
  int n_env = n - n_model;
  if (buffer_model.empty() && n_model > 0) {
    out.fallback += n_model;
    n_env += n_model;
    n_model = 0;
  }
  if (buffer_env.empty() && n_env > 0) {
    if (buffer_model.empty()) throw Error("mixed_batch: both buffers empty");
    out.fallback += n_env;
    n_model += n_env;
    n_env = 0;
  }
  if (n_model > 0) out.batch = buffer_model.sample_with(rng, n_model);
  if (n_env > 0) {
    std::vector<env::Transition> e = buffer_env.sample_with(rng, n_env);
    out.batch.insert(out.batch.end(), e.begin(), e.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// The full training loop: model learning, short model rollouts, SAC updates
// on mixed data.

struct DynaConfig {
  int epochs = 25;
  int env_steps_per_epoch = 200;
  int model_rollouts = 10;   // branches per environment step
  int rollout_horizon = 1;
  int policy_updates = 10;   // SAC updates per environment step
  int init_random_steps = 500;
  std::size_t buffer_capacity = 200000;
  double mix_start = 0.0;
  double mix_end = 0.95;
  int ramp_epochs = 15;
  loss::LossSpec loss;
  std::vector<int> model_hidden{64, 64};
  nn::Activation model_activation = nn::Activation::Silu;
  nn::PredictMode model_mode = nn::PredictMode::Delta;
  int ensemble_members = 5;
  TrainCriterion model_train;
  int reward_train_steps = 200;
  sac::SacConfig sac;
  int eval_batch = 512;
  bool oracle_model = false;  // perfect analytic model instead of the learned one

  void validate() const {
    if (epochs < 1 || env_steps_per_epoch < 1 || policy_updates < 1 || rollout_horizon < 1)
      throw ConfigError("DynaConfig: counts must be >= 1");
    if (model_rollouts < 0) throw ConfigError("DynaConfig: model_rollouts must be >= 0");
    if (mix_start < 0.0 || mix_end > 1.0 || mix_start > mix_end)
      throw ConfigError("DynaConfig: mix fractions must satisfy 0 <= start <= end <= 1");
    loss.validate();
  }
};

// One per-epoch record; wall-clock time is reported separately so metrics
// files stay byte-deterministic.
struct MetricsRow {
  std::string run_id;
  std::uint64_t seed = 0;
  int epoch = 0;
  double wall_clock_s = 0.0;
  std::optional<double> return_mean, return_min, return_max;
  int episodes = 0;
  std::optional<double> model_train_loss, model_heldout_loss;
  std::vector<std::optional<double>> eval_vaml;  // one per bundle entry
  std::optional<double> clip_threshold;
  double frac_model = 0.0;
  long rollout_drops = 0;
};

inline std::vector<std::string> metrics_columns(std::size_t vf_count = 4) {
  std::vector<std::string> cols{"run_id",       "seed",           "epoch",
                                "return_mean",  "return_min",     "return_max",
                                "episodes",     "model_train_loss", "model_heldout_loss"};
  for (std::size_t i = 0; i < vf_count; ++i) cols.push_back("eval_vaml_vf" + std::to_string(i));
  cols.push_back("clip_threshold");
  cols.push_back("frac_model");
  cols.push_back("rollout_drops");
  return cols;
}

inline void append_metrics_row(CsvTable& table, const MetricsRow& row, std::size_t vf_count = 4) {
  std::vector<std::string> cells{CsvTable::cell(row.run_id),      CsvTable::cell(row.seed),
                                 CsvTable::cell(row.epoch),       CsvTable::cell(row.return_mean),
                                 CsvTable::cell(row.return_min),  CsvTable::cell(row.return_max),
                                 CsvTable::cell(row.episodes),    CsvTable::cell(row.model_train_loss),
                                 CsvTable::cell(row.model_heldout_loss)};
  for (std::size_t i = 0; i < vf_count; ++i)
    cells.push_back(i < row.eval_vaml.size() ? CsvTable::cell(row.eval_vaml[i]) : std::string());
  cells.push_back(CsvTable::cell(row.clip_threshold));
  cells.push_back(CsvTable::cell(row.frac_model));
  cells.push_back(CsvTable::cell(row.rollout_drops));
  table.add_row(std::move(cells));
}

struct DynaResult {
  std::vector<MetricsRow> rows;
  std::vector<double> episode_returns;
  sac::SacAgent agent;
};

inline DynaResult dyna_train(const DynaConfig& cfg, const env::EnvSpec& spec, std::uint64_t seed,
                             const std::string& run_id) {
  cfg.validate();
  Rng root(seed);
  env::PendulumEnv environment(spec, root.fork(10).next_u64());
  ReplayBuffer buffer_env(cfg.buffer_capacity, root.fork(11).next_u64());
  ReplayBuffer buffer_model(cfg.buffer_capacity, root.fork(12).next_u64());
  sac::SacAgent agent = sac::SacAgent::init(spec.obs_dim(), spec.action_dim(), spec.action_bound,
                                            cfg.sac, root.fork(13).next_u64());

  const bool use_nll = cfg.loss.kind == loss::LossKind::Nll;
  nn::DeterministicModel det_model;
  nn::GaussianEnsemble ens_model;
  if (use_nll)
    ens_model = nn::GaussianEnsemble::init(cfg.ensemble_members, spec.obs_dim(), spec.action_dim(),
                                           cfg.model_hidden, cfg.model_activation, cfg.model_mode,
                                           root.fork(14).next_u64());
  else
    det_model = nn::DeterministicModel::init(spec.obs_dim(), spec.action_dim(), cfg.model_hidden,
                                             cfg.model_activation, cfg.model_mode,
                                             root.fork(14).next_u64());
  std::vector<int> reward_dims{spec.obs_dim() + spec.action_dim()};
  reward_dims.insert(reward_dims.end(), cfg.model_hidden.begin(), cfg.model_hidden.end());
  reward_dims.push_back(1);
  nn::Mlp reward_model = nn::Mlp::init(reward_dims, cfg.model_activation, root.fork(15).next_u64());
  nn::Optimizer model_opt(cfg.model_train.optimizer, cfg.model_train.lr);
  nn::Optimizer reward_opt = nn::Optimizer::adam(cfg.model_train.lr);
  Rng act_rng = root.fork(16), rollout_rng = root.fork(17), batch_rng = root.fork(18),
      eval_rng = root.fork(19);

  DynaResult result;
  double episode_return = 0.0;
  auto env_step = [&](double u) {
    env::Transition t = environment.step(u);
    episode_return += t.r;
    buffer_env.push(t);
    if (environment.episode_over()) {
      result.episode_returns.push_back(episode_return);
      episode_return = 0.0;
      environment.reset();
    }
  };

  for (int i = 0; i < cfg.init_random_steps; ++i)
    env_step(env::random_torque(spec, act_rng));

  const auto t_start = std::chrono::steady_clock::now();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    MetricsRow row;
    row.run_id = run_id;
    row.seed = seed;
    row.epoch = epoch;
    const std::size_t episodes_before = result.episode_returns.size();

    const ValueBundle bundle = agent.value_bundle();
    const std::uint64_t train_seed = root.fork(1000 + static_cast<std::uint64_t>(epoch)).next_u64();
    if (!cfg.oracle_model) {
      TrainResult tr;
      if (use_nll)
        tr = train_model_nll(ens_model, model_opt, buffer_env, cfg.model_train, train_seed);
      else
        tr = train_model(det_model, model_opt, buffer_env, bundle, cfg.loss, cfg.model_train,
                         train_seed, &agent);
      if (!tr.train_curve.empty()) row.model_train_loss = tr.train_curve.back();
      row.model_heldout_loss = tr.final_heldout;
      row.clip_threshold = tr.mean_clip_threshold;
      TrainCriterion reward_crit = cfg.model_train;
      reward_crit.max_steps = cfg.reward_train_steps;
      train_reward_model(reward_model, reward_opt, buffer_env, reward_crit,
                         root.fork(2000 + static_cast<std::uint64_t>(epoch)).next_u64());
    }

    BranchPredictor predictor =
        cfg.oracle_model ? oracle_predictor(spec, environment.distractor())
                         : (use_nll ? learned_predictor(ens_model, reward_model)
                                    : learned_predictor(det_model, reward_model));

    const double frac = mix_fraction(epoch, cfg.mix_start, cfg.mix_end, cfg.ramp_epochs);
    row.frac_model = frac;
    for (int e = 0; e < cfg.env_steps_per_epoch; ++e) {
      const Tensor obs = Tensor::row(environment.observation());
      const double u = agent.policy_sample(obs, sac::SampleMode::Stochastic, act_rng).action[0];
      env_step(u);
      if (cfg.model_rollouts > 0) {
        const RolloutStats rs = model_rollout(predictor, agent, buffer_env, buffer_model,
                                              cfg.model_rollouts, cfg.rollout_horizon, rollout_rng);
        row.rollout_drops += rs.dropped;
      }
      for (int g = 0; g < cfg.policy_updates; ++g) {
        const MixedBatch mb =
            mixed_batch(buffer_env, buffer_model, frac, cfg.sac.batch_size, batch_rng);
        agent.update(mb.batch);
      }
    }

    // Held-out VAML error of the current model against each value function.
    if (!cfg.oracle_model && !use_nll) {
      const env::BatchTensors eb =
          env::make_batch(buffer_env.sample_with(eval_rng, cfg.eval_batch));
      for (const auto& v : bundle)
        row.eval_vaml.push_back(loss::eval_vaml_error(*v, det_model, eb.s, eb.a, eb.sp));
    }

    const std::size_t done_episodes = result.episode_returns.size();
    row.episodes = static_cast<int>(done_episodes - episodes_before);
    if (row.episodes > 0) {
      double mn = std::numeric_limits<double>::infinity(), mx = -mn, total = 0.0;
      for (std::size_t i = episodes_before; i < done_episodes; ++i) {
        const double r = result.episode_returns[i];
        total += r;
        mn = std::min(mn, r);
        mx = std::max(mx, r);
      }
      row.return_mean = total / row.episodes;
      row.return_min = mn;
      row.return_max = mx;
    }
    row.wall_clock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    result.rows.push_back(std::move(row));
  }
  result.agent = std::move(agent);
  return result;
}

// ---------------------------------------------------------------------------
// Model-free SAC reference loop and the random-policy baseline.

struct MfResult {
  std::vector<double> episode_returns;
  sac::SacAgent agent;
};

using SnapshotCallback = std::function<void(int index, const sac::SacAgent&)>;

inline MfResult train_model_free(const env::EnvSpec& spec, const sac::SacConfig& cfg, int total_steps,
                                 int updates_per_step, int warmup_steps, std::uint64_t seed,
                                 int snapshot_every = 0, const SnapshotCallback& on_snapshot = {}) {
  Rng root(seed);
  env::PendulumEnv environment(spec, root.fork(10).next_u64());
  ReplayBuffer buffer(200000, root.fork(11).next_u64());
  sac::SacAgent agent =
      sac::SacAgent::init(spec.obs_dim(), spec.action_dim(), spec.action_bound, cfg, root.fork(13).next_u64());
  Rng act_rng = root.fork(16);
  MfResult result;
  double episode_return = 0.0;
  int snapshots = 0;
  for (int step = 0; step < total_steps; ++step) {
    double u;
    if (step < warmup_steps) {
      u = env::random_torque(spec, act_rng);
    } else {
      u = agent.policy_sample(Tensor::row(environment.observation()), sac::SampleMode::Stochastic, act_rng)
              .action[0];
    }
    env::Transition t = environment.step(u);
    episode_return += t.r;
    buffer.push(t);
    if (environment.episode_over()) {
      result.episode_returns.push_back(episode_return);
      episode_return = 0.0;
      environment.reset();
    }
    if (step >= warmup_steps)
      for (int g = 0; g < updates_per_step; ++g) agent.update(buffer.sample(cfg.batch_size));
    if (snapshot_every > 0 && (step + 1) % snapshot_every == 0 && on_snapshot)
      on_snapshot(snapshots++, agent);
  }
  result.agent = std::move(agent);
  return result;
}

inline double random_policy_mean_return(const env::EnvSpec& spec, std::uint64_t seed, int episodes) {
  Rng root(seed);
  env::PendulumEnv environment(spec, root.fork(10).next_u64());
  Rng act_rng = root.fork(16);
  double total = 0.0;
  for (int ep = 0; ep < episodes; ++ep) {
    environment.reset();
    double ret = 0.0;
    while (!environment.episode_over()) ret += environment.step(env::random_torque(spec, act_rng)).r;
    total += ret;
  }
  return total / episodes;
}

}  // namespace vagram::dyna
