#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "vagram/common.hpp"
#include "vagram/tensor.hpp"

namespace vagram::env {

// One environment interaction tuple in the configured observation encoding.
struct Transition {
  std::vector<double> s;
  std::vector<double> a;
  double r = 0.0;
  std::vector<double> sp;
  bool done = false;
};

enum class ObsMode { Trig, Raw };

inline std::string to_string(ObsMode m) { return m == ObsMode::Trig ? "trig" : "raw"; }

inline ObsMode obs_mode_from_string(const std::string& s) {
  if (s == "trig") return ObsMode::Trig;
  if (s == "raw") return ObsMode::Raw;
  throw ConfigError("unknown obs_mode: " + s);
}

// Angle wrapped into (-pi, pi].
inline double wrap_angle(double theta) {
  double y = std::fmod(theta + M_PI, 2.0 * M_PI);
  if (y <= 0.0) y += 2.0 * M_PI;
  return y - M_PI;
}

struct PendulumState {
  double theta = 0.0;      // wrapped to (-pi, pi]
  double theta_dot = 0.0;  // clipped to [-max_speed, max_speed]
};

struct EnvSpec {
  ObsMode obs_mode = ObsMode::Trig;
  int distractor_dim = 0;
  double action_bound = 2.0;
  double gamma = 0.99;
  double dt = 0.05;
  double gravity = 10.0;
  double mass = 1.0;
  double length = 1.0;
  double max_speed = 8.0;
  int max_episode_steps = 200;

  int core_obs_dim() const { return obs_mode == ObsMode::Trig ? 3 : 2; }
  int obs_dim() const { return core_obs_dim() + distractor_dim; }
  int action_dim() const { return 1; }
};

// Frictionless pendulum update with torque clipping. Reward is evaluated at
// the pre-update state; the cost of the hanging position is -pi^2.
inline std::pair<PendulumState, double> pendulum_step(const PendulumState& s, double u,
                                                      const EnvSpec& spec = EnvSpec{}) {
  if (!std::isfinite(s.theta) || !std::isfinite(s.theta_dot) || !std::isfinite(u))
    throw NonFiniteError("pendulum_step: non-finite input");
  const double ub = spec.action_bound;
  const double uc = u < -ub ? -ub : (u > ub ? ub : u);
  const double th = wrap_angle(s.theta);
  const double reward = -(th * th + 0.1 * s.theta_dot * s.theta_dot + 0.001 * uc * uc);
  const double accel = 3.0 * spec.gravity / (2.0 * spec.length) * std::sin(s.theta) +
                       3.0 / (spec.mass * spec.length * spec.length) * uc;
  double new_dot = s.theta_dot + accel * spec.dt;
  if (new_dot > spec.max_speed) new_dot = spec.max_speed;
  if (new_dot < -spec.max_speed) new_dot = -spec.max_speed;
  const double new_theta = wrap_angle(s.theta + new_dot * spec.dt);
  return {PendulumState{new_theta, new_dot}, reward};
}

// Autonomous distractor dynamics z' = z + sin(A z), reset to s0 whenever any
// candidate component reaches the bound in magnitude. A and s0 are drawn
// once at construction and never resampled.
struct DistractorSpec {
  int dim = 0;
  Tensor a_matrix;            // [k, k]
  std::vector<double> s0;     // k
  double bound = 20.0;

  static DistractorSpec make(int k, std::uint64_t seed) {
    if (k < 0) throw ConfigError("DistractorSpec: negative dimension");
    DistractorSpec spec;
    spec.dim = k;
    spec.a_matrix = Tensor({k, k});
    Rng rng(seed);
    for (long i = 0; i < spec.a_matrix.size(); ++i) spec.a_matrix[i] = rng.normal(0.0, 10.0);
    spec.s0.resize(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) spec.s0[static_cast<std::size_t>(i)] = rng.normal(0.0, 0.1);
    return spec;
  }
};

inline std::vector<double> distractor_step(const std::vector<double>& z, const DistractorSpec& spec) {
  if (static_cast<int>(z.size()) != spec.dim)
    throw ShapeError("distractor_step: z has dim " + std::to_string(z.size()) + ", spec has " +
                     std::to_string(spec.dim));
  const int k = spec.dim;
  std::vector<double> candidate(z.size());
  for (int i = 0; i < k; ++i) {
    double az = 0.0;
    for (int j = 0; j < k; ++j) az += spec.a_matrix.at(i, j) * z[static_cast<std::size_t>(j)];
    candidate[static_cast<std::size_t>(i)] = z[static_cast<std::size_t>(i)] + std::sin(az);
  }
  for (double c : candidate)
    if (std::fabs(c) >= spec.bound) return spec.s0;
  return candidate;
}

inline std::vector<double> observe(const PendulumState& s, const std::vector<double>& z,
                                   const EnvSpec& spec) {
  std::vector<double> obs;
  obs.reserve(static_cast<std::size_t>(spec.obs_dim()));
  if (spec.obs_mode == ObsMode::Trig) {
    obs.push_back(std::cos(s.theta));
    obs.push_back(std::sin(s.theta));
    obs.push_back(s.theta_dot);
  } else {
    obs.push_back(s.theta);
    obs.push_back(s.theta_dot);
  }
  obs.insert(obs.end(), z.begin(), z.end());
  return obs;
}

// Recovers the core pendulum state from an observation (exact in raw mode).
inline PendulumState core_state_from_obs(const std::vector<double>& obs, const EnvSpec& spec) {
  if (static_cast<int>(obs.size()) < spec.core_obs_dim())
    throw ShapeError("core_state_from_obs: observation too short");
  if (spec.obs_mode == ObsMode::Trig) return PendulumState{std::atan2(obs[1], obs[0]), obs[2]};
  return PendulumState{obs[0], obs[1]};
}

// Pendulum with optional appended distractor dimensions. The distractor part
// evolves independently and never contributes to the reward.
class PendulumEnv {
 public:
  PendulumEnv(const EnvSpec& spec, std::uint64_t seed)
      : spec_(spec),
        distractor_(DistractorSpec::make(spec.distractor_dim, Rng(seed).fork(77).next_u64())),
        rng_(Rng(seed).fork(78)) {
    reset();
  }

  const EnvSpec& spec() const { return spec_; }
  const DistractorSpec& distractor() const { return distractor_; }
  const PendulumState& core_state() const { return state_; }
  const std::vector<double>& distractor_state() const { return z_; }
  int steps_in_episode() const { return steps_in_episode_; }

  std::vector<double> reset() {
    state_.theta = wrap_angle(rng_.uniform(-M_PI, M_PI));
    state_.theta_dot = rng_.uniform(-1.0, 1.0);
    z_ = distractor_.s0;
    steps_in_episode_ = 0;
    return observe(state_, z_, spec_);
  }

  std::vector<double> reset_to(const PendulumState& s) {
    state_ = PendulumState{wrap_angle(s.theta), s.theta_dot};
    z_ = distractor_.s0;
    steps_in_episode_ = 0;
    return observe(state_, z_, spec_);
  }

  // One transition. The done flag is always false: the pendulum task is
  // non-terminating and episode boundaries are time-limit truncations.
  Transition step(double u) {
    Transition t;
    t.s = observe(state_, z_, spec_);
    t.a = {u};
    auto [next, reward] = pendulum_step(state_, u, spec_);
    z_ = distractor_step(z_, distractor_);
    state_ = next;
    t.r = reward;
    t.sp = observe(state_, z_, spec_);
    t.done = false;
    ++steps_in_episode_;
    return t;
  }

  bool episode_over() const { return steps_in_episode_ >= spec_.max_episode_steps; }

  std::vector<double> observation() const { return observe(state_, z_, spec_); }

 private:
  EnvSpec spec_;
  DistractorSpec distractor_;
  PendulumState state_;
  std::vector<double> z_;
  Rng rng_;
  int steps_in_episode_ = 0;
};

enum class DatasetSource { UniformState, PolicyRollout };

// Policy used for rollout-sourced datasets: obs -> torque.
using PolicyFn = std::function<double(const std::vector<double>&, Rng&)>;

inline double random_torque(const EnvSpec& spec, Rng& rng) {
  return rng.uniform(-spec.action_bound, spec.action_bound);
}

// Transitions in the configured observation encoding. uniform_state draws
// (theta, theta_dot, a) uniformly over the whole state-action space and uses
// the true transition function for s'; policy_rollout runs episodes.
inline std::vector<Transition> sample_dataset(int n, DatasetSource source, std::uint64_t seed,
                                              const EnvSpec& spec = EnvSpec{},
                                              const PolicyFn& policy = {}) {
  if (n < 1) throw ConfigError("sample_dataset: n must be >= 1");
  std::vector<Transition> out;
  out.reserve(static_cast<std::size_t>(n));
  if (source == DatasetSource::UniformState) {
    PendulumEnv env(spec, seed);
    Rng rng = Rng(seed).fork(101);
    while (static_cast<int>(out.size()) < n) {
      const PendulumState s{wrap_angle(rng.uniform(-M_PI, M_PI)), rng.uniform(-spec.max_speed, spec.max_speed)};
      env.reset_to(s);
      const double u = rng.uniform(-spec.action_bound, spec.action_bound);
      out.push_back(env.step(u));
    }
    return out;
  }
  PendulumEnv env(spec, seed);
  Rng rng = Rng(seed).fork(102);
  env.reset();
  while (static_cast<int>(out.size()) < n) {
    if (env.episode_over()) env.reset();
    const std::vector<double> obs = env.observation();
    const double u = policy ? policy(obs, rng) : random_torque(spec, rng);
    out.push_back(env.step(u));
  }
  return out;
}

// CSV dump with header s_0..s_{d-1}, a_0, r, sp_0..sp_{d-1}, done.
inline std::string dataset_to_csv(const std::vector<Transition>& data) {
  if (data.empty()) throw Error("dataset_to_csv: empty dataset");
  const std::size_t d = data.front().s.size();
  std::string out;
  for (std::size_t i = 0; i < d; ++i) out += "s_" + std::to_string(i) + ",";
  out += "a_0,r,";
  for (std::size_t i = 0; i < d; ++i) out += "sp_" + std::to_string(i) + ",";
  out += "done\n";
  for (const Transition& t : data) {
    for (double v : t.s) out += fmt_f64(v) + ",";
    out += fmt_f64(t.a[0]) + "," + fmt_f64(t.r) + ",";
    for (double v : t.sp) out += fmt_f64(v) + ",";
    out += t.done ? "1\n" : "0\n";
  }
  return out;
}

// Batch assembly helpers shared by the agent and model-training code.
inline Tensor stack_rows(const std::vector<Transition>& batch,
                         const std::function<const std::vector<double>&(const Transition&)>& field) {
  if (batch.empty()) throw Error("stack_rows: empty batch");
  const int n = static_cast<int>(field(batch.front()).size());
  Tensor out({static_cast<int>(batch.size()), n});
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const std::vector<double>& row = field(batch[i]);
    for (int j = 0; j < n; ++j) out.at(static_cast<int>(i), j) = row[static_cast<std::size_t>(j)];
  }
  return out;
}

struct BatchTensors {
  Tensor s, a, r, sp, done;
};

inline BatchTensors make_batch(const std::vector<Transition>& batch) {
  BatchTensors b;
  b.s = stack_rows(batch, [](const Transition& t) -> const std::vector<double>& { return t.s; });
  b.a = stack_rows(batch, [](const Transition& t) -> const std::vector<double>& { return t.a; });
  b.sp = stack_rows(batch, [](const Transition& t) -> const std::vector<double>& { return t.sp; });
  b.r = Tensor({static_cast<int>(batch.size()), 1});
  b.done = Tensor({static_cast<int>(batch.size()), 1});
  for (std::size_t i = 0; i < batch.size(); ++i) {
    b.r[static_cast<long>(i)] = batch[i].r;
    b.done[static_cast<long>(i)] = batch[i].done ? 1.0 : 0.0;
  }
  return b;
}

}  // namespace vagram::env
