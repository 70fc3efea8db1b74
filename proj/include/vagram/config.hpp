#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vagram/common.hpp"
#include "vagram/dyna.hpp"
#include "vagram/env.hpp"
#include "vagram/model_loss.hpp"
#include "vagram/nn.hpp"
#include "vagram/sac.hpp"

namespace vagram::config {

enum class ExperimentKind { Smoke, MfSnapshots, ModelLossStudy, LossSurface, DynaCompare };

inline std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::Smoke: return "smoke";
    case ExperimentKind::MfSnapshots: return "mf_snapshots";
    case ExperimentKind::ModelLossStudy: return "model_loss_study";
    case ExperimentKind::LossSurface: return "loss_surface";
    case ExperimentKind::DynaCompare: return "dyna_compare";
  }
  return "?";
}

inline ExperimentKind experiment_kind_from_string(const std::string& s) {
  if (s == "smoke") return ExperimentKind::Smoke;
  if (s == "mf_snapshots") return ExperimentKind::MfSnapshots;
  if (s == "model_loss_study") return ExperimentKind::ModelLossStudy;
  if (s == "loss_surface") return ExperimentKind::LossSurface;
  if (s == "dyna_compare") return ExperimentKind::DynaCompare;
  throw ConfigError("unknown experiment kind: " + s);
}

enum class ModelCapacity { Large, Small };

inline std::string to_string(ModelCapacity c) { return c == ModelCapacity::Large ? "large" : "small"; }

inline ModelCapacity capacity_from_string(const std::string& s) {
  if (s == "large") return ModelCapacity::Large;
  if (s == "small") return ModelCapacity::Small;
  throw ConfigError("unknown capacity: " + s);
}

enum class StudyArch { Linear, Mlp16 };

inline std::string to_string(StudyArch a) { return a == StudyArch::Linear ? "linear" : "mlp16"; }

inline StudyArch arch_from_string(const std::string& s) {
  if (s == "linear") return StudyArch::Linear;
  if (s == "mlp16") return StudyArch::Mlp16;
  throw ConfigError("unknown architecture: " + s);
}

// Declarative run description. Every key is typed, defaulted, and echoed
// back out as `resolved_config`.
struct ExperimentConfig {
  struct Experiment {
    std::optional<ExperimentKind> kind;
    std::uint64_t seed = 1;
    std::string out_dir = "out";
    int threads = 0;  // 0: VAGRAM_THREADS or hardware
  } experiment;

  struct Env {
    env::ObsMode obs_mode = env::ObsMode::Trig;
    int distractors = 0;
  } env_cfg;

  struct Sac {
    std::vector<int> hidden{64, 64};
    nn::Activation activation = nn::Activation::Relu;
    double lr = 3e-4;
    int batch_size = 128;
    double tau = 0.005;
    double gamma = 0.99;
    double alpha_init = 1.0;
    int updates_per_step = 1;
    int warmup_steps = 1000;
    int total_steps = 8000;
    int snapshot_every = 200;
  } sac_cfg;

  struct Model {
    std::vector<int> hidden{64, 64};
    nn::Activation activation = nn::Activation::Silu;
    nn::PredictMode mode = nn::PredictMode::Delta;
    nn::Optimizer::Kind optimizer = nn::Optimizer::Kind::Adam;
    double lr = 1e-3;
    int batch_size = 64;
    int ensemble_members = 5;
  } model;

  struct Loss {
    double lambda = 0.01;
    double bound_m = 1.0;
    int sac_k = 4;
    double clip_percentile = 95.0;  // 0 disables clipping
    std::vector<int> vf_indices{0, 1, 2, 3};
  } loss_cfg;

  struct Study {
    std::vector<loss::LossKind> losses{loss::LossKind::Mse, loss::LossKind::Vagram,
                                       loss::LossKind::IterVaml};
    std::vector<StudyArch> archs{StudyArch::Linear, StudyArch::Mlp16};
    std::vector<double> lrs;  // per-loss learning rates; empty -> model.lr for every loss
    int seeds = 8;
    int segments = 10;
    int steps_per_segment = 1000;
    int dataset_size = 10000;
    int heldout_size = 1000;
    std::string snapshot_dir;
    int snapshot_offset = 0;

    double lr_for(std::size_t loss_index, double fallback) const {
      if (lrs.empty()) return fallback;
      if (lrs.size() != losses.size())
        throw ConfigError("study.lrs must have one entry per study loss");
      return lrs[loss_index];
    }
  } study;

  struct Surface {
    int res_theta = 101;
    int res_theta_dot = 101;
    double ref_theta = 2.2;
    double ref_theta_dot = -1.0;
    double ref_action = 0.0;
    int train_steps = 4000;
    int vf_index = 0;
  } surface;

  struct Dyna {
    int epochs = 25;
    int env_steps_per_epoch = 200;
    int model_rollouts = 10;
    int rollout_horizon = 1;
    int policy_updates = 10;
    int init_random_steps = 500;
    int ramp_epochs = 15;
    double mix_start = 0.0;
    double mix_end = 0.95;
    int model_max_steps = 300;
    int model_patience = 5;
    int model_eval_every = 25;
    int reward_train_steps = 200;
    int eval_batch = 512;
    long buffer_capacity = 200000;
  } dyna_cfg;

  struct Compare {
    std::vector<loss::LossKind> losses{loss::LossKind::Vagram, loss::LossKind::Mse};
    std::vector<ModelCapacity> capacities{ModelCapacity::Large, ModelCapacity::Small};
    std::vector<int> distractor_dims{0, 4, 8};
    int seeds = 5;
    std::vector<int> model_hidden_large{64, 64};
    std::vector<int> model_hidden_small{6};
    bool with_mf_reference = true;
    int mf_steps = 10000;
    int random_episodes = 10;
    int final_window = 10;
  } compare;

  // Derived views ------------------------------------------------------

  env::EnvSpec make_env_spec() const {
    env::EnvSpec spec;
    spec.obs_mode = env_cfg.obs_mode;
    spec.distractor_dim = env_cfg.distractors;
    spec.gamma = sac_cfg.gamma;
    return spec;
  }

  sac::SacConfig make_sac_config() const {
    sac::SacConfig cfg;
    cfg.hidden = sac_cfg.hidden;
    cfg.activation = sac_cfg.activation;
    cfg.lr = sac_cfg.lr;
    cfg.batch_size = sac_cfg.batch_size;
    cfg.tau = sac_cfg.tau;
    cfg.gamma = sac_cfg.gamma;
    cfg.alpha_init = sac_cfg.alpha_init;
    return cfg;
  }

  loss::LossSpec make_loss_spec(loss::LossKind kind) const {
    loss::LossSpec spec;
    spec.kind = kind;
    spec.lambda = loss_cfg.lambda;
    spec.bound_m = loss_cfg.bound_m;
    spec.sac_k = loss_cfg.sac_k;
    if (loss_cfg.clip_percentile > 0.0) spec.clip_percentile = loss_cfg.clip_percentile;
    spec.vf_indices = loss_cfg.vf_indices;
    return spec;
  }

  dyna::DynaConfig make_dyna_config(loss::LossKind kind, const std::vector<int>& model_hidden) const {
    dyna::DynaConfig cfg;
    cfg.epochs = dyna_cfg.epochs;
    cfg.env_steps_per_epoch = dyna_cfg.env_steps_per_epoch;
    cfg.model_rollouts = dyna_cfg.model_rollouts;
    cfg.rollout_horizon = dyna_cfg.rollout_horizon;
    cfg.policy_updates = dyna_cfg.policy_updates;
    cfg.init_random_steps = dyna_cfg.init_random_steps;
    cfg.ramp_epochs = dyna_cfg.ramp_epochs;
    cfg.mix_start = dyna_cfg.mix_start;
    cfg.mix_end = dyna_cfg.mix_end;
    cfg.buffer_capacity = static_cast<std::size_t>(dyna_cfg.buffer_capacity);
    cfg.loss = make_loss_spec(kind);
    cfg.model_hidden = model_hidden;
    cfg.model_activation = model.activation;
    cfg.model_mode = model.mode;
    cfg.ensemble_members = model.ensemble_members;
    cfg.model_train.max_steps = dyna_cfg.model_max_steps;
    cfg.model_train.patience = dyna_cfg.model_patience;
    cfg.model_train.eval_every = dyna_cfg.model_eval_every;
    cfg.model_train.batch_size = model.batch_size;
    cfg.model_train.optimizer = model.optimizer;
    cfg.model_train.lr = model.lr;
    cfg.reward_train_steps = dyna_cfg.reward_train_steps;
    cfg.eval_batch = dyna_cfg.eval_batch;
    cfg.sac = make_sac_config();
    return cfg;
  }
};

// ---------------------------------------------------------------------------
// Strict key-value parser: `key = value` lines under `[section]` headers,
// `#` comments, every key typed and known, errors with line numbers.

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      const std::string t = trim(cur);
      if (!t.empty()) out.push_back(t);
      cur.clear();
    } else {
      cur += c;
    }
  }
  const std::string t = trim(cur);
  if (!t.empty()) out.push_back(t);
  return out;
}

struct Key {
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

inline long parse_long(const std::string& v) {
  std::size_t pos = 0;
  const long out = std::stol(v, &pos);
  if (pos != v.size()) throw ConfigError("not an integer: '" + v + "'");
  return out;
}

inline std::uint64_t parse_u64(const std::string& v) {
  std::size_t pos = 0;
  const unsigned long long out = std::stoull(v, &pos);
  if (pos != v.size()) throw ConfigError("not an unsigned integer: '" + v + "'");
  return out;
}

inline double parse_double(const std::string& v) {
  std::size_t pos = 0;
  const double out = std::stod(v, &pos);
  if (pos != v.size()) throw ConfigError("not a number: '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("not a boolean: '" + v + "'");
}

inline std::vector<int> parse_int_list(const std::string& v) {
  std::vector<int> out;
  for (const std::string& tok : split_list(v)) out.push_back(static_cast<int>(parse_long(tok)));
  return out;
}

inline std::vector<double> parse_double_list(const std::string& v) {
  std::vector<double> out;
  for (const std::string& tok : split_list(v)) out.push_back(parse_double(tok));
  return out;
}

inline std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += fmt_f64(v[i]);
  }
  return out;
}

inline std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

template <typename T, typename ToStr>
std::string join_enums(const std::vector<T>& v, ToStr to_str) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += to_str(v[i]);
  }
  return out;
}

// The full key registry in canonical serialization order.
inline const std::vector<std::pair<std::string, Key>>& registry() {
  using C = ExperimentConfig;
  static const std::vector<std::pair<std::string, Key>> keys = {
      {"experiment.kind",
       {[](C& c, const std::string& v) { c.experiment.kind = experiment_kind_from_string(v); },
        [](const C& c) { return c.experiment.kind ? to_string(*c.experiment.kind) : ""; }}},
      {"experiment.seed",
       {[](C& c, const std::string& v) { c.experiment.seed = parse_u64(v); },
        [](const C& c) { return std::to_string(c.experiment.seed); }}},
      {"experiment.out_dir",
       {[](C& c, const std::string& v) { c.experiment.out_dir = v; },
        [](const C& c) { return c.experiment.out_dir; }}},
      {"experiment.threads",
       {[](C& c, const std::string& v) { c.experiment.threads = static_cast<int>(parse_long(v)); },
        [](const C& c) { return std::to_string(c.experiment.threads); }}},
      {"env.obs_mode",
       {[](C& c, const std::string& v) { c.env_cfg.obs_mode = env::obs_mode_from_string(v); },
        [](const C& c) { return env::to_string(c.env_cfg.obs_mode); }}},
      {"env.distractors",
       {[](C& c, const std::string& v) { c.env_cfg.distractors = static_cast<int>(parse_long(v)); },
        [](const C& c) { return std::to_string(c.env_cfg.distractors); }}},
      {"sac.hidden",
       {[](C& c, const std::string& v) { c.sac_cfg.hidden = parse_int_list(v); },
        [](const C& c) { return join_ints(c.sac_cfg.hidden); }}},
      {"sac.activation",
       {[](C& c, const std::string& v) { c.sac_cfg.activation = nn::activation_from_string(v); },
        [](const C& c) { return nn::to_string(c.sac_cfg.activation); }}},
      {"sac.lr",
       {[](C& c, const std::string& v) { c.sac_cfg.lr = parse_double(v); },
        [](const C& c) { return fmt_f64(c.sac_cfg.lr); }}},
      {"sac.batch_size",
       {[](C& c, const std::string& v) { c.sac_cfg.batch_size = static_cast<int>(parse_long(v)); },
        [](const C& c) { return std::to_string(c.sac_cfg.batch_size); }}},
      {"sac.tau",
       {[](C& c, const std::string& v) { c.sac_cfg.tau = parse_double(v); },
        [](const C& c) { return fmt_f64(c.sac_cfg.tau); }}},
      {"sac.gamma",
       {[](C& c, const std::string& v) { c.sac_cfg.gamma = parse_double(v); },
        [](const C& c) { return fmt_f64(c.sac_cfg.gamma); }}},
      {"sac.alpha_init",
       {[](C& c, const std::string& v) { c.sac_cfg.alpha_init = parse_double(v); },
        [](const C& c) { return fmt_f64(c.sac_cfg.alpha_init); }}},
      {"sac.updates_per_step",
       {[](C& c, const std::string& v) { c.sac_cfg.updates_per_step = static_cast<int>(parse_long(v)); },
        [](const C& c) { return std::to_string(c.sac_cfg.updates_per_step); }}},
      {"sac.warmup_steps",
       {[](C& c, const std::string& v) { c.sac_cfg.warmup_steps = static_cast<int>(parse_long(v)); },
        [](const C& c) { return std::to_string(c.sac_cfg.warmup_steps); }}},
      {"sac.total_steps",
       {[](C& c, const std::string& v) { c.sac_cfg.total_steps = static_cast<int>(parse_long(v)); },
        [](const C& c) { return std::to_string(c.sac_cfg.total_steps); }}},
      {"sac.snapshot_every",
       {[](C& c, const std::string& v) { c.sac_cfg.snapshot_every = static_cast<int>(parse_long(v)); },
        [](const C& c) { return std::to_string(c.sac_cfg.snapshot_every); }}},
      {"model.hidden",
       {[](C& c, const std::string& v) { c.model.hidden = parse_int_list(v); },
        [](const C& c) { return join_ints(c.model.hidden); }}},
      {"model.activation",
       {[](C& c, const std::string& v) { c.model.activation = nn::activation_from_string(v); },
        [](const C& c) { return nn::to_string(c.model.activation); }}},
      {"model.mode",
       {[](C& c, const std::string& v) { c.model.mode = nn::predict_mode_from_string(v); },
        [](const C& c) { return nn::to_string(c.model.mode); }}},
      {"model.optimizer",
       {[](C& c, const std::string& v) {
          if (v == "adam")
            c.model.optimizer = nn::Optimizer::Kind::Adam;
          else if (v == "sgd")
            c.model.optimizer = nn::Optimizer::Kind::Sgd;
          else
            throw ConfigError("unknown optimizer: " + v);
        },
        [](const C& c) {
          return c.model.optimizer == nn::Optimizer::Kind::Adam ? "adam" : "sgd";
        }}},
      {"model.lr",
       {[](C& c, const std::string& v) { c.model.lr = parse_double(v); },
        [](const C& c) { return fmt_f64(c.model.lr); }}},
      {"model.batch_size",
       {[](C& c, const std::string& v) { c.model.batch_size = static_cast<int>(parse_long(v)); },
        [](const C& c) { return std::to_string(c.model.batch_size); }}},
      {"model.ensemble_members",
       {[](C& c, const std::string& v) { c.model.ensemble_members = static_cast<int>(parse_long(v)); },
        [](const C& c) { return std::to_string(c.model.ensemble_members); }}},
      {"loss.lambda",
       {[](C& c, const std::string& v) { c.loss_cfg.lambda = parse_double(v); },
        [](const C& c) { return fmt_f64(c.loss_cfg.lambda); }}},
      {"loss.bound_m",
       {[](C& c, const std::string& v) { c.loss_cfg.bound_m = parse_double(v); },
        [](const C& c) { return fmt_f64(c.loss_cfg.bound_m); }}},
      {"loss.sac_k",
       {[](C& c, const std::string& v) { c.loss_cfg.sac_k = static_cast<int>(parse_long(v)); },
        [](const C& c) { return std::to_string(c.loss_cfg.sac_k); }}},
      {"loss.clip_percentile",
       {[](C& c, const std::string& v) { c.loss_cfg.clip_percentile = parse_double(v); },
        [](const C& c) { return fmt_f64(c.loss_cfg.clip_percentile); }}},
      {"loss.vf_indices",
       {[](C& c, const std::string& v) { c.loss_cfg.vf_indices = parse_int_list(v); },
        [](const C& c) { return join_ints(c.loss_cfg.vf_indices); }}},
      {"study.losses",
       {[](C& c, const std::string& v) {
          c.study.losses.clear();
          for (const std::string& tok : split_list(v))
            c.study.losses.push_back(loss::loss_kind_from_string(tok));
        },
        [](const C& c) {
          return join_enums(c.study.losses, [](loss::LossKind k) { return loss::to_string(k); });
        }}},
      {"study.archs",
       {[](C& c, const std::string& v) {
          c.study.archs.clear();
          for (const std::string& tok : split_list(v)) c.study.archs.push_back(arch_from_string(tok));
        },
        [](const C& c) {
          return join_enums(c.study.archs, [](StudyArch a) { return to_string(a); });
        }}},
      {"study.lrs",
       {[](C& c, const std::string& v) { c.study.lrs = parse_double_list(v); },
        [](const C& c) { return join_doubles(c.study.lrs); }}},
      {"study.seeds",
       {[](C& c, const std::string& v) { c.study.seeds = static_cast<int>(parse_long(v)); },
        [](const C& c) { return std::to_string(c.study.seeds); }}},
      {"study.segments",
       {[](C& c, const std::string& v) { c.study.segments = static_cast<int>(parse_long(v)); },
        [](const C& c) { return std::to_string(c.study.segments); }}},
      {"study.steps_per_segment",
       {[](C& c, const std::string& v) { c.study.steps_per_segment = static_cast<int>(parse_long(v)); },
        [](const C& c) { return std::to_string(c.study.steps_per_segment); }}},
      {"study.dataset_size",
       {[](C& c, const std::string& v) { c.study.dataset_size = static_cast<int>(parse_long(v)); },
        [](const C& c) { return std::to_string(c.study.dataset_size); }}},
      {"study.heldout_size",
       {[](C& c, const std::string& v) { c.study.heldout_size = static_cast<int>(parse_long(v)); },
        [](const C& c) { return std::to_string(c.study.heldout_size); }}},
      {"study.snapshot_dir",
       {[](C& c, const std::string& v) { c.study.snapshot_dir = v; },
        [](const C& c) { return c.study.snapshot_dir; }}},
      {"study.snapshot_offset",
       {[](C& c, const std::string& v) { c.study.snapshot_offset = static_cast<int>(parse_long(v)); },
        [](const C& c) { return std::to_string(c.study.snapshot_offset); }}},
      {"surface.res_theta",
       {[](C& c, const std::string& v) { c.surface.res_theta = static_cast<int>(parse_long(v)); },
        [](const C& c) { return std::to_string(c.surface.res_theta); }}},
      {"surface.res_theta_dot",
       {[](C& c, const std::string& v) { c.surface.res_theta_dot = static_cast<int>(parse_long(v)); },
        [](const C& c) { return std::to_string(c.surface.res_theta_dot); }}},
      {"surface.ref_theta",
       {[](C& c, const std::string& v) { c.surface.ref_theta = parse_double(v); },
        [](const C& c) { return fmt_f64(c.surface.ref_theta); }}},
      {"surface.ref_theta_dot",
       {[](C& c, const std::string& v) { c.surface.ref_theta_dot = parse_double(v); },
        [](const C& c) { return fmt_f64(c.surface.ref_theta_dot); }}},
      {"surface.ref_action",
       {[](C& c, const std::string& v) { c.surface.ref_action = parse_double(v); },
        [](const C& c) { return fmt_f64(c.surface.ref_action); }}},
      {"surface.train_steps",
       {[](C& c, const std::string& v) { c.surface.train_steps = static_cast<int>(parse_long(v)); },
        [](const C& c) { return std::to_string(c.surface.train_steps); }}},
      {"surface.vf_index",
       {[](C& c, const std::string& v) { c.surface.vf_index = static_cast<int>(parse_long(v)); },
        [](const C& c) { return std::to_string(c.surface.vf_index); }}},
      {"dyna.epochs",
       {[](C& c, const std::string& v) { c.dyna_cfg.epochs = static_cast<int>(parse_long(v)); },
        [](const C& c) { return std::to_string(c.dyna_cfg.epochs); }}},
      {"dyna.env_steps_per_epoch",
       {[](C& c, const std::string& v) { c.dyna_cfg.env_steps_per_epoch = static_cast<int>(parse_long(v)); },
        [](const C& c) { return std::to_string(c.dyna_cfg.env_steps_per_epoch); }}},
      {"dyna.model_rollouts",
       {[](C& c, const std::string& v) { c.dyna_cfg.model_rollouts = static_cast<int>(parse_long(v)); },
        [](const C& c) { return std::to_string(c.dyna_cfg.model_rollouts); }}},
      {"dyna.rollout_horizon",
       {[](C& c, const std::string& v) { c.dyna_cfg.rollout_horizon = static_cast<int>(parse_long(v)); },
        [](const C& c) { return std::to_string(c.dyna_cfg.rollout_horizon); }}},
      {"dyna.policy_updates",
       {[](C& c, const std::string& v) { c.dyna_cfg.policy_updates = static_cast<int>(parse_long(v)); },
        [](const C& c) { return std::to_string(c.dyna_cfg.policy_updates); }}},
      {"dyna.init_random_steps",
       {[](C& c, const std::string& v) { c.dyna_cfg.init_random_steps = static_cast<int>(parse_long(v)); },
        [](const C& c) { return std::to_string(c.dyna_cfg.init_random_steps); }}},
      {"dyna.ramp_epochs",
       {[](C& c, const std::string& v) { c.dyna_cfg.ramp_epochs = static_cast<int>(parse_long(v)); },
        [](const C& c) { return std::to_string(c.dyna_cfg.ramp_epochs); }}},
      {"dyna.mix_start",
       {[](C& c, const std::string& v) { c.dyna_cfg.mix_start = parse_double(v); },
        [](const C& c) { return fmt_f64(c.dyna_cfg.mix_start); }}},
      {"dyna.mix_end",
       {[](C& c, const std::string& v) { c.dyna_cfg.mix_end = parse_double(v); },
        [](const C& c) { return fmt_f64(c.dyna_cfg.mix_end); }}},
      {"dyna.model_max_steps",
       {[](C& c, const std::string& v) { c.dyna_cfg.model_max_steps = static_cast<int>(parse_long(v)); },
        [](const C& c) { return std::to_string(c.dyna_cfg.model_max_steps); }}},
      {"dyna.model_patience",
       {[](C& c, const std::string& v) { c.dyna_cfg.model_patience = static_cast<int>(parse_long(v)); },
        [](const C& c) { return std::to_string(c.dyna_cfg.model_patience); }}},
      {"dyna.model_eval_every",
       {[](C& c, const std::string& v) { c.dyna_cfg.model_eval_every = static_cast<int>(parse_long(v)); },
        [](const C& c) { return std::to_string(c.dyna_cfg.model_eval_every); }}},
      {"dyna.reward_train_steps",
       {[](C& c, const std::string& v) { c.dyna_cfg.reward_train_steps = static_cast<int>(parse_long(v)); },
        [](const C& c) { return std::to_string(c.dyna_cfg.reward_train_steps); }}},
      {"dyna.eval_batch",
       {[](C& c, const std::string& v) { c.dyna_cfg.eval_batch = static_cast<int>(parse_long(v)); },
        [](const C& c) { return std::to_string(c.dyna_cfg.eval_batch); }}},
      {"dyna.buffer_capacity",
       {[](C& c, const std::string& v) { c.dyna_cfg.buffer_capacity = parse_long(v); },
        [](const C& c) { return std::to_string(c.dyna_cfg.buffer_capacity); }}},
      {"compare.losses",
       {[](C& c, const std::string& v) {
          c.compare.losses.clear();
          for (const std::string& tok : split_list(v))
            c.compare.losses.push_back(loss::loss_kind_from_string(tok));
        },
        [](const C& c) {
          return join_enums(c.compare.losses, [](loss::LossKind k) { return loss::to_string(k); });
        }}},
      {"compare.capacities",
       {[](C& c, const std::string& v) {
          c.compare.capacities.clear();
          for (const std::string& tok : split_list(v))
            c.compare.capacities.push_back(capacity_from_string(tok));
        },
        [](const C& c) {
          return join_enums(c.compare.capacities, [](ModelCapacity m) { return to_string(m); });
        }}},
      {"compare.distractor_dims",
       {[](C& c, const std::string& v) { c.compare.distractor_dims = parse_int_list(v); },
        [](const C& c) { return join_ints(c.compare.distractor_dims); }}},
      {"compare.seeds",
       {[](C& c, const std::string& v) { c.compare.seeds = static_cast<int>(parse_long(v)); },
        [](const C& c) { return std::to_string(c.compare.seeds); }}},
      {"compare.model_hidden_large",
       {[](C& c, const std::string& v) { c.compare.model_hidden_large = parse_int_list(v); },
        [](const C& c) { return join_ints(c.compare.model_hidden_large); }}},
      {"compare.model_hidden_small",
       {[](C& c, const std::string& v) { c.compare.model_hidden_small = parse_int_list(v); },
        [](const C& c) { return join_ints(c.compare.model_hidden_small); }}},
      {"compare.with_mf_reference",
       {[](C& c, const std::string& v) { c.compare.with_mf_reference = parse_bool(v); },
        [](const C& c) { return c.compare.with_mf_reference ? "true" : "false"; }}},
      {"compare.mf_steps",
       {[](C& c, const std::string& v) { c.compare.mf_steps = static_cast<int>(parse_long(v)); },
        [](const C& c) { return std::to_string(c.compare.mf_steps); }}},
      {"compare.random_episodes",
       {[](C& c, const std::string& v) { c.compare.random_episodes = static_cast<int>(parse_long(v)); },
        [](const C& c) { return std::to_string(c.compare.random_episodes); }}},
      {"compare.final_window",
       {[](C& c, const std::string& v) { c.compare.final_window = static_cast<int>(parse_long(v)); },
        [](const C& c) { return std::to_string(c.compare.final_window); }}},
  };
  return keys;
}

}  // namespace detail

inline ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::map<std::string, const detail::Key*> lookup;
  for (const auto& [name, key] : detail::registry()) lookup[name] = &key;

  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw ConfigError("line " + std::to_string(line_no) + ": malformed section header '" + t + "'");
      section = detail::trim(t.substr(1, t.size() - 2));
      continue;
    }
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value', got '" + t + "'");
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string value = detail::trim(t.substr(eq + 1));
    const std::string full = section.empty() ? key : section + "." + key;
    const auto it = lookup.find(full);
    if (it == lookup.end())
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + full + "'");
    try {
      it->second->set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": key '" + full + "': " + e.what());
    } catch (const std::exception& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": key '" + full + "': invalid value '" +
                        value + "'");
    }
  }
  return cfg;
}

inline ExperimentConfig parse_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  return parse_config_text(read_file(path));
}

// Canonical serialization: every key in registry order, grouped by section.
inline std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& [name, key] : detail::registry()) {
    const std::size_t dot = name.find('.');
    const std::string sec = name.substr(0, dot);
    if (sec != section) {
      if (!out.empty()) out += "\n";
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += name.substr(dot + 1) + " = " + key.get(cfg) + "\n";
  }
  return out;
}

}  // namespace vagram::config
