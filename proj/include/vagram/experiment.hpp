#pragma once

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "vagram/config.hpp"
#include "vagram/dyna.hpp"
#include "vagram/metrics.hpp"

namespace vagram::experiment {

namespace fs = std::filesystem;
using config::ExperimentConfig;

// Worker-pool over an index range. Jobs must be independent; the first
// exception is rethrown after all workers join.
inline void parallel_for(int jobs, int threads, const std::function<void(int)>& fn) {
  if (jobs <= 0) return;
  threads = std::max(1, std::min(threads, jobs));
  if (threads == 1) {
    for (int i = 0; i < jobs; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= jobs) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

inline int thread_budget(const ExperimentConfig& cfg) {
  if (cfg.experiment.threads > 0) return cfg.experiment.threads;
  if (const char* env_var = std::getenv("VAGRAM_THREADS")) {
    const int n = std::atoi(env_var);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

// Shared run setup: create the output directory and echo the fully resolved
// configuration into it.
inline fs::path prepare_out_dir(const ExperimentConfig& cfg) {
  const fs::path out(cfg.experiment.out_dir);
  fs::create_directories(out);
  write_file_atomic(out / "resolved_config", config::serialize_config(cfg));
  return out;
}

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

inline std::string snapshot_dir_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "epoch_%04d", index);
  return buf;
}

// ---------------------------------------------------------------------------
// mf-snapshots: model-free SAC on Pendulum, checkpointing the value bundle
// every snapshot_every environment steps.

inline void run_mf_snapshots(const ExperimentConfig& cfg) {
  const fs::path out = prepare_out_dir(cfg);
  Stopwatch watch;
  const env::EnvSpec spec = cfg.make_env_spec();
  int snapshots = 0;
  const dyna::MfResult result = dyna::train_model_free(
      spec, cfg.make_sac_config(), cfg.sac_cfg.total_steps, cfg.sac_cfg.updates_per_step,
      cfg.sac_cfg.warmup_steps, cfg.experiment.seed, cfg.sac_cfg.snapshot_every,
      [&](int index, const sac::SacAgent& agent) {
        agent.save(out / "snapshots" / snapshot_dir_name(index));
        snapshots = index + 1;
      });

  CsvTable returns({"episode", "return"});
  for (std::size_t i = 0; i < result.episode_returns.size(); ++i)
    returns.add_row({CsvTable::cell(static_cast<long>(i)), CsvTable::cell(result.episode_returns[i])});
  returns.write(out / "returns.csv");
  write_file_atomic(out / "timing.log",
                    "mf_snapshots seconds=" + fmt_f64(watch.seconds()) + " snapshots=" +
                        std::to_string(snapshots) + "\n");
}

// ---------------------------------------------------------------------------
// loss-study: train models against a saved sequence of value functions,
// advancing the value function every steps_per_segment gradient steps.

namespace detail {

inline std::vector<int> arch_hidden(config::StudyArch arch) {
  switch (arch) {
    case config::StudyArch::Linear: return {};
    case config::StudyArch::Mlp16: return {16};
  }
  return {};
}

struct StudyCell {
  loss::LossKind kind;
  std::size_t loss_index;
  config::StudyArch arch;
  int seed_index;
};

struct StudyPoint {
  int segment;
  long steps;
  double vaml_error;
  double mse_error;
};

}  // namespace detail

inline void run_model_loss_study(const ExperimentConfig& cfg) {
  if (cfg.study.snapshot_dir.empty())
    throw ConfigError("model_loss_study: study.snapshot_dir is required");
  const fs::path out = prepare_out_dir(cfg);
  Stopwatch watch;
  const env::EnvSpec spec = cfg.make_env_spec();

  // Load the snapshot sequence up front; a missing epoch is a hard error.
  std::vector<sac::SacAgent> agents;
  std::vector<ValueBundle> bundles;
  for (int seg = 0; seg < cfg.study.segments; ++seg) {
    const int index = cfg.study.snapshot_offset + seg;
    const fs::path dir = fs::path(cfg.study.snapshot_dir) / snapshot_dir_name(index);
    if (!fs::exists(dir / "agent.json"))
      throw ConfigError("model_loss_study: missing snapshot for epoch " + std::to_string(index) +
                        " at " + dir.string());
    sac::SacAgent agent = sac::SacAgent::load(dir, cfg.make_sac_config(), cfg.experiment.seed);
    if (agent.obs_dim() != spec.obs_dim())
      throw ConfigError("model_loss_study: snapshot obs dim " + std::to_string(agent.obs_dim()) +
                        " does not match env obs dim " + std::to_string(spec.obs_dim()));
    bundles.push_back(agent.value_bundle());
    agents.push_back(std::move(agent));
  }

  // One dataset + held-out set per seed, shared across losses and archs so
  // per-seed comparisons are paired.
  std::vector<env::BatchTensors> datasets, heldouts;
  for (int s = 0; s < cfg.study.seeds; ++s) {
    const std::uint64_t data_seed = Rng(cfg.experiment.seed).fork(300 + static_cast<std::uint64_t>(s)).next_u64();
    datasets.push_back(env::make_batch(
        env::sample_dataset(cfg.study.dataset_size, env::DatasetSource::UniformState, data_seed, spec)));
    heldouts.push_back(env::make_batch(env::sample_dataset(
        cfg.study.heldout_size, env::DatasetSource::UniformState, data_seed ^ 0x9e3779b9ULL, spec)));
  }

  std::vector<detail::StudyCell> cells;
  for (std::size_t li = 0; li < cfg.study.losses.size(); ++li)
    for (config::StudyArch arch : cfg.study.archs)
      for (int s = 0; s < cfg.study.seeds; ++s) cells.push_back({cfg.study.losses[li], li, arch, s});

  std::vector<std::vector<detail::StudyPoint>> results(cells.size());
  parallel_for(static_cast<int>(cells.size()), thread_budget(cfg), [&](int ci) {
    const detail::StudyCell& cell = cells[static_cast<std::size_t>(ci)];
    const loss::LossSpec lspec = cfg.make_loss_spec(cell.kind);
    lspec.validate();
    const env::BatchTensors& data = datasets[static_cast<std::size_t>(cell.seed_index)];
    const env::BatchTensors& held = heldouts[static_cast<std::size_t>(cell.seed_index)];
    Rng rng = Rng(cfg.experiment.seed)
                  .fork(1000 + static_cast<std::uint64_t>(ci));
    nn::DeterministicModel model = nn::DeterministicModel::init(
        spec.obs_dim(), spec.action_dim(), detail::arch_hidden(cell.arch), nn::Activation::Relu,
        cfg.model.mode, rng.fork(1).next_u64());
    nn::Optimizer opt(cfg.model.optimizer, cfg.study.lr_for(cell.loss_index, cfg.model.lr));
    Rng batch_rng = rng.fork(2), loss_rng = rng.fork(3);

    const int n = data.s.rows();
    const int batch = std::min(cfg.model.batch_size, n);
    std::vector<detail::StudyPoint>& points = results[static_cast<std::size_t>(ci)];
    // A cell whose optimization produces non-finite values stops training
    // and keeps its last finite parameters; evaluations that overflow are
    // recorded as infinity rather than fabricated.
    bool diverged = false;
    for (int seg = 0; seg < cfg.study.segments; ++seg) {
      const ValueBundle& bundle = bundles[static_cast<std::size_t>(seg)];
      for (int step = 0; step < cfg.study.steps_per_segment && !diverged; ++step) {
        Tensor bs({batch, data.s.cols()}), ba({batch, data.a.cols()}), bsp({batch, data.sp.cols()});
        for (int i = 0; i < batch; ++i) {
          const int row = static_cast<int>(batch_rng.integer(static_cast<std::uint64_t>(n)));
          for (int j = 0; j < data.s.cols(); ++j) bs.at(i, j) = data.s.at(row, j);
          for (int j = 0; j < data.a.cols(); ++j) ba.at(i, j) = data.a.at(row, j);
          for (int j = 0; j < data.sp.cols(); ++j) bsp.at(i, j) = data.sp.at(row, j);
        }
        try {
          const loss::PreparedBatch pb = loss::prepare_batch(lspec, bundle, bs, ba, bsp);
          ad::Tape tape;
          std::vector<ad::Id> pids;
          const ad::Id f = model.predict(tape, tape.constant(bs), tape.constant(ba), true, &pids);
          const ad::Id l = loss::multi_vf_loss(tape, lspec, bundle, pb, f,
                                               &agents[static_cast<std::size_t>(seg)], &loss_rng);
          const auto gm = tape.backward(l);
          opt.step(model.net().params(), nn::collect_grads(gm, pids));
        } catch (const NonFiniteError&) {
          diverged = true;
        }
      }
      const ValueFn& eval_v = *bundle[static_cast<std::size_t>(lspec.vf_indices.front())];
      detail::StudyPoint point;
      point.segment = seg;
      point.steps = static_cast<long>(seg + 1) * cfg.study.steps_per_segment;
      try {
        point.vaml_error = loss::eval_vaml_error(eval_v, model, held.s, held.a, held.sp);
        point.mse_error = loss::mse_loss(model.predict(held.s, held.a), held.sp);
      } catch (const NonFiniteError&) {
        point.vaml_error = std::numeric_limits<double>::infinity();
        point.mse_error = std::numeric_limits<double>::infinity();
      }
      points.push_back(point);
    }
  });

  CsvTable table({"loss", "arch", "seed", "segment", "steps", "vaml_error", "mse_error"});
  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    const detail::StudyCell& cell = cells[ci];
    for (const detail::StudyPoint& p : results[ci])
      table.add_row({loss::to_string(cell.kind), config::to_string(cell.arch),
                     CsvTable::cell(cell.seed_index), CsvTable::cell(p.segment), CsvTable::cell(p.steps),
                     CsvTable::cell(p.vaml_error), CsvTable::cell(p.mse_error)});
  }
  table.write(out / "study.csv");
  write_file_atomic(out / "timing.log", "model_loss_study seconds=" + fmt_f64(watch.seconds()) + "\n");
}

// ---------------------------------------------------------------------------
// loss-surface: evaluate each loss over a (theta, theta_dot) prediction grid
// against a fixed reference transition. Always computed in raw observation
// space; the value bundle is trained on raw observations internally.

struct SurfaceReference {
  env::PendulumState s;
  double action;
  env::PendulumState sp;
  double value_sp;
  Tensor grad;  // [1, 2]
};

inline void run_loss_surface(const ExperimentConfig& cfg) {
  if (cfg.surface.res_theta < 2 || cfg.surface.res_theta_dot < 2)
    throw ConfigError("loss_surface: grid resolution must be at least 2 per axis");
  const fs::path out = prepare_out_dir(cfg);
  Stopwatch watch;
  env::EnvSpec spec;
  spec.obs_mode = env::ObsMode::Raw;
  spec.gamma = cfg.sac_cfg.gamma;

  const dyna::MfResult mf = dyna::train_model_free(spec, cfg.make_sac_config(), cfg.surface.train_steps,
                                                   cfg.sac_cfg.updates_per_step,
                                                   cfg.sac_cfg.warmup_steps, cfg.experiment.seed);
  if (cfg.surface.vf_index < 0 || cfg.surface.vf_index > 3)
    throw ConfigError("loss_surface: vf_index must be in [0, 3]");
  const auto v = mf.agent.value_fn(cfg.surface.vf_index);

  SurfaceReference ref;
  ref.s = env::PendulumState{cfg.surface.ref_theta, cfg.surface.ref_theta_dot};
  ref.action = cfg.surface.ref_action;
  ref.sp = env::pendulum_step(ref.s, ref.action, spec).first;
  const Tensor sp_row = Tensor::row({ref.sp.theta, ref.sp.theta_dot});
  ref.value_sp = v->evaluate(sp_row).value();
  ref.grad = per_sample_value_gradients(*v, sp_row);

  const int nt = cfg.surface.res_theta, nd = cfg.surface.res_theta_dot;
  Tensor grid({nt * nd, 2});
  for (int i = 0; i < nt; ++i) {
    const double theta = -M_PI + 2.0 * M_PI * i / (nt - 1);
    for (int j = 0; j < nd; ++j) {
      const double theta_dot = -8.0 + 16.0 * j / (nd - 1);
      grid.at(i * nd + j, 0) = theta;
      grid.at(i * nd + j, 1) = theta_dot;
    }
  }
  const Tensor values = v->evaluate(grid);

  CsvTable table({"theta", "theta_dot", "value", "loss_mse", "loss_vaml", "loss_vagram", "loss_taylor"});
  const double g0 = ref.grad[0], g1 = ref.grad[1];
  for (int c = 0; c < nt * nd; ++c) {
    const double d0 = grid.at(c, 0) - ref.sp.theta;
    const double d1 = grid.at(c, 1) - ref.sp.theta_dot;
    const double mse = d0 * d0 + d1 * d1;
    const double vaml = (ref.value_sp - values[c]) * (ref.value_sp - values[c]);
    const double vagram = g0 * g0 * d0 * d0 + g1 * g1 * d1 * d1;
    const double taylor = (g0 * d0 + g1 * d1) * (g0 * d0 + g1 * d1);
    table.add_row({CsvTable::cell(grid.at(c, 0)), CsvTable::cell(grid.at(c, 1)),
                   CsvTable::cell(values[c]), CsvTable::cell(mse), CsvTable::cell(vaml),
                   CsvTable::cell(vagram), CsvTable::cell(taylor)});
  }
  table.write(out / "surface.csv");

  nlohmann::json ref_json{{"theta", ref.s.theta},
                          {"theta_dot", ref.s.theta_dot},
                          {"action", ref.action},
                          {"next_theta", ref.sp.theta},
                          {"next_theta_dot", ref.sp.theta_dot},
                          {"value_sp", ref.value_sp},
                          {"grad", {g0, g1}}};
  write_file_atomic(out / "reference.json", ref_json.dump(2) + "\n");
  write_file_atomic(out / "timing.log", "loss_surface seconds=" + fmt_f64(watch.seconds()) + "\n");
}

// ---------------------------------------------------------------------------
// dyna-compare: the full Dyna loop for every loss x capacity x distractor
// count x seed, with in-run random and model-free baselines.

namespace detail {

struct CompareCell {
  loss::LossKind kind;
  config::ModelCapacity capacity;
  int distractors;
  int seed_index;

  std::string name() const {
    return loss::to_string(kind) + "_" + config::to_string(capacity) + "_k" +
           std::to_string(distractors) + "_seed" + std::to_string(seed_index);
  }
};

struct CompareOutcome {
  std::optional<double> final_return;
  int episodes = 0;
  std::string status = "ok";
};

inline double final_window_mean(const std::vector<double>& returns, int window) {
  if (returns.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(window), returns.size());
  double acc = 0.0;
  for (std::size_t i = returns.size() - n; i < returns.size(); ++i) acc += returns[i];
  return acc / static_cast<double>(n);
}

}  // namespace detail

inline void run_dyna_compare(const ExperimentConfig& cfg) {
  const fs::path out = prepare_out_dir(cfg);
  Stopwatch watch;

  std::vector<detail::CompareCell> cells;
  for (loss::LossKind kind : cfg.compare.losses)
    for (config::ModelCapacity cap : cfg.compare.capacities)
      for (int k : cfg.compare.distractor_dims)
        for (int s = 0; s < cfg.compare.seeds; ++s) cells.push_back({kind, cap, k, s});

  // Baselines per (distractor count, seed), shared across losses and sizes.
  struct BaselineJob {
    int distractors;
    int seed_index;
  };
  std::vector<BaselineJob> baseline_jobs;
  for (int k : cfg.compare.distractor_dims)
    for (int s = 0; s < cfg.compare.seeds; ++s) baseline_jobs.push_back({k, s});

  std::map<std::pair<int, int>, double> random_baseline;
  std::map<std::pair<int, int>, double> mf_reference;
  std::mutex baseline_mutex;
  parallel_for(static_cast<int>(baseline_jobs.size()), thread_budget(cfg), [&](int i) {
    const BaselineJob& job = baseline_jobs[static_cast<std::size_t>(i)];
    env::EnvSpec spec = cfg.make_env_spec();
    spec.distractor_dim = job.distractors;
    const std::uint64_t seed = cfg.experiment.seed + static_cast<std::uint64_t>(job.seed_index);
    const double rnd = dyna::random_policy_mean_return(spec, seed, cfg.compare.random_episodes);
    std::optional<double> mf;
    if (cfg.compare.with_mf_reference) {
      const dyna::MfResult r = dyna::train_model_free(spec, cfg.make_sac_config(), cfg.compare.mf_steps,
                                                      cfg.sac_cfg.updates_per_step,
                                                      cfg.sac_cfg.warmup_steps, seed);
      mf = detail::final_window_mean(r.episode_returns, cfg.compare.final_window);
    }
    std::lock_guard<std::mutex> lock(baseline_mutex);
    random_baseline[{job.distractors, job.seed_index}] = rnd;
    if (mf) mf_reference[{job.distractors, job.seed_index}] = *mf;
  });

  std::vector<detail::CompareOutcome> outcomes(cells.size());
  parallel_for(static_cast<int>(cells.size()), thread_budget(cfg), [&](int ci) {
    const detail::CompareCell& cell = cells[static_cast<std::size_t>(ci)];
    detail::CompareOutcome& outcome = outcomes[static_cast<std::size_t>(ci)];
    try {
      env::EnvSpec spec = cfg.make_env_spec();
      spec.distractor_dim = cell.distractors;
      const std::vector<int>& hidden = cell.capacity == config::ModelCapacity::Large
                                           ? cfg.compare.model_hidden_large
                                           : cfg.compare.model_hidden_small;
      const dyna::DynaConfig dcfg = cfg.make_dyna_config(cell.kind, hidden);
      const std::uint64_t seed = cfg.experiment.seed + static_cast<std::uint64_t>(cell.seed_index);
      const dyna::DynaResult result = dyna::dyna_train(dcfg, spec, seed, cell.name());
      CsvTable table(dyna::metrics_columns());
      for (const auto& row : result.rows) dyna::append_metrics_row(table, row);
      table.write(out / ("dyna_" + cell.name() + ".csv"));
      outcome.final_return = detail::final_window_mean(result.episode_returns, cfg.compare.final_window);
      outcome.episodes = static_cast<int>(result.episode_returns.size());
    } catch (const std::exception& e) {
      outcome.status = std::string("error: ") + e.what();
    }
  });

  CsvTable summary({"loss", "capacity", "distractors", "seed", "final_return_mean", "episodes",
                    "random_baseline", "mf_reference", "status"});
  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    const detail::CompareCell& cell = cells[ci];
    const detail::CompareOutcome& o = outcomes[ci];
    const auto key = std::make_pair(cell.distractors, cell.seed_index);
    const auto mf_it = mf_reference.find(key);
    summary.add_row({loss::to_string(cell.kind), config::to_string(cell.capacity),
                     CsvTable::cell(cell.distractors), CsvTable::cell(cell.seed_index),
                     o.final_return ? CsvTable::cell(*o.final_return) : std::string(),
                     CsvTable::cell(o.episodes), CsvTable::cell(random_baseline.at(key)),
                     mf_it != mf_reference.end() ? CsvTable::cell(mf_it->second) : std::string(),
                     o.status});
  }
  summary.write(out / "summary.csv");
  write_file_atomic(out / "timing.log", "dyna_compare seconds=" + fmt_f64(watch.seconds()) + "\n");
}

// ---------------------------------------------------------------------------
// smoke: a fast end-to-end pass over the main code paths.

inline void run_smoke(const ExperimentConfig& cfg) {
  const fs::path out = prepare_out_dir(cfg);
  Stopwatch watch;

  dyna::DynaConfig dcfg = cfg.make_dyna_config(loss::LossKind::Vagram, {16});
  dcfg.epochs = 2;
  dcfg.env_steps_per_epoch = 50;
  dcfg.model_rollouts = 2;
  dcfg.policy_updates = 1;
  dcfg.init_random_steps = 64;
  dcfg.model_train.max_steps = 20;
  dcfg.model_train.eval_every = 10;
  dcfg.reward_train_steps = 10;
  dcfg.eval_batch = 32;
  dcfg.sac.batch_size = 32;
  dcfg.sac.hidden = {16};
  const dyna::DynaResult result = dyna::dyna_train(dcfg, cfg.make_env_spec(), cfg.experiment.seed, "smoke");
  CsvTable table(dyna::metrics_columns());
  for (const auto& row : result.rows) dyna::append_metrics_row(table, row);
  table.write(out / "smoke_metrics.csv");

  ExperimentConfig surface_cfg = cfg;
  surface_cfg.surface.res_theta = 11;
  surface_cfg.surface.res_theta_dot = 11;
  surface_cfg.surface.train_steps = 300;
  surface_cfg.sac_cfg.warmup_steps = 100;
  surface_cfg.sac_cfg.hidden = {16};
  surface_cfg.experiment.out_dir = (out / "surface").string();
  run_loss_surface(surface_cfg);
  write_file_atomic(out / "timing.log", "smoke seconds=" + fmt_f64(watch.seconds()) + "\n");
}

inline void dispatch(const ExperimentConfig& cfg) {
  if (!cfg.experiment.kind) throw ConfigError("no experiment kind resolved");
  switch (*cfg.experiment.kind) {
    case config::ExperimentKind::Smoke: run_smoke(cfg); return;
    case config::ExperimentKind::MfSnapshots: run_mf_snapshots(cfg); return;
    case config::ExperimentKind::ModelLossStudy: run_model_loss_study(cfg); return;
    case config::ExperimentKind::LossSurface: run_loss_surface(cfg); return;
    case config::ExperimentKind::DynaCompare: run_dyna_compare(cfg); return;
  }
}

// CLI core: `<binary> <subcommand> --config <path> [--out <dir>] [--seed <u64>]`.
// Exit codes: 0 success, 1 configuration error, 2 runtime error.
inline int run_cli(const std::vector<std::string>& args, std::ostream& err = std::cerr) {
  static const std::map<std::string, config::ExperimentKind> subcommands = {
      {"mf-snapshots", config::ExperimentKind::MfSnapshots},
      {"loss-study", config::ExperimentKind::ModelLossStudy},
      {"loss-surface", config::ExperimentKind::LossSurface},
      {"dyna-compare", config::ExperimentKind::DynaCompare},
      {"smoke", config::ExperimentKind::Smoke},
  };
  try {
    if (args.empty() || args[0] == "-h" || args[0] == "--help") {
      err << "usage: vagram <mf-snapshots|loss-study|loss-surface|dyna-compare|smoke>"
             " --config <path> [--out <dir>] [--seed <u64>]\n";
      return args.empty() ? 1 : 0;
    }
    const auto sub = subcommands.find(args[0]);
    if (sub == subcommands.end()) throw ConfigError("unknown subcommand: " + args[0]);

    std::string config_path, out_dir;
    std::optional<std::uint64_t> seed;
    for (std::size_t i = 1; i < args.size(); ++i) {
      auto need_value = [&](const char* name) -> const std::string& {
        if (i + 1 >= args.size()) throw ConfigError(std::string(name) + " requires a value");
        return args[++i];
      };
      if (args[i] == "--config")
        config_path = need_value("--config");
      else if (args[i] == "--out")
        out_dir = need_value("--out");
      else if (args[i] == "--seed")
        seed = config::detail::parse_u64(need_value("--seed"));
      else
        throw ConfigError("unknown option: " + args[i]);
    }
    if (config_path.empty()) throw ConfigError("--config is required");

    ExperimentConfig cfg = config::parse_config(config_path);
    if (cfg.experiment.kind && *cfg.experiment.kind != sub->second)
      throw ConfigError("config experiment.kind '" + config::to_string(*cfg.experiment.kind) +
                        "' does not match subcommand '" + args[0] + "'");
    cfg.experiment.kind = sub->second;
    if (!out_dir.empty()) cfg.experiment.out_dir = out_dir;
    if (seed) cfg.experiment.seed = *seed;

    dispatch(cfg);
    return 0;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace vagram::experiment
