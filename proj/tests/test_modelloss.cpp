#include "vagram/model_loss.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace vagram;
using namespace vagram::loss;
namespace vt = vagram::testing;

namespace {

Tensor row2(double a, double b) { return Tensor::row({a, b}); }

// V(x) = x^T x.
std::shared_ptr<const ValueFn> quadratic_value() {
  return std::make_shared<FnValue>(
      [](ad::Tape& t, ad::Id s) { return t.row_sum(t.square(s)); });
}

// V(x) = sum_i x_i.
std::shared_ptr<const ValueFn> sum_value() {
  return std::make_shared<FnValue>([](ad::Tape& t, ad::Id s) { return t.row_sum(s); });
}

}  // namespace

TEST(MseLoss, SpecExamples) {
  EXPECT_DOUBLE_EQ(mse_loss(row2(0.3, -0.4), row2(0.3, -0.4)), 0.0);
  EXPECT_DOUBLE_EQ(mse_loss(row2(1.0, 2.0), row2(0.0, 0.0)), 5.0);
  const Tensor f({2, 2}, {1.0, 0.0, 0.0, 2.0});
  const Tensor sp({2, 2}, {0.0, 0.0, 0.0, 0.0});
  EXPECT_DOUBLE_EQ(mse_loss(f, sp), 2.5);
  EXPECT_THROW(mse_loss(row2(1.0, 2.0), Tensor::row({1.0})), ShapeError);
}

TEST(IterVamlLoss, SpecExamples) {
  const auto v_sum = sum_value();
  EXPECT_DOUBLE_EQ(itervaml_loss(*v_sum, row2(0.7, 0.1), row2(0.7, 0.1)), 0.0);
  // V(x) = sum(x), diff = (1, 1): (V(s') - V(f))^2 = 4.
  EXPECT_DOUBLE_EQ(itervaml_loss(*v_sum, row2(1.0, 1.0), row2(0.0, 0.0)), 4.0);
}

// The section-3 failure mode: a prediction at L2 distance sqrt(2) from the
// sample with identical value under V(x) = x^T x.
TEST(IterVamlLoss, SpuriousMinimumOnValueSphere) {
  const auto v = quadratic_value();
  const Tensor sp = row2(1.0, 0.0);
  const Tensor f = row2(0.0, 1.0);
  EXPECT_DOUBLE_EQ(itervaml_loss(*v, f, sp), 0.0);
  const double l2 = std::sqrt(mse_loss(f, sp));
  EXPECT_NEAR(l2, std::sqrt(2.0), 1e-15);
}

TEST(TaylorVamlLoss, SpecExamples) {
  // Orthogonal hyperplane solution.
  EXPECT_DOUBLE_EQ(taylor_vaml_loss(row2(1.0, -1.0), row2(1.0, 1.0), row2(0.0, 0.0)), 0.0);
  EXPECT_DOUBLE_EQ(taylor_vaml_loss(row2(1.0, 1.0), row2(1.0, 2.0), row2(0.0, 0.0)), 9.0);
}

TEST(TaylorVamlLoss, EqualsIterVamlForLinearValue) {
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    const std::vector<double> w{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    LinearValue v(w, rng.uniform(-1, 1));
    const Tensor f = vt::random_tensor({4, 3}, rng);
    const Tensor sp = vt::random_tensor({4, 3}, rng);
    Tensor g({4, 3});
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 3; ++c) g.at(r, c) = w[static_cast<std::size_t>(c)];
    EXPECT_NEAR(taylor_vaml_loss(g, f, sp), itervaml_loss(v, f, sp), 1e-12);
  }
}

TEST(VagramLoss, SpecExamples) {
  // All-ones gradient reduces to the MSE.
  Rng rng(4);
  const Tensor f = vt::random_tensor({5, 3}, rng);
  const Tensor sp = vt::random_tensor({5, 3}, rng);
  EXPECT_DOUBLE_EQ(vagram_loss(Tensor::ones({5, 3}), f, sp), mse_loss(f, sp));

  EXPECT_DOUBLE_EQ(vagram_loss(row2(1.0, 1.0), row2(1.0, 2.0), row2(0.0, 0.0)), 5.0);
  // dim * vagram >= taylor (Cauchy-Schwarz): 2 * 5 = 10 >= 9.
  EXPECT_GE(2.0 * 5.0, taylor_vaml_loss(row2(1.0, 1.0), row2(1.0, 2.0), row2(0.0, 0.0)));
  // Zero-gradient dimensions are ignored.
  EXPECT_DOUBLE_EQ(vagram_loss(row2(2.0, 0.0), row2(3.0, 5.0), row2(0.0, 0.0)), 36.0);
}

TEST(VagramBoundLoss, SpecExamples) {
  EXPECT_DOUBLE_EQ(vagram_bound_loss(row2(1.0, 0.0), row2(1.0, 0.0), row2(0.0, 0.0), 2.0), 4.0);
  // M = 0 reduces to twice the Taylor objective.
  Rng rng(5);
  const Tensor g = vt::random_tensor({6, 3}, rng);
  const Tensor f = vt::random_tensor({6, 3}, rng);
  const Tensor sp = vt::random_tensor({6, 3}, rng);
  EXPECT_NEAR(vagram_bound_loss(g, f, sp, 0.0), 2.0 * taylor_vaml_loss(g, f, sp), 1e-12);
  EXPECT_DOUBLE_EQ(vagram_bound_loss(g, sp, sp, 3.0), 0.0);
}

TEST(IterVamlMseLoss, SpecExamples) {
  const auto v = quadratic_value();
  const Tensor sp = row2(1.0, 0.0);
  const Tensor f = row2(0.0, 1.0);
  EXPECT_DOUBLE_EQ(itervaml_mse_loss(*v, f, sp, 0.0), itervaml_loss(*v, f, sp));
  // The MSE term breaks the spurious minimum: 0 + 0.01 * 2.
  EXPECT_NEAR(itervaml_mse_loss(*v, f, sp, 0.01), 0.02, 1e-15);
  // lambda -> infinity is dominated by the MSE term.
  const double big = itervaml_mse_loss(*v, f, sp, 1e6);
  EXPECT_NEAR(big / (1e6 * mse_loss(f, sp)), 1.0, 1e-6);
}

TEST(ValueWeightedMseLoss, SpecExamples) {
  // All-equal values: proportional to the MSE.
  LinearValue v_const({0.0, 0.0}, 2.0);
  Rng rng(6);
  const Tensor f = vt::random_tensor({4, 2}, rng);
  const Tensor sp = vt::random_tensor({4, 2}, rng);
  EXPECT_NEAR(value_weighted_mse_loss(v_const, f, sp), mse_loss(f, sp) / (2.0 + 1e-6), 1e-12);

  // V(s') = 1, d = (1, 0): loss ~ 1.
  LinearValue v_one({0.0, 0.0}, 1.0);
  EXPECT_NEAR(value_weighted_mse_loss(v_one, row2(1.0, 0.0), row2(0.0, 0.0)), 1.0, 1e-5);

  // V(s') = 0: weight saturates at 1/eps, still finite.
  LinearValue v_zero({0.0, 0.0}, 0.0);
  const double w_loss = value_weighted_mse_loss(v_zero, row2(1.0, 0.0), row2(0.0, 0.0));
  EXPECT_NEAR(w_loss, 1.0 / kValueWeightEps, 1e-3);
  EXPECT_TRUE(std::isfinite(w_loss));
}

TEST(ClipGradients, SpecExamples) {
  // All norms equal: unchanged.
  Tensor g({3, 2});
  for (int i = 0; i < 3; ++i) {
    g.at(i, 0) = 3.0;
    g.at(i, 1) = 4.0;
  }
  const auto same = clip_gradients(g, 50.0);
  EXPECT_EQ(vt::max_abs_diff(same.grads, g), 0.0);
  EXPECT_DOUBLE_EQ(same.threshold, 5.0);

  // Norms (1,1,1,10) at p=50: nearest-rank threshold 1; outlier rescaled.
  Tensor rows({4, 2}, {1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 10.0, 0.0});
  const auto clipped = clip_gradients(rows, 50.0);
  EXPECT_DOUBLE_EQ(clipped.threshold, 1.0);
  EXPECT_DOUBLE_EQ(clipped.grads.at(3, 0), 1.0);
  // Untouched rows are bit-identical.
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) EXPECT_EQ(clipped.grads.at(i, j), rows.at(i, j));

  // p = 100 never clips.
  const auto full = clip_gradients(rows, 100.0);
  EXPECT_EQ(vt::max_abs_diff(full.grads, rows), 0.0);
  EXPECT_THROW(clip_gradients(Tensor({0, 2}), 50.0), Error);
}

TEST(SacVaml, PerfectModelGivesExactZero) {
  sac::SacConfig cfg;
  cfg.hidden = {8};
  sac::SacAgent agent = sac::SacAgent::init(3, 1, 2.0, cfg, 7);
  const auto v = agent.value_fn(0);
  Rng rng(8);
  const Tensor sp = vt::random_tensor({5, 3}, rng);
  Rng loss_rng(9);
  EXPECT_DOUBLE_EQ(sac_vaml_loss(agent, *v, sp, sp, 4, loss_rng), 0.0);
}

TEST(SacVaml, StateIndependentPolicyReducesToIterVaml) {
  sac::SacConfig cfg;
  cfg.hidden = {8};
  sac::SacAgent agent = sac::SacAgent::init(3, 1, 2.0, cfg, 10);
  // Zero policy weights: mean and log-std constant in the state, so the two
  // entropy estimates cancel under common random numbers.
  for (std::size_t l = 0; l < agent.policy().num_layers(); ++l)
    for (long i = 0; i < agent.policy().weight(l).size(); ++i) agent.policy().weight(l)[i] = 0.0;
  const auto v = agent.value_fn(0);
  Rng rng(11);
  const Tensor f = vt::random_tensor({6, 3}, rng);
  const Tensor sp = vt::random_tensor({6, 3}, rng);
  Rng loss_rng(12);
  EXPECT_NEAR(sac_vaml_loss(agent, *v, f, sp, 3, loss_rng), itervaml_loss(*v, f, sp), 1e-12);
}

// Monte-Carlo entropy estimate converges to the quadrature expectation; mean
// and variance of log pi are both integrated independently.
TEST(SacVaml, EntropyEstimateConvergesToQuadrature) {
  sac::SacConfig cfg;
  cfg.hidden = {4};
  sac::SacAgent agent = sac::SacAgent::init(3, 1, 2.0, cfg, 13);
  for (std::size_t l = 0; l < agent.policy().num_layers(); ++l) {
    for (long i = 0; i < agent.policy().weight(l).size(); ++i) agent.policy().weight(l)[i] = 0.0;
    for (long i = 0; i < agent.policy().bias(l).size(); ++i) agent.policy().bias(l)[i] = 0.0;
  }
  const double mu = -0.2, ls = -0.4;
  agent.policy().bias(agent.policy().num_layers() - 1)[0] = mu;
  agent.policy().bias(agent.policy().num_layers() - 1)[1] = ls;
  const double sigma = std::exp(ls);
  const double amax = agent.action_bound();

  auto log_pi = [&](double xi) {
    const double t = std::tanh(mu + sigma * xi);
    return -0.5 * xi * xi - ls - 0.5 * std::log(2.0 * M_PI) -
           std::log(1.0 - t * t + sac::kSquashEps) - std::log(amax);
  };
  const double mean_q = vt::gauss_expectation(log_pi);
  const double second_q = vt::gauss_expectation([&](double xi) { return log_pi(xi) * log_pi(xi); });
  const double sigma_q = std::sqrt(second_q - mean_q * mean_q);

  const int k = 20000;
  ad::Tape t;
  const ad::Id state = t.constant(Tensor::row({0.0, 0.0, 0.0}));
  Rng rng(14);
  std::vector<Tensor> noise;
  for (int i = 0; i < k; ++i) {
    Tensor xi({1, 1});
    xi[0] = rng.normal();
    noise.push_back(xi);
  }
  const double estimate = t.value(entropy_estimate(t, agent, state, noise)).value();
  EXPECT_NEAR(estimate, mean_q, 3.0 * sigma_q / std::sqrt(static_cast<double>(k)) + 1e-6);
}

TEST(MultiVf, SpecExamples) {
  Rng rng(15);
  const Tensor s = vt::random_tensor({6, 2}, rng);
  const Tensor a = vt::random_tensor({6, 1}, rng);
  const Tensor sp = vt::random_tensor({6, 2}, rng);
  const Tensor f = vt::random_tensor({6, 2}, rng);

  const std::vector<double> w{1.5, -0.5};
  ValueBundle bundle{std::make_shared<LinearValue>(w), std::make_shared<LinearValue>(w),
                     std::make_shared<LinearValue>(w), std::make_shared<LinearValue>(w)};

  LossSpec single;
  single.kind = LossKind::Vagram;
  single.vf_indices = {0};
  LossSpec all;
  all.kind = LossKind::Vagram;
  all.vf_indices = {0, 1, 2, 3};

  auto eval = [&](const LossSpec& spec) {
    const PreparedBatch pb = prepare_batch(spec, bundle, s, a, sp);
    ad::Tape t;
    return t.value(multi_vf_loss(t, spec, bundle, pb, t.constant(f))).value();
  };
  const double one = eval(single);
  Tensor g({6, 2});
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 2; ++j) g.at(i, j) = w[static_cast<std::size_t>(j)];
  EXPECT_DOUBLE_EQ(one, vagram_loss(g, f, sp));
  EXPECT_NEAR(eval(all), 4.0 * one, 1e-12);

  // Opposite-sign gradients contribute identically to the squared loss.
  ValueBundle pm{std::make_shared<LinearValue>(w),
                 std::make_shared<LinearValue>(std::vector<double>{-w[0], -w[1]})};
  LossSpec both;
  both.kind = LossKind::Vagram;
  both.vf_indices = {0, 1};
  const PreparedBatch pb = prepare_batch(both, pm, s, a, sp);
  ad::Tape t;
  const double sum2 = t.value(multi_vf_loss(t, both, pm, pb, t.constant(f))).value();
  EXPECT_NEAR(sum2, 2.0 * one, 1e-12);

  LossSpec empty;
  empty.vf_indices = {};
  EXPECT_THROW(prepare_batch(empty, bundle, s, a, sp), ConfigError);
}

TEST(EvalVamlError, SpecExamples) {
  nn::DeterministicModel model =
      nn::DeterministicModel::init(2, 1, {6}, nn::Activation::Tanh, nn::PredictMode::Delta, 16);
  Rng rng(17);
  const Tensor s = vt::random_tensor({5, 2}, rng);
  const Tensor a = vt::random_tensor({5, 1}, rng);
  const auto v = quadratic_value();

  // Perfect model: sp taken from the model's own prediction.
  const Tensor sp_perfect = model.predict(s, a);
  EXPECT_DOUBLE_EQ(eval_vaml_error(*v, model, s, a, sp_perfect), 0.0);

  // Constant value function: error 0 for any model.
  LinearValue v_const({0.0, 0.0}, -3.0);
  const Tensor sp = vt::random_tensor({5, 2}, rng);
  EXPECT_DOUBLE_EQ(eval_vaml_error(v_const, model, s, a, sp), 0.0);

  // Definitional identity with the itervaml loss.
  EXPECT_DOUBLE_EQ(eval_vaml_error(*v, model, s, a, sp),
                   itervaml_loss(*v, model.predict(s, a), sp));
}

// dim(S) * vagram >= taylor over random draws in dims 1..10, with equality
// on sign-matched rank-1 alignments.
TEST(Invariants, CauchySchwarzBound) {
  Rng rng(18);
  for (int trial = 0; trial < 100000; ++trial) {
    const int dim = 1 + static_cast<int>(rng.integer(10));
    Tensor g({1, dim}), d({1, dim}), zero({1, dim});
    for (int j = 0; j < dim; ++j) {
      g[j] = rng.uniform(-3.0, 3.0);
      d[j] = rng.uniform(-3.0, 3.0);
    }
    const double lhs = dim * vagram_loss(g, d, zero);
    const double rhs = taylor_vaml_loss(g, d, zero);
    EXPECT_GE(lhs, rhs * (1.0 - 1e-12));
  }
  // Equality case: d_i = c / g_i makes all products equal.
  for (int trial = 0; trial < 100; ++trial) {
    const int dim = 2 + static_cast<int>(rng.integer(9));
    Tensor g({1, dim}), d({1, dim}), zero({1, dim});
    const double c = rng.uniform(0.5, 2.0);
    for (int j = 0; j < dim; ++j) {
      double gj = rng.uniform(0.3, 3.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
      g[j] = gj;
      d[j] = c / gj;
    }
    const double lhs = dim * vagram_loss(g, d, zero);
    const double rhs = taylor_vaml_loss(g, d, zero);
    EXPECT_NEAR(lhs / rhs, 1.0, 1e-12);
  }
}

// |itervaml - taylor| = O(delta^3): log-log slope within 3 +- 0.3.
TEST(Invariants, FirstOrderConsistencySlope) {
  const auto v = std::make_shared<FnValue>([](ad::Tape& t, ad::Id s) {
    return t.row_sum(t.add(t.sin(s), t.cos(t.scale(s, 2.0))));
  });
  const Tensor sp = Tensor::row({0.4, -0.7});
  const Tensor g = per_sample_value_gradients(*v, sp);
  const Tensor u = Tensor::row({0.8, 0.6});

  std::vector<double> logd, logdiff;
  for (double delta : {1e-1, 1e-2, 1e-3, 1e-4}) {
    Tensor f = sp;
    for (long i = 0; i < f.size(); ++i) f[i] += delta * u[i];
    const double iv = itervaml_loss(*v, f, sp);
    const double ty = taylor_vaml_loss(g, f, sp);
    logd.push_back(std::log(delta));
    logdiff.push_back(std::log(std::fabs(iv - ty)));
  }
  const double slope =
      (logdiff.front() - logdiff.back()) / (logd.front() - logd.back());
  EXPECT_NEAR(slope, 3.0, 0.3);
}

// vagram over a prediction grid is an exact separable quadratic: a quadratic
// interpolated through 3 points per dim reproduces every grid value.
TEST(Invariants, VagramGridIsExactAxisAlignedQuadratic) {
  const Tensor g = row2(1.7, -0.6);
  const Tensor sp = row2(0.3, -1.2);
  const int n = 21;
  auto value_at = [&](double x, double y) { return vagram_loss(g, row2(x, y), sp); };

  const double xs[3] = {-2.0, 0.0, 2.0};
  const double ys[3] = {-6.0, 0.0, 6.0};
  auto lagrange = [](const double p[3], const double v[3], double x) {
    double acc = 0.0;
    for (int i = 0; i < 3; ++i) {
      double term = v[i];
      for (int j = 0; j < 3; ++j)
        if (j != i) term *= (x - p[j]) / (p[i] - p[j]);
      acc += term;
    }
    return acc;
  };
  const double ax[3] = {value_at(xs[0], ys[0]), value_at(xs[1], ys[0]), value_at(xs[2], ys[0])};
  const double by[3] = {value_at(xs[0], ys[0]), value_at(xs[0], ys[1]), value_at(xs[0], ys[2])};
  const double base = value_at(xs[0], ys[0]);

  double max_residual = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double x = -2.0 + 4.0 * i / (n - 1);
      const double y = -6.0 + 12.0 * j / (n - 1);
      const double interpolated = lagrange(xs, ax, x) + lagrange(ys, by, y) - base;
      max_residual = std::max(max_residual, std::fabs(interpolated - value_at(x, y)));
    }
  }
  EXPECT_LT(max_residual, 1e-10);
}

// Taylor loss vanishes along the hyperplane g^T (f - s') = 0 in dim >= 2.
TEST(Invariants, TaylorHyperplaneDegeneracy) {
  Rng rng(19);
  const Tensor g = Tensor::row({1.3, -2.1, 0.7});
  const Tensor sp = Tensor::row({0.2, 0.4, -0.9});
  for (int trial = 0; trial < 200; ++trial) {
    // Random vector orthogonal to g, arbitrary magnitude.
    Tensor u({1, 3});
    for (long i = 0; i < 3; ++i) u[i] = rng.uniform(-5.0, 5.0);
    const double proj = (u[0] * g[0] + u[1] * g[1] + u[2] * g[2]) /
                        (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
    Tensor f = sp;
    for (long i = 0; i < 3; ++i) f[i] += u[i] - proj * g[i];
    EXPECT_NEAR(taylor_vaml_loss(g, f, sp), 0.0, 1e-24);
  }
}

// Gradient-descent minimizer of the vagram loss for a linear model matches
// the closed-form weighted least squares solution per output dimension.
TEST(Invariants, LinearModelVagramFixedPointMatchesWls) {
  Rng rng(20);
  const int ds = 2, da = 1, n = 128;
  const Tensor s = vt::random_tensor({n, ds}, rng, -2.0, 2.0);
  const Tensor a = vt::random_tensor({n, da}, rng, -2.0, 2.0);
  const Tensor sp = vt::random_tensor({n, ds}, rng, -2.0, 2.0);
  Tensor g({n, ds});
  for (long i = 0; i < g.size(); ++i)
    g[i] = rng.uniform(0.4, 2.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);

  nn::DeterministicModel model =
      nn::DeterministicModel::init(ds, da, {}, nn::Activation::Relu, nn::PredictMode::Absolute, 21);
  nn::Optimizer opt = nn::Optimizer::adam(2e-2);
  for (int step = 0; step < 12000; ++step) {
    if (step == 6000) opt.set_learning_rate(2e-3);
    if (step == 9000) opt.set_learning_rate(2e-4);
    ad::Tape t;
    std::vector<ad::Id> pids;
    const ad::Id f = model.predict(t, t.constant(s), t.constant(a), true, &pids);
    const ad::Id l = vagram_term(t, t.constant(g), f, t.constant(sp));
    const auto gm = t.backward(l);
    opt.step(model.net().params(), nn::collect_grads(gm, pids));
  }

  // Normal-equation oracle per output dimension with weights g^2.
  for (int d = 0; d < ds; ++d) {
    std::vector<std::vector<double>> x(n, std::vector<double>(ds + da + 1));
    std::vector<double> w(n), y(n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < ds; ++j) x[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = s.at(i, j);
      x[static_cast<std::size_t>(i)][ds] = a.at(i, 0);
      x[static_cast<std::size_t>(i)][ds + da] = 1.0;
      w[static_cast<std::size_t>(i)] = g.at(i, d) * g.at(i, d);
      y[static_cast<std::size_t>(i)] = sp.at(i, d);
    }
    const std::vector<double> beta = vt::weighted_least_squares(x, w, y);
    for (int j = 0; j < ds + da; ++j) {
      const double fitted = model.net().weight(0).at(j, d);
      EXPECT_LT(vt::rel_err(fitted, beta[static_cast<std::size_t>(j)], 1e-2), 1e-4) << "dim " << d << " row " << j;
    }
    EXPECT_LT(vt::rel_err(model.net().bias(0)[d], beta[static_cast<std::size_t>(ds + da)], 1e-2), 1e-4);
  }
}
