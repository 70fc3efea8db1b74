#include "vagram/nn.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "test_util.hpp"

using namespace vagram;
namespace vt = vagram::testing;

TEST(MlpInit, DeterministicUnderSeed) {
  const nn::Mlp a = nn::Mlp::init({2, 1}, nn::Activation::Relu, 42);
  const nn::Mlp b = nn::Mlp::init({2, 1}, nn::Activation::Relu, 42);
  EXPECT_EQ(vt::max_abs_diff(a.weight(0), b.weight(0)), 0.0);
  EXPECT_EQ(vt::max_abs_diff(a.bias(0), b.bias(0)), 0.0);
}

TEST(MlpInit, ParamCount) {
  const nn::Mlp m = nn::Mlp::init({3, 16, 2}, nn::Activation::Relu, 1);
  EXPECT_EQ(m.param_count(), 3 * 16 + 16 + 16 * 2 + 2);
}

TEST(MlpInit, ZeroDimensionRejected) {
  EXPECT_THROW(nn::Mlp::init({3, 0, 2}, nn::Activation::Relu, 1), ConfigError);
}

// Monte-Carlo oracle: empirical weight mean over many draws stays within 3
// sigma of zero for the fan-in uniform distribution.
TEST(MlpInit, WeightMeanNearZero) {
  const int draws = 100;
  double total = 0.0;
  long count = 0;
  for (int s = 0; s < draws; ++s) {
    const nn::Mlp m = nn::Mlp::init({4, 25, 1}, nn::Activation::Relu, 1000 + s);
    for (long i = 0; i < m.weight(0).size(); ++i) {
      total += m.weight(0)[i];
      ++count;
    }
  }
  // Var of U(-b, b) is b^2/3 with b = sqrt(1/4) = 0.5.
  const double sigma_mean = std::sqrt(0.25 / 3.0 / static_cast<double>(count));
  EXPECT_LT(std::fabs(total / count), 3.0 * sigma_mean);
}

TEST(MlpInit, WeightsWithinFanInBound) {
  const nn::Mlp m = nn::Mlp::init({9, 7}, nn::Activation::Relu, 3);
  const double bound = std::sqrt(1.0 / 9.0);
  for (long i = 0; i < m.weight(0).size(); ++i) {
    EXPECT_LE(m.weight(0)[i], bound);
    EXPECT_GE(m.weight(0)[i], -bound);
  }
  for (long i = 0; i < m.bias(0).size(); ++i) EXPECT_EQ(m.bias(0)[i], 0.0);
}

TEST(DeterministicModel, ZeroNetDeltaModeIsIdentity) {
  nn::DeterministicModel m =
      nn::DeterministicModel::init(3, 1, {8}, nn::Activation::Relu, nn::PredictMode::Delta, 5);
  for (std::size_t l = 0; l < m.net().num_layers(); ++l) {
    for (long i = 0; i < m.net().weight(l).size(); ++i) m.net().weight(l)[i] = 0.0;
    for (long i = 0; i < m.net().bias(l).size(); ++i) m.net().bias(l)[i] = 0.0;
  }
  const Tensor s = Tensor::row({0.4, -0.2, 1.5});
  const Tensor a = Tensor::row({0.7});
  const Tensor pred = m.predict(s, a);
  EXPECT_EQ(vt::max_abs_diff(pred, s), 0.0);
}

TEST(DeterministicModel, ZeroNetAbsoluteModeIsZero) {
  nn::DeterministicModel m =
      nn::DeterministicModel::init(3, 1, {8}, nn::Activation::Relu, nn::PredictMode::Absolute, 5);
  for (std::size_t l = 0; l < m.net().num_layers(); ++l)
    for (long i = 0; i < m.net().weight(l).size(); ++i) m.net().weight(l)[i] = 0.0;
  const Tensor pred = m.predict(Tensor::row({0.4, -0.2, 1.5}), Tensor::row({0.7}));
  for (long i = 0; i < pred.size(); ++i) EXPECT_EQ(pred[i], 0.0);
}

TEST(DeterministicModel, ParameterGradientsMatchFiniteDifferences) {
  nn::DeterministicModel m =
      nn::DeterministicModel::init(2, 1, {6}, nn::Activation::Silu, nn::PredictMode::Delta, 17);
  Rng rng(4);
  const Tensor s = vt::random_tensor({3, 2}, rng);
  const Tensor a = vt::random_tensor({3, 1}, rng);

  ad::Tape tape;
  std::vector<ad::Id> pids;
  const ad::Id pred = m.predict(tape, tape.constant(s), tape.constant(a), true, &pids);
  const ad::Id root = tape.sum(tape.square(pred));
  const auto gm = tape.backward(root);

  auto params = m.net().params();
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto f = [&](const Tensor& candidate) {
      const Tensor saved = *params[p];
      *params[p] = candidate;
      const double v = tensor_ops::sum(tensor_ops::mul(m.predict(s, a), m.predict(s, a))).value();
      *params[p] = saved;
      return v;
    };
    const Tensor fd = vt::finite_difference(f, *params[p]);
    EXPECT_LT(vt::max_rel_err(gm.at(pids[p]), fd), 1e-5) << "param " << p;
  }
}

TEST(GaussianEnsemble, NllZeroWhenMeanMatchesAndUnitLogVar) {
  // One member, absolute mode, all-zero net: mean = 0 and log-var = 0.
  nn::GaussianEnsemble e =
      nn::GaussianEnsemble::init(1, 2, 1, {4}, nn::Activation::Relu, nn::PredictMode::Absolute, 9);
  for (std::size_t l = 0; l < e.members()[0].num_layers(); ++l)
    for (long i = 0; i < e.members()[0].weight(l).size(); ++i) e.members()[0].weight(l)[i] = 0.0;
  ad::Tape t;
  const Tensor s = Tensor::row({1.0, 2.0});
  const Tensor a = Tensor::row({0.5});
  const Tensor sp = Tensor::row({0.0, 0.0});  // matches the zero mean
  const double nll =
      t.value(e.nll(t, t.constant(s), t.constant(a), t.constant(sp), false, nullptr)).value();
  EXPECT_DOUBLE_EQ(nll, 0.0);
}

TEST(GaussianEnsemble, UnitVarianceUnitErrorGivesLossOne) {
  // 1-dim, mean - s' = 1, var = 1: loss = 1^2/1 + log 1 = 1.
  nn::GaussianEnsemble e =
      nn::GaussianEnsemble::init(1, 1, 1, {2}, nn::Activation::Relu, nn::PredictMode::Absolute, 9);
  for (std::size_t l = 0; l < e.members()[0].num_layers(); ++l)
    for (long i = 0; i < e.members()[0].weight(l).size(); ++i) e.members()[0].weight(l)[i] = 0.0;
  ad::Tape t;
  const Tensor s({1, 1}, {0.3});
  const Tensor a({1, 1}, {0.0});
  const Tensor sp({1, 1}, {-1.0});  // mean 0 minus s' = 1
  const double nll =
      t.value(e.nll(t, t.constant(s), t.constant(a), t.constant(sp), false, nullptr)).value();
  EXPECT_DOUBLE_EQ(nll, 1.0);
}

TEST(GaussianEnsemble, NllMatchesHandComputedBatch) {
  // Single member, 1-dim state, absolute mode. Bias-only net so outputs are
  // constants: mean = b0 = 0.5, log-var = b1 = 0.25 (inside the clamp).
  nn::GaussianEnsemble e =
      nn::GaussianEnsemble::init(1, 1, 1, {2}, nn::Activation::Relu, nn::PredictMode::Absolute, 9);
  nn::Mlp& net = e.members()[0];
  for (std::size_t l = 0; l < net.num_layers(); ++l)
    for (long i = 0; i < net.weight(l).size(); ++i) net.weight(l)[i] = 0.0;
  net.bias(net.num_layers() - 1)[0] = 0.5;
  net.bias(net.num_layers() - 1)[1] = 0.25;
  // Rows: sp = 0 -> diff 0.5; sp = 1.5 -> diff -1. Same variance e^0.25.
  const Tensor s({2, 1}, {0.0, 0.0});
  const Tensor a({2, 1}, {0.0, 0.0});
  const Tensor sp({2, 1}, {0.0, 1.5});
  ad::Tape t;
  const double nll =
      t.value(e.nll(t, t.constant(s), t.constant(a), t.constant(sp), false, nullptr)).value();
  const double expected =
      ((0.25 * std::exp(-0.25) + 0.25) + (1.0 * std::exp(-0.25) + 0.25)) / 2.0;
  EXPECT_NEAR(nll, expected, 1e-15);
}

TEST(GaussianEnsemble, UnitVarianceFrozenNllGradsParallelToMseGrads) {
  // With log-var pinned at 0 the NLL reduces to a squared error, so the
  // parameter gradient must be exactly parallel to the MSE gradient.
  const int sd = 2;
  nn::GaussianEnsemble e =
      nn::GaussianEnsemble::init(1, sd, 1, {6}, nn::Activation::Tanh, nn::PredictMode::Absolute, 31);
  nn::Mlp& net = e.members()[0];
  // Freeze the log-var pathway: zero its weight columns and push the bias
  // above the clamp so the clip cuts all gradient into it. The variance is
  // then the constant exp(0.5) and the NLL is proportional to the MSE.
  const std::size_t ll = net.num_layers() - 1;
  for (int i = 0; i < net.weight(ll).rows(); ++i)
    for (int j = sd; j < 2 * sd; ++j) net.weight(ll).at(i, j) = 0.0;
  for (int j = sd; j < 2 * sd; ++j) net.bias(ll)[j] = 1.0;

  Rng rng(8);
  const Tensor s = vt::random_tensor({5, sd}, rng);
  const Tensor a = vt::random_tensor({5, 1}, rng);
  const Tensor sp = vt::random_tensor({5, sd}, rng);

  ad::Tape t1;
  std::vector<ad::Id> pids1;
  const ad::Id nll = e.nll(t1, t1.constant(s), t1.constant(a), t1.constant(sp), true, &pids1);
  const auto g_nll = t1.backward(nll);

  ad::Tape t2;
  std::vector<ad::Id> pids2;
  const ad::Id x = t2.concat_cols(t2.constant(s), t2.constant(a));
  const ad::Id out = net.forward(t2, x, true, &pids2);
  const ad::Id mu = t2.slice_cols(out, 0, sd);
  const ad::Id mse = t2.mean(t2.row_sum(t2.square(t2.sub(mu, t2.constant(sp)))));
  const auto g_mse = t2.backward(mse);

  // Cosine similarity over the concatenated weight gradients of the mean
  // pathway (the log-var columns have zero gradient in both losses only for
  // MSE; skip them).
  double dot = 0.0, n1 = 0.0, n2 = 0.0;
  for (std::size_t p = 0; p < pids1.size(); ++p) {
    const Tensor ga = g_nll.at(pids1[p]);
    const Tensor gb = g_mse.at(pids2[p]);
    for (long i = 0; i < ga.size(); ++i) {
      dot += ga[i] * gb[i];
      n1 += ga[i] * ga[i];
      n2 += gb[i] * gb[i];
    }
  }
  EXPECT_NEAR(dot / std::sqrt(n1 * n2), 1.0, 1e-12);
}

TEST(Optimizer, SgdStep) {
  Tensor p = Tensor::scalar(1.0);
  nn::Optimizer opt = nn::Optimizer::sgd(0.1);
  opt.step({&p}, {Tensor::scalar(2.0)});
  EXPECT_DOUBLE_EQ(p.value(), 0.8);
}

TEST(Optimizer, ZeroGradLeavesParamsUnchanged) {
  Tensor p = Tensor::vec({1.0, -2.0});
  nn::Optimizer opt = nn::Optimizer::sgd(0.1);
  opt.step({&p}, {Tensor::zeros({2})});
  EXPECT_DOUBLE_EQ(p[0], 1.0);
  EXPECT_DOUBLE_EQ(p[1], -2.0);
}

TEST(Optimizer, AdamFirstStepMovesByLearningRate) {
  Tensor p = Tensor::scalar(0.0);
  nn::Optimizer opt = nn::Optimizer::adam(1e-3);
  opt.step({&p}, {Tensor::scalar(1.0)});
  // Bias correction makes mhat = g and vhat = g^2 on the first step.
  EXPECT_NEAR(p.value(), -1e-3, 1e-8);
}

TEST(Optimizer, NonFiniteGradRejected) {
  Tensor p = Tensor::scalar(0.0);
  nn::Optimizer opt = nn::Optimizer::adam(1e-3);
  EXPECT_THROW(opt.step({&p}, {Tensor::scalar(std::nan(""))}), NonFiniteError);
}

TEST(Optimizer, ShapeMismatchRejected) {
  Tensor p = Tensor::vec({0.0, 1.0});
  nn::Optimizer opt = nn::Optimizer::sgd(0.1);
  EXPECT_THROW(opt.step({&p}, {Tensor::scalar(1.0)}), ShapeError);
}

// Training a linear-capacity model with MSE on data from a random linear map
// recovers the map: held-out MSE below 1e-6.
TEST(Training, LinearModelRecoversLinearMap) {
  Rng rng(100);
  const int din = 3, dout = 2;
  const Tensor w_true = vt::random_tensor({din, dout}, rng);
  const Tensor b_true = vt::random_tensor({dout}, rng);
  const int n = 256;
  const Tensor x = vt::random_tensor({n, din}, rng, -2.0, 2.0);
  const Tensor y = tensor_ops::add_row(tensor_ops::matmul(x, w_true), b_true);

  nn::Mlp model = nn::Mlp::init({din, dout}, nn::Activation::Relu, 55);
  nn::Optimizer opt = nn::Optimizer::adam(2e-2);
  for (int step = 0; step < 6000; ++step) {
    if (step == 2000) opt.set_learning_rate(2e-3);
    if (step == 4000) opt.set_learning_rate(2e-4);
    ad::Tape t;
    std::vector<ad::Id> pids;
    const ad::Id pred = model.forward(t, t.constant(x), true, &pids);
    const ad::Id loss = t.mean(t.row_sum(t.square(t.sub(pred, t.constant(y)))));
    const auto gm = t.backward(loss);
    opt.step(model.params(), nn::collect_grads(gm, pids));
  }
  const Tensor x_test = vt::random_tensor({64, din}, rng, -2.0, 2.0);
  const Tensor y_test = tensor_ops::add_row(tensor_ops::matmul(x_test, w_true), b_true);
  const Tensor pred = model.forward(x_test);
  double mse = 0.0;
  for (long i = 0; i < pred.size(); ++i) mse += (pred[i] - y_test[i]) * (pred[i] - y_test[i]);
  mse /= static_cast<double>(pred.rows());
  EXPECT_LT(mse, 1e-6);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  nn::Mlp m = nn::Mlp::init({3, 16, 2}, nn::Activation::Silu, 77);
  const std::filesystem::path path = std::filesystem::temp_directory_path() / "vagram_test_mlp.json";
  nn::save_mlp(path, m);
  const nn::Mlp loaded = nn::load_mlp(path);
  ASSERT_EQ(loaded.layer_dims(), m.layer_dims());
  EXPECT_EQ(loaded.activation(), m.activation());
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    EXPECT_EQ(vt::max_abs_diff(loaded.weight(l), m.weight(l)), 0.0);
    EXPECT_EQ(vt::max_abs_diff(loaded.bias(l), m.bias(l)), 0.0);
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, SchemaFields) {
  const nn::Mlp m = nn::Mlp::init({2, 4, 1}, nn::Activation::Relu, 1);
  const nlohmann::json j = nn::mlp_to_json(m);
  EXPECT_EQ(j.at("schema_version").get<int>(), 1);
  EXPECT_EQ(j.at("activation").get<std::string>(), "relu");
  EXPECT_EQ(j.at("layer_dims").get<std::vector<int>>(), (std::vector<int>{2, 4, 1}));
  EXPECT_EQ(j.at("arrays").size(), 2u);
  EXPECT_EQ(j.at("arrays")[0].at("weight").size(), 2u);     // rows = fan-in
  EXPECT_EQ(j.at("arrays")[0].at("weight")[0].size(), 4u);  // cols = fan-out
}
