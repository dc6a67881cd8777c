#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "siflow/errors.hpp"
#include "siflow/mlp.hpp"
#include "siflow/random.hpp"

namespace siflow {
namespace {

MlpSpec small_spec(Index d, std::vector<Index> hidden, Activation act = Activation::ReLU) {
  MlpSpec s;
  s.data_dim = d;
  s.hidden_widths = std::move(hidden);
  s.activation = act;
  s.zero_init_output = false;
  return s;
}

Vec col(std::initializer_list<double> v) {
  Vec out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

// Smallest |pre-activation| over the hidden layers for one input column.
double min_preactivation(const Mlp& mlp, double t, const Vec& x) {
  Mlp::Cache cache;
  mlp.forward(Vec::Constant(1, t), x, &cache);
  double m = std::numeric_limits<double>::infinity();
  for (const Mat& z : cache.pre) m = std::min(m, z.cwiseAbs().minCoeff());
  return m;
}

TEST(MlpSpec, RequiresHiddenLayerOutsideTestMode) {
  MlpSpec s = small_spec(2, {});
  EXPECT_THROW(Mlp(s, 1), ContractError);
  s.allow_no_hidden = true;
  EXPECT_NO_THROW(Mlp(s, 1));
}

TEST(Forward, ZeroInitOutputGivesZero) {
  MlpSpec s = small_spec(3, {16, 16});
  s.zero_init_output = true;
  const Mlp mlp(s, 5);
  Rng rng(1);
  const Mat xs = rng.normal_matrix(3, 10);
  EXPECT_EQ(mlp.forward(0.4, xs).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Forward, IdentityLinearLayer) {
  MlpSpec s = small_spec(3, {});
  s.allow_no_hidden = true;
  Mlp mlp(s, 1);
  auto& layer = mlp.mutable_state().layers[0];
  layer.weight.setZero();
  layer.weight.leftCols(3) = Mat::Identity(3, 3);
  layer.bias.setZero();
  const Vec x = col({0.3, -1.5, 2.0});
  EXPECT_EQ(mlp(0.7, x), x);
  EXPECT_NEAR(mlp.divergence(0.7, x), 3.0, 1e-15);
}

// Recorded from the first verified build and frozen.
TEST(Forward, GoldenValue) {
  const Mlp mlp(small_spec(2, {8}), 7);
  const Vec out = mlp(0.3, col({0.1, -0.2}));
  EXPECT_DOUBLE_EQ(out[0], -0.25226794396178837);
  EXPECT_DOUBLE_EQ(out[1], 0.17800287981282512);
}

TEST(Forward, NonFiniteInputNamesColumn) {
  const Mlp mlp(small_spec(2, {8}), 7);
  Mat xs = Mat::Zero(2, 5);
  xs(1, 3) = std::numeric_limits<double>::quiet_NaN();
  try {
    mlp.forward(0.5, xs);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_EQ(e.index(), 3);
  }
}

TEST(Forward, LargeInputsStayFinite) {
  const Mlp mlp(small_spec(3, {32, 32}), 2);
  Rng rng(2);
  for (int k = 0; k < 100; ++k) {
    Vec x = rng.normal_matrix(3, 1);
    x *= 1e6 / x.norm();
    ASSERT_TRUE(mlp(rng.uniform(), x).allFinite());
  }
}

TEST(ParamGradient, ZeroAdjointGivesZero) {
  const Mlp mlp(small_spec(2, {8}), 3);
  Mlp::Cache cache;
  Rng rng(3);
  mlp.forward(Vec::Constant(4, 0.5), rng.normal_matrix(2, 4), &cache);
  const ParamPack g = mlp.param_gradient(cache, Mat::Zero(2, 4));
  EXPECT_EQ(g.flatten().cwiseAbs().maxCoeff(), 0.0);
}

TEST(ParamGradient, ShapeMismatchIsContractError) {
  const Mlp mlp(small_spec(2, {8}), 3);
  Mlp::Cache cache;
  mlp.forward(Vec::Constant(4, 0.5), Mat::Zero(2, 4), &cache);
  EXPECT_THROW(mlp.param_gradient(cache, Mat::Zero(2, 3)), ContractError);
}

// Central differences of sum <adjoint, output>, 2-8-2 ReLU net, 50 seeds.
TEST(ParamGradient, MatchesFiniteDifferences) {
  const double h = 1e-4;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Mlp mlp(small_spec(2, {8}), seed);
    Rng rng(1000 + seed);
    // Draw inputs away from ReLU kinks.
    Vec ts(4);
    Mat xs(2, 4);
    for (Index j = 0; j < 4; ++j) {
      do {
        ts[j] = rng.uniform();
        xs.col(j) = rng.normal_matrix(2, 1);
      } while (min_preactivation(mlp, ts[j], xs.col(j)) < 1e-3);
    }
    const Mat adjoint = rng.normal_matrix(2, 4);
    Mlp::Cache cache;
    mlp.forward(ts, xs, &cache);
    const Vec g = mlp.param_gradient(cache, adjoint).flatten();

    ParamPack params;
    params.layers = mlp.state().layers;
    const Vec theta = params.flatten();
    auto loss = [&](const Vec& p) {
      ParamPack q = params;
      q.unflatten(p);
      mlp.mutable_state().layers = q.layers;
      return (adjoint.array() * mlp.forward(ts, xs).array()).sum();
    };
    for (Index i = 0; i < theta.size(); ++i) {
      Vec up = theta, dn = theta;
      up[i] += h;
      dn[i] -= h;
      const double fd = (loss(up) - loss(dn)) / (2 * h);
      const double rel = std::abs(g[i] - fd) / std::max({std::abs(g[i]), std::abs(fd), 1e-8});
      worst = std::max(worst, rel);
    }
  }
  EXPECT_LT(worst, 1e-5);
}

// For a network without hidden layers, v = W z + b with z = [x; t], and the
// gradient of sum |v - y|^2 is 2 (V - Y) Z^T and 2 (V - Y) 1.
TEST(ParamGradient, LinearLeastSquaresClosedForm) {
  MlpSpec s = small_spec(2, {});
  s.allow_no_hidden = true;
  const Mlp mlp(s, 9);
  Rng rng(9);
  const Index m = 20;
  Vec ts(m);
  for (Index j = 0; j < m; ++j) ts[j] = rng.uniform();
  const Mat xs = rng.normal_matrix(2, m);
  const Mat ys = rng.normal_matrix(2, m);
  Mat z(3, m);
  z.topRows(2) = xs;
  z.row(2) = ts.transpose();
  const Mat& w = mlp.state().layers[0].weight;
  const Vec& b = mlp.state().layers[0].bias;
  const Mat r = (w * z).colwise() + b - ys;
  const Mat gw = 2.0 * r * z.transpose();
  const Vec gb = 2.0 * r.rowwise().sum();

  Mlp::Cache cache;
  const Mat v = mlp.forward(ts, xs, &cache);
  const ParamPack g = mlp.param_gradient(cache, 2.0 * (v - ys));
  EXPECT_LT((g.layers[0].weight - gw).norm(), 1e-12 * gw.norm());
  EXPECT_LT((g.layers[0].bias - gb).norm(), 1e-12 * gb.norm());

  ParamPack gk = ParamPack::zeros_like(mlp.state().layers);
  RegressionKernel kernel(mlp, Precision::Float64);
  kernel.accumulate(ts, xs, ys, 1.0, gk);
  EXPECT_LT((gk.layers[0].weight - gw).norm(), 1e-12 * gw.norm());
  EXPECT_LT((gk.layers[0].bias - gb).norm(), 1e-12 * gb.norm());
}

class KernelTest : public ::testing::TestWithParam<Activation> {};

TEST_P(KernelTest, MatchesParamGradient) {
  const Mlp mlp(small_spec(3, {16, 12}, GetParam()), 4);
  Rng rng(4);
  const Index m = 37;
  Vec ts(m);
  for (Index j = 0; j < m; ++j) ts[j] = rng.uniform();
  const Mat xs = rng.normal_matrix(3, m);
  const Mat ys = rng.normal_matrix(3, m);
  const double scale = 0.25;

  Mlp::Cache cache;
  const Mat v = mlp.forward(ts, xs, &cache);
  const Vec expected = mlp.param_gradient(cache, 2.0 * scale * (v - ys)).flatten();
  const double expected_g =
      (v.colwise().squaredNorm() - 2.0 * (ys.array() * v.array()).colwise().sum().matrix()).sum();

  ParamPack g64 = ParamPack::zeros_like(mlp.state().layers);
  RegressionKernel k64(mlp, Precision::Float64);
  EXPECT_NEAR(k64.accumulate(ts, xs, ys, scale, g64), expected_g, 1e-12 * std::abs(expected_g));
  EXPECT_LT((g64.flatten() - expected).norm(), 1e-12 * expected.norm());

  ParamPack g32 = ParamPack::zeros_like(mlp.state().layers);
  RegressionKernel k32(mlp, Precision::Float32);
  EXPECT_NEAR(k32.accumulate(ts, xs, ys, scale, g32), expected_g, 1e-4 * std::abs(expected_g));
  EXPECT_LT((g32.flatten() - expected).norm(), 1e-4 * expected.norm());
}

INSTANTIATE_TEST_SUITE_P(Activations, KernelTest,
                         ::testing::Values(Activation::ReLU, Activation::ELU));

TEST(Divergence, ConstantFieldIsZero) {
  MlpSpec s = small_spec(2, {});
  s.allow_no_hidden = true;
  Mlp mlp(s, 1);
  mlp.mutable_state().layers[0].weight.setZero();
  mlp.mutable_state().layers[0].bias = col({1.0, -2.0});
  EXPECT_EQ(mlp.divergence(0.2, col({3.0, 4.0})), 0.0);
}

TEST(Divergence, MatchesFiniteDifferences) {
  const double h = 1e-4;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Mlp mlp(small_spec(3, {16, 16}, Activation::ELU), seed);
    Rng rng(seed + 50);
    const double t = rng.uniform();
    const Vec x = rng.normal_matrix(3, 1);
    double fd = 0.0;
    for (Index i = 0; i < 3; ++i) {
      Vec e = Vec::Zero(3);
      e[i] = h;
      fd += (mlp(t, x + e)[i] - mlp(t, x - e)[i]) / (2 * h);
    }
    const double exact = mlp.divergence(t, x);
    ASSERT_LT(std::abs(exact - fd), 1e-4 * std::max(std::abs(exact), 1e-3));
  }
}

TEST(Divergence, JacobianMatchesFiniteDifferences) {
  const double h = 1e-5;
  const Mlp mlp(small_spec(2, {16}, Activation::ELU), 8);
  const Vec x = col({0.3, -0.8});
  const Mat jac = mlp.jacobian(0.6, x);
  for (Index i = 0; i < 2; ++i) {
    Vec e = Vec::Zero(2);
    e[i] = h;
    const Vec fd = (mlp(0.6, x + e) - mlp(0.6, x - e)) / (2 * h);
    EXPECT_LT((jac.col(i) - fd).norm(), 1e-8);
    EXPECT_LT((mlp.jvp(0.6, x, e / h) - fd).norm(), 1e-8);
  }
}

TEST(Divergence, HutchinsonAgreesInExpectation) {
  const Mlp mlp(small_spec(3, {16, 16}), 6);
  const Vec x = col({0.2, 0.4, -0.3});
  const double exact = mlp.divergence(0.5, x);
  const Estimate est = mlp.divergence_hutchinson(0.5, x, 10000, 77);
  EXPECT_TRUE(est.within(exact, 4.0)) << est.mean << " vs " << exact;
  EXPECT_THROW(mlp.divergence_hutchinson(0.5, x, 0, 1), DomainError);
}

TEST(Divergence, MlpFieldModes) {
  const Mlp mlp(small_spec(3, {8}), 6);
  const Vec x = col({0.2, 0.4, -0.3});
  const MlpField exact(mlp);
  EXPECT_FALSE(exact.stochastic_divergence());
  EXPECT_EQ(exact.divergence(0.5, x), mlp.divergence(0.5, x));
  const MlpField hutch(mlp, {DivergenceMode::Hutchinson, 64, 4, 3});
  EXPECT_TRUE(hutch.stochastic_divergence());
  EXPECT_EQ(hutch.divergence(0.5, x), hutch.divergence(0.5, x));
  const MlpField auto_small(mlp, {DivergenceMode::Auto, 2, 4, 3});
  EXPECT_TRUE(auto_small.stochastic_divergence());
  EXPECT_THROW(MlpField(mlp, {DivergenceMode::Hutchinson, 64, 0, 3}), DomainError);
}

TEST(JacobianPenalty, MatchesFrobeniusNorms) {
  const Mlp mlp(small_spec(2, {16}, Activation::ELU), 10);
  Rng rng(10);
  const Vec ts = Vec::Constant(5, 0.3);
  const Mat xs = rng.normal_matrix(2, 5);
  double expected = 0.0;
  for (Index j = 0; j < 5; ++j) expected += mlp.jacobian(0.3, xs.col(j)).squaredNorm();
  EXPECT_NEAR(mlp.jacobian_penalty(ts, xs, nullptr), expected, 1e-12 * expected);
}

TEST(JacobianPenalty, GradientMatchesFiniteDifferences) {
  Mlp mlp(small_spec(2, {6}, Activation::ELU), 11);
  Rng rng(11);
  const Vec ts = col({0.2, 0.7});
  const Mat xs = rng.normal_matrix(2, 2);
  ParamPack g;
  mlp.jacobian_penalty(ts, xs, &g);
  const Vec gf = g.flatten();
  ParamPack params;
  params.layers = mlp.state().layers;
  const Vec theta = params.flatten();
  const double h = 1e-5;
  for (Index i = 0; i < theta.size(); ++i) {
    Vec up = theta, dn = theta;
    up[i] += h;
    dn[i] -= h;
    params.unflatten(up);
    mlp.mutable_state().layers = params.layers;
    const double fu = mlp.jacobian_penalty(ts, xs, nullptr);
    params.unflatten(dn);
    mlp.mutable_state().layers = params.layers;
    const double fdn = mlp.jacobian_penalty(ts, xs, nullptr);
    ASSERT_NEAR(gf[i], (fu - fdn) / (2 * h), 1e-6 * std::max(1.0, std::abs(gf[i])));
  }
}

// One scalar parameter path through the Adam recurrence, written out by hand.
struct AdamOracle {
  double m = 0, v = 0, p;
  int k = 0;
  explicit AdamOracle(double p0) : p(p0) {}
  void step(double g, const AdamSettings& s) {
    ++k;
    m = s.beta1 * m + (1 - s.beta1) * g;
    v = s.beta2 * v + (1 - s.beta2) * g * g;
    const double mh = m / (1 - std::pow(s.beta1, k));
    const double vh = v / (1 - std::pow(s.beta2, k));
    p -= s.lr * mh / (std::sqrt(vh) + s.eps);
  }
};

Mlp scalar_net() {
  MlpSpec s = small_spec(1, {});
  s.allow_no_hidden = true;
  return Mlp(s, 12);
}

TEST(Adam, ZeroGradientLeavesParametersAndCountsStep) {
  Mlp mlp = scalar_net();
  const auto before = mlp.state().layers;
  mlp.adam_step(ParamPack::zeros_like(before), AdamSettings{});
  EXPECT_EQ(mlp.state().layers[0].weight, before[0].weight);
  EXPECT_EQ(mlp.state().layers[0].bias, before[0].bias);
  EXPECT_EQ(mlp.state().step, 1);
}

TEST(Adam, FirstStepHandComputation) {
  Mlp mlp = scalar_net();
  const double b0 = mlp.state().layers[0].bias[0];
  ParamPack g = ParamPack::zeros_like(mlp.state().layers);
  g.layers[0].bias[0] = 0.37;
  AdamSettings s;
  s.lr = 0.01;
  mlp.adam_step(g, s);
  // m_hat = g and v_hat = g^2 at step 1.
  EXPECT_NEAR(mlp.state().layers[0].bias[0], b0 - 0.01 * 0.37 / (0.37 + 1e-8), 1e-15);
}

TEST(Adam, TracksScriptedRecurrence) {
  Mlp mlp = scalar_net();
  AdamSettings s;
  s.lr = 0.05;
  AdamOracle oracle(mlp.state().layers[0].bias[0]);
  const double grads[] = {0.5, 0.5, -1.2, 3.0, 0.01};
  for (double gv : grads) {
    ParamPack g = ParamPack::zeros_like(mlp.state().layers);
    g.layers[0].bias[0] = gv;
    mlp.adam_step(g, s);
    oracle.step(gv, s);
    ASSERT_NEAR(mlp.state().layers[0].bias[0], oracle.p, 1e-14);
  }
  EXPECT_EQ(mlp.state().step, 5);
}

TEST(Adam, NonFiniteGradientRejectedWithoutChange) {
  Mlp mlp = scalar_net();
  const MlpState before = mlp.state();
  ParamPack g = ParamPack::zeros_like(before.layers);
  g.layers[0].bias[0] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(mlp.adam_step(g, AdamSettings{}), NumericError);
  EXPECT_EQ(mlp.state().step, before.step);
  EXPECT_EQ(mlp.state().layers[0].bias, before.layers[0].bias);
  EXPECT_EQ(mlp.state().adam_m.flatten(), before.adam_m.flatten());
}

TEST(Checkpoint, RoundTripIsBitExact) {
  MlpSpec spec = small_spec(2, {8, 5}, Activation::ELU);
  spec.time_features = TimeFeatures::SinCosConcat;
  Mlp mlp(spec, 13);
  Rng rng(13);
  for (int k = 0; k < 3; ++k) {
    ParamPack g = ParamPack::zeros_like(mlp.state().layers);
    g.unflatten(rng.normal_matrix(g.size(), 1) * 1e-3);
    mlp.adam_step(g, AdamSettings{});
  }
  const std::string path = ::testing::TempDir() + "/ckpt_roundtrip.json";
  save_checkpoint(mlp, path);
  const Mlp back = load_checkpoint(path);
  EXPECT_EQ(back.spec(), mlp.spec());
  EXPECT_EQ(back.state().step, mlp.state().step);
  EXPECT_EQ(back.state().seed, mlp.state().seed);
  ParamPack a, b;
  a.layers = mlp.state().layers;
  b.layers = back.state().layers;
  EXPECT_EQ(a.flatten(), b.flatten());
  EXPECT_EQ(back.state().adam_m.flatten(), mlp.state().adam_m.flatten());
  EXPECT_EQ(back.state().adam_v.flatten(), mlp.state().adam_v.flatten());
}

TEST(Checkpoint, MissingFileIsError) {
  EXPECT_THROW(load_checkpoint(::testing::TempDir() + "/does_not_exist.json"), Error);
}

}  // namespace
}  // namespace siflow
