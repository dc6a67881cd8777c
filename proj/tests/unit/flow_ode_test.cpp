#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "siflow/data.hpp"
#include "siflow/errors.hpp"
#include "siflow/flow_ode.hpp"
#include "siflow/gmm.hpp"
#include "siflow/random.hpp"
#include "test_paths.hpp"

namespace siflow {
namespace {

using testing::vec1;
using testing::Vec2;

const AffineField kDecay(-Mat::Identity(1, 1), Vec::Zero(1));

// Closed-form checks on problems other than e^{-1} compare at 1e-6 absolute,
// which the default rtol does not promise for |y| > 1.
Dopri5Settings tight() {
  Dopri5Settings s;
  s.rtol = 1e-9;
  s.atol = 1e-11;
  return s;
}

double decay_error(double rtol, double atol) {
  Dopri5Settings s;
  s.rtol = rtol;
  s.atol = atol;
  return std::abs(integrate(kDecay, Mat::Ones(1, 1), 0.0, 1.0, s)(0, 0) - std::exp(-1.0));
}

TEST(Dopri5, DecayEndpointAtDefaults) {
  const Mat y = integrate(kDecay, Mat::Ones(1, 1), 0.0, 1.0, Dopri5Settings{});
  EXPECT_LT(std::abs(y(0, 0) - std::exp(-1.0)), 1e-6);
}

TEST(Dopri5, ErrorShrinksWithTolerance) {
  double prev = decay_error(1e-3, 1e-5);
  for (double rtol = 1e-4; rtol >= 1e-10; rtol /= 10) {
    const double err = decay_error(rtol, rtol * 1e-2);
    if (prev < 1e-12) break;
    EXPECT_LT(err, prev / 8.0) << "rtol " << rtol;
    prev = err;
  }
}

TEST(Dopri5, EqualTimesIsIdentity) {
  Rng rng(1);
  const Mat xs = rng.normal_matrix(2, 10);
  const OracleVelocity v(testing::two_to_three_path());
  EXPECT_EQ(integrate(v, xs, 0.4, 0.4, Dopri5Settings{}), xs);
}

TEST(Dopri5, HandlesNonAutonomousFields) {
  // dy/dt = t y, y(0) = 1 -> y(1) = e^{1/2}.
  const FunctionField f(1, [](double t, const Vec& x) { return Vec(t * x); });
  EXPECT_NEAR(integrate(f, Mat::Ones(1, 1), 0.0, 1.0, tight())(0, 0), std::exp(0.5), 1e-6);
  // Backward from 1 to 0.
  EXPECT_NEAR(integrate(f, Mat::Constant(1, 1, std::exp(0.5)), 1.0, 0.0, tight())(0, 0),
              1.0, 1e-6);
}

TEST(Dopri5, Errors) {
  EXPECT_THROW(integrate(kDecay, Mat::Ones(1, 1), 0.0, 1.2, Dopri5Settings{}), DomainError);
  Dopri5Settings bad;
  bad.rtol = 0;
  EXPECT_THROW(bad.validate(), DomainError);
  Dopri5Settings few;
  few.max_steps = 2;
  few.rtol = 1e-12;
  few.atol = 1e-14;
  const FunctionField stiff(1, [](double t, const Vec& x) { return Vec(std::cos(200 * t) * x); });
  try {
    Mat xs = Mat::Ones(1, 3);
    integrate(stiff, xs, 0.0, 1.0, few);
    FAIL() << "expected IntegrationError";
  } catch (const IntegrationError& e) {
    EXPECT_EQ(e.index(), 0);
    EXPECT_GE(e.last_accepted_time(), 0.0);
    EXPECT_LT(e.last_accepted_time(), 1.0);
  }
}

TEST(Dopri5, NonFiniteFieldIsReported) {
  const FunctionField blow(1, [](double t, const Vec& x) {
    return Vec(t > 0.5 ? Vec::Constant(1, std::nan("")) : x);
  });
  EXPECT_THROW(integrate(blow, Mat::Ones(1, 1), 0.0, 1.0, Dopri5Settings{}), NumericError);
}

TEST(FlowMap, RoundTripUnderOracleAtDefaults) {
  const OracleVelocity v(testing::gaussian_pair_1d());
  Rng rng(2);
  const Mat xs = rng.normal_matrix(1, 512);
  const Mat there = integrate(v, xs, 0.0, 1.0, Dopri5Settings{});
  const Mat back = integrate(v, there, 1.0, 0.0, Dopri5Settings{});
  EXPECT_LT((back - xs).cwiseAbs().maxCoeff(), 1e-4);
}

// The 2D oracle flows contract onto narrow modes, so the inverse amplifies
// forward error; at the default rtol the round trip sits near 6e-4.
TEST(FlowMap, RoundTripUnderTwoDimensionalOracles) {
  Dopri5Settings s;
  s.rtol = 1e-7;
  s.atol = 1e-9;
  for (const MixturePath& path : {testing::eight_gaussian_path(), testing::two_to_three_path()}) {
    const OracleVelocity v(path);
    Rng rng(2);
    const Mat xs = path.base().sample(512, rng);
    const Mat back = integrate(v, integrate(v, xs, 0.0, 1.0, s), 1.0, 0.0, s);
    EXPECT_LT((back - xs).cwiseAbs().maxCoeff(), 1e-4);
  }
}

TEST(FlowMap, Composition) {
  const OracleVelocity v(testing::two_to_three_path());
  Dopri5Settings s;
  s.rtol = 1e-7;
  s.atol = 1e-9;
  Rng rng(3);
  const Mat xs = v.path().base().sample(512, rng);
  const Mat direct = integrate(v, xs, 0.0, 1.0, s);
  const Mat composed = integrate(v, integrate(v, xs, 0.0, 0.5, s), 0.5, 1.0, s);
  EXPECT_LT((direct - composed).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(FlowMap, StartingStepStaysInsideInterval) {
  // The oracle rejects t > 1, so a probe past the end point would throw.
  const OracleVelocity v(testing::two_to_three_path());
  Rng rng(4);
  const Mat xs = v.path().base().sample(64, rng);
  EXPECT_NO_THROW(integrate(v, xs, 0.5, 1.0, Dopri5Settings{}));
  EXPECT_NO_THROW(integrate(v, xs, 0.5, 0.0, Dopri5Settings{}));
}

TEST(PushSamples, OracleMovesMean) {
  const MixturePath path(GaussianMixture::standard_normal(2),
                         GaussianMixture::gaussian(Vec2(2, 0), Mat::Identity(2, 2)),
                         Schedule::trigonometric());
  const OracleVelocity v(path);
  MixtureSampler base(path.base());
  const Index n = 4096;
  const Mat pushed = push_samples(v, base, n, Dopri5Settings{}, 4);
  const Vec mean = pushed.rowwise().mean();
  EXPECT_NEAR(mean[0], 2.0, 3.0 / std::sqrt(double(n)));
  EXPECT_NEAR(mean[1], 0.0, 3.0 / std::sqrt(double(n)));
}

TEST(PushSamples, ZeroFieldReturnsBaseDraws) {
  MixtureSampler base(GaussianMixture::standard_normal(3));
  const Mat pushed = push_samples(ZeroField(3), base, 50, Dopri5Settings{}, 5);
  EXPECT_EQ(pushed, base.sample(50, 5));
}

TEST(PushSamples, IdentityTransportPreservesMoments) {
  Mat c(2, 2);
  c << 1.0, 0.3, 0.3, 0.5;
  const GaussianMixture g = GaussianMixture::gaussian(Vec2(1, -1), c);
  const MixturePath path(g, g, Schedule::trigonometric());
  const OracleVelocity v(path);
  MixtureSampler base(g);
  const Index n = 4096;
  const Mat pushed = push_samples(v, base, n, Dopri5Settings{}, 6);
  const Vec mean = pushed.rowwise().mean();
  const Mat centered = pushed.colwise() - mean;
  const Mat cov = centered * centered.transpose() / double(n - 1);
  EXPECT_LT((mean - Vec2(1, -1)).cwiseAbs().maxCoeff(), 4.0 / std::sqrt(double(n)));
  EXPECT_LT((cov - c).cwiseAbs().maxCoeff(), 0.06);
}

TEST(PushSamples, RejectsZeroCount) {
  MixtureSampler base(GaussianMixture::standard_normal(1));
  EXPECT_THROW(push_samples(ZeroField(1), base, 0, Dopri5Settings{}, 1), DomainError);
}

LogDensity std_normal_ld(Index d) {
  auto g = std::make_shared<GaussianMixture>(GaussianMixture::standard_normal(d));
  return [g](const Vec& x) { return g->log_density(x); };
}

TEST(LogLikelihood, ConstantFieldIsTranslation) {
  const ConstantField v(Vec2(0.5, -1.0));
  const LogDensity ld = std_normal_ld(2);
  for (const Vec& x : {Vec2(0, 0), Vec2(1.5, -2.0), Vec2(-1, 3)})
    EXPECT_NEAR(log_likelihood(v, x, ld, Dopri5Settings{}), ld(x - Vec2(0.5, -1.0)), 1e-9);
}

TEST(LogLikelihood, GaussianPairMatchesAnalytic) {
  const MixturePath path = testing::gaussian_pair_1d();
  const OracleVelocity v(path);
  const LogDensity ld = std_normal_ld(1);
  double worst = 0;
  for (double x = -2; x <= 6.0001; x += 0.25) {
    const double est = log_likelihood(v, vec1(x), ld, Dopri5Settings{});
    worst = std::max(worst, std::abs(est - path.target().log_density(vec1(x))));
  }
  EXPECT_LT(worst, 1e-3);
}

TEST(LogLikelihood, EightGaussiansMatchesMixture) {
  const MixturePath path = testing::eight_gaussian_path();
  const OracleVelocity v(path);
  const LogDensity ld = std_normal_ld(2);
  Rng rng(7);
  const Mat xs = path.target().sample(256, rng);
  double total = 0;
  for (Index j = 0; j < xs.cols(); ++j)
    total += std::abs(log_likelihood(v, xs.col(j), ld, Dopri5Settings{}) -
                      path.target().log_density(xs.col(j)));
  EXPECT_LT(total / 256.0, 5e-3);
}

TEST(LogLikelihood, MassConservation) {
  const MixturePath path = testing::two_to_three_path();
  const OracleVelocity v(path);
  const LogDensity ld = [&](const Vec& x) { return path.base().log_density(x); };
  Rng rng(8);
  const Mat xs = path.target().sample(128, rng);
  double mean = 0;
  for (Index j = 0; j < xs.cols(); ++j)
    mean += std::exp(log_likelihood(v, xs.col(j), ld, Dopri5Settings{}) -
                     path.target().log_density(xs.col(j)));
  mean /= double(xs.cols());
  EXPECT_GE(mean, 0.99);
  EXPECT_LE(mean, 1.01);
}

TEST(LogLikelihood, NonFiniteBaseDensityIsError) {
  const LogDensity bad = [](const Vec&) { return -std::numeric_limits<double>::infinity(); };
  EXPECT_THROW(log_likelihood(ZeroField(1), vec1(0), bad, Dopri5Settings{}), NumericError);
}

TEST(SampleWithLikelihood, ZeroFieldKeepsBaseDensity) {
  MixtureSampler base(GaussianMixture::standard_normal(2));
  const LogDensity ld = std_normal_ld(2);
  const SamplesWithDensity s = sample_with_likelihood(ZeroField(2), base, ld, 20, Dopri5Settings{}, 9);
  for (Index j = 0; j < 20; ++j) EXPECT_EQ(s.log_density[j], ld(s.points.col(j)));
}

TEST(SampleWithLikelihood, ForwardMatchesBackward) {
  const MixturePath path = testing::two_to_three_path();
  const OracleVelocity v(path);
  MixtureSampler base(path.base());
  const LogDensity ld = [&](const Vec& x) { return path.base().log_density(x); };
  const SamplesWithDensity s = sample_with_likelihood(v, base, ld, 32, Dopri5Settings{}, 10);
  for (Index j = 0; j < 32; ++j)
    EXPECT_NEAR(s.log_density[j], log_likelihood(v, s.points.col(j), ld, Dopri5Settings{}), 1e-4);
}

// v(t, x) = x: X_1 = e x0, log rho_1(y) = log N(y e^{-1} | 0, 1) - 1.
TEST(SampleWithLikelihood, LinearField) {
  const AffineField v(Mat::Identity(1, 1), Vec::Zero(1));
  const LogDensity ld = std_normal_ld(1);
  for (double y : {-1.0, 0.3, 2.5}) {
    const double expected = ld(vec1(y * std::exp(-1.0))) - 1.0;
    EXPECT_NEAR(log_likelihood(v, vec1(y), ld, tight()), expected, 1e-6);
  }
  MixtureSampler base(GaussianMixture::standard_normal(1));
  const SamplesWithDensity s = sample_with_likelihood(v, base, ld, 3, tight(), 11);
  for (Index j = 0; j < 3; ++j) {
    const double y = s.points(0, j);
    EXPECT_NEAR(s.log_density[j], ld(vec1(y * std::exp(-1.0))) - 1.0, 1e-6);
  }
}

TEST(Augmented, EllStartsAtZeroAndAccumulatesDivergence) {
  const AffineField v(2.0 * Mat::Identity(2, 2), Vec::Zero(2));
  const AugmentedState end = integrate_augmented(v, Vec2(1, 1), 0.0, 0.5, tight());
  EXPECT_NEAR(end.ell, 4.0 * 0.5, 1e-8);
  EXPECT_NEAR(end.x[0], std::exp(1.0), 1e-6);
  EXPECT_EQ(integrate_augmented(v, Vec2(1, 1), 0.3, 0.3, Dopri5Settings{}).ell, 0.0);
}

}  // namespace
}  // namespace siflow
