#include "siflow/score_sde.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "siflow/errors.hpp"
#include "siflow/random.hpp"

namespace siflow {
namespace {

using std::numbers::pi;

bool is_trig(const ScoreField& sf) {
  return sf.schedule.kind() == ScheduleKind::Trigonometric;
}

// -a (a' - (b'/b) a) and b'/b; b(t) must be positive.
struct Coefficients {
  double ratio;        // b'/b
  double denominator;  // -a (a' - (b'/b) a)
};

Coefficients coefficients(const Schedule& s, double t) {
  const double b = s.b(t);
  if (!(b > 0.0))
    throw DomainError("score: b(t) = 0 at t=" + std::to_string(t));
  const double a = s.a(t);
  const double ratio = s.b_dot(t) / b;
  return {ratio, -a * (s.a_dot(t) - ratio * a)};
}

Mat limit_score(const ScoreField& sf, const Mat& xs) {
  const double h = kScoreLimitStep;
  const VelocityField& v = *sf.velocity;
  const Mat v0 = v.evaluate(1.0, xs);
  const Mat v1 = v.evaluate(1.0 - h, xs);
  const Mat v2 = v.evaluate(1.0 - 2.0 * h, xs);
  // Second-order backward difference; t > 1 is outside the domain.
  const Mat dv = (3.0 * v0 - 4.0 * v1 + v2) / (2.0 * h);
  if (is_trig(sf)) return -xs - (4.0 / (pi * pi)) * dv;

  // Numerator N = v - (b'/b) x and denominator D both vanish at t = 1 when
  // a(1) = 0, so s = N'(1) / D'(1).
  const Schedule& s = sf.schedule;
  auto ratio = [&s](double t) { return s.b_dot(t) / s.b(t); };
  auto denom = [&s, &ratio](double t) {
    const double a = s.a(t);
    return -a * (s.a_dot(t) - ratio(t) * a);
  };
  const double dratio = (3.0 * ratio(1.0) - 4.0 * ratio(1.0 - h) + ratio(1.0 - 2.0 * h)) / (2.0 * h);
  const double ddenom = (3.0 * denom(1.0) - 4.0 * denom(1.0 - h) + denom(1.0 - 2.0 * h)) / (2.0 * h);
  if (ddenom == 0.0) throw DomainError("score: degenerate schedule at t=1");
  return (dv - dratio * xs) / ddenom;
}

}  // namespace

void ScoreField::validate() const {
  if (!velocity) throw ContractError("score field has no velocity");
  if (!base_standard_gaussian)
    throw ContractError("score from velocity requires a standard Gaussian base");
  if (schedule.kind() != ScheduleKind::Trigonometric && !experimental_schedule)
    throw ContractError("score from velocity for schedule '" + schedule.name() +
                        "' requires the experimental flag");
  if (!(epsilon_t > 0.0 && epsilon_t < 0.5))
    throw ContractError("epsilon_t must lie in (0, 0.5)");
}

Mat score_from_velocity(const ScoreField& sf, double t, const Mat& xs) {
  sf.validate();
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("score: t outside [0, 1]");
  if (xs.rows() != sf.velocity->dim()) throw ContractError("score: dimension mismatch");
  if (t >= 1.0 - sf.epsilon_t) return limit_score(sf, xs);
  if (is_trig(sf)) {
    if (t == 0.0) return -xs;
    return (2.0 / pi) * std::tan(pi * t / 2.0) * sf.velocity->evaluate(t, xs) - xs;
  }
  const Coefficients c = coefficients(sf.schedule, t);
  return (sf.velocity->evaluate(t, xs) - c.ratio * xs) / c.denominator;
}

Vec score_from_velocity(const ScoreField& sf, double t, const Vec& x) {
  const Mat xs = x;
  return score_from_velocity(sf, t, xs).col(0);
}

Mat langevin_sample(const ScoreField& sf, double t, Mat x, double dtau,
                    std::int64_t n_steps, std::uint64_t seed) {
  if (!(dtau > 0.0)) throw DomainError("langevin: dtau must be positive");
  if (n_steps < 0) throw DomainError("langevin: n_steps must be >= 0");
  if (n_steps == 0) return x;
  sf.validate();
  std::vector<Rng> rngs;
  rngs.reserve(static_cast<std::size_t>(x.cols()));
  for (Index j = 0; j < x.cols(); ++j)
    rngs.emplace_back(derive_seed(seed, Stream::Langevin, static_cast<std::uint64_t>(j)));
  const double noise = std::sqrt(2.0 * dtau);
  for (std::int64_t step = 0; step < n_steps; ++step) {
    const Mat s = score_from_velocity(sf, t, x);
    x += dtau * s;
    for (Index j = 0; j < x.cols(); ++j)
      for (Index i = 0; i < x.rows(); ++i) x(i, j) += noise * rngs[static_cast<std::size_t>(j)].normal();
    if (!x.allFinite())
      throw NumericError("langevin: non-finite iterate at step " + std::to_string(step),
                         static_cast<std::ptrdiff_t>(step));
  }
  return x;
}

double backward_diffusion_coefficient(const Schedule& sched, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("t outside [0, 1]");
  if (sched.kind() == ScheduleKind::Trigonometric) {
    if (t == 0.0) return -std::numeric_limits<double>::infinity();
    if (t == 1.0) return 0.0;
    return -(pi / 2.0) / std::tan(pi * t / 2.0);
  }
  const double b = sched.b(t);
  if (!(b > 0.0))
    throw DomainError("backward diffusion coefficient has a pole at t=" + std::to_string(t));
  const double a = sched.a(t);
  return a * (sched.a_dot(t) - sched.b_dot(t) / b * a);
}

}  // namespace siflow
