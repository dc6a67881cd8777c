#pragma once

#include <cstdint>
#include <memory>

#include "siflow/interpolant.hpp"
#include "siflow/types.hpp"
#include "siflow/velocity_field.hpp"

namespace siflow {

/// Score of the interpolant density recovered from its velocity.
///
/// Valid only when the base density is a standard Gaussian. The closed form
/// is asserted for the trigonometric schedule; other linear schedules are
/// accepted only with `experimental_schedule` set.
struct ScoreField {
  std::shared_ptr<const VelocityField> velocity;
  Schedule schedule = Schedule::trigonometric();
  /// Times t >= 1 - epsilon_t use the t = 1 limit form.
  double epsilon_t = 1e-3;
  bool base_standard_gaussian = true;
  bool experimental_schedule = false;

  /// Throws ContractError when the configuration is not supported.
  void validate() const;
};

/// Step of the one-sided difference used for d/dt v at t = 1.
inline constexpr double kScoreLimitStep = 1e-4;

/// s_t(x) = (v - (b'/b) x) / (-a (a' - (b'/b) a)); for the trig schedule this
/// is (2/pi) tan(pi t/2) v - x, and at t >= 1 - epsilon_t the limit
/// -x - (4/pi^2) d/dt v|_{t=1}.
Vec score_from_velocity(const ScoreField& sf, double t, const Vec& x);
/// Column-wise version; one field evaluation per stencil time.
Mat score_from_velocity(const ScoreField& sf, double t, const Mat& xs);

/// Euler-Maruyama on dx = s_t(x) dtau + sqrt(2) dW, whose stationary law is
/// rho_t. Each column is an independent chain with its own seed derived from
/// `seed` and the column index. Throws NumericError with the step index on a
/// non-finite iterate.
Mat langevin_sample(const ScoreField& sf, double t, Mat init, double dtau,
                    std::int64_t n_steps, std::uint64_t seed);

/// a (a' - (b'/b) a). Non-positive on (0, 1) for admissible schedules. For the
/// trig schedule this is -(pi/2) cot(pi t/2), which tends to -infinity at
/// t = 0; other schedules with b(t) = 0 throw DomainError.
double backward_diffusion_coefficient(const Schedule& sched, double t);

}  // namespace siflow
