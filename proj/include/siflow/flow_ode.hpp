#pragma once

#include <cstdint>
#include <functional>
#include <optional>

#include "siflow/data.hpp"
#include "siflow/types.hpp"
#include "siflow/velocity_field.hpp"

namespace siflow {

struct Dopri5Settings {
  double rtol = 1e-5;
  double atol = 1e-7;
  std::int64_t max_steps = 100000;
  std::optional<double> initial_step;
  double safety = 0.9;
  double min_factor = 0.2;
  double max_factor = 10.0;

  /// Throws DomainError for non-positive tolerances or factors.
  void validate() const;
};

/// Right-hand side dy/dt = f(t, y).
using OdeRhs = std::function<Vec(double, const Vec&)>;

struct OdeStats {
  std::int64_t accepted = 0;
  std::int64_t rejected = 0;
  std::int64_t evaluations = 0;
};

/// Adaptive Dormand-Prince 5(4) integration of y from t_from to t_to (either
/// direction). The embedded error is controlled per component:
/// |err_i| <= abs_tol_i + rtol * max(|y_i|, |y_new_i|), where abs_tol_i is
/// atol and components flagged in `atol_only` use atol alone (no relative
/// term). Throws IntegrationError after max_steps accepted-or-rejected
/// attempts, carrying the last accepted time.
Vec dopri5(const OdeRhs& f, Vec y, double t_from, double t_to,
           const Dopri5Settings& settings, OdeStats* stats = nullptr,
           Index atol_only_tail = 0);

/// Flow map X_{t_from -> t_to} applied to every column of `xs`.
/// IntegrationError carries the offending column index.
Mat integrate(const VelocityField& v, const Mat& xs, double t_from,
              double t_to, const Dopri5Settings& settings);

/// A point together with the accumulated divergence integral
/// ell = int_{t_start}^{t} div v(X_s) ds.
struct AugmentedState {
  Vec x;
  double ell = 0.0;
};

/// Integrates the augmented system (dx/dt = v, d ell/dt = div v) from ell = 0.
AugmentedState integrate_augmented(const VelocityField& v, const Vec& x,
                                   double t_from, double t_to,
                                   const Dopri5Settings& settings);

/// Draws n base points (seeded) and pushes them from t = 0 to t = 1.
Mat push_samples(const VelocityField& v, Sampler& base, Index n,
                 const Dopri5Settings& settings, std::uint64_t seed);

using LogDensity = std::function<double(const Vec&)>;

/// log rho_1(x) = log rho_0(X_{1->0}(x)) - int_0^1 div v ds, by integrating
/// the augmented system backward. Throws NumericError if the base
/// log-density at the endpoint is not finite.
double log_likelihood(const VelocityField& v, const Vec& x,
                      const LogDensity& base_log_density,
                      const Dopri5Settings& settings);

struct SamplesWithDensity {
  Mat points;        // at t = 1
  Vec log_density;   // log rho_1 at each point
};

/// Forward variant: integrates 0 -> 1 and accumulates
/// log rho_1(X_1(x0)) = log rho_0(x0) - int_0^1 div v.
SamplesWithDensity sample_with_likelihood(const VelocityField& v, Sampler& base,
                                          const LogDensity& base_log_density,
                                          Index n, const Dopri5Settings& settings,
                                          std::uint64_t seed);

}  // namespace siflow
