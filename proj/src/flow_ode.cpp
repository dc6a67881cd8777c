#include "siflow/flow_ode.hpp"

#include <algorithm>
#include <cmath>

#include "siflow/errors.hpp"

namespace siflow {
namespace {

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
                 a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                 a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                 b5 = -2187.0 / 6784, b6 = 11.0 / 84;
// Fifth minus fourth order weights.
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

double error_norm(const Vec& err, const Vec& y0, const Vec& y1,
                  const Dopri5Settings& s, Index atol_only_tail) {
  const Index n = err.size();
  double worst = 0.0;
  for (Index i = 0; i < n; ++i) {
    double scale = s.atol;
    if (i < n - atol_only_tail)
      scale += s.rtol * std::max(std::abs(y0[i]), std::abs(y1[i]));
    worst = std::max(worst, std::abs(err[i]) / scale);
  }
  return worst;
}

// Hairer, Norsett & Wanner, "Solving ODEs I", II.4 starting step.
double initial_step(const OdeRhs& f, double t0, const Vec& y0, const Vec& f0,
                    double dir, double span, const Dopri5Settings& s,
                    Index atol_only_tail, OdeStats& stats) {
  const Index n = y0.size();
  Vec scale(n);
  for (Index i = 0; i < n; ++i)
    scale[i] = s.atol + (i < n - atol_only_tail ? s.rtol * std::abs(y0[i]) : 0.0);
  const double d0 = (y0.array() / scale.array()).matrix().norm() / std::sqrt(double(n));
  const double d1 = (f0.array() / scale.array()).matrix().norm() / std::sqrt(double(n));
  double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  // The probe must not leave [t0, t0 + span]: fields may be undefined outside.
  h0 = std::min(h0, span);
  const Vec y1 = y0 + dir * h0 * f0;
  const Vec f1 = f(t0 + dir * h0, y1);
  ++stats.evaluations;
  const double d2 =
      ((f1 - f0).array() / scale.array()).matrix().norm() / std::sqrt(double(n)) / h0;
  const double h1 = std::max(d1, d2) <= 1e-15
                        ? std::max(1e-6, h0 * 1e-3)
                        : std::pow(0.01 / std::max(d1, d2), 1.0 / 5.0);
  return std::min(100.0 * h0, h1);
}

}  // namespace

void Dopri5Settings::validate() const {
  if (!(rtol > 0.0 && atol > 0.0)) throw DomainError("rtol and atol must be positive");
  if (max_steps < 1) throw DomainError("max_steps must be >= 1");
  if (initial_step && !(*initial_step > 0.0))
    throw DomainError("initial_step must be positive");
  if (!(safety > 0.0 && min_factor > 0.0 && max_factor > 1.0))
    throw DomainError("invalid step-size factors");
}

Vec dopri5(const OdeRhs& f, Vec y, double t_from, double t_to,
           const Dopri5Settings& s, OdeStats* stats_out, Index atol_only_tail) {
  s.validate();
  OdeStats stats;
  if (t_from == t_to) return y;
  const double dir = t_to > t_from ? 1.0 : -1.0;
  const double span = std::abs(t_to - t_from);

  double t = t_from;
  Vec k1 = f(t, y);
  ++stats.evaluations;
  double h = s.initial_step ? *s.initial_step
                            : initial_step(f, t, y, k1, dir, span, s, atol_only_tail, stats);
  h = std::min(h, span);

  std::int64_t attempts = 0;
  while (dir * (t_to - t) > 0.0) {
    if (++attempts > s.max_steps)
      throw IntegrationError("integration exceeded max_steps (" +
                                 std::to_string(s.max_steps) + ") at t=" +
                                 std::to_string(t),
                             t);
    bool last = false;
    if (h >= std::abs(t_to - t)) {
      h = std::abs(t_to - t);
      last = true;
    }
    const double hs = dir * h;
    const Vec k2 = f(t + c2 * hs, y + hs * (a21 * k1));
    const Vec k3 = f(t + c3 * hs, y + hs * (a31 * k1 + a32 * k2));
    const Vec k4 = f(t + c4 * hs, y + hs * (a41 * k1 + a42 * k2 + a43 * k3));
    const Vec k5 = f(t + c5 * hs, y + hs * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    const double t_new = last ? t_to : t + hs;
    const Vec k6 = f(t + hs, y + hs * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    const Vec y_new = y + hs * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    const Vec k7 = f(t_new, y_new);
    stats.evaluations += 6;

    const Vec err = hs * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    const double en = error_norm(err, y, y_new, s, atol_only_tail);
    if (!std::isfinite(en) || !y_new.allFinite()) {
      ++stats.rejected;
      h *= s.min_factor;
      if (h < 1e-14 * std::max(1.0, std::abs(t)))
        throw IntegrationError("non-finite state during integration at t=" +
                                   std::to_string(t),
                               t);
      continue;
    }
    if (en <= 1.0) {
      t = t_new;
      y = y_new;
      k1 = k7;  // first-same-as-last
      ++stats.accepted;
      const double factor =
          en == 0.0 ? s.max_factor
                    : std::clamp(s.safety * std::pow(en, -0.2), s.min_factor, s.max_factor);
      h *= factor;
    } else {
      ++stats.rejected;
      h *= std::max(s.min_factor, s.safety * std::pow(en, -0.2));
      if (h < 1e-14 * std::max(1.0, std::abs(t)))
        throw IntegrationError("step size underflow at t=" + std::to_string(t), t);
    }
  }
  if (stats_out) *stats_out = stats;
  return y;
}

Mat integrate(const VelocityField& v, const Mat& xs, double t_from, double t_to,
              const Dopri5Settings& settings) {
  if (xs.rows() != v.dim()) throw ContractError("integrate: dimension mismatch");
  if (!(t_from >= 0.0 && t_from <= 1.0 && t_to >= 0.0 && t_to <= 1.0))
    throw DomainError("integration times must lie in [0, 1]");
  const OdeRhs rhs = [&v](double t, const Vec& x) { return v(t, x); };
  Mat out(xs.rows(), xs.cols());
  for (Index j = 0; j < xs.cols(); ++j) {
    try {
      out.col(j) = dopri5(rhs, xs.col(j), t_from, t_to, settings);
    } catch (const IntegrationError& e) {
      throw IntegrationError(std::string(e.what()) + " (point " + std::to_string(j) + ")",
                             e.last_accepted_time(), j);
    }
  }
  return out;
}

AugmentedState integrate_augmented(const VelocityField& v, const Vec& x,
                                   double t_from, double t_to,
                                   const Dopri5Settings& settings) {
  const Index d = v.dim();
  if (x.size() != d) throw ContractError("integrate_augmented: dimension mismatch");
  if (!(t_from >= 0.0 && t_from <= 1.0 && t_to >= 0.0 && t_to <= 1.0))
    throw DomainError("integration times must lie in [0, 1]");
  const OdeRhs rhs = [&v, d](double t, const Vec& y) {
    Vec dy(d + 1);
    const Vec xs = y.head(d);
    dy.head(d) = v(t, xs);
    dy[d] = v.divergence(t, xs);
    return dy;
  };
  Vec y(d + 1);
  y.head(d) = x;
  y[d] = 0.0;
  // ell has no natural relative scale: control it with atol only.
  const Vec end = dopri5(rhs, y, t_from, t_to, settings, nullptr, 1);
  return {end.head(d), end[d]};
}

Mat push_samples(const VelocityField& v, Sampler& base, Index n,
                 const Dopri5Settings& settings, std::uint64_t seed) {
  if (n < 1) throw DomainError("push_samples needs n >= 1");
  const Mat x0 = base.sample(n, seed);
  return integrate(v, x0, 0.0, 1.0, settings);
}

double log_likelihood(const VelocityField& v, const Vec& x,
                      const LogDensity& base_log_density,
                      const Dopri5Settings& settings) {
  const AugmentedState end = integrate_augmented(v, x, 1.0, 0.0, settings);
  const double base_ld = base_log_density(end.x);
  if (!std::isfinite(base_ld))
    throw NumericError("non-finite base log-density at the backward endpoint");
  // end.ell = int_1^0 div v = -int_0^1 div v.
  return base_ld + end.ell;
}

SamplesWithDensity sample_with_likelihood(const VelocityField& v, Sampler& base,
                                          const LogDensity& base_log_density,
                                          Index n, const Dopri5Settings& settings,
                                          std::uint64_t seed) {
  if (n < 1) throw DomainError("sample_with_likelihood needs n >= 1");
  const Mat x0 = base.sample(n, seed);
  SamplesWithDensity out{Mat(x0.rows(), n), Vec(n)};
  for (Index j = 0; j < n; ++j) {
    AugmentedState end;
    try {
      end = integrate_augmented(v, x0.col(j), 0.0, 1.0, settings);
    } catch (const IntegrationError& e) {
      throw IntegrationError(std::string(e.what()) + " (sample " + std::to_string(j) + ")",
                             e.last_accepted_time(), j);
    }
    out.points.col(j) = end.x;
    out.log_density[j] = base_log_density(x0.col(j)) - end.ell;
  }
  return out;
}

}  // namespace siflow
