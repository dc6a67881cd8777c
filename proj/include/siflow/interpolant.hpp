#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "siflow/types.hpp"

namespace siflow {

enum class ScheduleKind { Trigonometric, LinearRamp, Custom };

/// The coefficient pair (a_t, b_t) of a linear interpolant
/// I_t(x0, x1) = a_t x0 + b_t x1, together with its time derivatives.
///
/// Schedules are immutable and cheap to copy; the coefficient functions are
/// shared between copies.
class Schedule {
 public:
  using Fn = std::function<double(double)>;

  /// a = cos(pi t / 2), b = sin(pi t / 2).
  static Schedule trigonometric();
  /// a = 1 - t, b = t.
  static Schedule linear_ramp();
  /// User-supplied coefficients. Nothing is checked here; run
  /// validate_schedule() for that.
  static Schedule custom(std::string name, Fn a, Fn b, Fn a_dot, Fn b_dot);
  /// Tabulated (t, a, b) triples with increasing t, interpolated by natural
  /// cubic splines.
  static Schedule tabulated(std::vector<double> t, std::vector<double> a,
                            std::vector<double> b);
  /// CSV with a header row and columns t, a, b.
  static Schedule from_csv(const std::filesystem::path& path);
  /// "trig" or "linear".
  static Schedule by_name(const std::string& name);

  double a(double t) const { return fns_->a(t); }
  double b(double t) const { return fns_->b(t); }
  double a_dot(double t) const { return fns_->a_dot(t); }
  double b_dot(double t) const { return fns_->b_dot(t); }

  ScheduleKind kind() const { return kind_; }
  const std::string& name() const { return name_; }

 private:
  struct Functions {
    Fn a, b, a_dot, b_dot;
  };
  Schedule(ScheduleKind kind, std::string name, Functions fns);

  ScheduleKind kind_;
  std::string name_;
  std::shared_ptr<const Functions> fns_;
};

/// a(t) x0 + b(t) x1. Throws DomainError for t outside [0, 1] and
/// ContractError on dimension mismatch.
Vec interpolate(const Schedule& sched, double t, const Vec& x0, const Vec& x1);

/// d/dt I_t(x0, x1) = a_dot(t) x0 + b_dot(t) x1.
Vec path_velocity(const Schedule& sched, double t, const Vec& x0,
                  const Vec& x1);

struct ScheduleCheck {
  std::string name;
  bool passed = true;
  /// Grid time of the worst offender and the offending quantity there.
  double worst_t = 0.0;
  double worst_value = 0.0;
};

struct ScheduleReport {
  std::vector<ScheduleCheck> checks;

  bool all_passed() const;
  const ScheduleCheck& check(const std::string& name) const;
};

/// Number of points of the uniform validation grid on [0, 1].
inline constexpr int kScheduleGridSize = 1001;

/// Checks boundary values, monotonicity (a_dot <= 0, b_dot >= 0), positivity
/// (a > 0 on [0,1), b > 0 on (0,1]) and agreement of a_dot/b_dot with central
/// finite differences, on a 1001-point grid. Never throws.
ScheduleReport validate_schedule(const Schedule& sched);

}  // namespace siflow
