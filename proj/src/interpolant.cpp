#include "siflow/interpolant.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "siflow/csv.hpp"
#include "siflow/errors.hpp"
#include "siflow/spline.hpp"

namespace siflow {
namespace {

constexpr double kHalfPi = 0.5 * std::numbers::pi;

void check_time(double t) {
  if (!(t >= 0.0 && t <= 1.0))
    throw DomainError("interpolant time " + std::to_string(t) +
                      " outside [0, 1]");
}

void check_dims(const Vec& x0, const Vec& x1) {
  if (x0.size() != x1.size())
    throw ContractError("interpolant endpoints have dimensions " +
                        std::to_string(x0.size()) + " and " +
                        std::to_string(x1.size()));
}

}  // namespace

Schedule::Schedule(ScheduleKind kind, std::string name, Functions fns)
    : kind_(kind),
      name_(std::move(name)),
      fns_(std::make_shared<const Functions>(std::move(fns))) {}

Schedule Schedule::trigonometric() {
  // cos(pi/2) is 6e-17 in floating point; pin the endpoint so that
  // I_1(x0, x1) == x1 exactly.
  return Schedule(
      ScheduleKind::Trigonometric, "trig",
      Functions{
          [](double t) { return t == 1.0 ? 0.0 : std::cos(kHalfPi * t); },
          [](double t) { return std::sin(kHalfPi * t); },
          [](double t) { return -kHalfPi * std::sin(kHalfPi * t); },
          [](double t) { return t == 1.0 ? 0.0 : kHalfPi * std::cos(kHalfPi * t); },
      });
}

Schedule Schedule::linear_ramp() {
  return Schedule(ScheduleKind::LinearRamp, "linear",
                  Functions{
                      [](double t) { return 1.0 - t; },
                      [](double t) { return t; },
                      [](double) { return -1.0; },
                      [](double) { return 1.0; },
                  });
}

Schedule Schedule::custom(std::string name, Fn a, Fn b, Fn a_dot, Fn b_dot) {
  return Schedule(ScheduleKind::Custom, std::move(name),
                  Functions{std::move(a), std::move(b), std::move(a_dot),
                            std::move(b_dot)});
}

Schedule Schedule::tabulated(std::vector<double> t, std::vector<double> a,
                             std::vector<double> b) {
  auto sa = std::make_shared<const CubicSpline>(t, a);
  auto sb = std::make_shared<const CubicSpline>(t, b);
  return custom(
      "tabulated", [sa](double s) { return sa->value(s); },
      [sb](double s) { return sb->value(s); },
      [sa](double s) { return sa->derivative(s); },
      [sb](double s) { return sb->derivative(s); });
}

Schedule Schedule::from_csv(const std::filesystem::path& path) {
  const CsvTable table = read_csv(path);
  if (table.rows.cols() != 3)
    throw ConfigError(path.string() + ": schedule table needs columns t,a,b");
  std::vector<double> t, a, b;
  for (Index r = 0; r < table.rows.rows(); ++r) {
    t.push_back(table.rows(r, 0));
    a.push_back(table.rows(r, 1));
    b.push_back(table.rows(r, 2));
  }
  try {
    return tabulated(std::move(t), std::move(a), std::move(b));
  } catch (const DomainError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

Schedule Schedule::by_name(const std::string& name) {
  if (name == "trig") return trigonometric();
  if (name == "linear") return linear_ramp();
  throw ConfigError("unknown schedule '" + name + "' (expected trig|linear)");
}

Vec interpolate(const Schedule& sched, double t, const Vec& x0, const Vec& x1) {
  check_time(t);
  check_dims(x0, x1);
  return sched.a(t) * x0 + sched.b(t) * x1;
}

Vec path_velocity(const Schedule& sched, double t, const Vec& x0,
                  const Vec& x1) {
  check_time(t);
  check_dims(x0, x1);
  return sched.a_dot(t) * x0 + sched.b_dot(t) * x1;
}

bool ScheduleReport::all_passed() const {
  return std::all_of(checks.begin(), checks.end(),
                     [](const ScheduleCheck& c) { return c.passed; });
}

const ScheduleCheck& ScheduleReport::check(const std::string& name) const {
  for (const auto& c : checks)
    if (c.name == name) return c;
  throw ContractError("no schedule check named " + name);
}

ScheduleReport validate_schedule(const Schedule& sched) {
  constexpr double kBoundaryTol = 1e-12;
  constexpr double kFdStep = 1e-5;
  constexpr double kFdTol = 1e-6;
  const int n = kScheduleGridSize;
  auto grid = [n](int i) { return static_cast<double>(i) / (n - 1); };

  ScheduleReport report;

  // Each check tracks its worst violation; "badness" > 0 means failure.
  auto run = [&](std::string name, int first, int last, auto&& badness,
                 auto&& value) {
    ScheduleCheck c{std::move(name)};
    double worst = -INFINITY;
    for (int i = first; i <= last; ++i) {
      const double t = grid(i);
      const double bad = badness(t);
      if (bad > worst || std::isnan(bad)) {
        worst = std::isnan(bad) ? INFINITY : bad;
        c.worst_t = t;
        c.worst_value = value(t);
      }
    }
    c.passed = worst <= 0.0;
    report.checks.push_back(std::move(c));
  };

  {
    ScheduleCheck c{"boundary"};
    const double errs[4] = {std::abs(sched.a(0.0) - 1.0), std::abs(sched.a(1.0)),
                            std::abs(sched.b(0.0)), std::abs(sched.b(1.0) - 1.0)};
    const auto worst = std::max_element(std::begin(errs), std::end(errs));
    const auto k = std::distance(std::begin(errs), worst);
    c.worst_t = (k == 0 || k == 2) ? 0.0 : 1.0;
    c.worst_value = *worst;
    c.passed = *worst <= kBoundaryTol;
    report.checks.push_back(c);
  }

  run("a_dot_nonpositive", 0, n - 1, [&](double t) { return sched.a_dot(t); },
      [&](double t) { return sched.a_dot(t); });
  run("b_dot_nonnegative", 0, n - 1, [&](double t) { return -sched.b_dot(t); },
      [&](double t) { return sched.b_dot(t); });
  // Strict positivity: badness is -a, so a == 0 fails.
  run("a_positive", 0, n - 2,
      [&](double t) { return sched.a(t) > 0.0 ? -sched.a(t) : 1.0; },
      [&](double t) { return sched.a(t); });
  run("b_positive", 1, n - 1,
      [&](double t) { return sched.b(t) > 0.0 ? -sched.b(t) : 1.0; },
      [&](double t) { return sched.b(t); });

  auto fd_err = [&](auto&& f, auto&& df) {
    return [&, f, df](double t) {
      const double fd = (f(t + kFdStep) - f(t - kFdStep)) / (2.0 * kFdStep);
      const double exact = df(t);
      return std::abs(fd - exact) / std::max(std::abs(exact), 1.0);
    };
  };
  const auto a_err = fd_err([&](double t) { return sched.a(t); },
                            [&](double t) { return sched.a_dot(t); });
  const auto b_err = fd_err([&](double t) { return sched.b(t); },
                            [&](double t) { return sched.b_dot(t); });
  run("a_dot_matches_fd", 1, n - 2, [&](double t) { return a_err(t) - kFdTol; },
      a_err);
  run("b_dot_matches_fd", 1, n - 2, [&](double t) { return b_err(t) - kFdTol; },
      b_err);
  return report;
}

}  // namespace siflow
