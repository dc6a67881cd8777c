#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "siflow/data.hpp"
#include "siflow/flow_ode.hpp"
#include "siflow/gmm.hpp"
#include "siflow/stats.hpp"
#include "siflow/types.hpp"
#include "siflow/velocity_field.hpp"

namespace siflow {

/// Largest point count accepted by exact_w2.
inline constexpr Index kMaxExactAssignment = 4096;

/// Minimum-cost perfect matching for a square cost matrix (shortest
/// augmenting paths, O(n^3)). Returns assignment[row] = column.
std::vector<Index> solve_assignment(const Mat& cost);

/// sqrt of the optimal-assignment mean squared distance between two equally
/// sized point sets (columns). DomainError on size mismatch or n > 4096.
double exact_w2(const Mat& a, const Mat& b);

struct EvalReport {
  std::string metric;
  double value = 0.0;
  std::optional<double> std_error;  // absent for exact values
  bool valid = true;
  std::map<std::string, std::int64_t> sizes;
  std::map<std::string, std::uint64_t> seeds;
  std::map<std::string, double> extra;
  std::string settings_hash;
  std::string note;
};

/// Writes the reports as one JSON document.
void write_reports(std::ostream& out, const std::vector<EvalReport>& reports);

struct NllResult {
  Estimate nll;
  Index failures = 0;
  bool valid = true;
  Vec log_density;  // NaN at failed points
};

/// Mean of -log rho_1 over the columns of `points`, plus `log_det_correction`
/// (added to each log-density, e.g. the standardization term). Integration
/// failures are excluded and counted; more than 1% marks the result invalid.
NllResult heldout_nll(const VelocityField& v, const Mat& points,
                      const LogDensity& base_log_density,
                      const Dopri5Settings& settings,
                      double log_det_correction = 0.0);

struct BoundCheck {
  double lhs = 0.0;          // W2^2 between pushforward and target draws
  double rhs = 0.0;          // e^{1 + 2K} H
  double lipschitz = 0.0;    // K estimate
  Estimate h;                // H estimate
  double noise_floor = 0.0;  // two-sample W2 between independent target sets
  bool violation = false;
  Index n = 0;
  std::uint64_t seed = 0;
};

struct BoundCheckOptions {
  std::size_t h_samples = 20000;
  Index time_points = 21;
  Index space_points = 441;
  double fd_step = 1e-5;
};

struct Box {
  Vec lo;
  Vec hi;
};

/// Per-coordinate box covering mean +- 3 sd of every component of both
/// endpoint mixtures of the path.
Box bulk_box(const MixturePath& path);

/// `count` probe points in a box: a uniform line for d = 1, a square grid of
/// round(sqrt(count))^2 points for d = 2, seeded uniform draws otherwise.
Mat probe_points(const Box& box, Index count, std::uint64_t seed);

/// Finite-difference estimate of sup ||D_x v|| (spectral norm) over a probe
/// grid: `time_points` uniform times times `space_points` points filling the
/// 3-sigma box of the path's endpoint mixtures.
double lipschitz_estimate(const MixturePath& path, const VelocityField& v,
                          const BoundCheckOptions& options, std::uint64_t seed);

/// Compares W2^2(target, pushforward of v_hat) with e^{1+2K} H(v_hat).
/// A violation is reported only when sqrt(lhs) exceeds
/// sqrt(rhs + 3 e^{1+2K} se(H)) + 1.5 * noise_floor, where noise_floor is the
/// W2 distance between two independent target sets of the same size.
BoundCheck wasserstein_bound_check(const MixturePath& path,
                                   const VelocityField& v_hat, Index n,
                                   const Dopri5Settings& settings,
                                   std::uint64_t seed,
                                   const BoundCheckOptions& options = {});

struct ErrorMap {
  Vec times;
  Mat points;  // one column per spatial grid point
  Mat errors;  // errors(i, j) = |v_hat - v|(times[i], points.col(j))
  double max() const { return errors.size() ? errors.maxCoeff() : 0.0; }
};

ErrorMap velocity_error_map(const MixturePath& path, const VelocityField& v_hat,
                            const Vec& times, const Mat& points);

/// CSV with columns t, x_1..x_d, error.
void write_error_map(std::ostream& out, const ErrorMap& map);

/// Uniform grid of n points on [lo, hi].
Vec linspace(double lo, double hi, Index n);

}  // namespace siflow
