#include "siflow/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/SVD>

#include "json_io.hpp"
#include "siflow/csv.hpp"
#include "siflow/errors.hpp"
#include "siflow/random.hpp"

namespace siflow {

std::vector<Index> solve_assignment(const Mat& cost) {
  const Index n = cost.rows();
  if (cost.cols() != n) throw ContractError("assignment cost must be square");
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials u (rows), v (columns); p[j] = row matched to column j.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<Index> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (Index i = 1; i <= n; ++i) {
    p[0] = i;
    Index j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const Index i0 = p[j0];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const Index j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<Index> assignment(n);
  for (Index j = 1; j <= n; ++j) assignment[p[j] - 1] = j - 1;
  return assignment;
}

double exact_w2(const Mat& a, const Mat& b) {
  if (a.cols() != b.cols())
    throw DomainError("exact_w2: point counts differ (" + std::to_string(a.cols()) +
                      " vs " + std::to_string(b.cols()) + ")");
  if (a.rows() != b.rows()) throw DomainError("exact_w2: dimensions differ");
  const Index n = a.cols();
  if (n > kMaxExactAssignment)
    throw DomainError("exact_w2: n=" + std::to_string(n) + " exceeds the exact limit " +
                      std::to_string(kMaxExactAssignment));
  if (n == 0) return 0.0;
  // |a_i - b_j|^2 = |a_i|^2 + |b_j|^2 - 2 a_i.b_j
  Mat cost = -2.0 * (a.transpose() * b);
  cost.colwise() += a.colwise().squaredNorm().transpose();
  cost.rowwise() += b.colwise().squaredNorm();
  cost = cost.cwiseMax(0.0);
  const std::vector<Index> match = solve_assignment(cost);
  double total = 0.0;
  for (Index i = 0; i < n; ++i) total += (a.col(i) - b.col(match[i])).squaredNorm();
  return std::sqrt(total / static_cast<double>(n));
}

void write_reports(std::ostream& out, const std::vector<EvalReport>& reports) {
  detail::Json arr = detail::Json::array();
  for (const EvalReport& r : reports) {
    detail::Json j;
    j["metric"] = r.metric;
    j["value"] = r.value;
    if (r.std_error)
      j["std_error"] = *r.std_error;
    else
      j["exact"] = true;
    j["valid"] = r.valid;
    j["sizes"] = r.sizes;
    j["seeds"] = r.seeds;
    if (!r.extra.empty()) j["extra"] = r.extra;
    j["settings_hash"] = r.settings_hash;
    if (!r.note.empty()) j["note"] = r.note;
    arr.push_back(std::move(j));
  }
  out << detail::Json{{"reports", arr}}.dump(2) << '\n';
}

NllResult heldout_nll(const VelocityField& v, const Mat& points,
                      const LogDensity& base_log_density,
                      const Dopri5Settings& settings, double log_det_correction) {
  if (points.rows() != v.dim()) throw ContractError("heldout_nll: dimension mismatch");
  if (points.cols() == 0) throw DomainError("heldout_nll: no points");
  NllResult out;
  out.log_density = Vec::Constant(points.cols(), std::numeric_limits<double>::quiet_NaN());
  RunningStats stats;
  for (Index j = 0; j < points.cols(); ++j) {
    try {
      const double ld = log_likelihood(v, points.col(j), base_log_density, settings) +
                        log_det_correction;
      out.log_density[j] = ld;
      stats.add(-ld);
    } catch (const NumericError&) {
      ++out.failures;
    }
  }
  out.nll = stats.estimate();
  out.valid = static_cast<double>(out.failures) <= 0.01 * static_cast<double>(points.cols()) &&
              stats.count() > 0;
  return out;
}

Box bulk_box(const MixturePath& path) {
  const Index d = path.dim();
  Vec lo = Vec::Constant(d, std::numeric_limits<double>::infinity());
  Vec hi = -lo;
  for (const GaussianMixture* g : {&path.base(), &path.target()}) {
    for (Index k = 0; k < g->size(); ++k) {
      const Vec sd = g->covariance(k).diagonal().cwiseSqrt();
      lo = lo.cwiseMin(g->mean(k) - 3.0 * sd);
      hi = hi.cwiseMax(g->mean(k) + 3.0 * sd);
    }
  }
  return {lo, hi};
}

Mat probe_points(const Box& box, Index count, std::uint64_t seed) {
  const Vec& lo = box.lo;
  const Vec& hi = box.hi;
  const Index d = lo.size();
  Mat pts(d, count);
  if (d == 1) {
    pts.row(0) = linspace(lo[0], hi[0], count).transpose();
  } else if (d == 2) {
    const Index side = static_cast<Index>(std::llround(std::sqrt(double(count))));
    pts.resize(2, side * side);
    const Vec gx = linspace(lo[0], hi[0], side), gy = linspace(lo[1], hi[1], side);
    for (Index i = 0; i < side; ++i)
      for (Index j = 0; j < side; ++j) pts.col(i * side + j) << gx[i], gy[j];
  } else {
    Rng rng(derive_seed(seed, Stream::Probe));
    for (Index j = 0; j < count; ++j)
      for (Index i = 0; i < d; ++i) pts(i, j) = rng.uniform(lo[i], hi[i]);
  }
  return pts;
}

namespace {

Mat fd_jacobian(const VelocityField& v, double t, const Vec& x, double h) {
  const Index d = x.size();
  Mat jac(d, d);
  Vec xp = x, xm = x;
  for (Index k = 0; k < d; ++k) {
    xp[k] = x[k] + h;
    xm[k] = x[k] - h;
    jac.col(k) = (v(t, xp) - v(t, xm)) / (2.0 * h);
    xp[k] = xm[k] = x[k];
  }
  return jac;
}

}  // namespace

double lipschitz_estimate(const MixturePath& path, const VelocityField& v,
                          const BoundCheckOptions& options, std::uint64_t seed) {
  const Mat pts = probe_points(bulk_box(path), options.space_points, seed);
  const Vec ts = linspace(0.0, 1.0, options.time_points);
  double k = 0.0;
  for (Index i = 0; i < ts.size(); ++i)
    for (Index j = 0; j < pts.cols(); ++j) {
      const Mat jac = fd_jacobian(v, ts[i], pts.col(j), options.fd_step);
      const double norm = Eigen::JacobiSVD<Mat>(jac).singularValues()(0);
      k = std::max(k, norm);
    }
  return k;
}

BoundCheck wasserstein_bound_check(const MixturePath& path, const VelocityField& v_hat,
                                   Index n, const Dopri5Settings& settings,
                                   std::uint64_t seed, const BoundCheckOptions& options) {
  if (v_hat.dim() != path.dim()) throw ContractError("bound check: dimension mismatch");
  BoundCheck out;
  out.n = n;
  out.seed = seed;
  MixtureSampler base(path.base());
  const Mat pushed = push_samples(v_hat, base, n, settings, derive_seed(seed, Stream::Base));
  Rng target_rng(derive_seed(seed, Stream::Target));
  const Mat target = path.target().sample(n, target_rng);
  const double w2 = exact_w2(pushed, target);
  out.lhs = w2 * w2;

  Rng floor_a(derive_seed(seed, Stream::Eval, 0)), floor_b(derive_seed(seed, Stream::Eval, 1));
  out.noise_floor = exact_w2(path.target().sample(n, floor_a), path.target().sample(n, floor_b));

  out.lipschitz = lipschitz_estimate(path, v_hat, options, seed);
  out.h = exact_H(path, v_hat, options.h_samples, derive_seed(seed, Stream::Diagnostic));
  const double growth = std::exp(1.0 + 2.0 * out.lipschitz);
  out.rhs = growth * out.h.mean;
  const double rhs_upper = std::max(0.0, out.rhs + 3.0 * growth * out.h.std_error);
  out.violation = w2 > std::sqrt(rhs_upper) + 1.5 * out.noise_floor;
  return out;
}

ErrorMap velocity_error_map(const MixturePath& path, const VelocityField& v_hat,
                            const Vec& times, const Mat& points) {
  if (points.rows() != path.dim() || v_hat.dim() != path.dim())
    throw ContractError("velocity_error_map: dimension mismatch");
  ErrorMap map{times, points, Mat(times.size(), points.cols())};
  for (Index i = 0; i < times.size(); ++i) {
    const PathSlice slice = path.at(times[i]);
    const Mat vh = v_hat.evaluate(times[i], points);
    for (Index j = 0; j < points.cols(); ++j)
      map.errors(i, j) = (vh.col(j) - slice.velocity(points.col(j))).norm();
  }
  return map;
}

void write_error_map(std::ostream& out, const ErrorMap& map) {
  const Index d = map.points.rows();
  std::vector<std::string> header{"t"};
  for (Index i = 0; i < d; ++i) header.push_back("x_" + std::to_string(i + 1));
  header.push_back("error");
  Mat rows(d + 2, map.times.size() * map.points.cols());
  Index c = 0;
  for (Index i = 0; i < map.times.size(); ++i)
    for (Index j = 0; j < map.points.cols(); ++j, ++c) {
      rows(0, c) = map.times[i];
      rows.block(1, c, d, 1) = map.points.col(j);
      rows(d + 1, c) = map.errors(i, j);
    }
  write_csv(out, header, rows);
}

Vec linspace(double lo, double hi, Index n) {
  if (n == 1) return Vec::Constant(1, lo);
  return Vec::LinSpaced(n, lo, hi);
}

}  // namespace siflow
