#include "siflow/gmm.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "siflow/errors.hpp"

namespace siflow {
namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

double half_log_det(const Eigen::LLT<Mat>& chol) {
  return chol.matrixLLT().diagonal().array().log().sum();
}

Eigen::LLT<Mat> factor_spd(const Mat& c, const std::string& what) {
  if (c.rows() != c.cols()) throw ContractError(what + " is not square");
  if (!c.allFinite()) throw DomainError(what + " has non-finite entries");
  const double scale = std::max(1.0, c.cwiseAbs().maxCoeff());
  if ((c - c.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw DomainError(what + " is not symmetric");
  Eigen::LLT<Mat> chol(c);
  if (chol.info() != Eigen::Success ||
      !(chol.matrixLLT().diagonal().array() > 0.0).all())
    throw DomainError(what + " is not positive definite");
  return chol;
}

}  // namespace

double log_gaussian(const Vec& x, const Vec& mean, const Eigen::LLT<Mat>& chol) {
  const Vec z = chol.matrixL().solve(x - mean);
  return -0.5 * static_cast<double>(x.size()) * kLog2Pi - half_log_det(chol) -
         0.5 * z.squaredNorm();
}

GaussianMixture::GaussianMixture(std::vector<double> weights,
                                 std::vector<Vec> means,
                                 std::vector<Mat> covariances)
    : weights_(std::move(weights)),
      means_(std::move(means)),
      covs_(std::move(covariances)) {
  if (weights_.empty()) throw DomainError("mixture has no components");
  if (means_.size() != weights_.size() || covs_.size() != weights_.size())
    throw ContractError("mixture weights, means and covariances differ in count");
  dim_ = means_.front().size();
  if (dim_ < 1) throw ContractError("mixture dimension must be positive");
  double total = 0.0;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    if (!(weights_[i] > 0.0))
      throw DomainError("mixture weight " + std::to_string(i) +
                        " is not positive");
    total += weights_[i];
    if (means_[i].size() != dim_ || covs_[i].rows() != dim_)
      throw ContractError("mixture component " + std::to_string(i) +
                          " has the wrong dimension");
    if (!means_[i].allFinite())
      throw DomainError("mixture mean " + std::to_string(i) + " is not finite");
    chol_.push_back(
        factor_spd(covs_[i], "covariance of component " + std::to_string(i)));
    log_weights_.push_back(std::log(weights_[i]));
    log_norm_.push_back(-0.5 * static_cast<double>(dim_) * kLog2Pi -
                        half_log_det(chol_.back()));
  }
  if (std::abs(total - 1.0) > 1e-12)
    throw DomainError("mixture weights sum to " + std::to_string(total));
}

GaussianMixture GaussianMixture::standard_normal(Index dim) {
  return gaussian(Vec::Zero(dim), Mat::Identity(dim, dim));
}

GaussianMixture GaussianMixture::gaussian(Vec mean, Mat covariance) {
  return GaussianMixture({1.0}, {std::move(mean)}, {std::move(covariance)});
}

GaussianMixture GaussianMixture::isotropic(std::vector<double> weights,
                                           std::vector<Vec> means,
                                           std::vector<double> variances) {
  if (variances.size() != means.size())
    throw ContractError("isotropic mixture: variance count mismatch");
  std::vector<Mat> covs;
  for (std::size_t i = 0; i < means.size(); ++i)
    covs.push_back(variances[i] *
                   Mat::Identity(means[i].size(), means[i].size()));
  return GaussianMixture(std::move(weights), std::move(means), std::move(covs));
}

double GaussianMixture::log_density(const Vec& x) const {
  if (x.size() != dim_) throw ContractError("mixture: point dimension mismatch");
  double lmax = -std::numeric_limits<double>::infinity();
  std::vector<double> lw(weights_.size());
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    const Vec z = chol_[i].matrixL().solve(x - means_[i]);
    lw[i] = log_weights_[i] + log_norm_[i] - 0.5 * z.squaredNorm();
    lmax = std::max(lmax, lw[i]);
  }
  double s = 0.0;
  for (double l : lw) s += std::exp(l - lmax);
  return lmax + std::log(s);
}

double GaussianMixture::density(const Vec& x) const {
  return std::exp(log_density(x));
}

Vec GaussianMixture::score(const Vec& x) const {
  if (x.size() != dim_) throw ContractError("mixture: point dimension mismatch");
  std::vector<double> lw(weights_.size());
  std::vector<Vec> scores(weights_.size());
  double lmax = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    const Vec r = x - means_[i];
    const Vec z = chol_[i].matrixL().solve(r);
    lw[i] = log_weights_[i] + log_norm_[i] - 0.5 * z.squaredNorm();
    scores[i] = -chol_[i].solve(r);
    lmax = std::max(lmax, lw[i]);
  }
  Vec acc = Vec::Zero(dim_);
  double s = 0.0;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    const double w = std::exp(lw[i] - lmax);
    acc += w * scores[i];
    s += w;
  }
  return acc / s;
}

Vec GaussianMixture::expectation() const {
  Vec m = Vec::Zero(dim_);
  for (std::size_t i = 0; i < weights_.size(); ++i) m += weights_[i] * means_[i];
  return m;
}

bool GaussianMixture::is_standard_normal() const {
  return weights_.size() == 1 && means_[0].isZero(0.0) &&
         covs_[0].isIdentity(0.0);
}

Mat GaussianMixture::sample(Index n, Rng& rng) const {
  Mat out(dim_, n);
  for (Index j = 0; j < n; ++j) {
    std::size_t k = 0;
    if (weights_.size() > 1) {
      double u = rng.uniform();
      while (k + 1 < weights_.size() && u >= weights_[k]) u -= weights_[k++];
    }
    Vec z(dim_);
    for (Index i = 0; i < dim_; ++i) z[i] = rng.normal();
    out.col(j) = means_[k] + chol_[k].matrixL() * z;
  }
  return out;
}

// ---------------------------------------------------------------------------

struct PathSlice::Sums {
  double lmax = -std::numeric_limits<double>::infinity();
  double s = 0.0;  // sum of exp(lw - lmax)
  Vec u;           // sum of w * velocity_k
  Vec score;       // sum of w * score_k
  Mat gain;        // sum of w * gain_k
  Mat u_score;     // sum of w * velocity_k score_k^T

  // Rescales the accumulators when a larger log weight arrives.
  double weight_for(double lw, bool jac) {
    if (lw > lmax) {
      if (std::isfinite(lmax)) {
        const double r = std::exp(lmax - lw);
        s *= r;
        u *= r;
        score *= r;
        if (jac) {
          gain *= r;
          u_score *= r;
        }
      }
      lmax = lw;
    }
    return std::exp(lw - lmax);
  }
};

PathSlice::PathSlice(const MixturePath& path, double t)
    : path_(&path),
      t_(t),
      a_(path.schedule_.a(t)),
      b_(path.schedule_.b(t)),
      a_dot_(path.schedule_.a_dot(t)),
      b_dot_(path.schedule_.b_dot(t)) {
  const Index n0 = path.base_.size();
  const Index n1 = path.target_.size();
  if (n0 * n1 <= MixturePath::kMaterializeLimit) {
    pairs_.reserve(static_cast<std::size_t>(n0 * n1));
    for (Index i = 0; i < n0; ++i)
      for (Index j = 0; j < n1; ++j) pairs_.push_back(make_pair(i, j));
    materialized_ = true;
  }
}

PathSlice::Pair PathSlice::make_pair(Index i, Index j) const {
  const auto& g0 = path_->base_;
  const auto& g1 = path_->target_;
  Pair p;
  p.mean = a_ * g0.mean(i) + b_ * g1.mean(j);
  p.mean_dot = a_dot_ * g0.mean(i) + b_dot_ * g1.mean(j);
  const Mat cov = a_ * a_ * g0.covariance(i) + b_ * b_ * g1.covariance(j);
  const Mat cov_dot = 2.0 * a_ * a_dot_ * g0.covariance(i) +
                      2.0 * b_ * b_dot_ * g1.covariance(j);
  p.chol.compute(cov);
  if (p.chol.info() != Eigen::Success)
    throw DomainError("pair covariance is singular at t=" + std::to_string(t_));
  // gain = 1/2 C_dot C^{-1}; C is symmetric so solve from the right via
  // (C^{-1} C_dot)^T.
  p.gain = 0.5 * p.chol.solve(cov_dot).transpose();
  p.log_weight = std::log(g0.weight(i)) + std::log(g1.weight(j)) -
                 0.5 * static_cast<double>(cov.rows()) * kLog2Pi -
                 half_log_det(p.chol);
  return p;
}

PathSlice::Sums PathSlice::accumulate(const Vec& x, bool jac) const {
  const Index d = path_->dim();
  if (x.size() != d) throw ContractError("path: point dimension mismatch");
  Sums acc;
  acc.u = Vec::Zero(d);
  acc.score = Vec::Zero(d);
  if (jac) {
    acc.gain = Mat::Zero(d, d);
    acc.u_score = Mat::Zero(d, d);
  }
  auto visit = [&](const Pair& p) {
    const Vec r = x - p.mean;
    const Vec z = p.chol.matrixL().solve(r);
    const double lw = p.log_weight - 0.5 * z.squaredNorm();
    const double w = acc.weight_for(lw, jac);
    const Vec u = p.mean_dot + p.gain * r;
    const Vec s = -p.chol.matrixU().solve(z);
    acc.s += w;
    acc.u += w * u;
    acc.score += w * s;
    if (jac) {
      acc.gain += w * p.gain;
      acc.u_score += w * u * s.transpose();
    }
  };
  if (materialized_) {
    for (const auto& p : pairs_) visit(p);
  } else {
    const Index n0 = path_->base_.size();
    const Index n1 = path_->target_.size();
    for (Index i = 0; i < n0; ++i)
      for (Index j = 0; j < n1; ++j) visit(make_pair(i, j));
  }
  return acc;
}

double PathSlice::log_density(const Vec& x) const {
  const Sums acc = accumulate(x, false);
  return acc.lmax + std::log(acc.s);
}

double PathSlice::density(const Vec& x) const {
  return std::exp(log_density(x));
}

Vec PathSlice::current(const Vec& x) const {
  const Sums acc = accumulate(x, false);
  // exp(lmax) underflows to zero deep in the tails; the normalized sum
  // stays bounded.
  return acc.u * std::exp(acc.lmax);
}

Vec PathSlice::velocity(const Vec& x) const {
  const Sums acc = accumulate(x, false);
  return acc.u / acc.s;
}

Vec PathSlice::score(const Vec& x) const {
  const Sums acc = accumulate(x, false);
  return acc.score / acc.s;
}

Mat PathSlice::velocity_jacobian(const Vec& x) const {
  const Sums acc = accumulate(x, true);
  const Vec u_bar = acc.u / acc.s;
  const Vec s_bar = acc.score / acc.s;
  // J = sum pi_k G_k + sum pi_k u_k (s_k - s_bar)^T
  return acc.gain / acc.s + acc.u_score / acc.s - u_bar * s_bar.transpose();
}

// ---------------------------------------------------------------------------

MixturePath::MixturePath(GaussianMixture base, GaussianMixture target,
                         Schedule schedule)
    : base_(std::move(base)),
      target_(std::move(target)),
      schedule_(std::move(schedule)) {
  if (base_.dim() != target_.dim())
    throw ContractError("mixture path: base and target dimensions differ");
}

PathSlice MixturePath::at(double t) const {
  if (!(t >= 0.0 && t <= 1.0))
    throw DomainError("mixture path time " + std::to_string(t) +
                      " outside [0, 1]");
  return PathSlice(*this, t);
}

EndpointVelocities MixturePath::endpoint_velocities() const {
  const Index d = dim();
  const Mat id = Mat::Identity(d, d);
  const Schedule& s = schedule_;
  return {
      AffineMap{s.a_dot(0.0) * id, s.b_dot(0.0) * target_.expectation()},
      AffineMap{s.b_dot(1.0) * id, s.a_dot(1.0) * base_.expectation()},
  };
}

Mat OracleVelocity::evaluate(const Vec& ts, const Mat& xs) const {
  if (ts.size() != xs.cols())
    throw ContractError("evaluate: time and point batch sizes differ");
  Mat out(dim(), xs.cols());
  // Reuse the slice across runs of equal times.
  std::optional<PathSlice> slice;
  for (Index j = 0; j < xs.cols(); ++j) {
    if (!slice || slice->time() != ts[j]) slice.emplace(path_.at(ts[j]));
    out.col(j) = slice->velocity(xs.col(j));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

struct Triple {
  double t;
  Vec x;
  Vec path_velocity;
};

template <class F>
void for_each_triple(const MixturePath& path, std::size_t n, std::uint64_t seed,
                     F&& f) {
  Rng rng(seed);
  const Schedule& s = path.schedule();
  for (std::size_t k = 0; k < n; ++k) {
    const Vec x0 = path.base().sample(1, rng).col(0);
    const Vec x1 = path.target().sample(1, rng).col(0);
    const double t = rng.uniform();
    f(Triple{t, s.a(t) * x0 + s.b(t) * x1, s.a_dot(t) * x0 + s.b_dot(t) * x1});
  }
}

}  // namespace

Estimate exact_H(const MixturePath& path, const VelocityField& candidate,
                 std::size_t mc_samples, std::uint64_t seed) {
  if (mc_samples == 0) throw DomainError("exact_H needs at least one sample");
  if (candidate.dim() != path.dim())
    throw ContractError("exact_H: candidate dimension mismatch");
  RunningStats stats;
  for_each_triple(path, mc_samples, seed, [&](const Triple& tr) {
    const Vec diff = candidate(tr.t, tr.x) - path.velocity(tr.t, tr.x);
    stats.add(diff.squaredNorm());
  });
  return stats.estimate();
}

KineticEnergies kinetic_energies(const MixturePath& path,
                                 std::size_t mc_samples, std::uint64_t seed) {
  if (mc_samples == 0) throw DomainError("kinetic_energies needs samples");
  RunningStats v, p;
  for_each_triple(path, mc_samples, seed, [&](const Triple& tr) {
    v.add(path.velocity(tr.t, tr.x).squaredNorm());
    p.add(tr.path_velocity.squaredNorm());
  });
  return {v.estimate(), p.estimate()};
}

}  // namespace siflow
