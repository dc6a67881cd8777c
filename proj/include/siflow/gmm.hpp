#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Cholesky>

#include "siflow/interpolant.hpp"
#include "siflow/random.hpp"
#include "siflow/stats.hpp"
#include "siflow/types.hpp"
#include "siflow/velocity_field.hpp"

namespace siflow {

/// Sum_i p_i N(x | m_i, C_i) with SPD covariances. Cholesky factors are
/// computed once at construction; evaluation never fails.
class GaussianMixture {
 public:
  /// Throws DomainError if weights are not positive or do not sum to 1
  /// within 1e-12, ContractError on inconsistent dimensions, and DomainError
  /// if a covariance is not symmetric positive definite.
  GaussianMixture(std::vector<double> weights, std::vector<Vec> means,
                  std::vector<Mat> covariances);

  static GaussianMixture standard_normal(Index dim);
  static GaussianMixture gaussian(Vec mean, Mat covariance);
  static GaussianMixture isotropic(std::vector<double> weights,
                                   std::vector<Vec> means,
                                   std::vector<double> variances);

  Index dim() const { return dim_; }
  Index size() const { return static_cast<Index>(weights_.size()); }
  double weight(Index i) const { return weights_[i]; }
  const Vec& mean(Index i) const { return means_[i]; }
  const Mat& covariance(Index i) const { return covs_[i]; }

  double density(const Vec& x) const;
  double log_density(const Vec& x) const;
  /// Gradient of log_density.
  Vec score(const Vec& x) const;
  /// E[x].
  Vec expectation() const;
  /// True for a single N(0, I) component.
  bool is_standard_normal() const;

  /// n draws, one per column.
  Mat sample(Index n, Rng& rng) const;

 private:
  Index dim_ = 0;
  std::vector<double> weights_;
  std::vector<double> log_weights_;
  std::vector<Vec> means_;
  std::vector<Mat> covs_;
  std::vector<Eigen::LLT<Mat>> chol_;
  std::vector<double> log_norm_;  // -d/2 log(2 pi) - 1/2 log det C
};

/// log N(x | m, C) given the Cholesky factor of C.
double log_gaussian(const Vec& x, const Vec& mean, const Eigen::LLT<Mat>& chol);

/// x -> A x + c.
struct AffineMap {
  Mat linear;
  Vec offset;
  Vec operator()(const Vec& x) const { return linear * x + offset; }
};

struct EndpointVelocities {
  AffineMap start;  // v_0
  AffineMap end;    // v_1
};

class MixturePath;

/// The interpolant density between two mixtures, frozen at one time t.
///
/// Pair parameters m_t^{ij} = a m_i + b m_j, C_t^{ij} = a^2 C_i + b^2 C_j and
/// their time derivatives are materialized when N0 * N1 <= 10^4 and rebuilt
/// per evaluation otherwise. All sums run in log space with a running max.
class PathSlice {
 public:
  double time() const { return t_; }

  double density(const Vec& x) const;
  double log_density(const Vec& x) const;
  /// Probability current j_t(x); equals velocity * density.
  Vec current(const Vec& x) const;
  /// v_t(x) = j_t(x) / rho_t(x).
  Vec velocity(const Vec& x) const;
  /// grad log rho_t(x).
  Vec score(const Vec& x) const;
  /// d v_t / dx, analytic.
  Mat velocity_jacobian(const Vec& x) const;

 private:
  friend class MixturePath;
  struct Pair {
    double log_weight = 0.0;  // log p_i + log p_j - d/2 log 2pi - 1/2 logdet
    Vec mean, mean_dot;
    Eigen::LLT<Mat> chol;
    Mat gain;  // 1/2 C_dot C^{-1}
  };
  struct Sums;

  PathSlice(const MixturePath& path, double t);
  Pair make_pair(Index i, Index j) const;
  Sums accumulate(const Vec& x, bool need_jacobian) const;

  const MixturePath* path_;
  double t_;
  double a_, b_, a_dot_, b_dot_;
  std::vector<Pair> pairs_;
  bool materialized_ = false;
};

/// Exact interpolant density, current, velocity and score between Gaussian
/// mixture endpoints under a linear schedule.
class MixturePath {
 public:
  /// Pairs above this count are streamed rather than materialized.
  static constexpr Index kMaterializeLimit = 10000;

  MixturePath(GaussianMixture base, GaussianMixture target, Schedule schedule);

  const GaussianMixture& base() const { return base_; }
  const GaussianMixture& target() const { return target_; }
  const Schedule& schedule() const { return schedule_; }
  Index dim() const { return base_.dim(); }

  /// Throws DomainError for t outside [0, 1].
  PathSlice at(double t) const;

  double density(double t, const Vec& x) const { return at(t).density(x); }
  double log_density(double t, const Vec& x) const {
    return at(t).log_density(x);
  }
  Vec velocity(double t, const Vec& x) const { return at(t).velocity(x); }
  Vec current(double t, const Vec& x) const { return at(t).current(x); }
  Vec score(double t, const Vec& x) const { return at(t).score(x); }

  /// Closed-form v_0 and v_1 (affine in x).
  EndpointVelocities endpoint_velocities() const;

 private:
  friend class PathSlice;
  GaussianMixture base_;
  GaussianMixture target_;
  Schedule schedule_;
};

/// The oracle velocity of a MixturePath as a VelocityField.
class OracleVelocity final : public VelocityField {
 public:
  explicit OracleVelocity(MixturePath path) : path_(std::move(path)) {}
  const MixturePath& path() const { return path_; }

  Index dim() const override { return path_.dim(); }
  Vec operator()(double t, const Vec& x) const override {
    return path_.velocity(t, x);
  }
  Mat evaluate(const Vec& ts, const Mat& xs) const override;
  Mat jacobian(double t, const Vec& x) const override {
    return path_.at(t).velocity_jacobian(x);
  }

 private:
  MixturePath path_;
};

/// Monte Carlo estimate of H(v_hat) = E |v_hat_t(I_t) - v_t(I_t)|^2 with
/// t ~ U[0,1], x0 ~ base, x1 ~ target. Throws DomainError for zero samples.
Estimate exact_H(const MixturePath& path, const VelocityField& candidate,
                 std::size_t mc_samples, std::uint64_t seed);

/// Monte Carlo estimates of E|v_t(I_t)|^2 and E|d/dt I_t|^2 from the same
/// triples.
struct KineticEnergies {
  Estimate velocity;
  Estimate path;
};
KineticEnergies kinetic_energies(const MixturePath& path,
                                 std::size_t mc_samples, std::uint64_t seed);

}  // namespace siflow
