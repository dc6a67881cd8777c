#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "siflow/gmm.hpp"
#include "siflow/random.hpp"
#include "siflow/types.hpp"

namespace siflow {

enum class SamplerKind {
  StdGaussian,
  Mixture,
  EightGaussians,
  Checkerboard,
  TwoMoons,
  CsvDataset
};

/// A source of i.i.d. (or epoch-shuffled) draws in R^d.
///
/// Draw sequences are a deterministic function of the Rng passed in. Dataset
/// samplers in epoch mode keep a cursor, so concurrent use needs separate
/// instances.
class Sampler {
 public:
  virtual ~Sampler() = default;
  virtual SamplerKind kind() const = 0;
  virtual Index dim() const = 0;
  /// n draws, one per column.
  virtual Mat sample(Index n, Rng& rng) = 0;
  /// The analytic law when it is a Gaussian mixture, else nullptr.
  virtual const GaussianMixture* mixture() const { return nullptr; }
  virtual std::unique_ptr<Sampler> clone() const = 0;

  Mat sample(Index n, std::uint64_t seed) {
    Rng rng(seed);
    return sample(n, rng);
  }
};

/// Draws from any Gaussian mixture (including N(0, I)).
class MixtureSampler final : public Sampler {
 public:
  explicit MixtureSampler(GaussianMixture gmm, SamplerKind kind = SamplerKind::Mixture)
      : gmm_(std::move(gmm)), kind_(kind) {}
  SamplerKind kind() const override { return kind_; }
  Index dim() const override { return gmm_.dim(); }
  using Sampler::sample;
  Mat sample(Index n, Rng& rng) override { return gmm_.sample(n, rng); }
  const GaussianMixture* mixture() const override { return &gmm_; }
  std::unique_ptr<Sampler> clone() const override {
    return std::make_unique<MixtureSampler>(*this);
  }

 private:
  GaussianMixture gmm_;
  SamplerKind kind_;
};

/// Toy-dataset conventions. The eight-Gaussian ring is an exact mixture so
/// the analytic oracle applies to it.
struct ToyConstants {
  static constexpr double kRingRadius = 2.0;
  static constexpr double kRingStd = 0.2;
  static constexpr double kBoardHalfWidth = 4.0;
  static constexpr double kMoonNoise = 0.05;
  static constexpr double kMoonScale = 2.0;
};

/// Equal-weight ring of 8 isotropic Gaussians, means at radius 2 and angles
/// k * 45 degrees, standard deviation 0.2.
GaussianMixture eight_gaussians();

std::unique_ptr<Sampler> make_std_gaussian(Index dim);
std::unique_ptr<Sampler> make_mixture_sampler(GaussianMixture gmm);
std::unique_ptr<Sampler> make_eight_gaussians();

/// Uniform on the even cells of the [-4, 4]^2 board: (u, v) is accepted iff
/// floor(u) + floor(v) is even.
class CheckerboardSampler final : public Sampler {
 public:
  SamplerKind kind() const override { return SamplerKind::Checkerboard; }
  Index dim() const override { return 2; }
  using Sampler::sample;
  Mat sample(Index n, Rng& rng) override;
  std::unique_ptr<Sampler> clone() const override {
    return std::make_unique<CheckerboardSampler>(*this);
  }
  /// Proposals drawn so far (for acceptance-rate checks).
  std::uint64_t proposals() const { return proposals_; }

 private:
  std::uint64_t proposals_ = 0;
};

/// Two interleaved half circles, isotropic noise 0.05, scaled by 2. Stands in
/// for an unspecified "swirl" toy set.
class TwoMoonsSampler final : public Sampler {
 public:
  SamplerKind kind() const override { return SamplerKind::TwoMoons; }
  Index dim() const override { return 2; }
  using Sampler::sample;
  Mat sample(Index n, Rng& rng) override;
  std::unique_ptr<Sampler> clone() const override {
    return std::make_unique<TwoMoonsSampler>(*this);
  }
};

struct SplitFractions {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

enum class Split { Train, Validation, Test };

/// A numeric table with a seeded train/validation/test split and optional
/// standardization by training-split statistics.
class TabularDataset {
 public:
  TabularDataset(Mat rows_as_columns, std::vector<std::string> columns,
                 SplitFractions fractions, std::uint64_t seed, bool standardize);

  Index dim() const { return data_.rows(); }
  Index size() const { return data_.cols(); }
  const std::vector<std::string>& columns() const { return columns_; }
  const std::vector<Index>& indices(Split s) const;
  bool standardized() const { return standardize_; }
  /// Training-split column means and standard deviations (zeros and ones
  /// when not standardizing).
  const Vec& shift() const { return mean_; }
  const Vec& scale() const { return std_; }

  /// Points of a split in model (possibly standardized) coordinates.
  Mat split(Split s) const;
  Mat to_model(const Mat& raw) const;
  Mat to_raw(const Mat& model) const;
  /// log rho_raw(x) = log rho_model(z) + log_det_correction().
  double log_det_correction() const;

 private:
  Mat data_;  // raw values, one column per row of the file
  std::vector<std::string> columns_;
  std::array<std::vector<Index>, 3> splits_;
  bool standardize_;
  Vec mean_;
  Vec std_;
};

/// Reads a rectangular numeric CSV with a header. Throws ConfigError for
/// malformed cells (row/column named) and for constant columns when
/// standardizing.
TabularDataset ingest_csv(const std::filesystem::path& path,
                          SplitFractions fractions, std::uint64_t seed,
                          bool standardize);

enum class DatasetMode { ShuffleEpoch, Resample };

/// Draws rows of one dataset split.
///
/// Resample mode draws with replacement. ShuffleEpoch walks a seeded
/// permutation; `next_batch` reports when an epoch runs out, while
/// `sample` silently reshuffles so training loops never stall.
class DatasetSampler final : public Sampler {
 public:
  DatasetSampler(std::shared_ptr<const TabularDataset> data, Split split,
                 DatasetMode mode);

  SamplerKind kind() const override { return SamplerKind::CsvDataset; }
  Index dim() const override { return data_->dim(); }
  using Sampler::sample;
  Mat sample(Index n, Rng& rng) override;
  std::unique_ptr<Sampler> clone() const override {
    return std::make_unique<DatasetSampler>(*this);
  }

  struct Batch {
    Mat points;
    bool end_of_epoch = false;
  };
  /// Up to n rows of the current epoch; fewer (possibly zero) with
  /// end_of_epoch set once the permutation is exhausted.
  Batch next_batch(Index n, Rng& rng);
  std::uint64_t epoch() const { return epoch_; }

 private:
  void reshuffle(Rng& rng);

  std::shared_ptr<const TabularDataset> data_;
  Mat points_;
  DatasetMode mode_;
  std::vector<Index> order_;
  std::size_t cursor_ = 0;
  std::uint64_t epoch_ = 0;
  bool shuffled_ = false;
};

}  // namespace siflow
