#include "siflow/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "siflow/csv.hpp"
#include "siflow/errors.hpp"

namespace siflow {

GaussianMixture eight_gaussians() {
  std::vector<double> w(8, 1.0 / 8.0);
  std::vector<Vec> means;
  std::vector<double> var(8, ToyConstants::kRingStd * ToyConstants::kRingStd);
  for (int k = 0; k < 8; ++k) {
    const double angle = k * std::numbers::pi / 4.0;
    Vec m(2);
    m << ToyConstants::kRingRadius * std::cos(angle),
        ToyConstants::kRingRadius * std::sin(angle);
    means.push_back(m);
  }
  return GaussianMixture::isotropic(std::move(w), std::move(means), std::move(var));
}

std::unique_ptr<Sampler> make_std_gaussian(Index dim) {
  return std::make_unique<MixtureSampler>(GaussianMixture::standard_normal(dim),
                                          SamplerKind::StdGaussian);
}

std::unique_ptr<Sampler> make_mixture_sampler(GaussianMixture gmm) {
  return std::make_unique<MixtureSampler>(std::move(gmm));
}

std::unique_ptr<Sampler> make_eight_gaussians() {
  return std::make_unique<MixtureSampler>(eight_gaussians(),
                                          SamplerKind::EightGaussians);
}

Mat CheckerboardSampler::sample(Index n, Rng& rng) {
  const double w = ToyConstants::kBoardHalfWidth;
  Mat out(2, n);
  for (Index j = 0; j < n;) {
    const double u = rng.uniform(-w, w);
    const double v = rng.uniform(-w, w);
    ++proposals_;
    const auto cell = static_cast<long>(std::floor(u)) + static_cast<long>(std::floor(v));
    if (cell % 2 == 0) {
      out(0, j) = u;
      out(1, j) = v;
      ++j;
    }
  }
  return out;
}

Mat TwoMoonsSampler::sample(Index n, Rng& rng) {
  const double s = ToyConstants::kMoonScale;
  const double noise = ToyConstants::kMoonNoise;
  Mat out(2, n);
  for (Index j = 0; j < n; ++j) {
    const double theta = rng.uniform(0.0, std::numbers::pi);
    const bool upper = rng.uniform() < 0.5;
    double x = upper ? std::cos(theta) : 1.0 - std::cos(theta);
    double y = upper ? std::sin(theta) : 0.5 - std::sin(theta);
    x += noise * rng.normal();
    y += noise * rng.normal();
    out(0, j) = s * x;
    out(1, j) = s * y;
  }
  return out;
}

// --- TabularDataset ------------------------------------------------------------

TabularDataset::TabularDataset(Mat rows_as_columns, std::vector<std::string> columns,
                               SplitFractions f, std::uint64_t seed,
                               bool standardize)
    : data_(std::move(rows_as_columns)),
      columns_(std::move(columns)),
      standardize_(standardize) {
  if (data_.cols() < 1) throw ConfigError("dataset has no rows");
  if (f.train <= 0.0 || f.validation < 0.0 || f.test < 0.0 ||
      std::abs(f.train + f.validation + f.test - 1.0) > 1e-9)
    throw ConfigError("split fractions must be non-negative, sum to 1, train > 0");
  const Index n = data_.cols();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng(derive_seed(seed, Stream::Split));
  std::shuffle(order.begin(), order.end(), rng.engine());
  const auto n_train = std::max<Index>(1, std::llround(f.train * static_cast<double>(n)));
  const auto n_val = std::min<Index>(n - n_train, std::llround(f.validation * static_cast<double>(n)));
  splits_[0].assign(order.begin(), order.begin() + n_train);
  splits_[1].assign(order.begin() + n_train, order.begin() + n_train + n_val);
  splits_[2].assign(order.begin() + n_train + n_val, order.end());

  const Index d = data_.rows();
  mean_ = Vec::Zero(d);
  std_ = Vec::Ones(d);
  if (!standardize_) return;
  const auto& train = splits_[0];
  const double m = static_cast<double>(train.size());
  for (Index i : train) mean_ += data_.col(i);
  mean_ /= m;
  Vec var = Vec::Zero(d);
  for (Index i : train) var += (data_.col(i) - mean_).cwiseAbs2();
  var /= m;
  for (Index c = 0; c < d; ++c) {
    if (!(var[c] > 0.0))
      throw ConfigError("column '" +
                        (c < static_cast<Index>(columns_.size()) ? columns_[c]
                                                                 : std::to_string(c)) +
                        "' is constant on the training split; cannot standardize");
    std_[c] = std::sqrt(var[c]);
  }
}

const std::vector<Index>& TabularDataset::indices(Split s) const {
  return splits_[static_cast<std::size_t>(s)];
}

Mat TabularDataset::split(Split s) const {
  const auto& idx = indices(s);
  Mat raw(dim(), static_cast<Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) raw.col(static_cast<Index>(k)) = data_.col(idx[k]);
  return to_model(raw);
}

Mat TabularDataset::to_model(const Mat& raw) const {
  if (raw.rows() != dim()) throw ContractError("dataset: dimension mismatch");
  return (raw.colwise() - mean_).array().colwise() / std_.array();
}

Mat TabularDataset::to_raw(const Mat& model) const {
  if (model.rows() != dim()) throw ContractError("dataset: dimension mismatch");
  return ((model.array().colwise() * std_.array()).matrix()).colwise() + mean_;
}

double TabularDataset::log_det_correction() const {
  return -std_.array().log().sum();
}

TabularDataset ingest_csv(const std::filesystem::path& path,
                          SplitFractions fractions, std::uint64_t seed,
                          bool standardize) {
  CsvTable table = read_csv(path);
  if (table.rows.rows() == 0) throw ConfigError(path.string() + ": no data rows");
  return TabularDataset(table.rows.transpose(), std::move(table.header), fractions,
                        seed, standardize);
}

// --- DatasetSampler ------------------------------------------------------------

DatasetSampler::DatasetSampler(std::shared_ptr<const TabularDataset> data,
                               Split split, DatasetMode mode)
    : data_(std::move(data)), points_(data_->split(split)), mode_(mode) {
  if (points_.cols() == 0) throw ConfigError("dataset split is empty");
  order_.resize(static_cast<std::size_t>(points_.cols()));
}

void DatasetSampler::reshuffle(Rng& rng) {
  std::iota(order_.begin(), order_.end(), Index{0});
  std::shuffle(order_.begin(), order_.end(), rng.engine());
  cursor_ = 0;
  shuffled_ = true;
}

DatasetSampler::Batch DatasetSampler::next_batch(Index n, Rng& rng) {
  if (!shuffled_) reshuffle(rng);
  const auto remaining = static_cast<Index>(order_.size() - cursor_);
  const Index take = std::min(n, remaining);
  Batch b{Mat(dim(), take), take < n};
  for (Index j = 0; j < take; ++j) b.points.col(j) = points_.col(order_[cursor_++]);
  if (b.end_of_epoch) {
    ++epoch_;
    shuffled_ = false;
  }
  return b;
}

Mat DatasetSampler::sample(Index n, Rng& rng) {
  Mat out(dim(), n);
  if (mode_ == DatasetMode::Resample) {
    for (Index j = 0; j < n; ++j)
      out.col(j) = points_.col(static_cast<Index>(rng.below(static_cast<std::uint64_t>(points_.cols()))));
    return out;
  }
  Index filled = 0;
  while (filled < n) {
    Batch b = next_batch(n - filled, rng);
    out.middleCols(filled, b.points.cols()) = b.points;
    filled += b.points.cols();
  }
  return out;
}

}  // namespace siflow
