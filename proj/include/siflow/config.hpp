#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "siflow/data.hpp"
#include "siflow/flow_ode.hpp"
#include "siflow/gmm.hpp"
#include "siflow/interpolant.hpp"
#include "siflow/mlp.hpp"
#include "siflow/objective.hpp"

namespace siflow {

enum class DistributionKind {
  StdGaussian,
  Mixture,
  EightGaussians,
  Checkerboard,
  TwoMoons,
  Dataset
};

struct DatasetSpec {
  std::filesystem::path path;
  SplitFractions fractions;
  bool standardize = true;
  DatasetMode mode = DatasetMode::ShuffleEpoch;
  /// Split seed; defaults to the run seed.
  std::uint64_t split_seed = 0;
};

struct DistributionSpec {
  DistributionKind kind = DistributionKind::StdGaussian;
  Index dim = 1;
  std::optional<GaussianMixture> mixture;  // Mixture and EightGaussians
  DatasetSpec dataset;                     // Dataset only
};

struct SampleSettings {
  Index n = 1000;
  bool likelihood = false;
};

struct DiagnoseSettings {
  bool error_map = true;
  bool bound_check = true;
  Index bound_n = 512;
  std::size_t h_samples = 20000;
  Index grid_times = 19;    // uniform on [0.05, 0.95]
  Index grid_points = 81;   // per coordinate over the 3-sigma box (d <= 2)
};

struct LangevinSettings {
  bool enabled = false;
  double t = 0.5;
  double dtau = 1e-2;
  std::int64_t steps = 1000;
  Index chains = 256;
};

/// Fully resolved run configuration.
struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs";
  /// "trig", "linear", or "csv:<path>".
  std::string schedule_source = "trig";
  Schedule schedule = Schedule::trigonometric();
  DistributionSpec base;
  DistributionSpec target;
  std::optional<MlpSpec> model;
  TrainConfig train;
  std::int64_t checkpoint_interval = 0;
  Dopri5Settings solver;
  DivergenceOptions divergence;
  SampleSettings sample;
  DiagnoseSettings diagnose;
  LangevinSettings langevin;
  bool experimental_score_schedule = false;

  Index dim() const { return target.dim; }
};

/// Parses a config document (or a run manifest, whose "config" member is
/// used). Unknown keys and type errors throw ConfigError naming the key.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// The resolved config as a JSON document; parse_config() of the result
/// reproduces `cfg`.
std::string config_to_json(const RunConfig& cfg, int indent = 2);

/// Applies a command-line override such as "train.shards" = "4" to a config
/// document before it is parsed. The value is parsed as JSON when possible,
/// else taken as a string.
std::string override_key(const std::string& text, const std::string& dotted_key,
                         const std::string& value);

/// Stable 16-hex-digit hash of the resolved config.
std::string config_hash(const RunConfig& cfg);

/// Builds a sampler for a distribution spec. Dataset specs load the CSV
/// (train split); the loaded dataset is returned through `dataset` if given.
std::unique_ptr<Sampler> make_sampler(
    const DistributionSpec& spec, std::shared_ptr<const TabularDataset>* dataset = nullptr);

/// The analytic mixture of a spec, or nullptr when it has none.
const GaussianMixture* analytic_mixture(const DistributionSpec& spec);

}  // namespace siflow
