#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include "siflow/stats.hpp"
#include "siflow/types.hpp"
#include "siflow/velocity_field.hpp"

namespace siflow {

enum class Activation { ReLU, ELU };
/// How time enters the network: raw t, or t together with
/// (sin(pi t/2), cos(pi t/2)).
enum class TimeFeatures { RawConcat, SinCosConcat };

struct MlpSpec {
  Index data_dim = 1;
  std::vector<Index> hidden_widths;
  Activation activation = Activation::ReLU;
  TimeFeatures time_features = TimeFeatures::RawConcat;
  /// Start from v_hat == 0 by zeroing the output layer.
  bool zero_init_output = true;
  /// Test mode: permits a network with no hidden layer (a single affine map).
  bool allow_no_hidden = false;

  Index time_feature_count() const;
  Index input_dim() const { return data_dim + time_feature_count(); }
  /// Throws ContractError when the shape is unusable.
  void validate() const;

  bool operator==(const MlpSpec&) const = default;
};

struct DenseLayer {
  Mat weight;  // out x in
  Vec bias;    // out
};

/// A set of tensors shaped like the network parameters (gradients, Adam
/// moments).
struct ParamPack {
  std::vector<DenseLayer> layers;

  static ParamPack zeros_like(const std::vector<DenseLayer>& shape);
  ParamPack& operator+=(const ParamPack& other);
  ParamPack& operator*=(double s);
  bool all_finite() const;
  Index size() const;
  /// Row-major concatenation of every weight, then bias, layer by layer.
  Vec flatten() const;
  void unflatten(const Vec& flat);
};

struct MlpState {
  std::vector<DenseLayer> layers;
  ParamPack adam_m;
  ParamPack adam_v;
  std::int64_t step = 0;
  std::uint64_t seed = 0;
};

struct AdamSettings {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Feed-forward velocity network v_hat_t(x) = MLP([x; features(t)]) with
/// hand-written reverse-mode parameter gradients and forward-mode input
/// Jacobians.
class Mlp {
 public:
  /// Activations kept by forward() for param_gradient().
  struct Cache {
    Mat input;
    std::vector<Mat> pre;   // hidden pre-activations
    std::vector<Mat> post;  // hidden activations
  };

  /// Fresh network: uniform(+-1/sqrt(fan_in)) weights and biases drawn from
  /// `seed`, output layer zeroed when zero_init_output is set.
  Mlp(MlpSpec spec, std::uint64_t seed);
  /// Restores a network; throws ContractError if shapes disagree with spec.
  Mlp(MlpSpec spec, MlpState state);

  const MlpSpec& spec() const { return spec_; }
  const MlpState& state() const { return state_; }
  MlpState& mutable_state() { return state_; }

  /// One output column per input column, each at its own time. Throws
  /// NumericError carrying the column index of a non-finite input.
  Mat forward(const Vec& ts, const Mat& xs, Cache* cache = nullptr) const;
  Mat forward(double t, const Mat& xs) const;
  Vec operator()(double t, const Vec& x) const;

  /// Gradient of sum_j <adjoint_j, output_j> with respect to every
  /// parameter, for the batch recorded in `cache`.
  ParamPack param_gradient(const Cache& cache, const Mat& adjoint) const;

  /// Exact d x d input Jacobian (d forward-mode tangent passes).
  Mat jacobian(double t, const Vec& x) const;
  /// Jacobian-vector product d v / d x * direction.
  Vec jvp(double t, const Vec& x, const Vec& direction) const;
  double divergence(double t, const Vec& x) const;
  /// Hutchinson estimate z^T J z averaged over Rademacher probes z.
  Estimate divergence_hutchinson(double t, const Vec& x, int probes,
                                 std::uint64_t seed) const;

  /// Sum over the batch of ||d v / d x||_F^2. When `grad` is non-null it
  /// receives the parameter gradient of that sum.
  double jacobian_penalty(const Vec& ts, const Mat& xs, ParamPack* grad) const;

  /// Bias-corrected Adam update. A non-finite gradient is rejected with
  /// NumericError and leaves the state untouched.
  void adam_step(const ParamPack& grad, const AdamSettings& settings);

  /// Network input rows: x, then t (and sin/cos time features). Validates
  /// shapes and finiteness like forward().
  Mat features(const Vec& ts, const Mat& xs) const;

 private:
  Mat activate(const Mat& z) const;
  Mat activate_grad(const Mat& z) const;
  Mat activate_grad2(const Mat& z) const;

  MlpSpec spec_;
  MlpState state_;
};

enum class Precision { Float64, Float32 };

/// Fused forward/backward pass of the regression loss
/// scale * sum_m |v(t_m, x_m) - y_m|^2 used by training.
///
/// Weights are copied (and cast, for Float32) at construction; buffers are
/// reused across accumulate() calls. Not thread safe: use one per thread.
class RegressionKernel {
 public:
  RegressionKernel(const Mlp& mlp, Precision precision);
  ~RegressionKernel();
  RegressionKernel(RegressionKernel&&) noexcept;
  RegressionKernel& operator=(RegressionKernel&&) noexcept;

  /// Adds the parameter gradient of scale * sum_m |v_m - y_m|^2 to `grad`
  /// and returns sum_m (|v_m|^2 - 2 y_m . v_m) for the batch.
  double accumulate(const Vec& ts, const Mat& xs, const Mat& ys, double scale,
                    ParamPack& grad);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

enum class DivergenceMode { Auto, Exact, Hutchinson };

struct DivergenceOptions {
  DivergenceMode mode = DivergenceMode::Auto;
  /// Largest dimension for which exact traces are taken.
  Index exact_limit = 64;
  int probes = 1;
  std::uint64_t seed = 0;
};

/// Non-owning VelocityField view of an Mlp. The network must outlive it.
class MlpField final : public VelocityField {
 public:
  explicit MlpField(const Mlp& mlp, DivergenceOptions div = {});

  Index dim() const override { return mlp_->spec().data_dim; }
  Vec operator()(double t, const Vec& x) const override { return (*mlp_)(t, x); }
  Mat evaluate(const Vec& ts, const Mat& xs) const override {
    return mlp_->forward(ts, xs);
  }
  Mat jacobian(double t, const Vec& x) const override {
    return mlp_->jacobian(t, x);
  }
  /// Exact trace or a Hutchinson estimate whose probes are seeded from the
  /// bits of (t, x), so repeated calls agree.
  double divergence(double t, const Vec& x) const override;
  bool stochastic_divergence() const override;

 private:
  const Mlp* mlp_;
  DivergenceOptions div_;
};

/// Versioned structured-text checkpoint holding the MlpSpec, every tensor in
/// row-major order, Adam moments, step and seed. Round trips are bit-exact.
void save_checkpoint(const Mlp& mlp, const std::filesystem::path& path);
Mlp load_checkpoint(const std::filesystem::path& path);

}  // namespace siflow
