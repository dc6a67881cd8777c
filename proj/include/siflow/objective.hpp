#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "siflow/data.hpp"
#include "siflow/interpolant.hpp"
#include "siflow/mlp.hpp"
#include "siflow/stats.hpp"
#include "siflow/velocity_field.hpp"

namespace siflow {

enum class Pairing {
  /// All K * n * N combinations of (time, target, base) draws.
  OuterProduct,
  /// Zip three equal-length streams into N triples.
  Paired
};

struct BetaLaw {
  double alpha = 1.0;
  double beta = 1.0;
};

struct BatchPlan {
  Index base_batch = 1;    // N
  Index target_batch = 1;  // n
  Index time_batch = 1;    // K
  Pairing pairing = Pairing::OuterProduct;
  BetaLaw time_law;

  /// Throws DomainError for empty batches or mismatched Paired sizes.
  void validate() const;
  Index triple_count() const;
};

/// Materialized (t, I_t, d/dt I_t) triples. Column m of `points` is the
/// interpolated point of triple m. OuterProduct order is k (time) outermost,
/// then j (target), then i (base).
struct TripleBatch {
  Vec times;
  Mat points;
  Mat path_velocities;
  BatchPlan plan;

  Index size() const { return times.size(); }
};

/// K i.i.d. Beta(alpha, beta) times, deterministic per seed.
std::vector<double> sample_times(const BetaLaw& law, Index count,
                                 std::uint64_t seed);

/// Draws base, target and time samples from seed-derived streams and forms
/// the triples of `plan`.
TripleBatch draw_triples(const Schedule& sched, Sampler& base, Sampler& target,
                         const BatchPlan& plan, std::uint64_t seed);

/// Per-triple quantities of the objective for a fixed batch.
struct ObjectiveTerms {
  Estimate G;         // |v|^2 - 2 dI.v
  Estimate norm_sq;   // |v|^2
  Estimate shifted;   // G + |v|^2, standard error of the combined integrand
};

/// Evaluates the objective integrands on an existing batch. Standard errors
/// for OuterProduct batches use the first-order crossed-design variance
/// (time, target and base marginal means) since the K n N terms share draws.
ObjectiveTerms objective_terms(const VelocityField& v, const TripleBatch& batch);

/// Empirical estimate of G(v) = E[|v_t(I_t)|^2 - 2 d/dt I_t . v_t(I_t)].
Estimate empirical_G(const VelocityField& v, const Schedule& sched,
                     Sampler& base, Sampler& target, const BatchPlan& plan,
                     std::uint64_t seed);

/// G + mean |v|^2 over the same triples; zero at the exact velocity.
Estimate shifted_diagnostic(const VelocityField& v, const Schedule& sched,
                            Sampler& base, Sampler& target,
                            const BatchPlan& plan, std::uint64_t seed);

/// Mean squared Frobenius norm of d v / d x at interpolated points.
double gradient_penalty(const VelocityField& v, const Schedule& sched,
                        Sampler& base, Sampler& target, const BatchPlan& plan,
                        std::uint64_t seed);

struct TrainConfig {
  BatchPlan plan;
  double lr = 1e-3;
  /// Multiplier applied to lr every `decay_interval` steps.
  double lr_decay = 1.0;
  std::int64_t decay_interval = 4000;
  std::int64_t steps = 1000;
  double lambda_reg = 0.0;
  std::uint64_t seed = 0;
  AdamSettings adam;
  /// G-tilde is evaluated on a fixed held-out batch every this many steps.
  std::int64_t diagnostic_interval = 50;
  BatchPlan diagnostic_plan;
  /// Contiguous shards of each batch, processed in parallel and reduced in
  /// shard order. Results are bit-identical for a fixed shard count.
  int shards = 1;
  /// Columns per network evaluation within a shard.
  Index chunk = 1024;
  /// Arithmetic of the training forward/backward pass. Parameters, Adam
  /// state and reported losses stay in double precision.
  Precision precision = Precision::Float64;

  /// Throws DomainError on inconsistent settings.
  void validate() const;
  double lr_at(std::int64_t step) const;
};

struct StepRecord {
  std::int64_t step = 0;
  double G = 0.0;
  /// NaN on steps without a diagnostic evaluation.
  double G_tilde = 0.0;
  double penalty = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

struct TrainCallbacks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const Mlp&, std::int64_t step)> on_checkpoint;
  std::int64_t checkpoint_interval = 0;
};

struct TrainResult {
  std::vector<StepRecord> history;
  /// G-tilde on the diagnostic batch after the final update.
  Estimate final_diagnostic;
};

/// Value and parameter gradient of the empirical objective (plus
/// lambda * penalty) on one batch.
struct BatchLoss {
  double G = 0.0;
  double penalty = 0.0;
  ParamPack grad;
};
BatchLoss batch_loss(const Mlp& mlp, const TripleBatch& batch,
                     double lambda_reg, int shards = 1, Index chunk = 1024,
                     Precision precision = Precision::Float64);

/// Runs cfg.steps Adam steps on the empirical objective. Deterministic per
/// cfg.seed. Throws NumericError naming the step and batch seed when the
/// loss becomes non-finite.
TrainResult train(Mlp& mlp, const Schedule& sched, Sampler& base,
                  Sampler& target, const TrainConfig& cfg,
                  const TrainCallbacks& callbacks = {});

}  // namespace siflow
