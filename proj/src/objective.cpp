#include "siflow/objective.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <thread>

#include "siflow/errors.hpp"
#include "siflow/random.hpp"

namespace siflow {
namespace {

constexpr Index kEvalChunk = 8192;

double variance_of(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  RunningStats s;
  for (double x : xs) s.add(x);
  return s.variance();
}

/// Mean and standard error of per-triple values under the batch's sampling
/// design.
Estimate design_estimate(const std::vector<double>& f, const BatchPlan& plan) {
  RunningStats all;
  for (double x : f) all.add(x);
  Estimate e = all.estimate();
  if (plan.pairing == Pairing::Paired) return e;

  const auto K = static_cast<std::size_t>(plan.time_batch);
  const auto n = static_cast<std::size_t>(plan.target_batch);
  const auto N = static_cast<std::size_t>(plan.base_batch);
  std::vector<double> mk(K, 0.0), mj(n, 0.0), mi(N, 0.0);
  std::size_t m = 0;
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < N; ++i, ++m) {
        mk[k] += f[m];
        mj[j] += f[m];
        mi[i] += f[m];
      }
  for (auto& x : mk) x /= static_cast<double>(n * N);
  for (auto& x : mj) x /= static_cast<double>(K * N);
  for (auto& x : mi) x /= static_cast<double>(K * n);
  const double var = variance_of(mk) / static_cast<double>(K) +
                     variance_of(mj) / static_cast<double>(n) +
                     variance_of(mi) / static_cast<double>(N);
  e.std_error = std::sqrt(var);
  return e;
}

void check_dims(const Sampler& base, const Sampler& target) {
  if (base.dim() != target.dim())
    throw ContractError("base and target samplers differ in dimension");
}

}  // namespace

void BatchPlan::validate() const {
  if (base_batch < 1 || target_batch < 1 || time_batch < 1)
    throw DomainError("batch sizes must be >= 1");
  if (pairing == Pairing::Paired &&
      !(base_batch == target_batch && target_batch == time_batch))
    throw DomainError("paired batches need equal base, target and time sizes");
  if (!(time_law.alpha > 0.0 && time_law.beta > 0.0))
    throw DomainError("Beta time law needs alpha, beta > 0");
}

Index BatchPlan::triple_count() const {
  return pairing == Pairing::Paired ? base_batch
                                    : base_batch * target_batch * time_batch;
}

std::vector<double> sample_times(const BetaLaw& law, Index count,
                                 std::uint64_t seed) {
  if (!(law.alpha > 0.0 && law.beta > 0.0))
    throw DomainError("Beta time law needs alpha, beta > 0");
  Rng rng(seed);
  std::vector<double> ts(static_cast<std::size_t>(count));
  const bool uniform = law.alpha == 1.0 && law.beta == 1.0;
  for (auto& t : ts) t = uniform ? rng.uniform() : rng.beta(law.alpha, law.beta);
  return ts;
}

TripleBatch draw_triples(const Schedule& sched, Sampler& base, Sampler& target,
                         const BatchPlan& plan, std::uint64_t seed) {
  plan.validate();
  check_dims(base, target);
  const Mat x0 = base.sample(plan.base_batch, derive_seed(seed, Stream::Base));
  const Mat x1 = target.sample(plan.target_batch, derive_seed(seed, Stream::Target));
  const auto ts = sample_times(plan.time_law, plan.time_batch,
                               derive_seed(seed, Stream::Time));
  const Index d = base.dim();
  const Index m = plan.triple_count();
  TripleBatch batch{Vec(m), Mat(d, m), Mat(d, m), plan};
  struct Coeffs {
    double t, a, b, ad, bd;
  };
  auto coeffs = [&sched](double t) {
    return Coeffs{t, sched.a(t), sched.b(t), sched.a_dot(t), sched.b_dot(t)};
  };
  auto put = [&](Index col, const Coeffs& c, Index i, Index j) {
    batch.times[col] = c.t;
    batch.points.col(col) = c.a * x0.col(i) + c.b * x1.col(j);
    batch.path_velocities.col(col) = c.ad * x0.col(i) + c.bd * x1.col(j);
  };
  if (plan.pairing == Pairing::Paired) {
    for (Index k = 0; k < m; ++k) put(k, coeffs(ts[static_cast<std::size_t>(k)]), k, k);
  } else {
    Index col = 0;
    for (Index k = 0; k < plan.time_batch; ++k) {
      const Coeffs c = coeffs(ts[static_cast<std::size_t>(k)]);
      for (Index j = 0; j < plan.target_batch; ++j)
        for (Index i = 0; i < plan.base_batch; ++i) put(col++, c, i, j);
    }
  }
  return batch;
}

ObjectiveTerms objective_terms(const VelocityField& v, const TripleBatch& batch) {
  if (v.dim() != batch.points.rows())
    throw ContractError("velocity field dimension does not match the batch");
  const Index m = batch.size();
  if (m == 0) throw DomainError("empty batch");
  std::vector<double> g(static_cast<std::size_t>(m)), sq(g.size()), shifted(g.size());
  for (Index lo = 0; lo < m; lo += kEvalChunk) {
    const Index len = std::min(kEvalChunk, m - lo);
    const Mat out = v.evaluate(batch.times.segment(lo, len),
                               batch.points.middleCols(lo, len));
    for (Index c = 0; c < len; ++c) {
      const double norm_sq = out.col(c).squaredNorm();
      const double cross = batch.path_velocities.col(lo + c).dot(out.col(c));
      const auto idx = static_cast<std::size_t>(lo + c);
      sq[idx] = norm_sq;
      g[idx] = norm_sq - 2.0 * cross;
      shifted[idx] = 2.0 * norm_sq - 2.0 * cross;
    }
  }
  ObjectiveTerms terms{design_estimate(g, batch.plan), design_estimate(sq, batch.plan),
                       design_estimate(shifted, batch.plan)};
  // Exact identity on the same triples: shifted = G + mean |v|^2.
  terms.shifted.mean = terms.G.mean + terms.norm_sq.mean;
  return terms;
}

Estimate empirical_G(const VelocityField& v, const Schedule& sched,
                     Sampler& base, Sampler& target, const BatchPlan& plan,
                     std::uint64_t seed) {
  return objective_terms(v, draw_triples(sched, base, target, plan, seed)).G;
}

Estimate shifted_diagnostic(const VelocityField& v, const Schedule& sched,
                            Sampler& base, Sampler& target,
                            const BatchPlan& plan, std::uint64_t seed) {
  return objective_terms(v, draw_triples(sched, base, target, plan, seed)).shifted;
}

double gradient_penalty(const VelocityField& v, const Schedule& sched,
                        Sampler& base, Sampler& target, const BatchPlan& plan,
                        std::uint64_t seed) {
  const TripleBatch batch = draw_triples(sched, base, target, plan, seed);
  double total = 0.0;
  for (Index c = 0; c < batch.size(); ++c)
    total += v.jacobian(batch.times[c], batch.points.col(c)).squaredNorm();
  return total / static_cast<double>(batch.size());
}

// --- training ----------------------------------------------------------------

void TrainConfig::validate() const {
  plan.validate();
  diagnostic_plan.validate();
  if (!(lr > 0.0)) throw DomainError("learning rate must be positive");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0))
    throw DomainError("lr_decay must lie in (0, 1]");
  if (decay_interval < 1) throw DomainError("decay_interval must be >= 1");
  if (steps < 0) throw DomainError("steps must be >= 0");
  if (!(lambda_reg >= 0.0)) throw DomainError("lambda_reg must be >= 0");
  if (diagnostic_interval < 1) throw DomainError("diagnostic_interval must be >= 1");
  if (shards < 1) throw DomainError("shards must be >= 1");
  if (chunk < 1) throw DomainError("chunk must be >= 1");
}

double TrainConfig::lr_at(std::int64_t step) const {
  return lr * std::pow(lr_decay, static_cast<double>(step / decay_interval));
}

BatchLoss batch_loss(const Mlp& mlp, const TripleBatch& batch,
                     double lambda_reg, int shards, Index chunk,
                     Precision precision) {
  const Index m = batch.size();
  if (m == 0) throw DomainError("empty batch");
  const double inv_m = 1.0 / static_cast<double>(m);
  struct Partial {
    double g = 0.0;
    double penalty = 0.0;
    ParamPack grad;
  };
  const auto n_shards = static_cast<Index>(std::max(1, shards));
  std::vector<Partial> parts(static_cast<std::size_t>(n_shards));

  auto run_shard = [&](Index s) {
    Partial& p = parts[static_cast<std::size_t>(s)];
    p.grad = ParamPack::zeros_like(mlp.state().layers);
    const Index lo = m * s / n_shards;
    const Index hi = m * (s + 1) / n_shards;
    RegressionKernel kernel(mlp, precision);
    for (Index c0 = lo; c0 < hi; c0 += chunk) {
      const Index len = std::min(chunk, hi - c0);
      const Vec ts = batch.times.segment(c0, len);
      const Mat xs = batch.points.middleCols(c0, len);
      const Mat dI = batch.path_velocities.middleCols(c0, len);
      p.g += kernel.accumulate(ts, xs, dI, inv_m, p.grad);
      if (lambda_reg > 0.0) {
        ParamPack pg;
        p.penalty += mlp.jacobian_penalty(ts, xs, &pg);
        pg *= lambda_reg * inv_m;
        p.grad += pg;
      }
    }
  };

  if (n_shards == 1) {
    run_shard(0);
  } else {
    std::vector<std::jthread> workers;
    for (Index s = 0; s < n_shards; ++s) workers.emplace_back(run_shard, s);
  }

  BatchLoss result{0.0, 0.0, std::move(parts[0].grad)};
  result.G = parts[0].g;
  result.penalty = parts[0].penalty;
  for (std::size_t s = 1; s < parts.size(); ++s) {
    result.G += parts[s].g;
    result.penalty += parts[s].penalty;
    result.grad += parts[s].grad;
  }
  result.G *= inv_m;
  result.penalty *= inv_m;
  return result;
}

TrainResult train(Mlp& mlp, const Schedule& sched, Sampler& base,
                  Sampler& target, const TrainConfig& cfg,
                  const TrainCallbacks& callbacks) {
  cfg.validate();
  check_dims(base, target);
  if (mlp.spec().data_dim != base.dim())
    throw ContractError("model dimension does not match the data");

  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  const std::uint64_t diag_seed = derive_seed(cfg.seed, Stream::Diagnostic);
  // Held-out diagnostic triples use their own sampler copies so that
  // stateful (epoch) samplers are not advanced by diagnostics.
  auto diag_base = base.clone();
  auto diag_target = target.clone();
  const TripleBatch diag_batch =
      draw_triples(sched, *diag_base, *diag_target, cfg.diagnostic_plan, diag_seed);

  TrainResult result;
  result.history.reserve(static_cast<std::size_t>(cfg.steps));
  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    const std::uint64_t batch_seed = derive_seed(cfg.seed, Stream::TrainStep,
                                                 static_cast<std::uint64_t>(step));
    const TripleBatch batch = draw_triples(sched, base, target, cfg.plan, batch_seed);
    StepRecord rec;
    rec.step = step;
    rec.lr = cfg.lr_at(step);
    rec.G_tilde = std::numeric_limits<double>::quiet_NaN();
    if (step % cfg.diagnostic_interval == 0)
      rec.G_tilde = objective_terms(MlpField(mlp), diag_batch).shifted.mean;

    BatchLoss loss = batch_loss(mlp, batch, cfg.lambda_reg, cfg.shards, cfg.chunk, cfg.precision);
    rec.G = loss.G;
    rec.penalty = loss.penalty;
    if (!std::isfinite(loss.G) || !std::isfinite(loss.penalty))
      throw NumericError("non-finite loss at step " + std::to_string(step) +
                             " (batch seed " + std::to_string(batch_seed) + ")",
                         step);
    AdamSettings adam = cfg.adam;
    adam.lr = rec.lr;
    try {
      mlp.adam_step(loss.grad, adam);
    } catch (const NumericError&) {
      throw NumericError("non-finite gradient at step " + std::to_string(step) +
                             " (batch seed " + std::to_string(batch_seed) + ")",
                         step);
    }
    rec.wall_ms =
        std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    result.history.push_back(rec);
    if (callbacks.on_step) callbacks.on_step(rec);
    if (callbacks.on_checkpoint && callbacks.checkpoint_interval > 0 &&
        (step + 1) % callbacks.checkpoint_interval == 0)
      callbacks.on_checkpoint(mlp, step + 1);
  }
  result.final_diagnostic = objective_terms(MlpField(mlp), diag_batch).shifted;
  return result;
}

}  // namespace siflow
