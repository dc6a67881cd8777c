#pragma once

#include <functional>
#include <memory>

#include "siflow/types.hpp"

namespace siflow {

/// Evaluator contract (t, x) -> v_t(x) shared by learned models and
/// analytic oracles.
///
/// Implementations must be safe to call concurrently through a const
/// reference.
class VelocityField {
 public:
  virtual ~VelocityField() = default;

  virtual Index dim() const = 0;
  virtual Vec operator()(double t, const Vec& x) const = 0;

  /// Evaluates every column of `xs` at its own time `ts[j]`.
  virtual Mat evaluate(const Vec& ts, const Mat& xs) const;
  /// Evaluates every column of `xs` at the common time t.
  Mat evaluate(double t, const Mat& xs) const;

  /// d x d Jacobian with respect to x. The default is a central finite
  /// difference with step 1e-5.
  virtual Mat jacobian(double t, const Vec& x) const;
  /// Divergence with respect to x; defaults to the trace of jacobian().
  virtual double divergence(double t, const Vec& x) const;
  /// True when divergence() is a randomized estimate.
  virtual bool stochastic_divergence() const { return false; }
};

/// v == 0.
class ZeroField final : public VelocityField {
 public:
  explicit ZeroField(Index dim) : dim_(dim) {}
  Index dim() const override { return dim_; }
  Vec operator()(double, const Vec&) const override { return Vec::Zero(dim_); }
  Mat jacobian(double, const Vec&) const override {
    return Mat::Zero(dim_, dim_);
  }

 private:
  Index dim_;
};

/// v == c.
class ConstantField final : public VelocityField {
 public:
  explicit ConstantField(Vec c) : c_(std::move(c)) {}
  Index dim() const override { return c_.size(); }
  Vec operator()(double, const Vec&) const override { return c_; }
  Mat jacobian(double, const Vec&) const override {
    return Mat::Zero(c_.size(), c_.size());
  }

 private:
  Vec c_;
};

/// v_t(x) = A x + c, independent of t.
class AffineField final : public VelocityField {
 public:
  AffineField(Mat linear, Vec offset)
      : a_(std::move(linear)), c_(std::move(offset)) {}
  Index dim() const override { return c_.size(); }
  Vec operator()(double, const Vec& x) const override { return a_ * x + c_; }
  Mat jacobian(double, const Vec&) const override { return a_; }

 private:
  Mat a_;
  Vec c_;
};

/// Wraps an arbitrary callable; derivatives fall back to finite differences.
class FunctionField final : public VelocityField {
 public:
  using Fn = std::function<Vec(double, const Vec&)>;
  FunctionField(Index dim, Fn fn) : dim_(dim), fn_(std::move(fn)) {}
  Index dim() const override { return dim_; }
  Vec operator()(double t, const Vec& x) const override { return fn_(t, x); }

 private:
  Index dim_;
  Fn fn_;
};

/// base + c: a deliberately biased copy of another field.
class OffsetField final : public VelocityField {
 public:
  OffsetField(std::shared_ptr<const VelocityField> base, Vec offset)
      : base_(std::move(base)), c_(std::move(offset)) {}
  Index dim() const override { return base_->dim(); }
  Vec operator()(double t, const Vec& x) const override {
    return (*base_)(t, x) + c_;
  }
  Mat jacobian(double t, const Vec& x) const override {
    return base_->jacobian(t, x);
  }
  double divergence(double t, const Vec& x) const override {
    return base_->divergence(t, x);
  }

 private:
  std::shared_ptr<const VelocityField> base_;
  Vec c_;
};

}  // namespace siflow
