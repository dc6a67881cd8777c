#include <variant>

#include "siflow/errors.hpp"
#include "siflow/mlp.hpp"

namespace siflow {
namespace {

template <class T>
class KernelT {
 public:
  using M = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  using V = Eigen::Matrix<T, Eigen::Dynamic, 1>;

  KernelT(const Mlp& mlp) : mlp_(&mlp), elu_(mlp.spec().activation == Activation::ELU) {
    for (const DenseLayer& l : mlp.state().layers) {
      w_.push_back(l.weight.cast<T>());
      b_.push_back(l.bias.cast<T>());
    }
    h_.resize(w_.size());
    d_.resize(w_.size());
  }

  double accumulate(const Vec& ts, const Mat& xs, const Mat& ys, double scale,
                    ParamPack& grad) {
    const std::size_t n_layers = w_.size();
    const Index len = xs.cols();
    if (ys.rows() != xs.rows() || ys.cols() != len)
      throw ContractError("regression targets do not match the batch");
    h_[0] = mlp_->features(ts, xs).template cast<T>();
    for (std::size_t k = 0; k + 1 < n_layers; ++k) {
      M& h = h_[k + 1];
      h.resize(w_[k].rows(), len);
      h.noalias() = w_[k] * h_[k];
      if (elu_) {
        h.colwise() += b_[k];
        h = (h.array() > T(0)).select(h.array(), h.array().exp() - T(1)).matrix();
      } else {
        h = (h.array().colwise() + b_[k].array()).max(T(0)).matrix();
      }
    }
    if (ones_.size() != len) ones_ = V::Ones(len);
    out_.resize(w_.back().rows(), len);
    out_.noalias() = w_.back() * h_.back();
    out_.colwise() += b_.back();

    const Mat out = out_.template cast<double>();
    const double value = out.squaredNorm() - 2.0 * out.cwiseProduct(ys).sum();
    // d_[k] is the adjoint of layer k's pre-activation (output layer last).
    d_.back() = ((2.0 * scale) * (out - ys)).template cast<T>();

    for (std::size_t k = n_layers; k-- > 0;) {
      const M& d = d_[k];
      gw_.resize(d.rows(), h_[k].rows());
      gw_.noalias() = d * h_[k].transpose();
      grad.layers[k].weight += gw_.template cast<double>();
      // d * 1 vectorizes; rowwise().sum() on column-major data does not.
      gb_.noalias() = d * ones_;
      grad.layers[k].bias += gb_.template cast<double>();
      if (k == 0) break;
      M& prev = d_[k - 1];
      prev.resize(w_[k].cols(), len);
      prev.noalias() = w_[k].transpose() * d;
      // Activation derivatives from the outputs: relu' = [h > 0],
      // elu' = 1 for h > 0 else h + 1.
      const auto& h = h_[k].array();
      if (elu_)
        prev = (h > T(0)).select(prev.array(), prev.array() * (h + T(1))).matrix();
      else
        prev = (h > T(0)).select(prev.array(), T(0)).matrix();
    }
    return value;
  }

 private:
  const Mlp* mlp_;
  bool elu_;
  std::vector<M> w_;
  std::vector<V> b_;
  std::vector<M> h_;  // h_[0] is the input
  std::vector<M> d_;
  M out_, gw_;
  V gb_, ones_;
};

}  // namespace

struct RegressionKernel::Impl {
  std::variant<KernelT<double>, KernelT<float>> kernel;
};

RegressionKernel::RegressionKernel(const Mlp& mlp, Precision precision)
    : impl_(precision == Precision::Float64
                ? std::make_unique<Impl>(Impl{KernelT<double>(mlp)})
                : std::make_unique<Impl>(Impl{KernelT<float>(mlp)})) {}

RegressionKernel::~RegressionKernel() = default;
RegressionKernel::RegressionKernel(RegressionKernel&&) noexcept = default;
RegressionKernel& RegressionKernel::operator=(RegressionKernel&&) noexcept = default;

double RegressionKernel::accumulate(const Vec& ts, const Mat& xs, const Mat& ys,
                                    double scale, ParamPack& grad) {
  return std::visit([&](auto& k) { return k.accumulate(ts, xs, ys, scale, grad); },
                    impl_->kernel);
}

}  // namespace siflow
