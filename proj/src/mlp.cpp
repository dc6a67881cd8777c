#include "siflow/mlp.hpp"

#include <bit>
#include <cmath>
#include <numbers>

#include "siflow/errors.hpp"
#include "siflow/random.hpp"

namespace siflow {
namespace {

constexpr double kHalfPi = 0.5 * std::numbers::pi;

void check_finite_batch(const Vec& ts, const Mat& xs) {
  for (Index j = 0; j < xs.cols(); ++j)
    if (!std::isfinite(ts[j]) || !xs.col(j).allFinite())
      throw NumericError("non-finite network input at column " +
                             std::to_string(j),
                         j);
}

}  // namespace

// --- MlpSpec -----------------------------------------------------------------

Index MlpSpec::time_feature_count() const {
  return time_features == TimeFeatures::RawConcat ? 1 : 3;
}

void MlpSpec::validate() const {
  if (data_dim < 1) throw ContractError("model data_dim must be positive");
  if (hidden_widths.empty() && !allow_no_hidden)
    throw ContractError("model needs at least one hidden layer");
  for (Index w : hidden_widths)
    if (w < 1) throw ContractError("hidden layer widths must be positive");
}

// --- ParamPack ---------------------------------------------------------------

ParamPack ParamPack::zeros_like(const std::vector<DenseLayer>& shape) {
  ParamPack p;
  for (const auto& l : shape)
    p.layers.push_back({Mat::Zero(l.weight.rows(), l.weight.cols()),
                        Vec::Zero(l.bias.size())});
  return p;
}

ParamPack& ParamPack::operator+=(const ParamPack& other) {
  if (other.layers.size() != layers.size())
    throw ContractError("parameter packs differ in depth");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    layers[k].weight += other.layers[k].weight;
    layers[k].bias += other.layers[k].bias;
  }
  return *this;
}

ParamPack& ParamPack::operator*=(double s) {
  for (auto& l : layers) {
    l.weight *= s;
    l.bias *= s;
  }
  return *this;
}

bool ParamPack::all_finite() const {
  for (const auto& l : layers)
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  return true;
}

Index ParamPack::size() const {
  Index n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

Vec ParamPack::flatten() const {
  Vec flat(size());
  Index o = 0;
  for (const auto& l : layers) {
    for (Index r = 0; r < l.weight.rows(); ++r)
      for (Index c = 0; c < l.weight.cols(); ++c) flat[o++] = l.weight(r, c);
    flat.segment(o, l.bias.size()) = l.bias;
    o += l.bias.size();
  }
  return flat;
}

void ParamPack::unflatten(const Vec& flat) {
  if (flat.size() != size()) throw ContractError("unflatten: size mismatch");
  Index o = 0;
  for (auto& l : layers) {
    for (Index r = 0; r < l.weight.rows(); ++r)
      for (Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = flat[o++];
    l.bias = flat.segment(o, l.bias.size());
    o += l.bias.size();
  }
}

// --- Mlp ---------------------------------------------------------------------

Mlp::Mlp(MlpSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  Rng rng(derive_seed(seed, Stream::Init));
  std::vector<Index> widths{spec_.input_dim()};
  widths.insert(widths.end(), spec_.hidden_widths.begin(),
                spec_.hidden_widths.end());
  widths.push_back(spec_.data_dim);
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
    const Index in = widths[k];
    const Index out = widths[k + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    DenseLayer layer{Mat(out, in), Vec(out)};
    for (Index r = 0; r < out; ++r)
      for (Index c = 0; c < in; ++c) layer.weight(r, c) = rng.uniform(-bound, bound);
    for (Index r = 0; r < out; ++r) layer.bias[r] = rng.uniform(-bound, bound);
    state_.layers.push_back(std::move(layer));
  }
  if (spec_.zero_init_output) {
    state_.layers.back().weight.setZero();
    state_.layers.back().bias.setZero();
  }
  state_.adam_m = ParamPack::zeros_like(state_.layers);
  state_.adam_v = ParamPack::zeros_like(state_.layers);
  state_.seed = seed;
}

Mlp::Mlp(MlpSpec spec, MlpState state)
    : spec_(std::move(spec)), state_(std::move(state)) {
  spec_.validate();
  std::vector<Index> widths{spec_.input_dim()};
  widths.insert(widths.end(), spec_.hidden_widths.begin(),
                spec_.hidden_widths.end());
  widths.push_back(spec_.data_dim);
  if (state_.layers.size() + 1 != widths.size())
    throw ContractError("model state depth does not match its spec");
  auto check = [&](const std::vector<DenseLayer>& ls, const char* what) {
    if (ls.size() + 1 != widths.size())
      throw ContractError(std::string(what) + " depth does not match spec");
    for (std::size_t k = 0; k < ls.size(); ++k)
      if (ls[k].weight.rows() != widths[k + 1] ||
          ls[k].weight.cols() != widths[k] ||
          ls[k].bias.size() != widths[k + 1])
        throw ContractError(std::string(what) + " layer " + std::to_string(k) +
                            " has the wrong shape");
  };
  check(state_.layers, "weights");
  check(state_.adam_m.layers, "adam first moment");
  check(state_.adam_v.layers, "adam second moment");
}

Mat Mlp::features(const Vec& ts, const Mat& xs) const {
  const Index d = spec_.data_dim;
  if (xs.rows() != d)
    throw ContractError("network input has dimension " +
                        std::to_string(xs.rows()) + ", expected " +
                        std::to_string(d));
  if (ts.size() != xs.cols())
    throw ContractError("network time and point batch sizes differ");
  check_finite_batch(ts, xs);
  Mat in(spec_.input_dim(), xs.cols());
  in.topRows(d) = xs;
  in.row(d) = ts.transpose();
  if (spec_.time_features == TimeFeatures::SinCosConcat) {
    in.row(d + 1) = (kHalfPi * ts.array()).sin().matrix().transpose();
    in.row(d + 2) = (kHalfPi * ts.array()).cos().matrix().transpose();
  }
  return in;
}

Mat Mlp::activate(const Mat& z) const {
  if (spec_.activation == Activation::ReLU) return z.cwiseMax(0.0);
  return (z.array() > 0.0).select(z.array(), z.array().exp() - 1.0).matrix();
}

Mat Mlp::activate_grad(const Mat& z) const {
  // ReLU: subgradient 0 at exactly 0.
  if (spec_.activation == Activation::ReLU)
    return (z.array() > 0.0).cast<double>().matrix();
  return (z.array() > 0.0).select(Eigen::ArrayXXd::Ones(z.rows(), z.cols()),
                                  z.array().exp())
      .matrix();
}

Mat Mlp::activate_grad2(const Mat& z) const {
  if (spec_.activation == Activation::ReLU) return Mat::Zero(z.rows(), z.cols());
  return (z.array() > 0.0).select(Eigen::ArrayXXd::Zero(z.rows(), z.cols()),
                                  z.array().exp())
      .matrix();
}

Mat Mlp::forward(const Vec& ts, const Mat& xs, Cache* cache) const {
  Mat h = features(ts, xs);
  if (cache) {
    cache->pre.clear();
    cache->post.clear();
    cache->input = h;
  }
  const std::size_t n_layers = state_.layers.size();
  for (std::size_t k = 0; k + 1 < n_layers; ++k) {
    const auto& layer = state_.layers[k];
    Mat z(layer.weight.rows(), h.cols());
    z.noalias() = layer.weight * h;
    z.colwise() += layer.bias;
    h = activate(z);
    if (cache) {
      cache->pre.push_back(std::move(z));
      cache->post.push_back(h);
    }
  }
  const auto& out_layer = state_.layers.back();
  Mat out(out_layer.weight.rows(), h.cols());
  out.noalias() = out_layer.weight * h;
  out.colwise() += out_layer.bias;
  return out;
}

Mat Mlp::forward(double t, const Mat& xs) const {
  return forward(Vec::Constant(xs.cols(), t), xs);
}

Vec Mlp::operator()(double t, const Vec& x) const {
  return forward(Vec::Constant(1, t), x);
}

ParamPack Mlp::param_gradient(const Cache& cache, const Mat& adjoint) const {
  const std::size_t n_layers = state_.layers.size();
  if (adjoint.rows() != spec_.data_dim || adjoint.cols() != cache.input.cols() ||
      cache.pre.size() + 1 != n_layers)
    throw ContractError("param_gradient: adjoint does not match the cached batch");
  ParamPack grad;
  grad.layers.resize(n_layers);
  Mat dz = adjoint;
  for (std::size_t k = n_layers; k-- > 0;) {
    const Mat& h_in = k == 0 ? cache.input : cache.post[k - 1];
    grad.layers[k].weight.noalias() = dz * h_in.transpose();
    grad.layers[k].bias = dz.rowwise().sum();
    if (k > 0) {
      Mat dh(h_in.rows(), dz.cols());
      dh.noalias() = state_.layers[k].weight.transpose() * dz;
      if (spec_.activation == Activation::ReLU)
        dz = (cache.pre[k - 1].array() > 0.0).select(dh.array(), 0.0).matrix();
      else
        dz = dh.cwiseProduct(activate_grad(cache.pre[k - 1]));
    }
  }
  return grad;
}

Vec Mlp::jvp(double t, const Vec& x, const Vec& direction) const {
  if (direction.size() != spec_.data_dim)
    throw ContractError("jvp: direction dimension mismatch");
  Mat h = features(Vec::Constant(1, t), x);
  Vec tangent = Vec::Zero(spec_.input_dim());
  tangent.head(spec_.data_dim) = direction;
  const std::size_t n_layers = state_.layers.size();
  for (std::size_t k = 0; k + 1 < n_layers; ++k) {
    const auto& layer = state_.layers[k];
    Mat z = layer.weight * h;
    z.colwise() += layer.bias;
    tangent = activate_grad(z).col(0).cwiseProduct(layer.weight * tangent);
    h = activate(z);
  }
  return state_.layers.back().weight * tangent;
}

Mat Mlp::jacobian(double t, const Vec& x) const {
  const Index d = spec_.data_dim;
  Mat h = features(Vec::Constant(1, t), x);
  Mat tangent = Mat::Zero(spec_.input_dim(), d);
  tangent.topRows(d).setIdentity();
  const std::size_t n_layers = state_.layers.size();
  for (std::size_t k = 0; k + 1 < n_layers; ++k) {
    const auto& layer = state_.layers[k];
    Mat z = layer.weight * h;
    z.colwise() += layer.bias;
    tangent = activate_grad(z).col(0).asDiagonal() * (layer.weight * tangent);
    h = activate(z);
  }
  return state_.layers.back().weight * tangent;
}

double Mlp::divergence(double t, const Vec& x) const {
  return jacobian(t, x).trace();
}

Estimate Mlp::divergence_hutchinson(double t, const Vec& x, int probes,
                                    std::uint64_t seed) const {
  if (probes < 1) throw DomainError("Hutchinson estimator needs >= 1 probe");
  Rng rng(seed);
  RunningStats stats;
  Vec z(spec_.data_dim);
  for (int p = 0; p < probes; ++p) {
    for (Index i = 0; i < z.size(); ++i) z[i] = rng.sign();
    stats.add(z.dot(jvp(t, x, z)));
  }
  return stats.estimate();
}

double Mlp::jacobian_penalty(const Vec& ts, const Mat& xs, ParamPack* grad) const {
  const Mat inputs = features(ts, xs);
  const Index d = spec_.data_dim;
  const std::size_t n_layers = state_.layers.size();
  if (grad) *grad = ParamPack::zeros_like(state_.layers);
  double total = 0.0;

  std::vector<Mat> h(n_layers), tan(n_layers), z(n_layers - 1), u(n_layers - 1);
  for (Index j = 0; j < xs.cols(); ++j) {
    // Forward: primal activations h_k and tangents T_k = d h_k / d x.
    h[0] = inputs.col(j);
    tan[0] = Mat::Zero(spec_.input_dim(), d);
    tan[0].topRows(d).setIdentity();
    for (std::size_t k = 0; k + 1 < n_layers; ++k) {
      const auto& layer = state_.layers[k];
      z[k] = layer.weight * h[k] + layer.bias;
      u[k] = layer.weight * tan[k];
      h[k + 1] = activate(z[k]);
      tan[k + 1] = activate_grad(z[k]).col(0).asDiagonal() * u[k];
    }
    const auto& last = state_.layers.back();
    const Mat jac = last.weight * tan[n_layers - 1];
    total += jac.squaredNorm();
    if (!grad) continue;

    // Reverse through both the tangent and the primal recursions.
    const Mat d_jac = 2.0 * jac;
    grad->layers.back().weight.noalias() += d_jac * tan[n_layers - 1].transpose();
    Mat d_tan = last.weight.transpose() * d_jac;
    Vec d_h = Vec::Zero(h[n_layers - 1].rows());
    for (std::size_t k = n_layers - 1; k-- > 0;) {
      const auto& layer = state_.layers[k];
      const Vec s1 = activate_grad(z[k]).col(0);
      const Vec s2 = activate_grad2(z[k]).col(0);
      const Mat d_u = s1.asDiagonal() * d_tan;
      const Vec d_z = s2.cwiseProduct(u[k].cwiseProduct(d_tan).rowwise().sum()) +
                      s1.cwiseProduct(d_h);
      auto& g = grad->layers[k];
      g.weight.noalias() += d_u * tan[k].transpose();
      g.weight.noalias() += d_z * h[k].transpose();
      g.bias += d_z;
      d_tan = layer.weight.transpose() * d_u;
      d_h = layer.weight.transpose() * d_z;
    }
  }
  return total;
}

void Mlp::adam_step(const ParamPack& grad, const AdamSettings& s) {
  if (grad.layers.size() != state_.layers.size())
    throw ContractError("adam_step: gradient depth mismatch");
  if (!grad.all_finite())
    throw NumericError("adam_step: non-finite gradient at step " +
                           std::to_string(state_.step),
                       state_.step);
  const std::int64_t step = state_.step + 1;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(step));
  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = s.beta1 * m + (1.0 - s.beta1) * g;
    v = s.beta2 * v + (1.0 - s.beta2) * g.cwiseProduct(g);
    param.array() -= s.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + s.eps);
  };
  for (std::size_t k = 0; k < state_.layers.size(); ++k) {
    auto& p = state_.layers[k];
    auto& m = state_.adam_m.layers[k];
    auto& v = state_.adam_v.layers[k];
    const auto& g = grad.layers[k];
    update(p.weight, m.weight, v.weight, g.weight);
    update(p.bias, m.bias, v.bias, g.bias);
  }
  state_.step = step;
}

// --- MlpField ----------------------------------------------------------------

MlpField::MlpField(const Mlp& mlp, DivergenceOptions div)
    : mlp_(&mlp), div_(div) {
  if (div_.mode == DivergenceMode::Hutchinson && div_.probes < 1)
    throw DomainError("Hutchinson divergence needs >= 1 probe");
  if (div_.mode == DivergenceMode::Exact && mlp.spec().data_dim > div_.exact_limit)
    throw DomainError("exact divergence requested above the trace limit");
}

bool MlpField::stochastic_divergence() const {
  return div_.mode == DivergenceMode::Hutchinson ||
         (div_.mode == DivergenceMode::Auto && dim() > div_.exact_limit);
}

double MlpField::divergence(double t, const Vec& x) const {
  if (!stochastic_divergence()) return mlp_->divergence(t, x);
  if (div_.probes < 1) throw DomainError("Hutchinson divergence needs >= 1 probe");
  std::uint64_t h = mix64(div_.seed ^ std::bit_cast<std::uint64_t>(t));
  for (Index i = 0; i < x.size(); ++i)
    h = mix64(h ^ std::bit_cast<std::uint64_t>(x[i]));
  return mlp_->divergence_hutchinson(t, x, div_.probes, h).mean;
}

}  // namespace siflow
