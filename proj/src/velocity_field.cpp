#include "siflow/velocity_field.hpp"

#include "siflow/errors.hpp"

namespace siflow {

Mat VelocityField::evaluate(const Vec& ts, const Mat& xs) const {
  if (ts.size() != xs.cols())
    throw ContractError("evaluate: time and point batch sizes differ");
  Mat out(dim(), xs.cols());
  for (Index j = 0; j < xs.cols(); ++j) out.col(j) = (*this)(ts[j], xs.col(j));
  return out;
}

Mat VelocityField::evaluate(double t, const Mat& xs) const {
  return evaluate(Vec::Constant(xs.cols(), t), xs);
}

Mat VelocityField::jacobian(double t, const Vec& x) const {
  constexpr double h = 1e-5;
  const Index d = dim();
  Mat jac(d, d);
  Vec xp = x;
  for (Index k = 0; k < d; ++k) {
    xp[k] = x[k] + h;
    const Vec fp = (*this)(t, xp);
    xp[k] = x[k] - h;
    const Vec fm = (*this)(t, xp);
    xp[k] = x[k];
    jac.col(k) = (fp - fm) / (2.0 * h);
  }
  return jac;
}

double VelocityField::divergence(double t, const Vec& x) const {
  return jacobian(t, x).trace();
}

}  // namespace siflow
