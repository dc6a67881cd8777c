#pragma once

#include <Eigen/Core>

namespace siflow {

/// A point or vector in R^d.
using Vec = Eigen::VectorXd;
/// A batch of points, one column per point.
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

}  // namespace siflow
