#pragma once

#include <Eigen/Dense>

namespace dmd2 {

// Row-major so a Matrix row is one sample and maps directly onto Tensor storage.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using SquareMatrix = Eigen::MatrixXd;

}  // namespace dmd2
