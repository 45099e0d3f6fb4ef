#pragma once

#include <Eigen/Core>

namespace batman::detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatView = Eigen::Map<const RowMat>;
using MatView = Eigen::Map<RowMat>;

inline ConstMatView view(const double* p, std::size_t rows, std::size_t cols) {
  return ConstMatView(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
inline MatView view(double* p, std::size_t rows, std::size_t cols) {
  return MatView(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

}  // namespace batman::detail
