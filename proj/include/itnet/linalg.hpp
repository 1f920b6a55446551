#pragma once

#include <Eigen/Dense>

namespace itnet {

// Moore-Penrose pseudo-inverse via SVD. Singular values below
// rel_cutoff * sigma_max are treated as zero.
inline Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& A, double rel_cutoff = 1e-10) {
  if (A.size() == 0) return Eigen::MatrixXd(A.cols(), A.rows());
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  const double cutoff = rel_cutoff * (s.size() ? s(0) : 0.0);
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > cutoff && s(i) > 0.0) inv(i) = 1.0 / s(i);
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

}  // namespace itnet
