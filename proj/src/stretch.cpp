#include "smfem/stretch.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>

namespace smfem {

namespace {
constexpr int kPackRow[6] = {0, 1, 2, 0, 0, 1};
constexpr int kPackCol[6] = {0, 1, 2, 1, 2, 2};
}  // namespace

Vec6 pack_symmetric(const Eigen::Matrix3d& S) {
  Vec6 s;
  for (int p = 0; p < 6; ++p) s[p] = S(kPackRow[p], kPackCol[p]);
  return s;
}

Eigen::Matrix3d unpack_symmetric(const Vec6& s) {
  Eigen::Matrix3d S;
  for (int p = 0; p < 6; ++p) {
    S(kPackRow[p], kPackCol[p]) = s[p];
    S(kPackCol[p], kPackRow[p]) = s[p];
  }
  return S;
}

Vec6 stretch_constraint_weights() { return (Vec6() << 1, 1, 1, 2, 2, 2).finished(); }

Vec6 rest_stretch() { return (Vec6() << 1, 1, 1, 0, 0, 0).finished(); }

PolarDecomposition polar_decompose(const Eigen::Matrix3d& F) {
  if (!F.allFinite()) throw std::domain_error("polar_decompose: non-finite deformation gradient");
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(F, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d U = svd.matrixU();
  Eigen::Matrix3d V = svd.matrixV();
  Eigen::Vector3d sigma = svd.singularValues();
  if (U.determinant() < 0) {
    U.col(2) *= -1.0;
    sigma[2] *= -1.0;
  }
  if (V.determinant() < 0) {
    V.col(2) *= -1.0;
    sigma[2] *= -1.0;
  }
  PolarDecomposition pd;
  pd.R = U * V.transpose();
  pd.S = V * sigma.asDiagonal() * V.transpose();
  pd.S = 0.5 * (pd.S + pd.S.transpose()).eval();
  return pd;
}

Vec6 sbar(const Eigen::Matrix3d& F, const Eigen::Matrix3d& R) {
  const Eigen::Matrix3d RtF = R.transpose() * F;
  return pack_symmetric(0.5 * (RtF + RtF.transpose()));
}

Mat6x12 constraint_jacobian_block(const Eigen::Matrix3d& R, const ShapeGradients& g) {
  Mat6x12 L;
  for (int p = 0; p < 6; ++p) {
    const int i = kPackRow[p];
    const int j = kPackCol[p];
    for (int v = 0; v < 4; ++v) {
      for (int a = 0; a < 3; ++a) {
        L(p, 3 * v + a) = 0.5 * (R(a, i) * g(v, j) + R(a, j) * g(v, i));
      }
    }
  }
  return L;
}

}  // namespace smfem
