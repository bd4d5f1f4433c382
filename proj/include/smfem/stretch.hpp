#pragma once

#include <stdexcept>

#include <Eigen/Core>

#include "smfem/operators.hpp"

namespace smfem {

using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat6x12 = Eigen::Matrix<double, 6, 12>;

/// Symmetric 3x3 packed as (S11, S22, S33, S12, S13, S23).
Vec6 pack_symmetric(const Eigen::Matrix3d& S);
Eigen::Matrix3d unpack_symmetric(const Vec6& s);

/// Weights of the packed entries in the stretch constraint, diag(1,1,1,2,2,2).
Vec6 stretch_constraint_weights();
Vec6 rest_stretch();

struct PolarDecomposition {
  Eigen::Matrix3d R;
  Eigen::Matrix3d S;
};

/// F = R S with det R = +1. An inversion is carried by S through a negated
/// smallest singular value. Throws std::domain_error on non-finite input.
PolarDecomposition polar_decompose(const Eigen::Matrix3d& F);

/// vec6(sym(R^T F)).
Vec6 sbar(const Eigen::Matrix3d& F, const Eigen::Matrix3d& R);

/// Linear map from the 12 stacked vertex displacements of a tet to
/// vec6(sym(R^T dF)), with R held fixed.
Mat6x12 constraint_jacobian_block(const Eigen::Matrix3d& R, const ShapeGradients& g);

}  // namespace smfem
