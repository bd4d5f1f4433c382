#pragma once

#include <memory>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "smfem/materials.hpp"
#include "smfem/mesh.hpp"

namespace smfem {

/// Gradients of the four linear shape functions of a tet, one row per vertex.
using ShapeGradients = Eigen::Matrix<double, 4, 3>;

/// Constant discrete operators of a mesh.
///
/// F for tet t is packed column-major into rows 9t..9t+8 of J, so
/// (J x)[9t + a + 3b] = F_t(a, b).
struct DiscreteOperators {
  Eigen::SparseMatrix<double> J;             // 9|T| x 3|V|
  Eigen::VectorXd volumes;                   // |T|, m^3
  Eigen::VectorXd tet_mass;                  // |T|, kg
  Eigen::VectorXd vertex_mass;               // |V|, diagonal of M_w
  std::vector<ShapeGradients> shape_gradients;

  /// Diagonal of the 3|V| x 3|V| lumped mass matrix M.
  Eigen::VectorXd mass_diagonal() const;
  Eigen::SparseMatrix<double> mass_matrix() const;
  double total_mass() const { return tet_mass.sum(); }
};

ShapeGradients shape_gradients(const Eigen::Vector3d& x0, const Eigen::Vector3d& x1,
                               const Eigen::Vector3d& x2, const Eigen::Vector3d& x3);

DiscreteOperators build_operators(const TetMesh& mesh, const MaterialField& materials);

/// F_t evaluated from the flattened positions `x` (3|V|).
Eigen::Matrix3d deformation_gradient(const TetMesh& mesh, const DiscreteOperators& ops,
                                     const Eigen::VectorXd& x, int t);

/// Mesh, materials and operators bundled; immutable and shared by the solvers.
struct Body {
  TetMesh mesh;
  MaterialField materials;
  DiscreteOperators ops;

  static std::shared_ptr<const Body> make(TetMesh mesh, MaterialField materials);
};

}  // namespace smfem
