#include "smfem/operators.hpp"

#include <Eigen/LU>

namespace smfem {

ShapeGradients shape_gradients(const Eigen::Vector3d& x0, const Eigen::Vector3d& x1,
                               const Eigen::Vector3d& x2, const Eigen::Vector3d& x3) {
  Eigen::Matrix3d Dm;
  Dm << x1 - x0, x2 - x0, x3 - x0;
  const Eigen::Matrix3d Dm_inv = Dm.inverse();
  ShapeGradients g;
  g.bottomRows<3>() = Dm_inv;
  g.row(0) = -Dm_inv.colwise().sum();
  return g;
}

Eigen::VectorXd DiscreteOperators::mass_diagonal() const {
  Eigen::VectorXd m(3 * vertex_mass.size());
  for (Eigen::Index i = 0; i < vertex_mass.size(); ++i) m.segment<3>(3 * i).setConstant(vertex_mass[i]);
  return m;
}

Eigen::SparseMatrix<double> DiscreteOperators::mass_matrix() const {
  const Eigen::VectorXd m = mass_diagonal();
  Eigen::SparseMatrix<double> M(m.size(), m.size());
  M.reserve(Eigen::VectorXi::Ones(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) M.insert(i, i) = m[i];
  M.makeCompressed();
  return M;
}

DiscreteOperators build_operators(const TetMesh& mesh, const MaterialField& materials) {
  const int nt = mesh.num_tets();
  const int nv = mesh.num_vertices();
  if (materials.size() != nt) throw MaterialError("material field size does not match tet count");
  DiscreteOperators ops;
  ops.volumes.resize(nt);
  ops.tet_mass.resize(nt);
  ops.vertex_mass = Eigen::VectorXd::Zero(nv);
  ops.shape_gradients.resize(nt);
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<size_t>(nt) * 36);
  for (int t = 0; t < nt; ++t) {
    const auto p = [&](int k) -> Eigen::Vector3d {
      return mesh.rest_positions.row(mesh.tets(t, k)).transpose();
    };
    ops.volumes[t] = signed_volume(p(0), p(1), p(2), p(3));
    ops.tet_mass[t] = materials.density[t] * ops.volumes[t];
    const ShapeGradients g = shape_gradients(p(0), p(1), p(2), p(3));
    ops.shape_gradients[t] = g;
    for (int v = 0; v < 4; ++v) {
      ops.vertex_mass[mesh.tets(t, v)] += 0.25 * ops.tet_mass[t];
      for (int b = 0; b < 3; ++b) {
        for (int a = 0; a < 3; ++a) {
          triplets.emplace_back(9 * t + a + 3 * b, 3 * mesh.tets(t, v) + a, g(v, b));
        }
      }
    }
  }
  ops.J.resize(9 * nt, 3 * nv);
  ops.J.setFromTriplets(triplets.begin(), triplets.end());
  return ops;
}

Eigen::Matrix3d deformation_gradient(const TetMesh& mesh, const DiscreteOperators& ops,
                                     const Eigen::VectorXd& x, int t) {
  Eigen::Matrix3d F = Eigen::Matrix3d::Zero();
  const ShapeGradients& g = ops.shape_gradients[t];
  for (int v = 0; v < 4; ++v) F += x.segment<3>(3 * mesh.tets(t, v)) * g.row(v);
  return F;
}

std::shared_ptr<const Body> Body::make(TetMesh mesh, MaterialField materials) {
  auto body = std::make_shared<Body>();
  body->ops = build_operators(mesh, materials);
  body->mesh = std::move(mesh);
  body->materials = std::move(materials);
  return body;
}

}  // namespace smfem
