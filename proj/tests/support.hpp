#pragma once

// Shared fixtures and independent reference computations for the tests.

#include <cmath>
#include <map>
#include <memory>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "smfem/energy.hpp"
#include "smfem/mesh.hpp"
#include "smfem/operators.hpp"
#include "smfem/subspace.hpp"

namespace smfem::test {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo = -1.0, double hi = 1.0) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Eigen::VectorXd random_vector(Rng& rng, Eigen::Index n, double scale = 1.0) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = scale * uniform(rng);
  return v;
}

inline Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = scale * uniform(rng);
  return m;
}

/// Uniformly distributed rotation from a normalized Gaussian quaternion.
inline Eigen::Matrix3d random_rotation(Rng& rng) {
  std::normal_distribution<double> n;
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q.toRotationMatrix();
}

/// Symmetric positive stretch near identity, packed.
inline Vec6 random_stretch(Rng& rng, double amplitude = 0.3) {
  Eigen::Matrix3d A = random_matrix(rng, 3, 3, amplitude);
  return pack_symmetric(Eigen::Matrix3d::Identity() + 0.5 * (A + A.transpose()));
}

/// Voxel block with jittered interior geometry; every tet gets region
/// (t % regions).
inline TetMesh jittered_block(Rng& rng, const Eigen::Vector3i& cells, double jitter, int regions = 1) {
  TetMesh base = make_voxel_mesh(cells, cells.cast<double>() * 0.1, Eigen::Vector3d::Zero());
  Eigen::MatrixX3d V = base.rest_positions;
  for (Eigen::Index i = 0; i < V.rows(); ++i)
    for (int d = 0; d < 3; ++d) V(i, d) += jitter * 0.1 * uniform(rng);
  std::vector<int> region(base.num_tets());
  for (int t = 0; t < base.num_tets(); ++t) region[t] = t % regions;
  return make_tet_mesh(V, base.tets, region);
}

inline std::shared_ptr<const Body> make_body(TetMesh mesh, const std::map<int, Material>& table) {
  MaterialField field = MaterialField::from_regions(mesh, table);
  return Body::make(std::move(mesh), std::move(field));
}

/// F = Ds Dm^-1 from scratch.
inline Eigen::Matrix3d reference_deformation_gradient(const TetMesh& mesh, const Eigen::VectorXd& x, int t) {
  Eigen::Matrix3d Ds, Dm;
  for (int k = 0; k < 3; ++k) {
    const int a = mesh.tets(t, k + 1);
    const int o = mesh.tets(t, 0);
    Ds.col(k) = x.segment<3>(3 * a) - x.segment<3>(3 * o);
    Dm.col(k) = (mesh.rest_positions.row(a) - mesh.rest_positions.row(o)).transpose();
  }
  return Ds * Dm.inverse();
}

/// Absolute tet volume from scratch.
inline double reference_volume(const TetMesh& mesh, int t) {
  Eigen::Matrix3d Dm;
  for (int k = 0; k < 3; ++k)
    Dm.col(k) = (mesh.rest_positions.row(mesh.tets(t, k + 1)) - mesh.rest_positions.row(mesh.tets(t, 0))).transpose();
  return std::abs(Dm.determinant()) / 6.0;
}

/// Polar stretch via the SVD, independent of the library's routine.
inline Eigen::Matrix3d reference_stretch(const Eigen::Matrix3d& F) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(F, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d U = svd.matrixU(), V = svd.matrixV();
  Eigen::Vector3d s = svd.singularValues();
  if ((U * V.transpose()).determinant() < 0) {
    U.col(2) *= -1;
    s[2] *= -1;
  }
  return V * s.asDiagonal() * V.transpose();
}

/// Hand-written densities, for cross-checking the library's.
inline double reference_density(const Eigen::Matrix3d& S, MaterialModel model, double mu, double lambda) {
  const Eigen::Matrix3d I = Eigen::Matrix3d::Identity();
  switch (model) {
    case MaterialModel::kArap:
      return mu * (S - I).squaredNorm();
    case MaterialModel::kFcr:
      return mu * (S - I).squaredNorm() + 0.5 * lambda * std::pow((S - I).trace(), 2);
    case MaterialModel::kSnh: {
      const double J = S.determinant();
      return 0.5 * mu * ((S.transpose() * S).trace() - 3.0) - mu * (J - 1.0) + 0.5 * lambda * std::pow(J - 1.0, 2);
    }
  }
  return 0.0;
}

template <class Fn>
Eigen::VectorXd fd_gradient(const Fn& f, const Eigen::VectorXd& x, double h) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd p = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    p[i] = x[i] + h;
    const double fp = f(p);
    p[i] = x[i] - h;
    const double fm = f(p);
    p[i] = x[i];
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// Columns are central differences of a vector function.
template <class Fn>
Eigen::MatrixXd fd_jacobian(const Fn& f, const Eigen::VectorXd& x, double h) {
  Eigen::VectorXd p = x;
  Eigen::MatrixXd J;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    p[i] = x[i] + h;
    const Eigen::VectorXd fp = f(p);
    p[i] = x[i] - h;
    const Eigen::VectorXd fm = f(p);
    p[i] = x[i];
    if (J.size() == 0) J.resize(fp.size(), x.size());
    J.col(i) = (fp - fm) / (2.0 * h);
  }
  return J;
}

template <class A, class B>
double relative_error(const Eigen::MatrixBase<A>& value, const Eigen::MatrixBase<B>& reference) {
  const double scale = reference.norm();
  return (value - reference).norm() / (scale > 0.0 ? scale : 1.0);
}

/// Random partition of the tets into k nonempty clusters, each represented
/// by its lowest-index tet, weighted by cluster mass.
inline CubatureScheme random_clusters(const Body& body, int k, Rng& rng) {
  const int nt = body.mesh.num_tets();
  std::vector<int> labels(nt);
  for (int t = 0; t < nt; ++t) labels[t] = t < k ? t : static_cast<int>(rng() % k);
  CubatureScheme s;
  s.labels = labels;
  s.cubature_tets.assign(k, -1);
  s.weights = Eigen::VectorXd::Zero(k);
  s.volumes = Eigen::VectorXd::Zero(k);
  for (int t = 0; t < nt; ++t) {
    const int c = labels[t];
    if (s.cubature_tets[c] < 0) s.cubature_tets[c] = t;
    s.weights[c] += body.materials.density[t] * reference_volume(body.mesh, t);
    s.volumes[c] += reference_volume(body.mesh, t);
  }
  return s;
}

}  // namespace smfem::test
