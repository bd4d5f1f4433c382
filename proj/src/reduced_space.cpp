#include "smfem/reduced_space.hpp"

#include <stdexcept>

namespace smfem {

ReducedSpace::ReducedSpace(std::shared_ptr<const Body> body, Eigen::MatrixXd basis,
                           CubatureScheme cubature)
    : body_(std::move(body)), basis_(std::move(basis)), cubature_(std::move(cubature)) {
  const TetMesh& mesh = body_->mesh;
  if (basis_.rows() != 3 * mesh.num_vertices()) {
    throw std::invalid_argument("basis row count must be 3|V|");
  }
  if (static_cast<int>(cubature_.labels.size()) != mesh.num_tets()) {
    throw std::invalid_argument("cubature labels must cover every tet");
  }
  rest_ = mesh.rest_vector();
  const Eigen::VectorXd m = body_->ops.mass_diagonal();
  reduced_mass_ = basis_.transpose() * m.asDiagonal() * basis_;
  slot_basis_.resize(slots());
  slot_rest_.resize(slots());
  for (int c = 0; c < slots(); ++c) {
    const int t = slot_tet(c);
    Eigen::MatrixXd Bc(12, dofs());
    for (int v = 0; v < 4; ++v) {
      const int vid = mesh.tets(t, v);
      Bc.middleRows(3 * v, 3) = basis_.middleRows(3 * vid, 3);
      slot_rest_[c].segment<3>(3 * v) = rest_.segment<3>(3 * vid);
    }
    slot_basis_[c] = std::move(Bc);
  }
}

Eigen::VectorXd ReducedSpace::positions(const Eigen::VectorXd& u) const { return rest_ + basis_ * u; }

Eigen::Matrix3d ReducedSpace::slot_deformation_gradient(int c, const Eigen::VectorXd& u) const {
  const Eigen::Matrix<double, 12, 1> xe = slot_rest_[c] + slot_basis_[c] * u;
  const ShapeGradients& g = body_->ops.shape_gradients[slot_tet(c)];
  Eigen::Matrix3d F = Eigen::Matrix3d::Zero();
  for (int v = 0; v < 4; ++v) F += xe.segment<3>(3 * v) * g.row(v);
  return F;
}

const Eigen::MatrixXd& ReducedSpace::jacobian_basis() const {
  if (jacobian_basis_.size() == 0) jacobian_basis_ = body_->ops.J * basis_;
  return jacobian_basis_;
}

ConsistencyRegularizer::ConsistencyRegularizer(const ReducedSpace& space, double gamma)
    : gamma_(gamma) {
  if (gamma < 0.0) throw std::invalid_argument("regularization weight must be non-negative");
  const int r = space.dofs();
  hessian_ = Eigen::MatrixXd::Zero(r, r);
  if (gamma == 0.0) return;
  const Eigen::MatrixXd& JB = space.jacobian_basis();
  const auto& cub = space.cubature();
  const Eigen::VectorXd& vol = space.body().ops.volumes;
  const int nt = space.body().mesh.num_tets();
  // Rows of (J_t - J_c(t)) B, scaled by sqrt(2 gamma vol_t).
  Eigen::MatrixXd diff(9 * nt, r);
  for (int t = 0; t < nt; ++t) {
    const int ct = cub.cubature_tets[cub.labels[t]];
    diff.middleRows(9 * t, 9) =
        std::sqrt(2.0 * gamma * vol[t]) * (JB.middleRows(9 * t, 9) - JB.middleRows(9 * ct, 9));
  }
  hessian_.selfadjointView<Eigen::Lower>().rankUpdate(diff.transpose());
  hessian_ = hessian_.selfadjointView<Eigen::Lower>();
}

ConsistencyRegularizer::Value ConsistencyRegularizer::evaluate(const Eigen::VectorXd& u) const {
  Value v;
  v.gradient = hessian_ * u;
  v.energy = 0.5 * u.dot(v.gradient);
  v.hessian = hessian_;
  return v;
}

QuadraticRefactor quad_refactor_matrices(const ReducedSpace& space, MaterialModel model) {
  if (model != MaterialModel::kArap) {
    throw std::invalid_argument("quadratic refactoring requires the ARAP model");
  }
  const Body& body = space.body();
  const Eigen::MatrixXd& JB = space.jacobian_basis();
  const int nt = body.mesh.num_tets();
  const int r = space.dofs();
  QuadraticRefactor q;
  q.C = Eigen::MatrixXd::Zero(r, r);
  q.linear = Eigen::VectorXd::Zero(r);
  // tr(F^T F) with F = I + J B u, integrated over every tet.
  Eigen::MatrixXd scaled(9 * nt, r);
  for (int t = 0; t < nt; ++t) {
    const double a = body.ops.volumes[t] * body.materials.lame_mu[t];
    scaled.middleRows(9 * t, 9) = std::sqrt(a) * JB.middleRows(9 * t, 9);
    // vec(I) picks entries 0, 4, 8 of the column-major F.
    q.linear += 2.0 * a * (JB.row(9 * t) + JB.row(9 * t + 4) + JB.row(9 * t + 8)).transpose();
    q.constant += 3.0 * a;
  }
  q.C.selfadjointView<Eigen::Lower>().rankUpdate(scaled.transpose());
  q.C = q.C.selfadjointView<Eigen::Lower>();
  return q;
}

double refactored_density(const Vec6& z, const LameParameters& lame, double vol) {
  return vol * lame.mu * (3.0 - 2.0 * (z[0] + z[1] + z[2]));
}

Vec6 refactored_density_grad(const LameParameters& lame, double vol) {
  Vec6 g = Vec6::Zero();
  g.head<3>().setConstant(-2.0 * vol * lame.mu);
  return g;
}

}  // namespace smfem
