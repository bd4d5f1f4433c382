#pragma once

#include <memory>
#include <vector>

#include <Eigen/Core>

#include "smfem/operators.hpp"
#include "smfem/stretch.hpp"
#include "smfem/subspace.hpp"

namespace smfem {

/// A body bound to a positional basis and a cubature scheme.
///
/// Positions are x = X + B u (displacement convention), so u = 0 is the rest
/// state and zero rows of B stay at rest for every u.
class ReducedSpace {
 public:
  ReducedSpace(std::shared_ptr<const Body> body, Eigen::MatrixXd basis, CubatureScheme cubature);

  const Body& body() const { return *body_; }
  std::shared_ptr<const Body> body_ptr() const { return body_; }
  const Eigen::MatrixXd& basis() const { return basis_; }
  const CubatureScheme& cubature() const { return cubature_; }

  int dofs() const { return static_cast<int>(basis_.cols()); }
  int slots() const { return cubature_.size(); }
  int slot_tet(int c) const { return cubature_.cubature_tets[c]; }

  /// B^T M B.
  const Eigen::MatrixXd& reduced_mass() const { return reduced_mass_; }
  /// Flattened full-space positions X + B u.
  Eigen::VectorXd positions(const Eigen::VectorXd& u) const;
  /// Rows of B belonging to the four vertices of the slot's tet, 12 x r.
  const Eigen::MatrixXd& slot_basis(int c) const { return slot_basis_[c]; }
  Eigen::Matrix3d slot_deformation_gradient(int c, const Eigen::VectorXd& u) const;
  /// Rows of B for one vertex, 3 x r.
  Eigen::MatrixXd vertex_basis(int v) const { return basis_.middleRows(3 * v, 3); }
  /// J B, 9|T| x r, computed on first use.
  const Eigen::MatrixXd& jacobian_basis() const;

 private:
  std::shared_ptr<const Body> body_;
  Eigen::MatrixXd basis_;
  CubatureScheme cubature_;
  Eigen::VectorXd rest_;
  Eigen::MatrixXd reduced_mass_;
  std::vector<Eigen::MatrixXd> slot_basis_;
  std::vector<Eigen::Matrix<double, 12, 1>> slot_rest_;
  mutable Eigen::MatrixXd jacobian_basis_;
};

/// Simplified cubature consistency penalty
///   E(u) = gamma sum_t vol_t |F_t(u) - F_c(t)(u)|^2
/// with c(t) the cubature tet of t's cluster. Quadratic in u.
class ConsistencyRegularizer {
 public:
  ConsistencyRegularizer(const ReducedSpace& space, double gamma);

  struct Value {
    double energy = 0.0;
    Eigen::VectorXd gradient;
    Eigen::MatrixXd hessian;
  };
  Value evaluate(const Eigen::VectorXd& u) const;
  double energy(const Eigen::VectorXd& u) const { return 0.5 * u.dot(hessian_ * u); }
  const Eigen::MatrixXd& hessian() const { return hessian_; }
  double gamma() const { return gamma_; }

 private:
  double gamma_;
  Eigen::MatrixXd hessian_;
};

/// ARAP quadratic refactoring. The tr(F^T F) part of the ARAP energy moves
/// into the positional energy as u^T C u + l^T u + c0, and the cubature
/// density becomes vol mu (3 - 2 tr Z). All three terms integrate every
/// tet exactly; only the -2 tr Z part goes through the cubature.
struct QuadraticRefactor {
  Eigen::MatrixXd C;
  Eigen::VectorXd linear;
  double constant = 0.0;

  double energy(const Eigen::VectorXd& u) const { return u.dot(C * u) + linear.dot(u) + constant; }
};

/// Throws std::invalid_argument for models other than ARAP.
QuadraticRefactor quad_refactor_matrices(const ReducedSpace& space, MaterialModel model);

double refactored_density(const Vec6& z, const LameParameters& lame, double vol);
Vec6 refactored_density_grad(const LameParameters& lame, double vol);

}  // namespace smfem
