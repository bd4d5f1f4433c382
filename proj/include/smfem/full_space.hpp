#pragma once

#include <memory>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "smfem/operators.hpp"
#include "smfem/solver.hpp"

namespace smfem {

/// Unreduced mixed-FEM stepper: stretch and multiplier DOFs on every tet,
/// weights equal to tet masses, sparse direct solves over the free
/// coordinates. It shares no assembly code with the reduced path so it can
/// serve as a reference for it.
///
/// The state reuses SimState with u the 3|V| nodal displacement (pinned
/// entries stay zero) and z the 6|T| per-tet stretches.
class FullSpaceSolver {
 public:
  FullSpaceSolver(std::shared_ptr<const Body> body, SolverConfig config);

  const Body& body() const { return *body_; }
  const SolverConfig& config() const { return config_; }
  /// Maps free-coordinate index to the flattened coordinate index.
  const std::vector<int>& free_coordinates() const { return free_; }

  SimState initial_state(const Eigen::VectorXd& u0) const;
  void begin_step(const SimState& state, const ExternalLoads& loads = {});
  /// Inertia, external loads and springs at displacement u (3|V|).
  double positional_energy(const Eigen::VectorXd& u) const;
  /// Constraint taken as sym(R^T F) at the given per-tet rotations, or at
  /// the polar rotations when none are given.
  double lagrangian(const Eigen::VectorXd& u, const Eigen::VectorXd& z, const Eigen::VectorXd& mu,
                    const std::vector<Eigen::Matrix3d>* rotations = nullptr) const;
  StepResult step(const SimState& state, const ExternalLoads& loads = {});

 private:
  std::shared_ptr<const Body> body_;
  SolverConfig config_;
  std::vector<int> free_;
  std::vector<int> free_index_;  // -1 for pinned coordinates
  Eigen::VectorXd mass_;
  Eigen::VectorXd u_pred_;
  Eigen::VectorXd force_;
  std::vector<DragSpring> springs_;
};

/// Per-tet polar stretches of the configuration X + u.
Eigen::VectorXd tet_stretches(const Body& body, const Eigen::VectorXd& u);

}  // namespace smfem
