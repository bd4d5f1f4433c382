#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "smfem/energy.hpp"
#include "smfem/reduced_space.hpp"

namespace smfem {

class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SolverConfig {
  double dt = 1.0 / 60.0;
  int max_iterations = 10;
  /// Convergence threshold on |du|_inf.
  double tol = 1e-6;
  /// Convergence threshold on the unweighted stretch mismatch |D(sbar - z)|_inf.
  double constraint_tol = 1e-6;
  double alpha0 = 1.0;
  double shrink = 0.5;
  int max_backtracks = 20;
  bool armijo = false;
  double armijo_c = 1e-4;
  Eigen::Vector3d gravity = Eigen::Vector3d::Zero();
  MaterialModel model = MaterialModel::kFcr;
  /// Consistency regularization weight.
  double gamma = 0.0;
  bool quad_refactor = false;
  bool hessian_projection = true;
};

void validate(const SolverConfig& config);

struct PointForce {
  int vertex = 0;
  Eigen::Vector3d force = Eigen::Vector3d::Zero();  // N
};

/// Soft penalty spring k/2 |x_v - target|^2.
struct DragSpring {
  int vertex = 0;
  Eigen::Vector3d target = Eigen::Vector3d::Zero();
  double stiffness = 0.0;  // N/m
};

/// Loads for one step in addition to gravity.
struct ExternalLoads {
  std::vector<PointForce> forces;
  std::vector<DragSpring> springs;
};

struct SimState {
  Eigen::VectorXd u;
  Eigen::VectorXd z;
  Eigen::VectorXd u_vel;
  std::vector<Eigen::Matrix3d> rotations;
  int step_index = 0;
  double time = 0.0;
};

struct IterationDiagnostics {
  double newton_decrement = 0.0;
  /// |D(sbar - z)|_inf at the start of the iteration.
  double constraint_residual = 0.0;
  double step_norm = 0.0;  // |du|_inf
  /// inf-norm of the condensed Newton gradient (equals |(H_u + K) du|_inf).
  double gradient_norm = 0.0;
  double alpha = 0.0;
  bool line_search_failed = false;
};

struct StepResult {
  SimState state;
  std::vector<IterationDiagnostics> iterations;
  bool converged = false;
  bool aborted = false;
  std::string message;
};

/// Called after every accepted or forced update inside a step with the
/// iteration index and the current iterate (z is empty for FEM).
using IterationObserver =
    std::function<void(int, const Eigen::VectorXd& u, const Eigen::VectorXd& z)>;

struct KKTBlocks {
  Eigen::MatrixXd H_u;
  std::vector<Mat6> H_z;
  Eigen::MatrixXd G_u;   // 6|C| x r
  Eigen::VectorXd G_z;   // diagonal, 6|C|
  Eigen::VectorXd f_u;
  Eigen::VectorXd f_z;
  Eigen::VectorXd f_mu;
  Eigen::MatrixXd K;
  std::vector<Eigen::Matrix3d> rotations;
};

/// Implicit-Euler positional energy and its derivatives at one u.
struct QuadraticEnergy {
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
};

struct LineSearchResult {
  double alpha = 0.0;
  double merit = 0.0;
  bool failed = false;
};

/// Solves (H_u + K) du = -f_u + G_u^T G_z^-1 (f_z - H_z G_z^-1 f_mu).
Eigen::VectorXd condensed_solve(const KKTBlocks& blocks);

struct LocalSolution {
  Eigen::VectorXd dz;
  Eigen::VectorXd mu;
};

/// dz = -G_z^-1 (f_mu + G_u du),  mu = -G_z^-1 (f_z + H_z dz).
LocalSolution local_solves(const KKTBlocks& blocks, const Eigen::VectorXd& du);

/// Initial state at reduced displacement u0 with zero velocity; stretches
/// start consistent with u0 (the rest stretch when u0 = 0).
SimState make_initial_state(const ReducedSpace& space, const Eigen::VectorXd& u0);

/// Shared quadratic part of the reduced solvers: inertia, loads and the
/// optional refactoring / regularization terms.
class ReducedQuadratic {
 public:
  ReducedQuadratic(std::shared_ptr<const ReducedSpace> space, const SolverConfig& config);

  /// Fixes the inertial target u + h u_vel and the loads for one step.
  void begin_step(const SimState& state, const ExternalLoads& loads);
  QuadraticEnergy evaluate(const Eigen::VectorXd& u) const;
  double value(const Eigen::VectorXd& u) const;
  const Eigen::VectorXd& predicted() const { return u_pred_; }
  const std::optional<QuadraticRefactor>& refactor() const { return refactor_; }
  const std::optional<ConsistencyRegularizer>& regularizer() const { return regularizer_; }

 private:
  std::shared_ptr<const ReducedSpace> space_;
  SolverConfig config_;
  std::optional<QuadraticRefactor> refactor_;
  std::optional<ConsistencyRegularizer> regularizer_;
  Eigen::MatrixXd constant_hessian_;  // M_r/h^2 + refactor + regularizer
  Eigen::MatrixXd hessian_;           // constant_hessian_ + springs
  Eigen::VectorXd u_pred_;
  Eigen::VectorXd force_;             // B^T f_ext
  std::vector<DragSpring> springs_;
  std::vector<Eigen::MatrixXd> spring_basis_;
};

/// Reduced mixed-FEM time stepper.
class MfemSolver {
 public:
  MfemSolver(std::shared_ptr<const ReducedSpace> space, SolverConfig config);

  const SolverConfig& config() const { return config_; }
  const ReducedSpace& space() const { return *space_; }

  /// Fixes the step's inertial target and loads; step() calls this itself.
  void begin_step(const SimState& state, const ExternalLoads& loads = {});
  QuadraticEnergy quadratic_energy(const Eigen::VectorXd& u) const { return quadratic_.evaluate(u); }
  KKTBlocks assemble(const Eigen::VectorXd& u, const Eigen::VectorXd& z) const;
  /// L(u, z, mu) = Psi_u + Psi_z + mu^T g(u, z). With `rotations` the
  /// constraint uses sym(R^T F) at those cached rotations, which is what the
  /// line search linearizes; otherwise it uses the polar stretch.
  double lagrangian(const Eigen::VectorXd& u, const Eigen::VectorXd& z, const Eigen::VectorXd& mu,
                    const std::vector<Eigen::Matrix3d>* rotations = nullptr) const;
  double cubature_energy(const Eigen::VectorXd& z) const;
  /// g(u, z) = per slot D w_c (S_c(u) - z_c).
  Eigen::VectorXd constraint(const Eigen::VectorXd& u, const Eigen::VectorXd& z,
                             const std::vector<Eigen::Matrix3d>* rotations = nullptr) const;
  LineSearchResult line_search(const Eigen::VectorXd& u, const Eigen::VectorXd& z,
                               const Eigen::VectorXd& du, const Eigen::VectorXd& dz,
                               const Eigen::VectorXd& mu, const KKTBlocks& blocks) const;
  StepResult step(const SimState& state, const ExternalLoads& loads = {});
  void set_observer(IterationObserver observer) { observer_ = std::move(observer); }

 private:
  std::shared_ptr<const ReducedSpace> space_;
  SolverConfig config_;
  ReducedQuadratic quadratic_;
  IterationObserver observer_;
};

/// Reduced standard FEM on the same basis and cubature:
/// E(u) = Psi_u(u) + sum_c vol_c psi(S_c(u)), Newton with the Gauss-Newton
/// Hessian through fixed rotations.
class FemSolver {
 public:
  FemSolver(std::shared_ptr<const ReducedSpace> space, SolverConfig config);

  const SolverConfig& config() const { return config_; }
  void begin_step(const SimState& state, const ExternalLoads& loads = {});
  double energy(const Eigen::VectorXd& u) const;
  Eigen::VectorXd gradient(const Eigen::VectorXd& u) const;
  Eigen::MatrixXd hessian(const Eigen::VectorXd& u) const;
  StepResult step(const SimState& state, const ExternalLoads& loads = {});
  void set_observer(IterationObserver observer) { observer_ = std::move(observer); }

 private:
  std::shared_ptr<const ReducedSpace> space_;
  SolverConfig config_;
  ReducedQuadratic quadratic_;
  IterationObserver observer_;
};

/// Stretches S_c(u) at every slot (polar stretch of the slot's F).
Eigen::VectorXd slot_stretches(const ReducedSpace& space, const Eigen::VectorXd& u);

}  // namespace smfem
