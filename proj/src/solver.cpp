#include "smfem/solver.hpp"

#include <cmath>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

namespace smfem {

void validate(const SolverConfig& config) {
  if (!(config.dt > 0.0)) throw std::invalid_argument("dt must be positive");
  if (!(config.tol > 0.0) || !(config.constraint_tol > 0.0)) {
    throw std::invalid_argument("tolerances must be positive");
  }
  if (config.max_iterations < 1) throw std::invalid_argument("max_iterations must be >= 1");
  if (!(config.shrink > 0.0 && config.shrink < 1.0)) throw std::invalid_argument("shrink must be in (0, 1)");
  if (config.gamma < 0.0) throw std::invalid_argument("gamma must be non-negative");
  if (config.quad_refactor && config.model != MaterialModel::kArap) {
    throw std::invalid_argument("quadratic refactoring requires the ARAP model");
  }
}

namespace {

const Vec6 kD = stretch_constraint_weights();

double max_stretch_mismatch(const ReducedSpace& space, const Eigen::VectorXd& u,
                            const Eigen::VectorXd& z) {
  double worst = 0.0;
  for (int c = 0; c < space.slots(); ++c) {
    const Vec6 S = pack_symmetric(polar_decompose(space.slot_deformation_gradient(c, u)).S);
    worst = std::max(worst, kD.cwiseProduct(S - z.segment<6>(6 * c)).cwiseAbs().maxCoeff());
  }
  return worst;
}

std::vector<Eigen::Matrix3d> slot_rotations(const ReducedSpace& space, const Eigen::VectorXd& u) {
  std::vector<Eigen::Matrix3d> R(space.slots());
  for (int c = 0; c < space.slots(); ++c) R[c] = polar_decompose(space.slot_deformation_gradient(c, u)).R;
  return R;
}

// Symmetric square root factor Q with Q^T Q = H for a PSD block. LDLT is
// tried first and checked, since pivoted LDLT can silently go wrong on
// singular blocks; the eigendecomposition is the fallback.
bool psd_root(const Mat6& H, Mat6& root) {
  const double scale = std::max(H.cwiseAbs().maxCoeff(), 1e-300);
  Eigen::LDLT<Mat6> ldlt(H);
  if (ldlt.info() == Eigen::Success && ldlt.vectorD().minCoeff() >= -1e-12 * scale) {
    const Vec6 d = ldlt.vectorD().cwiseMax(0.0).cwiseSqrt();
    const Mat6 U = ldlt.matrixU();
    root = d.asDiagonal() * U * ldlt.transpositionsP();
    if ((root.transpose() * root - H).cwiseAbs().maxCoeff() <= 1e-12 * scale) return true;
  }
  Eigen::SelfAdjointEigenSolver<Mat6> eig(H);
  if (eig.eigenvalues().minCoeff() < -1e-12 * scale) return false;
  root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
  return true;
}

// Sum over slots of E_c^T H_c E_c. PSD blocks go through a symmetric rank
// update, which halves the flops of the plain product.
Eigen::MatrixXd sandwich(const Eigen::MatrixXd& E, const std::vector<Mat6>& H) {
  const Eigen::Index nc = static_cast<Eigen::Index>(H.size());
  const Eigen::Index r = E.cols();
  Eigen::MatrixXd factor(6 * nc, r);
  bool psd = true;
  for (Eigen::Index c = 0; c < nc && psd; ++c) {
    Mat6 root;
    psd = psd_root(H[c], root);
    if (psd) factor.middleRows(6 * c, 6).noalias() = root * E.middleRows(6 * c, 6);
  }
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(r, r);
  if (psd) {
    K.selfadjointView<Eigen::Lower>().rankUpdate(factor.transpose());
    return K.selfadjointView<Eigen::Lower>();
  }
  Eigen::MatrixXd HE(6 * nc, r);
  for (Eigen::Index c = 0; c < nc; ++c) HE.middleRows(6 * c, 6).noalias() = H[c] * E.middleRows(6 * c, 6);
  K.noalias() = E.transpose() * HE;
  return 0.5 * (K + K.transpose());
}

Eigen::VectorXd gravity_forces(const Body& body, const Eigen::Vector3d& g) {
  Eigen::VectorXd f(3 * body.mesh.num_vertices());
  for (int i = 0; i < body.mesh.num_vertices(); ++i) f.segment<3>(3 * i) = body.ops.vertex_mass[i] * g;
  return f;
}

}  // namespace

Eigen::VectorXd slot_stretches(const ReducedSpace& space, const Eigen::VectorXd& u) {
  Eigen::VectorXd z(6 * space.slots());
  for (int c = 0; c < space.slots(); ++c) {
    z.segment<6>(6 * c) = pack_symmetric(polar_decompose(space.slot_deformation_gradient(c, u)).S);
  }
  return z;
}

SimState make_initial_state(const ReducedSpace& space, const Eigen::VectorXd& u0) {
  if (u0.size() != space.dofs()) throw std::invalid_argument("initial state has wrong dimension");
  SimState s;
  s.u = u0;
  s.u_vel = Eigen::VectorXd::Zero(space.dofs());
  s.z = slot_stretches(space, u0);
  s.rotations = slot_rotations(space, u0);
  return s;
}

Eigen::VectorXd condensed_solve(const KKTBlocks& b) {
  const Eigen::Index slots = static_cast<Eigen::Index>(b.H_z.size());
  const Eigen::VectorXd gz_inv = b.G_z.cwiseInverse();
  Eigen::VectorXd inner(6 * slots);
  for (Eigen::Index c = 0; c < slots; ++c) {
    const Vec6 gf = gz_inv.segment<6>(6 * c).cwiseProduct(b.f_mu.segment<6>(6 * c));
    inner.segment<6>(6 * c) = b.f_z.segment<6>(6 * c) - b.H_z[c] * gf;
  }
  const Eigen::VectorXd rhs = -b.f_u + b.G_u.transpose() * gz_inv.cwiseProduct(inner);
  const Eigen::MatrixXd A = b.H_u + b.K;
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() != Eigen::Success) throw SolverError("condensed system factorization failed");
  Eigen::VectorXd du = llt.solve(rhs);
  if (!du.allFinite()) throw SolverError("condensed system factorization failed");
  return du;
}

LocalSolution local_solves(const KKTBlocks& b, const Eigen::VectorXd& du) {
  const Eigen::Index slots = static_cast<Eigen::Index>(b.H_z.size());
  LocalSolution out;
  const Eigen::VectorXd gdu = b.G_u * du;
  out.dz = -(b.f_mu + gdu).cwiseQuotient(b.G_z);
  out.mu.resize(6 * slots);
  for (Eigen::Index c = 0; c < slots; ++c) {
    const Vec6 r = b.f_z.segment<6>(6 * c) + b.H_z[c] * out.dz.segment<6>(6 * c);
    out.mu.segment<6>(6 * c) = -r.cwiseQuotient(b.G_z.segment<6>(6 * c));
  }
  return out;
}

// ---------------------------------------------------------------------------

ReducedQuadratic::ReducedQuadratic(std::shared_ptr<const ReducedSpace> space,
                                   const SolverConfig& config)
    : space_(std::move(space)), config_(config) {
  const double h2 = config_.dt * config_.dt;
  constant_hessian_ = space_->reduced_mass() / h2;
  if (config_.quad_refactor) {
    refactor_ = quad_refactor_matrices(*space_, config_.model);
    constant_hessian_ += 2.0 * refactor_->C;
  }
  if (config_.gamma > 0.0) {
    regularizer_.emplace(*space_, config_.gamma);
    constant_hessian_ += regularizer_->hessian();
  }
  hessian_ = constant_hessian_;
  u_pred_ = Eigen::VectorXd::Zero(space_->dofs());
  force_ = space_->basis().transpose() * gravity_forces(space_->body(), config_.gravity);
}

void ReducedQuadratic::begin_step(const SimState& state, const ExternalLoads& loads) {
  u_pred_ = state.u + config_.dt * state.u_vel;
  force_ = space_->basis().transpose() * gravity_forces(space_->body(), config_.gravity);
  for (const PointForce& p : loads.forces) force_ += space_->vertex_basis(p.vertex).transpose() * p.force;
  springs_ = loads.springs;
  spring_basis_.clear();
  hessian_ = constant_hessian_;
  for (const DragSpring& s : springs_) {
    spring_basis_.push_back(space_->vertex_basis(s.vertex));
    hessian_ += s.stiffness * spring_basis_.back().transpose() * spring_basis_.back();
  }
}

double ReducedQuadratic::value(const Eigen::VectorXd& u) const {
  const double h2 = config_.dt * config_.dt;
  const Eigen::VectorXd d = u - u_pred_;
  double e = 0.5 * d.dot(space_->reduced_mass() * d) / h2 - u.dot(force_);
  const Eigen::MatrixX3d& rest = space_->body().mesh.rest_positions;
  for (size_t i = 0; i < springs_.size(); ++i) {
    const Eigen::Vector3d x = rest.row(springs_[i].vertex).transpose() + spring_basis_[i] * u;
    e += 0.5 * springs_[i].stiffness * (x - springs_[i].target).squaredNorm();
  }
  if (refactor_) e += refactor_->energy(u);
  if (regularizer_) e += regularizer_->energy(u);
  return e;
}

QuadraticEnergy ReducedQuadratic::evaluate(const Eigen::VectorXd& u) const {
  const double h2 = config_.dt * config_.dt;
  QuadraticEnergy q;
  q.value = value(u);
  q.gradient = space_->reduced_mass() * (u - u_pred_) / h2 - force_;
  const Eigen::MatrixX3d& rest = space_->body().mesh.rest_positions;
  for (size_t i = 0; i < springs_.size(); ++i) {
    const Eigen::Vector3d x = rest.row(springs_[i].vertex).transpose() + spring_basis_[i] * u;
    q.gradient += springs_[i].stiffness * spring_basis_[i].transpose() * (x - springs_[i].target);
  }
  if (refactor_) q.gradient += 2.0 * refactor_->C * u + refactor_->linear;
  if (regularizer_) q.gradient += regularizer_->hessian() * u;
  q.hessian = hessian_;
  return q;
}

// ---------------------------------------------------------------------------

MfemSolver::MfemSolver(std::shared_ptr<const ReducedSpace> space, SolverConfig config)
    : space_(std::move(space)), config_(std::move(config)), quadratic_(space_, config_) {
  validate(config_);
}

void MfemSolver::begin_step(const SimState& state, const ExternalLoads& loads) {
  quadratic_.begin_step(state, loads);
}

double MfemSolver::cubature_energy(const Eigen::VectorXd& z) const {
  const auto& cub = space_->cubature();
  const Body& body = space_->body();
  double e = 0.0;
  for (int c = 0; c < space_->slots(); ++c) {
    const LameParameters lame = body.materials.lame(space_->slot_tet(c));
    const Vec6 zc = z.segment<6>(6 * c);
    e += config_.quad_refactor ? refactored_density(zc, lame, cub.volumes[c])
                               : psi_density(zc, config_.model, lame, cub.volumes[c]);
  }
  return e;
}

Eigen::VectorXd MfemSolver::constraint(const Eigen::VectorXd& u, const Eigen::VectorXd& z,
                                       const std::vector<Eigen::Matrix3d>* rotations) const {
  const auto& cub = space_->cubature();
  Eigen::VectorXd g(6 * space_->slots());
  for (int c = 0; c < space_->slots(); ++c) {
    const Eigen::Matrix3d F = space_->slot_deformation_gradient(c, u);
    const Vec6 S = rotations ? sbar(F, (*rotations)[c]) : pack_symmetric(polar_decompose(F).S);
    g.segment<6>(6 * c) = cub.weights[c] * kD.cwiseProduct(S - z.segment<6>(6 * c));
  }
  return g;
}

double MfemSolver::lagrangian(const Eigen::VectorXd& u, const Eigen::VectorXd& z,
                              const Eigen::VectorXd& mu,
                              const std::vector<Eigen::Matrix3d>* rotations) const {
  return quadratic_.value(u) + cubature_energy(z) + mu.dot(constraint(u, z, rotations));
}

KKTBlocks MfemSolver::assemble(const Eigen::VectorXd& u, const Eigen::VectorXd& z) const {
  const int nc = space_->slots();
  const int r = space_->dofs();
  const auto& cub = space_->cubature();
  const Body& body = space_->body();
  KKTBlocks b;
  QuadraticEnergy q = quadratic_.evaluate(u);
  b.H_u = std::move(q.hessian);
  b.f_u = std::move(q.gradient);
  b.H_z.resize(nc);
  b.G_u.resize(6 * nc, r);
  b.G_z.resize(6 * nc);
  b.f_z.resize(6 * nc);
  b.f_mu.resize(6 * nc);
  b.rotations.resize(nc);
  double energy = q.value;
  for (int c = 0; c < nc; ++c) {
    const int t = space_->slot_tet(c);
    const Eigen::Matrix3d F = space_->slot_deformation_gradient(c, u);
    const PolarDecomposition pd = polar_decompose(F);
    b.rotations[c] = pd.R;
    const Mat6x12 L = constraint_jacobian_block(pd.R, body.ops.shape_gradients[t]);
    const Vec6 Dw = cub.weights[c] * kD;
    b.G_u.middleRows(6 * c, 6).noalias() = Dw.asDiagonal() * (L * space_->slot_basis(c));
    b.G_z.segment<6>(6 * c) = -Dw;
    const Vec6 zc = z.segment<6>(6 * c);
    b.f_mu.segment<6>(6 * c) = Dw.cwiseProduct(sbar(F, pd.R) - zc);
    const LameParameters lame = body.materials.lame(t);
    const double vol = cub.volumes[c];
    if (config_.quad_refactor) {
      b.f_z.segment<6>(6 * c) = refactored_density_grad(lame, vol);
      b.H_z[c].setZero();
      energy += refactored_density(zc, lame, vol);
    } else {
      b.f_z.segment<6>(6 * c) = psi_grad(zc, config_.model, lame, vol);
      b.H_z[c] = psi_hess(zc, config_.model, lame, vol, config_.hessian_projection);
      energy += psi_density(zc, config_.model, lame, vol);
    }
  }
  if (!std::isfinite(energy) || !b.f_u.allFinite() || !b.f_z.allFinite()) {
    throw SolverError("state diverged");
  }
  // K = E^T H_z E with E = G_z^-1 G_u.
  b.K = sandwich(b.G_z.cwiseInverse().asDiagonal() * b.G_u, b.H_z);
  return b;
}

LineSearchResult MfemSolver::line_search(const Eigen::VectorXd& u, const Eigen::VectorXd& z,
                                         const Eigen::VectorXd& du, const Eigen::VectorXd& dz,
                                         const Eigen::VectorXd& mu, const KKTBlocks& b) const {
  LineSearchResult res;
  const double L0 = lagrangian(u, z, mu, &b.rotations);
  res.merit = L0;
  if (du.cwiseAbs().maxCoeff() < config_.tol && dz.cwiseAbs().maxCoeff() < config_.tol) {
    res.alpha = config_.alpha0;
    res.merit = lagrangian(u + res.alpha * du, z + res.alpha * dz, mu, &b.rotations);
    return res;
  }
  double slope = -du.dot(b.H_u * du);
  for (size_t c = 0; c < b.H_z.size(); ++c) {
    const Vec6 d = dz.segment<6>(6 * c);
    slope -= d.dot(b.H_z[c] * d);
  }
  double alpha = config_.alpha0;
  for (int i = 0; i <= config_.max_backtracks; ++i) {
    const double L = lagrangian(u + alpha * du, z + alpha * dz, mu, &b.rotations);
    const double bound = (config_.armijo && slope < 0.0) ? L0 + config_.armijo_c * alpha * slope : L0;
    res.alpha = alpha;
    if (std::isfinite(L) && L < bound) {
      res.merit = L;
      return res;
    }
    alpha *= config_.shrink;
  }
  res.failed = true;
  return res;
}

StepResult MfemSolver::step(const SimState& state, const ExternalLoads& loads) {
  begin_step(state, loads);
  StepResult out;
  Eigen::VectorXd u = state.u;
  Eigen::VectorXd z = state.z;
  int failures = 0;
  for (int k = 0; k < config_.max_iterations; ++k) {
    const KKTBlocks b = assemble(u, z);
    IterationDiagnostics diag;
    for (int c = 0; c < space_->slots(); ++c) {
      const double w = space_->cubature().weights[c];
      diag.constraint_residual = std::max(diag.constraint_residual,
                                          b.f_mu.segment<6>(6 * c).cwiseAbs().maxCoeff() / w);
    }
    Eigen::VectorXd du;
    try {
      du = condensed_solve(b);
    } catch (const SolverError& e) {
      std::ostringstream msg;
      msg << e.what() << " at iteration " << k;
      throw SolverError(msg.str());
    }
    const LocalSolution loc = local_solves(b, du);
    const Eigen::VectorXd Adu = (b.H_u + b.K) * du;
    diag.gradient_norm = Adu.cwiseAbs().maxCoeff();
    diag.newton_decrement = std::sqrt(std::max(0.0, du.dot(Adu)));
    diag.step_norm = du.cwiseAbs().maxCoeff();
    const LineSearchResult ls = line_search(u, z, du, loc.dz, loc.mu, b);
    diag.alpha = ls.alpha;
    diag.line_search_failed = ls.failed;
    out.iterations.push_back(diag);
    if (ls.failed) {
      if (++failures >= 3) {
        out.aborted = true;
        out.message = "line search found no decrease in 3 consecutive iterations";
        break;
      }
    } else {
      failures = 0;
    }
    u += ls.alpha * du;
    z += ls.alpha * loc.dz;
    if (observer_) observer_(k, u, z);
    if (diag.step_norm < config_.tol &&
        max_stretch_mismatch(*space_, u, z) <= config_.constraint_tol) {
      out.converged = true;
      break;
    }
  }
  out.state.u = u;
  out.state.z = z;
  out.state.u_vel = (u - state.u) / config_.dt;
  out.state.rotations = slot_rotations(*space_, u);
  out.state.step_index = state.step_index + 1;
  out.state.time = state.time + config_.dt;
  return out;
}

// ---------------------------------------------------------------------------

namespace {
SolverConfig without_refactor(SolverConfig c) {
  c.quad_refactor = false;
  return c;
}
}  // namespace

FemSolver::FemSolver(std::shared_ptr<const ReducedSpace> space, SolverConfig config)
    : space_(std::move(space)),
      config_(without_refactor(std::move(config))),
      quadratic_(space_, config_) {
  validate(config_);
}

void FemSolver::begin_step(const SimState& state, const ExternalLoads& loads) {
  quadratic_.begin_step(state, loads);
}

double FemSolver::energy(const Eigen::VectorXd& u) const {
  const Body& body = space_->body();
  double e = quadratic_.value(u);
  for (int c = 0; c < space_->slots(); ++c) {
    const Vec6 S = pack_symmetric(polar_decompose(space_->slot_deformation_gradient(c, u)).S);
    e += psi_density(S, config_.model, body.materials.lame(space_->slot_tet(c)),
                     space_->cubature().volumes[c]);
  }
  return e;
}

Eigen::VectorXd FemSolver::gradient(const Eigen::VectorXd& u) const {
  const Body& body = space_->body();
  Eigen::VectorXd g = quadratic_.evaluate(u).gradient;
  for (int c = 0; c < space_->slots(); ++c) {
    const int t = space_->slot_tet(c);
    const Eigen::Matrix3d F = space_->slot_deformation_gradient(c, u);
    const PolarDecomposition pd = polar_decompose(F);
    const Mat6x12 L = constraint_jacobian_block(pd.R, body.ops.shape_gradients[t]);
    const Vec6 gs = psi_grad(sbar(F, pd.R), config_.model, body.materials.lame(t),
                             space_->cubature().volumes[c]);
    g.noalias() += space_->slot_basis(c).transpose() * (L.transpose() * gs);
  }
  return g;
}

Eigen::MatrixXd FemSolver::hessian(const Eigen::VectorXd& u) const {
  const Body& body = space_->body();
  const int nc = space_->slots();
  const int r = space_->dofs();
  Eigen::MatrixXd H = quadratic_.evaluate(u).hessian;
  Eigen::MatrixXd E(6 * nc, r);
  std::vector<Mat6> Hs(nc);
  for (int c = 0; c < nc; ++c) {
    const int t = space_->slot_tet(c);
    const Eigen::Matrix3d F = space_->slot_deformation_gradient(c, u);
    const PolarDecomposition pd = polar_decompose(F);
    const Mat6x12 L = constraint_jacobian_block(pd.R, body.ops.shape_gradients[t]);
    Hs[c] = psi_hess(sbar(F, pd.R), config_.model, body.materials.lame(t),
                     space_->cubature().volumes[c], config_.hessian_projection);
    E.middleRows(6 * c, 6).noalias() = L * space_->slot_basis(c);
  }
  H += sandwich(E, Hs);
  return 0.5 * (H + H.transpose());
}

StepResult FemSolver::step(const SimState& state, const ExternalLoads& loads) {
  begin_step(state, loads);
  StepResult out;
  Eigen::VectorXd u = state.u;
  int failures = 0;
  for (int k = 0; k < config_.max_iterations; ++k) {
    const double E0 = energy(u);
    if (!std::isfinite(E0)) throw SolverError("state diverged");
    const Eigen::VectorXd g = gradient(u);
    const Eigen::MatrixXd H = hessian(u);
    Eigen::LLT<Eigen::MatrixXd> llt(H);
    if (llt.info() != Eigen::Success) {
      std::ostringstream msg;
      msg << "FEM Newton system factorization failed at iteration " << k;
      throw SolverError(msg.str());
    }
    const Eigen::VectorXd du = llt.solve(-g);
    IterationDiagnostics diag;
    diag.gradient_norm = g.cwiseAbs().maxCoeff();
    diag.newton_decrement = std::sqrt(std::max(0.0, du.dot(H * du)));
    diag.step_norm = du.cwiseAbs().maxCoeff();
    const double slope = g.dot(du);
    double alpha = config_.alpha0;
    bool accepted = diag.step_norm < config_.tol;
    if (!accepted) {
      for (int i = 0; i <= config_.max_backtracks; ++i) {
        const double E = energy(u + alpha * du);
        const double bound = (config_.armijo && slope < 0.0) ? E0 + config_.armijo_c * alpha * slope : E0;
        if (std::isfinite(E) && E < bound) {
          accepted = true;
          break;
        }
        if (i < config_.max_backtracks) alpha *= config_.shrink;
      }
    }
    diag.alpha = alpha;
    diag.line_search_failed = !accepted;
    out.iterations.push_back(diag);
    if (!accepted) {
      if (++failures >= 3) {
        out.aborted = true;
        out.message = "line search found no decrease in 3 consecutive iterations";
        break;
      }
    } else {
      failures = 0;
    }
    u += alpha * du;
    if (observer_) observer_(k, u, Eigen::VectorXd());
    if (diag.step_norm < config_.tol) {
      out.converged = true;
      break;
    }
  }
  out.state.u = u;
  out.state.z = slot_stretches(*space_, u);
  out.state.u_vel = (u - state.u) / config_.dt;
  out.state.rotations = slot_rotations(*space_, u);
  out.state.step_index = state.step_index + 1;
  out.state.time = state.time + config_.dt;
  return out;
}

}  // namespace smfem
