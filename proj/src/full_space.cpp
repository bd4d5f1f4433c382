#include "smfem/full_space.hpp"

#include <cmath>
#include <sstream>

#include <Eigen/SparseCholesky>

namespace smfem {

namespace {

using Vec12 = Eigen::Matrix<double, 12, 1>;

Vec12 gather(const TetMesh& mesh, const Eigen::VectorXd& v, int t) {
  Vec12 out;
  for (int k = 0; k < 4; ++k) out.segment<3>(3 * k) = v.segment<3>(3 * mesh.tets(t, k));
  return out;
}

Eigen::Matrix3d tet_gradient(const Body& body, const Vec12& xe, int t) {
  const ShapeGradients& g = body.ops.shape_gradients[t];
  Eigen::Matrix3d F = Eigen::Matrix3d::Zero();
  for (int k = 0; k < 4; ++k) F += xe.segment<3>(3 * k) * g.row(k);
  return F;
}

}  // namespace

Eigen::VectorXd tet_stretches(const Body& body, const Eigen::VectorXd& u) {
  const Eigen::VectorXd x = body.mesh.rest_vector() + u;
  Eigen::VectorXd s(6 * body.mesh.num_tets());
  for (int t = 0; t < body.mesh.num_tets(); ++t) {
    s.segment<6>(6 * t) = pack_symmetric(polar_decompose(tet_gradient(body, gather(body.mesh, x, t), t)).S);
  }
  return s;
}

FullSpaceSolver::FullSpaceSolver(std::shared_ptr<const Body> body, SolverConfig config)
    : body_(std::move(body)), config_(std::move(config)) {
  validate(config_);
  if (config_.quad_refactor || config_.gamma != 0.0) {
    throw std::invalid_argument("the full-space solver supports neither refactoring nor regularization");
  }
  const TetMesh& mesh = body_->mesh;
  const int n = 3 * mesh.num_vertices();
  free_index_.assign(n, -1);
  std::vector<bool> pinned(mesh.num_vertices(), false);
  for (int v : mesh.pinned_vertices) pinned[v] = true;
  for (int i = 0; i < n; ++i) {
    if (!pinned[i / 3]) {
      free_index_[i] = static_cast<int>(free_.size());
      free_.push_back(i);
    }
  }
  mass_ = body_->ops.mass_diagonal();
  u_pred_ = Eigen::VectorXd::Zero(n);
  force_ = Eigen::VectorXd::Zero(n);
}

SimState FullSpaceSolver::initial_state(const Eigen::VectorXd& u0) const {
  const int n = 3 * body_->mesh.num_vertices();
  if (u0.size() != n) throw std::invalid_argument("initial state has wrong dimension");
  SimState s;
  s.u = u0;
  for (int i = 0; i < n; ++i) {
    if (free_index_[i] < 0) s.u[i] = 0.0;
  }
  s.u_vel = Eigen::VectorXd::Zero(n);
  s.z = tet_stretches(*body_, s.u);
  return s;
}

void FullSpaceSolver::begin_step(const SimState& state, const ExternalLoads& loads) {
  u_pred_ = state.u + config_.dt * state.u_vel;
  const int nv = body_->mesh.num_vertices();
  force_.resize(3 * nv);
  for (int v = 0; v < nv; ++v) force_.segment<3>(3 * v) = body_->ops.vertex_mass[v] * config_.gravity;
  for (const PointForce& p : loads.forces) force_.segment<3>(3 * p.vertex) += p.force;
  springs_ = loads.springs;
}

double FullSpaceSolver::positional_energy(const Eigen::VectorXd& u) const {
  const double h2 = config_.dt * config_.dt;
  const Eigen::VectorXd d = u - u_pred_;
  double e = 0.5 * d.dot(mass_.cwiseProduct(d)) / h2 - u.dot(force_);
  for (const DragSpring& s : springs_) {
    const Eigen::Vector3d x =
        body_->mesh.rest_positions.row(s.vertex).transpose() + u.segment<3>(3 * s.vertex);
    e += 0.5 * s.stiffness * (x - s.target).squaredNorm();
  }
  return e;
}

double FullSpaceSolver::lagrangian(const Eigen::VectorXd& u, const Eigen::VectorXd& z,
                                   const Eigen::VectorXd& mu,
                                   const std::vector<Eigen::Matrix3d>* rotations) const {
  const Vec6 D = stretch_constraint_weights();
  const Eigen::VectorXd x = body_->mesh.rest_vector() + u;
  double e = positional_energy(u);
  for (int t = 0; t < body_->mesh.num_tets(); ++t) {
    const Vec6 zt = z.segment<6>(6 * t);
    const Eigen::Matrix3d F = tet_gradient(*body_, gather(body_->mesh, x, t), t);
    const Vec6 S = rotations ? sbar(F, (*rotations)[t]) : pack_symmetric(polar_decompose(F).S);
    e += psi_density(zt, config_.model, body_->materials.lame(t), body_->ops.volumes[t]);
    e += body_->ops.tet_mass[t] * mu.segment<6>(6 * t).dot(D.cwiseProduct(S - zt));
  }
  return e;
}

StepResult FullSpaceSolver::step(const SimState& state, const ExternalLoads& loads) {
  begin_step(state, loads);
  const TetMesh& mesh = body_->mesh;
  const int nt = mesh.num_tets();
  const int n = 3 * mesh.num_vertices();
  const int nf = static_cast<int>(free_.size());
  const double h2 = config_.dt * config_.dt;
  const Vec6 D = stretch_constraint_weights();

  StepResult out;
  Eigen::VectorXd u = state.u;
  Eigen::VectorXd z = state.z;
  int failures = 0;
  for (int k = 0; k < config_.max_iterations; ++k) {
    const Eigen::VectorXd x = mesh.rest_vector() + u;
    std::vector<Mat6x12> L(nt);
    std::vector<Eigen::Matrix3d> R(nt);
    std::vector<Mat6> Hs(nt);
    Eigen::VectorXd r(6 * nt);
    Eigen::VectorXd gs(6 * nt);

    // Positional gradient and diagonal Hessian.
    Eigen::VectorXd grad = mass_.cwiseProduct(u - u_pred_) / h2 - force_;
    Eigen::VectorXd diag = mass_ / h2;
    for (const DragSpring& s : springs_) {
      grad.segment<3>(3 * s.vertex) += s.stiffness * (x.segment<3>(3 * s.vertex) - s.target);
      diag.segment<3>(3 * s.vertex).array() += s.stiffness;
    }

    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<size_t>(nt) * 144 + nf);
    Eigen::VectorXd rhs = -grad;
    double energy = positional_energy(u);
    for (int t = 0; t < nt; ++t) {
      const Eigen::Matrix3d F = tet_gradient(*body_, gather(mesh, x, t), t);
      const PolarDecomposition pd = polar_decompose(F);
      R[t] = pd.R;
      L[t] = constraint_jacobian_block(pd.R, body_->ops.shape_gradients[t]);
      const Vec6 zt = z.segment<6>(6 * t);
      const LameParameters lame = body_->materials.lame(t);
      const double vol = body_->ops.volumes[t];
      r.segment<6>(6 * t) = sbar(F, pd.R) - zt;
      gs.segment<6>(6 * t) = psi_grad(zt, config_.model, lame, vol);
      Hs[t] = psi_hess(zt, config_.model, lame, vol, config_.hessian_projection);
      energy += psi_density(zt, config_.model, lame, vol);
      const Eigen::Matrix<double, 12, 12> Kt = L[t].transpose() * Hs[t] * L[t];
      const Vec12 bt = -L[t].transpose() * (gs.segment<6>(6 * t) + Hs[t] * r.segment<6>(6 * t));
      for (int a = 0; a < 12; ++a) {
        const int ia = 3 * mesh.tets(t, a / 3) + a % 3;
        rhs[ia] += bt[a];
        const int fa = free_index_[ia];
        if (fa < 0) continue;
        for (int b = 0; b < 12; ++b) {
          const int fb = free_index_[3 * mesh.tets(t, b / 3) + b % 3];
          if (fb >= 0) trip.emplace_back(fa, fb, Kt(a, b));
        }
      }
    }
    if (!std::isfinite(energy) || !rhs.allFinite()) throw SolverError("state diverged");
    for (int f = 0; f < nf; ++f) trip.emplace_back(f, f, diag[free_[f]]);
    Eigen::SparseMatrix<double> A(nf, nf);
    A.setFromTriplets(trip.begin(), trip.end());
    Eigen::VectorXd b(nf);
    for (int f = 0; f < nf; ++f) b[f] = rhs[free_[f]];

    Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt(A);
    Eigen::VectorXd duf;
    if (llt.info() == Eigen::Success) duf = llt.solve(b);
    if (llt.info() != Eigen::Success || !duf.allFinite()) {
      std::ostringstream msg;
      msg << "full-space system factorization failed at iteration " << k;
      throw SolverError(msg.str());
    }
    Eigen::VectorXd du = Eigen::VectorXd::Zero(n);
    for (int f = 0; f < nf; ++f) du[free_[f]] = duf[f];

    Eigen::VectorXd dz(6 * nt);
    Eigen::VectorXd mu(6 * nt);
    double slope = -duf.dot(diag(free_).cwiseProduct(duf));
    for (int t = 0; t < nt; ++t) {
      const Vec6 d = r.segment<6>(6 * t) + L[t] * gather(mesh, du, t);
      dz.segment<6>(6 * t) = d;
      mu.segment<6>(6 * t) =
          (gs.segment<6>(6 * t) + Hs[t] * d).cwiseQuotient(body_->ops.tet_mass[t] * D);
      slope -= d.dot(Hs[t] * d);
    }

    IterationDiagnostics it;
    it.constraint_residual = D.replicate(nt, 1).cwiseProduct(r).cwiseAbs().maxCoeff();
    const Eigen::VectorXd Aduf = A * duf;
    it.gradient_norm = Aduf.cwiseAbs().maxCoeff();
    it.newton_decrement = std::sqrt(std::max(0.0, duf.dot(Aduf)));
    it.step_norm = du.cwiseAbs().maxCoeff();

    double alpha = config_.alpha0;
    bool accepted = it.step_norm < config_.tol && dz.cwiseAbs().maxCoeff() < config_.tol;
    if (!accepted) {
      const double L0 = lagrangian(u, z, mu, &R);
      for (int i = 0; i <= config_.max_backtracks; ++i) {
        const double Lt = lagrangian(u + alpha * du, z + alpha * dz, mu, &R);
        const double bound = (config_.armijo && slope < 0.0) ? L0 + config_.armijo_c * alpha * slope : L0;
        if (std::isfinite(Lt) && Lt < bound) {
          accepted = true;
          break;
        }
        if (i < config_.max_backtracks) alpha *= config_.shrink;
      }
    }
    it.alpha = alpha;
    it.line_search_failed = !accepted;
    out.iterations.push_back(it);
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
    z += alpha * dz;
    if (it.step_norm < config_.tol) {
      const Eigen::VectorXd mismatch = D.replicate(nt, 1).cwiseProduct(tet_stretches(*body_, u) - z);
      if (mismatch.cwiseAbs().maxCoeff() <= config_.constraint_tol) {
        out.converged = true;
        break;
      }
    }
  }
  out.state.u = u;
  out.state.z = z;
  out.state.u_vel = (u - state.u) / config_.dt;
  out.state.step_index = state.step_index + 1;
  out.state.time = state.time + config_.dt;
  return out;
}

}  // namespace smfem
