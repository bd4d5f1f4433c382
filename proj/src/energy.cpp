#include "smfem/energy.hpp"

#include <Eigen/Eigenvalues>
#include <stdexcept>

namespace smfem {

MaterialModel parse_material_model(std::string_view name) {
  if (name == "arap" || name == "ARAP") return MaterialModel::kArap;
  if (name == "fcr" || name == "FCR") return MaterialModel::kFcr;
  if (name == "snh" || name == "SNH") return MaterialModel::kSnh;
  throw std::invalid_argument("unknown material model: " + std::string(name));
}

std::string to_string(MaterialModel model) {
  switch (model) {
    case MaterialModel::kArap: return "arap";
    case MaterialModel::kFcr: return "fcr";
    case MaterialModel::kSnh: return "snh";
  }
  return "unknown";
}

namespace {

// Squared Frobenius distance to I and its packed derivatives.
double frob_dist2(const Vec6& s) {
  return (s.head<3>().array() - 1.0).square().sum() + 2.0 * s.tail<3>().squaredNorm();
}

double packed_det(const Vec6& s) {
  return s[0] * s[1] * s[2] + 2.0 * s[3] * s[4] * s[5] - s[0] * s[5] * s[5] -
         s[1] * s[4] * s[4] - s[2] * s[3] * s[3];
}

Vec6 packed_det_grad(const Vec6& s) {
  Vec6 g;
  g << s[1] * s[2] - s[5] * s[5], s[0] * s[2] - s[4] * s[4], s[0] * s[1] - s[3] * s[3],
      2.0 * (s[4] * s[5] - s[2] * s[3]), 2.0 * (s[3] * s[5] - s[1] * s[4]),
      2.0 * (s[3] * s[4] - s[0] * s[5]);
  return g;
}

Mat6 packed_det_hess(const Vec6& s) {
  Mat6 H = Mat6::Zero();
  H(0, 1) = s[2];
  H(0, 2) = s[1];
  H(1, 2) = s[0];
  H(0, 5) = -2.0 * s[5];
  H(1, 4) = -2.0 * s[4];
  H(2, 3) = -2.0 * s[3];
  H(3, 4) = 2.0 * s[5];
  H(3, 5) = 2.0 * s[4];
  H(4, 5) = 2.0 * s[3];
  H = (H + H.transpose()).eval();
  H(3, 3) = -2.0 * s[2];
  H(4, 4) = -2.0 * s[1];
  H(5, 5) = -2.0 * s[0];
  return H;
}

const Vec6 kFrobDiag = (Vec6() << 2, 2, 2, 4, 4, 4).finished();

}  // namespace

double psi_density(const Vec6& s, MaterialModel model, const LameParameters& lame, double vol) {
  const double mu = lame.mu;
  const double la = lame.lambda;
  switch (model) {
    case MaterialModel::kArap:
      return vol * mu * frob_dist2(s);
    case MaterialModel::kFcr: {
      const double tr = s[0] + s[1] + s[2] - 3.0;
      return vol * (mu * frob_dist2(s) + 0.5 * la * tr * tr);
    }
    case MaterialModel::kSnh: {
      const double q = s.head<3>().squaredNorm() + 2.0 * s.tail<3>().squaredNorm();
      const double J = packed_det(s);
      return vol * (0.5 * mu * (q - 3.0) - mu * (J - 1.0) + 0.5 * la * (J - 1.0) * (J - 1.0));
    }
  }
  return 0.0;
}

Vec6 psi_grad(const Vec6& s, MaterialModel model, const LameParameters& lame, double vol) {
  const double mu = lame.mu;
  const double la = lame.lambda;
  Vec6 g = Vec6::Zero();
  const Vec6 frob_grad = (Vec6() << 2.0 * (s[0] - 1.0), 2.0 * (s[1] - 1.0), 2.0 * (s[2] - 1.0),
                          4.0 * s[3], 4.0 * s[4], 4.0 * s[5])
                             .finished();
  switch (model) {
    case MaterialModel::kArap:
      g = mu * frob_grad;
      break;
    case MaterialModel::kFcr: {
      g = mu * frob_grad;
      g.head<3>().array() += la * (s[0] + s[1] + s[2] - 3.0);
      break;
    }
    case MaterialModel::kSnh: {
      const double J = packed_det(s);
      g = 0.5 * mu * kFrobDiag.cwiseProduct(s) + (la * (J - 1.0) - mu) * packed_det_grad(s);
      break;
    }
  }
  return vol * g;
}

Mat6 psi_hess(const Vec6& s, MaterialModel model, const LameParameters& lame, double vol,
              bool project) {
  const double mu = lame.mu;
  const double la = lame.lambda;
  Mat6 H = Mat6::Zero();
  switch (model) {
    case MaterialModel::kArap:
      H.diagonal() = mu * kFrobDiag;
      break;
    case MaterialModel::kFcr:
      H.diagonal() = mu * kFrobDiag;
      H.topLeftCorner<3, 3>().array() += la;
      break;
    case MaterialModel::kSnh: {
      const double J = packed_det(s);
      const Vec6 dJ = packed_det_grad(s);
      H.diagonal() = 0.5 * mu * kFrobDiag;
      H += (la * (J - 1.0) - mu) * packed_det_hess(s) + la * dJ * dJ.transpose();
      break;
    }
  }
  H *= vol;
  return project ? project_psd(H) : H;
}

Mat6 project_psd(const Mat6& H) {
  Eigen::SelfAdjointEigenSolver<Mat6> eig(0.5 * (H + H.transpose()));
  if (eig.eigenvalues().minCoeff() >= 0.0) return 0.5 * (H + H.transpose());
  const Vec6 lam = eig.eigenvalues().cwiseMax(0.0);
  return eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
}

double elastic_energy(const Body& body, MaterialModel model, const Eigen::VectorXd& x) {
  double e = 0.0;
  for (int t = 0; t < body.mesh.num_tets(); ++t) {
    const Eigen::Matrix3d F = deformation_gradient(body.mesh, body.ops, x, t);
    const PolarDecomposition pd = polar_decompose(F);
    e += psi_density(pack_symmetric(pd.S), model, body.materials.lame(t), body.ops.volumes[t]);
  }
  return e;
}

Eigen::VectorXd elastic_gradient(const Body& body, MaterialModel model, const Eigen::VectorXd& x) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(x.size());
  for (int t = 0; t < body.mesh.num_tets(); ++t) {
    const Eigen::Matrix3d F = deformation_gradient(body.mesh, body.ops, x, t);
    const PolarDecomposition pd = polar_decompose(F);
    const Mat6x12 L = constraint_jacobian_block(pd.R, body.ops.shape_gradients[t]);
    const Vec6 gs = psi_grad(sbar(F, pd.R), model, body.materials.lame(t), body.ops.volumes[t]);
    const Eigen::Matrix<double, 12, 1> ge = L.transpose() * gs;
    for (int v = 0; v < 4; ++v) g.segment<3>(3 * body.mesh.tets(t, v)) += ge.segment<3>(3 * v);
  }
  return g;
}

Eigen::SparseMatrix<double> elastic_hessian_fixed_rotation(const Body& body, MaterialModel model,
                                                           const Eigen::VectorXd& x,
                                                           bool project) {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<size_t>(body.mesh.num_tets()) * 144);
  for (int t = 0; t < body.mesh.num_tets(); ++t) {
    const Eigen::Matrix3d F = deformation_gradient(body.mesh, body.ops, x, t);
    const PolarDecomposition pd = polar_decompose(F);
    const Mat6x12 L = constraint_jacobian_block(pd.R, body.ops.shape_gradients[t]);
    const Mat6 Hs = psi_hess(sbar(F, pd.R), model, body.materials.lame(t), body.ops.volumes[t], project);
    const Eigen::Matrix<double, 12, 12> Ke = L.transpose() * Hs * L;
    for (int a = 0; a < 4; ++a) {
      for (int b = 0; b < 4; ++b) {
        for (int i = 0; i < 3; ++i) {
          for (int j = 0; j < 3; ++j) {
            trip.emplace_back(3 * body.mesh.tets(t, a) + i, 3 * body.mesh.tets(t, b) + j,
                              Ke(3 * a + i, 3 * b + j));
          }
        }
      }
    }
  }
  Eigen::SparseMatrix<double> H(x.size(), x.size());
  H.setFromTriplets(trip.begin(), trip.end());
  return H;
}

}  // namespace smfem
