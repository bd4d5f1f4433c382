#pragma once

#include <string>
#include <string_view>

#include <Eigen/Core>

#include "smfem/materials.hpp"
#include "smfem/operators.hpp"
#include "smfem/stretch.hpp"

namespace smfem {

enum class MaterialModel { kArap, kFcr, kSnh };

MaterialModel parse_material_model(std::string_view name);
std::string to_string(MaterialModel model);

// Energy densities in packed stretch coordinates, scaled by `vol`.
//
//   ARAP  mu |S - I|^2
//   FCR   mu |S - I|^2 + lambda/2 tr(S - I)^2
//   SNH   mu/2 (tr(S^T S) - 3) - mu (det S - 1) + lambda/2 (det S - 1)^2
//
// Derivatives are taken with respect to the six packed values, so each
// off-diagonal coordinate collects both symmetric entries.
double psi_density(const Vec6& s, MaterialModel model, const LameParameters& lame,
                   double vol);
Vec6 psi_grad(const Vec6& s, MaterialModel model, const LameParameters& lame, double vol);
Mat6 psi_hess(const Vec6& s, MaterialModel model, const LameParameters& lame, double vol,
              bool project_psd = false);

/// Clamps negative eigenvalues to zero.
Mat6 project_psd(const Mat6& H);

// Full-space elastic energy sum_t vol_t psi(S(F_t)) with S the polar
// stretch of F_t, evaluated at flattened positions x.
double elastic_energy(const Body& body, MaterialModel model, const Eigen::VectorXd& x);
/// Exact gradient for the isotropic models above.
Eigen::VectorXd elastic_gradient(const Body& body, MaterialModel model,
                                 const Eigen::VectorXd& x);
/// Gauss-Newton Hessian with the per-tet rotations held at polar(F(x)).
Eigen::SparseMatrix<double> elastic_hessian_fixed_rotation(const Body& body,
                                                           MaterialModel model,
                                                           const Eigen::VectorXd& x,
                                                           bool project_psd);

}  // namespace smfem
