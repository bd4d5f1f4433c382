#pragma once

#include <map>
#include <stdexcept>

#include <Eigen/Core>

#include "smfem/mesh.hpp"

namespace smfem {

class MaterialError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Material {
  double youngs = 1e5;    // Pa
  double poisson = 0.45;  // dimensionless
  double density = 1e3;   // kg/m^3
};

struct LameParameters {
  double mu = 0.0;
  double lambda = 0.0;
};

/// Throws MaterialError when nu >= 0.5 or the inputs are out of range.
LameParameters lame_from_young_poisson(double youngs, double poisson);

/// Per-tet material parameters with the derived Lamé coefficients.
struct MaterialField {
  Eigen::VectorXd youngs;
  Eigen::VectorXd poissons;
  Eigen::VectorXd density;
  Eigen::VectorXd lame_mu;
  Eigen::VectorXd lame_lambda;

  int size() const { return static_cast<int>(youngs.size()); }
  LameParameters lame(int t) const { return {lame_mu[t], lame_lambda[t]}; }

  static MaterialField uniform(int num_tets, const Material& material);
  /// Every region id present in the mesh must have an entry.
  static MaterialField from_regions(const TetMesh& mesh,
                                    const std::map<int, Material>& table);
};

}  // namespace smfem
