#include "smfem/materials.hpp"

#include <cmath>
#include <set>
#include <string>

namespace smfem {

LameParameters lame_from_young_poisson(double youngs, double poisson) {
  if (!(youngs > 0.0) || !std::isfinite(youngs)) {
    throw MaterialError("Young's modulus must be positive");
  }
  if (poisson >= 0.5) throw MaterialError("incompressible limit unsupported");
  if (!(poisson >= 0.0)) throw MaterialError("Poisson ratio must be non-negative");
  return {youngs / (2.0 * (1.0 + poisson)),
          youngs * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson))};
}

MaterialField MaterialField::uniform(int num_tets, const Material& material) {
  MaterialField f;
  if (!(material.density > 0.0)) throw MaterialError("density must be positive");
  const LameParameters lame = lame_from_young_poisson(material.youngs, material.poisson);
  f.youngs = Eigen::VectorXd::Constant(num_tets, material.youngs);
  f.poissons = Eigen::VectorXd::Constant(num_tets, material.poisson);
  f.density = Eigen::VectorXd::Constant(num_tets, material.density);
  f.lame_mu = Eigen::VectorXd::Constant(num_tets, lame.mu);
  f.lame_lambda = Eigen::VectorXd::Constant(num_tets, lame.lambda);
  return f;
}

MaterialField MaterialField::from_regions(const TetMesh& mesh,
                                          const std::map<int, Material>& table) {
  const int n = mesh.num_tets();
  MaterialField f;
  f.youngs.resize(n);
  f.poissons.resize(n);
  f.density.resize(n);
  f.lame_mu.resize(n);
  f.lame_lambda.resize(n);
  for (int t = 0; t < n; ++t) {
    auto it = table.find(mesh.regions[t]);
    if (it == table.end()) {
      throw MaterialError("no material for region " + std::to_string(mesh.regions[t]));
    }
    const Material& m = it->second;
    if (!(m.density > 0.0)) throw MaterialError("density must be positive");
    const LameParameters lame = lame_from_young_poisson(m.youngs, m.poisson);
    f.youngs[t] = m.youngs;
    f.poissons[t] = m.poisson;
    f.density[t] = m.density;
    f.lame_mu[t] = lame.mu;
    f.lame_lambda[t] = lame.lambda;
  }
  return f;
}

}  // namespace smfem
