#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "smfem/energy.hpp"
#include "smfem/operators.hpp"

namespace smfem {

class EigenSolveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Sum of the three coordinate-diagonal blocks of the rest-state elastic
/// Hessian, |V| x |V|.
Eigen::SparseMatrix<double> weight_laplacian(const Body& body, MaterialModel model);

struct SkinningModes {
  Eigen::MatrixXd weights;      // |V| x m, M_w-orthonormal
  Eigen::VectorXd eigenvalues;  // m, ascending
};

/// Options for the generalized eigensolve H_w W = M_w W Gamma.
struct EigenSolveOptions {
  /// Up to this many free vertices the problem is solved densely.
  int dense_limit = 4000;
  int max_iterations = 500;
  double tolerance = 1e-10;
};

/// The m smallest generalized eigenpairs restricted to unpinned vertices.
/// Pinned rows of W are zero. Each column is signed so that its
/// largest-magnitude entry is positive.
SkinningModes skinning_eigenmodes(const Eigen::SparseMatrix<double>& H_w,
                                  const Eigen::VectorXd& vertex_mass, int m,
                                  const std::vector<int>& pinned,
                                  const EigenSolveOptions& options = {});

/// Linear blend skinning Jacobian, 3|V| x 12m.
///
/// Reduced coordinates hold one row-major 3x4 affine block per weight:
/// u[12 j + 4 d + k] is entry (d, k) of T_j, and vertex i moves by
/// sum_j W(i, j) T_j [X_i; 1].
Eigen::MatrixXd lbs_jacobian(const Eigen::MatrixXd& W, const Eigen::MatrixX3d& rest);

/// Per-vertex displacement from weights and reduced coordinates; the
/// reference loop the viewer mirrors.
Eigen::MatrixX3d lbs_displacements(const Eigen::MatrixXd& W, const Eigen::MatrixX3d& rest,
                                   const Eigen::VectorXd& u);

struct SkinningSubspace {
  Eigen::MatrixXd W;
  Eigen::VectorXd gamma;
  Eigen::MatrixXd B;
  std::vector<int> pinned;

  int modes() const { return static_cast<int>(W.cols()); }
  int dofs() const { return static_cast<int>(B.cols()); }
};

SkinningSubspace build_skinning_subspace(const Body& body, MaterialModel model, int m,
                                         const EigenSolveOptions& options = {});

/// Identity basis over the free (unpinned) coordinates, 3|V| x 3|V_free|.
Eigen::MatrixXd free_coordinate_basis(const TetMesh& mesh);

/// Cubature scheme from clustering tets.
struct CubatureScheme {
  std::vector<int> labels;         // per tet, in [0, size())
  std::vector<int> cubature_tets;  // one per cluster
  Eigen::VectorXd weights;         // cluster mass, kg
  Eigen::VectorXd volumes;         // cluster volume, m^3

  int size() const { return static_cast<int>(cubature_tets.size()); }
};

/// Every tet its own cubature point, weighted by its mass.
CubatureScheme all_tet_cubature(const Body& body);

struct KMeansOptions {
  int max_iterations = 200;
  double tolerance = 1e-6;
};

struct KMeansResult {
  std::vector<int> labels;
  Eigen::MatrixXd centroids;  // k x dims
  double inertia = 0.0;
  int iterations = 0;
};

/// Lloyd's algorithm with k-means++ seeding; rows of `points` are samples.
KMeansResult kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed,
                    const KMeansOptions& options = {});

/// Per-tet mean of the four vertex weight rows, scaled columnwise by
/// Gamma^-2 after clamping Gamma below at 1e-8 median(Gamma). Columns whose
/// eigenvalue needed the clamp are dropped (they are the constant modes).
Eigen::MatrixXd cubature_features(const Eigen::MatrixXd& W, const Eigen::VectorXd& gamma,
                                  const TetMesh& mesh);

CubatureScheme kmeans_cubature(const Eigen::MatrixXd& W, const Eigen::VectorXd& gamma,
                               const Body& body, int num_points, std::uint64_t seed,
                               const KMeansOptions& options = {});

int recommend_cubature_count(int m, int num_tets);

/// Saved output of the offline build.
struct SubspaceArtifact {
  int m = 0;
  int cubature_count = 0;
  std::uint64_t seed = 0;
  std::string model;
  Eigen::MatrixXd W;
  Eigen::VectorXd gamma;
  CubatureScheme cubature;
  std::vector<int> pinned;
};

void save_subspace_artifact(const SubspaceArtifact& artifact, const std::filesystem::path& path);
SubspaceArtifact load_subspace_artifact(const std::filesystem::path& path);

}  // namespace smfem
