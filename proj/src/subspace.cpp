#include "smfem/subspace.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>
#include <nlohmann/json.hpp>

namespace smfem {

Eigen::SparseMatrix<double> weight_laplacian(const Body& body, MaterialModel model) {
  const TetMesh& mesh = body.mesh;
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<size_t>(mesh.num_tets()) * 16);
  const Vec6 rest = rest_stretch();
  for (int t = 0; t < mesh.num_tets(); ++t) {
    const Mat6x12 L = constraint_jacobian_block(Eigen::Matrix3d::Identity(), body.ops.shape_gradients[t]);
    const Mat6 Hs = psi_hess(rest, model, body.materials.lame(t), body.ops.volumes[t]);
    const Eigen::Matrix<double, 12, 12> Ke = L.transpose() * Hs * L;
    for (int a = 0; a < 4; ++a) {
      for (int b = 0; b < 4; ++b) {
        double sum = Ke(3 * a, 3 * b) + Ke(3 * a + 1, 3 * b + 1) + Ke(3 * a + 2, 3 * b + 2);
        trip.emplace_back(mesh.tets(t, a), mesh.tets(t, b), sum);
      }
    }
  }
  Eigen::SparseMatrix<double> H(mesh.num_vertices(), mesh.num_vertices());
  H.setFromTriplets(trip.begin(), trip.end());
  return H;
}

namespace {

void fix_signs(Eigen::MatrixXd& W) {
  for (Eigen::Index j = 0; j < W.cols(); ++j) {
    Eigen::Index arg = 0;
    W.col(j).cwiseAbs().maxCoeff(&arg);
    if (W(arg, j) < 0) W.col(j) *= -1.0;
  }
}

// Dense path: symmetric standard problem in mass-scaled coordinates.
SkinningModes dense_modes(const Eigen::MatrixXd& H, const Eigen::VectorXd& mass, int m) {
  const Eigen::VectorXd inv_sqrt = mass.cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd A = inv_sqrt.asDiagonal() * H * inv_sqrt.asDiagonal();
  A = 0.5 * (A + A.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(A);
  if (eig.info() != Eigen::Success) throw EigenSolveError("dense eigensolver failed to converge");
  SkinningModes out;
  out.eigenvalues = eig.eigenvalues().head(m);
  out.weights = inv_sqrt.asDiagonal() * eig.eigenvectors().leftCols(m);
  return out;
}

// Shift-invert subspace iteration with Rayleigh-Ritz for meshes too large
// for the dense path.
SkinningModes iterative_modes(const Eigen::SparseMatrix<double>& H, const Eigen::VectorXd& mass,
                              int m, const EigenSolveOptions& options) {
  const Eigen::Index n = H.rows();
  const int block = std::min<int>(static_cast<int>(n), m + std::max(4, m / 2));
  const double scale = (H.diagonal().array() / mass.array()).mean();
  const double shift = -1e-6 * scale;
  Eigen::SparseMatrix<double> A = H;
  for (Eigen::Index i = 0; i < n; ++i) A.coeffRef(i, i) -= shift * mass[i];
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(A);
  if (ldlt.info() != Eigen::Success) throw EigenSolveError("shift-invert factorization failed");

  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Eigen::MatrixXd X(n, block);
  for (Eigen::Index j = 0; j < X.cols(); ++j)
    for (Eigen::Index i = 0; i < n; ++i) X(i, j) = dist(rng);

  Eigen::VectorXd values;
  double residual = 0.0;
  for (int it = 0; it < options.max_iterations; ++it) {
    X = ldlt.solve(mass.asDiagonal() * X);
    const Eigen::MatrixXd HX = H * X;
    Eigen::MatrixXd Hr = X.transpose() * HX;
    Eigen::MatrixXd Mr = X.transpose() * mass.asDiagonal() * X;
    Hr = 0.5 * (Hr + Hr.transpose()).eval();
    Mr = 0.5 * (Mr + Mr.transpose()).eval();
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ritz(Hr, Mr);
    if (ritz.info() != Eigen::Success) throw EigenSolveError("Rayleigh-Ritz step failed");
    X = X * ritz.eigenvectors();
    values = ritz.eigenvalues();
    residual = 0.0;
    const Eigen::MatrixXd R = H * X.leftCols(m) - mass.asDiagonal() * X.leftCols(m) * values.head(m).asDiagonal();
    for (int j = 0; j < m; ++j) {
      const double denom = (H * X.col(j)).norm() + std::abs(values[j]) * (mass.asDiagonal() * X.col(j)).norm();
      residual = std::max(residual, R.col(j).norm() / std::max(denom, 1e-300));
    }
    if (residual < options.tolerance) {
      SkinningModes out;
      out.eigenvalues = values.head(m);
      out.weights = X.leftCols(m);
      return out;
    }
  }
  std::ostringstream msg;
  msg << "eigensolver did not converge: relative residual " << residual << " after "
      << options.max_iterations << " iterations";
  throw EigenSolveError(msg.str());
}

}  // namespace

SkinningModes skinning_eigenmodes(const Eigen::SparseMatrix<double>& H_w,
                                  const Eigen::VectorXd& vertex_mass, int m,
                                  const std::vector<int>& pinned,
                                  const EigenSolveOptions& options) {
  const int nv = static_cast<int>(H_w.rows());
  std::vector<char> is_pinned(nv, 0);
  for (int v : pinned) is_pinned.at(v) = 1;
  std::vector<int> free_ids;
  std::vector<int> slot(nv, -1);
  for (int v = 0; v < nv; ++v) {
    if (!is_pinned[v]) {
      slot[v] = static_cast<int>(free_ids.size());
      free_ids.push_back(v);
    }
  }
  const int nf = static_cast<int>(free_ids.size());
  if (m < 1 || m > nf) {
    throw std::invalid_argument("skinning_eigenmodes: need 1 <= m <= number of free vertices");
  }
  std::vector<Eigen::Triplet<double>> trip;
  for (int k = 0; k < H_w.outerSize(); ++k) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(H_w, k); it; ++it) {
      if (slot[it.row()] >= 0 && slot[it.col()] >= 0) {
        trip.emplace_back(slot[it.row()], slot[it.col()], it.value());
      }
    }
  }
  Eigen::SparseMatrix<double> Hf(nf, nf);
  Hf.setFromTriplets(trip.begin(), trip.end());
  Eigen::VectorXd mf(nf);
  for (int i = 0; i < nf; ++i) mf[i] = vertex_mass[free_ids[i]];

  SkinningModes reduced = nf <= options.dense_limit ? dense_modes(Eigen::MatrixXd(Hf), mf, m)
                                                    : iterative_modes(Hf, mf, m, options);
  // Re-normalize against M_w; the iterative path only guarantees this to
  // Ritz precision.
  for (int j = 0; j < m; ++j) {
    const double norm = std::sqrt(reduced.weights.col(j).dot(mf.asDiagonal() * reduced.weights.col(j)));
    reduced.weights.col(j) /= norm;
  }
  SkinningModes out;
  out.eigenvalues = reduced.eigenvalues;
  out.weights = Eigen::MatrixXd::Zero(nv, m);
  for (int i = 0; i < nf; ++i) out.weights.row(free_ids[i]) = reduced.weights.row(i);
  fix_signs(out.weights);
  return out;
}

Eigen::MatrixXd lbs_jacobian(const Eigen::MatrixXd& W, const Eigen::MatrixX3d& rest) {
  const Eigen::Index nv = W.rows();
  const Eigen::Index m = W.cols();
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(3 * nv, 12 * m);
  for (Eigen::Index i = 0; i < nv; ++i) {
    const Eigen::Vector4d xh(rest(i, 0), rest(i, 1), rest(i, 2), 1.0);
    for (Eigen::Index j = 0; j < m; ++j) {
      for (int d = 0; d < 3; ++d) {
        B.block<1, 4>(3 * i + d, 12 * j + 4 * d) = W(i, j) * xh.transpose();
      }
    }
  }
  return B;
}

Eigen::MatrixX3d lbs_displacements(const Eigen::MatrixXd& W, const Eigen::MatrixX3d& rest,
                                   const Eigen::VectorXd& u) {
  const Eigen::Index m = W.cols();
  Eigen::MatrixX3d out = Eigen::MatrixX3d::Zero(W.rows(), 3);
  for (Eigen::Index i = 0; i < W.rows(); ++i) {
    const Eigen::Vector4d xh(rest(i, 0), rest(i, 1), rest(i, 2), 1.0);
    for (Eigen::Index j = 0; j < m; ++j) {
      const Eigen::Map<const Eigen::Matrix<double, 3, 4, Eigen::RowMajor>> T(u.data() + 12 * j);
      out.row(i) += W(i, j) * (T * xh).transpose();
    }
  }
  return out;
}

SkinningSubspace build_skinning_subspace(const Body& body, MaterialModel model, int m,
                                         const EigenSolveOptions& options) {
  const Eigen::SparseMatrix<double> Hw = weight_laplacian(body, model);
  SkinningModes modes = skinning_eigenmodes(Hw, body.ops.vertex_mass, m, body.mesh.pinned_vertices, options);
  SkinningSubspace sub;
  sub.W = std::move(modes.weights);
  sub.gamma = std::move(modes.eigenvalues);
  sub.B = lbs_jacobian(sub.W, body.mesh.rest_positions);
  sub.pinned = body.mesh.pinned_vertices;
  return sub;
}

Eigen::MatrixXd free_coordinate_basis(const TetMesh& mesh) {
  std::vector<char> pinned(mesh.num_vertices(), 0);
  for (int v : mesh.pinned_vertices) pinned[v] = 1;
  const int nfree = mesh.num_vertices() - static_cast<int>(mesh.pinned_vertices.size());
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(3 * mesh.num_vertices(), 3 * nfree);
  int col = 0;
  for (int v = 0; v < mesh.num_vertices(); ++v) {
    if (pinned[v]) continue;
    for (int d = 0; d < 3; ++d) B(3 * v + d, col++) = 1.0;
  }
  return B;
}

CubatureScheme all_tet_cubature(const Body& body) {
  const int nt = body.mesh.num_tets();
  CubatureScheme s;
  s.labels.resize(nt);
  s.cubature_tets.resize(nt);
  for (int t = 0; t < nt; ++t) s.labels[t] = s.cubature_tets[t] = t;
  s.weights = body.ops.tet_mass;
  s.volumes = body.ops.volumes;
  return s;
}

namespace {

int nearest_centroid(const Eigen::MatrixXd& centroids, const Eigen::RowVectorXd& p, double* dist2) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    const double d = (centroids.row(c) - p).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  if (dist2) *dist2 = best_d;
  return best;
}

}  // namespace

KMeansResult kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed,
                    const KMeansOptions& options) {
  const int n = static_cast<int>(points.rows());
  if (k < 1 || k > n) throw std::invalid_argument("kmeans: need 1 <= k <= number of points");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  // k-means++ seeding.
  std::vector<int> chosen;
  std::vector<char> taken(n, 0);
  chosen.push_back(std::min(n - 1, static_cast<int>(unif(rng) * n)));
  taken[chosen[0]] = 1;
  Eigen::VectorXd d2 = (points.rowwise() - points.row(chosen[0])).rowwise().squaredNorm();
  while (static_cast<int>(chosen.size()) < k) {
    const double total = d2.sum();
    int pick = -1;
    if (total > 0.0) {
      const double target = unif(rng) * total;
      double acc = 0.0;
      for (int i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc >= target && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
      if (pick < 0) {
        for (int i = n - 1; i >= 0; --i) {
          if (d2[i] > 0.0) {
            pick = i;
            break;
          }
        }
      }
    } else {
      for (int i = 0; i < n; ++i) {
        if (!taken[i]) {
          pick = i;
          break;
        }
      }
    }
    chosen.push_back(pick);
    taken[pick] = 1;
    d2 = d2.cwiseMin((points.rowwise() - points.row(pick)).rowwise().squaredNorm());
  }

  KMeansResult res;
  res.centroids.resize(k, points.cols());
  for (int c = 0; c < k; ++c) res.centroids.row(c) = points.row(chosen[c]);
  res.labels.assign(n, 0);
  Eigen::VectorXd dist(n);
  double prev = std::numeric_limits<double>::infinity();
  for (int it = 0; it < options.max_iterations; ++it) {
    res.iterations = it + 1;
    double inertia = 0.0;
    for (int i = 0; i < n; ++i) {
      res.labels[i] = nearest_centroid(res.centroids, points.row(i), &dist[i]);
      inertia += dist[i];
    }
    // Repair empty clusters with the point farthest from its centroid.
    std::vector<int> count(k, 0);
    for (int l : res.labels) ++count[l];
    for (int c = 0; c < k; ++c) {
      if (count[c] > 0) continue;
      int far = -1;
      for (int i = 0; i < n; ++i) {
        if (count[res.labels[i]] > 1 && (far < 0 || dist[i] > dist[far])) far = i;
      }
      --count[res.labels[far]];
      res.labels[far] = c;
      count[c] = 1;
      inertia -= dist[far];
      dist[far] = 0.0;
    }
    res.centroids.setZero();
    for (int i = 0; i < n; ++i) res.centroids.row(res.labels[i]) += points.row(i);
    for (int c = 0; c < k; ++c) res.centroids.row(c) /= count[c];
    res.inertia = inertia;
    if (inertia == 0.0 || std::abs(prev - inertia) <= options.tolerance * prev) break;
    prev = inertia;
  }
  return res;
}

Eigen::MatrixXd cubature_features(const Eigen::MatrixXd& W, const Eigen::VectorXd& gamma,
                                  const TetMesh& mesh) {
  const Eigen::Index m = W.cols();
  Eigen::VectorXd sorted = gamma;
  std::sort(sorted.data(), sorted.data() + sorted.size());
  const double median = m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
  const double floor = 1e-8 * median;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < m; ++j) {
    if (gamma[j] >= floor) keep.push_back(j);
  }
  if (keep.empty()) {
    for (Eigen::Index j = 0; j < m; ++j) keep.push_back(j);
  }
  Eigen::MatrixXd features(mesh.num_tets(), static_cast<Eigen::Index>(keep.size()));
  for (int t = 0; t < mesh.num_tets(); ++t) {
    for (size_t c = 0; c < keep.size(); ++c) {
      const Eigen::Index j = keep[c];
      double w = 0.0;
      for (int q = 0; q < 4; ++q) w += W(mesh.tets(t, q), j);
      const double g = std::max(gamma[j], floor);
      features(t, static_cast<Eigen::Index>(c)) = 0.25 * w / (g * g);
    }
  }
  return features;
}

CubatureScheme kmeans_cubature(const Eigen::MatrixXd& W, const Eigen::VectorXd& gamma,
                               const Body& body, int num_points, std::uint64_t seed,
                               const KMeansOptions& options) {
  const int nt = body.mesh.num_tets();
  if (num_points > nt) throw std::invalid_argument("cubature point count exceeds tet count");
  if (num_points < 1) throw std::invalid_argument("cubature point count must be positive");
  const Eigen::MatrixXd features = cubature_features(W, gamma, body.mesh);
  const KMeansResult km = kmeans(features, num_points, seed, options);

  CubatureScheme s;
  s.labels = km.labels;
  s.cubature_tets.assign(num_points, -1);
  s.weights = Eigen::VectorXd::Zero(num_points);
  s.volumes = Eigen::VectorXd::Zero(num_points);
  std::vector<double> best(num_points, std::numeric_limits<double>::infinity());
  for (int t = 0; t < nt; ++t) {
    const int c = km.labels[t];
    s.weights[c] += body.ops.tet_mass[t];
    s.volumes[c] += body.ops.volumes[t];
    const double d = (features.row(t) - km.centroids.row(c)).squaredNorm();
    if (d < best[c]) {
      best[c] = d;
      s.cubature_tets[c] = t;
    }
  }
  return s;
}

int recommend_cubature_count(int m, int num_tets) { return std::min(20 * m, num_tets); }

namespace {

nlohmann::json matrix_to_json(const Eigen::MatrixXd& A) {
  nlohmann::json j = nlohmann::json::array();
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    std::vector<double> row(A.cols());
    for (Eigen::Index c = 0; c < A.cols(); ++c) row[c] = A(i, c);
    j.push_back(row);
  }
  return j;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = rows ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Eigen::MatrixXd A(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (static_cast<Eigen::Index>(j[i].size()) != cols) throw std::runtime_error("ragged matrix in artifact");
    for (Eigen::Index c = 0; c < cols; ++c) A(i, c) = j[i][c].get<double>();
  }
  return A;
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd from_std(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

void save_subspace_artifact(const SubspaceArtifact& a, const std::filesystem::path& path) {
  nlohmann::json j;
  j["m"] = a.m;
  j["cubature_count"] = a.cubature_count;
  j["seed"] = a.seed;
  j["model"] = a.model;
  j["W"] = matrix_to_json(a.W);
  j["gamma"] = to_std(a.gamma);
  j["labels"] = a.cubature.labels;
  j["cubature_tets"] = a.cubature.cubature_tets;
  j["weights"] = to_std(a.cubature.weights);
  j["volumes"] = to_std(a.cubature.volumes);
  j["pinned"] = a.pinned;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write subspace artifact " + path.string());
  out << j.dump();
}

SubspaceArtifact load_subspace_artifact(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open subspace artifact " + path.string());
  const nlohmann::json j = nlohmann::json::parse(in);
  SubspaceArtifact a;
  a.m = j.at("m").get<int>();
  a.cubature_count = j.at("cubature_count").get<int>();
  a.seed = j.at("seed").get<std::uint64_t>();
  a.model = j.value("model", std::string("fcr"));
  a.W = matrix_from_json(j.at("W"));
  a.gamma = from_std(j.at("gamma").get<std::vector<double>>());
  a.cubature.labels = j.at("labels").get<std::vector<int>>();
  a.cubature.cubature_tets = j.at("cubature_tets").get<std::vector<int>>();
  a.cubature.weights = from_std(j.at("weights").get<std::vector<double>>());
  a.cubature.volumes = from_std(j.at("volumes").get<std::vector<double>>());
  a.pinned = j.at("pinned").get<std::vector<int>>();
  return a;
}

}  // namespace smfem
