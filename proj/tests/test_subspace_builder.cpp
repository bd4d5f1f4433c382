#include <doctest.h>

#include <filesystem>
#include <set>

#include <Eigen/Eigenvalues>

#include "smfem/reduced_space.hpp"
#include "smfem/subspace.hpp"
#include "support.hpp"

using namespace smfem;
using namespace smfem::test;

namespace {

std::shared_ptr<const Body> block_body(Rng& rng, const Eigen::Vector3i& cells, double youngs = 1e5) {
  return make_body(jittered_block(rng, cells, 0.2), {{0, Material{youngs, 0.4, 1000}}});
}

/// Beam along x whose right half is `ratio` times stiffer.
std::shared_ptr<const Body> two_material_beam(double ratio) {
  TetMesh base = make_voxel_mesh({8, 2, 2}, {0.8, 0.2, 0.2}, Eigen::Vector3d::Zero());
  std::vector<int> region(base.num_tets());
  for (int t = 0; t < base.num_tets(); ++t) region[t] = tet_centroid(base, t).x() > 0.4;
  TetMesh mesh = make_tet_mesh(base.rest_positions, base.tets, region);
  return make_body(std::move(mesh), {{0, Material{1e5, 0.4, 1000}}, {1, Material{1e5 * ratio, 0.4, 1000}}});
}

}  // namespace

TEST_SUITE("subspace_builder") {
  TEST_CASE("weight Laplacian has the constant null space and scales with stiffness") {
    Rng rng(1);
    const auto body = block_body(rng, {2, 2, 2});
    const Eigen::SparseMatrix<double> H = weight_laplacian(*body, MaterialModel::kArap);
    CHECK((H * Eigen::VectorXd::Ones(H.cols())).cwiseAbs().maxCoeff() <= 1e-9 * H.norm());
    CHECK(Eigen::MatrixXd(H).isApprox(Eigen::MatrixXd(H).transpose(), 1e-14));

    const auto stiffer = make_body(body->mesh, {{0, Material{2e5, 0.4, 1000}}});
    const Eigen::SparseMatrix<double> H2 = weight_laplacian(*stiffer, MaterialModel::kArap);
    CHECK(relative_error(Eigen::MatrixXd(H2), Eigen::MatrixXd(2.0 * H)) <= 1e-12);
  }

  TEST_CASE("weight Laplacian equals the summed diagonal blocks of the rest Hessian") {
    Eigen::MatrixX3d V(5, 3);
    V << 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0.9, 0.8, 0.7;
    Eigen::MatrixX4i T(2, 4);
    T << 0, 1, 2, 3, 1, 2, 3, 4;
    const auto body = make_body(make_tet_mesh(V, T), {{0, Material{1e3, 0.3, 1000}}});
    for (MaterialModel m : {MaterialModel::kArap, MaterialModel::kFcr}) {
      const auto f = [&](const Eigen::VectorXd& x) { return elastic_energy(*body, m, x); };
      const Eigen::VectorXd X = body->mesh.rest_vector();
      // Second differences of the energy at rest.
      const double h = 1e-4;
      Eigen::MatrixXd Hfull(15, 15);
      for (int i = 0; i < 15; ++i) {
        for (int j = 0; j < 15; ++j) {
          Eigen::VectorXd pp = X, pm = X, mp = X, mm = X;
          pp[i] += h, pp[j] += h;
          pm[i] += h, pm[j] -= h;
          mp[i] -= h, mp[j] += h;
          mm[i] -= h, mm[j] -= h;
          Hfull(i, j) = (f(pp) - f(pm) - f(mp) + f(mm)) / (4 * h * h);
        }
      }
      Eigen::MatrixXd ref = Eigen::MatrixXd::Zero(5, 5);
      for (int a = 0; a < 5; ++a)
        for (int b = 0; b < 5; ++b)
          for (int d = 0; d < 3; ++d) ref(a, b) += Hfull(3 * a + d, 3 * b + d);
      CHECK(relative_error(Eigen::MatrixXd(weight_laplacian(*body, m)), ref) <= 1e-5);
    }
  }

  TEST_CASE("eigenmodes match a dense generalized solve on one tet") {
    Eigen::MatrixX3d V(4, 3);
    V << 0, 0, 0, 1, 0, 0, 0, 1, 0, 0.2, 0.1, 1;
    Eigen::MatrixX4i T(1, 4);
    T << 0, 1, 2, 3;
    const auto body = make_body(make_tet_mesh(V, T), {{0, Material{}}});
    const Eigen::SparseMatrix<double> H = weight_laplacian(*body, MaterialModel::kArap);
    const SkinningModes modes = skinning_eigenmodes(H, body->ops.vertex_mass, 4, {});
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(Eigen::MatrixXd(H),
                                                                  Eigen::MatrixXd(body->ops.vertex_mass.asDiagonal()));
    CHECK(relative_error(modes.eigenvalues.tail(3), ges.eigenvalues().tail(3)) <= 1e-10);
    CHECK(std::abs(modes.eigenvalues[0]) <= 1e-8 * ges.eigenvalues()[3]);
    const Eigen::MatrixXd& W = modes.weights;
    CHECK((W.transpose() * body->ops.vertex_mass.asDiagonal() * W - Eigen::MatrixXd::Identity(4, 4)).norm() <= 1e-10);
    CHECK((Eigen::MatrixXd(H) * W - body->ops.vertex_mass.asDiagonal() * W * modes.eigenvalues.asDiagonal())
              .norm() <= 1e-8 * ges.eigenvalues()[3]);
  }

  TEST_CASE("eigenmodes: constant first column, ascending, signed, pinned rows zero") {
    Rng rng(2);
    const auto body = block_body(rng, {3, 2, 2});
    const SkinningSubspace free = build_skinning_subspace(*body, MaterialModel::kArap, 6);
    const Eigen::VectorXd c0 = free.W.col(0);
    CHECK((c0.array() - c0.mean()).abs().maxCoeff() <= 1e-8 * std::abs(c0.mean()));
    CHECK(c0.mean() == doctest::Approx(1.0 / std::sqrt(body->ops.total_mass())).epsilon(1e-8));
    for (int j = 1; j < 6; ++j) CHECK(free.gamma[j] >= free.gamma[j - 1]);
    for (int j = 0; j < 6; ++j) {
      Eigen::Index arg = 0;
      free.W.col(j).cwiseAbs().maxCoeff(&arg);
      CHECK(free.W(arg, j) > 0.0);
    }

    TetMesh pinned_mesh = body->mesh;
    pinned_mesh.set_pinned(vertices_in_box(pinned_mesh, {-1, -1, -1}, {0.01, 1, 1}));
    const auto pinned_body = make_body(pinned_mesh, {{0, Material{1e5, 0.4, 1000}}});
    const SkinningSubspace sub = build_skinning_subspace(*pinned_body, MaterialModel::kArap, 6);
    for (int v : pinned_mesh.pinned_vertices) {
      CHECK(sub.W.row(v).norm() == 0.0);
      CHECK(sub.B.middleRows(3 * v, 3).norm() == 0.0);
    }
    CHECK(sub.gamma.minCoeff() > 0.0);
  }

  TEST_CASE("low modes concentrate their variation in the soft part") {
    const auto body = two_material_beam(1e4);
    const SkinningSubspace sub = build_skinning_subspace(*body, MaterialModel::kArap, 6);
    for (int j = 1; j < 6; ++j) {
      double soft_lo = 1e300, soft_hi = -1e300, stiff_lo = 1e300, stiff_hi = -1e300;
      for (int v = 0; v < body->mesh.num_vertices(); ++v) {
        const double x = body->mesh.rest_positions(v, 0), w = sub.W(v, j);
        if (x < 0.39) soft_lo = std::min(soft_lo, w), soft_hi = std::max(soft_hi, w);
        if (x > 0.41) stiff_lo = std::min(stiff_lo, w), stiff_hi = std::max(stiff_hi, w);
      }
      CHECK(stiff_hi - stiff_lo < 0.05 * (soft_hi - soft_lo));
    }
  }

  TEST_CASE("too many modes is an error") {
    Rng rng(3);
    const auto body = block_body(rng, {1, 1, 1});
    CHECK_THROWS_AS(build_skinning_subspace(*body, MaterialModel::kArap, body->mesh.num_vertices() + 1),
                    std::invalid_argument);
  }

  TEST_CASE("LBS Jacobian matches the reference loop") {
    Rng rng(4);
    const auto body = block_body(rng, {2, 2, 1});
    const Eigen::MatrixX3d& X = body->mesh.rest_positions;
    const Eigen::MatrixXd W = random_matrix(rng, X.rows(), 3);
    const Eigen::MatrixXd B = lbs_jacobian(W, X);
    CHECK(B.rows() == 3 * X.rows());
    CHECK(B.cols() == 36);
    CHECK(lbs_displacements(W, X, Eigen::VectorXd::Zero(36)).norm() == 0.0);

    const Eigen::VectorXd u = random_vector(rng, 36);
    Eigen::MatrixX3d loop = Eigen::MatrixX3d::Zero(X.rows(), 3);
    for (Eigen::Index i = 0; i < X.rows(); ++i)
      for (int j = 0; j < 3; ++j)
        for (int d = 0; d < 3; ++d) {
          double s = u[12 * j + 4 * d + 3];
          for (int k = 0; k < 3; ++k) s += u[12 * j + 4 * d + k] * X(i, k);
          loop(i, d) += W(i, j) * s;
        }
    const Eigen::VectorXd Bu = B * u;
    CHECK((Eigen::Map<const Eigen::MatrixXd>(Bu.data(), 3, X.rows()).transpose() - loop).cwiseAbs().maxCoeff() <=
          1e-12);
    CHECK((lbs_displacements(W, X, u) - loop).cwiseAbs().maxCoeff() <= 1e-12);
  }

  TEST_CASE("the subspace contains rigid motions") {
    Rng rng(5);
    const auto body = block_body(rng, {3, 2, 2});
    const SkinningSubspace sub = build_skinning_subspace(*body, MaterialModel::kArap, 5);
    const Eigen::VectorXd X = body->mesh.rest_vector();
    const double bbox = body->mesh.bbox_diagonal();
    for (int trial = 0; trial < 5; ++trial) {
      const Eigen::Matrix3d Q = random_rotation(rng);
      const Eigen::Vector3d t = random_vector(rng, 3);
      Eigen::VectorXd target(X.size());
      for (int v = 0; v < body->mesh.num_vertices(); ++v) target.segment<3>(3 * v) = Q * X.segment<3>(3 * v) + t;
      const Eigen::VectorXd u = sub.B.colPivHouseholderQr().solve(target - X);
      CHECK((X + sub.B * u - target).cwiseAbs().maxCoeff() <= 1e-8 * bbox);
    }
  }

  TEST_CASE("k-means edge cases and determinism") {
    Rng rng(6);
    const Eigen::MatrixXd P = random_matrix(rng, 30, 2);
    const KMeansResult all = kmeans(P, 30, 0);
    CHECK(std::set<int>(all.labels.begin(), all.labels.end()).size() == 30);
    CHECK(all.inertia == doctest::Approx(0.0));
    const KMeansResult one = kmeans(P, 1, 0);
    CHECK(std::all_of(one.labels.begin(), one.labels.end(), [](int l) { return l == 0; }));
    CHECK((one.centroids.row(0) - P.colwise().mean()).norm() <= 1e-12);
    CHECK_THROWS_AS(kmeans(P, 31, 0), std::invalid_argument);
    CHECK_THROWS_AS(kmeans(P, 0, 0), std::invalid_argument);

    const KMeansResult a = kmeans(P, 4, 17), b = kmeans(P, 4, 17);
    CHECK(a.labels == b.labels);
    CHECK(a.centroids == b.centroids);

    // Two well separated blobs are found.
    Eigen::MatrixXd blobs(20, 2);
    for (int i = 0; i < 20; ++i) blobs.row(i) << (i < 10 ? 0.0 : 100.0) + uniform(rng), uniform(rng);
    const KMeansResult two = kmeans(blobs, 2, 3);
    for (int i = 1; i < 10; ++i) CHECK(two.labels[i] == two.labels[0]);
    for (int i = 11; i < 20; ++i) CHECK(two.labels[i] == two.labels[10]);
    CHECK(two.labels[0] != two.labels[10]);
  }

  TEST_CASE("cubature weights sum to the total mass and are reproducible") {
    Rng rng(7);
    const auto body = block_body(rng, {4, 2, 2});
    const SkinningSubspace sub = build_skinning_subspace(*body, MaterialModel::kFcr, 6);
    for (int count : {1, 7, 40, body->mesh.num_tets()}) {
      for (std::uint64_t seed : {0u, 1u, 2u}) {
        const CubatureScheme c = kmeans_cubature(sub.W, sub.gamma, *body, count, seed);
        CHECK(c.size() == count);
        CHECK(c.weights.sum() == doctest::Approx(body->ops.total_mass()).epsilon(1e-10));
        CHECK(c.volumes.sum() == doctest::Approx(body->ops.volumes.sum()).epsilon(1e-10));
        for (int k = 0; k < c.size(); ++k) CHECK(c.labels[c.cubature_tets[k]] == k);
        const CubatureScheme again = kmeans_cubature(sub.W, sub.gamma, *body, count, seed);
        CHECK(again.labels == c.labels);
        CHECK(again.cubature_tets == c.cubature_tets);
      }
    }
    CHECK_THROWS_AS(kmeans_cubature(sub.W, sub.gamma, *body, body->mesh.num_tets() + 1, 0), std::invalid_argument);
    const CubatureScheme every = all_tet_cubature(*body);
    CHECK(every.size() == body->mesh.num_tets());
    CHECK(every.weights.isApprox(body->ops.tet_mass, 1e-14));
  }

  TEST_CASE("cubature features drop clamped constant modes") {
    Rng rng(8);
    const auto body = block_body(rng, {2, 2, 2});
    const SkinningSubspace sub = build_skinning_subspace(*body, MaterialModel::kArap, 5);
    const Eigen::MatrixXd F = cubature_features(sub.W, sub.gamma, body->mesh);
    CHECK(F.rows() == body->mesh.num_tets());
    CHECK(F.cols() == 4);
    const int t = 3;
    double mean = 0.0;
    for (int q = 0; q < 4; ++q) mean += 0.25 * sub.W(body->mesh.tets(t, q), 1);
    CHECK(F(t, 0) == doctest::Approx(mean / (sub.gamma[1] * sub.gamma[1])).epsilon(1e-12));
  }

  TEST_CASE("recommended cubature counts") {
    CHECK(recommend_cubature_count(16, 10000) == 320);
    CHECK(recommend_cubature_count(5, 60) == 60);
    CHECK(recommend_cubature_count(1, 100) == 20);
  }

  TEST_CASE("artifact round trip") {
    Rng rng(9);
    const auto body = block_body(rng, {2, 2, 2});
    const SkinningSubspace sub = build_skinning_subspace(*body, MaterialModel::kArap, 4);
    SubspaceArtifact a;
    a.m = 4;
    a.cubature_count = 10;
    a.seed = 3;
    a.model = "arap";
    a.W = sub.W;
    a.gamma = sub.gamma;
    a.cubature = kmeans_cubature(sub.W, sub.gamma, *body, 10, 3);
    const auto path = std::filesystem::temp_directory_path() / "smfem_test_artifact.json";
    save_subspace_artifact(a, path);
    const SubspaceArtifact b = load_subspace_artifact(path);
    CHECK(b.W == a.W);
    CHECK(b.gamma == a.gamma);
    CHECK(b.cubature.labels == a.cubature.labels);
    CHECK(b.cubature.cubature_tets == a.cubature.cubature_tets);
    CHECK(b.cubature.weights == a.cubature.weights);
    CHECK(b.seed == 3);
    std::filesystem::remove(path);
  }

  TEST_CASE("reduced space basics") {
    Rng rng(10);
    const auto body = block_body(rng, {2, 1, 1});
    const SkinningSubspace sub = build_skinning_subspace(*body, MaterialModel::kArap, 3);
    const ReducedSpace space(body, sub.B, all_tet_cubature(*body));
    const Eigen::VectorXd u = random_vector(rng, space.dofs(), 0.01);
    CHECK(space.positions(Eigen::VectorXd::Zero(space.dofs())) == body->mesh.rest_vector());
    const Eigen::MatrixXd M = Eigen::MatrixXd(body->ops.mass_matrix());
    CHECK(relative_error(space.reduced_mass(), Eigen::MatrixXd(sub.B.transpose() * M * sub.B)) <= 1e-13);
    for (int c = 0; c < space.slots(); ++c) {
      CHECK((space.slot_deformation_gradient(c, u) -
             reference_deformation_gradient(body->mesh, space.positions(u), space.slot_tet(c)))
                .norm() <= 1e-12);
    }
    CHECK_THROWS_AS(ReducedSpace(body, sub.B.topRows(3), all_tet_cubature(*body)), std::invalid_argument);
  }
}
