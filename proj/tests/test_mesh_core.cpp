#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "smfem/materials.hpp"
#include "smfem/mesh.hpp"
#include "smfem/operators.hpp"
#include "support.hpp"

using namespace smfem;
using namespace smfem::test;

namespace {

constexpr const char* kUnitTet = R"(MeshVersionFormatted 1
Dimension 3
Vertices
4
0 0 0 0
1 0 0 0
0 1 0 0
0 0 1 0
Tetrahedra
1
%TET% 0
End
)";

std::string unit_tet_text(const std::string& tet) {
  std::string s = kUnitTet;
  s.replace(s.find("%TET%"), 5, tet);
  return s;
}

TetMesh two_tets() {
  Eigen::MatrixX3d V(5, 3);
  V << 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 1, 1;
  Eigen::MatrixX4i T(2, 4);
  T << 0, 1, 2, 3, 1, 2, 3, 4;
  return make_tet_mesh(V, T, {0, 1});
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("smfem_test_" + name);
}

}  // namespace

TEST_SUITE("mesh_core") {
  TEST_CASE("unit tet parses with volume 1/6") {
    const TetMesh mesh = parse_medit(unit_tet_text("1 2 3 4"));
    CHECK(mesh.num_vertices() == 4);
    CHECK(mesh.num_tets() == 1);
    const auto body = Body::make(mesh, MaterialField::uniform(1, {}));
    CHECK(body->ops.volumes[0] == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
    CHECK(mesh.surface_faces.size() == 4);
  }

  TEST_CASE("inverted tet is reordered to positive orientation") {
    const TetMesh mesh = parse_medit(unit_tet_text("2 1 3 4"));
    const auto p = [&](int k) -> Eigen::Vector3d { return mesh.rest_positions.row(mesh.tets(0, k)).transpose(); };
    CHECK(signed_volume(p(0), p(1), p(2), p(3)) == doctest::Approx(1.0 / 6.0));
  }

  TEST_CASE("out of range index is rejected") {
    CHECK_THROWS_WITH_AS(parse_medit(unit_tet_text("1 2 3 10")), doctest::Contains("index out of range"), MeshError);
  }

  TEST_CASE("malformed section header is rejected") {
    CHECK_THROWS_AS(parse_medit("MeshVersionFormatted 1\nDimension 3\nVertixes 4\n"), MeshError);
    CHECK_THROWS_AS(parse_medit("Vertices\n-1\n"), MeshError);
    CHECK_THROWS_AS(parse_medit("Vertices\n2\n0 0 0 0\n"), MeshError);
  }

  TEST_CASE("degenerate tet is rejected with its index") {
    Eigen::MatrixX3d V(5, 3);
    V << 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 1, 0;
    Eigen::MatrixX4i T(2, 4);
    T << 0, 1, 2, 3, 0, 1, 2, 4;  // second tet is flat
    CHECK_THROWS_WITH_AS(make_tet_mesh(V, T), doctest::Contains("degenerate tet 1"), MeshError);
  }

  TEST_CASE("surface of a voxel block is closed and outward") {
    const TetMesh mesh = make_voxel_mesh({2, 3, 2}, {0.2, 0.3, 0.2}, Eigen::Vector3d::Zero());
    std::map<std::pair<int, int>, int> edges;
    double enclosed = 0.0;
    const Eigen::Vector3d o(-1, -1, -1);
    for (const Face& f : mesh.surface_faces) {
      for (int k = 0; k < 3; ++k) ++edges[{f[k], f[(k + 1) % 3]}];
      enclosed += signed_volume(o, mesh.rest_positions.row(f[0]).transpose(), mesh.rest_positions.row(f[1]).transpose(),
                                mesh.rest_positions.row(f[2]).transpose());
    }
    // Every directed edge appears once and is matched by its reverse.
    for (const auto& [e, n] : edges) {
      CHECK(n == 1);
      CHECK(edges.count({e.second, e.first}) == 1);
    }
    CHECK(enclosed == doctest::Approx(0.2 * 0.3 * 0.2).epsilon(1e-12));
    CHECK(mesh.num_tets() == 6 * 12);
  }

  TEST_CASE("JSON round trip is bit exact and MEDIT round trip within 1e-12") {
    Rng rng(3);
    TetMesh mesh = jittered_block(rng, {2, 2, 2}, 0.2, 3);
    mesh.set_pinned({0, 5});
    const auto jpath = temp_path("mesh.json");
    save_mesh(mesh, jpath);
    const TetMesh back = load_mesh(jpath);
    CHECK(back.rest_positions == mesh.rest_positions);
    CHECK(back.tets == mesh.tets);
    CHECK(back.regions == mesh.regions);
    CHECK(back.pinned_vertices == mesh.pinned_vertices);

    const auto mpath = temp_path("mesh.mesh");
    save_mesh(mesh, mpath);
    const TetMesh medit = load_mesh(mpath);
    CHECK((medit.rest_positions - mesh.rest_positions).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(medit.tets == mesh.tets);
    CHECK(medit.regions == mesh.regions);
    std::filesystem::remove(jpath);
    std::filesystem::remove(mpath);
  }

  TEST_CASE("missing file is a mesh error") {
    CHECK_THROWS_AS(load_mesh(temp_path("does_not_exist.mesh")), MeshError);
  }

  TEST_CASE("pinned indices are validated and normalized") {
    TetMesh mesh = two_tets();
    mesh.set_pinned({4, 0, 4});
    CHECK(mesh.pinned_vertices == std::vector<int>{0, 4});
    CHECK_THROWS_AS(mesh.set_pinned({5}), MeshError);
  }

  TEST_CASE("Lame parameters") {
    const LameParameters a = lame_from_young_poisson(1.0, 0.0);
    CHECK(a.mu == doctest::Approx(0.5));
    CHECK(a.lambda == doctest::Approx(0.0));
    // mu = E / (2 (1 + nu)), lambda = E nu / ((1 + nu)(1 - 2 nu)), by hand.
    const LameParameters b = lame_from_young_poisson(1e5, 0.45);
    CHECK(b.mu == doctest::Approx(34482.7586).epsilon(1e-9));
    CHECK(b.lambda == doctest::Approx(310344.8276).epsilon(1e-9));
    CHECK_THROWS_WITH_AS(lame_from_young_poisson(1e5, 0.5), "incompressible limit unsupported", MaterialError);
    CHECK_THROWS_AS(lame_from_young_poisson(-1.0, 0.3), MaterialError);
  }

  TEST_CASE("material table must cover every region") {
    const TetMesh mesh = two_tets();
    CHECK_THROWS_AS(MaterialField::from_regions(mesh, {{0, Material{}}}), MaterialError);
    const MaterialField f = MaterialField::from_regions(mesh, {{0, Material{1e5, 0.3, 1000}}, {1, Material{2e5, 0.3, 500}}});
    CHECK(f.youngs[1] == 2e5);
    CHECK(f.density[1] == 500);
  }

  TEST_CASE("J x reproduces Ds Dm^-1") {
    Rng rng(11);
    const TetMesh mesh = jittered_block(rng, {3, 2, 2}, 0.3);
    const auto body = Body::make(mesh, MaterialField::uniform(mesh.num_tets(), {}));
    const Eigen::VectorXd x = mesh.rest_vector() + random_vector(rng, 3 * mesh.num_vertices(), 0.05);
    const Eigen::VectorXd Jx = body->ops.J * x;
    double worst = 0.0;
    for (int t = 0; t < mesh.num_tets(); ++t) {
      const Eigen::Matrix3d F = Eigen::Map<const Eigen::Matrix3d>(Jx.data() + 9 * t);
      const Eigen::Matrix3d ref = reference_deformation_gradient(mesh, x, t);
      worst = std::max(worst, (F - ref).cwiseAbs().maxCoeff());
      CHECK(body->ops.volumes[t] == doctest::Approx(reference_volume(mesh, t)).epsilon(1e-12));
    }
    CHECK(worst <= 1e-12);
  }

  TEST_CASE("rest and translated configurations give F = I") {
    const TetMesh mesh = parse_medit(unit_tet_text("1 2 3 4"));
    const auto body = Body::make(mesh, MaterialField::uniform(1, {}));
    Eigen::VectorXd x = mesh.rest_vector();
    CHECK((deformation_gradient(mesh, body->ops, x, 0) - Eigen::Matrix3d::Identity()).norm() <= 1e-14);
    for (int i = 0; i < 4; ++i) x.segment<3>(3 * i) += Eigen::Vector3d(1, 2, 3);
    CHECK((deformation_gradient(mesh, body->ops, x, 0) - Eigen::Matrix3d::Identity()).norm() <= 1e-14);
  }

  TEST_CASE("lumped mass sums to the hand total and is SPD") {
    const TetMesh mesh = two_tets();
    const auto body = Body::make(mesh, MaterialField::from_regions(mesh, {{0, Material{1e5, 0.3, 1000}},
                                                                           {1, Material{1e5, 0.3, 300}}}));
    const double hand = 1000 * reference_volume(mesh, 0) + 300 * reference_volume(mesh, 1);
    const Eigen::SparseMatrix<double> M = body->ops.mass_matrix();
    CHECK(M.rows() == 15);
    // Each spatial dimension carries the full mass once.
    CHECK(Eigen::VectorXd(M * Eigen::VectorXd::Ones(15)).sum() == doctest::Approx(3 * hand).epsilon(1e-14));
    CHECK(body->ops.vertex_mass.sum() == doctest::Approx(hand).epsilon(1e-14));
    CHECK(body->ops.total_mass() == doctest::Approx(hand).epsilon(1e-14));
    CHECK(body->ops.mass_diagonal().minCoeff() > 0.0);
    // Vertex 0 touches only tet 0.
    CHECK(body->ops.vertex_mass[0] == doctest::Approx(0.25 * 1000 * reference_volume(mesh, 0)));
  }

  TEST_CASE("voxel carving drops cells and orphan vertices") {
    const TetMesh full = make_voxel_mesh({3, 1, 1}, {3, 1, 1}, Eigen::Vector3d::Zero());
    const TetMesh cut = make_voxel_mesh({3, 1, 1}, {3, 1, 1}, Eigen::Vector3d::Zero(),
                                        [](const Eigen::Vector3d& c) { return c.x() < 2.0; });
    CHECK(full.num_tets() == 18);
    CHECK(cut.num_tets() == 12);
    CHECK(cut.num_vertices() == 12);
    CHECK(vertices_in_box(full, {-0.1, -0.1, -0.1}, {0.1, 1.1, 1.1}).size() == 4);
  }
}
