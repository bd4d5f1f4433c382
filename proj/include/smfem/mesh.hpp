#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <nlohmann/json.hpp>

namespace smfem {

class MeshError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Face = std::array<int, 3>;

/// Tetrahedral mesh in its rest configuration.
///
/// Vertex coordinates are stored one row per vertex. Flattened position
/// vectors used by the solvers interleave coordinates per vertex, i.e. entry
/// 3*i + d holds coordinate d of vertex i.
struct TetMesh {
  Eigen::MatrixX3d rest_positions;
  Eigen::MatrixX4i tets;
  /// Material region id per tet (0 when the source file carries none).
  std::vector<int> regions;
  /// Boundary triangles, outward oriented.
  std::vector<Face> surface_faces;
  /// Sorted, unique.
  std::vector<int> pinned_vertices;

  int num_vertices() const { return static_cast<int>(rest_positions.rows()); }
  int num_tets() const { return static_cast<int>(tets.rows()); }

  /// Rest positions flattened to a 3|V| vector.
  Eigen::VectorXd rest_vector() const;
  double bbox_diagonal() const;
  void set_pinned(std::vector<int> vertices);
};

/// Validates and normalizes raw connectivity: checks index ranges, swaps
/// the first two indices of inverted tets, rejects degenerate tets and
/// derives the surface.
TetMesh make_tet_mesh(Eigen::MatrixX3d vertices, Eigen::MatrixX4i tets,
                      std::vector<int> regions = {});

TetMesh parse_medit(std::string_view text);
TetMesh parse_json_mesh(const nlohmann::json& j);

/// Dispatches on extension: `.mesh` (MEDIT) or `.json`.
TetMesh load_mesh(const std::filesystem::path& path);
void save_mesh(const TetMesh& mesh, const std::filesystem::path& path);

std::string to_medit(const TetMesh& mesh);
nlohmann::json to_json(const TetMesh& mesh);

std::vector<Face> extract_surface(const Eigen::MatrixX4i& tets);
double signed_volume(const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                     const Eigen::Vector3d& c, const Eigen::Vector3d& d);

/// Regular voxel grid of `cells` hexahedra spanning `size` from `origin`,
/// each hex split into 6 tets. Cells for which `keep(center)` returns false
/// are dropped; vertices not referenced by any tet are removed.
TetMesh make_voxel_mesh(const Eigen::Vector3i& cells, const Eigen::Vector3d& size,
                        const Eigen::Vector3d& origin,
                        const std::function<bool(const Eigen::Vector3d&)>& keep = {});

/// Vertices whose rest position lies inside the closed box [lo, hi].
std::vector<int> vertices_in_box(const TetMesh& mesh, const Eigen::Vector3d& lo,
                                 const Eigen::Vector3d& hi);

Eigen::Vector3d tet_centroid(const TetMesh& mesh, int t);

}  // namespace smfem
