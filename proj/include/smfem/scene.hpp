#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "smfem/materials.hpp"
#include "smfem/mesh.hpp"
#include "smfem/reduced_space.hpp"
#include "smfem/solver.hpp"
#include "smfem/subspace.hpp"

namespace smfem {

/// Invalid or inconsistent scene description.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Box {
  Eigen::Vector3d lo = Eigen::Vector3d::Zero();
  Eigen::Vector3d hi = Eigen::Vector3d::Zero();
  bool contains(const Eigen::Vector3d& p) const;
};

/// Vertex selection by explicit indices or by a box (indices win if both).
struct VertexSelector {
  std::vector<int> vertices;
  std::optional<Box> box;
  std::vector<int> resolve(const TetMesh& mesh) const;
  bool empty() const { return vertices.empty() && !box; }
};

/// Built-in voxel generator; cells whose center falls in a carve box are
/// removed.
struct VoxelSpec {
  Eigen::Vector3i cells = Eigen::Vector3i::Ones();
  Eigen::Vector3d size = Eigen::Vector3d::Ones();
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  std::vector<Box> carve;
};

struct RegionBox {
  int region = 0;
  Box box;
};

/// Constant force on every selected vertex while start <= t < stop.
struct TimedPull {
  VertexSelector vertices;
  Eigen::Vector3d direction = Eigen::Vector3d::UnitX();
  double magnitude = 0.0;  // N per vertex
  double start = 0.0;      // s
  double stop = 0.0;       // s
};

struct VertexGroup {
  std::string name;
  Box box;
};

/// Twist about a coordinate axis through `center`; the angle grows linearly
/// from 0 at `from` to `angle` at `to` along the axis and is clamped outside.
struct TwistSpec {
  int axis = 1;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double angle = 0.0;  // rad
  double from = 0.0;
  double to = 1.0;
};

/// Circular-arc bend of the `axis` coordinate toward `up`, curvature in 1/m,
/// centered at `center`.
struct BendSpec {
  int axis = 0;
  int up = 1;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double curvature = 0.0;
};

struct SubspaceSpec {
  int modes = 8;
  int cubature = 0;  // 0 selects recommend_cubature_count
  std::uint64_t seed = 0;
  std::filesystem::path artifact;  // empty: build in memory
};

struct ServiceSpec {
  double rate_hz = 60.0;
  bool realtime = true;
  /// Drag spring stiffness per kilogram of the dragged vertex, N/(m kg).
  double drag_stiffness = 1e4;
};

struct SceneConfig {
  std::filesystem::path mesh_path;
  std::optional<VoxelSpec> voxel;
  std::vector<RegionBox> region_boxes;
  std::map<int, Material> materials;
  VertexSelector pinned;
  SubspaceSpec subspace;
  SolverConfig solver;
  std::vector<TimedPull> pulls;
  std::vector<VertexGroup> groups;
  std::optional<TwistSpec> twist;
  std::optional<BendSpec> bend;
  int steps = 0;
  std::filesystem::path output = "out";
  ServiceSpec service;
};

/// Relative paths inside the JSON are resolved against `base_dir`.
SceneConfig parse_scene(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
SceneConfig load_scene(const std::filesystem::path& path);

/// Mesh with regions and pins applied.
TetMesh build_scene_mesh(const SceneConfig& config);
std::shared_ptr<const Body> build_scene_body(const SceneConfig& config);

/// Full-space initial displacement from the twist and bend specs (zero at
/// pinned vertices).
Eigen::VectorXd initial_displacement(const SceneConfig& config, const TetMesh& mesh);

/// Builds the skinning subspace and cubature described by the scene.
SubspaceArtifact build_scene_subspace(const SceneConfig& config, const Body& body);

/// Reads the scene's artifact when it exists and matches the scene, and
/// builds it otherwise.
SubspaceArtifact obtain_scene_subspace(const SceneConfig& config, const Body& body);

/// External loads of the step that starts at time t.
ExternalLoads scene_loads(const SceneConfig& config, const TetMesh& mesh, double t);

/// Everything a run needs, built once from a scene.
struct SceneContext {
  SceneConfig config;
  std::shared_ptr<const Body> body;
  std::optional<SubspaceArtifact> artifact;
  std::shared_ptr<const ReducedSpace> space;
  /// Reduced initial coordinates (mass-weighted least-squares projection).
  Eigen::VectorXd u0;
  /// Full-space initial displacement.
  Eigen::VectorXd x0_displacement;
  std::map<std::string, std::vector<int>> groups;
};

/// With `reduced` false no subspace is built (full-space runs).
SceneContext make_scene_context(const SceneConfig& config, bool reduced = true);

/// M-weighted least-squares reduced coordinates of a full displacement.
Eigen::VectorXd project_displacement(const ReducedSpace& space, const Eigen::VectorXd& d);

}  // namespace smfem
