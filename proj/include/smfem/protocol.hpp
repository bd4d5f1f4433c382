#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "smfem/harness.hpp"
#include "smfem/mesh.hpp"

namespace smfem {

/// Malformed or disallowed client message.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Surface restriction of the skinning data sent to display clients.
/// Client-side vertex indices (faces, drag targets) are positions in
/// `vertex_ids`.
struct SurfaceView {
  int m = 0;
  std::vector<int> vertex_ids;
  Eigen::MatrixX3d rest;
  std::vector<Face> faces;
  Eigen::MatrixXd weights;  // |surface| x m
};

SurfaceView make_surface_view(const TetMesh& mesh, const Eigen::MatrixXd& W);

/// {"type":"init","m","rest","faces","weights","vertices"}; arrays are flat
/// and row-major.
std::string init_message(const SurfaceView& view);
/// {"type":"frame","step","u"} with u rounded to float32.
std::string frame_message(int step, const Eigen::VectorXd& u);
std::string error_message(std::string_view what);

struct DragCommand {
  int vertex = 0;  // surface-local
  Eigen::Vector3d target = Eigen::Vector3d::Zero();
  std::optional<double> stiffness;  // N/m; server default when absent
};
struct ReleaseCommand {};
struct ParamCommand {
  int iters = 1;
};
struct SolverCommand {
  SolverKind kind = SolverKind::kMfem;
};

using ClientMessage = std::variant<DragCommand, ReleaseCommand, ParamCommand, SolverCommand>;

/// Parses and validates one client text message.
ClientMessage parse_client_message(std::string_view text);

}  // namespace smfem
