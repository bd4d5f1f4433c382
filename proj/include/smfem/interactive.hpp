#pragma once

#include <memory>
#include <optional>
#include <string>

#include "smfem/harness.hpp"
#include "smfem/protocol.hpp"
#include "smfem/solver.hpp"

namespace smfem {

/// Live reduced simulation driven by client commands. Commands are held
/// until the next call to step(), which applies them before solving.
class InteractiveSim {
 public:
  explicit InteractiveSim(SceneContext ctx);

  const SceneContext& context() const { return ctx_; }
  const SurfaceView& surface() const { return surface_; }
  const SimState& state() const { return state_; }
  SolverKind solver() const { return kind_; }
  int iterations() const { return config_.max_iterations; }
  /// Active drag, surface-local vertex index.
  const std::optional<DragCommand>& drag() const { return drag_; }

  /// Throws ProtocolError for a drag on a vertex outside the surface.
  void submit(const ClientMessage& message);

  /// Applies pending commands and advances one step. A solver failure
  /// resets the body to the scene's initial state and returns the message.
  std::optional<std::string> step();

 private:
  void rebuild_solvers();
  void reset();

  SceneContext ctx_;
  SurfaceView surface_;
  SolverConfig config_;
  SolverKind kind_ = SolverKind::kMfem;
  std::unique_ptr<MfemSolver> mfem_;
  std::unique_ptr<FemSolver> fem_;
  SimState state_;
  std::optional<DragCommand> drag_;

  std::optional<DragCommand> pending_drag_;
  bool pending_release_ = false;
  std::optional<int> pending_iters_;
  std::optional<SolverKind> pending_kind_;
};

}  // namespace smfem
