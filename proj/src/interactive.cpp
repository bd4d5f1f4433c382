#include "smfem/interactive.hpp"

#include <variant>

namespace smfem {

InteractiveSim::InteractiveSim(SceneContext ctx) : ctx_(std::move(ctx)), config_(ctx_.config.solver) {
  if (!ctx_.space || !ctx_.artifact) throw ConfigError("interactive simulation needs a subspace");
  surface_ = make_surface_view(ctx_.body->mesh, ctx_.artifact->W);
  rebuild_solvers();
  reset();
}

void InteractiveSim::rebuild_solvers() {
  mfem_ = std::make_unique<MfemSolver>(ctx_.space, config_);
  fem_ = std::make_unique<FemSolver>(ctx_.space, config_);
}

void InteractiveSim::reset() {
  state_ = make_initial_state(*ctx_.space, ctx_.u0);
}

void InteractiveSim::submit(const ClientMessage& message) {
  std::visit(
      [this](const auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, DragCommand>) {
          if (c.vertex >= static_cast<int>(surface_.vertex_ids.size())) {
            throw ProtocolError("drag vertex " + std::to_string(c.vertex) + " is not a surface vertex (" +
                                std::to_string(surface_.vertex_ids.size()) + " available)");
          }
          pending_drag_ = c;
          pending_release_ = false;
        } else if constexpr (std::is_same_v<T, ReleaseCommand>) {
          pending_drag_.reset();
          pending_release_ = true;
        } else if constexpr (std::is_same_v<T, ParamCommand>) {
          pending_iters_ = c.iters;
        } else {
          pending_kind_ = c.kind;
        }
      },
      message);
}

std::optional<std::string> InteractiveSim::step() {
  if (pending_release_) drag_.reset();
  if (pending_drag_) drag_ = pending_drag_;
  pending_release_ = false;
  pending_drag_.reset();
  if (pending_iters_ && *pending_iters_ != config_.max_iterations) {
    config_.max_iterations = *pending_iters_;
    rebuild_solvers();
  }
  pending_iters_.reset();
  if (pending_kind_) kind_ = *pending_kind_;
  pending_kind_.reset();

  const TetMesh& mesh = ctx_.body->mesh;
  ExternalLoads loads = scene_loads(ctx_.config, mesh, state_.time);
  if (drag_) {
    const int v = surface_.vertex_ids[drag_->vertex];
    const double k = drag_->stiffness.value_or(ctx_.config.service.drag_stiffness * ctx_.body->ops.vertex_mass[v]);
    loads.springs.push_back({v, drag_->target, k});
  }
  try {
    StepResult r = kind_ == SolverKind::kMfem ? mfem_->step(state_, loads) : fem_->step(state_, loads);
    if (r.aborted) {
      const int n = state_.step_index;
      reset();
      state_.step_index = n + 1;
      return r.message;
    }
    state_ = std::move(r.state);
  } catch (const SolverError& e) {
    const int n = state_.step_index;
    reset();
    state_.step_index = n + 1;
    return std::string(e.what());
  }
  return std::nullopt;
}

}  // namespace smfem
