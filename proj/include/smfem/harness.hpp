#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "smfem/scene.hpp"

namespace smfem {

enum class SolverKind { kMfem, kFem, kFull };

SolverKind parse_solver_kind(const std::string& name);
std::string to_string(SolverKind kind);

/// State after one step: reduced coordinates, or the 3|V| displacement for
/// full-space runs.
struct Frame {
  int step = 0;
  double time = 0.0;
  Eigen::VectorXd u;
};

struct StepDiagnostics {
  std::vector<double> newton_decrement;
  std::vector<double> alpha;
  std::vector<double> gradient_norm;
  /// |D(sbar - z)|_inf at the start of the last iteration.
  double constraint_residual = 0.0;
  int iterations = 0;
  bool converged = false;
  bool line_search_warning = false;
};

/// Per-frame quantities; all are functions of frames and scene alone.
struct FrameMetrics {
  std::vector<int> step;
  std::vector<double> time;
  std::vector<double> gradient_norm;
  std::map<std::string, std::vector<Eigen::Vector3d>> angular_momentum;
  std::vector<double> accumulated_displacement;
};

struct MetricsRecord {
  std::vector<StepDiagnostics> steps;
  FrameMetrics frames;
  /// Set when the run stopped early.
  std::optional<std::string> error;
};

struct RunResult {
  std::vector<Frame> frames;
  MetricsRecord metrics;
};

/// Runs config.steps steps (or `steps` when given). A solver failure ends
/// the run early with metrics.error set.
RunResult run_scene(const SceneContext& ctx, SolverKind kind, std::optional<int> steps = {});

/// Flattened positions X + B u (reduced) or X + u (full).
Eigen::VectorXd frame_positions(const SceneContext& ctx, const Eigen::VectorXd& u);
/// Positions of the state the run starts from.
Eigen::VectorXd initial_positions(const SceneContext& ctx, SolverKind kind);
/// Infers the solver family from the frame dimension.
SolverKind frame_kind(const SceneContext& ctx, Eigen::Index dim);

/// inf-norm over free coordinates of the full-space positions-only
/// incremental-potential gradient at x, with inertial target
/// x_prev + (x_prev - x_prev2) and the loads of the step starting at t.
double full_space_gradient_norm(const SceneContext& ctx, const Eigen::VectorXd& x,
                                const Eigen::VectorXd& x_prev, const Eigen::VectorXd& x_prev2,
                                double t);

/// sum_i m_i (x_i - c) x v_i over the group, v = (x - x_prev)/h, c the
/// group's center of mass at x.
Eigen::Vector3d angular_momentum(const Body& body, const std::vector<int>& group,
                                 const Eigen::VectorXd& x, const Eigen::VectorXd& x_prev, double h);

FrameMetrics compute_frame_metrics(const SceneContext& ctx, const std::vector<Frame>& frames);

enum class FrameFormat { kJsonl, kBinary };

void export_frames(const std::vector<Frame>& frames, const std::filesystem::path& path, FrameFormat format,
                   double dt = 0.0);
/// Format chosen from the content; binary files carry no times, so they
/// are restored as step * dt.
std::vector<Frame> import_frames(const std::filesystem::path& path, double dt = 0.0);

void write_metrics_csv(const MetricsRecord& metrics, const std::filesystem::path& path);
void write_frame_metrics_csv(const FrameMetrics& metrics, const std::filesystem::path& path);

}  // namespace smfem
