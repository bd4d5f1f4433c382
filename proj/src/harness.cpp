#include "smfem/harness.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <variant>

#include <Eigen/Geometry>
#include <nlohmann/json.hpp>

#include "smfem/energy.hpp"
#include "smfem/full_space.hpp"

namespace smfem {

SolverKind parse_solver_kind(const std::string& name) {
  if (name == "mfem") return SolverKind::kMfem;
  if (name == "fem") return SolverKind::kFem;
  if (name == "full") return SolverKind::kFull;
  throw ConfigError("unknown solver \"" + name + "\" (expected mfem, fem or full)");
}

std::string to_string(SolverKind kind) {
  switch (kind) {
    case SolverKind::kMfem: return "mfem";
    case SolverKind::kFem: return "fem";
    case SolverKind::kFull: return "full";
  }
  return "?";
}

Eigen::VectorXd frame_positions(const SceneContext& ctx, const Eigen::VectorXd& u) {
  const Eigen::VectorXd rest = ctx.body->mesh.rest_vector();
  if (u.size() == rest.size() && (!ctx.space || ctx.space->dofs() != u.size())) return rest + u;
  if (ctx.space && u.size() == ctx.space->dofs()) return ctx.space->positions(u);
  throw ConfigError("frame dimension " + std::to_string(u.size()) + " fits neither the subspace nor the mesh");
}

SolverKind frame_kind(const SceneContext& ctx, Eigen::Index dim) {
  if (ctx.space && dim == ctx.space->dofs()) return SolverKind::kMfem;
  if (dim == 3 * ctx.body->mesh.num_vertices()) return SolverKind::kFull;
  throw ConfigError("frame dimension " + std::to_string(dim) + " fits neither the subspace nor the mesh");
}

Eigen::VectorXd initial_positions(const SceneContext& ctx, SolverKind kind) {
  if (kind == SolverKind::kFull) return ctx.body->mesh.rest_vector() + ctx.x0_displacement;
  return ctx.space->positions(ctx.u0);
}

namespace {

StepDiagnostics summarize(const StepResult& r) {
  StepDiagnostics d;
  d.iterations = static_cast<int>(r.iterations.size());
  d.converged = r.converged;
  for (const IterationDiagnostics& it : r.iterations) {
    d.newton_decrement.push_back(it.newton_decrement);
    d.alpha.push_back(it.alpha);
    d.gradient_norm.push_back(it.gradient_norm);
    d.line_search_warning = d.line_search_warning || it.line_search_failed;
  }
  if (!r.iterations.empty()) d.constraint_residual = r.iterations.back().constraint_residual;
  return d;
}

using AnySolver = std::variant<MfemSolver, FemSolver, FullSpaceSolver>;

}  // namespace

RunResult run_scene(const SceneContext& ctx, SolverKind kind, std::optional<int> steps) {
  const int n = steps.value_or(ctx.config.steps);
  if (n < 0) throw ConfigError("steps must be non-negative");
  if (kind != SolverKind::kFull && !ctx.space) throw ConfigError("scene context has no subspace");
  const TetMesh& mesh = ctx.body->mesh;
  RunResult result;

  SimState state;
  std::optional<MfemSolver> mfem;
  std::optional<FemSolver> fem;
  std::optional<FullSpaceSolver> full;
  switch (kind) {
    case SolverKind::kMfem:
      mfem.emplace(ctx.space, ctx.config.solver);
      state = make_initial_state(*ctx.space, ctx.u0);
      break;
    case SolverKind::kFem:
      fem.emplace(ctx.space, ctx.config.solver);
      state = make_initial_state(*ctx.space, ctx.u0);
      break;
    case SolverKind::kFull:
      full.emplace(ctx.body, ctx.config.solver);
      state = full->initial_state(ctx.x0_displacement);
      break;
  }

  for (int k = 0; k < n; ++k) {
    const ExternalLoads loads = scene_loads(ctx.config, mesh, state.time);
    StepResult r;
    try {
      if (mfem) r = mfem->step(state, loads);
      else if (fem) r = fem->step(state, loads);
      else r = full->step(state, loads);
    } catch (const SolverError& e) {
      result.metrics.error = "step " + std::to_string(k + 1) + ": " + e.what();
      break;
    } catch (const std::domain_error& e) {
      result.metrics.error = "step " + std::to_string(k + 1) + ": state diverged (" + e.what() + ")";
      break;
    }
    result.metrics.steps.push_back(summarize(r));
    state = std::move(r.state);
    result.frames.push_back({state.step_index, state.time, state.u});
    if (r.aborted) {
      result.metrics.error = "step " + std::to_string(k + 1) + ": " + r.message;
      break;
    }
  }
  result.metrics.frames = compute_frame_metrics(ctx, result.frames);
  return result;
}

double full_space_gradient_norm(const SceneContext& ctx, const Eigen::VectorXd& x,
                                const Eigen::VectorXd& x_prev, const Eigen::VectorXd& x_prev2,
                                double t) {
  const Body& body = *ctx.body;
  const SolverConfig& cfg = ctx.config.solver;
  const double h2 = cfg.dt * cfg.dt;
  const Eigen::VectorXd m = body.ops.mass_diagonal();
  const Eigen::VectorXd target = 2.0 * x_prev - x_prev2;
  Eigen::VectorXd g = m.cwiseProduct(x - target) / h2 + elastic_gradient(body, cfg.model, x);
  for (int v = 0; v < body.mesh.num_vertices(); ++v) g.segment<3>(3 * v) -= body.ops.vertex_mass[v] * cfg.gravity;
  for (const PointForce& p : scene_loads(ctx.config, body.mesh, t).forces) g.segment<3>(3 * p.vertex) -= p.force;
  for (int v : body.mesh.pinned_vertices) g.segment<3>(3 * v).setZero();
  return g.cwiseAbs().maxCoeff();
}

Eigen::Vector3d angular_momentum(const Body& body, const std::vector<int>& group,
                                 const Eigen::VectorXd& x, const Eigen::VectorXd& x_prev, double h) {
  double mass = 0.0;
  Eigen::Vector3d com = Eigen::Vector3d::Zero();
  for (int v : group) {
    mass += body.ops.vertex_mass[v];
    com += body.ops.vertex_mass[v] * x.segment<3>(3 * v);
  }
  com /= mass;
  Eigen::Vector3d L = Eigen::Vector3d::Zero();
  for (int v : group) {
    const Eigen::Vector3d vel = (x.segment<3>(3 * v) - x_prev.segment<3>(3 * v)) / h;
    L += body.ops.vertex_mass[v] * (x.segment<3>(3 * v) - com).cross(vel);
  }
  return L;
}

FrameMetrics compute_frame_metrics(const SceneContext& ctx, const std::vector<Frame>& frames) {
  FrameMetrics out;
  for (const auto& [name, members] : ctx.groups) out.angular_momentum[name];
  if (frames.empty()) return out;
  const double h = ctx.config.solver.dt;
  const int nv = ctx.body->mesh.num_vertices();
  const Eigen::VectorXd x0 = initial_positions(ctx, frame_kind(ctx, frames.front().u.size()));
  Eigen::VectorXd prev = x0;
  Eigen::VectorXd prev2 = x0;
  double accumulated = 0.0;
  for (const Frame& f : frames) {
    const Eigen::VectorXd x = frame_positions(ctx, f.u);
    out.step.push_back(f.step);
    out.time.push_back(f.time);
    out.gradient_norm.push_back(full_space_gradient_norm(ctx, x, prev, prev2, f.time - h));
    for (const auto& [name, members] : ctx.groups) {
      out.angular_momentum[name].push_back(angular_momentum(*ctx.body, members, x, prev, h));
    }
    for (int v = 0; v < nv; ++v) accumulated += (x.segment<3>(3 * v) - prev.segment<3>(3 * v)).norm();
    out.accumulated_displacement.push_back(accumulated);
    prev2 = std::move(prev);
    prev = x;
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'S', 'M', 'F', 'X'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("truncated frame file");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("truncated frame file");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

void export_frames(const std::vector<Frame>& frames, const std::filesystem::path& path, FrameFormat format,
                   double /*dt*/) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  if (format == FrameFormat::kBinary) {
    const std::uint32_t r = frames.empty() ? 0 : static_cast<std::uint32_t>(frames.front().u.size());
    out.write(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, r);
    put_u32(out, static_cast<std::uint32_t>(frames.size()));
    for (const Frame& f : frames) {
      if (f.u.size() != r) throw std::invalid_argument("frames differ in dimension");
      for (Eigen::Index i = 0; i < f.u.size(); ++i) put_f64(out, f.u[i]);
    }
  } else {
    for (const Frame& f : frames) {
      nlohmann::json j;
      j["step"] = f.step;
      j["time"] = f.time;
      j["u"] = std::vector<double>(f.u.data(), f.u.data() + f.u.size());
      out << j.dump() << '\n';
    }
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<Frame> import_frames(const std::filesystem::path& path, double dt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char head[4] = {0, 0, 0, 0};
  in.read(head, 4);
  const bool binary = in.gcount() == 4 && std::memcmp(head, kMagic, 4) == 0;
  std::vector<Frame> frames;
  if (binary) {
    const std::uint32_t version = get_u32(in);
    if (version != kVersion) throw std::runtime_error("unsupported frame file version");
    const std::uint32_t r = get_u32(in);
    const std::uint32_t count = get_u32(in);
    frames.resize(count);
    for (std::uint32_t k = 0; k < count; ++k) {
      frames[k].step = static_cast<int>(k) + 1;
      frames[k].time = (k + 1) * dt;
      frames[k].u.resize(r);
      for (std::uint32_t i = 0; i < r; ++i) frames[k].u[i] = get_f64(in);
    }
    return frames;
  }
  in.clear();
  in.seekg(0);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    Frame f;
    f.step = j.at("step").get<int>();
    f.time = j.at("time").get<double>();
    const auto u = j.at("u").get<std::vector<double>>();
    f.u = Eigen::Map<const Eigen::VectorXd>(u.data(), static_cast<Eigen::Index>(u.size()));
    frames.push_back(std::move(f));
  }
  return frames;
}

namespace {

void write_group_header(std::ostream& out, const FrameMetrics& m) {
  for (const auto& [name, series] : m.angular_momentum) {
    out << ',' << name << "_Lx," << name << "_Ly," << name << "_Lz," << name << "_L";
  }
}

void write_frame_columns(std::ostream& out, const FrameMetrics& m, size_t k) {
  out << m.gradient_norm[k] << ',' << m.accumulated_displacement[k];
  for (const auto& [name, series] : m.angular_momentum) {
    const Eigen::Vector3d& L = series[k];
    out << ',' << L.x() << ',' << L.y() << ',' << L.z() << ',' << L.norm();
  }
}

}  // namespace

void write_frame_metrics_csv(const FrameMetrics& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(17);
  out << "step,time,gradient_norm,accumulated_displacement";
  write_group_header(out, m);
  out << '\n';
  for (size_t k = 0; k < m.step.size(); ++k) {
    out << m.step[k] << ',' << m.time[k] << ',';
    write_frame_columns(out, m, k);
    out << '\n';
  }
}

void write_metrics_csv(const MetricsRecord& metrics, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const FrameMetrics& m = metrics.frames;
  out << std::setprecision(17);
  out << "step,time,iterations,converged,line_search_warning,newton_decrement,step_gradient_norm,alpha,"
         "constraint_residual,"
         "gradient_norm,accumulated_displacement";
  write_group_header(out, m);
  out << '\n';
  for (size_t k = 0; k < m.step.size(); ++k) {
    const StepDiagnostics& d = metrics.steps[k];
    out << m.step[k] << ',' << m.time[k] << ',' << d.iterations << ',' << d.converged << ','
        << d.line_search_warning << ',' << (d.newton_decrement.empty() ? 0.0 : d.newton_decrement.back())
        << ',' << (d.gradient_norm.empty() ? 0.0 : d.gradient_norm.back()) << ','
        << (d.alpha.empty() ? 0.0 : d.alpha.back()) << ',' << d.constraint_residual << ',';
    write_frame_columns(out, m, k);
    out << '\n';
  }
}

}  // namespace smfem
