// Command-line front end: subspace precomputation, batch simulation,
// offline metrics and the live WebSocket service.

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "smfem/harness.hpp"
#include "smfem/service.hpp"
#include "smfem/stretch.hpp"
#include "smfem/subspace.hpp"

namespace fs = std::filesystem;
using namespace smfem;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitNumerical = 2;

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

int build_subspace(const fs::path& scene_path, const fs::path& out_override) {
  const SceneConfig config = load_scene(scene_path);
  const auto body = build_scene_body(config);
  const SubspaceArtifact artifact = build_scene_subspace(config, *body);
  fs::path out = out_override;
  if (out.empty()) out = config.subspace.artifact;
  if (out.empty()) out = config.output / "subspace.json";
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_subspace_artifact(artifact, out);
  std::cout << "subspace: m=" << artifact.m << " r=" << 12 * artifact.m
            << " cubature=" << artifact.cubature.size() << " -> " << out.string() << '\n';
  return 0;
}

int simulate(const fs::path& scene_path, const std::string& solver, std::optional<int> steps, fs::path out,
             const std::string& format) {
  const SceneConfig config = load_scene(scene_path);
  const SolverKind kind = parse_solver_kind(solver);
  const SceneContext ctx = make_scene_context(config, kind != SolverKind::kFull);
  if (out.empty()) out = config.output;
  fs::create_directories(out);

  const RunResult run = run_scene(ctx, kind, steps);
  const bool binary = format == "binary";
  const fs::path frames_path = out / (binary ? "frames.bin" : "frames.jsonl");
  export_frames(run.frames, frames_path, binary ? FrameFormat::kBinary : FrameFormat::kJsonl, config.solver.dt);
  write_metrics_csv(run.metrics, out / "metrics.csv");

  nlohmann::json summary;
  summary["solver"] = to_string(kind);
  summary["steps"] = run.frames.size();
  summary["dt"] = config.solver.dt;
  summary["dofs"] = run.frames.empty() ? 0 : run.frames.front().u.size();
  summary["frames"] = frames_path.filename().string();
  summary["error"] = run.metrics.error ? nlohmann::json(*run.metrics.error) : nlohmann::json();
  std::ofstream(out / "run.json") << summary.dump(2) << '\n';

  std::cout << to_string(kind) << ": " << run.frames.size() << " steps -> " << out.string() << '\n';
  if (run.metrics.error) {
    std::cerr << "numerical failure: " << *run.metrics.error << '\n';
    return kExitNumerical;
  }
  return 0;
}

int metrics(const fs::path& frames_path, const fs::path& scene_path, const fs::path& out) {
  const SceneConfig config = load_scene(scene_path);
  const std::vector<Frame> frames = import_frames(frames_path, config.solver.dt);
  const int nv = build_scene_mesh(config).num_vertices();
  const bool full = !frames.empty() && frames.front().u.size() == 3 * nv;
  const SceneContext ctx = make_scene_context(config, !full);
  const FrameMetrics m = compute_frame_metrics(ctx, frames);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_frame_metrics_csv(m, out);
  std::cout << frames.size() << " frames -> " << out.string() << '\n';
  return 0;
}

int serve(const fs::path& scene_path, const std::string& bind, std::optional<std::int64_t> steps, bool no_realtime,
          bool wait_for_client) {
  const SceneConfig config = load_scene(scene_path);
  ServiceOptions options;
  const auto colon = bind.rfind(':');
  if (colon == std::string::npos) throw ConfigError("--bind expects host:port");
  options.host = bind.substr(0, colon);
  try {
    const int port = std::stoi(bind.substr(colon + 1));
    if (port < 0 || port > 65535) throw std::out_of_range("port");
    options.port = static_cast<unsigned short>(port);
  } catch (const std::logic_error&) {
    throw ConfigError("invalid port in --bind \"" + bind + "\"");
  }
  options.rate_hz = config.service.rate_hz;
  options.realtime = config.service.realtime && !no_realtime;
  options.wait_for_client = wait_for_client;
  options.max_steps = steps;

  SimService service(make_scene_context(config, true), options);
  const unsigned short port = service.start();
  std::cout << "listening on ws://" << options.host << ':' << port << std::endl;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_interrupted && !service.wait_for(std::chrono::milliseconds(100))) {
  }
  service.stop();
  std::cout << service.steps_taken() << " steps served\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Subspace mixed-FEM elastodynamics"};
  app.require_subcommand(1);

  fs::path scene;
  fs::path out;

  auto* build = app.add_subcommand("build-subspace", "Compute skinning eigenmodes and cubature for a scene");
  build->add_option("scene", scene, "Scene JSON")->required()->check(CLI::ExistingFile);
  build->add_option("--out", out, "Artifact path (default: the scene's subspace.artifact)");

  std::string solver = "mfem";
  std::optional<int> steps;
  std::string format = "jsonl";
  auto* sim = app.add_subcommand("simulate", "Run a scene headless and write frames and metrics");
  sim->add_option("scene", scene, "Scene JSON")->required()->check(CLI::ExistingFile);
  sim->add_option("--solver", solver, "mfem, fem or full")->check(CLI::IsMember({"mfem", "fem", "full"}));
  sim->add_option("--steps", steps, "Number of steps (default: the scene's)")->check(CLI::NonNegativeNumber);
  sim->add_option("--out", out, "Output directory (default: the scene's output)");
  sim->add_option("--format", format, "Frame file format")->check(CLI::IsMember({"jsonl", "binary"}));

  fs::path frames_path;
  auto* met = app.add_subcommand("metrics", "Recompute per-frame metrics from exported frames");
  met->add_option("frames", frames_path, "Frame file (.jsonl or binary)")->required()->check(CLI::ExistingFile);
  met->add_option("scene", scene, "Scene JSON")->required()->check(CLI::ExistingFile);
  met->add_option("--out", out, "CSV path")->required();

  std::string bind = "127.0.0.1:8765";
  std::optional<std::int64_t> serve_steps;
  bool no_realtime = false;
  bool wait_for_client = false;
  auto* srv = app.add_subcommand("serve", "Stream a live simulation over WebSocket");
  srv->add_option("scene", scene, "Scene JSON")->required()->check(CLI::ExistingFile);
  srv->add_option("--bind", bind, "host:port (port 0 picks a free one)");
  srv->add_option("--steps", serve_steps, "Stop after this many steps");
  srv->add_flag("--no-realtime", no_realtime, "Step as fast as possible");
  srv->add_flag("--wait-for-client", wait_for_client, "Hold the clock until a client connects");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*build) return build_subspace(scene, out);
    if (*sim) return simulate(scene, solver, steps, out, format);
    if (*met) return metrics(frames_path, scene, out);
    if (*srv) return serve(scene, bind, serve_steps, no_realtime, wait_for_client);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const MeshError& e) {
    std::cerr << "mesh error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const MaterialError& e) {
    std::cerr << "material error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const SolverError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const EigenSolveError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  return 0;
}
