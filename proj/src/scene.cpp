#include "smfem/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <Eigen/Cholesky>
#include <Eigen/Geometry>

namespace smfem {

bool Box::contains(const Eigen::Vector3d& p) const {
  return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
}

std::vector<int> VertexSelector::resolve(const TetMesh& mesh) const {
  if (!vertices.empty()) {
    for (int v : vertices) {
      if (v < 0 || v >= mesh.num_vertices()) {
        throw ConfigError("vertex " + std::to_string(v) + " does not exist");
      }
    }
    std::vector<int> out = vertices;
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }
  if (box) return vertices_in_box(mesh, box->lo, box->hi);
  return {};
}

namespace {

using nlohmann::json;

Eigen::Vector3d vec3(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(std::string(what) + " must be a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Box parse_box(const json& j, const char* what) {
  if (!j.contains("min") || !j.contains("max")) {
    throw ConfigError(std::string(what) + " needs \"min\" and \"max\"");
  }
  Box b{vec3(j["min"], what), vec3(j["max"], what)};
  if ((b.lo.array() > b.hi.array()).any()) throw ConfigError(std::string(what) + " has min > max");
  return b;
}

VertexSelector parse_selector(const json& j, const char* what) {
  VertexSelector s;
  if (j.is_array()) {
    s.vertices = j.get<std::vector<int>>();
  } else if (j.contains("vertices")) {
    s.vertices = j["vertices"].get<std::vector<int>>();
  } else if (j.contains("min") || j.contains("box")) {
    s.box = parse_box(j.contains("box") ? j["box"] : j, what);
  } else {
    throw ConfigError(std::string(what) + " needs \"vertices\" or a box");
  }
  return s;
}

int parse_axis(const json& j) {
  if (j.is_number_integer()) {
    const int a = j.get<int>();
    if (a < 0 || a > 2) throw ConfigError("axis index must be 0, 1 or 2");
    return a;
  }
  const std::string s = j.get<std::string>();
  if (s == "x") return 0;
  if (s == "y") return 1;
  if (s == "z") return 2;
  throw ConfigError("unknown axis \"" + s + "\"");
}

Material parse_material(const json& j) {
  Material m;
  m.youngs = j.value("youngs", j.value("E", m.youngs));
  m.poisson = j.value("poisson", j.value("nu", m.poisson));
  m.density = j.value("density", j.value("rho", m.density));
  return m;
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* k) { return it.key() == k; })) {
      throw ConfigError("unknown key \"" + it.key() + "\" in " + where);
    }
  }
}

}  // namespace

SceneConfig parse_scene(const json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw ConfigError("scene must be a JSON object");
  check_keys(j,
             {"mesh", "voxel", "region_boxes", "material", "materials", "pinned", "subspace",
              "solver", "gravity", "pulls", "groups", "initial", "steps", "output", "service",
              "description"},
             "scene");
  SceneConfig c;
  try {
    auto resolve = [&](const std::string& p) {
      const std::filesystem::path path(p);
      return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
    };
    if (j.contains("mesh")) c.mesh_path = resolve(j["mesh"].get<std::string>());
    if (j.contains("voxel")) {
      const json& v = j["voxel"];
      VoxelSpec s;
      const auto cells = v.at("cells").get<std::vector<int>>();
      if (cells.size() != 3 || *std::min_element(cells.begin(), cells.end()) < 1) {
        throw ConfigError("voxel cells must be three positive integers");
      }
      s.cells = {cells[0], cells[1], cells[2]};
      s.size = vec3(v.at("size"), "voxel size");
      if (v.contains("origin")) s.origin = vec3(v["origin"], "voxel origin");
      for (const json& b : v.value("carve", json::array())) s.carve.push_back(parse_box(b, "carve box"));
      c.voxel = s;
    }
    if (c.mesh_path.empty() == !c.voxel) throw ConfigError("scene needs exactly one of \"mesh\" and \"voxel\"");

    for (const json& r : j.value("region_boxes", json::array())) {
      c.region_boxes.push_back({r.at("region").get<int>(), parse_box(r, "region box")});
    }
    if (j.contains("material")) c.materials[0] = parse_material(j["material"]);
    if (j.contains("materials")) {
      const json& m = j["materials"];
      if (m.is_object()) {
        for (auto it = m.begin(); it != m.end(); ++it) c.materials[std::stoi(it.key())] = parse_material(it.value());
      } else {
        for (const json& e : m) c.materials[e.at("region").get<int>()] = parse_material(e);
      }
    }
    if (c.materials.empty()) throw ConfigError("scene defines no material");
    if (j.contains("pinned")) c.pinned = parse_selector(j["pinned"], "pinned");

    if (j.contains("subspace")) {
      const json& s = j["subspace"];
      check_keys(s, {"modes", "cubature", "seed", "artifact"}, "subspace");
      c.subspace.modes = s.value("modes", c.subspace.modes);
      c.subspace.cubature = s.value("cubature", c.subspace.cubature);
      c.subspace.seed = s.value("seed", c.subspace.seed);
      if (s.contains("artifact")) c.subspace.artifact = resolve(s["artifact"].get<std::string>());
    }
    if (c.subspace.modes < 1) throw ConfigError("subspace modes must be >= 1");
    if (c.subspace.cubature < 0) throw ConfigError("cubature count must be non-negative");

    if (j.contains("solver")) {
      const json& s = j["solver"];
      check_keys(s,
                 {"dt", "iterations", "tol", "constraint_tol", "model", "gamma", "quad_refactor",
                  "armijo", "armijo_c", "hessian_projection", "max_backtracks", "shrink"},
                 "solver");
      SolverConfig& sc = c.solver;
      sc.dt = s.value("dt", sc.dt);
      sc.max_iterations = s.value("iterations", sc.max_iterations);
      sc.tol = s.value("tol", sc.tol);
      sc.constraint_tol = s.value("constraint_tol", sc.constraint_tol);
      if (s.contains("model")) sc.model = parse_material_model(s["model"].get<std::string>());
      sc.gamma = s.value("gamma", sc.gamma);
      sc.quad_refactor = s.value("quad_refactor", sc.quad_refactor);
      sc.armijo = s.value("armijo", sc.armijo);
      sc.armijo_c = s.value("armijo_c", sc.armijo_c);
      sc.hessian_projection = s.value("hessian_projection", sc.hessian_projection);
      sc.max_backtracks = s.value("max_backtracks", sc.max_backtracks);
      sc.shrink = s.value("shrink", sc.shrink);
    }
    if (j.contains("gravity")) c.solver.gravity = vec3(j["gravity"], "gravity");
    validate(c.solver);

    for (const json& p : j.value("pulls", json::array())) {
      TimedPull pull;
      pull.vertices = parse_selector(p.contains("vertices") ? p["vertices"] : p.value("box", p), "pull");
      pull.direction = vec3(p.at("direction"), "pull direction");
      if (pull.direction.norm() == 0.0) throw ConfigError("pull direction must be nonzero");
      pull.direction.normalize();
      pull.magnitude = p.at("magnitude").get<double>();
      pull.start = p.value("start", 0.0);
      pull.stop = p.value("stop", std::numeric_limits<double>::infinity());
      c.pulls.push_back(pull);
    }
    for (const json& g : j.value("groups", json::array())) {
      c.groups.push_back({g.at("name").get<std::string>(), parse_box(g, "group")});
    }
    if (j.contains("initial")) {
      const json& ini = j["initial"];
      check_keys(ini, {"twist", "bend"}, "initial");
      if (ini.contains("twist")) {
        const json& t = ini["twist"];
        TwistSpec s;
        s.axis = parse_axis(t.at("axis"));
        if (t.contains("center")) s.center = vec3(t["center"], "twist center");
        s.angle = t.at("angle").get<double>();
        s.from = t.at("from").get<double>();
        s.to = t.at("to").get<double>();
        if (s.from == s.to) throw ConfigError("twist needs from != to");
        c.twist = s;
      }
      if (ini.contains("bend")) {
        const json& b = ini["bend"];
        BendSpec s;
        s.axis = parse_axis(b.at("axis"));
        s.up = parse_axis(b.at("up"));
        if (s.axis == s.up) throw ConfigError("bend axis and up must differ");
        if (b.contains("center")) s.center = vec3(b["center"], "bend center");
        s.curvature = b.at("curvature").get<double>();
        c.bend = s;
      }
    }
    c.steps = j.value("steps", 0);
    if (c.steps < 0) throw ConfigError("steps must be non-negative");
    if (j.contains("output")) c.output = resolve(j["output"].get<std::string>());
    if (j.contains("service")) {
      const json& s = j["service"];
      check_keys(s, {"rate_hz", "realtime", "drag_stiffness"}, "service");
      c.service.rate_hz = s.value("rate_hz", c.service.rate_hz);
      c.service.realtime = s.value("realtime", c.service.realtime);
      c.service.drag_stiffness = s.value("drag_stiffness", c.service.drag_stiffness);
      if (!(c.service.rate_hz > 0.0)) throw ConfigError("service rate must be positive");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed scene: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

SceneConfig load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scene " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("malformed scene JSON: " + std::string(e.what()));
  }
  return parse_scene(j, path.parent_path());
}

TetMesh build_scene_mesh(const SceneConfig& c) {
  TetMesh mesh;
  if (c.voxel) {
    const VoxelSpec& v = *c.voxel;
    std::function<bool(const Eigen::Vector3d&)> keep;
    if (!v.carve.empty()) {
      keep = [&v](const Eigen::Vector3d& p) {
        return std::none_of(v.carve.begin(), v.carve.end(), [&](const Box& b) { return b.contains(p); });
      };
    }
    mesh = make_voxel_mesh(v.cells, v.size, v.origin, keep);
  } else {
    mesh = load_mesh(c.mesh_path);
  }
  if (mesh.num_tets() == 0) throw ConfigError("scene mesh has no tets");
  if (!c.region_boxes.empty()) {
    mesh.regions.resize(mesh.num_tets(), 0);
    for (int t = 0; t < mesh.num_tets(); ++t) {
      const Eigen::Vector3d p = tet_centroid(mesh, t);
      for (const RegionBox& rb : c.region_boxes) {
        if (rb.box.contains(p)) mesh.regions[t] = rb.region;
      }
    }
  }
  if (!c.pinned.empty()) mesh.set_pinned(c.pinned.resolve(mesh));
  return mesh;
}

std::shared_ptr<const Body> build_scene_body(const SceneConfig& c) {
  TetMesh mesh = build_scene_mesh(c);
  MaterialField materials;
  try {
    materials = MaterialField::from_regions(mesh, c.materials);
  } catch (const MaterialError& e) {
    throw ConfigError(e.what());
  }
  return Body::make(std::move(mesh), std::move(materials));
}

Eigen::VectorXd initial_displacement(const SceneConfig& c, const TetMesh& mesh) {
  const int nv = mesh.num_vertices();
  Eigen::VectorXd d = Eigen::VectorXd::Zero(3 * nv);
  if (!c.twist && !c.bend) return d;
  for (int i = 0; i < nv; ++i) {
    const Eigen::Vector3d X = mesh.rest_positions.row(i).transpose();
    Eigen::Vector3d p = X;
    if (c.twist) {
      const TwistSpec& t = *c.twist;
      const double s = std::clamp((X[t.axis] - t.from) / (t.to - t.from), 0.0, 1.0);
      const Eigen::AngleAxisd rot(t.angle * s, Eigen::Vector3d::Unit(t.axis));
      Eigen::Vector3d r = p - t.center;
      r[t.axis] = 0.0;
      p = p - r + rot * r;
    }
    if (c.bend && c.bend->curvature != 0.0) {
      const BendSpec& b = *c.bend;
      const double k = b.curvature;
      const double theta = (p[b.axis] - b.center[b.axis]) * k;
      const double radius = 1.0 / k - (p[b.up] - b.center[b.up]);
      Eigen::Vector3d q = p;
      q[b.axis] = b.center[b.axis] + radius * std::sin(theta);
      q[b.up] = b.center[b.up] + 1.0 / k - radius * std::cos(theta);
      p = q;
    }
    d.segment<3>(3 * i) = p - X;
  }
  for (int v : mesh.pinned_vertices) d.segment<3>(3 * v).setZero();
  return d;
}

SubspaceArtifact build_scene_subspace(const SceneConfig& c, const Body& body) {
  SubspaceArtifact a;
  const int free = body.mesh.num_vertices() - static_cast<int>(body.mesh.pinned_vertices.size());
  if (c.subspace.modes > free) throw ConfigError("more skinning modes than free vertices");
  SkinningSubspace sub = build_skinning_subspace(body, c.solver.model, c.subspace.modes);
  const int count = c.subspace.cubature > 0 ? c.subspace.cubature
                                            : recommend_cubature_count(c.subspace.modes, body.mesh.num_tets());
  if (count > body.mesh.num_tets()) throw ConfigError("more cubature points than tets");
  a.m = c.subspace.modes;
  a.cubature_count = count;
  a.seed = c.subspace.seed;
  a.model = to_string(c.solver.model);
  a.cubature = kmeans_cubature(sub.W, sub.gamma, body, count, c.subspace.seed);
  a.W = std::move(sub.W);
  a.gamma = std::move(sub.gamma);
  a.pinned = body.mesh.pinned_vertices;
  return a;
}

SubspaceArtifact obtain_scene_subspace(const SceneConfig& c, const Body& body) {
  if (!c.subspace.artifact.empty() && std::filesystem::exists(c.subspace.artifact)) {
    SubspaceArtifact a = load_subspace_artifact(c.subspace.artifact);
    const int count = c.subspace.cubature > 0 ? c.subspace.cubature
                                              : recommend_cubature_count(c.subspace.modes, body.mesh.num_tets());
    const bool matches = a.m == c.subspace.modes && a.cubature_count == count && a.seed == c.subspace.seed &&
                         a.model == to_string(c.solver.model) && a.W.rows() == body.mesh.num_vertices() &&
                         static_cast<int>(a.cubature.labels.size()) == body.mesh.num_tets() &&
                         a.pinned == body.mesh.pinned_vertices;
    if (matches) return a;
  }
  return build_scene_subspace(c, body);
}

ExternalLoads scene_loads(const SceneConfig& c, const TetMesh& mesh, double t) {
  ExternalLoads loads;
  for (const TimedPull& p : c.pulls) {
    if (t < p.start || t >= p.stop) continue;
    for (int v : p.vertices.resolve(mesh)) loads.forces.push_back({v, p.magnitude * p.direction});
  }
  return loads;
}

Eigen::VectorXd project_displacement(const ReducedSpace& space, const Eigen::VectorXd& d) {
  const Eigen::VectorXd m = space.body().ops.mass_diagonal();
  const Eigen::VectorXd rhs = space.basis().transpose() * m.cwiseProduct(d);
  return space.reduced_mass().ldlt().solve(rhs);
}

SceneContext make_scene_context(const SceneConfig& config, bool reduced) {
  SceneContext ctx;
  ctx.config = config;
  ctx.body = build_scene_body(config);
  const TetMesh& mesh = ctx.body->mesh;
  for (const VertexGroup& g : config.groups) {
    std::vector<int> members = vertices_in_box(mesh, g.box.lo, g.box.hi);
    if (members.empty()) throw ConfigError("group \"" + g.name + "\" selects no vertex");
    ctx.groups[g.name] = std::move(members);
  }
  for (const TimedPull& p : config.pulls) p.vertices.resolve(mesh);
  ctx.x0_displacement = initial_displacement(config, mesh);
  if (reduced) {
    ctx.artifact = obtain_scene_subspace(config, *ctx.body);
    const Eigen::MatrixXd B = lbs_jacobian(ctx.artifact->W, mesh.rest_positions);
    ctx.space = std::make_shared<const ReducedSpace>(ctx.body, B, ctx.artifact->cubature);
    ctx.u0 = project_displacement(*ctx.space, ctx.x0_displacement);
  }
  return ctx;
}

}  // namespace smfem
