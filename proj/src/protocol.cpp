#include "smfem/protocol.hpp"

#include <charconv>
#include <cmath>

#include <nlohmann/json.hpp>

namespace smfem {

SurfaceView make_surface_view(const TetMesh& mesh, const Eigen::MatrixXd& W) {
  if (W.rows() != mesh.num_vertices()) throw std::invalid_argument("weight rows differ from vertex count");
  SurfaceView view;
  view.m = static_cast<int>(W.cols());
  std::vector<int> local(mesh.num_vertices(), -1);
  for (const Face& f : mesh.surface_faces) {
    Face g;
    for (int k = 0; k < 3; ++k) {
      int& slot = local[f[k]];
      if (slot < 0) {
        slot = static_cast<int>(view.vertex_ids.size());
        view.vertex_ids.push_back(f[k]);
      }
      g[k] = slot;
    }
    view.faces.push_back(g);
  }
  const Eigen::Index n = static_cast<Eigen::Index>(view.vertex_ids.size());
  view.rest.resize(n, 3);
  view.weights.resize(n, W.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    view.rest.row(i) = mesh.rest_positions.row(view.vertex_ids[i]);
    view.weights.row(i) = W.row(view.vertex_ids[i]);
  }
  return view;
}

std::string init_message(const SurfaceView& view) {
  nlohmann::json j;
  j["type"] = "init";
  j["m"] = view.m;
  std::vector<double> rest;
  rest.reserve(3 * view.rest.rows());
  for (Eigen::Index i = 0; i < view.rest.rows(); ++i)
    for (int d = 0; d < 3; ++d) rest.push_back(view.rest(i, d));
  std::vector<int> faces;
  faces.reserve(3 * view.faces.size());
  for (const Face& f : view.faces) faces.insert(faces.end(), f.begin(), f.end());
  std::vector<double> weights;
  weights.reserve(view.weights.size());
  for (Eigen::Index i = 0; i < view.weights.rows(); ++i)
    for (Eigen::Index k = 0; k < view.weights.cols(); ++k) weights.push_back(view.weights(i, k));
  j["rest"] = rest;
  j["faces"] = faces;
  j["weights"] = weights;
  j["vertices"] = view.vertex_ids;
  return j.dump();
}

std::string frame_message(int step, const Eigen::VectorXd& u) {
  // Shortest round-trip text of each float32, so a float32 parser on the
  // client recovers exactly the rounded value.
  std::string out = "{\"type\":\"frame\",\"step\":" + std::to_string(step) + ",\"u\":[";
  char buf[32];
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const float v = static_cast<float>(u[i]);
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite frame value");
    if (i) out += ',';
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, res.ptr);
  }
  out += "]}";
  return out;
}

std::string error_message(std::string_view what) {
  return nlohmann::json{{"type", "error"}, {"message", std::string(what)}}.dump();
}

namespace {

const nlohmann::json& field(const nlohmann::json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) throw ProtocolError(std::string("missing field \"") + key + "\"");
  return *it;
}

double finite_number(const nlohmann::json& v, const char* key) {
  if (!v.is_number()) throw ProtocolError(std::string("field \"") + key + "\" must be a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw ProtocolError(std::string("field \"") + key + "\" must be finite");
  return x;
}

int integer(const nlohmann::json& v, const char* key) {
  if (!v.is_number_integer()) throw ProtocolError(std::string("field \"") + key + "\" must be an integer");
  return v.get<int>();
}

}  // namespace

ClientMessage parse_client_message(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ProtocolError("message must be a JSON object");
  const nlohmann::json& type = field(j, "type");
  if (!type.is_string()) throw ProtocolError("field \"type\" must be a string");
  const std::string kind = type.get<std::string>();

  if (kind == "drag") {
    DragCommand c;
    c.vertex = integer(field(j, "vertex"), "vertex");
    if (c.vertex < 0) throw ProtocolError("field \"vertex\" must be non-negative");
    const nlohmann::json& target = field(j, "target");
    if (!target.is_array() || target.size() != 3) throw ProtocolError("field \"target\" must be [x,y,z]");
    for (int d = 0; d < 3; ++d) c.target[d] = finite_number(target[d], "target");
    if (const auto it = j.find("stiffness"); it != j.end() && !it->is_null()) {
      c.stiffness = finite_number(*it, "stiffness");
      if (*c.stiffness <= 0.0) throw ProtocolError("field \"stiffness\" must be positive");
    }
    return c;
  }
  if (kind == "release") return ReleaseCommand{};
  if (kind == "param") {
    ParamCommand c;
    c.iters = integer(field(j, "iters"), "iters");
    if (c.iters < 1 || c.iters > 1000) throw ProtocolError("field \"iters\" must lie in [1, 1000]");
    return c;
  }
  if (kind == "solver") {
    const nlohmann::json& name = field(j, "name");
    if (!name.is_string()) throw ProtocolError("field \"name\" must be a string");
    const std::string s = name.get<std::string>();
    if (s == "mfem") return SolverCommand{SolverKind::kMfem};
    if (s == "fem") return SolverCommand{SolverKind::kFem};
    throw ProtocolError("unknown solver \"" + s + "\" (expected mfem or fem)");
  }
  throw ProtocolError("unknown message type \"" + kind + "\"");
}

}  // namespace smfem
