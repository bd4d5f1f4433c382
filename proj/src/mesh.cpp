#include "smfem/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include <Eigen/LU>

namespace smfem {

Eigen::VectorXd TetMesh::rest_vector() const {
  Eigen::VectorXd x(3 * num_vertices());
  for (int i = 0; i < num_vertices(); ++i) x.segment<3>(3 * i) = rest_positions.row(i);
  return x;
}

double TetMesh::bbox_diagonal() const {
  if (num_vertices() == 0) return 0.0;
  const Eigen::RowVector3d lo = rest_positions.colwise().minCoeff();
  const Eigen::RowVector3d hi = rest_positions.colwise().maxCoeff();
  return (hi - lo).norm();
}

void TetMesh::set_pinned(std::vector<int> vertices) {
  for (int v : vertices) {
    if (v < 0 || v >= num_vertices()) {
      throw MeshError("pinned vertex " + std::to_string(v) + " index out of range");
    }
  }
  std::sort(vertices.begin(), vertices.end());
  vertices.erase(std::unique(vertices.begin(), vertices.end()), vertices.end());
  pinned_vertices = std::move(vertices);
}

double signed_volume(const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                     const Eigen::Vector3d& c, const Eigen::Vector3d& d) {
  Eigen::Matrix3d E;
  E << b - a, c - a, d - a;
  return E.determinant() / 6.0;
}

std::vector<Face> extract_surface(const Eigen::MatrixX4i& tets) {
  static constexpr int kFaces[4][3] = {{1, 2, 3}, {0, 3, 2}, {0, 1, 3}, {0, 2, 1}};
  struct Entry {
    int count = 0;
    int order = 0;
    Face face{};
  };
  std::map<std::array<int, 3>, Entry> table;
  int order = 0;
  for (Eigen::Index t = 0; t < tets.rows(); ++t) {
    for (const auto& f : kFaces) {
      Face face{tets(t, f[0]), tets(t, f[1]), tets(t, f[2])};
      std::array<int, 3> key = face;
      std::sort(key.begin(), key.end());
      auto& e = table[key];
      if (e.count++ == 0) {
        e.order = order++;
        e.face = face;
      }
    }
  }
  std::vector<std::pair<int, Face>> boundary;
  for (const auto& [key, e] : table) {
    if (e.count == 1) boundary.emplace_back(e.order, e.face);
  }
  std::sort(boundary.begin(), boundary.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<Face> faces;
  faces.reserve(boundary.size());
  for (const auto& [o, f] : boundary) faces.push_back(f);
  return faces;
}

TetMesh make_tet_mesh(Eigen::MatrixX3d vertices, Eigen::MatrixX4i tets,
                      std::vector<int> regions) {
  const Eigen::Index nv = vertices.rows();
  if (!vertices.allFinite()) throw MeshError("non-finite vertex coordinate");
  if (regions.empty()) regions.assign(tets.rows(), 0);
  if (static_cast<Eigen::Index>(regions.size()) != tets.rows()) {
    throw MeshError("region count does not match tet count");
  }
  TetMesh mesh;
  mesh.rest_positions = std::move(vertices);
  double diag = mesh.bbox_diagonal();
  const double min_volume = 1e-14 * diag * diag * diag;
  for (Eigen::Index t = 0; t < tets.rows(); ++t) {
    for (int k = 0; k < 4; ++k) {
      if (tets(t, k) < 0 || tets(t, k) >= nv) {
        throw MeshError("tet " + std::to_string(t) + ": vertex index " +
                        std::to_string(tets(t, k)) + " index out of range");
      }
    }
    const auto p = [&](int k) -> Eigen::Vector3d {
      return mesh.rest_positions.row(tets(t, k)).transpose();
    };
    double vol = signed_volume(p(0), p(1), p(2), p(3));
    if (std::abs(vol) < min_volume || !std::isfinite(vol)) {
      throw MeshError("degenerate tet " + std::to_string(t));
    }
    if (vol < 0) std::swap(tets(t, 0), tets(t, 1));
  }
  mesh.tets = std::move(tets);
  mesh.regions = std::move(regions);
  mesh.surface_faces = extract_surface(mesh.tets);
  return mesh;
}

namespace {

std::string strip_comments(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool comment = false;
  for (char c : text) {
    if (c == '#') comment = true;
    if (c == '\n') comment = false;
    if (!comment) out.push_back(c);
  }
  return out;
}

template <typename T>
T next_value(std::istringstream& in, const char* what) {
  T v{};
  if (!(in >> v)) throw MeshError(std::string("parse failure reading ") + what);
  return v;
}

}  // namespace

TetMesh parse_medit(std::string_view text) {
  std::istringstream in(strip_comments(text));
  std::vector<Eigen::Vector3d> verts;
  std::vector<Eigen::Vector4i> tets;
  std::vector<int> regions;
  // Sections we skip, with the number of integers per record.
  static const std::map<std::string, int> kSkipped = {
      {"Edges", 3},   {"Triangles", 4}, {"Quadrilaterals", 5}, {"Hexahedra", 9},
      {"Corners", 1}, {"Ridges", 1},    {"RequiredVertices", 1}, {"RequiredEdges", 1},
      {"Normals", 3}, {"Tangents", 3}};
  std::string key;
  bool saw_vertices = false;
  while (in >> key) {
    if (key == "MeshVersionFormatted" || key == "Dimension") {
      int v = next_value<int>(in, key.c_str());
      if (key == "Dimension" && v != 3) throw MeshError("only 3D meshes are supported");
    } else if (key == "Vertices") {
      const long n = next_value<long>(in, "vertex count");
      if (n < 0) throw MeshError("malformed section header: Vertices");
      verts.resize(n);
      for (long i = 0; i < n; ++i) {
        for (int d = 0; d < 3; ++d) verts[i][d] = next_value<double>(in, "vertex");
        next_value<long>(in, "vertex tag");
      }
      saw_vertices = true;
    } else if (key == "Tetrahedra") {
      const long n = next_value<long>(in, "tet count");
      if (n < 0) throw MeshError("malformed section header: Tetrahedra");
      for (long i = 0; i < n; ++i) {
        Eigen::Vector4i t;
        for (int k = 0; k < 4; ++k) t[k] = next_value<int>(in, "tet index") - 1;
        tets.push_back(t);
        regions.push_back(next_value<int>(in, "tet tag"));
      }
    } else if (key == "End") {
      break;
    } else if (auto it = kSkipped.find(key); it != kSkipped.end()) {
      const long n = next_value<long>(in, key.c_str());
      for (long i = 0; i < n * it->second; ++i) next_value<double>(in, key.c_str());
    } else {
      throw MeshError("malformed section header: " + key);
    }
  }
  if (!saw_vertices) throw MeshError("missing Vertices section");
  Eigen::MatrixX3d V(verts.size(), 3);
  for (size_t i = 0; i < verts.size(); ++i) V.row(i) = verts[i].transpose();
  Eigen::MatrixX4i T(tets.size(), 4);
  for (size_t i = 0; i < tets.size(); ++i) T.row(i) = tets[i].transpose();
  return make_tet_mesh(std::move(V), std::move(T), std::move(regions));
}

TetMesh parse_json_mesh(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("vertices") || !j.contains("tets")) {
    throw MeshError("JSON mesh needs \"vertices\" and \"tets\"");
  }
  try {
    const auto& jv = j.at("vertices");
    const auto& jt = j.at("tets");
    Eigen::MatrixX3d V(jv.size(), 3);
    for (size_t i = 0; i < jv.size(); ++i) {
      if (jv[i].size() != 3) throw MeshError("vertex " + std::to_string(i) + " needs 3 coordinates");
      for (int d = 0; d < 3; ++d) V(i, d) = jv[i][d].get<double>();
    }
    Eigen::MatrixX4i T(jt.size(), 4);
    for (size_t i = 0; i < jt.size(); ++i) {
      if (jt[i].size() != 4) throw MeshError("tet " + std::to_string(i) + " needs 4 indices");
      for (int k = 0; k < 4; ++k) T(i, k) = jt[i][k].get<int>();
    }
    std::vector<int> regions;
    if (j.contains("regions")) regions = j.at("regions").get<std::vector<int>>();
    TetMesh mesh = make_tet_mesh(std::move(V), std::move(T), std::move(regions));
    if (j.contains("pinned")) mesh.set_pinned(j.at("pinned").get<std::vector<int>>());
    return mesh;
  } catch (const nlohmann::json::exception& e) {
    throw MeshError(std::string("parse failure: ") + e.what());
  }
}

TetMesh load_mesh(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MeshError("cannot open mesh file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  if (path.extension() == ".json") {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(buf.str());
    } catch (const nlohmann::json::exception& e) {
      throw MeshError(std::string("parse failure: ") + e.what());
    }
    return parse_json_mesh(j);
  }
  return parse_medit(buf.str());
}

std::string to_medit(const TetMesh& mesh) {
  std::ostringstream out;
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << "MeshVersionFormatted 2\nDimension 3\nVertices\n" << mesh.num_vertices() << "\n";
  for (int i = 0; i < mesh.num_vertices(); ++i) {
    out << mesh.rest_positions(i, 0) << " " << mesh.rest_positions(i, 1) << " "
        << mesh.rest_positions(i, 2) << " 0\n";
  }
  out << "Tetrahedra\n" << mesh.num_tets() << "\n";
  for (int t = 0; t < mesh.num_tets(); ++t) {
    for (int k = 0; k < 4; ++k) out << mesh.tets(t, k) + 1 << " ";
    out << mesh.regions[t] << "\n";
  }
  out << "End\n";
  return out.str();
}

nlohmann::json to_json(const TetMesh& mesh) {
  nlohmann::json j;
  auto& jv = j["vertices"] = nlohmann::json::array();
  for (int i = 0; i < mesh.num_vertices(); ++i) {
    jv.push_back({mesh.rest_positions(i, 0), mesh.rest_positions(i, 1), mesh.rest_positions(i, 2)});
  }
  auto& jt = j["tets"] = nlohmann::json::array();
  for (int t = 0; t < mesh.num_tets(); ++t) {
    jt.push_back({mesh.tets(t, 0), mesh.tets(t, 1), mesh.tets(t, 2), mesh.tets(t, 3)});
  }
  j["regions"] = mesh.regions;
  if (!mesh.pinned_vertices.empty()) j["pinned"] = mesh.pinned_vertices;
  return j;
}

void save_mesh(const TetMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw MeshError("cannot write mesh file " + path.string());
  if (path.extension() == ".json") {
    out << to_json(mesh).dump();
  } else {
    out << to_medit(mesh);
  }
}

TetMesh make_voxel_mesh(const Eigen::Vector3i& cells, const Eigen::Vector3d& size,
                        const Eigen::Vector3d& origin,
                        const std::function<bool(const Eigen::Vector3d&)>& keep) {
  const Eigen::Vector3d h = size.cwiseQuotient(cells.cast<double>());
  const auto vid = [&](int i, int j, int k) {
    return i + (cells.x() + 1) * (j + (cells.y() + 1) * k);
  };
  // Kuhn split along the (0,0,0)-(1,1,1) diagonal; consistent across cells.
  static constexpr int kPerm[6][3] = {{1, 2, 4}, {1, 4, 2}, {2, 1, 4},
                                      {2, 4, 1}, {4, 1, 2}, {4, 2, 1}};
  std::vector<Eigen::Vector4i> tets;
  for (int k = 0; k < cells.z(); ++k) {
    for (int j = 0; j < cells.y(); ++j) {
      for (int i = 0; i < cells.x(); ++i) {
        const Eigen::Vector3d center =
            origin + Eigen::Vector3d((i + 0.5) * h.x(), (j + 0.5) * h.y(), (k + 0.5) * h.z());
        if (keep && !keep(center)) continue;
        const auto corner = [&](int bits) {
          return vid(i + (bits & 1), j + ((bits >> 1) & 1), k + ((bits >> 2) & 1));
        };
        for (const auto& p : kPerm) {
          tets.emplace_back(corner(0), corner(p[0]), corner(p[0] + p[1]), corner(7));
        }
      }
    }
  }
  const int n_grid = (cells.x() + 1) * (cells.y() + 1) * (cells.z() + 1);
  std::vector<int> remap(n_grid, -1);
  int nv = 0;
  for (auto& t : tets) {
    for (int q = 0; q < 4; ++q) {
      if (remap[t[q]] < 0) remap[t[q]] = nv++;
    }
  }
  // Renumber in grid order so vertex ids do not depend on tet traversal.
  nv = 0;
  for (int g = 0; g < n_grid; ++g) {
    if (remap[g] >= 0) remap[g] = nv++;
  }
  Eigen::MatrixX3d V(nv, 3);
  for (int k = 0; k <= cells.z(); ++k) {
    for (int j = 0; j <= cells.y(); ++j) {
      for (int i = 0; i <= cells.x(); ++i) {
        const int g = vid(i, j, k);
        if (remap[g] >= 0) {
          V.row(remap[g]) = (origin + Eigen::Vector3d(i * h.x(), j * h.y(), k * h.z())).transpose();
        }
      }
    }
  }
  Eigen::MatrixX4i T(tets.size(), 4);
  for (size_t t = 0; t < tets.size(); ++t) {
    for (int q = 0; q < 4; ++q) T(t, q) = remap[tets[t][q]];
  }
  return make_tet_mesh(std::move(V), std::move(T));
}

std::vector<int> vertices_in_box(const TetMesh& mesh, const Eigen::Vector3d& lo,
                                 const Eigen::Vector3d& hi) {
  std::vector<int> out;
  for (int i = 0; i < mesh.num_vertices(); ++i) {
    const Eigen::Vector3d p = mesh.rest_positions.row(i).transpose();
    if ((p.array() >= lo.array()).all() && (p.array() <= hi.array()).all()) out.push_back(i);
  }
  return out;
}

Eigen::Vector3d tet_centroid(const TetMesh& mesh, int t) {
  Eigen::Vector3d c = Eigen::Vector3d::Zero();
  for (int q = 0; q < 4; ++q) c += mesh.rest_positions.row(mesh.tets(t, q)).transpose();
  return c / 4.0;
}

}  // namespace smfem
