#include "refshape/surface.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace refshape {

std::vector<int> LabeledSurface::indices_of(Region r) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < region.size(); ++i)
    if (region[i] == r) out.push_back(static_cast<int>(i));
  return out;
}

std::size_t LabeledSurface::count(Region r) const {
  return static_cast<std::size_t>(std::count(region.begin(), region.end(), r));
}

void validate(const LabeledSurface& s, int expected_landmarks) {
  const auto n = static_cast<long>(s.vertices.size());
  if (n == 0) throw ValidationError("surface has no vertices");
  if (static_cast<long>(s.region.size()) != n)
    throw ValidationError("region has " + std::to_string(s.region.size()) + " entries, expected " +
                          std::to_string(n));
  for (const auto& v : s.vertices)
    if (!v.allFinite()) throw ValidationError("non-finite vertex coordinate");
  for (auto r : s.region)
    if (r != Region::Midface && r != Region::Jaw) throw ValidationError("unknown region label");
  if (s.count(Region::Midface) == 0) throw ValidationError("no MIDFACE vertex");
  if (s.count(Region::Jaw) == 0) throw ValidationError("no JAW vertex");

  std::map<std::pair<int, int>, int> edge_use;
  for (std::size_t f = 0; f < s.faces.size(); ++f) {
    const auto& face = s.faces[f];
    for (int idx : face)
      if (idx < 0 || idx >= n)
        throw ValidationError("face " + std::to_string(f) + " references vertex " + std::to_string(idx) +
                              " of a " + std::to_string(n) + "-vertex mesh");
    if (face[0] == face[1] || face[1] == face[2] || face[0] == face[2])
      throw ValidationError("face " + std::to_string(f) + " is degenerate");
    for (int e = 0; e < 3; ++e) {
      int a = face[e], b = face[(e + 1) % 3];
      if (a > b) std::swap(a, b);
      if (++edge_use[{a, b}] > 2)
        throw ValidationError("non-manifold edge (" + std::to_string(a) + "," + std::to_string(b) + ")");
    }
  }
  for (int lm : s.landmarks)
    if (lm < 0 || lm >= n) throw ValidationError("landmark index " + std::to_string(lm) + " out of range");
  if (expected_landmarks >= 0 && static_cast<int>(s.landmarks.size()) != expected_landmarks)
    throw ValidationError("expected " + std::to_string(expected_landmarks) + " landmarks, found " +
                          std::to_string(s.landmarks.size()));
}

bool same_correspondence(const LabeledSurface& a, const LabeledSurface& b) {
  return a.vertices.size() == b.vertices.size() && a.region == b.region && a.landmarks == b.landmarks;
}

bool DisplacementField::finite() const {
  return std::all_of(vectors.begin(), vectors.end(), [](const Vec3& v) { return v.allFinite(); });
}

DisplacementField displacement_between(const LabeledSurface& from, const LabeledSurface& to) {
  if (from.size() != to.size()) throw std::invalid_argument("displacement_between: vertex count mismatch");
  DisplacementField d;
  d.vectors.resize(from.size());
  for (std::size_t i = 0; i < from.size(); ++i) d.vectors[i] = to.vertices[i] - from.vertices[i];
  return d;
}

LabeledSurface apply_displacement(const LabeledSurface& s, const DisplacementField& field) {
  if (field.size() != s.size()) throw std::invalid_argument("apply_displacement: field length mismatch");
  LabeledSurface out = s;
  for (std::size_t i = 0; i < s.size(); ++i) out.vertices[i] += field.vectors[i];
  return out;
}

NormalizationBox compute_box(const std::vector<Vec3>& points) {
  if (points.empty()) throw std::invalid_argument("compute_box: empty point set");
  NormalizationBox box{points.front(), points.front()};
  for (const auto& p : points) {
    box.min = box.min.cwiseMin(p);
    box.max = box.max.cwiseMax(p);
  }
  return box;
}

NormalizationBox compute_box(const LabeledSurface& s) { return compute_box(s.vertices); }

NormalizationBox union_box(const std::vector<LabeledSurface>& surfaces) {
  if (surfaces.empty()) throw std::invalid_argument("union_box: no surfaces");
  NormalizationBox box = compute_box(surfaces.front());
  for (const auto& s : surfaces) {
    auto b = compute_box(s);
    box.min = box.min.cwiseMin(b.min);
    box.max = box.max.cwiseMax(b.max);
  }
  return box;
}

Vec3 normalize_point(const Vec3& p, const NormalizationBox& box) {
  Vec3 out;
  for (int a = 0; a < 3; ++a) {
    const double extent = box.max[a] - box.min[a];
    out[a] = extent > 0.0 ? (p[a] - box.min[a]) / extent : 0.5;
  }
  return out;
}

Vec3 denormalize_point(const Vec3& p, const NormalizationBox& box) {
  Vec3 out;
  for (int a = 0; a < 3; ++a) {
    const double extent = box.max[a] - box.min[a];
    out[a] = extent > 0.0 ? box.min[a] + p[a] * extent : box.min[a];
  }
  return out;
}

LabeledSurface normalize(const LabeledSurface& s, const NormalizationBox& box) {
  if (!box.valid()) throw std::invalid_argument("normalize: box max < min");
  LabeledSurface out = s;
  for (auto& v : out.vertices) v = normalize_point(v, box);
  return out;
}

LabeledSurface denormalize(const LabeledSurface& s, const NormalizationBox& box) {
  if (!box.valid()) throw std::invalid_argument("denormalize: box max < min");
  LabeledSurface out = s;
  for (auto& v : out.vertices) v = denormalize_point(v, box);
  return out;
}

Adjacency one_ring(const LabeledSurface& s) {
  Adjacency adj(s.vertices.size());
  for (const auto& f : s.faces)
    for (int e = 0; e < 3; ++e) {
      const int a = f[e], b = f[(e + 1) % 3];
      if (a == b) continue;
      adj[static_cast<std::size_t>(a)].push_back(b);
      adj[static_cast<std::size_t>(b)].push_back(a);
    }
  for (auto& nbrs : adj) {
    std::sort(nbrs.begin(), nbrs.end());
    nbrs.erase(std::unique(nbrs.begin(), nbrs.end()), nbrs.end());
  }
  return adj;
}

std::vector<std::array<int, 2>> unique_edges(const std::vector<std::array<int, 3>>& faces) {
  std::vector<std::array<int, 2>> edges;
  edges.reserve(faces.size() * 3);
  for (const auto& f : faces)
    for (int e = 0; e < 3; ++e) {
      int a = f[e], b = f[(e + 1) % 3];
      if (a > b) std::swap(a, b);
      edges.push_back({a, b});
    }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

// ---------------------------------------------------------------- PLY I/O

std::string to_ply_string(const LabeledSurface& s) {
  std::string out;
  out.reserve(64 + s.vertices.size() * 48 + s.faces.size() * 24);
  out += "ply\nformat ascii 1.0\n";
  out += "element vertex " + std::to_string(s.vertices.size()) + "\n";
  out += "property double x\nproperty double y\nproperty double z\nproperty uchar region\n";
  out += "element face " + std::to_string(s.faces.size()) + "\n";
  out += "property list uchar int vertex_indices\nend_header\n";
  char buf[128];
  for (std::size_t i = 0; i < s.vertices.size(); ++i) {
    const auto& v = s.vertices[i];
    std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g %d\n", v.x(), v.y(), v.z(), static_cast<int>(s.region[i]));
    out += buf;
  }
  for (const auto& f : s.faces) {
    std::snprintf(buf, sizeof(buf), "3 %d %d %d\n", f[0], f[1], f[2]);
    out += buf;
  }
  return out;
}

namespace {

struct PlyHeader {
  long vertex_count = -1;
  long face_count = 0;
  std::vector<std::string> vertex_props;
};

PlyHeader parse_header(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "ply") throw ParseError("missing 'ply' magic");
  PlyHeader h;
  std::string current;
  bool ascii = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "end_header") {
      if (!ascii) throw ParseError("only 'format ascii 1.0' is supported");
      if (h.vertex_count < 0) throw ParseError("missing vertex element");
      return h;
    }
    if (key == "format") {
      std::string fmt;
      ls >> fmt;
      ascii = fmt == "ascii";
    } else if (key == "element") {
      long count = -1;
      ls >> current >> count;
      if (!ls || count < 0) throw ParseError("bad element line: " + line);
      if (current == "vertex") h.vertex_count = count;
      else if (current == "face") h.face_count = count;
      else throw ParseError("unsupported element '" + current + "'");
    } else if (key == "property") {
      if (current == "vertex") {
        std::string type, name;
        ls >> type >> name;
        if (type == "list") throw ParseError("list property on vertex element");
        h.vertex_props.push_back(name);
      }
    } else if (key != "comment" && key != "obj_info" && !key.empty()) {
      throw ParseError("unexpected header line: " + line);
    }
  }
  throw ParseError("unterminated header");
}

}  // namespace

LabeledSurface parse_ply_string(const std::string& text) {
  std::istringstream in(text);
  const PlyHeader h = parse_header(in);
  auto find = [&](const std::string& name) -> long {
    auto it = std::find(h.vertex_props.begin(), h.vertex_props.end(), name);
    return it == h.vertex_props.end() ? -1 : it - h.vertex_props.begin();
  };
  const long ix = find("x"), iy = find("y"), iz = find("z"), ir = find("region");
  if (ix < 0 || iy < 0 || iz < 0) throw ParseError("vertex element lacks x/y/z");
  if (ir < 0) throw ValidationError("vertex element lacks the 'region' property");

  LabeledSurface s;
  s.vertices.resize(static_cast<std::size_t>(h.vertex_count));
  s.region.resize(static_cast<std::size_t>(h.vertex_count));
  std::vector<double> row(h.vertex_props.size());
  std::string line;
  for (long i = 0; i < h.vertex_count; ++i) {
    if (!std::getline(in, line)) throw ParseError("file ends inside vertex block");
    std::istringstream ls(line);
    for (auto& value : row)
      if (!(ls >> value)) throw ParseError("malformed vertex line " + std::to_string(i));
    s.vertices[static_cast<std::size_t>(i)] = Vec3(row[static_cast<std::size_t>(ix)], row[static_cast<std::size_t>(iy)],
                                                   row[static_cast<std::size_t>(iz)]);
    const double r = row[static_cast<std::size_t>(ir)];
    if (r != 0.0 && r != 1.0) throw ValidationError("region label must be 0 or 1");
    s.region[static_cast<std::size_t>(i)] = r == 0.0 ? Region::Midface : Region::Jaw;
  }
  s.faces.resize(static_cast<std::size_t>(h.face_count));
  for (long f = 0; f < h.face_count; ++f) {
    if (!std::getline(in, line)) throw ParseError("file ends inside face block");
    std::istringstream ls(line);
    int n = 0;
    auto& face = s.faces[static_cast<std::size_t>(f)];
    if (!(ls >> n) || n != 3) throw ParseError("face " + std::to_string(f) + " is not a triangle");
    if (!(ls >> face[0] >> face[1] >> face[2])) throw ParseError("malformed face line " + std::to_string(f));
  }
  return s;
}

std::filesystem::path landmark_sidecar(const std::filesystem::path& ply_path) {
  auto p = ply_path;
  p.replace_extension(".json");
  return p;
}

LabeledSurface load_surface(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  LabeledSurface s = parse_ply_string(buf.str());

  const auto side = landmark_sidecar(path);
  std::ifstream js(side);
  if (!js) throw ParseError("missing landmark sidecar " + side.string());
  nlohmann::json j;
  try {
    js >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("bad landmark sidecar " + side.string() + ": " + e.what());
  }
  if (!j.contains("landmarks") || !j["landmarks"].is_array()) throw ParseError("sidecar lacks 'landmarks' array");
  for (const auto& v : j["landmarks"]) {
    if (!v.is_number_integer()) throw ParseError("landmark entries must be integers");
    s.landmarks.push_back(v.get<int>());
  }
  validate(s);
  return s;
}

void save_surface(const LabeledSurface& s, const std::filesystem::path& path) {
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << to_ply_string(s);
    if (!out) throw std::runtime_error("write failed: " + path.string());
  }
  std::ofstream js(landmark_sidecar(path), std::ios::binary);
  if (!js) throw std::runtime_error("cannot write " + landmark_sidecar(path).string());
  js << nlohmann::json{{"landmarks", s.landmarks}}.dump() << "\n";
  if (!js) throw std::runtime_error("write failed: " + landmark_sidecar(path).string());
}

}  // namespace refshape
