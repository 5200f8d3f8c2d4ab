#include "graspqp/geometry.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <string>

#include "binary_io.hpp"

namespace graspqp {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

Vec3 TriangleMesh::bbox_min() const {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  for (const auto& v : vertices) lo = lo.cwiseMin(v);
  return lo;
}

Vec3 TriangleMesh::bbox_max() const {
  Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());
  for (const auto& v : vertices) hi = hi.cwiseMax(v);
  return hi;
}

double TriangleMesh::triangle_area(std::size_t t) const {
  const auto& tri = triangles[t];
  return 0.5 * (vertices[tri[1]] - vertices[tri[0]]).cross(vertices[tri[2]] - vertices[tri[0]]).norm();
}

Vec3 TriangleMesh::triangle_normal(std::size_t t) const {
  const auto& tri = triangles[t];
  const Vec3 n = (vertices[tri[1]] - vertices[tri[0]]).cross(vertices[tri[2]] - vertices[tri[0]]);
  const double len = n.norm();
  return len > 0.0 ? Vec3(n / len) : Vec3::Zero();
}

void validate_mesh(const TriangleMesh& mesh) {
  if (mesh.vertices.empty() || mesh.triangles.empty()) throw InputError("mesh is empty");
  const int n = static_cast<int>(mesh.vertices.size());
  for (const auto& tri : mesh.triangles) {
    for (int idx : tri) {
      if (idx < 0 || idx >= n) throw InputError("triangle index out of range");
    }
  }
  if (mesh.normals.size() != mesh.vertices.size()) throw InputError("normal count mismatch");
  for (const auto& nrm : mesh.normals) {
    if (std::abs(nrm.norm() - 1.0) > 1e-6) throw InputError("vertex normal is not unit length");
  }
}

void recompute_vertex_normals(TriangleMesh& mesh) {
  std::vector<Vec3> acc(mesh.vertices.size(), Vec3::Zero());
  for (const auto& tri : mesh.triangles) {
    // Cross product length is twice the area, so this is area weighted.
    const Vec3 n = (mesh.vertices[tri[1]] - mesh.vertices[tri[0]])
                       .cross(mesh.vertices[tri[2]] - mesh.vertices[tri[0]]);
    for (int idx : tri) acc[idx] += n;
  }
  Vec3 centroid = Vec3::Zero();
  for (const auto& v : mesh.vertices) centroid += v;
  centroid /= static_cast<double>(std::max<std::size_t>(1, mesh.vertices.size()));

  mesh.normals.resize(mesh.vertices.size());
  for (std::size_t i = 0; i < acc.size(); ++i) {
    Vec3 n = acc[i];
    if (n.norm() < 1e-300) n = mesh.vertices[i] - centroid;
    if (n.norm() < 1e-300) n = Vec3::UnitZ();
    mesh.normals[i] = n.normalized();
  }
}

namespace {

bool parse_double(std::string_view token, double& out) {
  // std::from_chars for double is available in libstdc++ 11.
  const char* first = token.data();
  const char* last = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

int parse_face_index(std::string_view token, int vertex_count) {
  const auto slash = token.find('/');
  const std::string_view head = token.substr(0, slash);
  int value = 0;
  auto [ptr, ec] = std::from_chars(head.data(), head.data() + head.size(), value);
  if (ec != std::errc() || ptr != head.data() + head.size() || value == 0) {
    throw InputError("OBJ: bad face index '" + std::string(token) + "'");
  }
  const int idx = value > 0 ? value - 1 : vertex_count + value;
  if (idx < 0 || idx >= vertex_count) throw InputError("OBJ: face index out of range");
  return idx;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

}  // namespace

TriangleMesh parse_obj(std::string_view text) {
  TriangleMesh mesh;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const auto tokens = split_ws(line);
    if (tokens.empty()) {
      if (end == text.size()) break;
      continue;
    }
    if (tokens[0] == "v") {
      if (tokens.size() < 4) throw InputError("OBJ line " + std::to_string(line_no) + ": short vertex");
      Vec3 v;
      for (int a = 0; a < 3; ++a) {
        if (!parse_double(tokens[a + 1], v[a])) {
          throw InputError("OBJ line " + std::to_string(line_no) + ": bad coordinate");
        }
      }
      if (!v.allFinite()) throw InputError("OBJ: non-finite vertex");
      mesh.vertices.push_back(v);
    } else if (tokens[0] == "f") {
      if (tokens.size() < 4) throw InputError("OBJ line " + std::to_string(line_no) + ": short face");
      const int nv = static_cast<int>(mesh.vertices.size());
      std::vector<int> poly;
      for (std::size_t t = 1; t < tokens.size(); ++t) poly.push_back(parse_face_index(tokens[t], nv));
      for (std::size_t t = 1; t + 1 < poly.size(); ++t) {
        mesh.triangles.push_back({poly[0], poly[t], poly[t + 1]});
      }
    }
    if (end == text.size()) break;
  }
  if (mesh.vertices.empty() || mesh.triangles.empty()) {
    throw InputError("OBJ: no vertices or faces");
  }
  const double diag = (mesh.bbox_max() - mesh.bbox_min()).norm();
  bool any_area = false;
  for (std::size_t t = 0; t < mesh.triangles.size() && !any_area; ++t) {
    any_area = mesh.triangle_area(t) > 1e-14 * diag * diag;
  }
  if (!any_area) throw InputError("OBJ: mesh has only zero-area triangles");
  recompute_vertex_normals(mesh);
  validate_mesh(mesh);
  return mesh;
}

TriangleMesh load_mesh(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open mesh file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_obj(buf.str());
}

void write_obj(const TriangleMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out.precision(17);
  for (const auto& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& t : mesh.triangles) out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
}

TriangleMesh make_icosphere(double radius, int subdivisions) {
  TriangleMesh mesh;
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  mesh.vertices = {{-1, phi, 0}, {1, phi, 0},  {-1, -phi, 0}, {1, -phi, 0}, {0, -1, phi}, {0, 1, phi},
                   {0, -1, -phi}, {0, 1, -phi}, {phi, 0, -1},  {phi, 0, 1},  {-phi, 0, -1}, {-phi, 0, 1}};
  for (auto& v : mesh.vertices) v.normalize();
  mesh.triangles = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                    {11, 10, 2}, {10, 7, 6}, {7, 1, 8},   {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                    {3, 8, 9},   {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> midpoints;
    auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      if (auto it = midpoints.find(key); it != midpoints.end()) return it->second;
      mesh.vertices.push_back((mesh.vertices[a] + mesh.vertices[b]).normalized());
      const int idx = static_cast<int>(mesh.vertices.size()) - 1;
      midpoints.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(mesh.triangles.size() * 4);
    for (const auto& t : mesh.triangles) {
      const int ab = midpoint(t[0], t[1]);
      const int bc = midpoint(t[1], t[2]);
      const int ca = midpoint(t[2], t[0]);
      next.push_back({t[0], ab, ca});
      next.push_back({t[1], bc, ab});
      next.push_back({t[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    mesh.triangles = std::move(next);
  }
  for (auto& v : mesh.vertices) v *= radius;
  recompute_vertex_normals(mesh);
  return mesh;
}

TriangleMesh make_box(const Vec3& extents) {
  TriangleMesh mesh;
  const Vec3 h = 0.5 * extents;
  for (int i = 0; i < 8; ++i) {
    mesh.vertices.emplace_back((i & 1) ? h.x() : -h.x(), (i & 2) ? h.y() : -h.y(), (i & 4) ? h.z() : -h.z());
  }
  mesh.triangles = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
                    {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
  recompute_vertex_normals(mesh);
  return mesh;
}

TriangleMesh normalize_object_scale(const TriangleMesh& mesh) {
  if (mesh.scale_normalized) return mesh;
  constexpr double kInitialScale = 0.08;
  constexpr double kMaxSmallestAxis = 0.08;
  constexpr double kMinLargestAxis = 0.07;

  const Vec3 ext = mesh.extents();
  if (!(ext.minCoeff() > 0.0) || !ext.allFinite()) throw InputError("mesh bounding box has zero extent");

  double scale = kInitialScale;
  const Vec3 scaled = ext * scale;
  if (scaled.minCoeff() > kMaxSmallestAxis) {
    scale *= kMaxSmallestAxis / scaled.minCoeff();
  } else if (scaled.maxCoeff() < kMinLargestAxis) {
    scale *= kMinLargestAxis / scaled.maxCoeff();
  }
  TriangleMesh out = mesh;
  for (auto& v : out.vertices) v *= scale;
  out.scale_normalized = true;
  return out;
}

Vec3 center_of_mass(const TriangleMesh& mesh) {
  double volume = 0.0;
  Vec3 moment = Vec3::Zero();
  for (const auto& t : mesh.triangles) {
    const Vec3& a = mesh.vertices[t[0]];
    const Vec3& b = mesh.vertices[t[1]];
    const Vec3& c = mesh.vertices[t[2]];
    const double v = a.dot(b.cross(c)) / 6.0;
    volume += v;
    moment += v * (a + b + c) / 4.0;
  }
  const double scale = mesh.extents().maxCoeff();
  if (std::abs(volume) > 1e-9 * scale * scale * scale) return moment / volume;

  double area = 0.0;
  Vec3 acc = Vec3::Zero();
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const double a = mesh.triangle_area(t);
    const auto& tri = mesh.triangles[t];
    acc += a * (mesh.vertices[tri[0]] + mesh.vertices[tri[1]] + mesh.vertices[tri[2]]) / 3.0;
    area += a;
  }
  return area > 0.0 ? Vec3(acc / area) : Vec3::Zero();
}

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c,
                               Vec3* barycentric) {
  // Voronoi-region walk (Ericson, Real-Time Collision Detection 5.1.5).
  auto result = [&](double u, double v, double w) {
    if (barycentric) *barycentric = Vec3(u, v, w);
    return Vec3(u * a + v * b + w * c);
  };
  const Vec3 ab = b - a;
  const Vec3 ac = c - a;
  const Vec3 ap = p - a;
  const double d1 = ab.dot(ap);
  const double d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return result(1, 0, 0);

  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp);
  const double d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return result(0, 1, 0);

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    const double v = d1 / (d1 - d3);
    return result(1 - v, v, 0);
  }

  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp);
  const double d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return result(0, 0, 1);

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    const double w = d2 / (d2 - d6);
    return result(1 - w, 0, w);
  }

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return result(0, 1 - w, w);
  }

  const double denom = va + vb + vc;
  if (std::abs(denom) < 1e-300) return result(1, 0, 0);  // degenerate triangle
  const double v = vb / denom;
  const double w = vc / denom;
  return result(1 - v - w, v, w);
}

TriangleBvh::TriangleBvh(const TriangleMesh& mesh) : mesh_(&mesh) {
  order_.resize(mesh.triangles.size());
  std::iota(order_.begin(), order_.end(), 0);
  nodes_.reserve(2 * order_.size());
  build(0, static_cast<int>(order_.size()));
}

int TriangleBvh::build(int begin, int end) {
  const int index = static_cast<int>(nodes_.size());
  nodes_.emplace_back();
  Eigen::AlignedBox3d box;
  Eigen::AlignedBox3d centroids;
  for (int i = begin; i < end; ++i) {
    const auto& t = mesh_->triangles[order_[i]];
    Vec3 centroid = Vec3::Zero();
    for (int v : t) {
      box.extend(mesh_->vertices[v]);
      centroid += mesh_->vertices[v];
    }
    centroids.extend(Vec3(centroid / 3.0));
  }
  nodes_[index].box = box;
  nodes_[index].begin = begin;
  nodes_[index].end = end;
  if (end - begin <= 4) return index;

  int axis = 0;
  centroids.sizes().maxCoeff(&axis);
  const int mid = (begin + end) / 2;
  auto centroid_coord = [&](int tri) {
    const auto& t = mesh_->triangles[tri];
    return mesh_->vertices[t[0]][axis] + mesh_->vertices[t[1]][axis] + mesh_->vertices[t[2]][axis];
  };
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int a, int b) { return centroid_coord(a) < centroid_coord(b); });
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[index].left = left;
  nodes_[index].right = right;
  return index;
}

void TriangleBvh::query(int node_index, const Vec3& p, Hit& best) const {
  const Node& node = nodes_[node_index];
  if (node.left < 0) {
    for (int i = node.begin; i < node.end; ++i) {
      const auto& t = mesh_->triangles[order_[i]];
      Vec3 bary;
      const Vec3 q = closest_point_on_triangle(p, mesh_->vertices[t[0]], mesh_->vertices[t[1]],
                                               mesh_->vertices[t[2]], &bary);
      const double d = (q - p).norm();
      if (d < best.distance) {
        best.distance = d;
        best.point = q;
        best.triangle = order_[i];
        best.barycentric = bary;
      }
    }
    return;
  }
  const double dl = nodes_[node.left].box.exteriorDistance(p);
  const double dr = nodes_[node.right].box.exteriorDistance(p);
  const int first = dl <= dr ? node.left : node.right;
  const int second = dl <= dr ? node.right : node.left;
  const double d_first = std::min(dl, dr);
  const double d_second = std::max(dl, dr);
  if (d_first < best.distance) query(first, p, best);
  if (d_second < best.distance) query(second, p, best);
}

TriangleBvh::Hit TriangleBvh::closest(const Vec3& p) const {
  Hit best;
  best.distance = std::numeric_limits<double>::infinity();
  if (!nodes_.empty()) query(0, p, best);
  return best;
}

double brute_force_distance(const TriangleMesh& mesh, const Vec3& p) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& t : mesh.triangles) {
    const Vec3 q = closest_point_on_triangle(p, mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
    best = std::min(best, (q - p).norm());
  }
  return best;
}

bool is_closed_manifold(const TriangleMesh& mesh) {
  std::map<std::pair<int, int>, int> edge_count;
  for (const auto& t : mesh.triangles) {
    for (int e = 0; e < 3; ++e) {
      ++edge_count[std::minmax(t[e], t[(e + 1) % 3])];
    }
  }
  return std::all_of(edge_count.begin(), edge_count.end(), [](const auto& kv) { return kv.second == 2; });
}

double winding_number(const TriangleMesh& mesh, const Vec3& p) {
  // Sum of signed solid angles (Van Oosterom and Strackee).
  double total = 0.0;
  for (const auto& t : mesh.triangles) {
    const Vec3 a = mesh.vertices[t[0]] - p;
    const Vec3 b = mesh.vertices[t[1]] - p;
    const Vec3 c = mesh.vertices[t[2]] - p;
    const double la = a.norm();
    const double lb = b.norm();
    const double lc = c.norm();
    const double num = a.dot(b.cross(c));
    const double den = la * lb * lc + a.dot(b) * lc + b.dot(c) * la + c.dot(a) * lb;
    total += 2.0 * std::atan2(num, den);
  }
  return total / (4.0 * M_PI);
}

double default_sdf_spacing(const TriangleMesh& mesh) { return mesh.extents().maxCoeff() / 96.0; }

namespace {

constexpr int kSdfMarginCells = 3;

// Inside/outside by ray parity along one grid axis. Rays run along `axis`
// through every grid row, jittered off the lattice to avoid edge hits.
std::vector<std::uint8_t> parity_inside(const TriangleMesh& mesh, const SdfGrid& grid, int axis) {
  const int a1 = (axis + 1) % 3;
  const int a2 = (axis + 2) % 3;
  const int n0 = static_cast<int>(grid.dims[axis]);
  const int n1 = static_cast<int>(grid.dims[a1]);
  const int n2 = static_cast<int>(grid.dims[a2]);
  const double jitter1 = grid.spacing * 1.4142135623e-5;
  const double jitter2 = grid.spacing * 1.7320508075e-5;

  std::vector<std::vector<double>> crossings(static_cast<std::size_t>(n1) * n2);
  for (const auto& t : mesh.triangles) {
    const Vec3& A = mesh.vertices[t[0]];
    const Vec3& B = mesh.vertices[t[1]];
    const Vec3& C = mesh.vertices[t[2]];
    const double lo1 = std::min({A[a1], B[a1], C[a1]});
    const double hi1 = std::max({A[a1], B[a1], C[a1]});
    const double lo2 = std::min({A[a2], B[a2], C[a2]});
    const double hi2 = std::max({A[a2], B[a2], C[a2]});
    const int j0 = std::max(0, static_cast<int>(std::floor((lo1 - grid.origin[a1]) / grid.spacing)));
    const int j1 = std::min(n1 - 1, static_cast<int>(std::ceil((hi1 - grid.origin[a1]) / grid.spacing)));
    const int k0 = std::max(0, static_cast<int>(std::floor((lo2 - grid.origin[a2]) / grid.spacing)));
    const int k1 = std::min(n2 - 1, static_cast<int>(std::ceil((hi2 - grid.origin[a2]) / grid.spacing)));
    // 2D barycentric setup in the (a1, a2) plane.
    const double x0 = A[a1], y0 = A[a2];
    const double ex1 = B[a1] - x0, ey1 = B[a2] - y0;
    const double ex2 = C[a1] - x0, ey2 = C[a2] - y0;
    const double det = ex1 * ey2 - ex2 * ey1;
    if (std::abs(det) < 1e-300) continue;
    for (int k = k0; k <= k1; ++k) {
      const double y = grid.origin[a2] + k * grid.spacing + jitter2;
      for (int j = j0; j <= j1; ++j) {
        const double x = grid.origin[a1] + j * grid.spacing + jitter1;
        const double px = x - x0, py = y - y0;
        const double u = (px * ey2 - ex2 * py) / det;
        const double v = (ex1 * py - px * ey1) / det;
        if (u < 0.0 || v < 0.0 || u + v > 1.0) continue;
        const double s = A[axis] + u * (B[axis] - A[axis]) + v * (C[axis] - A[axis]);
        crossings[static_cast<std::size_t>(j) + static_cast<std::size_t>(n1) * k].push_back(s);
      }
    }
  }

  std::vector<std::uint8_t> inside(grid.values.size(), 0);
  std::array<int, 3> idx{};
  for (int k = 0; k < n2; ++k) {
    for (int j = 0; j < n1; ++j) {
      auto& xs = crossings[static_cast<std::size_t>(j) + static_cast<std::size_t>(n1) * k];
      std::sort(xs.begin(), xs.end());
      std::size_t passed = 0;
      for (int i = 0; i < n0; ++i) {
        const double s = grid.origin[axis] + i * grid.spacing;
        while (passed < xs.size() && xs[passed] < s) ++passed;
        idx[axis] = i;
        idx[a1] = j;
        idx[a2] = k;
        const std::size_t flat = static_cast<std::size_t>(idx[0]) +
                                 grid.dims[0] * (static_cast<std::size_t>(idx[1]) +
                                                 grid.dims[1] * static_cast<std::size_t>(idx[2]));
        inside[flat] = static_cast<std::uint8_t>(passed % 2);
      }
    }
  }
  return inside;
}

}  // namespace

SdfGrid build_sdf_grid(const TriangleMesh& mesh, double spacing) {
  validate_mesh(mesh);
  const Vec3 lo = mesh.bbox_min();
  const Vec3 hi = mesh.bbox_max();
  if (!(spacing > 0.0)) throw std::invalid_argument("SDF spacing must be positive");
  if (spacing > (hi - lo).minCoeff() / 8.0 + 1e-15) {
    throw std::invalid_argument("SDF spacing must be at most the smallest bbox axis / 8");
  }

  SdfGrid grid;
  grid.spacing = spacing;
  grid.origin = lo - Vec3::Constant(kSdfMarginCells * spacing);
  for (int a = 0; a < 3; ++a) {
    const double span = hi[a] - lo[a] + 2.0 * kSdfMarginCells * spacing;
    grid.dims[a] = static_cast<std::uint32_t>(std::ceil(span / spacing - 1e-9)) + 1;
  }
  const std::size_t total = static_cast<std::size_t>(grid.dims[0]) * grid.dims[1] * grid.dims[2];
  grid.values.assign(total, 0.0f);

  const TriangleBvh bvh(mesh);
  const bool closed = is_closed_manifold(mesh);
  grid.sign_from_heuristic = !closed;

  std::array<std::vector<std::uint8_t>, 3> votes;
  if (closed) {
    for (int axis = 0; axis < 3; ++axis) votes[axis] = parity_inside(mesh, grid, axis);
  }

  for (std::uint32_t k = 0; k < grid.dims[2]; ++k) {
    for (std::uint32_t j = 0; j < grid.dims[1]; ++j) {
      for (std::uint32_t i = 0; i < grid.dims[0]; ++i) {
        const Vec3 p = grid.origin + spacing * Vec3(i, j, k);
        const std::size_t flat = i + grid.dims[0] * (j + static_cast<std::size_t>(grid.dims[1]) * k);
        const TriangleBvh::Hit hit = bvh.closest(p);
        bool inside = false;
        if (closed) {
          const int count = votes[0][flat] + votes[1][flat] + votes[2][flat];
          if (count == 0 || count == 3) {
            inside = count == 3;
          } else {
            inside = winding_number(mesh, p) > 0.5;
          }
        } else {
          const auto& t = mesh.triangles[hit.triangle];
          const Vec3 n = hit.barycentric[0] * mesh.normals[t[0]] + hit.barycentric[1] * mesh.normals[t[1]] +
                         hit.barycentric[2] * mesh.normals[t[2]];
          inside = (p - hit.point).dot(n) < 0.0;
        }
        grid.values[flat] = static_cast<float>(inside ? -hit.distance : hit.distance);
      }
    }
  }
  return grid;
}

namespace {

struct CatmullRom {
  double w[4];
  double dw[4];
  double ddw[4];
  explicit CatmullRom(double t) {
    const double t2 = t * t;
    const double t3 = t2 * t;
    w[0] = 0.5 * (-t3 + 2 * t2 - t);
    w[1] = 0.5 * (3 * t3 - 5 * t2 + 2);
    w[2] = 0.5 * (-3 * t3 + 4 * t2 + t);
    w[3] = 0.5 * (t3 - t2);
    dw[0] = 0.5 * (-3 * t2 + 4 * t - 1);
    dw[1] = 0.5 * (9 * t2 - 10 * t);
    dw[2] = 0.5 * (-9 * t2 + 8 * t + 1);
    dw[3] = 0.5 * (3 * t2 - 2 * t);
    ddw[0] = -3 * t + 2;
    ddw[1] = 9 * t - 5;
    ddw[2] = -9 * t + 4;
    ddw[3] = 3 * t - 1;
  }
};

// Grid value with one ghost layer of linear extrapolation on each side.
double ghost_value(const SdfGrid& g, int i, int j, int k) {
  const int nx = static_cast<int>(g.dims[0]);
  const int ny = static_cast<int>(g.dims[1]);
  const int nz = static_cast<int>(g.dims[2]);
  if (i < 0) return 2.0 * ghost_value(g, 0, j, k) - ghost_value(g, 1, j, k);
  if (i >= nx) return 2.0 * ghost_value(g, nx - 1, j, k) - ghost_value(g, nx - 2, j, k);
  if (j < 0) return 2.0 * ghost_value(g, i, 0, k) - ghost_value(g, i, 1, k);
  if (j >= ny) return 2.0 * ghost_value(g, i, ny - 1, k) - ghost_value(g, i, ny - 2, k);
  if (k < 0) return 2.0 * ghost_value(g, i, j, 0) - ghost_value(g, i, j, 1);
  if (k >= nz) return 2.0 * ghost_value(g, i, j, nz - 1) - ghost_value(g, i, j, nz - 2);
  return g.at(i, j, k);
}

}  // namespace

SdfSample sdf_query(const SdfGrid& grid, const Vec3& p) {
  SdfSample out;
  const Vec3 upper = grid.upper();
  const Vec3 clamped = p.cwiseMax(grid.origin).cwiseMin(upper);
  const Vec3 offset = p - clamped;
  out.outside_grid = offset.squaredNorm() > 0.0;

  const Vec3 u = (clamped - grid.origin) / grid.spacing;
  std::array<int, 3> cell{};
  std::array<double, 3> frac{};
  for (int a = 0; a < 3; ++a) {
    const int n = static_cast<int>(grid.dims[a]);
    cell[a] = std::clamp(static_cast<int>(std::floor(u[a])), 0, n - 2);
    frac[a] = u[a] - cell[a];
  }
  const CatmullRom wx(frac[0]), wy(frac[1]), wz(frac[2]);

  double value = 0.0;
  Vec3 grad = Vec3::Zero();
  Mat3 hess = Mat3::Zero();
  for (int c = 0; c < 4; ++c) {
    for (int b = 0; b < 4; ++b) {
      for (int a = 0; a < 4; ++a) {
        const double f = ghost_value(grid, cell[0] - 1 + a, cell[1] - 1 + b, cell[2] - 1 + c);
        value += f * wx.w[a] * wy.w[b] * wz.w[c];
        grad.x() += f * wx.dw[a] * wy.w[b] * wz.w[c];
        grad.y() += f * wx.w[a] * wy.dw[b] * wz.w[c];
        grad.z() += f * wx.w[a] * wy.w[b] * wz.dw[c];
        hess(0, 0) += f * wx.ddw[a] * wy.w[b] * wz.w[c];
        hess(1, 1) += f * wx.w[a] * wy.ddw[b] * wz.w[c];
        hess(2, 2) += f * wx.w[a] * wy.w[b] * wz.ddw[c];
        hess(0, 1) += f * wx.dw[a] * wy.dw[b] * wz.w[c];
        hess(0, 2) += f * wx.dw[a] * wy.w[b] * wz.dw[c];
        hess(1, 2) += f * wx.w[a] * wy.dw[b] * wz.dw[c];
      }
    }
  }
  const double h = grid.spacing;
  grad /= h;
  hess /= h * h;
  hess(1, 0) = hess(0, 1);
  hess(2, 0) = hess(0, 2);
  hess(2, 1) = hess(1, 2);

  if (out.outside_grid) {
    // Clamped axes do not move the interpolation point.
    Mat3 mask = Mat3::Identity();
    Mat3 clamp_mask = Mat3::Zero();
    for (int a = 0; a < 3; ++a) {
      if (offset[a] != 0.0) {
        mask(a, a) = 0.0;
        clamp_mask(a, a) = 1.0;
      }
    }
    const double len = offset.norm();
    const Vec3 dir = offset / len;
    value += len;
    grad = mask * grad + dir;
    hess = mask * hess * mask + (Mat3::Identity() - dir * dir.transpose()) * clamp_mask / len;
  }

  out.distance = value;
  out.raw_gradient = grad;
  out.hessian = hess;
  const double gn = grad.norm();
  out.gradient = gn > 1e-12 ? Vec3(grad / gn) : Vec3::UnitX();
  return out;
}

using detail::read_le;
using detail::write_le;

void save_sdf(const SdfGrid& grid, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out.write("SDF1", 4);
  for (auto d : grid.dims) write_le<std::uint32_t>(out, d);
  for (int a = 0; a < 3; ++a) write_le<double>(out, grid.origin[a]);
  write_le<double>(out, grid.spacing);
  for (float v : grid.values) write_le<float>(out, v);
}

SdfGrid load_sdf(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string_view(magic, 4) != "SDF1") throw InputError("SDF cache: bad magic");
  SdfGrid grid;
  for (auto& d : grid.dims) d = read_le<std::uint32_t>(in);
  for (int a = 0; a < 3; ++a) grid.origin[a] = read_le<double>(in);
  grid.spacing = read_le<double>(in);
  if (!(grid.spacing > 0.0) || grid.dims[0] < 2 || grid.dims[1] < 2 || grid.dims[2] < 2) {
    throw InputError("SDF cache: invalid header");
  }
  const std::size_t total = static_cast<std::size_t>(grid.dims[0]) * grid.dims[1] * grid.dims[2];
  grid.values.resize(total);
  for (auto& v : grid.values) v = read_le<float>(in);
  return grid;
}

std::vector<int> farthest_point_sample(std::span<const Vec3> points, int k, int start) {
  if (points.empty()) throw std::invalid_argument("farthest_point_sample: empty point set");
  if (k < 0 || k > static_cast<int>(points.size())) {
    throw std::invalid_argument("farthest_point_sample: k exceeds point count");
  }
  if (start < 0 || start >= static_cast<int>(points.size())) {
    throw std::invalid_argument("farthest_point_sample: start out of range");
  }
  std::vector<int> selected;
  if (k == 0) return selected;
  selected.reserve(k);
  std::vector<double> min_d2(points.size(), std::numeric_limits<double>::infinity());
  int current = start;
  for (int s = 0; s < k; ++s) {
    selected.push_back(current);
    min_d2[current] = -1.0;
    int next = -1;
    double best = -1.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (min_d2[i] < 0.0) continue;
      min_d2[i] = std::min(min_d2[i], (points[i] - points[current]).squaredNorm());
      if (min_d2[i] > best) {
        best = min_d2[i];
        next = static_cast<int>(i);
      }
    }
    current = next;
  }
  return selected;
}

std::vector<int> farthest_point_sample(std::span<const Vec3> points, int k, std::uint64_t seed) {
  if (points.empty()) throw std::invalid_argument("farthest_point_sample: empty point set");
  Rng rng(seed);
  const int start = std::uniform_int_distribution<int>(0, static_cast<int>(points.size()) - 1)(rng);
  return farthest_point_sample(points, k, start);
}

SurfaceSampleSet surface_sample(const TriangleMesh& mesh, int n, std::uint64_t seed) {
  if (n <= 0) throw std::invalid_argument("surface_sample: n must be positive");
  std::vector<double> areas(mesh.triangles.size());
  for (std::size_t t = 0; t < areas.size(); ++t) areas[t] = mesh.triangle_area(t);
  std::discrete_distribution<int> pick(areas.begin(), areas.end());
  Rng rng(seed);

  SurfaceSampleSet out;
  out.points.reserve(n);
  out.normals.reserve(n);
  out.source_triangles.reserve(n);
  for (int s = 0; s < n; ++s) {
    const int t = pick(rng);
    const double r1 = std::sqrt(uniform01(rng));
    const double r2 = uniform01(rng);
    const double wa = 1.0 - r1;
    const double wb = r1 * (1.0 - r2);
    const double wc = r1 * r2;
    const auto& tri = mesh.triangles[t];
    out.points.push_back(wa * mesh.vertices[tri[0]] + wb * mesh.vertices[tri[1]] + wc * mesh.vertices[tri[2]]);
    Vec3 nrm = wa * mesh.normals[tri[0]] + wb * mesh.normals[tri[1]] + wc * mesh.normals[tri[2]];
    if (nrm.norm() < 1e-12) nrm = mesh.triangle_normal(t);
    out.normals.push_back(nrm.normalized());
    out.source_triangles.push_back(t);
  }
  return out;
}

ObjectModel make_object_model(TriangleMesh mesh, double spacing, int surface_samples, std::uint64_t seed) {
  ObjectModel obj;
  obj.mesh = std::move(mesh);
  validate_mesh(obj.mesh);
  obj.sdf = build_sdf_grid(obj.mesh, spacing > 0.0 ? spacing : default_sdf_spacing(obj.mesh));
  obj.com = center_of_mass(obj.mesh);
  for (const auto& v : obj.mesh.vertices) obj.circumradius = std::max(obj.circumradius, (v - obj.com).norm());
  obj.surface = surface_sample(obj.mesh, surface_samples, seed);
  return obj;
}

}  // namespace graspqp
