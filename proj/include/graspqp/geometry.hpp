#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "graspqp/common.hpp"

namespace graspqp {

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
  std::vector<Vec3> normals;  // per vertex, unit
  // Set by normalize_object_scale so a second application is a no-op.
  bool scale_normalized = false;

  Vec3 bbox_min() const;
  Vec3 bbox_max() const;
  Vec3 extents() const { return bbox_max() - bbox_min(); }
  double triangle_area(std::size_t t) const;
  Vec3 triangle_normal(std::size_t t) const;  // unit, zero for degenerate
};

// Checks index ranges and normal lengths; throws InputError.
void validate_mesh(const TriangleMesh& mesh);

// Area-weighted vertex normals. Isolated vertices get the direction from the
// vertex centroid, or +z as a last resort.
void recompute_vertex_normals(TriangleMesh& mesh);

// ASCII OBJ ("v" and "f" records, polygons fan-triangulated).
TriangleMesh load_mesh(const std::filesystem::path& path);
TriangleMesh parse_obj(std::string_view text);
void write_obj(const TriangleMesh& mesh, const std::filesystem::path& path);

TriangleMesh make_icosphere(double radius, int subdivisions);
TriangleMesh make_box(const Vec3& extents);

TriangleMesh normalize_object_scale(const TriangleMesh& mesh);

// Volume centroid (divergence theorem); area centroid for open meshes.
Vec3 center_of_mass(const TriangleMesh& mesh);

// Exact closest point on a triangle.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c,
                               Vec3* barycentric = nullptr);

// Bounding-volume hierarchy over triangles for nearest-surface queries.
class TriangleBvh {
 public:
  explicit TriangleBvh(const TriangleMesh& mesh);

  struct Hit {
    double distance = 0.0;
    Vec3 point = Vec3::Zero();
    int triangle = -1;
    Vec3 barycentric = Vec3::Zero();
  };
  Hit closest(const Vec3& p) const;

 private:
  struct Node {
    Eigen::AlignedBox3d box;
    int left = -1;
    int right = -1;
    int begin = 0;
    int end = 0;
  };
  int build(int begin, int end);
  void query(int node, const Vec3& p, Hit& best) const;

  const TriangleMesh* mesh_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

// Exact unsigned distance by brute force over all triangles.
double brute_force_distance(const TriangleMesh& mesh, const Vec3& p);

// True when every edge is shared by exactly two triangles.
bool is_closed_manifold(const TriangleMesh& mesh);

// Generalized winding number; ~1 inside, ~0 outside for closed meshes.
double winding_number(const TriangleMesh& mesh, const Vec3& p);

struct SdfGrid {
  Vec3 origin = Vec3::Zero();
  double spacing = 0.0;
  std::array<std::uint32_t, 3> dims{0, 0, 0};
  std::vector<float> values;  // x-fastest
  // Set when the mesh is not closed and signs come from the normal heuristic.
  bool sign_from_heuristic = false;

  double at(int i, int j, int k) const {
    return values[static_cast<std::size_t>(i) +
                  dims[0] * (static_cast<std::size_t>(j) + dims[1] * static_cast<std::size_t>(k))];
  }
  Vec3 upper() const {
    return origin + spacing * Vec3(dims[0] - 1, dims[1] - 1, dims[2] - 1);
  }
};

double default_sdf_spacing(const TriangleMesh& mesh);

SdfGrid build_sdf_grid(const TriangleMesh& mesh, double spacing);

struct SdfSample {
  double distance = 0.0;
  Vec3 gradient = Vec3::UnitX();      // unit, outward normal estimate
  Vec3 raw_gradient = Vec3::UnitX();  // exact derivative of the interpolant
  Mat3 hessian = Mat3::Zero();        // derivative of raw_gradient
  bool outside_grid = false;
};

// Tricubic (Catmull-Rom) interpolation. Node derivatives of the interpolant
// are the grid's central differences; one-sided at the grid boundary. Points
// outside the grid are clamped and the clamp distance is added.
SdfSample sdf_query(const SdfGrid& grid, const Vec3& p);

void save_sdf(const SdfGrid& grid, const std::filesystem::path& path);
SdfGrid load_sdf(const std::filesystem::path& path);

// Greedy farthest point sampling starting from `start`.
std::vector<int> farthest_point_sample(std::span<const Vec3> points, int k, int start);
// Same, with the start index drawn from `seed`.
std::vector<int> farthest_point_sample(std::span<const Vec3> points, int k, std::uint64_t seed);

struct SurfaceSampleSet {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;
  std::vector<int> source_triangles;
};

SurfaceSampleSet surface_sample(const TriangleMesh& mesh, int n, std::uint64_t seed);

// Everything about one rigid object needed by the energy and the metrics.
struct ObjectModel {
  TriangleMesh mesh;
  SdfGrid sdf;
  Vec3 com = Vec3::Zero();
  double circumradius = 0.0;  // max vertex distance from com
  SurfaceSampleSet surface;
};

ObjectModel make_object_model(TriangleMesh mesh, double spacing = 0.0, int surface_samples = 3000,
                              std::uint64_t seed = 0);

}  // namespace graspqp
