#pragma once

#include <array>
#include <span>
#include <utility>
#include <vector>

#include "graspqp/common.hpp"

namespace graspqp {

// Contact point relative to the object's center of mass, with the outward
// object surface normal.
struct ContactFrame {
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
};

struct FrictionCone {
  double mu = 0.0;
  std::array<Vec3, 4> edges;
};

// w = [f; f x c].
Vec6 contact_wrench(const Vec3& c, const Vec3& f);

// Deterministic tangent pair at n, seeded by the world axis where |n| is smallest.
std::pair<Vec3, Vec3> tangent_basis(const Vec3& n);

// Four pyramid edges normalize(n + mu*s*t_j), ordered (+t1, -t1, +t2, -t2).
FrictionCone friction_cone_edges(const Vec3& n, double mu);

// d(edge_k)/d(n) for each edge, holding the tangent-seed axis fixed.
std::array<Mat3, 4> friction_cone_edge_jacobians(const Vec3& n, double mu);

struct WrenchMatrix {
  Mat6X columns;
  double torque_weight = 1.0;
  std::vector<std::pair<int, int>> provenance;  // (contact, edge)
};

// Torque rows are scaled by sqrt(torque_weight) so the plain 2-norm is the
// weighted norm. With mu == 0 the four identical edges collapse to one column.
WrenchMatrix build_wrench_matrix(std::span<const ContactFrame> contacts, double mu, double torque_weight);

// rank(W) == 6 and some strictly positive combination of columns vanishes.
bool positively_spans(const Mat6X& W);
inline bool positively_spans(const WrenchMatrix& W) { return positively_spans(W.columns); }

// Largest achievable min(alpha) over {W alpha = 0, sum alpha = N, alpha >= 0}.
// Negative when the program is infeasible.
double max_min_positive_combination(const Mat6X& W);

int wrench_rank(const Mat6X& W);

// Six singular values, descending, zero-padded when W has fewer than six columns.
Vec6 wrench_svd(const Mat6X& W);

}  // namespace graspqp
