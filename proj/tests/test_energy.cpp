#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "graspqp/energy.hpp"
#include "graspqp/lp.hpp"
#include "graspqp/qp.hpp"
#include "oracles.hpp"

using namespace graspqp;
using nlohmann::json;

namespace {

const std::filesystem::path kData = GRASPQP_TEST_DATA;

Mat6X random_columns(Rng& rng, int n, double scale = 1.0) {
  Mat6X W(6, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < 6; ++i) W(i, j) = scale * standard_normal(rng);
  return W;
}

// Sphere of radius 0.1 at the origin, without rescaling.
const ObjectModel& ball() {
  static const ObjectModel obj = make_object_model(make_icosphere(0.1, 3), 0.004, 500, 1);
  return obj;
}

const ObjectModel& normalized_ball() {
  static const ObjectModel obj = make_object_model(normalize_object_scale(make_icosphere(1.0, 3)), 0.0, 500, 2);
  return obj;
}

const GripperModel& trifinger() {
  static const GripperModel m = load_gripper_spec(kData / "trifinger.json");
  return m;
}

// A bare probe: one link, one contact at its origin with the given outward finger normal.
GripperModel probe(const Vec3& normal, double sphere_radius = 0.0) {
  json links = json::array();
  json link = {{"name", "probe"}, {"parent", nullptr}, {"spheres", json::array()}};
  if (sphere_radius > 0.0) link["spheres"].push_back({{"c", {0, 0, 0}}, {"r", sphere_radius}});
  links.push_back(link);
  json spec = {{"links", links},
               {"joints", json::array()},
               {"contacts", {{{"link", "probe"}, {"point", {0, 0, 0}}, {"normal", {normal.x(), normal.y(), normal.z()}}}}}};
  return parse_gripper_spec(spec);
}

Grasp at(const Vec3& p, const GripperModel& m, std::vector<int> contacts = {0}) {
  Grasp g;
  g.pose.translation = p;
  g.q = VecX::Zero(m.dof());
  g.active_contacts = std::move(contacts);
  return g;
}

bool lp_feasible(const Mat6X& W) {
  const Eigen::Index n = W.cols();
  MatX A(7, n);
  A.topRows(6) = W;
  A.row(6).setOnes();
  VecX b = VecX::Zero(7);
  b[6] = static_cast<double>(n);
  return solve_standard_lp(VecX::Zero(n), A, b).status == LpStatus::kOptimal;
}

}  // namespace

TEST_CASE("energy variant names") {
  for (const char* name : {"graspqp", "graspqp-no-exp", "dexgraspnet", "gendexgrasp", "constrained-ii", "barrier"}) {
    CHECK(to_string(parse_energy_variant(name)) == name);
  }
  CHECK_THROWS(parse_energy_variant("qp"));
  CHECK(distance_mode(EnergyVariant::kDexGraspNet) == DistanceMode::kPlain);
  CHECK(distance_mode(EnergyVariant::kGraspQp) == DistanceMode::kNormalWeighted);
  CHECK(distance_mode(EnergyVariant::kGenDexGrasp) == DistanceMode::kNormalWeighted);

  EnergyWeights w;
  CHECK_NOTHROW(w.validate());
  w.w_pen = -1.0;
  CHECK_THROWS(w.validate());
  w = EnergyWeights{};
  w.upper = 1.0;
  CHECK_THROWS(w.validate());
}

TEST_CASE("sigma product") {
  Mat6X W = Mat6X::Zero(6, 6);
  for (int i = 0; i < 6; ++i) W(i, i) = i + 1.0;
  CHECK(sigma_product(W) == doctest::Approx(720.0));
  CHECK(sigma_product(Mat6X(W.leftCols(5))) == 0.0);
  W(5, 5) = 0.0;
  CHECK(sigma_product(W) == 0.0);

  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    const Mat6X M = random_columns(rng, 6 + static_cast<int>(rng() % 8), 0.7);
    Mat6X grad;
    sigma_product(M, &grad);
    const double h = 1e-6;
    for (Eigen::Index j = 0; j < M.cols(); ++j) {
      for (int i = 0; i < 6; ++i) {
        Mat6X p = M, m = M;
        p(i, j) += h;
        m(i, j) -= h;
        const double fd = (sigma_product(p) - sigma_product(m)) / (2 * h);
        CHECK(std::abs(fd - grad(i, j)) < 1e-6 * (1.0 + std::abs(fd)));
      }
    }
  }
}

TEST_CASE("force-closure energy examples") {
  SUBCASE("dexgraspnet is the norm of the column sum") {
    Mat6X W = Mat6X::Zero(6, 2);
    W(0, 0) = 1.0;
    W(1, 1) = 2.0;
    CHECK(e_fc_dexgraspnet(W).value == doctest::Approx(std::sqrt(5.0)));
    W(0, 1) = -1.0;
    W(1, 1) = 0.0;
    CHECK(e_fc_dexgraspnet(W).value == 0.0);
  }
  SUBCASE("graspqp vanishes on a positively spanning set") {
    Mat6X W(6, 12);
    W << Eigen::Matrix<double, 6, 6>::Identity(), -Eigen::Matrix<double, 6, 6>::Identity();
    const FcValue v = e_fc_graspqp(W, 50.0);
    CHECK(v.value < 1e-9);
    CHECK(v.sigma_product == doctest::Approx(1.0 * std::pow(2.0, 3)));
  }
  SUBCASE("graspqp on a one-sided set matches the QP residual") {
    Mat6X W(6, 7);
    W << Eigen::Matrix<double, 6, 6>::Identity(), Vec6::Ones();
    const FcValue v = e_fc_graspqp(W, 50.0);
    const QpSolution s = solve_box_qp(make_force_closure_qp(W, 50.0));
    CHECK(v.residual == doctest::Approx(std::sqrt(2.0 * s.objective)));
    CHECK(v.value == doctest::Approx(v.residual * std::exp(-sigma_product(W))));
    CHECK(v.value > 0.1);
  }
  SUBCASE("rank-deficient sets skip the exponential factor") {
    Mat6X W = Mat6X::Zero(6, 3);
    W(0, 0) = 1.0;
    W(1, 1) = 1.0;
    W(2, 2) = 1.0;
    const FcValue v = e_fc_graspqp(W, 50.0);
    CHECK(v.sigma_product == 0.0);
    CHECK(v.value == doctest::Approx(std::sqrt(3.0)));
  }
}

TEST_CASE("force-closure energy invariants") {
  Rng rng(2);
  for (int t = 0; t < 150; ++t) {
    const int n = 2 + static_cast<int>(rng() % 14);
    const Mat6X W = random_columns(rng, n, 0.5);
    const FcValue qp = e_fc_graspqp(W, 50.0);
    const FcValue raw = e_fc_graspqp(W, 50.0, false);
    const FcValue cii = e_fc_constrained_ii(W);
    const FcValue dex = e_fc_dexgraspnet(W);

    CHECK(qp.value >= 0.0);
    CHECK(cii.value >= 0.0);
    CHECK(dex.value >= 0.0);

    // The stored multipliers reproduce the residual.
    CHECK(std::abs((W * qp.gamma).norm() - qp.residual) < 1e-9 * (1.0 + qp.residual));
    CHECK(qp.gamma.minCoeff() >= 1.0 - 1e-12);
    CHECK(qp.gamma.maxCoeff() <= 50.0 + 1e-12);

    const double factor = std::exp(-qp.sigma_product);
    CHECK(factor > 0.0);
    CHECK(factor <= 1.0);
    if (wrench_rank(W) < 6) CHECK(factor == 1.0);
    CHECK(qp.value == doctest::Approx(raw.value * factor).epsilon(1e-12));

    // gamma = 1 is feasible for the box program.
    CHECK(raw.value <= dex.value + 1e-9);

    const FcValue bar = e_fc_barrier(W, 50.0);
    CHECK(bar.residual >= raw.residual - 1e-7 * (1.0 + raw.residual));
  }
}

TEST_CASE("constrained_ii vanishes exactly when a positive combination cancels") {
  Rng rng(3);
  int zeros = 0;
  for (int t = 0; t < 200; ++t) {
    const int n = 4 + static_cast<int>(rng() % 10);
    Mat6X W = random_columns(rng, n);
    if (t % 2 == 0) {
      const Vec6 d = random_columns(rng, 1).col(0).normalized();
      for (int j = 0; j < n; ++j)
        if (W.col(j).dot(d) < -0.3) W.col(j) -= 2.0 * W.col(j).dot(d) * d;
    }
    const bool feasible = lp_feasible(W);
    const FcValue v = e_fc_constrained_ii(W);
    CHECK((v.residual < 1e-7) == feasible);
    zeros += feasible ? 1 : 0;
  }
  CHECK(zeros > 10);
  CHECK(zeros < 190);
}

TEST_CASE("force-closure energy gradients match finite differences") {
  Rng rng(4);
  for (int variant = 0; variant < 3; ++variant) {
    int checked = 0;
    for (int t = 0; t < 60; ++t) {
      const Mat6X W = random_columns(rng, 6 + static_cast<int>(rng() % 5), 0.3);
      auto eval = [&](const Mat6X& M, bool grad) {
        switch (variant) {
          case 0: return e_fc_graspqp(M, 50.0, true, grad);
          case 1: return e_fc_dexgraspnet(M, grad);
          default: return e_fc_constrained_ii(M, grad);
        }
      };
      const FcValue v = eval(W, true);
      if (v.nonsmooth || v.residual < 1e-6) continue;
      ++checked;
      const double h = 1e-6;
      Mat6X fd(6, W.cols());
      for (Eigen::Index j = 0; j < W.cols(); ++j) {
        for (int i = 0; i < 6; ++i) {
          Mat6X p = W, m = W;
          p(i, j) += h;
          m(i, j) -= h;
          fd(i, j) = (eval(p, false).value - eval(m, false).value) / (2 * h);
        }
      }
      CHECK((fd - v.d_w).norm() < 1e-4 * (1.0 + fd.norm()));
    }
    CHECK(checked > 20);
  }
}

TEST_CASE("rotating every contact leaves frictionless energies unchanged") {
  Rng rng(5);
  for (int t = 0; t < 30; ++t) {
    std::vector<ContactFrame> contacts;
    for (int i = 0; i < 8; ++i) {
      contacts.push_back({Vec3(standard_normal(rng), standard_normal(rng), standard_normal(rng)) * 0.05,
                          Vec3(standard_normal(rng), standard_normal(rng), standard_normal(rng)).normalized()});
    }
    const Mat3 R = Eigen::Quaterniond(standard_normal(rng), standard_normal(rng), standard_normal(rng),
                                      standard_normal(rng))
                       .normalized()
                       .toRotationMatrix();
    std::vector<ContactFrame> rotated;
    for (const auto& c : contacts) rotated.push_back({R * c.point, R * c.normal});
    EnergyWeights w;
    w.mu = 0.0;
    // Near zero the residual is only as exact as the QP's stopping test.
    CHECK(std::abs(e_fc_graspqp(rotated, w).value - e_fc_graspqp(contacts, w).value) < 1e-8);
    CHECK(e_fc_dexgraspnet(rotated, w).value == doctest::Approx(e_fc_dexgraspnet(contacts, w).value).epsilon(1e-9));
    CHECK(e_fc_constrained_ii(rotated, w).value ==
          doctest::Approx(e_fc_constrained_ii(contacts, w).value).epsilon(1e-9));
  }
}

TEST_CASE("contact distance") {
  const ObjectModel& obj = ball();
  const Vec3 p(0.12, 0.0, 0.0);
  const double d = sdf_query(obj.sdf, p).distance;
  REQUIRE(d == doctest::Approx(0.02).epsilon(0.05));

  // The finger normal points out of the finger; facing the object means cos = 1.
  const GripperModel facing = probe(Vec3(-1, 0, 0));
  const GripperModel away = probe(Vec3(1, 0, 0));
  CHECK(e_dis(at(p, facing), obj, facing, DistanceMode::kNormalWeighted) == doctest::Approx(d).epsilon(1e-6));
  CHECK(e_dis(at(p, away), obj, away, DistanceMode::kNormalWeighted) ==
        doctest::Approx(std::exp(2.0) * d).epsilon(1e-3));
  CHECK(e_dis(at(p, away), obj, away, DistanceMode::kPlain) == doctest::Approx(d).epsilon(1e-12));

  // Inside counts by magnitude.
  const Vec3 inside(0.09, 0.0, 0.0);
  CHECK(e_dis(at(inside, facing), obj, facing, DistanceMode::kPlain) ==
        doctest::Approx(-sdf_query(obj.sdf, inside).distance));

  // Normal weighting never lowers the distance term.
  Rng rng(6);
  for (int t = 0; t < 50; ++t) {
    const Vec3 n(standard_normal(rng), standard_normal(rng), standard_normal(rng));
    const GripperModel m = probe(n.normalized());
    const Vec3 q = Vec3(standard_normal(rng), standard_normal(rng), standard_normal(rng)).normalized() * 0.13;
    CHECK(e_dis(at(q, m), obj, m, DistanceMode::kNormalWeighted) >=
          e_dis(at(q, m), obj, m, DistanceMode::kPlain) - 1e-15);
  }
}

TEST_CASE("regularizers") {
  const ObjectModel& obj = ball();

  SUBCASE("penetration depth of a sphere") {
    const GripperModel m = probe(Vec3::UnitX(), 0.03);
    const Vec3 p(0.115, 0.0, 0.0);
    const RegularizerTerms r = e_reg(at(p, m, {}), obj, m);
    CHECK(r.e_pen == doctest::Approx(0.03 - sdf_query(obj.sdf, p).distance).epsilon(1e-12));
    CHECK(r.e_pen == doctest::Approx(0.015).epsilon(0.05));
    CHECK(e_reg(at(Vec3(0.2, 0, 0), m, {}), obj, m).e_pen == 0.0);
  }

  SUBCASE("self penetration and joint limits") {
    const json spec = json::parse(R"({
      "links": [{"name": "palm", "parent": null, "spheres": []},
                {"name": "a", "parent": "palm", "spheres": [{"c": [0.015, 0, 0], "r": 0.02}]},
                {"name": "b", "parent": "palm", "spheres": [{"c": [-0.015, 0, 0], "r": 0.02}]}],
      "joints": [{"type": "prismatic", "axis": [0, 0, 1], "limits": [0, 0.1], "parent": "palm", "child": "a"},
                 {"type": "prismatic", "axis": [0, 0, 1], "limits": [0, 0.1], "parent": "palm", "child": "b"}],
      "contacts": [{"link": "a", "point": [0, 0, 0], "normal": [1, 0, 0]}]
    })");
    const GripperModel m = parse_gripper_spec(spec);
    Grasp g = at(Vec3(1.0, 0, 0), m, {});
    const RegularizerTerms r = e_reg(g, obj, m);
    CHECK(r.e_spen == doctest::Approx(0.01));
    CHECK(r.e_joints == 0.0);
    CHECK(r.e_pen == 0.0);

    g.q << 0.2, -0.05;
    const RegularizerTerms r2 = e_reg(g, obj, m);
    CHECK(r2.e_joints == doctest::Approx(0.01 + 0.0025));
    // The spheres moved apart along z by 0.25.
    CHECK(r2.e_spen == 0.0);
  }
}

TEST_CASE("total energy is the weighted sum") {
  const GripperModel& m = trifinger();
  const ObjectModel& obj = normalized_ball();
  const GraspBatch batch = initialize_grasps(m, obj, 8, InitConfig{"power", 4}, 7);
  for (const Grasp& g : batch.grasps) {
    EnergyWeights w;
    const EnergyBreakdown e = total_energy(g, obj, m, w);
    CHECK(e.total == doctest::Approx(e.e_fc + w.w_dis * e.e_dis + w.w_pen * e.e_pen + w.w_spen * e.e_spen +
                                     w.w_joints * e.e_joints));
    EnergyWeights doubled = w;
    doubled.w_dis *= 2.0;
    CHECK(total_energy(g, obj, m, doubled).total == doctest::Approx(e.total + w.w_dis * e.e_dis));

    EnergyWeights no_exp = w;
    no_exp.variant = EnergyVariant::kGraspQpNoExp;
    const EnergyBreakdown raw = total_energy(g, obj, m, no_exp);
    CHECK(e.e_fc == doctest::Approx(raw.e_fc * std::exp(-raw.sigma_product)).epsilon(1e-12));

    const auto frames = active_contact_frames(g, obj, m);
    CHECK(e.e_fc == doctest::Approx(e_fc_graspqp(frames, w).value));
  }
}

TEST_CASE("energy gradient is independent of contact order") {
  const GripperModel& m = trifinger();
  const ObjectModel& obj = normalized_ball();
  const GraspBatch batch = initialize_grasps(m, obj, 8, InitConfig{"power", 4}, 8);
  for (const Grasp& g : batch.grasps) {
    Grasp rev = g;
    std::reverse(rev.active_contacts.begin(), rev.active_contacts.end());
    const EnergyGradient a = energy_gradient(g, obj, m, EnergyWeights{});
    const EnergyGradient b = energy_gradient(rev, obj, m, EnergyWeights{});
    CHECK(a.energy.total == doctest::Approx(b.energy.total).epsilon(1e-9));
    CHECK((a.grad - b.grad).norm() < 1e-7 * (1.0 + a.grad.norm()));
  }
}

TEST_CASE("energy gradient matches finite differences") {
  const GripperModel& m = trifinger();
  const ObjectModel& obj = normalized_ball();
  const GraspBatch batch = initialize_grasps(m, obj, 160, InitConfig{"power", 4}, 9);
  Rng rng(10);
  for (const EnergyVariant variant :
       {EnergyVariant::kGraspQp, EnergyVariant::kDexGraspNet, EnergyVariant::kConstrainedII}) {
    EnergyWeights w;
    w.variant = variant;
    int checked = 0;
    for (const Grasp& start : batch.grasps) {
      if (checked >= 50) break;
      // Pull the wrist toward the object so contacts sit near the surface.
      Grasp g = start;
      g.pose.translation *= 0.6;
      if (rng() % 2 == 0) g.active_contacts.resize(1);
      const EnergyGradient eg = energy_gradient(g, obj, m, w);
      if (eg.energy.nonsmooth) continue;
      const int n = 6 + m.dof();
      auto f = [&](const VecX& d) {
        Grasp p = g;
        p.pose = retract(g.pose, d.head<3>(), d.segment<3>(3));
        p.q = g.q + d.tail(m.dof());
        return total_energy(p, obj, m, w).total;
      };
      const VecX fd = oracle::fd_gradient(f, VecX::Zero(n), 1e-7);
      const double err = oracle::rel_err(eg.grad, fd, 1e-6);
      if (err >= 1e-3) MESSAGE("variant " << to_string(variant) << " rel err " << err);
      CHECK(err < 1e-3);
      ++checked;
    }
    CHECK(checked >= 30);
  }
}
