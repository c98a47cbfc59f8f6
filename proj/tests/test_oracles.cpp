#include "catch_amalgamated.hpp"

#include "sepx/oracles.hpp"

#include <random>

using namespace sepx;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

/// The bistable line with a decaying dummy coordinate, for 2D basin maps.
SystemSpec bistable_plane() {
  SystemSpec s;
  s.name = "bistable_plane";
  s.dim = 2;
  s.field = [](const Eigen::Ref<const Vec>& x, Eigen::Ref<Vec> dx) {
    dx[0] = x[0] - x[0] * x[0] * x[0];
    dx[1] = -x[1];
  };
  return s;
}

Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

double spacing(const BasinMap2D& m) { return (m.box.hi.x() - m.box.lo.x()) / (m.n - 1); }

}  // namespace

TEST_CASE("analytic eigenfunction values", "[oracles]") {
  CHECK(analytic_kef_1d(0.0) == 0.0);
  CHECK_THAT(analytic_kef_1d(0.5), WithinAbs(0.5773503, 1e-7));
  CHECK_THAT(analytic_kef_1d(2.0), WithinRel(2.0 / std::sqrt(3.0), 1e-15));
  for (double x : {0.1, 0.7, 1.5, 4.0}) CHECK(analytic_kef_1d(-x) == -analytic_kef_1d(x));
  CHECK_THROWS_AS(analytic_kef_1d(1.0), DomainError);
  CHECK_THROWS_AS(analytic_kef_1d(-1.0), DomainError);
  CHECK_THROWS_AS(analytic_kef_1d_derivative(1.0 + 1e-12), DomainError);
}

TEST_CASE("analytic eigenfunction satisfies the PDE with unit eigenvalue", "[oracles]") {
  const double x = 0.3;
  const double lhs = analytic_kef_1d_derivative(x) * (x - x * x * x);
  CHECK_THAT(lhs - analytic_kef_1d(x), WithinAbs(0.0, 1e-12));
  // the derivative matches central differences on both sides of the singularity
  for (double p : {-2.5, -0.6, 0.2, 0.9, 3.0}) {
    const double h = 1e-6;
    const double fd = (analytic_kef_1d(p + h) - analytic_kef_1d(p - h)) / (2 * h);
    CHECK_THAT(analytic_kef_1d_derivative(p), WithinRel(fd, 1e-6));
  }
}

TEST_CASE("analytic field wrapper", "[oracles]") {
  const auto f = analytic_kef_1d_field();
  CHECK(f.dim() == 1);
  CHECK(f(Vec::Constant(1, 0.5)) == analytic_kef_1d(0.5));
  CHECK(f.gradient(Vec::Constant(1, 0.5))[0] == analytic_kef_1d_derivative(0.5));
}

TEST_CASE("separable family endpoints and diagonal", "[oracles]") {
  CHECK(separable_family_2d(1.0, 0.3, 0.4) == analytic_kef_1d(0.3));
  CHECK(separable_family_2d(1.0, 0.3, -0.4) == analytic_kef_1d(0.3));
  CHECK(separable_family_2d(0.0, -0.3, 0.4) == analytic_kef_1d(0.4));
  CHECK_THAT(separable_family_2d(0.5, 0.3, 0.3), WithinRel(analytic_kef_1d(0.3), 1e-15));
  CHECK(separable_family_2d(0.5, 0.0, 0.6) == 0.0);
  CHECK(separable_family_2d(0.5, 0.6, 0.0) == 0.0);
  CHECK_THROWS_AS(separable_family_2d(0.5, -0.3, 0.3), DomainError);
}

TEST_CASE("separable family solves the planar PDE", "[oracles]") {
  // f = (x - x^3, y - y^3), eigenvalue mu + (1 - mu) = 1
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.05, 0.9);
  const double h = 1e-6;
  for (double mu : {0.0, 0.25, 0.5, 0.9, 1.0}) {
    for (int k = 0; k < 20; ++k) {
      const double x = u(rng), y = u(rng);
      auto g = [mu](double a, double b) { return separable_family_2d(mu, a, b); };
      const double gx = (g(x + h, y) - g(x - h, y)) / (2 * h);
      const double gy = (g(x, y + h) - g(x, y - h)) / (2 * h);
      const double res = gx * (x - x * x * x) + gy * (y - y * y * y) - g(x, y);
      CHECK(std::abs(res) < 1e-6 * (1.0 + std::abs(g(x, y))));
    }
  }
}

TEST_CASE("power rule on the analytic eigenfunction", "[oracles]") {
  const auto s = builtin_system("bistable1d");
  const auto psi = analytic_kef_1d_field();
  Mat probes(1, 50);
  for (Eigen::Index i = 0; i < 50; ++i) probes(0, i) = 0.05 + 0.9 * static_cast<double>(i) / 49.0;
  const auto one = power_rule_check(psi, s, 1.0, 1.0, probes);
  CHECK(one.max_rel_residual < 1e-8);
  CHECK_THAT(one.effective_eigenvalue, WithinRel(1.0, 1e-8));
  const auto two = power_rule_check(psi, s, 1.0, 2.0, probes);
  CHECK(two.max_rel_residual < 1e-8);
  CHECK_THAT(two.effective_eigenvalue, WithinRel(2.0, 1e-8));
  const auto half = power_rule_check(psi, s, 1.0, 0.5, -probes);
  CHECK(half.max_rel_residual < 1e-8);
  CHECK_THAT(half.effective_eigenvalue, WithinRel(0.5, 1e-8));
  // alpha = 0 gives the constant function, which has eigenvalue zero
  const auto zero = power_rule_check(psi, s, 1.0, 0.0, probes);
  CHECK(std::abs(zero.effective_eigenvalue) < 1e-12);
  Mat mixed(1, 2);
  mixed << -0.5, 0.5;
  CHECK_THROWS_AS(power_rule_check(psi, s, 1.0, 2.0, mixed), DomainError);
  CHECK_THROWS_AS(power_rule_check(psi, s, 1.0, 2.0, Mat(1, 0)), ConfigError);
}

TEST_CASE("basin map of the bistable plane splits at x = 0", "[oracles]") {
  const auto s = bistable_plane();
  std::vector<Attractor> a(2);
  a[0].id = 0;
  a[0].representative = v2(-1.0, 0.0);
  a[1].id = 1;
  a[1].representative = v2(1.0, 0.0);
  Box2 box;
  box.lo = {-2.0, -2.0};
  box.hi = {2.0, 2.0};
  const auto m = brute_force_basin_map(s, box, 40, a);
  const double h = spacing(m);
  for (int j = 0; j < m.n; ++j)
    for (int i = 0; i < m.n; ++i) CHECK(m.label(i, j) == (m.node(i, j).x() < 0.0 ? 0 : 1));
  const auto b = m.boundary_nodes();
  CHECK(b.size() == 80u);
  for (const auto& [i, j] : b) CHECK(std::abs(m.node(i, j).x()) <= h);
}

TEST_CASE("Duffing basin boundary follows the stable manifold", "[oracles]") {
  const auto s = builtin_system("duffing2d");
  const auto a = attractors_of(s, 32, 0);
  Box2 box;
  box.lo = {-2.0, -2.0};
  box.hi = {2.0, 2.0};
  const auto m = brute_force_basin_map(s, box, 200, a);
  const auto branches = stable_manifold_2d(s, Vec::Zero(2), box);
  REQUIRE(branches.size() == 2);
  const double h = spacing(m);
  const Mat bp = m.boundary_points();
  REQUIRE(bp.cols() > 0);
  double worst = 0.0;
  for (Eigen::Index k = 0; k < bp.cols(); ++k) {
    const Eigen::Vector2d p = bp.col(k);
    worst = std::max(worst, std::min(point_to_polyline(p, branches[0]), point_to_polyline(p, branches[1])));
  }
  CHECK(worst <= h);
}

TEST_CASE("symmetric gLV basin boundary is the diagonal", "[oracles]") {
  const auto s = builtin_system("glv");
  const auto a = attractors_of(s, 32, 0);
  Box2 box;
  box.lo = {0.01, 0.01};
  box.hi = {2.0, 2.0};
  const auto m = brute_force_basin_map(s, box, 60, a);
  const double h = spacing(m);
  CHECK(m.boundary_nodes().size() >= static_cast<std::size_t>(m.n));
  for (const auto& [i, j] : m.boundary_nodes()) {
    const auto p = m.node(i, j);
    CHECK(std::abs(p.x() - p.y()) / std::sqrt(2.0) <= h);
  }
}

TEST_CASE("basin maps agree under refinement", "[oracles]") {
  const auto s = builtin_system("duffing2d");
  const auto a = attractors_of(s, 32, 0);
  Box2 box;
  box.lo = {-2.0, -2.0};
  box.hi = {2.0, 2.0};
  const auto coarse = brute_force_basin_map(s, box, 40, a);
  const auto fine = brute_force_basin_map(s, box, 80, a);
  const double hf = spacing(fine);
  int differ = 0;
  for (int j = 0; j < coarse.n; ++j)
    for (int i = 0; i < coarse.n; ++i) {
      const auto p = coarse.node(i, j);
      const int fi = static_cast<int>(std::lround((p.x() - box.lo.x()) / hf));
      const int fj = static_cast<int>(std::lround((p.y() - box.lo.y()) / hf));
      differ += coarse.label(i, j) != fine.label(fi, fj);
    }
  // only nodes within a fine cell of the boundary may disagree
  CHECK(differ <= static_cast<int>(coarse.boundary_nodes().size()));
}

TEST_CASE("basin map on a slice of a higher dimensional system", "[oracles]") {
  const auto s = builtin_system("embedded_bistable", {{"N", "5"}, {"seed", "2"}});
  const auto a = attractors_of(s);
  Slice2D sl{Vec::Zero(5), s.frame.col(0), s.frame.col(1)};
  const auto m = brute_force_basin_map(s, Box2{}, 20, a, sl);
  CHECK_FALSE(m.boundary_nodes().empty());
  for (const auto& [i, j] : m.boundary_nodes()) CHECK(std::abs(m.node(i, j).x()) <= spacing(m));
  CHECK_THROWS_AS(brute_force_basin_map(s, Box2{}, 20, a), DimensionError);
}

TEST_CASE("basin map with no resolvable node is an error", "[oracles]") {
  const auto s = bistable_plane();
  std::vector<Attractor> far(1);
  far[0].representative = v2(10.0, 10.0);
  CHECK_THROWS_AS(brute_force_basin_map(s, Box2{}, 5, far), GeometryError);
  CHECK_THROWS_AS(brute_force_basin_map(s, Box2{}, 1, far), ConfigError);
}

TEST_CASE("basin map sidecar describes the grid", "[oracles]") {
  const auto s = bistable_plane();
  std::vector<Attractor> a(2);
  a[0].representative = v2(-1.0, 0.0);
  a[1].id = 1;
  a[1].representative = v2(1.0, 0.0);
  const auto m = brute_force_basin_map(s, Box2{}, 4, a);
  const auto j = basin_map_sidecar(m);
  CHECK(j["n"] == 4);
  CHECK(j["bbox"]["lo"][0] == -1.0);
  CHECK(j["labels"]["unresolved"] == -1);
  CHECK(j["attractors"].size() == 2);
  CHECK(j["attractors"][1]["kind"] == "fixed_point");
  std::ostringstream os;
  write_basin_map_csv(os, m);
  CHECK(os.str() == "0,0,1,1\n0,0,1,1\n0,0,1,1\n0,0,1,1\n");
}

TEST_CASE("stable manifold of a linear saddle is its stable axis", "[oracles]") {
  SystemSpec s;
  s.name = "saddle";
  s.dim = 2;
  s.field = [](const Eigen::Ref<const Vec>& x, Eigen::Ref<Vec> dx) {
    dx[0] = x[0];
    dx[1] = -2.0 * x[1];
  };
  const auto br = stable_manifold_2d(s, Vec::Zero(2), Box2{});
  for (const auto& b : br) {
    CHECK(b.row(0).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(b.row(1).cwiseAbs().maxCoeff() >= 1.0);
  }
  CHECK_THROWS_AS(stable_manifold_2d(bistable_plane(), v2(1.0, 0.0), Box2{}), GeometryError);
}

TEST_CASE("Hausdorff distances", "[oracles]") {
  Mat a(2, 2), b(2, 3);
  a << 0, 1, 0, 0;
  b << 0, 1, 3, 0, 0, 0;
  CHECK(directed_hausdorff(a, b) == 0.0);
  CHECK(directed_hausdorff(b, a) == 2.0);
  CHECK(hausdorff(a, b) == 2.0);
  CHECK(hausdorff(a, a) == 0.0);
  CHECK_THROWS_AS(hausdorff(a, Mat(2, 0)), GeometryError);
  CHECK_THROWS_AS(hausdorff(a, Mat(3, 1)), DimensionError);
}

TEST_CASE("polyline distances and resampling", "[oracles]") {
  Mat line(2, 3);
  line << 0, 1, 1, 0, 0, 1;
  CHECK(point_to_polyline({0.5, 0.5}, line) == 0.5);
  CHECK(point_to_polyline({2.0, 2.0}, line) == std::sqrt(2.0));
  const Polyline l{{0.0, 0.0}, {1.0, 0.0}};
  const Mat pts = polyline_points({l}, 0.1);
  CHECK(pts.cols() == 11);
  for (Eigen::Index k = 0; k + 1 < pts.cols(); ++k) CHECK((pts.col(k + 1) - pts.col(k)).norm() <= 0.1 + 1e-12);
}
