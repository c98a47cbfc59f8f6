#include "catch_amalgamated.hpp"

#include "sepx/dynamics.hpp"

#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

using namespace sepx;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

SystemSpec linear_decay() {
  SystemSpec s;
  s.name = "decay";
  s.dim = 1;
  s.field = [](const Eigen::Ref<const Vec>& x, Eigen::Ref<Vec> dx) { dx = -x; };
  return s;
}

SystemSpec rotation() {
  SystemSpec s;
  s.name = "rotation";
  s.dim = 2;
  s.field = [](const Eigen::Ref<const Vec>& x, Eigen::Ref<Vec> dx) {
    dx[0] = -x[1];
    dx[1] = x[0];
  };
  return s;
}

Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

Vec v1(double a) { return Vec::Constant(1, a); }

/// Reference radial dynamics of the two-cycle system, integrated in 1D.
double radial_endpoint(double r0, double t, double dt) {
  SystemSpec s;
  s.name = "radial";
  s.dim = 1;
  s.field = [](const Eigen::Ref<const Vec>& x, Eigen::Ref<Vec> dx) {
    const double u = x[0] - 2.0;
    dx[0] = u - u * u * u;
  };
  return integrate(s, v1(r0), t, dt)[0];
}

}  // namespace

TEST_CASE("built-in vector fields", "[dynamics]") {
  CHECK(builtin_system("bistable1d").f(v1(0.5))[0] == 0.375);
  const auto lc = builtin_system("two_limit_cycles");
  const Vec at2 = lc.f(v2(2.0, 0.0));
  CHECK(at2[0] == 0.0);  // radial component at (2,0) is the x component
  CHECK(at2[1] == 2.0);
  const auto eb = builtin_system("embedded_bistable", {{"N", "3"}, {"identity", "1"}});
  Vec x(3);
  x << 1.0, 0.2, -0.2;
  const Vec f = eb.f(x);
  CHECK(f[0] == 0.0);
  CHECK(f[1] == -0.2);
  CHECK(f[2] == 0.2);
}

TEST_CASE("Duffing and gLV fields", "[dynamics]") {
  const auto d = builtin_system("duffing2d");
  const Vec f = d.f(v2(0.0, 1.0));
  CHECK(f[0] == 1.0);
  CHECK(f[1] == -0.5);
  const auto g = builtin_system("glv");
  const Vec fg = g.f(v2(0.5, 0.25));
  // x_i (r_i + sum_j A_ij x_j)
  CHECK_THAT(fg[0], WithinAbs(0.5 * (1.0 - 0.5 - 0.375), 1e-15));
  CHECK_THAT(fg[1], WithinAbs(0.25 * (1.0 - 0.75 - 0.25), 1e-15));
}

TEST_CASE("unknown systems and parameters are rejected", "[dynamics]") {
  CHECK_THROWS_AS(builtin_system("lorenz"), ConfigError);
  CHECK_THROWS_AS(builtin_system("duffing2d", {{"damping", "1"}}), ConfigError);
  CHECK_THROWS_AS(builtin_system("duffing2d", {{"delta", "abc"}}), ConfigError);
  CHECK_THROWS_AS(builtin_system("loaded_rnn"), ConfigError);
  CHECK_THROWS_AS(builtin_system("bistable1d", {{"dt", "0"}}), ConfigError);
}

TEST_CASE("gLV parameter file parsing", "[dynamics]") {
  std::istringstream ok("1, 2\n-1, -0.5\n-0.5, -1\n");
  auto [r, A] = parse_glv_csv(ok);
  CHECK(r[1] == 2.0);
  CHECK(A(0, 1) == -0.5);
  std::istringstream short_rows("1,2\n-1,-0.5\n");
  CHECK_THROWS_AS(parse_glv_csv(short_rows), ConfigError);
  std::istringstream bad_len("1,2\n-1\n-0.5,-1\n");
  CHECK_THROWS_AS(parse_glv_csv(bad_len), ConfigError);
  std::istringstream junk("1,x\n");
  CHECK_THROWS_AS(parse_glv_csv(junk), ConfigError);
}

TEST_CASE("gLV built-in reads a parameter file", "[dynamics]") {
  const std::string path = "test_glv_params.csv";
  {
    std::ofstream out(path);
    out << "1,1,1\n-1,-0.2,-0.2\n-0.2,-1,-0.2\n-0.2,-0.2,-1\n";
  }
  const auto s = builtin_system("glv", {{"params_file", path}});
  CHECK(s.dim == 3);
  std::remove(path.c_str());
}

TEST_CASE("RNN weight files round-trip and drive the loaded system", "[dynamics]") {
  Mat W(2, 2);
  W << 2.0, 0.0, 0.0, 0.5;
  Vec b = Vec::Zero(2);
  std::stringstream ss;
  write_rnn_weights(ss, W, b);
  auto [W2, b2] = parse_rnn_weights(ss);
  CHECK(W2 == W);
  CHECK(b2 == b);
  const std::string path = "test_rnn_weights.txt";
  {
    std::ofstream out(path);
    write_rnn_weights(out, W, b);
  }
  const auto s = builtin_system("loaded_rnn", {{"weights_file", path}});
  const Vec f = s.f(v2(1.0, -1.0));
  CHECK_THAT(f[0], WithinAbs(-1.0 + 2.0 * std::tanh(1.0), 1e-15));
  CHECK_THAT(f[1], WithinAbs(1.0 + 0.5 * std::tanh(-1.0), 1e-15));
  std::remove(path.c_str());
  std::istringstream bad("RNN v2 N=2\n");
  CHECK_THROWS_AS(parse_rnn_weights(bad), ConfigError);
}

TEST_CASE("RK4 solves linear decay", "[dynamics]") {
  const auto s = linear_decay();
  CHECK_THAT(integrate(s, v1(1.0), 1.0, 0.01)[0], WithinAbs(std::exp(-1.0), 1e-8));
  // last partial step lands on t
  CHECK_THAT(integrate(s, v1(1.0), 1.005, 0.01)[0], WithinAbs(std::exp(-1.005), 1e-8));
  CHECK(integrate(s, v1(2.0), 0.0, 0.01)[0] == 2.0);
}

TEST_CASE("RK4 preserves the radius of a rotation", "[dynamics]") {
  const auto s = rotation();
  for (double t : {0.3, 5.0, 40.0}) CHECK_THAT(integrate(s, v2(1.5, 0.5), t, 0.01).norm(), WithinAbs(std::sqrt(2.5), 1e-6));
}

TEST_CASE("RK4 converges at fourth order", "[dynamics]") {
  const auto s = linear_decay();
  const double e1 = std::abs(integrate(s, v1(1.0), 1.0, 0.2)[0] - std::exp(-1.0));
  const double e2 = std::abs(integrate(s, v1(1.0), 1.0, 0.1)[0] - std::exp(-1.0));
  CHECK(e1 / e2 > 14.0);
  CHECK(e1 / e2 < 18.0);
}

TEST_CASE("integration reports blow-up", "[dynamics]") {
  SystemSpec s;
  s.name = "blowup";
  s.dim = 1;
  s.field = [](const Eigen::Ref<const Vec>& x, Eigen::Ref<Vec> dx) { dx[0] = x[0] * x[0]; };
  CHECK_THROWS_AS(integrate(s, v1(1.0), 5.0, 0.01), NonFiniteError);
  CHECK_THROWS_AS(integrate(s, v1(1.0), -1.0, 0.01), ConfigError);
}

TEST_CASE("attractors of the 1D bistable system", "[dynamics]") {
  const auto s = builtin_system("bistable1d");
  const auto a = find_attractors(s, 32, 1);
  REQUIRE(a.size() == 2);
  CHECK_THAT(a[0].representative[0], WithinAbs(-1.0, 1e-6));
  CHECK_THAT(a[1].representative[0], WithinAbs(1.0, 1e-6));
  for (const auto& x : a) CHECK(s.f(x.representative).norm() < 1e-6);
}

TEST_CASE("attractors of the Duffing oscillator", "[dynamics]") {
  const auto s = builtin_system("duffing2d");
  const auto a = find_attractors(s, 32, 2);
  REQUIRE(a.size() == 2);
  CHECK((a[0].representative - v2(-1.0, 0.0)).norm() < 1e-5);
  CHECK((a[1].representative - v2(1.0, 0.0)).norm() < 1e-5);
}

TEST_CASE("limit cycles of the two-cycle system", "[dynamics]") {
  const auto s = builtin_system("two_limit_cycles");
  const auto a = find_attractors(s, 24, 3);
  REQUIRE(a.size() == 2);
  CHECK(a[0].kind == AttractorKind::limit_cycle);
  CHECK_THAT(a[0].radius, WithinAbs(1.0, 1e-3));
  CHECK_THAT(a[1].radius, WithinAbs(3.0, 1e-3));
}

TEST_CASE("basin classification", "[dynamics]") {
  const auto s = builtin_system("bistable1d");
  const auto a = find_attractors(s, 16, 1);
  CHECK(classify_basin(s, v1(0.5), a) == 1);
  CHECK(classify_basin(s, v1(-3.0), a) == 0);
  CHECK(classify_basin(s, v1(0.0), a) == BasinLabel::unresolved);
  for (const auto& x : a) CHECK(classify_basin(s, x.representative, a) == x.id);
  CHECK_THROWS_AS(classify_basin(s, v1(0.5), {}), ConfigError);
}

TEST_CASE("limit-cycle basins follow the radial dynamics", "[dynamics]") {
  const auto s = builtin_system("two_limit_cycles");
  const auto a = find_attractors(s, 24, 3);
  REQUIRE(a.size() == 2);
  CHECK(classify_basin(s, v2(2.5, 0.0), a) == 1);
  CHECK(classify_basin(s, v2(0.0, 1.5), a) == 0);
  for (double r0 : {0.5, 1.7, 2.2, 3.8}) {
    const double r = radial_endpoint(r0, s.t_max, s.dt);
    const int want = std::abs(r - 1.0) < 0.2 ? 0 : 1;
    CHECK(classify_basin(s, v2(r0 / std::sqrt(2.0), r0 / std::sqrt(2.0)), a) == want);
  }
}

TEST_CASE("divergent trajectories are labelled distinctly", "[dynamics]") {
  SystemSpec s;
  s.name = "blowup";
  s.dim = 1;
  s.field = [](const Eigen::Ref<const Vec>& x, Eigen::Ref<Vec> dx) { dx[0] = x[0] * x[0]; };
  std::vector<Attractor> a{{0, v1(-100.0), AttractorKind::fixed_point, 0.0}};
  CHECK(classify_basin(s, v1(1.0), a) == BasinLabel::diverged);
}

TEST_CASE("kinetic energy", "[dynamics]") {
  CHECK(kinetic_energy(builtin_system("bistable1d"), v1(2.0)) == 36.0);
  CHECK(kinetic_energy(builtin_system("bistable1d"), v1(1.0)) == 0.0);
  CHECK(kinetic_energy(builtin_system("duffing2d"), v2(0.0, 1.0)) == 1.25);
}

TEST_CASE("basin labels are stable under halving dt", "[dynamics]") {
  std::mt19937_64 rng(4);
  for (const std::string name : {"bistable1d", "duffing2d"}) {
    const auto s = builtin_system(name);
    const auto a = attractors_of(s, 32, 0);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    int agree = 0;
    for (int i = 0; i < 200; ++i) {
      Vec x(s.dim);
      for (Eigen::Index k = 0; k < s.dim; ++k) x[k] = u(rng);
      agree += classify_basin(s, x, a, s.dt) == classify_basin(s, x, a, s.dt / 2);
    }
    INFO(name);
    CHECK(agree == 200);
  }
}

TEST_CASE("embedded bistable basins follow the first frame axis", "[dynamics]") {
  const auto s = builtin_system("embedded_bistable", {{"N", "8"}, {"seed", "3"}});
  const Vec q = s.frame.col(0);
  CHECK_THAT((s.frame.transpose() * s.frame - Mat::Identity(8, 8)).norm(), WithinAbs(0.0, 1e-12));
  const auto a = attractors_of(s);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  int checked = 0, agree = 0;
  while (checked < 1000) {
    Vec x(8);
    for (auto& c : x) c = n(rng);
    const double p = q.dot(x);
    if (std::abs(p) <= 0.05) continue;
    ++checked;
    agree += classify_basin(s, x, a) == (p > 0 ? 1 : 0);
  }
  CHECK(agree == 1000);
}

TEST_CASE("gLV trajectories stay nonnegative", "[dynamics]") {
  const auto s = builtin_system("glv");
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (int i = 0; i < 20; ++i) {
    Vec x = v2(u(rng), i % 5 == 0 ? 0.0 : u(rng));
    double lowest = x.minCoeff();
    integrate_with(s, x, 30.0, s.dt, [&](const Vec& z, double) {
      lowest = std::min(lowest, z.minCoeff());
      return false;
    });
    CHECK(lowest >= -1e-9);
  }
}

TEST_CASE("fixed-point refinement converges by Newton", "[dynamics]") {
  const auto s = builtin_system("duffing2d");
  auto p = refine_fixed_point(s, v2(0.9, 0.1));
  REQUIRE(p);
  CHECK(s.f(*p).norm() < 1e-10);
}
