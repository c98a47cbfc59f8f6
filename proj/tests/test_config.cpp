#include "catch_amalgamated.hpp"

#include "sepx/config.hpp"

#include <sstream>

using namespace sepx;
using Catch::Matchers::WithinAbs;

namespace {

RunConfig parse(const std::string& text) {
  std::istringstream is(text);
  return parse_run_config(is, "test");
}

}  // namespace

TEST_CASE("config files fill every section", "[config]") {
  const auto rc = parse(
      "[system]\nname = duffing2d\ndelta = 0.3\n"
      "[model]\nkind = rbf\nunits = 40\n"
      "[train]\nlambda = 2\ngamma_bal = 0.1\nbatch = 128\niterations = 7\nlr = 1e-3\nweight_decay = 0\nseed = 9\n"
      "[sampling]\nkind = isotropic\ncenter = 0.5, -0.5\nsigmas = 0.1, 1\npreview = 50\n"
      "[output]\ndir = /tmp/x\n");
  CHECK(rc.system == "duffing2d");
  CHECK(rc.system_params.at("delta") == "0.3");
  CHECK(rc.model.kind == ModelKind::rbf);
  CHECK(rc.model.units == 40);
  CHECK(rc.train.lambda == 2.0);
  CHECK(rc.train.batch == 128);
  CHECK(rc.train.iterations == 7);
  CHECK(rc.train.lr == 1e-3);
  CHECK(rc.train.seed == 9u);
  REQUIRE(rc.sampling.center.has_value());
  CHECK((*rc.sampling.center)[1] == -0.5);
  CHECK(rc.sampling.sigmas == std::vector<double>{0.1, 1.0});
  CHECK(rc.sampling.preview == 50);
  CHECK(rc.out_dir == "/tmp/x");
}

TEST_CASE("unknown keys and sections are rejected", "[config]") {
  CHECK_THROWS_AS(parse("[system]\nname = bistable1d\n[train]\nlearning_rate = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse("[system]\nname = bistable1d\n[optimizer]\nlr = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse("[model]\nkind = resnet\n"), ConfigError);
  CHECK_THROWS_AS(parse("[system]\nname = bistable1d\n[model]\nkind = mlp\n"), ConfigError);
  CHECK_THROWS_AS(parse("[system]\nname = bistable1d\n[train]\nbatch = many\n"), ConfigError);
  CHECK_THROWS_AS(parse("[system]\nname = bistable1d\n[sampling]\npair = 0\n"), ConfigError);
  CHECK_THROWS_AS(parse("[system\nname = bistable1d\n"), ConfigError);
}

TEST_CASE("unknown system parameters fail when the system is built", "[config]") {
  const auto rc = parse("[system]\nname = bistable1d\nwobble = 2\n");
  CHECK_THROWS_AS(make_system(rc), ConfigError);
  const auto missing = parse("[system]\nname = glv\nparams_file = /nonexistent/glv.csv\n");
  CHECK_THROWS_AS(make_system(missing), ConfigError);
  CHECK_THROWS_AS(load_run_config("/nonexistent/run.ini"), ConfigError);
}

TEST_CASE("every preset parses and builds its system", "[config]") {
  for (const char* name : {"bistable1d", "duffing2d", "two_limit_cycles", "glv", "embedded_bistable"}) {
    const auto rc = preset_config(name);
    CHECK(rc.system == name);
    CHECK_NOTHROW(make_system(rc));
  }
  const auto b = preset_config("bistable1d");
  CHECK(b.model.depth == 10);
  CHECK(b.model.width == 100);
  CHECK(b.train.batch == 1000);
  CHECK(b.train.lr == 1e-4);
  CHECK(b.sampling.sigmas == std::vector<double>{1.0, 3.0});
  CHECK_THROWS_AS(preset_config("pendulum"), ConfigError);
}

TEST_CASE("distributions from an explicit center", "[config]") {
  const auto rc = preset_config("duffing2d");
  const auto s = make_system(rc);
  const auto ds = make_distributions(rc, s, attractors_of(s, 32, 0));
  REQUIRE(ds.size() == 4);
  CHECK(ds[2].sigma == 1.0);
  CHECK(ds[0].mean.isZero(0.0));
  CHECK(ds[0].seed != ds[1].seed);
  const VectorBatch pv = preview_batch(ds, 10);
  CHECK(pv.rows() == 2);
  CHECK(pv.cols() == 40);
}

TEST_CASE("distributions centered on a bisected separatrix point", "[config]") {
  auto rc = parse("[system]\nname = bistable1d\nshift = 0.3\n[sampling]\ncenter = separatrix\nsigmas = 0.5\n");
  const auto s = make_system(rc);
  const auto a = attractors_of(s, 16, 0);
  const auto ds = make_distributions(rc, s, a);
  REQUIRE(ds.size() == 1);
  CHECK_THAT(ds[0].mean[0], WithinAbs(0.3, 1e-6));
  rc.sampling.pair = {0, 7};
  CHECK_THROWS_AS(make_distributions(rc, s, a), ConfigError);
  rc.sampling.pair = {0, 1};
  rc.sampling.sigmas = {0.5, -1.0};
  CHECK_THROWS_AS(make_distributions(rc, s, a), ConfigError);
}

TEST_CASE("center dimension must match the system", "[config]") {
  const auto rc = parse("[system]\nname = duffing2d\n[sampling]\ncenter = 0\n");
  const auto s = make_system(rc);
  CHECK_THROWS_AS(make_distributions(rc, s, attractors_of(s, 32, 0)), DimensionError);
}

TEST_CASE("anisotropic preset follows the attractor axis", "[config]") {
  auto rc = preset_config("embedded_bistable");
  rc.system_params["N"] = "4";
  rc.sampling.forward_time = 0.0;
  const auto s = make_system(rc);
  const auto ds = make_distributions(rc, s, attractors_of(s));
  REQUIRE(ds.size() == 3);
  const Vec q = s.frame.col(0);
  CHECK(std::abs(ds[0].axis.dot(q)) > 1.0 - 1e-9);
  CHECK(ds[1].sigma_a == 1.0);
  CHECK(ds[1].sigma_b == 0.5);
  CHECK(std::abs(ds[0].mean.dot(q)) < 1e-5);
}
