// sepx: train Koopman eigenfunctions and locate separatrices from the shell.

#include "sepx/commands.hpp"

#include "CLI11.hpp"

#include <iostream>
#include <thread>

namespace {

using namespace sepx;

struct Common {
  std::string config;
  std::string system;
  std::vector<std::string> sys_params;
  std::string checkpoint;
  std::string out;
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "Run configuration file");
  app->add_option("--system", c.system, "Built-in system name (uses its preset when no config is given)");
  app->add_option("--sys-param", c.sys_params, "System parameter override key=value (repeatable)");
  app->add_option("--out", c.out, "Output directory (default: [output] dir, then $SEPX_OUT_DIR, then .)");
  app->add_option("--seed", c.seed, "Seed override");
  app->add_option("--threads", c.threads, "Worker cap; 1 is bit-reproducible (default: hardware threads)");
}

/// Config from --config, else the preset for --system; --sys-param and --seed
/// are applied on top.
RunConfig resolve_config(const Common& c, bool require_preset) {
  RunConfig rc;
  if (!c.config.empty()) {
    rc = load_run_config(c.config);
    if (!c.system.empty() && c.system != rc.system)
      throw ConfigError("--system '" + c.system + "' disagrees with the config's system '" + rc.system + "'");
  } else if (!c.system.empty()) {
    if (require_preset) {
      rc = preset_config(c.system);
    } else {
      rc.system = c.system;
    }
  } else {
    throw ConfigError("give --config or --system");
  }
  for (const auto& kv : c.sys_params) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--sys-param expects key=value, got '" + kv + "'");
    rc.system_params[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  if (c.seed) rc.train.seed = *c.seed;
  return rc;
}

std::pair<int, int> parse_pair(const std::string& text) {
  const Vec v = parse_vec(text);
  if (v.size() != 2) throw ConfigError("--pair expects two attractor ids");
  return {static_cast<int>(v[0]), static_cast<int>(v[1])};
}

Box2 parse_box(const std::string& text) {
  const Vec v = parse_vec(text);
  if (v.size() != 4) throw ConfigError("--bbox expects lo_x,lo_y,hi_x,hi_y");
  Box2 b;
  b.lo = {v[0], v[1]};
  b.hi = {v[2], v[3]};
  return b;
}

ScalarField field_for(const std::string& checkpoint, const std::string& oracle, const SystemSpec& s) {
  if (!oracle.empty() && !checkpoint.empty()) throw ConfigError("give either --checkpoint or --oracle, not both");
  if (!oracle.empty()) return oracle_field(oracle, s);
  if (checkpoint.empty()) throw ConfigError("--checkpoint is required");
  return checkpoint_field(checkpoint, s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Separatrix location with positive-eigenvalue Koopman eigenfunctions"};
  app.require_subcommand(1);
  Common c;

  auto* train = app.add_subcommand("train", "Train a KEF model; writes model.ckpt, train.csv, summary.txt");
  add_common(train, c);
  std::optional<double> lambda;
  train->add_option("--lambda", lambda, "Eigenvalue override");

  auto* sweep = app.add_subcommand("sweep", "Train one model per eigenvalue; writes sweep.csv");
  add_common(sweep, c);
  std::string lambdas;
  sweep->add_option("--lambda", lambdas, "Comma-separated eigenvalues")->required();

  auto* locate = app.add_subcommand("locate", "Zero level set (levelset2d) or a bisection seed point (seedpoint)");
  add_common(locate, c);
  locate->add_option("--checkpoint", c.checkpoint, "Model checkpoint")->required();
  std::string mode = "levelset2d", bbox = "-2,-2,2,2", pair = "0,1";
  int grid = 200;
  locate->add_option("--mode", mode, "levelset2d or seedpoint");
  locate->add_option("--bbox", bbox, "lo_x,lo_y,hi_x,hi_y in plane coordinates");
  locate->add_option("--grid", grid, "Nodes per side");
  locate->add_option("--pair", pair, "Attractor ids a,b");

  auto* curves = app.add_subcommand("curves", "Hermite-curve validation; writes crossings CSVs, prints curve_r2");
  add_common(curves, c);
  std::string oracle;
  int n_curves = 50;
  double sigma = 0.5;
  curves->add_option("--checkpoint", c.checkpoint, "Model checkpoint");
  curves->add_option("--oracle", oracle, "Closed-form field instead of a checkpoint (analytic1d, embedded)");
  curves->add_option("--n-curves", n_curves, "Number of curves");
  curves->add_option("--sigma", sigma, "Tangent noise scale");
  curves->add_option("--pair", pair, "Attractor ids a,b");

  auto* perturb = app.add_subcommand("perturb", "Minimal perturbation toward a target basin");
  add_common(perturb, c);
  std::string x_base;
  int target = 1;
  perturb->add_option("--checkpoint", c.checkpoint, "Model checkpoint");
  perturb->add_option("--oracle", oracle, "Closed-form field instead of a checkpoint (analytic1d, embedded)");
  perturb->add_option("--x-base", x_base, "Comma-separated base state")->required();
  perturb->add_option("--target", target, "Target attractor id")->required();

  auto* basins = app.add_subcommand("basins", "Brute-force basin map; writes basins.csv and basins.json");
  add_common(basins, c);
  basins->add_option("--bbox", bbox, "lo_x,lo_y,hi_x,hi_y in plane coordinates");
  basins->add_option("--grid", grid, "Nodes per side");
  basins->add_option("--pair", pair, "Attractor ids spanning the plane for systems above 2D");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : exit_code::config;
  }

  set_thread_cap(c.threads ? c.threads : std::max(1u, std::thread::hardware_concurrency()));
  std::ostream& out = std::cout;
  std::ostream& err = std::cerr;

  if (train->parsed()) {
    return run_guarded(err, [&] {
      RunConfig rc = resolve_config(c, true);
      if (lambda) rc.train.lambda = *lambda;
      return cmd_train(rc, resolve_out_dir(c.out, rc.out_dir), out, err);
    });
  }
  if (sweep->parsed()) {
    return run_guarded(err, [&] {
      const RunConfig rc = resolve_config(c, true);
      const Vec l = parse_vec(lambdas);
      return cmd_sweep(rc, {l.data(), l.data() + l.size()}, resolve_out_dir(c.out, rc.out_dir), out, err);
    });
  }
  return run_guarded(err, [&] {
    const RunConfig rc = resolve_config(c, false);
    const SystemSpec s = make_system(rc);
    const std::string dir = resolve_out_dir(c.out, rc.out_dir);
    const std::uint64_t seed = c.seed.value_or(rc.train.seed);
    if (locate->parsed()) {
      LocateOptions o;
      o.mode = mode;
      o.box = parse_box(bbox);
      o.grid = grid;
      o.pair = parse_pair(pair);
      return cmd_locate(field_for(c.checkpoint, "", s), s, o, dir, out, err);
    }
    if (curves->parsed()) {
      CurveOptions o;
      o.n_curves = n_curves;
      o.sigma = sigma;
      o.seed = seed;
      o.pair = parse_pair(pair);
      return cmd_curves(field_for(c.checkpoint, oracle, s), s, o, dir, out, err);
    }
    if (perturb->parsed())
      return cmd_perturb(field_for(c.checkpoint, oracle, s), s, parse_vec(x_base), target, seed, dir, out, err);
    return cmd_basins(s, parse_box(bbox), grid, dir, out, err, parse_pair(pair));
  });
}
