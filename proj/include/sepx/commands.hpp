#pragma once

// Subcommand bodies behind the sepx executable. Each returns a process exit
// code: 0 success, 2 configuration, 3 training abort, 4 geometric failure,
// 5 verification failure.

#include "sepx/config.hpp"

#include <cstdlib>
#include <iostream>

namespace sepx {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int other = 1;
inline constexpr int config = 2;
inline constexpr int training = 3;
inline constexpr int geometry = 4;
inline constexpr int verification = 5;
}  // namespace exit_code

/// Runs fn and maps the error hierarchy onto exit codes.
template <typename Fn>
int run_guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::config;
  } catch (const DomainError& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::config;
  } catch (const NonFiniteError& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::training;
  } catch (const GeometryError& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::geometry;
  } catch (const VerificationError& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::verification;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::other;
  }
}

/// --out, then the config's [output] dir, then $SEPX_OUT_DIR, then ".".
inline std::string resolve_out_dir(const std::string& flag, const std::string& from_config = {}) {
  if (!flag.empty()) return flag;
  if (!from_config.empty()) return from_config;
  if (const char* env = std::getenv("SEPX_OUT_DIR"); env && *env) return env;
  return ".";
}

inline std::ofstream open_output(const std::string& dir, const std::string& name) {
  std::filesystem::create_directories(dir);
  const auto path = std::filesystem::path(dir) / name;
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write '" + path.string() + "'");
  return os;
}

inline KefModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint '" + path + "'");
  return read_checkpoint(in);
}

// ---------------------------------------------------------------------------
// Reference fields for oracle modes

/// "analytic1d": x / sqrt|1 - x^2| on bistable1d. "embedded": the same
/// profile of the bistable coordinate q1 . x on embedded_bistable. The
/// singular points evaluate to +-infinity rather than throwing so grids that
/// touch the attractors stay usable.
inline ScalarField oracle_field(const std::string& name, const SystemSpec& s) {
  auto saturating = [](double u) {
    if (std::abs(1.0 - u * u) < 1e-9) return std::copysign(std::numeric_limits<double>::infinity(), u);
    return analytic_kef_1d(u);
  };
  if (name == "analytic1d") {
    require_dim(s.dim, 1, "oracle analytic1d");
    return ScalarField::from_function(1, [saturating](const StatePoint& x) { return saturating(x[0]); });
  }
  if (name == "embedded") {
    if (s.frame.size() == 0) throw ConfigError("oracle 'embedded' needs the embedded_bistable system");
    const Vec q = s.frame.col(0);
    return ScalarField(
        s.dim,
        [q, saturating](const Mat& x) {
          Vec out(x.cols());
          for (Eigen::Index i = 0; i < x.cols(); ++i) out[i] = saturating(q.dot(x.col(i)));
          return out;
        },
        [q](const StatePoint& x) { return Vec(analytic_kef_1d_derivative(q.dot(x)) * q); });
  }
  throw ConfigError("unknown oracle '" + name + "' (expected analytic1d or embedded)");
}

/// A checkpoint whose dimension must match the system.
inline ScalarField checkpoint_field(const std::string& path, const SystemSpec& s) {
  KefModel m = load_checkpoint(path);
  if (m.input_dim() != s.dim)
    throw DimensionError("checkpoint '" + path + "' has input dimension " + std::to_string(m.input_dim()) +
                         " but system " + s.name + " has dimension " + std::to_string(s.dim));
  return ScalarField::from_model(std::move(m));
}

/// Plane through the origin spanned by two attractors, or through their
/// midpoint along their difference when they are collinear with the origin.
inline Slice2D attractor_plane(const SystemSpec& s, const Attractor& a, const Attractor& b) {
  if (s.dim == 1) return {Vec::Zero(1), Vec::Ones(1), Vec::Zero(1)};
  if (s.dim == 2) return Slice2D::identity2();
  Slice2D sl;
  const Vec pa = a.representative, pb = b.representative;
  Vec u = pa, v = pb;
  sl.origin = Vec::Zero(s.dim);
  if (u.norm() > 1e-9) {
    u.normalize();
    v -= v.dot(u) * u;
  }
  if (u.norm() <= 1e-9 || v.norm() <= 1e-6 * (1.0 + pb.norm())) {
    sl.origin = 0.5 * (pa + pb);
    u = (pb - pa).normalized();
    Eigen::Index k = 0;
    u.cwiseAbs().minCoeff(&k);
    v = Vec::Unit(s.dim, k) - u[k] * u;
  }
  sl.u = u;
  sl.v = v.normalized();
  return sl;
}

// ---------------------------------------------------------------------------
// train / sweep

struct TrainOutcome {
  TrainResult result;
  TrainConfig config;
  double final_ratio = 0.0;
};

/// Builds the system, distributions and initial model from a run config and
/// trains it. Distributions that do not straddle two basins are reported on
/// `warn`.
inline TrainOutcome train_from_config(const RunConfig& rc, std::ostream* warn = nullptr,
                                      const IterationHook& hook = {}) {
  const SystemSpec s = make_system(rc);
  const auto attractors = attractors_of(s);
  TrainConfig cfg = rc.train;
  cfg.distributions = make_distributions(rc, s, attractors);
  cfg.validate();
  if (warn && attractors.size() >= 2) {
    for (std::size_t j = 0; j < cfg.distributions.size(); ++j) {
      const auto frac = basin_fractions(s, attractors, cfg.distributions[j]);
      if (!is_bisected(frac))
        *warn << "warning: sampling distribution " << j + 1 << " is not split roughly evenly between two basins\n";
    }
  }
  ModelShape shape = rc.model;
  shape.d_in = s.dim;
  const KefModel init = init_model(shape, cfg.seed, preview_batch(cfg.distributions, rc.sampling.preview));
  TrainOutcome out{train(init, s, cfg, hook), cfg, 0.0};
  out.final_ratio = final_ratio_loss(out.result.model, s, cfg, cfg.seed);
  return out;
}

inline int cmd_train(const RunConfig& rc, const std::string& out_dir, std::ostream& out, std::ostream& err) {
  return run_guarded(err, [&] {
    try {
      const TrainOutcome t = train_from_config(rc, &err);
      {
        auto os = open_output(out_dir, "model.ckpt");
        write_checkpoint(os, t.result.model);
      }
      {
        auto os = open_output(out_dir, "train.csv");
        t.result.record.write_csv(os);
      }
      const std::string line = "final_L_ratio=" + fmt17(t.final_ratio);
      auto os = open_output(out_dir, "summary.txt");
      os << line << '\n';
      out << line << '\n';
      return exit_code::ok;
    } catch (const TrainingAborted& e) {
      auto os = open_output(out_dir, "model_last_good.ckpt");
      write_checkpoint(os, e.last_good);
      auto rec = open_output(out_dir, "train.csv");
      e.record.write_csv(rec);
      throw;
    }
  });
}

inline int cmd_sweep(const RunConfig& rc, const std::vector<double>& lambdas, const std::string& out_dir,
                     std::ostream& out, std::ostream& err) {
  return run_guarded(err, [&] {
    if (lambdas.empty()) throw ConfigError("sweep: no lambda values given");
    std::set<double> seen;
    for (double l : lambdas) {
      if (!(l > 0.0)) throw ConfigError("sweep: lambda values must be > 0");
      if (!seen.insert(l).second) throw ConfigError("sweep: duplicate lambda value " + fmt17(l));
    }
    auto os = open_output(out_dir, "sweep.csv");
    os << "lambda,final_L_ratio\n";
    int trained = 0;
    for (double l : lambdas) {
      RunConfig r = rc;
      r.train.lambda = l;
      double v = std::numeric_limits<double>::quiet_NaN();
      try {
        v = train_from_config(r).final_ratio;
        ++trained;
      } catch (const NonFiniteError& e) {
        err << "lambda " << fmt17(l) << ": " << e.what() << '\n';
      }
      os << fmt17(l) << ',' << fmt17(v) << '\n';
      out << "lambda=" << fmt17(l) << " final_L_ratio=" << fmt17(v) << '\n';
    }
    if (trained == 0) throw NonFiniteError("sweep: no lambda value trained successfully");
    return exit_code::ok;
  });
}

// ---------------------------------------------------------------------------
// locate

struct LocateOptions {
  std::string mode = "levelset2d";
  Box2 box{{-2.0, -2.0}, {2.0, 2.0}};
  int grid = 200;
  std::pair<int, int> pair{0, 1};
};

inline int cmd_locate(const ScalarField& psi, const SystemSpec& s, const LocateOptions& o, const std::string& out_dir,
                      std::ostream& out, std::ostream& err) {
  return run_guarded(err, [&] {
    require_dim(psi.dim(), s.dim, "locate: model vs system");
    const auto attractors = attractors_of(s);
    if (o.mode == "seedpoint") {
      const auto& a = find_attractor(attractors, o.pair.first);
      const auto& b = find_attractor(attractors, o.pair.second);
      const StatePoint p = find_separatrix_point(s, a.representative, b.representative, attractors, 1e-6);
      out << "seed_point=" << join17(p) << '\n';
      out << "psi=" << fmt17(psi(p)) << '\n';
      return exit_code::ok;
    }
    if (o.mode != "levelset2d") throw ConfigError("locate: mode must be levelset2d or seedpoint");
    if (s.dim < 2) throw DimensionError("locate levelset2d needs a system of dimension >= 2");
    ScalarField plane = psi;
    if (s.dim > 2) {
      const Slice2D sl = attractor_plane(s, find_attractor(attractors, o.pair.first),
                                         find_attractor(attractors, o.pair.second));
      plane = psi.on_slice(sl.origin, sl.u, sl.v);
    }
    const auto lines = trace_zero_level_2d(plane, o.box, o.grid);
    auto os = open_output(out_dir, "levelset.csv");
    write_levelset_csv(os, lines);
    std::size_t pts = 0;
    for (const auto& l : lines) pts += l.size();
    out << "polylines=" << lines.size() << " points=" << pts << '\n';
    return exit_code::ok;
  });
}

// ---------------------------------------------------------------------------
// curves

struct CurveOptions {
  int n_curves = 50;
  double sigma = 0.5;
  std::uint64_t seed = 0;
  std::pair<int, int> pair{0, 1};
  int n_grid = 100;
};

struct CurveRun {
  std::vector<CurveCrossing> crossings;
  int failed = 0;  // no basin change, or no psi sign change
  double r2 = std::numeric_limits<double>::quiet_NaN();
};

inline CurveRun run_curves(const ScalarField& psi, const SystemSpec& s, const std::vector<Attractor>& attractors,
                           const CurveOptions& o) {
  const auto& a = find_attractor(attractors, o.pair.first);
  const auto& b = find_attractor(attractors, o.pair.second);
  const CurveConstraint constraint = s.nonnegative ? nonnegative_constraint() : CurveConstraint{};
  const auto curves = make_curves(s, a.representative, b.representative, o.sigma, o.n_curves, o.seed, constraint);
  CurveRun run;
  for (std::size_t k = 0; k < curves.size(); ++k) {
    try {
      CurveCrossing c = curve_crossings(s, psi, curves[k], attractors, o.n_grid, static_cast<int>(k));
      if (!c.predicted()) ++run.failed;
      run.crossings.push_back(std::move(c));
    } catch (const GeometryError&) {
      ++run.failed;
    }
  }
  if (run.crossings.size() >= 2) {
    try {
      run.r2 = curve_r2(run.crossings);
    } catch (const GeometryError&) {
    }
  }
  return run;
}

inline int cmd_curves(const ScalarField& psi, const SystemSpec& s, const CurveOptions& o, const std::string& out_dir,
                      std::ostream& out, std::ostream& err) {
  return run_guarded(err, [&] {
    require_dim(psi.dim(), s.dim, "curves: model vs system");
    if (o.pair.first == o.pair.second) throw ConfigError("curves: the two target attractors must differ");
    const auto attractors = attractors_of(s);
    const CurveRun run = run_curves(psi, s, attractors, o);
    {
      auto os = open_output(out_dir, "crossings.csv");
      write_crossings_csv(os, run.crossings);
    }
    {
      auto os = open_output(out_dir, "crossings_summary.csv");
      write_crossing_summary_csv(os, run.crossings);
    }
    out << "curves=" << o.n_curves << " failed=" << run.failed << '\n';
    out << "curve_r2=" << fmt17(run.r2) << '\n';
    if (2 * run.failed > o.n_curves) throw GeometryError("curves: more than half of the curves failed to cross");
    if (std::isnan(run.r2)) throw GeometryError("curves: R^2 is undefined for these crossings");
    return exit_code::ok;
  });
}

// ---------------------------------------------------------------------------
// perturb

inline int cmd_perturb(const ScalarField& psi, const SystemSpec& s, const StatePoint& x_base, int target,
                       std::uint64_t seed, const std::string& out_dir, std::ostream& out, std::ostream& err) {
  return run_guarded(err, [&] {
    require_dim(psi.dim(), s.dim, "perturb: model vs system");
    require_dim(x_base.size(), s.dim, "perturb: x_base");
    const auto attractors = attractors_of(s);
    find_attractor(attractors, target);
    const PerturbationResult r = min_perturbation(psi, s, x_base, target, attractors, seed);
    auto os = open_output(out_dir, "perturbation.txt");
    write_perturbation_report(os, r);
    write_perturbation_report(out, r);
    return exit_code::ok;
  });
}

// ---------------------------------------------------------------------------
// basins

inline int cmd_basins(const SystemSpec& s, const Box2& box, int n, const std::string& out_dir, std::ostream& out,
                      std::ostream& err, std::pair<int, int> pair = {0, 1}) {
  return run_guarded(err, [&] {
    const auto attractors = attractors_of(s);
    Slice2D sl = s.dim == 2 ? Slice2D::identity2() : Slice2D{};
    if (s.dim != 2) {
      if (s.dim == 1 || attractors.size() < 2) sl = {Vec::Zero(s.dim), Vec::Unit(s.dim, 0), Vec::Zero(s.dim)};
      else sl = attractor_plane(s, find_attractor(attractors, pair.first), find_attractor(attractors, pair.second));
    }
    const BasinMap2D m = brute_force_basin_map(s, box, n, attractors, sl);
    {
      auto os = open_output(out_dir, "basins.csv");
      write_basin_map_csv(os, m);
    }
    {
      auto os = open_output(out_dir, "basins.json");
      os << basin_map_sidecar(m).dump(2) << '\n';
    }
    out << "grid=" << n << "x" << n << " boundary_nodes=" << m.boundary_nodes().size() << '\n';
    return exit_code::ok;
  });
}

}  // namespace sepx
