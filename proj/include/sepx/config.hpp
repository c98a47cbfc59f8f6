#pragma once

// Run configuration: a sectioned key = value file ([system], [model],
// [train], [sampling], [output]). Unknown sections and keys are errors.

#include "sepx/oracles.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace sepx {

struct SamplingConfig {
  DistKind kind = DistKind::isotropic;
  /// Coordinates, or empty to bisect for a separatrix point between `pair`.
  std::optional<StatePoint> center;
  std::pair<int, int> pair{0, 1};
  std::vector<double> sigmas{1.0};
  double sigma_a = 1.0;
  double sigma_b = 1.0;
  /// > 0: evolve forward_samples points this long and refit the covariance.
  double forward_time = 0.0;
  Eigen::Index forward_samples = 300;
  Eigen::Index preview = 500;
};

struct RunConfig {
  std::string system;
  SystemParams system_params;
  ModelShape model;
  TrainConfig train;  // distributions are filled in by make_distributions
  SamplingConfig sampling;
  std::string out_dir;
};

namespace detail {

inline double to_real(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0') throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  return x;
}

inline long long to_int(const std::string& key, const std::string& v) {
  const double x = to_real(key, v);
  if (x != std::floor(x)) throw ConfigError("config: '" + key + "' expects an integer, got '" + v + "'");
  return static_cast<long long>(x);
}

inline std::vector<double> to_list(const std::string& key, const std::string& v) {
  try {
    const Vec x = parse_vec(v);
    return {x.data(), x.data() + x.size()};
  } catch (const ConfigError&) {
    throw ConfigError("config: '" + key + "' expects a comma-separated list of numbers");
  }
}

inline DistKind parse_dist_kind(const std::string& v) {
  if (v == "isotropic") return DistKind::isotropic;
  if (v == "anisotropic") return DistKind::anisotropic;
  if (v == "gamma") return DistKind::gamma;
  throw ConfigError("config: sampling kind must be isotropic, anisotropic or gamma, got '" + v + "'");
}

}  // namespace detail

inline RunConfig parse_run_config(std::istream& is, const std::string& origin = "config") {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  RunConfig rc;
  bool have_system = false;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ConfigError(origin + ": key '" + section + "' outside of a section");
    for (const auto& [key, node] : body) {
      const std::string v = node.data();
      const std::string where = section + "." + key;
      auto unknown = [&] { throw ConfigError(origin + ": unknown key '" + where + "'"); };
      if (section == "system") {
        if (key == "name") {
          rc.system = v;
          have_system = true;
        } else {
          rc.system_params[key] = v;
        }
      } else if (section == "model") {
        if (key == "kind") rc.model.kind = parse_model_kind(v);
        else if (key == "depth") rc.model.depth = detail::to_int(where, v);
        else if (key == "width") rc.model.width = detail::to_int(where, v);
        else if (key == "units") rc.model.units = detail::to_int(where, v);
        else unknown();
      } else if (section == "train") {
        if (key == "lambda") rc.train.lambda = detail::to_real(where, v);
        else if (key == "gamma_bal") rc.train.gamma_bal = detail::to_real(where, v);
        else if (key == "batch") rc.train.batch = detail::to_int(where, v);
        else if (key == "iterations") rc.train.iterations = detail::to_int(where, v);
        else if (key == "lr") rc.train.lr = detail::to_real(where, v);
        else if (key == "weight_decay") rc.train.weight_decay = detail::to_real(where, v);
        else if (key == "seed") rc.train.seed = static_cast<std::uint64_t>(detail::to_int(where, v));
        else unknown();
      } else if (section == "sampling") {
        auto& sc = rc.sampling;
        if (key == "kind") {
          sc.kind = detail::parse_dist_kind(v);
        } else if (key == "center") {
          if (v == "separatrix") sc.center.reset();
          else sc.center = parse_vec(v);
        } else if (key == "pair") {
          const auto p = detail::to_list(where, v);
          if (p.size() != 2) throw ConfigError(origin + ": sampling.pair expects two attractor ids");
          sc.pair = {static_cast<int>(p[0]), static_cast<int>(p[1])};
        } else if (key == "sigmas") {
          sc.sigmas = detail::to_list(where, v);
        } else if (key == "sigma_a") {
          sc.sigma_a = detail::to_real(where, v);
        } else if (key == "sigma_b") {
          sc.sigma_b = detail::to_real(where, v);
        } else if (key == "forward_time") {
          sc.forward_time = detail::to_real(where, v);
        } else if (key == "forward_samples") {
          sc.forward_samples = detail::to_int(where, v);
        } else if (key == "preview") {
          sc.preview = detail::to_int(where, v);
        } else {
          unknown();
        }
      } else if (section == "output") {
        if (key == "dir") rc.out_dir = v;
        else unknown();
      } else {
        throw ConfigError(origin + ": unknown section '[" + section + "]'");
      }
    }
  }
  if (!have_system) throw ConfigError(origin + ": [system] name is required");
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_run_config(in, path);
}

/// Desk-scale defaults per built-in system, as config text.
inline std::string preset_config_text(const std::string& system) {
  const std::string train_default =
      "[train]\nlambda = 1\ngamma_bal = 0.05\nbatch = 1000\niterations = 1000\nlr = 1e-4\nweight_decay = 1e-5\n"
      "seed = 0\n";
  // the 1e-3 step is for the planar and embedded runs, which stall at 1e-4 within the desk budget
  const std::string train_fast =
      "[train]\nlambda = 1\ngamma_bal = 0.05\nbatch = 1000\niterations = 1000\nlr = 1e-3\nweight_decay = 1e-5\n"
      "seed = 0\n";
  const std::string resnet = "[model]\nkind = resnet\ndepth = 10\nwidth = 100\n";
  if (system == "bistable1d")
    return "[system]\nname = bistable1d\n" + resnet + train_default +
           "[sampling]\nkind = isotropic\ncenter = 0\nsigmas = 1, 3\n";
  if (system == "duffing2d")
    return "[system]\nname = duffing2d\n" + resnet + train_fast +
           "[sampling]\nkind = isotropic\ncenter = 0, 0\nsigmas = 0.1, 0.5, 1, 2\n";
  if (system == "two_limit_cycles")
    return "[system]\nname = two_limit_cycles\n[model]\nkind = rbf\nunits = 300\n"
           "[train]\nlambda = 1\ngamma_bal = 0\nbatch = 1000\niterations = 1000\nlr = 1e-3\nweight_decay = 1e-5\n"
           "seed = 0\n[sampling]\nkind = isotropic\ncenter = 0, 0\nsigmas = 1, 2, 3\n";
  if (system == "glv")
    return "[system]\nname = glv\n" + resnet +
           "[train]\nlambda = 0.1\ngamma_bal = 0.05\nbatch = 1000\niterations = 1000\nlr = 1e-4\n"
           "weight_decay = 1e-5\nseed = 0\n[sampling]\nkind = gamma\ncenter = separatrix\npair = 0, 1\n"
           "sigmas = 0.01, 0.1, 0.3, 1\n";
  if (system == "embedded_bistable")
    return "[system]\nname = embedded_bistable\nN = 32\n" + resnet + train_fast +
           "[sampling]\nkind = anisotropic\ncenter = separatrix\npair = 0, 1\nsigma_a = 1\nsigma_b = 0.5\n"
           "sigmas = 0.5, 1, 1.5\n";
  throw ConfigError("no preset for system '" + system + "'");
}

inline RunConfig preset_config(const std::string& system) {
  std::istringstream is(preset_config_text(system));
  return parse_run_config(is, "preset " + system);
}

inline SystemSpec make_system(const RunConfig& rc) {
  for (const char* key : {"params_file", "weights_file"}) {
    auto it = rc.system_params.find(key);
    if (it != rc.system_params.end() && !std::filesystem::exists(it->second))
      throw ConfigError("config: referenced file '" + it->second + "' does not exist");
  }
  return builtin_system(rc.system, rc.system_params);
}

/// Attractor lookup by id.
inline const Attractor& find_attractor(const std::vector<Attractor>& attractors, int id) {
  for (const auto& a : attractors)
    if (a.id == id) return a;
  throw ConfigError("no attractor with id " + std::to_string(id) + " (found " + std::to_string(attractors.size()) +
                    ")");
}

/// One distribution per sigma. Means come from the config or from bisection
/// between the configured attractor pair.
inline std::vector<Distribution> make_distributions(const RunConfig& rc, const SystemSpec& s,
                                                    const std::vector<Attractor>& attractors) {
  const auto& sc = rc.sampling;
  if (sc.sigmas.empty()) throw ConfigError("config: sampling.sigmas is empty");
  for (double v : sc.sigmas)
    if (!(v > 0.0)) throw ConfigError("config: sampling sigmas must be > 0");
  StatePoint mean;
  const bool need_pair = !sc.center || sc.kind == DistKind::anisotropic;
  const Attractor* a = need_pair ? &find_attractor(attractors, sc.pair.first) : nullptr;
  const Attractor* b = need_pair ? &find_attractor(attractors, sc.pair.second) : nullptr;
  if (sc.center) {
    mean = *sc.center;
    require_dim(mean.size(), s.dim, "sampling.center");
  } else {
    mean = find_separatrix_point(s, a->representative, b->representative, attractors, 1e-6);
  }
  const std::uint64_t seed = rc.train.seed;
  std::vector<Distribution> out;
  std::optional<Distribution> base;
  if (sc.kind == DistKind::anisotropic) {
    Distribution d = anisotropic_from_attractors(a->representative, b->representative, sc.sigma_a, sc.sigma_b,
                                                 derive_seed(seed, 0xA5));
    d.mean = mean;
    if (sc.forward_time > 0.0) {
      Distribution fitted = forward_invariant_adjust(d, s, sc.forward_time, sc.forward_samples);
      fitted.mean = mean;
      base = fitted;
    } else {
      base = d;
    }
  }
  for (std::size_t j = 0; j < sc.sigmas.size(); ++j) {
    const double sig = sc.sigmas[j];
    const std::uint64_t dseed = derive_seed(seed, 1 + j);
    Distribution d;
    if (sc.kind == DistKind::isotropic) {
      d = isotropic(mean, sig, dseed);
    } else if (sc.kind == DistKind::gamma) {
      d = gamma_per_coordinate(mean, sig, dseed);
    } else {
      d = *base;
      if (d.kind == DistKind::anisotropic) {
        d.sigma_a *= sig;
        d.sigma_b *= sig;
      } else {
        d.scale = sig;
      }
      d.seed = dseed;
    }
    if (sc.forward_time > 0.0 && sc.kind == DistKind::isotropic) {
      Distribution fitted = forward_invariant_adjust(d, s, sc.forward_time, sc.forward_samples);
      fitted.mean = mean;
      fitted.seed = dseed;
      d = fitted;
    }
    d.validate();
    out.push_back(std::move(d));
  }
  return out;
}

/// Pooled preview draws from every distribution, used for initialization.
inline VectorBatch preview_batch(const std::vector<Distribution>& ds, Eigen::Index per_dist) {
  if (ds.empty()) throw ConfigError("preview_batch: no distributions");
  VectorBatch out(ds.front().dim(), per_dist * static_cast<Eigen::Index>(ds.size()));
  for (std::size_t j = 0; j < ds.size(); ++j)
    out.middleCols(static_cast<Eigen::Index>(j) * per_dist, per_dist) = sample(ds[j], per_dist, std::uint64_t{1} << 41);
  return out;
}

}  // namespace sepx
