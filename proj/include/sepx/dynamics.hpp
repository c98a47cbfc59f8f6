#pragma once

// Vector fields, fixed-step RK4 integration, attractor discovery and basin
// classification.

#include "sepx/models.hpp"

#include <fstream>
#include <map>
#include <optional>
#include <random>

namespace sepx {

using VectorField = std::function<void(const Eigen::Ref<const Vec>& x, Eigen::Ref<Vec> dx)>;
using SystemParams = std::map<std::string, std::string>;

enum class AttractorKind { fixed_point, limit_cycle };

struct Attractor {
  int id = 0;
  StatePoint representative;
  AttractorKind kind = AttractorKind::fixed_point;
  /// Limit cycles are matched by the norm of the state on the cycle.
  double radius = 0.0;
};

struct SystemSpec {
  std::string name;
  Eigen::Index dim = 1;
  VectorField field;
  double dt = 0.01;
  double t_max = 50.0;
  double attractor_tol = 0.05;
  /// Half-width of the radius band used to match limit cycles at t_max.
  double cycle_band = 0.2;
  std::vector<Attractor> known_attractors;
  /// Box used to seed attractor searches.
  Vec init_lo;
  Vec init_hi;
  /// Orthogonal frame of embedded systems (column 0 is the bistable axis).
  Mat frame;
  /// States restricted to the nonnegative orthant (population models).
  bool nonnegative = false;

  Vec f(const Vec& x) const {
    require_dim(x.size(), dim, name + " state");
    Vec dx(dim);
    field(x, dx);
    return dx;
  }

  void validate() const {
    if (dim < 1) throw ConfigError(name + ": dimension must be >= 1");
    if (!(dt > 0.0)) throw ConfigError(name + ": dt must be > 0");
    if (!(t_max >= dt)) throw ConfigError(name + ": t_max must be >= dt");
    if (!(attractor_tol > 0.0)) throw ConfigError(name + ": attractor_tol must be > 0");
    if (!field) throw ConfigError(name + ": missing vector field");
  }
};

inline double kinetic_energy(const SystemSpec& s, const StatePoint& x) { return s.f(x).squaredNorm(); }

// ---------------------------------------------------------------------------
// RK4

/// Reusable stage storage so inner loops do not allocate.
class Rk4Stepper {
 public:
  explicit Rk4Stepper(const SystemSpec& s) : s_(s), k1_(s.dim), k2_(s.dim), k3_(s.dim), k4_(s.dim), tmp_(s.dim) {}

  void step(Vec& x, double h) {
    s_.field(x, k1_);
    tmp_ = x + 0.5 * h * k1_;
    s_.field(tmp_, k2_);
    tmp_ = x + 0.5 * h * k2_;
    s_.field(tmp_, k3_);
    tmp_ = x + h * k3_;
    s_.field(tmp_, k4_);
    x += (h / 6.0) * (k1_ + 2.0 * k2_ + 2.0 * k3_ + k4_);
  }

 private:
  const SystemSpec& s_;
  Vec k1_, k2_, k3_, k4_, tmp_;
};

/// Calls `visit(x, t)` after every step; stops early when it returns true.
/// Returns the time reached. Throws NonFiniteError on blow-up.
template <typename Visit>
double integrate_with(const SystemSpec& s, Vec& x, double t, double dt, Visit&& visit) {
  if (t < 0.0) throw ConfigError("integrate: negative duration");
  if (!(dt > 0.0)) throw ConfigError("integrate: dt must be > 0");
  require_dim(x.size(), s.dim, "integrate initial state");
  Rk4Stepper stepper(s);
  double now = 0.0;
  while (now < t) {
    const double h = std::min(dt, t - now);
    if (h <= 1e-15 * std::max(1.0, t)) break;
    stepper.step(x, h);
    now += h;
    if (!x.allFinite()) throw NonFiniteError("integrate: state blew up at t=" + fmt17(now));
    if (visit(x, now)) break;
  }
  return now;
}

/// RK4 solution at time t; the last partial step is shortened to land on t.
inline StatePoint integrate(const SystemSpec& s, const StatePoint& x0, double t, double dt) {
  Vec x = x0;
  integrate_with(s, x, t, dt, [](const Vec&, double) { return false; });
  return x;
}

inline StatePoint integrate(const SystemSpec& s, const StatePoint& x0, double t) {
  return integrate(s, x0, t, s.dt);
}

// ---------------------------------------------------------------------------
// Basin classification

/// Attractor id, or one of the two sentinel outcomes.
struct BasinLabel {
  static constexpr int unresolved = -1;
  static constexpr int diverged = -2;
};

inline int classify_basin(const SystemSpec& s, const StatePoint& x0, const std::vector<Attractor>& attractors,
                          double dt) {
  if (attractors.empty()) throw ConfigError("classify_basin: no attractors given");
  require_dim(x0.size(), s.dim, "classify_basin");
  const bool has_cycles = std::any_of(attractors.begin(), attractors.end(),
                                      [](const Attractor& a) { return a.kind == AttractorKind::limit_cycle; });
  const double tol2 = s.attractor_tol * s.attractor_tol;
  auto near_fixed_point = [&](const Vec& x) -> int {
    for (const auto& a : attractors)
      if (a.kind == AttractorKind::fixed_point && (x - a.representative).squaredNorm() < tol2) return a.id;
    return BasinLabel::unresolved;
  };
  Vec x = x0;
  int hit = near_fixed_point(x);
  if (hit >= 0 && !has_cycles) return hit;
  try {
    integrate_with(s, x, s.t_max, dt, [&](const Vec& xs, double) {
      if (has_cycles) return false;
      hit = near_fixed_point(xs);
      return hit >= 0;
    });
  } catch (const NonFiniteError&) {
    return BasinLabel::diverged;
  }
  if (!has_cycles) return hit;
  if (int fp = near_fixed_point(x); fp >= 0) return fp;
  const double r = x.norm();
  for (const auto& a : attractors)
    if (a.kind == AttractorKind::limit_cycle && std::abs(r - a.radius) < s.cycle_band) return a.id;
  return BasinLabel::unresolved;
}

inline int classify_basin(const SystemSpec& s, const StatePoint& x0, const std::vector<Attractor>& attractors) {
  return classify_basin(s, x0, attractors, s.dt);
}

// ---------------------------------------------------------------------------
// Attractor discovery

inline Mat finite_difference_jacobian(const SystemSpec& s, const Vec& x, double h = 1e-6) {
  Mat J(s.dim, s.dim);
  for (Eigen::Index k = 0; k < s.dim; ++k) {
    Vec xp = x, xm = x;
    xp[k] += h;
    xm[k] -= h;
    J.col(k) = (s.f(xp) - s.f(xm)) / (2.0 * h);
  }
  return J;
}

/// Damped Newton on f(x) = 0. Returns nullopt if |f| does not reach `tol`.
inline std::optional<Vec> refine_fixed_point(const SystemSpec& s, Vec x, double tol = 1e-10, int max_iter = 50) {
  double res = s.f(x).norm();
  for (int it = 0; it < max_iter && res > tol; ++it) {
    const Vec fx = s.f(x);
    const Vec step = finite_difference_jacobian(s, x).colPivHouseholderQr().solve(-fx);
    if (!step.allFinite()) return std::nullopt;
    double damp = 1.0;
    bool improved = false;
    for (int k = 0; k < 30; ++k, damp *= 0.5) {
      const Vec trial = x + damp * step;
      const double r = s.f(trial).norm();
      if (std::isfinite(r) && r < res) {
        x = trial;
        res = r;
        improved = true;
        break;
      }
    }
    if (!improved) break;
  }
  if (res < 1e-6) return x;
  return std::nullopt;
}

inline std::vector<Attractor> find_attractors(const SystemSpec& s, int n_seeds, std::uint64_t seed) {
  if (n_seeds < 1) throw ConfigError("find_attractors: n_seeds must be >= 1");
  s.validate();
  Vec lo = s.init_lo.size() == s.dim ? s.init_lo : Vec::Constant(s.dim, -2.0);
  Vec hi = s.init_hi.size() == s.dim ? s.init_hi : Vec::Constant(s.dim, 2.0);
  std::mt19937_64 rng(derive_seed(seed, 0xA77));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  struct Candidate {
    Vec point;
    AttractorKind kind;
    double radius;
  };
  std::vector<Candidate> found;
  for (int n = 0; n < n_seeds; ++n) {
    Vec x(s.dim);
    for (Eigen::Index k = 0; k < s.dim; ++k) x[k] = lo[k] + (hi[k] - lo[k]) * unit(rng);
    try {
      x = integrate(s, x, s.t_max);
    } catch (const NonFiniteError&) {
      continue;
    }
    if (s.f(x).norm() < 1e-3) {
      auto refined = refine_fixed_point(s, x);
      if (refined && (*refined - x).norm() < s.attractor_tol)
        found.push_back({*refined, AttractorKind::fixed_point, refined->norm()});
      continue;
    }
    // Still moving: accept as a limit cycle if |x| settles over a further window.
    double rmin = x.norm(), rmax = rmin;
    Vec y = x;
    try {
      integrate_with(s, y, std::min(s.t_max, 20.0), s.dt, [&](const Vec& z, double) {
        const double r = z.norm();
        rmin = std::min(rmin, r);
        rmax = std::max(rmax, r);
        return false;
      });
    } catch (const NonFiniteError&) {
      continue;
    }
    if (rmax - rmin < 1e-2 * (1.0 + rmax)) found.push_back({y, AttractorKind::limit_cycle, 0.5 * (rmin + rmax)});
  }
  if (found.empty()) throw GeometryError("find_attractors: no trajectory converged within t_max");

  std::vector<Candidate> uniq;
  for (const auto& c : found) {
    bool dup = false;
    for (const auto& u : uniq) {
      if (u.kind != c.kind) continue;
      if (c.kind == AttractorKind::fixed_point ? (u.point - c.point).norm() < s.attractor_tol
                                               : std::abs(u.radius - c.radius) < s.attractor_tol) {
        dup = true;
        break;
      }
    }
    if (!dup) uniq.push_back(c);
  }
  // Stable ordering: fixed points lexicographically, then cycles by radius.
  std::sort(uniq.begin(), uniq.end(), [](const Candidate& a, const Candidate& b) {
    if (a.kind != b.kind) return a.kind == AttractorKind::fixed_point;
    if (a.kind == AttractorKind::limit_cycle) return a.radius < b.radius;
    for (Eigen::Index k = 0; k < a.point.size(); ++k)
      if (std::abs(a.point[k] - b.point[k]) > 1e-9) return a.point[k] < b.point[k];
    return false;
  });
  std::vector<Attractor> out;
  for (std::size_t i = 0; i < uniq.size(); ++i)
    out.push_back({static_cast<int>(i), uniq[i].point, uniq[i].kind, uniq[i].radius});
  return out;
}

/// Known attractors when the system declares them, otherwise a search.
inline std::vector<Attractor> attractors_of(const SystemSpec& s, int n_seeds = 64, std::uint64_t seed = 0) {
  if (!s.known_attractors.empty()) return s.known_attractors;
  return find_attractors(s, n_seeds, seed);
}

// ---------------------------------------------------------------------------
// File formats

/// gLV parameters: first CSV row r, then N rows of the interaction matrix A.
inline std::pair<Vec, Mat> parse_glv_csv(std::istream& is) {
  std::vector<Vec> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    rows.push_back(parse_vec(line));
  }
  if (rows.empty()) throw ConfigError("gLV parameter file is empty");
  const Vec r = rows.front();
  const Eigen::Index n = r.size();
  if (static_cast<Eigen::Index>(rows.size()) != n + 1)
    throw ConfigError("gLV parameter file: expected " + std::to_string(n + 1) + " rows");
  Mat A(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (rows[static_cast<std::size_t>(i + 1)].size() != n)
      throw ConfigError("gLV parameter file: row " + std::to_string(i + 2) + " has wrong length");
    A.row(i) = rows[static_cast<std::size_t>(i + 1)].transpose();
  }
  return {r, A};
}

/// RNN weights: header `RNN v1 N=<n>`, then `BLOCK W n n` and `BLOCK b n 1`.
inline std::pair<Mat, Vec> parse_rnn_weights(std::istream& is) {
  std::string magic, version, ntok;
  if (!(is >> magic >> version >> ntok) || magic != "RNN" || version != "v1" || ntok.rfind("N=", 0) != 0)
    throw ConfigError("RNN weight file: expected header 'RNN v1 N=<n>'");
  const Eigen::Index n = std::stoll(ntok.substr(2));
  Mat W;
  Vec b;
  NamedBlock blk;
  while (read_block(is, blk)) {
    if (blk.name == "W") {
      if (blk.data.rows() != n || blk.data.cols() != n) throw ConfigError("RNN weight file: W must be n x n");
      W = blk.data;
    } else if (blk.name == "b") {
      if (blk.data.rows() != n || blk.data.cols() != 1) throw ConfigError("RNN weight file: b must be n x 1");
      b = blk.data.col(0);
    } else {
      throw ConfigError("RNN weight file: unexpected block '" + blk.name + "'");
    }
  }
  if (W.size() == 0 || b.size() == 0) throw ConfigError("RNN weight file: missing W or b");
  return {W, b};
}

inline void write_rnn_weights(std::ostream& os, const Mat& W, const Vec& b) {
  os << "RNN v1 N=" << W.rows() << '\n';
  write_block(os, "W", W);
  write_block(os, "b", b);
}

// ---------------------------------------------------------------------------
// Built-in systems

namespace detail {

class ParamReader {
 public:
  ParamReader(std::string system, const SystemParams& p) : system_(std::move(system)), p_(p) {}

  double real(const std::string& key, double fallback) {
    used_.push_back(key);
    auto it = p_.find(key);
    if (it == p_.end()) return fallback;
    char* end = nullptr;
    double v = std::strtod(it->second.c_str(), &end);
    if (end == it->second.c_str() || *end != '\0')
      throw ConfigError(system_ + ": parameter '" + key + "' is not a number");
    return v;
  }
  long long integer(const std::string& key, long long fallback) {
    const double v = real(key, static_cast<double>(fallback));
    if (v != std::floor(v)) throw ConfigError(system_ + ": parameter '" + key + "' must be an integer");
    return static_cast<long long>(v);
  }
  std::optional<std::string> text(const std::string& key) {
    used_.push_back(key);
    auto it = p_.find(key);
    if (it == p_.end()) return std::nullopt;
    return it->second;
  }
  void finish() const {
    for (const auto& [k, v] : p_)
      if (std::find(used_.begin(), used_.end(), k) == used_.end())
        throw ConfigError(system_ + ": unknown parameter '" + k + "'");
  }

 private:
  std::string system_;
  const SystemParams& p_;
  std::vector<std::string> used_;
};

inline Mat random_orthogonal(Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, 0x0E7));
  std::normal_distribution<double> g(0.0, 1.0);
  Mat G(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) G(i, j) = g(rng);
  Eigen::HouseholderQR<Mat> qr(G);
  Mat Q = qr.householderQ() * Mat::Identity(n, n);
  // Fix column signs so the factorization is unique.
  const Mat R = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < n; ++j)
    if (R(j, j) < 0) Q.col(j) *= -1.0;
  return Q;
}

}  // namespace detail

/// Two-species symmetric competition used when no gLV file is supplied.
inline std::pair<Vec, Mat> bundled_glv_instance() {
  Vec r(2);
  r << 1.0, 1.0;
  Mat A(2, 2);
  A << -1.0, -1.5, -1.5, -1.0;
  return {r, A};
}

inline SystemSpec builtin_system(const std::string& name, const SystemParams& params = {}) {
  detail::ParamReader rd(name, params);
  SystemSpec s;
  s.name = name;
  if (name == "bistable1d") {
    const double shift = rd.real("shift", 0.0);
    s.dim = 1;
    s.field = [shift](const Eigen::Ref<const Vec>& x, Eigen::Ref<Vec> dx) {
      const double u = x[0] - shift;
      dx[0] = u - u * u * u;
    };
    s.init_lo = Vec::Constant(1, shift - 2.0);
    s.init_hi = Vec::Constant(1, shift + 2.0);
  } else if (name == "duffing2d") {
    const double delta = rd.real("delta", 0.5);
    s.dim = 2;
    s.field = [delta](const Eigen::Ref<const Vec>& x, Eigen::Ref<Vec> dx) {
      dx[0] = x[1];
      dx[1] = -delta * x[1] + x[0] - x[0] * x[0] * x[0];
    };
    s.init_lo = Vec::Constant(2, -2.0);
    s.init_hi = Vec::Constant(2, 2.0);
  } else if (name == "two_limit_cycles") {
    s.dim = 2;
    s.field = [](const Eigen::Ref<const Vec>& x, Eigen::Ref<Vec> dx) {
      const double r = std::hypot(x[0], x[1]);
      const double u = r - 2.0;
      const double rdot = u - u * u * u;
      const double radial = r > 0.0 ? rdot / r : 0.0;
      dx[0] = radial * x[0] - x[1];
      dx[1] = radial * x[1] + x[0];
    };
    s.init_lo = Vec::Constant(2, -4.0);
    s.init_hi = Vec::Constant(2, 4.0);
  } else if (name == "glv") {
    auto path = rd.text("params_file");
    auto [r, A] = bundled_glv_instance();
    if (path) {
      std::ifstream in(*path);
      if (!in) throw ConfigError("glv: cannot open parameter file '" + *path + "'");
      std::tie(r, A) = parse_glv_csv(in);
    }
    s.dim = r.size();
    s.field = [r, A](const Eigen::Ref<const Vec>& x, Eigen::Ref<Vec> dx) {
      dx = x.cwiseProduct(r + A * x);
    };
    s.init_lo = Vec::Zero(s.dim);
    s.init_hi = Vec::Constant(s.dim, 2.0);
    s.nonnegative = true;
  } else if (name == "embedded_bistable") {
    const auto n = static_cast<Eigen::Index>(rd.integer("N", 32));
    const auto seed = static_cast<std::uint64_t>(rd.integer("seed", 0));
    const bool identity = rd.integer("identity", 0) != 0;
    if (n < 1) throw ConfigError("embedded_bistable: N must be >= 1");
    const Mat Q = identity ? Mat(Mat::Identity(n, n)) : detail::random_orthogonal(n, seed);
    s.dim = n;
    s.frame = Q;
    s.field = [Q](const Eigen::Ref<const Vec>& x, Eigen::Ref<Vec> dx) {
      thread_local Vec u, g;
      u.noalias() = Q.transpose() * x;
      g = -u;
      g[0] = u[0] - u[0] * u[0] * u[0];
      dx.noalias() = Q * g;
    };
    s.known_attractors = {{0, -Q.col(0), AttractorKind::fixed_point, 1.0},
                          {1, Q.col(0), AttractorKind::fixed_point, 1.0}};
    s.init_lo = Vec::Constant(n, -2.0);
    s.init_hi = Vec::Constant(n, 2.0);
  } else if (name == "loaded_rnn") {
    auto path = rd.text("weights_file");
    if (!path) throw ConfigError("loaded_rnn: 'weights_file' is required");
    std::ifstream in(*path);
    if (!in) throw ConfigError("loaded_rnn: cannot open weight file '" + *path + "'");
    auto [W, b] = parse_rnn_weights(in);
    s.dim = W.rows();
    s.field = [W, b](const Eigen::Ref<const Vec>& x, Eigen::Ref<Vec> dx) {
      thread_local Vec th;
      th = x.array().tanh();
      dx.noalias() = W * th;
      dx += b - x;
    };
    s.init_lo = Vec::Constant(s.dim, -2.0);
    s.init_hi = Vec::Constant(s.dim, 2.0);
  } else {
    throw ConfigError("unknown system '" + name +
                      "' (expected bistable1d, duffing2d, two_limit_cycles, glv, embedded_bistable, loaded_rnn)");
  }
  s.dt = rd.real("dt", 0.01);
  s.t_max = rd.real("t_max", 50.0);
  s.attractor_tol = rd.real("attractor_tol", 0.05);
  rd.finish();
  s.validate();
  return s;
}

}  // namespace sepx
