#pragma once

// Locating separatrices: bisection seeding, Hermite-curve validation of a
// learned zero set, zero-level tracing in 2D and minimal-perturbation design.

#include "sepx/training.hpp"

#include <array>
#include <limits>
#include <memory>
#include <ostream>
#include <set>

namespace sepx {

// ---------------------------------------------------------------------------
// Scalar fields: a trained model or a closed-form function behind one
// interface, so every consumer below also runs against exact references.

class ScalarField {
 public:
  using BatchFn = std::function<Vec(const Mat&)>;
  using GradFn = std::function<Vec(const StatePoint&)>;

  ScalarField() = default;
  ScalarField(Eigen::Index dim, BatchFn batch, GradFn grad = {})
      : dim_(dim), batch_(std::move(batch)), grad_(std::move(grad)) {
    if (dim_ < 1 || !batch_) throw ConfigError("ScalarField: needs a dimension and an evaluator");
  }

  static ScalarField from_model(KefModel model) {
    auto m = std::make_shared<const KefModel>(std::move(model));
    return ScalarField(
        m->input_dim(), [m](const Mat& x) { return m->values(x); },
        [m](const StatePoint& x) { return m->gradient(x); });
  }

  /// Pointwise function; gradients fall back to central differences.
  static ScalarField from_function(Eigen::Index dim, std::function<double(const StatePoint&)> fn) {
    return ScalarField(dim, [fn = std::move(fn)](const Mat& x) {
      Vec out(x.cols());
      for (Eigen::Index i = 0; i < x.cols(); ++i) out[i] = fn(x.col(i));
      return out;
    });
  }

  Eigen::Index dim() const { return dim_; }

  Vec values(const Mat& x) const {
    require_dim(x.rows(), dim_, "scalar field input");
    return batch_(x);
  }

  double operator()(const StatePoint& x) const {
    require_dim(x.size(), dim_, "scalar field input");
    return batch_(Mat(x))[0];
  }

  Vec gradient(const StatePoint& x) const { return grad_ ? grad_(x) : fd_gradient(x); }

  /// Central-difference gradient (step h per coordinate).
  Vec fd_gradient(const StatePoint& x, double h = 1e-6) const {
    require_dim(x.size(), dim_, "scalar field input");
    Mat pts(dim_, 2 * dim_);
    for (Eigen::Index k = 0; k < dim_; ++k) {
      pts.col(2 * k) = x;
      pts.col(2 * k + 1) = x;
      pts(k, 2 * k) += h;
      pts(k, 2 * k + 1) -= h;
    }
    const Vec v = batch_(pts);
    Vec g(dim_);
    for (Eigen::Index k = 0; k < dim_; ++k) g[k] = (v[2 * k] - v[2 * k + 1]) / (2.0 * h);
    return g;
  }

  /// Restriction to the plane origin + a u + b v, as a 2D field over (a, b).
  ScalarField on_slice(const Vec& origin, const Vec& u, const Vec& v) const {
    require_dim(origin.size(), dim_, "slice origin");
    require_dim(u.size(), dim_, "slice basis u");
    require_dim(v.size(), dim_, "slice basis v");
    Mat basis(dim_, 2);
    basis << u, v;
    auto self = *this;
    return ScalarField(2, [self, origin, basis](const Mat& ab) {
      Mat x = basis * ab;
      x.colwise() += origin;
      return self.values(x);
    });
  }

 private:
  Eigen::Index dim_ = 0;
  BatchFn batch_;
  GradFn grad_;
};

// ---------------------------------------------------------------------------
// Bisection seeding

struct SeparatrixBracket {
  StatePoint point;  // midpoint of the final bracket
  StatePoint lo;     // classifies as label_lo
  StatePoint hi;     // classifies as label_hi
  int label_lo = BasinLabel::unresolved;
  int label_hi = BasinLabel::unresolved;
  int steps = 0;
};

/// Bisects the segment a -> b on basin labels until the bracket is shorter
/// than tol. Unresolved midpoints are retried at jittered positions inside the
/// current bracket.
inline SeparatrixBracket find_separatrix_bracket(const SystemSpec& s, const StatePoint& a, const StatePoint& b,
                                                 const std::vector<Attractor>& attractors, double tol = 1e-6,
                                                 int retry_budget = 8) {
  require_dim(a.size(), s.dim, "find_separatrix_point a");
  require_dim(b.size(), s.dim, "find_separatrix_point b");
  if (!(tol > 0.0)) throw ConfigError("find_separatrix_point: tol must be > 0");
  SeparatrixBracket br;
  br.lo = a;
  br.hi = b;
  br.label_lo = classify_basin(s, a, attractors);
  br.label_hi = classify_basin(s, b, attractors);
  if (br.label_lo < 0 || br.label_hi < 0)
    throw GeometryError("find_separatrix_point: an endpoint does not converge to a known attractor");
  if (br.label_lo == br.label_hi) throw GeometryError("find_separatrix_point: endpoints lie in the same basin");
  int retries = 0;
  while ((br.hi - br.lo).norm() >= tol) {
    static constexpr std::array<double, 4> jitter{0.5, 0.4, 0.6, 0.3};
    int label = BasinLabel::unresolved;
    StatePoint mid;
    for (std::size_t k = 0;; ++k) {
      const double w = k < jitter.size() ? jitter[k] : 0.5 + 0.45 * std::sin(static_cast<double>(k));
      mid = br.lo + w * (br.hi - br.lo);
      label = classify_basin(s, mid, attractors);
      if (label >= 0) break;
      if (++retries > retry_budget)
        throw GeometryError("find_separatrix_point: unresolved classifications exceeded the retry budget");
    }
    if (label == br.label_lo) {
      br.lo = mid;
    } else if (label == br.label_hi) {
      br.hi = mid;
    } else {
      // A third basin sits between the endpoints; keep the half touching lo.
      br.hi = mid;
      br.label_hi = label;
    }
    ++br.steps;
  }
  br.point = 0.5 * (br.lo + br.hi);
  return br;
}

inline StatePoint find_separatrix_point(const SystemSpec& s, const StatePoint& a, const StatePoint& b,
                                        const std::vector<Attractor>& attractors, double tol = 1e-6) {
  return find_separatrix_bracket(s, a, b, attractors, tol).point;
}

// ---------------------------------------------------------------------------
// Hermite curves

struct HermiteCurve {
  StatePoint x, y;
  StatePoint m_x, m_y;
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

/// h00, h01, h10, h11 at alpha.
inline std::array<double, 4> hermite_basis(double a) {
  const double a2 = a * a, a3 = a2 * a;
  return {2 * a3 - 3 * a2 + 1, -2 * a3 + 3 * a2, a3 - 2 * a2 + a, a3 - a2};
}

inline StatePoint hermite_eval(const HermiteCurve& c, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError("hermite_eval: alpha must lie in [0, 1]");
  if (alpha == 0.0) return c.x;
  if (alpha == 1.0) return c.y;
  const auto h = hermite_basis(alpha);
  return h[0] * c.x + h[2] * c.m_x + h[1] * c.y + h[3] * c.m_y;
}

using CurveConstraint = std::function<bool(const HermiteCurve&)>;

/// Rejects curves that leave the nonnegative orthant at any of n sample points.
/// `tol` absorbs round-off in endpoints that sit on a coordinate plane, as
/// refined attractors of population models do.
inline CurveConstraint nonnegative_constraint(int n_samples = 100, double tol = 1e-9) {
  return [n_samples, tol](const HermiteCurve& c) {
    for (int k = 0; k < n_samples; ++k) {
      const double a = static_cast<double>(k) / (n_samples - 1);
      if (hermite_eval(c, a).minCoeff() < -tol) return false;
    }
    return true;
  };
}

/// Tangents m = (y - x) + eps with eps ~ N(0, sigma^2 I), independently for
/// each end. Rejected curves are redrawn; the budget is 100 draws per curve.
inline std::vector<HermiteCurve> make_curves(const SystemSpec& s, const StatePoint& x, const StatePoint& y,
                                             double sigma, int n_curves, std::uint64_t seed,
                                             const CurveConstraint& constraint = {}) {
  if (n_curves < 1) throw ConfigError("make_curves: n_curves must be >= 1");
  if (sigma < 0.0) throw ConfigError("make_curves: sigma must be >= 0");
  require_dim(x.size(), s.dim, "make_curves x");
  require_dim(y.size(), s.dim, "make_curves y");
  std::vector<HermiteCurve> out;
  const long budget = 100L * n_curves;
  for (long draw = 0; static_cast<int>(out.size()) < n_curves; ++draw) {
    if (draw >= budget) throw GeometryError("make_curves: rejection budget exhausted");
    HermiteCurve c;
    c.x = x;
    c.y = y;
    c.sigma = sigma;
    c.seed = derive_seed(seed, static_cast<std::uint64_t>(draw));
    std::mt19937_64 rng(c.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    c.m_x = y - x;
    c.m_y = y - x;
    for (Eigen::Index k = 0; k < s.dim; ++k) c.m_x[k] += sigma * normal(rng);
    for (Eigen::Index k = 0; k < s.dim; ++k) c.m_y[k] += sigma * normal(rng);
    if (constraint && !constraint(c)) continue;
    out.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Crossings along curves

struct CurveCrossing {
  int curve_id = 0;
  double alpha_true = std::numeric_limits<double>::quiet_NaN();
  double alpha_pred = std::numeric_limits<double>::quiet_NaN();
  /// Number of psi sign changes on the grid; 0 means the model missed.
  int sign_changes = 0;
  std::vector<double> alphas;
  std::vector<double> psi;
  std::vector<int> labels;

  bool predicted() const { return sign_changes > 0; }
};

/// First sign change of samples v over grid a, located by linear
/// interpolation. Returns NaN when v keeps one sign; `count` receives the
/// number of sign changes.
inline double first_sign_change(const std::vector<double>& a, const std::vector<double>& v, int* count = nullptr) {
  double first = std::numeric_limits<double>::quiet_NaN();
  int n = 0;
  for (std::size_t k = 0; k + 1 < v.size(); ++k) {
    if ((v[k] > 0.0) == (v[k + 1] > 0.0)) continue;
    if (n++ == 0) first = a[k] + (a[k + 1] - a[k]) * v[k] / (v[k] - v[k + 1]);
  }
  if (count) *count = n;
  return first;
}

/// Simulates from n_grid points of the curve and compares the basin change
/// with the psi sign change.
inline CurveCrossing curve_crossings(const SystemSpec& s, const ScalarField& psi, const HermiteCurve& curve,
                                     const std::vector<Attractor>& attractors, int n_grid = 100, int curve_id = 0) {
  if (n_grid < 2) throw ConfigError("curve_crossings: n_grid must be >= 2");
  require_dim(psi.dim(), s.dim, "curve_crossings model");
  CurveCrossing cc;
  cc.curve_id = curve_id;
  const auto n = static_cast<std::size_t>(n_grid);
  cc.alphas.resize(n);
  Mat pts(s.dim, n_grid);
  for (std::size_t k = 0; k < n; ++k) {
    cc.alphas[k] = static_cast<double>(k) / static_cast<double>(n - 1);
    pts.col(static_cast<Eigen::Index>(k)) = hermite_eval(curve, cc.alphas[k]);
  }
  const Vec pv = psi.values(pts);
  cc.psi.assign(pv.data(), pv.data() + pv.size());
  cc.labels.resize(n);
  parallel_for(n, [&](std::size_t k) {
    cc.labels[k] = classify_basin(s, pts.col(static_cast<Eigen::Index>(k)), attractors);
  });
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const int la = cc.labels[k], lb = cc.labels[k + 1];
    if (la < 0 || lb < 0 || la == lb) continue;
    double lo = cc.alphas[k], hi = cc.alphas[k + 1];
    for (int it = 0; it < 30; ++it) {
      const double mid = 0.5 * (lo + hi);
      const int lm = classify_basin(s, hermite_eval(curve, mid), attractors);
      if (lm == la) lo = mid;
      else if (lm == lb) hi = mid;
      else break;
    }
    cc.alpha_true = 0.5 * (lo + hi);
    break;
  }
  if (std::isnan(cc.alpha_true)) throw GeometryError("curve_crossings: no basin change along the curve");
  cc.alpha_pred = first_sign_change(cc.alphas, cc.psi, &cc.sign_changes);
  return cc;
}

/// Coefficient of determination of alpha_pred against alpha_true over the
/// crossings that have a prediction.
inline double curve_r2(const std::vector<CurveCrossing>& crossings) {
  std::vector<std::pair<double, double>> pairs;
  for (const auto& c : crossings)
    if (c.predicted() && std::isfinite(c.alpha_true)) pairs.emplace_back(c.alpha_true, c.alpha_pred);
  if (pairs.size() < 2) throw GeometryError("curve_r2: need at least 2 crossings with both alpha values");
  double mean = 0.0;
  for (const auto& p : pairs) mean += p.first;
  mean /= static_cast<double>(pairs.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (const auto& [t, p] : pairs) {
    ss_res += (p - t) * (p - t);
    ss_tot += (t - mean) * (t - mean);
  }
  if (!(ss_tot > 1e-300)) throw GeometryError("curve_r2: alpha_true has no variance");
  return 1.0 - ss_res / ss_tot;
}

inline void write_crossings_csv(std::ostream& os, const std::vector<CurveCrossing>& cs) {
  os << "curve_id,alpha,psi,basin_label\n";
  for (const auto& c : cs)
    for (std::size_t k = 0; k < c.alphas.size(); ++k)
      os << c.curve_id << ',' << fmt17(c.alphas[k]) << ',' << fmt17(c.psi[k]) << ',' << c.labels[k] << '\n';
}

inline void write_crossing_summary_csv(std::ostream& os, const std::vector<CurveCrossing>& cs) {
  os << "curve_id,alpha_true,alpha_pred\n";
  for (const auto& c : cs) os << c.curve_id << ',' << fmt17(c.alpha_true) << ',' << fmt17(c.alpha_pred) << '\n';
}

// ---------------------------------------------------------------------------
// Zero sets in 1D and 2D

/// Sign-change locations of psi on a uniform grid over [lo, hi].
inline std::vector<double> zero_crossings_1d(const ScalarField& psi, double lo, double hi, int n = 2001) {
  require_dim(psi.dim(), 1, "zero_crossings_1d");
  if (n < 2 || !(hi > lo)) throw ConfigError("zero_crossings_1d: need n >= 2 and hi > lo");
  Mat x(1, n);
  for (int k = 0; k < n; ++k) x(0, k) = lo + (hi - lo) * k / (n - 1);
  const Vec v = psi.values(x);
  std::vector<double> out;
  for (int k = 0; k + 1 < n; ++k) {
    if ((v[k] > 0.0) == (v[k + 1] > 0.0)) continue;
    out.push_back(x(0, k) + (x(0, k + 1) - x(0, k)) * v[k] / (v[k] - v[k + 1]));
  }
  return out;
}

/// True when at least `min_fraction` of the values exceed +rel*max|psi| and
/// as many fall below -rel*max|psi|.
inline bool has_both_signs(const Vec& psi, double min_fraction = 0.05, double rel = 0.01) {
  if (psi.size() == 0) return false;
  const double cut = rel * psi.cwiseAbs().maxCoeff();
  if (!(cut > 0.0)) return false;
  const auto pos = (psi.array() > cut).count();
  const auto neg = (psi.array() < -cut).count();
  const double need = min_fraction * static_cast<double>(psi.size());
  return static_cast<double>(pos) >= need && static_cast<double>(neg) >= need;
}

struct Box2 {
  Eigen::Vector2d lo{-1.0, -1.0};
  Eigen::Vector2d hi{1.0, 1.0};
};

using Polyline = std::vector<Eigen::Vector2d>;

/// Marching-squares extraction of {psi = 0} on an n x n node grid. Crossing
/// points are interpolated linearly along cell edges; cells with four
/// crossings are split by the sign of the cell-center average.
inline std::vector<Polyline> trace_zero_level_2d(const ScalarField& psi, const Box2& box, int n) {
  require_dim(psi.dim(), 2, "trace_zero_level_2d");
  if (n < 2) throw ConfigError("trace_zero_level_2d: grid must have at least 2 nodes per side");
  if (!(box.hi.array() > box.lo.array()).all()) throw ConfigError("trace_zero_level_2d: empty bounding box");
  const Eigen::Vector2d step = (box.hi - box.lo) / static_cast<double>(n - 1);
  auto node = [&](int i, int j) { return Eigen::Vector2d(box.lo.x() + i * step.x(), box.lo.y() + j * step.y()); };
  Mat pts(2, static_cast<Eigen::Index>(n) * n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) pts.col(static_cast<Eigen::Index>(j) * n + i) = node(i, j);
  const Vec v = psi.values(pts);
  if (!v.allFinite()) throw NonFiniteError("trace_zero_level_2d: non-finite psi on the grid");
  auto val = [&](int i, int j) { return v[static_cast<Eigen::Index>(j) * n + i]; };

  // Edge ids: horizontal edge (i,j)-(i+1,j) -> 2*(j*n+i); vertical (i,j)-(i,j+1) -> 2*(j*n+i)+1.
  auto h_edge = [&](int i, int j) { return 2L * (static_cast<long>(j) * n + i); };
  auto v_edge = [&](int i, int j) { return 2L * (static_cast<long>(j) * n + i) + 1; };
  std::map<long, Eigen::Vector2d> points;
  auto crossing = [&](long id, int i0, int j0, int i1, int j1) {
    if (!points.count(id)) {
      const double a = val(i0, j0), b = val(i1, j1);
      const double t = a / (a - b);
      points[id] = node(i0, j0) + t * (node(i1, j1) - node(i0, j0));
    }
    return id;
  };
  std::map<long, std::vector<long>> adj;
  auto link = [&](long a, long b) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  };

  for (int j = 0; j + 1 < n; ++j) {
    for (int i = 0; i + 1 < n; ++i) {
      const double c[4] = {val(i, j), val(i + 1, j), val(i + 1, j + 1), val(i, j + 1)};
      const bool p[4] = {c[0] > 0, c[1] > 0, c[2] > 0, c[3] > 0};
      // Edges in cyclic order: bottom, right, top, left.
      std::vector<long> e;
      if (p[0] != p[1]) e.push_back(crossing(h_edge(i, j), i, j, i + 1, j));
      if (p[1] != p[2]) e.push_back(crossing(v_edge(i + 1, j), i + 1, j, i + 1, j + 1));
      if (p[2] != p[3]) e.push_back(crossing(h_edge(i, j + 1), i, j + 1, i + 1, j + 1));
      if (p[3] != p[0]) e.push_back(crossing(v_edge(i, j), i, j, i, j + 1));
      if (e.size() == 2) {
        link(e[0], e[1]);
      } else if (e.size() == 4) {
        const bool center = 0.25 * (c[0] + c[1] + c[2] + c[3]) > 0;
        // If the center agrees with corner 0, corner 0's region connects
        // through the middle and the crossings pair up around corners 1 and 3.
        if (center == p[0]) {
          link(e[0], e[1]);
          link(e[2], e[3]);
        } else {
          link(e[3], e[0]);
          link(e[1], e[2]);
        }
      }
    }
  }
  if (points.empty()) throw GeometryError("trace_zero_level_2d: psi has no sign change in the bounding box");

  std::vector<Polyline> out;
  std::set<std::pair<long, long>> done;
  auto unused = [&](long a, long b) { return !done.count(std::minmax(a, b)); };
  auto walk = [&](long start) {
    Polyline line{points[start]};
    for (long cur = start;;) {
      long next = -1;
      for (long cand : adj[cur])
        if (unused(cur, cand)) {
          next = cand;
          break;
        }
      if (next < 0) break;
      done.insert(std::minmax(cur, next));
      line.push_back(points[next]);
      cur = next;
    }
    return line;
  };
  // Open chains start at endpoints (one link); what remains are closed loops.
  for (const auto& [id, nb] : adj)
    if (nb.size() == 1 && unused(id, nb[0])) out.push_back(walk(id));
  for (const auto& [id, nb] : adj)
    for (long o : nb)
      if (unused(id, o)) out.push_back(walk(id));
  return out;
}

inline void write_levelset_csv(std::ostream& os, const std::vector<Polyline>& lines) {
  os << "polyline_id,x,y\n";
  for (std::size_t k = 0; k < lines.size(); ++k)
    for (const auto& p : lines[k]) os << k << ',' << fmt17(p.x()) << ',' << fmt17(p.y()) << '\n';
}

// ---------------------------------------------------------------------------
// Minimal perturbations

struct PerturbationOptions {
  double lr = 1e-2;
  std::vector<double> rho{1.0, 10.0, 100.0, 1000.0};
  int steps_per_stage = 500;
  double overshoot = 1.01;
  double init_fraction = 0.9;
  double bisection_tol = 1e-6;
  int n_random_baselines = 20;
};

struct PerturbationResult {
  StatePoint x_base;
  StatePoint delta;  // before overshoot
  double norm = 0.0;
  int base_basin = BasinLabel::unresolved;
  int verified_basin = BasinLabel::unresolved;
  StatePoint seed_point;
  double aim_norm = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> random_norms;

  double random_min_norm() const {
    double m = std::numeric_limits<double>::infinity();
    for (double v : random_norms) m = std::min(m, v);
    return m;
  }
};

namespace detail {

inline const Attractor& attractor_by_id(const std::vector<Attractor>& attractors, int id) {
  for (const auto& a : attractors)
    if (a.id == id) return a;
  throw ConfigError("unknown target basin " + std::to_string(id));
}

/// Pulls the penalty optimum onto psi = 0 along the gradient (a few Newton
/// steps). Kept only when it shrinks |psi| without lengthening delta by more
/// than 1%.
inline void polish_onto_zero(const ScalarField& psi, const StatePoint& x_base, Vec& delta) {
  Vec d = delta;
  for (int it = 0; it < 5; ++it) {
    const StatePoint x = x_base + d;
    const double v = psi(x);
    const Vec g = psi.gradient(x);
    const double g2 = g.squaredNorm();
    if (!(g2 > 0.0) || !std::isfinite(v)) return;
    d -= (v / g2) * g;
  }
  if (!d.allFinite()) return;
  if (std::abs(psi(x_base + d)) < std::abs(psi(x_base + delta)) && d.norm() <= 1.01 * delta.norm()) delta = d;
}

}  // namespace detail

/// Smallest displacement of x_base onto the learned zero set toward
/// target_basin, by a penalty continuation on ||D||^2 + rho psi(x_base + D)^2.
/// The result is verified by simulating from x_base + overshoot * D. Aim-line
/// and random-target baselines are computed on the true basin boundary.
inline PerturbationResult min_perturbation(const ScalarField& psi, const SystemSpec& s, const StatePoint& x_base,
                                           int target_basin, const std::vector<Attractor>& attractors,
                                           std::uint64_t seed, const PerturbationOptions& opt = {}) {
  require_dim(psi.dim(), s.dim, "min_perturbation model");
  require_dim(x_base.size(), s.dim, "min_perturbation x_base");
  PerturbationResult r;
  r.x_base = x_base;
  r.base_basin = classify_basin(s, x_base, attractors);
  if (r.base_basin < 0) throw GeometryError("min_perturbation: x_base does not converge to a known attractor");
  if (r.base_basin == target_basin) throw ConfigError("min_perturbation: x_base already lies in the target basin");
  const Attractor& target = detail::attractor_by_id(attractors, target_basin);

  r.seed_point = find_separatrix_point(s, x_base, target.representative, attractors, opt.bisection_tol);
  r.aim_norm = (r.seed_point - x_base).norm();

  Vec delta = opt.init_fraction * (r.seed_point - x_base);
  for (double rho : opt.rho) {
    AdamState st;
    const AdamOptions ao{opt.lr, 0.9, 0.999, 1e-8, 0.0};
    for (int it = 0; it < opt.steps_per_stage; ++it) {
      const StatePoint x = x_base + delta;
      const double v = psi(x);
      const Vec g = 2.0 * delta + 2.0 * rho * v * psi.gradient(x);
      if (!g.allFinite()) throw NonFiniteError("min_perturbation: optimizer diverged");
      adam_step(delta, g, st, ao);
    }
  }
  detail::polish_onto_zero(psi, x_base, delta);
  if (!delta.allFinite()) throw NonFiniteError("min_perturbation: optimizer diverged");
  r.delta = delta;
  r.norm = delta.norm();
  r.verified_basin = classify_basin(s, x_base + opt.overshoot * delta, attractors);

  // Random separatrix targets: bisect toward points drawn around the target
  // attractor that converge to it.
  std::mt19937_64 rng(derive_seed(seed, 0xBA5E));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double spread = 0.5 * (target.representative - x_base).norm();
  int drawn = 0;
  for (int tries = 0; drawn < opt.n_random_baselines && tries < 50 * opt.n_random_baselines; ++tries) {
    Vec z = target.representative;
    for (Eigen::Index k = 0; k < z.size(); ++k) z[k] += spread * normal(rng);
    if (classify_basin(s, z, attractors) != target_basin) continue;
    try {
      const StatePoint p = find_separatrix_point(s, x_base, z, attractors, opt.bisection_tol);
      r.random_norms.push_back((p - x_base).norm());
      ++drawn;
    } catch (const GeometryError&) {
    }
  }

  if (r.verified_basin != target_basin)
    throw VerificationError("min_perturbation: x_base + " + fmt17(opt.overshoot) + " * delta lands in basin " +
                            std::to_string(r.verified_basin) + ", not " + std::to_string(target_basin));
  return r;
}

inline void write_perturbation_report(std::ostream& os, const PerturbationResult& r) {
  os << "x_base=" << join17(r.x_base) << '\n';
  os << "delta=" << join17(r.delta) << '\n';
  os << "norm=" << fmt17(r.norm) << '\n';
  os << "verified_basin=" << r.verified_basin << '\n';
  os << "baseline_norms=aim:" << fmt17(r.aim_norm);
  for (double v : r.random_norms) os << ",random:" << fmt17(v);
  os << '\n';
  os << "aim_norm=" << fmt17(r.aim_norm) << '\n';
  os << "random_min_norm=" << fmt17(r.random_min_norm()) << '\n';
}

// ---------------------------------------------------------------------------
// Sign change at a zero: points just either side of a crossing of psi should
// flow to different attractors.

struct SignChangeReport {
  int tested = 0;
  int passed = 0;
  double fraction() const { return tested ? static_cast<double>(passed) / tested : 0.0; }
};

/// Draws pairs of sample columns with opposite psi signs, bisects psi along
/// the segment to a zero p, and classifies p +- eps * n_hat where n_hat is the
/// normalized central-difference gradient.
inline SignChangeReport sign_change_test(const ScalarField& psi, const SystemSpec& s,
                                         const std::vector<Attractor>& attractors, const VectorBatch& samples,
                                         int n_crossings, double eps, std::uint64_t seed) {
  require_dim(samples.rows(), s.dim, "sign_change_test samples");
  const Vec v = psi.values(samples);
  std::vector<Eigen::Index> pos, neg;
  for (Eigen::Index i = 0; i < v.size(); ++i) (v[i] > 0.0 ? pos : neg).push_back(i);
  if (pos.empty() || neg.empty()) throw GeometryError("sign_change_test: psi does not change sign on the samples");
  std::mt19937_64 rng(derive_seed(seed, 0x51C));
  std::vector<StatePoint> plus(static_cast<std::size_t>(n_crossings)), minus(plus.size());
  for (int k = 0; k < n_crossings; ++k) {
    StatePoint a = samples.col(pos[std::uniform_int_distribution<std::size_t>(0, pos.size() - 1)(rng)]);
    StatePoint b = samples.col(neg[std::uniform_int_distribution<std::size_t>(0, neg.size() - 1)(rng)]);
    for (int it = 0; it < 60; ++it) {
      const StatePoint m = 0.5 * (a + b);
      (psi(m) > 0.0 ? a : b) = m;
    }
    const StatePoint p = 0.5 * (a + b);
    Vec g = psi.fd_gradient(p);
    const double gn = g.norm();
    if (!(gn > 0.0)) g = (a - b).normalized();
    else g /= gn;
    plus[static_cast<std::size_t>(k)] = p + eps * g;
    minus[static_cast<std::size_t>(k)] = p - eps * g;
  }
  std::vector<char> ok(plus.size(), 0);
  parallel_for(plus.size(), [&](std::size_t k) {
    const int la = classify_basin(s, plus[k], attractors);
    const int lb = classify_basin(s, minus[k], attractors);
    ok[k] = la >= 0 && lb >= 0 && la != lb;
  });
  SignChangeReport rep;
  rep.tested = n_crossings;
  for (char c : ok) rep.passed += c;
  return rep;
}

}  // namespace sepx
