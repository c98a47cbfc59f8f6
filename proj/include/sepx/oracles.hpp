#pragma once

// Closed-form eigenfunctions and brute-force ground truth.

#include "sepx/separatrix.hpp"

#include "json.hpp"

namespace sepx {

// ---------------------------------------------------------------------------
// Closed forms for x' = x - x^3 (lambda = 1)

namespace detail {
inline void guard_singular(double x, const char* what) {
  if (!std::isfinite(x) || std::abs(1.0 - x * x) < 1e-9)
    throw DomainError(std::string(what) + ": input at or next to the singular points x = +-1");
}
}  // namespace detail

/// psi(x) = x / sqrt|1 - x^2|.
inline double analytic_kef_1d(double x) {
  detail::guard_singular(x, "analytic_kef_1d");
  return x / std::sqrt(std::abs(1.0 - x * x));
}

/// d psi / dx: (1 - x^2)^{-3/2} inside (-1, 1) and -(x^2 - 1)^{-3/2} outside.
inline double analytic_kef_1d_derivative(double x) {
  detail::guard_singular(x, "analytic_kef_1d_derivative");
  const double u = 1.0 - x * x;
  return u > 0.0 ? std::pow(u, -1.5) : -std::pow(-u, -1.5);
}

/// A(x)^mu B(y)^(1 - mu) with A = B = analytic_kef_1d. Defined where every
/// factor with a nonzero exponent is nonnegative.
inline double separable_family_2d(double mu, double x, double y) {
  auto factor = [](double v, double p) {
    if (p == 0.0) return 1.0;
    const double a = analytic_kef_1d(v);
    if (a < 0.0) throw DomainError("separable_family_2d: negative factor raised to a nonzero power");
    return std::pow(a, p);
  };
  return factor(x, mu) * factor(y, 1.0 - mu);
}

inline ScalarField analytic_kef_1d_field() {
  return ScalarField(
      1,
      [](const Mat& x) {
        Vec out(x.cols());
        for (Eigen::Index i = 0; i < x.cols(); ++i) out[i] = analytic_kef_1d(x(0, i));
        return out;
      },
      [](const StatePoint& x) { return Vec::Constant(1, analytic_kef_1d_derivative(x[0])); });
}

// ---------------------------------------------------------------------------
// Power rule: psi^alpha is an eigenfunction with eigenvalue alpha * lambda.

struct PowerRuleReport {
  /// max over probes of |grad(psi^alpha).f - alpha lambda psi^alpha| / |psi^alpha|
  double max_rel_residual = 0.0;
  /// median of grad(psi^alpha).f / psi^alpha over probes
  double effective_eigenvalue = 0.0;
};

inline PowerRuleReport power_rule_check(const ScalarField& psi, const SystemSpec& s, double lambda, double alpha,
                                        const VectorBatch& probes, double h = 1e-6) {
  require_dim(psi.dim(), s.dim, "power_rule_check model");
  require_dim(probes.rows(), s.dim, "power_rule_check probes");
  if (probes.cols() < 1) throw ConfigError("power_rule_check: empty probe set");
  const Vec v = psi.values(probes);
  const bool positive = v[0] > 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (v[i] == 0.0 || (v[i] > 0.0) != positive)
      throw DomainError("power_rule_check: psi changes sign on the probe set");
  const double sgn = positive ? 1.0 : -1.0;
  // |psi|^alpha so the power is real for either sign; the factor sgn is a
  // constant and does not change the eigenvalue.
  auto powered = [&](const StatePoint& x) { return std::pow(sgn * psi(x), alpha); };
  PowerRuleReport rep;
  std::vector<double> ratios;
  for (Eigen::Index i = 0; i < probes.cols(); ++i) {
    const StatePoint x = probes.col(i);
    const Vec f = s.f(x);
    double lhs = 0.0;
    for (Eigen::Index k = 0; k < x.size(); ++k) {
      StatePoint xp = x, xm = x;
      xp[k] += h;
      xm[k] -= h;
      lhs += (powered(xp) - powered(xm)) / (2.0 * h) * f[k];
    }
    const double p = powered(x);
    rep.max_rel_residual = std::max(rep.max_rel_residual, std::abs(lhs - alpha * lambda * p) / std::abs(p));
    ratios.push_back(lhs / p);
  }
  std::nth_element(ratios.begin(), ratios.begin() + static_cast<std::ptrdiff_t>(ratios.size() / 2), ratios.end());
  rep.effective_eigenvalue = ratios[ratios.size() / 2];
  return rep;
}

// ---------------------------------------------------------------------------
// Basin maps on a plane

/// Plane origin + a u + b v through state space.
struct Slice2D {
  Vec origin;
  Vec u;
  Vec v;

  StatePoint at(double a, double b) const { return origin + a * u + b * v; }

  static Slice2D identity2() { return {Vec::Zero(2), Vec::Unit(2, 0), Vec::Unit(2, 1)}; }
};

struct BasinMap2D {
  Box2 box;
  int n = 0;
  /// labels[j * n + i] for node (i, j); i runs along the first axis.
  std::vector<int> labels;
  std::vector<Attractor> attractors;
  Slice2D slice;

  int label(int i, int j) const { return labels[static_cast<std::size_t>(j) * n + i]; }

  Eigen::Vector2d node(int i, int j) const {
    const Eigen::Vector2d step = (box.hi - box.lo) / static_cast<double>(n - 1);
    return {box.lo.x() + i * step.x(), box.lo.y() + j * step.y()};
  }

  /// Nodes with a 4-neighbour carrying a different label.
  std::vector<std::pair<int, int>> boundary_nodes() const {
    std::vector<std::pair<int, int>> out;
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        const int l = label(i, j);
        const bool edge = (i > 0 && label(i - 1, j) != l) || (i + 1 < n && label(i + 1, j) != l) ||
                          (j > 0 && label(i, j - 1) != l) || (j + 1 < n && label(i, j + 1) != l);
        if (edge) out.emplace_back(i, j);
      }
    return out;
  }

  /// Boundary node coordinates in plane coordinates, as a 2 x k matrix.
  Mat boundary_points() const {
    const auto nodes = boundary_nodes();
    Mat out(2, static_cast<Eigen::Index>(nodes.size()));
    for (std::size_t k = 0; k < nodes.size(); ++k)
      out.col(static_cast<Eigen::Index>(k)) = node(nodes[k].first, nodes[k].second);
    return out;
  }
};

inline BasinMap2D brute_force_basin_map(const SystemSpec& s, const Box2& box, int n,
                                        const std::vector<Attractor>& attractors, Slice2D slice) {
  if (n < 2) throw ConfigError("brute_force_basin_map: n must be >= 2");
  require_dim(slice.origin.size(), s.dim, "basin map slice origin");
  require_dim(slice.u.size(), s.dim, "basin map slice u");
  require_dim(slice.v.size(), s.dim, "basin map slice v");
  BasinMap2D m;
  m.box = box;
  m.n = n;
  m.attractors = attractors;
  m.slice = std::move(slice);
  m.labels.resize(static_cast<std::size_t>(n) * n);
  parallel_for(m.labels.size(), [&](std::size_t k) {
    const Eigen::Vector2d p = m.node(static_cast<int>(k % n), static_cast<int>(k / n));
    m.labels[k] = classify_basin(s, m.slice.at(p.x(), p.y()), attractors);
  });
  if (std::all_of(m.labels.begin(), m.labels.end(), [](int l) { return l < 0; }))
    throw GeometryError("brute_force_basin_map: no grid node converged to a known attractor");
  return m;
}

inline BasinMap2D brute_force_basin_map(const SystemSpec& s, const Box2& box, int n,
                                        const std::vector<Attractor>& attractors) {
  require_dim(s.dim, 2, "brute_force_basin_map without a slice");
  return brute_force_basin_map(s, box, n, attractors, Slice2D::identity2());
}

/// One line per grid row (second coordinate ascending), labels comma separated.
inline void write_basin_map_csv(std::ostream& os, const BasinMap2D& m) {
  for (int j = 0; j < m.n; ++j) {
    for (int i = 0; i < m.n; ++i) os << (i ? "," : "") << m.label(i, j);
    os << '\n';
  }
}

inline nlohmann::json basin_map_sidecar(const BasinMap2D& m) {
  nlohmann::json j;
  j["bbox"] = {{"lo", {m.box.lo.x(), m.box.lo.y()}}, {"hi", {m.box.hi.x(), m.box.hi.y()}}};
  j["n"] = m.n;
  j["row_axis"] = "second";
  auto vec = [](const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  j["slice"] = {{"origin", vec(m.slice.origin)}, {"u", vec(m.slice.u)}, {"v", vec(m.slice.v)}};
  j["labels"] = {{"unresolved", BasinLabel::unresolved}, {"diverged", BasinLabel::diverged}};
  j["attractors"] = nlohmann::json::array();
  for (const auto& a : m.attractors)
    j["attractors"].push_back({{"id", a.id},
                               {"kind", a.kind == AttractorKind::fixed_point ? "fixed_point" : "limit_cycle"},
                               {"representative", vec(a.representative)},
                               {"radius", a.radius}});
  return j;
}

// ---------------------------------------------------------------------------
// Stable manifold of a planar saddle by backward integration

/// Both branches of the stable manifold of the saddle at `saddle`, integrated
/// backward in time from saddle +- offset * (stable eigenvector) until they
/// leave `box` or t_max elapses. Each branch is a 2 x k matrix.
inline std::vector<Mat> stable_manifold_2d(const SystemSpec& s, const Vec& saddle, const Box2& box,
                                           double t_max = 50.0, double dt = 1e-3, double offset = 1e-4) {
  require_dim(s.dim, 2, "stable_manifold_2d");
  require_dim(saddle.size(), 2, "stable_manifold_2d saddle");
  const Mat J = finite_difference_jacobian(s, saddle);
  Eigen::EigenSolver<Mat> es(J);
  Eigen::Index k_stable = -1;
  for (Eigen::Index k = 0; k < 2; ++k)
    if (std::abs(es.eigenvalues()[k].imag()) < 1e-12 && es.eigenvalues()[k].real() < 0.0) k_stable = k;
  if (k_stable < 0 || es.eigenvalues()[1 - k_stable].real() <= 0.0)
    throw GeometryError("stable_manifold_2d: point is not a saddle");
  const Vec e = es.eigenvectors().col(k_stable).real().normalized();
  SystemSpec back = s;
  back.field = [f = s.field](const Eigen::Ref<const Vec>& x, Eigen::Ref<Vec> dx) {
    f(x, dx);
    dx = -dx;
  };
  std::vector<Mat> out;
  for (double sign : {1.0, -1.0}) {
    Vec x = saddle + sign * offset * e;
    std::vector<Eigen::Vector2d> pts{x};
    auto inside = [&](const Vec& p) {
      return p[0] >= box.lo.x() && p[0] <= box.hi.x() && p[1] >= box.lo.y() && p[1] <= box.hi.y();
    };
    try {
      integrate_with(back, x, t_max, dt, [&](const Vec& p, double) {
        pts.emplace_back(p);
        return !inside(p);
      });
    } catch (const NonFiniteError&) {
    }
    Mat m(2, static_cast<Eigen::Index>(pts.size()));
    for (std::size_t k = 0; k < pts.size(); ++k) m.col(static_cast<Eigen::Index>(k)) = pts[k];
    out.push_back(std::move(m));
  }
  return out;
}

/// Distance from every column of `pts` to the nearest segment of a polyline.
inline double point_to_polyline(const Eigen::Vector2d& p, const Mat& line) {
  double best = std::numeric_limits<double>::infinity();
  if (line.cols() == 1) return (p - line.col(0)).norm();
  for (Eigen::Index k = 0; k + 1 < line.cols(); ++k) {
    const Eigen::Vector2d a = line.col(k), b = line.col(k + 1);
    const Eigen::Vector2d ab = b - a;
    const double len2 = ab.squaredNorm();
    const double t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
    best = std::min(best, (p - (a + t * ab)).norm());
  }
  return best;
}

// ---------------------------------------------------------------------------
// Hausdorff distance between finite point sets (columns), by brute force.

inline double directed_hausdorff(const Mat& a, const Mat& b) {
  require_dim(b.rows(), a.rows(), "hausdorff");
  if (a.cols() == 0 || b.cols() == 0) throw GeometryError("hausdorff: empty point set");
  std::vector<double> nearest(static_cast<std::size_t>(a.cols()));
  parallel_for(nearest.size(), [&](std::size_t i) {
    const auto p = a.col(static_cast<Eigen::Index>(i));
    nearest[i] = (b.colwise() - p).colwise().squaredNorm().minCoeff();
  });
  return std::sqrt(*std::max_element(nearest.begin(), nearest.end()));
}

inline double hausdorff(const Mat& a, const Mat& b) { return std::max(directed_hausdorff(a, b), directed_hausdorff(b, a)); }

/// Polyline vertices stacked as columns, with every segment subdivided so
/// consecutive points are at most `spacing` apart.
inline Mat polyline_points(const std::vector<Polyline>& lines, double spacing) {
  std::vector<Eigen::Vector2d> pts;
  for (const auto& l : lines) {
    for (std::size_t k = 0; k < l.size(); ++k) {
      pts.push_back(l[k]);
      if (k + 1 == l.size()) break;
      const int sub = static_cast<int>(std::ceil((l[k + 1] - l[k]).norm() / spacing));
      for (int q = 1; q < sub; ++q) pts.push_back(l[k] + (l[k + 1] - l[k]) * (static_cast<double>(q) / sub));
    }
  }
  Mat out(2, static_cast<Eigen::Index>(pts.size()));
  for (std::size_t k = 0; k < pts.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = pts[k];
  return out;
}

}  // namespace sepx
