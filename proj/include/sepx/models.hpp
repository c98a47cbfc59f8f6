#pragma once

// KEF model families: a zero-padded tanh residual network and a Gaussian
// radial-basis-function layer. Both produce a single scalar output and
// implement the tangent/adjoint sweeps consumed by autodiff.hpp.

#include "sepx/autodiff.hpp"

#include <istream>
#include <ostream>
#include <random>
#include <variant>

namespace sepx {

enum class ModelKind { resnet, rbf };

inline std::string to_string(ModelKind k) { return k == ModelKind::resnet ? "resnet" : "rbf"; }

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "resnet") return ModelKind::resnet;
  if (s == "rbf") return ModelKind::rbf;
  throw ConfigError("unknown model kind '" + std::string(s) + "' (expected resnet or rbf)");
}

/// Architecture hyperparameters. Defaults follow the reference settings
/// (depth 20, width 400, 300 RBF units); callers shrink them for desk runs.
struct ModelShape {
  ModelKind kind = ModelKind::resnet;
  Eigen::Index d_in = 1;
  Eigen::Index depth = 20;
  Eigen::Index width = 400;
  Eigen::Index units = 300;
};

// ---------------------------------------------------------------------------

/// x0 = Pad(a x); x_{l+1} = x_l + tanh(W_l x_l + b_l) for l = 1..depth-1;
/// psi = W_out x_depth + b_out.
class ResNetKef {
 public:
  struct Tape {
    std::vector<Mat> h;   // layer inputs h_0..h_{L-1}
    std::vector<Mat> t;   // tangent inputs
    std::vector<Mat> s;   // tanh(W h + b) per block
    std::vector<Mat> tz;  // W t per block
    Vec value;
    Vec tangent;
    struct Scratch {
      Mat h_bar, t_bar, tz_bar, z_bar;
    };
    mutable Scratch work;  // adjoint-sweep buffers, reused across calls
  };

  ResNetKef() = default;

  ResNetKef(Eigen::Index d_in, Eigen::Index d_hid, Eigen::Index depth, double a)
      : d_in_(d_in), d_hid_(d_hid), depth_(depth), a_(a) {
    if (d_in < 1) throw ConfigError("resnet: d_in must be >= 1");
    if (d_hid <= d_in) throw ConfigError("resnet: d_hid must exceed d_in so padding is defined");
    if (depth < 1) throw ConfigError("resnet: depth must be >= 1");
    if (!(a > 0.0) || !std::isfinite(a)) throw ConfigError("resnet: input scale a must be positive");
    for (Eigen::Index l = 1; l < depth; ++l) {
      params_.add_block("W" + std::to_string(l), d_hid, d_hid);
      params_.add_block("b" + std::to_string(l), d_hid, 1);
    }
    params_.add_block("W_out", 1, d_hid);
    params_.add_block("b_out", 1, 1);
  }

  Eigen::Index input_dim() const { return d_in_; }
  Eigen::Index hidden_dim() const { return d_hid_; }
  Eigen::Index depth() const { return depth_; }
  double input_scale() const { return a_; }
  ParamVector& params() { return params_; }
  const ParamVector& params() const { return params_; }

  /// Residual blocks are numbered 1..depth-1.
  auto weight(Eigen::Index l) const { return params_.block(2 * static_cast<std::size_t>(l - 1)); }
  auto bias(Eigen::Index l) const { return params_.block(2 * static_cast<std::size_t>(l - 1) + 1); }
  auto out_weight() const { return params_.block(2 * static_cast<std::size_t>(depth_ - 1)); }
  double out_bias() const { return params_.block(2 * static_cast<std::size_t>(depth_ - 1) + 1)(0, 0); }

  /// The zero-padded, scaled input layer x_0.
  Mat pad(const Mat& x) const {
    require_dim(x.rows(), d_in_, "resnet input");
    Mat h = Mat::Zero(d_hid_, x.cols());
    h.topRows(d_in_) = a_ * x;
    return h;
  }

  /// Hidden activations x_0..x_{depth-1} for one batch (x_0 first).
  std::vector<Mat> activations(const Mat& x) const {
    std::vector<Mat> out{pad(x)};
    for (Eigen::Index l = 1; l < depth_; ++l) {
      const Mat& h = out.back();
      Mat z = weight(l) * h;
      z.colwise() += Vec(bias(l).col(0));
      out.push_back(h + z.array().tanh().matrix());
    }
    return out;
  }

  Vec values(const Mat& x) const {
    Mat h = pad(x);
    for (Eigen::Index l = 1; l < depth_; ++l) {
      Mat z = weight(l) * h;
      z.colwise() += Vec(bias(l).col(0));
      h.array() += z.array().tanh();
    }
    Vec y = (out_weight() * h).transpose();
    y.array() += out_bias();
    return y;
  }

  Tape forward_tangent(const DualBatch& dual) const {
    Tape tp;
    forward_tangent(dual, tp);
    return tp;
  }

  /// Tangent sweep reusing the storage of an existing tape.
  void forward_tangent(const DualBatch& dual, Tape& tp) const {
    require_dim(dual.dim(), d_in_, "resnet input");
    const auto n = static_cast<std::size_t>(depth_);
    const Eigen::Index B = dual.size();
    tp.h.resize(n);
    tp.t.resize(n);
    tp.s.resize(n - 1);
    tp.tz.resize(n - 1);
    tp.h[0].setZero(d_hid_, B);
    tp.h[0].topRows(d_in_) = a_ * dual.primal;
    tp.t[0].setZero(d_hid_, B);
    tp.t[0].topRows(d_in_) = a_ * dual.tangent;
    for (Eigen::Index l = 1; l < depth_; ++l) {
      const auto k = static_cast<std::size_t>(l - 1);
      const auto W = weight(l);
      Mat& s = tp.s[k];
      Mat& tz = tp.tz[k];
      s.resize(d_hid_, B);
      tz.resize(d_hid_, B);
      s.noalias() = W * tp.h[k];
      s.colwise() += bias(l).col(0);
      s = s.array().tanh();
      tz.noalias() = W * tp.t[k];
      tp.h[k + 1] = tp.h[k] + s;
      tp.t[k + 1] = tp.t[k].array() + (1.0 - s.array().square()) * tz.array();
    }
    const auto Wout = out_weight();
    tp.value.noalias() = (Wout * tp.h.back()).transpose();
    tp.value.array() += out_bias();
    tp.tangent.noalias() = (Wout * tp.t.back()).transpose();
  }

  /// Adds d(loss)/d(theta) into grad given per-sample adjoints of psi and of
  /// the directional derivative. The tape must come from forward_tangent.
  void backward(const Tape& tp, const Vec& adj_value, const Vec& adj_tangent, Vec& grad) const {
    const auto Wout = out_weight();
    auto gblock = [&](std::size_t i) {
      const auto& b = params_.layout()[i];
      return Eigen::Map<RowMat>(grad.data() + b.offset, b.rows, b.cols);
    };
    const std::size_t out_idx = 2 * static_cast<std::size_t>(depth_ - 1);
    gblock(out_idx).noalias() += (tp.h.back() * adj_value + tp.t.back() * adj_tangent).transpose();
    gblock(out_idx + 1)(0, 0) += adj_value.sum();
    auto& w = tp.work;
    w.h_bar.noalias() = Wout.transpose() * adj_value.transpose();
    w.t_bar.noalias() = Wout.transpose() * adj_tangent.transpose();

    for (Eigen::Index l = depth_ - 1; l >= 1; --l) {
      const auto k = static_cast<std::size_t>(l - 1);
      const Mat& h = tp.h[k];
      const Mat& t = tp.t[k];
      const Mat& s = tp.s[k];
      const Mat& tz = tp.tz[k];
      const auto W = weight(l);
      // tz_bar = (1 - s^2) * t_bar;  z_bar = (h_bar - 2 s t_bar tz) * (1 - s^2)
      w.tz_bar = (1.0 - s.array().square()) * w.t_bar.array();
      w.z_bar = (w.h_bar.array() - 2.0 * s.array() * w.t_bar.array() * tz.array()) * (1.0 - s.array().square());
      auto gW = gblock(2 * k);
      gW.noalias() += w.z_bar * h.transpose();
      gW.noalias() += w.tz_bar * t.transpose();
      gblock(2 * k + 1).col(0) += w.z_bar.rowwise().sum();
      if (l > 1) {
        w.h_bar.noalias() += W.transpose() * w.z_bar;
        w.t_bar.noalias() += W.transpose() * w.tz_bar;
      }
    }
  }

  void constrain() {}

 private:
  Eigen::Index d_in_ = 1;
  Eigen::Index d_hid_ = 2;
  Eigen::Index depth_ = 1;
  double a_ = 1.0;
  ParamVector params_;
};

// ---------------------------------------------------------------------------


/// psi(x) = sum_i a_i exp(-(eps_i |x - c_i|)^2).
class RbfKef {
 public:
  struct Tape {
    Mat primal;
    Mat dir;
    Mat phi;  // units x B basis activations
    Mat g;    // units x B, (x - c_i) . v
    Vec value;
    Vec tangent;
  };

  RbfKef() = default;

  RbfKef(Eigen::Index d_in, Eigen::Index units) : d_in_(d_in), units_(units) {
    if (d_in < 1 || units < 1) throw ConfigError("rbf: d_in and units must be >= 1");
    params_.add_block("centers", units, d_in);
    params_.add_block("shapes", units, 1);
    params_.add_block("weights", 1, units);
  }

  Eigen::Index input_dim() const { return d_in_; }
  Eigen::Index units() const { return units_; }
  ParamVector& params() { return params_; }
  const ParamVector& params() const { return params_; }

  auto centers() const { return params_.block(0); }
  auto shapes() const { return params_.block(1); }
  auto weights() const { return params_.block(2); }
  auto centers() { return params_.block(0); }
  auto shapes() { return params_.block(1); }
  auto weights() { return params_.block(2); }

  Vec values(const Mat& x) const {
    require_dim(x.rows(), d_in_, "rbf input");
    const auto C = centers();
    const auto E = shapes();
    const auto A = weights();
    Vec y = Vec::Zero(x.cols());
    for (Eigen::Index b = 0; b < x.cols(); ++b) {
      double acc = 0.0;
      for (Eigen::Index i = 0; i < units_; ++i) {
        const double q = (x.col(b).transpose() - C.row(i)).squaredNorm();
        acc += A(0, i) * std::exp(-E(i, 0) * E(i, 0) * q);
      }
      y[b] = acc;
    }
    return y;
  }

  Tape forward_tangent(const DualBatch& dual) const {
    require_dim(dual.dim(), d_in_, "rbf input");
    const auto C = centers();
    const auto E = shapes();
    const auto A = weights();
    const Eigen::Index B = dual.size();
    Tape tp{dual.primal, dual.tangent, Mat(units_, B), Mat(units_, B), Vec::Zero(B), Vec::Zero(B)};
    for (Eigen::Index b = 0; b < B; ++b) {
      for (Eigen::Index i = 0; i < units_; ++i) {
        const Vec r = dual.primal.col(b) - C.row(i).transpose();
        const double e2 = E(i, 0) * E(i, 0);
        const double phi = std::exp(-e2 * r.squaredNorm());
        const double g = r.dot(dual.tangent.col(b));
        tp.phi(i, b) = phi;
        tp.g(i, b) = g;
        tp.value[b] += A(0, i) * phi;
        tp.tangent[b] += A(0, i) * phi * (-2.0 * e2 * g);
      }
    }
    return tp;
  }

  void backward(const Tape& tp, const Vec& adj_value, const Vec& adj_tangent, Vec& grad) const {
    const auto C = centers();
    const auto E = shapes();
    const auto A = weights();
    const auto& lay = params_.layout();
    Eigen::Map<RowMat> gC(grad.data() + lay[0].offset, units_, d_in_);
    Eigen::Map<RowMat> gE(grad.data() + lay[1].offset, units_, 1);
    Eigen::Map<RowMat> gA(grad.data() + lay[2].offset, 1, units_);
    for (Eigen::Index b = 0; b < tp.primal.cols(); ++b) {
      const double gy = adj_value[b];
      const double gt = adj_tangent[b];
      for (Eigen::Index i = 0; i < units_; ++i) {
        const Vec r = tp.primal.col(b) - C.row(i).transpose();
        const double e = E(i, 0);
        const double e2 = e * e;
        const double phi = tp.phi(i, b);
        const double g = tp.g(i, b);
        const double q = r.squaredNorm();
        const double a = A(0, i);
        gA(0, i) += gy * phi + gt * phi * (-2.0 * e2 * g);
        gE(i, 0) += gy * a * phi * (-2.0 * e * q) + gt * (-2.0 * a * g * phi * (2.0 * e - 2.0 * e2 * e * q));
        // d psi / d c_i and d(grad psi . v) / d c_i
        gC.row(i) += (gy * a * phi * 2.0 * e2 * r -
                      gt * 2.0 * a * e2 * phi * (2.0 * e2 * g * r - tp.dir.col(b)))
                         .transpose();
      }
    }
  }

  /// Only eps^2 enters the model, so folding signs keeps the function unchanged.
  void constrain() { shapes() = shapes().cwiseAbs(); }

 private:
  Eigen::Index d_in_ = 1;
  Eigen::Index units_ = 1;
  ParamVector params_;
};

static_assert(KefModelLike<ResNetKef>);
static_assert(KefModelLike<RbfKef>);

// ---------------------------------------------------------------------------

/// Runtime-selected KEF model.
class KefModel {
 public:
  using Variant = std::variant<ResNetKef, RbfKef>;

  KefModel() = default;
  KefModel(ResNetKef m) : impl_(std::move(m)) {}
  KefModel(RbfKef m) : impl_(std::move(m)) {}

  ModelKind kind() const { return impl_.index() == 0 ? ModelKind::resnet : ModelKind::rbf; }
  Variant& variant() { return impl_; }
  const Variant& variant() const { return impl_; }

  template <typename Fn>
  decltype(auto) visit(Fn&& fn) {
    return std::visit(std::forward<Fn>(fn), impl_);
  }
  template <typename Fn>
  decltype(auto) visit(Fn&& fn) const {
    return std::visit(std::forward<Fn>(fn), impl_);
  }

  Eigen::Index input_dim() const {
    return visit([](const auto& m) { return m.input_dim(); });
  }
  ParamVector& params() {
    return visit([](auto& m) -> ParamVector& { return m.params(); });
  }
  const ParamVector& params() const {
    return visit([](const auto& m) -> const ParamVector& { return m.params(); });
  }
  Vec values(const Mat& x) const {
    return visit([&](const auto& m) { return m.values(x); });
  }
  double operator()(const StatePoint& x) const {
    return visit([&](const auto& m) { return sepx::eval(m, x); });
  }
  double directional_derivative(const StatePoint& x, const StatePoint& v) const {
    return visit([&](const auto& m) { return sepx::directional_derivative(m, x, v); });
  }
  Vec gradient(const StatePoint& x) const {
    return visit([&](const auto& m) { return sepx::input_gradient(m, x); });
  }
  void constrain() {
    visit([](auto& m) { m.constrain(); });
  }

 private:
  Variant impl_;
};

// ---------------------------------------------------------------------------
// Initialization. Residual weights and the output row are uniform in
// +-1/sqrt(width) with zero biases, and the input scale makes the preview
// coordinates unit RMS. RBF centers are drawn from the preview with a common
// shape rbf_shape_factor / (median pairwise center distance); a bump then
// spans about a third of the typical center spacing, narrow enough for the
// weights alone to place a zero set within a short training budget.

inline constexpr double rbf_shape_factor = 3.0;

inline double median_pairwise_distance(const Mat& pts) {
  std::vector<double> d;
  const Eigen::Index n = pts.cols();
  d.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) d.push_back((pts.col(i) - pts.col(j)).norm());
  if (d.empty()) return 0.0;
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  if (d.size() % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(d.begin(), mid);
  return 0.5 * (lower + upper);
}

inline KefModel init_model(const ModelShape& shape, std::uint64_t seed, const VectorBatch& preview) {
  if (preview.cols() == 0) throw ConfigError("init_model: empty preview batch");
  require_dim(preview.rows(), shape.d_in, "init_model preview");
  std::mt19937_64 rng(derive_seed(seed, 0x1417));
  if (shape.kind == ModelKind::resnet) {
    const double rms = std::sqrt(preview.array().square().mean());
    if (!(rms > 0.0)) throw ConfigError("init_model: preview has zero RMS");
    ResNetKef m(shape.d_in, shape.width, shape.depth, 1.0 / rms);
    const double bound = 1.0 / std::sqrt(static_cast<double>(shape.width));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index l = 1; l < shape.depth; ++l) {
      auto W = m.params().block(2 * static_cast<std::size_t>(l - 1));
      for (Eigen::Index r = 0; r < W.rows(); ++r)
        for (Eigen::Index c = 0; c < W.cols(); ++c) W(r, c) = u(rng);
    }
    auto Wout = m.params().block("W_out");
    for (Eigen::Index c = 0; c < Wout.cols(); ++c) Wout(0, c) = u(rng);
    return m;
  }
  RbfKef m(shape.d_in, shape.units);
  const Eigen::Index n = preview.cols();
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  Mat chosen(shape.d_in, shape.units);
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  for (Eigen::Index i = 0; i < shape.units; ++i) {
    const Eigen::Index src = i < n ? idx[static_cast<std::size_t>(i)] : pick(rng);
    chosen.col(i) = preview.col(src);
  }
  m.centers() = chosen.transpose();
  const double med = median_pairwise_distance(chosen);
  if (!(med > 0.0)) throw ConfigError("init_model: RBF centers are coincident");
  m.shapes().setConstant(rbf_shape_factor / med);
  const double bound = 1.0 / std::sqrt(static_cast<double>(shape.units));
  std::uniform_real_distribution<double> u(-bound, bound);
  auto A = m.weights();
  for (Eigen::Index i = 0; i < shape.units; ++i) A(0, i) = u(rng);
  return m;
}

// ---------------------------------------------------------------------------
// Plain-text block format shared by model checkpoints and RNN weight files:
//   BLOCK <name> <rows> <cols>
//   <row-major values, one row per line, 17 significant digits>

inline void write_block(std::ostream& os, const std::string& name, const Eigen::Ref<const RowMat>& m) {
  os << "BLOCK " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) os << ' ';
      os << fmt17(m(r, c));
    }
    os << '\n';
  }
}

struct NamedBlock {
  std::string name;
  RowMat data;
};

/// Reads the next BLOCK from a stream; returns false at end of input.
inline bool read_block(std::istream& is, NamedBlock& out) {
  std::string tag;
  if (!(is >> tag)) return false;
  if (tag != "BLOCK") throw ConfigError("expected BLOCK, found '" + tag + "'");
  Eigen::Index rows = 0, cols = 0;
  if (!(is >> out.name >> rows >> cols) || rows < 0 || cols < 0)
    throw ConfigError("malformed BLOCK header");
  out.data.resize(rows, cols);
  std::string tok;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (!(is >> tok)) throw ConfigError("BLOCK " + out.name + ": truncated values");
      char* end = nullptr;
      out.data(r, c) = std::strtod(tok.c_str(), &end);
      if (*end != '\0') throw ConfigError("BLOCK " + out.name + ": bad value '" + tok + "'");
    }
  return true;
}

inline void write_checkpoint(std::ostream& os, const KefModel& model) {
  os << "KEFMODEL v1 " << to_string(model.kind()) << '\n';
  model.visit([&](const auto& m) {
    using T = std::decay_t<decltype(m)>;
    if constexpr (std::is_same_v<T, ResNetKef>) {
      os << "d_in=" << m.input_dim() << '\n'
         << "d_hid=" << m.hidden_dim() << '\n'
         << "depth=" << m.depth() << '\n'
         << "a=" << fmt17(m.input_scale()) << '\n';
    } else {
      os << "d_in=" << m.input_dim() << '\n' << "units=" << m.units() << '\n';
    }
  });
  const auto& p = model.params();
  for (std::size_t i = 0; i < p.layout().size(); ++i) write_block(os, p.layout()[i].name, p.block(i));
}

inline KefModel read_checkpoint(std::istream& is) {
  std::string magic, version, kind_s;
  if (!(is >> magic >> version >> kind_s) || magic != "KEFMODEL")
    throw ConfigError("not a KEF model checkpoint (missing 'KEFMODEL' header)");
  if (version != "v1") throw ConfigError("unsupported checkpoint version '" + version + "'");
  const ModelKind kind = parse_model_kind(kind_s);
  std::map<std::string, std::string> hyper;
  std::string tok;
  while (is >> std::ws && is.peek() != 'B' && is >> tok) {
    auto eq = tok.find('=');
    if (eq == std::string::npos) throw ConfigError("malformed checkpoint line '" + tok + "'");
    hyper[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  auto get = [&](const std::string& k) -> const std::string& {
    auto it = hyper.find(k);
    if (it == hyper.end()) throw ConfigError("checkpoint missing '" + k + "'");
    return it->second;
  };
  auto get_int = [&](const std::string& k) { return static_cast<Eigen::Index>(std::stoll(get(k))); };
  KefModel model;
  if (kind == ModelKind::resnet) {
    model = ResNetKef(get_int("d_in"), get_int("d_hid"), get_int("depth"), std::strtod(get("a").c_str(), nullptr));
  } else {
    model = RbfKef(get_int("d_in"), get_int("units"));
  }
  auto& p = model.params();
  NamedBlock blk;
  std::size_t seen = 0;
  while (read_block(is, blk)) {
    const auto& info = p.block_info(blk.name);
    if (info.rows != blk.data.rows() || info.cols != blk.data.cols())
      throw ConfigError("checkpoint block " + blk.name + " has wrong shape");
    p.block(blk.name) = blk.data;
    ++seen;
  }
  if (seen != p.layout().size()) throw ConfigError("checkpoint is missing parameter blocks");
  return model;
}

}  // namespace sepx
