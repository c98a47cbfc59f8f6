#pragma once

// Differentiation engine for scalar KEF models.
//
// A model exposes a batched tangent pass: for each sample it propagates the
// primal x and one tangent direction v forward, producing psi(x) and
// grad psi(x) . v in a single sweep. Parameter gradients of any loss built
// from those two per-sample quantities are then obtained by running the
// model's adjoint sweep backwards through both the primal and the tangent
// recurrences (forward-over-reverse). No input Jacobian is ever formed.

#include "sepx/core.hpp"

#include <concepts>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace sepx {

/// One named parameter matrix inside a ParamVector.
struct ParamBlock {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  Eigen::Index offset = 0;

  Eigen::Index size() const { return rows * cols; }
};

/// Flat parameter storage with a stable block layout. Blocks are stored
/// row-major so the flat order matches the checkpoint order.
class ParamVector {
 public:
  using BlockMap = Eigen::Map<RowMat>;
  using ConstBlockMap = Eigen::Map<const RowMat>;

  ParamVector() = default;

  /// Appends a zero-initialized block and returns its index.
  std::size_t add_block(std::string name, Eigen::Index rows, Eigen::Index cols) {
    if (index_.count(name)) throw ConfigError("duplicate parameter block '" + name + "'");
    ParamBlock b{std::move(name), rows, cols, values_.size()};
    Vec grown = Vec::Zero(values_.size() + b.size());
    grown.head(values_.size()) = values_;
    values_ = std::move(grown);
    index_[b.name] = layout_.size();
    layout_.push_back(std::move(b));
    return layout_.size() - 1;
  }

  Vec& values() { return values_; }
  const Vec& values() const { return values_; }
  Eigen::Index size() const { return values_.size(); }
  const std::vector<ParamBlock>& layout() const { return layout_; }

  const ParamBlock& block_info(std::string_view name) const { return layout_.at(find(name)); }

  BlockMap block(std::size_t i) {
    const auto& b = layout_.at(i);
    return BlockMap(values_.data() + b.offset, b.rows, b.cols);
  }
  ConstBlockMap block(std::size_t i) const {
    const auto& b = layout_.at(i);
    return ConstBlockMap(values_.data() + b.offset, b.rows, b.cols);
  }
  BlockMap block(std::string_view name) { return block(find(name)); }
  ConstBlockMap block(std::string_view name) const { return block(find(name)); }

  /// A zero vector with the same layout (used for gradients and optimizer state).
  ParamVector zeros_like() const {
    ParamVector z = *this;
    z.values_.setZero();
    return z;
  }

  bool same_layout(const ParamVector& other) const {
    if (layout_.size() != other.layout_.size()) return false;
    for (std::size_t i = 0; i < layout_.size(); ++i) {
      const auto &a = layout_[i], &b = other.layout_[i];
      if (a.name != b.name || a.rows != b.rows || a.cols != b.cols || a.offset != b.offset) return false;
    }
    return true;
  }

 private:
  std::size_t find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ConfigError("unknown parameter block '" + std::string(name) + "'");
    return it->second;
  }

  Vec values_;
  std::vector<ParamBlock> layout_;
  std::map<std::string, std::size_t> index_;
};

/// Primal points plus one tangent direction per sample, both d x B.
struct DualBatch {
  Mat primal;
  Mat tangent;

  DualBatch() = default;
  DualBatch(Mat p, Mat t) : primal(std::move(p)), tangent(std::move(t)) {
    if (primal.rows() != tangent.rows() || primal.cols() != tangent.cols())
      throw DimensionError("DualBatch: primal and tangent shapes differ");
  }

  Eigen::Index dim() const { return primal.rows(); }
  Eigen::Index size() const { return primal.cols(); }
};

/// Per-sample loss adjoints with respect to psi and to the directional derivative.
struct LossTerms {
  double value = 0.0;
  Vec d_value;    // dL/dpsi_i
  Vec d_tangent;  // dL/d(grad psi_i . v_i)
};

template <typename M>
concept KefModelLike = requires(const M& m, const DualBatch& dual, const Mat& x, const Vec& adj, Vec& grad) {
  typename M::Tape;
  { m.input_dim() } -> std::convertible_to<Eigen::Index>;
  { m.params() } -> std::convertible_to<const ParamVector&>;
  { m.values(x) } -> std::convertible_to<Vec>;
  { m.forward_tangent(dual) } -> std::same_as<typename M::Tape>;
  m.backward(std::declval<const typename M::Tape&>(), adj, adj, grad);
};

/// psi(x) for a single point.
template <KefModelLike M>
double eval(const M& model, const StatePoint& x) {
  require_dim(x.size(), model.input_dim(), "eval");
  Mat col = x;
  return model.values(col)[0];
}

/// grad psi(x) . v in one forward tangent sweep.
template <KefModelLike M>
double directional_derivative(const M& model, const StatePoint& x, const StatePoint& v) {
  require_dim(x.size(), model.input_dim(), "directional_derivative");
  require_dim(v.size(), x.size(), "directional_derivative tangent");
  DualBatch d{Mat(x), Mat(v)};
  return model.forward_tangent(d).tangent[0];
}

/// Full input gradient: one batched tangent sweep with the identity as tangents.
template <KefModelLike M>
Vec input_gradient(const M& model, const StatePoint& x) {
  const Eigen::Index n = model.input_dim();
  require_dim(x.size(), n, "input_gradient");
  DualBatch d(x.replicate(1, n), Mat::Identity(n, n));
  return model.forward_tangent(d).tangent;
}

namespace detail {

inline void check_finite(const Vec& v, const char* term) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw NonFiniteError(std::string("non-finite ") + term + " at sample " + std::to_string(i));
    }
  }
}

}  // namespace detail

/// Runs the tangent sweep on `dual`, evaluates `loss(psi, lhs)` and adds
/// dloss/dtheta into `grad`. Returns the loss value.
template <KefModelLike M, typename Loss>
double accumulate_loss_gradient(const M& model, const DualBatch& dual, Loss&& loss, Vec& grad,
                                typename M::Tape& tape) {
  require_dim(dual.dim(), model.input_dim(), "loss_gradient");
  if (grad.size() != model.params().size()) throw DimensionError("loss_gradient: gradient size mismatch");
  if constexpr (requires { model.forward_tangent(dual, tape); }) {
    model.forward_tangent(dual, tape);
  } else {
    tape = model.forward_tangent(dual);
  }
  detail::check_finite(tape.value, "psi");
  detail::check_finite(tape.tangent, "directional derivative");
  LossTerms terms = loss(static_cast<const Vec&>(tape.value), static_cast<const Vec&>(tape.tangent));
  if (!std::isfinite(terms.value)) throw NonFiniteError("non-finite loss value");
  detail::check_finite(terms.d_value, "loss adjoint dL/dpsi");
  detail::check_finite(terms.d_tangent, "loss adjoint dL/dLHS");
  model.backward(tape, terms.d_value, terms.d_tangent, grad);
  return terms.value;
}

template <KefModelLike M, typename Loss>
double accumulate_loss_gradient(const M& model, const DualBatch& dual, Loss&& loss, Vec& grad) {
  typename M::Tape tape;
  return accumulate_loss_gradient(model, dual, std::forward<Loss>(loss), grad, tape);
}

/// Gradient of a batch loss with respect to the model parameters.
template <KefModelLike M, typename Loss>
std::pair<double, ParamVector> loss_gradient(const M& model, const DualBatch& dual, Loss&& loss) {
  ParamVector g = model.params().zeros_like();
  double value = accumulate_loss_gradient(model, dual, std::forward<Loss>(loss), g.values());
  detail::check_finite(g.values(), "parameter gradient");
  return {value, std::move(g)};
}

}  // namespace sepx
