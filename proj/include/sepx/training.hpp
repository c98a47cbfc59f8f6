#pragma once

// Koopman-PDE training: shuffle-normalized residual loss, balance penalty,
// Adam, and the multi-distribution training loop.

#include "sepx/sampling.hpp"

#include <chrono>
#include <numeric>
#include <optional>

namespace sepx {

struct TrainConfig {
  double lambda = 1.0;
  double gamma_bal = 0.05;
  Eigen::Index batch = 1000;
  long iterations = 1000;
  double lr = 1e-4;
  double weight_decay = 1e-5;
  double eps_guard = 1e-12;
  std::vector<Distribution> distributions;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lambda > 0.0)) throw ConfigError("train: lambda must be > 0");
    if (batch < 2) throw ConfigError("train: batch size B must be >= 2 (the shuffle needs a non-identity permutation)");
    if (iterations < 1) throw ConfigError("train: iterations T must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("train: learning rate must be > 0");
    if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
    if (gamma_bal < 0.0) throw ConfigError("train: gamma_bal must be >= 0");
    if (distributions.empty()) throw ConfigError("train: at least one sampling distribution is required");
  }
};

struct TrainRecord {
  struct Row {
    long iter = 0;
    double total = 0.0;
    std::vector<double> ratio;
    std::vector<double> balance;
    double seconds = 0.0;  // wall-clock since the start of training
  };
  std::vector<Row> rows;
  std::string checkpoint_path;

  void write_csv(std::ostream& os) const {
    const std::size_t J = rows.empty() ? 0 : rows.front().ratio.size();
    os << "iter,L_total";
    for (std::size_t j = 1; j <= J; ++j) os << ",L_ratio_j" << j;
    for (std::size_t j = 1; j <= J; ++j) os << ",L_bal_j" << j;
    os << '\n';
    for (const auto& r : rows) {
      os << r.iter << ',' << fmt17(r.total);
      for (double v : r.ratio) os << ',' << fmt17(v);
      for (double v : r.balance) os << ',' << fmt17(v);
      os << '\n';
    }
  }
};

// ---------------------------------------------------------------------------
// Per-batch terms

struct PdeTerms {
  Vec lhs;  // grad psi(x_i) . f(x_i)
  Vec rhs;  // lambda psi(x_i)
};

/// f evaluated at every column of a batch.
inline Mat field_on_batch(const SystemSpec& s, const VectorBatch& x) {
  require_dim(x.rows(), s.dim, "field_on_batch");
  Mat v(x.rows(), x.cols());
  for (Eigen::Index b = 0; b < x.cols(); ++b) {
    Eigen::Ref<Vec> out = v.col(b);
    s.field(x.col(b), out);
  }
  if (!v.allFinite()) throw NonFiniteError("non-finite vector field values in batch");
  return v;
}

template <KefModelLike M>
PdeTerms pde_terms(const M& model, const VectorBatch& x, const SystemSpec& s, double lambda) {
  if (x.cols() == 0) throw ConfigError("pde_terms: empty batch");
  DualBatch dual(x, field_on_batch(s, x));
  auto tape = model.forward_tangent(dual);
  return {tape.tangent, lambda * tape.value};
}

inline PdeTerms pde_terms(const KefModel& model, const VectorBatch& x, const SystemSpec& s, double lambda) {
  return model.visit([&](const auto& m) { return pde_terms(m, x, s, lambda); });
}

using Permutation = std::vector<Eigen::Index>;

/// Uniform random permutation of 0..B-1, redrawn if it is the identity.
template <typename Rng>
Permutation draw_permutation(Eigen::Index B, Rng& rng) {
  if (B < 2) throw ConfigError("draw_permutation: B must be >= 2");
  Permutation p(static_cast<std::size_t>(B));
  for (;;) {
    std::iota(p.begin(), p.end(), Eigen::Index{0});
    std::shuffle(p.begin(), p.end(), rng);
    for (Eigen::Index i = 0; i < B; ++i)
      if (p[static_cast<std::size_t>(i)] != i) return p;
  }
}

/// sum (LHS_i - RHS_i)^2 / (sum (LHS_i - RHS_perm(i))^2 + eps).
inline double ratio_loss(const Vec& lhs, const Vec& rhs, const Permutation& perm, double eps = 1e-12) {
  require_dim(rhs.size(), lhs.size(), "ratio_loss");
  require_dim(static_cast<Eigen::Index>(perm.size()), lhs.size(), "ratio_loss permutation");
  double num = 0.0, den = 0.0;
  for (Eigen::Index i = 0; i < lhs.size(); ++i) {
    const double a = lhs[i] - rhs[i];
    const double b = lhs[i] - rhs[perm[static_cast<std::size_t>(i)]];
    num += a * a;
    den += b * b;
  }
  return num / (den + eps);
}

/// mean(psi)^2 / (population variance + eps).
inline double balance_loss(const Vec& psi, double eps = 1e-12) {
  if (psi.size() < 2) throw ConfigError("balance_loss: need at least 2 values");
  const double m = psi.mean();
  const double v = (psi.array() - m).square().mean();
  return m * m / (v + eps);
}

struct BatchLoss {
  double ratio = 0.0;
  double balance = 0.0;
};

/// Ratio + gamma * balance together with the adjoints with respect to psi_i
/// and LHS_i.
inline LossTerms combined_loss_terms(const Vec& psi, const Vec& lhs, double lambda, double gamma_bal,
                                     const Permutation& perm, double eps, BatchLoss* parts = nullptr) {
  const Eigen::Index B = psi.size();
  LossTerms t;
  t.d_value = Vec::Zero(B);
  t.d_tangent = Vec::Zero(B);
  double num = 0.0, den = 0.0;
  Vec res(B), shuf(B);
  for (Eigen::Index i = 0; i < B; ++i) {
    res[i] = lhs[i] - lambda * psi[i];
    shuf[i] = lhs[i] - lambda * psi[perm[static_cast<std::size_t>(i)]];
    num += res[i] * res[i];
    den += shuf[i] * shuf[i];
  }
  const double D = den + eps;
  const double ratio = num / D;
  const double k = num / (D * D);
  for (Eigen::Index i = 0; i < B; ++i) {
    t.d_tangent[i] += 2.0 * res[i] / D - 2.0 * k * shuf[i];
    t.d_value[i] += -2.0 * lambda * res[i] / D;
    t.d_value[perm[static_cast<std::size_t>(i)]] += 2.0 * lambda * k * shuf[i];
  }
  double bal = 0.0;
  {
    const double Bd = static_cast<double>(B);
    const double m = psi.mean();
    const double v = (psi.array() - m).square().mean();
    const double V = v + eps;
    bal = m * m / V;
    if (gamma_bal != 0.0) {
      const double a = 2.0 * m / (Bd * V);
      const double c = m * m / (V * V) * 2.0 / Bd;
      t.d_value.array() += gamma_bal * (a - c * (psi.array() - m));
    }
  }
  t.value = ratio + gamma_bal * bal;
  if (parts) *parts = {ratio, bal};
  return t;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  Vec m;
  Vec v;
  long step = 0;
};

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Bias-corrected Adam; weight decay enters as an L2 term added to the gradient.
inline void adam_step(Vec& theta, const Vec& grad, AdamState& st, const AdamOptions& o) {
  require_dim(grad.size(), theta.size(), "adam_step gradient");
  if (st.m.size() == 0) {
    st.m = Vec::Zero(theta.size());
    st.v = Vec::Zero(theta.size());
  }
  require_dim(st.m.size(), theta.size(), "adam_step state");
  if (!grad.allFinite()) throw NonFiniteError("adam_step: non-finite gradient");
  const Vec g = grad + o.weight_decay * theta;
  ++st.step;
  st.m = o.beta1 * st.m + (1.0 - o.beta1) * g;
  st.v = o.beta2 * st.v + (1.0 - o.beta2) * g.cwiseProduct(g);
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(st.step));
  theta.array() -= o.lr * (st.m.array() / c1) / ((st.v.array() / c2).sqrt() + o.eps);
}

// ---------------------------------------------------------------------------
// Training loop

/// Thrown when a loss or gradient turns non-finite; carries the parameters
/// from the last completed iteration.
struct TrainingAborted : NonFiniteError {
  TrainingAborted(const std::string& what, KefModel last, TrainRecord rec)
      : NonFiniteError(what), last_good(std::move(last)), record(std::move(rec)) {}
  KefModel last_good;
  TrainRecord record;
};

struct TrainResult {
  KefModel model;
  TrainRecord record;
};

using IterationHook = std::function<void(long iter, const KefModel& model)>;

inline TrainResult train(KefModel model, const SystemSpec& s, const TrainConfig& cfg,
                         const IterationHook& hook = {}) {
  cfg.validate();
  require_dim(model.input_dim(), s.dim, "train: model input vs system");
  for (const auto& d : cfg.distributions) require_dim(d.dim(), s.dim, "train: distribution vs system");
  const std::size_t J = cfg.distributions.size();
  std::mt19937_64 perm_rng(derive_seed(cfg.seed, 0x9E4));
  AdamState adam;
  const AdamOptions opts{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay};
  TrainRecord rec;
  rec.rows.reserve(static_cast<std::size_t>(cfg.iterations));
  const auto t0 = std::chrono::steady_clock::now();
  ResNetKef::Tape resnet_tape;
  RbfKef::Tape rbf_tape;
  auto tape_for = [&](const auto& m) -> auto& {
    if constexpr (std::is_same_v<std::decay_t<decltype(m)>, ResNetKef>) return resnet_tape;
    else return rbf_tape;
  };

  for (long t = 0; t < cfg.iterations; ++t) {
    TrainRecord::Row row;
    row.iter = t + 1;
    row.ratio.resize(J);
    row.balance.resize(J);
    Vec grad = Vec::Zero(model.params().size());
    try {
      for (std::size_t j = 0; j < J; ++j) {
        const VectorBatch x = sample(cfg.distributions[j], cfg.batch, static_cast<std::uint64_t>(t));
        const DualBatch dual(x, field_on_batch(s, x));
        const Permutation perm = draw_permutation(cfg.batch, perm_rng);
        BatchLoss parts;
        const double value = model.visit([&](const auto& m) {
          return accumulate_loss_gradient(m, dual, [&](const Vec& psi, const Vec& lhs) {
            return combined_loss_terms(psi, lhs, cfg.lambda, cfg.gamma_bal, perm, cfg.eps_guard, &parts);
          }, grad, tape_for(m));
        });
        row.ratio[j] = parts.ratio;
        row.balance[j] = parts.balance;
        row.total += value;
      }
      if (!std::isfinite(row.total)) throw NonFiniteError("non-finite L_total");
      if (!grad.allFinite()) throw NonFiniteError("non-finite parameter gradient");
      KefModel next = model;
      adam_step(next.params().values(), grad, adam, opts);
      next.constrain();
      if (!next.params().values().allFinite()) throw NonFiniteError("non-finite parameters after update");
      model = std::move(next);
    } catch (const NonFiniteError& e) {
      throw TrainingAborted(std::string("training aborted at iteration ") + std::to_string(t + 1) + ": " + e.what(),
                            model, rec);
    }
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rec.rows.push_back(std::move(row));
    if (hook) hook(t + 1, model);
  }
  return {std::move(model), std::move(rec)};
}

/// Ratio and balance losses on a fresh batch, independent of the training stream.
inline BatchLoss evaluate_losses(const KefModel& model, const SystemSpec& s, const Distribution& d, Eigen::Index B,
                                 double lambda, std::uint64_t seed = 0, double eps = 1e-12) {
  const VectorBatch x = sample(d, B, (std::uint64_t{1} << 40) + seed);
  const PdeTerms pt = pde_terms(model, x, s, lambda);
  std::mt19937_64 rng(derive_seed(seed, 0xE7A1));
  const Permutation perm = draw_permutation(B, rng);
  const Vec psi = pt.rhs / lambda;
  return {ratio_loss(pt.lhs, pt.rhs, perm, eps), balance_loss(psi, eps)};
}

/// Mean evaluation ratio loss over the configured distributions.
inline double final_ratio_loss(const KefModel& model, const SystemSpec& s, const TrainConfig& cfg,
                               std::uint64_t seed = 0) {
  double acc = 0.0;
  for (std::size_t j = 0; j < cfg.distributions.size(); ++j)
    acc += evaluate_losses(model, s, cfg.distributions[j], cfg.batch, cfg.lambda, seed + j, cfg.eps_guard).ratio;
  return acc / static_cast<double>(cfg.distributions.size());
}

}  // namespace sepx
