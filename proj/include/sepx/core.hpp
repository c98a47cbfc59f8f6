#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace sepx {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A single point in phase space.
using StatePoint = Vec;

/// A batch of phase-space points stored column-wise (d rows, one column per sample),
/// so that batched matrix products act on whole batches at once.
using VectorBatch = Mat;

// ---------------------------------------------------------------------------
// Error hierarchy. Each category maps onto one CLI exit code.

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid configuration, arguments, or file contents (exit code 2).
struct ConfigError : Error {
  using Error::Error;
};

/// Shape or dimension disagreement between a model, a point, and a system.
struct DimensionError : ConfigError {
  using ConfigError::ConfigError;
};

/// A non-finite value appeared during evaluation or training (exit code 3).
struct NonFiniteError : Error {
  using Error::Error;
};

/// A geometric search failed: no sign change, no basin change, etc. (exit code 4).
struct GeometryError : Error {
  using Error::Error;
};

/// A designed perturbation did not land where it was supposed to (exit code 5).
struct VerificationError : Error {
  using Error::Error;
};

/// Input falls on a singular set of a closed-form reference.
struct DomainError : Error {
  using Error::Error;
};

inline void require_dim(Eigen::Index got, Eigen::Index want, std::string_view what) {
  if (got != want) {
    std::ostringstream os;
    os << what << ": dimension mismatch (got " << got << ", expected " << want << ")";
    throw DimensionError(os.str());
  }
}

// ---------------------------------------------------------------------------
// Seeding. Streams are derived from (seed, index) pairs through splitmix64 so
// that draws are reproducible regardless of call order or thread count.

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept {
  return splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632BE59BD9B4E019ull));
}

// ---------------------------------------------------------------------------
// Formatting. All numeric text output uses 17 significant digits so a
// decimal round trip reproduces the double exactly.

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string join17(const Vec& v, char sep = ',') {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += fmt17(v[i]);
  }
  return out;
}

/// Parses a comma- or whitespace-separated list of reals.
inline Vec parse_vec(std::string_view text) {
  std::vector<double> vals;
  std::string tok;
  auto flush = [&] {
    if (tok.empty()) return;
    char* end = nullptr;
    double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') throw ConfigError("not a number: '" + tok + "'");
    vals.push_back(v);
    tok.clear();
  };
  for (char c : text) {
    if (c == ',' || c == ' ' || c == '\t') {
      flush();
    } else {
      tok += c;
    }
  }
  flush();
  return Eigen::Map<Vec>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

inline bool all_finite(const Eigen::Ref<const Mat>& m) { return m.allFinite(); }

// ---------------------------------------------------------------------------
// Work partitioning. Items are independent; each index is handled exactly
// once, so results do not depend on the thread count.

inline unsigned& thread_cap() {
  static unsigned cap = 1;
  return cap;
}

inline void set_thread_cap(unsigned n) { thread_cap() = std::max(1u, n); }

template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(thread_cap(), n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace sepx
