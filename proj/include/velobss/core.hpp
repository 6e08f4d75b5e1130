#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace velobss {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Error hierarchy. Every failure the library reports derives from Error so
// callers can catch broadly, while the CLI maps the kind to a diagnostic.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file (WAV header, CSV syntax).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent dimensions between inputs.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

/// Singular or rank-deficient statistics (covariances, M matrices, constant series).
class DegeneracyError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the domain of an operation (bad N, out-of-range sample, point outside coverage).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Coordinate map or frame field does not cover enough of the data.
class CoverageError : public Error {
 public:
  using Error::Error;
  CoverageError(const std::string& what, double fraction) : Error(what), fraction_(fraction) {}
  double fraction() const noexcept { return fraction_; }

 private:
  double fraction_ = 0.0;
};

class IoError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

// Deterministic sign convention for eigenvectors/basis vectors: the entry of
// largest magnitude is made positive (first such entry on ties).
template <class Vec>
inline void fix_sign(Vec&& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (std::abs(v(i)) > std::abs(v(best))) best = i;
  if (v(best) < 0) v = -v;
}

}  // namespace detail

/// Worker count for parallel loops; VELOBSS_THREADS caps it.
inline unsigned worker_count() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("VELOBSS_THREADS")) {
    char* end = nullptr;
    long cap = std::strtol(env, &end, 10);
    if (end != env && cap >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(cap));
  }
  return n;
}

/// Runs fn(i) for i in [0, count) over a static block partition of worker threads.
/// fn must only write to state owned by index i.
template <class Fn>
void parallel_for(std::size_t count, Fn&& fn) {
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(worker_count(), count));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (count + workers - 1) / workers;
  std::vector<std::exception_ptr> errors(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        const std::size_t lo = w * chunk;
        const std::size_t hi = std::min(count, lo + chunk);
        for (std::size_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace velobss
