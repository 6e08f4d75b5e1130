#pragma once

#include "velobss/core.hpp"

#include <cmath>
#include <sstream>
#include <utility>

namespace velobss {

/// Uniformly sampled multichannel signal: T samples (rows) by N channels (columns).
class SignalSeries {
 public:
  SignalSeries() = default;
  SignalSeries(double sample_rate, Matrix data) : sample_rate_(sample_rate), data_(std::move(data)) {
    if (!(sample_rate_ > 0.0) || !std::isfinite(sample_rate_))
      throw DomainError("SignalSeries: sample rate must be positive");
    if (data_.cols() < 1) throw ShapeError("SignalSeries: at least one channel required");
    if (data_.rows() < 3) throw InsufficientDataError("SignalSeries: at least 3 samples required");
    if (!data_.allFinite()) throw DomainError("SignalSeries: non-finite sample");
  }

  double sample_rate() const noexcept { return sample_rate_; }
  Eigen::Index samples() const noexcept { return data_.rows(); }
  Eigen::Index channels() const noexcept { return data_.cols(); }
  const Matrix& data() const noexcept { return data_; }

 private:
  double sample_rate_ = 1.0;
  Matrix data_;
};

/// States x(t) and velocities dx/dt on a common, strictly increasing time base.
class Trajectory {
 public:
  Trajectory() = default;
  Trajectory(Vector times, Matrix states, Matrix velocities)
      : times_(std::move(times)), states_(std::move(states)), velocities_(std::move(velocities)) {
    if (states_.rows() != velocities_.rows() || states_.cols() != velocities_.cols())
      throw ShapeError("Trajectory: states and velocities differ in shape");
    if (times_.size() != states_.rows()) throw ShapeError("Trajectory: times length mismatch");
    if (!times_.allFinite() || !states_.allFinite() || !velocities_.allFinite())
      throw DomainError("Trajectory: non-finite value");
    for (Eigen::Index i = 1; i < times_.size(); ++i)
      if (!(times_(i) > times_(i - 1))) throw DomainError("Trajectory: times not strictly increasing");
  }

  Eigen::Index size() const noexcept { return states_.rows(); }
  Eigen::Index dims() const noexcept { return states_.cols(); }
  bool empty() const noexcept { return states_.rows() == 0; }
  const Vector& times() const noexcept { return times_; }
  const Matrix& states() const noexcept { return states_; }
  const Matrix& velocities() const noexcept { return velocities_; }

 private:
  Vector times_;
  Matrix states_;
  Matrix velocities_;
};

/// Central-difference velocities; the first and last samples are dropped so
/// the result has T - 2 rows.
inline Trajectory estimate_velocity(const SignalSeries& series) {
  const Matrix& x = series.data();
  const Eigen::Index n = x.rows();
  if (n < 3) throw InsufficientDataError("estimate_velocity: need at least 3 samples");
  const double dt = 1.0 / series.sample_rate();
  const Eigen::Index m = n - 2;
  Vector times(m);
  for (Eigen::Index i = 0; i < m; ++i) times(i) = static_cast<double>(i + 1) * dt;
  Matrix states = x.middleRows(1, m);
  Matrix vel = (x.bottomRows(m) - x.topRows(m)) / (2.0 * dt);
  return Trajectory(std::move(times), std::move(states), std::move(vel));
}

/// Affine map onto variance-normalized principal components: y = basis * (x - mean).
/// Rows of basis are covariance eigenvectors (descending eigenvalue) scaled by 1/sqrt(eigenvalue).
struct WhitenTransform {
  Vector mean;
  Matrix basis;
  Vector eigenvalues;

  Matrix apply(const Matrix& data) const {
    return (data.rowwise() - mean.transpose()) * basis.transpose();
  }
  Matrix inverse(const Matrix& whitened) const {
    return (whitened * basis.inverse().transpose()).rowwise() + mean.transpose();
  }
};

struct WhitenResult {
  SignalSeries states;
  WhitenTransform transform;
};

inline WhitenTransform fit_whitening(const Matrix& data, double rel_floor = 1e-12) {
  const Eigen::Index n = data.rows();
  const Eigen::Index dims = data.cols();
  if (n < 2) throw InsufficientDataError("pca_whiten: need at least 2 samples");
  WhitenTransform t;
  t.mean = data.colwise().mean();
  const Matrix centered = data.rowwise() - t.mean.transpose();
  const Matrix cov = centered.transpose() * centered / static_cast<double>(n);

  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  if (eig.info() != Eigen::Success) throw DegeneracyError("pca_whiten: eigendecomposition failed");
  // Eigen returns ascending eigenvalues.
  const Vector vals = eig.eigenvalues().reverse();
  const Matrix vecs = eig.eigenvectors().rowwise().reverse();
  const double top = vals(0);
  if (!(top > 0.0)) throw DegeneracyError("pca_whiten: zero covariance");
  for (Eigen::Index k = 0; k < dims; ++k) {
    if (vals(k) <= rel_floor * top) {
      std::ostringstream os;
      os << "pca_whiten: singular covariance, null direction (";
      Vector dir = vecs.col(k);
      detail::fix_sign(dir);
      for (Eigen::Index j = 0; j < dims; ++j) os << (j ? ", " : "") << dir(j);
      os << ")";
      throw DegeneracyError(os.str());
    }
  }
  t.eigenvalues = vals;
  t.basis.resize(dims, dims);
  for (Eigen::Index k = 0; k < dims; ++k) {
    Vector dir = vecs.col(k);
    detail::fix_sign(dir);
    t.basis.row(k) = dir.transpose() / std::sqrt(vals(k));
  }
  return t;
}

inline WhitenResult pca_whiten(const SignalSeries& series) {
  if (series.channels() < 2) throw ShapeError("pca_whiten: need at least 2 channels");
  WhitenTransform t = fit_whitening(series.data());
  return {SignalSeries(series.sample_rate(), t.apply(series.data())), std::move(t)};
}

}  // namespace velobss
