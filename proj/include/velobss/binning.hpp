#pragma once

#include "velobss/core.hpp"
#include "velobss/io.hpp"
#include "velobss/trajectory.hpp"

#include <cmath>
#include <vector>

namespace velobss {

using BinIndex = std::vector<int>;

/// Regular grid of B^N bins over the whitened state space.
///
/// Bins are half-open [lo, lo + w) per dimension except the last, which also
/// includes the upper edge. Flat indices are row-major with dimension 0 slowest.
class BinGrid {
 public:
  BinGrid() = default;
  BinGrid(int dims, int bins_per_dim, Vector lower, Vector upper)
      : dims_(dims), bins_(bins_per_dim), lower_(std::move(lower)), upper_(std::move(upper)) {
    if (dims_ < 1) throw DomainError("BinGrid: dims must be >= 1");
    if (bins_ < 2) throw DomainError("BinGrid: bins_per_dim must be >= 2");
    if (lower_.size() != dims_ || upper_.size() != dims_) throw ShapeError("BinGrid: bounds size");
    width_ = (upper_ - lower_) / static_cast<double>(bins_);
    if ((width_.array() <= 0.0).any()) throw DomainError("BinGrid: empty extent");
    std::size_t total = 1;
    for (int d = 0; d < dims_; ++d) total *= static_cast<std::size_t>(bins_);
    members_.assign(total, {});
  }

  int dims() const noexcept { return dims_; }
  int bins_per_dim() const noexcept { return bins_; }
  std::size_t bin_count() const noexcept { return members_.size(); }
  const Vector& lower() const noexcept { return lower_; }
  const Vector& upper() const noexcept { return upper_; }
  const Vector& width() const noexcept { return width_; }

  /// Cell of x along one dimension, or -1 when outside [lower, upper].
  int axis_cell(int d, double v) const {
    if (!(v >= lower_(d) && v <= upper_(d))) return -1;
    int k = static_cast<int>(std::floor((v - lower_(d)) / width_(d)));
    return std::clamp(k, 0, bins_ - 1);
  }

  /// Flat bin containing x, or -1 when x lies outside the grid bounds.
  long locate(const Eigen::Ref<const Vector>& x) const {
    long flat = 0;
    for (int d = 0; d < dims_; ++d) {
      const int k = axis_cell(d, x(d));
      if (k < 0) return -1;
      flat = flat * bins_ + k;
    }
    return flat;
  }

  BinIndex unflatten(std::size_t flat) const {
    BinIndex idx(static_cast<std::size_t>(dims_));
    for (int d = dims_ - 1; d >= 0; --d) {
      idx[static_cast<std::size_t>(d)] = static_cast<int>(flat % static_cast<std::size_t>(bins_));
      flat /= static_cast<std::size_t>(bins_);
    }
    return idx;
  }

  /// Flat index of a tuple; -1 if any coordinate is out of range.
  long flatten(const BinIndex& idx) const {
    long flat = 0;
    for (int d = 0; d < dims_; ++d) {
      const int k = idx[static_cast<std::size_t>(d)];
      if (k < 0 || k >= bins_) return -1;
      flat = flat * bins_ + k;
    }
    return flat;
  }

  Vector center(std::size_t flat) const {
    const BinIndex idx = unflatten(flat);
    Vector c(dims_);
    for (int d = 0; d < dims_; ++d) c(d) = lower_(d) + (idx[static_cast<std::size_t>(d)] + 0.5) * width_(d);
    return c;
  }

  /// Bins sharing a face with flat (2N at most).
  std::vector<std::size_t> face_neighbors(std::size_t flat) const {
    std::vector<std::size_t> out;
    BinIndex idx = unflatten(flat);
    for (int d = 0; d < dims_; ++d) {
      for (int step : {-1, 1}) {
        BinIndex n = idx;
        n[static_cast<std::size_t>(d)] += step;
        const long f = flatten(n);
        if (f >= 0) out.push_back(static_cast<std::size_t>(f));
      }
    }
    return out;
  }

  const std::vector<std::vector<std::size_t>>& membership() const noexcept { return members_; }
  const std::vector<std::size_t>& members(std::size_t flat) const { return members_.at(flat); }
  std::size_t count(std::size_t flat) const { return members_.at(flat).size(); }

  std::size_t total_members() const {
    std::size_t n = 0;
    for (const auto& m : members_) n += m.size();
    return n;
  }

  void assign(const Matrix& states) {
    for (auto& m : members_) m.clear();
    for (Eigen::Index i = 0; i < states.rows(); ++i) {
      const long f = locate(states.row(i).transpose());
      if (f < 0) throw DomainError("BinGrid: sample " + std::to_string(i) + " outside bounds");
      members_[static_cast<std::size_t>(f)].push_back(static_cast<std::size_t>(i));
    }
  }

 private:
  int dims_ = 0;
  int bins_ = 0;
  Vector lower_, upper_, width_;
  std::vector<std::vector<std::size_t>> members_;
};

/// Uniform grid spanning the data, widened by 1e-9 relative so that extreme
/// samples bin deterministically.
inline BinGrid build_grid(const Matrix& states, int bins_per_dim) {
  if (states.rows() == 0) throw InsufficientDataError("build_grid: empty trajectory");
  if (bins_per_dim < 2) throw DomainError("build_grid: bins_per_dim must be >= 2");
  const int dims = static_cast<int>(states.cols());
  Vector lo = states.colwise().minCoeff();
  Vector hi = states.colwise().maxCoeff();
  for (int d = 0; d < dims; ++d) {
    const double span = hi(d) - lo(d);
    const double pad = 1e-9 * (span > 0 ? span : std::max(1.0, std::abs(lo(d))));
    lo(d) -= pad;
    hi(d) += pad;
  }
  BinGrid g(dims, bins_per_dim, lo, hi);
  g.assign(states);
  return g;
}

inline BinGrid build_grid(const Trajectory& traj, int bins_per_dim) {
  if (traj.empty()) throw InsufficientDataError("build_grid: empty trajectory");
  return build_grid(traj.states(), bins_per_dim);
}

/// Grid summary: one row per bin with flat index, tuple, center and count.
inline void write_grid_summary(const std::filesystem::path& path, const BinGrid& grid) {
  std::vector<std::string> header{"bin"};
  for (int d = 0; d < grid.dims(); ++d) header.push_back("i" + std::to_string(d + 1));
  for (int d = 0; d < grid.dims(); ++d) header.push_back("c" + std::to_string(d + 1));
  header.push_back("count");
  CsvWriter w(path, header);
  for (std::size_t b = 0; b < grid.bin_count(); ++b) {
    w << b;
    for (int k : grid.unflatten(b)) w << k;
    const Vector c = grid.center(b);
    for (Eigen::Index d = 0; d < c.size(); ++d) w << c(d);
    w << grid.count(b);
    w.end_row();
  }
  w.close();
}

}  // namespace velobss
