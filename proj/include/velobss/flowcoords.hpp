#pragma once

#include "velobss/binning.hpp"
#include "velobss/core.hpp"
#include "velobss/io.hpp"
#include "velobss/localframes.hpp"
#include "velobss/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace velobss {

/// Unordered split of the vector indices {0..N-1} into two nonempty groups.
/// Canonical form keeps index 0 in g1; both groups sorted ascending.
struct Partition {
  std::vector<int> g1;
  std::vector<int> g2;

  int dims() const noexcept { return static_cast<int>(g1.size() + g2.size()); }

  Partition swapped() const { return {g2, g1}; }

  /// Label such as "1|2" or "1-3|2" with 1-based indices.
  std::string label() const {
    auto join = [](const std::vector<int>& g) {
      std::string s;
      for (std::size_t i = 0; i < g.size(); ++i) s += (i ? "-" : "") + std::to_string(g[i] + 1);
      return s;
    };
    return join(g1) + "|" + join(g2);
  }

  /// Filename-safe form of label(): "1_2", "1-3_2".
  std::string file_label() const {
    std::string s = label();
    std::replace(s.begin(), s.end(), '|', '_');
    return s;
  }

  friend bool operator==(const Partition& a, const Partition& b) {
    auto canon = [](const Partition& p) { return p.g1.front() < p.g2.front() ? p : p.swapped(); };
    const Partition ca = canon(a), cb = canon(b);
    return ca.g1 == cb.g1 && ca.g2 == cb.g2;
  }
};

/// All 2^(N-1) - 1 two-group partitions, ordered by |g1| then lexicographically.
inline std::vector<Partition> enumerate_partitions(int n) {
  if (n < 2) throw DomainError("enumerate_partitions: N must be >= 2");
  if (n > 24) throw DomainError("enumerate_partitions: N too large");
  std::vector<Partition> out;
  const unsigned full = (1u << n) - 1u;
  for (unsigned mask = 1; mask < full; mask += 2) {  // bit 0 always in g1
    Partition p;
    for (int i = 0; i < n; ++i) ((mask >> i) & 1u ? p.g1 : p.g2).push_back(i);
    out.push_back(std::move(p));
  }
  std::sort(out.begin(), out.end(), [](const Partition& a, const Partition& b) {
    if (a.g1.size() != b.g1.size()) return a.g1.size() < b.g1.size();
    return a.g1 < b.g1;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Continuous field

/// Field vectors at x by multilinear interpolation between the surrounding bin
/// centers (clamped at the outer half-bins). Corners without a defined frame are
/// dropped and the weights renormalized. Each interpolated vector is rescaled to
/// the interpolated magnitude. Returns nullopt outside the covered region.
inline std::optional<Matrix> field_at(const FrameField& field, const Eigen::Ref<const Vector>& x) {
  const BinGrid& g = *field.grid;
  const int dims = g.dims();
  const long here = g.locate(x);
  if (here < 0 || !field.defined(static_cast<std::size_t>(here))) return std::nullopt;

  const int bins = g.bins_per_dim();
  std::array<int, 8> base{};
  std::array<double, 8> frac{};
  for (int d = 0; d < dims; ++d) {
    const double p = (x(d) - g.lower()(d)) / g.width()(d) - 0.5;
    int i0 = static_cast<int>(std::floor(p));
    i0 = std::clamp(i0, 0, bins - 2);
    base[static_cast<std::size_t>(d)] = i0;
    frac[static_cast<std::size_t>(d)] = std::clamp(p - i0, 0.0, 1.0);
  }
  Matrix acc = Matrix::Zero(dims, dims);
  Vector mag = Vector::Zero(dims);
  double wsum = 0.0;
  BinIndex corner(static_cast<std::size_t>(dims));
  for (int c = 0; c < (1 << dims); ++c) {
    double w = 1.0;
    for (int d = 0; d < dims; ++d) {
      const int bit = (c >> d) & 1;
      const auto du = static_cast<std::size_t>(d);
      corner[du] = base[du] + bit;
      w *= bit ? frac[du] : 1.0 - frac[du];
    }
    if (w <= 0.0) continue;
    const long flat = g.flatten(corner);
    if (flat < 0 || !field.defined(static_cast<std::size_t>(flat))) continue;
    const Matrix& v = *field.vectors[static_cast<std::size_t>(flat)];
    acc += w * v;
    mag += w * v.colwise().norm().transpose();
    wsum += w;
  }
  if (!(wsum > 0.0)) return std::nullopt;
  acc /= wsum;
  mag /= wsum;
  for (int i = 0; i < dims; ++i) {
    const double len = acc.col(i).norm();
    if (len > 0.0) acc.col(i) *= mag(i) / len;
  }
  return acc;
}

/// A single vector of the field as a callable suitable for trace_streamline.
inline auto field_component(const FrameField& field, int index) {
  return [&field, index](const Vector& x) -> std::optional<Vector> {
    auto v = field_at(field, x);
    if (!v) return std::nullopt;
    return Vector(v->col(index));
  };
}

struct Streamline {
  std::vector<double> sigma;   // ascending, contains 0
  std::vector<Vector> points;  // X(sigma)
};

/// Integral curve dX/dsigma = f(X) through x0 by classical RK4 with fixed step h,
/// forward to sigma_max and backward to sigma_min. Stops early when any RK stage
/// leaves the field's domain (f returns nullopt). Samples lie at multiples of h.
template <class VectorField>
Streamline trace_streamline(VectorField&& f, const Vector& x0, double sigma_min, double sigma_max, double h,
                            std::size_t max_steps = 1000000) {
  if (!(h > 0.0)) throw DomainError("trace_streamline: step must be positive");
  if (sigma_min > 0.0 || sigma_max < 0.0) throw DomainError("trace_streamline: span must contain 0");
  if (!f(x0)) throw DomainError("trace_streamline: start point outside coverage");

  auto run = [&](double dir, double limit) {
    std::vector<Vector> pts;
    const double step = dir * h;
    const double whole = std::floor(limit / h + 1e-9);
    const std::size_t steps =
        whole >= static_cast<double>(max_steps) ? max_steps : static_cast<std::size_t>(whole);
    Vector x = x0;
    auto k1 = f(x);
    for (std::size_t k = 0; k < steps && k1; ++k) {
      auto k2 = f(Vector(x + 0.5 * step * *k1));
      if (!k2) break;
      auto k3 = f(Vector(x + 0.5 * step * *k2));
      if (!k3) break;
      auto k4 = f(Vector(x + step * *k3));
      if (!k4) break;
      Vector next = x + (step / 6.0) * (*k1 + 2.0 * *k2 + 2.0 * *k3 + *k4);
      k1 = f(next);
      if (!k1) break;
      x = std::move(next);
      pts.push_back(x);
    }
    return pts;
  };

  std::vector<Vector> back = run(-1.0, -sigma_min);
  std::vector<Vector> fwd = run(1.0, sigma_max);
  Streamline s;
  s.sigma.reserve(back.size() + fwd.size() + 1);
  s.points.reserve(back.size() + fwd.size() + 1);
  for (std::size_t i = back.size(); i-- > 0;) {
    s.sigma.push_back(-static_cast<double>(i + 1) * h);
    s.points.push_back(std::move(back[i]));
  }
  s.sigma.push_back(0.0);
  s.points.push_back(x0);
  for (std::size_t i = 0; i < fwd.size(); ++i) {
    s.sigma.push_back(static_cast<double>(i + 1) * h);
    s.points.push_back(std::move(fwd[i]));
  }
  return s;
}

inline Streamline trace_streamline(const FrameField& field, int index, const Vector& x0, double sigma_min,
                                   double sigma_max, double h, std::size_t max_steps = 1000000) {
  return trace_streamline(field_component(field, index), x0, sigma_min, sigma_max, h, max_steps);
}

// ---------------------------------------------------------------------------
// Coordinate maps

/// Regular lattice of nodes_per_dim^N nodes spanning [lower, upper].
struct Lattice {
  Vector lower;
  Vector upper;
  int nodes_per_dim = 64;

  int dims() const noexcept { return static_cast<int>(lower.size()); }
  Vector spacing() const { return (upper - lower) / static_cast<double>(nodes_per_dim - 1); }
  std::size_t node_count() const {
    std::size_t n = 1;
    for (int d = 0; d < dims(); ++d) n *= static_cast<std::size_t>(nodes_per_dim);
    return n;
  }
  Vector node(std::size_t flat) const {
    Vector x(dims());
    const Vector h = spacing();
    for (int d = dims() - 1; d >= 0; --d) {
      x(d) = lower(d) + static_cast<double>(flat % static_cast<std::size_t>(nodes_per_dim)) * h(d);
      flat /= static_cast<std::size_t>(nodes_per_dim);
    }
    return x;
  }
  std::size_t flatten(const std::vector<int>& idx) const {
    std::size_t f = 0;
    for (int k : idx) f = f * static_cast<std::size_t>(nodes_per_dim) + static_cast<std::size_t>(k);
    return f;
  }
};

inline Lattice lattice_over(const BinGrid& grid, int nodes_per_dim) {
  if (nodes_per_dim < 2) throw DomainError("lattice: need at least 2 nodes per dimension");
  return {grid.lower(), grid.upper(), nodes_per_dim};
}

/// Candidate unmixing map u(x) sampled on a lattice. Components are ordered
/// as the g1 components of u_(1) followed by the g2 components of u_(2).
struct CoordinateMap {
  Partition partition;
  Vector base_point;
  Lattice lattice;
  Matrix u;                 // node_count x N
  std::vector<char> mask;   // 1 where u is defined
  double step = 0.0;        // sigma step used for sweeps
  double ordering_discrepancy = 0.0;

  /// Multilinear interpolation over the defined corners of the enclosing cell.
  std::optional<Vector> at(const Eigen::Ref<const Vector>& x) const {
    const int dims = lattice.dims();
    const Vector h = lattice.spacing();
    std::vector<int> base(static_cast<std::size_t>(dims));
    std::vector<double> frac(static_cast<std::size_t>(dims));
    for (int d = 0; d < dims; ++d) {
      if (!(x(d) >= lattice.lower(d) && x(d) <= lattice.upper(d))) return std::nullopt;
      const double p = (x(d) - lattice.lower(d)) / h(d);
      const int i0 = std::clamp(static_cast<int>(std::floor(p)), 0, lattice.nodes_per_dim - 2);
      base[static_cast<std::size_t>(d)] = i0;
      frac[static_cast<std::size_t>(d)] = std::clamp(p - i0, 0.0, 1.0);
    }
    Vector acc = Vector::Zero(u.cols());
    double wsum = 0.0;
    std::vector<int> corner(static_cast<std::size_t>(dims));
    for (int c = 0; c < (1 << dims); ++c) {
      double w = 1.0;
      for (int d = 0; d < dims; ++d) {
        const int bit = (c >> d) & 1;
        corner[static_cast<std::size_t>(d)] = base[static_cast<std::size_t>(d)] + bit;
        w *= bit ? frac[static_cast<std::size_t>(d)] : 1.0 - frac[static_cast<std::size_t>(d)];
      }
      if (w <= 0.0) continue;
      const std::size_t node = lattice.flatten(corner);
      if (!mask[node]) continue;
      acc += w * u.row(static_cast<Eigen::Index>(node)).transpose();
      wsum += w;
    }
    if (!(wsum > 0.0)) return std::nullopt;
    return Vector(acc / wsum);
  }

  double coverage() const {
    return mask.empty() ? 0.0
                        : static_cast<double>(std::count(mask.begin(), mask.end(), 1)) / mask.size();
  }
};

struct CoordinateOptions {
  double step = 0.0;           // sigma step; <= 0 selects the default below
  double step_factor = 0.5;    // default x-space step as a fraction of the min bin width
  double min_reachable = 0.5;  // fraction of data-bearing bins the sweeps must reach
  bool ordering_diagnostic = true;
};

/// Sigma step giving an x-space stride of min(step_factor * bin width, half a
/// lattice cell) at the median field magnitude.
inline double default_step(const FrameField& field, const Lattice& lattice, double step_factor) {
  std::vector<double> mags;
  for (const auto& v : field.vectors)
    if (v)
      for (Eigen::Index i = 0; i < v->cols(); ++i) mags.push_back(v->col(i).norm());
  if (mags.empty()) throw DegeneracyError("default_step: empty field");
  std::nth_element(mags.begin(), mags.begin() + static_cast<long>(mags.size() / 2), mags.end());
  const double median = mags[mags.size() / 2];
  const double stride = std::min(step_factor * field.grid->width().minCoeff(), 0.5 * lattice.spacing().minCoeff());
  return stride / median;
}

namespace detail {

struct SweepPoint {
  Vector sigma;
  Vector x;
};

// Path-ordered sweep from `start` along the listed field vectors: a streamline
// along the first vector, then from each of its samples a streamline along the
// second, and so on.
inline std::vector<SweepPoint> sweep(const FrameField& field, const Vector& start, const std::vector<int>& order,
                                     double h, std::size_t max_steps) {
  std::vector<SweepPoint> cur{{Vector(0), start}};
  const double inf = std::numeric_limits<double>::infinity();
  for (int idx : order) {
    std::vector<SweepPoint> next;
    for (const auto& sp : cur) {
      if (!field_at(field, sp.x)) continue;
      Streamline s = trace_streamline(field, idx, sp.x, -inf, inf, h, max_steps);
      for (std::size_t k = 0; k < s.sigma.size(); ++k) {
        Vector sig(sp.sigma.size() + 1);
        sig.head(sp.sigma.size()) = sp.sigma;
        sig(sig.size() - 1) = s.sigma[k];
        next.push_back({std::move(sig), std::move(s.points[k])});
      }
    }
    cur = std::move(next);
  }
  return cur;
}

struct Scatter {
  std::vector<Vector> x;
  std::vector<Vector> value;
};

// u_(1) assignments: every point of the group-2 sweep through X(sigma) gets sigma.
inline Scatter assign_group(const FrameField& field, const Vector& x0, const std::vector<int>& first,
                            const std::vector<int>& second, double h, std::size_t max_steps) {
  const auto xs = sweep(field, x0, first, h, max_steps);
  std::vector<Scatter> parts(xs.size());
  parallel_for(xs.size(), [&](std::size_t i) {
    for (auto& yp : sweep(field, xs[i].x, second, h, max_steps)) {
      parts[i].x.push_back(std::move(yp.x));
      parts[i].value.push_back(xs[i].sigma);
    }
  });
  Scatter out;
  for (auto& p : parts) {
    std::move(p.x.begin(), p.x.end(), std::back_inserter(out.x));
    std::move(p.value.begin(), p.value.end(), std::back_inserter(out.value));
  }
  return out;
}

// Inverse-distance (power 2) resampling onto lattice nodes; each scattered point
// contributes to the corner nodes of the lattice cell containing it.
inline void resample(const Lattice& lat, const Scatter& s, Matrix& sum, Vector& wsum) {
  const int dims = lat.dims();
  const Vector h = lat.spacing();
  std::vector<int> base(static_cast<std::size_t>(dims)), corner(static_cast<std::size_t>(dims));
  for (std::size_t p = 0; p < s.x.size(); ++p) {
    const Vector& x = s.x[p];
    bool inside = true;
    for (int d = 0; d < dims && inside; ++d) {
      const double q = (x(d) - lat.lower(d)) / h(d);
      if (!(q >= 0.0 && q <= lat.nodes_per_dim - 1)) inside = false;
      else base[static_cast<std::size_t>(d)] = std::clamp(static_cast<int>(std::floor(q)), 0, lat.nodes_per_dim - 2);
    }
    if (!inside) continue;
    for (int c = 0; c < (1 << dims); ++c) {
      double d2 = 0.0;
      for (int d = 0; d < dims; ++d) {
        corner[static_cast<std::size_t>(d)] = base[static_cast<std::size_t>(d)] + ((c >> d) & 1);
        const double off = (x(d) - (lat.lower(d) + corner[static_cast<std::size_t>(d)] * h(d))) / h(d);
        d2 += off * off;
      }
      const std::size_t node = lat.flatten(corner);
      const double w = 1.0 / (d2 + 1e-12);
      sum.row(static_cast<Eigen::Index>(node)) += w * s.value[p].transpose();
      wsum(static_cast<Eigen::Index>(node)) += w;
    }
  }
}

inline double reachable_fraction(const BinGrid& grid, const Scatter& a, const Scatter& b) {
  std::vector<char> hit(grid.bin_count(), 0);
  for (const Scatter* s : {&a, &b})
    for (const auto& x : s->x) {
      const long f = grid.locate(x);
      if (f >= 0) hit[static_cast<std::size_t>(f)] = 1;
    }
  std::size_t bearing = 0, reached = 0;
  for (std::size_t bin = 0; bin < grid.bin_count(); ++bin)
    if (grid.count(bin) > 0) {
      ++bearing;
      reached += hit[bin] ? 1 : 0;
    }
  return bearing ? static_cast<double>(reached) / static_cast<double>(bearing) : 0.0;
}

struct Sweeps {
  Matrix u;
  std::vector<char> mask;
  double reachable = 0.0;
};

inline Sweeps build_sweeps(const FrameField& field, const Partition& p, const Vector& x0, const Lattice& lat,
                           double h, std::size_t max_steps, bool reverse_order) {
  auto ordered = [&](std::vector<int> g) {
    if (reverse_order) std::reverse(g.begin(), g.end());
    return g;
  };
  Scatter s1 = assign_group(field, x0, ordered(p.g1), ordered(p.g2), h, max_steps);
  Scatter s2 = assign_group(field, x0, ordered(p.g2), ordered(p.g1), h, max_steps);
  if (reverse_order)  // sigma components come out in sweep order; restore group order
    for (Scatter* s : {&s1, &s2})
      for (auto& v : s->value) v.reverseInPlace();
  const auto n1 = static_cast<Eigen::Index>(p.g1.size());
  const auto n2 = static_cast<Eigen::Index>(p.g2.size());
  const auto nodes = static_cast<Eigen::Index>(lat.node_count());
  Matrix sum1 = Matrix::Zero(nodes, n1), sum2 = Matrix::Zero(nodes, n2);
  Vector w1 = Vector::Zero(nodes), w2 = Vector::Zero(nodes);
  resample(lat, s1, sum1, w1);
  resample(lat, s2, sum2, w2);

  Sweeps out;
  out.u = Matrix::Constant(nodes, n1 + n2, std::numeric_limits<double>::quiet_NaN());
  out.mask.assign(static_cast<std::size_t>(nodes), 0);
  for (Eigen::Index k = 0; k < nodes; ++k) {
    if (w1(k) > 0.0 && w2(k) > 0.0) {
      out.u.row(k).head(n1) = sum1.row(k) / w1(k);
      out.u.row(k).tail(n2) = sum2.row(k) / w2(k);
      out.mask[static_cast<std::size_t>(k)] = 1;
    }
  }
  out.reachable = reachable_fraction(*field.grid, s1, s2);
  return out;
}

}  // namespace detail

/// Builds the candidate unmixing map for one partition.
///
/// u_(1) is constant on each group-2 subspace and equals the group-1 sweep
/// parameter where that subspace meets the group-1 subspace through x0; u_(2)
/// is built the same way with roles swapped. Scattered assignments are
/// resampled onto the lattice. Throws CoverageError if the sweeps reach fewer
/// than min_reachable of the data-bearing bins.
inline CoordinateMap build_coordinate(const FrameField& field, const Partition& partition, const Vector& x0,
                                      const Lattice& lattice, const CoordinateOptions& opts = {}) {
  if (partition.dims() != field.dims() || lattice.dims() != field.dims())
    throw ShapeError("build_coordinate: dimension mismatch");
  if (!field_at(field, x0)) throw DomainError("build_coordinate: base point outside coverage");

  CoordinateMap map;
  map.partition = partition;
  map.base_point = x0;
  map.lattice = lattice;
  map.step = opts.step > 0.0 ? opts.step : default_step(field, lattice, opts.step_factor);

  // Cap each streamline at several domain diameters worth of steps.
  const double diameter = (lattice.upper - lattice.lower).norm();
  std::vector<double> mags;
  for (const auto& v : field.vectors)
    if (v)
      for (Eigen::Index i = 0; i < v->cols(); ++i) mags.push_back(v->col(i).norm());
  const double min_mag = *std::min_element(mags.begin(), mags.end());
  const auto max_steps = static_cast<std::size_t>(
      std::min(1e6, std::ceil(4.0 * diameter / std::max(min_mag * map.step, 1e-300))));

  auto sweeps = detail::build_sweeps(field, partition, x0, lattice, map.step, max_steps, false);
  if (sweeps.reachable < opts.min_reachable)
    throw CoverageError("build_coordinate: partition " + partition.label() + " reaches only " +
                            std::to_string(sweeps.reachable * 100.0) + "% of data-bearing bins",
                        sweeps.reachable);
  map.u = std::move(sweeps.u);
  map.mask = std::move(sweeps.mask);

  if (opts.ordering_diagnostic && (partition.g1.size() > 1 || partition.g2.size() > 1)) {
    auto rev = detail::build_sweeps(field, partition, x0, lattice, map.step, max_steps, true);
    double worst = 0.0;
    for (std::size_t k = 0; k < map.mask.size(); ++k)
      if (map.mask[k] && rev.mask[k])
        worst = std::max(worst, (map.u.row(static_cast<Eigen::Index>(k)) - rev.u.row(static_cast<Eigen::Index>(k)))
                                    .cwiseAbs()
                                    .maxCoeff());
    map.ordering_discrepancy = worst;
  }
  return map;
}

/// Transformed series u[x(t)] and its central-difference velocity.
struct USeries {
  std::vector<std::size_t> indices;  // rows of the source trajectory
  Vector times;
  Matrix u;
  Matrix udot;
  double coverage = 0.0;             // fraction of trajectory samples the map covers
  std::vector<std::size_t> dropped;  // rows without u or without a velocity

  Eigen::Index size() const noexcept { return u.rows(); }
};

/// Applies the map to every trajectory sample. Samples outside the map are
/// dropped; velocities use central differences within contiguous runs, so run
/// endpoints are dropped as well.
inline USeries transform_series(const CoordinateMap& map, const Trajectory& traj, double min_coverage = 0.8) {
  const Eigen::Index n = traj.size();
  const auto dims = static_cast<Eigen::Index>(map.u.cols());
  Matrix all(n, dims);
  std::vector<char> ok(static_cast<std::size_t>(n), 0);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    auto v = map.at(traj.states().row(static_cast<Eigen::Index>(i)).transpose());
    if (v) {
      all.row(static_cast<Eigen::Index>(i)) = v->transpose();
      ok[i] = 1;
    }
  });
  const auto covered = static_cast<double>(std::count(ok.begin(), ok.end(), 1));
  USeries out;
  out.coverage = n ? covered / static_cast<double>(n) : 0.0;
  if (out.coverage < min_coverage)
    throw CoverageError("transform_series: map covers " + std::to_string(out.coverage * 100.0) +
                            "% of samples (need " + std::to_string(min_coverage * 100.0) + "%)",
                        out.coverage);
  std::vector<std::size_t> keep;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    if (ok[iu] && i > 0 && i + 1 < n && ok[iu - 1] && ok[iu + 1]) keep.push_back(iu);
    else out.dropped.push_back(iu);
  }
  out.indices = keep;
  out.times.resize(static_cast<Eigen::Index>(keep.size()));
  out.u.resize(static_cast<Eigen::Index>(keep.size()), dims);
  out.udot.resize(static_cast<Eigen::Index>(keep.size()), dims);
  const Vector& t = traj.times();
  for (std::size_t k = 0; k < keep.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(keep[k]);
    const auto r = static_cast<Eigen::Index>(k);
    out.times(r) = t(i);
    out.u.row(r) = all.row(i);
    out.udot.row(r) = (all.row(i + 1) - all.row(i - 1)) / (t(i + 1) - t(i - 1));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Export

inline void write_map_csv(const std::filesystem::path& path, const CoordinateMap& map) {
  const int n = map.lattice.dims();
  std::vector<std::string> header{"node"};
  for (int d = 0; d < n; ++d) header.push_back("x" + std::to_string(d + 1));
  for (int d = 0; d < n; ++d) header.push_back("u" + std::to_string(d + 1));
  header.push_back("mask");
  CsvWriter w(path, header);
  for (std::size_t k = 0; k < map.lattice.node_count(); ++k) {
    w << k;
    const Vector x = map.lattice.node(k);
    for (int d = 0; d < n; ++d) w << x(d);
    for (int d = 0; d < n; ++d) w << map.u(static_cast<Eigen::Index>(k), d);
    w << static_cast<int>(map.mask[k]);
    w.end_row();
  }
  w.close();
}

/// Constant-u isoline segment in a 2-D map.
struct IsoSegment {
  int component = 0;
  double level = 0.0;
  Vector a, b;
};

/// Marching-squares isolines of each u component at `levels` evenly spaced
/// values spanning the defined range. Only defined for 2-D maps.
inline std::vector<IsoSegment> isolines(const CoordinateMap& map, int levels = 16) {
  std::vector<IsoSegment> out;
  if (map.lattice.dims() != 2) return out;
  const int r = map.lattice.nodes_per_dim;
  auto node = [&](int i, int j) { return static_cast<std::size_t>(i) * r + static_cast<std::size_t>(j); };
  for (int comp = 0; comp < 2; ++comp) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t k = 0; k < map.mask.size(); ++k)
      if (map.mask[k]) {
        lo = std::min(lo, map.u(static_cast<Eigen::Index>(k), comp));
        hi = std::max(hi, map.u(static_cast<Eigen::Index>(k), comp));
      }
    if (!(hi > lo)) continue;
    for (int lv = 1; lv <= levels; ++lv) {
      const double level = lo + (hi - lo) * lv / (levels + 1);
      for (int i = 0; i + 1 < r; ++i)
        for (int j = 0; j + 1 < r; ++j) {
          const std::size_t c[4] = {node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)};
          bool defined = true;
          for (auto k : c) defined = defined && map.mask[k];
          if (!defined) continue;
          std::vector<Vector> hits;
          for (int e = 0; e < 4; ++e) {
            const std::size_t p = c[e], q = c[(e + 1) % 4];
            const double up = map.u(static_cast<Eigen::Index>(p), comp) - level;
            const double uq = map.u(static_cast<Eigen::Index>(q), comp) - level;
            if ((up < 0) == (uq < 0)) continue;
            const double t = up / (up - uq);
            hits.push_back(map.lattice.node(p) + t * (map.lattice.node(q) - map.lattice.node(p)));
          }
          for (std::size_t h = 0; h + 1 < hits.size(); h += 2) out.push_back({comp, level, hits[h], hits[h + 1]});
        }
    }
  }
  return out;
}

inline void write_isolines_csv(const std::filesystem::path& path, const std::vector<CoordinateMap>& maps,
                               int levels = 16) {
  CsvWriter w(path, {"partition", "component", "level", "segment", "x1", "x2"});
  for (const auto& map : maps) {
    std::size_t seg = 0;
    for (const auto& s : isolines(map, levels)) {
      for (const Vector* p : {&s.a, &s.b}) {
        w << map.partition.label() << (s.component + 1) << s.level << seg << (*p)(0) << (*p)(1);
        w.end_row();
      }
      ++seg;
    }
  }
  w.close();
}

}  // namespace velobss
