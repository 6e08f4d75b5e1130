#pragma once

#include "velobss/binning.hpp"
#include "velobss/core.hpp"
#include "velobss/flowcoords.hpp"
#include "velobss/io.hpp"
#include "velobss/localframes.hpp"
#include "velobss/trajectory.hpp"

#include <cmath>
#include <memory>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace velobss {

enum class Verdict { separable, inseparable };

inline const char* to_string(Verdict v) { return v == Verdict::separable ? "separable" : "inseparable"; }

/// One tested cross moment: E[m1*m2] against E[m1]*E[m2].
struct MomentRow {
  std::vector<int> exponents;  // powers of u_1..u_N then du_1..du_N
  std::string label;
  double joint = 0.0;
  double product = 0.0;
  double deviation = 0.0;
};

struct SeparabilityReport {
  Partition partition;
  std::vector<MomentRow> table;
  double max_deviation = 0.0;
  std::size_t worst_row = 0;
  double threshold = 0.05;
  Verdict verdict = Verdict::inseparable;
  std::size_t samples = 0;
};

namespace detail {

inline std::string monomial_label(const std::vector<int>& e, int n) {
  std::string s;
  for (int k = 0; k < 2 * n; ++k) {
    const int p = e[static_cast<std::size_t>(k)];
    if (!p) continue;
    if (!s.empty()) s += "*";
    s += (k < n ? "u" : "du") + std::to_string((k % n) + 1);
    if (p > 1) s += "^" + std::to_string(p);
  }
  return s;
}

// Exponent vectors over `vars` variables with total degree in [1, max_degree].
inline std::vector<std::vector<int>> monomials(int vars, int max_degree) {
  std::vector<std::vector<int>> out;
  std::vector<int> e(static_cast<std::size_t>(vars), 0);
  std::function<void(int, int)> rec = [&](int var, int left) {
    if (var == vars) {
      int deg = 0;
      for (int p : e) deg += p;
      if (deg >= 1) out.push_back(e);
      return;
    }
    for (int p = 0; p <= left; ++p) {
      e[static_cast<std::size_t>(var)] = p;
      rec(var + 1, left - p);
    }
    e[static_cast<std::size_t>(var)] = 0;
  };
  rec(0, max_degree);
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    int da = 0, db = 0;
    for (int p : a) da += p;
    for (int p : b) db += p;
    return da < db;
  });
  return out;
}

inline Vector standardized(const Eigen::Ref<const Vector>& c, const std::string& name) {
  const double mean = c.mean();
  const double var = (c.array() - mean).square().mean();
  const double scale = std::max(1.0, std::abs(mean));
  if (!(var > 1e-24 * scale * scale)) throw DegeneracyError("factorization_statistic: constant component " + name);
  return (c.array() - mean) / std::sqrt(var);
}

}  // namespace detail

/// Moment-factorization test of (u, du/dt) across a partition.
///
/// Every component is standardized. For each pair of monomials m1 (group-1
/// variables) and m2 (group-2 variables), each of degree >= 1 with total
/// degree <= max_order, the row deviation is
///   |E[m1 m2] - E[m1] E[m2]| / (1 + |E[m1] E[m2]|).
/// The verdict is separable iff the largest deviation is <= threshold.
inline SeparabilityReport factorization_statistic(const Matrix& u, const Matrix& udot, const Partition& partition,
                                                  int max_order = 4, double threshold = 0.05,
                                                  std::size_t min_samples = 10000) {
  const Eigen::Index n = u.rows();
  const int dims = static_cast<int>(u.cols());
  if (udot.rows() != n || udot.cols() != dims) throw ShapeError("factorization_statistic: u/udot shape mismatch");
  if (partition.dims() != dims) throw ShapeError("factorization_statistic: partition/series dimension mismatch");
  if (max_order < 2) throw DomainError("factorization_statistic: max_order must be >= 2");
  if (static_cast<std::size_t>(n) < min_samples)
    throw InsufficientDataError("factorization_statistic: " + std::to_string(n) + " samples, need " +
                                std::to_string(min_samples));

  // Standardized columns: z[k] for u_k (k < N), z[N + k] for du_k.
  std::vector<Vector> z(static_cast<std::size_t>(2 * dims));
  for (int k = 0; k < dims; ++k) {
    z[static_cast<std::size_t>(k)] = detail::standardized(u.col(k), "u" + std::to_string(k + 1));
    z[static_cast<std::size_t>(dims + k)] = detail::standardized(udot.col(k), "du" + std::to_string(k + 1));
  }

  struct Group {
    std::vector<int> vars;                 // indices into z
    std::vector<std::vector<int>> monos;   // exponents over vars
    std::vector<Vector> columns;
    std::vector<double> means;
    std::vector<int> degree;
  };
  auto make_group = [&](const std::vector<int>& g) {
    Group gr;
    for (int i : g) gr.vars.push_back(i);
    for (int i : g) gr.vars.push_back(dims + i);
    gr.monos = detail::monomials(static_cast<int>(gr.vars.size()), max_order - 1);
    for (const auto& e : gr.monos) {
      Vector col = Vector::Ones(n);
      int deg = 0;
      for (std::size_t v = 0; v < e.size(); ++v)
        for (int p = 0; p < e[v]; ++p) col.array() *= z[static_cast<std::size_t>(gr.vars[v])].array();
      for (int p : e) deg += p;
      gr.means.push_back(col.mean());
      gr.columns.push_back(std::move(col));
      gr.degree.push_back(deg);
    }
    return gr;
  };
  const Group a = make_group(partition.g1);
  const Group b = make_group(partition.g2);

  SeparabilityReport rep;
  rep.partition = partition;
  rep.threshold = threshold;
  rep.samples = static_cast<std::size_t>(n);
  for (std::size_t i = 0; i < a.monos.size(); ++i)
    for (std::size_t j = 0; j < b.monos.size(); ++j) {
      if (a.degree[i] + b.degree[j] > max_order) continue;
      MomentRow row;
      row.exponents.assign(static_cast<std::size_t>(2 * dims), 0);
      for (std::size_t v = 0; v < a.vars.size(); ++v) row.exponents[static_cast<std::size_t>(a.vars[v])] += a.monos[i][v];
      for (std::size_t v = 0; v < b.vars.size(); ++v) row.exponents[static_cast<std::size_t>(b.vars[v])] += b.monos[j][v];
      row.label = detail::monomial_label(row.exponents, dims);
      row.joint = a.columns[i].dot(b.columns[j]) / static_cast<double>(n);
      row.product = a.means[i] * b.means[j];
      row.deviation = std::abs(row.joint - row.product) / (1.0 + std::abs(row.product));
      if (row.deviation > rep.max_deviation || rep.table.empty()) {
        rep.max_deviation = std::max(rep.max_deviation, row.deviation);
        rep.worst_row = rep.table.size();
      }
      rep.table.push_back(std::move(row));
    }
  rep.verdict = rep.max_deviation <= threshold ? Verdict::separable : Verdict::inseparable;
  return rep;
}

inline SeparabilityReport factorization_statistic(const USeries& s, const Partition& partition, int max_order = 4,
                                                  double threshold = 0.05) {
  return factorization_statistic(s.u, s.udot, partition, max_order, threshold);
}

inline void write_report_csv(const std::filesystem::path& path, const SeparabilityReport& rep) {
  CsvWriter w(path, {"moment", "joint", "product", "deviation"});
  for (const auto& r : rep.table) {
    w << r.label << r.joint << r.product << r.deviation;
    w.end_row();
  }
  w.close();
}

// ---------------------------------------------------------------------------
// Full pipeline

struct SeparationConfig {
  int bins_per_dim = 16;
  FrameOptions frames;
  CoordinateOptions coordinates;
  int lattice_resolution = 64;
  int max_order = 4;
  double eps_sep = 0.05;
  double min_coverage = 0.8;
};

struct PartitionOutcome {
  Partition partition;
  std::optional<CoordinateMap> map;
  std::optional<USeries> series;
  std::optional<SeparabilityReport> report;
  std::string failure;  // nonempty when the partition could not be tested

  bool tested() const noexcept { return report.has_value(); }
};

struct SeparationResult {
  std::shared_ptr<const BinGrid> grid;
  FrameField field;
  Vector base_point;
  std::vector<PartitionOutcome> outcomes;
  Verdict verdict = Verdict::inseparable;
  std::optional<std::size_t> best;  // index into outcomes
  bool incomplete = false;          // some partition was untestable

  std::vector<std::size_t> passing() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < outcomes.size(); ++i)
      if (outcomes[i].report && outcomes[i].report->verdict == Verdict::separable) out.push_back(i);
    return out;
  }
};

/// Binning, frames, alignment, then for each partition: coordinate map,
/// transformed series and factorization test. The separable verdict goes to
/// the partition with the smallest max deviation if it passes; ties keep the
/// earlier partition in enumeration order.
inline SeparationResult separate(const Trajectory& traj, const SeparationConfig& cfg = {}) {
  if (traj.dims() < 2) throw ShapeError("separate: need at least 2 dimensions");
  SeparationResult res;
  auto grid = std::make_shared<BinGrid>(build_grid(traj, cfg.bins_per_dim));
  res.grid = grid;
  res.field = align_frames(build_frames(traj, *grid, cfg.frames), grid, cfg.frames);
  res.base_point = grid->center(res.field.reference_bin);
  const Lattice lattice = lattice_over(*grid, cfg.lattice_resolution);

  for (const Partition& p : enumerate_partitions(static_cast<int>(traj.dims()))) {
    PartitionOutcome o;
    o.partition = p;
    try {
      o.map = build_coordinate(res.field, p, res.base_point, lattice, cfg.coordinates);
      o.series = transform_series(*o.map, traj, cfg.min_coverage);
      o.report = factorization_statistic(*o.series, p, cfg.max_order, cfg.eps_sep);
    } catch (const Error& e) {
      o.failure = e.what();
      res.incomplete = true;
    }
    res.outcomes.push_back(std::move(o));
  }
  for (std::size_t i = 0; i < res.outcomes.size(); ++i) {
    const auto& r = res.outcomes[i].report;
    if (!r) continue;
    if (!res.best || r->max_deviation < res.outcomes[*res.best].report->max_deviation) res.best = i;
  }
  if (res.best && res.outcomes[*res.best].report->verdict == Verdict::separable) res.verdict = Verdict::separable;
  return res;
}

}  // namespace velobss
