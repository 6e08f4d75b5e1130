#pragma once

#include "velobss/binning.hpp"
#include "velobss/core.hpp"
#include "velobss/io.hpp"
#include "velobss/trajectory.hpp"

#include <cmath>
#include <deque>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace velobss {

/// Fully symmetric rank-4 tensor over N dimensions, stored densely (N^4 entries).
class Tensor4 {
 public:
  Tensor4() = default;
  explicit Tensor4(int n) : n_(n), data_(static_cast<std::size_t>(n * n * n * n), 0.0) {}

  int dim() const noexcept { return n_; }
  double& operator()(int k, int l, int m, int q) { return data_[offset(k, l, m, q)]; }
  double operator()(int k, int l, int m, int q) const { return data_[offset(k, l, m, q)]; }
  const std::vector<double>& raw() const noexcept { return data_; }

  /// A_kl = sum_mn G_mn T_klmn for symmetric G.
  Matrix contract_last_two(const Matrix& g) const {
    Matrix a = Matrix::Zero(n_, n_);
    for (int k = 0; k < n_; ++k)
      for (int l = 0; l < n_; ++l) {
        double s = 0.0;
        for (int m = 0; m < n_; ++m)
          for (int q = 0; q < n_; ++q) s += g(m, q) * (*this)(k, l, m, q);
        a(k, l) = s;
      }
    return a;
  }

  /// T'_klmn = sum A_kk' A_ll' A_mm' A_nn' T_k'l'm'n'.
  Tensor4 transformed(const Matrix& a) const {
    const int n = n_;
    // Contract one index at a time: four passes of N^5 work.
    Tensor4 cur = *this;
    for (int axis = 0; axis < 4; ++axis) {
      Tensor4 next(n);
      for (int i0 = 0; i0 < n; ++i0)
        for (int i1 = 0; i1 < n; ++i1)
          for (int i2 = 0; i2 < n; ++i2)
            for (int i3 = 0; i3 < n; ++i3) {
              int idx[4] = {i0, i1, i2, i3};
              const int out = idx[axis];
              double s = 0.0;
              for (int j = 0; j < n; ++j) {
                idx[axis] = j;
                s += a(out, j) * cur(idx[0], idx[1], idx[2], idx[3]);
              }
              next(i0, i1, i2, i3) = s;
            }
      cur = std::move(next);
    }
    return cur;
  }

 private:
  std::size_t offset(int k, int l, int m, int q) const {
    return static_cast<std::size_t>(((k * n_ + l) * n_ + m) * n_ + q);
  }
  int n_ = 0;
  std::vector<double> data_;
};

/// Second- and fourth-order moments of bin-centered velocities.
struct Correlations {
  std::size_t n = 0;
  Vector mean;
  Matrix c2;
  Tensor4 c4;
};

/// Local velocity correlations over the selected rows of `velocities`.
/// Velocities are centered by their mean, so first-order correlations vanish.
inline Correlations local_correlations(const Matrix& velocities, std::span<const std::size_t> rows) {
  const std::size_t n = rows.size();
  if (n < 2) throw InsufficientDataError("local_correlations: fewer than 2 velocities");
  const int dims = static_cast<int>(velocities.cols());
  Correlations out;
  out.n = n;
  out.mean = Vector::Zero(dims);
  for (std::size_t r : rows) out.mean += velocities.row(static_cast<Eigen::Index>(r)).transpose();
  out.mean /= static_cast<double>(n);

  out.c2 = Matrix::Zero(dims, dims);
  out.c4 = Tensor4(dims);
  // Accumulate only sorted index tuples k<=l<=m<=q, then mirror.
  std::vector<std::array<int, 4>> tuples;
  for (int k = 0; k < dims; ++k)
    for (int l = k; l < dims; ++l)
      for (int m = l; m < dims; ++m)
        for (int q = m; q < dims; ++q) tuples.push_back({k, l, m, q});
  std::vector<double> acc(tuples.size(), 0.0);
  Vector u(dims);
  for (std::size_t r : rows) {
    u = velocities.row(static_cast<Eigen::Index>(r)).transpose() - out.mean;
    out.c2.noalias() += u * u.transpose();
    for (std::size_t t = 0; t < tuples.size(); ++t) {
      const auto& tp = tuples[t];
      acc[t] += u(tp[0]) * u(tp[1]) * u(tp[2]) * u(tp[3]);
    }
  }
  const double inv = 1.0 / static_cast<double>(n);
  out.c2 *= inv;
  out.c2 = 0.5 * (out.c2 + out.c2.transpose());
  for (std::size_t t = 0; t < tuples.size(); ++t) {
    std::array<int, 4> p = tuples[t];
    const double v = acc[t] * inv;
    // All distinct orderings of the sorted tuple.
    do {
      out.c4(p[0], p[1], p[2], p[3]) = v;
    } while (std::next_permutation(p.begin(), p.end()));
  }
  return out;
}

inline Correlations local_correlations(const Matrix& velocities) {
  std::vector<std::size_t> rows(static_cast<std::size_t>(velocities.rows()));
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return local_correlations(velocities, rows);
}

enum class FrameStatus { valid, sparse, degenerate };

inline const char* to_string(FrameStatus s) {
  switch (s) {
    case FrameStatus::valid: return "valid";
    case FrameStatus::sparse: return "sparse";
    case FrameStatus::degenerate: return "degenerate";
  }
  return "?";
}

struct MMatrix {
  Matrix m;
  Vector d;
  FrameStatus status = FrameStatus::valid;
};

struct FrameTolerances {
  double pd_floor = 1e-10;    // min eigenvalue of C2 relative to max
  double degeneracy = 1e-6;   // D ties relative to max|D|
  double max_condition = 1e12;
};

namespace detail {

// Symmetric eigendecomposition with descending eigenvalues and the
// largest-magnitude entry of each eigenvector made positive.
inline void sorted_eigen(const Matrix& sym, Vector& values, Matrix& vectors) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (sym + sym.transpose()));
  if (eig.info() != Eigen::Success) throw DegeneracyError("eigendecomposition failed");
  values = eig.eigenvalues().reverse();
  vectors = eig.eigenvectors().rowwise().reverse();
  for (Eigen::Index j = 0; j < vectors.cols(); ++j) fix_sign(vectors.col(j));
}

}  // namespace detail

/// Sum over m of the M-transformed fourth-order correlation, I_klmm.
/// Since sum_m M_mm' M_mn' = (M^T M)_m'n', this is M A M^T with A the C4
/// contraction against M^T M.
inline Matrix contracted_fourth(const Matrix& m, const Tensor4& c4) {
  return m * c4.contract_last_two(m.transpose() * m) * m.transpose();
}

/// The local M matrix: whitens C2 and diagonalizes the contracted, whitened C4.
///
/// M = R2^T * Lambda^{-1/2} * R1^T, with C2 = R1 Lambda R1^T and R2 holding the
/// eigenvectors (columns, descending eigenvalue) of sum_m C~_klmm. Throws
/// DegeneracyError if C2 is not positive definite.
inline MMatrix build_m_matrix(const Matrix& c2, const Tensor4& c4, const FrameTolerances& tol = {}) {
  const Eigen::Index n = c2.rows();
  if (c2.cols() != n || c4.dim() != n) throw ShapeError("build_m_matrix: dimension mismatch");
  Vector lambda;
  Matrix r1;
  detail::sorted_eigen(c2, lambda, r1);
  if (!(lambda(0) > 0.0) || lambda(n - 1) <= tol.pd_floor * lambda(0))
    throw DegeneracyError("build_m_matrix: C2 not positive definite");

  const Matrix whiten = lambda.cwiseSqrt().cwiseInverse().asDiagonal() * r1.transpose();
  const Matrix k = contracted_fourth(whiten, c4);
  MMatrix out;
  Matrix r2;
  detail::sorted_eigen(k, out.d, r2);
  out.m = r2.transpose() * whiten;

  const double scale = out.d.cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i + 1 < n; ++i)
    if (out.d(i) - out.d(i + 1) < tol.degeneracy * scale) out.status = FrameStatus::degenerate;
  return out;
}

inline MMatrix build_m_matrix(const Correlations& c, const FrameTolerances& tol = {}) {
  return build_m_matrix(c.c2, c.c4, tol);
}

/// Local vectors V_(i): the columns of M^{-1}.
inline Matrix extract_vectors(const Matrix& m, double max_condition = 1e12) {
  Eigen::JacobiSVD<Matrix> svd(m);
  const Vector sv = svd.singularValues();
  const double smin = sv(sv.size() - 1);
  if (!(smin > 0.0) || sv(0) / smin >= max_condition)
    throw DegeneracyError("extract_vectors: M is singular or ill-conditioned");
  return m.inverse();
}

// ---------------------------------------------------------------------------
// Signed permutations

/// P with P(i, perm[i]) = sign[i]. Applied to a frame: M -> P M, V -> V P^T,
/// so the aligned i-th vector is sign[i] * V_(perm[i]).
struct SignedPermutation {
  std::vector<int> perm;
  std::vector<int> sign;

  static SignedPermutation identity(int n) {
    SignedPermutation p;
    p.perm.resize(static_cast<std::size_t>(n));
    std::iota(p.perm.begin(), p.perm.end(), 0);
    p.sign.assign(static_cast<std::size_t>(n), 1);
    return p;
  }

  Matrix matrix() const {
    const auto n = static_cast<Eigen::Index>(perm.size());
    Matrix p = Matrix::Zero(n, n);
    for (std::size_t i = 0; i < perm.size(); ++i)
      p(static_cast<Eigen::Index>(i), perm[i]) = sign[i];
    return p;
  }

  Matrix apply_columns(const Matrix& v) const {
    Matrix out(v.rows(), v.cols());
    for (std::size_t i = 0; i < perm.size(); ++i)
      out.col(static_cast<Eigen::Index>(i)) = sign[i] * v.col(perm[i]);
    return out;
  }

  bool is_identity() const {
    for (std::size_t i = 0; i < perm.size(); ++i)
      if (perm[i] != static_cast<int>(i) || sign[i] != 1) return false;
    return true;
  }

  /// this * other (apply other first).
  SignedPermutation compose(const SignedPermutation& other) const {
    SignedPermutation r;
    r.perm.resize(perm.size());
    r.sign.resize(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
      r.perm[i] = other.perm[static_cast<std::size_t>(perm[i])];
      r.sign[i] = sign[i] * other.sign[static_cast<std::size_t>(perm[i])];
    }
    return r;
  }
};

/// All 2^N * N! signed permutations of size n.
inline std::vector<SignedPermutation> all_signed_permutations(int n) {
  std::vector<SignedPermutation> out;
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  do {
    for (int mask = 0; mask < (1 << n); ++mask) {
      SignedPermutation p;
      p.perm = perm;
      p.sign.resize(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) p.sign[static_cast<std::size_t>(i)] = (mask >> i) & 1 ? -1 : 1;
      out.push_back(std::move(p));
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return out;
}

/// Signed permutation P maximizing sum over references and i of cos(angle(P-applied V_(i), ref_(i))).
inline SignedPermutation best_alignment(const Matrix& v, std::span<const Matrix> references,
                                        const std::vector<SignedPermutation>& candidates) {
  const Matrix vn = v.colwise().normalized();
  // cos table: cosines[r](i, j) = cos(V_(j), ref_r(i)).
  std::vector<Matrix> cosines;
  for (const Matrix& ref : references) cosines.push_back(ref.colwise().normalized().transpose() * vn);
  double best = -std::numeric_limits<double>::infinity();
  const SignedPermutation* arg = &candidates.front();
  for (const auto& p : candidates) {
    double score = 0.0;
    for (const Matrix& c : cosines)
      for (std::size_t i = 0; i < p.perm.size(); ++i)
        score += p.sign[i] * c(static_cast<Eigen::Index>(i), p.perm[i]);
    if (score > best + 1e-15) {
      best = score;
      arg = &p;
    }
  }
  return *arg;
}

// ---------------------------------------------------------------------------
// Frames

struct LocalFrame {
  std::size_t bin = 0;
  BinIndex index;
  Vector center;
  std::size_t n = 0;
  Matrix c2;
  Tensor4 c4;
  Matrix m;
  Vector d;
  Matrix v;
  FrameStatus status = FrameStatus::sparse;

  bool has_frame() const noexcept { return m.size() > 0; }
};

struct FrameOptions {
  std::size_t min_samples_per_bin = 50;
  FrameTolerances tolerances;
  int fill_radius = 2;  // face steps
};

/// Per-bin correlations, M matrices and vectors. Bins with fewer than
/// min_samples_per_bin samples, or with non-positive-definite C2, are sparse.
inline std::vector<LocalFrame> build_frames(const Trajectory& traj, const BinGrid& grid,
                                            const FrameOptions& opts = {}) {
  std::vector<LocalFrame> frames(grid.bin_count());
  parallel_for(grid.bin_count(), [&](std::size_t b) {
    LocalFrame& f = frames[b];
    f.bin = b;
    f.index = grid.unflatten(b);
    f.center = grid.center(b);
    const auto& rows = grid.members(b);
    f.n = rows.size();
    if (f.n < std::max<std::size_t>(opts.min_samples_per_bin, 2)) return;
    Correlations c = local_correlations(traj.velocities(), rows);
    f.c2 = c.c2;
    f.c4 = std::move(c.c4);
    try {
      MMatrix mm = build_m_matrix(f.c2, f.c4, opts.tolerances);
      f.v = extract_vectors(mm.m, opts.tolerances.max_condition);
      f.m = std::move(mm.m);
      f.d = std::move(mm.d);
      f.status = mm.status;
    } catch (const DegeneracyError&) {
      f.status = FrameStatus::sparse;
    }
  });
  return frames;
}

/// Globally aligned frame field plus the interpolated vectors used for tracing.
struct FrameField {
  std::shared_ptr<const BinGrid> grid;
  std::vector<LocalFrame> frames;               // M, D, V after alignment
  std::vector<SignedPermutation> alignment;     // applied per bin
  std::vector<std::optional<Matrix>> vectors;   // field value per bin (aligned or filled)
  std::size_t reference_bin = 0;
  int components = 0;
  bool disconnected = false;

  int dims() const noexcept { return grid->dims(); }
  bool defined(std::size_t bin) const { return vectors[bin].has_value(); }
};

/// Resolves the per-bin permutation/reflection ambiguity.
///
/// Traversal starts at the valid bin with most samples and proceeds
/// breadth-first over face neighbors. Each newly reached valid bin takes the
/// signed permutation that best matches its already-aligned valid neighbors.
/// Degenerate bins are aligned for export but excluded from scoring; sparse
/// and degenerate bins get inverse-distance-weighted vectors from valid bins
/// within fill_radius face steps.
inline FrameField align_frames(std::vector<LocalFrame> frames, std::shared_ptr<const BinGrid> grid,
                               const FrameOptions& opts = {}) {
  const std::size_t nb = grid->bin_count();
  if (frames.size() != nb) throw ShapeError("align_frames: frame count != bin count");
  const int dims = grid->dims();
  FrameField field;
  field.grid = grid;
  field.alignment.assign(nb, SignedPermutation::identity(dims));
  field.vectors.assign(nb, std::nullopt);

  std::vector<char> aligned(nb, 0);
  auto is_valid = [&](std::size_t b) { return frames[b].status == FrameStatus::valid; };
  const auto candidates = all_signed_permutations(dims);

  auto apply = [&](std::size_t b, const SignedPermutation& p) {
    LocalFrame& f = frames[b];
    const Matrix pm = p.matrix();
    f.m = pm * f.m;
    f.v = p.apply_columns(f.v);
    Vector d(f.d.size());
    for (std::size_t i = 0; i < p.perm.size(); ++i) d(static_cast<Eigen::Index>(i)) = f.d(p.perm[i]);
    f.d = d;
    field.alignment[b] = p;
  };

  auto align_to_neighbors = [&](std::size_t b) {
    std::vector<Matrix> refs;
    for (std::size_t n : grid->face_neighbors(b))
      if (aligned[n] && is_valid(n)) refs.push_back(frames[n].v);
    if (refs.empty()) return;
    apply(b, best_alignment(frames[b].v, refs, candidates));
  };

  bool any_valid = false;
  for (;;) {
    // Seed: the unaligned valid bin with most samples.
    std::optional<std::size_t> seed;
    for (std::size_t b = 0; b < nb; ++b)
      if (is_valid(b) && !aligned[b] && (!seed || frames[b].n > frames[*seed].n)) seed = b;
    if (!seed) break;
    if (!any_valid) field.reference_bin = *seed;
    any_valid = true;
    ++field.components;
    aligned[*seed] = 1;
    std::deque<std::size_t> queue{*seed};
    while (!queue.empty()) {
      const std::size_t b = queue.front();
      queue.pop_front();
      for (std::size_t n : grid->face_neighbors(b)) {
        if (aligned[n] || !is_valid(n)) continue;
        align_to_neighbors(n);
        aligned[n] = 1;
        queue.push_back(n);
      }
    }
  }
  if (!any_valid) throw DegeneracyError("align_frames: no valid frames");
  field.disconnected = field.components > 1;

  for (std::size_t b = 0; b < nb; ++b)
    if (frames[b].status == FrameStatus::degenerate && frames[b].has_frame()) align_to_neighbors(b);

  for (std::size_t b = 0; b < nb; ++b)
    if (is_valid(b)) field.vectors[b] = frames[b].v;

  // Fill non-valid bins from valid bins within fill_radius face steps.
  for (std::size_t b = 0; b < nb; ++b) {
    if (is_valid(b)) continue;
    std::vector<int> dist(nb, -1);
    std::deque<std::size_t> q{b};
    dist[b] = 0;
    Matrix acc = Matrix::Zero(dims, dims);
    double wsum = 0.0;
    const BinIndex here = grid->unflatten(b);
    while (!q.empty()) {
      const std::size_t c = q.front();
      q.pop_front();
      if (c != b && is_valid(c)) {
        const BinIndex there = grid->unflatten(c);
        double d2 = 0.0;
        for (int k = 0; k < dims; ++k) {
          const double dd = there[static_cast<std::size_t>(k)] - here[static_cast<std::size_t>(k)];
          d2 += dd * dd;
        }
        acc += frames[c].v / d2;
        wsum += 1.0 / d2;
      }
      if (dist[c] >= opts.fill_radius) continue;
      for (std::size_t n : grid->face_neighbors(c))
        if (dist[n] < 0) {
          dist[n] = dist[c] + 1;
          q.push_back(n);
        }
    }
    if (wsum > 0.0) field.vectors[b] = acc / wsum;
  }
  field.frames = std::move(frames);
  return field;
}

/// One row per bin: index, center, n, status, flattened M (row-major), D,
/// flattened V (column by column). V is the field value (filled for non-valid bins).
inline void write_frames_csv(const std::filesystem::path& path, const FrameField& field) {
  const int n = field.dims();
  std::vector<std::string> header{"bin"};
  for (int d = 0; d < n; ++d) header.push_back("i" + std::to_string(d + 1));
  for (int d = 0; d < n; ++d) header.push_back("c" + std::to_string(d + 1));
  header.push_back("n");
  header.push_back("status");
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) header.push_back("M" + std::to_string(r + 1) + std::to_string(c + 1));
  for (int d = 0; d < n; ++d) header.push_back("D" + std::to_string(d + 1));
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < n; ++c) header.push_back("V" + std::to_string(i + 1) + "_" + std::to_string(c + 1));
  CsvWriter w(path, header);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const LocalFrame& f : field.frames) {
    w << f.bin;
    for (int k : f.index) w << k;
    for (int d = 0; d < n; ++d) w << f.center(d);
    w << f.n << to_string(f.status);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) w << (f.has_frame() ? f.m(r, c) : nan);
    for (int d = 0; d < n; ++d) w << (f.has_frame() ? f.d(d) : nan);
    const auto& v = field.vectors[f.bin];
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < n; ++c) w << (v ? (*v)(c, i) : nan);
    w.end_row();
  }
  w.close();
}

}  // namespace velobss
