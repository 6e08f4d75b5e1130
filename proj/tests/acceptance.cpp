// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include "oracles.hpp"

#include <cstdio>
#include <numbers>
#include <string>

using namespace velobss;

namespace {

int failures = 0;

void report(int id, const char* name, bool ok, const std::string& detail) {
  std::printf("[%s] %d. %s: %s\n", ok ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
  failures += !ok;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

struct Run {
  Matrix s;
  Trajectory traj;
  SeparationResult res;
};

// Seeded sources, mixing, whitening, separation with 16 bins per axis.
Run pipeline(const Matrix& s, double rate) {
  Run r;
  r.s = s;
  const WhitenResult w = pca_whiten(SignalSeries(rate, mix(s)));
  r.traj = estimate_velocity(w.states);
  SeparationConfig cfg;
  cfg.bins_per_dim = 16;
  r.res = separate(r.traj, cfg);
  return r;
}

void end_to_end(const Run& run) {
  const auto& res = run.res;
  bool ok = res.verdict == Verdict::separable && res.best.has_value();
  std::string detail = std::string("verdict ") + to_string(res.verdict);
  if (res.best) {
    const auto& o = res.outcomes[*res.best];
    const USeries& us = *o.series;
    Matrix truth(us.size(), 2);
    for (Eigen::Index i = 0; i < us.size(); ++i)
      truth.row(i) = run.s.row(static_cast<Eigen::Index>(us.indices[static_cast<std::size_t>(i)]) + 1);
    const RecoveryScore sc = evaluate_recovery(us.u, truth);
    ok = ok && sc.matched.minCoeff() >= 0.90 && sc.cross_max <= 0.20;
    detail += fmt(", max deviation %.4f, matched |rho| %.4f %.4f, cross %.4f", o.report->max_deviation, sc.matched(0),
                  sc.matched(1), sc.cross_max);
  }
  report(1, "end-to-end recovery", ok, detail);
}

void m_contracts(const Run& run) {
  double worst_white = 0.0, worst_diag = 0.0;
  std::size_t valid = 0;
  for (const auto& f : run.res.field.frames) {
    if (f.status != FrameStatus::valid) continue;
    ++valid;
    const Matrix i2 = oracle::transformed_c2(f.m, f.c2);
    worst_white = std::max(worst_white, (i2 - Matrix::Identity(i2.rows(), i2.cols())).cwiseAbs().maxCoeff());
    const Matrix j = oracle::contracted_i4(f.m, f.c4);
    const double scale = f.d.cwiseAbs().maxCoeff();
    for (Eigen::Index k = 0; k < j.rows(); ++k)
      for (Eigen::Index l = 0; l < j.cols(); ++l)
        if (k != l) worst_diag = std::max(worst_diag, std::abs(j(k, l)) / scale);
  }
  report(2, "M-matrix contracts", valid > 0 && worst_white <= 1e-8 && worst_diag <= 1e-6,
         fmt("%.0f valid bins, max |M C2 M^T - I| %.2e, max off-diagonal / max|D| %.2e", static_cast<double>(valid),
             worst_white, worst_diag));
}

void covariance_law(const Run& run) {
  // Most populated valid bin of the end-to-end run.
  const auto& field = run.res.field;
  std::size_t bin = 0, best = 0;
  for (const auto& f : field.frames)
    if (f.status == FrameStatus::valid && f.n > best) {
      best = f.n;
      bin = f.bin;
    }
  const auto& rows = field.grid->members(bin);
  Matrix vel(static_cast<Eigen::Index>(rows.size()), 2);
  for (std::size_t k = 0; k < rows.size(); ++k)
    vel.row(static_cast<Eigen::Index>(k)) = run.traj.velocities().row(static_cast<Eigen::Index>(rows[k]));
  const MMatrix m0 = build_m_matrix(local_correlations(vel));

  std::mt19937_64 rng(2024);
  double worst = 1.0;
  bool ok = m0.status == FrameStatus::valid;
  for (int trial = 0; trial < 100 && ok; ++trial) {
    Matrix a = oracle::normal_matrix(rng, 2, 2);
    while (std::abs(a.determinant()) < 0.1) a = oracle::normal_matrix(rng, 2, 2);
    const MMatrix m1 = build_m_matrix(local_correlations(vel * a.transpose()));
    if (m1.status != FrameStatus::valid) {
      ok = false;
      break;
    }
    const Matrix back = m1.m * a;
    // Each row of M' A must be +/- a row of M, and the matching must be one-to-one.
    std::vector<int> used(2, 0);
    for (int i = 0; i < 2; ++i) {
      double c_best = 0.0;
      int j_best = 0;
      for (int j = 0; j < 2; ++j) {
        const double c = std::abs(back.row(i).normalized().dot(m0.m.row(j).normalized()));
        if (c > c_best) {
          c_best = c;
          j_best = j;
        }
      }
      used[static_cast<std::size_t>(j_best)]++;
      worst = std::min(worst, c_best);
    }
    ok = ok && used[0] == 1 && used[1] == 1;
  }
  ok = ok && worst >= 1.0 - 1e-6;
  report(3, "covariance law", ok,
         fmt("bin %.0f (%.0f samples), 100 maps, min |cos| %.12f", static_cast<double>(bin), static_cast<double>(best),
             worst));
}

void separable_alignment() {
  SourceOptions so;
  const Matrix s = gen_sources(so);
  const Trajectory tr = estimate_velocity(SignalSeries(so.sample_rate, s));
  auto grid = std::make_shared<BinGrid>(build_grid(tr, 16));
  const FrameField field = align_frames(build_frames(tr, *grid), grid);
  const double limit = std::cos(18.0 * std::numbers::pi / 180.0);
  std::size_t valid = 0, good = 0;
  for (std::size_t b = 0; b < field.frames.size(); ++b) {
    if (field.frames[b].status != FrameStatus::valid || !field.vectors[b]) continue;
    ++valid;
    const Matrix& v = *field.vectors[b];
    int axis[2] = {-1, -1};
    bool ok = true;
    for (int i = 0; i < 2; ++i) {
      Eigen::Index arg;
      const double c = v.col(i).normalized().cwiseAbs().maxCoeff(&arg);
      axis[i] = static_cast<int>(arg);
      ok = ok && c >= limit;
    }
    good += ok && axis[0] != axis[1];
  }
  const double frac = valid ? static_cast<double>(good) / static_cast<double>(valid) : 0.0;
  report(4, "separable-data alignment", valid > 0 && frac >= 0.95,
         fmt("%.0f of %.0f valid bins within 18 deg of distinct axes (%.3f)", static_cast<double>(good),
             static_cast<double>(valid), frac));
}

void negative_control() {
  SourceOptions so;
  const Run run = pipeline(couple_sources(gen_sources(so), 0.1), so.sample_rate);
  const auto& res = run.res;
  double dev = 0.0;
  bool tested = res.outcomes.size() == 1 && res.outcomes[0].report.has_value();
  if (tested) dev = res.outcomes[0].report->max_deviation;
  report(5, "negative control", tested && res.verdict == Verdict::inseparable && dev > 0.05,
         std::string("verdict ") + to_string(res.verdict) + fmt(", max deviation %.4f", dev) +
             (tested ? "" : ", partition untested: " + res.outcomes[0].failure));
}

void oracle_equivalence() {
  std::mt19937_64 rng(6);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix v = oracle::normal_matrix(rng, 10, 2);
    const Correlations c = local_correlations(v);
    const oracle::Moments o = oracle::brute_moments(v);
    worst = std::max(worst, (c.c2 - o.c2).cwiseAbs().maxCoeff());
    for (int k = 0; k < 2; ++k)
      for (int l = 0; l < 2; ++l)
        for (int m = 0; m < 2; ++m)
          for (int q = 0; q < 2; ++q) worst = std::max(worst, std::abs(c.c4(k, l, m, q) - o.at(k, l, m, q)));
  }
  auto rot = [](const Vector& x) -> std::optional<Vector> { return Vector(Eigen::Vector2d(-x(1), x(0))); };
  const Streamline line = trace_streamline(rot, Eigen::Vector2d(1.0, 0.0), 0.0, 2.0 * std::numbers::pi, 0.01);
  double radial = 0.0;
  for (const auto& p : line.points) radial = std::max(radial, std::abs(p.norm() - 1.0));
  report(6, "oracle equivalence", worst <= 1e-12 && radial <= 1e-6,
         fmt("C2/C4 max abs error %.2e over 20 bins, streamline radial error %.2e", worst, radial));
}

void partition_counts() {
  const std::size_t n2 = enumerate_partitions(2).size(), n3 = enumerate_partitions(3).size(),
                    n4 = enumerate_partitions(4).size();
  report(7, "partition enumeration", n2 == 1 && n3 == 3 && n4 == 7,
         fmt("N=2: %.0f, N=3: %.0f, N=4: %.0f", static_cast<double>(n2), static_cast<double>(n3),
             static_cast<double>(n4)));
}

void calibration() {
  const Partition split{{0}, {1}};
  const Eigen::Index n = 100000;
  int null_pass = 0, dep_fail = 0;
  double null_worst = 0.0, dep_least = 1e300;
  for (int seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(10000 + static_cast<std::uint64_t>(seed));
    const Matrix u = oracle::normal_matrix(rng, n, 2), du = oracle::normal_matrix(rng, n, 2);
    const auto r = factorization_statistic(u, du, split);
    null_pass += r.max_deviation <= 0.05;
    null_worst = std::max(null_worst, r.max_deviation);

    Matrix q = oracle::normal_matrix(rng, n, 2);
    q.col(1) = q.col(0).array().square() - 1.0;
    const Matrix dq = oracle::normal_matrix(rng, n, 2);
    const auto d = factorization_statistic(q, dq, split);
    dep_fail += d.verdict == Verdict::inseparable;
    dep_least = std::min(dep_least, d.max_deviation);
  }
  report(8, "independence-statistic calibration", null_pass >= 48 && dep_fail == 50,
         fmt("null passes %.0f/50 (worst %.4f), dependent fails %.0f/50 (least %.3f)", null_pass, null_worst, dep_fail,
             dep_least));
}

}  // namespace

int main() {
  try {
    SourceOptions so;
    const Run run = pipeline(gen_sources(so), so.sample_rate);
    end_to_end(run);
    m_contracts(run);
    covariance_law(run);
    separable_alignment();
    negative_control();
    oracle_equivalence();
    partition_counts();
    calibration();
  } catch (const std::exception& e) {
    std::printf("[FAIL] acceptance aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%d of 8 criteria failed\n", failures);
  return failures ? 1 : 0;
}
