#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include <unistd.h>

using namespace velobss;

namespace {

const Partition kSplit{{0}, {1}};

struct Pair {
  Matrix u, du;
};

Pair normals(std::uint64_t seed, Eigen::Index n) {
  std::mt19937_64 rng(seed);
  return {oracle::normal_matrix(rng, n, 2), oracle::normal_matrix(rng, n, 2)};
}

// Direct evaluation for N = 2: every exponent vector (a1, a2, b1, b2) over
// (u1, u2, du1, du2) whose group-1 and group-2 degrees are both >= 1.
std::vector<double> brute_deviations(const Matrix& u, const Matrix& du, int max_order) {
  const Eigen::Index n = u.rows();
  std::vector<Vector> z;
  for (const Matrix* m : {&u, &du})
    for (int c = 0; c < 2; ++c) {
      Vector v = m->col(c);
      const double mean = v.mean();
      const double sd = std::sqrt((v.array() - mean).square().mean());
      z.push_back((v.array() - mean) / sd);
    }
  // z[0] = u1, z[1] = u2, z[2] = du1, z[3] = du2; group 1 = {u1, du1}.
  std::vector<double> out;
  for (int a = 0; a <= max_order; ++a)
    for (int b = 0; a + b <= max_order; ++b)
      for (int c = 0; a + b + c <= max_order; ++c)
        for (int d = 0; a + b + c + d <= max_order; ++d) {
          if (a + c == 0 || b + d == 0) continue;
          double e1 = 0.0, e2 = 0.0, e12 = 0.0;
          for (Eigen::Index i = 0; i < n; ++i) {
            const double m1 = std::pow(z[0](i), a) * std::pow(z[2](i), c);
            const double m2 = std::pow(z[1](i), b) * std::pow(z[3](i), d);
            e1 += m1;
            e2 += m2;
            e12 += m1 * m2;
          }
          e1 /= static_cast<double>(n);
          e2 /= static_cast<double>(n);
          e12 /= static_cast<double>(n);
          out.push_back(std::abs(e12 - e1 * e2) / (1.0 + std::abs(e1 * e2)));
        }
  std::sort(out.begin(), out.end());
  return out;
}

const MomentRow* find_row(const SeparabilityReport& r, const std::string& label) {
  for (const auto& row : r.table)
    if (row.label == label) return &row;
  return nullptr;
}

}  // namespace

TEST(FactorizationStatistic, RowCountForTwoComponents) {
  auto p = normals(1, 10000);
  auto rep = factorization_statistic(p.u, p.du, kSplit);
  EXPECT_EQ(rep.table.size(), 41u);
  EXPECT_EQ(rep.table.size(), brute_deviations(p.u, p.du, 4).size());
  EXPECT_EQ(factorization_statistic(p.u, p.du, kSplit, 2).table.size(), 4u);
}

TEST(FactorizationStatistic, MatchesDirectEvaluation) {
  std::mt19937_64 rng(2);
  Matrix u = oracle::normal_matrix(rng, 12000, 2);
  Matrix du = oracle::normal_matrix(rng, 12000, 2);
  u.col(1) += 0.3 * u.col(0).array().square().matrix();  // some real dependence
  du.col(0) = du.col(0).array().cube();
  auto rep = factorization_statistic(u, du, kSplit);
  std::vector<double> got;
  for (const auto& r : rep.table) got.push_back(r.deviation);
  std::sort(got.begin(), got.end());
  const auto expect = brute_deviations(u, du, 4);
  ASSERT_EQ(got.size(), expect.size());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], expect[i], 1e-9);
  EXPECT_DOUBLE_EQ(rep.max_deviation, expect.back());
  EXPECT_DOUBLE_EQ(rep.table[rep.worst_row].deviation, rep.max_deviation);
}

TEST(FactorizationStatistic, IndependentNormalsStayBelowThreshold) {
  int below_003 = 0;
  const int runs = 20;
  for (int seed = 0; seed < runs; ++seed) {
    auto p = normals(100 + static_cast<std::uint64_t>(seed), 100000);
    auto rep = factorization_statistic(p.u, p.du, kSplit);
    EXPECT_LE(rep.max_deviation, 0.05) << "seed " << seed;
    EXPECT_EQ(rep.verdict, Verdict::separable);
    below_003 += rep.max_deviation < 0.03;
  }
  // Roughly 90% of null runs at this size fall under 0.03.
  EXPECT_GE(below_003, 15);
}

TEST(FactorizationStatistic, NullDeviationShrinksLikeInverseRootN) {
  double small = 0.0, large = 0.0;
  const int runs = 20;
  for (int seed = 0; seed < runs; ++seed) {
    auto a = normals(500 + static_cast<std::uint64_t>(seed), 10000);
    auto b = normals(900 + static_cast<std::uint64_t>(seed), 100000);
    small += factorization_statistic(a.u, a.du, kSplit).max_deviation;
    large += factorization_statistic(b.u, b.du, kSplit).max_deviation;
  }
  const double ratio = large / small;  // 1/sqrt(10) ~ 0.316
  EXPECT_GE(ratio, 0.2);
  EXPECT_LE(ratio, 0.5);
}

TEST(FactorizationStatistic, QuadraticDependenceIsDetected) {
  std::mt19937_64 rng(3);
  const Eigen::Index n = 200000;
  Matrix u = oracle::normal_matrix(rng, n, 2);
  u.col(1) = u.col(0).array().square() - 1.0;
  const Matrix du = oracle::normal_matrix(rng, n, 2);
  auto rep = factorization_statistic(u, du, kSplit);
  EXPECT_EQ(rep.verdict, Verdict::inseparable);
  // Standardized u2 = (u1^2 - 1)/sqrt(2): E[u1^2 u2] = 2/sqrt(2) and E[u1^2 u2^2] = 5 against 1.
  const MomentRow* r = find_row(rep, "u1^2*u2");
  ASSERT_NE(r, nullptr);
  EXPECT_NEAR(r->deviation, std::sqrt(2.0), 0.05);
  const MomentRow* q = find_row(rep, "u1^2*u2^2");
  ASSERT_NE(q, nullptr);
  EXPECT_NEAR(q->deviation, 2.0, 0.15);
  EXPECT_EQ(rep.max_deviation, std::max(rep.max_deviation, q->deviation));
}

TEST(FactorizationStatistic, AffineReparametrizationInvariantProperty) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> scale(0.1, 50.0), shift(-100.0, 100.0);
  std::bernoulli_distribution flip(0.5);
  Matrix u = oracle::normal_matrix(rng, 20000, 2);
  Matrix du = oracle::normal_matrix(rng, 20000, 2);
  u.col(1) += 0.2 * u.col(0).array().square().matrix();
  const double ref = factorization_statistic(u, du, kSplit).max_deviation;
  for (int trial = 0; trial < 10; ++trial) {
    Matrix u2 = u, du2 = du;
    for (int c = 0; c < 2; ++c) {
      const double a = scale(rng) * (flip(rng) ? -1.0 : 1.0);
      u2.col(c) = (a * u.col(c)).array() + shift(rng);
      du2.col(c) = a * du.col(c);
    }
    EXPECT_NEAR(factorization_statistic(u2, du2, kSplit).max_deviation, ref, 1e-9);
  }
}

TEST(FactorizationStatistic, GroupOrderDoesNotMatter) {
  std::mt19937_64 rng(5);
  Matrix u = oracle::normal_matrix(rng, 15000, 2);
  const Matrix du = oracle::normal_matrix(rng, 15000, 2);
  u.col(0) += 0.5 * u.col(1).array().abs().matrix();
  const double a = factorization_statistic(u, du, Partition{{0}, {1}}).max_deviation;
  const double b = factorization_statistic(u, du, Partition{{1}, {0}}).max_deviation;
  EXPECT_NEAR(a, b, 1e-12);
  // Swapping the columns together with the groups gives the same table.
  Matrix us(u.rows(), 2), dus(u.rows(), 2);
  us << u.col(1), u.col(0);
  dus << du.col(1), du.col(0);
  EXPECT_NEAR(factorization_statistic(us, dus, kSplit).max_deviation, a, 1e-12);
}

TEST(FactorizationStatistic, ThreeComponentBlocks) {
  // Bounded coordinates keep the high-order rows quiet.
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  const Eigen::Index n = 50000;
  Matrix u(n, 3), du(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    u.row(i) << unif(rng), unif(rng), 0.0;
    du.row(i) << unif(rng), unif(rng), unif(rng);
  }
  u.col(2) = u.col(1).array().square();  // {2,3} dependent, 1 independent
  EXPECT_EQ(factorization_statistic(u, du, Partition{{0}, {1, 2}}).verdict, Verdict::separable);
  EXPECT_EQ(factorization_statistic(u, du, Partition{{0, 1}, {2}}).verdict, Verdict::inseparable);
}

TEST(FactorizationStatistic, RawMixtureIsInseparable) {
  SourceOptions so;
  const Matrix x = mix(gen_sources(so));
  auto w = pca_whiten(SignalSeries(so.sample_rate, x));
  Trajectory tr = estimate_velocity(w.states);
  auto rep = factorization_statistic(tr.states(), tr.velocities(), kSplit);
  EXPECT_EQ(rep.verdict, Verdict::inseparable);
  EXPECT_GT(rep.max_deviation, 0.05);
}

TEST(FactorizationStatistic, WritesOneCsvRowPerMoment) {
  auto p = normals(7, 10000);
  auto rep = factorization_statistic(p.u, p.du, kSplit);
  const auto path = std::filesystem::temp_directory_path() / ("velobss_rep_" + std::to_string(::getpid()) + ".csv");
  write_report_csv(path, rep);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "moment,joint,product,deviation");
  std::size_t rows = 0;
  while (std::getline(in, line)) rows += !line.empty();
  EXPECT_EQ(rows, rep.table.size());
  std::filesystem::remove(path);
}

TEST(FactorizationStatistic, Errors) {
  auto p = normals(8, 10000);
  EXPECT_THROW(factorization_statistic(p.u, p.du.topRows(9999), kSplit), ShapeError);
  EXPECT_THROW(factorization_statistic(p.u, p.du, Partition{{0}, {1, 2}}), ShapeError);
  EXPECT_THROW(factorization_statistic(p.u.topRows(9999), p.du.topRows(9999), kSplit), InsufficientDataError);
  EXPECT_THROW(factorization_statistic(p.u, p.du, kSplit, 1), DomainError);
  Matrix flat = p.u;
  flat.col(1).setConstant(3.0);
  EXPECT_THROW(factorization_statistic(flat, p.du, kSplit), DegeneracyError);
}

TEST(Separate, IndependentSourcesAreRecoveredAsIs) {
  SourceOptions so;
  const Matrix s = gen_sources(so);
  Trajectory tr = estimate_velocity(SignalSeries(so.sample_rate, s));
  SeparationResult res = separate(tr);
  ASSERT_TRUE(res.best);
  EXPECT_EQ(res.verdict, Verdict::separable);
  EXPECT_FALSE(res.incomplete);
  const USeries& us = *res.outcomes[*res.best].series;
  Matrix truth(static_cast<Eigen::Index>(us.indices.size()), 2);
  for (std::size_t k = 0; k < us.indices.size(); ++k) truth.row(static_cast<Eigen::Index>(k)) = s.row(static_cast<Eigen::Index>(us.indices[k]) + 1);
  const RecoveryScore sc = evaluate_recovery(us.u, truth);
  EXPECT_GE(sc.matched.minCoeff(), 0.99);
  EXPECT_EQ(res.passing().size(), 1u);
}

TEST(Separate, RejectsOneDimensionalInput) {
  Trajectory tr(Vector::LinSpaced(5, 0, 4), Matrix::Random(5, 1), Matrix::Random(5, 1));
  EXPECT_THROW(separate(tr), ShapeError);
}
