#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace velobss;

namespace {

// The mixing written out by hand.
Eigen::Vector2d mixed(double s1, double s2) {
  return {0.763 * s1 + std::pow(958.0 - 0.0225 * s2, 1.5),
          0.153 * s2 + std::sqrt(3.75e7 - 763.0 * s1 - 229.0 * s2)};
}

double lattice_value(int i, int r) { return -32768.0 + 65536.0 * i / (r - 1); }

}  // namespace

TEST(Mix, OriginMapsToClosedForm) {
  Matrix s = Matrix::Zero(1, 2);
  const Matrix x = mix(s);
  EXPECT_NEAR(x(0, 0), 29651.6, 0.05);  // 958^1.5
  EXPECT_NEAR(x(0, 1), 6123.72, 0.005);  // sqrt(3.75e7)
}

TEST(Mix, MatchesHandWrittenFormula) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-32768.0, 32768.0);
  Matrix s(500, 2);
  for (Eigen::Index i = 0; i < s.rows(); ++i) s.row(i) << u(rng), u(rng);
  const Matrix x = mix(s);
  for (Eigen::Index i = 0; i < s.rows(); ++i)
    EXPECT_LT((x.row(i).transpose() - mixed(s(i, 0), s(i, 1))).cwiseAbs().maxCoeff(), 1e-9 * x.row(i).norm());
}

TEST(MixingSpec, RadicandsStayPositiveAtTheCorners) {
  const auto [r1, r2] = MixingSpec{}.min_radicands();
  EXPECT_NEAR(r1, 220.72, 1e-9);     // 958 - 0.0225 * 2^15
  EXPECT_NEAR(r2, 4994144.0, 1e-6);  // 3.75e7 - (763 + 229) * 2^15
}

TEST(MixingSpec, DeterminantFoldsNearTheRightEdge) {
  // det J = a1 a2 - a1 d2 g2 - c1 c2 g1 g2 with g1 = 1.5 sqrt(r1), g2 = 0.5 / sqrt(r2).
  auto det = [](double s1, double s2) {
    const double g1 = 1.5 * std::sqrt(958.0 - 0.0225 * s2), g2 = 0.5 / std::sqrt(3.75e7 - 763.0 * s1 - 229.0 * s2);
    return 0.763 * (0.153 - 229.0 * g2) - 0.0225 * g1 * 763.0 * g2;
  };
  EXPECT_GT(det(0.0, 0.0), 0.0);
  EXPECT_LT(det(32768.0, -32768.0), 0.0);
  EXPECT_NEAR(MixingSpec{}.jacobian(32768.0, -32768.0).determinant(), det(32768.0, -32768.0), 1e-12);
  EXPECT_THROW(MixingSpec{}.validate(), DomainError);
  // Sources at the default peak stay on the orientation-preserving side.
  EXPECT_NO_THROW(MixingSpec{}.validate(SourceOptions{}.peak));
  EXPECT_NO_THROW(MixingSpec{}.validate(22000.0));
}

TEST(MixingSpec, JacobianMatchesFiniteDifferences) {
  const MixingSpec spec;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-30000.0, 30000.0);
  for (int k = 0; k < 50; ++k) {
    const double s1 = u(rng), s2 = u(rng), h = 1e-2;
    Eigen::Matrix2d fd;
    fd.col(0) = (mixed(s1 + h, s2) - mixed(s1 - h, s2)) / (2 * h);
    fd.col(1) = (mixed(s1, s2 + h) - mixed(s1, s2 - h)) / (2 * h);
    EXPECT_LT((spec.jacobian(s1, s2) - fd).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(MixingSpec, InjectiveOnLatticeAndNewtonInverts) {
  const MixingSpec spec;
  const int r = 64;
  std::vector<Eigen::Vector2d> images;
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < r; ++j) images.push_back(mixed(lattice_value(i, r), lattice_value(j, r)));
  double closest = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < images.size(); ++a)
    for (std::size_t b = a + 1; b < images.size(); ++b) closest = std::min(closest, (images[a] - images[b]).norm());
  EXPECT_GT(closest, 1e-6);

  // Newton from the origin inverts the map wherever the determinant keeps its sign.
  const double extent = 16384.0;
  double worst = 0.0;
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < r; ++j) {
      const Eigen::Vector2d s(extent * (2.0 * i / (r - 1) - 1.0), extent * (2.0 * j / (r - 1) - 1.0));
      worst = std::max(worst, (oracle::unmix(spec, mixed(s(0), s(1))) - s).cwiseAbs().maxCoeff() / extent);
    }
  EXPECT_LT(worst, 1e-6);
}

TEST(MixingSpec, BrokenSpecsAreRejected) {
  MixingSpec neg;
  neg.b1 = 500.0;  // radicand 1 goes negative at s2 = 2^15
  EXPECT_THROW(neg.validate(1000.0), DomainError);
  EXPECT_THROW(MixingSpec{}.validate(40000.0), DomainError);
  MixingSpec fold;
  fold.a1 = 0.0;
  fold.c1 = 0.0;  // first output constant: determinant zero
  EXPECT_THROW(fold.validate(1000.0), DomainError);
}

TEST(Mix, OutOfRangeSampleIsNamed) {
  Matrix s = Matrix::Zero(5, 2);
  s(3, 1) = 40000.0;
  try {
    mix(s);
    FAIL();
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("sample 3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(mix(Matrix::Zero(4, 3)), ShapeError);
}

TEST(GenSources, DeterministicGivenSeed) {
  SourceOptions a;
  a.samples = 20000;
  const Matrix s1 = gen_sources(a), s2 = gen_sources(a);
  EXPECT_EQ(s1, s2);
  a.seed = 8;
  EXPECT_NE(gen_sources(a), s1);
}

TEST(GenSources, PeakAndIndependence) {
  SourceOptions so;
  so.samples = 100000;
  const Matrix s = gen_sources(so);
  ASSERT_EQ(s.rows(), 100000);
  ASSERT_EQ(s.cols(), 2);
  for (int c = 0; c < 2; ++c) EXPECT_NEAR(s.col(c).cwiseAbs().maxCoeff(), so.peak, 1e-6 * so.peak);
  EXPECT_LE(s.cwiseAbs().maxCoeff(), 32768.0);
  EXPECT_LE(std::abs(spearman(s.col(0), s.col(1))), 0.02);
}

TEST(GenSources, OptionValidation) {
  SourceOptions so;
  so.samples = 9999;
  EXPECT_THROW(gen_sources(so), DomainError);
  so.samples = 20000;
  so.peak = 40000.0;
  EXPECT_THROW(gen_sources(so), DomainError);
  so.peak = 1000.0;
  so.kind = SourceKind::wav;
  EXPECT_THROW(gen_sources(so), DomainError);
  EXPECT_THROW(parse_source_kind("pink"), DomainError);
  EXPECT_EQ(parse_source_kind("bandnoise"), SourceKind::bandnoise);
}

TEST(CoupleSources, SharesTheDrivingChannel) {
  SourceOptions so;
  so.samples = 50000;
  const Matrix s = gen_sources(so);
  const Matrix c = couple_sources(s, 0.1);
  EXPECT_GT(spearman(c.col(0), c.col(1)), 0.9);
  EXPECT_NEAR(c.col(1).cwiseAbs().maxCoeff(), 0.5 * 32768.0, 1e-6);
}

TEST(Ranks, TiesShareAverageRank) {
  Vector v(6);
  v << 3.0, 1.0, 3.0, 2.0, 3.0, -1.0;
  Vector expect(6);
  expect << 5.0, 2.0, 5.0, 3.0, 5.0, 1.0;
  EXPECT_EQ(ranks(v), expect);
}

TEST(EvaluateRecovery, IdentityAndSwappedPairing) {
  std::mt19937_64 rng(3);
  const Matrix s = oracle::normal_matrix(rng, 5000, 2);
  RecoveryScore id = evaluate_recovery(s, s);
  EXPECT_EQ(id.pairing, (std::vector<int>{0, 1}));
  EXPECT_DOUBLE_EQ(id.matched.minCoeff(), 1.0);
  Matrix swapped(5000, 2);
  swapped << -s.col(1), s.col(0);
  RecoveryScore sw = evaluate_recovery(swapped, s);
  EXPECT_EQ(sw.pairing, (std::vector<int>{1, 0}));
  EXPECT_NEAR(sw.rho(0, 1), -1.0, 1e-12);
  EXPECT_LT(sw.cross_max, 0.05);
}

TEST(EvaluateRecovery, InvariantUnderMonotoneMapsProperty) {
  std::mt19937_64 rng(4);
  const Matrix s = oracle::normal_matrix(rng, 3000, 2);
  Matrix u = s;
  u.col(1) += 0.3 * s.col(0);
  const RecoveryScore ref = evaluate_recovery(u, s);
  Matrix w(u.rows(), 2);
  w.col(0) = u.col(0).array().exp();
  w.col(1) = u.col(1).array().cube() * 5.0 - 2.0;
  const RecoveryScore t = evaluate_recovery(w, s);
  EXPECT_LT((t.rho - ref.rho).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(evaluate_recovery(u, s.topRows(10)), ShapeError);
}
