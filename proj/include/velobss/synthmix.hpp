#pragma once

#include "velobss/core.hpp"
#include "velobss/io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace velobss {

/// Two-channel nonlinear mixing
///   mu_1 = a1 s1 + (b1 - c1 s2)^p1
///   mu_2 = a2 s2 + (b2 - c2 s1 - d2 s2)^p2
/// defined for |s_k| <= bound.
struct MixingSpec {
  double a1 = 0.763, b1 = 958.0, c1 = 0.0225, p1 = 1.5;
  double a2 = 0.153, b2 = 3.75e7, c2 = 763.0, d2 = 229.0, p2 = 0.5;
  double bound = 32768.0;

  double radicand1(double, double s2) const { return b1 - c1 * s2; }
  double radicand2(double s1, double s2) const { return b2 - c2 * s1 - d2 * s2; }

  Eigen::Vector2d apply(double s1, double s2) const {
    return {a1 * s1 + std::pow(radicand1(s1, s2), p1), a2 * s2 + std::pow(radicand2(s1, s2), p2)};
  }

  Eigen::Matrix2d jacobian(double s1, double s2) const {
    const double g1 = p1 * std::pow(radicand1(s1, s2), p1 - 1.0);
    const double g2 = p2 * std::pow(radicand2(s1, s2), p2 - 1.0);
    Eigen::Matrix2d j;
    j << a1, -c1 * g1, -c2 * g2, a2 - d2 * g2;
    return j;
  }

  /// Smallest radicands over the square domain (both are affine, so a corner).
  std::pair<double, double> min_radicands() const {
    double r1 = std::numeric_limits<double>::infinity(), r2 = r1;
    for (double s1 : {-bound, bound})
      for (double s2 : {-bound, bound}) {
        r1 = std::min(r1, radicand1(s1, s2));
        r2 = std::min(r2, radicand2(s1, s2));
      }
    return {r1, r2};
  }

  /// Radicands positive on the domain and the Jacobian determinant of one
  /// sign on a grid x grid lattice over [-extent, extent]^2. The default
  /// coefficients fold near s1 = +22400 (the determinant changes sign there),
  /// so the full square fails; sources scaled to |s| <= 2^14 stay clear of it.
  void validate(double extent, int grid = 64) const {
    const auto [r1, r2] = min_radicands();
    if (!(r1 > 0.0) || !(r2 > 0.0)) throw DomainError("MixingSpec: radicand not positive on the domain");
    if (!(extent > 0.0) || extent > bound) throw DomainError("MixingSpec: extent outside (0, bound]");
    int sign = 0;
    for (int i = 0; i < grid; ++i)
      for (int j = 0; j < grid; ++j) {
        const double s1 = -extent + 2.0 * extent * i / (grid - 1);
        const double s2 = -extent + 2.0 * extent * j / (grid - 1);
        const double det = jacobian(s1, s2).determinant();
        const int sg = det > 0 ? 1 : (det < 0 ? -1 : 0);
        if (sg == 0 || (sign != 0 && sg != sign))
          throw DomainError("MixingSpec: Jacobian determinant vanishes or changes sign on the domain");
        sign = sg;
      }
  }
  void validate() const { validate(bound); }
};

/// Pointwise mixture of a T x 2 source matrix.
inline Matrix mix(const Matrix& sources, const MixingSpec& spec = {}) {
  if (sources.cols() != 2) throw ShapeError("mix: expected 2 source channels");
  Matrix out(sources.rows(), 2);
  for (Eigen::Index i = 0; i < sources.rows(); ++i) {
    const double s1 = sources(i, 0), s2 = sources(i, 1);
    if (!(std::abs(s1) <= spec.bound) || !(std::abs(s2) <= spec.bound))
      throw DomainError("mix: sample " + std::to_string(i) + " outside [-bound, bound]");
    out.row(i) = spec.apply(s1, s2).transpose();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sources

enum class SourceKind { ar2, bandnoise, wav };

inline SourceKind parse_source_kind(const std::string& s) {
  if (s == "ar2") return SourceKind::ar2;
  if (s == "bandnoise") return SourceKind::bandnoise;
  if (s == "wav") return SourceKind::wav;
  throw DomainError("unknown source kind '" + s + "'");
}

/// Innovation law driving a resonator. Gaussian innovations give locally
/// Gaussian velocities; bursty innovations (Gaussian noise under a slowly
/// varying log-normal envelope) give heavy-tailed, speech-like velocities.
enum class Innovation { gaussian, bursty, voiced };

struct ChannelSpec {
  double resonance = 0.05;  // fraction of the sample rate
  Innovation innovation = Innovation::gaussian;
};

struct SourceOptions {
  SourceKind kind = SourceKind::ar2;
  std::size_t samples = 200000;
  std::uint64_t seed = 7;
  double sample_rate = 16000.0;
  double pole_radius = 0.97;
  std::vector<ChannelSpec> channels{{0.05, Innovation::gaussian}, {0.11, Innovation::bursty}};
  double burst_depth = 0.6;          // std of the log-envelope
  double burst_timescale = 400.0;    // envelope correlation time, samples
  double voicing = 1.0;              // periodic drive amplitude relative to the noise
  double jitter = 0.02;              // phase random-walk step, radians
  double voice_timescale = 1000.0;   // amplitude envelope correlation time, samples
  double voice_floor = 0.15;         // smallest envelope value (envelope is uniform on [floor, 1])
  double peak = 0.5 * 32768.0;       // target max |s|
  std::size_t burn_in = 4000;
  std::vector<std::filesystem::path> wav_paths;
};

namespace detail {

struct Voicing {
  double resonance = 0.0;
  double gain = 0.0;
  double jitter = 0.0;
  double timescale = 1000.0;
  double floor = 0.15;
};

inline std::vector<double> innovations(std::mt19937_64& rng, std::size_t n, Innovation law, double depth,
                                       double timescale, const Voicing& voice = {}) {
  std::normal_distribution<double> normal;
  std::vector<double> e(n);
  for (auto& v : e) v = normal(rng);
  if (law == Innovation::bursty) {
    const double a = 1.0 - 1.0 / timescale;
    const double drive = std::sqrt(1.0 - a * a);
    double env = normal(rng);
    for (auto& v : e) {
      env = a * env + drive * normal(rng);
      v *= std::exp(depth * env);
    }
  }
  if (law == Innovation::voiced) {
    std::uniform_real_distribution<double> uni(0.0, 2.0 * std::numbers::pi);
    double phase = uni(rng);
    const double w = 2.0 * std::numbers::pi * voice.resonance;
    const double a = 1.0 - 1.0 / voice.timescale;
    const double drive = std::sqrt(1.0 - a * a);
    double env = normal(rng);
    for (auto& v : e) {
      env = a * env + drive * normal(rng);
      const double level = voice.floor + (1.0 - voice.floor) * 0.5 * std::erfc(-env / std::numbers::sqrt2);
      phase += w + voice.jitter * normal(rng);
      v += voice.gain * level * std::cos(phase);
    }
  }
  return e;
}

// Two-pole resonator x_t = 2 r cos(w) x_{t-1} - r^2 x_{t-2} + e_t.
inline std::vector<double> resonate(const std::vector<double>& e, double resonance, double radius) {
  const double a1 = 2.0 * radius * std::cos(2.0 * std::numbers::pi * resonance);
  const double a2 = -radius * radius;
  std::vector<double> x(e.size());
  double x1 = 0.0, x2 = 0.0;
  for (std::size_t t = 0; t < e.size(); ++t) {
    x[t] = a1 * x1 + a2 * x2 + e[t];
    x2 = x1;
    x1 = x[t];
  }
  return x;
}

inline void scale_to_peak(Matrix& s, double peak) {
  for (Eigen::Index c = 0; c < s.cols(); ++c) {
    const double m = s.col(c).cwiseAbs().maxCoeff();
    if (m > 0.0) s.col(c) *= peak / m;
  }
}

}  // namespace detail

/// Independent source channels, deterministic given the seed.
///   ar2:       one two-pole resonator per channel (resonance, pole radius)
///   bandnoise: two cascaded resonators per channel (sharper band)
///   wav:       one mono 16-bit file per channel
/// Each channel is scaled so that max |s| equals opts.peak (<= 2^15).
inline Matrix gen_sources(const SourceOptions& opts) {
  if (opts.kind == SourceKind::wav) {
    if (opts.wav_paths.size() != 2) throw DomainError("gen_sources: wav kind needs exactly 2 files");
    Matrix s = load_wav(std::span<const std::filesystem::path>(opts.wav_paths)).data();
    if (s.rows() < 10000) throw DomainError("gen_sources: need at least 10^4 samples");
    return s;
  }
  if (opts.samples < 10000) throw DomainError("gen_sources: T must be >= 10^4");
  if (!(opts.peak > 0.0) || opts.peak > 32768.0) throw DomainError("gen_sources: peak outside (0, 2^15]");
  const std::size_t n = opts.samples + opts.burn_in;
  Matrix s(static_cast<Eigen::Index>(opts.samples), static_cast<Eigen::Index>(opts.channels.size()));
  for (std::size_t c = 0; c < opts.channels.size(); ++c) {
    std::seed_seq seq{static_cast<std::uint32_t>(opts.seed), static_cast<std::uint32_t>(opts.seed >> 32),
                      static_cast<std::uint32_t>(c), 0x5eedu};
    std::mt19937_64 rng(seq);
    const auto& ch = opts.channels[c];
    auto x = detail::resonate(detail::innovations(rng, n, ch.innovation, opts.burst_depth, opts.burst_timescale,
                                                                  {ch.resonance, opts.voicing, opts.jitter,
                                                                   opts.voice_timescale, opts.voice_floor}),
                              ch.resonance, opts.pole_radius);
    if (opts.kind == SourceKind::bandnoise) x = detail::resonate(x, ch.resonance, opts.pole_radius);
    for (std::size_t t = 0; t < opts.samples; ++t)
      s(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c)) = x[t + opts.burn_in];
  }
  detail::scale_to_peak(s, opts.peak);
  return s;
}

/// Replaces channel 1 by channel 0 plus `strength` times channel 1 (rescaled to
/// channel 0's standard deviation), then rescales to `peak`. The result shares a
/// driving source and cannot be separated.
inline Matrix couple_sources(const Matrix& s, double strength, double peak = 0.5 * 32768.0) {
  if (s.cols() != 2) throw ShapeError("couple_sources: expected 2 channels");
  auto stdev = [](const Eigen::Ref<const Vector>& c) { return std::sqrt((c.array() - c.mean()).square().mean()); };
  Matrix out = s;
  out.col(1) = s.col(0) + strength * (stdev(s.col(0)) / stdev(s.col(1))) * s.col(1);
  detail::scale_to_peak(out, peak);
  return out;
}

// ---------------------------------------------------------------------------
// Recovery scoring

/// Ranks 1..n with ties sharing their average rank.
inline Vector ranks(const Eigen::Ref<const Vector>& v) {
  const auto n = static_cast<std::size_t>(v.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return v(static_cast<Eigen::Index>(a)) < v(static_cast<Eigen::Index>(b));
  });
  Vector r(v.size());
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && v(static_cast<Eigen::Index>(order[j + 1])) == v(static_cast<Eigen::Index>(order[i]))) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r(static_cast<Eigen::Index>(order[k])) = avg;
    i = j + 1;
  }
  return r;
}

inline double pearson(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
  const Vector x = a.array() - a.mean();
  const Vector y = b.array() - b.mean();
  const double den = std::sqrt(x.squaredNorm() * y.squaredNorm());
  return den > 0.0 ? x.dot(y) / den : 0.0;
}

inline double spearman(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
  if (a.size() != b.size()) throw ShapeError("spearman: length mismatch");
  return pearson(ranks(a), ranks(b));
}

struct RecoveryScore {
  Matrix rho;                 // rho(i, j) = Spearman(u_i, s_j)
  std::vector<int> pairing;   // u_i <-> s_{pairing[i]}
  Vector matched;             // |rho| of each matched pair
  double cross_max = 0.0;     // largest |rho| among unmatched pairs
};

/// Spearman matrix between recovered and true components and the bijection
/// maximizing the summed matched |rho| (exhaustive over N!).
inline RecoveryScore evaluate_recovery(const Matrix& u, const Matrix& s) {
  if (u.rows() != s.rows() || u.cols() != s.cols()) throw ShapeError("evaluate_recovery: shape mismatch");
  const auto n = static_cast<int>(u.cols());
  if (n > 8) throw DomainError("evaluate_recovery: too many components for exhaustive matching");
  std::vector<Vector> ru, rs;
  for (int i = 0; i < n; ++i) {
    ru.push_back(ranks(u.col(i)));
    rs.push_back(ranks(s.col(i)));
  }
  RecoveryScore sc;
  sc.rho.resize(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) sc.rho(i, j) = pearson(ru[static_cast<std::size_t>(i)], rs[static_cast<std::size_t>(j)]);
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  double best = -1.0;
  do {
    double score = 0.0;
    for (int i = 0; i < n; ++i) score += std::abs(sc.rho(i, perm[static_cast<std::size_t>(i)]));
    if (score > best + 1e-15) {
      best = score;
      sc.pairing = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  sc.matched.resize(n);
  for (int i = 0; i < n; ++i) sc.matched(i) = std::abs(sc.rho(i, sc.pairing[static_cast<std::size_t>(i)]));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (j != sc.pairing[static_cast<std::size_t>(i)]) sc.cross_max = std::max(sc.cross_max, std::abs(sc.rho(i, j)));
  return sc;
}

}  // namespace velobss
