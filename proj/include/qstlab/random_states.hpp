#pragma once

#include "qstlab/operators.hpp"

#include <random>

namespace qstlab {

struct SamplerSeed {
  std::uint64_t seed = 0;
};

/// Deterministic random stream: a fixed 64-bit engine with an explicit
/// Box-Muller Gaussian so the produced doubles do not depend on the standard
/// library's distribution implementations.
class Rng {
 public:
  explicit Rng(SamplerSeed s) : engine_(s.seed) {}
  explicit Rng(std::uint64_t s) : engine_(s) {}

  /// uniform in [0, 1)
  double uniform() { return double(engine_() >> 11) * 0x1.0p-53; }

  /// uniform in (lo, hi]
  double uniform_open_closed(double lo, double hi) {
    return hi - (hi - lo) * uniform();
  }

  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * kPi * u2);
    have_spare_ = true;
    return r * std::cos(2.0 * kPi * u2);
  }

  Complex complex_gaussian() { return {gaussian(), gaussian()}; }

  std::uint64_t raw() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// i.i.d. standard complex Gaussian entries.
inline Mat ginibre(int d, Rng& rng) {
  Mat a(d, d);
  for (int j = 0; j < d; ++j)
    for (int i = 0; i < d; ++i) a(i, j) = rng.complex_gaussian();
  return a;
}

/// Ginibre matrix orthonormalized column-by-column (Gram-Schmidt).
inline UnitaryMatrix haar_unitary(int d, SamplerSeed seed) {
  if (d < 1) throw Error(Errc::invalid_dimension, "haar_unitary needs d >= 1");
  Rng rng(seed);
  Mat a = ginibre(d, rng);
  Mat u = Mat::Zero(d, d);
  for (int j = 0; j < d; ++j) {
    CVec v = a.col(j);
    for (int k = 0; k < j; ++k) v -= u.col(k) * (u.col(k).adjoint() * v)(0);
    u.col(j) = v / v.norm();
  }
  return UnitaryMatrix(std::move(u));
}

/// Normalized Ginibre column: |v><v|.
inline DensityMatrix haar_pure_state(int d, SamplerSeed seed) {
  if (d < 1) throw Error(Errc::invalid_dimension, "haar_pure_state needs d >= 1");
  Rng rng(seed);
  CVec v(d);
  for (int i = 0; i < d; ++i) v(i) = rng.complex_gaussian();
  v /= v.norm();
  return DensityMatrix(v * v.adjoint());
}

/// A A^dag / Tr(A A^dag) with A Ginibre (Hilbert-Schmidt measure).
inline DensityMatrix hs_mixed_state(int d, SamplerSeed seed) {
  Rng rng(seed);
  Mat a = ginibre(d, rng);
  Mat rho = a * a.adjoint();
  rho /= rho.trace();
  return DensityMatrix(std::move(rho));
}

/// (I+U) A A^dag (I+U^dag) normalized, A Ginibre, U Haar (Bures measure).
inline DensityMatrix bures_mixed_state(int d, SamplerSeed seed) {
  Rng rng(seed);
  Mat a = ginibre(d, rng);
  // Haar unitary drawn from the same stream so one seed fixes the state.
  Mat g = ginibre(d, rng);
  Mat u = Mat::Zero(d, d);
  for (int j = 0; j < d; ++j) {
    CVec v = g.col(j);
    for (int k = 0; k < j; ++k) v -= u.col(k) * (u.col(k).adjoint() * v)(0);
    u.col(j) = v / v.norm();
  }
  Mat m = (Mat::Identity(d, d) + u) * a;
  Mat rho = m * m.adjoint();
  rho /= rho.trace();
  return DensityMatrix(std::move(rho));
}

/// r uniform-[0,1] eigenvalues normalized to unit sum, conjugated by a Haar
/// unitary; rank exactly r almost surely.
inline DensityMatrix fixed_rank_state(int d, int r, SamplerSeed seed) {
  if (r < 1 || r > d) throw Error(Errc::invalid_rank, "rank must satisfy 1 <= r <= d");
  Rng rng(seed);
  RVec lam(r);
  for (int i = 0; i < r; ++i) lam(i) = rng.uniform();
  lam /= lam.sum();
  Mat diag = Mat::Zero(d, d);
  for (int i = 0; i < r; ++i) diag(i, i) = lam(i);
  Mat g = ginibre(d, rng);
  Mat u = Mat::Zero(d, d);
  for (int j = 0; j < d; ++j) {
    CVec v = g.col(j);
    for (int k = 0; k < j; ++k) v -= u.col(k) * (u.col(k).adjoint() * v)(0);
    u.col(j) = v / v.norm();
  }
  Mat rho = u * diag * u.adjoint();
  rho /= rho.trace();  // exact renormalization against roundoff
  return DensityMatrix(std::move(rho));
}

namespace detail {

/// One attempt of the backward eigenvalue recurrence. Returns eigenvalues on
/// success; nullopt signals a rejected draw (complex root or negative value),
/// mirroring the throw-away behavior of the reference construction.
inline std::optional<RVec> fixed_purity_spectrum(double p, int r, Rng& rng) {
  RVec lam = RVec::Zero(r);
  if (r == 2) {
    double disc = 2.0 * p - 1.0;
    if (disc < 0) return std::nullopt;
    lam(0) = 0.5 * (1.0 + std::sqrt(disc));
    lam(1) = 1.0 - lam(0);
    return lam;
  }
  for (int k = r - 1; k >= 1; --k) {
    double s1 = 0, s2 = 0;
    for (int j = k + 1; j <= r - 1; ++j) {
      s1 += lam(j - 1);
      s2 += lam(j - 1) * lam(j - 1);
    }
    double a = -(k + 1.0);
    double b = 2.0 * (1.0 - s1);
    double c = k * (p - s2) - (1.0 - s1) * (1.0 - s1);
    double a2 = -2.0;
    double c2 = (p - s2) - (1.0 - s1) * (1.0 - s1);
    double disc = b * b - 4.0 * a * c;
    if (disc < 0) return std::nullopt;
    double root_h = (-b - std::sqrt(disc)) / (2.0 * a);
    double disc2 = b * b - 4.0 * a2 * c2;
    if (k == 1) {
      lam(0) = root_h;
    } else if (disc2 >= 0) {
      double root_l = (-b - std::sqrt(disc2)) / (2.0 * a2);
      lam(k - 1) = root_l + (root_h - root_l) * rng.uniform();
    } else {
      double remaining = 1.0 - lam.sum();
      if (remaining > root_h)
        lam(k - 1) = root_h * rng.uniform();
      else
        lam(k - 1) = remaining * rng.uniform();
    }
  }
  lam(r - 1) = 1.0 - lam.head(r - 1).sum();
  if ((lam.array() < 0).any()) return std::nullopt;
  if (std::abs(lam.squaredNorm() - p) > 1e-9) return std::nullopt;
  return lam;
}

}  // namespace detail

/// Fixed-purity state via the backward recurrence over eigenvalues with the
/// consecutive-pair constraint; rejected draws are resampled up to the cap.
inline DensityMatrix fixed_purity_state(int d, double p, int r, SamplerSeed seed,
                                        int max_retries = 100000) {
  if (r < 1 || r > d) throw Error(Errc::invalid_rank, "rank must satisfy 1 <= r <= d");
  if (p < 1.0 / r - 1e-12 || p > 1.0 + 1e-12)
    throw Error(Errc::infeasible_target, "purity must satisfy 1/r <= p <= 1");
  Rng rng(seed);
  if (r == 1) {
    if (std::abs(p - 1.0) > 1e-9) throw Error(Errc::infeasible_target, "rank-1 state must have purity 1");
    Mat g = ginibre(d, rng);
    CVec v = g.col(0) / g.col(0).norm();
    return DensityMatrix(v * v.adjoint());
  }
  for (int attempt = 0; attempt < max_retries; ++attempt) {
    auto lam = detail::fixed_purity_spectrum(p, r, rng);
    if (!lam) continue;
    Mat diag = Mat::Zero(d, d);
    for (int i = 0; i < r; ++i) diag(i, i) = (*lam)(i);
    Mat g = ginibre(d, rng);
    Mat u = Mat::Zero(d, d);
    for (int j = 0; j < d; ++j) {
      CVec v = g.col(j);
      for (int k = 0; k < j; ++k) v -= u.col(k) * (u.col(k).adjoint() * v)(0);
      u.col(j) = v / v.norm();
    }
    Mat rho = u * diag * u.adjoint();
    rho /= rho.trace();
    return DensityMatrix(std::move(rho));
  }
  throw Error(Errc::infeasible_target, "fixed-purity sampler exhausted retry cap");
}

}  // namespace qstlab
