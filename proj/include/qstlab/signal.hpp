#pragma once

#include "qstlab/random_states.hpp"

#include <numeric>

namespace qstlab {

/// Uniformly sampled real time series. `scale_a` is the record gain in
/// record units per unit expectation value; `noise_sigma` the per-sample
/// Gaussian noise level in record units.
struct MeasurementRecord {
  RVec samples;
  double dt_ms = 1e-3;
  double noise_sigma = 0.0;
  double scale_a = 1.0;

  void validate() const {
    if (!samples.allFinite()) throw Error(Errc::invalid_input, "record contains non-finite samples");
    if (noise_sigma < 0) throw Error(Errc::invalid_input, "noise sigma must be nonnegative");
  }
};

// ---------------------------------------------------------------------------
// IIR bandpass filter (analog Bessel prototype -> bandpass -> bilinear)
// ---------------------------------------------------------------------------

/// Second-order section y = b0 x + b1 x[-1] + b2 x[-2] - a1 y[-1] - a2 y[-2].
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;
};

/// Realized either as a biquad cascade (designed filters; numerically robust
/// for poles near the unit circle) or as a single direct-form recursion on
/// the flattened coefficients (externally supplied lab coefficients).
struct BandpassFilter {
  std::vector<Biquad> sections;  // empty when running from flattened b, a
  RVec b;                        // flattened feedforward (serialization)
  RVec a;                        // flattened feedback, a(0) = 1
  double sample_rate_hz = 1e6;
  double low_hz = 2e3;
  double high_hz = 40e3;
  int order = 4;  // analog prototype order; realized filter has 2*order poles

  Complex response(double freq_hz) const {
    Complex zi = std::exp(Complex(0, -2.0 * kPi * freq_hz / sample_rate_hz));  // z^-1
    if (!sections.empty()) {
      Complex h = 1.0;
      for (const auto& s : sections)
        h *= (s.b0 + s.b1 * zi + s.b2 * zi * zi) / (1.0 + s.a1 * zi + s.a2 * zi * zi);
      return h;
    }
    Complex num = 0, den = 0, zp = 1.0;
    for (int i = 0; i < std::max(b.size(), a.size()); ++i) {
      if (i < b.size()) num += b(i) * zp;
      if (i < a.size()) den += a(i) * zp;
      zp *= zi;
    }
    return num / den;
  }

  double group_delay_samples(double freq_hz) const {
    double dw = 1e-4;
    double w = 2.0 * kPi * freq_hz / sample_rate_hz;
    auto phase = [&](double ww) {
      return std::arg(response(ww * sample_rate_hz / (2.0 * kPi)));
    };
    double p1 = phase(w - dw), p2 = phase(w + dw);
    double dp = p2 - p1;
    while (dp > kPi) dp -= 2.0 * kPi;
    while (dp < -kPi) dp += 2.0 * kPi;
    return -dp / (2.0 * dw);
  }
};

namespace detail {

inline std::vector<Complex> polynomial_roots(const std::vector<double>& coeffs) {
  // coeffs: c0 + c1 x + ... + cn x^n, cn != 0; companion-matrix eigenvalues
  int n = int(coeffs.size()) - 1;
  Mat comp = Mat::Zero(n, n);
  for (int i = 1; i < n; ++i) comp(i, i - 1) = 1.0;
  for (int i = 0; i < n; ++i) comp(i, n - 1) = -coeffs[size_t(i)] / coeffs[size_t(n)];
  Eigen::ComplexEigenSolver<Mat> es(comp);
  std::vector<Complex> roots(static_cast<size_t>(n), Complex{});
  for (int i = 0; i < n; ++i) roots[size_t(i)] = es.eigenvalues()(i);
  return roots;
}

inline std::vector<Complex> poly_from_roots(const std::vector<Complex>& roots) {
  std::vector<Complex> p{1.0};
  for (Complex r : roots) {
    std::vector<Complex> q(p.size() + 1, 0.0);
    for (size_t i = 0; i < p.size(); ++i) {
      q[i] += p[i];        // x * p
      q[i + 1] -= r * p[i];  // -r * p
    }
    p = std::move(q);
  }
  return p;  // descending powers: p[0] x^n + ... + p[n]
}

}  // namespace detail

/// Analog Bessel lowpass prototype (delay-normalized reverse Bessel
/// polynomial), lowpass-to-bandpass transform, bilinear transform with
/// prewarping at the band edges. DC and Nyquist gains are structurally zero.
inline BandpassFilter design_bessel_bandpass(double low_hz = 2e3, double high_hz = 40e3,
                                             double sample_rate_hz = 1e6, int order = 4) {
  if (!(0 < low_hz && low_hz < high_hz && high_hz < sample_rate_hz / 2))
    throw Error(Errc::invalid_input, "band edges must satisfy 0 < low < high < Nyquist");
  // reverse Bessel polynomial theta_n, delay-normalized: a_k = (2n-k)!/(2^(n-k) k! (n-k)!)
  std::vector<double> theta(size_t(order) + 1);
  for (int k = 0; k <= order; ++k) {
    double v = double(detail::lfact(2 * order - k) /
                      (powl(2.0L, order - k) * detail::lfact(k) * detail::lfact(order - k)));
    theta[size_t(k)] = v;
  }
  std::vector<Complex> lp_poles = detail::polynomial_roots(theta);
  double gain = theta[0];  // H_lp(s) = theta(0) / theta(s)

  // prewarp band edges, then lowpass -> bandpass in the s-domain
  double fs2 = 2.0 * sample_rate_hz;
  double w1 = fs2 * std::tan(kPi * low_hz / sample_rate_hz);
  double w2 = fs2 * std::tan(kPi * high_hz / sample_rate_hz);
  double w0 = std::sqrt(w1 * w2), bw = w2 - w1;
  std::vector<Complex> bp_poles;
  for (Complex p : lp_poles) {
    Complex half = 0.5 * p * bw;
    Complex disc = std::sqrt(half * half - w0 * w0);
    bp_poles.push_back(half + disc);
    bp_poles.push_back(half - disc);
  }
  std::vector<Complex> bp_zeros(size_t(order), 0.0);  // order zeros at s=0
  double k_bp = gain * std::pow(bw, order);

  // bilinear transform; the (2*order - order) zeros at infinity map to z=-1
  std::vector<Complex> zd, pd;
  Complex num_prod = 1.0, den_prod = 1.0;
  for (Complex z : bp_zeros) {
    zd.push_back((fs2 + z) / (fs2 - z));
    num_prod *= (fs2 - z);
  }
  for (Complex p : bp_poles) {
    pd.push_back((fs2 + p) / (fs2 - p));
    den_prod *= (fs2 - p);
  }
  for (size_t i = bp_zeros.size(); i < bp_poles.size(); ++i) zd.push_back(-1.0);
  double k_d = k_bp * (num_prod / den_prod).real();

  auto bpoly = detail::poly_from_roots(zd);
  auto apoly = detail::poly_from_roots(pd);
  BandpassFilter f;
  f.sample_rate_hz = sample_rate_hz;
  f.low_hz = low_hz;
  f.high_hz = high_hz;
  f.order = order;
  f.b.resize(Eigen::Index(bpoly.size()));
  f.a.resize(Eigen::Index(apoly.size()));
  for (size_t i = 0; i < bpoly.size(); ++i) f.b(Eigen::Index(i)) = k_d * bpoly[i].real();
  for (size_t i = 0; i < apoly.size(); ++i) f.a(Eigen::Index(i)) = apoly[i].real();

  // stability is structural here, but assert it anyway
  for (Complex p : pd)
    if (std::abs(p) >= 1.0)
      throw Error(Errc::unstable_filter, "designed filter has pole on or outside the unit circle");

  // realize as a cascade of biquads: conjugate pole pairs, one (z-1)(z+1)
  // zero pair each, gain spread evenly; this keeps the recursion accurate
  // for the high-Q poles of a wide-ratio bandpass
  std::vector<Complex> upper;
  for (Complex p : pd)
    if (p.imag() > 0) upper.push_back(p);
  if (int(upper.size()) != order) throw Error(Errc::numerical_failure, "expected conjugate pole pairs");
  std::sort(upper.begin(), upper.end(), [](Complex a, Complex b) { return std::abs(a) < std::abs(b); });
  double section_gain = std::pow(std::abs(k_d), 1.0 / order);
  double sign = k_d < 0 ? -1.0 : 1.0;
  for (int i = 0; i < order; ++i) {
    Biquad s;
    double g = section_gain * (i == 0 ? sign : 1.0);
    s.b0 = g;
    s.b1 = 0;
    s.b2 = -g;  // zeros at z = +1 and z = -1
    s.a1 = -2.0 * upper[size_t(i)].real();
    s.a2 = std::norm(upper[size_t(i)]);
    f.sections.push_back(s);
  }
  return f;
}

/// Wrap externally supplied coefficients (e.g. lab pipeline), refusing
/// unstable feedback polynomials.
inline BandpassFilter filter_from_coefficients(RVec b, RVec a, double sample_rate_hz) {
  if (a.size() < 1 || std::abs(a(0)) < 1e-300)
    throw Error(Errc::invalid_input, "feedback polynomial must have a leading coefficient");
  b /= a(0);
  a /= a(0);
  std::vector<double> arev(a.data(), a.data() + a.size());
  std::reverse(arev.begin(), arev.end());  // ascending powers of z for root finding
  if (a.size() > 1) {
    auto poles = detail::polynomial_roots(arev);
    for (Complex p : poles)
      if (std::abs(p) >= 1.0) throw Error(Errc::unstable_filter, "filter poles must lie inside the unit circle");
  }
  BandpassFilter f;
  f.b = std::move(b);
  f.a = std::move(a);
  f.sample_rate_hz = sample_rate_hz;
  return f;
}

/// Causal recursion with zero initial state; length preserving. Designed
/// filters run the biquad cascade, coefficient-loaded filters the flat
/// direct form.
namespace detail {

template <typename Scalar>
struct promote_scalar {
  using type = long double;
};
template <typename T>
struct promote_scalar<std::complex<T>> {
  using type = std::complex<long double>;
};

}  // namespace detail

template <typename Scalar>
inline Eigen::Matrix<Scalar, Eigen::Dynamic, 1> apply_filter(
    const BandpassFilter& f, const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& x) {
  // extended-precision state: the near-unit-circle poles amplify recursion
  // roundoff by the section Q, which would break the 1e-12 linearity
  // contract in plain double
  using Wide = typename detail::promote_scalar<Scalar>::type;
  const auto n = x.size();
  if (!f.sections.empty()) {
    std::vector<Wide> y(static_cast<size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) y[size_t(i)] = Wide(x(i));
    for (const auto& s : f.sections) {
      const long double b0 = s.b0, b1 = s.b1, b2 = s.b2, a1 = s.a1, a2 = s.a2;
      Wide x1{}, x2{}, y1{}, y2{};
      for (Eigen::Index i = 0; i < n; ++i) {
        Wide xin = y[size_t(i)];
        Wide out = b0 * xin + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
        x2 = x1;
        x1 = xin;
        y2 = y1;
        y1 = out;
        y[size_t(i)] = out;
      }
    }
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(n);
    for (Eigen::Index i = 0; i < n; ++i) out(i) = Scalar(y[size_t(i)]);
    return out;
  }
  std::vector<Wide> y(static_cast<size_t>(n));
  const auto nb = f.b.size(), na = f.a.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    Wide acc{};
    for (Eigen::Index k = 0; k < nb; ++k)
      if (i - k >= 0) acc += static_cast<long double>(f.b(k)) * Wide(x(i - k));
    for (Eigen::Index k = 1; k < na; ++k)
      if (i - k >= 0) acc -= static_cast<long double>(f.a(k)) * y[size_t(i - k)];
    y[size_t(i)] = acc;
  }
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(n);
  for (Eigen::Index i = 0; i < n; ++i) out(i) = Scalar(y[size_t(i)]);
  return out;
}

inline MeasurementRecord apply_filter(const BandpassFilter& f, const MeasurementRecord& r) {
  MeasurementRecord out = r;
  out.samples = apply_filter<double>(f, r.samples);
  return out;
}

/// Filters every row of a d^2 x T complex array (each operator component)
/// with the identical causal recursion.
inline Mat apply_filter_rows(const BandpassFilter& f, const Mat& history) {
  Mat out(history.rows(), history.cols());
  for (Eigen::Index r = 0; r < history.rows(); ++r) {
    CVec row = history.row(r).transpose();
    out.row(r) = apply_filter<Complex>(f, row).transpose();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Record synthesis and SNR
// ---------------------------------------------------------------------------

/// Noiseless expectation series a * Tr(O_i rho0) from a vectorized operator
/// history (columns = vec_r(O_i)).
inline RVec expectation_series(const Mat& history, const DensityMatrix& rho0, double scale_a = 1.0) {
  if (history.rows() != Eigen::Index(rho0.dim) * rho0.dim)
    throw Error(Errc::dimension_mismatch, "history dimension does not match state");
  CVec rv = vectorize(rho0.entries);
  RVec out(history.cols());
  for (Eigen::Index i = 0; i < history.cols(); ++i)
    out(i) = scale_a * (rv.adjoint() * history.col(i))(0).real();
  return out;
}

/// M_i = a Tr(O_i rho0) + sigma N(0,1), independent Gaussians per sample.
inline MeasurementRecord synthesize_record(const Mat& history, const DensityMatrix& rho0,
                                           double sigma, double scale_a, SamplerSeed seed,
                                           double dt_ms = 1e-3) {
  MeasurementRecord rec;
  rec.samples = expectation_series(history, rho0, scale_a);
  rec.dt_ms = dt_ms;
  rec.noise_sigma = sigma;
  rec.scale_a = scale_a;
  if (sigma > 0) {
    Rng rng(seed);
    for (Eigen::Index i = 0; i < rec.samples.size(); ++i) rec.samples(i) += sigma * rng.gaussian();
  }
  return rec;
}

/// Mean-square of the (noiseless) signal divided by sigma^2.
inline double snr(const MeasurementRecord& noiseless, double sigma) {
  if (sigma <= 0) throw Error(Errc::invalid_input, "snr needs sigma > 0");
  if (noiseless.samples.size() == 0) return 0.0;
  return noiseless.samples.squaredNorm() / double(noiseless.samples.size()) / (sigma * sigma);
}

}  // namespace qstlab
