#pragma once

#include "qstlab/common.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <utility>

namespace qstlab {

// ---------------------------------------------------------------------------
// Validated operator value types
// ---------------------------------------------------------------------------

inline bool is_hermitian(const Mat& m, double rel_tol = 1e-12) {
  double scale = std::max(1.0, m.norm());
  return (m - m.adjoint()).norm() <= rel_tol * scale;
}

/// d x d complex matrix equal to its conjugate transpose.
struct HermitianOperator {
  int dim = 0;
  Mat entries;

  HermitianOperator() = default;
  explicit HermitianOperator(Mat m, const Tolerances& tol = {}) : dim(int(m.rows())), entries(std::move(m)) {
    if (entries.rows() != entries.cols() || dim < 1)
      throw Error(Errc::invalid_shape, "Hermitian operator must be square");
    if (!is_hermitian(entries, tol.hermiticity))
      throw Error(Errc::invalid_state, "matrix is not Hermitian within tolerance");
    entries = 0.5 * (entries + entries.adjoint().eval());
  }
};

/// Hermitian, unit-trace, numerically PSD matrix. Eigenvalues in
/// [-psd_floor, 0) are treated as zero; anything more negative is an error.
struct DensityMatrix {
  int dim = 0;
  Mat entries;

  DensityMatrix() = default;
  explicit DensityMatrix(Mat m, const Tolerances& tol = {}) : dim(int(m.rows())), entries(std::move(m)) {
    if (entries.rows() != entries.cols() || dim < 1)
      throw Error(Errc::invalid_shape, "density matrix must be square");
    if (!is_hermitian(entries, 1e-9))
      throw Error(Errc::invalid_state, "density matrix is not Hermitian");
    entries = 0.5 * (entries + entries.adjoint().eval());
    if (std::abs(entries.trace().real() - 1.0) > tol.trace || std::abs(entries.trace().imag()) > tol.trace)
      throw Error(Errc::invalid_state, "density matrix trace differs from 1");
    Eigen::SelfAdjointEigenSolver<Mat> es(entries, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -tol.psd_floor)
      throw Error(Errc::invalid_state, "density matrix has negative eigenvalue beyond tolerance");
  }

  static DensityMatrix maximally_mixed(int d) {
    return DensityMatrix(Mat::Identity(d, d) / double(d));
  }
  static DensityMatrix pure(const CVec& psi) {
    CVec v = psi / psi.norm();
    return DensityMatrix(v * v.adjoint());
  }
};

struct UnitaryMatrix {
  int dim = 0;
  Mat entries;

  UnitaryMatrix() = default;
  explicit UnitaryMatrix(Mat m, const Tolerances& tol = {}) : dim(int(m.rows())), entries(std::move(m)) {
    if (entries.rows() != entries.cols() || dim < 1)
      throw Error(Errc::invalid_shape, "unitary must be square");
    if ((entries.adjoint() * entries - Mat::Identity(dim, dim)).norm() > tol.unitarity * std::sqrt(double(dim)))
      throw Error(Errc::invalid_state, "matrix is not unitary within tolerance");
  }
};

enum class Picture { schrodinger_generator, heisenberg_map };

/// d^2 x d^2 matrix acting on row-major vectorized operators.
struct SuperOperator {
  int dim = 0;  // operator side d; matrix is d^2 x d^2
  Mat entries;
  Picture picture = Picture::schrodinger_generator;

  SuperOperator() = default;
  SuperOperator(int d, Mat m, Picture p) : dim(d), entries(std::move(m)), picture(p) {
    if (entries.rows() != dim * dim || entries.cols() != dim * dim)
      throw Error(Errc::invalid_shape, "superoperator must be d^2 x d^2");
  }
};

// ---------------------------------------------------------------------------
// Vectorization (row-major; Heisenberg maps act by right-multiplication on
// row supervectors, equivalently their adjoints act on column supervectors)
// ---------------------------------------------------------------------------

inline CVec vectorize(const Mat& a) {
  const int r = int(a.rows()), c = int(a.cols());
  CVec v(r * c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) v(i * c + j) = a(i, j);
  return v;
}

inline Mat devectorize(const CVec& v) {
  const auto n = v.size();
  const int d = int(std::llround(std::sqrt(double(n))));
  if (std::int64_t(d) * d != n)
    throw Error(Errc::invalid_shape, "vector length is not a perfect square");
  Mat a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = v(i * d + j);
  return a;
}

inline Mat kron(const Mat& a, const Mat& b) {
  Mat out(a.rows() * b.rows(), a.cols() * b.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

/// vec_r(A X B) = (A (x) B^T) vec_r(X) in the row-major convention.
inline Mat sandwich_superop(const Mat& a, const Mat& b) { return kron(a, b.transpose()); }

/// vec_r([H, .]) building block: H X - X H.
inline Mat commutator_superop(const Mat& h) {
  const int d = int(h.rows());
  Mat id = Mat::Identity(d, d);
  return kron(h, id) - kron(id, h.transpose());
}

// ---------------------------------------------------------------------------
// Hermitian operator basis (generalized Gell-Mann construction)
// ---------------------------------------------------------------------------

/// Ordered orthonormal basis of su(d) (plus optional identity at index 0):
/// d(d-1)/2 symmetric pairs (lexicographic), then the antisymmetric pairs,
/// then the d-1 diagonal traceless elements. Tr(E_a E_b) = delta_ab.
struct OperatorBasis {
  int dim = 0;
  bool includes_identity = false;
  std::vector<Mat> elements;
  Mat vectorized;  // d^2 x n, column a = vec_r(E_a)

  int size() const { return int(elements.size()); }

  /// coefficients c_a = Tr(E_a A), real for Hermitian A.
  RVec project(const Mat& a) const {
    CVec va = vectorize(a);
    return (vectorized.adjoint() * va).real();
  }

  Mat assemble(const RVec& coeffs, const Mat& offset) const {
    if (coeffs.size() != size()) throw Error(Errc::dimension_mismatch, "coefficient count mismatch");
    CVec v = vectorized * coeffs.cast<Complex>();
    return offset + devectorize(v);
  }
};

inline OperatorBasis hermitian_basis(int d, bool include_identity = false) {
  if (d < 2) throw Error(Errc::invalid_dimension, "hermitian basis needs d >= 2");
  OperatorBasis basis;
  basis.dim = d;
  basis.includes_identity = include_identity;
  auto& els = basis.elements;
  if (include_identity) els.push_back(Mat::Identity(d, d) / std::sqrt(double(d)));
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  for (int j = 0; j < d; ++j)
    for (int k = j + 1; k < d; ++k) {
      Mat e = Mat::Zero(d, d);
      e(j, k) = inv_sqrt2;
      e(k, j) = inv_sqrt2;
      els.push_back(std::move(e));
    }
  for (int j = 0; j < d; ++j)
    for (int k = j + 1; k < d; ++k) {
      Mat e = Mat::Zero(d, d);
      e(j, k) = Complex(0, -inv_sqrt2);
      e(k, j) = Complex(0, inv_sqrt2);
      els.push_back(std::move(e));
    }
  for (int l = 1; l < d; ++l) {
    Mat e = Mat::Zero(d, d);
    double norm = 1.0 / std::sqrt(double(l) * (l + 1));
    for (int j = 0; j < l; ++j) e(j, j) = norm;
    e(l, l) = -double(l) * norm;
    els.push_back(std::move(e));
  }
  basis.vectorized.resize(d * d, int(els.size()));
  for (int a = 0; a < int(els.size()); ++a) basis.vectorized.col(a) = vectorize(els[a]);
  return basis;
}

// ---------------------------------------------------------------------------
// Angular momentum algebra
// ---------------------------------------------------------------------------

struct AngularMomentum {
  Mat fx, fy, fz;
  int dim = 0;
};

/// Spin-F operators in the standard basis ordered m = F..-F (descending).
inline AngularMomentum angular_momentum(double f) {
  double two_f = 2.0 * f;
  if (f < 0.5 || std::abs(two_f - std::round(two_f)) > 1e-12)
    throw Error(Errc::invalid_spin, "F must be a half-integer >= 1/2");
  const int d = int(std::lround(two_f)) + 1;
  Mat fz = Mat::Zero(d, d), fp = Mat::Zero(d, d);
  for (int i = 0; i < d; ++i) {
    double m = f - i;
    fz(i, i) = m;
    if (i > 0) fp(i - 1, i) = std::sqrt(f * (f + 1) - m * (m + 1));  // raises m -> m+1
  }
  AngularMomentum am;
  am.dim = d;
  am.fz = fz;
  am.fx = 0.5 * (fp + fp.adjoint().eval());
  am.fy = Complex(0, -0.5) * (fp - fp.adjoint().eval());
  return am;
}

namespace detail {

// Factorials as long double; arguments in this project stay far below the
// 1754! overflow limit of 80-bit floats.
inline long double lfact(int n) {
  static std::vector<long double> table = [] {
    std::vector<long double> t(201);
    t[0] = 1.0L;
    for (int i = 1; i <= 200; ++i) t[i] = t[i - 1] * i;
    return t;
  }();
  if (n < 0) throw Error(Errc::invalid_input, "factorial of negative number");
  return table.at(size_t(n));
}

inline bool half_integer(double x) {
  return std::abs(2.0 * x - std::round(2.0 * x)) < 1e-9;
}

inline int twice(double x) { return int(std::lround(2.0 * x)); }

// triangle rule on doubled arguments; also requires integer perimeter
inline bool triangle_ok(int ta, int tb, int tc) {
  if ((ta + tb + tc) % 2 != 0) return false;
  return ta + tb >= tc && tb + tc >= ta && tc + ta >= tb;
}

inline long double triangle_coeff(int ta, int tb, int tc) {
  auto f = [](int twice_val) { return lfact(twice_val / 2); };
  return sqrtl(f(ta + tb - tc) * f(ta - tb + tc) * f(-ta + tb + tc) / f(ta + tb + tc + 2));
}

}  // namespace detail

/// <j1 m1; j2 m2 | J M> in the Condon-Shortley convention (Racah sum).
/// Out-of-range or selection-rule-violating arguments return 0.
inline double clebsch_gordan(double j1, double j2, double J, double m1, double m2, double M) {
  using namespace detail;
  for (double x : {j1, j2, J, m1, m2, M})
    if (!half_integer(x)) throw Error(Errc::invalid_spin, "angular momentum arguments must be half-integers");
  if (std::abs(m1 + m2 - M) > 1e-9) return 0.0;
  int tj1 = twice(j1), tj2 = twice(j2), tJ = twice(J);
  int tm1 = twice(m1), tm2 = twice(m2), tM = twice(M);
  if (!triangle_ok(tj1, tj2, tJ)) return 0.0;
  if (std::abs(m1) > j1 + 1e-9 || std::abs(m2) > j2 + 1e-9 || std::abs(M) > J + 1e-9) return 0.0;
  if ((tj1 + tm1) % 2 != 0 || (tj2 + tm2) % 2 != 0 || (tJ + tM) % 2 != 0) return 0.0;

  auto h = [](int t) { return lfact(t / 2); };  // t = doubled, must be even and >= 0
  long double pref = sqrtl((tJ + 1.0L) * h(tj1 + tj2 - tJ) * h(tj1 - tj2 + tJ) * h(-tj1 + tj2 + tJ) /
                           h(tj1 + tj2 + tJ + 2));
  pref *= sqrtl(h(tj1 + tm1) * h(tj1 - tm1) * h(tj2 + tm2) * h(tj2 - tm2) * h(tJ + tM) * h(tJ - tM));

  // summation limits: all factorial arguments nonnegative
  int k_min = std::max({0, (tj2 - tJ - tm1) / 2, (tj1 - tJ + tm2) / 2});
  int k_max = std::min({(tj1 + tj2 - tJ) / 2, (tj1 - tm1) / 2, (tj2 + tm2) / 2});
  long double sum = 0.0L;
  for (int k = k_min; k <= k_max; ++k) {
    long double term = 1.0L /
        (lfact(k) * h(tj1 + tj2 - tJ - 2 * k) * h(tj1 - tm1 - 2 * k) * h(tj2 + tm2 - 2 * k) *
         h(tJ - tj2 + tm1 + 2 * k) * h(tJ - tj1 - tm2 + 2 * k));
    sum += (k % 2 == 0 ? term : -term);
  }
  return double(pref * sum);
}

/// Wigner 6j symbol {j1 j2 j3; j4 j5 j6} via the Racah sum formula.
/// Triads violating the triangle rules return 0.
inline double wigner6j(double j1, double j2, double j3, double j4, double j5, double j6) {
  using namespace detail;
  for (double x : {j1, j2, j3, j4, j5, j6})
    if (!half_integer(x)) throw Error(Errc::invalid_spin, "angular momentum arguments must be half-integers");
  int t1 = twice(j1), t2 = twice(j2), t3 = twice(j3), t4 = twice(j4), t5 = twice(j5), t6 = twice(j6);
  if (!triangle_ok(t1, t2, t3) || !triangle_ok(t1, t5, t6) || !triangle_ok(t4, t2, t6) ||
      !triangle_ok(t4, t5, t3))
    return 0.0;
  long double pref = triangle_coeff(t1, t2, t3) * triangle_coeff(t1, t5, t6) *
                     triangle_coeff(t4, t2, t6) * triangle_coeff(t4, t5, t3);
  int s123 = (t1 + t2 + t3) / 2, s156 = (t1 + t5 + t6) / 2;
  int s426 = (t4 + t2 + t6) / 2, s453 = (t4 + t5 + t3) / 2;
  int p1245 = (t1 + t2 + t4 + t5) / 2, p1346 = (t1 + t3 + t4 + t6) / 2, p2356 = (t2 + t3 + t5 + t6) / 2;
  int t_min = std::max({s123, s156, s426, s453});
  int t_max = std::min({p1245, p1346, p2356});
  long double sum = 0.0L;
  for (int t = t_min; t <= t_max; ++t) {
    long double term = lfact(t + 1) /
        (lfact(t - s123) * lfact(t - s156) * lfact(t - s426) * lfact(t - s453) *
         lfact(p1245 - t) * lfact(p1346 - t) * lfact(p2356 - t));
    sum += (t % 2 == 0 ? term : -term);
  }
  return double(pref * sum);
}

// ---------------------------------------------------------------------------
// State metrics
// ---------------------------------------------------------------------------

/// Hermitian square root with negative eigenvalues clipped to zero.
inline Mat psd_sqrt(const Mat& a) {
  Eigen::SelfAdjointEigenSolver<Mat> es(a);
  RVec lam = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * lam.asDiagonal().toDenseMatrix().cast<Complex>() * es.eigenvectors().adjoint();
}

/// Squared-overlap convention: [Tr sqrt(sqrt(rho) sigma sqrt(rho))]^2.
inline double fidelity(const DensityMatrix& rho, const DensityMatrix& sigma) {
  if (rho.dim != sigma.dim) throw Error(Errc::dimension_mismatch, "fidelity needs equal dimensions");
  Mat sr = psd_sqrt(rho.entries);
  Mat inner = sr * sigma.entries * sr;
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (inner + inner.adjoint().eval()), Eigen::EigenvaluesOnly);
  double tr = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  return std::clamp(tr * tr, 0.0, 1.0);
}

inline double purity(const DensityMatrix& rho) {
  return (rho.entries * rho.entries).trace().real();
}

/// Scaling-and-squaring Pade exponential (Eigen's implementation).
inline Mat matrix_exponential(const Mat& a) {
  if (!a.allFinite()) throw Error(Errc::invalid_input, "matrix exponential of non-finite matrix");
  return a.exp();
}

/// exp(-i angle H) for Hermitian H via eigendecomposition.
inline Mat hermitian_rotation(const Mat& h, double angle) {
  Eigen::SelfAdjointEigenSolver<Mat> es(h);
  CVec phases(h.rows());
  for (int i = 0; i < h.rows(); ++i) phases(i) = std::exp(Complex(0, -angle * es.eigenvalues()(i)));
  return es.eigenvectors() * phases.asDiagonal() * es.eigenvectors().adjoint();
}

}  // namespace qstlab
