#pragma once

#include "qstlab/operators.hpp"

#include <array>

namespace qstlab {

// ---------------------------------------------------------------------------
// Constants and parameter blocks. Internal units: frequencies in kHz and time
// in ms inside dynamics; the optical quantities (linewidth, detunings, probe
// Rabi frequency) are carried in MHz and converted where they enter the
// generator. All frequencies are ordinary (non-angular); 2pi enters once in
// the Lindblad generator.
// ---------------------------------------------------------------------------

struct AtomicConstants {
  double nuclear_spin = 3.5;                  // I, cesium-133
  double hyperfine_splitting_mhz = 9.19e3;    // omega_HF / 2pi
  double linewidth_mhz = 4.561;               // Gamma / 2pi, D1 line
  double excited_splitting_mhz = 1167.6;      // 6P_1/2 F'=3..4 splitting
  double saturation_intensity = 0.8352;       // mW/cm^2, unit oscillator strength
  double g_e = 2.0023193043622;
  double g_i = -0.00039885395;

  double multiplicity() const { return 2.0 * nuclear_spin + 1.0; }  // 2I+1
  double g_plus() const { return (g_e + 2.0 * nuclear_spin * g_i) / multiplicity(); }
  double g_minus() const {
    return (-g_e + 2.0 * (nuclear_spin + 1.0) * g_i) / multiplicity();
  }
  double g_ratio() const { return std::abs(g_minus() / g_plus()); }

  void validate() const {
    if (nuclear_spin != 3.5) throw Error(Errc::invalid_input, "model is built for I = 7/2");
    if (hyperfine_splitting_mhz <= 0 || linewidth_mhz <= 0 || excited_splitting_mhz <= 0 ||
        saturation_intensity <= 0)
      throw Error(Errc::invalid_input, "atomic constants must be positive");
    if (std::abs(g_ratio() - 1.0032) > 1e-4)
      throw Error(Errc::invalid_input, "g-factor ratio far from the cesium value");
  }
};

struct ProbeParams {
  double detuning_mhz = 437.8;  // Delta_c for (6S_1/2)F=3 -> (6P_1/2)F'=3
  double intensity = 0.98;      // mW/cm^2
  Eigen::Vector3d polarization{1.0, 0.0, 0.0};  // linear x

  double rabi_mhz(const AtomicConstants& c) const {
    return c.linewidth_mhz * std::sqrt(intensity / (2.0 * c.saturation_intensity));
  }
  double gamma_sc_mhz(const AtomicConstants& c) const {
    double om = rabi_mhz(c);
    return om * om * c.linewidth_mhz / (4.0 * detuning_mhz * detuning_mhz);
  }
  void validate(const AtomicConstants& c) const {
    if (intensity <= 0) throw Error(Errc::invalid_input, "probe intensity must be positive");
    if (gamma_sc_mhz(c) <= 0) throw Error(Errc::invalid_input, "scattering rate must be positive");
    if (std::abs(polarization.norm() - 1.0) > 1e-9)
      throw Error(Errc::invalid_input, "polarization must be a unit vector");
  }
};

struct FieldParams {
  double omega0_khz = 1000.0;    // bias Larmor frequency Omega_0
  double omega_x_khz = 9.0;      // RF Larmor amplitudes
  double omega_y_khz = 9.0;
  double omega_uw_khz = 27.5;    // microwave Rabi frequency (stretched pair)
  double omega_rf_khz = 1000.0;  // RF drive frequency
  double delta_uw_khz = 0.0;     // microwave detuning from the stretched resonance

  double delta_rf_khz() const { return omega_rf_khz - omega0_khz; }

  /// quadratic Zeeman shift alpha = x^2 omega_HF / (2I+1)^2, derived
  double quadratic_shift_khz(const AtomicConstants& c) const {
    double x = zeeman_x(c);
    return x * x * c.hyperfine_splitting_mhz * 1e3 / (c.multiplicity() * c.multiplicity());
  }
  /// x = (g_e - g_I) mu_B B_0 / omega_HF with mu_B B_0 = Omega_0 / g_+
  double zeeman_x(const AtomicConstants& c) const {
    return (c.g_e - c.g_i) * omega0_khz / (c.g_plus() * c.hyperfine_splitting_mhz * 1e3);
  }
  void validate() const {
    if (omega0_khz <= 0) throw Error(Errc::invalid_input, "bias Larmor frequency must be positive");
  }
};

// ---------------------------------------------------------------------------
// 16-dimensional hyperfine indexing: F=4 block first (m = 4..-4), then the
// F=3 block (m = 3..-3). All cesium operators use this layout.
// ---------------------------------------------------------------------------

struct HyperfineIndexing {
  static constexpr int dim = 16;
  static int index(int f, int m) {
    if (f == 4 && m <= 4 && m >= -4) return 4 - m;
    if (f == 3 && m <= 3 && m >= -3) return 9 + (3 - m);
    throw Error(Errc::invalid_input, "no such ground level");
  }
};

/// Block-embedded spin operators and projectors for the ground manifold.
struct GroundOperators {
  Mat fx4, fy4, fz4;  // embedded 16x16, support on the F=4 block
  Mat fx3, fy3, fz3;  // support on the F=3 block
  Mat p4, p3;         // projectors
  Mat frame_fz;       // F_z^(4) - F_z^(3) as block matrix (RF frame generator)

  static const GroundOperators& instance() {
    static GroundOperators g = [] {
      GroundOperators g;
      auto a4 = angular_momentum(4.0), a3 = angular_momentum(3.0);
      auto embed = [&](const Mat& block, int offset) {
        Mat m = Mat::Zero(16, 16);
        m.block(offset, offset, block.rows(), block.cols()) = block;
        return m;
      };
      g.fx4 = embed(a4.fx, 0);
      g.fy4 = embed(a4.fy, 0);
      g.fz4 = embed(a4.fz, 0);
      g.fx3 = embed(a3.fx, 9);
      g.fy3 = embed(a3.fy, 9);
      g.fz3 = embed(a3.fz, 9);
      g.p4 = embed(Mat::Identity(9, 9), 0);
      g.p3 = embed(Mat::Identity(7, 7), 9);
      g.frame_fz = g.fz4 - g.fz3;
      return g;
    }();
    return g;
  }
};

// ---------------------------------------------------------------------------
// Breit-Rabi energies
// ---------------------------------------------------------------------------

/// Ground-manifold energies for bias field B0 (given as mu_B B0 in kHz), in
/// HyperfineIndexing order. `second_order` selects the x^2 Taylor expansion
/// instead of the exact square root.
inline RVec breit_rabi_energies(double mu_b_b0_khz, const AtomicConstants& c,
                                bool second_order = false) {
  double whf = c.hyperfine_splitting_mhz * 1e3;  // kHz
  double x = (c.g_e - c.g_i) * mu_b_b0_khz / whf;
  double tim = c.multiplicity();  // 2I+1
  RVec e(16);
  for (int f : {4, 3}) {
    double sign = (f == 4) ? 1.0 : -1.0;
    for (int m = f; m >= -f; --m) {
      double lin = c.g_i * mu_b_b0_khz * m;
      double root;
      if (second_order)
        root = 1.0 + (2.0 * m / tim) * x + 0.5 * (1.0 - 4.0 * m * m / (tim * tim)) * x * x;
      else
        root = std::sqrt(1.0 + (4.0 * m / tim) * x + x * x);
      e(HyperfineIndexing::index(f, m)) = -whf / (2.0 * tim) + lin + sign * 0.5 * whf * root;
    }
  }
  return e;
}

// ---------------------------------------------------------------------------
// Static rotating-frame Hamiltonian (second-order Zeeman, RF + uw frame)
// ---------------------------------------------------------------------------

/// All four terms of the rotating-frame static Hamiltonian with m+ = 4,
/// m- = 3: manifold splitting with g_r and quadratic-shift corrections, the
/// RF detuning tilts, and the quadratic Zeeman term. kHz.
inline HermitianOperator static_hamiltonian_rotating(const FieldParams& f,
                                                     const AtomicConstants& c) {
  f.validate();
  c.validate();
  const auto& g = GroundOperators::instance();
  double gr = c.g_ratio();
  double alpha = f.quadratic_shift_khz(c);
  double drf = f.delta_rf_khz();
  Mat pdiff = g.p4 - g.p3;
  Mat h = (1.5 * f.omega0_khz * (1.0 - gr) + 12.5 * alpha + 0.5 * (7.0 * drf - f.delta_uw_khz)) * pdiff;
  h += -drf * g.fz4 + (drf + f.omega0_khz * (1.0 - gr)) * g.fz3;
  h += -alpha * (g.fz4 * g.fz4 - g.fz3 * g.fz3);
  return HermitianOperator(std::move(h));
}

// ---------------------------------------------------------------------------
// Dipole operators and polarizability coefficients (D1 line, J = J' = 1/2)
// ---------------------------------------------------------------------------

/// Spherical basis vectors e_q, q = -1, 0, +1 (columns).
inline Eigen::Matrix3cd spherical_basis() {
  Eigen::Matrix3cd e;
  double s = 1.0 / std::sqrt(2.0);
  e.col(0) << Complex(s, 0), Complex(0, -s), 0.0;   // e_{-1}
  e.col(1) << 0.0, 0.0, 1.0;                        // e_0
  e.col(2) << Complex(-s, 0), Complex(0, -s), 0.0;  // e_{+1}
  return e;
}

/// K_{JF}^{J'F'} reduced coupling factor.
inline double dipole_k_factor(int fprime, int f, const AtomicConstants& c) {
  double jp = 0.5, j = 0.5;
  double phase = std::pow(-1.0, fprime + c.nuclear_spin + jp + 1.0);
  return phase * std::sqrt((2.0 * jp + 1.0) * (2.0 * f + 1.0)) *
         wigner6j(fprime, c.nuclear_spin, jp, j, 1.0, f);
}

/// e_q . D+_{F'F}: dimensionless raising blocks from ground F to excited F',
/// element K * <F' m+q | F m; 1 q> at rows indexed like the ground manifold
/// (excited F'=4 block then F'=3 block).
struct DipoleSet {
  // dd[q+1][4-fp][4-f], each 16x16 (excited x ground)
  std::array<std::array<std::array<Mat, 2>, 2>, 3> dd;

  static int ex_index(int fp, int m) {
    if (fp == 4 && std::abs(m) <= 4) return 4 - m;
    if (fp == 3 && std::abs(m) <= 3) return 9 + (3 - m);
    throw Error(Errc::invalid_input, "no such excited level");
  }
};

inline DipoleSet dipole_operators(const AtomicConstants& c) {
  DipoleSet set;
  for (int q = -1; q <= 1; ++q)
    for (int fp : {4, 3})
      for (int f : {4, 3}) {
        Mat m = Mat::Zero(16, 16);
        double k = dipole_k_factor(fp, f, c);
        for (int mf = -f; mf <= f; ++mf) {
          if (std::abs(mf + q) > fp) continue;
          double cg = clebsch_gordan(f, 1.0, fp, mf, q, mf + q);
          m(DipoleSet::ex_index(fp, mf + q), HyperfineIndexing::index(f, mf)) += k * cg;
        }
        set.dd[size_t(q + 1)][size_t(4 - fp)][size_t(4 - f)] = std::move(m);
      }
  return set;
}

/// Detuning table Delta_{F'F} in MHz from the characteristic detuning
/// (F=3 -> F'=3): subtract the excited splitting for F'=4 lines, add the
/// ground splitting for F=4 lines.
inline double detuning_mhz(int fprime, int f, double delta_c_mhz, const AtomicConstants& c) {
  double d = delta_c_mhz;
  if (fprime == 4) d -= c.excited_splitting_mhz;
  if (f == 4) d += c.hyperfine_splitting_mhz;
  return d;
}

/// Irreducible rank-K tensor coefficients C^(K)_{F'F} and the complex
/// light-shift couplings beta_F^(K) for K = 0 and 2.
struct Polarizability {
  double c0[2][2], c1[2][2], c2[2][2];  // [4-fp][4-f]
  Complex beta0[2], beta2[2];           // [4-f]
  double delta[2][2];                   // detuning table, MHz

  double cK(int k, int fp, int f) const {
    switch (k) {
      case 0: return c0[4 - fp][4 - f];
      case 1: return c1[4 - fp][4 - f];
      case 2: return c2[4 - fp][4 - f];
    }
    throw Error(Errc::invalid_input, "rank must be 0, 1 or 2");
  }
};

inline Polarizability polarizability_coeffs(const AtomicConstants& c, double delta_c_mhz) {
  Polarizability p{};
  for (int fp : {4, 3})
    for (int f : {4, 3}) {
      double k2 = std::pow(dipole_k_factor(fp, f, c), 2);
      double fd = f;
      p.c0[4 - fp][4 - f] = std::pow(-1.0, 3 * f - fp + 1) * std::sqrt(1.0 / 3.0) * (2 * fp + 1) /
                            std::sqrt(2 * fd + 1) * wigner6j(f, 1, fp, 1, f, 0) * k2;
      p.c1[4 - fp][4 - f] = std::pow(-1.0, 3 * f - fp) * std::sqrt(1.5) * (2 * fp + 1) /
                            std::sqrt(fd * (fd + 1) * (2 * fd + 1)) * wigner6j(f, 1, fp, 1, f, 1) * k2;
      p.c2[4 - fp][4 - f] = std::pow(-1.0, 3 * f - fp) * std::sqrt(30.0) * (2 * fp + 1) /
                            std::sqrt(fd * (fd + 1) * (2 * fd + 1) * (2 * fd - 1) * (2 * fd + 3)) *
                            wigner6j(f, 1, fp, 1, f, 2) * k2;
      p.delta[4 - fp][4 - f] = detuning_mhz(fp, f, delta_c_mhz, c);
    }
  double gamma = c.linewidth_mhz;
  for (int f : {4, 3}) {
    Complex b0 = 0, b2 = 0;
    for (int fp : {4, 3}) {
      Complex line = (gamma / 2.0) / Complex(p.delta[4 - fp][4 - f], gamma / 2.0);
      b0 += p.c0[4 - fp][4 - f] * line;
      b2 += p.c2[4 - fp][4 - f] * line;
    }
    Complex pref = 2.0 * delta_c_mhz * delta_c_mhz / (gamma * gamma);
    p.beta0[4 - f] = pref * b0;
    p.beta2[4 - f] = pref * b2;
  }
  return p;
}

/// Re(beta_F^(0) + beta_F^(2) F(F+1)/6) in units of gamma_sc: the
/// state-independent light shift whose F=3 zero defines the magic detuning.
inline double state_independent_shift(const AtomicConstants& c, double delta_c_mhz, int f) {
  auto p = polarizability_coeffs(c, delta_c_mhz);
  double ff = f * (f + 1.0);
  return (p.beta0[4 - f] + p.beta2[4 - f] * ff / 6.0).real();
}

/// Bisection for the F=3 magic detuning; the shift is monotone-bracketed on
/// the default interval between the two excited lines.
inline double magic_detuning_mhz(const AtomicConstants& c, double lo_mhz = 350.0,
                                 double hi_mhz = 500.0) {
  double flo = state_independent_shift(c, lo_mhz, 3);
  double fhi = state_independent_shift(c, hi_mhz, 3);
  if (flo * fhi > 0) throw Error(Errc::numerical_failure, "magic detuning not bracketed");
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo_mhz + hi_mhz);
    double fm = state_independent_shift(c, mid, 3);
    if ((fm > 0) == (flo > 0)) {
      lo_mhz = mid;
      flo = fm;
    } else {
      hi_mhz = mid;
    }
  }
  return 0.5 * (lo_mhz + hi_mhz);
}

// ---------------------------------------------------------------------------
// Light-shift Hamiltonians
// ---------------------------------------------------------------------------

/// Pre-RWA effective light-shift Hamiltonian (lab frame, probe polarization
/// from ProbeParams), complex, in kHz:
///   (Omega/2)^2 sum_{F,F'} (eps*.D_{FF'})(D+_{F'F}.eps) / (Delta_{F'F} + i Gamma/2)
inline Mat light_shift_effective(const ProbeParams& probe, const AtomicConstants& c) {
  probe.validate(c);
  auto dip = dipole_operators(c);
  auto e = spherical_basis();
  // eps . D+ expanded over the spherical basis: sum_q (eps . e_q*) (e_q . D+)
  std::array<Complex, 3> coeff;
  for (int q = -1; q <= 1; ++q) {
    Complex dot = 0;
    for (int i = 0; i < 3; ++i) dot += probe.polarization(i) * std::conj(e(i, q + 1));
    coeff[size_t(q + 1)] = dot;
  }
  double gamma = c.linewidth_mhz;
  double om = probe.rabi_mhz(c);
  Mat h = Mat::Zero(16, 16);
  for (int fp : {4, 3})
    for (int f : {4, 3}) {
      Mat a = Mat::Zero(16, 16);
      for (int q = -1; q <= 1; ++q)
        a += coeff[size_t(q + 1)] * dip.dd[size_t(q + 1)][size_t(4 - fp)][size_t(4 - f)];
      Complex denom(detuning_mhz(fp, f, probe.detuning_mhz, c), gamma / 2.0);
      h += (1.0 / denom) * (a.adjoint() * a);
    }
  return 1e3 * (om / 2.0) * (om / 2.0) * h;  // MHz -> kHz
}

/// Closed-form RWA light shift for a linear-x probe, complex, kHz:
///   gamma_sc sum_F [ (beta0 + beta2 F(F+1)/6) I_F - (beta2/2) Fz^2 ]
inline Mat light_shift_hamiltonian_rwa(const ProbeParams& probe, const AtomicConstants& c) {
  probe.validate(c);
  const auto& g = GroundOperators::instance();
  auto p = polarizability_coeffs(c, probe.detuning_mhz);
  double gsc = probe.gamma_sc_mhz(c) * 1e3;  // kHz
  Mat h = Mat::Zero(16, 16);
  for (int f : {4, 3}) {
    const Mat& proj = (f == 4) ? g.p4 : g.p3;
    const Mat& fz = (f == 4) ? g.fz4 : g.fz3;
    double ff = f * (f + 1.0);
    h += (p.beta0[4 - f] + p.beta2[4 - f] * ff / 6.0) * proj;
    h -= (p.beta2[4 - f] / 2.0) * (fz * fz);
  }
  return gsc * h;
}

/// Trapezoid time average of U+(t) A U(t) over one period of the frame
/// exp(-i 2pi omega t Fz_frame). omega = 0 returns A unchanged.
inline Mat average_in_rotating_frame(const Mat& a, const Mat& fz_frame, double omega_khz,
                                     int n_nodes = 2000) {
  if (omega_khz == 0.0) return a;
  if (n_nodes < 16) throw Error(Errc::insufficient_resolution, "need at least 16 nodes");
  Eigen::SelfAdjointEigenSolver<Mat> es(fz_frame);
  const Mat& v = es.eigenvectors();
  RVec lam = es.eigenvalues();
  Mat acc = Mat::Zero(a.rows(), a.cols());
  double dt = 1.0 / (omega_khz * n_nodes);
  auto frame = [&](double t) {
    CVec ph(lam.size());
    for (int i = 0; i < lam.size(); ++i) ph(i) = std::exp(Complex(0, -2.0 * kPi * omega_khz * t * lam(i)));
    return Mat(v * ph.asDiagonal() * v.adjoint());
  };
  for (int j = 1; j <= n_nodes; ++j) {
    Mat u0 = frame((j - 1) * dt), u1 = frame(j * dt);
    acc += u0.adjoint() * a * u0 + u1.adjoint() * a * u1;
  }
  return acc * (dt / 2.0) * omega_khz;
}

// ---------------------------------------------------------------------------
// Optical pumping jump operators and the frame-averaged dissipator
// ---------------------------------------------------------------------------

struct JumpOperator {
  int q = 0, fa = 0, fb = 0;  // emission polarization, source and target manifold
  Mat w;                      // 16x16, dimensionless
};

/// W_q^{Fb Fa} = sum_{F'} (Omega/2)/(Delta_{F'Fa} + i Gamma/2)
///              (e_q*.D_{Fb F'}) (D+_{F'Fa}.eps)
inline std::vector<JumpOperator> jump_operators(const ProbeParams& probe,
                                                const AtomicConstants& c) {
  probe.validate(c);
  auto dip = dipole_operators(c);
  auto e = spherical_basis();
  std::array<Complex, 3> coeff;
  for (int q = -1; q <= 1; ++q) {
    Complex dot = 0;
    for (int i = 0; i < 3; ++i) dot += probe.polarization(i) * std::conj(e(i, q + 1));
    coeff[size_t(q + 1)] = dot;
  }
  double gamma = c.linewidth_mhz;
  double om = probe.rabi_mhz(c);
  std::vector<JumpOperator> jumps;
  for (int q = -1; q <= 1; ++q)
    for (int fa : {4, 3})
      for (int fb : {4, 3}) {
        Mat w = Mat::Zero(16, 16);
        for (int fp : {4, 3}) {
          Mat absorb = Mat::Zero(16, 16);
          for (int qq = -1; qq <= 1; ++qq)
            absorb += coeff[size_t(qq + 1)] * dip.dd[size_t(qq + 1)][size_t(4 - fp)][size_t(4 - fa)];
          const Mat& demit = dip.dd[size_t(q + 1)][size_t(4 - fp)][size_t(4 - fb)];
          Complex denom(detuning_mhz(fp, fa, probe.detuning_mhz, c), gamma / 2.0);
          w += ((om / 2.0) / denom) * (demit.adjoint() * absorb);
        }
        jumps.push_back({q, fa, fb, std::move(w)});
      }
  return jumps;
}

/// Optical pumping rate gamma_{Fa ma -> Fb mb} (dimensionless, units of
/// Gamma) summed over emission polarizations.
inline double pumping_rate(const std::vector<JumpOperator>& jumps, int fa, int ma, int fb, int mb) {
  double rate = 0;
  int ia = HyperfineIndexing::index(fa, ma), ib = HyperfineIndexing::index(fb, mb);
  for (const auto& j : jumps)
    if (j.fa == fa && j.fb == fb) rate += std::norm(j.w(ib, ia));
  return rate;
}

namespace detail {

/// Trapezoid average of exp(i 2pi n t / T) over one period with n_nodes
/// panels: by periodicity this equals the uniform n_nodes-point average,
/// whose geometric sum has a closed form. Exact for any real frequency
/// ratio n.
inline Complex trapezoid_phase_average(double n, int n_nodes) {
  Complex step = std::exp(Complex(0, 2.0 * kPi * n / n_nodes));
  if (std::abs(step - 1.0) < 1e-12) return 1.0;
  Complex full = std::exp(Complex(0, 2.0 * kPi * n));
  return (1.0 - full) / (double(n_nodes) * (1.0 - step));
}

/// Frame-averaged feeding superoperator over a diagonal frame generator:
/// the sandwich kron(W~ P, conj(W~) P) picks up the phase
/// (fz_i - fz_k) - (fz_j + ... ) per element, which the trapezoid average
/// turns into the closed-form factor above.
inline void add_averaged_feeding(Mat& feed, const Mat& wleft, const Mat& wright, const Mat& pleft,
                                 const Mat& pright, const RVec& fz, int n_nodes, bool average) {
  const int d = int(fz.size());
  for (int i = 0; i < d; ++i)
    for (int k = 0; k < d; ++k) {
      Complex left = wleft(i, k) * pleft(k, k);
      if (left == Complex(0, 0)) continue;
      for (int jj = 0; jj < d; ++jj)
        for (int l = 0; l < d; ++l) {
          Complex right = std::conj(wright(jj, l)) * pright(l, l);
          if (right == Complex(0, 0)) continue;
          Complex factor = 1.0;
          if (average) {
            double n = (fz(i) - fz(k)) - (fz(jj) - fz(l));
            factor = trapezoid_phase_average(n, n_nodes);
          }
          feed(i * d + jj, k * d + l) += left * right * factor;
        }
    }
}

inline Mat averaged_dissipator_impl(const std::vector<JumpOperator>& jumps, const Mat& p4,
                                    const Mat& p3, const RVec& fz, double gamma_khz,
                                    double omega_rf_khz, int n_nodes) {
  const int d = int(fz.size());
  const bool average = omega_rf_khz != 0.0;
  Mat feed = Mat::Zero(d * d, d * d);
  auto proj = [&](int f) -> const Mat& { return f == 4 ? p4 : p3; };
  for (const auto& j : jumps)
    add_averaged_feeding(feed, j.w, j.w, proj(j.fa), proj(j.fa), fz, n_nodes, average);
  for (int q = -1; q <= 1; ++q) {
    const Mat* w44 = nullptr;
    const Mat* w33 = nullptr;
    for (const auto& j : jumps) {
      if (j.q != q) continue;
      if (j.fa == 4 && j.fb == 4) w44 = &j.w;
      if (j.fa == 3 && j.fb == 3) w33 = &j.w;
    }
    if (!w44 || !w33) throw Error(Errc::invalid_input, "jump set missing manifold-diagonal blocks");
    add_averaged_feeding(feed, *w44, *w33, p4, p3, fz, n_nodes, average);
    add_averaged_feeding(feed, *w33, *w44, p3, p4, fz, n_nodes, average);
  }
  return gamma_khz * feed;
}

}  // namespace detail

/// Feeding part of the master equation, averaged over one RF period in the
/// rotating frame (trapezoid, n_nodes panels, evaluated in closed form per
/// element): population terms W P_F1 rho P_F1 W+ plus the inter-manifold
/// coherence-transfer terms W^{F2F2} rho^{F2F1} W^{F1F1+}. Includes the
/// Gamma prefactor (kHz). omega_rf = 0 skips the frame average.
inline Mat rotating_frame_dissipator(const std::vector<JumpOperator>& jumps,
                                     const AtomicConstants& c, double omega_rf_khz,
                                     int n_nodes = 2000) {
  if (n_nodes < 16) throw Error(Errc::insufficient_resolution, "need at least 16 averaging nodes");
  const auto& g = GroundOperators::instance();
  RVec fz = g.frame_fz.diagonal().real();
  return detail::averaged_dissipator_impl(jumps, g.p4, g.p3, fz, c.linewidth_mhz * 1e3,
                                          omega_rf_khz, n_nodes);
}

// ---------------------------------------------------------------------------
// Control Hamiltonians with second-order RWA corrections
// ---------------------------------------------------------------------------

/// RF control Hamiltonian, all terms of the second-order corrected form:
/// first-order rotations with the g-ratio asymmetry and Omega_0(1-g_r)/2w
/// corrections, the Delta_RF/2w cross terms, and the Bloch-Siegert-like
/// Fz terms of order Omega^2/16w. kHz.
inline HermitianOperator rf_hamiltonian(const FieldParams& f, double phix, double phiy,
                                        const AtomicConstants& c) {
  const auto& g = GroundOperators::instance();
  double gr = c.g_ratio();
  double w = f.omega_rf_khz;
  double drf = f.delta_rf_khz();
  double corr = f.omega0_khz * (1.0 - gr) / (2.0 * w);
  double ox = f.omega_x_khz, oy = f.omega_y_khz;

  Mat h = 0.5 * ox * (std::cos(phix) * (g.fx4 - gr * (1.0 - corr) * g.fx3) -
                      std::sin(phix) * (g.fy4 + gr * (1.0 + corr) * g.fy3));
  h += 0.5 * ox * (drf / (2.0 * w)) *
       (std::sin(phix) * g.fx4 - gr * std::cos(phix) * g.fx3 - std::cos(phix) * g.fy4 -
        gr * std::sin(phix) * g.fy3);
  h += 0.5 * oy * (std::cos(phiy) * (g.fy4 - gr * (1.0 - corr) * g.fy3) +
                   std::sin(phiy) * (g.fx4 + gr * (1.0 + corr) * g.fx3));
  h += 0.5 * oy * (drf / (2.0 * w)) *
       (std::cos(phiy) * g.fx4 + gr * std::sin(phiy) * g.fx3 + std::sin(phiy) * g.fy4 +
        gr * std::cos(phiy) * g.fy3);
  double bs = ox * ox * (1.0 - 2.0 * std::cos(2.0 * phix)) + oy * oy * (1.0 - 2.0 * std::cos(2.0 * phiy));
  double cross = 2.0 * ox * oy * std::sin(phix - phiy);
  h += (1.0 / (16.0 * w)) * (bs + cross) * g.fz4;
  h -= (gr * gr / (16.0 * w)) * (bs - cross) * g.fz3;
  return HermitianOperator(std::move(h));
}

namespace detail {

inline Mat two_level_op(int i33, int i44, Complex v33_44, Complex v44_33) {
  Mat m = Mat::Zero(16, 16);
  m(i33, i44) = v33_44;
  m(i44, i33) = v44_33;
  return m;
}

}  // namespace detail

/// Microwave control Hamiltonian: resonant sigma_x/sigma_y drive on the
/// stretched pair |3,3> <-> |4,4>, the AC-Zeeman ladder over m != 3, and the
/// detuning-dependent cross term on each off-resonant pair. kHz.
inline HermitianOperator uw_hamiltonian(const FieldParams& f, double phiuw,
                                        const AtomicConstants& c) {
  double gr = c.g_ratio();
  double alpha = f.quadratic_shift_khz(c);
  double ouw = f.omega_uw_khz;
  int i33 = HyperfineIndexing::index(3, 3), i44 = HyperfineIndexing::index(4, 4);
  Mat h = Mat::Zero(16, 16);
  // resonant stretched-pair drive; <4,4|3,3;1,1> = 1 and
  // cos(phi) sigma_x + sin(phi) sigma_y = e^{+i phi}|4,4><3,3| + h.c.
  h(i44, i33) += 0.5 * ouw * std::exp(Complex(0, phiuw));
  h(i33, i44) += 0.5 * ouw * std::exp(Complex(0, -phiuw));
  for (int m = -3; m <= 2; ++m) {
    double cg = clebsch_gordan(3, 1, 4, m, 1, m + 1);
    int a33 = HyperfineIndexing::index(3, m), a44 = HyperfineIndexing::index(4, m + 1);
    // sigma_z^(m) = |3,m><3,m| - |4,m+1><4,m+1|
    double acz = ouw * ouw / (8.0 * f.omega0_khz) * cg * cg / (3.0 - m);
    h(a33, a33) += acz;
    h(a44, a44) -= acz;
    // Delta_uw^(m) cross term
    double duw_m = 0.5 * f.delta_uw_khz - 0.5 * f.omega0_khz * (1.0 - gr) * (3.0 - m) -
                   (12.0 - m * m - m) * alpha - f.delta_rf_khz() * (3.0 - m);
    double amp = -(ouw / f.omega_rf_khz) * cg * duw_m / (4.0 * (m - 3.0));
    // cos sigma_x^(m) + sin sigma_y^(m) = e^{+i phi}|4,m+1><3,m| + h.c.
    h(a44, a33) += amp * std::exp(Complex(0, phiuw));
    h(a33, a44) += amp * std::exp(Complex(0, -phiuw));
  }
  return HermitianOperator(std::move(h));
}

// ---------------------------------------------------------------------------
// Measurement observables
// ---------------------------------------------------------------------------

/// Faraday rotation observable: w4 Fz^(4) + w3 Fz^(3) with manifold weights
/// sum_F' C^(1)_{F'F}/Delta_{F'F}, normalized so the F=3 block is exactly
/// Fz^(3). Traceless and diagonal.
inline HermitianOperator faraday_observable(const ProbeParams& probe, const AtomicConstants& c) {
  probe.validate(c);
  const auto& g = GroundOperators::instance();
  auto p = polarizability_coeffs(c, probe.detuning_mhz);
  double w4 = p.c1[0][0] / p.delta[0][0] + p.c1[1][0] / p.delta[1][0];
  double w3 = p.c1[0][1] / p.delta[0][1] + p.c1[1][1] / p.delta[1][1];
  Mat o = (w4 / w3) * g.fz4 + g.fz3;
  return HermitianOperator(std::move(o));
}

/// Ratio w4/w3 of the Faraday manifold weights (about -1/17 at the magic
/// detuning).
inline double faraday_weight_ratio(const ProbeParams& probe, const AtomicConstants& c) {
  auto p = polarizability_coeffs(c, probe.detuning_mhz);
  double w4 = p.c1[0][0] / p.delta[0][0] + p.c1[1][0] / p.delta[1][0];
  double w3 = p.c1[0][1] / p.delta[0][1] + p.c1[1][1] / p.delta[1][1];
  return w4 / w3;
}

/// Lab-frame birefringence observable (the e_2 Poincare component); its
/// rotating-frame time average vanishes under the RWA.
inline HermitianOperator birefringence_observable(const ProbeParams& probe,
                                                  const AtomicConstants& c) {
  const auto& g = GroundOperators::instance();
  auto p = polarizability_coeffs(c, probe.detuning_mhz);
  Mat o = Mat::Zero(16, 16);
  for (int f : {4, 3}) {
    const Mat& fx = (f == 4) ? g.fx4 : g.fx3;
    const Mat& fy = (f == 4) ? g.fy4 : g.fy3;
    double wgt = 0;
    for (int fp : {4, 3})
      wgt += p.c2[4 - fp][4 - f] * probe.detuning_mhz / p.delta[4 - fp][4 - f];
    o += wgt * 0.5 * (fx * fy + fy * fx);
  }
  return HermitianOperator(std::move(o));
}

// ---------------------------------------------------------------------------
// Assembled model
// ---------------------------------------------------------------------------

/// Everything the dynamics engine needs for the full 16-dimensional system.
/// The light-shift Hamiltonian and the dissipator scale linearly with probe
/// intensity; `intensity_scale` is the inhomogeneity node factor.
struct CesiumModel {
  AtomicConstants constants;
  ProbeParams probe;
  FieldParams fields;
  Mat h_static;        // kHz, Hermitian
  Mat h_light_shift;   // kHz, complex (frame-averaged, non-Hermitian part = decay)
  Mat dissipator;      // kHz, feeding superoperator (frame-averaged)
  Mat faraday;         // observable O_0

  /// Total complex H_eff at the given control phases.
  Mat hamiltonian(double phix, double phiy, double phiuw, double intensity_scale = 1.0) const {
    Mat h = h_static + intensity_scale * h_light_shift;
    h += rf_hamiltonian(fields, phix, phiy, constants).entries;
    if (fields.omega_uw_khz != 0.0) h += uw_hamiltonian(fields, phiuw, constants).entries;
    return h;
  }
  Mat feeding(double intensity_scale = 1.0) const { return intensity_scale * dissipator; }
};

inline CesiumModel build_cesium_model(const AtomicConstants& c, const ProbeParams& probe,
                                      const FieldParams& fields, int dissipator_nodes = 2000) {
  c.validate();
  probe.validate(c);
  fields.validate();
  CesiumModel m;
  m.constants = c;
  m.probe = probe;
  m.fields = fields;
  m.h_static = static_hamiltonian_rotating(fields, c).entries;
  m.h_light_shift = light_shift_hamiltonian_rwa(probe, c);
  m.dissipator = rotating_frame_dissipator(jump_operators(probe, c), c, fields.omega_rf_khz,
                                           dissipator_nodes);
  m.faraday = faraday_observable(probe, c).entries;
  return m;
}

// ---------------------------------------------------------------------------
// Subspace restrictions (single-manifold and two-level models)
// ---------------------------------------------------------------------------

/// A model restricted to a subset of ground levels. Used for the F=3
/// single-manifold dynamics and the stretched-pair Rabi model; optical
/// pumping out of the subspace appears as loss (trace decreases).
struct RestrictedModel {
  std::vector<int> indices;  // positions in the 16-dim layout
  Mat h_static, h_light_shift, dissipator, observable;
  AtomicConstants constants;
  ProbeParams probe;
  FieldParams fields;
  int dim() const { return int(indices.size()); }
};

namespace detail {

inline Mat extract(const Mat& m, const std::vector<int>& idx) {
  Mat out(Eigen::Index(idx.size()), Eigen::Index(idx.size()));
  for (size_t i = 0; i < idx.size(); ++i)
    for (size_t j = 0; j < idx.size(); ++j) out(Eigen::Index(i), Eigen::Index(j)) = m(idx[i], idx[j]);
  return out;
}

}  // namespace detail

/// Restricted dissipator: jump blocks, projectors and the frame generator
/// all cut to the subspace, then frame-averaged as in the full model.
inline Mat restricted_dissipator(const std::vector<JumpOperator>& jumps, const AtomicConstants& c,
                                 const std::vector<int>& idx, double omega_rf_khz,
                                 int n_nodes = 2000) {
  if (n_nodes < 16) throw Error(Errc::insufficient_resolution, "need at least 16 averaging nodes");
  const auto& g = GroundOperators::instance();
  RVec fz(Eigen::Index(idx.size()));
  for (size_t i = 0; i < idx.size(); ++i) fz(Eigen::Index(i)) = g.frame_fz(idx[i], idx[i]).real();
  std::vector<JumpOperator> cut;
  for (const auto& j : jumps) cut.push_back({j.q, j.fa, j.fb, detail::extract(j.w, idx)});
  return detail::averaged_dissipator_impl(cut, detail::extract(g.p4, idx),
                                          detail::extract(g.p3, idx), fz, c.linewidth_mhz * 1e3,
                                          omega_rf_khz, n_nodes);
}

inline std::vector<int> f3_indices() {
  std::vector<int> idx;
  for (int m = 3; m >= -3; --m) idx.push_back(HyperfineIndexing::index(3, m));
  return idx;
}

inline std::vector<int> stretched_pair_indices() {
  return {HyperfineIndexing::index(4, 4), HyperfineIndexing::index(3, 3)};
}

inline RestrictedModel restrict_model(const AtomicConstants& c, const ProbeParams& probe,
                                      const FieldParams& fields, const std::vector<int>& idx,
                                      int dissipator_nodes = 2000) {
  c.validate();
  probe.validate(c);
  fields.validate();
  RestrictedModel m;
  m.indices = idx;
  m.constants = c;
  m.probe = probe;
  m.fields = fields;
  m.h_static = detail::extract(static_hamiltonian_rotating(fields, c).entries, idx);
  m.h_light_shift = detail::extract(light_shift_hamiltonian_rwa(probe, c), idx);
  m.dissipator = restricted_dissipator(jump_operators(probe, c), c, idx, fields.omega_rf_khz,
                                       dissipator_nodes);
  m.observable = detail::extract(faraday_observable(probe, c).entries, idx);
  return m;
}

}  // namespace qstlab
