#pragma once

#include "qstlab/reconstruct.hpp"

namespace qstlab {

// ---------------------------------------------------------------------------
// One-parameter measurement records: orbits of a fixed unitary, their span,
// the saturation conditions, and kicked-top Floquet maps.
// ---------------------------------------------------------------------------

struct OrbitSpec {
  UnitaryMatrix u0;
  HermitianOperator observable;  // traceless
  int n_max = 0;                 // defaults to 10 (d^2 - d + 1)

  void validate() const {
    if (std::abs(observable.entries.trace()) > 1e-10)
      throw Error(Errc::invalid_input, "orbit observable must be traceless");
    if (u0.dim != observable.dim) throw Error(Errc::dimension_mismatch, "orbit dimensions differ");
  }
  int steps() const {
    int d = u0.dim;
    return n_max > 0 ? n_max : 10 * (d * d - d + 1);
  }
};

/// O_n = (U0+)^n O U0^n by repeated conjugation.
inline std::vector<Mat> orbit_observables(const OrbitSpec& spec) {
  spec.validate();
  std::vector<Mat> orbit;
  orbit.reserve(size_t(spec.steps()));
  Mat o = spec.observable.entries;
  for (int n = 0; n < spec.steps(); ++n) {
    orbit.push_back(o);
    o = spec.u0.entries.adjoint() * o * spec.u0.entries;
  }
  return orbit;
}

/// Numerical rank of the T x d^2 matrix of vectorized orbit elements
/// (singular values above 1e-9 of the largest).
inline int span_dimension(const std::vector<Mat>& orbit, double rel_tol = 1e-9) {
  if (orbit.empty()) return 0;
  const int dd = int(orbit[0].rows() * orbit[0].cols());
  Mat stack(Eigen::Index(orbit.size()), dd);
  for (size_t n = 0; n < orbit.size(); ++n) stack.row(Eigen::Index(n)) = vectorize(orbit[n]).transpose();
  Eigen::BDCSVD<Mat> svd(stack);
  double smax = svd.singularValues()(0);
  int rank = 0;
  for (int i = 0; i < svd.singularValues().size(); ++i)
    if (svd.singularValues()(i) > rel_tol * smax) ++rank;
  return rank;
}

/// Saturation conditions for dim(span) = d^2 - d + 1: a nonzero diagonal
/// element of O in the U0 eigenbasis, all off-diagonals nonzero, and all
/// pairwise eigenphase differences distinct mod 2pi (the Vandermonde
/// non-degeneracy criterion).
struct SaturationReport {
  bool diagonal_ok = false;       // condition 1
  bool offdiagonal_ok = false;    // condition 2
  bool phases_ok = false;         // condition 3
  bool marginal = false;          // near-degenerate phase differences
  std::string witness;

  bool all() const { return diagonal_ok && offdiagonal_ok && phases_ok; }
};

inline SaturationReport saturation_conditions(const UnitaryMatrix& u0, const HermitianOperator& o,
                                              double tol = 1e-9) {
  const int d = u0.dim;
  Eigen::ComplexEigenSolver<Mat> es(u0.entries);
  Mat v = es.eigenvectors();
  Mat o_eig = v.adjoint() * o.entries * v;

  SaturationReport rep;
  rep.diagonal_ok = false;
  for (int j = 0; j < d; ++j)
    if (std::abs(o_eig(j, j)) > tol) rep.diagonal_ok = true;
  if (!rep.diagonal_ok) rep.witness += "all diagonal elements vanish; ";

  rep.offdiagonal_ok = true;
  for (int j = 0; j < d; ++j)
    for (int k = 0; k < d; ++k)
      if (j != k && std::abs(o_eig(j, k)) <= tol) {
        rep.offdiagonal_ok = false;
        rep.witness += "off-diagonal (" + std::to_string(j) + "," + std::to_string(k) + ") vanishes; ";
        j = d;
        break;
      }

  std::vector<double> phases(static_cast<size_t>(d), 0.0);
  for (int j = 0; j < d; ++j) phases[size_t(j)] = std::arg(es.eigenvalues()(j));
  rep.phases_ok = true;
  double phase_tol = 2.0 * kPi * tol;
  std::vector<double> diffs;
  for (int j = 0; j < d; ++j)
    for (int k = 0; k < d; ++k)
      if (j != k) diffs.push_back(std::fmod(phases[size_t(j)] - phases[size_t(k)] + 4.0 * kPi, 2.0 * kPi));
  for (size_t a = 0; a < diffs.size() && rep.phases_ok; ++a)
    for (size_t b = a + 1; b < diffs.size(); ++b) {
      double gap = std::abs(diffs[a] - diffs[b]);
      gap = std::min(gap, 2.0 * kPi - gap);
      if (gap <= phase_tol) {
        rep.phases_ok = false;
        rep.witness += "coinciding eigenphase differences (degenerate spectrum); ";
        break;
      } else if (gap <= 1e3 * phase_tol) {
        rep.marginal = true;
      }
    }
  // degenerate eigenvalues themselves also break condition 3
  for (int j = 0; j < d && rep.phases_ok; ++j)
    for (int k = j + 1; k < d; ++k) {
      double gap = std::abs(std::fmod(phases[size_t(j)] - phases[size_t(k)] + 4.0 * kPi, 2.0 * kPi));
      gap = std::min(gap, 2.0 * kPi - gap);
      if (gap <= phase_tol) {
        rep.phases_ok = false;
        rep.witness += "degenerate eigenvalues " + std::to_string(j) + "," + std::to_string(k) + "; ";
        break;
      }
    }
  return rep;
}

// ---------------------------------------------------------------------------
// Kicked-top Floquet maps
// ---------------------------------------------------------------------------

struct KickedTopParams {
  double f = 3.0;  // spin; d = 2F+1
  double phi = 7.0, theta = 0.228;                      // single top
  double phi_prime = 6.0, theta_x = kPi / 2, theta_y = 0.228;  // double top
};

/// U = exp(-i phi Fz^2 / F) exp(-i theta Fx)
inline UnitaryMatrix kicked_top(double f, double phi, double theta) {
  auto am = angular_momentum(f);
  Mat twist = hermitian_rotation(am.fz * am.fz, phi / f);
  Mat kick = hermitian_rotation(am.fx, theta);
  return UnitaryMatrix(twist * kick);
}

/// U = exp(-i phi Fz^2/F) exp(-i theta_x Fx) exp(-i phi' Fz^2/F) exp(-i theta_y Fy)
inline UnitaryMatrix double_kicked_top(double f, double phi, double phi_prime, double theta_x,
                                       double theta_y) {
  auto am = angular_momentum(f);
  Mat t1 = hermitian_rotation(am.fz * am.fz, phi / f);
  Mat kx = hermitian_rotation(am.fx, theta_x);
  Mat t2 = hermitian_rotation(am.fz * am.fz, phi_prime / f);
  Mat ky = hermitian_rotation(am.fy, theta_y);
  return UnitaryMatrix(t1 * kx * t2 * ky);
}

// ---------------------------------------------------------------------------
// Orbit tomography experiments
// ---------------------------------------------------------------------------

struct OrbitExperimentResult {
  std::vector<double> fidelity_vs_n;  // per checkpoint, averaged over states
  std::vector<int> checkpoints;
  double final_mean = 0;
};

/// Builds records M_n = Tr(O_n rho0) (+ noise), reconstructs at each prefix
/// checkpoint with the chosen estimator, and averages fidelities over the
/// supplied states.
inline OrbitExperimentResult orbit_reconstruction_experiment(
    const OrbitSpec& spec, const std::vector<DensityMatrix>& states, double sigma, Method method,
    const std::vector<int>& checkpoints, std::uint64_t noise_seed_base = 1,
    const ConvexOptions& solver = {}) {
  auto orbit = orbit_observables(spec);
  const int d = spec.u0.dim;
  const auto& basis = detail::full_basis(d);
  OrbitExperimentResult res;
  res.checkpoints = checkpoints;
  res.fidelity_vs_n.assign(checkpoints.size(), 0.0);

  RMat design(Eigen::Index(orbit.size()), basis.size());
  for (size_t n = 0; n < orbit.size(); ++n)
    design.row(Eigen::Index(n)) = basis.project(orbit[n]).transpose();

  for (size_t s = 0; s < states.size(); ++s) {
    RVec record(Eigen::Index(orbit.size()));
    for (size_t n = 0; n < orbit.size(); ++n)
      record(Eigen::Index(n)) = (orbit[n] * states[s].entries).trace().real();
    if (sigma > 0) {
      Rng rng(SamplerSeed{noise_seed_base + std::uint64_t(s)});
      for (Eigen::Index i = 0; i < record.size(); ++i) record(i) += sigma * rng.gaussian();
    }
    for (size_t c = 0; c < checkpoints.size(); ++c) {
      int t = std::min<int>(checkpoints[c], int(orbit.size()));
      ReconstructionProblem prob;
      prob.dim = d;
      prob.design = design.topRows(t);
      prob.record = record.head(t);
      prob.sigma = sigma;
      Estimate est;
      if (method == Method::cs) {
        double eps = std::max(sigma * sigma * t, 1e-10);
        est = compressed_sensing(prob, eps, solver);
      } else {
        est = one_step_ls(prob, solver);
      }
      res.fidelity_vs_n[c] += fidelity(est.rho_bar, states[s]) / double(states.size());
    }
  }
  res.final_mean = res.fidelity_vs_n.empty() ? 0.0 : res.fidelity_vs_n.back();
  return res;
}

// ---------------------------------------------------------------------------
// Pure-state diagonal recovery from minors
// ---------------------------------------------------------------------------

/// For a pure state, |rho_ij|^2 = rho_ii rho_jj; with the off-diagonal
/// magnitudes known the diagonals follow from rho_ii = |rho_ij||rho_ik|/|rho_jk|.
/// Fails when every off-diagonal vanishes (an eigenstate of U0).
inline RVec pure_diagonal_recovery(const Mat& off_diagonals, double tol = 1e-12) {
  const int d = int(off_diagonals.rows());
  double best = 0;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      if (i != j) best = std::max(best, std::abs(off_diagonals(i, j)));
  if (best < tol)
    throw Error(Errc::invalid_input, "all off-diagonal elements vanish (eigenstate of U0)");

  RVec diag(d);
  for (int i = 0; i < d; ++i) {
    // pick the witness pair (j, k) with the largest |rho_jk| for stability
    double val = -1, pick = 0;
    for (int j = 0; j < d; ++j)
      for (int k = 0; k < d; ++k) {
        if (j == i || k == i || j == k) continue;
        double denom = std::abs(off_diagonals(j, k));
        if (denom > val && denom > tol) {
          val = denom;
          pick = std::abs(off_diagonals(i, j)) * std::abs(off_diagonals(i, k)) / denom;
        }
      }
    if (val < 0) throw Error(Errc::invalid_input, "no usable off-diagonal witness for index " + std::to_string(i));
    diag(i) = pick;
  }
  return diag;
}

}  // namespace qstlab
