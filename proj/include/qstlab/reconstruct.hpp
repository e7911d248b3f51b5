#pragma once

#include "qstlab/convex.hpp"
#include "qstlab/dynamics.hpp"
#include "qstlab/signal.hpp"

namespace qstlab {

// ---------------------------------------------------------------------------
// Linear estimation problem
// ---------------------------------------------------------------------------

/// Stacked design matrix over the full Hermitian basis {E_0 = I/sqrt(d),
/// E_1..E_{d^2-1} traceless}: design(i, a) = Tr(O_i E_a) with the identical
/// causal filter already applied to history and record. The least-squares
/// paths use columns 1.. with the Tr(O_i)/d offset removed from the record;
/// compressed sensing uses all columns against the raw record.
struct ReconstructionProblem {
  int dim = 0;
  RMat design;   // T x d^2, column 0 = identity component
  RVec record;   // filtered measurement record, length T
  double sigma = 0.0;
  double scale_a = 1.0;

  RVec offsets() const { return design.col(0) / std::sqrt(double(dim)); }  // Tr(O_i)/d
  RMat design_traceless() const { return design.rightCols(design.cols() - 1); }
  RVec record_offset_subtracted() const { return record - offsets(); }
};

/// Builds the problem from a Heisenberg history and a record; both pass
/// through the identical filter before projection onto the basis.
inline ReconstructionProblem build_problem(const OperatorHistory& history,
                                           const MeasurementRecord& record,
                                           const OperatorBasis& basis,
                                           const BandpassFilter* filter = nullptr) {
  if (history.samples.cols() != record.samples.size())
    throw Error(Errc::length_mismatch, "history and record length differ");
  if (!basis.includes_identity)
    throw Error(Errc::invalid_input, "reconstruction basis must include the identity element");
  if (basis.dim != history.dim) throw Error(Errc::dimension_mismatch, "basis does not match history");
  ReconstructionProblem prob;
  prob.dim = history.dim;
  prob.sigma = record.noise_sigma;
  prob.scale_a = record.scale_a;
  Mat hist = filter ? apply_filter_rows(*filter, history.samples) : history.samples;
  prob.record = filter ? apply_filter<double>(*filter, record.samples) : record.samples;
  // design rows: real projections Tr(E_a O_i)
  prob.design = (basis.vectorized.adjoint() * hist).real().transpose();
  if (!prob.design.allFinite()) throw Error(Errc::invalid_input, "design matrix has non-finite rows");
  return prob;
}

/// Problem from a discrete orbit of observables (no filtering): rows
/// Tr(O_n E_a) against record M_n.
inline ReconstructionProblem build_orbit_problem(const std::vector<Mat>& orbit, const RVec& record,
                                                 const OperatorBasis& basis, double sigma = 0.0) {
  if (Eigen::Index(orbit.size()) != record.size())
    throw Error(Errc::length_mismatch, "orbit and record length differ");
  if (!basis.includes_identity)
    throw Error(Errc::invalid_input, "reconstruction basis must include the identity element");
  ReconstructionProblem prob;
  prob.dim = basis.dim;
  prob.sigma = sigma;
  prob.record = record;
  prob.design.resize(record.size(), basis.size());
  for (size_t n = 0; n < orbit.size(); ++n)
    prob.design.row(Eigen::Index(n)) = basis.project(orbit[n]).transpose();
  return prob;
}

// ---------------------------------------------------------------------------
// Estimates
// ---------------------------------------------------------------------------

enum class Method { direct, ml2, ls, cs };

struct Estimate {
  DensityMatrix rho_bar;
  Method method = Method::ls;
  double residual = 0.0;  // ||M~ - O~ r||
  std::optional<double> fidelity_vs_target;
  bool solver_converged = true;
  int iterations = 0;
};

/// Information matrix C^{-1} = O~^T O~ / sigma^2 and the unconstrained
/// pseudo-inverse solution.
struct UnconstrainedSolution {
  RVec r_ml;
  RMat information;  // (d^2-1)^2
  double condition_number = 0.0;
};

inline UnconstrainedSolution unconstrained_ml(const ReconstructionProblem& prob) {
  RMat o = prob.design_traceless();
  RVec m = prob.record_offset_subtracted();
  RMat gram = o.transpose() * o;
  Eigen::SelfAdjointEigenSolver<RMat> es(gram);
  RVec lam = es.eigenvalues();
  double cutoff = 1e-10 * lam.maxCoeff();
  RVec inv = lam.unaryExpr([&](double l) { return l > cutoff ? 1.0 / l : 0.0; });
  RMat pinv = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
  UnconstrainedSolution sol;
  sol.r_ml = pinv * (o.transpose() * m);
  double sig2 = prob.sigma > 0 ? prob.sigma * prob.sigma : 1.0;
  sol.information = gram / sig2;
  double lmin = lam.minCoeff();
  sol.condition_number = lmin > 0 ? lam.maxCoeff() / lmin : std::numeric_limits<double>::infinity();
  return sol;
}

namespace detail {

/// Final physical estimate: tiny solver-tolerance negatives are clipped to
/// zero (the output is exactly PSD and unit trace); violations beyond the
/// solver's own non-convergence acceptance scale are a breakdown.
inline DensityMatrix clip_to_state(const Mat& h, double floor = 1e-4) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (h + h.adjoint().eval()));
  RVec lam = es.eigenvalues();
  if (lam.minCoeff() < -floor * std::max(1.0, lam.cwiseAbs().maxCoeff()))
    throw Error(Errc::invalid_state, "estimate violates positivity beyond solver tolerance");
  lam = lam.cwiseMax(0.0);
  lam /= lam.sum();
  Mat rho = es.eigenvectors() * lam.asDiagonal().toDenseMatrix().cast<Complex>() *
            es.eigenvectors().adjoint();
  return DensityMatrix(std::move(rho));
}

inline const OperatorBasis& traceless_basis(int d) {
  static std::map<int, OperatorBasis> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lk(mu);
  auto it = cache.find(d);
  if (it == cache.end()) it = cache.emplace(d, hermitian_basis(d, false)).first;
  return it->second;
}

inline const OperatorBasis& full_basis(int d) {
  static std::map<int, OperatorBasis> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lk(mu);
  auto it = cache.find(d);
  if (it == cache.end()) it = cache.emplace(d, hermitian_basis(d, true)).first;
  return it->second;
}

}  // namespace detail

/// Two-step constrained maximum likelihood: pseudo-inverse solution first,
/// then the covariance-seminorm projection onto physical states.
inline Estimate two_step_ml(const ReconstructionProblem& prob, const ConvexOptions& opt = {}) {
  const int d = prob.dim;
  if (prob.record.size() == 0) return {DensityMatrix::maximally_mixed(d), Method::ml2, 0.0, {}, true, 0};
  auto unc = unconstrained_ml(prob);
  const auto& basis = detail::traceless_basis(d);
  ConvexProblem cp;
  cp.quadratic = 2.0 * unc.information;
  cp.linear = -2.0 * (unc.information * unc.r_ml);
  cp.basis = &basis;
  cp.cone_offset = Mat::Identity(d, d) / double(d);
  auto res = convex_solve(cp, opt);
  if (!res.converged && res.primal_residual > 1e-4)
    throw Error(Errc::non_convergence,
                "two-step solver stalled; primal residual " + std::to_string(res.primal_residual));
  Estimate est;
  est.method = Method::ml2;
  est.rho_bar = detail::clip_to_state(basis.assemble(res.x, cp.cone_offset));
  est.residual = (prob.design_traceless() * res.x - prob.record_offset_subtracted()).norm();
  est.solver_converged = res.converged;
  est.iterations = res.iterations;
  return est;
}

/// One-step constrained least squares (the preferred estimator): minimize
/// ||M~ - O~ r||^2 subject to positivity of I/d + sum r_a E_a.
inline Estimate one_step_ls(const ReconstructionProblem& prob, const ConvexOptions& opt = {}) {
  const int d = prob.dim;
  if (prob.record.size() == 0) return {DensityMatrix::maximally_mixed(d), Method::ls, 0.0, {}, true, 0};
  RMat o = prob.design_traceless();
  RVec m = prob.record_offset_subtracted();
  const auto& basis = detail::traceless_basis(d);
  ConvexProblem cp;
  cp.quadratic = 2.0 * (o.transpose() * o);
  cp.linear = -2.0 * (o.transpose() * m);
  cp.basis = &basis;
  cp.cone_offset = Mat::Identity(d, d) / double(d);
  auto res = convex_solve(cp, opt);
  if (!res.converged && res.primal_residual > 1e-4)
    throw Error(Errc::non_convergence,
                "one-step solver stalled; primal residual " + std::to_string(res.primal_residual));
  Estimate est;
  est.method = Method::ls;
  est.rho_bar = detail::clip_to_state(basis.assemble(res.x, cp.cone_offset));
  est.residual = (o * res.x - m).norm();
  est.solver_converged = res.converged;
  est.iterations = res.iterations;
  return est;
}

/// Smallest achievable squared residual over physical states (used to report
/// infeasible compressed-sensing thresholds).
inline double min_feasible_residual_sq(const ReconstructionProblem& prob,
                                       const ConvexOptions& opt = {}) {
  auto ls = one_step_ls(prob, opt);
  const auto& basis = detail::full_basis(prob.dim);
  RVec r = basis.project(ls.rho_bar.entries);
  return (prob.design * r - prob.record).squaredNorm();
}

/// Compressed sensing: minimize the identity coefficient r_0 (the trace
/// heuristic) subject to positivity and the residual ball
/// ||M - O~ r||^2 <= eps; the under-normalized result is rescaled to unit
/// trace. eps must be calibrated beforehand.
inline Estimate compressed_sensing(const ReconstructionProblem& prob, double eps,
                                   const ConvexOptions& opt = {}) {
  const int d = prob.dim;
  if (prob.record.size() == 0) return {DensityMatrix::maximally_mixed(d), Method::cs, 0.0, {}, true, 0};
  if (eps < 0) throw Error(Errc::invalid_input, "eps must be nonnegative");
  const auto& basis = detail::full_basis(d);
  ConvexProblem cp;
  cp.quadratic = RMat::Zero(basis.size(), basis.size());
  cp.linear = RVec::Zero(basis.size());
  cp.linear(0) = 1.0;
  cp.basis = &basis;
  cp.cone_offset = Mat::Zero(d, d);
  cp.ball = BallConstraint{prob.design, prob.record, eps};
  auto res = convex_solve(cp, opt);
  double viol = (prob.design * res.x - prob.record).squaredNorm() - eps;
  if (!res.converged && viol > 1e-4 * std::max(1.0, eps)) {
    double minimal = min_feasible_residual_sq(prob, opt);
    throw Error(Errc::infeasible_target,
                "eps below the minimal feasible residual " + std::to_string(minimal));
  }
  Estimate est;
  est.method = Method::cs;
  est.solver_converged = res.converged;
  est.iterations = res.iterations;
  Mat rho = basis.assemble(res.x, cp.cone_offset);
  double tr = rho.trace().real();
  if (tr < 1e-12) {
    // degenerate large-eps limit: only the trace-free solution survives
    est.rho_bar = DensityMatrix::maximally_mixed(d);
  } else {
    est.rho_bar = detail::clip_to_state(rho / tr);
  }
  est.residual = (prob.design * res.x - prob.record).norm();
  return est;
}

/// Linear interpolation of the compressed-sensing threshold for prefix
/// records: eps(t) = eps_final * t / t_final.
inline double interpolate_eps(double eps_final, double t, double t_final) {
  if (t_final <= 0) return eps_final;
  return eps_final * std::clamp(t / t_final, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Direct linear inversion for discrete POVMs
// ---------------------------------------------------------------------------

struct DirectInversionResult {
  Mat rho;           // possibly non-physical
  bool physical = false;
  double min_eigenvalue = 0.0;
};

/// Pseudo-inverse solve of f_i - Tr(Pi_i)/d = sum_a Tr(Pi_i E_a) r_a. The
/// output is not eigenvalue-clipped; `physical` flags positivity. A
/// rank-deficient POVM raises `underdetermined` with the null directions.
inline DirectInversionResult direct_linear_inversion(const RVec& frequencies,
                                                     const std::vector<Mat>& povm,
                                                     double rank_tol = 1e-10) {
  if (Eigen::Index(povm.size()) != frequencies.size())
    throw Error(Errc::length_mismatch, "frequency vector does not match POVM size");
  if (povm.empty()) throw Error(Errc::invalid_input, "empty POVM");
  const int d = int(povm[0].rows());
  const auto& basis = detail::traceless_basis(d);
  RMat design(povm.size(), basis.size());
  RVec shifted(frequencies.size());
  for (size_t i = 0; i < povm.size(); ++i) {
    design.row(Eigen::Index(i)) = basis.project(povm[i]).transpose();
    shifted(Eigen::Index(i)) = frequencies(Eigen::Index(i)) - povm[i].trace().real() / d;
  }
  Eigen::JacobiSVD<RMat> svd(design, Eigen::ComputeThinU | Eigen::ComputeThinV);
  double smax = svd.singularValues()(0);
  int rank = 0;
  for (int i = 0; i < svd.singularValues().size(); ++i)
    if (svd.singularValues()(i) > rank_tol * smax) ++rank;
  if (rank < basis.size()) {
    std::string msg = "POVM spans " + std::to_string(rank) + " of " +
                      std::to_string(basis.size()) + " directions; null directions:";
    for (int i = rank; i < std::min<int>(rank + 3, int(svd.matrixV().cols())); ++i)
      msg += " v" + std::to_string(i);
    throw Error(Errc::underdetermined, msg);
  }
  RVec r = svd.solve(shifted);
  DirectInversionResult out;
  out.rho = Mat::Identity(d, d) / double(d) + devectorize(basis.vectorized * r.cast<Complex>());
  Eigen::SelfAdjointEigenSolver<Mat> es(out.rho, Eigen::EigenvaluesOnly);
  out.min_eigenvalue = es.eigenvalues().minCoeff();
  out.physical = out.min_eigenvalue >= -1e-9;
  return out;
}

}  // namespace qstlab
