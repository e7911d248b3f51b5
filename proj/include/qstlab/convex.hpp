#pragma once

#include "qstlab/operators.hpp"

#include <limits>
#include <optional>

namespace qstlab {

/// Quadratic residual ball ||A x - b||^2 <= eps.
struct BallConstraint {
  RMat a;
  RVec b;
  double eps = 0.0;
};

/// minimize 0.5 x'P x + q'x
/// subject to   cone_offset + sum_a x_a E_a  PSD        (optional)
///              ||A x - b||^2 <= eps                    (optional)
/// The basis elements E_a are orthonormal under the trace inner product,
/// which makes the cone coupling an isometry.
struct ConvexProblem {
  RMat quadratic;  // P, n x n PSD (zero matrix for a linear objective)
  RVec linear;     // q
  const OperatorBasis* basis = nullptr;  // nullptr: no PSD cone
  Mat cone_offset;                       // B0 (ignored without basis)
  std::optional<BallConstraint> ball;
};

struct ConvexOptions {
  double objective_tol = 1e-8;  // relative objective change
  double psd_tol = 1e-9;        // most negative eigenvalue allowed
  double ball_tol = 1e-8;       // allowed ||Ax-b||^2 - eps
  int max_iterations = 50000;
  double rho = 1.0;
  bool adaptive_rho = true;
};

struct ConvexResult {
  RVec x;
  bool converged = false;
  int iterations = 0;
  double objective = 0.0;
  double psd_violation = 0.0;   // max(0, -lambda_min)
  double ball_violation = 0.0;  // max(0, ||Ax-b||^2 - eps)
  double primal_residual = 0.0;
};

namespace detail {

inline Mat project_psd(const Mat& h) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (h + h.adjoint().eval()));
  RVec lam = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * lam.asDiagonal().toDenseMatrix().cast<Complex>() *
         es.eigenvectors().adjoint();
}

/// Euclidean projection of a vector onto {l >= 0, sum l = total}.
inline RVec project_scaled_simplex(RVec lam, double total) {
  const int n = int(lam.size());
  std::vector<double> sorted(lam.data(), lam.data() + n);
  std::sort(sorted.begin(), sorted.end(), std::greater<double>());
  double cum = 0.0, theta = 0.0;
  int k = 0;
  for (int i = 0; i < n; ++i) {
    cum += sorted[size_t(i)];
    double t = (cum - total) / (i + 1);
    if (t < sorted[size_t(i)]) {
      theta = t;
      k = i + 1;
    }
  }
  (void)k;
  return (lam.array() - theta).cwiseMax(0.0);
}

/// Projection onto {X PSD} or {X PSD, Tr X = trace_target} in Frobenius norm.
inline Mat project_cone(const Mat& h, std::optional<double> trace_target) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (h + h.adjoint().eval()));
  RVec lam = trace_target ? project_scaled_simplex(es.eigenvalues(), *trace_target)
                          : RVec(es.eigenvalues().cwiseMax(0.0));
  return es.eigenvectors() * lam.asDiagonal().toDenseMatrix().cast<Complex>() *
         es.eigenvectors().adjoint();
}

inline double min_eigenvalue(const Mat& h) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (h + h.adjoint().eval()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace detail

/// Consensus ADMM: the smooth objective lives in the x block, the PSD cone
/// and the residual ball in projection blocks. Deterministic for fixed
/// inputs; iterates start from x = 0 so rank-deficient problems resolve to
/// the minimum-norm representative.
inline ConvexResult convex_solve(const ConvexProblem& prob, const ConvexOptions& opt = {}) {
  const int n = int(prob.linear.size());
  const bool has_cone = prob.basis != nullptr;
  const bool has_ball = prob.ball.has_value();
  if (has_cone && prob.basis->size() != n)
    throw Error(Errc::dimension_mismatch, "basis size must match variable count");

  RVec x = RVec::Zero(n);
  double rho = opt.rho;

  // With a traceless basis the feasible matrices form an affine slice of
  // fixed trace; the cone projection then lands on the scaled simplex. With
  // the identity included the basis spans all Hermitians and the set is the
  // plain PSD cone.
  std::optional<double> trace_target;
  if (has_cone && !prob.basis->includes_identity)
    trace_target = prob.cone_offset.trace().real();

  // cone block state (coefficients relative to the basis)
  RVec z = RVec::Zero(n), uc = RVec::Zero(n);
  // ball block state
  RVec v, ub;
  RMat ata;
  RVec atb;
  if (has_ball) {
    v = RVec::Zero(prob.ball->b.size());
    ub = RVec::Zero(prob.ball->b.size());
    ata = prob.ball->a.transpose() * prob.ball->a;
    atb = prob.ball->a.transpose() * prob.ball->b;
  }

  auto make_solver = [&](double r) {
    RMat lhs = prob.quadratic;
    if (has_cone) lhs += r * RMat::Identity(n, n);
    if (has_ball) lhs += r * ata;
    if (!has_cone && !has_ball) lhs += 1e-12 * RMat::Identity(n, n);
    return Eigen::LDLT<RMat>(lhs);
  };
  Eigen::LDLT<RMat> solver = make_solver(rho);

  auto objective = [&](const RVec& xx) {
    return 0.5 * xx.dot(prob.quadratic * xx) + prob.linear.dot(xx);
  };

  double prev_obj = std::numeric_limits<double>::infinity();
  ConvexResult res;
  for (int it = 0; it < opt.max_iterations; ++it) {
    // x-update
    RVec rhs = -prob.linear;
    if (has_cone) rhs += rho * (z - uc);
    if (has_ball) rhs += prob.ball->a.transpose() * (rho * (prob.ball->b + v - ub));
    x = solver.solve(rhs);

    double rp_cone = 0.0, rp_ball = 0.0;
    if (has_cone) {
      // project S(x + U) onto the feasible matrices; the result stays inside
      // the basis span, so re-expansion in coefficients is exact
      Mat s = prob.basis->assemble(x + uc, prob.cone_offset);
      Mat zp = detail::project_cone(s, trace_target);
      RVec z_next = prob.basis->project(zp - prob.cone_offset);
      rp_cone = (x - z_next).norm();
      uc += x - z_next;
      z = z_next;
    }
    if (has_ball) {
      RVec y = prob.ball->a * x - prob.ball->b + ub;
      double nrm2 = y.squaredNorm();
      RVec v_next = (nrm2 > prob.ball->eps && nrm2 > 0)
                        ? RVec(y * std::sqrt(prob.ball->eps / nrm2))
                        : y;
      rp_ball = (prob.ball->a * x - prob.ball->b - v_next).norm();
      ub += prob.ball->a * x - prob.ball->b - v_next;
      v = v_next;
    }

    res.iterations = it + 1;
    if ((it + 1) % 25 == 0 || it + 1 == opt.max_iterations) {
      double obj = objective(x);
      double psd_viol = 0.0;
      if (has_cone)
        psd_viol = std::max(0.0, -detail::min_eigenvalue(prob.basis->assemble(x, prob.cone_offset)));
      double ball_viol = 0.0;
      if (has_ball)
        ball_viol = std::max(0.0, (prob.ball->a * x - prob.ball->b).squaredNorm() - prob.ball->eps);
      double rel_change = std::abs(obj - prev_obj) / std::max(1.0, std::abs(obj));
      prev_obj = obj;
      res.objective = obj;
      res.psd_violation = psd_viol;
      res.ball_violation = ball_viol;
      res.primal_residual = std::max(rp_cone, rp_ball);
      if (rel_change < opt.objective_tol && psd_viol < opt.psd_tol && ball_viol < opt.ball_tol &&
          res.primal_residual < 1e-7) {
        res.converged = true;
        res.x = x;
        return res;
      }
      if (opt.adaptive_rho && (it + 1) % 500 == 0) {
        // residual balancing: grow rho when constraints lag the objective
        double prim = std::max(rp_cone, rp_ball);
        if (prim > 1e-6 && rho < 1e6) {
          rho *= 2.0;
          uc /= 2.0;
          if (has_ball) ub /= 2.0;
          solver = make_solver(rho);
        }
      }
    }
  }
  res.x = x;
  res.converged = false;
  return res;
}

}  // namespace qstlab
