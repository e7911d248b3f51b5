#include "qstlab/reconstruct.hpp"
#include "qstlab/random_states.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <string>

using namespace qstlab;

namespace {

// One-parameter orbit O_n = U+^n Fz U^n (spans d^2-d+1 directions; the
// positivity constraint supplies the remainder for the estimators).
std::vector<Mat> ic_orbit(int d, int steps, std::uint64_t seed) {
  auto am = angular_momentum((d - 1) / 2.0);
  Mat u = haar_unitary(d, SamplerSeed{seed}).entries;
  std::vector<Mat> orbit;
  Mat o = am.fz;
  for (int n = 0; n < steps; ++n) {
    orbit.push_back(o);
    o = u.adjoint() * o * u;
  }
  return orbit;
}

// Two interleaved orbits from independent unitaries: generically spans the
// full su(d), so unconstrained inversion is exact.
std::vector<Mat> full_rank_design(int d, int steps, std::uint64_t seed) {
  auto a = ic_orbit(d, steps, seed);
  auto b = ic_orbit(d, steps, seed + 101);
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

RVec exact_record(const std::vector<Mat>& orbit, const DensityMatrix& rho) {
  RVec m(Eigen::Index(orbit.size()));
  for (size_t n = 0; n < orbit.size(); ++n)
    m(Eigen::Index(n)) = (orbit[n] * rho.entries).trace().real();
  return m;
}

}  // namespace

TEST_CASE("problem construction", "[reconstruct]") {
  // unitary-only dynamics: offsets vanish (trace of O_i conserved)
  auto basis = hermitian_basis(3, true);
  auto orbit = ic_orbit(3, 12, 5);
  auto rho = haar_pure_state(3, SamplerSeed{6});
  auto prob = build_orbit_problem(orbit, exact_record(orbit, rho), basis);
  CHECK(prob.offsets().cwiseAbs().maxCoeff() < 1e-10);

  // noiseless forward model: M~ = O~ r exactly
  RVec r = basis.project(rho.entries).tail(8);
  CHECK((prob.design_traceless() * r - prob.record_offset_subtracted()).cwiseAbs().maxCoeff() < 1e-10);

  // d=2 hand-built design: O = {sx, sy, sz} gives sqrt(2) * I3 columns
  Mat sx(2, 2), sy(2, 2), sz(2, 2);
  sx << 0, 1, 1, 0;
  sy << 0, Complex(0, -1), Complex(0, 1), 0;
  sz << 1, 0, 0, -1;
  auto basis2 = hermitian_basis(2, true);
  auto prob2 = build_orbit_problem({sx, sy, sz}, RVec::Zero(3), basis2);
  RMat expect = std::sqrt(2.0) * RMat::Identity(3, 3);
  CHECK((prob2.design_traceless() - expect).norm() < 1e-12);

  CHECK_THROWS_AS(build_orbit_problem(orbit, RVec::Zero(3), basis), Error);
}

TEST_CASE("unconstrained pseudo-inverse solution", "[reconstruct]") {
  auto basis = hermitian_basis(4, true);
  auto orbit = full_rank_design(4, 20, 9);
  auto rho = hs_mixed_state(4, SamplerSeed{10});
  auto prob = build_orbit_problem(orbit, exact_record(orbit, rho), basis);
  auto sol = unconstrained_ml(prob);
  RVec truth = hermitian_basis(4, false).project(rho.entries);
  CHECK((sol.r_ml - truth).cwiseAbs().maxCoeff() < 1e-8);

  // rank-deficient early-time problem: minimum-norm solution has zero
  // component along unmeasured directions
  auto short_prob = build_orbit_problem({orbit[0]}, exact_record({orbit[0]}, rho), basis);
  auto short_sol = unconstrained_ml(short_prob);
  RVec d0 = short_prob.design_traceless().row(0).transpose();
  RVec residual = short_sol.r_ml - d0 * (short_sol.r_ml.dot(d0) / d0.squaredNorm());
  CHECK(residual.cwiseAbs().maxCoeff() < 1e-10);

  // information-matrix eigenvalues equal squared per-direction SNRs on an
  // orthogonal design: rows = s_a * vec(E_a) give diag(s_a^2 / sigma^2)
  auto tl = hermitian_basis(3, false);
  std::vector<Mat> rows;
  RVec rec(3);
  std::vector<double> snrs{2.0, 0.5, 3.0};
  for (int a = 0; a < 3; ++a) {
    rows.push_back(snrs[size_t(a)] * tl.elements[size_t(a)]);
    rec(a) = 0;
  }
  auto diag_prob = build_orbit_problem(rows, rec, hermitian_basis(3, true), 1.0);
  auto diag_sol = unconstrained_ml(diag_prob);
  for (int a = 0; a < 3; ++a)
    CHECK(diag_sol.information(a, a) == Catch::Approx(snrs[size_t(a)] * snrs[size_t(a)]).margin(1e-12));
}

TEST_CASE("one-step least squares: exact recovery and physicality", "[reconstruct]") {
  const int d = 4;
  auto basis = hermitian_basis(d, true);
  auto orbit = ic_orbit(d, 10 * (d * d - d + 1), 3);
  auto rho = haar_pure_state(d, SamplerSeed{77});
  auto prob = build_orbit_problem(orbit, exact_record(orbit, rho), basis);
  auto est = one_step_ls(prob);
  CHECK(fidelity(est.rho_bar, rho) > 0.9999);
  CHECK(std::abs(est.rho_bar.entries.trace().real() - 1.0) < 1e-10);

  // empty record: maximally mixed guess
  ReconstructionProblem empty;
  empty.dim = d;
  empty.design = RMat::Zero(0, d * d);
  empty.record = RVec::Zero(0);
  auto e0 = one_step_ls(empty);
  CHECK((e0.rho_bar.entries - Mat::Identity(d, d) / double(d)).norm() < 1e-12);

  // data consistency: the LS residual is no worse than that of 100 random
  // physical states
  auto noisy = exact_record(orbit, rho);
  Rng rng(SamplerSeed{4});
  for (int i = 0; i < noisy.size(); ++i) noisy(i) += 0.05 * rng.gaussian();
  auto noisy_prob = build_orbit_problem(orbit, noisy, basis, 0.05);
  auto noisy_est = one_step_ls(noisy_prob);
  RVec rbar = hermitian_basis(d, false).project(noisy_est.rho_bar.entries);
  double opt = (noisy_prob.design_traceless() * rbar - noisy_prob.record_offset_subtracted()).norm();
  for (int i = 0; i < 100; ++i) {
    auto trial = hs_mixed_state(d, SamplerSeed{3000 + std::uint64_t(i)});
    RVec rt = hermitian_basis(d, false).project(trial.entries);
    double res = (noisy_prob.design_traceless() * rt - noisy_prob.record_offset_subtracted()).norm();
    CHECK(opt <= res + 1e-9);
  }
}

TEST_CASE("two-step ML agrees with one-step LS on full-rank noiseless data", "[reconstruct]") {
  const int d = 3;
  auto basis = hermitian_basis(d, true);
  auto orbit = full_rank_design(d, 30, 21);
  for (int s = 0; s < 3; ++s) {
    auto rho = hs_mixed_state(d, SamplerSeed{500 + std::uint64_t(s)});
    auto prob = build_orbit_problem(orbit, exact_record(orbit, rho), basis);
    auto ml = two_step_ml(prob);
    auto ls = one_step_ls(prob);
    // trace distance
    Mat diff = ml.rho_bar.entries - ls.rho_bar.entries;
    Eigen::SelfAdjointEigenSolver<Mat> es(diff, Eigen::EigenvaluesOnly);
    CHECK(0.5 * es.eigenvalues().cwiseAbs().sum() < 1e-6);
  }

  // physical r_ML passes through untouched
  auto rho = hs_mixed_state(d, SamplerSeed{41});
  auto prob = build_orbit_problem(orbit, exact_record(orbit, rho), basis);
  auto ml = two_step_ml(prob);
  CHECK(fidelity(ml.rho_bar, rho) > 0.99999);
}

TEST_CASE("compressed sensing: limits and calibration semantics", "[reconstruct]") {
  const int d = 3;
  auto basis = hermitian_basis(d, true);
  auto orbit = ic_orbit(d, 40, 33);
  auto rho = haar_pure_state(d, SamplerSeed{3});
  RVec record = exact_record(orbit, rho);
  auto prob = build_orbit_problem(orbit, record, basis);

  // eps at (noiseless) zero residual: recovers the state
  auto est = compressed_sensing(prob, 1e-10);
  CHECK(fidelity(est.rho_bar, rho) > 0.9999);

  // huge eps: the minimal-trace solution degenerates; maximally mixed guess
  auto wide = compressed_sensing(prob, 1e6);
  CHECK((wide.rho_bar.entries - Mat::Identity(d, d) / double(d)).norm() < 1e-9);

  // eps below the minimal feasible residual: a noisy overdetermined record
  // cannot be fit exactly, so a near-zero ball is infeasible
  RVec bad_record = record;
  Rng noise(SamplerSeed{99});
  for (int i = 0; i < bad_record.size(); ++i) bad_record(i) += 0.1 * noise.gaussian();
  auto bad = build_orbit_problem(orbit, bad_record, basis);
  bool threw = false;
  try {
    compressed_sensing(bad, 1e-9);
  } catch (const Error& e) {
    threw = true;
    CHECK(e.code() == Errc::infeasible_target);
    CHECK(std::string(e.what()).find("minimal feasible residual") != std::string::npos);
  }
  CHECK(threw);

  // interpolated eps
  CHECK(interpolate_eps(1.2, 1.0, 2.0) == Catch::Approx(0.6));
  CHECK(interpolate_eps(1.2, 3.0, 2.0) == Catch::Approx(1.2));
}

TEST_CASE("cs purity bias vs ls on noisy pure states", "[reconstruct]") {
  // over pure-state records with noise, CS estimates are purer than LS ones
  const int d = 4;
  auto basis = hermitian_basis(d, true);
  auto orbit = ic_orbit(d, 10 * (d * d - d + 1), 8);
  double sigma = 0.05;
  double cs_purity = 0, ls_purity = 0;
  const int trials = 6;
  for (int s = 0; s < trials; ++s) {
    auto rho = haar_pure_state(d, SamplerSeed{6000 + std::uint64_t(s)});
    RVec record = exact_record(orbit, rho);
    Rng rng(SamplerSeed{7000 + std::uint64_t(s)});
    for (int i = 0; i < record.size(); ++i) record(i) += sigma * rng.gaussian();
    auto prob = build_orbit_problem(orbit, record, basis, sigma);
    double eps = sigma * sigma * double(record.size());  // expected chi-square
    ls_purity += purity(one_step_ls(prob).rho_bar);
    cs_purity += purity(compressed_sensing(prob, eps).rho_bar);
  }
  CHECK(cs_purity / trials >= ls_purity / trials);
}

TEST_CASE("monotone information: longer noiseless records do not hurt", "[reconstruct]") {
  const int d = 4;
  auto basis = hermitian_basis(d, true);
  auto orbit = ic_orbit(d, 10 * (d * d - d + 1), 12);
  double short_sum = 0, long_sum = 0;
  for (int s = 0; s < 10; ++s) {
    auto rho = haar_pure_state(d, SamplerSeed{8800 + std::uint64_t(s)});
    RVec record = exact_record(orbit, rho);
    std::vector<Mat> head(orbit.begin(), orbit.begin() + 13);
    auto short_prob = build_orbit_problem(head, record.head(13), basis);
    auto long_prob = build_orbit_problem(orbit, record, basis);
    short_sum += fidelity(one_step_ls(short_prob).rho_bar, rho);
    long_sum += fidelity(one_step_ls(long_prob).rho_bar, rho);
  }
  CHECK(long_sum >= short_sum - 1e-6);
}

TEST_CASE("direct linear inversion of discrete POVMs", "[reconstruct]") {
  // full Pauli POVM at d=2 with exact frequencies recovers rho exactly
  Mat sx(2, 2), sy(2, 2), sz(2, 2);
  sx << 0, 1, 1, 0;
  sy << 0, Complex(0, -1), Complex(0, 1), 0;
  sz << 1, 0, 0, -1;
  std::vector<Mat> povm;
  for (const Mat* s : {&sx, &sy, &sz}) {
    povm.push_back(0.5 * (Mat::Identity(2, 2) + *s) / 3.0);
    povm.push_back(0.5 * (Mat::Identity(2, 2) - *s) / 3.0);
  }
  auto rho = hs_mixed_state(2, SamplerSeed{13});
  RVec freq(6);
  for (size_t i = 0; i < povm.size(); ++i)
    freq(Eigen::Index(i)) = (povm[i] * rho.entries).trace().real();
  auto res = direct_linear_inversion(freq, povm);
  CHECK((res.rho - rho.entries).norm() < 1e-10);
  CHECK(res.physical);

  // perturbed frequencies can produce an unphysical flagged output
  RVec bad = freq;
  bad(0) += 0.3;
  bad(1) -= 0.3;
  auto flagged = direct_linear_inversion(bad, povm);
  CHECK_FALSE(flagged.physical);
  CHECK(flagged.min_eigenvalue < 0.0);

  // random full-rank POVM at d=3 with exact probabilities: exact recovery
  const int d = 3;
  Rng rng(SamplerSeed{14});
  std::vector<Mat> sic;
  Mat total = Mat::Zero(d, d);
  for (int k = 0; k < 12; ++k) {
    Mat g = ginibre(d, rng);
    Mat e = g * g.adjoint();
    sic.push_back(e);
    total += e;
  }
  Mat norm = psd_sqrt(total).inverse();  // normalize to a resolution of identity
  for (auto& e : sic) e = norm * e * norm;
  auto rho3 = hs_mixed_state(3, SamplerSeed{15});
  RVec f3(12);
  for (size_t i = 0; i < sic.size(); ++i) f3(Eigen::Index(i)) = (sic[i] * rho3.entries).trace().real();
  auto rec3 = direct_linear_inversion(f3, sic);
  CHECK((rec3.rho - rho3.entries).norm() < 1e-9);

  // rank-deficient POVM reports the missing directions
  std::vector<Mat> degenerate{povm[0], povm[1]};
  CHECK_THROWS_AS(direct_linear_inversion(freq.head(2), degenerate), Error);
}

TEST_CASE("estimates expose residual and solver diagnostics", "[reconstruct]") {
  const int d = 3;
  auto basis = hermitian_basis(d, true);
  auto orbit = ic_orbit(d, 30, 2);
  auto rho = haar_pure_state(d, SamplerSeed{1});
  RVec record = exact_record(orbit, rho);
  Rng rng(SamplerSeed{2});
  for (int i = 0; i < record.size(); ++i) record(i) += 0.02 * rng.gaussian();
  auto prob = build_orbit_problem(orbit, record, basis, 0.02);
  auto est = one_step_ls(prob);
  CHECK(est.residual > 0.0);
  CHECK(est.solver_converged);
  CHECK(est.iterations > 0);
}
