#pragma once

#include "qstlab/cesium.hpp"
#include "qstlab/dynamics.hpp"
#include "qstlab/fitting.hpp"
#include "qstlab/random_evolution.hpp"
#include "qstlab/reconstruct.hpp"

#include <chrono>

namespace qstlab {

// ---------------------------------------------------------------------------
// Chapter-4 style tomography experiments: simulate a full measurement record
// for the cesium system under random piecewise-constant phases, filter, and
// reconstruct with least squares and compressed sensing.
// ---------------------------------------------------------------------------

struct TomographySetup {
  AtomicConstants constants{};
  ProbeParams probe{};
  FieldParams fields{};
  double duration_ms = 2.0;
  double sigma = 0.03;
  double scale_a = 1.0;
  SamplerSeed waveform_seed{2468};
  bool use_filter = true;
  BandpassFilter filter = design_bessel_bandpass();
  bool f3_restricted = false;  // d=7 single-manifold variant
  double eps_slack = 1.0;      // multiplies the calibrated CS threshold
  ConvexOptions solver{};
};

/// Precomputed state-independent pieces shared by every reconstruction at a
/// given setup: the filtered design matrix and the raw operator history.
struct TomographyContext {
  int dim = 0;
  Mat history;        // unfiltered vec_r(O_i) columns
  RMat design;        // filtered, T x d^2 (identity column first)
  double sigma = 0.0;
  double scale_a = 1.0;
  double eps_cal = 0.0;  // calibrated compressed-sensing threshold
  const TomographySetup* setup = nullptr;
};

inline TomographyContext prepare_tomography(const TomographySetup& setup) {
  TomographyContext ctx;
  ctx.setup = &setup;
  ctx.sigma = setup.sigma;
  ctx.scale_a = setup.scale_a;
  const int T = int(std::llround(setup.duration_ms / 1e-3));
  auto waveform = random_phase_waveform(setup.waveform_seed, setup.duration_ms);

  OperatorHistory hist;
  if (setup.f3_restricted) {
    auto idx = f3_indices();
    auto model = restrict_model(setup.constants, setup.probe, setup.fields, idx);
    auto hamil = [&](double px, double py, double pu) {
      (void)pu;
      Mat h = model.h_static + model.h_light_shift;
      h += detail::extract(rf_hamiltonian(setup.fields, px, py, setup.constants).entries, idx);
      return h;
    };
    auto props = interval_propagators(waveform, hamil, model.dissipator, T);
    Mat o0 = detail::extract(faraday_observable(setup.probe, setup.constants).entries, idx);
    hist = propagate_heisenberg(o0, props, T);
    ctx.dim = 7;
  } else {
    auto model = build_cesium_model(setup.constants, setup.probe, setup.fields);
    auto hamil = [&](double px, double py, double pu) { return model.hamiltonian(px, py, pu); };
    auto props = interval_propagators(waveform, hamil, model.feeding(), T);
    hist = propagate_heisenberg(model.faraday, props, T);
    ctx.dim = 16;
  }
  ctx.history = hist.samples;

  const auto& basis = detail::full_basis(ctx.dim);
  Mat filtered = setup.use_filter ? apply_filter_rows(setup.filter, hist.samples) : hist.samples;
  ctx.design = (basis.vectorized.adjoint() * filtered).real().transpose();

  // calibrate the compressed-sensing threshold the way the lab would: one
  // known state, one noise realization, residual between the scaled data
  // and the simulated record at final time
  auto known = DensityMatrix::maximally_mixed(ctx.dim);
  auto rec = synthesize_record(ctx.history, known, ctx.sigma, ctx.scale_a,
                               SamplerSeed{setup.waveform_seed.seed + 500001});
  RVec data_f = setup.use_filter ? apply_filter<double>(setup.filter, rec.samples) : rec.samples;
  RVec model_f = setup.use_filter
                     ? apply_filter<double>(setup.filter, expectation_series(ctx.history, known, ctx.scale_a))
                     : expectation_series(ctx.history, known, ctx.scale_a);
  ctx.eps_cal = setup.eps_slack * (data_f - model_f).squaredNorm();
  return ctx;
}

inline ReconstructionProblem problem_for_state(const TomographyContext& ctx,
                                               const DensityMatrix& rho0, SamplerSeed noise_seed) {
  auto rec = synthesize_record(ctx.history, rho0, ctx.sigma, ctx.scale_a, noise_seed);
  ReconstructionProblem prob;
  prob.dim = ctx.dim;
  prob.design = ctx.design;
  prob.sigma = ctx.sigma;
  prob.scale_a = ctx.scale_a;
  prob.record = ctx.setup->use_filter ? apply_filter<double>(ctx.setup->filter, rec.samples)
                                      : rec.samples;
  return prob;
}

struct SweepResult {
  double ls_mean = 0, ls_std = 0;
  double cs_mean = 0, cs_std = 0;
  double ls_purity_mean = 0, cs_purity_mean = 0;
  int n = 0;
  double runtime_s = 0;
};

enum class StateKind { haar_pure, hs_mixed };

/// Fidelity sweep over random states at fixed setup: one shared operator
/// history, per-state noise realizations, both estimators.
inline SweepResult tomography_sweep(const TomographyContext& ctx, StateKind kind, int n_states,
                                    std::uint64_t state_seed_base, int jobs = 0) {
  auto t0 = std::chrono::steady_clock::now();
  std::vector<double> ls_f(static_cast<size_t>(n_states), 0.0), cs_f(static_cast<size_t>(n_states), 0.0);
  std::vector<double> ls_p(static_cast<size_t>(n_states), 0.0), cs_p(static_cast<size_t>(n_states), 0.0);
  parallel_for(
      n_states,
      [&](std::int64_t i) {
        SamplerSeed seed{state_seed_base + std::uint64_t(i)};
        DensityMatrix rho0 = (kind == StateKind::haar_pure) ? haar_pure_state(ctx.dim, seed)
                                                            : hs_mixed_state(ctx.dim, seed);
        auto prob = problem_for_state(ctx, rho0, SamplerSeed{seed.seed + 777000});
        auto ls = one_step_ls(prob, ctx.setup->solver);
        Estimate cs;
        try {
          cs = compressed_sensing(prob, ctx.eps_cal, ctx.setup->solver);
        } catch (const Error&) {
          // the calibrated threshold can undercut an individual record's
          // residual floor; widen the ball the way a recalibration would
          cs = compressed_sensing(prob, 1.5 * ctx.eps_cal, ctx.setup->solver);
        }
        ls_f[size_t(i)] = fidelity(ls.rho_bar, rho0);
        cs_f[size_t(i)] = fidelity(cs.rho_bar, rho0);
        ls_p[size_t(i)] = purity(ls.rho_bar);
        cs_p[size_t(i)] = purity(cs.rho_bar);
      },
      jobs);
  SweepResult res;
  res.n = n_states;
  auto stats = [&](const std::vector<double>& v, double& mean, double& sd) {
    mean = 0;
    for (double x : v) mean += x;
    mean /= double(v.size());
    sd = 0;
    for (double x : v) sd += (x - mean) * (x - mean);
    sd = v.size() > 1 ? std::sqrt(sd / double(v.size() - 1)) : 0.0;
  };
  stats(ls_f, res.ls_mean, res.ls_std);
  stats(cs_f, res.cs_mean, res.cs_std);
  double dummy;
  stats(ls_p, res.ls_purity_mean, dummy);
  stats(cs_p, res.cs_purity_mean, dummy);
  res.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

/// Canonical criterion-6 configurations. The full run reproduces the d=16
/// benchmark at its published scale; the smoke variant restricts to the F=3
/// manifold with a short (undersampled) record, the regime in which the
/// trace heuristic is actually exercised at d=7 (a complete single-manifold
/// record leaves nothing for the purity prior to add).
inline TomographySetup ch4_full_setup() {
  TomographySetup s;
  s.duration_ms = 2.0;
  s.sigma = 0.03;
  s.waveform_seed = SamplerSeed{2468};
  return s;
}

inline TomographySetup ch4_smoke_setup() {
  TomographySetup s;
  s.f3_restricted = true;
  s.probe.intensity = 3.0;
  s.duration_ms = 0.45;
  s.sigma = 0.03;
  s.eps_slack = 1.15;  // short records leave the one-draw calibration tight
  s.waveform_seed = SamplerSeed{2468};
  return s;
}

// ---------------------------------------------------------------------------
// Rank / purity ensemble statistics
// ---------------------------------------------------------------------------

struct RankPurityRow {
  int rank = 0;
  double mean_purity = 0;
};

inline std::vector<RankPurityRow> rank_purity_statistics(int d, const std::vector<int>& ranks,
                                                         int draws, std::uint64_t seed_base) {
  std::vector<RankPurityRow> rows;
  for (int r : ranks) {
    double acc = 0;
    for (int i = 0; i < draws; ++i)
      acc += purity(fixed_rank_state(d, r, SamplerSeed{seed_base + std::uint64_t(1000 * r + i)}));
    rows.push_back({r, acc / draws});
  }
  return rows;
}

}  // namespace qstlab
