#pragma once

#include "qstlab/cesium.hpp"
#include "qstlab/dynamics.hpp"
#include "qstlab/signal.hpp"

#include <functional>
#include <map>
#include <string>

namespace qstlab {

// ---------------------------------------------------------------------------
// Derivative-free simplex minimizer (standard reflection/expansion/
// contraction coefficients, restart on stagnation, box bounds by clamping).
// ---------------------------------------------------------------------------

struct NelderMeadOptions {
  double relative_tol = 1e-8;
  double absolute_tol = 0.0;  // derived from the initial cost when zero
  int max_evaluations = 2000;
  int restarts = 2;
  double initial_step = 0.05;  // relative simplex size
};

struct NelderMeadResult {
  RVec x;
  double cost = 0;
  int evaluations = 0;
  bool converged = false;
};

inline NelderMeadResult nelder_mead(const std::function<double(const RVec&)>& f, RVec x0,
                                    const RVec& lower, const RVec& upper,
                                    const NelderMeadOptions& opt = {}) {
  const int n = int(x0.size());
  if (lower.size() != n || upper.size() != n)
    throw Error(Errc::invalid_input, "bounds must match the parameter count");
  for (int i = 0; i < n; ++i)
    if (!(lower(i) < upper(i)) || x0(i) < lower(i) || x0(i) > upper(i))
      throw Error(Errc::invalid_input, "initial guess must lie inside finite bounds");
  auto clamp = [&](RVec x) {
    for (int i = 0; i < n; ++i) x(i) = std::clamp(x(i), lower(i), upper(i));
    return x;
  };

  NelderMeadResult res;
  res.evaluations = 0;
  auto eval = [&](const RVec& x) {
    ++res.evaluations;
    return f(x);
  };

  const double alpha = 1.0, gamma = 2.0, rho = 0.5, sigma = 0.5;
  RVec best_x = x0;
  double best_f = eval(x0);
  // costs can legitimately collapse to ~0 on noiseless round trips; anchor
  // the absolute stopping floor to the starting cost
  const double abs_tol =
      opt.absolute_tol > 0 ? opt.absolute_tol : opt.relative_tol * opt.relative_tol * (std::abs(best_f) + 1.0);

  for (int restart = 0; restart <= opt.restarts; ++restart) {
    std::vector<RVec> xs(size_t(n) + 1);
    std::vector<double> fs(size_t(n) + 1);
    xs[0] = best_x;
    fs[0] = best_f;
    for (int i = 0; i < n; ++i) {
      RVec p = best_x;
      double step = opt.initial_step * std::max(std::abs(p(i)), 0.1 * (upper(i) - lower(i)));
      p(i) = std::clamp(p(i) + step, lower(i), upper(i));
      if (p(i) == best_x(i)) p(i) = std::clamp(best_x(i) - step, lower(i), upper(i));
      xs[size_t(i) + 1] = p;
      fs[size_t(i) + 1] = eval(p);
    }

    while (res.evaluations < opt.max_evaluations) {
      std::vector<int> order(size_t(n) + 1);
      for (int i = 0; i <= n; ++i) order[size_t(i)] = i;
      std::sort(order.begin(), order.end(), [&](int a, int b) { return fs[size_t(a)] < fs[size_t(b)]; });
      std::vector<RVec> xs2(size_t(n) + 1);
      std::vector<double> fs2(size_t(n) + 1);
      for (int i = 0; i <= n; ++i) {
        xs2[size_t(i)] = xs[size_t(order[size_t(i)])];
        fs2[size_t(i)] = fs[size_t(order[size_t(i)])];
      }
      xs = std::move(xs2);
      fs = std::move(fs2);

      double spread = std::abs(fs[size_t(n)] - fs[0]);
      if (spread < opt.relative_tol * std::abs(fs[0]) + abs_tol) break;

      RVec centroid = RVec::Zero(n);
      for (int i = 0; i < n; ++i) centroid += xs[size_t(i)];
      centroid /= double(n);

      RVec xr = clamp(centroid + alpha * (centroid - xs[size_t(n)]));
      double fr = eval(xr);
      if (fr < fs[0]) {
        RVec xe = clamp(centroid + gamma * (xr - centroid));
        double fe = eval(xe);
        if (fe < fr) {
          xs[size_t(n)] = xe;
          fs[size_t(n)] = fe;
        } else {
          xs[size_t(n)] = xr;
          fs[size_t(n)] = fr;
        }
      } else if (fr < fs[size_t(n) - 1]) {
        xs[size_t(n)] = xr;
        fs[size_t(n)] = fr;
      } else {
        bool outside = fr < fs[size_t(n)];
        RVec xc = outside ? clamp(centroid + rho * (xr - centroid))
                          : clamp(centroid + rho * (xs[size_t(n)] - centroid));
        double fc = eval(xc);
        if (fc < (outside ? fr : fs[size_t(n)])) {
          xs[size_t(n)] = xc;
          fs[size_t(n)] = fc;
        } else {
          for (int i = 1; i <= n; ++i) {
            xs[size_t(i)] = clamp(xs[0] + sigma * (xs[size_t(i)] - xs[0]));
            fs[size_t(i)] = eval(xs[size_t(i)]);
          }
        }
      }
    }
    int ibest = 0;
    for (int i = 1; i <= n; ++i)
      if (fs[size_t(i)] < fs[size_t(ibest)]) ibest = i;
    if (fs[size_t(ibest)] < best_f) {
      best_f = fs[size_t(ibest)];
      best_x = xs[size_t(ibest)];
    }
    if (res.evaluations >= opt.max_evaluations) break;
  }
  res.x = best_x;
  res.cost = best_f;
  res.converged = res.evaluations < opt.max_evaluations;
  return res;
}

// ---------------------------------------------------------------------------
// Calibration forward models
// ---------------------------------------------------------------------------

namespace detail {

/// The probe-derived pieces (light shift, frame-averaged dissipator,
/// observable) do not depend on fit parameters; simplex loops reuse them.
inline const RestrictedModel& cached_restricted_model(const AtomicConstants& c,
                                                      const ProbeParams& probe,
                                                      const FieldParams& fields,
                                                      const std::vector<int>& idx) {
  static std::map<std::string, RestrictedModel> cache;
  static std::mutex mu;
  std::string key = std::to_string(probe.detuning_mhz) + "/" + std::to_string(probe.intensity) +
                    "/" + std::to_string(fields.omega_rf_khz);
  for (int i : idx) key += "," + std::to_string(i);
  std::lock_guard<std::mutex> lk(mu);
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, restrict_model(c, probe, fields, idx)).first;
  return it->second;
}

/// Expectation record Tr(O rho(t_i)) under a constant generator via one
/// eigendecomposition: record(i) = sum_k c_k exp(lambda_k i dt). Falls back
/// to stepping when the generator resists diagonalization.
inline RVec record_constant_generator(const Mat& gen, const CVec& rho0, const CVec& obs, int T,
                                      double dt_ms) {
  Eigen::ComplexEigenSolver<Mat> es(gen);
  const Mat& v = es.eigenvectors();
  Eigen::PartialPivLU<Mat> lu(v);
  Mat recon = v * es.eigenvalues().asDiagonal() * lu.inverse();
  if ((recon - gen).norm() > 1e-8 * std::max(1.0, gen.norm())) {
    // defective generator: step with the exponential instead
    Mat step = matrix_exponential(gen * dt_ms);
    RVec rec(T);
    CVec state = rho0;
    rec(0) = (obs.adjoint() * state)(0).real();
    for (int i = 1; i < T; ++i) {
      state = step * state;
      rec(i) = (obs.adjoint() * state)(0).real();
    }
    return rec;
  }
  CVec coeff_state = lu.solve(rho0);          // components of rho0 on the modes
  CVec coeff_obs = v.adjoint() * obs;         // <obs, mode_k>
  RVec rec(T);
  const auto& lam = es.eigenvalues();
  CVec phase = CVec::Ones(lam.size());
  CVec step(lam.size());
  for (int k = 0; k < lam.size(); ++k) step(k) = std::exp(lam(k) * dt_ms);
  for (int i = 0; i < T; ++i) {
    Complex acc = 0;
    for (int k = 0; k < lam.size(); ++k) acc += std::conj(coeff_obs(k)) * phase(k) * coeff_state(k);
    rec(i) = acc.real();
    phase.array() *= step.array();
  }
  return rec;
}

}  // namespace detail

/// Single-axis constant-amplitude RF drive restricted to one hyperfine
/// manifold, with light-shift and optical-pumping decay and an intensity
/// inhomogeneity average.
struct LarmorModelParams {
  int axis = 0;                  // 0: x drive, 1: y drive
  int manifold_f = 3;            // restriction (initial state |F,F>)
  double omega_k_khz = 9.0;      // RF amplitude on the driven axis
  double intensity_scale = 1.0;  // multiplies the nominal probe intensity
  double sigma_i = 0.0;
  double duration_ms = 4.0;
  int grid_intervals = 12;
  double grid_half_width = 3.5;
  AtomicConstants constants{};
  ProbeParams probe{};
  FieldParams fields{};
};

inline MeasurementRecord larmor_record_model(const LarmorModelParams& p) {
  std::vector<int> idx;
  for (int m = p.manifold_f; m >= -p.manifold_f; --m)
    idx.push_back(HyperfineIndexing::index(p.manifold_f, m));
  FieldParams fields = p.fields;
  fields.omega_x_khz = (p.axis == 0) ? p.omega_k_khz : 0.0;
  fields.omega_y_khz = (p.axis == 1) ? p.omega_k_khz : 0.0;
  fields.omega_uw_khz = 0.0;
  const auto& model = detail::cached_restricted_model(p.constants, p.probe, p.fields, idx);
  const int dsub = int(idx.size());
  const int T = int(std::llround(p.duration_ms / 1e-3));
  CVec stretched = CVec::Zero(dsub);
  stretched(0) = 1.0;  // |F, m=F> leads the descending-m block
  CVec rho0 = vectorize(Mat(stretched * stretched.adjoint()));
  CVec obs = vectorize(model.observable);
  Mat h_static = detail::extract(static_hamiltonian_rotating(fields, p.constants).entries, idx);
  Mat h_rf = detail::extract(rf_hamiltonian(fields, 0.0, 0.0, p.constants).entries, idx);

  auto grid = make_inhomo_grid(p.sigma_i, p.grid_intervals, p.grid_half_width);
  std::vector<RVec> recs(static_cast<size_t>(grid.nodes.size()));
  for (int n = 0; n < grid.nodes.size(); ++n) {
    double xi = p.intensity_scale * grid.nodes(n);
    Mat h = h_static + h_rf + xi * model.h_light_shift;
    Mat gen = lindblad_generator(h, Mat(xi * model.dissipator)).entries;
    recs[size_t(n)] = detail::record_constant_generator(gen, rho0, obs, T, 1e-3);
  }
  MeasurementRecord out;
  out.samples = average_records(recs, grid.weights);
  if (grid.nodes.size() > 1) out.samples /= grid.weights.sum();
  return out;
}

/// Stretched-pair Rabi flopping: the {|4,4>, |3,3>} restriction of the full
/// model with a constant-phase microwave drive and a joint (uw-power, bias)
/// inhomogeneity average.
struct RabiModelParams {
  double omega_uw_khz = 27.5;
  double omega0_khz = 1000.0;
  double delta_uw_khz = 0.0;
  double intensity_scale = 1.0;
  double sigma_uw = 0.0;
  double sigma_0 = 0.0;
  double duration_ms = 4.0;
  int grid_intervals = 12;
  double grid_half_width = 3.5;
  AtomicConstants constants{};
  ProbeParams probe{};
  FieldParams fields{};
};

inline MeasurementRecord rabi_record_model(const RabiModelParams& p) {
  auto idx = stretched_pair_indices();
  FieldParams base = p.fields;
  base.omega_x_khz = base.omega_y_khz = 0.0;
  base.omega_uw_khz = p.omega_uw_khz;
  base.omega0_khz = p.omega0_khz;
  base.delta_uw_khz = p.delta_uw_khz;
  const auto& model = detail::cached_restricted_model(p.constants, p.probe, p.fields, idx);
  const int T = int(std::llround(p.duration_ms / 1e-3));
  CVec start = CVec::Zero(2);
  start(1) = 1.0;  // |3,3> is the second index of the stretched pair
  CVec rho0 = vectorize(Mat(start * start.adjoint()));
  CVec obs = vectorize(model.observable);

  auto grid_uw = make_inhomo_grid(p.sigma_uw, p.grid_intervals, p.grid_half_width);
  auto grid_b = make_inhomo_grid(p.sigma_0, p.grid_intervals, p.grid_half_width);
  std::vector<std::vector<RVec>> recs(static_cast<size_t>(grid_uw.nodes.size()));
  for (int i = 0; i < grid_uw.nodes.size(); ++i) {
    recs[size_t(i)].resize(size_t(grid_b.nodes.size()));
    for (int k = 0; k < grid_b.nodes.size(); ++k) {
      FieldParams fields = base;
      fields.omega_uw_khz = p.omega_uw_khz * grid_uw.nodes(i);
      fields.omega0_khz = p.omega0_khz * grid_b.nodes(k);
      Mat h = detail::extract(static_hamiltonian_rotating(fields, p.constants).entries, idx);
      h += p.intensity_scale * model.h_light_shift;
      h(0, 1) += 0.5 * fields.omega_uw_khz;
      h(1, 0) += 0.5 * fields.omega_uw_khz;
      Mat gen = lindblad_generator(h, Mat(p.intensity_scale * model.dissipator)).entries;
      recs[size_t(i)][size_t(k)] = detail::record_constant_generator(gen, rho0, obs, T, 1e-3);
    }
  }
  MeasurementRecord out;
  out.samples = average_records_2d(recs, grid_uw.weights, grid_b.weights);
  double mass = grid_uw.weights.sum() * grid_b.weights.sum();
  if (mass > 0 && (grid_uw.nodes.size() > 1 || grid_b.nodes.size() > 1)) out.samples /= mass;
  return out;
}

// ---------------------------------------------------------------------------
// Parameter estimation
// ---------------------------------------------------------------------------

enum class CalibrationExperiment { larmor_x, larmor_y, rabi, full_waveform };

struct FitParameter {
  std::string name;
  double initial = 0;
  double lower = 0;
  double upper = 0;
};

/// Free parameter names: larmor experiments accept {omega_k, intensity,
/// sigma_i, a}; the Rabi experiment {omega_uw, omega0, sigma_uw, sigma_0,
/// delta_uw, a}. The record gain `a` multiplies the observed data inside
/// the cost, matching the calibration convention.
struct FitSpec {
  CalibrationExperiment experiment = CalibrationExperiment::larmor_x;
  std::vector<FitParameter> free;
  LarmorModelParams larmor{};
  RabiModelParams rabi{};
  double horizon_ms = 4.0;
  const BandpassFilter* filter = nullptr;  // identical causal filter for model and data
  NelderMeadOptions optimizer{};
  // Coarse-to-fine horizon schedule: oscillatory records alias badly when a
  // frequency guess is several cycles off over the full horizon, so the
  // simplex first locks the basin on a short prefix. Causal filtering makes
  // prefix costs consistent between model and data.
  std::vector<double> horizon_fractions{0.0625, 0.25, 1.0};
  // full_waveform stage: reconstruction-fidelity cost (1 - F of a known
  // state), supplied by the experiment layer that owns the pipeline
  std::function<double(const RVec&)> fidelity_cost;
};

struct FitResult {
  std::map<std::string, double> values;
  double final_cost = 0;
  int iterations = 0;
  bool converged = false;
};

namespace detail {

inline RVec maybe_filter(const BandpassFilter* f, const RVec& x) {
  return f ? apply_filter<double>(*f, x) : x;
}

}  // namespace detail

inline FitResult fit_parameters(const FitSpec& spec, const MeasurementRecord& observed) {
  const int n = int(spec.free.size());
  RVec x0(n), lo(n), hi(n);
  for (int i = 0; i < n; ++i) {
    x0(i) = spec.free[size_t(i)].initial;
    lo(i) = spec.free[size_t(i)].lower;
    hi(i) = spec.free[size_t(i)].upper;
  }

  if (spec.experiment == CalibrationExperiment::full_waveform) {
    if (!spec.fidelity_cost)
      throw Error(Errc::invalid_config, "full_waveform fits need a fidelity cost function");
    auto nm = nelder_mead(spec.fidelity_cost, x0, lo, hi, spec.optimizer);
    FitResult res;
    for (int i = 0; i < n; ++i) res.values[spec.free[size_t(i)].name] = nm.x(i);
    res.final_cost = nm.cost;
    res.iterations = nm.evaluations;
    res.converged = nm.converged;
    return res;
  }

  const int T = int(std::llround(spec.horizon_ms / 1e-3));
  if (observed.samples.size() < T)
    throw Error(Errc::length_mismatch, "observed record shorter than the fit horizon");
  RVec data = observed.samples.head(T);
  RVec data_f = detail::maybe_filter(spec.filter, data);

  auto model_record = [&](const RVec& x, double duration_ms) {
    double gain = 1.0;
    if (spec.experiment == CalibrationExperiment::rabi) {
      RabiModelParams p = spec.rabi;
      p.duration_ms = duration_ms;
      for (int i = 0; i < n; ++i) {
        const std::string& name = spec.free[size_t(i)].name;
        if (name == "omega_uw") p.omega_uw_khz = x(i);
        else if (name == "omega0") p.omega0_khz = x(i);
        else if (name == "sigma_uw") p.sigma_uw = x(i);
        else if (name == "sigma_0") p.sigma_0 = x(i);
        else if (name == "delta_uw") p.delta_uw_khz = x(i);
        else if (name == "intensity") p.intensity_scale = x(i);
        else if (name == "a") gain = x(i);
        else throw Error(Errc::invalid_config, "unknown rabi fit parameter " + name);
      }
      return std::make_pair(rabi_record_model(p).samples, gain);
    }
    LarmorModelParams p = spec.larmor;
    p.axis = spec.experiment == CalibrationExperiment::larmor_y ? 1 : 0;
    p.duration_ms = duration_ms;
    for (int i = 0; i < n; ++i) {
      const std::string& name = spec.free[size_t(i)].name;
      if (name == "omega_k") p.omega_k_khz = x(i);
      else if (name == "intensity") p.intensity_scale = x(i);
      else if (name == "sigma_i") p.sigma_i = x(i);
      else if (name == "a") gain = x(i);
      else throw Error(Errc::invalid_config, "unknown larmor fit parameter " + name);
    }
    return std::make_pair(larmor_record_model(p).samples, gain);
  };

  std::vector<double> fractions = spec.horizon_fractions;
  if (fractions.empty() || fractions.back() < 1.0) fractions.push_back(1.0);

  FitResult res;
  RVec x = x0;
  int total_evals = 0;
  double final_cost = 0;
  bool converged = false;
  for (double frac : fractions) {
    int t_stage = std::max<int>(64, int(std::llround(frac * T)));
    t_stage = std::min(t_stage, T);
    auto cost = [&](const RVec& xx) {
      auto [model, gain] = model_record(xx, t_stage * 1e-3);
      RVec model_f = detail::maybe_filter(spec.filter, model);
      return (gain * data_f.head(t_stage) - model_f.head(t_stage)).squaredNorm();
    };
    NelderMeadOptions stage_opt = spec.optimizer;
    stage_opt.max_evaluations =
        std::max(150, spec.optimizer.max_evaluations / int(fractions.size()));
    auto nm = nelder_mead(cost, x, lo, hi, stage_opt);
    x = nm.x;
    total_evals += nm.evaluations;
    final_cost = nm.cost;
    converged = nm.converged;
  }
  for (int i = 0; i < n; ++i) res.values[spec.free[size_t(i)].name] = x(i);
  res.final_cost = final_cost;
  res.iterations = total_evals;
  res.converged = converged;
  return res;
}

/// Compressed-sensing threshold: squared residual between the scaled data
/// and the calibrated model record over the full horizon.
inline double estimate_epsilon(const MeasurementRecord& observed, const MeasurementRecord& model,
                               double gain_a, const BandpassFilter* filter = nullptr) {
  if (observed.samples.size() != model.samples.size())
    throw Error(Errc::length_mismatch, "records must share the sample grid");
  RVec d = detail::maybe_filter(filter, observed.samples);
  RVec m = detail::maybe_filter(filter, model.samples);
  return (gain_a * d - m).squaredNorm();
}

}  // namespace qstlab
