#pragma once

#include "qstlab/operators.hpp"
#include "qstlab/random_states.hpp"

#include <cmath>
#include <map>
#include <tuple>

namespace qstlab {

// ---------------------------------------------------------------------------
// Control waveforms
// ---------------------------------------------------------------------------

/// Piecewise-constant phase schedules. RF phases switch every rf_interval,
/// microwave phases every uw_interval; intervals are left-closed. Amplitudes
/// stay constant and live in the field parameters.
struct ControlWaveform {
  RVec phix, phiy, phiuw;  // radians per interval
  double rf_interval_ms = 0.030;
  double uw_interval_ms = 0.020;
  double duration_ms = 2.0;

  void validate(double dt_ms = 1e-3) const {
    auto divides = [&](double interval) {
      double q = interval / dt_ms;
      return std::abs(q - std::round(q)) < 1e-9;
    };
    if (!divides(rf_interval_ms) || !divides(uw_interval_ms))
      throw Error(Errc::invalid_input, "interval grid must divide the sample grid");
    auto in_range = [](const RVec& v) {
      return ((v.array() > -kPi - 1e-12) && (v.array() <= kPi + 1e-12)).all();
    };
    if (!in_range(phix) || !in_range(phiy) || !in_range(phiuw))
      throw Error(Errc::invalid_input, "phases must lie in (-pi, pi]");
    auto count = [&](double interval) { return int(std::ceil(duration_ms / interval - 1e-9)); };
    if (phix.size() < count(rf_interval_ms) || phiy.size() < count(rf_interval_ms) ||
        phiuw.size() < count(uw_interval_ms))
      throw Error(Errc::invalid_input, "not enough phase intervals for the requested duration");
  }

  double phix_at(double t_ms) const { return value_at(phix, rf_interval_ms, t_ms); }
  double phiy_at(double t_ms) const { return value_at(phiy, rf_interval_ms, t_ms); }
  double phiuw_at(double t_ms) const { return value_at(phiuw, uw_interval_ms, t_ms); }

  static ControlWaveform constant(double phx, double phy, double phuw, double duration_ms) {
    ControlWaveform w;
    w.duration_ms = duration_ms;
    int nrf = int(std::ceil(duration_ms / w.rf_interval_ms - 1e-9));
    int nuw = int(std::ceil(duration_ms / w.uw_interval_ms - 1e-9));
    w.phix = RVec::Constant(nrf, phx);
    w.phiy = RVec::Constant(nrf, phy);
    w.phiuw = RVec::Constant(nuw, phuw);
    return w;
  }

 private:
  static double value_at(const RVec& v, double interval, double t) {
    int k = int(std::floor(t / interval + 1e-9));
    k = std::min(k, int(v.size()) - 1);
    return v(std::max(k, 0));
  }
};

/// Phases drawn uniformly from (-pi, pi], held constant per interval.
inline ControlWaveform random_phase_waveform(SamplerSeed seed, double duration_ms,
                                             double rf_interval_ms = 0.030,
                                             double uw_interval_ms = 0.020) {
  Rng rng(seed);
  ControlWaveform w;
  w.rf_interval_ms = rf_interval_ms;
  w.uw_interval_ms = uw_interval_ms;
  w.duration_ms = duration_ms;
  int nrf = int(std::ceil(duration_ms / rf_interval_ms - 1e-9));
  int nuw = int(std::ceil(duration_ms / uw_interval_ms - 1e-9));
  auto draw = [&](int n) {
    RVec v(n);
    for (int i = 0; i < n; ++i) v(i) = rng.uniform_open_closed(-kPi, kPi);
    return v;
  };
  w.phix = draw(nrf);
  w.phiy = draw(nrf);
  w.phiuw = draw(nuw);
  return w;
}

// ---------------------------------------------------------------------------
// Lindblad generator and piecewise-constant propagation
// ---------------------------------------------------------------------------

/// L = -i 2pi (H_eff (x) I - I (x) conj(H_eff)) + 2pi * feeding, acting on
/// row-major vectorized states, in rad/ms for H in kHz. H_eff may carry an
/// anti-Hermitian (decay) part; the feeding superoperator restores the trace.
inline SuperOperator lindblad_generator(const Mat& h_eff, const Mat& feeding) {
  const int d = int(h_eff.rows());
  if (feeding.rows() != d * d || feeding.cols() != d * d)
    throw Error(Errc::dimension_mismatch, "feeding superoperator must be d^2 x d^2");
  Mat id = Mat::Identity(d, d);
  Mat gen = -kI * (kron(h_eff, id) - kron(id, h_eff.conjugate())) + feeding;
  return SuperOperator(d, 2.0 * kPi * gen, Picture::schrodinger_generator);
}

inline SuperOperator lindblad_generator(const Mat& h_eff, const SuperOperator& dissipator) {
  return lindblad_generator(h_eff, dissipator.entries);
}

/// Trace functional annihilation: (vec I)^T L == 0 for a proper generator.
inline double trace_functional_norm(const SuperOperator& gen) {
  CVec vid = vectorize(Mat::Identity(gen.dim, gen.dim));
  return (vid.transpose() * gen.entries).norm();
}

/// Time-ordered piecewise-constant schedule: one generator per segment of
/// constant control values, one exact exponential per distinct phase tuple.
struct IntervalPropagators {
  int dim = 0;
  double dt_ms = 1e-3;
  std::vector<int> boundaries;     // segment ends in samples (ascending, last = T)
  std::vector<Mat> step;           // exp(L * dt) per segment (Schrodinger picture)
};

/// Builds per-segment step propagators for a waveform. `hamiltonian` maps
/// (phix, phiy, phiuw) to the total complex H_eff in kHz; `feeding` is the
/// frame-averaged dissipator feeding superoperator.
inline IntervalPropagators interval_propagators(
    const ControlWaveform& waveform, const std::function<Mat(double, double, double)>& hamiltonian,
    const Mat& feeding, int total_samples, double dt_ms = 1e-3) {
  waveform.validate(dt_ms);
  IntervalPropagators props;
  props.dt_ms = dt_ms;

  int rf_steps = int(std::llround(waveform.rf_interval_ms / dt_ms));
  int uw_steps = int(std::llround(waveform.uw_interval_ms / dt_ms));
  std::vector<int> bounds;
  for (int s = rf_steps; s < total_samples; s += rf_steps) bounds.push_back(s);
  for (int s = uw_steps; s < total_samples; s += uw_steps) bounds.push_back(s);
  bounds.push_back(total_samples);
  std::sort(bounds.begin(), bounds.end());
  bounds.erase(std::unique(bounds.begin(), bounds.end()), bounds.end());

  // propagators for repeated phase tuples are reused (constant-phase
  // calibration runs collapse to a single exponential)
  std::map<std::tuple<std::int64_t, std::int64_t, std::int64_t>, Mat> cache;
  auto quantize = [](double phase) { return std::int64_t(std::llround(phase * 1e12)); };

  int start = 0;
  for (int end : bounds) {
    double t = start * dt_ms;
    double phx = waveform.phix_at(t), phy = waveform.phiy_at(t), phuw = waveform.phiuw_at(t);
    auto key = std::make_tuple(quantize(phx), quantize(phy), quantize(phuw));
    auto it = cache.find(key);
    if (it == cache.end()) {
      Mat h = hamiltonian(phx, phy, phuw);
      if (!h.allFinite()) throw Error(Errc::invalid_input, "non-finite generator");
      SuperOperator gen = lindblad_generator(h, feeding);
      it = cache.emplace(key, matrix_exponential(gen.entries * dt_ms)).first;
      if (props.dim == 0) props.dim = gen.dim;
    }
    props.step.push_back(it->second);
    props.boundaries.push_back(end);
    start = end;
  }
  return props;
}

/// Heisenberg operator history: columns are vec_r(O_i); sample 0 equals
/// vec_r(O_0). The adjoint map composes as O_i = V1+ V2+ ... Vi+ [O_0]; new
/// steps enter innermost, so the accumulated left factor is kept as a matrix
/// and advanced segment-by-segment.
struct OperatorHistory {
  int dim = 0;
  double dt_ms = 1e-3;
  Mat samples;  // d^2 x T
};

inline OperatorHistory propagate_heisenberg(const Mat& o0, const IntervalPropagators& props,
                                            int total_samples) {
  const int d = int(o0.rows());
  const int dd = d * d;
  OperatorHistory hist;
  hist.dim = d;
  hist.dt_ms = props.dt_ms;
  hist.samples.resize(dd, total_samples);
  CVec o0v = vectorize(o0);
  hist.samples.col(0) = o0v;

  Mat left = Mat::Identity(dd, dd);  // product of step adjoints, oldest first
  int sample = 1;
  int seg_start = 0;
  for (size_t seg = 0; seg < props.step.size() && sample < total_samples; ++seg) {
    const Mat adj = props.step[seg].adjoint();
    int seg_end = std::min(props.boundaries[seg], total_samples - 1);
    int k = seg_end - seg_start;
    if (k <= 0) continue;
    CVec t = o0v;
    for (int j = 0; j < k && sample < total_samples; ++j) {
      t = adj * t;
      hist.samples.col(sample++) = left * t;
    }
    // advance the accumulated factor by adj^k (binary powering)
    Mat power = Mat::Identity(dd, dd), base = adj;
    for (int e = k; e > 0; e >>= 1) {
      if (e & 1) power = power * base;
      if (e > 1) base = base * base;
    }
    left = left * power;
    seg_start = seg_end;
  }
  return hist;
}

struct StateHistory {
  int dim = 0;
  double dt_ms = 1e-3;
  Mat samples;  // d^2 x T, columns vec_r(rho(t_i))
  double max_trace_drift = 0.0;
  double min_eigenvalue = 0.0;
};

/// `enforce_trace = false` admits subspace-restricted models where optical
/// pumping out of the subspace appears as loss.
inline StateHistory propagate_schrodinger(const DensityMatrix& rho0,
                                          const IntervalPropagators& props, int total_samples,
                                          bool enforce_trace = true) {
  const int d = rho0.dim;
  StateHistory hist;
  hist.dim = d;
  hist.dt_ms = props.dt_ms;
  hist.samples.resize(d * d, total_samples);
  CVec v = vectorize(rho0.entries);
  hist.samples.col(0) = v;
  CVec vid = vectorize(Mat::Identity(d, d));
  double min_eig = 0.0;

  int sample = 1;
  int seg_start = 0;
  for (size_t seg = 0; seg < props.step.size() && sample < total_samples; ++seg) {
    int seg_end = std::min(props.boundaries[seg], total_samples - 1);
    for (int j = seg_start; j < seg_end && sample < total_samples; ++j) {
      v = props.step[seg] * v;
      hist.samples.col(sample) = v;
      double drift = std::abs((vid.adjoint() * v)(0).real() - 1.0);
      hist.max_trace_drift = std::max(hist.max_trace_drift, drift);
      if (enforce_trace && drift > 1e-6)
        throw Error(Errc::integrator_instability, "trace drift exceeded 1e-6");
      if (sample % 200 == 0) {
        Eigen::SelfAdjointEigenSolver<Mat> es(devectorize(v), Eigen::EigenvaluesOnly);
        min_eig = std::min(min_eig, es.eigenvalues().minCoeff());
      }
      ++sample;
    }
    seg_start = seg_end;
  }
  hist.min_eigenvalue = min_eig;
  return hist;
}

// ---------------------------------------------------------------------------
// Inhomogeneity averaging
// ---------------------------------------------------------------------------

enum class InhomoParameter { probe_intensity, uw_power, bias, joint_intensity_bias };

/// Gaussian scale-parameter distribution, mean 1, std sigma, discretized on
/// n_intervals trapezoid panels over mean +- half_width sigmas.
struct InhomogeneityModel {
  InhomoParameter parameter = InhomoParameter::probe_intensity;
  double sigma = 0.0;
  double sigma2 = 0.0;  // second axis for the joint grid
  int n_intervals = 12;
  double half_width = 3.5;
};

struct InhomoGrid {
  RVec nodes;
  RVec weights;
};

inline InhomoGrid make_inhomo_grid(double sigma, int n_intervals = 12, double half_width = 3.5) {
  if (sigma < 0) throw Error(Errc::bad_grid, "sigma must be nonnegative");
  InhomoGrid g;
  if (sigma == 0.0) {
    g.nodes = RVec::Ones(1);
    g.weights = RVec::Ones(1);
    return g;
  }
  if (n_intervals < 1) throw Error(Errc::bad_grid, "need at least one interval");
  int n = n_intervals + 1;
  g.nodes.resize(n);
  g.weights.resize(n);
  double lo = 1.0 - half_width * sigma, hi = 1.0 + half_width * sigma;
  double dy = (hi - lo) / n_intervals;
  for (int i = 0; i < n; ++i) {
    double y = lo + i * dy;
    g.nodes(i) = y;
    double pdf = std::exp(-0.5 * std::pow((y - 1.0) / sigma, 2)) / (sigma * std::sqrt(2.0 * kPi));
    g.weights(i) = pdf * dy * ((i == 0 || i == n - 1) ? 0.5 : 1.0);
  }
  return g;
}

/// Consistency check for (possibly user-supplied) grids: the stored weights
/// must reproduce the trapezoid sum of the Gaussian over the stored nodes.
inline void validate_inhomo_grid(const InhomoGrid& g, double sigma) {
  if (g.nodes.size() != g.weights.size()) throw Error(Errc::bad_grid, "node/weight size mismatch");
  if (g.nodes.size() == 1) return;
  double sum = 0;
  for (int i = 0; i < g.nodes.size(); ++i) {
    double y = g.nodes(i);
    double pdf = std::exp(-0.5 * std::pow((y - 1.0) / sigma, 2)) / (sigma * std::sqrt(2.0 * kPi));
    double dy = (g.nodes(g.nodes.size() - 1) - g.nodes(0)) / double(g.nodes.size() - 1);
    sum += pdf * dy * ((i == 0 || i == g.nodes.size() - 1) ? 0.5 : 1.0);
  }
  if (std::abs(sum - g.weights.sum()) > 1e-6)
    throw Error(Errc::bad_grid, "weight normalization inconsistent with trapezoid rule");
}

/// Weighted trapezoid combination of per-node histories.
inline OperatorHistory inhomogeneity_average(const std::vector<OperatorHistory>& histories,
                                             const RVec& weights) {
  if (histories.empty() || Eigen::Index(histories.size()) != weights.size())
    throw Error(Errc::bad_grid, "history count must match grid nodes");
  OperatorHistory avg = histories[0];
  avg.samples = weights(0) * histories[0].samples;
  for (size_t i = 1; i < histories.size(); ++i) avg.samples += weights(Eigen::Index(i)) * histories[i].samples;
  return avg;
}

inline RVec average_records(const std::vector<RVec>& records, const RVec& weights) {
  if (records.empty() || Eigen::Index(records.size()) != weights.size())
    throw Error(Errc::bad_grid, "record count must match grid nodes");
  RVec avg = weights(0) * records[0];
  for (size_t i = 1; i < records.size(); ++i) avg += weights(Eigen::Index(i)) * records[i];
  return avg;
}

/// 2-D joint grid: records indexed [i][j] for node_1 i, node_2 j.
inline RVec average_records_2d(const std::vector<std::vector<RVec>>& records, const RVec& w1,
                               const RVec& w2) {
  if (Eigen::Index(records.size()) != w1.size())
    throw Error(Errc::bad_grid, "record grid does not match first axis");
  RVec avg;
  for (Eigen::Index i = 0; i < w1.size(); ++i) {
    if (Eigen::Index(records[size_t(i)].size()) != w2.size())
      throw Error(Errc::bad_grid, "record grid does not match second axis");
    for (Eigen::Index j = 0; j < w2.size(); ++j) {
      RVec term = w1(i) * w2(j) * records[size_t(i)][size_t(j)];
      if (avg.size() == 0)
        avg = term;
      else
        avg += term;
    }
  }
  return avg;
}

}  // namespace qstlab
