// qstlab: batch front end for the continuous-measurement tomography pipeline.
// Subcommands: simulate, reconstruct, fit, randgen, spananalysis, bench.
// Exit codes: 0 ok, 2 config error, 3 numerical failure.

#include "qstlab/config.hpp"
#include "qstlab/experiments.hpp"
#include "qstlab/fitting.hpp"
#include "qstlab/io.hpp"
#include "qstlab/random_evolution.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace qstlab;

namespace {

struct SimulateArgs {
  std::string config_path;
  std::string state_path;     // initial state json; default |4,4>
  std::string out_record = "record.csv";
  std::string out_history = "history.bin";
  std::string out_states;
  bool history_csv = false;
};

DensityMatrix default_initial_state(int dim) {
  CVec v = CVec::Zero(dim);
  v(0) = 1.0;  // stretched |4,4> in the hyperfine layout (or top basis state)
  return DensityMatrix::pure(v);
}

struct Pipeline {
  int dim = 16;
  Mat observable;
  IntervalPropagators props;
  int total_samples = 0;
};

Pipeline build_pipeline(const ExperimentConfig& cfg, const ControlWaveform& wf) {
  Pipeline pipe;
  pipe.total_samples = int(std::llround(cfg.duration_ms / 1e-3));
  if (cfg.f3_restricted) {
    auto idx = f3_indices();
    auto model = restrict_model(cfg.constants, cfg.probe, cfg.fields, idx);
    auto hamil = [model, cfg, idx](double px, double py, double pu) {
      (void)pu;
      Mat h = model.h_static + model.h_light_shift;
      h += detail::extract(rf_hamiltonian(cfg.fields, px, py, cfg.constants).entries, idx);
      return h;
    };
    pipe.dim = 7;
    pipe.observable = model.observable;
    pipe.props = interval_propagators(wf, hamil, model.dissipator, pipe.total_samples);
  } else {
    auto model = build_cesium_model(cfg.constants, cfg.probe, cfg.fields);
    auto hamil = [model](double px, double py, double pu) { return model.hamiltonian(px, py, pu); };
    pipe.dim = 16;
    pipe.observable = model.faraday;
    pipe.props = interval_propagators(wf, hamil, model.feeding(), pipe.total_samples);
  }
  return pipe;
}

int cmd_simulate(const SimulateArgs& args) {
  auto cfg = load_experiment_config(args.config_path);
  auto wf = cfg.resolve_waveform();
  auto pipe = build_pipeline(cfg, wf);
  auto hist = propagate_heisenberg(pipe.observable, pipe.props, pipe.total_samples);

  DensityMatrix rho0 = args.state_path.empty()
                           ? default_initial_state(pipe.dim)
                           : DensityMatrix(matrix_from_json(load_json_file(args.state_path)));
  if (rho0.dim != pipe.dim) throw Error(Errc::dimension_mismatch, "initial state does not match model");
  auto record = synthesize_record(hist.samples, rho0, cfg.noise_sigma, cfg.record_scale_a,
                                  SamplerSeed{cfg.noise_seed});
  std::vector<std::pair<std::string, std::string>> meta{{"config_hash", cfg.hash()},
                                                        {"dim", std::to_string(pipe.dim)},
                                                        {"sigma", std::to_string(cfg.noise_sigma)}};
  write_record_csv(args.out_record, record, meta);
  if (args.history_csv)
    write_history_csv(args.out_history, hist);
  else
    write_history_binary(args.out_history, hist);
  if (!args.out_states.empty()) {
    auto states = propagate_schrodinger(rho0, pipe.props, pipe.total_samples, !cfg.f3_restricted);
    OperatorHistory sh;
    sh.dim = pipe.dim;
    sh.dt_ms = 1e-3;
    sh.samples = states.samples;
    write_history_binary(args.out_states, sh);
  }
  std::cout << "wrote " << args.out_record << " (" << record.samples.size() << " samples) and "
            << args.out_history << "\n";
  return 0;
}

struct ReconstructArgs {
  std::string record_path, history_path, out_path = "rho.json";
  std::string method = "ls";
  double epsilon = -1.0;
  std::string fidelity_csv;
  std::string target_path;
  int stride_us = 100;
  bool no_filter = false;
  double filter_low = 2e3, filter_high = 40e3, filter_rate = 1e6;
};

int cmd_reconstruct(const ReconstructArgs& args) {
  auto rf = read_record_csv(args.record_path);
  auto hist = read_history_binary(args.history_path);
  if (hist.samples.cols() != rf.record.samples.size())
    throw Error(Errc::length_mismatch, "record and history lengths differ");
  const int d = hist.dim;
  auto basis = hermitian_basis(d, true);
  std::optional<BandpassFilter> filter;
  if (!args.no_filter) filter = design_bessel_bandpass(args.filter_low, args.filter_high, args.filter_rate);
  auto prob = build_problem(hist, rf.record, basis, filter ? &*filter : nullptr);

  double eps = args.epsilon;
  if (args.method == "cs" && eps < 0) {
    // calibrate from the expected filtered noise power of the record
    double sigma = 0.03;
    auto it = rf.meta.find("sigma");
    if (it != rf.meta.end()) sigma = std::stod(it->second);
    RVec imp = RVec::Zero(rf.record.samples.size());
    imp(0) = 1.0;
    double gain = filter ? apply_filter<double>(*filter, imp).squaredNorm() : 1.0;
    eps = double(rf.record.samples.size()) * sigma * sigma * gain;
  }

  auto estimate_at = [&](int t_samples) {
    ReconstructionProblem p;
    p.dim = d;
    p.design = prob.design.topRows(t_samples);
    p.record = prob.record.head(t_samples);
    p.sigma = prob.sigma;
    if (t_samples == 0) return Estimate{DensityMatrix::maximally_mixed(d), Method::ls, 0.0, {}, true, 0};
    if (args.method == "cs")
      return compressed_sensing(p, interpolate_eps(eps, t_samples, double(prob.record.size())));
    if (args.method == "ml2") return two_step_ml(p);
    return one_step_ls(p);
  };

  auto final_est = estimate_at(int(prob.record.size()));
  save_json_file(args.out_path, matrix_to_json(final_est.rho_bar.entries));
  std::cout << "method=" << args.method << " residual=" << final_est.residual
            << " iterations=" << final_est.iterations << "\n";

  if (!args.fidelity_csv.empty()) {
    std::optional<DensityMatrix> target;
    if (!args.target_path.empty()) target = DensityMatrix(matrix_from_json(load_json_file(args.target_path)));
    std::ofstream out(args.fidelity_csv);
    out << "time_ms," << (target ? "fidelity" : "purity") << "\n";
    for (int t = 0; t <= int(prob.record.size()); t += args.stride_us) {
      auto est = estimate_at(std::min<int>(t, int(prob.record.size())));
      double v = target ? fidelity(est.rho_bar, *target) : purity(est.rho_bar);
      out << t * 1e-3 << "," << v << "\n";
      if (t >= int(prob.record.size())) break;
    }
    std::cout << "wrote " << args.fidelity_csv << "\n";
  }
  return 0;
}

struct FitArgs {
  std::string spec_path, data_path, out_path = "params.json";
};

int cmd_fit(const FitArgs& args) {
  auto j = load_json_file(args.spec_path);
  FitSpec spec;
  std::string exp = j.value("experiment", "larmor-x");
  if (exp == "larmor-x") spec.experiment = CalibrationExperiment::larmor_x;
  else if (exp == "larmor-y") spec.experiment = CalibrationExperiment::larmor_y;
  else if (exp == "rabi") spec.experiment = CalibrationExperiment::rabi;
  else throw Error(Errc::invalid_config, "$.experiment must be larmor-x, larmor-y or rabi");
  spec.horizon_ms = j.value("horizon_ms", 4.0);
  if (!j.contains("free") || !j["free"].is_array() || j["free"].empty())
    throw Error(Errc::invalid_config, "$.free must list the fit parameters");
  for (const auto& p : j["free"]) {
    FitParameter fp;
    fp.name = p.at("name").get<std::string>();
    fp.initial = p.at("initial").get<double>();
    fp.lower = p.at("lower").get<double>();
    fp.upper = p.at("upper").get<double>();
    spec.free.push_back(fp);
  }
  if (j.contains("larmor")) {
    const auto& l = j["larmor"];
    spec.larmor.axis = l.value("axis", 0);
    spec.larmor.manifold_f = l.value("manifold_f", 3);
    spec.larmor.omega_k_khz = l.value("omega_k_khz", spec.larmor.omega_k_khz);
    spec.larmor.sigma_i = l.value("sigma_i", 0.0);
    spec.larmor.intensity_scale = l.value("intensity_scale", 1.0);
    spec.larmor.probe.detuning_mhz = l.value("detuning_mhz", spec.larmor.probe.detuning_mhz);
    spec.larmor.probe.intensity = l.value("intensity_mw_cm2", spec.larmor.probe.intensity);
    spec.larmor.fields.omega0_khz = l.value("omega0_khz", 1000.0);
    spec.larmor.fields.omega_rf_khz = l.value("omega_rf_khz", 1000.0 * AtomicConstants{}.g_ratio());
  }
  if (j.contains("rabi")) {
    const auto& r = j["rabi"];
    spec.rabi.omega_uw_khz = r.value("omega_uw_khz", spec.rabi.omega_uw_khz);
    spec.rabi.omega0_khz = r.value("omega0_khz", spec.rabi.omega0_khz);
    spec.rabi.delta_uw_khz = r.value("delta_uw_khz", 0.0);
    spec.rabi.sigma_uw = r.value("sigma_uw", 0.0);
    spec.rabi.sigma_0 = r.value("sigma_0", 0.0);
    spec.rabi.probe.detuning_mhz = r.value("detuning_mhz", spec.rabi.probe.detuning_mhz);
    spec.rabi.probe.intensity = r.value("intensity_mw_cm2", spec.rabi.probe.intensity);
  }
  spec.optimizer.max_evaluations = j.value("max_evaluations", 1000);

  BandpassFilter filter = design_bessel_bandpass();
  bool use_filter = j.value("filter", true);
  if (use_filter) spec.filter = &filter;

  auto data = read_record_csv(args.data_path);
  auto res = fit_parameters(spec, data.record);
  json out;
  for (const auto& [k, v] : res.values) out["values"][k] = v;
  out["final_cost"] = res.final_cost;
  out["evaluations"] = res.iterations;
  out["converged"] = res.converged;
  save_json_file(args.out_path, out);
  std::cout << "fit cost " << res.final_cost << " after " << res.iterations << " evaluations\n";
  return 0;
}

struct RandgenArgs {
  std::string sampler = "haar-pure";
  int dim = 16;
  int rank = 2;
  double purity_target = 0.9;
  int count = 1;
  std::uint64_t seed = 1;
  std::string out_path;  // empty: stdout
};

int cmd_randgen(const RandgenArgs& args) {
  std::ostream* os = &std::cout;
  std::ofstream file;
  if (!args.out_path.empty()) {
    file.open(args.out_path);
    if (!file) throw Error(Errc::invalid_input, "cannot open " + args.out_path);
    os = &file;
  }
  for (int i = 0; i < args.count; ++i) {
    SamplerSeed seed{args.seed + std::uint64_t(i)};
    json j;
    if (args.sampler == "haar-pure") j = matrix_to_json(haar_pure_state(args.dim, seed).entries);
    else if (args.sampler == "hs") j = matrix_to_json(hs_mixed_state(args.dim, seed).entries);
    else if (args.sampler == "bures") j = matrix_to_json(bures_mixed_state(args.dim, seed).entries);
    else if (args.sampler == "fixed-rank")
      j = matrix_to_json(fixed_rank_state(args.dim, args.rank, seed).entries);
    else if (args.sampler == "fixed-purity")
      j = matrix_to_json(fixed_purity_state(args.dim, args.purity_target, args.rank, seed).entries);
    else if (args.sampler == "haar-unitary") j = matrix_to_json(haar_unitary(args.dim, seed).entries);
    else throw Error(Errc::invalid_config, "unknown sampler " + args.sampler);
    j["sampler"] = args.sampler;
    j["seed"] = seed.seed;
    (*os) << j.dump() << "\n";
  }
  return 0;
}

struct SpanArgs {
  std::string map = "haar";
  int dim = 7;
  double phi = 7.0, theta = 0.228;
  double phi_prime = 6.0, theta_x = kPi / 2, theta_y = 0.228;
  std::uint64_t seed = 1;
  std::string observable = "auto";  // fz, fx
  std::string out_path = "report.json";
};

int cmd_spananalysis(const SpanArgs& args) {
  OrbitSpec spec;
  double f = (args.dim - 1) / 2.0;
  if (args.map == "haar") {
    spec.u0 = haar_unitary(args.dim, SamplerSeed{args.seed});
  } else if (args.map == "qkt") {
    spec.u0 = kicked_top(f, args.phi, args.theta);
  } else if (args.map == "dkt") {
    spec.u0 = double_kicked_top(f, args.phi, args.phi_prime, args.theta_x, args.theta_y);
  } else {
    throw Error(Errc::invalid_config, "map must be haar, qkt or dkt");
  }
  auto am = angular_momentum(f);
  // symmetric maps pair with the reflection-symmetric observable
  bool use_fx = args.observable == "fx" || (args.observable == "auto" && args.map == "qkt");
  spec.observable = HermitianOperator(use_fx ? am.fx : am.fz);
  auto orbit = orbit_observables(spec);
  auto rep = saturation_conditions(spec.u0, spec.observable);
  json out;
  out["map"] = args.map;
  out["dim"] = args.dim;
  out["observable"] = use_fx ? "fx" : "fz";
  out["span"] = span_dimension(orbit);
  out["bound"] = args.dim * args.dim - args.dim + 1;
  out["conditions"] = {{"diagonal", rep.diagonal_ok},
                       {"offdiagonal", rep.offdiagonal_ok},
                       {"phases", rep.phases_ok},
                       {"marginal", rep.marginal},
                       {"witness", rep.witness}};
  save_json_file(args.out_path, out);
  std::cout << "span " << out["span"] << " of bound " << out["bound"] << " -> " << args.out_path
            << "\n";
  return 0;
}

struct BenchArgs {
  std::string suite = "ch5-span";
  int trials = 20;
  std::string out_path = "summary.json";
  int jobs = 0;
};

int cmd_bench(const BenchArgs& args) {
  auto t0 = std::chrono::steady_clock::now();
  json out;
  out["suite"] = args.suite;
  if (args.suite == "ch5-span") {
    json rows = json::array();
    for (int d = 3; d <= 7; ++d) {
      int span = 0;
      bool all_exact = true;
      for (int s = 0; s < args.trials; ++s) {
        OrbitSpec spec;
        spec.u0 = haar_unitary(d, SamplerSeed{10000 + std::uint64_t(100 * d + s)});
        spec.observable = HermitianOperator(angular_momentum((d - 1) / 2.0).fz);
        spec.n_max = d * d + 10;
        span = span_dimension(orbit_observables(spec));
        if (span != d * d - d + 1) {
          all_exact = false;
          break;
        }
      }
      rows.push_back({{"d", d}, {"span", span}, {"expected", d * d - d + 1}, {"all_seeds_exact", all_exact}});
    }
    out["rows"] = rows;
  } else if (args.suite == "ch5-qkt") {
    auto qkt = kicked_top(3.0, 7.0, 0.228);
    OrbitSpec spec;
    spec.u0 = qkt;
    spec.observable = HermitianOperator(angular_momentum(3.0).fx);
    spec.n_max = 430;
    out["rank"] = span_dimension(orbit_observables(spec));
    out["expected"] = 19;
  } else if (args.suite == "rank-purity") {
    auto rows = rank_purity_statistics(16, {2, 3, 4, 5, 6}, args.trials, 500000);
    json jr = json::array();
    for (const auto& r : rows) jr.push_back({{"rank", r.rank}, {"mean_purity", r.mean_purity}});
    out["rows"] = jr;
  } else if (args.suite == "ch4-pure" || args.suite == "ch4-mixed") {
    TomographySetup setup = ch4_full_setup();
    auto ctx = prepare_tomography(setup);
    auto kind = args.suite == "ch4-pure" ? StateKind::haar_pure : StateKind::hs_mixed;
    auto sweep = tomography_sweep(ctx, kind, args.trials,
                                  kind == StateKind::haar_pure ? 1000 : 2000, args.jobs);
    out["ls_mean"] = sweep.ls_mean;
    out["ls_std"] = sweep.ls_std;
    out["cs_mean"] = sweep.cs_mean;
    out["cs_std"] = sweep.cs_std;
    out["ls_purity_mean"] = sweep.ls_purity_mean;
    out["cs_purity_mean"] = sweep.cs_purity_mean;
    out["n"] = sweep.n;
  } else {
    throw Error(Errc::invalid_config, "unknown suite " + args.suite);
  }
  out["runtime_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  save_json_file(args.out_path, out);
  std::cout << out.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"continuous-measurement quantum state tomography toolkit"};
  app.require_subcommand(1);
  int jobs = 0;
  app.add_option("--jobs", jobs, "worker pool size (QSTLAB_JOBS overrides)");

  SimulateArgs sim;
  auto* csim = app.add_subcommand("simulate", "simulate a measurement record and operator history");
  csim->add_option("--config", sim.config_path, "experiment config json")->required();
  csim->add_option("--state", sim.state_path, "initial state json (default stretched state)");
  csim->add_option("--out-record", sim.out_record, "record csv path");
  csim->add_option("--out-history", sim.out_history, "history output path");
  csim->add_option("--out-states", sim.out_states, "optional state-history path");
  csim->add_flag("--history-csv", sim.history_csv, "write the history as csv instead of binary");

  ReconstructArgs rec;
  auto* crec = app.add_subcommand("reconstruct", "estimate the initial state from a record");
  crec->add_option("--record", rec.record_path)->required();
  crec->add_option("--history", rec.history_path)->required();
  crec->add_option("--method", rec.method, "ls | ml2 | cs");
  crec->add_option("--epsilon", rec.epsilon, "cs residual threshold (negative: calibrate)");
  crec->add_option("--out", rec.out_path, "estimated state json");
  crec->add_option("--fidelity-csv", rec.fidelity_csv, "prefix sweep output");
  crec->add_option("--target", rec.target_path, "true state json for fidelity curves");
  crec->add_option("--stride-us", rec.stride_us, "prefix sweep stride");
  crec->add_flag("--no-filter", rec.no_filter);

  FitArgs fit;
  auto* cfit = app.add_subcommand("fit", "calibrate control parameters from a record");
  cfit->add_option("--spec", fit.spec_path)->required();
  cfit->add_option("--data", fit.data_path)->required();
  cfit->add_option("--out", fit.out_path);

  RandgenArgs rg;
  auto* crg = app.add_subcommand("randgen", "sample random states and unitaries as json lines");
  crg->add_option("--sampler", rg.sampler, "haar-pure | hs | bures | fixed-rank | fixed-purity | haar-unitary");
  crg->add_option("--dim", rg.dim);
  crg->add_option("--rank", rg.rank);
  crg->add_option("--purity", rg.purity_target);
  crg->add_option("--count", rg.count);
  crg->add_option("--seed", rg.seed);
  crg->add_option("--out", rg.out_path, "output path (default stdout)");

  SpanArgs span;
  auto* cspan = app.add_subcommand("spananalysis", "one-parameter record span analysis");
  cspan->add_option("--map", span.map, "haar | qkt | dkt");
  cspan->add_option("--dim", span.dim);
  cspan->add_option("--phi", span.phi);
  cspan->add_option("--theta", span.theta);
  cspan->add_option("--phi-prime", span.phi_prime);
  cspan->add_option("--theta-x", span.theta_x);
  cspan->add_option("--theta-y", span.theta_y);
  cspan->add_option("--seed", span.seed);
  cspan->add_option("--observable", span.observable, "auto | fz | fx");
  cspan->add_option("--out", span.out_path);

  BenchArgs bench;
  auto* cbench = app.add_subcommand("bench", "run the benchmark experiment suites");
  cbench->add_option("--suite", bench.suite, "ch4-pure | ch4-mixed | rank-purity | ch5-span | ch5-qkt");
  cbench->add_option("--trials", bench.trials);
  cbench->add_option("--out", bench.out_path);

  CLI11_PARSE(app, argc, argv);
  bench.jobs = jobs;

  try {
    if (*csim) return cmd_simulate(sim);
    if (*crec) return cmd_reconstruct(rec);
    if (*cfit) return cmd_fit(fit);
    if (*crg) return cmd_randgen(rg);
    if (*cspan) return cmd_spananalysis(span);
    if (*cbench) return cmd_bench(bench);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == Errc::invalid_config || e.code() == Errc::invalid_input ? 2 : 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
