#pragma once

#include "qstlab/experiments.hpp"
#include "qstlab/io.hpp"

namespace qstlab {

/// Batch experiment configuration. All units are explicit: field and drive
/// frequencies in kHz, detunings in MHz, times in ms, intensities in
/// mW/cm^2. Unknown keys and malformed values raise invalid-config with the
/// offending path.
struct ExperimentConfig {
  AtomicConstants constants{};
  ProbeParams probe{};
  FieldParams fields{};
  double duration_ms = 2.0;
  double noise_sigma = 0.03;
  double record_scale_a = 1.0;
  std::uint64_t waveform_seed = 2468;
  std::uint64_t noise_seed = 1;
  std::optional<ControlWaveform> waveform;  // inline; otherwise random from seed
  std::string waveform_file;
  InhomogeneityModel inhomogeneity{};
  bool use_filter = true;
  double filter_low_hz = 2e3, filter_high_hz = 40e3, filter_rate_hz = 1e6;
  std::string filter_coefficients_file;  // explicit lab coefficients override
  std::string method = "ls";             // ls | ml2 | cs
  double epsilon = -1.0;                 // cs threshold; negative = calibrate
  bool f3_restricted = false;
  json raw;

  ControlWaveform resolve_waveform() const {
    if (waveform) return *waveform;
    if (!waveform_file.empty()) return waveform_from_json(load_json_file(waveform_file));
    return random_phase_waveform(SamplerSeed{waveform_seed}, duration_ms);
  }

  BandpassFilter resolve_filter() const {
    if (!filter_coefficients_file.empty()) {
      return filter_from_json(load_json_file(filter_coefficients_file));
    }
    return design_bessel_bandpass(filter_low_hz, filter_high_hz, filter_rate_hz);
  }

  std::string hash() const { return config_hash(raw); }
};

namespace detail {

template <typename T>
T get_checked(const json& j, const std::string& path, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const std::exception&) {
    throw Error(Errc::invalid_config, "bad value at " + path + "." + key);
  }
}

inline void reject_unknown(const json& j, const std::string& path,
                           const std::vector<std::string>& known) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const auto& k : known) ok = ok || it.key() == k;
    if (!ok) throw Error(Errc::invalid_config, "unknown key " + path + "." + it.key());
  }
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const json& j) {
  using detail::get_checked;
  using detail::reject_unknown;
  ExperimentConfig cfg;
  cfg.raw = j;
  reject_unknown(j, "$",
                 {"constants", "probe", "fields", "waveform", "waveform_file", "inhomogeneity",
                  "noise_sigma", "record_scale_a", "duration_ms", "filter", "reconstruction",
                  "seeds", "f3_restricted"});
  if (j.contains("constants")) {
    const auto& c = j["constants"];
    reject_unknown(c, "$.constants",
                   {"hyperfine_splitting_mhz", "linewidth_mhz", "excited_splitting_mhz",
                    "saturation_intensity", "g_e", "g_i"});
    cfg.constants.hyperfine_splitting_mhz =
        get_checked(c, "$.constants", "hyperfine_splitting_mhz", cfg.constants.hyperfine_splitting_mhz);
    cfg.constants.linewidth_mhz = get_checked(c, "$.constants", "linewidth_mhz", cfg.constants.linewidth_mhz);
    cfg.constants.excited_splitting_mhz =
        get_checked(c, "$.constants", "excited_splitting_mhz", cfg.constants.excited_splitting_mhz);
    cfg.constants.saturation_intensity =
        get_checked(c, "$.constants", "saturation_intensity", cfg.constants.saturation_intensity);
    cfg.constants.g_e = get_checked(c, "$.constants", "g_e", cfg.constants.g_e);
    cfg.constants.g_i = get_checked(c, "$.constants", "g_i", cfg.constants.g_i);
  }
  if (j.contains("probe")) {
    const auto& p = j["probe"];
    reject_unknown(p, "$.probe", {"detuning_mhz", "intensity_mw_cm2", "polarization"});
    cfg.probe.detuning_mhz = get_checked(p, "$.probe", "detuning_mhz", cfg.probe.detuning_mhz);
    cfg.probe.intensity = get_checked(p, "$.probe", "intensity_mw_cm2", cfg.probe.intensity);
    if (p.contains("polarization")) {
      auto v = p["polarization"].get<std::vector<double>>();
      if (v.size() != 3) throw Error(Errc::invalid_config, "$.probe.polarization must have 3 entries");
      cfg.probe.polarization << v[0], v[1], v[2];
    }
  }
  if (j.contains("fields")) {
    const auto& f = j["fields"];
    reject_unknown(f, "$.fields",
                   {"omega0_khz", "omega_x_khz", "omega_y_khz", "omega_uw_khz", "omega_rf_khz",
                    "delta_uw_khz"});
    cfg.fields.omega0_khz = get_checked(f, "$.fields", "omega0_khz", cfg.fields.omega0_khz);
    cfg.fields.omega_x_khz = get_checked(f, "$.fields", "omega_x_khz", cfg.fields.omega_x_khz);
    cfg.fields.omega_y_khz = get_checked(f, "$.fields", "omega_y_khz", cfg.fields.omega_y_khz);
    cfg.fields.omega_uw_khz = get_checked(f, "$.fields", "omega_uw_khz", cfg.fields.omega_uw_khz);
    cfg.fields.omega_rf_khz = get_checked(f, "$.fields", "omega_rf_khz", cfg.fields.omega_rf_khz);
    cfg.fields.delta_uw_khz = get_checked(f, "$.fields", "delta_uw_khz", cfg.fields.delta_uw_khz);
  }
  cfg.duration_ms = get_checked(j, "$", "duration_ms", cfg.duration_ms);
  cfg.noise_sigma = get_checked(j, "$", "noise_sigma", cfg.noise_sigma);
  cfg.record_scale_a = get_checked(j, "$", "record_scale_a", cfg.record_scale_a);
  cfg.f3_restricted = get_checked(j, "$", "f3_restricted", cfg.f3_restricted);
  if (cfg.noise_sigma < 0) throw Error(Errc::invalid_config, "$.noise_sigma must be nonnegative");
  if (cfg.duration_ms <= 0) throw Error(Errc::invalid_config, "$.duration_ms must be positive");
  if (j.contains("waveform")) {
    if (j["waveform"].is_string())
      cfg.waveform_file = j["waveform"].get<std::string>();
    else
      cfg.waveform = waveform_from_json(j["waveform"]);
  }
  if (j.contains("waveform_file")) cfg.waveform_file = j["waveform_file"].get<std::string>();
  if (j.contains("inhomogeneity")) {
    const auto& h = j["inhomogeneity"];
    reject_unknown(h, "$.inhomogeneity", {"parameter", "sigma", "sigma2", "n_intervals", "half_width"});
    std::string par = get_checked<std::string>(h, "$.inhomogeneity", "parameter", "probe-intensity");
    if (par == "probe-intensity") cfg.inhomogeneity.parameter = InhomoParameter::probe_intensity;
    else if (par == "uw-power") cfg.inhomogeneity.parameter = InhomoParameter::uw_power;
    else if (par == "bias") cfg.inhomogeneity.parameter = InhomoParameter::bias;
    else if (par == "joint") cfg.inhomogeneity.parameter = InhomoParameter::joint_intensity_bias;
    else throw Error(Errc::invalid_config, "$.inhomogeneity.parameter unknown: " + par);
    cfg.inhomogeneity.sigma = get_checked(h, "$.inhomogeneity", "sigma", 0.0);
    cfg.inhomogeneity.sigma2 = get_checked(h, "$.inhomogeneity", "sigma2", 0.0);
    cfg.inhomogeneity.n_intervals = get_checked(h, "$.inhomogeneity", "n_intervals", 12);
    cfg.inhomogeneity.half_width = get_checked(h, "$.inhomogeneity", "half_width", 3.5);
  }
  if (j.contains("filter")) {
    const auto& f = j["filter"];
    reject_unknown(f, "$.filter", {"enabled", "low_hz", "high_hz", "sample_rate_hz", "coefficients_file"});
    cfg.use_filter = get_checked(f, "$.filter", "enabled", true);
    cfg.filter_low_hz = get_checked(f, "$.filter", "low_hz", cfg.filter_low_hz);
    cfg.filter_high_hz = get_checked(f, "$.filter", "high_hz", cfg.filter_high_hz);
    cfg.filter_rate_hz = get_checked(f, "$.filter", "sample_rate_hz", cfg.filter_rate_hz);
    cfg.filter_coefficients_file = get_checked<std::string>(f, "$.filter", "coefficients_file", "");
  }
  if (j.contains("reconstruction")) {
    const auto& r = j["reconstruction"];
    reject_unknown(r, "$.reconstruction", {"method", "epsilon"});
    cfg.method = get_checked<std::string>(r, "$.reconstruction", "method", "ls");
    if (cfg.method != "ls" && cfg.method != "ml2" && cfg.method != "cs")
      throw Error(Errc::invalid_config, "$.reconstruction.method must be ls, ml2 or cs");
    cfg.epsilon = get_checked(r, "$.reconstruction", "epsilon", -1.0);
  }
  if (j.contains("seeds")) {
    const auto& s = j["seeds"];
    reject_unknown(s, "$.seeds", {"waveform", "noise"});
    cfg.waveform_seed = get_checked<std::uint64_t>(s, "$.seeds", "waveform", cfg.waveform_seed);
    cfg.noise_seed = get_checked<std::uint64_t>(s, "$.seeds", "noise", cfg.noise_seed);
  }
  cfg.constants.validate();
  cfg.probe.validate(cfg.constants);
  cfg.fields.validate();
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  return parse_experiment_config(load_json_file(path));
}

}  // namespace qstlab
