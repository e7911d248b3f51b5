#pragma once

#include "qstlab/dynamics.hpp"
#include "qstlab/signal.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace qstlab {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Operators and states: {"dim": d, "re": [[...]], "im": [[...]]}
// ---------------------------------------------------------------------------

inline json matrix_to_json(const Mat& m) {
  json j;
  j["dim"] = m.rows();
  json re = json::array(), im = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json rrow = json::array(), irow = json::array();
    for (int k = 0; k < m.cols(); ++k) {
      rrow.push_back(m(i, k).real());
      irow.push_back(m(i, k).imag());
    }
    re.push_back(rrow);
    im.push_back(irow);
  }
  j["re"] = re;
  j["im"] = im;
  return j;
}

inline Mat matrix_from_json(const json& j) {
  if (!j.contains("dim") || !j.contains("re") || !j.contains("im"))
    throw Error(Errc::invalid_config, "operator json needs dim/re/im");
  int d = j["dim"].get<int>();
  Mat m(d, d);
  for (int i = 0; i < d; ++i)
    for (int k = 0; k < d; ++k)
      m(i, k) = Complex(j["re"].at(size_t(i)).at(size_t(k)).get<double>(),
                        j["im"].at(size_t(i)).at(size_t(k)).get<double>());
  return m;
}

// ---------------------------------------------------------------------------
// Waveforms (interval arrays) and filter coefficients
// ---------------------------------------------------------------------------

inline json waveform_to_json(const ControlWaveform& w) {
  json j;
  j["rf_interval_ms"] = w.rf_interval_ms;
  j["uw_interval_ms"] = w.uw_interval_ms;
  j["duration_ms"] = w.duration_ms;
  j["phix"] = std::vector<double>(w.phix.data(), w.phix.data() + w.phix.size());
  j["phiy"] = std::vector<double>(w.phiy.data(), w.phiy.data() + w.phiy.size());
  j["phiuw"] = std::vector<double>(w.phiuw.data(), w.phiuw.data() + w.phiuw.size());
  return j;
}

inline ControlWaveform waveform_from_json(const json& j) {
  ControlWaveform w;
  w.rf_interval_ms = j.value("rf_interval_ms", 0.030);
  w.uw_interval_ms = j.value("uw_interval_ms", 0.020);
  w.duration_ms = j.at("duration_ms").get<double>();
  auto vec = [&](const char* key) {
    auto v = j.at(key).get<std::vector<double>>();
    return Eigen::Map<const RVec>(v.data(), Eigen::Index(v.size())).eval();
  };
  w.phix = vec("phix");
  w.phiy = vec("phiy");
  w.phiuw = vec("phiuw");
  w.validate();
  return w;
}

inline json filter_to_json(const BandpassFilter& f) {
  json j;
  j["b"] = std::vector<double>(f.b.data(), f.b.data() + f.b.size());
  j["a"] = std::vector<double>(f.a.data(), f.a.data() + f.a.size());
  j["sample_rate_hz"] = f.sample_rate_hz;
  return j;
}

inline BandpassFilter filter_from_json(const json& j) {
  auto bv = j.at("b").get<std::vector<double>>();
  auto av = j.at("a").get<std::vector<double>>();
  RVec b = Eigen::Map<const RVec>(bv.data(), Eigen::Index(bv.size()));
  RVec a = Eigen::Map<const RVec>(av.data(), Eigen::Index(av.size()));
  return filter_from_coefficients(b, a, j.value("sample_rate_hz", 1e6));
}

// ---------------------------------------------------------------------------
// Records: CSV time_ms,value with # comment headers
// ---------------------------------------------------------------------------

inline void write_record_csv(const std::string& path, const MeasurementRecord& rec,
                             const std::vector<std::pair<std::string, std::string>>& meta = {}) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::invalid_input, "cannot open " + path + " for writing");
  for (const auto& [k, v] : meta) out << "# " << k << "=" << v << "\n";
  out << "time_ms,value\n";
  out.precision(17);
  for (Eigen::Index i = 0; i < rec.samples.size(); ++i)
    out << i * rec.dt_ms << "," << rec.samples(i) << "\n";
}

struct RecordFile {
  MeasurementRecord record;
  std::map<std::string, std::string> meta;
};

inline RecordFile read_record_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::invalid_input, "cannot open " + path);
  RecordFile rf;
  std::string line;
  std::vector<double> times, values;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto eq = line.find('=');
      if (eq != std::string::npos) {
        std::string key = line.substr(1, eq - 1);
        key.erase(0, key.find_first_not_of(' '));
        key.erase(key.find_last_not_of(' ') + 1);
        rf.meta[key] = line.substr(eq + 1);
      }
      continue;
    }
    if (line.rfind("time_ms", 0) == 0) continue;
    auto comma = line.find(',');
    if (comma == std::string::npos) throw Error(Errc::invalid_input, "malformed record line: " + line);
    times.push_back(std::stod(line.substr(0, comma)));
    values.push_back(std::stod(line.substr(comma + 1)));
  }
  if (values.empty()) throw Error(Errc::invalid_input, "record file holds no samples");
  rf.record.samples = Eigen::Map<const RVec>(values.data(), Eigen::Index(values.size()));
  rf.record.dt_ms = times.size() > 1 ? times[1] - times[0] : 1e-3;
  return rf;
}

// ---------------------------------------------------------------------------
// Operator histories: little-endian float64 binary, header {dim, T, dt_ms},
// then T sample blocks of d^2 (re, im) pairs in row-major operator order.
// ---------------------------------------------------------------------------

inline void write_history_binary(const std::string& path, const OperatorHistory& hist) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::invalid_input, "cannot open " + path + " for writing");
  std::int64_t dim = hist.dim, T = hist.samples.cols();
  double dt = hist.dt_ms;
  out.write(reinterpret_cast<const char*>(&dim), 8);
  out.write(reinterpret_cast<const char*>(&T), 8);
  out.write(reinterpret_cast<const char*>(&dt), 8);
  for (Eigen::Index t = 0; t < hist.samples.cols(); ++t)
    for (Eigen::Index k = 0; k < hist.samples.rows(); ++k) {
      double re = hist.samples(k, t).real(), im = hist.samples(k, t).imag();
      out.write(reinterpret_cast<const char*>(&re), 8);
      out.write(reinterpret_cast<const char*>(&im), 8);
    }
}

inline OperatorHistory read_history_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::invalid_input, "cannot open " + path);
  std::int64_t dim = 0, T = 0;
  double dt = 0;
  in.read(reinterpret_cast<char*>(&dim), 8);
  in.read(reinterpret_cast<char*>(&T), 8);
  in.read(reinterpret_cast<char*>(&dt), 8);
  if (!in || dim < 1 || dim > 4096 || T < 1)
    throw Error(Errc::invalid_input, "malformed history header");
  OperatorHistory hist;
  hist.dim = int(dim);
  hist.dt_ms = dt;
  hist.samples.resize(dim * dim, T);
  for (std::int64_t t = 0; t < T; ++t)
    for (std::int64_t k = 0; k < dim * dim; ++k) {
      double re = 0, im = 0;
      in.read(reinterpret_cast<char*>(&re), 8);
      in.read(reinterpret_cast<char*>(&im), 8);
      hist.samples(k, t) = Complex(re, im);
    }
  if (!in) throw Error(Errc::invalid_input, "truncated history payload");
  return hist;
}

inline void write_history_csv(const std::string& path, const OperatorHistory& hist) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::invalid_input, "cannot open " + path + " for writing");
  out << "time_ms";
  for (Eigen::Index k = 0; k < hist.samples.rows(); ++k) out << ",re" << k << ",im" << k;
  out << "\n";
  out.precision(17);
  for (Eigen::Index t = 0; t < hist.samples.cols(); ++t) {
    out << t * hist.dt_ms;
    for (Eigen::Index k = 0; k < hist.samples.rows(); ++k)
      out << "," << hist.samples(k, t).real() << "," << hist.samples(k, t).imag();
    out << "\n";
  }
}

// ---------------------------------------------------------------------------
// FNV-1a hash of the canonical config serialization
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string config_hash(const json& j) {
  std::ostringstream os;
  os << std::hex << fnv1a_hash(j.dump());
  return os.str();
}

inline json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::invalid_config, "cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw Error(Errc::invalid_config, std::string("json parse error in ") + path + ": " + e.what());
  }
  return j;
}

inline void save_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::invalid_input, "cannot open " + path + " for writing");
  out << j.dump(2) << "\n";
}

}  // namespace qstlab
