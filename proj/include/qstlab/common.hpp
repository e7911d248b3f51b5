#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <complex>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace qstlab {

using Complex = std::complex<double>;
using Mat = Eigen::MatrixXcd;
using RMat = Eigen::MatrixXd;
using CVec = Eigen::VectorXcd;
using RVec = Eigen::VectorXd;

inline constexpr double kPi = 3.141592653589793238462643383279502884;
inline constexpr Complex kI{0.0, 1.0};

enum class Errc {
  invalid_dimension,
  invalid_shape,
  invalid_spin,
  invalid_state,
  invalid_rank,
  invalid_input,
  infeasible_target,
  insufficient_resolution,
  integrator_instability,
  bad_grid,
  underdetermined,
  non_convergence,
  dimension_mismatch,
  length_mismatch,
  unstable_filter,
  invalid_config,
  numerical_failure,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::invalid_dimension: return "invalid-dimension";
    case Errc::invalid_shape: return "invalid-shape";
    case Errc::invalid_spin: return "invalid-spin";
    case Errc::invalid_state: return "invalid-state";
    case Errc::invalid_rank: return "invalid-rank";
    case Errc::invalid_input: return "invalid-input";
    case Errc::infeasible_target: return "infeasible-target";
    case Errc::insufficient_resolution: return "insufficient-resolution";
    case Errc::integrator_instability: return "integrator-instability";
    case Errc::bad_grid: return "bad-grid";
    case Errc::underdetermined: return "underdetermined";
    case Errc::non_convergence: return "non-convergence";
    case Errc::dimension_mismatch: return "dimension-mismatch";
    case Errc::length_mismatch: return "length-mismatch";
    case Errc::unstable_filter: return "unstable-filter";
    case Errc::invalid_config: return "invalid-config";
    case Errc::numerical_failure: return "numerical-failure";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

/// Default numerical tolerances; every validated type takes these as optional
/// arguments so they can be tightened or relaxed from configuration.
struct Tolerances {
  double hermiticity = 1e-12;   // relative Frobenius
  double trace = 1e-10;
  double psd_floor = 1e-9;      // eigenvalues >= -psd_floor are clipped to 0
  double unitarity = 1e-10;     // Frobenius norm of U^dag U - I
};

inline int jobs_from_env(int requested = 0) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("QSTLAB_JOBS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

/// Runs fn(i) for i in [0, n) on a small worker pool. Results must be written
/// to pre-sized storage; fn must not touch shared mutable state.
inline void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn,
                         int jobs = 0) {
  jobs = jobs_from_env(jobs);
  if (jobs <= 1 || n <= 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::int64_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(jobs));
  std::exception_ptr first_error;
  std::mutex err_mutex;
  for (int w = 0; w < jobs; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        std::int64_t i = next.fetch_add(1);
        if (i >= n) break;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lk(err_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace qstlab
