#pragma once

// Wall-clock measurement of attribution throughput, and its scaling with
// tree depth. Timing runs single-threaded; the work is identical to what
// attribute() does outside the timer.

#include <chrono>
#include <cstddef>
#include <sstream>
#include <string>
#include <vector>

#include "treexplain/attribution.hpp"
#include "treexplain/dataset.hpp"
#include "treexplain/errors.hpp"
#include "treexplain/forest.hpp"
#include "treexplain/io.hpp"

namespace treexplain {

struct TimingRecord {
  Method method = Method::Ti;
  int max_depth = 0;
  std::size_t n_instances = 0;
  double seconds_per_instance = 0.0;
  double total_seconds = 0.0;
};

// Times one full pass over `instances`, repeated `repetitions` times after a
// warm-up pass, and keeps the fastest. Attribution results are accumulated
// into a checksum so the calls cannot be optimized away.
inline TimingRecord time_attribution(const Forest& forest, const Dataset& instances,
                                     Method method, int repetitions = 3) {
  if (repetitions < 1) throw ArgumentError("timing: repetitions must be at least 1");
  if (instances.n_rows() == 0) throw ArgumentError("timing: no instances");

  volatile double sink = 0.0;
  for (std::size_t r = 0; r < instances.n_rows(); ++r) {
    sink = sink + attribute(forest, instances.row(r), method).bias;
  }

  using Clock = std::chrono::steady_clock;
  double best = 0.0;
  for (int rep = 0; rep < repetitions; ++rep) {
    const auto start = Clock::now();
    for (std::size_t r = 0; r < instances.n_rows(); ++r) {
      sink = sink + attribute(forest, instances.row(r), method).contributions[0];
    }
    const double elapsed = std::chrono::duration<double>(Clock::now() - start).count();
    if (rep == 0 || elapsed < best) best = elapsed;
  }

  TimingRecord record;
  record.method = method;
  record.max_depth = forest.params.max_depth;
  record.n_instances = instances.n_rows();
  record.total_seconds = best;
  record.seconds_per_instance = best / static_cast<double>(instances.n_rows());
  return record;
}

// Refits one forest per depth (same data, same seed, same estimator count)
// and times both methods on a fixed probe set. Records come out grouped by
// depth, decision-path attribution first.
inline std::vector<TimingRecord> depth_scaling(const Dataset& train, const Dataset& probe,
                                               const std::vector<int>& depths,
                                               ForestParams base, int repetitions = 3,
                                               unsigned fit_jobs = 1) {
  if (depths.empty()) throw ArgumentError("depth_scaling: no depths given");
  for (std::size_t i = 0; i < depths.size(); ++i) {
    if (depths[i] < 1 || (i > 0 && depths[i] <= depths[i - 1])) {
      throw ArgumentError("depth_scaling: depths must be positive and strictly ascending");
    }
  }
  std::vector<TimingRecord> records;
  for (int depth : depths) {
    ForestParams params = base;
    params.max_depth = depth;
    const Forest forest = fit_forest(train, params, fit_jobs);
    records.push_back(time_attribution(forest, probe, Method::Ti, repetitions));
    records.push_back(time_attribution(forest, probe, Method::Shap, repetitions));
  }
  return records;
}

inline std::string timing_csv(const std::vector<TimingRecord>& records) {
  std::ostringstream out;
  out << "method,max_depth,n_instances,sec_per_instance,total_sec\n";
  for (const auto& r : records) {
    out << to_string(r.method) << ',' << r.max_depth << ',' << r.n_instances << ','
        << format_double(r.seconds_per_instance) << ',' << format_double(r.total_seconds) << '\n';
  }
  return out.str();
}

}  // namespace treexplain
