#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace tcnet {

// One named gradient check; run(seed) draws a random instance and returns the
// max relative error between analytic and central-difference gradients.
struct GradCheckEntry {
  std::string name;
  std::size_t trials = 20;
  std::function<double(std::uint64_t)> run;
};

const std::vector<GradCheckEntry>& gradcheck_suite();

struct GradCheckReport {
  std::string name;
  std::size_t trials = 0;
  double max_err = 0.0;
};

// Runs every entry whose name starts with `module_filter` ("all" runs the
// whole suite) over seeded trials.
std::vector<GradCheckReport> run_gradcheck(const std::string& module_filter,
                                           std::uint64_t base_seed = 1234);

}  // namespace tcnet
